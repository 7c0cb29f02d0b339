use proptest::prelude::*;
use std::collections::BTreeMap;

use rwre_core::env_model::{EnvFamily, Environment};
use rwre_core::experiments::{arcsine_aging_value, tv_distance, wilson_interval};
use rwre_core::potential::{audit_valley, deep_valleys, log_valley_weight, star_valleys, Horizon, Potential};
use rwre_core::quenched::{hit_prob, hit_prob_pair, hproc_potential, invariant_measure};
use rwre_core::walker::clock_index;

fn hand_built() -> impl Strategy<Value = Potential> {
    prop::collection::vec(-3.0f64..3.0, 6..60).prop_map(|lr| Potential::new(Environment::from_log_rho(0, lr)).unwrap())
}

fn sampled(seed: u64) -> Potential {
    Potential::sample(&EnvFamily::LogNormal { mu: -0.25, sigma: 1.0 }, -512, 8192, seed).unwrap()
}

fn small_horizon() -> Horizon {
    Horizon::new(50.0, 0.5).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn exit_probabilities_sum_to_one(pot in hand_built(), a in 0usize..100, b in 0usize..100, c in 0usize..100) {
        let n = pot.hi();
        let mut idx = [a as i64 % n, b as i64 % n, c as i64 % n];
        idx.sort();
        let [r, x, s] = idx;
        prop_assume!(r < s);
        let (left, right) = hit_prob_pair(&pot, x, r, s);
        prop_assert!((left + right - 1.0).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&left));
    }

    #[test]
    fn hit_probability_decreases_with_start(pot in hand_built()) {
        let (r, s) = (pot.lo(), pot.hi());
        let ps: Vec<f64> = (r..=s).map(|x| hit_prob(&pot, x, r, s)).collect();
        prop_assert!((ps[0] - 1.0).abs() < 1e-12 && ps[ps.len() - 1] < 1e-12);
        prop_assert!(ps.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12)));
    }

    #[test]
    fn conditioning_on_escape_pushes_right(pot in hand_built()) {
        let (b, d) = (pot.lo(), pot.hi());
        let h = hproc_potential(&pot, b, d);
        for x in b + 1..d {
            prop_assert!(h.right_prob_at(x) >= pot.omega(x) * (1.0 - 1e-12));
            prop_assert!(h.right_prob_at(x) <= 1.0);
        }
    }

    #[test]
    fn invariant_measure_below_its_bound(pot in hand_built(), at in 0usize..100) {
        let (a, c) = (pot.lo(), pot.hi());
        let b = a + 1 + (at as i64 % (c - a - 1));
        let pi = invariant_measure(&pot, a, c, b);
        for k in a + 1..c {
            let i = (k - a) as usize;
            prop_assert!(pi.values[i] <= pi.bound[i] * (1.0 + 1e-12));
        }
        prop_assert_eq!(pi.at(b), 1.0);
    }

    #[test]
    fn valleys_are_well_formed(seed in any::<u64>()) {
        let mut pot = sampled(seed);
        let hz = small_horizon();
        let vs = deep_valleys(&mut pot, &hz).unwrap();
        for v in &vs {
            prop_assert!(audit_valley(&pot, v, &hz).is_ok(), "{:?}", audit_valley(&pot, v, &hz));
            // the pair (b, c) alone contributes 2 e^H
            prop_assert!(v.log_weight >= std::f64::consts::LN_2 + v.height - 1e-9);
        }
        prop_assert!(vs.windows(2).all(|w| w[0].b < w[1].b && w[0].excursion < w[1].excursion));
    }

    #[test]
    fn log_weight_matches_naive_sum(seed in any::<u64>()) {
        let mut pot = sampled(seed);
        let hz = small_horizon();
        for v in deep_valleys(&mut pot, &hz).unwrap().iter().take(3) {
            let mut naive = 0.0;
            for n in v.b..=v.d {
                for m in v.a..=n {
                    naive += (pot.v(n) - pot.v(m)).exp();
                }
            }
            let lw = log_valley_weight(&pot, v.a, v.b, v.d);
            prop_assert!(((2.0 * naive).ln() - lw).abs() < 1e-9);
        }
    }

    #[test]
    fn star_valleys_are_ordered_and_disjoint(seed in any::<u64>()) {
        let mut pot = sampled(seed);
        let hz = small_horizon();
        let stars = star_valleys(&mut pot, &hz, 4000).unwrap();
        for w in stars.windows(2) {
            prop_assert!(w[0].d <= w[1].origin && w[1].b > w[0].d);
        }
        for s in &stars {
            prop_assert!(s.a <= s.b && s.b < s.c && s.c <= s.d_bar && s.d_bar < s.d);
        }
    }

    #[test]
    fn aging_value_decreases_in_ratio(kappa in 0.05f64..0.95, h in 1.01f64..50.0, dh in 0.01f64..10.0) {
        let a = arcsine_aging_value(kappa, h).unwrap();
        let b = arcsine_aging_value(kappa, h + dh).unwrap();
        prop_assert!(0.0 < b && b < a && a < 1.0);
    }

    #[test]
    fn clock_index_is_last_partial_sum_within_t(ws in prop::collection::vec(0.1f64..10.0, 0..20), es in prop::collection::vec(0.01f64..3.0, 20), t in 0.0f64..40.0) {
        let draws = &es[..ws.len()];
        let l = clock_index(&ws, draws, t);
        let partial: Vec<f64> = ws.iter().zip(draws).scan(0.0, |s, (w, e)| { *s += w * e; Some(*s) }).collect();
        prop_assert!(l <= ws.len());
        if l > 0 { prop_assert!(partial[l - 1] <= t); }
        if l < ws.len() { prop_assert!(partial[l] > t); }
    }

    #[test]
    fn tv_is_a_bounded_symmetric_distance(p in prop::collection::vec(0.0f64..1.0, 1..6), q in prop::collection::vec(0.0f64..1.0, 1..6)) {
        let norm = |v: &[f64]| -> BTreeMap<usize, f64> {
            let s: f64 = v.iter().sum::<f64>().max(1e-9);
            v.iter().enumerate().map(|(i, x)| (i, x / s)).collect()
        };
        let (p, q) = (norm(&p), norm(&q));
        let d = tv_distance(&p, &q);
        prop_assert!((0.0..=1.0).contains(&d));
        prop_assert!((d - tv_distance(&q, &p)).abs() < 1e-12);
    }

    #[test]
    fn wilson_interval_contains_estimate(n in 1u64..10_000, frac in 0.0f64..=1.0) {
        let k = (frac * n as f64).floor() as u64;
        let (lo, hi) = wilson_interval(k, n, 0.99).unwrap();
        let p = k as f64 / n as f64;
        prop_assert!(lo <= p && p <= hi && 0.0 <= lo && hi <= 1.0);
    }
}
