//! Statistical checks of the samplers against exact quenched values.

use rand::Rng;
use rwre_core::env_model::{validate_spec, EnvFamily, Environment};
use rwre_core::experiments::{annealed_batch, estimate_aging, ks_two_sample, localization_rate, wilson_interval};
use rwre_core::potential::{Horizon, Potential, ValleyScanner};
use rwre_core::quenched::{chain_oracle, escape_prob, hit_prob, Boundary, IntervalProblem};
use rwre_core::seeding::{derive_seed, stream};
use rwre_core::trajectory::{run_annealed, WalkConfig, WalkMode};
use rwre_core::walker::{clock_model, sim_hitting_time, sim_valley_crossing_geometric, simulate_interval, HitOutcome, LocalChain};

fn lognormal() -> EnvFamily {
    EnvFamily::LogNormal { mu: -0.25, sigma: 1.0 }
}

fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (v / n).sqrt())
}

#[test]
fn flat_reflected_passage_mean() {
    let env = Environment::from_omega(0, vec![0.5; 3]).unwrap();
    let problem = IntervalProblem { lo: 0, hi: 2, left: Boundary::Reflecting, right: Boundary::Absorbing };
    let exact = chain_oracle(&env, &problem).unwrap().expected_time_at(0);
    assert!((exact - 4.0).abs() < 1e-12);
    let pot = Potential::new(env).unwrap();
    let runs = simulate_interval(&LocalChain::new(&pot, problem), 0, 100_000, 3, u64::MAX);
    let xs: Vec<f64> = runs.iter().map(|r| r.steps as f64).collect();
    let (m, se) = mean_se(&xs);
    assert!((m - exact).abs() <= 4.0 * se, "{m} vs {exact} (se {se})");
}

#[test]
fn hit_probabilities_within_wilson_interval() {
    // 99.9% for the whole battery, split evenly over the instances
    let instances = 6u64;
    let level = 1.0 - 0.001 / instances as f64;
    for j in 0..instances {
        let mut rng = stream(8, "battery", j);
        let len = rng.gen_range(10..60);
        let pot = Potential::sample(&lognormal(), 0, len - 1, derive_seed(8, "battery-env", j)).unwrap();
        let r = rng.gen_range(0..len - 2);
        let s = rng.gen_range(r + 2..len);
        let x = rng.gen_range(r + 1..s);
        let p = hit_prob(&pot, x, r, s);
        let problem = IntervalProblem { lo: r, hi: s, left: Boundary::Absorbing, right: Boundary::Absorbing };
        let runs = simulate_interval(&LocalChain::new(&pot, problem), x, 100_000, j, u64::MAX);
        let left = runs.iter().filter(|a| a.at_left == Some(true)).count() as u64;
        let (lo, hi) = wilson_interval(left, runs.len() as u64, level).unwrap();
        assert!(lo <= p && p <= hi, "instance {j}: {p} outside [{lo}, {hi}]");
    }
}

/// The first valley of a sampled environment at a small horizon.
fn small_valley(seed: u64) -> (Potential, i64, i64) {
    let hz = Horizon::new(60.0, 0.5).unwrap();
    for j in 0.. {
        let mut pot = Potential::sample(&lognormal(), -512, 4096, derive_seed(seed, "small-valley", j)).unwrap();
        if let Ok(v) = ValleyScanner::new(hz).next_valley(&mut pot) {
            if v.weight() < 2e3 && v.d - v.b >= 3 {
                return (pot, v.b, v.d);
            }
        }
    }
    unreachable!()
}

#[test]
fn geometric_crossing_matches_direct_crossing() {
    let (mut pot, b, d) = small_valley(21);
    let n = 10_000;
    let direct: Vec<f64> = (0..n)
        .map(|i| match sim_hitting_time(&mut pot, b, d, u64::MAX, &mut stream(5, "direct", i)).unwrap() {
            HitOutcome::Hit(s) => s as f64,
            HitOutcome::Capped => panic!("capped"),
        })
        .collect();
    let mut failures = Vec::new();
    let geometric: Vec<f64> = (0..n)
        .map(|i| {
            let c = sim_valley_crossing_geometric(&mut pot, b, d, &mut stream(5, "geometric", i)).unwrap();
            failures.push(c.failures as f64);
            c.steps as f64
        })
        .collect();
    let (ks, p) = ks_two_sample(&direct, &geometric);
    assert!(p > 0.001, "KS {ks}, p = {p}");

    // failures before escape are geometric with mean p / (1 - p)
    let q = escape_prob(&pot, b, d);
    let expect = (1.0 - q) / q;
    let sd = ((1.0 - q) / (q * q)).sqrt() / (n as f64).sqrt();
    let (m, _) = mean_se(&failures);
    assert!((m - expect).abs() <= 4.0 * sd, "{m} vs {expect}");
}

#[test]
fn clock_index_exponential_tail() {
    // P(ell = 0) = P(W_1 e_1 > t) = exp(-t / W_1)
    let (w1, t) = (2e4, 1e4);
    let n = 100_000;
    let zero = (0..n).filter(|&i| clock_model(&[w1, 1.0], t, &mut stream(6, "clock", i)).index == 0).count();
    let p = (-t / w1).exp();
    let sd = (p * (1.0 - p) / n as f64).sqrt();
    assert!((zero as f64 / n as f64 - p).abs() <= 4.0 * sd);
}

#[test]
fn hybrid_and_direct_modes_agree() {
    let spec = validate_spec(lognormal()).unwrap();
    let n = 1000;
    let mut freq = Vec::new();
    for mode in [WalkMode::Direct, WalkMode::Hybrid] {
        let mut cfg = WalkConfig::new(10_000, vec![1.5, 2.0, 4.0], 1.0, 77);
        cfg.mode = mode;
        let batch = annealed_batch(&spec, &cfg, n, 1).unwrap();
        assert!(batch.summaries.iter().all(|s| s.ok()));
        let mut f: Vec<f64> = estimate_aging(&batch).unwrap().iter().map(|c| c.estimate).collect();
        f.push(localization_rate(&batch).unwrap().estimate);
        freq.push(f);
    }
    for (a, b) in freq[0].iter().zip(&freq[1]) {
        let p = 0.5 * (a + b);
        let sd = (2.0 * p * (1.0 - p) / n as f64).sqrt().max(1e-3);
        assert!((a - b).abs() <= 3.0 * sd, "direct {a} vs hybrid {b}");
    }
}

#[test]
fn summaries_do_not_depend_on_worker_count() {
    let cfg = WalkConfig::new(5000, vec![2.0], 1.0, 9);
    let one = run_annealed(&lognormal(), 0.5, &cfg, 22, 1).unwrap();
    let three = run_annealed(&lognormal(), 0.5, &cfg, 22, 3).unwrap();
    assert_eq!(one, three);
}

#[test]
fn summary_invariants() {
    let cfg = WalkConfig::new(20_000, vec![1.5, 3.0], 1.0, 12);
    for s in run_annealed(&lognormal(), 0.5, &cfg, 200, 1).unwrap() {
        let times: Vec<u64> = s.entries.iter().flatten().copied().collect();
        assert!(times.windows(2).all(|w| w[0] < w[1]));
        // ell_t counts the valleys entered by t
        assert_eq!(s.ell_t, times.iter().filter(|&&e| e <= cfg.t).count());
        assert!(s.ell_th.iter().all(|&l| l >= s.ell_t));
        if s.ell_t >= 1 {
            let frac = s.entry_of_last() as f64 / cfg.t as f64;
            assert!((0.0..=1.0).contains(&frac));
        }
        for (e, x) in s.entries.iter().zip(&s.exits) {
            if let (Some(e), Some(x)) = (e, x) {
                assert!(x > e);
            }
        }
    }
}

#[test]
fn first_valley_is_reached_more_often_at_larger_horizons() {
    let rate = |t: u64| {
        let cfg = WalkConfig::new(t, Vec::new(), 1.0, 31);
        let s = run_annealed(&lognormal(), 0.5, &cfg, 2000, 1).unwrap();
        s.iter().filter(|s| s.ell_t >= 1).count() as f64 / s.len() as f64
    };
    let (small, large) = (rate(100), rate(100_000));
    assert!(large > small, "{small} then {large}");
}
