use rwre_core::env_model::{validate_spec, Atom, EnvFamily, EnvSpec};
use rwre_core::experiments::{
    annealed_batch, annealed_report, arcsine_aging_value, clock_model_comparison, clock_valley, env_audit, estimate_aging,
    localization_rate, renewal_test, ExperimentError, ExperimentReport,
};
use rwre_core::potential::{DiagnosticsConfig, Horizon};
use rwre_core::seeding::stream;
use rwre_core::trajectory::{SharedTerrain, WalkConfig, WalkMode};

fn spec() -> EnvSpec {
    validate_spec(EnvFamily::LogNormal { mu: -0.25, sigma: 1.0 }).unwrap()
}

#[test]
fn empty_batches_are_refused() {
    let cfg = WalkConfig::new(1000, vec![2.0], 1.0, 1);
    assert!(matches!(annealed_batch(&spec(), &cfg, 0, 1), Err(ExperimentError::Empty)));
}

#[test]
fn lattice_laws_are_refused() {
    let lattice = EnvFamily::Discrete { atoms: vec![Atom { rho: 4.0, p: 0.3 }, Atom { rho: 0.5, p: 0.7 }] };
    let spec = validate_spec(lattice).unwrap();
    assert!(!spec.non_lattice);
    let cfg = WalkConfig::new(1000, vec![2.0], 1.0, 1);
    assert!(matches!(annealed_batch(&spec, &cfg, 10, 1), Err(ExperimentError::Lattice)));
}

#[test]
fn batch_statistics_are_in_range() {
    let cfg = WalkConfig::new(5000, vec![1.5, 2.0], 1.0, 3);
    let batch = annealed_batch(&spec(), &cfg, 300, 1).unwrap();
    for c in estimate_aging(&batch).unwrap() {
        assert!(c.ci_lo <= c.estimate && c.estimate <= c.ci_hi);
        assert_eq!(c.n, 300);
        assert_eq!(c.reference, Some(arcsine_aging_value(0.5, c.h.unwrap()).unwrap()));
    }
    let loc = localization_rate(&batch).unwrap();
    assert!((0.0..=1.0).contains(&loc.estimate));
    let ren = renewal_test(&batch).unwrap();
    assert!((0.0..=1.0).contains(&ren.ks_left) && (0.0..=1.0).contains(&ren.ks_right));
    assert_eq!(ren.right_cap, 1.0);
}

#[test]
fn huge_window_localizes_every_entered_walk() {
    let cfg = WalkConfig::new(5000, vec![2.0], 1e9, 4);
    let batch = annealed_batch(&spec(), &cfg, 200, 1).unwrap();
    for s in &batch.summaries {
        assert_eq!(s.localized, s.ell_t >= 1);
    }
}

#[test]
fn aging_near_unit_ratio_is_near_one() {
    let cfg = WalkConfig::new(10_000, vec![1.01], 1.0, 5);
    let batch = annealed_batch(&spec(), &cfg, 400, 1).unwrap();
    let cell = &estimate_aging(&batch).unwrap()[0];
    assert!(cell.reference.unwrap() > 0.9);
    assert!(cell.estimate > 0.85, "{cell:?}");
}

#[test]
fn first_clock_valley_has_exponential_law() {
    // P(ell + 1 = 1) = P(W_1 e_1 > t) = exp(-t / W_1)
    let s = spec();
    let t = 1e4;
    let shared = SharedTerrain::sample(&s.family, Horizon::new(t, s.kappa).unwrap(), 19).unwrap();
    let w1 = shared.cover(0, 10_000).unwrap().valleys()[0].weight();
    let n = 20_000;
    let first = (0..n).filter(|&i| clock_valley(&shared, t, &mut stream(2, "clock", i)).unwrap() == 1).count();
    let p = (-t / w1).exp();
    let sd = (p * (1.0 - p) / n as f64).sqrt().max(1e-4);
    assert!((first as f64 / n as f64 - p).abs() <= 4.0 * sd, "{first} of {n} vs {p}");
}

#[test]
fn clock_comparison_shapes() {
    let c = clock_model_comparison(&spec(), 3000, 4, 60, 8, 1).unwrap();
    assert_eq!(c.per_env.len() as u64 + c.excluded, 4);
    for e in &c.per_env {
        assert!(e.k_t >= 1);
        assert!((0.0..=1.0).contains(&e.tv));
        let total: f64 = e.walk_law.values().sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert!(e.clock_law.keys().all(|&k| k >= 1));
    }
}

#[test]
fn report_round_trips_through_json() {
    let (rep, rows) = annealed_report(&spec(), &[2000], &[2.0], 1.0, 20, 6, 1, WalkMode::Direct).unwrap();
    assert_eq!(rows.len(), 20);
    assert_eq!(rep.schema, 1);
    let text = serde_json::to_string(&rep).unwrap();
    let back: ExperimentReport = serde_json::from_str(&text).unwrap();
    assert_eq!(back, rep);
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    for key in ["config", "kappa", "grid", "cells", "distances", "manifest"] {
        assert!(v.get(key).is_some(), "missing {key}");
    }
    for key in ["t", "h", "eta", "estimate", "ci_lo", "ci_hi", "reference", "n", "flags"] {
        assert!(v["cells"][0].get(key).is_some(), "cell missing {key}");
    }
}

#[test]
fn audit_rates_are_fractions() {
    let s = spec();
    let cfg = DiagnosticsConfig::for_spec(&s);
    let audit = env_audit(&s, 10_000, 8, 2, &cfg).unwrap();
    assert_eq!(audit.failed, 0);
    for (name, r) in &audit.rates {
        assert!((0.0..=1.0).contains(r), "{name}");
    }
    assert!(audit.rates.contains_key("good"));
}
