//! Exit criteria. Runs every criterion at its stated tolerance, prints one line each,
//! and exits nonzero when any criterion fails.

use std::process::ExitCode;
use std::time::Instant;

use rwre_core::env_model::{validate_spec, EnvFamily, EnvSpec};
use rwre_core::experiments::{
    annealed_report, arcsine_aging_value, clock_report, dynkin_left_cdf, dynkin_right_cdf, excursion_tail, oracle_suite,
    ExperimentReport,
};
use rwre_core::potential::{Horizon, Potential, ValleyScanner};
use rwre_core::quenched::{Boundary, IntervalProblem};
use rwre_core::seeding::derive_seed;
use rwre_core::trajectory::WalkMode;
use rwre_core::walker::{simulate_interval, LocalChain};

const SEED: u64 = 42;
const WORKERS: usize = 1;
const T_GRID: [u64; 3] = [10_000, 100_000, 1_000_000];
const H_GRID: [f64; 3] = [1.5, 2.0, 4.0];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn spec() -> EnvSpec {
    validate_spec(EnvFamily::LogNormal { mu: -0.25, sigma: 1.0 }).expect("default law validates")
}

fn oracle_equivalence() -> Outcome {
    let rep = oracle_suite(&spec().family, 100, 1000, SEED).expect("oracle suite runs");
    outcome(
        rep.worst() <= 1e-10,
        format!(
            "{} checks; worst relative errors hit {:.1e}, escape {:.1e}, reflected time {:.1e}, stationarity {:.1e} (tol 1e-10)",
            rep.checks, rep.hit_prob, rep.escape_prob, rep.reflected_time, rep.stationarity
        ),
    )
}

fn tail_exponent() -> Outcome {
    let s = spec();
    let fit = excursion_tail(&s, 1_000_000, SEED).expect("excursions sample");
    let h_max = fit.points.last().map_or(f64::NAN, |p| p.0);
    outcome(
        (fit.slope + s.kappa).abs() <= 0.05,
        format!("slope {:.4} vs -kappa = {:.4} (tol 0.05), fitted on h in [2, {h_max}]", fit.slope, -s.kappa),
    )
}

fn crossing_identity() -> Outcome {
    let s = spec();
    let hz = Horizon::new(1e3, s.kappa).unwrap();
    let mut valleys = Vec::new();
    let mut j = 0;
    while valleys.len() < 50 {
        let mut pot = Potential::sample(&s.family, -256, 4096, derive_seed(SEED, "crossing-env", j)).unwrap();
        j += 1;
        let Ok(v) = ValleyScanner::new(hz).next_valley(&mut pot) else { continue };
        if v.height <= 12.0 && v.weight() <= 1e6 {
            valleys.push((pot, v));
        }
    }
    let mut worst: f64 = 0.0;
    let mut failures = 0;
    for (i, (pot, v)) in valleys.iter().enumerate() {
        let chain = LocalChain::new(pot, IntervalProblem { lo: v.a, hi: v.d, left: Boundary::Reflecting, right: Boundary::Absorbing });
        let runs = simulate_interval(&chain, v.b, 10_000, derive_seed(SEED, "crossing-walk", i as u64), u64::MAX);
        let xs: Vec<f64> = runs.iter().map(|r| r.steps as f64).collect();
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let target = v.weight() - (v.d - v.b) as f64;
        let z = (mean - target).abs() / (var / n).sqrt();
        worst = worst.max(z);
        failures += usize::from(z > 4.0);
    }
    outcome(
        failures == 0,
        format!("{} valleys, worst |mean - (W - (d - b))| = {worst:.2} standard errors (tol 4), {failures} outside", valleys.len()),
    )
}

fn monotone_nonincreasing(xs: &[f64]) -> bool {
    xs.windows(2).all(|w| w[1] <= w[0])
}

fn strictly_increasing(xs: &[f64]) -> bool {
    xs.windows(2).all(|w| w[1] > w[0])
}

fn strictly_decreasing(xs: &[f64]) -> bool {
    xs.windows(2).all(|w| w[1] < w[0])
}

fn aging_law(rep: &ExperimentReport) -> Outcome {
    let t_max = *T_GRID.last().unwrap();
    let mut pass = true;
    let mut parts = Vec::new();
    for h in H_GRID {
        let reference = arcsine_aging_value(0.5, h).unwrap();
        let errs: Vec<f64> = T_GRID.iter().map(|&t| rep.cell("aging", t, Some(h)).unwrap().error().unwrap()).collect();
        let est = rep.cell("aging", t_max, Some(h)).unwrap().estimate;
        let ok = errs.last().unwrap() <= &0.10 && monotone_nonincreasing(&errs);
        pass &= ok;
        parts.push(format!(
            "h={h}: estimate {est:.4} vs {reference:.4}, |error| over t {:?}",
            errs.iter().map(|e| format!("{e:.4}")).collect::<Vec<_>>()
        ));
    }
    outcome(pass, parts.join("; "))
}

fn localization(rep: &ExperimentReport) -> Outcome {
    let rates: Vec<f64> = T_GRID.iter().map(|&t| rep.cell("localization", t, None).unwrap().estimate).collect();
    let last = *rates.last().unwrap();
    outcome(
        last > 0.85 && strictly_increasing(&rates),
        format!("rates over t {rates:.4?} (need > 0.85 at t = 1e6 and increasing)"),
    )
}

fn clock_model() -> Outcome {
    let ts = [10_000, 1_000_000];
    let (rep, _) = clock_report(&spec(), &ts, 0.25, 50, 2000, SEED, WORKERS).expect("clock comparison runs");
    let med: Vec<f64> = ts.iter().map(|&t| rep.distance("median_tv", t).unwrap().value).collect();
    outcome(
        med[1] < 0.25 && med[1] < med[0],
        format!("median TV {:.4} at t = 1e4, {:.4} at t = 1e6 (need < 0.25 and decreasing)", med[0], med[1]),
    )
}

fn renewal(rep: &ExperimentReport) -> Outcome {
    let ks: Vec<f64> = T_GRID.iter().map(|&t| rep.distance("ks_left", t).unwrap().value).collect();
    let sandwich = rep.cell("sandwich", *T_GRID.last().unwrap(), None).unwrap().estimate;
    outcome(
        strictly_decreasing(&ks) && sandwich > 0.9,
        format!("left-law KS over t {ks:.4?} (need decreasing); sandwich frequency {sandwich:.4} at t = 1e6 (need > 0.9)"),
    )
}

fn quadrature_identities() -> Outcome {
    let kappas = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];
    let hs = [1.1, 1.5, 2.0, 4.0, 10.0];
    let mut worst: f64 = 0.0;
    for k in kappas {
        for h in hs {
            let a = arcsine_aging_value(k, h).unwrap();
            let b = dynkin_right_cdf(k, h - 1.0, f64::INFINITY).unwrap();
            worst = worst.max((a - b).abs());
        }
        worst = worst.max((dynkin_left_cdf(k, 0.0, 1.0).unwrap() - 1.0).abs());
        worst = worst.max((dynkin_right_cdf(k, 0.0, f64::INFINITY).unwrap() - 1.0).abs());
    }
    outcome(worst <= 1e-9, format!("worst deviation {worst:.1e} over the 9x5 grid and total masses (tol 1e-9)"))
}

fn reproducibility() -> Outcome {
    let s = spec();
    let run = |workers| {
        let (rep, rows) = annealed_report(&s, &[3000, 10_000], &[2.0], 1.0, 64, SEED, workers, WalkMode::Direct).unwrap();
        (serde_json::to_vec(&rep).unwrap(), serde_json::to_vec(&rows).unwrap())
    };
    let clock = |workers| serde_json::to_vec(&clock_report(&s, &[3000], 0.25, 3, 40, SEED, workers).unwrap().0).unwrap();
    let same = run(1) == run(4) && clock(1) == clock(4);
    outcome(same, format!("annealed and clock reports byte-identical at workers 1 and 4: {same}"))
}

fn main() -> ExitCode {
    let mut results: Vec<(u32, &str, Outcome)> = Vec::new();
    let mut timed = |id: u32, name: &'static str, f: &dyn Fn() -> Outcome| {
        let start = Instant::now();
        let o = f();
        println!(
            "criterion {id} {name}: {} ({:.1}s) {}",
            if o.pass { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64(),
            o.detail
        );
        results.push((id, name, o));
    };
    timed(1, "oracle equivalence", &oracle_equivalence);
    timed(2, "excursion tail exponent", &tail_exponent);
    timed(3, "crossing-time identity", &crossing_identity);
    timed(8, "quadrature identities", &quadrature_identities);
    timed(9, "reproducibility", &reproducibility);

    let start = Instant::now();
    let (rep, _) = annealed_report(&spec(), &T_GRID, &H_GRID, 1.0, 10_000, SEED, WORKERS, WalkMode::Direct)
        .expect("annealed batches run");
    println!("annealed batches for criteria 4, 5, 7 took {:.1}s", start.elapsed().as_secs_f64());
    timed(4, "aging law", &|| aging_law(&rep));
    timed(5, "localization", &|| localization(&rep));
    timed(7, "renewal laws", &|| renewal(&rep));
    timed(6, "clock model", &clock_model);

    results.sort_by_key(|r| r.0);
    let failed: Vec<String> = results.iter().filter(|r| !r.2.pass).map(|r| format!("{} ({})", r.0, r.1)).collect();
    println!("acceptance: {} of {} criteria pass", results.len() - failed.len(), results.len());
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        println!("failing: {}", failed.join(", "));
        ExitCode::FAILURE
    }
}
