//! Limit laws and the statistics that compare simulated walks against them.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::env_model::{EnvError, EnvFamily, EnvSpec, Environment};
use crate::numeric::integrate;
use crate::potential::{
    excursion_heights, good_env_diagnostics, DiagnosticsConfig, Horizon, Potential, PotentialError,
};
use crate::quenched::{
    chain_oracle, escape_prob, expected_hit_time_reflected, hit_prob, invariant_measure, stationary_residual, Boundary,
    IntervalProblem, QuenchedError,
};
use crate::seeding::{derive_seed, stream, StreamRng};
use crate::trajectory::{run_annealed, run_quenched, SharedTerrain, TrajectorySummary, WalkConfig, WalkError, WalkMode};

pub const REPORT_SCHEMA: u32 = 1;
pub const CI_LEVEL: f64 = 0.99;
const QUAD_TOL: f64 = 1e-13;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("{0}")]
    Domain(String),
    #[error("no replicas requested")]
    Empty,
    #[error("the law is lattice; this experiment needs a non-lattice law")]
    Lattice,
    #[error(transparent)]
    Walk(#[from] WalkError),
    #[error(transparent)]
    Potential(#[from] PotentialError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Quenched(#[from] QuenchedError),
}

fn check_kappa(kappa: f64) -> Result<(), ExperimentError> {
    if kappa > 0.0 && kappa < 1.0 {
        Ok(())
    } else {
        Err(ExperimentError::Domain(format!("kappa = {kappa} is outside (0, 1)")))
    }
}

fn prefactor(kappa: f64) -> f64 {
    (kappa * std::f64::consts::PI).sin() / std::f64::consts::PI
}

/// `int_lo^hi y^(p-1) (1-y)^(q-1) dy`, each endpoint singularity removed by a power substitution.
fn beta_mass(p: f64, q: f64, lo: f64, hi: f64) -> f64 {
    let mut s = 0.0;
    if lo < 0.5 {
        let top = hi.min(0.5);
        // u = y^p
        s += integrate(|u: f64| (1.0 - u.powf(1.0 / p)).powf(q - 1.0), lo.powf(p), top.powf(p), QUAD_TOL) / p;
    }
    if hi > 0.5 {
        let bottom = lo.max(0.5);
        // v = (1 - y)^q
        s += integrate(|v: f64| (1.0 - v.powf(1.0 / q)).powf(p - 1.0), (1.0 - hi).powf(q), (1.0 - bottom).powf(q), QUAD_TOL) / q;
    }
    s
}

/// Limit of the probability that the walk has not moved more than the window between `t` and `t h`.
pub fn arcsine_aging_value(kappa: f64, h: f64) -> Result<f64, ExperimentError> {
    check_kappa(kappa)?;
    if !(h > 1.0) {
        return Err(ExperimentError::Domain(format!("aging ratio h = {h} must exceed 1")));
    }
    if h.is_infinite() {
        return Ok(0.0);
    }
    Ok(prefactor(kappa) * beta_mass(kappa, 1.0 - kappa, 0.0, 1.0 / h))
}

/// Mass of `[x1, x2]` under the density `sin(k pi)/pi (1-x)^(k-1) x^(-k)` on `[0, 1]`.
pub fn dynkin_left_cdf(kappa: f64, x1: f64, x2: f64) -> Result<f64, ExperimentError> {
    check_kappa(kappa)?;
    if !(0.0 <= x1 && x1 <= x2 && x2 <= 1.0) {
        return Err(ExperimentError::Domain(format!("left law needs 0 <= x1 <= x2 <= 1, got [{x1}, {x2}]")));
    }
    Ok(prefactor(kappa) * beta_mass(1.0 - kappa, kappa, x1, x2))
}

/// Mass of `[x1, x2]` under the density `sin(k pi)/pi x^(-k) / (1 + x)` on `[0, inf)`.
pub fn dynkin_right_cdf(kappa: f64, x1: f64, x2: f64) -> Result<f64, ExperimentError> {
    check_kappa(kappa)?;
    if !(0.0 <= x1 && x1 <= x2) {
        return Err(ExperimentError::Domain(format!("right law needs 0 <= x1 <= x2, got [{x1}, {x2}]")));
    }
    let mut s = 0.0;
    if x1 < 1.0 {
        // u = x^(1-k) near the origin
        let e = 1.0 / (1.0 - kappa);
        s += integrate(|u: f64| 1.0 / (1.0 + u.powf(e)), x1.powf(1.0 - kappa), x2.min(1.0).powf(1.0 - kappa), QUAD_TOL) / (1.0 - kappa);
    }
    if x2 > 1.0 {
        // w = x^(-k) on the tail
        let e = 1.0 / kappa;
        s += integrate(|w: f64| 1.0 / (1.0 + w.powf(e)), x2.recip().powf(kappa), x1.max(1.0).recip().powf(kappa), QUAD_TOL) / kappa;
    }
    Ok(prefactor(kappa) * s)
}

/// Wilson score interval for a binomial proportion.
pub fn wilson_interval(successes: u64, trials: u64, level: f64) -> Result<(f64, f64), ExperimentError> {
    if trials == 0 {
        return Err(ExperimentError::Empty);
    }
    if successes > trials || !(level > 0.0 && level < 1.0) {
        return Err(ExperimentError::Domain(format!("bad proportion {successes}/{trials} at level {level}")));
    }
    let z = Normal::new(0.0, 1.0).unwrap().inverse_cdf(0.5 + level / 2.0);
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    let lo = if successes == 0 { 0.0 } else { (center - half).max(0.0) };
    let hi = if successes == trials { 1.0 } else { (center + half).min(1.0) };
    Ok((lo, hi))
}

/// Empirical law of a sample.
pub fn empirical_law<K: Ord + Copy>(sample: impl IntoIterator<Item = K>) -> BTreeMap<K, f64> {
    let mut counts = BTreeMap::new();
    let mut n = 0usize;
    for k in sample {
        *counts.entry(k).or_insert(0usize) += 1;
        n += 1;
    }
    counts.into_iter().map(|(k, c)| (k, c as f64 / n as f64)).collect()
}

/// Half the L1 distance over the union of supports.
pub fn tv_distance<K: Ord>(p: &BTreeMap<K, f64>, q: &BTreeMap<K, f64>) -> f64 {
    let mut s: f64 = p.iter().map(|(k, &pk)| (pk - q.get(k).copied().unwrap_or(0.0)).abs()).sum();
    s += q.iter().filter(|(k, _)| !p.contains_key(k)).map(|(_, &qk)| qk).sum::<f64>();
    (0.5 * s).min(1.0)
}

/// Asymptotic Kolmogorov tail `P(sqrt(n) D > lambda)` with the usual small-sample correction.
pub fn kolmogorov_p(n_eff: f64, d: f64) -> f64 {
    let s = n_eff.sqrt();
    let lambda = (s + 0.12 + 0.11 / s) * d;
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = 2.0 * (-1f64).powi(k - 1) * (-2.0 * kf * kf * lambda * lambda).exp();
        sum += term;
        if term.abs() < 1e-16 {
            break;
        }
    }
    sum.clamp(0.0, 1.0)
}

/// `sup_x |F_n(x) - F(x)|` over `x <= cap`; samples above `cap` count only through `F_n(cap)`.
pub fn ks_statistic<F: Fn(f64) -> f64>(sample: &[f64], cdf: F, cap: f64) -> f64 {
    let mut xs: Vec<f64> = sample.to_vec();
    xs.sort_by(|a, b| a.total_cmp(b));
    let n = xs.len() as f64;
    let mut d: f64 = 0.0;
    let mut below = 0usize;
    for (i, &x) in xs.iter().enumerate() {
        if x > cap {
            break;
        }
        let f = cdf(x);
        d = d.max((f - i as f64 / n).abs()).max(((i + 1) as f64 / n - f).abs());
        below = i + 1;
    }
    if cap.is_finite() {
        d = d.max((cdf(cap) - below as f64 / n).abs());
    }
    d
}

/// Two-sample KS statistic and its asymptotic p-value.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> (f64, f64) {
    let mut xa = a.to_vec();
    let mut xb = b.to_vec();
    xa.sort_by(|p, q| p.total_cmp(q));
    xb.sort_by(|p, q| p.total_cmp(q));
    let (na, nb) = (xa.len(), xb.len());
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < na && j < nb {
        let x = xa[i].min(xb[j]);
        while i < na && xa[i] <= x {
            i += 1;
        }
        while j < nb && xb[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na as f64 - j as f64 / nb as f64).abs());
    }
    let n_eff = (na * nb) as f64 / (na + nb) as f64;
    (d, kolmogorov_p(n_eff, d))
}

/// Least-squares fit of `log P(H > h)` against `h`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailFit {
    pub slope: f64,
    pub intercept: f64,
    pub n: usize,
    /// `(h, log of the empirical tail)` at each fitted level.
    pub points: Vec<(f64, f64)>,
}

/// Fits the log-tail on `h = lo, lo + step, ...` while at least `min_count` samples exceed `h`.
pub fn tail_slope(heights: &[f64], lo: f64, step: f64, min_count: usize) -> TailFit {
    let mut xs: Vec<f64> = heights.to_vec();
    xs.sort_by(|a, b| a.total_cmp(b));
    let n = xs.len();
    let mut points = Vec::new();
    let mut h = lo;
    loop {
        let above = n - xs.partition_point(|&x| x <= h);
        if above < min_count {
            break;
        }
        points.push((h, (above as f64 / n as f64).ln()));
        h += step;
    }
    let m = points.len() as f64;
    let (sx, sy) = points.iter().fold((0.0, 0.0), |(a, b), &(x, y)| (a + x, b + y));
    let (mx, my) = (sx / m, sy / m);
    let sxy: f64 = points.iter().map(|&(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = points.iter().map(|&(x, _)| (x - mx) * (x - mx)).sum();
    let slope = sxy / sxx;
    TailFit { slope, intercept: my - slope * mx, n, points }
}

/// Samples `n` consecutive excursion heights of one environment and fits their tail.
pub fn excursion_tail(spec: &EnvSpec, n: usize, seed: u64) -> Result<TailFit, ExperimentError> {
    if n == 0 {
        return Err(ExperimentError::Empty);
    }
    let mut pot = Potential::sample(&spec.family, 0, 1 << 16, derive_seed(seed, "tail", 0))?.with_budget(usize::MAX);
    let heights = excursion_heights(&mut pot, n)?;
    Ok(tail_slope(&heights, 2.0, 0.25, 1000))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellFlags {
    /// Replicas that failed (budget, unreachable scan) and were excluded.
    pub failed: u64,
    /// Replicas excluded for other stated reasons.
    pub excluded: u64,
}

/// One estimate on the `(t, h, eta)` grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub metric: String,
    pub t: u64,
    pub h: Option<f64>,
    pub eta: f64,
    pub estimate: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub reference: Option<f64>,
    pub n: u64,
    pub flags: CellFlags,
}

impl Cell {
    fn proportion(metric: &str, t: u64, h: Option<f64>, eta: f64, hits: u64, n: u64, flags: CellFlags) -> Result<Self, ExperimentError> {
        let (ci_lo, ci_hi) = wilson_interval(hits, n, CI_LEVEL)?;
        Ok(Cell {
            metric: metric.into(),
            t,
            h,
            eta,
            estimate: hits as f64 / n as f64,
            ci_lo,
            ci_hi,
            reference: None,
            n,
            flags,
        })
    }

    pub fn error(&self) -> Option<f64> {
        self.reference.map(|r| (self.estimate - r).abs())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Distance {
    pub metric: String,
    pub t: u64,
    pub value: f64,
    pub n: u64,
    pub p_value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub t: Vec<u64>,
    pub h: Vec<f64>,
    pub eta: f64,
}

/// Serialized result of one experiment (schema version 1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub schema: u32,
    pub experiment: String,
    pub config: serde_json::Value,
    pub kappa: f64,
    pub grid: Grid,
    pub cells: Vec<Cell>,
    pub distances: Vec<Distance>,
    pub manifest: serde_json::Value,
}

impl ExperimentReport {
    pub fn new(experiment: &str, kappa: f64, grid: Grid) -> Self {
        ExperimentReport {
            schema: REPORT_SCHEMA,
            experiment: experiment.into(),
            config: serde_json::Value::Null,
            kappa,
            grid,
            cells: Vec::new(),
            distances: Vec::new(),
            manifest: serde_json::Value::Null,
        }
    }

    pub fn cell(&self, metric: &str, t: u64, h: Option<f64>) -> Option<&Cell> {
        self.cells.iter().find(|c| c.metric == metric && c.t == t && c.h == h)
    }

    pub fn distance(&self, metric: &str, t: u64) -> Option<&Distance> {
        self.distances.iter().find(|d| d.metric == metric && d.t == t)
    }
}

/// Trajectories of one annealed batch: a fresh environment per replica.
#[derive(Debug, Clone)]
pub struct AnnealedBatch {
    pub cfg: WalkConfig,
    pub kappa: f64,
    pub summaries: Vec<TrajectorySummary>,
}

impl AnnealedBatch {
    fn ok(&self) -> impl Iterator<Item = &TrajectorySummary> {
        self.summaries.iter().filter(|s| s.ok())
    }

    fn failed(&self) -> u64 {
        self.summaries.iter().filter(|s| !s.ok()).count() as u64
    }
}

fn require_usable(spec: &EnvSpec) -> Result<(), ExperimentError> {
    if !spec.non_lattice {
        return Err(ExperimentError::Lattice);
    }
    check_kappa(spec.kappa)
}

pub fn annealed_batch(spec: &EnvSpec, cfg: &WalkConfig, n: u64, workers: usize) -> Result<AnnealedBatch, ExperimentError> {
    require_usable(spec)?;
    if n == 0 {
        return Err(ExperimentError::Empty);
    }
    let summaries = run_annealed(&spec.family, spec.kappa, cfg, n, workers)?;
    Ok(AnnealedBatch { cfg: cfg.clone(), kappa: spec.kappa, summaries })
}

/// `P(|X_{th} - X_t| <= eta log t)` for each configured `h`, with its limit as reference.
pub fn estimate_aging(batch: &AnnealedBatch) -> Result<Vec<Cell>, ExperimentError> {
    let cfg = &batch.cfg;
    let n = batch.ok().count() as u64;
    if n == 0 {
        return Err(ExperimentError::Empty);
    }
    let flags = CellFlags { failed: batch.failed(), excluded: 0 };
    cfg.h
        .iter()
        .enumerate()
        .map(|(k, &h)| {
            let hits = batch.ok().filter(|s| s.aged(k, cfg.window())).count() as u64;
            let mut cell = Cell::proportion("aging", cfg.t, Some(h), cfg.eta, hits, n, flags)?;
            cell.reference = Some(arcsine_aging_value(batch.kappa, h)?);
            Ok(cell)
        })
        .collect()
}

/// Fraction of replicas with `|X_t - b_{ell_t}| <= eta log t`; replicas that entered no valley count as not localized.
pub fn localization_rate(batch: &AnnealedBatch) -> Result<Cell, ExperimentError> {
    let n = batch.ok().count() as u64;
    if n == 0 {
        return Err(ExperimentError::Empty);
    }
    let hits = batch.ok().filter(|s| s.localized).count() as u64;
    let no_valley = batch.ok().filter(|s| s.ell_t == 0).count() as u64;
    let mut cell = Cell::proportion(
        "localization",
        batch.cfg.t,
        None,
        batch.cfg.eta,
        hits,
        n,
        CellFlags { failed: batch.failed(), excluded: no_valley },
    )?;
    cell.reference = Some(1.0);
    Ok(cell)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenewalStats {
    pub t: u64,
    /// Replicas that had entered at least one valley by time `t`.
    pub entered: u64,
    /// KS distance of `1 - T_{ell_t}/t` from the left law.
    pub ks_left: f64,
    /// KS distance of `T_{ell_t + 1}/t - 1` from the right law, on `[0, right_cap]`.
    pub ks_right: f64,
    pub right_cap: f64,
    /// `T_{ell_t} <= t < T_{ell_t} + tau_{ell_t}`; replicas with no valley count as failures.
    pub sandwich: Cell,
}

pub fn renewal_test(batch: &AnnealedBatch) -> Result<RenewalStats, ExperimentError> {
    let cfg = &batch.cfg;
    let kappa = batch.kappa;
    let t = cfg.t as f64;
    let entered: Vec<&TrajectorySummary> = batch.ok().filter(|s| s.ell_t >= 1).collect();
    let n = batch.ok().count() as u64;
    if n == 0 {
        return Err(ExperimentError::Empty);
    }
    let left: Vec<f64> = entered.iter().map(|s| 1.0 - s.entry_of_last() as f64 / t).collect();
    let right_cap = cfg.last_time() as f64 / t - 1.0;
    let right: Vec<f64> = entered
        .iter()
        .map(|s| s.entry_of_next().map_or(f64::INFINITY, |e| e as f64 / t - 1.0))
        .collect();
    let ks_left = ks_statistic(&left, |x| dynkin_left_cdf(kappa, 0.0, x.clamp(0.0, 1.0)).unwrap(), f64::INFINITY);
    let ks_right = ks_statistic(&right, |x| dynkin_right_cdf(kappa, 0.0, x.max(0.0)).unwrap(), right_cap);
    let hits = entered.iter().filter(|s| s.sandwiched() == Some(true)).count() as u64;
    let mut sandwich = Cell::proportion(
        "sandwich",
        cfg.t,
        None,
        cfg.eta,
        hits,
        n,
        CellFlags { failed: batch.failed(), excluded: n - entered.len() as u64 },
    )?;
    sandwich.reference = Some(1.0);
    Ok(RenewalStats { t: cfg.t, entered: entered.len() as u64, ks_left, ks_right, right_cap, sandwich })
}

/// `ell^(e) + 1` for one clock realization, growing the valley catalog until the clock passes `t`.
pub fn clock_valley(shared: &SharedTerrain, t: f64, rng: &mut StreamRng) -> Result<usize, PotentialError> {
    let mut snap = shared.snapshot();
    let mut sum = 0.0;
    let mut k = 0;
    loop {
        while snap.valleys().len() <= k {
            snap = shared.cover(snap.potential().lo(), snap.frontier() + 4096)?;
        }
        let e: f64 = rng.sample(Exp1);
        sum += snap.valleys()[k].weight() * e;
        if sum > t {
            return Ok(k + 1);
        }
        k += 1;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvComparison {
    pub env: u64,
    pub k_t: usize,
    pub tv: f64,
    /// Law of `ell_t` over quenched walks.
    pub walk_law: BTreeMap<usize, f64>,
    /// Law of `ell^(e) + 1` over as many clock realizations.
    pub clock_law: BTreeMap<usize, f64>,
    /// Largest gap between the walk's valley frequencies and the clock occupation probabilities.
    pub occupation_gap: f64,
    pub failed_walks: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClockComparison {
    pub t: u64,
    pub n_walks: u64,
    pub per_env: Vec<EnvComparison>,
    /// Environments with no deep valley within the horizon, or whose terrain could not be built.
    pub excluded: u64,
    pub median_tv: f64,
}

/// Quenched walks against clock realizations, one environment at a time.
pub fn clock_model_comparison(
    spec: &EnvSpec,
    t: u64,
    n_env: u64,
    n_walks: u64,
    seed: u64,
    workers: usize,
) -> Result<ClockComparison, ExperimentError> {
    require_usable(spec)?;
    if n_env == 0 || n_walks == 0 {
        return Err(ExperimentError::Empty);
    }
    let hz = Horizon::new(t as f64, spec.kappa)?;
    let mut cfg = WalkConfig::new(t, Vec::new(), 1.0, seed);
    cfg.validate()?;
    let mut per_env = Vec::new();
    let mut excluded = 0;
    for j in 0..n_env {
        let walk_seed = derive_seed(seed, "quenched", j);
        cfg.seed = walk_seed;
        let shared = match SharedTerrain::sample(&spec.family, hz, derive_seed(seed, "env", j)) {
            Ok(s) => Arc::new(s),
            Err(_) => {
                excluded += 1;
                continue;
            }
        };
        // K_t: valleys built on the first n_t excursions
        let k_t = match shared.cover(0, 0) {
            Ok(_) => {
                let mut snap = shared.snapshot();
                while snap.valleys().last().is_none_or(|v| v.excursion <= hz.n_t) && snap.frontier() < i64::MAX / 2 {
                    let before = snap.valleys().len();
                    match shared.cover(snap.potential().lo(), snap.frontier() + 4096) {
                        Ok(s) => snap = s,
                        Err(_) => break,
                    }
                    if snap.valleys().len() == before && snap.valleys().last().is_some_and(|v| v.excursion > hz.n_t) {
                        break;
                    }
                }
                snap.valleys().iter().filter(|v| v.excursion <= hz.n_t).count()
            }
            Err(_) => 0,
        };
        if k_t == 0 {
            excluded += 1;
            continue;
        }
        let walks = run_quenched(&shared, &cfg, walk_seed, n_walks, workers)?;
        let failed_walks = walks.iter().filter(|s| !s.ok()).count() as u64;
        let walk_law = empirical_law(walks.iter().filter(|s| s.ok()).map(|s| s.ell_t));
        let draw = |tag: &str, n: u64| -> Result<Vec<usize>, PotentialError> {
            (0..n).map(|i| clock_valley(&shared, t as f64, &mut stream(walk_seed, tag, i))).collect()
        };
        let clock = match draw("clock", n_walks) {
            Ok(c) => c,
            Err(_) => {
                excluded += 1;
                continue;
            }
        };
        let clock_law = empirical_law(clock.iter().copied());
        let reference = empirical_law(draw("clock-ref", 10 * n_walks)?);
        let occupation_gap = walk_law
            .keys()
            .chain(reference.keys())
            .map(|k| (walk_law.get(k).copied().unwrap_or(0.0) - reference.get(k).copied().unwrap_or(0.0)).abs())
            .fold(0.0, f64::max);
        per_env.push(EnvComparison {
            env: j,
            k_t,
            tv: tv_distance(&walk_law, &clock_law),
            walk_law,
            clock_law,
            occupation_gap,
            failed_walks,
        });
    }
    if per_env.is_empty() {
        return Err(ExperimentError::Empty);
    }
    Ok(ClockComparison { t, n_walks, median_tv: median(per_env.iter().map(|e| e.tv)), per_env, excluded })
}

pub fn median(xs: impl IntoIterator<Item = f64>) -> f64 {
    let mut v: Vec<f64> = xs.into_iter().collect();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Aging, localization and renewal statistics for each `t`, all from one annealed batch per `t`.
pub fn annealed_report(
    spec: &EnvSpec,
    ts: &[u64],
    hs: &[f64],
    eta: f64,
    n: u64,
    seed: u64,
    workers: usize,
    mode: WalkMode,
) -> Result<(ExperimentReport, Vec<TrajectorySummary>), ExperimentError> {
    let mut report = ExperimentReport::new("annealed", spec.kappa, Grid { t: ts.to_vec(), h: hs.to_vec(), eta });
    let mut rows = Vec::new();
    for &t in ts {
        let mut cfg = WalkConfig::new(t, hs.to_vec(), eta, seed);
        cfg.mode = mode;
        let batch = annealed_batch(spec, &cfg, n, workers)?;
        report.cells.extend(estimate_aging(&batch)?);
        report.cells.push(localization_rate(&batch)?);
        let ren = renewal_test(&batch)?;
        report.distances.push(Distance { metric: "ks_left".into(), t, value: ren.ks_left, n: ren.entered, p_value: None });
        report.distances.push(Distance { metric: "ks_right".into(), t, value: ren.ks_right, n: ren.entered, p_value: None });
        report.cells.push(ren.sandwich);
        rows.extend(batch.summaries);
    }
    Ok((report, rows))
}

/// Clock comparison for each `t`: median TV as a distance, and the fraction of environments with TV above `delta`.
pub fn clock_report(
    spec: &EnvSpec,
    ts: &[u64],
    delta: f64,
    n_env: u64,
    n_walks: u64,
    seed: u64,
    workers: usize,
) -> Result<(ExperimentReport, Vec<ClockComparison>), ExperimentError> {
    let mut report = ExperimentReport::new("clock-compare", spec.kappa, Grid { t: ts.to_vec(), h: Vec::new(), eta: 1.0 });
    let mut out = Vec::new();
    for &t in ts {
        let cmp = clock_model_comparison(spec, t, n_env, n_walks, seed, workers)?;
        let n = cmp.per_env.len() as u64;
        let far = cmp.per_env.iter().filter(|e| e.tv > delta).count() as u64;
        let mut cell = Cell::proportion("tv_above_delta", t, None, 1.0, far, n, CellFlags { failed: 0, excluded: cmp.excluded })?;
        cell.reference = Some(0.0);
        report.cells.push(cell);
        report.distances.push(Distance { metric: "median_tv".into(), t, value: cmp.median_tv, n, p_value: None });
        let gap = median(cmp.per_env.iter().map(|e| e.occupation_gap));
        report.distances.push(Distance { metric: "median_occupation_gap".into(), t, value: gap, n, p_value: None });
        out.push(cmp);
    }
    Ok((report, out))
}

/// Frequency of each good-environment event over sampled environments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvAudit {
    pub t: u64,
    pub n_env: u64,
    pub failed: u64,
    pub constants: DiagnosticsConfig,
    /// Event name to the fraction of environments where it holds.
    pub rates: BTreeMap<String, f64>,
    pub mean_k_t: f64,
}

pub fn env_audit(spec: &EnvSpec, t: u64, n_env: u64, seed: u64, cfg: &DiagnosticsConfig) -> Result<EnvAudit, ExperimentError> {
    if n_env == 0 {
        return Err(ExperimentError::Empty);
    }
    cfg.validate().map_err(ExperimentError::Domain)?;
    let hz = Horizon::new(t as f64, spec.kappa)?;
    let mut counts: BTreeMap<String, u64> = BTreeMap::new();
    let mut ok = 0u64;
    let mut k_sum = 0usize;
    for j in 0..n_env {
        let Ok(mut pot) = Potential::sample(&spec.family, -1024, 4096, derive_seed(seed, "env", j)) else {
            continue;
        };
        let Ok((_, d)) = good_env_diagnostics(&mut pot, &hz, cfg) else {
            continue;
        };
        ok += 1;
        k_sum += d.k_t;
        let events = [
            ("A1", d.a1.holds),
            ("A2", d.a2.holds),
            ("A3", d.a3.holds),
            ("A4", d.a4.holds),
            ("A5", d.a5.holds),
            ("F_gamma", d.f_gamma.holds),
            ("A_star", d.a_star.holds),
            ("good", d.good()),
        ];
        for (name, holds) in events {
            *counts.entry(name.into()).or_insert(0) += u64::from(holds);
        }
    }
    if ok == 0 {
        return Err(ExperimentError::Empty);
    }
    Ok(EnvAudit {
        t,
        n_env,
        failed: n_env - ok,
        constants: *cfg,
        rates: counts.into_iter().map(|(k, c)| (k, c as f64 / ok as f64)).collect(),
        mean_k_t: k_sum as f64 / ok as f64,
    })
}

/// Largest disagreement of each closed form with the linear-solve oracle.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OracleSuiteReport {
    pub n_env: u64,
    pub checks: u64,
    pub hit_prob: f64,
    pub escape_prob: f64,
    pub reflected_time: f64,
    pub stationarity: f64,
}

impl OracleSuiteReport {
    pub fn worst(&self) -> f64 {
        self.hit_prob.max(self.escape_prob).max(self.reflected_time).max(self.stationarity)
    }
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

/// The same environment seen from the right: site `x` maps to `-x` and steps swap direction.
fn mirrored(env: &Environment) -> Environment {
    let omega: Vec<f64> = env.omegas().iter().rev().map(|&w| 1.0 - w).collect();
    Environment::from_omega(-env.x_max(), omega).expect("mirrored probabilities in (0, 1)")
}

/// Compares the closed forms with `chain_oracle` on random environments of length `8..=max_len`.
pub fn oracle_suite(family: &EnvFamily, n_env: u64, max_len: i64, seed: u64) -> Result<OracleSuiteReport, ExperimentError> {
    if n_env == 0 {
        return Err(ExperimentError::Empty);
    }
    let mut rep = OracleSuiteReport { n_env, ..Default::default() };
    for j in 0..n_env {
        let mut rng = stream(seed, "oracle", j);
        let len = rng.gen_range(8..=max_len.max(8));
        let pot = Potential::sample(family, 0, len - 1, derive_seed(seed, "oracle-env", j))?;
        let env = pot.env();
        let mirror = mirrored(env);
        let absorbing = |lo, hi| IntervalProblem { lo, hi, left: Boundary::Absorbing, right: Boundary::Absorbing };
        for _ in 0..5 {
            let r = rng.gen_range(0..len - 2);
            let s = rng.gen_range(r + 2..len);
            let x = rng.gen_range(r + 1..s);

            let sol = chain_oracle(env, &absorbing(r, s))?;
            rep.hit_prob = rep.hit_prob.max(rel_err(hit_prob(&pot, x, r, s), sol.absorb_left_at(x)));

            // escape from r: one step right, then reach s before r
            let right = chain_oracle(&mirror, &absorbing(-s, -r))?;
            let escape = pot.omega(r) * right.absorb_left_at(-(r + 1));
            rep.escape_prob = rep.escape_prob.max(rel_err(escape_prob(&pot, r, s), escape));

            let refl = IntervalProblem { lo: r, hi: s, left: Boundary::Reflecting, right: Boundary::Absorbing };
            let sol = chain_oracle(env, &refl)?;
            let mean = expected_hit_time_reflected(&pot, r, x, s).exact;
            rep.reflected_time = rep.reflected_time.max(rel_err(mean, sol.expected_time_at(x)));

            let pi = invariant_measure(&pot, r, s, x);
            rep.stationarity = rep.stationarity.max(stationary_residual(env, r, &pi.values));
            rep.checks += 4;
        }
    }
    Ok(rep)
}
