//! Environment laws, the tail exponent kappa, and reproducible site sampling.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Beta as BetaDist, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::beta::ln_beta;
use statrs::function::gamma::digamma;
use thiserror::Error;

use crate::numeric::{integrate, log_sum_exp};
use crate::seeding::{site_block_stream, SITE_BLOCK};

/// Upper end of the bracket searched for the root of `E[rho^s] = 1`.
pub const S_MAX: f64 = 50.0;
/// Tolerance of the rational-span check used for lattice detection.
pub const LATTICE_TOL: f64 = 1e-9;
const LATTICE_MAX_DENOM: i64 = 1_000;
const PROB_SUM_TOL: f64 = 1e-12;
const KAPPA_TOL: f64 = 1e-12;
// roots this close to 0 or 1 are treated as the boundary value
const KAPPA_EDGE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("E[log rho] = {mean_log_rho} is not negative; the walk is not transient to the right")]
    NotTransient { mean_log_rho: f64 },
    #[error("E[rho^s] = 1 has no root in (0, {s_max})")]
    NoRoot { s_max: f64 },
    #[error("moment diverges: {0}")]
    DivergentMoment(String),
    #[error("kappa = {kappa} is outside (0, 1)")]
    KappaOutOfRange { kappa: f64 },
    #[error("omega at site {site} is {omega}, outside (0, 1]")]
    OmegaOutOfRange { site: i64, omega: f64 },
    #[error("range [{lo}, {hi}] is empty or does not contain 0")]
    BadRange { lo: i64, hi: i64 },
    #[error("environment has no seed lineage and cannot be extended")]
    NoLineage,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub rho: f64,
    pub p: f64,
}

/// Law of a single site. Serialized as `{"family": ..., "params": {...}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", content = "params", rename_all = "lowercase")]
pub enum EnvFamily {
    /// `log rho ~ Normal(mu, sigma^2)`.
    #[serde(rename = "lognormal")]
    LogNormal { mu: f64, sigma: f64 },
    /// `omega ~ Beta(alpha, beta)`.
    Beta { alpha: f64, beta: f64 },
    /// Finite list of `(rho, p)` atoms.
    Discrete { atoms: Vec<Atom> },
}

impl EnvFamily {
    fn check_params(&self) -> Result<(), EnvError> {
        let bad = |m: String| Err(EnvError::InvalidParameter(m));
        match self {
            EnvFamily::LogNormal { mu, sigma } => {
                if !mu.is_finite() || !sigma.is_finite() || *sigma <= 0.0 {
                    return bad(format!("lognormal needs finite mu and sigma > 0, got ({mu}, {sigma})"));
                }
            }
            EnvFamily::Beta { alpha, beta } => {
                if !(alpha.is_finite() && beta.is_finite() && *alpha > 0.0 && *beta > 0.0) {
                    return bad(format!("beta needs alpha, beta > 0, got ({alpha}, {beta})"));
                }
            }
            EnvFamily::Discrete { atoms } => {
                if atoms.is_empty() {
                    return bad("discrete law has no atoms".into());
                }
                for a in atoms {
                    if !(a.rho.is_finite() && a.rho > 0.0 && a.p.is_finite() && a.p > 0.0) {
                        return bad(format!("atom ({}, {}) needs rho > 0 and p > 0", a.rho, a.p));
                    }
                }
                let total: f64 = atoms.iter().map(|a| a.p).sum();
                if (total - 1.0).abs() > PROB_SUM_TOL {
                    return bad(format!("atom probabilities sum to {total}"));
                }
            }
        }
        Ok(())
    }

    /// `E[log rho]`.
    pub fn mean_log_rho(&self) -> f64 {
        match self {
            EnvFamily::LogNormal { mu, .. } => *mu,
            // log rho = log(1 - omega) - log(omega)
            EnvFamily::Beta { alpha, beta } => digamma(*beta) - digamma(*alpha),
            EnvFamily::Discrete { atoms } => atoms.iter().map(|a| a.p * a.rho.ln()).sum(),
        }
    }

    /// `log E[rho^s]`; `+inf` where the moment diverges.
    pub fn log_moment(&self, s: f64) -> f64 {
        match self {
            EnvFamily::LogNormal { mu, sigma } => s * mu + 0.5 * s * s * sigma * sigma,
            EnvFamily::Beta { alpha, beta } => {
                if s >= *alpha || -s >= *beta {
                    f64::INFINITY
                } else {
                    ln_beta(alpha - s, beta + s) - ln_beta(*alpha, *beta)
                }
            }
            EnvFamily::Discrete { atoms } => log_sum_exp(atoms.iter().map(|a| a.p.ln() + s * a.rho.ln())),
        }
    }

    pub fn moment(&self, s: f64) -> f64 {
        self.log_moment(s).exp()
    }

    /// Largest `s` for which the moment map is finite, capped at [`S_MAX`].
    fn moment_ceiling(&self) -> f64 {
        match self {
            EnvFamily::Beta { alpha, .. } => alpha.min(S_MAX),
            _ => S_MAX,
        }
    }

    /// Draws `log rho` for one site.
    pub fn sample_log_rho<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            EnvFamily::LogNormal { mu, sigma } => {
                let z: f64 = StandardNormal.sample(rng);
                mu + sigma * z
            }
            EnvFamily::Beta { alpha, beta } => {
                let dist = BetaDist::new(*alpha, *beta).expect("validated beta parameters");
                loop {
                    let w: f64 = dist.sample(rng);
                    if w > 0.0 && w < 1.0 {
                        return (-w).ln_1p() - w.ln();
                    }
                }
            }
            EnvFamily::Discrete { atoms } => {
                let u: f64 = rng.gen();
                let mut acc = 0.0;
                for a in atoms {
                    acc += a.p;
                    if u < acc {
                        return a.rho.ln();
                    }
                }
                atoms[atoms.len() - 1].rho.ln()
            }
        }
    }
}

/// A validated environment law with its solved exponent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub family: EnvFamily,
    pub kappa: f64,
    pub non_lattice: bool,
    pub moment_ok: bool,
    pub mean_log_rho: f64,
    pub warnings: Vec<String>,
}

/// Solves `E[rho^s] = 1` for `s > 0`.
///
/// Log-normal laws use the closed form `-2 mu / sigma^2`; the other families
/// bracket the crossing of the convex moment map on a grid and bisect.
pub fn solve_kappa(family: &EnvFamily, tol: f64) -> Result<f64, EnvError> {
    family.check_params()?;
    let m = family.mean_log_rho();
    if !m.is_finite() {
        return Err(EnvError::DivergentMoment(format!("E[log rho] = {m}")));
    }
    if m >= 0.0 {
        return Err(EnvError::NotTransient { mean_log_rho: m });
    }
    if let EnvFamily::LogNormal { mu, sigma } = family {
        let s = -2.0 * mu / (sigma * sigma);
        return if s < S_MAX { Ok(s) } else { Err(EnvError::NoRoot { s_max: S_MAX }) };
    }

    let ceiling = family.moment_ceiling();
    const GRID: usize = 4000;
    let mut lo = 0.0;
    let mut hi = None;
    for k in 1..=GRID {
        // stay strictly below the ceiling where the beta moment blows up
        let s = ceiling * (k as f64 / GRID as f64) * (1.0 - 1e-12);
        let lm = family.log_moment(s);
        if lm.is_nan() {
            return Err(EnvError::DivergentMoment(format!("log E[rho^{s}] is NaN")));
        }
        if lm >= 0.0 {
            hi = Some(s);
            break;
        }
        lo = s;
    }
    let mut hi = hi.ok_or(EnvError::NoRoot { s_max: ceiling })?;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if family.log_moment(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= f64::EPSILON * hi {
            break;
        }
    }
    let root = 0.5 * (lo + hi);
    if (family.moment(root) - 1.0).abs() > tol.max(1e-13) {
        return Err(EnvError::NoRoot { s_max: ceiling });
    }
    Ok(root)
}

/// Checks parameters, solves kappa and sets the assumption flags.
///
/// A lattice discrete law is accepted with `non_lattice = false` and a warning.
pub fn validate_spec(family: EnvFamily) -> Result<EnvSpec, EnvError> {
    family.check_params()?;
    let kappa = solve_kappa(&family, KAPPA_TOL)?;
    if !(kappa > KAPPA_EDGE && kappa < 1.0 - KAPPA_EDGE) {
        return Err(EnvError::KappaOutOfRange { kappa });
    }
    let non_lattice = match &family {
        EnvFamily::Discrete { atoms } => !is_lattice(&atoms.iter().map(|a| a.rho.ln()).collect::<Vec<_>>()),
        _ => true,
    };
    let moment = kappa_log_plus_moment(&family, kappa);
    let moment_ok = moment.is_finite();
    let mut warnings = Vec::new();
    if !non_lattice {
        warnings.push("lattice law: usable for unit tests, refused by experiments".to_string());
    }
    if !moment_ok {
        warnings.push(format!("E[rho^kappa log+ rho] = {moment}"));
    }
    Ok(EnvSpec {
        mean_log_rho: family.mean_log_rho(),
        family,
        kappa,
        non_lattice,
        moment_ok,
        warnings,
    })
}

/// `E[rho^kappa log+ rho]` by quadrature or summation.
pub fn kappa_log_plus_moment(family: &EnvFamily, kappa: f64) -> f64 {
    match family {
        EnvFamily::LogNormal { mu, sigma } => {
            // integrate over z = (log rho - mu)/sigma restricted to log rho > 0
            let z0 = -mu / sigma;
            let f = |z: f64| {
                let l = mu + sigma * z;
                (kappa * l).exp() * l * (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
            };
            integrate(f, z0, z0 + 40.0, 1e-12)
        }
        EnvFamily::Beta { alpha, beta } => {
            // rho > 1 iff omega < 1/2; substitute omega = u^(1/alpha') to tame the endpoint
            let a = *alpha;
            let b = *beta;
            let lnb = ln_beta(a, b);
            let expo = a - kappa;
            if expo <= 0.0 {
                return f64::INFINITY;
            }
            // omega = v^(1/expo): omega^(a - kappa - 1) d omega = dv / expo
            let upper = 0.5f64.powf(expo);
            let f = move |v: f64| {
                if v <= 0.0 {
                    return 0.0;
                }
                let w = v.powf(1.0 / expo);
                let l = (-w).ln_1p() - w.ln();
                (1.0 - w).powf(kappa + b - 1.0) * l / expo
            };
            integrate(f, 0.0, upper, 1e-12) / lnb.exp()
        }
        EnvFamily::Discrete { atoms } => atoms
            .iter()
            .filter(|a| a.rho > 1.0)
            .map(|a| a.p * a.rho.powf(kappa) * a.rho.ln())
            .sum(),
    }
}

/// True when all log-atoms lie on a common arithmetic progression.
pub fn is_lattice(log_atoms: &[f64]) -> bool {
    let base = log_atoms[0];
    let diffs: Vec<f64> = log_atoms
        .iter()
        .map(|l| l - base)
        .filter(|d| d.abs() > LATTICE_TOL)
        .collect();
    let Some(&first) = diffs.first() else {
        return true;
    };
    diffs.iter().all(|d| rational_approx(d / first).is_some())
}

/// Continued-fraction search for `p/q` within [`LATTICE_TOL`] of `r`.
fn rational_approx(r: f64) -> Option<(i64, i64)> {
    let (mut p0, mut q0, mut p1, mut q1) = (0i64, 1i64, 1i64, 0i64);
    let mut x = r;
    for _ in 0..64 {
        let a = x.floor();
        if a.abs() > 1e12 {
            return None;
        }
        let a = a as i64;
        let p2 = a.checked_mul(p1)?.checked_add(p0)?;
        let q2 = a.checked_mul(q1)?.checked_add(q0)?;
        if q2 > LATTICE_MAX_DENOM {
            return None;
        }
        if (r - p2 as f64 / q2 as f64).abs() <= LATTICE_TOL * r.abs().max(1.0) {
            return Some((p2, q2));
        }
        let frac = x - a as f64;
        if frac.abs() < 1e-15 {
            return None;
        }
        x = 1.0 / frac;
        (p0, q0, p1, q1) = (p1, q1, p2, q2);
    }
    None
}

/// Master seed and extension count behind a sampled environment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedLineage {
    pub master_seed: u64,
    pub family: EnvFamily,
    pub extensions: u32,
}

/// A window `[x_min, x_max]` of site probabilities `omega_x` with `log rho_x`.
#[derive(Debug, Clone, PartialEq)]
pub struct Environment {
    x_min: i64,
    omega: Vec<f64>,
    log_rho: Vec<f64>,
    lineage: Option<SeedLineage>,
}

impl Environment {
    /// Samples sites `lo..=hi`. Site values depend only on `(family, master_seed, x)`,
    /// never on the requested range.
    pub fn sample(family: &EnvFamily, lo: i64, hi: i64, master_seed: u64) -> Result<Self, EnvError> {
        family.check_params()?;
        if lo > hi {
            return Err(EnvError::BadRange { lo, hi });
        }
        let log_rho = sample_sites(family, master_seed, lo, hi);
        Ok(Environment {
            x_min: lo,
            omega: log_rho.iter().map(|&l| omega_from_log_rho(l)).collect(),
            log_rho,
            lineage: Some(SeedLineage {
                master_seed,
                family: family.clone(),
                extensions: 0,
            }),
        })
    }

    /// Hand-built environment. `omega = 1` is allowed (a site that always steps right).
    pub fn from_omega(x_min: i64, omega: Vec<f64>) -> Result<Self, EnvError> {
        let mut log_rho = Vec::with_capacity(omega.len());
        for (i, &w) in omega.iter().enumerate() {
            if !(w > 0.0 && w <= 1.0) {
                return Err(EnvError::OmegaOutOfRange { site: x_min + i as i64, omega: w });
            }
            log_rho.push((1.0 - w).ln() - w.ln());
        }
        Ok(Environment { x_min, omega, log_rho, lineage: None })
    }

    /// Hand-built environment from potential increments `log rho_x`.
    pub fn from_log_rho(x_min: i64, log_rho: Vec<f64>) -> Self {
        Environment {
            x_min,
            omega: log_rho.iter().map(|&l| omega_from_log_rho(l)).collect(),
            log_rho,
            lineage: None,
        }
    }

    pub fn x_min(&self) -> i64 {
        self.x_min
    }

    pub fn x_max(&self) -> i64 {
        self.x_min + self.omega.len() as i64 - 1
    }

    pub fn contains(&self, x: i64) -> bool {
        x >= self.x_min && x <= self.x_max()
    }

    pub fn omega(&self, x: i64) -> f64 {
        self.omega[(x - self.x_min) as usize]
    }

    pub fn log_rho(&self, x: i64) -> f64 {
        self.log_rho[(x - self.x_min) as usize]
    }

    pub fn rho(&self, x: i64) -> f64 {
        self.log_rho(x).exp()
    }

    pub fn omegas(&self) -> &[f64] {
        &self.omega
    }

    pub fn lineage(&self) -> Option<&SeedLineage> {
        self.lineage.as_ref()
    }

    /// A copy covering at least `lo..=hi`. Existing sites are kept verbatim.
    pub fn extended(&self, lo: i64, hi: i64) -> Result<Self, EnvError> {
        if lo >= self.x_min && hi <= self.x_max() {
            return Ok(self.clone());
        }
        let lineage = self.lineage.as_ref().ok_or(EnvError::NoLineage)?;
        let new_lo = lo.min(self.x_min);
        let new_hi = hi.max(self.x_max());
        let mut log_rho = Vec::with_capacity((new_hi - new_lo + 1) as usize);
        if new_lo < self.x_min {
            log_rho.extend(sample_sites(&lineage.family, lineage.master_seed, new_lo, self.x_min - 1));
        }
        log_rho.extend_from_slice(&self.log_rho);
        if new_hi > self.x_max() {
            log_rho.extend(sample_sites(&lineage.family, lineage.master_seed, self.x_max() + 1, new_hi));
        }
        let mut omega = Vec::with_capacity(log_rho.len());
        omega.extend(log_rho[..(self.x_min - new_lo) as usize].iter().map(|&l| omega_from_log_rho(l)));
        omega.extend_from_slice(&self.omega);
        omega.extend(
            log_rho[(self.x_max() - new_lo + 1) as usize..]
                .iter()
                .map(|&l| omega_from_log_rho(l)),
        );
        Ok(Environment {
            x_min: new_lo,
            omega,
            log_rho,
            lineage: Some(SeedLineage {
                extensions: lineage.extensions + 1,
                ..lineage.clone()
            }),
        })
    }
}

fn sample_sites(family: &EnvFamily, master_seed: u64, lo: i64, hi: i64) -> Vec<f64> {
    let mut out = Vec::with_capacity((hi - lo + 1) as usize);
    for block in lo.div_euclid(SITE_BLOCK)..=hi.div_euclid(SITE_BLOCK) {
        let mut rng = site_block_stream(master_seed, block);
        let start = block * SITE_BLOCK;
        for x in start..start + SITE_BLOCK {
            let l = family.sample_log_rho(&mut rng);
            if x >= lo && x <= hi {
                out.push(l);
            }
        }
    }
    out
}

/// `omega = 1 / (1 + rho)`.
pub fn omega_from_log_rho(l: f64) -> f64 {
    if l > 0.0 {
        let r = (-l).exp();
        r / (1.0 + r)
    } else {
        1.0 / (1.0 + l.exp())
    }
}
