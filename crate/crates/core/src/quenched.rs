//! Closed-form quenched quantities in a fixed environment, and a linear-system oracle.
//!
//! Every ratio of exponential sums is evaluated as a difference of log-sums.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env_model::Environment;
use crate::numeric::LogSum;
use crate::potential::Potential;

/// Longest interval the oracle will solve.
pub const ORACLE_MAX_SITES: i64 = 1_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QuenchedError {
    #[error("interval [{lo}, {hi}] is empty or not inside the environment")]
    BadInterval { lo: i64, hi: i64 },
    #[error("interval of {len} sites exceeds the oracle limit of {ORACLE_MAX_SITES}")]
    TooLong { len: i64 },
    #[error("no absorbing end: absorption time is infinite")]
    NoAbsorbingEnd,
}

/// `log sum_{j=from}^{to} exp(sign * V(j))`; `-inf` for an empty range.
fn log_sum_v(pot: &Potential, from: i64, to: i64, sign: f64) -> f64 {
    let mut acc = LogSum::new();
    for j in from..=to {
        acc.add(sign * pot.v(j));
    }
    acc.value()
}

/// `P^x(tau(r) < tau(s))` for `r <= x <= s`.
pub fn hit_prob(pot: &Potential, x: i64, r: i64, s: i64) -> f64 {
    assert!(r < s && r <= x && x <= s, "hit_prob needs r <= x <= s, r < s");
    (log_sum_v(pot, x, s - 1, 1.0) - log_sum_v(pot, r, s - 1, 1.0)).exp()
}

/// `(P^x(tau(r) < tau(s)), P^x(tau(s) < tau(r)))`, each from its own numerator.
pub fn hit_prob_pair(pot: &Potential, x: i64, r: i64, s: i64) -> (f64, f64) {
    assert!(r < s && r <= x && x <= s, "hit_prob needs r <= x <= s, r < s");
    let total = log_sum_v(pot, r, s - 1, 1.0);
    (
        (log_sum_v(pot, x, s - 1, 1.0) - total).exp(),
        (log_sum_v(pot, r, x - 1, 1.0) - total).exp(),
    )
}

/// `1 - p = P^b(tau(d) < return to b)`, the success probability of one attempt to leave a valley.
pub fn escape_prob(pot: &Potential, b: i64, d: i64) -> f64 {
    assert!(b < d, "escape_prob needs b < d");
    (pot.omega(b).ln() + pot.v(b) - log_sum_v(pot, b, d - 1, 1.0)).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReflectedTime {
    /// `E^x(tau(y))` for the walk reflected at `r`.
    pub exact: f64,
    /// `2 * sum_{r <= u <= v <= y} exp(V(v) - V(u))`.
    pub bound: f64,
}

/// Mean first-passage time from `x` to `y` for the walk that always steps right at `r`.
pub fn expected_hit_time_reflected(pot: &Potential, r: i64, x: i64, y: i64) -> ReflectedTime {
    assert!(r <= x && x <= y, "needs reflect_at <= start <= target");
    if x == y {
        return ReflectedTime { exact: 0.0, bound: 0.0 };
    }
    // inner(n) = log sum_{m=r}^{n-1} exp(-V(m))
    let mut inner = LogSum::new();
    let mut pairs = LogSum::new();
    let mut bound = LogSum::new();
    for n in r..y {
        if n >= x {
            pairs.add(pot.v(n) + inner.value());
        }
        inner.add(-pot.v(n));
        bound.add(pot.v(n) + inner.value());
    }
    inner.add(-pot.v(y));
    bound.add(pot.v(y) + inner.value());
    let exact = (y - x) as f64 + 2.0 * pairs.value().exp();
    ReflectedTime { exact, bound: 2.0 * bound.value().exp() }
}

/// Reversible measure of the walk on `[a, c_bar]` reflected at both ends, with `pi(b) = 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvariantMeasure {
    pub a: i64,
    pub b: i64,
    pub c_bar: i64,
    /// `pi(k)` for `k` in `a..=c_bar`.
    pub values: Vec<f64>,
    /// `exp(-(V(k) - V(b))) + exp(-(V(k-1) - V(b)))` for interior `k`, `NaN` at the ends.
    pub bound: Vec<f64>,
    /// Alternative end values `exp(-(V(a+1) - V(b)))` and `exp(-(V(c_bar-1) - V(b)))`.
    pub reference_ends: (f64, f64),
}

impl InvariantMeasure {
    pub fn at(&self, k: i64) -> f64 {
        self.values[(k - self.a) as usize]
    }
}

pub fn invariant_measure(pot: &Potential, a: i64, c_bar: i64, b: i64) -> InvariantMeasure {
    assert!(a < b && b < c_bar, "invariant_measure needs a < b < c_bar");
    let vb = pot.v(b);
    let wb = pot.omega(b);
    let mut values = Vec::with_capacity((c_bar - a + 1) as usize);
    let mut bound = Vec::with_capacity(values.capacity());
    values.push(wb * (vb - pot.v(a)).exp());
    bound.push(f64::NAN);
    for k in a + 1..c_bar {
        // pi(k) = omega_b / omega_k * exp(-(V(k) - V(b)))
        let e_k = (vb - pot.v(k)).exp();
        let e_km1 = (vb - pot.v(k - 1)).exp();
        values.push(if k == b { 1.0 } else { wb * (e_k + e_km1) });
        bound.push(e_k + e_km1);
    }
    values.push(wb * (vb - pot.v(c_bar - 1)).exp());
    bound.push(f64::NAN);
    InvariantMeasure {
        a,
        b,
        c_bar,
        values,
        bound,
        reference_ends: ((vb - pot.v(a + 1)).exp(), (vb - pot.v(c_bar - 1)).exp()),
    }
}

/// `max_k |(pi P)(k) - pi(k)| / max_k pi(k)` for the chain on `[lo, lo + pi.len() - 1]`
/// reflected at both ends, built from the site probabilities alone.
pub fn stationary_residual(env: &Environment, lo: i64, pi: &[f64]) -> f64 {
    let n = pi.len();
    assert!(n >= 2);
    let right = |i: usize| -> f64 {
        if i == 0 {
            1.0
        } else if i == n - 1 {
            0.0
        } else {
            env.omega(lo + i as i64)
        }
    };
    let mut pushed = vec![0.0; n];
    for i in 0..n {
        let r = right(i);
        if i + 1 < n {
            pushed[i + 1] += pi[i] * r;
        }
        if i > 0 {
            pushed[i - 1] += pi[i] * (1.0 - r);
        }
    }
    let scale = pi.iter().cloned().fold(0.0, f64::max);
    pushed
        .iter()
        .zip(pi)
        .map(|(p, q)| (p - q).abs())
        .fold(0.0, f64::max)
        / scale
}

/// The walk conditioned to reach `d` before returning to `b`, as a walk in a modified potential.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HProcess {
    pub b: i64,
    pub d: i64,
    /// Modified potential on `[b + 1, d]`, anchored at zero on `b + 1`.
    pub vbar: Vec<f64>,
    /// Right-step probabilities on `[b + 1, d - 1]`.
    pub right_prob: Vec<f64>,
}

impl HProcess {
    pub fn vbar_at(&self, x: i64) -> f64 {
        self.vbar[(x - self.b - 1) as usize]
    }

    pub fn right_prob_at(&self, x: i64) -> f64 {
        self.right_prob[(x - self.b - 1) as usize]
    }
}

/// With `S(x) = sum_{j=b}^x exp(V(j))`: `Vbar(x) = V(x) - log S(x-1) - log S(x)` and
/// the conditioned right-step probability `omega_x S(x) / S(x-1)`.
pub fn hproc_potential(pot: &Potential, b: i64, d: i64) -> HProcess {
    assert!(b < d, "hproc_potential needs b < d");
    let mut s = LogSum::new();
    let mut log_s = Vec::with_capacity((d - b + 1) as usize);
    for x in b..=d {
        s.add(pot.v(x));
        log_s.push(s.value());
    }
    let ls = |x: i64| log_s[(x - b) as usize];
    let raw: Vec<f64> = (b + 1..=d).map(|x| pot.v(x) - ls(x - 1) - ls(x)).collect();
    let anchor = raw[0];
    HProcess {
        b,
        d,
        vbar: raw.iter().map(|v| v - anchor).collect(),
        right_prob: (b + 1..d)
            .map(|x| (pot.omega(x).ln() + ls(x) - ls(x - 1)).exp().min(1.0))
            .collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Boundary {
    Absorbing,
    /// The walk at this end moves inward with probability one.
    Reflecting,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntervalProblem {
    pub lo: i64,
    pub hi: i64,
    pub left: Boundary,
    pub right: Boundary,
}

/// Per-start-site solution of an interval problem.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleSolution {
    pub lo: i64,
    /// Probability of being absorbed at `lo` (zero when `lo` reflects).
    pub absorb_left: Vec<f64>,
    /// Mean time until absorption at either absorbing end.
    pub expected_time: Vec<f64>,
}

impl OracleSolution {
    pub fn absorb_left_at(&self, x: i64) -> f64 {
        self.absorb_left[(x - self.lo) as usize]
    }

    pub fn expected_time_at(&self, x: i64) -> f64 {
        self.expected_time[(x - self.lo) as usize]
    }
}

/// Solves `u(x) = omega_x u(x+1) + (1 - omega_x) u(x-1) + f` by forward elimination.
///
/// The elimination writes `u(x) = gamma_x u(x+1) + beta_x` and carries
/// `delta_x = 1 - gamma_x` through its own positive recursion, so no step
/// subtracts nearly equal numbers.
pub fn chain_oracle(env: &Environment, problem: &IntervalProblem) -> Result<OracleSolution, QuenchedError> {
    let IntervalProblem { lo, hi, left, right } = *problem;
    if lo >= hi || !env.contains(lo) || !env.contains(hi) {
        return Err(QuenchedError::BadInterval { lo, hi });
    }
    if hi - lo + 1 > ORACLE_MAX_SITES {
        return Err(QuenchedError::TooLong { len: hi - lo + 1 });
    }
    if left == Boundary::Reflecting && right == Boundary::Reflecting {
        return Err(QuenchedError::NoAbsorbingEnd);
    }
    let absorb_left = solve(env, lo, hi, left, right, 0.0, if left == Boundary::Absorbing { 1.0 } else { 0.0 });
    let expected_time = solve(env, lo, hi, left, right, 1.0, 0.0);
    Ok(OracleSolution { lo, absorb_left, expected_time })
}

/// `source` is added at every non-absorbing site; `left_value` is `u(lo)` when `lo` absorbs.
fn solve(env: &Environment, lo: i64, hi: i64, left: Boundary, right: Boundary, source: f64, left_value: f64) -> Vec<f64> {
    let n = (hi - lo + 1) as usize;
    let mut delta = vec![0.0; n];
    let mut beta = vec![0.0; n];
    match left {
        Boundary::Absorbing => {
            delta[0] = 1.0;
            beta[0] = left_value;
        }
        Boundary::Reflecting => {
            delta[0] = 0.0;
            beta[0] = source;
        }
    }
    for i in 1..n - 1 {
        let w = env.omega(lo + i as i64);
        let q = 1.0 - w;
        let denom = w + q * delta[i - 1];
        delta[i] = q * delta[i - 1] / denom;
        beta[i] = (source + q * beta[i - 1]) / denom;
    }
    let mut u = vec![0.0; n];
    u[n - 1] = match right {
        Boundary::Absorbing => 0.0,
        // u(hi) = source + u(hi - 1) = source + (1 - delta) u(hi) + beta
        Boundary::Reflecting => (source + beta[n - 2]) / delta[n - 2],
    };
    for i in (0..n - 1).rev() {
        u[i] = (1.0 - delta[i]) * u[i + 1] + beta[i];
    }
    u
}
