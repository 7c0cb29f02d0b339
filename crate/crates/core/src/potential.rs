//! The potential of an environment and its valley anatomy.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env_model::{EnvError, EnvFamily, EnvSpec, Environment};
use crate::numeric::LogSum;
use crate::seeding::derive_seed;

/// Default cap on the number of sites a potential may grow to.
pub const DEFAULT_SITE_BUDGET: usize = 20_000_000;
const MIN_GROWTH: i64 = 4096;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PotentialError {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("site {x} is outside the fixed range [{lo}, {hi}]")]
    OutOfRange { x: i64, lo: i64, hi: i64 },
    #[error("growing the potential to {requested} sites exceeds the budget of {budget}")]
    Budget { requested: usize, budget: usize },
    #[error("{what} not found within {limit} sites of {from}")]
    Exhausted { what: &'static str, from: i64, limit: i64 },
    #[error("horizon t = {t} is below 3")]
    BadHorizon { t: f64 },
}

/// Probability `omega` as a threshold on a uniform `u64`: step right iff `u <= threshold`.
pub fn step_threshold(omega: f64) -> u64 {
    let scaled = omega * 18_446_744_073_709_551_616.0;
    if scaled >= 18_446_744_073_709_551_615.0 {
        u64::MAX
    } else {
        (scaled.round() as u64).saturating_sub(1)
    }
}

/// `V(0) = 0`, `V(x) - V(x - 1) = log rho_x`, over a growable window of sites.
#[derive(Debug, Clone)]
pub struct Potential {
    env: Environment,
    v: Vec<f64>,
    thresholds: Vec<u64>,
    budget: usize,
}

impl Potential {
    pub fn new(env: Environment) -> Result<Self, PotentialError> {
        if !env.contains(0) {
            return Err(EnvError::BadRange { lo: env.x_min(), hi: env.x_max() }.into());
        }
        let mut pot = Potential {
            env,
            v: Vec::new(),
            thresholds: Vec::new(),
            budget: DEFAULT_SITE_BUDGET,
        };
        pot.rebuild();
        Ok(pot)
    }

    /// Samples `[lo, hi]` and builds the potential over it.
    pub fn sample(family: &EnvFamily, lo: i64, hi: i64, seed: u64) -> Result<Self, PotentialError> {
        Self::new(Environment::sample(family, lo, hi, seed)?)
    }

    pub fn with_budget(mut self, budget: usize) -> Self {
        self.budget = budget;
        self
    }

    fn rebuild(&mut self) {
        let lo = self.env.x_min();
        let n = self.env.omegas().len();
        let zero = (-lo) as usize;
        let mut v = vec![0.0; n];
        for i in zero + 1..n {
            v[i] = v[i - 1] + self.env.log_rho(lo + i as i64);
        }
        for i in (0..zero).rev() {
            v[i] = v[i + 1] - self.env.log_rho(lo + i as i64 + 1);
        }
        self.v = v;
        self.thresholds = self.env.omegas().iter().map(|&w| step_threshold(w)).collect();
    }

    pub fn env(&self) -> &Environment {
        &self.env
    }

    pub fn lo(&self) -> i64 {
        self.env.x_min()
    }

    pub fn hi(&self) -> i64 {
        self.env.x_max()
    }

    pub fn len(&self) -> usize {
        self.v.len()
    }

    pub fn is_empty(&self) -> bool {
        self.v.is_empty()
    }

    pub fn covers(&self, lo: i64, hi: i64) -> bool {
        lo >= self.lo() && hi <= self.hi()
    }

    #[inline]
    pub fn v(&self, x: i64) -> f64 {
        self.v[(x - self.lo()) as usize]
    }

    pub fn omega(&self, x: i64) -> f64 {
        self.env.omega(x)
    }

    /// Step thresholds for sites `lo()..=hi()`, see [`step_threshold`].
    pub fn thresholds(&self) -> &[u64] {
        &self.thresholds
    }

    /// Grows the window geometrically until it covers `[lo, hi]`.
    pub fn ensure(&mut self, lo: i64, hi: i64) -> Result<(), PotentialError> {
        if self.covers(lo, hi) {
            return Ok(());
        }
        if self.env.lineage().is_none() {
            let x = if lo < self.lo() { lo } else { hi };
            return Err(PotentialError::OutOfRange { x, lo: self.lo(), hi: self.hi() });
        }
        let len = self.len() as i64;
        let new_lo = if lo < self.lo() {
            lo.min(self.lo() - (len / 2).max(MIN_GROWTH))
        } else {
            self.lo()
        };
        let new_hi = if hi > self.hi() {
            hi.max(self.hi() + len.max(MIN_GROWTH))
        } else {
            self.hi()
        };
        let requested = (new_hi - new_lo + 1) as usize;
        if requested > self.budget {
            return Err(PotentialError::Budget { requested, budget: self.budget });
        }
        self.env = self.env.extended(new_lo, new_hi)?;
        self.rebuild();
        Ok(())
    }

    fn ensure_site(&mut self, x: i64) -> Result<(), PotentialError> {
        if x < self.lo() {
            self.ensure(x, self.hi())
        } else if x > self.hi() {
            self.ensure(self.lo(), x)
        } else {
            Ok(())
        }
    }
}

/// The levels that define deep valleys at time horizon `t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Horizon {
    pub t: f64,
    pub kappa: f64,
    /// Critical height `log t - log log t`.
    pub h_t: f64,
    /// Buffer depth `(1 + kappa) log t`.
    pub d_t: f64,
    /// Number of excursions surveyed, `floor(t^kappa log log t)`.
    pub n_t: u64,
    /// How far the buffer searches for `a`, `d` and `gamma*` may run.
    pub scan_limit: i64,
}

impl Horizon {
    pub fn new(t: f64, kappa: f64) -> Result<Self, PotentialError> {
        if !(t >= 3.0) || !t.is_finite() {
            return Err(PotentialError::BadHorizon { t });
        }
        let lt = t.ln();
        let c2 = DiagnosticsConfig::default_c_double(kappa);
        Ok(Horizon {
            t,
            kappa,
            h_t: lt - lt.ln(),
            d_t: (1.0 + kappa) * lt,
            n_t: (t.powf(kappa) * lt.ln()).floor() as u64,
            scan_limit: (10.0 * c2 * lt).ceil() as i64,
        })
    }

    pub fn log_t(&self) -> f64 {
        self.t.ln()
    }
}

/// One ladder excursion `[start, end]` with its height and first highest site.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Excursion {
    pub index: u64,
    pub start: i64,
    pub end: i64,
    pub height: f64,
    pub peak: i64,
}

/// Scans the excursion starting at ladder epoch `start`: the next weak descent below `V(start)`.
pub fn scan_excursion(pot: &mut Potential, index: u64, start: i64, max_len: i64) -> Result<Excursion, PotentialError> {
    let base = pot.v(start);
    let mut peak = start;
    let mut top = base;
    let mut k = start;
    loop {
        k += 1;
        if k - start > max_len {
            return Err(PotentialError::Exhausted { what: "ladder epoch", from: start, limit: max_len });
        }
        pot.ensure_site(k)?;
        let vk = pot.v(k);
        if vk > top {
            top = vk;
            peak = k;
        }
        if vk <= base {
            return Ok(Excursion { index, start, end: k, height: top - base, peak });
        }
    }
}

/// `e_0 = 0, e_1, ..., e_count`; an excursion longer than `max_len` is reported as exhaustion.
pub fn ladder_epochs(pot: &mut Potential, count: usize, max_len: i64) -> Result<Vec<i64>, PotentialError> {
    let mut out = Vec::with_capacity(count + 1);
    out.push(0);
    let mut e = 0;
    for i in 0..count {
        e = scan_excursion(pot, i as u64, e, max_len)?.end;
        out.push(e);
    }
    Ok(out)
}

/// Heights `H_0, ..., H_{n-1}` of the first `n` excursions.
pub fn excursion_heights(pot: &mut Potential, n: usize) -> Result<Vec<f64>, PotentialError> {
    let mut out = Vec::with_capacity(n);
    let mut e = 0;
    for i in 0..n {
        let exc = scan_excursion(pot, i as u64, e, i64::MAX)?;
        out.push(exc.height);
        e = exc.end;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeepValley {
    /// 1-based valley number `j`.
    pub index: usize,
    /// Index `sigma(j)` of the excursion the valley is built on.
    pub excursion: u64,
    pub a: i64,
    pub b: i64,
    pub t_up: i64,
    pub c: i64,
    pub c_bar: i64,
    pub d_bar: i64,
    pub d: i64,
    pub height: f64,
    pub log_weight: f64,
}

impl DeepValley {
    pub fn weight(&self) -> f64 {
        self.log_weight.exp()
    }
}

fn search_left(pot: &mut Potential, from: i64, limit: i64, what: &'static str, hit: impl Fn(f64) -> bool) -> Result<i64, PotentialError> {
    let mut k = from;
    loop {
        pot.ensure_site(k)?;
        if hit(pot.v(k)) {
            return Ok(k);
        }
        if from - k >= limit {
            return Err(PotentialError::Exhausted { what, from, limit });
        }
        k -= 1;
    }
}

fn search_right(pot: &mut Potential, from: i64, limit: i64, what: &'static str, hit: impl Fn(f64) -> bool) -> Result<i64, PotentialError> {
    let mut k = from;
    loop {
        pot.ensure_site(k)?;
        if hit(pot.v(k)) {
            return Ok(k);
        }
        if k - from >= limit {
            return Err(PotentialError::Exhausted { what, from, limit });
        }
        k += 1;
    }
}

/// Dresses an excursion of height at least `h_t` with its buffer sites.
pub fn build_valley(pot: &mut Potential, hz: &Horizon, exc: &Excursion, index: usize) -> Result<DeepValley, PotentialError> {
    let b = exc.start;
    let vb = pot.v(b);
    let d_bar = exc.end;
    let c = exc.peak;
    let vc = pot.v(c);
    let t_up = search_right(pot, b, exc.end - b, "T_up", |v| v - vb >= hz.h_t)?;
    let c_bar = search_right(pot, c, d_bar - c, "c_bar", |v| v <= vc - hz.h_t / 3.0)?;
    let a = search_left(pot, b, hz.scan_limit, "a", |v| v - vb >= hz.d_t)?;
    let vdb = pot.v(d_bar);
    let d = search_right(pot, d_bar, hz.scan_limit, "d", |v| v - vdb <= -hz.d_t)?;
    Ok(DeepValley {
        index,
        excursion: exc.index,
        a,
        b,
        t_up,
        c,
        c_bar,
        d_bar,
        d,
        height: exc.height,
        log_weight: log_valley_weight(pot, a, b, d),
    })
}

/// Walks the ladder excursions in order, emitting deep valleys as they are found.
#[derive(Debug, Clone)]
pub struct ValleyScanner {
    horizon: Horizon,
    ladder: i64,
    excursion: u64,
    found: usize,
}

impl ValleyScanner {
    pub fn new(horizon: Horizon) -> Self {
        ValleyScanner { horizon, ladder: 0, excursion: 0, found: 0 }
    }

    pub fn horizon(&self) -> &Horizon {
        &self.horizon
    }

    /// Start `e_i` of the next excursion to scan. Every valley with `b` below it has been emitted.
    pub fn ladder_position(&self) -> i64 {
        self.ladder
    }

    pub fn excursions_scanned(&self) -> u64 {
        self.excursion
    }

    /// Scans one excursion.
    pub fn step(&mut self, pot: &mut Potential) -> Result<Option<DeepValley>, PotentialError> {
        let exc = scan_excursion(pot, self.excursion, self.ladder, i64::MAX)?;
        self.ladder = exc.end;
        self.excursion += 1;
        if exc.height >= self.horizon.h_t {
            self.found += 1;
            Ok(Some(build_valley(pot, &self.horizon, &exc, self.found)?))
        } else {
            Ok(None)
        }
    }

    pub fn next_valley(&mut self, pot: &mut Potential) -> Result<DeepValley, PotentialError> {
        loop {
            if let Some(v) = self.step(pot)? {
                return Ok(v);
            }
        }
    }
}

/// The deep valleys of the first `n_t` excursions plus the following one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Survey {
    pub horizon: Horizon,
    /// Valleys `1..=K_t`.
    pub valleys: Vec<DeepValley>,
    /// Valley `K_t + 1`, when requested.
    pub next: Option<DeepValley>,
    /// Ladder epoch `e_{n_t}`.
    pub e_nt: i64,
}

impl Survey {
    pub fn k_t(&self) -> usize {
        self.valleys.len()
    }
}

pub fn survey(pot: &mut Potential, hz: &Horizon, with_next: bool) -> Result<Survey, PotentialError> {
    let mut scanner = ValleyScanner::new(*hz);
    let mut valleys = Vec::new();
    let mut e_nt = 0;
    while scanner.excursions_scanned() <= hz.n_t {
        if scanner.excursions_scanned() == hz.n_t {
            e_nt = scanner.ladder_position();
        }
        if let Some(v) = scanner.step(pot)? {
            valleys.push(v);
        }
    }
    let next = if with_next { Some(scanner.next_valley(pot)?) } else { None };
    Ok(Survey { horizon: *hz, valleys, next, e_nt })
}

/// Valleys `1..=K_t`.
pub fn deep_valleys(pot: &mut Potential, hz: &Horizon) -> Result<Vec<DeepValley>, PotentialError> {
    Ok(survey(pot, hz, false)?.valleys)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StarValley {
    pub index: usize,
    /// Site the construction was shifted to (`0`, then the previous `d*`).
    pub origin: i64,
    pub gamma: i64,
    pub a: i64,
    pub b: i64,
    pub t_up: i64,
    pub c: i64,
    pub d_bar: i64,
    pub d: i64,
}

impl StarValley {
    pub fn sites(&self) -> (i64, i64, i64, i64) {
        (self.a, self.b, self.c, self.d)
    }
}

/// Builds one star valley from `origin`; `None` when `T*` lies beyond `stop`.
pub fn star_valley_from(
    pot: &mut Potential,
    hz: &Horizon,
    origin: i64,
    index: usize,
    stop: i64,
) -> Result<Option<StarValley>, PotentialError> {
    let vo = pot.v(origin);
    let gamma = search_right(pot, origin, hz.scan_limit, "gamma*", |v| v - vo <= -hz.d_t)?;
    if gamma > stop {
        return Ok(None);
    }
    // first k >= gamma where the rise above the running minimum on [gamma, k] reaches h_t
    let mut run_min = pot.v(gamma);
    let mut k = gamma;
    let t_up = loop {
        pot.ensure_site(k)?;
        let vk = pot.v(k);
        run_min = run_min.min(vk);
        if vk - run_min >= hz.h_t {
            break k;
        }
        if k >= stop {
            return Ok(None);
        }
        k += 1;
    };
    let mut b = origin;
    for x in origin..=t_up {
        if pot.v(x) <= pot.v(b) {
            b = x;
        }
    }
    let vb = pot.v(b);
    let a = search_left(pot, b, hz.scan_limit, "a*", |v| v - vb >= hz.d_t)?;
    let d_bar = search_right(pot, t_up, i64::MAX, "d_bar*", |v| v <= vb)?;
    let mut c = b;
    for x in b..=d_bar {
        if pot.v(x) > pot.v(c) {
            c = x;
        }
    }
    let vdb = pot.v(d_bar);
    let d = search_right(pot, d_bar, hz.scan_limit, "d*", |v| v - vdb <= -hz.d_t)?;
    Ok(Some(StarValley { index, origin, gamma, a, b, t_up, c, d_bar, d }))
}

/// Star valleys `1..=K*_t`, those with `T*_j <= stop` (normally `e_{n_t}`).
pub fn star_valleys(pot: &mut Potential, hz: &Horizon, stop: i64) -> Result<Vec<StarValley>, PotentialError> {
    let mut out = Vec::new();
    let mut origin = 0;
    while let Some(s) = star_valley_from(pot, hz, origin, out.len() + 1, stop)? {
        origin = s.d;
        out.push(s);
    }
    Ok(out)
}

/// `log W` with `W = 2 * sum over a <= m <= n, b <= n <= d of exp(V(n) - V(m))`.
pub fn log_valley_weight(pot: &Potential, a: i64, b: i64, d: i64) -> f64 {
    let mut inner = LogSum::new();
    for m in a..b {
        inner.add(-pot.v(m));
    }
    let mut outer = LogSum::new();
    for n in b..=d {
        inner.add(-pot.v(n));
        outer.add(pot.v(n) + inner.value());
    }
    std::f64::consts::LN_2 + outer.value()
}

/// `(max, min)` of `V(j) - V(i)` over `x <= i <= j <= y`.
pub fn fluctuations(pot: &Potential, x: i64, y: i64) -> (f64, f64) {
    let mut lo = pot.v(x);
    let mut hi = lo;
    let mut up = 0.0f64;
    let mut down = 0.0f64;
    for k in x..=y {
        let vk = pot.v(k);
        lo = lo.min(vk);
        hi = hi.max(vk);
        up = up.max(vk - lo);
        down = down.min(vk - hi);
    }
    (up, down)
}

/// Constants of the good-environment events.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsConfig {
    pub c_prime: f64,
    pub c_double: f64,
    pub c_triple: f64,
    pub gamma: f64,
    pub eta: f64,
}

impl DiagnosticsConfig {
    pub fn default_c_double(kappa: f64) -> f64 {
        40.0 / kappa
    }

    /// Defaults for a law; `C'` is four times a simulated estimate of `E[e_1]`.
    pub fn for_spec(spec: &EnvSpec) -> Self {
        let c_double = Self::default_c_double(spec.kappa);
        DiagnosticsConfig {
            c_prime: 4.0 * mean_ladder_length(&spec.family, 20_000, 0x1add_e5),
            c_double,
            // strictly below the 2/(3C'') ceiling
            c_triple: (spec.kappa / 8.0).min(0.99 * 2.0 / (3.0 * c_double)),
            gamma: 1.0 / 6.0,
            eta: 0.3,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let all = [self.c_prime, self.c_double, self.c_triple, self.gamma, self.eta];
        if all.iter().any(|c| !(c.is_finite() && *c > 0.0)) {
            return Err(format!("diagnostics constants must be positive: {self:?}"));
        }
        if self.c_triple * self.c_double >= 2.0 / 3.0 {
            return Err(format!("C''' C'' = {} is not below 2/3", self.c_triple * self.c_double));
        }
        Ok(())
    }
}

/// Mean distance between ladder epochs over `n` excursions of one sampled environment.
pub fn mean_ladder_length(family: &EnvFamily, n: usize, seed: u64) -> f64 {
    let mut pot = Potential::sample(family, 0, 1 << 16, derive_seed(seed, "ladder-mean", 0))
        .expect("validated family");
    let epochs = ladder_epochs(&mut pot, n, i64::MAX).expect("ladder scan within budget");
    epochs[n] as f64 / n as f64
}

/// One good-environment event with the quantity that decides it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EventCheck {
    pub holds: bool,
    /// `None` when the event is an empty intersection.
    pub witness: Option<f64>,
    pub bound: f64,
}

impl EventCheck {
    fn at_most(witness: Option<f64>, bound: f64) -> Self {
        EventCheck { holds: witness.is_none_or(|w| w <= bound), witness, bound }
    }

    fn at_least(witness: Option<f64>, bound: f64) -> Self {
        EventCheck { holds: witness.is_none_or(|w| w >= bound), witness, bound }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvDiagnostics {
    pub k_t: usize,
    pub k_star: usize,
    pub a1: EventCheck,
    pub a2: EventCheck,
    pub a3: EventCheck,
    pub a4: EventCheck,
    pub a5: EventCheck,
    pub f_gamma: EventCheck,
    /// Star valleys coincide with deep valleys; the witness counts mismatches.
    pub a_star: EventCheck,
}

impl EnvDiagnostics {
    /// `A(t) = A1 ∩ A2 ∩ A3 ∩ A4`.
    pub fn good(&self) -> bool {
        self.a1.holds && self.a2.holds && self.a3.holds && self.a4.holds
    }
}

fn max_opt(acc: Option<f64>, x: f64) -> Option<f64> {
    Some(acc.map_or(x, |a| a.max(x)))
}

fn min_opt(acc: Option<f64>, x: f64) -> Option<f64> {
    Some(acc.map_or(x, |a| a.min(x)))
}

/// `max(V_up(a, b), -V_down(b, c), V_up(c, d))` for one valley.
pub fn valley_fluctuation(pot: &Potential, v: &DeepValley) -> f64 {
    let (up_ab, _) = fluctuations(pot, v.a, v.b);
    let (_, down_bc) = fluctuations(pot, v.b, v.c);
    let (up_cd, _) = fluctuations(pot, v.c, v.d);
    up_ab.max(-down_bc).max(up_cd)
}

/// `min (V(k) - V(b))` over the sharpness set `O`, or `None` when `O` is empty.
pub fn valley_sharpness(pot: &Potential, v: &DeepValley, eta: f64, log_t: f64) -> Option<f64> {
    let half = eta * log_t;
    let (ex_lo, ex_hi) = (v.b as f64 - half + 1.0, v.b as f64 + half - 1.0);
    let vb = pot.v(v.b);
    (v.a + 1..v.c_bar)
        .filter(|&k| !((k as f64) > ex_lo && (k as f64) < ex_hi))
        .map(|k| pot.v(k) - vb)
        .reduce(f64::min)
}

/// Evaluates `A1`–`A5`, `F_gamma` and the star-valley coincidence on one environment.
pub fn good_env_diagnostics(
    pot: &mut Potential,
    hz: &Horizon,
    cfg: &DiagnosticsConfig,
) -> Result<(Survey, EnvDiagnostics), PotentialError> {
    let sv = survey(pot, hz, true)?;
    let stars = star_valleys(pot, hz, sv.e_nt)?;
    let lt = hz.log_t();
    let k_t = sv.k_t();
    let next = sv.next.as_ref().expect("survey with next valley");

    let a1 = EventCheck::at_most(Some(sv.e_nt as f64), cfg.c_prime * hz.n_t as f64);
    let a2 = EventCheck::at_most(Some(k_t as f64), lt.powf((1.0 + hz.kappa) / 2.0));

    let mut sigma = vec![0u64];
    sigma.extend(sv.valleys.iter().chain(std::iter::once(next)).map(|v| v.excursion));
    let gap = sigma.windows(2).map(|w| (w[1] - w[0]) as f64).fold(f64::INFINITY, f64::min);
    let a3 = EventCheck::at_least(Some(gap), hz.t.powf(hz.kappa / 2.0));

    let width = sv
        .valleys
        .iter()
        .chain(std::iter::once(next))
        .map(|v| (v.d - v.a) as f64)
        .fold(0.0, f64::max);
    let a4 = EventCheck::at_most(Some(width), cfg.c_double * lt);

    let mut sharp = None;
    let mut fluct = None;
    for v in &sv.valleys {
        if let Some(s) = valley_sharpness(pot, v, cfg.eta, lt) {
            sharp = min_opt(sharp, s);
        }
        fluct = max_opt(fluct, valley_fluctuation(pot, v));
    }
    let a5 = EventCheck::at_least(sharp, cfg.c_triple * cfg.eta * lt);
    let f_gamma = EventCheck::at_most(fluct, cfg.gamma * lt);

    let mismatches = if stars.len() != k_t {
        k_t.abs_diff(stars.len()).max(1)
    } else {
        sv.valleys
            .iter()
            .zip(&stars)
            .filter(|(v, s)| (v.a, v.b, v.c, v.d) != s.sites())
            .count()
    };
    let a_star = EventCheck::at_most(Some(mismatches as f64), 0.0);

    let diag = EnvDiagnostics { k_t, k_star: stars.len(), a1, a2, a3, a4, a5, f_gamma, a_star };
    Ok((sv, diag))
}

/// Per-valley flags exported with the valley anatomy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValleyFlags {
    pub within_horizon: bool,
    pub width_ok: bool,
    pub fluctuation_ok: bool,
    pub sharp_ok: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValleyRecord {
    #[serde(flatten)]
    pub valley: DeepValley,
    pub weight: f64,
    pub flags: ValleyFlags,
}

pub fn valley_record(pot: &Potential, v: &DeepValley, hz: &Horizon, cfg: &DiagnosticsConfig, k_t: usize) -> ValleyRecord {
    let lt = hz.log_t();
    ValleyRecord {
        valley: *v,
        weight: v.weight(),
        flags: ValleyFlags {
            within_horizon: v.index <= k_t,
            width_ok: ((v.d - v.a) as f64) <= cfg.c_double * lt,
            fluctuation_ok: valley_fluctuation(pot, v) <= cfg.gamma * lt,
            sharp_ok: valley_sharpness(pot, v, cfg.eta, lt).is_none_or(|s| s >= cfg.c_triple * cfg.eta * lt),
        },
    }
}

/// Checks the defining relations of a deep valley; returns the first violated one.
pub fn audit_valley(pot: &Potential, v: &DeepValley, hz: &Horizon) -> Result<(), String> {
    let vb = pot.v(v.b);
    let ordered = v.a <= v.b && v.b < v.t_up && v.t_up <= v.c && v.c <= v.d_bar && v.d_bar <= v.d;
    if !ordered {
        return Err(format!("sites out of order: {v:?}"));
    }
    if (v.b..=v.t_up).any(|k| pot.v(k) < vb) {
        return Err("V(b) is not the minimum on [b, T_up]".into());
    }
    if pot.v(v.t_up) - vb < hz.h_t {
        return Err("V(T_up) - V(b) < h_t".into());
    }
    if pot.v(v.a) - vb < hz.d_t {
        return Err("V(a) - V(b) < D_t".into());
    }
    if pot.v(v.d) - pot.v(v.d_bar) > -hz.d_t {
        return Err("V(d) - V(d_bar) > -D_t".into());
    }
    let vc = pot.v(v.c);
    if (v.b..=v.d_bar).any(|k| pot.v(k) > vc) {
        return Err("c is not a maximum on [b, d_bar]".into());
    }
    if pot.v(v.c_bar) > vc - hz.h_t / 3.0 || v.c_bar < v.c {
        return Err("c_bar is not below V(c) - h_t/3".into());
    }
    if (vc - vb - v.height).abs() > 1e-9 * (1.0 + v.height.abs()) {
        return Err("height differs from V(c) - V(b)".into());
    }
    Ok(())
}
