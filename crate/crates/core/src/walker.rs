//! Walk simulation: the stepping kernel, hitting times, valley crossings and the clock surrogate.
//!
//! A site's right-step probability is stored as a `u64` threshold (see
//! [`step_threshold`]); one step consumes exactly one `u64` from the walker's
//! stream, so a path depends only on its stream, never on how the stepping is
//! chunked or interleaved with other walkers.

use rand::{Rng, RngCore};
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use crate::potential::{step_threshold, Potential, PotentialError};
use crate::quenched::{escape_prob, hproc_potential, Boundary, IntervalProblem};
use crate::seeding::{stream, StreamRng};

/// Advances `L` walkers in lockstep for at most `max_iter` steps each.
///
/// Stops after the first step at which some walker satisfies
/// `x <= low` or `x >= high` and returns the number of steps taken.
/// Requires `low[l] < x[l] < high[l]` on entry, and `thr[l][x - base[l]]`
/// to exist for every `low[l] < x < high[l]`.
#[inline(always)]
pub(crate) fn advance<const L: usize>(
    thr: [&[u64]; L],
    base: [i64; L],
    x: &mut [i64; L],
    low: [i64; L],
    high: [i64; L],
    rng: &mut [StreamRng; L],
    max_iter: u64,
) -> u64 {
    for l in 0..L {
        assert!(low[l] < x[l] && x[l] < high[l], "walker {l} starts outside its window");
        assert!(low[l] + 1 >= base[l] && ((high[l] - 1 - base[l]) as usize) < thr[l].len());
    }
    let mut xs = *x;
    let mut it = 0;
    while it < max_iter {
        it += 1;
        let mut hit = false;
        for l in 0..L {
            let u = rng[l].next_u64();
            // SAFETY: low < x < high held before this step and the asserts above
            // keep every such x inside thr[l].
            let t = unsafe { *thr[l].get_unchecked((xs[l] - base[l]) as usize) };
            xs[l] += if u <= t { 1 } else { -1 };
            hit |= (xs[l] <= low[l]) | (xs[l] >= high[l]);
        }
        if hit {
            break;
        }
    }
    *x = xs;
    it
}

/// A growable set of step thresholds.
pub trait Ground {
    fn thresholds(&self) -> &[u64];
    /// Site of `thresholds()[0]`.
    fn lo(&self) -> i64;
    fn hi(&self) -> i64;
    /// Makes `[lo, hi]` available.
    fn grow(&mut self, lo: i64, hi: i64) -> Result<(), PotentialError>;
}

impl Ground for Potential {
    fn thresholds(&self) -> &[u64] {
        Potential::thresholds(self)
    }
    fn lo(&self) -> i64 {
        Potential::lo(self)
    }
    fn hi(&self) -> i64 {
        Potential::hi(self)
    }
    fn grow(&mut self, lo: i64, hi: i64) -> Result<(), PotentialError> {
        self.ensure(lo, hi)
    }
}

/// Steps one walker until it reaches `low` or `high` (exclusive bounds), or `max_iter` steps.
/// Grows the ground when the walker nears its edge. Returns the steps taken.
fn run_until<G: Ground>(ground: &mut G, x: &mut i64, low: i64, high: i64, rng: &mut StreamRng, max_iter: u64) -> Result<u64, PotentialError> {
    let mut done = 0;
    while done < max_iter {
        if *x <= low || *x >= high {
            break;
        }
        if *x < ground.lo() || *x > ground.hi() {
            ground.grow(*x, *x)?;
        }
        let lo = low.max(ground.lo() - 1);
        let hi = high.min(ground.hi() + 1);
        let mut xs = [*x];
        let mut r = [rng.clone()];
        done += advance([ground.thresholds()], [ground.lo()], &mut xs, [lo], [hi], &mut r, max_iter - done);
        *rng = r[0].clone();
        *x = xs[0];
    }
    Ok(done)
}

/// Position after `n_steps` steps from `start`.
pub fn step_walk<G: Ground>(ground: &mut G, start: i64, n_steps: u64, rng: &mut StreamRng) -> Result<i64, PotentialError> {
    let mut x = start;
    run_until(ground, &mut x, i64::MIN, i64::MAX, rng, n_steps)?;
    Ok(x)
}

/// The full path `X_0, ..., X_n` (for short walks).
pub fn step_path(pot: &mut Potential, start: i64, n_steps: usize, rng: &mut StreamRng) -> Result<Vec<i64>, PotentialError> {
    let mut path = Vec::with_capacity(n_steps + 1);
    let mut x = start;
    path.push(x);
    for _ in 0..n_steps {
        pot.ensure(x - 1, x + 1)?;
        let t = pot.thresholds()[(x - pot.lo()) as usize];
        x += if rng.next_u64() <= t { 1 } else { -1 };
        path.push(x);
    }
    Ok(path)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HitOutcome {
    Hit(u64),
    /// The cap was reached first.
    Capped,
}

impl HitOutcome {
    pub fn steps(&self) -> Option<u64> {
        match self {
            HitOutcome::Hit(n) => Some(*n),
            HitOutcome::Capped => None,
        }
    }
}

/// `tau(target) = inf{n >= 1 : X_n = target}` from `start`, for the unrestricted walk.
pub fn sim_hitting_time<G: Ground>(ground: &mut G, start: i64, target: i64, cap: u64, rng: &mut StreamRng) -> Result<HitOutcome, PotentialError> {
    let mut x = start;
    let mut n = 0;
    if x == target {
        if cap == 0 {
            return Ok(HitOutcome::Capped);
        }
        n = run_until(ground, &mut x, i64::MIN, i64::MAX, rng, 1)?;
    }
    let (low, high) = if target > x { (i64::MIN, target) } else { (target, i64::MAX) };
    n += run_until(ground, &mut x, low, high, rng, cap - n)?;
    Ok(if x == target { HitOutcome::Hit(n) } else { HitOutcome::Capped })
}

/// A fixed window of thresholds with the problem's boundary behavior baked in.
pub struct LocalChain {
    lo: i64,
    hi: i64,
    thr: Vec<u64>,
    problem: IntervalProblem,
}

impl LocalChain {
    pub fn new(pot: &Potential, problem: IntervalProblem) -> Self {
        let IntervalProblem { lo, hi, left, right } = problem;
        assert!(lo < hi && pot.covers(lo, hi), "interval outside the potential");
        let off = (lo - pot.lo()) as usize;
        let mut thr = pot.thresholds()[off..off + (hi - lo + 1) as usize].to_vec();
        if left == Boundary::Reflecting {
            thr[0] = u64::MAX;
        }
        if right == Boundary::Reflecting {
            *thr.last_mut().unwrap() = 0;
        }
        LocalChain { lo, hi, thr, problem }
    }

    // Exclusive event bounds: an absorbing end is an event, a reflecting one is never reached past.
    fn bounds(&self) -> (i64, i64) {
        let low = match self.problem.left {
            Boundary::Absorbing => self.lo,
            Boundary::Reflecting => self.lo - 1,
        };
        let high = match self.problem.right {
            Boundary::Absorbing => self.hi,
            Boundary::Reflecting => self.hi + 1,
        };
        (low, high)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Absorption {
    pub steps: u64,
    /// `Some(true)` at the left end, `Some(false)` at the right end, `None` when capped.
    pub at_left: Option<bool>,
}

/// Absorption of `n` independent walkers started at `start`; walker `i` uses stream `(seed, "walk", i)`.
///
/// A reflecting end of the problem is the site where the walk turns back with
/// probability one. Walkers are stepped four at a time.
pub fn simulate_interval(chain: &LocalChain, start: i64, n: usize, seed: u64, cap: u64) -> Vec<Absorption> {
    let (low, high) = chain.bounds();
    assert!(low < start && start < high, "start must be an interior or reflecting site");
    let mut out = vec![Absorption { steps: 0, at_left: None }; n];
    let finish = |x: i64, steps: u64| Absorption {
        steps,
        at_left: if x <= low { Some(true) } else if x >= high { Some(false) } else { None },
    };
    // four lanes draw replicas from a queue; each replica owns its stream, so
    // which lane runs it does not matter
    let mut queue = 0..n;
    let mut ids = [usize::MAX; 4];
    let mut x = [start; 4];
    let mut steps = [0u64; 4];
    let mut rng: [StreamRng; 4] = std::array::from_fn(|_| stream(seed, "walk", u64::MAX));
    let mut active = 0;
    for l in 0..4 {
        if let Some(i) = queue.next() {
            ids[l] = i;
            rng[l] = stream(seed, "walk", i as u64);
            active += 1;
        }
    }
    while active == 4 {
        let budget = steps.iter().map(|s| cap - s).min().unwrap();
        let n_it = if budget == 0 {
            0
        } else {
            advance([&chain.thr[..]; 4], [chain.lo; 4], &mut x, [low; 4], [high; 4], &mut rng, budget)
        };
        for l in 0..4 {
            steps[l] += n_it;
            if x[l] <= low || x[l] >= high || steps[l] >= cap {
                out[ids[l]] = finish(x[l], steps[l]);
                if let Some(i) = queue.next() {
                    ids[l] = i;
                    rng[l] = stream(seed, "walk", i as u64);
                    x[l] = start;
                    steps[l] = 0;
                } else {
                    ids[l] = usize::MAX;
                    active -= 1;
                }
            }
        }
    }
    for l in 0..4 {
        if ids[l] == usize::MAX {
            continue;
        }
        let mut xs = [x[l]];
        let mut r = [rng[l].clone()];
        let n_it = if steps[l] < cap {
            advance([&chain.thr[..]], [chain.lo], &mut xs, [low], [high], &mut r, cap - steps[l])
        } else {
            0
        };
        out[ids[l]] = finish(xs[0], steps[l] + n_it);
    }
    out
}

/// One valley crossing from `b` to `d` assembled as failures, then a success.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Crossing {
    pub steps: u64,
    /// Number of returns to `b` before the successful attempt.
    pub failures: u64,
}

/// Records `X` at observation times falling inside a simulated segment.
pub(crate) struct ObsWindow<'a> {
    pub times: &'a [u64],
    pub values: &'a mut [Option<i64>],
}

impl ObsWindow<'_> {
    fn next_after(&self, now: u64) -> Option<u64> {
        self.times.iter().copied().find(|&t| t > now)
    }

    fn record(&mut self, time: u64, x: i64) {
        for (i, &t) in self.times.iter().enumerate() {
            if t == time {
                self.values[i] = Some(x);
            }
        }
    }
}

/// Steps one walker until an exclusive bound, stopping on the way at every observation time.
fn run_observed<G: Ground>(
    ground: &mut G,
    x: &mut i64,
    low: i64,
    high: i64,
    rng: &mut StreamRng,
    now: u64,
    obs: &mut Option<ObsWindow<'_>>,
) -> Result<u64, PotentialError> {
    let mut elapsed = 0;
    loop {
        let stop = obs.as_ref().and_then(|o| o.next_after(now + elapsed));
        let budget = stop.map_or(u64::MAX, |s| s - (now + elapsed));
        elapsed += run_until(ground, x, low, high, rng, budget)?;
        if let (Some(s), Some(o)) = (stop, obs.as_mut()) {
            if now + elapsed == s {
                o.record(s, *x);
            }
        }
        if *x <= low || *x >= high {
            return Ok(elapsed);
        }
    }
}

/// Samples the crossing time `tau(b, d)` as `F_1 + ... + F_N + S`.
///
/// `N` is geometric with the exact escape probability; each `F` is an
/// excursion from `b` drawn by rejection of paths that reach `d`; `S` is a
/// path of the walk conditioned to reach `d` before returning to `b`, stepped
/// with its exact conditioned probabilities.
pub fn sim_valley_crossing_geometric<G: Ground + AsPotential>(ground: &mut G, b: i64, d: i64, rng: &mut StreamRng) -> Result<Crossing, PotentialError> {
    crossing_observed(ground, b, d, rng, 0, &mut None)
}

/// Access to the potential behind a ground, for the closed-form parts of a crossing.
pub trait AsPotential {
    fn potential(&self) -> &Potential;
}

impl AsPotential for Potential {
    fn potential(&self) -> &Potential {
        self
    }
}

pub(crate) fn crossing_observed<G: Ground + AsPotential>(
    ground: &mut G,
    b: i64,
    d: i64,
    rng: &mut StreamRng,
    now: u64,
    obs: &mut Option<ObsWindow<'_>>,
) -> Result<Crossing, PotentialError> {
    assert!(b < d);
    ground.grow(b - 1, d + 1)?;
    let escape = escape_prob(ground.potential(), b, d);
    let failures = if escape >= 1.0 {
        0
    } else {
        let u: f64 = 1.0 - rng.gen::<f64>();
        (u.ln() / (-escape).ln_1p()).floor() as u64
    };
    let mut elapsed = 0u64;
    let mut scratch: Vec<Option<i64>> = obs.as_ref().map_or(Vec::new(), |o| vec![None; o.times.len()]);
    for _ in 0..failures {
        // rejection: an attempt that reaches d is discarded together with its observations
        loop {
            let mut attempt_obs = obs.as_ref().map(|o| ObsWindow { times: o.times, values: &mut scratch[..] });
            if let Some(a) = attempt_obs.as_mut() {
                a.values.iter_mut().for_each(|v| *v = None);
            }
            let mut x = b;
            // first step, then run until back at b or at d
            let first = run_observed(ground, &mut x, b - 1, b + 1, rng, now + elapsed, &mut attempt_obs)?;
            let rest = if x > b {
                run_observed(ground, &mut x, b, d, rng, now + elapsed + first, &mut attempt_obs)?
            } else {
                run_observed(ground, &mut x, i64::MIN, b, rng, now + elapsed + first, &mut attempt_obs)?
            };
            if x == b {
                elapsed += first + rest;
                if let Some(o) = obs.as_mut() {
                    for (slot, v) in o.values.iter_mut().zip(&scratch) {
                        if v.is_some() {
                            *slot = *v;
                        }
                    }
                }
                break;
            }
        }
    }
    elapsed += conditioned_escape(ground.potential(), b, d, rng, now + elapsed, obs);
    Ok(Crossing { steps: elapsed, failures })
}

/// Path from `b` to `d` of the walk conditioned not to return to `b`.
fn conditioned_escape(pot: &Potential, b: i64, d: i64, rng: &mut StreamRng, now: u64, obs: &mut Option<ObsWindow<'_>>) -> u64 {
    let h = hproc_potential(pot, b, d);
    let mut thr = Vec::with_capacity((d - b) as usize);
    thr.push(u64::MAX);
    thr.extend(h.right_prob.iter().map(|&p| step_threshold(p)));
    let mut x = [b];
    let mut r = [rng.clone()];
    let mut elapsed = 0;
    loop {
        let stop = obs.as_ref().and_then(|o| o.next_after(now + elapsed));
        let budget = stop.map_or(u64::MAX, |s| s - (now + elapsed));
        elapsed += advance([&thr[..]], [b], &mut x, [b - 1], [d], &mut r, budget);
        if let (Some(s), Some(o)) = (stop, obs.as_mut()) {
            if now + elapsed == s {
                o.record(s, x[0]);
            }
        }
        if x[0] >= d {
            break;
        }
    }
    *rng = r[0].clone();
    elapsed
}

/// Draws of the clock surrogate and its index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClockRealization {
    pub weights: Vec<f64>,
    pub draws: Vec<f64>,
    /// Largest `i` with `sum_{k <= i} W_k e_k <= t`.
    pub index: usize,
}

/// Index of the last partial sum of `W_k e_k` not exceeding `t`.
pub fn clock_index(weights: &[f64], draws: &[f64], t: f64) -> usize {
    let mut acc = 0.0;
    for (i, (w, e)) in weights.iter().zip(draws).enumerate() {
        acc += w * e;
        if acc > t {
            return i;
        }
    }
    weights.len().min(draws.len())
}

pub fn clock_model(weights: &[f64], t: f64, rng: &mut StreamRng) -> ClockRealization {
    let draws: Vec<f64> = weights.iter().map(|_| rng.sample(Exp1)).collect();
    ClockRealization {
        index: clock_index(weights, &draws, t),
        weights: weights.to_vec(),
        draws,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env_model::Environment;
    use approx::assert_relative_eq;

    fn flat(lo: i64, hi: i64) -> Potential {
        Potential::new(Environment::from_omega(lo, vec![0.5; (hi - lo + 1) as usize]).unwrap()).unwrap()
    }

    #[test]
    fn always_right_walks_straight() {
        let mut pot = Potential::new(Environment::from_omega(-1, vec![1.0; 40]).unwrap()).unwrap();
        let mut rng = stream(1, "walk", 0);
        assert_eq!(step_walk(&mut pot, 0, 30, &mut rng).unwrap(), 30);
        let path = step_path(&mut pot, 0, 5, &mut rng).unwrap();
        assert_eq!(path, vec![0, 1, 2, 3, 4, 5]);
    }

    #[test]
    fn same_stream_same_path() {
        let mut pot = flat(-100, 100);
        let a = step_path(&mut pot, 0, 50, &mut stream(7, "walk", 3)).unwrap();
        let b = step_path(&mut pot, 0, 50, &mut stream(7, "walk", 3)).unwrap();
        assert_eq!(a, b);
        // the chunked stepper lands where the one-step-at-a-time path does
        let end = step_walk(&mut pot, 0, 50, &mut stream(7, "walk", 3)).unwrap();
        assert_eq!(end, a[50]);
    }

    #[test]
    fn adjacent_target_with_sure_step() {
        let mut pot = Potential::new(Environment::from_omega(0, vec![1.0, 0.5, 0.5]).unwrap()).unwrap();
        let mut rng = stream(2, "walk", 0);
        assert_eq!(sim_hitting_time(&mut pot, 0, 1, 100, &mut rng).unwrap(), HitOutcome::Hit(1));
    }

    #[test]
    fn lanes_match_single_walkers() {
        let pot = flat(-50, 50);
        let chain = LocalChain::new(
            &pot,
            IntervalProblem { lo: -20, hi: 20, left: Boundary::Absorbing, right: Boundary::Absorbing },
        );
        let batch = simulate_interval(&chain, 3, 9, 11, u64::MAX);
        for (i, got) in batch.iter().enumerate() {
            let mut p = pot.clone();
            let mut rng = stream(11, "walk", i as u64);
            let mut x = 3;
            let steps = run_until(&mut p, &mut x, -20, 20, &mut rng, u64::MAX).unwrap();
            assert_eq!(got.steps, steps);
            assert_eq!(got.at_left, Some(x == -20));
        }
    }

    #[test]
    fn clock_examples() {
        assert_eq!(clock_index(&[3.0, 4.0, 100.0], &[1.0, 1.0, 1.0], 10.0), 2);
        assert_eq!(clock_index(&[], &[], 10.0), 0);
        assert_eq!(clock_index(&[30.0], &[1.0], 10.0), 0);
        let c = clock_model(&[1.0, 2.0], 1e9, &mut stream(3, "clock", 0));
        assert_eq!(c.index, 2);
        assert!(c.draws.iter().all(|&e| e > 0.0));
    }

    #[test]
    fn degenerate_crossing_takes_one_step() {
        let mut pot = Potential::new(Environment::from_omega(-2, vec![0.5, 0.5, 1.0, 0.5, 0.5]).unwrap()).unwrap();
        let c = sim_valley_crossing_geometric(&mut pot, 0, 1, &mut stream(4, "walk", 0)).unwrap();
        assert_eq!(c, Crossing { steps: 1, failures: 0 });
    }

    #[test]
    fn flat_two_step_law() {
        let mut pot = flat(-10, 10);
        let n = 100_000;
        let mut counts = [0usize; 3];
        for i in 0..n {
            let x = step_walk(&mut pot, 0, 2, &mut stream(5, "walk", i)).unwrap();
            counts[((x + 2) / 2) as usize] += 1;
        }
        for (c, p) in counts.iter().zip([0.25, 0.5, 0.25]) {
            let sd = (p * (1.0 - p) / n as f64).sqrt();
            assert!((*c as f64 / n as f64 - p).abs() < 4.0 * sd, "{counts:?}");
        }
        assert_relative_eq!(counts.iter().sum::<usize>() as f64, n as f64);
    }
}
