//! Full trajectories to time `t h`, with valley bookkeeping, run in batches.

use std::sync::{Arc, Mutex};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env_model::EnvFamily;
use crate::potential::{DeepValley, Horizon, Potential, PotentialError, ValleyScanner};
use crate::seeding::{derive_seed, stream, StreamRng};
use crate::walker::{advance, crossing_observed, AsPotential, Ground, ObsWindow};

/// Default cap on simulated steps per replica.
pub const DEFAULT_STEP_CAP: u64 = 10_000_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WalkError {
    #[error("aging ratio {0} is not above 1")]
    BadRatio(f64),
    #[error("horizon t = {0} is below 3")]
    BadHorizon(u64),
    #[error("step cap {cap} is below the last observation time {needed}")]
    CapTooSmall { cap: u64, needed: u64 },
    #[error("window coefficient {0} is not positive")]
    BadEta(f64),
    #[error("could not build a worker pool: {0}")]
    Pool(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WalkMode {
    Direct,
    /// Valley crossings sampled as geometric numbers of failed attempts plus a success.
    Hybrid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WalkConfig {
    pub t: u64,
    /// Aging ratios; the walk is observed at `t` and at each `floor(t h)`.
    pub h: Vec<f64>,
    pub eta: f64,
    pub seed: u64,
    pub step_cap: u64,
    pub mode: WalkMode,
}

impl WalkConfig {
    pub fn new(t: u64, h: Vec<f64>, eta: f64, seed: u64) -> Self {
        WalkConfig { t, h, eta, seed, step_cap: DEFAULT_STEP_CAP, mode: WalkMode::Direct }
    }

    pub fn validate(&self) -> Result<(), WalkError> {
        if self.t < 3 {
            return Err(WalkError::BadHorizon(self.t));
        }
        if let Some(&h) = self.h.iter().find(|&&h| !(h > 1.0 && h.is_finite())) {
            return Err(WalkError::BadRatio(h));
        }
        if !(self.eta > 0.0) {
            return Err(WalkError::BadEta(self.eta));
        }
        let needed = self.last_time();
        if self.step_cap < needed {
            return Err(WalkError::CapTooSmall { cap: self.step_cap, needed });
        }
        Ok(())
    }

    pub fn later_time(&self, h: f64) -> u64 {
        (self.t as f64 * h).floor() as u64
    }

    pub fn last_time(&self) -> u64 {
        self.h.iter().map(|&h| self.later_time(h)).fold(self.t, u64::max)
    }

    /// Sorted distinct observation times.
    pub fn obs_times(&self) -> Vec<u64> {
        let mut v: Vec<u64> = std::iter::once(self.t).chain(self.h.iter().map(|&h| self.later_time(h))).collect();
        v.sort_unstable();
        v.dedup();
        v
    }

    pub fn window(&self) -> f64 {
        self.eta * (self.t as f64).ln()
    }
}

/// A potential together with the catalog of its deep valleys, both grown on demand.
#[derive(Debug, Clone)]
pub struct Terrain {
    pot: Potential,
    scanner: ValleyScanner,
    valleys: Vec<DeepValley>,
}

impl Terrain {
    pub fn new(pot: Potential, horizon: Horizon) -> Self {
        Terrain { pot, scanner: ValleyScanner::new(horizon), valleys: Vec::new() }
    }

    pub fn potential(&self) -> &Potential {
        &self.pot
    }

    pub fn horizon(&self) -> &Horizon {
        self.scanner.horizon()
    }

    /// Valleys found so far, in order.
    pub fn valleys(&self) -> &[DeepValley] {
        &self.valleys
    }

    /// Every valley with `b` below this site is in the catalog.
    pub fn frontier(&self) -> i64 {
        self.scanner.ladder_position()
    }

    pub fn covers(&self, lo: i64, hi: i64) -> bool {
        self.pot.covers(lo, hi) && self.frontier() > hi
    }

    pub fn extend(&mut self, lo: i64, hi: i64) -> Result<(), PotentialError> {
        self.pot.ensure(lo, hi)?;
        while self.frontier() <= hi {
            if let Some(v) = self.scanner.step(&mut self.pot)? {
                self.valleys.push(v);
            }
        }
        Ok(())
    }
}

/// A terrain shared by many walkers; growth replaces the snapshot under a lock.
#[derive(Debug)]
pub struct SharedTerrain {
    inner: Mutex<Arc<Terrain>>,
}

impl SharedTerrain {
    pub fn new(terrain: Terrain) -> Self {
        SharedTerrain { inner: Mutex::new(Arc::new(terrain)) }
    }

    /// Samples a fresh environment for horizon `horizon`.
    pub fn sample(family: &EnvFamily, horizon: Horizon, env_seed: u64) -> Result<Self, PotentialError> {
        let pot = Potential::sample(family, -256, 2048, env_seed)?;
        Ok(Self::new(Terrain::new(pot, horizon)))
    }

    pub fn snapshot(&self) -> Arc<Terrain> {
        self.inner.lock().expect("terrain lock").clone()
    }

    /// A snapshot covering `[lo, hi]` with its valleys catalogued past `hi`.
    pub fn cover(&self, lo: i64, hi: i64) -> Result<Arc<Terrain>, PotentialError> {
        let mut cur = self.inner.lock().expect("terrain lock");
        if !cur.covers(lo, hi) {
            let margin = ((hi - lo) / 2).max(1024);
            let wide_lo = if lo < cur.pot.lo() { lo - margin } else { lo };
            let mut grown = (**cur).clone();
            if grown.extend(wide_lo, hi + margin).is_err() {
                // hand-built terrains cannot grow past their ends
                grown = (**cur).clone();
                grown.extend(lo, hi)?;
            }
            *cur = Arc::new(grown);
        }
        Ok(cur.clone())
    }
}

/// A walker's view of a shared terrain.
pub struct TerrainHandle<'a> {
    shared: &'a SharedTerrain,
    snap: Arc<Terrain>,
}

impl<'a> TerrainHandle<'a> {
    pub fn new(shared: &'a SharedTerrain) -> Self {
        TerrainHandle { shared, snap: shared.snapshot() }
    }
}

impl Ground for TerrainHandle<'_> {
    fn thresholds(&self) -> &[u64] {
        self.snap.pot.thresholds()
    }
    fn lo(&self) -> i64 {
        self.snap.pot.lo()
    }
    fn hi(&self) -> i64 {
        self.snap.pot.hi()
    }
    fn grow(&mut self, lo: i64, hi: i64) -> Result<(), PotentialError> {
        self.snap = self.shared.cover(lo, hi)?;
        Ok(())
    }
}

impl AsPotential for TerrainHandle<'_> {
    fn potential(&self) -> &Potential {
        &self.snap.pot
    }
}

/// Progress of a valley sitting at the origin: its entry needs a return to 0.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Origin {
    Inactive,
    AwaitReturn,
    AwaitExit(i64),
    Done,
}

/// Per-replica record of valley entries (`tau(b_k)`) and exits (first `d_k` after entry).
struct Tracker {
    snap: Arc<Terrain>,
    origin: Origin,
    next_entry: usize,
    next_exit: usize,
    entries: Vec<Option<u64>>,
    exits: Vec<Option<u64>>,
}

impl Tracker {
    fn new(shared: &SharedTerrain) -> Result<Self, PotentialError> {
        let snap = shared.cover(0, 0)?;
        let at_origin = snap.valleys.first().is_some_and(|v| v.b == 0);
        let first = usize::from(at_origin);
        Ok(Tracker {
            snap,
            origin: if at_origin { Origin::AwaitReturn } else { Origin::Inactive },
            next_entry: first,
            next_exit: first,
            entries: Vec::new(),
            exits: Vec::new(),
        })
    }

    /// Exclusive bounds: the walker must stop as soon as it reaches either.
    fn bounds(&self, x: i64) -> (i64, i64) {
        let pot = &self.snap.pot;
        let vs = &self.snap.valleys;
        let mut low = pot.lo() - 1;
        let mut high = (pot.hi() + 1).min(self.snap.frontier());
        if let Some(v) = vs.get(self.next_entry) {
            high = high.min(v.b);
        }
        if self.next_exit < self.next_entry {
            high = high.min(vs[self.next_exit].d);
        }
        match self.origin {
            Origin::AwaitReturn if x > 0 => low = low.max(0),
            Origin::AwaitReturn if x < 0 => high = high.min(0),
            Origin::AwaitExit(d) => high = high.min(d),
            _ => {}
        }
        (low, high)
    }

    /// At time 0 the walker sits on a pending return target and must take one step first.
    fn needs_single_step(&self, x: i64) -> bool {
        self.origin == Origin::AwaitReturn && x == 0
    }

    fn on_event(&mut self, x: i64, time: u64, shared: &SharedTerrain) -> Result<(), PotentialError> {
        if !self.snap.covers(x, x) {
            self.snap = shared.cover(x, x)?;
        }
        let vs = &self.snap.valleys;
        if self.entries.len() < vs.len() {
            self.entries.resize(vs.len(), None);
            self.exits.resize(vs.len(), None);
        }
        match self.origin {
            Origin::AwaitReturn if x == 0 && time >= 1 => {
                self.entries[0] = Some(time);
                self.origin = Origin::AwaitExit(vs[0].d);
            }
            Origin::AwaitExit(d) if x == d => {
                self.exits[0] = Some(time);
                self.origin = Origin::Done;
            }
            _ => {}
        }
        while self.next_exit < self.next_entry && x == vs[self.next_exit].d {
            self.exits[self.next_exit] = Some(time);
            self.next_exit += 1;
        }
        if self.next_entry < vs.len() && x == vs[self.next_entry].b {
            self.entries[self.next_entry] = Some(time);
            self.next_entry += 1;
        }
        Ok(())
    }

    fn summarize(mut self, replica: u64, cfg: &WalkConfig, obs: &[u64], values: &[i64]) -> TrajectorySummary {
        let hit = self.entries.iter().rposition(|e| e.is_some()).map_or(0, |i| i + 1);
        self.entries.truncate(hit);
        self.exits.truncate(hit);
        let at = |time: u64| values[obs.iter().position(|&o| o == time).expect("observed time")];
        let ell = |time: u64| {
            self.entries
                .iter()
                .enumerate()
                .filter(|(_, e)| e.is_some_and(|e| e <= time))
                .map(|(i, _)| i + 1)
                .max()
                .unwrap_or(0)
        };
        let x_t = at(cfg.t);
        let ell_t = ell(cfg.t);
        let b_ell = (ell_t > 0).then(|| self.snap.valleys[ell_t - 1].b);
        TrajectorySummary {
            replica,
            t: cfg.t,
            x_t,
            x_th: cfg.h.iter().map(|&h| at(cfg.later_time(h))).collect(),
            ell_t,
            ell_th: cfg.h.iter().map(|&h| ell(cfg.later_time(h))).collect(),
            b_ell,
            localized: b_ell.is_some_and(|b| ((x_t - b).abs() as f64) <= cfg.window()),
            entries: self.entries,
            exits: self.exits,
            steps: cfg.last_time(),
            error: None,
        }
    }
}

/// One replica's trajectory, reduced to what the experiments need.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySummary {
    pub replica: u64,
    pub t: u64,
    pub x_t: i64,
    /// `X_{floor(t h)}` for each configured ratio.
    pub x_th: Vec<i64>,
    pub ell_t: usize,
    pub ell_th: Vec<usize>,
    pub b_ell: Option<i64>,
    /// `T_k = tau(b_k)` for `k = 1..`, up to the last valley entered.
    pub entries: Vec<Option<u64>>,
    /// First visit to `d_k` after `T_k`.
    pub exits: Vec<Option<u64>>,
    /// `|X_t - b_{ell_t}| <= eta log t`, false when no valley was entered.
    pub localized: bool,
    pub steps: u64,
    pub error: Option<String>,
}

impl TrajectorySummary {
    fn failed(replica: u64, t: u64, err: String) -> Self {
        TrajectorySummary {
            replica,
            t,
            x_t: 0,
            x_th: Vec::new(),
            ell_t: 0,
            ell_th: Vec::new(),
            b_ell: None,
            entries: Vec::new(),
            exits: Vec::new(),
            localized: false,
            steps: 0,
            error: Some(err),
        }
    }

    pub fn ok(&self) -> bool {
        self.error.is_none()
    }

    /// `|X_{t h_k} - X_t| <= window`.
    pub fn aged(&self, k: usize, window: f64) -> bool {
        ((self.x_th[k] - self.x_t).abs() as f64) <= window
    }

    pub fn entry(&self, k: usize) -> Option<u64> {
        k.checked_sub(1).and_then(|i| self.entries.get(i).copied().flatten())
    }

    /// `T_{ell_t}`, with `T_0 = 0`.
    pub fn entry_of_last(&self) -> u64 {
        if self.ell_t == 0 {
            0
        } else {
            self.entry(self.ell_t).expect("entered valley")
        }
    }

    /// `T_{ell_t + 1}` when it happened within the simulated time.
    pub fn entry_of_next(&self) -> Option<u64> {
        self.entries.iter().skip(self.ell_t).flatten().copied().next()
    }

    /// `T_{ell_t} <= t < T_{ell_t} + tau_{ell_t}`; `None` when no valley was entered.
    pub fn sandwiched(&self) -> Option<bool> {
        if self.ell_t == 0 {
            return None;
        }
        Some(self.exits[self.ell_t - 1].is_none_or(|exit| exit > self.t))
    }

    pub fn csv_header(n_h: usize) -> Vec<String> {
        let mut h: Vec<String> = ["replica", "t", "x_t", "ell_t", "b_ell", "t_ell", "t_next", "exit_ell", "localized"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        for k in 0..n_h {
            h.push(format!("x_th{k}"));
            h.push(format!("ell_th{k}"));
        }
        h.push("error".into());
        h
    }

    pub fn csv_record(&self) -> Vec<String> {
        let opt = |v: Option<u64>| v.map_or(String::new(), |x| x.to_string());
        let mut r = vec![
            self.replica.to_string(),
            self.t.to_string(),
            self.x_t.to_string(),
            self.ell_t.to_string(),
            self.b_ell.map_or(String::new(), |b| b.to_string()),
            if self.ell_t > 0 { self.entry_of_last().to_string() } else { String::new() },
            opt(self.entry_of_next()),
            opt(if self.ell_t > 0 { self.exits[self.ell_t - 1] } else { None }),
            self.localized.to_string(),
        ];
        for (x, l) in self.x_th.iter().zip(&self.ell_th) {
            r.push(x.to_string());
            r.push(l.to_string());
        }
        r.push(self.error.clone().unwrap_or_default());
        r
    }
}

// A two-site ping-pong used by walkers that failed, so the rest of their group can continue.
static PARKED: [u64; 4] = [u64::MAX, u64::MAX, 0, 0];

/// Runs `L` replicas in lockstep to the last observation time.
fn drive_direct<const L: usize>(
    shared: [&SharedTerrain; L],
    replicas: [u64; L],
    mut rng: [StreamRng; L],
    cfg: &WalkConfig,
) -> Vec<TrajectorySummary> {
    let obs = cfg.obs_times();
    let mut trackers: Vec<Result<Tracker, String>> = shared
        .iter()
        .map(|s| Tracker::new(s).map_err(|e| e.to_string()))
        .collect();
    let mut x = [0i64; L];
    for l in 0..L {
        if trackers[l].is_err() {
            x[l] = 1;
        }
    }
    let mut values = vec![vec![0i64; obs.len()]; L];
    let mut time = 0u64;
    for (k, &o) in obs.iter().enumerate() {
        while time < o {
            let mut low = [0i64; L];
            let mut high = [3i64; L];
            let mut base = [0i64; L];
            let mut single = false;
            for l in 0..L {
                if let Ok(tr) = &trackers[l] {
                    (low[l], high[l]) = tr.bounds(x[l]);
                    base[l] = tr.snap.pot.lo();
                    single |= tr.needs_single_step(x[l]);
                }
            }
            let thr: [&[u64]; L] = std::array::from_fn(|l| match &trackers[l] {
                Ok(tr) => tr.snap.pot.thresholds(),
                Err(_) => &PARKED[..],
            });
            let n = advance(thr, base, &mut x, low, high, &mut rng, if single { 1 } else { o - time });
            time += n;
            for l in 0..L {
                if x[l] > low[l] && x[l] < high[l] {
                    continue;
                }
                match &mut trackers[l] {
                    Ok(tr) => {
                        if let Err(e) = tr.on_event(x[l], time, shared[l]) {
                            trackers[l] = Err(e.to_string());
                            x[l] = 1;
                        }
                    }
                    Err(_) => x[l] = 1,
                }
            }
        }
        for l in 0..L {
            values[l][k] = x[l];
        }
    }
    trackers
        .into_iter()
        .enumerate()
        .map(|(l, tr)| match tr {
            Ok(tr) => tr.summarize(replicas[l], cfg, &obs, &values[l]),
            Err(e) => TrajectorySummary::failed(replicas[l], cfg.t, e),
        })
        .collect()
}

/// One replica where each valley crossing free of other markers is drawn by the geometric decomposition.
fn drive_hybrid(shared: &SharedTerrain, replica: u64, mut rng: StreamRng, cfg: &WalkConfig) -> Result<TrajectorySummary, PotentialError> {
    let obs = cfg.obs_times();
    let end = *obs.last().expect("observation times");
    let mut tr = Tracker::new(shared)?;
    let mut values: Vec<Option<i64>> = vec![None; obs.len()];
    let mut x = 0i64;
    let mut time = 0u64;
    while time < end {
        let next_obs = obs.iter().copied().find(|&o| o > time).expect("pending observation");
        let (low, high) = tr.bounds(x);
        let budget = if tr.needs_single_step(x) { 1 } else { next_obs - time };
        let mut xs = [x];
        let mut r = [rng];
        time += advance([tr.snap.pot.thresholds()], [tr.snap.pot.lo()], &mut xs, [low], [high], &mut r, budget);
        [rng] = r;
        x = xs[0];
        if time == next_obs {
            values[obs.iter().position(|&o| o == time).unwrap()] = Some(x);
        }
        if x > low && x < high {
            continue;
        }
        let entered = tr.next_entry;
        tr.on_event(x, time, shared)?;
        if tr.next_entry == entered + 1 && time < end {
            let v = tr.snap.valleys[entered];
            if !tr.snap.covers(v.d, v.d) {
                tr.snap = shared.cover(v.d, v.d)?;
            }
            let clear = matches!(tr.origin, Origin::Inactive | Origin::Done)
                && tr.next_exit == entered
                && tr.snap.valleys.get(entered + 1).is_none_or(|n| n.b >= v.d);
            if clear {
                let mut handle = TerrainHandle { shared, snap: tr.snap.clone() };
                let mut window = Some(ObsWindow { times: &obs, values: &mut values });
                let c = crossing_observed(&mut handle, v.b, v.d, &mut rng, time, &mut window)?;
                time += c.steps;
                x = v.d;
                tr.snap = handle.snap;
                tr.on_event(x, time, shared)?;
            }
        }
    }
    let values: Vec<i64> = values.into_iter().map(|v| v.expect("every observation recorded")).collect();
    Ok(tr.summarize(replica, cfg, &obs, &values))
}

/// A single trajectory on a shared terrain.
pub fn run_trajectory(shared: &SharedTerrain, cfg: &WalkConfig, replica: u64, rng: StreamRng) -> TrajectorySummary {
    match cfg.mode {
        WalkMode::Direct => drive_direct([shared], [replica], [rng], cfg).pop().unwrap(),
        WalkMode::Hybrid => {
            drive_hybrid(shared, replica, rng, cfg).unwrap_or_else(|e| TrajectorySummary::failed(replica, cfg.t, e.to_string()))
        }
    }
}

fn pool(workers: usize) -> Result<rayon::ThreadPool, WalkError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| WalkError::Pool(e.to_string()))
}

/// Runs replicas `0..n`, each through `make(i)`, four to a group, on `workers` threads.
fn run_batch<F>(n: u64, cfg: &WalkConfig, workers: usize, make: F) -> Result<Vec<TrajectorySummary>, WalkError>
where
    F: Fn(u64) -> (Result<Arc<SharedTerrain>, PotentialError>, StreamRng) + Sync,
{
    cfg.validate()?;
    let groups: Vec<u64> = (0..n.div_ceil(4)).collect();
    let run_group = |g: &u64| -> Vec<TrajectorySummary> {
        let ids: Vec<u64> = (4 * g..(4 * g + 4).min(n)).collect();
        let made: Vec<_> = ids.iter().map(|&i| make(i)).collect();
        let all_ok = made.iter().all(|(s, _)| s.is_ok());
        if cfg.mode == WalkMode::Direct && ids.len() == 4 && all_ok {
            let terr: Vec<Arc<SharedTerrain>> = made.iter().map(|(s, _)| s.clone().unwrap()).collect();
            let rngs: [StreamRng; 4] = std::array::from_fn(|l| made[l].1.clone());
            drive_direct(
                [&*terr[0], &*terr[1], &*terr[2], &*terr[3]],
                [ids[0], ids[1], ids[2], ids[3]],
                rngs,
                cfg,
            )
        } else {
            made.into_iter()
                .zip(&ids)
                .map(|((s, rng), &i)| match s {
                    Ok(s) => run_trajectory(&s, cfg, i, rng),
                    Err(e) => TrajectorySummary::failed(i, cfg.t, e.to_string()),
                })
                .collect()
        }
    };
    let out: Vec<Vec<TrajectorySummary>> = pool(workers)?.install(|| groups.par_iter().map(run_group).collect());
    Ok(out.into_iter().flatten().collect())
}

/// Annealed batch: replica `i` gets environment seed `(seed, "env", i)` and walk stream `(seed, "walk", i)`.
pub fn run_annealed(family: &EnvFamily, kappa: f64, cfg: &WalkConfig, n: u64, workers: usize) -> Result<Vec<TrajectorySummary>, WalkError> {
    let horizon = Horizon::new(cfg.t as f64, kappa).map_err(|_| WalkError::BadHorizon(cfg.t))?;
    run_batch(n, cfg, workers, |i| {
        let terrain = SharedTerrain::sample(family, horizon, derive_seed(cfg.seed, "env", i)).map(Arc::new);
        (terrain, stream(cfg.seed, "walk", i))
    })
}

/// Quenched batch: `n` walks on one terrain, walk `i` on stream `(walk_seed, "walk", i)`.
pub fn run_quenched(shared: &Arc<SharedTerrain>, cfg: &WalkConfig, walk_seed: u64, n: u64, workers: usize) -> Result<Vec<TrajectorySummary>, WalkError> {
    run_batch(n, cfg, workers, |i| (Ok(shared.clone()), stream(walk_seed, "walk", i)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env_model::Environment;
    use crate::walker::step_walk;

    fn lognormal() -> EnvFamily {
        EnvFamily::LogNormal { mu: -0.25, sigma: 1.0 }
    }

    #[test]
    fn config_validation() {
        assert!(WalkConfig::new(100, vec![2.0], 1.0, 1).validate().is_ok());
        assert_eq!(WalkConfig::new(100, vec![1.0], 1.0, 1).validate(), Err(WalkError::BadRatio(1.0)));
        let mut c = WalkConfig::new(100, vec![2.0], 1.0, 1);
        c.step_cap = 150;
        assert!(matches!(c.validate(), Err(WalkError::CapTooSmall { .. })));
        assert_eq!(WalkConfig::new(100, vec![1.5, 2.0, 1.5], 1.0, 1).obs_times(), vec![100, 150, 200]);
    }

    #[test]
    fn lanes_and_single_walker_agree() {
        let cfg = WalkConfig::new(3000, vec![1.5, 2.0], 1.0, 17);
        let hz = Horizon::new(3000.0, 0.5).unwrap();
        let terrains: Vec<SharedTerrain> = (0..4)
            .map(|i| SharedTerrain::sample(&lognormal(), hz, derive_seed(17, "env", i)).unwrap())
            .collect();
        let grouped = drive_direct(
            [&terrains[0], &terrains[1], &terrains[2], &terrains[3]],
            [0, 1, 2, 3],
            std::array::from_fn(|i| stream(17, "walk", i as u64)),
            &cfg,
        );
        for (i, g) in grouped.iter().enumerate() {
            let fresh = SharedTerrain::sample(&lognormal(), hz, derive_seed(17, "env", i as u64)).unwrap();
            let single = run_trajectory(&fresh, &cfg, i as u64, stream(17, "walk", i as u64));
            assert_eq!(g, &single);
            // the endpoint matches a plain walk on the same environment
            let mut pot = fresh.snapshot().potential().clone();
            let x = step_walk(&mut pot, 0, cfg.t, &mut stream(17, "walk", i as u64)).unwrap();
            assert_eq!(x, g.x_t);
        }
    }

    #[test]
    fn entries_follow_the_path() {
        let cfg = WalkConfig::new(20_000, vec![2.0], 1.0, 5);
        let hz = Horizon::new(20_000.0, 0.5).unwrap();
        let mut entered = 0;
        for i in 0..6u64 {
            let shared = SharedTerrain::sample(&lognormal(), hz, derive_seed(5, "env", i)).unwrap();
            let s = run_trajectory(&shared, &cfg, i, stream(5, "walk", i));
            assert!(s.ok());
            let snap = shared.snapshot();
            // replay the path one step at a time and compare first visits
            let mut pot = snap.potential().clone();
            let path = crate::walker::step_path(&mut pot, 0, cfg.last_time() as usize, &mut stream(5, "walk", i)).unwrap();
            for (k, v) in snap.valleys().iter().enumerate().take(s.entries.len()) {
                let first = path.iter().skip(1).position(|&x| x == v.b).map(|p| p as u64 + 1);
                assert_eq!(s.entries[k], first, "valley {}", k + 1);
                if let Some(t0) = first {
                    let exit = path
                        .iter()
                        .enumerate()
                        .skip(t0 as usize)
                        .find(|(_, &x)| x == v.d)
                        .map(|(n, _)| n as u64);
                    assert_eq!(s.exits[k], exit);
                }
            }
            let ells: Vec<usize> = std::iter::once(s.ell_t).chain(s.ell_th.iter().copied()).collect();
            assert!(ells.windows(2).all(|w| w[0] <= w[1]));
            assert_eq!(s.x_t, path[cfg.t as usize]);
            entered += s.entries.iter().flatten().count();
        }
        assert!(entered > 0);
    }

    #[test]
    fn valley_at_origin_waits_for_a_return() {
        // V climbs 8 from the origin, falls back below it, then keeps falling
        let mut incs = vec![0.0];
        incs.extend(std::iter::repeat_n(1.0, 8));
        incs.extend(std::iter::repeat_n(-1.0, 40));
        incs.extend(std::iter::repeat_n(-1.0, 400));
        let mut lr = vec![-1.0; 100];
        lr.extend(incs);
        let env = Environment::from_log_rho(-100, lr);
        let pot = Potential::new(env).unwrap();
        let hz = Horizon { t: 100.0, kappa: 0.5, h_t: 5.0, d_t: 3.0, n_t: 3, scan_limit: 40 };
        let shared = SharedTerrain::new(Terrain::new(pot, hz));
        let snap = shared.cover(-20, 20).unwrap();
        assert_eq!(snap.valleys()[0].b, 0);
        let cfg = WalkConfig::new(100, vec![2.0], 1.0, 9);
        let mut returned = 0;
        for i in 0..20 {
            let s = run_trajectory(&shared, &cfg, i, stream(9, "walk", i));
            assert!(s.ok(), "{:?}", s.error);
            if let Some(t1) = s.entries.first().copied().flatten() {
                assert!(t1 >= 2 && t1 % 2 == 0);
                returned += 1;
            }
        }
        assert!(returned > 10);
    }
}
