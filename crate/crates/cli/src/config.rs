use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use rwre_core::env_model::{Atom, EnvFamily};
use rwre_core::trajectory::WalkMode;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    EnvAudit,
    Valleys,
    Aging,
    Localization,
    ClockCompare,
    Renewal,
    OracleSuite,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::EnvAudit => "env-audit",
            Experiment::Valleys => "valleys",
            Experiment::Aging => "aging",
            Experiment::Localization => "localization",
            Experiment::ClockCompare => "clock-compare",
            Experiment::Renewal => "renewal",
            Experiment::OracleSuite => "oracle-suite",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FamilyKind {
    Lognormal,
    Beta,
    Discrete,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Direct,
    Hybrid,
}

/// Flags shared by every subcommand; each overrides the matching field of `--config`.
#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// JSON run configuration; flags override its fields
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Law of log rho
    #[arg(long = "family", alias = "kappa-family", value_enum)]
    pub family: Option<FamilyKind>,
    #[arg(long, allow_hyphen_values = true)]
    pub mu: Option<f64>,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    /// Discrete atoms as `rho:p,rho:p,...`
    #[arg(long)]
    pub atoms: Option<String>,
    /// Time horizons, scientific notation allowed (`1e4,1e5`)
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub t: Option<Vec<f64>>,
    /// Aging ratios
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub h: Option<Vec<f64>>,
    /// Window coefficient: windows are `eta log t`
    #[arg(long, allow_hyphen_values = true)]
    pub eta: Option<f64>,
    /// Total-variation threshold for the clock comparison
    #[arg(long, allow_hyphen_values = true)]
    pub delta: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub replicas: Option<i64>,
    #[arg(long, allow_hyphen_values = true)]
    pub envs: Option<i64>,
    #[arg(long, allow_hyphen_values = true)]
    pub walks: Option<i64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', value_enum)]
    pub formats: Option<Vec<Format>>,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    /// Exit with status 4 when the experiment's acceptance gate fails
    #[arg(long)]
    pub gate: bool,
}

/// The JSON document accepted by `--config`; every field is optional there.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub env: Option<EnvFamily>,
    pub t: Option<Vec<f64>>,
    pub h: Option<Vec<f64>>,
    pub eta: Option<f64>,
    pub delta: Option<f64>,
    pub replicas: Option<i64>,
    pub envs: Option<i64>,
    pub walks: Option<i64>,
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub out: Option<PathBuf>,
    pub formats: Option<Vec<Format>>,
    pub mode: Option<WalkMode>,
    pub gate: Option<bool>,
}

/// A validated run configuration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub experiment: Experiment,
    pub env: EnvFamily,
    pub t: Vec<u64>,
    pub h: Vec<f64>,
    pub eta: f64,
    pub delta: f64,
    pub replicas: u64,
    pub envs: u64,
    pub walks: u64,
    pub seed: u64,
    pub mode: WalkMode,
    #[serde(skip)]
    pub workers: usize,
    #[serde(skip)]
    pub out: PathBuf,
    #[serde(skip)]
    pub formats: Vec<Format>,
    #[serde(skip)]
    pub gate: bool,
}

fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

pub fn load_file(path: &Path) -> Result<FileConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| config_err(format!("{}: {e}", path.display())))
}

fn parse_atoms(s: &str) -> Result<Vec<Atom>, CliError> {
    s.split(',')
        .map(|pair| {
            let (rho, p) = pair.split_once(':').ok_or_else(|| config_err(format!("atom `{pair}` is not rho:p")))?;
            let num = |v: &str| v.trim().parse::<f64>().map_err(|_| config_err(format!("bad number `{v}` in atoms")));
            Ok(Atom { rho: num(rho)?, p: num(p)? })
        })
        .collect()
}

fn family_from_flags(args: &RunArgs, file: Option<&EnvFamily>) -> Result<EnvFamily, CliError> {
    let kind = args.family.or(match file {
        Some(EnvFamily::LogNormal { .. }) => Some(FamilyKind::Lognormal),
        Some(EnvFamily::Beta { .. }) => Some(FamilyKind::Beta),
        Some(EnvFamily::Discrete { .. }) => Some(FamilyKind::Discrete),
        None => None,
    });
    let missing = |what: &str| config_err(format!("missing --{what} for the chosen family"));
    match kind {
        None => Err(config_err("no environment law: pass --family (with its parameters) or `env` in --config")),
        Some(FamilyKind::Lognormal) => {
            let (fm, fs) = match file {
                Some(EnvFamily::LogNormal { mu, sigma }) => (Some(*mu), Some(*sigma)),
                _ => (None, None),
            };
            Ok(EnvFamily::LogNormal {
                mu: args.mu.or(fm).ok_or_else(|| missing("mu"))?,
                sigma: args.sigma.or(fs).ok_or_else(|| missing("sigma"))?,
            })
        }
        Some(FamilyKind::Beta) => {
            let (fa, fb) = match file {
                Some(EnvFamily::Beta { alpha, beta }) => (Some(*alpha), Some(*beta)),
                _ => (None, None),
            };
            Ok(EnvFamily::Beta {
                alpha: args.alpha.or(fa).ok_or_else(|| missing("alpha"))?,
                beta: args.beta.or(fb).ok_or_else(|| missing("beta"))?,
            })
        }
        Some(FamilyKind::Discrete) => {
            let atoms = match (&args.atoms, file) {
                (Some(s), _) => parse_atoms(s)?,
                (None, Some(EnvFamily::Discrete { atoms })) => atoms.clone(),
                _ => return Err(missing("atoms")),
            };
            Ok(EnvFamily::Discrete { atoms })
        }
    }
}

fn count(name: &str, v: Option<i64>, default: u64) -> Result<u64, CliError> {
    match v {
        None => Ok(default),
        Some(n) if n >= 1 => Ok(n as u64),
        Some(n) => Err(config_err(format!("--{name} must be at least 1, got {n}"))),
    }
}

pub fn resolve(experiment: Experiment, args: &RunArgs) -> Result<RunConfig, CliError> {
    let file = match &args.config {
        Some(p) => load_file(p)?,
        None => FileConfig::default(),
    };
    let env = family_from_flags(args, file.env.as_ref())?;
    let t_raw = args.t.clone().or(file.t).unwrap_or_else(|| vec![1e4]);
    if t_raw.is_empty() {
        return Err(config_err("empty --t grid"));
    }
    let mut t = Vec::with_capacity(t_raw.len());
    for x in t_raw {
        if !(x.is_finite() && (3.0..1e18).contains(&x)) {
            return Err(config_err(format!("grid value t = {x} must be at least 3")));
        }
        t.push(x.floor() as u64);
    }
    let h = args.h.clone().or(file.h).unwrap_or_else(|| vec![2.0]);
    if let Some(bad) = h.iter().find(|&&x| !(x > 1.0 && x.is_finite())) {
        return Err(config_err(format!("aging ratio h = {bad} must exceed 1")));
    }
    let eta = args.eta.or(file.eta).unwrap_or(1.0);
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(config_err(format!("--eta must be positive, got {eta}")));
    }
    let delta = args.delta.or(file.delta).unwrap_or(0.25);
    if !(delta > 0.0 && delta < 1.0) {
        return Err(config_err(format!("--delta must lie in (0, 1), got {delta}")));
    }
    let default_envs = if experiment == Experiment::OracleSuite { 100 } else { 50 };
    let seed = args
        .seed
        .or(file.seed)
        .ok_or_else(|| config_err("--seed is required; runs never draw implicit entropy"))?;
    let workers = args.workers.or(file.workers).unwrap_or(1);
    if workers == 0 {
        return Err(config_err("--workers must be at least 1"));
    }
    let formats = args.formats.clone().or(file.formats).unwrap_or_else(|| vec![Format::Json, Format::Csv]);
    let mode = match args.mode {
        Some(ModeArg::Direct) => WalkMode::Direct,
        Some(ModeArg::Hybrid) => WalkMode::Hybrid,
        None => file.mode.unwrap_or(WalkMode::Direct),
    };
    Ok(RunConfig {
        experiment,
        env,
        t,
        h,
        eta,
        delta,
        replicas: count("replicas", args.replicas.or(file.replicas), 1000)?,
        envs: count("envs", args.envs.or(file.envs), default_envs)?,
        walks: count("walks", args.walks.or(file.walks), 2000)?,
        seed,
        mode,
        workers,
        out: args.out.clone().or(file.out).unwrap_or_else(|| PathBuf::from("out")),
        formats,
        gate: args.gate || file.gate.unwrap_or(false),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> RunArgs {
        RunArgs { family: Some(FamilyKind::Lognormal), mu: Some(-0.25), sigma: Some(1.0), seed: Some(1), ..Default::default() }
    }

    #[test]
    fn defaults_and_flooring() {
        let mut a = base();
        a.t = Some(vec![1e4, 12345.7]);
        let c = resolve(Experiment::Aging, &a).unwrap();
        assert_eq!(c.t, vec![10_000, 12_345]);
        assert_eq!(c.h, vec![2.0]);
        assert_eq!(c.formats, vec![Format::Json, Format::Csv]);
    }

    #[test]
    fn invalid_values_are_config_errors() {
        let mut a = base();
        a.replicas = Some(0);
        assert!(matches!(resolve(Experiment::Aging, &a), Err(CliError::Config(_))));
        let mut a = base();
        a.t = Some(vec![2.0]);
        assert!(matches!(resolve(Experiment::Aging, &a), Err(CliError::Config(_))));
        let mut a = base();
        a.seed = None;
        assert!(matches!(resolve(Experiment::Aging, &a), Err(CliError::Config(_))));
        let mut a = base();
        a.h = Some(vec![1.0]);
        assert!(matches!(resolve(Experiment::Aging, &a), Err(CliError::Config(_))));
    }

    #[test]
    fn atoms_parse() {
        let atoms = parse_atoms("3:0.3, 1.5:0.1,0.3:0.6").unwrap();
        assert_eq!(atoms.len(), 3);
        assert_eq!(atoms[1].rho, 1.5);
        assert!(parse_atoms("3;0.3").is_err());
    }

    #[test]
    fn workers_and_paths_stay_out_of_the_hashed_config() {
        let mut a = base();
        a.workers = Some(4);
        let v = serde_json::to_value(resolve(Experiment::Aging, &a).unwrap()).unwrap();
        assert!(v.get("workers").is_none() && v.get("out").is_none());
        assert_eq!(v["experiment"], "aging");
    }
}
