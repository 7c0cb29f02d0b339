use std::fs;
use std::path::Path;
use std::time::Instant;

use rwre_core::env_model::{validate_spec, EnvSpec};
use rwre_core::experiments::{
    annealed_report, clock_report, env_audit, oracle_suite, wilson_interval, Cell, CellFlags, Distance, ExperimentError,
    ExperimentReport, Grid, CI_LEVEL,
};
use rwre_core::potential::{good_env_diagnostics, valley_record, DiagnosticsConfig, Horizon, Potential};
use rwre_core::seeding::derive_seed;
use rwre_core::trajectory::TrajectorySummary;
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::config::{Experiment, Format, RunConfig};
use crate::CliError;

pub const ROWS_SCHEMA: &str = "rows.v1";

/// Everything an experiment produced, before it is written out.
pub struct Artifacts {
    pub report: ExperimentReport,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
    /// `None` when the experiment has no acceptance gate.
    pub gate: Option<(bool, String)>,
    pub failed_replicas: u64,
}

fn exp_err(e: ExperimentError) -> CliError {
    match e {
        ExperimentError::Lattice | ExperimentError::Domain(_) | ExperimentError::Empty | ExperimentError::Env(_) => {
            CliError::Config(e.to_string())
        }
        other => CliError::Budget(other.to_string()),
    }
}

pub fn config_hash(cfg: &RunConfig) -> String {
    let bytes = serde_json::to_vec(cfg).expect("config serializes");
    Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn deterministic_manifest(cfg: &RunConfig, spec: &EnvSpec, diag: &DiagnosticsConfig) -> serde_json::Value {
    json!({
        "config_hash": config_hash(cfg),
        "seed": cfg.seed,
        "version": env!("CARGO_PKG_VERSION"),
        "kappa": spec.kappa,
        "non_lattice": spec.non_lattice,
        "diagnostics": diag,
        "rows_schema": ROWS_SCHEMA,
    })
}

fn trajectory_rows(rows: &[TrajectorySummary], n_h: usize) -> (Vec<String>, Vec<Vec<String>>) {
    (TrajectorySummary::csv_header(n_h), rows.iter().map(|r| r.csv_record()).collect())
}

fn nonincreasing(xs: &[f64]) -> bool {
    xs.windows(2).all(|w| w[1] <= w[0])
}

fn increasing(xs: &[f64]) -> bool {
    xs.windows(2).all(|w| w[1] > w[0])
}

fn decreasing(xs: &[f64]) -> bool {
    xs.windows(2).all(|w| w[1] < w[0])
}

fn aging_gate(rep: &ExperimentReport, cfg: &RunConfig) -> (bool, String) {
    let t_max = *cfg.t.iter().max().unwrap();
    let mut ok = true;
    let mut notes = Vec::new();
    for &h in &cfg.h {
        let errs: Vec<f64> = cfg.t.iter().map(|&t| rep.cell("aging", t, Some(h)).and_then(Cell::error).unwrap()).collect();
        let last = rep.cell("aging", t_max, Some(h)).and_then(Cell::error).unwrap();
        let pass = last <= 0.10 && nonincreasing(&errs);
        ok &= pass;
        notes.push(format!("h={h}: |error| {errs:.4?}"));
    }
    (ok, notes.join("; "))
}

fn localization_gate(rep: &ExperimentReport, cfg: &RunConfig) -> (bool, String) {
    let rates: Vec<f64> = cfg.t.iter().map(|&t| rep.cell("localization", t, None).unwrap().estimate).collect();
    (*rates.last().unwrap() > 0.85 && increasing(&rates), format!("rates {rates:.4?}"))
}

fn renewal_gate(rep: &ExperimentReport, cfg: &RunConfig) -> (bool, String) {
    let ks: Vec<f64> = cfg.t.iter().map(|&t| rep.distance("ks_left", t).unwrap().value).collect();
    let sandwich = rep.cell("sandwich", *cfg.t.last().unwrap(), None).unwrap().estimate;
    (decreasing(&ks) && sandwich > 0.9, format!("left KS {ks:.4?}, sandwich {sandwich:.4}"))
}

fn clock_gate(rep: &ExperimentReport, cfg: &RunConfig) -> (bool, String) {
    let med: Vec<f64> = cfg.t.iter().map(|&t| rep.distance("median_tv", t).unwrap().value).collect();
    let last = *med.last().unwrap();
    (last < cfg.delta && decreasing(&med), format!("median TV {med:.4?}"))
}

fn annealed(cfg: &RunConfig, spec: &EnvSpec, keep: &[&str]) -> Result<(ExperimentReport, Vec<TrajectorySummary>), CliError> {
    let (mut rep, rows) =
        annealed_report(spec, &cfg.t, &cfg.h, cfg.eta, cfg.replicas, cfg.seed, cfg.workers, cfg.mode).map_err(exp_err)?;
    rep.cells.retain(|c| keep.contains(&c.metric.as_str()));
    rep.distances.retain(|d| keep.contains(&d.metric.as_str()));
    Ok((rep, rows))
}

fn valleys(cfg: &RunConfig, spec: &EnvSpec, diag: &DiagnosticsConfig) -> Result<Artifacts, CliError> {
    let mut report = ExperimentReport::new("valleys", spec.kappa, Grid { t: cfg.t.clone(), h: Vec::new(), eta: diag.eta });
    let header: Vec<String> = [
        "env", "t", "valley", "excursion", "a", "b", "t_up", "c", "c_bar", "d_bar", "d", "height", "log_weight",
        "within_horizon", "width_ok", "fluctuation_ok", "sharp_ok",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    let mut rows = Vec::new();
    let mut failed = 0;
    for &t in &cfg.t {
        let hz = Horizon::new(t as f64, spec.kappa).map_err(|e| CliError::Config(e.to_string()))?;
        let (mut good, mut ok, mut k_sum) = (0u64, 0u64, 0usize);
        for j in 0..cfg.envs {
            let Ok(mut pot) = Potential::sample(&spec.family, -1024, 4096, derive_seed(cfg.seed, "env", j)) else {
                failed += 1;
                continue;
            };
            let Ok((sv, d)) = good_env_diagnostics(&mut pot, &hz, diag) else {
                failed += 1;
                continue;
            };
            ok += 1;
            good += u64::from(d.good());
            k_sum += d.k_t;
            for v in sv.valleys.iter().chain(sv.next.iter()) {
                let r = valley_record(&pot, v, &hz, diag, d.k_t);
                let v = r.valley;
                rows.push(vec![
                    j.to_string(),
                    t.to_string(),
                    v.index.to_string(),
                    v.excursion.to_string(),
                    v.a.to_string(),
                    v.b.to_string(),
                    v.t_up.to_string(),
                    v.c.to_string(),
                    v.c_bar.to_string(),
                    v.d_bar.to_string(),
                    v.d.to_string(),
                    format!("{}", v.height),
                    format!("{}", v.log_weight),
                    r.flags.within_horizon.to_string(),
                    r.flags.width_ok.to_string(),
                    r.flags.fluctuation_ok.to_string(),
                    r.flags.sharp_ok.to_string(),
                ]);
            }
        }
        if ok == 0 {
            return Err(CliError::Budget(format!("no environment could be surveyed at t = {t}")));
        }
        let (ci_lo, ci_hi) = wilson_interval(good, ok, CI_LEVEL).map_err(exp_err)?;
        report.cells.push(Cell {
            metric: "good_env".into(),
            t,
            h: None,
            eta: diag.eta,
            estimate: good as f64 / ok as f64,
            ci_lo,
            ci_hi,
            reference: Some(1.0),
            n: ok,
            flags: CellFlags { failed: cfg.envs - ok, excluded: 0 },
        });
        report.distances.push(Distance { metric: "mean_k_t".into(), t, value: k_sum as f64 / ok as f64, n: ok, p_value: None });
    }
    Ok(Artifacts { report, header, rows, gate: None, failed_replicas: failed })
}

fn env_audit_run(cfg: &RunConfig, spec: &EnvSpec, diag: &DiagnosticsConfig) -> Result<Artifacts, CliError> {
    let mut report = ExperimentReport::new("env-audit", spec.kappa, Grid { t: cfg.t.clone(), h: Vec::new(), eta: diag.eta });
    let header = ["t", "event", "rate", "n_env", "failed"].iter().map(|s| s.to_string()).collect();
    let mut rows = Vec::new();
    let mut failed = 0;
    for &t in &cfg.t {
        let audit = env_audit(spec, t, cfg.envs, cfg.seed, diag).map_err(exp_err)?;
        failed += audit.failed;
        let n = audit.n_env - audit.failed;
        for (event, &rate) in &audit.rates {
            let hits = (rate * n as f64).round() as u64;
            let (ci_lo, ci_hi) = wilson_interval(hits, n, CI_LEVEL).map_err(exp_err)?;
            report.cells.push(Cell {
                metric: event.clone(),
                t,
                h: None,
                eta: diag.eta,
                estimate: rate,
                ci_lo,
                ci_hi,
                reference: Some(1.0),
                n,
                flags: CellFlags { failed: audit.failed, excluded: 0 },
            });
            rows.push(vec![t.to_string(), event.clone(), format!("{rate}"), n.to_string(), audit.failed.to_string()]);
        }
        report.distances.push(Distance { metric: "mean_k_t".into(), t, value: audit.mean_k_t, n, p_value: None });
    }
    Ok(Artifacts { report, header, rows, gate: None, failed_replicas: failed })
}

pub fn run(cfg: &RunConfig) -> Result<Artifacts, CliError> {
    let spec = validate_spec(cfg.env.clone()).map_err(|e| CliError::Config(e.to_string()))?;
    let diag = DiagnosticsConfig::for_spec(&spec);
    let needs_non_lattice = !matches!(cfg.experiment, Experiment::EnvAudit | Experiment::Valleys | Experiment::OracleSuite);
    if needs_non_lattice && !spec.non_lattice {
        return Err(CliError::Config(format!("the law is lattice; `{}` needs a non-lattice law", cfg.experiment.name())));
    }
    let mut art = match cfg.experiment {
        Experiment::Aging | Experiment::Localization | Experiment::Renewal => {
            let keep: &[&str] = match cfg.experiment {
                Experiment::Aging => &["aging"],
                Experiment::Localization => &["localization"],
                _ => &["sandwich", "ks_left", "ks_right"],
            };
            let (report, rows) = annealed(cfg, &spec, keep)?;
            let gate = match cfg.experiment {
                Experiment::Aging => aging_gate(&report, cfg),
                Experiment::Localization => localization_gate(&report, cfg),
                _ => renewal_gate(&report, cfg),
            };
            let failed = rows.iter().filter(|r| !r.ok()).count() as u64;
            let (header, rows) = trajectory_rows(&rows, cfg.h.len());
            Artifacts { report, header, rows, gate: Some(gate), failed_replicas: failed }
        }
        Experiment::ClockCompare => {
            let (report, cmps) =
                clock_report(&spec, &cfg.t, cfg.delta, cfg.envs, cfg.walks, cfg.seed, cfg.workers).map_err(exp_err)?;
            let law = |m: &std::collections::BTreeMap<usize, f64>| {
                m.iter().map(|(k, p)| format!("{k}:{p}")).collect::<Vec<_>>().join(";")
            };
            let mut rows = Vec::new();
            let mut failed = 0;
            for c in &cmps {
                for e in &c.per_env {
                    failed += e.failed_walks;
                    rows.push(vec![
                        c.t.to_string(),
                        e.env.to_string(),
                        e.k_t.to_string(),
                        format!("{}", e.tv),
                        format!("{}", e.occupation_gap),
                        e.failed_walks.to_string(),
                        law(&e.walk_law),
                        law(&e.clock_law),
                    ]);
                }
            }
            let header = ["t", "env", "k_t", "tv", "occupation_gap", "failed_walks", "walk_law", "clock_law"]
                .iter()
                .map(|s| s.to_string())
                .collect();
            let gate = clock_gate(&report, cfg);
            Artifacts { report, header, rows, gate: Some(gate), failed_replicas: failed }
        }
        Experiment::OracleSuite => {
            let max_len = 1000;
            let rep = oracle_suite(&spec.family, cfg.envs, max_len, cfg.seed).map_err(exp_err)?;
            let mut report = ExperimentReport::new("oracle-suite", spec.kappa, Grid { t: Vec::new(), h: Vec::new(), eta: cfg.eta });
            let quantities = [
                ("hit_prob", rep.hit_prob),
                ("escape_prob", rep.escape_prob),
                ("reflected_time", rep.reflected_time),
                ("stationarity", rep.stationarity),
            ];
            let mut rows = Vec::new();
            for (name, err) in quantities {
                report.distances.push(Distance { metric: name.into(), t: 0, value: err, n: rep.checks / 4, p_value: None });
                rows.push(vec![name.to_string(), format!("{err:e}"), (rep.checks / 4).to_string()]);
            }
            let header = ["quantity", "max_rel_error", "checks"].iter().map(|s| s.to_string()).collect();
            let worst = rep.worst();
            Artifacts { report, header, rows, gate: Some((worst <= 1e-10, format!("worst relative error {worst:e}"))), failed_replicas: 0 }
        }
        Experiment::Valleys => valleys(cfg, &spec, &diag)?,
        Experiment::EnvAudit => env_audit_run(cfg, &spec, &diag)?,
    };
    art.report.experiment = cfg.experiment.name().into();
    art.report.config = serde_json::to_value(cfg).expect("config serializes");
    art.report.manifest = deterministic_manifest(cfg, &spec, &diag);
    Ok(art)
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

/// Writes `report.json`, `rows.csv` (as requested) and `manifest.json` into the output directory.
pub fn write(cfg: &RunConfig, art: &Artifacts, started: Instant) -> Result<(), CliError> {
    let dir = &cfg.out;
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    if cfg.formats.contains(&Format::Json) {
        let path = dir.join("report.json");
        let mut text = serde_json::to_string_pretty(&art.report).expect("report serializes");
        text.push('\n');
        fs::write(&path, text).map_err(|e| io_err(&path, e))?;
    }
    if cfg.formats.contains(&Format::Csv) {
        let path = dir.join("rows.csv");
        let mut w = csv::Writer::from_path(&path).map_err(|e| io_err(&path, e))?;
        w.write_record(&art.header).map_err(|e| io_err(&path, e))?;
        for r in &art.rows {
            w.write_record(r).map_err(|e| io_err(&path, e))?;
        }
        w.flush().map_err(|e| io_err(&path, e))?;
    }
    let mut manifest = art.report.manifest.clone();
    manifest["experiment"] = json!(cfg.experiment.name());
    manifest["workers"] = json!(cfg.workers);
    manifest["formats"] = json!(cfg.formats);
    manifest["wall_time_s"] = json!(started.elapsed().as_secs_f64());
    manifest["failed_replicas"] = json!(art.failed_replicas);
    manifest["gate"] = match &art.gate {
        Some((pass, detail)) => json!({ "pass": pass, "detail": detail }),
        None => serde_json::Value::Null,
    };
    let path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, text + "\n").map_err(|e| io_err(&path, e))
}
