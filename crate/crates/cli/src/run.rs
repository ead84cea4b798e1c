use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use friedrichs::metrics::{minimax_gap_probe, relative_errors_of, ErrorReport, GapReport};
use friedrichs::network::{Checkpoint, DerivOrder, FieldBatch, FieldModel};
use friedrichs::problems::Problem;
use friedrichs::sampler::Domain;
use friedrichs::trainer::{restore, HistoryRow, StopReason, TrainConfig, Trainer, HISTORY_HEADER};
use friedrichs::verify::{quadrature_points, trig_basis, verify_preset, Check};
use ndarray::Array2;
use serde::Serialize;

use crate::config::{Mode, RunConfig};
use crate::CliError;

pub const HISTORY_FILE: &str = "history.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const FIELD_FILE: &str = "field.csv";
pub const REPORT_FILE: &str = "report.json";
pub const VERIFY_FILE: &str = "verification.txt";
pub const CONFIG_FILE: &str = "run.toml";

/// Points per axis of the field dump grid.
const GRID: usize = 101;

/// Writes through a sibling temporary file so readers never see a partial
/// artifact.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub preset: String,
    pub mode: Mode,
    pub iterations: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stop_reason: Option<StopReason>,
    pub e_l2: f64,
    pub e_linf: Option<f64>,
    pub probe_points: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stored_e_l2: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gap: Option<GapReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wall_time_s: Option<f64>,
}

/// What a run produced.
#[derive(Debug)]
pub enum Outcome {
    Trained(Report),
    Evaluated(Report),
    Verified(Vec<Check>),
}

fn out_dir(cfg: &RunConfig, problem: &Problem) -> PathBuf {
    cfg.out.clone().unwrap_or_else(|| PathBuf::from("runs").join(&problem.name))
}

pub fn run(cfg: &RunConfig) -> Result<Outcome, CliError> {
    match cfg.mode() {
        Mode::Train | Mode::Baseline => train(cfg),
        Mode::Evaluate => evaluate(cfg),
        Mode::Verify => verify(cfg),
    }
}

fn history_csv(rows: &[HistoryRow]) -> String {
    let mut s = String::from(HISTORY_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&r.csv());
        s.push('\n');
    }
    s
}

fn save_checkpoint(trainer: &Trainer, cfg: &RunConfig, e_l2: f64, path: &Path) -> Result<(), CliError> {
    let mut ckpt = trainer.checkpoint();
    let run = serde_json::to_value(cfg).map_err(|e| CliError::Config(e.to_string()))?;
    ckpt.metadata["run"] = run;
    ckpt.metadata["e_l2"] = e_l2.into();
    ckpt.save(path)?;
    Ok(())
}

fn train(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let problem = cfg.build_problem()?;
    let baseline = cfg.mode() == Mode::Baseline;
    let base = if baseline {
        problem.baseline.clone().unwrap_or_else(|| problem.train.clone())
    } else {
        problem.train.clone()
    };
    let tc: TrainConfig = cfg.train_config(&base);
    let dir = out_dir(cfg, &problem);
    fs::create_dir_all(&dir)?;
    let mut trainer = if baseline {
        Trainer::baseline(&problem, tc)?
    } else {
        Trainer::new(&problem, tc)?
    };
    write_atomic(&dir.join(CONFIG_FILE), cfg.to_toml()?.as_bytes())?;
    let ckpt_path = dir.join(CHECKPOINT_FILE);
    let hist_path = dir.join(HISTORY_FILE);
    write_atomic(&hist_path, history_csv(&[]).as_bytes())?;
    // A divergent run aborts with the most recent checkpoint on disk; this
    // one covers a failure before the first record.
    save_checkpoint(&trainer, cfg, trainer.evaluate()?.l2, &ckpt_path)?;
    let stop = trainer.run(|t, row| {
        let io = || -> Result<(), CliError> {
            write_atomic(&hist_path, history_csv(&t.history).as_bytes())?;
            save_checkpoint(t, cfg, row.e_l2, &ckpt_path)
        };
        io().map_err(|e| friedrichs::trainer::TrainError::InvalidConfig(format!("writing artifacts: {e}")))
    })?;
    let errors = trainer.evaluate()?;
    if trainer.history.last().is_none_or(|r| r.iteration != trainer.iteration) {
        save_checkpoint(&trainer, cfg, errors.l2, &ckpt_path)?;
    }
    dump_field(&problem, &trainer.solution, &dir.join(FIELD_FILE))?;
    let gap = if baseline {
        None
    } else {
        gap_report(&problem, &trainer.solution, &trainer.test).ok()
    };
    let report = Report {
        preset: problem.name.clone(),
        mode: cfg.mode(),
        iterations: trainer.iteration,
        stop_reason: Some(stop),
        e_l2: errors.l2,
        e_linf: errors.linf,
        probe_points: errors.points,
        stored_e_l2: None,
        gap,
        wall_time_s: trainer.history.last().map(|r| r.wall_time_s),
    };
    write_report(&dir, &report)?;
    Ok(Outcome::Trained(report))
}

/// Ratio achieved by the trained test field against the best ratio over a
/// fixed smooth basis, on a sampled point set.
fn gap_report(problem: &Problem, sol: &FieldModel, test: &FieldModel) -> Result<GapReport, CliError> {
    if problem.dim() > 3 {
        return Err(CliError::Config("no quadrature in this dimension".into()));
    }
    let pts = quadrature_points(problem, if problem.dim() == 2 { 32 } else { 10 })?;
    Ok(minimax_gap_probe(&problem.loss, sol, test, &trig_basis(problem), &pts)?)
}

fn write_report(dir: &Path, report: &Report) -> Result<(), CliError> {
    let json = serde_json::to_string_pretty(report).map_err(|e| CliError::Config(e.to_string()))?;
    write_atomic(&dir.join(REPORT_FILE), json.as_bytes())
}

fn evaluate(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let path = cfg
        .checkpoint
        .clone()
        .or_else(|| cfg.out.as_ref().map(|d| d.join(CHECKPOINT_FILE)))
        .ok_or_else(|| CliError::Config("evaluate needs --checkpoint".into()))?;
    let ckpt = Checkpoint::load(&path)?;
    let stored: RunConfig = serde_json::from_value(ckpt.metadata["run"].clone())
        .map_err(|e| CliError::Config(format!("checkpoint has no run configuration: {e}")))?;
    let problem = stored.build_problem()?;
    let restored = restore(&problem, &ckpt)?;
    let probes = friedrichs::metrics::probe_points(&problem.domain, restored.config.probe_points, problem.probe_seed)?;
    let approx = restored.solution.evaluate(&probes)?;
    let reference = FieldBatch::eval(&problem.exact, &probes, problem.components(), DerivOrder::Value).value;
    let errors: ErrorReport = relative_errors_of(&approx, &reference, problem.continuous)?;
    let dir = cfg.out.clone().unwrap_or_else(|| path.parent().map(Path::to_path_buf).unwrap_or_default());
    fs::create_dir_all(&dir)?;
    dump_field(&problem, &restored.solution, &dir.join(FIELD_FILE))?;
    let report = Report {
        preset: problem.name.clone(),
        mode: Mode::Evaluate,
        iterations: restored.iteration,
        stop_reason: None,
        e_l2: errors.l2,
        e_linf: errors.linf,
        probe_points: errors.points,
        stored_e_l2: ckpt.metadata["e_l2"].as_f64(),
        gap: None,
        wall_time_s: None,
    };
    write_report(&dir, &report)?;
    Ok(Outcome::Evaluated(report))
}

fn verify(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let problem = cfg.build_problem()?;
    let checks = verify_preset(&problem)?;
    let dir = out_dir(cfg, &problem);
    fs::create_dir_all(&dir)?;
    let text: String = checks.iter().map(|c| format!("{c}\n")).collect();
    write_atomic(&dir.join(VERIFY_FILE), text.as_bytes())?;
    Ok(Outcome::Verified(checks))
}

/// A `GRID × GRID` slice through the domain: the first two coordinates
/// (the spatial ones for time-extruded domains, at the final time), other
/// coordinates at the box centre. Points outside the domain are dropped.
pub fn field_grid(domain: &Domain) -> Array2<f64> {
    let (lo, hi) = domain.bounding_box();
    let d = lo.len();
    let (axes, mut base): ([usize; 2], Vec<f64>) = match domain {
        Domain::Extruded { t1, .. } => {
            let mut b: Vec<f64> = lo.iter().zip(&hi).map(|(a, b)| 0.5 * (a + b)).collect();
            b[0] = *t1;
            ([1, 2], b)
        }
        _ => ([0, 1], lo.iter().zip(&hi).map(|(a, b)| 0.5 * (a + b)).collect()),
    };
    let mut rows = Vec::new();
    for i in 0..GRID {
        for j in 0..GRID {
            let s = i as f64 / (GRID - 1) as f64;
            let t = j as f64 / (GRID - 1) as f64;
            base[axes[0]] = lo[axes[0]] + s * (hi[axes[0]] - lo[axes[0]]);
            base[axes[1]] = lo[axes[1]] + t * (hi[axes[1]] - lo[axes[1]]);
            if domain.contains(&base) {
                rows.extend_from_slice(&base);
            }
        }
    }
    let n = rows.len() / d;
    Array2::from_shape_vec((n, d), rows).expect("rows of length d")
}

fn dump_field(problem: &Problem, model: &FieldModel, path: &Path) -> Result<(), CliError> {
    let pts = field_grid(&problem.domain);
    let phi = model.evaluate(&pts)?;
    let exact = FieldBatch::eval(&problem.exact, &pts, problem.components(), DerivOrder::Value).value;
    let d = pts.ncols();
    let r = phi.ncols();
    let mut s = String::new();
    let header: Vec<String> = (0..d)
        .map(|k| format!("x{k}"))
        .chain((0..r).map(|k| format!("phi{k}")))
        .chain((0..r).map(|k| format!("exact{k}")))
        .collect();
    s.push_str(&header.join(","));
    s.push('\n');
    for i in 0..pts.nrows() {
        let vals: Vec<String> = pts
            .row(i)
            .iter()
            .chain(phi.row(i).iter())
            .chain(exact.row(i).iter())
            .map(|v| format!("{v:e}"))
            .collect();
        s.push_str(&vals.join(","));
        s.push('\n');
    }
    write_atomic(path, s.as_bytes())
}
