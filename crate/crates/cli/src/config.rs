//! Run configuration: a TOML file plus command-line flags, layered over the
//! preset's defaults.

use std::path::PathBuf;

use friedrichs::loss::{BoundaryHandling, Denominator, LossConfig, PenaltyForm, Weighting};
use friedrichs::network::Activation;
use friedrichs::optim::OptimizerKind;
use friedrichs::problems::{elliptic_problem, preset, EllipticBoundary, Problem};
use friedrichs::trainer::{Plateau, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    #[default]
    Train,
    Evaluate,
    Verify,
    Baseline,
}

/// Training overrides keyed by the hyperparameter names of the experiment
/// tables.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainOverrides {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_s: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_t: Option<usize>,
    #[serde(rename = "N", skip_serializing_if = "Option::is_none")]
    pub interior: Option<usize>,
    #[serde(rename = "N_b", skip_serializing_if = "Option::is_none")]
    pub boundary: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eta_s0: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eta_t0: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nu_s: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nu_t: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub m_s: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub m_t: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub depth_s: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub depth_t: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub activation_s: Option<Activation>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub activation_t: Option<Activation>,
    /// Solution restart iterations.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theta_s: Option<Vec<usize>>,
    /// Widths of the fresh solution networks at each restart.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub restart_widths: Option<Vec<usize>>,
    /// Test restart iterations.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theta_t: Option<Vec<usize>>,
    /// Periodic test restarts (`0` disables).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theta_t_every: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub optimizer_s: Option<OptimizerKind>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub optimizer_t: Option<OptimizerKind>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eval_every: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub probe_points: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub plateau_window: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub plateau_rel: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target_error: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossOverrides {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub denominator: Option<Denominator>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weighting: Option<Weighting>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub boundary: Option<BoundaryHandling>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub penalty_form: Option<PenaltyForm>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda_s: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda_t: Option<f64>,
}

/// Geometry and formulation options of the presets that have any.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemOverrides {
    /// Dimension of the elliptic preset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub elliptic_boundary: Option<EllipticBoundary>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mode: Option<Mode>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "is_default")]
    pub problem: ProblemOverrides,
    #[serde(default, skip_serializing_if = "is_default")]
    pub train: TrainOverrides,
    #[serde(default, skip_serializing_if = "is_default")]
    pub loss: LossOverrides,
}

fn is_default<T: Default + PartialEq>(v: &T) -> bool {
    *v == T::default()
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<RunConfig, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string(self).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn mode(&self) -> Mode {
        self.mode.unwrap_or_default()
    }

    pub fn build_problem(&self) -> Result<Problem, CliError> {
        let name = self
            .preset
            .as_deref()
            .ok_or_else(|| CliError::Config("no preset given (use --preset or `preset = ...`)".into()))?;
        let p = &self.problem;
        if name == "elliptic-15d" && (p.dim.is_some() || p.elliptic_boundary.is_some()) {
            let dim = p.dim.unwrap_or(15);
            if dim < 2 {
                return Err(CliError::Config(format!("elliptic dimension must be at least 2, got {dim}")));
            }
            return Ok(elliptic_problem(dim, p.elliptic_boundary.unwrap_or_default()));
        }
        if *p != ProblemOverrides::default() {
            return Err(CliError::Config(format!("preset {name} has no [problem] options")));
        }
        Ok(preset(name)?)
    }

    /// The preset's defaults with every override applied.
    pub fn train_config(&self, base: &TrainConfig) -> TrainConfig {
        let t = &self.train;
        let mut c = base.clone();
        macro_rules! set {
            ($src:expr => $dst:expr) => {
                if let Some(v) = $src.clone() {
                    $dst = v;
                }
            };
        }
        set!(t.n => c.iterations);
        set!(t.n_s => c.solution_steps);
        set!(t.n_t => c.test_steps);
        set!(t.interior => c.interior_points);
        set!(t.boundary => c.boundary_points);
        set!(t.eta_s0 => c.lr_solution);
        set!(t.eta_t0 => c.lr_test);
        set!(t.nu_s => c.decay_solution);
        set!(t.nu_t => c.decay_test);
        set!(t.m_s => c.solution_net.width);
        set!(t.m_t => c.test_net.width);
        set!(t.depth_s => c.solution_net.depth);
        set!(t.depth_t => c.test_net.depth);
        set!(t.activation_s => c.solution_net.activation);
        set!(t.activation_t => c.test_net.activation);
        set!(t.theta_s => c.solution_restarts);
        set!(t.restart_widths => c.restart_widths);
        set!(t.theta_t => c.test_restarts);
        set!(t.theta_t_every => c.test_restart_every);
        set!(t.optimizer_s => c.solution_optimizer);
        set!(t.optimizer_t => c.test_optimizer);
        set!(t.eval_every => c.eval_every);
        set!(t.probe_points => c.probe_points);
        if t.target_error.is_some() {
            c.target_error = t.target_error;
        }
        if t.plateau_window.is_some() || t.plateau_rel.is_some() {
            let d = c.plateau.unwrap_or_default();
            c.plateau = Some(Plateau {
                window: t.plateau_window.unwrap_or(d.window),
                rel: t.plateau_rel.unwrap_or(d.rel),
            });
        }
        let l = &self.loss;
        let lc: &mut LossConfig = &mut c.loss;
        set!(l.denominator => lc.denominator);
        set!(l.weighting => lc.weighting);
        set!(l.boundary => lc.boundary);
        set!(l.penalty_form => lc.penalty_form);
        set!(l.lambda_s => lc.lambda_s);
        set!(l.lambda_t => lc.lambda_t);
        if let Some(seed) = self.seed {
            c.seed = seed;
        }
        c
    }
}
