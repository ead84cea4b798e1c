//! Alternating minimax training with restarts.

use std::time::Instant;

use ndarray::Array2;
use rand::RngCore;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::loss::{minimax_loss, strong_form_loss, LossConfig, LossError, LossPoints, Wrt};
use crate::metrics::{probe_points, relative_errors_of, ErrorReport, MetricsError};
use crate::network::{
    checkpoint::{load_model, store_model},
    Activation, BoundaryEncoder, Checkpoint, DerivOrder, FieldBatch, FieldModel, NetworkError, ResNetConfig,
    ResNetParams,
};
use crate::optim::{lr_schedule, OptimError, Optimizer, OptimizerKind};
use crate::problems::Problem;
use crate::sampler::{derived_rng, sample_batch, SamplerError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("non-finite loss at iteration {0}")]
    NonFiniteLoss(usize),
    #[error("at iteration {iteration}: {source}")]
    Optimizer { iteration: usize, source: OptimError },
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Sampler(#[from] SamplerError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetSpec {
    pub width: usize,
    pub depth: usize,
    pub activation: Activation,
}

/// Stop when the best `e_L²` has not dropped by `rel` within `window`
/// outer iterations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Plateau {
    pub window: usize,
    pub rel: f64,
}

impl Default for Plateau {
    fn default() -> Self {
        Plateau {
            window: 2000,
            rel: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Outer iterations `n`.
    pub iterations: usize,
    /// Inner solution steps `n_s`.
    pub solution_steps: usize,
    /// Inner test steps `n_t`.
    pub test_steps: usize,
    /// Interior points per batch `N`.
    pub interior_points: usize,
    /// Boundary points per batch `N_b`.
    pub boundary_points: usize,
    pub lr_solution: f64,
    pub lr_test: f64,
    /// Iterations per tenfold learning-rate decay.
    pub decay_solution: f64,
    pub decay_test: f64,
    /// Outer iterations at which the solution is frozen into the lift.
    pub solution_restarts: Vec<usize>,
    /// Width of the fresh network at each solution restart.
    pub restart_widths: Vec<usize>,
    pub test_restarts: Vec<usize>,
    /// Re-initialize the test network every this many iterations (0: never).
    pub test_restart_every: usize,
    pub solution_net: NetSpec,
    pub test_net: NetSpec,
    pub solution_optimizer: OptimizerKind,
    pub test_optimizer: OptimizerKind,
    pub loss: LossConfig,
    pub seed: u64,
    pub eval_every: usize,
    pub probe_points: usize,
    pub plateau: Option<Plateau>,
    /// Stop as soon as `e_L²` reaches this value.
    pub target_error: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iterations: 1000,
            solution_steps: 1,
            test_steps: 1,
            interior_points: 1000,
            boundary_points: 100,
            lr_solution: 1e-3,
            lr_test: 1e-3,
            decay_solution: 10_000.0,
            decay_test: 10_000.0,
            solution_restarts: Vec::new(),
            restart_widths: Vec::new(),
            test_restarts: Vec::new(),
            test_restart_every: 0,
            solution_net: NetSpec {
                width: 50,
                depth: 7,
                activation: Activation::Relu,
            },
            test_net: NetSpec {
                width: 50,
                depth: 7,
                activation: Activation::Tanh,
            },
            solution_optimizer: OptimizerKind::Adam,
            test_optimizer: OptimizerKind::Rmsprop,
            loss: LossConfig::default(),
            seed: 0,
            eval_every: 100,
            probe_points: 10_000,
            plateau: None,
            target_error: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.to_string()));
        if self.interior_points == 0 {
            return bad("interior_points must be positive");
        }
        for (name, v) in [
            ("lr_solution", self.lr_solution),
            ("lr_test", self.lr_test),
            ("decay_solution", self.decay_solution),
            ("decay_test", self.decay_test),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return bad(&format!("{name} must be positive, got {v}"));
            }
        }
        for spec in [self.solution_net, self.test_net] {
            if spec.width == 0 || spec.depth == 0 {
                return bad("network width and depth must be positive");
            }
        }
        if self.restart_widths.contains(&0) {
            return bad("restart widths must be positive");
        }
        if self.eval_every == 0 || self.probe_points == 0 {
            return bad("eval_every and probe_points must be positive");
        }
        if let Some(p) = self.plateau {
            if p.window == 0 || !(p.rel > 0.0 && p.rel < 1.0) {
                return bad("plateau needs window > 0 and 0 < rel < 1");
            }
        }
        self.loss.validate()?;
        Ok(())
    }
}

/// One history record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HistoryRow {
    pub iteration: usize,
    pub loss: f64,
    pub e_l2: f64,
    pub e_linf: Option<f64>,
    pub lr_s: f64,
    pub lr_t: f64,
    pub wall_time_s: f64,
}

pub const HISTORY_HEADER: &str = "iteration,loss,e_L2,e_Linf,lr_s,lr_t,wall_time_s";

impl HistoryRow {
    pub fn csv(&self) -> String {
        format!(
            "{},{:e},{:e},{},{:e},{:e},{:.3}",
            self.iteration,
            self.loss,
            self.e_l2,
            self.e_linf.map(|v| format!("{v:e}")).unwrap_or_default(),
            self.lr_s,
            self.lr_t,
            self.wall_time_s
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    Budget,
    Plateau,
    Target,
}

const SEED_PURPOSE: u64 = 9;
const SOLUTION_STREAM: u64 = 100;
const TEST_STREAM: u64 = 1_000_000;

fn derived_seed(master: u64, stream: u64) -> u64 {
    derived_rng(master, SEED_PURPOSE, stream, 0).next_u64()
}

/// Freshly initialized networks for a field with the given component split.
pub fn fresh_nets(dim: usize, split: &[usize], spec: NetSpec, seed: u64) -> Result<Vec<ResNetParams>, NetworkError> {
    split
        .iter()
        .enumerate()
        .map(|(j, &r)| {
            let cfg = ResNetConfig {
                input_dim: dim,
                output_dim: r,
                width: spec.width,
                depth: spec.depth,
                activation: spec.activation,
            };
            ResNetParams::init(cfg, derived_seed(seed, j as u64), spec.activation.default_init())
        })
        .collect()
}

/// Alternating optimizer state for one problem.
pub struct Trainer<'a> {
    pub problem: &'a Problem,
    pub config: TrainConfig,
    pub solution: FieldModel,
    pub test: FieldModel,
    /// Completed outer iterations.
    pub iteration: usize,
    pub history: Vec<HistoryRow>,
    /// Loss of the most recent solution step.
    pub last_loss: f64,
    opt_s: Optimizer,
    opt_t: Optimizer,
    batches: u64,
    solution_generation: u64,
    test_generation: u64,
    probes: Array2<f64>,
    reference: Array2<f64>,
    started: Instant,
    plateau_ref: f64,
    plateau_since: usize,
    baseline: bool,
}

impl<'a> Trainer<'a> {
    /// Minimax training of `problem` under `config`.
    pub fn new(problem: &'a Problem, config: TrainConfig) -> Result<Self, TrainError> {
        Self::build(problem, config, false)
    }

    /// Strong-form least-squares training (solution network only).
    pub fn baseline(problem: &'a Problem, config: TrainConfig) -> Result<Self, TrainError> {
        Self::build(problem, config, true)
    }

    fn encoders(problem: &Problem, config: &TrainConfig) -> (BoundaryEncoder, BoundaryEncoder) {
        match config.loss.boundary {
            crate::loss::BoundaryHandling::HardEncoded => {
                (problem.solution_encoder.clone(), problem.test_encoder.clone())
            }
            crate::loss::BoundaryHandling::Penalty => {
                let r = problem.components();
                (BoundaryEncoder::free(r), BoundaryEncoder::free(r))
            }
        }
    }

    fn build(problem: &'a Problem, config: TrainConfig, baseline: bool) -> Result<Self, TrainError> {
        config.validate()?;
        let (enc_s, enc_t) = Self::encoders(problem, &config);
        let d = problem.dim();
        let seed = config.seed;
        let solution = FieldModel::new(
            fresh_nets(d, &problem.split, config.solution_net, derived_seed(seed, SOLUTION_STREAM))?,
            enc_s,
        )?;
        let test = FieldModel::new(
            fresh_nets(d, &problem.split, config.test_net, derived_seed(seed, TEST_STREAM))?,
            enc_t,
        )?;
        let probes = probe_points(&problem.domain, config.probe_points, problem.probe_seed)?;
        let reference = FieldBatch::eval(&problem.exact, &probes, problem.components(), DerivOrder::Value).value;
        Ok(Trainer {
            problem,
            opt_s: Optimizer::new(config.solution_optimizer),
            opt_t: Optimizer::new(config.test_optimizer),
            config,
            solution,
            test,
            iteration: 0,
            history: Vec::new(),
            last_loss: f64::NAN,
            batches: 0,
            solution_generation: 0,
            test_generation: 0,
            probes,
            reference,
            started: Instant::now(),
            plateau_ref: f64::INFINITY,
            plateau_since: 0,
            baseline,
        })
    }

    pub fn lr_solution(&self, k: usize) -> f64 {
        lr_schedule(self.config.lr_solution, self.config.decay_solution, k)
    }

    pub fn lr_test(&self, k: usize) -> f64 {
        lr_schedule(self.config.lr_test, self.config.decay_test, k)
    }

    fn next_batch(&mut self) -> Result<LossPoints, TrainError> {
        let pieces = self.problem.loss.sampled_pieces(&self.config.loss);
        let nb = if pieces.is_empty() { 0 } else { self.config.boundary_points };
        let batch = sample_batch(
            &self.problem.domain,
            self.config.interior_points,
            nb,
            &pieces,
            self.config.seed,
            self.batches,
        )?;
        self.batches += 1;
        Ok(LossPoints::from_batch(&batch, self.config.loss.weighting))
    }

    fn restart_solution(&mut self) -> Result<(), TrainError> {
        let pos = self.config.solution_restarts.iter().position(|&k| k == self.iteration);
        let width = pos
            .and_then(|i| self.config.restart_widths.get(i).copied())
            .unwrap_or_else(|| self.solution.nets[0].config.width);
        self.solution_generation += 1;
        let spec = NetSpec {
            width,
            ..self.config.solution_net
        };
        let nets = fresh_nets(
            self.problem.dim(),
            &self.problem.split,
            spec,
            derived_seed(self.config.seed, SOLUTION_STREAM + self.solution_generation),
        )?;
        let placeholder = FieldModel::new(nets.clone(), self.solution.encoder.clone())?;
        let old = std::mem::replace(&mut self.solution, placeholder);
        self.solution = old.restart(nets)?;
        self.opt_s.reset();
        Ok(())
    }

    fn restart_test(&mut self) -> Result<(), TrainError> {
        self.test_generation += 1;
        let nets = fresh_nets(
            self.problem.dim(),
            &self.problem.split,
            self.config.test_net,
            derived_seed(self.config.seed, TEST_STREAM + self.test_generation),
        )?;
        self.test = FieldModel::new(nets, self.test.encoder.clone())?;
        self.opt_t.reset();
        Ok(())
    }

    fn test_restart_due(&self) -> bool {
        let k = self.iteration;
        self.config.test_restarts.contains(&k)
            || (self.config.test_restart_every > 0 && k > 0 && k.is_multiple_of(self.config.test_restart_every))
    }

    /// Runs one outer iteration.
    pub fn outer_step(&mut self) -> Result<(), TrainError> {
        let k = self.iteration;
        if self.config.solution_restarts.contains(&k) {
            self.restart_solution()?;
        }
        let lr_s = self.lr_solution(k);
        for _ in 0..self.config.solution_steps {
            let pts = self.next_batch()?;
            let eval = if self.baseline {
                strong_form_loss(&self.problem.loss, &self.solution, &pts, &self.config.loss, true)?
            } else {
                minimax_loss(
                    &self.problem.loss,
                    &self.solution,
                    &self.test,
                    &pts,
                    &self.config.loss,
                    Some(Wrt::Solution),
                )?
            };
            if !eval.loss.value.is_finite() {
                return Err(TrainError::NonFiniteLoss(k));
            }
            self.last_loss = eval.loss.value;
            let grads = eval.grads.expect("gradients requested");
            self.opt_s
                .step(self.solution.tensors_mut(), &grads, lr_s)
                .map_err(|source| TrainError::Optimizer { iteration: k, source })?;
        }
        if !self.baseline {
            if self.test_restart_due() {
                self.restart_test()?;
            }
            let lr_t = self.lr_test(k);
            for _ in 0..self.config.test_steps {
                let pts = self.next_batch()?;
                let eval = minimax_loss(
                    &self.problem.loss,
                    &self.solution,
                    &self.test,
                    &pts,
                    &self.config.loss,
                    Some(Wrt::Test),
                )?;
                if !eval.loss.value.is_finite() {
                    return Err(TrainError::NonFiniteLoss(k));
                }
                let ascent: Vec<Array2<f64>> = eval.grads.expect("gradients requested").into_iter().map(|g| -g).collect();
                self.opt_t
                    .step(self.test.tensors_mut(), &ascent, lr_t)
                    .map_err(|source| TrainError::Optimizer { iteration: k, source })?;
            }
        }
        self.iteration += 1;
        Ok(())
    }

    /// Errors of the current solution on the fixed probe set.
    pub fn evaluate(&self) -> Result<ErrorReport, TrainError> {
        let approx = self.solution.evaluate(&self.probes)?;
        Ok(relative_errors_of(&approx, &self.reference, self.problem.continuous)?)
    }

    pub fn probes(&self) -> &Array2<f64> {
        &self.probes
    }

    fn record(&mut self) -> Result<HistoryRow, TrainError> {
        let e = self.evaluate()?;
        let k = self.iteration;
        let row = HistoryRow {
            iteration: k,
            loss: self.last_loss,
            e_l2: e.l2,
            e_linf: e.linf,
            lr_s: self.lr_solution(k.saturating_sub(1)),
            lr_t: if self.baseline { 0.0 } else { self.lr_test(k.saturating_sub(1)) },
            wall_time_s: self.started.elapsed().as_secs_f64(),
        };
        self.history.push(row);
        Ok(row)
    }

    fn plateaued(&mut self, e: f64) -> bool {
        let Some(p) = self.config.plateau else {
            return false;
        };
        if e < (1.0 - p.rel) * self.plateau_ref {
            self.plateau_ref = e;
            self.plateau_since = self.iteration;
            return false;
        }
        self.iteration - self.plateau_since >= p.window
    }

    /// Trains until the budget, a plateau or the target error is reached.
    /// `on_record` sees every history row as it is produced.
    pub fn run<F>(&mut self, mut on_record: F) -> Result<StopReason, TrainError>
    where
        F: FnMut(&Trainer<'a>, &HistoryRow) -> Result<(), TrainError>,
    {
        while self.iteration < self.config.iterations {
            self.outer_step()?;
            if self.iteration.is_multiple_of(self.config.eval_every) || self.iteration == self.config.iterations {
                let row = self.record()?;
                on_record(self, &row)?;
                if self.config.target_error.is_some_and(|t| row.e_l2 <= t) {
                    return Ok(StopReason::Target);
                }
                if self.plateaued(row.e_l2) {
                    return Ok(StopReason::Plateau);
                }
            }
        }
        Ok(StopReason::Budget)
    }

    /// Both fields and the iteration counter as a checkpoint.
    pub fn checkpoint(&self) -> Checkpoint {
        let mut ckpt = Checkpoint::default();
        let s = store_model(&mut ckpt, "solution", &self.solution);
        let t = store_model(&mut ckpt, "test", &self.test);
        ckpt.metadata = serde_json::json!({
            "problem": self.problem.name,
            "iteration": self.iteration,
            "solution": s,
            "test": t,
            "config": self.config,
            "baseline": self.baseline,
        });
        ckpt
    }
}

/// Fields restored from a checkpoint written by [`Trainer::checkpoint`].
pub struct Restored {
    pub solution: FieldModel,
    pub test: FieldModel,
    pub iteration: usize,
    pub config: TrainConfig,
}

pub fn restore(problem: &Problem, ckpt: &Checkpoint) -> Result<Restored, TrainError> {
    let meta = &ckpt.metadata;
    let config: TrainConfig = serde_json::from_value(meta["config"].clone())
        .map_err(|e| NetworkError::Checkpoint(format!("bad config: {e}")))?;
    let (enc_s, enc_t) = Trainer::encoders(problem, &config);
    let solution = load_model(ckpt, "solution", &meta["solution"], &enc_s)?;
    let test = load_model(ckpt, "test", &meta["test"], &enc_t)?;
    let iteration = meta["iteration"]
        .as_u64()
        .ok_or_else(|| NetworkError::Checkpoint("missing iteration".into()))? as usize;
    Ok(Restored {
        solution,
        test,
        iteration,
        config,
    })
}
