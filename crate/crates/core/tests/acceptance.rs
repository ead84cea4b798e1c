//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! Criteria 1–6 are deterministic and asserted. Criteria 7–12 are
//! stochastic training runs; their lines are printed but not asserted. By
//! default each training run gets one seed and a short wall-clock cap;
//! `FRIEDRICHS_ACCEPTANCE_SEEDS` and `FRIEDRICHS_ACCEPTANCE_MINUTES` raise
//! both (3 and 60 give the full protocol).

use std::io::Write;
use std::sync::Arc;
use std::time::{Duration, Instant};

use friedrichs::loss::{
    minimax_loss, residual_functionals, strong_form_loss, BoundaryHandling, Denominator, LossConfig, LossPoints,
    Wrt,
};
use friedrichs::metrics::{closed_form_field, dual_norm_residual};
use friedrichs::network::{Activation, BoundaryEncoder, DerivOrder, FieldBatch, FieldModel, PointFn};
use friedrichs::problems::{elliptic_problem, preset, EllipticBoundary, Problem, PRESETS};
use friedrichs::sampler::sample_batch;
use friedrichs::trainer::{fresh_nets, NetSpec, TrainConfig, Trainer};
use friedrichs::verify::{quadrature_points, trig_basis, verify_preset, Check};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

struct Line {
    id: usize,
    pass: bool,
    detail: String,
}

impl Line {
    fn separator() {
        writeln!(std::io::stdout().lock(), "---").unwrap();
    }

    fn print(&self) {
        let tag = if self.pass { "PASS" } else { "FAIL" };
        // Written to the stream directly so the lines survive output capture.
        let mut out = std::io::stdout().lock();
        writeln!(out, "{tag} criterion {:>2}: {}", self.id, self.detail).unwrap();
        out.flush().unwrap();
    }
}

fn env_or<T: std::str::FromStr>(key: &str, default: T) -> T {
    std::env::var(key).ok().and_then(|v| v.parse().ok()).unwrap_or(default)
}

// ---------------------------------------------------------------- gradients

fn small_nets(problem: &Problem, act_s: Activation, seed: u64) -> (FieldModel, FieldModel, FieldModel, FieldModel) {
    let spec = |activation| NetSpec {
        width: 8,
        depth: 3,
        activation,
    };
    let d = problem.dim();
    let s = fresh_nets(d, &problem.split, spec(act_s), seed).unwrap();
    let t = fresh_nets(d, &problem.split, spec(Activation::Tanh), seed + 1000).unwrap();
    let r = problem.components();
    (
        FieldModel::new(s.clone(), problem.solution_encoder.clone()).unwrap(),
        FieldModel::new(t.clone(), problem.test_encoder.clone()).unwrap(),
        FieldModel::new(s, BoundaryEncoder::free(r)).unwrap(),
        FieldModel::new(t, BoundaryEncoder::free(r)).unwrap(),
    )
}

/// `‖g − g_fd‖ / ‖g_fd‖` over every parameter of `model`, with central
/// differences of step `h`.
fn fd_error<F>(model: &mut FieldModel, grads: &[Array2<f64>], h: f64, loss: F) -> f64
where
    F: Fn(&FieldModel) -> f64,
{
    let mut diff = 0.0;
    let mut norm = 0.0;
    for (k, g) in grads.iter().enumerate() {
        for idx in 0..g.len() {
            let (i, j) = (idx / g.ncols(), idx % g.ncols());
            let orig = model.tensors()[k][[i, j]];
            model.tensors_mut()[k][[i, j]] = orig + h;
            let up = loss(model);
            model.tensors_mut()[k][[i, j]] = orig - h;
            let down = loss(model);
            model.tensors_mut()[k][[i, j]] = orig;
            let fd = (up - down) / (2.0 * h);
            diff += (g[[i, j]] - fd).powi(2);
            norm += fd * fd;
        }
    }
    (diff / norm).sqrt()
}

fn gradient_line() -> Line {
    const H: f64 = 1e-6;
    let advection = preset("advection-discontinuous").unwrap();
    let elliptic = preset("elliptic-15d").unwrap();
    let mut worst: Vec<(&str, f64)> = vec![
        ("minimax (solution)", 0.0),
        ("minimax (test)", 0.0),
        ("minimax with penalties", 0.0),
        ("elliptic (solution)", 0.0),
        ("elliptic (test)", 0.0),
        ("strong form", 0.0),
        ("minimax (ReLU solution)", 0.0),
    ];
    let mut bump = |i: usize, e: f64| worst[i].1 = worst[i].1.max(e);
    for seed in 0..20u64 {
        let cfg = LossConfig::default();
        let b = sample_batch(&advection.domain, 48, 24, &advection.loss.numerator_pieces, seed, 0).unwrap();
        let pts = LossPoints::from_batch(&b, cfg.weighting);
        let (mut s, mut t, mut sf, mut tf) = small_nets(&advection, Activation::Tanh, seed);
        let g = minimax_loss(&advection.loss, &s, &t, &pts, &cfg, Some(Wrt::Solution)).unwrap().grads.unwrap();
        bump(0, fd_error(&mut s, &g, H, |m| minimax_loss(&advection.loss, m, &t, &pts, &cfg, None).unwrap().loss.value));
        let g = minimax_loss(&advection.loss, &s, &t, &pts, &cfg, Some(Wrt::Test)).unwrap().grads.unwrap();
        bump(1, fd_error(&mut t, &g, H, |m| minimax_loss(&advection.loss, &s, m, &pts, &cfg, None).unwrap().loss.value));

        let pen = LossConfig {
            boundary: BoundaryHandling::Penalty,
            denominator: Denominator::SqrtNorm,
            lambda_s: 2.0,
            lambda_t: 0.5,
            ..LossConfig::default()
        };
        let b = sample_batch(&advection.domain, 48, 24, &advection.loss.sampled_pieces(&pen), seed, 1).unwrap();
        let ppts = LossPoints::from_batch(&b, pen.weighting);
        let g = minimax_loss(&advection.loss, &sf, &tf, &ppts, &pen, Some(Wrt::Solution)).unwrap().grads.unwrap();
        bump(2, fd_error(&mut sf, &g, H, |m| minimax_loss(&advection.loss, m, &tf, &ppts, &pen, None).unwrap().loss.value));
        let g = minimax_loss(&advection.loss, &sf, &tf, &ppts, &pen, Some(Wrt::Test)).unwrap().grads.unwrap();
        bump(2, fd_error(&mut tf, &g, H, |m| minimax_loss(&advection.loss, &sf, m, &ppts, &pen, None).unwrap().loss.value));
        let g = strong_form_loss(&advection.loss, &sf, &ppts, &pen, true).unwrap().grads.unwrap();
        bump(5, fd_error(&mut sf, &g, H, |m| strong_form_loss(&advection.loss, m, &ppts, &pen, false).unwrap().loss.value));

        let (mut r, _, _, _) = small_nets(&advection, Activation::Relu, seed);
        let g = minimax_loss(&advection.loss, &r, &t, &pts, &cfg, Some(Wrt::Solution)).unwrap().grads.unwrap();
        bump(6, fd_error(&mut r, &g, H, |m| minimax_loss(&advection.loss, m, &t, &pts, &cfg, None).unwrap().loss.value));

        let b = sample_batch(&elliptic.domain, 24, 24, &elliptic.loss.numerator_pieces, seed, 2).unwrap();
        let ept = LossPoints::from_batch(&b, cfg.weighting);
        let (mut s, mut t, _, _) = small_nets(&elliptic, Activation::Tanh, seed);
        let g = minimax_loss(&elliptic.loss, &s, &t, &ept, &cfg, Some(Wrt::Solution)).unwrap().grads.unwrap();
        bump(3, fd_error(&mut s, &g, H, |m| minimax_loss(&elliptic.loss, m, &t, &ept, &cfg, None).unwrap().loss.value));
        let g = minimax_loss(&elliptic.loss, &s, &t, &ept, &cfg, Some(Wrt::Test)).unwrap().grads.unwrap();
        bump(4, fd_error(&mut t, &g, H, |m| minimax_loss(&elliptic.loss, &s, m, &ept, &cfg, None).unwrap().loss.value));
    }
    let max = worst.iter().map(|w| w.1).fold(0.0, f64::max);
    let parts: Vec<String> = worst.iter().map(|(n, e)| format!("{n} {e:.1e}")).collect();
    Line {
        id: 1,
        pass: max <= 1e-5,
        detail: format!("gradients vs central differences, 20 seeds, worst {max:.2e} <= 1e-5 [{}]", parts.join(", ")),
    }
}

// ---------------------------------------------------------------- dual norm

/// Best ratio `|cᵀr| / sqrt(cᵀGc)` found by random directions followed by
/// shrinking random perturbations of the incumbent.
fn searched_maximum(r: &[f64], g: &Array2<f64>, directions: usize, seed: u64) -> f64 {
    let k = r.len();
    let ratio = |c: &[f64]| {
        let num: f64 = c.iter().zip(r).map(|(a, b)| a * b).sum();
        let mut q = 0.0;
        for i in 0..k {
            for j in 0..k {
                q += c[i] * g[[i, j]] * c[j];
            }
        }
        num.abs() / q.max(1e-300).sqrt()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best = vec![0.0; k];
    let mut best_val = 0.0;
    let mut c = vec![0.0; k];
    for _ in 0..directions {
        for v in c.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        let val = ratio(&c);
        if val > best_val {
            best_val = val;
            best.clone_from(&c);
        }
    }
    let scale = best.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut step = 0.1 * scale;
    while step > 1e-10 * scale {
        let mut improved = false;
        for _ in 0..200 {
            for (ci, bi) in c.iter_mut().zip(&best) {
                *ci = bi + step * rng.sample::<f64, _>(StandardNormal);
            }
            let val = ratio(&c);
            if val > best_val {
                best_val = val;
                best.clone_from(&c);
                improved = true;
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    best_val
}

/// Dual-norm oracle against direct search on a perturbed exact solution.
fn dual_norm_search(problem: &Problem) -> (f64, f64) {
    let quad = if problem.dim() > 3 {
        elliptic_problem(3, EllipticBoundary::Weak)
    } else {
        problem.clone()
    };
    let d = quad.dim();
    let n = if d == 2 { 24 } else { 8 };
    let pts = quadrature_points(&quad, n).unwrap();
    let exact = quad.exact.clone();
    let perturbed: PointFn = Arc::new(move |x| {
        let bump = (x[0].scale(1.3) + x[d - 1].scale(0.7)).sin().scale(0.2);
        exact(x).into_iter().map(|u| u + &bump).collect()
    });
    let sol = closed_form_field(d, quad.components(), perturbed);
    let basis = trig_basis(&quad);
    let closed = dual_norm_residual(&quad.loss, &sol, &basis, &pts).unwrap();
    let (r, g) = residual_functionals(&quad.loss, &sol, &basis, &pts).unwrap();
    (closed, searched_maximum(&r, &g, 1_000_000, 5))
}

// ---------------------------------------------------------------- training

struct Outcome {
    /// Best probe error reached.
    best: f64,
    iterations: usize,
    capped: bool,
}

/// Runs up to `iterations` outer steps under a wall-clock cap, evaluating
/// every `every` steps, stopping early once `target` is reached.
fn train(trainer: &mut Trainer, iterations: usize, every: usize, target: f64, cap: Duration) -> Outcome {
    let start = Instant::now();
    let first = trainer.iteration;
    let mut best = f64::INFINITY;
    let mut capped = false;
    for k in 1..=iterations {
        trainer.outer_step().unwrap();
        if k % every == 0 || k == iterations {
            best = best.min(trainer.evaluate().unwrap().l2);
            if best <= target {
                break;
            }
            if start.elapsed() > cap {
                capped = k < iterations;
                break;
            }
        }
    }
    Outcome {
        best,
        iterations: trainer.iteration - first,
        capped,
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

struct Budget {
    seeds: u64,
    cap: Duration,
}

impl Budget {
    fn describe(&self, runs: &[Outcome]) -> String {
        let its: Vec<String> = runs.iter().map(|o| o.iterations.to_string()).collect();
        let capped = runs.iter().any(|o| o.capped);
        format!(
            "{} seed(s), iterations run [{}]{}",
            self.seeds,
            its.join(", "),
            if capped { ", stopped by wall-clock cap" } else { "" }
        )
    }
}

fn desk(problem: &Problem, seed: u64, f: impl FnOnce(&mut TrainConfig)) -> TrainConfig {
    let mut c = problem.train.clone();
    c.seed = seed;
    c.loss.denominator = Denominator::SqrtNorm;
    c.test_restarts.clear();
    c.test_restart_every = 0;
    c.probe_points = 5000;
    f(&mut c);
    c
}

fn width(c: &mut TrainConfig, s: usize, t: usize) {
    c.solution_net.width = s;
    c.test_net.width = t;
}

fn error_line(id: usize, what: &str, budget: &Budget, runs: &[Outcome], tol: f64) -> Line {
    let m = median(runs.iter().map(|o| o.best).collect());
    Line {
        id,
        pass: m <= tol,
        detail: format!("{what}: median e_L2 {m:.3e} <= {tol:.0e} ({})", budget.describe(runs)),
    }
}

fn fan_line(budget: &Budget) -> Line {
    let p = preset("advection-fan").unwrap();
    let runs: Vec<Outcome> = (0..budget.seeds)
        .map(|seed| {
            let c = desk(&p, seed, |c| {
                width(c, 64, 64);
                c.interior_points = 500;
                c.boundary_points = 100;
                c.lr_solution = 2e-5;
                c.lr_test = 1e-3;
            });
            let mut t = Trainer::new(&p, c).unwrap();
            train(&mut t, 5000, 100, 5e-2, budget.cap)
        })
        .collect();
    error_line(7, "fan domain, widths 64/64, 5000 iterations", budget, &runs, 5e-2)
}

/// Largest distance from the line `y = 0.9x` of the biggest jump along
/// each horizontal grid line that crosses it well inside the square.
fn jump_locus_distance(field: &FieldModel) -> f64 {
    let n = 201;
    let xs: Vec<f64> = (0..n).map(|i| -1.0 + 2.0 * i as f64 / (n - 1) as f64).collect();
    let mut worst = 0.0f64;
    for &y in xs.iter().filter(|y| y.abs() <= 0.8) {
        let pts = Array2::from_shape_fn((n, 2), |(i, j)| if j == 0 { xs[i] } else { y });
        let u = field.evaluate(&pts).unwrap();
        let (mut big, mut at) = (0.0, 0.0);
        for i in 0..n - 1 {
            let jump = (u[[i + 1, 0]] - u[[i, 0]]).abs();
            if jump > big {
                big = jump;
                at = 0.5 * (xs[i] + xs[i + 1]);
            }
        }
        worst = worst.max((0.9 * at - y).abs() / 1.81f64.sqrt());
    }
    worst
}

/// Phase I, restart and Phase II runs; returns the line and the Phase I
/// outcomes for the baseline comparison.
fn discontinuous_line(budget: &Budget) -> (Line, Vec<Outcome>) {
    let p = preset("advection-discontinuous").unwrap();
    let mut phase1 = Vec::new();
    let mut phase2 = Vec::new();
    let mut locus = Vec::new();
    for seed in 0..budget.seeds {
        let c = desk(&p, seed, |c| {
            width(c, 64, 64);
            c.interior_points = 250;
            c.boundary_points = 50;
            c.lr_solution = 2e-5;
            c.lr_test = 1e-3;
            c.solution_restarts = vec![2000];
            c.restart_widths = vec![64];
        });
        let mut t = Trainer::new(&p, c).unwrap();
        let first = train(&mut t, 2000, 100, 0.0, budget.cap);
        let reached = t.iteration == 2000;
        phase1.push(first);
        let second = if reached {
            train(&mut t, 10_000, 100, 1e-1, budget.cap)
        } else {
            Outcome {
                best: f64::INFINITY,
                iterations: 0,
                capped: true,
            }
        };
        phase2.push(second);
        locus.push(jump_locus_distance(&t.solution));
    }
    let e1 = median(phase1.iter().map(|o| o.best).collect());
    let e2 = median(phase2.iter().map(|o| o.best).collect());
    let dist = median(locus);
    let pass = e1 <= 4e-1 && e2 <= 1e-1 && dist <= 0.05;
    let line = Line {
        id: 8,
        pass,
        detail: format!(
            "discontinuous advection: phase I median e_L2 {e1:.3e} <= 4e-1 ({}); after restart {e2:.3e} <= 1e-1 ({}); \
             jump locus distance {dist:.3} <= 0.05",
            budget.describe(&phase1),
            budget.describe(&phase2)
        ),
    };
    (line, phase1)
}

fn elliptic_line(budget: &Budget) -> Line {
    let p = preset("elliptic-15d").unwrap();
    let runs: Vec<Outcome> = (0..budget.seeds)
        .map(|seed| {
            let c = desk(&p, seed, |c| {
                width(c, 64, 64);
                c.interior_points = 2000;
                c.boundary_points = 200;
            });
            let mut t = Trainer::new(&p, c).unwrap();
            train(&mut t, 5000, 100, 5e-2, budget.cap * 2)
        })
        .collect();
    error_line(9, "15-d elliptic, widths 64/64, N 2000, 5000 iterations", budget, &runs, 5e-2)
}

fn wave_line(budget: &Budget) -> Line {
    let p = preset("wave-complex-domain").unwrap();
    let runs: Vec<Outcome> = (0..budget.seeds)
        .map(|seed| {
            let c = desk(&p, seed, |c| {
                width(c, 64, 64);
                c.interior_points = 1000;
                c.boundary_points = 200;
            });
            let mut t = Trainer::new(&p, c).unwrap();
            train(&mut t, 5000, 100, 5e-2, budget.cap)
        })
        .collect();
    error_line(10, "wave on the configured domain, widths 64/64, 5000 iterations", budget, &runs, 5e-2)
}

fn maxwell_line(budget: &Budget) -> Line {
    let p = preset("maxwell-cube").unwrap();
    let runs: Vec<Outcome> = (0..budget.seeds)
        .map(|seed| {
            let c = desk(&p, seed, |c| {
                width(c, 64, 32);
                c.interior_points = 1000;
                c.boundary_points = 200;
            });
            let mut t = Trainer::new(&p, c).unwrap();
            train(&mut t, 5000, 100, 2e-1, budget.cap)
        })
        .collect();
    error_line(11, "Maxwell, widths 64/32, 5000 iterations", budget, &runs, 2e-1)
}

/// Strong-form baseline at the iteration count and batch size of Phase I.
fn baseline_line(budget: &Budget, minimax: &[Outcome]) -> Line {
    let p = preset("advection-discontinuous").unwrap();
    let base = p.baseline.clone().expect("baseline defined");
    let band = 0.1;
    let mut errors = Vec::new();
    let mut argmax_dist = Vec::new();
    let mut band_share = Vec::new();
    for (seed, mm) in minimax.iter().enumerate() {
        let mut c = base.clone();
        c.seed = seed as u64;
        c.solution_net.width = 64;
        c.interior_points = 250;
        c.boundary_points = 50;
        c.probe_points = 5000;
        let mut t = Trainer::baseline(&p, c).unwrap();
        let out = train(&mut t, mm.iterations.max(1), 100, 0.0, budget.cap);
        errors.push(out.best);
        let probes = t.probes().clone();
        let u = t.solution.evaluate(&probes).unwrap();
        let exact = FieldBatch::eval(&p.exact, &probes, 1, DerivOrder::Value).value;
        let err = &u - &exact;
        let dist = |i: usize| (0.9 * probes[[i, 0]] - probes[[i, 1]]).abs() / 1.81f64.sqrt();
        let (mut imax, mut vmax) = (0, 0.0);
        let (mut inside, mut total) = (0.0, 0.0);
        for i in 0..probes.nrows() {
            let e = err[[i, 0]].abs();
            if e > vmax {
                vmax = e;
                imax = i;
            }
            total += e * e;
            if dist(i) <= band {
                inside += e * e;
            }
        }
        argmax_dist.push(dist(imax));
        band_share.push(inside / total);
    }
    let eb = median(errors.clone());
    let ef = median(minimax.iter().map(|o| o.best).collect());
    let d = median(argmax_dist);
    let share = median(band_share);
    // "Comparable" allows the baseline to be up to 20% better.
    let ordered = eb >= 0.8 * ef;
    let concentrated = d <= band && share >= 0.5;
    Line {
        id: 12,
        pass: ordered && concentrated,
        detail: format!(
            "strong-form baseline e_L2 {eb:.3e} vs minimax {ef:.3e} (baseline >= 0.8x); max error {d:.3} from the \
             characteristic line (<= {band}), {:.0}% of squared error within {band} of it (>= 50%)",
            100.0 * share
        ),
    }
}

// ---------------------------------------------------------------- driver

fn check_line(id: usize, what: &str, checks: &[&Check]) -> Line {
    let failed: Vec<String> = checks.iter().filter(|c| !c.pass).map(|c| c.to_string()).collect();
    Line {
        id,
        pass: !checks.is_empty() && failed.is_empty(),
        detail: if failed.is_empty() {
            format!("{what}: {} checks", checks.len())
        } else {
            format!("{what}: {}", failed.join("; "))
        },
    }
}

#[test]
fn acceptance() {
    let mut lines = Vec::new();

    let g = gradient_line();
    g.print();
    lines.push(g);

    let mut checks = Vec::new();
    for name in PRESETS {
        checks.extend(verify_preset(&preset(name).unwrap()).unwrap());
    }
    let pick = |key: &str| checks.iter().filter(|c| c.name.contains(key)).collect::<Vec<_>>();

    let l = check_line(2, "integration by parts defect <= 1e-8 on every preset", &pick("integration by parts"));
    l.print();
    lines.push(l);

    let mut searched = Vec::new();
    let mut search_ok = true;
    for name in PRESETS {
        let (closed, found) = dual_norm_search(&preset(name).unwrap());
        search_ok &= found <= closed * (1.0 + 1e-9) && found >= closed * (1.0 - 1e-3);
        searched.push(format!("{name} {:.1e}", (closed - found) / closed));
    }
    let mut l = check_line(3, "dual norm zero at exact solutions (<= 1e-6)", &pick("dual norm at exact"));
    l.pass &= search_ok;
    l.detail += &format!("; closed form above search by [{}] (within 0.1%)", searched.join(", "));
    l.print();
    lines.push(l);

    let l = check_line(4, "boundary mismatch <= 1e-10 on 1e4 samples, incl. after restart", &pick("boundary mismatch"));
    l.print();
    lines.push(l);
    let l = check_line(5, "empirical coercivity above each preset's bound", &pick("coercivity"));
    l.print();
    lines.push(l);
    let l = check_line(6, "exact-solution residual <= 1e-8", &pick("exact-solution residual"));
    l.print();
    lines.push(l);

    let budget = Budget {
        seeds: env_or("FRIEDRICHS_ACCEPTANCE_SEEDS", 1u64).max(1),
        cap: Duration::from_secs_f64(60.0 * env_or("FRIEDRICHS_ACCEPTANCE_MINUTES", 2.0f64)),
    };
    let mut training = Vec::new();
    let l = fan_line(&budget);
    l.print();
    training.push(l);
    let (l, phase1) = discontinuous_line(&budget);
    l.print();
    training.push(l);
    for f in [elliptic_line, wave_line, maxwell_line] {
        let l = f(&budget);
        l.print();
        training.push(l);
    }
    let l = baseline_line(&budget, &phase1);
    l.print();
    training.push(l);

    Line::separator();
    for l in lines.iter().chain(&training) {
        l.print();
    }
    let failed: Vec<usize> = lines.iter().filter(|l| !l.pass).map(|l| l.id).collect();
    assert!(failed.is_empty(), "deterministic criteria failed: {failed:?}");
}
