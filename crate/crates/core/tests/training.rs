use std::sync::Arc;

use friedrichs::autodiff::Jet;
use friedrichs::loss::{minimax_loss, Denominator, LossConfig, LossPoints, LossProblem, WeakForm, Wrt};
use friedrichs::network::{Activation, BoundaryEncoder, DerivOrder, FieldModel, ResNetConfig, ResNetParams};
use friedrichs::problems::{preset, Problem};
use friedrichs::quadrature::gauss_interval;
use friedrichs::sampler::sample_boundary;
use friedrichs::system::FriedrichsSystem;
use friedrichs::trainer::{NetSpec, StopReason, TrainConfig, Trainer};
use friedrichs::verify::encoder_mismatch;
use nalgebra::DMatrix;
use ndarray::Array2;

fn small(problem: &Problem, iterations: usize) -> TrainConfig {
    let mut c = problem.train.clone();
    c.iterations = iterations;
    c.interior_points = 64;
    c.boundary_points = 16;
    c.solution_net = NetSpec {
        width: 8,
        depth: 3,
        activation: Activation::Relu,
    };
    c.test_net = NetSpec {
        width: 8,
        depth: 3,
        activation: Activation::Tanh,
    };
    c.solution_restarts.clear();
    c.restart_widths.clear();
    c.test_restarts.clear();
    c.test_restart_every = 0;
    c.eval_every = 1;
    c.probe_points = 100;
    c.lr_solution = 1e-3;
    c.lr_test = 1e-3;
    c
}

#[test]
fn zero_iterations_leave_the_initial_fields() {
    let p = preset("advection-fan").unwrap();
    let mut a = Trainer::new(&p, small(&p, 0)).unwrap();
    let b = Trainer::new(&p, small(&p, 0)).unwrap();
    assert_eq!(a.run(|_, _| Ok(())).unwrap(), StopReason::Budget);
    assert!(a.history.is_empty());
    assert_eq!(a.iteration, 0);
    assert_eq!(a.solution.tensors(), b.solution.tensors());
    assert_eq!(a.test.tensors(), b.test.tensors());
}

#[test]
fn identical_seeds_give_identical_runs() {
    let p = preset("advection-discontinuous").unwrap();
    let run = |seed: u64| {
        let mut c = small(&p, 6);
        c.seed = seed;
        let mut t = Trainer::new(&p, c).unwrap();
        t.run(|_, _| Ok(())).unwrap();
        let rows: Vec<(usize, f64, f64)> = t.history.iter().map(|r| (r.iteration, r.loss, r.e_l2)).collect();
        let params: Vec<Array2<f64>> = t.solution.tensors().into_iter().cloned().collect();
        (rows, params)
    };
    let (ha, pa) = run(3);
    let (hb, pb) = run(3);
    assert_eq!(ha.len(), 6);
    for (a, b) in ha.iter().zip(&hb) {
        assert_eq!(a.0, b.0);
        assert_eq!(a.1.to_bits(), b.1.to_bits());
        assert_eq!(a.2.to_bits(), b.2.to_bits());
    }
    assert_eq!(pa, pb);
    let (_, pc) = run(4);
    assert_ne!(pa, pc);
}

#[test]
fn history_rows_follow_the_schedule() {
    let p = preset("advection-fan").unwrap();
    let mut c = small(&p, 8);
    c.eval_every = 2;
    c.decay_solution = 5.0;
    let mut t = Trainer::new(&p, c).unwrap();
    let mut seen = 0;
    t.run(|_, _| {
        seen += 1;
        Ok(())
    })
    .unwrap();
    assert_eq!(seen, 4);
    let its: Vec<usize> = t.history.iter().map(|r| r.iteration).collect();
    assert_eq!(its, vec![2, 4, 6, 8]);
    let mut best = f64::INFINITY;
    for r in &t.history {
        assert!(r.e_l2.is_finite() && r.loss.is_finite());
        assert!(r.e_linf.is_some(), "the fan solution is continuous");
        let expect = 1e-3 * 0.1f64.powf((r.iteration - 1) as f64 / 5.0);
        assert!((r.lr_s - expect).abs() <= 1e-15);
        let next = best.min(r.e_l2);
        assert!(next <= best);
        best = next;
    }
    let mut wall = 0.0;
    for r in &t.history {
        assert!(r.wall_time_s >= wall);
        wall = r.wall_time_s;
    }
}

#[test]
fn restart_freezes_the_field_and_widens_the_network() {
    let p = preset("advection-discontinuous").unwrap();
    let mut c = small(&p, 3);
    c.solution_restarts = vec![2];
    c.restart_widths = vec![20];
    let mut t = Trainer::new(&p, c).unwrap();
    t.outer_step().unwrap();
    t.outer_step().unwrap();
    let before = t.solution.clone();
    let x = p.domain.sample_interior(200, 5, 77, 0).unwrap();
    let old = before.evaluate(&x).unwrap();
    t.outer_step().unwrap();
    assert_eq!(t.solution.generations(), 1);
    assert_eq!(t.solution.nets[0].config.width, 20);
    assert_eq!(t.solution.frozen.as_ref().unwrap().evaluate(&x).unwrap(), old);
    let phi = t.solution.evaluate(&x).unwrap();
    let h = t.solution.mask_batch(&x, DerivOrder::Value).value;
    let raw = t.solution.raw_forward(&x).unwrap();
    let recon = &old + &(&h * &raw);
    let gap = (&phi - &recon).iter().fold(0.0f64, |m, v| m.max(v.abs()));
    assert!(gap < 1e-12, "{gap}");
    let (bnd, _, _, _) = sample_boundary(&p.domain, 10_000, &p.loss.solution_pieces, 9, 3, 0).unwrap();
    let m = encoder_mismatch(&t.solution, &p.loss.data, &bnd).unwrap();
    assert!(m.constrained > 0 && m.max <= 1e-10, "{m:?}");
}

/// `u' + u = f` on (0, 1) with a fixed test function and only the readout
/// of the solution network trained, so the ratio is convex in the unknowns.
#[test]
fn linear_ansatz_descends_monotonically() {
    let sys = FriedrichsSystem {
        dim: 1,
        r: 1,
        a: Arc::new(|_| vec![DMatrix::from_element(1, 1, 1.0)]),
        c: Arc::new(|_| DMatrix::from_element(1, 1, 1.0)),
        div_a: Arc::new(|_| DMatrix::zeros(1, 1)),
        f: Arc::new(|x: &[Jet]| vec![x[0].scale(3.0).cos()]),
        mu0: 1.0,
    };
    let problem = LossProblem {
        form: WeakForm::Friedrichs(sys),
        data: Arc::new(|_| vec![Jet::constant(0.0)]),
        numerator_pieces: vec![],
        solution_pieces: vec![],
        test_pieces: vec![],
    };
    let rule = gauss_interval(0.0, 1.0, 40);
    let pts = LossPoints {
        interior: Array2::from_shape_vec((40, 1), rule.iter().map(|p| p.0).collect()).unwrap(),
        interior_weights: rule.iter().map(|p| p.1).collect(),
        boundary: Array2::zeros((0, 1)),
        normals: Array2::zeros((0, 1)),
        pieces: vec![],
        boundary_weights: vec![],
    };
    let cfg = |act| ResNetConfig {
        input_dim: 1,
        output_dim: 1,
        width: 10,
        depth: 3,
        activation: act,
    };
    // Both fields vanish at the ends, so no boundary term arises.
    let bubble = || BoundaryEncoder::scalar_mask(|x: &[Jet]| &x[0] - x[0].square(), |_| vec![Jet::constant(0.0)], 1);
    let mut u = FieldModel::new(
        vec![ResNetParams::init(cfg(Activation::Relu), 1, Activation::Relu.default_init()).unwrap()],
        bubble(),
    )
    .unwrap();
    let v = FieldModel::new(
        vec![ResNetParams::init(cfg(Activation::Tanh), 2, Activation::Tanh.default_init()).unwrap()],
        bubble(),
    )
    .unwrap();
    let lc = LossConfig {
        denominator: Denominator::SqrtNorm,
        ..LossConfig::default()
    };
    let readout = u.tensors().len() - 1;
    let mut last = f64::INFINITY;
    let mut first = None;
    for _ in 0..30 {
        let e = minimax_loss(&problem, &u, &v, &pts, &lc, Some(Wrt::Solution)).unwrap();
        assert!(e.loss.value < last, "{} after {last}", e.loss.value);
        first.get_or_insert(e.loss.value);
        last = e.loss.value;
        let g = &e.grads.unwrap()[readout];
        let step = 1e-3 * g;
        *u.tensors_mut()[readout] -= &step;
    }
    assert!(last < first.unwrap());
}
