use std::sync::Arc;

use friedrichs::autodiff::Jet;
use friedrichs::loss::{minimax_loss, residual_functionals, Denominator, LossConfig, LossPoints, Weighting};
use friedrichs::metrics::{closed_form_field, dual_norm_residual, relative_errors_of};
use friedrichs::network::{Activation, FieldModel, PointFn, ResNetConfig, ResNetParams};
use friedrichs::optim::lr_schedule;
use friedrichs::problems::preset;
use friedrichs::sampler::{sample_batch, Domain};
use friedrichs::verify::quadrature_points;
use ndarray::Array2;
use proptest::prelude::*;

fn net(d: usize, width: usize, depth: usize, act: Activation, seed: u64) -> ResNetParams {
    let cfg = ResNetConfig {
        input_dim: d,
        output_dim: 1,
        width,
        depth,
        activation: act,
    };
    ResNetParams::init(cfg, seed, act.default_init()).unwrap()
}

fn points(seed: u64, n: usize, d: usize) -> Array2<f64> {
    Domain::hypercube(-1.0, 1.0, d).sample_interior(n, seed, 99, 0).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn learning_rate_decays_by_a_decade_per_nu(eta0 in 1e-6f64..1.0, nu in 1.0f64..1e5, k in 0usize..100_000) {
        let a = lr_schedule(eta0, nu, k);
        let b = lr_schedule(eta0, nu, k + 1);
        prop_assert!(b <= a && a <= eta0);
        let decade = lr_schedule(eta0, nu, k) / lr_schedule(eta0, nu, 0);
        prop_assert!((decade - 0.1f64.powf(k as f64 / nu)).abs() <= 1e-12);
    }

    #[test]
    fn relative_error_is_homogeneous_and_linear(seed in 0u64..1000, c in 0.01f64..100.0, t in -5.0f64..5.0) {
        let exact = points(seed, 50, 2);
        let dir = points(seed + 1, 50, 2);
        let base = relative_errors_of(&(&exact + &dir), &exact, true).unwrap();
        let scaled = relative_errors_of(&((&exact + &dir) * c), &(&exact * c), true).unwrap();
        prop_assert!((base.l2 - scaled.l2).abs() <= 1e-12 * base.l2);
        prop_assert!((base.linf.unwrap() - scaled.linf.unwrap()).abs() <= 1e-12 * base.linf.unwrap());
        let moved = relative_errors_of(&(&exact + &(&dir * t)), &exact, false).unwrap();
        prop_assert!((moved.l2 - t.abs() * base.l2).abs() <= 1e-12 * (1.0 + base.l2));
    }

    #[test]
    fn sampling_is_reproducible_and_inside(seed in 0u64..10_000, step in 0u64..100) {
        let p = preset("advection-fan").unwrap();
        let a = sample_batch(&p.domain, 300, 50, &[0, 1, 2, 3], seed, step).unwrap();
        let b = sample_batch(&p.domain, 300, 50, &[0, 1, 2, 3], seed, step).unwrap();
        prop_assert_eq!(&a.interior, &b.interior);
        prop_assert_eq!(&a.boundary, &b.boundary);
        prop_assert_eq!(&a.pieces, &b.pieces);
        for x in a.interior.rows() {
            prop_assert!(p.domain.contains(x.as_slice().unwrap()));
        }
        for (x, n) in a.boundary.rows().into_iter().zip(a.normals.rows()) {
            let norm: f64 = n.iter().map(|v| v * v).sum::<f64>().sqrt();
            prop_assert!((norm - 1.0).abs() < 1e-12);
            let r = (x[0] * x[0] + x[1] * x[1]).sqrt();
            prop_assert!((0.1 - 1e-12..=1.0 + 1e-12).contains(&r));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn sqrt_norm_ratio_ignores_test_scale(seed in 0u64..1000, s in 1e-3f64..1e3) {
        let p = preset("advection-discontinuous").unwrap();
        let u = FieldModel::new(vec![net(2, 8, 3, Activation::Relu, seed)], p.solution_encoder.clone()).unwrap();
        let mut v = FieldModel::new(vec![net(2, 8, 3, Activation::Tanh, seed + 7)], p.test_encoder.clone()).unwrap();
        let b = sample_batch(&p.domain, 200, 80, &p.loss.numerator_pieces, seed, 0).unwrap();
        let pts = LossPoints::from_batch(&b, Weighting::MeasureWeighted);
        let sqrt = LossConfig { denominator: Denominator::SqrtNorm, ..LossConfig::default() };
        let squared = LossConfig::default();
        let before = minimax_loss(&p.loss, &u, &v, &pts, &sqrt, None).unwrap().loss.value;
        let before_sq = minimax_loss(&p.loss, &u, &v, &pts, &squared, None).unwrap().loss.value;
        let a = v.nets[0].readout();
        v.nets[0].set_readout(&(&a * s));
        let after = minimax_loss(&p.loss, &u, &v, &pts, &sqrt, None).unwrap().loss.value;
        let after_sq = minimax_loss(&p.loss, &u, &v, &pts, &squared, None).unwrap().loss.value;
        prop_assert!((after - before).abs() <= 1e-12 * before.max(1e-300), "{before} vs {after}");
        prop_assert!((after_sq * s - before_sq).abs() <= 1e-10 * before_sq, "{before_sq} vs {after_sq}");
    }

    #[test]
    fn dual_norm_ignores_basis_scaling(scales in proptest::collection::vec(1e-3f64..1e3, 5)) {
        let p = preset("advection-discontinuous").unwrap();
        let pts = quadrature_points(&p, 12).unwrap();
        let sol = closed_form_field(2, 1, Arc::new(|x: &[Jet]| vec![x[0].sin() + 0.5]));
        let basis_fn = |k: usize, c: f64| -> FieldModel {
            // Vanishes on the outflow edges x = 1 and y = 1.
            let f: PointFn = Arc::new(move |x: &[Jet]| {
                let bubble = (&x[0] - 1.0) * (&x[1] - 1.0);
                let wave = (x[0].scale(k as f64 + 1.0) + x[1].scale(0.5 * k as f64)).cos();
                vec![(bubble * wave).scale(c)]
            });
            closed_form_field(2, 1, f)
        };
        let plain: Vec<FieldModel> = (0..5).map(|k| basis_fn(k, 1.0)).collect();
        let scaled: Vec<FieldModel> = (0..5).map(|k| basis_fn(k, scales[k])).collect();
        let a = dual_norm_residual(&p.loss, &sol, &plain, &pts).unwrap();
        let b = dual_norm_residual(&p.loss, &sol, &scaled, &pts).unwrap();
        prop_assert!(a > 1e-3);
        prop_assert!((a - b).abs() <= 1e-10 * a, "{a} vs {b}");
    }
}

#[test]
fn skip_structure_with_zero_hidden_weights() {
    // g_ℓ = σ(0) = 0, so h_ℓ = h_{ℓ−2} for even ℓ and 0 for odd ℓ.
    let x = points(3, 20, 2);
    for (depth, act) in [(7, Activation::Relu), (7, Activation::Tanh), (6, Activation::Relu), (6, Activation::Tanh)] {
        let mut p = net(2, 6, depth, act, 11);
        let t = p.tensors_mut();
        for l in 0..depth {
            t[1 + 2 * l].fill(0.0);
            t[2 + 2 * l].fill(0.0);
        }
        let out = p.forward(&x).unwrap();
        let expect = if depth % 2 == 1 {
            Array2::zeros((20, 1))
        } else {
            x.dot(&p.input_weight().t()).dot(&p.readout())
        };
        let err = (&out - &expect).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(err < 1e-14, "depth {depth}: {err}");
    }
}

#[test]
fn sampling_does_not_depend_on_worker_count() {
    let p = preset("wave-complex-domain").unwrap();
    let draw = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| sample_batch(&p.domain, 5000, 3000, &[0, 1], 17, 4).unwrap())
    };
    let a = draw(1);
    let b = draw(4);
    assert_eq!(a.interior, b.interior);
    assert_eq!(a.boundary, b.boundary);
    assert_eq!(a.normals, b.normals);
}

#[test]
fn gram_matrix_is_symmetric_positive_semidefinite() {
    let p = preset("advection-fan").unwrap();
    let pts = quadrature_points(&p, 16).unwrap();
    let sol = closed_form_field(2, 1, Arc::new(|x: &[Jet]| vec![x[0].clone()]));
    let tests: Vec<FieldModel> = (0..4)
        .map(|k| FieldModel::new(vec![net(2, 8, 3, Activation::Tanh, k)], p.test_encoder.clone()).unwrap())
        .collect();
    let (_, g) = residual_functionals(&p.loss, &sol, &tests, &pts).unwrap();
    let asym = (&g - &g.t()).iter().fold(0.0f64, |m, v| m.max(v.abs()));
    assert!(asym < 1e-14);
    let diag = g.diag().to_owned();
    assert!(diag.iter().all(|v| *v > 0.0));
    for i in 0..4 {
        for j in 0..4 {
            assert!(g[[i, j]].powi(2) <= diag[i] * diag[j] * (1.0 + 1e-12));
        }
    }
}
