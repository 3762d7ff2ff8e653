use gradflow::flow::{csv_float, flow_step, FlowState};
use gradflow::linalg::{dot, min_norm_least_squares, norm2, null_space_projector, symmetric_eig, Matrix, DEFAULT_EIG_TOL};
use gradflow::losses::{Dataset, LossKind};
use gradflow::network::{normalize_layers, Activation, DeepNet, OutputMode};
use gradflow::oracles::{growth_closed_form, growth_numeric, hard_margin_svm, logarithmic_integral, logarithmic_integral_inverse};
use gradflow::spectra::{classify_eigenvalues, takeuchi_condition};
use proptest::prelude::*;

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Matrix> {
    prop::collection::vec(-2.0f64..2.0, rows * cols).prop_map(move |v| Matrix::from_vec(rows, cols, v).unwrap())
}

fn sized_matrix() -> impl Strategy<Value = Matrix> {
    (1usize..5, 1usize..7).prop_flat_map(|(r, c)| matrix(r, c))
}

fn symmetric() -> impl Strategy<Value = Matrix> {
    (1usize..7).prop_flat_map(|n| matrix(n, n).prop_map(move |m| Matrix::from_fn(n, n, |i, j| m[(i, j)] + m[(j, i)])))
}

fn rows_of(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.rows()).map(|i| m.row(i).to_vec()).collect()
}

fn relu_net() -> impl Strategy<Value = (DeepNet, Vec<f64>)> {
    (prop::collection::vec(1usize..4, 2..5), any::<bool>()).prop_flat_map(|(mut dims, linear_out)| {
        *dims.last_mut().unwrap() = 1;
        let sizes: Vec<(usize, usize)> = dims.windows(2).map(|w| (w[1], w[0])).collect();
        let d = dims[0];
        let layers: Vec<_> = sizes.into_iter().map(|(r, c)| matrix(r, c)).collect();
        (layers, prop::collection::vec(-2.0f64..2.0, d)).prop_map(move |(layers, x)| {
            let output = if linear_out { OutputMode::Linear } else { OutputMode::Activated };
            (DeepNet::with_output(layers, Activation::Relu, output).unwrap(), x)
        })
    })
}

proptest! {
    #[test]
    fn eigendecomposition_reconstructs(a in symmetric()) {
        let eig = symmetric_eig(&a, DEFAULT_EIG_TOL).unwrap();
        let back = eig.reconstruct();
        let scale = a.frobenius_norm().max(1.0);
        prop_assert!(back.sub(&a).frobenius_norm() <= 1e-10 * scale);
        prop_assert!(eig.eigenvalues.windows(2).all(|w| w[0] >= w[1]));
        let q = &eig.eigenvectors;
        let qtq = q.transpose().matmul(q).unwrap();
        prop_assert!(qtq.sub(&Matrix::identity(a.rows())).frobenius_norm() <= 1e-10);
    }

    #[test]
    fn min_norm_solves_normal_equations_in_row_space(x in sized_matrix(), seed in prop::collection::vec(-1.0f64..1.0, 4)) {
        prop_assume!(x.frobenius_norm() > 1e-3);
        let y: Vec<f64> = (0..x.rows()).map(|i| seed[i % seed.len()]).collect();
        let w = min_norm_least_squares(&x, &y).unwrap();
        let r: Vec<f64> = x.matvec(&w).iter().zip(&y).map(|(a, b)| a - b).collect();
        let normal = x.tr_matvec(&r);
        let scale = x.frobenius_norm().powi(2) * (1.0 + norm2(&w));
        prop_assert!(norm2(&normal) <= 1e-8 * scale);
        let p = null_space_projector(&x).unwrap();
        prop_assert!(norm2(&p.matvec(&w)) <= 1e-8 * (1.0 + norm2(&w)));
    }

    #[test]
    fn null_space_projector_is_idempotent_and_annihilated(x in sized_matrix()) {
        prop_assume!(x.frobenius_norm() > 1e-3);
        let p = null_space_projector(&x).unwrap();
        let pp = p.matmul(&p).unwrap();
        prop_assert!(pp.sub(&p).frobenius_norm() <= 1e-9);
        prop_assert!(x.matmul(&p).unwrap().frobenius_norm() <= 1e-9 * x.frobenius_norm().max(1.0));
    }

    #[test]
    fn linear_flow_steps_keep_the_null_component(
        x in (1usize..4).prop_flat_map(|n| matrix(n, n + 2)),
        w in prop::collection::vec(-1.0f64..1.0, 5),
        square in any::<bool>(),
    ) {
        prop_assume!(x.frobenius_norm() > 1e-2);
        let d = x.cols();
        let w0: Vec<f64> = (0..d).map(|i| w[i % w.len()]).collect();
        let n = x.rows();
        let (kind, data) = if square {
            (LossKind::Square, Dataset::regression(rows_of(&x), vec![0.5; n]).unwrap())
        } else {
            (LossKind::Exponential, Dataset::binary(rows_of(&x), (0..n).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect()).unwrap())
        };
        let p = null_space_projector(&x).unwrap();
        let mut state = FlowState::new(DeepNet::new(vec![Matrix::row_vector(&w0)], Activation::Linear).unwrap(), 1e-3).unwrap();
        for _ in 0..50 {
            state = flow_step(&state, kind, &data).unwrap();
        }
        let before = p.matvec(&w0);
        let after = p.matvec(&state.weights());
        let drift = before.iter().zip(&after).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        prop_assert!(drift <= 1e-12, "drift {}", drift);
    }

    #[test]
    fn relu_layers_are_degree_one_homogeneous((net, x) in relu_net(), k in 0usize..4, c in 0.1f64..5.0) {
        let k = k % net.depth();
        let f = net.forward(&x).unwrap();
        let mut scaled = net.clone();
        scaled.layers_mut()[k] = net.layer(k).scaled(c);
        let g = scaled.forward(&x).unwrap();
        prop_assert!((g - c * f).abs() <= 1e-10 * (1.0 + (c * f).abs()));
    }

    #[test]
    fn normalization_reassembles((net, _) in relu_net()) {
        prop_assume!(net.layer_norms().iter().all(|&r| r > 1e-6));
        let (rhos, vs) = normalize_layers(&net).unwrap();
        for (k, (&r, v)) in rhos.iter().zip(vs.layers()).enumerate() {
            prop_assert!((v.frobenius_norm() - 1.0).abs() <= 1e-12);
            prop_assert!(v.scaled(r).sub(net.layer(k)).frobenius_norm() <= 1e-12 * (1.0 + r));
        }
    }

    #[test]
    fn svm_solution_is_feasible_and_beats_random_directions(
        pts in prop::collection::vec((0.2f64..2.0, -2.0f64..2.0), 1..7),
        angle in 0.0f64..std::f64::consts::TAU,
        probes in prop::collection::vec(0.0f64..std::f64::consts::TAU, 32),
    ) {
        // samples on both sides of the line through the origin with normal `angle`
        let n = [angle.cos(), angle.sin()];
        let t = [-n[1], n[0]];
        let mut inputs = Vec::new();
        let mut labels = Vec::new();
        for (i, (a, b)) in pts.iter().enumerate() {
            let s = if i % 2 == 0 { 1.0 } else { -1.0 };
            inputs.push(vec![s * a * n[0] + b * t[0], s * a * n[1] + b * t[1]]);
            labels.push(s);
        }
        let data = Dataset::binary(inputs.clone(), labels.clone()).unwrap();
        let sol = hard_margin_svm(&data).unwrap();
        for (x, y) in inputs.iter().zip(&labels) {
            prop_assert!(y * dot(&sol.w_raw, x) >= 1.0 - 1e-9);
        }
        prop_assert!((sol.margin - 1.0 / norm2(&sol.w_raw)).abs() <= 1e-12);
        for a in probes {
            let w = [a.cos(), a.sin()];
            let m = inputs.iter().zip(&labels).map(|(x, y)| y * dot(&w, x)).fold(f64::INFINITY, f64::min);
            prop_assert!(m <= sol.margin + 1e-9);
        }
    }

    #[test]
    fn csv_floats_round_trip(v in prop::num::f64::NORMAL | prop::num::f64::ZERO) {
        let s = csv_float(v);
        prop_assert_eq!(s.parse::<f64>().unwrap(), v);
        prop_assert!(!s.contains(','));
    }

    #[test]
    fn network_json_round_trips((net, _) in relu_net()) {
        prop_assert_eq!(DeepNet::from_json(&net.to_json()).unwrap(), net);
    }

    #[test]
    fn dataset_json_round_trips(x in sized_matrix(), y in prop::collection::vec(-3.0f64..3.0, 4)) {
        let targets: Vec<f64> = (0..x.rows()).map(|i| y[i % y.len()]).collect();
        let data = Dataset::regression(rows_of(&x), targets).unwrap();
        prop_assert_eq!(Dataset::from_json(&data.to_json()).unwrap(), data);
    }

    #[test]
    fn classification_partitions_the_spectrum(eigs in prop::collection::vec(-5.0f64..5.0, 0..12), tol in 1e-12f64..1e-2) {
        let r = classify_eigenvalues(eigs.clone(), tol);
        prop_assert_eq!(r.n_stable + r.n_unstable + r.n_zero, eigs.len());
        prop_assert!(r.eigenvalues.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn logarithmic_integral_inverse_round_trips(z in 1.5f64..1e8) {
        let y = logarithmic_integral(z).unwrap();
        let back = logarithmic_integral_inverse(y).unwrap();
        prop_assert!((back - z).abs() <= 1e-9 * z);
    }

    #[test]
    fn takeuchi_condition_is_monotone_in_samples(dims in prop::collection::vec(1usize..6, 2..5), n in 2usize..20) {
        if takeuchi_condition(&dims, n) {
            prop_assert!(takeuchi_condition(&dims, n - 1));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn single_layer_growth_numeric_matches_closed_form(f in 0.3f64..2.0, rho0 in 0.0f64..2.0) {
        let times = [1.0, 10.0, 100.0];
        let num = growth_numeric(1, f, rho0, &times, 1e-3).unwrap();
        for (t, r) in times.iter().zip(&num) {
            let want = growth_closed_form(1, f, *t, rho0).unwrap();
            prop_assert!((r - want).abs() <= 1e-6 * want.abs().max(1.0), "t={} {} vs {}", t, r, want);
        }
    }
}
