use approx::assert_relative_eq;
use gradflow::experiments::gaussian_matrix;
use gradflow::flow::{run_flow, Clock, FlowState, Integrator, RunOptions, StopRule};
use gradflow::linalg::{cosine, min_norm_least_squares, solve, symmetric_eig, Matrix, DEFAULT_EIG_TOL};
use gradflow::losses::{
    descent_direction_check, loss, loss_gradient, separability_margin, Dataset, LossKind,
};
use gradflow::network::{homogeneity_residual, Activation, DeepNet, OutputMode};
use gradflow::oracles::{
    fd_gradient_check, growth_closed_form, hard_margin_svm, nonseparable_equilibrium_1d,
};
use gradflow::spectra::{classify, classify_eigenvalues, conjugacy_from_reports, hyperbolicity_sweep, SweepSettings};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn linear(w: &[f64]) -> DeepNet {
    DeepNet::new(vec![Matrix::row_vector(w)], Activation::Linear).unwrap()
}

fn flat_gradient(kind: LossKind, net: &DeepNet, data: &Dataset) -> Vec<f64> {
    loss_gradient(kind, net, data)
        .unwrap()
        .iter()
        .flat_map(|m| m.as_slice().to_vec())
        .collect()
}

/// `det(A − λI)` by Gaussian elimination with partial pivoting.
fn char_poly(a: &Matrix, lambda: f64) -> f64 {
    let n = a.rows();
    let mut m: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| a[(i, j)] - if i == j { lambda } else { 0.0 }).collect())
        .collect();
    let mut det = 1.0;
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| m[i][c].abs().total_cmp(&m[j][c].abs())).unwrap();
        if m[p][c] == 0.0 {
            return 0.0;
        }
        if p != c {
            m.swap(p, c);
            det = -det;
        }
        det *= m[c][c];
        for r in c + 1..n {
            let f = m[r][c] / m[c][c];
            for k in c..n {
                m[r][k] -= f * m[c][k];
            }
        }
    }
    det
}

#[test]
fn eigenvalues_match_characteristic_polynomial_roots() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let g = gaussian_matrix(4, 4, 1.0, &mut rng);
    let a = Matrix::from_fn(4, 4, |i, j| g[(i, j)] + g[(j, i)]);
    let bound = a.frobenius_norm() + 1.0;
    let grid = 40_000;
    let mut roots = Vec::new();
    let mut prev = char_poly(&a, -bound);
    for i in 1..=grid {
        let hi = -bound + 2.0 * bound * i as f64 / grid as f64;
        let cur = char_poly(&a, hi);
        if prev.signum() != cur.signum() {
            let (mut l, mut h) = (hi - 2.0 * bound / grid as f64, hi);
            for _ in 0..200 {
                let mid = 0.5 * (l + h);
                if char_poly(&a, mid).signum() == char_poly(&a, l).signum() {
                    l = mid;
                } else {
                    h = mid;
                }
            }
            roots.push(0.5 * (l + h));
        }
        prev = cur;
    }
    roots.reverse();
    let eig = symmetric_eig(&a, DEFAULT_EIG_TOL).unwrap();
    assert_eq!(roots.len(), 4);
    for (r, e) in roots.iter().zip(&eig.eigenvalues) {
        assert_relative_eq!(r, e, max_relative = 1e-8);
    }
}

#[test]
fn min_norm_is_the_ridge_limit() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let x = gaussian_matrix(3, 5, 1.0, &mut rng);
    let y: Vec<f64> = (0..3).map(|_| StandardNormal.sample(&mut rng)).collect();
    let w = min_norm_least_squares(&x, &y).unwrap();
    for eps in [1e-6, 1e-8] {
        let mut a = x.transpose().gram_rows();
        for i in 0..5 {
            a[(i, i)] += eps;
        }
        let ridge = solve(&a, &x.tr_matvec(&y)).unwrap();
        for (r, v) in ridge.iter().zip(&w) {
            assert_relative_eq!(r, v, max_relative = 1e-4, epsilon = 1e-10);
        }
    }
}

#[test]
fn two_layer_relu_forward_by_hand() {
    let net = DeepNet::new(
        vec![Matrix::from_rows(&[[1.0, 0.0], [0.0, -1.0]]).unwrap(), Matrix::row_vector(&[1.0, 1.0])],
        Activation::Relu,
    )
    .unwrap();
    assert_eq!(net.forward(&[1.0, 1.0]).unwrap(), 1.0);
}

#[test]
fn smoothed_relu_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..10 {
        let net = DeepNet::gaussian(&[3, 4, 3, 1], Activation::smoothed_relu(), OutputMode::Linear, 0.8, &mut rng).unwrap();
        let x: Vec<f64> = (0..3).map(|_| StandardNormal.sample(&mut rng)).collect();
        let g = net.layer_gradients(&x).unwrap().flatten();
        let err = fd_gradient_check(|w| net.with_flat(w).forward(&x).unwrap(), &g, &net.flatten(), 1e-6).unwrap();
        assert!(err <= 1e-5, "{err}");
    }
}

#[test]
fn logistic_loss_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let net = DeepNet::gaussian(&[2, 5, 1], Activation::smoothed_relu(), OutputMode::Linear, 1.0, &mut rng).unwrap();
    let data = Dataset::binary(vec![vec![0.5, -1.0], vec![1.5, 0.3], vec![-0.7, 0.2]], vec![1.0, -1.0, 1.0]).unwrap();
    let g = flat_gradient(LossKind::Logistic, &net, &data);
    let err = fd_gradient_check(
        |w| loss(LossKind::Logistic, &net.with_flat(w), &data).unwrap(),
        &g,
        &net.flatten(),
        1e-6,
    )
    .unwrap();
    assert!(err <= 1e-5, "{err}");
}

#[test]
fn deep_relu_homogeneity_per_layer() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    for _ in 0..20 {
        let net = DeepNet::gaussian(&[3, 4, 4, 1], Activation::Relu, OutputMode::Activated, 1.0, &mut rng).unwrap();
        let x: Vec<f64> = (0..3).map(|_| StandardNormal.sample(&mut rng)).collect();
        for k in 0..3 {
            assert!(homogeneity_residual(&net, &x, k).unwrap() <= 1e-8);
        }
    }
}

#[test]
fn trained_margin_matches_sample_scan() {
    let data = Dataset::binary(
        vec![vec![1.0, 0.8], vec![1.4, 0.2], vec![-1.1, -0.5], vec![-0.6, -1.2]],
        vec![1.0, 1.0, -1.0, -1.0],
    )
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let net = DeepNet::gaussian(&[2, 6, 1], Activation::Relu, OutputMode::Linear, 0.5, &mut rng).unwrap();
    let run = run_flow(
        FlowState::new(net, 0.05).unwrap(),
        LossKind::Logistic,
        &data,
        StopRule::max_time(200.0, 100_000),
        &RunOptions::every(0),
    )
    .unwrap();
    let trained = run.state.net;
    let scan = data
        .inputs()
        .iter()
        .zip(data.targets().unwrap())
        .map(|(x, y)| y * trained.forward(x).unwrap())
        .fold(f64::INFINITY, f64::min);
    let margin = separability_margin(&trained, &data).unwrap();
    assert!(margin > 0.0);
    assert_eq!(margin, scan);
}

#[test]
fn separator_is_a_descent_direction() {
    let data = Dataset::binary(vec![vec![1.0, 0.5], vec![-1.0, -0.5]], vec![1.0, -1.0]).unwrap();
    let star = linear(&[1.0, 0.5]);
    for w in [[0.0, 0.0], [3.0, -2.0], [-1.0, 4.0], [1.0, 0.5]] {
        let v = descent_direction_check(LossKind::Exponential, &linear(&w), &star, &data).unwrap();
        assert!(v < 0.0, "{w:?}: {v}");
    }
    // at W = 0 each term is −yₙ f(W*; xₙ) e⁰
    let v = descent_direction_check(LossKind::Exponential, &linear(&[0.0, 0.0]), &star, &data).unwrap();
    let want: f64 = -data
        .inputs()
        .iter()
        .zip(data.targets().unwrap())
        .map(|(x, y)| y * star.forward(x).unwrap())
        .sum::<f64>();
    assert_relative_eq!(v, want, max_relative = 1e-12);
}

#[test]
fn square_flow_reaches_least_squares_floor() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let x = gaussian_matrix(8, 3, 1.0, &mut rng);
    let y: Vec<f64> = (0..8).map(|_| StandardNormal.sample(&mut rng)).collect();
    let rows: Vec<Vec<f64>> = (0..8).map(|i| x.row(i).to_vec()).collect();
    let data = Dataset::regression(rows, y.clone()).unwrap();
    // normal equations
    let w_ls = solve(&x.transpose().gram_rows(), &x.tr_matvec(&y)).unwrap();
    let floor: f64 = x.matvec(&w_ls).iter().zip(&y).map(|(a, b)| (a - b).powi(2)).sum();
    let run = run_flow(
        FlowState::new(linear(&[0.0; 3]), 0.01).unwrap(),
        LossKind::Square,
        &data,
        StopRule::gradient(1e-11, 1_000_000),
        &RunOptions::every(0),
    )
    .unwrap();
    assert_relative_eq!(loss(LossKind::Square, &run.state.net, &data).unwrap(), floor, max_relative = 1e-9);
}

/// Max-margin direction by scanning unit vectors in the plane.
fn scanned_margin_direction(data: &Dataset) -> Vec<f64> {
    let y = data.targets().unwrap();
    let mut best = (f64::NEG_INFINITY, vec![0.0, 0.0]);
    let steps = 2_000_000;
    for i in 0..steps {
        let a = std::f64::consts::TAU * i as f64 / steps as f64;
        let w = [a.cos(), a.sin()];
        let m = data
            .inputs()
            .iter()
            .zip(y)
            .map(|(x, yn)| yn * (w[0] * x[0] + w[1] * x[1]))
            .fold(f64::INFINITY, f64::min);
        if m > best.0 {
            best = (m, w.to_vec());
        }
    }
    best.1
}

#[test]
fn svm_three_points_against_scan_and_flow() {
    let data = Dataset::binary(vec![vec![2.0, 0.0], vec![0.0, 2.0], vec![-1.0, -1.0]], vec![1.0, 1.0, -1.0]).unwrap();
    let sol = hard_margin_svm(&data).unwrap();
    let scanned = scanned_margin_direction(&data);
    assert!(cosine(&sol.w_tilde, &scanned) >= 1.0 - 1e-10);
    let state = FlowState::new(linear(&[0.0, 0.0]), 0.05)
        .unwrap()
        .with_integrator(Integrator::Rk4)
        .with_clock(Clock::Log)
        .unwrap();
    let run = run_flow(state, LossKind::Exponential, &data, StopRule::max_time(400f64.exp_m1(), 10_000), &RunOptions::every(0))
        .unwrap();
    assert!(cosine(&run.state.weights(), &sol.w_tilde) >= 0.999);
}

#[test]
fn svm_trivial_cases() {
    let pair = Dataset::binary(vec![vec![1.0, 0.0], vec![-1.0, 0.0]], vec![1.0, -1.0]).unwrap();
    let s = hard_margin_svm(&pair).unwrap();
    assert_relative_eq!(s.w_raw[0], 1.0, epsilon = 1e-12);
    assert_relative_eq!(s.w_raw[1], 0.0, epsilon = 1e-12);
    assert_relative_eq!(s.margin, 1.0, epsilon = 1e-12);
    let one = Dataset::binary(vec![vec![3.0, 4.0]], vec![1.0]).unwrap();
    let s = hard_margin_svm(&one).unwrap();
    assert_relative_eq!(s.w_raw[0], 3.0 / 25.0, epsilon = 1e-12);
    assert_relative_eq!(s.w_raw[1], 4.0 / 25.0, epsilon = 1e-12);
    assert_relative_eq!(s.margin, 5.0, epsilon = 1e-12);
}

#[test]
fn growth_single_layer_value() {
    assert_relative_eq!(growth_closed_form(1, 1.0, 100.0, 0.0).unwrap(), 4.61512, epsilon = 1e-5);
}

#[test]
fn nonseparable_equilibria() {
    assert_relative_eq!(nonseparable_equilibrium_1d(1.0, 2.0).unwrap().w, 0.2310491, epsilon = 1e-7);
    assert_relative_eq!(nonseparable_equilibrium_1d(1.0, std::f64::consts::E).unwrap().w, 0.2689414, epsilon = 1e-7);
}

#[test]
fn finite_difference_checker_examples() {
    let q = |x: &[f64]| 3.0 * x[0] * x[0] - x[0] * x[1] + 0.5 * x[1] * x[1];
    let p = [0.7, -1.3];
    let g = [6.0 * p[0] - p[1], -p[0] + p[1]];
    assert!(fd_gradient_check(q, &g, &p, 1e-4).unwrap() <= 1e-10);

    let data = Dataset::binary(vec![vec![1.0, 0.5], vec![-0.3, 1.0]], vec![1.0, -1.0]).unwrap();
    let net = linear(&[0.4, -0.2]);
    let g = flat_gradient(LossKind::Exponential, &net, &data);
    let f = |w: &[f64]| loss(LossKind::Exponential, &linear(w), &data).unwrap();
    assert!(fd_gradient_check(f, &g, &net.flatten(), 1e-6).unwrap() <= 1e-6);
    let mut bad = g.clone();
    bad[1] *= 1.01;
    assert!(fd_gradient_check(f, &bad, &net.flatten(), 1e-6).unwrap() >= 1e-3);
}

#[test]
fn regularized_exponential_linear_min_eigenvalue() {
    let data = Dataset::binary(vec![vec![1.0, 0.3], vec![-0.5, -1.0], vec![0.8, -0.2]], vec![1.0, -1.0, 1.0]).unwrap();
    let entries = hyperbolicity_sweep(LossKind::Exponential, &linear(&[0.1, 0.1]), &data, &[1e-2], &SweepSettings::default()).unwrap();
    let e = &entries[0];
    assert!(e.warning.is_none());
    assert!(e.report.min_eigenvalue() >= 2.0 * 1e-2 - 1e-8);
    assert!(e.meets_prediction());
}

#[test]
fn regularized_deep_net_is_conjugate_to_a_linear_system() {
    let mut rng = ChaCha8Rng::seed_from_u64(18);
    let net = DeepNet::gaussian(&[2, 3, 1], Activation::smoothed_relu(), OutputMode::Linear, 0.7, &mut rng).unwrap();
    let data = Dataset::regression(vec![vec![1.0, 0.2], vec![-0.4, 0.9]], vec![0.5, -0.3]).unwrap();
    let entries = hyperbolicity_sweep(LossKind::Square, &net, &data, &[0.1], &SweepSettings::default()).unwrap();
    let deep = &entries[0].report;
    let [s, u, _] = deep.counts();
    let mut diag = vec![1.0; s];
    diag.extend(vec![-1.0; u]);
    let lin = classify(&Matrix::from_diag(&diag), 1e-8).unwrap();
    assert!(conjugacy_from_reports(deep, &lin, 1e-8).topologically_conjugate);
    let other = classify_eigenvalues(vec![1.0; s + u + 1], 1e-8);
    assert!(!conjugacy_from_reports(deep, &other, 1e-8).topologically_conjugate);
}
