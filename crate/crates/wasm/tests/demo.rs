use approx::assert_relative_eq;
use gradflow_wasm::{degree_sweep_demo, growth_demo, max_margin_demo};

#[test]
fn trajectory_turns_toward_the_svm_direction() {
    let xs = [2.0, 0.0, -1.0];
    let ys = [0.0, 2.0, -1.0];
    let labels = [1.0, 1.0, -1.0];
    let d = max_margin_demo(&xs, &ys, &labels, [0.3, -0.2], 150.0, 50).unwrap();
    assert!(d.trajectory.len() >= 50);
    let first = d.trajectory.first().unwrap();
    let last = d.trajectory.last().unwrap();
    assert_relative_eq!(last.log_time, 150.0, epsilon = 1e-9);
    assert!(last.cosine_to_svm > first.cosine_to_svm);
    assert!(last.cosine_to_svm >= 0.999);
    assert_relative_eq!(d.w_tilde[0], d.w_tilde[1], epsilon = 1e-12);
}

#[test]
fn trajectory_rejects_bad_input() {
    assert!(max_margin_demo(&[1.0], &[0.0, 1.0], &[1.0], [0.0, 0.0], 10.0, 5).is_err());
    let e = max_margin_demo(&[1.0, 2.0], &[0.0, 0.0], &[1.0, -1.0], [0.0, 0.0], 10.0, 5).unwrap_err();
    assert!(!e.is_empty());
}

#[test]
fn growth_curves_follow_closed_forms() {
    let g = growth_demo(&[1, 2, 4], 1.0, 1e4, 20).unwrap();
    assert_eq!(g.times.len(), 20);
    for c in &g.curves[..2] {
        let cf = c.closed_form.as_ref().unwrap();
        for (a, b) in c.rho.iter().zip(cf) {
            assert_relative_eq!(a, b, max_relative = 1e-6);
        }
    }
    assert!(g.curves[2].closed_form.is_none());
    assert!(g.curves[2].product.last() > g.curves[1].product.last());
    assert!(growth_demo(&[9], 1.0, 1e4, 20).is_err());
}

#[test]
fn degree_sweep_interpolates_past_the_sample_count() {
    let json = degree_sweep_demo(12, 1.0, 30).unwrap();
    let v: serde_json::Value = serde_json::from_str(&json).unwrap();
    let pts = v.as_array().unwrap();
    assert_eq!(pts.len(), 30);
    for p in &pts[11..] {
        assert!(p["train_loss"].as_f64().unwrap() <= 1e-12);
    }
    assert!(degree_sweep_demo(12, 1.0, 10_000).is_err());
}
