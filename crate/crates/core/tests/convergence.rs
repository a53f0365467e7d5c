//! Order of the Hamiltonian integrator against the closed-form Heisenberg arc.

use srx_core::*;

fn arc_endpoint(lambda: f64, t: f64) -> [f64; 3] {
    let (s, c) = (lambda * t).sin_cos();
    [
        s / lambda,
        (1.0 - c) / lambda,
        (t - s / lambda) / (2.0 * lambda),
    ]
}

#[test]
fn doubling_substeps_divides_the_error_by_sixteen() {
    let frame = Frame::heisenberg();
    for lambda in [1.0, 2.0] {
        let exact = arc_endpoint(lambda, 1.0);
        let error = |substeps: usize| {
            let ex = hamiltonian_extremal(
                &frame,
                &[0.0; 3],
                &[1.0, 0.0, lambda],
                1.0,
                10,
                substeps,
                None,
            )
            .unwrap();
            let q = ex.hamiltonian_states.last().unwrap();
            (0..3)
                .map(|i| (q[i] - exact[i]).powi(2))
                .sum::<f64>()
                .sqrt()
        };
        let errors: Vec<f64> = [1, 2, 4].into_iter().map(error).collect();
        for pair in errors.windows(2) {
            let ratio = pair[0] / pair[1];
            assert!(
                (12.0..=20.0).contains(&ratio),
                "lambda {lambda}: ratio {ratio}"
            );
        }
    }
}

#[test]
fn sampled_control_stays_close_to_the_arc() {
    let frame = Frame::heisenberg();
    let ex = hamiltonian_extremal(&frame, &[0.0; 3], &[1.0, 0.0, 1.0], 1.0, 1000, 1, None).unwrap();
    let exact = arc_endpoint(1.0, 1.0);
    let q = ex.trajectory.endpoint();
    for i in 0..3 {
        assert!((q[i] - exact[i]).abs() < 1e-6);
    }
    assert!(ex.level_drift < 1e-12);
    assert!(ex.control.is_normalized());
}
