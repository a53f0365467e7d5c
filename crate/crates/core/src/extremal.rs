//! The flow-invariant orthogonal distribution along a trajectory, the
//! geometric test for normal extremals, and a Hamiltonian generator of
//! candidate extremals.
//!
//! Along a trajectory `gamma` with velocity `f_{u(t)}`, the distribution at
//! time `t` is the span of `T Phi_{t tau}(X)` over all `X in D` orthogonal to
//! the velocity at `tau`. Because the frame is orthonormal, orthogonality is
//! checked in control coordinates: `X = sum_i c^i X_i` with `c . u(tau) = 0`.
//! A unit-speed trajectory is a normal extremal iff its velocity is regular
//! and never lies in that span.

use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};

use crate::control::ControlSignal;
use crate::error::{Error, Result};
use crate::flow::{integrate_trajectory, rk4_step, tangent_flow, TangentFlow, Trajectory};
use crate::frame::{Domain, Frame};
use crate::math::{all_finite, asin, norm2, sin};
use crate::settings::{Settings, TauRange};
use crate::subspace::{numerical_span, projection_residual};

/// Orthonormal basis of `u^perp` in `R^k`, from the Householder reflector that
/// maps `u / |u|` to a multiple of `e_1`.
pub fn orthogonal_control_complement(u: &[f64]) -> Result<Vec<Vec<f64>>> {
    let norm = norm2(u);
    if norm == 0.0 || !norm.is_finite() {
        return Err(Error::ZeroVector);
    }
    let k = u.len();
    let mut w: Vec<f64> = u.iter().map(|x| x / norm).collect();
    // w = u_hat + sign(u_hat_1) e_1 avoids cancellation
    let sign = if w[0] >= 0.0 { 1.0 } else { -1.0 };
    w[0] += sign;
    let ww: f64 = w.iter().map(|x| x * x).sum();
    Ok((1..k)
        .map(|col| {
            (0..k)
                .map(|row| {
                    let id = if row == col { 1.0 } else { 0.0 };
                    id - 2.0 * w[row] * w[col] / ww
                })
                .collect()
        })
        .collect())
}

/// Numerical span of the flow-invariant orthogonal distribution at one time.
#[derive(Debug, Clone, PartialEq)]
pub struct OrthoDistribution {
    pub t: f64,
    /// `n x r`, orthonormal columns.
    pub basis: DMatrix<f64>,
    /// Spectrum of the stacked pushed-forward directions, before truncation.
    pub singular_values: Vec<f64>,
    pub tau_grid: Vec<f64>,
}

impl OrthoDistribution {
    pub fn rank(&self) -> usize {
        self.basis.ncols()
    }

    /// `|v - P v|_2 / |v|_2`, zero for `v = 0`.
    pub fn relative_residual(&self, v: &DVector<f64>) -> f64 {
        let norm = v.norm();
        if norm == 0.0 {
            return 0.0;
        }
        projection_residual(&self.basis, v).norm() / norm
    }
}

/// Orthogonal directions pulled back to the anchor of a tangent flow, so the
/// span at any time is `M(t)` applied to a column subset.
pub(crate) struct PerpDirections {
    pulled: DMatrix<f64>,
    /// Grid node of every column.
    owner: Vec<usize>,
    per_node: usize,
}

impl PerpDirections {
    pub(crate) fn new(frame: &Frame, traj: &Trajectory, tf: &TangentFlow) -> Result<Self> {
        let n = frame.n();
        let nodes = traj.states.len();
        if tf.len() != nodes {
            return Err(Error::GridMismatch);
        }
        let per_node = frame.k() - 1;
        let mut pulled = DMatrix::zeros(n, nodes * per_node);
        let mut owner = Vec::with_capacity(nodes * per_node);
        for j in 0..nodes {
            let uj = traj.control.node_value(j);
            let comps = orthogonal_control_complement(&uj)?;
            let fm = frame.frame_matrix(traj.states[j].as_slice());
            for (c, comp) in comps.iter().enumerate() {
                let x = &fm * DVector::from_column_slice(comp);
                pulled.set_column(j * per_node + c, &tf.pull_to_anchor(j, &x));
                owner.push(j);
            }
        }
        Ok(Self {
            pulled,
            owner,
            per_node,
        })
    }

    pub(crate) fn span_at(
        &self,
        tf: &TangentFlow,
        j: usize,
        settings: &Settings,
    ) -> Result<OrthoDistribution> {
        let stride = settings.tau_stride.max(1);
        let last = tf.len() - 1;
        let selected = |i: usize| {
            let in_range = match settings.tau_range {
                TauRange::UpToT => i <= j,
                TauRange::Full => true,
            };
            in_range && (i.is_multiple_of(stride) || i == j || i == last)
        };
        let cols: Vec<usize> = (0..self.owner.len())
            .filter(|&c| selected(self.owner[c]))
            .collect();
        if cols.len() < self.per_node {
            return Err(Error::DegenerateSampling(alloc::format!(
                "{} directions for a complement of dimension {}",
                cols.len(),
                self.per_node
            )));
        }
        let mut tau_grid: Vec<f64> = cols.iter().map(|&c| tf.grid[self.owner[c]]).collect();
        tau_grid.dedup();
        let sub = self.pulled.select_columns(cols.iter());
        let a = &tf.matrices[j] * sub;
        let (basis, singular_values) = numerical_span(&a, settings.sigma_tol);
        Ok(OrthoDistribution {
            t: tf.grid[j],
            basis,
            singular_values,
            tau_grid,
        })
    }
}

/// Span of the pushed-forward orthogonal directions at grid time `t`.
pub fn build_f_perp(
    frame: &Frame,
    traj: &Trajectory,
    tf: &TangentFlow,
    t: f64,
    settings: &Settings,
) -> Result<OrthoDistribution> {
    let j = traj.control.node_index(t).ok_or(Error::NotOnGrid(t))?;
    PerpDirections::new(frame, traj, tf)?.span_at(tf, j, settings)
}

/// Angle in `[0, pi/2]` between `v` and the subspace.
pub fn angle_to_subspace(v: &DVector<f64>, w: &OrthoDistribution) -> Result<f64> {
    let norm = v.norm();
    if norm == 0.0 {
        return Err(Error::ZeroVector);
    }
    let ratio = (projection_residual(&w.basis, v).norm() / norm).clamp(0.0, 1.0);
    Ok(asin(ratio))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpanStatus {
    /// The velocity stays at least `theta_min` away from the span.
    Certified,
    /// The angle dropped below the resolvable threshold.
    Inconclusive,
}

/// Overall outcome of [`nsre_check`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Certified,
    Failed,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NsreReport {
    pub grid: Vec<f64>,
    /// Angle between the velocity and the span, per grid node (rad).
    pub angles: Vec<f64>,
    pub ranks: Vec<usize>,
    pub c: f64,
    pub regularity_ok: bool,
    pub b2_ok: bool,
    pub b2_status: SpanStatus,
    pub min_speed: f64,
    pub min_sin: f64,
    /// Largest discrete derivative of `t -> f_{u(t)}(gamma(t))`.
    pub max_velocity_derivative: f64,
    pub acb_bound: f64,
    pub theta_min: f64,
    pub tau_range: TauRange,
}

impl NsreReport {
    pub fn verdict(&self) -> Verdict {
        if !self.regularity_ok {
            Verdict::Failed
        } else if self.b2_ok {
            Verdict::Certified
        } else {
            Verdict::Inconclusive
        }
    }
}

/// Largest `|f_{u_j}(gamma_j) - f_{u_{j-1}}(gamma_{j-1})| / dt` over cell
/// starts: the discrete stand-in for an absolutely continuous velocity with
/// bounded derivative.
pub fn max_velocity_derivative(frame: &Frame, traj: &Trajectory) -> f64 {
    let u = &traj.control;
    let start = |j: usize| frame.velocity(u.cell(j), traj.states[j].as_slice());
    (1..u.n_cells())
        .map(|j| (start(j) - start(j - 1)).norm() / u.dt())
        .fold(0.0, f64::max)
}

/// Geometric normal-extremal test for a unit-speed trajectory.
///
/// Regularity is judged by the discrete derivative of the velocity between
/// consecutive cells, against `settings.acb_bound`. The span condition asks
/// the velocity to keep an angle above `settings.theta_min` from the span at
/// every grid node. When both hold, `c = min |sin theta| * min speed`.
pub fn nsre_check(frame: &Frame, traj: &Trajectory, settings: &Settings) -> Result<NsreReport> {
    let u = &traj.control;
    u.check_normalized()?;
    let nodes = traj.states.len();

    let max_derivative = max_velocity_derivative(frame, traj);
    let regularity_ok = max_derivative <= settings.acb_bound;

    let mut min_speed = f64::INFINITY;
    for j in 0..u.n_cells() {
        let a = frame.velocity(u.cell(j), traj.states[j].as_slice()).norm();
        let b = frame
            .velocity(u.cell(j), traj.states[j + 1].as_slice())
            .norm();
        min_speed = min_speed.min(a).min(b);
    }

    let tf = tangent_flow(frame, u, traj, 0.0, settings.substeps)?;
    let perp = PerpDirections::new(frame, traj, &tf)?;
    let mut angles = Vec::with_capacity(nodes);
    let mut ranks = Vec::with_capacity(nodes);
    for j in 0..nodes {
        let span = perp.span_at(&tf, j, settings)?;
        let v = traj.velocity(frame, j);
        angles.push(angle_to_subspace(&v, &span)?);
        ranks.push(span.rank());
    }
    let min_angle = angles.iter().copied().fold(f64::INFINITY, f64::min);
    let min_sin = angles
        .iter()
        .map(|a| sin(*a).abs())
        .fold(f64::INFINITY, f64::min);
    let b2_ok = min_angle > settings.theta_min;
    let c = if regularity_ok && b2_ok {
        min_sin * min_speed
    } else {
        0.0
    };

    Ok(NsreReport {
        grid: traj.grid.clone(),
        angles,
        ranks,
        c,
        regularity_ok,
        b2_ok,
        b2_status: if b2_ok {
            SpanStatus::Certified
        } else {
            SpanStatus::Inconclusive
        },
        min_speed,
        min_sin,
        max_velocity_derivative: max_derivative,
        acb_bound: settings.acb_bound,
        theta_min: settings.theta_min,
        tau_range: settings.tau_range,
    })
}

/// Candidate normal extremal generated from an initial covector.
#[derive(Debug, Clone, PartialEq)]
pub struct Extremal {
    /// Trajectory driven by the sampled control (consistent with `control`).
    pub trajectory: Trajectory,
    /// Unit-normalized control, sampled at cell midpoints.
    pub control: ControlSignal,
    /// States of the Hamiltonian integration itself, per grid node.
    pub hamiltonian_states: Vec<DVector<f64>>,
    pub costates: Vec<DVector<f64>>,
    /// Largest `|sum_i <p, X_i(q)>^2 - 1|` seen along the Hamiltonian flow.
    pub level_drift: f64,
}

/// Tolerance on the unit Hamiltonian level of the initial covector.
pub const LEVEL_TOL: f64 = 1e-9;

fn hamiltonian_controls(frame: &Frame, q: &[f64], p: &DVector<f64>) -> Vec<f64> {
    frame.fields().iter().map(|x| x.eval(q).dot(p)).collect()
}

/// Integrates `dq/dt = sum u^i X_i(q)`, `dp/dt = -sum u^i (dX_i/dq)^T p` with
/// `u^i = <p, X_i(q)>` and samples the control at cell midpoints.
pub fn hamiltonian_extremal(
    frame: &Frame,
    q0: &[f64],
    p0: &[f64],
    horizon: f64,
    cells: usize,
    substeps: usize,
    domain: Option<&Domain>,
) -> Result<Extremal> {
    let n = frame.n();
    for v in [q0, p0] {
        if v.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: v.len(),
            });
        }
        if !all_finite(v) {
            return Err(Error::NonFinite("initial condition"));
        }
    }
    if cells == 0 || horizon.is_nan() || horizon <= 0.0 {
        return Err(Error::InvalidControl(alloc::format!(
            "need a positive horizon and at least one cell (T = {horizon}, cells = {cells})"
        )));
    }
    let p0v = DVector::from_column_slice(p0);
    let level: f64 = hamiltonian_controls(frame, q0, &p0v)
        .iter()
        .map(|x| x * x)
        .sum();
    if (level - 1.0).abs() > LEVEL_TOL {
        return Err(Error::NonUnitLevel { level });
    }

    let rhs = |y: &DMatrix<f64>| {
        let q = y.view((0, 0), (n, 1)).into_owned();
        let p = y.view((n, 0), (n, 1)).into_owned();
        let u = hamiltonian_controls(frame, q.as_slice(), &p.column(0).into_owned());
        let mut out = DMatrix::zeros(2 * n, 1);
        let v = frame.velocity(&u, q.as_slice());
        out.view_mut((0, 0), (n, 1)).copy_from(&v);
        let mut pdot = DVector::zeros(n);
        for (ui, field) in u.iter().zip(frame.fields()) {
            pdot -= field.jacobian(q.as_slice()).transpose() * p.column(0) * *ui;
        }
        out.view_mut((n, 0), (n, 1)).copy_from(&pdot);
        out
    };

    let substeps = substeps.max(1);
    let h = horizon / cells as f64 / (2 * substeps) as f64;
    let mut y = DMatrix::zeros(2 * n, 1);
    y.view_mut((0, 0), (n, 1)).copy_from_slice(q0);
    y.view_mut((n, 0), (n, 1)).copy_from_slice(p0);

    let split = |y: &DMatrix<f64>| {
        (
            DVector::from_column_slice(&y.as_slice()[..n]),
            DVector::from_column_slice(&y.as_slice()[n..]),
        )
    };
    let mut level_drift: f64 = 0.0;
    let mut track = |q: &DVector<f64>, p: &DVector<f64>| {
        let u = hamiltonian_controls(frame, q.as_slice(), p);
        let lvl: f64 = u.iter().map(|x| x * x).sum();
        level_drift = level_drift.max((lvl - 1.0).abs());
        u
    };

    let (q, p) = split(&y);
    track(&q, &p);
    let mut hamiltonian_states = alloc::vec![q];
    let mut costates = alloc::vec![p];
    let mut samples = Vec::with_capacity(cells * frame.k());
    for j in 0..cells {
        for half in 0..2 {
            for _ in 0..substeps {
                y = rk4_step(&y, h, rhs);
            }
            if !all_finite(y.as_slice()) {
                return Err(Error::BlowUp {
                    time: horizon * (j as f64 + 0.5 * (half as f64 + 1.0)) / cells as f64,
                });
            }
            let (q, p) = split(&y);
            let u = track(&q, &p);
            if half == 0 {
                let norm = norm2(&u);
                if norm == 0.0 {
                    return Err(Error::ZeroVector);
                }
                samples.extend(u.iter().map(|x| x / norm));
            } else {
                hamiltonian_states.push(q);
                costates.push(p);
            }
        }
    }

    let control = ControlSignal::from_flat(horizon, frame.k(), samples)?;
    let trajectory = integrate_trajectory(frame, &control, q0, domain, substeps)?;
    if trajectory.left_domain() {
        return Err(Error::OutsideDomain);
    }
    Ok(Extremal {
        trajectory,
        control,
        hamiltonian_states,
        costates,
        level_drift,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use core::f64::consts::FRAC_PI_2;

    fn line(frame: &Frame, u: &[f64], cells: usize) -> Trajectory {
        let c = ControlSignal::constant(1.0, cells, u).unwrap();
        integrate_trajectory(frame, &c, &alloc::vec![0.0; frame.n()], None, 1).unwrap()
    }

    #[test]
    fn complement_examples() {
        let c = orthogonal_control_complement(&[1.0, 0.0]).unwrap();
        assert_eq!(c.len(), 1);
        assert!((c[0][0]).abs() < 1e-15 && (c[0][1].abs() - 1.0).abs() < 1e-15);
        let c = orthogonal_control_complement(&[0.0, 1.0]).unwrap();
        assert!((c[0][0].abs() - 1.0).abs() < 1e-15 && c[0][1].abs() < 1e-15);
        let c = orthogonal_control_complement(&[2.0, 0.0, 0.0]).unwrap();
        assert_eq!(c.len(), 2);
        assert!(c.iter().all(|v| v[0].abs() < 1e-15));
        assert_eq!(
            orthogonal_control_complement(&[0.0, 0.0]),
            Err(Error::ZeroVector)
        );
    }

    #[test]
    fn complement_is_orthonormal() {
        let u = [0.3, -1.2, 0.7, 2.0];
        let c = orthogonal_control_complement(&u).unwrap();
        for (i, a) in c.iter().enumerate() {
            assert!(crate::math::dot(a, &u).abs() < 1e-14);
            for (j, b) in c.iter().enumerate() {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((crate::math::dot(a, b) - expect).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn heisenberg_line_span_is_yz_plane() {
        let h = Frame::heisenberg();
        let tr = line(&h, &[1.0, 0.0], 100);
        let tf = tangent_flow(&h, &tr.control, &tr, 0.0, 1).unwrap();
        let s = Settings::default();
        let w = build_f_perp(&h, &tr, &tf, 1.0, &s).unwrap();
        assert_eq!(w.rank(), 2);
        assert!(w.basis.row(0).amax() < 1e-12);
        let x = DVector::from_column_slice(&[1.0, 0.0, 0.0]);
        assert!((angle_to_subspace(&x, &w).unwrap() - FRAC_PI_2).abs() < 1e-12);

        let w0 = build_f_perp(&h, &tr, &tf, 0.0, &s).unwrap();
        assert_eq!(w0.rank(), 1);
        let y = DVector::from_column_slice(&[0.0, 1.0, 0.0]);
        assert!(angle_to_subspace(&y, &w0).unwrap() < 1e-12);
    }

    #[test]
    fn euclidean_span() {
        let e = Frame::euclidean(2);
        let tr = line(&e, &[1.0, 0.0], 10);
        let tf = tangent_flow(&e, &tr.control, &tr, 0.0, 1).unwrap();
        let w = build_f_perp(&e, &tr, &tf, 0.6, &Settings::default()).unwrap();
        assert_eq!(w.rank(), 1);
        assert!((w.basis[(1, 0)].abs() - 1.0).abs() < 1e-14);
        assert!(build_f_perp(&e, &tr, &tf, 0.65, &Settings::default()).is_err());
    }

    #[test]
    fn angle_edge_cases() {
        let w = OrthoDistribution {
            t: 0.0,
            basis: DMatrix::from_row_slice(3, 1, &[0.0, 1.0, 0.0]),
            singular_values: alloc::vec![1.0],
            tau_grid: alloc::vec![0.0],
        };
        let inside = DVector::from_column_slice(&[0.0, 2.0, 0.0]);
        let perp = DVector::from_column_slice(&[1.0, 0.0, 0.0]);
        assert_eq!(angle_to_subspace(&inside, &w).unwrap(), 0.0);
        assert!((angle_to_subspace(&perp, &w).unwrap() - FRAC_PI_2).abs() < 1e-15);
        assert_eq!(
            angle_to_subspace(&DVector::zeros(3), &w),
            Err(Error::ZeroVector)
        );
    }

    #[test]
    fn nsre_lines() {
        let s = Settings::default();
        for frame in [Frame::heisenberg(), Frame::euclidean(2)] {
            let tr = line(&frame, &[1.0, 0.0], 200);
            let r = nsre_check(&frame, &tr, &s).unwrap();
            assert!(r.regularity_ok && r.b2_ok);
            assert!((r.c - 1.0).abs() < 1e-12);
            assert!(r.angles.iter().all(|a| (a - FRAC_PI_2).abs() < 1e-9));
            assert_eq!(r.verdict(), Verdict::Certified);
        }
    }

    #[test]
    fn jump_control_fails_regularity() {
        let h = Frame::heisenberg();
        let u = ControlSignal::from_fn(1.0, 200, 2, |t| {
            if t < 0.5 {
                alloc::vec![1.0, 0.0]
            } else {
                alloc::vec![0.0, 1.0]
            }
        })
        .unwrap();
        let tr = integrate_trajectory(&h, &u, &[0.0; 3], None, 1).unwrap();
        let r = nsre_check(&h, &tr, &Settings::default()).unwrap();
        assert!(!r.regularity_ok);
        assert_eq!(r.c, 0.0);
        assert_eq!(r.verdict(), Verdict::Failed);
    }

    #[test]
    fn forced_inconclusive() {
        let h = Frame::heisenberg();
        let tr = line(&h, &[1.0, 0.0], 50);
        let s = Settings {
            theta_min: 2.0,
            ..Settings::default()
        };
        let r = nsre_check(&h, &tr, &s).unwrap();
        assert_eq!(r.verdict(), Verdict::Inconclusive);
        assert_eq!(r.c, 0.0);
    }

    #[test]
    fn non_normalized_control_is_rejected() {
        let h = Frame::heisenberg();
        let tr = line(&h, &[2.0, 0.0], 10);
        assert!(matches!(
            nsre_check(&h, &tr, &Settings::default()),
            Err(Error::NotNormalized { .. })
        ));
    }

    #[test]
    fn hamiltonian_straight_lines() {
        let e = Frame::euclidean(2);
        let ex = hamiltonian_extremal(&e, &[0.0, 0.0], &[1.0, 0.0], 1.0, 50, 1, None).unwrap();
        assert!(ex.control.cells().all(|c| c == [1.0, 0.0]));
        assert!((ex.trajectory.endpoint()[0] - 1.0).abs() < 1e-12);

        let h = Frame::heisenberg();
        let ex = hamiltonian_extremal(&h, &[0.0; 3], &[1.0, 0.0, 0.0], 1.0, 50, 1, None).unwrap();
        assert!(ex.control.cells().all(|c| c == [1.0, 0.0]));
        for (q, t) in ex.trajectory.states.iter().zip(&ex.trajectory.grid) {
            assert!((q - DVector::from_column_slice(&[*t, 0.0, 0.0])).amax() < 1e-12);
        }
    }

    #[test]
    fn hamiltonian_arc_conserves_level() {
        let h = Frame::heisenberg();
        let lambda = 2.0;
        let ex =
            hamiltonian_extremal(&h, &[0.0; 3], &[1.0, 0.0, lambda], 1.0, 1000, 1, None).unwrap();
        assert!(ex.level_drift < 1e-6);
        assert!(ex.control.is_normalized());
        // closed-form endpoint of the Hamiltonian flow
        let x = crate::math::sin(lambda) / lambda;
        let y = (1.0 - crate::math::cos(lambda)) / lambda;
        let z = (1.0 - crate::math::sin(lambda) / lambda) / (2.0 * lambda);
        let end = ex.hamiltonian_states.last().unwrap();
        assert!((end - DVector::from_column_slice(&[x, y, z])).norm() < 1e-9);
        // piecewise-constant midpoint sampling is second order
        assert!((ex.trajectory.endpoint() - end).norm() < 1e-5);
    }

    #[test]
    fn hamiltonian_rejects_off_level_covector() {
        let h = Frame::heisenberg();
        assert!(matches!(
            hamiltonian_extremal(&h, &[0.0; 3], &[2.0, 0.0, 0.0], 1.0, 10, 1, None),
            Err(Error::NonUnitLevel { .. })
        ));
    }
}
