//! The natural homotopy `gamma_s` driven by `u + s du`, its variation field
//! `b_s = d gamma_s / ds`, and the quantitative estimates relating them.
//!
//! `b_0` is computed by two unrelated routes: integrating the variational ODE
//! jointly with the state ([`variation_direct`]), and pushing the
//! inhomogeneity forward with the tangent flow ([`variation_integral`]).

use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};

use crate::control::{control_inner, ControlSignal};
use crate::error::{Error, Result};
use crate::extremal::{max_velocity_derivative, PerpDirections};
use crate::flow::{integrate_trajectory, rk4_step, TangentFlow, Trajectory};
use crate::frame::{Domain, Frame};
use crate::math::sqrt;
use crate::settings::Settings;
use crate::subspace::projection_residual;

/// Default number of `s` intervals.
pub const DEFAULT_S_INTERVALS: usize = 16;

/// Absolute slack below which an estimate counts as violated.
pub const BOUND_TOL: f64 = 1e-9;

/// Tolerance used by [`lemma31_check`].
pub const LEMMA31_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct Homotopy {
    /// `n_s + 1` uniform values from 0 to 1.
    pub s_grid: Vec<f64>,
    pub members: Vec<Trajectory>,
    pub in_domain: Vec<bool>,
    pub control: ControlSignal,
    pub delta_u: ControlSignal,
    pub substeps: usize,
}

impl Homotopy {
    pub fn stays_in_domain(&self) -> bool {
        self.in_domain.iter().all(|&b| b)
    }

    pub fn s_index(&self, s: f64) -> Result<usize> {
        self.s_grid
            .iter()
            .position(|x| (x - s).abs() <= 1e-12)
            .ok_or(Error::MissingMember(s))
    }

    pub fn base(&self) -> &Trajectory {
        &self.members[0]
    }

    pub fn q0(&self) -> &DVector<f64> {
        &self.members[0].q0
    }
}

/// Integrates the members `u + s du`, `s = i / n_s`, from a shared `q0`.
pub fn natural_homotopy(
    frame: &Frame,
    u: &ControlSignal,
    du: &ControlSignal,
    q0: &[f64],
    n_s: usize,
    domain: Option<&Domain>,
    substeps: usize,
) -> Result<Homotopy> {
    if !u.same_grid(du) {
        return Err(Error::GridMismatch);
    }
    let n_s = n_s.max(1);
    let s_grid: Vec<f64> = (0..=n_s).map(|i| i as f64 / n_s as f64).collect();
    let mut members = Vec::with_capacity(s_grid.len());
    for &s in &s_grid {
        members.push(integrate_trajectory(
            frame,
            &u.add_scaled(s, du)?,
            q0,
            domain,
            substeps,
        )?);
    }
    let in_domain = members.iter().map(|m| !m.left_domain()).collect();
    Ok(Homotopy {
        s_grid,
        members,
        in_domain,
        control: u.clone(),
        delta_u: du.clone(),
        substeps: substeps.max(1),
    })
}

/// `b_s` on the control grid.
#[derive(Debug, Clone, PartialEq)]
pub struct VariationField {
    pub s: f64,
    pub grid: Vec<f64>,
    pub vectors: Vec<DVector<f64>>,
}

impl VariationField {
    pub fn endpoint(&self) -> &DVector<f64> {
        self.vectors.last().expect("non-empty field")
    }

    pub fn max_norm(&self) -> f64 {
        self.vectors.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// `max_j |self_j - other_j| / max_j |other_j|`, zero when both vanish.
    pub fn relative_error(&self, other: &VariationField) -> Result<f64> {
        if self.vectors.len() != other.vectors.len() {
            return Err(Error::GridMismatch);
        }
        let diff = self
            .vectors
            .iter()
            .zip(&other.vectors)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        let scale = other.max_norm();
        Ok(if scale == 0.0 { diff } else { diff / scale })
    }
}

/// Joint RK4 for `(q, b)` under `u + s du`, starting from `(q0, 0)`.
fn integrate_variation(
    frame: &Frame,
    u: &ControlSignal,
    du: &ControlSignal,
    s: f64,
    q0: &[f64],
    substeps: usize,
) -> Result<VariationField> {
    let us = u.add_scaled(s, du)?;
    let n = frame.n();
    let substeps = substeps.max(1);
    let h = u.dt() / substeps as f64;
    let mut y = DMatrix::zeros(n, 2);
    y.set_column(0, &DVector::from_column_slice(q0));
    let mut vectors = Vec::with_capacity(u.n_cells() + 1);
    vectors.push(DVector::zeros(n));
    for j in 0..u.n_cells() {
        let (uj, duj) = (us.cell(j), du.cell(j));
        for _ in 0..substeps {
            y = rk4_step(&y, h, |y| {
                let q = y.column(0).into_owned();
                let b = y.column(1).into_owned();
                let mut out = DMatrix::zeros(n, 2);
                out.set_column(0, &frame.velocity(uj, q.as_slice()));
                let db = frame.velocity(duj, q.as_slice())
                    + frame.velocity_jacobian(uj, q.as_slice()) * b;
                out.set_column(1, &db);
                out
            });
        }
        if !y.iter().all(|x| x.is_finite()) {
            return Err(Error::BlowUp {
                time: u.node_time(j + 1),
            });
        }
        vectors.push(y.column(1).into_owned());
    }
    Ok(VariationField {
        s,
        grid: u.grid(),
        vectors,
    })
}

/// `b_s` from its linear non-homogeneous ODE, with the member's scheme and
/// step size.
pub fn variation_direct(frame: &Frame, homotopy: &Homotopy, s: f64) -> Result<VariationField> {
    homotopy.s_index(s)?;
    integrate_variation(
        frame,
        &homotopy.control,
        &homotopy.delta_u,
        s,
        homotopy.q0().as_slice(),
        homotopy.substeps,
    )
}

/// `b_0(t) = int_0^t T Phi_{t tau} f_{du(tau)}(gamma(tau)) dtau`, by the
/// trapezoid rule on every control cell.
///
/// The integrand is smooth inside a cell, so each cell uses its own `du`
/// value at both ends.
pub fn variation_integral(
    frame: &Frame,
    du: &ControlSignal,
    traj: &Trajectory,
    tf: &TangentFlow,
) -> Result<VariationField> {
    if !traj.control.same_grid(du) {
        return Err(Error::GridMismatch);
    }
    if tf.len() != traj.states.len() {
        return Err(Error::GridMismatch);
    }
    let n = frame.n();
    let half = 0.5 * du.dt();
    let mut acc = DVector::zeros(n);
    let mut vectors = Vec::with_capacity(traj.states.len());
    vectors.push(DVector::zeros(n));
    for j in 0..du.n_cells() {
        let duj = du.cell(j);
        let left = frame.velocity(duj, traj.states[j].as_slice());
        let right = frame.velocity(duj, traj.states[j + 1].as_slice());
        acc += (tf.pull_to_anchor(j, &left) + tf.pull_to_anchor(j + 1, &right)) * half;
        vectors.push(&tf.matrices[j + 1] * &acc);
    }
    Ok(VariationField {
        s: 0.0,
        grid: traj.grid.clone(),
        vectors,
    })
}

/// Splitting of `b_0(t)` into a velocity part and a remainder.
#[derive(Debug, Clone, PartialEq)]
pub struct Decomposition {
    pub t: f64,
    /// `int_0^t phi`.
    pub coefficient: f64,
    pub b0: DVector<f64>,
    pub velocity: DVector<f64>,
    /// `b0 - coefficient * velocity`.
    pub residual: DVector<f64>,
    /// Distance of the residual from the span, over `|b0|`.
    pub relative_residual: f64,
    pub residual_in_span: bool,
    pub span_rank: usize,
    /// False when the regularity proxy fails; the splitting is then not
    /// backed by theory, but is still reported.
    pub hypothesis_verified: bool,
}

/// Pieces shared by every node of a decomposition.
struct DecompositionInputs {
    b0: VariationField,
    cumulative: Vec<f64>,
    perp: PerpDirections,
    verified: bool,
}

impl DecompositionInputs {
    fn new(
        frame: &Frame,
        traj: &Trajectory,
        tf: &TangentFlow,
        du: &ControlSignal,
        settings: &Settings,
    ) -> Result<Self> {
        traj.control.check_normalized()?;
        let b0 = integrate_variation(
            frame,
            &traj.control,
            du,
            0.0,
            traj.q0.as_slice(),
            settings.substeps,
        )?;
        Ok(Self {
            b0,
            cumulative: control_inner(&traj.control, du)?.cumulative,
            perp: PerpDirections::new(frame, traj, tf)?,
            verified: max_velocity_derivative(frame, traj) <= settings.acb_bound,
        })
    }

    fn at(
        &self,
        frame: &Frame,
        traj: &Trajectory,
        tf: &TangentFlow,
        j: usize,
        settings: &Settings,
    ) -> Result<Decomposition> {
        let b0 = &self.b0.vectors[j];
        let coefficient = self.cumulative[j];
        let velocity = traj.velocity(frame, j);
        let residual = b0 - &velocity * coefficient;
        let span = self.perp.span_at(tf, j, settings)?;
        let outside = projection_residual(&span.basis, &residual).norm();
        let b0_norm = b0.norm();
        let (relative_residual, residual_in_span) = if b0_norm == 0.0 {
            (0.0, true)
        } else {
            let r = outside / b0_norm;
            (r, r < settings.span_tol)
        };
        Ok(Decomposition {
            t: traj.grid[j],
            coefficient,
            b0: b0.clone(),
            velocity,
            residual,
            relative_residual,
            residual_in_span,
            span_rank: span.rank(),
            hypothesis_verified: self.verified,
        })
    }
}

/// Decomposes `b_0(t)` at one grid time. `b_0` comes from the variational
/// ODE; the span from the tangent flow `tf` along `traj`.
pub fn decompose_b0(
    frame: &Frame,
    traj: &Trajectory,
    tf: &TangentFlow,
    du: &ControlSignal,
    t: f64,
    settings: &Settings,
) -> Result<Decomposition> {
    let j = traj.control.node_index(t).ok_or(Error::NotOnGrid(t))?;
    DecompositionInputs::new(frame, traj, tf, du, settings)?.at(frame, traj, tf, j, settings)
}

/// [`decompose_b0`] at every grid node, sharing the expensive parts.
pub fn decompose_b0_grid(
    frame: &Frame,
    traj: &Trajectory,
    tf: &TangentFlow,
    du: &ControlSignal,
    settings: &Settings,
) -> Result<Vec<Decomposition>> {
    let inputs = DecompositionInputs::new(frame, traj, tf, du, settings)?;
    (0..traj.states.len())
        .map(|j| inputs.at(frame, traj, tf, j, settings))
        .collect()
}

/// Energy comparison between `u` and `u + du`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lemma31 {
    /// `-int phi`.
    pub lhs: f64,
    /// `|du|^2 / 2`.
    pub rhs: f64,
    pub slack: f64,
    pub holds: bool,
    /// `|du| <= 2 sqrt(T)`.
    pub bound2: bool,
    /// Whether `E(u + du) <= E(u)`; otherwise the estimate is not claimed.
    pub applicable: bool,
}

/// Checks `-int phi >= |du|^2 / 2` and `|du| <= 2 sqrt(T)`.
pub fn lemma31_check(u: &ControlSignal, du: &ControlSignal) -> Result<Lemma31> {
    let inner = control_inner(u, du)?;
    let lhs = -inner.total();
    let du_sq = du.l2_norm_sq();
    let rhs = 0.5 * du_sq;
    let u_sq = u.l2_norm_sq();
    let perturbed = u.add_scaled(1.0, du)?.l2_norm_sq();
    let applicable = perturbed <= u_sq * (1.0 + LEMMA31_TOL);
    Ok(Lemma31 {
        lhs,
        rhs,
        slack: lhs - rhs,
        holds: lhs >= rhs - LEMMA31_TOL,
        bound2: sqrt(du_sq) <= 2.0 * sqrt(u.horizon()) + LEMMA31_TOL,
        applicable,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EndpointCurve {
    pub s_grid: Vec<f64>,
    pub points: Vec<DVector<f64>>,
    /// `|gamma_1(T) - gamma_0(T)|_2`.
    pub separation: f64,
}

pub fn endpoint_separation(homotopy: &Homotopy) -> EndpointCurve {
    let points: Vec<DVector<f64>> = homotopy
        .members
        .iter()
        .map(|m| m.endpoint().clone())
        .collect();
    let separation = (points[points.len() - 1].clone() - &points[0]).norm();
    EndpointCurve {
        s_grid: homotopy.s_grid.clone(),
        points,
        separation,
    }
}

/// Values of the comparison functions at the horizon, plus the angle
/// constant, as supplied by the certifier.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundParameters {
    pub c: f64,
    pub zeta: f64,
    pub psi: f64,
    pub xi: f64,
}

/// Smallest slack of each estimate over the `(s, t)` grid. Negative slack
/// below `-BOUND_TOL` is a violation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LemmaSlacks {
    /// `sqrt(T) zeta |du| - |gamma_s - gamma_0|`.
    pub delta_q: f64,
    /// `sqrt(T) psi |du| - |b_s|`.
    pub b_s: f64,
    /// `T xi |du|^2 - |b_s - b_0|`.
    pub delta_b: f64,
    /// `|b_0(t)| - c |int_0^t phi|`.
    pub b0_estimate: f64,
    pub lemma31: Lemma31,
    pub in_domain: bool,
}

impl LemmaSlacks {
    /// The estimates that need the homotopy inside the domain are only
    /// judged when it stays there.
    pub fn holds(&self) -> bool {
        let appendix = !self.in_domain
            || (self.delta_q >= -BOUND_TOL && self.b_s >= -BOUND_TOL && self.delta_b >= -BOUND_TOL);
        appendix && self.b0_estimate >= -BOUND_TOL && self.lemma31.holds && self.lemma31.bound2
    }

    pub fn min_slack(&self) -> f64 {
        self.delta_q
            .min(self.b_s)
            .min(self.delta_b)
            .min(self.b0_estimate)
            .min(self.lemma31.slack)
    }
}

/// Variation fields at every `s` node, by the direct route.
pub fn variation_fields(frame: &Frame, homotopy: &Homotopy) -> Result<Vec<VariationField>> {
    homotopy
        .s_grid
        .iter()
        .map(|&s| variation_direct(frame, homotopy, s))
        .collect()
}

/// Evaluates every estimate on the homotopy grid. `fields[i]` must be the
/// variation field at `s_grid[i]`.
pub fn lemma_slacks(
    homotopy: &Homotopy,
    fields: &[VariationField],
    params: &BoundParameters,
) -> Result<LemmaSlacks> {
    if fields.len() != homotopy.s_grid.len() {
        return Err(Error::GridMismatch);
    }
    let u = &homotopy.control;
    let du = &homotopy.delta_u;
    let horizon = u.horizon();
    let du_norm = du.l2_norm();
    let base = homotopy.base();
    let b0 = &fields[0];

    let dq_bound = sqrt(horizon) * params.zeta * du_norm;
    let bs_bound = sqrt(horizon) * params.psi * du_norm;
    let db_bound = horizon * params.xi * du_norm * du_norm;
    let mut delta_q = f64::INFINITY;
    let mut b_s = f64::INFINITY;
    let mut delta_b = f64::INFINITY;
    for (member, field) in homotopy.members.iter().zip(fields) {
        for j in 0..base.states.len() {
            delta_q = delta_q.min(dq_bound - (&member.states[j] - &base.states[j]).norm());
            b_s = b_s.min(bs_bound - field.vectors[j].norm());
            delta_b = delta_b.min(db_bound - (&field.vectors[j] - &b0.vectors[j]).norm());
        }
    }

    let inner = control_inner(u, du)?;
    let b0_estimate = b0
        .vectors
        .iter()
        .zip(&inner.cumulative)
        .map(|(b, phi)| b.norm() - params.c * phi.abs())
        .fold(f64::INFINITY, f64::min);

    Ok(LemmaSlacks {
        delta_q,
        b_s,
        delta_b,
        b0_estimate,
        lemma31: lemma31_check(u, du)?,
        in_domain: homotopy.stays_in_domain(),
    })
}
