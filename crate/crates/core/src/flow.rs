//! Fixed-step RK4 integration of `dq/dt = f_{u(t)}(q)` and of its variational
//! equation.
//!
//! Steps are aligned with control cells (`substeps` steps per cell) so the
//! right-hand side is smooth inside every step. The tangent flow is
//! integrated jointly with the state, which makes it the exact derivative of
//! the discrete RK4 map.

use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};

use crate::control::ControlSignal;
use crate::error::{Error, Result};
use crate::frame::{Domain, Frame};
use crate::math::{all_finite, condition_number};

/// Tangent maps with a larger condition number are treated as singular.
pub const MAX_CONDITION: f64 = 1e12;

/// One classical RK4 step for an autonomous right-hand side.
pub(crate) fn rk4_step<F>(y: &DMatrix<f64>, h: f64, f: F) -> DMatrix<f64>
where
    F: Fn(&DMatrix<f64>) -> DMatrix<f64>,
{
    let k1 = f(y);
    let k2 = f(&(y + &k1 * (0.5 * h)));
    let k3 = f(&(y + &k2 * (0.5 * h)));
    let k4 = f(&(y + &k3 * h));
    y + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)
}

/// States of a controlled trajectory on the control grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub grid: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    pub control: ControlSignal,
    pub q0: DVector<f64>,
    /// First grid time at which the state was outside the domain, if any.
    pub exit_time: Option<f64>,
}

impl Trajectory {
    pub fn left_domain(&self) -> bool {
        self.exit_time.is_some()
    }

    pub fn endpoint(&self) -> &DVector<f64> {
        self.states.last().expect("non-empty trajectory")
    }

    pub fn dim(&self) -> usize {
        self.q0.len()
    }

    /// Velocity at grid node `j`, using [`ControlSignal::node_value`].
    pub fn velocity(&self, frame: &Frame, j: usize) -> DVector<f64> {
        frame.velocity(&self.control.node_value(j), self.states[j].as_slice())
    }

    /// The first `len` cells, as a trajectory on `[0, len * dt]`.
    pub fn restrict(&self, len: usize) -> Result<Self> {
        let control = self.control.restrict(0, len)?;
        let exit_time = self.exit_time.filter(|t| *t <= control.horizon());
        Ok(Self {
            grid: control.grid(),
            states: self.states[..=len].to_vec(),
            control,
            q0: self.q0.clone(),
            exit_time,
        })
    }
}

fn check_q0(frame: &Frame, u: &ControlSignal, q0: &[f64]) -> Result<()> {
    if q0.len() != frame.n() {
        return Err(Error::DimensionMismatch {
            expected: frame.n(),
            found: q0.len(),
        });
    }
    if u.k() != frame.k() {
        return Err(Error::DimensionMismatch {
            expected: frame.k(),
            found: u.k(),
        });
    }
    if !all_finite(q0) {
        return Err(Error::NonFinite("initial state"));
    }
    Ok(())
}

/// Integrates `dq/dt = sum_i u^i(t) X_i(q)` from `q0` over the control horizon.
///
/// Leaving `domain` does not stop the integration; the first exit time is
/// recorded on the result instead.
pub fn integrate_trajectory(
    frame: &Frame,
    u: &ControlSignal,
    q0: &[f64],
    domain: Option<&Domain>,
    substeps: usize,
) -> Result<Trajectory> {
    check_q0(frame, u, q0)?;
    if let Some(d) = domain {
        if !d.contains(q0) {
            return Err(Error::OutsideDomain);
        }
    }
    let substeps = substeps.max(1);
    let h = u.dt() / substeps as f64;
    let n = frame.n();

    let mut states = Vec::with_capacity(u.n_cells() + 1);
    let mut y = DMatrix::from_column_slice(n, 1, q0);
    states.push(DVector::from_column_slice(q0));
    let mut exit_time = None;

    for j in 0..u.n_cells() {
        let uj = u.cell(j);
        for _ in 0..substeps {
            y = rk4_step(&y, h, |q| {
                let v = frame.velocity(uj, q.as_slice());
                DMatrix::from_column_slice(n, 1, v.as_slice())
            });
        }
        let t = u.node_time(j + 1);
        if !all_finite(y.as_slice()) {
            return Err(Error::BlowUp { time: t });
        }
        if exit_time.is_none() && domain.is_some_and(|d| !d.contains(y.as_slice())) {
            exit_time = Some(t);
        }
        states.push(DVector::from_column_slice(y.as_slice()));
    }

    Ok(Trajectory {
        grid: u.grid(),
        states,
        control: u.clone(),
        q0: DVector::from_column_slice(q0),
        exit_time,
    })
}

/// Tangent maps `M(t) = T Phi_{t, tau0}` along a base trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentFlow {
    pub grid: Vec<f64>,
    pub matrices: Vec<DMatrix<f64>>,
    inverses: Vec<DMatrix<f64>>,
    pub base_tau: f64,
    pub base_index: usize,
}

/// Joint state/variational right-hand side: column 0 is the state, the rest
/// the `n x n` tangent matrix.
fn variational_rhs(frame: &Frame, u: &[f64], y: &DMatrix<f64>) -> DMatrix<f64> {
    let n = frame.n();
    let q = y.column(0);
    let mut out = DMatrix::zeros(n, n + 1);
    out.set_column(0, &frame.velocity(u, q.as_slice()));
    let jac = frame.velocity_jacobian(u, q.as_slice());
    out.columns_mut(1, n).copy_from(&(jac * y.columns(1, n)));
    out
}

/// Integrates the matrix variational equation `dY/dt = d_q f_{u(t)} Y` along
/// `base` with `Y(tau0) = I`, forward and backward from `tau0`.
pub fn tangent_flow(
    frame: &Frame,
    u: &ControlSignal,
    base: &Trajectory,
    tau0: f64,
    substeps: usize,
) -> Result<TangentFlow> {
    if !u.same_grid(&base.control) {
        return Err(Error::GridMismatch);
    }
    let j0 = u.node_index(tau0).ok_or(Error::NotOnGrid(tau0))?;
    let n = frame.n();
    let substeps = substeps.max(1);
    let h = u.dt() / substeps as f64;
    let cells = u.n_cells();

    let start = {
        let mut y = DMatrix::zeros(n, n + 1);
        y.set_column(0, &base.states[j0]);
        y.columns_mut(1, n).fill_with_identity();
        y
    };

    let mut matrices = alloc::vec![DMatrix::zeros(n, n); cells + 1];
    matrices[j0] = DMatrix::identity(n, n);

    let mut y = start.clone();
    for j in j0..cells {
        let uj = u.cell(j);
        for _ in 0..substeps {
            y = rk4_step(&y, h, |s| variational_rhs(frame, uj, s));
        }
        matrices[j + 1] = y.columns(1, n).into_owned();
    }
    let mut y = start;
    for j in (0..j0).rev() {
        let uj = u.cell(j);
        for _ in 0..substeps {
            y = rk4_step(&y, -h, |s| variational_rhs(frame, uj, s));
        }
        matrices[j] = y.columns(1, n).into_owned();
    }

    let grid = u.grid();
    let mut inverses = Vec::with_capacity(cells + 1);
    for (m, t) in matrices.iter().zip(&grid) {
        if !all_finite(m.as_slice()) {
            return Err(Error::BlowUp { time: *t });
        }
        let condition = condition_number(m);
        if condition > MAX_CONDITION {
            return Err(Error::SingularTangentMap {
                time: *t,
                condition,
            });
        }
        let inv = m
            .clone()
            .lu()
            .try_inverse()
            .ok_or(Error::SingularTangentMap {
                time: *t,
                condition,
            })?;
        inverses.push(inv);
    }

    Ok(TangentFlow {
        grid,
        matrices,
        inverses,
        base_tau: tau0,
        base_index: j0,
    })
}

impl TangentFlow {
    pub fn len(&self) -> usize {
        self.matrices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.matrices.is_empty()
    }

    fn index_of(&self, t: f64) -> Result<usize> {
        let last = self.grid.len() - 1;
        let dt = self.grid[last] / last as f64;
        let j = libm::round(t / dt);
        if !(0.0..=last as f64).contains(&j) {
            return Err(Error::NotOnGrid(t));
        }
        let j = j as usize;
        if (self.grid[j] - t).abs() > 1e-9 * dt.max(1.0) {
            return Err(Error::NotOnGrid(t));
        }
        Ok(j)
    }

    /// `M(t_to) M(t_from)^{-1}` by node index.
    pub fn two_point(&self, from: usize, to: usize) -> DMatrix<f64> {
        &self.matrices[to] * &self.inverses[from]
    }

    /// `M(t_from)^{-1} v`: pulls `v` back to the anchor time.
    pub fn pull_to_anchor(&self, from: usize, v: &DVector<f64>) -> DVector<f64> {
        &self.inverses[from] * v
    }

    /// `T Phi_{t, tau}(v) = M(t) M(tau)^{-1} v` for grid times `tau`, `t`.
    pub fn push_forward(&self, tau: f64, t: f64, v: &[f64]) -> Result<DVector<f64>> {
        let from = self.index_of(tau)?;
        let to = self.index_of(t)?;
        let n = self.matrices[0].nrows();
        if v.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: v.len(),
            });
        }
        Ok(&self.matrices[to] * (&self.inverses[from] * DVector::from_column_slice(v)))
    }
}
