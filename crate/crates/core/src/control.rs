//! Piecewise-constant controls on a uniform grid.
//!
//! With one constant value per cell every L2 quantity is a finite sum, so
//! energies and inner products below are exact up to rounding.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math::{dot, norm2, sqrt};

/// Tolerance for the unit-speed normalization `|u_j|_2 = 1`.
pub const NORMALIZED_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct ControlSignal {
    horizon: f64,
    k: usize,
    cells: usize,
    samples: Vec<f64>,
}

impl ControlSignal {
    /// `samples` holds `cells * k` values, cell-major.
    pub fn from_flat(horizon: f64, k: usize, samples: Vec<f64>) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::InvalidControl(format!(
                "horizon must be positive, got {horizon}"
            )));
        }
        if k == 0 || samples.is_empty() || !samples.len().is_multiple_of(k) {
            return Err(Error::InvalidControl(format!(
                "{} samples do not form whole cells of width {k}",
                samples.len()
            )));
        }
        if samples.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("control sample"));
        }
        let cells = samples.len() / k;
        Ok(Self {
            horizon,
            k,
            cells,
            samples,
        })
    }

    pub fn from_rows(horizon: f64, rows: &[Vec<f64>]) -> Result<Self> {
        let k = rows.first().map_or(0, Vec::len);
        if let Some(r) = rows.iter().find(|r| r.len() != k) {
            return Err(Error::DimensionMismatch {
                expected: k,
                found: r.len(),
            });
        }
        Self::from_flat(horizon, k, rows.concat())
    }

    pub fn constant(horizon: f64, cells: usize, value: &[f64]) -> Result<Self> {
        let mut samples = Vec::with_capacity(cells * value.len());
        for _ in 0..cells {
            samples.extend_from_slice(value);
        }
        Self::from_flat(horizon, value.len(), samples)
    }

    pub fn zeros(horizon: f64, cells: usize, k: usize) -> Result<Self> {
        Self::from_flat(horizon, k, alloc::vec![0.0; cells * k])
    }

    /// Samples a function of time at cell midpoints.
    pub fn from_fn<F>(horizon: f64, cells: usize, k: usize, mut f: F) -> Result<Self>
    where
        F: FnMut(f64) -> Vec<f64>,
    {
        let dt = horizon / cells as f64;
        let mut samples = Vec::with_capacity(cells * k);
        for j in 0..cells {
            let v = f((j as f64 + 0.5) * dt);
            if v.len() != k {
                return Err(Error::DimensionMismatch {
                    expected: k,
                    found: v.len(),
                });
            }
            samples.extend(v);
        }
        Self::from_flat(horizon, k, samples)
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n_cells(&self) -> usize {
        self.cells
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.cells as f64
    }

    /// Time of grid node `j`, `0 <= j <= n_cells`.
    pub fn node_time(&self, j: usize) -> f64 {
        if j == self.cells {
            self.horizon
        } else {
            self.horizon * j as f64 / self.cells as f64
        }
    }

    pub fn grid(&self) -> Vec<f64> {
        (0..=self.cells).map(|j| self.node_time(j)).collect()
    }

    /// Index of the node at time `t`, if `t` lies on the grid.
    pub fn node_index(&self, t: f64) -> Option<usize> {
        let x = t / self.dt();
        let j = libm::round(x);
        if j < 0.0 || j > self.cells as f64 {
            return None;
        }
        let j = j as usize;
        let tol = 1e-9 * self.dt().max(1.0);
        ((self.node_time(j) - t).abs() <= tol).then_some(j)
    }

    pub fn cell(&self, j: usize) -> &[f64] {
        &self.samples[j * self.k..(j + 1) * self.k]
    }

    pub fn cells(&self) -> impl Iterator<Item = &[f64]> {
        self.samples.chunks_exact(self.k)
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.samples
    }

    /// Second-order estimate of the control at a grid node: the average of
    /// the two adjacent cells in the interior, linear extrapolation from the
    /// two nearest cells at either end.
    pub fn node_value(&self, j: usize) -> Vec<f64> {
        let extrapolate = |near: &[f64], far: &[f64]| -> Vec<f64> {
            near.iter()
                .zip(far)
                .map(|(a, b)| 1.5 * a - 0.5 * b)
                .collect()
        };
        if self.cells == 1 {
            self.cell(0).to_vec()
        } else if j == 0 {
            extrapolate(self.cell(0), self.cell(1))
        } else if j >= self.cells {
            extrapolate(self.cell(self.cells - 1), self.cell(self.cells - 2))
        } else {
            self.cell(j - 1)
                .iter()
                .zip(self.cell(j))
                .map(|(a, b)| 0.5 * (a + b))
                .collect()
        }
    }

    pub fn same_grid(&self, other: &Self) -> bool {
        self.k == other.k && self.cells == other.cells && self.horizon == other.horizon
    }

    /// `|u|^2_{L2[0,T]} = sum_j |u_j|^2 dt`.
    pub fn l2_norm_sq(&self) -> f64 {
        self.samples.iter().map(|x| x * x).sum::<f64>() * self.dt()
    }

    pub fn l2_norm(&self) -> f64 {
        sqrt(self.l2_norm_sq())
    }

    /// Largest `| |u_j|_2 - 1 |` over cells.
    pub fn normalization_defect(&self) -> f64 {
        self.cells()
            .map(|c| (norm2(c) - 1.0).abs())
            .fold(0.0, f64::max)
    }

    pub fn is_normalized(&self) -> bool {
        self.normalization_defect() <= NORMALIZED_TOL
    }

    pub fn check_normalized(&self) -> Result<()> {
        for (j, c) in self.cells().enumerate() {
            let norm = norm2(c);
            if (norm - 1.0).abs() > NORMALIZED_TOL {
                return Err(Error::NotNormalized { cell: j, norm });
            }
        }
        Ok(())
    }

    /// `self + s * other` on a shared grid.
    pub fn add_scaled(&self, s: f64, other: &Self) -> Result<Self> {
        if !self.same_grid(other) {
            return Err(Error::GridMismatch);
        }
        let samples = self
            .samples
            .iter()
            .zip(&other.samples)
            .map(|(a, b)| a + s * b)
            .collect();
        Ok(Self {
            samples,
            ..self.clone()
        })
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            samples: self.samples.iter().map(|x| s * x).collect(),
            ..self.clone()
        }
    }

    /// The control restricted to cells `[start, start + len)`, re-anchored at
    /// time zero.
    pub fn restrict(&self, start: usize, len: usize) -> Result<Self> {
        if len == 0 || start + len > self.cells {
            return Err(Error::InvalidControl(format!(
                "restriction [{start}, {}) outside {} cells",
                start + len,
                self.cells
            )));
        }
        Self::from_flat(
            self.dt() * len as f64,
            self.k,
            self.samples[start * self.k..(start + len) * self.k].to_vec(),
        )
    }
}

/// `E = 1/2 |u|^2_{L2}`.
pub fn energy(u: &ControlSignal) -> f64 {
    0.5 * u.l2_norm_sq()
}

/// Cellwise inner product `phi_j = <u_j, du_j>` and its running integral.
#[derive(Debug, Clone, PartialEq)]
pub struct InnerProduct {
    pub phi: Vec<f64>,
    /// `int_0^{t_j} phi`, one value per grid node.
    pub cumulative: Vec<f64>,
}

impl InnerProduct {
    pub fn total(&self) -> f64 {
        *self.cumulative.last().expect("at least one node")
    }
}

pub fn control_inner(u: &ControlSignal, du: &ControlSignal) -> Result<InnerProduct> {
    if !u.same_grid(du) {
        return Err(Error::GridMismatch);
    }
    let dt = u.dt();
    let phi: Vec<f64> = u.cells().zip(du.cells()).map(|(a, b)| dot(a, b)).collect();
    let mut cumulative = Vec::with_capacity(phi.len() + 1);
    let mut acc = 0.0;
    cumulative.push(0.0);
    for p in &phi {
        acc += p * dt;
        cumulative.push(acc);
    }
    Ok(InnerProduct { phi, cumulative })
}
