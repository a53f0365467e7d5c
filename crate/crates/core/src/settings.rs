//! Tolerances and knobs shared by the analysis routines.

/// Which `tau` values feed the orthogonal distribution at time `t`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TauRange {
    /// `tau in [0, t]`.
    #[default]
    UpToT,
    /// `tau in [0, T]`.
    Full,
}

impl TauRange {
    pub fn label(self) -> &'static str {
        match self {
            TauRange::UpToT => "0..t",
            TauRange::Full => "0..T",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    /// RK4 steps per control cell.
    pub substeps: usize,
    /// Relative singular value cutoff for span truncation.
    pub sigma_tol: f64,
    /// Smallest angle (rad) that counts as "velocity not in the span".
    pub theta_min: f64,
    /// Bound on the discrete derivative of the velocity (regularity proxy).
    pub acb_bound: f64,
    pub tau_range: TauRange,
    /// Use every `tau_stride`-th grid node when building spans.
    pub tau_stride: usize,
    /// Relative projection residual accepted as "inside the span".
    pub span_tol: f64,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            substeps: 1,
            sigma_tol: 1e-8,
            theta_min: 1e-3,
            acb_bound: 100.0,
            tau_range: TauRange::UpToT,
            tau_stride: 1,
            span_tol: 1e-6,
        }
    }
}
