//! Numerical laboratory for local optimality of normal sub-Riemannian extremals.
//!
//! The crate integrates trajectories of a control-affine system
//! `dq/dt = sum_i u^i(t) X_i(q)` whose frame `X_1..X_k` is declared
//! orthonormal, builds the natural homotopy `u + s du` between two controls,
//! computes its variation fields by two independent routes, tests the
//! flow-invariant orthogonal distribution characterization of normal
//! extremals, and produces an explicit local-optimality radius together with
//! every constant it depends on.
//!
//! The crate is `no_std` and only needs `alloc`; file formats, the CLI and
//! thread pools live in the `srx` crate.

#![no_std]

extern crate alloc;

pub mod certifier;
pub mod control;
pub mod error;
pub mod extremal;
pub mod flow;
pub mod frame;
pub mod homotopy;
pub mod math;
pub mod poly;
pub mod sampling;
pub mod settings;
pub mod subspace;

pub use certifier::{
    compute_epsilon, compute_eta, estimate_constants, psi, verify_certificate, xi, zeta,
    Certificate, Conditions, FrameConstants, TrialOutcome, VerificationReport, Verifier,
};
pub use control::{control_inner, energy, ControlSignal, InnerProduct};
pub use error::{Error, Result};
pub use extremal::{
    angle_to_subspace, build_f_perp, hamiltonian_extremal, max_velocity_derivative, nsre_check,
    orthogonal_control_complement, Extremal, NsreReport, OrthoDistribution, SpanStatus, Verdict,
};
pub use flow::{integrate_trajectory, tangent_flow, TangentFlow, Trajectory};
pub use frame::{Domain, Frame};
pub use homotopy::{
    decompose_b0, decompose_b0_grid, endpoint_separation, lemma31_check, lemma_slacks,
    natural_homotopy, variation_direct, variation_fields, variation_integral, BoundParameters,
    Decomposition, EndpointCurve, Homotopy, Lemma31, LemmaSlacks, VariationField,
};
pub use poly::{Monomial, PolynomialField};
pub use sampling::{admissible_perturbation, smooth_perturbation, trial_rng, Sample};
pub use settings::{Settings, TauRange};
