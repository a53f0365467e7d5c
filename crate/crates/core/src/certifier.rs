//! Local optimality radius for a normal extremal, and its empirical check.
//!
//! Frame constants are sampled on a grid over the box and inflated by a
//! safety margin. From them come the comparison functions
//!
//! ```text
//! zeta(T) = e^{sqrt(k) C2 T} sqrt(k) C0
//! psi(T)  = e^{3 C1 sqrt(k) n T} C0 sqrt(k)
//! xi(T)   = e^{sqrt(k) n C1 T} [sqrt(k) n C3 T zeta psi + sqrt(k) (n C1 psi + C2 zeta)]
//! ```
//!
//! and the radius `eps` is the largest time with `4 eps zeta(eps) < eta` and
//! `eps xi(eps) < c / 2`.

use alloc::format;
use alloc::vec::Vec;
use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::flow::Trajectory;
use crate::frame::{Domain, Frame};
use crate::homotopy::{
    endpoint_separation, lemma_slacks, natural_homotopy, variation_fields, BoundParameters,
    LemmaSlacks, BOUND_TOL,
};
use crate::math::{exp, spectral_norm, sqrt};
use crate::sampling::{admissible_perturbation, trial_rng};

pub const DEFAULT_GRID_RESOLUTION: usize = 21;
pub const DEFAULT_MARGIN: f64 = 1.1;

/// Both radius conditions are enforced with this factor on the right side.
pub const STRICT_FACTOR: f64 = 0.999;

/// Relative bracket width at which the radius bisection stops.
pub const EPSILON_REL_TOL: f64 = 1e-6;

/// Samples used to check that `T xi(T)` is nondecreasing on `[0, eps]`.
pub const MONOTONICITY_SAMPLES: usize = 100;

/// Bounds on the frame over the domain, margin included.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameConstants {
    /// `|X_i|`.
    pub c0: f64,
    /// `|d X_i / d q^a|`.
    pub c1: f64,
    /// Lipschitz constant of `X_i`.
    pub c2: f64,
    /// Lipschitz constant of `d X_i / d q^a`.
    pub c3: f64,
    pub grid_resolution: usize,
    pub margin: f64,
}

impl FrameConstants {
    /// Values before the margin was applied.
    pub fn raw(&self) -> [f64; 4] {
        [self.c0, self.c1, self.c2, self.c3].map(|c| c / self.margin)
    }
}

/// Samples the analytic derivatives of the frame on a tensor grid over `domain`.
///
/// `C2` is the largest spectral norm of a field Jacobian and `C3` that of the
/// Jacobian of a single column; on a convex box both are Lipschitz bounds by
/// the mean value theorem, up to the sampling error the margin absorbs.
pub fn estimate_constants(
    frame: &Frame,
    domain: &Domain,
    grid_resolution: usize,
    margin: f64,
) -> Result<FrameConstants> {
    if grid_resolution == 0 {
        return Err(Error::EmptyGrid);
    }
    if !(margin.is_finite() && margin >= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "margin must be >= 1, got {margin}"
        )));
    }
    if domain.dim() != frame.n() {
        return Err(Error::DimensionMismatch {
            expected: frame.n(),
            found: domain.dim(),
        });
    }
    let n = frame.n();
    let mut c = [0.0f64; 4];
    for q in domain.grid(grid_resolution) {
        for field in frame.fields() {
            c[0] = c[0].max(field.eval(&q).norm());
            let jac: DMatrix<f64> = field.jacobian(&q);
            for a in 0..n {
                c[1] = c[1].max(jac.column(a).norm());
                c[3] = c[3].max(spectral_norm(&field.column_jacobian(a, &q)));
            }
            c[2] = c[2].max(spectral_norm(&jac));
        }
    }
    if !c.iter().all(|x| x.is_finite()) {
        return Err(Error::NonFinite("frame constants"));
    }
    Ok(FrameConstants {
        c0: margin * c[0],
        c1: margin * c[1],
        c2: margin * c[2],
        c3: margin * c[3],
        grid_resolution,
        margin,
    })
}

fn check_time(t: f64) -> Result<()> {
    if t < 0.0 || !t.is_finite() {
        return Err(Error::NegativeHorizon(t));
    }
    Ok(())
}

pub fn zeta(t: f64, c: &FrameConstants, k: usize) -> Result<f64> {
    check_time(t)?;
    let sk = sqrt(k as f64);
    Ok(exp(sk * c.c2 * t) * sk * c.c0)
}

pub fn psi(t: f64, c: &FrameConstants, k: usize, n: usize) -> Result<f64> {
    check_time(t)?;
    let sk = sqrt(k as f64);
    Ok(exp(3.0 * c.c1 * sk * n as f64 * t) * c.c0 * sk)
}

pub fn xi(t: f64, c: &FrameConstants, k: usize, n: usize) -> Result<f64> {
    check_time(t)?;
    let sk = sqrt(k as f64);
    let nf = n as f64;
    let z = zeta(t, c, k)?;
    let p = psi(t, c, k, n)?;
    Ok(exp(sk * nf * c.c1 * t) * (sk * nf * c.c3 * t * z * p + sk * (nf * c.c1 * p + c.c2 * z)))
}

/// Radius of a tube around the trajectory inside the box, less one step of
/// integration error `dt C0 sqrt(k)`.
pub fn compute_eta(
    traj: &Trajectory,
    domain: &Domain,
    constants: &FrameConstants,
    k: usize,
) -> Result<f64> {
    if traj.left_domain() || traj.states.iter().any(|q| !domain.contains(q.as_slice())) {
        return Err(Error::OutsideDomain);
    }
    let nearest = traj
        .states
        .iter()
        .map(|q| domain.distance_to_boundary(q.as_slice()))
        .fold(f64::INFINITY, f64::min);
    let eta = nearest - traj.control.dt() * constants.c0 * sqrt(k as f64);
    if eta <= 0.0 {
        return Err(Error::NotCertifiable(format!(
            "trajectory comes within one step of the boundary (eta = {eta:e})"
        )));
    }
    Ok(eta)
}

/// Largest `eps` in `(0, t_max]` with `4 eps zeta(eps) <= 0.999 eta` and
/// `eps xi(eps) <= 0.999 c / 2`, by bisection.
pub fn compute_epsilon(
    constants: &FrameConstants,
    c: f64,
    eta: f64,
    k: usize,
    n: usize,
    t_max: f64,
) -> Result<f64> {
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::NotCertifiable(format!(
            "angle constant c = {c} is not positive"
        )));
    }
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(Error::NotCertifiable(format!(
            "tube radius eta = {eta} is not positive"
        )));
    }
    if !(t_max > 0.0 && t_max.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "t_max must be positive, got {t_max}"
        )));
    }
    let feasible = |e: f64| -> Result<bool> {
        Ok(4.0 * e * zeta(e, constants, k)? <= STRICT_FACTOR * eta
            && e * xi(e, constants, k, n)? <= STRICT_FACTOR * 0.5 * c)
    };
    let eps = if feasible(t_max)? {
        t_max
    } else {
        let (mut lo, mut hi) = (0.0, t_max);
        while hi - lo > EPSILON_REL_TOL * hi {
            let mid = 0.5 * (lo + hi);
            if feasible(mid)? {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    };
    if eps <= 0.0 {
        return Err(Error::NotCertifiable("no positive radius found".into()));
    }
    check_monotone(constants, k, n, eps)?;
    Ok(eps)
}

/// The radius conditions use `T xi(T)` at `T = eps` in place of its supremum
/// over `[0, eps]`; this checks that the substitution is valid.
fn check_monotone(constants: &FrameConstants, k: usize, n: usize, eps: f64) -> Result<()> {
    let mut prev = [0.0f64; 2];
    for i in 0..=MONOTONICITY_SAMPLES {
        let t = eps * i as f64 / MONOTONICITY_SAMPLES as f64;
        let cur = [t * xi(t, constants, k, n)?, t * zeta(t, constants, k)?];
        if cur[0] < prev[0] || cur[1] < prev[1] {
            return Err(Error::NotCertifiable(format!(
                "T xi(T) is not monotone near T = {t}"
            )));
        }
        prev = cur;
    }
    Ok(())
}

/// Which radius conditions hold, and by how much.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Conditions {
    /// `4 eps zeta(eps) < eta`: the homotopy cannot leave the domain.
    pub domain: bool,
    /// `eps xi(eps) < c / 2`.
    pub angle: bool,
    pub domain_slack: f64,
    pub angle_slack: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Certificate {
    pub constants: FrameConstants,
    pub c: f64,
    pub eta: f64,
    /// `eta / (2 sqrt(eps) zeta(eps))`.
    pub delta: f64,
    pub epsilon: f64,
    pub zeta_eps: f64,
    pub psi_eps: f64,
    pub xi_eps: f64,
    pub conditions: Conditions,
    pub t_max: f64,
    pub k: usize,
    pub n: usize,
}

impl Certificate {
    pub fn new(
        constants: FrameConstants,
        c: f64,
        eta: f64,
        k: usize,
        n: usize,
        t_max: f64,
    ) -> Result<Self> {
        let epsilon = compute_epsilon(&constants, c, eta, k, n, t_max)?;
        let zeta_eps = zeta(epsilon, &constants, k)?;
        let psi_eps = psi(epsilon, &constants, k, n)?;
        let xi_eps = xi(epsilon, &constants, k, n)?;
        let domain_slack = eta - 4.0 * epsilon * zeta_eps;
        let angle_slack = 0.5 * c - epsilon * xi_eps;
        Ok(Self {
            constants,
            c,
            eta,
            delta: eta / (2.0 * sqrt(epsilon) * zeta_eps),
            epsilon,
            zeta_eps,
            psi_eps,
            xi_eps,
            conditions: Conditions {
                domain: domain_slack > 0.0,
                angle: angle_slack > 0.0,
                domain_slack,
                angle_slack,
            },
            t_max,
            k,
            n,
        })
    }

    /// Certificate for `traj` in `domain`, with `c` from the extremal test.
    /// The radius is searched in `(0, t_max]`, by default the horizon.
    pub fn for_trajectory(
        frame: &Frame,
        traj: &Trajectory,
        domain: &Domain,
        c: f64,
        constants: FrameConstants,
        t_max: Option<f64>,
    ) -> Result<Self> {
        let eta = compute_eta(traj, domain, &constants, frame.k())?;
        let t_max = t_max.unwrap_or(traj.control.horizon());
        Self::new(constants, c, eta, frame.k(), frame.n(), t_max)
    }
}

/// One Monte Carlo trial of the endpoint separation bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialOutcome {
    pub trial: u64,
    pub seed: u64,
    pub norm_du: f64,
    pub separation: f64,
    /// `(c/2 - T' xi(T')) |du|^2`.
    pub bound: f64,
    /// `separation - bound`.
    pub slack: f64,
    pub lemmas: LemmaSlacks,
    pub rejections: usize,
    pub passed: bool,
}

/// Context shared by all trials, so they can run in any order or in parallel.
#[derive(Debug, Clone)]
pub struct Verifier {
    frame: Frame,
    domain: Domain,
    restricted: Trajectory,
    params: BoundParameters,
    coefficient: f64,
    base_seed: u64,
    n_s: usize,
    substeps: usize,
}

impl Verifier {
    /// Restricts `traj` to the longest grid prefix not exceeding
    /// `min(eps, t_prime)`.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        frame: &Frame,
        traj: &Trajectory,
        domain: &Domain,
        cert: &Certificate,
        t_prime: f64,
        base_seed: u64,
        n_s: usize,
        substeps: usize,
    ) -> Result<Self> {
        if cert.epsilon.is_nan() || cert.epsilon <= 0.0 {
            return Err(Error::NotCertifiable(
                "certificate radius is not positive".into(),
            ));
        }
        let target = cert.epsilon.min(t_prime);
        let dt = traj.control.dt();
        let cells = libm::floor(target / dt + 1e-9) as usize;
        let cells = cells.min(traj.control.n_cells());
        if cells == 0 {
            return Err(Error::NotCertifiable(format!(
                "T' = {target} is shorter than one control cell ({dt})"
            )));
        }
        let restricted = traj.restrict(cells)?;
        let horizon = restricted.control.horizon();
        let (k, n) = (frame.k(), frame.n());
        let params = BoundParameters {
            c: cert.c,
            zeta: zeta(horizon, &cert.constants, k)?,
            psi: psi(horizon, &cert.constants, k, n)?,
            xi: xi(horizon, &cert.constants, k, n)?,
        };
        let coefficient = 0.5 * cert.c - horizon * params.xi;
        Ok(Self {
            frame: frame.clone(),
            domain: domain.clone(),
            restricted,
            params,
            coefficient,
            base_seed,
            n_s,
            substeps,
        })
    }

    /// The restricted horizon `T'`.
    pub fn t_prime(&self) -> f64 {
        self.restricted.control.horizon()
    }

    pub fn coefficient(&self) -> f64 {
        self.coefficient
    }

    pub fn params(&self) -> &BoundParameters {
        &self.params
    }

    pub fn trial(&self, index: u64) -> Result<TrialOutcome> {
        let seed = self.base_seed.wrapping_add(index);
        let sample = admissible_perturbation(
            &self.restricted.control,
            &mut trial_rng(self.base_seed, index),
        )?;
        let du = sample.delta_u;
        let homotopy = natural_homotopy(
            &self.frame,
            &self.restricted.control,
            &du,
            self.restricted.q0.as_slice(),
            self.n_s,
            Some(&self.domain),
            self.substeps,
        )?;
        let fields = variation_fields(&self.frame, &homotopy)?;
        let lemmas = lemma_slacks(&homotopy, &fields, &self.params)?;
        let separation = endpoint_separation(&homotopy).separation;
        let norm_du = du.l2_norm();
        let bound = self.coefficient * norm_du * norm_du;
        let slack = separation - bound;
        let passed = lemmas.in_domain && lemmas.holds() && slack >= -BOUND_TOL && separation > 0.0;
        Ok(TrialOutcome {
            trial: index,
            seed,
            norm_du,
            separation,
            bound,
            slack,
            lemmas,
            rejections: sample.rejections,
            passed,
        })
    }

    /// Collects outcomes, which must be ordered by trial index.
    pub fn report(&self, trials: Vec<TrialOutcome>) -> VerificationReport {
        VerificationReport {
            t_prime: self.t_prime(),
            cells: self.restricted.control.n_cells(),
            coefficient: self.coefficient,
            params: self.params,
            trials,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerificationReport {
    pub t_prime: f64,
    pub cells: usize,
    pub coefficient: f64,
    pub params: BoundParameters,
    pub trials: Vec<TrialOutcome>,
}

impl VerificationReport {
    /// Seeds of the failing trials, for reproduction.
    pub fn violations(&self) -> Vec<u64> {
        self.trials
            .iter()
            .filter(|t| !t.passed)
            .map(|t| t.seed)
            .collect()
    }

    pub fn passed(&self) -> bool {
        self.trials.iter().all(|t| t.passed)
    }

    pub fn rejections(&self) -> usize {
        self.trials.iter().map(|t| t.rejections).sum()
    }

    pub fn min_slack(&self) -> f64 {
        self.trials
            .iter()
            .map(|t| t.slack)
            .fold(f64::INFINITY, f64::min)
    }
}

/// Runs `n_trials` trials in order on the current thread.
#[allow(clippy::too_many_arguments)]
pub fn verify_certificate(
    frame: &Frame,
    traj: &Trajectory,
    domain: &Domain,
    cert: &Certificate,
    t_prime: f64,
    n_trials: u64,
    seed: u64,
    n_s: usize,
    substeps: usize,
) -> Result<VerificationReport> {
    let verifier = Verifier::new(frame, traj, domain, cert, t_prime, seed, n_s, substeps)?;
    let trials = (0..n_trials)
        .map(|i| verifier.trial(i))
        .collect::<Result<Vec<_>>>()?;
    Ok(verifier.report(trials))
}
