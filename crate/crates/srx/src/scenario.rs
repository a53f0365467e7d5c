//! JSON scenario files.
//!
//! Parsing is strict: unknown keys are rejected, and every grid, dimension
//! and tolerance is checked before any numerics run.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use srx_core::certifier::{DEFAULT_GRID_RESOLUTION, DEFAULT_MARGIN};
use srx_core::homotopy::DEFAULT_S_INTERVALS;
use srx_core::{
    admissible_perturbation, hamiltonian_extremal, integrate_trajectory, smooth_perturbation,
    trial_rng, ControlSignal, Domain, Extremal, Frame, Monomial, PolynomialField, Settings,
    TauRange, Trajectory,
};

use crate::error::CliError;

/// Points per axis for the frame independence check.
pub const INDEPENDENCE_GRID: usize = 11;
/// Smallest singular value accepted for the frame matrix.
pub const INDEPENDENCE_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    /// State dimension.
    pub n: usize,
    /// Number of frame fields.
    pub k: usize,
    /// Named frame used instead of explicit `fields`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<Preset>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub fields: Vec<FieldSpec>,
    pub domain: DomainSpec,
    pub q0: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub control: Option<ControlSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hamiltonian: Option<HamiltonianSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perturbation: Option<PerturbationSpec>,
    #[serde(default)]
    pub integrator: IntegratorSpec,
    #[serde(default)]
    pub tolerances: ToleranceSpec,
    #[serde(default)]
    pub homotopy: HomotopySpec,
    #[serde(default)]
    pub certify: CertifySpec,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// Coordinate fields on `R^n` (`k = n`).
    Euclidean,
    Heisenberg,
    Martinet,
}

/// One frame field. Keys are exponent tuples `"e1,...,en"`; each value holds
/// that monomial's coefficient in every output coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldSpec {
    pub coeffs: BTreeMap<String, Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSpec {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

/// Piecewise-constant control. `samples` has `R` rows of length `k`, with
/// `R` dividing `N_t`; each row covers `N_t / R` consecutive cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlSpec {
    #[serde(rename = "T")]
    pub horizon: f64,
    #[serde(rename = "N_t")]
    pub cells: usize,
    pub samples: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HamiltonianSpec {
    pub p0: Vec<f64>,
    #[serde(rename = "T")]
    pub horizon: f64,
    #[serde(rename = "N_t")]
    pub cells: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PerturbationSpec {
    /// Explicit rows, laid out like the control samples.
    Samples { samples: Vec<Vec<f64>> },
    /// One draw of the lower-energy sampler, seeded by the scenario seed.
    Admissible,
    /// Random Fourier modes.
    Smooth { modes: usize, amplitude: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorSpec {
    #[serde(default = "one")]
    pub substeps: usize,
}

fn one() -> usize {
    1
}

impl Default for IntegratorSpec {
    fn default() -> Self {
        Self { substeps: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToleranceSpec {
    pub sigma_tol: f64,
    pub theta_min: f64,
    pub acb_bound: f64,
    /// `"0..t"` or `"0..T"`.
    pub tau_range: String,
    pub tau_stride: usize,
    pub span_tol: f64,
}

impl Default for ToleranceSpec {
    fn default() -> Self {
        let s = Settings::default();
        Self {
            sigma_tol: s.sigma_tol,
            theta_min: s.theta_min,
            acb_bound: s.acb_bound,
            tau_range: s.tau_range.label().to_string(),
            tau_stride: s.tau_stride,
            span_tol: s.span_tol,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HomotopySpec {
    pub n_s: usize,
}

impl Default for HomotopySpec {
    fn default() -> Self {
        Self {
            n_s: DEFAULT_S_INTERVALS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CertifySpec {
    pub grid_resolution: usize,
    pub margin: f64,
    pub t_prime: f64,
    pub n_trials: u64,
    /// Upper end of the radius search; the horizon when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_max: Option<f64>,
    /// Tube radius to use instead of the computed one. Must not exceed it.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
}

impl Default for CertifySpec {
    fn default() -> Self {
        Self {
            grid_resolution: DEFAULT_GRID_RESOLUTION,
            margin: DEFAULT_MARGIN,
            t_prime: 0.05,
            n_trials: 200,
            t_max: None,
            eta: None,
        }
    }
}

/// Base trajectory together with the Hamiltonian data that produced it.
pub struct Base {
    pub trajectory: Trajectory,
    pub extremal: Option<Extremal>,
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let scenario: Scenario = serde_json::from_str(text)
            .map_err(|e| CliError::input(format!("schema error: {e}")))?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::input(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// SHA-256 of the canonical serialization, after command line overrides.
    /// The output directory does not affect results and is left out.
    pub fn hash(&self) -> String {
        let effective = Scenario {
            output_dir: None,
            ..self.clone()
        };
        let canonical = serde_json::to_vec(&effective).expect("scenario serializes");
        Sha256::digest(&canonical)
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let frame = self.frame()?;
        let (n, k) = (frame.n(), frame.k());
        let domain = self.domain()?;
        if domain.dim() != n {
            return Err(CliError::input(format!(
                "domain has dimension {}, frame {n}",
                domain.dim()
            )));
        }
        frame.check_independence(&domain, INDEPENDENCE_GRID, INDEPENDENCE_TOL)?;
        if self.q0.len() != n {
            return Err(CliError::input(format!(
                "q0 has length {}, expected {n}",
                self.q0.len()
            )));
        }
        match (&self.control, &self.hamiltonian) {
            (Some(_), Some(_)) => {
                return Err(CliError::input(
                    "give either `control` or `hamiltonian`, not both",
                ))
            }
            (None, None) => {
                return Err(CliError::input(
                    "one of `control` or `hamiltonian` is required",
                ))
            }
            (Some(_), None) => {
                self.control_signal()?;
            }
            (None, Some(h)) => {
                if h.p0.len() != n {
                    return Err(CliError::input(format!(
                        "p0 has length {}, expected {n}",
                        h.p0.len()
                    )));
                }
                check_grid(h.horizon, h.cells)?;
            }
        }
        if let Some(PerturbationSpec::Samples { samples }) = &self.perturbation {
            let (horizon, cells) = self.grid();
            expand_rows(horizon, cells, k, samples)?;
        }
        self.settings()?;
        if self.integrator.substeps == 0 {
            return Err(CliError::input("integrator.substeps must be at least 1"));
        }
        if self.homotopy.n_s == 0 {
            return Err(CliError::input("homotopy.n_s must be at least 1"));
        }
        let c = &self.certify;
        if c.grid_resolution == 0 || !at_least(c.margin, 1.0) || !positive(c.t_prime) {
            return Err(CliError::input(
                "certify needs grid_resolution >= 1, margin >= 1 and t_prime > 0",
            ));
        }
        if c.t_max.is_some_and(|t| !positive(t)) || c.eta.is_some_and(|e| !positive(e)) {
            return Err(CliError::input(
                "certify.t_max and certify.eta must be positive",
            ));
        }
        Ok(())
    }

    pub fn frame(&self) -> Result<Frame, CliError> {
        let frame = match (self.preset, self.fields.is_empty()) {
            (Some(_), false) => {
                return Err(CliError::input(
                    "give either `preset` or `fields`, not both",
                ))
            }
            (None, true) => return Err(CliError::input("one of `preset` or `fields` is required")),
            (Some(Preset::Euclidean), true) if self.n > 0 => Frame::euclidean(self.n),
            (Some(Preset::Euclidean), true) => return Err(CliError::input("n must be at least 1")),
            (Some(Preset::Heisenberg), true) => Frame::heisenberg(),
            (Some(Preset::Martinet), true) => Frame::martinet(),
            (None, false) => {
                let fields = self
                    .fields
                    .iter()
                    .map(|f| field(self.n, f))
                    .collect::<Result<Vec<_>, _>>()?;
                Frame::new(fields)?
            }
        };
        if (frame.n(), frame.k()) != (self.n, self.k) {
            return Err(CliError::input(format!(
                "frame has n = {}, k = {}; scenario declares n = {}, k = {}",
                frame.n(),
                frame.k(),
                self.n,
                self.k
            )));
        }
        Ok(frame)
    }

    pub fn domain(&self) -> Result<Domain, CliError> {
        Ok(Domain::new(
            self.domain.lower.clone(),
            self.domain.upper.clone(),
        )?)
    }

    /// Horizon and number of cells of the base grid.
    pub fn grid(&self) -> (f64, usize) {
        match (&self.control, &self.hamiltonian) {
            (Some(c), _) => (c.horizon, c.cells),
            (_, Some(h)) => (h.horizon, h.cells),
            _ => (0.0, 0),
        }
    }

    pub fn control_signal(&self) -> Result<Option<ControlSignal>, CliError> {
        let Some(c) = &self.control else {
            return Ok(None);
        };
        check_grid(c.horizon, c.cells)?;
        let k = self.frame()?.k();
        expand_rows(c.horizon, c.cells, k, &c.samples).map(Some)
    }

    pub fn settings(&self) -> Result<Settings, CliError> {
        let t = &self.tolerances;
        let tau_range = match t.tau_range.as_str() {
            "0..t" => TauRange::UpToT,
            "0..T" => TauRange::Full,
            other => {
                return Err(CliError::input(format!(
                    "tolerances.tau_range must be \"0..t\" or \"0..T\", got {other:?}"
                )))
            }
        };
        let strictly = [t.sigma_tol, t.acb_bound, t.span_tol];
        if !strictly.into_iter().all(positive) || !at_least(t.theta_min, 0.0) || t.tau_stride == 0 {
            return Err(CliError::input(
                "tolerances must be positive (theta_min may be zero, tau_stride >= 1)",
            ));
        }
        Ok(Settings {
            substeps: self.integrator.substeps.max(1),
            sigma_tol: t.sigma_tol,
            theta_min: t.theta_min,
            acb_bound: t.acb_bound,
            tau_range,
            tau_stride: t.tau_stride,
            span_tol: t.span_tol,
        })
    }

    /// Integrates the base trajectory: the given control, or the normal
    /// extremal from `hamiltonian.p0`.
    pub fn base(&self, frame: &Frame, domain: &Domain) -> Result<Base, CliError> {
        let substeps = self.integrator.substeps;
        if let Some(u) = self.control_signal()? {
            let trajectory = integrate_trajectory(frame, &u, &self.q0, Some(domain), substeps)?;
            return Ok(Base {
                trajectory,
                extremal: None,
            });
        }
        let h = self.hamiltonian.as_ref().expect("validated");
        let ex = hamiltonian_extremal(
            frame,
            &self.q0,
            &h.p0,
            h.horizon,
            h.cells,
            substeps,
            Some(domain),
        )?;
        Ok(Base {
            trajectory: ex.trajectory.clone(),
            extremal: Some(ex),
        })
    }

    pub fn delta_u(&self, u: &ControlSignal) -> Result<ControlSignal, CliError> {
        let spec = self
            .perturbation
            .as_ref()
            .ok_or_else(|| CliError::input("this command needs a `perturbation`"))?;
        Ok(match spec {
            PerturbationSpec::Samples { samples } => {
                expand_rows(u.horizon(), u.n_cells(), u.k(), samples)?
            }
            PerturbationSpec::Admissible => {
                admissible_perturbation(u, &mut trial_rng(self.seed, 0))?.delta_u
            }
            PerturbationSpec::Smooth { modes, amplitude } => smooth_perturbation(
                u.horizon(),
                u.n_cells(),
                u.k(),
                *modes,
                *amplitude,
                &mut trial_rng(self.seed, 0),
            )?,
        })
    }
}

fn field(n: usize, spec: &FieldSpec) -> Result<PolynomialField, CliError> {
    let mut components = vec![Vec::new(); n];
    for (key, coeffs) in &spec.coeffs {
        let exponents = key
            .split(',')
            .map(|e| e.trim().parse::<u32>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|_| CliError::input(format!("bad exponent tuple {key:?}")))?;
        if exponents.len() != n || coeffs.len() != n {
            return Err(CliError::input(format!(
                "monomial {key:?} needs {n} exponents and {n} coefficients"
            )));
        }
        for (a, &coeff) in coeffs.iter().enumerate() {
            if coeff != 0.0 {
                components[a].push(Monomial {
                    exponents: exponents.clone(),
                    coeff,
                });
            }
        }
    }
    Ok(PolynomialField::new(n, components)?)
}

/// False for NaN.
fn positive(x: f64) -> bool {
    x > 0.0
}

fn at_least(x: f64, lower: f64) -> bool {
    x >= lower
}

fn check_grid(horizon: f64, cells: usize) -> Result<(), CliError> {
    if !(horizon > 0.0 && horizon.is_finite()) || cells == 0 {
        return Err(CliError::input(format!(
            "need T > 0 and N_t >= 1 (T = {horizon}, N_t = {cells})"
        )));
    }
    Ok(())
}

fn expand_rows(
    horizon: f64,
    cells: usize,
    k: usize,
    rows: &[Vec<f64>],
) -> Result<ControlSignal, CliError> {
    if rows.is_empty() || !cells.is_multiple_of(rows.len()) {
        return Err(CliError::input(format!(
            "{} sample rows do not divide N_t = {cells}",
            rows.len()
        )));
    }
    if let Some(bad) = rows.iter().find(|r| r.len() != k) {
        return Err(CliError::input(format!(
            "sample row of length {}, expected k = {k}",
            bad.len()
        )));
    }
    let repeat = cells / rows.len();
    let flat: Vec<f64> = rows
        .iter()
        .flat_map(|r| std::iter::repeat_n(r, repeat).flatten().copied())
        .collect();
    Ok(ControlSignal::from_flat(horizon, k, flat)?)
}
