//! Seeded random control perturbations.
//!
//! Every trial owns a generator seeded with `base_seed + trial`, so results do
//! not depend on how trials are scheduled.

use alloc::vec::Vec;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::control::ControlSignal;
use crate::error::{Error, Result};
use crate::math::{cos, dot, powi, sin, sqrt};

/// Draws allowed per sample before giving up.
pub const MAX_ATTEMPTS: usize = 64;

/// Smallest overall scale applied to an admissible draw.
pub const MIN_SCALE: f64 = 1e-3;

pub fn trial_rng(base_seed: u64, trial: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(base_seed.wrapping_add(trial))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub delta_u: ControlSignal,
    /// Draws discarded before this one.
    pub rejections: usize,
}

fn gaussian<R: Rng + ?Sized>(rng: &mut R, len: usize) -> Vec<f64> {
    (0..len)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect()
}

/// Random `du` with `E(u + du) <= E(u)`.
///
/// A cellwise Gaussian `g` is split into `alpha u + w` with `w` orthogonal to
/// `u` in `L^2`. With `f` uniform in `(0, 1)`, `w` is scaled to
/// `|sigma w|^2 = f |u|^2` and the parallel coefficient `beta` is drawn
/// uniformly from the interval where `(1 + beta)^2 + f <= 1`. The result
/// lies in the ball `|u + du| <= |u|`, which contains the origin, so a final
/// log-uniform scale in `[MIN_SCALE, 1]` keeps it admissible while covering
/// small perturbations too.
pub fn admissible_perturbation<R: Rng + ?Sized>(u: &ControlSignal, rng: &mut R) -> Result<Sample> {
    let flat_u = u.as_flat();
    let uu = dot(flat_u, flat_u);
    if uu == 0.0 {
        return Err(Error::ZeroVector);
    }
    for rejections in 0..MAX_ATTEMPTS {
        let g = gaussian(rng, flat_u.len());
        let alpha = dot(&g, flat_u) / uu;
        let w: Vec<f64> = g
            .iter()
            .zip(flat_u)
            .map(|(gi, ui)| gi - alpha * ui)
            .collect();
        let ww = dot(&w, &w);
        let f: f64 = rng.random();
        let beta_unit: f64 = rng.random();
        let level: f64 = rng.random();
        if ww == 0.0 || f == 0.0 {
            continue;
        }
        let sigma = sqrt(f * uu / ww);
        let radius = sqrt(1.0 - f);
        let beta = -1.0 - radius + 2.0 * radius * beta_unit;
        let scale = libm::pow(10.0, libm::log10(MIN_SCALE) * level);
        let samples: Vec<f64> = w
            .iter()
            .zip(flat_u)
            .map(|(wi, ui)| scale * (sigma * wi + beta * ui))
            .collect();
        let du = ControlSignal::from_flat(u.horizon(), u.k(), samples)?;
        let moved = u.add_scaled(1.0, &du)?;
        let norm = du.l2_norm();
        if norm > 0.0 && norm.is_finite() && moved.l2_norm_sq() <= u.l2_norm_sq() {
            return Ok(Sample {
                delta_u: du,
                rejections,
            });
        }
    }
    Err(Error::DegenerateSampling(alloc::format!(
        "no admissible perturbation after {MAX_ATTEMPTS} draws"
    )))
}

/// Random smooth `du`: a constant plus `modes` Fourier modes with Gaussian
/// coefficients decaying like `1 / m^2`, sampled at cell midpoints.
pub fn smooth_perturbation<R: Rng + ?Sized>(
    horizon: f64,
    cells: usize,
    k: usize,
    modes: usize,
    amplitude: f64,
    rng: &mut R,
) -> Result<ControlSignal> {
    let coeffs = gaussian(rng, k * (2 * modes + 1));
    let omega = 2.0 * core::f64::consts::PI / horizon;
    ControlSignal::from_fn(horizon, cells, k, |t| {
        (0..k)
            .map(|i| {
                let c = &coeffs[i * (2 * modes + 1)..(i + 1) * (2 * modes + 1)];
                let mut v = c[0];
                for m in 1..=modes {
                    let decay = 1.0 / powi(m as f64, 2);
                    let arg = omega * m as f64 * t;
                    v += decay * (c[2 * m - 1] * cos(arg) + c[2 * m] * sin(arg));
                }
                amplitude * v
            })
            .collect()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_sample() {
        let u = ControlSignal::constant(1.0, 50, &[0.6, 0.8]).unwrap();
        let a = admissible_perturbation(&u, &mut trial_rng(7, 3)).unwrap();
        let b = admissible_perturbation(&u, &mut trial_rng(7, 3)).unwrap();
        let c = admissible_perturbation(&u, &mut trial_rng(7, 4)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.delta_u, c.delta_u);
    }

    #[test]
    fn samples_are_admissible_and_varied() {
        let u = ControlSignal::constant(2.0, 40, &[1.0, 0.0]).unwrap();
        let mut rng = trial_rng(11, 0);
        let (mut smallest, mut largest) = (f64::INFINITY, 0.0f64);
        for _ in 0..500 {
            let s = admissible_perturbation(&u, &mut rng).unwrap();
            let du = &s.delta_u;
            assert!(u.add_scaled(1.0, du).unwrap().l2_norm_sq() <= u.l2_norm_sq());
            smallest = smallest.min(du.l2_norm());
            largest = largest.max(du.l2_norm());
        }
        assert!(smallest < 1e-2 && largest > 1.0);
    }

    #[test]
    fn smooth_samples_have_the_requested_shape() {
        let du = smooth_perturbation(1.0, 100, 3, 4, 0.5, &mut trial_rng(1, 0)).unwrap();
        assert_eq!((du.n_cells(), du.k()), (100, 3));
        assert!(du.l2_norm() > 0.0);
    }
}
