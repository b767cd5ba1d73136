//! Deterministic initial-data sampling.
//!
//! `f0(s, u) = eps * exp(-|s|^2 / (2 sigma_s^2) - |u|^2 / (2 sigma_u^2))`,
//! truncated to a box of `TRUNCATION_SIGMAS` widths per axis. Points come
//! from a Halton sequence in the positive orthant pushed through the
//! truncated normal quantile, then reflected through all 16 sign patterns.
//! Each particle carries `f0 * (x, v)-cell volume`, where the cell volume is
//! the inverse point density of the sampler; for this sampler all weights are
//! equal.

use statrs::distribution::{ContinuousCDF, Normal};

use crate::config::{SimConfig, TRUNCATION_SIGMAS};
use crate::ensemble::{Particle, ParticleEnsemble};
use crate::phase::MEASURE_JACOBIAN;
use crate::scalar::Real;

const BASES: [u64; 4] = [2, 3, 5, 7];
pub const REFLECTIONS: usize = 16;

/// Van der Corput radical inverse of `index` in `base`.
pub fn radical_inverse(mut index: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut r = 0.0;
    while index > 0 {
        r += f * (index % base) as f64;
        index /= base;
        f *= inv;
    }
    r
}

/// Particle count actually used for a requested count.
pub fn realized_count(requested: usize) -> usize {
    let m = ((requested as f64) / REFLECTIONS as f64).round().max(1.0) as usize;
    m * REFLECTIONS
}

/// Evaluates `f0` and its `(x, v)` gradient at a hyperbolic point.
pub fn gaussian_f0(cfg: &SimConfig, s: [f64; 2], u: [f64; 2]) -> (f64, [f64; 4]) {
    let ss = cfg.sigma_s * cfg.sigma_s;
    let uu = cfg.sigma_u * cfg.sigma_u;
    let f = cfg.epsilon
        * (-(s[0] * s[0] + s[1] * s[1]) / (2.0 * ss) - (u[0] * u[0] + u[1] * u[1]) / (2.0 * uu))
            .exp();
    let ds = [-s[0] / ss * f, -s[1] / ss * f];
    let du = [-u[0] / uu * f, -u[1] / uu * f];
    // d/dx = (d/ds + d/du)/2, d/dv = (d/du - d/ds)/2
    (
        f,
        [
            0.5 * (ds[0] + du[0]),
            0.5 * (ds[1] + du[1]),
            0.5 * (du[0] - ds[0]),
            0.5 * (du[1] - ds[1]),
        ],
    )
}

pub fn sample_initial<T: Real>(cfg: &SimConfig) -> ParticleEnsemble<T> {
    let n = realized_count(cfg.n_particles);
    let m = n / REFLECTIONS;
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    let phi_cut = normal.cdf(TRUNCATION_SIGMAS);
    let half_mass = phi_cut - 0.5;
    // density of one truncated standard normal coordinate at z
    let trunc_pdf =
        |z: f64| (-0.5 * z * z).exp() / (std::f64::consts::TAU.sqrt() * (2.0 * phi_cut - 1.0));

    let mut particles = Vec::with_capacity(n);
    for i in 0..m {
        let index = cfg.seed + 1 + i as u64;
        let mut z = [0.0; 4];
        for (k, zk) in z.iter_mut().enumerate() {
            let c = radical_inverse(index, BASES[k]);
            *zk = normal.inverse_cdf(0.5 + c * half_mass);
        }
        for pattern in 0..REFLECTIONS {
            let mut zz = z;
            for (k, zk) in zz.iter_mut().enumerate() {
                if pattern >> k & 1 == 1 {
                    *zk = -*zk;
                }
            }
            let s = [cfg.sigma_s * zz[0], cfg.sigma_s * zz[1]];
            let u = [cfg.sigma_u * zz[2], cfg.sigma_u * zz[3]];
            let density_su = zz.iter().map(|&q| trunc_pdf(q)).product::<f64>()
                / (cfg.sigma_s * cfg.sigma_s * cfg.sigma_u * cfg.sigma_u);
            let cell_xv = MEASURE_JACOBIAN / (n as f64 * density_su);
            let (f, g) = gaussian_f0(cfg, s, u);
            particles.push(Particle::new(
                [T::lit(s[0]), T::lit(s[1])],
                [T::lit(u[0]), T::lit(u[1])],
                T::lit(f * cell_xv),
                T::lit(f),
                g.map(T::lit),
            ));
        }
    }
    ParticleEnsemble {
        particles,
        requested: cfg.n_particles,
    }
}

/// Closed-form mass represented by the truncated sample, `(x, v)` measure.
pub fn truncated_mass(cfg: &SimConfig) -> f64 {
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    let frac = 2.0 * normal.cdf(TRUNCATION_SIGMAS) - 1.0;
    cfg.initial_mass() * frac.powi(4)
}
