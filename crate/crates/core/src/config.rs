//! Run configuration.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum GridMode {
    /// Field grid expands with the unstable direction: fixed grid in `x e^-t`.
    #[default]
    Comoving,
    /// Fixed grid in `x`, regridded to the particle bounding box on demand.
    Bbox,
}

impl GridMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            GridMode::Comoving => "comoving",
            GridMode::Bbox => "bbox",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "comoving" => Some(GridMode::Comoving),
            "bbox" => Some(GridMode::Bbox),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// Coupling sign, +1 or -1.
    pub mu: f64,
    /// Amplitude of the initial Gaussian.
    pub epsilon: f64,
    pub sigma_s: f64,
    pub sigma_u: f64,
    pub n_particles: usize,
    /// Field grid nodes per axis (power of two).
    pub grid_n: usize,
    pub dt: f64,
    pub t_final: f64,
    pub sample_times: Vec<f64>,
    pub norm_m: u32,
    /// Offset into the low-discrepancy sequence.
    pub seed: u64,
    /// When false the kick is skipped and the run is the exact linear flow.
    pub coupling: bool,
    pub grid_mode: GridMode,
    /// Upper bound on the physical grid extent accepted by a bbox regrid.
    pub max_extent: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            mu: 1.0,
            epsilon: 1e-2,
            sigma_s: 1.0,
            sigma_u: 1.0,
            n_particles: 160_000,
            grid_n: 256,
            dt: 1e-2,
            t_final: 8.0,
            sample_times: (0..=8).map(f64::from).collect(),
            norm_m: 6,
            seed: 0,
            coupling: true,
            grid_mode: GridMode::Comoving,
            max_extent: 1e9,
        }
    }
}

/// Half-width of the sampling box, in units of the Gaussian widths.
pub const TRUNCATION_SIGMAS: f64 = 6.0;

fn invalid(field: &str, reason: impl Into<String>) -> Error {
    Error::InvalidConfig {
        field: field.to_string(),
        reason: reason.into(),
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.mu != 1.0 && self.mu != -1.0 {
            return Err(invalid("physics.mu", "must be +1 or -1"));
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(invalid("physics.epsilon", "must be finite and >= 0"));
        }
        for (name, v) in [
            ("initial.sigma_s", self.sigma_s),
            ("initial.sigma_u", self.sigma_u),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid(name, "must be positive"));
            }
        }
        if self.n_particles == 0 {
            return Err(invalid("particles.n", "must be positive"));
        }
        if !self.grid_n.is_power_of_two() || self.grid_n < 16 {
            return Err(invalid("grid.n", "must be a power of two >= 16"));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(invalid("time.dt", "must be positive"));
        }
        if !(self.t_final > 0.0 && self.t_final.is_finite()) {
            return Err(invalid("time.t_final", "must be positive"));
        }
        if self.sample_times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(invalid("time.sample_times", "must be strictly increasing"));
        }
        if self
            .sample_times
            .iter()
            .any(|&t| t < 0.0 || t > self.t_final + 1e-9 * self.t_final)
        {
            return Err(invalid("time.sample_times", "must lie in [0, t_final]"));
        }
        if self.norm_m < 6 {
            return Err(invalid("norms.M", "weight exponent must be >= 6"));
        }
        if !(self.max_extent > 0.0) {
            return Err(invalid("grid.max_extent", "must be positive"));
        }
        Ok(())
    }

    /// Number of steps needed to reach `t`, rounded to the nearest step.
    pub fn steps_to(&self, t: f64) -> u64 {
        (t / self.dt).round() as u64
    }

    /// Closed-form mass of the untruncated initial Gaussian in `(x, v)` measure.
    pub fn initial_mass(&self) -> f64 {
        let tau = std::f64::consts::TAU;
        self.epsilon
            * tau
            * tau
            * self.sigma_s.powi(2)
            * self.sigma_u.powi(2)
            * crate::phase::MEASURE_JACOBIAN
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_is_valid() {
        SimConfig::default().validate().unwrap();
    }

    #[test]
    fn rejects_bad_fields() {
        let cases: Vec<(fn(&mut SimConfig), &str)> = vec![
            (|c| c.mu = 0.5, "physics.mu"),
            (|c| c.epsilon = -1.0, "physics.epsilon"),
            (|c| c.grid_n = 100, "grid.n"),
            (|c| c.dt = 0.0, "time.dt"),
            (|c| c.norm_m = 4, "norms.M"),
            (|c| c.sample_times = vec![1.0, 0.5], "time.sample_times"),
            (|c| c.sample_times = vec![9.0], "time.sample_times"),
        ];
        for (mutate, field) in cases {
            let mut c = SimConfig::default();
            mutate(&mut c);
            match c.validate() {
                Err(Error::InvalidConfig { field: f, .. }) => assert_eq!(f, field),
                other => panic!("expected error on {field}, got {other:?}"),
            }
        }
    }
}
