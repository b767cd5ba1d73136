//! `oracle`: grid force against the direct sum, the grid field of a radial
//! Gaussian against its enclosed-mass field, and particle trajectories against
//! an adaptive high-order integration of the direct-sum N-body system, softened
//! at the initial grid spacing.

use std::f64::consts::TAU;
use std::path::Path;

use ode_solvers::{DVector, Dop853, System};
use rayon::prelude::*;
use vpsaddle::grid::{GridSpec, ScalarField2D};
use vpsaddle::integrator::SimState;
use vpsaddle::poisson::{deposit, direct_sum_force, force_at, gradient, solve_free_space};
use vpsaddle::sampling::{radical_inverse, sample_initial};

use crate::config::{ConfigError, RunConfig};
use crate::error::CliError;
use crate::format::Csv;
use crate::manifest::RunManifest;
use crate::output::OutputDir;
use crate::run::CONFIG_NAME;

pub const MAX_PARTICLES: usize = 2000;
/// Minimum pair separation of the force ensemble, in grid cells, unless the
/// box is too small to hold the ensemble at that spacing.
pub const MIN_SEPARATION_CELLS: f64 = 5.0;
/// Half-width of the force ensemble box on the unit-half-width grid.
const FORCE_BOX: f64 = 0.8;
const ODE_TOL: f64 = 1e-10;
/// Dense-output spacing of the reference integration.
const ODE_OUTPUT_STEP: f64 = 1e-2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleSummary {
    pub force_rms_rel: f64,
    pub radial_max_rel: f64,
    pub trajectory_max_rel: f64,
}

/// `sqrt(sum |a - b|^2 / sum |b|^2)`, or the absolute RMS when `b` vanishes.
fn rms_rel(a: &[[f64; 2]], b: &[[f64; 2]]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for (p, q) in a.iter().zip(b) {
        num += (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2);
        den += q[0] * q[0] + q[1] * q[1];
    }
    if den > 0.0 {
        (num / den).sqrt()
    } else {
        (num / a.len().max(1) as f64).sqrt()
    }
}

/// Low-discrepancy points in `[-half, half]^2` with pairwise distance at least
/// `min_sep`, taken in sequence order from offset `seed`.
pub fn separated_points(n: usize, half: f64, min_sep: f64, seed: u64) -> Vec<[f64; 2]> {
    let mut pts: Vec<[f64; 2]> = Vec::with_capacity(n);
    let mut k = seed + 1;
    while pts.len() < n {
        let p = [
            half * (2.0 * radical_inverse(k, 2) - 1.0),
            half * (2.0 * radical_inverse(k, 3) - 1.0),
        ];
        k += 1;
        if pts
            .iter()
            .all(|q| (p[0] - q[0]).hypot(p[1] - q[1]) >= min_sep)
        {
            pts.push(p);
        }
        assert!(
            k < seed + 1000 * n as u64 + 1_000_000,
            "cannot place {n} separated points"
        );
    }
    pts
}

fn force_check(cfg: &RunConfig, n: usize) -> Result<(Csv, f64), CliError> {
    let sim = &cfg.sim;
    let spec = GridSpec::centered(1.0, sim.grid_n);
    // random sequential packing stalls near half coverage of the box
    let packing = 2.0 * FORCE_BOX * (2.0 / (std::f64::consts::PI * n as f64)).sqrt();
    let xs = separated_points(
        n,
        FORCE_BOX,
        (MIN_SEPARATION_CELLS * spec.h).min(0.7 * packing),
        sim.seed,
    );
    let ws = vec![sim.initial_mass() / n as f64; n];
    let e = gradient(&solve_free_space(&deposit(&spec, &xs, &ws)?)?);
    let grid = force_at(&xs, &e, sim.mu)?;
    let (direct, _) = direct_sum_force(&xs, &ws);
    let direct: Vec<[f64; 2]> = direct
        .iter()
        .map(|g| [-sim.mu * g[0], -sim.mu * g[1]])
        .collect();
    let mut csv = Csv::new(&[
        "index",
        "x1",
        "x2",
        "grid_a1",
        "grid_a2",
        "direct_a1",
        "direct_a2",
    ]);
    for (i, (x, (g, d))) in xs.iter().zip(grid.iter().zip(&direct)).enumerate() {
        csv.push_nums(&[i as f64, x[0], x[1], g[0], g[1], d[0], d[1]]);
    }
    Ok((csv, rms_rel(&grid, &direct)))
}

/// Field of a radial Gaussian of mass `m` and width `sigma` on a grid of
/// half-width `6 sigma`, against `m (1 - e^{-r^2/2 sigma^2}) / (2 pi r)` on
/// `sigma <= r <= 4 sigma`.
fn radial_check(cfg: &RunConfig) -> Result<(Csv, f64), CliError> {
    let sim = &cfg.sim;
    let (m, sigma) = (sim.initial_mass(), sim.sigma_s);
    let spec = GridSpec::centered(6.0 * sigma, sim.grid_n);
    let mut rho = ScalarField2D::zeros(spec);
    for j in 0..spec.n {
        for i in 0..spec.n {
            let p = spec.node(i, j);
            let r2 = p[0] * p[0] + p[1] * p[1];
            rho.values[j * spec.n + i] =
                m / (TAU * sigma * sigma) * (-r2 / (2.0 * sigma * sigma)).exp();
        }
    }
    let e = gradient(&solve_free_space(&rho)?);
    let mut csv = Csv::new(&["r", "exact", "grid", "rel_err"]);
    let mut worst: f64 = 0.0;
    for j in 0..spec.n {
        for i in 0..spec.n {
            let p = spec.node(i, j);
            let r = p[0].hypot(p[1]);
            if r < sigma || r > 4.0 * sigma {
                continue;
            }
            let exact = m * (1.0 - (-r * r / (2.0 * sigma * sigma)).exp()) / (TAU * r);
            let g = e.at(i, j);
            let radial = (g[0] * p[0] + g[1] * p[1]) / r;
            let err = (g[0] - exact * p[0] / r).hypot(g[1] - exact * p[1] / r);
            let rel = if exact > 0.0 { err / exact } else { err };
            worst = worst.max(rel);
            if j == spec.n / 2 && p[0] > 0.0 {
                csv.push_nums(&[r, exact, radial, rel]);
            }
        }
    }
    Ok((csv, worst))
}

/// Direct-sum N-body system `x'' = x - mu grad phi`, state `(x_1..x_N, v_1..v_N)`,
/// with the pair kernel softened as `d / (|d|^2 + delta^2)`.
struct NBody {
    mu: f64,
    ws: Vec<f64>,
    delta2: f64,
}

impl NBody {
    fn grad_phi(&self, xs: &[[f64; 2]]) -> Vec<[f64; 2]> {
        xs.par_iter()
            .map(|xi| {
                let mut g = [0.0; 2];
                for (xj, wj) in xs.iter().zip(&self.ws) {
                    let d = [xi[0] - xj[0], xi[1] - xj[1]];
                    let c = wj / (d[0] * d[0] + d[1] * d[1] + self.delta2);
                    g[0] += c * d[0];
                    g[1] += c * d[1];
                }
                [g[0] / TAU, g[1] / TAU]
            })
            .collect()
    }
}

impl System<f64, DVector<f64>> for NBody {
    fn system(&self, _t: f64, y: &DVector<f64>, dy: &mut DVector<f64>) {
        let n = self.ws.len();
        let xs: Vec<[f64; 2]> = (0..n).map(|i| [y[2 * i], y[2 * i + 1]]).collect();
        let g = self.grad_phi(&xs);
        for i in 0..n {
            for k in 0..2 {
                dy[2 * i + k] = y[2 * n + 2 * i + k];
                dy[2 * n + 2 * i + k] = xs[i][k] - self.mu * g[i][k];
            }
        }
    }
}

fn trajectory_check(cfg: &RunConfig) -> Result<(Csv, f64), CliError> {
    let sim = &cfg.sim;
    let ens = sample_initial::<f64>(sim);
    let n = ens.len();
    let ws: Vec<f64> = ens.particles.iter().map(|p| p.w).collect();
    let mu_eff = if sim.coupling { sim.mu } else { 0.0 };
    let mut y = DVector::zeros(4 * n);
    for (i, p) in ens.particles.iter().enumerate() {
        let (x, v) = (p.x(), p.v());
        y[2 * i] = x[0];
        y[2 * i + 1] = x[1];
        y[2 * n + 2 * i] = v[0];
        y[2 * n + 2 * i + 1] = v[1];
    }
    let mut state = SimState::new(sim, ens)?;
    let delta = state.field.physical_spec().h;
    let mut csv = Csv::new(&["t", "max_rel_err", "rms_rel_err"]);
    let mut worst: f64 = 0.0;
    let mut t_ref = 0.0;
    for &ts in &sim.sample_times {
        if ts > t_ref {
            let steps = ((ts - t_ref) / ODE_OUTPUT_STEP).ceil().max(1.0);
            let sys = NBody {
                mu: mu_eff,
                ws: ws.clone(),
                delta2: delta * delta,
            };
            let mut ode = Dop853::new(
                sys,
                t_ref,
                ts,
                (ts - t_ref) / steps,
                y.clone(),
                ODE_TOL,
                ODE_TOL,
            );
            ode.integrate().map_err(|e| {
                vpsaddle::Error::InvalidArgument(format!("reference integration failed: {e:?}"))
            })?;
            y = ode.y_out().last().expect("dense output").clone();
            t_ref = ts;
        }
        state.advance_to(ts)?;
        let pic: Vec<[f64; 2]> = state.ensemble.particles.iter().map(|p| p.x()).collect();
        let rel: Vec<f64> = pic
            .par_iter()
            .enumerate()
            .map(|(i, p)| {
                let r = [y[2 * i], y[2 * i + 1]];
                (p[0] - r[0]).hypot(p[1] - r[1]) / r[0].hypot(r[1]).max(f64::MIN_POSITIVE)
            })
            .collect();
        let max = rel.iter().copied().fold(0.0, f64::max);
        let rms = (rel.iter().map(|r| r * r).sum::<f64>() / n as f64).sqrt();
        worst = worst.max(max);
        csv.push_nums(&[state.time_f64(), max, rms]);
    }
    Ok((csv, worst))
}

pub fn cmd_oracle(
    cfg: &RunConfig,
    out: &Path,
    reproducible: bool,
) -> Result<OracleSummary, CliError> {
    let n = cfg.sim.n_particles;
    if n > MAX_PARTICLES {
        return Err(ConfigError::Invalid {
            location: String::new(),
            key: "particles.n".into(),
            reason: format!("oracle runs are capped at {MAX_PARTICLES} particles, got {n}"),
        }
        .into());
    }
    let manifest = RunManifest::new("oracle", cfg.serialize(), reproducible);
    let mut dir = OutputDir::create(out, manifest, reproducible)?;
    dir.write(CONFIG_NAME, cfg.serialize().as_bytes())?;
    let result = (|| {
        let (force, force_rms_rel) = force_check(cfg, n)?;
        dir.write("force.csv", force.render().as_bytes())?;
        let (radial, radial_max_rel) = radial_check(cfg)?;
        dir.write("radial_gaussian.csv", radial.render().as_bytes())?;
        let (traj, trajectory_max_rel) = trajectory_check(cfg)?;
        dir.write("trajectory.csv", traj.render().as_bytes())?;
        let summary = OracleSummary {
            force_rms_rel,
            radial_max_rel,
            trajectory_max_rel,
        };
        let mut csv = Csv::new(&["metric", "value"]);
        for (name, v) in [
            ("force_rms_rel", force_rms_rel),
            ("radial_max_rel", radial_max_rel),
            ("trajectory_max_rel", trajectory_max_rel),
        ] {
            csv.push(vec![name.into(), crate::format::fmt_num(v)]);
        }
        dir.write("oracle_summary.csv", csv.render().as_bytes())?;
        Ok(summary)
    })();
    match &result {
        Ok(_) => dir.finish("ok")?,
        Err(e) => dir.finish(&format!("failed: {e}"))?,
    }
    result
}
