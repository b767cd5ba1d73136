//! Kick-drift-kick time stepping of the characteristic system
//! `dx/dt = v`, `dv/dt = x - mu grad phi(x)`.
//!
//! The drift is the exact hyperbolic flow. The self-consistent field is held on
//! a grid in the coordinate `xi = x e^-g`, with `g = t` for the comoving grid and
//! `g = 0` for the bounding-box grid, so that a fixed grid follows the unstable
//! expansion of the support.

use std::sync::Arc;

use rayon::prelude::*;

use crate::config::{GridMode, SimConfig};
use crate::ensemble::{Mat4, Particle, ParticleEnsemble};
use crate::error::{Error, Result};
use crate::grid::{cic_or_err, GridSpec, ScalarField2D, TensorField2D, VectorField2D};
use crate::poisson::{
    deposit_with, gradient, hessian, solve_sharpened, FreeSpaceSolver, SharpenedSolution,
};
use crate::scalar::{Real, Vec2};

/// Fractional margin added on each side of the particle bounding box.
pub const REGRID_INFLATION: f64 = 0.2;
/// A regrid is triggered when a particle comes this close (in cells) to an edge.
pub const REGRID_TRIGGER_CELLS: f64 = 2.0;

/// Field quantities on the grid in `xi = x e^-g`.
///
/// With `rho_xi(xi) = e^{2g} rho(e^g xi)` and `psi` its free-space potential,
/// the physical fields are `phi = psi + M g / 2pi`, `grad phi = e^-g grad psi`
/// and `hess phi = e^-2g hess psi`.
#[derive(Debug, Clone)]
pub struct FieldCache<T> {
    pub log_scale: T,
    /// CIC deposit of the particles.
    pub rho: ScalarField2D<T>,
    /// Sharpened deposit that sources `psi`.
    pub source: ScalarField2D<T>,
    pub psi: ScalarField2D<T>,
    pub grad: VectorField2D<T>,
    pub hess: TensorField2D<T>,
    pub mass: T,
}

impl<T: Real> FieldCache<T> {
    fn empty(spec: GridSpec<T>, log_scale: T) -> Self {
        Self {
            log_scale,
            rho: ScalarField2D::zeros(spec),
            source: ScalarField2D::zeros(spec),
            psi: ScalarField2D::zeros(spec),
            grad: VectorField2D::zeros(spec),
            hess: TensorField2D {
                spec,
                values: vec![[T::zero(); 3]; spec.len()],
            },
            mass: T::zero(),
        }
    }

    pub fn spec(&self) -> &GridSpec<T> {
        &self.rho.spec
    }

    /// `e^g`
    pub fn scale(&self) -> T {
        self.log_scale.exp()
    }

    /// The grid expressed in physical `x`.
    pub fn physical_spec(&self) -> GridSpec<T> {
        self.spec().scaled(self.scale())
    }

    /// Constant relating `phi` and `psi`.
    pub fn potential_offset(&self) -> T {
        self.mass * self.log_scale / T::TAU()
    }

    /// Physical `grad phi` at `x`, `None` outside the grid.
    pub fn grad_phi(&self, x: Vec2<T>) -> Option<Vec2<T>> {
        let inv = (-self.log_scale).exp();
        let g = self.grad.sample([x[0] * inv, x[1] * inv])?;
        Some([g[0] * inv, g[1] * inv])
    }

    /// Physical `phi` at `x`, `None` outside the grid.
    pub fn phi(&self, x: Vec2<T>) -> Option<T> {
        let inv = (-self.log_scale).exp();
        Some(self.psi.sample([x[0] * inv, x[1] * inv])? + self.potential_offset())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegridEvent {
    pub step: u64,
    pub t: f64,
    pub old_h: f64,
    pub new_h: f64,
    pub new_origin: [f64; 2],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepParams {
    pub mu: f64,
    pub dt: f64,
    pub coupling: bool,
    pub grid_mode: GridMode,
    pub grid_n: usize,
    pub max_extent: f64,
}

impl StepParams {
    pub fn from_config(cfg: &SimConfig) -> Self {
        Self {
            mu: cfg.mu,
            dt: cfg.dt,
            coupling: cfg.coupling && cfg.epsilon > 0.0,
            grid_mode: cfg.grid_mode,
            grid_n: cfg.grid_n,
            max_extent: cfg.max_extent,
        }
    }
}

pub struct SimState<T: Real> {
    pub t: T,
    pub step_count: u64,
    pub ensemble: ParticleEnsemble<T>,
    pub field: FieldCache<T>,
    pub params: StepParams,
    pub regrids: Vec<RegridEvent>,
    field_current: bool,
    solver: Arc<FreeSpaceSolver<T>>,
}

impl<T: Real> std::fmt::Debug for SimState<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SimState")
            .field("t", &self.t)
            .field("step_count", &self.step_count)
            .field("particles", &self.ensemble.len())
            .field("params", &self.params)
            .finish()
    }
}

/// Grid covering `[lo, hi]^2` inflated by [`REGRID_INFLATION`], with the origin
/// snapped to a multiple of `h`.
fn bbox_grid<T: Real>(lo: Vec2<T>, hi: Vec2<T>, n: usize) -> GridSpec<T> {
    let infl = T::lit(REGRID_INFLATION);
    let width = (hi[0] - lo[0]).max(hi[1] - lo[1]);
    let width = if width > T::zero() { width } else { T::one() };
    let centre = [(lo[0] + hi[0]) * T::lit(0.5), (lo[1] + hi[1]) * T::lit(0.5)];
    let span = width * (T::one() + infl + infl);
    // two spare cells absorb the snapping of the origin
    let h = span / T::from_usize_lossy(n - 3);
    let half = span * T::lit(0.5);
    let origin = [
        ((centre[0] - half) / h).floor() * h,
        ((centre[1] - half) / h).floor() * h,
    ];
    GridSpec::new(origin, h, n)
}

impl<T: Real> SimState<T> {
    /// Initial state at `t = 0` with the field solved.
    pub fn new(cfg: &SimConfig, ensemble: ParticleEnsemble<T>) -> Result<Self> {
        cfg.validate()?;
        let params = StepParams::from_config(cfg);
        let solver = Arc::new(FreeSpaceSolver::new(cfg.grid_n));
        let spec = GridSpec::centered(T::one(), cfg.grid_n);
        let mut state = Self {
            t: T::zero(),
            step_count: 0,
            ensemble,
            field: FieldCache::empty(spec, T::zero()),
            params,
            regrids: Vec::new(),
            field_current: false,
            solver,
        };
        let spec = state.fitted_grid();
        state.field = FieldCache::empty(spec, T::zero());
        state.refresh_field()?;
        Ok(state)
    }

    pub fn dt(&self) -> T {
        T::lit(self.params.dt)
    }

    pub fn mu(&self) -> T {
        T::lit(self.params.mu)
    }

    pub fn time_f64(&self) -> f64 {
        self.step_count as f64 * self.params.dt
    }

    fn log_scale_at(&self, t: T) -> T {
        match self.params.grid_mode {
            GridMode::Comoving => t,
            GridMode::Bbox => T::zero(),
        }
    }

    /// Grid coordinates of every particle at the current time.
    fn grid_points(&self, log_scale: T) -> Vec<Vec2<T>> {
        let inv = (-log_scale).exp();
        self.ensemble
            .particles
            .par_iter()
            .map(|p| p.rescaled_x(inv))
            .collect()
    }

    fn fitted_grid(&self) -> GridSpec<T> {
        let pts = self.grid_points(self.log_scale_at(self.t));
        let big = T::max_value();
        let (lo, hi) = pts.iter().fold(([big, big], [-big, -big]), |(lo, hi), p| {
            (
                [lo[0].min(p[0]), lo[1].min(p[1])],
                [hi[0].max(p[0]), hi[1].max(p[1])],
            )
        });
        if pts.is_empty() {
            return GridSpec::centered(T::one(), self.params.grid_n);
        }
        bbox_grid(lo, hi, self.params.grid_n)
    }

    fn needs_regrid(&self, spec: &GridSpec<T>, log_scale: T) -> bool {
        let trigger = T::lit(REGRID_TRIGGER_CELLS);
        let inv = (-log_scale).exp();
        self.ensemble
            .particles
            .par_iter()
            .any(|p| !(spec.edge_distance(p.rescaled_x(inv)) >= trigger))
    }

    fn regrid(&mut self) -> Result<()> {
        let old_h = self.field.spec().h.to_f64_lossy();
        let spec = self.fitted_grid();
        let physical = spec.extent() * self.log_scale_at(self.t).exp();
        if !(physical.to_f64_lossy() <= self.params.max_extent) {
            return Err(Error::RegridLimit {
                required: physical.to_f64_lossy(),
                max: self.params.max_extent,
            });
        }
        self.regrids.push(RegridEvent {
            step: self.step_count,
            t: self.time_f64(),
            old_h,
            new_h: spec.h.to_f64_lossy(),
            new_origin: [spec.origin[0].to_f64_lossy(), spec.origin[1].to_f64_lossy()],
        });
        self.field = FieldCache::empty(spec, self.field.log_scale);
        self.field_current = false;
        Ok(())
    }

    /// Recompute the field at the current positions, regridding first if any
    /// particle is close to the grid edge.
    pub fn refresh_field(&mut self) -> Result<()> {
        let log_scale = self.log_scale_at(self.t);
        if self.needs_regrid(self.field.spec(), log_scale) {
            self.regrid()?;
        }
        match self.solve_field(log_scale) {
            Err(Error::OutOfDomain { .. }) => {
                self.regrid()?;
                self.solve_field(log_scale)
                    .map_err(|e| Error::RegridFailed {
                        step: self.step_count,
                        source: Box::new(e),
                    })
            }
            r => r,
        }
    }

    fn solve_field(&mut self, log_scale: T) -> Result<()> {
        let spec = *self.field.spec();
        let inv = (-log_scale).exp();
        let scale = log_scale.exp();
        let parts = &self.ensemble.particles;
        let rho = deposit_with(&spec, parts.len(), scale, |i| {
            let p = &parts[i];
            (p.rescaled_x(inv), p.w)
        })?;
        let SharpenedSolution {
            source,
            psi,
            psi_force,
        } = solve_sharpened(&self.solver, &rho)?;
        let grad = gradient(&psi_force);
        grad.check_finite("field gradient")?;
        let hess = hessian(&psi_force);
        hess.check_finite("field Hessian")?;
        let mass = rho.integral();
        self.field = FieldCache {
            log_scale,
            rho,
            source,
            psi,
            grad,
            hess,
            mass,
        };
        self.field_current = true;
        Ok(())
    }

    /// Make sure the cached field matches the current positions (only needed
    /// when the coupling is off, since the kick keeps it current otherwise).
    pub fn ensure_field(&mut self) -> Result<()> {
        if !self.field_current {
            self.refresh_field()?;
        }
        Ok(())
    }

    pub fn field_is_current(&self) -> bool {
        self.field_current
    }

    /// Half-kick with the cached field: `v -= (dt/2) mu grad phi(x)`, together
    /// with the tangent and drift-accumulator updates.
    fn half_kick(&mut self) -> Result<()> {
        let t = self.t;
        let g = self.field.log_scale;
        let a = self.mu() * self.dt() * T::lit(0.5);
        let half_a = a * T::lit(0.5);
        let inv = (-g).exp();
        // physical E = e^-g grad psi; e^t E for the drift
        let e_fac = inv;
        let et_e_fac = (t - g).exp();
        // physical H = e^-2g hess psi; the tangent update also needs e^{2t} H
        let h_fac = (-(g + g)).exp();
        let h2t_fac = (t + t - g - g).exp();
        let hm2t_fac = (-(t + t + g + g)).exp();
        let field = &self.field;
        let spec = *field.spec();
        let scale = g.exp();
        self.ensemble
            .particles
            .par_iter_mut()
            .enumerate()
            .try_for_each(|(i, p)| -> Result<()> {
                let c = cic_or_err(&spec, p.rescaled_x(inv), i, T::zero(), scale)?;
                let gp = field.grad.interpolate(&c);
                let hp = field.hess.interpolate(&c);
                let e = [gp[0] * e_fac, gp[1] * e_fac];
                for k in 0..2 {
                    p.s[k] = p.s[k] + half_a * e[k];
                    p.u[k] = p.u[k] - half_a * e[k];
                    p.drift[k] = p.drift[k] + a * et_e_fac * gp[k];
                }
                kick_tangent(
                    &mut p.tangent,
                    hp,
                    half_a * h_fac,
                    half_a * h2t_fac,
                    half_a * hm2t_fac,
                );
                if !(p.u[0].is_finite() && p.u[1].is_finite()) {
                    return Err(Error::Overflow {
                        index: i,
                        t: t.to_f64_lossy(),
                    });
                }
                Ok(())
            })
    }

    fn drift(&mut self) {
        let dt = self.dt();
        let em = (-dt).exp();
        let ep = dt.exp();
        self.ensemble.particles.par_iter_mut().for_each(|p| {
            for k in 0..2 {
                p.s[k] = p.s[k] * em;
                p.u[k] = p.u[k] * ep;
            }
        });
    }

    /// One kick-drift-kick step of size `dt`.
    pub fn step(&mut self) -> Result<()> {
        if self.params.coupling {
            self.ensure_field()?;
            self.half_kick()?;
        }
        self.drift();
        self.step_count += 1;
        self.t = T::lit(self.time_f64());
        self.field_current = false;
        if self.params.coupling {
            self.refresh_field()?;
            self.half_kick()?;
        }
        Ok(())
    }

    /// Step until `t` (rounded to the step lattice).
    pub fn advance_to(&mut self, t: f64) -> Result<()> {
        let target = (t / self.params.dt).round() as u64;
        while self.step_count < target {
            self.step()?;
        }
        Ok(())
    }

    /// Run through every sample time of `cfg`, calling `on_sample` at each one
    /// with the field current.
    pub fn run_samples<F>(&mut self, sample_times: &[f64], mut on_sample: F) -> Result<()>
    where
        F: FnMut(&SimState<T>) -> Result<()>,
    {
        for &ts in sample_times {
            self.advance_to(ts)?;
            self.ensure_field()?;
            on_sample(self)?;
        }
        Ok(())
    }

    pub fn total_weight(&self) -> T {
        self.ensemble.total_weight()
    }
}

/// Tangent update for a kick `v -= a grad phi` in the rescaled basis.
///
/// `ks` and `ku` are the stable and unstable row pairs of `K`; with physical
/// Hessian `H`, `ks += (a/2) H (ks + e^{2t} ku)` and
/// `ku -= (a/2) H (e^{-2t} ks + ku)`, both from the old `K`. The two factors
/// factors `c`, `c2 = e^{2t} c` and `c3 = e^{-2t} c` multiply the grid Hessian
/// directly so that `e^{2t}` never multiplies a tiny physical Hessian.
#[inline]
fn kick_tangent<T: Real>(k: &mut Mat4<T>, hess: [T; 3], c: T, c2: T, c3: T) {
    let [hxx, hxy, hyy] = hess;
    let apply = |f: T, a: T, b: T| -> (T, T) { (f * (hxx * a + hxy * b), f * (hxy * a + hyy * b)) };
    let old = *k;
    for col in 0..4 {
        let (s0, s1, u0, u1) = (old[0][col], old[1][col], old[2][col], old[3][col]);
        let (a0, a1) = apply(c, s0, s1);
        let (b0, b1) = apply(c2, u0, u1);
        k[0][col] = s0 + a0 + b0;
        k[1][col] = s1 + a1 + b1;
        let (d0, d1) = apply(c3, s0, s1);
        let (e0, e1) = apply(c, u0, u1);
        k[2][col] = u0 - d0 - e0;
        k[3][col] = u1 - d1 - e1;
    }
}

/// Fresh state for a configuration, sampling the initial ensemble.
pub fn initialize<T: Real>(cfg: &SimConfig) -> Result<SimState<T>> {
    cfg.validate()?;
    SimState::new(cfg, crate::sampling::sample_initial(cfg))
}

/// Per-particle view used by diagnostics that only need positions.
pub fn positions<T: Real>(parts: &[Particle<T>]) -> Vec<Vec2<T>> {
    parts.par_iter().map(|p| p.x()).collect()
}
