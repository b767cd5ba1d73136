//! Measurements taken on a simulation state.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{GridSpec, ScalarField2D};
use crate::integrator::SimState;
use crate::phase::{det4, solve_transpose4, MEASURE_JACOBIAN};
use crate::reduce::{par_max, par_sum};
use crate::scalar::{Real, Vec2};

/// Nodes per axis of the fixed profile grid in `u~`.
pub const PROFILE_NODES: usize = 64;
/// Half-width of the profile grid, in units of `sigma_u`.
pub const PROFILE_HALF_WIDTH: f64 = 4.0;
/// Stable-average bins per axis.
pub const Q_BINS: usize = 32;
/// Rate fits skip samples before this time.
pub const FIT_MIN_TIME: f64 = 2.0;
/// Particles with `|det J|` below this are excluded from derivative bounds.
pub const SINGULAR_DET: f64 = 1e-3;

/// Fixed `u~` grid for density and force profiles.
pub fn profile_grid(sigma_u: f64) -> GridSpec<f64> {
    GridSpec::centered(PROFILE_HALF_WIDTH * sigma_u, PROFILE_NODES)
}

/// Fixed `u~` grid for stable averages (node-centred bins).
pub fn q_grid(sigma_u: f64, bins: usize) -> GridSpec<f64> {
    GridSpec::centered(PROFILE_HALF_WIDTH * sigma_u, bins)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DensityProfile {
    pub sup_e2t_rho: f64,
    /// `e^{2t} rho(t, e^t u~)` on the profile grid; `None` where the field grid
    /// does not reach.
    pub profile: Vec<Option<f64>>,
    pub spec: GridSpec<f64>,
}

/// `sup_x e^{2t} rho` over grid nodes and the rescaled density profile.
pub fn density_profile<T: Real>(state: &SimState<T>, grid: &GridSpec<f64>) -> DensityProfile {
    let f = &state.field;
    let t = state.t.to_f64_lossy();
    let g = f.log_scale.to_f64_lossy();
    let amp = (2.0 * (t - g)).exp();
    let sup = f.rho.max_abs().to_f64_lossy() * amp;
    let stretch = (t - g).exp();
    let profile = (0..grid.len())
        .into_par_iter()
        .map(|k| {
            let p = grid.node(k % grid.n, k / grid.n);
            f.rho
                .sample([T::lit(p[0] * stretch), T::lit(p[1] * stretch)])
                .map(|v| v.to_f64_lossy() * amp)
        })
        .collect();
    DensityProfile {
        sup_e2t_rho: sup,
        profile,
        spec: *grid,
    }
}

/// Rescaled force profile `e^t grad phi(t, e^t u~)` on a fixed grid.
pub fn force_profile<T: Real>(state: &SimState<T>, grid: &GridSpec<f64>) -> Vec<Option<Vec2<f64>>> {
    let f = &state.field;
    let t = state.t.to_f64_lossy();
    let g = f.log_scale.to_f64_lossy();
    let stretch = (t - g).exp();
    (0..grid.len())
        .into_par_iter()
        .map(|k| {
            let p = grid.node(k % grid.n, k / grid.n);
            f.grad
                .sample([T::lit(p[0] * stretch), T::lit(p[1] * stretch)])
                .map(|v| [v[0].to_f64_lossy() * stretch, v[1].to_f64_lossy() * stretch])
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Binning {
    /// Bilinear sharing between the four surrounding nodes.
    #[default]
    Cic,
    /// Nearest node.
    Ngp,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StableAverage {
    /// `Q(t, u~)` at the grid nodes.
    pub q: ScalarField2D<f64>,
    /// Mass (in `(x, v)` measure) of particles falling outside the grid.
    pub outside_mass: f64,
}

impl StableAverage {
    /// `MEASURE_JACOBIAN * h^2 * sum(Q)`, the captured mass in `(x, v)` measure.
    pub fn captured_mass(&self) -> f64 {
        MEASURE_JACOBIAN * self.q.integral()
    }
}

/// Normalized stable average `Q(t, u~) = e^{2t} int f(t, s, e^t u~) ds` from the
/// particles' rescaled unstable coordinates.
pub fn stable_average<T: Real>(
    state: &SimState<T>,
    grid: &GridSpec<f64>,
    binning: Binning,
) -> StableAverage {
    let inv = (-state.t).exp();
    let parts = &state.ensemble.particles;
    let points: Vec<(Vec2<f64>, f64)> = parts
        .par_iter()
        .map(|p| {
            (
                [(p.u[0] * inv).to_f64_lossy(), (p.u[1] * inv).to_f64_lossy()],
                p.w.to_f64_lossy() / MEASURE_JACOBIAN,
            )
        })
        .collect();
    bin_points(grid, &points, binning)
}

/// Deposit weighted points onto node-centred bins, dividing by the bin area.
/// Returns the binned density and the weight (times `MEASURE_JACOBIAN`) that
/// fell outside.
pub fn bin_points(
    grid: &GridSpec<f64>,
    points: &[(Vec2<f64>, f64)],
    binning: Binning,
) -> StableAverage {
    let n = grid.n;
    let inv_area = 1.0 / (grid.h * grid.h);
    let chunk = 16384;
    let partial: Vec<(Vec<f64>, f64)> = points
        .par_chunks(chunk)
        .map(|pts| {
            let mut g = vec![0.0; n * n];
            let mut outside = 0.0;
            for &(p, w) in pts {
                match binning {
                    Binning::Cic => match grid.cic(p, 0.0) {
                        Some(c) => {
                            let ws = c.weights();
                            for (k, idx) in c.indices(n).into_iter().enumerate() {
                                g[idx] += w * ws[k] * inv_area;
                            }
                        }
                        None => outside += w,
                    },
                    Binning::Ngp => {
                        let f = grid.frac(p);
                        let (i, j) = ((f[0] + 0.5).floor(), (f[1] + 0.5).floor());
                        if i >= 0.0 && j >= 0.0 && (i as usize) < n && (j as usize) < n {
                            g[j as usize * n + i as usize] += w * inv_area;
                        } else {
                            outside += w;
                        }
                    }
                }
            }
            (g, outside)
        })
        .collect();
    let mut q = ScalarField2D::zeros(*grid);
    let mut outside = 0.0;
    for (g, o) in partial {
        for (a, b) in q.values.iter_mut().zip(g) {
            *a += b;
        }
        outside += o;
    }
    StableAverage {
        q,
        outside_mass: outside * MEASURE_JACOBIAN,
    }
}

/// Sup-norm of the difference of two fields on the same grid.
pub fn sup_difference(a: &ScalarField2D<f64>, b: &ScalarField2D<f64>) -> f64 {
    a.values
        .iter()
        .zip(&b.values)
        .fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HamiltonianParts {
    /// `(1/2) sum w (|v|^2 - |x|^2) = -2 sum w u.s`
    pub kinetic: f64,
    /// `(mu/2) int phi rho`
    pub potential: f64,
    pub total: f64,
}

/// Energy `(1/2) int (|v|^2 - |x|^2) f + (mu/2) int phi rho`.
///
/// This equals `(1/2) int (|v|^2 - |x|^2) f - (mu/2) int |grad phi|^2` up to a
/// divergent constant, since `int |grad phi|^2` is infinite in two dimensions
/// for nonzero mass.
pub fn hamiltonian<T: Real>(state: &SimState<T>) -> HamiltonianParts {
    let parts = &state.ensemble.particles;
    let kinetic = par_sum(parts.len(), |i| {
        let p = &parts[i];
        p.w * (p.u[0] * p.s[0] + p.u[1] * p.s[1])
    }) * T::lit(-2.0);
    let f = &state.field;
    let h2 = f.spec().h * f.spec().h;
    let n = f.rho.values.len();
    let psi_rho = par_sum(n, |k| f.psi.values[k] * f.source.values[k]) * h2;
    let potential = state.mu() * T::lit(0.5) * (psi_rho + f.mass * f.potential_offset());
    let kinetic = kinetic.to_f64_lossy();
    let potential = potential.to_f64_lossy();
    HamiltonianParts {
        kinetic,
        potential,
        total: kinetic + potential,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DerivativeBounds {
    /// `sup |e^-t (d_x - d_v) f|` over particles and axes.
    pub sup_sf: f64,
    /// `sup |e^t (d_x + d_v) f|`.
    pub sup_uf: f64,
    /// `sup_uf / (1 + t)`.
    pub uf_ratio: f64,
    /// Particles excluded because `|det J| < SINGULAR_DET`.
    pub flagged: usize,
}

/// `(S f, U f)` for one particle: the initial gradient pulled back through the
/// rescaled tangent, `K^-T (d_s0 f0, d_u0 f0)`. `None` for a singular tangent.
pub fn pulled_back_derivatives<T: Real>(
    p: &crate::ensemble::Particle<T>,
) -> Option<([T; 2], [T; 2])> {
    if !(det4(&p.tangent).abs().to_f64_lossy() >= SINGULAR_DET) {
        return None;
    }
    let g = p.f0_grad;
    // d_s = d_x - d_v, d_u = d_x + d_v
    let g0 = [g[0] - g[2], g[1] - g[3], g[0] + g[2], g[1] + g[3]];
    let y = solve_transpose4(&p.tangent, g0)?;
    Some(([y[0], y[1]], [y[2], y[3]]))
}

pub fn derivative_bounds<T: Real>(state: &SimState<T>) -> DerivativeBounds {
    let parts = &state.ensemble.particles;
    let res: Vec<Option<(f64, f64)>> = parts
        .par_iter()
        .map(|p| {
            pulled_back_derivatives(p).map(|(sf, uf)| {
                (
                    sf[0].abs().max(sf[1].abs()).to_f64_lossy(),
                    uf[0].abs().max(uf[1].abs()).to_f64_lossy(),
                )
            })
        })
        .collect();
    let mut out = DerivativeBounds {
        sup_sf: 0.0,
        sup_uf: 0.0,
        uf_ratio: 0.0,
        flagged: 0,
    };
    for r in res {
        match r {
            Some((a, b)) => {
                out.sup_sf = out.sup_sf.max(a);
                out.sup_uf = out.sup_uf.max(b);
            }
            None => out.flagged += 1,
        }
    }
    out.uf_ratio = out.sup_uf / (1.0 + state.t.to_f64_lossy());
    out
}

/// Closed-form test functions of `(s, u)` for weak functionals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TestFunction {
    /// `exp(-|s|^2/2a^2 - |u - c|^2/2b^2)`, cut off at four widths.
    GaussianBump {
        s_width: f64,
        u_width: f64,
        u_center: [f64; 2],
    },
    /// `cos^2(pi |s| / 2a) cos^2(pi |u - c| / 2b)` inside the radii, zero outside.
    CosineBump {
        s_radius: f64,
        u_radius: f64,
        u_center: [f64; 2],
    },
}

const GAUSS_CUTOFF: f64 = 4.0;

impl TestFunction {
    pub fn name(&self) -> &'static str {
        match self {
            TestFunction::GaussianBump { .. } => "gaussian_bump",
            TestFunction::CosineBump { .. } => "cosine_bump",
        }
    }

    /// Registered functions: wide in `u` so that enough particles contribute at
    /// late times, narrow in `s`.
    pub fn registry() -> Vec<TestFunction> {
        vec![
            TestFunction::GaussianBump {
                s_width: 1.0,
                u_width: 300.0,
                u_center: [0.0, 0.0],
            },
            TestFunction::CosineBump {
                s_radius: 2.0,
                u_radius: 1000.0,
                u_center: [0.0, 0.0],
            },
        ]
    }

    pub fn eval(&self, s: Vec2<f64>, u: Vec2<f64>) -> f64 {
        match *self {
            TestFunction::GaussianBump {
                s_width,
                u_width,
                u_center,
            } => {
                let rs = s[0].hypot(s[1]) / s_width;
                let ru = (u[0] - u_center[0]).hypot(u[1] - u_center[1]) / u_width;
                if rs > GAUSS_CUTOFF || ru > GAUSS_CUTOFF {
                    0.0
                } else {
                    (-0.5 * (rs * rs + ru * ru)).exp()
                }
            }
            TestFunction::CosineBump {
                s_radius,
                u_radius,
                u_center,
            } => {
                let rs = s[0].hypot(s[1]) / s_radius;
                let ru = (u[0] - u_center[0]).hypot(u[1] - u_center[1]) / u_radius;
                if rs >= 1.0 || ru >= 1.0 {
                    0.0
                } else {
                    let a = (std::f64::consts::FRAC_PI_2 * rs).cos();
                    let b = (std::f64::consts::FRAC_PI_2 * ru).cos();
                    a * a * b * b
                }
            }
        }
    }

    /// `int test_fn(0, u) du`
    pub fn u_integral(&self) -> f64 {
        let pi = std::f64::consts::PI;
        match *self {
            TestFunction::GaussianBump { u_width, .. } => {
                2.0 * pi * u_width * u_width * (1.0 - (-0.5 * GAUSS_CUTOFF * GAUSS_CUTOFF).exp())
            }
            TestFunction::CosineBump { u_radius, .. } => {
                2.0 * pi * u_radius * u_radius * (0.25 - 1.0 / (pi * pi))
            }
        }
    }

    pub fn with_center(&self, c: Vec2<f64>) -> TestFunction {
        let mut out = *self;
        match &mut out {
            TestFunction::GaussianBump { u_center, .. }
            | TestFunction::CosineBump { u_center, .. } => *u_center = c,
        }
        out
    }
}

/// `e^{2t} sum_p (w_p / 4) psi(s_p, u_p)` for an arbitrary test function.
pub fn weak_functional_with<T, F>(state: &SimState<T>, psi: F) -> f64
where
    T: Real,
    F: Fn(Vec2<f64>, Vec2<f64>) -> f64 + Sync + Send,
{
    let parts = &state.ensemble.particles;
    let sum = par_sum(parts.len(), |i| {
        let p = &parts[i];
        let s = [p.s[0].to_f64_lossy(), p.s[1].to_f64_lossy()];
        let u = [p.u[0].to_f64_lossy(), p.u[1].to_f64_lossy()];
        p.w.to_f64_lossy() * psi(s, u)
    });
    let t = state.t.to_f64_lossy();
    (2.0 * t).exp() * sum / MEASURE_JACOBIAN
}

pub fn weak_functional<T: Real>(state: &SimState<T>, test_fn: &TestFunction) -> f64 {
    weak_functional_with(state, |s, u| test_fn.eval(s, u))
}

/// Weak functional against `psi(s, u - e^t ubar)`.
pub fn weak_functional_shifted<T: Real>(
    state: &SimState<T>,
    test_fn: &TestFunction,
    ubar: Vec2<f64>,
) -> f64 {
    let et = state.t.to_f64_lossy().exp();
    let c = match test_fn {
        TestFunction::GaussianBump { u_center, .. } | TestFunction::CosineBump { u_center, .. } => {
            *u_center
        }
    };
    weak_functional(
        state,
        &test_fn.with_center([c[0] + et * ubar[0], c[1] + et * ubar[1]]),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum FitModel {
    /// `log v = c + k log(1+t) - lambda t`
    #[default]
    Full,
    /// `k = 0`
    ExpOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub k: f64,
    pub lambda: f64,
    pub log_c: f64,
    /// RMS residual in `log v`.
    pub residual: f64,
    pub used: usize,
    /// Times of samples dropped for non-positive values.
    pub excluded: Vec<f64>,
}

/// Least-squares fit of `values ~ C (1+t)^k e^{-lambda t}` in log space.
pub fn fit_rate(times: &[f64], values: &[f64], model: FitModel) -> Result<FitReport> {
    let mut excluded = Vec::new();
    let mut rows = Vec::new();
    for (&t, &v) in times.iter().zip(values) {
        if v > 0.0 && v.is_finite() {
            rows.push((t, v.ln()));
        } else {
            excluded.push(t);
        }
    }
    if rows.len() < 5 {
        return Err(Error::InsufficientSamples {
            got: rows.len(),
            need: 5,
        });
    }
    let cols = match model {
        FitModel::Full => 3,
        FitModel::ExpOnly => 2,
    };
    let a = DMatrix::from_fn(rows.len(), cols, |r, c| {
        let t = rows[r].0;
        match c {
            0 => 1.0,
            1 => -t,
            _ => (1.0 + t).ln(),
        }
    });
    let b = DVector::from_iterator(rows.len(), rows.iter().map(|r| r.1));
    let x = a
        .clone()
        .svd(true, true)
        .solve(&b, 1e-14)
        .map_err(|e| Error::InvalidArgument(format!("rate fit failed: {e}")))?;
    let res = &a * &x - &b;
    Ok(FitReport {
        log_c: x[0],
        lambda: x[1],
        k: if cols == 3 { x[2] } else { 0.0 },
        residual: (res.norm_squared() / rows.len() as f64).sqrt(),
        used: rows.len(),
        excluded,
    })
}

/// `sup_p |e^t z|` style helper: maximum of `f` over particles.
pub fn particle_sup<T: Real, F>(state: &SimState<T>, f: F) -> f64
where
    F: Fn(&crate::ensemble::Particle<T>) -> f64 + Sync + Send,
{
    let parts = &state.ensemble.particles;
    par_max(parts.len(), 0.0, |i| f(&parts[i]))
}

/// Time series of diagnostics sharing one time axis.
#[derive(Debug, Clone, Default)]
pub struct DiagnosticsSeries {
    pub times: Vec<f64>,
    pub sup_e2t_rho: Vec<f64>,
    pub hamiltonian: Vec<HamiltonianParts>,
    pub mass: Vec<f64>,
    pub q_profiles: Vec<StableAverage>,
    pub density_profiles: Vec<DensityProfile>,
    pub force_profiles: Vec<Vec<Option<Vec2<f64>>>>,
    pub deriv: Vec<DerivativeBounds>,
    /// One row per time, one column per registry test function.
    pub weak_functionals: Vec<Vec<f64>>,
    pub test_functions: Vec<TestFunction>,
    pub profile_grid: Option<GridSpec<f64>>,
    pub q_grid: Option<GridSpec<f64>>,
}

impl DiagnosticsSeries {
    pub fn new(sigma_u: f64) -> Self {
        Self {
            test_functions: TestFunction::registry(),
            profile_grid: Some(profile_grid(sigma_u)),
            q_grid: Some(q_grid(sigma_u, Q_BINS)),
            ..Self::default()
        }
    }

    /// Append every diagnostic for the current state (field must be current).
    pub fn record<T: Real>(&mut self, state: &SimState<T>) {
        let pg = self.profile_grid.expect("profile grid");
        let qg = self.q_grid.expect("stable-average grid");
        let dp = density_profile(state, &pg);
        self.times.push(state.time_f64());
        self.sup_e2t_rho.push(dp.sup_e2t_rho);
        self.density_profiles.push(dp);
        self.hamiltonian.push(hamiltonian(state));
        self.mass.push(state.total_weight().to_f64_lossy());
        self.q_profiles
            .push(stable_average(state, &qg, Binning::Cic));
        self.force_profiles.push(force_profile(state, &pg));
        self.deriv.push(derivative_bounds(state));
        let row = self
            .test_functions
            .iter()
            .map(|f| weak_functional(state, f))
            .collect();
        self.weak_functionals.push(row);
    }

    /// `||Q(t_i) - Q(t_last)||_inf` for every recorded time.
    pub fn q_distance_to_last(&self) -> Vec<f64> {
        match self.q_profiles.last() {
            None => Vec::new(),
            Some(last) => self
                .q_profiles
                .iter()
                .map(|q| sup_difference(&q.q, &last.q))
                .collect(),
        }
    }

    /// Fits of the stable-average convergence, using samples with
    /// `FIT_MIN_TIME <= t < t_last`.
    pub fn fitted_q_rate(&self, model: FitModel) -> Result<FitReport> {
        let d = self.q_distance_to_last();
        let n = self.times.len();
        let (ts, vs): (Vec<f64>, Vec<f64>) = (0..n.saturating_sub(1))
            .filter(|&i| self.times[i] >= FIT_MIN_TIME)
            .map(|i| (self.times[i], d[i]))
            .unzip();
        fit_rate(&ts, &vs, model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_bump_u_integral_matches_quadrature() {
        let f = TestFunction::CosineBump {
            s_radius: 1.0,
            u_radius: 3.0,
            u_center: [0.0, 0.0],
        };
        let k = 4000;
        let dr = 3.0 / k as f64;
        let q: f64 = (0..k)
            .map(|i| {
                let r = (i as f64 + 0.5) * dr;
                f.eval([0.0, 0.0], [r, 0.0]) * std::f64::consts::TAU * r * dr
            })
            .sum();
        assert!((q - f.u_integral()).abs() < 1e-6 * q);
    }

    #[test]
    fn ngp_bins_are_node_centred() {
        let g = GridSpec::new([0.0, 0.0], 1.0, 4);
        let sa = bin_points(&g, &[([1.4, 2.6], 1.0), ([9.0, 0.0], 2.0)], Binning::Ngp);
        assert_eq!(sa.q.at(1, 3), 1.0);
        assert_eq!(sa.outside_mass, 2.0 * MEASURE_JACOBIAN);
    }
}
