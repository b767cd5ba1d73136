//! Scattering data extracted from a late-time state: the limit `Q_inf` of the
//! stable averages, the asymptotic potential, modified scattering coordinates
//! and the reconstructed scattering state `fbar_inf`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{stable_average, sup_difference, Binning, StableAverage};
use crate::ensemble::Particle;
use crate::error::{Error, Result};
use crate::grid::{GridSpec, ScalarField2D, VectorField2D};
use crate::integrator::SimState;
use crate::phase::MEASURE_JACOBIAN;
use crate::poisson::{gradient, solve_sharpened, FreeSpaceSolver};
use crate::scalar::{Real, Vec2};

/// Default gap between the two extraction times.
pub const EXTRACTION_LAG: f64 = 2.0;
/// Earliest admissible extraction time.
pub const MIN_EXTRACTION_TIME: f64 = 2.0;
/// Cells per axis of the 4D `fbar_inf` grid.
pub const F_INF_CELLS: usize = 12;
/// Half-width of the `fbar_inf` grid in units of the initial widths.
pub const F_INF_HALF_WIDTH: f64 = 5.0;
/// Nodes per axis of the `u` marginal of `fbar_inf`.
pub const MARGINAL_NODES: usize = 128;
/// Smallest resolved fraction accepted by the reconstruction.
pub const MIN_RESOLVED: f64 = 0.9;

/// Radius of the local fit behind the Dirac prediction, in units of `sigma_u`.
pub const DIRAC_FIT_RADIUS: f64 = 0.5;

const TIME_TOL: f64 = 1e-9;

/// The field lattice expressed in `u~ = e^-t x`.
pub fn asymptotic_grid<T: Real>(state: &SimState<T>) -> GridSpec<f64> {
    let spec = state.field.spec();
    let k = (state.field.log_scale - state.t).to_f64_lossy().exp();
    GridSpec::new(
        [spec.origin[0].to_f64_lossy(), spec.origin[1].to_f64_lossy()],
        spec.h.to_f64_lossy(),
        spec.n,
    )
    .scaled(k)
}

/// Stable-average snapshots on one fixed `u~` grid, used to estimate `Q_inf`.
#[derive(Debug, Clone, Default)]
pub struct StableAverageRecorder {
    pub grid: Option<GridSpec<f64>>,
    pub snapshots: Vec<(f64, StableAverage)>,
}

impl StableAverageRecorder {
    /// Bin the current state; the grid is fixed by the first call.
    pub fn record<T: Real>(&mut self, state: &SimState<T>) {
        let grid = *self.grid.get_or_insert_with(|| asymptotic_grid(state));
        self.snapshots
            .push((state.time_f64(), stable_average(state, &grid, Binning::Cic)));
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QInfEstimate {
    pub q_inf: ScalarField2D<f64>,
    pub t1: f64,
    pub t2: f64,
    /// `||Q(t2) - Q(t1)||_inf`
    pub error: f64,
    /// Successive sup-differences of the snapshots in `[t1, t2]`.
    pub successive: Vec<f64>,
    pub warning: Option<String>,
}

/// `Q_inf ~ Q(t2)` with the error estimate `||Q(t2) - Q(t1)||_inf`.
pub fn estimate_q_inf(
    snapshots: &[(f64, StableAverage)],
    t1: f64,
    t2: f64,
) -> Result<QInfEstimate> {
    if !(t1 >= MIN_EXTRACTION_TIME && t2 > t1) {
        return Err(Error::InvalidArgument(format!(
            "extraction times need t2 > t1 >= {MIN_EXTRACTION_TIME}, got ({t1}, {t2})"
        )));
    }
    let window: Vec<&(f64, StableAverage)> = snapshots
        .iter()
        .filter(|(t, _)| *t >= t1 - TIME_TOL && *t <= t2 + TIME_TOL)
        .collect();
    let find = |t: f64| {
        window
            .iter()
            .find(|(s, _)| (s - t).abs() <= TIME_TOL)
            .map(|(_, q)| q)
            .ok_or_else(|| Error::InvalidArgument(format!("no stable average stored at t = {t}")))
    };
    let (q1, q2) = (find(t1)?, find(t2)?);
    for (_, q) in &window {
        if q.q.spec != q2.q.spec {
            return Err(Error::GridMismatch(
                "stable averages on different grids".into(),
            ));
        }
    }
    let successive: Vec<f64> = window
        .windows(2)
        .map(|w| sup_difference(&w[1].1.q, &w[0].1.q))
        .collect();
    let warning =
        (successive.len() >= 2 && successive.windows(2).any(|d| d[1] >= d[0])).then(|| {
            "successive stable-average differences are not decreasing; resolution floor reached"
                .to_string()
        });
    Ok(QInfEstimate {
        q_inf: q2.q.clone(),
        t1,
        t2,
        error: sup_difference(&q2.q, &q1.q),
        successive,
        warning,
    })
}

/// Solution of `Lap phi_asymp = MEASURE_JACOBIAN * q_inf` on the `u~` grid.
#[derive(Debug, Clone, PartialEq)]
pub struct AsymptoticField {
    pub q_inf: ScalarField2D<f64>,
    /// Sharpened source actually solved.
    pub source: ScalarField2D<f64>,
    pub phi: ScalarField2D<f64>,
    pub grad: VectorField2D<f64>,
}

impl AsymptoticField {
    pub fn spec(&self) -> &GridSpec<f64> {
        &self.q_inf.spec
    }

    /// `grad phi_asymp(u~)`, `None` outside the grid.
    pub fn grad_at(&self, u: Vec2<f64>) -> Option<Vec2<f64>> {
        self.grad.sample(u)
    }

    /// `int phi_asymp Lap phi_asymp du~`, the renormalized field energy.
    pub fn energy(&self) -> f64 {
        let h2 = self.spec().h * self.spec().h;
        self.phi
            .values
            .iter()
            .zip(&self.source.values)
            .map(|(a, b)| a * b)
            .sum::<f64>()
            * h2
    }
}

/// Same sharpened solver path as the dynamics, applied to `q_inf` on its grid.
pub fn solve_asymptotic_poisson(q_inf: &ScalarField2D<f64>) -> Result<AsymptoticField> {
    q_inf.check_finite("q_inf")?;
    let mut rho = q_inf.clone();
    rho.values.iter_mut().for_each(|v| *v *= MEASURE_JACOBIAN);
    let solver = FreeSpaceSolver::<f64>::new(q_inf.spec.n);
    let sol = solve_sharpened(&solver, &rho)?;
    let grad = gradient(&sol.psi_force);
    grad.check_finite("asymptotic gradient")?;
    Ok(AsymptoticField {
        q_inf: q_inf.clone(),
        source: sol.source,
        phi: sol.psi,
        grad,
    })
}

/// `sup_u~ |e^t grad phi(t, e^t u~) - grad phi_asymp(u~)|` over the nodes of
/// `grid` where both are defined.
pub fn force_profile_distance<T: Real>(
    state: &SimState<T>,
    field: &AsymptoticField,
    grid: &GridSpec<f64>,
) -> f64 {
    let profile = crate::diagnostics::force_profile(state, grid);
    profile
        .par_iter()
        .enumerate()
        .map(
            |(k, e)| match (e, field.grad_at(grid.node(k % grid.n, k / grid.n))) {
                (Some(a), Some(b)) => (a[0] - b[0]).hypot(a[1] - b[1]),
                _ => 0.0,
            },
        )
        .reduce(|| 0.0, f64::max)
}

/// Forward modified characteristic: the state `(s, u)` at time `t` of the
/// particle with scattering data `(s_inf, u_inf)`.
pub fn modified_characteristic(
    t: f64,
    mu: f64,
    s_inf: Vec2<f64>,
    u_inf: Vec2<f64>,
    grad: Vec2<f64>,
) -> (Vec2<f64>, Vec2<f64>) {
    let (et, emt) = (t.exp(), (-t).exp());
    let c = 0.5 * mu * t;
    (
        [
            emt * (s_inf[0] + c * grad[0]),
            emt * (s_inf[1] + c * grad[1]),
        ],
        [et * u_inf[0], et * u_inf[1]],
    )
}

/// Inverse of [`modified_characteristic`]; `grad` is evaluated at `u_inf`.
pub fn invert_modified<F>(
    t: f64,
    mu: f64,
    s: Vec2<f64>,
    u: Vec2<f64>,
    grad: F,
) -> Option<(Vec2<f64>, Vec2<f64>)>
where
    F: Fn(Vec2<f64>) -> Option<Vec2<f64>>,
{
    let (et, emt) = (t.exp(), (-t).exp());
    let u_inf = [emt * u[0], emt * u[1]];
    let g = grad(u_inf)?;
    let c = 0.5 * mu * t;
    Some(([et * s[0] - c * g[0], et * s[1] - c * g[1]], u_inf))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScatteringCoord {
    pub s_inf: Vec2<f64>,
    pub u_inf: Vec2<f64>,
    /// `f0` carried along the characteristic.
    pub f_val: f64,
    pub w: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScatteringCoords {
    pub t: f64,
    pub corrected: bool,
    /// `None` for particles whose `u_inf` falls outside the asymptotic grid.
    pub coords: Vec<Option<ScatteringCoord>>,
    pub unresolved: usize,
}

impl ScatteringCoords {
    pub fn resolved_fraction(&self) -> f64 {
        if self.coords.is_empty() {
            return 1.0;
        }
        1.0 - self.unresolved as f64 / self.coords.len() as f64
    }

    pub fn resolved(&self) -> impl Iterator<Item = &ScatteringCoord> {
        self.coords.iter().flatten()
    }
}

/// Per-particle scattering coordinates `u_inf = e^-t u`,
/// `s_inf = e^t s - (mu t / 2) grad phi_asymp(u_inf)`. With `correction` off
/// the gradient term is dropped (the unmodified control).
pub fn scattering_coords<T: Real>(
    state: &SimState<T>,
    field: &AsymptoticField,
    correction: bool,
) -> ScatteringCoords {
    // without coupling the characteristics are unmodified
    let mu = if state.params.coupling {
        state.mu().to_f64_lossy()
    } else {
        0.0
    };
    scattering_coords_of(
        state.t.to_f64_lossy(),
        mu,
        &state.ensemble.particles,
        field,
        correction,
    )
}

/// [`scattering_coords`] for particles stored at time `t`.
pub fn scattering_coords_of<T: Real>(
    t: f64,
    mu: f64,
    particles: &[Particle<T>],
    field: &AsymptoticField,
    correction: bool,
) -> ScatteringCoords {
    let coords: Vec<Option<ScatteringCoord>> = particles
        .par_iter()
        .map(|p| {
            let s = [p.s[0].to_f64_lossy(), p.s[1].to_f64_lossy()];
            let u = [p.u[0].to_f64_lossy(), p.u[1].to_f64_lossy()];
            let (s_inf, u_inf) = invert_modified(t, mu, s, u, |ui| {
                let g = field.grad_at(ui)?;
                Some(if correction { g } else { [0.0, 0.0] })
            })?;
            Some(ScatteringCoord {
                s_inf,
                u_inf,
                f_val: p.f0_val.to_f64_lossy(),
                w: p.w.to_f64_lossy(),
            })
        })
        .collect();
    let unresolved = coords.iter().filter(|c| c.is_none()).count();
    ScatteringCoords {
        t,
        corrected: correction,
        coords,
        unresolved,
    }
}

/// `max_p |(s_inf, u_inf)(a) - (s_inf, u_inf)(b)|` over particles resolved in both.
pub fn coord_sup_difference(a: &ScatteringCoords, b: &ScatteringCoords) -> f64 {
    a.coords
        .par_iter()
        .zip(&b.coords)
        .map(|(x, y)| match (x, y) {
            (Some(x), Some(y)) => {
                let d = [
                    x.s_inf[0] - y.s_inf[0],
                    x.s_inf[1] - y.s_inf[1],
                    x.u_inf[0] - y.u_inf[0],
                    x.u_inf[1] - y.u_inf[1],
                ];
                d.iter().map(|v| v * v).sum::<f64>().sqrt()
            }
            _ => 0.0,
        })
        .reduce(|| 0.0, f64::max)
}

/// Largest least-squares slope of `s_inf` against `t` over particles resolved
/// at every time and both axes.
pub fn max_s_slope(series: &[ScatteringCoords]) -> Result<f64> {
    if series.len() < 2 {
        return Err(Error::InsufficientSamples {
            got: series.len(),
            need: 2,
        });
    }
    let n = series[0].coords.len();
    if series.iter().any(|s| s.coords.len() != n) {
        return Err(Error::InvalidArgument(
            "coordinate sets of different sizes".into(),
        ));
    }
    let ts: Vec<f64> = series.iter().map(|s| s.t).collect();
    let tm = ts.iter().sum::<f64>() / ts.len() as f64;
    let var: f64 = ts.iter().map(|t| (t - tm).powi(2)).sum();
    let slope = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut best = 0.0f64;
            for k in 0..2 {
                let mut cov = 0.0;
                for (s, &t) in series.iter().zip(&ts) {
                    match &s.coords[i] {
                        Some(c) => cov += (t - tm) * c.s_inf[k],
                        None => return 0.0,
                    }
                }
                best = best.max((cov / var).abs());
            }
            best
        })
        .reduce(|| 0.0, f64::max);
    Ok(slope)
}

/// Axis-aligned grid of `n` nodes per axis in `(s1, s2, u1, u2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid4 {
    pub origin: [f64; 4],
    pub h: [f64; 4],
    pub n: usize,
}

impl Grid4 {
    pub fn centered(half_s: f64, half_u: f64, cells: usize) -> Self {
        let hs = 2.0 * half_s / cells as f64;
        let hu = 2.0 * half_u / cells as f64;
        Self {
            origin: [-half_s, -half_s, -half_u, -half_u],
            h: [hs, hs, hu, hu],
            n: cells + 1,
        }
    }

    pub fn len(&self) -> usize {
        self.n.pow(4)
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn index(&self, i: [usize; 4]) -> usize {
        ((i[3] * self.n + i[2]) * self.n + i[1]) * self.n + i[0]
    }

    pub fn node(&self, k: usize) -> [f64; 4] {
        let mut r = k;
        let mut out = [0.0; 4];
        for a in 0..4 {
            out[a] = self.origin[a] + (r % self.n) as f64 * self.h[a];
            r /= self.n;
        }
        out
    }

    pub fn cell_volume(&self) -> f64 {
        self.h.iter().product()
    }

    /// Multilinear stencil: 16 `(index, weight)` pairs, `None` outside.
    pub fn stencil(&self, z: [f64; 4]) -> Option<[(usize, f64); 16]> {
        let mut base = [0usize; 4];
        let mut frac = [0.0; 4];
        for a in 0..4 {
            let f = (z[a] - self.origin[a]) / self.h[a];
            if !(f >= 0.0 && f < (self.n - 1) as f64) {
                return None;
            }
            base[a] = f.floor() as usize;
            frac[a] = f - base[a] as f64;
        }
        let mut out = [(0, 0.0); 16];
        for (c, slot) in out.iter_mut().enumerate() {
            let mut idx = [0usize; 4];
            let mut w = 1.0;
            for a in 0..4 {
                let bit = (c >> a) & 1;
                idx[a] = base[a] + bit;
                w *= if bit == 1 { frac[a] } else { 1.0 - frac[a] };
            }
            *slot = (self.index(idx), w);
        }
        Some(out)
    }
}

/// Reconstructed scattering state.
#[derive(Debug, Clone, PartialEq)]
pub struct FInf {
    pub grid: Grid4,
    /// Multilinear deposit of `w / MEASURE_JACOBIAN` divided by the cell volume.
    pub density: Vec<f64>,
    /// Volume-weighted average of the carried `f0` values; `None` where no
    /// particle contributes.
    pub value_avg: Vec<Option<f64>>,
    /// Sum of stencil weights per node (effective particle count).
    pub counts: Vec<f64>,
    /// `int fbar_inf(s, u) ds` on the `u` grid.
    pub marginal: ScalarField2D<f64>,
    /// Weight deposited inside the 4D grid, `(x, v)` measure.
    pub mass: f64,
    /// Weight of resolved particles falling outside the 4D grid.
    pub outside_mass: f64,
    pub resolved_fraction: f64,
}

impl FInf {
    /// `sqrt(sum (density - value)^2 / sum value^2)` over nodes whose
    /// effective count is at least `min_count`.
    pub fn estimator_disagreement(&self, min_count: f64) -> f64 {
        let (mut num, mut den) = (0.0, 0.0);
        for k in 0..self.density.len() {
            if self.counts[k] < min_count {
                continue;
            }
            if let Some(v) = self.value_avg[k] {
                num += (self.density[k] - v).powi(2);
                den += v * v;
            }
        }
        if den == 0.0 {
            0.0
        } else {
            (num / den).sqrt()
        }
    }

    /// `int fbar_inf(s, u) ds` at `u`, `None` outside the marginal grid.
    pub fn marginal_at(&self, u: Vec2<f64>) -> Option<f64> {
        self.marginal.sample(u)
    }

    /// `int fbar_inf(s, u) ds` at `u` from a least-squares quadratic fit of the
    /// marginal over the nodes within `radius`; smooths the binning noise of
    /// single nodes. `None` when fewer than 12 nodes are available.
    pub fn marginal_fit_at(&self, u: Vec2<f64>, radius: f64) -> Option<f64> {
        let spec = &self.marginal.spec;
        let mut rows = Vec::new();
        for j in 0..spec.n {
            for i in 0..spec.n {
                let p = spec.node(i, j);
                let (dx, dy) = ((p[0] - u[0]) / radius, (p[1] - u[1]) / radius);
                if dx * dx + dy * dy <= 1.0 {
                    rows.push((
                        [1.0, dx, dy, dx * dx, dx * dy, dy * dy],
                        self.marginal.at(i, j),
                    ));
                }
            }
        }
        if rows.len() < 12 {
            return None;
        }
        let a = DMatrix::from_fn(rows.len(), 6, |r, c| rows[r].0[c]);
        let b = DVector::from_iterator(rows.len(), rows.iter().map(|r| r.1));
        let x = a.svd(true, true).solve(&b, 1e-12).ok()?;
        Some(x[0])
    }

    /// `int fbar_inf ds` on the `u` nodes of the 4D grid.
    pub fn s_marginal(&self) -> ScalarField2D<f64> {
        let g = &self.grid;
        let n = g.n;
        let spec = GridSpec::new([g.origin[2], g.origin[3]], g.h[2], n);
        let mut out = ScalarField2D::zeros(spec);
        let area = g.h[0] * g.h[1];
        for (k, d) in self.density.iter().enumerate() {
            out.values[k / (n * n)] += d * area;
        }
        out
    }

    /// `-8 int (u . s) fbar_inf ds du`, i.e. `(1/2) int (|v|^2 - |x|^2) f_inf dx dv`.
    pub fn kinetic_energy(&self) -> f64 {
        let vol = self.grid.cell_volume();
        let sum: f64 = (0..self.density.len())
            .into_par_iter()
            .map(|k| {
                let z = self.grid.node(k);
                self.density[k] * (z[0] * z[2] + z[1] * z[3])
            })
            .sum();
        -2.0 * MEASURE_JACOBIAN * sum * vol
    }
}

/// Deposit the resolved scattering coordinates onto a 4D `(s, u)` grid and a
/// 2D `u` marginal grid.
pub fn reconstruct_f_inf(coords: &ScatteringCoords, sigma_s: f64, sigma_u: f64) -> Result<FInf> {
    let resolved = coords.resolved_fraction();
    if resolved < MIN_RESOLVED {
        return Err(Error::Unresolved {
            resolved: 100.0 * resolved,
        });
    }
    let grid = Grid4::centered(
        F_INF_HALF_WIDTH * sigma_s,
        F_INF_HALF_WIDTH * sigma_u,
        F_INF_CELLS,
    );
    let len = grid.len();
    let pts: Vec<&ScatteringCoord> = coords.resolved().collect();

    // density, volume-weighted f, volume, count
    let chunk = 16384;
    let partial: Vec<(Vec<[f64; 4]>, f64)> = pts
        .par_chunks(chunk)
        .map(|ps| {
            let mut acc = vec![[0.0; 4]; len];
            let mut outside = 0.0;
            for c in ps {
                let z = [c.s_inf[0], c.s_inf[1], c.u_inf[0], c.u_inf[1]];
                let vol = if c.f_val > 0.0 { c.w / c.f_val } else { 0.0 };
                match grid.stencil(z) {
                    Some(st) => {
                        for (k, wt) in st {
                            let a = &mut acc[k];
                            a[0] += wt * c.w;
                            a[1] += wt * vol * c.f_val;
                            a[2] += wt * vol;
                            a[3] += wt;
                        }
                    }
                    None => outside += c.w,
                }
            }
            (acc, outside)
        })
        .collect();
    let mut acc = vec![[0.0; 4]; len];
    let mut outside_mass = 0.0;
    for (p, o) in partial {
        for (a, b) in acc.iter_mut().zip(p) {
            for q in 0..4 {
                a[q] += b[q];
            }
        }
        outside_mass += o;
    }
    let inv_vol = 1.0 / (MEASURE_JACOBIAN * grid.cell_volume());
    let density: Vec<f64> = acc.iter().map(|a| a[0] * inv_vol).collect();
    let value_avg = acc
        .iter()
        .map(|a| (a[2] > 0.0).then(|| a[1] / a[2]))
        .collect();
    let counts = acc.iter().map(|a| a[3]).collect();
    let mass = acc.iter().map(|a| a[0]).sum();

    let mgrid = GridSpec::centered(F_INF_HALF_WIDTH * sigma_u, MARGINAL_NODES);
    let points: Vec<(Vec2<f64>, f64)> = pts
        .iter()
        .map(|c| (c.u_inf, c.w / MEASURE_JACOBIAN))
        .collect();
    let marginal = crate::diagnostics::bin_points(&mgrid, &points, Binning::Cic).q;

    Ok(FInf {
        grid,
        density,
        value_avg,
        counts,
        marginal,
        mass,
        outside_mass,
        resolved_fraction: resolved,
    })
}

/// Limit of `weak_functional` predicted by concentration on `{s = 0}`:
/// `(int fbar_inf(s, ubar) ds) * int test_fn(0, u) du`.
pub fn dirac_prediction(
    f_inf: &FInf,
    test_fn: &crate::diagnostics::TestFunction,
    ubar: Vec2<f64>,
    sigma_u: f64,
) -> Option<f64> {
    Some(f_inf.marginal_fit_at(ubar, DIRAC_FIT_RADIUS * sigma_u)? * test_fn.u_integral())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConservationReport {
    pub mass_inf: f64,
    pub mass_0: f64,
    /// `|mass_inf - mass_0| / mass_0`
    pub mass_rel_err: f64,
    pub kinetic_inf: f64,
    pub potential_inf: f64,
    pub hamiltonian_inf: f64,
    pub hamiltonian_0: f64,
    /// `|H_inf - H_0| / max(|H_0|, eps^2)`
    pub hamiltonian_rel_err: f64,
}

/// Mass and energy of the scattering state against the initial values.
///
/// The potential term is the renormalized `(mu/2) int phi_asymp Lap phi_asymp`,
/// matching the finite form used for the energy of the flow.
pub fn asymptotic_conservation_check(
    f_inf: &FInf,
    field: &AsymptoticField,
    mu: f64,
    mass_0: f64,
    hamiltonian_0: f64,
    epsilon: f64,
) -> ConservationReport {
    let kinetic_inf = f_inf.kinetic_energy();
    let potential_inf = 0.5 * mu * field.energy();
    let hamiltonian_inf = kinetic_inf + potential_inf;
    ConservationReport {
        mass_inf: f_inf.mass,
        mass_0,
        mass_rel_err: (f_inf.mass - mass_0).abs() / mass_0.abs().max(f64::MIN_POSITIVE),
        kinetic_inf,
        potential_inf,
        hamiltonian_inf,
        hamiltonian_0,
        hamiltonian_rel_err: (hamiltonian_inf - hamiltonian_0).abs()
            / hamiltonian_0.abs().max(epsilon * epsilon),
    }
}

/// Options for [`ScatteringState::extract`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExtractOptions {
    pub t1: f64,
    pub t2: f64,
    pub correction: bool,
    /// Re-solve once with `q_inf` rebuilt from the resolved `u_inf`.
    pub picard: bool,
}

/// Everything extracted at one late time.
#[derive(Debug, Clone)]
pub struct ScatteringState {
    pub t_extracted: f64,
    pub q: QInfEstimate,
    pub field: AsymptoticField,
    pub coords: ScatteringCoords,
    pub f_inf: FInf,
    /// Sup-change of `grad phi_asymp` under the Picard refinement.
    pub picard_change: Option<f64>,
}

impl ScatteringState {
    /// Extract from `state` (at `opts.t2`) and stable averages recorded on a
    /// common grid.
    pub fn extract<T: Real>(
        state: &SimState<T>,
        snapshots: &[(f64, StableAverage)],
        opts: ExtractOptions,
        sigma_s: f64,
        sigma_u: f64,
    ) -> Result<Self> {
        let t = state.time_f64();
        if (t - opts.t2).abs() > TIME_TOL {
            return Err(Error::InvalidArgument(format!(
                "state is at t = {t}, extraction at t2 = {}",
                opts.t2
            )));
        }
        let q = estimate_q_inf(snapshots, opts.t1, opts.t2)?;
        let mut field = solve_asymptotic_poisson(&q.q_inf)?;
        let mut coords = scattering_coords(state, &field, opts.correction);
        let mut picard_change = None;
        if opts.picard {
            let pts: Vec<(Vec2<f64>, f64)> = coords
                .resolved()
                .map(|c| (c.u_inf, c.w / MEASURE_JACOBIAN))
                .collect();
            let refined = crate::diagnostics::bin_points(field.spec(), &pts, Binning::Cic).q;
            let next = solve_asymptotic_poisson(&refined)?;
            let change = next
                .grad
                .values
                .iter()
                .zip(&field.grad.values)
                .fold(0.0f64, |m, (a, b)| m.max((a[0] - b[0]).hypot(a[1] - b[1])));
            picard_change = Some(change);
            field = next;
            coords = scattering_coords(state, &field, opts.correction);
        }
        let f_inf = reconstruct_f_inf(&coords, sigma_s, sigma_u)?;
        Ok(Self {
            t_extracted: t,
            q,
            field,
            coords,
            f_inf,
            picard_change,
        })
    }
}
