//! Free-space Poisson solver for `Δφ = ρ` on node grids.

use std::sync::Arc;

use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::grid::{cic_or_err, GridSpec, ScalarField2D, TensorField2D, VectorField2D};
use crate::reduce::par_sum;
use crate::scalar::{Real, Vec2};

/// Particles per partial grid in [`deposit_with`].
const DEPOSIT_CHUNK: usize = 16384;

/// Self-cell value of the unit-spacing kernel: the mean of `ln r / 2π` over a unit square.
pub fn self_cell_kernel<T: Real>() -> T {
    let ln2 = T::LN_2();
    (T::FRAC_PI_4() - T::lit(1.5) - ln2 / T::lit(2.0)) / T::TAU()
}

/// CIC deposit of `n` weighted points given by `point(i) -> (position, weight)`.
///
/// Points must lie at least one cell inside the grid. `scale` only affects the
/// coordinates reported in errors.
pub fn deposit_with<T, F>(
    spec: &GridSpec<T>,
    n: usize,
    scale: T,
    point: F,
) -> Result<ScalarField2D<T>>
where
    T: Real,
    F: Fn(usize) -> (Vec2<T>, T) + Sync + Send,
{
    let inv_area = T::one() / (spec.h * spec.h);
    let chunks = n.div_ceil(DEPOSIT_CHUNK);
    let partial: Vec<Result<Vec<T>>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut grid = vec![T::zero(); spec.len()];
            let end = ((c + 1) * DEPOSIT_CHUNK).min(n);
            for i in c * DEPOSIT_CHUNK..end {
                let (p, w) = point(i);
                let stencil = cic_or_err(spec, p, i, T::one(), scale)?;
                let ws = stencil.weights();
                for (k, idx) in stencil.indices(spec.n).into_iter().enumerate() {
                    grid[idx] = grid[idx] + w * ws[k] * inv_area;
                }
            }
            Ok(grid)
        })
        .collect();
    let mut out = ScalarField2D::zeros(*spec);
    for g in partial {
        for (a, b) in out.values.iter_mut().zip(g?) {
            *a = *a + b;
        }
    }
    Ok(out)
}

/// CIC deposit of points `xs` with weights `ws`.
pub fn deposit<T: Real>(spec: &GridSpec<T>, xs: &[Vec2<T>], ws: &[T]) -> Result<ScalarField2D<T>> {
    deposit_with(spec, xs.len(), T::one(), |i| (xs[i], ws[i]))
}

/// Coefficient of the second-order deconvolution of CIC deposition, CIC
/// interpolation and central differencing.
pub const SHARPEN_COEFF: f64 = 1.0 / 3.0;

/// `rho - c h^2 Lap_h rho` with the five-point Laplacian; edge nodes are left
/// unchanged. Preserves `h^2 sum(rho)` when the density vanishes near the edges.
pub fn sharpen<T: Real>(rho: &ScalarField2D<T>, c: T) -> ScalarField2D<T> {
    let n = rho.spec.n;
    let v = &rho.values;
    let mut out = rho.clone();
    out.values
        .par_chunks_mut(n)
        .enumerate()
        .for_each(|(j, row)| {
            if j == 0 || j == n - 1 {
                return;
            }
            for i in 1..n - 1 {
                let k = j * n + i;
                let lap = v[k + 1] + v[k - 1] + v[k + n] + v[k - n] - T::lit(4.0) * v[k];
                row[i] = v[k] - c * lap;
            }
        });
    out
}

/// Zero-padded FFT convolution with the 2D logarithmic Green function.
///
/// The kernel transform depends only on `n`; the spacing enters as a
/// scale factor and an additive constant proportional to the total mass.
pub struct FreeSpaceSolver<T: Real> {
    n: usize,
    forward: Arc<dyn Fft<T>>,
    inverse: Arc<dyn Fft<T>>,
    kernel_hat: Vec<Complex<T>>,
}

impl<T: Real> std::fmt::Debug for FreeSpaceSolver<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FreeSpaceSolver")
            .field("n", &self.n)
            .finish()
    }
}

impl<T: Real> FreeSpaceSolver<T> {
    pub fn new(n: usize) -> Self {
        let m = 2 * n;
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(m);
        let inverse = planner.plan_fft_inverse(m);
        let inv_tau = T::one() / T::TAU();
        let offset = |k: usize| -> T {
            if k <= n {
                T::from_usize_lossy(k)
            } else {
                -T::from_usize_lossy(m - k)
            }
        };
        let mut kernel: Vec<Complex<T>> = (0..m * m)
            .map(|idx| {
                let (a, b) = (offset(idx % m), offset(idx / m));
                let v = if idx == 0 {
                    self_cell_kernel::<T>()
                } else {
                    (a * a + b * b).ln() * T::lit(0.5) * inv_tau
                };
                Complex::new(v, T::zero())
            })
            .collect();
        let mut solver = Self {
            n,
            forward,
            inverse,
            kernel_hat: Vec::new(),
        };
        solver.fft2(&mut kernel, false);
        solver.kernel_hat = kernel;
        solver
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Row transforms, transpose, row transforms. The output of a forward pass is
    /// transposed; an inverse pass on that layout restores the original one.
    fn fft2(&self, buf: &mut [Complex<T>], inverse: bool) {
        let m = 2 * self.n;
        let plan = if inverse {
            &self.inverse
        } else {
            &self.forward
        };
        buf.par_chunks_mut(m).for_each(|row| plan.process(row));
        transpose(buf, m);
        buf.par_chunks_mut(m).for_each(|row| plan.process(row));
    }

    /// Potential `φ = (1/2π) log|·| * ρ` on the same grid as `rho`.
    pub fn solve(&self, rho: &ScalarField2D<T>) -> Result<ScalarField2D<T>> {
        let n = self.n;
        if rho.spec.n != n {
            return Err(Error::GridMismatch(format!(
                "solver built for n={}, density has n={}",
                n, rho.spec.n
            )));
        }
        rho.check_finite("density")?;
        let m = 2 * n;
        let mut buf = vec![Complex::new(T::zero(), T::zero()); m * m];
        buf.par_chunks_mut(m)
            .take(n)
            .enumerate()
            .for_each(|(j, row)| {
                for i in 0..n {
                    row[i] = Complex::new(rho.values[j * n + i], T::zero());
                }
            });
        self.fft2(&mut buf, false);
        buf.par_iter_mut()
            .zip(self.kernel_hat.par_iter())
            .for_each(|(a, k)| *a = *a * *k);
        self.fft2(&mut buf, true);
        let h = rho.spec.h;
        let h2 = h * h;
        let norm = h2 / T::from_usize_lossy(m * m);
        let mass = rho.integral();
        let shift = mass * h.ln() / T::TAU();
        let mut phi = ScalarField2D::zeros(rho.spec);
        phi.values
            .par_chunks_mut(n)
            .enumerate()
            .for_each(|(j, row)| {
                for i in 0..n {
                    row[i] = buf[j * m + i].re * norm + shift;
                }
            });
        phi.check_finite("potential")?;
        Ok(phi)
    }
}

fn transpose<T: Copy + Send + Sync>(buf: &mut [T], m: usize) {
    let src = buf.to_vec();
    buf.par_chunks_mut(m).enumerate().for_each(|(r, row)| {
        for (c, v) in row.iter_mut().enumerate() {
            *v = src[c * m + r];
        }
    });
}

/// Convenience wrapper building a one-off solver.
pub fn solve_free_space<T: Real>(rho: &ScalarField2D<T>) -> Result<ScalarField2D<T>> {
    FreeSpaceSolver::new(rho.spec.n).solve(rho)
}

/// Potential pair produced by the sharpened solve.
#[derive(Debug, Clone, PartialEq)]
pub struct SharpenedSolution<T> {
    /// Sharpened density fed to the solver.
    pub source: ScalarField2D<T>,
    /// Potential of `source`; paired with it in energy sums.
    pub psi: ScalarField2D<T>,
    /// Sharpened potential; its differences give the force.
    pub psi_force: ScalarField2D<T>,
}

/// Solve with the sharpening split evenly between source and potential.
pub fn solve_sharpened<T: Real>(
    solver: &FreeSpaceSolver<T>,
    rho: &ScalarField2D<T>,
) -> Result<SharpenedSolution<T>> {
    let half = T::lit(SHARPEN_COEFF * 0.5);
    let source = sharpen(rho, half);
    let psi = solver.solve(&source)?;
    let psi_force = sharpen(&psi, half);
    Ok(SharpenedSolution {
        source,
        psi,
        psi_force,
    })
}

#[inline]
fn d1<T: Real>(v: &[T], k: usize, stride: usize, idx: usize, n: usize, inv_2h: T) -> T {
    let three = T::lit(3.0);
    let four = T::lit(4.0);
    if idx == 0 {
        (-three * v[k] + four * v[k + stride] - v[k + 2 * stride]) * inv_2h
    } else if idx == n - 1 {
        (three * v[k] - four * v[k - stride] + v[k - 2 * stride]) * inv_2h
    } else {
        (v[k + stride] - v[k - stride]) * inv_2h
    }
}

/// `∇φ`: central differences inside, second-order one-sided at the edges.
pub fn gradient<T: Real>(phi: &ScalarField2D<T>) -> VectorField2D<T> {
    let n = phi.spec.n;
    let inv_2h = T::one() / (phi.spec.h + phi.spec.h);
    let v = &phi.values;
    let mut out = VectorField2D::zeros(phi.spec);
    out.values
        .par_chunks_mut(n)
        .enumerate()
        .for_each(|(j, row)| {
            for (i, g) in row.iter_mut().enumerate() {
                let k = j * n + i;
                *g = [d1(v, k, 1, i, n, inv_2h), d1(v, k, n, j, n, inv_2h)];
            }
        });
    out
}

/// Second differences of `φ`; edge nodes copy their nearest interior neighbour.
pub fn hessian<T: Real>(phi: &ScalarField2D<T>) -> TensorField2D<T> {
    let n = phi.spec.n;
    let h = phi.spec.h;
    let inv_h2 = T::one() / (h * h);
    let inv_4h2 = inv_h2 / T::lit(4.0);
    let two = T::lit(2.0);
    let v = &phi.values;
    let mut values = vec![[T::zero(); 3]; n * n];
    values.par_chunks_mut(n).enumerate().for_each(|(j, row)| {
        let jj = j.clamp(1, n - 2);
        for (i, out) in row.iter_mut().enumerate() {
            let ii = i.clamp(1, n - 2);
            let k = jj * n + ii;
            let xx = (v[k + 1] - two * v[k] + v[k - 1]) * inv_h2;
            let yy = (v[k + n] - two * v[k] + v[k - n]) * inv_h2;
            let xy = (v[k + n + 1] - v[k + n - 1] - v[k - n + 1] + v[k - n - 1]) * inv_4h2;
            *out = [xx, xy, yy];
        }
    });
    TensorField2D {
        spec: phi.spec,
        values,
    }
}

/// Five-point Laplacian on interior nodes; edge nodes are zero.
pub fn laplacian<T: Real>(phi: &ScalarField2D<T>) -> ScalarField2D<T> {
    let n = phi.spec.n;
    let inv_h2 = T::one() / (phi.spec.h * phi.spec.h);
    let v = &phi.values;
    let mut out = ScalarField2D::zeros(phi.spec);
    for j in 1..n - 1 {
        for i in 1..n - 1 {
            let k = j * n + i;
            out.values[k] =
                (v[k + 1] + v[k - 1] + v[k + n] + v[k - n] - T::lit(4.0) * v[k]) * inv_h2;
        }
    }
    out
}

/// Acceleration `-μ E(x)` at each point by bilinear interpolation of `E`.
pub fn force_at<T: Real>(xs: &[Vec2<T>], e: &VectorField2D<T>, mu: T) -> Result<Vec<Vec2<T>>> {
    xs.par_iter()
        .enumerate()
        .map(|(i, &p)| {
            let c = cic_or_err(&e.spec, p, i, T::zero(), T::one())?;
            let g = e.interpolate(&c);
            Ok([-mu * g[0], -mu * g[1]])
        })
        .collect()
}

/// Exact `∇φ(x_i) = (1/2π) Σ_{j≠i} w_j (x_i - x_j)/|x_i - x_j|²`, plus the
/// number of coincident ordered pairs that were skipped.
pub fn direct_sum_force<T: Real>(xs: &[Vec2<T>], ws: &[T]) -> (Vec<Vec2<T>>, usize) {
    let inv_tau = T::one() / T::TAU();
    let res: Vec<(Vec2<T>, usize)> = xs
        .par_iter()
        .enumerate()
        .map(|(i, &xi)| {
            let mut g = [T::zero(); 2];
            let mut coincident = 0;
            for (j, (&xj, &wj)) in xs.iter().zip(ws).enumerate() {
                if j == i {
                    continue;
                }
                let d = [xi[0] - xj[0], xi[1] - xj[1]];
                let r2 = d[0] * d[0] + d[1] * d[1];
                if r2 == T::zero() {
                    coincident += 1;
                    continue;
                }
                g[0] = g[0] + wj * d[0] / r2;
                g[1] = g[1] + wj * d[1] / r2;
            }
            ([g[0] * inv_tau, g[1] * inv_tau], coincident)
        })
        .collect();
    let coincident = res.iter().map(|r| r.1).sum();
    (res.into_iter().map(|r| r.0).collect(), coincident)
}

/// `(1/2π) Σ_{i≠j} w_i w_j log|x_i - x_j|`, coincident pairs skipped.
pub fn direct_sum_energy<T: Real>(xs: &[Vec2<T>], ws: &[T]) -> T {
    let inv_tau = T::one() / T::TAU();
    par_sum(xs.len(), |i| {
        let mut acc = T::zero();
        for j in 0..xs.len() {
            if j == i {
                continue;
            }
            let r2 = (xs[i][0] - xs[j][0]).powi(2) + (xs[i][1] - xs[j][1]).powi(2);
            if r2 > T::zero() {
                acc = acc + ws[j] * r2.ln() * T::lit(0.5);
            }
        }
        acc * ws[i]
    }) * inv_tau
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn node_and_cell_centre_deposits() {
        let g = GridSpec::<f64>::new([0.0, 0.0], 0.5, 16);
        let rho = deposit(&g, &[[2.0, 3.0]], &[1.0]).unwrap();
        assert_eq!(rho.at(4, 6), 4.0);
        assert_eq!(rho.values.iter().filter(|&&v| v != 0.0).count(), 1);
        let rho = deposit(&g, &[[2.25, 3.25]], &[1.0]).unwrap();
        for (i, j) in [(4, 6), (5, 6), (4, 7), (5, 7)] {
            assert!((rho.at(i, j) - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn deposit_outside_margin_names_particle() {
        let g = GridSpec::<f64>::new([0.0, 0.0], 1.0, 16);
        let err = deposit(&g, &[[5.0, 5.0], [0.5, 5.0]], &[1.0, 1.0]).unwrap_err();
        match err {
            Error::OutOfDomain { index, x, .. } => {
                assert_eq!(index, 1);
                assert_eq!(x, 0.5);
            }
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn zero_density_gives_zero_potential() {
        let g = GridSpec::<f64>::centered(1.0, 16);
        let phi = solve_free_space(&ScalarField2D::zeros(g)).unwrap();
        assert!(phi.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn two_masses_symmetric() {
        let g = GridSpec::<f64>::new([0.0, 0.0], 1.0, 32);
        let mut rho = ScalarField2D::zeros(g);
        rho.values[10 * 32 + 7] = 1.0;
        rho.values[20 * 32 + 23] = 1.0;
        let phi = solve_free_space(&rho).unwrap();
        for j in 0..32 {
            for i in 0..32 {
                let a = phi.at(i, j);
                let b = phi.at(30 - i.min(30), 30 - j.min(30));
                if i <= 30 && j <= 30 {
                    assert!((a - b).abs() < 1e-12, "{i} {j}");
                }
            }
        }
    }

    #[test]
    fn gradient_exact_on_quadratics() {
        let g = GridSpec::<f64>::new([-0.8, -0.8], 0.1, 17);
        let mut phi = ScalarField2D::zeros(g);
        for j in 0..17 {
            for i in 0..17 {
                let p = g.node(i, j);
                phi.values[j * 17 + i] = p[0] * p[0] + 0.3 * p[1];
            }
        }
        let e = gradient(&phi);
        for j in 0..17 {
            for i in 0..17 {
                let p = g.node(i, j);
                let v = e.at(i, j);
                assert!((v[0] - 2.0 * p[0]).abs() < 1e-12);
                assert!((v[1] - 0.3).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn two_body_direct_sum() {
        let (f, c) = direct_sum_force(&[[0.0, 0.0], [2.0, 0.0]], &[0.5, 0.5]);
        assert_eq!(c, 0);
        let mag = 0.5 / (std::f64::consts::TAU * 2.0);
        assert!((f[0][0] + mag).abs() < 1e-15 && (f[1][0] - mag).abs() < 1e-15);
        let (f, _) = direct_sum_force(&[[1.0, 1.0]], &[1.0]);
        assert_eq!(f[0], [0.0, 0.0]);
        let (_, c) = direct_sum_force(&[[1.0, 1.0], [1.0, 1.0]], &[1.0, 1.0]);
        assert_eq!(c, 2);
    }

    #[test]
    fn force_sign_flip() {
        let g = GridSpec::<f64>::centered(1.0, 16);
        let mut e = VectorField2D::zeros(g);
        for (k, v) in e.values.iter_mut().enumerate() {
            *v = [k as f64 * 0.01, -(k as f64) * 0.02];
        }
        let xs = [[0.1, 0.2], [-0.5, 0.33]];
        let a = force_at(&xs, &e, 1.0).unwrap();
        let b = force_at(&xs, &e, -1.0).unwrap();
        for (p, q) in a.iter().zip(&b) {
            assert_eq!(p[0], -q[0]);
            assert_eq!(p[1], -q[1]);
        }
    }
}
