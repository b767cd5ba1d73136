//! Uniform node-centred grids and cloud-in-cell weights.

use crate::error::{Error, Result};
use crate::scalar::{Real, Vec2};

/// Geometry of an `n x n` node grid with spacing `h`; node `(i, j)` sits at
/// `origin + (i h, j h)` and is stored at index `j * n + i`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec<T> {
    pub origin: Vec2<T>,
    pub h: T,
    pub n: usize,
}

/// Base node and bilinear weights of a point inside a grid.
#[derive(Debug, Clone, Copy)]
pub struct Cic<T> {
    pub i: usize,
    pub j: usize,
    pub fx: T,
    pub fy: T,
}

impl<T: Real> Cic<T> {
    #[inline]
    pub fn weights(&self) -> [T; 4] {
        let one = T::one();
        [
            (one - self.fx) * (one - self.fy),
            self.fx * (one - self.fy),
            (one - self.fx) * self.fy,
            self.fx * self.fy,
        ]
    }

    #[inline]
    pub fn indices(&self, n: usize) -> [usize; 4] {
        let b = self.j * n + self.i;
        [b, b + 1, b + n, b + n + 1]
    }
}

impl<T: Real> GridSpec<T> {
    pub fn new(origin: Vec2<T>, h: T, n: usize) -> Self {
        Self { origin, h, n }
    }

    /// Square grid of `n` nodes spanning `[-half_width, half_width]^2`.
    pub fn centered(half_width: T, n: usize) -> Self {
        let h = (half_width + half_width) / T::from_usize_lossy(n - 1);
        Self {
            origin: [-half_width, -half_width],
            h,
            n,
        }
    }

    #[inline]
    pub fn node(&self, i: usize, j: usize) -> Vec2<T> {
        [
            self.origin[0] + T::from_usize_lossy(i) * self.h,
            self.origin[1] + T::from_usize_lossy(j) * self.h,
        ]
    }

    pub fn len(&self) -> usize {
        self.n * self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn extent(&self) -> T {
        self.h * T::from_usize_lossy(self.n - 1)
    }

    /// Same grid with all lengths multiplied by `k`.
    pub fn scaled(&self, k: T) -> Self {
        Self {
            origin: [self.origin[0] * k, self.origin[1] * k],
            h: self.h * k,
            n: self.n,
        }
    }

    /// Fractional node coordinates of a point.
    #[inline]
    pub fn frac(&self, p: Vec2<T>) -> Vec2<T> {
        [
            (p[0] - self.origin[0]) / self.h,
            (p[1] - self.origin[1]) / self.h,
        ]
    }

    /// CIC stencil for a point at least `margin` cells away from every edge.
    #[inline]
    pub fn cic(&self, p: Vec2<T>, margin: T) -> Option<Cic<T>> {
        let f = self.frac(p);
        let hi = T::from_usize_lossy(self.n - 1) - margin;
        if !(f[0] >= margin && f[1] >= margin && f[0] < hi && f[1] < hi) {
            return None;
        }
        let i = f[0].floor();
        let j = f[1].floor();
        Some(Cic {
            i: i.to_usize().unwrap_or(0),
            j: j.to_usize().unwrap_or(0),
            fx: f[0] - i,
            fy: f[1] - j,
        })
    }

    /// Distance of a point from the nearest edge, in cells.
    #[inline]
    pub fn edge_distance(&self, p: Vec2<T>) -> T {
        let f = self.frac(p);
        let hi = T::from_usize_lossy(self.n - 1);
        f[0].min(f[1]).min(hi - f[0]).min(hi - f[1])
    }
}

/// CIC stencil that must exist; reports the offending particle otherwise.
#[inline]
pub fn cic_or_err<T: Real>(
    spec: &GridSpec<T>,
    p: Vec2<T>,
    index: usize,
    margin: T,
    scale: T,
) -> Result<Cic<T>> {
    spec.cic(p, margin).ok_or(Error::OutOfDomain {
        index,
        x: (p[0] * scale).to_f64_lossy(),
        y: (p[1] * scale).to_f64_lossy(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField2D<T> {
    pub spec: GridSpec<T>,
    pub values: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VectorField2D<T> {
    pub spec: GridSpec<T>,
    pub values: Vec<Vec2<T>>,
}

/// Symmetric 2x2 tensor per node, stored as `(xx, xy, yy)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorField2D<T> {
    pub spec: GridSpec<T>,
    pub values: Vec<[T; 3]>,
}

impl<T: Real> ScalarField2D<T> {
    pub fn zeros(spec: GridSpec<T>) -> Self {
        Self {
            values: vec![T::zero(); spec.len()],
            spec,
        }
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> T {
        self.values[j * self.spec.n + i]
    }

    /// `h^2 * sum(values)`
    pub fn integral(&self) -> T {
        let h2 = self.spec.h * self.spec.h;
        self.values.iter().fold(T::zero(), |a, &b| a + b) * h2
    }

    pub fn max_abs(&self) -> T {
        self.values.iter().fold(T::zero(), |a, &b| a.max(b.abs()))
    }

    pub fn check_finite(&self, what: &str) -> Result<()> {
        match self.values.iter().position(|v| !v.is_finite()) {
            None => Ok(()),
            Some(k) => Err(Error::NonFinite {
                what: what.to_string(),
                location: format!("node ({}, {})", k % self.spec.n, k / self.spec.n),
            }),
        }
    }

    /// Bilinear interpolation; `None` outside the grid.
    pub fn sample(&self, p: Vec2<T>) -> Option<T> {
        let c = self.spec.cic(p, T::zero())?;
        let w = c.weights();
        let idx = c.indices(self.spec.n);
        Some((0..4).fold(T::zero(), |a, k| a + w[k] * self.values[idx[k]]))
    }
}

impl<T: Real> VectorField2D<T> {
    pub fn zeros(spec: GridSpec<T>) -> Self {
        Self {
            values: vec![[T::zero(); 2]; spec.len()],
            spec,
        }
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> Vec2<T> {
        self.values[j * self.spec.n + i]
    }

    #[inline]
    pub fn interpolate(&self, c: &Cic<T>) -> Vec2<T> {
        let w = c.weights();
        let idx = c.indices(self.spec.n);
        let mut out = [T::zero(); 2];
        for k in 0..4 {
            out[0] = out[0] + w[k] * self.values[idx[k]][0];
            out[1] = out[1] + w[k] * self.values[idx[k]][1];
        }
        out
    }

    pub fn sample(&self, p: Vec2<T>) -> Option<Vec2<T>> {
        self.spec.cic(p, T::zero()).map(|c| self.interpolate(&c))
    }

    pub fn max_norm(&self) -> T {
        self.values
            .iter()
            .fold(T::zero(), |a, v| a.max(v[0].hypot(v[1])))
    }

    pub fn check_finite(&self, what: &str) -> Result<()> {
        match self
            .values
            .iter()
            .position(|v| !(v[0].is_finite() && v[1].is_finite()))
        {
            None => Ok(()),
            Some(k) => Err(Error::NonFinite {
                what: what.to_string(),
                location: format!("node ({}, {})", k % self.spec.n, k / self.spec.n),
            }),
        }
    }
}

impl<T: Real> TensorField2D<T> {
    #[inline]
    pub fn interpolate(&self, c: &Cic<T>) -> [T; 3] {
        let w = c.weights();
        let idx = c.indices(self.spec.n);
        let mut out = [T::zero(); 3];
        for k in 0..4 {
            for m in 0..3 {
                out[m] = out[m] + w[k] * self.values[idx[k]][m];
            }
        }
        out
    }

    pub fn check_finite(&self, what: &str) -> Result<()> {
        match self
            .values
            .iter()
            .position(|v| v.iter().any(|c| !c.is_finite()))
        {
            None => Ok(()),
            Some(k) => Err(Error::NonFinite {
                what: what.to_string(),
                location: format!("node ({}, {})", k % self.spec.n, k / self.spec.n),
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cic_weights_partition_unity() {
        let g = GridSpec::<f64>::centered(1.0, 17);
        let c = g.cic([0.13, -0.41], 1.0).unwrap();
        let s: f64 = c.weights().iter().sum();
        assert!((s - 1.0).abs() < 1e-15);
        assert!(g.cic([0.99, 0.0], 1.0).is_none());
        assert!(g.cic([0.99, 0.0], 0.0).is_some());
    }

    #[test]
    fn bilinear_sample_reproduces_linear_data() {
        let g = GridSpec::<f64>::centered(2.0, 33);
        let mut f = ScalarField2D::zeros(g);
        for j in 0..33 {
            for i in 0..33 {
                let p = g.node(i, j);
                f.values[j * 33 + i] = 3.0 * p[0] - 2.0 * p[1] + 0.5;
            }
        }
        let v = f.sample([0.377, -1.21]).unwrap();
        assert!((v - (3.0 * 0.377 + 2.0 * 1.21 + 0.5)).abs() < 1e-13);
    }
}
