//! Lagrangian markers.

use crate::phase::{from_hyperbolic, HyperPoint};
use crate::reduce::par_sum;
use crate::scalar::{Real, Vec2};

pub type Mat4<T> = [[T; 4]; 4];

pub fn identity4<T: Real>() -> Mat4<T> {
    let mut m = [[T::zero(); 4]; 4];
    for (i, row) in m.iter_mut().enumerate() {
        row[i] = T::one();
    }
    m
}

/// One marker of the distribution function.
///
/// The state is held in hyperbolic coordinates; `x()` and `v()` derive the
/// Cartesian position and velocity. The tangent matrix is stored in the
/// rescaled hyperbolic basis `K = diag(e^t, e^t, e^-t, e^-t) * d(s,u)/d(s0,u0)`,
/// which stays O(1) while the Cartesian Jacobian grows like `e^t`.
#[derive(Debug, Clone, PartialEq)]
pub struct Particle<T> {
    pub s: Vec2<T>,
    pub u: Vec2<T>,
    /// Mass carried, in `(x, v)` measure.
    pub w: T,
    pub f0_val: T,
    /// `(d/dx1, d/dx2, d/dv1, d/dv2) f0` at the initial point.
    pub f0_grad: [T; 4],
    pub tangent: Mat4<T>,
    /// Trapezoidal accumulation of `e^t (x - v) - (x0 - v0)`.
    pub drift: Vec2<T>,
    pub s0: Vec2<T>,
    pub u0: Vec2<T>,
}

impl<T: Real> Particle<T> {
    pub fn new(s: Vec2<T>, u: Vec2<T>, w: T, f0_val: T, f0_grad: [T; 4]) -> Self {
        Self {
            s,
            u,
            w,
            f0_val,
            f0_grad,
            tangent: identity4(),
            drift: [T::zero(); 2],
            s0: s,
            u0: u,
        }
    }

    #[inline]
    pub fn hyper(&self) -> HyperPoint<T> {
        HyperPoint {
            s: self.s,
            u: self.u,
        }
    }

    #[inline]
    pub fn x(&self) -> Vec2<T> {
        [self.s[0] + self.u[0], self.s[1] + self.u[1]]
    }

    #[inline]
    pub fn v(&self) -> Vec2<T> {
        [self.u[0] - self.s[0], self.u[1] - self.s[1]]
    }

    /// `e^-t x`, computed without forming `x`.
    #[inline]
    pub fn rescaled_x(&self, inv_scale: T) -> Vec2<T> {
        [
            inv_scale * self.s[0] + inv_scale * self.u[0],
            inv_scale * self.s[1] + inv_scale * self.u[1],
        ]
    }

    pub fn initial_xv(&self) -> (Vec2<T>, Vec2<T>) {
        from_hyperbolic(HyperPoint {
            s: self.s0,
            u: self.u0,
        })
    }

    /// Cartesian tangent matrix `d(x, v)/d(x0, v0)` at time `t`.
    pub fn jacobian_xv(&self, t: T) -> Mat4<T> {
        let ep = t.exp();
        let em = (-t).exp();
        let k = &self.tangent;
        // J_su = diag(e^-t, e^-t, e^t, e^t) K
        let mut jsu = *k;
        for c in 0..4 {
            jsu[0][c] = k[0][c] * em;
            jsu[1][c] = k[1][c] * em;
            jsu[2][c] = k[2][c] * ep;
            jsu[3][c] = k[3][c] * ep;
        }
        // J_xv = P^-1 J_su P with P(x,v) = ((x-v)/2, (x+v)/2), P^-1(s,u) = (s+u, u-s)
        let half = T::lit(0.5);
        let mut tmp = [[T::zero(); 4]; 4];
        for r in 0..4 {
            for a in 0..2 {
                // column for x_a: d(s,u)/dx_a = (1/2, 1/2); for v_a: (-1/2, 1/2)
                tmp[r][a] = half * (jsu[r][a] + jsu[r][a + 2]);
                tmp[r][a + 2] = half * (jsu[r][a + 2] - jsu[r][a]);
            }
        }
        let mut out = [[T::zero(); 4]; 4];
        for c in 0..4 {
            for a in 0..2 {
                out[a][c] = tmp[a][c] + tmp[a + 2][c];
                out[a + 2][c] = tmp[a + 2][c] - tmp[a][c];
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParticleEnsemble<T> {
    pub particles: Vec<Particle<T>>,
    /// Particle count asked for in the configuration (the sampler may round it).
    pub requested: usize,
}

impl<T: Real> ParticleEnsemble<T> {
    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    /// Total mass in `(x, v)` measure, summed in a fixed order.
    pub fn total_weight(&self) -> T {
        par_sum(self.len(), |i| self.particles[i].w)
    }

    /// `sum_p w_p v_p`
    pub fn momentum(&self) -> Vec2<T> {
        let px = par_sum(self.len(), |i| {
            let p = &self.particles[i];
            p.w * p.v()[0]
        });
        let py = par_sum(self.len(), |i| {
            let p = &self.particles[i];
            p.w * p.v()[1]
        });
        [px, py]
    }

    pub fn from_xv(points: &[(Vec2<T>, Vec2<T>, T)]) -> Self {
        let particles = points
            .iter()
            .map(|&(x, v, w)| {
                let h = crate::phase::to_hyperbolic(x, v);
                Particle::new(h.s, h.u, w, T::zero(), [T::zero(); 4])
            })
            .collect::<Vec<_>>();
        Self {
            requested: particles.len(),
            particles,
        }
    }
}
