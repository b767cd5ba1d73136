//! Hyperbolic phase-space coordinates and the exact linearized flow.
//!
//! The linear characteristic system `dx/dt = v, dv/dt = x` decouples in the
//! coordinates `s = (x - v)/2` (contracting like `e^-t`) and
//! `u = (x + v)/2` (expanding like `e^t`).

use crate::scalar::{add2, scale2, sub2, Real, Vec2};

/// `dx dv = MEASURE_JACOBIAN * ds du` in 2+2 dimensions (a factor 2 per axis pair).
pub const MEASURE_JACOBIAN: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HyperPoint<T> {
    pub s: Vec2<T>,
    pub u: Vec2<T>,
}

#[inline]
pub fn to_hyperbolic<T: Real>(x: Vec2<T>, v: Vec2<T>) -> HyperPoint<T> {
    let half = T::lit(0.5);
    HyperPoint {
        s: scale2(half, sub2(x, v)),
        u: scale2(half, add2(x, v)),
    }
}

/// Inverse of [`to_hyperbolic`]: `x = s + u`, `v = u - s`.
#[inline]
pub fn from_hyperbolic<T: Real>(p: HyperPoint<T>) -> (Vec2<T>, Vec2<T>) {
    (add2(p.s, p.u), sub2(p.u, p.s))
}

/// `(cosh t, sinh t)` evaluated from a single pair `e^t`, `e^-t`.
#[inline]
pub fn cosh_sinh<T: Real>(t: T) -> (T, T) {
    let ep = t.exp();
    let em = (-t).exp();
    let half = T::lit(0.5);
    (half * (ep + em), half * (ep - em))
}

/// Exact solution of the linearized characteristic system at time `t`.
pub fn linear_flow<T: Real>(x: Vec2<T>, v: Vec2<T>, t: T) -> (Vec2<T>, Vec2<T>) {
    let (c, s) = cosh_sinh(t);
    (
        [x[0] * c + v[0] * s, x[1] * c + v[1] * s],
        [x[0] * s + v[0] * c, x[1] * s + v[1] * c],
    )
}

/// [`linear_flow`] in hyperbolic coordinates: `s -> e^-t s`, `u -> e^t u`.
#[inline]
pub fn linear_flow_hyper<T: Real>(p: HyperPoint<T>, t: T) -> HyperPoint<T> {
    HyperPoint {
        s: scale2((-t).exp(), p.s),
        u: scale2(t.exp(), p.u),
    }
}

/// 4x4 matrix of [`linear_flow`] acting on `(x1, x2, v1, v2)`.
pub fn linear_flow_matrix<T: Real>(t: T) -> [[T; 4]; 4] {
    let (c, s) = cosh_sinh(t);
    let z = T::zero();
    [[c, z, s, z], [z, c, z, s], [s, z, c, z], [z, s, z, c]]
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConservedWeights<T> {
    /// `e^t (x - v) / 2`
    pub z_plus: Vec2<T>,
    /// `e^-t (x + v) / 2`
    pub z_minus: Vec2<T>,
}

/// Weights that are constant along the linear flow. Returns `None` when
/// `e^t (x - v)` leaves the floating point range.
pub fn conserved_weights<T: Real>(t: T, x: Vec2<T>, v: Vec2<T>) -> Option<ConservedWeights<T>> {
    let h = to_hyperbolic(x, v);
    let z_plus = scale2(t.exp(), h.s);
    if !(z_plus[0].is_finite() && z_plus[1].is_finite()) {
        return None;
    }
    Some(ConservedWeights {
        z_plus,
        z_minus: scale2((-t).exp(), h.u),
    })
}

/// [`conserved_weights`] for a state already held in hyperbolic coordinates,
/// free of the cancellation in `x - v`.
pub fn conserved_weights_hyper<T: Real>(t: T, p: HyperPoint<T>) -> Option<ConservedWeights<T>> {
    let z_plus = scale2(t.exp(), p.s);
    if !(z_plus[0].is_finite() && z_plus[1].is_finite()) {
        return None;
    }
    Some(ConservedWeights {
        z_plus,
        z_minus: scale2((-t).exp(), p.u),
    })
}

/// Determinant of a 4x4 matrix by partially pivoted elimination.
pub fn det4<T: Real>(m: &[[T; 4]; 4]) -> T {
    let mut a = *m;
    let mut det = T::one();
    for col in 0..4 {
        let mut piv = col;
        for r in col + 1..4 {
            if a[r][col].abs() > a[piv][col].abs() {
                piv = r;
            }
        }
        if a[piv][col] == T::zero() {
            return T::zero();
        }
        if piv != col {
            a.swap(piv, col);
            det = -det;
        }
        det = det * a[col][col];
        for r in col + 1..4 {
            let f = a[r][col] / a[col][col];
            for c in col..4 {
                a[r][c] = a[r][c] - f * a[col][c];
            }
        }
    }
    det
}

/// Solves `m^T y = b`.
pub fn solve_transpose4<T: Real>(m: &[[T; 4]; 4], b: [T; 4]) -> Option<[T; 4]> {
    let mut a = [[T::zero(); 5]; 4];
    for r in 0..4 {
        for c in 0..4 {
            a[r][c] = m[c][r];
        }
        a[r][4] = b[r];
    }
    for col in 0..4 {
        let mut piv = col;
        for r in col + 1..4 {
            if a[r][col].abs() > a[piv][col].abs() {
                piv = r;
            }
        }
        if a[piv][col] == T::zero() {
            return None;
        }
        a.swap(piv, col);
        for r in 0..4 {
            if r != col {
                let f = a[r][col] / a[col][col];
                for c in col..5 {
                    a[r][c] = a[r][c] - f * a[col][c];
                }
            }
        }
    }
    Some([
        a[0][4] / a[0][0],
        a[1][4] / a[1][1],
        a[2][4] / a[2][2],
        a[3][4] / a[3][3],
    ])
}

pub fn matmul4<T: Real>(a: &[[T; 4]; 4], b: &[[T; 4]; 4]) -> [[T; 4]; 4] {
    let mut out = [[T::zero(); 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            out[i][j] = (0..4).fold(T::zero(), |acc, k| acc + a[i][k] * b[k][j]);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn hyperbolic_examples() {
        let p = to_hyperbolic([1.0, 1.0], [1.0, 1.0]);
        assert_eq!(p.s, [0.0, 0.0]);
        assert_eq!(p.u, [1.0, 1.0]);
        let p = to_hyperbolic([2.0, 0.0], [0.0, 0.0]);
        assert_eq!(p.s, [1.0, 0.0]);
        assert_eq!(p.u, [1.0, 0.0]);
    }

    #[test]
    fn linear_flow_at_ln2() {
        // cosh(ln 2) = 5/4, sinh(ln 2) = 3/4
        let (x, v) = linear_flow([1.0, 0.0], [0.0, 0.0], 2f64.ln());
        assert!((x[0] - 1.25).abs() < 1e-15 && x[1] == 0.0);
        assert!((v[0] - 0.75).abs() < 1e-15 && v[1] == 0.0);
    }

    #[test]
    fn linear_flow_identity_and_stable_direction() {
        let (x, v) = linear_flow([0.3, -1.2], [2.0, 0.5], 0.0);
        assert_eq!((x, v), ([0.3, -1.2], [2.0, 0.5]));
        for &t in &[0.5f64, 1.0, 3.0, 7.0] {
            let (x, v) = linear_flow([1.0, 0.0], [-1.0, 0.0], t);
            let e = (-t).exp();
            assert!((x[0] - e).abs() <= 1e-15 * (t.exp()));
            assert!((v[0] + e).abs() <= 1e-15 * (t.exp()));
        }
    }

    #[test]
    fn linear_flow_is_symplectic() {
        for &t in &[0.0f64, 0.1, 0.5, 1.0, 2.5, 5.0] {
            let m = linear_flow_matrix(t);
            let (c, s) = (m[0][0], m[0][2]);
            // cosh^2 - sinh^2 = 1 holds to a few ulps of cosh^2
            let d = ((c + s) * (c - s)).powi(2);
            assert!(
                (d - 1.0).abs() <= 8.0 * f64::EPSILON * c * c,
                "t={t} det={d}"
            );
            if t <= 1.0 {
                assert!((d - 1.0).abs() < 1e-14);
                assert!((det4(&m) - 1.0).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn conserved_weights_examples() {
        let w = conserved_weights(0.0, [0.4, -0.2], [1.0, 3.0]).unwrap();
        let h = to_hyperbolic([0.4, -0.2], [1.0, 3.0]);
        assert_eq!(w.z_plus, h.s);
        assert_eq!(w.z_minus, h.u);

        let w = conserved_weights(1.0, [1.0, 0.0], [0.0, 0.0]).unwrap();
        let e = 1f64.exp();
        assert!((w.z_plus[0] - e / 2.0).abs() < 1e-15);
        assert!((w.z_minus[0] - 1.0 / (2.0 * e)).abs() < 1e-15);
        assert!(conserved_weights(800.0, [1.0, 0.0], [0.0, 0.0]).is_none());
    }

    #[test]
    fn f32_paths_agree() {
        let (x, v) = linear_flow([1.0f32, 0.5], [0.25, -1.0], 1.5);
        let (xd, vd) = linear_flow([1.0f64, 0.5], [0.25, -1.0], 1.5);
        for k in 0..2 {
            assert!((x[k] as f64 - xd[k]).abs() < 1e-5);
            assert!((v[k] as f64 - vd[k]).abs() < 1e-5);
        }
    }

    proptest! {
        #[test]
        fn hyperbolic_roundtrip(x0 in -1e3..1e3f64, x1 in -1e3..1e3f64, v0 in -1e3..1e3f64, v1 in -1e3..1e3f64) {
            let (x, v) = from_hyperbolic(to_hyperbolic([x0, x1], [v0, v1]));
            // s + u and u - s reproduce the inputs up to the rounding of the halving sums
            prop_assert!((x[0] - x0).abs() <= 4.0 * f64::EPSILON * (x0.abs() + v0.abs()));
            prop_assert!((x[1] - x1).abs() <= 4.0 * f64::EPSILON * (x1.abs() + v1.abs()));
            prop_assert!((v[0] - v0).abs() <= 4.0 * f64::EPSILON * (x0.abs() + v0.abs()));
            prop_assert!((v[1] - v1).abs() <= 4.0 * f64::EPSILON * (x1.abs() + v1.abs()));
        }

        #[test]
        fn linear_flow_composes(t1 in -3.0..3.0f64, t2 in -3.0..3.0f64, x0 in -5.0..5.0f64, v0 in -5.0..5.0f64) {
            let (xa, va) = linear_flow([x0, v0], [v0, -x0], t1);
            let (xb, vb) = linear_flow(xa, va, t2);
            let (xc, vc) = linear_flow([x0, v0], [v0, -x0], t1 + t2);
            let scale = 1.0 + (t1.abs() + t2.abs()).exp() * (x0.abs() + v0.abs());
            for k in 0..2 {
                prop_assert!((xb[k] - xc[k]).abs() < 1e-13 * scale);
                prop_assert!((vb[k] - vc[k]).abs() < 1e-13 * scale);
            }
        }

        #[test]
        fn weights_invariant_along_linear_flow(x0 in -3.0..3.0f64, x1 in -3.0..3.0f64, v0 in -3.0..3.0f64, v1 in -3.0..3.0f64) {
            let p0 = to_hyperbolic([x0, x1], [v0, v1]);
            let w0 = conserved_weights_hyper(0.0, p0).unwrap();
            let size = x0.abs() + x1.abs() + v0.abs() + v1.abs();
            for k in 1..=10 {
                let t = k as f64;
                let w = conserved_weights_hyper(t, linear_flow_hyper(p0, t)).unwrap();
                for c in 0..2 {
                    prop_assert!((w.z_plus[c] - w0.z_plus[c]).abs() <= 1e-10 * w0.z_plus[c].abs());
                    prop_assert!((w.z_minus[c] - w0.z_minus[c]).abs() <= 1e-10 * w0.z_minus[c].abs());
                }
                // In (x, v) the stable weight is limited by cancellation in x - v,
                // whose components have grown like e^t.
                let (x, v) = linear_flow([x0, x1], [v0, v1], t);
                let w = conserved_weights(t, x, v).unwrap();
                let cancel = 8.0 * f64::EPSILON * (2.0 * t).exp() * size;
                for c in 0..2 {
                    prop_assert!((w.z_plus[c] - w0.z_plus[c]).abs() <= 1e-10 * w0.z_plus[c].abs() + cancel);
                    prop_assert!((w.z_minus[c] - w0.z_minus[c]).abs() <= 1e-10 * w0.z_minus[c].abs() + 1e-15 * size);
                }
            }
        }
    }
}
