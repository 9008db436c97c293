//! The 3D piecewise linear example
//!
//! ```text
//! X+ = (-y, x, 0) + eps (A+ v + c+),            y > 0
//! X- = (-y, x, 0) + eps A- v + eps^2 B- v,      y < 0
//! ```
//!
//! with `v = (x, y, z)`, its reduced `(r, z)` form in the angle `theta`, and
//! closed-form values of the averaged functions, the fixed-point expansion and
//! the Lyapunov coefficient used to validate the generic pipeline.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{Matrix2, Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::melnikov::MelnikovPair;
use crate::model::{
    term_fn, ParameterPoint, PiecewiseSystem, State, SwitchedSystem, SwitchingFunction, ZoneField,
};

/// `8 + 9 pi^2`.
pub fn kappa() -> f64 {
    8.0 + 9.0 * PI * PI
}

fn s16() -> f64 {
    (16.0 - PI * PI).sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pwl3dParams {
    pub b: f64,
    pub alpha: f64,
    pub epsilon: f64,
}

impl Pwl3dParams {
    pub fn new(b: f64, alpha: f64, epsilon: f64) -> Result<Self> {
        if b == 0.0 || !b.is_finite() {
            return Err(Error::Validation("pwl3d requires b != 0".into()));
        }
        Ok(Self { b, alpha, epsilon })
    }

    pub fn point(&self) -> ParameterPoint {
        ParameterPoint::new(self.alpha, self.epsilon).with_extra("b", self.b)
    }
}

/// `A+` for a given `b`.
pub fn a_plus(b: f64) -> Matrix3<f64> {
    Matrix3::new(
        0.0, 0.0, -4.0 * PI * PI * b / kappa(),
        0.0, -1.0, -1.0,
        0.0, 0.0, 0.5,
    )
}

/// Constant part of the upper-zone perturbation.
pub fn c_plus() -> Vector3<f64> {
    Vector3::new(0.0, (PI * PI + 4.0) / 4.0, -2.5)
}

pub fn a_minus(alpha: f64) -> Matrix3<f64> {
    Matrix3::new(
        alpha, 4.0, -1.0,
        0.0, 0.0, 0.0,
        0.0, -1.0, 0.0,
    )
}

pub fn b_minus(b: f64) -> Matrix3<f64> {
    let mut m = Matrix3::zeros();
    m[(1, 2)] = b;
    m
}

/// The matrices of the example with an optional additive change of `B-`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pwl3dModel {
    pub b: f64,
    pub b_minus_delta: Matrix3<f64>,
}

impl Pwl3dModel {
    pub fn new(b: f64) -> Result<Self> {
        if b == 0.0 || !b.is_finite() {
            return Err(Error::Validation("pwl3d requires b != 0".into()));
        }
        Ok(Self {
            b,
            b_minus_delta: Matrix3::zeros(),
        })
    }

    pub fn with_b_minus_delta(mut self, delta: Matrix3<f64>) -> Self {
        self.b_minus_delta = delta;
        self
    }

    fn b_of(&self, p: &ParameterPoint) -> f64 {
        p.extra("b").unwrap_or(self.b)
    }

    fn b_minus_of(&self, b: f64) -> Matrix3<f64> {
        b_minus(b) + self.b_minus_delta
    }

    /// Cartesian vector field; `y = 0` belongs to neither zone.
    pub fn cartesian_field(&self, p: &ParameterPoint, v: &Vector3<f64>) -> Result<Vector3<f64>> {
        if v.y == 0.0 {
            return Err(Error::Boundary {
                t: 0.0,
                index: 1,
                theta: 0.0,
            });
        }
        Ok(self.cartesian_side(p, v, v.y > 0.0))
    }

    fn cartesian_side(&self, p: &ParameterPoint, v: &Vector3<f64>, upper: bool) -> Vector3<f64> {
        let eps = p.epsilon;
        let b = self.b_of(p);
        let rot = Vector3::new(-v.y, v.x, 0.0);
        if upper {
            rot + eps * (a_plus(b) * v + c_plus())
        } else {
            rot + eps * (a_minus(p.alpha) * v) + eps * eps * (self.b_minus_of(b) * v)
        }
    }

    /// `epsilon F_1 + epsilon^2 F_2` of the reduced system.
    pub fn reduced_field(&self, p: &ParameterPoint, theta: f64, r: f64, z: f64) -> Result<[f64; 2]> {
        if !(r > 0.0) {
            return Err(Error::Domain(format!("reduced field needs r > 0, got {r}")));
        }
        let upper = theta.rem_euclid(2.0 * PI) < PI;
        let f1 = self.f1(upper, p, theta, r, z);
        let f2 = self.f2(upper, p, theta, r, z);
        let e = p.epsilon;
        Ok([e * f1[0] + e * e * f2[0], e * f1[1] + e * e * f2[1]])
    }

    pub fn f1(&self, upper: bool, p: &ParameterPoint, th: f64, r: f64, z: f64) -> [f64; 2] {
        let b = self.b_of(p);
        let k = kappa();
        let (s, c) = th.sin_cos();
        if upper {
            [
                0.25 * s * (-4.0 * r * s - 4.0 * z + PI * PI + 4.0) - 4.0 * PI * PI * b * z * c / k,
                (z - 5.0) / 2.0,
            ]
        } else {
            let a = p.alpha;
            [
                0.5 * (a * r * (2.0 * th).cos() + a * r + 4.0 * r * (2.0 * th).sin() - 2.0 * z * c),
                -r * s,
            ]
        }
    }

    pub fn f2(&self, upper: bool, p: &ParameterPoint, th: f64, r: f64, z: f64) -> [f64; 2] {
        let b = self.b_of(p);
        let k = kappa();
        let (s, c) = th.sin_cos();
        let pi2 = PI * PI;
        if upper {
            let u = -4.0 * r * s - 4.0 * z + pi2 + 4.0;
            let first = (16.0 * pi2 * b * z * s + k * c * u) * (16.0 * pi2 * b * z * c - k * s * u)
                / (16.0 * k * k * r);
            let second = (z - 5.0) / (8.0 * k * r) * (-k * c * u - 16.0 * pi2 * b * z * s);
            [first, second]
        } else {
            let a = p.alpha;
            let w = -a * r * c - 4.0 * r * s + z;
            let bv = self.b_minus_of(b) * Vector3::new(r * c, r * s, z);
            [
                (2.0 * th).sin() * w * w / (2.0 * r) + c * bv.x + s * bv.y,
                s * s * w + bv.z,
            ]
        }
    }

    /// `(r'/theta', z'/theta')` computed from the Cartesian field without expansion.
    pub fn quotient_field(&self, p: &ParameterPoint, theta: f64, r: f64, z: f64) -> [f64; 2] {
        let upper = theta.rem_euclid(2.0 * PI) < PI;
        let (s, c) = theta.sin_cos();
        let v = Vector3::new(r * c, r * s, z);
        let f = self.cartesian_side(p, &v, upper);
        let rdot = c * f.x + s * f.y;
        let thdot = (c * f.y - s * f.x) / r;
        [rdot / thdot, f.z / thdot]
    }

    /// The reduced planar system registered as `pwl3d`.
    pub fn reduced_system(&self) -> Result<PiecewiseSystem> {
        self.reduced_system_with(false)
    }

    /// With `exact`, the zones carry the remainder that turns the truncated
    /// expansion back into the exact quotient.
    pub fn reduced_system_with(&self, exact: bool) -> Result<PiecewiseSystem> {
        let zone = |upper: bool| {
            let m1 = *self;
            let m2 = *self;
            let f1 = term_fn(move |t, x: &State, p| {
                let v = m1.f1(upper, p, t, x[0], x[1]);
                State::from_vec(v.to_vec())
            });
            let f2 = term_fn(move |t, x: &State, p| {
                let v = m2.f2(upper, p, t, x[0], x[1]);
                State::from_vec(v.to_vec())
            });
            let mut z = ZoneField::new(vec![f1, f2]);
            if exact {
                let m = *self;
                z = z.with_remainder(term_fn(move |t, x: &State, p| {
                    let e = p.epsilon;
                    let q = m.quotient_field(p, t, x[0], x[1]);
                    let a = m.f1(upper, p, t, x[0], x[1]);
                    let b = m.f2(upper, p, t, x[0], x[1]);
                    let e3 = e * e * e;
                    State::from_vec(vec![
                        (q[0] - e * a[0] - e * e * b[0]) / e3,
                        (q[1] - e * a[1] - e * e * b[1]) / e3,
                    ])
                }));
            }
            z
        };
        PiecewiseSystem::new(
            if exact { "pwl3d-exact" } else { "pwl3d" },
            2.0 * PI,
            2,
            vec![zone(true), zone(false)],
            vec![SwitchingFunction::constant(PI)],
        )
    }

    /// The Cartesian system registered as `pwl3d-cartesian`, with the section
    /// `y = 0, x > 0`.
    pub fn cartesian_system(&self, p: &ParameterPoint) -> SwitchedSystem {
        let (mu, ml) = (*self, *self);
        let (pu, pl) = (p.clone(), p.clone());
        SwitchedSystem {
            name: "pwl3d-cartesian".into(),
            dim: 3,
            upper: Arc::new(move |x: &State| {
                let v = mu.cartesian_side(&pu, &Vector3::new(x[0], x[1], x[2]), true);
                State::from_column_slice(v.as_slice())
            }),
            lower: Arc::new(move |x: &State| {
                let v = ml.cartesian_side(&pl, &Vector3::new(x[0], x[1], x[2]), false);
                State::from_column_slice(v.as_slice())
            }),
            surface: Arc::new(|x: &State| x[1]),
            section: Arc::new(|x: &State| x[0] > 0.0),
        }
    }
}

/// `A+ (x, y, z)`, the linear part of the upper-zone correction.
pub fn a_plus_times(b: f64, v: [f64; 3]) -> [f64; 3] {
    let w = a_plus(b) * Vector3::from(v);
    [w.x, w.y, w.z]
}

pub fn a_minus_times(alpha: f64, v: [f64; 3]) -> [f64; 3] {
    let w = a_minus(alpha) * Vector3::from(v);
    [w.x, w.y, w.z]
}

pub fn oracle_delta1(alpha: f64, r: f64, z: f64) -> [f64; 2] {
    [
        PI * alpha * r / 2.0 + (-PI * r - 4.0 * z + PI * PI + 4.0) / 2.0,
        2.0 * r + PI / 2.0 * (z - 5.0),
    ]
}

pub fn oracle_delta2(b: f64, alpha: f64, r: f64, z: f64) -> Result<[f64; 2]> {
    if r == 0.0 {
        return Err(Error::Domain("second-order function is singular at r = 0".into()));
    }
    let k = kappa();
    let a = alpha;
    let pi2 = PI * PI;
    let first = (PI * (a * (PI * (a - 2.0) + 8.0) - 4.0) * r - 8.0 * z * ((PI - 2.0) * a + 2.0 * b)
        + 2.0 * PI * (pi2 + 4.0) * a)
        / 8.0
        + PI / 8.0 * (PI * (32.0 * b * (3.0 * z - 5.0) / k + r - PI) + 16.0);
    let second = PI * (0.5 * (a - 2.0) * r + z + PI)
        + pi2 / 8.0 * (z - 5.0) * (1.0 - 32.0 * b * z / ((9.0 * pi2 + 8.0) * r))
        + 8.0 * r
        - 4.0 * z
        + 4.0;
    Ok([first, second])
}

/// Both closed-form averaged functions; the switching times are constant so
/// the jump part vanishes.
pub fn oracle_delta(params: &Pwl3dParams, r: f64, z: f64) -> Result<MelnikovPair> {
    let d1 = oracle_delta1(params.alpha, r, z);
    let d2 = oracle_delta2(params.b, params.alpha, r, z)?;
    Ok(MelnikovPair {
        delta1: State::from_vec(d1.to_vec()),
        delta2: State::from_vec(d2.to_vec()),
        g2_smooth: State::from_vec(d2.to_vec()),
        g2_jump: State::zeros(2),
    })
}

fn pole(alpha: f64) -> Result<f64> {
    let den = PI * PI * (alpha - 1.0) + 16.0;
    if den.abs() < 1e-12 {
        return Err(Error::Domain(format!("alpha = {alpha} is a pole of the fixed-point formula")));
    }
    Ok(den)
}

/// Zero `(r0, z0)` of the first-order averaged function.
pub fn oracle_r0z0(alpha: f64) -> Result<[f64; 2]> {
    let den = pole(alpha)?;
    Ok([
        PI * (16.0 - PI * PI) / den,
        (PI * PI * (5.0 * alpha - 1.0) + 16.0) / den,
    ])
}

pub fn r1_poly(alpha: f64, b: f64) -> f64 {
    let a = alpha;
    let p = PI;
    8.0 * p.powi(5) * (17.0 * a - 35.0) * a
        - 16.0 * p.powi(4) * (a * (45.0 * a - 25.0 * b + 149.0) + 13.0 * b - 196.0)
        - 128.0 * p * p * (-29.0 * b + 302.0 + 5.0 * a * (a + 3.0 * b + 7.0))
        - 2048.0 * (a + 3.0 * (b + 6.0))
        - 9.0 * p.powi(7) * (a - 1.0) * a
        + 128.0 * p.powi(3) * (a + 16.0) * a
        + 2048.0 * p * a
        + 36.0 * p.powi(6) * (2.0 * a - 1.0)
}

pub fn z1_poly(alpha: f64, b: f64) -> f64 {
    let a = alpha;
    let p = PI;
    128.0 * p * p * (a * (5.0 * a - 9.0 * b + 7.0) - 21.0 * b + 14.0)
        - 16.0 * p.powi(4) * (a * (10.0 * a * (b - 4.0) + 13.0 * b + 89.0) - 11.0 * b - 119.0)
        + 2048.0 * (a - b)
        - 9.0 * p.powi(7) * (a - 1.0)
        - 18.0 * p.powi(6) * (5.0 * (a - 2.0) * a + 7.0)
        + 8.0 * p.powi(5) * (17.0 * a - 35.0)
        + 128.0 * p.powi(3) * (a + 16.0)
        + 2048.0 * p
}

/// First-order correction `(R1, S1)` of the fixed point.
pub fn oracle_r1s1(alpha: f64, b: f64) -> Result<[f64; 2]> {
    let den = pole(alpha)?;
    let k = kappa();
    Ok([
        PI * r1_poly(alpha, b) / (4.0 * k * den * den),
        z1_poly(alpha, b) / (k * den * den),
    ])
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FixedPointOracle {
    pub r0: f64,
    pub z0: f64,
    pub r1: f64,
    pub s1: f64,
}

pub fn oracle_fixed_point(alpha: f64, b: f64) -> Result<FixedPointOracle> {
    let [r0, z0] = oracle_r0z0(alpha)?;
    let [r1, s1] = oracle_r1s1(alpha, b)?;
    Ok(FixedPointOracle { r0, z0, r1, s1 })
}

pub fn rate_a(alpha: f64) -> f64 {
    PI * alpha / 4.0
}

pub fn rate_b(alpha: f64) -> f64 {
    (64.0 - PI * PI * (alpha - 2.0).powi(2)).sqrt() / 4.0
}

/// Reference closed form `-(24 b / kappa - 1)` for `beta(eps) / eps`.
pub fn beta1(b: f64) -> f64 {
    -(24.0 * b / kappa() - 1.0)
}

/// `-(24 b / kappa + 1)`, the leading term of `beta(eps) / eps` obtained by
/// expanding `|lambda(alpha, eps)|^2 = 1` to first order in `eps`.
pub fn beta1_expanded(b: f64) -> f64 {
    -(24.0 * b / kappa() + 1.0)
}

/// Order-`eps^2` Lyapunov coefficient with the multilinear forms taken as
/// Taylor coefficients of the map.
pub fn ell12_taylor(b: f64) -> f64 {
    -(PI * PI - 6.0) * b / (3.0 * PI * kappa())
}

/// Order-`eps^2` Lyapunov coefficient with `B = D^2 f`, `C = D^3 f`.
pub fn ell12_standard(b: f64) -> f64 {
    6.0 * ell12_taylor(b)
}

/// Leading and first-order terms of the normalizing frame.
pub fn frame_l0() -> Matrix2<f64> {
    Matrix2::new(-PI / 2.0, -s16() / 2.0, 2.0, 0.0)
}

pub fn frame_l1(b: f64) -> Matrix2<f64> {
    let k = kappa();
    Matrix2::new(
        -16.0 * PI * b / k - PI * PI / 4.0 + PI + 2.0,
        s16() * (-16.0 * b - (PI - 4.0) * k) / (4.0 * k),
        0.0,
        0.0,
    )
}

/// Real parts of the order-`eps^2` normal-form coefficients as printed with
/// the closed-form derivation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PrintedCoefficients {
    pub re_g20: f64,
    pub re_g11: f64,
    pub re_g02: f64,
    pub re_g21: f64,
}

pub fn printed_coefficients(b: f64) -> PrintedCoefficients {
    let k = kappa();
    let t = 8.0 * (2.0 / (16.0 - PI * PI)).sqrt() * b / k;
    let u = 5.0 * PI * b / (2f64.sqrt() * k);
    PrintedCoefficients {
        re_g20: -t - u,
        re_g11: t,
        re_g02: t + u,
        re_g21: 4.0 * b / (PI * k) - 2.0 * PI * b / (3.0 * k),
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NsOracle {
    pub a: f64,
    pub b_rate: f64,
    pub a_prime: f64,
    pub beta1: f64,
    pub ell11: f64,
    pub ell12_taylor: f64,
    pub ell12_standard: f64,
    pub frame_l0: Matrix2<f64>,
    pub frame_l1: Matrix2<f64>,
    pub printed: PrintedCoefficients,
}

pub fn oracle_ns(params: &Pwl3dParams) -> NsOracle {
    let b = params.b;
    NsOracle {
        a: rate_a(params.alpha),
        b_rate: rate_b(params.alpha),
        a_prime: PI / 4.0,
        beta1: beta1(b),
        ell11: 0.0,
        ell12_taylor: ell12_taylor(b),
        ell12_standard: ell12_standard(b),
        frame_l0: frame_l0(),
        frame_l1: frame_l1(b),
        printed: printed_coefficients(b),
    }
}

/// Initial condition of the long Cartesian run on the section.
pub const SECTION_RUN_IC: [f64; 3] = [3.669234340877, 0.0, 0.48488236396962971];
pub const SECTION_RUN_T: f64 = 10000.0;

/// `alpha` of the section run for a given `eps`.
pub fn section_run_alpha(eps: f64) -> f64 {
    eps * (PI * PI / 8.0 - 2.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn upper_first_order_term_at_quarter_period() {
        let m = Pwl3dModel::new(1.0).unwrap();
        let p = ParameterPoint::new(0.0, 1.0).with_extra("b", 1.0);
        let f = m.f1(true, &p, PI / 2.0, PI, 1.0);
        assert!(close(f[0], (PI * PI - 4.0 * PI) / 4.0, 1e-14));
        assert!(close(f[1], -2.0, 1e-15));
    }

    #[test]
    fn lower_first_order_term_at_three_quarter_period() {
        let m = Pwl3dModel::new(1.0).unwrap();
        let p = ParameterPoint::new(0.0, 1.0);
        let f = m.f1(false, &p, PI / 2.0, 2.5, 0.7);
        assert!(close(f[0], 0.0, 1e-14) && close(f[1], -2.5, 1e-15));
    }

    #[test]
    fn zero_epsilon_gives_zero_fields() {
        let m = Pwl3dModel::new(-5.0).unwrap();
        let p = ParameterPoint::new(0.1, 0.0);
        assert_eq!(m.reduced_field(&p, 1.0, 2.0, 3.0).unwrap(), [0.0, 0.0]);
        let v = m.cartesian_field(&p, &Vector3::new(1.0, 2.0, 3.0)).unwrap();
        assert_eq!(v, Vector3::new(-2.0, 1.0, 0.0));
    }

    #[test]
    fn matrix_products() {
        let u = a_plus_times(1.0, [1.0, 1.0, 1.0]);
        assert!(close(u[0], -4.0 * PI * PI / kappa(), 1e-15));
        assert_eq!([u[1], u[2]], [-2.0, 0.5]);
        assert_eq!(a_minus_times(0.0, [1.0, -1.0, 1.0]), [-5.0, 0.0, 1.0]);
    }

    #[test]
    fn cartesian_boundary_flag() {
        let m = Pwl3dModel::new(1.0).unwrap();
        let p = ParameterPoint::new(0.0, 0.1);
        assert!(matches!(
            m.cartesian_field(&p, &Vector3::new(1.0, 0.0, 0.0)),
            Err(Error::Boundary { .. })
        ));
    }

    #[test]
    fn first_order_zero_and_values() {
        let d = oracle_delta1(0.0, PI, 1.0);
        assert!(close(d[0], 0.0, 1e-14) && close(d[1], 0.0, 1e-14));
        let d = oracle_delta1(0.0, 1.0, 0.0);
        assert!(close(d[0], (-PI + PI * PI + 4.0) / 2.0, 1e-14));
        assert!(close(d[1], 2.0 - 5.0 * PI / 2.0, 1e-14));
        assert!(oracle_delta2(1.0, 0.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn r0z0_vanishes_delta1() {
        for a in [-0.4, -0.1, 0.0, 0.3] {
            let [r, z] = oracle_r0z0(a).unwrap();
            let d = oracle_delta1(a, r, z);
            assert!(d[0].abs() < 1e-13 && d[1].abs() < 1e-13);
        }
        let [r, z] = oracle_r0z0(0.0).unwrap();
        assert!(close(r, PI, 1e-15) && close(z, 1.0, 1e-15));
        assert!(oracle_r0z0(1.0 - 16.0 / (PI * PI)).is_err());
    }

    #[test]
    fn first_order_fixed_point_correction_values() {
        // -J^{-1} Delta_2 at (r0, z0), evaluated symbolically.
        let [r1, s1] = oracle_r1s1(0.0, -5.0).unwrap();
        assert!(close(r1, -42.88031, 1e-4), "{r1}");
        assert!(close(s1, 41.39093, 1e-4), "{s1}");
    }

    #[test]
    fn correction_solves_linearized_equation() {
        for (a, b) in [(0.0, -5.0), (0.2, 1.0), (-0.3, 5.0)] {
            let [r0, z0] = oracle_r0z0(a).unwrap();
            let [r1, s1] = oracle_r1s1(a, b).unwrap();
            let j = Matrix2::new(PI * a / 2.0 - PI / 2.0, -2.0, 2.0, PI / 2.0);
            let d2 = oracle_delta2(b, a, r0, z0).unwrap();
            let res = j * nalgebra::Vector2::new(r1, s1) + nalgebra::Vector2::new(d2[0], d2[1]);
            assert!(res.amax() < 1e-10, "{res}");
        }
    }

    #[test]
    fn eigen_rates() {
        assert!(close(rate_b(0.0), (64.0 - 4.0 * PI * PI).sqrt() / 4.0, 1e-15));
        assert!(close(rate_b(0.0), 1.2379818, 1e-6));
        assert_eq!(rate_b(2.0), 2.0);
        assert_eq!(rate_a(0.0), 0.0);
    }

    #[test]
    fn ns_constants() {
        assert!(close(beta1(-5.0), 2.23934, 1e-5));
        assert!(close(beta1(1.0), 0.75214, 1e-5));
        assert!(close(ell12_taylor(-5.0), 0.02120174, 1e-8));
        assert!(close(ell12_taylor(1.0), -0.004240348, 1e-9));
        assert!(close(ell12_standard(-5.0), 0.12721043, 1e-7));
        assert!(ell12_taylor(3.0) < 0.0 && ell12_taylor(-3.0) > 0.0);
        let o = oracle_ns(&Pwl3dParams::new(-5.0, 0.0, 0.01).unwrap());
        assert_eq!(o.ell11, 0.0);
    }

    #[test]
    fn leading_frame_conjugates_jacobian_to_rotation() {
        let j = Matrix2::new(-PI / 2.0, -2.0, 2.0, PI / 2.0);
        let l = frame_l0();
        let m = l.try_inverse().unwrap() * j * l;
        assert!(close(m[(0, 0)], m[(1, 1)], 1e-14));
        assert!(close(m[(0, 1)], -m[(1, 0)], 1e-14));
        assert!(m[(1, 0)] > 0.0);
    }

    #[test]
    fn quotient_expansion_matches_reduced_field() {
        let m = Pwl3dModel::new(-5.0).unwrap();
        for &(th, r, z, a) in &[(0.7, 2.0, 1.5, 0.1), (2.5, 3.0, -1.0, -0.2), (4.0, 1.2, 2.0, 0.0), (5.5, 4.0, 0.3, 0.25)] {
            let q = |e: f64| m.quotient_field(&ParameterPoint::new(a, e).with_extra("b", -5.0), th, r, z);
            let h = 1e-3;
            let (qp, qm, qp2, qm2, q0) = (q(h), q(-h), q(2.0 * h), q(-2.0 * h), q(0.0));
            let p1 = ParameterPoint::new(a, 1.0).with_extra("b", -5.0);
            let upper = th < PI;
            let f1 = m.f1(upper, &p1, th, r, z);
            let f2 = m.f2(upper, &p1, th, r, z);
            for i in 0..2 {
                let d1 = (8.0 * (qp[i] - qm[i]) - (qp2[i] - qm2[i])) / (12.0 * h);
                let d2 = (-qp2[i] + 16.0 * qp[i] - 30.0 * q0[i] + 16.0 * qm[i] - qm2[i]) / (12.0 * h * h);
                assert!(close(d1, f1[i], 1e-8), "F1[{i}] {d1} vs {}", f1[i]);
                assert!(close(d2 / 2.0, f2[i], 1e-8), "F2[{i}] {} vs {}", d2 / 2.0, f2[i]);
            }
        }
    }
}
