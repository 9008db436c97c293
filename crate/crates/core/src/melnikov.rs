//! Averaged (Melnikov) functions of orders one and two.
//!
//! Every integral is split at the switching times so each panel is smooth,
//! and each panel is integrated with 32-point Gauss-Legendre rules under
//! adaptive bisection.

use std::sync::OnceLock;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::integrate::fd_jacobian;
use crate::model::{ParameterPoint, PiecewiseSystem, State};

const GL_NODES: usize = 32;
const QUAD_TOL: f64 = 1e-12;
const MAX_DEPTH: usize = 24;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MelnikovPair {
    pub delta1: State,
    pub delta2: State,
    pub g2_smooth: State,
    pub g2_jump: State,
}

/// Nodes and weights of the `n`-point Gauss-Legendre rule on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

fn rule() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    RULE.get_or_init(|| gauss_legendre(GL_NODES))
}

fn gl_panel<F>(f: &F, a: f64, b: f64) -> Result<State>
where
    F: Fn(f64) -> Result<State>,
{
    let (nodes, weights) = rule();
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    let mut acc: Option<State> = None;
    for (x, w) in nodes.iter().zip(weights) {
        let v = f(mid + half * x)? * (w * half);
        acc = Some(match acc {
            Some(s) => s + v,
            None => v,
        });
    }
    Ok(acc.expect("rule has nodes"))
}

fn adaptive<F>(f: &F, a: f64, b: f64, whole: State, depth: usize) -> Result<State>
where
    F: Fn(f64) -> Result<State>,
{
    let m = 0.5 * (a + b);
    let left = gl_panel(f, a, m)?;
    let right = gl_panel(f, m, b)?;
    let split = &left + &right;
    let diff = (&split - &whole).amax();
    if diff <= QUAD_TOL * split.amax().max(1.0) {
        return Ok(split);
    }
    if depth >= MAX_DEPTH {
        return Err(Error::Quadrature { a, b });
    }
    Ok(adaptive(f, a, m, left, depth + 1)? + adaptive(f, m, b, right, depth + 1)?)
}

/// Adaptive Gauss-Legendre integral of a vector-valued smooth function on `[a, b]`.
pub fn integrate_panel<F>(f: F, a: f64, b: f64) -> Result<State>
where
    F: Fn(f64) -> Result<State>,
{
    if a == b {
        return Ok(State::zeros(f(a)?.len()));
    }
    let whole = gl_panel(&f, a, b)?;
    adaptive(&f, a, b, whole, 0)
}

/// Panel breakpoints `0 = theta_0 < theta_1 < ... < theta_(n+1) = T` at `x`.
pub fn panel_breaks(sys: &PiecewiseSystem, x: &State, p: &ParameterPoint) -> Result<Vec<f64>> {
    let mut breaks = vec![0.0];
    for j in 1..=sys.switcher_count() {
        breaks.push(sys.switching_time(j, x, p));
    }
    breaks.push(sys.period());
    if breaks.windows(2).any(|w| !(w[0] <= w[1])) {
        return Err(Error::Validation(format!(
            "switching times {:?} are not ordered inside [0, T]",
            &breaks[1..breaks.len() - 1]
        )));
    }
    Ok(breaks)
}

/// `int_0^s F_1(t, x) dt` given the panel table.
fn partial_g1(
    sys: &PiecewiseSystem,
    x: &State,
    p: &ParameterPoint,
    breaks: &[f64],
    cumulative: &[State],
    s: f64,
) -> Result<State> {
    let j = breaks
        .windows(2)
        .position(|w| s <= w[1])
        .unwrap_or(breaks.len() - 2);
    let lo = breaks[j];
    let inner = integrate_panel(|t| Ok(sys.term(j, 1, t, x, p)), lo, s)?;
    Ok(&cumulative[j] + inner)
}

/// Integrals `int_0^(theta_j) F_1` for every breakpoint.
fn cumulative_g1(
    sys: &PiecewiseSystem,
    x: &State,
    p: &ParameterPoint,
    breaks: &[f64],
) -> Result<Vec<State>> {
    let mut out = vec![State::zeros(x.len())];
    for j in 0..breaks.len() - 1 {
        let part = integrate_panel(|t| Ok(sys.term(j, 1, t, x, p)), breaks[j], breaks[j + 1])?;
        let next = out[j].clone() + part;
        out.push(next);
    }
    Ok(out)
}

/// `g_1(x) = int_0^T F_1(s, x) ds`.
pub fn averaged_g1(sys: &PiecewiseSystem, x: &State, p: &ParameterPoint) -> Result<State> {
    let breaks = panel_breaks(sys, x, p)?;
    let cum = cumulative_g1(sys, x, p, &breaks)?;
    Ok(cum.last().expect("non-empty").clone())
}

/// `g_2(x) = int_0^T [D_x F_1(s, x) int_0^s F_1(t, x) dt + F_2(s, x)] ds`.
pub fn averaged_g2(sys: &PiecewiseSystem, x: &State, p: &ParameterPoint) -> Result<State> {
    let breaks = panel_breaks(sys, x, p)?;
    let cum = cumulative_g1(sys, x, p, &breaks)?;
    let mut total = State::zeros(x.len());
    for j in 0..breaks.len() - 1 {
        let integrand = |s: f64| -> Result<State> {
            let y1 = partial_g1(sys, x, p, &breaks, &cum, s)?;
            let jac: DMatrix<f64> = fd_jacobian(|z| sys.term(j, 1, s, z, p), x);
            Ok(jac * y1 + sys.term(j, 2, s, x, p))
        };
        total += integrate_panel(integrand, breaks[j], breaks[j + 1])?;
    }
    Ok(total)
}

/// `g~_2(x) = sum_j (F_1^(j-1) - F_1^j)(theta_j, x) (D_x theta_j(x) . int_0^(theta_j) F_1)`.
pub fn jump_correction_g2(sys: &PiecewiseSystem, x: &State, p: &ParameterPoint) -> Result<State> {
    let mut total = State::zeros(x.len());
    if sys.all_switchers_constant() {
        return Ok(total);
    }
    let breaks = panel_breaks(sys, x, p)?;
    let cum = cumulative_g1(sys, x, p, &breaks)?;
    for j in 1..=sys.switcher_count() {
        let sw = &sys.switchers()[j - 1];
        if sw.is_constant() {
            continue;
        }
        let th = breaks[j];
        let jump = sys.term(j - 1, 1, th, x, p) - sys.term(j, 1, th, x, p);
        let grad = sw.gradient(x, p);
        total += jump * grad.dot(&cum[j]);
    }
    Ok(total)
}

pub fn melnikov_pair(sys: &PiecewiseSystem, x: &State, p: &ParameterPoint) -> Result<MelnikovPair> {
    let delta1 = averaged_g1(sys, x, p)?;
    let g2_smooth = averaged_g2(sys, x, p)?;
    let g2_jump = jump_correction_g2(sys, x, p)?;
    Ok(MelnikovPair {
        delta1,
        delta2: &g2_smooth + &g2_jump,
        g2_smooth,
        g2_jump,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{switch_fn, term_fn, SwitchingFunction, ZoneField};
    use crate::pwl3d::{oracle_delta1, oracle_delta2, Pwl3dModel};
    use std::f64::consts::PI;

    #[test]
    fn gauss_legendre_integrates_polynomials_exactly() {
        let (x, w) = gauss_legendre(32);
        assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-14);
        let i: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(62)).sum();
        assert!((i - 2.0 / 63.0).abs() < 1e-14);
    }

    #[test]
    fn zero_field_gives_zero() {
        let zone = ZoneField::new(vec![term_fn(|_, x: &State, _| State::zeros(x.len()))]);
        let sys = PiecewiseSystem::new("zero", 1.0, 2, vec![zone], vec![]).unwrap();
        let p = ParameterPoint::new(0.0, 0.1);
        let m = melnikov_pair(&sys, &State::from_vec(vec![1.0, 2.0]), &p).unwrap();
        assert_eq!(m.delta1, State::zeros(2));
        assert_eq!(m.delta2, State::zeros(2));
    }

    #[test]
    fn linear_smooth_system_second_order() {
        let a = DMatrix::from_row_slice(2, 2, &[0.5, -1.0, 2.0, 0.1]);
        let b = DMatrix::from_row_slice(2, 2, &[0.0, 3.0, -1.0, 0.2]);
        let (a2, b2) = (a.clone(), b.clone());
        let zone = ZoneField::new(vec![
            term_fn(move |_, x: &State, _| &a2 * x),
            term_fn(move |_, x: &State, _| &b2 * x),
        ]);
        let t = 2.0;
        let sys = PiecewiseSystem::new("lin", t, 2, vec![zone], vec![]).unwrap();
        let p = ParameterPoint::new(0.0, 0.1);
        let x = State::from_vec(vec![0.3, -1.2]);
        let g2 = averaged_g2(&sys, &x, &p).unwrap();
        let expect = (&a * &a * (t * t / 2.0) + &b * t) * &x;
        assert!((g2 - expect).amax() < 1e-9);
    }

    #[test]
    fn pwl3d_matches_closed_forms() {
        let sys = Pwl3dModel::new(-5.0).unwrap().reduced_system().unwrap();
        for &(r, z, a) in &[(1.0, -3.0, -0.25), (3.5, 0.5, 0.0), (6.0, 4.0, 0.25)] {
            let p = ParameterPoint::new(a, 0.01).with_extra("b", -5.0);
            let m = melnikov_pair(&sys, &State::from_vec(vec![r, z]), &p).unwrap();
            let d1 = oracle_delta1(a, r, z);
            let d2 = oracle_delta2(-5.0, a, r, z).unwrap();
            assert!((m.delta1[0] - d1[0]).abs() < 1e-10 && (m.delta1[1] - d1[1]).abs() < 1e-10);
            assert!((m.delta2[0] - d2[0]).abs() < 1e-8 && (m.delta2[1] - d2[1]).abs() < 1e-8);
            assert_eq!(m.g2_jump, State::zeros(2));
        }
    }

    #[test]
    fn jump_term_for_state_dependent_switch() {
        let (c0, c1) = ([1.5, -0.5], [-2.0, 0.25]);
        let z0 = ZoneField::new(vec![term_fn(move |_, _, _| State::from_vec(c0.to_vec()))]);
        let z1 = ZoneField::new(vec![term_fn(move |_, _, _| State::from_vec(c1.to_vec()))]);
        let sw = SwitchingFunction::state_dependent(switch_fn(|x, _| PI + 0.1 * x[0]));
        let sys = PiecewiseSystem::new("syn", 2.0 * PI, 2, vec![z0, z1], vec![sw]).unwrap();
        let p = ParameterPoint::new(0.0, 0.1);
        let x = State::from_vec(vec![0.8, -0.3]);
        let th = PI + 0.08;
        let scale = 0.1 * c0[0] * th;
        let m = melnikov_pair(&sys, &x, &p).unwrap();
        assert!((m.g2_jump[0] - (c0[0] - c1[0]) * scale).abs() < 1e-9);
        assert!((m.g2_jump[1] - (c0[1] - c1[1]) * scale).abs() < 1e-9);
        assert_eq!(m.delta2, &m.g2_smooth + &m.g2_jump);
    }
}
