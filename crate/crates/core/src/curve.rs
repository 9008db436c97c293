//! Invariant closed curves of planar maps.
//!
//! A curve is represented in polar form `r(phi)` about the enclosed fixed
//! point. A point on the curve is located first: along a ray from the
//! center, the radius whose orbit returns to the same radius after one turn.
//! Its orbit seeds a ring of nodes, which is then iterated (under the inverse
//! map for repelling curves) and re-fitted at uniform angles until successive
//! rings agree.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::State;
use crate::nsbif::{classify, find_fixed_point, CurveState, NSReport, NsOptions};
use crate::roots::brent;
use crate::tmap::MapFamily;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Forward,
    Inverse,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum CurveStability {
    Attracting,
    Repelling,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CurveOptions {
    pub nodes: usize,
    /// Modes kept in the reported Fourier summary.
    pub modes: usize,
    /// Modes used when fitting the radial function.
    pub fit_modes: usize,
    /// Hausdorff tolerance between successive rings.
    pub tol: f64,
    pub max_sweeps: usize,
    pub seed_radius: Option<f64>,
    pub direction: Option<Direction>,
    pub probe_delta: f64,
    pub probe_iterations: usize,
}

impl Default for CurveOptions {
    fn default() -> Self {
        Self {
            nodes: 128,
            modes: 16,
            fit_modes: 64,
            tol: 1e-9,
            max_sweeps: 10_000,
            seed_radius: None,
            direction: None,
            probe_delta: 1e-3,
            probe_iterations: 200,
        }
    }
}

/// `r(phi) = a0 + sum_k a_k cos(k phi) + b_k sin(k phi)`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RadialFourier {
    pub a0: f64,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

impl RadialFourier {
    pub fn circle(r: f64) -> Self {
        Self {
            a0: r,
            a: Vec::new(),
            b: Vec::new(),
        }
    }

    pub fn eval(&self, phi: f64) -> f64 {
        let mut s = self.a0;
        for (k, (a, b)) in self.a.iter().zip(&self.b).enumerate() {
            let kp = (k + 1) as f64 * phi;
            s += a * kp.cos() + b * kp.sin();
        }
        s
    }

    pub fn truncated(&self, modes: usize) -> Self {
        Self {
            a0: self.a0,
            a: self.a.iter().take(modes).copied().collect(),
            b: self.b.iter().take(modes).copied().collect(),
        }
    }

    /// Least-squares fit to samples `(phi_i, r_i)`.
    pub fn fit(phi: &[f64], r: &[f64], modes: usize) -> Result<Self> {
        let m = phi.len();
        let k = modes.min((m.saturating_sub(1)) / 2);
        let cols = 2 * k + 1;
        let a = DMatrix::from_fn(m, cols, |i, j| {
            if j == 0 {
                1.0
            } else {
                let kk = ((j + 1) / 2) as f64;
                if j % 2 == 1 {
                    (kk * phi[i]).cos()
                } else {
                    (kk * phi[i]).sin()
                }
            }
        });
        let y = State::from_column_slice(r);
        let c = a
            .svd(true, true)
            .solve(&y, 1e-13)
            .map_err(|e| Error::CurveFailure(format!("radial fit: {e}")))?;
        Ok(Self {
            a0: c[0],
            a: (0..k).map(|i| c[2 * i + 1]).collect(),
            b: (0..k).map(|i| c[2 * i + 2]).collect(),
        })
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct InvariantCurve {
    pub alpha: f64,
    pub epsilon: f64,
    pub center: State,
    pub angles: Vec<f64>,
    pub nodes: Vec<State>,
    /// Summary of the radial function with the configured number of modes.
    pub fourier: RadialFourier,
    /// Full radial fit used for distances.
    pub fit: RadialFourier,
    pub residual: f64,
    pub stability: CurveStability,
    pub direction: Direction,
    pub rotation_number_estimate: f64,
    pub winding_number: i64,
    pub seed_radius: f64,
    pub sweeps: usize,
    pub last_change: f64,
}

impl InvariantCurve {
    pub fn point_at(&self, phi: f64) -> State {
        polar_point(&self.center, phi, self.fit.eval(phi))
    }

    pub fn mean_radius(&self) -> f64 {
        self.fit.a0
    }

    /// Euclidean distance from `y` to the fitted curve.
    pub fn distance(&self, y: &State) -> f64 {
        distance_to_curve(&self.center, &self.fit, y)
    }

    /// Signed radial offset of `y` from the curve (positive outside).
    pub fn radial_offset(&self, y: &State) -> f64 {
        let (phi, r) = polar(&self.center, y);
        r - self.fit.eval(phi)
    }

    pub fn samples(&self, n: usize) -> Vec<State> {
        (0..n)
            .map(|i| self.point_at(2.0 * PI * i as f64 / n as f64))
            .collect()
    }
}

fn polar(center: &State, y: &State) -> (f64, f64) {
    let dx = y[0] - center[0];
    let dy = y[1] - center[1];
    (dy.atan2(dx), dx.hypot(dy))
}

fn polar_point(center: &State, phi: f64, r: f64) -> State {
    State::from_vec(vec![center[0] + r * phi.cos(), center[1] + r * phi.sin()])
}

fn wrap(d: f64) -> f64 {
    (d + PI).rem_euclid(2.0 * PI) - PI
}

fn distance_to_curve(center: &State, fit: &RadialFourier, y: &State) -> f64 {
    let (phi0, _) = polar(center, y);
    let d2 = |phi: f64| {
        let c = polar_point(center, phi, fit.eval(phi));
        (c - y).norm_squared()
    };
    let golden = 0.5 * (5f64.sqrt() - 1.0);
    let mut best = (phi0, d2(phi0));
    for k in -8..=8 {
        let p = phi0 + k as f64 * 0.1;
        let v = d2(p);
        if v < best.1 {
            best = (p, v);
        }
    }
    let (mut a, mut b) = (best.0 - 0.1, best.0 + 0.1);
    let mut c = b - golden * (b - a);
    let mut d = a + golden * (b - a);
    let (mut fc, mut fd) = (d2(c), d2(d));
    for _ in 0..80 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - golden * (b - a);
            fc = d2(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + golden * (b - a);
            fd = d2(d);
        }
    }
    fc.min(fd).min(best.1).sqrt()
}

/// Hausdorff distance between two fitted curves, from dense samples.
pub fn hausdorff(a: &InvariantCurve, b: &InvariantCurve) -> f64 {
    let n = 512;
    let ab = a.samples(n).par_iter().map(|p| b.distance(p)).reduce(|| 0.0, f64::max);
    let ba = b.samples(n).par_iter().map(|p| a.distance(p)).reduce(|| 0.0, f64::max);
    ab.max(ba)
}

/// Hausdorff distance between a point cloud and a curve.
pub fn hausdorff_points(points: &[State], curve: &InvariantCurve) -> f64 {
    let to_curve = points.par_iter().map(|p| curve.distance(p)).reduce(|| 0.0, f64::max);
    let to_points = curve
        .samples(512)
        .par_iter()
        .map(|s| points.iter().map(|p| (p - s).norm()).fold(f64::INFINITY, f64::min))
        .reduce(|| 0.0, f64::max);
    to_curve.max(to_points)
}

/// Number of turns of the closed polygon `points` about `center`.
pub fn winding_number(points: &[State], center: &State) -> i64 {
    if points.len() < 3 {
        return 0;
    }
    let mut total = 0.0;
    for i in 0..points.len() {
        let (a, _) = polar(center, &points[i]);
        let (b, _) = polar(center, &points[(i + 1) % points.len()]);
        total += wrap(b - a);
    }
    (total / (2.0 * PI)).round() as i64
}

struct Stepper<'a> {
    family: &'a dyn MapFamily,
    alpha: f64,
    eps: f64,
    direction: Direction,
}

impl Stepper<'_> {
    fn step(&self, x: &State) -> Result<State> {
        match self.direction {
            Direction::Forward => self.family.apply(x, self.alpha, self.eps),
            Direction::Inverse => self.family.inverse(x, self.alpha, self.eps),
        }
    }
}

fn lagrange(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    let mut s = 0.0;
    for i in 0..xs.len() {
        let mut w = 1.0;
        for j in 0..xs.len() {
            if i != j {
                w *= (x - xs[j]) / (xs[i] - xs[j]);
            }
        }
        s += w * ys[i];
    }
    s
}

const RAY_STENCIL: usize = 3;
const MAX_ORBIT: usize = 200_000;

/// Orbit from `x0` until its unwrapped angle has completed `turns` turns,
/// plus a few extra points. Returns unwrapped angles, radii and states.
fn orbit_turns(
    stepper: &Stepper<'_>,
    center: &State,
    x0: &State,
    turns: f64,
) -> Result<(Vec<f64>, Vec<f64>, Vec<State>)> {
    let (phi0, r0) = polar(center, x0);
    let mut psi = vec![phi0];
    let mut rad = vec![r0];
    let mut pts = vec![x0.clone()];
    let mut x = x0.clone();
    let mut extra = None;
    for _ in 0..MAX_ORBIT {
        x = stepper.step(&x)?;
        if !stepper.family.contains(&x) {
            return Err(Error::CurveFailure("orbit left the domain".into()));
        }
        let (phi, r) = polar(center, &x);
        let last = *psi.last().unwrap_or(&phi0);
        let unwrapped = last + wrap(phi - last);
        psi.push(unwrapped);
        rad.push(r);
        pts.push(x.clone());
        if extra.is_none() && (unwrapped - phi0).abs() >= 2.0 * PI * turns {
            extra = Some(RAY_STENCIL);
        }
        if let Some(k) = extra.as_mut() {
            if *k == 0 {
                return Ok((psi, rad, pts));
            }
            *k -= 1;
        }
    }
    Err(Error::CurveFailure("orbit does not rotate about the center".into()))
}

/// Radius at which the orbit from `center + r e(phi0)` re-crosses the ray after one turn.
fn ray_return(stepper: &Stepper<'_>, center: &State, phi0: f64, r: f64) -> Result<f64> {
    let x0 = polar_point(center, phi0, r);
    let (psi, rad, _) = orbit_turns(stepper, center, &x0, 1.0)?;
    let target = if psi[psi.len() - 1] > phi0 {
        phi0 + 2.0 * PI
    } else {
        phi0 - 2.0 * PI
    };
    let n = psi.len();
    let lo = n - 2 * RAY_STENCIL - 1;
    let xs = &psi[lo..];
    let ys = &rad[lo..];
    Ok(lagrange(xs, ys, target))
}

fn polar_samples(center: &State, pts: &[State]) -> (Vec<f64>, Vec<f64>) {
    pts.iter().map(|p| polar(center, p)).unzip()
}

fn ring_nodes(center: &State, fit: &RadialFourier, n: usize) -> (Vec<f64>, Vec<State>) {
    let angles: Vec<f64> = (0..n).map(|i| -PI + 2.0 * PI * i as f64 / n as f64).collect();
    let nodes = angles.iter().map(|&p| polar_point(center, p, fit.eval(p))).collect();
    (angles, nodes)
}

fn max_radial_change(a: &RadialFourier, b: &RadialFourier) -> f64 {
    (0..1024)
        .map(|i| {
            let p = 2.0 * PI * i as f64 / 1024.0;
            (a.eval(p) - b.eval(p)).abs()
        })
        .fold(0.0, f64::max)
}

/// Curve about the fixed point `center`, iterating in `direction`.
pub fn find_curve_from(
    family: &dyn MapFamily,
    center: &State,
    alpha: f64,
    eps: f64,
    direction: Direction,
    seed_radius: f64,
    opts: &CurveOptions,
) -> Result<InvariantCurve> {
    if center.len() != 2 {
        return Err(Error::Validation("invariant curves are computed for planar maps".into()));
    }
    if !(seed_radius > 0.0) {
        return Err(Error::Validation("seed radius must be positive".into()));
    }
    let stepper = Stepper {
        family,
        alpha,
        eps,
        direction,
    };
    let phi0 = 0.0;
    let g = |r: f64| ray_return(&stepper, center, phi0, r).map(|q| q - r);

    let ladder: Vec<f64> = (-16..=8).map(|j| seed_radius * 2f64.powf(j as f64 / 4.0)).collect();
    let vals: Vec<Option<f64>> = ladder
        .par_iter()
        .map(|&r| {
            if family.contains(&polar_point(center, phi0, r)) {
                g(r).ok()
            } else {
                None
            }
        })
        .collect();
    let mut brackets = Vec::new();
    for i in 0..ladder.len() - 1 {
        if let (Some(a), Some(b)) = (vals[i], vals[i + 1]) {
            if a.signum() != b.signum() {
                brackets.push((ladder[i], ladder[i + 1]));
            }
        }
    }
    let (lo, hi) = match brackets
        .iter()
        .min_by(|a, b| (a.0.ln() - seed_radius.ln()).abs().total_cmp(&(b.0.ln() - seed_radius.ln()).abs()))
    {
        Some(b) => *b,
        None => {
            let smallest = ladder
                .iter()
                .zip(&vals)
                .find(|(_, v)| v.is_some())
                .map(|(r, _)| *r)
                .unwrap_or(0.0);
            return Err(Error::RingCollapse { radius: smallest });
        }
    };
    let r_star = brent(g, lo, hi, 1e-13 * hi, 0.0, 200)?;

    let x_star = polar_point(center, phi0, r_star);
    let need = (3 * opts.fit_modes).max(opts.nodes);
    let mut turns = 2.0;
    let (mut psi, mut rad, _) = orbit_turns(&stepper, center, &x_star, turns)?;
    while psi.len() < need {
        turns *= 2.0;
        (psi, rad, _) = orbit_turns(&stepper, center, &x_star, turns)?;
    }
    let mut fit = RadialFourier::fit(&psi, &rad, opts.fit_modes)?;

    let mut sweeps = 0;
    let mut change = f64::INFINITY;
    let sweep_nodes = opts.nodes.max(4 * opts.fit_modes);
    while sweeps < opts.max_sweeps {
        let (_, nodes) = ring_nodes(center, &fit, sweep_nodes);
        let images: Vec<State> = nodes.par_iter().map(|x| stepper.step(x)).collect::<Result<_>>()?;
        let (phi, r) = polar_samples(center, &images);
        let next = RadialFourier::fit(&phi, &r, opts.fit_modes)?;
        change = max_radial_change(&fit, &next);
        fit = next;
        sweeps += 1;
        if change <= opts.tol {
            break;
        }
    }
    if change > opts.tol {
        return Err(Error::CurveFailure(format!(
            "ring did not converge in {} sweeps (last change {change:e})",
            opts.max_sweeps
        )));
    }
    if fit.a0 <= 1e-8 * seed_radius {
        return Err(Error::RingCollapse { radius: fit.a0 });
    }

    let (angles, nodes) = ring_nodes(center, &fit, opts.nodes);
    let forward: Vec<State> = nodes
        .par_iter()
        .map(|x| family.apply(x, alpha, eps))
        .collect::<Result<_>>()?;
    let residual = forward
        .par_iter()
        .map(|y| distance_to_curve(center, &fit, y))
        .reduce(|| 0.0, f64::max);
    let rotation = nodes
        .iter()
        .zip(&forward)
        .map(|(x, y)| wrap(polar(center, y).0 - polar(center, x).0))
        .sum::<f64>()
        / (2.0 * PI * nodes.len() as f64);
    let winding = winding_number(&forward, center);
    Ok(InvariantCurve {
        alpha,
        epsilon: eps,
        center: center.clone(),
        angles,
        nodes,
        fourier: fit.truncated(opts.modes),
        fit,
        residual,
        stability: match direction {
            Direction::Forward => CurveStability::Attracting,
            Direction::Inverse => CurveStability::Repelling,
        },
        direction,
        rotation_number_estimate: rotation,
        winding_number: winding,
        seed_radius,
        sweeps,
        last_change: change,
    })
}

/// Seed radius from the normal form: `|w|^2 = -(|lambda| - 1) / ell1` in the
/// standard convention, mapped through the normalizing frame.
pub fn predicted_radius(report: &NSReport, alpha: f64) -> Option<f64> {
    let lam_defect = report.epsilon.abs().powi(report.order as i32) * report.transversality * (alpha - report.beta_eps);
    let w2 = -lam_defect / report.ell1_standard;
    if !(w2 > 0.0) {
        return None;
    }
    let l = DMatrix::from_fn(2, 2, |i, j| report.normal_frame[i][j]);
    let sv = l.singular_values();
    let scale = (sv[0] * sv[1]).sqrt();
    Some(scale * (2.0 * w2).sqrt())
}

/// Curve predicted by the report on this side of `beta(eps)`.
pub fn find_curve(
    family: &dyn MapFamily,
    alpha: f64,
    eps: f64,
    report: &NSReport,
    ns_opts: &NsOptions,
    opts: &CurveOptions,
) -> Result<InvariantCurve> {
    let class = classify(report, alpha);
    let direction = match (opts.direction, class.curve) {
        (Some(d), _) => d,
        (None, CurveState::Attracting) => Direction::Forward,
        (None, CurveState::Repelling) => Direction::Inverse,
        (None, CurveState::None) if alpha == report.beta_eps => {
            return Err(Error::RingCollapse { radius: 0.0 });
        }
        (None, _) => {
            return Err(Error::CurveFailure(format!(
                "no invariant curve is predicted at alpha = {alpha} ({})",
                class.label()
            )))
        }
    };
    let center = find_fixed_point(family, &report.fixed_point, alpha, eps, ns_opts)?.point;
    let seed = opts
        .seed_radius
        .or_else(|| predicted_radius(report, alpha))
        .unwrap_or(0.1);
    find_curve_from(family, &center, alpha, eps, direction, seed, opts)
}

#[derive(Clone, Debug, Serialize)]
pub struct StabilityEvidence {
    pub delta: f64,
    pub iterations: usize,
    /// Mean log growth per iterate of the offset, for seeds inside and outside.
    pub forward_rates: [f64; 2],
    pub inverse_rates: [f64; 2],
    pub verdict: Option<CurveStability>,
    /// Agreement with the stability tag of the curve, when a verdict exists.
    pub consistent: Option<bool>,
}

fn offset_rate(
    curve: &InvariantCurve,
    stepper: &Stepper<'_>,
    delta: f64,
    iterations: usize,
) -> Result<f64> {
    let angles = [0.3, 1.9, 3.5, 5.1];
    let mut total = 0.0;
    for phi in angles {
        let r = curve.fit.eval(phi) + delta;
        let mut x = polar_point(&curve.center, phi, r);
        let d0 = curve.radial_offset(&x).abs();
        for _ in 0..iterations {
            x = stepper.step(&x)?;
        }
        let d1 = curve.radial_offset(&x).abs();
        total += (d1 / d0).ln() / iterations as f64;
    }
    Ok(total / angles.len() as f64)
}

/// Drift of seeds launched at radial offsets `+-delta` from the curve.
pub fn stability_probe(
    family: &dyn MapFamily,
    curve: &InvariantCurve,
    delta: f64,
    iterations: usize,
) -> Result<StabilityEvidence> {
    if delta == 0.0 || iterations == 0 {
        return Ok(StabilityEvidence {
            delta,
            iterations,
            forward_rates: [0.0; 2],
            inverse_rates: [0.0; 2],
            verdict: None,
            consistent: None,
        });
    }
    let mk = |d| Stepper {
        family,
        alpha: curve.alpha,
        eps: curve.epsilon,
        direction: d,
    };
    let fwd = mk(Direction::Forward);
    let inv = mk(Direction::Inverse);
    let forward_rates = [
        offset_rate(curve, &fwd, -delta, iterations)?,
        offset_rate(curve, &fwd, delta, iterations)?,
    ];
    let inverse_rates = [
        offset_rate(curve, &inv, -delta, iterations)?,
        offset_rate(curve, &inv, delta, iterations)?,
    ];
    let noise = 1e-9;
    let verdict = if forward_rates.iter().all(|r| *r < -noise) && inverse_rates.iter().all(|r| *r > noise) {
        Some(CurveStability::Attracting)
    } else if forward_rates.iter().all(|r| *r > noise) && inverse_rates.iter().all(|r| *r < -noise) {
        Some(CurveStability::Repelling)
    } else {
        None
    };
    Ok(StabilityEvidence {
        delta,
        iterations,
        forward_rates,
        inverse_rates,
        consistent: verdict.map(|v| v == curve.stability),
        verdict,
    })
}

/// Mean log growth per iterate of a small offset from a fixed point under the forward map.
pub fn fixed_point_probe(
    family: &dyn MapFamily,
    center: &State,
    alpha: f64,
    eps: f64,
    delta: f64,
    iterations: usize,
) -> Result<f64> {
    let mut total = 0.0;
    for phi in [0.0, PI / 2.0] {
        let mut x = polar_point(center, phi, delta);
        for _ in 0..iterations {
            x = family.apply(&x, alpha, eps)?;
        }
        total += ((&x - center).norm() / delta).ln() / iterations as f64;
    }
    Ok(total / 2.0)
}

#[derive(Clone, Debug, Serialize)]
pub struct PersistenceResult {
    pub curve: InvariantCurve,
    pub hausdorff_shift: f64,
}

/// Re-locates `curve` for a perturbed family, seeded from the original.
pub fn persistence_probe(
    perturbed: &dyn MapFamily,
    curve: &InvariantCurve,
    ns_opts: &NsOptions,
    opts: &CurveOptions,
) -> Result<PersistenceResult> {
    let center = find_fixed_point(perturbed, &curve.center, curve.alpha, curve.epsilon, ns_opts)?.point;
    let seed = curve.fit.eval(0.0).max(1e-12);
    let new = find_curve_from(perturbed, &center, curve.alpha, curve.epsilon, curve.direction, seed, opts)?;
    let shift = hausdorff(curve, &new);
    Ok(PersistenceResult {
        curve: new,
        hausdorff_shift: shift,
    })
}
