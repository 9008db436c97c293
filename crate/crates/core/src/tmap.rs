//! The time-`T` map `P_T(x) = phi(T, x)` and its derivatives up to order three.
//!
//! Higher derivatives are central differences of the deviation
//! `g(x) = P_T(x) - x`. When differencing a flow-based map the integrator runs
//! on a frozen step schedule (uniform steps per zone, counted once at the base
//! point) so the discrete map is a smooth function of the initial state.

use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::integrate::{fd_jacobian, flow, flow_between, flow_with_variationals, IntegratorOptions};
use crate::melnikov::{averaged_g1, melnikov_pair, MelnikovPair};
use crate::model::{ParameterPoint, PiecewiseSystem, State};

pub type DeviationFn<'a> = Box<dyn Fn(&State) -> Result<State> + Send + Sync + 'a>;

/// A near-identity planar map family `x -> x + g(x; alpha, eps)`.
pub trait MapFamily: Send + Sync {
    fn dim(&self) -> usize;

    /// `g(x) = f(x) - x`.
    fn deviation(&self, x: &State, alpha: f64, eps: f64) -> Result<State>;

    fn apply(&self, x: &State, alpha: f64, eps: f64) -> Result<State> {
        Ok(x + self.deviation(x, alpha, eps)?)
    }

    fn jacobian(&self, x: &State, alpha: f64, eps: f64) -> Result<DMatrix<f64>> {
        let err = std::cell::RefCell::new(None);
        let j = fd_jacobian(
            |y| match self.deviation(y, alpha, eps) {
                Ok(v) => v,
                Err(e) => {
                    *err.borrow_mut() = Some(e);
                    State::zeros(y.len())
                }
            },
            x,
        );
        match err.into_inner() {
            Some(e) => Err(e),
            None => Ok(j + DMatrix::identity(x.len(), x.len())),
        }
    }

    /// `f^(-1)(x)`; the default solves `y + g(y) = x` by Newton iteration.
    fn inverse(&self, x: &State, alpha: f64, eps: f64) -> Result<State> {
        let mut y = x - self.deviation(x, alpha, eps)?;
        for _ in 0..50 {
            let r = &y + self.deviation(&y, alpha, eps)? - x;
            if r.amax() <= 1e-14 * x.amax().max(1.0) {
                return Ok(y);
            }
            let j = self.jacobian(&y, alpha, eps)?;
            let step = j
                .lu()
                .solve(&r)
                .ok_or_else(|| Error::Singular("map jacobian during inversion".into()))?;
            y -= step;
        }
        Err(Error::Newton("map inversion did not converge".into()))
    }

    /// A deviation that is smooth in `x` near `x0`, used for differencing.
    fn smooth_deviation(&self, _x0: &State, alpha: f64, eps: f64) -> Result<DeviationFn<'_>> {
        Ok(Box::new(move |y: &State| self.deviation(y, alpha, eps)))
    }

    fn contains(&self, _x: &State) -> bool {
        true
    }

    /// Averaged functions when the family comes from a flow.
    fn melnikov(&self, _x: &State, _alpha: f64) -> Option<Result<MelnikovPair>> {
        None
    }

    /// First-order averaged function alone, cheaper than [`MapFamily::melnikov`].
    fn delta1(&self, _x: &State, _alpha: f64) -> Option<Result<State>> {
        None
    }

    fn alpha_range(&self) -> (f64, f64) {
        (f64::NEG_INFINITY, f64::INFINITY)
    }
}

/// Map family given directly by its deviation.
#[derive(Clone)]
pub struct ClosureFamily {
    dim: usize,
    dev: Arc<dyn Fn(&State, f64, f64) -> State + Send + Sync>,
}

impl ClosureFamily {
    pub fn new<F>(dim: usize, dev: F) -> Self
    where
        F: Fn(&State, f64, f64) -> State + Send + Sync + 'static,
    {
        Self {
            dim,
            dev: Arc::new(dev),
        }
    }
}

impl MapFamily for ClosureFamily {
    fn dim(&self) -> usize {
        self.dim
    }
    fn deviation(&self, x: &State, alpha: f64, eps: f64) -> Result<State> {
        Ok((self.dev)(x, alpha, eps))
    }
}

/// The time-`T` map of a piecewise system, as a family in `(alpha, eps)`.
#[derive(Clone, Debug)]
pub struct TimeTMap {
    pub sys: PiecewiseSystem,
    /// Carries the extra parameters; `alpha` and `epsilon` are replaced per call.
    pub base: ParameterPoint,
    pub opts: IntegratorOptions,
}

impl TimeTMap {
    pub fn new(sys: PiecewiseSystem, base: ParameterPoint, opts: IntegratorOptions) -> Self {
        Self { sys, base, opts }
    }

    pub fn point(&self, alpha: f64, eps: f64) -> ParameterPoint {
        ParameterPoint {
            alpha,
            epsilon: eps,
            extras: self.base.extras.clone(),
        }
    }

    /// Accepted steps per zone of an adaptive run from `x`.
    pub fn step_schedule(&self, x: &State, alpha: f64, eps: f64) -> Result<Vec<usize>> {
        let tr = flow(&self.sys, x, &self.point(alpha, eps), self.sys.period(), &self.opts)?;
        Ok(tr.zone_steps.iter().map(|n| (2 * n).max(8)).collect())
    }
}

impl MapFamily for TimeTMap {
    fn dim(&self) -> usize {
        self.sys.dim()
    }

    fn deviation(&self, x: &State, alpha: f64, eps: f64) -> Result<State> {
        let tr = flow(&self.sys, x, &self.point(alpha, eps), self.sys.period(), &self.opts)?;
        Ok(tr.deviation)
    }

    fn apply(&self, x: &State, alpha: f64, eps: f64) -> Result<State> {
        Ok(flow(&self.sys, x, &self.point(alpha, eps), self.sys.period(), &self.opts)?.end_state)
    }

    fn jacobian(&self, x: &State, alpha: f64, eps: f64) -> Result<DMatrix<f64>> {
        let (_, j) = flow_with_variationals(&self.sys, x, &self.point(alpha, eps), self.sys.period(), &self.opts)?;
        Ok(j)
    }

    fn inverse(&self, x: &State, alpha: f64, eps: f64) -> Result<State> {
        let t = self.sys.period();
        Ok(flow_between(&self.sys, x, &self.point(alpha, eps), t, 0.0, &self.opts)?.end_state)
    }

    fn smooth_deviation(&self, x0: &State, alpha: f64, eps: f64) -> Result<DeviationFn<'_>> {
        let frozen = self.opts.frozen(self.step_schedule(x0, alpha, eps)?);
        let p = self.point(alpha, eps);
        let t = self.sys.period();
        Ok(Box::new(move |y: &State| Ok(flow(&self.sys, y, &p, t, &frozen)?.deviation)))
    }

    fn contains(&self, x: &State) -> bool {
        self.sys.domain().contains(x)
    }

    fn melnikov(&self, x: &State, alpha: f64) -> Option<Result<MelnikovPair>> {
        Some(melnikov_pair(&self.sys, x, &self.point(alpha, 0.0)))
    }

    fn delta1(&self, x: &State, alpha: f64) -> Option<Result<State>> {
        Some(averaged_g1(&self.sys, x, &self.point(alpha, 0.0)))
    }

    fn alpha_range(&self) -> (f64, f64) {
        self.sys.alpha_range()
    }
}

/// `P_T(x)` with default integrator settings.
pub fn time_t_map(sys: &PiecewiseSystem, x: &State, p: &ParameterPoint) -> Result<State> {
    Ok(flow(sys, x, p, sys.period(), &IntegratorOptions::default())?.end_state)
}

/// `P_T^(-1)(x)` by backward integration.
pub fn inverse_time_t_map(sys: &PiecewiseSystem, x: &State, p: &ParameterPoint) -> Result<State> {
    let t = sys.period();
    Ok(flow_between(sys, x, p, t, 0.0, &IntegratorOptions::default())?.end_state)
}

/// Symmetric `n x n x n` array `B[k][i][j] = d^2 g_k / dx_i dx_j`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Tensor3 {
    pub n: usize,
    pub data: Vec<f64>,
}

impl Tensor3 {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![0.0; n * n * n],
        }
    }

    pub fn get(&self, k: usize, i: usize, j: usize) -> f64 {
        self.data[(k * self.n + i) * self.n + j]
    }

    fn set_sym(&mut self, k: usize, i: usize, j: usize, v: f64) {
        let n = self.n;
        self.data[(k * n + i) * n + j] = v;
        self.data[(k * n + j) * n + i] = v;
    }

    pub fn apply(&self, u: &State, v: &State) -> State {
        let n = self.n;
        State::from_fn(n, |k, _| {
            let mut s = 0.0;
            for i in 0..n {
                for j in 0..n {
                    s += self.get(k, i, j) * u[i] * v[j];
                }
            }
            s
        })
    }

    pub fn apply_c(&self, u: &[Complex64], v: &[Complex64]) -> Vec<Complex64> {
        let n = self.n;
        (0..n)
            .map(|k| {
                let mut s = Complex64::new(0.0, 0.0);
                for i in 0..n {
                    for j in 0..n {
                        s += u[i] * v[j] * self.get(k, i, j);
                    }
                }
                s
            })
            .collect()
    }

    /// `B'(u, v) = L^(-1) B(L u, L v)`.
    pub fn transform(&self, l: &DMatrix<f64>, linv: &DMatrix<f64>) -> Tensor3 {
        let n = self.n;
        let mut out = Tensor3::zeros(n);
        for k in 0..n {
            for i in 0..n {
                for j in 0..n {
                    let mut s = 0.0;
                    for m in 0..n {
                        let mut inner = 0.0;
                        for a in 0..n {
                            for b in 0..n {
                                inner += self.get(m, a, b) * l[(a, i)] * l[(b, j)];
                            }
                        }
                        s += linv[(k, m)] * inner;
                    }
                    out.data[(k * n + i) * n + j] = s;
                }
            }
        }
        out
    }

    pub fn scaled(&self, s: f64) -> Tensor3 {
        Tensor3 {
            n: self.n,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    pub fn amax(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Symmetric `C[k][i][j][l] = d^3 g_k / dx_i dx_j dx_l`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Tensor4 {
    pub n: usize,
    pub data: Vec<f64>,
}

impl Tensor4 {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![0.0; n * n * n * n],
        }
    }

    fn idx(&self, k: usize, i: usize, j: usize, l: usize) -> usize {
        ((k * self.n + i) * self.n + j) * self.n + l
    }

    pub fn get(&self, k: usize, i: usize, j: usize, l: usize) -> f64 {
        self.data[self.idx(k, i, j, l)]
    }

    fn set_sym(&mut self, k: usize, i: usize, j: usize, l: usize, v: f64) {
        for (a, b, c) in [(i, j, l), (i, l, j), (j, i, l), (j, l, i), (l, i, j), (l, j, i)] {
            let id = self.idx(k, a, b, c);
            self.data[id] = v;
        }
    }

    pub fn apply(&self, u: &State, v: &State, w: &State) -> State {
        let n = self.n;
        State::from_fn(n, |k, _| {
            let mut s = 0.0;
            for i in 0..n {
                for j in 0..n {
                    for l in 0..n {
                        s += self.get(k, i, j, l) * u[i] * v[j] * w[l];
                    }
                }
            }
            s
        })
    }

    pub fn apply_c(&self, u: &[Complex64], v: &[Complex64], w: &[Complex64]) -> Vec<Complex64> {
        let n = self.n;
        (0..n)
            .map(|k| {
                let mut s = Complex64::new(0.0, 0.0);
                for i in 0..n {
                    for j in 0..n {
                        for l in 0..n {
                            s += u[i] * v[j] * w[l] * self.get(k, i, j, l);
                        }
                    }
                }
                s
            })
            .collect()
    }

    /// `C'(u, v, w) = L^(-1) C(L u, L v, L w)`.
    pub fn transform(&self, l: &DMatrix<f64>, linv: &DMatrix<f64>) -> Tensor4 {
        let n = self.n;
        let mut out = Tensor4::zeros(n);
        for k in 0..n {
            for i in 0..n {
                for j in 0..n {
                    for q in 0..n {
                        let mut s = 0.0;
                        for m in 0..n {
                            let mut inner = 0.0;
                            for a in 0..n {
                                for b in 0..n {
                                    for c in 0..n {
                                        inner += self.get(m, a, b, c) * l[(a, i)] * l[(b, j)] * l[(c, q)];
                                    }
                                }
                            }
                            s += linv[(k, m)] * inner;
                        }
                        let id = out.idx(k, i, j, q);
                        out.data[id] = s;
                    }
                }
            }
        }
        out
    }

    pub fn scaled(&self, s: f64) -> Tensor4 {
        Tensor4 {
            n: self.n,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    pub fn amax(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Step rule for the second and third derivatives: `h = rel * max(1, |x|)`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FdScheme {
    pub h2_rel: f64,
    pub h3_rel: f64,
    /// Combine steps `h` and `2h` to cancel the leading truncation term.
    pub richardson: bool,
}

impl Default for FdScheme {
    fn default() -> Self {
        Self {
            h2_rel: f64::EPSILON.powf(0.25),
            h3_rel: f64::EPSILON.powf(1.0 / 6.0),
            richardson: false,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct MapSample {
    pub point: State,
    pub image: State,
    pub jacobian: DMatrix<f64>,
    pub bilinear: Tensor3,
    pub trilinear: Tensor4,
    /// Rough roundoff bounds for the bilinear and trilinear entries.
    pub noise_estimate: (f64, f64),
    pub warnings: Vec<String>,
}

fn unit(n: usize, i: usize, h: f64) -> State {
    let mut e = State::zeros(n);
    e[i] = h;
    e
}

fn eval_all(f: &(dyn Fn(&State) -> Result<State> + Send + Sync), pts: &[State]) -> Result<Vec<State>> {
    pts.par_iter().map(f).collect()
}

fn tensors_at(
    f: &(dyn Fn(&State) -> Result<State> + Send + Sync),
    x: &State,
    h2: f64,
    h3: f64,
) -> Result<(Tensor3, Tensor4)> {
    let n = x.len();
    let mut pts: Vec<State> = vec![x.clone()];
    let mut push = |v: State| {
        pts.push(v);
        pts.len() - 1
    };
    let mut b_pure = Vec::new();
    let mut b_mixed = Vec::new();
    for i in 0..n {
        let e = unit(n, i, h2);
        b_pure.push((i, push(x + &e), push(x - &e)));
        for j in i + 1..n {
            let f2 = unit(n, j, h2);
            b_mixed.push((
                i,
                j,
                [push(x + &e + &f2), push(x + &e - &f2), push(x - &e + &f2), push(x - &e - &f2)],
            ));
        }
    }
    let mut c_pure = Vec::new();
    let mut c_iij = Vec::new();
    let mut c_ijl = Vec::new();
    for i in 0..n {
        let e = unit(n, i, h3);
        c_pure.push((
            i,
            [push(x + &e * 2.0), push(x + &e), push(x - &e), push(x - &e * 2.0)],
        ));
        for j in 0..n {
            if j == i {
                continue;
            }
            let f2 = unit(n, j, h3);
            let mut ids = [[0usize; 2]; 3];
            for (a, s) in [-1.0, 0.0, 1.0].iter().enumerate() {
                let y = x + &e * *s;
                ids[a] = [push(&y + &f2), push(&y - &f2)];
            }
            c_iij.push((i, j, ids));
        }
        for j in i + 1..n {
            for l in j + 1..n {
                let mut ids = Vec::new();
                for si in [1.0, -1.0] {
                    for sj in [1.0, -1.0] {
                        for sl in [1.0, -1.0] {
                            let y = x + unit(n, i, si * h3) + unit(n, j, sj * h3) + unit(n, l, sl * h3);
                            ids.push((si * sj * sl, push(y)));
                        }
                    }
                }
                c_ijl.push((i, j, l, ids));
            }
        }
    }
    let vals = eval_all(f, &pts)?;
    let g0 = &vals[0];
    let mut b = Tensor3::zeros(n);
    let mut c = Tensor4::zeros(n);
    for k in 0..n {
        for &(i, p, m) in &b_pure {
            b.set_sym(k, i, i, (vals[p][k] - 2.0 * g0[k] + vals[m][k]) / (h2 * h2));
        }
        for &(i, j, ids) in &b_mixed {
            let v = (vals[ids[0]][k] - vals[ids[1]][k] - vals[ids[2]][k] + vals[ids[3]][k]) / (4.0 * h2 * h2);
            b.set_sym(k, i, j, v);
        }
        for &(i, ids) in &c_pure {
            let v = (vals[ids[0]][k] - 2.0 * vals[ids[1]][k] + 2.0 * vals[ids[2]][k] - vals[ids[3]][k])
                / (2.0 * h3 * h3 * h3);
            c.set_sym(k, i, i, i, v);
        }
        for (i, j, ids) in &c_iij {
            let d: Vec<f64> = ids
                .iter()
                .map(|[p, m]| (vals[*p][k] - vals[*m][k]) / (2.0 * h3))
                .collect();
            let v = (d[2] - 2.0 * d[1] + d[0]) / (h3 * h3);
            c.set_sym(k, *i, *i, *j, v);
        }
        for (i, j, l, ids) in &c_ijl {
            let v: f64 = ids.iter().map(|(s, id)| s * vals[*id][k]).sum::<f64>() / (8.0 * h3 * h3 * h3);
            c.set_sym(k, *i, *j, *l, v);
        }
    }
    Ok((b, c))
}

fn check_stencil(family: &dyn MapFamily, x: &State, reach: f64) -> Result<()> {
    let n = x.len();
    for i in 0..n {
        for s in [-1.0, 1.0] {
            let y = x + unit(n, i, s * reach);
            if !family.contains(&y) {
                return Err(Error::StencilDomain(y.iter().copied().collect()));
            }
        }
    }
    Ok(())
}

/// Jacobian, bilinear and trilinear forms of the map at `x`.
pub fn derivatives_at(
    family: &dyn MapFamily,
    x: &State,
    alpha: f64,
    eps: f64,
    scheme: &FdScheme,
) -> Result<MapSample> {
    let scale = x.norm().max(1.0);
    let h2 = scheme.h2_rel * scale;
    let h3 = scheme.h3_rel * scale;
    let mult = if scheme.richardson { 2.0 } else { 1.0 };
    check_stencil(family, x, mult * (2.0 * h3).max(h2) * (x.len() as f64).sqrt())?;
    let dev = family.smooth_deviation(x, alpha, eps)?;
    let (mut b, mut c) = tensors_at(dev.as_ref(), x, h2, h3)?;
    if scheme.richardson {
        let (b2, c2) = tensors_at(dev.as_ref(), x, 2.0 * h2, 2.0 * h3)?;
        for (v, w) in b.data.iter_mut().zip(&b2.data) {
            *v = (4.0 * *v - w) / 3.0;
        }
        for (v, w) in c.data.iter_mut().zip(&c2.data) {
            *v = (4.0 * *v - w) / 3.0;
        }
    }
    let g0 = dev(x)?;
    let jacobian = family.jacobian(x, alpha, eps)?;
    let delta = 8.0 * f64::EPSILON * g0.amax().max(f64::MIN_POSITIVE);
    let noise = (4.0 * delta / (h2 * h2), 6.0 * delta / (h3 * h3 * h3));
    let mut warnings = Vec::new();
    if b.amax() > 0.0 && noise.0 > 1e-3 * b.amax() {
        warnings.push(format!("bilinear form near the noise floor (estimated error {:.2e})", noise.0));
    }
    if c.amax() > 0.0 && noise.1 > 1e-3 * c.amax() {
        warnings.push(format!("trilinear form near the noise floor (estimated error {:.2e})", noise.1));
    }
    Ok(MapSample {
        point: x.clone(),
        image: x + g0,
        jacobian,
        bilinear: b,
        trilinear: c,
        noise_estimate: noise,
        warnings,
    })
}
