//! Dormand-Prince 5(4) integration of piecewise systems.
//!
//! Crossings of the switching times are bracketed along accepted steps and
//! refined with Brent's method on exact Runge-Kutta substeps, after which
//! integration restarts at the crossing on the next zone's field. Constant
//! switching times are hit exactly by clipping the step. The state is carried
//! as a fixed base plus an accumulated deviation, which keeps the small
//! increments of a near-identity flow from being rounded away.

use std::io::Write;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{ParameterPoint, PiecewiseSystem, State, SwitchedSystem, SwitchingFunction};
use crate::output::fmt_f64;
use crate::roots::brent;

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;

const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

#[derive(Clone, Debug, PartialEq)]
pub struct IntegratorOptions {
    pub rtol: f64,
    pub atol: f64,
    /// Bound on `|theta_j(x(tau)) - tau|` at a located crossing.
    pub event_tol: f64,
    /// Largest step as a fraction of the period.
    pub max_step_fraction: f64,
    pub max_steps: usize,
    /// Record accepted samples and dense-output segments.
    pub dense: bool,
    /// Uniform step counts per zone; disables error control.
    pub fixed_steps: Option<Vec<usize>>,
}

impl Default for IntegratorOptions {
    fn default() -> Self {
        Self {
            rtol: 1e-10,
            atol: 1e-10,
            event_tol: 1e-12,
            max_step_fraction: 0.125,
            max_steps: 1_000_000,
            dense: false,
            fixed_steps: None,
        }
    }
}

impl IntegratorOptions {
    pub fn with_tolerances(rtol: f64, atol: f64) -> Self {
        Self {
            rtol,
            atol,
            ..Self::default()
        }
    }

    pub fn dense(mut self) -> Self {
        self.dense = true;
        self
    }

    pub fn frozen(&self, zone_steps: Vec<usize>) -> Self {
        Self {
            fixed_steps: Some(zone_steps),
            dense: false,
            ..self.clone()
        }
    }
}

/// Hermite-type quartic interpolant over one accepted step.
#[derive(Clone, Debug)]
pub struct DenseSegment {
    pub t0: f64,
    pub t1: f64,
    coeffs: [State; 5],
}

impl DenseSegment {
    pub fn eval(&self, t: f64) -> State {
        let s = (t - self.t0) / (self.t1 - self.t0);
        let s1 = 1.0 - s;
        let c = &self.coeffs;
        &c[0] + (&c[1] + (&c[2] + (&c[3] + &c[4] * s1) * s) * s1) * s
    }

    fn contains(&self, t: f64) -> bool {
        let (lo, hi) = if self.t0 <= self.t1 {
            (self.t0, self.t1)
        } else {
            (self.t1, self.t0)
        };
        t >= lo && t <= hi
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SwitchEvent {
    /// 1-based switching-function index.
    pub index: usize,
    pub tau: f64,
    /// `|tau - theta_index(x(tau))|`.
    pub residual: f64,
    pub from_zone: usize,
    pub to_zone: usize,
}

#[derive(Clone, Debug)]
pub struct FlowTrace {
    pub t_start: f64,
    pub t_end: f64,
    pub start_state: State,
    pub end_state: State,
    /// `end_state - start_state` accumulated without cancellation.
    pub deviation: State,
    pub switch_times: Vec<SwitchEvent>,
    /// Accepted step endpoints, populated when dense output is requested.
    pub samples: Vec<(f64, State)>,
    pub segments: Vec<DenseSegment>,
    /// Accepted steps spent in each zone.
    pub zone_steps: Vec<usize>,
    pub accepted_steps: usize,
    pub rejected_steps: usize,
}

impl FlowTrace {
    /// Dense-output state at `t`; `None` outside the span or without dense output.
    pub fn state_at(&self, t: f64) -> Option<State> {
        self.segments
            .iter()
            .find(|s| s.contains(t))
            .map(|s| s.eval(t))
    }

    pub fn max_event_residual(&self) -> f64 {
        self.switch_times
            .iter()
            .map(|e| e.residual)
            .fold(0.0, f64::max)
    }

    /// CSV with columns `t, x1, ..., xn` and the switching times as comments.
    pub fn write_csv<W: Write>(&self, w: &mut W, header: &[String]) -> std::io::Result<()> {
        for line in header {
            writeln!(w, "# {line}")?;
        }
        for e in &self.switch_times {
            writeln!(
                w,
                "# switch index={} tau={} residual={}",
                e.index,
                fmt_f64(e.tau),
                fmt_f64(e.residual)
            )?;
        }
        let dim = self.start_state.len();
        let cols: Vec<String> = std::iter::once("t".to_string())
            .chain((1..=dim).map(|i| format!("x{i}")))
            .collect();
        writeln!(w, "{}", cols.join(","))?;
        for (t, x) in &self.samples {
            let mut row = vec![fmt_f64(*t)];
            row.extend(x.iter().map(|v| fmt_f64(*v)));
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

struct Step {
    d_new: State,
    k: [State; 7],
    err: f64,
}

fn rms_error(err: &State, y0: &State, y1: &State, atol: f64, rtol: f64) -> f64 {
    let n = err.len() as f64;
    let s: f64 = err
        .iter()
        .zip(y0.iter().zip(y1.iter()))
        .map(|(e, (a, b))| {
            let sc = atol + rtol * a.abs().max(b.abs());
            (e / sc).powi(2)
        })
        .sum();
    (s / n).sqrt()
}

/// One Dormand-Prince step from `base + d` with first stage `k1`.
fn dopri_step<F>(rhs: &F, t: f64, base: &State, d: &State, h: f64, k1: &State, atol: f64, rtol: f64) -> Step
where
    F: Fn(f64, &State) -> State,
{
    let at = |dd: State| -> State { base + (d + dd) };
    let k2 = rhs(t + C2 * h, &at(k1 * (h * A21)));
    let k3 = rhs(t + C3 * h, &at((k1 * A31 + &k2 * A32) * h));
    let k4 = rhs(t + C4 * h, &at((k1 * A41 + &k2 * A42 + &k3 * A43) * h));
    let k5 = rhs(
        t + C5 * h,
        &at((k1 * A51 + &k2 * A52 + &k3 * A53 + &k4 * A54) * h),
    );
    let k6 = rhs(
        t + h,
        &at((k1 * A61 + &k2 * A62 + &k3 * A63 + &k4 * A64 + &k5 * A65) * h),
    );
    let incr = (k1 * A71 + &k3 * A73 + &k4 * A74 + &k5 * A75 + &k6 * A76) * h;
    let d_new = d + incr;
    let y_new = base + &d_new;
    let k7 = rhs(t + h, &y_new);
    let errv = (k1 * E1 + &k3 * E3 + &k4 * E4 + &k5 * E5 + &k6 * E6 + &k7 * E7) * h;
    let err = rms_error(&errv, &(base + d), &y_new, atol, rtol);
    Step {
        d_new,
        k: [k1.clone(), k2, k3, k4, k5, k6, k7],
        err,
    }
}

fn dense_segment(t: f64, h: f64, base: &State, d: &State, step: &Step, dim: usize) -> DenseSegment {
    let k = &step.k;
    let y0 = (base + d).rows(0, dim).into_owned();
    let r2 = (&step.d_new - d).rows(0, dim).into_owned();
    let k1 = k[0].rows(0, dim).into_owned();
    let k7 = k[6].rows(0, dim).into_owned();
    let r3 = &k1 * h - &r2;
    let r4 = &r2 - &k7 * h - &r3;
    let r5 = (&k[0] * D1 + &k[2] * D3 + &k[3] * D4 + &k[4] * D5 + &k[5] * D6 + &k[6] * D7)
        .rows(0, dim)
        .into_owned()
        * h;
    DenseSegment {
        t0: t,
        t1: t + h,
        coeffs: [y0, r2, r3, r4, r5],
    }
}

fn step_factor(err: f64) -> f64 {
    if err == 0.0 {
        10.0
    } else {
        (0.9 * err.powf(-0.2)).clamp(0.2, 10.0)
    }
}

/// Central-difference Jacobian of a field at `x`.
pub fn fd_jacobian<F>(f: F, x: &State) -> DMatrix<f64>
where
    F: Fn(&State) -> State,
{
    let n = x.len();
    let mut jac = DMatrix::zeros(n, n);
    let base = f64::EPSILON.cbrt();
    let mut xp = x.clone();
    for i in 0..n {
        let h = base * x[i].abs().max(1.0);
        let xi = x[i];
        xp[i] = xi + h;
        let fp = f(&xp);
        xp[i] = xi - h;
        let fm = f(&xp);
        xp[i] = xi;
        jac.set_column(i, &((fp - fm) / (2.0 * h)));
    }
    jac
}

fn flatten(m: &DMatrix<f64>) -> State {
    DVector::from_column_slice(m.as_slice())
}

fn unflatten(v: &[f64], n: usize) -> DMatrix<f64> {
    DMatrix::from_column_slice(n, n, v)
}

/// Saltation matrix for crossing `t = theta(x)` with fields `before` and `after`
/// taken in the direction of integration.
pub fn saltation_matrix(before: &State, after: &State, grad_theta: &State) -> Result<DMatrix<f64>> {
    let n = before.len();
    let denom = 1.0 - grad_theta.dot(before);
    if denom.abs() < 1e-12 {
        return Err(Error::Singular("tangential crossing of a switching surface".into()));
    }
    let jump = before - after;
    Ok(DMatrix::identity(n, n) + (jump * grad_theta.transpose()) / denom)
}

struct PeriodicRun<'a> {
    sys: &'a PiecewiseSystem,
    p: &'a ParameterPoint,
    dim: usize,
    var: bool,
}

impl PeriodicRun<'_> {
    fn rhs(&self, zone: usize, t: f64, y: &State) -> State {
        let x = y.rows(0, self.dim).into_owned();
        let f = self.sys.zone_field(zone, t, &x, self.p);
        if !self.var {
            return f;
        }
        let jac = fd_jacobian(|z| self.sys.zone_field(zone, t, z, self.p), &x);
        let phi = unflatten(&y.as_slice()[self.dim..], self.dim);
        let dphi = jac * phi;
        let mut out = State::zeros(y.len());
        out.rows_mut(0, self.dim).copy_from(&f);
        out.rows_mut(self.dim, self.dim * self.dim)
            .copy_from_slice(dphi.as_slice());
        out
    }

    fn h_event(&self, idx: usize, t: f64, y: &State) -> f64 {
        let x = y.rows(0, self.dim).into_owned();
        self.sys.switching_time(idx, &x, self.p) - t
    }
}

fn initial_zone(sys: &PiecewiseSystem, x: &State, p: &ParameterPoint, t0: f64, forward: bool) -> usize {
    sys.switchers()
        .iter()
        .filter(|s| {
            let th = s.eval(x, p);
            if forward {
                th <= t0
            } else {
                th < t0
            }
        })
        .count()
}

fn run_periodic(
    sys: &PiecewiseSystem,
    x0: &State,
    p: &ParameterPoint,
    t0: f64,
    t1: f64,
    opts: &IntegratorOptions,
    var: bool,
) -> Result<(FlowTrace, Option<DMatrix<f64>>)> {
    let dim = sys.dim();
    let period = sys.period();
    if x0.len() != dim {
        return Err(Error::Domain(format!(
            "initial state has length {}, system dimension is {dim}",
            x0.len()
        )));
    }
    if !(0.0..=period).contains(&t0) || !(0.0..=period).contains(&t1) || t0 == t1 {
        return Err(Error::Domain(format!(
            "integration span [{t0}, {t1}] must be a non-empty part of [0, {period}]"
        )));
    }
    if !sys.domain().contains(x0) {
        return Err(Error::Domain(format!(
            "initial state {:?} outside the domain box",
            x0.as_slice()
        )));
    }
    let forward = t1 > t0;
    let dir = if forward { 1.0 } else { -1.0 };
    let n = sys.switcher_count();
    let run = PeriodicRun { sys, p, dim, var };
    let aug = if var { dim + dim * dim } else { dim };
    let mut base = State::zeros(aug);
    base.rows_mut(0, dim).copy_from(x0);
    if var {
        let id = DMatrix::<f64>::identity(dim, dim);
        base.rows_mut(dim, dim * dim).copy_from(&flatten(&id));
    }
    let mut d = State::zeros(aug);
    let mut zone = initial_zone(sys, x0, p, t0, forward);
    let mut t = t0;
    let h_cap = opts.max_step_fraction * period;
    let h_min = 1e-13 * period;
    let span = (t1 - t0).abs();

    let mut trace = FlowTrace {
        t_start: t0,
        t_end: t1,
        start_state: x0.clone(),
        end_state: x0.clone(),
        deviation: State::zeros(dim),
        switch_times: Vec::new(),
        samples: Vec::new(),
        segments: Vec::new(),
        zone_steps: vec![0; n + 1],
        accepted_steps: 0,
        rejected_steps: 0,
    };
    if opts.dense {
        trace.samples.push((t, x0.clone()));
    }

    let mut k1 = run.rhs(zone, t, &(&base + &d));
    let mut h = {
        let y = &base + &d;
        let sc: State = y.map(|v| opts.atol + opts.rtol * v.abs());
        let d0 = (y.component_div(&sc).norm_squared() / aug as f64).sqrt();
        let d1 = (k1.component_div(&sc).norm_squared() / aug as f64).sqrt();
        let guess = if d0 < 1e-5 || d1 < 1e-5 { 1e-3 * period } else { 0.01 * d0 / d1 };
        guess.min(h_cap).min(span)
    };
    let mut fixed_h: Option<f64> = None;
    let mut zone_entry = true;
    let mut steps_taken = 0usize;

    loop {
        if (t1 - t) * dir <= 1e-15 * period {
            break;
        }
        steps_taken += 1;
        if steps_taken > opts.max_steps {
            return Err(Error::TooManySteps { t });
        }
        let monitored = if forward {
            (zone < n).then_some(zone + 1)
        } else {
            (zone >= 1).then_some(zone)
        };
        let mut target = t1;
        let mut constant_event = None;
        if let Some(m) = monitored {
            if let SwitchingFunction::Constant(th) = sys.switchers()[m - 1] {
                if (th - t) * dir > 0.0 && (th - target) * dir < 0.0 {
                    target = th;
                    constant_event = Some(m);
                }
            }
        }
        if let Some(counts) = &opts.fixed_steps {
            if zone_entry {
                let nominal_end = match monitored {
                    Some(m) => {
                        let th = run.h_event(m, 0.0, &(&base + &d));
                        if (th - t) * dir > 0.0 && (th - t1) * dir < 0.0 {
                            th
                        } else {
                            t1
                        }
                    }
                    None => t1,
                };
                let count = counts.get(zone).copied().unwrap_or(1).max(1);
                fixed_h = Some((nominal_end - t).abs() / count as f64);
                zone_entry = false;
            }
        }
        let remaining = target - t;
        let mut hs = match fixed_h {
            Some(fh) => fh * dir,
            None => h.abs().min(h_cap) * dir,
        };
        let hits_target = remaining.abs() <= hs.abs() * (1.0 + 1e-9);
        if hits_target {
            hs = remaining;
        }
        let rhs = |tt: f64, y: &State| run.rhs(zone, tt, y);
        let step = dopri_step(&rhs, t, &base, &d, hs, &k1, opts.atol, opts.rtol);
        if fixed_h.is_none() && step.err > 1.0 {
            trace.rejected_steps += 1;
            h = hs * step_factor(step.err).min(1.0);
            if h.abs() < h_min {
                return Err(Error::StepUnderflow { t, h });
            }
            continue;
        }

        // State-dependent crossing inside the accepted step.
        if let Some(m) = monitored {
            if !sys.switchers()[m - 1].is_constant() {
                let y_new = &base + &step.d_new;
                let s_new = run.h_event(m, t + hs, &y_new);
                let crossed = if forward { s_new <= 0.0 } else { s_new >= 0.0 };
                if crossed {
                    let s_old = run.h_event(m, t, &(&base + &d));
                    let crossed_at_start = if forward { s_old <= 0.0 } else { s_old >= 0.0 };
                    if crossed_at_start {
                        return Err(Error::EventBracket {
                            index: m,
                            zone,
                            t,
                        });
                    }
                    let sub = |tau: f64| -> Step {
                        dopri_step(&rhs, t, &base, &d, tau - t, &k1, opts.atol, opts.rtol)
                    };
                    let tau = brent(
                        |tau| Ok(run.h_event(m, tau, &(&base + &sub(tau).d_new))),
                        t,
                        t + hs,
                        4.0 * f64::EPSILON * period,
                        0.1 * opts.event_tol,
                        200,
                    )?;
                    let sstep = sub(tau);
                    if opts.dense {
                        trace.segments.push(dense_segment(t, tau - t, &base, &d, &sstep, dim));
                    }
                    d = sstep.d_new;
                    t = tau;
                    let y = &base + &d;
                    let residual = run.h_event(m, tau, &y).abs();
                    if residual > opts.event_tol {
                        return Err(Error::EventBracket { index: m, zone, t });
                    }
                    let new_zone = if forward { zone + 1 } else { zone - 1 };
                    if var {
                        let x = y.rows(0, dim).into_owned();
                        let before = sys.zone_field(zone, t, &x, p);
                        let after = sys.zone_field(new_zone, t, &x, p);
                        let grad = sys.switchers()[m - 1].gradient(&x, p);
                        let s = saltation_matrix(&before, &after, &grad)?;
                        let phi = unflatten(&y.as_slice()[dim..], dim);
                        let phi_new = s * phi;
                        let mut y2 = y.clone();
                        y2.rows_mut(dim, dim * dim).copy_from_slice(phi_new.as_slice());
                        d = y2 - &base;
                    }
                    trace.zone_steps[zone] += 1;
                    trace.accepted_steps += 1;
                    trace.switch_times.push(SwitchEvent {
                        index: m,
                        tau,
                        residual,
                        from_zone: zone,
                        to_zone: new_zone,
                    });
                    zone = new_zone;
                    zone_entry = true;
                    let y = &base + &d;
                    check_domain(sys, &y, dim, t)?;
                    if opts.dense {
                        trace.samples.push((t, y.rows(0, dim).into_owned()));
                    }
                    k1 = run.rhs(zone, t, &y);
                    continue;
                }
            }
        }

        if opts.dense {
            trace.segments.push(dense_segment(t, hs, &base, &d, &step, dim));
        }
        let err = step.err;
        d = step.d_new;
        t = if hits_target { target } else { t + hs };
        trace.zone_steps[zone] += 1;
        trace.accepted_steps += 1;
        k1 = step.k[6].clone();
        let y = &base + &d;
        check_domain(sys, &y, dim, t)?;
        if opts.dense {
            trace.samples.push((t, y.rows(0, dim).into_owned()));
        }
        if !hits_target {
            h = hs * step_factor(err);
        }
        if let (true, Some(m)) = (hits_target, constant_event) {
            let new_zone = if forward { zone + 1 } else { zone - 1 };
            trace.switch_times.push(SwitchEvent {
                index: m,
                tau: t,
                residual: 0.0,
                from_zone: zone,
                to_zone: new_zone,
            });
            zone = new_zone;
            zone_entry = true;
            k1 = run.rhs(zone, t, &y);
        }
    }

    let y = &base + &d;
    trace.end_state = y.rows(0, dim).into_owned();
    trace.deviation = d.rows(0, dim).into_owned();
    let jac = var.then(|| unflatten(&y.as_slice()[dim..], dim));
    Ok((trace, jac))
}

fn check_domain(sys: &PiecewiseSystem, y: &State, dim: usize, t: f64) -> Result<()> {
    let x = y.rows(0, dim).into_owned();
    if !sys.domain().contains(&x) || x.iter().any(|v| !v.is_finite()) {
        return Err(Error::LeftDomain { t });
    }
    Ok(())
}

/// `phi(t_end, x0)` from `t = 0`.
pub fn flow(
    sys: &PiecewiseSystem,
    x0: &State,
    p: &ParameterPoint,
    t_end: f64,
    opts: &IntegratorOptions,
) -> Result<FlowTrace> {
    flow_between(sys, x0, p, 0.0, t_end, opts)
}

/// Flow from `t0` to `t1` inside one period; `t1 < t0` integrates backward.
pub fn flow_between(
    sys: &PiecewiseSystem,
    x0: &State,
    p: &ParameterPoint,
    t0: f64,
    t1: f64,
    opts: &IntegratorOptions,
) -> Result<FlowTrace> {
    run_periodic(sys, x0, p, t0, t1, opts, false).map(|(tr, _)| tr)
}

/// Flow together with `D_x phi(t_end, x0)`.
pub fn flow_with_variationals(
    sys: &PiecewiseSystem,
    x0: &State,
    p: &ParameterPoint,
    t_end: f64,
    opts: &IntegratorOptions,
) -> Result<(FlowTrace, DMatrix<f64>)> {
    flow_between_with_variationals(sys, x0, p, 0.0, t_end, opts)
}

pub fn flow_between_with_variationals(
    sys: &PiecewiseSystem,
    x0: &State,
    p: &ParameterPoint,
    t0: f64,
    t1: f64,
    opts: &IntegratorOptions,
) -> Result<(FlowTrace, DMatrix<f64>)> {
    let (tr, jac) = run_periodic(sys, x0, p, t0, t1, opts, true)?;
    Ok((tr, jac.expect("variational run returns a jacobian")))
}

/// A lower-to-upper crossing of the switching surface that satisfies the section predicate.
#[derive(Clone, Debug, PartialEq)]
pub struct SectionHit {
    pub t: f64,
    pub state: State,
}

#[derive(Clone, Debug)]
pub struct SwitchedTrace {
    pub samples: Vec<(f64, State)>,
    pub switch_times: Vec<f64>,
    pub section_hits: Vec<SectionHit>,
    pub end_state: State,
}

impl SwitchedTrace {
    pub fn write_csv<W: Write>(&self, w: &mut W, header: &[String]) -> std::io::Result<()> {
        for line in header {
            writeln!(w, "# {line}")?;
        }
        writeln!(w, "# switches={}", self.switch_times.len())?;
        let dim = self.end_state.len();
        let cols: Vec<String> = std::iter::once("t".to_string())
            .chain((1..=dim).map(|i| format!("x{i}")))
            .collect();
        writeln!(w, "{}", cols.join(","))?;
        for (t, x) in &self.samples {
            let mut row = vec![fmt_f64(*t)];
            row.extend(x.iter().map(|v| fmt_f64(*v)));
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Integrates an autonomous switched system over `[0, t_end]`, locating every
/// crossing of its switching surface.
pub fn simulate_switched(
    sys: &SwitchedSystem,
    x0: &State,
    t_end: f64,
    opts: &IntegratorOptions,
    max_step: f64,
) -> Result<SwitchedTrace> {
    if x0.len() != sys.dim {
        return Err(Error::Domain("initial state has the wrong dimension".into()));
    }
    if !(t_end > 0.0) {
        return Err(Error::Domain("t_end must be positive".into()));
    }
    let base = x0.clone();
    let mut d = State::zeros(sys.dim);
    let mut upper = sys.side_at(x0);
    let mut t = 0.0;
    let mut out = SwitchedTrace {
        samples: Vec::new(),
        switch_times: Vec::new(),
        section_hits: Vec::new(),
        end_state: x0.clone(),
    };
    if opts.dense {
        out.samples.push((0.0, x0.clone()));
    }
    let mut k1 = sys.field(upper, x0);
    let mut h = max_step.min(t_end) * 0.1;
    let h_min = 1e-13 * t_end.max(1.0);
    let mut steps = 0usize;
    while t_end - t > 1e-13 * t_end {
        steps += 1;
        if steps > opts.max_steps {
            return Err(Error::TooManySteps { t });
        }
        let mut hs = h.min(max_step);
        let hits_end = t_end - t <= hs * (1.0 + 1e-9);
        if hits_end {
            hs = t_end - t;
        }
        let side = upper;
        let rhs = |_: f64, y: &State| sys.field(side, y);
        let step = dopri_step(&rhs, t, &base, &d, hs, &k1, opts.atol, opts.rtol);
        if step.err > 1.0 {
            h = hs * step_factor(step.err).min(1.0);
            if h < h_min {
                return Err(Error::StepUnderflow { t, h });
            }
            continue;
        }
        let y_new = &base + &step.d_new;
        let g_new = (sys.surface)(&y_new);
        let crossed = if upper { g_new < 0.0 } else { g_new > 0.0 };
        if crossed {
            let sub = |tau: f64| dopri_step(&rhs, t, &base, &d, tau - t, &k1, opts.atol, opts.rtol);
            let g_old = (sys.surface)(&(&base + &d));
            // A start exactly on the surface counts as the interior of the entered side.
            let tau = if g_old == 0.0 {
                None
            } else {
                Some(brent(
                    |tau| Ok((sys.surface)(&(&base + &sub(tau).d_new))),
                    t,
                    t + hs,
                    4.0 * f64::EPSILON * t_end.max(1.0),
                    1e-14,
                    200,
                )?)
            };
            if let Some(tau) = tau {
                let s = sub(tau);
                d = s.d_new;
                t = tau;
                let y = &base + &d;
                out.switch_times.push(t);
                if !upper && (sys.section)(&y) {
                    out.section_hits.push(SectionHit {
                        t,
                        state: y.clone(),
                    });
                }
                if opts.dense {
                    out.samples.push((t, y.clone()));
                }
                upper = !upper;
                k1 = sys.field(upper, &y);
                continue;
            }
        }
        let err = step.err;
        d = step.d_new;
        t = if hits_end { t_end } else { t + hs };
        k1 = step.k[6].clone();
        let y = &base + &d;
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::LeftDomain { t });
        }
        if opts.dense {
            out.samples.push((t, y));
        }
        if !hits_end {
            h = hs * step_factor(err);
        }
    }
    out.end_state = &base + &d;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{switch_fn, term_fn, ZoneField};
    use nalgebra::DMatrix;
    use std::f64::consts::PI;

    fn linear_system(a: DMatrix<f64>) -> PiecewiseSystem {
        let zone = ZoneField::new(vec![term_fn(move |_, x, _| &a * x)]);
        PiecewiseSystem::new("linear", 2.0 * PI, 2, vec![zone], vec![]).unwrap()
    }

    fn expm(m: &DMatrix<f64>) -> DMatrix<f64> {
        let n = m.nrows();
        let mut out = DMatrix::identity(n, n);
        let mut term = DMatrix::identity(n, n);
        for k in 1..40 {
            term = &term * m / k as f64;
            out += &term;
        }
        out
    }

    #[test]
    fn zero_field_is_identity() {
        let sys = linear_system(DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]));
        let p = ParameterPoint::new(0.0, 0.0);
        let x0 = State::from_vec(vec![3.0, 2.0]);
        let (tr, jac) =
            flow_with_variationals(&sys, &x0, &p, 2.0 * PI, &IntegratorOptions::default()).unwrap();
        assert_eq!(tr.end_state, x0);
        assert_eq!(jac, DMatrix::identity(2, 2));
    }

    #[test]
    fn linear_flow_matches_matrix_exponential() {
        let a = DMatrix::from_row_slice(2, 2, &[0.3, 1.0, -2.0, -0.1]);
        let sys = linear_system(a.clone());
        let eps = 0.1;
        let p = ParameterPoint::new(0.0, eps);
        let x0 = State::from_vec(vec![1.0, -0.5]);
        let (tr, jac) =
            flow_with_variationals(&sys, &x0, &p, 2.0 * PI, &IntegratorOptions::default()).unwrap();
        let e = expm(&(a * (eps * 2.0 * PI)));
        assert!((&jac - &e).amax() < 1e-8);
        assert!((&tr.end_state - &e * &x0).amax() < 1e-8);
    }

    #[test]
    fn backward_flow_returns_to_start() {
        let a = DMatrix::from_row_slice(2, 2, &[0.3, 1.0, -2.0, -0.1]);
        let sys = linear_system(a);
        let p = ParameterPoint::new(0.0, 0.2);
        let x0 = State::from_vec(vec![1.0, -0.5]);
        let opts = IntegratorOptions::default();
        let fwd = flow_between(&sys, &x0, &p, 0.0, 2.0 * PI, &opts).unwrap();
        let back = flow_between(&sys, &fwd.end_state, &p, 2.0 * PI, 0.0, &opts).unwrap();
        assert!((&back.end_state - &x0).amax() < 1e-9);
    }

    fn jump_system() -> PiecewiseSystem {
        let z0 = ZoneField::new(vec![term_fn(|_, x: &State, _| {
            State::from_vec(vec![x[1] + 1.0, -0.5 * x[0]])
        })]);
        let z1 = ZoneField::new(vec![term_fn(|_, x: &State, _| {
            State::from_vec(vec![-x[1] * x[0], 2.0])
        })]);
        let sw = SwitchingFunction::state_dependent(switch_fn(|x, _| PI + 0.1 * x[0] - 0.05 * x[1]));
        PiecewiseSystem::new("jump", 2.0 * PI, 2, vec![z0, z1], vec![sw]).unwrap()
    }

    #[test]
    fn state_dependent_event_is_located() {
        let sys = jump_system();
        let p = ParameterPoint::new(0.0, 0.1);
        let x0 = State::from_vec(vec![0.7, 0.4]);
        let tr = flow(&sys, &x0, &p, 2.0 * PI, &IntegratorOptions::default()).unwrap();
        assert_eq!(tr.switch_times.len(), 1);
        assert!(tr.max_event_residual() <= 1e-12);
    }

    #[test]
    fn saltation_matches_finite_differences() {
        let sys = jump_system();
        let p = ParameterPoint::new(0.0, 0.1);
        let opts = IntegratorOptions::with_tolerances(1e-12, 1e-12);
        let x0 = State::from_vec(vec![0.7, 0.4]);
        let (_, jac) = flow_with_variationals(&sys, &x0, &p, 2.0 * PI, &opts).unwrap();
        let fd = fd_jacobian(
            |x| flow(&sys, x, &p, 2.0 * PI, &opts).unwrap().end_state,
            &x0,
        );
        assert!((&jac - &fd).amax() < 1e-6, "{jac} vs {fd}");
    }

    #[test]
    fn backward_variational_inverts_forward() {
        let sys = jump_system();
        let p = ParameterPoint::new(0.0, 0.1);
        let opts = IntegratorOptions::with_tolerances(1e-12, 1e-12);
        let x0 = State::from_vec(vec![0.7, 0.4]);
        let (fwd, jf) = flow_with_variationals(&sys, &x0, &p, 2.0 * PI, &opts).unwrap();
        let (back, jb) =
            flow_between_with_variationals(&sys, &fwd.end_state, &p, 2.0 * PI, 0.0, &opts).unwrap();
        assert!((&back.end_state - &x0).amax() < 1e-9);
        assert!((jb * jf - DMatrix::identity(2, 2)).amax() < 1e-8);
    }

    #[test]
    fn constant_switch_is_hit_exactly() {
        let z0 = ZoneField::new(vec![term_fn(|_, _, _| State::from_vec(vec![1.0]))]);
        let z1 = ZoneField::new(vec![term_fn(|_, _, _| State::from_vec(vec![-1.0]))]);
        let sys = PiecewiseSystem::new("c", 2.0 * PI, 1, vec![z0, z1], vec![SwitchingFunction::constant(PI)])
            .unwrap();
        let p = ParameterPoint::new(0.0, 0.1);
        let tr = flow(&sys, &State::from_vec(vec![0.0]), &p, 2.0 * PI, &IntegratorOptions::default())
            .unwrap();
        assert_eq!(tr.switch_times[0].tau, PI);
        assert!(tr.end_state[0].abs() < 1e-13);
    }

    #[test]
    fn dense_output_interpolates_within_tolerance() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        let sys = linear_system(a.clone());
        let p = ParameterPoint::new(0.0, 1.0);
        let x0 = State::from_vec(vec![1.0, 0.0]);
        let tr = flow(&sys, &x0, &p, 2.0 * PI, &IntegratorOptions::default().dense()).unwrap();
        for k in 1..20 {
            let t = 0.3 * k as f64;
            let exact = State::from_vec(vec![t.cos(), -t.sin()]);
            assert!((tr.state_at(t).unwrap() - exact).amax() < 1e-8);
        }
    }

    #[test]
    fn leaving_the_domain_is_reported() {
        let sys = linear_system(DMatrix::from_row_slice(2, 2, &[5.0, 0.0, 0.0, 5.0]));
        let p = ParameterPoint::new(0.0, 0.2);
        let err = flow(&sys, &State::from_vec(vec![1.0, 1.0]), &p, 2.0 * PI, &IntegratorOptions::default())
            .unwrap_err();
        assert!(matches!(err, Error::LeftDomain { .. }));
    }

    #[test]
    fn frozen_schedule_is_close_to_adaptive() {
        let sys = jump_system();
        let p = ParameterPoint::new(0.0, 0.1);
        let opts = IntegratorOptions::default();
        let x0 = State::from_vec(vec![0.7, 0.4]);
        let tr = flow(&sys, &x0, &p, 2.0 * PI, &opts).unwrap();
        let frozen = opts.frozen(tr.zone_steps.iter().map(|n| 2 * n).collect());
        let tf = flow(&sys, &x0, &p, 2.0 * PI, &frozen).unwrap();
        assert!((&tf.end_state - &tr.end_state).amax() < 1e-8);
    }
}
