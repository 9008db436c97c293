//! Neimark–Sacker analysis of a near-identity planar map family.
//!
//! Pipeline: fixed point `sigma(alpha, eps)`, eigenvalue pair and its rates,
//! critical parameter `beta(eps)` where `|lambda| = 1`, a real frame putting the
//! jacobian into rotation-scaling form, normal-form coefficients
//! `g20, g11, g02, g21`, the first Lyapunov coefficient, and its expansion in
//! `eps`.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrate::fd_jacobian;
use crate::model::State;
use crate::roots::brent;
use crate::tmap::{derivatives_at, FdScheme, MapFamily, Tensor3, Tensor4};

/// How the multilinear forms enter the normal-form coefficients.
///
/// `Standard` uses `B = D^2 f`, `C = D^3 f`. `Taylor` uses the Taylor
/// coefficients `B/2`, `C/6`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Convention {
    Standard,
    Taylor,
}

impl Convention {
    pub fn scales(self) -> (f64, f64) {
        match self {
            Convention::Standard => (1.0, 1.0),
            Convention::Taylor => (0.5, 1.0 / 6.0),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NsOptions {
    pub newton_tol: f64,
    pub newton_max_iter: usize,
    pub resonance_tol: f64,
    pub beta_tol: f64,
    pub order_probe_tol: f64,
    /// Series coefficients below this magnitude count as zero.
    pub series_zero_tol: f64,
    /// Most higher-order slack terms `eps^3, eps^4, ...` in the series fit.
    pub series_max_slack: usize,
    pub alpha_step: f64,
    pub convention: Convention,
    pub fd: FdScheme,
    /// Phase `phi` of the gauge `q -> e^(i phi) q`, `p -> e^(i phi) p`.
    pub gauge_phase: f64,
}

impl Default for NsOptions {
    fn default() -> Self {
        Self {
            newton_tol: 1e-11,
            newton_max_iter: 50,
            resonance_tol: 1e-6,
            beta_tol: 1e-9,
            order_probe_tol: 1e-8,
            series_zero_tol: 1e-4,
            series_max_slack: 3,
            alpha_step: 1e-4,
            convention: Convention::Taylor,
            fd: FdScheme::default(),
            gauge_phase: 0.0,
        }
    }
}

/// Complex number in reports.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Cplx {
    pub re: f64,
    pub im: f64,
}

impl From<Complex64> for Cplx {
    fn from(z: Complex64) -> Self {
        Self { re: z.re, im: z.im }
    }
}

impl From<Cplx> for Complex64 {
    fn from(z: Cplx) -> Self {
        Complex64::new(z.re, z.im)
    }
}

fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct FixedPoint {
    pub point: State,
    pub residual: f64,
    pub iterations: usize,
}

fn newton<F, J>(f: F, jac: J, x0: &State, tol: f64, max_iter: usize) -> Result<FixedPoint>
where
    F: Fn(&State) -> Result<State>,
    J: Fn(&State) -> Result<DMatrix<f64>>,
{
    let mut x = x0.clone();
    let mut r = f(&x)?;
    let mut res = r.amax();
    for it in 0..max_iter {
        if res <= tol {
            return Ok(FixedPoint {
                point: x,
                residual: res,
                iterations: it,
            });
        }
        let m = jac(&x)?;
        let step = m
            .lu()
            .solve(&(-&r))
            .filter(|s| s.iter().all(|v| v.is_finite()))
            .ok_or_else(|| Error::Singular("newton matrix has an eigenvalue at zero".into()))?;
        let mut lam = 1.0;
        let mut accepted = None;
        for _ in 0..12 {
            let trial = &x + &step * lam;
            if let Ok(rt) = f(&trial) {
                if rt.amax() < res {
                    accepted = Some((trial, rt));
                    break;
                }
            }
            lam *= 0.5;
        }
        match accepted {
            Some((xt, rt)) => {
                x = xt;
                res = rt.amax();
                r = rt;
            }
            None => {
                // Residual is at its noise floor.
                if res <= 1e3 * tol {
                    return Ok(FixedPoint {
                        point: x,
                        residual: res,
                        iterations: it,
                    });
                }
                return Err(Error::Newton(format!("no descent from residual {res:e}")));
            }
        }
    }
    if res <= tol {
        return Ok(FixedPoint {
            point: x,
            residual: res,
            iterations: max_iter,
        });
    }
    Err(Error::Newton(format!(
        "no convergence after {max_iter} iterations (residual {res:e})"
    )))
}

fn need_delta1(family: &dyn MapFamily, x: &State, alpha: f64) -> Result<State> {
    family
        .delta1(x, alpha)
        .unwrap_or_else(|| Err(Error::Degenerate("map family has no averaged function".into())))
}

/// Zero of the first-order averaged function near `guess`.
pub fn delta1_zero(family: &dyn MapFamily, guess: &State, alpha: f64, opts: &NsOptions) -> Result<FixedPoint> {
    let f = |x: &State| need_delta1(family, x, alpha);
    let jac = |x: &State| {
        let err = std::cell::RefCell::new(None);
        let j = fd_jacobian(
            |y| match f(y) {
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
            None => Ok(j),
        }
    };
    newton(f, jac, guess, opts.newton_tol, opts.newton_max_iter)
}

/// Fixed point of the map at `(alpha, eps)`.
///
/// At `eps = 0` every point is fixed; the zero of the averaged function is
/// returned instead.
pub fn find_fixed_point(
    family: &dyn MapFamily,
    guess: &State,
    alpha: f64,
    eps: f64,
    opts: &NsOptions,
) -> Result<FixedPoint> {
    if eps == 0.0 {
        return delta1_zero(family, guess, alpha, opts);
    }
    let n = guess.len();
    newton(
        |x| family.deviation(x, alpha, eps),
        |x| Ok(family.jacobian(x, alpha, eps)? - DMatrix::identity(n, n)),
        guess,
        opts.newton_tol,
        opts.newton_max_iter,
    )
}

/// Seed for the fixed point: the averaged zero when available.
pub fn seed_point(family: &dyn MapFamily, guess: &State, alpha: f64, opts: &NsOptions) -> State {
    if family.delta1(guess, alpha).is_some() {
        if let Ok(fp) = delta1_zero(family, guess, alpha, opts) {
            return fp.point;
        }
    }
    guess.clone()
}

#[derive(Clone, Debug, Serialize)]
pub struct FixedPointCurve {
    pub alpha_grid: Vec<f64>,
    pub epsilon: f64,
    pub points: Vec<State>,
    pub newton_residuals: Vec<f64>,
}

pub fn fixed_point_curve(
    family: &dyn MapFamily,
    guess: &State,
    alphas: &[f64],
    eps: f64,
    opts: &NsOptions,
) -> Result<FixedPointCurve> {
    let fps: Vec<FixedPoint> = alphas
        .par_iter()
        .map(|&a| find_fixed_point(family, &seed_point(family, guess, a, opts), a, eps, opts))
        .collect::<Result<_>>()?;
    Ok(FixedPointCurve {
        alpha_grid: alphas.to_vec(),
        epsilon: eps,
        points: fps.iter().map(|f| f.point.clone()).collect(),
        newton_residuals: fps.iter().map(|f| f.residual).collect(),
    })
}

/// Leading power `r` of `eps` in `P_T - id`.
pub fn detect_order(family: &dyn MapFamily, center: &State, alpha: f64, opts: &NsOptions) -> Result<usize> {
    let n = center.len();
    let mut probes = vec![center.clone()];
    for i in 0..n {
        for s in [-0.5, 0.5] {
            let mut y = center.clone();
            y[i] += s;
            if family.contains(&y) {
                probes.push(y);
            }
        }
    }
    let h = 1e-6;
    let mut peak: f64 = 0.0;
    for y in &probes {
        let d = match family.delta1(y, alpha) {
            Some(d) => d?,
            None => family.deviation(y, alpha, h)? / h,
        };
        peak = peak.max(d.norm());
    }
    Ok(if peak > opts.order_probe_tol { 1 } else { 2 })
}

fn eig2(m: &DMatrix<f64>) -> Result<(Complex64, f64)> {
    if m.nrows() != 2 || m.ncols() != 2 {
        return Err(Error::Validation("eigen-structure is only defined for planar maps".into()));
    }
    let tr = m[(0, 0)] + m[(1, 1)];
    let det = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)];
    let disc = tr * tr - 4.0 * det;
    if disc >= 0.0 {
        return Err(Error::RealEigenvalues { discriminant: disc });
    }
    Ok((Complex64::new(tr / 2.0, (-disc).sqrt() / 2.0), disc))
}

#[derive(Clone, Debug, Serialize)]
pub struct EigenData {
    pub lambda: Cplx,
    pub modulus: f64,
    pub discriminant: f64,
    /// `(|lambda|^2 - 1) / eps^r`.
    pub rho: f64,
    pub theta_eps: f64,
    /// `(lambda - 1) / eps^r`.
    pub rate: Cplx,
    /// `|e^(i k theta) - 1| <= tol` for `k = 1..4`.
    pub resonance_flags: [bool; 4],
    pub order: usize,
}

impl EigenData {
    pub fn resonant(&self) -> bool {
        self.resonance_flags.iter().any(|f| *f)
    }
}

pub fn eigen_data(jacobian: &DMatrix<f64>, eps: f64, r: usize, resonance_tol: f64) -> Result<EigenData> {
    let (lambda, disc) = eig2(jacobian)?;
    let scale = eps.powi(r as i32);
    let theta = lambda.arg();
    let mut flags = [false; 4];
    for (k, f) in flags.iter_mut().enumerate() {
        let z = Complex64::from_polar(1.0, (k + 1) as f64 * theta);
        *f = (z - 1.0).norm() <= resonance_tol;
    }
    Ok(EigenData {
        lambda: lambda.into(),
        modulus: lambda.norm(),
        discriminant: disc,
        rho: (lambda.norm_sqr() - 1.0) / scale,
        theta_eps: theta,
        rate: ((lambda - 1.0) / scale).into(),
        resonance_flags: flags,
        order: r,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct Rates {
    pub alpha: f64,
    pub order: usize,
    /// Leading real and imaginary rates `a(alpha)`, `b(alpha)`.
    pub a: f64,
    pub b: f64,
    pub center: State,
}

/// `a(alpha) + i b(alpha)`, the leading `eps`-rate of the eigenvalue pair.
///
/// With `r = 1` these are the eigenvalues of `D Delta_1` at its zero.
/// Otherwise they are extrapolated from the map at `eps` and `eps / 2`.
pub fn leading_rates(
    family: &dyn MapFamily,
    seed: &State,
    alpha: f64,
    eps: f64,
    r: usize,
    opts: &NsOptions,
) -> Result<Rates> {
    if r == 1 && family.delta1(seed, alpha).is_some() {
        let z = delta1_zero(family, seed, alpha, opts)?;
        let err = std::cell::RefCell::new(None);
        let m = fd_jacobian(
            |y| match need_delta1(family, y, alpha) {
                Ok(v) => v,
                Err(e) => {
                    *err.borrow_mut() = Some(e);
                    State::zeros(y.len())
                }
            },
            &z.point,
        );
        if let Some(e) = err.into_inner() {
            return Err(e);
        }
        let (mu, _) = eig2(&m)?;
        return Ok(Rates {
            alpha,
            order: r,
            a: mu.re,
            b: mu.im,
            center: z.point,
        });
    }
    let rate_at = |e: f64| -> Result<(Complex64, State)> {
        let fp = find_fixed_point(family, seed, alpha, e, opts)?;
        let j = family.jacobian(&fp.point, alpha, e)?;
        let (l, _) = eig2(&j)?;
        Ok(((l - 1.0) / e.powi(r as i32), fp.point))
    };
    let (full, _) = rate_at(eps)?;
    let (half, center) = rate_at(eps / 2.0)?;
    let lead = half * 2.0 - full;
    Ok(Rates {
        alpha,
        order: r,
        a: lead.re,
        b: lead.im,
        center,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct RateReport {
    pub at: Rates,
    /// `a'(alpha0)` by central differences.
    pub a_prime: f64,
}

pub fn eigen_rates(
    family: &dyn MapFamily,
    seed: &State,
    alpha0: f64,
    eps: f64,
    r: usize,
    opts: &NsOptions,
) -> Result<RateReport> {
    let h = opts.alpha_step;
    let at = leading_rates(family, seed, alpha0, eps, r, opts)?;
    let up = leading_rates(family, &at.center, alpha0 + h, eps, r, opts)?;
    let dn = leading_rates(family, &at.center, alpha0 - h, eps, r, opts)?;
    Ok(RateReport {
        a_prime: (up.a - dn.a) / (2.0 * h),
        at,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct BetaResult {
    pub epsilon: f64,
    pub beta: f64,
    /// `|lambda(beta, eps)| - 1`.
    pub modulus_defect: f64,
    pub fixed_point: FixedPoint,
    pub jacobian: DMatrix<f64>,
    pub eigen: EigenData,
    /// Set when `a'(alpha0)` vanishes and the root of the full modulus defect
    /// is used without the leading-order guess.
    pub degenerate_transversality: bool,
}

struct ModulusProbe {
    fp: FixedPoint,
    jac: DMatrix<f64>,
    defect: f64,
}

fn modulus_probe(
    family: &dyn MapFamily,
    seed: &State,
    alpha: f64,
    eps: f64,
    opts: &NsOptions,
) -> Result<ModulusProbe> {
    let s = seed_point(family, seed, alpha, opts);
    let fp = find_fixed_point(family, &s, alpha, eps, opts)?;
    let jac = family.jacobian(&fp.point, alpha, eps)?;
    let (l, _) = eig2(&jac)?;
    Ok(ModulusProbe {
        fp,
        jac,
        defect: l.norm() - 1.0,
    })
}

/// Root `beta(eps)` of `|lambda(alpha, eps)| = 1` near `alpha0`.
pub fn solve_beta(
    family: &dyn MapFamily,
    seed: &State,
    eps: f64,
    alpha0: f64,
    r: usize,
    a_prime: f64,
    opts: &NsOptions,
) -> Result<BetaResult> {
    if eps == 0.0 {
        return Err(Error::RealEigenvalues { discriminant: 0.0 });
    }
    let (amin, amax) = family.alpha_range();
    let m0 = modulus_probe(family, seed, alpha0, eps, opts)?;
    let seed = m0.fp.point.clone();
    let degenerate = a_prime.abs() <= 1e-8;
    let scale = eps.abs().powi(r as i32);
    let guess = if degenerate {
        alpha0
    } else {
        (alpha0 - m0.defect / (scale * a_prime)).clamp(amin, amax)
    };
    let f = |a: f64| modulus_probe(family, &seed, a, eps, opts).map(|m| m.defect);
    let mut w = 0.25 * (guess - alpha0).abs() + eps.abs().max(1e-6);
    let mut lo = (guess - w).max(amin);
    let mut hi = (guess + w).min(amax);
    let mut flo = f(lo)?;
    let mut fhi = f(hi)?;
    let mut tries = 0;
    while flo.signum() == fhi.signum() {
        tries += 1;
        if tries > 30 || (lo <= amin && hi >= amax) {
            return Err(Error::NoBracket(format!(
                "modulus defect keeps sign {} on [{lo}, {hi}] at eps = {eps}",
                flo.signum()
            )));
        }
        w *= 2.0;
        lo = (guess - w).max(amin);
        hi = (guess + w).min(amax);
        flo = f(lo)?;
        fhi = f(hi)?;
    }
    let beta = brent(f, lo, hi, 1e-15, 0.01 * opts.beta_tol, 200)?;
    let m = modulus_probe(family, &seed, beta, eps, opts)?;
    if m.defect.abs() > opts.beta_tol {
        return Err(Error::Degenerate(format!(
            "modulus defect {:e} at beta = {beta} exceeds tolerance",
            m.defect
        )));
    }
    let eigen = eigen_data(&m.jac, eps, r, opts.resonance_tol)?;
    Ok(BetaResult {
        epsilon: eps,
        beta,
        modulus_defect: m.defect,
        fixed_point: m.fp,
        jacobian: m.jac,
        eigen,
        degenerate_transversality: degenerate,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct NormalFrame {
    pub l: DMatrix<f64>,
    pub l_inv: DMatrix<f64>,
    /// Diagonal and off-diagonal entries of `L^(-1) M L = [[a, -b], [b, a]]`.
    pub a_tilde: f64,
    pub b_tilde: f64,
}

/// Real frame `L = [Re v, -Im v]` from the eigenvector `v` of `m` for the
/// eigenvalue with positive imaginary part, so that
/// `L^(-1) m L = [[a, -b], [b, a]]` with `b > 0`.
pub fn normalize_frame(m: &DMatrix<f64>) -> Result<NormalFrame> {
    let (lam, _) = eig2(m)?;
    let scale = m.amax().max(f64::MIN_POSITIVE);
    let (v0, v1) = if m[(1, 0)].abs() > 1e-12 * scale {
        (lam - m[(1, 1)], Complex64::new(m[(1, 0)], 0.0))
    } else if m[(0, 1)].abs() > 1e-12 * scale {
        (Complex64::new(m[(0, 1)], 0.0), lam - m[(0, 0)])
    } else {
        return Err(Error::Degenerate("defective eigenvector".into()));
    };
    let l = DMatrix::from_row_slice(2, 2, &[v0.re, -v0.im, v1.re, -v1.im]);
    let l_inv = l
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Singular("normal frame".into()))?;
    Ok(NormalFrame {
        l,
        l_inv,
        a_tilde: lam.re,
        b_tilde: lam.im,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct NormalForm {
    pub theta: f64,
    pub phase: f64,
    pub g20: Cplx,
    pub g11: Cplx,
    pub g02: Cplx,
    pub g21: Cplx,
    pub c1: Cplx,
    /// `Re(e^(-i theta) c1)`.
    pub ell1: f64,
    /// The same quantity from the expanded real formula.
    pub ell1_expanded: f64,
}

fn inner(p: &[Complex64], x: &[Complex64]) -> Complex64 {
    p.iter().zip(x).map(|(a, b)| a.conj() * b).sum()
}

/// Normal-form coefficients for forms already expressed in the
/// rotation-scaling frame, with `q = p = e^(i phase) (1, -i) / sqrt 2`.
pub fn normal_form(b: &Tensor3, c: &Tensor4, theta: f64, phase: f64) -> NormalForm {
    let i = Complex64::i();
    let g = Complex64::from_polar(1.0 / 2f64.sqrt(), phase);
    let q = [g, -i * g];
    let qb = [q[0].conj(), q[1].conj()];
    let p = q;
    let g20 = inner(&p, &b.apply_c(&q, &q));
    let g11 = inner(&p, &b.apply_c(&q, &qb));
    let g02 = inner(&p, &b.apply_c(&qb, &qb));
    let g21 = inner(&p, &c.apply_c(&q, &q, &qb));
    let lam = Complex64::from_polar(1.0, theta);
    let lb = lam.conj();
    let one = Complex64::new(1.0, 0.0);
    let c1 = g20 * g11 * (one - 2.0 * lam) / (2.0 * (lam * lam - lam))
        + g11.norm_sqr() / (one - lb)
        + g02.norm_sqr() / (2.0 * (lam * lam - lb))
        + g21 / 2.0;
    let ell1 = (lb * c1).re;
    let ell1_expanded = (lb * g21 / 2.0).re
        - ((one - 2.0 * lam) * lb * lb / (2.0 * (one - lam)) * g20 * g11).re
        - 0.5 * g11.norm_sqr()
        - 0.25 * g02.norm_sqr();
    NormalForm {
        theta,
        phase,
        g20: g20.into(),
        g11: g11.into(),
        g02: g02.into(),
        g21: g21.into(),
        c1: c1.into(),
        ell1,
        ell1_expanded,
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct LyapunovResult {
    pub convention: Convention,
    pub frame: NormalFrame,
    pub eigen: EigenData,
    pub normal_form: NormalForm,
    pub ell1: f64,
    pub ell1_standard: f64,
    pub ell1_taylor: f64,
    /// Rough bound on the finite-difference noise in `ell1`.
    pub ell1_noise: f64,
    pub warnings: Vec<String>,
}

/// First Lyapunov coefficient at a fixed point with a complex pair.
pub fn lyapunov_first(
    family: &dyn MapFamily,
    fixed_point: &State,
    alpha: f64,
    eps: f64,
    r: usize,
    opts: &NsOptions,
) -> Result<LyapunovResult> {
    let sample = derivatives_at(family, fixed_point, alpha, eps, &opts.fd)?;
    let n = fixed_point.len();
    let eigen = eigen_data(&sample.jacobian, eps, r, opts.resonance_tol)?;
    let rate = (&sample.jacobian - DMatrix::identity(n, n)) / eps.abs().powi(r as i32).max(f64::MIN_POSITIVE);
    let frame = normalize_frame(&rate)?;
    let by = sample.bilinear.transform(&frame.l, &frame.l_inv);
    let cy = sample.trilinear.transform(&frame.l, &frame.l_inv);
    let theta = eigen.theta_eps;
    let eval = |conv: Convention| {
        let (sb, sc) = conv.scales();
        normal_form(&by.scaled(sb), &cy.scaled(sc), theta, opts.gauge_phase)
    };
    let nf = eval(opts.convention);
    let ell1_standard = eval(Convention::Standard).ell1;
    let ell1_taylor = eval(Convention::Taylor).ell1;

    let nl = frame.l.norm();
    let nli = frame.l_inv.norm();
    let (sb, sc) = opts.convention.scales();
    let noise_b = sb * sample.noise_estimate.0 * nl * nl * nli;
    let noise_c = sc * sample.noise_estimate.1 * nl * nl * nl * nli;
    let bmax = sb * by.amax();
    let gap = (Complex64::from_polar(1.0, theta) - 1.0).norm().max(f64::MIN_POSITIVE);
    let ell1_noise = 0.5 * noise_c + 4.0 * noise_b * bmax * (1.0 + 1.0 / gap);

    let mut warnings = sample.warnings.clone();
    if eigen.resonant() {
        warnings.push(format!("strong resonance at theta = {theta:e}"));
    }
    Ok(LyapunovResult {
        convention: opts.convention,
        frame,
        eigen,
        ell1: nf.ell1,
        normal_form: nf,
        ell1_standard,
        ell1_taylor,
        ell1_noise,
        warnings,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct SeriesPoint {
    pub epsilon: f64,
    pub beta: f64,
    pub ell1: f64,
    pub ell1_noise: f64,
    pub resonant: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct LyapunovSeries {
    pub ell11: f64,
    pub ell12: f64,
    /// Coefficients of the slack terms `eps^3, eps^4, ...`.
    pub slack: Vec<f64>,
    /// Root-mean-square fit residual.
    pub fit_residual: f64,
    /// Change in `ell12` when the highest slack term is dropped.
    pub truncation_estimate: f64,
    pub points: Vec<SeriesPoint>,
}

impl LyapunovSeries {
    /// Leading nonzero coefficient `(s, ell1_s)`.
    pub fn leading(&self, zero_tol: f64) -> Option<(usize, f64)> {
        if self.ell11.abs() > zero_tol {
            Some((1, self.ell11))
        } else if self.ell12.abs() > zero_tol {
            Some((2, self.ell12))
        } else {
            None
        }
    }
}

/// Least-squares fit `ell1(eps) = sum_{k=1}^{terms} c_k eps^k`.
/// Returns the coefficients and the root-mean-square residual.
pub fn fit_series(eps: &[f64], ell: &[f64], terms: usize) -> Result<(Vec<f64>, f64)> {
    let m = eps.len();
    if terms == 0 || terms > m {
        return Err(Error::IllConditioned(format!("{terms} series terms from {m} points")));
    }
    let emax = eps.iter().fold(0.0f64, |a, e| a.max(e.abs()));
    let a = DMatrix::from_fn(m, terms, |i, k| (eps[i] / emax).powi(k as i32 + 1));
    let y = State::from_column_slice(ell);
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smin > 1e-12 * smax) {
        return Err(Error::IllConditioned(format!(
            "series design matrix has condition {:e}",
            smax / smin
        )));
    }
    let c = svd
        .solve(&y, 0.0)
        .map_err(|e| Error::IllConditioned(e.to_string()))?;
    let resid = (&a * &c - &y).norm() / (m as f64).sqrt();
    Ok(((0..terms).map(|k| c[k] / emax.powi(k as i32 + 1)).collect(), resid))
}

/// `ell1` at `alpha = beta(eps)` over a grid of `eps`, fitted to a series.
pub fn lyapunov_series(
    family: &dyn MapFamily,
    seed: &State,
    alpha0: f64,
    eps_grid: &[f64],
    r: usize,
    a_prime: f64,
    opts: &NsOptions,
) -> Result<LyapunovSeries> {
    let mut grid: Vec<f64> = eps_grid.to_vec();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    if grid.len() < 4 || grid[0] <= 0.0 {
        return Err(Error::IllConditioned(
            "series needs at least four distinct positive eps values".into(),
        ));
    }
    if grid[grid.len() - 1] / grid[0] < 2.0 {
        return Err(Error::IllConditioned("eps grid spans less than a factor of two".into()));
    }
    let points: Vec<SeriesPoint> = grid
        .par_iter()
        .map(|&e| {
            let beta = solve_beta(family, seed, e, alpha0, r, a_prime, opts)?;
            let ly = lyapunov_first(family, &beta.fixed_point.point, beta.beta, e, r, opts)?;
            Ok(SeriesPoint {
                epsilon: e,
                beta: beta.beta,
                ell1: ly.ell1,
                ell1_noise: ly.ell1_noise,
                resonant: ly.eigen.resonant(),
            })
        })
        .collect::<Result<_>>()?;
    let ell: Vec<f64> = points.iter().map(|p| p.ell1).collect();
    let terms = 2 + opts.series_max_slack.min(grid.len() - 2);
    let (c, fit_residual) = fit_series(&grid, &ell, terms)?;
    let (lower, _) = fit_series(&grid, &ell, terms - 1)?;
    Ok(LyapunovSeries {
        ell11: c[0],
        ell12: c[1],
        slack: c[2..].to_vec(),
        fit_residual,
        truncation_estimate: (c[1] - lower[1]).abs(),
        points,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    SupercriticalAttractingCurve,
    SubcriticalRepellingCurve,
    Inconclusive,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::SupercriticalAttractingCurve => "supercritical-attracting-curve",
            Verdict::SubcriticalRepellingCurve => "subcritical-repelling-curve",
            Verdict::Inconclusive => "inconclusive",
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct NSReport {
    pub alpha0: f64,
    pub epsilon: f64,
    pub order: usize,
    pub beta_eps: f64,
    pub modulus_defect: f64,
    pub fixed_point: State,
    pub eigen: EigenData,
    pub rates: Rates,
    pub transversality: f64,
    pub degenerate_transversality: bool,
    pub normal_frame: Vec<Vec<f64>>,
    pub convention: Convention,
    pub g20: Cplx,
    pub g11: Cplx,
    pub g02: Cplx,
    pub g21: Cplx,
    pub c1: Cplx,
    pub ell1: f64,
    pub ell1_expanded: f64,
    pub ell1_standard: f64,
    pub ell1_taylor: f64,
    pub ell1_noise: f64,
    pub ell1_series: Option<LyapunovSeries>,
    /// Leading coefficient `ell1_s` used for the verdict.
    pub leading_order: Option<usize>,
    pub leading_coefficient: Option<f64>,
    pub verdict: Verdict,
    pub warnings: Vec<String>,
}

/// Full analysis at `eps`, optionally with a series fit over `series_grid`.
pub fn ns_analyze(
    family: &dyn MapFamily,
    seed: &State,
    alpha0: f64,
    eps: f64,
    series_grid: Option<&[f64]>,
    opts: &NsOptions,
) -> Result<NSReport> {
    let center = seed_point(family, seed, alpha0, opts);
    let r = detect_order(family, &center, alpha0, opts)?;
    let rates = eigen_rates(family, &center, alpha0, eps, r, opts)?;
    let beta = solve_beta(family, &center, eps, alpha0, r, rates.a_prime, opts)?;
    let ly = lyapunov_first(family, &beta.fixed_point.point, beta.beta, eps, r, opts)?;
    let series = match series_grid {
        Some(g) => Some(lyapunov_series(family, &center, alpha0, g, r, rates.a_prime, opts)?),
        None => None,
    };
    let mut warnings = ly.warnings.clone();
    if beta.degenerate_transversality {
        warnings.push("transversality a'(alpha0) vanishes; beta solved on the full modulus defect".into());
    }
    let leading = match &series {
        Some(s) => s.leading(opts.series_zero_tol),
        None if ly.ell1.abs() > ly.ell1_noise => Some((0, ly.ell1)),
        None => None,
    };
    let resonant = ly.eigen.resonant()
        || series
            .as_ref()
            .is_some_and(|s| s.points.iter().any(|p| p.resonant));
    let verdict = match leading {
        _ if resonant => Verdict::Inconclusive,
        Some((_, l)) if l < 0.0 => Verdict::SupercriticalAttractingCurve,
        Some((_, l)) if l > 0.0 => Verdict::SubcriticalRepellingCurve,
        _ => Verdict::Inconclusive,
    };
    let nf = &ly.normal_form;
    Ok(NSReport {
        alpha0,
        epsilon: eps,
        order: r,
        beta_eps: beta.beta,
        modulus_defect: beta.modulus_defect,
        fixed_point: beta.fixed_point.point.clone(),
        eigen: ly.eigen.clone(),
        rates: rates.at,
        transversality: rates.a_prime,
        degenerate_transversality: beta.degenerate_transversality,
        normal_frame: matrix_rows(&ly.frame.l),
        convention: ly.convention,
        g20: nf.g20,
        g11: nf.g11,
        g02: nf.g02,
        g21: nf.g21,
        c1: nf.c1,
        ell1: ly.ell1,
        ell1_expanded: nf.ell1_expanded,
        ell1_standard: ly.ell1_standard,
        ell1_taylor: ly.ell1_taylor,
        ell1_noise: ly.ell1_noise,
        ell1_series: series,
        leading_order: leading.map(|(s, _)| if s == 0 { r } else { s }),
        leading_coefficient: leading.map(|(_, l)| l),
        verdict,
        warnings,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stability {
    Attracting,
    Repelling,
    Nonhyperbolic,
    Unknown,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CurveState {
    Attracting,
    Repelling,
    None,
    Unknown,
}

#[derive(Clone, Debug, Serialize)]
pub struct Classification {
    pub alpha: f64,
    pub verdict: Verdict,
    pub fixed_point: Stability,
    pub curve: CurveState,
}

impl Classification {
    /// Short label used in sweep tables.
    pub fn label(&self) -> &'static str {
        match self.curve {
            CurveState::Attracting => "attracting-curve",
            CurveState::Repelling => "repelling-curve",
            CurveState::None => "no-curve",
            CurveState::Unknown => "inconclusive",
        }
    }
}

/// Sign table: the fixed point is repelling when `(alpha - beta) a' > 0`;
/// a curve exists on the side where the fixed point has the opposite
/// stability to the curve.
pub fn classify(report: &NSReport, alpha: f64) -> Classification {
    let side = ((alpha - report.beta_eps) * report.transversality).signum();
    let fixed_point = if alpha == report.beta_eps || report.transversality == 0.0 {
        Stability::Nonhyperbolic
    } else if side > 0.0 {
        Stability::Repelling
    } else {
        Stability::Attracting
    };
    let curve = match (report.verdict, fixed_point) {
        (Verdict::Inconclusive, _) => CurveState::Unknown,
        (_, Stability::Nonhyperbolic) => CurveState::None,
        (Verdict::SupercriticalAttractingCurve, Stability::Repelling) => CurveState::Attracting,
        (Verdict::SubcriticalRepellingCurve, Stability::Attracting) => CurveState::Repelling,
        _ => CurveState::None,
    };
    let fixed_point = if report.verdict == Verdict::Inconclusive && fixed_point == Stability::Nonhyperbolic {
        Stability::Unknown
    } else {
        fixed_point
    };
    Classification {
        alpha,
        verdict: report.verdict,
        fixed_point,
        curve,
    }
}

/// Angle `2 pi / k` closest to `theta`; used in resonance diagnostics.
pub fn nearest_resonance(theta: f64) -> (usize, f64) {
    (1..=4)
        .map(|k| {
            let d = (k as f64 * theta).rem_euclid(2.0 * PI);
            (k, d.min(2.0 * PI - d) / k as f64)
        })
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap_or((1, theta))
}
