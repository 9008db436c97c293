//! End-to-end acceptance checks on the 3D piecewise linear example.
//!
//! Runs as a plain binary so that every criterion prints one PASS/FAIL line.

use std::f64::consts::PI;
use std::time::Instant;

use nalgebra::{DMatrix, Matrix3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use torus_scope::curve::{
    find_curve, fixed_point_probe, hausdorff_points, persistence_probe, stability_probe, CurveOptions, CurveStability,
    Direction,
};
use torus_scope::integrate::{fd_jacobian, flow, simulate_switched, IntegratorOptions};
use torus_scope::melnikov::melnikov_pair;
use torus_scope::model::{switch_fn, term_fn};
use torus_scope::nsbif::{classify, find_fixed_point, lyapunov_first, ns_analyze, NSReport, NsOptions, Stability};
use torus_scope::pwl3d::{
    ell12_taylor, oracle_delta, oracle_fixed_point, section_run_alpha, Pwl3dModel, Pwl3dParams, SECTION_RUN_IC,
    SECTION_RUN_T,
};
use torus_scope::tmap::{MapFamily, TimeTMap};
use torus_scope::{ParameterPoint, PiecewiseSystem, State, SwitchingFunction, ZoneField};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn family(b: f64, exact: bool) -> TimeTMap {
    family_with(Pwl3dModel::new(b).unwrap(), b, exact)
}

fn family_with(model: Pwl3dModel, b: f64, exact: bool) -> TimeTMap {
    TimeTMap::new(
        model.reduced_system_with(exact).unwrap(),
        ParameterPoint::new(0.0, 0.0).with_extra("b", b),
        IntegratorOptions::default(),
    )
}

fn seed() -> State {
    State::from_vec(vec![PI, 1.0])
}

fn grid() -> Vec<(f64, f64, f64)> {
    let mut g = Vec::new();
    for &a in &[-0.25, 0.0, 0.25] {
        for i in 0..7 {
            for j in 0..7 {
                g.push((1.0 + 5.0 * i as f64 / 6.0, -3.0 + 7.0 * j as f64 / 6.0, a));
            }
        }
    }
    g
}

fn melnikov_oracle() -> Outcome {
    let b = -5.0;
    let sys = Pwl3dModel::new(b).unwrap().reduced_system().unwrap();
    let errs: Vec<(f64, f64)> = grid()
        .par_iter()
        .map(|&(r, z, a)| {
            let p = ParameterPoint::new(a, 0.01).with_extra("b", b);
            let m = melnikov_pair(&sys, &State::from_vec(vec![r, z]), &p).unwrap();
            let o = oracle_delta(&Pwl3dParams::new(b, a, 0.01).unwrap(), r, z).unwrap();
            ((m.delta1 - o.delta1).amax(), (m.delta2 - o.delta2).amax())
        })
        .collect();
    let e1 = errs.iter().map(|e| e.0).fold(0.0, f64::max);
    let e2 = errs.iter().map(|e| e.1).fold(0.0, f64::max);
    outcome(
        e1 <= 1e-8 && e2 <= 1e-6,
        format!("max |delta1 err| = {e1:.2e} (<= 1e-8), max |delta2 err| = {e2:.2e} (<= 1e-6) on {} points", errs.len()),
    )
}

fn near_identity() -> Outcome {
    let b = -5.0;
    let fam = family(b, false);
    let sys = Pwl3dModel::new(b).unwrap().reduced_system().unwrap();
    let err = |eps: f64| {
        grid()
            .par_iter()
            .map(|&(r, z, a)| {
                let x = State::from_vec(vec![r, z]);
                let d = fam.deviation(&x, a, eps).unwrap() / eps;
                let p = ParameterPoint::new(a, eps).with_extra("b", b);
                let d1 = melnikov_pair(&sys, &x, &p).unwrap().delta1;
                (d - d1).norm()
            })
            .reduce(|| 0.0, f64::max)
    };
    let (e1, e2) = (err(1e-2), err(5e-3));
    let ratio = e1 / e2;
    outcome(
        (ratio - 2.0).abs() <= 0.3,
        format!("sup error {e1:.4e} at eps=1e-2, {e2:.4e} at eps=5e-3, ratio {ratio:.4} (2 +- 0.3)"),
    )
}

fn fixed_point_expansion() -> Outcome {
    let b = -5.0;
    let fam = family(b, false);
    let o = oracle_fixed_point(0.0, b).unwrap();
    let opts = NsOptions::default();
    let c: Vec<f64> = [0.02, 0.01, 0.005]
        .iter()
        .map(|&eps| {
            let fp = find_fixed_point(&fam, &State::from_vec(vec![o.r0, o.z0]), 0.0, eps, &opts).unwrap();
            let pred = State::from_vec(vec![o.r0 + eps * o.r1, o.z0 + eps * o.s1]);
            (fp.point - pred).norm() / (eps * eps)
        })
        .collect();
    let ratios = [c[0] / c[1], c[1] / c[2]];
    let pass = c.iter().all(|v| v.is_finite()) && ratios.iter().all(|r| (0.5..=2.0).contains(r));
    outcome(
        pass,
        format!(
            "residual/eps^2 = {:.5}, {:.5}, {:.5}; halving ratios {:.4}, {:.4} (in [0.5, 2])",
            c[0], c[1], c[2], ratios[0], ratios[1]
        ),
    )
}

fn critical_curve() -> Outcome {
    let b = -5.0;
    let eps = 0.01;
    let fam = family(b, false);
    let r = ns_analyze(&fam, &seed(), 0.0, eps, None, &NsOptions::default()).unwrap();
    let target = 2.23934;
    let q = r.beta_eps / eps;
    let rel = (q - target).abs() / target;
    outcome(
        rel <= 0.05 && r.modulus_defect.abs() <= 1e-9,
        format!(
            "beta/eps = {q:.6} vs {target} (rel err {rel:.3}, <= 0.05); ||lambda|-1| = {:.2e} (<= 1e-9)",
            r.modulus_defect.abs()
        ),
    )
}

fn lyapunov_series() -> Outcome {
    let grid = [0.005, 0.0075, 0.01, 0.015, 0.02];
    let opts = NsOptions::default();
    let mut pass = true;
    let mut parts = Vec::new();
    for (b, expect) in [(-5.0, 0.021203), (1.0, -0.0042406)] {
        let fam = family(b, false);
        let r = ns_analyze(&fam, &seed(), 0.0, 0.01, Some(&grid), &opts).unwrap();
        let s = r.ell1_series.expect("series requested");
        let rel = (s.ell12 - expect).abs() / expect.abs();
        pass &= s.ell11.abs() <= 1e-4 && rel <= 0.05;
        parts.push(format!(
            "b={b}: ell11 = {:.2e} (<= 1e-4), ell12 = {:.6} vs {expect} (rel err {rel:.3}, <= 0.05; closed form {:.7})",
            s.ell11,
            s.ell12,
            ell12_taylor(b)
        ));
    }
    outcome(pass, parts.join("; "))
}

fn figure_one() -> Outcome {
    let (b, eps) = (-5.0, 1.0 / 40.0);
    let alpha = section_run_alpha(eps);
    let fam = family(b, true);
    let opts = NsOptions::default();
    let report = ns_analyze(&fam, &State::from_vec(vec![3.0, 1.0]), 0.0, eps, None, &opts).unwrap();
    let curve = match find_curve(&fam, alpha, eps, &report, &opts, &CurveOptions::default()) {
        Ok(c) => c,
        Err(e) => return outcome(false, format!("find_curve failed: {e}")),
    };
    let p = ParameterPoint::new(alpha, eps).with_extra("b", b);
    let model = Pwl3dModel::new(b).unwrap();
    let trace = simulate_switched(
        &model.cartesian_system(&p),
        &State::from_column_slice(&SECTION_RUN_IC),
        SECTION_RUN_T,
        &IntegratorOptions::default(),
        0.1,
    )
    .unwrap();
    let hits: Vec<State> = trace
        .section_hits
        .iter()
        .map(|h| State::from_vec(vec![h.state[0], h.state[2]]))
        .collect();
    let hd = hausdorff_points(&hits, &curve);
    let min_radius = (0..720)
        .map(|i| curve.fit.eval(2.0 * PI * i as f64 / 720.0))
        .fold(f64::INFINITY, f64::min);
    let simple = curve.winding_number == 1 && min_radius > 0.0;
    let pass = curve.residual <= 1e-6 && simple && hd <= 0.2 && curve.direction == Direction::Inverse;
    outcome(
        pass,
        format!(
            "residual {:.2e} (<= 1e-6), winding {}, min radius {min_radius:.3}, {} section hits within Hausdorff {hd:.4} (<= 0.2), direction {:?}",
            curve.residual,
            curve.winding_number,
            hits.len(),
            curve.direction
        ),
    )
}

struct TableRow {
    b: f64,
    below: bool,
    label: &'static str,
    fixed_point: Stability,
    fp_rate: f64,
    curve: Option<CurveStability>,
    probe: Option<CurveStability>,
}

fn stability_table() -> Outcome {
    let eps = 0.025;
    let opts = NsOptions::default();
    let cases = [(-5.0, 0.005), (5.0, 0.001)];
    let rows: Vec<TableRow> = cases
        .par_iter()
        .flat_map(|&(b, offset)| {
            let fam = family(b, false);
            let report: NSReport = ns_analyze(&fam, &seed(), 0.0, eps, None, &opts).unwrap();
            [true, false]
                .into_par_iter()
                .map(|below| {
                    let alpha = report.beta_eps + if below { -offset } else { offset };
                    let class = classify(&report, alpha);
                    let center = find_fixed_point(&fam, &report.fixed_point, alpha, eps, &opts).unwrap().point;
                    let fp_rate = fixed_point_probe(&fam, &center, alpha, eps, 1e-3, 200).unwrap();
                    let (curve, probe) = match find_curve(&fam, alpha, eps, &report, &opts, &CurveOptions::default()) {
                        Ok(c) => {
                            let p = stability_probe(&fam, &c, 1e-3, 200).unwrap();
                            (Some(c.stability), p.verdict)
                        }
                        Err(_) => (None, None),
                    };
                    TableRow {
                        b,
                        below,
                        label: class.label(),
                        fixed_point: class.fixed_point,
                        fp_rate,
                        curve,
                        probe,
                    }
                })
                .collect::<Vec<_>>()
        })
        .collect();
    let mut pass = true;
    let mut parts = Vec::new();
    for r in &rows {
        let (fp, curve) = match (r.b < 0.0, r.below) {
            (true, true) => (Stability::Attracting, Some(CurveStability::Repelling)),
            (true, false) => (Stability::Repelling, None),
            (false, false) => (Stability::Repelling, Some(CurveStability::Attracting)),
            (false, true) => (Stability::Attracting, None),
        };
        let drift_ok = match fp {
            Stability::Attracting => r.fp_rate < 0.0,
            _ => r.fp_rate > 0.0,
        };
        let ok = r.fixed_point == fp && drift_ok && r.curve == curve && r.probe == curve;
        pass &= ok;
        parts.push(format!(
            "b={} {}: {} fp {:?} (drift {:+.1e}) curve {:?} probe {:?}",
            r.b,
            if r.below { "alpha<beta" } else { "alpha>beta" },
            r.label,
            r.fixed_point,
            r.fp_rate,
            r.curve,
            r.probe
        ));
    }
    outcome(pass, parts.join("; "))
}

fn persistence() -> Outcome {
    let (b, eps) = (-5.0, 1.0 / 40.0);
    let alpha = section_run_alpha(eps);
    let opts = NsOptions::default();
    let copts = CurveOptions::default();
    let base = family(b, true);
    let report = ns_analyze(&base, &State::from_vec(vec![3.0, 1.0]), 0.0, eps, None, &opts).unwrap();
    let curve = find_curve(&base, alpha, eps, &report, &opts, &copts).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(20240611);
    let draws: Vec<Matrix3<f64>> = (0..5)
        .map(|_| Matrix3::from_fn(|_, _| if rng.gen::<bool>() { 1e-3 } else { -1e-3 }))
        .collect();
    let shifts: Vec<(f64, f64)> = draws
        .par_iter()
        .map(|d| {
            let shift = |m: Matrix3<f64>| {
                let fam = family_with(Pwl3dModel::new(b).unwrap().with_b_minus_delta(m), b, true);
                persistence_probe(&fam, &curve, &opts, &copts)
                    .map(|p| p.hausdorff_shift)
                    .unwrap_or(f64::INFINITY)
            };
            (shift(*d), shift(*d * 0.5))
        })
        .collect();
    let pass = shifts
        .iter()
        .all(|(full, half)| *full <= 0.1 && (1.5..=2.5).contains(&(full / half)));
    let parts: Vec<String> = shifts
        .iter()
        .map(|(f, h)| format!("{f:.2e}/{h:.2e} (x{:.2})", f / h))
        .collect();
    outcome(
        pass,
        format!("Hausdorff shift full/half perturbation (<= 0.1, ratio ~2): {}", parts.join(", ")),
    )
}

fn synthetic(c0: [f64; 2], c1: [f64; 2], slope: f64) -> PiecewiseSystem {
    let z0 = ZoneField::new(vec![term_fn(move |_, _, _| State::from_vec(c0.to_vec()))]);
    let z1 = ZoneField::new(vec![term_fn(move |_, x: &State, _| {
        State::from_vec(vec![c1[0] + 0.3 * x[1], c1[1] - 0.2 * x[0]])
    })]);
    let sw = SwitchingFunction::state_dependent(switch_fn(move |x, _| PI + slope * x[0]));
    PiecewiseSystem::new("synthetic", 2.0 * PI, 2, vec![z0, z1], vec![sw]).unwrap()
}

fn property_suite() -> Outcome {
    let mut parts = Vec::new();
    let mut pass = true;

    let (b, eps) = (-5.0, 0.01);
    let fam = family(b, false);
    let opts = NsOptions::default();
    let report = ns_analyze(&fam, &seed(), 0.0, eps, None, &opts).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let ell: Vec<f64> = (0..8)
        .map(|_| {
            let o = NsOptions {
                gauge_phase: rng.gen_range(0.0..2.0 * PI),
                ..opts.clone()
            };
            lyapunov_first(&fam, &report.fixed_point, report.beta_eps, eps, report.order, &o)
                .unwrap()
                .ell1
        })
        .collect();
    let spread = ell.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - ell.iter().cloned().fold(f64::INFINITY, f64::min);
    pass &= spread <= 1e-10;
    parts.push(format!("gauge spread {spread:.1e} (<= 1e-10)"));

    let tight = IntegratorOptions::with_tolerances(1e-13, 1e-13);
    let (c0, c1) = ([1.5, -0.5], [-2.0, 0.25]);
    let syn = synthetic(c0, c1, 0.1);
    let pw = Pwl3dModel::new(b).unwrap().reduced_system().unwrap();
    let mut jac_err: f64 = 0.0;
    let mut event_res: f64 = 0.0;
    for (sys, x, p) in [
        (&pw, State::from_vec(vec![3.0, 0.8]), ParameterPoint::new(0.1, 0.05).with_extra("b", b)),
        (&syn, State::from_vec(vec![0.8, -0.3]), ParameterPoint::new(0.0, 0.05)),
    ] {
        let f = TimeTMap::new(sys.clone(), p.clone(), IntegratorOptions::default());
        let ft = TimeTMap::new(sys.clone(), p.clone(), tight.clone());
        let var = f.jacobian(&x, p.alpha, p.epsilon).unwrap();
        let fd: DMatrix<f64> = fd_jacobian(|z| ft.apply(z, p.alpha, p.epsilon).unwrap(), &x);
        jac_err = jac_err.max((var - fd).amax());
        let tr = flow(sys, &x, &p, sys.period(), &IntegratorOptions::default()).unwrap();
        event_res = event_res.max(tr.max_event_residual());
    }
    pass &= jac_err <= 1e-6 && event_res <= 1e-12;
    parts.push(format!("variational vs FD jacobian {jac_err:.1e} (<= 1e-6)"));
    parts.push(format!("event residual {event_res:.1e} (<= 1e-12)"));

    let mut id_err: f64 = 0.0;
    for (sys, x) in [(&pw, State::from_vec(vec![2.0, -1.0])), (&syn, State::from_vec(vec![0.4, 1.1]))] {
        let p = ParameterPoint::new(0.2, 0.0).with_extra("b", b);
        let y = flow(sys, &x, &p, sys.period(), &IntegratorOptions::default()).unwrap().end_state;
        id_err = id_err.max((y - x).amax());
    }
    pass &= id_err <= 1e-10;
    parts.push(format!("eps=0 identity error {id_err:.1e} (<= 1e-10)"));

    let pconst = ParameterPoint::new(0.0, 0.01).with_extra("b", b);
    let jump_const = melnikov_pair(&pw, &State::from_vec(vec![2.5, 0.5]), &pconst).unwrap().g2_jump.amax();
    let x = State::from_vec(vec![0.8, -0.3]);
    let p0 = ParameterPoint::new(0.0, 0.01);
    let m = melnikov_pair(&syn, &x, &p0).unwrap();
    let theta = PI + 0.1 * x[0];
    let direct = [
        (c0[0] - (c1[0] + 0.3 * x[1])) * 0.1 * c0[0] * theta,
        (c0[1] - (c1[1] - 0.2 * x[0])) * 0.1 * c0[0] * theta,
    ];
    let jump_err = (m.g2_jump[0] - direct[0]).abs().max((m.g2_jump[1] - direct[1]).abs());
    let e = 1e-4;
    let pe = ParameterPoint::new(0.0, e);
    let y = flow(&syn, &x, &pe, 2.0 * PI, &tight).unwrap().end_state;
    let second = (y - &x - &m.delta1 * e) / (e * e);
    let map_err = (second - &m.delta2).amax();
    let nonzero = m.g2_jump.amax() > 1e-3;
    pass &= jump_const == 0.0 && nonzero && jump_err <= 1e-9 && map_err <= 1e-2;
    parts.push(format!(
        "jump term {jump_const:.1e} for constant switchers, |{:.4}| vs direct formula err {jump_err:.1e}, (P-x-eps D1)/eps^2 vs D2 err {map_err:.1e}",
        m.g2_jump.amax()
    ));
    outcome(pass, parts.join("; "))
}

fn main() {
    type Criterion = (&'static str, fn() -> Outcome);
    let criteria: [Criterion; 9] = [
        ("melnikov oracle match", melnikov_oracle),
        ("near-identity consistency", near_identity),
        ("fixed-point expansion", fixed_point_expansion),
        ("critical curve beta(eps)", critical_curve),
        ("lyapunov series", lyapunov_series),
        ("invariant curve vs section run", figure_one),
        ("stability table", stability_table),
        ("persistence", persistence),
        ("property suite", property_suite),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = Vec::new();
    for (i, (name, f)) in criteria.iter().enumerate() {
        let id = format!("{}", i + 1);
        if !filter.is_empty() && !filter.iter().any(|s| *s == id || name.contains(s.as_str())) {
            continue;
        }
        let t0 = Instant::now();
        let o = f();
        println!(
            "criterion {id} [{}] {name}: {} ({:.1}s)",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            t0.elapsed().as_secs_f64()
        );
        if !o.pass {
            failed.push(id);
        }
    }
    if failed.is_empty() {
        println!("acceptance: all criteria passed");
    } else {
        println!("acceptance: failed criteria {}", failed.join(", "));
        std::process::exit(1);
    }
}
