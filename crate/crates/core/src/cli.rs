//! Command-line front end.

use std::ffi::OsString;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{Config, LoadedSystem};
use crate::curve::{find_curve, stability_probe, CurveOptions, Direction};
use crate::error::{Error, Result};
use crate::integrate::{flow_between, simulate_switched};
use crate::melnikov::melnikov_pair;
use crate::model::{ParameterPoint, PiecewiseSystem, State};
use crate::nsbif::{classify, fixed_point_curve, ns_analyze, NSReport, NsOptions};
use crate::output::fmt_f64;
use crate::pwl3d::{SECTION_RUN_IC, SECTION_RUN_T};
use crate::tmap::{MapFamily, TimeTMap};
use crate::VERSION;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Parser)]
#[command(name = "torus-scope", version, about = "Limit tori of periodic piecewise-smooth systems")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    pub out: PathBuf,
    /// Parameter or `run.` setting override, `key=value`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Tolerance override, `name=value`.
    #[arg(long = "tol", global = true, value_name = "NAME=VALUE")]
    pub tol: Vec<String>,
    /// Initial ring radius for the curve search.
    #[arg(long, global = true)]
    pub seed_radius: Option<f64>,
    /// Iterate the inverse map in the curve search.
    #[arg(long, global = true)]
    pub backward: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Trajectory CSV.
    Simulate,
    /// Poincare section hits CSV.
    Section,
    /// Melnikov functions on a grid.
    Melnikov,
    /// Fixed points of the time-T map along an alpha grid.
    FixedPoint,
    /// Neimark-Sacker report JSON.
    NsAnalyze,
    /// Invariant curve CSV and JSON sidecar.
    Curve,
    /// Verdict table over (alpha, epsilon, b).
    Sweep,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Section => "section",
            Command::Melnikov => "melnikov",
            Command::FixedPoint => "fixed-point",
            Command::NsAnalyze => "ns-analyze",
            Command::Curve => "curve",
            Command::Sweep => "sweep",
        }
    }
}

/// Everything a run needs, after overrides.
#[derive(Debug, Clone)]
pub struct RunManifest {
    pub command: Command,
    pub config_path: PathBuf,
    pub output_dir: PathBuf,
    pub overrides: Vec<(String, String)>,
    pub tolerances: Vec<(String, f64)>,
    pub seed_radius: Option<f64>,
    pub backward: bool,
}

/// Parses arguments, runs, reports errors, and returns the exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    let result = manifest(&cli).and_then(|m| run(&m));
    match result {
        Ok(files) => {
            for f in files {
                println!("{}", f.display());
            }
            0
        }
        Err(e) => {
            let code = exit_code(&e);
            let body = json!({
                "schema_version": SCHEMA_VERSION,
                "error": e.kind(),
                "message": e.to_string(),
                "exit_code": code,
            });
            eprintln!("{body}");
            code
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    if e.is_config_error() {
        2
    } else {
        1
    }
}

fn split_pair(s: &str, what: &str) -> Result<(String, String)> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| Error::Validation(format!("{what} `{s}` must look like key=value")))?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}

pub fn manifest(cli: &Cli) -> Result<RunManifest> {
    let config_path = cli
        .common
        .config
        .clone()
        .ok_or_else(|| Error::Validation("--config is required".into()))?;
    let overrides = cli.common.set.iter().map(|s| split_pair(s, "--set")).collect::<Result<_>>()?;
    let tolerances = cli
        .common
        .tol
        .iter()
        .map(|s| {
            let (k, v) = split_pair(s, "--tol")?;
            let x = v
                .parse::<f64>()
                .map_err(|_| Error::Validation(format!("--tol {k}: invalid number `{v}`")))?;
            Ok((k, x))
        })
        .collect::<Result<_>>()?;
    if let Some(r) = cli.common.seed_radius {
        if !(r > 0.0) || !r.is_finite() {
            return Err(Error::Validation("--seed-radius must be positive".into()));
        }
    }
    Ok(RunManifest {
        command: cli.command,
        config_path,
        output_dir: cli.common.out.clone(),
        overrides,
        tolerances,
        seed_radius: cli.common.seed_radius,
        backward: cli.common.backward,
    })
}

/// Loads the configuration with all overrides applied.
pub fn load_config(m: &RunManifest) -> Result<Config> {
    let text = fs::read_to_string(&m.config_path).map_err(|e| {
        Error::Validation(format!("cannot read config {}: {e}", m.config_path.display()))
    })?;
    let mut cfg = Config::parse(&text)?;
    for (k, v) in &m.overrides {
        cfg.set(k, v)?;
    }
    for (k, v) in &m.tolerances {
        cfg.tolerances.set(k, *v)?;
    }
    Ok(cfg)
}

/// Executes the manifest and returns the files written.
pub fn run(m: &RunManifest) -> Result<Vec<PathBuf>> {
    let cfg = load_config(m)?;
    fs::create_dir_all(&m.output_dir)
        .map_err(|e| Error::Validation(format!("output directory {}: {e}", m.output_dir.display())))?;
    let ctx = Context { m, cfg: &cfg };
    match m.command {
        Command::Simulate => ctx.simulate(),
        Command::Section => ctx.section(),
        Command::Melnikov => ctx.melnikov(),
        Command::FixedPoint => ctx.fixed_point(),
        Command::NsAnalyze => ctx.ns_analyze(),
        Command::Curve => ctx.curve(),
        Command::Sweep => ctx.sweep(),
    }
}

struct Context<'a> {
    m: &'a RunManifest,
    cfg: &'a Config,
}

fn is_pwl3d(sys: &PiecewiseSystem) -> bool {
    sys.name().starts_with("pwl3d")
}

impl Context<'_> {
    fn header(&self, extra: &[String]) -> Vec<String> {
        let mut h = vec![
            format!("torus-scope {VERSION}"),
            format!("command {}", self.m.command.name()),
            format!("system {}", self.cfg.system.name()),
        ];
        let mut params = vec![
            format!("alpha={}", fmt_f64(self.cfg.params.alpha)),
            format!("epsilon={}", fmt_f64(self.cfg.params.epsilon)),
        ];
        params.extend(self.cfg.params.extras.iter().map(|(k, v)| format!("{k}={}", fmt_f64(*v))));
        h.push(format!("parameters {}", params.join(" ")));
        let tols: Vec<String> = self
            .cfg
            .tolerances
            .entries()
            .iter()
            .map(|(k, v)| format!("{k}={}", fmt_f64(*v)))
            .collect();
        h.push(format!("tolerances {}", tols.join(" ")));
        let curve = self.curve_options().unwrap_or_default();
        h.push(format!(
            "curve nodes={} modes={} fit_modes={} max_sweeps={}",
            curve.nodes, curve.modes, curve.fit_modes, curve.max_sweeps
        ));
        if !self.cfg.run.is_empty() {
            let run: Vec<String> = self.cfg.run.iter().map(|(k, v)| format!("{k}={v}")).collect();
            h.push(format!("run {}", run.join("; ")));
        }
        h.extend(extra.iter().cloned());
        h
    }

    fn meta(&self) -> Value {
        let tols: serde_json::Map<String, Value> = self
            .cfg
            .tolerances
            .entries()
            .into_iter()
            .map(|(k, v)| (k.to_string(), json!(v)))
            .collect();
        json!({
            "schema_version": SCHEMA_VERSION,
            "version": VERSION,
            "command": self.m.command.name(),
            "system": self.cfg.system.name(),
            "parameters": self.cfg.params,
            "tolerances": tols,
            "curve_options": self.curve_options().unwrap_or_default(),
            "run": self.cfg.run,
        })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.m.output_dir.join(name)
    }

    fn write_csv(&self, name: &str, extra_header: &[String], columns: &[String], rows: &[Vec<f64>]) -> Result<PathBuf> {
        let path = self.path(name);
        let mut w = BufWriter::new(fs::File::create(&path)?);
        for line in self.header(extra_header) {
            writeln!(w, "# {line}")?;
        }
        writeln!(w, "{}", columns.join(","))?;
        for r in rows {
            let cells: Vec<String> = r.iter().map(|v| fmt_f64(*v)).collect();
            writeln!(w, "{}", cells.join(","))?;
        }
        w.flush()?;
        Ok(path)
    }

    fn write_json(&self, name: &str, body: Value) -> Result<PathBuf> {
        let path = self.path(name);
        let mut doc = self.meta();
        if let (Value::Object(d), Value::Object(b)) = (&mut doc, body) {
            d.extend(b);
        }
        let text = serde_json::to_string_pretty(&doc).map_err(|e| Error::Io(e.to_string()))?;
        fs::write(&path, text + "\n")?;
        Ok(path)
    }

    fn periodic(&self) -> Result<&PiecewiseSystem> {
        self.cfg.system.periodic()
    }

    fn family(&self, base: ParameterPoint) -> Result<TimeTMap> {
        Ok(TimeTMap::new(self.periodic()?.clone(), base, self.cfg.tolerances.integrator()))
    }

    fn ns_opts(&self) -> NsOptions {
        self.cfg.tolerances.ns()
    }

    fn state_setting(&self, key: &str, fallback: Option<Vec<f64>>, dim: usize) -> Result<State> {
        let v = match self.cfg.run_list(key)? {
            Some(v) => v,
            None => fallback.ok_or_else(|| Error::Validation(format!("run setting `{key}` is required")))?,
        };
        if v.len() != dim {
            return Err(Error::Validation(format!("run setting `{key}` needs {dim} entries")));
        }
        Ok(State::from_vec(v))
    }

    fn seed(&self, sys: &PiecewiseSystem) -> Result<State> {
        let fallback = is_pwl3d(sys).then(|| vec![std::f64::consts::PI, 1.0]);
        self.state_setting("seed", fallback, sys.dim())
    }

    fn series(&self) -> Result<Option<Vec<f64>>> {
        Ok(self.cfg.run_list("series")?.filter(|v| !v.is_empty()))
    }

    fn simulate(&self) -> Result<Vec<PathBuf>> {
        let opts = self.cfg.tolerances.integrator().dense();
        match &self.cfg.system {
            LoadedSystem::Cartesian(model) => {
                let x0 = self.state_setting("x0", Some(SECTION_RUN_IC.to_vec()), 3)?;
                let t_end = self.cfg.run_real("t_end", SECTION_RUN_T)?;
                let max_step = self.cfg.run_real("max_step", 0.1)?;
                let tr = simulate_switched(&model.cartesian_system(&self.cfg.params), &x0, t_end, &opts, max_step)?;
                let rows: Vec<Vec<f64>> = tr
                    .samples
                    .iter()
                    .map(|(t, x)| std::iter::once(*t).chain(x.iter().copied()).collect())
                    .collect();
                let extra = vec![format!("switches {}", tr.switch_times.len())];
                Ok(vec![self.write_csv("simulate.csv", &extra, &cols("t", "x", 3), &rows)?])
            }
            LoadedSystem::Periodic(sys) => {
                let x0 = self.state_setting("x0", self.cfg.run_list("seed")?, sys.dim())?;
                let period = sys.period();
                let t_end = self.cfg.run_real("t_end", period)?;
                if !(t_end > 0.0) {
                    return Err(Error::Validation("t_end must be positive".into()));
                }
                let mut rows = vec![std::iter::once(0.0).chain(x0.iter().copied()).collect::<Vec<f64>>()];
                let mut x = x0;
                let mut k = 0usize;
                let mut switches = 0usize;
                while (k as f64) * period < t_end * (1.0 - 1e-15) {
                    let t_off = k as f64 * period;
                    let span = (t_end - t_off).min(period);
                    let tr = flow_between(sys, &x, &self.cfg.params, 0.0, span, &opts)?;
                    switches += tr.switch_times.len();
                    rows.extend(
                        tr.samples
                            .iter()
                            .skip(1)
                            .map(|(t, s)| std::iter::once(t_off + t).chain(s.iter().copied()).collect()),
                    );
                    x = tr.end_state;
                    k += 1;
                }
                let extra = vec![format!("switches {switches}")];
                Ok(vec![self.write_csv("simulate.csv", &extra, &cols("t", "x", sys.dim()), &rows)?])
            }
        }
    }

    fn section(&self) -> Result<Vec<PathBuf>> {
        match &self.cfg.system {
            LoadedSystem::Cartesian(model) => {
                let x0 = self.state_setting("x0", Some(SECTION_RUN_IC.to_vec()), 3)?;
                let t_end = self.cfg.run_real("t_end", SECTION_RUN_T)?;
                let max_step = self.cfg.run_real("max_step", 0.1)?;
                let opts = self.cfg.tolerances.integrator();
                let tr = simulate_switched(&model.cartesian_system(&self.cfg.params), &x0, t_end, &opts, max_step)?;
                let rows: Vec<Vec<f64>> = tr
                    .section_hits
                    .iter()
                    .map(|h| std::iter::once(h.t).chain(h.state.iter().copied()).collect())
                    .collect();
                let extra = vec!["section y=0, x>0 (lower-to-upper crossings)".to_string()];
                Ok(vec![self.write_csv("section.csv", &extra, &cols("t", "x", 3), &rows)?])
            }
            LoadedSystem::Periodic(sys) => {
                let x0 = self.state_setting("x0", self.cfg.run_list("seed")?, sys.dim())?;
                let n = self.cfg.run_usize("iterations", 100)?;
                let family = self.family(self.cfg.params.clone())?;
                let (a, e) = (self.cfg.params.alpha, self.cfg.params.epsilon);
                let mut x = x0;
                let mut rows = vec![std::iter::once(0.0).chain(x.iter().copied()).collect::<Vec<f64>>()];
                for k in 1..=n {
                    x = family.apply(&x, a, e)?;
                    rows.push(std::iter::once(k as f64).chain(x.iter().copied()).collect());
                }
                let extra = vec!["stroboscopic section t = 0 mod T".to_string()];
                Ok(vec![self.write_csv("section.csv", &extra, &cols("k", "x", sys.dim()), &rows)?])
            }
        }
    }

    fn melnikov(&self) -> Result<Vec<PathBuf>> {
        let sys = self.periodic()?;
        let dim = sys.dim();
        let pw = is_pwl3d(sys);
        let axes: Vec<Vec<f64>> = (1..=dim)
            .map(|i| {
                let key = format!("grid.x{i}");
                match self.cfg.run_range(&key)? {
                    Some(g) => Ok(g),
                    None if pw && i == 1 => Ok(linspace(1.0, 6.0, 7)),
                    None if pw && i == 2 => Ok(linspace(-3.0, 4.0, 7)),
                    None => Err(Error::Validation(format!("run setting `{key}` is required"))),
                }
            })
            .collect::<Result<_>>()?;
        let mut points: Vec<Vec<f64>> = vec![Vec::new()];
        for axis in &axes {
            points = points
                .iter()
                .flat_map(|p| {
                    axis.iter().map(move |v| {
                        let mut q = p.clone();
                        q.push(*v);
                        q
                    })
                })
                .collect();
        }
        let params = &self.cfg.params;
        let rows: Vec<Vec<f64>> = points
            .par_iter()
            .map(|p| {
                let x = State::from_vec(p.clone());
                let mp = melnikov_pair(sys, &x, params)?;
                let mut r = p.clone();
                for v in [&mp.delta1, &mp.delta2, &mp.g2_smooth, &mp.g2_jump] {
                    r.extend(v.iter().copied());
                }
                Ok(r)
            })
            .collect::<Result<_>>()?;
        let mut columns = cols_only("x", dim);
        for name in ["delta1_", "delta2_", "g2_smooth_", "g2_jump_"] {
            columns.extend(cols_only(name, dim));
        }
        Ok(vec![self.write_csv("melnikov.csv", &[], &columns, &rows)?])
    }

    fn fixed_point(&self) -> Result<Vec<PathBuf>> {
        let sys = self.periodic()?;
        let seed = self.seed(sys)?;
        let alphas = self
            .cfg
            .run_range("alpha_grid")?
            .unwrap_or_else(|| vec![self.cfg.params.alpha]);
        let family = self.family(self.cfg.params.clone())?;
        let curve = fixed_point_curve(&family, &seed, &alphas, self.cfg.params.epsilon, &self.ns_opts())?;
        let rows: Vec<Vec<f64>> = curve
            .alpha_grid
            .iter()
            .zip(&curve.points)
            .zip(&curve.newton_residuals)
            .map(|((a, x), r)| {
                let mut row = vec![*a];
                row.extend(x.iter().copied());
                row.push(*r);
                row
            })
            .collect();
        let mut columns = vec!["alpha".to_string()];
        columns.extend(cols_only("x", sys.dim()));
        columns.push("residual".into());
        Ok(vec![self.write_csv("fixed_point.csv", &[], &columns, &rows)?])
    }

    fn report(&self, family: &TimeTMap, eps: f64) -> Result<NSReport> {
        let sys = self.periodic()?;
        let seed = self.seed(sys)?;
        let alpha0 = self.cfg.run_real("alpha0", 0.0)?;
        let series = self.series()?;
        ns_analyze(family, &seed, alpha0, eps, series.as_deref(), &self.ns_opts())
    }

    fn ns_analyze(&self) -> Result<Vec<PathBuf>> {
        let family = self.family(self.cfg.params.clone())?;
        let report = self.report(&family, self.cfg.params.epsilon)?;
        let class = classify(&report, self.cfg.params.alpha);
        let body = json!({
            "report": report,
            "classification": class_json(&class),
        });
        Ok(vec![self.write_json("ns_report.json", body)?])
    }

    fn curve_options(&self) -> Result<CurveOptions> {
        let mut o = self.cfg.tolerances.curve();
        o.nodes = self.cfg.run_usize("curve.nodes", o.nodes)?;
        o.modes = self.cfg.run_usize("curve.modes", o.modes)?;
        o.fit_modes = self.cfg.run_usize("curve.fit_modes", o.fit_modes)?;
        o.max_sweeps = self.cfg.run_usize("curve.max_sweeps", o.max_sweeps)?;
        o.seed_radius = self.m.seed_radius;
        if self.m.backward {
            o.direction = Some(Direction::Inverse);
        }
        Ok(o)
    }

    fn curve(&self) -> Result<Vec<PathBuf>> {
        let sys = self.periodic()?;
        if sys.dim() != 2 {
            return Err(Error::Validation("curve needs a planar system".into()));
        }
        let family = self.family(self.cfg.params.clone())?;
        let (alpha, eps) = (self.cfg.params.alpha, self.cfg.params.epsilon);
        let report = self.report(&family, eps)?;
        let opts = self.curve_options()?;
        let curve = find_curve(&family, alpha, eps, &report, &self.ns_opts(), &opts)?;
        let probe = if self.cfg.run_bool("curve.probe", true)? {
            Some(stability_probe(&family, &curve, opts.probe_delta, opts.probe_iterations)?)
        } else {
            None
        };
        let rows: Vec<Vec<f64>> = curve
            .angles
            .iter()
            .zip(&curve.nodes)
            .map(|(a, x)| vec![*a, x[0], x[1]])
            .collect();
        let extra = vec![
            format!("center {} {}", fmt_f64(curve.center[0]), fmt_f64(curve.center[1])),
            format!("residual {}", fmt_f64(curve.residual)),
            format!("stability {:?}", curve.stability).to_lowercase(),
        ];
        let columns = vec!["angle".to_string(), "x1".into(), "x2".into()];
        let csv = self.write_csv("curve.csv", &extra, &columns, &rows)?;
        let body = json!({
            "curve": {
                "alpha": curve.alpha,
                "epsilon": curve.epsilon,
                "center": curve.center.as_slice(),
                "residual": curve.residual,
                "stability": curve.stability,
                "direction": curve.direction,
                "rotation_number_estimate": curve.rotation_number_estimate,
                "winding_number": curve.winding_number,
                "seed_radius": curve.seed_radius,
                "sweeps": curve.sweeps,
                "last_change": curve.last_change,
                "fourier": curve.fourier,
                "mean_radius": curve.mean_radius(),
            },
            "stability_probe": probe,
            "classification": class_json(&classify(&report, alpha)),
            "beta_eps": report.beta_eps,
            "ell1_standard": report.ell1_standard,
            "verdict": report.verdict,
        });
        let sidecar = self.write_json("curve.json", body)?;
        Ok(vec![csv, sidecar])
    }

    fn sweep(&self) -> Result<Vec<PathBuf>> {
        self.periodic()?;
        let alphas = self
            .cfg
            .run_range("sweep.alpha")?
            .ok_or_else(|| Error::Validation("run setting `sweep.alpha` (lo, hi, n) is required".into()))?;
        let relative = self.cfg.run_bool("sweep.relative", false)?;
        let eps_list = self
            .cfg
            .run_list("sweep.epsilon")?
            .unwrap_or_else(|| vec![self.cfg.params.epsilon]);
        let b_list: Vec<Option<f64>> = match self.cfg.run_list("sweep.b")? {
            Some(v) => {
                if !self.cfg.declared_parameters().iter().any(|k| k == "b") {
                    return Err(Error::Validation("sweep.b needs a declared parameter `b`".into()));
                }
                if v.contains(&0.0) {
                    return Err(Error::Validation("sweep.b entries must be nonzero".into()));
                }
                v.into_iter().map(Some).collect()
            }
            None => vec![self.cfg.params.extra("b")],
        };
        let mut cases = Vec::new();
        for &b in &b_list {
            for &e in &eps_list {
                let mut p = self.cfg.params.with_epsilon(e);
                if let Some(b) = b {
                    p = p.with_extra("b", b);
                }
                self.periodic()?.check_parameters(&p)?;
                cases.push((b, e, p));
            }
        }
        let reports: Vec<Result<NSReport>> = cases
            .par_iter()
            .map(|(_, e, p)| {
                let family = self.family(p.clone())?;
                self.report(&family, *e)
            })
            .collect();
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for ((b, e, _), rep) in cases.iter().zip(reports) {
            let rep = rep?;
            for &a in &alphas {
                let alpha = if relative { rep.beta_eps + a } else { a };
                let c = classify(&rep, alpha);
                rows.push(vec![
                    *e,
                    b.unwrap_or(f64::NAN),
                    alpha,
                    rep.beta_eps,
                    alpha - rep.beta_eps,
                    rep.ell1_standard,
                ]);
                labels.push((rep.verdict.as_str(), c.label(), fp_label(c.fixed_point)));
            }
        }
        let path = self.path("sweep.csv");
        let mut w = BufWriter::new(fs::File::create(&path)?);
        for line in self.header(&[]) {
            writeln!(w, "# {line}")?;
        }
        writeln!(w, "epsilon,b,alpha,beta,alpha_minus_beta,ell1_standard,verdict,curve,fixed_point")?;
        for (r, (v, l, f)) in rows.iter().zip(labels) {
            let cells: Vec<String> = r.iter().map(|x| fmt_f64(*x)).collect();
            writeln!(w, "{},{v},{l},{f}", cells.join(","))?;
        }
        w.flush()?;
        Ok(vec![path])
    }
}

fn fp_label(s: crate::nsbif::Stability) -> &'static str {
    use crate::nsbif::Stability::*;
    match s {
        Attracting => "attracting",
        Repelling => "repelling",
        Nonhyperbolic => "nonhyperbolic",
        Unknown => "unknown",
    }
}

#[derive(Serialize)]
struct ClassJson {
    alpha: f64,
    verdict: &'static str,
    fixed_point: &'static str,
    curve: &'static str,
}

fn class_json(c: &crate::nsbif::Classification) -> ClassJson {
    ClassJson {
        alpha: c.alpha,
        verdict: c.verdict.as_str(),
        fixed_point: fp_label(c.fixed_point),
        curve: c.label(),
    }
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

fn cols_only(prefix: &str, dim: usize) -> Vec<String> {
    (1..=dim).map(|i| format!("{prefix}{i}")).collect()
}

fn cols(first: &str, prefix: &str, dim: usize) -> Vec<String> {
    std::iter::once(first.to_string()).chain(cols_only(prefix, dim)).collect()
}
