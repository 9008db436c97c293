//! Configuration files.
//!
//! ```text
//! torus-scope-config v1
//! system = pwl3d              # pwl3d | pwl3d-cartesian | inline
//! remainder = truncated       # pwl3d only: truncated | exact
//!
//! [parameters]
//! alpha = 0
//! epsilon = 0.025
//! b = -5
//!
//! [domain]
//! lower = 0.01, -20
//! upper = 20, 20
//! alpha = -0.5, 0.5
//! epsilon_max = 0.25
//!
//! [run]
//! seed = 3.14159, 1
//!
//! [tolerances]
//! newton = 1e-11
//! ```
//!
//! Inline systems add a `[system]` section (`period`, `dim`, `switchers`),
//! or `[switcher j]` sections (keys `theta`, `gradient`, `alpha`) for affine
//! state-dependent switching times `theta + gradient . x + c alpha`, and one
//! `[zone j]` section per zone, `j = 0..n`. Zone terms are affine in `x` and
//! `alpha`, optionally modulated by `cos(k w t)` / `sin(k w t)` with
//! `w = 2 pi / T`:
//!
//! ```text
//! [zone 0]
//! f1.matrix = 0, 1; -1, 0      # rows separated by `;`
//! f1.offset = 0, 0
//! f1.alpha_matrix = 1, 0; 0, 1
//! f1.cos1.offset = 1, 0
//! remainder.matrix = 0, 0; 0, 0
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::curve::CurveOptions;
use crate::error::{Error, Result};
use crate::integrate::IntegratorOptions;
use crate::model::{switch_fn, term_fn, DomainBox, ParameterPoint, PiecewiseSystem, State, SwitchingFunction, ZoneField};
use crate::nsbif::NsOptions;
use crate::pwl3d::Pwl3dModel;

pub const HEADER: &str = "torus-scope-config v1";

/// A system ready for analysis.
#[derive(Clone, Debug)]
pub enum LoadedSystem {
    /// A periodic piecewise system in standard form.
    Periodic(PiecewiseSystem),
    /// The autonomous Cartesian example, with its model.
    Cartesian(Pwl3dModel),
}

impl LoadedSystem {
    pub fn name(&self) -> &str {
        match self {
            LoadedSystem::Periodic(s) => s.name(),
            LoadedSystem::Cartesian(_) => "pwl3d-cartesian",
        }
    }

    pub fn periodic(&self) -> Result<&PiecewiseSystem> {
        match self {
            LoadedSystem::Periodic(s) => Ok(s),
            LoadedSystem::Cartesian(_) => Err(Error::Validation(
                "this command needs a periodic system; pwl3d-cartesian only supports simulate and section".into(),
            )),
        }
    }
}

/// Named numerical tolerances, adjustable from config or the command line.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Tolerances {
    pub rtol: f64,
    pub atol: f64,
    pub event: f64,
    pub newton: f64,
    pub beta: f64,
    pub resonance: f64,
    pub order_probe: f64,
    pub series_zero: f64,
    pub curve: f64,
    pub h2: f64,
    pub h3: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        let i = IntegratorOptions::default();
        let n = NsOptions::default();
        let c = CurveOptions::default();
        Self {
            rtol: i.rtol,
            atol: i.atol,
            event: i.event_tol,
            newton: n.newton_tol,
            beta: n.beta_tol,
            resonance: n.resonance_tol,
            order_probe: n.order_probe_tol,
            series_zero: n.series_zero_tol,
            curve: c.tol,
            h2: n.fd.h2_rel,
            h3: n.fd.h3_rel,
        }
    }
}

impl Tolerances {
    pub const NAMES: [&'static str; 11] = [
        "rtol",
        "atol",
        "event",
        "newton",
        "beta",
        "resonance",
        "order_probe",
        "series_zero",
        "curve",
        "h2",
        "h3",
    ];

    pub fn set(&mut self, name: &str, value: f64) -> Result<()> {
        if !(value > 0.0) || !value.is_finite() {
            return Err(Error::Validation(format!("tolerance `{name}` must be positive, got {value}")));
        }
        let slot = match name {
            "rtol" => &mut self.rtol,
            "atol" => &mut self.atol,
            "event" => &mut self.event,
            "newton" => &mut self.newton,
            "beta" => &mut self.beta,
            "resonance" => &mut self.resonance,
            "order_probe" => &mut self.order_probe,
            "series_zero" => &mut self.series_zero,
            "curve" => &mut self.curve,
            "h2" => &mut self.h2,
            "h3" => &mut self.h3,
            _ => {
                return Err(Error::Validation(format!(
                    "unknown tolerance `{name}` (known: {})",
                    Self::NAMES.join(", ")
                )))
            }
        };
        *slot = value;
        Ok(())
    }

    pub fn entries(&self) -> Vec<(&'static str, f64)> {
        vec![
            ("rtol", self.rtol),
            ("atol", self.atol),
            ("event", self.event),
            ("newton", self.newton),
            ("beta", self.beta),
            ("resonance", self.resonance),
            ("order_probe", self.order_probe),
            ("series_zero", self.series_zero),
            ("curve", self.curve),
            ("h2", self.h2),
            ("h3", self.h3),
        ]
    }

    pub fn integrator(&self) -> IntegratorOptions {
        IntegratorOptions {
            rtol: self.rtol,
            atol: self.atol,
            event_tol: self.event,
            ..IntegratorOptions::default()
        }
    }

    pub fn ns(&self) -> NsOptions {
        let mut o = NsOptions::default();
        o.newton_tol = self.newton;
        o.beta_tol = self.beta;
        o.resonance_tol = self.resonance;
        o.order_probe_tol = self.order_probe;
        o.series_zero_tol = self.series_zero;
        o.fd.h2_rel = self.h2;
        o.fd.h3_rel = self.h3;
        o
    }

    pub fn curve(&self) -> CurveOptions {
        CurveOptions {
            tol: self.curve,
            ..CurveOptions::default()
        }
    }
}

/// A parsed and validated configuration.
#[derive(Clone, Debug)]
pub struct Config {
    pub system: LoadedSystem,
    pub params: ParameterPoint,
    /// Command settings from `[run]`, kept as text.
    pub run: BTreeMap<String, String>,
    pub tolerances: Tolerances,
    declared: BTreeSet<String>,
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        let raw = RawConfig::parse(text)?;
        build(&raw)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    /// Applies `key=value`; keys name a declared parameter or a `run.` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if let Some(k) = key.strip_prefix("run.") {
            self.run.insert(k.to_string(), value.to_string());
            return Ok(());
        }
        if !self.declared.contains(key) {
            return Err(Error::Validation(format!(
                "override `{key}` does not name a declared parameter (declared: {})",
                self.declared.iter().cloned().collect::<Vec<_>>().join(", ")
            )));
        }
        let v = parse_real(value, 0)?;
        match key {
            "alpha" => self.params.alpha = v,
            "epsilon" => self.params.epsilon = v,
            _ => {
                self.params.extras.insert(key.to_string(), v);
            }
        }
        if key == "b" {
            if let LoadedSystem::Cartesian(m) = &mut self.system {
                *m = Pwl3dModel::new(v)?.with_b_minus_delta(m.b_minus_delta);
            } else if v == 0.0 {
                return Err(Error::Validation("pwl3d requires b != 0".into()));
            }
        }
        self.validate_params()
    }

    fn validate_params(&self) -> Result<()> {
        match &self.system {
            LoadedSystem::Periodic(s) => s.check_parameters(&self.params),
            LoadedSystem::Cartesian(_) => Ok(()),
        }
    }

    pub fn declared_parameters(&self) -> Vec<String> {
        self.declared.iter().cloned().collect()
    }

    pub fn run_value(&self, key: &str) -> Option<&str> {
        self.run.get(key).map(String::as_str)
    }

    pub fn run_real(&self, key: &str, default: f64) -> Result<f64> {
        match self.run.get(key) {
            Some(v) => parse_real(v, 0).map_err(|_| bad_run(key, v)),
            None => Ok(default),
        }
    }

    pub fn run_usize(&self, key: &str, default: usize) -> Result<usize> {
        match self.run.get(key) {
            Some(v) => v.trim().parse().map_err(|_| bad_run(key, v)),
            None => Ok(default),
        }
    }

    pub fn run_bool(&self, key: &str, default: bool) -> Result<bool> {
        match self.run.get(key).map(|v| v.trim()) {
            Some("true") => Ok(true),
            Some("false") => Ok(false),
            Some(v) => Err(bad_run(key, v)),
            None => Ok(default),
        }
    }

    pub fn run_list(&self, key: &str) -> Result<Option<Vec<f64>>> {
        match self.run.get(key) {
            Some(v) => parse_list(v, 0).map(Some).map_err(|_| bad_run(key, v)),
            None => Ok(None),
        }
    }

    /// `lo, hi, n` with `n >= 1` (a single point when `n = 1`).
    pub fn run_range(&self, key: &str) -> Result<Option<Vec<f64>>> {
        let Some(v) = self.run_list(key)? else {
            return Ok(None);
        };
        if v.len() != 3 || v[2] < 1.0 || v[2].fract() != 0.0 {
            return Err(Error::Validation(format!("run setting `{key}` must be `lo, hi, n`")));
        }
        let n = v[2] as usize;
        if n == 1 {
            return Ok(Some(vec![v[0]]));
        }
        Ok(Some(
            (0..n).map(|i| v[0] + (v[1] - v[0]) * i as f64 / (n - 1) as f64).collect(),
        ))
    }
}

fn bad_run(key: &str, value: &str) -> Error {
    Error::Validation(format!("run setting `{key}` has invalid value `{value}`"))
}

#[derive(Debug, Default)]
struct Section {
    name: String,
    line: usize,
    entries: BTreeMap<String, (usize, String)>,
}

#[derive(Debug, Default)]
struct RawConfig {
    top: Section,
    sections: Vec<Section>,
}

impl RawConfig {
    fn parse(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
            .filter(|(_, l)| !l.is_empty());
        match lines.next() {
            Some((_, l)) if l == HEADER => {}
            Some((n, l)) => {
                return Err(Error::Parse {
                    line: n,
                    msg: format!("expected header `{HEADER}`, found `{l}`"),
                })
            }
            None => {
                return Err(Error::Parse {
                    line: 1,
                    msg: "empty configuration".into(),
                })
            }
        }
        let mut raw = RawConfig::default();
        let mut current: Option<Section> = None;
        for (n, l) in lines {
            if let Some(inner) = l.strip_prefix('[') {
                let name = inner.strip_suffix(']').ok_or_else(|| Error::Parse {
                    line: n,
                    msg: "unterminated section header".into(),
                })?;
                let name = name.split_whitespace().collect::<Vec<_>>().join(" ");
                if raw.sections.iter().chain(current.as_ref()).any(|s| s.name == name) {
                    return Err(Error::Parse {
                        line: n,
                        msg: format!("duplicate section [{name}]"),
                    });
                }
                if let Some(s) = current.take() {
                    raw.sections.push(s);
                }
                current = Some(Section {
                    name,
                    line: n,
                    entries: BTreeMap::new(),
                });
                continue;
            }
            let (k, v) = l.split_once('=').ok_or_else(|| Error::Parse {
                line: n,
                msg: format!("expected `key = value`, found `{l}`"),
            })?;
            let k = k.trim().to_string();
            if k.is_empty() {
                return Err(Error::Parse {
                    line: n,
                    msg: "empty key".into(),
                });
            }
            let target = current.as_mut().unwrap_or(&mut raw.top);
            if target.entries.insert(k.clone(), (n, v.trim().to_string())).is_some() {
                return Err(Error::Parse {
                    line: n,
                    msg: format!("duplicate key `{k}`"),
                });
            }
        }
        if let Some(s) = current.take() {
            raw.sections.push(s);
        }
        Ok(raw)
    }

    fn section(&self, name: &str) -> Option<&Section> {
        self.sections.iter().find(|s| s.name == name)
    }
}

fn parse_real(v: &str, line: usize) -> Result<f64> {
    let t = v.trim();
    let x = match t {
        "pi" => PI,
        "-pi" => -PI,
        "2pi" => 2.0 * PI,
        _ => t.parse::<f64>().map_err(|_| Error::Parse {
            line,
            msg: format!("invalid number `{t}`"),
        })?,
    };
    if !x.is_finite() {
        return Err(Error::Parse {
            line,
            msg: format!("non-finite number `{t}`"),
        });
    }
    Ok(x)
}

fn parse_list(v: &str, line: usize) -> Result<Vec<f64>> {
    if v.trim().is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|s| parse_real(s, line)).collect()
}

fn parse_matrix(v: &str, line: usize, dim: usize) -> Result<DMatrix<f64>> {
    let rows: Vec<Vec<f64>> = v.split(';').map(|r| parse_list(r, line)).collect::<Result<_>>()?;
    if rows.len() != dim || rows.iter().any(|r| r.len() != dim) {
        return Err(Error::Validation(format!(
            "line {line}: matrix must be {dim} x {dim}"
        )));
    }
    Ok(DMatrix::from_fn(dim, dim, |i, j| rows[i][j]))
}

fn parse_vector(v: &str, line: usize, dim: usize) -> Result<State> {
    let x = parse_list(v, line)?;
    if x.len() != dim {
        return Err(Error::Validation(format!(
            "line {line}: vector must have {dim} entries"
        )));
    }
    Ok(State::from_vec(x))
}

fn entry<'a>(s: &'a Section, key: &str) -> Option<(usize, &'a str)> {
    s.entries.get(key).map(|(n, v)| (*n, v.as_str()))
}

fn require_real(s: &Section, key: &str) -> Result<f64> {
    let (n, v) = entry(s, key).ok_or_else(|| Error::Validation(format!("[{}] is missing `{key}`", s.name)))?;
    parse_real(v, n)
}

fn check_keys(s: &Section, allowed: &[&str]) -> Result<()> {
    for (k, (n, _)) in &s.entries {
        if !allowed.contains(&k.as_str()) {
            return Err(Error::Parse {
                line: *n,
                msg: format!("unknown key `{k}` in {}", if s.name.is_empty() { "header".into() } else { format!("[{}]", s.name) }),
            });
        }
    }
    Ok(())
}

fn build(raw: &RawConfig) -> Result<Config> {
    check_keys(&raw.top, &["system", "remainder", "name"])?;
    let (line, name) = entry(&raw.top, "system").ok_or_else(|| Error::Validation("missing `system`".into()))?;

    let mut params = ParameterPoint::new(0.0, 0.0);
    let mut declared: BTreeSet<String> = ["alpha", "epsilon"].iter().map(|s| s.to_string()).collect();
    if let Some(s) = raw.section("parameters") {
        for (k, (n, v)) in &s.entries {
            let x = parse_real(v, *n)?;
            match k.as_str() {
                "alpha" => params.alpha = x,
                "epsilon" => params.epsilon = x,
                _ => {
                    params.extras.insert(k.clone(), x);
                }
            }
            declared.insert(k.clone());
        }
    }

    for s in &raw.sections {
        let known = matches!(s.name.as_str(), "parameters" | "domain" | "run" | "tolerances" | "system")
            || s.name.starts_with("zone ")
            || s.name.starts_with("switcher ");
        if !known {
            return Err(Error::Parse {
                line: s.line,
                msg: format!("unknown section [{}]", s.name),
            });
        }
    }

    let remainder = entry(&raw.top, "remainder").map(|(_, v)| v);
    let system = match name {
        "pwl3d" | "pwl3d-cartesian" => {
            let b = params
                .extra("b")
                .ok_or_else(|| Error::Validation(format!("{name} needs parameter `b`")))?;
            let model = Pwl3dModel::new(b)?;
            if raw.sections.iter().any(|s| s.name == "system" || s.name.starts_with("zone ") || s.name.starts_with("switcher ")) {
                return Err(Error::Validation(format!("built-in system `{name}` takes no zone or switcher sections")));
            }
            if name == "pwl3d" {
                let exact = match remainder {
                    None | Some("truncated") => false,
                    Some("exact") => true,
                    Some(v) => return Err(Error::Validation(format!("remainder must be `truncated` or `exact`, got `{v}`"))),
                };
                let mut sys = model.reduced_system_with(exact)?;
                sys = apply_domain(sys, raw)?;
                LoadedSystem::Periodic(sys)
            } else {
                if remainder.is_some() {
                    return Err(Error::Validation("`remainder` applies to pwl3d only".into()));
                }
                LoadedSystem::Cartesian(model)
            }
        }
        "inline" => {
            if remainder.is_some() {
                return Err(Error::Validation("`remainder` applies to pwl3d only; use remainder.* zone keys".into()));
            }
            let label = entry(&raw.top, "name").map(|(_, v)| v).unwrap_or("inline");
            LoadedSystem::Periodic(apply_domain(inline_system(raw, label)?, raw)?)
        }
        other => {
            let _ = line;
            return Err(Error::UnknownSystem(other.to_string()));
        }
    };

    let run = raw
        .section("run")
        .map(|s| s.entries.iter().map(|(k, (_, v))| (k.clone(), v.clone())).collect())
        .unwrap_or_default();
    let mut tolerances = Tolerances::default();
    if let Some(s) = raw.section("tolerances") {
        for (k, (n, v)) in &s.entries {
            tolerances.set(k, parse_real(v, *n)?)?;
        }
    }
    let cfg = Config {
        system,
        params,
        run,
        tolerances,
        declared,
    };
    cfg.validate_params()?;
    Ok(cfg)
}

fn apply_domain(mut sys: PiecewiseSystem, raw: &RawConfig) -> Result<PiecewiseSystem> {
    let Some(s) = raw.section("domain") else {
        return Ok(sys);
    };
    check_keys(s, &["lower", "upper", "alpha", "epsilon_max"])?;
    let dim = sys.dim();
    match (entry(s, "lower"), entry(s, "upper")) {
        (Some((nl, l)), Some((nu, u))) => {
            let d = DomainBox::new(parse_vector(l, nl, dim)?.as_slice().to_vec(), parse_vector(u, nu, dim)?.as_slice().to_vec())?;
            sys = sys.with_domain(d)?;
        }
        (None, None) => {}
        _ => return Err(Error::Validation("[domain] needs both `lower` and `upper`".into())),
    }
    if let Some((n, v)) = entry(s, "alpha") {
        let a = parse_list(v, n)?;
        if a.len() != 2 {
            return Err(Error::Validation(format!("line {n}: alpha range must be `lo, hi`")));
        }
        sys = sys.with_alpha_range(a[0], a[1])?;
    }
    if let Some((n, v)) = entry(s, "epsilon_max") {
        sys = sys.with_epsilon_max(parse_real(v, n)?)?;
    }
    Ok(sys)
}

/// Affine term `sum_h m_h(t) (M_h x + c_h + alpha (N_h x + d_h))`.
#[derive(Clone, Debug)]
struct AffinePart {
    harmonic: Harmonic,
    matrix: Option<DMatrix<f64>>,
    offset: Option<State>,
    alpha_matrix: Option<DMatrix<f64>>,
    alpha_offset: Option<State>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
enum Harmonic {
    Const,
    Cos(u32),
    Sin(u32),
}

impl Harmonic {
    fn parse(s: &str) -> Option<Self> {
        if let Some(k) = s.strip_prefix("cos") {
            k.parse().ok().filter(|k| *k > 0).map(Harmonic::Cos)
        } else if let Some(k) = s.strip_prefix("sin") {
            k.parse().ok().filter(|k| *k > 0).map(Harmonic::Sin)
        } else {
            None
        }
    }

    fn weight(self, omega: f64, t: f64) -> f64 {
        match self {
            Harmonic::Const => 1.0,
            Harmonic::Cos(k) => (k as f64 * omega * t).cos(),
            Harmonic::Sin(k) => (k as f64 * omega * t).sin(),
        }
    }
}

fn affine_term(parts: Vec<AffinePart>, omega: f64, dim: usize) -> crate::model::TermFn {
    let parts = Arc::new(parts);
    term_fn(move |t, x: &State, p: &ParameterPoint| {
        let mut out = State::zeros(dim);
        for part in parts.iter() {
            let w = part.harmonic.weight(omega, t);
            if w == 0.0 {
                continue;
            }
            if let Some(m) = &part.matrix {
                out += w * (m * x);
            }
            if let Some(c) = &part.offset {
                out += w * c;
            }
            if let Some(m) = &part.alpha_matrix {
                out += (w * p.alpha) * (m * x);
            }
            if let Some(c) = &part.alpha_offset {
                out += (w * p.alpha) * c;
            }
        }
        out
    })
}

fn inline_system(raw: &RawConfig, label: &str) -> Result<PiecewiseSystem> {
    let sys = raw
        .section("system")
        .ok_or_else(|| Error::Validation("inline system needs a [system] section".into()))?;
    check_keys(sys, &["period", "dim", "switchers", "order"])?;
    let period = require_real(sys, "period")?;
    let dim_raw = require_real(sys, "dim")?;
    if dim_raw < 1.0 || dim_raw.fract() != 0.0 {
        return Err(Error::Validation("dim must be a positive integer".into()));
    }
    let dim = dim_raw as usize;
    let omega = 2.0 * PI / period;

    let constants = match entry(sys, "switchers") {
        Some((n, v)) => parse_list(v, n)?,
        None => Vec::new(),
    };
    let mut switchers: Vec<SwitchingFunction> = constants.iter().map(|c| SwitchingFunction::constant(*c)).collect();
    let mut state_dependent: Vec<(usize, SwitchingFunction)> = Vec::new();
    for s in raw.sections.iter().filter(|s| s.name.starts_with("switcher ")) {
        let j: usize = s.name["switcher ".len()..].parse().map_err(|_| Error::Parse {
            line: s.line,
            msg: format!("invalid switcher index in [{}]", s.name),
        })?;
        check_keys(s, &["theta", "gradient", "alpha"])?;
        let theta = require_real(s, "theta")?;
        let grad = match entry(s, "gradient") {
            Some((n, v)) => parse_vector(v, n, dim)?,
            None => State::zeros(dim),
        };
        let ga = match entry(s, "alpha") {
            Some((n, v)) => parse_real(v, n)?,
            None => 0.0,
        };
        let f = if grad.iter().all(|g| *g == 0.0) && ga == 0.0 {
            SwitchingFunction::constant(theta)
        } else {
            SwitchingFunction::state_dependent(switch_fn(move |x: &State, p: &ParameterPoint| {
                theta + grad.dot(x) + ga * p.alpha
            }))
        };
        state_dependent.push((j, f));
    }
    if !state_dependent.is_empty() {
        if !constants.is_empty() {
            return Err(Error::Validation(
                "use either `switchers = ...` or [switcher j] sections, not both".into(),
            ));
        }
        state_dependent.sort_by_key(|(j, _)| *j);
        for (i, (j, _)) in state_dependent.iter().enumerate() {
            if *j != i + 1 {
                return Err(Error::Validation(format!(
                    "switcher sections must be numbered 1..n without gaps (found {j})"
                )));
            }
        }
        switchers = state_dependent.into_iter().map(|(_, f)| f).collect();
    }

    let mut zone_sections: Vec<(usize, &Section)> = Vec::new();
    for s in raw.sections.iter().filter(|s| s.name.starts_with("zone ")) {
        let j: usize = s.name["zone ".len()..].parse().map_err(|_| Error::Parse {
            line: s.line,
            msg: format!("invalid zone index in [{}]", s.name),
        })?;
        zone_sections.push((j, s));
    }
    zone_sections.sort_by_key(|(j, _)| *j);
    for (i, (j, _)) in zone_sections.iter().enumerate() {
        if *j != i {
            return Err(Error::Validation(format!(
                "zone sections must be numbered 0..n without gaps (found {j})"
            )));
        }
    }
    if zone_sections.len() != switchers.len() + 1 {
        return Err(Error::Validation(format!(
            "{} zones for {} switching functions (need switchers + 1)",
            zone_sections.len(),
            switchers.len()
        )));
    }

    let declared_order = match entry(sys, "order") {
        Some((n, v)) => {
            let k = parse_real(v, n)?;
            if k < 1.0 || k.fract() != 0.0 {
                return Err(Error::Validation("order must be a positive integer".into()));
            }
            Some(k as usize)
        }
        None => None,
    };
    let parsed: Vec<(BTreeMap<usize, Vec<AffinePart>>, Vec<AffinePart>)> = zone_sections
        .iter()
        .map(|(_, s)| zone_parts(s, dim))
        .collect::<Result<_>>()?;
    let order = declared_order.unwrap_or_else(|| {
        parsed
            .iter()
            .filter_map(|(t, _)| t.keys().max().copied())
            .max()
            .unwrap_or(1)
    });
    if let Some((terms, _)) = parsed.iter().find(|(t, _)| t.keys().any(|i| *i > order)) {
        let i = terms.keys().max().copied().unwrap_or(0);
        return Err(Error::Validation(format!("term f{i} exceeds the declared order {order}")));
    }
    let zones = parsed
        .into_iter()
        .map(|(mut terms, rem)| {
            let fs = (1..=order)
                .map(|i| affine_term(terms.remove(&i).unwrap_or_default(), omega, dim))
                .collect();
            let z = ZoneField::new(fs);
            if rem.is_empty() {
                z
            } else {
                z.with_remainder(affine_term(rem, omega, dim))
            }
        })
        .collect();
    PiecewiseSystem::new(label, period, dim, zones, switchers)
}

type ZoneParts = (BTreeMap<usize, Vec<AffinePart>>, Vec<AffinePart>);

fn zone_parts(s: &Section, dim: usize) -> Result<ZoneParts> {
    let mut terms: BTreeMap<(Option<usize>, Harmonic), AffinePart> = BTreeMap::new();
    for (key, (n, v)) in &s.entries {
        let bad = || Error::Parse {
            line: *n,
            msg: format!("unknown zone key `{key}` (expected f<i>[.cos<k>|.sin<k>].<matrix|offset|alpha_matrix|alpha_offset>)"),
        };
        let pieces: Vec<&str> = key.split('.').collect();
        let (head, harmonic, kind) = match pieces.as_slice() {
            [h, k] => (*h, Harmonic::Const, *k),
            [h, m, k] => (*h, Harmonic::parse(m).ok_or_else(bad)?, *k),
            _ => return Err(bad()),
        };
        let index = if head == "remainder" {
            None
        } else {
            let i: usize = head.strip_prefix('f').and_then(|i| i.parse().ok()).ok_or_else(bad)?;
            if i == 0 {
                return Err(bad());
            }
            Some(i)
        };
        let part = terms.entry((index, harmonic)).or_insert_with(|| AffinePart {
            harmonic,
            matrix: None,
            offset: None,
            alpha_matrix: None,
            alpha_offset: None,
        });
        match kind {
            "matrix" => part.matrix = Some(parse_matrix(v, *n, dim)?),
            "offset" => part.offset = Some(parse_vector(v, *n, dim)?),
            "alpha_matrix" => part.alpha_matrix = Some(parse_matrix(v, *n, dim)?),
            "alpha_offset" => part.alpha_offset = Some(parse_vector(v, *n, dim)?),
            _ => return Err(bad()),
        }
    }
    let mut by_order: BTreeMap<usize, Vec<AffinePart>> = BTreeMap::new();
    let mut rem = Vec::new();
    for ((index, _), part) in terms {
        match index {
            Some(i) => by_order.entry(i).or_default().push(part),
            None => rem.push(part),
        }
    }
    Ok((by_order, rem))
}
