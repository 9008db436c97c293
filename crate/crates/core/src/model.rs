//! Piecewise-smooth `T`-periodic systems in standard perturbative form.
//!
//! A system is `x' = sum_i eps^i F_i(t, x; alpha) + eps^(k+1) R(t, x; alpha, eps)`
//! where every `F_i` and `R` switch between zone fields at the times
//! `theta_1(x; alpha) < ... < theta_n(x; alpha)` inside one period. Zone `j`
//! is active for `theta_j < t < theta_(j+1)` with `theta_0 = 0`, `theta_(n+1) = T`.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type State = DVector<f64>;

/// Vector-field evaluator `(t, x, p) -> R^dim`.
pub type TermFn = Arc<dyn Fn(f64, &State, &ParameterPoint) -> State + Send + Sync>;

/// Switching-time evaluator `(x, p) -> [0, T)`.
pub type SwitchFn = Arc<dyn Fn(&State, &ParameterPoint) -> f64 + Send + Sync>;

/// Relative width of the band around a switching time that counts as "on the surface".
pub const BOUNDARY_REL_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParameterPoint {
    pub alpha: f64,
    pub epsilon: f64,
    #[serde(default)]
    pub extras: BTreeMap<String, f64>,
}

impl ParameterPoint {
    pub fn new(alpha: f64, epsilon: f64) -> Self {
        Self {
            alpha,
            epsilon,
            extras: BTreeMap::new(),
        }
    }

    pub fn with_extra(mut self, name: &str, value: f64) -> Self {
        self.extras.insert(name.to_string(), value);
        self
    }

    pub fn with_alpha(&self, alpha: f64) -> Self {
        Self {
            alpha,
            ..self.clone()
        }
    }

    pub fn with_epsilon(&self, epsilon: f64) -> Self {
        Self {
            epsilon,
            ..self.clone()
        }
    }

    pub fn extra(&self, name: &str) -> Option<f64> {
        self.extras.get(name).copied()
    }

    pub fn extra_or(&self, name: &str, default: f64) -> f64 {
        self.extra(name).unwrap_or(default)
    }
}

/// The per-zone fields `F_1^j, ..., F_k^j` and the optional remainder `R^j`.
#[derive(Clone)]
pub struct ZoneField {
    terms: Vec<TermFn>,
    remainder: Option<TermFn>,
}

impl ZoneField {
    pub fn new(terms: Vec<TermFn>) -> Self {
        Self {
            terms,
            remainder: None,
        }
    }

    pub fn with_remainder(mut self, remainder: TermFn) -> Self {
        self.remainder = Some(remainder);
        self
    }

    pub fn order(&self) -> usize {
        self.terms.len()
    }

    /// `F_i` for `i >= 1`; `None` above the carried order.
    pub fn term(&self, i: usize) -> Option<&TermFn> {
        if i == 0 {
            return None;
        }
        self.terms.get(i - 1)
    }

    pub fn has_remainder(&self) -> bool {
        self.remainder.is_some()
    }

    /// Full zone field `sum_i eps^i F_i + eps^(k+1) R`.
    pub fn evaluate(&self, t: f64, x: &State, p: &ParameterPoint) -> State {
        let eps = p.epsilon;
        let mut out = State::zeros(x.len());
        if eps == 0.0 {
            return out;
        }
        let mut power = eps;
        for term in &self.terms {
            out.axpy(power, &term(t, x, p), 1.0);
            power *= eps;
        }
        if let Some(rem) = &self.remainder {
            out.axpy(power, &rem(t, x, p), 1.0);
        }
        out
    }
}

#[derive(Clone)]
pub enum SwitchingFunction {
    Constant(f64),
    StateDependent(SwitchFn),
}

impl SwitchingFunction {
    pub fn constant(theta: f64) -> Self {
        SwitchingFunction::Constant(theta)
    }

    pub fn state_dependent(f: SwitchFn) -> Self {
        SwitchingFunction::StateDependent(f)
    }

    pub fn eval(&self, x: &State, p: &ParameterPoint) -> f64 {
        match self {
            SwitchingFunction::Constant(c) => *c,
            SwitchingFunction::StateDependent(f) => f(x, p),
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, SwitchingFunction::Constant(_))
    }

    /// `D_x theta(x)` by central differences; exactly zero for constants.
    pub fn gradient(&self, x: &State, p: &ParameterPoint) -> State {
        match self {
            SwitchingFunction::Constant(_) => State::zeros(x.len()),
            SwitchingFunction::StateDependent(f) => {
                let mut g = State::zeros(x.len());
                let base = f64::EPSILON.cbrt();
                for i in 0..x.len() {
                    let h = base * x[i].abs().max(1.0);
                    let mut xp = x.clone();
                    let mut xm = x.clone();
                    xp[i] += h;
                    xm[i] -= h;
                    g[i] = (f(&xp, p) - f(&xm, p)) / (2.0 * h);
                }
                g
            }
        }
    }
}

/// Axis-aligned box `D` for the state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl DomainBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::Validation("domain bounds differ in length".into()));
        }
        if lower.iter().zip(&upper).any(|(l, u)| !(l < u)) {
            return Err(Error::Validation("domain lower bound must be below upper".into()));
        }
        Ok(Self { lower, upper })
    }

    pub fn symmetric(dim: usize, half_width: f64) -> Self {
        Self {
            lower: vec![-half_width; dim],
            upper: vec![half_width; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, x: &State) -> bool {
        x.len() == self.dim()
            && x
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (l, u))| *v > *l && *v < *u)
    }

    /// Smallest distance from `x` to the box faces (negative outside).
    pub fn clearance(&self, x: &State) -> f64 {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(v, (l, u))| (v - l).min(u - v))
            .fold(f64::INFINITY, f64::min)
    }
}

/// A `T`-periodic piecewise-smooth vector-field family.
#[derive(Clone)]
pub struct PiecewiseSystem {
    name: String,
    period: f64,
    dim: usize,
    order: usize,
    zones: Vec<ZoneField>,
    switchers: Vec<SwitchingFunction>,
    domain: DomainBox,
    alpha_range: (f64, f64),
    epsilon_max: f64,
}

impl fmt::Debug for PiecewiseSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PiecewiseSystem")
            .field("name", &self.name)
            .field("period", &self.period)
            .field("dim", &self.dim)
            .field("order", &self.order)
            .field("zones", &self.zones.len())
            .field("switchers", &self.switchers.len())
            .field("domain", &self.domain)
            .field("alpha_range", &self.alpha_range)
            .field("epsilon_max", &self.epsilon_max)
            .finish()
    }
}

impl PiecewiseSystem {
    /// Builds and validates a system with the default boxes
    /// `D = (-20, 20)^dim`, `I = (-1/2, 1/2)`, `eps_0 = 1/4`.
    pub fn new(
        name: impl Into<String>,
        period: f64,
        dim: usize,
        zones: Vec<ZoneField>,
        switchers: Vec<SwitchingFunction>,
    ) -> Result<Self> {
        if !(period > 0.0) || !period.is_finite() {
            return Err(Error::Validation(format!("period must be positive, got {period}")));
        }
        if dim == 0 {
            return Err(Error::Validation("dimension must be positive".into()));
        }
        if zones.len() != switchers.len() + 1 {
            return Err(Error::Validation(format!(
                "{} zones for {} switching functions (need switchers + 1)",
                zones.len(),
                switchers.len()
            )));
        }
        let order = zones[0].order();
        if order == 0 {
            return Err(Error::Validation("zones must carry at least one order".into()));
        }
        if zones.iter().any(|z| z.order() != order) {
            return Err(Error::Validation("all zones must carry the same order k".into()));
        }
        for (j, s) in switchers.iter().enumerate() {
            if let SwitchingFunction::Constant(c) = s {
                if !(*c > 0.0 && *c < period) {
                    return Err(Error::Validation(format!(
                        "constant switching time {} = {c} outside (0, T)",
                        j + 1
                    )));
                }
            }
        }
        let constants: Vec<f64> = switchers
            .iter()
            .filter_map(|s| match s {
                SwitchingFunction::Constant(c) => Some(*c),
                _ => None,
            })
            .collect();
        if constants.len() == switchers.len() && constants.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::Validation("switching times must be strictly increasing".into()));
        }
        Ok(Self {
            name: name.into(),
            period,
            dim,
            order,
            zones,
            switchers,
            domain: DomainBox::symmetric(dim, 20.0),
            alpha_range: (-0.5, 0.5),
            epsilon_max: 0.25,
        })
    }

    pub fn with_domain(mut self, domain: DomainBox) -> Result<Self> {
        if domain.dim() != self.dim {
            return Err(Error::Validation("domain dimension mismatch".into()));
        }
        self.domain = domain;
        Ok(self)
    }

    pub fn with_alpha_range(mut self, lo: f64, hi: f64) -> Result<Self> {
        if !(lo < hi) {
            return Err(Error::Validation("alpha range must be increasing".into()));
        }
        self.alpha_range = (lo, hi);
        Ok(self)
    }

    pub fn with_epsilon_max(mut self, eps0: f64) -> Result<Self> {
        if !(eps0 > 0.0) {
            return Err(Error::Validation("epsilon_max must be positive".into()));
        }
        self.epsilon_max = eps0;
        Ok(self)
    }

    pub fn name(&self) -> &str {
        &self.name
    }
    pub fn period(&self) -> f64 {
        self.period
    }
    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn order(&self) -> usize {
        self.order
    }
    pub fn zones(&self) -> &[ZoneField] {
        &self.zones
    }
    pub fn switchers(&self) -> &[SwitchingFunction] {
        &self.switchers
    }
    pub fn switcher_count(&self) -> usize {
        self.switchers.len()
    }
    pub fn domain(&self) -> &DomainBox {
        &self.domain
    }
    pub fn alpha_range(&self) -> (f64, f64) {
        self.alpha_range
    }
    pub fn epsilon_max(&self) -> f64 {
        self.epsilon_max
    }

    pub fn all_switchers_constant(&self) -> bool {
        self.switchers.iter().all(SwitchingFunction::is_constant)
    }

    /// `theta_j(x; alpha)` with the 1-based index used throughout.
    pub fn switching_time(&self, j: usize, x: &State, p: &ParameterPoint) -> f64 {
        self.switchers[j - 1].eval(x, p)
    }

    pub fn check_parameters(&self, p: &ParameterPoint) -> Result<()> {
        if !(p.epsilon.abs() < self.epsilon_max) {
            return Err(Error::Validation(format!(
                "epsilon = {} outside (-{e}, {e})",
                p.epsilon,
                e = self.epsilon_max
            )));
        }
        Ok(())
    }

    /// Index of the zone containing `t` for state `x`.
    pub fn zone_index(&self, t: f64, x: &State, p: &ParameterPoint) -> Result<usize> {
        let tol = BOUNDARY_REL_TOL * self.period;
        let mut zone = 0;
        for (i, s) in self.switchers.iter().enumerate() {
            let theta = s.eval(x, p);
            if (t - theta).abs() <= tol {
                return Err(Error::Boundary {
                    t,
                    index: i + 1,
                    theta,
                });
            }
            if theta < t {
                zone = i + 1;
            }
        }
        Ok(zone)
    }

    /// The whole field of one zone, ignoring where `t` lies.
    pub fn zone_field(&self, zone: usize, t: f64, x: &State, p: &ParameterPoint) -> State {
        self.zones[zone].evaluate(t, x, p)
    }

    /// `F_i^zone(t, x; alpha)`, zero above the carried order.
    pub fn term(&self, zone: usize, i: usize, t: f64, x: &State, p: &ParameterPoint) -> State {
        match self.zones[zone].term(i) {
            Some(f) => f(t, x, p),
            None => State::zeros(x.len()),
        }
    }

    /// `F_i(t, x; alpha)` with zone dispatch.
    pub fn term_at(&self, i: usize, t: f64, x: &State, p: &ParameterPoint) -> Result<State> {
        let zone = self.zone_index(t, x, p)?;
        Ok(self.term(zone, i, t, x, p))
    }

    /// Evaluates the right-hand side at `t` in `[0, T)`.
    pub fn field_at(&self, t: f64, x: &State, p: &ParameterPoint) -> Result<State> {
        if x.len() != self.dim {
            return Err(Error::Domain(format!(
                "state has length {}, system dimension is {}",
                x.len(),
                self.dim
            )));
        }
        if !(0.0..self.period).contains(&t) {
            return Err(Error::Domain(format!("t = {t} outside [0, {})", self.period)));
        }
        let zone = self.zone_index(t, x, p)?;
        Ok(self.zone_field(zone, t, x, p))
    }

    /// Samples a lattice in the domain box and checks `theta_1 < ... < theta_n`
    /// together with the range `[0, T)`.
    pub fn check_switcher_ordering(&self, p: &ParameterPoint, per_axis: usize) -> Result<()> {
        if self.all_switchers_constant() || self.switchers.is_empty() {
            return Ok(());
        }
        let per_axis = per_axis.max(2);
        let total = per_axis.pow(self.dim as u32);
        for idx in 0..total {
            let mut rem = idx;
            let mut x = State::zeros(self.dim);
            for d in 0..self.dim {
                let k = rem % per_axis;
                rem /= per_axis;
                let (lo, hi) = (self.domain.lower[d], self.domain.upper[d]);
                x[d] = lo + (hi - lo) * (k as f64 + 0.5) / per_axis as f64;
            }
            let thetas: Vec<f64> = self.switchers.iter().map(|s| s.eval(&x, p)).collect();
            if thetas.iter().any(|th| !(*th >= 0.0 && *th < self.period)) {
                return Err(Error::Validation(format!(
                    "switching times {thetas:?} leave [0, T) at x = {:?}",
                    x.as_slice()
                )));
            }
            if thetas.windows(2).any(|w| !(w[0] < w[1])) {
                return Err(Error::Validation(format!(
                    "switching times {thetas:?} not strictly ordered at x = {:?}",
                    x.as_slice()
                )));
            }
        }
        Ok(())
    }
}

/// Convenience constructor for a term closure.
pub fn term_fn<F>(f: F) -> TermFn
where
    F: Fn(f64, &State, &ParameterPoint) -> State + Send + Sync + 'static,
{
    Arc::new(f)
}

pub fn switch_fn<F>(f: F) -> SwitchFn
where
    F: Fn(&State, &ParameterPoint) -> f64 + Send + Sync + 'static,
{
    Arc::new(f)
}

/// Autonomous field of one side of a state-space switching surface.
pub type AutoFieldFn = Arc<dyn Fn(&State) -> State + Send + Sync>;

/// Autonomous system switching across `g(x) = 0`: the `upper` field acts on
/// `g > 0`, the `lower` field on `g < 0`.
#[derive(Clone)]
pub struct SwitchedSystem {
    pub name: String,
    pub dim: usize,
    pub upper: AutoFieldFn,
    pub lower: AutoFieldFn,
    pub surface: Arc<dyn Fn(&State) -> f64 + Send + Sync>,
    /// Section predicate applied to lower-to-upper crossings.
    pub section: Arc<dyn Fn(&State) -> bool + Send + Sync>,
}

impl fmt::Debug for SwitchedSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SwitchedSystem")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .finish()
    }
}

impl SwitchedSystem {
    pub fn field(&self, upper: bool, x: &State) -> State {
        if upper {
            (self.upper)(x)
        } else {
            (self.lower)(x)
        }
    }

    /// Side selected at `x`; on the surface the side the flow enters is chosen.
    pub fn side_at(&self, x: &State) -> bool {
        let g = (self.surface)(x);
        if g.abs() > 1e-14 * x.norm().max(1.0) {
            return g > 0.0;
        }
        let fu = (self.upper)(x);
        let probe = x + fu * 1e-7;
        (self.surface)(&probe) > 0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn constant_zone(dim: usize, v: f64) -> ZoneField {
        ZoneField::new(vec![term_fn(move |_, _, _| State::from_element(dim, v))])
    }

    #[test]
    fn smooth_system_without_switchers_is_valid() {
        let sys = PiecewiseSystem::new("smooth", 1.0, 2, vec![constant_zone(2, 0.0)], vec![])
            .unwrap();
        assert_eq!(sys.switcher_count(), 0);
        let p = ParameterPoint::new(0.0, 0.1);
        assert_eq!(sys.zone_index(0.5, &State::zeros(2), &p).unwrap(), 0);
    }

    #[test]
    fn zone_switcher_count_mismatch_is_rejected() {
        let zones = vec![constant_zone(2, 0.0), constant_zone(2, 1.0)];
        let sw = vec![SwitchingFunction::constant(1.0), SwitchingFunction::constant(2.0)];
        let err = PiecewiseSystem::new("bad", 3.0, 2, zones, sw).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
    }

    #[test]
    fn non_positive_period_is_rejected() {
        let err = PiecewiseSystem::new("bad", 0.0, 1, vec![constant_zone(1, 0.0)], vec![])
            .unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
    }

    #[test]
    fn dispatch_and_boundary_flag() {
        let zones = vec![constant_zone(1, 1.0), constant_zone(1, -1.0)];
        let sys = PiecewiseSystem::new("two", 2.0 * PI, 1, zones, vec![SwitchingFunction::constant(PI)])
            .unwrap();
        let p = ParameterPoint::new(0.0, 0.5);
        let x = State::from_element(1, 0.3);
        assert_eq!(sys.field_at(1.0, &x, &p).unwrap()[0], 0.5);
        assert_eq!(sys.field_at(4.0, &x, &p).unwrap()[0], -0.5);
        let err = sys.field_at(PI, &x, &p).unwrap_err();
        assert!(matches!(err, Error::Boundary { index: 1, .. }));
    }

    #[test]
    fn remainder_carries_eps_to_k_plus_one() {
        let zone = constant_zone(1, 1.0).with_remainder(term_fn(|_, _, _| State::from_element(1, 1.0)));
        let sys = PiecewiseSystem::new("rem", 1.0, 1, vec![zone], vec![]).unwrap();
        let p = ParameterPoint::new(0.0, 0.1);
        let v = sys.field_at(0.2, &State::zeros(1), &p).unwrap();
        assert!((v[0] - (0.1 + 0.01)).abs() < 1e-15);
    }

    #[test]
    fn ordering_check_catches_crossing_switchers() {
        let zones = vec![constant_zone(1, 0.0), constant_zone(1, 0.0), constant_zone(1, 0.0)];
        let sw = vec![
            SwitchingFunction::state_dependent(switch_fn(|x, _| 3.0 + 0.1 * x[0])),
            SwitchingFunction::constant(3.0),
        ];
        let sys = PiecewiseSystem::new("cross", 6.0, 1, zones, sw).unwrap();
        let p = ParameterPoint::new(0.0, 0.1);
        assert!(sys.check_switcher_ordering(&p, 8).is_err());
    }

    #[test]
    fn switcher_gradient_by_central_differences() {
        let s = SwitchingFunction::state_dependent(switch_fn(|x, _| PI + 0.1 * x[0] - 0.2 * x[1]));
        let p = ParameterPoint::new(0.0, 0.0);
        let g = s.gradient(&State::from_vec(vec![1.0, 2.0]), &p);
        assert!((g[0] - 0.1).abs() < 1e-9 && (g[1] + 0.2).abs() < 1e-9);
        assert_eq!(SwitchingFunction::constant(1.0).gradient(&g, &p), State::zeros(2));
    }

    #[test]
    fn epsilon_box_is_enforced() {
        let sys = PiecewiseSystem::new("s", 1.0, 1, vec![constant_zone(1, 0.0)], vec![])
            .unwrap()
            .with_epsilon_max(0.1)
            .unwrap();
        assert!(sys.check_parameters(&ParameterPoint::new(0.0, 0.05)).is_ok());
        assert!(sys.check_parameters(&ParameterPoint::new(0.0, 0.2)).is_err());
    }
}
