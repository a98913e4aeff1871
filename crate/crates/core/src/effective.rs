//! Effective (averaged) control problem.
//!
//! The effective coefficients are μ^x-averages of the two-scale data:
//! `b̄(x,v) = ∫ b dμ^x`, `L̄(x,v) = ∫ L dμ^x`, `ḡ(x) = ∫ g dμ^x`, and the
//! effective Hamiltonian averages the inner supremum,
//! `H̄(x,p) = ∫ sup_v [b p - L] dμ^x(y)`.
//!
//! Two independent routes to `H̄` are provided: direct averaging over an
//! [`EmpiricalMeasure`] and the approximate corrector `-ε w_ε` obtained from
//! the stochastic representation of the ε-cell problem.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ergodic::{estimate_invariant_measure, integrate, EmpiricalMeasure, MeasureConfig};
use crate::error::{Error, Result};
use crate::model::{quadratic_control_gain, ControlSet, ProblemSpec};
use crate::rng;
use crate::sde::{run_frozen, StableNoise};
use crate::stats::Estimate;

const UNBOUNDED: f64 = 1e12;
const GOLDEN_TOL: f64 = 1e-6;
const SCAN_POINTS: usize = 201;

/// Maximizes `objective` over the control set.
///
/// Intervals are scanned on a uniform grid and refined by golden-section
/// search in the bracket around the best node; ties resolve to the smallest
/// control.
pub fn maximize_over(set: &ControlSet, objective: impl Fn(f64) -> f64) -> Result<(f64, f64)> {
    let eval = |v: f64| -> Result<f64> {
        let val = objective(v);
        if val.is_nan() {
            return Err(Error::ModelEvaluation { function: "hamiltonian objective", point: format!("v={v}") });
        }
        if val > UNBOUNDED {
            return Err(Error::Unbounded(format!("objective reached {val:e} at v = {v}")));
        }
        Ok(val)
    };
    match set {
        ControlSet::Singleton { value } => Ok((eval(*value)?, *value)),
        ControlSet::Finite { points } => {
            let mut best = (f64::NEG_INFINITY, points[0]);
            for &v in points {
                let val = eval(v)?;
                if val > best.0 {
                    best = (val, v);
                }
            }
            Ok(best)
        }
        ControlSet::Interval { lo, hi } => {
            if lo == hi {
                return Ok((eval(*lo)?, *lo));
            }
            let step = (hi - lo) / (SCAN_POINTS - 1) as f64;
            let mut best_k = 0;
            let mut best_val = f64::NEG_INFINITY;
            for k in 0..SCAN_POINTS {
                let val = eval(lo + step * k as f64)?;
                if val > best_val {
                    best_val = val;
                    best_k = k;
                }
            }
            let mut a = lo + step * best_k.saturating_sub(1) as f64;
            let mut b = (lo + step * (best_k + 1) as f64).min(*hi);
            let r = 0.5 * (5f64.sqrt() - 1.0);
            let mut c = b - r * (b - a);
            let mut d = a + r * (b - a);
            let (mut fc, mut fd) = (eval(c)?, eval(d)?);
            while b - a > GOLDEN_TOL {
                if fc >= fd {
                    b = d;
                    d = c;
                    fd = fc;
                    c = b - r * (b - a);
                    fc = eval(c)?;
                } else {
                    a = c;
                    c = d;
                    fc = fd;
                    d = a + r * (b - a);
                    fd = eval(d)?;
                }
            }
            let v = 0.5 * (a + b);
            let val = eval(v)?;
            if val > best_val {
                Ok((val, v))
            } else {
                Ok((best_val, lo + step * best_k as f64))
            }
        }
    }
}

/// `H(x, y, p) = sup_v [b(x,y,v) p - L(x,y,v)]` by direct search, with the maximizer.
pub fn hamiltonian(spec: &ProblemSpec, x: f64, y: f64, p: f64) -> Result<(f64, f64)> {
    if !(x.is_finite() && y.is_finite() && p.is_finite()) {
        return Err(Error::param(format!("hamiltonian inputs must be finite (x={x}, y={y}, p={p})")));
    }
    maximize_over(&spec.control_set, |v| spec.b(x, y, v) * p - spec.l(x, y, v))
}

/// Hamiltonian value using the model's closed form when it has one.
#[inline]
pub fn hamiltonian_value(spec: &ProblemSpec, x: f64, y: f64, p: f64) -> Result<f64> {
    match &spec.hamiltonian_closed {
        Some(h) => Ok(h(x, y, p).0),
        None => hamiltonian(spec, x, y, p).map(|(v, _)| v),
    }
}

/// Where the effective coefficients come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    ClosedForm,
    TabulatedFromMeasures,
    Custom,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ClosedModel {
    Bm1,
    Lin0,
}

type Fx = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
type Fxv = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

#[derive(Clone)]
struct Custom {
    b_bar: Fxv,
    l_bar: Fxv,
    g_bar: Fx,
}

/// Per-node tables built from empirical measures.
#[derive(Clone)]
pub struct Tabulated {
    spec: Arc<ProblemSpec>,
    pub nodes: Vec<f64>,
    pub v_grid: Vec<f64>,
    /// `b_bar[k][j]` at node `k`, control `v_grid[j]`.
    pub b_bar: Vec<Vec<f64>>,
    pub l_bar: Vec<Vec<f64>>,
    pub g_bar: Vec<Estimate>,
    pub measures: Vec<EmpiricalMeasure>,
}

#[derive(Clone)]
enum Inner {
    Closed(ClosedModel),
    Tabulated(Box<Tabulated>),
    Custom(Custom),
}

/// Averaged coefficients `b̄, L̄, ḡ` and effective Hamiltonian `H̄`.
#[derive(Clone)]
pub struct EffectiveProblem {
    pub name: String,
    pub alpha1: f64,
    /// Fast stability index; enters the closed-form stationary law.
    pub alpha2: f64,
    pub lambda: f64,
    pub horizon: f64,
    pub control_set: ControlSet,
    pub provenance: Provenance,
    inner: Inner,
}

impl std::fmt::Debug for EffectiveProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("EffectiveProblem")
            .field("name", &self.name)
            .field("provenance", &self.provenance)
            .finish_non_exhaustive()
    }
}

/// Linear interpolation on sorted nodes with constant extrapolation.
fn locate(nodes: &[f64], x: f64) -> (usize, usize, f64) {
    let n = nodes.len();
    if n == 1 || x <= nodes[0] {
        return (0, 0, 0.0);
    }
    if x >= nodes[n - 1] {
        return (n - 1, n - 1, 0.0);
    }
    let hi = nodes.partition_point(|&v| v <= x).min(n - 1);
    let lo = hi - 1;
    let w = (x - nodes[lo]) / (nodes[hi] - nodes[lo]);
    (lo, hi, w)
}

impl Tabulated {
    fn node_h_bar(&self, k: usize, p: f64) -> f64 {
        let x = self.nodes[k];
        let m = &self.measures[k];
        let mut s = 0.0;
        for &y in &m.samples {
            s += hamiltonian_value(&self.spec, x, y, p).unwrap_or(f64::NAN);
        }
        s / m.len() as f64
    }

    fn table(&self, table: &[Vec<f64>], x: f64, v: f64) -> f64 {
        let (a, b, w) = locate(&self.nodes, x);
        let (i, j, u) = locate(&self.v_grid, v);
        let at = |k: usize| table[k][i] * (1.0 - u) + table[k][j] * u;
        at(a) * (1.0 - w) + at(b) * w
    }
}

impl EffectiveProblem {
    /// Closed-form effective problem for the built-in benchmarks.
    ///
    /// For `c(x,y) = -y + a(x)` with unit α₂-stable noise, `μ^x` is the law of
    /// `a(x) + Z` with `E e^{iuZ} = exp(-|u|^{α₂}/α₂)`, hence
    /// `E sin Y = e^{-1/α₂} sin a` and `E cos Y = e^{-1/α₂} cos a`.
    pub fn closed_form(spec: &ProblemSpec) -> Result<Self> {
        let model = match spec.name.as_str() {
            "BM1" => ClosedModel::Bm1,
            "LIN0" => ClosedModel::Lin0,
            other => {
                return Err(Error::Usage(format!("no closed-form effective problem for `{other}` (BM1, LIN0 only)")))
            }
        };
        Ok(EffectiveProblem {
            name: spec.name.clone(),
            alpha1: spec.alpha1,
            alpha2: spec.alpha2,
            lambda: spec.lambda,
            horizon: spec.horizon,
            control_set: spec.control_set.clone(),
            provenance: Provenance::ClosedForm,
            inner: Inner::Closed(model),
        })
    }

    /// Effective problem from explicit averaged coefficients; `H̄` is the
    /// supremum of `b̄ p - L̄` over the control set.
    #[allow(clippy::too_many_arguments)]
    pub fn custom(
        name: impl Into<String>,
        alpha1: f64,
        lambda: f64,
        horizon: f64,
        control_set: ControlSet,
        b_bar: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
        l_bar: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
        g_bar: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        EffectiveProblem {
            name: name.into(),
            alpha1,
            alpha2: alpha1,
            lambda,
            horizon,
            control_set,
            provenance: Provenance::Custom,
            inner: Inner::Custom(Custom { b_bar: Arc::new(b_bar), l_bar: Arc::new(l_bar), g_bar: Arc::new(g_bar) }),
        }
    }

    pub fn tabulated(&self) -> Option<&Tabulated> {
        match &self.inner {
            Inner::Tabulated(t) => Some(t),
            _ => None,
        }
    }

    fn stationary_factor(&self) -> f64 {
        // e^{-σ^α} with σ^α = 1/(α₂ β), β = 1 for the benchmarks
        (-1.0 / self.alpha2).exp()
    }

    pub fn b_bar(&self, x: f64, v: f64) -> f64 {
        match &self.inner {
            Inner::Closed(ClosedModel::Bm1) => -x + self.stationary_factor() * (0.5 * x.sin()).sin() + v,
            Inner::Closed(ClosedModel::Lin0) => -x + v,
            Inner::Custom(c) => (c.b_bar)(x, v),
            Inner::Tabulated(t) => t.table(&t.b_bar, x, v),
        }
    }

    pub fn l_bar(&self, x: f64, v: f64) -> f64 {
        let base = (1.0 + x * x).sqrt() + 0.5 * v * v;
        match &self.inner {
            Inner::Closed(ClosedModel::Bm1) => base + 0.25 * self.stationary_factor() * (0.5 * x.sin()).cos(),
            Inner::Closed(ClosedModel::Lin0) => base,
            Inner::Custom(c) => (c.l_bar)(x, v),
            Inner::Tabulated(t) => t.table(&t.l_bar, x, v),
        }
    }

    pub fn g_bar(&self, x: f64) -> f64 {
        match &self.inner {
            Inner::Closed(ClosedModel::Bm1) => x.tanh() + 0.25 * self.stationary_factor() * (0.5 * x.sin()).cos(),
            Inner::Closed(ClosedModel::Lin0) => x.tanh(),
            Inner::Custom(c) => (c.g_bar)(x),
            Inner::Tabulated(t) => {
                let (a, b, w) = locate(&t.nodes, x);
                t.g_bar[a].mean * (1.0 - w) + t.g_bar[b].mean * w
            }
        }
    }

    /// `H̄(x, p)`; tabulated problems average the inner supremum over the
    /// node measures and interpolate linearly in x.
    pub fn h_bar(&self, x: f64, p: f64) -> f64 {
        match &self.inner {
            Inner::Closed(ClosedModel::Bm1) => {
                let m = self.stationary_factor();
                let a = 0.5 * x.sin();
                (-x + m * a.sin()) * p + quadratic_control_gain(p) - (1.0 + x * x).sqrt() - 0.25 * m * a.cos()
            }
            Inner::Closed(ClosedModel::Lin0) => -x * p + quadratic_control_gain(p) - (1.0 + x * x).sqrt(),
            Inner::Custom(c) => maximize_over(&self.control_set, |v| (c.b_bar)(x, v) * p - (c.l_bar)(x, v))
                .map(|r| r.0)
                .unwrap_or(f64::NAN),
            Inner::Tabulated(t) => {
                let (a, b, w) = locate(&t.nodes, x);
                if a == b {
                    t.node_h_bar(a, p)
                } else {
                    t.node_h_bar(a, p) * (1.0 - w) + t.node_h_bar(b, p) * w
                }
            }
        }
    }

    /// `argmax_v [b̄(x,v) p - L̄(x,v)]`, ties to the smallest control.
    pub fn argmax_bar(&self, x: f64, p: f64) -> Result<f64> {
        match &self.inner {
            Inner::Closed(_) => Ok(self.control_set.clamp(p)),
            _ => maximize_over(&self.control_set, |v| self.b_bar(x, v) * p - self.l_bar(x, v)).map(|r| r.1),
        }
    }

    /// Upper bound of `|∂H̄/∂p| ≤ sup_v |b̄(x, v)|` on the given nodes.
    pub fn max_drift(&self, xs: &[f64]) -> f64 {
        let vs = self.control_set.grid(21);
        xs.iter()
            .flat_map(|&x| vs.iter().map(move |&v| (x, v)))
            .map(|(x, v)| self.b_bar(x, v).abs())
            .fold(0.0, f64::max)
    }
}

/// Source of the invariant measures used by [`build_effective`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MeasureSource {
    /// Simulate μ^x at every node.
    Simulate { config: MeasureConfig, beta_hat: f64, seed: u64, v_points: usize },
    /// Closed form (BM1 and LIN0 only).
    ClosedForm,
}

/// Builds the effective problem on `x_grid`.
pub fn build_effective(spec: &ProblemSpec, x_grid: &[f64], source: &MeasureSource) -> Result<EffectiveProblem> {
    if x_grid.is_empty() {
        return Err(Error::param("x_grid must be nonempty"));
    }
    if x_grid.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::param("x_grid must be strictly increasing"));
    }
    match source {
        MeasureSource::ClosedForm => EffectiveProblem::closed_form(spec),
        MeasureSource::Simulate { config, beta_hat, seed, v_points } => {
            let v_grid = spec.control_set.grid((*v_points).max(2));
            let nodes: Result<Vec<_>> = x_grid
                .par_iter()
                .enumerate()
                .map(|(k, &x)| {
                    let node = |e: Error| e.in_stage(&format!("effective node {k} (x = {x})"));
                    let m = estimate_invariant_measure(spec, x, config, *beta_hat, *seed).map_err(node)?;
                    let mut b_row = Vec::with_capacity(v_grid.len());
                    let mut l_row = Vec::with_capacity(v_grid.len());
                    for &v in &v_grid {
                        b_row.push(integrate(&m, |y| spec.b(x, y, v)).map_err(node)?.mean);
                        l_row.push(integrate(&m, |y| spec.l(x, y, v)).map_err(node)?.mean);
                    }
                    let g = integrate(&m, |y| spec.g(x, y)).map_err(node)?;
                    Ok((b_row, l_row, g, m))
                })
                .collect();
            let mut t = Tabulated {
                spec: Arc::new(spec.clone()),
                nodes: x_grid.to_vec(),
                v_grid,
                b_bar: Vec::new(),
                l_bar: Vec::new(),
                g_bar: Vec::new(),
                measures: Vec::new(),
            };
            for (b, l, g, m) in nodes? {
                t.b_bar.push(b);
                t.l_bar.push(l);
                t.g_bar.push(g);
                t.measures.push(m);
            }
            Ok(EffectiveProblem {
                name: spec.name.clone(),
                alpha1: spec.alpha1,
                alpha2: spec.alpha2,
                lambda: spec.lambda,
                horizon: spec.horizon,
                control_set: spec.control_set.clone(),
                provenance: Provenance::TabulatedFromMeasures,
                inner: Inner::Tabulated(Box::new(t)),
            })
        }
    }
}

pub fn effective_hamiltonian(effp: &EffectiveProblem, x: f64, p: f64) -> f64 {
    effp.h_bar(x, p)
}

/// Monte Carlo solution of the ε-cell problem `-𝓛₂ w + ε w = -H(x̄, ·, p̄)`
/// through `w_ε(y) = -E ∫₀^∞ H(x̄, Y_r, p̄) e^{-ε r} dr`.
///
/// The integral is truncated at `horizon ≥ 8/ε`; the remainder is closed with
/// the integrand frozen at its last value, which is exact for constant `H`.
#[allow(clippy::too_many_arguments)]
pub fn approximate_corrector(
    spec: &ProblemSpec,
    x_bar: f64,
    p_bar: f64,
    eps_cell: f64,
    y: f64,
    n_paths: usize,
    horizon: f64,
    dt: f64,
    seed: u64,
) -> Result<Estimate> {
    if !(eps_cell > 0.0) {
        return Err(Error::param(format!("eps_cell = {eps_cell} must be positive")));
    }
    if horizon < 8.0 / eps_cell * (1.0 - 1e-12) {
        return Err(Error::param(format!(
            "corrector horizon {horizon} shorter than 8/eps_cell = {}",
            8.0 / eps_cell
        )));
    }
    if n_paths == 0 {
        return Err(Error::param("n_paths must be positive"));
    }
    let per_path: Result<Vec<f64>> = (0..n_paths as u64)
        .into_par_iter()
        .map(|i| {
            let mut noise = StableNoise::for_path(spec.alpha1, spec.alpha2, seed, i)
                .with_fast_stream(rng::tag::CORRECTOR, i);
            let mut acc = 0.0;
            let mut prev: Option<(f64, f64)> = None;
            let mut err = None;
            run_frozen(spec, x_bar, y, horizon, dt, &mut noise, |_, r, yr| {
                let h = match hamiltonian_value(spec, x_bar, yr, p_bar) {
                    Ok(h) => h,
                    Err(e) => {
                        err.get_or_insert(e);
                        0.0
                    }
                };
                let val = h * (-eps_cell * r).exp();
                if let Some((rp, vp)) = prev {
                    acc += 0.5 * (val + vp) * (r - rp);
                }
                prev = Some((r, val));
            })?;
            if let Some(e) = err {
                return Err(e);
            }
            let (_, last) = prev.expect("frozen run visits at least one point");
            acc += last / eps_cell;
            Ok(-acc)
        })
        .collect();
    Ok(Estimate::from_iid(&per_path?))
}

/// `w_x(r, y) = E g(x, Y^{x,y}_r)`, the solution of the Cauchy cell problem.
#[allow(clippy::too_many_arguments)]
pub fn cauchy_cell(
    spec: &ProblemSpec,
    x: f64,
    r: f64,
    y: f64,
    n_paths: usize,
    dt: f64,
    seed: u64,
) -> Result<Estimate> {
    if !(r >= 0.0) {
        return Err(Error::param(format!("cell time r = {r} must be nonnegative")));
    }
    if r == 0.0 {
        return Ok(Estimate { mean: spec.g(x, y), stderr: 0.0 });
    }
    let per_path: Result<Vec<f64>> = (0..n_paths as u64)
        .into_par_iter()
        .map(|i| {
            let mut noise =
                StableNoise::for_path(spec.alpha1, spec.alpha2, seed, i).with_fast_stream(rng::tag::CAUCHY, i);
            let yr = run_frozen(spec, x, y, r, dt, &mut noise, |_, _, _| {})?;
            Ok(spec.g(x, yr))
        })
        .collect();
    Ok(Estimate::from_iid(&per_path?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::builtin_benchmark;

    #[test]
    fn singleton_hamiltonian_has_no_optimization() {
        let mut spec = builtin_benchmark("BM1").unwrap();
        spec.control_set = ControlSet::Singleton { value: 0.3 };
        let (x, y, p) = (0.4, -1.2, 2.0);
        let (h, v) = hamiltonian(&spec, x, y, p).unwrap();
        assert_eq!(v, 0.3);
        assert_eq!(h, spec.b(x, y, 0.3) * p - spec.l(x, y, 0.3));
    }

    #[test]
    fn bm1_hamiltonian_interior_maximizer() {
        let spec = builtin_benchmark("BM1").unwrap();
        let (h, v) = hamiltonian(&spec, 0.0, 0.0, 0.5).unwrap();
        assert!((h + 1.125).abs() < 1e-10, "{h}");
        assert!((v - 0.5).abs() < 1e-6);
    }

    #[test]
    fn bm1_hamiltonian_saturated_control() {
        let spec = builtin_benchmark("BM1").unwrap();
        let (x, y) = (0.7, 1.1);
        let (h, v) = hamiltonian(&spec, x, y, 3.0).unwrap();
        let expect = (-x + y.sin()) * 3.0 + 3.0 - 0.5 - (1.0 + x * x).sqrt() - 0.25 * y.cos();
        assert_eq!(v, 1.0);
        assert!((h - expect).abs() < 1e-12);
    }

    #[test]
    fn finite_set_ties_resolve_to_smallest() {
        let mut spec = builtin_benchmark("BM1").unwrap();
        spec.control_set = ControlSet::finite(vec![1.0, -1.0]).unwrap();
        // p = 0: b·p - L is symmetric in v
        let (_, v) = hamiltonian(&spec, 0.0, 0.0, 0.0).unwrap();
        assert_eq!(v, -1.0);
    }

    #[test]
    fn unbounded_objective_is_reported() {
        let spec = builtin_benchmark("BM1").unwrap().with_slow_data(
            |_, _, v| 1e14 * v,
            |_, _, _| 0.0,
            |_, _| 0.0,
        );
        assert!(matches!(hamiltonian(&spec, 0.0, 0.0, 1.0), Err(Error::Unbounded(_))));
    }

    #[test]
    fn bm1_closed_form_values() {
        let spec = builtin_benchmark("BM1").unwrap();
        let eff = EffectiveProblem::closed_form(&spec).unwrap();
        let m = (-2.0f64 / 3.0).exp();
        assert!((m - 0.51342).abs() < 1e-5);
        assert_eq!(eff.b_bar(0.0, 0.4), 0.4);
        assert!((eff.g_bar(0.0) - 0.25 * m).abs() < 1e-15);
        assert!((eff.g_bar(0.0) - 0.12836).abs() < 1e-5);
        assert!((eff.h_bar(0.0, 0.0) + 1.12836).abs() < 1e-5);
    }

    #[test]
    fn y_independent_v_independent_h_bar_has_no_sup() {
        let eff = EffectiveProblem::custom(
            "lin",
            1.5,
            1.0,
            1.0,
            ControlSet::interval(-1.0, 1.0).unwrap(),
            |x, _| 2.0 - x,
            |x, _| x * x,
            |_| 0.0,
        );
        for &(x, p) in &[(0.0, 1.0), (1.5, -2.0), (-0.3, 0.7)] {
            assert!((eff.h_bar(x, p) - ((2.0 - x) * p - x * x)).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_integrand_corrector_is_exact() {
        let spec = builtin_benchmark("BM1").unwrap();
        let mut spec = spec.with_slow_data(|_, _, _| 0.0, |_, _, _| 0.7, |_, _| 0.0);
        spec.control_set = ControlSet::Singleton { value: 0.0 };
        // h ≡ -0.7 → w = 0.7/ε up to the trapezoid error (ε dt)²/12 relative
        let w = approximate_corrector(&spec, 0.0, 0.0, 0.25, 1.0, 4, 32.0, 0.05, 0).unwrap();
        assert!((w.mean - 0.7 / 0.25).abs() < 1e-4, "{}", w.mean);
        assert!(w.stderr < 1e-12);
    }

    #[test]
    fn corrector_horizon_guard() {
        let spec = builtin_benchmark("BM1").unwrap();
        assert!(approximate_corrector(&spec, 0.0, 0.0, 0.1, 0.0, 10, 50.0, 0.05, 0).is_err());
    }

    #[test]
    fn cauchy_cell_initial_condition() {
        let spec = builtin_benchmark("BM1").unwrap();
        let w = cauchy_cell(&spec, 0.3, 0.0, 1.7, 10, 0.01, 0).unwrap();
        assert_eq!(w.mean, spec.g(0.3, 1.7));
        let lin = builtin_benchmark("LIN0").unwrap();
        let w = cauchy_cell(&lin, 0.3, 2.0, 1.7, 50, 0.01, 0).unwrap();
        assert!((w.mean - 0.3f64.tanh()).abs() < 1e-15);
    }

    #[test]
    fn interpolation_locate() {
        let nodes = [0.0, 1.0, 3.0];
        assert_eq!(locate(&nodes, -1.0), (0, 0, 0.0));
        assert_eq!(locate(&nodes, 4.0), (2, 2, 0.0));
        assert_eq!(locate(&nodes, 2.0), (1, 2, 0.5));
        assert_eq!(locate(&nodes, 1.0), (1, 2, 0.0));
    }
}
