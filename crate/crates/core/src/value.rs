//! Monte Carlo evaluation of the cost functionals
//!
//! ```text
//! J^ε(t, x, y; v) = E[-∫_t^T e^{λ(s-T)} L(X, Y, v) ds + e^{λ(t-T)} g(X_T, Y_T)]
//! J̄(t, x; v)     = E[-∫_t^T e^{λ(s-T)} L̄(X̄, v) ds + e^{λ(t-T)} ḡ(X̄_T)]
//! ```
//!
//! for explicit policies. The running discount can be switched to
//! `e^{-λ(s-t)}` ([`Discount::FromStart`]), which is the weighting the HJB
//! solvers represent; for constant running costs both conventions agree.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::effective::EffectiveProblem;
use crate::error::{Error, Result};
use crate::model::ProblemSpec;
use crate::sde::{run_averaged, run_slow_fast, Coupling, PolicyHandle, StableNoise};
use crate::stats::Estimate;

/// Weighting of the running cost.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Discount {
    /// `e^{λ(s-T)}` on the running cost, `e^{λ(t-T)}` on the terminal cost.
    #[default]
    AsPrinted,
    /// `e^{-λ(s-t)}` on the running cost, `e^{-λ(T-t)}` on the terminal cost.
    FromStart,
}

impl Discount {
    #[inline]
    fn running(self, lambda: f64, s: f64, t0: f64, horizon: f64) -> f64 {
        match self {
            Discount::AsPrinted => (lambda * (s - horizon)).exp(),
            Discount::FromStart => (-lambda * (s - t0)).exp(),
        }
    }

    #[inline]
    fn terminal(self, lambda: f64, t0: f64, horizon: f64) -> f64 {
        (lambda * (t0 - horizon)).exp()
    }
}

/// Monte Carlo settings shared by the cost estimators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostConfig {
    pub n_paths: usize,
    pub dt: f64,
    pub seed: u64,
    pub discount: Discount,
    pub coupling: Coupling,
    /// Salt separating independent simulations under [`Coupling::Independent`].
    pub salt: u64,
}

impl CostConfig {
    pub fn new(n_paths: usize, dt: f64, seed: u64) -> Self {
        CostConfig { n_paths, dt, seed, discount: Discount::AsPrinted, coupling: Coupling::CommonSlowNoise, salt: 0 }
    }

    pub fn with_discount(mut self, discount: Discount) -> Self {
        self.discount = discount;
        self
    }

    fn check(&self) -> Result<()> {
        if self.n_paths == 0 {
            return Err(Error::param("n_paths must be positive"));
        }
        if !(self.dt > 0.0) {
            return Err(Error::param(format!("dt = {} must be positive", self.dt)));
        }
        Ok(())
    }

    fn noise(&self, alpha1: f64, alpha2: f64, path: u64) -> StableNoise {
        StableNoise::coupled(alpha1, alpha2, self.seed, path, self.coupling, self.salt)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostMeta {
    pub policy: String,
    /// `"epsilon=<ε>"` or `"effective"`.
    pub regime: String,
    pub t0: f64,
    pub x0: f64,
    pub y0: Option<f64>,
    pub dt: f64,
    pub seed: u64,
    pub discount: Discount,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub n_paths: usize,
    pub meta: CostMeta,
}

impl CostEstimate {
    fn from_samples(samples: &[f64], meta: CostMeta) -> Result<Self> {
        let e = Estimate::from_iid(samples);
        if !e.mean.is_finite() {
            return Err(Error::Evaluation(format!("cost estimate is not finite ({})", e.mean)));
        }
        Ok(CostEstimate { mean: e.mean, stderr: e.stderr, n_paths: samples.len(), meta })
    }
}

/// Trapezoidal accumulator for `-∫ w(s) L ds`.
struct Running {
    acc: f64,
    prev: Option<(f64, f64)>,
}

impl Running {
    fn new() -> Self {
        Running { acc: 0.0, prev: None }
    }

    #[inline]
    fn push(&mut self, s: f64, integrand: f64) {
        if let Some((sp, fp)) = self.prev {
            self.acc += 0.5 * (integrand + fp) * (s - sp);
        }
        self.prev = Some((s, integrand));
    }
}

/// Per-path payoffs of the two-scale cost, in path order.
#[allow(clippy::too_many_arguments)]
pub fn cost_samples(
    spec: &ProblemSpec,
    epsilon: f64,
    policy: &PolicyHandle,
    x0: f64,
    y0: f64,
    t0: f64,
    cfg: &CostConfig,
) -> Result<Vec<f64>> {
    cfg.check()?;
    let (lambda, horizon, disc) = (spec.lambda, spec.horizon, cfg.discount);
    let terminal = disc.terminal(lambda, t0, horizon);
    (0..cfg.n_paths as u64)
        .into_par_iter()
        .map(|i| {
            let mut noise = cfg.noise(spec.alpha1, spec.alpha2, i);
            let mut run = Running::new();
            let mut bad = false;
            let (xt, yt) = run_slow_fast(spec, epsilon, policy, x0, y0, t0, cfg.dt, &mut noise, |_, s, x, y, v| {
                let l = spec.l(x, y, v);
                bad |= !l.is_finite();
                run.push(s, -disc.running(lambda, s, t0, horizon) * l);
            })?;
            let g = spec.g(xt, yt);
            if bad || !g.is_finite() {
                return Err(Error::ModelEvaluation { function: "cost", point: format!("path {i}") });
            }
            Ok(run.acc + terminal * g)
        })
        .collect()
}

/// Per-path payoffs of the effective cost, in path order.
pub fn effective_cost_samples(
    effp: &EffectiveProblem,
    policy: &PolicyHandle,
    x0: f64,
    t0: f64,
    cfg: &CostConfig,
) -> Result<Vec<f64>> {
    cfg.check()?;
    let (lambda, horizon, disc) = (effp.lambda, effp.horizon, cfg.discount);
    if t0 >= horizon {
        if t0 > horizon {
            return Err(Error::param(format!("start time {t0} exceeds T = {horizon}")));
        }
        return Ok(vec![effp.g_bar(x0); cfg.n_paths]);
    }
    let terminal = disc.terminal(lambda, t0, horizon);
    (0..cfg.n_paths as u64)
        .into_par_iter()
        .map(|i| {
            let mut noise = cfg.noise(effp.alpha1, effp.alpha2, i);
            let mut run = Running::new();
            let xt = run_averaged(effp, policy, x0, t0, cfg.dt, &mut noise, |_, s, x, v| {
                run.push(s, -disc.running(lambda, s, t0, horizon) * effp.l_bar(x, v));
            })?;
            let total = run.acc + terminal * effp.g_bar(xt);
            if !total.is_finite() {
                return Err(Error::ModelEvaluation { function: "effective cost", point: format!("path {i}") });
            }
            Ok(total)
        })
        .collect()
}

/// `J^ε(t0, x0, y0)` for `policy` with settings `cfg`.
#[allow(clippy::too_many_arguments)]
pub fn estimate_cost_with(
    spec: &ProblemSpec,
    epsilon: f64,
    policy: &PolicyHandle,
    x0: f64,
    y0: f64,
    t0: f64,
    cfg: &CostConfig,
) -> Result<CostEstimate> {
    let samples = cost_samples(spec, epsilon, policy, x0, y0, t0, cfg)?;
    let meta = CostMeta {
        policy: policy.id.clone(),
        regime: format!("epsilon={epsilon}"),
        t0,
        x0,
        y0: Some(y0),
        dt: cfg.dt,
        seed: cfg.seed,
        discount: cfg.discount,
    };
    CostEstimate::from_samples(&samples, meta)
}

/// `J^ε(t0, x0, y0)` with the printed discount.
#[allow(clippy::too_many_arguments)]
pub fn estimate_cost(
    spec: &ProblemSpec,
    epsilon: f64,
    policy: &PolicyHandle,
    x0: f64,
    y0: f64,
    t0: f64,
    n_paths: usize,
    dt: f64,
    seed: u64,
) -> Result<CostEstimate> {
    estimate_cost_with(spec, epsilon, policy, x0, y0, t0, &CostConfig::new(n_paths, dt, seed))
}

pub fn estimate_effective_cost_with(
    effp: &EffectiveProblem,
    policy: &PolicyHandle,
    x0: f64,
    t0: f64,
    cfg: &CostConfig,
) -> Result<CostEstimate> {
    let samples = effective_cost_samples(effp, policy, x0, t0, cfg)?;
    let meta = CostMeta {
        policy: policy.id.clone(),
        regime: "effective".into(),
        t0,
        x0,
        y0: None,
        dt: cfg.dt,
        seed: cfg.seed,
        discount: cfg.discount,
    };
    CostEstimate::from_samples(&samples, meta)
}

/// `J̄(t0, x0)` with the printed discount.
pub fn estimate_effective_cost(
    effp: &EffectiveProblem,
    policy: &PolicyHandle,
    x0: f64,
    t0: f64,
    n_paths: usize,
    dt: f64,
    seed: u64,
) -> Result<CostEstimate> {
    estimate_effective_cost_with(effp, policy, x0, t0, &CostConfig::new(n_paths, dt, seed))
}

/// One row of [`cost_convergence_table`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostRow {
    pub epsilon: f64,
    pub j_eps: f64,
    pub j_bar: f64,
    /// `|J^ε - J̄|`.
    pub gap: f64,
    /// Standard error of the gap. Under common slow noise this is the
    /// paired (per-path difference) error; otherwise the two errors in quadrature.
    pub stderr: f64,
}

/// `|J^ε - J̄|` for each ε, with `J̄` computed once.
///
/// All runs use `cfg.dt`, which must satisfy `dt ≤ min ε / 10`, so under
/// [`Coupling::CommonSlowNoise`] path `i` of every run sees the same slow
/// Lévy increments and the gap error is estimated from paired differences.
pub fn cost_convergence_table(
    spec: &ProblemSpec,
    effp: &EffectiveProblem,
    policy: &PolicyHandle,
    eps_list: &[f64],
    start: (f64, f64, f64),
    cfg: &CostConfig,
) -> Result<Vec<CostRow>> {
    if eps_list.is_empty() {
        return Err(Error::param("eps_list must be nonempty"));
    }
    if eps_list.windows(2).any(|w| !(w[0] > w[1])) {
        return Err(Error::param("eps_list must be strictly decreasing"));
    }
    let (t0, x0, y0) = start;
    let mut bar_cfg = cfg.clone();
    bar_cfg.salt = cfg.salt.wrapping_add(1);
    let bar = effective_cost_samples(effp, policy, x0, t0, &bar_cfg)?;
    let bar_est = Estimate::from_iid(&bar);
    let mut rows = Vec::with_capacity(eps_list.len());
    for (k, &eps) in eps_list.iter().enumerate() {
        let mut c = cfg.clone();
        c.salt = cfg.salt.wrapping_add(2 + k as u64);
        let js = cost_samples(spec, eps, policy, x0, y0, t0, &c)?;
        let j_est = Estimate::from_iid(&js);
        let stderr = match cfg.coupling {
            Coupling::CommonSlowNoise => {
                let diff: Vec<f64> = js.iter().zip(&bar).map(|(a, b)| a - b).collect();
                Estimate::from_iid(&diff).stderr
            }
            Coupling::Independent => j_est.stderr.hypot(bar_est.stderr),
        };
        rows.push(CostRow {
            epsilon: eps,
            j_eps: j_est.mean,
            j_bar: bar_est.mean,
            gap: (j_est.mean - bar_est.mean).abs(),
            stderr,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{builtin_benchmark, ControlSet};

    fn degenerate(l: f64, g: f64) -> ProblemSpec {
        builtin_benchmark("BM1").unwrap().with_slow_data(|x, _, _| -x, move |_, _, _| l, move |_, _| g)
    }

    #[test]
    fn terminal_only_payoff_is_exact() {
        let spec = degenerate(0.0, 1.0);
        let pol = PolicyHandle::constant(0.0, &spec.control_set);
        let c = estimate_cost(&spec, 0.5, &pol, 0.0, 0.0, 0.0, 50, 0.01, 1).unwrap();
        assert!((c.mean - (-1.0f64).exp()).abs() < 1e-15);
        assert_eq!(c.stderr, 0.0);
    }

    #[test]
    fn constant_running_cost_integral() {
        let spec = degenerate(1.0, 0.0);
        let pol = PolicyHandle::constant(0.0, &spec.control_set);
        for discount in [Discount::AsPrinted, Discount::FromStart] {
            let cfg = CostConfig::new(10, 0.01, 3).with_discount(discount);
            let c = estimate_cost_with(&spec, 0.5, &pol, 0.0, 0.0, 0.0, &cfg).unwrap();
            // trapezoid error is O(dt²)
            assert!((c.mean + (1.0 - (-1.0f64).exp())).abs() < 1e-4, "{}", c.mean);
        }
    }

    #[test]
    fn zero_horizon_effective_cost() {
        let spec = builtin_benchmark("BM1").unwrap();
        let eff = EffectiveProblem::closed_form(&spec).unwrap();
        let pol = PolicyHandle::constant(0.0, &spec.control_set);
        let c = estimate_effective_cost(&eff, &pol, 0.3, 1.0, 7, 0.01, 0).unwrap();
        assert_eq!(c.mean, eff.g_bar(0.3));
        assert_eq!(c.stderr, 0.0);
        assert_eq!(c.n_paths, 7);
    }

    #[test]
    fn effective_terminal_only() {
        let eff = EffectiveProblem::custom(
            "flat",
            1.5,
            1.0,
            1.0,
            ControlSet::interval(-1.0, 1.0).unwrap(),
            |x, v| -x + v,
            |_, _| 0.0,
            |_| 1.0,
        );
        let pol = PolicyHandle::constant(0.0, &eff.control_set);
        let c = estimate_effective_cost(&eff, &pol, 0.0, 0.0, 20, 0.01, 0).unwrap();
        assert!((c.mean - (-1.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn conventions_differ_for_time_varying_cost() {
        // L depends on x and x moves, so the weighting matters
        let spec = builtin_benchmark("BM1").unwrap();
        let pol = PolicyHandle::constant(1.0, &spec.control_set);
        let a = estimate_cost_with(&spec, 0.5, &pol, 2.0, 0.0, 0.0, &CostConfig::new(200, 0.02, 4)).unwrap();
        let b = estimate_cost_with(
            &spec,
            0.5,
            &pol,
            2.0,
            0.0,
            0.0,
            &CostConfig::new(200, 0.02, 4).with_discount(Discount::FromStart),
        )
        .unwrap();
        assert!((a.mean - b.mean).abs() > 1e-3);
    }

    #[test]
    fn table_rejects_bad_eps_lists() {
        let spec = builtin_benchmark("BM1").unwrap();
        let eff = EffectiveProblem::closed_form(&spec).unwrap();
        let pol = PolicyHandle::constant(0.0, &spec.control_set);
        let cfg = CostConfig::new(4, 0.01, 0);
        assert!(cost_convergence_table(&spec, &eff, &pol, &[], (0.0, 0.0, 0.0), &cfg).is_err());
        assert!(cost_convergence_table(&spec, &eff, &pol, &[0.1, 0.5], (0.0, 0.0, 0.0), &cfg).is_err());
    }

    #[test]
    fn deterministic_given_seed() {
        let spec = builtin_benchmark("BM1").unwrap();
        let pol = PolicyHandle::constant(0.2, &spec.control_set);
        let a = estimate_cost(&spec, 0.2, &pol, 0.0, 0.0, 0.0, 64, 0.02, 9).unwrap();
        let b = estimate_cost(&spec, 0.2, &pol, 0.0, 0.0, 0.0, 64, 0.02, 9).unwrap();
        assert_eq!(a, b);
    }
}
