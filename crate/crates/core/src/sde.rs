//! Euler–Maruyama integrators for the controlled slow-fast system, the frozen
//! fast equation and the averaged slow equation.
//!
//! All integrators evaluate the control at the left endpoint of each step and
//! draw noise from a [`NoiseSource`], so the same code path serves Monte
//! Carlo estimates, coupled simulations and noiseless ODE checks.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::effective::EffectiveProblem;
use crate::error::{Error, Result};
use crate::model::{ControlSet, ProblemSpec};
use crate::rng::{self, StreamRng};
use crate::stable::{check_alpha, sample_standard_unchecked};
use crate::stats::Estimate;

/// Source of the driving increments.
pub trait NoiseSource {
    /// Increment of `L^{α₁}` over `dt`.
    fn slow(&mut self, dt: f64) -> Result<f64>;
    /// A standard α₂-stable draw; callers scale it by `(dt/ε)^{1/α₂}`.
    fn fast_standard(&mut self) -> f64;
    fn seed(&self) -> Option<u64> {
        None
    }
}

/// Test hook: every increment is zero, exposing the deterministic ODE limit.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroNoise;

impl NoiseSource for ZeroNoise {
    fn slow(&mut self, _dt: f64) -> Result<f64> {
        Ok(0.0)
    }
    fn fast_standard(&mut self) -> f64 {
        0.0
    }
}

/// How the slow noise of a path relates to other simulations of the same path id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Coupling {
    /// Path `i` of every simulation reuses the same slow-noise stream.
    #[default]
    CommonSlowNoise,
    /// Each call gets its own independent slow-noise stream.
    Independent,
}

/// Independent α-stable noise for one path.
///
/// Slow and fast draws come from separate substreams keyed by path id. With a
/// base step set, slow increments over `k · base` are sums of `k` base
/// increments, so simulations at different step sizes share the same slow
/// Lévy path (common random numbers).
#[derive(Debug, Clone)]
pub struct StableNoise {
    alpha1: f64,
    alpha2: f64,
    slow_rng: StreamRng,
    fast_rng: StreamRng,
    base_dt: Option<f64>,
    seed: u64,
}

impl StableNoise {
    pub fn for_path(alpha1: f64, alpha2: f64, seed: u64, path: u64) -> Self {
        StableNoise {
            alpha1,
            alpha2,
            slow_rng: rng::substream(seed, rng::tag::SLOW_NOISE, path),
            fast_rng: rng::substream(seed, rng::tag::FAST_NOISE, path),
            base_dt: None,
            seed,
        }
    }

    /// Noise for `path` under a coupling; `salt` separates independent simulations.
    pub fn coupled(alpha1: f64, alpha2: f64, seed: u64, path: u64, coupling: Coupling, salt: u64) -> Self {
        let mut n = Self::for_path(alpha1, alpha2, seed, path);
        if coupling == Coupling::Independent {
            n.slow_rng = rng::substream(seed ^ salt.wrapping_mul(0x9E37_79B9), rng::tag::INDEPENDENT, path);
        }
        n
    }

    /// Fast draws from a custom substream (used to decorrelate frozen runs).
    pub fn with_fast_stream(mut self, experiment: u64, stream: u64) -> Self {
        self.fast_rng = rng::substream(self.seed, experiment, stream);
        self
    }

    pub fn with_base_step(mut self, base_dt: f64) -> Self {
        self.base_dt = Some(base_dt);
        self
    }
}

impl NoiseSource for StableNoise {
    fn slow(&mut self, dt: f64) -> Result<f64> {
        match self.base_dt {
            None => Ok(dt.powf(1.0 / self.alpha1) * sample_standard_unchecked(self.alpha1, &mut self.slow_rng)),
            Some(base) => {
                let k = (dt / base).round();
                if k < 1.0 || (k * base - dt).abs() > 1e-9 * dt {
                    return Err(Error::param(format!(
                        "step {dt} is not a multiple of the common-noise base step {base}"
                    )));
                }
                let scale = base.powf(1.0 / self.alpha1);
                let mut sum = 0.0;
                for _ in 0..k as usize {
                    sum += sample_standard_unchecked(self.alpha1, &mut self.slow_rng);
                }
                Ok(scale * sum)
            }
        }
    }

    fn fast_standard(&mut self) -> f64 {
        sample_standard_unchecked(self.alpha2, &mut self.fast_rng)
    }

    fn seed(&self) -> Option<u64> {
        Some(self.seed)
    }
}

/// Feedback table produced by the HJB solver: piecewise constant in time
/// (nearest stored level), linear in x, constant beyond the grid ends.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridPolicy {
    pub horizon: f64,
    /// Time-to-go levels, ascending.
    pub taus: Vec<f64>,
    pub x_lo: f64,
    pub x_step: f64,
    /// `controls[k][i]` at `taus[k]`, node `i`.
    pub controls: Vec<Vec<f64>>,
}

impl GridPolicy {
    pub fn control(&self, t: f64, x: f64) -> f64 {
        let tau = (self.horizon - t).max(0.0);
        let k = match self.taus.binary_search_by(|p| p.total_cmp(&tau)) {
            Ok(k) => k,
            Err(0) => 0,
            Err(k) if k >= self.taus.len() => self.taus.len() - 1,
            Err(k) => {
                if tau - self.taus[k - 1] <= self.taus[k] - tau {
                    k - 1
                } else {
                    k
                }
            }
        };
        let row = &self.controls[k];
        let n = row.len();
        let s = ((x - self.x_lo) / self.x_step).clamp(0.0, (n - 1) as f64);
        let i = (s.floor() as usize).min(n - 2);
        let f = s - i as f64;
        row[i] * (1.0 - f) + row[i + 1] * f
    }
}

#[derive(Clone)]
pub enum Policy {
    Constant(f64),
    FeedbackTx(Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>),
    FeedbackTxy(Arc<dyn Fn(f64, f64, f64) -> f64 + Send + Sync>),
    Grid(Arc<GridPolicy>),
}

/// A control law together with the set its values are clamped into.
#[derive(Clone)]
pub struct PolicyHandle {
    pub id: String,
    pub policy: Policy,
    pub control_set: ControlSet,
}

impl std::fmt::Debug for PolicyHandle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PolicyHandle").field("id", &self.id).finish_non_exhaustive()
    }
}

impl PolicyHandle {
    pub fn constant(v: f64, control_set: &ControlSet) -> Self {
        PolicyHandle { id: format!("const:{v}"), policy: Policy::Constant(v), control_set: control_set.clone() }
    }

    pub fn feedback(
        id: impl Into<String>,
        f: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
        control_set: &ControlSet,
    ) -> Self {
        PolicyHandle { id: id.into(), policy: Policy::FeedbackTx(Arc::new(f)), control_set: control_set.clone() }
    }

    pub fn grid(id: impl Into<String>, table: GridPolicy, control_set: &ControlSet) -> Self {
        PolicyHandle { id: id.into(), policy: Policy::Grid(Arc::new(table)), control_set: control_set.clone() }
    }

    /// Control at state `(t, x, y)`, always inside the control set.
    pub fn control(&self, t: f64, x: f64, y: f64) -> f64 {
        let raw = match &self.policy {
            Policy::Constant(v) => *v,
            Policy::FeedbackTx(f) => f(t, x),
            Policy::FeedbackTxy(f) => f(t, x, y),
            Policy::Grid(g) => g.control(t, x),
        };
        self.control_set.clamp(raw)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Epsilon(f64),
    Frozen { x: f64 },
    Averaged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryMeta {
    pub regime: Regime,
    pub seed: Option<u64>,
    pub dt: f64,
}

/// Euler skeleton of a path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<f64>,
    pub meta: TrajectoryMeta,
}

impl Trajectory {
    pub fn last(&self) -> f64 {
        *self.states.last().expect("trajectory has at least one state")
    }
}

/// Time grid `t0, t0 + dt, ..., t_end` with a shortened final step when needed.
pub(crate) fn time_steps(t0: f64, t_end: f64, dt: f64) -> usize {
    let n = (t_end - t0) / dt;
    let r = n.round();
    if (n - r).abs() < 1e-9 * n.max(1.0) {
        r as usize
    } else {
        n.ceil() as usize
    }
}

#[inline]
fn step_len(k: usize, steps: usize, t0: f64, t_end: f64, dt: f64) -> (f64, f64) {
    let t = t0 + k as f64 * dt;
    let next = if k + 1 == steps { t_end } else { t0 + (k + 1) as f64 * dt };
    (t, next - t)
}

fn check_slow_fast(spec: &ProblemSpec, epsilon: f64, t0: f64, dt: f64) -> Result<()> {
    if !(epsilon > 0.0 && epsilon <= 1.0) {
        return Err(Error::param(format!("epsilon = {epsilon} must lie in (0, 1]")));
    }
    if !(dt > 0.0) {
        return Err(Error::param(format!("dt = {dt} must be positive")));
    }
    let limit = epsilon / 10.0;
    if dt > limit * (1.0 + 1e-12) {
        return Err(Error::StepSize { dt, limit });
    }
    if !(t0 < spec.horizon) {
        return Err(Error::param(format!("start time {t0} must precede T = {}", spec.horizon)));
    }
    Ok(())
}

/// Core slow-fast stepper. `visit(k, t, x, y, v)` sees every skeleton point,
/// including the terminal one (with the control evaluated there).
#[allow(clippy::too_many_arguments)]
pub fn run_slow_fast<N: NoiseSource>(
    spec: &ProblemSpec,
    epsilon: f64,
    policy: &PolicyHandle,
    x0: f64,
    y0: f64,
    t0: f64,
    dt: f64,
    noise: &mut N,
    mut visit: impl FnMut(usize, f64, f64, f64, f64),
) -> Result<(f64, f64)> {
    check_slow_fast(spec, epsilon, t0, dt)?;
    let t_end = spec.horizon;
    let steps = time_steps(t0, t_end, dt);
    let inv_alpha2 = 1.0 / spec.alpha2;
    let (mut x, mut y) = (x0, y0);
    for k in 0..steps {
        let (t, h) = step_len(k, steps, t0, t_end, dt);
        let v = policy.control(t, x, y);
        visit(k, t, x, y, v);
        let dl1 = noise.slow(h)?;
        let dl2 = (h / epsilon).powf(inv_alpha2) * noise.fast_standard();
        let bx = spec.b(x, y, v);
        let cy = spec.c(x, y);
        x += bx * h + dl1;
        y += cy * h / epsilon + dl2;
        if !(x.is_finite() && y.is_finite()) {
            return Err(Error::Divergence { step: k + 1, time: t + h });
        }
    }
    visit(steps, t_end, x, y, policy.control(t_end, x, y));
    Ok((x, y))
}

/// Simulates `(X^ε, Y^ε)` from `(x0, y0)` at `t0` up to `T`.
#[allow(clippy::too_many_arguments)]
pub fn simulate_slow_fast<N: NoiseSource>(
    spec: &ProblemSpec,
    epsilon: f64,
    policy: &PolicyHandle,
    x0: f64,
    y0: f64,
    t0: f64,
    dt: f64,
    noise: &mut N,
) -> Result<(Trajectory, Trajectory)> {
    let (mut times, mut xs, mut ys) = (Vec::new(), Vec::new(), Vec::new());
    run_slow_fast(spec, epsilon, policy, x0, y0, t0, dt, noise, |_, t, x, y, _| {
        times.push(t);
        xs.push(x);
        ys.push(y);
    })?;
    let meta = TrajectoryMeta { regime: Regime::Epsilon(epsilon), seed: noise.seed(), dt };
    Ok((
        Trajectory { times: times.clone(), states: xs, meta: meta.clone() },
        Trajectory { times, states: ys, meta },
    ))
}

/// Core frozen stepper for `dY = c(x, Y) ds + dL^{α₂}`; `visit(k, s, y)`.
pub fn run_frozen<N: NoiseSource>(
    spec: &ProblemSpec,
    x_frozen: f64,
    y0: f64,
    horizon: f64,
    dt: f64,
    noise: &mut N,
    mut visit: impl FnMut(usize, f64, f64),
) -> Result<f64> {
    if !(dt > 0.0) || !(horizon > 0.0) {
        return Err(Error::param(format!("frozen run needs dt > 0 and horizon > 0 (got {dt}, {horizon})")));
    }
    let steps = time_steps(0.0, horizon, dt);
    let inv_alpha2 = 1.0 / spec.alpha2;
    let mut y = y0;
    for k in 0..steps {
        let (s, h) = step_len(k, steps, 0.0, horizon, dt);
        visit(k, s, y);
        y += spec.c(x_frozen, y) * h + h.powf(inv_alpha2) * noise.fast_standard();
        if !y.is_finite() {
            return Err(Error::Divergence { step: k + 1, time: s + h });
        }
    }
    visit(steps, horizon, y);
    Ok(y)
}

pub fn simulate_frozen<N: NoiseSource>(
    spec: &ProblemSpec,
    x_frozen: f64,
    y0: f64,
    horizon: f64,
    dt: f64,
    noise: &mut N,
) -> Result<Trajectory> {
    let (mut times, mut ys) = (Vec::new(), Vec::new());
    run_frozen(spec, x_frozen, y0, horizon, dt, noise, |_, s, y| {
        times.push(s);
        ys.push(y);
    })?;
    Ok(Trajectory {
        times,
        states: ys,
        meta: TrajectoryMeta { regime: Regime::Frozen { x: x_frozen }, seed: noise.seed(), dt },
    })
}

/// Core averaged stepper for `dX̄ = b̄(X̄, v) ds + dL^{α₁}`; `visit(k, t, x, v)`.
#[allow(clippy::too_many_arguments)]
pub fn run_averaged<N: NoiseSource>(
    eff: &EffectiveProblem,
    policy: &PolicyHandle,
    x0: f64,
    t0: f64,
    dt: f64,
    noise: &mut N,
    mut visit: impl FnMut(usize, f64, f64, f64),
) -> Result<f64> {
    if !(dt > 0.0) {
        return Err(Error::param(format!("dt = {dt} must be positive")));
    }
    let t_end = eff.horizon;
    if t0 > t_end {
        return Err(Error::param(format!("start time {t0} exceeds T = {t_end}")));
    }
    let steps = time_steps(t0, t_end, dt);
    let mut x = x0;
    for k in 0..steps {
        let (t, h) = step_len(k, steps, t0, t_end, dt);
        let v = policy.control(t, x, 0.0);
        visit(k, t, x, v);
        x += eff.b_bar(x, v) * h + noise.slow(h)?;
        if !x.is_finite() {
            return Err(Error::Divergence { step: k + 1, time: t + h });
        }
    }
    visit(steps, t_end, x, policy.control(t_end, x, 0.0));
    Ok(x)
}

pub fn simulate_averaged<N: NoiseSource>(
    eff: &EffectiveProblem,
    policy: &PolicyHandle,
    x0: f64,
    t0: f64,
    dt: f64,
    noise: &mut N,
) -> Result<Trajectory> {
    if !(t0 < eff.horizon) {
        return Err(Error::param(format!("start time {t0} must precede T = {}", eff.horizon)));
    }
    let (mut times, mut xs) = (Vec::new(), Vec::new());
    run_averaged(eff, policy, x0, t0, dt, noise, |_, t, x, _| {
        times.push(t);
        xs.push(x);
    })?;
    Ok(Trajectory { times, states: xs, meta: TrajectoryMeta { regime: Regime::Averaged, seed: noise.seed(), dt } })
}

/// Monte Carlo estimate of `E[sup_{t0 ≤ s ≤ T} |X^ε_s|^p]` for `1 ≤ p < α₁`.
#[allow(clippy::too_many_arguments)]
pub fn estimate_sup_moment(
    spec: &ProblemSpec,
    epsilon: f64,
    policy: &PolicyHandle,
    p: f64,
    x0: f64,
    y0: f64,
    n_paths: usize,
    dt: f64,
    seed: u64,
) -> Result<Estimate> {
    check_alpha(spec.alpha1)?;
    if !(p >= 1.0 && p < spec.alpha1) {
        return Err(Error::param(format!(
            "moment exponent p = {p} must satisfy 1 <= p < alpha1 = {} (higher moments of the slow component are infinite)",
            spec.alpha1
        )));
    }
    if n_paths == 0 {
        return Err(Error::param("n_paths must be positive"));
    }
    let per_path: Result<Vec<f64>> = (0..n_paths as u64)
        .into_par_iter()
        .map(|i| {
            let mut noise = StableNoise::for_path(spec.alpha1, spec.alpha2, seed, i);
            let mut sup = 0.0f64;
            run_slow_fast(spec, epsilon, policy, x0, y0, 0.0, dt, &mut noise, |_, _, x, _, _| {
                sup = sup.max(x.abs());
            })?;
            Ok(sup.powf(p))
        })
        .collect();
    Ok(Estimate::from_iid(&per_path?))
}

/// Synchronously coupled frozen pair: both copies see the same fast noise.
/// Returns `(s, |Y¹_s - Y²_s|²)` along the skeleton.
#[allow(clippy::too_many_arguments)]
pub fn coupled_frozen_contraction<N: NoiseSource>(
    spec: &ProblemSpec,
    x1: f64,
    y1: f64,
    x2: f64,
    y2: f64,
    horizon: f64,
    dt: f64,
    noise: &mut N,
) -> Result<Vec<(f64, f64)>> {
    if !(dt > 0.0) || !(horizon > 0.0) {
        return Err(Error::param("coupled run needs dt > 0 and horizon > 0"));
    }
    let steps = time_steps(0.0, horizon, dt);
    let inv_alpha2 = 1.0 / spec.alpha2;
    let (mut a, mut b) = (y1, y2);
    let mut out = Vec::with_capacity(steps + 1);
    out.push((0.0, (a - b).powi(2)));
    for k in 0..steps {
        let (s, h) = step_len(k, steps, 0.0, horizon, dt);
        let dl = h.powf(inv_alpha2) * noise.fast_standard();
        a += spec.c(x1, a) * h + dl;
        b += spec.c(x2, b) * h + dl;
        if !(a.is_finite() && b.is_finite()) {
            return Err(Error::Divergence { step: k + 1, time: s + h });
        }
        out.push((s + h, (a - b).powi(2)));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::builtin_benchmark;

    fn bm1() -> ProblemSpec {
        builtin_benchmark("BM1").unwrap()
    }

    #[test]
    fn noiseless_zero_drift_is_constant() {
        let spec = bm1().with_slow_data(|_, _, _| 0.0, |_, _, _| 0.0, |_, _| 0.0);
        let pol = PolicyHandle::constant(0.0, &spec.control_set);
        let (x, y) = simulate_slow_fast(&spec, 0.1, &pol, 0.7, 1.0, 0.0, 0.01, &mut ZeroNoise).unwrap();
        assert!(x.states.iter().all(|&v| v == 0.7));
        assert_eq!(x.times.len(), 101);
        assert_eq!(*x.times.last().unwrap(), 1.0);
        assert_eq!(y.times, x.times);
    }

    #[test]
    fn fast_linear_ode_decay() {
        let spec = bm1().with_fast_drift(|_, y| -y);
        let pol = PolicyHandle::constant(0.0, &spec.control_set);
        let eps = 0.1;
        let dt = 0.001;
        let (_, y) = simulate_slow_fast(&spec, eps, &pol, 0.0, 1.0, 0.0, dt, &mut ZeroNoise).unwrap();
        for (t, v) in y.times.iter().zip(&y.states) {
            let exact = (-t / eps).exp();
            // first-order Euler error, bounded by t/(2ε)·(dt/ε)·e^{-(t-dt)/ε}
            let bound = 0.5 * dt / eps * (t / eps) * exact * (dt / eps).exp();
            assert!((v - exact).abs() <= bound + 1e-12, "t={t}");
        }
    }

    #[test]
    fn step_size_guard() {
        let spec = bm1();
        let pol = PolicyHandle::constant(0.0, &spec.control_set);
        let err = simulate_slow_fast(&spec, 0.1, &pol, 0.0, 0.0, 0.0, 0.02, &mut ZeroNoise).unwrap_err();
        assert!(matches!(err, Error::StepSize { .. }));
    }

    #[test]
    fn divergence_reports_step() {
        let spec = bm1().with_slow_data(|x, _, _| x * x, |_, _, _| 0.0, |_, _| 0.0);
        let pol = PolicyHandle::constant(0.0, &spec.control_set);
        let err = simulate_slow_fast(&spec, 1.0, &pol, 1e160, 0.0, 0.0, 0.1, &mut ZeroNoise).unwrap_err();
        assert!(matches!(err, Error::Divergence { step: 1, .. }), "{err:?}");
    }

    #[test]
    fn frozen_noiseless_relaxes_to_shifted_center() {
        let spec = bm1();
        let x: f64 = 0.8;
        let a = 0.5 * x.sin();
        let tr = simulate_frozen(&spec, x, 2.0, 3.0, 1e-4, &mut ZeroNoise).unwrap();
        for (s, y) in tr.times.iter().zip(&tr.states).step_by(500) {
            let exact = a + (2.0 - a) * (-s).exp();
            assert!((y - exact).abs() < 1e-4, "s={s}");
        }
        let flat = spec.with_fast_drift(|_, _| 0.0);
        let tr = simulate_frozen(&flat, x, 2.0, 1.0, 0.1, &mut ZeroNoise).unwrap();
        assert!(tr.states.iter().all(|&y| y == 2.0));
    }

    #[test]
    fn coupled_identical_start_is_zero() {
        let spec = bm1();
        let mut noise = StableNoise::for_path(1.5, 1.5, 3, 0);
        let d = coupled_frozen_contraction(&spec, 0.4, 1.0, 0.4, 1.0, 2.0, 0.01, &mut noise).unwrap();
        assert!(d.iter().all(|&(_, v)| v == 0.0));
    }

    #[test]
    fn moment_exponent_restriction() {
        let spec = bm1();
        let pol = PolicyHandle::constant(0.0, &spec.control_set);
        let err = estimate_sup_moment(&spec, 0.5, &pol, 1.6, 1.0, 0.0, 10, 0.01, 0).unwrap_err();
        match err {
            Error::Parameter(msg) => assert!(msg.contains("alpha1")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn grid_policy_interpolates() {
        let g = GridPolicy {
            horizon: 1.0,
            taus: vec![0.0, 0.5, 1.0],
            x_lo: -1.0,
            x_step: 1.0,
            controls: vec![vec![0.0, 0.0, 0.0], vec![-1.0, 0.0, 1.0], vec![1.0, 1.0, 1.0]],
        };
        assert_eq!(g.control(0.5, 0.5), 0.5);
        assert_eq!(g.control(0.5, 9.0), 1.0);
        assert_eq!(g.control(1.0, 0.3), 0.0);
        assert_eq!(g.control(0.0, 0.3), 1.0);
    }

    #[test]
    fn base_step_rejects_non_multiples() {
        let mut n = StableNoise::for_path(1.5, 1.5, 0, 0).with_base_step(0.01);
        assert!(n.slow(0.03).is_ok());
        assert!(n.slow(0.015).is_err());
    }

    #[test]
    fn time_grid_counts() {
        assert_eq!(time_steps(0.0, 1.0, 0.1), 10);
        assert_eq!(time_steps(0.0, 1.0, 0.3), 4);
        assert_eq!(time_steps(0.5, 1.0, 0.002), 250);
    }
}
