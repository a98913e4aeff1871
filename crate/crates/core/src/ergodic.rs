//! Invariant measures of the frozen fast equation and the diagnostics that
//! the averaging principle rests on: exponential ergodicity, the Lyapunov
//! structure of the fast generator and decay of path averages.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hjb::{Extension, FracLaplacian};
use crate::model::ProblemSpec;
use crate::rng;
use crate::sde::{run_frozen, time_steps, StableNoise};
use crate::stats::{self, Estimate};

/// Minimum number of batches for batch-means standard errors.
pub const BATCHES: usize = 25;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeasureConfig {
    /// Burn-in time discarded before sampling.
    pub burn_in: f64,
    /// Number of retained samples.
    pub n: usize,
    /// Time between retained samples.
    pub thinning: f64,
    pub dt: f64,
}

impl MeasureConfig {
    /// Five relaxation times of burn-in and one of thinning.
    pub fn for_beta(beta_hat: f64, n: usize, dt: f64) -> Self {
        MeasureConfig { burn_in: 5.0 / beta_hat, n, thinning: 1.0 / beta_hat, dt }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasureMeta {
    pub burn_in: f64,
    pub thinning: f64,
    pub n: usize,
    pub seed: u64,
    pub dt: f64,
}

/// Uniformly weighted samples of μ^x from one thinned chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalMeasure {
    pub x_anchor: f64,
    pub samples: Vec<f64>,
    pub meta: MeasureMeta,
}

impl EmpiricalMeasure {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn weight(&self) -> f64 {
        1.0 / self.samples.len() as f64
    }

    pub fn mean(&self) -> Estimate {
        Estimate::from_chain(&self.samples, BATCHES)
    }

    pub fn median(&self) -> f64 {
        stats::median(&self.samples)
    }

    pub fn iqr(&self) -> f64 {
        stats::iqr(&self.samples)
    }
}

/// Samples μ^x from a single frozen chain started at `y = 0`.
///
/// `beta_hat` is the audited dissipativity constant; burn-in must cover five
/// relaxation times `1/β` and thinning at least one.
pub fn estimate_invariant_measure(
    spec: &ProblemSpec,
    x: f64,
    cfg: &MeasureConfig,
    beta_hat: f64,
    seed: u64,
) -> Result<EmpiricalMeasure> {
    if !(beta_hat > 0.0) {
        return Err(Error::param(format!(
            "invariant measure needs an audited beta_hat > 0 (got {beta_hat}); run validate_assumptions first"
        )));
    }
    if cfg.burn_in < 5.0 / beta_hat * (1.0 - 1e-12) {
        return Err(Error::param(format!("burn_in {} shorter than 5/beta_hat = {}", cfg.burn_in, 5.0 / beta_hat)));
    }
    if cfg.thinning < 1.0 / beta_hat * (1.0 - 1e-12) {
        return Err(Error::param(format!("thinning {} shorter than 1/beta_hat = {}", cfg.thinning, 1.0 / beta_hat)));
    }
    if cfg.n == 0 || !(cfg.dt > 0.0) || cfg.dt > cfg.thinning {
        return Err(Error::param("invariant measure needs n > 0 and 0 < dt <= thinning"));
    }

    let burn_steps = time_steps(0.0, cfg.burn_in, cfg.dt);
    let thin_steps = time_steps(0.0, cfg.thinning, cfg.dt).max(1);
    let horizon = (burn_steps + thin_steps * (cfg.n - 1)) as f64 * cfg.dt;
    let mut noise = StableNoise::for_path(spec.alpha1, spec.alpha2, seed, 0)
        .with_fast_stream(rng::tag::MEASURE, x.to_bits());
    let mut samples = Vec::with_capacity(cfg.n);
    let record = |k: usize, _: f64, y: f64| {
        if k >= burn_steps && (k - burn_steps).is_multiple_of(thin_steps) && samples.len() < cfg.n {
            samples.push(y);
        }
    };
    if horizon > 0.0 {
        run_frozen(spec, x, 0.0, horizon, cfg.dt, &mut noise, record)?;
    } else {
        samples.push(0.0);
    }
    debug_assert_eq!(samples.len(), cfg.n);
    Ok(EmpiricalMeasure {
        x_anchor: x,
        samples,
        meta: MeasureMeta { burn_in: cfg.burn_in, thinning: cfg.thinning, n: cfg.n, seed, dt: cfg.dt },
    })
}

/// `∫ f dμ` with a batch-means standard error.
pub fn integrate(measure: &EmpiricalMeasure, f: impl Fn(f64) -> f64) -> Result<Estimate> {
    if measure.is_empty() {
        return Err(Error::Evaluation("empty measure".into()));
    }
    let mut values = Vec::with_capacity(measure.len());
    for &y in &measure.samples {
        let v = f(y);
        if !v.is_finite() {
            return Err(Error::Evaluation(format!("integrand is {v} at y = {y}")));
        }
        values.push(v);
    }
    Ok(Estimate::from_chain(&values, BATCHES))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayPoint {
    pub s: f64,
    /// `|P_s φ(y0) - μ(φ)|`.
    pub error: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayResult {
    pub curve: Vec<DecayPoint>,
    /// Negative log-error slope over resolved points; `None` when fewer than
    /// two points rise above five standard errors.
    pub fitted_rate: Option<f64>,
    pub resolved_points: usize,
}

/// Relaxation of `P_s φ(y0)` towards `μ^x(φ)`.
#[allow(clippy::too_many_arguments)]
pub fn ergodicity_decay(
    spec: &ProblemSpec,
    x: f64,
    test_fn: impl Fn(f64) -> f64 + Sync,
    y0: f64,
    times: &[f64],
    n_paths: usize,
    measure_cfg: &MeasureConfig,
    beta_hat: f64,
    seed: u64,
) -> Result<DecayResult> {
    if times.is_empty() || n_paths < 2 {
        return Err(Error::param("decay curve needs times and at least two paths"));
    }
    let dt = measure_cfg.dt;
    let horizon = times.iter().cloned().fold(0.0, f64::max);
    let idx: Vec<usize> = times.iter().map(|&s| (s / dt).round() as usize).collect();

    let per_path: Result<Vec<Vec<f64>>> = (0..n_paths as u64)
        .into_par_iter()
        .map(|i| {
            let mut noise =
                StableNoise::for_path(spec.alpha1, spec.alpha2, seed, i).with_fast_stream(rng::tag::DECAY, i);
            let mut vals = vec![0.0; idx.len()];
            run_frozen(spec, x, y0, horizon.max(dt), dt, &mut noise, |k, _, y| {
                for (slot, &target) in idx.iter().enumerate() {
                    if target == k {
                        vals[slot] = test_fn(y);
                    }
                }
            })?;
            Ok(vals)
        })
        .collect();
    let per_path = per_path?;

    let measure = estimate_invariant_measure(spec, x, measure_cfg, beta_hat, seed)?;
    let mu = integrate(&measure, &test_fn)?;

    let mut curve = Vec::with_capacity(times.len());
    for (slot, &s) in times.iter().enumerate() {
        let col: Vec<f64> = per_path.iter().map(|v| v[slot]).collect();
        let e = Estimate::from_iid(&col);
        curve.push(DecayPoint {
            s,
            error: (e.mean - mu.mean).abs(),
            stderr: (e.stderr.powi(2) + mu.stderr.powi(2)).sqrt(),
        });
    }
    let resolved: Vec<&DecayPoint> = curve.iter().filter(|p| p.error > 5.0 * p.stderr && p.error > 0.0).collect();
    let fitted_rate = if resolved.len() >= 2 {
        let xs: Vec<f64> = resolved.iter().map(|p| p.s).collect();
        let ys: Vec<f64> = resolved.iter().map(|p| p.error.ln()).collect();
        Some(-stats::ols_slope(&xs, &ys))
    } else {
        None
    };
    Ok(DecayResult { resolved_points: resolved.len(), curve, fitted_rate })
}

/// Quadrature resolution for [`lyapunov_check`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadGrid {
    /// Cell size of the coarse evaluation; a second pass uses `h/2`.
    pub h: f64,
    /// Half-width of the window around each evaluation point.
    pub half_width: f64,
}

impl Default for QuadGrid {
    fn default() -> Self {
        QuadGrid { h: 0.02, half_width: 60.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LyapunovRow {
    pub y: f64,
    /// `-𝓛₂ w(y) = (-Δ)^{α/2} w(y) - c(x, y) w'(y)` at the fine resolution.
    pub value: f64,
    /// Relative change between `h` and `h/2`.
    pub refinement_change: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LyapunovReport {
    pub rows: Vec<LyapunovRow>,
    /// Smallest audited radius where `-𝓛₂ w ≥ 0` at both `±r`.
    pub smallest_radius: Option<f64>,
}

/// The Lyapunov function `w(y) = √(1 + y²)`.
pub fn lyapunov_w(y: f64) -> f64 {
    (1.0 + y * y).sqrt()
}

pub fn lyapunov_grad(y: f64) -> f64 {
    y / lyapunov_w(y)
}

fn neg_fast_generator_on_w(spec: &ProblemSpec, x: f64, y: f64, quad: &QuadGrid) -> Result<f64> {
    let lap = FracLaplacian::new(spec.alpha2, quad.h)?;
    let half = (quad.half_width / quad.h).round() as usize;
    let values: Vec<f64> = (0..=2 * half).map(|k| lyapunov_w(y + (k as f64 - half as f64) * quad.h)).collect();
    // generator part A w = -(-Δ)^{α/2} w
    let aw = lap.apply_at(&values, half, Extension::Linear);
    Ok(-aw - spec.c(x, y) * lyapunov_grad(y))
}

/// Evaluates `-𝓛₂ w` at `y = ±r` for each radius by stencil quadrature.
pub fn lyapunov_check(spec: &ProblemSpec, x: f64, radii: &[f64], quad: &QuadGrid) -> Result<LyapunovReport> {
    if radii.iter().any(|&r| !(r > 0.0)) {
        return Err(Error::param("radii must be positive"));
    }
    let fine = QuadGrid { h: quad.h / 2.0, half_width: quad.half_width };
    let mut rows = Vec::new();
    let mut smallest = None;
    let mut sorted = radii.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    for &r in &sorted {
        let mut both = true;
        for y in [-r, r] {
            let coarse = neg_fast_generator_on_w(spec, x, y, quad)?;
            let value = neg_fast_generator_on_w(spec, x, y, &fine)?;
            let change = (value - coarse).abs() / value.abs().max(1e-12);
            if change > 0.01 {
                return Err(Error::Resolution(format!(
                    "Lyapunov quadrature at y = {y} changed by {:.3}% under refinement (h = {})",
                    100.0 * change,
                    quad.h
                )));
            }
            both &= value >= 0.0;
            rows.push(LyapunovRow { y, value, refinement_change: change });
        }
        if both && smallest.is_none() {
            smallest = Some(r);
        }
    }
    Ok(LyapunovReport { rows, smallest_radius: smallest })
}

/// `E|∫_{t1}^{t2} (f(x, Y^ε_r) - f̄(x)) dr|` with the slow variable pinned at
/// `x_frozen`; `f̄` comes from `measure`.
#[allow(clippy::too_many_arguments)]
pub fn path_average_error(
    spec: &ProblemSpec,
    epsilon: f64,
    f: impl Fn(f64, f64) -> f64 + Sync,
    x_frozen: f64,
    y0: f64,
    window: (f64, f64),
    n_paths: usize,
    dt: f64,
    measure: &EmpiricalMeasure,
    seed: u64,
) -> Result<Estimate> {
    let (t1, t2) = window;
    if !(0.0 <= t1 && t1 < t2) {
        return Err(Error::param(format!("window ({t1}, {t2}) must satisfy 0 <= t1 < t2")));
    }
    if !(epsilon > 0.0 && epsilon <= 1.0) || !(dt > 0.0) || dt > epsilon / 10.0 * (1.0 + 1e-12) {
        return Err(Error::StepSize { dt, limit: epsilon / 10.0 });
    }
    let fbar = integrate(measure, |y| f(x_frozen, y))?.mean;
    // Y^ε with X pinned is the frozen chain run in fast time s = t/ε.
    let fast_dt = dt / epsilon;
    let fast_horizon = t2 / epsilon;
    let per_path: Result<Vec<f64>> = (0..n_paths as u64)
        .into_par_iter()
        .map(|i| {
            let mut noise = StableNoise::for_path(spec.alpha1, spec.alpha2, seed, i)
                .with_fast_stream(rng::tag::PATH_AVERAGE, i);
            let mut acc = 0.0;
            let mut prev: Option<(f64, f64)> = None;
            run_frozen(spec, x_frozen, y0, fast_horizon, fast_dt, &mut noise, |_, s, y| {
                let t = s * epsilon;
                let val = f(x_frozen, y) - fbar;
                if let Some((tp, vp)) = prev {
                    let lo = tp.max(t1);
                    let hi = t.min(t2);
                    if hi > lo {
                        // trapezoid on the clipped sub-interval
                        let slope = (val - vp) / (t - tp);
                        let a = vp + slope * (lo - tp);
                        let b = vp + slope * (hi - tp);
                        acc += 0.5 * (a + b) * (hi - lo);
                    }
                }
                prev = Some((t, val));
            })?;
            Ok(acc.abs())
        })
        .collect();
    Ok(Estimate::from_iid(&per_path?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::builtin_benchmark;

    #[test]
    fn constant_integrand() {
        let spec = builtin_benchmark("BM1").unwrap();
        let m = estimate_invariant_measure(&spec, 0.0, &MeasureConfig::for_beta(1.0, 2000, 0.05), 1.0, 1).unwrap();
        assert_eq!(m.len(), 2000);
        let e = integrate(&m, |_| 1.0).unwrap();
        assert_eq!((e.mean, e.stderr), (1.0, 0.0));
        assert!((m.weight() * m.len() as f64 - 1.0).abs() < 1e-15);
    }

    #[test]
    fn measure_preconditions() {
        let spec = builtin_benchmark("BM1").unwrap();
        let short = MeasureConfig { burn_in: 1.0, n: 100, thinning: 1.0, dt: 0.01 };
        assert!(estimate_invariant_measure(&spec, 0.0, &short, 1.0, 0).is_err());
        let cfg = MeasureConfig::for_beta(1.0, 100, 0.01);
        assert!(estimate_invariant_measure(&spec, 0.0, &cfg, 0.0, 0).is_err());
    }

    #[test]
    fn non_finite_integrand_reports_witness() {
        let spec = builtin_benchmark("BM1").unwrap();
        let m = estimate_invariant_measure(&spec, 0.0, &MeasureConfig::for_beta(1.0, 100, 0.05), 1.0, 1).unwrap();
        let err = integrate(&m, |y| if y == m.samples[3] { f64::NAN } else { 0.0 }).unwrap_err();
        assert!(matches!(err, Error::Evaluation(msg) if msg.contains("y =")));
    }

    #[test]
    fn measure_is_reproducible() {
        let spec = builtin_benchmark("BM1").unwrap();
        let cfg = MeasureConfig::for_beta(1.0, 500, 0.02);
        let a = estimate_invariant_measure(&spec, 0.3, &cfg, 1.0, 9).unwrap();
        let b = estimate_invariant_measure(&spec, 0.3, &cfg, 1.0, 9).unwrap();
        assert_eq!(a.samples, b.samples);
    }

    #[test]
    fn lyapunov_gradient_below_one() {
        for k in -200..=200 {
            let y = k as f64 * 0.37;
            assert!(lyapunov_grad(y).abs() < 1.0);
        }
    }

    #[test]
    fn y_independent_path_average_is_zero() {
        let spec = builtin_benchmark("BM1").unwrap();
        let m = estimate_invariant_measure(&spec, 0.0, &MeasureConfig::for_beta(1.0, 200, 0.05), 1.0, 1).unwrap();
        let e = path_average_error(&spec, 0.2, |x, _| x.cos(), 0.0, 1.0, (0.2, 1.0), 20, 0.01, &m, 3).unwrap();
        assert!(e.mean < 1e-12);
    }

    #[test]
    fn constant_test_function_has_no_decay_error() {
        let spec = builtin_benchmark("BM1").unwrap();
        let cfg = MeasureConfig::for_beta(1.0, 200, 0.05);
        let r = ergodicity_decay(&spec, 0.0, |_| 2.0, 3.0, &[0.5, 1.0, 2.0], 50, &cfg, 1.0, 0).unwrap();
        assert!(r.curve.iter().all(|p| p.error == 0.0));
        assert_eq!(r.fitted_rate, None);
    }
}
