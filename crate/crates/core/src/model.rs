//! Problem data for the controlled slow-fast system and a sampled audit of
//! the standing structural assumptions.
//!
//! The reference implementation works with scalar slow state, fast state and
//! control (`n = m = r = 1`). Coefficients are shared closures so a
//! [`ProblemSpec`] can be cloned into worker threads cheaply.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

pub type Drift3 = Arc<dyn Fn(f64, f64, f64) -> f64 + Send + Sync>;
pub type Drift2 = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;
/// Closed-form Hamiltonian `(x, y, p) -> (sup value, maximizing control)`.
pub type ClosedHamiltonian = Arc<dyn Fn(f64, f64, f64) -> (f64, f64) + Send + Sync>;

pub const BENCHMARKS: [&str; 2] = ["BM1", "LIN0"];

/// Admissible control values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ControlSet {
    /// Closed interval `[lo, hi]`.
    Interval { lo: f64, hi: f64 },
    /// Finite set of points, kept sorted ascending.
    Finite { points: Vec<f64> },
    Singleton { value: f64 },
}

impl ControlSet {
    pub fn interval(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite()) || lo > hi {
            return Err(Error::param(format!("control interval [{lo}, {hi}] is empty or unbounded")));
        }
        Ok(ControlSet::Interval { lo, hi })
    }

    pub fn finite(mut points: Vec<f64>) -> Result<Self> {
        if points.is_empty() || points.iter().any(|p| !p.is_finite()) {
            return Err(Error::param("finite control set must be nonempty and finite"));
        }
        points.sort_by(|a, b| a.total_cmp(b));
        points.dedup();
        Ok(ControlSet::Finite { points })
    }

    /// Projects `v` onto the set (nearest point, ties to the smaller one).
    pub fn clamp(&self, v: f64) -> f64 {
        match self {
            ControlSet::Interval { lo, hi } => v.clamp(*lo, *hi),
            ControlSet::Singleton { value } => *value,
            ControlSet::Finite { points } => {
                let mut best = points[0];
                for &p in points.iter().skip(1) {
                    if (p - v).abs() < (best - v).abs() {
                        best = p;
                    }
                }
                best
            }
        }
    }

    pub fn contains(&self, v: f64) -> bool {
        match self {
            ControlSet::Interval { lo, hi } => *lo <= v && v <= *hi,
            ControlSet::Singleton { value } => *value == v,
            ControlSet::Finite { points } => points.contains(&v),
        }
    }

    /// Uniform draw from the set.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            ControlSet::Interval { lo, hi } => lo + (hi - lo) * rng.random::<f64>(),
            ControlSet::Singleton { value } => *value,
            ControlSet::Finite { points } => points[rng.random_range(0..points.len())],
        }
    }

    /// Grid of `n` representative controls (all points for finite sets).
    pub fn grid(&self, n: usize) -> Vec<f64> {
        match self {
            ControlSet::Interval { lo, hi } => {
                if n <= 1 || lo == hi {
                    return vec![*lo];
                }
                (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect()
            }
            ControlSet::Singleton { value } => vec![*value],
            ControlSet::Finite { points } => points.clone(),
        }
    }
}

/// Full model of the controlled slow-fast problem.
#[derive(Clone)]
pub struct ProblemSpec {
    pub name: String,
    pub alpha1: f64,
    pub alpha2: f64,
    /// Discount rate λ.
    pub lambda: f64,
    /// Final time T.
    pub horizon: f64,
    pub control_set: ControlSet,
    /// Slow drift `b(x, y, v)`.
    pub drift_b: Drift3,
    /// Fast drift `c(x, y)`.
    pub drift_c: Drift2,
    /// Running cost `L(x, y, v)`.
    pub cost_l: Drift3,
    /// Terminal cost `g(x, y)`.
    pub terminal_g: Drift2,
    /// Optional closed form of `sup_v [b p - L]`; the generic search in
    /// [`crate::effective::hamiltonian`] is used when absent.
    pub hamiltonian_closed: Option<ClosedHamiltonian>,
}

impl fmt::Debug for ProblemSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProblemSpec")
            .field("name", &self.name)
            .field("alpha1", &self.alpha1)
            .field("alpha2", &self.alpha2)
            .field("lambda", &self.lambda)
            .field("horizon", &self.horizon)
            .field("control_set", &self.control_set)
            .finish_non_exhaustive()
    }
}

impl ProblemSpec {
    /// Checks the scalar invariants (indices in (1,2), λ > 0, T > 0).
    pub fn check(&self) -> Result<()> {
        for (name, a) in [("alpha1", self.alpha1), ("alpha2", self.alpha2)] {
            if !(a > 1.0 && a < 2.0) {
                return Err(Error::param(format!("{name} = {a} must lie in (1, 2)")));
            }
        }
        if !(self.lambda > 0.0) {
            return Err(Error::param(format!("lambda = {} must be positive", self.lambda)));
        }
        if !(self.horizon > 0.0) {
            return Err(Error::param(format!("horizon T = {} must be positive", self.horizon)));
        }
        Ok(())
    }

    pub fn b(&self, x: f64, y: f64, v: f64) -> f64 {
        (self.drift_b)(x, y, v)
    }

    pub fn c(&self, x: f64, y: f64) -> f64 {
        (self.drift_c)(x, y)
    }

    pub fn l(&self, x: f64, y: f64, v: f64) -> f64 {
        (self.cost_l)(x, y, v)
    }

    pub fn g(&self, x: f64, y: f64) -> f64 {
        (self.terminal_g)(x, y)
    }

    /// Copy of the spec with a different fast drift.
    pub fn with_fast_drift(&self, c: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        let mut s = self.clone();
        s.drift_c = Arc::new(c);
        s
    }

    /// Copy of the spec with different slow data; drops any closed-form Hamiltonian.
    pub fn with_slow_data(
        &self,
        b: impl Fn(f64, f64, f64) -> f64 + Send + Sync + 'static,
        l: impl Fn(f64, f64, f64) -> f64 + Send + Sync + 'static,
        g: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        let mut s = self.clone();
        s.drift_b = Arc::new(b);
        s.cost_l = Arc::new(l);
        s.terminal_g = Arc::new(g);
        s.hamiltonian_closed = None;
        s
    }
}

/// `φ(p) = sup_{|v| ≤ 1} (v p - v²/2)`.
pub fn quadratic_control_gain(p: f64) -> f64 {
    if p.abs() <= 1.0 {
        0.5 * p * p
    } else {
        p.abs() - 0.5
    }
}

/// Instantiates a built-in benchmark model by name.
pub fn builtin_benchmark(name: &str) -> Result<ProblemSpec> {
    let control_set = ControlSet::Interval { lo: -1.0, hi: 1.0 };
    let closed: ClosedHamiltonian;
    let spec = match name {
        "BM1" => {
            closed = Arc::new(|x: f64, y: f64, p: f64| {
                let v = p.clamp(-1.0, 1.0);
                let value = (-x + y.sin()) * p + quadratic_control_gain(p)
                    - (1.0 + x * x).sqrt()
                    - 0.25 * y.cos();
                (value, v)
            });
            ProblemSpec {
                name: "BM1".into(),
                alpha1: 1.5,
                alpha2: 1.5,
                lambda: 1.0,
                horizon: 1.0,
                control_set,
                drift_b: Arc::new(|x, y, v| -x + y.sin() + v),
                drift_c: Arc::new(|x, y| -y + 0.5 * x.sin()),
                cost_l: Arc::new(|x, y, v| (1.0 + x * x).sqrt() + 0.25 * y.cos() + 0.5 * v * v),
                terminal_g: Arc::new(|x, y| x.tanh() + 0.25 * y.cos()),
                hamiltonian_closed: Some(closed),
            }
        }
        "LIN0" => {
            closed = Arc::new(|x: f64, _y: f64, p: f64| {
                let v = p.clamp(-1.0, 1.0);
                (-x * p + quadratic_control_gain(p) - (1.0 + x * x).sqrt(), v)
            });
            ProblemSpec {
                name: "LIN0".into(),
                alpha1: 1.5,
                alpha2: 1.5,
                lambda: 1.0,
                horizon: 1.0,
                control_set,
                drift_b: Arc::new(|x, _y, v| -x + v),
                drift_c: Arc::new(|x, y| -y + 0.5 * x.sin()),
                cost_l: Arc::new(|x, _y, v| (1.0 + x * x).sqrt() + 0.5 * v * v),
                terminal_g: Arc::new(|x, _y| x.tanh()),
                hamiltonian_closed: Some(closed),
            }
        }
        other => {
            return Err(Error::Usage(format!(
                "unknown benchmark `{other}`; available: {}",
                BENCHMARKS.join(", ")
            )))
        }
    };
    Ok(spec)
}

/// Verdict for one structural assumption.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Verdict {
    pub assumption: String,
    /// "pass (sampled)" or "fail".
    pub status: String,
    pub passed: bool,
    /// Worst-case point for the binding constant, formatted for logs.
    pub witness: String,
}

/// Sampled estimates of the structural constants.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub sample_count: usize,
    pub radius: f64,
    pub seed: u64,
    /// Dissipativity constant β estimated as `-max <Δc, Δy>/|Δy|²`.
    pub beta_hat: f64,
    pub lip_b: f64,
    pub lip_c: f64,
    /// Lipschitz constant of L in x.
    pub lip_l: f64,
    /// Bound on the y-derivative of L.
    pub grad_y_l: f64,
    pub lip_g: f64,
    /// Linear-growth constants `max |f| / (1 + |arg|)`.
    pub growth_b: f64,
    pub growth_c: f64,
    pub growth_l: f64,
    pub growth_g: f64,
    pub verdicts: Vec<Verdict>,
}

impl AssumptionReport {
    pub fn passed(&self) -> bool {
        self.verdicts.iter().all(|v| v.passed)
    }

    pub fn verdict(&self, assumption: &str) -> Option<&Verdict> {
        self.verdicts.iter().find(|v| v.assumption == assumption)
    }
}

#[derive(Default)]
struct Running {
    value: f64,
    witness: String,
}

impl Running {
    fn new(value: f64) -> Self {
        Running { value, witness: String::new() }
    }

    fn offer(&mut self, candidate: f64, witness: impl FnOnce() -> String) {
        if candidate > self.value {
            self.value = candidate;
            self.witness = witness();
        }
    }
}

fn finite(function: &'static str, value: f64, point: impl FnOnce() -> String) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::ModelEvaluation { function, point: point() })
    }
}

/// Statistical audit of (A_b), (A_c), (A_L), (A_g) on the ball `|x|, |y| ≤ radius`.
///
/// Half of the sampled pairs are global, half are local perturbations of
/// relative size 1e-3 so that difference quotients see both the large-scale
/// and the infinitesimal Lipschitz behaviour.
pub fn validate_assumptions(
    spec: &ProblemSpec,
    sample_count: usize,
    radius: f64,
    rng_seed: u64,
) -> Result<AssumptionReport> {
    if sample_count < 1000 {
        return Err(Error::param(format!("sample_count = {sample_count} must be at least 1000")));
    }
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(Error::param(format!("radius = {radius} must be positive")));
    }
    spec.check()?;

    let mut rng = rng::substream(rng_seed, rng::tag::AUDIT, 0);
    let ball = |r: &mut rng::StreamRng| radius * (2.0 * r.random::<f64>() - 1.0);
    let local = 1e-3 * radius;

    let mut dissip = Running::new(f64::NEG_INFINITY);
    let (mut lip_b, mut lip_c, mut lip_l, mut gy_l, mut lip_g) =
        (Running::new(0.0), Running::new(0.0), Running::new(0.0), Running::new(0.0), Running::new(0.0));
    let (mut gr_b, mut gr_c, mut gr_l, mut gr_g) =
        (Running::new(0.0), Running::new(0.0), Running::new(0.0), Running::new(0.0));

    for k in 0..sample_count {
        let x1 = ball(&mut rng);
        let y1 = ball(&mut rng);
        let (x2, y2) = if k % 2 == 0 {
            (ball(&mut rng), ball(&mut rng))
        } else {
            (x1 + local * (2.0 * rng.random::<f64>() - 1.0), y1 + local * (2.0 * rng.random::<f64>() - 1.0))
        };
        let v = spec.control_set.sample(&mut rng);
        let pt = |x: f64, y: f64| move || format!("(x={x:.6}, y={y:.6}, v={v:.6})");

        let b1 = finite("b", spec.b(x1, y1, v), pt(x1, y1))?;
        let b2 = finite("b", spec.b(x2, y2, v), pt(x2, y2))?;
        let c11 = finite("c", spec.c(x1, y1), pt(x1, y1))?;
        let c12 = finite("c", spec.c(x1, y2), pt(x1, y2))?;
        let c22 = finite("c", spec.c(x2, y2), pt(x2, y2))?;
        let l11 = finite("L", spec.l(x1, y1, v), pt(x1, y1))?;
        let l21 = finite("L", spec.l(x2, y1, v), pt(x2, y1))?;
        let l12 = finite("L", spec.l(x1, y2, v), pt(x1, y2))?;
        let g1 = finite("g", spec.g(x1, y1), pt(x1, y1))?;
        let g2 = finite("g", spec.g(x2, y2), pt(x2, y2))?;

        let dx = (x1 - x2).abs();
        let dy = (y1 - y2).abs();
        let dxy = dx + dy;
        let pair = || format!("(x1={x1:.6}, y1={y1:.6}) vs (x2={x2:.6}, y2={y2:.6}), v={v:.6}");

        if dy > 0.0 {
            let q = (c11 - c12) * (y1 - y2) / (dy * dy);
            dissip.offer(q, || format!("x={x1:.6}, y1={y1:.6}, y2={y2:.6}"));
            gy_l.offer((l11 - l12).abs() / dy, pair);
        }
        if dxy > 0.0 {
            lip_b.offer((b1 - b2).abs() / dxy, pair);
            lip_c.offer((c11 - c22).abs() / dxy, pair);
            lip_g.offer((g1 - g2).abs() / dxy, pair);
        }
        if dx > 0.0 {
            lip_l.offer((l11 - l21).abs() / dx, pair);
        }
        gr_b.offer(b1.abs() / (1.0 + x1.abs()), pt(x1, y1));
        gr_c.offer(c11.abs() / (1.0 + y1.abs()), pt(x1, y1));
        gr_l.offer(l11.abs() / (1.0 + x1.abs()), pt(x1, y1));
        gr_g.offer(g1.abs() / (1.0 + x1.abs()), pt(x1, y1));
    }

    let beta_hat = -dissip.value;
    let ok = |v: f64| v.is_finite();
    let verdict = |name: &str, passed: bool, witness: String| Verdict {
        assumption: name.to_string(),
        status: if passed { "pass (sampled)".into() } else { "fail".into() },
        passed,
        witness,
    };
    let verdicts = vec![
        verdict(
            "A_c",
            beta_hat > 0.0 && ok(lip_c.value) && ok(gr_c.value),
            format!("dissipativity: {}", dissip.witness),
        ),
        verdict("A_b", ok(lip_b.value) && ok(gr_b.value), format!("lipschitz: {}", lip_b.witness)),
        verdict(
            "A_L",
            ok(lip_l.value) && ok(gy_l.value) && ok(gr_l.value),
            format!("lipschitz in x: {}", lip_l.witness),
        ),
        verdict("A_g", ok(lip_g.value) && ok(gr_g.value), format!("lipschitz: {}", lip_g.witness)),
    ];

    Ok(AssumptionReport {
        sample_count,
        radius,
        seed: rng_seed,
        beta_hat,
        lip_b: lip_b.value,
        lip_c: lip_c.value,
        lip_l: lip_l.value,
        grad_y_l: gy_l.value,
        lip_g: lip_g.value,
        growth_b: gr_b.value,
        growth_c: gr_c.value,
        growth_l: gr_l.value,
        growth_g: gr_g.value,
        verdicts,
    })
}
