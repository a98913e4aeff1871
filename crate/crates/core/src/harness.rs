//! Experiment orchestration: configuration, ε-sweeps, combined reports.
//!
//! Every check in a [`Report`] carries the measured value, the threshold and
//! the table its value was read from, so a verdict can always be traced back
//! to a numeric row. Reports contain no timings and are bit-for-bit
//! reproducible from `(config, seed)`.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::effective::{
    approximate_corrector, build_effective, cauchy_cell, EffectiveProblem, MeasureSource,
};
use crate::ergodic::{
    ergodicity_decay, estimate_invariant_measure, integrate, lyapunov_check, MeasureConfig, QuadGrid,
};
use crate::error::{Error, Result};
use crate::hjb::{
    effective_refinement_gap, max_slow_drift, solve_effective_hjb, solve_two_scale_hjb, Grid1, SchemeConfig,
    ValueSurface,
};
use crate::model::{builtin_benchmark, validate_assumptions, AssumptionReport, ProblemSpec};
use crate::rng;
use crate::sde::{coupled_frozen_contraction, estimate_sup_moment, run_averaged, run_slow_fast, Coupling, PolicyHandle, StableNoise};
use crate::stats::{ks_noise_floor, ks_two_sample};
use crate::value::{cost_convergence_table, CostConfig};

/// Flat experiment configuration; every field has a default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: String,
    /// Strictly decreasing, smallest entry at least 0.02.
    pub eps_list: Vec<f64>,
    /// Slow grid `a:b:n` shared by the effective and two-scale solves.
    pub x_grid: String,
    /// Fast grid `a:b:n` of the two-scale solve.
    pub y_grid: String,
    /// Euler step of every slow-fast simulation; at most `min ε / 10`.
    pub dt: f64,
    /// Fixed HJB step; `None` takes the CFL step.
    pub hjb_dt: Option<f64>,
    pub paths: usize,
    /// Invariant-measure chain; burn-in and thinning default to `5/β` and `1/β`.
    pub burn_in: Option<f64>,
    pub thinning: Option<f64>,
    pub measure_samples: usize,
    pub measure_dt: f64,
    /// `closed` (built-in benchmarks) or `mc`.
    pub effective_source: String,
    /// Slow nodes for the `mc` effective source.
    pub effective_nodes: usize,
    /// Radius `l` of the slow ball.
    pub roi_radius: f64,
    /// Times `t ∈ [0, roi_t_max]` entering the sweep supremum.
    pub roi_t_max: f64,
    pub roi_time_points: usize,
    pub y_refs: Vec<f64>,
    /// Constant control of the Monte Carlo stages.
    pub policy_v: f64,
    /// `(t, x, y)` start of the Monte Carlo stages.
    pub start: [f64; 3],
    /// Initial fast state of the weak-convergence stage. Started in
    /// equilibrium (`y = 0`) the ε-dependence of the law of `X^ε_T` sits
    /// below the resolution of a 10⁴-path KS statistic; a displaced start
    /// exposes the fast transient that averaging removes.
    pub weak_y0: f64,
    pub moment_p: f64,
    pub moment_paths: usize,
    pub decay_paths: usize,
    pub corrector_paths: usize,
    pub corrector_eps: f64,
    pub cauchy_paths: usize,
    pub audit_samples: usize,
    pub audit_radius: f64,
    pub seed: u64,
    pub out_dir: Option<String>,
    /// Disable to run only the SDE and Monte Carlo stages.
    pub two_scale: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            model: "BM1".into(),
            eps_list: vec![0.5, 0.2, 0.1, 0.05, 0.02],
            x_grid: "-5:5:201".into(),
            y_grid: "-9:9:121".into(),
            dt: 0.002,
            hjb_dt: None,
            paths: 10_000,
            burn_in: None,
            thinning: None,
            measure_samples: 100_000,
            measure_dt: 0.01,
            effective_source: "closed".into(),
            effective_nodes: 21,
            roi_radius: 1.0,
            roi_t_max: 0.5,
            roi_time_points: 11,
            y_refs: vec![0.0, 2.0],
            policy_v: 0.0,
            start: [0.0, 0.0, 0.0],
            weak_y0: 2.0,
            moment_p: 1.2,
            moment_paths: 2_000,
            decay_paths: 4_000,
            corrector_paths: 200,
            corrector_eps: 0.05,
            cauchy_paths: 4_000,
            audit_samples: 2_000,
            audit_radius: 5.0,
            seed: 20_240_601,
            out_dir: None,
            two_scale: true,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn x_grid(&self) -> Result<Grid1> {
        Grid1::parse(&self.x_grid)
    }

    pub fn y_grid(&self) -> Result<Grid1> {
        Grid1::parse(&self.y_grid)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Configuration(m));
        if self.eps_list.is_empty() {
            return bad("eps_list must be nonempty".into());
        }
        if self.eps_list.windows(2).any(|w| !(w[0] > w[1])) {
            return bad(format!("eps_list {:?} must be strictly decreasing", self.eps_list));
        }
        let (hi, lo) = (self.eps_list[0], self.eps_list[self.eps_list.len() - 1]);
        if lo < 0.02 || hi > 1.0 {
            return bad(format!("eps_list entries must lie in [0.02, 1] (got {lo} .. {hi})"));
        }
        if !(self.dt > 0.0) || self.dt > lo / 10.0 * (1.0 + 1e-12) {
            return bad(format!("dt = {} must be positive and at most min eps / 10 = {}", self.dt, lo / 10.0));
        }
        let gx = self.x_grid()?;
        self.y_grid()?;
        let l = self.roi_radius;
        if !(l > 0.0) {
            return bad(format!("roi_radius = {l} must be positive"));
        }
        // region of interest inside the domain with a margin of three half-widths
        if gx.lo > -4.0 * l || gx.hi < 4.0 * l {
            return bad(format!("x domain [{}, {}] must contain [-4l, 4l] with l = {l}", gx.lo, gx.hi));
        }
        if self.paths == 0 || self.measure_samples == 0 || self.roi_time_points == 0 {
            return bad("paths, measure_samples and roi_time_points must be positive".into());
        }
        let [t0, _, _] = self.start;
        if !(t0 >= 0.0) || !(self.roi_t_max >= 0.0) {
            return bad(format!("start time {t0} and roi_t_max {} must be nonnegative", self.roi_t_max));
        }
        if self.y_refs.is_empty() {
            return bad("y_refs must be nonempty".into());
        }
        match self.effective_source.as_str() {
            "closed" | "mc" => Ok(()),
            other => bad(format!("effective_source `{other}` must be `closed` or `mc`")),
        }
    }

    /// The model named by `model`.
    pub fn spec(&self) -> Result<ProblemSpec> {
        builtin_benchmark(&self.model)
    }

    fn measure_config(&self, beta_hat: f64) -> MeasureConfig {
        let mut m = MeasureConfig::for_beta(beta_hat, self.measure_samples, self.measure_dt);
        if let Some(b) = self.burn_in {
            m.burn_in = b;
        }
        if let Some(t) = self.thinning {
            m.thinning = t;
        }
        m
    }

    fn roi_times(&self) -> Vec<f64> {
        let k = self.roi_time_points;
        if k == 1 {
            return vec![0.0];
        }
        (0..k).map(|i| self.roi_t_max * i as f64 / (k - 1) as f64).collect()
    }
}

/// Numeric table of a report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    fn new(name: &str, columns: &[&str]) -> Self {
        Table { name: name.into(), columns: columns.iter().map(|c| c.to_string()).collect(), rows: Vec::new() }
    }

    pub fn to_csv(&self) -> String {
        let mut s = self.columns.join(",");
        s.push('\n');
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            let _ = writeln!(s, "{}", cells.join(","));
        }
        s
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let k = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[k]).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    AtMost,
    AtLeast,
}

/// One verdict: `measured` compared with `threshold`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub stage: String,
    pub name: String,
    pub measured: f64,
    pub relation: Relation,
    pub threshold: f64,
    pub passed: bool,
    /// Table the measured value derives from.
    pub table: String,
}

impl Check {
    pub fn at_most(stage: &str, name: &str, measured: f64, threshold: f64, table: &str) -> Self {
        Check {
            stage: stage.into(),
            name: name.into(),
            measured,
            relation: Relation::AtMost,
            threshold,
            passed: measured <= threshold,
            table: table.into(),
        }
    }

    pub fn at_least(stage: &str, name: &str, measured: f64, threshold: f64, table: &str) -> Self {
        Check {
            stage: stage.into(),
            name: name.into(),
            measured,
            relation: Relation::AtLeast,
            threshold,
            passed: measured >= threshold,
            table: table.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageFailure {
    pub stage: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fingerprint {
    pub crate_version: String,
    pub seed: u64,
    pub model: String,
    pub x_grid: String,
    pub y_grid: String,
    pub dt: f64,
    pub paths: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub fingerprint: Fingerprint,
    pub config: ExperimentConfig,
    pub tables: Vec<Table>,
    pub checks: Vec<Check>,
    pub failures: Vec<StageFailure>,
}

impl Report {
    pub fn new(config: &ExperimentConfig) -> Self {
        Report {
            fingerprint: Fingerprint {
                crate_version: env!("CARGO_PKG_VERSION").into(),
                seed: config.seed,
                model: config.model.clone(),
                x_grid: config.x_grid.clone(),
                y_grid: config.y_grid.clone(),
                dt: config.dt,
                paths: config.paths,
            },
            config: config.clone(),
            tables: Vec::new(),
            checks: Vec::new(),
            failures: Vec::new(),
        }
    }

    /// True when every check passed and no stage failed.
    pub fn passed(&self) -> bool {
        self.failures.is_empty() && self.checks.iter().all(|c| c.passed)
    }

    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.name == name)
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    fn absorb(&mut self, other: Report) {
        self.tables.extend(other.tables);
        self.checks.extend(other.checks);
        self.failures.extend(other.failures);
    }

    fn fail(&mut self, stage: &str, err: &Error) {
        self.failures.push(StageFailure { stage: stage.into(), message: err.to_string() });
    }

    /// Writes `report.json` and one `<table>.csv` per table into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("report.json"), serde_json::to_string_pretty(self)?)?;
        for t in &self.tables {
            std::fs::write(dir.join(format!("{}.csv", t.name)), t.to_csv())?;
        }
        Ok(())
    }

    /// One line per check.
    pub fn summary(&self) -> String {
        let mut s = String::new();
        for c in &self.checks {
            let rel = match c.relation {
                Relation::AtMost => "<=",
                Relation::AtLeast => ">=",
            };
            let _ = writeln!(
                s,
                "{} {}/{}: {:.6} {rel} {:.6}",
                if c.passed { "PASS" } else { "FAIL" },
                c.stage,
                c.name,
                c.measured,
                c.threshold
            );
        }
        for f in &self.failures {
            let _ = writeln!(s, "FAIL {}: {}", f.stage, f.message);
        }
        s
    }

    fn flush(&self) {
        if let Some(dir) = &self.config.out_dir {
            // best effort: the stage error is what gets reported
            let _ = self.write(dir);
        }
    }
}

/// Trend checks on a gap column ordered by decreasing ε.
fn trend_checks(stage: &str, prefix: &str, gaps: &[f64], reduction: f64, table: &str) -> Vec<Check> {
    let first = gaps[0];
    let last = gaps[gaps.len() - 1];
    let inversions = gaps.windows(2).filter(|w| w[1] > w[0]).count();
    let worst = gaps.windows(2).map(|w| if w[0] > 0.0 { w[1] / w[0] } else { f64::INFINITY }).fold(0.0, f64::max);
    vec![
        Check::at_most(stage, &format!("{prefix}_reduction"), last, reduction * first, table),
        Check::at_most(stage, &format!("{prefix}_inversions"), inversions as f64, 1.0, table),
        Check::at_most(stage, &format!("{prefix}_worst_step_ratio"), worst, 1.1, table),
    ]
}

fn effective_problem(cfg: &ExperimentConfig, spec: &ProblemSpec, beta_hat: f64) -> Result<EffectiveProblem> {
    match cfg.effective_source.as_str() {
        "closed" => EffectiveProblem::closed_form(spec),
        _ => {
            let gx = cfg.x_grid()?;
            let n = cfg.effective_nodes.max(2);
            let nodes: Vec<f64> = (0..n).map(|i| gx.lo + (gx.hi - gx.lo) * i as f64 / (n - 1) as f64).collect();
            let source = MeasureSource::Simulate {
                config: cfg.measure_config(beta_hat),
                beta_hat,
                seed: cfg.seed,
                v_points: 21,
            };
            build_effective(spec, &nodes, &source)
        }
    }
}

fn audit(cfg: &ExperimentConfig, spec: &ProblemSpec) -> Result<AssumptionReport> {
    validate_assumptions(spec, cfg.audit_samples, cfg.audit_radius, cfg.seed)
}

fn require_assumptions(cfg: &ExperimentConfig, spec: &ProblemSpec) -> Result<AssumptionReport> {
    let a = audit(cfg, spec)?;
    if !a.passed() {
        let failed: Vec<&str> = a.verdicts.iter().filter(|v| !v.passed).map(|v| v.assumption.as_str()).collect();
        return Err(Error::Configuration(format!("model fails assumptions {}", failed.join(", "))));
    }
    Ok(a)
}

/// Value-function sweep: sup over the region of interest of
/// `|u^ε(t, x, y_ref) - ū(t, x)|` for each ε and each `y_ref`.
pub fn run_sweep(config: &ExperimentConfig) -> Result<Report> {
    config.validate()?;
    let mut report = Report::new(config);
    match sweep_into(config, &mut report) {
        Ok(()) => Ok(report),
        Err((stage, e)) => {
            report.flush();
            Err(e.in_stage(stage))
        }
    }
}

type StageResult = std::result::Result<(), (&'static str, Error)>;

fn sweep_into(cfg: &ExperimentConfig, report: &mut Report) -> StageResult {
    let spec = cfg.spec().map_err(|e| ("sweep/model", e))?;
    let audit = require_assumptions(cfg, &spec).map_err(|e| ("sweep/assumptions", e))?;
    let effp = effective_problem(cfg, &spec, audit.beta_hat).map_err(|e| ("sweep/effective", e))?;
    let gx = cfg.x_grid().map_err(|e| ("sweep/grid", e))?;
    let gy = cfg.y_grid().map_err(|e| ("sweep/grid", e))?;

    let times = cfg.roi_times();
    let taus: Vec<f64> = times.iter().map(|t| spec.horizon - t).collect();
    let theta = max_slow_drift(&spec, &gx, &gy) + 1.0;
    let scheme = SchemeConfig { lf_theta: Some(theta), dt: cfg.hjb_dt, output_taus: taus.clone(), ..Default::default() };

    let ubar = solve_effective_hjb(&effp, &gx, &scheme).map_err(|e| ("sweep/effective-hjb", e))?;
    let grid_tol = effective_refinement_gap(&effp, &gx, &scheme, cfg.roi_radius, &taus)
        .map_err(|e| ("sweep/refinement", e))?;
    let mut tol = Table::new("sweep_grid", &["roi_radius", "refinement_gap", "lf_theta", "effective_dt"]);
    tol.rows.push(vec![cfg.roi_radius, grid_tol, theta, ubar.dt]);
    report.tables.push(tol);

    let mut cols = vec!["epsilon".to_string(), "two_scale_dt".to_string()];
    cols.extend(cfg.y_refs.iter().map(|y| format!("gap_y{y}")));
    let mut table = Table { name: "sweep".into(), columns: cols, rows: Vec::new() };

    let rows: Vec<Result<Vec<f64>>> = cfg
        .eps_list
        .par_iter()
        .map(|&eps| {
            let u = solve_two_scale_hjb(&spec, eps, &gx, &gy, &scheme)?;
            let mut row = vec![eps, u.dt];
            for &y in &cfg.y_refs {
                row.push(roi_gap(&u, &ubar, &taus, y, cfg.roi_radius));
            }
            Ok(row)
        })
        .collect();
    for r in rows {
        match r {
            Ok(row) => table.rows.push(row),
            Err(e) => {
                report.tables.push(table);
                return Err(("sweep/two-scale-hjb", e));
            }
        }
    }

    let mut checks = Vec::new();
    let mut last_gaps = Vec::new();
    for (k, y) in cfg.y_refs.iter().enumerate() {
        let gaps: Vec<f64> = table.rows.iter().map(|r| r[2 + k]).collect();
        last_gaps.push(*gaps.last().expect("nonempty eps_list"));
        checks.extend(trend_checks("sweep", &format!("gap_y{y}"), &gaps, 0.5, "sweep"));
    }
    if last_gaps.len() >= 2 {
        let spread = last_gaps.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
            - last_gaps.iter().cloned().fold(f64::INFINITY, f64::min);
        checks.push(Check::at_most("sweep", "y_ref_agreement", spread, grid_tol + 0.05, "sweep"));
    }
    report.tables.push(table);
    report.checks.extend(checks);
    Ok(())
}

fn roi_gap(u: &crate::hjb::TwoScaleSurface, ubar: &ValueSurface, taus: &[f64], y: f64, radius: f64) -> f64 {
    let xs = u.grid_x.nodes();
    let mut gap: f64 = 0.0;
    for &tau in taus {
        let slice = u.slice_at_y(u.level(tau), y);
        let eff = &ubar.values[ubar.level(tau)];
        for (i, &x) in xs.iter().enumerate() {
            if x.abs() <= radius + 1e-12 {
                gap = gap.max((slice[i] - eff[i]).abs());
            }
        }
    }
    gap
}

/// Terminal slow states of the slow-fast system and of the averaged system,
/// path `i` of each driven by the same slow noise.
fn terminal_samples(
    cfg: &ExperimentConfig,
    spec: &ProblemSpec,
    effp: &EffectiveProblem,
    eps: Option<f64>,
    coupling: Coupling,
) -> Result<Vec<f64>> {
    let [t0, x0, _] = cfg.start;
    let y0 = cfg.weak_y0;
    let policy = PolicyHandle::constant(cfg.policy_v, &spec.control_set);
    let salt = match eps {
        Some(e) => e.to_bits(),
        None => 1,
    };
    (0..cfg.paths as u64)
        .into_par_iter()
        .map(|i| {
            let mut noise = StableNoise::coupled(spec.alpha1, spec.alpha2, cfg.seed, i, coupling, salt);
            match eps {
                Some(e) => run_slow_fast(spec, e, &policy, x0, y0, t0, cfg.dt, &mut noise, |_, _, _, _, _| {})
                    .map(|(x, _)| x),
                None => run_averaged(effp, &policy, x0, t0, cfg.dt, &mut noise, |_, _, _, _| {}),
            }
        })
        .collect()
}

/// KS distance between the laws of `X^ε_T` and `X̄_T` for each ε.
pub fn run_weak_convergence(config: &ExperimentConfig) -> Result<Report> {
    run_weak_with(config, Coupling::CommonSlowNoise)
}

/// As [`run_weak_convergence`] with an explicit slow-noise coupling.
pub fn run_weak_with(config: &ExperimentConfig, coupling: Coupling) -> Result<Report> {
    config.validate()?;
    let mut report = Report::new(config);
    let stage = |e: Error| e.in_stage("weak");
    let spec = config.spec().map_err(stage)?;
    let audit = require_assumptions(config, &spec).map_err(stage)?;
    let effp = effective_problem(config, &spec, audit.beta_hat).map_err(stage)?;
    let averaged = terminal_samples(config, &spec, &effp, None, coupling).map_err(stage)?;
    let floor = ks_noise_floor(config.paths, config.paths);
    let mut table = Table::new("weak", &["epsilon", "ks", "noise_floor"]);
    for &eps in &config.eps_list {
        match terminal_samples(config, &spec, &effp, Some(eps), coupling) {
            Ok(xs) => table.rows.push(vec![eps, ks_two_sample(&xs, &averaged), floor]),
            Err(e) => {
                report.tables.push(table);
                report.flush();
                return Err(stage(e));
            }
        }
    }
    let ks = table.column("ks").expect("ks column");
    let (first, last) = (ks[0], ks[ks.len() - 1]);
    report.checks.push(Check::at_most("weak", "ks_reduction", last, 0.6 * first, "weak"));
    report.checks.push(Check::at_most("weak", "ks_min_eps", last, 0.05, "weak"));
    report.tables.push(table);
    Ok(report)
}

fn stage_audit(cfg: &ExperimentConfig, spec: &ProblemSpec, report: &mut Report) -> Result<f64> {
    let a = audit(cfg, spec)?;
    let mut t = Table::new(
        "audit",
        &["beta_hat", "lip_b", "lip_c", "lip_l", "grad_y_l", "lip_g", "failed_assumptions"],
    );
    let failed = a.verdicts.iter().filter(|v| !v.passed).count();
    t.rows.push(vec![a.beta_hat, a.lip_b, a.lip_c, a.lip_l, a.grad_y_l, a.lip_g, failed as f64]);
    report.tables.push(t);
    report.checks.push(Check::at_least("audit", "dissipativity_beta", a.beta_hat, f64::MIN_POSITIVE, "audit"));
    report.checks.push(Check::at_most("audit", "failed_assumptions", failed as f64, 0.0, "audit"));
    Ok(a.beta_hat)
}

/// Stationary law `a(x) + Z`, `E e^{iuZ} = e^{-|u|^α₂/α₂}`, of the built-in fast equation.
fn closed_stationary_cos(spec: &ProblemSpec, x: f64) -> Option<f64> {
    match spec.name.as_str() {
        "BM1" | "LIN0" => Some((-1.0 / spec.alpha2).exp() * (0.5 * x.sin()).cos()),
        _ => None,
    }
}

fn stage_ergodic(cfg: &ExperimentConfig, spec: &ProblemSpec, beta: f64, report: &mut Report) -> Result<()> {
    let mcfg = cfg.measure_config(beta);
    let x = 0.0;
    let m = estimate_invariant_measure(spec, x, &mcfg, beta, cfg.seed)?;
    let ecos = integrate(&m, f64::cos)?;
    let mut t = Table::new("ergodic_measure", &["x", "n", "mean", "median", "iqr", "e_cos", "e_cos_stderr", "e_cos_closed"]);
    let closed = closed_stationary_cos(spec, x);
    t.rows.push(vec![x, m.len() as f64, m.mean().mean, m.median(), m.iqr(), ecos.mean, ecos.stderr, closed.unwrap_or(f64::NAN)]);
    report.tables.push(t);
    if let Some(c) = closed {
        report.checks.push(Check::at_most(
            "ergodic",
            "stationary_cos_error",
            (ecos.mean - c).abs(),
            4.0 * ecos.stderr,
            "ergodic_measure",
        ));
    }

    let times: Vec<f64> = (1..=8).map(|k| 0.5 * k as f64).collect();
    let decay = ergodicity_decay(spec, x, f64::sin, 3.0, &times, cfg.decay_paths, &mcfg, beta, cfg.seed)?;
    let mut t = Table::new("ergodic_decay", &["s", "error", "stderr"]);
    for p in &decay.curve {
        t.rows.push(vec![p.s, p.error, p.stderr]);
    }
    report.tables.push(t);
    let slope = decay.fitted_rate.map_or(f64::NAN, |r| -r);
    let mut t = Table::new("ergodic_decay_fit", &["log_error_slope", "resolved_points"]);
    t.rows.push(vec![slope, decay.resolved_points as f64]);
    report.tables.push(t);
    report.checks.push(Check::at_most("ergodic", "decay_log_slope", slope, -0.5, "ergodic_decay_fit"));

    // synchronous coupling from y = ±1: |ΔY(s)| = 2e^{-s} for the built-ins
    let mut worst_increase: f64 = 0.0;
    let mut worst_rel: f64 = 0.0;
    let mut t = Table::new("ergodic_contraction", &["path", "max_increase", "max_rel_error_vs_2exp"]);
    for path in 0..20u64 {
        let mut noise = StableNoise::for_path(spec.alpha1, spec.alpha2, cfg.seed, path)
            .with_fast_stream(rng::tag::PATH_AVERAGE, path);
        let d = coupled_frozen_contraction(spec, x, 1.0, x, -1.0, 4.0, 0.01, &mut noise)?;
        let mut inc: f64 = 0.0;
        let mut rel: f64 = 0.0;
        for w in d.windows(2) {
            inc = inc.max(w[1].1.sqrt() - w[0].1.sqrt());
        }
        for &(s, d2) in &d {
            let exact = 2.0 * (-s).exp();
            rel = rel.max((d2.sqrt() - exact).abs() / exact);
        }
        worst_increase = worst_increase.max(inc);
        worst_rel = worst_rel.max(rel);
        t.rows.push(vec![path as f64, inc, rel]);
    }
    report.tables.push(t);
    report.checks.push(Check::at_most("ergodic", "contraction_max_increase", worst_increase, 0.0, "ergodic_contraction"));
    if closed.is_some() {
        report.checks.push(Check::at_most("ergodic", "contraction_rel_error", worst_rel, 0.05, "ergodic_contraction"));
    }

    let ly = lyapunov_check(spec, x, &[5.0, 10.0], &QuadGrid::default())?;
    let mut t = Table::new("ergodic_lyapunov", &["y", "neg_generator_w", "refinement_change"]);
    for r in &ly.rows {
        t.rows.push(vec![r.y, r.value, r.refinement_change]);
    }
    let min_value = ly.rows.iter().map(|r| r.value).fold(f64::INFINITY, f64::min);
    let max_change = ly.rows.iter().map(|r| r.refinement_change).fold(0.0, f64::max);
    report.tables.push(t);
    report.checks.push(Check::at_least("ergodic", "lyapunov_min_value", min_value, f64::MIN_POSITIVE, "ergodic_lyapunov"));
    report.checks.push(Check::at_most("ergodic", "lyapunov_refinement", max_change, 0.01, "ergodic_lyapunov"));
    Ok(())
}

fn stage_effective(
    cfg: &ExperimentConfig,
    spec: &ProblemSpec,
    effp: &EffectiveProblem,
    beta: f64,
    report: &mut Report,
) -> Result<()> {
    // averaged coefficients from measures at a few nodes, against the problem in use
    let nodes = [-1.0, 0.0, 1.0];
    let source = MeasureSource::Simulate { config: cfg.measure_config(beta), beta_hat: beta, seed: cfg.seed, v_points: 5 };
    let tab = build_effective(spec, &nodes, &source)?;
    let t_ref = tab.tabulated().expect("simulated source tabulates");
    let mut t = Table::new("effective_coefficients", &["x", "g_bar_mc", "g_bar_stderr", "g_bar_ref", "b_bar_mc_v0", "b_bar_ref_v0"]);
    let mut worst_g: f64 = 0.0;
    for (k, &x) in nodes.iter().enumerate() {
        let g = t_ref.g_bar[k];
        let (gr, b, br) = (effp.g_bar(x), tab.b_bar(x, 0.0), effp.b_bar(x, 0.0));
        worst_g = worst_g.max((g.mean - gr).abs() / (4.0 * g.stderr).max(1e-300));
        t.rows.push(vec![x, g.mean, g.stderr, gr, b, br]);
    }
    report.tables.push(t);
    report.checks.push(Check::at_most("effective", "g_bar_error_in_4_stderr", worst_g, 1.0, "effective_coefficients"));

    let h_ref = effp.h_bar(0.0, 0.0);
    let eps_cell = cfg.corrector_eps;
    let mut t = Table::new("effective_corrector", &["y", "minus_eps_w", "stderr", "h_bar", "cauchy_w", "cauchy_stderr", "g_bar"]);
    let mut corr_excess = f64::NEG_INFINITY;
    let mut cauchy_excess = f64::NEG_INFINITY;
    for y in [0.0, 3.0] {
        let w = approximate_corrector(spec, 0.0, 0.0, eps_cell, y, cfg.corrector_paths, 8.0 / eps_cell, 0.01, cfg.seed)?;
        let (m, s) = (-eps_cell * w.mean, eps_cell * w.stderr);
        corr_excess = corr_excess.max((m - h_ref).abs() - (0.05 + 2.0 * s));
        let c = cauchy_cell(spec, 0.0, 8.0, y, cfg.cauchy_paths, 0.01, cfg.seed)?;
        cauchy_excess = cauchy_excess.max((c.mean - effp.g_bar(0.0)).abs() - (0.02 + 4.0 * c.stderr));
        t.rows.push(vec![y, m, s, h_ref, c.mean, c.stderr, effp.g_bar(0.0)]);
    }
    report.tables.push(t);
    report.checks.push(Check::at_most("effective", "corrector_excess", corr_excess, 0.0, "effective_corrector"));
    report.checks.push(Check::at_most("effective", "cauchy_excess", cauchy_excess, 0.0, "effective_corrector"));
    Ok(())
}

fn stage_moments(cfg: &ExperimentConfig, spec: &ProblemSpec, report: &mut Report) -> Result<()> {
    let [_, x0, y0] = cfg.start;
    let policy = PolicyHandle::constant(cfg.policy_v, &spec.control_set);
    let mut t = Table::new("moments", &["epsilon", "sup_moment", "stderr"]);
    for &eps in &cfg.eps_list {
        let e = estimate_sup_moment(spec, eps, &policy, cfg.moment_p, x0, y0, cfg.moment_paths, cfg.dt, cfg.seed)?;
        t.rows.push(vec![eps, e.mean, e.stderr]);
    }
    let col = t.column("sup_moment").expect("column");
    let ratio = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max) / col.iter().cloned().fold(f64::INFINITY, f64::min);
    report.tables.push(t);
    report.checks.push(Check::at_most("moments", "max_min_ratio", ratio, 2.0, "moments"));
    Ok(())
}

fn stage_cost(cfg: &ExperimentConfig, spec: &ProblemSpec, effp: &EffectiveProblem, report: &mut Report) -> Result<()> {
    let [t0, x0, y0] = cfg.start;
    let policy = PolicyHandle::constant(cfg.policy_v, &spec.control_set);
    let cc = CostConfig::new(cfg.paths, cfg.dt, cfg.seed);
    let rows = cost_convergence_table(spec, effp, &policy, &cfg.eps_list, (t0, x0, y0), &cc)?;
    let mut t = Table::new("cost", &["epsilon", "j_eps", "j_bar", "gap", "stderr"]);
    for r in &rows {
        t.rows.push(vec![r.epsilon, r.j_eps, r.j_bar, r.gap, r.stderr]);
    }
    let (first, last) = (rows[0], rows[rows.len() - 1]);
    report.tables.push(t);
    report.checks.push(Check::at_most("cost", "gap_reduction", last.gap, 0.5 * first.gap, "cost"));
    report.checks.push(Check::at_least("cost", "first_gap_resolved", first.gap, 2.0 * first.stderr, "cost"));
    Ok(())
}

/// Every stage in sequence; a failing stage is recorded and the run continues.
pub fn run_all(config: &ExperimentConfig) -> Result<Report> {
    config.validate()?;
    let mut report = Report::new(config);
    let spec = config.spec()?;

    let beta = match stage_audit(config, &spec, &mut report) {
        Ok(b) => Some(b).filter(|b| *b > 0.0),
        Err(e) => {
            report.fail("audit", &e);
            None
        }
    };
    let Some(beta) = beta else {
        report.failures.push(StageFailure {
            stage: "audit".into(),
            message: "no positive dissipativity constant; measure-based stages skipped".into(),
        });
        report.flush();
        return Ok(report);
    };
    if let Err(e) = stage_ergodic(config, &spec, beta, &mut report) {
        report.fail("ergodic", &e);
    }
    let effp = match effective_problem(config, &spec, beta) {
        Ok(p) => Some(p),
        Err(e) => {
            report.fail("effective", &e);
            None
        }
    };
    if let Some(effp) = &effp {
        if let Err(e) = stage_effective(config, &spec, effp, beta, &mut report) {
            report.fail("effective", &e);
        }
    }
    if let Err(e) = stage_moments(config, &spec, &mut report) {
        report.fail("moments", &e);
    }
    if let Some(effp) = &effp {
        if let Err(e) = stage_cost(config, &spec, effp, &mut report) {
            report.fail("cost", &e);
        }
    }
    if config.two_scale {
        match run_sweep(config) {
            Ok(r) => report.absorb(r),
            Err(e) => report.fail("sweep", &e),
        }
    }
    match run_weak_convergence(config) {
        Ok(r) => report.absorb(r),
        Err(e) => report.fail("weak", &e),
    }
    report.flush();
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid() {
        ExperimentConfig::default().validate().unwrap();
    }

    #[test]
    fn eps_list_rules() {
        let mut c = ExperimentConfig { eps_list: vec![0.1, 0.5], ..Default::default() };
        assert!(matches!(c.validate(), Err(Error::Configuration(_))));
        c.eps_list.clear();
        assert!(matches!(c.validate(), Err(Error::Configuration(_))));
        c.eps_list = vec![0.5, 0.01];
        assert!(c.validate().is_err());
        c.eps_list = vec![0.5, 0.5];
        assert!(c.validate().is_err());
    }

    #[test]
    fn roi_margin_enforced() {
        let c = ExperimentConfig { x_grid: "-3:3:61".into(), ..Default::default() };
        assert!(c.validate().is_err());
    }

    #[test]
    fn json_is_flat_and_strict() {
        let c = ExperimentConfig::from_json(r#"{"model": "LIN0", "eps_list": [0.5, 0.1], "paths": 10}"#).unwrap();
        assert_eq!(c.model, "LIN0");
        assert_eq!(c.paths, 10);
        assert_eq!(c.dt, ExperimentConfig::default().dt);
        assert!(ExperimentConfig::from_json(r#"{"modle": "BM1"}"#).is_err());
    }

    #[test]
    fn trend_checks_allow_one_small_inversion() {
        let ok = trend_checks("s", "g", &[1.0, 0.8, 0.85, 0.4], 0.5, "t");
        assert!(ok.iter().all(|c| c.passed), "{ok:?}");
        let two = trend_checks("s", "g", &[1.0, 1.05, 0.5, 0.52, 0.3], 0.5, "t");
        assert!(!two[1].passed);
        let big = trend_checks("s", "g", &[1.0, 0.5, 0.6, 0.4], 0.5, "t");
        assert!(!big[2].passed);
    }

    #[test]
    fn csv_round_trips_values() {
        let mut t = Table::new("x", &["a", "b"]);
        t.rows.push(vec![0.1, 1.0 / 3.0]);
        let csv = t.to_csv();
        let line = csv.lines().nth(1).unwrap();
        let vals: Vec<f64> = line.split(',').map(|v| v.parse().unwrap()).collect();
        assert_eq!(vals, t.rows[0]);
    }
}
