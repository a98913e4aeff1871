//! End-to-end acceptance run: one PASS/FAIL line per criterion.
//!
//! Criteria backed by the experiment report share a single `run_all` with the
//! default configuration; the remaining ones are computed here directly.

use std::process::ExitCode;
use std::time::Instant;

use mjc::effective::{build_effective, EffectiveProblem, MeasureSource};
use mjc::ergodic::{integrate, MeasureConfig};
use mjc::harness::{run_all, ExperimentConfig, Report};
use mjc::hjb::{
    frac_laplacian_apply, localized_operators, solve_effective_hjb, Extension, Grid1, GridFunction, SchemeConfig,
};
use mjc::model::{builtin_benchmark, validate_assumptions, ControlSet};
use mjc::rng::substream;
use mjc::stable::{empirical_char_fn, StableLaw};

struct Line {
    id: usize,
    title: &'static str,
    passed: bool,
    detail: String,
    secs: f64,
}

fn line(id: usize, title: &'static str, passed: bool, detail: String, secs: f64) -> Line {
    Line { id, title, passed, detail, secs }
}

fn max_err_on(grid: &Grid1, values: &[f64], radius: f64, exact: impl Fn(f64) -> f64) -> f64 {
    grid.nodes()
        .iter()
        .zip(values)
        .filter(|(x, _)| x.abs() <= radius)
        .map(|(&x, &v)| (v - exact(x)).abs())
        .fold(0.0, f64::max)
}

/// Criterion from named report checks; every check must exist and pass.
fn from_checks(report: &Report, id: usize, title: &'static str, names: &[&str], secs: f64) -> Line {
    let mut passed = true;
    let mut parts = Vec::new();
    for name in names {
        match report.check(name) {
            Some(c) => {
                passed &= c.passed;
                parts.push(format!("{name} = {:.4} (limit {:.4})", c.measured, c.threshold));
            }
            None => {
                passed = false;
                parts.push(format!("{name} missing"));
            }
        }
    }
    for f in &report.failures {
        parts.push(format!("stage {} failed: {}", f.stage, f.message));
    }
    line(id, title, passed, parts.join(", "), secs)
}

fn c1_stable() -> Line {
    let t = Instant::now();
    let law = StableLaw::standard(1.5).unwrap();
    let mut rng = substream(20_240_601, 1, 0);
    let samples: Vec<f64> = (0..1_000_000).map(|_| law.sample(&mut rng)).collect();
    let cf = empirical_char_fn(&samples, 1.0).unwrap();
    let err = (cf.re - (-1.0_f64).exp()).abs();
    let secs = t.elapsed().as_secs_f64();
    let ok = err <= 3.0 * cf.stderr && secs < 10.0;
    line(1, "stable char fn at u = 1", ok, format!("|re - e^-1| = {err:.2e}, 3 stderr = {:.2e}", 3.0 * cf.stderr), secs)
}

fn c6_effective() -> Line {
    let t = Instant::now();
    let mut ok = true;
    let mut parts = Vec::new();
    let bm1 = builtin_benchmark("BM1").unwrap();
    let beta = validate_assumptions(&bm1, 2000, 5.0, 1).unwrap().beta_hat;
    let source =
        MeasureSource::Simulate { config: MeasureConfig::for_beta(beta, 100_000, 0.01), beta_hat: beta, seed: 11, v_points: 5 };
    let tab_effp = build_effective(&bm1, &[0.0], &source).unwrap();
    let tab = tab_effp.tabulated().unwrap();
    let closed = EffectiveProblem::closed_form(&bm1).unwrap();
    let g = tab.g_bar[0];
    let g_ok = (g.mean - closed.g_bar(0.0)).abs() <= 4.0 * g.stderr;
    parts.push(format!("g_bar(0) = {:.5} ± {:.5} vs {:.5}", g.mean, g.stderr, closed.g_bar(0.0)));
    // b̄(0, v) = v + E sin Y, E sin Y = 0 at x = 0
    let sin = integrate(&tab.measures[0], f64::sin).unwrap();
    let b_err = tab.v_grid.iter().zip(&tab.b_bar[0]).map(|(v, b)| (b - v).abs()).fold(0.0, f64::max);
    let b_ok = b_err <= 4.0 * sin.stderr;
    parts.push(format!("max |b_bar(0,v) - v| = {b_err:.2e} (4 stderr {:.2e})", 4.0 * sin.stderr));
    ok &= g_ok && b_ok;

    let lin0 = builtin_benchmark("LIN0").unwrap();
    let nodes = [-1.0, 0.0, 1.5];
    let lin_tab = build_effective(&lin0, &nodes, &source).unwrap();
    let lt = lin_tab.tabulated().unwrap();
    let mut lin_err: f64 = 0.0;
    for (k, &x) in nodes.iter().enumerate() {
        for (j, &v) in lt.v_grid.iter().enumerate() {
            lin_err = lin_err.max((lt.b_bar[k][j] - (-x + v)).abs());
        }
    }
    ok &= lin_err <= 1e-12;
    parts.push(format!("LIN0 max |b_bar - b| = {lin_err:.1e}"));
    line(6, "effective coefficients", ok, parts.join(", "), t.elapsed().as_secs_f64())
}

fn c9_stencil() -> Line {
    let t = Instant::now();
    let grid = Grid1::new(-50.0, 50.0, 4001).unwrap();
    let mut worst: f64 = 0.0;
    for k in [0.5_f64, 1.0, 2.0] {
        let f = GridFunction::from_fn(grid, Extension::Constant, |x| (k * x).cos());
        let af = frac_laplacian_apply(&f, 1.5).unwrap();
        let amp = k.powf(1.5);
        worst = worst.max(max_err_on(&grid, &af.values, std::f64::consts::PI, |x| -amp * (k * x).cos()) / amp);
    }
    let f = GridFunction::from_fn(grid, Extension::Constant, f64::cos);
    let p: Vec<f64> = grid.nodes().iter().map(|x| -x.sin()).collect();
    let (near, far) = localized_operators(&f, 1.5, 1.0, &p).unwrap();
    let full = frac_laplacian_apply(&f, 1.5).unwrap();
    let split = (0..grid.n).map(|i| (near.values[i] + far.values[i] - full.values[i]).abs()).fold(0.0, f64::max);
    let ok = worst <= 0.03 && split <= 1e-10;
    line(9, "fractional Laplacian stencil", ok, format!("symbol error {worst:.4}, split gap {split:.1e}"), t.elapsed().as_secs_f64())
}

fn uncontrolled(lambda: f64, l0: f64, g: impl Fn(f64) -> f64 + Send + Sync + 'static) -> EffectiveProblem {
    EffectiveProblem::custom("uncontrolled", 1.5, lambda, 1.0, ControlSet::Singleton { value: 0.0 }, |_, _| 0.0, move |_, _| l0, g)
}

fn c10_hjb() -> Line {
    let t = Instant::now();
    let grid = Grid1::new(-50.25, 50.25, 2011).unwrap();
    let sch = SchemeConfig { lf_theta: Some(0.0), ..Default::default() };
    let u = solve_effective_hjb(&uncontrolled(0.0, 0.0, f64::cos), &grid, &sch).unwrap();
    let decay = (-1.0_f64).exp();
    let eig = max_err_on(&grid, &u.values[u.level(1.0)], std::f64::consts::PI, |x| decay * x.cos()) / decay;

    let small = Grid1::new(-3.0, 3.0, 61).unwrap();
    let d = solve_effective_hjb(&uncontrolled(1.0, 0.0, |_| 2.0), &small, &SchemeConfig::default()).unwrap();
    let disc = (d.value(1.0, 0.0) - 2.0 * decay).abs() / d.dt;
    let r = solve_effective_hjb(&uncontrolled(1.0, 1.5, |_| 0.0), &small, &SchemeConfig::default()).unwrap();
    let run = (r.value(1.0, 0.0) + 1.5 * (1.0 - decay)).abs() / r.dt;

    let bm1 = builtin_benchmark("BM1").unwrap();
    let shifted = |s: f64| {
        EffectiveProblem::custom(
            "shifted",
            1.5,
            1.0,
            1.0,
            bm1.control_set.clone(),
            |x, v| -x + v,
            |x, v| (1.0 + x * x).sqrt() + 0.5 * v * v,
            move |x| x.tanh() + s * (-x * x).exp(),
        )
    };
    let g4 = Grid1::new(-4.0, 4.0, 41).unwrap();
    let lo = solve_effective_hjb(&shifted(0.0), &g4, &SchemeConfig::default()).unwrap();
    let hi = solve_effective_hjb(&shifted(0.5), &g4, &SchemeConfig::default()).unwrap();
    let ordered = lo.values.iter().zip(&hi.values).all(|(a, b)| a.iter().zip(b).all(|(x, y)| x <= y));

    let ok = eig <= 0.03 && disc <= 1.0 && run <= 1.0 && ordered;
    let detail = format!(
        "eigenfunction error {eig:.4}, discount error {disc:.2} dt, running-cost error {run:.2} dt, ordered {ordered}"
    );
    line(10, "effective HJB solver", ok, detail, t.elapsed().as_secs_f64())
}

fn c14_weak(report: &Report, secs: f64) -> Line {
    let mut l = from_checks(report, 14, "weak convergence", &["ks_reduction", "ks_min_eps"], secs);
    if let Some(ks) = report.table("weak").and_then(|t| t.column("ks")) {
        let monotone = ks.windows(2).all(|w| w[1] <= w[0]);
        l.passed &= monotone;
        let col: Vec<String> = ks.iter().map(|k| format!("{k:.4}")).collect();
        l.detail.push_str(&format!(", ks column [{}] decreasing: {monotone}", col.join(", ")));
    } else {
        l.passed = false;
    }
    l
}

fn main() -> ExitCode {
    let mut lines = vec![c1_stable()];

    let config = ExperimentConfig::default();
    let t = Instant::now();
    let report = run_all(&config).expect("default configuration is valid");
    let shared = t.elapsed().as_secs_f64();
    let r = &report;
    lines.push(from_checks(r, 2, "stationary law of the frozen equation", &["stationary_cos_error"], shared));
    lines.push(from_checks(r, 3, "exponential ergodicity", &["decay_log_slope"], shared));
    lines.push(from_checks(r, 4, "synchronous-coupling contraction", &["contraction_max_increase", "contraction_rel_error"], shared));
    lines.push(from_checks(r, 5, "Lyapunov function", &["lyapunov_min_value", "lyapunov_refinement"], shared));
    let mut c6 = c6_effective();
    let harness_g = from_checks(r, 6, "", &["g_bar_error_in_4_stderr"], 0.0);
    c6.passed &= harness_g.passed;
    c6.detail.push_str(&format!(", report {}", harness_g.detail));
    lines.push(c6);
    lines.push(from_checks(r, 7, "approximate corrector", &["corrector_excess"], shared));
    lines.push(from_checks(r, 8, "Cauchy cell problem", &["cauchy_excess"], shared));
    lines.push(c9_stencil());
    lines.push(c10_hjb());
    lines.push(from_checks(r, 11, "uniform moment bound", &["max_min_ratio"], shared));
    lines.push(from_checks(r, 12, "cost convergence", &["gap_reduction", "first_gap_resolved"], shared));
    lines.push(from_checks(
        r,
        13,
        "value convergence sweep",
        &[
            "gap_y0_reduction",
            "gap_y0_inversions",
            "gap_y0_worst_step_ratio",
            "gap_y2_reduction",
            "gap_y2_inversions",
            "gap_y2_worst_step_ratio",
            "y_ref_agreement",
        ],
        shared,
    ));
    lines.push(c14_weak(r, shared));

    let t = Instant::now();
    let again = run_all(&config).expect("default configuration is valid");
    let same = serde_json::to_string(&report).unwrap() == serde_json::to_string(&again).unwrap();
    lines.push(line(15, "reproducibility", same, format!("rerun report identical: {same}"), t.elapsed().as_secs_f64()));

    let mut all = true;
    for l in &lines {
        all &= l.passed;
        println!(
            "{} {:>2} {}: {} [{:.1} s]",
            if l.passed { "PASS" } else { "FAIL" },
            l.id,
            l.title,
            l.detail,
            l.secs
        );
    }
    println!("shared experiment run: {shared:.1} s");
    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
