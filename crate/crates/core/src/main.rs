use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use mjc::effective::{build_effective, EffectiveProblem, MeasureSource};
use mjc::ergodic::{estimate_invariant_measure, MeasureConfig};
use mjc::harness::{run_all, run_sweep, run_weak_convergence, ExperimentConfig, Report};
use mjc::hjb::{
    extract_policy, max_slow_drift, solve_effective_hjb, solve_two_scale_hjb, surface_rows, two_scale_rows, Grid1,
    SchemeConfig, ValueSurface,
};
use mjc::model::{builtin_benchmark, validate_assumptions, ProblemSpec};
use mjc::sde::{simulate_slow_fast, PolicyHandle, StableNoise};
use mjc::stable::empirical_char_fn;
use mjc::value::{estimate_cost, estimate_effective_cost, CostEstimate};

#[derive(Parser)]
#[command(name = "mjc", version, about = "Multiscale controlled jump diffusions driven by stable noise")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate slow-fast trajectories (CSV: path_id,time,x,y).
    Simulate(Opts),
    /// Sample the invariant measure of the frozen fast equation.
    Ergodic(Opts),
    /// Tabulate the averaged coefficients (JSON).
    Effective(Opts),
    /// Solve the effective (no --epsilon) or two-scale HJB equation (CSV).
    SolveHjb(Opts),
    /// Monte Carlo cost of a policy.
    Value(Opts),
    /// Value-function sweep over the epsilon list.
    Sweep(Opts),
    /// Weak convergence of the slow component.
    Weak(Opts),
    /// Every stage with a combined report.
    All(Opts),
}

#[derive(Args, Clone, Default)]
struct Opts {
    /// Flat JSON experiment configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    paths: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output file (single-table commands) or directory (sweep, weak, all).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Frozen slow state for `ergodic`.
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    x: f64,
    #[arg(long = "burn-in")]
    burn_in: Option<f64>,
    /// Number of retained samples for `ergodic`.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    thin: Option<f64>,
    /// Effective-coefficient nodes `a:b:n`.
    #[arg(long = "x-grid", default_value = "-2:2:21", allow_hyphen_values = true)]
    x_grid: String,
    /// `mc` or `closed`.
    #[arg(long, default_value = "closed")]
    source: String,
    #[arg(long, allow_hyphen_values = true)]
    xdomain: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    ydomain: Option<String>,
    /// Horizon override.
    #[arg(long = "T")]
    horizon: Option<f64>,
    /// `const:<v>` or `hjb:<csv from solve-hjb>`.
    #[arg(long, default_value = "const:0")]
    policy: String,
    /// Start state `t,x,y`.
    #[arg(long, default_value = "0,0,0", allow_hyphen_values = true)]
    start: String,
    /// Disable the two-scale solve in `all`.
    #[arg(long = "no-two-scale")]
    no_two_scale: bool,
}

impl Opts {
    fn experiment(&self) -> anyhow::Result<ExperimentConfig> {
        let mut c = match &self.config {
            Some(p) => ExperimentConfig::load(p).with_context(|| format!("reading {}", p.display()))?,
            None => ExperimentConfig::default(),
        };
        if let Some(m) = &self.model {
            c.model = m.clone();
        }
        if let Some(e) = self.epsilon {
            c.eps_list = vec![e];
        }
        if let Some(dt) = self.dt {
            c.dt = dt;
        }
        if let Some(p) = self.paths {
            c.paths = p;
        }
        if let Some(s) = self.seed {
            c.seed = s;
        }
        if let Some(o) = &self.out {
            c.out_dir = Some(o.display().to_string());
        }
        if let Some(x) = &self.xdomain {
            c.x_grid = x.clone();
        }
        if let Some(y) = &self.ydomain {
            c.y_grid = y.clone();
        }
        if self.burn_in.is_some() {
            c.burn_in = self.burn_in;
        }
        if self.thin.is_some() {
            c.thinning = self.thin;
        }
        if let Some(n) = self.n {
            c.measure_samples = n;
        }
        if self.no_two_scale {
            c.two_scale = false;
        }
        Ok(c)
    }

    fn spec(&self, cfg: &ExperimentConfig) -> anyhow::Result<ProblemSpec> {
        let mut spec = builtin_benchmark(&cfg.model)?;
        if let Some(t) = self.horizon {
            spec.horizon = t;
        }
        Ok(spec)
    }

    fn start(&self) -> anyhow::Result<(f64, f64, f64)> {
        let v: Vec<f64> =
            self.start.split(',').map(|s| s.trim().parse::<f64>()).collect::<Result<_, _>>().context("--start t,x,y")?;
        match v[..] {
            [t, x, y] => Ok((t, x, y)),
            _ => bail!("--start expects three comma-separated numbers"),
        }
    }
}

fn write_out(out: &Option<PathBuf>, text: &str) -> anyhow::Result<()> {
    match out {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)?;
            }
            std::fs::write(p, text).with_context(|| format!("writing {}", p.display()))
        }
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn beta_hat(spec: &ProblemSpec, cfg: &ExperimentConfig) -> anyhow::Result<f64> {
    let a = validate_assumptions(spec, cfg.audit_samples, cfg.audit_radius, cfg.seed)?;
    if a.beta_hat.is_nan() || a.beta_hat <= 0.0 {
        bail!("fast drift is not dissipative (beta_hat = {})", a.beta_hat);
    }
    Ok(a.beta_hat)
}

fn measure_config(o: &Opts, cfg: &ExperimentConfig, beta: f64) -> MeasureConfig {
    let mut m = MeasureConfig::for_beta(beta, cfg.measure_samples, cfg.measure_dt);
    if let Some(b) = o.burn_in.or(cfg.burn_in) {
        m.burn_in = b;
    }
    if let Some(t) = o.thin.or(cfg.thinning) {
        m.thinning = t;
    }
    m
}

fn cmd_simulate(o: &Opts) -> anyhow::Result<()> {
    let cfg = o.experiment()?;
    let spec = o.spec(&cfg)?;
    let eps = o.epsilon.unwrap_or(cfg.eps_list[0]);
    let dt = o.dt.unwrap_or(cfg.dt.min(eps / 10.0));
    let paths = o.paths.unwrap_or(10);
    let (t0, x0, y0) = o.start()?;
    let policy = constant_policy(&o.policy, &spec)?;
    let mut csv = String::from("path_id,time,x,y\n");
    for i in 0..paths as u64 {
        let mut noise = StableNoise::for_path(spec.alpha1, spec.alpha2, cfg.seed, i);
        let (xs, ys) = simulate_slow_fast(&spec, eps, &policy, x0, y0, t0, dt, &mut noise)?;
        for ((t, x), y) in xs.times.iter().zip(&xs.states).zip(&ys.states) {
            let _ = writeln!(csv, "{i},{t},{x},{y}");
        }
    }
    write_out(&o.out, &csv)
}

fn constant_policy(policy: &str, spec: &ProblemSpec) -> anyhow::Result<PolicyHandle> {
    let v = policy
        .strip_prefix("const:")
        .ok_or_else(|| anyhow!("this command takes --policy const:<v>"))?
        .parse::<f64>()
        .context("--policy const:<v>")?;
    Ok(PolicyHandle::constant(v, &spec.control_set))
}

fn cmd_ergodic(o: &Opts) -> anyhow::Result<()> {
    let cfg = o.experiment()?;
    let spec = o.spec(&cfg)?;
    let beta = beta_hat(&spec, &cfg)?;
    let mcfg = measure_config(o, &cfg, beta);
    let m = estimate_invariant_measure(&spec, o.x, &mcfg, beta, cfg.seed)?;
    let mut csv = String::from("index,y\n");
    for (i, y) in m.samples.iter().enumerate() {
        let _ = writeln!(csv, "{i},{y}");
    }
    let mut cf = BTreeMap::new();
    for u in [0.5, 1.0, 2.0] {
        let e = empirical_char_fn(&m.samples, u)?;
        cf.insert(format!("{u}"), json!({"re": e.re, "im": e.im, "stderr": e.stderr}));
    }
    let mean = m.mean();
    let summary = json!({
        "x": o.x, "n": m.len(), "mean": mean.mean, "mean_stderr": mean.stderr,
        "median": m.median(), "iqr": m.iqr(), "char_fn": cf, "meta": m.meta,
    });
    let summary = serde_json::to_string_pretty(&summary)?;
    match &o.out {
        Some(p) => {
            write_out(&o.out, &csv)?;
            std::fs::write(p.with_extension("summary.json"), &summary)?;
            println!("{summary}");
            Ok(())
        }
        None => {
            println!("{summary}");
            Ok(())
        }
    }
}

fn effective_for(o: &Opts, cfg: &ExperimentConfig, spec: &ProblemSpec, nodes: &[f64]) -> anyhow::Result<EffectiveProblem> {
    Ok(match o.source.as_str() {
        "closed" => EffectiveProblem::closed_form(spec)?,
        "mc" => {
            let beta = beta_hat(spec, cfg)?;
            let source = MeasureSource::Simulate {
                config: measure_config(o, cfg, beta),
                beta_hat: beta,
                seed: cfg.seed,
                v_points: 21,
            };
            build_effective(spec, nodes, &source)?
        }
        other => bail!("--source must be `mc` or `closed`, got `{other}`"),
    })
}

fn cmd_effective(o: &Opts) -> anyhow::Result<()> {
    let cfg = o.experiment()?;
    let spec = o.spec(&cfg)?;
    let grid = Grid1::parse(&o.x_grid)?;
    let nodes = grid.nodes();
    let effp = effective_for(o, &cfg, &spec, &nodes)?;
    let v_grid = spec.control_set.grid(21);
    let table = |f: &dyn Fn(f64, f64) -> f64| -> Vec<Vec<f64>> {
        nodes.iter().map(|&x| v_grid.iter().map(|&v| f(x, v)).collect()).collect()
    };
    let measures: Vec<_> = effp
        .tabulated()
        .map(|t| {
            t.measures
                .iter()
                .map(|m| json!({"x": m.x_anchor, "n": m.len(), "mean": m.mean().mean, "median": m.median(), "iqr": m.iqr()}))
                .collect()
        })
        .unwrap_or_default();
    let doc = json!({
        "model": spec.name,
        "provenance": effp.provenance,
        "x_grid": nodes,
        "v_grid": v_grid,
        "b_bar": table(&|x, v| effp.b_bar(x, v)),
        "l_bar": table(&|x, v| effp.l_bar(x, v)),
        "g_bar": nodes.iter().map(|&x| effp.g_bar(x)).collect::<Vec<_>>(),
        "h_bar_p0": nodes.iter().map(|&x| effp.h_bar(x, 0.0)).collect::<Vec<_>>(),
        "measures": measures,
    });
    write_out(&o.out, &serde_json::to_string_pretty(&doc)?)
}

fn cmd_solve_hjb(o: &Opts) -> anyhow::Result<()> {
    let cfg = o.experiment()?;
    let spec = o.spec(&cfg)?;
    let gx = Grid1::parse(o.xdomain.as_deref().unwrap_or(&cfg.x_grid))?;
    let gy = Grid1::parse(o.ydomain.as_deref().unwrap_or(&cfg.y_grid))?;
    let theta = max_slow_drift(&spec, &gx, &gy) + 1.0;
    let taus: Vec<f64> = (0..=10).map(|k| spec.horizon * k as f64 / 10.0).collect();
    let scheme = SchemeConfig { lf_theta: Some(theta), dt: o.dt, output_taus: taus, ..Default::default() };
    let mut csv = String::new();
    match o.epsilon {
        None => {
            let effp = effective_for(o, &cfg, &spec, &gx.nodes())?;
            let u = solve_effective_hjb(&effp, &gx, &scheme)?;
            csv.push_str("tau,x,u\n");
            for (t, x, v) in surface_rows(&u) {
                let _ = writeln!(csv, "{t},{x},{v}");
            }
        }
        Some(eps) => {
            let u = solve_two_scale_hjb(&spec, eps, &gx, &gy, &scheme)?;
            csv.push_str("tau,x,y,u\n");
            for (t, x, y, v) in two_scale_rows(&u) {
                let _ = writeln!(csv, "{t},{x},{y},{v}");
            }
        }
    }
    write_out(&o.out, &csv)
}

/// Reads an effective `tau,x,u` CSV back into a value surface.
fn read_surface(path: &Path, horizon: f64) -> anyhow::Result<ValueSurface> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("tau,x,u") {
        bail!("{} is not an effective solve-hjb CSV (expected header tau,x,u)", path.display());
    }
    let mut levels: Vec<(f64, Vec<(f64, f64)>)> = Vec::new();
    for line in lines.filter(|l| !l.trim().is_empty()) {
        let v: Vec<f64> = line.split(',').map(|s| s.trim().parse::<f64>()).collect::<Result<_, _>>()?;
        let [t, x, u] = v[..] else { bail!("malformed row `{line}`") };
        match levels.last_mut() {
            Some((lt, row)) if *lt == t => row.push((x, u)),
            _ => levels.push((t, vec![(x, u)])),
        }
    }
    let first = &levels.first().ok_or_else(|| anyhow!("empty value surface"))?.1;
    let grid = Grid1::new(first[0].0, first[first.len() - 1].0, first.len())?;
    Ok(ValueSurface {
        grid,
        horizon,
        taus: levels.iter().map(|l| l.0).collect(),
        values: levels.iter().map(|l| l.1.iter().map(|p| p.1).collect()).collect(),
        dt: f64::NAN,
        lf_theta: f64::NAN,
    })
}

fn cmd_value(o: &Opts) -> anyhow::Result<()> {
    let cfg = o.experiment()?;
    let spec = o.spec(&cfg)?;
    let (t0, x0, y0) = o.start()?;
    let effp = EffectiveProblem::closed_form(&spec).or_else(|_| effective_for(o, &cfg, &spec, &cfg.x_grid()?.nodes()))?;
    let policy = match o.policy.strip_prefix("hjb:") {
        Some(file) => extract_policy(&effp, &read_surface(Path::new(file), spec.horizon)?)?,
        None => constant_policy(&o.policy, &spec)?,
    };
    let paths = o.paths.unwrap_or(cfg.paths);
    let est: CostEstimate = match o.epsilon {
        Some(eps) => {
            let dt = o.dt.unwrap_or(cfg.dt.min(eps / 10.0));
            estimate_cost(&spec, eps, &policy, x0, y0, t0, paths, dt, cfg.seed)?
        }
        None => estimate_effective_cost(&effp, &policy, x0, t0, paths, o.dt.unwrap_or(cfg.dt), cfg.seed)?,
    };
    let csv = format!(
        "policy,regime,t0,x0,y0,mean,stderr,n_paths\n{},{},{},{},{},{},{},{}\n",
        est.meta.policy,
        est.meta.regime,
        t0,
        x0,
        est.meta.y0.map_or(String::new(), |y| y.to_string()),
        est.mean,
        est.stderr,
        est.n_paths
    );
    write_out(&o.out, &csv)
}

fn finish(report: Report) -> anyhow::Result<bool> {
    print!("{}", report.summary());
    if let Some(dir) = &report.config.out_dir {
        report.write(dir)?;
    }
    Ok(report.passed())
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    match cli.command {
        Command::Simulate(o) => cmd_simulate(&o).map(|_| true),
        Command::Ergodic(o) => cmd_ergodic(&o).map(|_| true),
        Command::Effective(o) => cmd_effective(&o).map(|_| true),
        Command::SolveHjb(o) => cmd_solve_hjb(&o).map(|_| true),
        Command::Value(o) => cmd_value(&o).map(|_| true),
        Command::Sweep(o) => finish(run_sweep(&o.experiment()?)?),
        Command::Weak(o) => finish(run_weak_convergence(&o.experiment()?)?),
        Command::All(o) => finish(run_all(&o.experiment()?)?),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
