//! Monotone explicit schemes for the effective and two-scale nonlocal HJB
//! equations, and the fractional-Laplacian stencil they share.
//!
//! Both solvers integrate in time-to-go `τ = T - t`:
//!
//! ```text
//! ∂_τ u = A_x u + H̄(x, ∂_x u) - λ u,                                 u(0) = ḡ
//! ∂_τ u = A_x u + (1/ε)(A_y u + c ∂_y u) + H(x, y, ∂_x u) - λ u,     u(0) = g
//! ```
//!
//! where `A = -(-Δ)^{α/2}` is the generator of the α-stable process. This is
//! the form whose solution reproduces the cost functional for constant data,
//! e.g. `u(τ) = e^{-λτ} c₀` for `g ≡ c₀, L ≡ 0`.
//!
//! # Stencil
//!
//! In one dimension `A f(x) = C_α ∫₀^∞ [f(x+z) + f(x-z) - 2f(x)] z^{-1-α} dz`
//! (the gradient compensator cancels by symmetry). The symmetric difference is
//! approximated by `g(h) z²/h²` on the first cell and by linear interpolation
//! on every further cell, giving nonnegative weights `w_j`. Values beyond the
//! truncated domain follow the [`Extension`] rule and their contribution is
//! summed in closed form. `C_α` is fixed so that the symbol is `-|ξ|^α`.

use ndarray::{Array1, Array2, Axis, Zip};
use serde::{Deserialize, Serialize};

use crate::effective::{hamiltonian_value, EffectiveProblem};
use crate::error::{Error, Result};
use crate::model::ProblemSpec;
use crate::sde::{GridPolicy, PolicyHandle};

/// How a grid function continues beyond the truncated domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Extension {
    /// Constant continuation by the boundary value (keeps the scheme monotone).
    #[default]
    Constant,
    /// Linear continuation with the one-sided boundary slope.
    Linear,
}

/// Uniform 1D grid with an odd number of nodes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid1 {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
}

impl Grid1 {
    pub fn new(lo: f64, hi: f64, n: usize) -> Result<Self> {
        if !(lo < hi) || n < 3 || n.is_multiple_of(2) {
            return Err(Error::param(format!("grid {lo}:{hi}:{n} needs lo < hi and an odd node count >= 3")));
        }
        Ok(Grid1 { lo, hi, n })
    }

    pub fn centered(center: f64, half_width: f64, n: usize) -> Result<Self> {
        Self::new(center - half_width, center + half_width, n)
    }

    /// Parses `a:b:n`.
    pub fn parse(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        if parts.len() != 3 {
            return Err(Error::Usage(format!("grid `{s}` must have the form a:b:n")));
        }
        let bad = || Error::Usage(format!("grid `{s}` must have the form a:b:n"));
        let lo: f64 = parts[0].trim().parse().map_err(|_| bad())?;
        let hi: f64 = parts[1].trim().parse().map_err(|_| bad())?;
        let n: usize = parts[2].trim().parse().map_err(|_| bad())?;
        Self::new(lo, hi, n)
    }

    pub fn h(&self) -> f64 {
        (self.hi - self.lo) / (self.n - 1) as f64
    }

    pub fn x(&self, i: usize) -> f64 {
        self.lo + i as f64 * self.h()
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.x(i)).collect()
    }

    pub fn center(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    pub fn half_width(&self) -> f64 {
        0.5 * (self.hi - self.lo)
    }

    /// Same interval with twice the resolution.
    pub fn refined(&self) -> Self {
        Grid1 { lo: self.lo, hi: self.hi, n: 2 * self.n - 1 }
    }
}

/// Scalar field on a [`Grid1`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridFunction {
    pub grid: Grid1,
    pub values: Vec<f64>,
    pub extension: Extension,
}

impl GridFunction {
    pub fn from_fn(grid: Grid1, extension: Extension, f: impl Fn(f64) -> f64) -> Self {
        GridFunction { values: grid.nodes().into_iter().map(f).collect(), grid, extension }
    }
}

/// `C_α` such that the 1D operator has symbol `-|ξ|^α`.
pub fn frac_laplacian_constant(alpha: f64) -> f64 {
    alpha * 2f64.powf(alpha - 1.0) * libm::tgamma(0.5 * (1.0 + alpha))
        / (std::f64::consts::PI.sqrt() * libm::tgamma(1.0 - 0.5 * alpha))
}

/// `∫_m^{m+1} s^{-1-α} ds`.
fn i0(alpha: f64, m: f64) -> f64 {
    -m.powf(-alpha) * (-alpha * (1.0 / m).ln_1p()).exp_m1() / alpha
}

/// `∫_m^{m+1} s^{-α} ds`.
fn i1(alpha: f64, m: f64) -> f64 {
    -m.powf(1.0 - alpha) * ((1.0 - alpha) * (1.0 / m).ln_1p()).exp_m1() / (alpha - 1.0)
}

/// Fractional-Laplacian stencil at spacing `h`.
#[derive(Debug, Clone)]
pub struct FracLaplacian {
    pub alpha: f64,
    pub h: f64,
    /// `C_α h^{-α}`.
    scale: f64,
}

impl FracLaplacian {
    pub fn new(alpha: f64, h: f64) -> Result<Self> {
        crate::stable::check_alpha(alpha)?;
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::Resolution(format!("stencil spacing h = {h} must be positive")));
        }
        Ok(FracLaplacian { alpha, h, scale: frac_laplacian_constant(alpha) * h.powf(-alpha) })
    }

    /// Dimensionless weight of offset `j ≥ 1`.
    fn unit_weight(&self, j: usize) -> f64 {
        let a = self.alpha;
        if j == 1 {
            return 1.0 / (2.0 - a) + 2.0 * i0(a, 1.0) - i1(a, 1.0);
        }
        let s = j as f64;
        if j >= 24 {
            // hat-function integral of s^{-1-α} by its Taylor expansion
            let f0 = s.powf(-1.0 - a);
            let d2 = (1.0 + a) * (2.0 + a) / (s * s);
            let d4 = d2 * (3.0 + a) * (4.0 + a) / (s * s);
            let d6 = d4 * (5.0 + a) * (6.0 + a) / (s * s);
            return f0 * (1.0 + d2 / 12.0 + d4 / 360.0 + d6 / 20160.0);
        }
        (s + 1.0) * i0(a, s) - i1(a, s) + i1(a, s - 1.0) - (s - 1.0) * i0(a, s - 1.0)
    }

    /// Weight `w_j` of the symmetric difference at offset `j h`.
    pub fn weight(&self, j: usize) -> f64 {
        assert!(j >= 1);
        self.scale * self.unit_weight(j)
    }

    /// Weights `w_0 = 0, w_1, ..., w_n`.
    pub fn weights(&self, n: usize) -> Vec<f64> {
        let mut w = vec![0.0; n + 1];
        for (j, wj) in w.iter_mut().enumerate().skip(1) {
            *wj = self.weight(j);
        }
        w
    }

    /// `Σ_{j ≥ J} w_j`.
    pub fn tail0(&self, big_j: usize) -> f64 {
        let a = self.alpha;
        if big_j <= 1 {
            return self.scale * (1.0 / (2.0 - a) + 1.0 / a);
        }
        let s = big_j as f64;
        self.scale * (s.powf(-a) / a + i1(a, s - 1.0) - (s - 1.0) * i0(a, s - 1.0))
    }

    /// `Σ_{j ≥ J} j w_j`.
    pub fn tail1(&self, big_j: usize) -> f64 {
        let a = self.alpha;
        if big_j <= 1 {
            return self.scale * (1.0 / (2.0 - a) + 1.0 / (a - 1.0));
        }
        let s = big_j as f64;
        self.scale * (s.powf(1.0 - a) / (a - 1.0) + s * (i1(a, s - 1.0) - (s - 1.0) * i0(a, s - 1.0)))
    }

    /// Total weight `Λ_h / 2`; the diagonal of the operator is `-2 Σ w_j`.
    pub fn total_weight(&self) -> f64 {
        self.tail0(1)
    }

    /// Largest diagonal magnitude `Λ_h` of the discrete operator.
    pub fn lambda_h(&self) -> f64 {
        2.0 * self.total_weight()
    }

    /// Contribution of the nodes beyond both ends of `f` at node `i`.
    fn boundary_terms(&self, f: &[f64], i: usize, ext: Extension) -> f64 {
        let n = f.len();
        let fi = f[i];
        let (jl, jr) = (i + 1, n - i);
        let mut s = (f[0] - fi) * self.tail0(jl) + (f[n - 1] - fi) * self.tail0(jr);
        if ext == Extension::Linear && n >= 2 {
            let (dl, dr) = (f[1] - f[0], f[n - 1] - f[n - 2]);
            s -= dl * (self.tail1(jl) - i as f64 * self.tail0(jl));
            s += dr * (self.tail1(jr) - (n - 1 - i) as f64 * self.tail0(jr));
        }
        s
    }

    /// `A f` at node `i`.
    pub fn apply_at(&self, f: &[f64], i: usize, ext: Extension) -> f64 {
        let n = f.len();
        let fi = f[i];
        let mut s = 0.0;
        for j in 1..=i {
            s += self.weight(j) * (f[i - j] - fi);
        }
        for j in 1..n - i {
            s += self.weight(j) * (f[i + j] - fi);
        }
        s + self.boundary_terms(f, i, ext)
    }

    /// `A f` at every node, using precomputed weights.
    pub fn apply(&self, f: &[f64], ext: Extension) -> Vec<f64> {
        let w = self.weights(f.len());
        let mut out = vec![0.0; f.len()];
        self.apply_with(&w, f, ext, &mut out);
        out
    }

    fn apply_with(&self, w: &[f64], f: &[f64], ext: Extension, out: &mut [f64]) {
        let n = f.len();
        for i in 0..n {
            let fi = f[i];
            let mut s = 0.0;
            for j in 1..=i {
                s += w[j] * (f[i - j] - fi);
            }
            for j in 1..n - i {
                s += w[j] * (f[i + j] - fi);
            }
            out[i] = s + self.boundary_terms(f, i, ext);
        }
    }

    /// Near (`j h < δ`) and far (`j h ≥ δ`) parts of `A f`.
    ///
    /// The near part is written in compensated form with the supplied
    /// gradients `p`; the compensator cancels between `±z` so the two parts
    /// add up to [`FracLaplacian::apply`] exactly.
    pub fn apply_split(&self, f: &[f64], ext: Extension, delta: f64, p: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        if delta < 2.0 * self.h * (1.0 - 1e-12) {
            return Err(Error::Resolution(format!(
                "localization radius {delta} must cover at least two cells (h = {})",
                self.h
            )));
        }
        let n = f.len();
        let w = self.weights(n);
        let cut = (delta / self.h - 1e-9).ceil() as usize;
        let mut near = vec![0.0; n];
        let mut far = vec![0.0; n];
        for i in 0..n {
            let fi = f[i];
            let (mut sn, mut sf) = (0.0, 0.0);
            for j in 1..n.max(1) {
                let z = j as f64 * self.h;
                let left = if j <= i { Some(f[i - j]) } else { None };
                let right = if i + j < n { Some(f[i + j]) } else { None };
                if j < cut {
                    // the compensator cancels between the two sides; a node too
                    // close to the edge has its missing side in the boundary terms
                    sn += w[j]
                        * match (left, right) {
                            (Some(l), Some(r)) => (r - fi - p[i] * z) + (l - fi + p[i] * z),
                            (l, r) => l.map_or(0.0, |l| l - fi) + r.map_or(0.0, |r| r - fi),
                        };
                } else {
                    if let Some(l) = left {
                        sf += w[j] * (l - fi);
                    }
                    if let Some(r) = right {
                        sf += w[j] * (r - fi);
                    }
                }
            }
            let bt = self.boundary_terms(f, i, ext);
            // beyond-domain nodes are always at distance ≥ the nearer edge
            if (i + 1).min(n - i) >= cut {
                sf += bt;
            } else {
                sn += bt;
            }
            near[i] = sn;
            far[i] = sf;
        }
        Ok((near, far))
    }

    /// Dense matrix of the operator on `n` nodes.
    pub fn matrix(&self, n: usize, ext: Extension) -> Array2<f64> {
        let w = self.weights(n);
        let mut m = Array2::<f64>::zeros((n, n));
        for i in 0..n {
            let mut diag = 0.0;
            for k in 0..n {
                if k != i {
                    let wk = w[i.abs_diff(k)];
                    m[[i, k]] = wk;
                    diag -= wk;
                }
            }
            let (jl, jr) = (i + 1, n - i);
            let (tl, tr) = (self.tail0(jl), self.tail0(jr));
            m[[i, 0]] += tl;
            m[[i, n - 1]] += tr;
            diag -= tl + tr;
            m[[i, i]] += diag;
            if ext == Extension::Linear {
                let kl = self.tail1(jl) - i as f64 * tl;
                let kr = self.tail1(jr) - (n - 1 - i) as f64 * tr;
                m[[i, 1]] -= kl;
                m[[i, 0]] += kl;
                m[[i, n - 1]] += kr;
                m[[i, n - 2]] -= kr;
            }
        }
        m
    }
}

/// `A f` for a grid function.
pub fn frac_laplacian_apply(f: &GridFunction, alpha: f64) -> Result<GridFunction> {
    let lap = FracLaplacian::new(alpha, f.grid.h())?;
    Ok(GridFunction { grid: f.grid, values: lap.apply(&f.values, f.extension), extension: f.extension })
}

/// Localized operators `(I^δ f, I^{δ,c} f)` with compensator gradients `p`.
pub fn localized_operators(
    f: &GridFunction,
    alpha: f64,
    delta: f64,
    p: &[f64],
) -> Result<(GridFunction, GridFunction)> {
    if p.len() != f.values.len() {
        return Err(Error::param("gradient slice must match the grid"));
    }
    let lap = FracLaplacian::new(alpha, f.grid.h())?;
    let (near, far) = lap.apply_split(&f.values, f.extension, delta, p)?;
    let wrap = |values| GridFunction { grid: f.grid, values, extension: f.extension };
    Ok((wrap(near), wrap(far)))
}

/// Numerical parameters shared by both solvers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeConfig {
    /// Lax–Friedrichs viscosity; `None` estimates `max|b| + 1` over the grid.
    pub lf_theta: Option<f64>,
    pub cfl_safety: f64,
    /// Fixed time step; `None` takes the largest CFL-admissible step.
    pub dt: Option<f64>,
    pub extension: Extension,
    /// Localization radius δ: evaluate the stencil as `I^δ + I^{δ,c}`.
    pub localization: Option<f64>,
    /// Declared refinement tolerance of the scheme.
    pub tolerance: f64,
    /// Time-to-go levels to store (0 and T are always stored).
    pub output_taus: Vec<f64>,
    /// Node budget for two-scale grids.
    pub max_nodes: usize,
}

impl Default for SchemeConfig {
    fn default() -> Self {
        SchemeConfig {
            lf_theta: None,
            cfl_safety: 0.9,
            dt: None,
            extension: Extension::Constant,
            localization: None,
            tolerance: 0.05,
            output_taus: Vec::new(),
            max_nodes: 201 * 201,
        }
    }
}

impl SchemeConfig {
    fn validate(&self) -> Result<()> {
        if !(self.cfl_safety > 0.0 && self.cfl_safety <= 1.0) {
            return Err(Error::Configuration(format!("cfl_safety {} must lie in (0, 1]", self.cfl_safety)));
        }
        if let Some(t) = self.lf_theta {
            if !(t >= 0.0) {
                return Err(Error::Configuration(format!("lf_theta {t} must be nonnegative")));
            }
        }
        Ok(())
    }

    /// Stored levels as step indices for `steps` steps of size `dt`.
    fn snapshot_steps(&self, steps: usize, dt: f64) -> Vec<usize> {
        let mut idx: Vec<usize> = self
            .output_taus
            .iter()
            .map(|&t| ((t / dt).round() as usize).min(steps))
            .chain([0, steps])
            .collect();
        idx.sort_unstable();
        idx.dedup();
        idx
    }
}

/// Largest admissible step and the chosen uniform step for horizon `t`.
fn choose_dt(scheme: &SchemeConfig, rate: f64, horizon: f64) -> Result<(f64, usize)> {
    let dt_max = scheme.cfl_safety / rate;
    let dt = match scheme.dt {
        Some(dt) if dt > dt_max * (1.0 + 1e-12) => {
            return Err(Error::Configuration(format!(
                "dt = {dt} violates the CFL condition; admissible dt <= {dt_max:.6e}"
            )))
        }
        Some(dt) if dt > 0.0 => dt,
        Some(dt) => return Err(Error::Configuration(format!("dt = {dt} must be positive"))),
        None => dt_max,
    };
    let steps = ((horizon / dt) - 1e-9).ceil().max(1.0) as usize;
    Ok((horizon / steps as f64, steps))
}

/// Effective value function `u(τ, x)` at stored levels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueSurface {
    pub grid: Grid1,
    pub horizon: f64,
    pub taus: Vec<f64>,
    pub values: Vec<Vec<f64>>,
    pub dt: f64,
    pub lf_theta: f64,
}

impl ValueSurface {
    /// Index of the stored level closest to `tau`.
    pub fn level(&self, tau: f64) -> usize {
        let mut best = 0;
        for (k, &t) in self.taus.iter().enumerate() {
            if (t - tau).abs() < (self.taus[best] - tau).abs() {
                best = k;
            }
        }
        best
    }

    /// Linear interpolation in x at the stored level closest to `tau`.
    pub fn value(&self, tau: f64, x: f64) -> f64 {
        interp(&self.grid, &self.values[self.level(tau)], x)
    }

    /// Central-difference gradient at every node (one-sided at the ends).
    pub fn gradient(&self, level: usize) -> Vec<f64> {
        gradient(&self.values[level], self.grid.h())
    }
}

pub(crate) fn interp(grid: &Grid1, values: &[f64], x: f64) -> f64 {
    let s = ((x - grid.lo) / grid.h()).clamp(0.0, (grid.n - 1) as f64);
    let i = (s.floor() as usize).min(grid.n - 2);
    let f = s - i as f64;
    values[i] * (1.0 - f) + values[i + 1] * f
}

fn gradient(u: &[f64], h: f64) -> Vec<f64> {
    let n = u.len();
    (0..n)
        .map(|i| match i {
            0 => (u[1] - u[0]) / h,
            i if i == n - 1 => (u[n - 1] - u[n - 2]) / h,
            i => (u[i + 1] - u[i - 1]) / (2.0 * h),
        })
        .collect()
}

#[inline]
fn lax_friedrichs(h_of_p: f64, theta: f64, p_minus: f64, p_plus: f64) -> f64 {
    h_of_p + 0.5 * theta * (p_plus - p_minus)
}

/// Ghost values beyond the ends for one-sided differences.
#[inline]
fn ghosts(u: &[f64], ext: Extension) -> (f64, f64) {
    let n = u.len();
    match ext {
        Extension::Constant => (u[0], u[n - 1]),
        Extension::Linear => (2.0 * u[0] - u[1], 2.0 * u[n - 1] - u[n - 2]),
    }
}

fn sup_norm(u: impl IntoIterator<Item = f64>) -> f64 {
    u.into_iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Solves the effective HJB equation on `grid` up to `τ = T`.
pub fn solve_effective_hjb(effp: &EffectiveProblem, grid: &Grid1, scheme: &SchemeConfig) -> Result<ValueSurface> {
    scheme.validate()?;
    let h = grid.h();
    let xs = grid.nodes();
    let theta = scheme.lf_theta.unwrap_or_else(|| effp.max_drift(&xs) + 1.0);
    let lap = FracLaplacian::new(effp.alpha1, h)?;
    let rate = lap.lambda_h() + effp.lambda + theta / h;
    let horizon = effp.horizon;
    let (dt, steps) = choose_dt(scheme, rate, horizon)?;
    let store = scheme.snapshot_steps(steps, dt);

    let mut u: Vec<f64> = xs.iter().map(|&x| effp.g_bar(x)).collect();
    if u.iter().any(|v| !v.is_finite()) {
        return Err(Error::Evaluation("terminal data is not finite on the grid".into()));
    }
    let g_inf = sup_norm(u.iter().copied());
    let h0_inf = sup_norm(xs.iter().map(|&x| effp.h_bar(x, 0.0)));
    let weights = lap.weights(grid.n);

    let mut taus = Vec::new();
    let mut values = Vec::new();
    let mut au = vec![0.0; grid.n];
    let mut next = vec![0.0; grid.n];
    for k in 0..=steps {
        if store.binary_search(&k).is_ok() {
            taus.push(k as f64 * dt);
            values.push(u.clone());
        }
        if k == steps {
            break;
        }
        match scheme.localization {
            None => lap.apply_with(&weights, &u, scheme.extension, &mut au),
            Some(delta) => {
                let p = gradient(&u, h);
                let (near, far) = lap.apply_split(&u, scheme.extension, delta, &p)?;
                for i in 0..grid.n {
                    au[i] = near[i] + far[i];
                }
            }
        }
        let (gl, gr) = ghosts(&u, scheme.extension);
        for i in 0..grid.n {
            let um = if i == 0 { gl } else { u[i - 1] };
            let up = if i + 1 == grid.n { gr } else { u[i + 1] };
            let pm = (u[i] - um) / h;
            let pp = (up - u[i]) / h;
            let ham = lax_friedrichs(effp.h_bar(xs[i], 0.5 * (pm + pp)), theta, pm, pp);
            next[i] = u[i] + dt * (au[i] + ham - effp.lambda * u[i]);
        }
        std::mem::swap(&mut u, &mut next);
        let tau = (k + 1) as f64 * dt;
        let guard = 2.0 * (g_inf + tau * h0_inf) + 1.0;
        let norm = sup_norm(u.iter().copied());
        if !(norm <= guard) {
            return Err(Error::Instability { tau, norm, guard });
        }
    }
    Ok(ValueSurface { grid: *grid, horizon, taus, values, dt, lf_theta: theta })
}

/// Two-scale value function `u^ε(τ, x, y)` at stored levels.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoScaleSurface {
    pub grid_x: Grid1,
    pub grid_y: Grid1,
    pub epsilon: f64,
    pub horizon: f64,
    pub taus: Vec<f64>,
    /// `values[k][[i, j]]` at `taus[k]`, node `(x_i, y_j)`.
    pub values: Vec<Array2<f64>>,
    pub dt: f64,
    pub steps: usize,
    pub lf_theta: f64,
}

impl TwoScaleSurface {
    pub fn level(&self, tau: f64) -> usize {
        let mut best = 0;
        for (k, &t) in self.taus.iter().enumerate() {
            if (t - tau).abs() < (self.taus[best] - tau).abs() {
                best = k;
            }
        }
        best
    }

    /// Column `y ↦ u^ε(τ, x_i, y)` replaced by the slice `x ↦ u^ε(τ, x, y)`
    /// interpolated linearly in y.
    pub fn slice_at_y(&self, level: usize, y: f64) -> Vec<f64> {
        let u = &self.values[level];
        (0..self.grid_x.n).map(|i| interp(&self.grid_y, u.row(i).as_slice().expect("row-major"), y)).collect()
    }
}

/// Largest `|b(x, y, v)|` over the 2D grid and a control sample.
pub fn max_slow_drift(spec: &ProblemSpec, gx: &Grid1, gy: &Grid1) -> f64 {
    let vs = spec.control_set.grid(21);
    let mut m: f64 = 0.0;
    for x in gx.nodes() {
        for y in gy.nodes() {
            for &v in &vs {
                m = m.max(spec.b(x, y, v).abs());
            }
        }
    }
    m
}

/// Solves the two-scale HJB equation on `grid_x × grid_y` up to `τ = T`.
pub fn solve_two_scale_hjb(
    spec: &ProblemSpec,
    epsilon: f64,
    grid_x: &Grid1,
    grid_y: &Grid1,
    scheme: &SchemeConfig,
) -> Result<TwoScaleSurface> {
    scheme.validate()?;
    spec.check()?;
    if !(epsilon > 0.0 && epsilon <= 1.0) {
        return Err(Error::param(format!("epsilon = {epsilon} must lie in (0, 1]")));
    }
    let (nx, ny) = (grid_x.n, grid_y.n);
    if nx * ny > scheme.max_nodes {
        return Err(Error::Configuration(format!(
            "two-scale grid {nx}x{ny} exceeds the node budget {}",
            scheme.max_nodes
        )));
    }
    if scheme.localization.is_some() {
        return Err(Error::Configuration("localized stencil evaluation is only available for the effective solver".into()));
    }
    let (hx, hy) = (grid_x.h(), grid_y.h());
    let xs = grid_x.nodes();
    let ys = grid_y.nodes();
    let theta = scheme.lf_theta.unwrap_or_else(|| max_slow_drift(spec, grid_x, grid_y) + 1.0);
    let lap_x = FracLaplacian::new(spec.alpha1, hx)?;
    let lap_y = FracLaplacian::new(spec.alpha2, hy)?;

    let mut cfield = Array2::<f64>::zeros((nx, ny));
    for i in 0..nx {
        for j in 0..ny {
            cfield[[i, j]] = spec.c(xs[i], ys[j]);
        }
    }
    let max_c = sup_norm(cfield.iter().copied());
    let rate = lap_x.lambda_h() + (lap_y.lambda_h() + max_c / hy) / epsilon + spec.lambda + theta / hx;
    let horizon = spec.horizon;
    let (dt, steps) = choose_dt(scheme, rate, horizon)?;
    let store = scheme.snapshot_steps(steps, dt);

    let mx = lap_x.matrix(nx, scheme.extension);
    let my_t = lap_y.matrix(ny, scheme.extension).reversed_axes();

    let mut u = Array2::<f64>::zeros((nx, ny));
    for i in 0..nx {
        for j in 0..ny {
            u[[i, j]] = spec.g(xs[i], ys[j]);
        }
    }
    if u.iter().any(|v| !v.is_finite()) {
        return Err(Error::Evaluation("terminal data is not finite on the grid".into()));
    }
    let g_inf = sup_norm(u.iter().copied());
    let mut h0_inf: f64 = 0.0;
    for &x in &xs {
        for &y in &ys {
            h0_inf = h0_inf.max(hamiltonian_value(spec, x, y, 0.0)?.abs());
        }
    }

    // Hamiltonian table check: closed form or generic search, evaluated per node
    let closed = spec.hamiltonian_closed.clone();
    let ham = |x: f64, y: f64, p: f64| -> f64 {
        match &closed {
            Some(hc) => hc(x, y, p).0,
            None => hamiltonian_value(spec, x, y, p).unwrap_or(f64::NAN),
        }
    };

    let inv_eps = 1.0 / epsilon;
    let lambda = spec.lambda;
    let ext = scheme.extension;
    let mut taus = Vec::new();
    let mut values = Vec::new();
    let mut next = Array2::<f64>::zeros((nx, ny));
    for k in 0..=steps {
        if store.binary_search(&k).is_ok() {
            taus.push(k as f64 * dt);
            values.push(u.clone());
        }
        if k == steps {
            break;
        }
        let ax = mx.dot(&u);
        let ay = u.dot(&my_t);
        Zip::indexed(&mut next).and(&ax).and(&ay).and(&cfield).for_each(|(i, j), out, &axv, &ayv, &c| {
            let uij = u[[i, j]];
            let um = if i > 0 {
                u[[i - 1, j]]
            } else if ext == Extension::Linear {
                2.0 * u[[0, j]] - u[[1, j]]
            } else {
                u[[0, j]]
            };
            let up = if i + 1 < nx {
                u[[i + 1, j]]
            } else if ext == Extension::Linear {
                2.0 * u[[nx - 1, j]] - u[[nx - 2, j]]
            } else {
                u[[nx - 1, j]]
            };
            let pm = (uij - um) / hx;
            let pp = (up - uij) / hx;
            let hv = lax_friedrichs(ham(xs[i], ys[j], 0.5 * (pm + pp)), theta, pm, pp);
            let transport = if c > 0.0 {
                let vp = if j + 1 < ny { u[[i, j + 1]] } else { uij };
                c * (vp - uij) / hy
            } else if c < 0.0 {
                let vm = if j > 0 { u[[i, j - 1]] } else { uij };
                c * (uij - vm) / hy
            } else {
                0.0
            };
            *out = uij + dt * (axv + inv_eps * (ayv + transport) + hv - lambda * uij);
        });
        std::mem::swap(&mut u, &mut next);
        let tau = (k + 1) as f64 * dt;
        let guard = 2.0 * (g_inf + tau * h0_inf) + 1.0;
        let norm = sup_norm(u.iter().copied());
        if !(norm <= guard) {
            return Err(Error::Instability { tau, norm, guard });
        }
    }
    Ok(TwoScaleSurface {
        grid_x: *grid_x,
        grid_y: *grid_y,
        epsilon,
        horizon,
        taus,
        values,
        dt,
        steps,
        lf_theta: theta,
    })
}

/// Feedback policy `v*(t, x) = argmax_v [b̄(x,v) ∂_x u - L̄(x,v)]` at every stored level.
pub fn extract_policy(effp: &EffectiveProblem, u: &ValueSurface) -> Result<PolicyHandle> {
    let mut controls = Vec::with_capacity(u.taus.len());
    let xs = u.grid.nodes();
    for level in 0..u.taus.len() {
        let grad = u.gradient(level);
        let row: Result<Vec<f64>> = xs.iter().zip(&grad).map(|(&x, &p)| effp.argmax_bar(x, p)).collect();
        controls.push(row?);
    }
    let table = GridPolicy { horizon: u.horizon, taus: u.taus.clone(), x_lo: u.grid.lo, x_step: u.grid.h(), controls };
    Ok(PolicyHandle::grid(format!("hjb:{}", effp.name), table, &effp.control_set))
}

/// Largest change of `u` over the region `|x - center| ≤ radius`, `τ ∈ taus`,
/// when the grid is refined once (h → h/2 with the CFL step).
pub fn effective_refinement_gap(
    effp: &EffectiveProblem,
    grid: &Grid1,
    scheme: &SchemeConfig,
    radius: f64,
    taus: &[f64],
) -> Result<f64> {
    let mut sch = scheme.clone();
    sch.dt = None;
    sch.output_taus = taus.to_vec();
    let theta = scheme.lf_theta.unwrap_or_else(|| effp.max_drift(&grid.nodes()) + 1.0);
    sch.lf_theta = Some(theta);
    let coarse = solve_effective_hjb(effp, grid, &sch)?;
    let fine = solve_effective_hjb(effp, &grid.refined(), &sch)?;
    let mut gap: f64 = 0.0;
    for &tau in taus {
        let (kc, kf) = (coarse.level(tau), fine.level(tau));
        for (i, x) in grid.nodes().into_iter().enumerate() {
            if (x - grid.center()).abs() <= radius + 1e-12 {
                gap = gap.max((coarse.values[kc][i] - fine.values[kf][2 * i]).abs());
            }
        }
    }
    Ok(gap)
}

/// Rows of a value surface as `(tau, x, u)` triples.
pub fn surface_rows(u: &ValueSurface) -> Vec<(f64, f64, f64)> {
    let xs = u.grid.nodes();
    u.taus
        .iter()
        .zip(&u.values)
        .flat_map(|(&t, row)| xs.iter().zip(row).map(move |(&x, &v)| (t, x, v)))
        .collect()
}

/// Rows of a two-scale surface as `(tau, x, y, u)`.
pub fn two_scale_rows(u: &TwoScaleSurface) -> Vec<(f64, f64, f64, f64)> {
    let xs = u.grid_x.nodes();
    let ys = u.grid_y.nodes();
    let mut out = Vec::new();
    for (&t, vals) in u.taus.iter().zip(&u.values) {
        for (i, row) in vals.axis_iter(Axis(0)).enumerate() {
            for (j, &v) in row.iter().enumerate() {
                out.push((t, xs[i], ys[j], v));
            }
        }
    }
    out
}

/// Nodal maximum of `|a - b|` for two equally shaped slices.
pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    Array1::from(a.to_vec()).iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_is_annihilated() {
        let g = Grid1::new(-5.0, 5.0, 101).unwrap();
        for ext in [Extension::Constant, Extension::Linear] {
            let f = GridFunction::from_fn(g, ext, |_| 3.0);
            let af = frac_laplacian_apply(&f, 1.5).unwrap();
            assert!(af.values.iter().all(|v| v.abs() < 1e-12));
        }
    }

    #[test]
    fn linear_function_center_value_vanishes() {
        let g = Grid1::new(-4.0, 4.0, 161).unwrap();
        let f = GridFunction::from_fn(g, Extension::Linear, |x| x);
        let af = frac_laplacian_apply(&f, 1.4).unwrap();
        assert!(af.values[80].abs() < 1e-10, "{}", af.values[80]);
    }

    #[test]
    fn weights_are_positive_and_tails_consistent() {
        let lap = FracLaplacian::new(1.5, 0.1).unwrap();
        let w = lap.weights(400);
        assert!(w[1..].iter().all(|&x| x > 0.0));
        // Σ_{j<J} w_j + tail0(J) = total
        for big_j in [2usize, 5, 30, 200] {
            let head: f64 = w[1..big_j].iter().sum();
            assert!((head + lap.tail0(big_j) - lap.total_weight()).abs() < 1e-9 * lap.total_weight());
            let head1: f64 = (1..big_j).map(|j| j as f64 * w[j]).sum();
            assert!((head1 + lap.tail1(big_j) - lap.tail1(1)).abs() < 1e-9 * lap.tail1(1));
        }
        // the series switch at j = 24 stays continuous
        let exact = |j: usize| {
            let s = j as f64;
            let a = 1.5;
            (s + 1.0) * i0(a, s) - i1(a, s) + i1(a, s - 1.0) - (s - 1.0) * i0(a, s - 1.0)
        };
        for j in [24usize, 30] {
            assert!((lap.unit_weight(j) - exact(j)).abs() < 1e-10 * exact(j));
        }
    }

    #[test]
    fn matrix_matches_apply() {
        let g = Grid1::new(-3.0, 3.0, 31).unwrap();
        for ext in [Extension::Constant, Extension::Linear] {
            let f: Vec<f64> = g.nodes().iter().map(|x| (x * 0.7).sin() + 0.1 * x * x).collect();
            let lap = FracLaplacian::new(1.3, g.h()).unwrap();
            let direct = lap.apply(&f, ext);
            let m = lap.matrix(g.n, ext);
            let via = m.dot(&Array1::from(f.clone()));
            for i in 0..g.n {
                assert!((direct[i] - via[i]).abs() < 1e-10, "{ext:?} {i}");
            }
        }
    }

    #[test]
    fn split_requires_two_cells() {
        let g = Grid1::new(-1.0, 1.0, 21).unwrap();
        let f = GridFunction::from_fn(g, Extension::Constant, |x| x.cos());
        let p = vec![0.0; 21];
        assert!(matches!(localized_operators(&f, 1.5, 0.15, &p), Err(Error::Resolution(_))));
        let (a, b) = localized_operators(&f, 1.5, 0.2, &p).unwrap();
        let full = frac_laplacian_apply(&f, 1.5).unwrap();
        for i in 0..21 {
            assert!((a.values[i] + b.values[i] - full.values[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn grid_parsing() {
        let g = Grid1::parse("-2:2:41").unwrap();
        assert_eq!((g.lo, g.hi, g.n), (-2.0, 2.0, 41));
        assert!((g.h() - 0.1).abs() < 1e-15);
        assert!(Grid1::parse("0:1").is_err());
        assert!(Grid1::parse("0:1:40").is_err());
    }

    #[test]
    fn constant_c_alpha() {
        // α → 2 recovers the Laplacian scale C_α ~ (2-α)
        let c = frac_laplacian_constant(1.5);
        assert!((c - 0.2992).abs() < 1e-3, "{c}");
    }
}
