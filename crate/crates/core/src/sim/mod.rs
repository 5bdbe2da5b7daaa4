//! Implicit Euler time stepping with Newton (or Picard) iterations and a
//! block-LU preconditioned Krylov solver for the linear systems.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dae::{DaeError, DaeSystem, DiscretizationOptions, Scenario, SolverSection};
use crate::linalg::{gmres, norm2, KrylovConfig, KrylovResult, LinalgError, Preconditioner, SchurPreconditioner, SparseMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PreconditionerStrategy {
    /// Built once at the first iteration of the first step (`P1`).
    Frozen,
    PerTimeStep,
    PerNewtonIteration,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NonlinearMethod {
    Newton,
    Picard,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KrylovMethod {
    Gmres,
    /// IDR(s); needs the `idr` feature.
    Idr(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitialCondition {
    /// Steady state for the inputs at `t = 0`.
    Steady,
    /// Mean supply pressure everywhere, zero flow.
    Constant,
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("unknown {kind} `{value}`")]
pub struct ParseOptionError {
    kind: &'static str,
    value: String,
}

fn parse_err(kind: &'static str, value: &str) -> ParseOptionError {
    ParseOptionError {
        kind,
        value: value.to_string(),
    }
}

impl FromStr for PreconditionerStrategy {
    type Err = ParseOptionError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "frozen" | "p1" => Ok(Self::Frozen),
            "per-step" => Ok(Self::PerTimeStep),
            "per-newton" => Ok(Self::PerNewtonIteration),
            _ => Err(parse_err("preconditioner strategy", s)),
        }
    }
}

impl fmt::Display for PreconditionerStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Frozen => "frozen",
            Self::PerTimeStep => "per-step",
            Self::PerNewtonIteration => "per-newton",
        })
    }
}

impl FromStr for NonlinearMethod {
    type Err = ParseOptionError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "newton" => Ok(Self::Newton),
            "picard" => Ok(Self::Picard),
            _ => Err(parse_err("nonlinear method", s)),
        }
    }
}

impl fmt::Display for NonlinearMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Newton => "newton",
            Self::Picard => "picard",
        })
    }
}

impl FromStr for KrylovMethod {
    type Err = ParseOptionError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "gmres" {
            return Ok(Self::Gmres);
        }
        if let Some(rest) = s.strip_prefix("idr") {
            let inner = rest.trim_start_matches('(').trim_end_matches(')');
            let n = if inner.is_empty() { Ok(4) } else { inner.parse() };
            if let Ok(n) = n {
                if n > 0 && cfg!(feature = "idr") {
                    return Ok(Self::Idr(n));
                }
            }
        }
        Err(parse_err("Krylov method", s))
    }
}

impl FromStr for InitialCondition {
    type Err = ParseOptionError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "steady" => Ok(Self::Steady),
            "constant" => Ok(Self::Constant),
            _ => Err(parse_err("initial condition", s)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Stop when `‖F‖₂ < eps0`.
    pub eps0: f64,
    pub n_max: usize,
    /// Relative tolerance of the inner Krylov solve.
    pub eps_tol: f64,
    pub precond: PreconditionerStrategy,
    pub method: NonlinearMethod,
    pub krylov: KrylovMethod,
    pub krylov_max_iter: usize,
    pub initial: InitialCondition,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            eps0: 1e-5,
            n_max: 50,
            eps_tol: 1e-3,
            precond: PreconditionerStrategy::Frozen,
            method: NonlinearMethod::Newton,
            krylov: KrylovMethod::Gmres,
            krylov_max_iter: 500,
            initial: InitialCondition::Steady,
        }
    }
}

impl SolverConfig {
    /// Applies the overrides of a scenario file.
    pub fn with_section(mut self, s: &SolverSection) -> Result<Self, ParseOptionError> {
        if let Some(v) = s.eps0 {
            self.eps0 = v;
        }
        if let Some(v) = s.eps_tol {
            self.eps_tol = v;
        }
        if let Some(v) = s.n_max {
            self.n_max = v;
        }
        if let Some(v) = &s.precond {
            self.precond = v.parse()?;
        }
        if let Some(v) = &s.method {
            self.method = v.parse()?;
        }
        if let Some(v) = &s.krylov {
            self.krylov = v.parse()?;
        }
        if let Some(v) = s.krylov_max_iter {
            self.krylov_max_iter = v;
        }
        if let Some(v) = &s.initial {
            self.initial = v.parse()?;
        }
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let ok = |v: f64| v > 0.0 && v.is_finite();
        if !ok(self.eps0) || !ok(self.eps_tol) || self.n_max == 0 || self.krylov_max_iter == 0 {
            return Err(SimError::InvalidConfig(format!(
                "eps0 = {}, eps_tol = {}, n_max = {}, krylov_max_iter = {}",
                self.eps0, self.eps_tol, self.n_max, self.krylov_max_iter
            )));
        }
        Ok(())
    }
}

/// Discretization settings taken from a scenario's solver section.
pub fn discretization_from_section(s: &SolverSection) -> DiscretizationOptions {
    let mut d = DiscretizationOptions::default();
    if let Some(h) = s.mesh_h {
        d.mesh_h = h;
    }
    if let Some(c) = s.c {
        d.c = c;
    }
    d
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error(transparent)]
    Dae(#[from] DaeError),
    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),
    #[error("building the preconditioner failed: {0}")]
    Preconditioner(LinalgError),
    #[error("Krylov solver failed: {0}")]
    Krylov(LinalgError),
    #[error("Krylov solver stopped at relative residual {residual:e} after {iterations} iterations (tolerance {tol:e}){hint}")]
    KrylovStalled {
        iterations: usize,
        residual: f64,
        tol: f64,
        hint: String,
    },
    #[error("no convergence after {iterations} iterations, ‖F‖₂ = {residual:e}")]
    NotConverged { iterations: usize, residual: f64 },
    #[error("update kept a nonpositive pressure after {0} step halvings")]
    Positivity(usize),
    #[error("time step {step} (t = {t} s): {source}")]
    Step { step: usize, t: f64, source: Box<SimError> },
    #[error("steady state: {0}")]
    SteadyState(Box<SimError>),
    #[error("initial state violates the algebraic constraints by {0:e}")]
    InconsistentInitial(f64),
}

/// Holds the block-LU preconditioner between solves according to the
/// configured strategy.
#[derive(Debug, Clone)]
pub struct PreconditionerCache {
    strategy: PreconditionerStrategy,
    current: Option<SchurPreconditioner>,
    builds: usize,
}

impl PreconditionerCache {
    pub fn new(strategy: PreconditionerStrategy) -> Self {
        Self {
            strategy,
            current: None,
            builds: 0,
        }
    }

    pub fn builds(&self) -> usize {
        self.builds
    }

    fn prepare(&mut self, sys: &DaeSystem, a: &SparseMatrix, first_in_step: bool) -> Result<&SchurPreconditioner, SimError> {
        let rebuild = match self.strategy {
            PreconditionerStrategy::Frozen => self.current.is_none(),
            PreconditionerStrategy::PerTimeStep => first_in_step || self.current.is_none(),
            PreconditionerStrategy::PerNewtonIteration => true,
        };
        if rebuild {
            let p = SchurPreconditioner::build(&sys.split(a)).map_err(SimError::Preconditioner)?;
            self.current = Some(p);
            self.builds += 1;
        }
        Ok(self.current.as_ref().unwrap())
    }
}

fn krylov_solve(
    method: KrylovMethod,
    a: &SparseMatrix,
    b: &[f64],
    p: &dyn Preconditioner,
    kc: &KrylovConfig,
) -> Result<KrylovResult, LinalgError> {
    match method {
        KrylovMethod::Gmres => gmres(a, b, p, kc),
        #[cfg(feature = "idr")]
        KrylovMethod::Idr(s) => crate::linalg::idr_s(a, b, p, s, kc),
        #[cfg(not(feature = "idr"))]
        KrylovMethod::Idr(_) => gmres(a, b, p, kc),
    }
}

/// One nonlinear solve `F(x) = 0` with
/// `F(x) = s M (x − x_prev) − τ (K x + B u + f(x, u))`.
#[derive(Debug, Clone, Copy)]
pub struct StepProblem<'a> {
    pub sys: &'a DaeSystem,
    pub x_prev: &'a [f64],
    pub u: &'a [f64],
    pub tau: f64,
    pub mass_scale: f64,
}

impl StepProblem<'_> {
    pub fn residual(&self, x: &[f64]) -> Result<Vec<f64>, DaeError> {
        self.sys.residual(x, self.x_prev, self.u, self.tau, self.mass_scale)
    }

    pub fn matrix(&self, x: &[f64], method: NonlinearMethod) -> Result<SparseMatrix, DaeError> {
        match method {
            NonlinearMethod::Newton => self.sys.jacobian(x, self.u, self.tau, self.mass_scale),
            NonlinearMethod::Picard => self.sys.picard_matrix(x, self.u, self.tau, self.mass_scale),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NonlinearReport {
    pub x: Vec<f64>,
    pub iterations: usize,
    /// `‖F‖₂` before the first and after every iteration.
    pub residuals: Vec<f64>,
    pub krylov_iterations: Vec<usize>,
    /// True relative residual of every inner solve.
    pub krylov_residuals: Vec<f64>,
    pub halvings: usize,
}

/// Alg. 1 with an inexact inner solve; Picard replaces the Jacobian by the
/// lagged-friction matrix.
pub fn nonlinear_solve(
    prob: &StepProblem,
    x0: &[f64],
    cfg: &SolverConfig,
    method: NonlinearMethod,
    cache: &mut PreconditionerCache,
) -> Result<NonlinearReport, SimError> {
    const MAX_HALVINGS: usize = 10;
    let mut x = x0.to_vec();
    let mut f = prob.residual(&x)?;
    let mut norm = norm2(&f);
    let mut rep = NonlinearReport {
        x: Vec::new(),
        iterations: 0,
        residuals: vec![norm],
        krylov_iterations: Vec::new(),
        krylov_residuals: Vec::new(),
        halvings: 0,
    };
    let kc = KrylovConfig {
        tol: cfg.eps_tol,
        max_iter: cfg.krylov_max_iter,
        restart: None,
    };
    while norm >= cfg.eps0 {
        if rep.iterations >= cfg.n_max {
            return Err(SimError::NotConverged {
                iterations: rep.iterations,
                residual: norm,
            });
        }
        let a = prob.matrix(&x, method)?;
        let p = cache.prepare(prob.sys, &a, rep.iterations == 0)?;
        let rhs: Vec<f64> = f.iter().map(|v| -v).collect();
        let sol = krylov_solve(cfg.krylov, &a, &rhs, p, &kc).map_err(SimError::Krylov)?;
        if !sol.converged {
            let hint = if cache.strategy == PreconditionerStrategy::Frozen {
                "; the frozen preconditioner may be stale, try --precond per-step or per-newton".to_string()
            } else {
                String::new()
            };
            return Err(SimError::KrylovStalled {
                iterations: sol.iterations,
                residual: sol.residuals.last().copied().unwrap_or(f64::NAN),
                tol: cfg.eps_tol,
                hint,
            });
        }
        rep.krylov_iterations.push(sol.iterations);
        rep.krylov_residuals.push(sol.true_relative_residual);

        let mut alpha = 1.0;
        let mut halvings = 0;
        let (xn, fn_) = loop {
            let xn: Vec<f64> = x.iter().zip(&sol.x).map(|(a, d)| a + alpha * d).collect();
            match prob.residual(&xn) {
                Ok(fv) => break (xn, fv),
                Err(DaeError::NonPositivePressure { .. }) if halvings < MAX_HALVINGS => {
                    alpha *= 0.5;
                    halvings += 1;
                }
                Err(DaeError::NonPositivePressure { .. }) => return Err(SimError::Positivity(halvings)),
                Err(e) => return Err(e.into()),
            }
        };
        rep.halvings += halvings;
        x = xn;
        f = fn_;
        norm = norm2(&f);
        rep.iterations += 1;
        rep.residuals.push(norm);
    }
    rep.x = x;
    Ok(rep)
}

pub fn newton_solve(
    prob: &StepProblem,
    x0: &[f64],
    cfg: &SolverConfig,
    cache: &mut PreconditionerCache,
) -> Result<NonlinearReport, SimError> {
    nonlinear_solve(prob, x0, cfg, NonlinearMethod::Newton, cache)
}

pub fn picard_solve(
    prob: &StepProblem,
    x0: &[f64],
    cfg: &SolverConfig,
    cache: &mut PreconditionerCache,
) -> Result<NonlinearReport, SimError> {
    nonlinear_solve(prob, x0, cfg, NonlinearMethod::Picard, cache)
}

/// Uniform pressure `p`, zero flow.
pub fn constant_state(sys: &DaeSystem, p: f64) -> Vec<f64> {
    let mut x = vec![0.0; sys.dim()];
    for s in &sys.index.pipes {
        x[s.offset..s.q_start()].fill(p);
    }
    x
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteadyReport {
    pub x: Vec<f64>,
    pub continuation_steps: usize,
    pub newton_iterations: usize,
    pub residual: f64,
}

/// Solves `K x + B u + f(x, u) = 0`.
///
/// Newton from a zero-flow guess is singular once several supplies share a
/// junction, so the guess is first relaxed by implicit Euler steps of growing
/// length and then polished by Newton on the steady residual.
pub fn steady_state(sys: &DaeSystem, u: &[f64], guess: &[f64], cfg: &SolverConfig) -> Result<SteadyReport, SimError> {
    let wrap = |e: SimError| SimError::SteadyState(Box::new(e));
    let inner = SolverConfig {
        precond: PreconditionerStrategy::PerNewtonIteration,
        method: NonlinearMethod::Newton,
        eps_tol: cfg.eps_tol.min(1e-8),
        ..*cfg
    };
    let steady = |x: &[f64]| -> Result<f64, SimError> {
        Ok(norm2(&sys.residual(x, x, u, 1.0, 0.0)?))
    };
    let mut x = guess.to_vec();
    let mut tau = 1.0;
    let mut steps = 0;
    let mut iters = 0;
    let mut res = steady(&x).map_err(wrap)?;
    while res >= cfg.eps0 && tau < 1e9 && steps < 200 {
        let prob = StepProblem {
            sys,
            x_prev: &x,
            u,
            tau,
            mass_scale: 1.0,
        };
        let f0 = norm2(&prob.residual(&x).map_err(|e| wrap(e.into()))?);
        let step_cfg = SolverConfig {
            eps0: (1e-8 * f0).max(cfg.eps0),
            n_max: 30,
            ..inner
        };
        let mut cache = PreconditionerCache::new(step_cfg.precond);
        match newton_solve(&prob, &x, &step_cfg, &mut cache) {
            Ok(r) => {
                iters += r.iterations;
                x = r.x;
                tau *= 4.0;
            }
            Err(_) if tau > 1e-3 => tau /= 8.0,
            Err(e) => return Err(wrap(e)),
        }
        steps += 1;
        res = steady(&x).map_err(wrap)?;
    }
    let xp = x.clone();
    let prob = StepProblem {
        sys,
        x_prev: &xp,
        u,
        tau: 1.0,
        mass_scale: 0.0,
    };
    let polish = SolverConfig {
        n_max: cfg.n_max.max(20),
        ..inner
    };
    let mut cache = PreconditionerCache::new(inner.precond);
    let r = newton_solve(&prob, &x, &polish, &mut cache).map_err(wrap)?;
    Ok(SteadyReport {
        residual: *r.residuals.last().unwrap(),
        x: r.x,
        continuation_steps: steps,
        newton_iterations: iters + r.iterations,
    })
}

/// Max-norm of the algebraic rows `K₂ x`.
pub fn constraint_violation(sys: &DaeSystem, x: &[f64]) -> f64 {
    let n = sys.index.n_diff;
    (n..sys.dim())
        .map(|i| sys.k.row(i).map(|(j, v)| v * x[j]).sum::<f64>().abs())
        .fold(0.0, f64::max)
}

pub fn initial_state(sys: &DaeSystem, sc: &Scenario, cfg: &SolverConfig) -> Result<Vec<f64>, SimError> {
    let u0 = sys.inputs_at(sc, 0.0)?;
    let guess = constant_state(sys, sc.mean_supply_pressure(0.0));
    match cfg.initial {
        InitialCondition::Constant => Ok(guess),
        InitialCondition::Steady => Ok(steady_state(sys, &u0, &guess, cfg)?.x),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub t: f64,
    pub newton_iterations: usize,
    pub krylov_iterations: Vec<usize>,
    pub residuals: Vec<f64>,
    pub final_residual: f64,
}

impl StepRecord {
    pub fn krylov_total(&self) -> usize {
        self.krylov_iterations.iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeriesOutput {
    pub names: Vec<String>,
    pub times: Vec<f64>,
    pub rows: Vec<Vec<f64>>,
    pub steps: Vec<StepRecord>,
    pub final_state: Vec<f64>,
    pub final_inputs: Vec<f64>,
    pub preconditioner_builds: usize,
}

impl TimeSeriesOutput {
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let k = self.names.iter().position(|n| n == name)?;
        Some(self.rows.iter().map(|r| r[k]).collect())
    }
}

/// Implicit Euler over the scenario horizon, warm-starting every step at the
/// previous state and evaluating inputs at the new time level.
pub fn implicit_euler_simulate(
    sys: &DaeSystem,
    sc: &Scenario,
    cfg: &SolverConfig,
    x0: &[f64],
) -> Result<TimeSeriesOutput, SimError> {
    implicit_euler_simulate_steps(sys, sc, cfg, x0, sc.steps())
}

/// As [`implicit_euler_simulate`], stopping after `steps` steps.
pub fn implicit_euler_simulate_steps(
    sys: &DaeSystem,
    sc: &Scenario,
    cfg: &SolverConfig,
    x0: &[f64],
    steps: usize,
) -> Result<TimeSeriesOutput, SimError> {
    cfg.validate()?;
    sc.validate().map_err(|e| SimError::InvalidConfig(e.to_string()))?;
    if x0.len() != sys.dim() {
        return Err(DaeError::DimensionMismatch {
            expected: sys.dim(),
            found: x0.len(),
        }
        .into());
    }
    let viol = constraint_violation(sys, x0);
    let scale = x0.iter().map(|v| v.abs()).fold(1.0, f64::max);
    if viol > cfg.eps0.max(1e-12 * scale) {
        return Err(SimError::InconsistentInitial(viol));
    }
    let mut u = sys.inputs_at(sc, 0.0)?;
    let mut out = TimeSeriesOutput {
        names: sys.observable_names(),
        times: vec![0.0],
        rows: vec![sys.observables(x0, &u)],
        steps: Vec::with_capacity(steps),
        final_state: Vec::new(),
        final_inputs: Vec::new(),
        preconditioner_builds: 0,
    };
    let mut cache = PreconditionerCache::new(cfg.precond);
    let mut x = x0.to_vec();
    for k in 1..=steps {
        let t = k as f64 * sc.tau;
        u = sys.inputs_at(sc, t)?;
        let prob = StepProblem {
            sys,
            x_prev: &x,
            u: &u,
            tau: sc.tau,
            mass_scale: 1.0,
        };
        let rep = nonlinear_solve(&prob, &x, cfg, cfg.method, &mut cache).map_err(|e| SimError::Step {
            step: k,
            t,
            source: Box::new(e),
        })?;
        out.steps.push(StepRecord {
            step: k,
            t,
            newton_iterations: rep.iterations,
            krylov_iterations: rep.krylov_iterations,
            final_residual: *rep.residuals.last().unwrap(),
            residuals: rep.residuals,
        });
        x = rep.x;
        out.times.push(t);
        out.rows.push(sys.observables(&x, &u));
    }
    out.final_state = x;
    out.final_inputs = u;
    out.preconditioner_builds = cache.builds();
    Ok(out)
}

#[cfg(test)]
mod tests;
