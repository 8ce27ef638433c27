//! Objective, L-BFGS directions, Armijo backtracking and the staged inversion loop.
//!
//! λ and μ are updated separately, `m_{k+1} = m_k + alpha_k s_k`, with one
//! L-BFGS memory per field and a shared backtracking factor.

mod lbfgs;
mod problem;

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

pub use lbfgs::LbfgsMemory;
pub use problem::{trace_misfit, Experiment, ForwardPass, Problem, StageData};

use crate::error::{FwiError, Result};
use crate::gradient::{Parameter, RegKind, RegularizationSpec};
use crate::medium::clip_values;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Per-stage schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageConfig {
    /// Pulse name (`p20`, `p30`, `p40` or a custom one defined in the run config).
    pub pulse: String,
    /// Simulated duration in seconds.
    pub duration: f64,
    /// Regularization-to-misfit size ratio of the gradient parts.
    pub wp: f64,
    pub max_iterations: usize,
    /// Switch when J decreased by less than `switch_tol` (relative) over this many iterations.
    #[serde(default = "default_switch_window")]
    pub switch_window: usize,
    #[serde(default = "default_switch_tol")]
    pub switch_tol: f64,
}

fn default_switch_window() -> usize {
    10
}

fn default_switch_tol() -> f64 {
    1e-3
}

impl StageConfig {
    pub fn new(pulse: &str, duration: f64, wp: f64, max_iterations: usize) -> Self {
        Self {
            pulse: pulse.into(),
            duration,
            wp,
            max_iterations,
            switch_window: default_switch_window(),
            switch_tol: default_switch_tol(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LineSearchParams {
    pub c1: f64,
    /// Backtracking factor.
    pub shrink: f64,
    /// Initial `(alpha_lambda, alpha_mu)`.
    pub alpha0: [f64; 2],
    pub max_backtracks: usize,
}

impl Default for LineSearchParams {
    fn default() -> Self {
        Self {
            c1: 1e-4,
            shrink: 0.5,
            alpha0: [1.0, 1.0],
            max_backtracks: 20,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BiasConfig {
    pub enabled: bool,
    /// Iteration at which the biasing weight reaches zero.
    pub k_bias: usize,
}

impl Default for BiasConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            k_bias: 50,
        }
    }
}

impl BiasConfig {
    /// `W(k) = max(0, 1 - k / k_bias)`, or 0 when disabled.
    pub fn weight(&self, k: usize) -> f64 {
        if !self.enabled || self.k_bias == 0 {
            return 0.0;
        }
        (1.0 - k as f64 / self.k_bias as f64).max(0.0)
    }
}

/// Box constraints applied after every update (Pa).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Bounds {
    pub lambda: [f64; 2],
    pub mu: [f64; 2],
}

impl Default for Bounds {
    fn default() -> Self {
        Self {
            lambda: [1e6, 1e10],
            mu: [1e6, 1e10],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InversionConfig {
    pub stages: Vec<StageConfig>,
    #[serde(default = "default_memory")]
    pub lbfgs_memory: usize,
    #[serde(default)]
    pub line_search: LineSearchParams,
    #[serde(default)]
    pub bias: BiasConfig,
    #[serde(default)]
    pub regularization: RegKind,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default)]
    pub bounds: Bounds,
    /// Stop once J drops to this value.
    #[serde(default)]
    pub tol: f64,
    #[serde(default)]
    pub freeze_lambda: bool,
    #[serde(default)]
    pub freeze_mu: bool,
    /// With an empty L-BFGS memory the direction `-g` is rescaled so that its
    /// largest entry is this fraction of the largest material value; 0 keeps `-g`.
    #[serde(default = "default_first_step")]
    pub first_step_fraction: f64,
}

fn default_memory() -> usize {
    15
}

fn default_epsilon() -> f64 {
    0.01
}

fn default_first_step() -> f64 {
    0.05
}

impl InversionConfig {
    pub fn new(stages: Vec<StageConfig>) -> Self {
        Self {
            stages,
            lbfgs_memory: default_memory(),
            line_search: LineSearchParams::default(),
            bias: BiasConfig::default(),
            regularization: RegKind::Tn,
            epsilon: default_epsilon(),
            bounds: Bounds::default(),
            tol: 0.0,
            freeze_lambda: false,
            freeze_mu: false,
            first_step_fraction: default_first_step(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.stages.is_empty() {
            return Err(FwiError::Config("no inversion stages".into()));
        }
        for s in &self.stages {
            if !(s.wp > 0.0 && s.wp <= 1.0) {
                return Err(FwiError::Config(format!("stage `{}`: wp = {} not in (0, 1]", s.pulse, s.wp)));
            }
            if !(s.duration > 0.0) {
                return Err(FwiError::Config(format!("stage `{}`: non-positive duration", s.pulse)));
            }
        }
        let ls = &self.line_search;
        if !(ls.c1 > 0.0 && ls.c1 < 1.0) || !(ls.shrink > 0.0 && ls.shrink < 1.0) {
            return Err(FwiError::Config("line search needs c1 and shrink in (0, 1)".into()));
        }
        if !(ls.alpha0[0] > 0.0 && ls.alpha0[1] > 0.0) {
            return Err(FwiError::Config("initial step lengths must be positive".into()));
        }
        if self.regularization == RegKind::Tv && !(self.epsilon > 0.0) {
            return Err(FwiError::Config("TV epsilon must be positive".into()));
        }
        if self.freeze_lambda && self.freeze_mu {
            return Err(FwiError::Config("both lambda and mu are frozen".into()));
        }
        for (name, b) in [("lambda", self.bounds.lambda), ("mu", self.bounds.mu)] {
            if !(b[0] < b[1]) {
                return Err(FwiError::Config(format!("empty {name} bounds {b:?}")));
            }
        }
        if !(self.first_step_fraction >= 0.0) {
            return Err(FwiError::Config("first_step_fraction must be non-negative".into()));
        }
        Ok(())
    }
}

/// Freezes one field: its gradient is zeroed, it is never updated or biased.
pub fn single_parameter_mode(mut config: InversionConfig, frozen: Parameter) -> Result<InversionConfig> {
    match frozen {
        Parameter::Lambda => config.freeze_lambda = true,
        Parameter::Mu => config.freeze_mu = true,
    }
    config.validate()?;
    Ok(config)
}

/// `R = wp |g_mis| / |g_reg|`; zero (with a warning) for a vanishing `g_reg`.
pub fn choose_reg_factor(g_reg: &[f64], g_mis: &[f64], wp: f64) -> f64 {
    let nr = norm(g_reg);
    if nr == 0.0 {
        log::warn!("regularization gradient vanishes; using R = 0");
        return 0.0;
    }
    wp * norm(g_mis) / nr
}

/// `|s_l| (W s_m/|s_m| + (1 - W) s_l/|s_l|)`.
pub fn bias_lambda_direction(s_lambda: &[f64], s_mu: &[f64], w: f64) -> Result<Vec<f64>> {
    if w == 0.0 {
        return Ok(s_lambda.to_vec());
    }
    let (nl, nm) = (norm(s_lambda), norm(s_mu));
    if nl == 0.0 || nm == 0.0 {
        return Err(FwiError::ZeroDirection);
    }
    Ok(s_lambda
        .iter()
        .zip(s_mu)
        .map(|(l, m)| nl * (w * m / nm + (1.0 - w) * l / nl))
        .collect())
}

/// Accepted trial of a backtracking line search.
#[derive(Debug)]
pub struct LineSearchOutcome<T> {
    pub alpha: [f64; 2],
    pub j_new: f64,
    /// Right-hand side `J0 + c1 (alpha_l g_l.s_l + alpha_m g_m.s_m)` that `j_new` beat.
    pub bound: f64,
    pub backtracks: usize,
    pub lambda: Vec<f64>,
    pub mu: Vec<f64>,
    pub payload: T,
}

/// Backtracking until `J(trial) < J0 + c1 (alpha_l g_l.s_l + alpha_m g_m.s_m)`.
/// Trials are clipped to `bounds`; a trial whose evaluation reports an unstable
/// solve counts as rejected.
#[allow(clippy::too_many_arguments)]
pub fn armijo_search<T>(
    mut j_eval: impl FnMut(&[f64], &[f64]) -> Result<(f64, T)>,
    j0: f64,
    lambda: &[f64],
    mu: &[f64],
    s: [&[f64]; 2],
    g: [&[f64]; 2],
    params: &LineSearchParams,
    bounds: &Bounds,
) -> Result<LineSearchOutcome<T>> {
    let gs = [dot(g[0], s[0]), dot(g[1], s[1])];
    let mut alpha = params.alpha0;
    for backtracks in 0..=params.max_backtracks {
        let trial = |m: &[f64], s: &[f64], a: f64, b: [f64; 2]| {
            let mut t: Vec<f64> = m.iter().zip(s).map(|(m, s)| m + a * s).collect();
            clip_values(&mut t, b[0], b[1]);
            t
        };
        let l = trial(lambda, s[0], alpha[0], bounds.lambda);
        let m = trial(mu, s[1], alpha[1], bounds.mu);
        let bound = j0 + params.c1 * (alpha[0] * gs[0] + alpha[1] * gs[1]);
        match j_eval(&l, &m) {
            Ok((j, payload)) if j < bound => {
                return Ok(LineSearchOutcome {
                    alpha,
                    j_new: j,
                    bound,
                    backtracks,
                    lambda: l,
                    mu: m,
                    payload,
                })
            }
            Ok((j, _)) => log::debug!("trial alpha = {alpha:?} rejected: J = {j:e} >= {bound:e}"),
            Err(FwiError::Unstable { .. }) => log::debug!("trial alpha = {alpha:?} rejected: unstable solve"),
            Err(e) => return Err(e),
        }
        alpha = [alpha[0] * params.shrink, alpha[1] * params.shrink];
    }
    Err(FwiError::LineSearchFailed {
        backtracks: params.max_backtracks,
    })
}

/// One line of the inversion history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub k: usize,
    pub stage: usize,
    pub f_max: f64,
    /// Objective at the start of the iteration (with this iteration's R).
    pub j: f64,
    pub misfit: f64,
    pub reg: f64,
    pub r_lambda: f64,
    pub r_mu: f64,
    pub alpha_lambda: f64,
    pub alpha_mu: f64,
    pub w: f64,
    pub backtracks: usize,
    /// Accepted objective and the Armijo bound it satisfied.
    pub j_new: f64,
    pub armijo_bound: f64,
    pub g_reg_norm: [f64; 2],
    pub g_mis_norm: [f64; 2],
    pub wp: f64,
}

/// Why the loop ended.
#[derive(Debug, Clone, PartialEq)]
pub enum StopReason {
    Converged,
    /// All stages ran to their switch criterion or iteration limit.
    Exhausted,
    LineSearchFailed { k: usize },
    Unstable { k: usize, message: String },
}

#[derive(Debug, Clone)]
pub struct InversionResult {
    pub lambda: Vec<f64>,
    pub mu: Vec<f64>,
    pub history: Vec<IterationRecord>,
    pub stop: StopReason,
}

/// Per-iteration view handed to an observer.
#[derive(Debug)]
pub struct IterationDetail<'a> {
    pub record: &'a IterationRecord,
    pub g_lambda: &'a [f64],
    pub g_mu: &'a [f64],
    /// L-BFGS λ direction before biasing.
    pub s_lambda_raw: &'a [f64],
    pub s_lambda: &'a [f64],
    pub s_mu: &'a [f64],
    /// Fields after the update.
    pub lambda: &'a [f64],
    pub mu: &'a [f64],
}

fn first_step(s: &mut [f64], m: &[f64], fraction: f64) {
    let smax = s.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let mmax = m.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if fraction > 0.0 && smax > 0.0 && mmax > 0.0 {
        let c = fraction * mmax / smax;
        s.iter_mut().for_each(|v| *v *= c);
    }
}

/// Staged L-BFGS inversion. `stages[i]` holds the data for `config.stages[i]`.
pub fn invert(
    config: &InversionConfig,
    problem: &Problem,
    stages: &[StageData],
    lambda0: &[f64],
    mu0: &[f64],
    observer: &mut dyn FnMut(&IterationDetail) -> Result<()>,
) -> Result<InversionResult> {
    config.validate()?;
    if stages.len() != config.stages.len() {
        return Err(FwiError::Config(format!(
            "{} stages configured, data for {}",
            config.stages.len(),
            stages.len()
        )));
    }
    for w in stages.windows(2) {
        if w[1].pulse.f_max < w[0].pulse.f_max {
            return Err(FwiError::Config("stage pulses must have nondecreasing f_max".into()));
        }
    }
    for s in stages {
        s.validate()?;
    }
    let space = problem.space();
    let n = space.len();
    let mut lambda = lambda0.to_vec();
    let mut mu = mu0.to_vec();
    if lambda.len() != n || mu.len() != n {
        return Err(FwiError::DimensionMismatch {
            expected: n,
            got: lambda.len().min(mu.len()),
        });
    }
    let mut history = Vec::new();
    let mut mem = [LbfgsMemory::new(config.lbfgs_memory), LbfgsMemory::new(config.lbfgs_memory)];
    let mut k = 0usize;
    let zeros = vec![0.0; n];

    for (si, (sc, data)) in config.stages.iter().zip(stages).enumerate() {
        log::info!("stage {si}: pulse {} (f_max {} Hz), wp = {}", data.pulse.name, data.pulse.f_max, sc.wp);
        mem.iter_mut().for_each(LbfgsMemory::clear);
        let mut previous: Option<[Vec<f64>; 4]> = None;
        let mut pass = match problem.forward(&lambda, &mu, data, true) {
            Ok(p) => p,
            Err(FwiError::Unstable { .. }) => {
                return Ok(InversionResult {
                    lambda,
                    mu,
                    history,
                    stop: StopReason::Unstable {
                        k,
                        message: "initial forward solve".into(),
                    },
                })
            }
            Err(e) => return Err(e),
        };
        let mut accepted: Vec<f64> = Vec::new();
        for it in 0..sc.max_iterations {
            let (mis_l, mis_m) = problem.misfit_gradient(&mut pass, data)?;
            let reg_l = space.reg_gradient(&lambda, config.regularization, config.epsilon)?;
            let reg_m = space.reg_gradient(&mu, config.regularization, config.epsilon)?;
            let r_l = if config.freeze_lambda { 0.0 } else { choose_reg_factor(&reg_l, &mis_l, sc.wp) };
            let r_m = if config.freeze_mu { 0.0 } else { choose_reg_factor(&reg_m, &mis_m, sc.wp) };
            let reg_spec = RegularizationSpec {
                kind: config.regularization,
                epsilon: config.epsilon,
                r_lambda: r_l,
                r_mu: r_m,
            };
            let reg = space.reg_value(&lambda, &mu, &reg_spec)?;
            let j = pass.misfit + reg;
            if j <= config.tol {
                log::info!("converged at k = {k}: J = {j:e}");
                return Ok(InversionResult {
                    lambda,
                    mu,
                    history,
                    stop: StopReason::Converged,
                });
            }
            let g_l = if config.freeze_lambda { zeros.clone() } else { space.reduced_gradient(&mis_l, &reg_l, r_l)? };
            let g_m = if config.freeze_mu { zeros.clone() } else { space.reduced_gradient(&mis_m, &reg_m, r_m)? };

            if let Some([pl, pm, pgl, pgm]) = previous.take() {
                let diff = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x - y).collect::<Vec<f64>>();
                if !config.freeze_lambda {
                    mem[0].push(diff(&lambda, &pl), diff(&g_l, &pgl));
                }
                if !config.freeze_mu {
                    mem[1].push(diff(&mu, &pm), diff(&g_m, &pgm));
                }
            }
            let direction = |mem: &LbfgsMemory, g: &[f64], m: &[f64]| {
                let mut s = mem.direction(g);
                if mem.is_empty() {
                    first_step(&mut s, m, config.first_step_fraction);
                }
                s
            };
            let eval = |l: &[f64], m: &[f64]| -> Result<(f64, ForwardPass)> {
                let p = problem.forward(l, m, data, true)?;
                let j = p.misfit + space.reg_value(l, m, &reg_spec)?;
                Ok((j, p))
            };
            let w = if config.freeze_lambda || config.freeze_mu { 0.0 } else { config.bias.weight(k) };
            // A failed search with curvature pairs is retried once from steepest descent.
            let found = loop {
                let s_l_raw = if config.freeze_lambda { zeros.clone() } else { direction(&mem[0], &g_l, &lambda) };
                let s_m = if config.freeze_mu { zeros.clone() } else { direction(&mem[1], &g_m, &mu) };
                let mut s_l = if w > 0.0 { bias_lambda_direction(&s_l_raw, &s_m, w)? } else { s_l_raw.clone() };
                if dot(&g_l, &s_l) + dot(&g_m, &s_m) >= 0.0 && w > 0.0 {
                    log::warn!("biased direction is not a descent direction at k = {k}; using the unbiased one");
                    s_l = s_l_raw.clone();
                }
                match armijo_search(
                    &eval,
                    j,
                    &lambda,
                    &mu,
                    [&s_l, &s_m],
                    [&g_l, &g_m],
                    &config.line_search,
                    &config.bounds,
                ) {
                    Ok(o) => break Some((o, s_l_raw, s_l, s_m)),
                    Err(FwiError::LineSearchFailed { .. }) if mem.iter().any(|m| !m.is_empty()) => {
                        log::warn!("line search failed at k = {k}; restarting from steepest descent");
                        mem.iter_mut().for_each(LbfgsMemory::clear);
                    }
                    Err(FwiError::LineSearchFailed { .. }) => break None,
                    Err(e) => return Err(e),
                }
            };
            let Some((outcome, s_l_raw, s_l, s_m)) = found else {
                if si + 1 < stages.len() {
                    log::warn!("line search failed at k = {k}; ending stage {si}");
                    break;
                }
                log::warn!("line search failed at k = {k}");
                return Ok(InversionResult {
                    lambda,
                    mu,
                    history,
                    stop: StopReason::LineSearchFailed { k },
                });
            };
            let record = IterationRecord {
                k,
                stage: si,
                f_max: data.pulse.f_max,
                j,
                misfit: pass.misfit,
                reg,
                r_lambda: r_l,
                r_mu: r_m,
                alpha_lambda: outcome.alpha[0],
                alpha_mu: outcome.alpha[1],
                w,
                backtracks: outcome.backtracks,
                j_new: outcome.j_new,
                armijo_bound: outcome.bound,
                g_reg_norm: [norm(&reg_l), norm(&reg_m)],
                g_mis_norm: [norm(&mis_l), norm(&mis_m)],
                wp: sc.wp,
            };
            log::info!(
                "k = {k:4}  J = {:.6e}  misfit = {:.6e}  alpha = ({:.3e}, {:.3e})  W = {w:.3}  backtracks = {}",
                j,
                pass.misfit,
                outcome.alpha[0],
                outcome.alpha[1],
                outcome.backtracks
            );
            observer(&IterationDetail {
                record: &record,
                g_lambda: &g_l,
                g_mu: &g_m,
                s_lambda_raw: &s_l_raw,
                s_lambda: &s_l,
                s_mu: &s_m,
                lambda: &outcome.lambda,
                mu: &outcome.mu,
            })?;
            history.push(record);
            previous = Some([
                std::mem::replace(&mut lambda, outcome.lambda),
                std::mem::replace(&mut mu, outcome.mu),
                g_l,
                g_m,
            ]);
            pass = outcome.payload;
            accepted.push(outcome.j_new);
            k += 1;

            let win = sc.switch_window;
            if win > 0 && accepted.len() > win {
                let old = accepted[accepted.len() - 1 - win];
                let new = accepted[accepted.len() - 1];
                if (old - new) / old < sc.switch_tol {
                    log::info!("stage {si} stalled after {} iterations", it + 1);
                    break;
                }
            }
        }
    }
    Ok(InversionResult {
        lambda,
        mu,
        history,
        stop: StopReason::Exhausted,
    })
}

/// History CSV with the columns `k,stage,J,misfit,reg,R_lambda,R_mu,alpha_lambda,alpha_mu,W,backtracks`.
pub fn history_csv(history: &[IterationRecord]) -> String {
    let mut s = String::from("k,stage,J,misfit,reg,R_lambda,R_mu,alpha_lambda,alpha_mu,W,backtracks\n");
    for r in history {
        let _ = writeln!(
            s,
            "{},{},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{},{}",
            r.k, r.stage, r.j, r.misfit, r.reg, r.r_lambda, r.r_mu, r.alpha_lambda, r.alpha_mu, r.w, r.backtracks
        );
    }
    s
}

#[cfg(test)]
mod tests;
