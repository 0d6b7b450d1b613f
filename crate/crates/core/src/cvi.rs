//! Alternating stochastic optimization of the marginal parameters λ (copula
//! fixed) and the copula parameters η (marginals fixed).

use std::time::Instant;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::bicop::{Family, PairCopula};
use crate::dist::CopulaVariationalDist;
use crate::error::{Error, Result};
use crate::grad::{elbo, grad_score, reparam_blocks, GradEstimate, TargetModel, DEFAULT_SAMPLES};
use crate::marginal::{Marginal, MarginalSet};
use crate::rng::{sample_rng, uniforms};
use crate::special::norm_ppf;
use crate::vine::Vine;

/// Stream of the per-fit generator that hands out batch seeds.
const BATCH_SEED_STREAM: u64 = u64::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Estimator {
    Score,
    Reparam,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case", deny_unknown_fields)]
pub enum StepRule {
    Adam { alpha: f64, beta1: f64, beta2: f64, eps: f64 },
    /// `ρ_t = a / (b + t)^γ`.
    RobbinsMonro { a: f64, b: f64, gamma: f64 },
}

impl Default for StepRule {
    fn default() -> Self {
        StepRule::Adam {
            alpha: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl StepRule {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        match *self {
            StepRule::Adam { alpha, beta1, beta2, eps } => {
                if !(alpha > 0.0 && alpha.is_finite()) {
                    return bad(format!("step_rule.alpha must be positive, got {alpha}"));
                }
                if !((0.0..1.0).contains(&beta1) && (0.0..1.0).contains(&beta2)) {
                    return bad(format!("step_rule betas must lie in [0, 1), got {beta1}, {beta2}"));
                }
                if eps.is_nan() || eps <= 0.0 {
                    return bad(format!("step_rule.eps must be positive, got {eps}"));
                }
            }
            StepRule::RobbinsMonro { a, b, gamma } => {
                if !(a > 0.0 && a.is_finite()) {
                    return bad(format!("step_rule.a must be positive, got {a}"));
                }
                if !(b >= 0.0 && b.is_finite()) {
                    return bad(format!("step_rule.b must be non-negative, got {b}"));
                }
                if !(gamma > 0.5 && gamma <= 1.0) {
                    return bad(format!("step_rule.gamma must lie in (0.5, 1], got {gamma}"));
                }
            }
        }
        Ok(())
    }
}

/// Optimizer memory for one parameter block.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct StepState {
    pub first: Vec<f64>,
    pub second: Vec<f64>,
}

/// Ascent step for iteration `t ≥ 1`.
pub fn step_size(rule: &StepRule, t: usize, grad: &[f64], mut state: StepState) -> (Vec<f64>, StepState) {
    assert!(t >= 1, "iterations are counted from 1");
    match *rule {
        StepRule::RobbinsMonro { a, b, gamma } => {
            let rho = a / (b + t as f64).powf(gamma);
            (grad.iter().map(|g| rho * g).collect(), state)
        }
        StepRule::Adam { alpha, beta1, beta2, eps } => {
            if state.first.len() != grad.len() {
                state.first = vec![0.0; grad.len()];
                state.second = vec![0.0; grad.len()];
            }
            let c1 = 1.0 - beta1.powi(t as i32);
            let c2 = 1.0 - beta2.powi(t as i32);
            let mut step = Vec::with_capacity(grad.len());
            for (i, &g) in grad.iter().enumerate() {
                state.first[i] = beta1 * state.first[i] + (1.0 - beta1) * g;
                state.second[i] = beta2 * state.second[i] + (1.0 - beta2) * g * g;
                step.push(alpha * (state.first[i] / c1) / ((state.second[i] / c2).sqrt() + eps));
            }
            (step, state)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CviConfig {
    pub estimator: Estimator,
    /// Monte Carlo samples per gradient estimate.
    pub m: usize,
    /// A phase ends once the smoothed gradient norm drops below this.
    pub inner_tol: f64,
    pub inner_max_iters: usize,
    /// The fit ends once a full (λ, η) cycle improves the measured ELBO by less.
    pub outer_tol_elbo: f64,
    /// Upper bound on the number of phases (one phase optimizes one block).
    pub outer_max_phases: usize,
    pub step_rule: StepRule,
    pub seed: u64,
    /// Samples and seed of the ELBO measured between phases.
    pub m_eval: usize,
    pub eval_seed: u64,
    /// Exponential smoothing weight of the gradient used by the stopping rule.
    pub grad_smoothing: f64,
    /// Gradient estimates are rescaled to at most this Euclidean norm.
    pub clip_norm: f64,
    /// Start from the independence copula and switch each free edge to its
    /// configured family at the first η phase.
    pub init_independence: bool,
    /// Kendall's τ of the near-independence starting copulas.
    pub tau0: f64,
}

impl Default for CviConfig {
    fn default() -> Self {
        CviConfig {
            estimator: Estimator::Reparam,
            m: DEFAULT_SAMPLES,
            inner_tol: 1e-3,
            inner_max_iters: 2000,
            outer_tol_elbo: 0.01,
            outer_max_phases: 20,
            step_rule: StepRule::default(),
            seed: 0,
            m_eval: 100_000,
            eval_seed: 1,
            grad_smoothing: 0.9,
            clip_norm: 1e3,
            init_independence: true,
            tau0: 0.01,
        }
    }
}

impl CviConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        let min_m = if self.estimator == Estimator::Score { 2 } else { 1 };
        if self.m < min_m {
            return bad(format!("m must be at least {min_m}, got {}", self.m));
        }
        if self.m_eval < 2 {
            return bad(format!("m_eval must be at least 2, got {}", self.m_eval));
        }
        if !(self.inner_tol >= 0.0 && self.outer_tol_elbo >= 0.0) {
            return bad("tolerances must be non-negative".into());
        }
        if !(0.0..1.0).contains(&self.grad_smoothing) {
            return bad(format!("grad_smoothing must lie in [0, 1), got {}", self.grad_smoothing));
        }
        if self.clip_norm.is_nan() || self.clip_norm <= 0.0 {
            return bad(format!("clip_norm must be positive, got {}", self.clip_norm));
        }
        if !(self.tau0 > 0.0 && self.tau0 < 0.5) {
            return bad(format!("tau0 must lie in (0, 0.5), got {}", self.tau0));
        }
        self.step_rule.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PhaseKind {
    Lambda,
    Eta,
}

impl PhaseKind {
    pub fn name(self) -> &'static str {
        match self {
            PhaseKind::Lambda => "lambda",
            PhaseKind::Eta => "eta",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseRecord {
    pub phase: usize,
    pub kind: PhaseKind,
    pub iters: usize,
    pub elbo_before: f64,
    pub elbo_after: f64,
    pub std_err_before: f64,
    pub std_err_after: f64,
    /// Smoothed gradient norm when the phase ended.
    pub grad_norm: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FitTrace {
    pub phases: Vec<PhaseRecord>,
    pub converged: bool,
}

impl FitTrace {
    pub fn final_elbo(&self) -> Option<(f64, f64)> {
        self.phases.last().map(|p| (p.elbo_after, p.std_err_after))
    }

    /// The trace with wall-clock times zeroed, for comparing runs.
    pub fn without_timing(&self) -> FitTrace {
        let mut t = self.clone();
        for p in &mut t.phases {
            p.seconds = 0.0;
        }
        t
    }
}

/// Random starting marginals: Gaussian with locations `spread · N(0, 1)` and unit scale.
pub fn random_marginals(d: usize, seed: u64, spread: f64) -> MarginalSet {
    let u = uniforms(seed, 0, d);
    MarginalSet::new(u.iter().map(|&x| Marginal::gaussian(spread * norm_ppf(x), 1.0)).collect())
        .expect("gaussian marginals are valid")
}

/// A copula of the same family and rotation with Kendall's τ of size `tau0`.
fn near_independence(pc: &PairCopula, tau0: f64) -> Result<PairCopula> {
    let tau = if pc.rotation.negates_tau() { -tau0 } else { tau0 };
    let mut out = PairCopula::from_tau(pc.family, pc.rotation, tau)?;
    if pc.family == Family::StudentT {
        out.theta[1] = pc.theta[1];
    }
    Ok(out)
}

/// Copy of `vine` with every free edge set to the independence copula.
fn independence_start(vine: &Vine) -> Result<Vine> {
    let mut out = vine.clone();
    for id in vine.free_edges() {
        out.set_pair_copula(id, PairCopula::independence())?;
    }
    Ok(out)
}

/// Copy of `current` with the edges free in `configured` switched back to
/// their configured family at a near-independence parameter.
fn switch_families(current: &Vine, configured: &Vine, tau0: f64) -> Result<Vine> {
    let mut out = current.clone();
    for id in configured.free_edges() {
        out.set_pair_copula(id, near_independence(&configured.edge(id).pc, tau0)?)?;
    }
    Ok(out)
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn clip(g: &mut [f64], max_norm: f64) {
    let n = norm(g);
    if n > max_norm {
        for x in g.iter_mut() {
            *x *= max_norm / n;
        }
    }
}

struct Block {
    kind: PhaseKind,
    state: StepState,
    t: usize,
}

impl Block {
    fn params(&self, dist: &CopulaVariationalDist) -> Vec<f64> {
        match self.kind {
            PhaseKind::Lambda => dist.lambda(),
            PhaseKind::Eta => dist.eta(),
        }
    }

    fn set(&self, dist: &mut CopulaVariationalDist, p: &[f64]) -> Result<()> {
        match self.kind {
            PhaseKind::Lambda => dist.set_lambda(p),
            PhaseKind::Eta => dist.set_eta(p),
        }
    }

    fn gradient<M: TargetModel + ?Sized>(
        &self,
        dist: &CopulaVariationalDist,
        model: &M,
        cfg: &CviConfig,
        seed: u64,
    ) -> Result<Vec<f64>> {
        let est: GradEstimate = match cfg.estimator {
            Estimator::Score => grad_score(dist, model, cfg.m, seed)?,
            Estimator::Reparam => reparam_blocks(dist, model, cfg.m, seed, self.kind == PhaseKind::Eta)?,
        };
        Ok(match self.kind {
            PhaseKind::Lambda => est.grad_lambda,
            PhaseKind::Eta => est.grad_eta,
        })
    }
}

fn optimization_error(phase: usize, iteration: usize, err: impl std::fmt::Display) -> Error {
    Error::Optimization {
        phase,
        iteration,
        message: err.to_string(),
    }
}

/// Run one phase; returns iterations used and the final smoothed gradient norm.
fn run_phase<M: TargetModel + ?Sized>(
    dist: &mut CopulaVariationalDist,
    model: &M,
    cfg: &CviConfig,
    block: &mut Block,
    seeds: &mut impl RngCore,
    phase: usize,
) -> Result<(usize, f64)> {
    let mut params = block.params(dist);
    if params.is_empty() {
        return Ok((0, 0.0));
    }
    let mut smooth = vec![0.0; params.len()];
    let mut smooth_norm = f64::INFINITY;
    for it in 1..=cfg.inner_max_iters {
        let seed = seeds.next_u64();
        let mut g = block.gradient(dist, model, cfg, seed).map_err(|e| optimization_error(phase, it, e))?;
        if let Some(i) = g.iter().position(|x| !x.is_finite()) {
            return Err(optimization_error(phase, it, format!("non-finite gradient in coordinate {i}")));
        }
        clip(&mut g, cfg.clip_norm);
        let w = cfg.grad_smoothing;
        for (s, x) in smooth.iter_mut().zip(&g) {
            *s = w * *s + (1.0 - w) * x;
        }
        let debias = 1.0 - w.powi(it as i32);
        smooth_norm = norm(&smooth) / debias;

        block.t += 1;
        let (step, state) = step_size(&cfg.step_rule, block.t, &g, std::mem::take(&mut block.state));
        block.state = state;
        let next: Vec<f64> = params.iter().zip(&step).map(|(p, s)| p + s).collect();
        if let Some(i) = next.iter().position(|x| !x.is_finite()) {
            return Err(optimization_error(phase, it, format!("non-finite parameter in coordinate {i}")));
        }
        if let Err(e) = block.set(dist, &next) {
            block.set(dist, &params).expect("restoring accepted parameters");
            return Err(optimization_error(phase, it, e));
        }
        params = next;
        if smooth_norm < cfg.inner_tol {
            return Ok((it, smooth_norm));
        }
    }
    Ok((cfg.inner_max_iters, smooth_norm))
}

fn measure<M: TargetModel + ?Sized>(dist: &CopulaVariationalDist, model: &M, cfg: &CviConfig, phase: usize) -> Result<GradEstimate> {
    let est = elbo(dist, model, cfg.m_eval, cfg.eval_seed).map_err(|e| optimization_error(phase, 0, e))?;
    if !est.elbo.is_finite() {
        return Err(optimization_error(phase, 0, format!("measured ELBO is {}", est.elbo)));
    }
    Ok(est)
}

/// Fit `dist` to `model` in place.
///
/// On error `dist` holds the last parameters that produced finite values.
pub fn fit_in_place<M: TargetModel + ?Sized>(
    dist: &mut CopulaVariationalDist,
    model: &M,
    cfg: &CviConfig,
) -> Result<FitTrace> {
    fit_observed(dist, model, cfg, |_, _| {})
}

/// As [`fit_in_place`], calling `on_phase` with the record and the current
/// distribution after every completed phase.
pub fn fit_observed<M: TargetModel + ?Sized>(
    dist: &mut CopulaVariationalDist,
    model: &M,
    cfg: &CviConfig,
    mut on_phase: impl FnMut(&PhaseRecord, &CopulaVariationalDist),
) -> Result<FitTrace> {
    cfg.validate()?;
    if model.dim() != dist.dim() {
        return Err(Error::Structure(format!(
            "model has dimension {} but the variational family {}",
            model.dim(),
            dist.dim()
        )));
    }
    let configured = dist.vine.clone();
    let mut pending_switch = false;
    if cfg.init_independence && configured.n_eta() > 0 {
        dist.vine = independence_start(&configured)?;
        pending_switch = true;
    }
    let mut seeds = sample_rng(cfg.seed, BATCH_SEED_STREAM);
    let mut lambda_block = Block {
        kind: PhaseKind::Lambda,
        state: StepState::default(),
        t: 0,
    };
    let mut eta_block = Block {
        kind: PhaseKind::Eta,
        state: StepState::default(),
        t: 0,
    };
    let mut trace = FitTrace::default();
    let mut current = measure(dist, model, cfg, 0)?;
    let mut cycle_start = current.elbo;
    for phase in 0..cfg.outer_max_phases {
        let kind = if phase % 2 == 0 { PhaseKind::Lambda } else { PhaseKind::Eta };
        if kind == PhaseKind::Eta && pending_switch {
            dist.vine = switch_families(&dist.vine, &configured, cfg.tau0)?;
            pending_switch = false;
            current = measure(dist, model, cfg, phase)?;
        }
        let started = Instant::now();
        let before = current.clone();
        let block = match kind {
            PhaseKind::Lambda => &mut lambda_block,
            PhaseKind::Eta => &mut eta_block,
        };
        let (iters, grad_norm) = run_phase(dist, model, cfg, block, &mut seeds, phase)?;
        current = measure(dist, model, cfg, phase)?;
        trace.phases.push(PhaseRecord {
            phase,
            kind,
            iters,
            elbo_before: before.elbo,
            elbo_after: current.elbo,
            std_err_before: before.elbo_std_err,
            std_err_after: current.elbo_std_err,
            grad_norm,
            seconds: started.elapsed().as_secs_f64(),
        });
        on_phase(trace.phases.last().expect("just pushed"), dist);
        log::info!(
            "phase {phase} ({}): {iters} iterations, ELBO {:.6} -> {:.6}",
            kind.name(),
            before.elbo,
            current.elbo
        );
        if kind == PhaseKind::Eta {
            if current.elbo - cycle_start < cfg.outer_tol_elbo {
                trace.converged = true;
                break;
            }
            cycle_start = current.elbo;
        }
    }
    Ok(trace)
}

/// Fit a copy of `dist0`; see [`fit_in_place`].
pub fn fit<M: TargetModel + ?Sized>(
    dist0: &CopulaVariationalDist,
    model: &M,
    cfg: &CviConfig,
) -> Result<(CopulaVariationalDist, FitTrace)> {
    let mut dist = dist0.clone();
    let trace = fit_in_place(&mut dist, model, cfg)?;
    Ok((dist, trace))
}

#[cfg(test)]
mod tests;
