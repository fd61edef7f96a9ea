//! Phase-then-batch elimination with distributed, biased feedback.
//!
//! Each phase doubles in length. Inside a phase the action of maximal
//! batched posterior variance is replayed for `⌊(C²−1)/Σ²⌋` rounds before
//! the next selection; at the end of the phase a fresh group of
//! `⌈2^{αl}⌉` users reports one averaged reward per distinct action, the
//! server (optionally privatized) builds the batched posterior mean, and
//! actions whose upper bound falls below the best lower bound are dropped.

use std::sync::Arc;
use std::time::Instant;

use log::warn;

use crate::environment::{phase_feedback, Instance};
use crate::error::{Error, Result};
use crate::metrics::{PhaseRecord, RegretTracker, RunMetrics};
use crate::posterior::BatchedPosterior;
use crate::privacy::{PrivacyContext, Privatizer};
use crate::rng::RunRngs;

/// Parameters of one DPBE run.
#[derive(Debug, Clone, PartialEq)]
pub struct DpbeConfig {
    pub alpha: f64,
    pub beta: f64,
    pub c: f64,
    pub sigma_sq: f64,
    pub v_sq: f64,
    pub rkhs_norm: f64,
    pub lambda: f64,
    pub horizon: u64,
    /// `γ̂_T`; only the privatizers use it.
    pub gamma_t: f64,
    /// Replace `⌈2^{αl}⌉` by a constant participant count.
    pub fixed_users: Option<u64>,
    /// Keep per-phase means, widths and active sets.
    pub trace: bool,
    /// Greedy information-gain curve `γ̂_0..γ̂_n`; when present the batch
    /// count and end-of-phase variance bounds are checked and violations
    /// logged.
    pub diagnostics: Option<Arc<Vec<f64>>>,
}

/// `λ = σ²`, or `σ²/v²` when a bias scale other than 1 is configured.
pub fn default_lambda(sigma_sq: f64, v_sq: f64) -> Result<f64> {
    let lambda = if v_sq > 0.0 && v_sq != 1.0 { sigma_sq / v_sq } else { sigma_sq };
    if lambda > 0.0 && lambda.is_finite() {
        Ok(lambda)
    } else {
        Err(Error::invalid("lambda", "default regularizer is not positive; set lambda explicitly"))
    }
}

/// `β = 1 / (|D| T)`.
pub fn default_beta(n: usize, horizon: u64) -> f64 {
    1.0 / (n as f64 * horizon as f64)
}

impl DpbeConfig {
    /// Defaults for an instance: `β = 1/(|D|T)`, the default `λ`, `B` and
    /// the noise and bias levels of the population.
    pub fn for_instance(inst: &Instance, alpha: f64, c: f64, horizon: u64) -> Result<Self> {
        Self::for_instance_with_lambda(inst, alpha, c, horizon, None)
    }

    /// As [`Self::for_instance`] with an optional regularizer override.
    pub fn for_instance_with_lambda(
        inst: &Instance,
        alpha: f64,
        c: f64,
        horizon: u64,
        lambda: Option<f64>,
    ) -> Result<Self> {
        let sigma_sq = inst.population.sigma().powi(2);
        let v_sq = inst.population.v_sq();
        let lambda = match lambda {
            Some(l) => l,
            None => default_lambda(sigma_sq, v_sq)?,
        };
        Ok(DpbeConfig {
            alpha,
            beta: default_beta(inst.len(), horizon.max(1)),
            c,
            sigma_sq,
            v_sq,
            rkhs_norm: inst.rkhs_norm,
            lambda,
            horizon,
            gamma_t: 0.0,
            fixed_users: None,
            trace: false,
            diagnostics: None,
        })
    }

    pub fn validate(&self, kappa_sq: f64) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::invalid("alpha", "must be positive"));
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return Err(Error::invalid("beta", "must lie in (0, 1)"));
        }
        if !(self.c > 1.0 && self.c.is_finite()) {
            return Err(Error::invalid("c", "must exceed 1"));
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::invalid("lambda", "must be positive"));
        }
        if self.horizon == 0 {
            return Err(Error::invalid("horizon", "must be >= 1"));
        }
        if !(self.gamma_t >= 0.0 && self.gamma_t.is_finite()) {
            return Err(Error::invalid("gamma_T", "must be nonnegative"));
        }
        if self.fixed_users == Some(0) {
            return Err(Error::invalid("fixed_users", "must be >= 1"));
        }
        if self.c * self.c - 1.0 < kappa_sq {
            warn!(
                "C^2 - 1 = {} is below kappa^2 = {kappa_sq}; early batches are forced to length 1",
                self.c * self.c - 1.0
            );
        }
        Ok(())
    }

    pub fn width_params(&self) -> WidthParams {
        WidthParams {
            v_sq: self.v_sq,
            beta: self.beta,
            rkhs_norm: self.rkhs_norm,
        }
    }

    /// Participants of phase `l` (from 1).
    pub fn users(&self, l: u32) -> u64 {
        self.fixed_users
            .unwrap_or_else(|| 2f64.powf(self.alpha * l as f64).ceil() as u64)
    }
}

/// Schedule of one phase.
#[derive(Debug, Clone)]
pub struct PhasePlan {
    /// `(action, count)` per distinct action, in order of first selection.
    pub schedule: Vec<(usize, u64)>,
    /// `(action, count)` per batch, in play order.
    pub batches: Vec<(usize, u64)>,
    /// Posterior after all batches; its actions align with `schedule`.
    pub posterior: BatchedPosterior,
}

impl PhasePlan {
    pub fn batch_count(&self) -> usize {
        self.batches.len()
    }
}

/// Batch length `max(1, ⌊(C²−1)/Σ²⌋)` capped at `remaining`.
pub fn batch_length(c: f64, variance: f64, remaining: u64) -> u64 {
    let raw = (c * c - 1.0) / variance;
    if !(raw < remaining as f64) {
        return remaining;
    }
    (raw.floor() as u64).clamp(1, remaining)
}

/// Lowest-index element of `active` with the largest posterior variance.
fn max_variance(inst: &Instance, posterior: &BatchedPosterior, active: &[usize]) -> (usize, f64) {
    let mut best = active[0];
    let mut best_v = f64::NEG_INFINITY;
    for &i in active {
        let v = posterior.variance(inst.set.point(i));
        if v > best_v {
            best = i;
            best_v = v;
        }
    }
    (best, best_v)
}

/// Plans the `rounds` plays of one phase over the sorted active set.
pub fn plan_phase(inst: &Instance, active: &[usize], rounds: u64, c: f64, lambda: f64) -> Result<PhasePlan> {
    if active.is_empty() {
        return Err(Error::invalid("active", "active set is empty"));
    }
    let mut posterior = BatchedPosterior::new(inst.kernel.clone(), lambda)?;
    let mut schedule: Vec<(usize, u64)> = Vec::new();
    let mut batches = Vec::new();
    let mut consumed = 0;
    while consumed < rounds {
        let (a, var) = max_variance(inst, &posterior, active);
        let count = batch_length(c, var, rounds - consumed);
        let pos = posterior.append(inst.set.point(a), count)?;
        if pos == schedule.len() {
            schedule.push((a, count));
        } else {
            schedule[pos].1 += count;
        }
        batches.push((a, count));
        consumed += count;
    }
    Ok(PhasePlan {
        schedule,
        batches,
        posterior,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WidthParams {
    pub v_sq: f64,
    pub beta: f64,
    pub rkhs_norm: f64,
}

/// The confidence width split into its terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConfidenceWidth {
    pub bias: f64,
    pub noise: f64,
    pub approximation: f64,
    pub privacy: f64,
}

impl ConfidenceWidth {
    pub fn total(&self) -> f64 {
        self.bias + self.noise + self.approximation + self.privacy
    }
}

/// `sqrt(2v²k(x,x)L/N) + sqrt(2Σ²(x)L/N) + B·Σ(x) + sqrt(2σ_n²L)` with
/// `L = ln(1/β)` and `N` participants.
pub fn confidence_width(
    variance: f64,
    prior_variance: f64,
    users: u64,
    params: &WidthParams,
    sigma_n: f64,
) -> ConfidenceWidth {
    let log_term = (1.0 / params.beta).ln();
    let n = users.max(1) as f64;
    let variance = variance.max(0.0);
    ConfidenceWidth {
        bias: (2.0 * params.v_sq * prior_variance * log_term / n).sqrt(),
        noise: (2.0 * variance * log_term / n).sqrt(),
        approximation: params.rkhs_norm * variance.sqrt(),
        privacy: (2.0 * sigma_n * sigma_n * log_term).sqrt(),
    }
}

/// Keeps `x` when `μ̄(x) + w(x) ≥ max_b (μ̄(b) − w(b))`.
pub fn eliminate(active: &[usize], mean: &[f64], width: &[f64]) -> Vec<usize> {
    let threshold = mean
        .iter()
        .zip(width)
        .map(|(m, w)| m - w)
        .fold(f64::NEG_INFINITY, f64::max);
    active
        .iter()
        .zip(mean.iter().zip(width))
        .filter(|(_, (m, w))| *m + *w >= threshold)
        .map(|(&a, _)| a)
        .collect()
}

/// Upper bound `4σ²C²/(C²−1)·γ` on the number of batches in a phase.
pub fn batch_count_bound(sigma_sq: f64, c: f64, gamma: f64) -> f64 {
    4.0 * sigma_sq * c * c / (c * c - 1.0) * gamma
}

/// Phase internals kept when [`DpbeConfig::trace`] is set.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseTrace {
    pub phase: u32,
    pub active: Vec<usize>,
    pub schedule: Vec<(usize, u64)>,
    pub users: u64,
    pub ybar: Vec<f64>,
    pub mean: Vec<f64>,
    pub width: Vec<f64>,
    pub survivors: Vec<usize>,
    pub sigma_n: f64,
}

#[derive(Debug, Clone)]
pub struct DpbeRun {
    pub metrics: RunMetrics,
    pub traces: Vec<PhaseTrace>,
}

/// Runs DPBE for `cfg.horizon` rounds.
pub fn run_dpbe(
    cfg: &DpbeConfig,
    inst: &mut Instance,
    privatizer: &Privatizer,
    rngs: &mut RunRngs,
    seed: u64,
) -> Result<DpbeRun> {
    cfg.validate(inst.kappa_sq)?;
    let start = Instant::now();
    let values = inst.values().to_vec();
    let mut tracker = RegretTracker::new(&values, cfg.horizon);
    let mut active: Vec<usize> = (0..inst.len()).collect();
    let mut phases = Vec::new();
    let mut traces = Vec::new();
    let widths = cfg.width_params();
    let ctx = PrivacyContext {
        kappa_sq: inst.kappa_sq,
        sigma_sq: cfg.sigma_sq,
        rkhs_norm: cfg.rkhs_norm,
        c: cfg.c,
        gamma_t: cfg.gamma_t,
    };

    let mut t = 0u64;
    let mut phase_len = 1u64;
    let mut l = 1u32;
    while t < cfg.horizon {
        let rounds = phase_len.min(cfg.horizon - t);
        let plan = plan_phase(inst, &active, rounds, cfg.c, cfg.lambda)?;
        for &(a, count) in &plan.batches {
            tracker.play(a, count);
        }
        if let Some(curve) = &cfg.diagnostics {
            check_bounds(cfg, inst, &plan, &active, phase_len, curve, l);
        }

        let users = cfg.users(l);
        let support: Vec<usize> = plan.schedule.iter().map(|&(a, _)| a).collect();
        let participants = inst
            .population
            .sample_participants_on(&support, users as usize, &mut rngs.participants)?;
        let feedback = phase_feedback(&inst.population, &participants, &plan.schedule, &mut rngs.noise)?;
        let cost = feedback.cost;
        let private = privatizer.apply(&feedback, &ctx, &mut rngs.privacy, &mut rngs.shuffler)?;

        let coeffs = plan.posterior.mean_coefficients(&private.ybar)?;
        let mut mean = Vec::with_capacity(active.len());
        let mut width = Vec::with_capacity(active.len());
        for &i in &active {
            let x = inst.set.point(i);
            mean.push(plan.posterior.mean_from_coefficients(x, &coeffs));
            let var = plan.posterior.variance(x);
            let prior = inst.kernel.eval_unchecked(x, x);
            width.push(confidence_width(var, prior, users, &widths, private.sigma_n).total());
        }
        let survivors = eliminate(&active, &mean, &width);

        phases.push(PhaseRecord {
            phase: l,
            t_l: phase_len,
            rounds,
            users,
            batches: plan.batch_count() as u64,
            actions: plan.schedule.len(),
            active: active.len(),
            cost,
            sigma_n: private.sigma_n,
            clipped: private.clipped,
        });
        if cfg.trace {
            traces.push(PhaseTrace {
                phase: l,
                active: active.clone(),
                schedule: plan.schedule.clone(),
                users,
                ybar: private.ybar,
                mean,
                width,
                survivors: survivors.clone(),
                sigma_n: private.sigma_n,
            });
        }
        active = survivors;
        t += rounds;
        phase_len = phase_len.saturating_mul(2);
        l += 1;
    }
    let elapsed = start.elapsed().as_secs_f64();
    let name = if privatizer.model() == crate::privacy::PrivacyModel::None {
        if cfg.fixed_users.is_some() {
            "dpbe_fixed"
        } else {
            "dpbe"
        }
    } else {
        "dp_dpbe"
    };
    Ok(DpbeRun {
        metrics: tracker.finish(name, seed, phases, elapsed),
        traces,
    })
}

fn check_bounds(
    cfg: &DpbeConfig,
    inst: &Instance,
    plan: &PhasePlan,
    active: &[usize],
    phase_len: u64,
    curve: &[f64],
    l: u32,
) {
    let Some(&gamma) = curve.get(phase_len as usize) else {
        return;
    };
    let bound = batch_count_bound(cfg.sigma_sq, cfg.c, gamma);
    if plan.batch_count() as f64 > bound {
        warn!("phase {l}: {} batches exceed the bound {bound:.3}", plan.batch_count());
    }
    let max_sd = active
        .iter()
        .map(|&i| plan.posterior.variance(inst.set.point(i)).sqrt())
        .fold(0.0, f64::max);
    let sd_bound = (2.0 * cfg.sigma_sq * cfg.c * cfg.c * gamma / phase_len as f64).sqrt();
    if max_sd > sd_bound {
        warn!("phase {l}: max posterior sd {max_sd:.4e} exceeds {sd_bound:.4e}");
    }
}
