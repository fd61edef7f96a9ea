//! Comparison algorithms: GP-UCB and batched pure exploration with one user
//! per round, and the two DPBE ablations (fixed participant count, no
//! batching).

use std::sync::Arc;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::dpbe::{confidence_width, eliminate, run_dpbe, DpbeConfig, DpbeRun};
use crate::environment::Instance;
use crate::error::{Error, Result};
use crate::kernels::InfoGainEstimator;
use crate::metrics::{PhaseRecord, RegretTracker, RunMetrics};
use crate::posterior::{DomainPosterior, IncrementalPosterior};
use crate::privacy::Privatizer;
use crate::rng::RunRngs;

/// Noise seen by an algorithm that queries one fresh user per round:
/// `σ² + v²κ²`.
pub fn effective_noise(sigma_sq: f64, v_sq: f64, kappa_sq: f64) -> f64 {
    sigma_sq + v_sq * kappa_sq
}

/// One fresh user's noisy reward at `action`.
fn single_user_reward<R: Rng + ?Sized>(inst: &mut Instance, action: usize, rng: &mut R) -> Result<f64> {
    let p = inst.population.sample_participants_on(&[action], 1, rng)?;
    let z: f64 = rng.sample(StandardNormal);
    Ok(p[0].values()[0] + inst.population.sigma() * z)
}

fn sub_gram(inst: &Instance, active: &[usize]) -> DMatrix<f64> {
    let g = inst.population.gram();
    DMatrix::from_fn(active.len(), active.len(), |i, j| g[(active[i], active[j])])
}

/// Parameters shared by the single-user baselines.
#[derive(Debug, Clone, PartialEq)]
pub struct SingleUserConfig {
    pub horizon: u64,
    /// Confidence level `β`.
    pub beta: f64,
    pub rkhs_norm: f64,
    /// Regularizer, normally the effective noise `σ² + v²κ²`.
    pub lambda: f64,
    /// Greedy `γ̂_0..γ̂_{T−1}` for GP-UCB; computed on demand when absent.
    pub gamma_curve: Option<Arc<Vec<f64>>>,
}

impl SingleUserConfig {
    pub fn for_instance(inst: &Instance, horizon: u64) -> Result<Self> {
        Self::for_instance_with_lambda(inst, horizon, None)
    }

    /// As [`Self::for_instance`] with an optional regularizer override.
    pub fn for_instance_with_lambda(inst: &Instance, horizon: u64, lambda: Option<f64>) -> Result<Self> {
        let lambda = lambda
            .unwrap_or_else(|| effective_noise(inst.population.sigma().powi(2), inst.population.v_sq(), inst.kappa_sq));
        if !(lambda > 0.0) {
            return Err(Error::invalid("lambda", "effective noise is zero; set lambda explicitly"));
        }
        Ok(SingleUserConfig {
            horizon,
            beta: crate::dpbe::default_beta(inst.len(), horizon.max(1)),
            rkhs_norm: inst.rkhs_norm,
            lambda,
            gamma_curve: None,
        })
    }

    fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::invalid("horizon", "must be >= 1"));
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return Err(Error::invalid("beta", "must lie in (0, 1)"));
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::invalid("lambda", "must be positive"));
        }
        Ok(())
    }
}

/// GP-UCB: `argmax μ_{t−1}(x) + β_t σ_{t−1}(x)` with
/// `β_t = B + sqrt(2(γ̂_{t−1} + 1 + ln(1/β)))·σ_eff`, `σ_eff² = λ`.
pub fn run_gp_ucb(cfg: &SingleUserConfig, inst: &mut Instance, rngs: &mut RunRngs, seed: u64) -> Result<RunMetrics> {
    cfg.validate()?;
    let t_max = cfg.horizon as usize;
    let curve = match &cfg.gamma_curve {
        Some(c) if c.len() >= t_max => Arc::clone(c),
        _ => Arc::new(
            InfoGainEstimator::new(&inst.kernel, &inst.set, cfg.lambda)?
                .with_budget(t_max)
                .curve(t_max - 1)?,
        ),
    };
    let start = Instant::now();
    let values = inst.values().to_vec();
    let mut tracker = RegretTracker::new(&values, cfg.horizon);
    let mut post = DomainPosterior::new(inst.population.gram().clone(), cfg.lambda)?;
    let sigma_eff = cfg.lambda.sqrt();
    let log_term = (1.0 / cfg.beta).ln();
    let mut seen = vec![false; inst.len()];
    for t in 1..=t_max {
        let beta_t = cfg.rkhs_norm + (2.0 * (curve[t - 1] + 1.0 + log_term)).sqrt() * sigma_eff;
        let mut best = 0;
        let mut best_v = f64::NEG_INFINITY;
        for i in 0..inst.len() {
            let v = post.mean(i) + beta_t * post.variance(i).sqrt();
            if v > best_v {
                best = i;
                best_v = v;
            }
        }
        let y = single_user_reward(inst, best, &mut rngs.participants)?;
        post.observe(best, y);
        tracker.play(best, 1);
        seen[best] = true;
    }
    let phases = vec![PhaseRecord {
        phase: 1,
        t_l: cfg.horizon,
        rounds: cfg.horizon,
        users: cfg.horizon,
        batches: cfg.horizon,
        actions: seen.iter().filter(|s| **s).count(),
        active: inst.len(),
        cost: cfg.horizon,
        sigma_n: 0.0,
        clipped: 0,
    }];
    let elapsed = start.elapsed().as_secs_f64();
    Ok(tracker.finish("gp_ucb", seed, phases, elapsed))
}

/// `max(2, ⌈log₂ log₂ T⌉)`.
pub fn bpe_batch_count(horizon: u64) -> usize {
    let ll = (horizon as f64).log2().log2().ceil();
    if ll.is_finite() && ll > 2.0 {
        ll as usize
    } else {
        2
    }
}

/// Batch lengths `N_i = ⌈sqrt(T·sqrt(N_{i−1}))⌉`, `N₀ = 1`; the last batch
/// takes the remaining rounds.
pub fn bpe_batch_sizes(horizon: u64) -> Result<Vec<u64>> {
    if horizon < 4 {
        return Err(Error::invalid("horizon", "batched pure exploration needs T >= 4"));
    }
    let m = bpe_batch_count(horizon);
    let t = horizon as f64;
    let mut sizes = Vec::with_capacity(m);
    let mut prev = 1.0f64;
    let mut used = 0u64;
    for i in 0..m {
        let left = horizon - used;
        let later = (m - i - 1) as u64;
        let n = if later == 0 {
            left
        } else {
            let n = (t * prev.sqrt()).sqrt().ceil() as u64;
            n.clamp(1, left - later)
        };
        sizes.push(n);
        used += n;
        prev = n as f64;
    }
    Ok(sizes)
}

/// Batched pure exploration: within each batch play the maximum-variance
/// action of the active set, then eliminate with width
/// `(B + sqrt(2 ln(1/β)))·σ(x)`.
pub fn run_bpe(cfg: &SingleUserConfig, inst: &mut Instance, rngs: &mut RunRngs, seed: u64) -> Result<RunMetrics> {
    cfg.validate()?;
    let sizes = bpe_batch_sizes(cfg.horizon)?;
    let start = Instant::now();
    let values = inst.values().to_vec();
    let mut tracker = RegretTracker::new(&values, cfg.horizon);
    let mut active: Vec<usize> = (0..inst.len()).collect();
    let mut phases = Vec::with_capacity(sizes.len());
    let scale = cfg.rkhs_norm + (2.0 * (1.0 / cfg.beta).ln()).sqrt();
    for (b, &n) in sizes.iter().enumerate() {
        let mut post = DomainPosterior::new(sub_gram(inst, &active), cfg.lambda)?;
        let mut seen = vec![false; active.len()];
        for _ in 0..n {
            let i = post.argmax_variance();
            let y = single_user_reward(inst, active[i], &mut rngs.participants)?;
            post.observe(i, y);
            tracker.play(active[i], 1);
            seen[i] = true;
        }
        phases.push(PhaseRecord {
            phase: b as u32 + 1,
            t_l: n,
            rounds: n,
            users: n,
            batches: n,
            actions: seen.iter().filter(|s| **s).count(),
            active: active.len(),
            cost: n,
            sigma_n: 0.0,
            clipped: 0,
        });
        if b + 1 < sizes.len() {
            let mean: Vec<f64> = (0..active.len()).map(|i| post.mean(i)).collect();
            let width: Vec<f64> = (0..active.len()).map(|i| scale * post.variance(i).sqrt()).collect();
            active = eliminate(&active, &mean, &width);
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    Ok(tracker.finish("bpe", seed, phases, elapsed))
}

/// `⌊Σ_l |U_l|·N_l / Σ_l N_l⌋` with `N_l` the feedback dimension of phase
/// `l` in a reference DPBE run.
pub fn fixed_users_from_reference(reference: &[PhaseRecord]) -> Result<u64> {
    let dims: u64 = reference.iter().map(|p| p.actions as u64).sum();
    if dims == 0 {
        return Err(Error::MissingReference("dpbe_fixed"));
    }
    let weighted: u64 = reference.iter().map(|p| p.users * p.actions as u64).sum();
    Ok((weighted / dims).max(1))
}

/// DPBE with the participant count held at the reference run's weighted
/// mean.
pub fn run_dpbe_fixed(
    cfg: &DpbeConfig,
    inst: &mut Instance,
    reference: &RunMetrics,
    rngs: &mut RunRngs,
    seed: u64,
) -> Result<DpbeRun> {
    let users = fixed_users_from_reference(&reference.phases)?;
    let cfg = DpbeConfig {
        fixed_users: Some(users),
        ..cfg.clone()
    };
    run_dpbe(&cfg, inst, &Privatizer::None, rngs, seed)
}

/// DPBE where every round is its own selection: the maximum-variance action
/// under the per-round posterior is played once, users report one averaged
/// reward per round, and the posterior mean is the per-round one.
pub fn run_dpbe_nobatching(cfg: &DpbeConfig, inst: &mut Instance, rngs: &mut RunRngs, seed: u64) -> Result<RunMetrics> {
    cfg.validate(inst.kappa_sq)?;
    let start = Instant::now();
    let values = inst.values().to_vec();
    let mut tracker = RegretTracker::new(&values, cfg.horizon);
    let mut active: Vec<usize> = (0..inst.len()).collect();
    let mut phases = Vec::new();
    let widths = cfg.width_params();
    let sigma = inst.population.sigma();

    let mut t = 0u64;
    let mut phase_len = 1u64;
    let mut l = 1u32;
    while t < cfg.horizon {
        let rounds = phase_len.min(cfg.horizon - t);
        let mut post = IncrementalPosterior::new(sub_gram(inst, &active), cfg.lambda)?;
        for _ in 0..rounds {
            let i = post.argmax_variance();
            post.push(i);
            tracker.play(active[i], 1);
        }

        // local positions of the distinct played actions
        let mut slot = vec![usize::MAX; active.len()];
        let mut support = Vec::new();
        for &i in post.history() {
            if slot[i] == usize::MAX {
                slot[i] = support.len();
                support.push(active[i]);
            }
        }
        let users = cfg.users(l);
        let participants = inst
            .population
            .sample_participants_on(&support, users as usize, &mut rngs.participants)?;
        let mut user_mean = vec![0.0; support.len()];
        for p in &participants {
            for (m, v) in user_mean.iter_mut().zip(p.values()) {
                *m += v;
            }
        }
        user_mean.iter_mut().for_each(|m| *m /= users as f64);
        let noise_sd = sigma / (users as f64).sqrt();
        let ybar: Vec<f64> = post
            .history()
            .iter()
            .map(|&i| {
                let z: f64 = rngs.noise.sample(StandardNormal);
                user_mean[slot[i]] + noise_sd * z
            })
            .collect();

        let z = post.whiten(&ybar)?;
        let mut mean = Vec::with_capacity(active.len());
        let mut width = Vec::with_capacity(active.len());
        for (k, &i) in active.iter().enumerate() {
            mean.push(post.mean(k, &z));
            let prior = inst.population.gram()[(i, i)];
            width.push(confidence_width(post.variance(k), prior, users, &widths, 0.0).total());
        }
        let survivors = eliminate(&active, &mean, &width);
        phases.push(PhaseRecord {
            phase: l,
            t_l: phase_len,
            rounds,
            users,
            batches: rounds,
            actions: support.len(),
            active: active.len(),
            cost: users * rounds,
            sigma_n: 0.0,
            clipped: 0,
        });
        active = survivors;
        t += rounds;
        phase_len = phase_len.saturating_mul(2);
        l += 1;
    }
    let elapsed = start.elapsed().as_secs_f64();
    Ok(tracker.finish("dpbe_nobatching", seed, phases, elapsed))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bpe_schedule() {
        assert_eq!(bpe_batch_count(40_000), 4);
        let sizes = bpe_batch_sizes(40_000).unwrap();
        assert_eq!(sizes.len(), 4);
        assert_eq!(sizes[0], 200);
        assert_eq!(sizes.iter().sum::<u64>(), 40_000);
        assert_eq!(bpe_batch_sizes(4).unwrap(), vec![2, 2]);
        assert!(bpe_batch_sizes(3).is_err());
    }

    fn record(users: u64, actions: usize) -> PhaseRecord {
        PhaseRecord {
            phase: 1,
            t_l: 1,
            rounds: 1,
            users,
            batches: 1,
            actions,
            active: 1,
            cost: users * actions as u64,
            sigma_n: 0.0,
            clipped: 0,
        }
    }

    #[test]
    fn fixed_users_weighted_mean() {
        assert_eq!(fixed_users_from_reference(&[record(8, 3), record(8, 3)]).unwrap(), 8);
        assert_eq!(fixed_users_from_reference(&[record(2, 1), record(8, 3)]).unwrap(), 6);
        assert!(fixed_users_from_reference(&[]).is_err());
    }
}
