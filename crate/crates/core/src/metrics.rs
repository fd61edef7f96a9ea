//! Per-run records: regret per round, communication per phase, summary.

use serde::{Deserialize, Serialize};

/// One played round.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: u64,
    pub action: usize,
    pub inst_regret: f64,
    pub cum_regret: f64,
}

/// One communication phase (or batch, for the single-user baselines).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseRecord {
    pub phase: u32,
    /// Nominal phase length `T_l` before truncation at the horizon.
    pub t_l: u64,
    /// Rounds actually played.
    pub rounds: u64,
    pub users: u64,
    /// Number of batches `H_l`.
    pub batches: u64,
    /// Distinct actions, i.e. the feedback dimension.
    pub actions: usize,
    /// Size of the active set at the start of the phase.
    pub active: usize,
    pub cost: u64,
    pub sigma_n: f64,
    pub clipped: usize,
}

/// Everything measured in one replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub algorithm: String,
    pub seed: u64,
    pub f_star: f64,
    pub rounds: Vec<RoundRecord>,
    pub phases: Vec<PhaseRecord>,
    pub total_regret: f64,
    pub total_cost: u64,
    pub wall_clock_secs: f64,
}

impl RunMetrics {
    pub fn horizon(&self) -> u64 {
        self.rounds.len() as u64
    }

    pub fn cumulative_regret(&self) -> Vec<f64> {
        self.rounds.iter().map(|r| r.cum_regret).collect()
    }

    /// Mean instantaneous regret over rounds `[from, to)` (0-based).
    pub fn mean_regret(&self, from: usize, to: usize) -> f64 {
        let slice = &self.rounds[from.min(self.rounds.len())..to.min(self.rounds.len())];
        if slice.is_empty() {
            return 0.0;
        }
        slice.iter().map(|r| r.inst_regret).sum::<f64>() / slice.len() as f64
    }

    pub fn summary(&self) -> Summary {
        Summary {
            algorithm: self.algorithm.clone(),
            seed: self.seed,
            horizon: self.horizon(),
            phases: self.phases.len(),
            total_regret: self.total_regret,
            total_cost: self.total_cost,
            wall_clock_secs: self.wall_clock_secs,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub algorithm: String,
    pub seed: u64,
    pub horizon: u64,
    pub phases: usize,
    pub total_regret: f64,
    pub total_cost: u64,
    pub wall_clock_secs: f64,
}

/// Accumulates rounds against the global values `f` over the decision set.
#[derive(Debug, Clone)]
pub struct RegretTracker<'a> {
    values: &'a [f64],
    f_star: f64,
    rounds: Vec<RoundRecord>,
    cum: f64,
}

impl<'a> RegretTracker<'a> {
    pub fn new(values: &'a [f64], horizon: u64) -> Self {
        let f_star = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        RegretTracker {
            values,
            f_star,
            rounds: Vec::with_capacity(horizon as usize),
            cum: 0.0,
        }
    }

    pub fn f_star(&self) -> f64 {
        self.f_star
    }

    pub fn played(&self) -> u64 {
        self.rounds.len() as u64
    }

    /// Records `count` consecutive plays of `action`.
    pub fn play(&mut self, action: usize, count: u64) {
        let inst = self.f_star - self.values[action];
        for _ in 0..count {
            self.cum += inst;
            self.rounds.push(RoundRecord {
                round: self.rounds.len() as u64 + 1,
                action,
                inst_regret: inst,
                cum_regret: self.cum,
            });
        }
    }

    pub fn finish(self, algorithm: &str, seed: u64, phases: Vec<PhaseRecord>, wall_clock_secs: f64) -> RunMetrics {
        let total_cost = phases.iter().map(|p| p.cost).sum();
        RunMetrics {
            algorithm: algorithm.to_string(),
            seed,
            f_star: self.f_star,
            total_regret: self.cum,
            rounds: self.rounds,
            phases,
            total_cost,
            wall_clock_secs,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tracker_prefix_sums() {
        let values = [0.5, 1.0, 0.25];
        let mut t = RegretTracker::new(&values, 4);
        t.play(0, 2);
        t.play(1, 1);
        t.play(2, 1);
        let m = t.finish("x", 3, Vec::new(), 0.0);
        let cum: Vec<f64> = m.cumulative_regret();
        assert_eq!(cum, vec![0.5, 1.0, 1.0, 1.75]);
        assert_eq!(m.total_regret, 1.75);
        assert_eq!(m.rounds[3].round, 4);
        assert_eq!(m.mean_regret(0, 2), 0.5);
    }
}
