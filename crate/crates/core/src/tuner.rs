//! Random search over batch size, learning rate and iteration count.

use std::io::Write;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problems::Problem;
use crate::tensor::Rng;
use crate::training::{train, TrainConfig};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Objective {
    FinalLoss,
    FinalMae,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    /// Inclusive bounds.
    pub batch_size: (usize, usize),
    /// Inclusive bounds.
    pub iterations: (usize, usize),
    /// Sampled uniformly in `log`.
    pub lr: (f64, f64),
    pub trials: usize,
    pub concurrency: usize,
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self {
            batch_size: (1, 512),
            iterations: (1000, 50_000),
            lr: (1e-4, 1e-1),
            trials: 10,
            concurrency: 5,
        }
    }
}

impl SearchSpace {
    pub fn validate(&self) -> Result<()> {
        let ok = self.batch_size.0 >= 1
            && self.batch_size.0 <= self.batch_size.1
            && self.iterations.0 >= 1
            && self.iterations.0 <= self.iterations.1
            && self.lr.0 > 0.0
            && self.lr.0 < self.lr.1
            && self.trials >= 1
            && self.concurrency >= 1;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid search space {self:?}")))
        }
    }

    pub fn sample_lr(&self, rng: &mut Rng) -> f64 {
        let (lo, hi) = (self.lr.0.ln(), self.lr.1.ln());
        (lo + (hi - lo) * rng.next_f64()).exp()
    }

    pub fn sample(&self, rng: &mut Rng) -> Hyperparameters {
        let batch_size = rng.int_in(self.batch_size.0 as u64, self.batch_size.1 as u64) as usize;
        let iterations = rng.int_in(self.iterations.0 as u64, self.iterations.1 as u64) as usize;
        let lr = self.sample_lr(rng);
        Hyperparameters {
            batch_size,
            iterations,
            lr,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    pub batch_size: usize,
    pub iterations: usize,
    pub lr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrialStatus {
    Ok,
    Failed(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub trial: usize,
    pub params: Hyperparameters,
    pub seed: u64,
    /// `NaN` when the trial failed.
    pub objective: f64,
    pub status: TrialStatus,
    pub wall_time_s: f64,
}

impl TrialResult {
    pub fn failed(&self) -> bool {
        self.status != TrialStatus::Ok
    }
}

/// SplitMix64 finalizer over the master seed and trial index.
pub fn trial_seed(master: u64, trial: usize) -> u64 {
    let mut z = master ^ (trial as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// One trial per sampled configuration, all configurations drawn up front
/// from `master_seed` so scheduling cannot change any result. Results are
/// sorted by objective with failed trials last.
pub fn random_search(
    space: &SearchSpace,
    problem: &Problem,
    base: &TrainConfig,
    objective: Objective,
    master_seed: u64,
) -> Result<Vec<TrialResult>> {
    space.validate()?;
    let mut rng = Rng::new(master_seed);
    let plan: Vec<(usize, Hyperparameters, u64)> = (0..space.trials)
        .map(|i| (i, space.sample(&mut rng), trial_seed(master_seed, i)))
        .collect();
    let run = |&(i, hp, seed): &(usize, Hyperparameters, u64)| run_trial(problem, base, objective, i, hp, seed);

    let mut results: Vec<TrialResult> = if space.concurrency == 1 {
        plan.iter().map(run).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(space.concurrency)
            .build()
            .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
        pool.install(|| plan.par_iter().map(run).collect())
    };
    rank(&mut results);
    Ok(results)
}

/// Ascending objective, failed trials last, ties by trial index.
pub fn rank(results: &mut [TrialResult]) {
    results.sort_by(|a, b| {
        a.failed()
            .cmp(&b.failed())
            .then(a.objective.total_cmp(&b.objective))
            .then(a.trial.cmp(&b.trial))
    });
}

pub fn run_trial(
    problem: &Problem,
    base: &TrainConfig,
    objective: Objective,
    trial: usize,
    params: Hyperparameters,
    seed: u64,
) -> TrialResult {
    let cfg = TrainConfig {
        batch_size: params.batch_size,
        iterations: params.iterations,
        lr: params.lr,
        seed,
        ..base.clone()
    };
    let start = Instant::now();
    let outcome = train(problem, &cfg).map(|(_, h)| match objective {
        Objective::FinalLoss => h.final_loss(),
        Objective::FinalMae => h.final_mae,
    });
    let (objective, status) = match outcome {
        Ok(v) if v.is_finite() => (v, TrialStatus::Ok),
        Ok(v) => (f64::NAN, TrialStatus::Failed(format!("objective {v}"))),
        Err(e) => (f64::NAN, TrialStatus::Failed(e.to_string())),
    };
    TrialResult {
        trial,
        params,
        seed,
        objective,
        status,
        wall_time_s: start.elapsed().as_secs_f64(),
    }
}

/// Columns: `trial-id,batch_size,n_iters,lrate,objective,status,wall_time_s`.
pub fn write_csv(results: &[TrialResult], mut out: impl Write) -> Result<()> {
    writeln!(out, "trial-id,batch_size,n_iters,lrate,objective,status,wall_time_s")?;
    for r in results {
        let status = match &r.status {
            TrialStatus::Ok => "ok",
            TrialStatus::Failed(_) => "failed",
        };
        writeln!(
            out,
            "{},{},{},{:.16e},{:.16e},{},{:.3}",
            r.trial, r.params.batch_size, r.params.iterations, r.params.lr, r.objective, status, r.wall_time_s
        )?;
    }
    Ok(())
}
