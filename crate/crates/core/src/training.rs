//! The training loop, loss history and error against the oracles.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::autodiff::Graph;
use crate::error::{shape_err, Error, Result};
use crate::nn::{Mode, Network, NetworkSpec};
use crate::optim::{AdamConfig, LrSchedule, Optimizer};
use crate::problems::{Problem, ProblemId};
use crate::tensor::{Rng, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct TrainConfig {
    pub problem: ProblemId,
    pub network: NetworkSpec,
    pub iterations: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub schedule: LrSchedule,
    pub seed: u64,
    pub optimizer: OptimizerKind,
    pub clip_norm: Option<f64>,
}

impl TrainConfig {
    /// The paper's settings for `problem`.
    pub fn for_problem(problem: ProblemId) -> Self {
        let d = Problem::new(problem).defaults();
        Self {
            problem,
            network: d.network,
            iterations: d.iterations,
            batch_size: d.batch_size,
            lr: d.lr,
            schedule: d.schedule,
            seed: 0,
            optimizer: OptimizerKind::Adam,
            clip_norm: None,
        }
    }

    pub fn validate(&self, problem: &Problem) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Config("iterations must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.lr
            )));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return Err(Error::Config(format!("clip norm must be positive, got {c}")));
            }
        }
        if self.network.input_dim != problem.input_dim() || self.network.output_dim != problem.output_dim() {
            return Err(Error::Config(format!(
                "{} needs a {} -> {} network, got {} -> {}",
                problem.id(),
                problem.input_dim(),
                problem.output_dim(),
                self.network.input_dim,
                self.network.output_dim
            )));
        }
        self.network.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    /// Loss before the update of each iteration.
    pub loss: Vec<f64>,
    /// Learning rate used at each iteration.
    pub lr: Vec<f64>,
    pub final_mae: f64,
    pub wall_time_s: f64,
    pub config: TrainConfig,
}

impl TrainHistory {
    pub fn final_loss(&self) -> f64 {
        *self.loss.last().expect("at least one iteration")
    }
}

/// Trains a freshly initialized network on `problem`.
///
/// The seed drives initialization first, then every minibatch draw.
pub fn train(problem: &Problem, cfg: &TrainConfig) -> Result<(Network, TrainHistory)> {
    train_observed(problem, cfg, |_, _| {})
}

/// [`train`] with a callback receiving `(iteration, loss)` after each step.
pub fn train_observed(
    problem: &Problem,
    cfg: &TrainConfig,
    mut observe: impl FnMut(usize, f64),
) -> Result<(Network, TrainHistory)> {
    cfg.validate(problem)?;
    let start = Instant::now();
    let mut rng = Rng::new(cfg.seed);
    let mut net = Network::new(cfg.network.clone(), &mut rng)?;
    let mut opt = match cfg.optimizer {
        OptimizerKind::Adam => Optimizer::adam(net.store().values(), cfg.lr, AdamConfig::default()),
        OptimizerKind::Sgd => Optimizer::sgd(cfg.lr),
    }
    .with_clip_norm(cfg.clip_norm);

    let mut losses = Vec::with_capacity(cfg.iterations);
    let mut lrs = Vec::with_capacity(cfg.iterations);
    for it in 0..cfg.iterations {
        let lr = cfg.schedule.lr_at(cfg.lr, it);
        opt.set_lr(lr);
        let g = Graph::new();
        let bn = net.bind(&g, Mode::Train);
        let loss = problem.sampled_loss(&g, &bn, &mut rng, cfg.batch_size)?;
        let value = loss.value().item();
        if !value.is_finite() {
            return Err(Error::NonFinite { iteration: it, lr });
        }
        let params = bn.params().to_vec();
        let grads = g.grad_tensors(loss, &params, &Tensor::scalar(1.0))?;
        let bound = bn.into_bound();
        net.absorb(bound);
        opt.step(net.store_mut().values_mut(), &grads)?;
        losses.push(value);
        lrs.push(lr);
        observe(it, value);
    }
    let final_mae = evaluate(&net, problem)?.mae;
    let history = TrainHistory {
        loss: losses,
        lr: lrs,
        final_mae,
        wall_time_s: start.elapsed().as_secs_f64(),
        config: cfg.clone(),
    };
    Ok((net, history))
}

/// `(1/n) Σ |y_i − ŷ_i|` over every entry.
pub fn mae(y: &Tensor, y_hat: &Tensor) -> Result<f64> {
    if y.shape() != y_hat.shape() {
        return Err(shape_err("mae", y.shape(), y_hat.shape()));
    }
    Ok(y.data()
        .iter()
        .zip(y_hat.data())
        .map(|(a, b)| (a - b).abs())
        .sum::<f64>()
        / y.len() as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub grid: Tensor,
    pub prediction: Tensor,
    pub oracle: Tensor,
    pub mae: f64,
}

/// Network and oracle on the problem's evaluation grid.
pub fn evaluate(net: &Network, problem: &Problem) -> Result<Evaluation> {
    let grid = problem.eval_grid();
    let prediction = net.predict(&grid)?;
    let oracle = problem.oracle(&grid)?;
    let mae = mae(&oracle, &prediction)?;
    Ok(Evaluation {
        grid,
        prediction,
        oracle,
        mae,
    })
}

/// Settings for fitting `sin(3x)` on `[-1, 1]` with a 1-3-1 tanh network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UatConfig {
    pub samples: usize,
    pub hidden_size: usize,
    pub iterations: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for UatConfig {
    fn default() -> Self {
        Self {
            samples: 50,
            hidden_size: 3,
            iterations: 20_000,
            lr: 1e-2,
            seed: 0,
        }
    }
}

pub struct UatFit {
    pub net: Network,
    pub x: Tensor,
    pub target: Tensor,
    pub prediction: Tensor,
    pub loss: Vec<f64>,
    pub mae: f64,
}

/// Full-batch mean-squared regression of `sin(3x)` on evenly spaced points.
pub fn fit_sin3x(cfg: &UatConfig) -> Result<UatFit> {
    if cfg.samples < 2 || cfg.iterations == 0 || !(cfg.lr > 0.0) {
        return Err(Error::Config(format!("invalid demo settings {cfg:?}")));
    }
    let mut rng = Rng::new(cfg.seed);
    let spec = NetworkSpec::mlp(1, 1, cfg.hidden_size, 0);
    let mut net = Network::new(spec, &mut rng)?;
    let x = Tensor::linspace(-1.0, 1.0, cfg.samples);
    let target = x.map(|v| (3.0 * v).sin());
    let mut opt = Optimizer::adam(net.store().values(), cfg.lr, AdamConfig::default());
    let mut loss = Vec::with_capacity(cfg.iterations);
    for it in 0..cfg.iterations {
        let g = Graph::new();
        let bn = net.bind(&g, Mode::Train);
        let y = bn.forward(g.constant(x.clone()))?;
        let l = y.sub(g.constant(target.clone()))?.square().mean();
        let value = l.value().item();
        if !value.is_finite() {
            return Err(Error::NonFinite {
                iteration: it,
                lr: cfg.lr,
            });
        }
        let params = bn.params().to_vec();
        let grads = g.grad_tensors(l, &params, &Tensor::scalar(1.0))?;
        opt.step(net.store_mut().values_mut(), &grads)?;
        loss.push(value);
    }
    let prediction = net.predict(&x)?;
    let mae = mae(&target, &prediction)?;
    Ok(UatFit {
        net,
        x,
        target,
        prediction,
        loss,
        mae,
    })
}
