//! The four model problems: domain, sampled residual loss, closed-form or
//! classical oracle, and the default network and training settings.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::nn::{Activation, Init, Model, NetworkSpec};
use crate::optim::LrSchedule;
use crate::reference::{fhn_at, FhnParams, FHN_DEFAULT_STEPS};
use crate::sampling::DomainBox;
use crate::tensor::{Rng, Tensor};

/// Stable command-line names: `heat1d`, `decay`, `fhn`, `fredholm2`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ProblemId {
    #[serde(rename = "heat1d")]
    Heat1d,
    #[serde(rename = "decay")]
    Decay,
    #[serde(rename = "fhn")]
    Fhn,
    #[serde(rename = "fredholm2")]
    Fredholm2,
}

impl ProblemId {
    pub const ALL: [ProblemId; 4] = [
        ProblemId::Heat1d,
        ProblemId::Decay,
        ProblemId::Fhn,
        ProblemId::Fredholm2,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ProblemId::Heat1d => "heat1d",
            ProblemId::Decay => "decay",
            ProblemId::Fhn => "fhn",
            ProblemId::Fredholm2 => "fredholm2",
        }
    }
}

impl fmt::Display for ProblemId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ProblemId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ProblemId::ALL.into_iter().find(|p| p.as_str() == s).ok_or_else(|| {
            Error::Usage(format!(
                "unknown problem '{s}' (expected heat1d, decay, fhn or fredholm2)"
            ))
        })
    }
}

/// Default training settings for one problem.
#[derive(Clone, Debug, PartialEq)]
pub struct Defaults {
    pub network: NetworkSpec,
    pub iterations: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub schedule: LrSchedule,
}

/// Points drawn for one iteration. Which fields are present depends on the
/// problem; the loss only reads what its problem draws.
#[derive(Clone, Debug, PartialEq)]
pub struct Minibatch {
    /// Collocation points for the differential or integral operator.
    pub interior: Tensor,
    /// Points at `t = 0`.
    pub initial: Option<Tensor>,
    /// Left and right spatial walls.
    pub boundary: Option<(Tensor, Tensor)>,
    /// Monte Carlo nodes shared by every row of the batch.
    pub quadrature: Option<Tensor>,
}

/// A problem definition. Immutable; cheap to clone and share across threads.
#[derive(Clone, Debug, PartialEq)]
pub struct Problem {
    id: ProblemId,
    domain: DomainBox,
    fhn: FhnParams,
    /// Monte Carlo terms in the Fredholm integral.
    pub quadrature_points: usize,
}

pub const HEAT_X_MAX: f64 = PI;
pub const HEAT_T_MAX: f64 = 3.0;
pub const DECAY_T_MAX: f64 = 1.0;
pub const DECAY_Y0: f64 = 2.0;
pub const FHN_T_MAX: f64 = 30.0;
pub const FREDHOLM_X_MAX: f64 = PI / 2.0;
pub const FREDHOLM_K: usize = 50;

impl Problem {
    pub fn new(id: ProblemId) -> Self {
        let domain = match id {
            ProblemId::Heat1d => DomainBox::space_time(0.0, HEAT_X_MAX, HEAT_T_MAX),
            ProblemId::Decay => DomainBox::time_only(DECAY_T_MAX),
            ProblemId::Fhn => DomainBox::time_only(FHN_T_MAX),
            ProblemId::Fredholm2 => DomainBox::time_only(FREDHOLM_X_MAX),
        }
        .expect("problem domains are valid");
        Self {
            id,
            domain,
            fhn: FhnParams::default(),
            quadrature_points: FREDHOLM_K,
        }
    }

    pub fn id(&self) -> ProblemId {
        self.id
    }

    pub fn domain(&self) -> &DomainBox {
        &self.domain
    }

    pub fn fhn_params(&self) -> &FhnParams {
        &self.fhn
    }

    pub fn input_dim(&self) -> usize {
        self.domain.dim()
    }

    pub fn output_dim(&self) -> usize {
        match self.id {
            ProblemId::Fhn => 2,
            _ => 1,
        }
    }

    pub fn defaults(&self) -> Defaults {
        let constant = LrSchedule::constant();
        match self.id {
            ProblemId::Heat1d => Defaults {
                network: NetworkSpec {
                    init: Init::XavierUniform,
                    ..NetworkSpec::mlp(2, 1, 128, 3)
                },
                iterations: 15_000,
                batch_size: 64,
                lr: 1e-4,
                schedule: constant,
            },
            ProblemId::Decay => Defaults {
                network: NetworkSpec::mlp(1, 1, 32, 1),
                iterations: 5_000,
                batch_size: 64,
                lr: 1e-4,
                schedule: constant,
            },
            ProblemId::Fhn => Defaults {
                network: NetworkSpec {
                    activation: Activation::Relu,
                    ..NetworkSpec::dgm(1, 2, 128, 4)
                },
                iterations: 150_000,
                batch_size: 256,
                lr: 1e-4,
                schedule: LrSchedule::multi_step(vec![35_000], 0.1).expect("valid schedule"),
            },
            ProblemId::Fredholm2 => Defaults {
                network: NetworkSpec {
                    activation: Activation::Relu,
                    ..NetworkSpec::dgm(1, 1, 32, 1)
                },
                iterations: 3_000,
                batch_size: 32,
                lr: 1e-4,
                schedule: constant,
            },
        }
    }

    /// Fresh collocation points for one iteration.
    pub fn draw(&self, rng: &mut Rng, n: usize) -> Result<Minibatch> {
        let interior = self.domain.sample_interior(rng, n)?;
        Ok(match self.id {
            ProblemId::Heat1d => {
                let initial = self.domain.sample_initial(rng, n)?;
                let boundary = self.domain.sample_boundary(rng, n)?;
                Minibatch {
                    interior,
                    initial: Some(initial),
                    boundary: Some(boundary),
                    quadrature: None,
                }
            }
            ProblemId::Decay | ProblemId::Fhn => Minibatch {
                initial: Some(self.domain.sample_initial(rng, n)?),
                interior,
                boundary: None,
                quadrature: None,
            },
            ProblemId::Fredholm2 => Minibatch {
                quadrature: Some(Tensor::uniform(rng, self.quadrature_points, 1, 0.0, FREDHOLM_X_MAX)?),
                interior,
                initial: None,
                boundary: None,
            },
        })
    }

    /// Non-negative scalar residual loss of `model` on `batch`.
    pub fn loss<'g>(&self, g: &'g Graph, model: &dyn Model<'g>, batch: &Minibatch) -> Result<Var<'g>> {
        match self.id {
            ProblemId::Heat1d => self.heat_loss(g, model, batch),
            ProblemId::Decay => self.decay_loss(g, model, batch),
            ProblemId::Fhn => self.fhn_loss(g, model, batch),
            ProblemId::Fredholm2 => self.fredholm_loss(g, model, batch),
        }
    }

    /// Draws a batch and builds the loss in one call.
    pub fn sampled_loss<'g>(&self, g: &'g Graph, model: &dyn Model<'g>, rng: &mut Rng, n: usize) -> Result<Var<'g>> {
        let batch = self.draw(rng, n)?;
        self.loss(g, model, &batch)
    }

    fn field<'a>(&self, t: &'a Option<Tensor>, what: &str) -> Result<&'a Tensor> {
        t.as_ref()
            .ok_or_else(|| Error::Usage(format!("{} minibatch lacks {what} points", self.id)))
    }

    /// `mean (u_t − u_xx)² + mean (u(x,0) − sin x)² + mean u(0,t)² + mean u(π,t)²`.
    fn heat_loss<'g>(&self, g: &'g Graph, model: &dyn Model<'g>, batch: &Minibatch) -> Result<Var<'g>> {
        let x = g.input(batch.interior.clone());
        let u = model.forward(x)?;
        let du = g.diff(u, x)?;
        let u_t = du.col(1)?;
        let u_xx = g.diff(du.col(0)?, x)?.col(0)?;
        let pde = u_t.sub(u_xx)?.square().mean();

        let init = self.field(&batch.initial, "initial")?;
        let target = g.constant(init.col(0)?.map(f64::sin));
        let ic = model.forward(g.constant(init.clone()))?.sub(target)?.square().mean();

        let (left, right) = batch
            .boundary
            .as_ref()
            .ok_or_else(|| Error::Usage("heat1d minibatch lacks boundary points".into()))?;
        let bl = model.forward(g.constant(left.clone()))?.square().mean();
        let br = model.forward(g.constant(right.clone()))?.square().mean();
        pde.add(ic)?.add(bl)?.add(br)
    }

    /// Network output at the initial rows. Identical rows collapse to one
    /// when the model allows it; the mean over them is unchanged.
    fn initial_output<'g>(&self, g: &'g Graph, model: &dyn Model<'g>, init: &Tensor) -> Result<Var<'g>> {
        let uniform = (1..init.rows()).all(|r| (0..init.cols()).all(|c| init.get(r, c) == init.get(0, c)));
        let rows = if uniform && model.row_independent() {
            Tensor::from_fn(1, init.cols(), |_, c| init.get(0, c))
        } else {
            init.clone()
        };
        model.forward(g.constant(rows))
    }

    /// `mean (y' + y)² + mean (y(0) − 2)²`.
    fn decay_loss<'g>(&self, g: &'g Graph, model: &dyn Model<'g>, batch: &Minibatch) -> Result<Var<'g>> {
        let t = g.input(batch.interior.clone());
        let y = model.forward(t)?;
        let dy = g.diff(y, t)?;
        let ode = dy.add(y)?.square().mean();
        let y0 = self.initial_output(g, model, self.field(&batch.initial, "initial")?)?;
        let ic = y0.add_scalar(-DECAY_Y0).square().mean();
        ode.add(ic)
    }

    /// `mean (y' + y³/3 − y − I + w)² + mean (w' + (βw − α − y)/τ)²` plus
    /// the squared initial error of both components.
    fn fhn_loss<'g>(&self, g: &'g Graph, model: &dyn Model<'g>, batch: &Minibatch) -> Result<Var<'g>> {
        let p = &self.fhn;
        let t = g.input(batch.interior.clone());
        let s = model.forward(t)?;
        let (y, w) = (s.col(0)?, s.col(1)?);
        let dy = g.diff(y, t)?;
        let dw = g.diff(w, t)?;
        let r1 = dy
            .add(y.powf(3.0).scale(1.0 / 3.0))?
            .sub(y)?
            .add_scalar(-p.i_ext)
            .add(w)?;
        let r2 = dw.add(w.scale(p.beta).sub(y)?.add_scalar(-p.alpha).scale(1.0 / p.tau))?;
        let s0 = self.initial_output(g, model, self.field(&batch.initial, "initial")?)?;
        let ic_y = s0.col(0)?.add_scalar(-p.y0).square().mean();
        let ic_w = s0.col(1)?.add_scalar(-p.w0).square().mean();
        r1.square().mean().add(r2.square().mean())?.add(ic_y)?.add(ic_w)
    }

    /// `mean (y(x) − sin x − I(x))²` with
    /// `I(x) = π/(2k) · sin x · Σ_j cos t_j · y(t_j)`.
    fn fredholm_loss<'g>(&self, g: &'g Graph, model: &dyn Model<'g>, batch: &Minibatch) -> Result<Var<'g>> {
        let x = &batch.interior;
        let n = x.rows();
        let nodes = self.field(&batch.quadrature, "quadrature")?;
        let k = nodes.rows();
        let y_nodes = model.forward(g.constant(nodes.clone()))?;
        let kernel = g.constant(nodes.map(f64::cos));
        let c = kernel.mul(y_nodes)?.sum().scale(FREDHOLM_X_MAX / k as f64);
        let sin_x = g.constant(x.map(f64::sin));
        let integral = sin_x.mul(c.broadcast_rows(n)?)?;
        let y = model.forward(g.constant(x.clone()))?;
        Ok(y.sub(sin_x)?.sub(integral)?.square().mean())
    }

    /// Regular evaluation grid: 50 × 50 over space-time for the heat
    /// equation, 50 nodes otherwise.
    pub fn eval_grid(&self) -> Tensor {
        const N: usize = 50;
        match self.id {
            ProblemId::Heat1d => {
                let xs = Tensor::linspace(0.0, HEAT_X_MAX, N);
                let ts = Tensor::linspace(0.0, HEAT_T_MAX, N);
                Tensor::from_fn(
                    N * N,
                    2,
                    |r, c| if c == 0 { xs.get(r % N, 0) } else { ts.get(r / N, 0) },
                )
            }
            ProblemId::Decay => Tensor::linspace(0.0, DECAY_T_MAX, N),
            ProblemId::Fhn => Tensor::linspace(0.0, FHN_T_MAX, N),
            ProblemId::Fredholm2 => Tensor::linspace(0.0, FREDHOLM_X_MAX, N),
        }
    }

    /// Reference solution at the rows of `points`.
    pub fn oracle(&self, points: &Tensor) -> Result<Tensor> {
        if points.cols() != self.input_dim() {
            return Err(crate::error::shape_err(
                "oracle",
                points.shape(),
                (points.rows(), self.input_dim()),
            ));
        }
        Ok(match self.id {
            ProblemId::Heat1d => {
                Tensor::from_fn(points.rows(), 1, |r, _| heat_exact(points.get(r, 0), points.get(r, 1)))
            }
            ProblemId::Decay => points.map(decay_exact),
            ProblemId::Fhn => {
                let h = FHN_T_MAX / FHN_DEFAULT_STEPS as f64;
                let states = fhn_at(&self.fhn, points.data(), h);
                Tensor::from_fn(points.rows(), 2, |r, c| states[r][c])
            }
            ProblemId::Fredholm2 => points.map(fredholm_exact),
        })
    }
}

pub fn heat_exact(x: f64, t: f64) -> f64 {
    x.sin() * (-t).exp()
}

pub fn decay_exact(t: f64) -> f64 {
    DECAY_Y0 * (-t).exp()
}

pub fn fredholm_exact(x: f64) -> f64 {
    2.0 * x.sin()
}
