//! Network building blocks and the three architectures: multilayer
//! perceptron, DGM network and linear residual blocks.
//!
//! Parameters live in a flat [`ParamStore`]; layers hold [`ParamId`]s into
//! it. Each training iteration binds the store to a fresh [`Graph`], which
//! turns every parameter into a differentiable leaf, in store order. The
//! optimizer walks the same order, so gradients and tensors line up by index.

use std::cell::RefCell;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{shape_err, Error, Result};
use crate::tensor::{Rng, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    Tanh,
    Relu,
    Sigmoid,
}

impl Activation {
    pub fn apply<'g>(self, x: Var<'g>) -> Var<'g> {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.relu(),
            Activation::Sigmoid => x.sigmoid(),
        }
    }

    pub fn scalar(self, v: f64) -> f64 {
        match self {
            Activation::Tanh => v.tanh(),
            Activation::Relu => v.max(0.0),
            Activation::Sigmoid => 1.0 / (1.0 + (-v).exp()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Architecture {
    Mlp,
    Dgm,
    Resnet,
}

/// Where batch normalization sits relative to the nonlinearity.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BatchNormPlacement {
    Off,
    BeforeActivation,
    AfterActivation,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Init {
    /// `N(0, gain / fan_in)`.
    XavierNormal,
    /// Uniform with the same variance as `XavierNormal`.
    XavierUniform,
    /// `N(0, 2 gain / fan_in)`.
    He,
}

impl Init {
    pub fn variance(self, fan_in: usize, gain: f64) -> f64 {
        let base = gain / fan_in as f64;
        match self {
            Init::XavierNormal | Init::XavierUniform => base,
            Init::He => 2.0 * base,
        }
    }

    /// Weight matrix of shape `(fan_out, fan_in)`.
    pub fn weights(self, rng: &mut Rng, fan_out: usize, fan_in: usize, gain: f64) -> Tensor {
        let var = self.variance(fan_in, gain);
        let t = match self {
            Init::XavierNormal | Init::He => Tensor::normal(rng, fan_out, fan_in, 0.0, var),
            Init::XavierUniform => {
                let a = (3.0 * var).sqrt();
                Tensor::uniform(rng, fan_out, fan_in, -a, a)
            }
        };
        t.expect("initializer variance is positive")
    }
}

/// Architecture and size of a network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct NetworkSpec {
    pub architecture: Architecture,
    pub input_dim: usize,
    pub output_dim: usize,
    pub hidden_size: usize,
    /// MLP: hidden layers beyond the first (zero gives one hidden layer).
    /// DGM: number of gated layers. ResNet: number of residual blocks.
    pub num_layers: usize,
    /// Nonlinearity after hidden layers; for DGM, after the input layer.
    pub activation: Activation,
    /// Nonlinearity of the four DGM gates.
    #[serde(default = "default_gate_activation")]
    pub gate_activation: Activation,
    pub batch_norm: BatchNormPlacement,
    pub init: Init,
    /// Multiplies the initializer variance.
    pub gain: f64,
}

fn default_gate_activation() -> Activation {
    Activation::Tanh
}

impl NetworkSpec {
    pub fn mlp(input_dim: usize, output_dim: usize, hidden_size: usize, num_layers: usize) -> Self {
        Self {
            architecture: Architecture::Mlp,
            input_dim,
            output_dim,
            hidden_size,
            num_layers,
            activation: Activation::Tanh,
            gate_activation: Activation::Tanh,
            batch_norm: BatchNormPlacement::Off,
            init: Init::XavierNormal,
            gain: 1.0,
        }
    }

    pub fn dgm(input_dim: usize, output_dim: usize, hidden_size: usize, num_layers: usize) -> Self {
        Self {
            architecture: Architecture::Dgm,
            activation: Activation::Relu,
            init: Init::He,
            ..Self::mlp(input_dim, output_dim, hidden_size, num_layers)
        }
    }

    pub fn resnet(input_dim: usize, output_dim: usize, hidden_size: usize, num_blocks: usize) -> Self {
        Self {
            architecture: Architecture::Resnet,
            activation: Activation::Relu,
            init: Init::He,
            ..Self::mlp(input_dim, output_dim, hidden_size, num_blocks)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden_size == 0 {
            return Err(Error::Config("network dimensions must be positive".into()));
        }
        if !(self.gain > 0.0) {
            return Err(Error::Config(format!(
                "initializer gain must be positive, got {}",
                self.gain
            )));
        }
        match self.architecture {
            Architecture::Dgm if self.batch_norm != BatchNormPlacement::Off => Err(Error::Config(
                "batch normalization is not supported in DGM networks".into(),
            )),
            Architecture::Resnet if self.num_layers == 0 => {
                Err(Error::Config("a residual network needs at least one block".into()))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Index of a trainable tensor in a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamId(usize);

/// Batch-norm population statistics; not trained by the optimizer.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats {
    pub mean: Tensor,
    pub var: Tensor,
}

/// Flat, ordered collection of named parameters plus batch-norm statistics.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
    running_names: Vec<String>,
    running: Vec<RunningStats>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.names.push(name.into());
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    fn add_running(&mut self, name: impl Into<String>, d: usize) -> usize {
        self.running_names.push(name.into());
        self.running.push(RunningStats {
            mean: Tensor::zeros(1, d),
            var: Tensor::ones(1, d),
        });
        self.running.len() - 1
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn values(&self) -> &[Tensor] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Tensor] {
        &mut self.values
    }

    pub fn running(&self) -> &[RunningStats] {
        &self.running
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    /// Registers every parameter as a differentiable leaf of `graph`.
    pub fn bind<'g>(&self, graph: &'g Graph, mode: Mode) -> Bound<'g> {
        Bound {
            params: self.values.iter().map(|t| graph.input(t.clone())).collect(),
            running: RefCell::new(self.running.clone()),
            mode,
        }
    }

    /// Keeps the running statistics accumulated by train-mode forwards.
    pub fn absorb(&mut self, bound: Bound<'_>) {
        if bound.mode == Mode::Train {
            self.running = bound.running.into_inner();
        }
    }
}

/// Parameters of a [`ParamStore`] bound to one graph.
pub struct Bound<'g> {
    params: Vec<Var<'g>>,
    running: RefCell<Vec<RunningStats>>,
    mode: Mode,
}

impl<'g> Bound<'g> {
    pub fn params(&self) -> &[Var<'g>] {
        &self.params
    }

    pub fn param(&self, id: ParamId) -> Var<'g> {
        self.params[id.0]
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }
}

/// Affine map `y = x·Wᵀ + b` with `W` of shape `(out, in)`.
#[derive(Clone, Debug)]
pub struct LinearLayer {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl LinearLayer {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        bias: bool,
        init: Init,
        gain: f64,
        rng: &mut Rng,
    ) -> Self {
        let weight = store.add(format!("{name}.weight"), init.weights(rng, out_dim, in_dim, gain));
        let bias = bias.then(|| store.add(format!("{name}.bias"), Tensor::zeros(1, out_dim)));
        Self {
            weight,
            bias,
            in_dim,
            out_dim,
        }
    }

    pub fn forward<'g>(&self, p: &Bound<'g>, x: Var<'g>) -> Result<Var<'g>> {
        if x.shape().1 != self.in_dim {
            return Err(shape_err("linear", x.shape(), (self.out_dim, self.in_dim)));
        }
        let y = x.matmul_t(p.param(self.weight))?;
        match self.bias {
            Some(b) => y.add_row(p.param(b)),
            None => Ok(y),
        }
    }
}

/// Per-feature standardization with learnable scale `alpha` and shift `beta`.
#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub alpha: ParamId,
    pub beta: ParamId,
    stats: usize,
    pub dim: usize,
    pub eps: f64,
    pub momentum: f64,
}

impl BatchNorm {
    pub const EPS: f64 = 1e-5;
    pub const MOMENTUM: f64 = 0.1;

    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Self {
        let alpha = store.add(format!("{name}.alpha"), Tensor::ones(1, dim));
        let beta = store.add(format!("{name}.beta"), Tensor::zeros(1, dim));
        let stats = store.add_running(name, dim);
        Self {
            alpha,
            beta,
            stats,
            dim,
            eps: Self::EPS,
            momentum: Self::MOMENTUM,
        }
    }

    /// Train mode normalizes with the batch mean and biased variance and
    /// folds them into the running statistics (the variance unbiased);
    /// eval mode uses the running statistics only.
    pub fn forward<'g>(&self, p: &Bound<'g>, x: Var<'g>) -> Result<Var<'g>> {
        let (n, d) = x.shape();
        if d != self.dim {
            return Err(shape_err("batch_norm", x.shape(), (n, self.dim)));
        }
        let g = x.graph();
        let xhat = match p.mode {
            Mode::Train => {
                if n < 2 {
                    return Err(Error::Usage("batch norm in train mode needs at least 2 rows".into()));
                }
                let inv_n = 1.0 / n as f64;
                let mu = x.sum_rows().scale(inv_n);
                let centered = x.sub(mu.broadcast_rows(n)?)?;
                let var = centered.square().sum_rows().scale(inv_n);
                let inv_std = var.add_scalar(self.eps).powf(-0.5);

                let m = self.momentum;
                let unbiased = var.value().scale(n as f64 / (n - 1) as f64);
                let mut running = p.running.borrow_mut();
                let st = &mut running[self.stats];
                st.mean = st.mean.scale(1.0 - m).add(&mu.value().scale(m))?;
                st.var = st.var.scale(1.0 - m).add(&unbiased.scale(m))?;

                centered.mul(inv_std.broadcast_rows(n)?)?
            }
            Mode::Eval => {
                let running = p.running.borrow();
                let st = &running[self.stats];
                let mean = g.constant(st.mean.broadcast_rows(n)?);
                let inv_std = g.constant(st.var.map(|v| 1.0 / (v + self.eps).sqrt()).broadcast_rows(n)?);
                x.sub(mean)?.mul(inv_std)?
            }
        };
        xhat.mul(p.param(self.alpha).broadcast_rows(n)?)?
            .add_row(p.param(self.beta))
    }
}

/// One gated DGM layer. Gates are ordered Z, G, R, H; `u` projects the
/// network input (no bias), `w` the previous state (with bias).
#[derive(Clone, Debug)]
pub struct DgmLayer {
    pub u: [LinearLayer; 4],
    pub w: [LinearLayer; 4],
    pub activation: Activation,
}

pub const GATES: [&str; 4] = ["z", "g", "r", "h"];

impl DgmLayer {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        input_dim: usize,
        hidden: usize,
        activation: Activation,
        init: Init,
        gain: f64,
        rng: &mut Rng,
    ) -> Self {
        let mut make = |gate: &str, kind: &str, fan_in: usize, bias: bool| {
            LinearLayer::new(
                store,
                &format!("{name}.{gate}.{kind}"),
                fan_in,
                hidden,
                bias,
                init,
                gain,
                rng,
            )
        };
        let mut us = Vec::new();
        let mut ws = Vec::new();
        for gate in GATES {
            us.push(make(gate, "u", input_dim, false));
            ws.push(make(gate, "w", hidden, true));
        }
        Self {
            u: us.try_into().expect("four gates"),
            w: ws.try_into().expect("four gates"),
            activation,
        }
    }

    /// `S' = (1 − G) ⊙ H + Z ⊙ S` with
    /// `Z = σ(W_z S + U_z x)`, `G = σ(W_g S + U_g x)`, `R = σ(W_r S + U_r x)`,
    /// `H = σ(W_h (S ⊙ R) + U_h x)`.
    pub fn forward<'g>(&self, p: &Bound<'g>, x: Var<'g>, s: Var<'g>) -> Result<Var<'g>> {
        let gate = |i: usize, state: Var<'g>| -> Result<Var<'g>> {
            let pre = self.w[i].forward(p, state)?.add(self.u[i].forward(p, x)?)?;
            Ok(self.activation.apply(pre))
        };
        let z = gate(0, s)?;
        let g = gate(1, s)?;
        let r = gate(2, s)?;
        let h = gate(3, s.mul(r)?)?;
        let keep = g.neg().add_scalar(1.0);
        keep.mul(h)?.add(z.mul(s)?)
    }
}

/// Linear residual block: `relu(relu(fc2(relu(fc1 x))) + skip(x))`, with
/// optional batch normalization around each linear layer.
#[derive(Clone, Debug)]
pub struct ResBlock {
    pub fc1: LinearLayer,
    pub bn1: Option<BatchNorm>,
    pub fc2: LinearLayer,
    pub bn2: Option<BatchNorm>,
    pub downsample: Option<LinearLayer>,
    pub placement: BatchNormPlacement,
}

impl ResBlock {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        downsample: bool,
        placement: BatchNormPlacement,
        init: Init,
        gain: f64,
        rng: &mut Rng,
    ) -> Result<Self> {
        if in_dim != out_dim && !downsample {
            return Err(Error::Config(format!(
                "residual block {in_dim} -> {out_dim} needs a downsample projection"
            )));
        }
        let bn = placement != BatchNormPlacement::Off;
        let fc1 = LinearLayer::new(store, &format!("{name}.fc1"), in_dim, out_dim, !bn, init, gain, rng);
        let bn1 = bn.then(|| BatchNorm::new(store, &format!("{name}.bn1"), out_dim));
        let fc2 = LinearLayer::new(store, &format!("{name}.fc2"), out_dim, out_dim, !bn, init, gain, rng);
        let bn2 = bn.then(|| BatchNorm::new(store, &format!("{name}.bn2"), out_dim));
        let downsample = downsample.then(|| {
            LinearLayer::new(
                store,
                &format!("{name}.downsample"),
                in_dim,
                out_dim,
                false,
                init,
                gain,
                rng,
            )
        });
        Ok(Self {
            fc1,
            bn1,
            fc2,
            bn2,
            downsample,
            placement,
        })
    }

    pub fn forward<'g>(&self, p: &Bound<'g>, x: Var<'g>) -> Result<Var<'g>> {
        let residual = match &self.downsample {
            Some(ds) => ds.forward(p, x)?,
            None if self.fc1.in_dim == self.fc2.out_dim => x,
            None => return Err(Error::Config("residual block shape change without downsample".into())),
        };
        let h = self.fc1.forward(p, x)?;
        let h = activate(p, h, Activation::Relu, self.bn1.as_ref(), self.placement)?;
        let h = self.fc2.forward(p, h)?;
        let h = activate(p, h, Activation::Relu, self.bn2.as_ref(), self.placement)?;
        Ok(h.add(residual)?.relu())
    }
}

/// Nonlinearity with optional batch norm on either side of it.
fn activate<'g>(
    p: &Bound<'g>,
    z: Var<'g>,
    act: Activation,
    bn: Option<&BatchNorm>,
    placement: BatchNormPlacement,
) -> Result<Var<'g>> {
    match (bn, placement) {
        (Some(bn), BatchNormPlacement::BeforeActivation) => Ok(act.apply(bn.forward(p, z)?)),
        (Some(bn), BatchNormPlacement::AfterActivation) => bn.forward(p, act.apply(z)),
        _ => Ok(act.apply(z)),
    }
}

#[derive(Clone, Debug)]
enum Body {
    Mlp {
        input: LinearLayer,
        input_bn: Option<BatchNorm>,
        hidden: Vec<(LinearLayer, Option<BatchNorm>)>,
    },
    Dgm {
        input: LinearLayer,
        layers: Vec<DgmLayer>,
    },
    Resnet {
        blocks: Vec<ResBlock>,
    },
}

/// A complete network: architecture, parameters and a linear output head.
#[derive(Clone, Debug)]
pub struct Network {
    spec: NetworkSpec,
    store: ParamStore,
    body: Body,
    head: LinearLayer,
}

impl Network {
    /// Builds a network with freshly initialized weights and zero biases.
    pub fn new(spec: NetworkSpec, rng: &mut Rng) -> Result<Self> {
        spec.validate()?;
        let mut store = ParamStore::new();
        let (init, gain, h) = (spec.init, spec.gain, spec.hidden_size);
        let bn = spec.batch_norm != BatchNormPlacement::Off;
        let body = match spec.architecture {
            Architecture::Mlp => {
                let input = LinearLayer::new(&mut store, "input", spec.input_dim, h, !bn, init, gain, rng);
                let input_bn = bn.then(|| BatchNorm::new(&mut store, "input.bn", h));
                let hidden = (0..spec.num_layers)
                    .map(|i| {
                        let name = format!("hidden.{i}");
                        let layer = LinearLayer::new(&mut store, &name, h, h, !bn, init, gain, rng);
                        let norm = bn.then(|| BatchNorm::new(&mut store, &format!("{name}.bn"), h));
                        (layer, norm)
                    })
                    .collect();
                Body::Mlp {
                    input,
                    input_bn,
                    hidden,
                }
            }
            Architecture::Dgm => {
                let input = LinearLayer::new(&mut store, "input", spec.input_dim, h, true, init, gain, rng);
                let layers = (0..spec.num_layers)
                    .map(|i| {
                        DgmLayer::new(
                            &mut store,
                            &format!("dgm.{i}"),
                            spec.input_dim,
                            h,
                            spec.gate_activation,
                            init,
                            gain,
                            rng,
                        )
                    })
                    .collect();
                Body::Dgm { input, layers }
            }
            Architecture::Resnet => {
                let mut blocks = Vec::with_capacity(spec.num_layers);
                for i in 0..spec.num_layers {
                    let in_dim = if i == 0 { spec.input_dim } else { h };
                    blocks.push(ResBlock::new(
                        &mut store,
                        &format!("block.{i}"),
                        in_dim,
                        h,
                        in_dim != h,
                        spec.batch_norm,
                        init,
                        gain,
                        rng,
                    )?);
                }
                Body::Resnet { blocks }
            }
        };
        let head = LinearLayer::new(&mut store, "head", h, spec.output_dim, true, init, gain, rng);
        Ok(Self {
            spec,
            store,
            body,
            head,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn bind<'g>(&self, graph: &'g Graph, mode: Mode) -> BoundNetwork<'g, '_> {
        BoundNetwork {
            net: self,
            bound: self.store.bind(graph, mode),
        }
    }

    /// Writes back batch-norm statistics gathered while `bound` was live.
    pub fn absorb(&mut self, bound: Bound<'_>) {
        self.store.absorb(bound);
    }

    pub fn forward<'g>(&self, p: &Bound<'g>, x: Var<'g>) -> Result<Var<'g>> {
        let (_, d) = x.shape();
        if d != self.spec.input_dim {
            return Err(shape_err(
                "network input",
                x.shape(),
                (x.shape().0, self.spec.input_dim),
            ));
        }
        let act = self.spec.activation;
        let place = self.spec.batch_norm;
        let hidden = match &self.body {
            Body::Mlp {
                input,
                input_bn,
                hidden,
            } => {
                let mut out = activate(p, input.forward(p, x)?, act, input_bn.as_ref(), place)?;
                for (layer, bn) in hidden {
                    out = activate(p, layer.forward(p, out)?, act, bn.as_ref(), place)?;
                }
                out
            }
            Body::Dgm { input, layers } => {
                let mut s = act.apply(input.forward(p, x)?);
                for layer in layers {
                    s = layer.forward(p, x, s)?;
                }
                s
            }
            Body::Resnet { blocks } => {
                let mut out = x;
                for block in blocks {
                    out = block.forward(p, out)?;
                }
                out
            }
        };
        self.head.forward(p, hidden)
    }

    /// Evaluates the network on a tensor without keeping the graph.
    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        let g = Graph::new();
        let bound = self.bind(&g, Mode::Eval);
        let input = g.constant(x.clone());
        let out = bound.forward(input)?;
        let value = out.value();
        Ok((*value).clone())
    }

    pub fn to_manifest(&self) -> ParamManifest {
        let mut params: Vec<ManifestEntry> = self
            .store
            .names
            .iter()
            .zip(&self.store.values)
            .map(|(name, t)| ManifestEntry::new(name, t))
            .collect();
        for (name, st) in self.store.running_names.iter().zip(&self.store.running) {
            params.push(ManifestEntry::new(&format!("{name}.running_mean"), &st.mean));
            params.push(ManifestEntry::new(&format!("{name}.running_var"), &st.var));
        }
        ParamManifest {
            spec: self.spec.clone(),
            params,
        }
    }

    /// Rebuilds a network from a manifest; every tensor must be present with
    /// its expected shape.
    pub fn from_manifest(manifest: &ParamManifest) -> Result<Self> {
        let mut net = Network::new(manifest.spec.clone(), &mut Rng::new(0))?;
        let lookup = |name: &str, shape: (usize, usize)| -> Result<Tensor> {
            let e = manifest
                .params
                .iter()
                .find(|e| e.name == name)
                .ok_or_else(|| Error::Domain(format!("manifest is missing {name}")))?;
            let t = Tensor::new(e.shape[0], e.shape[1], e.values.clone())?;
            if t.shape() != shape {
                return Err(shape_err("manifest entry", t.shape(), shape));
            }
            Ok(t)
        };
        for i in 0..net.store.values.len() {
            let shape = net.store.values[i].shape();
            net.store.values[i] = lookup(&net.store.names[i], shape)?;
        }
        for i in 0..net.store.running.len() {
            let name = net.store.running_names[i].clone();
            let d = net.store.running[i].mean.shape();
            net.store.running[i] = RunningStats {
                mean: lookup(&format!("{name}.running_mean"), d)?,
                var: lookup(&format!("{name}.running_var"), d)?,
            };
        }
        Ok(net)
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(&self.to_manifest())?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let manifest: ParamManifest = serde_json::from_str(&text)?;
        Self::from_manifest(&manifest)
    }
}

/// A network whose parameters are leaves of a live graph.
pub struct BoundNetwork<'g, 'n> {
    net: &'n Network,
    bound: Bound<'g>,
}

impl<'g> BoundNetwork<'g, '_> {
    pub fn forward(&self, x: Var<'g>) -> Result<Var<'g>> {
        self.net.forward(&self.bound, x)
    }

    pub fn params(&self) -> &[Var<'g>] {
        self.bound.params()
    }

    pub fn into_bound(self) -> Bound<'g> {
        self.bound
    }
}

/// Anything that maps a batch of inputs to a batch of outputs on a graph.
pub trait Model<'g> {
    fn forward(&self, x: Var<'g>) -> Result<Var<'g>>;

    /// True when each output row depends only on its own input row, so
    /// repeated rows may be collapsed. Train-mode batch norm breaks this.
    fn row_independent(&self) -> bool {
        true
    }
}

impl<'g> Model<'g> for BoundNetwork<'g, '_> {
    fn forward(&self, x: Var<'g>) -> Result<Var<'g>> {
        BoundNetwork::forward(self, x)
    }

    fn row_independent(&self) -> bool {
        self.net.spec.batch_norm == BatchNormPlacement::Off || self.bound.mode == Mode::Eval
    }
}

/// Wraps a closed-form expression so it can stand in for a network.
pub struct FnModel<F>(pub F);

impl<'g, F> Model<'g> for FnModel<F>
where
    F: Fn(Var<'g>) -> Result<Var<'g>>,
{
    fn forward(&self, x: Var<'g>) -> Result<Var<'g>> {
        (self.0)(x)
    }
}

/// JSON checkpoint: the network spec plus every tensor as
/// `name -> shape -> row-major values`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamManifest {
    pub spec: NetworkSpec,
    pub params: Vec<ManifestEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: [usize; 2],
    pub values: Vec<f64>,
}

impl ManifestEntry {
    fn new(name: &str, t: &Tensor) -> Self {
        Self {
            name: name.to_string(),
            shape: [t.rows(), t.cols()],
            values: t.data().to_vec(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Primitive;

    fn zero_all(net: &mut Network) {
        for t in net.store_mut().values_mut() {
            *t = Tensor::zeros(t.rows(), t.cols());
        }
    }

    #[test]
    fn linear_identity_and_bias() {
        let mut store = ParamStore::new();
        let mut rng = Rng::new(1);
        let layer = LinearLayer::new(&mut store, "fc", 2, 2, true, Init::XavierNormal, 1.0, &mut rng);
        *store.get_mut(layer.weight) = Tensor::eye(2);
        let g = Graph::new();
        let p = store.bind(&g, Mode::Train);
        let x = g.input(Tensor::new(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap());
        let y = layer.forward(&p, x).unwrap();
        assert_eq!(*y.value(), *x.value());

        let grads = g
            .grad_tensors(y.sum(), &[p.param(layer.bias.unwrap())], &Tensor::scalar(1.0))
            .unwrap();
        assert_eq!(grads[0].data(), &[3.0, 3.0]);
    }

    #[test]
    fn linear_by_hand() {
        let mut store = ParamStore::new();
        let layer = LinearLayer::new(&mut store, "fc", 2, 1, true, Init::He, 1.0, &mut Rng::new(0));
        *store.get_mut(layer.weight) = Tensor::row(&[1.0, 1.0]).unwrap();
        *store.get_mut(layer.bias.unwrap()) = Tensor::scalar(1.0);
        let g = Graph::new();
        let p = store.bind(&g, Mode::Eval);
        let y = layer
            .forward(&p, g.constant(Tensor::row(&[2.0, 3.0]).unwrap()))
            .unwrap();
        assert_eq!(y.value().item(), 6.0);
        assert!(layer.forward(&p, g.constant(Tensor::zeros(1, 3))).is_err());
    }

    #[test]
    fn zero_mlp_outputs_zero_and_head_is_affine() {
        let mut net = Network::new(NetworkSpec::mlp(2, 1, 8, 2), &mut Rng::new(4)).unwrap();
        zero_all(&mut net);
        let g = Graph::new();
        let b = net.bind(&g, Mode::Train);
        let y = b.forward(g.constant(Tensor::full(5, 2, 0.7))).unwrap();
        assert!(y.value().data().iter().all(|&v| v == 0.0));
        assert_eq!(y.primitive(), Some(Primitive::Add));
    }

    #[test]
    fn identical_rows_give_identical_outputs() {
        for spec in [
            NetworkSpec::mlp(2, 1, 8, 1),
            NetworkSpec::dgm(2, 2, 8, 2),
            NetworkSpec::resnet(2, 1, 8, 2),
        ] {
            let net = Network::new(spec, &mut Rng::new(8)).unwrap();
            let x = Tensor::from_fn(6, 2, |_, c| 0.3 + c as f64);
            let y = net.predict(&x).unwrap();
            for r in 1..6 {
                for c in 0..y.cols() {
                    assert_eq!(y.get(r, c), y.get(0, c));
                }
            }
        }
    }

    #[test]
    fn mlp_layer_count() {
        // One extra hidden layer means two hidden layers total.
        let net = Network::new(NetworkSpec::mlp(1, 1, 32, 1), &mut Rng::new(0)).unwrap();
        let names: Vec<&str> = net.store().names().iter().map(String::as_str).collect();
        assert_eq!(
            names,
            [
                "input.weight",
                "input.bias",
                "hidden.0.weight",
                "hidden.0.bias",
                "head.weight",
                "head.bias"
            ]
        );
    }

    #[test]
    fn bn_drops_bias() {
        let mut spec = NetworkSpec::mlp(2, 1, 4, 1);
        spec.batch_norm = BatchNormPlacement::BeforeActivation;
        let net = Network::new(spec, &mut Rng::new(0)).unwrap();
        let names = net.store().names();
        assert!(!names.iter().any(|n| n == "input.bias" || n == "hidden.0.bias"));
        assert!(names.iter().any(|n| n == "head.bias"));
        assert!(names.iter().any(|n| n == "input.bn.alpha"));
    }

    #[test]
    fn dgm_zero_params_zero_output() {
        let mut spec = NetworkSpec::dgm(1, 2, 6, 2);
        spec.activation = Activation::Tanh;
        let mut net = Network::new(spec, &mut Rng::new(2)).unwrap();
        zero_all(&mut net);
        let y = net.predict(&Tensor::linspace(0.0, 1.0, 4)).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn dgm_zero_layers_is_two_layer_net() {
        let net = Network::new(NetworkSpec::dgm(1, 1, 5, 0), &mut Rng::new(3)).unwrap();
        let x = Tensor::linspace(-1.0, 1.0, 7);
        let y = net.predict(&x).unwrap();
        let v = net.store().values();
        let (w1, b1, w2, b2) = (&v[0], &v[1], &v[2], &v[3]);
        for r in 0..7 {
            let mut out = b2.get(0, 0);
            for j in 0..5 {
                out += w2.get(0, j) * (w1.get(j, 0) * x.get(r, 0) + b1.get(0, j)).max(0.0);
            }
            assert!((y.get(r, 0) - out).abs() < 1e-14);
        }
    }

    #[test]
    fn dgm_paper_shape() {
        let net = Network::new(NetworkSpec::dgm(1, 2, 128, 4), &mut Rng::new(5)).unwrap();
        let y = net.predict(&Tensor::zeros(256, 1)).unwrap();
        assert_eq!(y.shape(), (256, 2));
    }

    #[test]
    fn resblock_requires_downsample_for_shape_change() {
        let mut store = ParamStore::new();
        let err = ResBlock::new(
            &mut store,
            "b",
            2,
            3,
            false,
            BatchNormPlacement::Off,
            Init::He,
            1.0,
            &mut Rng::new(0),
        );
        assert!(matches!(err, Err(Error::Config(_))));
    }

    #[test]
    fn resblock_pure_skip_path() {
        let mut store = ParamStore::new();
        let block = ResBlock::new(
            &mut store,
            "b",
            3,
            3,
            false,
            BatchNormPlacement::Off,
            Init::He,
            1.0,
            &mut Rng::new(0),
        )
        .unwrap();
        for t in store.values_mut() {
            *t = Tensor::zeros(t.rows(), t.cols());
        }
        let g = Graph::new();
        let p = store.bind(&g, Mode::Eval);
        let x = Tensor::new(2, 3, vec![-1.0, 0.5, 2.0, 3.0, -0.25, 0.0]).unwrap();
        let y = block.forward(&p, g.constant(x.clone())).unwrap();
        assert_eq!(*y.value(), x.map(|v| v.max(0.0)));
    }

    #[test]
    fn batchnorm_constant_batch_gives_beta() {
        let mut store = ParamStore::new();
        let bn = BatchNorm::new(&mut store, "bn", 2);
        *store.get_mut(bn.beta) = Tensor::row(&[0.5, -1.5]).unwrap();
        let g = Graph::new();
        let p = store.bind(&g, Mode::Train);
        let y = bn.forward(&p, g.constant(Tensor::full(4, 2, 3.0))).unwrap();
        for r in 0..4 {
            assert_eq!(y.value().get(r, 0), 0.5);
            assert_eq!(y.value().get(r, 1), -1.5);
        }
    }

    #[test]
    fn batchnorm_standardizes_and_tracks_running_stats() {
        let mut store = ParamStore::new();
        let bn = BatchNorm::new(&mut store, "bn", 3);
        let x = Tensor::normal(&mut Rng::new(6), 50, 3, 2.0, 4.0).unwrap();
        let g = Graph::new();
        let p = store.bind(&g, Mode::Train);
        let y = bn.forward(&p, g.constant(x.clone())).unwrap().value();
        for c in 0..3 {
            let col = y.col(c).unwrap();
            let m = col.mean();
            let v = col.data().iter().map(|a| (a - m) * (a - m)).sum::<f64>() / 50.0;
            assert!(m.abs() < 1e-10);
            // ε in the denominator shrinks the variance slightly below one.
            assert!((v - 1.0).abs() < 1e-5);
        }
        store.absorb(p);
        let xc = x.col(0).unwrap();
        let mean = xc.mean();
        let unbiased = xc.data().iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / 49.0;
        let st = &store.running()[0];
        assert!((st.mean.get(0, 0) - 0.1 * mean).abs() < 1e-12);
        assert!((st.var.get(0, 0) - (0.9 + 0.1 * unbiased)).abs() < 1e-12);
    }

    #[test]
    fn batchnorm_eval_ignores_batch_composition() {
        let mut store = ParamStore::new();
        let bn = BatchNorm::new(&mut store, "bn", 1);
        let g = Graph::new();
        let p = store.bind(&g, Mode::Eval);
        let single = bn.forward(&p, g.constant(Tensor::scalar(2.0))).unwrap().value().item();
        let batch = bn
            .forward(&p, g.constant(Tensor::column(&[2.0, 100.0, -7.0]).unwrap()))
            .unwrap()
            .value();
        assert_eq!(batch.get(0, 0), single);
        let pt = store.bind(&g, Mode::Train);
        assert!(matches!(
            bn.forward(&pt, g.constant(Tensor::scalar(1.0))),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn init_biases_zero_and_seeded() {
        let spec = NetworkSpec::mlp(2, 1, 16, 2);
        let a = Network::new(spec.clone(), &mut Rng::new(12)).unwrap();
        let b = Network::new(spec, &mut Rng::new(12)).unwrap();
        assert_eq!(a.store().values(), b.store().values());
        for (name, t) in a.store().names().iter().zip(a.store().values()) {
            if name.ends_with("bias") {
                assert!(t.data().iter().all(|&v| v == 0.0));
            }
        }
    }

    #[test]
    fn manifest_round_trip() {
        let mut spec = NetworkSpec::mlp(2, 1, 4, 1);
        spec.batch_norm = BatchNormPlacement::AfterActivation;
        let net = Network::new(spec, &mut Rng::new(21)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("params.json");
        net.save_json(&path).unwrap();
        let back = Network::load_json(&path).unwrap();
        assert_eq!(back.store().values(), net.store().values());
        assert_eq!(back.to_manifest(), net.to_manifest());
    }

    #[test]
    fn dgm_rejects_batch_norm() {
        let mut spec = NetworkSpec::dgm(1, 1, 4, 1);
        spec.batch_norm = BatchNormPlacement::BeforeActivation;
        assert!(matches!(Network::new(spec, &mut Rng::new(0)), Err(Error::Config(_))));
    }
}
