#![allow(dead_code)]

//! Oracles shared by the integration tests. Nothing here calls the
//! library's differentiation: derivatives come from finite differences and
//! layer outputs from plain scalar loops.

use galerkin::autodiff::{Graph, Var};
use galerkin::nn::{Activation, BoundNetwork, Mode, Network};
use galerkin::problems::{Minibatch, Problem, ProblemId};
use galerkin::reference::{rk4_fhn, FhnParams};
use galerkin::tensor::{Rng, Tensor};
use galerkin::Result;

/// Forward passes lose about this many ulps of the output magnitude, which
/// finite differences at step `h` amplify by `1/h`.
const EVAL_ULPS: f64 = 1e3;

/// Steps tried in order; smaller ones only near kinks.
const FD_STEPS: [f64; 3] = [1e-4, 1e-5, 1e-6];

/// `|a − b| / max(|a|, |b|, floor)`.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Fourth-order central difference of `phi` at 0.
pub fn five_point(phi: &mut dyn FnMut(f64) -> f64, h: f64) -> f64 {
    (phi(-2.0 * h) - 8.0 * phi(-h) + 8.0 * phi(h) - phi(2.0 * h)) / (12.0 * h)
}

/// Roundoff bound of a five-point difference at step `h` for values of
/// magnitude `scale`.
fn fd_noise(h: f64, scale: f64) -> f64 {
    EVAL_ULPS * f64::EPSILON * scale / h
}

/// Derivative of `phi` at 0 with the floor below which it cannot be trusted
/// relatively, or `None` when every step straddles a kink. A step is
/// accepted once halving it reproduces the estimate up to roundoff.
pub fn smooth_derivative(phi: &mut dyn FnMut(f64) -> f64, scale: f64) -> Option<(f64, f64)> {
    FD_STEPS.iter().find_map(|&h| {
        let coarse = five_point(phi, h);
        let fine = five_point(phi, h / 2.0);
        let noise = fd_noise(h / 2.0, scale);
        ((coarse - fine).abs() <= 4.0 * noise + 1e-7 * fine.abs()).then_some((fine, 1e6 * noise))
    })
}

pub fn dot(a: &[Tensor], b: &[Tensor]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.data().iter().zip(y.data()).map(|(p, q)| p * q).sum::<f64>())
        .sum()
}

pub fn random_like(rng: &mut Rng, xs: &[Tensor]) -> Vec<Tensor> {
    xs.iter()
        .map(|t| Tensor::normal(rng, t.rows(), t.cols(), 0.0, 1.0).unwrap())
        .collect()
}

fn shifted(x: &[Tensor], dir: &[Tensor], s: f64) -> Vec<Tensor> {
    x.iter()
        .zip(dir)
        .map(|(p, d)| p.zip_map(d, |a, b| a + s * b).unwrap())
        .collect()
}

fn one_hot(x: &[Tensor], i: usize, k: usize) -> Vec<Tensor> {
    let mut dir: Vec<Tensor> = x.iter().map(|t| Tensor::zeros(t.rows(), t.cols())).collect();
    dir[i].data_mut()[k] = 1.0;
    dir
}

/// Worst relative error between `analytic` (the gradient of `f` at `x`) and
/// finite differences: one random direction plus `coords` random entries,
/// all at smooth points. Values of `f` have magnitude about `scale`. Panics
/// if no smooth sample can be found.
pub fn compare_gradient(
    f: &mut dyn FnMut(&[Tensor]) -> f64,
    x: &[Tensor],
    analytic: &[Tensor],
    rng: &mut Rng,
    coords: usize,
    scale: f64,
) -> f64 {
    let mut worst = f64::NAN;
    let mut accepted = 0;
    let mut checked_direction = false;
    for _ in 0..4 * (coords + 1) {
        if checked_direction && accepted >= coords {
            break;
        }
        let (dir, expect) = if checked_direction {
            let i = rng.int_in(0, x.len() as u64 - 1) as usize;
            let k = rng.int_in(0, x[i].len() as u64 - 1) as usize;
            (one_hot(x, i, k), analytic[i].data()[k])
        } else {
            let dir = random_like(rng, x);
            let e = dot(analytic, &dir);
            (dir, e)
        };
        let Some((fd, floor)) = smooth_derivative(&mut |s| f(&shifted(x, &dir, s)), scale) else {
            continue;
        };
        let e = rel_err(expect, fd, floor);
        worst = if worst.is_nan() { e } else { worst.max(e) };
        if checked_direction {
            accepted += 1;
        }
        checked_direction = true;
    }
    assert!(!worst.is_nan() && accepted > 0, "no smooth finite-difference sample");
    worst
}

/// Gradient check of a scalar function of the network parameters, batch
/// norm in eval mode.
pub fn check_param_gradient<F>(net: &Network, rng: &mut Rng, coords: usize, scalar: F) -> f64
where
    F: for<'g, 'n> Fn(&'g Graph, &BoundNetwork<'g, 'n>) -> Var<'g>,
{
    let params = net.store().values().to_vec();
    let analytic = {
        let g = Graph::new();
        let b = net.bind(&g, Mode::Eval);
        let out = scalar(&g, &b);
        g.grad_tensors(out, b.params(), &Tensor::scalar(1.0)).unwrap()
    };
    let mut eval = |ps: &[Tensor]| -> f64 {
        let mut probe = net.clone();
        probe.store_mut().values_mut().clone_from_slice(ps);
        let g = Graph::new();
        let b = probe.bind(&g, Mode::Eval);
        let v = scalar(&g, &b).value().item();
        v
    };
    let scale = eval(&params).abs();
    compare_gradient(&mut eval, &params, &analytic, rng, coords, scale)
}

pub fn act(a: Activation, v: f64) -> f64 {
    match a {
        Activation::Tanh => v.tanh(),
        Activation::Relu => v.max(0.0),
        Activation::Sigmoid => 1.0 / (1.0 + (-v).exp()),
    }
}

/// `Σ_j w[o][j] · x[j] + b[o]` for one row, `w` stored `(out, in)`.
pub fn affine(w: &Tensor, b: Option<&Tensor>, x: &[f64]) -> Vec<f64> {
    (0..w.rows())
        .map(|o| {
            let s: f64 = (0..w.cols()).map(|j| w.get(o, j) * x[j]).sum();
            s + b.map_or(0.0, |b| b.get(0, o))
        })
        .collect()
}

pub type Build = for<'g> fn(&[Var<'g>]) -> Result<Var<'g>>;

/// Checks the vector-Jacobian product `seedᵀ J` of `f` at `xs` against
/// finite differences of `Σ seed ⊙ f`, covering every input entry.
pub fn check_vjp(f: Build, xs: &[Tensor], rng: &mut Rng) -> f64 {
    let g = Graph::new();
    let vars: Vec<Var> = xs.iter().map(|x| g.input(x.clone())).collect();
    let out = f(&vars).unwrap();
    let (r, c) = out.shape();
    let seed = Tensor::normal(rng, r, c, 0.0, 1.0).unwrap();
    let analytic = g.grad_tensors(out, &vars, &seed).unwrap();
    let mut eval = |ps: &[Tensor]| -> f64 {
        let g = Graph::new();
        // Inputs, not constants: `f` may differentiate with respect to them.
        let vars: Vec<Var> = ps.iter().map(|x| g.input(x.clone())).collect();
        let y = f(&vars).unwrap().value();
        y.data().iter().zip(seed.data()).map(|(a, b)| a * b).sum()
    };
    let entries = xs.iter().map(Tensor::len).sum();
    let value = f(&vars).unwrap().value();
    let scale = value
        .data()
        .iter()
        .zip(seed.data())
        .map(|(a, b)| (a * b).abs())
        .sum::<f64>();
    compare_gradient(&mut eval, xs, &analytic, rng, entries, scale)
}

/// Every primitive with the input shapes it is checked at.
pub fn primitive_cases() -> Vec<(&'static str, Build, Vec<(usize, usize)>)> {
    vec![
        ("add", |v| v[0].add(v[1]), vec![(3, 2), (3, 2)]),
        ("sub", |v| v[0].sub(v[1]), vec![(3, 2), (3, 2)]),
        ("mul", |v| v[0].mul(v[1]), vec![(3, 2), (3, 2)]),
        ("matmul", |v| v[0].matmul(v[1]), vec![(3, 4), (4, 2)]),
        ("matmul_t", |v| v[0].matmul_t(v[1]), vec![(3, 4), (5, 4)]),
        ("scale", |v| Ok(v[0].scale(-2.5)), vec![(2, 3)]),
        ("add_scalar", |v| Ok(v[0].add_scalar(0.7)), vec![(2, 3)]),
        ("sum", |v| Ok(v[0].sum()), vec![(4, 3)]),
        ("mean", |v| Ok(v[0].mean()), vec![(4, 3)]),
        ("square", |v| Ok(v[0].square()), vec![(3, 3)]),
        ("powf", |v| Ok(v[0].square().add_scalar(0.5).powf(1.7)), vec![(3, 3)]),
        ("cube", |v| Ok(v[0].powf(3.0)), vec![(3, 3)]),
        ("sin", |v| Ok(v[0].sin()), vec![(3, 3)]),
        ("cos", |v| Ok(v[0].cos()), vec![(3, 3)]),
        ("exp", |v| Ok(v[0].exp()), vec![(3, 3)]),
        ("tanh", |v| Ok(v[0].tanh()), vec![(3, 3)]),
        ("sigmoid", |v| Ok(v[0].sigmoid()), vec![(3, 3)]),
        ("relu", |v| Ok(v[0].relu()), vec![(3, 3)]),
        ("sum_rows", |v| Ok(v[0].sum_rows()), vec![(5, 3)]),
        ("broadcast_rows", |v| v[0].broadcast_rows(4), vec![(1, 3)]),
        ("add_row", |v| v[0].add_row(v[1]), vec![(4, 3), (1, 3)]),
        ("slice_cols", |v| v[0].slice_cols(1, 2), vec![(3, 4)]),
        (
            "concat_cols",
            |v| Var::concat_cols(&[v[0], v[1].sin()]),
            vec![(3, 1), (3, 2)],
        ),
    ]
}

/// Standard normal entries pushed at least 0.2 away from zero, so kinks and
/// `powf` stay smooth under finite differences.
pub fn away_from_zero(rng: &mut Rng, r: usize, c: usize) -> Tensor {
    Tensor::normal(rng, r, c, 0.0, 1.0)
        .unwrap()
        .map(|v| v.signum() * (v.abs() + 0.2))
}

/// Gradient check of a problem loss with respect to the network parameters.
pub fn loss_gradient_error(problem: &Problem, net: &Network, batch: &Minibatch, rng: &mut Rng, coords: usize) -> f64 {
    check_param_gradient(net, rng, coords, |g, b| problem.loss(g, b, batch).unwrap())
}

/// Default network for `id`, freshly initialized.
pub fn check_network(id: ProblemId, rng: &mut Rng) -> Network {
    Network::new(Problem::new(id).defaults().network, rng).unwrap()
}

/// `sin(x)·e^{−t}` built from graph primitives.
pub fn heat_exact_var<'g>(x: Var<'g>) -> Result<Var<'g>> {
    x.col(0)?.sin().mul(x.col(1)?.neg().exp())
}

pub fn decay_exact_var<'g>(t: Var<'g>) -> Result<Var<'g>> {
    Ok(t.neg().exp().scale(2.0))
}

/// Amplitude `A = 1/(1 − m)`, `m = π/(2k) Σ cos t_j sin t_j`, for which
/// `A·sin x` solves the Fredholm equation discretized on `nodes` exactly.
pub fn fredholm_frozen_amplitude(nodes: &Tensor) -> f64 {
    let k = nodes.rows() as f64;
    let m = std::f64::consts::FRAC_PI_2 / k * nodes.data().iter().map(|t| t.cos() * t.sin()).sum::<f64>();
    1.0 / (1.0 - m)
}

/// Piecewise cubic Hermite interpolant of an RK4 trajectory, using the
/// vector field for the node slopes. Coefficients are constants chosen from
/// the value of `t`, so the graph sees a cubic in `t` on each piece.
pub struct Hermite {
    t: Vec<f64>,
    states: Vec<[f64; 2]>,
    slopes: Vec<[f64; 2]>,
}

impl Hermite {
    pub fn new(p: &FhnParams, t_max: f64, steps: usize) -> Self {
        let tr = rk4_fhn(p, t_max, steps).unwrap();
        let states: Vec<[f64; 2]> = tr.y.iter().zip(&tr.w).map(|(&y, &w)| [y, w]).collect();
        let slopes = states.iter().map(|s| p.rhs(s[0], s[1])).collect();
        Self {
            t: tr.t,
            states,
            slopes,
        }
    }

    pub fn forward<'g>(&self, t: Var<'g>) -> Result<Var<'g>> {
        let g = t.graph();
        let tv = t.value();
        let n = tv.rows();
        let h = self.t[1] - self.t[0];
        let piece: Vec<usize> = (0..n)
            .map(|r| ((tv.get(r, 0) / h).floor() as usize).min(self.t.len() - 2))
            .collect();
        let left = g.constant(Tensor::from_fn(n, 1, |r, _| self.t[piece[r]]));
        let s = t.sub(left)?.scale(1.0 / h);
        let mut cols = Vec::new();
        for c in 0..2 {
            let coef = |f: &dyn Fn(usize) -> f64| g.constant(Tensor::from_fn(n, 1, |r, _| f(piece[r])));
            let p0 = coef(&|i| self.states[i][c]);
            let p1 = coef(&|i| self.states[i + 1][c]);
            let m0 = coef(&|i| self.slopes[i][c] * h);
            let m1 = coef(&|i| self.slopes[i + 1][c] * h);
            let s2 = s.square();
            let s3 = s2.mul(s)?;
            let h00 = s3.scale(2.0).sub(s2.scale(3.0))?.add_scalar(1.0);
            let h10 = s3.sub(s2.scale(2.0))?.add(s)?;
            let h01 = s3.scale(-2.0).add(s2.scale(3.0))?;
            let h11 = s3.sub(s2)?;
            cols.push(h00.mul(p0)?.add(h10.mul(m0)?)?.add(h01.mul(p1)?)?.add(h11.mul(m1)?)?);
        }
        Var::concat_cols(&cols)
    }
}
