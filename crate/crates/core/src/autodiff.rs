//! Reverse-mode automatic differentiation on a define-by-run graph.
//!
//! A [`Graph`] is an append-only list of nodes. Every operation on a [`Var`]
//! evaluates its value eagerly and records a node holding the primitive, the
//! parent ids and the value. Parents always precede their children, so the
//! backward sweep is a single pass in reverse insertion order.
//!
//! Each primitive has one vector-Jacobian rule, written against the
//! [`Algebra`] trait. The rule runs either on plain tensors (an ordinary
//! backward pass) or on the graph itself, in which case the gradient
//! computation is recorded as new nodes and can be differentiated again.
//! That second mode is what second derivatives such as `d²y/dx²` need.
//!
//! ```
//! use galerkin::autodiff::Graph;
//! use galerkin::tensor::Tensor;
//!
//! let g = Graph::new();
//! let x = g.input(Tensor::scalar(3.0));
//! let y = x.square();
//! let dy = g.diff(y, x).unwrap();
//! assert_eq!(dy.value().item(), 6.0);
//! let d2y = g.diff(dy, x).unwrap();
//! assert_eq!(d2y.value().item(), 2.0);
//! ```

use std::cell::RefCell;
use std::rc::Rc;

use crate::error::{shape_err, Error, Result};
use crate::tensor::Tensor;

/// Differentiable primitive operations.
#[derive(Clone, Debug, PartialEq)]
pub enum Primitive {
    Add,
    Sub,
    /// Elementwise product.
    Mul,
    Scale(f64),
    AddScalar(f64),
    /// `op(a) · op(b)`, each operand optionally transposed.
    MatMul {
        trans_a: bool,
        trans_b: bool,
    },
    /// Sum of all entries, `(1, 1)`.
    Sum,
    /// Mean of all entries, `(1, 1)`.
    Mean,
    Square,
    /// Elementwise `x^p`.
    Powf(f64),
    Sin,
    Cos,
    Exp,
    Tanh,
    Sigmoid,
    Relu,
    SliceCols {
        start: usize,
        len: usize,
    },
    ConcatCols,
    /// Embeds the input at column `start` of a zero tensor `total` wide.
    PadCols {
        total: usize,
        start: usize,
    },
    /// Column sums, `(n, d) -> (1, d)`.
    SumRows,
    /// Row repetition, `(1, d) -> (n, d)`.
    BroadcastRows(usize),
    /// Fills a `(rows, cols)` tensor with a `(1, 1)` value.
    Expand {
        rows: usize,
        cols: usize,
    },
}

impl Primitive {
    fn arity(&self) -> Option<usize> {
        match self {
            Primitive::Add | Primitive::Sub | Primitive::Mul | Primitive::MatMul { .. } => Some(2),
            Primitive::ConcatCols => None,
            _ => Some(1),
        }
    }
}

fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Forward evaluation of a primitive, with shape checks.
pub fn eval(op: &Primitive, inputs: &[&Tensor]) -> Result<Tensor> {
    if let Some(k) = op.arity() {
        if inputs.len() != k {
            return Err(Error::Usage(format!("{op:?} takes {k} inputs, got {}", inputs.len())));
        }
    }
    let x = inputs.first().copied();
    let x = || x.expect("arity checked");
    Ok(match op {
        Primitive::Add => inputs[0].add(inputs[1])?,
        Primitive::Sub => inputs[0].sub(inputs[1])?,
        Primitive::Mul => inputs[0].mul(inputs[1])?,
        Primitive::Scale(c) => x().scale(*c),
        Primitive::AddScalar(c) => x().add_scalar(*c),
        Primitive::MatMul { trans_a, trans_b } => Tensor::matmul_with(inputs[0], *trans_a, inputs[1], *trans_b)?,
        Primitive::Sum => Tensor::scalar(x().sum()),
        Primitive::Mean => Tensor::scalar(x().mean()),
        Primitive::Square => x().map(|v| v * v),
        Primitive::Powf(p) => {
            let p = *p;
            x().map(|v| v.powf(p))
        }
        Primitive::Sin => x().map(f64::sin),
        Primitive::Cos => x().map(f64::cos),
        Primitive::Exp => x().map(f64::exp),
        Primitive::Tanh => x().map(f64::tanh),
        Primitive::Sigmoid => x().map(sigmoid),
        Primitive::Relu => x().map(|v| if v > 0.0 { v } else { 0.0 }),
        Primitive::SliceCols { start, len } => x().slice_cols(*start, *len)?,
        Primitive::ConcatCols => Tensor::concat_cols(inputs)?,
        Primitive::PadCols { total, start } => {
            if start + x().cols() > *total {
                return Err(shape_err("pad_cols", x().shape(), (x().rows(), *total)));
            }
            x().pad_cols(*total, *start)
        }
        Primitive::SumRows => x().sum_rows(),
        Primitive::BroadcastRows(n) => x().broadcast_rows(*n)?,
        Primitive::Expand { rows, cols } => {
            if x().shape() != (1, 1) {
                return Err(shape_err("expand", x().shape(), (1, 1)));
            }
            Tensor::full(*rows, *cols, x().item())
        }
    })
}

#[derive(Clone, Debug)]
enum NodeOp {
    Leaf,
    Op(Primitive),
}

#[derive(Clone, Debug)]
struct Node {
    op: NodeOp,
    parents: Vec<usize>,
    value: Rc<Tensor>,
    requires_grad: bool,
}

/// Append-only record of the operations of one forward computation.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy)]
pub struct Var<'g> {
    graph: &'g Graph,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{} {:?}", self.id, self.value())
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, node: Node) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(node);
        Var {
            graph: self,
            id: nodes.len() - 1,
        }
    }

    fn leaf(&self, value: Rc<Tensor>, requires_grad: bool) -> Var<'_> {
        self.push(Node {
            op: NodeOp::Leaf,
            parents: Vec::new(),
            value,
            requires_grad,
        })
    }

    /// A differentiable leaf (network input or parameter).
    pub fn input(&self, value: Tensor) -> Var<'_> {
        self.leaf(Rc::new(value), true)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.leaf(Rc::new(value), false)
    }

    /// Evaluates `op` on `inputs` and records the result.
    pub fn apply<'g>(&'g self, op: Primitive, inputs: &[Var<'g>]) -> Result<Var<'g>> {
        for v in inputs {
            if !std::ptr::eq(v.graph, self) {
                return Err(Error::Usage(format!("{op:?}: operand belongs to a different graph")));
            }
        }
        let (values, requires_grad) = {
            let nodes = self.nodes.borrow();
            let values: Vec<Rc<Tensor>> = inputs.iter().map(|v| nodes[v.id].value.clone()).collect();
            let rg = inputs.iter().any(|v| nodes[v.id].requires_grad);
            (values, rg)
        };
        let refs: Vec<&Tensor> = values.iter().map(|v| v.as_ref()).collect();
        let value = eval(&op, &refs)?;
        Ok(self.push(Node {
            op: NodeOp::Op(op),
            parents: inputs.iter().map(|v| v.id).collect(),
            value: Rc::new(value),
            requires_grad,
        }))
    }

    /// Gradient of `Σ seed ⊙ output` with respect to each of `wrt`.
    ///
    /// With `create_graph` the backward pass is itself recorded, so the
    /// returned variables can be differentiated again. Otherwise the results
    /// are constants. A target that `output` does not depend on gets an
    /// exact zero gradient.
    pub fn grad<'g>(
        &'g self,
        output: Var<'g>,
        wrt: &[Var<'g>],
        seed: &Tensor,
        create_graph: bool,
    ) -> Result<Vec<Var<'g>>> {
        self.check_grad_args(output, wrt, seed)?;
        if create_graph {
            let alg = Recorded { graph: self };
            let seed = self.constant(seed.clone()).id;
            let grads = backward(&alg, self, output.id, seed, wrt);
            Ok(grads.into_iter().map(|id| Var { graph: self, id }).collect())
        } else {
            let grads = backward(&Eager, self, output.id, Rc::new(seed.clone()), wrt);
            Ok(grads.into_iter().map(|t| self.leaf(t, false)).collect())
        }
    }

    /// Plain backward pass returning the gradients as tensors.
    pub fn grad_tensors<'g>(&'g self, output: Var<'g>, wrt: &[Var<'g>], seed: &Tensor) -> Result<Vec<Tensor>> {
        self.check_grad_args(output, wrt, seed)?;
        let grads = backward(&Eager, self, output.id, Rc::new(seed.clone()), wrt);
        Ok(grads
            .into_iter()
            .map(|t| Rc::try_unwrap(t).unwrap_or_else(|rc| (*rc).clone()))
            .collect())
    }

    /// Row-wise derivative: the gradient of `Σ output` with respect to `wrt`,
    /// recorded so it can be differentiated again.
    pub fn diff<'g>(&'g self, output: Var<'g>, wrt: Var<'g>) -> Result<Var<'g>> {
        let (r, c) = output.shape();
        let mut grads = self.grad(output, &[wrt], &Tensor::ones(r, c), true)?;
        Ok(grads.pop().expect("one target"))
    }

    fn check_grad_args(&self, output: Var<'_>, wrt: &[Var<'_>], seed: &Tensor) -> Result<()> {
        if !std::ptr::eq(output.graph, self) || wrt.iter().any(|v| !std::ptr::eq(v.graph, self)) {
            return Err(Error::Usage("grad: variables belong to a different graph".into()));
        }
        if seed.shape() != output.shape() {
            return Err(shape_err("grad seed", seed.shape(), output.shape()));
        }
        Ok(())
    }

    fn snapshot(&self, id: usize) -> (NodeOp, Vec<usize>, Rc<Tensor>) {
        let nodes = self.nodes.borrow();
        let n = &nodes[id];
        (n.op.clone(), n.parents.clone(), n.value.clone())
    }
}

impl<'g> Var<'g> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn graph(&self) -> &'g Graph {
        self.graph
    }

    pub fn value(&self) -> Rc<Tensor> {
        self.graph.nodes.borrow()[self.id].value.clone()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.graph.nodes.borrow()[self.id].value.shape()
    }

    pub fn requires_grad(&self) -> bool {
        self.graph.nodes.borrow()[self.id].requires_grad
    }

    /// The primitive that produced this variable, `None` for leaves.
    pub fn primitive(&self) -> Option<Primitive> {
        match &self.graph.nodes.borrow()[self.id].op {
            NodeOp::Leaf => None,
            NodeOp::Op(p) => Some(p.clone()),
        }
    }

    fn unary(self, op: Primitive) -> Var<'g> {
        self.graph.apply(op, &[self]).expect("unary primitive on a valid var")
    }

    pub fn add(self, other: Var<'g>) -> Result<Var<'g>> {
        self.graph.apply(Primitive::Add, &[self, other])
    }

    pub fn sub(self, other: Var<'g>) -> Result<Var<'g>> {
        self.graph.apply(Primitive::Sub, &[self, other])
    }

    /// Elementwise product.
    pub fn mul(self, other: Var<'g>) -> Result<Var<'g>> {
        self.graph.apply(Primitive::Mul, &[self, other])
    }

    pub fn matmul(self, other: Var<'g>) -> Result<Var<'g>> {
        self.graph.apply(
            Primitive::MatMul {
                trans_a: false,
                trans_b: false,
            },
            &[self, other],
        )
    }

    /// `self · otherᵀ`.
    pub fn matmul_t(self, other: Var<'g>) -> Result<Var<'g>> {
        self.graph.apply(
            Primitive::MatMul {
                trans_a: false,
                trans_b: true,
            },
            &[self, other],
        )
    }

    pub fn scale(self, c: f64) -> Var<'g> {
        self.unary(Primitive::Scale(c))
    }

    pub fn neg(self) -> Var<'g> {
        self.scale(-1.0)
    }

    pub fn add_scalar(self, c: f64) -> Var<'g> {
        self.unary(Primitive::AddScalar(c))
    }

    pub fn sum(self) -> Var<'g> {
        self.unary(Primitive::Sum)
    }

    pub fn mean(self) -> Var<'g> {
        self.unary(Primitive::Mean)
    }

    pub fn square(self) -> Var<'g> {
        self.unary(Primitive::Square)
    }

    pub fn powf(self, p: f64) -> Var<'g> {
        self.unary(Primitive::Powf(p))
    }

    pub fn sin(self) -> Var<'g> {
        self.unary(Primitive::Sin)
    }

    pub fn cos(self) -> Var<'g> {
        self.unary(Primitive::Cos)
    }

    pub fn exp(self) -> Var<'g> {
        self.unary(Primitive::Exp)
    }

    pub fn tanh(self) -> Var<'g> {
        self.unary(Primitive::Tanh)
    }

    pub fn sigmoid(self) -> Var<'g> {
        self.unary(Primitive::Sigmoid)
    }

    pub fn relu(self) -> Var<'g> {
        self.unary(Primitive::Relu)
    }

    pub fn sum_rows(self) -> Var<'g> {
        self.unary(Primitive::SumRows)
    }

    pub fn broadcast_rows(self, n: usize) -> Result<Var<'g>> {
        self.graph.apply(Primitive::BroadcastRows(n), &[self])
    }

    /// Adds a `(1, d)` row to every row of `self`.
    pub fn add_row(self, row: Var<'g>) -> Result<Var<'g>> {
        let (n, d) = self.shape();
        if row.shape() != (1, d) {
            return Err(shape_err("add_row", self.shape(), row.shape()));
        }
        self.add(row.broadcast_rows(n)?)
    }

    pub fn slice_cols(self, start: usize, len: usize) -> Result<Var<'g>> {
        self.graph.apply(Primitive::SliceCols { start, len }, &[self])
    }

    pub fn col(self, j: usize) -> Result<Var<'g>> {
        self.slice_cols(j, 1)
    }

    pub fn concat_cols(parts: &[Var<'g>]) -> Result<Var<'g>> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Usage("concat of zero variables".into()))?;
        first.graph.apply(Primitive::ConcatCols, parts)
    }
}

/// Arithmetic the vector-Jacobian rules are written against.
trait Algebra {
    type V: Clone;
    fn op(&self, op: Primitive, inputs: &[&Self::V]) -> Self::V;
    fn accumulate(&self, acc: Self::V, g: Self::V) -> Self::V;
    fn constant(&self, t: Tensor) -> Self::V;
    fn node(&self, id: usize, value: &Rc<Tensor>) -> Self::V;
}

/// Gradients as plain tensors.
struct Eager;

impl Algebra for Eager {
    type V = Rc<Tensor>;

    fn op(&self, op: Primitive, inputs: &[&Rc<Tensor>]) -> Rc<Tensor> {
        let refs: Vec<&Tensor> = inputs.iter().map(|t| t.as_ref()).collect();
        Rc::new(eval(&op, &refs).expect("backward shapes are consistent"))
    }

    fn accumulate(&self, mut acc: Rc<Tensor>, g: Rc<Tensor>) -> Rc<Tensor> {
        Rc::make_mut(&mut acc).axpy_in_place(1.0, &g);
        acc
    }

    fn constant(&self, t: Tensor) -> Rc<Tensor> {
        Rc::new(t)
    }

    fn node(&self, _id: usize, value: &Rc<Tensor>) -> Rc<Tensor> {
        value.clone()
    }
}

/// Gradients recorded as graph nodes, for higher-order derivatives.
struct Recorded<'g> {
    graph: &'g Graph,
}

impl Algebra for Recorded<'_> {
    type V = usize;

    fn op(&self, op: Primitive, inputs: &[&usize]) -> usize {
        let vars: Vec<Var<'_>> = inputs.iter().map(|&&id| Var { graph: self.graph, id }).collect();
        self.graph.apply(op, &vars).expect("backward shapes are consistent").id
    }

    fn accumulate(&self, acc: usize, g: usize) -> usize {
        self.op(Primitive::Add, &[&acc, &g])
    }

    fn constant(&self, t: Tensor) -> usize {
        self.graph.constant(t).id
    }

    fn node(&self, id: usize, _value: &Rc<Tensor>) -> usize {
        id
    }
}

/// Vector-Jacobian products of one node: the gradient contribution for each
/// parent whose flag in `want` is set.
fn vjp<A: Algebra>(
    alg: &A,
    op: &Primitive,
    g: &A::V,
    parents: &[(A::V, Rc<Tensor>)],
    out: &A::V,
    want: &[bool],
) -> Vec<Option<A::V>> {
    use Primitive as P;
    let x = &parents[0].0;
    let xv = &parents[0].1;
    let one = |v: A::V| vec![Some(v)];
    match op {
        P::Add => vec![Some(g.clone()), Some(g.clone())],
        P::Sub => vec![Some(g.clone()), want[1].then(|| alg.op(P::Scale(-1.0), &[g]))],
        P::Mul => {
            let y = &parents[1].0;
            vec![
                want[0].then(|| alg.op(P::Mul, &[g, y])),
                want[1].then(|| alg.op(P::Mul, &[g, x])),
            ]
        }
        P::Scale(c) => one(alg.op(P::Scale(*c), &[g])),
        P::AddScalar(_) => one(g.clone()),
        P::MatMul { trans_a, trans_b } => {
            let b = &parents[1].0;
            let mm = |l: &A::V, tl: bool, r: &A::V, tr: bool| {
                alg.op(
                    P::MatMul {
                        trans_a: tl,
                        trans_b: tr,
                    },
                    &[l, r],
                )
            };
            // C = op(A) op(B)
            let da = want[0].then(|| match (trans_a, trans_b) {
                (false, false) => mm(g, false, b, true),
                (false, true) => mm(g, false, b, false),
                (true, false) => mm(b, false, g, true),
                (true, true) => mm(b, true, g, true),
            });
            let db = want[1].then(|| match (trans_a, trans_b) {
                (false, false) => mm(x, true, g, false),
                (false, true) => mm(g, true, x, false),
                (true, false) => mm(x, false, g, false),
                (true, true) => mm(g, true, x, true),
            });
            vec![da, db]
        }
        P::Sum => one(alg.op(
            P::Expand {
                rows: xv.rows(),
                cols: xv.cols(),
            },
            &[g],
        )),
        P::Mean => {
            let scaled = alg.op(P::Scale(1.0 / xv.len() as f64), &[g]);
            one(alg.op(
                P::Expand {
                    rows: xv.rows(),
                    cols: xv.cols(),
                },
                &[&scaled],
            ))
        }
        P::Square => {
            let two_x = alg.op(P::Scale(2.0), &[x]);
            one(alg.op(P::Mul, &[g, &two_x]))
        }
        P::Powf(p) => {
            let d = alg.op(P::Powf(p - 1.0), &[x]);
            let d = alg.op(P::Scale(*p), &[&d]);
            one(alg.op(P::Mul, &[g, &d]))
        }
        P::Sin => {
            let d = alg.op(P::Cos, &[x]);
            one(alg.op(P::Mul, &[g, &d]))
        }
        P::Cos => {
            let d = alg.op(P::Sin, &[x]);
            let d = alg.op(P::Scale(-1.0), &[&d]);
            one(alg.op(P::Mul, &[g, &d]))
        }
        P::Exp => one(alg.op(P::Mul, &[g, out])),
        P::Tanh => {
            // 1 - y²
            let d = alg.op(P::Square, &[out]);
            let d = alg.op(P::Scale(-1.0), &[&d]);
            let d = alg.op(P::AddScalar(1.0), &[&d]);
            one(alg.op(P::Mul, &[g, &d]))
        }
        P::Sigmoid => {
            // y (1 - y)
            let c = alg.op(P::Scale(-1.0), &[out]);
            let c = alg.op(P::AddScalar(1.0), &[&c]);
            let d = alg.op(P::Mul, &[out, &c]);
            one(alg.op(P::Mul, &[g, &d]))
        }
        P::Relu => {
            // Subgradient 0 at the kink; the mask is piecewise constant.
            let mask = alg.constant(xv.map(|v| if v > 0.0 { 1.0 } else { 0.0 }));
            one(alg.op(P::Mul, &[g, &mask]))
        }
        P::SliceCols { start, .. } => one(alg.op(
            P::PadCols {
                total: xv.cols(),
                start: *start,
            },
            &[g],
        )),
        P::PadCols { start, .. } => one(alg.op(
            P::SliceCols {
                start: *start,
                len: xv.cols(),
            },
            &[g],
        )),
        P::ConcatCols => {
            let mut start = 0;
            parents
                .iter()
                .zip(want)
                .map(|((_, v), &w)| {
                    let len = v.cols();
                    let s = start;
                    start += len;
                    w.then(|| alg.op(P::SliceCols { start: s, len }, &[g]))
                })
                .collect()
        }
        P::SumRows => one(alg.op(P::BroadcastRows(xv.rows()), &[g])),
        P::BroadcastRows(_) => one(alg.op(P::SumRows, &[g])),
        P::Expand { .. } => one(alg.op(P::Sum, &[g])),
    }
}

fn backward<A: Algebra>(alg: &A, graph: &Graph, output: usize, seed: A::V, wrt: &[Var<'_>]) -> Vec<A::V> {
    let n = output + 1;
    let wrt_ids: Vec<usize> = wrt.iter().map(|v| v.id).collect();
    let mut depends = vec![false; n];
    {
        let nodes = graph.nodes.borrow();
        for &w in &wrt_ids {
            if w < n && nodes[w].requires_grad {
                depends[w] = true;
            }
        }
        let start = wrt_ids.iter().copied().min().unwrap_or(n);
        for i in start..n {
            if !depends[i] && nodes[i].requires_grad {
                depends[i] = nodes[i].parents.iter().any(|&p| depends[p]);
            }
        }
    }

    let mut is_target = vec![false; n];
    for &w in &wrt_ids {
        if w < n {
            is_target[w] = true;
        }
    }
    let mut found: Vec<Option<A::V>> = vec![None; n];
    let mut grads: Vec<Option<A::V>> = vec![None; n];
    if depends[output] {
        grads[output] = Some(seed);
    }

    for i in (0..n).rev() {
        if !depends[i] {
            continue;
        }
        let Some(g) = grads[i].take() else { continue };
        if is_target[i] {
            found[i] = Some(g.clone());
        }
        let (op, parents, value) = graph.snapshot(i);
        let NodeOp::Op(op) = op else { continue };
        let want: Vec<bool> = parents.iter().map(|&p| depends[p]).collect();
        if !want.iter().any(|&w| w) {
            continue;
        }
        let parent_vals: Vec<(A::V, Rc<Tensor>)> = parents
            .iter()
            .map(|&p| {
                let v = graph.nodes.borrow()[p].value.clone();
                (alg.node(p, &v), v)
            })
            .collect();
        let out = alg.node(i, &value);
        let contributions = vjp(alg, &op, &g, &parent_vals, &out, &want);
        for ((&p, contrib), &w) in parents.iter().zip(contributions).zip(&want) {
            if !w {
                continue;
            }
            let Some(c) = contrib else { continue };
            grads[p] = Some(match grads[p].take() {
                Some(acc) => alg.accumulate(acc, c),
                None => c,
            });
        }
    }

    wrt_ids
        .iter()
        .map(|&w| {
            (w < n).then(|| found[w].clone()).flatten().unwrap_or_else(|| {
                let (r, c) = graph.nodes.borrow()[w].value.shape();
                alg.constant(Tensor::zeros(r, c))
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Rng;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn forward_values() {
        let g = Graph::new();
        let x = g.input(Tensor::column(&[1.0, 2.0]).unwrap());
        let y = g.input(Tensor::column(&[0.5, -4.0]).unwrap());
        assert_eq!(x.add(y).unwrap().value().data(), &[1.5, -2.0]);
        assert_eq!(g.constant(Tensor::zeros(2, 2)).tanh().value().data(), &[0.0; 4]);
        let s = g.constant(Tensor::full(3, 1, FRAC_PI_2)).sin();
        assert!(s.value().data().iter().all(|v| (v - 1.0).abs() < 1e-15));
    }

    #[test]
    fn power_rule() {
        let g = Graph::new();
        let x = g.input(Tensor::scalar(3.0));
        let dy = g.diff(x.square(), x).unwrap();
        assert_eq!(dy.value().item(), 6.0);
    }

    #[test]
    fn second_derivative_of_sin() {
        for (x0, expected) in [(0.0, 0.0), (FRAC_PI_2, -1.0)] {
            let g = Graph::new();
            let x = g.input(Tensor::scalar(x0));
            let d1 = g.diff(x.sin(), x).unwrap();
            let d2 = g.diff(d1, x).unwrap();
            assert!((d2.value().item() - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn cross_graph_is_rejected() {
        let g1 = Graph::new();
        let g2 = Graph::new();
        let a = g1.input(Tensor::scalar(1.0));
        let b = g2.input(Tensor::scalar(1.0));
        assert!(matches!(a.add(b), Err(Error::Usage(_))));
        assert!(g1.grad(a, &[b], &Tensor::scalar(1.0), false).is_err());
    }

    #[test]
    fn seed_shape_is_checked() {
        let g = Graph::new();
        let x = g.input(Tensor::zeros(3, 1));
        let y = x.sin();
        assert!(matches!(
            g.grad(y, &[x], &Tensor::ones(2, 1), false),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn unreached_gradient_is_exactly_zero() {
        let g = Graph::new();
        let x = g.input(Tensor::ones(2, 3));
        let z = g.input(Tensor::ones(4, 1));
        let y = x.square().sum();
        let grads = g.grad(y, &[z, x], &Tensor::scalar(1.0), false).unwrap();
        assert_eq!(grads[0].value().data(), &[0.0; 4]);
        assert_eq!(grads[1].value().data(), &[2.0; 6]);
        // A target recorded after the output is also unreached.
        let late = g.input(Tensor::scalar(5.0));
        let got = g.grad_tensors(y, &[late], &Tensor::scalar(1.0)).unwrap();
        assert_eq!(got[0].data(), &[0.0]);
        // Constants never receive gradient.
        let c = g.constant(Tensor::scalar(2.0));
        let yc = c.square();
        assert_eq!(g.grad_tensors(yc, &[c], &Tensor::scalar(1.0)).unwrap()[0].item(), 0.0);
    }

    #[test]
    fn fan_out_accumulates() {
        // y = x·x + 3x, dy/dx = 2x + 3
        let g = Graph::new();
        let x = g.input(Tensor::scalar(2.0));
        let y = x.mul(x).unwrap().add(x.scale(3.0)).unwrap();
        assert_eq!(g.diff(y, x).unwrap().value().item(), 7.0);
    }

    #[test]
    fn column_split_partials() {
        // y = x·t from a (n, 2) input: ∂y/∂x = t, ∂y/∂t = x.
        let mut rng = Rng::new(5);
        let input = Tensor::uniform(&mut rng, 6, 2, -2.0, 2.0).unwrap();
        let g = Graph::new();
        let xt = g.input(input.clone());
        let y = xt.col(0).unwrap().mul(xt.col(1).unwrap()).unwrap();
        let d = g.diff(y, xt).unwrap().value();
        let h = 1e-5;
        for r in 0..6 {
            for c in 0..2 {
                let f = |shift: f64| {
                    let mut p = input.clone();
                    p.set(r, c, p.get(r, c) + shift);
                    p.get(r, 0) * p.get(r, 1)
                };
                let fd = (f(h) - f(-h)) / (2.0 * h);
                let rel = (d.get(r, c) - fd).abs() / fd.abs().max(1e-8);
                assert!(rel < 1e-6, "row {r} col {c}: {} vs {fd}", d.get(r, c));
            }
        }
        assert_eq!(d.col(0).unwrap().data(), input.col(1).unwrap().data());
        assert_eq!(d.col(1).unwrap().data(), input.col(0).unwrap().data());
    }

    #[test]
    fn double_backward_cube() {
        let mut rng = Rng::new(9);
        for _ in 0..20 {
            let x0 = -2.0 + 4.0 * rng.next_f64();
            let g = Graph::new();
            let x = g.input(Tensor::scalar(x0));
            let y = x.mul(x).unwrap().mul(x).unwrap();
            let d2 = g.diff(g.diff(y, x).unwrap(), x).unwrap().value().item();
            assert!((d2 - 6.0 * x0).abs() <= 1e-4 * (6.0 * x0).abs().max(1e-12));
        }
    }
}
