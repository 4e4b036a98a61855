use std::sync::Arc;

use super::counter;
use super::kernels::{self, ScanDims, ScanMode, ScanOperands};
use super::{Scalar, Tensor};
use crate::error::{contract_err, dim_err, Error, Result};

/// Handle to a value recorded in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    AddBias(Var, Var),
    Scale(Var, T),
    AddScalar(Var, T),
    Neg(Var),
    Exp(Var),
    Sigmoid(Var),
    Silu(Var),
    Gelu(Var),
    Softplus(Var),
    Sum(Var),
    Reshape(Var),
    Gather {
        x: Var,
        index: Arc<[usize]>,
    },
    Concat(Vec<Var>),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    Depthwise {
        x: Var,
        kernel: Var,
        bias: Option<Var>,
        k: usize,
    },
    Softmax(Var),
    Scan {
        x: Var,
        delta: Var,
        a: Var,
        b: Var,
        c: Var,
        skip: Option<Var>,
        mode: ScanMode,
        states: Vec<T>,
    },
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::AddBias(..) => "add_bias",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::Neg(..) => "neg",
            Op::Exp(..) => "exp",
            Op::Sigmoid(..) => "sigmoid",
            Op::Silu(..) => "silu",
            Op::Gelu(..) => "gelu",
            Op::Softplus(..) => "softplus",
            Op::Sum(..) => "sum",
            Op::Reshape(..) => "reshape",
            Op::Gather { .. } => "gather",
            Op::Concat(..) => "concat",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Depthwise { .. } => "depthwise_conv2d",
            Op::Softmax(..) => "softmax",
            Op::Scan { .. } => "selective_scan",
        }
    }

    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::MatMul(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::Div(a, b)
            | Op::AddBias(a, b) => vec![*a, *b],
            Op::Scale(x, _)
            | Op::AddScalar(x, _)
            | Op::Neg(x)
            | Op::Exp(x)
            | Op::Sigmoid(x)
            | Op::Silu(x)
            | Op::Gelu(x)
            | Op::Softplus(x)
            | Op::Sum(x)
            | Op::Reshape(x)
            | Op::Softmax(x) => vec![*x],
            Op::Gather { x, .. } => vec![*x],
            Op::Concat(parts) => parts.clone(),
            Op::LayerNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
            Op::Depthwise {
                x, kernel, bias, ..
            } => {
                let mut v = vec![*x, *kernel];
                v.extend(bias);
                v
            }
            Op::Scan {
                x,
                delta,
                a,
                b,
                c,
                skip,
                ..
            } => {
                let mut v = vec![*x, *delta, *a, *b, *c];
                v.extend(skip);
                v
            }
        }
    }
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Tape of recorded ops. Nodes are appended in execution order, so the
/// node list is already a topological order.
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    checks: bool,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by [`Graph::backward`], indexed by leaf.
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
    shapes: Vec<Vec<usize>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of a leaf, or `None` when the loss does not depend on it.
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn tensor(&self, v: Var) -> Option<Tensor<T>> {
        self.get(v)
            .map(|g| Tensor::new(self.shapes[v.0].clone(), g.to_vec()).expect("grad shape"))
    }

    pub fn take(&mut self, v: Var) -> Option<Vec<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

fn accumulate<T: Scalar>(slot: &mut Option<Vec<T>>, g: Vec<T>) {
    match slot {
        Some(acc) => {
            for (a, b) in acc.iter_mut().zip(g) {
                *a = *a + b;
            }
        }
        None => *slot = Some(g),
    }
}

fn elementwise_ops(n: usize) {
    counter::record(n as u64);
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            checks: false,
        }
    }

    /// Enables NaN/Inf detection on every forward value and gradient.
    pub fn with_checks(mut self, on: bool) -> Self {
        self.checks = on;
        self
    }

    pub fn set_checks(&mut self, on: bool) {
        self.checks = on;
    }

    pub fn checks(&self) -> bool {
        self.checks
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn op_name(&self, v: Var) -> &'static str {
        self.nodes[v.0].op.name()
    }

    /// Input handles of a node, in operand order.
    pub fn inputs(&self, v: Var) -> Vec<Var> {
        self.nodes[v.0].op.inputs()
    }

    fn push(&mut self, op: Op<T>, value: Tensor<T>) -> Result<Var> {
        let id = self.nodes.len();
        if self.checks && !value.all_finite() {
            return Err(Error::Numeric {
                node: id,
                op: op.name(),
                detail: "forward value".into(),
            });
        }
        let requires_grad = op.inputs().iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(id))
    }

    pub fn leaf(&mut self, tensor: Tensor<T>, requires_grad: bool) -> Var {
        let id = self.nodes.len();
        self.nodes.push(Node {
            value: tensor.with_requires_grad(requires_grad),
            op: Op::Leaf,
            requires_grad,
        });
        Var(id)
    }

    pub fn param(&mut self, tensor: Tensor<T>) -> Var {
        self.leaf(tensor, true)
    }

    pub fn constant(&mut self, tensor: Tensor<T>) -> Var {
        self.leaf(tensor, false)
    }

    fn data(&self, v: Var) -> &[T] {
        self.nodes[v.0].value.data()
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(dim_err!(
                "{what}: shapes {:?} and {:?} differ",
                self.shape(a),
                self.shape(b)
            ));
        }
        Ok(())
    }

    fn unary(&mut self, x: Var, op: Op<T>, f: impl Fn(T) -> T) -> Result<Var> {
        let value = self.value(x).map(f);
        elementwise_ops(value.len());
        self.push(op, value)
    }

    fn binary(&mut self, a: Var, b: Var, op: Op<T>, f: impl Fn(T, T) -> T) -> Result<Var> {
        self.same_shape(a, b, op.name())?;
        let data = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        let value = Tensor::new(self.shape(a).to_vec(), data)?;
        elementwise_ops(value.len());
        self.push(op, value)
    }

    /// `a[..., k] x b[k, n] -> [..., n]`; leading axes of `a` are rows.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let (k2, n) = match self.shape(b) {
            [k2, n] => (*k2, *n),
            s => return Err(dim_err!("matmul rhs must be 2-D, got {s:?}")),
        };
        let k = *sa.last().expect("non-empty shape");
        if k != k2 {
            return Err(dim_err!(
                "matmul inner dimensions differ: lhs {sa:?}, rhs [{k2}, {n}]"
            ));
        }
        let m = self.value(a).len() / k;
        let mut out = vec![T::zero(); m * n];
        kernels::gemm(
            m,
            k,
            n,
            self.data(a),
            false,
            self.data(b),
            false,
            &mut out,
            false,
        );
        counter::record(2 * (m * k * n) as u64);
        let mut shape = sa;
        *shape.last_mut().expect("non-empty") = n;
        let value = Tensor::new(shape, out)?;
        self.push(Op::MatMul(a, b), value)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Div(a, b), |x, y| x / y)
    }

    /// Adds `bias[n]` to every row of `x[..., n]`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let n = *self.shape(x).last().expect("non-empty");
        if self.shape(bias) != [n] {
            return Err(dim_err!(
                "bias shape {:?} does not match last axis {n}",
                self.shape(bias)
            ));
        }
        let b = self.data(bias);
        let data = self
            .data(x)
            .chunks(n)
            .flat_map(|row| row.iter().zip(b).map(|(&v, &bb)| v + bb))
            .collect();
        let value = Tensor::new(self.shape(x).to_vec(), data)?;
        elementwise_ops(value.len());
        self.push(Op::AddBias(x, bias), value)
    }

    pub fn scale(&mut self, x: Var, factor: T) -> Result<Var> {
        self.unary(x, Op::Scale(x, factor), |v| v * factor)
    }

    pub fn add_scalar(&mut self, x: Var, value: T) -> Result<Var> {
        self.unary(x, Op::AddScalar(x, value), |v| v + value)
    }

    pub fn neg(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::Neg(x), |v| -v)
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::Exp(x), |v| v.exp())
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::Sigmoid(x), kernels::sigmoid)
    }

    /// `x · sigmoid(x)`.
    pub fn silu(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::Silu(x), |v| v * kernels::sigmoid(v))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::Gelu(x), |v| kernels::gelu(v).0)
    }

    /// `ln(1 + e^x)`, computed without overflow.
    pub fn softplus(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::Softplus(x), kernels::softplus)
    }

    /// Sum of all elements, as a `[1]` tensor.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.data(x).iter().copied().sum::<T>();
        elementwise_ops(self.value(x).len());
        self.push(Op::Sum(x), Tensor::scalar(s))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).len();
        let s = self.sum(x)?;
        self.scale(s, T::one() / T::of(n as f64))
    }

    pub fn reshape(&mut self, x: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape)?;
        self.push(Op::Reshape(x), value)
    }

    /// `out[i] = x[index[i]]` over the flat buffers, reshaped to `shape`.
    /// Permutations, transposes, patch extraction and scan-route orderings
    /// are all expressed through this op.
    pub fn gather(
        &mut self,
        x: Var,
        index: Arc<[usize]>,
        shape: impl Into<Vec<usize>>,
    ) -> Result<Var> {
        let src = self.data(x);
        if let Some(&bad) = index.iter().find(|&&i| i >= src.len()) {
            return Err(dim_err!(
                "gather index {bad} out of range for {} elements",
                src.len()
            ));
        }
        let data = index.iter().map(|&i| src[i]).collect();
        let value = Tensor::new(shape, data)?;
        self.push(Op::Gather { x, index }, value)
    }

    /// Concatenation along the last axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| dim_err!("concat needs at least one input"))?;
        let lead = &self.shape(*first)[..self.shape(*first).len() - 1];
        let rows: usize = lead.iter().product();
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            if &s[..s.len() - 1] != lead {
                return Err(dim_err!("concat leading axes differ: {:?} vs {lead:?}", s));
            }
            widths.push(*s.last().expect("non-empty"));
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.data(p)[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead.to_vec();
        shape.push(total);
        let value = Tensor::new(shape, data)?;
        self.push(Op::Concat(parts.to_vec()), value)
    }

    /// Layer normalization over the last axis followed by `gamma`/`beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: T) -> Result<Var> {
        let n = *self.shape(x).last().expect("non-empty");
        if self.shape(gamma) != [n] || self.shape(beta) != [n] {
            return Err(dim_err!(
                "layer_norm affine params {:?}/{:?} do not match width {n}",
                self.shape(gamma),
                self.shape(beta)
            ));
        }
        let (y, xhat, rstd) =
            kernels::layer_norm_forward(self.data(x), self.data(gamma), self.data(beta), n, eps);
        let value = Tensor::new(self.shape(x).to_vec(), y)?;
        self.push(
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
            value,
        )
    }

    /// Depthwise "same" 2-D correlation of an `[h, w, c]` map with
    /// `[c, k, k]` kernels (odd `k`) and an optional per-channel bias.
    pub fn depthwise_conv2d(&mut self, x: Var, kernel: Var, bias: Option<Var>) -> Result<Var> {
        let (h, w, c) = match self.shape(x) {
            [h, w, c] => (*h, *w, *c),
            s => return Err(dim_err!("depthwise input must be [h, w, c], got {s:?}")),
        };
        let k = match self.shape(kernel) {
            [kc, k1, k2] if *kc == c && k1 == k2 => *k1,
            s => return Err(dim_err!("depthwise kernels must be [{c}, k, k], got {s:?}")),
        };
        if k % 2 == 0 {
            return Err(Error::Config(format!(
                "depthwise kernel size must be odd, got {k}"
            )));
        }
        if let Some(b) = bias {
            if self.shape(b) != [c] {
                return Err(dim_err!(
                    "depthwise bias must be [{c}], got {:?}",
                    self.shape(b)
                ));
            }
        }
        let y = kernels::depthwise_forward(
            self.data(x),
            self.data(kernel),
            bias.map(|b| self.data(b)),
            h,
            w,
            c,
            k,
        );
        let value = Tensor::new(vec![h, w, c], y)?;
        self.push(Op::Depthwise { x, kernel, bias, k }, value)
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let n = *self.shape(x).last().expect("non-empty");
        let y = kernels::softmax_rows(self.data(x), n);
        let value = Tensor::new(self.shape(x).to_vec(), y)?;
        self.push(Op::Softmax(x), value)
    }

    /// Selective scan over `x[l, d]` with step sizes `delta[l, d]`, state
    /// matrix `a[d, h]`, input/output projections `b, c[l, h]` and an
    /// optional per-channel skip `skip[d]`. The initial state is zero.
    #[allow(clippy::too_many_arguments)]
    pub fn selective_scan(
        &mut self,
        x: Var,
        delta: Var,
        a: Var,
        b: Var,
        c: Var,
        skip: Option<Var>,
        mode: ScanMode,
    ) -> Result<Var> {
        let (l, d) = match self.shape(x) {
            [l, d] => (*l, *d),
            s => return Err(dim_err!("scan input must be [L, d], got {s:?}")),
        };
        let h = match self.shape(a) {
            [ad, h] if *ad == d => *h,
            s => return Err(dim_err!("scan A must be [{d}, H], got {s:?}")),
        };
        if self.shape(delta) != [l, d] {
            return Err(dim_err!(
                "scan delta must be [{l}, {d}], got {:?}",
                self.shape(delta)
            ));
        }
        for (name, v) in [("B", b), ("C", c)] {
            if self.shape(v) != [l, h] {
                return Err(dim_err!(
                    "scan {name} must be [{l}, {h}], got {:?}",
                    self.shape(v)
                ));
            }
        }
        if let Some(s) = skip {
            if self.shape(s) != [d] {
                return Err(dim_err!("scan D must be [{d}], got {:?}", self.shape(s)));
            }
        }
        if self.data(delta).iter().any(|&v| v <= T::zero()) {
            return Err(contract_err!("scan step sizes must be strictly positive"));
        }
        let dims = ScanDims { l, d, h };
        let trace = {
            let operands = ScanOperands {
                x: self.data(x),
                delta: self.data(delta),
                a: self.data(a),
                b: self.data(b),
                c: self.data(c),
                skip: skip.map(|s| self.data(s)),
                h0: None,
            };
            kernels::scan_forward(&operands, dims, mode)
        };
        let value = Tensor::new(vec![l, d], trace.y)?;
        self.push(
            Op::Scan {
                x,
                delta,
                a,
                b,
                c,
                skip,
                mode,
                states: trace.states,
            },
            value,
        )
    }

    /// Reverse-mode sweep from a scalar `loss`. Returns gradients of every
    /// leaf that requires them; intermediate gradients are dropped as soon
    /// as they have been propagated.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).len() != 1 {
            return Err(contract_err!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            ));
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<T>>> = (0..n).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                grads[i] = None;
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            if self.checks && g.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric {
                    node: i,
                    op: node.op.name(),
                    detail: "gradient".into(),
                });
            }
            if matches!(node.op, Op::Leaf) {
                grads[i] = Some(g);
                continue;
            }
            for (input, gi) in self.vjp(i, &g)? {
                if self.nodes[input.0].requires_grad {
                    accumulate(&mut grads[input.0], gi);
                }
            }
        }

        Ok(Gradients {
            grads,
            shapes: self
                .nodes
                .iter()
                .map(|n| n.value.shape().to_vec())
                .collect(),
        })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Vector-Jacobian products of node `i` for upstream gradient `g`.
    fn vjp(&self, i: usize, g: &[T]) -> Result<Vec<(Var, Vec<T>)>> {
        let node = &self.nodes[i];
        let y = node.value.data();
        let map1 = |x: Var, f: &dyn Fn(T, T) -> T| -> Vec<T> {
            self.data(x)
                .iter()
                .zip(g)
                .map(|(&xv, &gv)| f(xv, gv))
                .collect()
        };
        let out = match &node.op {
            Op::Leaf => vec![],
            Op::MatMul(a, b) => {
                let sb = self.shape(*b);
                let (k, n) = (sb[0], sb[1]);
                let m = self.value(*a).len() / k;
                let mut res = Vec::new();
                if self.wants(*a) {
                    let mut ga = vec![T::zero(); m * k];
                    kernels::gemm(m, n, k, g, false, self.data(*b), true, &mut ga, false);
                    res.push((*a, ga));
                }
                if self.wants(*b) {
                    let mut gb = vec![T::zero(); k * n];
                    kernels::gemm(k, m, n, self.data(*a), true, g, false, &mut gb, false);
                    res.push((*b, gb));
                }
                res
            }
            Op::Add(a, b) => vec![(*a, g.to_vec()), (*b, g.to_vec())],
            Op::Sub(a, b) => vec![(*a, g.to_vec()), (*b, g.iter().map(|&v| -v).collect())],
            Op::Mul(a, b) => vec![
                (*a, map1(*b, &|bv, gv| bv * gv)),
                (*b, map1(*a, &|av, gv| av * gv)),
            ],
            Op::Div(a, b) => {
                let bd = self.data(*b);
                let ga = bd.iter().zip(g).map(|(&bv, &gv)| gv / bv).collect();
                let gb = y
                    .iter()
                    .zip(bd)
                    .zip(g)
                    .map(|((&yv, &bv), &gv)| -gv * yv / bv)
                    .collect();
                vec![(*a, ga), (*b, gb)]
            }
            Op::AddBias(x, bias) => {
                let n = self.value(*bias).len();
                let mut gb = vec![T::zero(); n];
                for row in g.chunks(n) {
                    for (o, &v) in gb.iter_mut().zip(row) {
                        *o = *o + v;
                    }
                }
                vec![(*x, g.to_vec()), (*bias, gb)]
            }
            Op::Scale(x, f) => vec![(*x, g.iter().map(|&v| v * *f).collect())],
            Op::AddScalar(x, _) => vec![(*x, g.to_vec())],
            Op::Neg(x) => vec![(*x, g.iter().map(|&v| -v).collect())],
            Op::Exp(x) => vec![(*x, y.iter().zip(g).map(|(&yv, &gv)| yv * gv).collect())],
            Op::Sigmoid(x) => vec![(
                *x,
                y.iter()
                    .zip(g)
                    .map(|(&s, &gv)| gv * s * (T::one() - s))
                    .collect(),
            )],
            Op::Silu(x) => vec![(
                *x,
                map1(*x, &|xv, gv| {
                    let s = kernels::sigmoid(xv);
                    gv * s * (T::one() + xv * (T::one() - s))
                }),
            )],
            Op::Gelu(x) => vec![(*x, map1(*x, &|xv, gv| gv * kernels::gelu(xv).1))],
            Op::Softplus(x) => vec![(*x, map1(*x, &|xv, gv| gv * kernels::sigmoid(xv)))],
            Op::Sum(x) => vec![(*x, vec![g[0]; self.value(*x).len()])],
            Op::Reshape(x) => vec![(*x, g.to_vec())],
            Op::Gather { x, index } => {
                let mut gx = vec![T::zero(); self.value(*x).len()];
                for (&src, &gv) in index.iter().zip(g) {
                    gx[src] = gx[src] + gv;
                }
                vec![(*x, gx)]
            }
            Op::Concat(parts) => {
                let widths: Vec<usize> = parts
                    .iter()
                    .map(|&p| *self.shape(p).last().expect("non-empty"))
                    .collect();
                let total: usize = widths.iter().sum();
                let rows = g.len() / total;
                let mut res: Vec<(Var, Vec<T>)> = parts
                    .iter()
                    .zip(&widths)
                    .map(|(&p, &w)| (p, Vec::with_capacity(rows * w)))
                    .collect();
                for r in 0..rows {
                    let mut off = r * total;
                    for ((_, buf), &w) in res.iter_mut().zip(&widths) {
                        buf.extend_from_slice(&g[off..off + w]);
                        off += w;
                    }
                }
                res
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                let n = self.value(*gamma).len();
                let (gx, gg, gb) =
                    kernels::layer_norm_backward(g, xhat, rstd, self.data(*gamma), n);
                vec![(*x, gx), (*gamma, gg), (*beta, gb)]
            }
            Op::Depthwise { x, kernel, bias, k } => {
                let s = self.shape(*x);
                let (h, w, c) = (s[0], s[1], s[2]);
                let (gx, gk, gb) =
                    kernels::depthwise_backward(g, self.data(*x), self.data(*kernel), h, w, c, *k);
                let mut res = vec![(*x, gx), (*kernel, gk)];
                if let Some(b) = bias {
                    res.push((*b, gb));
                }
                res
            }
            Op::Softmax(x) => {
                let n = *self.shape(*x).last().expect("non-empty");
                let mut gx = vec![T::zero(); g.len()];
                for ((yr, gr), out) in y.chunks(n).zip(g.chunks(n)).zip(gx.chunks_mut(n)) {
                    let dot = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum::<T>();
                    for ((o, &yv), &gv) in out.iter_mut().zip(yr).zip(gr) {
                        *o = yv * (gv - dot);
                    }
                }
                vec![(*x, gx)]
            }
            Op::Scan {
                x,
                delta,
                a,
                b,
                c,
                skip,
                mode,
                states,
            } => {
                let s = self.shape(*x);
                let dims = ScanDims {
                    l: s[0],
                    d: s[1],
                    h: self.shape(*a)[1],
                };
                let operands = ScanOperands {
                    x: self.data(*x),
                    delta: self.data(*delta),
                    a: self.data(*a),
                    b: self.data(*b),
                    c: self.data(*c),
                    skip: skip.map(|v| self.data(v)),
                    h0: None,
                };
                let sg = kernels::scan_backward(g, &operands, states, dims, *mode);
                let mut res = vec![
                    (*x, sg.x),
                    (*delta, sg.delta),
                    (*a, sg.a),
                    (*b, sg.b),
                    (*c, sg.c),
                ];
                if let Some(sk) = skip {
                    res.push((*sk, sg.skip));
                }
                res
            }
        };
        Ok(out)
    }
}
