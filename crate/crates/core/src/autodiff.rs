//! Reverse-mode differentiation over dense matrices.
//!
//! A [`Tape`] records every operation applied to its [`Var`]s. Calling
//! [`Tape::backward`] on a `1×1` node walks the record in reverse and returns
//! the gradient of that scalar with respect to every node on the tape.
//!
//! Binary elementwise operations broadcast operands whose row or column count
//! is one, and the backward pass sums the gradient back to the operand shape.
//!
//! Subgradient conventions at kinks: `clip` uses the interior derivative (one)
//! when the input sits exactly on a bound, `minimum` routes the gradient to
//! the first argument on ties, and `relu` has derivative zero at the origin.

use ndarray::{Array2, Axis, Zip};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Offset(Var),
    MatMul(Var, Var),
    Tanh(Var),
    Relu(Var),
    Exp(Var),
    Log(Var),
    Square(Var),
    Minimum(Var, Var),
    Clip(Var, f64, f64),
    Sum(Var),
    Mean(Var),
    SumCols(Var),
    LogSoftmax(Var),
    Gather(Var, Vec<usize>),
    ConcatCols(Var, Var),
    LogMeanExp(Var),
}

#[derive(Debug, Clone)]
struct Node {
    value: Array2<f64>,
    op: Op,
    /// Whether any trainable leaf feeds this node.
    grad: bool,
}

#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn broadcast_shape(a: (usize, usize), b: (usize, usize)) -> (usize, usize) {
    let dim = |x: usize, y: usize| {
        if x == y || y == 1 {
            x
        } else if x == 1 {
            y
        } else {
            panic!("incompatible shapes {a:?} and {b:?}")
        }
    };
    (dim(a.0, b.0), dim(a.1, b.1))
}

fn expand(x: &Array2<f64>, shape: (usize, usize)) -> Array2<f64> {
    if x.dim() == shape {
        x.clone()
    } else {
        x.broadcast(shape)
            .expect("broadcast checked by broadcast_shape")
            .to_owned()
    }
}

/// Sum `grad` down to `shape` along broadcast axes.
fn reduce_to(grad: Array2<f64>, shape: (usize, usize)) -> Array2<f64> {
    let mut g = grad;
    if shape.0 == 1 && g.nrows() != 1 {
        g = g.sum_axis(Axis(0)).insert_axis(Axis(0));
    }
    if shape.1 == 1 && g.ncols() != 1 {
        g = g.sum_axis(Axis(1)).insert_axis(Axis(1));
    }
    g
}

fn accumulate(slot: &mut Option<Array2<f64>>, delta: Array2<f64>) {
    match slot {
        Some(existing) => *existing += &delta,
        None => *slot = Some(delta),
    }
}

/// `tanh` through a single `exp`; small arguments use libm's version.
pub fn tanh(x: f64) -> f64 {
    let a = x.abs();
    if a < 0.1 {
        return x.tanh();
    }
    let e = (-2.0 * a).exp();
    ((1.0 - e) / (1.0 + e)).copysign(x)
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> Var {
        let grad = match &op {
            Op::Leaf => true,
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::MatMul(a, b) | Op::Minimum(a, b) | Op::ConcatCols(a, b) => {
                self.nodes[a.0].grad || self.nodes[b.0].grad
            }
            Op::Scale(a, _)
            | Op::Offset(a)
            | Op::Tanh(a)
            | Op::Relu(a)
            | Op::Exp(a)
            | Op::Log(a)
            | Op::Square(a)
            | Op::Clip(a, _, _)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::SumCols(a)
            | Op::LogSoftmax(a)
            | Op::Gather(a, _)
            | Op::LogMeanExp(a) => self.nodes[a.0].grad,
        };
        self.nodes.push(Node { value, op, grad });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    /// Value of a `1×1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        let val = self.value(v);
        debug_assert_eq!(val.dim(), (1, 1));
        val[[0, 0]]
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).dim()
    }

    /// Register a leaf whose gradient is tracked.
    pub fn leaf(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Register data that never needs a gradient; the backward pass skips
    /// everything that depends only on constants.
    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, grad: false });
        Var(self.nodes.len() - 1)
    }

    pub fn constant_scalar(&mut self, x: f64) -> Var {
        self.constant(Array2::from_elem((1, 1), x))
    }

    /// Copy of `v` that blocks gradient flow.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    fn binary_broadcast(
        &mut self,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Var {
        let shape = broadcast_shape(self.shape(a), self.shape(b));
        let av = expand(self.value(a), shape);
        let bv = expand(self.value(b), shape);
        let mut out = av;
        Zip::from(&mut out).and(&bv).for_each(|x, &y| *x = f(*x, y));
        self.push(out, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary_broadcast(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary_broadcast(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary_broadcast(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Elementwise minimum; ties go to `a`.
    pub fn minimum(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "minimum needs equal shapes");
        self.binary_broadcast(a, b, |x, y| if x <= y { x } else { y }, Op::Minimum(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a) * c;
        self.push(out, Op::Scale(a, c))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a) + c;
        self.push(out, Op::Offset(a))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).dot(self.value(b));
        self.push(out, Op::MatMul(a, b))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(tanh);
        self.push(out, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(|x| x.max(0.0));
        self.push(out, Op::Relu(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(f64::exp);
        self.push(out, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(f64::ln);
        self.push(out, Op::Log(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(|x| x * x);
        self.push(out, Op::Square(a))
    }

    pub fn clip(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        assert!(lo <= hi, "clip bounds out of order");
        let out = self.value(a).mapv(|x| x.clamp(lo, hi));
        self.push(out, Op::Clip(a, lo, hi))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Array2::from_elem((1, 1), self.value(a).sum());
        self.push(out, Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let n = v.len().max(1) as f64;
        let out = Array2::from_elem((1, 1), v.sum() / n);
        self.push(out, Op::Mean(a))
    }

    /// Row sums, `n×d -> n×1`.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let out = self.value(a).sum_axis(Axis(1)).insert_axis(Axis(1));
        self.push(out, Op::SumCols(a))
    }

    /// Row-wise log-softmax with max subtraction.
    pub fn log_softmax(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        for mut row in out.rows_mut() {
            let max = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
            let lse = max + row.iter().map(|&x| (x - max).exp()).sum::<f64>().ln();
            row.mapv_inplace(|x| x - lse);
        }
        self.push(out, Op::LogSoftmax(a))
    }

    /// Pick column `idx[i]` from row `i`, `n×d -> n×1`.
    pub fn gather(&mut self, a: Var, idx: &[usize]) -> Var {
        let v = self.value(a);
        assert_eq!(v.nrows(), idx.len(), "gather index count");
        let out = Array2::from_shape_fn((idx.len(), 1), |(i, _)| v[[i, idx[i]]]);
        self.push(out, Op::Gather(a, idx.to_vec()))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Var {
        let out = ndarray::concatenate(Axis(1), &[self.value(a).view(), self.value(b).view()])
            .expect("concat_cols needs equal row counts");
        self.push(out, Op::ConcatCols(a, b))
    }

    /// `log(mean(exp(a)))` over all entries, evaluated with max subtraction.
    pub fn log_mean_exp(&mut self, a: Var) -> Var {
        let v = self.value(a);
        assert!(!v.is_empty(), "log_mean_exp of an empty node");
        let max = v.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
        let mean = v.iter().map(|&x| (x - max).exp()).sum::<f64>() / v.len() as f64;
        let out = Array2::from_elem((1, 1), max + mean.ln());
        self.push(out, Op::LogMeanExp(a))
    }

    /// Gradient of the `1×1` node `loss` with respect to every node.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.shape(loss), (1, 1), "backward needs a scalar loss");
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Array2::ones((1, 1)));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            match &node.op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    if self.nodes[a.0].grad {
                        accumulate(&mut grads[a.0], reduce_to(g.clone(), self.shape(*a)));
                    }
                    if self.nodes[b.0].grad {
                        accumulate(&mut grads[b.0], reduce_to(g.clone(), self.shape(*b)));
                    }
                }
                Op::Sub(a, b) => {
                    if self.nodes[a.0].grad {
                        accumulate(&mut grads[a.0], reduce_to(g.clone(), self.shape(*a)));
                    }
                    if self.nodes[b.0].grad {
                        accumulate(&mut grads[b.0], reduce_to(-&g, self.shape(*b)));
                    }
                }
                Op::Mul(a, b) => {
                    let shape = g.dim();
                    let av = expand(self.value(*a), shape);
                    let bv = expand(self.value(*b), shape);
                    if self.nodes[a.0].grad {
                        accumulate(&mut grads[a.0], reduce_to(&g * &bv, self.shape(*a)));
                    }
                    if self.nodes[b.0].grad {
                        accumulate(&mut grads[b.0], reduce_to(&g * &av, self.shape(*b)));
                    }
                }
                Op::Scale(a, c) => {
                    if self.nodes[a.0].grad {
                        accumulate(&mut grads[a.0], &g * *c);
                    }
                }
                Op::Offset(a) => {
                    if self.nodes[a.0].grad {
                        accumulate(&mut grads[a.0], g.clone());
                    }
                }
                Op::MatMul(a, b) => {
                    if self.nodes[a.0].grad {
                        accumulate(&mut grads[a.0], g.dot(&self.value(*b).t()));
                    }
                    if self.nodes[b.0].grad {
                        accumulate(&mut grads[b.0], self.value(*a).t().dot(&g));
                    }
                }
                Op::Tanh(a) => {
                    let mut d = g.clone();
                    Zip::from(&mut d)
                        .and(&node.value)
                        .for_each(|d, &y| *d *= 1.0 - y * y);
                    if self.nodes[a.0].grad {
                        accumulate(&mut grads[a.0], d);
                    }
                }
                Op::Relu(a) => {
                    let mut d = g.clone();
                    Zip::from(&mut d)
                        .and(self.value(*a))
                        .for_each(|d, &x| if x <= 0.0 { *d = 0.0 });
                    if self.nodes[a.0].grad {
                        accumulate(&mut grads[a.0], d);
                    }
                }
                Op::Exp(a) => {
                    if self.nodes[a.0].grad {
                        accumulate(&mut grads[a.0], &g * &node.value);
                    }
                }
                Op::Log(a) => {
                    if self.nodes[a.0].grad {
                        accumulate(&mut grads[a.0], &g / self.value(*a));
                    }
                }
                Op::Square(a) => {
                    if self.nodes[a.0].grad {
                        accumulate(&mut grads[a.0], &g * &(self.value(*a) * 2.0));
                    }
                }
                Op::Minimum(a, b) => {
                    let av = self.value(*a);
                    let bv = self.value(*b);
                    let mut da = g.clone();
                    let mut db = g.clone();
                    Zip::from(&mut da)
                        .and(&mut db)
                        .and(av)
                        .and(bv)
                        .for_each(|da, db, &x, &y| {
                            if x <= y {
                                *db = 0.0;
                            } else {
                                *da = 0.0;
                            }
                        });
                    if self.nodes[a.0].grad {
                        accumulate(&mut grads[a.0], da);
                    }
                    if self.nodes[b.0].grad {
                        accumulate(&mut grads[b.0], db);
                    }
                }
                Op::Clip(a, lo, hi) => {
                    let mut d = g.clone();
                    Zip::from(&mut d).and(self.value(*a)).for_each(|d, &x| {
                        if x < *lo || x > *hi {
                            *d = 0.0;
                        }
                    });
                    if self.nodes[a.0].grad {
                        accumulate(&mut grads[a.0], d);
                    }
                }
                Op::Sum(a) => {
                    let d = Array2::from_elem(self.shape(*a), g[[0, 0]]);
                    if self.nodes[a.0].grad {
                        accumulate(&mut grads[a.0], d);
                    }
                }
                Op::Mean(a) => {
                    let shape = self.shape(*a);
                    let n = (shape.0 * shape.1).max(1) as f64;
                    if self.nodes[a.0].grad {
                        accumulate(&mut grads[a.0], Array2::from_elem(shape, g[[0, 0]] / n));
                    }
                }
                Op::SumCols(a) => {
                    let d = expand(&g, self.shape(*a));
                    if self.nodes[a.0].grad {
                        accumulate(&mut grads[a.0], d);
                    }
                }
                Op::LogSoftmax(a) => {
                    let mut d = g.clone();
                    for (mut drow, yrow) in d.rows_mut().into_iter().zip(node.value.rows()) {
                        let total: f64 = drow.sum();
                        Zip::from(&mut drow)
                            .and(&yrow)
                            .for_each(|d, &y| *d -= y.exp() * total);
                    }
                    if self.nodes[a.0].grad {
                        accumulate(&mut grads[a.0], d);
                    }
                }
                Op::Gather(a, idx) => {
                    let mut d = Array2::zeros(self.shape(*a));
                    for (i, &j) in idx.iter().enumerate() {
                        d[[i, j]] = g[[i, 0]];
                    }
                    if self.nodes[a.0].grad {
                        accumulate(&mut grads[a.0], d);
                    }
                }
                Op::ConcatCols(a, b) => {
                    let split = self.shape(*a).1;
                    let da = g.slice(ndarray::s![.., ..split]).to_owned();
                    let db = g.slice(ndarray::s![.., split..]).to_owned();
                    if self.nodes[a.0].grad {
                        accumulate(&mut grads[a.0], da);
                    }
                    if self.nodes[b.0].grad {
                        accumulate(&mut grads[b.0], db);
                    }
                }
                Op::LogMeanExp(a) => {
                    let y = node.value[[0, 0]];
                    let x = self.value(*a);
                    let n = x.len() as f64;
                    let scale = g[[0, 0]];
                    let d = x.mapv(|xi| scale * (xi - y).exp() / n);
                    if self.nodes[a.0].grad {
                        accumulate(&mut grads[a.0], d);
                    }
                }
            }
            grads[i] = Some(g);
        }
        Gradients { grads }
    }
}

/// Output of [`Tape::backward`]. Nodes that do not influence the loss have no
/// gradient; [`Gradients::get_or_zeros`] fills those in.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Array2<f64>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn get_or_zeros(&self, tape: &Tape, v: Var) -> Array2<f64> {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Array2::zeros(tape.shape(v)))
    }
}
