//! Reverse-mode gradient tape over the pipeline's differentiable primitives.
//!
//! Values are computed eagerly as ops are recorded. [`Tape::gradient`] walks
//! the recorded nodes backwards from a scalar loss and returns one gradient
//! per registered parameter. [`Tape::replay`] re-evaluates every node from
//! the leaves with the same kernels, which reproduces the recorded values
//! bit for bit.
//!
//! Top-k selection is not an op here: indices are computed outside the tape
//! from node values and fed to [`Tape::gather_rows`], so gradients reach the
//! gathered rows and nothing flows through the index choice itself.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::kernels;
use crate::tensor::{Scalar, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op<T> {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    Scale(usize, T),
    /// `(1 - alpha) * a + alpha * b` with `alpha` a 1x1 node.
    Lerp {
        a: usize,
        b: usize,
        alpha: usize,
    },
    SoftmaxRows {
        x: usize,
        tau: T,
    },
    CosineRows(usize, usize),
    Linear {
        x: usize,
        w: usize,
        b: usize,
    },
    Transpose(usize),
    SumAll(usize),
    RowSums(usize),
    ColSums(usize),
    MinMax(usize),
    GatherRows {
        x: usize,
        indices: Vec<usize>,
    },
    Reshape {
        x: usize,
        rows: usize,
        cols: usize,
    },
}

#[derive(Clone, Debug)]
struct Node<T: Scalar> {
    op: Op<T>,
    value: Tensor<T>,
}

#[derive(Clone, Debug, Default)]
pub struct Tape<T: Scalar> {
    nodes: Vec<Node<T>>,
    params: Vec<(String, usize)>,
}

/// Parameter gradients keyed by the name given to [`Tape::param`].
#[derive(Clone, Debug)]
pub struct Gradients<T: Scalar> {
    by_name: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.by_name.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.by_name.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.by_name.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_name.is_empty()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: Vec::new(),
        }
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

    fn push(&mut self, op: Op<T>, value: Tensor<T>) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    /// Records a non-trainable input.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(Op::Leaf, value)
    }

    /// Records a trainable parameter. Names must be unique on a tape.
    pub fn param(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<Var> {
        let name = name.into();
        if self.params.iter().any(|(n, _)| *n == name) {
            return Err(Error::Contract(format!(
                "parameter `{name}` registered twice"
            )));
        }
        let v = self.push(Op::Leaf, value);
        self.params.push((name, v.0));
        Ok(v)
    }

    pub fn param_names(&self) -> impl Iterator<Item = &str> {
        self.params.iter().map(|(n, _)| n.as_str())
    }

    fn record(&mut self, op: Op<T>) -> Result<Var> {
        let value = eval(&op, |i| &self.nodes[i].value)?;
        Ok(self.push(op, value))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Op::MatMul(a.0, b.0))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Op::Add(a.0, b.0))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Result<Var> {
        self.record(Op::Scale(a.0, c))
    }

    pub fn lerp(&mut self, a: Var, b: Var, alpha: Var) -> Result<Var> {
        self.record(Op::Lerp {
            a: a.0,
            b: b.0,
            alpha: alpha.0,
        })
    }

    pub fn softmax_rows(&mut self, x: Var, tau: T) -> Result<Var> {
        self.record(Op::SoftmaxRows { x: x.0, tau })
    }

    pub fn cosine_rows(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Op::CosineRows(a.0, b.0))
    }

    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        self.record(Op::Linear {
            x: x.0,
            w: w.0,
            b: b.0,
        })
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        self.record(Op::Transpose(a.0))
    }

    pub fn sum_all(&mut self, a: Var) -> Result<Var> {
        self.record(Op::SumAll(a.0))
    }

    pub fn row_sums(&mut self, a: Var) -> Result<Var> {
        self.record(Op::RowSums(a.0))
    }

    pub fn col_sums(&mut self, a: Var) -> Result<Var> {
        self.record(Op::ColSums(a.0))
    }

    /// Min-max normalisation over all entries (flat input gives zeros).
    pub fn minmax(&mut self, a: Var) -> Result<Var> {
        self.record(Op::MinMax(a.0))
    }

    pub fn gather_rows(&mut self, x: Var, indices: &[usize]) -> Result<Var> {
        self.record(Op::GatherRows {
            x: x.0,
            indices: indices.to_vec(),
        })
    }

    pub fn reshape(&mut self, x: Var, rows: usize, cols: usize) -> Result<Var> {
        self.record(Op::Reshape { x: x.0, rows, cols })
    }

    /// Re-evaluates every node from the leaf values.
    pub fn replay(&self) -> Result<Vec<Tensor<T>>> {
        let mut values: Vec<Tensor<T>> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let v = match node.op {
                Op::Leaf => node.value.clone(),
                ref op => eval(op, |i| &values[i])?,
            };
            values.push(v);
        }
        Ok(values)
    }

    /// Reverse-mode gradients of the scalar `loss` for every parameter.
    pub fn gradient(&self, loss: Var) -> Result<Gradients<T>> {
        let shape = self.nodes[loss.0].value.shape();
        if shape != (1, 1) {
            return Err(Error::Contract(format!(
                "loss must be a 1x1 node, got {}x{}",
                shape.0, shape.1
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::scalar(T::one()));

        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            for (input, contrib) in self.backward(&node.op, &node.value, &g)? {
                accumulate(&mut grads[input], contrib)?;
            }
            grads[id] = Some(g);
        }

        let by_name = self
            .params
            .iter()
            .map(|(name, id)| {
                let p = &self.nodes[*id].value;
                let g = grads
                    .get(*id)
                    .and_then(|g| g.clone())
                    .unwrap_or_else(|| Tensor::zeros(p.rows(), p.cols()));
                (name.clone(), g)
            })
            .collect();
        Ok(Gradients { by_name })
    }

    fn val(&self, i: usize) -> &Tensor<T> {
        &self.nodes[i].value
    }

    fn backward(
        &self,
        op: &Op<T>,
        out: &Tensor<T>,
        g: &Tensor<T>,
    ) -> Result<Vec<(usize, Tensor<T>)>> {
        let one = T::one();
        Ok(match *op {
            Op::Leaf => Vec::new(),
            Op::MatMul(a, b) => vec![
                (a, kernels::matmul_unchecked(g, &self.val(b).transpose())),
                (b, kernels::matmul_unchecked(&self.val(a).transpose(), g)),
            ],
            Op::Add(a, b) => vec![(a, g.clone()), (b, g.clone())],
            Op::Scale(a, c) => vec![(a, kernels::scale(g, c))],
            Op::Lerp { a, b, alpha } => {
                let al = self.val(alpha).get(0, 0);
                let (va, vb) = (self.val(a), self.val(b));
                let mut d_alpha = T::zero();
                for ((&gi, &ai), &bi) in g.data().iter().zip(va.data()).zip(vb.data()) {
                    d_alpha = d_alpha + gi * (bi - ai);
                }
                vec![
                    (a, kernels::scale(g, one - al)),
                    (b, kernels::scale(g, al)),
                    (alpha, Tensor::scalar(d_alpha)),
                ]
            }
            Op::SoftmaxRows { x, tau } => {
                let mut dx = Tensor::zeros(out.rows(), out.cols());
                for r in 0..out.rows() {
                    let (y, gr) = (out.row(r), g.row(r));
                    let inner = y.iter().zip(gr).fold(T::zero(), |s, (&a, &b)| s + a * b);
                    for ((d, &yi), &gi) in dx.row_mut(r).iter_mut().zip(y).zip(gr) {
                        *d = yi * (gi - inner) / tau;
                    }
                }
                vec![(x, dx)]
            }
            Op::CosineRows(a, b) => {
                let (ua, na) = unit_rows(self.val(a));
                let (ub, nb) = unit_rows(self.val(b));
                let d_ua = kernels::matmul_unchecked(g, &ub);
                let d_ub = kernels::matmul_unchecked(&g.transpose(), &ua);
                vec![
                    (a, unit_backward(&ua, &na, &d_ua)),
                    (b, unit_backward(&ub, &nb, &d_ub)),
                ]
            }
            Op::Linear { x, w, b } => vec![
                (x, kernels::matmul_unchecked(g, &self.val(w).transpose())),
                (w, kernels::matmul_unchecked(&self.val(x).transpose(), g)),
                (b, kernels::col_sums(g)),
            ],
            Op::Transpose(a) => vec![(a, g.transpose())],
            Op::SumAll(a) => {
                let (r, c) = self.val(a).shape();
                vec![(a, Tensor::filled(r, c, g.get(0, 0)))]
            }
            Op::RowSums(a) => {
                let (r, c) = self.val(a).shape();
                let mut d = Tensor::zeros(r, c);
                for i in 0..r {
                    let gi = g.get(i, 0);
                    d.row_mut(i).iter_mut().for_each(|v| *v = gi);
                }
                vec![(a, d)]
            }
            Op::ColSums(a) => {
                let (r, c) = self.val(a).shape();
                let mut d = Tensor::zeros(r, c);
                for i in 0..r {
                    d.row_mut(i).copy_from_slice(g.row(0));
                }
                vec![(a, d)]
            }
            Op::MinMax(a) => {
                let x = self.val(a);
                let (r, c) = x.shape();
                let mut d = Tensor::zeros(r, c);
                if let Some((lo, hi)) = kernels::minmax_bounds(x.data()) {
                    let range = x.data()[hi] - x.data()[lo];
                    let (mut to_lo, mut to_hi) = (T::zero(), T::zero());
                    for (&gi, &yi) in g.data().iter().zip(out.data()) {
                        to_lo = to_lo + gi * (yi - one);
                        to_hi = to_hi - gi * yi;
                    }
                    let dd = d.data_mut();
                    for (di, &gi) in dd.iter_mut().zip(g.data()) {
                        *di = gi / range;
                    }
                    dd[lo] = dd[lo] + to_lo / range;
                    dd[hi] = dd[hi] + to_hi / range;
                }
                vec![(a, d)]
            }
            Op::GatherRows { x, ref indices } => {
                let (r, c) = self.val(x).shape();
                let mut d = Tensor::zeros(r, c);
                for (k, &i) in indices.iter().enumerate() {
                    for (dv, &gv) in d.row_mut(i).iter_mut().zip(g.row(k)) {
                        *dv = *dv + gv;
                    }
                }
                vec![(x, d)]
            }
            Op::Reshape { x, .. } => {
                let (r, c) = self.val(x).shape();
                vec![(x, g.reshape(r, c)?)]
            }
        })
    }
}

fn accumulate<T: Scalar>(slot: &mut Option<Tensor<T>>, contrib: Tensor<T>) -> Result<()> {
    *slot = Some(match slot.take() {
        None => contrib,
        Some(prev) => kernels::add(&prev, &contrib)?,
    });
    Ok(())
}

fn unit_rows<T: Scalar>(t: &Tensor<T>) -> (Tensor<T>, Vec<T>) {
    let mut u = t.clone();
    let mut norms = Vec::with_capacity(t.rows());
    for r in 0..t.rows() {
        let row = u.row_mut(r);
        let n = row.iter().fold(T::zero(), |s, &v| s + v * v).sqrt();
        row.iter_mut().for_each(|v| *v = *v / n);
        norms.push(n);
    }
    (u, norms)
}

/// Pulls a gradient on `u = a / |a|` back onto `a`, row by row.
fn unit_backward<T: Scalar>(u: &Tensor<T>, norms: &[T], du: &Tensor<T>) -> Tensor<T> {
    let mut d = Tensor::zeros(u.rows(), u.cols());
    for r in 0..u.rows() {
        let (ur, gr) = (u.row(r), du.row(r));
        let proj = ur.iter().zip(gr).fold(T::zero(), |s, (&a, &b)| s + a * b);
        for ((dv, &ui), &gi) in d.row_mut(r).iter_mut().zip(ur).zip(gr) {
            *dv = (gi - proj * ui) / norms[r];
        }
    }
    d
}

fn eval<'a, T: Scalar>(op: &Op<T>, val: impl Fn(usize) -> &'a Tensor<T>) -> Result<Tensor<T>> {
    Ok(match *op {
        Op::Leaf => unreachable!("leaves carry their own value"),
        Op::MatMul(a, b) => kernels::matmul(val(a), val(b))?,
        Op::Add(a, b) => kernels::add(val(a), val(b))?,
        Op::Scale(a, c) => kernels::scale(val(a), c),
        Op::Lerp { a, b, alpha } => {
            let (va, vb, al) = (val(a), val(b), val(alpha));
            if al.shape() != (1, 1) {
                return Err(Error::shape("lerp", "alpha must be 1x1"));
            }
            let al = al.get(0, 0);
            kernels::add(&kernels::scale(va, T::one() - al), &kernels::scale(vb, al))?
        }
        Op::SoftmaxRows { x, tau } => kernels::softmax_rows(val(x), tau)?,
        Op::CosineRows(a, b) => kernels::cosine_sim(val(a), val(b))?,
        Op::Linear { x, w, b } => kernels::linear(val(x), val(w), val(b))?,
        Op::Transpose(a) => val(a).transpose(),
        Op::SumAll(a) => Tensor::scalar(kernels::sum_all(val(a))),
        Op::RowSums(a) => kernels::row_sums(val(a)),
        Op::ColSums(a) => kernels::col_sums(val(a)),
        Op::MinMax(a) => {
            let x = val(a);
            Tensor::new(x.rows(), x.cols(), kernels::minmax_normalize(x.data()))?
        }
        Op::GatherRows { x, ref indices } => kernels::gather_rows(val(x), indices)?,
        Op::Reshape { x, rows, cols } => val(x).reshape(rows, cols)?,
    })
}
