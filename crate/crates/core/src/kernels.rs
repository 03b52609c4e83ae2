//! Dense kernels: matmul, temperature softmax, cosine similarity, top-k,
//! affine layers and the small reductions the pipeline needs.
//!
//! Every reduction accumulates sequentially in ascending index order, so a
//! given input always produces the same bits. `matmul` may split work across
//! threads by output row; that never changes the order in which any single
//! output element is accumulated.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Rows whose L2 norm is at or below this are treated as zero vectors.
pub const NORM_EPS: f64 = 1e-12;

/// Output elements above which `matmul` fans out across threads.
const PAR_THRESHOLD: usize = 1 << 15;

fn ensure_finite_input<T: Scalar>(t: &Tensor<T>, op: &'static str) -> Result<()> {
    t.ensure_finite(op)
}

/// `a · b` with a fixed per-element accumulation order (`k` ascending).
pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.cols() != b.rows() {
        return Err(Error::shape(
            "matmul",
            format!("{}x{} · {}x{}", a.rows(), a.cols(), b.rows(), b.cols()),
        ));
    }
    ensure_finite_input(a, "matmul")?;
    ensure_finite_input(b, "matmul")?;
    Ok(matmul_unchecked(a, b))
}

pub(crate) fn matmul_unchecked<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    let (m, k, n) = (a.rows(), a.cols(), b.cols());
    let mut out = Tensor::zeros(m, n);
    if n == 0 {
        return out;
    }
    let body = |(i, out_row): (usize, &mut [T])| {
        let a_row = a.row(i);
        for (p, &a_ip) in a_row.iter().enumerate().take(k) {
            let b_row = b.row(p);
            for (o, &b_pj) in out_row.iter_mut().zip(b_row) {
                *o = *o + a_ip * b_pj;
            }
        }
    };
    if m * n >= PAR_THRESHOLD {
        out.data_mut().par_chunks_mut(n).enumerate().for_each(body);
    } else {
        out.data_mut().chunks_mut(n).enumerate().for_each(body);
    }
    out
}

/// Row-wise softmax of `x / tau`.
pub fn softmax_rows<T: Scalar>(x: &Tensor<T>, tau: T) -> Result<Tensor<T>> {
    if !(tau > T::zero()) || !tau.is_finite() {
        return Err(Error::Param(format!(
            "temperature must be positive, got {tau}"
        )));
    }
    ensure_finite_input(x, "softmax_rows")?;
    Ok(softmax_rows_unchecked(x, tau))
}

pub(crate) fn softmax_rows_unchecked<T: Scalar>(x: &Tensor<T>, tau: T) -> Tensor<T> {
    let mut out = Tensor::zeros(x.rows(), x.cols());
    for (src, dst) in x
        .iter_rows()
        .zip(out.data_mut().chunks_mut(x.cols().max(1)))
    {
        let max = src.iter().fold(T::neg_infinity(), |m, &v| m.max(v / tau));
        let mut sum = T::zero();
        for (d, &v) in dst.iter_mut().zip(src) {
            *d = (v / tau - max).exp();
            sum = sum + *d;
        }
        for d in dst.iter_mut() {
            *d = *d / sum;
        }
    }
    out
}

/// Column-wise softmax of `x / tau` (each column sums to one).
pub fn softmax_cols<T: Scalar>(x: &Tensor<T>, tau: T) -> Result<Tensor<T>> {
    Ok(softmax_rows(&x.transpose(), tau)?.transpose())
}

fn row_norms<T: Scalar>(t: &Tensor<T>, side: &str) -> Result<Vec<T>> {
    t.iter_rows()
        .enumerate()
        .map(|(i, r)| {
            let n = r.iter().fold(T::zero(), |s, &v| s + v * v).sqrt();
            if n.as_f64() <= NORM_EPS {
                Err(Error::Degenerate(format!(
                    "row {i} of the {side} operand has norm {n} (zero embedding)"
                )))
            } else {
                Ok(n)
            }
        })
        .collect()
}

#[inline]
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |s, (&x, &y)| s + x * y)
}

/// Pairwise cosine similarity between the rows of `a` and the rows of `b`.
pub fn cosine_sim<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.cols() != b.cols() {
        return Err(Error::shape(
            "cosine_sim",
            format!("embedding dims differ: {} vs {}", a.cols(), b.cols()),
        ));
    }
    ensure_finite_input(a, "cosine_sim")?;
    ensure_finite_input(b, "cosine_sim")?;
    let na = row_norms(a, "left")?;
    let nb = row_norms(b, "right")?;
    let mut out = Tensor::zeros(a.rows(), b.rows());
    let one = T::one();
    for i in 0..a.rows() {
        let ar = a.row(i);
        for j in 0..b.rows() {
            let c = dot(ar, b.row(j)) / (na[i] * nb[j]);
            out.set(i, j, c.max(-one).min(one));
        }
    }
    Ok(out)
}

/// Indices of the `k` largest scores, ties going to the lower index,
/// returned in ascending index order.
pub fn topk_indices<T: Scalar>(scores: &[T], k: usize) -> Result<Vec<usize>> {
    if k == 0 || k > scores.len() {
        return Err(Error::Param(format!(
            "top-k needs 1 <= k <= {}, got k = {k}",
            scores.len()
        )));
    }
    if let Some(p) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::NonFinite {
            op: "topk_indices",
            row: p,
            col: 0,
        });
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    let cmp = |&a: &usize, &b: &usize| {
        scores[b]
            .partial_cmp(&scores[a])
            .expect("finite scores")
            .then(a.cmp(&b))
    };
    if k < order.len() {
        order.select_nth_unstable_by(k - 1, cmp);
        order.truncate(k);
    }
    order.sort_unstable();
    Ok(order)
}

/// `x · w + bias`, with `bias` broadcast over rows.
pub fn linear<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    if bias.rows() != 1 || bias.cols() != w.cols() {
        return Err(Error::shape(
            "linear",
            format!(
                "bias must be 1x{}, got {}x{}",
                w.cols(),
                bias.rows(),
                bias.cols()
            ),
        ));
    }
    let mut out = matmul(x, w)?;
    ensure_finite_input(bias, "linear")?;
    let b = bias.row(0);
    for r in 0..out.rows() {
        for (o, &bj) in out.row_mut(r).iter_mut().zip(b) {
            *o = *o + bj;
        }
    }
    Ok(out)
}

pub fn add<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.shape() != b.shape() {
        return Err(Error::shape(
            "add",
            format!("{:?} + {:?}", a.shape(), b.shape()),
        ));
    }
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| x + y)
        .collect();
    Tensor::new(a.rows(), a.cols(), data)
}

pub fn scale<T: Scalar>(a: &Tensor<T>, c: T) -> Tensor<T> {
    a.map(|v| v * c)
}

/// Sum of each row, as a column vector.
pub fn row_sums<T: Scalar>(a: &Tensor<T>) -> Tensor<T> {
    let sums: Vec<T> = a
        .iter_rows()
        .map(|r| r.iter().fold(T::zero(), |s, &v| s + v))
        .collect();
    Tensor::column(&sums)
}

/// Sum of each column, as a row vector.
pub fn col_sums<T: Scalar>(a: &Tensor<T>) -> Tensor<T> {
    let mut sums = vec![T::zero(); a.cols()];
    for r in a.iter_rows() {
        for (s, &v) in sums.iter_mut().zip(r) {
            *s = *s + v;
        }
    }
    Tensor::row_vector(&sums)
}

pub fn sum_all<T: Scalar>(a: &Tensor<T>) -> T {
    a.data().iter().fold(T::zero(), |s, &v| s + v)
}

pub fn gather_rows<T: Scalar>(a: &Tensor<T>, indices: &[usize]) -> Result<Tensor<T>> {
    let mut data = Vec::with_capacity(indices.len() * a.cols());
    for &i in indices {
        if i >= a.rows() {
            return Err(Error::shape(
                "gather_rows",
                format!("index {i} out of range for {} rows", a.rows()),
            ));
        }
        data.extend_from_slice(a.row(i));
    }
    Tensor::new(indices.len(), a.cols(), data)
}

/// Whether `[lo, hi]` is a constant range up to accumulated rounding.
///
/// Sums of a few dozen terms that are mathematically equal can differ by a
/// handful of ulps; those still count as constant.
pub fn is_flat<T: Scalar>(lo: T, hi: T) -> bool {
    let scale = lo.abs().max(hi.abs());
    hi - lo <= T::of(64.0) * T::epsilon() * scale
}

/// Min-max normalisation to `[0, 1]`. A flat input maps to all zeros.
pub fn minmax_normalize<T: Scalar>(values: &[T]) -> Vec<T> {
    match minmax_bounds(values) {
        None => vec![T::zero(); values.len()],
        Some((lo, hi)) => {
            let range = values[hi] - values[lo];
            values.iter().map(|&v| (v - values[lo]) / range).collect()
        }
    }
}

/// Positions of the first minimum and first maximum, or `None` when the
/// input is empty or flat.
pub(crate) fn minmax_bounds<T: Scalar>(values: &[T]) -> Option<(usize, usize)> {
    if values.is_empty() {
        return None;
    }
    let (mut lo, mut hi) = (0, 0);
    for (i, &v) in values.iter().enumerate() {
        if v < values[lo] {
            lo = i;
        }
        if v > values[hi] {
            hi = i;
        }
    }
    if is_flat(values[lo], values[hi]) {
        None
    } else {
        Some((lo, hi))
    }
}
