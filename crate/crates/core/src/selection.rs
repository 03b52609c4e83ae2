//! Query-aware token selection.
//!
//! Chain: align image tokens with a projection, take cosine similarity
//! against the text tokens, softmax with temperature `tau`, sum the
//! normalised similarity per image token (`s_sum`), sum each aligned token's
//! coordinates (`w`), min-max both and blend with `alpha` into the selection
//! map, keep the top `k` tokens in raster order and aggregate consecutive
//! groups of `c` of them into one token each.
//!
//! The softmax runs over image tokens separately for each text token by
//! default ([`SoftmaxAxis::Image`]), so `s_sum[i]` is the share of query
//! attention mass token `i` attracts. Normalising over text tokens instead
//! ([`SoftmaxAxis::Text`]) makes every `s_sum` equal to one; it is kept for
//! comparison.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels;
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum SoftmaxAxis {
    #[default]
    Image,
    Text,
}

/// A `d_in → d_out` affine map, or the identity.
#[derive(Clone, Debug, PartialEq)]
pub enum Projection<T: Scalar> {
    Identity,
    Affine { weight: Tensor<T>, bias: Tensor<T> },
}

impl<T: Scalar> Projection<T> {
    pub fn affine(weight: Tensor<T>, bias: Tensor<T>) -> Result<Self> {
        if bias.shape() != (1, weight.cols()) {
            return Err(Error::shape(
                "projection",
                format!(
                    "bias {:?} does not match weight {:?}",
                    bias.shape(),
                    weight.shape()
                ),
            ));
        }
        Ok(Projection::Affine { weight, bias })
    }

    pub fn apply(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        match self {
            Projection::Identity => Ok(x.clone()),
            Projection::Affine { weight, bias } => kernels::linear(x, weight, bias),
        }
    }
}

/// How groups of `c` selected tokens collapse into one.
#[derive(Clone, Debug, PartialEq)]
pub enum Aggregation<T: Scalar> {
    /// Mean of the group; the same map as a `c·d → d` layer whose weight
    /// stacks `c` copies of `I / c`, without materialising it.
    Mean,
    /// `c·d → d` layer applied to the concatenated group.
    Affine { weight: Tensor<T>, bias: Tensor<T> },
}

#[derive(Clone, Debug)]
pub struct SelectionParams<T: Scalar> {
    pub tau: T,
    pub alpha: T,
    pub select_ratio: f64,
    pub compress_ratio: usize,
    pub axis: SoftmaxAxis,
    pub align: Projection<T>,
    pub aggregation: Aggregation<T>,
}

impl<T: Scalar> SelectionParams<T> {
    pub fn new(tau: T, alpha: T, select_ratio: f64, compress_ratio: usize) -> Self {
        Self {
            tau,
            alpha,
            select_ratio,
            compress_ratio,
            axis: SoftmaxAxis::Image,
            align: Projection::Identity,
            aggregation: Aggregation::Mean,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > T::zero()) || !self.tau.is_finite() {
            return Err(Error::Param(format!(
                "tau must be positive, got {}",
                self.tau
            )));
        }
        if !(self.alpha >= T::zero() && self.alpha <= T::one()) {
            return Err(Error::Param(format!(
                "alpha must lie in [0, 1], got {}",
                self.alpha
            )));
        }
        if !(self.select_ratio >= 1.0) || !self.select_ratio.is_finite() {
            return Err(Error::Param(format!(
                "select ratio must be >= 1, got {}",
                self.select_ratio
            )));
        }
        if self.compress_ratio == 0 {
            return Err(Error::Param("compress ratio must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct SelectionResult<T: Scalar> {
    /// Ascending token indices, `k` of them.
    pub selected_indices: Vec<usize>,
    pub selection_map: Vec<T>,
    pub s_sum: Vec<T>,
    pub w: Vec<T>,
    /// Aligned image tokens, `m × d`.
    pub aligned: Tensor<T>,
    /// Selected aligned tokens, `k × d`, raster order.
    pub topk: Tensor<T>,
    /// Aggregated tokens, `(k / c) × d`.
    pub compressed: Tensor<T>,
    pub tau: T,
    pub alpha: T,
    pub k: usize,
}

pub fn align<T: Scalar>(image: &Tensor<T>, projection: &Projection<T>) -> Result<Tensor<T>> {
    projection.apply(image)
}

/// Cosine similarity, image tokens × text tokens.
pub fn similarity<T: Scalar>(aligned: &Tensor<T>, text: &Tensor<T>) -> Result<Tensor<T>> {
    kernels::cosine_sim(aligned, text)
}

/// Softmax of `s / tau` over image tokens, independently per text token.
pub fn normalize_similarity<T: Scalar>(s: &Tensor<T>, tau: T) -> Result<Tensor<T>> {
    kernels::softmax_cols(s, tau)
}

pub fn normalize_similarity_along<T: Scalar>(
    s: &Tensor<T>,
    tau: T,
    axis: SoftmaxAxis,
) -> Result<Tensor<T>> {
    match axis {
        SoftmaxAxis::Image => kernels::softmax_cols(s, tau),
        SoftmaxAxis::Text => kernels::softmax_rows(s, tau),
    }
}

/// Per image token, total normalised similarity over text tokens.
pub fn relevance_scores<T: Scalar>(p: &Tensor<T>) -> Vec<T> {
    kernels::row_sums(p).into_data()
}

/// Per image token, the sum of its aligned coordinates.
pub fn token_weights<T: Scalar>(aligned: &Tensor<T>) -> Vec<T> {
    kernels::row_sums(aligned).into_data()
}

/// `(1 - alpha) * minmax(s_sum) + alpha * minmax(w)`.
pub fn selection_map<T: Scalar>(s_sum: &[T], w: &[T], alpha: T) -> Result<Vec<T>> {
    if s_sum.len() != w.len() {
        return Err(Error::shape(
            "selection_map",
            format!("s_sum has {} entries, w has {}", s_sum.len(), w.len()),
        ));
    }
    if !(alpha >= T::zero() && alpha <= T::one()) {
        return Err(Error::Param(format!(
            "alpha must lie in [0, 1], got {alpha}"
        )));
    }
    let s_hat = kernels::minmax_normalize(s_sum);
    let w_hat = kernels::minmax_normalize(w);
    Ok(s_hat
        .iter()
        .zip(&w_hat)
        .map(|(&s, &w)| (T::one() - alpha) * s + alpha * w)
        .collect())
}

/// Rows of `aligned` at the top-`k` entries of `map`, in raster order.
pub fn select<T: Scalar>(
    aligned: &Tensor<T>,
    map: &[T],
    k: usize,
) -> Result<(Tensor<T>, Vec<usize>)> {
    if map.len() != aligned.rows() {
        return Err(Error::shape(
            "select",
            format!("{} scores for {} tokens", map.len(), aligned.rows()),
        ));
    }
    let indices = kernels::topk_indices(map, k)?;
    Ok((kernels::gather_rows(aligned, &indices)?, indices))
}

/// Aggregates consecutive groups of `c` rows into one row each.
pub fn compress<T: Scalar>(
    topk: &Tensor<T>,
    c: usize,
    aggregation: &Aggregation<T>,
) -> Result<Tensor<T>> {
    let (k, d) = topk.shape();
    if c == 0 || k % c != 0 {
        return Err(Error::Contract(format!(
            "{k} selected tokens do not split into groups of {c}"
        )));
    }
    let groups = k / c;
    match aggregation {
        Aggregation::Mean => {
            let mut out = Tensor::zeros(groups, d);
            let inv = T::one() / T::of(c as f64);
            for g in 0..groups {
                let row = out.row_mut(g);
                for r in g * c..(g + 1) * c {
                    for (o, &v) in row.iter_mut().zip(topk.row(r)) {
                        *o = *o + v;
                    }
                }
                row.iter_mut().for_each(|o| *o = *o * inv);
            }
            Ok(out)
        }
        Aggregation::Affine { weight, bias } => {
            if weight.rows() != c * d {
                return Err(Error::shape(
                    "compress",
                    format!(
                        "aggregation expects {} inputs, groups have {}",
                        weight.rows(),
                        c * d
                    ),
                ));
            }
            kernels::linear(&topk.reshape(groups, c * d)?, weight, bias)
        }
    }
}

/// Runs the whole selection chain for a given `k`.
pub fn select_tokens<T: Scalar>(
    image: &Tensor<T>,
    text: &Tensor<T>,
    params: &SelectionParams<T>,
    k: usize,
) -> Result<SelectionResult<T>> {
    params.validate()?;
    let aligned = align(image, &params.align)?;
    let s = similarity(&aligned, text)?;
    let p = normalize_similarity_along(&s, params.tau, params.axis)?;
    let s_sum = relevance_scores(&p);
    let w = token_weights(&aligned);
    let map = selection_map(&s_sum, &w, params.alpha)?;
    let (topk, selected_indices) = select(&aligned, &map, k)?;
    let compressed = compress(&topk, params.compress_ratio, &params.aggregation)?;
    Ok(SelectionResult {
        selected_indices,
        selection_map: map,
        s_sum,
        w,
        aligned,
        topk,
        compressed,
        tau: params.tau,
        alpha: params.alpha,
        k,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(rows: &[&[f64]]) -> Tensor<f64> {
        Tensor::from_rows(rows).unwrap()
    }

    #[test]
    fn align_identity_and_bias_only() {
        let x = t(&[&[1.0, 2.0], &[-3.0, 0.5]]);
        assert!(align(&x, &Projection::Identity).unwrap().bit_eq(&x));
        let p = Projection::affine(Tensor::zeros(2, 2), t(&[&[0.25, -1.0]])).unwrap();
        let y = align(&x, &p).unwrap();
        assert_eq!(y.row(0), &[0.25, -1.0]);
        assert_eq!(y.row(1), &[0.25, -1.0]);
        assert!(Projection::affine(Tensor::<f64>::zeros(2, 2), Tensor::zeros(1, 3)).is_err());
    }

    #[test]
    fn normalize_examples() {
        let p = normalize_similarity(&t(&[&[0.3, -0.2]]), 0.07).unwrap();
        assert_eq!(p.data(), &[1.0, 1.0]);
        let p = normalize_similarity(&t(&[&[0.4], &[0.4]]), 0.5).unwrap();
        assert_eq!(p.data(), &[0.5, 0.5]);
        assert!(normalize_similarity(&p, 0.0).is_err());
    }

    #[test]
    fn relevance_examples() {
        let p = t(&[&[0.1], &[0.9]]);
        assert_eq!(relevance_scores(&p), vec![0.1, 0.9]);
        let uniform = Tensor::filled(4, 2, 0.25);
        assert_eq!(relevance_scores(&uniform), vec![0.5; 4]);
    }

    #[test]
    fn token_weight_examples() {
        let x = t(&[&[0.0, 0.0, 0.0], &[1.0, 2.0, 3.0]]);
        assert_eq!(token_weights(&x), vec![0.0, 6.0]);
    }

    #[test]
    fn selection_map_endpoints() {
        let s = [0.25, 0.75, 0.5];
        let w = [3.0, 1.0, 2.0];
        assert_eq!(selection_map(&s, &w, 0.0).unwrap(), vec![0.0, 1.0, 0.5]);
        assert_eq!(selection_map(&s, &w, 1.0).unwrap(), vec![1.0, 0.0, 0.5]);
        let m = selection_map(&[0.0, 1.0], &[1.0, 0.0], 0.5).unwrap();
        assert_eq!(m, vec![0.5, 0.5]);
        assert!(selection_map(&[0.0], &[1.0, 0.0], 0.5).is_err());
        assert!(selection_map(&[0.0], &[1.0], 1.5).is_err());
    }

    #[test]
    fn select_examples() {
        let x = t(&[&[1.0], &[2.0], &[3.0]]);
        let (rows, idx) = select(&x, &[0.9, 0.1, 0.8], 2).unwrap();
        assert_eq!(idx, vec![0, 2]);
        assert_eq!(rows.data(), &[1.0, 3.0]);
        let (rows, idx) = select(&x, &[0.0, 0.5, 0.2], 3).unwrap();
        assert_eq!(idx, vec![0, 1, 2]);
        assert!(rows.bit_eq(&x));
        assert!(select(&x, &[0.0, 0.5, 0.2], 4).is_err());
    }

    #[test]
    fn compress_identity_and_mean() {
        let x = t(&[&[1.0, 2.0], &[3.0, 4.0], &[5.0, 6.0], &[7.0, 9.0]]);
        let id = Aggregation::Affine {
            weight: Tensor::identity(2),
            bias: Tensor::zeros(1, 2),
        };
        assert!(compress(&x, 1, &id).unwrap().bit_eq(&x));
        let m = compress(&x, 2, &Aggregation::Mean).unwrap();
        assert_eq!(m.data(), &[2.0, 3.0, 6.0, 7.5]);
        assert!(matches!(
            compress(&x, 3, &Aggregation::Mean),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn mean_matches_averaging_weights() {
        let (c, d) = (3, 2);
        let x = Tensor::new(6, d, (0..12).map(|v| v as f64 * 0.37 - 1.0).collect()).unwrap();
        let mut w = Tensor::zeros(c * d, d);
        for blk in 0..c {
            for j in 0..d {
                w.set(blk * d + j, j, 1.0 / c as f64);
            }
        }
        let dense = Aggregation::Affine {
            weight: w,
            bias: Tensor::zeros(1, d),
        };
        let a = compress(&x, c, &Aggregation::Mean).unwrap();
        let b = compress(&x, c, &dense).unwrap();
        assert!(a.max_abs_diff(&b) < 1e-15);
    }

    #[test]
    fn compress_is_group_local() {
        let (c, d, groups) = (2, 3, 4);
        let x = Tensor::new(c * groups, d, (0..24).map(|v| (v as f64).sin()).collect()).unwrap();
        let w = Tensor::new(c * d, d, (0..18).map(|v| (v as f64 * 0.7).cos()).collect()).unwrap();
        let agg = Aggregation::Affine {
            weight: w,
            bias: Tensor::filled(1, d, 0.1),
        };
        let base = compress(&x, c, &agg).unwrap();
        let mut bumped = x.clone();
        bumped.set(2 * c + 1, 1, x.get(2 * c + 1, 1) + 0.5);
        let out = compress(&bumped, c, &agg).unwrap();
        for g in 0..groups {
            let changed = out.row(g) != base.row(g);
            assert_eq!(changed, g == 2, "group {g}");
        }
    }
}
