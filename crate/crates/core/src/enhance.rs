//! Token-wise cross-attention and its spatial / temporal uses.

use crate::error::{Error, Result};
use crate::kernels;
use crate::selection::Projection;
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Debug)]
pub struct AttentionParams<T: Scalar> {
    /// Scaling dimension; `None` uses the projected key width.
    pub d_k: Option<usize>,
    pub query: Projection<T>,
    pub key: Projection<T>,
    pub value: Projection<T>,
}

impl<T: Scalar> Default for AttentionParams<T> {
    fn default() -> Self {
        Self {
            d_k: None,
            query: Projection::Identity,
            key: Projection::Identity,
            value: Projection::Identity,
        }
    }
}

#[derive(Clone, Debug)]
pub struct EnhancedTokens<T: Scalar> {
    pub spatial: Tensor<T>,
    /// `None` when no temporal context was available.
    pub temporal: Option<Tensor<T>>,
    pub fused: Tensor<T>,
}

/// `softmax(q kᵀ / sqrt(d_k)) v` after the configured projections.
pub fn token_wise_attention<T: Scalar>(
    q: &Tensor<T>,
    k: &Tensor<T>,
    v: &Tensor<T>,
    params: &AttentionParams<T>,
) -> Result<Tensor<T>> {
    if k.rows() == 0 {
        return Err(Error::Degenerate("attention context has no tokens".into()));
    }
    if k.rows() != v.rows() {
        return Err(Error::shape(
            "attention",
            format!("{} keys but {} values", k.rows(), v.rows()),
        ));
    }
    let qp = params.query.apply(q)?;
    let kp = params.key.apply(k)?;
    let vp = params.value.apply(v)?;
    if qp.cols() != kp.cols() {
        return Err(Error::shape(
            "attention",
            format!("query width {} vs key width {}", qp.cols(), kp.cols()),
        ));
    }
    let d_k = params.d_k.unwrap_or(kp.cols());
    if d_k == 0 {
        return Err(Error::Param("d_k must be at least 1".into()));
    }
    let scores = kernels::matmul(&qp, &kp.transpose())?;
    let scores = kernels::scale(&scores, T::one() / T::of(d_k as f64).sqrt());
    let weights = kernels::softmax_rows(&scores, T::one())?;
    kernels::matmul(&weights, &vp)
}

/// Queries attend over support-branch tokens (keys = values).
pub fn spatial_restoration<T: Scalar>(
    queries: &Tensor<T>,
    support: &Tensor<T>,
    params: &AttentionParams<T>,
) -> Result<Tensor<T>> {
    token_wise_attention(queries, support, support, params)
}

/// Queries attend over per-frame video tokens (keys = values).
pub fn temporal_enhancement<T: Scalar>(
    queries: &Tensor<T>,
    temporal: &Tensor<T>,
    params: &AttentionParams<T>,
) -> Result<Tensor<T>> {
    token_wise_attention(queries, temporal, temporal, params)
}

/// `fusion(spatial + temporal)`; a missing temporal branch adds zero.
pub fn fuse<T: Scalar>(
    spatial: &Tensor<T>,
    temporal: Option<&Tensor<T>>,
    fusion: &Projection<T>,
) -> Result<Tensor<T>> {
    match temporal {
        Some(t) => fusion.apply(&kernels::add(spatial, t)?),
        None => fusion.apply(spatial),
    }
}

/// [`fuse`] plus the queries themselves.
pub fn fuse_residual<T: Scalar>(
    spatial: &Tensor<T>,
    temporal: Option<&Tensor<T>>,
    fusion: &Projection<T>,
    queries: &Tensor<T>,
) -> Result<Tensor<T>> {
    kernels::add(&fuse(spatial, temporal, fusion)?, queries)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(rows: &[&[f64]]) -> Tensor<f64> {
        Tensor::from_rows(rows).unwrap()
    }

    #[test]
    fn singleton_context_is_copied() {
        let q = t(&[&[0.3, -1.0], &[2.0, 0.5], &[0.0, 0.0]]);
        let kv = t(&[&[0.7, -0.2]]);
        let out = token_wise_attention(&q, &kv, &kv, &AttentionParams::default()).unwrap();
        assert_eq!(out.shape(), (3, 2));
        for r in out.iter_rows() {
            assert_eq!(r, kv.row(0));
        }
    }

    #[test]
    fn identical_keys_average_values() {
        let q = t(&[&[1.0, 2.0], &[-1.0, 0.0]]);
        let k = t(&[&[0.5, 0.5], &[0.5, 0.5], &[0.5, 0.5]]);
        let v = t(&[&[3.0, 0.0], &[0.0, 3.0], &[3.0, 3.0]]);
        let out = token_wise_attention(&q, &k, &v, &AttentionParams::default()).unwrap();
        for r in out.iter_rows() {
            assert!((r[0] - 2.0).abs() < 1e-15 && (r[1] - 2.0).abs() < 1e-15);
        }
    }

    #[test]
    fn attention_errors() {
        let q = t(&[&[1.0, 2.0]]);
        let empty = Tensor::<f64>::zeros(0, 2);
        assert!(matches!(
            token_wise_attention(&q, &empty, &empty, &AttentionParams::default()),
            Err(Error::Degenerate(_))
        ));
        let k = t(&[&[1.0, 2.0], &[0.0, 1.0]]);
        let v = t(&[&[1.0, 2.0]]);
        assert!(matches!(
            token_wise_attention(&q, &k, &v, &AttentionParams::default()),
            Err(Error::Shape { .. })
        ));
        let narrow = t(&[&[1.0]]);
        assert!(token_wise_attention(&q, &narrow, &narrow, &AttentionParams::default()).is_err());
    }

    #[test]
    fn fuse_without_temporal_is_projection_of_spatial() {
        let s = t(&[&[1.0, -2.0], &[0.25, 4.0]]);
        assert!(fuse(&s, None, &Projection::Identity).unwrap().bit_eq(&s));
        let tm = t(&[&[1.0, 1.0], &[1.0, 1.0]]);
        let f = fuse(&s, Some(&tm), &Projection::Identity).unwrap();
        assert_eq!(f.data(), &[2.0, -1.0, 1.25, 5.0]);
        let r = fuse_residual(&s, None, &Projection::Identity, &tm).unwrap();
        assert_eq!(r.data(), &[2.0, -1.0, 1.25, 5.0]);
        assert!(fuse(&s, Some(&t(&[&[1.0, 1.0]])), &Projection::Identity).is_err());
    }
}
