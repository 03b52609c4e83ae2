//! Brute-force reference for the selection chain.
//!
//! Plain nested loops over `f64` with a full sort at the end; shares no code
//! with [`crate::selection`] or [`crate::kernels`]. Used by the verification
//! suites and tests to cross-check selected index sets.

use crate::selection::SoftmaxAxis;

#[derive(Clone, Debug)]
pub struct OracleParams {
    pub tau: f64,
    pub alpha: f64,
    pub axis: SoftmaxAxis,
    /// `(weight d×d', bias d')` rows; `None` means identity alignment.
    pub align: Option<(Vec<Vec<f64>>, Vec<f64>)>,
}

fn flat(v: &[f64]) -> bool {
    let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    // same flatness rule as the production min-max
    hi - lo <= 64.0 * f64::EPSILON * lo.abs().max(hi.abs())
}

fn normalised(v: &[f64]) -> Vec<f64> {
    if v.is_empty() || flat(v) {
        return vec![0.0; v.len()];
    }
    let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    v.iter().map(|x| (x - lo) / (hi - lo)).collect()
}

fn softmax(xs: &[f64], tau: f64) -> Vec<f64> {
    let scaled: Vec<f64> = xs.iter().map(|x| x / tau).collect();
    let max = scaled.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = scaled.iter().map(|x| (x - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|x| x / s).collect()
}

/// Selected indices (ascending) for image rows `image` and text rows `text`.
pub fn oracle_select(
    image: &[Vec<f64>],
    text: &[Vec<f64>],
    p: &OracleParams,
    k: usize,
) -> Vec<usize> {
    let m = image.len();
    let n = text.len();

    let aligned: Vec<Vec<f64>> = match &p.align {
        None => image.to_vec(),
        Some((w, b)) => image
            .iter()
            .map(|x| {
                (0..b.len())
                    .map(|j| {
                        let mut acc = 0.0;
                        for (i, xi) in x.iter().enumerate() {
                            acc += xi * w[i][j];
                        }
                        acc + b[j]
                    })
                    .collect()
            })
            .collect(),
    };

    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let mut sim = vec![vec![0.0; n]; m];
    for i in 0..m {
        for j in 0..n {
            let d: f64 = aligned[i].iter().zip(&text[j]).map(|(a, b)| a * b).sum();
            sim[i][j] = (d / (norm(&aligned[i]) * norm(&text[j]))).clamp(-1.0, 1.0);
        }
    }

    let mut prob = vec![vec![0.0; n]; m];
    match p.axis {
        SoftmaxAxis::Image => {
            for j in 0..n {
                let col: Vec<f64> = (0..m).map(|i| sim[i][j]).collect();
                for (i, v) in softmax(&col, p.tau).into_iter().enumerate() {
                    prob[i][j] = v;
                }
            }
        }
        SoftmaxAxis::Text => {
            for i in 0..m {
                prob[i] = softmax(&sim[i], p.tau);
            }
        }
    }

    let s_sum: Vec<f64> = prob.iter().map(|r| r.iter().sum()).collect();
    let w: Vec<f64> = aligned.iter().map(|r| r.iter().sum()).collect();
    let (s_hat, w_hat) = (normalised(&s_sum), normalised(&w));
    let map: Vec<f64> = (0..m)
        .map(|i| (1.0 - p.alpha) * s_hat[i] + p.alpha * w_hat[i])
        .collect();

    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| map[b].partial_cmp(&map[a]).unwrap().then(a.cmp(&b)));
    let mut chosen = order[..k.min(m)].to_vec();
    chosen.sort();
    chosen
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> OracleParams {
        OracleParams {
            tau: 0.1,
            alpha: 0.5,
            axis: SoftmaxAxis::Image,
            align: None,
        }
    }

    #[test]
    fn k_equal_m_returns_everything() {
        let img = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]];
        let txt = vec![vec![1.0, 0.2]];
        assert_eq!(oracle_select(&img, &txt, &params(), 3), vec![0, 1, 2]);
    }

    #[test]
    fn single_token() {
        let img = vec![vec![0.3, -0.4]];
        let txt = vec![vec![1.0, 0.2], vec![0.0, 1.0]];
        assert_eq!(oracle_select(&img, &txt, &params(), 1), vec![0]);
    }
}
