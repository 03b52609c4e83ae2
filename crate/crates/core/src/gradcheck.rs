//! Central finite-difference checks for the gradient tape.
//!
//! [`check_chain`] records the differentiable path from alignment through
//! fusion on a [`Tape`] and compares every parameter gradient with central
//! differences of a plain forward pass built from the production kernels.
//! The loss is a fixed random readout of the fused tokens plus the summed
//! selection-map scores of the kept tokens; the second term is what gives
//! `alpha` a gradient, since selection indices themselves carry none.
//!
//! Differences are always taken in `f64`. For an `f32` check the case is
//! first rounded to `f32`, so both sides see identical inputs.

use serde::Serialize;

use crate::enhance::{fuse, spatial_restoration, temporal_enhancement, AttentionParams};
use crate::error::{Error, Result};
use crate::hash::SplitMix;
use crate::kernels;
use crate::selection::{self, Aggregation, Projection};
use crate::tape::{Tape, Var};
use crate::tensor::{Scalar, Tensor};

/// Step for central differences.
pub const FD_STEP: f64 = 1e-5;

/// Parameter names, in the order they appear in [`ChainCase::params`].
pub const PARAM_NAMES: [&str; 7] = [
    "align.weight",
    "align.bias",
    "alpha",
    "aggregate.weight",
    "aggregate.bias",
    "fusion.weight",
    "fusion.bias",
];

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ChainShape {
    pub m: usize,
    pub d: usize,
    pub n: usize,
    pub c: usize,
    /// Output tokens; `k = groups × c`.
    pub groups: usize,
    pub support: usize,
    /// Video tokens; 0 drops the temporal branch.
    pub frames: usize,
    pub tau: f64,
}

impl ChainShape {
    pub fn k(&self) -> usize {
        self.groups * self.c
    }

    /// m in 8..=24, d in 4..=8, n in 1..=4, c in {1, 2, 4},
    /// tau in [0.1, 1].
    pub fn random(rng: &mut SplitMix) -> Self {
        let m = 8 + rng.below(17) as usize;
        let c = [1, 2, 4][rng.below(3) as usize];
        let max_groups = (m / (2 * c)).max(1);
        Self {
            m,
            d: 4 + rng.below(5) as usize,
            n: 1 + rng.below(4) as usize,
            c,
            groups: 1 + rng.below(max_groups as u64) as usize,
            support: 1 + rng.below(6) as usize,
            frames: rng.below(4) as usize,
            tau: rng.uniform(0.1, 1.0),
        }
    }
}

#[derive(Clone, Debug)]
pub struct ChainCase<T: Scalar> {
    pub shape: ChainShape,
    pub image: Tensor<T>,
    pub text: Tensor<T>,
    pub support: Tensor<T>,
    pub temporal: Option<Tensor<T>>,
    /// `(groups·d) × 1` readout of the flattened fused tokens.
    pub readout: Tensor<T>,
    pub params: Vec<(&'static str, Tensor<T>)>,
}

fn uniform(rng: &mut SplitMix, rows: usize, cols: usize, scale: f64) -> Tensor<f64> {
    let data = (0..rows * cols)
        .map(|_| rng.uniform(-scale, scale))
        .collect();
    Tensor::new(rows, cols, data).expect("sizes match")
}

fn near_identity(rng: &mut SplitMix, d: usize) -> Tensor<f64> {
    let mut w = uniform(rng, d, d, 0.3);
    for i in 0..d {
        w.set(i, i, w.get(i, i) + 1.0);
    }
    w
}

impl ChainCase<f64> {
    /// Random inputs and parameters for `shape`; `alpha` in [0.1, 0.9].
    pub fn random(shape: ChainShape, seed: u64) -> Self {
        let mut rng = SplitMix::new(seed);
        let ChainShape {
            m, d, n, c, groups, ..
        } = shape;
        let image = uniform(&mut rng, m, d, 1.0);
        let text = uniform(&mut rng, n, d, 1.0);
        let support = uniform(&mut rng, shape.support, d, 1.0);
        let temporal = (shape.frames > 0).then(|| uniform(&mut rng, shape.frames, d, 1.0));
        let readout = uniform(&mut rng, groups * d, 1, 1.0);
        let alpha = Tensor::scalar(rng.uniform(0.1, 0.9));
        let params = vec![
            (PARAM_NAMES[0], near_identity(&mut rng, d)),
            (PARAM_NAMES[1], uniform(&mut rng, 1, d, 0.1)),
            (PARAM_NAMES[2], alpha),
            (
                PARAM_NAMES[3],
                uniform(&mut rng, c * d, d, 1.0 / ((c * d) as f64).sqrt()),
            ),
            (PARAM_NAMES[4], uniform(&mut rng, 1, d, 0.1)),
            (PARAM_NAMES[5], near_identity(&mut rng, d)),
            (PARAM_NAMES[6], uniform(&mut rng, 1, d, 0.1)),
        ];
        Self {
            shape,
            image,
            text,
            support,
            temporal,
            readout,
            params,
        }
    }
}

impl<T: Scalar> ChainCase<T> {
    pub fn cast<U: Scalar>(&self) -> ChainCase<U> {
        ChainCase {
            shape: self.shape,
            image: self.image.cast(),
            text: self.text.cast(),
            support: self.support.cast(),
            temporal: self.temporal.as_ref().map(Tensor::cast),
            readout: self.readout.cast(),
            params: self.params.iter().map(|(n, t)| (*n, t.cast())).collect(),
        }
    }

    fn param(&self, i: usize) -> &Tensor<T> {
        &self.params[i].1
    }
}

fn tape_attention<T: Scalar>(tape: &mut Tape<T>, q: Var, kv: Var, d: usize) -> Result<Var> {
    let kt = tape.transpose(kv)?;
    let scores = tape.matmul(q, kt)?;
    let scaled = tape.scale(scores, T::one() / T::of(d as f64).sqrt())?;
    let weights = tape.softmax_rows(scaled, T::one())?;
    tape.matmul(weights, kv)
}

/// Records the chain on a fresh tape. Returns the tape, the loss node and
/// the selected indices.
pub fn record_chain<T: Scalar>(case: &ChainCase<T>) -> Result<(Tape<T>, Var, Vec<usize>)> {
    let s = case.shape;
    let mut tape = Tape::new();
    let image = tape.constant(case.image.clone());
    let text = tape.constant(case.text.clone());
    let support = tape.constant(case.support.clone());
    let readout = tape.constant(case.readout.clone());
    let p: Vec<Var> = case
        .params
        .iter()
        .map(|(name, t)| tape.param(*name, t.clone()))
        .collect::<Result<_>>()?;

    let aligned = tape.linear(image, p[0], p[1])?;
    let sim = tape.cosine_rows(aligned, text)?;
    // softmax over the image axis, one distribution per text token
    let sim_t = tape.transpose(sim)?;
    let prob_t = tape.softmax_rows(sim_t, T::of(s.tau))?;
    let s_sum = tape.col_sums(prob_t)?;
    let s_sum = tape.transpose(s_sum)?;
    let w = tape.row_sums(aligned)?;
    let s_hat = tape.minmax(s_sum)?;
    let w_hat = tape.minmax(w)?;
    let map = tape.lerp(s_hat, w_hat, p[2])?;
    let indices = kernels::topk_indices(tape.value(map).data(), s.k())?;

    let kept = tape.gather_rows(aligned, &indices)?;
    let grouped = tape.reshape(kept, s.groups, s.c * s.d)?;
    let compressed = tape.linear(grouped, p[3], p[4])?;
    let spatial = tape_attention(&mut tape, compressed, support, s.d)?;
    let summed = match &case.temporal {
        Some(t) => {
            let video = tape.constant(t.clone());
            let temporal = tape_attention(&mut tape, compressed, video, s.d)?;
            tape.add(spatial, temporal)?
        }
        None => spatial,
    };
    let fused = tape.linear(summed, p[5], p[6])?;
    let flat = tape.reshape(fused, 1, s.groups * s.d)?;
    let readout_term = tape.matmul(flat, readout)?;
    let kept_scores = tape.gather_rows(map, &indices)?;
    let mass = tape.sum_all(kept_scores)?;
    let loss = tape.add(readout_term, mass)?;
    Ok((tape, loss, indices))
}

/// The same loss through the production selection and attention code.
pub fn plain_loss(case: &ChainCase<f64>) -> Result<(f64, Vec<usize>)> {
    let s = case.shape;
    let align = Projection::affine(case.param(0).clone(), case.param(1).clone())?;
    let alpha = case.param(2).get(0, 0);
    let aggregation = Aggregation::Affine {
        weight: case.param(3).clone(),
        bias: case.param(4).clone(),
    };
    let fusion = Projection::affine(case.param(5).clone(), case.param(6).clone())?;

    let aligned = selection::align(&case.image, &align)?;
    let sim = selection::similarity(&aligned, &case.text)?;
    let prob = selection::normalize_similarity(&sim, s.tau)?;
    let s_sum = selection::relevance_scores(&prob);
    let w = selection::token_weights(&aligned);
    let map = selection::selection_map(&s_sum, &w, alpha)?;
    let (kept, indices) = selection::select(&aligned, &map, s.k())?;
    let compressed = selection::compress(&kept, s.c, &aggregation)?;
    let att = AttentionParams::default();
    let spatial = spatial_restoration(&compressed, &case.support, &att)?;
    let temporal = case
        .temporal
        .as_ref()
        .map(|t| temporal_enhancement(&compressed, t, &att))
        .transpose()?;
    let fused = fuse(&spatial, temporal.as_ref(), &fusion)?;
    let readout: f64 = fused
        .data()
        .iter()
        .zip(case.readout.data())
        .map(|(a, b)| a * b)
        .sum();
    let mass: f64 = indices.iter().map(|&i| map[i]).sum();
    Ok((readout + mass, indices))
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, 0 when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(b));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ChainReport {
    pub shape: ChainShape,
    pub precision: &'static str,
    /// Relative error per parameter, in [`PARAM_NAMES`] order.
    pub errors: Vec<(&'static str, f64)>,
    /// A perturbation moved the selected set, so differences straddle a
    /// discontinuity and the errors mean nothing.
    pub index_flip: bool,
}

impl ChainReport {
    pub fn worst(&self) -> f64 {
        self.errors.iter().map(|e| e.1).fold(0.0, f64::max)
    }
}

/// Tape gradients at `T` precision against central differences in `f64`.
pub fn check_chain<T: Scalar>(case: &ChainCase<f64>) -> Result<ChainReport> {
    let case_t = case.cast::<T>();
    let (tape, loss, indices) = record_chain(&case_t)?;
    let grads = tape.gradient(loss)?;
    let reference = case_t.cast::<f64>();
    let (_, base) = plain_loss(&reference)?;
    let mut index_flip = base != indices;
    let mut errors = Vec::with_capacity(PARAM_NAMES.len());
    for (pi, (name, value)) in reference.params.iter().enumerate() {
        let mut fd = Vec::with_capacity(value.data().len());
        for e in 0..value.data().len() {
            let mut at = |delta: f64| -> Result<f64> {
                let mut probe = reference.clone();
                probe.params[pi].1.data_mut()[e] += delta;
                let (l, idx) = plain_loss(&probe)?;
                index_flip |= idx != base;
                Ok(l)
            };
            let (plus, minus) = (at(FD_STEP)?, at(-FD_STEP)?);
            fd.push((plus - minus) / (2.0 * FD_STEP));
        }
        let g = grads
            .get(name)
            .ok_or_else(|| Error::Contract(format!("no gradient for {name}")))?;
        let g: Vec<f64> = g.data().iter().map(|v| v.as_f64()).collect();
        errors.push((*name, relative_error(&g, &fd)));
    }
    Ok(ChainReport {
        shape: case.shape,
        precision: T::NAME,
        errors,
        index_flip,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct ChainSuite {
    pub reports: Vec<ChainReport>,
    /// Draws rejected because a perturbation flipped the selected set.
    pub skipped: usize,
}

impl ChainSuite {
    pub fn worst(&self) -> f64 {
        self.reports
            .iter()
            .map(ChainReport::worst)
            .fold(0.0, f64::max)
    }
}

/// Checks `count` random configurations at `T` precision, redrawing any
/// whose selected set flips under perturbation.
pub fn chain_suite<T: Scalar>(count: usize, seed: u64) -> Result<ChainSuite> {
    let mut rng = SplitMix::new(seed);
    let mut reports = Vec::with_capacity(count);
    let mut skipped = 0;
    while reports.len() < count {
        if skipped > 10 * count {
            return Err(Error::Contract(format!(
                "{skipped} draws flipped their selection; cannot reach {count} cases"
            )));
        }
        let shape = ChainShape::random(&mut rng);
        let case = ChainCase::random(shape, rng.next_u64());
        let report = check_chain::<T>(&case)?;
        if report.index_flip {
            skipped += 1;
        } else {
            reports.push(report);
        }
    }
    Ok(ChainSuite { reports, skipped })
}

type Builder = fn(&mut Tape<f64>, &[Var]) -> Result<Var>;

/// Every tape op on random `f64` inputs: relative error of the gradient of
/// a random readout of the op's output, per op.
pub fn op_suite(seed: u64) -> Result<Vec<(&'static str, f64)>> {
    let mut rng = SplitMix::new(seed);
    let mut out = Vec::new();
    let mut run = |name: &'static str, shapes: &[(usize, usize)], f: Builder| -> Result<()> {
        let inputs: Vec<Tensor<f64>> = shapes
            .iter()
            .map(|&(r, c)| uniform(&mut rng, r, c, 1.0))
            .collect();
        out.push((name, check_op(&inputs, f, &mut rng)?));
        Ok(())
    };
    run("matmul", &[(3, 4), (4, 2)], |t, v| t.matmul(v[0], v[1]))?;
    run("add", &[(3, 4), (3, 4)], |t, v| t.add(v[0], v[1]))?;
    run("scale", &[(3, 4)], |t, v| t.scale(v[0], -1.7))?;
    run("lerp", &[(5, 1), (5, 1), (1, 1)], |t, v| {
        t.lerp(v[0], v[1], v[2])
    })?;
    run("softmax_rows", &[(3, 5)], |t, v| t.softmax_rows(v[0], 0.3))?;
    run("cosine_rows", &[(4, 3), (2, 3)], |t, v| {
        t.cosine_rows(v[0], v[1])
    })?;
    run("linear", &[(3, 4), (4, 2), (1, 2)], |t, v| {
        t.linear(v[0], v[1], v[2])
    })?;
    run("transpose", &[(3, 4)], |t, v| t.transpose(v[0]))?;
    run("sum_all", &[(3, 4)], |t, v| t.sum_all(v[0]))?;
    run("row_sums", &[(3, 4)], |t, v| t.row_sums(v[0]))?;
    run("col_sums", &[(3, 4)], |t, v| t.col_sums(v[0]))?;
    run("minmax", &[(6, 1)], |t, v| t.minmax(v[0]))?;
    run("gather_rows", &[(5, 3)], |t, v| {
        t.gather_rows(v[0], &[4, 1, 1])
    })?;
    run("reshape", &[(4, 3)], |t, v| t.reshape(v[0], 2, 6))?;
    Ok(out)
}

fn check_op(inputs: &[Tensor<f64>], f: Builder, rng: &mut SplitMix) -> Result<f64> {
    let build = |values: &[Tensor<f64>],
                 readout: Option<&Tensor<f64>>|
     -> Result<(Tape<f64>, Var, (usize, usize))> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values
            .iter()
            .enumerate()
            .map(|(i, t)| tape.param(format!("x{i}"), t.clone()))
            .collect::<Result<_>>()?;
        let y = f(&mut tape, &vars)?;
        let shape = tape.value(y).shape();
        let flat = tape.reshape(y, 1, shape.0 * shape.1)?;
        let r = match readout {
            Some(r) => tape.constant(r.clone()),
            None => tape.constant(Tensor::zeros(shape.0 * shape.1, 1)),
        };
        let loss = tape.matmul(flat, r)?;
        Ok((tape, loss, shape))
    };
    let (_, _, (r, c)) = build(inputs, None)?;
    let readout = uniform(rng, r * c, 1, 1.0);
    let (tape, loss, _) = build(inputs, Some(&readout))?;
    let grads = tape.gradient(loss)?;
    let mut worst: f64 = 0.0;
    for (i, x) in inputs.iter().enumerate() {
        let mut fd = Vec::new();
        for e in 0..x.data().len() {
            let at = |delta: f64| -> Result<f64> {
                let mut probe = inputs.to_vec();
                probe[i].data_mut()[e] += delta;
                let (t, l, _) = build(&probe, Some(&readout))?;
                Ok(t.value(l).get(0, 0))
            };
            fd.push((at(FD_STEP)? - at(-FD_STEP)?) / (2.0 * FD_STEP));
        }
        let g = grads.get(&format!("x{i}")).expect("registered");
        worst = worst.max(relative_error(g.data(), &fd));
    }
    Ok(worst)
}
