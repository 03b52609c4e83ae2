//! Invariant suites behind `vistoken verify`.
//!
//! Each suite returns its measured worst case next to the bound it was held
//! to, so callers can print or re-check the numbers.

use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::embfile;
use crate::encoders::mock_embed;
use crate::enhance::{token_wise_attention, AttentionParams};
use crate::error::{Error, Result};
use crate::gradcheck;
use crate::hash::SplitMix;
use crate::oracle::{oracle_select, OracleParams};
use crate::pipeline::{demo_scene, mask_file_name, Pipeline, PipelineConfig, PipelineOutput};
use crate::selection::{self, Projection, SelectionParams, SoftmaxAxis};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Suite {
    Oracle,
    Stochasticity,
    Attention,
    Gradients,
    Determinism,
    Goldens,
}

impl Suite {
    pub const ALL: [Suite; 6] = [
        Suite::Oracle,
        Suite::Stochasticity,
        Suite::Attention,
        Suite::Gradients,
        Suite::Determinism,
        Suite::Goldens,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Oracle => "oracle",
            Suite::Stochasticity => "stochasticity",
            Suite::Attention => "attention",
            Suite::Gradients => "gradients",
            Suite::Determinism => "determinism",
            Suite::Goldens => "goldens",
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Outcome {
    pub suite: Suite,
    pub passed: bool,
    pub detail: String,
}

/// Golden files checked by [`Suite::Goldens`], relative to the golden dir.
pub const EMBED_GOLDEN: &str = "embed_2x3.lvde";
pub const MOCK_GOLDEN: &str = "mock_embed_seed42_c0_d4.lvde";
pub const MASK_GOLDEN_DIR: &str = "masks";

/// Values stored in [`EMBED_GOLDEN`].
pub const EMBED_GOLDEN_VALUES: [f32; 6] = [1.0, -2.5, 0.125, 1024.0, -0.0, 3.5];

pub fn default_golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests")
        .join("golden")
}

#[derive(Clone, Debug, Serialize)]
pub struct OracleStats {
    pub instances: usize,
    pub mismatches: usize,
}

fn random_rows(rng: &mut SplitMix, r: usize, c: usize) -> Vec<Vec<f64>> {
    (0..r)
        .map(|_| (0..c).map(|_| rng.uniform(-1.0, 1.0)).collect())
        .collect()
}

/// Random instances with `m ≤ 64`, `n ≤ 16`, `tau ∈ [0.05, 2]`,
/// `alpha ∈ {0, 0.5, 1}`; half use a random affine alignment.
pub fn oracle_equivalence(instances: usize, seed: u64) -> Result<OracleStats> {
    let mut rng = SplitMix::new(seed);
    let mut mismatches = 0;
    for _ in 0..instances {
        let m = 1 + rng.below(64) as usize;
        let n = 1 + rng.below(16) as usize;
        let d = 2 + rng.below(15) as usize;
        let tau = rng.uniform(0.05, 2.0);
        let alpha = [0.0, 0.5, 1.0][rng.below(3) as usize];
        let axis = if rng.below(2) == 0 {
            SoftmaxAxis::Image
        } else {
            SoftmaxAxis::Text
        };
        let k = 1 + rng.below(m as u64) as usize;
        let image = random_rows(&mut rng, m, d);
        let text = random_rows(&mut rng, n, d);
        let affine = rng.below(2) == 1;
        let align = affine.then(|| {
            let mut w = random_rows(&mut rng, d, d);
            let b = random_rows(&mut rng, 1, d).remove(0);
            for (i, r) in w.iter_mut().enumerate() {
                r[i] += 1.0;
            }
            (w, b)
        });

        let mut params = SelectionParams::new(tau, alpha, 1.0, 1);
        params.axis = axis;
        if let Some((w, b)) = &align {
            params.align = Projection::affine(Tensor::from_rows(w)?, Tensor::from_rows(&[b])?)?;
        }
        let ours = selection::select_tokens(
            &Tensor::from_rows(&image)?,
            &Tensor::from_rows(&text)?,
            &params,
            k,
        )?;
        let theirs = oracle_select(
            &image,
            &text,
            &OracleParams {
                tau,
                alpha,
                axis,
                align,
            },
            k,
        );
        if ours.selected_indices != theirs {
            mismatches += 1;
        }
    }
    Ok(OracleStats {
        instances,
        mismatches,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct StochasticityStats {
    pub matrices: usize,
    /// Worst `|column sum − 1|`.
    pub column_err: f64,
    /// Worst `|Σ s_sum − n|`.
    pub total_err: f64,
}

/// Column-softmax checks on random `f32` similarity matrices.
pub fn stochasticity(matrices: usize, seed: u64) -> Result<StochasticityStats> {
    let mut rng = SplitMix::new(seed);
    let (mut column_err, mut total_err) = (0.0f64, 0.0f64);
    for _ in 0..matrices {
        let m = 1 + rng.below(128) as usize;
        let n = 1 + rng.below(16) as usize;
        let tau = rng.uniform(0.05, 2.0);
        let data = (0..m * n).map(|_| rng.uniform(-1.0, 1.0) as f32).collect();
        let s = Tensor::new(m, n, data)?;
        let p = selection::normalize_similarity(&s, tau as f32)?;
        for j in 0..n {
            let col: f64 = (0..m).map(|i| p.get(i, j) as f64).sum();
            column_err = column_err.max((col - 1.0).abs());
        }
        let total: f64 = selection::relevance_scores(&p)
            .iter()
            .map(|&v| v as f64)
            .sum();
        total_err = total_err.max((total - n as f64).abs());
    }
    Ok(StochasticityStats {
        matrices,
        column_err,
        total_err,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct AttentionStats {
    pub cases: usize,
    /// Worst excursion outside the per-coordinate value range.
    pub hull_excess: f64,
    /// Worst change under a joint key/value row permutation.
    pub permutation_err: f64,
    /// Worst deviation from the value row with a single key.
    pub singleton_err: f64,
    pub shape_failures: usize,
}

/// Fuzzed attention with identity projections.
pub fn attention_invariants<T: Scalar>(cases: usize, seed: u64) -> Result<AttentionStats> {
    let mut rng = SplitMix::new(seed);
    let mut stats = AttentionStats {
        cases,
        hull_excess: 0.0,
        permutation_err: 0.0,
        singleton_err: 0.0,
        shape_failures: 0,
    };
    let params = AttentionParams::<T>::default();
    for _ in 0..cases {
        let q_rows = 1 + rng.below(32) as usize;
        let kv_rows = 1 + rng.below(32) as usize;
        let d = 1 + rng.below(24) as usize;
        let scale = rng.uniform(0.1, 4.0);
        let mut rand = |r: usize| {
            let data = (0..r * d)
                .map(|_| T::of(rng.uniform(-scale, scale)))
                .collect();
            Tensor::new(r, d, data)
        };
        let q = rand(q_rows)?;
        let k = rand(kv_rows)?;
        let v = rand(kv_rows)?;
        let out = token_wise_attention(&q, &k, &v, &params)?;
        if out.shape() != (q_rows, d) {
            stats.shape_failures += 1;
            continue;
        }
        for j in 0..d {
            let col = (0..kv_rows).map(|i| v.get(i, j));
            let lo = col.clone().fold(T::infinity(), T::min);
            let hi = col.fold(T::neg_infinity(), T::max);
            for i in 0..q_rows {
                let o = out.get(i, j);
                stats.hull_excess = stats
                    .hull_excess
                    .max((lo - o).max(o - hi).max(T::zero()).as_f64());
            }
        }
        // reversal plus a rotation covers arbitrary-looking reorderings
        let shift = rng.below(kv_rows as u64) as usize;
        let perm: Vec<usize> = (0..kv_rows).rev().map(|i| (i + shift) % kv_rows).collect();
        let kp = crate::kernels::gather_rows(&k, &perm)?;
        let vp = crate::kernels::gather_rows(&v, &perm)?;
        let permuted = token_wise_attention(&q, &kp, &vp, &params)?;
        stats.permutation_err = stats
            .permutation_err
            .max(out.max_abs_diff(&permuted).as_f64());
        let k0 = crate::kernels::gather_rows(&k, &[0])?;
        let v0 = crate::kernels::gather_rows(&v, &[0])?;
        let single = token_wise_attention(&q, &k0, &v0, &params)?;
        for r in single.iter_rows() {
            for (a, b) in r.iter().zip(v.row(0)) {
                stats.singleton_err = stats.singleton_err.max((*a - *b).abs().as_f64());
            }
        }
    }
    Ok(stats)
}

#[derive(Clone, Debug, Serialize)]
pub struct GradientStats {
    pub f32_cases: usize,
    pub f32_worst: f64,
    pub f64_cases: usize,
    pub f64_worst: f64,
    pub skipped: usize,
    pub op_worst: f64,
}

pub fn gradients(cases: usize, seed: u64) -> Result<GradientStats> {
    let single = gradcheck::chain_suite::<f32>(cases, seed)?;
    let double = gradcheck::chain_suite::<f64>(cases, seed.wrapping_add(1))?;
    let ops = gradcheck::op_suite(seed)?;
    Ok(GradientStats {
        f32_cases: single.reports.len(),
        f32_worst: single.worst(),
        f64_cases: double.reports.len(),
        f64_worst: double.worst(),
        skipped: single.skipped + double.skipped,
        op_worst: ops.iter().map(|o| o.1).fold(0.0, f64::max),
    })
}

/// Default pipeline on the demo scene.
pub fn demo_run() -> Result<PipelineOutput<f32>> {
    Pipeline::new(PipelineConfig::default())?.run_scene(&demo_scene())
}

/// Byte images of every mask of `out`, keyed by file name.
pub fn mask_images(
    out: &PipelineOutput<f32>,
    config: &PipelineConfig,
) -> Result<Vec<(String, Vec<u8>)>> {
    out.mask
        .keys()
        .map(|(v, f)| {
            Ok((
                mask_file_name(v, f),
                out.mask.to_pgm(v, f, config.mask_mode, config.mask_block)?,
            ))
        })
        .collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct DeterminismStats {
    pub tokens_identical: bool,
    pub masks_identical: bool,
    pub counts_identical: bool,
}

/// Two demo runs, one on a single-thread pool, compared bit for bit.
pub fn determinism() -> Result<DeterminismStats> {
    let a = demo_run()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(|e| Error::Contract(format!("thread pool: {e}")))?;
    let b = pool.install(demo_run)?;
    let cfg = PipelineConfig::default();
    let (ra, rb) = (&a.report, &b.report);
    Ok(DeterminismStats {
        tokens_identical: embfile::encode(&a.final_tokens) == embfile::encode(&b.final_tokens),
        masks_identical: mask_images(&a, &cfg)? == mask_images(&b, &cfg)?,
        counts_identical: (ra.m_in, ra.k_selected, ra.out_tokens)
            == (rb.m_in, rb.k_selected, rb.out_tokens),
    })
}

/// Writes every golden file into `dir`.
pub fn write_goldens(dir: &Path) -> Result<Vec<PathBuf>> {
    let masks = dir.join(MASK_GOLDEN_DIR);
    std::fs::create_dir_all(&masks).map_err(|e| Error::io(&masks, e))?;
    let mut files = vec![
        (
            dir.join(EMBED_GOLDEN),
            embfile::encode(&Tensor::new(2, 3, EMBED_GOLDEN_VALUES.to_vec())?),
        ),
        (
            dir.join(MOCK_GOLDEN),
            embfile::encode(&mock_embed::<f32>(&[0], 4, 42)?),
        ),
    ];
    let out = demo_run()?;
    for (name, bytes) in mask_images(&out, &PipelineConfig::default())? {
        files.push((masks.join(name), bytes));
    }
    for (path, bytes) in &files {
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    }
    Ok(files.into_iter().map(|f| f.0).collect())
}

/// Compares freshly computed golden content with the files in `dir`;
/// returns one message per mismatch.
pub fn check_goldens(dir: &Path) -> Result<Vec<String>> {
    let mut problems = Vec::new();
    let read = |name: &Path| std::fs::read(name).map_err(|e| Error::io(name, e));

    let bytes = read(&dir.join(EMBED_GOLDEN))?;
    match embfile::decode(&bytes) {
        Ok(t) => {
            let expect = Tensor::new(2, 3, EMBED_GOLDEN_VALUES.to_vec())?;
            if !t.bit_eq(&expect) {
                problems.push(format!("{EMBED_GOLDEN}: values differ"));
            }
            if embfile::encode(&t) != bytes {
                problems.push(format!("{EMBED_GOLDEN}: re-encoding changes bytes"));
            }
        }
        Err(e) => problems.push(format!("{EMBED_GOLDEN}: {e}")),
    }

    let bytes = read(&dir.join(MOCK_GOLDEN))?;
    if embfile::encode(&mock_embed::<f32>(&[0], 4, 42)?) != bytes {
        problems.push(format!("{MOCK_GOLDEN}: mock embedding differs"));
    }

    let out = demo_run()?;
    for (name, fresh) in mask_images(&out, &PipelineConfig::default())? {
        let path = dir.join(MASK_GOLDEN_DIR).join(&name);
        match std::fs::read(&path) {
            Ok(frozen) if frozen == fresh => {}
            Ok(_) => problems.push(format!("{MASK_GOLDEN_DIR}/{name}: bytes differ")),
            Err(e) => problems.push(format!("{MASK_GOLDEN_DIR}/{name}: {e}")),
        }
    }
    Ok(problems)
}

/// Runs `suites` with the verify command's sizes and bounds.
pub fn run(suites: &[Suite], golden_dir: &Path) -> Vec<Outcome> {
    suites
        .iter()
        .map(|&suite| {
            let (passed, detail) = match run_one(suite, golden_dir) {
                Ok(r) => r,
                Err(e) => (false, format!("error: {e}")),
            };
            Outcome {
                suite,
                passed,
                detail,
            }
        })
        .collect()
}

fn run_one(suite: Suite, golden_dir: &Path) -> Result<(bool, String)> {
    Ok(match suite {
        Suite::Oracle => {
            let s = oracle_equivalence(200, 1)?;
            (
                s.mismatches == 0,
                format!("{} of {} instances differ", s.mismatches, s.instances),
            )
        }
        Suite::Stochasticity => {
            let s = stochasticity(1000, 2)?;
            (
                s.column_err <= 1e-6 && s.total_err <= 1e-5,
                format!(
                    "column err {:.2e}, total err {:.2e}",
                    s.column_err, s.total_err
                ),
            )
        }
        Suite::Attention => {
            // judged at f64; the f32 figures are reported alongside
            let s = attention_invariants::<f64>(500, 3)?;
            let w = attention_invariants::<f32>(500, 3)?;
            (
                s.hull_excess <= 1e-6
                    && s.permutation_err <= 1e-6
                    && s.singleton_err == 0.0
                    && s.shape_failures + w.shape_failures == 0
                    && w.singleton_err == 0.0,
                format!(
                    "hull {:.2e}, permutation {:.2e}, singleton {:.2e}, shape failures {} (f32: hull {:.2e}, permutation {:.2e})",
                    s.hull_excess, s.permutation_err, s.singleton_err, s.shape_failures, w.hull_excess, w.permutation_err
                ),
            )
        }
        Suite::Gradients => {
            let s = gradients(20, 4)?;
            (
                s.f32_worst <= 1e-4 && s.f64_worst <= 1e-6 && s.op_worst <= 1e-6,
                format!(
                    "f32 {:.2e} over {}, f64 {:.2e} over {}, ops {:.2e}, {} redrawn",
                    s.f32_worst, s.f32_cases, s.f64_worst, s.f64_cases, s.op_worst, s.skipped
                ),
            )
        }
        Suite::Determinism => {
            let s = determinism()?;
            (
                s.tokens_identical && s.masks_identical && s.counts_identical,
                format!(
                    "tokens {}, masks {}, counts {}",
                    s.tokens_identical, s.masks_identical, s.counts_identical
                ),
            )
        }
        Suite::Goldens => {
            let problems = check_goldens(golden_dir)?;
            let detail = if problems.is_empty() {
                "all golden files match".to_string()
            } else {
                problems.join("; ")
            };
            (problems.is_empty(), detail)
        }
    })
}
