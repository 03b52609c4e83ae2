//! Grid sweeps over (select_ratio, compress_ratio) pairs.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::pipeline::{planted_recall, Pipeline, PipelineConfig};
use crate::scene::SceneSpec;

/// Overall reduction every pair in the reference grid is meant to share.
pub const REFERENCE_REDUCTION: f64 = 168.0;

pub const CSV_HEADER: &str =
    "select_ratio,compress_ratio,m_in,k,out_tokens,reduction,recall,wall_ms";

/// The ratio pairs of the reference grid, all nominally 168-fold.
pub const REFERENCE_PAIRS: [(f64, usize); 4] = [(2.0, 84), (3.0, 56), (6.0, 26), (84.0, 2)];

#[derive(Clone, Debug, Serialize)]
pub struct SweepRow {
    pub select_ratio: f64,
    pub compress_ratio: usize,
    pub m_in: usize,
    pub k: usize,
    pub out_tokens: usize,
    /// Achieved, `m_in / out_tokens`.
    pub reduction: f64,
    pub recall: Option<f64>,
    pub wall_ms: f64,
    /// `select_ratio × compress_ratio`.
    pub declared_reduction: f64,
    /// Declared reduction differs from [`REFERENCE_REDUCTION`].
    pub flagged: bool,
}

impl SweepRow {
    pub fn csv_line(&self) -> String {
        let recall = self.recall.map(|r| r.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{:.3}",
            self.select_ratio,
            self.compress_ratio,
            self.m_in,
            self.k,
            self.out_tokens,
            self.reduction,
            recall,
            self.wall_ms
        )
    }
}

pub fn to_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(s, "{}", r.csv_line());
    }
    s
}

/// Parses `"2x84,3x56"`.
pub fn parse_pairs(text: &str) -> Result<Vec<(f64, usize)>> {
    text.split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| {
            let (s, c) = p
                .split_once(['x', 'X', ':'])
                .ok_or_else(|| Error::Config(format!("pair `{p}` is not SxC")))?;
            let s: f64 = s
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("bad select ratio in `{p}`")))?;
            let c: usize = c
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("bad compress ratio in `{p}`")))?;
            Ok((s, c))
        })
        .collect()
}

/// Runs the pipeline once per pair, in parallel. With `out` set, each pair
/// writes its report under `out/pair_{s}x{c}/`.
pub fn sweep(
    base: &PipelineConfig,
    scene: &SceneSpec,
    pairs: &[(f64, usize)],
    out: Option<&Path>,
) -> Result<Vec<SweepRow>> {
    if pairs.is_empty() {
        return Err(Error::Config("sweep needs at least one ratio pair".into()));
    }
    pairs
        .par_iter()
        .map(|&(select_ratio, compress_ratio)| {
            let config = PipelineConfig {
                select_ratio,
                compress_ratio,
                ..base.clone()
            };
            let start = Instant::now();
            let result = Pipeline::<f32>::new(config)?.run_scene(scene)?;
            let wall_ms = start.elapsed().as_secs_f64() * 1e3;
            let report = &result.report;
            if let Some(dir) = out {
                let dir = dir.join(format!("pair_{select_ratio}x{compress_ratio}"));
                std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
                for (name, body) in [
                    ("report.txt", report.to_text()),
                    ("report.json", report.to_json()),
                ] {
                    let path = dir.join(name);
                    std::fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
                }
            }
            let declared = select_ratio * compress_ratio as f64;
            Ok(SweepRow {
                select_ratio,
                compress_ratio,
                m_in: report.m_in,
                k: report.k_selected,
                out_tokens: report.out_tokens,
                reduction: report.achieved_reduction,
                recall: planted_recall(scene, scene.current_frame(), &result.mask),
                wall_ms,
                declared_reduction: declared,
                flagged: declared != REFERENCE_REDUCTION,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_pairs_accepts_separators() {
        assert_eq!(
            parse_pairs("2x84, 3:56,1.5X4").unwrap(),
            vec![(2.0, 84), (3.0, 56), (1.5, 4)]
        );
        assert!(parse_pairs("").unwrap().is_empty());
        assert!(parse_pairs("2-84").is_err());
        assert!(parse_pairs("ax2").is_err());
    }

    #[test]
    fn csv_layout() {
        let row = SweepRow {
            select_ratio: 2.0,
            compress_ratio: 84,
            m_in: 8232,
            k: 4116,
            out_tokens: 49,
            reduction: 168.0,
            recall: None,
            wall_ms: 1.23456,
            declared_reduction: 168.0,
            flagged: false,
        };
        assert_eq!(
            to_csv(&[row]),
            format!("{CSV_HEADER}\n2,84,8232,4116,49,168,,1.235\n")
        );
    }

    #[test]
    fn empty_sweep_is_a_config_error() {
        let scene = crate::pipeline::demo_scene();
        assert!(matches!(
            sweep(&PipelineConfig::default(), &scene, &[], None),
            Err(Error::Config(_))
        ));
    }
}
