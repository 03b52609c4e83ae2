//! End-to-end pipeline behaviour on small planted scenes.

use proptest::prelude::*;
use vistoken::embfile::save_embeddings;
use vistoken::encoders::{
    mock_main_encoder, mock_support_encoder, mock_text_encoder, mock_video_encoder,
};
use vistoken::grid::tile_patches;
use vistoken::kernels::gather_rows;
use vistoken::pipeline::{budget, load_inputs, EncodedInputs, QuerySource, INPUT_FILES};
use vistoken::scene::{planted_scene, PlantedScene};
use vistoken::{Error, Pipeline, PipelineConfig, SceneSpec, Tensor};

fn scene(views: usize, frames: usize, seed: u64) -> SceneSpec {
    planted_scene(&PlantedScene {
        grid: tile_patches(32, 48, 16).unwrap(),
        views,
        frames,
        tokens_per_patch: 4,
        planted_per_view: 2,
        seed,
    })
    .unwrap()
}

fn config_for(scene: &SceneSpec) -> PipelineConfig {
    let mut cfg = PipelineConfig {
        d: 32,
        select_ratio: 2.0,
        compress_ratio: 3,
        ..PipelineConfig::default()
    };
    cfg.adopt_scene_geometry(scene);
    cfg
}

fn unit_rows(t: &Tensor<f64>) -> bool {
    t.iter_rows()
        .all(|r| (r.iter().map(|v| v * v).sum::<f64>().sqrt() - 1.0).abs() <= 1e-6)
}

#[test]
fn mock_encoders_emit_unit_rows() {
    let s = scene(2, 3, 5);
    assert!(unit_rows(&mock_text_encoder(&s, 24, 1).unwrap()));
    assert!(unit_rows(
        mock_main_encoder::<f64>(&s, 24, 1).unwrap().embeddings()
    ));
    assert!(unit_rows(&mock_support_encoder(&s, 24, 1).unwrap()));
    assert!(unit_rows(&mock_video_encoder(&s, 24, 1).unwrap()));
}

#[test]
fn single_frame_has_no_temporal_branch() {
    let s = scene(2, 1, 1);
    let out = Pipeline::<f32>::new(config_for(&s))
        .unwrap()
        .run_scene(&s)
        .unwrap();
    assert!(out.enhanced.temporal.is_none());
    let s = scene(2, 2, 1);
    let out = Pipeline::<f32>::new(config_for(&s))
        .unwrap()
        .run_scene(&s)
        .unwrap();
    assert!(out.enhanced.temporal.is_some());
}

#[test]
fn geometry_mismatch_is_a_config_error() {
    let s = scene(2, 2, 1);
    let cfg = PipelineConfig {
        views: 3,
        ..config_for(&s)
    };
    let err = Pipeline::<f32>::new(cfg)
        .unwrap()
        .run_scene(&s)
        .unwrap_err();
    assert!(matches!(err.root(), Error::Config(_)), "{err}");
}

#[test]
fn file_inputs_match_scene_run() {
    let s = scene(2, 3, 9);
    let cfg = config_for(&s);
    let direct = Pipeline::<f32>::new(cfg.clone())
        .unwrap()
        .run_scene(&s)
        .unwrap();
    let enc = EncodedInputs::<f32>::from_scene(&s, cfg.d, cfg.seed).unwrap();
    let tensors = [
        enc.text.clone(),
        enc.main.embeddings().clone(),
        enc.support.clone(),
        enc.temporal.clone().unwrap(),
    ];

    let dir = tempfile::tempdir().unwrap();
    for (name, t) in INPUT_FILES.iter().zip(&tensors) {
        save_embeddings(t, &dir.path().join(name)).unwrap();
    }
    let loaded = Pipeline::<f32>::new(cfg.clone())
        .unwrap()
        .run_inputs(&load_inputs(dir.path(), &cfg).unwrap())
        .unwrap();
    assert!(loaded.final_tokens.bit_eq(&direct.final_tokens));
    assert_eq!(loaded.mask, direct.mask);

    // a leading class-token row is dropped when asked
    let dir = tempfile::tempdir().unwrap();
    for (name, t) in INPUT_FILES.iter().zip(&tensors) {
        let mut rows: Vec<Vec<f32>> = vec![vec![9.0; t.cols()]];
        rows.extend(t.iter_rows().map(<[f32]>::to_vec));
        save_embeddings(&Tensor::from_rows(&rows).unwrap(), &dir.path().join(name)).unwrap();
    }
    let cls = PipelineConfig {
        has_class_token: true,
        ..cfg.clone()
    };
    let with_cls = Pipeline::<f32>::new(cls.clone())
        .unwrap()
        .run_inputs(&load_inputs(dir.path(), &cls).unwrap())
        .unwrap();
    assert!(with_cls.final_tokens.bit_eq(&direct.final_tokens));
}

#[test]
fn residual_adds_the_queries_back() {
    let s = scene(2, 2, 4);
    let cfg = config_for(&s);
    let plain = Pipeline::<f64>::new(cfg.clone())
        .unwrap()
        .run_scene(&s)
        .unwrap();
    let res = Pipeline::<f64>::new(PipelineConfig {
        residual: true,
        ..cfg
    })
    .unwrap()
    .run_scene(&s)
    .unwrap();
    let q = &plain.selection.compressed;
    for ((a, b), c) in res
        .final_tokens
        .data()
        .iter()
        .zip(plain.final_tokens.data())
        .zip(q.data())
    {
        assert!((a - b - c).abs() <= 1e-12);
    }
}

#[test]
fn all_queries_enhance_then_gather() {
    let s = scene(2, 2, 6);
    let cfg = PipelineConfig {
        q_source: QuerySource::All,
        ..config_for(&s)
    };
    let out = Pipeline::<f64>::new(cfg.clone())
        .unwrap()
        .run_scene(&s)
        .unwrap();
    let m = out.report.m_in;
    assert_eq!(out.enhanced.fused.rows(), m);
    let b = budget(m, cfg.select_ratio, cfg.compress_ratio).unwrap();
    assert_eq!(out.final_tokens.shape(), (b.out_tokens, cfg.d));
    // mean aggregation of the gathered rows, computed by hand
    let picked = gather_rows(&out.enhanced.fused, &out.selection.selected_indices).unwrap();
    for g in 0..b.out_tokens {
        for j in 0..cfg.d {
            let mean: f64 = (0..3).map(|t| picked.get(g * 3 + t, j)).sum::<f64>() / 3.0;
            assert!((out.final_tokens.get(g, j) - mean).abs() <= 1e-12);
        }
    }
}

#[test]
fn report_echoes_effective_config() {
    let s = scene(1, 2, 2);
    let cfg = PipelineConfig {
        tau: 0.5,
        alpha: 0.75,
        ..config_for(&s)
    };
    let out = Pipeline::<f32>::new(cfg.clone())
        .unwrap()
        .run_scene(&s)
        .unwrap();
    let json: serde_json::Value = serde_json::from_str(&out.report.to_json()).unwrap();
    assert_eq!(json["config"]["tau"], 0.5);
    assert_eq!(json["config"]["alpha"], 0.75);
    assert_eq!(json["m_in"], 24);
    let text = out.report.to_text();
    let echoed = PipelineConfig::from_toml(text.split_once("[config]\n").unwrap().1).unwrap();
    assert_eq!(echoed, cfg);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn mask_holds_exactly_k_tokens(
        views in 1usize..4,
        frames in 1usize..3,
        select in prop::sample::select(vec![1.0, 1.5, 2.0, 3.0]),
        c in 1usize..5,
        alpha in 0.0f64..=1.0,
        seed in 0u64..1000,
    ) {
        let s = scene(views, frames, seed);
        let cfg = PipelineConfig { select_ratio: select, compress_ratio: c, alpha, seed, ..config_for(&s) };
        let out = Pipeline::<f32>::new(cfg.clone()).unwrap().run_scene(&s).unwrap();
        let b = budget(out.report.m_in, select, c).unwrap();
        prop_assert_eq!(out.mask.true_count(), b.k);
        prop_assert_eq!(out.report.k_selected, b.k);
        prop_assert_eq!(out.final_tokens.rows(), b.out_tokens);
        let per_patch: usize = out.mask.keys().map(|(v, f)| {
            (0..2).flat_map(|r| (0..3).map(move |col| (r, col)))
                .map(|(r, col)| out.mask.patch_count(v, f, r, col))
                .sum::<usize>()
        }).sum();
        prop_assert_eq!(per_patch, b.k);
    }
}
