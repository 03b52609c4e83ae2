//! Command-line front end: `run`, `sweep`, `verify`, `goldens`.
//!
//! Exit codes: 0 success, 1 configuration error, 2 runtime error,
//! 3 I/O or file-format error, 4 verification failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use vistoken::embfile::save_embeddings;
use vistoken::grid::tile_patches;
use vistoken::pipeline::{demo_scene, load_inputs, render_mask, MaskMode, QuerySource};
use vistoken::scene::{planted_scene, PlantedScene};
use vistoken::selection::SoftmaxAxis;
use vistoken::sweep::{self, REFERENCE_PAIRS};
use vistoken::verify::{self, Suite};
use vistoken::{Error, Pipeline, PipelineConfig, SceneSpec};

#[derive(Parser)]
#[command(
    name = "vistoken",
    version,
    about = "Query-aware visual token selection for multi-view driving scenes"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the pipeline once and write tokens, report and optional masks.
    Run {
        #[command(flatten)]
        common: Common,
        /// Read encoder outputs (*.lvde) from this directory instead of
        /// encoding a scene.
        #[arg(long, conflicts_with = "scene")]
        inputs: Option<PathBuf>,
        /// Write one PGM mask per view and frame.
        #[arg(long)]
        emit_mask: bool,
    },
    /// Run every (select, compress) pair and write a CSV.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Pairs as `SxC,SxC,...`; defaults to the 168-fold reference grid.
        #[arg(long)]
        pairs: Option<String>,
    },
    /// Run invariant suites; exits 4 if any fails.
    Verify {
        /// Only these suites (repeatable).
        #[arg(long, value_enum)]
        suite: Vec<Suite>,
        /// Directory holding the golden files.
        #[arg(long)]
        goldens: Option<PathBuf>,
    },
    /// Regenerate golden files into `--out`.
    Goldens {
        #[arg(long, default_value = "goldens")]
        out: PathBuf,
    },
}

#[derive(Args)]
struct Common {
    /// TOML config file; flags below override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// TOML scene file; defaults to the bundled demo scene.
    #[arg(long)]
    scene: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long)]
    select_ratio: Option<f64>,
    #[arg(long)]
    compress_ratio: Option<usize>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    views: Option<usize>,
    #[arg(long)]
    frames: Option<usize>,
    /// Patch grid as RxC; builds a planted scene of that shape.
    #[arg(long, value_parser = parse_grid)]
    grid: Option<[usize; 2]>,
    #[arg(long, value_enum)]
    axis: Option<SoftmaxAxis>,
    #[arg(long, value_enum)]
    q_source: Option<QuerySource>,
    #[arg(long, value_enum)]
    mask_mode: Option<MaskMode>,
    /// Embedding width.
    #[arg(long)]
    d: Option<usize>,
    /// Add the attention queries back after fusion.
    #[arg(long)]
    residual: bool,
    /// Drop row 0 of every input embedding file.
    #[arg(long)]
    has_class_token: bool,
}

fn parse_grid(s: &str) -> Result<[usize; 2], String> {
    let (r, c) = s.split_once(['x', 'X']).ok_or("expected RxC")?;
    let r = r.parse().map_err(|_| format!("bad row count `{r}`"))?;
    let c = c.parse().map_err(|_| format!("bad column count `{c}`"))?;
    Ok([r, c])
}

impl Common {
    fn config(&self) -> vistoken::Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(path) => PipelineConfig::load(path)?,
            None => PipelineConfig::default(),
        };
        macro_rules! take {
            ($($field:ident),*) => {$(if let Some(v) = self.$field { cfg.$field = v; })*};
        }
        take!(
            select_ratio,
            compress_ratio,
            tau,
            alpha,
            seed,
            views,
            frames,
            grid,
            axis,
            q_source,
            mask_mode,
            d
        );
        cfg.residual |= self.residual;
        cfg.has_class_token |= self.has_class_token;
        cfg.validate()?;
        Ok(cfg)
    }

    /// The scene to encode, cut down to `--views` / `--frames`, with the
    /// config's geometry updated to match it.
    fn scene(&self, cfg: &mut PipelineConfig) -> vistoken::Result<SceneSpec> {
        let scene = match (&self.scene, self.grid) {
            (Some(path), _) => {
                let s = SceneSpec::load(path)?;
                if self.grid.is_some_and(|g| g != [s.grid.rows, s.grid.cols]) {
                    return Err(Error::Config("--grid disagrees with the scene file".into()));
                }
                s
            }
            (None, Some([rows, cols])) => {
                let p = cfg.patch_size;
                planted_scene(&PlantedScene {
                    grid: tile_patches(rows as u32 * p, cols as u32 * p, p)?,
                    views: cfg.views,
                    frames: cfg.frames,
                    tokens_per_patch: cfg.tokens_per_patch,
                    planted_per_view: 3.min(rows * cols),
                    seed: cfg.seed,
                })?
            }
            (None, None) => demo_scene(),
        };
        let views = self.views.unwrap_or(scene.views.len());
        let frames = self.frames.unwrap_or(scene.frames.len());
        let scene = scene.subset(views, frames)?;
        cfg.adopt_scene_geometry(&scene);
        Ok(scene)
    }
}

fn exit_code(e: &Error) -> u8 {
    match e.root() {
        Error::Config(_) | Error::Param(_) | Error::Budget(_) => 1,
        Error::Io { .. } | Error::Format { .. } => 3,
        _ => 2,
    }
}

fn write(path: &Path, body: impl AsRef<[u8]>) -> vistoken::Result<()> {
    std::fs::write(path, body).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> vistoken::Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn cmd_run(common: &Common, inputs: Option<&Path>, emit_mask: bool) -> vistoken::Result<()> {
    let mut cfg = common.config()?;
    let output = match inputs {
        Some(dir) => {
            let encoded = load_inputs(dir, &cfg)?;
            Pipeline::new(cfg.clone())?.run_inputs(&encoded)?
        }
        None => {
            let scene = common.scene(&mut cfg)?;
            Pipeline::new(cfg.clone())?.run_scene(&scene)?
        }
    };
    let out = &common.out;
    create_dir(out)?;
    save_embeddings(&output.final_tokens, &out.join("final_tokens.lvde"))?;
    save_embeddings(&output.text, &out.join("text.lvde"))?;
    let report = &output.report;
    write(&out.join("report.txt"), report.to_text())?;
    write(&out.join("report.json"), report.to_json())?;
    if emit_mask {
        render_mask(
            &output.mask,
            &out.join("masks"),
            cfg.mask_mode,
            cfg.mask_block,
        )?;
    }
    println!(
        "m_in {} -> k {} -> out_tokens {} (reduction {})",
        report.m_in, report.k_selected, report.out_tokens, report.achieved_reduction
    );
    Ok(())
}

fn cmd_sweep(common: &Common, pairs: Option<&str>) -> vistoken::Result<()> {
    let mut cfg = common.config()?;
    let pairs = match pairs {
        Some(p) => sweep::parse_pairs(p)?,
        None => REFERENCE_PAIRS.to_vec(),
    };
    if pairs.is_empty() {
        return Err(Error::Config("sweep needs at least one ratio pair".into()));
    }
    let scene = common.scene(&mut cfg)?;
    create_dir(&common.out)?;
    let rows = sweep::sweep(&cfg, &scene, &pairs, Some(&common.out))?;
    let csv = sweep::to_csv(&rows);
    write(&common.out.join("sweep.csv"), &csv)?;
    print!("{csv}");
    for r in rows.iter().filter(|r| r.flagged) {
        eprintln!(
            "flagged: {} x {} declares {}-fold, not {}; achieved {:.2}",
            r.select_ratio,
            r.compress_ratio,
            r.declared_reduction,
            sweep::REFERENCE_REDUCTION,
            r.reduction
        );
    }
    Ok(())
}

fn cmd_verify(suites: &[Suite], goldens: Option<&Path>) -> bool {
    let suites = if suites.is_empty() {
        Suite::ALL.to_vec()
    } else {
        suites.to_vec()
    };
    let dir = goldens
        .map(Path::to_path_buf)
        .unwrap_or_else(verify::default_golden_dir);
    let outcomes = verify::run(&suites, &dir);
    for o in &outcomes {
        let tag = if o.passed { "PASS" } else { "FAIL" };
        println!("{tag} {}: {}", o.suite.name(), o.detail);
    }
    outcomes.iter().all(|o| o.passed)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match &cli.command {
        Command::Run {
            common,
            inputs,
            emit_mask,
        } => cmd_run(common, inputs.as_deref(), *emit_mask),
        Command::Sweep { common, pairs } => cmd_sweep(common, pairs.as_deref()),
        Command::Verify { suite, goldens } => {
            return if cmd_verify(suite, goldens.as_deref()) {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(4)
            };
        }
        Command::Goldens { out } => verify::write_goldens(out).map(|files| {
            for f in files {
                println!("{}", f.display());
            }
        }),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
