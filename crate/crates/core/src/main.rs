use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use sphere_seg::config::{ConfigError, DepthModeKind, Scene, SceneConfig};
use sphere_seg::oracle::OracleRule;
use sphere_seg::pipeline::{self, EvaluationReport, MaskSource, PipelineError, MASKS_DIR};
use sphere_seg::synthetic::{self, TownParams};
use sphere_seg::{save_labeled_cloud, CloudFormat};

const EXIT_USAGE: u8 = 1;
const EXIT_INTERNAL: u8 = 3;

#[derive(Parser)]
#[command(name = "sphere-seg", version, about = "Building segmentation of point clouds via equirectangular projection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Run configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output / work directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long, value_enum)]
    depth_mode: Option<DepthArg>,
    /// Relative depth band for `--depth-mode nearest`.
    #[arg(long)]
    epsilon_rel: Option<f64>,
    #[arg(long)]
    min_score: Option<f64>,
    #[arg(long)]
    width: Option<u32>,
    #[arg(long)]
    height: Option<u32>,
}

#[derive(Clone, Copy, ValueEnum)]
enum DepthArg {
    All,
    Nearest,
}

#[derive(Clone, Copy, ValueEnum)]
enum RuleArg {
    Any,
    Nearest,
}

impl From<RuleArg> for OracleRule {
    fn from(r: RuleArg) -> Self {
        match r {
            RuleArg::Any => OracleRule::Any,
            RuleArg::Nearest => OracleRule::Nearest,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write `<scene>.ppm` and `<scene>.spmap` for every scene.
    Project(Common),
    /// Write ground-truth masks for every scene.
    SegmentOracle {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "nearest")]
        rule: RuleArg,
        /// Dilate masks by this many pixels.
        #[arg(long, default_value_t = 0)]
        dilate_px: u32,
        /// Mask directory (default `<out>/masks`).
        #[arg(long)]
        masks: Option<PathBuf>,
    },
    /// Back-project scene masks onto the cloud.
    Backproject {
        #[command(flatten)]
        common: Common,
        /// Mask directory (default `<out>/masks`).
        #[arg(long)]
        masks: Option<PathBuf>,
    },
    /// Score a prediction against the cloud's labels.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Prediction file (default `<out>/prediction.txt`).
        #[arg(long)]
        prediction: Option<PathBuf>,
    },
    /// Run all stages.
    Pipeline {
        #[command(flatten)]
        common: Common,
        /// Use masks from this directory instead of the ground-truth oracle.
        #[arg(long)]
        masks: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "nearest")]
        rule: RuleArg,
        #[arg(long, default_value_t = 0)]
        dilate_px: u32,
    },
    /// Pool several `report.json` files into one table.
    Summarize {
        #[arg(required = true)]
        reports: Vec<PathBuf>,
    },
    /// Generate a synthetic scanned town and a matching config.
    SynthTown {
        #[arg(long, default_value = "town")]
        out: PathBuf,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
}

fn load_config(c: &Common) -> Result<SceneConfig, PipelineError> {
    let mut cfg = SceneConfig::load(&c.config)?;
    if let Some(m) = c.depth_mode {
        cfg.depth_mode = match m {
            DepthArg::All => DepthModeKind::All,
            DepthArg::Nearest => DepthModeKind::Nearest,
        };
    }
    if let Some(e) = c.epsilon_rel {
        cfg.epsilon_rel = e;
    }
    if let Some(s) = c.min_score {
        cfg.min_score = s;
    }
    if let Some(w) = c.width {
        cfg.image.width = w;
    }
    if let Some(h) = c.height {
        cfg.image.height = h;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn masks_dir(out: &Path, masks: Option<PathBuf>) -> PathBuf {
    masks.unwrap_or_else(|| out.join(MASKS_DIR))
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    match cli.command {
        Command::Project(c) => {
            let cfg = load_config(&c)?;
            let cloud = pipeline::load_cloud(&cfg)?;
            for s in pipeline::cmd_project(&cfg, &cloud, &c.out)? {
                println!(
                    "{}: {} of {} points projected ({} at reference, {} out of range)",
                    s.scene,
                    s.stats.projected,
                    s.stats.n_points,
                    s.stats.dropped_degenerate,
                    s.stats.dropped_out_of_range
                );
            }
        }
        Command::SegmentOracle {
            common,
            rule,
            dilate_px,
            masks,
        } => {
            let cfg = load_config(&common)?;
            let cloud = pipeline::load_cloud(&cfg)?;
            let dir = masks_dir(&common.out, masks);
            pipeline::cmd_segment_oracle(&cfg, &cloud, &common.out, &dir, rule.into(), dilate_px)?;
            println!("masks written to {}", dir.display());
        }
        Command::Backproject { common, masks } => {
            let cfg = load_config(&common)?;
            let cloud = pipeline::load_cloud(&cfg)?;
            let dir = masks_dir(&common.out, masks);
            let pred = pipeline::cmd_backproject(&cfg, &cloud, &common.out, &dir)?;
            println!("{} of {} points predicted as building", pred.len(), pred.n_points());
        }
        Command::Evaluate { common, prediction } => {
            let cfg = load_config(&common)?;
            let cloud = pipeline::load_cloud(&cfg)?;
            let pred = prediction.unwrap_or_else(|| common.out.join(pipeline::PREDICTION_FILE));
            let (_, table) = pipeline::cmd_evaluate(&cfg, &cloud, &common.out, &pred)?;
            print!("{table}");
        }
        Command::Pipeline {
            common,
            masks,
            rule,
            dilate_px,
        } => {
            let cfg = load_config(&common)?;
            let source = match &masks {
                Some(dir) => MaskSource::External(dir),
                None => MaskSource::Oracle {
                    rule: rule.into(),
                    dilate_px,
                },
            };
            let run = pipeline::cmd_pipeline(&cfg, &common.out, source)?;
            print!("{}", run.table);
        }
        Command::Summarize { reports } => {
            let mut parsed = Vec::with_capacity(reports.len());
            for path in &reports {
                let text = std::fs::read_to_string(path).map_err(|source| {
                    PipelineError::Config(ConfigError::Io {
                        path: path.clone(),
                        source,
                    })
                })?;
                let report: EvaluationReport = serde_json::from_str(&text).map_err(|source| {
                    PipelineError::Config(ConfigError::Json {
                        path: path.clone(),
                        source,
                    })
                })?;
                parsed.push(report);
            }
            let (_, table) = pipeline::summarize(&parsed)?;
            print!("{table}");
        }
        Command::SynthTown { out, seed } => synth_town(&out, seed)?,
    }
    Ok(())
}

fn synth_town(out: &Path, seed: u64) -> Result<(), PipelineError> {
    let io = |path: &Path, source| {
        PipelineError::Config(ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })
    };
    std::fs::create_dir_all(out).map_err(|e| io(out, e))?;
    let town = synthetic::town(&TownParams {
        seed,
        ..Default::default()
    });
    let cloud_path = out.join("town.ply");
    save_labeled_cloud(&town.cloud, &cloud_path, CloudFormat::PlyAscii)
        .map_err(|e| PipelineError::Config(ConfigError::Invalid(e.to_string())))?;
    let mut cfg = SceneConfig::new(
        "town.ply",
        town.scenes.iter().map(Scene::from).collect(),
        town.building_label,
    );
    cfg.area = Some("Town".into());
    let cfg_path = out.join("config.json");
    cfg.save(&cfg_path)?;
    println!(
        "wrote {} points to {} and config {}",
        town.cloud.len(),
        cloud_path.display(),
        cfg_path.display()
    );
    Ok(())
}

fn init_threads() -> Result<(), String> {
    let Ok(value) = std::env::var("SPHERESEG_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| format!("SPHERESEG_THREADS must be a positive integer, got {value:?}"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    if let Err(e) = init_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(EXIT_USAGE);
    }
    match std::panic::catch_unwind(|| run(cli)) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
        Err(_) => ExitCode::from(EXIT_INTERNAL),
    }
}
