//! Argument handling for the `sonospine` binary.

use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use sonospine::config::PipelineConfig;
use sonospine::pipeline::{self, Detector, Layout};
use sonospine::recon::Projection;

#[derive(Debug, Parser)]
#[command(name = "sonospine", version, about = "Spine ultrasound landmarks, reconstruction and SPA measurement")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML configuration; built-in defaults when absent.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory (overrides the configuration's).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Single-phase training schedule length.
    #[arg(long, global = true)]
    pub epochs: Option<usize>,
    /// Learning rate for the single-phase schedule.
    #[arg(long, global = true)]
    pub lr: Option<f64>,
    #[arg(long, global = true, value_parser = parse_projection)]
    pub projection: Option<Projection>,
    /// Number of frames in the phantom scan.
    #[arg(long, global = true)]
    pub frames: Option<usize>,
}

fn parse_projection(s: &str) -> std::result::Result<Projection, String> {
    s.parse().map_err(|e: sonospine::Error| e.to_string())
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a tracked phantom scan with its ground truth.
    Phantom,
    /// Train a model on labeled archives, or on generated phantom frames.
    Train {
        datasets: Vec<PathBuf>,
    },
    /// Detect landmarks and write the processed archive.
    Infer {
        /// Scan archive directory.
        scan: PathBuf,
        #[arg(long, required_unless_present = "oracle_landmarks")]
        weights: Option<PathBuf>,
        /// Use the archive's labels instead of the network.
        #[arg(long, conflicts_with = "weights")]
        oracle_landmarks: bool,
    },
    /// Build the volume, coronal image and SP points from a processed archive.
    Reconstruct {
        processed: PathBuf,
    },
    /// Fit the SP curve and measure SPAs.
    Measure {
        /// Directory written by `reconstruct`.
        recon: PathBuf,
        /// Archive whose poses identify dwell frames.
        scan: PathBuf,
    },
    /// Compare predictions with ground truth.
    Evaluate {
        #[arg(long, requires = "truth_landmarks")]
        landmarks: Option<PathBuf>,
        #[arg(long)]
        truth_landmarks: Option<PathBuf>,
        #[arg(long, requires = "truth_spa")]
        spa: Option<PathBuf>,
        #[arg(long)]
        truth_spa: Option<PathBuf>,
    },
    /// Run every stage on a fresh phantom scan.
    Pipeline {
        /// Use existing weights instead of training.
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long, conflicts_with = "weights")]
        oracle_landmarks: bool,
    },
}

/// Applies file and command-line overrides on top of the defaults.
pub fn resolve_config(common: &Common) -> Result<PipelineConfig> {
    let mut cfg = match &common.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            PipelineConfig::from_toml(&text).with_context(|| format!("in {}", path.display()))?
        }
        None => PipelineConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.out_dir = out.display().to_string();
    }
    match (common.epochs, common.lr) {
        (Some(epochs), lr) => {
            let lr = lr.unwrap_or(cfg.train.schedule.last().map_or(1e-3, |p| p.lr));
            cfg.train.single_phase(epochs, lr);
        }
        (None, Some(lr)) => cfg.train.schedule.iter_mut().for_each(|p| p.lr = lr),
        (None, None) => {}
    }
    if let Some(p) = common.projection {
        cfg.recon.projection = p;
    }
    if let Some(frames) = common.frames {
        cfg.scan.frame_count = frames;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn run(cli: &Cli, w: &mut impl Write) -> Result<()> {
    let cfg = resolve_config(&cli.common)?;
    let out = PathBuf::from(&cfg.out_dir);
    match &cli.command {
        Command::Phantom => writeln!(w, "{}", pipeline::cmd_phantom(&cfg, &out)?)?,
        Command::Train { datasets } => writeln!(w, "{}", pipeline::cmd_train(&cfg, datasets, &out)?)?,
        Command::Infer { scan, weights, oracle_landmarks } => {
            if weights.is_none() && !oracle_landmarks {
                bail!("infer needs --weights or --oracle-landmarks");
            }
            writeln!(w, "{}", pipeline::cmd_infer(&cfg, weights.as_deref(), scan, &out)?)?
        }
        Command::Reconstruct { processed } => writeln!(w, "{}", pipeline::cmd_reconstruct(&cfg, processed, &out)?)?,
        Command::Measure { recon, scan } => {
            let report = pipeline::cmd_measure(&cfg, recon, scan, &out)?;
            writeln!(w, "SPA {}", report.angles_label())?
        }
        Command::Evaluate { landmarks, truth_landmarks, spa, truth_spa } => {
            let lm = pair(landmarks, truth_landmarks);
            let segs = pair(truth_spa, spa);
            if lm.is_none() && segs.is_none() {
                bail!("evaluate needs --landmarks/--truth-landmarks or --spa/--truth-spa");
            }
            write!(w, "{}", pipeline::cmd_evaluate(&cfg, lm, segs, &out)?)?
        }
        Command::Pipeline { weights, oracle_landmarks } => {
            let detector = match (weights, oracle_landmarks) {
                (Some(p), _) => Detector::Weights(p),
                (None, true) => Detector::Oracle,
                (None, false) => Detector::Train,
            };
            let summary = pipeline::cmd_pipeline(&cfg, detector, &out)?;
            write!(w, "{summary}")?;
            writeln!(w, "artifacts in {}", Layout::new(&out).root.display())?
        }
    }
    Ok(())
}

fn pair<'a>(a: &'a Option<PathBuf>, b: &'a Option<PathBuf>) -> Option<(&'a Path, &'a Path)> {
    Some((a.as_deref()?, b.as_deref()?))
}

/// Keeps large tensor buffers mapped between training steps instead of
/// returning them to the kernel after every allocation.
pub fn tune_allocator() {
    #[cfg(all(target_os = "linux", target_env = "gnu"))]
    // SAFETY: mallopt only adjusts allocator thresholds and is called before
    // any worker threads exist.
    unsafe {
        libc::mallopt(libc::M_MMAP_THRESHOLD, 1 << 30);
        libc::mallopt(libc::M_TRIM_THRESHOLD, 1 << 30);
    }
}
