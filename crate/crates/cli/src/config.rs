use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use mono3d::eval::{default_bins, parse_bin_edges, DistanceBin};
use mono3d::kitti_io::Difficulty;
use mono3d::ScoreMode;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Recover 3D boxes from JSON-lines predictions.
    Recover,
    /// Evaluate KITTI detection files against ground truth.
    Eval,
    /// Run the seeded distance-factor simulations.
    Simulate,
    /// Compare analytic loss gradients with finite differences.
    CheckGrad,
    /// Parse a label directory and count objects.
    Parse,
}

#[derive(Debug, Parser)]
#[command(
    name = "mono3d",
    version,
    about = "Monocular 3D detection geometry toolkit"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[arg(long, global = true)]
    pub gt_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    pub det_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    pub calib_dir: Option<PathBuf>,
    /// Directory of `<id>.jsonl` prediction files.
    #[arg(long, global = true)]
    pub pred: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 0.7)]
    pub iou: f64,
    #[arg(long, global = true, default_value = "moderate")]
    pub difficulty: String,
    #[arg(long, global = true, default_value = "raw")]
    pub score_mode: String,
    /// Distance bin edges in meters.
    #[arg(long, global = true)]
    pub bins: Option<String>,
    #[arg(long, global = true, default_value = "Car")]
    pub class: String,
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Sample or trial count.
    #[arg(long, global = true)]
    pub n: Option<usize>,
}

/// Validated settings of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub command: Command,
    pub gt_dir: Option<PathBuf>,
    pub det_dir: Option<PathBuf>,
    pub calib_dir: Option<PathBuf>,
    pub pred_dir: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub iou_thresh: f64,
    pub difficulty: Difficulty,
    pub score_mode: ScoreMode,
    pub bins: Vec<DistanceBin>,
    pub class: String,
    pub seed: u64,
    pub n: Option<usize>,
}

impl RunConfig {
    pub fn new(command: Command) -> Self {
        Self {
            command,
            gt_dir: None,
            det_dir: None,
            calib_dir: None,
            pred_dir: None,
            out: None,
            iou_thresh: 0.7,
            difficulty: Difficulty::Moderate,
            score_mode: ScoreMode::Raw,
            bins: default_bins(),
            class: "Car".into(),
            seed: 0,
            n: None,
        }
    }

    pub fn from_cli(cli: Cli) -> CliResult<Self> {
        let bad = |e: mono3d::Error| CliError::Input(e.to_string());
        let cfg = Self {
            command: cli.command,
            gt_dir: cli.gt_dir,
            det_dir: cli.det_dir,
            calib_dir: cli.calib_dir,
            pred_dir: cli.pred,
            out: cli.out,
            iou_thresh: cli.iou,
            difficulty: cli.difficulty.parse().map_err(bad)?,
            score_mode: cli.score_mode.parse().map_err(bad)?,
            bins: match cli.bins {
                Some(s) => parse_bin_edges(&s).map_err(bad)?,
                None => default_bins(),
            },
            class: cli.class,
            seed: cli.seed,
            n: cli.n,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> CliResult<()> {
        if !(self.iou_thresh > 0.0 && self.iou_thresh <= 1.0) {
            return Err(CliError::Input(format!(
                "--iou {} not in (0, 1]",
                self.iou_thresh
            )));
        }
        if self.n == Some(0) {
            return Err(CliError::Input("--n must be positive".into()));
        }
        let required: &[(&str, &Option<PathBuf>)] = match self.command {
            Command::Recover => &[
                ("--pred", &self.pred_dir),
                ("--calib-dir", &self.calib_dir),
                ("--out", &self.out),
            ],
            Command::Eval => &[("--gt-dir", &self.gt_dir), ("--det-dir", &self.det_dir)],
            Command::Parse => &[("--gt-dir", &self.gt_dir)],
            Command::Simulate | Command::CheckGrad => &[],
        };
        for (flag, path) in required {
            match path {
                Some(p) if !p.as_os_str().is_empty() => {}
                _ => return Err(CliError::Input(format!("{flag} is required"))),
            }
        }
        Ok(())
    }
}

pub(crate) fn required<'a>(path: &'a Option<PathBuf>, flag: &str) -> CliResult<&'a Path> {
    path.as_deref()
        .ok_or_else(|| CliError::Input(format!("{flag} is required")))
}
