use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use dashgauss::schedule::{FinalAnchor, FractionRule, ScheduleOptions};
use dashgauss::trainer::{SchedulerMode, TrainConfig};
use serde::{Deserialize, Serialize};

#[derive(Debug, Parser)]
#[command(
    name = "dashgauss",
    version,
    about = "Resolution and primitive-growth scheduling for Gaussian-splatting fits"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compute the resolution schedule and content table for a set of views.
    Analyze(AnalyzeArgs),
    /// Fit a 2D splat model to one image.
    Fit(FitArgs),
    /// Fit with and without scheduling and report the difference.
    Compare(CompareArgs),
    /// Re-run the command recorded in a manifest.
    Replay(ReplayArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Dash,
    None,
}

impl From<ModeArg> for SchedulerMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Dash => SchedulerMode::Dash,
            ModeArg::None => SchedulerMode::None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum FractionArg {
    Log,
    Linear,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum AnchorArg {
    TotalIters,
    FirstSwitch,
}

/// Which factor the exported primitive target is evaluated at.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetFactor {
    /// The rendered (floored) factor, as the trainer uses it.
    #[default]
    Floored,
    Continuous,
}

#[derive(Debug, Args)]
pub struct ScheduleArgs {
    /// Content ratio between full resolution and the coarsest level.
    #[arg(long = "a", default_value_t = dashgauss::schedule::DEFAULT_SIGNIFICANCE_RATIO)]
    pub a: f64,
    /// Number of resolution levels.
    #[arg(long, default_value_t = dashgauss::schedule::DEFAULT_LEVELS)]
    pub levels: usize,
    #[arg(long, value_enum, default_value = "log")]
    pub fraction: FractionArg,
    #[arg(long, value_enum, default_value = "total-iters")]
    pub anchor: AnchorArg,
    #[arg(long, default_value_t = dashgauss::schedule::DEFAULT_GAMMA)]
    pub gamma: f64,
    #[arg(long, default_value_t = dashgauss::schedule::DEFAULT_ETA)]
    pub eta: f64,
}

impl ScheduleArgs {
    pub fn options(&self) -> ScheduleOptions {
        ScheduleOptions {
            fraction: match self.fraction {
                FractionArg::Log => FractionRule::Log,
                FractionArg::Linear => FractionRule::Linear,
            },
            anchor: match self.anchor {
                AnchorArg::TotalIters => FinalAnchor::TotalIters,
                AnchorArg::FirstSwitch => FinalAnchor::FirstSwitch,
            },
        }
    }
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Views to analyze; all must share one size.
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    #[arg(long, default_value_t = 2000)]
    pub iters: usize,
    /// Initial primitive count used for the exported primitive targets.
    #[arg(long, default_value_t = 200)]
    pub p_init: usize,
    #[arg(long, value_enum, default_value = "floored")]
    pub target_factor: TargetFactor,
    #[command(flatten)]
    pub schedule: ScheduleArgs,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, default_value_t = 2000)]
    pub iters: usize,
    #[arg(long, default_value_t = 200)]
    pub p_init: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub densify_interval: Option<usize>,
    #[arg(long)]
    pub densify_start: Option<usize>,
    /// Defaults to 80% of --iters.
    #[arg(long)]
    pub densify_stop: Option<usize>,
    #[arg(long)]
    pub grad_threshold: Option<f64>,
    #[arg(long)]
    pub prune_opacity: Option<f64>,
    #[arg(long)]
    pub split_scale: Option<f64>,
    #[arg(long)]
    pub lr_position: Option<f64>,
    #[arg(long)]
    pub lr_position_final: Option<f64>,
    #[arg(long)]
    pub lr_scale: Option<f64>,
    #[arg(long)]
    pub lr_rotation: Option<f64>,
    #[arg(long)]
    pub lr_opacity: Option<f64>,
    #[arg(long)]
    pub lr_color: Option<f64>,
    #[command(flatten)]
    pub schedule: ScheduleArgs,
}

impl TrainArgs {
    /// Materializes every default for `mode`.
    pub fn config(&self, mode: SchedulerMode) -> TrainConfig {
        let mut c = TrainConfig::with_iters(self.iters);
        c.mode = mode;
        c.p_init = self.p_init;
        let set = |slot: &mut usize, v: Option<usize>| {
            if let Some(v) = v {
                *slot = v;
            }
        };
        set(&mut c.densify_interval, self.densify_interval);
        set(&mut c.densify_start, self.densify_start);
        set(&mut c.densify_stop, self.densify_stop);
        let setf = |slot: &mut f64, v: Option<f64>| {
            if let Some(v) = v {
                *slot = v;
            }
        };
        setf(&mut c.grad_threshold, self.grad_threshold);
        setf(&mut c.prune_opacity, self.prune_opacity);
        setf(&mut c.split_scale_threshold, self.split_scale);
        setf(&mut c.lr.position, self.lr_position);
        setf(&mut c.position_lr_final, self.lr_position_final);
        setf(&mut c.lr.log_scale, self.lr_scale);
        setf(&mut c.lr.rotation, self.lr_rotation);
        setf(&mut c.lr.opacity, self.lr_opacity);
        setf(&mut c.lr.color, self.lr_color);
        c.significance_ratio = self.schedule.a;
        c.levels = self.schedule.levels;
        c.gamma = self.schedule.gamma;
        c.eta = self.schedule.eta;
        c.schedule = self.schedule.options();
        c
    }
}

#[derive(Debug, Args)]
pub struct FitArgs {
    pub input: PathBuf,
    #[arg(long, value_enum, default_value = "dash")]
    pub mode: ModeArg,
    #[command(flatten)]
    pub train: TrainArgs,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    pub input: PathBuf,
    #[command(flatten)]
    pub train: TrainArgs,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    pub manifest: PathBuf,
    /// Write to this directory instead of the recorded one.
    #[arg(long)]
    pub out: Option<PathBuf>,
}
