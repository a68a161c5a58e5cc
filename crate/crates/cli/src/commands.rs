use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use dashgauss::format::format_sig;
use dashgauss::schedule::{build_levels, primitive_target, BudgetState, FactorWarning, ResolutionSchedule};
use dashgauss::spectra::{SpectralProfile, MIN_ANALYSIS_EXTENT};
use dashgauss::splat2d::render;
use dashgauss::trainer::{train, RunSummary, SchedulerMode, TrainConfig, TrainRun, PSNR_CAP};
use dashgauss::Image;
use serde::{Deserialize, Serialize};

use crate::args::{AnalyzeArgs, CompareArgs, FitArgs, TargetFactor};
use crate::manifest::{AnalyzeConfig, Invocation, RunManifest, MANIFEST_FILE};
use crate::output::{ensure_dir, write_atomic, write_json_atomic, write_png_atomic};

pub const SCHEDULE_HEADER: &str = "iter,r_continuous,r_floored,p_target,p_fin";
pub const SIGNIFICANCE_HEADER: &str = "r,significance";

pub fn analyze(args: &AnalyzeArgs) -> Result<()> {
    let config = AnalyzeConfig {
        total_iters: args.iters,
        p_init: args.p_init,
        significance_ratio: args.schedule.a,
        levels: args.schedule.levels,
        gamma: args.schedule.gamma,
        eta: args.schedule.eta,
        schedule: args.schedule.options(),
        target_factor: args.target_factor,
    };
    run_analyze(&args.inputs, &config, &args.out)
}

pub fn fit(args: &FitArgs) -> Result<()> {
    let config = args.train.config(args.mode.into());
    run_fit(&args.input, &config, args.train.seed, &args.out)
}

pub fn compare(args: &CompareArgs) -> Result<()> {
    let config = args.train.config(SchedulerMode::Dash);
    run_compare(&args.input, &config, args.train.seed, &args.out)
}

pub fn replay(manifest_path: &Path, out: Option<&Path>) -> Result<()> {
    let manifest = RunManifest::load(manifest_path)?;
    let out = out.map_or_else(|| manifest.output_dir.clone(), Path::to_path_buf);
    let seed = || manifest.seed.context("manifest lacks a seed");
    let single = || match manifest.inputs.as_slice() {
        [one] => Ok(one),
        other => bail!("manifest lists {} inputs, expected 1", other.len()),
    };
    match &manifest.invocation {
        Invocation::Analyze(config) => run_analyze(&manifest.inputs, config, &out),
        Invocation::Fit(config) => run_fit(single()?, config, seed()?, &out),
        Invocation::Compare(config) => run_compare(single()?, config, seed()?, &out),
    }
}

fn load_image(path: &Path) -> Result<Image> {
    Ok(Image::load(path)?)
}

fn load_views(paths: &[PathBuf]) -> Result<Vec<Image>> {
    let mut views: Vec<Image> = Vec::with_capacity(paths.len());
    for path in paths {
        let view = load_image(path)?;
        if view.height() < MIN_ANALYSIS_EXTENT || view.width() < MIN_ANALYSIS_EXTENT {
            return Err(dashgauss::Error::Data(format!(
                "{} is {}x{}, below the {MIN_ANALYSIS_EXTENT}x{MIN_ANALYSIS_EXTENT} minimum",
                path.display(),
                view.height(),
                view.width()
            ))
            .into());
        }
        if let Some(first) = views.first() {
            if (first.height(), first.width()) != (view.height(), view.width()) {
                return Err(dashgauss::Error::Data(format!(
                    "{} is {}x{} but {} is {}x{}",
                    path.display(),
                    view.height(),
                    view.width(),
                    paths[0].display(),
                    first.height(),
                    first.width()
                ))
                .into());
            }
        }
        views.push(view);
    }
    Ok(views)
}

fn warn_about(warning: Option<FactorWarning>, r_m: f64) {
    match warning {
        Some(FactorWarning::TooSmall) => {
            eprintln!("warning: views too small to downsample; schedule stays at full resolution")
        }
        Some(FactorWarning::TargetUnreachable) => {
            eprintln!("warning: content target unreachable; coarsest factor capped at {r_m:.4}")
        }
        None => {}
    }
}

pub fn run_analyze(inputs: &[PathBuf], config: &AnalyzeConfig, out: &Path) -> Result<()> {
    let views = load_views(inputs)?;
    let profile = SpectralProfile::from_views(&views)?;
    let levels = build_levels(&profile, config.significance_ratio, config.levels)?;
    let schedule = ResolutionSchedule::build(&levels, config.total_iters, config.schedule)?;
    let budget = BudgetState::new(config.p_init, config.gamma, config.eta)?;
    warn_about(levels.warning, levels.max_factor());

    let mut csv = String::with_capacity(48 * (config.total_iters + 1));
    csv.push_str(SCHEDULE_HEADER);
    csv.push('\n');
    for (k, (&r, &f)) in schedule.continuous().iter().zip(schedule.floored()).enumerate() {
        let factor = match config.target_factor {
            TargetFactor::Floored => f64::from(f),
            TargetFactor::Continuous => r,
        };
        let p_target = primitive_target(k, factor, config.total_iters, config.p_init, budget.p_fin)?;
        writeln!(
            csv,
            "{k},{},{f},{p_target},{}",
            format_sig(r, 6),
            format_sig(budget.p_fin, 6)
        )
        .unwrap();
    }

    let mut sig = String::from(SIGNIFICANCE_HEADER);
    sig.push('\n');
    writeln!(sig, "1,{}", format_sig(levels.full, 6)).unwrap();
    for (&r, &x) in levels.factors.iter().zip(&levels.sigs) {
        writeln!(sig, "{},{}", format_sig(r, 6), format_sig(x, 6)).unwrap();
    }

    ensure_dir(out)?;
    write_atomic(&out.join("schedule.csv"), csv.as_bytes())?;
    write_atomic(&out.join("significance.csv"), sig.as_bytes())?;
    let manifest = RunManifest::new(Invocation::Analyze(config.clone()), None, inputs, out)?;
    write_json_atomic(&out.join(MANIFEST_FILE), &manifest)?;

    let switches: Vec<String> = schedule
        .floored_segments()
        .iter()
        .map(|(f, k)| format!("{f}@{k}"))
        .collect();
    println!(
        "r_m = {}  levels = {}  floored segments: {}",
        format_sig(levels.max_factor(), 6),
        schedule.levels().len(),
        switches.join(" ")
    );
    Ok(())
}

fn write_fit_outputs(dir: &Path, run: &TrainRun, target: &Image) -> Result<()> {
    ensure_dir(dir)?;
    let full = render(&run.model, target.width(), target.height());
    write_png_atomic(&dir.join("render.png"), &full)?;
    write_atomic(&dir.join("checkpoint.csv"), run.model.to_checkpoint_csv().as_bytes())?;
    write_atomic(&dir.join("metrics.csv"), run.metrics.to_csv().as_bytes())?;
    let mut summary = serde_json::to_string(&run.metrics.summary())?;
    summary.push('\n');
    write_atomic(&dir.join("summary.json"), summary.as_bytes())?;
    Ok(())
}

fn print_run(label: &str, run: &TrainRun) {
    let s = run.metrics.summary();
    println!(
        "{label}: psnr {:.3} dB, {} primitives, {} pixels rendered, {:.1} s",
        s.psnr_full,
        s.final_primitives,
        s.total_pixels,
        s.wall_ms / 1e3
    );
}

pub fn run_fit(input: &Path, config: &TrainConfig, seed: u64, out: &Path) -> Result<()> {
    let target = load_image(input)?;
    let run = train(&target, config, seed)?;
    if config.mode == SchedulerMode::Dash {
        warn_about(run.schedule.levels().warning, run.schedule.levels().max_factor());
    }
    write_fit_outputs(out, &run, &target)?;
    let manifest = RunManifest::new(Invocation::Fit(config.clone()), Some(seed), &[input.to_path_buf()], out)?;
    write_json_atomic(&out.join(MANIFEST_FILE), &manifest)?;
    print_run(&config.mode.to_string(), &run);
    Ok(())
}

/// Scheduled versus baseline fit; deltas are dash minus none, reductions are
/// relative to none.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub psnr_delta_db: f64,
    pub pixel_cost_reduction_pct: f64,
    pub pixel_primitive_cost_reduction_pct: f64,
    pub wall_time_reduction_pct: f64,
    pub dash: RunSummary,
    pub none: RunSummary,
}

impl CompareReport {
    pub fn new(dash: RunSummary, none: RunSummary) -> Self {
        let reduction = |d: f64, n: f64| if n > 0.0 { 100.0 * (1.0 - d / n) } else { 0.0 };
        CompareReport {
            psnr_delta_db: dash.psnr_full.min(PSNR_CAP) - none.psnr_full.min(PSNR_CAP),
            pixel_cost_reduction_pct: reduction(dash.total_pixels as f64, none.total_pixels as f64),
            pixel_primitive_cost_reduction_pct: reduction(
                dash.total_pixel_primitive_cost as f64,
                none.total_pixel_primitive_cost as f64,
            ),
            wall_time_reduction_pct: reduction(dash.wall_ms, none.wall_ms),
            dash,
            none,
        }
    }
}

pub fn run_compare(input: &Path, config: &TrainConfig, seed: u64, out: &Path) -> Result<()> {
    let target = load_image(input)?;
    let dash_config = TrainConfig {
        mode: SchedulerMode::Dash,
        ..config.clone()
    };
    let none_config = TrainConfig {
        mode: SchedulerMode::None,
        ..config.clone()
    };
    let (dash, none) = rayon::join(
        || train(&target, &dash_config, seed),
        || train(&target, &none_config, seed),
    );
    let (dash, none) = (dash?, none?);
    warn_about(dash.schedule.levels().warning, dash.schedule.levels().max_factor());
    write_fit_outputs(&out.join("dash"), &dash, &target)?;
    write_fit_outputs(&out.join("none"), &none, &target)?;
    let report = CompareReport::new(dash.metrics.summary(), none.metrics.summary());
    write_json_atomic(&out.join("compare.json"), &report)?;
    let manifest = RunManifest::new(
        Invocation::Compare(dash_config),
        Some(seed),
        &[input.to_path_buf()],
        out,
    )?;
    write_json_atomic(&out.join(MANIFEST_FILE), &manifest)?;
    print_run("dash", &dash);
    print_run("none", &none);
    println!(
        "psnr delta {:+.3} dB; change vs none: pixels {:+.1}%, pixel*primitives {:+.1}%, wall time {:+.1}%",
        report.psnr_delta_db,
        -report.pixel_cost_reduction_pct,
        -report.pixel_primitive_cost_reduction_pct,
        -report.wall_time_reduction_pct
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn summary(psnr: f64, pixels: u64, ppc: u64, wall: f64) -> RunSummary {
        RunSummary {
            psnr_full: psnr,
            total_pixels: pixels,
            total_pixel_primitive_cost: ppc,
            wall_ms: wall,
            final_primitives: 1,
        }
    }

    #[test]
    fn report_signs() {
        let r = CompareReport::new(summary(30.0, 60, 50, 40.0), summary(31.0, 100, 100, 80.0));
        assert_eq!(r.psnr_delta_db, -1.0);
        assert!((r.pixel_cost_reduction_pct - 40.0).abs() < 1e-12);
        assert!((r.pixel_primitive_cost_reduction_pct - 50.0).abs() < 1e-12);
        assert!((r.wall_time_reduction_pct - 50.0).abs() < 1e-12);
        let capped = CompareReport::new(summary(f64::INFINITY, 1, 1, 1.0), summary(f64::INFINITY, 1, 1, 1.0));
        assert_eq!(capped.psnr_delta_db, 0.0);
    }
}
