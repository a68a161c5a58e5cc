//! Image-fitting loop that drives the 2D backbone with the schedules.
//!
//! In `dash` mode each iteration renders at the floored scheduled factor
//! against a cached anti-aliased ground-truth level, and densification events
//! grow the model only up to the scheduled primitive target, feeding the
//! observed demand back into the momentum budget. `none` mode renders at full
//! resolution throughout and densifies every candidate.

mod densify;
mod metrics;

use std::collections::btree_map::Entry;
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use self::densify::{
    densify, ranked_candidates, DensifyOutcome, DensifyParams, ScoreAccumulator, CLONE_JITTER, SPLIT_OFFSET_SIGMAS,
    SPLIT_SCALE_DIVISOR,
};
pub use self::metrics::{psnr, IterRecord, RunMetrics, RunSummary, METRICS_HEADER, PSNR_CAP};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::schedule::{
    build_levels, primitive_target, BudgetState, ResolutionSchedule, ScheduleOptions, DEFAULT_ETA, DEFAULT_GAMMA,
    DEFAULT_LEVELS, DEFAULT_SIGNIFICANCE_RATIO,
};
use crate::spectra::{antialias_downsample, target_extent, SpectralProfile};
use crate::splat2d::{init_from_image, render, render_loss_grad, AdamConfig, AdamState, LearningRates, SplatModel};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SchedulerMode {
    /// Scheduled resolution and primitive growth.
    #[default]
    Dash,
    /// Full resolution and unconstrained densification.
    None,
}

impl fmt::Display for SchedulerMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SchedulerMode::Dash => "dash",
            SchedulerMode::None => "none",
        })
    }
}

impl FromStr for SchedulerMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dash" => Ok(SchedulerMode::Dash),
            "none" => Ok(SchedulerMode::None),
            other => Err(Error::arg(format!(
                "unknown scheduler mode {other:?} (expected dash or none)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub total_iters: usize,
    pub densify_interval: usize,
    pub densify_start: usize,
    pub densify_stop: usize,
    pub grad_threshold: f64,
    pub prune_opacity: f64,
    /// Clone/split boundary as a fraction of the (unit) image extent.
    pub split_scale_threshold: f64,
    pub lr: LearningRates,
    /// Positional learning rate reached at the last iteration.
    pub position_lr_final: f64,
    pub adam: AdamConfig,
    pub mode: SchedulerMode,
    pub significance_ratio: f64,
    pub levels: usize,
    pub gamma: f64,
    pub eta: f64,
    pub p_init: usize,
    pub schedule: ScheduleOptions,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig::with_iters(2000)
    }
}

impl TrainConfig {
    /// Defaults for a run of `total_iters`, densifying until 80% of it.
    pub fn with_iters(total_iters: usize) -> Self {
        TrainConfig {
            total_iters,
            densify_interval: 100,
            densify_start: 100,
            densify_stop: total_iters * 4 / 5,
            grad_threshold: 2e-3,
            prune_opacity: 0.005,
            split_scale_threshold: 0.01,
            lr: LearningRates::default(),
            position_lr_final: 2e-5,
            adam: AdamConfig::default(),
            mode: SchedulerMode::Dash,
            significance_ratio: DEFAULT_SIGNIFICANCE_RATIO,
            levels: DEFAULT_LEVELS,
            gamma: DEFAULT_GAMMA,
            eta: DEFAULT_ETA,
            p_init: 200,
            schedule: ScheduleOptions::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::arg(msg));
        if self.total_iters == 0 {
            return fail("total_iters must be at least 1".into());
        }
        if self.densify_interval == 0 {
            return fail("densify_interval must be at least 1".into());
        }
        if self.densify_stop > self.total_iters {
            return fail(format!(
                "densify_stop {} exceeds total_iters {}",
                self.densify_stop, self.total_iters
            ));
        }
        if !(self.prune_opacity > 0.0 && self.prune_opacity < 1.0) {
            return fail(format!("prune_opacity {} must lie in (0, 1)", self.prune_opacity));
        }
        if !(self.grad_threshold >= 0.0) {
            return fail(format!("grad_threshold {} must be >= 0", self.grad_threshold));
        }
        if !(self.split_scale_threshold >= 0.0 && self.split_scale_threshold.is_finite()) {
            return fail(format!(
                "split_scale_threshold {} must be >= 0",
                self.split_scale_threshold
            ));
        }
        let lr = &self.lr;
        for (name, v) in [
            ("lr.position", lr.position),
            ("lr.log_scale", lr.log_scale),
            ("lr.rotation", lr.rotation),
            ("lr.opacity", lr.opacity),
            ("lr.color", lr.color),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return fail(format!("{name} = {v} must be finite and >= 0"));
            }
        }
        if !(self.position_lr_final > 0.0 && self.position_lr_final.is_finite()) || !(lr.position > 0.0) {
            return fail("positional learning rates must be positive for the log-linear decay".into());
        }
        let AdamConfig { beta1, beta2, epsilon } = self.adam;
        if !((0.0..1.0).contains(&beta1) && (0.0..1.0).contains(&beta2) && epsilon > 0.0) {
            return fail(format!("invalid Adam constants {:?}", self.adam));
        }
        if self.p_init == 0 {
            return fail("p_init must be at least 1".into());
        }
        if !(self.significance_ratio > 1.0 && self.significance_ratio.is_finite()) {
            return fail(format!("significance ratio {} must be > 1", self.significance_ratio));
        }
        if self.levels == 0 {
            return fail("levels must be at least 1".into());
        }
        BudgetState::new(self.p_init, self.gamma, self.eta).map(|_| ())
    }

    fn densify_params(&self) -> DensifyParams {
        DensifyParams {
            grad_threshold: self.grad_threshold,
            prune_opacity: self.prune_opacity,
            split_scale: self.split_scale_threshold,
        }
    }

    /// Whether a densification event follows the optimizer step of iteration `k`.
    pub fn is_densify_event(&self, k: usize) -> bool {
        k >= self.densify_start && k <= self.densify_stop && k.is_multiple_of(self.densify_interval)
    }
}

/// Resolution schedule for `target` under `config`; full resolution in `none` mode.
pub fn build_schedule(target: &Image, config: &TrainConfig) -> Result<ResolutionSchedule> {
    match config.mode {
        SchedulerMode::None => Ok(ResolutionSchedule::full_resolution(config.total_iters)),
        SchedulerMode::Dash => {
            let profile = SpectralProfile::from_views(std::slice::from_ref(target))?;
            let levels = build_levels(&profile, config.significance_ratio, config.levels)?;
            ResolutionSchedule::build(&levels, config.total_iters, config.schedule)
        }
    }
}

/// Holds `lr0` before `k_star`, then decays log-linearly to `lr_final` at `total_iters`.
pub fn positional_lr(k: usize, k_star: usize, total_iters: usize, lr0: f64, lr_final: f64) -> f64 {
    if k < k_star {
        lr0
    } else if k >= total_iters {
        lr_final
    } else {
        let t = (k - k_star) as f64 / (total_iters - k_star) as f64;
        lr0 * (lr_final / lr0).powf(t)
    }
}

/// Anti-aliased ground truth at each factor, computed once. Factor 1 is `target`.
pub fn gt_pyramid(target: &Image, factors: &[u32]) -> Result<BTreeMap<u32, Image>> {
    let mut out = BTreeMap::new();
    for &f in factors {
        if f == 0 {
            return Err(Error::arg("pyramid factor 0"));
        }
        if let Entry::Vacant(slot) = out.entry(f) {
            slot.insert(antialias_downsample(target, f64::from(f))?);
        }
    }
    Ok(out)
}

/// Summary of one densification event.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DensifyEvent {
    pub iter: usize,
    pub before: usize,
    pub after: usize,
    pub pruned: usize,
    pub p_target: Option<usize>,
    pub p_add: usize,
    /// Budget after this event's update (`None` mode keeps no budget).
    pub p_fin: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainRun {
    pub model: SplatModel,
    pub metrics: RunMetrics,
    pub schedule: ResolutionSchedule,
    pub events: Vec<DensifyEvent>,
}

/// Fits `target` from a seeded initialization.
pub fn train(target: &Image, config: &TrainConfig, seed: u64) -> Result<TrainRun> {
    config.validate()?;
    if !target.is_finite() {
        return Err(Error::data("target contains non-finite pixels"));
    }
    let start = Instant::now();
    let target = target.to_rgb();
    let (h, w) = (target.height(), target.width());
    let s = config.total_iters;
    let schedule = build_schedule(&target, config)?;
    let factors: Vec<u32> = schedule.floored_segments().iter().map(|&(f, _)| f).collect();
    let pyramid = gt_pyramid(&target, &factors)?;
    let k_star = match config.mode {
        SchedulerMode::Dash => schedule.first_full_resolution_iter(),
        SchedulerMode::None => 0,
    };

    let mut model = init_from_image(&target, config.p_init, seed)?;
    let mut adam = AdamState::new(config.adam, model.len());
    let mut scores = ScoreAccumulator::new(model.len());
    let mut budget = BudgetState::new(config.p_init, config.gamma, config.eta)?;
    let mut jitter = ChaCha8Rng::seed_from_u64(seed);
    jitter.set_stream(1);
    let params = config.densify_params();

    let mut metrics = RunMetrics::default();
    let mut events = Vec::new();
    for k in 0..s {
        let f = schedule.floored_at(k)?;
        let gt = &pyramid[&f];
        let (rh, rw) = (gt.height(), gt.width());
        debug_assert_eq!(
            (rh, rw),
            (target_extent(h, f64::from(f)), target_extent(w, f64::from(f)))
        );
        let lg = render_loss_grad(&model, gt, rw, rh)?;
        if !lg.loss.is_finite() || lg.grads.iter().flatten().any(|g| !g.is_finite()) {
            return Err(Error::Numerical(format!(
                "non-finite loss or gradient at iteration {k}"
            )));
        }
        metrics.push(IterRecord {
            iter: k,
            r_floored: f,
            n_primitives: model.len(),
            pixels: rh * rw,
            loss: lg.loss,
        });
        scores.record(&lg);
        let lr_pos = positional_lr(k, k_star, s, config.lr.position, config.position_lr_final);
        adam.step(&mut model, &lg.grads, &config.lr, lr_pos)?;

        if config.is_densify_event(k) {
            let p_target = match config.mode {
                SchedulerMode::Dash => Some(primitive_target(k, f64::from(f), s, config.p_init, budget.p_fin)?),
                SchedulerMode::None => None,
            };
            let before = model.len();
            let out = densify(&model, &scores.scores(), p_target, &params, &mut jitter);
            adam.remap(&out.kept, out.appended)?;
            model = out.model;
            scores.reset(model.len());
            let p_fin = match config.mode {
                SchedulerMode::Dash => {
                    budget.update(out.p_add);
                    Some(budget.p_fin)
                }
                SchedulerMode::None => None,
            };
            events.push(DensifyEvent {
                iter: k,
                before,
                after: model.len(),
                pruned: out.pruned,
                p_target,
                p_add: out.p_add,
                p_fin,
            });
        }
    }

    let final_render = render(&model, w, h);
    metrics.psnr_full = psnr(&final_render, &target)?;
    metrics.final_primitives = model.len();
    metrics.wall_ms = start.elapsed().as_secs_f64() * 1e3;
    Ok(TrainRun {
        model,
        metrics,
        schedule,
        events,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn texture(n: usize) -> Image {
        Image::from_fn(n, n, 3, |y, x, c| {
            let (u, v) = (x as f64 / n as f64, y as f64 / n as f64);
            0.5 + 0.3 * (7.0 * u + 3.0 * v + c as f64).sin() * (11.0 * v).cos() + 0.15 * (23.0 * u * v).sin()
        })
        .unwrap()
        .clamped()
    }

    #[test]
    fn single_iteration_run() {
        let config = TrainConfig {
            mode: SchedulerMode::None,
            p_init: 1,
            ..TrainConfig::with_iters(1)
        };
        let run = train(&texture(16), &config, 0).unwrap();
        assert_eq!(run.metrics.records.len(), 1);
        assert_eq!(run.model.len(), 1);
        assert!(run.events.is_empty());
    }

    #[test]
    fn config_validation() {
        let ok = TrainConfig::default();
        assert!(ok.validate().is_ok());
        assert_eq!(ok.densify_stop, 1600);
        for bad in [
            TrainConfig {
                densify_interval: 0,
                ..ok.clone()
            },
            TrainConfig {
                prune_opacity: 1.0,
                ..ok.clone()
            },
            TrainConfig {
                prune_opacity: 0.0,
                ..ok.clone()
            },
            TrainConfig {
                densify_stop: 2001,
                ..ok.clone()
            },
            TrainConfig {
                gamma: 1.0,
                ..ok.clone()
            },
            TrainConfig {
                total_iters: 0,
                densify_stop: 0,
                ..ok.clone()
            },
        ] {
            assert!(bad.validate().is_err(), "{bad:?}");
        }
    }

    #[test]
    fn mode_parses_and_prints() {
        assert_eq!("dash".parse::<SchedulerMode>().unwrap(), SchedulerMode::Dash);
        assert_eq!(SchedulerMode::None.to_string(), "none");
        assert!("fast".parse::<SchedulerMode>().is_err());
    }

    #[test]
    fn positional_lr_holds_then_decays() {
        assert_eq!(positional_lr(0, 300, 1000, 1e-2, 1e-4), 1e-2);
        assert_eq!(positional_lr(299, 300, 1000, 1e-2, 1e-4), 1e-2);
        assert_eq!(positional_lr(300, 300, 1000, 1e-2, 1e-4), 1e-2);
        assert_eq!(positional_lr(1000, 300, 1000, 1e-2, 1e-4), 1e-4);
        assert!((positional_lr(650, 300, 1000, 1e-2, 1e-4) - 1e-3).abs() < 1e-15);
        for k_star in [0, 1, 500, 999] {
            let lrs: Vec<f64> = (0..=1000).map(|k| positional_lr(k, k_star, 1000, 3e-3, 2e-5)).collect();
            assert!(lrs.windows(2).all(|p| p[1] <= p[0]));
        }
    }

    #[test]
    fn pyramid_levels_are_cached_downsamples() {
        let target = texture(32);
        let pyr = gt_pyramid(&target, &[3, 2, 3, 1]).unwrap();
        assert_eq!(pyr.len(), 3);
        assert_eq!(pyr[&1], target);
        assert_eq!(pyr[&2], antialias_downsample(&target, 2.0).unwrap());
        assert_eq!(pyr[&3], antialias_downsample(&target, 3.0).unwrap());
        let flat = Image::filled(32, 32, 3, 0.4).unwrap();
        for img in gt_pyramid(&flat, &[1, 2, 4]).unwrap().values() {
            assert!(img.data().iter().all(|&v| (v - 0.4).abs() < 1e-12));
        }
    }
}
