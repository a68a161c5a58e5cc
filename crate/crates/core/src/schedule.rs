//! Rendering-resolution and primitive-growth schedules.
//!
//! A [`LevelSet`] holds downsampling factors `r_m > ... > r_1 > 1` whose
//! spectral content is spread linearly between the full-resolution content
//! and `1/a` of it. [`switch_iterations`] distributes the iteration budget
//! among them, [`ResolutionSchedule`] interpolates a per-iteration factor
//! curve, and [`primitive_target`] / [`BudgetState`] derive the primitive
//! count each densification event may grow to.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectra::SpectralProfile;

pub const DEFAULT_SIGNIFICANCE_RATIO: f64 = 4.0;
pub const DEFAULT_LEVELS: usize = 8;
pub const DEFAULT_GAMMA: f64 = 0.98;
pub const DEFAULT_ETA: f64 = 1.0;
/// Initial budget as a multiple of the initial primitive count.
pub const INITIAL_BUDGET_MULTIPLE: f64 = 5.0;
/// Factors are capped so the rendered extent never drops below this.
pub const MIN_RENDER_EXTENT: usize = 8;
/// Relative tolerance the factor solver aims for on a continuous curve.
pub const SOLVER_REL_TOL: f64 = 1e-3;

const BISECTION_STEPS: usize = 200;

/// How the iteration share of each level is derived from its content.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FractionRule {
    /// `ln`-modulated share; the schedule used by default.
    #[default]
    Log,
    /// Plain content ratio, kept for ablations.
    Linear,
}

/// Where the last interpolation segment reaches factor 1.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FinalAnchor {
    /// Interpolate from `r_1` at `s_{r_1}` toward 1 at the last iteration.
    #[default]
    TotalIters,
    /// Reach 1 already at `s_{r_1}` and stay there.
    FirstSwitch,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FactorWarning {
    /// The views are too small for any factor above 1.
    TooSmall,
    /// Even the largest admissible factor keeps more than `1/a` of the content.
    TargetUnreachable,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MaxFactor {
    pub factor: f64,
    /// Content measured at `factor`.
    pub significance: f64,
    pub warning: Option<FactorWarning>,
}

/// Largest factor whose render extent stays at or above [`MIN_RENDER_EXTENT`].
pub fn factor_cap(height: usize, width: usize) -> f64 {
    height.min(width) as f64 / MIN_RENDER_EXTENT as f64
}

/// Finds `r` in `[lo, hi]` minimizing `|curve(r) - target|` for a
/// non-increasing `curve` with `curve(lo) > target`. The curve may be
/// piecewise constant, in which case the result sits on the jump that
/// straddles the target, on whichever side is closer.
pub fn solve_factor(curve: impl Fn(f64) -> f64, target: f64, lo: f64, hi: f64) -> f64 {
    let (mut lo, mut hi) = (lo, hi);
    let mut hi_val = curve(hi);
    if hi_val > target {
        return hi;
    }
    let mut lo_val = curve(lo);
    if lo_val <= target {
        return lo;
    }
    for _ in 0..BISECTION_STEPS {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let v = curve(mid);
        if (v - target).abs() <= 1e-12 * target.abs() {
            return mid;
        }
        if v > target {
            lo = mid;
            lo_val = v;
        } else {
            hi = mid;
            hi_val = v;
        }
    }
    if (lo_val - target).abs() < (hi_val - target).abs() {
        lo
    } else {
        hi
    }
}

/// Solves for the factor whose surviving content is `1/a` of the full content.
pub fn solve_max_factor(profile: &SpectralProfile, a: f64) -> Result<MaxFactor> {
    if !(a > 1.0) || !a.is_finite() {
        return Err(Error::arg(format!("significance ratio a = {a} must be > 1")));
    }
    let full = profile.full_energy();
    let cap = factor_cap(profile.height(), profile.width());
    if cap <= 1.0 {
        return Ok(MaxFactor {
            factor: 1.0,
            significance: full,
            warning: Some(FactorWarning::TooSmall),
        });
    }
    let target = full / a;
    let factor = solve_factor(|r| profile.band_energy(r), target, 1.0, cap);
    let significance = profile.band_energy(factor);
    let warning =
        (factor == cap && significance > target * (1.0 + SOLVER_REL_TOL)).then_some(FactorWarning::TargetUnreachable);
    Ok(MaxFactor {
        factor,
        significance,
        warning,
    })
}

/// Downsampling levels and their measured content.
///
/// `factors[i]` is `r_{i+1}`, so factors ascend and `sigs` descend; the last
/// entry is the maximal factor `r_m`.
#[derive(Clone, Debug, PartialEq)]
pub struct LevelSet {
    pub a: f64,
    /// Content at factor 1.
    pub full: f64,
    pub factors: Vec<f64>,
    pub sigs: Vec<f64>,
    /// The content each level was solved for.
    pub targets: Vec<f64>,
    pub warning: Option<FactorWarning>,
}

impl LevelSet {
    pub fn len(&self) -> usize {
        self.factors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.factors.is_empty()
    }

    pub fn max_factor(&self) -> f64 {
        *self.factors.last().expect("level set is never empty")
    }

    /// Drops levels that do not strictly reduce the content relative to the
    /// next smaller factor (duplicates from a piecewise-constant content
    /// curve), keeping `r_m`.
    pub fn strictly_decreasing(&self) -> LevelSet {
        let mut keep = vec![self.len() - 1];
        for i in (0..self.len() - 1).rev() {
            let last = *keep.last().unwrap();
            if self.sigs[i] > self.sigs[last] && self.sigs[i] < self.full && self.factors[i] < self.factors[last] {
                keep.push(i);
            }
        }
        keep.reverse();
        LevelSet {
            a: self.a,
            full: self.full,
            factors: keep.iter().map(|&i| self.factors[i]).collect(),
            sigs: keep.iter().map(|&i| self.sigs[i]).collect(),
            targets: keep.iter().map(|&i| self.targets[i]).collect(),
            warning: self.warning,
        }
    }
}

/// Solves `m` levels: level `i` targets `full - (i/m) (full - sig_m)`.
pub fn build_levels(profile: &SpectralProfile, a: f64, m: usize) -> Result<LevelSet> {
    if m == 0 {
        return Err(Error::arg("level count must be at least 1"));
    }
    let max = solve_max_factor(profile, a)?;
    if max.factor <= 1.0 {
        return Err(Error::data(format!(
            "{}x{} views admit no downsampling factor above 1",
            profile.height(),
            profile.width()
        )));
    }
    let full = profile.full_energy();
    let span = full - max.significance;
    let mut factors = Vec::with_capacity(m);
    let mut sigs = Vec::with_capacity(m);
    let mut targets = Vec::with_capacity(m);
    for i in 1..m {
        let target = full - (i as f64 / m as f64) * span;
        let r = solve_factor(|r| profile.band_energy(r), target, 1.0, max.factor);
        factors.push(r);
        sigs.push(profile.band_energy(r));
        targets.push(target);
    }
    factors.push(max.factor);
    sigs.push(max.significance);
    targets.push(max.significance);
    Ok(LevelSet {
        a,
        full,
        factors,
        sigs,
        targets,
        warning: max.warning,
    })
}

/// Share of iterations owed to content absent at the lower resolution.
pub fn fraction_linear(x_full: f64, x_r: f64) -> Result<f64> {
    if !(x_r > 0.0) || !(x_full > 0.0) || x_r > x_full {
        return Err(Error::arg(format!(
            "fraction needs 0 < x_r <= x_full, got x_r = {x_r}, x_full = {x_full}"
        )));
    }
    Ok((x_full - x_r) / x_full)
}

/// Log-modulated share for level content `x_ri` relative to the coarsest
/// level content `x_rm`.
pub fn fraction_log(x_full: f64, x_rm: f64, x_ri: f64) -> Result<f64> {
    if !(x_rm > 0.0) || !(x_ri > 0.0) || !(x_full > x_rm) {
        return Err(Error::arg(format!(
            "log fraction needs x_full > x_rm > 0 and x_ri > 0, got {x_full}, {x_rm}, {x_ri}"
        )));
    }
    Ok((x_full / x_ri).ln() / (x_full / x_rm).ln())
}

/// Iteration at which rendering leaves each level, in `levels.factors` order.
/// The coarsest level starts at 0; results stay real-valued.
pub fn switch_iterations(levels: &LevelSet, total_iters: usize, rule: FractionRule) -> Result<Vec<f64>> {
    let m = levels.len();
    if m == 0 {
        return Err(Error::arg("empty level set"));
    }
    if total_iters < m {
        return Err(Error::arg(format!("{total_iters} iterations cannot hold {m} levels")));
    }
    if levels.sigs.iter().any(|&s| !(s > 0.0)) || !(levels.full > 0.0) {
        return Err(Error::arg("level content must be positive"));
    }
    if levels.sigs.windows(2).any(|w| !(w[0] > w[1])) {
        return Err(Error::arg("level content must strictly decrease with the factor"));
    }
    let s = total_iters as f64;
    let x_rm = levels.sigs[m - 1];
    let mut out = Vec::with_capacity(m);
    for (i, &x) in levels.sigs.iter().enumerate() {
        if i == m - 1 {
            out.push(0.0);
            continue;
        }
        let f = match rule {
            FractionRule::Log => fraction_log(levels.full, x_rm, x)?,
            FractionRule::Linear => fraction_linear(levels.full, x)?,
        };
        out.push(s * (1.0 - f));
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleOptions {
    pub fraction: FractionRule,
    pub anchor: FinalAnchor,
}

impl Default for ScheduleOptions {
    fn default() -> Self {
        ScheduleOptions {
            fraction: FractionRule::Log,
            anchor: FinalAnchor::TotalIters,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Knot {
    iter: f64,
    factor: f64,
}

/// Per-iteration rendering factors for a run of `total_iters` iterations.
#[derive(Clone, Debug, PartialEq)]
pub struct ResolutionSchedule {
    total_iters: usize,
    levels: LevelSet,
    switch_iters: Vec<f64>,
    knots: Vec<Knot>,
    continuous: Vec<f64>,
    floored: Vec<u32>,
}

impl ResolutionSchedule {
    pub fn build(levels: &LevelSet, total_iters: usize, options: ScheduleOptions) -> Result<Self> {
        if total_iters == 0 {
            return Err(Error::arg("schedule needs at least one iteration"));
        }
        if levels.is_empty() {
            return Err(Error::arg("empty level set"));
        }
        let levels = levels.strictly_decreasing();
        let switch_iters = switch_iterations(&levels, total_iters, options.fraction)?;
        let s = total_iters as f64;

        // Knots run from the coarsest level at iteration 0 toward factor 1.
        let mut knots: Vec<Knot> = (0..levels.len())
            .rev()
            .map(|i| Knot {
                iter: switch_iters[i],
                factor: levels.factors[i],
            })
            .collect();
        match options.anchor {
            FinalAnchor::TotalIters => knots.push(Knot { iter: s, factor: 1.0 }),
            FinalAnchor::FirstSwitch => {
                if knots.len() > 1 {
                    let last = knots.last_mut().unwrap();
                    last.factor = 1.0;
                }
                knots.push(Knot { iter: s, factor: 1.0 });
            }
        }
        knots.dedup_by(|b, a| b.iter <= a.iter);

        let continuous: Vec<f64> = (0..total_iters).map(|k| interpolate(&knots, k as f64)).collect();
        let mut floored: Vec<u32> = continuous.iter().map(|&r| r.floor() as u32).collect();
        // The final iteration always renders at full resolution.
        *floored.last_mut().unwrap() = 1;
        Ok(ResolutionSchedule {
            total_iters,
            levels,
            switch_iters,
            knots,
            continuous,
            floored,
        })
    }

    /// Full resolution at every iteration (the unscheduled baseline).
    pub fn full_resolution(total_iters: usize) -> Self {
        ResolutionSchedule {
            total_iters,
            levels: LevelSet {
                a: 1.0,
                full: 0.0,
                factors: vec![],
                sigs: vec![],
                targets: vec![],
                warning: None,
            },
            switch_iters: vec![],
            knots: vec![],
            continuous: vec![1.0; total_iters],
            floored: vec![1; total_iters],
        }
    }

    pub fn total_iters(&self) -> usize {
        self.total_iters
    }

    /// Levels the curve was built from, after dropping duplicates.
    pub fn levels(&self) -> &LevelSet {
        &self.levels
    }

    /// Switch iteration per level, in `levels().factors` order.
    pub fn switch_iters(&self) -> &[f64] {
        &self.switch_iters
    }

    pub fn continuous(&self) -> &[f64] {
        &self.continuous
    }

    pub fn floored(&self) -> &[u32] {
        &self.floored
    }

    /// Continuous factor at iteration `k`.
    pub fn resolution_at(&self, k: usize) -> Result<f64> {
        self.continuous
            .get(k)
            .copied()
            .ok_or_else(|| Error::arg(format!("iteration {k} outside [0, {})", self.total_iters)))
    }

    pub fn floored_at(&self, k: usize) -> Result<u32> {
        self.floored
            .get(k)
            .copied()
            .ok_or_else(|| Error::arg(format!("iteration {k} outside [0, {})", self.total_iters)))
    }

    /// First iteration rendered at full resolution.
    pub fn first_full_resolution_iter(&self) -> usize {
        self.floored.iter().position(|&f| f == 1).unwrap_or(self.total_iters)
    }

    /// Distinct floored factors in the order they are rendered, each with the
    /// first iteration it applies to.
    pub fn floored_segments(&self) -> Vec<(u32, usize)> {
        let mut out: Vec<(u32, usize)> = Vec::new();
        for (k, &f) in self.floored.iter().enumerate() {
            if out.last().is_none_or(|&(g, _)| g != f) {
                out.push((f, k));
            }
        }
        out
    }

    /// First iteration rendered with a floored factor below `factor`
    /// (0 when the schedule never renders that coarse).
    pub fn leave_iter(&self, factor: u32) -> usize {
        self.floored
            .iter()
            .position(|&f| f < factor)
            .unwrap_or(self.total_iters)
    }
}

/// Inverse-square interpolation between knots; factor 1 past the last knot.
fn interpolate(knots: &[Knot], k: f64) -> f64 {
    let Some(first) = knots.first() else {
        return 1.0;
    };
    if k <= first.iter {
        return first.factor;
    }
    for pair in knots.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        if k < b.iter {
            let u = (k - a.iter) / (b.iter - a.iter);
            if u == 0.0 {
                return a.factor;
            }
            let inv = (1.0 - u) / (a.factor * a.factor) + u / (b.factor * b.factor);
            return 1.0 / inv.sqrt();
        }
    }
    knots.last().unwrap().factor
}

/// `floor(r)` for `r >= 1`.
pub fn floored_resolution(r: f64) -> Result<u32> {
    if !(r >= 1.0) || !r.is_finite() {
        return Err(Error::arg(format!("factor {r} must be >= 1")));
    }
    Ok(r.floor() as u32)
}

/// Primitive count allowed at iteration `i` when rendering at factor `r`:
/// `p_init + (p_fin - p_init) / r^(2 - i/S)`, rounded to the nearest integer.
pub fn primitive_target(i: usize, r: f64, total_iters: usize, p_init: usize, p_fin: f64) -> Result<usize> {
    if total_iters == 0 || i > total_iters {
        return Err(Error::arg(format!("iteration {i} outside [0, {total_iters}]")));
    }
    if !(r >= 1.0) || !r.is_finite() {
        return Err(Error::arg(format!("factor {r} must be >= 1")));
    }
    if p_init == 0 || !(p_fin >= p_init as f64) {
        return Err(Error::arg(format!(
            "budget {p_fin} must be at least the initial count {p_init} >= 1"
        )));
    }
    let power = 2.0 - i as f64 / total_iters as f64;
    let p_init = p_init as f64;
    Ok((p_init + (p_fin - p_init) / r.powf(power)).round() as usize)
}

/// Momentum estimate of the final primitive count.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BudgetState {
    pub gamma: f64,
    pub eta: f64,
    pub p_fin: f64,
    pub p_init: usize,
}

impl BudgetState {
    /// Starts at `5 * p_init`.
    pub fn new(p_init: usize, gamma: f64, eta: f64) -> Result<Self> {
        check_gamma_eta(gamma, eta)?;
        if p_init == 0 {
            return Err(Error::arg("initial primitive count must be at least 1"));
        }
        Ok(BudgetState {
            gamma,
            eta,
            p_fin: INITIAL_BUDGET_MULTIPLE * p_init as f64,
            p_init,
        })
    }

    /// `p_fin <- max(p_fin, gamma * p_fin + eta * p_add)`.
    pub fn update(&mut self, p_add: usize) {
        let candidate = self.gamma * self.p_fin + self.eta * p_add as f64;
        self.p_fin = self.p_fin.max(candidate);
    }
}

pub fn budget_update(state: BudgetState, p_add: usize) -> BudgetState {
    let mut next = state;
    next.update(p_add);
    next
}

/// Fixed point of the budget update under a constant `p_add`.
pub fn steady_state_budget(gamma: f64, eta: f64, p_add: f64) -> Result<f64> {
    check_gamma_eta(gamma, eta)?;
    Ok(eta / (1.0 - gamma) * p_add)
}

fn check_gamma_eta(gamma: f64, eta: f64) -> Result<()> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::arg(format!("gamma = {gamma} must lie in (0, 1)")));
    }
    if !(eta > 0.0) || !eta.is_finite() {
        return Err(Error::arg(format!("eta = {eta} must be positive")));
    }
    Ok(())
}
