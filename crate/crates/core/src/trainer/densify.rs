use rand::Rng;

use crate::splat2d::{Gaussian2D, LossGrad, SplatModel};

/// Running mean of each primitive's positional-gradient magnitude over the
/// iterations in which it touched a pixel.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ScoreAccumulator {
    sums: Vec<f64>,
    counts: Vec<u32>,
}

impl ScoreAccumulator {
    pub fn new(primitives: usize) -> Self {
        ScoreAccumulator {
            sums: vec![0.0; primitives],
            counts: vec![0; primitives],
        }
    }

    pub fn len(&self) -> usize {
        self.sums.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sums.is_empty()
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn record(&mut self, grads: &LossGrad) {
        assert_eq!(grads.grads.len(), self.len(), "gradient does not match the accumulator");
        for i in 0..self.len() {
            if grads.visible[i] {
                self.sums[i] += grads.position_grad_norm(i);
                self.counts[i] += 1;
            }
        }
    }

    /// Mean magnitude per primitive; 0 for primitives never seen.
    pub fn scores(&self) -> Vec<f64> {
        self.sums
            .iter()
            .zip(&self.counts)
            .map(|(&s, &c)| if c == 0 { 0.0 } else { s / f64::from(c) })
            .collect()
    }

    /// Clears all statistics and resizes to `primitives`.
    pub fn reset(&mut self, primitives: usize) {
        *self = ScoreAccumulator::new(primitives);
    }
}

/// Thresholds for one densification event.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DensifyParams {
    /// Minimum score for a primitive to be densified.
    pub grad_threshold: f64,
    /// Primitives with mapped opacity below this are removed.
    pub prune_opacity: f64,
    /// Clone below this max scale (normalized units), split at or above.
    pub split_scale: f64,
}

/// Result of one densification event.
#[derive(Clone, Debug, PartialEq)]
pub struct DensifyOutcome {
    pub model: SplatModel,
    /// Old indices of the primitives carried over unchanged, in new order.
    /// They occupy the first `kept.len()` slots of `model`.
    pub kept: Vec<usize>,
    /// Primitives appended after the kept ones.
    pub appended: usize,
    /// Old indices of the densified primitives, ascending.
    pub selected: Vec<usize>,
    pub pruned: usize,
    pub cloned: usize,
    pub split: usize,
    /// Number of threshold-passing candidates before any top-k truncation.
    pub p_add: usize,
}

/// Divisor applied to both scales of a split primitive's children.
pub const SPLIT_SCALE_DIVISOR: f64 = 1.6;
/// Children sit this many standard deviations from the parent along its major axis.
pub const SPLIT_OFFSET_SIGMAS: f64 = 0.5;
/// Clone jitter as a fraction of the primitive's largest scale.
pub const CLONE_JITTER: f64 = 0.1;

/// Candidate indices ordered by score, highest first, ties by lower index.
/// Scores below `threshold` (and NaN) are excluded.
pub fn ranked_candidates(scores: &[f64], threshold: f64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).filter(|&i| scores[i] >= threshold).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx
}

/// Prune, then clone or split the best-scoring candidates.
///
/// With `p_target = Some(t)`, at most `t - N'` candidates are densified,
/// where `N'` is the count after pruning; `None` densifies every candidate.
/// Each densified primitive adds exactly one to the count.
pub fn densify(
    model: &SplatModel,
    scores: &[f64],
    p_target: Option<usize>,
    params: &DensifyParams,
    rng: &mut impl Rng,
) -> DensifyOutcome {
    assert_eq!(model.len(), scores.len(), "one score per primitive");
    let prims = model.primitives();
    let alive: Vec<usize> = (0..prims.len())
        .filter(|&i| prims[i].opacity() >= params.prune_opacity)
        .collect();
    let pruned = prims.len() - alive.len();

    let alive_scores: Vec<f64> = alive.iter().map(|&i| scores[i]).collect();
    let ranked = ranked_candidates(&alive_scores, params.grad_threshold);
    let p_add = ranked.len();
    let quota = match p_target {
        Some(t) => t.saturating_sub(alive.len()).min(ranked.len()),
        None => ranked.len(),
    };
    let mut selected = vec![false; alive.len()];
    for &slot in &ranked[..quota] {
        selected[slot] = true;
    }

    let mut kept = Vec::with_capacity(alive.len() + quota);
    let mut fresh = Vec::new();
    let mut chosen = Vec::with_capacity(quota);
    let (mut cloned, mut split) = (0, 0);
    for (slot, &i) in alive.iter().enumerate() {
        let g = &prims[i];
        if !selected[slot] {
            kept.push(i);
            continue;
        }
        chosen.push(i);
        if g.max_scale() < params.split_scale {
            kept.push(i);
            fresh.push(clone_of(g, rng));
            cloned += 1;
        } else {
            fresh.extend(split_of(g));
            split += 1;
        }
    }
    let appended = fresh.len();
    let primitives = kept.iter().map(|&i| prims[i]).chain(fresh).collect();
    DensifyOutcome {
        model: SplatModel::new(primitives),
        kept,
        appended,
        selected: chosen,
        pruned,
        cloned,
        split,
        p_add,
    }
}

fn clone_of(g: &Gaussian2D, rng: &mut impl Rng) -> Gaussian2D {
    let jitter = CLONE_JITTER * g.max_scale();
    Gaussian2D {
        pos: [
            g.pos[0] + jitter * rng.gen_range(-1.0..1.0),
            g.pos[1] + jitter * rng.gen_range(-1.0..1.0),
        ],
        ..*g
    }
}

fn split_of(g: &Gaussian2D) -> [Gaussian2D; 2] {
    let major = usize::from(g.log_scale[1] > g.log_scale[0]);
    let (s, c) = g.rotation.sin_cos();
    // Columns of the rotation matrix are the principal axes.
    let axis = if major == 0 { [c, s] } else { [-s, c] };
    let offset = SPLIT_OFFSET_SIGMAS * g.log_scale[major].exp();
    let log_div = SPLIT_SCALE_DIVISOR.ln();
    let child = |sign: f64| Gaussian2D {
        pos: [g.pos[0] + sign * offset * axis[0], g.pos[1] + sign * offset * axis[1]],
        log_scale: [g.log_scale[0] - log_div, g.log_scale[1] - log_div],
        ..*g
    };
    [child(1.0), child(-1.0)]
}
