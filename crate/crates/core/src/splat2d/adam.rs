use serde::{Deserialize, Serialize};

use super::model::{Gaussian2D, ParamVec, SplatModel, COLOR, LS0, LS1, OP, PARAMS, PX, PY, ROT};
use crate::error::{Error, Result};

/// Step sizes per parameter group.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearningRates {
    pub position: f64,
    pub log_scale: f64,
    pub rotation: f64,
    pub opacity: f64,
    pub color: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        LearningRates {
            position: 2e-3,
            log_scale: 2e-2,
            rotation: 2e-2,
            opacity: 5e-2,
            color: 2.5e-2,
        }
    }
}

impl LearningRates {
    fn per_param(&self, position: f64) -> ParamVec {
        let mut lr = [0.0; PARAMS];
        lr[PX] = position;
        lr[PY] = position;
        lr[LS0] = self.log_scale;
        lr[LS1] = self.log_scale;
        lr[ROT] = self.rotation;
        lr[OP] = self.opacity;
        lr[COLOR..].fill(self.color);
        lr
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Bias-corrected Adam moments, one row per primitive.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    config: AdamConfig,
    m: Vec<ParamVec>,
    v: Vec<ParamVec>,
    steps: u64,
}

impl AdamState {
    pub fn new(config: AdamConfig, primitives: usize) -> Self {
        AdamState {
            config,
            m: vec![[0.0; PARAMS]; primitives],
            v: vec![[0.0; PARAMS]; primitives],
            steps: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Applies one update. `position_lr` overrides `lrs.position`, which lets
    /// the caller run a decay schedule.
    pub fn step(
        &mut self,
        model: &mut SplatModel,
        grads: &[ParamVec],
        lrs: &LearningRates,
        position_lr: f64,
    ) -> Result<()> {
        if model.len() != self.len() || grads.len() != self.len() {
            return Err(Error::data(format!(
                "optimizer tracks {} primitives, model has {}, gradient has {}",
                self.len(),
                model.len(),
                grads.len()
            )));
        }
        let AdamConfig { beta1, beta2, epsilon } = self.config;
        self.steps += 1;
        let t = self.steps as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        let lr = lrs.per_param(position_lr);
        for (((g, m), v), prim) in grads
            .iter()
            .zip(&mut self.m)
            .zip(&mut self.v)
            .zip(model.primitives_mut())
        {
            let mut p = prim.params();
            for j in 0..PARAMS {
                m[j] = beta1 * m[j] + (1.0 - beta1) * g[j];
                v[j] = beta2 * v[j] + (1.0 - beta2) * g[j] * g[j];
                p[j] -= lr[j] * (m[j] / c1) / ((v[j] / c2).sqrt() + epsilon);
            }
            *prim = Gaussian2D::from_params(&p);
        }
        Ok(())
    }

    /// Rebuilds the moments after densification: the new primitive set is
    /// `kept` (old indices, in new order) followed by `appended` fresh rows.
    pub fn remap(&mut self, kept: &[usize], appended: usize) -> Result<()> {
        if let Some(&bad) = kept.iter().find(|&&i| i >= self.len()) {
            return Err(Error::data(format!("remap index {bad} out of {}", self.len())));
        }
        let pick = |rows: &[ParamVec]| {
            kept.iter()
                .map(|&i| rows[i])
                .chain(std::iter::repeat_n([0.0; PARAMS], appended))
                .collect::<Vec<_>>()
        };
        self.m = pick(&self.m);
        self.v = pick(&self.v);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::Image;
    use crate::splat2d::model::init_from_image;
    use crate::splat2d::render::render_loss_grad;

    fn one() -> SplatModel {
        SplatModel::new(vec![Gaussian2D {
            pos: [0.5, 0.5],
            log_scale: [-2.0, -2.0],
            rotation: 0.0,
            opacity_raw: 0.0,
            color_raw: [0.0; 3],
        }])
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut model = one();
        let before = model.clone();
        let mut adam = AdamState::new(AdamConfig::default(), 1);
        adam.step(&mut model, &[[0.0; PARAMS]], &LearningRates::default(), 1e-3)
            .unwrap();
        assert_eq!(model, before);
    }

    #[test]
    fn first_step_moves_by_the_learning_rate() {
        let mut model = one();
        let mut adam = AdamState::new(AdamConfig::default(), 1);
        let lrs = LearningRates {
            color: 0.1,
            ..LearningRates::default()
        };
        let mut g = [0.0; PARAMS];
        g[COLOR] = 3.7;
        g[COLOR + 1] = -0.02;
        adam.step(&mut model, &[g], &lrs, 1e-3).unwrap();
        let c = model.primitives()[0].color_raw;
        assert!((c[0] + 0.1).abs() < 1e-6);
        assert!((c[1] - 0.1).abs() < 1e-5);
        assert_eq!(c[2], 0.0);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut model = one();
        let mut adam = AdamState::new(AdamConfig::default(), 2);
        assert!(adam
            .step(&mut model, &[[0.0; PARAMS]], &LearningRates::default(), 1e-3)
            .is_err());
        assert!(adam.remap(&[0, 2], 0).is_err());
    }

    #[test]
    fn remap_keeps_rows_and_zeroes_new_ones() {
        let mut model = SplatModel::new(vec![one().primitives()[0]; 3]);
        let mut adam = AdamState::new(AdamConfig::default(), 3);
        let grads: Vec<ParamVec> = (0..3).map(|i| [i as f64 + 1.0; PARAMS]).collect();
        adam.step(&mut model, &grads, &LearningRates::default(), 1e-3).unwrap();
        let old = adam.clone();
        adam.remap(&[2, 0], 2).unwrap();
        assert_eq!(adam.len(), 4);
        assert_eq!(adam.m[0], old.m[2]);
        assert_eq!(adam.v[1], old.v[0]);
        assert_eq!(adam.m[3], [0.0; PARAMS]);
        assert_eq!(adam.steps(), 1);
    }

    #[test]
    fn fits_a_flat_color() {
        let target = Image::filled(16, 16, 3, 0.7).unwrap();
        let mut model = init_from_image(&Image::filled(16, 16, 3, 0.2).unwrap(), 16, 0).unwrap();
        let mut adam = AdamState::new(AdamConfig::default(), model.len());
        let lrs = LearningRates::default();
        let mut losses = Vec::new();
        for _ in 0..100 {
            let lg = render_loss_grad(&model, &target, 16, 16).unwrap();
            losses.push(lg.loss);
            adam.step(&mut model, &lg.grads, &lrs, lrs.position).unwrap();
        }
        let windows: Vec<f64> = losses.chunks(10).map(|w| w.iter().sum::<f64>() / 10.0).collect();
        for pair in windows.windows(2) {
            assert!(pair[1] <= pair[0] + 1e-12, "{windows:?}");
        }
        assert!(windows[9] < 0.5 * windows[0], "{windows:?}");
    }
}
