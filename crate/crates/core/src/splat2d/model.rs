use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::format::format_sig;
use crate::image::Image;

/// Parameters per primitive, in checkpoint column order:
/// `px, py, ls0, ls1, rot, op, r, g, b`.
pub const PARAMS: usize = 9;
pub type ParamVec = [f64; PARAMS];

pub const PX: usize = 0;
pub const PY: usize = 1;
pub const LS0: usize = 2;
pub const LS1: usize = 3;
pub const ROT: usize = 4;
pub const OP: usize = 5;
pub const COLOR: usize = 6;

pub const CHECKPOINT_HEADER: &str = "index,px,py,ls0,ls1,rot,op,r,g,b";

pub const INIT_OPACITY: f64 = 0.1;

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// One anisotropic 2D Gaussian in normalized `[0, 1]^2` coordinates.
///
/// Scales are stored as logs and opacity/color as logits, so the covariance
/// is always positive definite and opacity/color stay inside `(0, 1)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Gaussian2D {
    pub pos: [f64; 2],
    pub log_scale: [f64; 2],
    pub rotation: f64,
    pub opacity_raw: f64,
    pub color_raw: [f64; 3],
}

impl Gaussian2D {
    pub fn params(&self) -> ParamVec {
        [
            self.pos[0],
            self.pos[1],
            self.log_scale[0],
            self.log_scale[1],
            self.rotation,
            self.opacity_raw,
            self.color_raw[0],
            self.color_raw[1],
            self.color_raw[2],
        ]
    }

    pub fn from_params(p: &ParamVec) -> Self {
        Gaussian2D {
            pos: [p[PX], p[PY]],
            log_scale: [p[LS0], p[LS1]],
            rotation: p[ROT],
            opacity_raw: p[OP],
            color_raw: [p[COLOR], p[COLOR + 1], p[COLOR + 2]],
        }
    }

    pub fn opacity(&self) -> f64 {
        sigmoid(self.opacity_raw)
    }

    pub fn color(&self) -> [f64; 3] {
        self.color_raw.map(sigmoid)
    }

    pub fn scale(&self) -> [f64; 2] {
        self.log_scale.map(f64::exp)
    }

    pub fn max_scale(&self) -> f64 {
        self.log_scale[0].max(self.log_scale[1]).exp()
    }

    /// `R diag(s^2) R^T` as `[[xx, xy], [xy, yy]]`.
    pub fn covariance(&self) -> [[f64; 2]; 2] {
        let (s, c) = self.rotation.sin_cos();
        let [s0, s1] = self.scale();
        let (v0, v1) = (s0 * s0, s1 * s1);
        let xy = c * s * (v0 - v1);
        [[c * c * v0 + s * s * v1, xy], [xy, s * s * v0 + c * c * v1]]
    }
}

/// Ordered primitive set; index order is compositing order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SplatModel {
    primitives: Vec<Gaussian2D>,
}

impl SplatModel {
    pub fn new(primitives: Vec<Gaussian2D>) -> Self {
        SplatModel { primitives }
    }

    pub fn len(&self) -> usize {
        self.primitives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.primitives.is_empty()
    }

    pub fn primitives(&self) -> &[Gaussian2D] {
        &self.primitives
    }

    pub fn primitives_mut(&mut self) -> &mut [Gaussian2D] {
        &mut self.primitives
    }

    pub fn into_primitives(self) -> Vec<Gaussian2D> {
        self.primitives
    }

    /// Canonical text checkpoint, 9 significant digits, raw (unconstrained)
    /// parameter values.
    pub fn to_checkpoint_csv(&self) -> String {
        let mut out = String::with_capacity(64 * (self.len() + 1));
        out.push_str(CHECKPOINT_HEADER);
        out.push('\n');
        for (i, g) in self.primitives.iter().enumerate() {
            write!(out, "{i}").unwrap();
            for v in g.params() {
                write!(out, ",{}", format_sig(v, 9)).unwrap();
            }
            out.push('\n');
        }
        out
    }

    pub fn from_checkpoint_csv(text: &str) -> Result<SplatModel> {
        let mut lines = text.lines();
        match lines.next() {
            Some(h) if h.trim() == CHECKPOINT_HEADER => {}
            other => {
                return Err(Error::data(format!(
                    "checkpoint header {other:?} is not {CHECKPOINT_HEADER:?}"
                )))
            }
        }
        let mut primitives = Vec::new();
        for (row, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != PARAMS + 1 {
                return Err(Error::data(format!("checkpoint row {row} has {} fields", fields.len())));
            }
            let mut p = [0.0; PARAMS];
            for (slot, field) in p.iter_mut().zip(&fields[1..]) {
                *slot = field
                    .trim()
                    .parse()
                    .map_err(|_| Error::data(format!("checkpoint row {row}: bad number {field:?}")))?;
            }
            primitives.push(Gaussian2D::from_params(&p));
        }
        Ok(SplatModel { primitives })
    }
}

/// Seeds `p_init` primitives on a jittered grid. Each takes the color of the
/// target pixel beneath it, an isotropic scale of `1 / sqrt(p_init)` and
/// opacity 0.1. Deterministic for a given seed.
pub fn init_from_image(target: &Image, p_init: usize, seed: u64) -> Result<SplatModel> {
    if p_init == 0 {
        return Err(Error::arg("initial primitive count must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let grid = (p_init as f64).sqrt().ceil() as usize;
    let mut cells: Vec<usize> = (0..grid * grid).collect();
    cells.shuffle(&mut rng);
    cells.truncate(p_init);
    cells.sort_unstable();

    let log_scale = -0.5 * (p_init as f64).ln();
    let (h, w) = (target.height(), target.width());
    let primitives = cells
        .into_iter()
        .map(|cell| {
            let (gy, gx) = (cell / grid, cell % grid);
            let px = (gx as f64 + rng.gen::<f64>()) / grid as f64;
            let py = (gy as f64 + rng.gen::<f64>()) / grid as f64;
            let x = ((px * w as f64) as usize).min(w - 1);
            let y = ((py * h as f64) as usize).min(h - 1);
            let color_raw = std::array::from_fn(|c| {
                let v = target.get(y, x, c.min(target.channels() - 1));
                logit(v.clamp(1e-4, 1.0 - 1e-4))
            });
            Gaussian2D {
                pos: [px, py],
                log_scale: [log_scale; 2],
                rotation: 0.0,
                opacity_raw: logit(INIT_OPACITY),
                color_raw,
            }
        })
        .collect();
    Ok(SplatModel { primitives })
}
