//! Tiled CPU rasterizer for [`SplatModel`] with an analytic backward pass.
//!
//! Pixel `(x, y)` of a `width x height` render samples the scene at its
//! center `((x + 0.5) / width, (y + 0.5) / height)`. Primitives composite
//! front to back in index order over a black background:
//! `C = sum_i T_i w_i c_i`, `w_i = min(o_i G_i, 0.999)`,
//! `T_i = prod_{j<i} (1 - w_j)`.

use rayon::prelude::*;

use super::model::{ParamVec, SplatModel, COLOR, LS0, LS1, OP, PARAMS, PX, PY, ROT};
use crate::error::{Error, Result};
use crate::image::Image;

pub const TILE: usize = 16;
/// Squared Mahalanobis radius of a primitive's support (3 sigma).
pub const SUPPORT_Q: f64 = 9.0;
pub const MAX_WEIGHT: f64 = 0.999;

/// `exp(-SUPPORT_Q / 2)`.
const EDGE: f64 = 0.011_108_996_538_242_306;
/// Normalizes the windowed kernel to 1 at the center.
const KERNEL_NORM: f64 = 1.0 / (1.0 - 5.5 * EDGE);

/// Gaussian falloff `exp(-q/2)` minus its first-order Taylor expansion at the
/// support edge, so the kernel and its slope both reach 0 at `q = 9` and the
/// truncation introduces no jump. Returns `(value, d value / d q)`.
#[inline]
pub fn kernel(q: f64) -> (f64, f64) {
    if q >= SUPPORT_Q {
        return (0.0, 0.0);
    }
    let e = (-0.5 * q).exp();
    (
        KERNEL_NORM * (e - 0.5 * EDGE * (11.0 - q)),
        KERNEL_NORM * 0.5 * (EDGE - e),
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RenderOptions {
    /// Bin primitives into the tiles their 3-sigma box overlaps. Disabling it
    /// evaluates every primitive at every pixel; results agree.
    pub culling: bool,
}

impl Default for RenderOptions {
    fn default() -> Self {
        RenderOptions { culling: true }
    }
}

/// Loss and gradients of one render against a target.
#[derive(Clone, Debug)]
pub struct LossGrad {
    /// Mean absolute error over pixels and channels.
    pub loss: f64,
    /// Gradient with respect to every raw parameter, per primitive.
    pub grads: Vec<ParamVec>,
    /// Whether the primitive touched at least one pixel.
    pub visible: Vec<bool>,
}

impl LossGrad {
    /// Norm of the positional gradient of primitive `i`.
    pub fn position_grad_norm(&self, i: usize) -> f64 {
        self.grads[i][PX].hypot(self.grads[i][PY])
    }
}

pub fn render(model: &SplatModel, width: usize, height: usize) -> Image {
    render_with(model, width, height, RenderOptions::default())
}

pub fn render_with(model: &SplatModel, width: usize, height: usize, options: RenderOptions) -> Image {
    assert!(width >= 1 && height >= 1, "render target must be at least 1x1");
    let raster = Raster::new(model, width, height, options);
    let tiles: Vec<Vec<[f64; 3]>> = (0..raster.tile_count())
        .into_par_iter()
        .map(|t| raster.forward_tile(t))
        .collect();
    let mut data = vec![0.0; width * height * 3];
    for (t, colors) in tiles.into_iter().enumerate() {
        for (slot, (x, y)) in raster.tile_pixels(t).enumerate() {
            data[(y * width + x) * 3..][..3].copy_from_slice(&colors[slot]);
        }
    }
    Image::new(height, width, 3, data).expect("render buffer has the requested shape")
}

/// Renders at `(width, height)` and differentiates the L1 loss against `target`.
pub fn render_loss_grad(model: &SplatModel, target: &Image, width: usize, height: usize) -> Result<LossGrad> {
    render_loss_grad_with(model, target, width, height, RenderOptions::default())
}

pub fn render_loss_grad_with(
    model: &SplatModel,
    target: &Image,
    width: usize,
    height: usize,
    options: RenderOptions,
) -> Result<LossGrad> {
    if target.height() != height || target.width() != width || target.channels() != 3 {
        return Err(Error::data(format!(
            "target is {}x{}x{}, render is {height}x{width}x3",
            target.height(),
            target.width(),
            target.channels()
        )));
    }
    let raster = Raster::new(model, width, height, options);
    let inv_n = 1.0 / (width * height * 3) as f64;
    let tiles: Vec<TileGrad> = (0..raster.tile_count())
        .into_par_iter()
        .map(|t| raster.backward_tile(t, target, inv_n))
        .collect();

    // Reduce in tile order so the sums do not depend on the worker count.
    let n = model.len();
    let mut grads = vec![[0.0; PARAMS]; n];
    let mut visible = vec![false; n];
    let mut abs_sum = 0.0;
    for (t, tile) in tiles.iter().enumerate() {
        abs_sum += tile.abs_sum;
        for (slot, &prim) in raster.bins[t].iter().enumerate() {
            let prim = prim as usize;
            if tile.touched[slot] {
                visible[prim] = true;
                for (acc, g) in grads[prim].iter_mut().zip(&tile.grads[slot]) {
                    *acc += g;
                }
            }
        }
    }
    // Tiles accumulate with respect to mapped opacity and color; apply the
    // logistic derivatives once here.
    for (g, p) in grads.iter_mut().zip(&raster.prims) {
        g[OP] *= p.opacity * (1.0 - p.opacity);
        for c in 0..3 {
            g[COLOR + c] *= p.color[c] * (1.0 - p.color[c]);
        }
    }
    Ok(LossGrad {
        loss: abs_sum * inv_n,
        grads,
        visible,
    })
}

/// Per-primitive quantities needed at every pixel.
struct Prepared {
    pos: [f64; 2],
    cos: f64,
    sin: f64,
    inv_var: [f64; 2],
    opacity: f64,
    color: [f64; 3],
}

impl Prepared {
    /// Rotated offsets `(a0, a1)` and the squared Mahalanobis distance.
    #[inline]
    fn offsets(&self, u: [f64; 2]) -> (f64, f64, f64) {
        let (dx, dy) = (u[0] - self.pos[0], u[1] - self.pos[1]);
        let a0 = self.cos * dx + self.sin * dy;
        let a1 = -self.sin * dx + self.cos * dy;
        (a0, a1, a0 * a0 * self.inv_var[0] + a1 * a1 * self.inv_var[1])
    }
}

struct Raster {
    width: usize,
    height: usize,
    tiles_x: usize,
    tiles_y: usize,
    prims: Vec<Prepared>,
    /// Primitive indices per tile, ascending.
    bins: Vec<Vec<u32>>,
}

struct TileGrad {
    abs_sum: f64,
    grads: Vec<ParamVec>,
    touched: Vec<bool>,
}

#[derive(Clone, Copy)]
struct Contribution {
    slot: usize,
    transmittance: f64,
    weight: f64,
    kernel: f64,
    kernel_slope: f64,
    a0: f64,
    a1: f64,
    clamped: bool,
}

impl Raster {
    fn new(model: &SplatModel, width: usize, height: usize, options: RenderOptions) -> Self {
        let tiles_x = width.div_ceil(TILE);
        let tiles_y = height.div_ceil(TILE);
        let mut bins = vec![Vec::new(); tiles_x * tiles_y];
        let mut prims = Vec::with_capacity(model.len());
        for (i, g) in model.primitives().iter().enumerate() {
            let (sin, cos) = g.rotation.sin_cos();
            prims.push(Prepared {
                pos: g.pos,
                cos,
                sin,
                inv_var: [(-2.0 * g.log_scale[0]).exp(), (-2.0 * g.log_scale[1]).exp()],
                opacity: g.opacity(),
                color: g.color(),
            });
            if !options.culling {
                for bin in &mut bins {
                    bin.push(i as u32);
                }
                continue;
            }
            let cov = g.covariance();
            let (ex, ey) = (3.0 * cov[0][0].sqrt(), 3.0 * cov[1][1].sqrt());
            let Some((x0, x1)) = pixel_span(g.pos[0] - ex, g.pos[0] + ex, width) else {
                continue;
            };
            let Some((y0, y1)) = pixel_span(g.pos[1] - ey, g.pos[1] + ey, height) else {
                continue;
            };
            for ty in y0 / TILE..=y1 / TILE {
                for tx in x0 / TILE..=x1 / TILE {
                    bins[ty * tiles_x + tx].push(i as u32);
                }
            }
        }
        Raster {
            width,
            height,
            tiles_x,
            tiles_y,
            prims,
            bins,
        }
    }

    fn tile_count(&self) -> usize {
        self.tiles_x * self.tiles_y
    }

    fn tile_pixels(&self, t: usize) -> impl Iterator<Item = (usize, usize)> {
        let (tx, ty) = (t % self.tiles_x, t / self.tiles_x);
        let xs = tx * TILE..((tx + 1) * TILE).min(self.width);
        let ys = ty * TILE..((ty + 1) * TILE).min(self.height);
        ys.flat_map(move |y| xs.clone().map(move |x| (x, y)))
    }

    #[inline]
    fn center(&self, x: usize, y: usize) -> [f64; 2] {
        [
            (x as f64 + 0.5) / self.width as f64,
            (y as f64 + 0.5) / self.height as f64,
        ]
    }

    fn forward_tile(&self, t: usize) -> Vec<[f64; 3]> {
        let bin = &self.bins[t];
        self.tile_pixels(t)
            .map(|(x, y)| {
                let u = self.center(x, y);
                let mut color = [0.0; 3];
                let mut transmittance = 1.0;
                for &i in bin {
                    let p = &self.prims[i as usize];
                    let (_, _, q) = p.offsets(u);
                    if q >= SUPPORT_Q {
                        continue;
                    }
                    let w = (p.opacity * kernel(q).0).min(MAX_WEIGHT);
                    for (acc, &pc) in color.iter_mut().zip(&p.color) {
                        *acc += transmittance * w * pc;
                    }
                    transmittance *= 1.0 - w;
                }
                color
            })
            .collect()
    }

    fn backward_tile(&self, t: usize, target: &Image, inv_n: f64) -> TileGrad {
        let bin = &self.bins[t];
        let mut out = TileGrad {
            abs_sum: 0.0,
            grads: vec![[0.0; PARAMS]; bin.len()],
            touched: vec![false; bin.len()],
        };
        let mut stack: Vec<Contribution> = Vec::new();
        for (x, y) in self.tile_pixels(t) {
            let u = self.center(x, y);
            stack.clear();
            let mut color = [0.0; 3];
            let mut transmittance = 1.0;
            for (slot, &i) in bin.iter().enumerate() {
                let p = &self.prims[i as usize];
                let (a0, a1, q) = p.offsets(u);
                if q >= SUPPORT_Q {
                    continue;
                }
                let (k, dk) = kernel(q);
                let raw = p.opacity * k;
                let weight = raw.min(MAX_WEIGHT);
                stack.push(Contribution {
                    slot,
                    transmittance,
                    weight,
                    kernel: k,
                    kernel_slope: dk,
                    a0,
                    a1,
                    clamped: raw > MAX_WEIGHT,
                });
                for (acc, &pc) in color.iter_mut().zip(&p.color) {
                    *acc += transmittance * weight * pc;
                }
                transmittance *= 1.0 - weight;
            }

            let mut dl_dc = [0.0; 3];
            for c in 0..3 {
                let diff = color[c] - target.get(y, x, c);
                out.abs_sum += diff.abs();
                dl_dc[c] = if diff > 0.0 {
                    inv_n
                } else if diff < 0.0 {
                    -inv_n
                } else {
                    0.0
                };
            }

            // Back to front; `behind` is the color composited after the current primitive.
            let mut behind = [0.0; 3];
            for c in stack.iter().rev() {
                let p = &self.prims[bin[c.slot] as usize];
                let g = &mut out.grads[c.slot];
                out.touched[c.slot] = true;
                let tw = c.transmittance * c.weight;
                let mut dl_dw = 0.0;
                for ch in 0..3 {
                    g[COLOR + ch] += tw * dl_dc[ch];
                    dl_dw += dl_dc[ch] * (c.transmittance * p.color[ch] - behind[ch] / (1.0 - c.weight));
                    behind[ch] += tw * p.color[ch];
                }
                if c.clamped {
                    continue;
                }
                g[OP] += dl_dw * c.kernel;
                let dl_dq = dl_dw * p.opacity * c.kernel_slope;
                let (s0, s1) = (c.a0 * p.inv_var[0], c.a1 * p.inv_var[1]);
                let dq_ddx = 2.0 * (s0 * p.cos - s1 * p.sin);
                let dq_ddy = 2.0 * (s0 * p.sin + s1 * p.cos);
                g[PX] -= dl_dq * dq_ddx;
                g[PY] -= dl_dq * dq_ddy;
                g[LS0] -= dl_dq * 2.0 * c.a0 * s0;
                g[LS1] -= dl_dq * 2.0 * c.a1 * s1;
                g[ROT] += dl_dq * 2.0 * c.a0 * c.a1 * (p.inv_var[0] - p.inv_var[1]);
            }
        }
        out
    }
}

/// Inclusive pixel index range whose centers fall in `[lo, hi]` (normalized).
fn pixel_span(lo: f64, hi: f64, n: usize) -> Option<(usize, usize)> {
    let first = (lo * n as f64 - 0.5).ceil().max(0.0);
    let last = (hi * n as f64 - 0.5).floor().min(n as f64 - 1.0);
    (first <= last).then_some((first as usize, last as usize))
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::splat2d::model::{logit, Gaussian2D};

    fn random_scene(n: usize, seed: u64) -> SplatModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        SplatModel::new(
            (0..n)
                .map(|_| Gaussian2D {
                    pos: [rng.gen_range(0.1..0.9), rng.gen_range(0.1..0.9)],
                    log_scale: [rng.gen_range(-3.2..-1.8), rng.gen_range(-3.2..-1.8)],
                    rotation: rng.gen_range(-1.5..1.5),
                    opacity_raw: rng.gen_range(-1.0..2.0),
                    color_raw: [
                        rng.gen_range(-2.0..2.0),
                        rng.gen_range(-2.0..2.0),
                        rng.gen_range(-2.0..2.0),
                    ],
                })
                .collect(),
        )
    }

    /// Front-to-back compositing evaluated literally at one pixel: every primitive, in order.
    fn oracle_pixel(model: &SplatModel, u: [f64; 2]) -> [f64; 3] {
        let mut out = [0.0; 3];
        let mut t = 1.0;
        for g in model.primitives() {
            let [[a, b], [_, d]] = g.covariance();
            let det = a * d - b * b;
            let (dx, dy) = (u[0] - g.pos[0], u[1] - g.pos[1]);
            let q = (d * dx * dx - 2.0 * b * dx * dy + a * dy * dy) / det;
            let w = (g.opacity() * kernel(q).0).min(MAX_WEIGHT);
            let c = g.color();
            for ch in 0..3 {
                out[ch] += t * w * c[ch];
            }
            t *= 1.0 - w;
        }
        out
    }

    #[test]
    fn kernel_is_smooth_at_the_support_edge() {
        assert!((kernel(0.0).0 - 1.0).abs() < 1e-15);
        let (v, dv) = kernel(SUPPORT_Q - 1e-9);
        assert!(v.abs() < 1e-10 && dv.abs() < 1e-10);
        assert_eq!(kernel(SUPPORT_Q), (0.0, 0.0));
        for q in [0.5, 2.0, 5.0, 8.5] {
            let fd = (kernel(q + 1e-6).0 - kernel(q - 1e-6).0) / 2e-6;
            assert!((fd - kernel(q).1).abs() < 1e-8);
        }
    }

    #[test]
    fn empty_pixels_are_black() {
        let model = SplatModel::new(vec![Gaussian2D {
            pos: [0.1, 0.1],
            log_scale: [-4.0, -4.0],
            rotation: 0.0,
            opacity_raw: 3.0,
            color_raw: [1.0; 3],
        }]);
        let img = render(&model, 20, 20);
        assert_eq!(img.get(19, 19, 0), 0.0);
        assert!(render(&SplatModel::default(), 4, 4).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn opaque_point_at_pixel_center_shows_its_color() {
        let color = [0.2, 0.5, 0.8];
        let model = SplatModel::new(vec![Gaussian2D {
            pos: [10.5 / 32.0, 20.5 / 32.0],
            log_scale: [-6.0, -6.0],
            rotation: 0.0,
            opacity_raw: logit(0.9989),
            color_raw: color.map(logit),
        }]);
        let img = render(&model, 32, 32);
        for (c, &want) in color.iter().enumerate() {
            assert!((img.get(20, 10, c) - want).abs() < 2e-3);
            assert_eq!(img.get(0, 0, c), 0.0);
            assert_eq!(img.get(20, 11, c), 0.0);
        }
    }

    #[test]
    fn overlapping_primitives_match_literal_compositing() {
        let model = random_scene(2, 3);
        let mut model = model;
        model.primitives_mut()[1].pos = model.primitives()[0].pos;
        let img = render(&model, 24, 24);
        for (x, y) in [(12, 12), (5, 17), (20, 3), (0, 0)] {
            let u = [(x as f64 + 0.5) / 24.0, (y as f64 + 0.5) / 24.0];
            let oracle = oracle_pixel(&model, u);
            for (c, &want) in oracle.iter().enumerate() {
                assert!((img.get(y, x, c) - want).abs() < 1e-12);
            }
        }
        // Whole-image comparison on a busier scene.
        let model = random_scene(30, 4);
        let img = render(&model, 17, 23);
        for y in 0..23 {
            for x in 0..17 {
                let oracle = oracle_pixel(&model, [(x as f64 + 0.5) / 17.0, (y as f64 + 0.5) / 23.0]);
                for (c, &want) in oracle.iter().enumerate() {
                    assert!((img.get(y, x, c) - want).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn culling_does_not_change_the_image() {
        let model = random_scene(40, 8);
        let a = render_with(&model, 40, 33, RenderOptions { culling: true });
        let b = render_with(&model, 40, 33, RenderOptions { culling: false });
        let diff = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        assert!(diff < 1e-4);
    }

    #[test]
    fn transmittance_stays_bounded() {
        let model = random_scene(60, 9);
        let white = SplatModel::new(
            model
                .primitives()
                .iter()
                .map(|g| Gaussian2D {
                    color_raw: [40.0; 3],
                    ..*g
                })
                .collect(),
        );
        // With white colors the render is the accumulated opacity.
        let img = render(&white, 32, 32);
        assert!(img.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn renders_are_reproducible() {
        let model = random_scene(25, 10);
        assert_eq!(render(&model, 31, 29), render(&model, 31, 29));
    }

    #[test]
    fn exact_fit_has_zero_loss_and_gradient() {
        let model = random_scene(10, 11);
        let target = render(&model, 20, 20);
        let lg = render_loss_grad(&model, &target, 20, 20).unwrap();
        assert_eq!(lg.loss, 0.0);
        assert!(lg.grads.iter().flatten().all(|&g| g == 0.0));
    }

    #[test]
    fn loss_grad_rejects_mismatched_target() {
        let model = random_scene(2, 1);
        let target = Image::filled(10, 12, 3, 0.5).unwrap();
        assert!(render_loss_grad(&model, &target, 10, 10).is_err());
        let gray = Image::filled(10, 10, 1, 0.5).unwrap();
        assert!(render_loss_grad(&model, &gray, 10, 10).is_err());
    }

    #[test]
    fn loss_grad_render_agrees_with_render() {
        let model = random_scene(15, 12);
        let target = Image::filled(20, 20, 3, 0.0).unwrap();
        let lg = render_loss_grad(&model, &target, 20, 20).unwrap();
        let img = render(&model, 20, 20);
        let mean: f64 = img.data().iter().sum::<f64>() / img.data().len() as f64;
        assert!((lg.loss - mean).abs() < 1e-12);
    }

    fn max_relative_fd_error(model: &SplatModel, size: usize) -> f64 {
        // A white target keeps every residual negative, away from the L1 kink.
        let target = Image::filled(size, size, 3, 1.0).unwrap();
        let analytic = render_loss_grad(model, &target, size, size).unwrap();
        let loss = |m: &SplatModel| render_loss_grad(m, &target, size, size).unwrap().loss;
        let eps = 1e-4;
        let mut worst: f64 = 0.0;
        for i in 0..model.len() {
            for j in 0..PARAMS {
                let mut plus = model.clone();
                let mut minus = model.clone();
                let bump = |m: &mut SplatModel, d: f64| {
                    let mut p = m.primitives()[i].params();
                    p[j] += d;
                    m.primitives_mut()[i] = Gaussian2D::from_params(&p);
                };
                bump(&mut plus, eps);
                bump(&mut minus, -eps);
                let numeric = (loss(&plus) - loss(&minus)) / (2.0 * eps);
                let a = analytic.grads[i][j];
                let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
                worst = worst.max(rel);
            }
        }
        worst
    }

    #[test]
    fn single_primitive_gradients_match_finite_differences() {
        let model = SplatModel::new(vec![Gaussian2D {
            pos: [0.47, 0.55],
            log_scale: [-2.0, -2.6],
            rotation: 0.4,
            opacity_raw: 0.8,
            color_raw: [0.3, -0.7, 1.1],
        }]);
        let err = max_relative_fd_error(&model, 24);
        assert!(err < 1e-4, "max relative error {err}");
    }

    #[test]
    fn scene_gradients_match_finite_differences() {
        let err = max_relative_fd_error(&random_scene(20, 42), 32);
        assert!(err < 1e-3, "max relative error {err}");
    }

    #[test]
    fn low_frequency_scene_is_resolution_consistent() {
        // Wide primitives (sigma of several full-res pixels) are band-limited
        // enough that rendering small equals downsampling the large render.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let model = SplatModel::new(
            (0..12)
                .map(|_| Gaussian2D {
                    pos: [rng.gen_range(0.2..0.8), rng.gen_range(0.2..0.8)],
                    log_scale: [rng.gen_range(-2.2..-1.6), rng.gen_range(-2.2..-1.6)],
                    rotation: rng.gen_range(-1.0..1.0),
                    opacity_raw: rng.gen_range(-1.0..1.0),
                    color_raw: [
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-1.0..1.0),
                    ],
                })
                .collect(),
        );
        let full = render(&model, 64, 64);
        let small = render(&model, 32, 32);
        let down = crate::spectra::antialias_downsample(&full, 2.0).unwrap();
        let mae = small
            .data()
            .iter()
            .zip(down.data())
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            / small.data().len() as f64;
        assert!(mae < 5e-2, "mean abs error {mae}");
    }
}
