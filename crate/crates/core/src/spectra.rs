//! Discrete Fourier analysis of training views.
//!
//! Conventions: the forward transform is unnormalized, the inverse divides by
//! `h * w`, and spectra are stored DC-centered (the DC bin sits at
//! `(h / 2, w / 2)`, integer division). Under this convention a centered crop
//! of a spectrum scaled by `1 / r^2` inverts to an image with the same
//! intensity range as the source, which is the anti-alias downsampler.

use rayon::prelude::*;
pub use rustfft::num_complex::Complex64;
use rustfft::{FftDirection, FftPlanner};

use crate::error::{Error, Result};
use crate::image::Image;

/// Smallest extent accepted by significance analysis.
pub const MIN_ANALYSIS_EXTENT: usize = 4;

/// Complex spectrum of one channel, DC-centered.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectrumMap {
    height: usize,
    width: usize,
    bins: Vec<Complex64>,
}

impl SpectrumMap {
    pub fn new(height: usize, width: usize, bins: Vec<Complex64>) -> Result<Self> {
        if height == 0 || width == 0 || bins.len() != height * width {
            return Err(Error::data(format!(
                "spectrum of {} bins does not match {height}x{width}",
                bins.len()
            )));
        }
        Ok(SpectrumMap { height, width, bins })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bins(&self) -> &[Complex64] {
        &self.bins
    }

    /// Bin at centered coordinates; `(height / 2, width / 2)` is DC.
    pub fn get(&self, y: usize, x: usize) -> Complex64 {
        self.bins[y * self.width + x]
    }

    pub fn center(&self) -> (usize, usize) {
        (self.height / 2, self.width / 2)
    }

    pub fn dc(&self) -> Complex64 {
        let (cy, cx) = self.center();
        self.get(cy, cx)
    }

    /// Sum of complex magnitudes over all bins.
    pub fn magnitude_sum(&self) -> f64 {
        self.bins.iter().map(|b| b.norm()).sum()
    }

    /// Centered crop keeping the DC bin. The window starts at
    /// `center - target / 2` on each axis, so an even target spans
    /// `[c - k, c + k - 1]` and an odd one `[c - k, c + k]`; the kept DC bin
    /// lands on the center of the cropped layout.
    pub fn center_crop(&self, height: usize, width: usize) -> Result<SpectrumMap> {
        if height == 0 || width == 0 || height > self.height || width > self.width {
            return Err(Error::arg(format!(
                "cannot crop {}x{} spectrum to {height}x{width}",
                self.height, self.width
            )));
        }
        let (y0, x0) = crop_origin(self.height, self.width, height, width);
        let mut bins = Vec::with_capacity(height * width);
        for y in 0..height {
            let row = (y0 + y) * self.width + x0;
            bins.extend_from_slice(&self.bins[row..row + width]);
        }
        Ok(SpectrumMap { height, width, bins })
    }

    pub fn scaled(mut self, factor: f64) -> SpectrumMap {
        for b in &mut self.bins {
            *b *= factor;
        }
        self
    }
}

/// Top-left corner of the centered crop window in a DC-centered layout.
pub fn crop_origin(height: usize, width: usize, target_h: usize, target_w: usize) -> (usize, usize) {
    (height / 2 - target_h / 2, width / 2 - target_w / 2)
}

/// Extent of an axis of length `n` downsampled by `r`.
pub fn target_extent(n: usize, r: f64) -> usize {
    (n as f64 / r).round() as usize
}

/// Forward 2D transform of a single-channel image, unnormalized, DC-centered.
pub fn dft2(channel: &Image) -> Result<SpectrumMap> {
    if channel.channels() != 1 {
        return Err(Error::data(format!(
            "dft2 expects a single channel, got {}",
            channel.channels()
        )));
    }
    if !channel.is_finite() {
        return Err(Error::data("non-finite pixel in transform input"));
    }
    let (h, w) = (channel.height(), channel.width());
    let mut buf: Vec<Complex64> = channel.data().iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft_2d(h, w, &mut buf, FftDirection::Forward);
    Ok(SpectrumMap {
        height: h,
        width: w,
        bins: shift(h, w, &buf, true),
    })
}

/// Inverse transform returning the real part. Not clamped.
pub fn idft2(spectrum: &SpectrumMap) -> Image {
    idft2_with_residue(spectrum).0
}

/// Inverse transform returning the real part together with the largest
/// absolute imaginary component that was discarded.
pub fn idft2_with_residue(spectrum: &SpectrumMap) -> (Image, f64) {
    let (h, w) = (spectrum.height, spectrum.width);
    let mut buf = shift(h, w, &spectrum.bins, false);
    fft_2d(h, w, &mut buf, FftDirection::Inverse);
    let norm = 1.0 / (h * w) as f64;
    let residue = buf.iter().map(|c| (c.im * norm).abs()).fold(0.0, f64::max);
    let data = buf.iter().map(|c| c.re * norm).collect();
    let image = Image::new(h, w, 1, data).expect("shape preserved by the transform");
    (image, residue)
}

/// Frequency-domain anti-alias downsampling: per channel, transform, crop the
/// centered `(round(H/r), round(W/r))` window, scale by `1 / r^2`, invert and
/// clamp to `[0, 1]`. `r == 1` returns the input untouched.
pub fn antialias_downsample(image: &Image, r: f64) -> Result<Image> {
    if !(r >= 1.0) || !r.is_finite() {
        return Err(Error::arg(format!("downsampling factor {r} must be >= 1")));
    }
    if r == 1.0 {
        return Ok(image.clone());
    }
    let (th, tw) = (target_extent(image.height(), r), target_extent(image.width(), r));
    if th < 2 || tw < 2 {
        return Err(Error::data(format!(
            "downsampling {}x{} by {r} leaves {th}x{tw}, below 2x2",
            image.height(),
            image.width()
        )));
    }
    let scale = 1.0 / (r * r);
    let planes = (0..image.channels())
        .map(|c| {
            let spectrum = dft2(&image.channel(c))?;
            Ok(idft2(&spectrum.center_crop(th, tw)?.scaled(scale)).clamped())
        })
        .collect::<Result<Vec<_>>>()?;
    Image::from_channels(&planes)
}

/// Significance of a view set at one downsampling factor: the per-view sum of
/// spectral magnitudes of the downsampled luminance, averaged over views.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Significance {
    pub value: f64,
    pub factor: f64,
}

pub fn significance(views: &[Image], r: f64) -> Result<Significance> {
    let (h, w) = check_views(views)?;
    let (th, tw) = (target_extent(h, r), target_extent(w, r));
    if th < 2 || tw < 2 {
        return Err(Error::data(format!("factor {r} shrinks {h}x{w} views below 2x2")));
    }
    let terms = views
        .par_iter()
        .map(|view| {
            let small = antialias_downsample(&view.luminance(), r)?;
            Ok(dft2(&small)?.magnitude_sum())
        })
        .collect::<Result<Vec<f64>>>()?;
    // Fixed view order keeps the mean bit-stable regardless of scheduling.
    let total: f64 = terms.iter().sum();
    Ok(Significance {
        value: total / views.len() as f64,
        factor: r,
    })
}

fn check_views(views: &[Image]) -> Result<(usize, usize)> {
    let first = views.first().ok_or_else(|| Error::data("empty view list"))?;
    let (h, w) = (first.height(), first.width());
    if let Some(bad) = views.iter().position(|v| v.height() != h || v.width() != w) {
        return Err(Error::data(format!(
            "view {bad} is {}x{}, expected {h}x{w}",
            views[bad].height(),
            views[bad].width()
        )));
    }
    if h < MIN_ANALYSIS_EXTENT || w < MIN_ANALYSIS_EXTENT {
        return Err(Error::data(format!(
            "views of {h}x{w} are below the {MIN_ANALYSIS_EXTENT}x{MIN_ANALYSIS_EXTENT} analysis minimum"
        )));
    }
    Ok((h, w))
}

/// View-averaged magnitude spectrum at full resolution.
///
/// The scheduler measures how much spectral content survives a downsampling
/// by `r` as the magnitude mass inside the centered `(round(H/r), round(W/r))`
/// window of the full-resolution spectrum, i.e. the band the downsampled views
/// can still represent, in full-resolution units. Up to the final clamp of the
/// downsampler this equals `r^2 * significance(views, r)`.
#[derive(Clone, Debug)]
pub struct SpectralProfile {
    height: usize,
    width: usize,
    magnitude: Vec<f64>,
}

impl SpectralProfile {
    pub fn from_views(views: &[Image]) -> Result<Self> {
        let (h, w) = check_views(views)?;
        let spectra = views
            .par_iter()
            .map(|v| dft2(&v.luminance()))
            .collect::<Result<Vec<_>>>()?;
        let mut magnitude = vec![0.0; h * w];
        for spectrum in &spectra {
            for (acc, b) in magnitude.iter_mut().zip(spectrum.bins()) {
                *acc += b.norm();
            }
        }
        let n = views.len() as f64;
        for m in &mut magnitude {
            *m /= n;
        }
        Ok(SpectralProfile {
            height: h,
            width: w,
            magnitude,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Magnitude mass of the whole spectrum (factor 1).
    pub fn full_energy(&self) -> f64 {
        self.magnitude.iter().sum()
    }

    /// Magnitude mass surviving a downsampling by `r`. Non-increasing in `r`.
    pub fn band_energy(&self, r: f64) -> f64 {
        let th = target_extent(self.height, r).clamp(1, self.height);
        let tw = target_extent(self.width, r).clamp(1, self.width);
        let (y0, x0) = crop_origin(self.height, self.width, th, tw);
        (y0..y0 + th)
            .map(|y| {
                let row = y * self.width;
                self.magnitude[row + x0..row + x0 + tw].iter().sum::<f64>()
            })
            .sum()
    }
}

/// `shift(.., true)` moves DC from `(0, 0)` to the center; `false` undoes it.
fn shift(h: usize, w: usize, src: &[Complex64], to_centered: bool) -> Vec<Complex64> {
    let mut out = vec![Complex64::new(0.0, 0.0); h * w];
    let (dy, dx) = (h / 2, w / 2);
    for y in 0..h {
        for x in 0..w {
            let (cy, cx) = ((y + dy) % h, (x + dx) % w);
            if to_centered {
                out[cy * w + cx] = src[y * w + x];
            } else {
                out[y * w + x] = src[cy * w + cx];
            }
        }
    }
    out
}

fn fft_2d(h: usize, w: usize, buf: &mut [Complex64], direction: FftDirection) {
    let mut planner = FftPlanner::new();
    let row_fft = planner.plan_fft(w, direction);
    for row in buf.chunks_exact_mut(w) {
        row_fft.process(row);
    }
    let col_fft = planner.plan_fft(h, direction);
    let mut column = vec![Complex64::new(0.0, 0.0); h];
    for x in 0..w {
        for y in 0..h {
            column[y] = buf[y * w + x];
        }
        col_fft.process(&mut column);
        for y in 0..h {
            buf[y * w + x] = column[y];
        }
    }
}
