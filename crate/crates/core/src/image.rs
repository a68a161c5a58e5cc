//! Raster images with unit-interval intensities, plus 8-bit file IO.

use std::path::Path;

use ::image::{ColorType, DynamicImage, GrayImage, ImageReader, RgbImage};

use crate::error::{Error, Result};

/// An `height x width x channels` raster stored row-major, channels interleaved.
///
/// Intensities loaded from disk lie in `[0, 1]`. Intermediate images (an
/// unclamped inverse transform, for instance) may leave that range; callers
/// decide when to clamp.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::data(format!("unsupported channel count {channels}")));
        }
        if height == 0 || width == 0 {
            return Err(Error::data(format!("empty image {height}x{width}")));
        }
        if data.len() != height * width * channels {
            return Err(Error::data(format!(
                "buffer length {} does not match {height}x{width}x{channels}",
                data.len()
            )));
        }
        Ok(Image {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Result<Self> {
        Image::new(height, width, channels, vec![value; height * width * channels])
    }

    /// Builds an image from `f(y, x, c)`.
    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(y, x, c));
                }
            }
        }
        Image::new(height, width, channels, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn pixel_count(&self) -> usize {
        self.height * self.width
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    /// Extracts one channel as a single-channel image.
    pub fn channel(&self, c: usize) -> Image {
        assert!(c < self.channels, "channel {c} out of range");
        let data = self.data.iter().skip(c).step_by(self.channels).copied().collect();
        Image {
            height: self.height,
            width: self.width,
            channels: 1,
            data,
        }
    }

    /// Reassembles an image from single-channel planes of equal size.
    pub fn from_channels(planes: &[Image]) -> Result<Image> {
        let first = planes.first().ok_or_else(|| Error::data("no channels to assemble"))?;
        if planes
            .iter()
            .any(|p| p.channels != 1 || p.height != first.height || p.width != first.width)
        {
            return Err(Error::data("channel planes disagree in shape"));
        }
        let n = planes.len();
        let mut data = vec![0.0; first.pixel_count() * n];
        for (c, plane) in planes.iter().enumerate() {
            for (i, v) in plane.data.iter().enumerate() {
                data[i * n + c] = *v;
            }
        }
        Image::new(first.height, first.width, n, data)
    }

    /// Unweighted channel mean.
    pub fn luminance(&self) -> Image {
        if self.channels == 1 {
            return self.clone();
        }
        let n = self.channels as f64;
        let data = self
            .data
            .chunks_exact(self.channels)
            .map(|px| px.iter().sum::<f64>() / n)
            .collect();
        Image {
            height: self.height,
            width: self.width,
            channels: 1,
            data,
        }
    }

    /// Grayscale images are replicated into three channels.
    pub fn to_rgb(&self) -> Image {
        if self.channels == 3 {
            return self.clone();
        }
        let data = self.data.iter().flat_map(|&v| [v, v, v]).collect();
        Image {
            height: self.height,
            width: self.width,
            channels: 3,
            data,
        }
    }

    pub fn clamped(mut self) -> Image {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
        self
    }

    pub fn scaled(mut self, factor: f64) -> Image {
        for v in &mut self.data {
            *v *= factor;
        }
        self
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.height == other.height && self.width == other.width && self.channels == other.channels
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Loads an 8-bit grayscale or RGB raster (PNG or binary PGM/PPM).
    /// Any alpha channel is dropped; intensities map to `[0, 1]` by `x / 255`.
    pub fn load(path: impl AsRef<Path>) -> Result<Image> {
        let path = path.as_ref();
        let decoded = ImageReader::open(path)
            .map_err(|source| Error::Io {
                path: path.to_path_buf(),
                source,
            })?
            .with_guessed_format()
            .map_err(|source| Error::Io {
                path: path.to_path_buf(),
                source,
            })?
            .decode()
            .map_err(|source| Error::Decode {
                path: path.to_path_buf(),
                source,
            })?;
        Ok(Image::from_dynamic(decoded))
    }

    fn from_dynamic(img: DynamicImage) -> Image {
        let gray = matches!(
            img.color(),
            ColorType::L8 | ColorType::La8 | ColorType::L16 | ColorType::La16
        );
        let (w, h) = (img.width() as usize, img.height() as usize);
        let (channels, raw) = if gray {
            (1, img.into_luma8().into_raw())
        } else {
            (3, img.into_rgb8().into_raw())
        };
        let data = raw.into_iter().map(|b| f64::from(b) / 255.0).collect();
        Image {
            height: h,
            width: w,
            channels,
            data,
        }
    }

    /// Quantizes to 8 bits after clamping to `[0, 1]`.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect()
    }

    /// Writes an 8-bit PNG.
    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let (w, h) = (self.width as u32, self.height as u32);
        let bytes = self.to_bytes();
        let result = if self.channels == 1 {
            GrayImage::from_raw(w, h, bytes).map(|im| im.save(path))
        } else {
            RgbImage::from_raw(w, h, bytes).map(|im| im.save(path))
        };
        match result {
            Some(Ok(())) => Ok(()),
            Some(Err(source)) => Err(Error::Decode {
                path: path.to_path_buf(),
                source,
            }),
            None => unreachable!("buffer length is validated at construction"),
        }
    }
}
