use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::format::format_sig;
use crate::image::Image;

/// PSNR values written to files are capped here; identical images are +inf.
pub const PSNR_CAP: f64 = 99.0;

pub const METRICS_HEADER: &str = "iter,r_floored,n_primitives,pixels,loss";

/// `10 log10(1 / MSE)` over all pixels and channels, peak 1.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    if !a.same_shape(b) {
        return Err(Error::data(format!(
            "psnr of {}x{}x{} against {}x{}x{}",
            a.height(),
            a.width(),
            a.channels(),
            b.height(),
            b.width(),
            b.channels()
        )));
    }
    let sse: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum();
    let mse = sse / a.data().len() as f64;
    Ok(if mse == 0.0 { f64::INFINITY } else { -10.0 * mse.log10() })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IterRecord {
    pub iter: usize,
    pub r_floored: u32,
    pub n_primitives: usize,
    pub pixels: usize,
    pub loss: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunMetrics {
    pub records: Vec<IterRecord>,
    pub total_pixels: u64,
    /// Sum over iterations of rendered pixels times live primitives.
    pub total_pixel_primitive_cost: u64,
    pub wall_ms: f64,
    pub psnr_full: f64,
    pub final_primitives: usize,
}

/// One-line JSON summary written next to the metrics CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub psnr_full: f64,
    pub total_pixels: u64,
    pub total_pixel_primitive_cost: u64,
    pub wall_ms: f64,
    pub final_primitives: usize,
}

impl RunMetrics {
    pub fn push(&mut self, record: IterRecord) {
        self.total_pixels += record.pixels as u64;
        self.total_pixel_primitive_cost += (record.pixels * record.n_primitives) as u64;
        self.records.push(record);
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(40 * (self.records.len() + 1));
        out.push_str(METRICS_HEADER);
        out.push('\n');
        for r in &self.records {
            writeln!(
                out,
                "{},{},{},{},{}",
                r.iter,
                r.r_floored,
                r.n_primitives,
                r.pixels,
                format_sig(r.loss, 9)
            )
            .unwrap();
        }
        out
    }

    pub fn summary(&self) -> RunSummary {
        RunSummary {
            psnr_full: self.psnr_full.min(PSNR_CAP),
            total_pixels: self.total_pixels,
            total_pixel_primitive_cost: self.total_pixel_primitive_cost,
            wall_ms: self.wall_ms,
            final_primitives: self.final_primitives,
        }
    }
}
