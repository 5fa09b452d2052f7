//! Readout power estimate with on-chip compression.
//!
//! I/O, ADC and JPEG power scale with the number of bits leaving the pixel
//! array, so they shrink by `(1 - cr)`. Pixel and miscellaneous power do not.

use std::fmt;

use crate::error::{Error, Result};
use crate::sampler::onchip_compression;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PowerCategory {
    Io,
    Adc,
    Pixel,
    Other,
    Jpeg,
}

impl PowerCategory {
    pub const ALL: [PowerCategory; 5] = [
        PowerCategory::Io,
        PowerCategory::Adc,
        PowerCategory::Pixel,
        PowerCategory::Other,
        PowerCategory::Jpeg,
    ];

    /// Whether the category scales with the compression ratio.
    pub fn scaled(self) -> bool {
        matches!(self, PowerCategory::Io | PowerCategory::Adc | PowerCategory::Jpeg)
    }
}

impl fmt::Display for PowerCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PowerCategory::Io => "io",
            PowerCategory::Adc => "adc",
            PowerCategory::Pixel => "pixel",
            PowerCategory::Other => "other",
            PowerCategory::Jpeg => "jpeg",
        })
    }
}

/// Baseline power per category in mW.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerModel {
    pub io: f64,
    pub adc: f64,
    pub pixel: f64,
    pub other: f64,
    pub jpeg: f64,
}

impl PowerModel {
    pub fn new(io: f64, adc: f64, pixel: f64, other: f64, jpeg: f64) -> Result<Self> {
        let m = PowerModel {
            io,
            adc,
            pixel,
            other,
            jpeg,
        };
        for c in PowerCategory::ALL {
            let v = m.get(c);
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{c} power {v} mW must be finite and >= 0")));
            }
        }
        Ok(m)
    }

    /// Low-power 0.18 um reference sensor.
    pub fn design1() -> Self {
        PowerModel {
            io: 27.0,
            adc: 60.0,
            pixel: 1.8,
            other: 4.2,
            jpeg: 13.18,
        }
    }

    /// High-speed reference sensor.
    pub fn design2() -> Self {
        PowerModel {
            io: 70.0,
            adc: 209.0,
            pixel: 23.0,
            other: 20.0,
            jpeg: 386.3,
        }
    }

    pub fn get(&self, category: PowerCategory) -> f64 {
        match category {
            PowerCategory::Io => self.io,
            PowerCategory::Adc => self.adc,
            PowerCategory::Pixel => self.pixel,
            PowerCategory::Other => self.other,
            PowerCategory::Jpeg => self.jpeg,
        }
    }

    pub fn total(&self) -> f64 {
        PowerCategory::ALL.iter().map(|&c| self.get(c)).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PowerBreakdown {
    pub compression_ratio: f64,
    /// Estimated mW per category, in [`PowerCategory::ALL`] order.
    pub categories: Vec<(PowerCategory, f64)>,
    pub total: f64,
    pub baseline_total: f64,
    pub savings_pct: f64,
}

impl PowerBreakdown {
    pub fn get(&self, category: PowerCategory) -> f64 {
        self.categories
            .iter()
            .find(|(c, _)| *c == category)
            .map_or(0.0, |&(_, v)| v)
    }
}

/// Power with a fraction `cr` of the raw readout removed on chip.
pub fn estimate_power(model: &PowerModel, compression_ratio: f64) -> Result<PowerBreakdown> {
    if !(0.0..1.0).contains(&compression_ratio) {
        return Err(Error::invalid(format!(
            "compression ratio {compression_ratio} outside [0, 1)"
        )));
    }
    let categories: Vec<(PowerCategory, f64)> = PowerCategory::ALL
        .iter()
        .map(|&c| {
            let base = model.get(c);
            (
                c,
                if c.scaled() {
                    base * (1.0 - compression_ratio)
                } else {
                    base
                },
            )
        })
        .collect();
    let total = categories.iter().map(|c| c.1).sum();
    let baseline_total = model.total();
    let savings_pct = if baseline_total > 0.0 {
        100.0 * (1.0 - total / baseline_total)
    } else {
        0.0
    };
    Ok(PowerBreakdown {
        compression_ratio,
        categories,
        total,
        baseline_total,
        savings_pct,
    })
}

/// Compression ratio implied by storing each measurement in `bit_depth` bits.
pub fn compression_ratio_for(bit_depth: u8) -> Result<f64> {
    Ok(onchip_compression(bit_depth)? / 100.0)
}
