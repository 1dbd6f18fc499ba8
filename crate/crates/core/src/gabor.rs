//! Gabor filter bank and normalized layer-1 responses.
//!
//! Each orientation has an even (cosine) and an odd (sine) kernel. The local
//! energy at a lattice position is the sum of both squared filter outputs and
//! the feature response is the square root of that energy divided by the
//! image's mean energy over all retained positions and orientations.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imageio::{GrayImage120, CANONICAL_SIDE};

/// Mean energies at or below this are treated as a constant image.
pub const XI_EPSILON: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum GaborError {
    #[error("invalid filter config: {0}")]
    InvalidFilterConfig(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaborConfig {
    /// Odd kernel side length in pixels.
    pub support: usize,
    /// Gaussian envelope scale in pixels.
    pub sigma: f64,
    /// Carrier wavelength in pixels.
    pub wavelength: f64,
    pub orientations: usize,
    /// Lattice subsampling step; 1 keeps every pixel.
    pub stride: usize,
}

impl Default for GaborConfig {
    fn default() -> Self {
        Self {
            support: 17,
            sigma: 5.0,
            wavelength: 8.0,
            orientations: 8,
            stride: 1,
        }
    }
}

impl GaborConfig {
    pub fn validate(&self) -> Result<(), GaborError> {
        let bad = |m: String| Err(GaborError::InvalidFilterConfig(m));
        if self.support < 5 || self.support.is_multiple_of(2) {
            return bad(format!(
                "support must be odd and >= 5, got {}",
                self.support
            ));
        }
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return bad(format!("sigma must be positive, got {}", self.sigma));
        }
        if !(self.wavelength.is_finite() && self.wavelength > 0.0) {
            return bad(format!(
                "wavelength must be positive, got {}",
                self.wavelength
            ));
        }
        if self.orientations < 2 {
            return bad(format!(
                "need at least 2 orientations, got {}",
                self.orientations
            ));
        }
        if self.stride == 0 || self.stride > CANONICAL_SIDE {
            return bad(format!("stride must be in 1..=120, got {}", self.stride));
        }
        Ok(())
    }

    /// Retained lattice positions along each axis.
    pub fn grid_side(&self) -> usize {
        CANONICAL_SIDE.div_ceil(self.stride)
    }

    /// Number of layer-1 features: retained positions times orientations.
    pub fn num_features(&self) -> usize {
        self.grid_side() * self.grid_side() * self.orientations
    }

    /// Orientation angle in radians for index `alpha`; the stripes of that
    /// filter run along this direction (x to the right, y down).
    pub fn angle(&self, alpha: usize) -> f64 {
        alpha as f64 * PI / self.orientations as f64
    }
}

/// Address of one layer-1 primitive.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GaborIndex {
    /// Column on the 120x120 lattice.
    pub w: u16,
    /// Row on the 120x120 lattice.
    pub h: u16,
    pub alpha: u16,
    pub scale: u16,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FilterBank {
    config: GaborConfig,
    even: Vec<Vec<f64>>,
    odd: Vec<Vec<f64>>,
}

pub fn build_filter_bank(
    support: usize,
    sigma: f64,
    wavelength: f64,
    orientations: usize,
) -> Result<FilterBank, GaborError> {
    FilterBank::new(GaborConfig {
        support,
        sigma,
        wavelength,
        orientations,
        ..GaborConfig::default()
    })
}

fn normalize_l2(kernel: &mut [f64]) {
    let norm = kernel.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        kernel.iter_mut().for_each(|v| *v /= norm);
    }
}

impl FilterBank {
    pub fn new(config: GaborConfig) -> Result<Self, GaborError> {
        config.validate()?;
        let radius = (config.support / 2) as isize;
        let mut even = Vec::with_capacity(config.orientations);
        let mut odd = Vec::with_capacity(config.orientations);
        for alpha in 0..config.orientations {
            let theta = config.angle(alpha);
            let (sin, cos) = theta.sin_cos();
            let mut e = Vec::with_capacity(config.support * config.support);
            let mut o = Vec::with_capacity(config.support * config.support);
            for y in -radius..=radius {
                for x in -radius..=radius {
                    let (x, y) = (x as f64, y as f64);
                    let envelope = (-(x * x + y * y) / (2.0 * config.sigma * config.sigma)).exp();
                    let phase = 2.0 * PI * (-x * sin + y * cos) / config.wavelength;
                    e.push(envelope * phase.cos());
                    o.push(envelope * phase.sin());
                }
            }
            let mean = e.iter().sum::<f64>() / e.len() as f64;
            e.iter_mut().for_each(|v| *v -= mean);
            normalize_l2(&mut e);
            normalize_l2(&mut o);
            even.push(e);
            odd.push(o);
        }
        Ok(Self { config, even, odd })
    }

    pub fn config(&self) -> &GaborConfig {
        &self.config
    }

    pub fn support(&self) -> usize {
        self.config.support
    }

    pub fn orientations(&self) -> usize {
        self.config.orientations
    }

    /// Row-major `support x support` weights.
    pub fn even_kernel(&self, alpha: usize) -> &[f64] {
        &self.even[alpha]
    }

    pub fn odd_kernel(&self, alpha: usize) -> &[f64] {
        &self.odd[alpha]
    }

    /// Binary PGM rendering of one kernel, zero mapped to mid-gray.
    pub fn kernel_pgm(&self, alpha: usize, odd: bool) -> Vec<u8> {
        let kernel = if odd {
            &self.odd[alpha]
        } else {
            &self.even[alpha]
        };
        let peak = kernel
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()))
            .max(f64::MIN_POSITIVE);
        let side = self.config.support;
        let mut out = format!("P5\n{side} {side}\n255\n").into_bytes();
        out.extend(
            kernel
                .iter()
                .map(|v| (127.5 + 127.5 * v / peak).round().clamp(0.0, 255.0) as u8),
        );
        out
    }
}

/// Squared even plus squared odd filter output per retained position and
/// orientation, laid out as `[position][orientation]` with positions in
/// row-major grid order.
#[derive(Clone, Debug, PartialEq)]
pub struct EnergyMap {
    config: GaborConfig,
    values: Vec<f64>,
}

impl EnergyMap {
    pub fn config(&self) -> &GaborConfig {
        &self.config
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn num_positions(&self) -> usize {
        self.values.len() / self.config.orientations
    }
}

/// Filter outputs at every retained lattice center. The image mean is
/// subtracted before zero padding so that a constant image has zero energy
/// everywhere, borders included. The even kernel is point-symmetric and the
/// odd one antisymmetric, so correlation and convolution give the same energy.
pub fn energy_map(img: &GrayImage120, bank: &FilterBank) -> EnergyMap {
    let cfg = &bank.config;
    let side = cfg.grid_side();
    let radius = (cfg.support / 2) as isize;
    let n = CANONICAL_SIDE as isize;
    let mean = img.pixels().iter().sum::<f64>() / img.pixels().len() as f64;
    let centered: Vec<f64> = img.pixels().iter().map(|p| p - mean).collect();
    let pixels = &centered;
    let values: Vec<f64> = (0..side * side)
        .into_par_iter()
        .flat_map_iter(|pos| {
            let row = ((pos / side) * cfg.stride) as isize;
            let col = ((pos % side) * cfg.stride) as isize;
            let y_lo = (-radius).max(-row);
            let y_hi = radius.min(n - 1 - row);
            let x_lo = (-radius).max(-col);
            let x_hi = radius.min(n - 1 - col);
            (0..cfg.orientations).map(move |alpha| {
                let even = &bank.even[alpha];
                let odd = &bank.odd[alpha];
                let mut re = 0.0;
                let mut im = 0.0;
                for dy in y_lo..=y_hi {
                    let img_row = ((row + dy) * n) as usize;
                    let k_row = ((dy + radius) * cfg.support as isize) as usize;
                    for dx in x_lo..=x_hi {
                        let p = pixels[img_row + (col + dx) as usize];
                        let k = k_row + (dx + radius) as usize;
                        re += p * even[k];
                        im += p * odd[k];
                    }
                }
                re * re + im * im
            })
        })
        .collect();
    EnergyMap {
        config: cfg.clone(),
        values,
    }
}

/// Normalized, square-rooted energies of one image.
#[derive(Clone, Debug, PartialEq)]
pub struct ResponseMap {
    config: GaborConfig,
    responses: Vec<f64>,
    xi_sq: f64,
}

impl ResponseMap {
    pub fn config(&self) -> &GaborConfig {
        &self.config
    }

    /// Flat responses; index `position * orientations + alpha`.
    pub fn responses(&self) -> &[f64] {
        &self.responses
    }

    /// Mean energy over retained positions and orientations.
    pub fn xi_sq(&self) -> f64 {
        self.xi_sq
    }

    pub fn is_degenerate(&self) -> bool {
        self.xi_sq <= XI_EPSILON
    }

    /// Response at lattice row `h`, column `w`, orientation `alpha`; `None`
    /// when the position is not on the retained grid.
    pub fn at(&self, w: usize, h: usize, alpha: usize) -> Option<f64> {
        feature_index(&self.config, w, h, alpha).map(|i| self.responses[i])
    }
}

/// Flat layer-1 feature index of a primitive.
pub fn feature_index(cfg: &GaborConfig, w: usize, h: usize, alpha: usize) -> Option<usize> {
    if w >= CANONICAL_SIDE
        || h >= CANONICAL_SIDE
        || alpha >= cfg.orientations
        || !w.is_multiple_of(cfg.stride)
        || !h.is_multiple_of(cfg.stride)
    {
        return None;
    }
    let side = cfg.grid_side();
    Some(((h / cfg.stride) * side + w / cfg.stride) * cfg.orientations + alpha)
}

/// Primitive address of a flat layer-1 feature index.
pub fn gabor_index(cfg: &GaborConfig, index: usize) -> GaborIndex {
    let side = cfg.grid_side();
    let alpha = index % cfg.orientations;
    let pos = index / cfg.orientations;
    GaborIndex {
        w: ((pos % side) * cfg.stride) as u16,
        h: ((pos / side) * cfg.stride) as u16,
        alpha: alpha as u16,
        scale: 0,
    }
}

pub fn normalize_responses(energies: &EnergyMap) -> ResponseMap {
    let count = energies.values.len() as f64;
    let xi_sq = energies.values.iter().sum::<f64>() / count;
    let responses = if xi_sq > XI_EPSILON {
        energies.values.iter().map(|e| (e / xi_sq).sqrt()).collect()
    } else {
        vec![0.0; energies.values.len()]
    };
    ResponseMap {
        config: energies.config.clone(),
        responses,
        xi_sq,
    }
}

/// Energy followed by normalization.
pub fn response_map(img: &GrayImage120, bank: &FilterBank) -> ResponseMap {
    normalize_responses(&energy_map(img, bank))
}
