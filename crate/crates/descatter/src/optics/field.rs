use num_complex::Complex64;
use rustfft::FftPlanner;
use std::f64::consts::PI;

use crate::error::{Error, Result};

use super::image::Image;

/// Laser wavelength of the simulated bench, in meters.
pub const DEFAULT_WAVELENGTH: f64 = 880e-9;
/// Sample pitch of the simulated detector/SLM plane, in meters.
pub const DEFAULT_PITCH: f64 = 20e-6;

/// Scalar complex optical field sampled on an `n x n` grid.
#[derive(Clone, Debug)]
pub struct ComplexField {
    pub n: usize,
    pub values: Vec<Complex64>,
    /// Sample pitch in meters.
    pub dx: f64,
    /// Wavelength in meters.
    pub wavelength: f64,
}

impl ComplexField {
    pub fn new(n: usize, values: Vec<Complex64>, dx: f64, wavelength: f64) -> Result<Self> {
        if values.len() != n * n {
            return Err(Error::shape(
                "ComplexField::new",
                format!("side {n} needs {} samples, got {}", n * n, values.len()),
            ));
        }
        Ok(ComplexField {
            n,
            values,
            dx,
            wavelength,
        })
    }

    /// Field whose amplitude is the square root of the image intensity,
    /// with zero phase. This stands in for the hologram injection stage.
    pub fn from_intensity(img: &Image) -> Self {
        ComplexField {
            n: img.n(),
            values: img
                .pixels()
                .iter()
                .map(|&p| Complex64::new((p.max(0.0) as f64).sqrt(), 0.0))
                .collect(),
            dx: DEFAULT_PITCH,
            wavelength: DEFAULT_WAVELENGTH,
        }
    }

    /// Total power `sum |values|^2`.
    pub fn power(&self) -> f64 {
        self.values.iter().map(|v| v.norm_sqr()).sum()
    }

    /// Detected intensity pattern `|values|^2` as an image.
    pub fn intensity(&self) -> Image {
        Image::from_pixels(
            self.n,
            self.values.iter().map(|v| v.norm_sqr() as f32).collect(),
        )
        .expect("matching size")
    }
}

/// In-place 2-D FFT. `inverse` applies the 1/n^2 normalization so that
/// forward followed by inverse is the identity.
pub(crate) fn fft2(values: &mut [Complex64], n: usize, inverse: bool) {
    let mut planner = FftPlanner::new();
    let fft = if inverse {
        planner.plan_fft_inverse(n)
    } else {
        planner.plan_fft_forward(n)
    };
    // rows
    for row in values.chunks_exact_mut(n) {
        fft.process(row);
    }
    // columns, via transpose
    let mut col = vec![Complex64::default(); n];
    for x in 0..n {
        for y in 0..n {
            col[y] = values[y * n + x];
        }
        fft.process(&mut col);
        for y in 0..n {
            values[y * n + x] = col[y];
        }
    }
    if inverse {
        let scale = 1.0 / (n * n) as f64;
        for v in values.iter_mut() {
            *v *= scale;
        }
    }
}

/// FFT sample frequencies in cycles per meter for grid pitch `d`.
fn fft_freq(n: usize, d: f64, j: usize) -> f64 {
    let j = j as isize;
    let n = n as isize;
    let signed = if j <= (n - 1) / 2 { j } else { j - n };
    signed as f64 / (n as f64 * d)
}

/// Free-space propagation by the angular spectrum method: multiply the 2-D
/// spectrum by `exp(i z sqrt(k^2 - kx^2 - ky^2))` and transform back.
/// Evanescent components (`kx^2 + ky^2 > k^2`) are set to zero.
pub fn propagate_angular_spectrum(field: &ComplexField, z: f64) -> Result<ComplexField> {
    if z < 0.0 {
        return Err(Error::Config(format!(
            "propagation distance must be non-negative, got {z}"
        )));
    }
    let n = field.n;
    let k = 2.0 * PI / field.wavelength;
    let mut spectrum = field.values.clone();
    fft2(&mut spectrum, n, false);
    for jy in 0..n {
        let ky = 2.0 * PI * fft_freq(n, field.dx, jy);
        for jx in 0..n {
            let kx = 2.0 * PI * fft_freq(n, field.dx, jx);
            let kz_sq = k * k - kx * kx - ky * ky;
            let idx = jy * n + jx;
            if kz_sq > 0.0 {
                spectrum[idx] *= Complex64::from_polar(1.0, kz_sq.sqrt() * z);
            } else {
                spectrum[idx] = Complex64::new(0.0, 0.0);
            }
        }
    }
    fft2(&mut spectrum, n, true);
    ComplexField::new(n, spectrum, field.dx, field.wavelength)
}
