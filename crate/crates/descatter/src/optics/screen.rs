//! Thin random phase screens: seeded white Gaussian noise, low-pass filtered
//! in the frequency domain to the requested correlation length, scaled to a
//! phase standard deviation of 2*pi (strong scattering) and wrapped.

use num_complex::Complex64;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;

use crate::error::{Error, Result};

use super::field::fft2;

/// Correlated Gaussian random field with zero mean and unit standard
/// deviation. The spatial autocorrelation is Gaussian with half-width
/// `corr_len_px * sqrt(2 ln 2)`.
pub fn gaussian_random_field(n: usize, corr_len_px: f64, rng: &mut impl Rng) -> Vec<f64> {
    // white noise via Box-Muller
    let mut values: Vec<Complex64> = Vec::with_capacity(n * n);
    while values.len() < n * n {
        let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
        let u2: f64 = rng.gen_range(0.0..1.0);
        let r = (-2.0 * u1.ln()).sqrt();
        let (s, c) = (2.0 * PI * u2).sin_cos();
        values.push(Complex64::new(r * c, 0.0));
        if values.len() < n * n {
            values.push(Complex64::new(r * s, 0.0));
        }
    }
    // Gaussian low-pass: the squared filter gives the power spectrum
    // exp(-k^2 l^2 / 2), i.e. autocorrelation exp(-x^2 / (2 l^2)).
    fft2(&mut values, n, false);
    for jy in 0..n {
        let ky = angular_freq(n, jy);
        for jx in 0..n {
            let kx = angular_freq(n, jx);
            let gain = (-(kx * kx + ky * ky) * corr_len_px * corr_len_px / 4.0).exp();
            values[jy * n + jx] *= gain;
        }
    }
    fft2(&mut values, n, true);
    let mut field: Vec<f64> = values.iter().map(|v| v.re).collect();
    let mean = field.iter().sum::<f64>() / field.len() as f64;
    let var = field.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / field.len() as f64;
    let inv_std = 1.0 / var.sqrt().max(f64::MIN_POSITIVE);
    for v in field.iter_mut() {
        *v = (*v - mean) * inv_std;
    }
    field
}

/// Angular frequency in radians per pixel for FFT bin `j`.
fn angular_freq(n: usize, j: usize) -> f64 {
    let j = j as isize;
    let n = n as isize;
    let signed = if j <= (n - 1) / 2 { j } else { j - n };
    2.0 * PI * signed as f64 / n as f64
}

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_phase(v: f64) -> f64 {
    let w = v.rem_euclid(2.0 * PI);
    if w > PI {
        w - 2.0 * PI
    } else {
        w
    }
}

/// Seeded diffuser phase screen: correlated Gaussian field scaled to a
/// standard deviation of 2*pi, wrapped into `(-pi, pi]`.
pub fn make_phase_screen(n: usize, corr_len_px: f64, seed: u64) -> Result<Vec<f64>> {
    if n < 32 {
        return Err(Error::Config(format!(
            "phase screen side must be at least 32 pixels, got {n}"
        )));
    }
    if corr_len_px < 1.0 {
        return Err(Error::Config(format!(
            "correlation length must be at least 1 pixel, got {corr_len_px}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let field = gaussian_random_field(n, corr_len_px, &mut rng);
    Ok(field.iter().map(|&v| wrap_phase(2.0 * PI * v)).collect())
}

/// Rotates a square array about its grid center by `deg` degrees using
/// nearest-neighbour resampling. Source positions falling outside the grid
/// become zero.
pub fn rotate_nearest(values: &[f64], n: usize, deg: f64) -> Vec<f64> {
    let theta = deg.to_radians();
    let (s, c) = (theta.sin(), theta.cos());
    let center = (n as f64 - 1.0) / 2.0;
    let mut out = vec![0.0; n * n];
    for y in 0..n {
        let dy = y as f64 - center;
        for x in 0..n {
            let dxx = x as f64 - center;
            // inverse rotation of the destination position
            let sx = center + c * dxx + s * dy;
            let sy = center - s * dxx + c * dy;
            let ix = sx.round();
            let iy = sy.round();
            if ix >= 0.0 && iy >= 0.0 && (ix as usize) < n && (iy as usize) < n {
                out[y * n + x] = values[iy as usize * n + ix as usize];
            }
        }
    }
    out
}

/// Central `n_dst x n_dst` window of an `n_src x n_src` array.
pub fn crop_center(values: &[f64], n_src: usize, n_dst: usize) -> Vec<f64> {
    assert!(n_dst <= n_src);
    let off = (n_src - n_dst) / 2;
    let mut out = Vec::with_capacity(n_dst * n_dst);
    for y in 0..n_dst {
        let row = (y + off) * n_src + off;
        out.extend_from_slice(&values[row..row + n_dst]);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn screens_are_deterministic_per_seed() {
        let a = make_phase_screen(64, 4.0, 7).unwrap();
        let b = make_phase_screen(64, 4.0, 7).unwrap();
        assert_eq!(a, b);
        let c = make_phase_screen(64, 4.0, 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn screen_values_are_wrapped() {
        let s = make_phase_screen(64, 4.0, 3).unwrap();
        assert!(s.iter().all(|&v| v > -PI - 1e-12 && v <= PI + 1e-12));
    }

    #[test]
    fn rejects_degenerate_parameters() {
        assert!(make_phase_screen(16, 4.0, 0).is_err());
        assert!(make_phase_screen(64, 0.5, 0).is_err());
    }

    /// Empirical autocorrelation half-width of the underlying correlated
    /// field (the wrapped screen itself is phase-scrambled by design).
    #[test]
    fn autocorrelation_half_width_tracks_corr_len() {
        let n = 64;
        let corr_len = 4.0;
        let mut widths = Vec::new();
        for seed in 0..20u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let f = gaussian_random_field(n, corr_len, &mut rng);
            // row autocorrelation with periodic wrap
            let r_at = |lag: usize| -> f64 {
                let mut acc = 0.0;
                for y in 0..n {
                    for x in 0..n {
                        acc += f[y * n + x] * f[y * n + (x + lag) % n];
                    }
                }
                acc / (n * n) as f64
            };
            let r0 = r_at(0);
            let mut half = n as f64 / 2.0;
            let mut prev = 1.0;
            for lag in 1..n / 2 {
                let r = r_at(lag) / r0;
                if r < 0.5 {
                    // linear interpolation between lags
                    half = (lag - 1) as f64 + (prev - 0.5) / (prev - r);
                    break;
                }
                prev = r;
            }
            widths.push(half);
        }
        let mean = widths.iter().sum::<f64>() / widths.len() as f64;
        assert!(
            mean > 0.5 * corr_len && mean < 1.5 * corr_len,
            "half-width {mean} outside +/-50% of {corr_len}"
        );
    }

    /// Chi-square sanity of the wrapped phase histogram. Pixels are strided
    /// by twice the correlation length so counts are close to independent.
    #[test]
    fn wrapped_phase_is_approximately_uniform() {
        let bins = 20;
        let mut counts = vec![0usize; bins];
        let stride = 8;
        let n = 64;
        for seed in 0..20u64 {
            let s = make_phase_screen(n, 4.0, 1000 + seed).unwrap();
            for y in (0..n).step_by(stride) {
                for x in (0..n).step_by(stride) {
                    let v = s[y * n + x];
                    let b = (((v + PI) / (2.0 * PI)) * bins as f64) as usize;
                    counts[b.min(bins - 1)] += 1;
                }
            }
        }
        let total: usize = counts.iter().sum();
        let expect = total as f64 / bins as f64;
        let chi2: f64 = counts
            .iter()
            .map(|&c| (c as f64 - expect).powi(2) / expect)
            .sum();
        // chi-square critical value, 19 dof, p = 0.01
        assert!(chi2 < 36.19, "chi2 {chi2} rejects uniformity");
    }

    #[test]
    fn full_turn_rotation_is_identity() {
        let s = make_phase_screen(64, 4.0, 5).unwrap();
        let r = rotate_nearest(&s, 64, 360.0);
        assert_eq!(s, r);
    }

    #[test]
    fn crop_takes_central_window() {
        let n = 6;
        let vals: Vec<f64> = (0..n * n).map(|i| i as f64).collect();
        let c = crop_center(&vals, n, 2);
        assert_eq!(c, vec![14.0, 15.0, 20.0, 21.0]);
    }
}
