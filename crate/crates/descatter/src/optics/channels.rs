//! The three forward scattering maps: free space (reference arm), thin
//! random phase screen plus free-space propagation (glass diffuser), and a
//! random unitary transmission matrix (multi-mode fiber).

use num_complex::Complex64;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

use super::field::{propagate_angular_spectrum, ComplexField};
use super::image::{normalize, resize_bilinear, Image};
use super::screen::{crop_center, make_phase_screen, rotate_nearest};

/// Which optical channel an image went through.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ChannelKind {
    Free,
    Diffuser,
    Mmf,
}

impl fmt::Display for ChannelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ChannelKind::Free => "free",
            ChannelKind::Diffuser => "diffuser",
            ChannelKind::Mmf => "mmf",
        })
    }
}

impl FromStr for ChannelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "free" => Ok(ChannelKind::Free),
            "diffuser" => Ok(ChannelKind::Diffuser),
            "mmf" => Ok(ChannelKind::Mmf),
            other => Err(Error::Config(format!(
                "unknown channel kind {other:?} (expected free, diffuser or mmf)"
            ))),
        }
    }
}

/// Glass diffuser model parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DiffuserParams {
    /// Correlation length of the phase screen, in pixels.
    pub corr_len_px: f64,
    /// Screen-to-detector propagation distance, in meters.
    pub z: f64,
    /// Screen rotation about the oversized grid center, in degrees.
    pub rotation_deg: f64,
    /// The screen is generated at `screen_oversize * n` so rotations expose
    /// fresh off-center structure.
    pub screen_oversize: usize,
}

impl Default for DiffuserParams {
    fn default() -> Self {
        DiffuserParams {
            corr_len_px: 4.0,
            z: 0.02,
            rotation_deg: 0.0,
            screen_oversize: 2,
        }
    }
}

/// Multi-mode fiber model parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MmfParams {
    /// Number of guided modes; must be a perfect square.
    pub modes: usize,
}

impl Default for MmfParams {
    fn default() -> Self {
        MmfParams { modes: 256 }
    }
}

/// Full parameterization of one forward scattering map. Together with an
/// input image this determines the output bit for bit.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChannelConfig {
    pub kind: ChannelKind,
    pub seed: u64,
    pub diffuser: DiffuserParams,
    pub mmf: MmfParams,
}

impl ChannelConfig {
    pub fn free() -> Self {
        ChannelConfig {
            kind: ChannelKind::Free,
            seed: 0,
            diffuser: DiffuserParams::default(),
            mmf: MmfParams::default(),
        }
    }

    pub fn diffuser(seed: u64) -> Self {
        ChannelConfig {
            kind: ChannelKind::Diffuser,
            seed,
            ..ChannelConfig::free()
        }
    }

    pub fn mmf(seed: u64) -> Self {
        ChannelConfig {
            kind: ChannelKind::Mmf,
            seed,
            ..ChannelConfig::free()
        }
    }

    pub fn with_rotation(mut self, deg: f64) -> Self {
        self.diffuser.rotation_deg = deg;
        self
    }
}

/// A channel prepared for a fixed image side `n`: the phase screen and the
/// transmission matrix are computed once and reused for every sample.
pub struct Channel {
    cfg: ChannelConfig,
    n: usize,
    screen: Option<Vec<f64>>,
    tm: Option<Vec<Complex64>>,
    tm_side: usize,
}

impl Channel {
    pub fn new(cfg: &ChannelConfig, n: usize) -> Result<Self> {
        let mut ch = Channel {
            cfg: *cfg,
            n,
            screen: None,
            tm: None,
            tm_side: 0,
        };
        match cfg.kind {
            ChannelKind::Free => {}
            ChannelKind::Diffuser => {
                let d = &cfg.diffuser;
                if d.screen_oversize < 1 {
                    return Err(Error::Config(format!(
                        "screen_oversize must be at least 1, got {}",
                        d.screen_oversize
                    )));
                }
                let big = d.screen_oversize * n;
                let screen = make_phase_screen(big, d.corr_len_px, cfg.seed)?;
                let rotated = rotate_nearest(&screen, big, d.rotation_deg);
                ch.screen = Some(crop_center(&rotated, big, n));
            }
            ChannelKind::Mmf => {
                let modes = cfg.mmf.modes;
                let m = (modes as f64).sqrt().round() as usize;
                if m * m != modes {
                    return Err(Error::Config(format!(
                        "mmf modes must be a perfect square, got {modes}"
                    )));
                }
                if modes > n * n || m == 0 {
                    return Err(Error::Config(format!(
                        "mmf modes {modes} exceed the {n}x{n} pixel grid"
                    )));
                }
                if n % m != 0 {
                    return Err(Error::Config(format!(
                        "image side {n} must be divisible by the mode grid side {m}"
                    )));
                }
                ch.tm = Some(random_unitary(modes, cfg.seed));
                ch.tm_side = m;
            }
        }
        Ok(ch)
    }

    pub fn config(&self) -> &ChannelConfig {
        &self.cfg
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Runs one image through the channel. Output is normalized to `[0, 1]`.
    pub fn apply(&self, img: &Image) -> Result<Image> {
        if img.n() != self.n {
            return Err(Error::shape(
                "Channel::apply",
                format!("channel prepared for side {}, image has {}", self.n, img.n()),
            ));
        }
        match self.cfg.kind {
            ChannelKind::Free => Ok(normalize(img)),
            ChannelKind::Diffuser => {
                let screen = self.screen.as_ref().expect("prepared");
                let mut field = ComplexField::from_intensity(img);
                for (v, &phi) in field.values.iter_mut().zip(screen) {
                    *v *= Complex64::from_polar(1.0, phi);
                }
                let out = propagate_angular_spectrum(&field, self.cfg.diffuser.z)?;
                Ok(normalize(&out.intensity()))
            }
            ChannelKind::Mmf => {
                let m = self.tm_side;
                let tm = self.tm.as_ref().expect("prepared");
                let field = ComplexField::from_intensity(img);
                let modes_in = block_average(&field.values, self.n, m);
                let mut out_modes = vec![Complex64::default(); m * m];
                for (i, out) in out_modes.iter_mut().enumerate() {
                    let row = &tm[i * m * m..(i + 1) * m * m];
                    let mut acc = Complex64::default();
                    for (t, v) in row.iter().zip(&modes_in) {
                        acc += t * v;
                    }
                    *out = acc;
                }
                let small = Image::from_pixels(
                    m,
                    out_modes.iter().map(|v| v.norm_sqr() as f32).collect(),
                )?;
                Ok(normalize(&resize_bilinear(&small, self.n)?))
            }
        }
    }
}

/// Complex mean over non-overlapping `(n/m) x (n/m)` blocks.
fn block_average(values: &[Complex64], n: usize, m: usize) -> Vec<Complex64> {
    let b = n / m;
    let inv = 1.0 / (b * b) as f64;
    let mut out = vec![Complex64::default(); m * m];
    for by in 0..m {
        for bx in 0..m {
            let mut acc = Complex64::default();
            for y in 0..b {
                for x in 0..b {
                    acc += values[(by * b + y) * n + bx * b + x];
                }
            }
            out[by * m + bx] = acc * inv;
        }
    }
    out
}

/// Seeded random unitary matrix: a complex Gaussian matrix orthonormalized
/// column by column (modified Gram-Schmidt with a re-orthogonalization
/// pass). Stored row-major, `dim x dim`.
pub fn random_unitary(dim: usize, seed: u64) -> Vec<Complex64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cols: Vec<Vec<Complex64>> = (0..dim)
        .map(|_| {
            (0..dim)
                .map(|_| {
                    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
                    let u2: f64 = rng.gen_range(0.0..1.0);
                    let r = (-2.0 * u1.ln()).sqrt();
                    let (s, c) = (2.0 * PI * u2).sin_cos();
                    Complex64::new(r * c, r * s)
                })
                .collect()
        })
        .collect();
    for j in 0..dim {
        for _pass in 0..2 {
            for i in 0..j {
                let proj: Complex64 = cols[i]
                    .iter()
                    .zip(&cols[j])
                    .map(|(a, b)| a.conj() * b)
                    .sum();
                for k in 0..dim {
                    let d = proj * cols[i][k];
                    cols[j][k] -= d;
                }
            }
        }
        let norm = cols[j].iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
        let inv = 1.0 / norm;
        for v in cols[j].iter_mut() {
            *v *= inv;
        }
    }
    let mut out = vec![Complex64::default(); dim * dim];
    for (j, col) in cols.iter().enumerate() {
        for (i, &v) in col.iter().enumerate() {
            out[i * dim + j] = v;
        }
    }
    out
}

/// Reference arm: identity followed by normalization.
pub fn free_channel(img: &Image) -> Image {
    normalize(img)
}

/// One-shot diffuser channel; prefer [`Channel`] when mapping many images.
pub fn diffuser_channel(img: &Image, cfg: &ChannelConfig) -> Result<Image> {
    if cfg.kind != ChannelKind::Diffuser {
        return Err(Error::Config(format!(
            "diffuser_channel requires kind = diffuser, got {}",
            cfg.kind
        )));
    }
    Channel::new(cfg, img.n())?.apply(img)
}

/// One-shot fiber channel; prefer [`Channel`] when mapping many images.
pub fn mmf_channel(img: &Image, cfg: &ChannelConfig) -> Result<Image> {
    if cfg.kind != ChannelKind::Mmf {
        return Err(Error::Config(format!(
            "mmf_channel requires kind = mmf, got {}",
            cfg.kind
        )));
    }
    Channel::new(cfg, img.n())?.apply(img)
}
