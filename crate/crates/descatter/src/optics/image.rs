use crate::error::{Error, Result};

/// Square grayscale pattern with values in `[0, 1]` once normalized.
/// Pixels are stored row-major in `f32`, the on-disk precision.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    n: usize,
    pixels: Vec<f32>,
}

impl Image {
    pub fn zeros(n: usize) -> Self {
        Image {
            n,
            pixels: vec![0.0; n * n],
        }
    }

    pub fn from_pixels(n: usize, pixels: Vec<f32>) -> Result<Self> {
        if pixels.len() != n * n {
            return Err(Error::shape(
                "Image::from_pixels",
                format!("side {n} needs {} pixels, got {}", n * n, pixels.len()),
            ));
        }
        Ok(Image { n, pixels })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [f32] {
        &mut self.pixels
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f32 {
        self.pixels[y * self.n + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, v: f32) {
        self.pixels[y * self.n + x] = v;
    }

    pub fn min_max(&self) -> (f32, f32) {
        let mut lo = f32::INFINITY;
        let mut hi = f32::NEG_INFINITY;
        for &p in &self.pixels {
            lo = lo.min(p);
            hi = hi.max(p);
        }
        (lo, hi)
    }

    pub fn all_finite(&self) -> bool {
        self.pixels.iter().all(|p| p.is_finite())
    }
}

/// Affine min-max rescale to `[0, 1]`. A constant image maps to all zeros
/// (there is no contrast to preserve and it keeps the map total).
pub fn normalize(img: &Image) -> Image {
    let (lo, hi) = img.min_max();
    let span = (hi - lo) as f64;
    if span <= 0.0 {
        return Image::zeros(img.n);
    }
    let pixels = img
        .pixels
        .iter()
        .map(|&p| (((p - lo) as f64) / span) as f32)
        .collect();
    Image {
        n: img.n,
        pixels,
    }
}

/// Bilinear upsampling with the align-corners convention: source coordinate
/// `dst * (n_src - 1) / (n_dst - 1)`, so the four corner pixels are copied
/// exactly. Downsizing is out of scope.
pub fn resize_bilinear(img: &Image, target_n: usize) -> Result<Image> {
    if target_n < img.n {
        return Err(Error::Config(format!(
            "resize_bilinear only upsizes: source {} > target {target_n}",
            img.n
        )));
    }
    if target_n == img.n {
        return Ok(img.clone());
    }
    let src_n = img.n;
    let scale = if target_n > 1 {
        (src_n - 1) as f64 / (target_n - 1) as f64
    } else {
        0.0
    };
    let mut out = Image::zeros(target_n);
    for y in 0..target_n {
        let fy = y as f64 * scale;
        let y0 = (fy.floor() as usize).min(src_n - 1);
        let y1 = (y0 + 1).min(src_n - 1);
        let wy = fy - y0 as f64;
        for x in 0..target_n {
            let fx = x as f64 * scale;
            let x0 = (fx.floor() as usize).min(src_n - 1);
            let x1 = (x0 + 1).min(src_n - 1);
            let wx = fx - x0 as f64;
            let v00 = img.get(y0, x0) as f64;
            let v01 = img.get(y0, x1) as f64;
            let v10 = img.get(y1, x0) as f64;
            let v11 = img.get(y1, x1) as f64;
            let v = v00 * (1.0 - wy) * (1.0 - wx)
                + v01 * (1.0 - wy) * wx
                + v10 * wy * (1.0 - wx)
                + v11 * wy * wx;
            out.set(y, x, v as f32);
        }
    }
    Ok(out)
}
