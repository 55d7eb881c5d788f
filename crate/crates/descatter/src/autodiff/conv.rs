//! Dense compute kernels behind the graph ops. All loops are single-threaded
//! and run in a fixed order, so results are bitwise reproducible.

use super::tensor::Scalar;

/// Dot product with eight independent accumulators so the reduction vectorizes.
#[inline]
pub(crate) fn dot<E: Scalar>(a: &[E], b: &[E]) -> E {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [E::zero(); 8];
    let chunks = a.len() / 8;
    for i in 0..chunks {
        let (ca, cb) = (&a[i * 8..i * 8 + 8], &b[i * 8..i * 8 + 8]);
        for l in 0..8 {
            acc[l] += ca[l] * cb[l];
        }
    }
    let mut tail = E::zero();
    for i in chunks * 8..a.len() {
        tail += a[i] * b[i];
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

#[inline]
fn axpy<E: Scalar>(y: &mut [E], a: E, x: &[E]) {
    debug_assert_eq!(y.len(), x.len());
    for (yo, xi) in y.iter_mut().zip(x) {
        *yo += a * *xi;
    }
}

/// Row range of output positions `o` with `o + d - pad` inside `[0, extent)`.
#[inline]
fn valid_range(extent: usize, d: usize, pad: usize) -> (usize, usize) {
    let lo = pad.saturating_sub(d);
    let hi = (extent + pad).saturating_sub(d).min(extent);
    (lo, hi.max(lo))
}

/// Same-padding cross-correlation. `out` must be zero-initialized with shape
/// `[b, co, h, w]`; `kernel` is `[co, ci, k, k]`.
pub(crate) fn conv2d_forward<E: Scalar>(
    input: &[E],
    kernel: &[E],
    bias: &[E],
    out: &mut [E],
    (b_n, ci_n, h, w): (usize, usize, usize, usize),
    co_n: usize,
    k: usize,
    pad: usize,
) {
    let plane = h * w;
    for b in 0..b_n {
        for co in 0..co_n {
            let out_plane = &mut out[(b * co_n + co) * plane..][..plane];
            out_plane.fill(bias[co]);
            for ci in 0..ci_n {
                let in_plane = &input[(b * ci_n + ci) * plane..][..plane];
                let kbase = ((co * ci_n + ci) * k) * k;
                for dy in 0..k {
                    let (oy0, oy1) = valid_range(h, dy, pad);
                    for dx in 0..k {
                        let wgt = kernel[kbase + dy * k + dx];
                        let (ox0, ox1) = valid_range(w, dx, pad);
                        if ox0 >= ox1 {
                            continue;
                        }
                        for oy in oy0..oy1 {
                            let iy = oy + dy - pad;
                            let ix0 = ox0 + dx - pad;
                            axpy(
                                &mut out_plane[oy * w + ox0..oy * w + ox1],
                                wgt,
                                &in_plane[iy * w + ix0..iy * w + ix0 + (ox1 - ox0)],
                            );
                        }
                    }
                }
            }
        }
    }
}

/// Gradient of the convolution w.r.t. its input. `grad_in` must be
/// zero-initialized with the input's shape.
pub(crate) fn conv2d_backward_input<E: Scalar>(
    grad_out: &[E],
    kernel: &[E],
    grad_in: &mut [E],
    (b_n, ci_n, h, w): (usize, usize, usize, usize),
    co_n: usize,
    k: usize,
    pad: usize,
) {
    let plane = h * w;
    for b in 0..b_n {
        for ci in 0..ci_n {
            let gi_plane = &mut grad_in[(b * ci_n + ci) * plane..][..plane];
            for co in 0..co_n {
                let go_plane = &grad_out[(b * co_n + co) * plane..][..plane];
                let kbase = ((co * ci_n + ci) * k) * k;
                for dy in 0..k {
                    // input row iy receives from output row oy = iy + pad - dy
                    let (iy0, iy1) = valid_range(h, pad, dy);
                    for dx in 0..k {
                        let wgt = kernel[kbase + dy * k + dx];
                        let (ix0, ix1) = valid_range(w, pad, dx);
                        if ix0 >= ix1 {
                            continue;
                        }
                        for iy in iy0..iy1 {
                            let oy = iy + pad - dy;
                            let ox0 = ix0 + pad - dx;
                            axpy(
                                &mut gi_plane[iy * w + ix0..iy * w + ix1],
                                wgt,
                                &go_plane[oy * w + ox0..oy * w + ox0 + (ix1 - ix0)],
                            );
                        }
                    }
                }
            }
        }
    }
}

/// Gradients of the convolution w.r.t. kernel and bias. Buffers must be
/// zero-initialized.
pub(crate) fn conv2d_backward_kernel<E: Scalar>(
    input: &[E],
    grad_out: &[E],
    grad_kernel: &mut [E],
    grad_bias: &mut [E],
    (b_n, ci_n, h, w): (usize, usize, usize, usize),
    co_n: usize,
    k: usize,
    pad: usize,
) {
    let plane = h * w;
    for co in 0..co_n {
        let mut bsum = E::zero();
        for b in 0..b_n {
            let go_plane = &grad_out[(b * co_n + co) * plane..][..plane];
            bsum += go_plane.iter().fold(E::zero(), |s, &v| s + v);
            for ci in 0..ci_n {
                let in_plane = &input[(b * ci_n + ci) * plane..][..plane];
                let kbase = ((co * ci_n + ci) * k) * k;
                for dy in 0..k {
                    let (oy0, oy1) = valid_range(h, dy, pad);
                    for dx in 0..k {
                        let (ox0, ox1) = valid_range(w, dx, pad);
                        if ox0 >= ox1 {
                            continue;
                        }
                        let mut acc = E::zero();
                        for oy in oy0..oy1 {
                            let iy = oy + dy - pad;
                            let ix0 = ox0 + dx - pad;
                            acc += dot(
                                &go_plane[oy * w + ox0..oy * w + ox1],
                                &in_plane[iy * w + ix0..iy * w + ix0 + (ox1 - ox0)],
                            );
                        }
                        grad_kernel[kbase + dy * k + dx] += acc;
                    }
                }
            }
        }
        grad_bias[co] += bsum;
    }
}

/// 2x2 non-overlapping max pooling. Returns per-output argmax as flat input
/// indices; ties resolve to the first candidate in row-major order.
pub(crate) fn maxpool2d_forward<E: Scalar>(
    input: &[E],
    out: &mut [E],
    argmax: &mut [u32],
    (b_n, c_n, h, w): (usize, usize, usize, usize),
) {
    let (ho, wo) = (h / 2, w / 2);
    let plane = h * w;
    let oplane = ho * wo;
    for bc in 0..b_n * c_n {
        let ip = &input[bc * plane..][..plane];
        let op = &mut out[bc * oplane..][..oplane];
        let ap = &mut argmax[bc * oplane..][..oplane];
        for oy in 0..ho {
            for ox in 0..wo {
                let base = (oy * 2) * w + ox * 2;
                let idx = [base, base + 1, base + w, base + w + 1];
                let mut best = idx[0];
                let mut val = ip[idx[0]];
                for &i in &idx[1..] {
                    if ip[i] > val {
                        val = ip[i];
                        best = i;
                    }
                }
                op[oy * wo + ox] = val;
                ap[oy * wo + ox] = (bc * plane + best) as u32;
            }
        }
    }
}

pub(crate) fn maxpool2d_backward<E: Scalar>(grad_out: &[E], argmax: &[u32], grad_in: &mut [E]) {
    for (g, &src) in grad_out.iter().zip(argmax) {
        grad_in[src as usize] += *g;
    }
}

/// Nearest-neighbour 2x upsampling: each pixel becomes a 2x2 block.
pub(crate) fn upsample2x_forward<E: Scalar>(
    input: &[E],
    out: &mut [E],
    (b_n, c_n, h, w): (usize, usize, usize, usize),
) {
    let plane = h * w;
    let oplane = 4 * plane;
    let wo = 2 * w;
    for bc in 0..b_n * c_n {
        let ip = &input[bc * plane..][..plane];
        let op = &mut out[bc * oplane..][..oplane];
        for y in 0..h {
            for x in 0..w {
                let v = ip[y * w + x];
                let base = (y * 2) * wo + x * 2;
                op[base] = v;
                op[base + 1] = v;
                op[base + wo] = v;
                op[base + wo + 1] = v;
            }
        }
    }
}

/// Sums the four upstream gradients feeding each source pixel.
pub(crate) fn upsample2x_backward<E: Scalar>(
    grad_out: &[E],
    grad_in: &mut [E],
    (b_n, c_n, h, w): (usize, usize, usize, usize),
) {
    let plane = h * w;
    let oplane = 4 * plane;
    let wo = 2 * w;
    for bc in 0..b_n * c_n {
        let gop = &grad_out[bc * oplane..][..oplane];
        let gip = &mut grad_in[bc * plane..][..plane];
        for y in 0..h {
            for x in 0..w {
                let base = (y * 2) * wo + x * 2;
                gip[y * w + x] += gop[base] + gop[base + 1] + gop[base + wo] + gop[base + wo + 1];
            }
        }
    }
}

/// Channel concatenation: `a` fills channels `[0, c1)`, `b` fills `[c1, c1+c2)`.
pub(crate) fn concat_forward<E: Scalar>(
    a: &[E],
    b: &[E],
    out: &mut [E],
    (b_n, c1, c2, plane): (usize, usize, usize, usize),
) {
    for bi in 0..b_n {
        let dst = &mut out[bi * (c1 + c2) * plane..][..(c1 + c2) * plane];
        dst[..c1 * plane].copy_from_slice(&a[bi * c1 * plane..][..c1 * plane]);
        dst[c1 * plane..].copy_from_slice(&b[bi * c2 * plane..][..c2 * plane]);
    }
}

pub(crate) fn concat_backward<E: Scalar>(
    grad_out: &[E],
    grad_a: &mut [E],
    grad_b: &mut [E],
    (b_n, c1, c2, plane): (usize, usize, usize, usize),
) {
    for bi in 0..b_n {
        let src = &grad_out[bi * (c1 + c2) * plane..][..(c1 + c2) * plane];
        for (g, s) in grad_a[bi * c1 * plane..][..c1 * plane]
            .iter_mut()
            .zip(&src[..c1 * plane])
        {
            *g += *s;
        }
        for (g, s) in grad_b[bi * c2 * plane..][..c2 * plane]
            .iter_mut()
            .zip(&src[c1 * plane..])
        {
            *g += *s;
        }
    }
}
