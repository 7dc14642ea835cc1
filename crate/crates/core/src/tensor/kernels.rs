//! Raw forward/backward kernels on flat C×H×W buffers.

/// `c = a·b + beta·c` where `a` is m×k and `b` is k×n, both row-major,
/// optionally read transposed.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_transposed: bool,
    b: &[f64],
    b_transposed: bool,
    beta: f64,
    c: &mut [f64],
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let (rsa, csa) = if a_transposed { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_transposed { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: strides describe exactly the m×k, k×n and m×n extents checked
    // above, so every access stays inside the slices.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    pub fn patch(&self) -> usize {
        self.c_in * self.k * self.k
    }

    pub fn pixels(&self) -> usize {
        self.oh * self.ow
    }

    /// 1×1, stride 1, no padding: the input is already its own column matrix.
    pub fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }
}

pub(crate) fn im2col(g: &ConvGeom, input: &[f64]) -> Vec<f64> {
    let p = g.pixels();
    let mut cols = vec![0.0; g.patch() * p];
    for c in 0..g.c_in {
        let src = &input[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (c * g.k + ki) * g.k + kj;
                let dst = &mut cols[row * p..(row + 1) * p];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let src_row = &src[iy as usize * g.w..(iy as usize + 1) * g.w];
                    let out_row = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    for (ox, o) in out_row.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            *o = src_row[ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

pub(crate) fn col2im_add(g: &ConvGeom, cols: &[f64], grad_input: &mut [f64]) {
    let p = g.pixels();
    for c in 0..g.c_in {
        let dst = &mut grad_input[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (c * g.k + ki) * g.k + kj;
                let src = &cols[row * p..(row + 1) * p];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst_row = &mut dst[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..g.ow {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst_row[ix as usize] += src[oy * g.ow + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Returns the output and the column matrix (empty for pointwise convs).
pub(crate) fn conv2d_forward(
    g: &ConvGeom,
    input: &[f64],
    weight: &[f64],
    bias: Option<&[f64]>,
) -> (Vec<f64>, Vec<f64>) {
    let p = g.pixels();
    let mut out = vec![0.0; g.c_out * p];
    if let Some(b) = bias {
        for (o, chunk) in out.chunks_exact_mut(p).enumerate() {
            chunk.fill(b[o]);
        }
    }
    let cols = if g.is_pointwise() { Vec::new() } else { im2col(g, input) };
    let cols_ref = if g.is_pointwise() { input } else { &cols };
    gemm(g.c_out, g.patch(), p, weight, false, cols_ref, false, 1.0, &mut out);
    (out, cols)
}

/// Stride-1 cross-correlation evaluated straight from the definition.
/// Used as an independent reference for the im2col path.
#[cfg(test)]
pub(crate) fn conv2d_direct(g: &ConvGeom, input: &[f64], weight: &[f64], bias: Option<&[f64]>) -> Vec<f64> {
    let mut out = vec![0.0; g.c_out * g.pixels()];
    for o in 0..g.c_out {
        for oy in 0..g.oh {
            for ox in 0..g.ow {
                let mut acc = bias.map_or(0.0, |b| b[o]);
                for c in 0..g.c_in {
                    for ki in 0..g.k {
                        for kj in 0..g.k {
                            let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                            let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                            if iy >= 0 && ix >= 0 && (iy as usize) < g.h && (ix as usize) < g.w {
                                acc += weight[((o * g.c_in + c) * g.k + ki) * g.k + kj]
                                    * input[(c * g.h + iy as usize) * g.w + ix as usize];
                            }
                        }
                    }
                }
                out[(o * g.oh + oy) * g.ow + ox] = acc;
            }
        }
    }
    out
}

/// Contiguous window `[start, end)` of adaptive pooling cell `i` of `out`
/// along an axis of length `len`.
#[inline]
pub(crate) fn pool_window(i: usize, out: usize, len: usize) -> (usize, usize) {
    let start = i * len / out;
    let end = ((i + 1) * len).div_ceil(out);
    (start, end)
}

pub(crate) fn adaptive_avg_pool(input: &[f64], c: usize, h: usize, w: usize, oh: usize, ow: usize) -> Vec<f64> {
    let mut out = vec![0.0; c * oh * ow];
    for ch in 0..c {
        let src = &input[ch * h * w..(ch + 1) * h * w];
        for i in 0..oh {
            let (y0, y1) = pool_window(i, oh, h);
            for j in 0..ow {
                let (x0, x1) = pool_window(j, ow, w);
                let mut acc = 0.0;
                for y in y0..y1 {
                    acc += src[y * w + x0..y * w + x1].iter().sum::<f64>();
                }
                out[(ch * oh + i) * ow + j] = acc / ((y1 - y0) * (x1 - x0)) as f64;
            }
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn adaptive_avg_pool_backward(
    grad_out: &[f64],
    c: usize,
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
    grad_in: &mut [f64],
) {
    for ch in 0..c {
        let dst = &mut grad_in[ch * h * w..(ch + 1) * h * w];
        for i in 0..oh {
            let (y0, y1) = pool_window(i, oh, h);
            for j in 0..ow {
                let (x0, x1) = pool_window(j, ow, w);
                let g = grad_out[(ch * oh + i) * ow + j] / ((y1 - y0) * (x1 - x0)) as f64;
                for y in y0..y1 {
                    dst[y * w + x0..y * w + x1].iter_mut().for_each(|v| *v += g);
                }
            }
        }
    }
}

/// Source taps for half-pixel-centred (align-corners false) bilinear
/// resampling of an axis from `len_in` to `len_out` samples.
#[derive(Debug, Clone)]
pub(crate) struct LinearTaps {
    pub lo: Vec<usize>,
    pub hi: Vec<usize>,
    pub frac: Vec<f64>,
}

impl LinearTaps {
    pub fn new(len_in: usize, len_out: usize) -> Self {
        let scale = len_in as f64 / len_out as f64;
        let mut lo = Vec::with_capacity(len_out);
        let mut hi = Vec::with_capacity(len_out);
        let mut frac = Vec::with_capacity(len_out);
        for i in 0..len_out {
            let src = ((i as f64 + 0.5) * scale - 0.5).max(0.0);
            let l = (src.floor() as usize).min(len_in - 1);
            let h = if l + 1 < len_in { l + 1 } else { l };
            lo.push(l);
            hi.push(h);
            frac.push(if h == l { 0.0 } else { src - l as f64 });
        }
        LinearTaps { lo, hi, frac }
    }
}

pub(crate) fn upsample_bilinear(input: &[f64], c: usize, h: usize, w: usize, oh: usize, ow: usize) -> Vec<f64> {
    let ty = LinearTaps::new(h, oh);
    let tx = LinearTaps::new(w, ow);
    let mut out = vec![0.0; c * oh * ow];
    for ch in 0..c {
        let src = &input[ch * h * w..(ch + 1) * h * w];
        let dst = &mut out[ch * oh * ow..(ch + 1) * oh * ow];
        for i in 0..oh {
            let (y0, y1, fy) = (ty.lo[i], ty.hi[i], ty.frac[i]);
            for j in 0..ow {
                let (x0, x1, fx) = (tx.lo[j], tx.hi[j], tx.frac[j]);
                let top = src[y0 * w + x0] * (1.0 - fx) + src[y0 * w + x1] * fx;
                let bot = src[y1 * w + x0] * (1.0 - fx) + src[y1 * w + x1] * fx;
                dst[i * ow + j] = top * (1.0 - fy) + bot * fy;
            }
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn upsample_bilinear_backward(
    grad_out: &[f64],
    c: usize,
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
    grad_in: &mut [f64],
) {
    let ty = LinearTaps::new(h, oh);
    let tx = LinearTaps::new(w, ow);
    for ch in 0..c {
        let src = &grad_out[ch * oh * ow..(ch + 1) * oh * ow];
        let dst = &mut grad_in[ch * h * w..(ch + 1) * h * w];
        for i in 0..oh {
            let (y0, y1, fy) = (ty.lo[i], ty.hi[i], ty.frac[i]);
            for j in 0..ow {
                let (x0, x1, fx) = (tx.lo[j], tx.hi[j], tx.frac[j]);
                let g = src[i * ow + j];
                dst[y0 * w + x0] += g * (1.0 - fy) * (1.0 - fx);
                dst[y0 * w + x1] += g * (1.0 - fy) * fx;
                dst[y1 * w + x0] += g * fy * (1.0 - fx);
                dst[y1 * w + x1] += g * fy * fx;
            }
        }
    }
}
