//! Raw f64 kernels behind the tape operations. All loops run in a fixed
//! order, so results do not depend on scheduling.

/// Strided row/column description of a matrix operand.
#[derive(Clone, Copy)]
pub(crate) struct MatView<'a> {
    pub data: &'a [f64],
    pub row_stride: usize,
    pub col_stride: usize,
}

impl<'a> MatView<'a> {
    pub fn row_major(data: &'a [f64], cols: usize) -> Self {
        Self { data, row_stride: cols, col_stride: 1 }
    }

    /// The transpose of a row-major `rows x cols` matrix.
    pub fn transposed(data: &'a [f64], cols: usize) -> Self {
        Self { data, row_stride: 1, col_stride: cols }
    }

    fn max_index(&self, rows: usize, cols: usize) -> usize {
        if rows == 0 || cols == 0 {
            0
        } else {
            (rows - 1) * self.row_stride + (cols - 1) * self.col_stride
        }
    }
}

/// `c = a * b + beta * c` with `a: m x k`, `b: k x n`, `c: m x n` row-major.
pub(crate) fn gemm(m: usize, k: usize, n: usize, a: MatView<'_>, b: MatView<'_>, beta: f64, c: &mut [f64]) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(c.len() >= m * n);
    if k == 0 {
        c[..m * n].iter_mut().for_each(|v| *v *= beta);
        return;
    }
    assert!(a.max_index(m, k) < a.data.len());
    assert!(b.max_index(k, n) < b.data.len());
    // SAFETY: every index the kernel touches is bounded by the asserts above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            a.row_stride as isize,
            a.col_stride as isize,
            b.data.as_ptr(),
            b.row_stride as isize,
            b.col_stride as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeometry {
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeometry {
    pub fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }

    pub fn col_rows(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    pub fn col_cols(&self) -> usize {
        self.ho * self.wo
    }

    /// Output columns `ox` whose input column `ox*stride + kj - pad` is in range.
    fn valid_ox(&self, kj: usize) -> (usize, usize) {
        let lo = if kj >= self.pad { 0 } else { (self.pad - kj).div_ceil(self.stride) };
        // ox*stride + kj - pad <= w - 1
        let limit = self.w + self.pad;
        let hi = if limit > kj {
            ((limit - kj - 1) / self.stride + 1).min(self.wo)
        } else {
            0
        };
        (lo.min(hi), hi)
    }
}

/// Unfolds one image `[cin, h, w]` into `[cin*kh*kw, ho*wo]`.
pub(crate) fn im2col(img: &[f64], g: &ConvGeometry, cols: &mut [f64]) {
    let n = g.col_cols();
    for c in 0..g.cin {
        let plane = &img[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let dst = &mut cols[row * n..(row + 1) * n];
                let (lo, hi) = g.valid_ox(kj);
                for oy in 0..g.ho {
                    let out = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        out.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    out[..lo].fill(0.0);
                    out[hi..].fill(0.0);
                    if lo == hi {
                        continue;
                    }
                    let base = lo * g.stride + kj - g.pad;
                    if g.stride == 1 {
                        out[lo..hi].copy_from_slice(&src[base..base + (hi - lo)]);
                    } else {
                        for (i, o) in out[lo..hi].iter_mut().enumerate() {
                            *o = src[base + i * g.stride];
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters-adds columns back into an image gradient.
pub(crate) fn col2im(cols: &[f64], g: &ConvGeometry, img: &mut [f64]) {
    let n = g.col_cols();
    for c in 0..g.cin {
        let plane = &mut img[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let src = &cols[row * n..(row + 1) * n];
                let (lo, hi) = g.valid_ox(kj);
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    if lo == hi {
                        continue;
                    }
                    let line = &src[oy * g.wo..(oy + 1) * g.wo];
                    let base = lo * g.stride + kj - g.pad;
                    for (i, v) in line[lo..hi].iter().enumerate() {
                        dst[base + i * g.stride] += v;
                    }
                }
            }
        }
    }
}

pub(crate) fn conv2d_forward(
    x: &[f64],
    batch: usize,
    g: &ConvGeometry,
    weight: &[f64],
    cout: usize,
    bias: Option<&[f64]>,
) -> Vec<f64> {
    let k = g.col_rows();
    let n = g.col_cols();
    let in_plane = g.cin * g.h * g.w;
    let mut out = vec![0.0; batch * cout * n];
    let mut cols = if g.is_pointwise() { Vec::new() } else { vec![0.0; k * n] };
    for b in 0..batch {
        let img = &x[b * in_plane..(b + 1) * in_plane];
        let dst = &mut out[b * cout * n..(b + 1) * cout * n];
        let rhs = if g.is_pointwise() {
            img
        } else {
            im2col(img, g, &mut cols);
            &cols
        };
        gemm(cout, k, n, MatView::row_major(weight, k), MatView::row_major(rhs, n), 0.0, dst);
        if let Some(bias) = bias {
            for (o, row) in dst.chunks_exact_mut(n).enumerate() {
                row.iter_mut().for_each(|v| *v += bias[o]);
            }
        }
    }
    out
}

pub(crate) struct ConvGrads {
    pub input: Option<Vec<f64>>,
    pub weight: Option<Vec<f64>>,
    pub bias: Option<Vec<f64>>,
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn conv2d_backward(
    x: &[f64],
    batch: usize,
    g: &ConvGeometry,
    weight: &[f64],
    cout: usize,
    grad_out: &[f64],
    want_input: bool,
    want_weight: bool,
    want_bias: bool,
) -> ConvGrads {
    let k = g.col_rows();
    let n = g.col_cols();
    let in_plane = g.cin * g.h * g.w;
    let mut d_input = want_input.then(|| vec![0.0; x.len()]);
    let mut d_weight = want_weight.then(|| vec![0.0; cout * k]);
    let mut d_bias = want_bias.then(|| vec![0.0; cout]);
    let mut cols = vec![0.0; if g.is_pointwise() { 0 } else { k * n }];
    let mut d_cols = if want_input && !g.is_pointwise() { vec![0.0; k * n] } else { Vec::new() };

    for b in 0..batch {
        let go = &grad_out[b * cout * n..(b + 1) * cout * n];
        if let Some(db) = d_bias.as_mut() {
            for (o, row) in go.chunks_exact(n).enumerate() {
                db[o] += row.iter().sum::<f64>();
            }
        }
        if let Some(dw) = d_weight.as_mut() {
            let img = &x[b * in_plane..(b + 1) * in_plane];
            let rhs = if g.is_pointwise() {
                img
            } else {
                im2col(img, g, &mut cols);
                &cols
            };
            gemm(cout, n, k, MatView::row_major(go, n), MatView::transposed(rhs, n), 1.0, dw);
        }
        if let Some(dx) = d_input.as_mut() {
            let dst = &mut dx[b * in_plane..(b + 1) * in_plane];
            if g.is_pointwise() {
                gemm(k, cout, n, MatView::transposed(weight, k), MatView::row_major(go, n), 0.0, dst);
            } else {
                gemm(k, cout, n, MatView::transposed(weight, k), MatView::row_major(go, n), 0.0, &mut d_cols);
                col2im(&d_cols, g, dst);
            }
        }
    }
    ConvGrads { input: d_input, weight: d_weight, bias: d_bias }
}

/// 2x2 stride-2 max pool. Returns the pooled values and, per output, the
/// flat input index that won (first in row-major window order on ties).
pub(crate) fn maxpool2_forward(x: &[f64], planes: usize, h: usize, w: usize) -> (Vec<f64>, Vec<usize>) {
    let (ho, wo) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(planes * ho * wo);
    let mut arg = Vec::with_capacity(planes * ho * wo);
    for p in 0..planes {
        let base = p * h * w;
        for oy in 0..ho {
            for ox in 0..wo {
                let top = base + 2 * oy * w + 2 * ox;
                let window = [top, top + 1, top + w, top + w + 1];
                let mut best = window[0];
                for &idx in &window[1..] {
                    if x[idx] > x[best] {
                        best = idx;
                    }
                }
                out.push(x[best]);
                arg.push(best);
            }
        }
    }
    (out, arg)
}

pub(crate) fn upsample2_forward(x: &[f64], planes: usize, h: usize, w: usize) -> Vec<f64> {
    let w2 = 2 * w;
    let mut out = vec![0.0; planes * 4 * h * w];
    for p in 0..planes {
        let src = &x[p * h * w..(p + 1) * h * w];
        let dst = &mut out[p * 4 * h * w..(p + 1) * 4 * h * w];
        for y in 0..h {
            for xx in 0..w {
                let v = src[y * w + xx];
                let o = 2 * y * w2 + 2 * xx;
                dst[o] = v;
                dst[o + 1] = v;
                dst[o + w2] = v;
                dst[o + w2 + 1] = v;
            }
        }
    }
    out
}

pub(crate) fn upsample2_backward(grad_out: &[f64], planes: usize, h: usize, w: usize) -> Vec<f64> {
    let w2 = 2 * w;
    let mut dx = vec![0.0; planes * h * w];
    for p in 0..planes {
        let src = &grad_out[p * 4 * h * w..(p + 1) * 4 * h * w];
        for y in 0..h {
            for xx in 0..w {
                let o = 2 * y * w2 + 2 * xx;
                dx[p * h * w + y * w + xx] = src[o] + src[o + 1] + src[o + w2] + src[o + w2 + 1];
            }
        }
    }
    dx
}
