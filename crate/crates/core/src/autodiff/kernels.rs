//! Forward and backward kernels on raw NCHW buffers.
//!
//! Convolutions lower to im2col + gemm. The transposed convolution is the
//! adjoint of a strided convolution and reuses the same column routines.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::scalar::{MatRef, Scalar};
use crate::tensor::Tensor;

/// Geometry of a 2-D convolution over a `channels × height × width` input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeom {
    pub fn new(
        op: &'static str,
        channels: usize,
        height: usize,
        width: usize,
        kernel_h: usize,
        kernel_w: usize,
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        let shape = || vec![channels, height, width, kernel_h, kernel_w];
        if stride == 0 {
            return Err(Error::InvalidShape {
                op,
                shape: shape(),
                reason: "stride must be positive",
            });
        }
        if kernel_h == 0
            || kernel_w == 0
            || kernel_h > height + 2 * padding
            || kernel_w > width + 2 * padding
        {
            return Err(Error::InvalidShape {
                op,
                shape: shape(),
                reason: "kernel does not fit the padded input",
            });
        }
        let out_h = (height + 2 * padding - kernel_h) / stride + 1;
        let out_w = (width + 2 * padding - kernel_w) / stride + 1;
        if out_h == 0 || out_w == 0 || channels == 0 {
            return Err(Error::InvalidShape {
                op,
                shape: shape(),
                reason: "zero-size output",
            });
        }
        Ok(Self {
            channels,
            height,
            width,
            kernel_h,
            kernel_w,
            stride,
            padding,
            out_h,
            out_w,
        })
    }

    pub fn col_rows(&self) -> usize {
        self.channels * self.kernel_h * self.kernel_w
    }

    pub fn col_cols(&self) -> usize {
        self.out_h * self.out_w
    }

    fn is_pointwise(&self) -> bool {
        self.kernel_h == 1 && self.kernel_w == 1 && self.stride == 1 && self.padding == 0
    }

    /// Input row (or column) read by output index `o` at kernel offset `k`,
    /// or `None` when it falls in the zero padding.
    #[inline]
    fn src(&self, o: usize, k: usize, limit: usize) -> Option<usize> {
        let pos = (o * self.stride + k) as isize - self.padding as isize;
        (pos >= 0 && (pos as usize) < limit).then_some(pos as usize)
    }
}

/// Unfolds one image into a `col_rows × col_cols` matrix.
pub fn im2col<T: Scalar>(image: &[T], g: &ConvGeom, col: &mut [T]) {
    let plane = g.height * g.width;
    let cols = g.col_cols();
    let mut row = 0;
    for c in 0..g.channels {
        let src_plane = &image[c * plane..(c + 1) * plane];
        for ki in 0..g.kernel_h {
            for kj in 0..g.kernel_w {
                let dst = &mut col[row * cols..(row + 1) * cols];
                for oy in 0..g.out_h {
                    let out_row = &mut dst[oy * g.out_w..(oy + 1) * g.out_w];
                    match g.src(oy, ki, g.height) {
                        None => out_row.fill(T::ZERO),
                        Some(iy) => {
                            let src_row = &src_plane[iy * g.width..(iy + 1) * g.width];
                            for (ox, v) in out_row.iter_mut().enumerate() {
                                *v = match g.src(ox, kj, g.width) {
                                    Some(ix) => src_row[ix],
                                    None => T::ZERO,
                                };
                            }
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

/// Folds a column matrix back, accumulating into `image`.
pub fn col2im<T: Scalar>(col: &[T], g: &ConvGeom, image: &mut [T]) {
    let plane = g.height * g.width;
    let cols = g.col_cols();
    let mut row = 0;
    for c in 0..g.channels {
        let dst_plane = &mut image[c * plane..(c + 1) * plane];
        for ki in 0..g.kernel_h {
            for kj in 0..g.kernel_w {
                let src = &col[row * cols..(row + 1) * cols];
                for oy in 0..g.out_h {
                    if let Some(iy) = g.src(oy, ki, g.height) {
                        let dst_row = &mut dst_plane[iy * g.width..(iy + 1) * g.width];
                        for (ox, &v) in src[oy * g.out_w..(oy + 1) * g.out_w].iter().enumerate() {
                            if let Some(ix) = g.src(ox, kj, g.width) {
                                dst_row[ix] += v;
                            }
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

fn check_bias<T: Scalar>(op: &'static str, bias: &Tensor<T>, channels: usize) -> Result<()> {
    if bias.shape() != [channels] {
        return Err(Error::ShapeMismatch {
            op,
            left: vec![channels],
            right: bias.shape().to_vec(),
        });
    }
    Ok(())
}

/// Validates shapes and returns `(batch, out_channels, geometry)`.
pub fn conv2d_geom<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<(usize, usize, ConvGeom)> {
    let [n, cin, h, w] = input.dims4("conv2d")?;
    let [cout, wcin, kh, kw] = weight.dims4("conv2d")?;
    if wcin != cin {
        return Err(Error::ShapeMismatch {
            op: "conv2d",
            left: input.shape().to_vec(),
            right: weight.shape().to_vec(),
        });
    }
    check_bias("conv2d", bias, cout)?;
    let g = ConvGeom::new("conv2d", cin, h, w, kh, kw, stride, padding)?;
    if n == 0 {
        return Err(Error::InvalidShape {
            op: "conv2d",
            shape: input.shape().to_vec(),
            reason: "zero-size output",
        });
    }
    Ok((n, cout, g))
}

pub fn conv2d_forward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    let (n, cout, g) = conv2d_geom(input, weight, bias, stride, padding)?;
    let in_len = g.channels * g.height * g.width;
    let out_plane = g.col_cols();
    let mut out = vec![T::ZERO; n * cout * out_plane];
    let mut col = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![T::ZERO; g.col_rows() * out_plane]
    };
    for b in 0..n {
        let image = &input.data()[b * in_len..(b + 1) * in_len];
        let dst = &mut out[b * cout * out_plane..(b + 1) * cout * out_plane];
        for (co, plane) in dst.chunks_exact_mut(out_plane).enumerate() {
            plane.fill(bias.data()[co]);
        }
        let cols: &[T] = if g.is_pointwise() {
            image
        } else {
            im2col(image, &g, &mut col);
            &col
        };
        T::gemm(
            cout,
            g.col_rows(),
            out_plane,
            T::ONE,
            MatRef::rows(weight.data(), g.col_rows()),
            MatRef::rows(cols, out_plane),
            T::ONE,
            dst,
        );
    }
    Tensor::new([n, cout, g.out_h, g.out_w], out)
}

pub struct ConvGrads<T> {
    pub input: Option<Tensor<T>>,
    pub weight: Option<Tensor<T>>,
    pub bias: Option<Tensor<T>>,
}

/// Gradients of `conv2d` given the output cotangent.
pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &[T],
    n: usize,
    cout: usize,
    g: &ConvGeom,
    want: [bool; 3],
) -> ConvGrads<T> {
    let in_len = g.channels * g.height * g.width;
    let out_plane = g.col_cols();
    let rows = g.col_rows();
    let mut gx = want[0].then(|| vec![T::ZERO; n * in_len]);
    let mut gw = want[1].then(|| vec![T::ZERO; weight.numel()]);
    let mut col = vec![
        T::ZERO;
        if g.is_pointwise() {
            0
        } else {
            rows * out_plane
        }
    ];
    let mut gcol = vec![T::ZERO; if gx.is_some() { rows * out_plane } else { 0 }];
    for b in 0..n {
        let gy = &grad_out[b * cout * out_plane..(b + 1) * cout * out_plane];
        if let Some(gw) = gw.as_mut() {
            let image = &input.data()[b * in_len..(b + 1) * in_len];
            let cols: &[T] = if g.is_pointwise() {
                image
            } else {
                im2col(image, g, &mut col);
                &col
            };
            T::gemm(
                cout,
                out_plane,
                rows,
                T::ONE,
                MatRef::rows(gy, out_plane),
                MatRef::transposed(cols, out_plane),
                T::ONE,
                gw,
            );
        }
        if let Some(gx) = gx.as_mut() {
            let dst = &mut gx[b * in_len..(b + 1) * in_len];
            if g.is_pointwise() {
                T::gemm(
                    rows,
                    cout,
                    out_plane,
                    T::ONE,
                    MatRef::transposed(weight.data(), rows),
                    MatRef::rows(gy, out_plane),
                    T::ONE,
                    dst,
                );
            } else {
                T::gemm(
                    rows,
                    cout,
                    out_plane,
                    T::ONE,
                    MatRef::transposed(weight.data(), rows),
                    MatRef::rows(gy, out_plane),
                    T::ZERO,
                    &mut gcol,
                );
                col2im(&gcol, g, dst);
            }
        }
    }
    let gb = want[2].then(|| channel_sums(grad_out, n, cout, out_plane));
    ConvGrads {
        input: gx.map(|d| Tensor::new(input.shape().to_vec(), d).expect("input grad shape")),
        weight: gw.map(|d| Tensor::new(weight.shape().to_vec(), d).expect("weight grad shape")),
        bias: gb.map(|d| Tensor::new([cout], d).expect("bias grad shape")),
    }
}

fn channel_sums<T: Scalar>(data: &[T], n: usize, c: usize, plane: usize) -> Vec<T> {
    let mut sums = vec![T::ZERO; c];
    for b in 0..n {
        for (ch, s) in sums.iter_mut().enumerate() {
            let start = (b * c + ch) * plane;
            *s += data[start..start + plane]
                .iter()
                .fold(T::ZERO, |a, &v| a + v);
        }
    }
    sums
}

/// Validates a transposed convolution and returns `(batch, in_channels,
/// out_channels, adjoint geometry)`. The adjoint geometry describes the
/// strided convolution that maps the `2H × 2W` output back to `H × W`.
pub fn conv_transpose2d_geom<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    padding: usize,
    output_padding: usize,
) -> Result<(usize, usize, usize, ConvGeom)> {
    const OP: &str = "conv_transpose2d";
    let [n, cin, h, w] = input.dims4(OP)?;
    let [wcin, cout, kh, kw] = weight.dims4(OP)?;
    if wcin != cin {
        return Err(Error::ShapeMismatch {
            op: OP,
            left: input.shape().to_vec(),
            right: weight.shape().to_vec(),
        });
    }
    check_bias(OP, bias, cout)?;
    let doubling = |side: usize, k: usize| {
        stride > output_padding
            && ((side - 1) * stride + k + output_padding).checked_sub(2 * padding) == Some(2 * side)
    };
    if n == 0 || h == 0 || w == 0 || !doubling(h, kh) || !doubling(w, kw) {
        return Err(Error::InvalidShape {
            op: OP,
            shape: vec![h, w, kh, kw, stride, padding, output_padding],
            reason: "only parameterizations that exactly double the spatial size are supported",
        });
    }
    let g = ConvGeom::new(OP, cout, 2 * h, 2 * w, kh, kw, stride, padding)?;
    if g.out_h != h || g.out_w != w {
        return Err(Error::InvalidShape {
            op: OP,
            shape: vec![h, w, kh, kw, stride, padding, output_padding],
            reason: "parameters are not the adjoint of a halving convolution",
        });
    }
    Ok((n, cin, cout, g))
}

pub fn conv_transpose2d_forward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    padding: usize,
    output_padding: usize,
) -> Result<Tensor<T>> {
    let (n, cin, cout, g) =
        conv_transpose2d_geom(input, weight, bias, stride, padding, output_padding)?;
    let in_plane = g.col_cols();
    let out_len = cout * g.height * g.width;
    let rows = g.col_rows();
    let mut out = vec![T::ZERO; n * out_len];
    let mut col = vec![T::ZERO; rows * in_plane];
    for b in 0..n {
        let x = &input.data()[b * cin * in_plane..(b + 1) * cin * in_plane];
        T::gemm(
            rows,
            cin,
            in_plane,
            T::ONE,
            MatRef::transposed(weight.data(), rows),
            MatRef::rows(x, in_plane),
            T::ZERO,
            &mut col,
        );
        let dst = &mut out[b * out_len..(b + 1) * out_len];
        let plane = g.height * g.width;
        for (co, p) in dst.chunks_exact_mut(plane).enumerate() {
            p.fill(bias.data()[co]);
        }
        col2im(&col, &g, dst);
    }
    Tensor::new([n, cout, g.height, g.width], out)
}

pub fn conv_transpose2d_backward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &[T],
    n: usize,
    cin: usize,
    cout: usize,
    g: &ConvGeom,
    want: [bool; 3],
) -> ConvGrads<T> {
    let in_plane = g.col_cols();
    let rows = g.col_rows();
    let out_len = cout * g.height * g.width;
    let mut gx = want[0].then(|| vec![T::ZERO; n * cin * in_plane]);
    let mut gw = want[1].then(|| vec![T::ZERO; weight.numel()]);
    let mut col = vec![T::ZERO; rows * in_plane];
    for b in 0..n {
        if gx.is_none() && gw.is_none() {
            break;
        }
        im2col(&grad_out[b * out_len..(b + 1) * out_len], g, &mut col);
        if let Some(gx) = gx.as_mut() {
            T::gemm(
                cin,
                rows,
                in_plane,
                T::ONE,
                MatRef::rows(weight.data(), rows),
                MatRef::rows(&col, in_plane),
                T::ZERO,
                &mut gx[b * cin * in_plane..(b + 1) * cin * in_plane],
            );
        }
        if let Some(gw) = gw.as_mut() {
            let x = &input.data()[b * cin * in_plane..(b + 1) * cin * in_plane];
            T::gemm(
                cin,
                in_plane,
                rows,
                T::ONE,
                MatRef::rows(x, in_plane),
                MatRef::transposed(&col, in_plane),
                T::ONE,
                gw,
            );
        }
    }
    let gb = want[2].then(|| channel_sums(grad_out, n, cout, g.height * g.width));
    ConvGrads {
        input: gx.map(|d| Tensor::new(input.shape().to_vec(), d).expect("input grad shape")),
        weight: gw.map(|d| Tensor::new(weight.shape().to_vec(), d).expect("weight grad shape")),
        bias: gb.map(|d| Tensor::new([cout], d).expect("bias grad shape")),
    }
}

/// 2×2 max pooling. Returns the pooled tensor and, per output cell, the flat
/// input index of the selected element (first maximum in row-major order).
pub fn maxpool2d_forward<T: Scalar>(input: &Tensor<T>) -> Result<(Tensor<T>, Vec<usize>)> {
    let [n, c, h, w] = input.dims4("maxpool2d")?;
    if h % 2 != 0 || w % 2 != 0 || h == 0 || w == 0 {
        return Err(Error::InvalidShape {
            op: "maxpool2d",
            shape: input.shape().to_vec(),
            reason: "height and width must be even and non-zero",
        });
    }
    let (oh, ow) = (h / 2, w / 2);
    let x = input.data();
    let mut out = Vec::with_capacity(n * c * oh * ow);
    let mut argmax = Vec::with_capacity(n * c * oh * ow);
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + 2 * oy * w + 2 * ox;
                for idx in [best + 1, best + w, best + w + 1] {
                    if x[idx] > x[best] {
                        best = idx;
                    }
                }
                out.push(x[best]);
                argmax.push(best);
            }
        }
    }
    Ok((Tensor::new([n, c, oh, ow], out)?, argmax))
}

/// Numerically stable softmax over the channel axis of an NCHW tensor.
pub fn softmax_channels_forward<T: Scalar>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, c, h, w] = input.dims4("softmax_channels")?;
    if c < 2 {
        return Err(Error::InvalidShape {
            op: "softmax_channels",
            shape: input.shape().to_vec(),
            reason: "at least two channels are required",
        });
    }
    let plane = h * w;
    let x = input.data();
    let mut out = vec![T::ZERO; x.len()];
    for b in 0..n {
        let base = b * c * plane;
        for p in 0..plane {
            let at = |ch: usize| base + ch * plane + p;
            let mut max = x[at(0)];
            for ch in 1..c {
                max = max.max(x[at(ch)]);
            }
            let mut total = T::ZERO;
            for ch in 0..c {
                let e = (x[at(ch)] - max).exp();
                out[at(ch)] = e;
                total += e;
            }
            for ch in 0..c {
                out[at(ch)] = out[at(ch)] / total;
            }
        }
    }
    Tensor::new(input.shape().to_vec(), out)
}

/// Vector-Jacobian product of the channel softmax, from its output.
pub fn softmax_channels_backward<T: Scalar>(output: &Tensor<T>, grad_out: &[T]) -> Vec<T> {
    let s = output.shape();
    let (n, c, plane) = (s[0], s[1], s[2] * s[3]);
    let y = output.data();
    let mut gx = vec![T::ZERO; y.len()];
    for b in 0..n {
        let base = b * c * plane;
        for p in 0..plane {
            let mut dot = T::ZERO;
            for ch in 0..c {
                let i = base + ch * plane + p;
                dot += grad_out[i] * y[i];
            }
            for ch in 0..c {
                let i = base + ch * plane + p;
                gx[i] = y[i] * (grad_out[i] - dot);
            }
        }
    }
    gx
}

pub fn concat_channels_forward<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let [na, ca, ha, wa] = a.dims4("concat_channels")?;
    let [nb, cb, hb, wb] = b.dims4("concat_channels")?;
    if (na, ha, wa) != (nb, hb, wb) {
        return Err(Error::ShapeMismatch {
            op: "concat_channels",
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    let plane = ha * wa;
    let mut out = Vec::with_capacity(a.numel() + b.numel());
    for i in 0..na {
        out.extend_from_slice(&a.data()[i * ca * plane..(i + 1) * ca * plane]);
        out.extend_from_slice(&b.data()[i * cb * plane..(i + 1) * cb * plane]);
    }
    Tensor::new([na, ca + cb, ha, wa], out)
}
