//! 2-D convolution with 1×1 or 3×3 kernels, stride 1, zero padding that
//! preserves spatial size.
//!
//! Both directions lower to GEMM over an im2col buffer. The buffer is built
//! for blocks of output rows so its size stays bounded on large maps.

use rand::Rng;

use super::tensor::Tensor;
use crate::error::{shape_err, Error, Result};

/// Upper bound on im2col buffer entries per block (about 16 MiB of f64).
const COL_BLOCK_ENTRIES: usize = 2 << 20;

/// Trainable convolution parameters and their accumulated gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams {
    /// `[c_out, c_in, k, k]`
    pub weights: Tensor,
    /// `[c_out]`
    pub bias: Tensor,
    pub grad_weights: Tensor,
    pub grad_bias: Tensor,
}

impl LayerParams {
    /// Kaiming (fan-in) normal init, zero bias.
    pub fn kaiming<R: Rng + ?Sized>(c_in: usize, c_out: usize, kernel: usize, rng: &mut R) -> Self {
        let fan_in = (c_in * kernel * kernel) as f64;
        let weights = Tensor::randn(&[c_out, c_in, kernel, kernel], (2.0 / fan_in).sqrt(), rng);
        Self::from_weights(weights, Tensor::zeros(&[c_out])).expect("consistent shapes")
    }

    pub fn zeros(c_in: usize, c_out: usize, kernel: usize) -> Self {
        Self::from_weights(
            Tensor::zeros(&[c_out, c_in, kernel, kernel]),
            Tensor::zeros(&[c_out]),
        )
        .expect("consistent shapes")
    }

    pub fn from_weights(weights: Tensor, bias: Tensor) -> Result<Self> {
        let c_out = match weights.shape() {
            &[o, _, k1, k2] if k1 == k2 && (k1 == 1 || k1 == 3) => o,
            other => return Err(shape_err(format!("bad conv weight shape {other:?}"))),
        };
        if bias.shape() != [c_out] {
            return Err(shape_err(format!(
                "bias shape {:?} for {c_out} outputs",
                bias.shape()
            )));
        }
        Ok(LayerParams {
            grad_weights: Tensor::zeros(weights.shape()),
            grad_bias: Tensor::zeros(bias.shape()),
            weights,
            bias,
        })
    }

    pub fn c_out(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn c_in(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn kernel(&self) -> usize {
        self.weights.shape()[2]
    }

    pub fn zero_grad(&mut self) {
        self.grad_weights.fill(0.0);
        self.grad_bias.fill(0.0);
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

fn check_input(input: &Tensor, params: &LayerParams) -> Result<(usize, usize, usize)> {
    let (c, h, w) = input.dims3()?;
    if c != params.c_in() {
        return Err(Error::Shape(format!(
            "conv expects {} input channels, got {c}",
            params.c_in()
        )));
    }
    Ok((c, h, w))
}

fn rows_per_block(c_in: usize, k: usize, w: usize, h: usize) -> usize {
    let per_row = c_in * k * k * w;
    (COL_BLOCK_ENTRIES / per_row.max(1)).clamp(1, h)
}

/// Fill `col` (`[c_in*k*k, rows*w]`) for output rows `y0..y0+rows`.
fn im2col(input: &[f64], c_in: usize, h: usize, w: usize, k: usize, y0: usize, rows: usize, col: &mut [f64]) {
    let pad = (k / 2) as isize;
    let n = rows * w;
    for ci in 0..c_in {
        let plane = &input[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let r = (ci * k + ky) * k + kx;
                let dst = &mut col[r * n..(r + 1) * n];
                let dx = kx as isize - pad;
                for row in 0..rows {
                    let sy = (y0 + row) as isize + ky as isize - pad;
                    let out = &mut dst[row * w..(row + 1) * w];
                    if sy < 0 || sy >= h as isize {
                        out.fill(0.0);
                        continue;
                    }
                    let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                    copy_shifted(src, out, dx);
                }
            }
        }
    }
}

/// `out[x] = src[x + dx]`, zero outside.
#[inline]
fn copy_shifted(src: &[f64], out: &mut [f64], dx: isize) {
    let w = src.len() as isize;
    let lo = (-dx).clamp(0, w) as usize;
    let hi = (w - dx).clamp(0, w) as usize;
    out[..lo].fill(0.0);
    out[hi..].fill(0.0);
    if lo < hi {
        let s0 = (lo as isize + dx) as usize;
        out[lo..hi].copy_from_slice(&src[s0..s0 + (hi - lo)]);
    }
}

/// `out[x + dx] += src[x]` within bounds (adjoint of `copy_shifted`).
#[inline]
fn add_shifted_adjoint(src: &[f64], out: &mut [f64], dx: isize) {
    let w = src.len() as isize;
    let lo = (-dx).clamp(0, w) as usize;
    let hi = (w - dx).clamp(0, w) as usize;
    if lo < hi {
        let s0 = (lo as isize + dx) as usize;
        for (o, s) in out[s0..s0 + (hi - lo)].iter_mut().zip(&src[lo..hi]) {
            *o += s;
        }
    }
}

fn col2im_add(col: &[f64], c_in: usize, h: usize, w: usize, k: usize, y0: usize, rows: usize, grad_in: &mut [f64]) {
    let pad = (k / 2) as isize;
    let n = rows * w;
    for ci in 0..c_in {
        let plane = &mut grad_in[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let r = (ci * k + ky) * k + kx;
                let src = &col[r * n..(r + 1) * n];
                let dx = kx as isize - pad;
                for row in 0..rows {
                    let sy = (y0 + row) as isize + ky as isize - pad;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[sy as usize * w..(sy as usize + 1) * w];
                    add_shifted_adjoint(&src[row * w..(row + 1) * w], dst, dx);
                }
            }
        }
    }
}

/// `c[m×n] = alpha * a[m×k] · b[k×n] + beta * c`, all row-major unless strides say otherwise.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    rsa: isize,
    csa: isize,
    b: &[f64],
    rsb: isize,
    csb: isize,
    beta: f64,
    c: &mut [f64],
    rsc: isize,
) {
    let last = |rows: usize, cols: usize, rs: isize, cs: isize| {
        if rows == 0 || cols == 0 {
            0
        } else {
            (rows - 1) as isize * rs + (cols - 1) as isize * cs
        }
    };
    assert!(rsa >= 0 && csa >= 0 && rsb >= 0 && csb >= 0 && rsc >= 0);
    assert!(last(m, k, rsa, csa) < a.len().max(1) as isize);
    assert!(last(k, n, rsb, csb) < b.len().max(1) as isize);
    assert!(last(m, n, rsc, 1) < c.len().max(1) as isize);
    // SAFETY: the asserts above keep every addressed element inside the slices.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            rsc,
            1,
        );
    }
}

/// Forward convolution. Output has the input's spatial size.
pub fn conv2d(input: &Tensor, params: &LayerParams) -> Result<Tensor> {
    let (c_in, h, w) = check_input(input, params)?;
    conv2d_blocked(input, params, rows_per_block(c_in, params.kernel(), w, h))
}

fn conv2d_blocked(input: &Tensor, params: &LayerParams, block: usize) -> Result<Tensor> {
    let (c_in, h, w) = check_input(input, params)?;
    let c_out = params.c_out();
    let k = params.kernel();
    let mut out = Tensor::zeros(&[c_out, h, w]);
    let hw = h * w;
    {
        let od = out.data_mut();
        for co in 0..c_out {
            od[co * hw..(co + 1) * hw].fill(params.bias.data()[co]);
        }
    }
    let r = c_in * k * k;
    let wd = params.weights.data();
    if k == 1 {
        gemm(c_out, r, hw, 1.0, wd, r as isize, 1, input.data(), hw as isize, 1, 1.0, out.data_mut(), hw as isize);
        return Ok(out);
    }
    let mut col = vec![0.0; r * block * w];
    let mut tmp = vec![0.0; c_out * block * w];
    let mut y0 = 0;
    while y0 < h {
        let rows = block.min(h - y0);
        let n = rows * w;
        im2col(input.data(), c_in, h, w, k, y0, rows, &mut col[..r * n]);
        gemm(c_out, r, n, 1.0, wd, r as isize, 1, &col[..r * n], n as isize, 1, 0.0, &mut tmp[..c_out * n], n as isize);
        let od = out.data_mut();
        for co in 0..c_out {
            let dst = &mut od[co * hw + y0 * w..co * hw + y0 * w + n];
            for (d, s) in dst.iter_mut().zip(&tmp[co * n..(co + 1) * n]) {
                *d += s;
            }
        }
        y0 += rows;
    }
    Ok(out)
}

/// Backward pass: accumulates into `grad_weights`/`grad_bias` and returns
/// the gradient with respect to `input`.
pub fn conv2d_backward(input: &Tensor, params: &mut LayerParams, grad_out: &Tensor) -> Result<Tensor> {
    let (c_in, h, w) = check_input(input, params)?;
    let block = rows_per_block(c_in, params.kernel(), w, h);
    conv2d_backward_blocked(input, params, grad_out, block)
}

fn conv2d_backward_blocked(
    input: &Tensor,
    params: &mut LayerParams,
    grad_out: &Tensor,
    block: usize,
) -> Result<Tensor> {
    let (c_in, h, w) = check_input(input, params)?;
    let c_out = params.c_out();
    if grad_out.shape() != [c_out, h, w] {
        return Err(shape_err(format!(
            "conv grad_out {:?}, expected [{c_out}, {h}, {w}]",
            grad_out.shape()
        )));
    }
    let k = params.kernel();
    let hw = h * w;
    let r = c_in * k * k;
    let go = grad_out.data();
    for co in 0..c_out {
        params.grad_bias.data_mut()[co] += go[co * hw..(co + 1) * hw].iter().sum::<f64>();
    }
    let mut grad_in = Tensor::zeros(&[c_in, h, w]);
    if k == 1 {
        // gW[co, ci] += Σ_p go[co, p] · x[ci, p]
        gemm(c_out, hw, r, 1.0, go, hw as isize, 1, input.data(), 1, hw as isize, 1.0, params.grad_weights.data_mut(), r as isize);
        // gx[ci, p] = Σ_co W[co, ci] · go[co, p]
        gemm(r, c_out, hw, 1.0, params.weights.data(), 1, r as isize, go, hw as isize, 1, 0.0, grad_in.data_mut(), hw as isize);
        return Ok(grad_in);
    }
    let mut col = vec![0.0; r * block * w];
    let mut gcol = vec![0.0; r * block * w];
    let mut y0 = 0;
    while y0 < h {
        let rows = block.min(h - y0);
        let n = rows * w;
        im2col(input.data(), c_in, h, w, k, y0, rows, &mut col[..r * n]);
        // grad_out block for rows y0..y0+rows of every output channel: row stride hw.
        let go_block = &go[y0 * w..];
        gemm(c_out, n, r, 1.0, go_block, hw as isize, 1, &col[..r * n], 1, n as isize, 1.0, params.grad_weights.data_mut(), r as isize);
        gemm(r, c_out, n, 1.0, params.weights.data(), 1, r as isize, go_block, hw as isize, 1, 0.0, &mut gcol[..r * n], n as isize);
        col2im_add(&gcol[..r * n], c_in, h, w, k, y0, rows, grad_in.data_mut());
        y0 += rows;
    }
    Ok(grad_in)
}
