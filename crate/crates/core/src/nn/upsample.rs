use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum UpsampleMode {
    Nearest,
    /// Half-pixel-centred linear interpolation with edge clamping.
    #[default]
    Bilinear,
}

/// Separable 1-D taps for doubling: output `2i` reads `(i-1, i)` with weights
/// `(0.25, 0.75)`, output `2i+1` reads `(i, i+1)` with `(0.75, 0.25)`; indices
/// clamp to the valid range.
#[inline]
fn taps(o: usize, n: usize) -> [(usize, f64); 2] {
    let i = o / 2;
    if o % 2 == 0 {
        [(i.saturating_sub(1), 0.25), (i, 0.75)]
    } else {
        [(i, 0.75), ((i + 1).min(n - 1), 0.25)]
    }
}

/// Double both spatial extents of a `[C, H, W]` tensor.
pub fn upsample2x(input: &Tensor, mode: UpsampleMode) -> Result<Tensor> {
    let (c, h, w) = input.dims3()?;
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = Tensor::zeros(&[c, oh, ow]);
    let src = input.data();
    let dst = out.data_mut();
    match mode {
        UpsampleMode::Nearest => {
            for ch in 0..c {
                for y in 0..oh {
                    let srow = &src[(ch * h + y / 2) * w..(ch * h + y / 2 + 1) * w];
                    let drow = &mut dst[(ch * oh + y) * ow..(ch * oh + y + 1) * ow];
                    for (x, d) in drow.iter_mut().enumerate() {
                        *d = srow[x / 2];
                    }
                }
            }
        }
        UpsampleMode::Bilinear => {
            let mut tmp = vec![0.0; h * ow];
            for ch in 0..c {
                let plane = &src[ch * h * w..(ch + 1) * h * w];
                for y in 0..h {
                    let srow = &plane[y * w..(y + 1) * w];
                    let trow = &mut tmp[y * ow..(y + 1) * ow];
                    for (x, t) in trow.iter_mut().enumerate() {
                        let [(i0, w0), (i1, w1)] = taps(x, w);
                        *t = w0 * srow[i0] + w1 * srow[i1];
                    }
                }
                for y in 0..oh {
                    let [(r0, w0), (r1, w1)] = taps(y, h);
                    let (a, b) = (&tmp[r0 * ow..(r0 + 1) * ow], &tmp[r1 * ow..(r1 + 1) * ow]);
                    let drow = &mut dst[(ch * oh + y) * ow..(ch * oh + y + 1) * ow];
                    for x in 0..ow {
                        drow[x] = w0 * a[x] + w1 * b[x];
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Adjoint of [`upsample2x`]: gradients are routed back with the same weights.
pub fn upsample2x_backward(grad_out: &Tensor, mode: UpsampleMode) -> Result<Tensor> {
    let (c, oh, ow) = grad_out.dims3()?;
    if oh % 2 != 0 || ow % 2 != 0 {
        return Err(Error::Shape(format!(
            "upsample gradient extents must be even, got {oh}x{ow}"
        )));
    }
    let (h, w) = (oh / 2, ow / 2);
    let mut gi = Tensor::zeros(&[c, h, w]);
    let g = grad_out.data();
    let d = gi.data_mut();
    match mode {
        UpsampleMode::Nearest => {
            for ch in 0..c {
                for y in 0..oh {
                    for x in 0..ow {
                        d[(ch * h + y / 2) * w + x / 2] += g[(ch * oh + y) * ow + x];
                    }
                }
            }
        }
        UpsampleMode::Bilinear => {
            let mut tmp = vec![0.0; h * ow];
            for ch in 0..c {
                tmp.fill(0.0);
                for y in 0..oh {
                    let [(r0, w0), (r1, w1)] = taps(y, h);
                    let grow = &g[(ch * oh + y) * ow..(ch * oh + y + 1) * ow];
                    for x in 0..ow {
                        tmp[r0 * ow + x] += w0 * grow[x];
                        tmp[r1 * ow + x] += w1 * grow[x];
                    }
                }
                let plane = &mut d[ch * h * w..(ch + 1) * h * w];
                for y in 0..h {
                    for x in 0..ow {
                        let [(i0, w0), (i1, w1)] = taps(x, w);
                        let t = tmp[y * ow + x];
                        plane[y * w + i0] += w0 * t;
                        plane[y * w + i1] += w1 * t;
                    }
                }
            }
        }
    }
    Ok(gi)
}
