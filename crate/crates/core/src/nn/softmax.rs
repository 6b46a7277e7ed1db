use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Per-pixel softmax across channels of a `[C, H, W]` tensor (C ≥ 2).
pub fn softmax_channels(input: &Tensor) -> Result<Tensor> {
    let (c, h, w) = input.dims3()?;
    if c < 2 {
        return Err(Error::Shape(format!("softmax needs ≥ 2 channels, got {c}")));
    }
    let plane = h * w;
    let x = input.data();
    let mut out = Tensor::zeros(&[c, h, w]);
    let o = out.data_mut();
    for p in 0..plane {
        let mut m = f64::NEG_INFINITY;
        for ch in 0..c {
            m = m.max(x[ch * plane + p]);
        }
        let mut z = 0.0;
        for ch in 0..c {
            let e = (x[ch * plane + p] - m).exp();
            o[ch * plane + p] = e;
            z += e;
        }
        for ch in 0..c {
            o[ch * plane + p] /= z;
        }
    }
    Ok(out)
}

/// Input gradient given the softmax output `y` and upstream gradient `g`:
/// `dx_c = y_c (g_c − Σ_k y_k g_k)`.
pub fn softmax_channels_backward(output: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    let (c, h, w) = output.dims3()?;
    if grad_out.shape() != output.shape() {
        return Err(Error::Shape("softmax backward shape mismatch".into()));
    }
    let plane = h * w;
    let (y, g) = (output.data(), grad_out.data());
    let mut gi = Tensor::zeros(&[c, h, w]);
    let d = gi.data_mut();
    for p in 0..plane {
        let dot: f64 = (0..c).map(|ch| y[ch * plane + p] * g[ch * plane + p]).sum();
        for ch in 0..c {
            let i = ch * plane + p;
            d[i] = y[i] * (g[i] - dot);
        }
    }
    Ok(gi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn equal_logits_give_half() {
        let x = Tensor::full(&[2, 3, 3], 0.7);
        let y = softmax_channels(&x).unwrap();
        assert!(y.data().iter().all(|&v| (v - 0.5).abs() < 1e-15));
    }

    #[test]
    fn log_three_gives_quarter_and_three_quarters() {
        let x = Tensor::from_vec(&[2, 1, 1], vec![0.0, 3f64.ln()]).unwrap();
        let y = softmax_channels(&x).unwrap();
        assert!((y.data()[0] - 0.25).abs() < 1e-12);
        assert!((y.data()[1] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn rows_sum_to_one_and_survive_large_logits() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut x = Tensor::randn(&[3, 4, 4], 5.0, &mut rng);
        x.data_mut()[0] = 800.0;
        let y = softmax_channels(&x).unwrap();
        assert!(y.is_finite());
        for p in 0..16 {
            let s: f64 = (0..3).map(|c| y.data()[c * 16 + p]).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn single_channel_rejected() {
        assert!(softmax_channels(&Tensor::zeros(&[1, 2, 2])).is_err());
    }
}
