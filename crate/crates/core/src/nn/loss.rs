use super::softmax::softmax_channels;
use super::tensor::Tensor;
use crate::boxfit::Mask;
use crate::error::{Error, Result};

/// Lower bound on probabilities inside the log.
pub const LOG_CLAMP: f64 = 1e-7;

fn check_target(prediction: &Tensor, target: &Mask) -> Result<(usize, usize)> {
    let (c, h, w) = prediction.dims3()?;
    if c != 2 || (target.height(), target.width()) != (h, w) {
        return Err(Error::Shape(format!(
            "crossentropy needs [2, {}, {}] prediction, got {:?}",
            target.height(),
            target.width(),
            prediction.shape()
        )));
    }
    Ok((h, w))
}

/// Mean negative log-likelihood of a two-class per-pixel distribution.
/// Channel 1 is the target class.
pub fn crossentropy_loss(prediction: &Tensor, target: &Mask) -> Result<f64> {
    let (h, w) = check_target(prediction, target)?;
    let plane = h * w;
    let p = prediction.data();
    let mut total = 0.0;
    for (i, &fg) in target.data().iter().enumerate() {
        let prob = if fg { p[plane + i] } else { p[i] };
        total -= prob.max(LOG_CLAMP).ln();
    }
    Ok(total / plane as f64)
}

/// Loss on pre-softmax logits together with its gradient wrt the logits,
/// `(softmax − onehot) / N`.
pub fn crossentropy_with_logits(logits: &Tensor, target: &Mask) -> Result<(f64, Tensor)> {
    let (h, w) = check_target(logits, target)?;
    let prob = softmax_channels(logits)?;
    let loss = crossentropy_loss(&prob, target)?;
    let plane = h * w;
    let n = plane as f64;
    let mut grad = prob;
    let g = grad.data_mut();
    for (i, &fg) in target.data().iter().enumerate() {
        g[i] /= n;
        g[plane + i] /= n;
        if fg {
            g[plane + i] -= 1.0 / n;
        } else {
            g[i] -= 1.0 / n;
        }
    }
    Ok((loss, grad))
}
