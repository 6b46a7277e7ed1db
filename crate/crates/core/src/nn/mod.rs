//! Minimal differentiable layer library: the tensor type, convolutions,
//! activations, channel softmax, 2× upsampling, crossentropy and ADAM.
//!
//! Every layer exposes a forward function and a backward function that takes
//! the upstream gradient and returns the input gradient, accumulating any
//! parameter gradients into the layer's [`LayerParams`].

mod activation;
mod adam;
mod checkpoint;
mod conv;
mod loss;
mod softmax;
mod tensor;
mod upsample;

pub use activation::{activation, activation_backward, relu, relu_backward_from_output, Activation, Pelu};
pub use adam::{adam_step, Adam, AdamConfig, AdamState};
pub use checkpoint::{Checkpoint, FORMAT_VERSION, MAGIC};
pub use conv::{conv2d, conv2d_backward, LayerParams};
pub(crate) use conv::gemm;
pub use loss::{crossentropy_loss, crossentropy_with_logits, LOG_CLAMP};
pub use softmax::{softmax_channels, softmax_channels_backward};
pub use tensor::Tensor;
pub use upsample::{upsample2x, upsample2x_backward, UpsampleMode};

use crate::error::Result;

impl LayerParams {
    pub fn store(&self, ck: &mut Checkpoint, name: &str) {
        ck.insert(format!("{name}.weight"), self.weights.clone());
        ck.insert(format!("{name}.bias"), self.bias.clone());
    }

    /// Restore from checkpoint entries, checking that shapes match `self`.
    pub fn restore(&mut self, ck: &Checkpoint, name: &str) -> Result<()> {
        let w = ck.require(&format!("{name}.weight"))?;
        let b = ck.require(&format!("{name}.bias"))?;
        if w.shape() != self.weights.shape() || b.shape() != self.bias.shape() {
            return Err(crate::Error::Checkpoint(format!(
                "layer `{name}` shape {:?}/{:?} does not match expected {:?}/{:?}",
                w.shape(),
                b.shape(),
                self.weights.shape(),
                self.bias.shape()
            )));
        }
        *self = LayerParams::from_weights(w.clone(), b.clone())?;
        Ok(())
    }
}
