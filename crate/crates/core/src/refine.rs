//! Refinement pathway: fuse the L, F and P channels and upscale ×8 to a
//! two-class probability map at crop resolution.
//!
//! ```text
//! [L,F,P] ─conv3×3+ReLU─▶ T@g ─UP(skip s4)─▶ T@2g ─UP(skip s2)─▶ T@4g ─UP*─▶ 2@8g ─softmax
//! UP:  up2x ─conv+ReLU─conv+ReLU─(+)◀─conv+ReLU─ skip level
//! UP*: up2x ─conv
//! ```

use rand::Rng;

use crate::error::{shape_err, Result};
use crate::features::FeaturePyramid;
use crate::nn::{
    conv2d, conv2d_backward, relu, relu_backward_from_output, softmax_channels, upsample2x, upsample2x_backward, Checkpoint, LayerParams, Tensor,
    UpsampleMode,
};

/// Number of fused channels: L, F, P.
pub const FUSION_INPUTS: usize = 3;

/// One upscaling stage with a skip connection.
#[derive(Clone, Debug)]
pub struct UpStage {
    pub conv_a: LayerParams,
    pub conv_b: LayerParams,
    pub skip: LayerParams,
}

#[derive(Clone, Debug)]
pub struct StageCache {
    up: Tensor,
    a: Tensor,
    b: Tensor,
    skip_in: Option<Tensor>,
    skip_out: Option<Tensor>,
}

impl UpStage {
    pub fn new<R: Rng + ?Sized>(trunk: usize, skip_channels: usize, rng: &mut R) -> Self {
        UpStage {
            conv_a: LayerParams::kaiming(trunk, trunk, 3, rng),
            conv_b: LayerParams::kaiming(trunk, trunk, 3, rng),
            skip: LayerParams::kaiming(skip_channels, trunk, 3, rng),
        }
    }

    fn layers(&self) -> [&LayerParams; 3] {
        [&self.conv_a, &self.conv_b, &self.skip]
    }

    fn layers_mut(&mut self) -> [&mut LayerParams; 3] {
        [&mut self.conv_a, &mut self.conv_b, &mut self.skip]
    }
}

/// Double the resolution, apply two conv+ReLU layers and add the adjusted
/// skip features when given.
pub fn upscale_stage(input: &Tensor, skip: Option<&Tensor>, stage: &UpStage) -> Result<Tensor> {
    Ok(stage_forward(input, skip, stage)?.0)
}

fn stage_forward(input: &Tensor, skip: Option<&Tensor>, stage: &UpStage) -> Result<(Tensor, StageCache)> {
    let up = upsample2x(input, UpsampleMode::Bilinear)?;
    let a = relu(&conv2d(&up, &stage.conv_a)?);
    let b = relu(&conv2d(&a, &stage.conv_b)?);
    let mut out = b.clone();
    let mut skip_out = None;
    if let Some(s) = skip {
        if s.shape()[1..] != up.shape()[1..] {
            return Err(shape_err(format!(
                "skip level {:?} does not match stage resolution {:?}",
                &s.shape()[1..],
                &up.shape()[1..]
            )));
        }
        let adj = relu(&conv2d(s, &stage.skip)?);
        out.add_assign(&adj)?;
        skip_out = Some(adj);
    }
    Ok((
        out,
        StageCache {
            up,
            a,
            b,
            skip_in: skip.cloned(),
            skip_out,
        },
    ))
}

fn stage_backward(stage: &mut UpStage, cache: &StageCache, grad_out: &Tensor) -> Result<Tensor> {
    if let (Some(si), Some(so)) = (&cache.skip_in, &cache.skip_out) {
        let g = relu_backward_from_output(so, grad_out);
        conv2d_backward(si, &mut stage.skip, &g)?;
    }
    let g = relu_backward_from_output(&cache.b, grad_out);
    let g = conv2d_backward(&cache.a, &mut stage.conv_b, &g)?;
    let g = relu_backward_from_output(&cache.a, &g);
    let g = conv2d_backward(&cache.up, &mut stage.conv_a, &g)?;
    upsample2x_backward(&g, UpsampleMode::Bilinear)
}

/// Trainable refinement network.
#[derive(Clone, Debug)]
pub struct RefineNet {
    pub fusion: LayerParams,
    pub up1: UpStage,
    pub up2: UpStage,
    pub up_final: LayerParams,
}

/// Everything the backward pass needs from one forward pass.
#[derive(Clone, Debug)]
pub struct RefineCache {
    input: Tensor,
    fused: Tensor,
    s1: StageCache,
    s2: StageCache,
    final_up: Tensor,
    pub logits: Tensor,
    pub prob: Tensor,
}

impl RefineNet {
    /// `skip_channels` are the channel counts of the stride-4 and stride-2
    /// pyramid levels.
    pub fn new<R: Rng + ?Sized>(trunk: usize, skip_channels: [usize; 2], rng: &mut R) -> Self {
        RefineNet {
            fusion: LayerParams::kaiming(FUSION_INPUTS, trunk, 3, rng),
            up1: UpStage::new(trunk, skip_channels[0], rng),
            up2: UpStage::new(trunk, skip_channels[1], rng),
            up_final: LayerParams::kaiming(trunk, 2, 3, rng),
        }
    }

    pub fn trunk_channels(&self) -> usize {
        self.fusion.c_out()
    }

    /// `[2, 8g, 8g]` probabilities for a `[3, g, g]` fusion input.
    pub fn forward(&self, input: &Tensor, pyramid: &FeaturePyramid) -> Result<Tensor> {
        Ok(self.forward_cached(input, pyramid)?.prob)
    }

    pub fn forward_cached(&self, input: &Tensor, pyramid: &FeaturePyramid) -> Result<RefineCache> {
        let (c, _, _) = input.dims3()?;
        if c != FUSION_INPUTS {
            return Err(shape_err(format!("fusion input has {c} channels, expected {FUSION_INPUTS}")));
        }
        let fused = relu(&conv2d(input, &self.fusion)?);
        let (x1, s1) = stage_forward(&fused, Some(&pyramid.levels[1]), &self.up1)?;
        let (x2, s2) = stage_forward(&x1, Some(&pyramid.levels[0]), &self.up2)?;
        let final_up = upsample2x(&x2, UpsampleMode::Bilinear)?;
        let logits = conv2d(&final_up, &self.up_final)?;
        let prob = softmax_channels(&logits)?;
        Ok(RefineCache {
            input: input.clone(),
            fused,
            s1,
            s2,
            final_up,
            logits,
            prob,
        })
    }

    /// Accumulate parameter gradients from the logit gradient and return the
    /// gradient with respect to the fusion input.
    pub fn backward(&mut self, cache: &RefineCache, grad_logits: &Tensor) -> Result<Tensor> {
        let g = conv2d_backward(&cache.final_up, &mut self.up_final, grad_logits)?;
        let g = upsample2x_backward(&g, UpsampleMode::Bilinear)?;
        let g = stage_backward(&mut self.up2, &cache.s2, &g)?;
        let g = stage_backward(&mut self.up1, &cache.s1, &g)?;
        let g = relu_backward_from_output(&cache.fused, &g);
        conv2d_backward(&cache.input, &mut self.fusion, &g)
    }

    pub fn layers(&self) -> Vec<&LayerParams> {
        let mut v = vec![&self.fusion];
        v.extend(self.up1.layers());
        v.extend(self.up2.layers());
        v.push(&self.up_final);
        v
    }

    pub fn layers_mut(&mut self) -> Vec<&mut LayerParams> {
        let mut v = vec![&mut self.fusion];
        v.extend(self.up1.layers_mut());
        v.extend(self.up2.layers_mut());
        v.push(&mut self.up_final);
        v
    }

    /// Stable checkpoint names, in the order of [`RefineNet::layers`].
    pub fn layer_names() -> [&'static str; 8] {
        [
            "refine.fusion",
            "refine.up1.conv_a",
            "refine.up1.conv_b",
            "refine.up1.skip",
            "refine.up2.conv_a",
            "refine.up2.conv_b",
            "refine.up2.skip",
            "refine.up_final",
        ]
    }

    pub fn store(&self, ck: &mut Checkpoint) {
        for (l, n) in self.layers().into_iter().zip(Self::layer_names()) {
            l.store(ck, n);
        }
    }

    pub fn restore(&mut self, ck: &Checkpoint) -> Result<()> {
        for (l, n) in self.layers_mut().into_iter().zip(Self::layer_names()) {
            l.restore(ck, n)?;
        }
        Ok(())
    }
}
