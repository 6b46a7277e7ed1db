//! All trainable parameters of the tracker, with checkpoint I/O.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::features::{FeatureAdjust, Geometry};
use crate::nn::{Checkpoint, LayerParams, Tensor};
use crate::refine::RefineNet;

const META_CROP: &str = "meta.crop_size";
const META_TRUNK: &str = "meta.trunk_channels";
const META_PYRAMID: &str = "meta.pyramid_channels";

/// GIM adjustment layers plus the refinement pathway.
#[derive(Clone, Debug)]
pub struct Network {
    pub geometry: Geometry,
    /// Channel counts of the backbone levels at strides 2, 4, 8.
    pub pyramid_channels: [usize; 3],
    pub adjust: FeatureAdjust,
    pub refine: RefineNet,
}

impl Network {
    pub fn new(geometry: Geometry, pyramid_channels: [usize; 3], seed: u64) -> Result<Self> {
        geometry.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(Network {
            geometry,
            pyramid_channels,
            adjust: FeatureAdjust::new(pyramid_channels[2], &mut rng),
            refine: RefineNet::new(geometry.trunk_channels, [pyramid_channels[1], pyramid_channels[0]], &mut rng),
        })
    }

    pub fn layers(&self) -> Vec<&LayerParams> {
        let mut v: Vec<&LayerParams> = self.adjust.layers().into();
        v.extend(self.refine.layers());
        v
    }

    pub fn layers_mut(&mut self) -> Vec<&mut LayerParams> {
        let mut v: Vec<&mut LayerParams> = self.adjust.layers_mut().into();
        v.extend(self.refine.layers_mut());
        v
    }

    pub fn zero_grad(&mut self) {
        for l in self.layers_mut() {
            l.zero_grad();
        }
    }

    pub fn param_count(&self) -> usize {
        self.layers().iter().map(|l| l.param_count()).sum()
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new();
        let scalar = |v: usize| Tensor::full(&[1], v as f64);
        ck.insert(META_CROP, scalar(self.geometry.crop_size));
        ck.insert(META_TRUNK, scalar(self.geometry.trunk_channels));
        ck.insert(
            META_PYRAMID,
            Tensor::from_vec(&[3], self.pyramid_channels.iter().map(|&c| c as f64).collect()).expect("three entries"),
        );
        self.adjust.reduce.store(&mut ck, "gim.reduce");
        self.adjust.conv.store(&mut ck, "gim.conv");
        self.refine.store(&mut ck);
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let read = |name: &str, n: usize| -> Result<Vec<usize>> {
            let t = ck.require(name)?;
            if t.len() != n || t.data().iter().any(|&v| v < 1.0 || v.fract() != 0.0) {
                return Err(Error::Checkpoint(format!("bad metadata entry `{name}`")));
            }
            Ok(t.data().iter().map(|&v| v as usize).collect())
        };
        let geometry = Geometry {
            crop_size: read(META_CROP, 1)?[0],
            trunk_channels: read(META_TRUNK, 1)?[0],
        };
        let p = read(META_PYRAMID, 3)?;
        let mut net = Network::new(geometry, [p[0], p[1], p[2]], 0).map_err(|e| Error::Checkpoint(e.to_string()))?;
        net.adjust.reduce.restore(ck, "gim.reduce")?;
        net.adjust.conv.restore(ck, "gim.conv")?;
        net.refine.restore(ck)?;
        Ok(net)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::BASE_CHANNELS;

    #[test]
    fn checkpoint_round_trip_preserves_geometry_and_weights() {
        let net = Network::new(Geometry::desk(), [BASE_CHANNELS; 3], 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.bin");
        net.save(&path).unwrap();
        let back = Network::load(&path).unwrap();
        assert_eq!(back.geometry, net.geometry);
        assert_eq!(back.pyramid_channels, net.pyramid_channels);
        for (a, b) in net.layers().iter().zip(back.layers()) {
            assert!(a.weights.max_abs_diff(&b.weights) < 1e-6);
            assert!(a.bias.max_abs_diff(&b.bias) < 1e-6);
        }
    }

    #[test]
    fn missing_layer_is_a_checkpoint_error() {
        let net = Network::new(Geometry::desk(), [BASE_CHANNELS; 3], 3).unwrap();
        let mut ck = Checkpoint::new();
        for (name, t) in net.to_checkpoint().entries() {
            if !name.starts_with("refine.up_final") {
                ck.insert(name.clone(), t.clone());
            }
        }
        assert!(matches!(Network::from_checkpoint(&ck), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn seeds_are_reproducible() {
        let a = Network::new(Geometry::desk(), [BASE_CHANNELS; 3], 9).unwrap();
        let b = Network::new(Geometry::desk(), [BASE_CHANNELS; 3], 9).unwrap();
        assert_eq!(a.refine.fusion.weights, b.refine.fusion.weights);
        assert!(a.param_count() > 0);
    }
}
