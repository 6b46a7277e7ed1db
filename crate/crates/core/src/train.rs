//! Training of the adjustment and refinement layers on synthetic pairs.
//!
//! Each sample takes two frames of one synthetic sequence. The feature sets
//! are built from the first frame at its ground-truth region; the second
//! frame is cropped around a jittered ground-truth position and segmented
//! with a location channel centered on the perturbed true target center.
//! The loss is the per-pixel crossentropy against the cropped test mask.

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::boxfit::{Mask, DEFAULT_ALPHA};
use crate::error::{Error, Result};
use crate::features::{extract_search_region, Backbone, FeaturePyramid, Geometry, HandCrafted};
use crate::gem::{location_channel, GridPos};
use crate::geometry::Point;
use crate::gim::{build_gim_model, posterior_backward, posterior_channel, scatter_model_grads, similarity_backward, similarity_forward, GimConfig};
use crate::network::Network;
use crate::nn::{crossentropy_with_logits, Adam, AdamConfig, LayerParams, Tensor};
use crate::synth::{sample_pair, SamplePair, SynthConfig, SyntheticSequence};
use crate::tracker::{grid_from_crop, grid_mask_or_center, normalize_size, target_geometry};

/// Training sequences use seeds below this; evaluation sequences above it.
pub const TRAINING_SEED_LIMIT: u64 = 1 << 32;
/// Loss ratio over the initial validation loss that aborts a run.
pub const DIVERGENCE_FACTOR: f64 = 10.0;

const VALIDATION_SALT: u64 = 0x7A11_DA7E;

/// Sequences whose seed is a multiple of ten are held out for validation.
pub fn is_validation_seed(seed: u64) -> bool {
    seed % 10 == 0
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainingConfig {
    pub geometry: Geometry,
    pub batch_size: usize,
    pub epochs: usize,
    pub iterations_per_epoch: usize,
    /// Learning rate and its step decay.
    pub adam: AdamConfig,
    /// Largest frame distance between the two frames of a pair.
    pub pair_range: usize,
    /// Location perturbation as a fraction of the target size σ = √(wh).
    pub perturbation: f64,
    /// Shift of the test region center as a fraction of σ.
    pub region_jitter: f64,
    /// Relative jitter of the test region size.
    pub scale_jitter: f64,
    pub validation_samples: usize,
    pub synth: SynthConfig,
    pub gim: GimConfig,
    pub seed: u64,
}

impl TrainingConfig {
    /// Small schedule that runs in minutes on one core.
    pub fn desk() -> Self {
        TrainingConfig {
            geometry: Geometry::desk(),
            batch_size: 8,
            epochs: 10,
            iterations_per_epoch: 200,
            // Ten epochs are too few for the full-size decay interval to act.
            adam: AdamConfig {
                decay_interval_epochs: 5,
                ..AdamConfig::default()
            },
            pair_range: 50,
            perturbation: 0.125,
            region_jitter: 0.25,
            scale_jitter: 0.1,
            validation_samples: 32,
            synth: SynthConfig::default(),
            gim: GimConfig::default(),
            seed: 1,
        }
    }

    /// The full-size schedule: 64-pair batches, 40 epochs of 1000 iterations.
    pub fn full() -> Self {
        TrainingConfig {
            geometry: Geometry::full(),
            batch_size: 64,
            epochs: 40,
            iterations_per_epoch: 1000,
            adam: AdamConfig::default(),
            validation_samples: 256,
            ..Self::desk()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.geometry.validate()?;
        let positive = [
            ("batch_size", self.batch_size),
            ("epochs", self.epochs),
            ("iterations_per_epoch", self.iterations_per_epoch),
            ("pair_range", self.pair_range),
            ("validation_samples", self.validation_samples),
            ("decay_interval_epochs", self.adam.decay_interval_epochs),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::InvalidParameter(format!("{name} must be positive")));
            }
        }
        let fractions = [
            ("learning_rate", self.adam.learning_rate),
            ("decay_factor", self.adam.decay_factor),
            ("perturbation", self.perturbation),
            ("region_jitter", self.region_jitter),
            ("scale_jitter", self.scale_jitter),
        ];
        for (name, v) in fractions {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")));
            }
        }
        if self.scale_jitter >= 1.0 {
            return Err(Error::InvalidParameter("scale_jitter must be below 1".into()));
        }
        Ok(())
    }
}

/// Uniform offset in `[−fσ, fσ]` on each axis.
pub fn perturbation_offset<R: Rng + ?Sized>(rng: &mut R, sigma: f64, fraction: f64) -> Point {
    let r = fraction * sigma;
    Point::new(rng.gen_range(-r..=r), rng.gen_range(-r..=r))
}

/// Target position and size measured the same way the tracker does.
fn mask_box(mask: &Mask) -> Result<(Point, (f64, f64))> {
    target_geometry(mask, DEFAULT_ALPHA)
}

/// Everything a training step needs from one pair; features of the fixed
/// backbone are computed once.
#[derive(Clone, Debug)]
pub struct TrainingSample {
    pub train_pyramid: FeaturePyramid,
    /// Target cells on the model grid of the train region.
    pub grid_mask: Mask,
    pub test_pyramid: FeaturePyramid,
    /// Perturbed target center on the model grid of the test region.
    pub location: GridPos,
    /// Ground truth in test-crop pixels.
    pub target: Mask,
}

pub fn prepare_sample<R: Rng + ?Sized>(pair: &SamplePair, config: &TrainingConfig, rng: &mut R) -> Result<TrainingSample> {
    let crop = config.geometry.crop_size;
    let backbone = HandCrafted;

    let (c, size) = mask_box(&pair.train_mask)?;
    let train_region = extract_search_region(&pair.train_frame, c, size, crop)?;
    let train_pyramid = backbone.pyramid(&train_region, pair.indices.0)?;
    let grid_mask = grid_mask_or_center(&train_region.crop_mask(&pair.train_mask), config.geometry.grid())?;

    let (c, size) = mask_box(&pair.test_mask)?;
    let sigma = (size.0 * size.1).sqrt();
    let shift = perturbation_offset(rng, sigma, config.region_jitter);
    let s = 1.0 + rng.gen_range(-config.scale_jitter..=config.scale_jitter);
    let test_size = normalize_size((size.0 * s, size.1 * s));
    let test_region = extract_search_region(&pair.test_frame, Point::new(c.x + shift.x, c.y + shift.y), test_size, crop)?;
    let test_pyramid = backbone.pyramid(&test_region, pair.indices.1)?;
    let d = perturbation_offset(rng, sigma, config.perturbation);
    let location = grid_from_crop(test_region.frame_to_crop(Point::new(c.x + d.x, c.y + d.y)));
    let target = test_region.crop_mask(&pair.test_mask);
    Ok(TrainingSample {
        train_pyramid,
        grid_mask,
        test_pyramid,
        location,
        target,
    })
}

/// Forward pass on one sample; with `grad_scale` set, also accumulates
/// parameter gradients of the loss times `grad_scale` into `net`.
pub fn sample_loss(net: &mut Network, sample: &TrainingSample, gim: &GimConfig, grad_scale: Option<f64>) -> Result<f64> {
    let train_cache = net.adjust.forward_cached(sample.train_pyramid.model_level())?;
    let model = build_gim_model(train_cache.output(), &sample.grid_mask, gim)?;
    let test_cache = net.adjust.forward_cached(sample.test_pyramid.model_level())?;
    let pass = similarity_forward(test_cache.output(), &model)?;
    let p = posterior_channel(&pass.foreground, &pass.background)?;
    let (_, h, w) = p.dims3()?;
    let l = location_channel(sample.location, h, w);
    let input = Tensor::concat_channels(&[&l, &pass.foreground, &p])?;
    let cache = net.refine.forward_cached(&input, &sample.test_pyramid)?;
    let (loss, mut grad) = crossentropy_with_logits(&cache.logits, &sample.target)?;
    let Some(scale) = grad_scale else {
        return Ok(loss);
    };
    grad.scale(scale);
    let g_in = net.refine.backward(&cache, &grad)?;
    let g_p = g_in.slice_channels(2, 1)?;
    let mut g_f = g_in.slice_channels(1, 1)?;
    let (gf_from_p, g_b) = posterior_backward(&p, &g_p);
    g_f.add_assign(&gf_from_p)?;
    let sg = similarity_backward(&pass, &model, &g_f, &g_b)?;
    net.adjust.backward(&test_cache, &sg.features)?;
    net.adjust.backward(&train_cache, &scatter_model_grads(&model, &sg)?)?;
    Ok(loss)
}

/// Mean loss with gradients accumulated into `net` as the batch average.
/// Samples are processed in parallel on clones and summed in order, so the
/// result does not depend on the thread count.
pub fn batch_step(net: &mut Network, samples: &[TrainingSample], gim: &GimConfig) -> Result<f64> {
    let scale = 1.0 / samples.len() as f64;
    let base: &Network = net;
    let results: Vec<Result<(f64, Network)>> = samples
        .par_iter()
        .map(|s| {
            let mut local = base.clone();
            local.zero_grad();
            let loss = sample_loss(&mut local, s, gim, Some(scale))?;
            Ok((loss, local))
        })
        .collect();
    net.zero_grad();
    let mut total = 0.0;
    for r in results {
        let (loss, local) = r?;
        total += loss;
        for (dst, src) in net.layers_mut().into_iter().zip(local.layers()) {
            accumulate(dst, src)?;
        }
    }
    Ok(total * scale)
}

fn accumulate(dst: &mut LayerParams, src: &LayerParams) -> Result<()> {
    dst.grad_weights.add_assign(&src.grad_weights)?;
    dst.grad_bias.add_assign(&src.grad_bias)
}

pub fn mean_loss(net: &Network, samples: &[TrainingSample], gim: &GimConfig) -> Result<f64> {
    let losses: Vec<Result<f64>> = samples
        .par_iter()
        .map(|s| sample_loss(&mut net.clone(), s, gim, None))
        .collect();
    let mut total = 0.0;
    for l in losses {
        total += l?;
    }
    Ok(total / samples.len() as f64)
}

/// One row of a loss curve.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossRecord {
    pub epoch: usize,
    /// Global iteration count, starting at 0 before the first update.
    pub iteration: usize,
    pub loss: f64,
}

pub fn write_loss_csv(path: impl AsRef<Path>, records: &[LossRecord]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "epoch,iteration,loss")?;
    for r in records {
        writeln!(out, "{},{},{:.6}", r.epoch, r.iteration, r.loss)?;
    }
    out.flush()?;
    Ok(())
}

/// Progress notifications from [`train_network_with`].
#[derive(Clone, Copy, Debug)]
pub enum Progress {
    Iteration(LossRecord),
    Validation(LossRecord),
}

#[derive(Clone, Debug)]
pub struct TrainingOutcome {
    pub network: Network,
    /// Mean training-batch loss per iteration.
    pub curve: Vec<LossRecord>,
    /// Validation loss before training and after every epoch.
    pub validation: Vec<LossRecord>,
}

impl TrainingOutcome {
    pub fn initial_validation_loss(&self) -> f64 {
        self.validation[0].loss
    }

    pub fn final_validation_loss(&self) -> f64 {
        self.validation[self.validation.len() - 1].loss
    }
}

/// Deterministic batch of training samples from non-validation sequences.
pub fn draw_training_batch(rng: &mut ChaCha8Rng, config: &TrainingConfig) -> Result<Vec<TrainingSample>> {
    let seeds: Vec<(u64, u64)> = (0..config.batch_size)
        .map(|_| {
            let seq = loop {
                let s = rng.gen_range(0..TRAINING_SEED_LIMIT);
                if !is_validation_seed(s) {
                    break s;
                }
            };
            (seq, rng.gen())
        })
        .collect();
    samples_from_seeds(&seeds, config)
}

fn samples_from_seeds(seeds: &[(u64, u64)], config: &TrainingConfig) -> Result<Vec<TrainingSample>> {
    seeds
        .par_iter()
        .map(|&(seq_seed, sample_seed)| {
            let seq = SyntheticSequence::new(seq_seed, config.synth);
            let mut rng = ChaCha8Rng::seed_from_u64(sample_seed);
            let pair = sample_pair(&seq, config.pair_range, &mut rng);
            prepare_sample(&pair, config, &mut rng)
        })
        .collect()
}

/// The fixed validation set: samples from held-out sequences.
pub fn validation_set(config: &TrainingConfig) -> Result<Vec<TrainingSample>> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ VALIDATION_SALT);
    let seeds: Vec<(u64, u64)> = (0..config.validation_samples)
        .map(|_| (rng.gen_range(0..TRAINING_SEED_LIMIT / 10) * 10, rng.gen()))
        .collect();
    samples_from_seeds(&seeds, config)
}

pub fn train_network(config: &TrainingConfig) -> Result<TrainingOutcome> {
    train_network_with(config, &mut |_| {})
}

/// Train from scratch. Aborts with [`Error::Diverged`] when a batch loss is
/// not finite or exceeds ten times the initial validation loss.
pub fn train_network_with(config: &TrainingConfig, progress: &mut dyn FnMut(Progress)) -> Result<TrainingOutcome> {
    config.validate()?;
    let mut net = Network::new(config.geometry, HandCrafted.channels(), config.seed)?;
    let validation = validation_set(config)?;
    let initial = mean_loss(&net, &validation, &config.gim)?;
    let mut val_curve = vec![LossRecord {
        epoch: 0,
        iteration: 0,
        loss: initial,
    }];
    progress(Progress::Validation(val_curve[0]));
    let mut adam = Adam::new(&net.layers(), config.adam);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut curve = Vec::with_capacity(config.epochs * config.iterations_per_epoch);
    let mut iteration = 0;
    for epoch in 0..config.epochs {
        adam.set_epoch(epoch);
        for _ in 0..config.iterations_per_epoch {
            let batch = draw_training_batch(&mut rng, config)?;
            let loss = batch_step(&mut net, &batch, &config.gim)?;
            iteration += 1;
            if !loss.is_finite() || loss > DIVERGENCE_FACTOR * initial {
                return Err(Error::Diverged {
                    epoch,
                    iteration,
                    loss,
                    initial,
                });
            }
            adam.step(&mut net.layers_mut());
            let rec = LossRecord { epoch, iteration, loss };
            curve.push(rec);
            progress(Progress::Iteration(rec));
        }
        let rec = LossRecord {
            epoch,
            iteration,
            loss: mean_loss(&net, &validation, &config.gim)?,
        };
        val_curve.push(rec);
        progress(Progress::Validation(rec));
    }
    Ok(TrainingOutcome {
        network: net,
        curve,
        validation: val_curve,
    })
}

/// Repeatedly fit a single fixed pair; returns the loss before each step.
pub fn overfit_single_pair(config: &TrainingConfig, steps: usize) -> Result<(Network, Vec<f64>)> {
    config.validate()?;
    let mut net = Network::new(config.geometry, HandCrafted.channels(), config.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let sample = draw_training_batch(&mut rng, &TrainingConfig { batch_size: 1, ..*config })?;
    let mut adam = Adam::new(&net.layers(), config.adam);
    let mut losses = Vec::with_capacity(steps);
    for _ in 0..steps {
        let loss = batch_step(&mut net, &sample, &config.gim)?;
        if !loss.is_finite() {
            return Err(Error::Diverged {
                epoch: 0,
                iteration: losses.len(),
                loss,
                initial: losses.first().copied().unwrap_or(f64::NAN),
            });
        }
        losses.push(loss);
        adam.step(&mut net.layers_mut());
    }
    Ok((net, losses))
}
