//! Command-line plumbing: configuration, dataset I/O and the per-sequence
//! tracking and scoring loops shared by the commands.

pub mod cli;
pub mod config;
pub mod dataset;

use std::sync::Arc;

use crate::boxfit::Mask;
use crate::error::{Error, Result};
use crate::eval::{
    average_overlap_sr, davis_measures, parallel_map, run_reset_protocol, score_predictions, Column, FrameSource, OutputKind, Region, Report,
    ResetConfig, Session,
};
use crate::features::Backbone;
use crate::network::Network;
use crate::tracker::{Ablation, TrackOutput, Tracker, TrackerConfig};

/// Track from frame 0, started from `init`. The first output is the
/// initialization itself.
pub fn track_sequence(tracker: &mut Tracker, frames: &dyn FrameSource, init: &Region) -> Result<Vec<TrackOutput>> {
    let mut out = Vec::with_capacity(frames.len());
    for t in 0..frames.len() {
        let img = frames.frame(t)?;
        out.push(if t == 0 {
            tracker.initialize_at(&img, &init.to_init()?, 0)?
        } else {
            tracker.track_at(&img, t)?
        });
    }
    Ok(out)
}

/// Box region reported for a tracked frame; empty when the target is lost.
pub fn output_region(o: &TrackOutput) -> Region {
    if o.lost {
        Region::Empty
    } else {
        Region::Polygon(o.polygon.to_vec())
    }
}

/// Frames and ground truth of one sequence.
pub struct SequenceInput<'a> {
    pub name: String,
    pub frames: &'a dyn FrameSource,
    /// Per-frame box ground truth.
    pub boxes: Vec<Region>,
    /// Per-frame masks, when annotated.
    pub masks: Option<Vec<Mask>>,
}

/// Tracking results of one sequence under one tracker configuration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SequenceScores {
    /// No-reset box overlap measures.
    pub ao: f64,
    pub sr50: f64,
    pub precision: f64,
    /// Reset-protocol accuracy and failure count.
    pub accuracy: Option<f64>,
    pub failures: usize,
    /// Mask measures over frames after the first.
    pub j: Option<f64>,
    pub f: Option<f64>,
}

/// Run the no-reset pass (started from the first mask when available) and
/// the reset pass (boxes only) and score both.
pub fn score_sequence(
    net: &Arc<Network>,
    backbone: &Arc<dyn Backbone>,
    config: TrackerConfig,
    seq: &SequenceInput,
    reset: &ResetConfig,
) -> Result<SequenceScores> {
    let n = seq.frames.len();
    if seq.boxes.len() != n || seq.masks.as_ref().is_some_and(|m| m.len() != n) {
        return Err(Error::Shape(format!("sequence {} needs ground truth for all {n} frames", seq.name)));
    }
    let init = match &seq.masks {
        Some(m) => Region::Mask(m[0].clone()),
        None => seq.boxes[0].clone(),
    };
    let mut tracker = Tracker::with_backbone(net.clone(), backbone.clone(), config);
    let outputs = track_sequence(&mut tracker, seq.frames, &init)?;
    let preds: Vec<Option<Region>> = outputs.iter().enumerate().map(|(t, o)| (t > 0).then(|| output_region(o))).collect();
    let summary = average_overlap_sr(&score_predictions(&preds, &seq.boxes)?);
    let (j, f) = match &seq.masks {
        Some(gt) if n > 1 => {
            let pred: Vec<Mask> = outputs[1..].iter().map(|o| o.mask.clone()).collect();
            let d = davis_measures(&pred, &gt[1..])?;
            (Some(d.j), Some(d.f))
        }
        _ => (None, None),
    };
    let mut factory = || {
        Ok(Session {
            tracker: Tracker::with_backbone(net.clone(), backbone.clone(), config),
            frames: seq.frames,
            output: OutputKind::Box,
        })
    };
    let (metrics, _) = run_reset_protocol(&mut factory, &seq.boxes, reset)?;
    Ok(SequenceScores {
        ao: summary.ao,
        sr50: summary.sr50,
        precision: summary.precision,
        accuracy: metrics.accuracy,
        failures: metrics.failures,
        j,
        f,
    })
}

/// Per-variant totals over a set of sequences.
#[derive(Clone, Debug, PartialEq)]
pub struct VariantSummary {
    pub variant: Ablation,
    pub per_sequence: Vec<SequenceScores>,
}

fn mean(v: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = v.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

impl VariantSummary {
    pub fn ao(&self) -> f64 {
        mean(self.per_sequence.iter().map(|s| Some(s.ao))).unwrap_or(0.0)
    }

    /// Mean of the per-sequence reset accuracies.
    pub fn accuracy(&self) -> Option<f64> {
        mean(self.per_sequence.iter().map(|s| s.accuracy))
    }

    pub fn failures(&self) -> usize {
        self.per_sequence.iter().map(|s| s.failures).sum()
    }

    pub fn j(&self) -> Option<f64> {
        mean(self.per_sequence.iter().map(|s| s.j))
    }

    pub fn f(&self) -> Option<f64> {
        mean(self.per_sequence.iter().map(|s| s.f))
    }
}

/// Score every variant on every sequence, fanning out over the worker pool.
pub fn run_ablation(
    net: &Arc<Network>,
    backbone: &Arc<dyn Backbone>,
    base: TrackerConfig,
    variants: &[Ablation],
    sequences: &[SequenceInput],
    reset: &ResetConfig,
) -> Result<Vec<VariantSummary>> {
    let jobs: Vec<(usize, usize)> = (0..variants.len()).flat_map(|v| (0..sequences.len()).map(move |s| (v, s))).collect();
    let scores = parallel_map(&jobs, |&(v, s)| score_sequence(net, backbone, variants[v].apply(base), &sequences[s], reset))?;
    let mut it = scores.into_iter();
    variants
        .iter()
        .map(|&variant| {
            Ok(VariantSummary {
                variant,
                per_sequence: it.by_ref().take(sequences.len()).collect::<Result<_>>()?,
            })
        })
        .collect()
}

/// One row per variant.
pub fn ablation_report(results: &[VariantSummary]) -> Report {
    let mut r = Report::new(vec![
        Column::mean("accuracy"),
        Column::count("failures"),
        Column::mean("ao"),
        Column::mean("j"),
        Column::mean("f"),
    ]);
    r.label = "variant".into();
    r.summary = false;
    for v in results {
        r.push(
            v.variant.name(),
            vec![
                v.accuracy().unwrap_or(f64::NAN),
                v.failures() as f64,
                v.ao(),
                v.j().unwrap_or(f64::NAN),
                v.f().unwrap_or(f64::NAN),
            ],
        );
    }
    r
}
