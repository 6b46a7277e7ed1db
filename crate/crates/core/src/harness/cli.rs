//! `segtrack` command line.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};

use super::config::Config;
use super::dataset::{
    mask_file_name, open_dataset, read_mask, read_predictions, write_frame, write_mask, write_overlay, write_predictions, Prediction, SequenceDataset,
    BOX_FILE, GROUND_TRUTH_FILE, MASK_DIR,
};
use super::{ablation_report, output_region, run_ablation, track_sequence, SequenceInput};
use crate::error::{Error, Result};
use crate::eval::{
    average_overlap_sr, center_error, davis_measures, parallel_map, reference_box, region_overlap, run_reset_protocol,
    score_predictions, Column, FrameRecord, FrameSource, OutputKind, Region, Report, Session, TrackRun,
};
use crate::features::{Backbone, HandCrafted, Precomputed};
use crate::network::Network;
use crate::synth::{SynthConfig, SyntheticSequence};
use crate::tracker::{Ablation, Tracker};
use crate::train::{overfit_single_pair, train_network_with, write_loss_csv, LossRecord, Progress, TRAINING_SEED_LIMIT};

pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_MISSING_FILE: i32 = 3;
pub const EXIT_GROUND_TRUTH: i32 = 4;
pub const EXIT_CHECKPOINT: i32 = 5;

#[derive(Parser, Debug)]
#[command(name = "segtrack", version, about = "Segmentation tracker: track, train, evaluate and compare variants")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Protocol {
    Reset,
    Noreset,
    Davis,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Track one sequence and write boxes.txt and masks/.
    Track {
        #[arg(long)]
        sequence: PathBuf,
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Tracker variant, e.g. no-l or min-max.
        #[arg(long)]
        ablation: Option<String>,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Read stored feature maps from this directory instead of computing them.
        #[arg(long)]
        features: Option<PathBuf>,
        /// Run with reinitialization after failures; writes 1/2/0 markers.
        #[arg(long)]
        reset: bool,
        /// Also write frames with the mask and box drawn on them.
        #[arg(long)]
        overlays: bool,
        /// Override a configuration value (repeatable).
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Train on synthetic sequences and write a checkpoint plus loss curves.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Fit a single sample pair for this many steps instead.
        #[arg(long)]
        overfit: Option<usize>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Score stored predictions against a dataset.
    Eval {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, value_enum)]
        protocol: Protocol,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Write the report as CSV here as well as printing it.
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Compare tracker variants on a dataset.
    Ablate {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        weights: PathBuf,
        /// Comma-separated variant names; all variants by default.
        #[arg(long)]
        variants: Option<String>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Write synthetic sequences in dataset layout.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 10)]
        count: u64,
        #[arg(long, default_value_t = TRAINING_SEED_LIMIT + 1000)]
        seed: u64,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
}

/// Exit status for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::InvalidParameter(_) => EXIT_USAGE,
        Error::MissingFile(_) => EXIT_MISSING_FILE,
        Error::Io(io) if io.kind() == std::io::ErrorKind::NotFound => EXIT_MISSING_FILE,
        Error::GroundTruth { .. } => EXIT_GROUND_TRUTH,
        Error::Checkpoint(_) => EXIT_CHECKPOINT,
        _ => EXIT_FAILURE,
    }
}

/// Parse `args` (program name first), run the command and return the exit
/// status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("segtrack: {e}");
            exit_code(&e)
        }
    }
}

fn load_config(path: Option<&Path>, overrides: &[String]) -> Result<Config> {
    let mut c = match path {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    for o in overrides {
        let (k, v) = o.split_once('=').ok_or_else(|| Error::Config(format!("expected KEY=VALUE, got `{o}`")))?;
        c.set(k.trim(), v.trim())?;
    }
    Ok(c)
}

fn load_network(path: &Path) -> Result<Arc<Network>> {
    if !path.is_file() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    Ok(Arc::new(Network::load(path)?))
}

fn backbone_for(net: &Network, features: Option<&Path>) -> Result<Arc<dyn Backbone>> {
    Ok(match features {
        Some(dir) => {
            if !dir.is_dir() {
                return Err(Error::MissingFile(dir.to_path_buf()));
            }
            Arc::new(Precomputed {
                dir: dir.to_path_buf(),
                channels: net.pyramid_channels,
            })
        }
        None => {
            if net.pyramid_channels != HandCrafted.channels() {
                return Err(Error::Checkpoint(format!(
                    "weights expect {:?} feature channels; pass --features for stored maps",
                    net.pyramid_channels
                )));
            }
            Arc::new(HandCrafted)
        }
    })
}

fn execute(cmd: Command) -> Result<()> {
    match cmd {
        Command::Track {
            sequence,
            weights,
            out,
            ablation,
            config,
            features,
            reset,
            overlays,
            overrides,
        } => {
            let mut cfg = load_config(config.as_deref(), &overrides)?;
            if let Some(a) = ablation {
                cfg.set("ablation", a)?;
            }
            track_command(&sequence, &weights, &out, &cfg, features.as_deref(), reset, overlays)
        }
        Command::Train { config, out, overfit, overrides } => train_command(&load_config(config.as_deref(), &overrides)?, &out, overfit),
        Command::Eval {
            predictions,
            dataset,
            protocol,
            config,
            report,
            overrides,
        } => {
            let cfg = load_config(config.as_deref(), &overrides)?;
            let r = eval_command(&predictions, &dataset, protocol, &cfg)?;
            emit_report(&r, report.as_deref())
        }
        Command::Ablate {
            dataset,
            weights,
            variants,
            config,
            report,
            overrides,
        } => {
            let cfg = load_config(config.as_deref(), &overrides)?;
            let variants = match variants {
                Some(v) => v.split(',').map(|s| Ablation::parse(s.trim())).collect::<Result<Vec<_>>>()?,
                None => Ablation::ALL.to_vec(),
            };
            let r = ablate_command(&dataset, &weights, &variants, &cfg)?;
            emit_report(&r, report.as_deref())
        }
        Command::Synth {
            out,
            count,
            seed,
            config,
            overrides,
        } => synth_command(&out, count, seed, &load_config(config.as_deref(), &overrides)?),
    }
}

fn emit_report(r: &Report, path: Option<&Path>) -> Result<()> {
    print!("{}", r.to_table());
    if let Some(p) = path {
        fs::write(p, r.to_csv())?;
    }
    Ok(())
}

fn track_command(sequence: &Path, weights: &Path, out: &Path, cfg: &Config, features: Option<&Path>, reset: bool, overlays: bool) -> Result<()> {
    let ds = SequenceDataset::open(sequence)?;
    let net = load_network(weights)?;
    let backbone = backbone_for(&net, features)?;
    let tc = cfg.tracker()?;
    fs::create_dir_all(out)?;
    if reset {
        if ds.first_frame_only {
            return Err(Error::Config("the reset protocol needs ground truth on every frame".into()));
        }
        let gt = ds.box_regions()?;
        let mut factory = || {
            Ok(Session {
                tracker: Tracker::with_backbone(net.clone(), backbone.clone(), tc),
                frames: &ds,
                output: OutputKind::Box,
            })
        };
        let (_, run) = run_reset_protocol(&mut factory, &gt, &cfg.reset()?)?;
        let preds: Vec<Prediction> = run
            .frames
            .into_iter()
            .map(|f| match f {
                FrameRecord::Init => Prediction::Init,
                FrameRecord::Failure { .. } => Prediction::Failure,
                FrameRecord::Skipped => Prediction::Skipped,
                FrameRecord::Tracked { region, .. } => Prediction::Region(region),
            })
            .collect();
        return write_predictions(&out.join(BOX_FILE), &preds);
    }
    let init = ds.regions()?.into_iter().next().ok_or_else(|| Error::MissingFile(ds.root.join(GROUND_TRUTH_FILE)))?;
    let mut tracker = Tracker::with_backbone(net.clone(), backbone.clone(), tc);
    let outputs = track_sequence(&mut tracker, &ds, &init)?;
    let preds: Vec<Prediction> = outputs.iter().map(|o| Prediction::Region(output_region(o))).collect();
    write_predictions(&out.join(BOX_FILE), &preds)?;
    let mask_dir = out.join(MASK_DIR);
    fs::create_dir_all(&mask_dir)?;
    for (t, o) in outputs.iter().enumerate() {
        write_mask(&mask_dir.join(mask_file_name(t)), &o.mask)?;
    }
    if overlays {
        let dir = out.join("overlays");
        fs::create_dir_all(&dir)?;
        for (t, o) in outputs.iter().enumerate() {
            write_overlay(&dir.join(mask_file_name(t)), &ds.frame(t)?, Some(&o.mask), &o.polygon)?;
        }
    }
    Ok(())
}

fn train_command(cfg: &Config, out: &Path, overfit: Option<usize>) -> Result<()> {
    let tc = cfg.training()?;
    let sibling = |suffix: &str| {
        let stem = out.file_stem().map_or_else(|| "weights".into(), |s| s.to_string_lossy().into_owned());
        out.with_file_name(format!("{stem}_{suffix}.csv"))
    };
    if let Some(dir) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    if let Some(steps) = overfit {
        let (net, losses) = overfit_single_pair(&tc, steps)?;
        let recs: Vec<LossRecord> = losses.iter().enumerate().map(|(i, &loss)| LossRecord { epoch: 0, iteration: i, loss }).collect();
        if let Some(last) = recs.last() {
            eprintln!("overfit: {} steps, final loss {:.6}", recs.len(), last.loss);
        }
        write_loss_csv(sibling("loss"), &recs)?;
        return net.save(out);
    }
    let outcome = train_network_with(&tc, &mut |p| {
        if let Progress::Validation(r) = p {
            eprintln!("epoch {:>3}  iteration {:>6}  validation loss {:.6}", r.epoch, r.iteration, r.loss);
        }
    })?;
    write_loss_csv(sibling("loss"), &outcome.curve)?;
    write_loss_csv(sibling("validation"), &outcome.validation)?;
    outcome.network.save(out)
}

/// Ground truth of a dataset sequence for scoring; every frame must be
/// annotated.
fn full_ground_truth(ds: &SequenceDataset) -> Result<()> {
    if ds.first_frame_only {
        return Err(Error::GroundTruth {
            path: ds.root.clone(),
            line: 0,
            message: "scoring needs ground truth on every frame".into(),
        });
    }
    Ok(())
}

fn eval_command(predictions: &Path, dataset: &Path, protocol: Protocol, cfg: &Config) -> Result<Report> {
    let seqs = open_dataset(dataset)?;
    let reset = cfg.reset()?;
    let mut report = Report::new(match protocol {
        Protocol::Reset => vec![Column::mean("accuracy"), Column::count("failures")],
        Protocol::Noreset => vec![Column::mean("ao"), Column::mean("sr50"), Column::mean("sr75"), Column::mean("precision")],
        Protocol::Davis => vec![Column::mean("j"), Column::mean("f")],
    });
    let rows = parallel_map(&seqs, |ds| -> Result<Vec<f64>> {
        full_ground_truth(ds)?;
        let dir = predictions.join(&ds.name);
        match protocol {
            Protocol::Reset | Protocol::Noreset => {
                let gt = ds.box_regions()?;
                let preds = read_predictions(&dir.join(BOX_FILE))?;
                if preds.len() != gt.len() {
                    return Err(Error::Shape(format!("{}: {} predictions for {} frames", ds.name, preds.len(), gt.len())));
                }
                if protocol == Protocol::Reset {
                    let run = reset_run(&preds, &gt);
                    Ok(vec![run.accuracy(reset.burn_in).unwrap_or(f64::NAN), run.failures() as f64])
                } else {
                    let opt: Vec<Option<Region>> = preds
                        .into_iter()
                        .enumerate()
                        .map(|(t, p)| match p {
                            Prediction::Init => None,
                            Prediction::Region(_) if t == 0 => None,
                            Prediction::Region(r) => Some(r),
                            Prediction::Failure | Prediction::Skipped => Some(Region::Empty),
                        })
                        .collect();
                    let s = average_overlap_sr(&score_predictions(&opt, &gt)?);
                    Ok(vec![s.ao, s.sr50, s.sr75, s.precision])
                }
            }
            Protocol::Davis => {
                let gt = ds.mask_sequence()?.ok_or_else(|| Error::MissingFile(ds.root.join(MASK_DIR)))?;
                let files = super::dataset::image_files(&dir.join(MASK_DIR))?;
                let pred: Vec<_> = files.iter().map(|p| read_mask(p)).collect::<Result<_>>()?;
                let skip = match pred.len() {
                    n if n == gt.len() => 1,
                    n if n + 1 == gt.len() => 0,
                    n => return Err(Error::Shape(format!("{}: {n} predicted masks for {} frames", ds.name, gt.len()))),
                };
                let d = davis_measures(&pred[skip..], &gt[1..])?;
                Ok(vec![d.j, d.f])
            }
        }
    })?;
    for (ds, row) in seqs.iter().zip(rows) {
        report.push(ds.name.clone(), row?);
    }
    Ok(report)
}

/// Rebuild a reset-protocol run from marker lines.
fn reset_run(preds: &[Prediction], gt: &[Region]) -> TrackRun {
    let frames = preds
        .iter()
        .zip(gt)
        .map(|(p, g)| match p {
            Prediction::Init => FrameRecord::Init,
            Prediction::Failure => FrameRecord::Failure { region: Region::Empty },
            Prediction::Skipped => FrameRecord::Skipped,
            Prediction::Region(r) => FrameRecord::Tracked {
                region: r.clone(),
                overlap: region_overlap(r, g),
                center_error: center_error(r, g),
            },
        })
        .collect();
    TrackRun { frames }
}

fn ablate_command(dataset: &Path, weights: &Path, variants: &[Ablation], cfg: &Config) -> Result<Report> {
    let seqs = open_dataset(dataset)?;
    for ds in &seqs {
        full_ground_truth(ds)?;
    }
    let net = load_network(weights)?;
    let backbone = backbone_for(&net, None)?;
    let inputs: Vec<SequenceInput> = seqs
        .iter()
        .map(|ds| {
            Ok(SequenceInput {
                name: ds.name.clone(),
                frames: ds,
                boxes: ds.box_regions()?,
                masks: ds.mask_sequence()?,
            })
        })
        .collect::<Result<_>>()?;
    let results = run_ablation(&net, &backbone, cfg.tracker()?, variants, &inputs, &cfg.reset()?)?;
    Ok(ablation_report(&results))
}

fn synth_command(out: &Path, count: u64, seed: u64, cfg: &Config) -> Result<()> {
    let sc: SynthConfig = cfg.training()?.synth.clone();
    for k in 0..count {
        let seq = SyntheticSequence::new(seed + k, sc.clone());
        let dir = out.join(format!("seq_{k:03}"));
        fs::create_dir_all(dir.join("color"))?;
        fs::create_dir_all(dir.join(MASK_DIR))?;
        let mut gt = Vec::with_capacity(seq.len());
        for t in 0..seq.len() {
            let (img, mask) = seq.frame(t);
            write_frame(&dir.join("color").join(mask_file_name(t)), &img)?;
            write_mask(&dir.join(MASK_DIR).join(mask_file_name(t)), &mask)?;
            gt.push(Prediction::Region(reference_box(&mask).map_or(Region::Empty, Region::from)));
        }
        write_predictions(&dir.join(GROUND_TRUTH_FILE), &gt)?;
    }
    Ok(())
}
