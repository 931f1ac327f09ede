use std::collections::HashSet;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{Stage, TrainConfig};
use super::optim::{Optimizer, LR_SCHEDULE};
use super::runlog::{EpochRecord, RunLog};
use crate::dataset::{diverse_subset, split, DatasetIndex, Sample};
use crate::error::{Error, Result};
use crate::losses::LossFunction;
use crate::mask_codec::{one_hot, ClassMap};
use crate::metrics::{evaluate_pair_set, MetricsReport};
use crate::models::{image_to_tensor, scoremaps_to_tensor, tensor_to_scoremaps, Checkpoint, Model};
use crate::nn::{Mode, Scalar, Tensor};

/// Result of training on a single example.
#[derive(Debug, Clone)]
pub struct OverfitOutcome {
    pub log: RunLog,
    /// Final inference-mode pixel accuracy reached the configured threshold.
    pub success: bool,
    pub report: MetricsReport,
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    /// Parameters after the best validation epoch.
    pub checkpoint: Checkpoint,
    pub log: RunLog,
    pub best_epoch: usize,
}

/// Everything a configured stage produced.
#[derive(Debug, Clone)]
pub struct StageOutcome {
    pub stage: Stage,
    pub log: RunLog,
    pub checkpoint: Checkpoint,
    /// Inference-mode metrics of the checkpoint on the validation images
    /// (the training example itself for `overfit-one`).
    pub report: MetricsReport,
    /// Set for `overfit-one` only.
    pub success: Option<bool>,
    pub train_ids: Vec<String>,
    pub val_ids: Vec<String>,
}

fn check_dims<T: Scalar>(model: &Model<T>, samples: &[&Sample], incompatible: fn(String) -> Error) -> Result<()> {
    let input = model.spec().input;
    for s in samples {
        let (w, h) = (s.image.width() as usize, s.image.height() as usize);
        if (w, h) != (input.width, input.height) || (s.target.width(), s.target.height()) != (w, h) {
            return Err(incompatible(format!(
                "{}: image {w}x{h} with label map {}x{}, model {} expects {}x{}",
                s.image_id,
                s.target.width(),
                s.target.height(),
                model.spec().name,
                input.width,
                input.height
            )));
        }
    }
    Ok(())
}

fn diverged(epoch: usize) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::Numeric(message) => Error::Diverged { epoch, message },
        other => other,
    }
}

/// Inference-mode metrics of `model` on `samples`, one image at a time.
pub fn evaluate_model<T: Scalar>(model: &mut Model<T>, samples: &[&Sample]) -> Result<MetricsReport> {
    check_dims(model, samples, Error::Compatibility)?;
    let mut preds = Vec::with_capacity(samples.len());
    for s in samples {
        preds.extend(model.predict(image_to_tensor(&s.image))?);
    }
    let gts: Vec<ClassMap> = samples.iter().map(|s| s.target.clone()).collect();
    evaluate_pair_set(&preds, &gts)
}

/// Loads the checkpoint and evaluates it in inference mode.
pub fn evaluate(checkpoint: &Checkpoint, samples: &[Sample]) -> Result<MetricsReport> {
    let mut model = Model::<f32>::from_checkpoint(checkpoint)?;
    let refs: Vec<&Sample> = samples.iter().collect();
    evaluate_model(&mut model, &refs)
}

struct EpochStats {
    loss: f64,
    preds: Vec<ClassMap>,
    first_lr: f64,
}

fn train_epoch<T: Scalar>(
    model: &mut Model<T>,
    optimizer: &mut Optimizer<T>,
    loss: &LossFunction,
    samples: &[&Sample],
    order: &[usize],
    batch_size: usize,
    epoch: usize,
) -> Result<EpochStats> {
    let num_classes = model.spec().num_classes;
    let first_lr = optimizer.current_lr();
    let mut loss_sum = 0.0;
    let mut batches = 0usize;
    let mut preds = vec![None; samples.len()];
    for chunk in order.chunks(batch_size) {
        let inputs: Vec<Tensor<T>> = chunk.iter().map(|&i| image_to_tensor(&samples[i].image)).collect();
        model.network_mut().zero_grad();
        let logits = model
            .forward(Tensor::stack(&inputs), Mode::Train)
            .map_err(diverged(epoch))?;
        let maps = tensor_to_scoremaps(&logits);
        let scale = 1.0 / chunk.len() as f64;
        let mut grads = Vec::with_capacity(chunk.len());
        let mut batch_loss = 0.0;
        for (map, &i) in maps.iter().zip(chunk) {
            let target = one_hot(&samples[i].target, num_classes)?;
            let out = loss.evaluate(map, &target)?;
            if !out.value.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    message: format!("loss is {} on {}", out.value, samples[i].image_id),
                });
            }
            batch_loss += out.value * scale;
            let mut g = out.grad;
            g.data_mut().iter_mut().for_each(|v| *v *= scale);
            grads.push(g);
            preds[i] = Some(map.argmax());
        }
        model.network_mut().backward(scoremaps_to_tensor::<T>(&grads));
        model.network_mut().clear_cache();
        optimizer.step(model.network_mut())?;
        loss_sum += batch_loss;
        batches += 1;
    }
    Ok(EpochStats {
        loss: loss_sum / batches as f64,
        preds: order
            .iter()
            .map(|&i| preds[i].take().expect("every sample visited"))
            .collect(),
        first_lr,
    })
}

fn train_metrics(stats: &EpochStats, samples: &[&Sample], order: &[usize]) -> Result<MetricsReport> {
    let gts: Vec<ClassMap> = order.iter().map(|&i| samples[i].target.clone()).collect();
    evaluate_pair_set(&stats.preds, &gts)
}

fn record(epoch: usize, stats: &EpochStats, train: &MetricsReport, val: &MetricsReport) -> EpochRecord {
    EpochRecord {
        epoch,
        train_loss: stats.loss,
        train_acc: train.pixel_accuracy,
        train_biou: train.binary_iou,
        val_acc: val.pixel_accuracy,
        val_biou: val.binary_iou,
        lr: stats.first_lr,
    }
}

fn optimizer_for<T: Scalar>(config: &TrainConfig) -> Optimizer<T> {
    Optimizer::new(config.optimizer, config.lr, config.decay, config.adam_params())
}

/// Trains on one example for `config.epochs` epochs, evaluating it in
/// inference mode after every epoch.
///
/// The learning rate is not required to be positive here, so a zero-rate run
/// can serve as a control.
pub fn overfit_single<T: Scalar>(
    model: &mut Model<T>,
    example: &Sample,
    config: &TrainConfig,
) -> Result<OverfitOutcome> {
    if config.epochs == 0 {
        return Err(Error::config("epochs must be at least 1"));
    }
    let samples = [example];
    check_dims(model, &samples, Error::Config)?;
    let loss = config.loss_function(&[&example.target])?;
    let mut optimizer = optimizer_for::<T>(config);
    let started = Instant::now();
    let mut records = Vec::with_capacity(config.epochs);
    let mut report = None;
    for epoch in 1..=config.epochs {
        let stats = train_epoch(model, &mut optimizer, &loss, &samples, &[0], 1, epoch)?;
        let train = train_metrics(&stats, &samples, &[0])?;
        let val = evaluate_model(model, &samples).map_err(diverged(epoch))?;
        records.push(record(epoch, &stats, &train, &val));
        report = Some(val);
    }
    let report = report.expect("at least one epoch");
    Ok(OverfitOutcome {
        success: report.pixel_accuracy >= config.success_threshold,
        report,
        log: RunLog {
            config_fingerprint: config.fingerprint(),
            lr_schedule: LR_SCHEDULE.into(),
            records,
            steps: optimizer.steps(),
            wall_clock_seconds: started.elapsed().as_secs_f64(),
        },
    })
}

/// Epoch loop with seed-controlled shuffling and per-epoch validation; keeps
/// the checkpoint of the best validation epoch.
pub fn fit<T: Scalar>(
    model: &mut Model<T>,
    train: &[Sample],
    val: &[Sample],
    config: &TrainConfig,
) -> Result<FitOutcome> {
    if train.is_empty() {
        return Err(Error::config("empty training set"));
    }
    if val.is_empty() {
        return Err(Error::config("empty validation set"));
    }
    let train_ids: HashSet<&str> = train.iter().map(|s| s.image_id.as_str()).collect();
    if let Some(s) = val.iter().find(|s| train_ids.contains(s.image_id.as_str())) {
        return Err(Error::config(format!(
            "{} is in both training and validation sets",
            s.image_id
        )));
    }
    if config.epochs == 0 || config.batch_size == 0 {
        return Err(Error::config("epochs and batch_size must be at least 1"));
    }
    let train: Vec<&Sample> = train.iter().collect();
    let val: Vec<&Sample> = val.iter().collect();
    check_dims(model, &train, Error::Config)?;
    check_dims(model, &val, Error::Config)?;
    let targets: Vec<&ClassMap> = train.iter().map(|s| &s.target).collect();
    let loss = config.loss_function(&targets)?;
    let mut optimizer = optimizer_for::<T>(config);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5348_5546_464c_4521);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let started = Instant::now();
    let mut records: Vec<EpochRecord> = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, f64, Checkpoint)> = None;
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let stats = train_epoch(model, &mut optimizer, &loss, &train, &order, config.batch_size, epoch)?;
        let train_report = train_metrics(&stats, &train, &order)?;
        let val_report = evaluate_model(model, &val).map_err(diverged(epoch))?;
        let r = record(epoch, &stats, &train_report, &val_report);
        if best
            .as_ref()
            .is_none_or(|(biou, acc, _)| (r.val_biou, r.val_acc) > (*biou, *acc))
        {
            best = Some((r.val_biou, r.val_acc, model.to_checkpoint(config.seed, epoch)));
        }
        records.push(r);
    }
    let (_, _, checkpoint) = best.expect("at least one epoch");
    Ok(FitOutcome {
        best_epoch: checkpoint.epoch,
        checkpoint,
        log: RunLog {
            config_fingerprint: config.fingerprint(),
            lr_schedule: LR_SCHEDULE.into(),
            records,
            steps: optimizer.steps(),
            wall_clock_seconds: started.elapsed().as_secs_f64(),
        },
    })
}

fn select(samples: &[Sample], index: &DatasetIndex) -> Result<Vec<Sample>> {
    let by_id: std::collections::HashMap<&str, &Sample> = samples.iter().map(|s| (s.image_id.as_str(), s)).collect();
    index
        .images()
        .iter()
        .map(|e| {
            by_id
                .get(e.image_id.as_str())
                .map(|s| (*s).clone())
                .ok_or_else(|| Error::config(format!("no loaded image for {}", e.image_id)))
        })
        .collect()
}

/// Runs the stage named in `config` on a loaded dataset.
///
/// `overfit-subset` first draws a subset whose common-class image shares
/// stay within `subset_tolerance` of the full set and refuses to train when
/// none is found.
pub fn run_stage<T: Scalar>(config: &TrainConfig, index: &DatasetIndex, samples: &[Sample]) -> Result<StageOutcome> {
    config.validate()?;
    let mut model = Model::<T>::new(config.model_spec()?, config.seed)?;
    let ids = |v: &[Sample]| v.iter().map(|s| s.image_id.clone()).collect::<Vec<_>>();
    match config.stage {
        Stage::OverfitOne => {
            let example = samples.get(config.example_index).ok_or_else(|| {
                Error::config(format!(
                    "example_index {} but the dataset has {} images",
                    config.example_index,
                    samples.len()
                ))
            })?;
            let out = overfit_single(&mut model, example, config)?;
            Ok(StageOutcome {
                stage: config.stage,
                checkpoint: model.to_checkpoint(config.seed, config.epochs),
                log: out.log,
                report: out.report,
                success: Some(out.success),
                train_ids: vec![example.image_id.clone()],
                val_ids: vec![example.image_id.clone()],
            })
        }
        Stage::OverfitSubset | Stage::Full => {
            let pool = if config.stage == Stage::OverfitSubset {
                let sub = diverse_subset(index, config.subset_size, config.seed, config.subset_tolerance)?;
                if !sub.feasible {
                    return Err(Error::config(format!(
                        "no {}-image subset keeps common-class shares within {} (best deviation {:.3})",
                        config.subset_size,
                        config.subset_tolerance,
                        sub.worst_common()
                    )));
                }
                sub.index
            } else {
                index.clone()
            };
            let (train_idx, val_idx) = split(&pool, config.split_fraction, config.seed)?;
            let train = select(samples, &train_idx)?;
            let val = select(samples, &val_idx)?;
            let out = fit(&mut model, &train, &val, config)?;
            let report = evaluate(&out.checkpoint, &val)?;
            Ok(StageOutcome {
                stage: config.stage,
                log: out.log,
                checkpoint: out.checkpoint,
                report,
                success: None,
                train_ids: ids(&train),
                val_ids: ids(&val),
            })
        }
    }
}
