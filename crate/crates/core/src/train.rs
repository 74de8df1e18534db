//! Two-stage training.
//!
//! Stage 1 fits encoders and classifiers with cross-entropy on each modality.
//! Stage 2 freezes the classifiers and fits encoders and translators on the
//! weighted objective. Batches come from the inverse-frequency sampler.

use std::fmt::Write as _;

use log::{debug, info};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{sampler_weights, PairedDataset, Split, WeightedSampler};
use crate::error::{Error, Result};
use crate::eval::{evaluate, Direction};
use crate::loss::{evaluate_bundle, unimodal_ce, LossBreakdown, LossWeights, Metric, TermCoefficients};
use crate::model::{ArchPreset, DstcModel, PresetName};
use crate::nn::Mode;
use crate::optim::{AdamConfig, AdamState, TrainMask};
use crate::tensor::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Stage1Config {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Stage2Config {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub weights: LossWeights,
    /// Keep the classification term in the stage-2 objective.
    #[serde(default = "yes")]
    pub include_ce: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EarlyStop {
    /// Stage-2 epochs without improvement of the validation score.
    pub patience: usize,
}

impl Default for EarlyStop {
    fn default() -> Self {
        Self { patience: 10 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub stage1: Stage1Config,
    pub stage2: Stage2Config,
    pub seed: u64,
    /// Select the stage-2 epoch with the best validation cosine mAP
    /// (both directions). `None` keeps the final weights.
    #[serde(default)]
    pub early_stop: Option<EarlyStop>,
    #[serde(default)]
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::for_preset(PresetName::Custom)
    }
}

impl TrainConfig {
    /// Defaults per architecture preset. Learning rate 1e-4 in both stages.
    pub fn for_preset(preset: PresetName) -> Self {
        let (alpha, beta, gamma, delta) = match preset {
            PresetName::Wikipedia => (10.0, 1.0, 1000.0, 100.0),
            PresetName::Pascal => (10.0, 1.0, 0.01, 1.0),
            PresetName::Audioset | PresetName::Custom => (1.0, 1.0, 1.0, 1.0),
        };
        Self {
            stage1: Stage1Config {
                epochs: 30,
                lr: 1e-4,
                batch_size: 128,
            },
            stage2: Stage2Config {
                epochs: 30,
                lr: 1e-4,
                batch_size: 128,
                weights: LossWeights {
                    alpha,
                    beta,
                    gamma,
                    delta,
                    pointwise_metric: Metric::Euclidean,
                },
                include_ce: true,
            },
            seed: 0,
            early_stop: Some(EarlyStop::default()),
            adam: AdamConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let check = |stage: &str, epochs: usize, lr: f64, batch: usize| -> Result<()> {
            if epochs == 0 {
                return Err(Error::InvalidArgument(format!("{stage}.epochs must be positive")));
            }
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(Error::InvalidArgument(format!("{stage}.lr must be positive, got {lr}")));
            }
            if batch < 2 {
                return Err(Error::InvalidArgument(format!("{stage}.batch_size must be at least 2, got {batch}")));
            }
            Ok(())
        };
        check("stage1", self.stage1.epochs, self.stage1.lr, self.stage1.batch_size)?;
        check("stage2", self.stage2.epochs, self.stage2.lr, self.stage2.batch_size)?;
        self.stage2.weights.validate()?;
        if let Some(es) = self.early_stop {
            if es.patience == 0 {
                return Err(Error::InvalidArgument("early_stop.patience must be positive".into()));
            }
        }
        if let Some(c) = self.adam.clip_norm {
            if !(c > 0.0 && c.is_finite()) {
                return Err(Error::InvalidArgument(format!("adam.clip_norm must be positive, got {c}")));
            }
        }
        Ok(())
    }

    /// Stage-2 term coefficients.
    pub fn stage2_coefficients(&self) -> TermCoefficients {
        let mut c = self.stage2.weights.coefficients();
        c.ce = if self.stage2.include_ce { 1.0 } else { 0.0 };
        c
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub stage: u8,
    pub epoch: usize,
    /// Step index within the stage, from 0.
    pub step: usize,
    /// Stage-1 records only carry `ce` and `total`.
    pub loss: LossBreakdown,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EpochRecord {
    pub stage: u8,
    pub epoch: usize,
    /// Steps completed in the stage at the end of this epoch.
    pub step: usize,
    pub val_acc_x: f64,
    pub val_acc_y: f64,
    /// Stage 2 only: validation mAP under cosine and euclidean scoring.
    pub val_map: Option<ValMaps>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ValMaps {
    pub x2y_cos: f64,
    pub y2x_cos: f64,
    pub x2y_euc: f64,
    pub y2x_euc: f64,
}

impl ValMaps {
    /// The selection score: mean of both cosine directions.
    pub fn both_cos(&self) -> f64 {
        0.5 * (self.x2y_cos + self.y2x_cos)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainHistory {
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochRecord>,
    /// Stage-2 epoch whose weights were returned.
    pub best_epoch: Option<usize>,
    pub stopped_early: bool,
}

impl TrainHistory {
    pub fn stage_steps(&self, stage: u8) -> impl Iterator<Item = &StepRecord> {
        self.steps.iter().filter(move |s| s.stage == stage)
    }

    pub fn stage_epochs(&self, stage: u8) -> impl Iterator<Item = &EpochRecord> {
        self.epochs.iter().filter(move |e| e.stage == stage)
    }

    pub fn extend(&mut self, other: TrainHistory) {
        self.steps.extend(other.steps);
        self.epochs.extend(other.epochs);
        if other.best_epoch.is_some() {
            self.best_epoch = other.best_epoch;
        }
        self.stopped_early |= other.stopped_early;
    }

    /// Step rows carry loss terms, epoch rows carry validation scores.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "stage,epoch,step,ce,pc,dstc,cpc,cdstc,total,val_map_x2y,val_map_y2x,val_map_x2y_euc,val_map_y2x_euc,val_acc_x,val_acc_y\n",
        );
        let mut epochs = self.epochs.iter().peekable();
        let emit_epoch = |out: &mut String, e: &EpochRecord| {
            let maps = e
                .val_map
                .map(|m| format!("{},{},{},{}", m.x2y_cos, m.y2x_cos, m.x2y_euc, m.y2x_euc))
                .unwrap_or_else(|| ",,,".into());
            let _ = writeln!(out, "{},{},{},,,,,,,{},{},{}", e.stage, e.epoch, e.step, maps, e.val_acc_x, e.val_acc_y);
        };
        for s in &self.steps {
            while let Some(e) = epochs.next_if(|e| (e.stage, e.epoch) < (s.stage, s.epoch)) {
                emit_epoch(&mut out, e);
            }
            let l = &s.loss;
            if s.stage == 1 {
                let _ = writeln!(out, "1,{},{},{},,,,,{},,,,,,", s.epoch, s.step, l.ce, l.total);
            } else {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{},{},{},{},,,,,,",
                    s.stage, s.epoch, s.step, l.ce, l.pc, l.dstc, l.cpc, l.cdstc, l.total
                );
            }
        }
        for e in epochs {
            emit_epoch(&mut out, e);
        }
        out
    }
}

fn argmax_accuracy(logits: &Matrix, labels: &[usize]) -> f64 {
    let hits = logits
        .iter_rows()
        .zip(labels)
        .filter(|(row, &label)| {
            let best = row
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc });
            best.0 == label
        })
        .count();
    hits as f64 / labels.len().max(1) as f64
}

/// Classification accuracy of `C_x(E_x(x))` and `C_y(E_y(y))` on a split.
pub fn unimodal_accuracy(model: &DstcModel, data: &PairedDataset, split: Split) -> Result<(f64, f64)> {
    let batch = data.split_batch(split);
    if batch.is_empty() {
        return Err(Error::EmptySplit(split.name().into()));
    }
    let b = model.forward_unimodal(&batch.x, &batch.y, Mode::Eval)?;
    Ok((argmax_accuracy(&b.logits_x, &batch.labels), argmax_accuracy(&b.logits_y, &batch.labels)))
}

/// Accuracy of `C_y(T_xy(E_x(x)))` and `C_x(T_yx(E_y(y)))` on a split.
pub fn translated_accuracy(model: &DstcModel, data: &PairedDataset, split: Split) -> Result<(f64, f64)> {
    let batch = data.split_batch(split);
    if batch.is_empty() {
        return Err(Error::EmptySplit(split.name().into()));
    }
    let b = model.forward_all(&batch.x, &batch.y, Mode::Eval)?;
    Ok((argmax_accuracy(&b.logits_txy, &batch.labels), argmax_accuracy(&b.logits_tyx, &batch.labels)))
}

pub fn validation_maps(model: &DstcModel, data: &PairedDataset) -> Result<ValMaps> {
    let map = |d, m| evaluate(model, data, Split::Val, d, m).map(|r| r.map);
    Ok(ValMaps {
        x2y_cos: map(Direction::XToY, Metric::Cosine)?,
        y2x_cos: map(Direction::YToX, Metric::Cosine)?,
        x2y_euc: map(Direction::XToY, Metric::Euclidean)?,
        y2x_euc: map(Direction::YToX, Metric::Euclidean)?,
    })
}

struct Schedule {
    sampler: WeightedSampler,
    batch_size: usize,
    steps_per_epoch: usize,
    train_idx: Vec<usize>,
}

impl Schedule {
    fn new(data: &PairedDataset, batch_size: usize) -> Result<Self> {
        let train_idx = data.split_indices(Split::Train);
        if train_idx.is_empty() {
            return Err(Error::EmptySplit(Split::Train.name().into()));
        }
        let labels: Vec<usize> = train_idx.iter().map(|&i| data.labels()[i]).collect();
        let sampler = WeightedSampler::new(&sampler_weights(&labels, data.num_classes())?)?;
        Ok(Self {
            sampler,
            batch_size,
            steps_per_epoch: train_idx.len().div_ceil(batch_size),
            train_idx,
        })
    }

    fn next(&self, data: &PairedDataset, rng: &mut ChaCha8Rng) -> crate::data::Batch {
        let picks: Vec<usize> = self.sampler.sample(self.batch_size, rng).into_iter().map(|i| self.train_idx[i]).collect();
        data.batch(&picks)
    }
}

fn stage_rng(seed: u64, stage: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stage);
    rng
}

/// Trains `E_x, E_y, C_x, C_y` with cross-entropy. Translators are not run.
pub fn train_stage1(model: &mut DstcModel, data: &PairedDataset, cfg: &TrainConfig) -> Result<TrainHistory> {
    cfg.validate()?;
    model.check_compatible(data.num_classes(), data.x_dim(), data.y_dim())?;
    let sc = cfg.stage1;
    let schedule = Schedule::new(data, sc.batch_size)?;
    let mut rng = stage_rng(cfg.seed, 1);
    let mask = TrainMask::classification_stage();
    let mut adam = AdamState::new(model, cfg.adam);
    let mut history = TrainHistory::default();
    let mut step = 0;
    for epoch in 0..sc.epochs {
        for _ in 0..schedule.steps_per_epoch {
            let batch = schedule.next(data, &mut rng);
            let bundle = model.forward_unimodal(&batch.x, &batch.y, Mode::Train)?;
            let (ce, grads) = unimodal_ce(model, &bundle, &batch.labels)?;
            if !ce.is_finite() {
                return Err(Error::NonFiniteLoss {
                    stage: 1,
                    step,
                    detail: format!("ce = {ce}"),
                });
            }
            adam.step(model, &grads, sc.lr, &mask)?;
            model.commit_unimodal_stats(&bundle, |s| mask.is_trainable(s))?;
            history.steps.push(StepRecord {
                stage: 1,
                epoch,
                step,
                loss: LossBreakdown {
                    ce,
                    total: ce,
                    ..LossBreakdown::default()
                },
            });
            step += 1;
        }
        let (val_acc_x, val_acc_y) = unimodal_accuracy(model, data, Split::Val)?;
        debug!("stage 1 epoch {epoch}: val acc x {val_acc_x:.4} y {val_acc_y:.4}");
        history.epochs.push(EpochRecord {
            stage: 1,
            epoch,
            step,
            val_acc_x,
            val_acc_y,
            val_map: None,
        });
    }
    if let Some(last) = history.epochs.last() {
        info!("stage 1 done: val acc x {:.4} y {:.4}", last.val_acc_x, last.val_acc_y);
    }
    Ok(history)
}

/// Trains `E_x, E_y, T_xy, T_yx` on the weighted objective with frozen
/// classifiers. With early stopping the best validation epoch is restored.
pub fn train_stage2(model: &mut DstcModel, data: &PairedDataset, cfg: &TrainConfig) -> Result<TrainHistory> {
    cfg.validate()?;
    model.check_compatible(data.num_classes(), data.x_dim(), data.y_dim())?;
    let sc = cfg.stage2;
    let coefs = cfg.stage2_coefficients();
    let metric = sc.weights.pointwise_metric;
    let schedule = Schedule::new(data, sc.batch_size)?;
    let mut rng = stage_rng(cfg.seed, 2);
    let mask = TrainMask::translation_stage();
    let mut adam = AdamState::new(model, cfg.adam);
    let mut history = TrainHistory::default();
    let mut best: Option<(f64, usize, DstcModel)> = None;
    let mut step = 0;
    for epoch in 0..sc.epochs {
        for _ in 0..schedule.steps_per_epoch {
            let batch = schedule.next(data, &mut rng);
            let bundle = model.forward_all(&batch.x, &batch.y, Mode::Train)?;
            let (loss, grads) = evaluate_bundle(model, &bundle, &batch.labels, &coefs, metric, true)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    stage: 2,
                    step,
                    detail: format!("{loss:?}"),
                });
            }
            let grads = grads.expect("gradients requested");
            adam.step(model, &grads, sc.lr, &mask)?;
            model.commit_running_stats(&bundle, |s| mask.is_trainable(s))?;
            history.steps.push(StepRecord { stage: 2, epoch, step, loss });
            step += 1;
        }
        let (val_acc_x, val_acc_y) = translated_accuracy(model, data, Split::Val)?;
        let maps = validation_maps(model, data)?;
        debug!(
            "stage 2 epoch {epoch}: val mAP cos x2y {:.4} y2x {:.4}, translated acc {val_acc_x:.4}/{val_acc_y:.4}",
            maps.x2y_cos, maps.y2x_cos
        );
        history.epochs.push(EpochRecord {
            stage: 2,
            epoch,
            step,
            val_acc_x,
            val_acc_y,
            val_map: Some(maps),
        });
        if let Some(es) = cfg.early_stop {
            let score = maps.both_cos();
            if best.as_ref().is_none_or(|(b, _, _)| score > *b) {
                best = Some((score, epoch, model.clone()));
            } else if epoch - best.as_ref().map_or(0, |b| b.1) >= es.patience {
                history.stopped_early = true;
                break;
            }
        }
    }
    match best {
        Some((score, epoch, snapshot)) => {
            *model = snapshot;
            history.best_epoch = Some(epoch);
            info!("stage 2 done: best epoch {epoch}, val cosine mAP {score:.4}");
        }
        None => history.best_epoch = history.epochs.last().map(|e| e.epoch),
    }
    Ok(history)
}

/// Builds a model from `preset` seeded with `cfg.seed` and runs both stages.
pub fn train(cfg: &TrainConfig, data: &PairedDataset, preset: &ArchPreset) -> Result<(DstcModel, TrainHistory)> {
    cfg.validate()?;
    let mut model = DstcModel::build(preset, data.num_classes(), data.x_dim(), data.y_dim(), cfg.seed)?;
    let mut history = train_stage1(&mut model, data, cfg)?;
    history.extend(train_stage2(&mut model, data, cfg)?);
    Ok((model, history))
}

/// One loss combination of the ablation table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LossRow {
    pub number: usize,
    pub ce: bool,
    pub pc: bool,
    pub dstc: bool,
    pub cpc: bool,
    pub cdstc: bool,
}

const fn row(number: usize, ce: bool, pc: bool, dstc: bool, cpc: bool, cdstc: bool) -> LossRow {
    LossRow {
        number,
        ce,
        pc,
        dstc,
        cpc,
        cdstc,
    }
}

pub const LOSS_ROWS: [LossRow; 10] = [
    row(1, false, true, false, false, false),
    row(2, false, false, true, false, false),
    row(3, true, true, false, false, false),
    row(4, true, false, true, false, false),
    row(5, true, true, true, false, false),
    row(6, true, true, false, true, false),
    row(7, true, false, true, false, true),
    row(8, true, true, true, true, false),
    row(9, true, true, true, false, true),
    row(10, true, true, true, true, true),
];

impl LossRow {
    pub fn get(number: usize) -> Option<LossRow> {
        LOSS_ROWS.get(number.checked_sub(1)?).copied()
    }

    /// `CE+PC+DSTC` style label.
    pub fn label(&self) -> String {
        let names = [(self.ce, "CE"), (self.pc, "PC"), (self.dstc, "DSTC"), (self.cpc, "cPC"), (self.cdstc, "cDSTC")];
        names.iter().filter(|(on, _)| *on).map(|(_, n)| *n).collect::<Vec<_>>().join("+")
    }

    /// Switches the stage-2 terms of `base` on or off. Enabled terms keep
    /// their configured weight, or 1 when that weight is zero.
    pub fn apply(&self, base: &Stage2Config, metric: Metric) -> Stage2Config {
        let pick = |on: bool, w: f64| if !on { 0.0 } else if w > 0.0 { w } else { 1.0 };
        let w = base.weights;
        Stage2Config {
            weights: LossWeights {
                alpha: pick(self.pc, w.alpha),
                beta: pick(self.dstc, w.beta),
                gamma: pick(self.cpc, w.gamma),
                delta: pick(self.cdstc, w.delta),
                pointwise_metric: metric,
            },
            include_ce: self.ce,
            ..*base
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SyntheticSpec};
    use crate::model::Subnet;

    fn small_data() -> PairedDataset {
        generate_synthetic(&SyntheticSpec {
            classes: 3,
            n_per_class: 20,
            x_dim: 6,
            y_dim: 5,
            cluster_spread: 0.1,
            pair_noise: 0.0,
            seed: 1,
        })
        .unwrap()
    }

    fn small_cfg() -> TrainConfig {
        let mut cfg = TrainConfig::default();
        cfg.stage1 = Stage1Config {
            epochs: 2,
            lr: 1e-3,
            batch_size: 8,
        };
        cfg.stage2.epochs = 2;
        cfg.stage2.lr = 1e-3;
        cfg.stage2.batch_size = 8;
        cfg
    }

    fn small_model() -> DstcModel {
        DstcModel::build(&ArchPreset::custom(6, 5, 3, 8, 4, 3), 3, 6, 5, 0).unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let mut cfg = TrainConfig::default();
        cfg.stage1.batch_size = 1;
        assert!(cfg.validate().is_err());
        let mut cfg = TrainConfig::default();
        cfg.stage2.lr = 0.0;
        assert!(cfg.validate().is_err());
        let mut cfg = TrainConfig::default();
        cfg.stage2.weights.beta = -1.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn preset_defaults() {
        let w = TrainConfig::for_preset(PresetName::Wikipedia).stage2.weights;
        assert_eq!((w.alpha, w.beta, w.gamma, w.delta), (10.0, 1.0, 1000.0, 100.0));
        let a = TrainConfig::for_preset(PresetName::Audioset);
        assert_eq!(a.stage1.lr, 1e-4);
        assert_eq!(a.early_stop, Some(EarlyStop { patience: 10 }));
    }

    #[test]
    fn stage_freeze_contracts() {
        let data = small_data();
        let mut model = small_model();
        let cfg = small_cfg();
        let before = model.clone();
        let h1 = train_stage1(&mut model, &data, &cfg).unwrap();
        for s in [Subnet::TranslatorXY, Subnet::TranslatorYX] {
            assert_eq!(model.checksum(s), before.checksum(s));
        }
        assert_ne!(model.checksum(Subnet::EncoderX), before.checksum(Subnet::EncoderX));
        // 42 train samples, batch 8 -> 6 steps per epoch
        assert_eq!(h1.steps.len(), 12);
        assert_eq!(h1.epochs.len(), 2);

        let after1 = model.clone();
        train_stage2(&mut model, &data, &cfg).unwrap();
        for s in [Subnet::ClassifierX, Subnet::ClassifierY] {
            assert_eq!(model.checksum(s), after1.checksum(s));
        }
        assert_ne!(model.checksum(Subnet::TranslatorXY), after1.checksum(Subnet::TranslatorXY));
    }

    #[test]
    fn training_is_deterministic() {
        let data = small_data();
        let run = || train(&small_cfg(), &data, &ArchPreset::custom(6, 5, 3, 8, 4, 3)).unwrap();
        let (m1, h1) = run();
        let (m2, h2) = run();
        assert_eq!(h1, h2);
        assert_eq!(m1, m2);
    }

    #[test]
    fn early_stop_restores_best_epoch() {
        let data = small_data();
        let mut cfg = small_cfg();
        cfg.stage2.epochs = 6;
        cfg.early_stop = Some(EarlyStop { patience: 1 });
        let mut model = small_model();
        train_stage1(&mut model, &data, &cfg).unwrap();
        let h = train_stage2(&mut model, &data, &cfg).unwrap();
        let best = h.best_epoch.unwrap();
        let scores: Vec<f64> = h.epochs.iter().map(|e| e.val_map.unwrap().both_cos()).collect();
        let top = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(scores[best], top);
        let restored = validation_maps(&model, &data).unwrap().both_cos();
        assert_eq!(restored, top);
    }

    #[test]
    fn history_csv_layout() {
        let data = small_data();
        let (_, h) = train(&small_cfg(), &data, &ArchPreset::custom(6, 5, 3, 8, 4, 3)).unwrap();
        let csv = h.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert!(lines[0].starts_with("stage,epoch,step,ce,pc,dstc,cpc,cdstc,total,val_map_x2y,val_map_y2x"));
        assert_eq!(lines.len(), 1 + h.steps.len() + h.epochs.len());
        let width = lines[0].split(',').count();
        assert!(lines.iter().all(|l| l.split(',').count() == width));
    }

    #[test]
    fn ablation_rows() {
        assert_eq!(LossRow::get(5).unwrap().label(), "CE+PC+DSTC");
        assert_eq!(LossRow::get(1).unwrap().label(), "PC");
        assert!(LossRow::get(0).is_none() && LossRow::get(11).is_none());
        let base = TrainConfig::for_preset(PresetName::Wikipedia).stage2;
        let s = LossRow::get(2).unwrap().apply(&base, Metric::Cosine);
        assert!(!s.include_ce);
        assert_eq!((s.weights.alpha, s.weights.beta, s.weights.gamma, s.weights.delta), (0.0, 1.0, 0.0, 0.0));
        assert_eq!(s.weights.pointwise_metric, Metric::Cosine);
    }
}
