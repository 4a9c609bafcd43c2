//! Sequence-to-sequence training: loss weighting, optimizer, split and loop.

mod optim;
mod split;
mod weights;


use std::io::Write;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Matrix};
use crate::dataset::{Dataset, Sequence};
use crate::features::NormStats;
use crate::labeler::ManeuverLabel;
use crate::models::{nb_fit, DropMask, ForwardOptions, Model, ModelConfig, ModelError, ModelKind, Predictor};
use crate::par::{self, Execution};
use crate::seed;

pub use crate::models::structured_dropout;
pub use optim::{clip_gradients, global_norm, Adam};
pub use split::{split_dataset, split_targets, Split};
pub use weights::{class_weights, compute_loss_weights, LossWeights};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("training set has no {0} frames")]
    MissingClass(ManeuverLabel),
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("loss diverged at epoch {epoch}, step {step}: {detail}")]
    Diverged { epoch: usize, step: usize, detail: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Autograd(#[from] crate::autograd::AutogradError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub clip_norm: f64,
    pub dropout: f64,
    pub seed: u64,
    /// Longest training segment; each segment starts from a fresh state.
    pub max_segment_len: usize,
    /// Share of trajectories used for training.
    pub split_ratio: f64,
    /// Segments per optimizer step.
    pub batch_size: usize,
    /// Early-prediction weighting of lane-change frames.
    pub exponential_weighting: bool,
    /// Standardize inputs with training-set statistics.
    pub normalize: bool,
    pub execution: Execution,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            epochs: 50,
            clip_norm: 5.0,
            dropout: 0.33,
            seed: 0,
            max_segment_len: 100,
            split_ratio: 0.8,
            batch_size: 1,
            exponential_weighting: true,
            normalize: true,
            execution: Execution::Parallel,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.into()));
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must be in [0, 1)");
        }
        if !(self.split_ratio > 0.0 && self.split_ratio < 1.0) {
            return bad("split ratio must be in (0, 1)");
        }
        if !(self.learning_rate > 0.0) || !(self.clip_norm > 0.0) {
            return bad("learning rate and clip norm must be positive");
        }
        if self.epochs == 0 || self.max_segment_len == 0 || self.batch_size == 0 {
            return bad("epochs, segment length and batch size must be at least 1");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub split: String,
    /// Weighted cross-entropy per frame.
    pub loss: f64,
    pub accuracy: f64,
    pub wall_time_s: f64,
}

pub fn write_log<W: Write>(mut w: W, log: &[EpochRecord]) -> std::io::Result<()> {
    for r in log {
        serde_json::to_writer(&mut w, r)?;
        writeln!(w)?;
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters of the epoch with the lowest validation loss.
    pub predictor: Predictor,
    pub log: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub split: Split,
}

struct Segment {
    x: Matrix,
    targets: Vec<usize>,
    weights: Vec<f64>,
}

fn weighted(seq: &Sequence, rate: f64, w_class: [f64; 3], exponential: bool) -> Result<Vec<f64>, TrainError> {
    Ok(compute_loss_weights(&seq.events(), &seq.labels, rate, Some(w_class), exponential)?.frame)
}

fn segments(ds: &Dataset, w_class: [f64; 3], cfg: &TrainConfig) -> Result<Vec<Segment>, TrainError> {
    let mut out = Vec::new();
    for seq in &ds.sequences {
        let w = weighted(seq, ds.sample_rate_hz, w_class, cfg.exponential_weighting)?;
        let mut start = 0;
        while start < seq.len() {
            let len = cfg.max_segment_len.min(seq.len() - start);
            out.push(Segment {
                x: seq.features.cols_range(start, len),
                targets: seq.labels[start..start + len].iter().map(|l| l.index()).collect(),
                weights: w[start..start + len].to_vec(),
            });
            start += len;
        }
    }
    Ok(out)
}

fn norm_for(ds: &Dataset, cfg: &TrainConfig) -> NormStats {
    let d = ds.layout.dim();
    if !cfg.normalize {
        return NormStats::identity(d);
    }
    let rows: Vec<Vec<f64>> = ds
        .sequences
        .iter()
        .flat_map(|s| (0..s.len()).map(move |c| s.features.column_values(c)))
        .collect();
    if rows.is_empty() {
        return NormStats::identity(d);
    }
    NormStats::fit(rows.iter().map(Vec::as_slice))
}

/// Weighted loss per frame and frame accuracy of `predictor` on `ds`.
pub fn evaluate_loss(
    predictor: &Predictor,
    ds: &Dataset,
    w_class: [f64; 3],
    exponential: bool,
    exec: Execution,
) -> Result<(f64, f64), TrainError> {
    let parts = par::try_map(exec, &ds.sequences, |seq| -> Result<(f64, usize, usize), TrainError> {
        let probs = predictor.predict(&seq.features, &seq.rel_v_pv)?;
        let w = weighted(seq, ds.sample_rate_hz, w_class, exponential)?;
        let mut loss = 0.0;
        let mut correct = 0;
        for (c, l) in seq.labels.iter().enumerate() {
            let col = probs.column_values(c);
            loss += -w[c] * col[l.index()].max(f64::MIN_POSITIVE).ln();
            if argmax(&col) == l.index() {
                correct += 1;
            }
        }
        Ok((loss, correct, seq.len()))
    })?;
    let (loss, correct, n) = parts.iter().fold((0.0, 0, 0), |a, p| (a.0 + p.0, a.1 + p.1, a.2 + p.2));
    if n == 0 {
        return Ok((f64::NAN, f64::NAN));
    }
    Ok((loss / n as f64, correct as f64 / n as f64))
}

pub(crate) fn argmax(col: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in col.iter().enumerate() {
        if *v > col[best] {
            best = i;
        }
    }
    best
}

/// Splits `ds` by trajectory and trains on the training side.
pub fn train(model: &ModelConfig, ds: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    if ds.sequences.is_empty() {
        return Err(TrainError::EmptyTrainingSet);
    }
    let split = split_dataset(ds, cfg.split_ratio, cfg.seed);
    let train_ds = ds.subset(&split.train);
    let val_ds = ds.subset(&split.validation);
    train_split(model, &train_ds, &val_ds, cfg, split)
}

/// Trains on `train_ds`, selecting the checkpoint by loss on `val_ds`.
pub fn train_split(
    model_cfg: &ModelConfig,
    train_ds: &Dataset,
    val_ds: &Dataset,
    cfg: &TrainConfig,
    split: Split,
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    if train_ds.sequences.is_empty() {
        return Err(TrainError::EmptyTrainingSet);
    }
    let clock = Instant::now();
    let w_class = class_weights(train_ds.sequences.iter().map(|s| s.labels.as_slice()))?;
    let exec = cfg.execution;
    let record = |epoch: usize, split: &str, (loss, accuracy): (f64, f64)| EpochRecord {
        epoch,
        split: split.into(),
        loss,
        accuracy,
        wall_time_s: clock.elapsed().as_secs_f64(),
    };
    let mut log = Vec::new();

    if model_cfg.kind == ModelKind::NaiveBayes {
        let mut x = Vec::new();
        let mut y = Vec::new();
        for s in &train_ds.sequences {
            for c in 0..s.len() {
                x.push([s.features.get(0, c), s.features.get(1, c), s.rel_v_pv[c]]);
                y.push(s.labels[c]);
            }
        }
        let predictor = Predictor::NaiveBayes {
            layout: train_ds.layout,
            params: nb_fit(&x, &y)?,
        };
        let ex = cfg.exponential_weighting;
        log.push(record(1, "train", evaluate_loss(&predictor, train_ds, w_class, ex, exec)?));
        if !val_ds.sequences.is_empty() {
            log.push(record(1, "validation", evaluate_loss(&predictor, val_ds, w_class, ex, exec)?));
        }
        return Ok(TrainOutcome {
            predictor,
            log,
            best_epoch: 1,
            split,
        });
    }

    let mut model = Model::new(model_cfg.clone(), train_ds.layout, norm_for(train_ds, cfg), cfg.seed)?;
    let segs = segments(train_ds, w_class, cfg)?;
    let mut adam = Adam::new(model.params(), cfg.learning_rate);
    let dropout = model_cfg.kind == ModelKind::LstmA && cfg.dropout > 0.0;
    let mut best: Option<(f64, usize, Model)> = None;
    let mut step = 0;

    for epoch in 1..=cfg.epochs {
        let mut order: Vec<usize> = (0..segs.len()).collect();
        order.shuffle(&mut seed::derived_rng(cfg.seed, &format!("train.shuffle.{epoch}")));
        for batch in order.chunks(cfg.batch_size) {
            step += 1;
            let current = &model;
            let results = par::try_map(exec, batch, |&i| -> Result<(f64, Vec<Matrix>), TrainError> {
                let seg = &segs[i];
                let masks = dropout.then(|| {
                    let mut rng = seed::derived_rng(cfg.seed, &format!("train.dropout.{epoch}.{i}"));
                    (0..seg.targets.len()).map(|_| DropMask::draw(cfg.dropout, &mut rng)).collect()
                });
                let mut g = Graph::new();
                let p = current.params().bind(&mut g);
                let out = current.forward(
                    &mut g,
                    &p,
                    &seg.x,
                    &ForwardOptions {
                        masks,
                        detach_attention: false,
                    },
                )?;
                let loss = g.cross_entropy(out.logits, &seg.targets, &seg.weights)?;
                let value = g.value(loss).item();
                g.backward(loss)?;
                Ok((value, p.gradients(&g, current.params())))
            })?;
            // ordered reduction: identical sums for either execution mode
            let mut iter = results.into_iter();
            let (mut loss, mut grads) = iter.next().expect("non-empty batch");
            for (l, g) in iter {
                loss += l;
                for (a, b) in grads.iter_mut().zip(&g) {
                    a.add_assign(b);
                }
            }
            let norm = clip_gradients(&mut grads, cfg.clip_norm);
            if !loss.is_finite() || !norm.is_finite() {
                return Err(TrainError::Diverged {
                    epoch,
                    step,
                    detail: format!("batch loss {loss}, gradient norm {norm}"),
                });
            }
            adam.update(model.params_mut(), &grads);
        }

        let net = Predictor::Net(model.clone());
        let ex = cfg.exponential_weighting;
        let tr = evaluate_loss(&net, train_ds, w_class, ex, exec)?;
        if !tr.0.is_finite() {
            return Err(TrainError::Diverged {
                epoch,
                step,
                detail: format!("training loss {}", tr.0),
            });
        }
        log.push(record(epoch, "train", tr));
        let score = if val_ds.sequences.is_empty() {
            tr.0
        } else {
            let va = evaluate_loss(&net, val_ds, w_class, ex, exec)?;
            log.push(record(epoch, "validation", va));
            va.0
        };
        log::info!("epoch {epoch}: train loss {:.5} acc {:.4}, selection loss {score:.5}", tr.0, tr.1);
        if best.as_ref().is_none_or(|b| score < b.0) {
            best = Some((score, epoch, model.clone()));
        }
    }
    let (_, best_epoch, best_model) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        predictor: Predictor::Net(best_model),
        log,
        best_epoch,
        split,
    })
}
