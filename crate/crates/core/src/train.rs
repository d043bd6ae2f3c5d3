//! Supervised training: stratified splits, task losses with loss-side label
//! mixing, AdamW, and an early-stopping epoch loop that keeps the best
//! validation checkpoint.

use crate::augment::{apply_scheme, fill_hid_mask, MixConfig, MixedTargets};
use crate::autodiff::{Tape, Var};
use crate::data::{Split, TabularDataset, Task};
use crate::error::{Error, Result};
use crate::metrics;
use crate::model::Model;
use crate::preprocess::{preprocess_pipeline, FittedPipeline, ImportanceVector};
use crate::rng::stream;
use crate::tensor::Tensor;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use std::time::Instant;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub mix: MixConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-4,
            weight_decay: 0.0,
            batch_size: 128,
            max_epochs: 500,
            patience: 32,
            seed: 0,
            mix: MixConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate <= 0.0 {
            return Err(Error::Usage("learning rate must be positive".into()));
        }
        if self.patience == 0 {
            return Err(Error::Usage("patience must be at least 1".into()));
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::Usage("batch size and max epochs must be positive".into()));
        }
        self.mix.validate()
    }
}

/// Assigns 64/16/20 train/val/test tags (within one row per class),
/// stratified by class for classification tasks. Falls back to an
/// unstratified split with a warning when some class has fewer than 3 rows.
pub fn split(dataset: &mut TabularDataset, seed: u64) -> Result<()> {
    let n = dataset.n_rows();
    if n < 25 {
        return Err(Error::Data(format!("need at least 25 rows to split, got {n}")));
    }
    let mut rng = stream(seed, "split");
    let mut tags = vec![Split::Train; n];

    let groups: Vec<Vec<usize>> = if dataset.task.is_classification() {
        let mut by_class: std::collections::BTreeMap<i64, Vec<usize>> = Default::default();
        for (i, &y) in dataset.labels.iter().enumerate() {
            by_class.entry(y as i64).or_default().push(i);
        }
        if by_class.values().any(|rows| rows.len() < 3) {
            eprintln!("warning: a class has fewer than 3 rows; falling back to an unstratified split");
            vec![(0..n).collect()]
        } else {
            by_class.into_values().collect()
        }
    } else {
        vec![(0..n).collect()]
    };

    for mut group in groups {
        group.shuffle(&mut rng);
        let g = group.len() as f64;
        let n_test = (0.2 * g).round() as usize;
        let n_val = (0.16 * g).round() as usize;
        for (pos, &row) in group.iter().enumerate() {
            tags[row] = if pos < n_test {
                Split::Test
            } else if pos < n_test + n_val {
                Split::Val
            } else {
                Split::Train
            };
        }
    }
    dataset.splits = Some(tags);
    Ok(())
}

/// A dataset after preprocessing: transformed features for every row plus
/// the train-only importance vector the mask and feature mixing consume.
#[derive(Clone, Debug)]
pub struct PreparedDataset {
    pub features: Tensor,
    pub labels: Vec<f64>,
    pub task: Task,
    pub splits: Vec<Split>,
    pub importance: ImportanceVector,
}

impl PreparedDataset {
    /// Runs the preprocessing pipeline on a split dataset.
    pub fn prepare(dataset: &TabularDataset) -> Result<(PreparedDataset, FittedPipeline)> {
        let out = preprocess_pipeline(dataset)?;
        Ok((
            PreparedDataset {
                features: out.features,
                labels: dataset.labels.clone(),
                task: dataset.task,
                splits: dataset.splits()?.to_vec(),
                importance: out.importance,
            },
            out.pipeline,
        ))
    }

    /// Builds a prepared dataset directly from an already-numeric matrix
    /// (used by the experiment harness after rotating transformed features).
    pub fn from_matrix(
        features: Tensor,
        labels: Vec<f64>,
        task: Task,
        splits: Vec<Split>,
        importance: ImportanceVector,
    ) -> Result<PreparedDataset> {
        let (n, f) = features.dims2()?;
        if labels.len() != n || splits.len() != n || importance.len() != f {
            return Err(Error::Data("prepared dataset pieces disagree on dimensions".into()));
        }
        Ok(PreparedDataset { features, labels, task, splits, importance })
    }

    pub fn rows_in(&self, which: Split) -> Vec<usize> {
        self.splits
            .iter()
            .enumerate()
            .filter(|(_, s)| **s == which)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn gather(&self, rows: &[usize]) -> (Tensor, Vec<f64>) {
        let f = self.features.shape()[1];
        let mut data = Vec::with_capacity(rows.len() * f);
        let mut labels = Vec::with_capacity(rows.len());
        for &r in rows {
            data.extend_from_slice(&self.features.data()[r * f..(r + 1) * f]);
            labels.push(self.labels[r]);
        }
        (
            Tensor::new([rows.len(), f], data).expect("gathered rows form a matrix"),
            labels,
        )
    }
}

/// Batch loss on the tape: mean cross-entropy for classification (two-term
/// form on the sigmoid output for binary), mean squared error for
/// regression; mixed batches take the weighted sum of per-target losses.
/// Probabilities are clamped at 1e-12 inside `ln`.
pub fn build_loss(tape: &mut Tape, pred: Var, targets: &MixedTargets, task: Task) -> Result<Var> {
    let (b, c) = tape.value(pred).dims2()?;
    for (labels, _) in &targets.slots {
        if labels.len() != b {
            return Err(Error::Data(format!("loss: {b} predictions vs {} targets", labels.len())));
        }
    }
    let bf = b as f64;
    match task {
        Task::Binary => {
            let ln_p = tape.ln(pred);
            let one_minus = tape.affine(pred, -1.0, 1.0);
            let ln_q = tape.ln(one_minus);
            let mut wp = vec![0.0; b];
            let mut wq = vec![0.0; b];
            for (labels, w) in &targets.slots {
                for (r, &y) in labels.iter().enumerate() {
                    wp[r] -= w * y / bf;
                    wq[r] -= w * (1.0 - y) / bf;
                }
            }
            let lp = tape.weighted_sum(ln_p, Tensor::new([b, 1], wp)?)?;
            let lq = tape.weighted_sum(ln_q, Tensor::new([b, 1], wq)?)?;
            tape.add(lp, lq)
        }
        Task::Multiclass(_) => {
            let ln_p = tape.ln(pred);
            let mut w = vec![0.0; b * c];
            for (labels, wk) in &targets.slots {
                for (r, &y) in labels.iter().enumerate() {
                    w[r * c + y as usize] -= wk / bf;
                }
            }
            tape.weighted_sum(ln_p, Tensor::new([b, c], w)?)
        }
        Task::Regression => {
            let mut total: Option<Var> = None;
            for (labels, wk) in &targets.slots {
                let neg_y: Vec<f64> = labels.iter().map(|y| -y).collect();
                let diff = tape.add_const(pred, Tensor::new([b, 1], neg_y)?)?;
                let sq = tape.mul(diff, diff)?;
                let mse = tape.mean(sq);
                let weighted = tape.affine(mse, *wk, 0.0);
                total = Some(match total {
                    Some(t) => tape.add(t, weighted)?,
                    None => weighted,
                });
            }
            Ok(total.expect("at least one target slot"))
        }
    }
}

/// AdamW with bias correction and decoupled weight decay
/// (β₁ = 0.9, β₂ = 0.999, ε = 1e-8).
pub struct AdamW {
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    step_count: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamW {
    pub fn new(params: &[&Tensor]) -> AdamW {
        AdamW {
            m: params.iter().map(|p| Tensor::zeros(p.shape().to_vec())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.shape().to_vec())).collect(),
            step_count: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor], lr: f64, wd: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::shape("adamw", "parameter/gradient count mismatch".to_string()));
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(&mut self.v)) {
            if p.shape() != g.shape() {
                return Err(Error::shape(
                    "adamw",
                    format!("parameter {:?} vs gradient {:?}", p.shape(), g.shape()),
                ));
            }
            let pd = p.data_mut();
            let md = m.data_mut();
            let vd = v.data_mut();
            for i in 0..pd.len() {
                let gi = g.data()[i];
                md[i] = self.beta1 * md[i] + (1.0 - self.beta1) * gi;
                vd[i] = self.beta2 * vd[i] + (1.0 - self.beta2) * gi * gi;
                let m_hat = md[i] / bc1;
                let v_hat = vd[i] / bc2;
                pd[i] -= lr * m_hat / (v_hat.sqrt() + self.epsilon) + lr * wd * pd[i];
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_metric: f64,
    pub wall_seconds: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainingLog {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val: f64,
    pub metric_name: String,
}

/// Task metric on the given rows: AUC for binary, accuracy for multiclass,
/// negated RMSE for regression. Evaluation runs in chunks with dropout off.
pub fn evaluate_metric(model: &Model, x: &Tensor, labels: &[f64], task: Task) -> Result<f64> {
    let (n, f) = x.dims2()?;
    let mut outputs: Vec<f64> = Vec::with_capacity(n * task.output_dim());
    let chunk = 256;
    let mut row = 0;
    while row < n {
        let hi = (row + chunk).min(n);
        let part = Tensor::new([hi - row, f], x.data()[row * f..hi * f].to_vec())?;
        let pred = model.predict(&part)?;
        outputs.extend_from_slice(pred.data());
        row = hi;
    }
    match task {
        Task::Binary => metrics::auc(&outputs, labels),
        Task::Multiclass(c) => {
            let classes: Vec<f64> = outputs
                .chunks(c)
                .map(|row| {
                    row.iter()
                        .enumerate()
                        .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite probabilities"))
                        .expect("at least one class")
                        .0 as f64
                })
                .collect();
            metrics::accuracy(&classes, labels)
        }
        Task::Regression => metrics::nrmse(&outputs, labels),
    }
}

/// Trains `model` on the prepared dataset: per-epoch shuffling, per-batch
/// augmentation, forward/backward/step, early stopping on the validation
/// metric, and restoration of the best-validation parameters.
pub fn fit(model: &mut Model, data: &PreparedDataset, cfg: &TrainConfig) -> Result<TrainingLog> {
    cfg.validate()?;
    model.config.validate()?;
    let train_rows = data.rows_in(Split::Train);
    let val_rows = data.rows_in(Split::Val);
    if train_rows.is_empty() || val_rows.is_empty() {
        return Err(Error::Data("training requires non-empty train and val splits".into()));
    }
    let (val_x, val_y) = data.gather(&val_rows);
    let d = model.config.dim;

    let mut shuffle_rng = stream(cfg.seed, "epoch-shuffle");
    let mut aug_rng = stream(cfg.seed, "augment");
    let mut dropout_rng = stream(cfg.seed, "dropout");

    let mut optimizer = AdamW::new(&model.params.tensors());
    let mut log = TrainingLog {
        epochs: Vec::new(),
        best_epoch: 0,
        best_val: f64::NEG_INFINITY,
        metric_name: data.task.metric_name().to_string(),
    };
    let mut best_params = model.params.clone();
    let mut epochs_without_improvement = 0usize;
    let started = Instant::now();

    let mut order = train_rows.clone();
    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        let mut seen = 0usize;
        for (batch_idx, batch) in order.chunks(cfg.batch_size).enumerate() {
            let (bx, by) = data.gather(batch);
            let mut mixed = apply_scheme(&bx, &by, &cfg.mix, &model.importance, &mut aug_rng)?;
            if let Some(plan) = mixed.hid.as_mut() {
                fill_hid_mask(plan, d, &mut aug_rng);
            }

            let (loss_val, grads) = {
                let mut tape = Tape::new();
                let bound = model.bind(&mut tape);
                let xv = tape.leaf(mixed.x.clone());
                let mut z = bound.embed(&mut tape, xv)?;
                if let Some(plan) = &mixed.hid {
                    let zp = tape.permute_rows(z, &plan.perm)?;
                    z = tape.mask_mix(z, zp, Tensor::new([d], plan.dim_mask.clone())?)?;
                }
                let zl = bound.blocks(&mut tape, z, &mut dropout_rng, true)?;
                let pred = bound.head(&mut tape, zl)?;
                let loss = build_loss(&mut tape, pred, &mixed.targets, data.task)?;
                let loss_val = tape.value(loss).data()[0];
                if !loss_val.is_finite() {
                    return Err(Error::Numeric(format!(
                        "loss became {loss_val} at epoch {epoch}, batch {batch_idx}"
                    )));
                }
                let grads = tape.backward(loss)?;
                let grad_tensors: Vec<Tensor> = bound
                    .param_vars()
                    .iter()
                    .zip(model.params.tensors())
                    .map(|(v, p)| {
                        grads
                            .wrt(*v)
                            .cloned()
                            .unwrap_or_else(|| Tensor::zeros(p.shape().to_vec()))
                    })
                    .collect();
                (loss_val, grad_tensors)
            };

            let mut params = model.params.tensors_mut();
            optimizer.step(&mut params, &grads, cfg.learning_rate, cfg.weight_decay)?;
            loss_sum += loss_val * batch.len() as f64;
            seen += batch.len();
        }

        let val_metric = evaluate_metric(model, &val_x, &val_y, data.task)?;
        log.epochs.push(EpochRecord {
            epoch,
            train_loss: loss_sum / seen as f64,
            val_metric,
            wall_seconds: started.elapsed().as_secs_f64(),
        });

        if val_metric > log.best_val {
            log.best_val = val_metric;
            log.best_epoch = epoch;
            best_params = model.params.clone();
            epochs_without_improvement = 0;
        } else {
            epochs_without_improvement += 1;
            if epochs_without_improvement >= cfg.patience {
                break;
            }
        }
    }

    model.params = best_params;
    Ok(log)
}
