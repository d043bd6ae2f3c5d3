//! Rotation and ablation experiment machinery: Haar-random orthogonal
//! rotations, uninformative-feature injection, synthetic dataset
//! generators, and a multi-seed grid runner that emits plot-ready tables.

use crate::data::{Column, Split, TabularDataset, Task};
use crate::error::{Error, Result};
use crate::model::{build_mask, AttentionMask, Model, ModelConfig};
use crate::preprocess::{importance, preprocess_pipeline, ImportanceVector};
use crate::rng::stream;
use crate::tensor::Tensor;
use crate::train::{evaluate_metric, fit, split, PreparedDataset, TrainConfig};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

/// An orthogonal matrix with its generating seed.
#[derive(Clone, Debug)]
pub struct RotationMatrix {
    pub q: Tensor,
    pub seed: u64,
}

/// Haar-distributed orthogonal matrix: QR of a standard-Gaussian matrix
/// with R's diagonal signs absorbed into Q.
pub fn random_orthogonal(f: usize, seed: u64) -> Result<RotationMatrix> {
    if f < 2 {
        return Err(Error::Data(format!("rotation needs at least 2 features, got {f}")));
    }
    let mut rng = stream(seed, "rotation");
    let gauss = nalgebra::DMatrix::<f64>::from_fn(f, f, |_, _| rng.sample(StandardNormal));
    let qr = gauss.qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..f {
        if r[(j, j)] < 0.0 {
            for i in 0..f {
                q[(i, j)] = -q[(i, j)];
            }
        }
    }
    let mut data = vec![0.0; f * f];
    for i in 0..f {
        for j in 0..f {
            data[i * f + j] = q[(i, j)];
        }
    }
    Ok(RotationMatrix { q: Tensor::new([f, f], data)?, seed })
}

impl RotationMatrix {
    pub fn identity(f: usize) -> RotationMatrix {
        let mut data = vec![0.0; f * f];
        for i in 0..f {
            data[i * f + i] = 1.0;
        }
        RotationMatrix { q: Tensor::new([f, f], data).expect("square identity"), seed: 0 }
    }

    pub fn n_features(&self) -> usize {
        self.q.shape()[0]
    }

    /// Rotates every row vector: `X -> X Qᵀ` (each row `x` becomes `Q x`).
    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        let qt = self.q.transpose_last()?;
        x.matmul(&qt)
    }

    /// The inverse rotation.
    pub fn inverse(&self) -> RotationMatrix {
        RotationMatrix { q: self.q.transpose_last().expect("square matrix"), seed: self.seed }
    }

    /// `‖QᵀQ − I‖_∞`.
    pub fn orthogonality_error(&self) -> f64 {
        let f = self.n_features();
        let qt = self.q.transpose_last().expect("square matrix");
        let prod = qt.matmul(&self.q).expect("square product");
        let mut worst = 0.0_f64;
        for i in 0..f {
            for j in 0..f {
                let want = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((prod.data()[i * f + j] - want).abs());
            }
        }
        worst
    }

    pub fn determinant(&self) -> f64 {
        let f = self.n_features();
        let m = nalgebra::DMatrix::from_row_slice(f, f, self.q.data());
        m.determinant()
    }
}

/// Appends `f` standard-Gaussian columns (one per existing feature) named
/// `noise_*`, leaving labels untouched. Requires an all-numeric dataset.
pub fn add_noise_features(dataset: &TabularDataset, seed: u64) -> Result<TabularDataset> {
    if dataset.columns.iter().any(Column::is_categorical) {
        return Err(Error::Data("noise injection requires an all-numeric dataset".into()));
    }
    let mut rng = stream(seed, "noise-features");
    let n = dataset.n_rows();
    let f = dataset.n_features();
    let mut out = dataset.clone();
    for k in 0..f {
        let col: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        out.columns.push(Column::Numeric(col));
        out.feature_names.push(format!("noise_{k}"));
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SyntheticKind {
    /// Target from a random linear score over the informative features.
    Linear,
    /// Sign-product interaction of two correlated factors. The correlation
    /// makes `E[y | x]` vary with `|x|` (so the importance estimator sees
    /// the factors) while the global sign-flip symmetry keeps every linear
    /// coefficient at zero — a linear scorer stays at chance.
    Xor,
    /// Alternating axis-aligned segments of the first feature.
    Piecewise,
}

/// Correlation between the two xor factors.
pub const XOR_FACTOR_CORRELATION: f64 = 0.6;

impl std::str::FromStr for SyntheticKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<SyntheticKind> {
        match s {
            "linear" => Ok(SyntheticKind::Linear),
            "xor" => Ok(SyntheticKind::Xor),
            "piecewise" => Ok(SyntheticKind::Piecewise),
            other => Err(Error::Usage(format!(
                "unknown synthetic kind '{other}'; expected linear, xor or piecewise"
            ))),
        }
    }
}

impl std::fmt::Display for SyntheticKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            SyntheticKind::Linear => "linear",
            SyntheticKind::Xor => "xor",
            SyntheticKind::Piecewise => "piecewise",
        };
        write!(f, "{s}")
    }
}

/// Segment index of a standard-normal value over five equal-mass bins.
fn segment(v: f64) -> usize {
    const CUTS: [f64; 4] = [-0.8416212335729142, -0.2533471031357997, 0.2533471031357997, 0.8416212335729142];
    CUTS.iter().position(|c| v < *c).unwrap_or(CUTS.len())
}


/// Generates a seeded synthetic dataset with `f_informative` signal
/// features followed by `f_noise` standard-Gaussian noise features.
pub fn gen_synthetic(
    kind: SyntheticKind,
    n: usize,
    f_informative: usize,
    f_noise: usize,
    task: Task,
    seed: u64,
) -> Result<TabularDataset> {
    if n < 50 {
        return Err(Error::Data(format!("synthetic datasets need n >= 50, got {n}")));
    }
    if kind == SyntheticKind::Xor && f_informative != 2 {
        return Err(Error::Data("the xor generator uses exactly 2 informative features".into()));
    }
    if f_informative == 0 {
        return Err(Error::Data("need at least one informative feature".into()));
    }
    let mut rng = stream(seed, "synthetic");
    let f = f_informative + f_noise;
    let mut cols: Vec<Vec<f64>> = vec![Vec::with_capacity(n); f];
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(n);
    for _ in 0..n {
        let mut row: Vec<f64> = (0..f).map(|_| rng.sample(StandardNormal)).collect();
        if kind == SyntheticKind::Xor {
            let rho = XOR_FACTOR_CORRELATION;
            row[1] = rho * row[0] + (1.0 - rho * rho).sqrt() * row[1];
        }
        rows.push(row);
    }

    let labels: Vec<f64> = match kind {
        SyntheticKind::Linear => {
            let w: Vec<f64> = (0..f_informative).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let scores: Vec<f64> = rows
                .iter()
                .map(|r| {
                    let s: f64 = r[..f_informative].iter().zip(&w).map(|(x, wi)| x * wi).sum();
                    s + 0.05 * rng.sample::<f64, _>(StandardNormal)
                })
                .collect();
            scores_to_labels(&scores, task)?
        }
        SyntheticKind::Xor => match task {
            Task::Binary => rows.iter().map(|r| f64::from(r[0] * r[1] > 0.0)).collect(),
            Task::Regression => rows
                .iter()
                .map(|r| r[0] * r[1] + 0.05 * rng.sample::<f64, _>(StandardNormal))
                .collect(),
            Task::Multiclass(_) => {
                return Err(Error::Data("the xor generator supports binary or regression targets".into()))
            }
        },
        SyntheticKind::Piecewise => {
            match task {
                Task::Binary => {
                    // alternating segments of the first feature; any further
                    // informative features carry a weak class-conditional shift
                    let base: Vec<f64> = rows.iter().map(|r| (segment(r[0]) % 2) as f64).collect();
                    for (row, &y) in rows.iter_mut().zip(&base) {
                        for x in row.iter_mut().take(f_informative).skip(1) {
                            *x += 0.6 * (2.0 * y - 1.0);
                        }
                    }
                    base
                }
                Task::Regression => {
                    const LEVELS: [f64; 5] = [2.0, -1.0, 1.5, -0.5, 0.8];
                    rows.iter()
                        .map(|r| {
                            let mut y = LEVELS[segment(r[0])];
                            for x in r.iter().take(f_informative).skip(1) {
                                y += 0.3 * x;
                            }
                            y + 0.05 * rng.sample::<f64, _>(StandardNormal)
                        })
                        .collect()
                }
                Task::Multiclass(c) => rows.iter().map(|r| (segment(r[0]) % c) as f64).collect(),
            }
        }
    };

    for row in &rows {
        for (j, &v) in row.iter().enumerate() {
            cols[j].push(v);
        }
    }
    let names: Vec<String> = (0..f_informative)
        .map(|k| format!("x{k}"))
        .chain((0..f_noise).map(|k| format!("noise_{k}")))
        .collect();
    TabularDataset::new(names, cols.into_iter().map(Column::Numeric).collect(), labels, task)
}

fn scores_to_labels(scores: &[f64], task: Task) -> Result<Vec<f64>> {
    match task {
        Task::Regression => Ok(scores.to_vec()),
        Task::Binary => {
            let mut sorted = scores.to_vec();
            sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite scores"));
            let median = sorted[sorted.len() / 2];
            Ok(scores.iter().map(|s| f64::from(*s >= median)).collect())
        }
        Task::Multiclass(c) => {
            let mut sorted = scores.to_vec();
            sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite scores"));
            let cuts: Vec<f64> = (1..c).map(|k| sorted[k * sorted.len() / c]).collect();
            Ok(scores
                .iter()
                .map(|s| cuts.iter().position(|cut| s < cut).unwrap_or(c - 1) as f64)
                .collect())
        }
    }
}

/// Model variants of the ablation grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Semi-permeable mask + attenuated initialization.
    Full,
    /// Open mask, attenuated initialization.
    NoSpa,
    /// Semi-permeable mask, standard initialization.
    NoIai,
    /// Open mask, standard initialization.
    Vanilla,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Full, Variant::NoSpa, Variant::NoIai, Variant::Vanilla];

    fn uses_mask(self) -> bool {
        matches!(self, Variant::Full | Variant::NoIai)
    }

    fn uses_attenuation(self) -> bool {
        matches!(self, Variant::Full | Variant::NoSpa)
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Variant> {
        match s {
            "full" => Ok(Variant::Full),
            "no-spa" => Ok(Variant::NoSpa),
            "no-iai" => Ok(Variant::NoIai),
            "vanilla" => Ok(Variant::Vanilla),
            other => Err(Error::Usage(format!(
                "unknown variant '{other}'; expected full, no-spa, no-iai or vanilla"
            ))),
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Variant::Full => "full",
            Variant::NoSpa => "no-spa",
            Variant::NoIai => "no-iai",
            Variant::Vanilla => "vanilla",
        };
        write!(f, "{s}")
    }
}

/// Architecture and training budget for one experiment grid. The defaults
/// are deliberately smaller than the model defaults so a 4-variant,
/// multi-seed grid finishes in minutes on a laptop.
#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub layers: usize,
    pub dim: usize,
    pub heads: usize,
    pub attn_dropout: f64,
    pub gamma: f64,
    pub train: TrainConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            layers: 3,
            dim: 64,
            heads: 8,
            attn_dropout: 0.3,
            gamma: 1e-4,
            train: TrainConfig {
                learning_rate: 1e-3,
                max_epochs: 150,
                patience: 16,
                ..Default::default()
            },
        }
    }
}

impl ExperimentConfig {
    fn model_config(&self, variant: Variant, task: Task) -> ModelConfig {
        ModelConfig {
            layers: self.layers,
            dim: self.dim,
            heads: self.heads,
            attn_dropout: self.attn_dropout,
            gamma: if variant.uses_attenuation() { self.gamma } else { 1.0 },
            task,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct RotationRecord {
    pub variant: Variant,
    pub rotated: bool,
    pub seed: u64,
    pub metric: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct VariantSummary {
    pub variant: Variant,
    pub rotated: bool,
    pub mean: f64,
    pub std: f64,
    pub runs: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct RotationResults {
    pub metric_name: String,
    pub records: Vec<RotationRecord>,
}

impl RotationResults {
    /// Long-format CSV: `variant,rotated,seed,metric`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("variant,rotated,seed,metric\n");
        for r in &self.records {
            out.push_str(&format!("{},{},{},{}\n", r.variant, r.rotated, r.seed, r.metric));
        }
        out
    }

    pub fn summary(&self) -> Vec<VariantSummary> {
        let mut out = Vec::new();
        for variant in Variant::ALL {
            for rotated in [false, true] {
                let vals: Vec<f64> = self
                    .records
                    .iter()
                    .filter(|r| r.variant == variant && r.rotated == rotated)
                    .map(|r| r.metric)
                    .collect();
                if vals.is_empty() {
                    continue;
                }
                let mean = vals.iter().sum::<f64>() / vals.len() as f64;
                let std = (vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / vals.len() as f64).sqrt();
                out.push(VariantSummary { variant, rotated, mean, std, runs: vals.len() });
            }
        }
        out
    }

    pub fn metric(&self, variant: Variant, rotated: bool, seed: u64) -> Option<f64> {
        self.records
            .iter()
            .find(|r| r.variant == variant && r.rotated == rotated && r.seed == seed)
            .map(|r| r.metric)
    }
}

/// Trains one grid cell and returns the test metric.
#[allow(clippy::too_many_arguments)]
fn run_cell(
    features: &Tensor,
    labels: &[f64],
    task: Task,
    splits: &[Split],
    imp: &ImportanceVector,
    variant: Variant,
    cfg: &ExperimentConfig,
    seed: u64,
) -> Result<f64> {
    let mask = if variant.uses_mask() {
        build_mask(imp)
    } else {
        AttentionMask::open(imp.len())
    };
    let model_cfg = cfg.model_config(variant, task);
    let mut model = Model::with_mask(model_cfg, imp.clone(), mask, seed)?;
    let prepared = PreparedDataset::from_matrix(
        features.clone(),
        labels.to_vec(),
        task,
        splits.to_vec(),
        imp.clone(),
    )?;
    let mut train_cfg = cfg.train.clone();
    train_cfg.seed = seed;
    fit(&mut model, &prepared, &train_cfg)?;
    let test_rows = prepared.rows_in(Split::Test);
    let (tx, ty) = prepared.gather(&test_rows);
    evaluate_metric(&model, &tx, &ty, task)
}

/// Runs the full grid: every variant on the original and the rotated data,
/// once per seed. Per seed, one rotation matrix is shared by all variants;
/// rotation happens after the quantile transform (so geometry changes, not
/// marginals) and importance is recomputed on the rotated training rows.
pub fn run_rotation_experiment(
    dataset: &TabularDataset,
    variants: &[Variant],
    n_seeds: usize,
    cfg: &ExperimentConfig,
) -> Result<RotationResults> {
    run_rotation_experiment_with(dataset, variants, n_seeds, cfg, |seed, f| {
        random_orthogonal(f, seed ^ 0x5070_17e5)
    })
}

/// [`run_rotation_experiment`] with an injected rotation source (tests use
/// the identity to show the rotated arm reproduces the original bit for bit).
pub fn run_rotation_experiment_with(
    dataset: &TabularDataset,
    variants: &[Variant],
    n_seeds: usize,
    cfg: &ExperimentConfig,
    rotation_for: impl Fn(u64, usize) -> Result<RotationMatrix>,
) -> Result<RotationResults> {
    if variants.is_empty() || n_seeds == 0 {
        return Err(Error::Usage("rotation experiment needs at least one variant and one seed".into()));
    }
    let mut records = Vec::new();
    for seed in 0..n_seeds as u64 {
        let mut ds = dataset.clone();
        split(&mut ds, seed)?;
        let out = preprocess_pipeline(&ds)?;
        let splits = ds.splits()?.to_vec();
        let f = ds.n_features();

        let rot = rotation_for(seed, f)?;
        let rotated_features = rot.apply(&out.features)?;
        // the mask must come from the geometry the model actually sees
        let train_rows: Vec<usize> = splits
            .iter()
            .enumerate()
            .filter(|(_, s)| **s == Split::Train)
            .map(|(i, _)| i)
            .collect();
        let mut rot_train = Vec::with_capacity(train_rows.len() * f);
        for &i in &train_rows {
            rot_train.extend_from_slice(&rotated_features.data()[i * f..(i + 1) * f]);
        }
        let rot_train = Tensor::new([train_rows.len(), f], rot_train)?;
        let train_labels: Vec<f64> = train_rows.iter().map(|&i| ds.labels[i]).collect();
        let rot_importance = importance(&rot_train, &train_labels, ds.task)?;

        for &variant in variants {
            let original = run_cell(
                &out.features,
                &ds.labels,
                ds.task,
                &splits,
                &out.importance,
                variant,
                cfg,
                seed,
            )?;
            records.push(RotationRecord { variant, rotated: false, seed, metric: original });

            let rotated = run_cell(
                &rotated_features,
                &ds.labels,
                ds.task,
                &splits,
                &rot_importance,
                variant,
                cfg,
                seed,
            )?;
            records.push(RotationRecord { variant, rotated: true, seed, metric: rotated });
        }
    }
    Ok(RotationResults { metric_name: dataset.task.metric_name().to_string(), records })
}
