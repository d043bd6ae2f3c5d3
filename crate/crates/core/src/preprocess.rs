//! Feature preprocessing and mutual-information importance.
//!
//! Categorical columns are encoded with ordered target statistics, then all
//! columns go through a quantile transform onto a standard-normal output.
//! Per-feature importance is normalized mutual information estimated with
//! equal-frequency binning; it drives both the attention mask and the
//! importance-weighted feature mixing.

use crate::data::{Column, Split, TabularDataset, Task};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

/// Quantiles are clipped here before the normal inverse CDF so outputs stay finite.
pub const QUANTILE_CLIP: f64 = 1e-3;

/// Smoothing constant of the ordered target statistic.
pub const CAT_SMOOTHING: f64 = 1.0;

/// Per-feature normalized mutual information scores, all in `[0, 1]`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ImportanceVector {
    pub values: Vec<f64>,
}

impl ImportanceVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }
}

/// Empirical-CDF transform onto a standard normal, fitted on training rows.
///
/// A training value maps through its midpoint quantile `(rank - 0.5) / n`
/// (ranks tie-averaged), unseen values interpolate linearly between support
/// points and clamp at the extremes. Constant columns transform to all
/// zeros (flagged at fit time).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct QuantileTransformer {
    /// Sorted distinct training values.
    support: Vec<f64>,
    /// Midpoint quantile of each support value.
    quantiles: Vec<f64>,
    constant: bool,
}

fn inverse_normal_cdf(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}

impl QuantileTransformer {
    pub fn fit(column: &[f64]) -> Result<QuantileTransformer> {
        if column.is_empty() {
            return Err(Error::Data("cannot fit a quantile transform on an empty column".into()));
        }
        if column.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("quantile fit: column contains non-finite values".into()));
        }
        let n = column.len() as f64;
        let mut sorted = column.to_vec();
        sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite values compare"));

        let mut support = Vec::new();
        let mut quantiles = Vec::new();
        let mut i = 0;
        while i < sorted.len() {
            let mut j = i;
            while j < sorted.len() && sorted[j] == sorted[i] {
                j += 1;
            }
            // tie-averaged midpoint rank of the run [i, j)
            support.push(sorted[i]);
            quantiles.push((i as f64 + (j - i) as f64 / 2.0) / n);
            i = j;
        }
        let constant = support.len() == 1;
        if constant {
            eprintln!("warning: constant column maps to all zeros under the quantile transform");
        }
        Ok(QuantileTransformer { support, quantiles, constant })
    }

    /// Maps one value. NaN passes through so that poisoned rows stay
    /// poisoned instead of silently becoming numbers.
    pub fn transform(&self, v: f64) -> f64 {
        if v.is_nan() {
            return f64::NAN;
        }
        if self.constant {
            return 0.0;
        }
        let q = self.quantile_of(v);
        inverse_normal_cdf(q.clamp(QUANTILE_CLIP, 1.0 - QUANTILE_CLIP))
    }

    fn quantile_of(&self, v: f64) -> f64 {
        let s = &self.support;
        if v <= s[0] {
            return self.quantiles[0];
        }
        if v >= s[s.len() - 1] {
            return self.quantiles[s.len() - 1];
        }
        // binary search for the bracketing support points
        let hi = s.partition_point(|&x| x < v);
        if s[hi] == v {
            return self.quantiles[hi];
        }
        let lo = hi - 1;
        let t = (v - s[lo]) / (s[hi] - s[lo]);
        self.quantiles[lo] + t * (self.quantiles[hi] - self.quantiles[lo])
    }

    pub fn transform_column(&self, column: &[f64]) -> Vec<f64> {
        column.iter().map(|&v| self.transform(v)).collect()
    }
}

/// Ordered-target-statistics category encoder.
///
/// Training rows are encoded in row order against statistics of strictly
/// preceding rows, smoothed towards the global prior; unseen rows (val,
/// test, unseen categories) use full-training statistics.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CategoricalEncoder {
    /// Global training-target mean.
    prior: f64,
    /// Per-category (target sum, count) over all training rows, sorted by name.
    stats: Vec<(String, f64, f64)>,
}

impl CategoricalEncoder {
    /// Fits on training rows and returns their ordered encodings alongside.
    pub fn fit(categories: &[&str], targets: &[f64]) -> Result<(CategoricalEncoder, Vec<f64>)> {
        if categories.len() != targets.len() || categories.is_empty() {
            return Err(Error::Data(format!(
                "categorical fit: {} categories vs {} targets",
                categories.len(),
                targets.len()
            )));
        }
        let prior = targets.iter().sum::<f64>() / targets.len() as f64;
        let mut running: Vec<(String, f64, f64)> = Vec::new();
        let mut encoded = Vec::with_capacity(categories.len());
        for (cat, &y) in categories.iter().zip(targets) {
            let slot = running.binary_search_by(|(c, _, _)| c.as_str().cmp(cat));
            let (sum, count) = match slot {
                Ok(idx) => (running[idx].1, running[idx].2),
                Err(_) => (0.0, 0.0),
            };
            encoded.push((sum + CAT_SMOOTHING * prior) / (count + CAT_SMOOTHING));
            match slot {
                Ok(idx) => {
                    running[idx].1 += y;
                    running[idx].2 += 1.0;
                }
                Err(idx) => running.insert(idx, (cat.to_string(), y, 1.0)),
            }
        }
        Ok((CategoricalEncoder { prior, stats: running }, encoded))
    }

    /// Encodes with full-training statistics; unseen categories get the prior.
    pub fn encode(&self, category: &str) -> f64 {
        match self.stats.binary_search_by(|(c, _, _)| c.as_str().cmp(category)) {
            Ok(idx) => {
                let (_, sum, count) = &self.stats[idx];
                (sum + CAT_SMOOTHING * self.prior) / (count + CAT_SMOOTHING)
            }
            Err(_) => self.prior,
        }
    }

    pub fn prior(&self) -> f64 {
        self.prior
    }
}

/// Equal-frequency discretization: every value is assigned the bin of its
/// tie-averaged midpoint quantile, so identical values always share a bin.
pub fn discretize(column: &[f64], bins: usize) -> Vec<usize> {
    let n = column.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| column[a].partial_cmp(&column[b]).expect("finite values compare"));
    let mut bin_of = vec![0usize; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j < n && column[order[j]] == column[order[i]] {
            j += 1;
        }
        let q = (i as f64 + (j - i) as f64 / 2.0) / n as f64;
        let b = ((q * bins as f64) as usize).min(bins - 1);
        for &idx in &order[i..j] {
            bin_of[idx] = b;
        }
        i = j;
    }
    bin_of
}

/// Plug-in mutual information (nats) over a joint contingency table,
/// normalized by the geometric mean of the marginal entropies. Returns 0
/// when either marginal entropy is 0.
pub fn nmi_discrete(x: &[usize], y: &[usize]) -> f64 {
    assert_eq!(x.len(), y.len());
    let n = x.len() as f64;
    let nx = x.iter().max().map_or(0, |m| m + 1);
    let ny = y.iter().max().map_or(0, |m| m + 1);
    let mut joint = vec![0.0f64; nx * ny];
    let mut px = vec![0.0f64; nx];
    let mut py = vec![0.0f64; ny];
    for (&a, &b) in x.iter().zip(y) {
        joint[a * ny + b] += 1.0;
        px[a] += 1.0;
        py[b] += 1.0;
    }
    let hx: f64 = -px.iter().filter(|&&c| c > 0.0).map(|&c| (c / n) * (c / n).ln()).sum::<f64>();
    let hy: f64 = -py.iter().filter(|&&c| c > 0.0).map(|&c| (c / n) * (c / n).ln()).sum::<f64>();
    if hx <= 0.0 || hy <= 0.0 {
        return 0.0;
    }
    let mut mi = 0.0;
    for a in 0..nx {
        for b in 0..ny {
            let c = joint[a * ny + b];
            if c > 0.0 {
                let pxy = c / n;
                mi += pxy * (pxy * n * n / (px[a] * py[b])).ln();
            }
        }
    }
    (mi / (hx * hy).sqrt()).clamp(0.0, 1.0)
}

/// Number of equal-frequency bins used by the importance estimator.
pub fn importance_bins(n: usize) -> usize {
    (n / 5).clamp(1, 10)
}

/// Per-feature normalized mutual information against the target.
///
/// Continuous features (and the target, for regression) are discretized
/// into `min(10, n/5)` equal-frequency bins; classification targets use
/// their class indices directly. Constant features score 0.
pub fn importance(features: &Tensor, targets: &[f64], task: Task) -> Result<ImportanceVector> {
    let (n, f) = features.dims2()?;
    if n < 10 {
        return Err(Error::Data(format!(
            "importance estimation needs at least 10 rows, got {n}"
        )));
    }
    if targets.len() != n {
        return Err(Error::Data(format!("{n} feature rows vs {} targets", targets.len())));
    }
    let bins = importance_bins(n);
    let y_binned: Vec<usize> = if task.is_classification() {
        targets.iter().map(|&y| y as usize).collect()
    } else {
        discretize(targets, bins)
    };
    let mut values = Vec::with_capacity(f);
    for j in 0..f {
        let col: Vec<f64> = (0..n).map(|i| features.data()[i * f + j]).collect();
        let x_binned = discretize(&col, bins);
        values.push(nmi_discrete(&x_binned, &y_binned));
    }
    Ok(ImportanceVector { values })
}

/// Everything fitted on training rows that is needed to transform new rows.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FittedPipeline {
    pub feature_names: Vec<String>,
    /// Encoder per column; `None` for numeric columns.
    pub encoders: Vec<Option<CategoricalEncoder>>,
    pub quantiles: Vec<QuantileTransformer>,
}

impl FittedPipeline {
    /// Transforms raw columns (same schema as at fit time) into model inputs.
    pub fn transform(&self, columns: &[Column], n_rows: usize) -> Result<Tensor> {
        if columns.len() != self.feature_names.len() {
            return Err(Error::Data(format!(
                "expected {} feature columns, got {}",
                self.feature_names.len(),
                columns.len()
            )));
        }
        let f = columns.len();
        let mut out = vec![0.0; n_rows * f];
        for (j, col) in columns.iter().enumerate() {
            let numeric: Vec<f64> = match (col, &self.encoders[j]) {
                (Column::Numeric(v), None) => v.clone(),
                (Column::Categorical(v), Some(enc)) => v.iter().map(|c| enc.encode(c)).collect(),
                _ => {
                    return Err(Error::Data(format!(
                        "column '{}' type does not match the fitted schema",
                        self.feature_names[j]
                    )))
                }
            };
            let transformed = self.quantiles[j].transform_column(&numeric);
            for (i, v) in transformed.into_iter().enumerate() {
                out[i * f + j] = v;
            }
        }
        Tensor::new([n_rows, f], out)
    }
}

/// Output of [`preprocess_pipeline`]: the transformed matrix for all rows,
/// the train-only importance vector and the fitted transforms.
pub struct PipelineOutput {
    pub features: Tensor,
    pub importance: ImportanceVector,
    pub pipeline: FittedPipeline,
}

/// Fits transforms on the training rows only, transforms every row, and
/// estimates importance on the transformed training rows only.
///
/// Categorical columns are encoded first (ordered statistics on train, full
/// statistics elsewhere), then every column is quantile transformed.
pub fn preprocess_pipeline(dataset: &TabularDataset) -> Result<PipelineOutput> {
    let splits = dataset.splits()?;
    let n = dataset.n_rows();
    let f = dataset.n_features();
    let train_rows: Vec<usize> = (0..n).filter(|&i| splits[i] == Split::Train).collect();
    if train_rows.is_empty() {
        return Err(Error::Data("no training rows".into()));
    }

    let mut encoders: Vec<Option<CategoricalEncoder>> = Vec::with_capacity(f);
    let mut quantiles: Vec<QuantileTransformer> = Vec::with_capacity(f);
    let mut full = vec![0.0; n * f];

    for (j, col) in dataset.columns.iter().enumerate() {
        // encode first
        let numeric_all: Vec<f64> = match col {
            Column::Numeric(v) => {
                encoders.push(None);
                v.clone()
            }
            Column::Categorical(v) => {
                let train_cats: Vec<&str> = train_rows.iter().map(|&i| v[i].as_str()).collect();
                let train_targets: Vec<f64> = train_rows.iter().map(|&i| dataset.labels[i]).collect();
                let (enc, train_encoded) = CategoricalEncoder::fit(&train_cats, &train_targets)?;
                let mut all = vec![0.0; n];
                let mut it = train_encoded.into_iter();
                for i in 0..n {
                    all[i] = if splits[i] == Split::Train {
                        it.next().expect("one encoding per training row")
                    } else {
                        enc.encode(&v[i])
                    };
                }
                encoders.push(Some(enc));
                all
            }
        };
        // then quantile transform, fitted on train only
        let train_vals: Vec<f64> = train_rows.iter().map(|&i| numeric_all[i]).collect();
        let qt = QuantileTransformer::fit(&train_vals)?;
        for i in 0..n {
            full[i * f + j] = qt.transform(numeric_all[i]);
        }
        quantiles.push(qt);
    }

    let features = Tensor::new([n, f], full)?;
    let train_feats = {
        let mut data = Vec::with_capacity(train_rows.len() * f);
        for &i in &train_rows {
            data.extend_from_slice(&features.data()[i * f..(i + 1) * f]);
        }
        Tensor::new([train_rows.len(), f], data)?
    };
    let train_targets: Vec<f64> = train_rows.iter().map(|&i| dataset.labels[i]).collect();
    let importance_vec = importance(&train_feats, &train_targets, dataset.task)?;

    Ok(PipelineOutput {
        features,
        importance: importance_vec,
        pipeline: FittedPipeline {
            feature_names: dataset.feature_names.clone(),
            encoders,
            quantiles,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use rand::Rng;

    #[test]
    fn quantile_median_maps_to_zero() {
        let qt = QuantileTransformer::fit(&[1.0, 2.0, 3.0]).unwrap();
        assert!(qt.transform(2.0).abs() < 1e-12);
    }

    #[test]
    fn quantile_matches_inverse_cdf_oracle() {
        // Phi^{-1}(0.5/3) frozen from an independent high-precision evaluation.
        let qt = QuantileTransformer::fit(&[1.0, 2.0, 3.0]).unwrap();
        assert!((qt.transform(1.0) - (-0.967421566101701)).abs() < 1e-12);
        assert!((qt.transform(3.0) - 0.967421566101701).abs() < 1e-12);
    }

    #[test]
    fn quantile_depends_only_on_ranks() {
        let mut rng = stream(21, "prep-test");
        let col: Vec<f64> = (0..50).map(|_| rng.gen_range(-4.0..4.0)).collect();
        // strictly monotone relabeling preserves ranks
        let relabeled: Vec<f64> = col.iter().map(|v| v.exp() * 3.0 + 1.0).collect();
        let qa = QuantileTransformer::fit(&col).unwrap();
        let qb = QuantileTransformer::fit(&relabeled).unwrap();
        for (v, w) in col.iter().zip(&relabeled) {
            assert!((qa.transform(*v) - qb.transform(*w)).abs() < 1e-12);
        }
    }

    #[test]
    fn quantile_unseen_values_interpolate_and_clamp() {
        let qt = QuantileTransformer::fit(&[0.0, 1.0, 2.0, 3.0]).unwrap();
        let lo = qt.transform(-10.0);
        let hi = qt.transform(10.0);
        assert_eq!(lo, qt.transform(0.0));
        assert_eq!(hi, qt.transform(3.0));
        let mid = qt.transform(0.5);
        assert!(qt.transform(0.0) < mid && mid < qt.transform(1.0));
    }

    #[test]
    fn quantile_train_marginals_are_standard_normal() {
        let mut rng = stream(22, "prep-test");
        // deliberately skewed raw values
        let col: Vec<f64> = (0..500).map(|_| rng.gen_range(0.0f64..1.0).powi(3) * 40.0).collect();
        let qt = QuantileTransformer::fit(&col).unwrap();
        let tx = qt.transform_column(&col);
        let mean = tx.iter().sum::<f64>() / tx.len() as f64;
        let std = (tx.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / tx.len() as f64).sqrt();
        assert!(mean.abs() < 0.05, "mean {mean}");
        assert!((0.9..=1.1).contains(&std), "std {std}");
    }

    #[test]
    fn constant_column_transforms_to_zero() {
        let qt = QuantileTransformer::fit(&[5.0, 5.0, 5.0]).unwrap();
        assert_eq!(qt.transform(5.0), 0.0);
        assert_eq!(qt.transform(99.0), 0.0);
    }

    #[test]
    fn empty_column_fails() {
        assert!(QuantileTransformer::fit(&[]).is_err());
    }

    #[test]
    fn ordered_target_statistic_hand_example() {
        let cats = ["A", "A", "B", "A"];
        let targets = [1.0, 0.0, 1.0, 0.0];
        let (enc, train) = CategoricalEncoder::fit(&cats, &targets).unwrap();
        assert_eq!(train, vec![0.5, 0.75, 0.5, 0.5]);
        assert_eq!(enc.encode("unseen"), 0.5);
    }

    #[test]
    fn single_category_closed_form() {
        // balanced target so the prior is 0.5; full-stats encoding is (sum + 0.5)/(n + 1)
        let cats = ["A", "A", "A", "A"];
        let targets = [1.0, 0.0, 1.0, 0.0];
        let (enc, _) = CategoricalEncoder::fit(&cats, &targets).unwrap();
        assert!((enc.encode("A") - (2.0 + 0.5) / 5.0).abs() < 1e-15);
    }

    #[test]
    fn encoded_values_stay_in_target_hull() {
        let cats = ["a", "b", "a", "c", "b", "a"];
        let targets = [0.0, 1.0, 1.0, 0.0, 1.0, 0.0];
        let (enc, train) = CategoricalEncoder::fit(&cats, &targets).unwrap();
        for v in train.iter().chain([enc.encode("a"), enc.encode("zz")].iter()) {
            assert!((0.0..=1.0).contains(v), "{v}");
        }
    }

    #[test]
    fn nmi_is_one_for_identical_variables() {
        let x: Vec<usize> = (0..100).map(|i| i % 2).collect();
        let nmi = nmi_discrete(&x, &x);
        assert!((nmi - 1.0).abs() < 1e-12, "{nmi}");
    }

    #[test]
    fn nmi_near_zero_for_independent_variables() {
        let mut rng = stream(23, "prep-test");
        let n = 10_000;
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let bins = importance_bins(n);
        let nmi = nmi_discrete(&discretize(&x, bins), &discretize(&y, bins));
        assert!(nmi <= 0.05, "{nmi}");
    }

    #[test]
    fn nmi_invariant_to_joint_permutation() {
        let mut rng = stream(24, "prep-test");
        let n = 200;
        let x: Vec<usize> = (0..n).map(|_| rng.gen_range(0..4)).collect();
        let y: Vec<usize> = x.iter().map(|&v| (v + rng.gen_range(0..2)) % 4).collect();
        let baseline = nmi_discrete(&x, &y);
        let mut order: Vec<usize> = (0..n).collect();
        use rand::seq::SliceRandom;
        order.shuffle(&mut rng);
        let xp: Vec<usize> = order.iter().map(|&i| x[i]).collect();
        let yp: Vec<usize> = order.iter().map(|&i| y[i]).collect();
        assert_eq!(baseline, nmi_discrete(&xp, &yp));
    }

    #[test]
    fn importance_rejects_tiny_samples_and_zeros_constant_features() {
        let feats = Tensor::new([4, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert!(importance(&feats, &[0.0, 1.0, 0.0, 1.0], Task::Binary).is_err());

        let n = 40;
        let mut data = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n {
            data.push(7.0); // constant feature
            data.push(if i % 2 == 0 { 1.0 } else { -1.0 });
            labels.push((i % 2) as f64);
        }
        let feats = Tensor::new([n, 2], data).unwrap();
        let imp = importance(&feats, &labels, Task::Binary).unwrap();
        assert_eq!(imp.values[0], 0.0);
        assert!((imp.values[1] - 1.0).abs() < 1e-12);
    }

    fn toy_dataset(n: usize, seed: u64) -> TabularDataset {
        let mut rng = stream(seed, "prep-test-ds");
        let mut label_col = Vec::new();
        let mut noise_col = Vec::new();
        let mut labels = Vec::new();
        for _ in 0..n {
            let y = f64::from(rng.gen_bool(0.5));
            labels.push(y);
            label_col.push(y * 2.0 - 1.0 + 0.01 * rng.gen_range(-1.0..1.0));
            noise_col.push(rng.gen_range(-1.0..1.0));
        }
        let mut ds = TabularDataset::new(
            vec!["signal".into(), "noise".into()],
            vec![Column::Numeric(label_col), Column::Numeric(noise_col)],
            labels,
            Task::Binary,
        )
        .unwrap();
        let splits: Vec<Split> = (0..n)
            .map(|i| match i % 5 {
                0 => Split::Test,
                1 => Split::Val,
                _ => Split::Train,
            })
            .collect();
        ds.splits = Some(splits);
        ds
    }

    #[test]
    fn pipeline_importance_separates_signal_from_noise() {
        let ds = toy_dataset(400, 31);
        let out = preprocess_pipeline(&ds).unwrap();
        let imp = &out.importance.values;
        assert!(imp[0] > imp[1] + 0.3, "importance {imp:?}");
        for v in imp {
            assert!((0.0..=1.0).contains(v));
        }
    }

    #[test]
    fn all_numeric_pipeline_reduces_to_quantile_transform() {
        let ds = toy_dataset(120, 35);
        let out = preprocess_pipeline(&ds).unwrap();
        assert!(out.pipeline.encoders.iter().all(Option::is_none));
        // column by column, the pipeline output equals a bare quantile fit on train rows
        let splits = ds.splits.as_ref().unwrap();
        for (j, col) in ds.columns.iter().enumerate() {
            let Column::Numeric(v) = col else { panic!("numeric expected") };
            let train_vals: Vec<f64> = v
                .iter()
                .zip(splits)
                .filter(|(_, s)| **s == Split::Train)
                .map(|(x, _)| *x)
                .collect();
            let qt = QuantileTransformer::fit(&train_vals).unwrap();
            for (i, x) in v.iter().enumerate() {
                assert_eq!(out.features.data()[i * 2 + j], qt.transform(*x));
            }
        }
    }

    #[test]
    fn transforms_do_not_depend_on_test_rows() {
        let ds = toy_dataset(200, 32);
        let out1 = preprocess_pipeline(&ds).unwrap();

        // mutate every test row's features
        let mut mutated = ds.clone();
        let splits = mutated.splits.clone().unwrap();
        for col in &mut mutated.columns {
            if let Column::Numeric(v) = col {
                for (i, s) in splits.iter().enumerate() {
                    if *s == Split::Test {
                        v[i] += 1000.0;
                    }
                }
            }
        }
        let out2 = preprocess_pipeline(&mutated).unwrap();

        // identical transforms: train/val rows transform identically, and a
        // probe value maps identically through both fitted pipelines
        assert_eq!(out1.importance.values, out2.importance.values);
        for (qa, qb) in out1.pipeline.quantiles.iter().zip(&out2.pipeline.quantiles) {
            for probe in [-2.0, -0.5, 0.0, 0.7, 3.0] {
                assert_eq!(qa.transform(probe), qb.transform(probe));
            }
        }
    }

    #[test]
    fn importance_order_is_invariant_to_monotone_feature_maps() {
        let ds = toy_dataset(300, 33);
        let out1 = preprocess_pipeline(&ds).unwrap();

        let mut warped = ds.clone();
        for col in &mut warped.columns {
            if let Column::Numeric(v) = col {
                for x in v.iter_mut() {
                    *x = (*x * 0.5).exp(); // strictly increasing
                }
            }
        }
        let out2 = preprocess_pipeline(&warped).unwrap();
        // rank-based estimator: identical importance values, not just order
        for (a, b) in out1.importance.values.iter().zip(&out2.importance.values) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
