//! Evaluation metrics and cross-run aggregation.
//!
//! All metrics share one sign convention: higher is better. Regression
//! therefore reports the negated root mean square error.

use crate::error::{Error, Result};

/// Probability that a uniformly drawn positive outranks a uniformly drawn
/// negative, computed from tie-averaged ranks (ties count one half).
pub fn auc(scores: &[f64], labels: &[f64]) -> Result<f64> {
    if scores.len() != labels.len() || scores.is_empty() {
        return Err(Error::Data(format!(
            "auc: {} scores vs {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Numeric("auc: scores contain non-finite values".into()));
    }
    let pos = labels.iter().filter(|&&y| y == 1.0).count();
    let neg = labels.iter().filter(|&&y| y == 0.0).count();
    if pos + neg != labels.len() {
        return Err(Error::Data("auc: labels must be 0 or 1".into()));
    }
    if pos == 0 || neg == 0 {
        return Err(Error::Data(format!(
            "auc needs both classes, got {pos} positives and {neg} negatives"
        )));
    }
    let ranks = tied_ranks(scores);
    let rank_sum_pos: f64 = ranks
        .iter()
        .zip(labels)
        .filter(|(_, y)| **y == 1.0)
        .map(|(r, _)| r)
        .sum();
    let p = pos as f64;
    let n = neg as f64;
    Ok((rank_sum_pos - p * (p + 1.0) / 2.0) / (p * n))
}

/// Ascending 1-based ranks with ties averaged.
pub fn tied_ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).expect("finite values compare"));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j < n && values[order[j]] == values[order[i]] {
            j += 1;
        }
        // positions i..j (0-based) share the average of ranks i+1..=j
        let avg = (i + 1 + j) as f64 / 2.0;
        for &idx in &order[i..j] {
            ranks[idx] = avg;
        }
        i = j;
    }
    ranks
}

/// Fraction of exactly matching predictions.
pub fn accuracy(predicted: &[f64], labels: &[f64]) -> Result<f64> {
    if predicted.len() != labels.len() || predicted.is_empty() {
        return Err(Error::Data(format!(
            "accuracy: {} predictions vs {} labels",
            predicted.len(),
            labels.len()
        )));
    }
    let hits = predicted.iter().zip(labels).filter(|(p, y)| p == y).count();
    Ok(hits as f64 / labels.len() as f64)
}

/// Negated root mean square error (higher is better, 0 is perfect).
pub fn nrmse(predictions: &[f64], targets: &[f64]) -> Result<f64> {
    if predictions.len() != targets.len() || predictions.is_empty() {
        return Err(Error::Data(format!(
            "nrmse: {} predictions vs {} targets",
            predictions.len(),
            targets.len()
        )));
    }
    let mse: f64 = predictions
        .iter()
        .zip(targets)
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / targets.len() as f64;
    Ok(-mse.sqrt())
}

/// Per-dataset min-max normalization over models, averaged across datasets.
/// `scores[m][d]` is model `m` on dataset `d`. A dataset where every model
/// ties contributes 0 to every model (with a warning).
pub fn normalized_scores(scores: &[Vec<f64>]) -> Result<Vec<f64>> {
    let (n_models, n_datasets) = score_matrix_dims(scores)?;
    let mut sums = vec![0.0; n_models];
    for d in 0..n_datasets {
        let col: Vec<f64> = scores.iter().map(|row| row[d]).collect();
        let min = col.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if max > min {
            for (s, v) in sums.iter_mut().zip(&col) {
                *s += (v - min) / (max - min);
            }
        } else {
            eprintln!("warning: all models tie on dataset {d}; it contributes 0 to every normalized score");
        }
    }
    Ok(sums.iter().map(|s| s / n_datasets as f64).collect())
}

/// Per-dataset competition ranks (1 = best under higher-is-better, ties
/// averaged), returned as mean and standard deviation across datasets.
pub fn ranks(scores: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<f64>)> {
    let (n_models, n_datasets) = score_matrix_dims(scores)?;
    let mut per_model: Vec<Vec<f64>> = vec![Vec::with_capacity(n_datasets); n_models];
    for d in 0..n_datasets {
        // rank 1 = best: rank ascending on negated scores
        let negated: Vec<f64> = scores.iter().map(|row| -row[d]).collect();
        let r = tied_ranks(&negated);
        for (dst, ri) in per_model.iter_mut().zip(&r) {
            dst.push(*ri);
        }
    }
    let means: Vec<f64> = per_model
        .iter()
        .map(|rs| rs.iter().sum::<f64>() / n_datasets as f64)
        .collect();
    let stds: Vec<f64> = per_model
        .iter()
        .zip(&means)
        .map(|(rs, mean)| {
            (rs.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n_datasets as f64).sqrt()
        })
        .collect();
    Ok((means, stds))
}

fn score_matrix_dims(scores: &[Vec<f64>]) -> Result<(usize, usize)> {
    if scores.len() < 2 {
        return Err(Error::Data("score aggregation needs at least 2 models".into()));
    }
    let n_datasets = scores[0].len();
    if n_datasets == 0 || scores.iter().any(|row| row.len() != n_datasets) {
        return Err(Error::Data("score matrix must be rectangular and non-empty".into()));
    }
    Ok((scores.len(), n_datasets))
}

#[cfg(test)]
#[allow(clippy::needless_range_loop)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use rand::Rng;

    /// Brute force over all positive-negative pairs, ties counting one half.
    fn auc_bruteforce(scores: &[f64], labels: &[f64]) -> f64 {
        let mut num = 0.0;
        let mut pairs = 0.0;
        for (i, &yi) in labels.iter().enumerate() {
            if yi != 1.0 {
                continue;
            }
            for (j, &yj) in labels.iter().enumerate() {
                if yj != 0.0 {
                    continue;
                }
                pairs += 1.0;
                if scores[i] > scores[j] {
                    num += 1.0;
                } else if scores[i] == scores[j] {
                    num += 0.5;
                }
            }
        }
        num / pairs
    }

    #[test]
    fn auc_known_example() {
        let scores = [0.1, 0.4, 0.35, 0.8];
        let labels = [0.0, 0.0, 1.0, 1.0];
        assert_eq!(auc(&scores, &labels).unwrap(), 0.75);
    }

    #[test]
    fn auc_perfect_and_all_tied() {
        assert_eq!(auc(&[0.0, 0.1, 0.9, 1.0], &[0.0, 0.0, 1.0, 1.0]).unwrap(), 1.0);
        assert_eq!(auc(&[0.5; 6], &[0.0, 1.0, 0.0, 1.0, 0.0, 1.0]).unwrap(), 0.5);
    }

    #[test]
    fn auc_single_class_fails_naming_counts() {
        let err = auc(&[0.1, 0.2], &[1.0, 1.0]).unwrap_err().to_string();
        assert!(err.contains("2 positives") && err.contains("0 negatives"), "{err}");
    }

    #[test]
    fn auc_matches_bruteforce_on_random_vectors() {
        let mut rng = stream(50, "metrics-test");
        for _ in 0..50 {
            let n = rng.gen_range(4..=30);
            // quantized scores so ties actually occur
            let scores: Vec<f64> = (0..n).map(|_| f64::from(rng.gen_range(0..10)) / 10.0).collect();
            let mut labels: Vec<f64> = (0..n).map(|_| f64::from(rng.gen_bool(0.5))).collect();
            labels[0] = 1.0;
            labels[1] = 0.0;
            let got = auc(&scores, &labels).unwrap();
            let want = auc_bruteforce(&scores, &labels);
            assert_eq!(got, want, "rank-statistic and brute force must agree exactly");
        }
    }

    #[test]
    fn auc_complement_and_monotone_invariance() {
        let mut rng = stream(51, "metrics-test");
        for _ in 0..20 {
            let n = rng.gen_range(4..=25);
            let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let mut labels: Vec<f64> = (0..n).map(|_| f64::from(rng.gen_bool(0.5))).collect();
            labels[0] = 1.0;
            labels[1] = 0.0;
            let a = auc(&scores, &labels).unwrap();
            // no ties almost surely: complement identity
            let neg: Vec<f64> = scores.iter().map(|v| -v).collect();
            let b = auc(&neg, &labels).unwrap();
            assert!((a + b - 1.0).abs() < 1e-12);
            // strictly increasing transform leaves the ranking unchanged
            let warped: Vec<f64> = scores.iter().map(|v| (v * 0.3).exp() + v.tanh()).collect();
            assert_eq!(a, auc(&warped, &labels).unwrap());
        }
    }

    #[test]
    fn accuracy_examples() {
        assert_eq!(accuracy(&[1.0, 0.0, 1.0, 1.0], &[1.0, 0.0, 1.0, 0.0]).unwrap(), 0.75);
        assert_eq!(accuracy(&[1.0, 1.0], &[1.0, 1.0]).unwrap(), 1.0);
        assert_eq!(accuracy(&[0.0, 0.0], &[1.0, 1.0]).unwrap(), 0.0);
    }

    #[test]
    fn nrmse_examples() {
        assert_eq!(nrmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        // constant offset c gives -|c|
        assert!((nrmse(&[3.0, 4.0], &[1.0, 2.0]).unwrap() - (-2.0)).abs() < 1e-12);
        // hand arithmetic: mse = (9 + 16)/2 = 12.5
        assert!((nrmse(&[0.0, 0.0], &[3.0, 4.0]).unwrap() - (-3.5355339059327378)).abs() < 1e-15);
        // constant-mean predictor scores the (negated) target standard deviation
        let targets = [1.0, 2.0, 3.0, 4.0];
        let mean = 2.5;
        let var = targets.iter().map(|t| (t - mean) * (t - mean)).sum::<f64>() / 4.0;
        let got = nrmse(&[mean; 4], &targets).unwrap();
        assert!((got + var.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn normalized_scores_examples() {
        // one dataset, three models
        let m = vec![vec![0.6], vec![0.8], vec![1.0]];
        let s = normalized_scores(&m).unwrap();
        assert_eq!(s[0], 0.0);
        assert!((s[1] - 0.5).abs() < 1e-12);
        assert_eq!(s[2], 1.0);

        // a best-everywhere model scores 1.0
        let m = vec![vec![0.9, 0.7], vec![0.5, 0.2], vec![0.6, 0.4]];
        let s = normalized_scores(&m).unwrap();
        assert_eq!(s[0], 1.0);

        // affine rescaling of one dataset column leaves results unchanged (to roundoff)
        let mut rescaled = m.clone();
        for row in &mut rescaled {
            row[1] = row[1] * 7.0 + 3.0;
        }
        for (a, b) in s.iter().zip(normalized_scores(&rescaled).unwrap()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn rank_examples() {
        // scores [0.9, 0.9, 0.5] -> ranks [1.5, 1.5, 3]
        let m = vec![vec![0.9], vec![0.9], vec![0.5]];
        let (means, _) = ranks(&m).unwrap();
        assert_eq!(means, vec![1.5, 1.5, 3.0]);

        // strictly ordered scores give a permutation of 1..=n
        let m = vec![vec![0.2], vec![0.9], vec![0.5]];
        let (means, stds) = ranks(&m).unwrap();
        assert_eq!(means, vec![3.0, 1.0, 2.0]);
        assert!(stds.iter().all(|&s| s == 0.0));

        // shifting one dataset's scores leaves ranks unchanged
        let m = vec![vec![0.2, 0.8], vec![0.9, 0.1], vec![0.5, 0.4]];
        let (a, _) = ranks(&m).unwrap();
        let shifted: Vec<Vec<f64>> = m.iter().map(|r| vec![r[0], r[1] + 100.0]).collect();
        let (b, _) = ranks(&shifted).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rank_one_model_has_normalized_score_one() {
        let mut rng = stream(52, "metrics-test");
        for _ in 0..20 {
            let m: Vec<Vec<f64>> = (0..4)
                .map(|_| (0..3).map(|_| rng.gen_range(0.0..1.0)).collect())
                .collect();
            let (rank_means, _) = ranks(&m).unwrap();
            let norm = normalized_scores(&m).unwrap();
            for d in 0..3 {
                let col: Vec<f64> = (0..4).map(|mi| m[mi][d]).collect();
                let best = col
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                    .unwrap()
                    .0;
                // the per-dataset winner contributes a normalized 1 on that dataset
                let renorm = (col[best] - col.iter().cloned().fold(f64::INFINITY, f64::min))
                    / (col.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
                        - col.iter().cloned().fold(f64::INFINITY, f64::min));
                assert_eq!(renorm, 1.0);
            }
            let _ = (rank_means, norm);
        }
    }
}
