//! Interpolation augmentations: embedding-dimension swapping, importance-
//! weighted feature swapping, and the vanilla Mixup / tabular CutMix
//! baselines they are compared against.
//!
//! Label mixing is loss-side: a mixed batch carries its original target
//! vectors plus scalar weights, and the training loss is the weighted sum
//! of the per-target losses. That keeps regression and classification on
//! one code path and is gradient-identical to interpolating targets.

use crate::error::{Error, Result};
use crate::preprocess::ImportanceVector;
use crate::tensor::Tensor;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MixScheme {
    None,
    Hid,
    Feat,
    Both,
    Mixup,
    Cutmix,
}

impl std::str::FromStr for MixScheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<MixScheme> {
        match s {
            "none" => Ok(MixScheme::None),
            "hid" => Ok(MixScheme::Hid),
            "feat" => Ok(MixScheme::Feat),
            "both" => Ok(MixScheme::Both),
            "mixup" => Ok(MixScheme::Mixup),
            "cutmix" => Ok(MixScheme::Cutmix),
            other => Err(Error::Usage(format!(
                "unknown mix scheme '{other}'; expected none, hid, feat, both, mixup or cutmix"
            ))),
        }
    }
}

impl std::fmt::Display for MixScheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            MixScheme::None => "none",
            MixScheme::Hid => "hid",
            MixScheme::Feat => "feat",
            MixScheme::Both => "both",
            MixScheme::Mixup => "mixup",
            MixScheme::Cutmix => "cutmix",
        };
        write!(f, "{s}")
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct MixConfig {
    pub scheme: MixScheme,
    /// Beta parameter for embedding-dimension mixing.
    pub alpha_h: f64,
    /// Beta parameter for feature mixing.
    pub alpha_f: f64,
}

impl Default for MixConfig {
    fn default() -> Self {
        MixConfig { scheme: MixScheme::None, alpha_h: 0.5, alpha_f: 0.5 }
    }
}

impl MixConfig {
    pub fn validate(&self) -> Result<()> {
        if self.alpha_h <= 0.0 || self.alpha_f <= 0.0 {
            return Err(Error::Usage("mix alpha parameters must be positive".into()));
        }
        Ok(())
    }
}

/// Target slots of a (possibly mixed) batch: `(labels, weight)` pairs whose
/// weights are all in `[0,1]` and sum to 1.
#[derive(Clone, Debug)]
pub struct MixedTargets {
    pub slots: Vec<(Vec<f64>, f64)>,
}

impl MixedTargets {
    pub fn plain(labels: Vec<f64>) -> MixedTargets {
        MixedTargets { slots: vec![(labels, 1.0)] }
    }
}

fn sample_lambda(alpha: f64, rng: &mut impl Rng) -> Result<f64> {
    let beta = Beta::new(alpha, alpha)
        .map_err(|e| Error::Usage(format!("invalid Beta parameter {alpha}: {e}")))?;
    Ok(beta.sample(rng))
}

/// 0/1 vector with exactly `floor(lambda * len)` ones at uniformly chosen positions.
pub fn selection_vector(len: usize, lambda: f64, rng: &mut impl Rng) -> Vec<f64> {
    let k = ((lambda * len as f64).floor() as usize).min(len);
    let mut idx: Vec<usize> = (0..len).collect();
    // partial Fisher-Yates: the first k entries are the chosen positions
    for i in 0..k {
        let j = rng.gen_range(i..len);
        idx.swap(i, j);
    }
    let mut s = vec![0.0; len];
    for &i in &idx[..k] {
        s[i] = 1.0;
    }
    s
}

/// Swaps a sampled subset of embedding dimensions between two token
/// stacks: the same dimensions are exchanged for every feature token, and
/// the label coefficient is the sampled fraction itself.
///
/// `z1`/`z2` may be single samples `[f,d]` or batches `[b,f,d]`; when
/// batched, one draw is shared by the whole batch.
pub fn hid_mix(
    z1: &Tensor,
    z2: &Tensor,
    alpha_h: f64,
    rng: &mut impl Rng,
) -> Result<(Tensor, Vec<f64>, f64)> {
    let lambda = sample_lambda(alpha_h, rng)?;
    let (z, s) = hid_mix_with_lambda(z1, z2, lambda, rng)?;
    Ok((z, s, lambda))
}

/// [`hid_mix`] with the Beta draw injected (identity cases, tests).
pub fn hid_mix_with_lambda(
    z1: &Tensor,
    z2: &Tensor,
    lambda: f64,
    rng: &mut impl Rng,
) -> Result<(Tensor, Vec<f64>)> {
    if z1.shape() != z2.shape() {
        return Err(Error::shape("hid_mix", "operands must have identical shapes".to_string()));
    }
    let d = *z1.shape().last().expect("tensor has a last axis");
    if d == 0 {
        return Err(Error::Data("hid_mix: zero embedding width".into()));
    }
    let s = selection_vector(d, lambda, rng);
    let data: Vec<f64> = z1
        .data()
        .iter()
        .zip(z2.data())
        .enumerate()
        .map(|(i, (a, b))| {
            let m = s[i % d];
            m * a + (1.0 - m) * b
        })
        .collect();
    Ok((Tensor::new(z1.shape().to_vec(), data)?, s))
}

/// Swaps a sampled subset of raw features between two samples; the label
/// coefficient is the importance share of the features kept from `x1`.
pub fn feat_mix(
    x1: &Tensor,
    x2: &Tensor,
    alpha_f: f64,
    importance: &ImportanceVector,
    rng: &mut impl Rng,
) -> Result<(Tensor, Vec<f64>, f64)> {
    let lambda = sample_lambda(alpha_f, rng)?;
    feat_mix_with_lambda(x1, x2, lambda, importance, rng)
}

/// [`feat_mix`] with the Beta draw injected. Returns `(x_m, s_F, coefficient)`.
pub fn feat_mix_with_lambda(
    x1: &Tensor,
    x2: &Tensor,
    lambda: f64,
    importance: &ImportanceVector,
    rng: &mut impl Rng,
) -> Result<(Tensor, Vec<f64>, f64)> {
    if x1.shape() != x2.shape() {
        return Err(Error::shape("feat_mix", "operands must have identical shapes".to_string()));
    }
    let f = *x1.shape().last().expect("tensor has a last axis");
    if importance.len() != f {
        return Err(Error::shape(
            "feat_mix",
            format!("importance has {} entries for {} features", importance.len(), f),
        ));
    }
    let total = importance.total();
    if total <= 0.0 {
        return Err(Error::Data(
            "feat_mix: importance sums to zero; check the importance estimator on this dataset"
                .into(),
        ));
    }
    let s = selection_vector(f, lambda, rng);
    let coeff = importance_share(&s, importance);
    let x = splice(x1, x2, &s)?;
    Ok((x, s, coeff))
}

/// Share of total importance carried by the selected features.
pub fn importance_share(selection: &[f64], importance: &ImportanceVector) -> f64 {
    let kept: f64 = selection
        .iter()
        .zip(&importance.values)
        .filter(|(s, _)| **s == 1.0)
        .map(|(_, v)| v)
        .sum();
    kept / importance.total()
}

fn splice(x1: &Tensor, x2: &Tensor, s: &[f64]) -> Result<Tensor> {
    let f = s.len();
    let data: Vec<f64> = x1
        .data()
        .iter()
        .zip(x2.data())
        .enumerate()
        .map(|(i, (a, b))| {
            let m = s[i % f];
            m * a + (1.0 - m) * b
        })
        .collect();
    Tensor::new(x1.shape().to_vec(), data)
}

/// Vanilla Mixup: elementwise convex combination with coefficient
/// `lambda ~ Beta(alpha, alpha)`.
pub fn mixup_vanilla(
    x1: &Tensor,
    x2: &Tensor,
    alpha: f64,
    rng: &mut impl Rng,
) -> Result<(Tensor, f64)> {
    let lambda = sample_lambda(alpha, rng)?;
    let x = mixup_with_lambda(x1, x2, lambda)?;
    Ok((x, lambda))
}

pub fn mixup_with_lambda(x1: &Tensor, x2: &Tensor, lambda: f64) -> Result<Tensor> {
    if x1.shape() != x2.shape() {
        return Err(Error::shape("mixup", "operands must have identical shapes".to_string()));
    }
    let data: Vec<f64> = x1
        .data()
        .iter()
        .zip(x2.data())
        .map(|(a, b)| lambda * a + (1.0 - lambda) * b)
        .collect();
    Tensor::new(x1.shape().to_vec(), data)
}

/// Tabular CutMix: the same feature splice as [`feat_mix`] but the label
/// coefficient is the plain count fraction, ignoring importance.
pub fn cutmix_tabular(
    x1: &Tensor,
    x2: &Tensor,
    alpha: f64,
    rng: &mut impl Rng,
) -> Result<(Tensor, Vec<f64>, f64)> {
    let lambda = sample_lambda(alpha, rng)?;
    cutmix_with_lambda(x1, x2, lambda, rng)
}

pub fn cutmix_with_lambda(
    x1: &Tensor,
    x2: &Tensor,
    lambda: f64,
    rng: &mut impl Rng,
) -> Result<(Tensor, Vec<f64>, f64)> {
    if x1.shape() != x2.shape() {
        return Err(Error::shape("cutmix", "operands must have identical shapes".to_string()));
    }
    let f = *x1.shape().last().expect("tensor has a last axis");
    let s = selection_vector(f, lambda, rng);
    let ones = s.iter().filter(|v| **v == 1.0).count() as f64;
    let coeff = ones / f as f64;
    let x = splice(x1, x2, &s)?;
    Ok((x, s, coeff))
}

/// Embedding-level mixing deferred into the forward pass: mix the embedded
/// batch with its row permutation using a shared dimension mask.
#[derive(Clone, Debug)]
pub struct HidPlan {
    pub perm: Vec<usize>,
    /// 0/1 over embedding dimensions, shared by every feature token.
    pub dim_mask: Vec<f64>,
    pub lambda: f64,
}

/// A batch after augmentation: possibly mixed raw inputs, an optional
/// embedding-level plan, and the loss-side target slots.
#[derive(Clone, Debug)]
pub struct MixedBatch {
    pub x: Tensor,
    pub hid: Option<HidPlan>,
    pub targets: MixedTargets,
}

/// Applies a scheme to one training batch. Rows are paired with a partner
/// through a uniformly random permutation; raw-feature schemes act before
/// embedding, `hid` acts on embeddings inside the forward pass, and `both`
/// composes feature mixing, embedding, then dimension mixing with weights
/// multiplied through the two pairings.
pub fn apply_scheme(
    x: &Tensor,
    labels: &[f64],
    cfg: &MixConfig,
    importance: &ImportanceVector,
    rng: &mut impl Rng,
) -> Result<MixedBatch> {
    cfg.validate()?;
    let (b, _f) = x.dims2()?;
    if labels.len() != b {
        return Err(Error::Data(format!("{b} rows vs {} labels", labels.len())));
    }
    if cfg.scheme == MixScheme::None {
        return Ok(MixedBatch { x: x.clone(), hid: None, targets: MixedTargets::plain(labels.to_vec()) });
    }
    if b < 2 {
        eprintln!("warning: batch of one row cannot be mixed; passing through");
        return Ok(MixedBatch { x: x.clone(), hid: None, targets: MixedTargets::plain(labels.to_vec()) });
    }

    let mut perm: Vec<usize> = (0..b).collect();
    perm.shuffle(rng);
    let partner_labels: Vec<f64> = perm.iter().map(|&i| labels[i]).collect();
    let x_partner = permute_rows_tensor(x, &perm)?;

    match cfg.scheme {
        MixScheme::None => unreachable!("handled above"),
        MixScheme::Hid => {
            let lambda = sample_lambda(cfg.alpha_h, rng)?;
            Ok(MixedBatch {
                x: x.clone(),
                hid: Some(HidPlan { perm, dim_mask: Vec::new(), lambda }),
                targets: MixedTargets {
                    slots: vec![(labels.to_vec(), lambda), (partner_labels, 1.0 - lambda)],
                },
            })
        }
        MixScheme::Feat => {
            let (xm, _s, coeff) = feat_mix(x, &x_partner, cfg.alpha_f, importance, rng)?;
            Ok(MixedBatch {
                x: xm,
                hid: None,
                targets: MixedTargets {
                    slots: vec![(labels.to_vec(), coeff), (partner_labels, 1.0 - coeff)],
                },
            })
        }
        MixScheme::Mixup => {
            let (xm, lambda) = mixup_vanilla(x, &x_partner, cfg.alpha_f, rng)?;
            Ok(MixedBatch {
                x: xm,
                hid: None,
                targets: MixedTargets {
                    slots: vec![(labels.to_vec(), lambda), (partner_labels, 1.0 - lambda)],
                },
            })
        }
        MixScheme::Cutmix => {
            let (xm, _s, coeff) = cutmix_tabular(x, &x_partner, cfg.alpha_f, rng)?;
            Ok(MixedBatch {
                x: xm,
                hid: None,
                targets: MixedTargets {
                    slots: vec![(labels.to_vec(), coeff), (partner_labels, 1.0 - coeff)],
                },
            })
        }
        MixScheme::Both => {
            let (xm, _s, big_lambda) = feat_mix(x, &x_partner, cfg.alpha_f, importance, rng)?;
            let mut hid_perm: Vec<usize> = (0..b).collect();
            hid_perm.shuffle(rng);
            let lambda_h = sample_lambda(cfg.alpha_h, rng)?;
            // outer pair of row i is (t_i, t_{p2(i)}), each itself a feature-mixed pair
            let y = labels;
            let y_p1 = partner_labels;
            let y_p2: Vec<f64> = hid_perm.iter().map(|&i| y[i]).collect();
            let y_p1_p2: Vec<f64> = hid_perm.iter().map(|&i| y_p1[i]).collect();
            Ok(MixedBatch {
                x: xm,
                hid: Some(HidPlan { perm: hid_perm, dim_mask: Vec::new(), lambda: lambda_h }),
                targets: MixedTargets {
                    slots: vec![
                        (y.to_vec(), lambda_h * big_lambda),
                        (y_p1, lambda_h * (1.0 - big_lambda)),
                        (y_p2, (1.0 - lambda_h) * big_lambda),
                        (y_p1_p2, (1.0 - lambda_h) * (1.0 - big_lambda)),
                    ],
                },
            })
        }
    }
}

/// Samples the shared dimension mask for a pending [`HidPlan`] once the
/// embedding width is known.
pub fn fill_hid_mask(plan: &mut HidPlan, d: usize, rng: &mut impl Rng) {
    plan.dim_mask = selection_vector(d, plan.lambda, rng);
}

fn permute_rows_tensor(x: &Tensor, perm: &[usize]) -> Result<Tensor> {
    let (b, f) = x.dims2()?;
    let mut out = vec![0.0; b * f];
    for (i, &p) in perm.iter().enumerate() {
        out[i * f..(i + 1) * f].copy_from_slice(&x.data()[p * f..(p + 1) * f]);
    }
    Tensor::new([b, f], out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use rand::Rng;

    fn imp(values: &[f64]) -> ImportanceVector {
        ImportanceVector { values: values.to_vec() }
    }

    #[test]
    fn hid_mix_lambda_one_is_identity() {
        let mut rng = stream(1, "aug-test");
        let z1 = Tensor::randn([3, 4], 1.0, &mut rng);
        let z2 = Tensor::randn([3, 4], 1.0, &mut rng);
        let (zm, s) = hid_mix_with_lambda(&z1, &z2, 1.0, &mut rng).unwrap();
        assert_eq!(zm, z1);
        assert!(s.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn hid_mix_selection_count_and_shared_columns() {
        let mut rng = stream(2, "aug-test");
        let z1 = Tensor::randn([2, 4], 1.0, &mut rng);
        let z2 = Tensor::randn([2, 4], 1.0, &mut rng);
        // floor(0.6 * 4) = 2 chosen dimensions
        let (zm, s) = hid_mix_with_lambda(&z1, &z2, 0.6, &mut rng).unwrap();
        assert_eq!(s.iter().filter(|v| **v == 1.0).count(), 2);
        for i in 0..zm.numel() {
            let expect = if s[i % 4] == 1.0 { z1.data()[i] } else { z2.data()[i] };
            assert_eq!(zm.data()[i], expect);
        }
        // the same dimensions swap in every token row
        for d in 0..4 {
            let from_z1 = zm.data()[d] == z1.data()[d];
            assert_eq!(zm.data()[4 + d] == z1.data()[4 + d], from_z1);
        }
    }

    #[test]
    fn beta_half_mean_concentrates_at_half() {
        let mut rng = stream(3, "aug-test");
        let n = 100_000;
        let mean: f64 = (0..n).map(|_| sample_lambda(0.5, &mut rng).unwrap()).sum::<f64>() / n as f64;
        assert!((mean - 0.5).abs() < 0.01, "Beta(0.5,0.5) sample mean {mean}");
    }

    #[test]
    fn feat_mix_examples() {
        let mut rng = stream(4, "aug-test");
        // uniform importance reduces the coefficient to the count fraction
        let x1 = Tensor::new([4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let x2 = Tensor::new([4], vec![-1.0, -2.0, -3.0, -4.0]).unwrap();
        let (_, s, coeff) = feat_mix_with_lambda(&x1, &x2, 0.5, &imp(&[1.0, 1.0, 1.0, 1.0]), &mut rng).unwrap();
        assert_eq!(s.iter().filter(|v| **v == 1.0).count(), 2);
        assert_eq!(coeff, 0.5);

        // direct evaluation with a hand-picked selection
        let i = imp(&[0.1, 0.4, 0.2, 0.3]);
        let coeff = importance_share(&[1.0, 0.0, 0.0, 1.0], &i);
        assert!((coeff - 0.4).abs() < 1e-15);

        // all-ones selection: identity and coefficient 1
        let (xm, s, coeff) = feat_mix_with_lambda(&x1, &x2, 1.0, &i, &mut rng).unwrap();
        assert!(s.iter().all(|&v| v == 1.0));
        assert_eq!(xm, x1);
        assert_eq!(coeff, 1.0);
    }

    #[test]
    fn feat_mix_rejects_zero_importance() {
        let mut rng = stream(5, "aug-test");
        let x = Tensor::new([2], vec![1.0, 2.0]).unwrap();
        let err = feat_mix(&x, &x, 0.5, &imp(&[0.0, 0.0]), &mut rng).unwrap_err();
        assert!(err.to_string().contains("importance"), "{err}");
    }

    #[test]
    fn coefficient_invariant_under_importance_rescaling() {
        let mut rng = stream(6, "aug-test");
        let base = imp(&[0.12, 0.55, 0.08, 0.25]);
        for _ in 0..50 {
            let lambda: f64 = rng.gen_range(0.0..1.0);
            let s = selection_vector(4, lambda, &mut rng);
            let a = importance_share(&s, &base);
            for scale in [0.01, 3.0, 1e6] {
                let scaled = imp(&base.values.iter().map(|v| v * scale).collect::<Vec<_>>());
                let b = importance_share(&s, &scaled);
                assert!((a - b).abs() < 1e-12, "{a} vs {b} at scale {scale}");
            }
        }
    }

    #[test]
    fn feat_mix_equals_cutmix_under_uniform_importance() {
        let mut rng_a = stream(7, "aug-test");
        let mut rng_b = stream(7, "aug-test");
        let x1 = Tensor::new([5], vec![1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        let x2 = Tensor::new([5], vec![9.0, 8.0, 7.0, 6.0, 5.0]).unwrap();
        let uniform = imp(&[1.0; 5]);
        for lambda in [0.0, 0.21, 0.44, 0.61, 0.87, 1.0] {
            let (xa, sa, ca) = feat_mix_with_lambda(&x1, &x2, lambda, &uniform, &mut rng_a).unwrap();
            let (xb, sb, cb) = cutmix_with_lambda(&x1, &x2, lambda, &mut rng_b).unwrap();
            assert_eq!(sa, sb);
            assert_eq!(xa, xb);
            assert_eq!(ca, cb, "coefficients must agree exactly");
        }
    }

    #[test]
    fn cutmix_count_fraction() {
        let mut rng = stream(8, "aug-test");
        let x1 = Tensor::new([5], vec![0.0; 5]).unwrap();
        let x2 = Tensor::new([5], vec![1.0; 5]).unwrap();
        let (_, s, coeff) = cutmix_with_lambda(&x1, &x2, 0.5, &mut rng).unwrap();
        assert_eq!(s.iter().filter(|v| **v == 1.0).count(), 2);
        assert_eq!(coeff, 0.4);
        // no features kept: partner-dominant with coefficient 0
        let (xm, _, coeff) = cutmix_with_lambda(&x1, &x2, 0.0, &mut rng).unwrap();
        assert_eq!(coeff, 0.0);
        assert_eq!(xm, x2);
    }

    #[test]
    fn mixup_examples() {
        let x1 = Tensor::new([3], vec![0.0, 0.0, 0.0]).unwrap();
        let x2 = Tensor::new([3], vec![2.0, 2.0, 2.0]).unwrap();
        assert_eq!(mixup_with_lambda(&x1, &x2, 1.0).unwrap(), x1);
        let mid = mixup_with_lambda(&x1, &x2, 0.5).unwrap();
        assert!(mid.data().iter().all(|&v| v == 1.0));

        // Beta(alpha, alpha) is symmetric, so the mixed value concentrates at the midpoint
        let mut rng = stream(9, "aug-test");
        let n = 20_000;
        let mean: f64 = (0..n)
            .map(|_| mixup_vanilla(&x1, &x2, 0.5, &mut rng).unwrap().0.data()[0])
            .sum::<f64>()
            / n as f64;
        assert!((mean - 1.0).abs() < 0.02, "empirical mixup mean {mean}");
    }

    #[test]
    fn expected_coefficient_is_count_fraction_for_any_importance() {
        let mut rng = stream(10, "aug-test");
        let i = imp(&[0.05, 0.3, 0.15, 0.5]);
        let lambda = 0.7; // floor(0.7*4) = 2 chosen of 4
        let n = 100_000;
        let mean: f64 = (0..n)
            .map(|_| importance_share(&selection_vector(4, lambda, &mut rng), &i))
            .sum::<f64>()
            / n as f64;
        assert!((mean - 0.5).abs() < 0.02, "E[coefficient] {mean}");
    }

    #[test]
    fn scheme_none_passes_batch_through() {
        let mut rng = stream(11, "aug-test");
        let x = Tensor::randn([4, 3], 1.0, &mut rng);
        let labels = vec![0.0, 1.0, 1.0, 0.0];
        let cfg = MixConfig { scheme: MixScheme::None, ..Default::default() };
        let out = apply_scheme(&x, &labels, &cfg, &imp(&[0.3, 0.3, 0.4]), &mut rng).unwrap();
        assert_eq!(out.x, x);
        assert!(out.hid.is_none());
        assert_eq!(out.targets.slots.len(), 1);
        assert_eq!(out.targets.slots[0].1, 1.0);
    }

    #[test]
    fn scheme_weights_partition_unity_and_bound_targets() {
        let mut rng = stream(12, "aug-test");
        let x = Tensor::randn([6, 4], 1.0, &mut rng);
        let labels = vec![0.0, 1.0, 1.0, 0.0, 1.0, 0.0];
        let importance = imp(&[0.2, 0.5, 0.1, 0.2]);
        for scheme in [MixScheme::Hid, MixScheme::Feat, MixScheme::Both, MixScheme::Mixup, MixScheme::Cutmix] {
            let cfg = MixConfig { scheme, ..Default::default() };
            let out = apply_scheme(&x, &labels, &cfg, &importance, &mut rng).unwrap();
            let total: f64 = out.targets.slots.iter().map(|(_, w)| w).sum();
            assert!((total - 1.0).abs() < 1e-12, "{scheme:?} weights sum {total}");
            for (_, w) in &out.targets.slots {
                assert!((0.0..=1.0).contains(w), "{scheme:?} weight {w}");
            }
            // the equivalent mixed target stays inside the label hull
            for row in 0..6 {
                let mixed: f64 = out.targets.slots.iter().map(|(y, w)| y[row] * w).sum();
                assert!((0.0..=1.0).contains(&mixed));
            }
        }
    }

    #[test]
    fn permutation_pairs_every_row_once() {
        let mut rng = stream(13, "aug-test");
        let x = Tensor::randn([8, 2], 1.0, &mut rng);
        let labels: Vec<f64> = (0..8).map(|i| f64::from(i % 2 == 0)).collect();
        let cfg = MixConfig { scheme: MixScheme::Hid, ..Default::default() };
        let out = apply_scheme(&x, &labels, &cfg, &imp(&[0.5, 0.5]), &mut rng).unwrap();
        let mut perm = out.hid.unwrap().perm;
        perm.sort_unstable();
        assert_eq!(perm, (0..8).collect::<Vec<_>>());
    }

    #[test]
    fn batch_of_one_passes_through_with_warning() {
        let mut rng = stream(14, "aug-test");
        let x = Tensor::randn([1, 3], 1.0, &mut rng);
        let cfg = MixConfig { scheme: MixScheme::Feat, ..Default::default() };
        let out = apply_scheme(&x, &[1.0], &cfg, &imp(&[0.3, 0.3, 0.4]), &mut rng).unwrap();
        assert_eq!(out.x, x);
        assert_eq!(out.targets.slots.len(), 1);
    }

    #[test]
    fn both_with_forced_identities_recovers_original() {
        // both lambdas drawn as 1: all features kept, all dimensions kept
        let mut rng = stream(15, "aug-test");
        let x1 = Tensor::new([3], vec![1.0, 2.0, 3.0]).unwrap();
        let x2 = Tensor::new([3], vec![7.0, 8.0, 9.0]).unwrap();
        let i = imp(&[0.2, 0.3, 0.5]);
        let (xm, _, big_lambda) = feat_mix_with_lambda(&x1, &x2, 1.0, &i, &mut rng).unwrap();
        assert_eq!(xm, x1);
        let (zm, _) = hid_mix_with_lambda(&xm, &x2, 1.0, &mut rng).unwrap();
        assert_eq!(zm, x1);
        assert_eq!(big_lambda, 1.0);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(128))]
            #[test]
            fn feat_mix_coefficient_stays_in_unit_interval(
                lambda in 0.0f64..1.0,
                raw in proptest::collection::vec(0.0f64..10.0, 2..10),
                seed in 0u64..1000,
            ) {
                prop_assume!(raw.iter().sum::<f64>() > 0.0);
                let f = raw.len();
                let importance = ImportanceVector { values: raw };
                let mut rng = stream(seed, "prop-featmix");
                let x1 = Tensor::randn([f], 1.0, &mut rng);
                let x2 = Tensor::randn([f], 1.0, &mut rng);
                let (xm, s, coeff) = feat_mix_with_lambda(&x1, &x2, lambda, &importance, &mut rng).unwrap();
                prop_assert!((0.0..=1.0).contains(&coeff));
                prop_assert_eq!(s.iter().filter(|v| **v == 1.0).count(), (lambda * f as f64).floor() as usize);
                // the splice takes each coordinate from exactly one parent
                for i in 0..f {
                    prop_assert!(xm.data()[i] == x1.data()[i] || xm.data()[i] == x2.data()[i]);
                }
            }
        }
    }

    #[test]
    fn determinism_same_seed_same_mixed_batch() {
        let run = || {
            let mut rng = stream(16, "aug-test");
            let x = Tensor::randn([6, 4], 1.0, &mut rng);
            let labels = vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0];
            let cfg = MixConfig { scheme: MixScheme::Both, ..Default::default() };
            let out = apply_scheme(&x, &labels, &cfg, &imp(&[0.2, 0.3, 0.4, 0.1]), &mut rng).unwrap();
            (out.x, out.targets.slots, out.hid.map(|h| (h.perm, h.lambda.to_bits())))
        };
        let (xa, ta, ha) = run();
        let (xb, tb, hb) = run();
        assert_eq!(xa, xb);
        assert_eq!(ha, hb);
        for ((ya, wa), (yb, wb)) in ta.iter().zip(&tb) {
            assert_eq!(ya, yb);
            assert_eq!(wa.to_bits(), wb.to_bits());
        }
    }
}
