//! Dense rank-&le;3 tensors of `f64` with the handful of kernels the model needs.
//!
//! All numeric computation in this crate flows through `Tensor`. Shapes are
//! validated eagerly; the matmul kernels process four output rows per pass
//! over the right-hand matrix and switch to rayon when the problem is large
//! enough to pay for it. Every kernel accumulates in a fixed order, so
//! results are bit-identical regardless of thread count.

use crate::error::{Error, Result};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Problems with at least this many multiply-adds go through the rayon path.
const PAR_MAC_THRESHOLD: usize = 1 << 21;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

pub fn fmt_shape(shape: &[usize]) -> String {
    let dims: Vec<String> = shape.iter().map(|d| d.to_string()).collect();
    format!("[{}]", dims.join("x"))
}

impl Tensor {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<f64>) -> Result<Tensor> {
        let shape = shape.into();
        if shape.is_empty() || shape.len() > 3 {
            return Err(Error::shape(
                "tensor",
                format!("rank must be 1..=3, got {}", fmt_shape(&shape)),
            ));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::shape(
                "tensor",
                format!("shape {} expects {} values, got {}", fmt_shape(&shape), numel, data.len()),
            ));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Tensor {
        let shape = shape.into();
        let numel: usize = shape.iter().product();
        Tensor::new(shape, vec![0.0; numel]).expect("zeros: invalid shape")
    }

    pub fn filled(shape: impl Into<Vec<usize>>, v: f64) -> Tensor {
        let shape = shape.into();
        let numel: usize = shape.iter().product();
        Tensor::new(shape, vec![v; numel]).expect("filled: invalid shape")
    }

    pub fn scalar(v: f64) -> Tensor {
        Tensor { shape: vec![1], data: vec![v] }
    }

    /// Zero-mean normal draws with the given standard deviation.
    pub fn randn(shape: impl Into<Vec<usize>>, std: f64, rng: &mut impl Rng) -> Tensor {
        let shape = shape.into();
        let numel: usize = shape.iter().product();
        let data = (0..numel).map(|_| std * rng.sample::<f64, _>(StandardNormal)).collect();
        Tensor::new(shape, data).expect("randn: invalid shape")
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn is_all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape[..] {
            [m, n] => Ok((m, n)),
            _ => Err(Error::shape("dims2", format!("expected rank 2, got {}", fmt_shape(&self.shape)))),
        }
    }

    pub fn dims3(&self) -> Result<(usize, usize, usize)> {
        match self.shape[..] {
            [b, m, n] => Ok((b, m, n)),
            _ => Err(Error::shape("dims3", format!("expected rank 3, got {}", fmt_shape(&self.shape)))),
        }
    }

    /// Last two extents, treating rank 2 as a single batch.
    pub fn trailing2(&self) -> Result<(usize, usize, usize)> {
        match self.shape[..] {
            [m, n] => Ok((1, m, n)),
            [b, m, n] => Ok((b, m, n)),
            _ => Err(Error::shape("trailing2", format!("expected rank 2 or 3, got {}", fmt_shape(&self.shape)))),
        }
    }

    pub fn reshape(&self, shape: impl Into<Vec<usize>>) -> Result<Tensor> {
        Tensor::new(shape, self.data.clone())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Squared Frobenius norm.
    pub fn sq_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn norm(&self) -> f64 {
        self.sq_norm().sqrt()
    }

    /// Matrix product. Accepts `[m,k] @ [k,n]`, or a rank-3 left operand
    /// `[b,m,k] @ [k,n]` which maps the product over the leading extent.
    pub fn matmul(&self, rhs: &Tensor) -> Result<Tensor> {
        let (k2, n) = rhs.dims2().map_err(|_| {
            Error::shape(
                "matmul",
                format!("rhs must be rank 2, got {}", fmt_shape(&rhs.shape)),
            )
        })?;
        let (rows, k1, out_shape): (usize, usize, Vec<usize>) = match self.shape[..] {
            [m, k] => (m, k, vec![m, n]),
            [b, m, k] => (b * m, k, vec![b, m, n]),
            _ => {
                return Err(Error::shape(
                    "matmul",
                    format!("lhs must be rank 2 or 3, got {}", fmt_shape(&self.shape)),
                ))
            }
        };
        if k1 != k2 {
            return Err(Error::shape(
                "matmul",
                format!("inner extents differ: {} vs {}", fmt_shape(&self.shape), fmt_shape(&rhs.shape)),
            ));
        }
        let mut out = vec![0.0; rows * n];
        matmul_into(&mut out, &self.data, &rhs.data, rows, k1, n);
        Tensor::new(out_shape, out)
    }

    /// Batched matrix product `[b,m,k] @ [b,k,n] -> [b,m,n]`.
    pub fn bmm(&self, rhs: &Tensor) -> Result<Tensor> {
        let (b1, m, k1) = self.dims3()?;
        let (b2, k2, n) = rhs.dims3()?;
        if b1 != b2 || k1 != k2 {
            return Err(Error::shape(
                "bmm",
                format!("incompatible shapes {} and {}", fmt_shape(&self.shape), fmt_shape(&rhs.shape)),
            ));
        }
        let mut out = vec![0.0; b1 * m * n];
        if b1 * m * k1 * n >= PAR_MAC_THRESHOLD && b1 > 1 {
            out.par_chunks_mut(m * n)
                .zip(self.data.par_chunks(m * k1))
                .zip(rhs.data.par_chunks(k1 * n))
                .for_each(|((c, a), b)| matmul_seq(c, a, b, m, k1, n));
        } else {
            for i in 0..b1 {
                matmul_seq(
                    &mut out[i * m * n..(i + 1) * m * n],
                    &self.data[i * m * k1..(i + 1) * m * k1],
                    &rhs.data[i * k1 * n..(i + 1) * k1 * n],
                    m,
                    k1,
                    n,
                );
            }
        }
        Tensor::new(vec![b1, m, n], out)
    }

    /// Swaps the last two axes (rank 2 or 3).
    pub fn transpose_last(&self) -> Result<Tensor> {
        let (b, m, n) = self.trailing2()?;
        let mut out = vec![0.0; self.data.len()];
        for q in 0..b {
            let src = &self.data[q * m * n..(q + 1) * m * n];
            let dst = &mut out[q * m * n..(q + 1) * m * n];
            for i in 0..m {
                for j in 0..n {
                    dst[j * m + i] = src[i * n + j];
                }
            }
        }
        let shape = match self.shape[..] {
            [_, _] => vec![n, m],
            _ => vec![b, n, m],
        };
        Tensor::new(shape, out)
    }
}

/// `c = a @ b` with `a: m*k`, `b: k*n`, row-major. Parallelises over
/// four-row output blocks when the problem is big enough; per-element
/// accumulation order is ascending in `k` in every code path.
pub fn matmul_into(c: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, n: usize) {
    if m * k * n >= PAR_MAC_THRESHOLD && m >= 8 {
        c.par_chunks_mut(4 * n).enumerate().for_each(|(blk, cblk)| {
            let i0 = blk * 4;
            let rows = cblk.len() / n;
            kernel_rows(cblk, &a[i0 * k..(i0 + rows) * k], b, rows, k, n);
        });
    } else {
        matmul_seq(c, a, b, m, k, n);
    }
}

fn matmul_seq(c: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, n: usize) {
    let mut i = 0;
    while i < m {
        let rows = (m - i).min(4);
        kernel_rows(&mut c[i * n..(i + rows) * n], &a[i * k..(i + rows) * k], b, rows, k, n);
        i += rows;
    }
}

/// Up to four output rows per pass over `b`.
fn kernel_rows(c: &mut [f64], a: &[f64], b: &[f64], rows: usize, k: usize, n: usize) {
    c.iter_mut().for_each(|x| *x = 0.0);
    if rows == 4 {
        let (c0, rest) = c.split_at_mut(n);
        let (c1, rest) = rest.split_at_mut(n);
        let (c2, c3) = rest.split_at_mut(n);
        for p in 0..k {
            let a0 = a[p];
            let a1 = a[k + p];
            let a2 = a[2 * k + p];
            let a3 = a[3 * k + p];
            let brow = &b[p * n..(p + 1) * n];
            for j in 0..n {
                let bj = brow[j];
                c0[j] += a0 * bj;
                c1[j] += a1 * bj;
                c2[j] += a2 * bj;
                c3[j] += a3 * bj;
            }
        }
    } else {
        for r in 0..rows {
            let crow = &mut c[r * n..(r + 1) * n];
            for p in 0..k {
                let arp = a[r * k + p];
                let brow = &b[p * n..(p + 1) * n];
                for j in 0..n {
                    crow[j] += arp * brow[j];
                }
            }
        }
    }
}

/// `c = a @ b^T` with `a: m*k`, `b: n*k`. Large problems transpose `b`
/// once and reuse the blocked kernel; small ones run a direct dot-product
/// loop with four independent accumulators so the compiler can vectorize.
pub fn matmul_nt_into(c: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, n: usize) {
    if m * k * n >= 1 << 16 {
        let mut bt = vec![0.0; k * n];
        for j in 0..n {
            for p in 0..k {
                bt[p * n + j] = b[j * k + p];
            }
        }
        matmul_into(c, a, &bt, m, k, n);
        return;
    }
    for (i, crow) in c.chunks_mut(n).enumerate() {
        let arow = &a[i * k..(i + 1) * k];
        for (j, cj) in crow.iter_mut().enumerate() {
            let brow = &b[j * k..(j + 1) * k];
            let (mut s0, mut s1, mut s2, mut s3) = (0.0, 0.0, 0.0, 0.0);
            let chunks = k / 4;
            for q in 0..chunks {
                let p = q * 4;
                s0 += arow[p] * brow[p];
                s1 += arow[p + 1] * brow[p + 1];
                s2 += arow[p + 2] * brow[p + 2];
                s3 += arow[p + 3] * brow[p + 3];
            }
            let mut acc = (s0 + s1) + (s2 + s3);
            for p in chunks * 4..k {
                acc += arow[p] * brow[p];
            }
            *cj = acc;
        }
    }
}

/// `c = a^T @ b` with `a: k*m`, `b: k*n`. Each output row `i` accumulates
/// `sum_p a[p,i] * b[p,:]` in ascending `p`, so splitting rows across
/// threads leaves results bit-identical.
pub fn matmul_tn_into(c: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, n: usize) {
    let block = |i0: usize, cblk: &mut [f64]| {
        cblk.iter_mut().for_each(|x| *x = 0.0);
        let rows = cblk.len() / n;
        for p in 0..k {
            let arow = &a[p * m..(p + 1) * m];
            let brow = &b[p * n..(p + 1) * n];
            for r in 0..rows {
                let api = arow[i0 + r];
                let crow = &mut cblk[r * n..(r + 1) * n];
                for j in 0..n {
                    crow[j] += api * brow[j];
                }
            }
        }
    };
    if m * k * n >= PAR_MAC_THRESHOLD && m >= 32 {
        let rows_per = m.div_ceil(2 * rayon::current_num_threads().max(1)).max(16);
        c.par_chunks_mut(rows_per * n)
            .enumerate()
            .for_each(|(blk, cblk)| block(blk * rows_per, cblk));
    } else {
        block(0, c);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn naive_matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                let mut acc = 0.0;
                for p in 0..k {
                    acc += a[i * k + p] * b[p * n + j];
                }
                c[i * n + j] = acc;
            }
        }
        c
    }

    #[test]
    fn identity_matmul() {
        let eye = Tensor::new([2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let a = Tensor::new([2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(eye.matmul(&a).unwrap(), a);
        assert_eq!(a.matmul(&eye).unwrap(), a);
    }

    #[test]
    fn matmul_matches_triple_loop_oracle() {
        let mut rng = stream(11, "tensor-test");
        let a = Tensor::randn([5, 7], 1.0, &mut rng);
        let b = Tensor::randn([7, 3], 1.0, &mut rng);
        let c = a.matmul(&b).unwrap();
        let oracle = naive_matmul(a.data(), b.data(), 5, 7, 3);
        for (got, want) in c.data().iter().zip(&oracle) {
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
    }

    #[test]
    fn parallel_kernel_is_bit_identical_to_sequential() {
        let mut rng = stream(3, "tensor-test");
        // Big enough to trip the rayon path.
        let (m, k, n) = (96, 128, 192);
        let a = Tensor::randn([m, k], 1.0, &mut rng);
        let b = Tensor::randn([k, n], 1.0, &mut rng);
        let mut via_par = vec![0.0; m * n];
        matmul_into(&mut via_par, a.data(), b.data(), m, k, n);
        let mut via_seq = vec![0.0; m * n];
        matmul_seq(&mut via_seq, a.data(), b.data(), m, k, n);
        assert_eq!(via_par, via_seq);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let a = Tensor::zeros([2, 3]);
        let b = Tensor::zeros([4, 2]);
        let err = a.matmul(&b).unwrap_err().to_string();
        assert!(err.contains("[2x3]") && err.contains("[4x2]"), "{err}");
    }

    #[test]
    fn batched_matmul_folds_leading_extent() {
        let mut rng = stream(5, "tensor-test");
        let a = Tensor::randn([2, 3, 4], 1.0, &mut rng);
        let b = Tensor::randn([4, 5], 1.0, &mut rng);
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.shape(), &[2, 3, 5]);
        let flat = a.reshape([6, 4]).unwrap().matmul(&b).unwrap();
        assert_eq!(c.data(), flat.data());
    }

    #[test]
    fn bmm_matches_per_slice_matmul() {
        let mut rng = stream(6, "tensor-test");
        let a = Tensor::randn([3, 2, 4], 1.0, &mut rng);
        let b = Tensor::randn([3, 4, 2], 1.0, &mut rng);
        let c = a.bmm(&b).unwrap();
        for q in 0..3 {
            let asl = Tensor::new([2, 4], a.data()[q * 8..(q + 1) * 8].to_vec()).unwrap();
            let bsl = Tensor::new([4, 2], b.data()[q * 8..(q + 1) * 8].to_vec()).unwrap();
            let csl = asl.matmul(&bsl).unwrap();
            assert_eq!(&c.data()[q * 4..(q + 1) * 4], csl.data());
        }
    }

    #[test]
    fn transpose_round_trips() {
        let mut rng = stream(9, "tensor-test");
        let a = Tensor::randn([2, 3, 4], 1.0, &mut rng);
        let back = a.transpose_last().unwrap().transpose_last().unwrap();
        assert_eq!(a, back);
    }

    #[test]
    fn nt_and_tn_kernels_match_oracle() {
        let mut rng = stream(12, "tensor-test");
        let (m, k, n) = (5, 6, 4);
        let a = Tensor::randn([m, k], 1.0, &mut rng);
        let bt = Tensor::randn([n, k], 1.0, &mut rng);
        let mut c = vec![0.0; m * n];
        matmul_nt_into(&mut c, a.data(), bt.data(), m, k, n);
        let b = bt.transpose_last().unwrap();
        let want = naive_matmul(a.data(), b.data(), m, k, n);
        for (g, w) in c.iter().zip(&want) {
            assert!((g - w).abs() < 1e-12);
        }

        let at = Tensor::randn([k, m], 1.0, &mut rng);
        let b2 = Tensor::randn([k, n], 1.0, &mut rng);
        let mut c2 = vec![0.0; m * n];
        matmul_tn_into(&mut c2, at.data(), b2.data(), m, k, n);
        let a2 = at.transpose_last().unwrap();
        let want2 = naive_matmul(a2.data(), b2.data(), m, k, n);
        for (g, w) in c2.iter().zip(&want2) {
            assert!((g - w).abs() < 1e-12);
        }
    }

    #[test]
    fn rank_and_length_validation() {
        assert!(Tensor::new([2, 2], vec![1.0; 3]).is_err());
        assert!(Tensor::new(vec![1, 1, 1, 1], vec![1.0]).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]
            #[test]
            fn matmul_matches_naive_at_any_size(
                m in 1usize..12, k in 1usize..12, n in 1usize..12, seed in 0u64..1000
            ) {
                let mut rng = stream(seed, "prop-matmul");
                let a = Tensor::randn([m, k], 1.0, &mut rng);
                let b = Tensor::randn([k, n], 1.0, &mut rng);
                let c = a.matmul(&b).unwrap();
                let want = naive_matmul(a.data(), b.data(), m, k, n);
                for (g, w) in c.data().iter().zip(&want) {
                    prop_assert!((g - w).abs() < 1e-12);
                }
            }

            #[test]
            fn transpose_and_reshape_round_trip(
                b in 1usize..5, m in 1usize..8, n in 1usize..8, seed in 0u64..1000
            ) {
                let mut rng = stream(seed, "prop-transpose");
                let t = Tensor::randn([b, m, n], 1.0, &mut rng);
                prop_assert_eq!(t.transpose_last().unwrap().transpose_last().unwrap(), t.clone());
                let flat = t.reshape([b * m * n]).unwrap();
                prop_assert_eq!(flat.reshape([b, m, n]).unwrap(), t);
            }
        }
    }
}
