//! Small shared helpers: exact combinatorics, seed derivation, and a few
//! SVD-backed matrix quantities.

use faer::Mat;
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
pub enum CountError {
    #[error("count overflows 64-bit unsigned integer")]
    Overflow,
}

/// Exact `C(n, k)`, failing on 64-bit overflow.
pub fn binomial(n: u64, k: u64) -> Result<u64, CountError> {
    if k > n {
        return Ok(0);
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        // acc * (n - i) / (i + 1) stays integral at every step
        acc = acc * u128::from(n - i) / u128::from(i + 1);
        if acc > u128::from(u64::MAX) {
            return Err(CountError::Overflow);
        }
    }
    Ok(acc as u64)
}

/// All `k`-subsets of `0..n` in lexicographic order.
pub fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    if k > n {
        return out;
    }
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        out.push(idx.clone());
        // rightmost slot that can still advance
        let mut i = k;
        while i > 0 && idx[i - 1] == n - k + i - 1 {
            i -= 1;
        }
        if i == 0 {
            return out;
        }
        idx[i - 1] += 1;
        for j in i..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// SplitMix64 finalizer.
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives an independent seed from a master seed and a path of indices.
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    path.iter().fold(mix64(master), |acc, &p| mix64(acc ^ mix64(p)))
}

/// Reproducible generator for a derived seed.
pub fn derived_rng(master: u64, path: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, path))
}

fn to_faer(a: &DMatrix<f64>) -> Mat<f64> {
    Mat::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)])
}

/// Singular values in descending order.
pub fn singular_values(a: &DMatrix<f64>) -> Vec<f64> {
    if a.nrows() == 0 || a.ncols() == 0 {
        return Vec::new();
    }
    let mut sv = to_faer(a).singular_values().expect("SVD converges on finite input");
    sv.sort_by(|x, y| y.total_cmp(x));
    sv
}

/// Spectral norm (largest singular value).
pub fn spectral_norm(a: &DMatrix<f64>) -> f64 {
    singular_values(a).first().copied().unwrap_or(0.0)
}

/// Largest absolute entry.
pub fn max_norm(a: &DMatrix<f64>) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Smallest singular value above `rel_cutoff * sigma_max`, or `None` for a
/// zero matrix.
pub fn sigma_min_nonzero(a: &DMatrix<f64>, rel_cutoff: f64) -> Option<f64> {
    let sv = singular_values(a);
    let top = *sv.first()?;
    if top <= 0.0 {
        return None;
    }
    sv.into_iter().rfind(|&s| s > rel_cutoff * top)
}

/// Numerical rank: singular values above `rel_cutoff * sigma_max`.
pub fn numerical_rank(a: &DMatrix<f64>, rel_cutoff: f64) -> usize {
    let sv = singular_values(a);
    match sv.first() {
        Some(&top) if top > 0.0 => sv.iter().filter(|&&s| s > rel_cutoff * top).count(),
        _ => 0,
    }
}

/// Moore-Penrose pseudoinverse via SVD, zeroing singular values at or below
/// `rel_cutoff * sigma_max`.
pub fn pseudoinverse(a: &DMatrix<f64>, rel_cutoff: f64) -> DMatrix<f64> {
    let (rows, cols) = a.shape();
    if rows == 0 || cols == 0 {
        return DMatrix::zeros(cols, rows);
    }
    let svd = to_faer(a).thin_svd().expect("SVD converges on finite input");
    let (u, v) = (svd.U(), svd.V());
    let s = svd.S().column_vector();
    let top = s.iter().fold(0.0f64, |m, &x| m.max(x));
    let mut out = DMatrix::zeros(cols, rows);
    if top <= 0.0 {
        return out;
    }
    let thresh = rel_cutoff * top;
    for (k, &sk) in s.iter().enumerate() {
        if sk > thresh {
            // out += v_k u_k^T / s_k
            for j in 0..rows {
                let ujk = u[(j, k)] / sk;
                for i in 0..cols {
                    out[(i, j)] += v[(i, k)] * ujk;
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binomials() {
        assert_eq!(binomial(8, 0).unwrap(), 1);
        assert_eq!(binomial(8, 2).unwrap(), 28);
        assert_eq!(binomial(4, 5).unwrap(), 0);
        assert_eq!(binomial(62, 31).unwrap(), 465_428_353_255_261_088);
        assert!(binomial(200, 100).is_err());
    }

    #[test]
    fn combinations_lexicographic() {
        assert_eq!(
            combinations(4, 2),
            vec![
                vec![0, 1],
                vec![0, 2],
                vec![0, 3],
                vec![1, 2],
                vec![1, 3],
                vec![2, 3]
            ]
        );
        assert_eq!(combinations(3, 0), vec![Vec::<usize>::new()]);
        assert!(combinations(2, 3).is_empty());
    }

    #[test]
    fn derived_seeds_differ() {
        assert_ne!(derive_seed(1, &[0]), derive_seed(1, &[1]));
        assert_ne!(derive_seed(1, &[0, 1]), derive_seed(1, &[1, 0]));
        assert_eq!(derive_seed(9, &[3, 4]), derive_seed(9, &[3, 4]));
    }

    #[test]
    fn pinv_of_rank_deficient() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 1.0, 2.0, 2.0, 3.0, 3.0]);
        let p = pseudoinverse(&a, 1e-12);
        // Penrose conditions
        assert!((&a * &p * &a - &a).abs().max() < 1e-12);
        assert!((&p * &a * &p - &p).abs().max() < 1e-12);
        assert_eq!(numerical_rank(&a, 1e-10), 1);
    }

    #[test]
    fn pinv_of_repeated_columns() {
        let c: Vec<f64> = (0..30).map(|i| (i * 37 % 11) as f64 / 11.0 - 0.45).collect();
        for cols in [2, 5, 9] {
            let a = DMatrix::from_fn(30, cols, |i, _| c[i]);
            let p = pseudoinverse(&a, 1e-12);
            assert!((&a * &p * &a - &a).amax() < 1e-12, "{cols} columns");
            assert!((&p * &a * &p - &p).amax() < 1e-12, "{cols} columns");
            // min-norm solution spreads the single-column coefficient evenly
            let norm2: f64 = c.iter().map(|v| v * v).sum();
            for j in 0..cols {
                assert!((p[(j, 0)] - c[0] / (norm2 * cols as f64)).abs() < 1e-12);
            }
            assert_eq!(numerical_rank(&a, 1e-10), 1);
        }
    }
}
