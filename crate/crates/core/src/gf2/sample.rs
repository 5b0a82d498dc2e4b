use rand::Rng;

use super::matrix::BitMatrix;
use super::subspace::Subspace;
use super::vector::BitVector;
use crate::error::{Error, Result};

/// A uniform vector of F₂^dim.
pub fn sample_uniform_vector<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> BitVector {
    let mut v = BitVector::zeros(dim);
    for w in v.words_mut() {
        *w = rng.next_u64();
    }
    v.clear_padding();
    v
}

/// A uniform `rows × cols` matrix: every entry an independent fair bit.
/// Rows are drawn in order, each from consecutive words of the stream.
pub fn sample_uniform_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> BitMatrix {
    let data = (0..rows)
        .map(|_| sample_uniform_vector(cols, rng))
        .collect();
    BitMatrix::from_rows(cols, data).expect("rows have the requested width")
}

/// A uniform full-row-rank `rows × cols` matrix, by rejection on the rank.
pub fn sample_surjective_matrix<R: Rng + ?Sized>(
    rows: usize,
    cols: usize,
    rng: &mut R,
) -> Result<BitMatrix> {
    if cols < rows {
        return Err(Error::invalid(format!(
            "no surjective map from F2^{cols} onto F2^{rows}"
        )));
    }
    loop {
        let m = sample_uniform_matrix(rows, cols, rng);
        if m.rank() == rows {
            return Ok(m);
        }
    }
}

/// A uniform vector of the ambient space lying outside `v`, by rejection.
pub fn sample_outside<R: Rng + ?Sized>(v: &Subspace, rng: &mut R) -> Result<BitVector> {
    if v.is_full() {
        return Err(Error::invalid(
            "cannot sample outside the full ambient space",
        ));
    }
    loop {
        let x = sample_uniform_vector(v.ambient_dim(), rng);
        if !v.contains(&x) {
            return Ok(x);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    /// Binomial 3σ half-width around `p` for `n` draws.
    fn three_sigma(p: f64, n: usize) -> f64 {
        3.0 * (p * (1.0 - p) / n as f64).sqrt()
    }

    #[test]
    fn uniform_matrix_is_reproducible() {
        let a = sample_uniform_matrix(2, 2, &mut stream(11, 0));
        let b = sample_uniform_matrix(2, 2, &mut stream(11, 0));
        assert_eq!(a, b);
    }

    #[test]
    fn uniform_matrix_entries_are_fair() {
        let mut rng = stream(1, 0);
        let n = 100_000;
        let ones: usize = (0..n)
            .map(|_| sample_uniform_matrix(1, 1, &mut rng).get(0, 0) as usize)
            .sum();
        let p = ones as f64 / n as f64;
        assert!((p - 0.5).abs() <= three_sigma(0.5, n), "{p}");
    }

    #[test]
    fn two_by_two_invertible_frequency() {
        // Enumeration of all 16 matrices: 6 are invertible.
        let invertible = (0u32..16)
            .filter(|bits| {
                let mut m = BitMatrix::zeros(2, 2);
                for k in 0..4 {
                    m.set(k / 2, k % 2, bits >> k & 1 == 1);
                }
                m.rank() == 2
            })
            .count();
        assert_eq!(invertible, 6);
        let p_exact = 6.0 / 16.0;
        let mut rng = stream(2, 0);
        let n = 100_000;
        let hits = (0..n)
            .filter(|_| sample_uniform_matrix(2, 2, &mut rng).rank() == 2)
            .count();
        let p = hits as f64 / n as f64;
        assert!((p - p_exact).abs() <= three_sigma(p_exact, n), "{p}");
    }

    #[test]
    fn surjective_examples() {
        let mut rng = stream(3, 0);
        for _ in 0..20 {
            assert_eq!(
                sample_surjective_matrix(1, 1, &mut rng).unwrap(),
                BitMatrix::identity(1)
            );
        }
        for _ in 0..200 {
            assert_eq!(sample_surjective_matrix(3, 5, &mut rng).unwrap().rank(), 3);
        }
        assert!(sample_surjective_matrix(3, 2, &mut rng).is_err());
    }

    #[test]
    fn surjective_2x3_is_uniform_over_full_rank() {
        use std::collections::HashMap;
        // Enumerate all 64 matrices; the full-rank ones are the support.
        let full_rank = (0u64..64)
            .filter(|&bits| {
                let m = BitMatrix::from_rows(
                    3,
                    vec![
                        BitVector::from_u64(3, bits & 7).unwrap(),
                        BitVector::from_u64(3, bits >> 3).unwrap(),
                    ],
                )
                .unwrap();
                m.rank() == 2
            })
            .count();
        assert_eq!(full_rank, 42);

        let n = 100_000;
        let mut rng = stream(4, 0);
        let mut counts: HashMap<BitMatrix, usize> = HashMap::new();
        for _ in 0..n {
            *counts
                .entry(sample_surjective_matrix(2, 3, &mut rng).unwrap())
                .or_default() += 1;
        }
        assert_eq!(counts.len(), 42);
        let expected = n as f64 / 42.0;
        let chi2: f64 = counts
            .values()
            .map(|&c| (c as f64 - expected).powi(2) / expected)
            .sum();
        // 41 degrees of freedom: the 0.999 quantile is about 74.7.
        assert!(chi2 < 74.7, "chi2 = {chi2}");
    }

    #[test]
    fn outside_examples() {
        let mut rng = stream(5, 0);
        let zero1 = Subspace::zero(1);
        for _ in 0..10 {
            assert_eq!(
                sample_outside(&zero1, &mut rng).unwrap(),
                BitVector::unit(1, 0)
            );
        }
        let line = Subspace::span(2, [&BitVector::from_bit_str("10").unwrap()]).unwrap();
        let n = 100_000;
        let mut hits_01 = 0;
        for _ in 0..n {
            let x = sample_outside(&line, &mut rng).unwrap();
            assert!(!line.contains(&x));
            if x == BitVector::from_bit_str("01").unwrap() {
                hits_01 += 1;
            } else {
                assert_eq!(x, BitVector::from_bit_str("11").unwrap());
            }
        }
        let p = hits_01 as f64 / n as f64;
        assert!((p - 0.5).abs() <= three_sigma(0.5, n));
        assert!(sample_outside(&Subspace::full(3), &mut rng).is_err());
    }
}
