use std::fmt;

use super::subspace::Subspace;
use super::vector::BitVector;
use crate::error::{Error, Result};

/// A dense `rows × cols` matrix over F₂, one packed [`BitVector`] per row.
///
/// Represents a linear map F₂^cols → F₂^rows.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct BitMatrix {
    rows: usize,
    cols: usize,
    row_data: Vec<BitVector>,
}

impl BitMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            row_data: vec![BitVector::zeros(cols); rows],
        }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            rows: n,
            cols: n,
            row_data: (0..n).map(|i| BitVector::unit(n, i)).collect(),
        }
    }

    /// Builds a matrix from its rows; each row must have dimension `cols`.
    pub fn from_rows(cols: usize, rows: Vec<BitVector>) -> Result<Self> {
        if let Some(bad) = rows.iter().find(|r| r.dim() != cols) {
            return Err(Error::DimensionMismatch {
                expected: cols,
                found: bad.dim(),
            });
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            row_data: rows,
        })
    }

    /// Convenience for tests and examples: `&["110", "011"]`.
    pub fn from_bit_strs(cols: usize, rows: &[&str]) -> Result<Self> {
        let rows = rows
            .iter()
            .map(|s| BitVector::from_bit_str(s))
            .collect::<Result<Vec<_>>>()?;
        Self::from_rows(cols, rows)
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &BitVector {
        &self.row_data[i]
    }

    pub fn row_data(&self) -> &[BitVector] {
        &self.row_data
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.row_data[i].get(j)
    }

    pub fn set(&mut self, i: usize, j: usize, bit: bool) {
        self.row_data[i].set(j, bit);
    }

    /// Evaluates the map at `x`: coordinate `i` of the result is the parity
    /// of `row_i AND x`.
    pub fn mul_vec(&self, x: &BitVector) -> Result<BitVector> {
        if x.dim() != self.cols {
            return Err(Error::DimensionMismatch {
                expected: self.cols,
                found: x.dim(),
            });
        }
        let mut out = BitVector::zeros(self.rows);
        for (i, row) in self.row_data.iter().enumerate() {
            if row.dot(x) {
                out.set(i, true);
            }
        }
        Ok(out)
    }

    /// Column `j` as a vector of dimension `rows`.
    pub fn column(&self, j: usize) -> BitVector {
        let mut out = BitVector::zeros(self.rows);
        for (i, row) in self.row_data.iter().enumerate() {
            if row.get(j) {
                out.set(i, true);
            }
        }
        out
    }

    /// All columns packed one word each; `None` when `rows > 64`.
    pub fn packed_columns(&self) -> Option<Vec<u64>> {
        if self.rows > 64 {
            return None;
        }
        let mut cols = vec![0u64; self.cols];
        for (i, row) in self.row_data.iter().enumerate() {
            for j in row.ones() {
                cols[j] |= 1u64 << i;
            }
        }
        Some(cols)
    }

    /// The submatrix made of the first `k` columns (restriction of the map to
    /// the span of the first `k` standard basis vectors).
    pub fn leading_columns(&self, k: usize) -> Result<Self> {
        if k > self.cols {
            return Err(Error::invalid(format!(
                "cannot take {k} columns of a matrix with {}",
                self.cols
            )));
        }
        let rows = self
            .row_data
            .iter()
            .map(|r| {
                let mut out = BitVector::zeros(k);
                for j in r.ones().take_while(|&j| j < k) {
                    out.set(j, true);
                }
                out
            })
            .collect();
        Self::from_rows(k, rows)
    }

    /// Row-reduces a copy of the matrix. Returns the nonzero rows in reduced
    /// row echelon form together with their pivot columns (each pivot is the
    /// lowest nonzero coordinate of its row; pivots strictly increase).
    pub fn rref(&self) -> (Vec<BitVector>, Vec<usize>) {
        let mut rows = self.row_data.clone();
        let mut pivots = Vec::new();
        let mut r = 0;
        for col in 0..self.cols {
            if r == rows.len() {
                break;
            }
            let Some(p) = (r..rows.len()).find(|&i| rows[i].get(col)) else {
                continue;
            };
            rows.swap(r, p);
            let (head, tail) = rows.split_at_mut(r + 1);
            let (above, pivot) = head.split_at_mut(r);
            let pivot_row = &pivot[0];
            for row in above.iter_mut().chain(tail.iter_mut()) {
                if row.get(col) {
                    row.xor_assign(pivot_row);
                }
            }
            pivots.push(col);
            r += 1;
        }
        rows.truncate(r);
        (rows, pivots)
    }

    /// Row rank over F₂.
    pub fn rank(&self) -> usize {
        let mut rows: Vec<BitVector> = self.row_data.clone();
        let mut rank = 0;
        for col in 0..self.cols {
            let Some(p) = (rank..rows.len()).find(|&i| rows[i].get(col)) else {
                continue;
            };
            rows.swap(rank, p);
            let (head, tail) = rows.split_at_mut(rank + 1);
            for row in tail.iter_mut() {
                if row.get(col) {
                    row.xor_assign(&head[rank]);
                }
            }
            rank += 1;
            if rank == rows.len() {
                break;
            }
        }
        rank
    }

    /// The null space `{x : Mx = 0}` as a subspace of F₂^cols.
    pub fn kernel_basis(&self) -> Subspace {
        let (rref, pivots) = self.rref();
        let mut is_pivot = vec![false; self.cols];
        for &p in &pivots {
            is_pivot[p] = true;
        }
        let mut kernel = Subspace::zero(self.cols);
        for free in (0..self.cols).filter(|&c| !is_pivot[c]) {
            let mut v = BitVector::unit(self.cols, free);
            for (row, &p) in rref.iter().zip(&pivots) {
                if row.get(free) {
                    v.set(p, true);
                }
            }
            kernel.insert(v);
        }
        kernel
    }

    /// Nullity `cols − rank`.
    pub fn nullity(&self) -> usize {
        self.cols - self.rank()
    }
}

impl fmt::Debug for BitMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "BitMatrix {}x{} [", self.rows, self.cols)?;
        for row in &self.row_data {
            writeln!(f, "  {row:?}")?;
        }
        write!(f, "]")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bv(s: &str) -> BitVector {
        BitVector::from_bit_str(s).unwrap()
    }

    /// Scalar-loop oracle: result_i = XOR_j (m_ij AND x_j).
    fn mul_oracle(m: &BitMatrix, x: &BitVector) -> BitVector {
        let mut out = BitVector::zeros(m.rows());
        for i in 0..m.rows() {
            let mut acc = false;
            for j in 0..m.cols() {
                acc ^= m.get(i, j) && x.get(j);
            }
            out.set(i, acc);
        }
        out
    }

    /// Rank oracle by enumerating the row span.
    fn span_rank(m: &BitMatrix) -> usize {
        let mut span = std::collections::HashSet::new();
        for mask in 0u32..(1 << m.rows()) {
            let mut v = BitVector::zeros(m.cols());
            for i in 0..m.rows() {
                if mask >> i & 1 == 1 {
                    v.xor_assign(m.row(i));
                }
            }
            span.insert(v);
        }
        span.len().trailing_zeros() as usize
    }

    #[test]
    fn mat_vec_examples() {
        let id = BitMatrix::identity(3);
        assert_eq!(id.mul_vec(&bv("101")).unwrap(), bv("101"));
        let z = BitMatrix::zeros(2, 3);
        assert_eq!(z.mul_vec(&bv("111")).unwrap(), bv("00"));
        let m = BitMatrix::from_bit_strs(3, &["110", "011"]).unwrap();
        let x = bv("110");
        assert_eq!(m.mul_vec(&x).unwrap(), mul_oracle(&m, &x));
        assert_eq!(m.mul_vec(&x).unwrap(), bv("01"));
    }

    #[test]
    fn mat_vec_rejects_dimension_mismatch() {
        let m = BitMatrix::identity(3);
        assert!(matches!(
            m.mul_vec(&bv("10")),
            Err(Error::DimensionMismatch {
                expected: 3,
                found: 2
            })
        ));
    }

    #[test]
    fn rank_examples() {
        assert_eq!(BitMatrix::identity(3).rank(), 3);
        assert_eq!(BitMatrix::zeros(4, 4).rank(), 0);
        let m = BitMatrix::from_bit_strs(3, &["110", "011", "101"]).unwrap();
        assert_eq!(m.rank(), 2);
        assert_eq!(span_rank(&m), 2);
    }

    #[test]
    fn rank_matches_span_enumeration_up_to_4x4() {
        for rows in 0..=4usize {
            for cols in 0..=4usize {
                for bits in 0u32..(1 << (rows * cols)) {
                    let mut m = BitMatrix::zeros(rows, cols);
                    for i in 0..rows {
                        for j in 0..cols {
                            m.set(i, j, bits >> (i * cols + j) & 1 == 1);
                        }
                    }
                    assert_eq!(m.rank(), span_rank(&m), "{m:?}");
                }
            }
        }
    }

    #[test]
    fn kernel_examples() {
        assert_eq!(BitMatrix::identity(5).kernel_basis().dim(), 0);
        assert_eq!(BitMatrix::zeros(2, 4).kernel_basis().dim(), 4);
        let m = BitMatrix::from_bit_strs(2, &["11"]).unwrap();
        let k = m.kernel_basis();
        assert_eq!(k.dim(), 1);
        // Enumerate all of F₂²: only 00 and 11 map to zero.
        for x in ["00", "01", "10", "11"] {
            let in_kernel = m.mul_vec(&bv(x)).unwrap().is_zero();
            assert_eq!(k.contains(&bv(x)), in_kernel, "{x}");
        }
    }

    #[test]
    fn degenerate_shapes() {
        let m = BitMatrix::zeros(0, 3);
        assert_eq!(m.rank(), 0);
        assert_eq!(m.mul_vec(&bv("101")).unwrap().dim(), 0);
        assert_eq!(m.kernel_basis().dim(), 3);
        let m = BitMatrix::zeros(3, 0);
        assert_eq!(m.rank(), 0);
        assert_eq!(m.mul_vec(&BitVector::zeros(0)).unwrap(), bv("000"));
        assert_eq!(m.kernel_basis().dim(), 0);
    }

    #[test]
    fn packed_columns_agree_with_column() {
        let m = BitMatrix::from_bit_strs(3, &["110", "011"]).unwrap();
        let cols = m.packed_columns().unwrap();
        for (j, &c) in cols.iter().enumerate() {
            assert_eq!(Some(c), m.column(j).as_u64());
        }
    }

    #[test]
    fn leading_columns_restricts() {
        let m = BitMatrix::from_bit_strs(3, &["111", "011"]).unwrap();
        let r = m.leading_columns(2).unwrap();
        assert_eq!(r, BitMatrix::from_bit_strs(2, &["11", "01"]).unwrap());
        assert!(m.leading_columns(4).is_err());
    }
}
