use super::vector::BitVector;
use crate::error::{Error, Result};

/// A subspace of F₂^ambient_dim held as a basis in reduced row echelon form.
///
/// Each basis row's pivot is its lowest nonzero coordinate, pivots strictly
/// increase, and a pivot column is nonzero only in its own row. Reducing a
/// vector against the basis therefore yields a unique coset representative.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Subspace {
    ambient_dim: usize,
    basis: Vec<BitVector>,
    pivots: Vec<usize>,
}

impl Subspace {
    /// The zero subspace `{0}`.
    pub fn zero(ambient_dim: usize) -> Self {
        Self {
            ambient_dim,
            basis: Vec::new(),
            pivots: Vec::new(),
        }
    }

    /// The whole ambient space.
    pub fn full(ambient_dim: usize) -> Self {
        Self {
            ambient_dim,
            basis: (0..ambient_dim)
                .map(|i| BitVector::unit(ambient_dim, i))
                .collect(),
            pivots: (0..ambient_dim).collect(),
        }
    }

    /// Span of `vectors`; every vector must live in F₂^ambient_dim.
    pub fn span<'a>(
        ambient_dim: usize,
        vectors: impl IntoIterator<Item = &'a BitVector>,
    ) -> Result<Self> {
        let mut s = Self::zero(ambient_dim);
        for v in vectors {
            s.check_dim(v)?;
            s.insert(v.clone());
        }
        Ok(s)
    }

    #[inline]
    pub fn ambient_dim(&self) -> usize {
        self.ambient_dim
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    /// Codimension `ambient_dim − dim`, the log₂ of the number of cosets.
    #[inline]
    pub fn codim(&self) -> usize {
        self.ambient_dim - self.basis.len()
    }

    pub fn basis(&self) -> &[BitVector] {
        &self.basis
    }

    pub fn pivots(&self) -> &[usize] {
        &self.pivots
    }

    pub fn is_full(&self) -> bool {
        self.dim() == self.ambient_dim
    }

    fn check_dim(&self, x: &BitVector) -> Result<()> {
        if x.dim() == self.ambient_dim {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                expected: self.ambient_dim,
                found: x.dim(),
            })
        }
    }

    fn reduce_in_place(&self, x: &mut BitVector) {
        for (row, &p) in self.basis.iter().zip(&self.pivots) {
            if x.get(p) {
                x.xor_assign(row);
            }
        }
    }

    /// The unique element of `x + V` that is zero on every pivot column.
    pub fn canonical_rep(&self, x: &BitVector) -> Result<BitVector> {
        self.check_dim(x)?;
        let mut out = x.clone();
        self.reduce_in_place(&mut out);
        Ok(out)
    }

    pub fn contains(&self, x: &BitVector) -> bool {
        x.dim() == self.ambient_dim && {
            let mut r = x.clone();
            self.reduce_in_place(&mut r);
            r.is_zero()
        }
    }

    /// Adjoins `v`, keeping the basis in reduced row echelon form. Returns
    /// whether the dimension grew.
    ///
    /// # Panics
    /// Panics if `v` has the wrong dimension.
    pub fn insert(&mut self, mut v: BitVector) -> bool {
        assert_eq!(v.dim(), self.ambient_dim, "dimension mismatch in insert");
        self.reduce_in_place(&mut v);
        let Some(p) = v.lowest_set_bit() else {
            return false;
        };
        // Rows with a 1 at p have pivots below p, so clearing p keeps them in
        // echelon form; v is already zero on every existing pivot.
        for row in &mut self.basis {
            if row.get(p) {
                row.xor_assign(&v);
            }
        }
        let at = self.pivots.partition_point(|&q| q < p);
        self.pivots.insert(at, p);
        self.basis.insert(at, v);
        true
    }

    /// `span(self ∪ {v})` as a new subspace.
    pub fn with(&self, v: &BitVector) -> Result<Self> {
        self.check_dim(v)?;
        let mut out = self.clone();
        out.insert(v.clone());
        Ok(out)
    }

    /// Coordinates that are not pivots, ascending. A canonical representative
    /// is determined by its values on these `codim` coordinates.
    pub fn free_coordinates(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.codim());
        let mut next = self.pivots.iter().peekable();
        for c in 0..self.ambient_dim {
            if next.peek() == Some(&&c) {
                next.next();
            } else {
                out.push(c);
            }
        }
        out
    }

    /// Index in `0..2^codim` of the coset containing `x`: the bits of its
    /// canonical representative on the free coordinates. Requires codim ≤ 64.
    pub fn coset_index(&self, x: &BitVector, free: &[usize]) -> Result<u64> {
        if free.len() > 64 {
            return Err(Error::invalid("coset index needs codimension at most 64"));
        }
        let rep = self.canonical_rep(x)?;
        Ok(free
            .iter()
            .enumerate()
            .fold(0u64, |acc, (k, &c)| acc | (rep.get(c) as u64) << k))
    }

    /// Canonical representative of the coset with the given index
    /// (inverse of [`Subspace::coset_index`]).
    pub fn coset_rep_from_index(&self, index: u64, free: &[usize]) -> BitVector {
        let mut out = BitVector::zeros(self.ambient_dim);
        for (k, &c) in free.iter().enumerate() {
            if index >> k & 1 == 1 {
                out.set(c, true);
            }
        }
        out
    }

    /// All `2^dim` elements. Only sensible for small subspaces.
    pub fn elements(&self) -> Vec<BitVector> {
        let mut out = vec![BitVector::zeros(self.ambient_dim)];
        for b in &self.basis {
            let extra: Vec<_> = out.iter().map(|v| v.xor(b)).collect();
            out.extend(extra);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn bv(s: &str) -> BitVector {
        BitVector::from_bit_str(s).unwrap()
    }

    #[test]
    fn canonical_rep_examples() {
        let zero = Subspace::zero(3);
        assert_eq!(zero.canonical_rep(&bv("101")).unwrap(), bv("101"));

        let line = Subspace::span(3, [&bv("110")]).unwrap();
        assert_eq!(line.pivots(), &[0]);
        assert_eq!(line.canonical_rep(&bv("100")).unwrap(), bv("010"));
        assert_eq!(line.canonical_rep(&bv("010")).unwrap(), bv("010"));

        let full = Subspace::full(3);
        for x in ["000", "101", "111"] {
            assert!(full.canonical_rep(&bv(x)).unwrap().is_zero());
        }
    }

    #[test]
    fn canonical_rep_rejects_dimension_mismatch() {
        let s = Subspace::zero(3);
        assert!(s.canonical_rep(&bv("10")).is_err());
    }

    #[test]
    fn insert_keeps_rref() {
        let mut s = Subspace::zero(4);
        assert!(s.insert(bv("0110")));
        assert!(s.insert(bv("1100")));
        assert!(!s.insert(bv("1010")));
        assert!(s.insert(bv("0001")));
        assert_eq!(s.dim(), 3);
        for (i, (row, &p)) in s.basis().iter().zip(s.pivots()).enumerate() {
            assert_eq!(row.lowest_set_bit(), Some(p));
            for (j, other) in s.basis().iter().enumerate() {
                assert_eq!(other.get(p), i == j);
            }
        }
        assert!(s.pivots().windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn membership_matches_enumeration() {
        let s = Subspace::span(4, [&bv("1100"), &bv("0111")]).unwrap();
        let elems: HashSet<_> = s.elements().into_iter().collect();
        assert_eq!(elems.len(), 4);
        for x in 0u64..16 {
            let v = BitVector::from_u64(4, x).unwrap();
            assert_eq!(s.contains(&v), elems.contains(&v));
        }
    }

    #[test]
    fn coset_index_round_trips() {
        let s = Subspace::span(5, [&bv("11000"), &bv("00101")]).unwrap();
        let free = s.free_coordinates();
        assert_eq!(free.len(), s.codim());
        let mut seen = HashSet::new();
        for x in 0u64..32 {
            let v = BitVector::from_u64(5, x).unwrap();
            let idx = s.coset_index(&v, &free).unwrap();
            assert!(idx < 1 << s.codim());
            assert_eq!(
                s.coset_rep_from_index(idx, &free),
                s.canonical_rep(&v).unwrap()
            );
            seen.insert(idx);
        }
        assert_eq!(seen.len(), 1 << s.codim());
    }
}
