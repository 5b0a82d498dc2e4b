use std::fmt;

use crate::error::{Error, Result};

pub(crate) const WORD_BITS: usize = 64;

#[inline]
pub(crate) fn words_for(dim: usize) -> usize {
    dim.div_ceil(WORD_BITS)
}

/// A vector in F₂^dim, packed little-endian into 64-bit words.
///
/// Coordinate `i` lives in bit `i % 64` of word `i / 64`. Bits at or above
/// `dim` are always zero, so derived equality and hashing are coordinate-wise.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct BitVector {
    dim: usize,
    words: Vec<u64>,
}

impl BitVector {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            words: vec![0; words_for(dim)],
        }
    }

    /// The `i`-th standard basis vector.
    pub fn unit(dim: usize, i: usize) -> Self {
        let mut v = Self::zeros(dim);
        v.set(i, true);
        v
    }

    /// Builds a vector from packed words, rejecting nonzero padding.
    pub fn from_words(dim: usize, words: Vec<u64>) -> Result<Self> {
        if words.len() != words_for(dim) {
            return Err(Error::DimensionMismatch {
                expected: words_for(dim),
                found: words.len(),
            });
        }
        let v = Self { dim, words };
        if v.padding_is_clear() {
            Ok(v)
        } else {
            Err(Error::invalid(format!("bits set beyond dimension {dim}")))
        }
    }

    /// Builds a vector whose coordinate `i` is `bits[i]`.
    pub fn from_bits(bits: &[bool]) -> Self {
        let mut v = Self::zeros(bits.len());
        for (i, &b) in bits.iter().enumerate() {
            if b {
                v.set(i, true);
            }
        }
        v
    }

    /// Parses a 0/1 string, coordinate 0 first: `"101"` is (1,0,1).
    pub fn from_bit_str(s: &str) -> Result<Self> {
        let bits = s
            .chars()
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                other => Err(Error::invalid(format!("not a bit: {other:?}"))),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::from_bits(&bits))
    }

    /// Low `dim` bits of `value`; `dim` must be at most 64.
    pub fn from_u64(dim: usize, value: u64) -> Result<Self> {
        if dim > WORD_BITS {
            return Err(Error::invalid(format!("dimension {dim} exceeds one word")));
        }
        let words = if dim == 0 { vec![] } else { vec![value] };
        Self::from_words(dim, words)
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn words(&self) -> &[u64] {
        &self.words
    }

    /// The vector as a single word, if it fits.
    #[inline]
    pub fn as_u64(&self) -> Option<u64> {
        match self.words.len() {
            0 => Some(0),
            1 => Some(self.words[0]),
            _ => None,
        }
    }

    #[inline]
    pub fn get(&self, i: usize) -> bool {
        assert!(
            i < self.dim,
            "coordinate {i} out of range (dim={})",
            self.dim
        );
        (self.words[i / WORD_BITS] >> (i % WORD_BITS)) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, i: usize, bit: bool) {
        assert!(
            i < self.dim,
            "coordinate {i} out of range (dim={})",
            self.dim
        );
        let mask = 1u64 << (i % WORD_BITS);
        if bit {
            self.words[i / WORD_BITS] |= mask;
        } else {
            self.words[i / WORD_BITS] &= !mask;
        }
    }

    #[inline]
    pub fn flip(&mut self, i: usize) {
        assert!(
            i < self.dim,
            "coordinate {i} out of range (dim={})",
            self.dim
        );
        self.words[i / WORD_BITS] ^= 1u64 << (i % WORD_BITS);
    }

    /// Adds `other` into `self` (coordinate-wise XOR).
    ///
    /// # Panics
    /// Panics if the dimensions differ.
    #[inline]
    pub fn xor_assign(&mut self, other: &Self) {
        assert_eq!(self.dim, other.dim, "dimension mismatch in xor");
        for (a, b) in self.words.iter_mut().zip(&other.words) {
            *a ^= *b;
        }
    }

    pub fn xor(&self, other: &Self) -> Self {
        let mut out = self.clone();
        out.xor_assign(other);
        out
    }

    /// Inner product over F₂: parity of the coordinate-wise AND.
    #[inline]
    pub fn dot(&self, other: &Self) -> bool {
        assert_eq!(self.dim, other.dim, "dimension mismatch in dot");
        let ones: u32 = self
            .words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| (a & b).count_ones())
            .sum();
        ones & 1 == 1
    }

    pub fn is_zero(&self) -> bool {
        self.words.iter().all(|&w| w == 0)
    }

    pub fn count_ones(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    /// Index of the lowest nonzero coordinate.
    pub fn lowest_set_bit(&self) -> Option<usize> {
        self.words
            .iter()
            .enumerate()
            .find(|(_, &w)| w != 0)
            .map(|(i, &w)| i * WORD_BITS + w.trailing_zeros() as usize)
    }

    /// Iterator over the indices of nonzero coordinates, ascending.
    pub fn ones(&self) -> impl Iterator<Item = usize> + '_ {
        self.words.iter().enumerate().flat_map(|(wi, &w)| {
            let mut rest = w;
            std::iter::from_fn(move || {
                if rest == 0 {
                    None
                } else {
                    let b = rest.trailing_zeros() as usize;
                    rest &= rest - 1;
                    Some(wi * WORD_BITS + b)
                }
            })
        })
    }

    /// Appends `extra` zero coordinates.
    pub fn zero_extend(&self, extra: usize) -> Self {
        let mut out = Self::zeros(self.dim + extra);
        out.words[..self.words.len()].copy_from_slice(&self.words);
        out
    }

    pub(crate) fn words_mut(&mut self) -> &mut [u64] {
        &mut self.words
    }

    pub(crate) fn clear_padding(&mut self) {
        let rem = self.dim % WORD_BITS;
        if rem != 0 {
            if let Some(last) = self.words.last_mut() {
                *last &= (1u64 << rem) - 1;
            }
        }
    }

    fn padding_is_clear(&self) -> bool {
        let rem = self.dim % WORD_BITS;
        rem == 0 || self.words.last().is_none_or(|&w| w >> rem == 0)
    }

    /// Lowercase hex with `ceil(dim/4)` digits; the last digit holds
    /// coordinates 0..4, coordinate 0 in its least significant bit.
    pub fn to_hex(&self) -> String {
        let digits = self.dim.div_ceil(4);
        (0..digits)
            .rev()
            .map(|nib| {
                let w = self.words[nib / 16];
                let d = (w >> ((nib % 16) * 4)) & 0xf;
                char::from_digit(d as u32, 16).unwrap()
            })
            .collect()
    }

    pub fn from_hex(dim: usize, s: &str) -> Result<Self> {
        let s = s.trim();
        let digits = dim.div_ceil(4);
        if s.len() != digits {
            return Err(Error::invalid(format!(
                "hex vector of dimension {dim} needs {digits} digits, got {:?}",
                s
            )));
        }
        let mut words = vec![0u64; words_for(dim)];
        for (k, c) in s.chars().enumerate() {
            let d = c
                .to_digit(16)
                .filter(|_| !c.is_ascii_uppercase())
                .ok_or_else(|| Error::invalid(format!("not a lowercase hex digit: {c:?}")))?;
            let nib = digits - 1 - k;
            words[nib / 16] |= (d as u64) << ((nib % 16) * 4);
        }
        Self::from_words(dim, words)
    }
}

impl fmt::Display for BitVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl fmt::Debug for BitVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let bits: String = (0..self.dim)
            .map(|i| if self.get(i) { '1' } else { '0' })
            .collect();
        write!(f, "BitVector({bits})")
    }
}
