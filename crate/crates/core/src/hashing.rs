//! Key sets and bucket loads.
//!
//! For a linear map h and key set S, the load of bucket y is
//! `|h⁻¹(y) ∩ S|` and the maximum load is the largest such count.

use std::collections::{HashMap, HashSet};
use std::path::PathBuf;

use rand::Rng;

use crate::error::{Error, Result};
use crate::gf2::{sample_uniform_vector, BitMatrix, BitVector};

/// An ordered set of distinct keys in F₂^u.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KeySet {
    ambient_dim: usize,
    keys: Vec<BitVector>,
    allow_zero: bool,
}

/// How a campaign obtains its keys.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum KeyKind {
    /// `m` distinct uniform nonzero vectors of F₂^u.
    RandomDistinctNonzero { u: usize, m: usize },
    /// `(W ∖ {0}) ∪ {v}` with `W = F₂^d × {0}`, `v = e_d` and `m = 2^d`.
    SubspacePlusOne { u: usize, m: usize },
    /// Read from a key-set file.
    FromFile(PathBuf),
}

impl KeySet {
    /// Validates and wraps `keys`: all of dimension `ambient_dim`, pairwise
    /// distinct, and nonzero unless `allow_zero`.
    pub fn new(ambient_dim: usize, keys: Vec<BitVector>, allow_zero: bool) -> Result<Self> {
        let mut seen = HashSet::with_capacity(keys.len());
        for (i, k) in keys.iter().enumerate() {
            if k.dim() != ambient_dim {
                return Err(Error::DimensionMismatch {
                    expected: ambient_dim,
                    found: k.dim(),
                });
            }
            if !allow_zero && k.is_zero() {
                return Err(Error::invalid(format!("key {i} is the zero vector")));
            }
            if !seen.insert(k) {
                return Err(Error::invalid(format!("key {i} ({k}) is a duplicate")));
            }
        }
        Ok(Self {
            ambient_dim,
            keys,
            allow_zero,
        })
    }

    pub fn build<R: Rng + ?Sized>(kind: &KeyKind, rng: &mut R) -> Result<Self> {
        match kind {
            KeyKind::RandomDistinctNonzero { u, m } => Self::random_distinct_nonzero(*u, *m, rng),
            KeyKind::SubspacePlusOne { u, m } => Self::subspace_plus_one(*u, *m),
            KeyKind::FromFile(path) => crate::io::read_key_set(path),
        }
    }

    /// `m` distinct nonzero vectors drawn uniformly from F₂^u.
    pub fn random_distinct_nonzero<R: Rng + ?Sized>(
        u: usize,
        m: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let nonzero = if u >= 64 { u64::MAX } else { (1u64 << u) - 1 };
        if m as u64 > nonzero {
            return Err(Error::invalid(format!(
                "cannot pick {m} distinct nonzero vectors from F2^{u}"
            )));
        }
        let keys = if u <= 24 && 2 * m as u64 > nonzero {
            // Dense: partial Fisher-Yates over all nonzero vectors.
            let mut pool: Vec<u64> = (1..=nonzero).collect();
            for i in 0..m {
                let j = rng.random_range(i..pool.len());
                pool.swap(i, j);
            }
            pool[..m]
                .iter()
                .map(|&x| BitVector::from_u64(u, x).expect("fits"))
                .collect()
        } else {
            let mut seen = HashSet::with_capacity(m);
            let mut keys = Vec::with_capacity(m);
            while keys.len() < m {
                let x = sample_uniform_vector(u, rng);
                if !x.is_zero() && seen.insert(x.clone()) {
                    keys.push(x);
                }
            }
            keys
        };
        Self::new(u, keys, false)
    }

    /// The sharpness construction: all nonzero vectors of the subspace
    /// spanned by the first `d` coordinates, followed by `e_d`.
    pub fn subspace_plus_one(u: usize, m: usize) -> Result<Self> {
        if !m.is_power_of_two() {
            return Err(Error::invalid(format!(
                "subspace_plus_one needs m = 2^d, got m = {m}"
            )));
        }
        let d = m.trailing_zeros() as usize;
        if u < d + 1 {
            return Err(Error::invalid(format!(
                "subspace_plus_one with d = {d} needs u >= {}, got u = {u}",
                d + 1
            )));
        }
        let mut keys = Vec::with_capacity(m);
        for x in 1..(1usize << d) {
            let mut v = BitVector::zeros(u);
            for j in 0..d {
                if x >> j & 1 == 1 {
                    v.set(j, true);
                }
            }
            keys.push(v);
        }
        keys.push(BitVector::unit(u, d));
        Self::new(u, keys, false)
    }

    #[inline]
    pub fn ambient_dim(&self) -> usize {
        self.ambient_dim
    }

    pub fn keys(&self) -> &[BitVector] {
        &self.keys
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn allow_zero(&self) -> bool {
        self.allow_zero
    }

    /// Keys as single words, when `u ≤ 64`.
    pub fn packed(&self) -> Option<Vec<u64>> {
        self.keys.iter().map(BitVector::as_u64).collect()
    }

    /// The same keys embedded in F₂^(u+extra) by appending zero coordinates.
    pub fn zero_extend(&self, extra: usize) -> Self {
        Self {
            ambient_dim: self.ambient_dim + extra,
            keys: self.keys.iter().map(|k| k.zero_extend(extra)).collect(),
            allow_zero: self.allow_zero,
        }
    }
}

/// Bucket label → load, for the nonempty buckets of one hash map.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LoadHistogram {
    bucket_dim: usize,
    loads: HashMap<BitVector, usize>,
    total_keys: usize,
    max_load: usize,
}

impl LoadHistogram {
    pub fn bucket_dim(&self) -> usize {
        self.bucket_dim
    }

    pub fn loads(&self) -> &HashMap<BitVector, usize> {
        &self.loads
    }

    pub fn load(&self, y: &BitVector) -> usize {
        self.loads.get(y).copied().unwrap_or(0)
    }

    pub fn total_keys(&self) -> usize {
        self.total_keys
    }

    pub fn max_load(&self) -> usize {
        self.max_load
    }

    pub fn nonempty_buckets(&self) -> usize {
        self.loads.len()
    }

    /// `(label_hex, load)` by descending load, then ascending label.
    pub fn sorted_rows(&self) -> Vec<(String, usize)> {
        let mut rows: Vec<_> = self.loads.iter().map(|(y, &c)| (y.to_hex(), c)).collect();
        rows.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        rows
    }
}

fn check_cols(h: &BitMatrix, s: &KeySet) -> Result<()> {
    if h.cols() == s.ambient_dim() {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            expected: h.cols(),
            found: s.ambient_dim(),
        })
    }
}

/// Loads of every nonempty bucket of `h` on `s`.
pub fn bucket_loads(h: &BitMatrix, s: &KeySet) -> Result<LoadHistogram> {
    check_cols(h, s)?;
    let mut loads: HashMap<BitVector, usize> = HashMap::new();
    for x in s.keys() {
        *loads.entry(h.mul_vec(x)?).or_default() += 1;
    }
    let max_load = loads.values().copied().max().unwrap_or(0);
    Ok(LoadHistogram {
        bucket_dim: h.rows(),
        loads,
        total_keys: s.len(),
        max_load,
    })
}

/// Number of keys `x` with `h(x) = y`.
pub fn fixed_bucket_load(h: &BitMatrix, s: &KeySet, y: &BitVector) -> Result<usize> {
    check_cols(h, s)?;
    if y.dim() != h.rows() {
        return Err(Error::DimensionMismatch {
            expected: h.rows(),
            found: y.dim(),
        });
    }
    let mut count = 0;
    for x in s.keys() {
        if &h.mul_vec(x)? == y {
            count += 1;
        }
    }
    Ok(count)
}

/// Byte-sliced evaluation of a map with at most 64 input and output
/// coordinates: `h(x)` is the XOR of one table entry per input byte.
#[derive(Clone, Debug)]
pub struct PackedHasher {
    tables: Vec<[u64; 256]>,
    out_dim: usize,
}

impl PackedHasher {
    /// `None` unless `h` has at most 64 rows and 64 columns.
    pub fn new(h: &BitMatrix) -> Option<Self> {
        if h.cols() > 64 {
            return None;
        }
        let cols = h.packed_columns()?;
        let tables = cols
            .chunks(8)
            .map(|chunk| {
                let mut t = [0u64; 256];
                for byte in 1..256usize {
                    let low = byte.trailing_zeros() as usize;
                    t[byte] = t[byte & (byte - 1)] ^ chunk.get(low).copied().unwrap_or(0);
                }
                t
            })
            .collect();
        Some(Self {
            tables,
            out_dim: h.rows(),
        })
    }

    #[inline]
    pub fn hash(&self, x: u64) -> u64 {
        let mut acc = 0;
        for (i, t) in self.tables.iter().enumerate() {
            acc ^= t[(x >> (8 * i)) as usize & 0xff];
        }
        acc
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }
}

/// Reusable load counter for packed keys.
///
/// Uses a dense array for up to 2^24 buckets and a hash map beyond that.
#[derive(Debug, Default)]
pub struct LoadCounter {
    dense: Vec<u32>,
    touched: Vec<u64>,
    sparse: HashMap<u64, usize>,
}

const DENSE_LIMIT: usize = 24;

impl LoadCounter {
    pub fn new() -> Self {
        Self::default()
    }

    /// Maximum bucket load of `keys` under `hasher`.
    pub fn max_load(&mut self, hasher: &PackedHasher, keys: &[u64]) -> usize {
        if hasher.out_dim() <= DENSE_LIMIT {
            let size = 1usize << hasher.out_dim();
            if self.dense.len() < size {
                self.dense.resize(size, 0);
            }
            let mut best = 0;
            for &x in keys {
                let y = hasher.hash(x);
                let c = &mut self.dense[y as usize];
                if *c == 0 {
                    self.touched.push(y);
                }
                *c += 1;
                best = best.max(*c as usize);
            }
            for y in self.touched.drain(..) {
                self.dense[y as usize] = 0;
            }
            best
        } else {
            self.sparse.clear();
            let mut best = 0;
            for &x in keys {
                let c = self.sparse.entry(hasher.hash(x)).or_default();
                *c += 1;
                best = best.max(*c);
            }
            best
        }
    }
}

/// Load of bucket `y` for packed keys.
pub fn packed_bucket_load(hasher: &PackedHasher, keys: &[u64], y: u64) -> usize {
    keys.iter().filter(|&&x| hasher.hash(x) == y).count()
}
