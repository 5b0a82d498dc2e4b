//! The kernel-chain exponential potential.
//!
//! A chain `V₀ ≤ V₁ ≤ ⋯ ≤ V_k` of subspaces of F₂^U reveals the kernel of a
//! random surjective map one dimension at a time. For a key set `S` and a
//! base `b > 1`, stage `i` carries the potential
//!
//! ```text
//! Φ_i = E_{x ∈ F₂^U} [ b^{|(x + V_i) ∩ S|} ]
//! ```
//!
//! which only depends on the loads of the `2^{U−i}` cosets of `V_i`. The
//! cosets of `V_k` are exactly the buckets of the map with kernel `V_k`.
//!
//! Values are kept in the log domain as `ln Φ` and `ln(Φ − 1)`.

use std::collections::HashMap;

use rand::Rng;

use crate::error::{Error, Result};
use crate::gf2::{sample_outside, BitVector, Subspace};
use crate::hashing::KeySet;

/// Smallest accepted base; `b` must exceed `1 + BASE_EPS`.
pub const BASE_EPS: f64 = 1e-12;

/// Relative slack used by the runtime inequality checks.
pub const CHECK_SLACK: f64 = 1e-9;

/// Largest quotient dimension `U − dim V` for exhaustive step enumeration.
pub const EXHAUSTIVE_MAX_CODIM: usize = 20;

/// Past this exponent the direct sum switches to log-sum-exp.
const DIRECT_EXP_LIMIT: f64 = 700.0;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KernelChain {
    ambient_dim: usize,
    stages: Vec<Subspace>,
    adjoined: Vec<BitVector>,
}

impl KernelChain {
    /// The chain obtained by adjoining `adjoined` in order to the zero
    /// subspace. Each vector must lie outside the span of its predecessors.
    pub fn from_adjoined(ambient_dim: usize, adjoined: Vec<BitVector>) -> Result<Self> {
        let mut stages = vec![Subspace::zero(ambient_dim)];
        for (i, w) in adjoined.iter().enumerate() {
            let current = &stages[i];
            if w.dim() != ambient_dim {
                return Err(Error::DimensionMismatch {
                    expected: ambient_dim,
                    found: w.dim(),
                });
            }
            if current.contains(w) {
                return Err(Error::invalid(format!(
                    "adjoined vector {i} ({w}) already lies in stage {i}"
                )));
            }
            let next = current.with(w)?;
            stages.push(next);
        }
        Ok(Self {
            ambient_dim,
            stages,
            adjoined,
        })
    }

    pub fn ambient_dim(&self) -> usize {
        self.ambient_dim
    }

    /// Number of adjoining steps; the last stage has dimension `k`.
    pub fn k(&self) -> usize {
        self.adjoined.len()
    }

    pub fn stages(&self) -> &[Subspace] {
        &self.stages
    }

    pub fn adjoined(&self) -> &[BitVector] {
        &self.adjoined
    }

    pub fn last(&self) -> &Subspace {
        self.stages.last().expect("a chain has at least one stage")
    }
}

/// Samples a chain of length `k` in F₂^U, each step adjoining a uniform
/// vector outside the current stage. The final stage is a uniform
/// `k`-dimensional subspace.
#[allow(non_snake_case)]
pub fn sample_kernel_chain<R: Rng + ?Sized>(
    U: usize,
    k: usize,
    rng: &mut R,
) -> Result<KernelChain> {
    if k > U {
        return Err(Error::invalid(format!(
            "chain length k = {k} exceeds ambient dimension U = {U}"
        )));
    }
    let mut stages = Vec::with_capacity(k + 1);
    let mut adjoined = Vec::with_capacity(k);
    stages.push(Subspace::zero(U));
    for i in 0..k {
        let w = sample_outside(&stages[i], rng)?;
        let next = stages[i].with(&w)?;
        adjoined.push(w);
        stages.push(next);
    }
    Ok(KernelChain {
        ambient_dim: U,
        stages,
        adjoined,
    })
}

/// One evaluation of the potential.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Potential {
    pub log_phi: f64,
    /// `ln(Φ − 1)`; `−∞` when no key is present.
    pub log_phi_minus_one: f64,
}

impl Potential {
    /// `Φ`, possibly `+∞` when it exceeds the float range.
    pub fn phi(&self) -> f64 {
        self.log_phi.exp()
    }

    pub fn phi_minus_one(&self) -> f64 {
        self.log_phi_minus_one.exp()
    }

    fn from_log_minus_one(lpm1: f64) -> Self {
        Self {
            log_phi: ln_one_plus_exp(lpm1),
            log_phi_minus_one: lpm1,
        }
    }
}

/// `ln(1 + e^x)` without overflow.
fn ln_one_plus_exp(x: f64) -> f64 {
    if x == f64::NEG_INFINITY {
        0.0
    } else if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// `ln(b^f − 1)` for `f ≥ 1`.
fn ln_pow_minus_one(f: u64, ln_b: f64) -> f64 {
    let e = f as f64 * ln_b;
    e + (-(-e).exp_m1()).ln()
}

fn check_base(b: f64) -> Result<f64> {
    if b.is_finite() && b > 1.0 + BASE_EPS {
        Ok(b.ln())
    } else {
        Err(Error::invalid(format!("base b must exceed 1, got {b}")))
    }
}

fn check_ambient(s: &KeySet, v: &Subspace) -> Result<()> {
    if s.ambient_dim() == v.ambient_dim() {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            expected: v.ambient_dim(),
            found: s.ambient_dim(),
        })
    }
}

/// Loads of the nonempty cosets of `v`, keyed by canonical representative.
pub fn coset_loads(s: &KeySet, v: &Subspace) -> Result<HashMap<BitVector, u64>> {
    check_ambient(s, v)?;
    let mut loads = HashMap::new();
    for x in s.keys() {
        *loads.entry(v.canonical_rep(x)?).or_insert(0) += 1;
    }
    Ok(loads)
}

/// Nonempty coset loads in ascending order, so float sums over them do not
/// depend on hash-map iteration order.
fn sorted_loads(s: &KeySet, v: &Subspace) -> Result<Vec<u64>> {
    let mut loads: Vec<u64> = coset_loads(s, v)?.into_values().collect();
    loads.sort_unstable();
    Ok(loads)
}

/// Largest coset load of `v` on `s`.
pub fn max_coset_load(s: &KeySet, v: &Subspace) -> Result<u64> {
    Ok(coset_loads(s, v)?.into_values().max().unwrap_or(0))
}

/// `Φ − 1 = 2^{−codim} Σ_C (b^{f(C)} − 1)` over the nonempty cosets.
fn potential_from_loads(
    loads: impl Iterator<Item = u64> + Clone,
    codim: usize,
    ln_b: f64,
) -> Potential {
    let max_f = loads.clone().max().unwrap_or(0);
    if max_f == 0 {
        return Potential::from_log_minus_one(f64::NEG_INFINITY);
    }
    let shift = codim as f64 * std::f64::consts::LN_2;
    if max_f as f64 * ln_b <= DIRECT_EXP_LIMIT && codim < 1000 {
        let sum: f64 = loads.map(|f| (f as f64 * ln_b).exp_m1()).sum();
        Potential::from_log_minus_one(sum.ln() - shift)
    } else {
        Potential::from_log_minus_one(log_sum_pow_minus_one(loads, ln_b) - shift)
    }
}

/// `ln Σ (b^f − 1)` over positive `f`, by log-sum-exp.
fn log_sum_pow_minus_one(loads: impl Iterator<Item = u64> + Clone, ln_b: f64) -> f64 {
    let top = loads
        .clone()
        .filter(|&f| f > 0)
        .map(|f| ln_pow_minus_one(f, ln_b))
        .fold(f64::NEG_INFINITY, f64::max);
    if top == f64::NEG_INFINITY {
        return top;
    }
    let rest: f64 = loads
        .filter(|&f| f > 0)
        .map(|f| (ln_pow_minus_one(f, ln_b) - top).exp())
        .sum();
    top + rest.ln()
}

/// `Φ = E_x[b^{|(x+V)∩S|}]`, computed from the nonempty cosets of `v`.
pub fn potential(s: &KeySet, v: &Subspace, b: f64) -> Result<Potential> {
    let ln_b = check_base(b)?;
    let loads = sorted_loads(s, v)?;
    Ok(potential_from_loads(loads.iter().copied(), v.codim(), ln_b))
}

/// Same as [`potential`] but always through log-sum-exp.
pub fn potential_log_domain(s: &KeySet, v: &Subspace, b: f64) -> Result<Potential> {
    let ln_b = check_base(b)?;
    let loads = sorted_loads(s, v)?;
    let shift = v.codim() as f64 * std::f64::consts::LN_2;
    let lpm1 = log_sum_pow_minus_one(loads.iter().copied(), ln_b) - shift;
    Ok(Potential::from_log_minus_one(lpm1))
}

/// The potentials `Φ₀, …, Φ_k` along one chain.
#[derive(Clone, Debug, PartialEq)]
pub struct PotentialTrace {
    pub base: f64,
    pub log_phi: Vec<f64>,
    pub phi_minus_one: Vec<f64>,
    pub log_phi_minus_one: Vec<f64>,
    pub k: usize,
}

impl PotentialTrace {
    pub fn phi(&self, i: usize) -> f64 {
        self.log_phi[i].exp()
    }
}

pub fn trace_potentials(s: &KeySet, chain: &KernelChain, b: f64) -> Result<PotentialTrace> {
    let k = chain.k();
    let mut trace = PotentialTrace {
        base: b,
        log_phi: Vec::with_capacity(k + 1),
        phi_minus_one: Vec::with_capacity(k + 1),
        log_phi_minus_one: Vec::with_capacity(k + 1),
        k,
    };
    for v in chain.stages() {
        let p = potential(s, v, b)?;
        trace.log_phi.push(p.log_phi);
        trace.phi_minus_one.push(p.phi_minus_one());
        trace.log_phi_minus_one.push(p.log_phi_minus_one);
    }
    Ok(trace)
}

/// Whether `Φ_{i+1} − 1 ≥ 2(Φ_i − 1)` holds at every step, up to a relative
/// slack of `1e−9`. Compared in the log domain.
pub fn verify_growth(trace: &PotentialTrace) -> bool {
    let slack = (-CHECK_SLACK).ln_1p();
    trace
        .log_phi_minus_one
        .windows(2)
        .all(|w| w[0] == f64::NEG_INFINITY || w[1] >= w[0] + std::f64::consts::LN_2 + slack)
}

/// How [`conditional_step_expectation`] averages over the next vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StepMode {
    /// Every `w` outside `V`; needs `U − dim V ≤ 20`.
    Exhaustive,
    /// This many uniform draws outside `V`.
    Sampled(usize),
}

/// Mean of `Φ_{i+1}` over the next adjoined vector, next to `Φ_i²`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepExpectation {
    pub mean_phi_next: f64,
    pub phi_sq: f64,
    /// `ln(mean − 1)`.
    pub log_mean_minus_one: f64,
    /// `ln(Φ_i² − 1)`.
    pub log_phi_sq_minus_one: f64,
}

impl StepExpectation {
    /// `mean ≤ Φ_i²`, tested on the parts above 1 with relative slack `rel`.
    pub fn holds(&self, rel: f64) -> bool {
        self.log_phi_sq_minus_one == f64::NEG_INFINITY
            && self.log_mean_minus_one == f64::NEG_INFINITY
            || self.log_mean_minus_one <= self.log_phi_sq_minus_one + rel.ln_1p()
    }
}

pub fn conditional_step_expectation<R: Rng + ?Sized>(
    s: &KeySet,
    v: &Subspace,
    b: f64,
    mode: StepMode,
    rng: &mut R,
) -> Result<StepExpectation> {
    let ln_b = check_base(b)?;
    check_ambient(s, v)?;
    if v.is_full() {
        return Err(Error::invalid(
            "the current stage is already the whole space",
        ));
    }
    let current = potential(s, v, b)?;
    // Φ² − 1 = (Φ − 1)(Φ + 1).
    let log_phi_sq_minus_one = current.log_phi_minus_one + ln_one_plus_exp(current.log_phi);
    let log_mean_minus_one = match mode {
        StepMode::Exhaustive => exhaustive_log_mean_minus_one(s, v, ln_b)?,
        StepMode::Sampled(trials) => {
            if trials == 0 {
                return Err(Error::invalid("sampled mode needs at least one trial"));
            }
            let values = (0..trials)
                .map(|_| {
                    let w = sample_outside(v, rng)?;
                    Ok(potential(s, &v.with(&w)?, b)?.log_phi_minus_one)
                })
                .collect::<Result<Vec<f64>>>()?;
            log_mean_exp(&values)
        }
    };
    Ok(StepExpectation {
        mean_phi_next: ln_one_plus_exp(log_mean_minus_one).exp(),
        phi_sq: (2.0 * current.log_phi).exp(),
        log_mean_minus_one,
        log_phi_sq_minus_one,
    })
}

fn log_mean_exp(values: &[f64]) -> f64 {
    let top = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if top == f64::NEG_INFINITY {
        return top;
    }
    let sum: f64 = values.iter().map(|&x| (x - top).exp()).sum();
    top + (sum / values.len() as f64).ln()
}

/// Enumerates every nonzero `w` of the quotient `F₂^U / V`. Merging coset
/// `C` with `C + w` gives
/// `Φ(w) − 1 = 2^{−codim} Σ_C (b^{f(C)+f(C+w)} − 1)`, where only cosets
/// touching a key contribute.
fn exhaustive_log_mean_minus_one(s: &KeySet, v: &Subspace, ln_b: f64) -> Result<f64> {
    let codim = v.codim();
    if codim > EXHAUSTIVE_MAX_CODIM {
        return Err(Error::invalid(format!(
            "exhaustive mode needs U - dim V <= {EXHAUSTIVE_MAX_CODIM}, got {codim}"
        )));
    }
    let free = v.free_coordinates();
    let q = 1usize << codim;
    let mut f = vec![0u32; q];
    let mut nonempty = Vec::new();
    for x in s.keys() {
        let c = v.coset_index(x, &free)? as usize;
        if f[c] == 0 {
            nonempty.push(c);
        }
        f[c] += 1;
    }
    if nonempty.is_empty() {
        return Ok(f64::NEG_INFINITY);
    }
    let max_f = nonempty.iter().map(|&c| f[c]).max().unwrap_or(0) as usize;
    // Terms are b^j − 1 for j ≤ 2·max_f, scaled by e^{−shift} to stay finite.
    let shift = (2.0 * max_f as f64 * ln_b - DIRECT_EXP_LIMIT).max(0.0);
    let pow_m1: Vec<f64> = (0..=2 * max_f)
        .map(|j| (j as f64 * ln_b - shift).exp() - (-shift).exp())
        .collect();
    let mut total = 0.0f64;
    for w in 1..q {
        let mut acc = 0.0f64;
        for &c in &nonempty {
            let fc = f[c] as usize;
            let fw = f[c ^ w] as usize;
            acc += if fw == 0 {
                2.0 * pow_m1[fc]
            } else {
                pow_m1[fc + fw]
            };
        }
        total += acc;
    }
    let ln2 = std::f64::consts::LN_2;
    Ok(total.ln() + shift - codim as f64 * ln2 - ((q - 1) as f64).ln())
}

/// Whether `Φ_k ≥ b^T / 2^ℓ` for the heaviest final coset load `T`, up to
/// a relative slack of `1e−9`.
pub fn heavy_bin_check(s: &KeySet, chain: &KernelChain, b: f64, ell: usize) -> Result<bool> {
    let ln_b = check_base(b)?;
    if chain.k() + ell != chain.ambient_dim() {
        return Err(Error::invalid(format!(
            "heavy-bin check needs k = U - ell, got k = {}, U = {}, ell = {ell}",
            chain.k(),
            chain.ambient_dim()
        )));
    }
    let last = chain.last();
    let t = max_coset_load(s, last)?;
    let phi = potential(s, last, b)?;
    let rhs = t as f64 * ln_b - ell as f64 * std::f64::consts::LN_2;
    Ok(phi.log_phi >= rhs + (-CHECK_SLACK).ln_1p())
}

/// Whether every stage-(i+1) coset load equals the sum of the two stage-i
/// coset loads it merges, checked by explicit coset bookkeeping.
pub fn verify_merge_identity(s: &KeySet, v: &Subspace, w: &BitVector) -> Result<bool> {
    let next = v.with(w)?;
    let before = coset_loads(s, v)?;
    let after = coset_loads(s, &next)?;
    for (c, &load) in &before {
        let partner = v.canonical_rep(&c.xor(w))?;
        let merged = next.canonical_rep(c)?;
        let expected = load + before.get(&partner).copied().unwrap_or(0);
        if after.get(&merged).copied().unwrap_or(0) != expected {
            return Ok(false);
        }
    }
    Ok(after.values().sum::<u64>() == s.len() as u64)
}

/// Parameters of the quadratic tail replay: base `b = e·ℓ^{1/R}`,
/// `A = R/ln ℓ` and `τ − 1 = (ln 2)·A·ℓ / 2^k`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TauRecipe {
    pub base: f64,
    pub a: f64,
    pub tau_minus_one: f64,
}

pub fn tau_recipe(ell: usize, r: f64, k: usize) -> Result<TauRecipe> {
    let base = crate::theory::optimized_base(ell as f64, r)?;
    let a = r / (ell as f64).ln();
    let tau_minus_one = std::f64::consts::LN_2 * a * ell as f64 * (-(k as f64)).exp2();
    Ok(TauRecipe {
        base,
        a,
        tau_minus_one,
    })
}

/// Outcome of [`quadratic_tail_check`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuadraticTail {
    pub successes: usize,
    pub trials: usize,
    pub empirical: f64,
    pub bound: f64,
}

/// Fraction of traces with `Φ_k ≥ τ^{2^k}` against the bound
/// `min(1, 48((Φ₀ − 1)/(τ − 1))²)`, which requires `τ ≥ 1 + 4(Φ₀ − 1)`.
/// `τ` is passed as `τ − 1` to keep precision when it is close to 1.
pub fn quadratic_tail_check(
    traces: &[PotentialTrace],
    tau_minus_one: f64,
) -> Result<QuadraticTail> {
    let first = traces
        .first()
        .ok_or_else(|| Error::invalid("quadratic tail check needs at least one trace"))?;
    let k = first.k;
    let x0_minus_one = first.phi_minus_one[0];
    for t in traces {
        let same_start = (t.phi_minus_one[0] - x0_minus_one).abs() <= 1e-12 * x0_minus_one.abs();
        if t.k != k || !same_start {
            return Err(Error::invalid("traces must share the chain length and Φ₀"));
        }
    }
    if !(tau_minus_one >= 4.0 * x0_minus_one * (1.0 - 1e-12)) || !(tau_minus_one > 0.0) {
        return Err(Error::invalid(format!(
            "tau - 1 = {tau_minus_one} is below 4(Φ₀ - 1) = {}",
            4.0 * x0_minus_one
        )));
    }
    let threshold = (k as f64).exp2() * tau_minus_one.ln_1p();
    let successes = traces.iter().filter(|t| t.log_phi[k] >= threshold).count();
    let ratio = x0_minus_one / tau_minus_one;
    Ok(QuadraticTail {
        successes,
        trials: traces.len(),
        empirical: successes as f64 / traces.len() as f64,
        bound: (48.0 * ratio * ratio).min(1.0),
    })
}
