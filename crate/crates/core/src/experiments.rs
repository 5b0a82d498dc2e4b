//! Seeded Monte Carlo campaigns.
//!
//! Trial `i` draws all of its randomness from stream `i` of the master seed
//! and contributes an integer to the aggregate, so a campaign's result is a
//! function of its [`ExperimentSpec`] alone, whatever the worker count.

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::gf2::{
    sample_surjective_matrix, sample_uniform_matrix, sample_uniform_vector, BitMatrix, BitVector,
    Subspace,
};
use crate::hashing::{
    bucket_loads, fixed_bucket_load, packed_bucket_load, KeyKind, KeySet, LoadCounter, PackedHasher,
};
use crate::potential::{
    conditional_step_expectation, heavy_bin_check, quadratic_tail_check, sample_kernel_chain,
    tau_recipe, trace_potentials, verify_growth, verify_merge_identity, PotentialTrace,
    QuadraticTail, StepMode,
};
use crate::rng::{stream, SETUP_STREAM};
use crate::theory;

/// Default Wilson `z`, roughly three standard deviations.
pub const DEFAULT_Z: f64 = 3.0;

/// Stream used to pick the buckets of a bucket sweep.
const BUCKET_STREAM: u64 = SETUP_STREAM - 1;

/// A load threshold: an integer `r` (event `Z > r`) or a real `T`
/// (event `M ≥ T`).
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Threshold {
    Count(u64),
    Real(f64),
}

impl Threshold {
    pub fn as_f64(self) -> f64 {
        match self {
            Threshold::Count(r) => r as f64,
            Threshold::Real(t) => t,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentSpec {
    pub name: String,
    pub u: usize,
    pub ell: usize,
    pub m: usize,
    pub key_kind: KeyKind,
    pub threshold: Threshold,
    pub trials: u64,
    pub master_seed: u64,
    pub surjective_only: bool,
    /// Fixed bucket `y`; zero when absent.
    pub bucket: Option<BitVector>,
    pub z: f64,
    /// Worker threads; 0 picks the available parallelism.
    pub threads: usize,
}

impl ExperimentSpec {
    /// A spec with random distinct nonzero keys, uniform maps, bucket 0
    /// and `z = 3`.
    pub fn new(
        name: impl Into<String>,
        u: usize,
        ell: usize,
        m: usize,
        threshold: Threshold,
    ) -> Self {
        Self {
            name: name.into(),
            u,
            ell,
            m,
            key_kind: KeyKind::RandomDistinctNonzero { u, m },
            threshold,
            trials: 1000,
            master_seed: 0,
            surjective_only: false,
            bucket: None,
            z: DEFAULT_Z,
            threads: 0,
        }
    }

    pub fn trials(mut self, trials: u64) -> Self {
        self.trials = trials;
        self
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.master_seed = seed;
        self
    }

    pub fn threads(mut self, threads: usize) -> Self {
        self.threads = threads;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::invalid("trials must be at least 1"));
        }
        if self.m == 0 {
            return Err(Error::invalid("m must be at least 1"));
        }
        if self.surjective_only && self.u < self.ell {
            return Err(Error::invalid(format!(
                "surjective maps need u >= ell, got u = {}, ell = {}",
                self.u, self.ell
            )));
        }
        if !(self.z > 0.0) {
            return Err(Error::invalid("z must be positive"));
        }
        if let Some(y) = &self.bucket {
            if y.dim() != self.ell {
                return Err(Error::DimensionMismatch {
                    expected: self.ell,
                    found: y.dim(),
                });
            }
        }
        Ok(())
    }

    fn lambda(&self) -> f64 {
        self.m as f64 * (-(self.ell as f64)).exp2()
    }
}

/// One row of the results table.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TailEstimate {
    pub name: String,
    pub u: usize,
    pub ell: usize,
    pub m: usize,
    pub threshold: Threshold,
    pub trials: u64,
    pub successes: u64,
    pub p_hat: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub theory_bound: Option<f64>,
    pub admissible: Option<bool>,
    pub seed: u64,
    #[serde(skip)]
    pub z: f64,
}

impl TailEstimate {
    #[allow(clippy::too_many_arguments)]
    fn from_counts(
        name: String,
        (u, ell, m): (usize, usize, usize),
        threshold: Threshold,
        successes: u64,
        trials: u64,
        z: f64,
        theory_bound: Option<f64>,
        admissible: Option<bool>,
        seed: u64,
    ) -> Self {
        let (ci_low, ci_high) = wilson_interval(successes, trials, z);
        Self {
            name,
            u,
            ell,
            m,
            threshold,
            trials,
            successes,
            p_hat: successes as f64 / trials as f64,
            ci_low,
            ci_high,
            theory_bound,
            admissible,
            seed,
            z,
        }
    }

    /// Standard error of `p_hat`.
    pub fn sigma(&self) -> f64 {
        (self.p_hat * (1.0 - self.p_hat) / self.trials as f64).sqrt()
    }

    /// True when an admissible bound sits below the whole interval.
    pub fn falsified(&self) -> bool {
        matches!((self.theory_bound, self.admissible), (Some(b), Some(true)) if self.ci_low > b)
    }

    fn warn_if_rare(&self) {
        if let Some(b) = self.theory_bound {
            if b < 10.0 / self.trials as f64 {
                log::warn!(
                    "{}: bound {b:.3e} is below 10/trials; the estimate is uninformative at {} trials",
                    self.name,
                    self.trials
                );
            }
        }
        if self.falsified() {
            log::error!(
                "{}: ci_low {} exceeds the admissible bound {:?}",
                self.name,
                self.ci_low,
                self.theory_bound
            );
        }
    }
}

/// Wilson score interval for `successes` out of `trials` at level `z`.
pub fn wilson_interval(successes: u64, trials: u64, z: f64) -> (f64, f64) {
    assert!(trials >= 1 && successes <= trials && z > 0.0);
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = z / denom * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    let low = if successes == 0 {
        0.0
    } else {
        (center - half).clamp(0.0, p)
    };
    let high = if successes == trials {
        1.0
    } else {
        (center + half).clamp(p, 1.0)
    };
    (low, high)
}

fn pool(threads: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::invalid(format!("cannot start worker pool: {e}")))
}

/// `Σ_i trial(i)` over `0..trials`, each trial on its own stream.
fn sum_trials<T, F>(threads: usize, trials: u64, trial: F) -> Result<T>
where
    T: Send + std::iter::Sum<T>,
    F: Fn(u64) -> Result<T> + Sync,
{
    pool(threads)?.install(|| (0..trials).into_par_iter().map(&trial).sum::<Result<T>>())
}

fn sample_map<R: Rng + ?Sized>(
    rows: usize,
    cols: usize,
    surjective: bool,
    rng: &mut R,
) -> Result<BitMatrix> {
    if surjective {
        sample_surjective_matrix(rows, cols, rng)
    } else {
        Ok(sample_uniform_matrix(rows, cols, rng))
    }
}

/// Keys in packed form together with a fast load evaluator, when both the
/// key and bucket dimensions fit one word.
fn packed_keys(s: &KeySet, ell: usize) -> Option<Vec<u64>> {
    if ell <= 64 {
        s.packed()
    } else {
        None
    }
}

/// Estimates `Pr[Z_y > r]` for the fixed bucket `y`.
pub fn mc_fixed_bucket_tail(spec: &ExperimentSpec) -> Result<TailEstimate> {
    spec.validate()?;
    let Threshold::Count(r) = spec.threshold else {
        return Err(Error::invalid(
            "the fixed-bucket tail needs an integer threshold r",
        ));
    };
    let keys = KeySet::build(&spec.key_kind, &mut stream(spec.master_seed, SETUP_STREAM))?;
    if keys.ambient_dim() != spec.u || keys.len() != spec.m {
        return Err(Error::invalid(format!(
            "key set has u = {}, m = {}; the experiment asks for u = {}, m = {}",
            keys.ambient_dim(),
            keys.len(),
            spec.u,
            spec.m
        )));
    }
    let y = spec
        .bucket
        .clone()
        .unwrap_or_else(|| BitVector::zeros(spec.ell));
    let packed = packed_keys(&keys, spec.ell);
    let y_word = y.as_u64();
    let successes = sum_trials(spec.threads, spec.trials, |i| {
        let mut rng = stream(spec.master_seed, i);
        let h = sample_map(spec.ell, spec.u, spec.surjective_only, &mut rng)?;
        let load = match (&packed, y_word, PackedHasher::new(&h)) {
            (Some(p), Some(yw), Some(hasher)) => packed_bucket_load(&hasher, p, yw),
            _ => fixed_bucket_load(&h, &keys, &y)?,
        };
        Ok(u64::from(load as u64 > r))
    })?;
    let bound = theory::fixed_bucket_tail_bound(r, spec.lambda())?;
    let est = TailEstimate::from_counts(
        spec.name.clone(),
        (spec.u, spec.ell, spec.m),
        spec.threshold,
        successes,
        spec.trials,
        spec.z,
        Some(bound),
        Some(!spec.surjective_only),
        spec.master_seed,
    );
    est.warn_if_rare();
    Ok(est)
}

/// Runs [`mc_fixed_bucket_tail`] on `count` buckets drawn uniformly from
/// F₂^ℓ with a dedicated setup stream.
pub fn mc_fixed_bucket_sweep(spec: &ExperimentSpec, count: usize) -> Result<Vec<TailEstimate>> {
    let mut rng = stream(spec.master_seed, BUCKET_STREAM);
    (0..count)
        .map(|_| {
            let y = sample_uniform_vector(spec.ell, &mut rng);
            let mut s = spec.clone();
            s.name = format!("{}[y={}]", spec.name, y.to_hex());
            s.bucket = Some(y);
            mc_fixed_bucket_tail(&s)
        })
        .collect()
}

/// Result of the subspace sharpness campaign.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Sharpness {
    pub estimate: TailEstimate,
    /// Exact `Pr[Z₀ > 2^a − 2]` from the rank distribution.
    pub exact: f64,
    /// `γ² λ^a 2^{−a²}`.
    pub lower: f64,
    /// `γ^{−1} λ^a 2^{−a²}`.
    pub upper: f64,
}

impl Sharpness {
    /// `|p_hat − exact| ≤ z σ` with `σ` from the exact value.
    pub fn matches_exact(&self, z: f64) -> bool {
        let n = self.estimate.trials as f64;
        let sigma = (self.exact * (1.0 - self.exact) / n).sqrt();
        (self.estimate.p_hat - self.exact).abs() <= z * sigma.max(1.0 / n)
    }

    /// `lower − zσ ≤ p_hat ≤ upper + zσ`.
    pub fn within_sandwich(&self, z: f64) -> bool {
        let slack = z * self.estimate.sigma();
        self.estimate.p_hat >= self.lower - slack && self.estimate.p_hat <= self.upper + slack
    }
}

/// Exact probability that the zero bucket of the subspace-plus-one key set
/// with `m = 2^d` keys holds more than `2^a − 2` keys under a uniform
/// `ell × (d+1)` map. With `W` the span of the first `d` coordinates, the
/// zero bucket holds `2^{nullity(h|_W)} − 1` keys of `W` plus `e_d` when
/// `h(e_d) = 0`, an independent event of probability `2^{−ℓ}`.
pub fn sharpness_exact(d: u32, ell: u32, a: u32) -> Result<f64> {
    let min_a = d.saturating_sub(ell);
    let tail = |from: u32| -> Result<f64> {
        (from.max(min_a)..=d)
            .map(|k| theory::rect_rank_pmf(ell, d, k))
            .sum()
    };
    if a > d + 1 {
        return Ok(0.0);
    }
    // 2^nul − 1 + δ > 2^a − 2 ⇔ nul ≥ a, or nul = a − 1 = 0 with δ = 1.
    let mut p = if a <= d { tail(a)? } else { 0.0 };
    if a == 1 && min_a == 0 {
        p += theory::rect_rank_pmf(ell, d, 0)? * (-(ell as f64)).exp2();
    }
    Ok(p)
}

pub fn subspace_sharpness_experiment(
    d: usize,
    ell: usize,
    a: u32,
    trials: u64,
    seed: u64,
    threads: usize,
) -> Result<Sharpness> {
    if d == 0 || ell == 0 {
        return Err(Error::invalid("d and ell must be positive"));
    }
    if (a as usize) < d.saturating_sub(ell).max(1) {
        return Err(Error::invalid(format!(
            "a must be at least max(1, d - ell) = {}",
            d.saturating_sub(ell).max(1)
        )));
    }
    if a >= 64 {
        return Err(Error::invalid("a must be below 64"));
    }
    let (u, m) = (d + 1, 1usize << d);
    let mut spec = ExperimentSpec::new(
        format!("sharpness_d{d}_a{a}"),
        u,
        ell,
        m,
        Threshold::Count((1u64 << a) - 2),
    )
    .trials(trials)
    .seed(seed)
    .threads(threads);
    spec.key_kind = KeyKind::SubspacePlusOne { u, m };
    let mut estimate = mc_fixed_bucket_tail(&spec)?;

    let lambda = spec.lambda();
    let g = theory::gamma();
    let base = (a as f64 * lambda.ln() - (a as f64).powi(2) * std::f64::consts::LN_2).exp();
    let upper = base / g;
    estimate.theory_bound = Some(upper.min(1.0));
    estimate.admissible = Some(true);
    Ok(Sharpness {
        exact: sharpness_exact(d as u32, ell as u32, a)?,
        lower: g * g * base,
        upper,
        estimate,
    })
}

/// Result of a maximum-load campaign.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MaxLoad {
    pub tail: TailEstimate,
    pub mean_load: f64,
    pub mean_ci: (f64, f64),
    /// `mean_load / (ℓ / log ℓ)`.
    pub mean_ratio: f64,
}

#[derive(Default)]
struct LoadSums {
    hits: u64,
    sum: u64,
    sum_sq: u128,
}

impl std::iter::Sum for LoadSums {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(Self::default(), |acc, x| Self {
            hits: acc.hits + x.hits,
            sum: acc.sum + x.sum,
            sum_sq: acc.sum_sq + x.sum_sq,
        })
    }
}

/// The bound attached to a maximum-load tail: the balanced theorem when
/// `m = 2^ℓ` and `R = T log ℓ / ℓ > 1`, otherwise the general one.
pub fn max_load_bound(ell: usize, m: usize, t: f64) -> Result<Option<theory::TailBound>> {
    if ell < 2 {
        return Ok(None);
    }
    let scale = ell as f64 / (ell as f64).log2();
    let r = t / scale;
    if ell < 64 && m == 1usize << ell {
        if ell >= 4 && r > 1.0 {
            return theory::maxload_tail_bound(ell as u64, r).map(Some);
        }
        return Ok(None);
    }
    let lambda = m as f64 * (-(ell as f64)).exp2();
    theory::general_tail_bound(ell as u64, lambda, t).map(Some)
}

/// Estimates `Pr[M(S,h) ≥ T]` and the mean maximum load.
pub fn mc_max_load(spec: &ExperimentSpec) -> Result<MaxLoad> {
    spec.validate()?;
    let Threshold::Real(t) = spec.threshold else {
        return Err(Error::invalid(
            "the maximum-load tail needs a real threshold T",
        ));
    };
    let keys = KeySet::build(&spec.key_kind, &mut stream(spec.master_seed, SETUP_STREAM))?;
    let packed = packed_keys(&keys, spec.ell);
    let sums: LoadSums = pool(spec.threads)?.install(|| {
        (0..spec.trials)
            .into_par_iter()
            .map_init(LoadCounter::new, |counter, i| {
                let mut rng = stream(spec.master_seed, i);
                let h = sample_map(spec.ell, spec.u, spec.surjective_only, &mut rng)?;
                let load = match (&packed, PackedHasher::new(&h)) {
                    (Some(p), Some(hasher)) => counter.max_load(&hasher, p),
                    _ => bucket_loads(&h, &keys)?.max_load(),
                } as u64;
                Ok(LoadSums {
                    hits: u64::from(load as f64 >= t),
                    sum: load,
                    sum_sq: u128::from(load) * u128::from(load),
                })
            })
            .sum::<Result<LoadSums>>()
    })?;
    let bound = max_load_bound(spec.ell, spec.m, t)?;
    let tail = TailEstimate::from_counts(
        spec.name.clone(),
        (spec.u, spec.ell, spec.m),
        spec.threshold,
        sums.hits,
        spec.trials,
        spec.z,
        bound.map(|b| b.value),
        bound.map(|b| b.admissible && !spec.surjective_only),
        spec.master_seed,
    );
    tail.warn_if_rare();
    let n = spec.trials as f64;
    let mean = sums.sum as f64 / n;
    let var = if spec.trials > 1 {
        ((sums.sum_sq as f64 - n * mean * mean) / (n - 1.0)).max(0.0)
    } else {
        0.0
    };
    let half = spec.z * (var / n).sqrt();
    let scale = if spec.ell >= 2 {
        spec.ell as f64 / (spec.ell as f64).log2()
    } else {
        f64::NAN
    };
    Ok(MaxLoad {
        tail,
        mean_load: mean,
        mean_ci: (mean - half, mean + half),
        mean_ratio: mean / scale,
    })
}

/// Brute-force count of ordered linearly independent `a`-tuples of `set`.
pub fn count_independent_tuples(set: &KeySet, a: u32) -> Result<u64> {
    let q = set.len() as f64;
    if q.powi(a as i32) > 1e7 {
        return Err(Error::invalid(format!(
            "brute force over q^a = {}^{a} tuples exceeds 1e7",
            set.len()
        )));
    }
    fn extend(keys: &[BitVector], span: &Subspace, depth: u32) -> u64 {
        if depth == 0 {
            return 1;
        }
        keys.iter()
            .filter(|x| !span.contains(x))
            .map(|x| {
                let mut next = span.clone();
                next.insert(x.clone());
                extend(keys, &next, depth - 1)
            })
            .sum()
    }
    Ok(extend(set.keys(), &Subspace::zero(set.ambient_dim()), a))
}

/// Whether every set contains at least the guaranteed number of ordered
/// linearly independent `a`-tuples, with `a = ⌈log(q+1)⌉`.
pub fn mc_independent_tuples(a: u32, sets: &[KeySet]) -> Result<bool> {
    let mut all = true;
    for s in sets {
        if s.is_empty() || s.allow_zero() && s.keys().iter().any(BitVector::is_zero) {
            return Err(Error::invalid(
                "tuple sets must be nonempty and free of zero",
            ));
        }
        let q = s.len() as u64;
        if theory::ceil_log2(q + 1) != a {
            return Err(Error::invalid(format!(
                "a = {a} does not match ceil(log(q+1)) for q = {q}"
            )));
        }
        let count = count_independent_tuples(s, a)?;
        all &= u128::from(count) >= theory::tuple_count_lower_bound(q)?;
    }
    Ok(all)
}

/// Estimates `Pr[rank H < ℓ]` for a uniform `ℓ × U` matrix.
#[allow(non_snake_case)]
pub fn mc_surjectivity(
    U: usize,
    ell: usize,
    trials: u64,
    seed: u64,
    threads: usize,
) -> Result<TailEstimate> {
    if U < ell {
        return Err(Error::invalid(format!(
            "need U >= ell, got U = {U}, ell = {ell}"
        )));
    }
    if trials == 0 {
        return Err(Error::invalid("trials must be at least 1"));
    }
    let failures = sum_trials(threads, trials, |i| {
        let h = sample_uniform_matrix(ell, U, &mut stream(seed, i));
        Ok(u64::from(h.rank() < ell))
    })?;
    let exact = theory::surjectivity_failure(U as u32, ell as u32)?;
    Ok(TailEstimate::from_counts(
        format!("surjectivity_U{U}_ell{ell}"),
        (U, ell, 0),
        Threshold::Count(ell as u64),
        failures,
        trials,
        DEFAULT_Z,
        Some(exact.exact),
        Some(true),
        seed,
    ))
}

/// Choice of potential base in the lemma campaigns.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum BaseChoice {
    Fixed(f64),
    /// `e·ℓ^{1/R}` for the given `R`.
    Optimized(f64),
}

impl BaseChoice {
    pub fn resolve(self, ell: usize) -> Result<f64> {
        match self {
            BaseChoice::Fixed(b) => Ok(b),
            BaseChoice::Optimized(r) => theory::optimized_base((ell as f64).max(2.0), r),
        }
    }
}

/// Grid and limits of the potential lemma campaign.
#[derive(Clone, Debug, PartialEq)]
pub struct LemmaGate {
    pub us: Vec<usize>,
    pub ells: Vec<usize>,
    pub bases: Vec<BaseChoice>,
    pub instances: u64,
    pub seed: u64,
    pub threads: usize,
    /// Stages with `U − i` at most this get the exhaustive expectation check.
    pub exhaustive_max_codim: usize,
    /// Instances with `U` at most this get the merge-identity check.
    pub merge_max_u: usize,
}

impl LemmaGate {
    pub fn new(us: Vec<usize>, ells: Vec<usize>, instances: u64, seed: u64) -> Self {
        Self {
            us,
            ells,
            bases: vec![BaseChoice::Fixed(2.0), BaseChoice::Optimized(2.0)],
            instances,
            seed,
            threads: 0,
            exhaustive_max_codim: 16,
            merge_max_u: 12,
        }
    }

    fn cells(&self) -> Vec<(usize, usize, BaseChoice)> {
        let mut out = Vec::new();
        for &u in &self.us {
            for &ell in &self.ells {
                for &b in &self.bases {
                    out.push((u, ell, b));
                }
            }
        }
        out
    }
}

/// Pass/fail counts of the potential lemma campaign.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct LemmaReport {
    pub instances: u64,
    pub growth_failures: u64,
    pub heavy_bin_failures: u64,
    pub expectation_checks: u64,
    pub expectation_failures: u64,
    pub merge_checks: u64,
    pub merge_failures: u64,
}

impl LemmaReport {
    pub fn passed(&self) -> bool {
        self.growth_failures == 0
            && self.heavy_bin_failures == 0
            && self.expectation_failures == 0
            && self.merge_failures == 0
    }
}

impl std::iter::Sum for LemmaReport {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(Self::default(), |a, b| Self {
            instances: a.instances + b.instances,
            growth_failures: a.growth_failures + b.growth_failures,
            heavy_bin_failures: a.heavy_bin_failures + b.heavy_bin_failures,
            expectation_checks: a.expectation_checks + b.expectation_checks,
            expectation_failures: a.expectation_failures + b.expectation_failures,
            merge_checks: a.merge_checks + b.merge_checks,
            merge_failures: a.merge_failures + b.merge_failures,
        })
    }
}

/// Instance `i` uses grid cell `i mod cells` with `min(2^ℓ, 2^U − 1)`
/// random keys and a chain of length `U − ℓ`, and runs every potential
/// check on it.
pub fn verify_lemmas(gate: &LemmaGate) -> Result<LemmaReport> {
    let cells = gate.cells();
    if cells.is_empty() {
        return Err(Error::invalid("the lemma grid is empty"));
    }
    for &(u, ell, _) in &cells {
        if ell == 0 || ell > u || u > 63 {
            return Err(Error::invalid(format!(
                "need 1 <= ell <= u <= 63, got u = {u}, ell = {ell}"
            )));
        }
    }
    sum_trials(gate.threads, gate.instances, |i| {
        let (u, ell, base) = cells[(i % cells.len() as u64) as usize];
        let b = base.resolve(ell)?;
        let mut rng = stream(gate.seed, i);
        let m = (1usize << ell).min((1usize << u) - 1);
        let keys = KeySet::random_distinct_nonzero(u, m, &mut rng)?;
        let chain = sample_kernel_chain(u, u - ell, &mut rng)?;
        let trace = trace_potentials(&keys, &chain, b)?;
        let mut report = LemmaReport {
            instances: 1,
            growth_failures: u64::from(!verify_growth(&trace)),
            heavy_bin_failures: u64::from(!heavy_bin_check(&keys, &chain, b, ell)?),
            ..Default::default()
        };
        for (stage, v) in chain.stages()[..chain.k()].iter().enumerate() {
            if u - stage <= gate.exhaustive_max_codim {
                let e = conditional_step_expectation(&keys, v, b, StepMode::Exhaustive, &mut rng)?;
                report.expectation_checks += 1;
                report.expectation_failures += u64::from(!e.holds(1e-12));
            }
            if u <= gate.merge_max_u {
                report.merge_checks += 1;
                report.merge_failures +=
                    u64::from(!verify_merge_identity(&keys, v, &chain.adjoined()[stage])?);
            }
        }
        Ok(report)
    })
}

/// Result of replaying the quadratic potential tail.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuadraticTailRun {
    pub base: f64,
    pub tau_minus_one: f64,
    pub check: QuadraticTail,
}

impl QuadraticTailRun {
    /// `empirical ≤ bound + zσ`.
    pub fn holds(&self, z: f64) -> bool {
        let n = self.check.trials as f64;
        let p = self.check.bound.min(1.0);
        self.check.empirical <= self.check.bound + z * (p * (1.0 - p) / n).sqrt()
    }
}

/// Samples `chains` kernel chains of length `U − ℓ` for one random key set
/// of size `2^ℓ` and checks the quadratic tail with `b`, `τ` from
/// [`tau_recipe`].
#[allow(non_snake_case)]
pub fn mc_quadratic_tail(
    U: usize,
    ell: usize,
    r: f64,
    chains: u64,
    seed: u64,
    threads: usize,
) -> Result<QuadraticTailRun> {
    if ell == 0 || ell > U || U > 63 {
        return Err(Error::invalid(format!(
            "need 1 <= ell <= U <= 63, got U = {U}, ell = {ell}"
        )));
    }
    let k = U - ell;
    let recipe = tau_recipe(ell, r, k)?;
    let keys = KeySet::random_distinct_nonzero(U, 1 << ell, &mut stream(seed, SETUP_STREAM))?;
    let traces: Vec<PotentialTrace> = pool(threads)?.install(|| {
        (0..chains)
            .into_par_iter()
            .map(|i| {
                let chain = sample_kernel_chain(U, k, &mut stream(seed, i))?;
                trace_potentials(&keys, &chain, recipe.base)
            })
            .collect::<Result<Vec<_>>>()
    })?;
    Ok(QuadraticTailRun {
        base: recipe.base,
        tau_minus_one: recipe.tau_minus_one,
        check: quadratic_tail_check(&traces, recipe.tau_minus_one)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wilson_examples() {
        let (lo, hi) = wilson_interval(50, 100, 1.96);
        assert!((lo - 0.4038).abs() < 1e-3 && (hi - 0.5962).abs() < 1e-3);
        assert_eq!(wilson_interval(0, 17, 3.0).0, 0.0);
        assert_eq!(wilson_interval(17, 17, 3.0).1, 1.0);
        for s in 0..=20 {
            let (lo, hi) = wilson_interval(s, 20, 2.0);
            let p = s as f64 / 20.0;
            assert!(0.0 <= lo && lo <= p && p <= hi && hi <= 1.0);
        }
    }

    #[test]
    fn wilson_coverage_self_test() {
        let z = 1.96;
        let n = 200u64;
        let meta = 1000u64;
        for p in [0.01, 0.1, 0.5] {
            let mut covered = 0;
            for j in 0..meta {
                let mut rng = stream(42, j);
                let s = (0..n).filter(|_| rng.random_bool(p)).count() as u64;
                let (lo, hi) = wilson_interval(s, n, z);
                covered += u64::from(lo <= p && p <= hi);
            }
            // Nominal 95%, with three binomial standard deviations of slack.
            let rate = covered as f64 / meta as f64;
            assert!(
                rate >= 0.95 - 3.0 * (0.95f64 * 0.05 / meta as f64).sqrt(),
                "p = {p}: {rate}"
            );
        }
    }

    #[test]
    fn fixed_bucket_trivial_threshold() {
        let spec = ExperimentSpec::new("t", 8, 4, 20, Threshold::Count(20))
            .trials(200)
            .seed(1);
        let est = mc_fixed_bucket_tail(&spec).unwrap();
        assert_eq!(est.successes, 0);
        assert_eq!(est.p_hat, 0.0);
    }

    #[test]
    fn fixed_bucket_packed_and_generic_agree() {
        // u = 70 forces the generic path; the same keys zero-extended agree
        // in distribution, so just check both run and respect the bound.
        let spec = ExperimentSpec::new("wide", 70, 6, 64, Threshold::Count(2))
            .trials(4000)
            .seed(2);
        let est = mc_fixed_bucket_tail(&spec).unwrap();
        assert!(!est.falsified());
        assert!((est.theory_bound.unwrap() - 1.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn determinism_across_threads() {
        let spec = ExperimentSpec::new("d", 12, 6, 64, Threshold::Count(1))
            .trials(3000)
            .seed(5);
        let a = mc_fixed_bucket_tail(&spec.clone().threads(1)).unwrap();
        let b = mc_fixed_bucket_tail(&spec.threads(3)).unwrap();
        assert_eq!(a, b);
        let s = ExperimentSpec::new("ml", 16, 8, 256, Threshold::Real(6.0))
            .trials(500)
            .seed(6);
        let a = mc_max_load(&s.clone().threads(1)).unwrap();
        let b = mc_max_load(&s.threads(4)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn bucket_sweep_respects_bound() {
        let spec = ExperimentSpec::new("sweep", 12, 6, 64, Threshold::Count(2))
            .trials(3000)
            .seed(7);
        let rows = mc_fixed_bucket_sweep(&spec, 8).unwrap();
        assert_eq!(rows.len(), 8);
        assert!(rows.iter().all(|r| !r.falsified()));
    }

    #[test]
    fn dyadic_thresholds_at_balanced_load() {
        let ell = 10;
        for a in 1..=3u32 {
            let spec =
                ExperimentSpec::new("dyadic", 16, ell, 1 << ell, Threshold::Count((1 << a) - 2))
                    .trials(20_000)
                    .seed(8 + a as u64);
            let est = mc_fixed_bucket_tail(&spec).unwrap();
            let bound = 1.0 / theory::gamma() * (-(a as f64).powi(2)).exp2();
            assert!(
                est.p_hat <= bound + 3.0 * est.sigma().max(1.0 / est.trials as f64),
                "a = {a}"
            );
        }
    }

    #[test]
    fn sharpness_small_cases() {
        let s = subspace_sharpness_experiment(2, 2, 2, 20_000, 3, 0).unwrap();
        assert!(s.estimate.p_hat >= 1.0 / 16.0 - 3.0 * s.estimate.sigma());
        assert!(s.matches_exact(3.0));
        let s = subspace_sharpness_experiment(3, 3, 5, 500, 3, 0).unwrap();
        assert_eq!(s.estimate.p_hat, 0.0);
        assert_eq!(s.exact, 0.0);
        assert!(subspace_sharpness_experiment(6, 2, 3, 10, 0, 0).is_err());
    }

    #[test]
    fn sharpness_exact_matches_enumeration() {
        // All 2×3 maps on d = 2, ell = 2: count those with Z₀ > 2^a − 2.
        let s = KeySet::subspace_plus_one(3, 4).unwrap();
        for a in 1..=3u32 {
            let mut hits = 0;
            for bits in 0u32..64 {
                let mut h = BitMatrix::zeros(2, 3);
                for i in 0..2 {
                    for j in 0..3 {
                        h.set(i, j, bits >> (3 * i + j) & 1 == 1);
                    }
                }
                let z0 = fixed_bucket_load(&h, &s, &BitVector::zeros(2)).unwrap();
                hits += u32::from(z0 as u64 > (1u64 << a) - 2);
            }
            let exact = sharpness_exact(2, 2, a).unwrap();
            assert!((exact - hits as f64 / 64.0).abs() < 1e-14, "a = {a}");
        }
    }

    #[test]
    fn max_load_trivial_threshold() {
        let spec = ExperimentSpec::new("t1", 10, 4, 30, Threshold::Real(1.0))
            .trials(100)
            .seed(1);
        let r = mc_max_load(&spec).unwrap();
        assert_eq!(r.tail.p_hat, 1.0);
        assert!(r.mean_load >= 2.0);
        assert!(r.mean_ci.0 <= r.mean_load && r.mean_load <= r.mean_ci.1);
    }

    #[test]
    fn independent_tuple_examples() {
        let e = |bits: &str| BitVector::from_bit_str(bits).unwrap();
        let a = KeySet::new(2, vec![e("10"), e("01"), e("11")], false).unwrap();
        assert_eq!(count_independent_tuples(&a, 2).unwrap(), 6);
        assert!(mc_independent_tuples(2, &[a]).unwrap());
        let one = KeySet::new(2, vec![e("10")], false).unwrap();
        assert_eq!(count_independent_tuples(&one, 1).unwrap(), 1);
        assert!(mc_independent_tuples(1, std::slice::from_ref(&one)).unwrap());
        assert!(mc_independent_tuples(2, &[one]).is_err());
        let big = KeySet::random_distinct_nonzero(20, 200, &mut stream(0, 0)).unwrap();
        assert!(count_independent_tuples(&big, 8).is_err());
    }

    #[test]
    fn surjectivity_small_cases() {
        let zero = mc_surjectivity(4, 0, 100, 1, 0).unwrap();
        assert_eq!(zero.p_hat, 0.0);
        let one = mc_surjectivity(1, 1, 20_000, 1, 0).unwrap();
        assert!((one.p_hat - 0.5).abs() <= 3.0 * (0.25f64 / 20_000.0).sqrt());
        assert!(mc_surjectivity(2, 3, 10, 1, 0).is_err());
    }

    #[test]
    fn small_lemma_gate_passes() {
        let gate = LemmaGate::new(vec![6, 8], vec![2, 4], 40, 11);
        let report = verify_lemmas(&gate).unwrap();
        assert_eq!(report.instances, 40);
        assert!(report.expectation_checks > 0 && report.merge_checks > 0);
        assert!(report.passed(), "{report:?}");
    }

    #[test]
    fn quadratic_tail_replay_small() {
        let run = mc_quadratic_tail(12, 8, 6.0, 300, 4, 0).unwrap();
        assert!(run.holds(3.0));
        assert!(mc_quadratic_tail(12, 8, 1.5, 10, 4, 0).is_err());
    }
}
