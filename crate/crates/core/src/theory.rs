//! Closed-form bounds, distributions and solvers for binary linear hashing.
//!
//! Every probability-valued bound is clamped to `[0, 1]` at the API
//! boundary; the unclamped formula value is kept in [`TailBound::raw`].
//! Logarithms written `log` are base 2, `ln` natural.

use std::f64::consts::{E, LN_2};

use serde::Serialize;

use crate::error::{Error, Result};

/// Products `∏(1 − 2^{−j})` longer than this are summed in the log domain.
const DIRECT_PRODUCT_LIMIT: u64 = 1000;

/// `∏_{j=lo}^{hi} (1 − 2^{−j})` for `1 ≤ lo`; the empty product is 1.
fn q_product(lo: u64, hi: u64) -> f64 {
    if hi < lo {
        return 1.0;
    }
    debug_assert!(lo >= 1);
    if hi - lo < DIRECT_PRODUCT_LIMIT {
        (lo..=hi).map(|j| 1.0 - pow2_neg(j)).product()
    } else {
        (lo..=hi).map(|j| (-pow2_neg(j)).ln_1p()).sum::<f64>().exp()
    }
}

#[inline]
fn pow2_neg(j: u64) -> f64 {
    (-(j as f64)).exp2()
}

/// Smallest `a` with `2^a ≥ x`, for `x ≥ 1`.
#[inline]
pub fn ceil_log2(x: u64) -> u32 {
    assert!(x >= 1, "ceil_log2 of zero");
    if x == 1 {
        0
    } else {
        64 - (x - 1).leading_zeros()
    }
}

/// The partial product `∏_{j=1}^{terms} (1 − 2^{−j})`.
pub fn gamma_partial(terms: u64) -> f64 {
    q_product(1, terms)
}

/// `γ = ∏_{j≥1} (1 − 2^{−j})`, truncated once the omitted factor is within
/// `tol` of 1 (the omitted factor is at least `1 − 2^{−J}`).
pub fn gamma_constant(tol: f64) -> Result<f64> {
    if !(tol > 0.0) {
        return Err(Error::invalid(format!(
            "tolerance must be positive, got {tol}"
        )));
    }
    let mut terms = 1u64;
    while pow2_neg(terms) >= tol {
        terms += 1;
    }
    Ok(gamma_partial(terms))
}

/// γ to full double precision.
pub fn gamma() -> f64 {
    gamma_partial(64)
}

/// Lower bound `∏_{j=0}^{a−1} (q + 1 − 2^j)` on the number of ordered
/// linearly independent `a`-tuples in a set of `q` distinct nonzero vectors,
/// where `a = ⌈log(q+1)⌉`.
pub fn tuple_count_lower_bound(q: u64) -> Result<u128> {
    if q == 0 {
        return Err(Error::invalid("q must be at least 1"));
    }
    let a = ceil_log2(q + 1);
    (0..a).try_fold(1u128, |acc, j| {
        acc.checked_mul(q as u128 + 1 - (1u128 << j))
            .ok_or_else(|| Error::invalid(format!("tuple count for q = {q} overflows u128")))
    })
}

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda > 0.0 && lambda.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "lambda must be positive, got {lambda}"
        )))
    }
}

/// `Pr[Z_y > r] ≤ λ^a / ∏_{j=0}^{a−1} (r + 2 − 2^j)` with `a = ⌈log(r+2)⌉`,
/// for the load `Z_y` of a fixed bucket under `m = λ·2^ℓ` distinct nonzero
/// keys. Clamped to 1.
pub fn fixed_bucket_tail_bound(r: u64, lambda: f64) -> Result<f64> {
    check_lambda(lambda)?;
    let a = ceil_log2(r + 2);
    let log_denominator: f64 = (0..a)
        .map(|j| ((r + 2) as f64 - (j as f64).exp2()).ln())
        .sum();
    let log_value = a as f64 * lambda.ln() - log_denominator;
    Ok(log_value.exp().min(1.0))
}

/// The dyadic form `γ^{−1} λ^a 2^{−a²}`, clamped to 1. Dominates
/// [`fixed_bucket_tail_bound`] at `r = 2^a − 2`.
pub fn dyadic_fixed_bucket_bound(a: u32, lambda: f64) -> Result<f64> {
    check_lambda(lambda)?;
    if a == 0 {
        return Err(Error::invalid("a must be at least 1"));
    }
    let a = a as f64;
    let log_value = -gamma().ln() + a * lambda.ln() - a * a * LN_2;
    Ok(log_value.exp().min(1.0))
}

/// Probability that a uniform `msize × msize` matrix over F₂ has nullity
/// exactly `a`:
/// `2^{−a²} ∏_{j=a+1}^{m} (1 − 2^{−j})² / ∏_{j=1}^{m−a} (1 − 2^{−j})`.
pub fn square_nullity_pmf(msize: u32, a: u32) -> Result<f64> {
    if a > msize {
        return Err(Error::invalid(format!(
            "nullity {a} exceeds matrix size {msize}"
        )));
    }
    let (m, a) = (msize as u64, a as u64);
    let top = q_product(a + 1, m);
    Ok(pow2_neg(a * a) * top * top / q_product(1, m - a))
}

/// Probability that a uniform `ell × d` matrix over F₂ has nullity `a`
/// (rank `d − a`). Valid for `max(0, d − ell) ≤ a ≤ d`.
pub fn rect_rank_pmf(ell: u32, d: u32, a: u32) -> Result<f64> {
    let min_a = d.saturating_sub(ell);
    if a < min_a || a > d {
        return Err(Error::invalid(format!(
            "nullity {a} outside [{min_a}, {d}] for a {ell}x{d} matrix"
        )));
    }
    let (ell, d, a) = (ell as u64, d as u64, a as u64);
    let rank = d - a;
    // ∏_{i<rank}(1 − 2^{i−ℓ}) = ∏_{j=ℓ−rank+1}^{ℓ}(1 − 2^{−j}), same for d.
    let numerator = q_product(ell - rank + 1, ell) * q_product(d - rank + 1, d);
    let exponent = a * (ell + a - d);
    Ok(pow2_neg(exponent) * numerator / q_product(1, rank))
}

/// Probability that a uniform map F₂^U → F₂^ℓ fails to be surjective,
/// with the union bound `2^{ℓ−U}` that dominates it.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Surjectivity {
    pub exact: f64,
    pub bound: f64,
}

#[allow(non_snake_case)]
pub fn surjectivity_failure(U: u32, ell: u32) -> Result<Surjectivity> {
    if U < ell {
        return Err(Error::invalid(format!(
            "need U >= ell, got U = {U}, ell = {ell}"
        )));
    }
    let log_full_rank: f64 = (0..ell)
        .map(|j| (-(j as f64 - U as f64).exp2()).ln_1p())
        .sum();
    Ok(Surjectivity {
        exact: -log_full_rank.exp_m1(),
        bound: (ell as f64 - U as f64).exp2(),
    })
}

fn check_r(r: f64) -> Result<()> {
    if r > 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("R must exceed 1, got {r}")))
    }
}

/// The optimized potential base `e·ℓ^{1/R} = ℓ^{1/R + 1/ln ℓ}`.
pub fn optimized_base(ell: f64, r: f64) -> Result<f64> {
    if !(ell >= 2.0) {
        return Err(Error::invalid(format!("ell must be at least 2, got {ell}")));
    }
    check_r(r)?;
    Ok(E * ell.powf(1.0 / r))
}

/// Absolute constants of the maximum-load tail theorems.
///
/// `c0`/`d0` are the surjective-map constants; the unconditioned bound uses
/// `c = 2·c0` and admissibility threshold `d = max(d0, √c0)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Constants {
    pub c0: f64,
    pub d0: f64,
    pub c: f64,
    pub d: f64,
}

impl Constants {
    fn from_surjective(c0: f64, d0: f64) -> Self {
        Self {
            c0,
            d0,
            c: 2.0 * c0,
            d: d0.max(c0.sqrt()),
        }
    }

    /// `m = 2^ℓ` keys: `c0 = 48(e/ln 2)²`, `d0 = 4e/ln 2`.
    pub fn balanced() -> Self {
        Self::from_surjective(48.0 * (E / LN_2).powi(2), 4.0 * E / LN_2)
    }

    /// General `m`: `c0 = 48e²`, `d0 = 4e`.
    pub fn general() -> Self {
        Self::from_surjective(48.0 * E * E, 4.0 * E)
    }

    /// Override the admissibility constant, for sensitivity studies.
    pub fn with_d(self, d: f64) -> Self {
        Self { d, ..self }
    }
}

/// A tail bound together with its unclamped value and whether the
/// admissibility condition under which it is proved holds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TailBound {
    pub value: f64,
    pub raw: f64,
    pub admissible: bool,
}

impl TailBound {
    fn from_log(log_raw: f64, admissible: bool) -> Self {
        let raw = log_raw.exp();
        Self {
            value: raw.min(1.0),
            raw,
            admissible,
        }
    }
}

/// `Pr[M ≥ R ℓ/log ℓ] ≤ C (ln ℓ)² / (R² ℓ^{2−2/R})` for `2^ℓ` keys,
/// admissible when `R ℓ^{1−1/R} ≥ D ln ℓ`.
pub fn maxload_tail_bound(ell: u64, r: f64) -> Result<TailBound> {
    maxload_tail_bound_with(ell, r, &Constants::balanced())
}

pub fn maxload_tail_bound_with(ell: u64, r: f64, k: &Constants) -> Result<TailBound> {
    if ell < 4 {
        return Err(Error::invalid(format!("ell must be at least 4, got {ell}")));
    }
    check_r(r)?;
    let ln_ell = (ell as f64).ln();
    let log_raw = k.c.ln() + 2.0 * ln_ell.ln() - 2.0 * r.ln() - (2.0 - 2.0 / r) * ln_ell;
    Ok(TailBound::from_log(
        log_raw,
        maxload_admissible(ln_ell, r, k.d),
    ))
}

fn maxload_admissible(ln_ell: f64, r: f64, d: f64) -> bool {
    r.ln() + (1.0 - 1.0 / r) * ln_ell >= d.ln() + ln_ell.ln()
}

/// `Pr[M ≥ T] ≤ C (λ n^{1/T} / T)²` with `n = 2^ℓ`, admissible when
/// `T ≥ D λ n^{1/T}`.
pub fn general_tail_bound(ell: u64, lambda: f64, t: f64) -> Result<TailBound> {
    general_tail_bound_with(ell, lambda, t, &Constants::general())
}

pub fn general_tail_bound_with(ell: u64, lambda: f64, t: f64, k: &Constants) -> Result<TailBound> {
    check_lambda(lambda)?;
    if !(t > 0.0) {
        return Err(Error::invalid(format!("T must be positive, got {t}")));
    }
    let log_scale = lambda.ln() + ell as f64 * LN_2 / t;
    let log_raw = k.c.ln() + 2.0 * (log_scale - t.ln());
    Ok(TailBound::from_log(log_raw, t.ln() >= k.d.ln() + log_scale))
}

/// Solves `t ln(t/(eλ)) = ℓ ln 2` for the fully independent max-load scale
/// `t`, with `λ = m / 2^ℓ`, on the increasing branch `t > eλ`.
///
/// The returned root has absolute residual at most `1e−9`.
pub fn solve_t_scale(m: u64, ell: u32) -> Result<f64> {
    if m == 0 || ell == 0 {
        return Err(Error::invalid("solve_t_scale needs m >= 1 and ell >= 1"));
    }
    let ln_lambda = (m as f64).ln() - ell as f64 * LN_2;
    let target = ell as f64 * LN_2;
    let residual = |t: f64| t * (t.ln() - 1.0 - ln_lambda) - target;

    let e_lambda = (1.0 + ln_lambda).exp();
    let mut lo = e_lambda;
    let mut hi = e_lambda * 2f64.powi(64);
    if !(residual(lo) < 0.0 && residual(hi) > 0.0) {
        return Err(Error::invalid(format!(
            "no root bracket in (e*lambda, e*lambda*2^64] for m = {m}, ell = {ell}"
        )));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if residual(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut t = 0.5 * (lo + hi);
    // Newton polish; the derivative ln(t/λ) is positive on this branch.
    for _ in 0..3 {
        let step = residual(t) / (t.ln() - ln_lambda);
        let next = t - step;
        if residual(next).abs() < residual(t).abs() {
            t = next;
        }
    }
    if residual(t).abs() > 1e-9 {
        return Err(Error::invalid(format!(
            "t-scale residual {} above tolerance for m = {m}, ell = {ell}",
            residual(t)
        )));
    }
    Ok(t)
}

/// `F(u) = min{1, 48u²}`.
pub fn one_step_f(u: f64) -> Result<f64> {
    if !(u >= 0.0) {
        return Err(Error::invalid(format!("F needs u >= 0, got {u}")));
    }
    Ok((48.0 * u * u).min(1.0))
}

/// Lipschitz constant of [`one_step_f`] on `[0, ∞)`.
pub const ONE_STEP_LIPSCHITZ: f64 = 13.856_406_460_551_018; // 8√3

/// Whether `F(2r/(2+s)) + 8√3 r² s/(2+s) ≤ 48 r²` at `(s, r)`,
/// for `s > 0` and `0 ≤ r ≤ 1/4`.
pub fn one_step_inequality_check(s: f64, r: f64) -> Result<bool> {
    if !(s > 0.0) || !(0.0..=0.25).contains(&r) {
        return Err(Error::invalid(format!(
            "need s > 0 and 0 <= r <= 1/4, got s = {s}, r = {r}"
        )));
    }
    let lhs = one_step_f(2.0 * r / (2.0 + s))? + ONE_STEP_LIPSCHITZ * r * r * s / (2.0 + s);
    Ok(lhs <= 48.0 * r * r)
}

/// How the integration start point of the expectation bound is chosen.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StartRule {
    /// `R₀ = 1 + (ln ln ℓ + F)/ln ℓ`; rejected where it is inadmissible.
    Asymptotic,
    /// `max(R₀, smallest admissible R)`, defined for every `ℓ ≥ 4`.
    AdmissibleFloor,
}

/// Numeric upper bound on `E[M(S,h)]` for `2^ℓ` keys obtained by integrating
/// the maximum-load tail from a start point `R₀`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ExpectationBound {
    pub ell: u64,
    /// `L = ℓ / log ℓ`.
    pub scale: f64,
    /// Smallest integer with `e^F > 2D`.
    pub f: u32,
    pub r0_asymptotic: f64,
    pub r0_admissible: f64,
    pub r0: f64,
    pub rule: StartRule,
    /// `∫_{R₀}^{R_max} min(1, tail(R)) dR`, by quadrature.
    pub integral: f64,
    /// Closed-form integral of the unclamped tail beyond `R_max`.
    pub tail: f64,
    pub bound: f64,
    /// `bound / L`.
    pub ratio: f64,
}

/// Smallest integer `F` with `e^F > 2D`.
pub fn expectation_offset(d: f64) -> u32 {
    let mut f = 0u32;
    while (f as f64).exp() <= 2.0 * d {
        f += 1;
    }
    f
}

/// Smallest `R > 1` with `R ℓ^{1−1/R} ≥ D ln ℓ`.
pub fn minimal_admissible_r(ell: u64, d: f64) -> Result<f64> {
    if ell < 4 {
        return Err(Error::invalid(format!("ell must be at least 4, got {ell}")));
    }
    let ln_ell = (ell as f64).ln();
    let gap = |r: f64| r.ln() + (1.0 - 1.0 / r) * ln_ell - (d * ln_ell).ln();
    let mut lo = 1.0f64;
    let mut hi = 2.0f64;
    while gap(hi) < 0.0 {
        lo = hi;
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if gap(mid) >= 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// `log₂ ℓ` above which the asymptotic start point is admissible.
pub fn asymptotic_rule_threshold(k: &Constants) -> f64 {
    let f = expectation_offset(k.d) as f64;
    let gap = |y: f64| {
        let r0 = 1.0 + (y.ln() + f) / y;
        r0.ln() + (1.0 - 1.0 / r0) * y - (k.d * y).ln()
    };
    // Scan in ln ℓ, then bisect the last sign change.
    let mut lo = 4f64.ln();
    let mut hi = lo;
    while gap(hi) < 0.0 && hi < 1e6 {
        lo = hi;
        hi *= 1.5;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if gap(mid) >= 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi / LN_2
}

fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, panels: usize) -> f64 {
    if b <= a {
        return 0.0;
    }
    let n = panels + panels % 2;
    let h = (b - a) / n as f64;
    let inner: f64 = (1..n)
        .map(|i| f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 })
        .sum();
    (f(a) + inner + f(b)) * h / 3.0
}

/// Upper bound on the expected maximum load for `2^ℓ` keys, using the
/// admissibility floor as start rule and the balanced constants.
pub fn expected_maxload_upper_bound(ell: u64) -> Result<ExpectationBound> {
    expected_maxload_upper_bound_with(ell, StartRule::AdmissibleFloor, &Constants::balanced())
}

pub fn expected_maxload_upper_bound_with(
    ell: u64,
    rule: StartRule,
    k: &Constants,
) -> Result<ExpectationBound> {
    if ell < 4 {
        return Err(Error::invalid(format!("ell must be at least 4, got {ell}")));
    }
    let ln_ell = (ell as f64).ln();
    let scale = ell as f64 / (ell as f64).log2();
    let f = expectation_offset(k.d);
    let r0_asymptotic = 1.0 + (ln_ell.ln() + f as f64) / ln_ell;
    let r0_admissible = minimal_admissible_r(ell, k.d)?;
    let r0 = match rule {
        StartRule::Asymptotic => {
            if !maxload_admissible(ln_ell, r0_asymptotic, k.d) {
                return Err(Error::Inadmissible {
                    ell,
                    min_log2_ell: asymptotic_rule_threshold(k),
                });
            }
            r0_asymptotic
        }
        StartRule::AdmissibleFloor => r0_asymptotic.max(r0_admissible),
    };

    // In x = 1 − 1/R, dR = R² dx and tail(R)·R² = C (ln ℓ)² ℓ^{−2x}.
    let c_ln2 = k.c * ln_ell * ln_ell;
    let integrand = |x: f64| {
        let r = 1.0 / (1.0 - x);
        (r * r).min(c_ln2 * (-2.0 * x * ln_ell).exp())
    };
    // Past R_clamp the tail is below 1 and the clamp is inactive.
    let r_clamp = {
        let raw = |r: f64| maxload_tail_bound_with(ell, r, k).map(|b| b.raw);
        let (mut lo, mut hi) = (r0, r0 * 2.0);
        while raw(hi)? > 1.0 {
            lo = hi;
            hi *= 2.0;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if raw(mid)? > 1.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        hi
    };
    let r_max = 4.0 * r_clamp.max(r0);
    let x0 = 1.0 - 1.0 / r0;
    let x_max = 1.0 - 1.0 / r_max;
    let integral = simpson(integrand, x0, x_max, 20_000);
    let tail = k.c * ln_ell * ((-2.0 * x_max * ln_ell).exp() - (-2.0 * ln_ell).exp()) / 2.0;
    let bound = scale * (r0 + integral + tail);
    Ok(ExpectationBound {
        ell,
        scale,
        f,
        r0_asymptotic,
        r0_admissible,
        r0,
        rule,
        integral,
        tail,
        bound,
        ratio: bound / scale,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * b.abs().max(1e-300)
    }

    #[test]
    fn gamma_examples() {
        assert_eq!(gamma_partial(1), 0.5);
        assert_eq!(gamma_partial(3), 0.328125);
        let g = gamma_constant(1e-12).unwrap();
        assert!((g - gamma_partial(64)).abs() < 1e-12);
        assert!((g - 0.288_788_095_086_602).abs() < 1e-12);
        assert!(gamma_constant(0.0).is_err());
        for j in 1..40 {
            assert!(gamma_partial(j + 1) < gamma_partial(j));
        }
    }

    #[test]
    fn tuple_count_examples() {
        assert_eq!(tuple_count_lower_bound(1).unwrap(), 1);
        assert_eq!(tuple_count_lower_bound(3).unwrap(), 6);
        assert_eq!(tuple_count_lower_bound(7).unwrap(), 168);
        // q = 4: a = 3, (5−1)(5−2)(5−4) = 12.
        assert_eq!(tuple_count_lower_bound(4).unwrap(), 12);
        assert!(tuple_count_lower_bound(0).is_err());
    }

    #[test]
    fn fixed_bucket_examples() {
        assert_eq!(fixed_bucket_tail_bound(0, 1.0).unwrap(), 1.0);
        assert!(close(
            fixed_bucket_tail_bound(2, 1.0).unwrap(),
            1.0 / 6.0,
            1e-14
        ));
        assert!(close(
            fixed_bucket_tail_bound(2, 0.5).unwrap(),
            1.0 / 24.0,
            1e-14
        ));
        assert!(fixed_bucket_tail_bound(2, 0.0).is_err());
    }

    #[test]
    fn dyadic_examples() {
        let g = gamma();
        assert_eq!(dyadic_fixed_bucket_bound(1, 1.0).unwrap(), 1.0);
        assert!(close(
            dyadic_fixed_bucket_bound(2, 1.0).unwrap(),
            1.0 / (16.0 * g),
            1e-13
        ));
        assert!((dyadic_fixed_bucket_bound(2, 1.0).unwrap() - 0.216_42).abs() < 1e-5);
        assert!(close(
            dyadic_fixed_bucket_bound(3, 1.0).unwrap(),
            1.0 / (512.0 * g),
            1e-13
        ));
        assert!((dyadic_fixed_bucket_bound(3, 1.0).unwrap() - 0.006763).abs() < 1e-6);
    }

    #[test]
    fn dyadic_dominates_fixed() {
        for a in 1..=6u32 {
            for lambda in [0.25, 0.5, 1.0, 2.0] {
                let r = (1u64 << a) - 2;
                assert!(
                    fixed_bucket_tail_bound(r, lambda).unwrap()
                        <= dyadic_fixed_bucket_bound(a, lambda).unwrap() * (1.0 + 1e-12)
                );
            }
        }
    }

    #[test]
    fn square_pmf_examples() {
        assert!(close(square_nullity_pmf(2, 0).unwrap(), 3.0 / 8.0, 1e-14));
        assert!(close(square_nullity_pmf(2, 1).unwrap(), 9.0 / 16.0, 1e-14));
        assert!(close(square_nullity_pmf(2, 2).unwrap(), 1.0 / 16.0, 1e-14));
        assert!(square_nullity_pmf(2, 3).is_err());
    }

    #[test]
    fn rect_pmf_examples() {
        for a in 0..=2 {
            assert!(close(
                rect_rank_pmf(2, 2, a).unwrap(),
                square_nullity_pmf(2, a).unwrap(),
                1e-14
            ));
        }
        assert!(close(rect_rank_pmf(1, 2, 1).unwrap(), 0.75, 1e-14));
        assert!(close(rect_rank_pmf(1, 2, 2).unwrap(), 0.25, 1e-14));
        assert!(rect_rank_pmf(1, 2, 0).is_err());
        assert!(rect_rank_pmf(1, 2, 3).is_err());
    }

    #[test]
    fn pmfs_sum_to_one() {
        for m in 0..=12u32 {
            let s: f64 = (0..=m).map(|a| square_nullity_pmf(m, a).unwrap()).sum();
            assert!((s - 1.0).abs() < 1e-12, "square {m}: {s}");
        }
        for ell in 1..=12u32 {
            for d in 1..=12u32 {
                let s: f64 = (d.saturating_sub(ell)..=d)
                    .map(|a| rect_rank_pmf(ell, d, a).unwrap())
                    .sum();
                assert!((s - 1.0).abs() < 1e-12, "rect {ell}x{d}: {s}");
            }
        }
        for d in 1..=10u32 {
            for a in 0..=d {
                assert!(close(
                    rect_rank_pmf(d, d, a).unwrap(),
                    square_nullity_pmf(d, a).unwrap(),
                    1e-13
                ));
            }
        }
    }

    #[test]
    fn long_products_use_log_domain_consistently() {
        // Crossing the direct/log threshold must not change the value.
        let direct: f64 = (1..=1500u64).map(|j| 1.0 - pow2_neg(j)).product();
        assert!(close(q_product(1, 1500), direct, 1e-12));
        let s: f64 = (0..=1200u32)
            .map(|a| square_nullity_pmf(1200, a).unwrap())
            .sum();
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sharpness_sandwich() {
        let g = gamma();
        for m in 8..=16u32 {
            for a in 1..=3u32 {
                let upper = (-(a as f64 * a as f64)).exp2() / g;
                let tail: f64 = (a..=m).map(|b| square_nullity_pmf(m, b).unwrap()).sum();
                let p = square_nullity_pmf(m, a).unwrap();
                assert!(tail <= upper, "m={m} a={a}");
                assert!(p >= g * g * (-(a as f64 * a as f64)).exp2());
            }
        }
    }

    #[test]
    fn surjectivity_examples() {
        let s = surjectivity_failure(1, 1).unwrap();
        assert!(close(s.exact, 0.5, 1e-15));
        assert_eq!(s.bound, 1.0);
        let s = surjectivity_failure(5, 0).unwrap();
        assert_eq!(s.exact, 0.0);
        assert_eq!(s.bound, 1.0 / 32.0);
        let s = surjectivity_failure(13, 10).unwrap();
        assert_eq!(s.bound, 0.125);
        assert!(s.exact < 0.125);
        let direct = 1.0
            - (0..10)
                .map(|j| 1.0 - ((j as f64) - 13.0).exp2())
                .product::<f64>();
        assert!(close(s.exact, direct, 1e-12));
        assert!(surjectivity_failure(2, 3).is_err());
    }

    #[test]
    fn optimized_base_examples() {
        assert!(close(optimized_base(16.0, 2.0).unwrap(), 4.0 * E, 1e-15));
        assert!(close(
            optimized_base(256.0, 1.0 + 1e-15).unwrap(),
            256.0 * E,
            1e-12
        ));
        assert!(close(
            optimized_base(16.0, f64::INFINITY).unwrap(),
            E,
            1e-15
        ));
        let (ell, r) = (100.0f64, 3.0);
        assert!(close(
            optimized_base(ell, r).unwrap(),
            ell.powf(1.0 / r + 1.0 / ell.ln()),
            1e-12
        ));
        assert!(optimized_base(16.0, 1.0).is_err());
        assert!(optimized_base(1.0, 2.0).is_err());
    }

    #[test]
    fn maxload_bound_examples() {
        let b = maxload_tail_bound(16, 2.0).unwrap();
        assert_eq!(b.value, 1.0);
        assert!(b.raw > 100.0);
        let c = Constants::balanced().c;
        let expected = c * 16f64.ln().powi(2) / 64.0;
        assert!(close(b.raw, expected, 1e-12));

        let ell = 1u64 << 20;
        let b = maxload_tail_bound(ell, 4.0).unwrap();
        let expected = c * (ell as f64).ln().powi(2) / (16.0 * (ell as f64).powf(1.5));
        assert!(close(b.value, expected, 1e-12));
        assert!(b.value < 1e-3);
    }

    #[test]
    fn maxload_bound_monotone() {
        for r in [2.0, 3.0, 5.0] {
            let mut prev = f64::INFINITY;
            for ell in 8..200u64 {
                let raw = maxload_tail_bound(ell, r).unwrap().raw;
                assert!(raw < prev, "R={r} ell={ell}");
                prev = raw;
            }
        }
        for ell in [64u64, 1 << 10, 1 << 20] {
            let mut prev = f64::INFINITY;
            let mut r = 1.05;
            while r < 20.0 {
                let b = maxload_tail_bound(ell, r).unwrap();
                if b.admissible {
                    assert!(b.raw < prev);
                    assert!(b.value <= 1.0);
                    prev = b.raw;
                }
                r += 0.05;
            }
        }
    }

    #[test]
    fn balanced_constants() {
        let k = Constants::balanced();
        assert!(close(k.c0, 48.0 * (E / LN_2).powi(2), 1e-15));
        assert!(close(k.d0, 4.0 * E / LN_2, 1e-15));
        assert!(close(k.d, k.c0.sqrt(), 1e-15));
        assert_eq!(expectation_offset(k.d), 4);
        // On the admissible boundary the unclamped value is exactly C/D² = 2.
        let ell = 1u64 << 12;
        let r = minimal_admissible_r(ell, k.d).unwrap();
        assert!((maxload_tail_bound(ell, r).unwrap().raw - 2.0).abs() < 1e-6);
    }

    #[test]
    fn general_bound_examples() {
        let k = Constants::general();
        // T = t: n^{1/t} = t/(eλ) so the unclamped value is C/e².
        let t = solve_t_scale(u64::MAX, 64).unwrap();
        let lambda = u64::MAX as f64 / 2f64.powi(64);
        let b = general_tail_bound(64, lambda, t).unwrap();
        assert!(close(b.raw, k.c / (E * E), 1e-8));
        assert_eq!(b.value, 1.0);

        let big = general_tail_bound(10, 1.0, 1e9).unwrap();
        assert!(close(big.raw, k.c * 1e-18, 1e-6));

        let one = general_tail_bound(20, 1.0, 30.0).unwrap();
        let two = general_tail_bound(20, 2.0, 30.0).unwrap();
        assert!(close(two.raw, 4.0 * one.raw, 1e-12));
        assert!(general_tail_bound(20, 1.0, 0.0).is_err());
    }

    #[test]
    fn general_admissible_values_are_capped() {
        // Admissibility means λn^{1/T}/T ≤ 1/D, so raw ≤ C/D².
        let k = Constants::general();
        let cap = k.c / (k.d * k.d);
        assert!(close(cap, 2.0, 1e-12));
        for ell in [8u64, 16, 32] {
            for lambda in [0.01, 0.1, 1.0] {
                let mut t = 1.0;
                while t < 500.0 {
                    let b = general_tail_bound(ell, lambda, t).unwrap();
                    if b.admissible {
                        assert!(b.raw <= cap * (1.0 + 1e-12));
                    }
                    t += 0.5;
                }
            }
        }
    }

    #[test]
    fn t_scale_examples() {
        let t = solve_t_scale(1 << 16, 16).unwrap();
        assert!((t - 9.143).abs() < 1e-3, "{t}");
        assert!((t * (t / E).ln() - 16.0 * LN_2).abs() <= 1e-9);
        let mut prev = 0.0;
        for ell in 1..=40u32 {
            // λ = 1 along the diagonal.
            let t = solve_t_scale(1u64 << ell, ell).unwrap();
            assert!(t > prev);
            prev = t;
        }
        let mut prev = 0.0;
        for m in [1u64, 10, 100, 1000, 10_000, 100_000] {
            let t = solve_t_scale(m, 20).unwrap();
            assert!(t > prev);
            prev = t;
        }
        assert!(solve_t_scale(0, 4).is_err());
        assert!(solve_t_scale(4, 0).is_err());
    }

    #[test]
    fn one_step_examples() {
        assert_eq!(one_step_f(0.0).unwrap(), 0.0);
        assert_eq!(one_step_f(1.0).unwrap(), 1.0);
        assert!(close(one_step_f(0.1).unwrap(), 0.48, 1e-14));
        assert!(one_step_f(-1.0).is_err());
        assert!(close(ONE_STEP_LIPSCHITZ, 8.0 * 3f64.sqrt(), 1e-15));
        assert!(one_step_inequality_check(1.0, 0.0).unwrap());
        assert!(one_step_inequality_check(2.0, 0.25).unwrap());
        assert!(one_step_inequality_check(0.0, 0.1).is_err());
        assert!(one_step_inequality_check(1.0, 0.3).is_err());
    }

    #[test]
    fn one_step_f_is_lipschitz() {
        let mut u = 0.0;
        while u < 0.5 {
            let h = 1e-4;
            let slope = (one_step_f(u + h).unwrap() - one_step_f(u).unwrap()) / h;
            assert!((0.0..=ONE_STEP_LIPSCHITZ + 1e-6).contains(&slope), "u={u}");
            u += 1e-3;
        }
    }

    #[test]
    fn expectation_bound_structure() {
        let k = Constants::balanced();
        let mut prev = f64::INFINITY;
        for e in [10u32, 12, 14, 16, 20] {
            let b = expected_maxload_upper_bound(1u64 << e).unwrap();
            assert!(b.bound > b.scale);
            assert!(b.ratio > 1.0 && b.ratio < prev);
            assert!(b.ratio <= 16.0);
            assert!(b.r0 >= b.r0_asymptotic);
            prev = b.ratio;
            assert!(matches!(
                expected_maxload_upper_bound_with(1u64 << e, StartRule::Asymptotic, &k),
                Err(Error::Inadmissible { .. })
            ));
        }
        let threshold = asymptotic_rule_threshold(&k);
        assert!(threshold > 100.0 && threshold < 130.0, "{threshold}");
        assert!(expected_maxload_upper_bound(3).is_err());
    }

    #[test]
    fn expectation_integral_matches_closed_form() {
        // With the clamp at 1 the integral splits into a flat part on
        // [R0, R_clamp] and the exact integral of C(ln ℓ)²ℓ^{−2x} beyond.
        let k = Constants::balanced();
        for e in [10u32, 16, 20] {
            let ell = 1u64 << e;
            let b = expected_maxload_upper_bound(ell).unwrap();
            let ln_ell = (ell as f64).ln();
            let (mut lo, mut hi) = (b.r0, 100.0);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if maxload_tail_bound(ell, mid).unwrap().raw > 1.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            let r_clamp = hi.max(b.r0);
            let xs = 1.0 - 1.0 / r_clamp;
            let analytic = (r_clamp - b.r0)
                + k.c * ln_ell * ((-2.0 * xs * ln_ell).exp() - (-2.0 * ln_ell).exp()) / 2.0;
            assert!(close(b.integral + b.tail, analytic, 1e-6), "{e}");
        }
    }
}
