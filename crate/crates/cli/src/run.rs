use std::fs::{self, File};
use std::io::{self, BufWriter, Write};

use linhash_core::experiments::{self, BaseChoice, LemmaGate, MaxLoad, Sharpness};
use linhash_core::potential::{sample_kernel_chain, trace_potentials, verify_growth};
use linhash_core::rng::{stream, SETUP_STREAM};
use linhash_core::theory::{self, Constants, StartRule};
use linhash_core::{
    io as lio, BitVector, Error, ExperimentSpec, KeyKind, KeySet, Result, TailEstimate, Threshold,
};
use serde::Serialize;

use crate::args::*;

/// What a successful run found.
pub enum Outcome {
    Clean,
    /// An invariant or admissible bound was contradicted by the data.
    Falsified(String),
}

pub fn run(cli: &Cli) -> Result<Outcome> {
    let c = &cli.common;
    match &cli.command {
        Command::Bound(a) => bound(c, a),
        Command::Pmf(a) => pmf(c, a),
        Command::SolveT(a) => solve_t(c, a),
        Command::ExpectationBound(a) => expectation_bound(c, a),
        Command::McFixedBucket(a) => fixed_bucket(c, a),
        Command::McMaxLoad(a) => max_load(c, a),
        Command::McSurjectivity(a) => surjectivity(c, a),
        Command::Sharpness(a) => sharpness(c, a),
        Command::PotentialTrace(a) => potential_trace(c, a),
        Command::VerifyLemmas(a) => verify_lemmas(c, a),
    }
}

fn emit<T: Serialize>(c: &Common, rows: &[T]) -> Result<()> {
    let out: Box<dyn Write> = match &c.output {
        Some(path) => Box::new(BufWriter::new(File::create(path)?)),
        None => Box::new(io::stdout().lock()),
    };
    match c.format {
        Format::Csv => lio::write_csv_rows(out, rows),
        Format::Json => lio::write_json_rows(out, rows),
    }
}

fn need<T>(value: Option<T>, flag: &str, kind: &str) -> Result<T> {
    value.ok_or_else(|| Error::InvalidInput(format!("--kind {kind} needs {flag}")))
}

fn falsified_if(rows: &[TailEstimate]) -> Outcome {
    match rows.iter().find(|e| e.falsified()) {
        Some(e) => Outcome::Falsified(format!(
            "{}: ci_low {:.6e} exceeds the admissible bound {:.6e}",
            e.name,
            e.ci_low,
            e.theory_bound.unwrap_or(f64::NAN)
        )),
        None => Outcome::Clean,
    }
}

#[derive(Serialize)]
struct ValueRow {
    kind: &'static str,
    value: f64,
}

#[derive(Serialize)]
struct TailRow {
    kind: &'static str,
    value: f64,
    raw: f64,
    admissible: bool,
}

#[derive(Serialize)]
struct SurjectivityRow {
    kind: &'static str,
    exact: f64,
    bound: f64,
}

fn bound(c: &Common, a: &BoundArgs) -> Result<Outcome> {
    match a.kind {
        BoundKind::Fixed => {
            let r = need(a.r, "--r", "fixed")?;
            let value = theory::fixed_bucket_tail_bound(r, a.lambda)?;
            emit(
                c,
                &[ValueRow {
                    kind: "fixed",
                    value,
                }],
            )?;
        }
        BoundKind::Dyadic => {
            let exp = need(a.a, "--a", "dyadic")?;
            let value = theory::dyadic_fixed_bucket_bound(exp, a.lambda)?;
            emit(
                c,
                &[ValueRow {
                    kind: "dyadic",
                    value,
                }],
            )?;
        }
        BoundKind::Maxload => {
            let ell = need(a.ell, "--ell", "maxload")?;
            let r = need(a.big_r, "--R", "maxload")?;
            let k = with_d(Constants::balanced(), a.big_d);
            let b = theory::maxload_tail_bound_with(ell, r, &k)?;
            emit(
                c,
                &[TailRow {
                    kind: "maxload",
                    value: b.value,
                    raw: b.raw,
                    admissible: b.admissible,
                }],
            )?;
        }
        BoundKind::General => {
            let ell = need(a.ell, "--ell", "general")?;
            let t = need(a.big_t, "--T", "general")?;
            let k = with_d(Constants::general(), a.big_d);
            let b = theory::general_tail_bound_with(ell, a.lambda, t, &k)?;
            emit(
                c,
                &[TailRow {
                    kind: "general",
                    value: b.value,
                    raw: b.raw,
                    admissible: b.admissible,
                }],
            )?;
        }
        BoundKind::Surjectivity => {
            let u = need(a.u, "--u", "surjectivity")?;
            let ell = need(a.ell, "--ell", "surjectivity")?;
            let ell =
                u32::try_from(ell).map_err(|_| Error::InvalidInput("--ell is too large".into()))?;
            let s = theory::surjectivity_failure(u, ell)?;
            emit(
                c,
                &[SurjectivityRow {
                    kind: "surjectivity",
                    exact: s.exact,
                    bound: s.bound,
                }],
            )?;
        }
        BoundKind::Gamma => {
            let value = theory::gamma_constant(a.tol)?;
            emit(
                c,
                &[ValueRow {
                    kind: "gamma",
                    value,
                }],
            )?;
        }
    }
    Ok(Outcome::Clean)
}

fn with_d(k: Constants, d: Option<f64>) -> Constants {
    match d {
        Some(d) => k.with_d(d),
        None => k,
    }
}

#[derive(Serialize)]
struct PmfRow {
    a: u32,
    p: f64,
}

fn pmf(c: &Common, a: &PmfArgs) -> Result<Outcome> {
    let rows = match (a.square, a.ell, a.d) {
        (Some(m), _, _) => (0..=m)
            .map(|k| {
                Ok(PmfRow {
                    a: k,
                    p: theory::square_nullity_pmf(m, k)?,
                })
            })
            .collect::<Result<Vec<_>>>()?,
        (None, Some(ell), Some(d)) => (d.saturating_sub(ell)..=d)
            .map(|k| {
                Ok(PmfRow {
                    a: k,
                    p: theory::rect_rank_pmf(ell, d, k)?,
                })
            })
            .collect::<Result<Vec<_>>>()?,
        _ => {
            return Err(Error::InvalidInput(
                "pmf needs --square or both --ell and --d".into(),
            ))
        }
    };
    emit(c, &rows)?;
    Ok(Outcome::Clean)
}

#[derive(Serialize)]
struct ScaleRow {
    m: u64,
    ell: u32,
    lambda: f64,
    t: f64,
    /// `t / (ℓ / log ℓ)`.
    ratio: f64,
}

fn solve_t(c: &Common, a: &SolveTArgs) -> Result<Outcome> {
    let t = theory::solve_t_scale(a.m, a.ell)?;
    let ell = a.ell as f64;
    emit(
        c,
        &[ScaleRow {
            m: a.m,
            ell: a.ell,
            lambda: a.m as f64 * (-ell).exp2(),
            t,
            ratio: if a.ell >= 2 {
                t * ell.log2() / ell
            } else {
                f64::NAN
            },
        }],
    )?;
    Ok(Outcome::Clean)
}

fn expectation_bound(c: &Common, a: &ExpectationArgs) -> Result<Outcome> {
    let rule = if a.strict {
        StartRule::Asymptotic
    } else {
        StartRule::AdmissibleFloor
    };
    let b = theory::expected_maxload_upper_bound_with(a.ell, rule, &Constants::balanced())?;
    emit(c, &[b])?;
    Ok(Outcome::Clean)
}

fn key_kind(u: usize, m: usize, src: &KeySource) -> KeyKind {
    match (&src.keys_file, src.keys) {
        (Some(path), _) => KeyKind::FromFile(path.clone()),
        (None, KeysArg::Random) => KeyKind::RandomDistinctNonzero { u, m },
        (None, KeysArg::Subspace) => KeyKind::SubspacePlusOne { u, m },
    }
}

fn base_spec(
    c: &Common,
    name: String,
    u: usize,
    ell: usize,
    m: usize,
    threshold: Threshold,
    trials: u64,
) -> ExperimentSpec {
    ExperimentSpec::new(name, u, ell, m, threshold)
        .trials(trials)
        .seed(c.seed)
        .threads(c.threads)
}

fn fixed_bucket(c: &Common, a: &FixedBucketArgs) -> Result<Outcome> {
    let name = format!("fixed_bucket_u{}_l{}_m{}_r{}", a.u, a.ell, a.m, a.r);
    let mut spec = base_spec(c, name, a.u, a.ell, a.m, Threshold::Count(a.r), a.trials);
    spec.key_kind = key_kind(a.u, a.m, &a.source);
    spec.surjective_only = a.surjective;
    spec.z = a.z;
    if let Some(hex) = &a.bucket {
        spec.bucket = Some(BitVector::from_hex(a.ell, hex)?);
    }
    let rows = match a.sweep {
        Some(count) => experiments::mc_fixed_bucket_sweep(&spec, count)?,
        None => vec![experiments::mc_fixed_bucket_tail(&spec)?],
    };
    emit(c, &rows)?;
    Ok(falsified_if(&rows))
}

/// The columns of a [`TailEstimate`] followed by the mean-load columns.
#[derive(Serialize)]
struct MaxLoadRow {
    name: String,
    u: usize,
    ell: usize,
    m: usize,
    threshold: Threshold,
    trials: u64,
    successes: u64,
    p_hat: f64,
    ci_low: f64,
    ci_high: f64,
    theory_bound: Option<f64>,
    admissible: Option<bool>,
    seed: u64,
    mean_load: f64,
    mean_ci_low: f64,
    mean_ci_high: f64,
    mean_ratio: f64,
}

impl From<MaxLoad> for MaxLoadRow {
    fn from(r: MaxLoad) -> Self {
        let t = r.tail;
        Self {
            name: t.name,
            u: t.u,
            ell: t.ell,
            m: t.m,
            threshold: t.threshold,
            trials: t.trials,
            successes: t.successes,
            p_hat: t.p_hat,
            ci_low: t.ci_low,
            ci_high: t.ci_high,
            theory_bound: t.theory_bound,
            admissible: t.admissible,
            seed: t.seed,
            mean_load: r.mean_load,
            mean_ci_low: r.mean_ci.0,
            mean_ci_high: r.mean_ci.1,
            mean_ratio: r.mean_ratio,
        }
    }
}

fn max_load(c: &Common, a: &MaxLoadArgs) -> Result<Outcome> {
    let t = match (a.big_t, a.big_r) {
        (Some(t), _) => t,
        (None, Some(r)) if a.ell >= 2 => r * a.ell as f64 / (a.ell as f64).log2(),
        (None, Some(_)) => return Err(Error::InvalidInput("--R needs ell >= 2".into())),
        (None, None) => return Err(Error::InvalidInput("mc-max-load needs --T or --R".into())),
    };
    let name = format!("max_load_u{}_l{}_m{}_T{t}", a.u, a.ell, a.m);
    let mut spec = base_spec(c, name, a.u, a.ell, a.m, Threshold::Real(t), a.trials);
    spec.key_kind = key_kind(a.u, a.m, &a.source);
    spec.surjective_only = a.surjective;
    spec.z = a.z;
    let result = experiments::mc_max_load(&spec)?;
    let outcome = falsified_if(std::slice::from_ref(&result.tail));
    emit(c, &[MaxLoadRow::from(result)])?;
    Ok(outcome)
}

fn surjectivity(c: &Common, a: &SurjectivityArgs) -> Result<Outcome> {
    let e = experiments::mc_surjectivity(a.u, a.ell, a.trials, c.seed, c.threads)?;
    let rows = [e];
    emit(c, &rows)?;
    Ok(falsified_if(&rows))
}

#[derive(Serialize)]
struct SharpnessRow {
    name: String,
    d: usize,
    ell: usize,
    m: usize,
    threshold: Threshold,
    trials: u64,
    successes: u64,
    p_hat: f64,
    ci_low: f64,
    ci_high: f64,
    exact: f64,
    lower: f64,
    upper: f64,
    seed: u64,
}

impl From<Sharpness> for SharpnessRow {
    fn from(s: Sharpness) -> Self {
        let e = s.estimate;
        Self {
            name: e.name,
            d: e.u - 1,
            ell: e.ell,
            m: e.m,
            threshold: e.threshold,
            trials: e.trials,
            successes: e.successes,
            p_hat: e.p_hat,
            ci_low: e.ci_low,
            ci_high: e.ci_high,
            exact: s.exact,
            lower: s.lower,
            upper: s.upper,
            seed: e.seed,
        }
    }
}

fn sharpness(c: &Common, a: &SharpnessArgs) -> Result<Outcome> {
    let s =
        experiments::subspace_sharpness_experiment(a.d, a.ell, a.a, a.trials, c.seed, c.threads)?;
    let z = s.estimate.z;
    let outcome = if !s.within_sandwich(z) {
        Outcome::Falsified(format!(
            "p_hat {:.6e} lies outside [{:.6e}, {:.6e}] beyond {z} sigma",
            s.estimate.p_hat, s.lower, s.upper
        ))
    } else {
        Outcome::Clean
    };
    emit(c, &[SharpnessRow::from(s)])?;
    Ok(outcome)
}

#[derive(Serialize)]
struct TraceSummary {
    chain: u64,
    base: f64,
    k: usize,
    phi_0: f64,
    phi_k: f64,
    log_phi_k: f64,
    growth: bool,
}

fn potential_trace(c: &Common, a: &TraceArgs) -> Result<Outcome> {
    if a.ell == 0 || a.ell > a.u || a.u > 63 {
        return Err(Error::InvalidInput(format!(
            "need 1 <= ell <= u <= 63, got u = {}, ell = {}",
            a.u, a.ell
        )));
    }
    if a.chains == 0 {
        return Err(Error::InvalidInput("chains must be at least 1".into()));
    }
    let b = match (a.base.b, a.base.big_r) {
        (Some(b), _) => BaseChoice::Fixed(b),
        (None, Some(r)) => BaseChoice::Optimized(r),
        (None, None) => BaseChoice::Fixed(2.0),
    }
    .resolve(a.ell)?;
    let m =
        a.m.unwrap_or_else(|| (1usize << a.ell).min((1usize << a.u) - 1));
    let keys = KeySet::random_distinct_nonzero(a.u, m, &mut stream(c.seed, SETUP_STREAM))?;
    if let Some(dir) = &a.trace_dir {
        fs::create_dir_all(dir)?;
    }

    let mut summaries = Vec::new();
    let mut single = None;
    for i in 0..a.chains {
        let chain = sample_kernel_chain(a.u, a.u - a.ell, &mut stream(c.seed, i))?;
        let trace = trace_potentials(&keys, &chain, b)?;
        if let Some(dir) = &a.trace_dir {
            let file = File::create(dir.join(format!("chain_{i}.csv")))?;
            lio::write_trace_csv(BufWriter::new(file), &trace)?;
        }
        summaries.push(TraceSummary {
            chain: i,
            base: b,
            k: trace.k,
            phi_0: trace.phi(0),
            phi_k: trace.phi(trace.k),
            log_phi_k: trace.log_phi[trace.k],
            growth: verify_growth(&trace),
        });
        if a.chains == 1 && a.trace_dir.is_none() {
            single = Some(trace);
        }
    }

    match (single, c.format) {
        (Some(trace), Format::Csv) => {
            let out: Box<dyn Write> = match &c.output {
                Some(path) => Box::new(BufWriter::new(File::create(path)?)),
                None => Box::new(io::stdout().lock()),
            };
            lio::write_trace_csv(out, &trace)?;
        }
        _ => emit(c, &summaries)?,
    }

    let failed = summaries.iter().filter(|s| !s.growth).count();
    Ok(if failed > 0 {
        Outcome::Falsified(format!(
            "growth failed on {failed} of {} chains",
            summaries.len()
        ))
    } else {
        Outcome::Clean
    })
}

#[derive(Serialize)]
struct LemmaTailRow {
    instances: u64,
    growth_failures: u64,
    heavy_bin_failures: u64,
    expectation_checks: u64,
    expectation_failures: u64,
    merge_checks: u64,
    merge_failures: u64,
    base: f64,
    tau_minus_one: f64,
    chains: usize,
    successes: usize,
    empirical: f64,
    bound: f64,
    holds: bool,
}

fn verify_lemmas(c: &Common, a: &LemmaArgs) -> Result<Outcome> {
    let mut gate = LemmaGate::new(vec![a.u], vec![a.ell], a.trials, c.seed);
    gate.threads = c.threads;
    gate.exhaustive_max_codim = a.exhaustive_max_codim;
    if let Some(b) = a.b {
        gate.bases = vec![BaseChoice::Fixed(b)];
    }
    let report = experiments::verify_lemmas(&gate)?;
    let verdict = |failures: u64| if failures == 0 { "passed" } else { "FAILED" };
    eprintln!(
        "growth {} ({} instances); heavy bin {}; conditional expectation {} ({} exhaustive steps); merge identity {} ({} checks)",
        verdict(report.growth_failures),
        report.instances,
        verdict(report.heavy_bin_failures),
        verdict(report.expectation_failures),
        report.expectation_checks,
        verdict(report.merge_failures),
        report.merge_checks,
    );

    let mut problems = Vec::new();
    if !report.passed() {
        problems.push("a potential lemma check failed".to_string());
    }
    match a.tail_r {
        None => emit(c, &[report])?,
        Some(r) => {
            let run = experiments::mc_quadratic_tail(a.u, a.ell, r, a.trials, c.seed, c.threads)?;
            let holds = run.holds(experiments::DEFAULT_Z);
            eprintln!(
                "quadratic tail {} (empirical {:.4e}, bound {:.4e})",
                if holds { "passed" } else { "FAILED" },
                run.check.empirical,
                run.check.bound
            );
            if !holds {
                problems.push("the quadratic potential tail exceeds its bound".to_string());
            }
            emit(
                c,
                &[LemmaTailRow {
                    instances: report.instances,
                    growth_failures: report.growth_failures,
                    heavy_bin_failures: report.heavy_bin_failures,
                    expectation_checks: report.expectation_checks,
                    expectation_failures: report.expectation_failures,
                    merge_checks: report.merge_checks,
                    merge_failures: report.merge_failures,
                    base: run.base,
                    tau_minus_one: run.tau_minus_one,
                    chains: run.check.trials,
                    successes: run.check.successes,
                    empirical: run.check.empirical,
                    bound: run.check.bound,
                    holds,
                }],
            )?;
        }
    }
    Ok(if problems.is_empty() {
        Outcome::Clean
    } else {
        Outcome::Falsified(problems.join("; "))
    })
}
