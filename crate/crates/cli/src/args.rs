use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Laboratory for binary linear hashing: tail bounds, rank distributions,
/// the kernel-chain potential and seeded Monte Carlo campaigns.
#[derive(Debug, Parser)]
#[command(name = "linhash", version, propagate_version = true)]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Master seed; trial i uses random stream i under this seed.
    #[arg(long, global = true, env = "LINHASH_SEED", default_value_t = 0)]
    pub seed: u64,

    /// Worker threads; 0 uses the available parallelism. Results do not
    /// depend on this value.
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,

    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    pub format: Format,

    /// Write results here instead of standard output.
    #[arg(long, global = true)]
    pub output: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    Bound(BoundArgs),
    Pmf(PmfArgs),
    SolveT(SolveTArgs),
    ExpectationBound(ExpectationArgs),
    McFixedBucket(FixedBucketArgs),
    McMaxLoad(MaxLoadArgs),
    McSurjectivity(SurjectivityArgs),
    Sharpness(SharpnessArgs),
    PotentialTrace(TraceArgs),
    VerifyLemmas(LemmaArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum BoundKind {
    /// Fixed-bucket tail Pr[Z_y > r] <= λ^a / ∏_{j<a}(r+2-2^j).
    Fixed,
    /// Dyadic form γ^{-1} λ^a 2^{-a²}.
    Dyadic,
    /// Maximum-load tail for 2^ℓ keys at threshold R·ℓ/log ℓ.
    Maxload,
    /// Maximum-load tail for m = λ·2^ℓ keys at threshold T.
    General,
    /// Failure probability of surjectivity and its union bound.
    Surjectivity,
    /// The constant γ = ∏_{j≥1}(1 - 2^{-j}).
    Gamma,
}

/// Evaluate one closed-form bound.
///
/// Kinds: fixed (needs --r), dyadic (--a), maxload (--ell, --R),
/// general (--ell, --T), surjectivity (--u, --ell), gamma.
#[derive(Debug, Args)]
pub struct BoundArgs {
    #[arg(long, value_enum)]
    pub kind: BoundKind,
    #[arg(long)]
    pub r: Option<u64>,
    #[arg(long)]
    pub a: Option<u32>,
    /// Average load λ = m / 2^ℓ.
    #[arg(long, default_value_t = 1.0)]
    pub lambda: f64,
    #[arg(long)]
    pub ell: Option<u64>,
    #[arg(long)]
    pub u: Option<u32>,
    #[arg(long = "R")]
    pub big_r: Option<f64>,
    #[arg(long = "T")]
    pub big_t: Option<f64>,
    /// Override the admissibility constant D.
    #[arg(long = "D")]
    pub big_d: Option<f64>,
    /// Tolerance for --kind gamma.
    #[arg(long, default_value_t = 1e-12)]
    pub tol: f64,
}

/// Nullity distribution of a uniform random matrix over F₂.
///
/// --square M gives the M×M distribution; --ell and --d give the ℓ×d one.
#[derive(Debug, Args)]
pub struct PmfArgs {
    #[arg(long, conflicts_with_all = ["ell", "d"])]
    pub square: Option<u32>,
    #[arg(long, requires = "d")]
    pub ell: Option<u32>,
    #[arg(long, requires = "ell")]
    pub d: Option<u32>,
}

/// Solve t·ln(t/(eλ)) = ln 2^ℓ for the fully independent max-load scale t.
#[derive(Debug, Args)]
pub struct SolveTArgs {
    #[arg(long)]
    pub m: u64,
    #[arg(long)]
    pub ell: u32,
}

/// Numeric upper bound on the expected maximum load for 2^ℓ keys,
/// integrating the maximum-load tail from a start point R₀.
#[derive(Debug, Args)]
pub struct ExpectationArgs {
    /// ℓ itself (not its logarithm), at least 4.
    #[arg(long)]
    pub ell: u64,
    /// Use the asymptotic start point only, failing where it is not
    /// admissible, instead of raising it to the admissibility floor.
    #[arg(long)]
    pub strict: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum KeysArg {
    /// m distinct uniform nonzero vectors.
    Random,
    /// All nonzero vectors of a d-dimensional coordinate subspace plus e_d.
    Subspace,
}

#[derive(Debug, Args)]
pub struct KeySource {
    #[arg(long, value_enum, default_value_t = KeysArg::Random)]
    pub keys: KeysArg,
    /// Read keys from a key-set file instead.
    #[arg(long)]
    pub keys_file: Option<PathBuf>,
}

/// Monte Carlo estimate of the fixed-bucket tail Pr[Z_y > r] against
/// λ^a / ∏_{j<a}(r+2-2^j).
#[derive(Debug, Args)]
pub struct FixedBucketArgs {
    #[arg(long)]
    pub u: usize,
    #[arg(long)]
    pub ell: usize,
    #[arg(long)]
    pub m: usize,
    #[arg(long)]
    pub r: u64,
    #[arg(long, default_value_t = 10_000)]
    pub trials: u64,
    #[command(flatten)]
    pub source: KeySource,
    /// Fixed bucket y as hex; zero by default.
    #[arg(long)]
    pub bucket: Option<String>,
    /// Repeat on this many random buckets instead of one.
    #[arg(long)]
    pub sweep: Option<usize>,
    /// Condition on surjective maps.
    #[arg(long)]
    pub surjective: bool,
    /// Wilson interval z.
    #[arg(long, default_value_t = 3.0)]
    pub z: f64,
}

/// Monte Carlo estimate of the maximum-load tail Pr[M >= T] and of E[M].
#[derive(Debug, Args)]
pub struct MaxLoadArgs {
    #[arg(long)]
    pub u: usize,
    #[arg(long)]
    pub ell: usize,
    #[arg(long)]
    pub m: usize,
    /// Threshold T.
    #[arg(long = "T", conflicts_with = "big_r")]
    pub big_t: Option<f64>,
    /// Threshold as a multiple of ℓ/log ℓ.
    #[arg(long = "R")]
    pub big_r: Option<f64>,
    #[arg(long, default_value_t = 1000)]
    pub trials: u64,
    #[command(flatten)]
    pub source: KeySource,
    #[arg(long)]
    pub surjective: bool,
    #[arg(long, default_value_t = 3.0)]
    pub z: f64,
}

/// Monte Carlo estimate of Pr[rank H < ℓ] for a uniform ℓ×U matrix
/// against the exact product and the bound 2^{ℓ-U}.
#[derive(Debug, Args)]
pub struct SurjectivityArgs {
    /// U, the number of columns.
    #[arg(long)]
    pub u: usize,
    #[arg(long)]
    pub ell: usize,
    #[arg(long, default_value_t = 100_000)]
    pub trials: u64,
}

/// Subspace-plus-one construction: estimate Pr[Z_0 > 2^a - 2] between
/// γ²λ^a2^{-a²} and γ^{-1}λ^a2^{-a²}, next to the exact rank-tail value.
#[derive(Debug, Args)]
pub struct SharpnessArgs {
    /// Subspace dimension d; the key set has 2^d keys in F₂^{d+1}.
    #[arg(long)]
    pub d: usize,
    #[arg(long)]
    pub ell: usize,
    #[arg(long)]
    pub a: u32,
    #[arg(long, default_value_t = 100_000)]
    pub trials: u64,
}

#[derive(Debug, Args)]
pub struct BaseArgs {
    /// Potential base b.
    #[arg(long, conflicts_with = "big_r")]
    pub b: Option<f64>,
    /// Use the optimized base e·ℓ^{1/R}.
    #[arg(long = "R")]
    pub big_r: Option<f64>,
}

/// Potentials Φ_0..Φ_k along sampled kernel chains of length k = U - ℓ,
/// with the growth Φ_{i+1}-1 >= 2(Φ_i-1) checked on each trace.
#[derive(Debug, Args)]
pub struct TraceArgs {
    #[arg(long)]
    pub u: usize,
    #[arg(long)]
    pub ell: usize,
    /// Number of keys; 2^ℓ by default.
    #[arg(long)]
    pub m: Option<usize>,
    #[command(flatten)]
    pub base: BaseArgs,
    #[arg(long, default_value_t = 1)]
    pub chains: u64,
    /// Write one trace CSV per chain into this directory.
    #[arg(long)]
    pub trace_dir: Option<PathBuf>,
}

/// Runtime checks of the potential lemmas on sampled instances: growth,
/// heavy bin, conditional expectation E[Φ_{i+1}] <= Φ_i² (exhaustive),
/// and the coset merge identity.
#[derive(Debug, Args)]
pub struct LemmaArgs {
    #[arg(long)]
    pub u: usize,
    #[arg(long)]
    pub ell: usize,
    #[arg(long, default_value_t = 100)]
    pub trials: u64,
    /// Fixed base; by default both b = 2 and the optimized base with R = 2.
    #[arg(long)]
    pub b: Option<f64>,
    /// Largest U - i for the exhaustive conditional expectation.
    #[arg(long, default_value_t = 16)]
    pub exhaustive_max_codim: usize,
    /// Also replay the quadratic potential tail with this R.
    #[arg(long = "tail-R")]
    pub tail_r: Option<f64>,
}
