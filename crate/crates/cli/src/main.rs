//! `pdr`: score, evaluate and compare membership-inference runs.
//!
//! Exit codes: 0 success, 1 usage, 2 data validation, 3 internal.

use std::fs::{self, File};
use std::io::{self, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use pdr_core::profile::write_profile_csv;
use pdr_core::sweep::write_sweep_csv;
use pdr_core::weights::{camia_slope, truncation_prefix};
use pdr_core::{
    alpha_sweep, bootstrap_eval, evaluate, fsd_corpus, paired_bootstrap,
    parse_records, parse_scores, position_profile, score_corpus, truncation_sweep, write_records,
    write_scores, Execution, Method, ProfileStat, ScoreSpec, ScoringContext, SelectionStage,
    SequenceRecord, SynthParams, WeightFamily, WeightOrder, WeightSpec, DEFAULT_TARGET_FPR,
};

/// Environment variable setting the default number of worker threads.
const THREADS_ENV: &str = "PDR_THREADS";

#[derive(Debug, Parser)]
#[command(name = "pdr", version, about = "Positional decay reweighting for membership inference scores")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Score every record of a corpus.
    Score(ScoreArgs),
    /// AUROC and TPR at a target FPR for one score file.
    Eval(EvalArgs),
    /// Paired bootstrap test of whether score file A beats score file B.
    Compare(CompareArgs),
    /// AUROC across decay parameters or truncation fractions.
    Sweep(SweepArgs),
    /// Per-position mean of a token statistic.
    Profile(ProfileArgs),
    /// Generate a synthetic corpus.
    Synth(SynthArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Table,
}

#[derive(Debug, Args)]
struct WeightArgs {
    /// Positional weight family; omit for the unweighted baseline.
    #[arg(long, value_parser = parse_family)]
    weights: Option<WeightFamily>,
    /// Decay parameter. Defaults: linear 1.0; exponential 0.02 for ref and
    /// min_k_pp, 0.002 otherwise; polynomial 2.0.
    #[arg(long, allow_negative_numbers = true)]
    alpha: Option<f64>,
    #[arg(long, default_value = "forward", value_parser = parse_order)]
    order: WeightOrder,
    /// Use each record's token-loss slope as the linear decay parameter.
    #[arg(long)]
    alpha_from_slope: bool,
    /// Min-k% fraction in percent.
    #[arg(long, default_value_t = 20.0)]
    k: f64,
    #[arg(long, default_value = "after", value_parser = parse_stage)]
    stage: SelectionStage,
}

#[derive(Debug, Args)]
struct ScoreArgs {
    #[arg(long)]
    input: PathBuf,
    /// Output score file; stdout when omitted.
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long, value_parser = parse_method)]
    method: Method,
    #[command(flatten)]
    weights: WeightArgs,
    /// Keep only this fraction of each sequence (0, 1].
    #[arg(long)]
    truncate: Option<f64>,
    /// Second corpus from a fine-tuned model; emits base minus fine-tuned scores.
    #[arg(long)]
    fsd_with: Option<PathBuf>,
    /// Seed for random weight orderings.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_TARGET_FPR)]
    fpr: f64,
    /// Number of bootstrap replicates (requires --seed).
    #[arg(long)]
    bootstrap: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
}

#[derive(Debug, Args)]
struct CompareArgs {
    #[arg(long)]
    a: PathBuf,
    #[arg(long)]
    b: PathBuf,
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long, default_value_t = 1000)]
    bootstrap: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: Option<PathBuf>,
    /// Comma-separated methods.
    #[arg(long, value_delimiter = ',', default_value = "loss,ref,min_k,min_k_pp", value_parser = parse_method)]
    methods: Vec<Method>,
    #[command(flatten)]
    weights: WeightArgs,
    /// Decay parameters to sweep; defaults to the family's standard grid.
    #[arg(long, value_delimiter = ',', num_args = 0..)]
    alphas: Option<Vec<f64>>,
    /// Sweep retained fractions instead of decay parameters.
    #[arg(long = "truncate", value_delimiter = ',', num_args = 0..)]
    truncate: Option<Vec<f64>>,
    #[arg(long, default_value_t = DEFAULT_TARGET_FPR)]
    fpr: f64,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct ProfileArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long, value_parser = parse_stat)]
    stat: ProfileStat,
    /// Separate member and non-member curves.
    #[arg(long)]
    by_label: bool,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 128)]
    length: usize,
    #[arg(long, default_value_t = 500)]
    members: usize,
    #[arg(long, default_value_t = 500)]
    nonmembers: usize,
    #[arg(long, default_value_t = 6.0)]
    h0: f64,
    #[arg(long, default_value_t = 1.0)]
    h_inf: f64,
    #[arg(long, default_value_t = 0.05)]
    lambda: f64,
    #[arg(long, default_value_t = 1.5)]
    boost0: f64,
    #[arg(long, default_value_t = 0.08)]
    gamma: f64,
    #[arg(long, default_value_t = 1.0)]
    noise: f64,
}

fn parse_method(s: &str) -> Result<Method, String> {
    s.parse()
}
fn parse_family(s: &str) -> Result<WeightFamily, String> {
    s.parse()
}
fn parse_order(s: &str) -> Result<WeightOrder, String> {
    s.parse()
}
fn parse_stage(s: &str) -> Result<SelectionStage, String> {
    s.parse()
}
fn parse_stat(s: &str) -> Result<ProfileStat, String> {
    s.parse()
}

#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Failure { code: 1, message: message.into() }
    }
}

impl From<pdr_core::Error> for Failure {
    fn from(e: pdr_core::Error) -> Self {
        let code = match &e {
            pdr_core::Error::Io(io) if io.kind() == io::ErrorKind::BrokenPipe => 0,
            pdr_core::Error::Parameter(_) => 1,
            e if e.is_data_error() => 2,
            _ => 3,
        };
        Failure { code, message: e.to_string() }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        let code = if e.kind() == io::ErrorKind::BrokenPipe { 0 } else { 3 };
        Failure { code, message: e.to_string() }
    }
}

type CliResult<T = ()> = Result<T, Failure>;

fn open(path: &Path) -> CliResult<Box<dyn Read>> {
    if path.as_os_str() == "-" {
        return Ok(Box::new(io::stdin()));
    }
    File::open(path)
        .map(|f| Box::new(f) as Box<dyn Read>)
        .map_err(|e| Failure::usage(format!("cannot open {}: {e}", path.display())))
}

fn read_corpus(path: &Path) -> CliResult<Vec<SequenceRecord>> {
    parse_records(open(path)?).map_err(|e| {
        let mut f = Failure::from(e);
        f.message = format!("{}: {}", path.display(), f.message);
        f
    })
}

fn read_scores(path: &Path) -> CliResult<Vec<pdr_core::ScoredSample>> {
    parse_scores(open(path)?).map_err(|e| {
        let mut f = Failure::from(e);
        f.message = format!("{}: {}", path.display(), f.message);
        f
    })
}

/// Writes via `emit` to `path` (or stdout). A failed write removes the file.
fn write_output(
    path: Option<&Path>,
    emit: impl FnOnce(&mut dyn Write) -> pdr_core::Result<()>,
) -> CliResult {
    match path {
        None => {
            let stdout = io::stdout();
            let mut lock = stdout.lock();
            emit(&mut lock)?;
            Ok(())
        }
        Some(p) => {
            let mut out = BufWriter::new(File::create(p)?);
            let result = emit(&mut out).and_then(|_| out.flush().map_err(Into::into));
            if let Err(e) = result {
                drop(out);
                let _ = fs::remove_file(p);
                return Err(e.into());
            }
            Ok(())
        }
    }
}

fn write_text(path: Option<&Path>, text: &str) -> CliResult {
    write_output(path, |w| Ok(w.write_all(text.as_bytes())?))
}

fn default_alpha(family: WeightFamily, method: Method) -> f64 {
    match family {
        WeightFamily::Linear => 1.0,
        WeightFamily::Exponential => match method {
            Method::Ref | Method::MinKPp => 0.02,
            _ => 0.002,
        },
        WeightFamily::Polynomial => 2.0,
        _ => 0.0,
    }
}

fn weight_spec(args: &WeightArgs, method: Method, seed: Option<u64>) -> CliResult<Option<WeightSpec>> {
    let Some(family) = args.weights else {
        if args.alpha.is_some() || args.alpha_from_slope {
            return Err(Failure::usage("--alpha and --alpha-from-slope need --weights"));
        }
        return Ok(None);
    };
    let mut spec = WeightSpec::new(family, args.alpha.unwrap_or_else(|| default_alpha(family, method)));
    if args.order == WeightOrder::Random {
        let seed = seed.ok_or_else(|| Failure::usage("--order random requires --seed"))?;
        spec = spec.with_ordering(WeightOrder::Random, seed);
    } else {
        spec = spec.with_ordering(args.order, 0);
    }
    if args.alpha_from_slope {
        spec = spec.with_slope_alpha();
    }
    Ok(Some(spec))
}

fn score_spec(args: &WeightArgs, method: Method, seed: Option<u64>) -> CliResult<ScoreSpec> {
    let mut spec = ScoreSpec::new(method)
        .with_k(args.k)
        .with_stage(args.stage);
    spec.weights = weight_spec(args, method, seed)?;
    spec.validate()?;
    Ok(spec)
}

fn run_score(args: ScoreArgs, exec: Execution) -> CliResult {
    let mut spec = score_spec(&args.weights, args.method, args.seed)?;
    spec.truncation_rho = args.truncate;
    spec.validate()?;
    let records = read_corpus(&args.input)?;
    if args.weights.alpha_from_slope {
        report_slopes(&records, spec.truncation_rho)?;
    }
    let ctx = ScoringContext::for_corpus(&spec, &records)?;
    let scores = match &args.fsd_with {
        Some(ft_path) => {
            let finetuned = read_corpus(ft_path)?;
            fsd_corpus(&spec, &records, &finetuned, &ctx, exec)?
        }
        None => score_corpus(&spec, &records, &ctx, exec)?,
    };
    write_output(args.output.as_deref(), |w| write_scores(w, &scores))
}

/// Slope-derived decay parameters are used unclamped, so report their range.
fn report_slopes(records: &[SequenceRecord], rho: Option<f64>) -> CliResult {
    let mut slopes = Vec::new();
    for r in records {
        let t = match rho {
            Some(rho) => truncation_prefix(rho, r.len())?,
            None => r.len(),
        };
        if t >= 2 {
            let losses: Vec<f64> = r.logp[..t].iter().map(|lp| -lp).collect();
            slopes.push(camia_slope(&losses)?);
        }
    }
    if slopes.is_empty() {
        return Ok(());
    }
    let min = slopes.iter().copied().fold(f64::INFINITY, f64::min);
    let max = slopes.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let outside = slopes.iter().filter(|a| !(0.0..=1.0).contains(*a)).count();
    eprintln!(
        "loss slope as alpha: min {min:.6}, max {max:.6}, {outside} of {} outside [0, 1]",
        slopes.len()
    );
    Ok(())
}

fn run_eval(args: EvalArgs, exec: Execution) -> CliResult {
    let scores = read_scores(&args.input)?;
    let report = match args.bootstrap {
        Some(n) => {
            let seed = args.seed.ok_or_else(|| Failure::usage("--bootstrap requires --seed"))?;
            bootstrap_eval(&scores, n, seed, args.fpr, exec)?
        }
        None => evaluate(&scores, args.fpr)?,
    };
    let text = match args.format {
        Format::Json => report.to_json_line(),
        Format::Table => report.to_table(),
    };
    write_text(args.output.as_deref(), &text)
}

fn run_compare(args: CompareArgs, exec: Execution) -> CliResult {
    let seed = args.seed.ok_or_else(|| Failure::usage("compare requires --seed"))?;
    let a = read_scores(&args.a)?;
    let b = read_scores(&args.b)?;
    let report = paired_bootstrap(&a, &b, args.bootstrap, seed, exec)?;
    let text = match args.format {
        Format::Json => report.to_json_line(),
        Format::Table => report.to_table(),
    };
    write_text(args.output.as_deref(), &text)
}

fn run_sweep(args: SweepArgs, exec: Execution) -> CliResult {
    if args.methods.is_empty() {
        return Err(Failure::usage("--methods is empty"));
    }
    let records = read_corpus(&args.input)?;
    let rows = match &args.truncate {
        Some(rhos) => {
            if args.alphas.is_some() {
                return Err(Failure::usage("--alphas and --truncate are exclusive"));
            }
            // the template's weights (if any) apply to every method
            let template = score_spec(&args.weights, args.methods[0], args.seed)?;
            truncation_sweep(&records, &args.methods, &template, rhos, args.fpr, exec)?
        }
        None => {
            let family = args.weights.weights.unwrap_or(WeightFamily::Linear);
            let alphas: Vec<f64> = match &args.alphas {
                Some(a) => a.clone(),
                None => family.default_alpha_grid().to_vec(),
            };
            if alphas.is_empty() {
                return Err(Failure::usage("--alphas is empty"));
            }
            let wargs = WeightArgs {
                weights: Some(family),
                alpha: Some(alphas[0]),
                ..args.weights
            };
            let template = ScoreSpec::new(args.methods[0])
                .with_k(wargs.k)
                .with_stage(wargs.stage);
            let weights = weight_spec(&wargs, args.methods[0], args.seed)?
                .expect("family is set");
            alpha_sweep(&records, &args.methods, &template, &weights, &alphas, args.fpr, exec)?
        }
    };
    write_output(args.output.as_deref(), |w| write_sweep_csv(w, &rows))
}

fn run_profile(args: ProfileArgs) -> CliResult {
    let records = read_corpus(&args.input)?;
    let series = position_profile(&records, args.stat, args.by_label)?;
    write_output(args.output.as_deref(), |w| write_profile_csv(w, &series))
}

fn run_synth(args: SynthArgs, exec: Execution) -> CliResult {
    let seed = args.seed.ok_or_else(|| Failure::usage("synth requires --seed"))?;
    let params = SynthParams {
        length: args.length,
        n_members: args.members,
        n_nonmembers: args.nonmembers,
        h0: args.h0,
        h_inf: args.h_inf,
        lambda: args.lambda,
        boost0: args.boost0,
        gamma: args.gamma,
        noise: args.noise,
        seed,
    };
    let records = pdr_core::synthgen::generate_corpus_with(&params, exec)?;
    write_output(args.output.as_deref(), |w| write_records(w, &records))
}

#[cfg(feature = "parallel")]
fn configure_threads() -> CliResult {
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .parse()
            .map_err(|_| Failure::usage(format!("{THREADS_ENV} must be a positive integer, got {v:?}")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure { code: 3, message: e.to_string() })?;
    }
    Ok(())
}

#[cfg(not(feature = "parallel"))]
fn configure_threads() -> CliResult {
    let _ = THREADS_ENV;
    Ok(())
}

fn run(cli: Cli) -> CliResult {
    configure_threads()?;
    let exec = Execution::default();
    match cli.command {
        Command::Score(a) => run_score(a, exec),
        Command::Eval(a) => run_eval(a, exec),
        Command::Compare(a) => run_compare(a, exec),
        Command::Sweep(a) => run_sweep(a, exec),
        Command::Profile(a) => run_profile(a),
        Command::Synth(a) => run_synth(a, exec),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        // downstream reader went away (e.g. `| head`)
        Err(f) if f.code == 0 => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
