mod config;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};

use roughquant::experiments::{enhanced_rate, mv_rate, MvRateOptions};
use roughquant::gaussian::truncation_rate;
use roughquant::mckean::{gaussian_points, mv_quantized_law, mv_quantized_law_random_init};
use roughquant::quant::{quant_level, quantization_rate, train_codebook};
use roughquant::support::{dist_to_support, Skeleton, SkeletonQuery};
use roughquant::wasserstein::{wasserstein_paths, PathMetric};
use roughquant::{SampledPath, WeightedPathMeasure, VERSION};

use config::{ConfigError, ExperimentConfig};

#[derive(Parser)]
#[command(name = "roughquant", version, about = "Quantized Brownian drivers, rough-path rates and McKean–Vlasov laws")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a Hölder-norm codebook for Brownian motion.
    Quantize(RunArgs),
    /// Truncation error of the Schauder expansion against the level.
    RatesTruncation(RunArgs),
    /// Quantization error against the codebook size.
    RatesQuantization(RunArgs),
    /// Level-1 and level-2 rough-path quantization errors.
    RatesEnhanced(RunArgs),
    /// Finite-support McKean–Vlasov law driven by the quantized Brownian law.
    MvSolve(RunArgs),
    /// Wasserstein gap of McKean–Vlasov laws against a large reference size.
    MvRate(RunArgs),
    /// Distance from a target path to the skeleton set.
    SupportDist(SupportArgs),
    /// Wasserstein distance between two path laws.
    Wasserstein(WassersteinArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Output file; overrides `output` in the config. Defaults to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SupportArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// CSV path with columns `t,x1,..,xd`.
    #[arg(long)]
    target: PathBuf,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long = "level-K", alias = "level-k")]
    level_k: Option<u32>,
    /// Objective evaluations per start.
    #[arg(long)]
    budget: Option<usize>,
    #[arg(long)]
    starts: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct WassersteinArgs {
    #[arg(long)]
    mu: PathBuf,
    #[arg(long)]
    nu: PathBuf,
    #[arg(long, default_value_t = 0.4)]
    alpha: f64,
    #[arg(long, default_value_t = 1.0)]
    r: f64,
    /// `holder`, `rho-alpha` or `uniform`.
    #[arg(long, default_value = "holder")]
    metric: PathMetric,
    #[arg(long)]
    #[serde(skip)]
    out: Option<PathBuf>,
}

fn load(args: &RunArgs) -> anyhow::Result<(ExperimentConfig, Option<PathBuf>)> {
    let cfg = ExperimentConfig::load(&args.config)?;
    cfg.validate()?;
    let out = args.out.clone().or_else(|| cfg.output.clone().map(PathBuf::from));
    Ok((cfg, out))
}

fn emit(out: Option<&Path>, bytes: &[u8]) -> anyhow::Result<()> {
    match out {
        Some(path) => std::fs::write(path, bytes).with_context(|| format!("cannot write {}", path.display())),
        None => {
            std::io::stdout().write_all(bytes)?;
            Ok(())
        }
    }
}

#[derive(Serialize)]
struct Envelope<'a, C, R> {
    version: &'a str,
    config: &'a C,
    result: &'a R,
}

fn write_json<C: Serialize, R: Serialize>(out: Option<&Path>, config: &C, result: &R) -> anyhow::Result<()> {
    let doc = Envelope { version: VERSION, config, result };
    let mut text = serde_json::to_string_pretty(&doc)?;
    text.push('\n');
    emit(out, text.as_bytes())
}

fn write_csv(
    out: Option<&Path>,
    config: &impl Serialize,
    notes: &[String],
    body: impl FnOnce(&mut Vec<u8>) -> roughquant::Result<()>,
) -> anyhow::Result<()> {
    let mut buf = Vec::new();
    writeln!(buf, "# roughquant {VERSION}")?;
    writeln!(buf, "# config {}", serde_json::to_string(config)?)?;
    for note in notes {
        writeln!(buf, "# {note}")?;
    }
    body(&mut buf)?;
    emit(out, &buf)
}

fn quantize(args: &RunArgs) -> anyhow::Result<()> {
    let (cfg, out) = load(args)?;
    let (codebook, report) = train_codebook(&cfg.sampler()?, cfg.n, cfg.alpha, &cfg.quant_options())?;
    let support_size = cfg.n.checked_pow(cfg.noise_dim as u32);
    let result = json!({ "codebook": codebook, "noise_dim": cfg.noise_dim, "support_size": support_size, "report": report });
    write_json(out.as_deref(), &cfg, &result)
}

fn rates_truncation(args: &RunArgs) -> anyhow::Result<()> {
    let (cfg, out) = load(args)?;
    let table = truncation_rate(&cfg.sampler()?, cfg.alpha, cfg.r, &cfg.levels, cfg.samples)?;
    write_csv(out.as_deref(), &cfg, &[], |buf| table.write_csv(buf))
}

fn rates_quantization(args: &RunArgs) -> anyhow::Result<()> {
    let (cfg, out) = load(args)?;
    let table = quantization_rate(&cfg.sampler()?, cfg.alpha, cfg.r, &cfg.sizes, cfg.samples, &cfg.quant_options())?;
    write_csv(out.as_deref(), &cfg, &[], |buf| table.write_csv(buf))
}

fn rates_enhanced(args: &RunArgs) -> anyhow::Result<()> {
    let (cfg, out) = load(args)?;
    if cfg.noise_dim < 2 {
        return Err(ConfigError { field: "noise_dim".into(), message: "rates-enhanced needs at least 2".into() }.into());
    }
    let table = enhanced_rate(&cfg.sampler()?, cfg.alpha, cfg.r, &cfg.sizes, cfg.samples, cfg.grid_level, &cfg.quant_options())?;
    write_csv(out.as_deref(), &cfg, &[], |buf| table.write_csv(buf))
}

fn mv_solve(args: &RunArgs) -> anyhow::Result<()> {
    let (cfg, out) = load(args)?;
    let coeffs = cfg.require_coefficients()?.build()?;
    let sampler = cfg.sampler()?;
    let (grid, opts) = (cfg.grid(), cfg.quant_options());
    let law = match &cfg.initial_law {
        Some(init) => {
            let points = gaussian_points(&init.mean, init.std, init.samples, cfg.seed);
            mv_quantized_law_random_init(coeffs.as_ref(), &sampler, &points, cfg.n, init.m, cfg.alpha, &grid, &opts)?
        }
        None => mv_quantized_law(coeffs.as_ref(), &sampler, cfg.n, cfg.alpha, &cfg.xi, &grid, &opts)?,
    };
    write_json(out.as_deref(), &cfg, &law)
}

fn mv_rate_cmd(args: &RunArgs) -> anyhow::Result<()> {
    let (cfg, out) = load(args)?;
    let coeffs = cfg.require_coefficients()?.build()?;
    let opts = MvRateOptions { metric: cfg.metric, stride: cfg.stride, samples: cfg.samples };
    let table = mv_rate(
        coeffs.as_ref(),
        &cfg.sampler()?,
        &cfg.xi,
        cfg.alpha,
        &cfg.sizes,
        cfg.reference,
        &cfg.grid(),
        &cfg.quant_options(),
        &opts,
    )?;
    let notes = [format!("reference {} mean_end {}", table.reference, table.reference_mean_end)];
    write_csv(out.as_deref(), &cfg, &notes, |buf| table.write_csv(buf))
}

fn support_dist(args: &SupportArgs) -> anyhow::Result<()> {
    let mut cfg = match &args.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(n) = args.n {
        cfg.n = n;
    }
    if let Some(alpha) = args.alpha {
        cfg.alpha = alpha;
    }
    if let Some(level) = args.level_k {
        cfg.search_level = Some(level);
    }
    if let Some(budget) = args.budget {
        cfg.budget = budget;
    }
    if let Some(starts) = args.starts {
        cfg.starts = starts;
    }
    cfg.validate()?;
    let coeffs = cfg.require_coefficients()?.build()?;
    let file = std::fs::File::open(&args.target).with_context(|| format!("cannot read {}", args.target.display()))?;
    let target = SampledPath::read_csv(file)?;
    if target.horizon() != cfg.horizon {
        return Err(ConfigError { field: "horizon".into(), message: "must equal the target's final time".into() }.into());
    }
    let skel = Skeleton::quantized(coeffs.as_ref(), &cfg.sampler()?, cfg.n, cfg.alpha, cfg.xi.clone(), target.grid(), &cfg.quant_options())?;
    let level = match cfg.search_level {
        Some(level) => level,
        None => quant_level(cfg.n, cfg.alpha, cfg.level_cap)?,
    };
    let query = SkeletonQuery { budget: cfg.budget, starts: cfg.starts, seed: cfg.seed, ..SkeletonQuery::new(target, level, 1e-3)? };
    let found = dist_to_support(&query, &skel, cfg.alpha)?;
    let result = json!({
        "distance": found.distance,
        "h_coeffs": found.h,
        "flag": found.flag,
        "evaluations": found.evaluations,
    });
    let out = args.out.clone().or_else(|| cfg.output.clone().map(PathBuf::from));
    write_json(out.as_deref(), &cfg, &result)
}

/// Reads a path law, either bare or wrapped in a command output document.
fn read_law(path: &Path) -> anyhow::Result<WeightedPathMeasure> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    let mut value: Value = serde_json::from_str(&text).with_context(|| format!("{} is not JSON", path.display()))?;
    if let Some(inner) = value.get_mut("result") {
        value = inner.take();
    }
    serde_json::from_value(value).with_context(|| format!("{} is not a path law", path.display()))
}

fn wasserstein_cmd(args: &WassersteinArgs) -> anyhow::Result<()> {
    if !(args.r >= 1.0) {
        return Err(ConfigError { field: "r".into(), message: "must be at least 1".into() }.into());
    }
    if !(args.alpha > 0.0 && args.alpha < 1.0) {
        return Err(ConfigError { field: "alpha".into(), message: "must lie in (0, 1)".into() }.into());
    }
    let (mu, nu) = (read_law(&args.mu)?, read_law(&args.nu)?);
    let t = wasserstein_paths(&mu, &nu, args.alpha, args.r, args.metric)?;
    let result = json!({ "value": t.value, "cost": t.cost, "coupling": t.coupling });
    write_json(args.out.as_deref(), args, &result)
}

fn run(cli: &Cli) -> anyhow::Result<()> {
    match &cli.command {
        Command::Quantize(a) => quantize(a),
        Command::RatesTruncation(a) => rates_truncation(a),
        Command::RatesQuantization(a) => rates_quantization(a),
        Command::RatesEnhanced(a) => rates_enhanced(a),
        Command::MvSolve(a) => mv_solve(a),
        Command::MvRate(a) => mv_rate_cmd(a),
        Command::SupportDist(a) => support_dist(a),
        Command::Wasserstein(a) => wasserstein_cmd(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.downcast_ref::<ConfigError>().is_some() => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
