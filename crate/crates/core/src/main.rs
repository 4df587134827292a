use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use star_ris_ee::harness::{run_sweep, write_csv, write_csv_file, ExperimentConfig, Preset, SweepKey};
use star_ris_ee::schemes::{AoSettings, Scheme};
use star_ris_ee::{Error, Result};

#[derive(Parser)]
#[command(name = "star-ris-ee", version, about = "Energy-efficiency sweeps for a STAR-RIS assisted full-duplex link")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Monte-Carlo sweep over one parameter; writes one CSV row per value and scheme.
    Sweep(SweepArgs),
    /// One realization with line-delimited JSON diagnostics.
    Single(SingleArgs),
}

#[derive(Args)]
struct Common {
    /// TOML file with experiment settings.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Base settings the config file and flags are applied over.
    #[arg(long, value_parser = parse::<Preset>)]
    preset: Option<Preset>,
    /// Comma-separated scheme names, e.g. SR-FD-EEM,CR-FD-EEM.
    #[arg(long, value_delimiter = ',', value_parser = parse::<Scheme>)]
    schemes: Option<Vec<Scheme>>,
    /// Output file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    /// elements, rsi (dB), pumax (dBm) or ps (dBm).
    #[arg(long, value_parser = parse::<SweepKey>)]
    sweep: Option<SweepKey>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    values: Option<Vec<f64>>,
    #[arg(long)]
    realizations: Option<usize>,
    /// First channel seed; realizations use consecutive seeds.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct SingleArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Overrides the configured element count.
    #[arg(long)]
    elements: Option<usize>,
}

fn parse<T: std::str::FromStr<Err = Error>>(s: &str) -> std::result::Result<T, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn load(common: &Common) -> Result<ExperimentConfig> {
    let base = ExperimentConfig::preset(common.preset.unwrap_or(Preset::Paper));
    let mut cfg = match &common.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
            ExperimentConfig::from_toml_over(&base, &text)?
        }
        None => base,
    };
    if let Some(s) = &common.schemes {
        cfg.schemes = s.clone();
    }
    Ok(cfg)
}

fn output(path: &Option<PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(std::io::BufWriter::new(
            std::fs::File::create(p).map_err(|e| Error::Io(format!("{}: {e}", p.display())))?,
        )),
        None => Box::new(std::io::stdout().lock()),
    })
}

fn sweep(args: SweepArgs) -> Result<()> {
    let mut cfg = load(&args.common)?;
    if let Some(k) = args.sweep {
        cfg.sweep = k;
    }
    if let Some(v) = args.values {
        cfg.values = v;
    }
    if let Some(n) = args.realizations {
        cfg.realizations = n;
    }
    if let Some(s) = args.seed {
        cfg.base_seed = s;
    }
    let rows = run_sweep(&cfg, &AoSettings::default())?;
    match &args.common.out {
        Some(p) => write_csv_file(&rows, p),
        None => write_csv(&rows, std::io::stdout().lock()),
    }
}

fn single(args: SingleArgs) -> Result<()> {
    let cfg = load(&args.common)?;
    let mut scenario = cfg.scenario();
    if let Some(m) = args.elements {
        scenario.channel.num_elements = m;
    }
    let mut out = output(&args.common.out)?;
    let mut emit = |v: serde_json::Value| -> Result<()> { Ok(writeln!(out, "{v}")?) };
    for &scheme in &cfg.schemes {
        let r = match scenario.run(scheme, args.seed, &AoSettings::default()) {
            Ok(r) => r,
            Err(Error::InfeasibleInit(n)) => {
                emit(json!({ "kind": "infeasible", "scheme": scheme, "seed": args.seed, "attempts": n }))?;
                continue;
            }
            Err(e) => return Err(e),
        };
        for ao in &r.records {
            for p in &ao.power_records {
                emit(json!({ "kind": "power", "scheme": scheme, "ao": ao.iteration, "record": p }))?;
            }
            for q in &ao.penalty_records {
                emit(json!({ "kind": "penalty", "scheme": scheme, "ao": ao.iteration, "record": q }))?;
            }
            emit(json!({
                "kind": "ao",
                "scheme": scheme,
                "iteration": ao.iteration,
                "ee_after_power": ao.ee_after_power,
                "ee_after_profile": ao.ee_after_profile,
                "power_status": ao.power_status,
                "profile_status": ao.profile_status,
                "profile_kept": ao.profile_kept,
            }))?;
        }
        emit(json!({
            "kind": "result",
            "scheme": scheme,
            "seed": args.seed,
            "elements": scenario.channel.num_elements,
            "ee": r.ee,
            "r_u": r.r_u,
            "r_d": r.r_d,
            "allocation": r.allocation,
            "profile": r.profile,
            "ao_trace": r.ao_trace,
            "iteration_counts": r.iteration_counts,
            "init_attempts": r.init_attempts,
            "feasible": r.feasible,
        }))?;
    }
    out.flush()?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Sweep(a) => sweep(a),
        Command::Single(a) => single(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
