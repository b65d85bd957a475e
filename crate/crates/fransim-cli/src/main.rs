use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use fransim::error::Error;
use fransim_cli::config::{ExperimentKind, RunConfig};
use fransim_cli::experiments;

/// Simulation and analysis toolkit for a CW-pumped photon-pair source
/// analyzed by passive unbalanced Mach-Zehnder interferometers.
#[derive(Parser)]
#[command(name = "fransim", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Flat JSON configuration file; missing keys use the paper preset.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Named parameter preset (currently only "paper").
    #[arg(long)]
    preset: Option<String>,
    /// Master seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory override.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker thread limit override (0 = rayon default).
    #[arg(long)]
    workers: Option<usize>,
    /// Signal time-tag file (analyze).
    #[arg(long)]
    signal: Option<PathBuf>,
    /// Idler time-tag file (analyze).
    #[arg(long)]
    idler: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one acquisition and write signal.ftag / idler.ftag.
    Simulate(RunArgs),
    /// Correlate two time-tag files and write histogram.csv / report.txt.
    Analyze(RunArgs),
    /// Sweep the analyzer phase and fit the coincidence fringe.
    PhaseScan(RunArgs),
    /// Sweep the pump power; fit pair-rate and CAR power laws.
    PowerSweep(RunArgs),
    /// Scan the doubling-stage temperature and fit the sinc^2 response.
    ShgScan(RunArgs),
    /// Pretty-print a saved key-value report file.
    Report { file: PathBuf },
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Failure { code: 1, message: message.into() }
    }

    fn from_error(err: Error) -> Self {
        let code = match err {
            Error::NonConvergence(_) | Error::FitInitialization(_) => 3,
            _ => 2,
        };
        Failure { code, message: err.to_string() }
    }
}

fn resolve_config(args: &RunArgs, kind: ExperimentKind) -> Result<RunConfig, Failure> {
    let mut cfg = match (&args.config, &args.preset) {
        (Some(path), _) => RunConfig::from_file(path).map_err(Failure::from_error)?,
        (None, Some(name)) if name == "paper" => RunConfig::paper(kind),
        (None, Some(name)) => {
            return Err(Failure::usage(format!("unknown preset '{name}' (try \"paper\")")))
        }
        (None, None) => return Err(Failure::usage("either --config or --preset is required")),
    };
    // The subcommand decides what runs, regardless of the file's field.
    cfg.experiment = kind;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &args.out {
        cfg.out_dir = out.display().to_string();
    }
    if let Some(workers) = args.workers {
        cfg.workers = workers;
    }
    if let Some(signal) = &args.signal {
        cfg.signal_path = Some(signal.display().to_string());
    }
    if let Some(idler) = &args.idler {
        cfg.idler_path = Some(idler.display().to_string());
    }
    cfg.validate().map_err(Failure::from_error)?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Simulate(args) => {
            let cfg = resolve_config(&args, ExperimentKind::Simulate)?;
            let out = experiments::run_simulate(&cfg, PathBuf::from(&cfg.out_dir).as_path())
                .map_err(Failure::from_error)?;
            println!(
                "wrote {} ({} tags) and {} ({} tags)",
                out.signal_path.display(),
                out.signal_tags,
                out.idler_path.display(),
                out.idler_tags
            );
        }
        Command::Analyze(args) => {
            let cfg = resolve_config(&args, ExperimentKind::Analyze)?;
            let out = experiments::run_analyze(&cfg, PathBuf::from(&cfg.out_dir).as_path())
                .map_err(Failure::from_error)?;
            let r = &out.report;
            println!("s_prime_s_hz = {}", r.s_prime_s_hz.value);
            println!("s_prime_i_hz = {}", r.s_prime_i_hz.value);
            println!("c_true_hz = {}", r.c_true_hz.value);
            println!("car = {}", r.car.as_f64());
        }
        Command::PhaseScan(args) => {
            let cfg = resolve_config(&args, ExperimentKind::PhaseScan)?;
            let out = experiments::run_phase_scan(&cfg, PathBuf::from(&cfg.out_dir).as_path())
                .map_err(Failure::from_error)?;
            println!("v_raw = {} +- {}", out.v_raw.value, out.v_raw.sigma);
            println!("v_net = {} +- {}", out.v_net.value, out.v_net.sigma);
            println!("v_fit = {} +- {}", out.v_fit.value, out.v_fit.sigma);
        }
        Command::PowerSweep(args) => {
            let cfg = resolve_config(&args, ExperimentKind::PowerSweep)?;
            let out = experiments::run_power_sweep(&cfg, PathBuf::from(&cfg.out_dir).as_path())
                .map_err(Failure::from_error)?;
            println!(
                "pair_rate_slope = {} +- {}",
                out.pair_rate_fit.value("slope"),
                out.pair_rate_fit.sigma("slope")
            );
            println!(
                "car_slope = {} +- {}",
                out.car_fit.value("slope"),
                out.car_fit.sigma("slope")
            );
        }
        Command::ShgScan(args) => {
            let cfg = resolve_config(&args, ExperimentKind::ShgScan)?;
            let out = experiments::run_shg_scan(&cfg, PathBuf::from(&cfg.out_dir).as_path())
                .map_err(Failure::from_error)?;
            println!(
                "fwhm_c = {} +- {}",
                out.fit.value("fwhm_c"),
                out.fit.sigma("fwhm_c")
            );
        }
        Command::Report { file } => {
            let text = std::fs::read_to_string(&file)
                .map_err(|e| Failure::from_error(Error::Io(e)))?;
            let mut width = 0usize;
            let mut rows = Vec::new();
            for (lineno, line) in text.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let Some((key, value)) = line.split_once('=') else {
                    return Err(Failure::from_error(Error::InvalidInput(format!(
                        "{}:{}: not a 'key = value' line",
                        file.display(),
                        lineno + 1
                    ))));
                };
                let key = key.trim().to_string();
                width = width.max(key.len());
                rows.push((key, value.trim().to_string()));
            }
            for (key, value) in rows {
                println!("{key:width$}  {value}");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            // clap prints help/version through the error path too; keep
            // those successful.
            use clap::error::ErrorKind;
            let _ = err.print();
            return match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {}", failure.message);
            ExitCode::from(failure.code)
        }
    }
}
