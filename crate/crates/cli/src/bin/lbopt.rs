use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lbopt_cli::commands::{self, LowerboundReport};
use lbopt_cli::config::{self, CompressorConfig, FunctionConfig, LowerboundConfig, OracleConfig, SimulateConfig, SweepConfig};
use lbopt_cli::report::Report;
use lbopt_cli::{suites, CliError};

#[derive(Parser)]
#[command(name = "lbopt", version, about = "Worst-case instances, adversarial oracles and timed simulations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// JSON config; built-in defaults otherwise.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Write the output here as well as to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Machine-readable output.
    #[arg(long)]
    json: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Kernel and worst-case function invariants.
    VerifyFunction {
        #[command(flatten)]
        common: Common,
        /// Perturb the analytic gradient so the derivative check must fail.
        #[arg(long)]
        inject_grad_bug: bool,
    },
    /// Stochastic oracle variance, bias and masking law.
    VerifyOracle {
        #[command(flatten)]
        common: Common,
    },
    /// RandK and PermK sparsifier properties.
    VerifyCompressors {
        #[command(flatten)]
        common: Common,
    },
    /// Run algorithms on one setting and write a CSV.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Re-run a previously written CSV and compare bytes.
        #[arg(long)]
        check: Option<PathBuf>,
    },
    /// Run algorithms over a parameter grid and write a CSV.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        check: Option<PathBuf>,
    },
    /// Monte-Carlo threshold checks and the coordinate-chaser experiment.
    Lowerbound {
        #[command(flatten)]
        common: Common,
        /// Overrides the number of Monte-Carlo trials.
        #[arg(long)]
        trials: Option<u64>,
        /// Re-run a previously written JSON report and compare bytes.
        #[arg(long)]
        check: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

/// `Ok(false)` when an invariant failed.
fn dispatch(command: Command) -> Result<bool, CliError> {
    match command {
        Command::VerifyFunction { common, inject_grad_bug } => {
            let mut cfg: FunctionConfig = config::load(common.config.as_deref())?;
            cfg.seed = common.seed.unwrap_or(cfg.seed);
            let mut report = suites::kernel_suite(&cfg)?;
            report.extend(suites::function_suite(&cfg, inject_grad_bug)?);
            report.suite = "verify-function".into();
            emit_report(&report, &cfg, &common)
        }
        Command::VerifyOracle { common } => {
            let mut cfg: OracleConfig = config::load(common.config.as_deref())?;
            cfg.seed = common.seed.unwrap_or(cfg.seed);
            emit_report(&suites::oracle_suite(&cfg)?, &cfg, &common)
        }
        Command::VerifyCompressors { common } => {
            let mut cfg: CompressorConfig = config::load(common.config.as_deref())?;
            cfg.seed = common.seed.unwrap_or(cfg.seed);
            emit_report(&suites::compressor_suite(&cfg)?, &cfg, &common)
        }
        Command::Simulate { common, check } => {
            if let Some(path) = check {
                return check_csv(&path);
            }
            let mut cfg: SimulateConfig = config::load(common.config.as_deref())?;
            if let Some(s) = common.seed {
                cfg.seeds = vec![s];
            }
            let out = common.out.clone().or_else(|| cfg.out.clone());
            emit_csv(&commands::simulate_csv(&cfg)?, out.as_deref(), common.json)
        }
        Command::Sweep { common, check } => {
            if let Some(path) = check {
                return check_csv(&path);
            }
            let mut cfg: SweepConfig = config::load(common.config.as_deref())?;
            if let Some(s) = common.seed {
                cfg.base.seeds = vec![s];
            }
            let out = common.out.clone().or_else(|| cfg.base.out.clone());
            emit_csv(&commands::sweep_csv(&cfg)?, out.as_deref(), common.json)
        }
        Command::Lowerbound { common, trials, check } => {
            if let Some(path) = check {
                let text = read(&path)?;
                let prior: serde_json::Value = config::parse(&text)?;
                let cfg: LowerboundConfig = serde_json::from_value(prior["config"].clone())
                    .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
                let again = lowerbound_json(&commands::lowerbound(&cfg)?)?;
                return report_check(again == text, &path);
            }
            let mut cfg: LowerboundConfig = config::load(common.config.as_deref())?;
            cfg.seed = common.seed.unwrap_or(cfg.seed);
            cfg.trials = trials.unwrap_or(cfg.trials);
            let out = common.out.clone().or_else(|| cfg.out.clone());
            let report = commands::lowerbound(&cfg)?;
            let json = lowerbound_json(&report)?;
            if let Some(p) = out {
                write(&p, &json)?;
            }
            if common.json {
                print!("{json}");
            } else {
                print!("{}", commands::render_lowerbound(&report));
            }
            Ok(report.pass)
        }
    }
}

fn lowerbound_json(r: &LowerboundReport) -> Result<String, CliError> {
    let mut s = serde_json::to_string_pretty(r).map_err(|e| CliError::Config(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

fn emit_report<C: serde::Serialize>(report: &Report, cfg: &C, common: &Common) -> Result<bool, CliError> {
    let doc = serde_json::json!({ "config": cfg, "report": report, "pass": report.passed() });
    let mut json = serde_json::to_string_pretty(&doc).map_err(|e| CliError::Config(e.to_string()))?;
    json.push('\n');
    if let Some(p) = &common.out {
        write(p, &json)?;
    }
    if common.json {
        print!("{json}");
    } else {
        let cfg_line = serde_json::to_string(cfg).map_err(|e| CliError::Config(e.to_string()))?;
        println!("# config: {cfg_line}");
        print!("{}", report.render());
    }
    if !report.passed() {
        eprintln!("failed invariants: {}", report.failed().join(", "));
    }
    Ok(report.passed())
}

fn emit_csv(text: &str, out: Option<&Path>, json: bool) -> Result<bool, CliError> {
    if let Some(p) = out {
        write(p, text)?;
    }
    if json {
        let (_, cfg) = commands::read_header(text)?;
        let rows: Vec<serde_json::Value> = {
            let body: String = text.lines().filter(|l| !l.starts_with('#')).map(|l| format!("{l}\n")).collect();
            let mut r = csv::Reader::from_reader(body.as_bytes());
            let headers = r.headers().map_err(|e| CliError::Io(std::io::Error::other(e)))?.clone();
            r.records()
                .map(|rec| {
                    let rec = rec.map_err(|e| CliError::Io(std::io::Error::other(e)))?;
                    Ok(headers
                        .iter()
                        .zip(rec.iter())
                        .map(|(k, v)| (k.to_string(), cell(v)))
                        .collect::<serde_json::Map<_, _>>()
                        .into())
                })
                .collect::<Result<_, CliError>>()?
        };
        let cfg: serde_json::Value = config::parse(&cfg)?;
        let doc = serde_json::json!({ "config": cfg, "rows": rows });
        println!("{}", serde_json::to_string_pretty(&doc).map_err(|e| CliError::Config(e.to_string()))?);
    } else {
        print!("{text}");
    }
    Ok(true)
}

fn cell(v: &str) -> serde_json::Value {
    if v == "none" {
        return serde_json::Value::Null;
    }
    serde_json::from_str::<serde_json::Number>(v)
        .map(serde_json::Value::Number)
        .unwrap_or_else(|_| serde_json::Value::String(v.to_string()))
}

fn check_csv(path: &Path) -> Result<bool, CliError> {
    let text = read(path)?;
    report_check(commands::check_csv(&text)?, path)
}

fn report_check(same: bool, path: &Path) -> Result<bool, CliError> {
    if same {
        println!("reproduced {} bit-exactly", path.display());
        Ok(true)
    } else {
        Err(CliError::Check(format!("re-run of {} differs from the file", path.display())))
    }
}

fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(CliError::Io)
}
