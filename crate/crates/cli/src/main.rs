//! `fockflow` — batch runner for wave-packet/system simulations.
//!
//! Subcommands either execute a declarative JSON run file (`run`) or drive
//! one experiment directly from flags.  Tables go out as CSV with a
//! version + config-hash preamble; fits and checks go out as JSON.
//! Exit codes: 0 success, 2 schema error, 3 integrator abort.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fockflow_cli::experiments::{
    fit_scaling, oracle_check, run_excite_sweep, run_rabi_rect, run_scatter_sweep, run_single,
    strong_coupling_map,
};
use fockflow_cli::output::{write_csv, write_json};
use fockflow_cli::runfile::{
    Experiment, FitSpec, MapSpec, OracleSpec, PacketSpec, RunFile, SweepSpec, SystemSpec,
};
use fockflow_cli::CliError;

#[derive(Parser)]
#[command(name = "fockflow", version, about = "N-photon wave packet dynamics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute the experiment declared in a JSON run file
    Run(RunArgs),
    /// Excitation-probability sweep over bandwidths and photon numbers
    Sweep(SweepArgs),
    /// Per-N bandwidth optimization plus power-law scaling fits
    Fit(FitArgs),
    /// Two-mode transmission/reflection sweep
    Scatter(ScatterArgs),
    /// Compare the hierarchy against the time-bin collision oracle
    Oracle(OracleArgs),
    /// Windowed strong-coupling parameter map
    Map(MapArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Path to the JSON run file
    #[arg(long)]
    file: PathBuf,
    /// Override a run-file key: dotted.path=json-value (repeatable)
    #[arg(long = "set", value_parser = parse_override)]
    overrides: Vec<(String, String)>,
    /// Override the output path
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_override(raw: &str) -> Result<(String, String), String> {
    raw.split_once('=')
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .ok_or_else(|| format!("expected key=value, got '{raw}'"))
}

#[derive(Args)]
struct SweepArgs {
    /// Comma-separated bandwidths in units of Gamma
    #[arg(long, value_delimiter = ',')]
    bandwidths: Vec<f64>,
    /// Comma-separated photon numbers
    #[arg(long, value_delimiter = ',', default_value = "1")]
    photons: Vec<usize>,
    #[arg(long, default_value_t = 1.0)]
    gamma: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long, default_value_t = 10)]
    n_min: usize,
    #[arg(long, default_value_t = 40)]
    n_max: usize,
    #[arg(long, default_value_t = 1.0)]
    gamma: f64,
    /// CSV of (N, Omega_opt, Pe_max)
    #[arg(long)]
    out: PathBuf,
    /// JSON fit report
    #[arg(long)]
    json: PathBuf,
}

#[derive(Args)]
struct ScatterArgs {
    #[arg(long, value_delimiter = ',')]
    bandwidths: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "1")]
    photons: Vec<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct OracleArgs {
    #[arg(long, default_value_t = 1)]
    photons: usize,
    #[arg(long, default_value_t = 2000)]
    bins: usize,
    #[arg(long, default_value_t = 1.46)]
    omega: f64,
    #[arg(long, default_value_t = 1.0)]
    gamma: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct MapArgs {
    #[arg(long, default_value_t = 1.46)]
    omega: f64,
    #[arg(long, default_value_t = 0.0)]
    t_a: f64,
    #[arg(long, default_value_t = 1)]
    photons: usize,
    /// Averaging window, defaults to 1/Gamma
    #[arg(long, default_value_t = 1.0)]
    tau: f64,
    /// Window-center grid as lo:hi:count
    #[arg(long, value_parser = parse_grid)]
    ts: (f64, f64, usize),
    #[arg(long, default_value_t = 1.0)]
    gamma: f64,
    #[arg(long)]
    out: PathBuf,
}

fn parse_grid(raw: &str) -> Result<(f64, f64, usize), String> {
    let parts: Vec<&str> = raw.split(':').collect();
    if parts.len() != 3 {
        return Err(format!("expected lo:hi:count, got '{raw}'"));
    }
    Ok((
        parts[0].parse().map_err(|e| format!("{e}"))?,
        parts[1].parse().map_err(|e| format!("{e}"))?,
        parts[2].parse().map_err(|e| format!("{e}"))?,
    ))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("fockflow: {err}");
            ExitCode::from(err.exit_code())
        }
    }
}

fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::Run(args) => {
            let text = std::fs::read_to_string(&args.file)?;
            let mut rf = RunFile::parse(&text, &args.overrides)?;
            if let Some(out) = args.out {
                rf.output = Some(out);
            }
            execute_runfile(&rf)
        }
        Command::Sweep(args) => {
            let rf = RunFile {
                experiment: Experiment::ExciteSweep,
                system: SystemSpec::TwoLevelDecay { gamma: args.gamma },
                sweep: Some(SweepSpec {
                    bandwidths: args.bandwidths,
                    photons: args.photons,
                }),
                output: Some(args.out),
                ..blank_runfile(Experiment::ExciteSweep)
            };
            execute_runfile(&rf)
        }
        Command::Fit(args) => {
            let gamma = args.gamma;
            let result = fit_scaling(gamma, args.n_min, args.n_max)?;
            let rf = RunFile {
                experiment: Experiment::ScalingFit,
                system: SystemSpec::TwoLevelDecay { gamma },
                fit: Some(FitSpec {
                    n_min: args.n_min,
                    n_max: args.n_max,
                }),
                output: Some(args.out.clone()),
                ..blank_runfile(Experiment::ScalingFit)
            };
            let hash = rf.config_hash();
            let rows: Vec<Vec<f64>> = result
                .points
                .iter()
                .map(|p| vec![p.n as f64, p.omega_opt, p.pe_max])
                .collect();
            write_csv(&args.out, &hash, &["n", "omega_opt", "pe_max"], &rows)?;
            write_json(&args.json, &hash, &result)?;
            Ok(())
        }
        Command::Scatter(args) => {
            let rf = RunFile {
                experiment: Experiment::ScatterSweep,
                system: SystemSpec::Waveguide {
                    gamma1: 0.5,
                    gamma2: 0.5,
                },
                sweep: Some(SweepSpec {
                    bandwidths: args.bandwidths,
                    photons: args.photons,
                }),
                output: Some(args.out),
                ..blank_runfile(Experiment::ScatterSweep)
            };
            execute_runfile(&rf)
        }
        Command::Oracle(args) => {
            let rf = RunFile {
                experiment: Experiment::OracleCheck,
                system: SystemSpec::TwoLevelDecay { gamma: args.gamma },
                packet: Some(PacketSpec::Gaussian {
                    omega: args.omega,
                    t_a: 0.0,
                    detuning: 0.0,
                }),
                oracle: Some(OracleSpec {
                    n: args.photons,
                    bins: args.bins,
                }),
                output: Some(args.out),
                ..blank_runfile(Experiment::OracleCheck)
            };
            execute_runfile(&rf)
        }
        Command::Map(args) => {
            let rf = RunFile {
                experiment: Experiment::StrongCouplingMap,
                system: SystemSpec::TwoLevelDecay { gamma: args.gamma },
                packet: Some(PacketSpec::Gaussian {
                    omega: args.omega,
                    t_a: args.t_a,
                    detuning: 0.0,
                }),
                map: Some(MapSpec {
                    n: args.photons,
                    tau: args.tau,
                    ts: args.ts,
                }),
                output: Some(args.out),
                ..blank_runfile(Experiment::StrongCouplingMap)
            };
            execute_runfile(&rf)
        }
    }
}

fn blank_runfile(experiment: Experiment) -> RunFile {
    RunFile {
        experiment,
        system: SystemSpec::default(),
        packet: None,
        packet2: None,
        field: None,
        integrator: Default::default(),
        phi: 0.0,
        sweep: None,
        fit: None,
        rabi: None,
        map: None,
        oracle: None,
        output: None,
    }
}

fn execute_runfile(rf: &RunFile) -> Result<(), CliError> {
    let hash = rf.config_hash();
    let out = rf
        .output
        .clone()
        .ok_or_else(|| CliError::Schema("no output path given".into()))?;
    match rf.experiment {
        Experiment::SingleRun => {
            let outcome = run_single(rf)?;
            write_csv(&out, &hash, &outcome.header, &outcome.rows)
        }
        Experiment::ExciteSweep => {
            let sweep = rf
                .sweep
                .as_ref()
                .ok_or_else(|| CliError::Schema("excite_sweep requires a sweep block".into()))?;
            let gamma = match rf.system {
                SystemSpec::TwoLevelDecay { gamma } => gamma,
                _ => return Err(CliError::Schema("excite_sweep uses the two-level preset".into())),
            };
            let rows = run_excite_sweep(gamma, &sweep.bandwidths, &sweep.photons)?;
            let table: Vec<Vec<f64>> = rows
                .iter()
                .map(|r| vec![r.omega, r.n as f64, r.pe_max, r.t_peak])
                .collect();
            write_csv(&out, &hash, &["omega", "n", "pe_max", "t_peak"], &table)
        }
        Experiment::ScalingFit => {
            let spec = rf
                .fit
                .as_ref()
                .ok_or_else(|| CliError::Schema("scaling_fit requires a fit block".into()))?;
            let gamma = match rf.system {
                SystemSpec::TwoLevelDecay { gamma } => gamma,
                _ => return Err(CliError::Schema("scaling_fit uses the two-level preset".into())),
            };
            let result = fit_scaling(gamma, spec.n_min, spec.n_max)?;
            let rows: Vec<Vec<f64>> = result
                .points
                .iter()
                .map(|p| vec![p.n as f64, p.omega_opt, p.pe_max])
                .collect();
            write_csv(&out, &hash, &["n", "omega_opt", "pe_max"], &rows)?;
            write_json(&out.with_extension("json"), &hash, &result)
        }
        Experiment::ScatterSweep => {
            let sweep = rf
                .sweep
                .as_ref()
                .ok_or_else(|| CliError::Schema("scatter_sweep requires a sweep block".into()))?;
            let rows = run_scatter_sweep(&sweep.bandwidths, &sweep.photons)?;
            let table: Vec<Vec<f64>> = rows
                .iter()
                .map(|r| vec![r.omega, r.n as f64, r.transmission, r.reflection])
                .collect();
            write_csv(
                &out,
                &hash,
                &["omega", "n", "transmission", "reflection"],
                &table,
            )
        }
        Experiment::RabiRect => {
            let spec = rf
                .rabi
                .as_ref()
                .ok_or_else(|| CliError::Schema("rabi_rect requires a rabi block".into()))?;
            let gamma = match rf.system {
                SystemSpec::TwoLevelDecay { gamma } => gamma,
                _ => return Err(CliError::Schema("rabi_rect uses the two-level preset".into())),
            };
            let outcome = run_rabi_rect(gamma, spec.n, spec.t_max)?;
            let rows: Vec<Vec<f64>> = outcome
                .record
                .times
                .iter()
                .zip(&outcome.record.pe)
                .map(|(&t, &pe)| vec![t, pe])
                .collect();
            write_csv(&out, &hash, &["t", "pe"], &rows)?;
            write_json(&out.with_extension("json"), &hash, &outcome)
        }
        Experiment::StrongCouplingMap => {
            let spec = rf
                .map
                .as_ref()
                .ok_or_else(|| CliError::Schema("strong_coupling_map requires a map block".into()))?;
            let packet = rf
                .packet
                .as_ref()
                .ok_or_else(|| CliError::Schema("strong_coupling_map requires a packet".into()))?
                .build()?;
            let gamma = match rf.system {
                SystemSpec::TwoLevelDecay { gamma } => gamma,
                _ => {
                    return Err(CliError::Schema(
                        "strong_coupling_map uses the two-level preset".into(),
                    ))
                }
            };
            let (lo, hi, count) = spec.ts;
            if count < 2 {
                return Err(CliError::Schema("ts grid needs at least 2 points".into()));
            }
            let grid: Vec<f64> = (0..count)
                .map(|k| lo + (hi - lo) * k as f64 / (count - 1) as f64)
                .collect();
            let values = strong_coupling_map(&packet, spec.n, gamma, gamma, spec.tau, &grid);
            let rows: Vec<Vec<f64>> = values.iter().map(|&(t, v)| vec![t, v]).collect();
            write_csv(&out, &hash, &["t_s", "value"], &rows)
        }
        Experiment::OracleCheck => {
            let spec = rf
                .oracle
                .as_ref()
                .ok_or_else(|| CliError::Schema("oracle_check requires an oracle block".into()))?;
            let gamma = match rf.system {
                SystemSpec::TwoLevelDecay { gamma } => gamma,
                _ => return Err(CliError::Schema("oracle_check uses the two-level preset".into())),
            };
            let omega = match rf.packet {
                Some(PacketSpec::Gaussian { omega, .. }) => omega,
                None => 1.46,
                _ => {
                    return Err(CliError::Schema(
                        "oracle_check supports Gaussian packets".into(),
                    ))
                }
            };
            let outcome = oracle_check(gamma, omega, spec.n, spec.bins)?;
            write_json(&out, &hash, &outcome)
        }
    }
}
