mod config;

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use obpursuit::io::{read_signal_csv, write_dictionary_csv, write_signal_csv};
use obpursuit::pursuit::{run_pursuit, TerminationReason};
use obpursuit::simulate::{conditioning_comparison, run_campaign, Experiment};
use serde::Serialize;

use config::{resolve, CliConfig, Overrides};

/// Separate a signal into a sparse component in V and a component in W⊥.
#[derive(Debug, Parser)]
#[command(name = "obpursuit", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Split a sampled signal read from a two-column CSV (grid, value)
    Decompose { signal: PathBuf },
    /// Seeded campaign: oscillators contaminated by Gaussian pulses
    SimulateOscillators,
    /// Seeded campaign: B-spline spectra over a blackbody background
    SimulateSpectrum,
    /// Full-dictionary projection vs pursuit on one planted instance
    Conditioning,
    /// Write the experiment's V and W⊥ dictionaries as CSV
    ExportDictionary,
}

const EXIT_ERROR: u8 = 1;
const EXIT_RANK_EXHAUSTED: u8 = 2;
const EXIT_CONSTRAINT_BLOCKED: u8 = 3;
const EXIT_CAMPAIGN_FAILED: u8 = 4;

struct Failure(String);

impl<E: std::fmt::Display> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(Failure(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_ERROR)
        }
    }
}

fn run(cli: &Cli) -> Result<u8, Failure> {
    let kind = match cli.command {
        Command::SimulateOscillators => Some(Experiment::Oscillators),
        Command::SimulateSpectrum => Some(Experiment::Spectrum),
        _ => None,
    };
    let cfg = resolve(&cli.overrides, kind).map_err(Failure)?;
    fs::create_dir_all(&cfg.output.dir).map_err(|e| format!("{}: {e}", cfg.output.dir.display()))?;
    match &cli.command {
        Command::Decompose { signal } => decompose(&cfg, signal),
        Command::SimulateOscillators | Command::SimulateSpectrum => simulate(&cfg),
        Command::Conditioning => conditioning(&cfg),
        Command::ExportDictionary => export_dictionary(&cfg),
    }
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>, Failure> {
    let path = dir.join(name);
    let file = File::create(&path).map_err(|e| format!("{}: {e}", path.display()))?;
    Ok(BufWriter::new(file))
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<(), Failure> {
    let mut out = create(dir, name)?;
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct DecomposeReport<'a> {
    input: String,
    config: &'a CliConfig,
    delta: f64,
    max_rank: usize,
    summary: obpursuit::pursuit::DecompositionSummary,
}

fn decompose(cfg: &CliConfig, path: &Path) -> Result<u8, Failure> {
    let file = File::open(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let signal = read_signal_csv(BufReader::new(file)).map_err(|e| format!("{}: {e}", path.display()))?;
    let trial = cfg.trial();
    let bench = trial.dictionaries_on(*signal.grid())?;
    let params = trial.pursuit_params(&signal, bench.v_atoms.len());
    let result = run_pursuit(&bench.v_atoms, &bench.wperp_atoms, &signal, &params)?;

    let dir = &cfg.output.dir;
    write_signal_csv(&result.component_v, create(dir, "component_v.csv")?)?;
    write_signal_csv(&result.component_wperp, create(dir, "component_wperp.csv")?)?;
    let report = DecomposeReport {
        input: path.display().to_string(),
        config: cfg,
        delta: params.delta,
        max_rank: params.max_rank,
        summary: result.summary(&bench.v_atoms),
    };
    write_json(dir, "report.json", &report)?;

    println!(
        "selected {} atoms, residual {:.6e}, swaps {}, {:?}",
        result.selected.len(),
        result.final_residual,
        result.swaps_performed,
        result.termination_reason
    );
    Ok(match result.termination_reason {
        TerminationReason::ResidualBelowDelta | TerminationReason::SwapConverged => 0,
        TerminationReason::RankBudgetExhausted => EXIT_RANK_EXHAUSTED,
        TerminationReason::ConstraintBlocked => EXIT_CONSTRAINT_BLOCKED,
    })
}

fn simulate(cfg: &CliConfig) -> Result<u8, Failure> {
    let report = run_campaign(&cfg.trial())?;
    let dir = &cfg.output.dir;
    write_json(dir, "campaign.json", &report)?;
    let mut csv = create(dir, "trials.csv")?;
    csv.write_all(report.trials_csv().as_bytes())?;
    csv.flush()?;

    for t in &report.trials {
        println!(
            "trial {:>4} seed {:>6} {} support_exact={} error={:.3e} residual={:.3e} swaps={} {:?}",
            t.trial,
            t.seed,
            if t.success { "ok  " } else { "FAIL" },
            t.support_exact,
            t.relative_l2_error,
            t.residual,
            t.swaps,
            t.termination_reason
        );
    }
    println!(
        "success rate {:.4} ({}/{}), required {:.4}",
        report.success_rate, report.success_count, report.n_trials, cfg.experiment.min_success_rate
    );
    println!("result hash {}", report.result_hash());
    Ok(if report.passes() { 0 } else { EXIT_CAMPAIGN_FAILED })
}

fn conditioning(cfg: &CliConfig) -> Result<u8, Failure> {
    let report = conditioning_comparison(&cfg.trial())?;
    write_json(&cfg.output.dir, "conditioning.json", &report)?;
    println!(
        "condition {:.3e}, numeric rank {}/{}, batch error {:.3e}, pursuit error {:.3e}",
        report.condition_number, report.numeric_rank, report.atom_count, report.batch_error, report.pursuit_error
    );
    Ok(0)
}

fn export_dictionary(cfg: &CliConfig) -> Result<u8, Failure> {
    let bench = cfg.trial().dictionaries()?;
    let dir = &cfg.output.dir;
    write_dictionary_csv(&bench.v_atoms, create(dir, "v_atoms.csv")?)?;
    write_dictionary_csv(&bench.wperp_atoms, create(dir, "wperp_atoms.csv")?)?;
    println!("{} V atoms, {} W⊥ atoms written to {}", bench.v_atoms.len(), bench.wperp_atoms.len(), dir.display());
    Ok(0)
}
