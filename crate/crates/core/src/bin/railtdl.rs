use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use railtdl::commands::{
    cmd_compare, cmd_estimate, cmd_generate, verify_manifest, CommandError, CompareSettings, EstimateSettings,
    EXIT_INPUT, EXIT_SEMANTIC,
};
use railtdl::estimator::TapSelection;
use railtdl::io::{decode_trace, encode_trace, write_atomic, TraceFormat};
use railtdl::params::preset_5gr;
use railtdl::stats::DEFAULT_THRESHOLD_DB;

/// Markov tapped-delay-line channel simulator and estimator.
#[derive(Parser)]
#[command(name = "railtdl", version, args_conflicts_with_subcommands = true)]
struct Cli {
    /// Re-run a recorded command and check every digest in the manifest.
    #[arg(long, value_name = "MANIFEST")]
    verify_manifest: Option<PathBuf>,

    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Clone, Copy, ValueEnum)]
enum TapSelectionArg {
    OccupiedBins,
    RmsRule,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a channel trace from a TOML config.
    Generate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the seed in the config.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum, default_value = "bin")]
        format: TraceFormat,
    },
    /// Estimate model parameters from a trace.
    Estimate {
        trace: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_THRESHOLD_DB)]
        threshold_db: f64,
        /// Snapshots per window for the RMS delay spread used in the tap-count rule.
        #[arg(long)]
        window: Option<usize>,
        /// Snapshots per large-scale power normalization window; whole trace when omitted.
        #[arg(long)]
        normalization_window: Option<usize>,
        /// Receiver speed for the Doppler bound; taken from the trace when omitted.
        #[arg(long)]
        speed_kmh: Option<f64>,
        #[arg(long, value_enum, default_value = "occupied-bins")]
        tap_selection: TapSelectionArg,
    },
    /// Compare RMS delay spread statistics of two or more traces.
    Compare {
        #[arg(required = true, num_args = 2..)]
        traces: Vec<PathBuf>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 50)]
        bins: usize,
        #[arg(long, default_value_t = DEFAULT_THRESHOLD_DB)]
        threshold_db: f64,
        /// Snapshots per window of the RMS delay spread series.
        #[arg(long, default_value_t = 1)]
        window: usize,
    },
    /// Write the built-in 5G-R parameter set as TOML.
    Preset {
        #[arg(long)]
        out: PathBuf,
    },
    /// Convert a trace between binary and text formats.
    Convert {
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum)]
        format: TraceFormat,
    },
}

fn run(cli: Cli) -> Result<(), CommandError> {
    if let Some(path) = cli.verify_manifest {
        let report = verify_manifest(&path)?;
        if !report.is_ok() {
            for m in &report.mismatches {
                eprintln!("mismatch: {m}");
            }
            return Err(CommandError::semantic(format!(
                "{} of {} digests differ",
                report.mismatches.len(),
                report.checked
            )));
        }
        println!("ok: {} digests match", report.checked);
        return Ok(());
    }
    let Some(command) = cli.command else {
        return Err(CommandError {
            code: EXIT_INPUT,
            message: "no command given; see --help".into(),
        });
    };
    match command {
        Command::Generate {
            config,
            out,
            seed,
            format,
        } => {
            let o = cmd_generate(&config, &out, seed, format)?;
            println!(
                "wrote {} ({} x {}), sha256 {}",
                o.trace_path.display(),
                o.trace.n_snapshots(),
                o.trace.n_taps(),
                o.sha256
            );
        }
        Command::Estimate {
            trace,
            out,
            threshold_db,
            window,
            normalization_window,
            speed_kmh,
            tap_selection,
        } => {
            let settings = EstimateSettings {
                threshold_db,
                rms_window: window,
                normalization_window,
                speed_mps: speed_kmh.map(|v| v / 3.6),
                tap_selection: match tap_selection {
                    TapSelectionArg::OccupiedBins => TapSelection::OccupiedBins,
                    TapSelectionArg::RmsRule => TapSelection::RmsRule,
                },
                ..EstimateSettings::default()
            };
            let model = cmd_estimate(&trace, &out, &settings)?;
            println!("wrote {} ({} taps)", out.display(), model.params.num_taps());
        }
        Command::Compare {
            traces,
            out,
            bins,
            threshold_db,
            window,
        } => {
            let report = cmd_compare(
                &traces,
                &out,
                &CompareSettings {
                    bins,
                    threshold_db,
                    window,
                },
            )?;
            for p in &report.pairs {
                println!("{} vs {}: ks {:.4}", p.a, p.b, p.ks_stat);
            }
        }
        Command::Preset { out } => {
            let text = preset_5gr().to_toml_string()?;
            write_atomic(&out, text.as_bytes())?;
        }
        Command::Convert { input, out, format } => {
            let bytes = std::fs::read(&input).map_err(|e| CommandError {
                code: EXIT_INPUT,
                message: format!("{}: {e}", input.display()),
            })?;
            let trace = decode_trace(&bytes).map_err(|e| {
                let mut c = CommandError::from(e);
                c.message = format!("{}: {}", input.display(), c.message);
                c
            })?;
            write_atomic(&out, &encode_trace(&trace, format)?)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_INPUT as u8 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code.clamp(1, EXIT_SEMANTIC) as u8)
        }
    }
}
