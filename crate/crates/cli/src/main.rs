use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use edcs_cli::commands::{self, Sink};
use edcs_cli::config::RunConfig;
use edcs_cli::{CliError, Result};
use edcs_core::metrics::PipelineMode;

/// Entangled dual-comb spectroscopy simulator.
///
/// Exit codes: 0 ok, 2 invalid config, 3 numerical failure, 4 I/O error.
#[derive(Parser)]
#[command(name = "edcs", version)]
struct Cli {
    /// Override the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (default: config `output_dir`, else `edcs-out`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Full,
    BeatBins,
}

#[derive(Subcommand)]
enum Cmd {
    /// Per-pair squeezing and anti-squeezing table.
    SqueezeReport { config: PathBuf },
    /// Interferogram, averaged spectrum and extracted beatnotes.
    Simulate {
        config: PathBuf,
        /// Skip writing interferogram.ifg.
        #[arg(long)]
        no_ifg: bool,
    },
    /// Fit cell parameters to a transmittance spectrum.
    Fit {
        /// CSV with freq_hz,transmittance,sigma.
        #[arg(long)]
        spectrum: PathBuf,
        /// Line list CSV.
        #[arg(long)]
        lines: PathBuf,
        /// TOML with the prior [cell] and optional [free], [options], strength_scale.
        #[arg(long)]
        cell: PathBuf,
    },
    /// Averages needed by each arm to reach the same precision.
    Speedup {
        config: PathBuf,
        #[arg(long)]
        seeds: Option<usize>,
        #[arg(long, value_enum)]
        mode: Option<Mode>,
    },
    /// Flat-top UAR sweep and absorption robustness.
    UarSweep { config: PathBuf },
}

fn load(path: &PathBuf, cli: &Cli) -> Result<(RunConfig, Sink)> {
    let mut cfg = RunConfig::load(path)?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    let dir = cli
        .out
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("edcs-out"));
    cfg.output_dir = Some(dir.clone());
    cfg.validate()?;
    let sink = Sink::new(dir, cfg.sha256()?)?;
    Ok((cfg, sink))
}

fn run(cli: &Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("threads: {e}")))?;
    }
    match &cli.cmd {
        Cmd::SqueezeReport { config } => {
            let (cfg, sink) = load(config, cli)?;
            let rows = commands::squeeze_report(&cfg)?;
            let path = sink.rows("squeeze_report.csv", &rows)?;
            println!("pair  S_in   A_in   S_src  A_src  S_det  A_det (dB)");
            for r in &rows {
                println!(
                    "{:>4} {:6.2} {:6.2} {:6.2} {:6.2} {:6.2} {:6.2}",
                    r.pair,
                    r.input_squeeze_db,
                    r.input_antisqueeze_db,
                    r.source_squeeze_db,
                    r.source_antisqueeze_db,
                    r.detected_squeeze_db,
                    r.detected_antisqueeze_db
                );
            }
            println!("wrote {}", path.display());
        }
        Cmd::Simulate { config, no_ifg } => {
            let (cfg, sink) = load(config, cli)?;
            let s = commands::simulate(&cfg, &sink, !no_ifg)?;
            println!("{} samples, {} segments of {}", s.n_samples, s.n_segments, s.segment_len);
            for b in &s.beats {
                println!(
                    "n={:<3} {:>12.0} Hz  floor {:.4}  model {:.4}",
                    b.n, b.freq_hz, b.noise_floor, b.model_noise_var
                );
            }
            println!("wrote {}", sink.dir.display());
        }
        Cmd::Fit { spectrum, lines, cell } => {
            let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("edcs-out"));
            let r = commands::fit(spectrum, lines, cell, out.clone())?;
            for p in &r.params {
                println!("{} = {} +/- {}", p.name, p.value, p.sigma);
            }
            println!("chi2 {:.3} / {} dof; wrote {}", r.chi2, r.dof, out.join("fit.json").display());
        }
        Cmd::Speedup { config, seeds, mode } => {
            let (mut cfg, _) = load(config, cli)?;
            if let Some(sp) = cfg.speedup.as_mut() {
                if let Some(n) = seeds {
                    sp.n_seeds = *n;
                }
                if let Some(m) = mode {
                    sp.mode = match m {
                        Mode::Full => PipelineMode::Full,
                        Mode::BeatBins => PipelineMode::BeatBins,
                    };
                }
            }
            // Hash the config as actually run.
            let sink = Sink::new(cfg.output_dir.clone().expect("set by load"), cfg.sha256()?)?;
            let r = commands::speedup(&cfg, &sink)?;
            println!(
                "speedup {:.3} (M_edcs {:.1} vs M_dcs {}{}), fit {:.3}, analytic {:.3}",
                r.speedup,
                r.m_edcs,
                r.m_dcs,
                if r.extrapolated { ", extrapolated" } else { "" },
                r.speedup_fit,
                r.analytic_speedup
            );
        }
        Cmd::UarSweep { config } => {
            let (cfg, sink) = load(config, cli)?;
            let out = commands::uar_sweep_cmd(&cfg, &sink)?;
            println!(
                "{} sweep points{}; wrote {}",
                out.sweep.points.len(),
                out.robustness.as_ref().map_or(String::new(), |r| format!(", {} robustness rows", r.len())),
                sink.dir.display()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
