use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use jssu::config::RunConfig;
use jssu::data::Split;
use jssu::run::{self, PreviewOptions, RunDirs};
use jssu::train::Checkpoint;
use jssu::verify::{self, Check};

#[derive(Parser)]
#[command(name = "jssu", version, about = "Joint spatial-spectral unfolding for MSI-to-HSI super-resolution")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration; built-in desk defaults when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Base directory for dataset, checkpoints and reports.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesise the dataset and write its manifest.
    Simulate,
    /// Train one phase; phase 2 starts from the phase-1 checkpoint.
    Train {
        #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u8).range(1..=2))]
        phase: u8,
    },
    /// Write per-sample and mean metrics for a split.
    Eval {
        /// Defaults to the latest phase present in the run directory.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        split: Split,
    },
    /// Fuse an LR-MSI cube into an HR-HSI estimate.
    Infer {
        input: PathBuf,
        output: PathBuf,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Also write a false-colour PNG and a spectrum CSV next to the output.
        #[arg(long)]
        emit_preview: bool,
        /// Preview bands for R,G,B, e.g. `7,4,0`.
        #[arg(long, value_parser = parse_list::<3>)]
        bands: Option<[usize; 3]>,
        /// Spectrum probe as `row,col`.
        #[arg(long, value_parser = parse_list::<2>)]
        probe: Option<[usize; 2]>,
    },
    /// Compare analytic gradients against central differences.
    Gradcheck {
        #[arg(long)]
        only: Option<String>,
        #[arg(long, default_value_t = 1e-5)]
        tol: f64,
    },
}

fn parse_list<const N: usize>(s: &str) -> Result<[usize; N], String> {
    let parts: Vec<usize> =
        s.split(',').map(|p| p.trim().parse().map_err(|e| format!("{p:?}: {e}"))).collect::<Result<_, _>>()?;
    parts.try_into().map_err(|p: Vec<usize>| format!("expected {N} comma-separated values, got {}", p.len()))
}

enum Failure {
    Invalid(String),
    Internal(String),
}

impl From<jssu::Error> for Failure {
    fn from(e: jssu::Error) -> Self {
        if e.is_invalid_input() {
            Failure::Invalid(e.to_string())
        } else {
            Failure::Internal(e.to_string())
        }
    }
}

fn load_config(common: &Common) -> jssu::Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn latest_checkpoint(dirs: &RunDirs) -> PathBuf {
    let p2 = dirs.checkpoint(2);
    if p2.exists() {
        p2
    } else {
        dirs.checkpoint(1)
    }
}

fn gradcheck(only: Option<&str>, tol: f64, seed: u64) -> Result<(), Failure> {
    let checks: Vec<&Check> = match only {
        Some(name) => vec![verify::find(name)?],
        None => verify::CHECKS.iter().collect(),
    };
    println!("{:<16} {:<14} {:>12} {:>8}", "check", "component", "max_rel_err", "status");
    let mut failed = Vec::new();
    for check in checks {
        let rep = check.run(seed, tol)?;
        let status = if rep.passed() { "pass" } else { "FAIL" };
        println!("{:<16} {:<14} {:>12.3e} {:>8}", check.name, check.component, rep.max_rel_error, status);
        if !rep.passed() {
            failed.push(format!("{} ({})", check.component, check.name));
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Internal(format!("gradient check failed in {}", failed.join(", "))))
    }
}

fn execute(cli: Cli) -> Result<(), Failure> {
    let cfg = load_config(&cli.common)?;
    let base = cli.common.out.as_path();
    let dirs = RunDirs::new(&cfg, base);
    log::info!(
        "seed {} · {}x{}x{} from {} bands at scale {}",
        cfg.seed,
        cfg.dims.height,
        cfg.dims.width,
        cfg.dims.hs_bands,
        cfg.dims.ms_bands,
        cfg.dims.sampling_factor
    );
    match cli.command {
        Command::Simulate => {
            let manifest = run::simulate(&cfg, base)?;
            println!("{}", dirs.dataset.join(jssu::data::synth::MANIFEST_FILE).display());
            log::info!("{} samples written", manifest.samples.len());
        }
        Command::Train { phase } => {
            let report = if phase == 1 { run::train_first(&cfg, base)? } else { run::train_second(&cfg, base)? };
            let h = &report.history;
            log::info!("best validation {:.3} dB at epoch {}", h.best_val_psnr, h.best_epoch);
            println!("{}", report.checkpoint.display());
        }
        Command::Eval { checkpoint, split } => {
            let ck = checkpoint.unwrap_or_else(|| latest_checkpoint(&dirs));
            let (report, path) = run::evaluate_split(&cfg, base, &ck, split)?;
            println!("{} mean {}", split.name(), report.mean().table_row());
            log::info!("metrics written to {}", path.display());
        }
        Command::Infer { input, output, checkpoint, emit_preview, bands, probe } => {
            let ck = Checkpoint::load(&checkpoint.unwrap_or_else(|| latest_checkpoint(&dirs)))?;
            let preview = emit_preview.then(|| PreviewOptions { bands, probe: probe.map(|[y, x]| (y, x)) });
            let cube = run::infer(&ck, &input, &output, preview.as_ref())?;
            let (h, w, c) = cube.dims();
            println!("{} {h}x{w}x{c}", output.display());
        }
        Command::Gradcheck { only, tol } => gradcheck(only.as_deref(), tol, cfg.seed)?,
    }
    Ok(())
}

fn fail(code: u8, msg: &str) -> ExitCode {
    eprintln!("error: {}", msg.replace('\n', " "));
    ExitCode::from(code)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or_default().trim_start_matches("error: ");
            return fail(2, first);
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Invalid(msg)) => fail(2, &msg),
        Err(Failure::Internal(msg)) => fail(1, &msg),
    }
}
