//! Command-line front end: separation, mixture generation, scoring and sweeps.

use std::fs::{self, File};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::{error, info};

use envsep::config::{parse_pairs, SeparationConfig};
use envsep::harness::{concatenate, generate_mixture, load_clip_dir, run_sweep, MixtureFileSpec, SweepFileSpec};
use envsep::metrics::evaluate_permuted;
use envsep::nmf::InitMode;
use envsep::separation::{
    manifest, separate_blind, separate_informed, separate_unconstrained, SeparationMode,
};
use envsep::spectrogram::{AudioSignal, ReconstructionMode};
use envsep::wav::{list_wavs, read_wav, write_wav};
use envsep::{Error, Result};

#[derive(Parser)]
#[command(name = "envsep", version, about = "Instrument separation with spectral-envelope constrained NMF")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Separate a mixture into one WAV per instrument.
    Separate(SeparateArgs),
    /// Generate mixtures and their reference tracks from a spec file.
    Mix {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score estimated sources against references.
    Eval {
        #[arg(long)]
        est: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a parameter sweep described by a spec file.
    Sweep {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write every separated source here.
        #[arg(long)]
        wav_dir: Option<PathBuf>,
    },
}

#[derive(Args)]
struct SeparateArgs {
    #[arg(long, value_parser = parse_mode)]
    mode: SeparationMode,
    #[arg(long)]
    mixture: PathBuf,
    /// Training clips: one WAV per instrument, or one subdirectory of WAVs
    /// per instrument.
    #[arg(long)]
    clips: Option<PathBuf>,
    #[arg(long)]
    instruments: Option<usize>,
    #[arg(long)]
    out: PathBuf,
    /// `key=value` settings file; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    bases: Option<usize>,
    #[arg(long)]
    lpc_order: Option<usize>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long, value_parser = parse_init)]
    init: Option<InitMode>,
    #[arg(long)]
    p: Option<f64>,
    #[arg(long)]
    alpha_step: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long, value_parser = parse_recon)]
    recon: Option<ReconstructionMode>,
    #[arg(long)]
    frame_size: Option<usize>,
    #[arg(long)]
    hop_size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

fn parse_mode(s: &str) -> std::result::Result<SeparationMode, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_init(s: &str) -> std::result::Result<InitMode, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_recon(s: &str) -> std::result::Result<ReconstructionMode, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

impl SeparateArgs {
    fn config(&self) -> Result<SeparationConfig> {
        let mut config = SeparationConfig::default();
        if let Some(path) = &self.config {
            for (k, v) in parse_pairs(&fs::read_to_string(path)?)? {
                config.set(&k, &v)?;
            }
        }
        let overrides: [(&str, Option<String>); 11] = [
            ("bases_per_instrument", self.bases.map(|v| v.to_string())),
            ("lpc_order", self.lpc_order.map(|v| v.to_string())),
            ("iterations", self.iters.map(|v| v.to_string())),
            ("init_mode", self.init.map(|v| v.to_string())),
            ("p", self.p.map(|v| v.to_string())),
            ("alpha_step", self.alpha_step.map(|v| v.to_string())),
            ("beta", self.beta.map(|v| v.to_string())),
            ("reconstruction_mode", self.recon.map(|v| v.to_string())),
            ("frame_size", self.frame_size.map(|v| v.to_string())),
            ("hop_size", self.hop_size.map(|v| v.to_string())),
            ("seed", self.seed.map(|v| v.to_string())),
        ];
        for (key, value) in overrides {
            if let Some(v) = value {
                config.set(key, &v)?;
            }
        }
        Ok(config)
    }
}

fn training_clips(dir: &Path) -> Result<Vec<AudioSignal>> {
    let grouped = load_clip_dir(dir)?;
    if !grouped.is_empty() {
        return grouped.into_iter().map(|(_, clips)| concatenate(&clips)).collect();
    }
    list_wavs(dir)?.iter().map(read_wav).collect()
}

fn write_sources(dir: &Path, sources: &[AudioSignal]) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (i, s) in sources.iter().enumerate() {
        write_wav(dir.join(format!("source_{i}.wav")), s)?;
    }
    Ok(())
}

fn separate(args: &SeparateArgs) -> Result<()> {
    let mixture = read_wav(&args.mixture)?;
    let mut config = args.config()?;
    if config.sample_rate != mixture.sample_rate() {
        info!("using the mixture sample rate {} Hz", mixture.sample_rate());
        config.sample_rate = mixture.sample_rate();
    }
    let result = match args.mode {
        SeparationMode::Informed => {
            let dir = args
                .clips
                .as_ref()
                .ok_or_else(|| Error::Config("informed mode needs --clips".into()))?;
            let clips = training_clips(dir)?;
            if let Some(n) = args.instruments {
                if n != clips.len() {
                    return Err(Error::Config(format!(
                        "--instruments {n} but {} training clips found",
                        clips.len()
                    )));
                }
            }
            separate_informed(&mixture, &clips, &config)?
        }
        mode => {
            let n = args
                .instruments
                .ok_or_else(|| Error::Config(format!("{mode} mode needs --instruments")))?;
            if mode == SeparationMode::Blind {
                separate_blind(&mixture, n, &config)?
            } else {
                separate_unconstrained(&mixture, n, &config)?
            }
        }
    };
    write_sources(&args.out, &result.sources)?;
    fs::write(args.out.join("manifest.txt"), manifest(&result))?;
    info!(
        "wrote {} sources to {}",
        result.sources.len(),
        args.out.display()
    );
    Ok(())
}

fn base_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn mix(spec_path: &Path, out: &Path) -> Result<()> {
    let spec = MixtureFileSpec::parse(&fs::read_to_string(spec_path)?, &base_dir(spec_path))?;
    if let Some((key, _)) = spec.extra.first() {
        return Err(Error::Config(format!("unknown key '{key}'")));
    }
    for (m, mixture_spec) in spec.mixture_specs()?.iter().enumerate() {
        let dir = out.join(format!("mix_{m}"));
        let generated = generate_mixture(mixture_spec)?;
        fs::create_dir_all(&dir)?;
        write_wav(dir.join("mixture.wav"), &generated.mixture)?;
        write_sources(&dir.join("reference"), &generated.ground_truth)?;
        if !mixture_spec.training_clips.is_empty() {
            let train = dir.join("training");
            fs::create_dir_all(&train)?;
            for (i, clip) in mixture_spec.training_clips.iter().enumerate() {
                write_wav(train.join(format!("instrument_{i}.wav")), clip)?;
            }
        }
    }
    Ok(())
}

fn eval(est: &Path, reference: &Path, out: &Path) -> Result<()> {
    let estimates = list_wavs(est)?.iter().map(read_wav).collect::<Result<Vec<_>>>()?;
    let references = list_wavs(reference)?
        .iter()
        .map(read_wav)
        .collect::<Result<Vec<_>>>()?;
    let report = evaluate_permuted(&estimates, &references)?;
    report.write_csv(File::create(out)?)?;
    let mean = report.mean();
    info!("mean SDR {:.2} dB, SIR {:.2} dB, SAR {:.2} dB", mean.sdr, mean.sir, mean.sar);
    Ok(())
}

fn sweep(spec_path: &Path, out: &Path, wav_dir: Option<&Path>) -> Result<()> {
    let spec = SweepFileSpec::parse(&fs::read_to_string(spec_path)?, &base_dir(spec_path))?;
    let mixtures = spec.mixtures.mixture_specs()?;
    let report = run_sweep(&spec.sweep, &spec.config, &mixtures, wav_dir)?;
    report.write_csv(File::create(out)?)?;
    for (value, runs, mean) in report.summaries() {
        info!("{}={value}: {runs} runs, mean SDR {:.2} dB", spec.sweep.variable, mean.sdr);
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Separate(args) => separate(args),
        Command::Mix { spec, out } => mix(spec, out),
        Command::Eval { est, reference, out } => eval(est, reference, out),
        Command::Sweep { spec, out, wav_dir } => sweep(spec, out, wav_dir.as_deref()),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            ExitCode::FAILURE
        }
    }
}
