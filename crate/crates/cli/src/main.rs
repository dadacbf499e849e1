use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgAction, Parser, Subcommand};
use foley_cli::{corpus, exit_code, Condition, Settings, SynthConfig};
use foley_core::Result;
use serde::Serialize;

#[derive(Parser)]
#[command(name = "foley", version, about = "Synthetic-corpus audio generation toolkit")]
struct Cli {
    /// key=value config file with section prefixes, e.g. codec_train.steps=500
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic corpus (WAVs, event tracks, captions, manifest)
    SynthData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        n_clips: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train the latent codec on a corpus manifest
    TrainCodec {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train the flow model on codec latents of a corpus manifest
    TrainFlow {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        codec: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Generate a WAV from a caption and/or event track
    Generate {
        #[arg(long)]
        flow: PathBuf,
        #[arg(long)]
        codec: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        caption: Option<String>,
        #[arg(long)]
        event_track: Option<PathBuf>,
        #[arg(long, default_value_t = 2.0)]
        seconds: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Euler steps
        #[arg(long, default_value_t = 20)]
        steps: usize,
        #[arg(long, action = ArgAction::Set, num_args = 0..=1, default_value_t = false, default_missing_value = "true")]
        stereo: bool,
    },
    /// Score an evaluation manifest of {ref, est} pairs
    Evaluate {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Toy classifier checkpoint; one is trained when omitted
        #[arg(long)]
        classifier: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Compare direct and GEMM-planned decoder convolutions
    BenchInfer {
        #[arg(long)]
        codec: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Latent frames the decoder is planned for
        #[arg(long, default_value_t = 64)]
        fixed_len: usize,
        #[arg(long, default_value_t = 5)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train the toy event classifier used for FD and KL
    TrainClassifier {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        log: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn print<S: Serialize>(v: &S) -> Result<()> {
    println!("{}", serde_json::to_string(v)?);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let settings = Settings::load(cli.config.as_deref())?;
    match cli.command {
        Command::SynthData { out, n_clips, seed } => {
            let mut cfg: SynthConfig = settings.section("synth")?;
            if let Some(n) = n_clips {
                cfg.n_clips = n;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let m = corpus::synth_corpus(&cfg, &out)?;
            let multi = (0..m.rows.len()).filter(|&i| corpus::is_multi(i, cfg.multi_fraction)).count();
            print(&serde_json::json!({ "rows": m.rows.len(), "multi_event": multi, "manifest": out.join(corpus::MANIFEST) }))
        }
        Command::TrainCodec { manifest, out, seed } => print(&foley_cli::train_codec(&settings, &manifest, &out, seed)?),
        Command::TrainFlow { manifest, codec, out, seed } => {
            print(&foley_cli::train_flow(&settings, &manifest, &codec, &out, seed)?)
        }
        Command::Generate { flow, codec, out, caption, event_track, seconds, seed, steps, stereo } => {
            let cond = Condition { caption, event_track, seconds_total: seconds };
            print(&foley_cli::generate(&settings, &flow, &codec, &cond, seed, steps, stereo, &out)?)
        }
        Command::Evaluate { manifest, out, classifier, seed } => {
            let r = foley_cli::evaluate(&settings, &manifest, classifier.as_deref(), seed, &out)?;
            print(&r.aggregate)
        }
        Command::BenchInfer { codec, out, fixed_len, trials, seed } => {
            let rows = foley_cli::bench_infer(&codec, fixed_len, trials, seed, &out)?;
            let worst = rows.iter().map(|r| r.max_abs_diff).fold(0.0, f64::max);
            print(&serde_json::json!({ "rows": rows.len(), "max_abs_diff": worst, "csv": out }))
        }
        Command::TrainClassifier { out, log, seed } => {
            print(&foley_cli::train_classifier(&settings, &out, log.as_deref(), seed)?)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("foley: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
