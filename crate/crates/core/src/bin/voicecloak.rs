use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use voicecloak::cli::{self, RunConfig};
use voicecloak::slem::Mode;

#[derive(Parser)]
#[command(
    name = "voicecloak",
    version,
    about = "Make speech recordings useless as speaker-verification training data",
    long_about = "Adds a tiny, amplitude-bounded perturbation to each recording that minimizes \
a frozen speaker encoder's training loss. Models trained on the protected corpus learn almost \
nothing about the speakers, while spectral and intelligibility penalties keep the noise \
inaudible. Also bundles the toy corpus, training, scoring, and audit tooling needed to measure \
both effects end to end."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Base seed; every derived RNG stream follows it
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (0 = all cores)
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// `key = value` settings file, applied below command-line flags
    #[arg(long, global = true)]
    config: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    /// one perturbation per utterance
    Sample,
    /// one perturbation per speaker, from its first utterance
    Speaker,
}

/// Tunables shared by the subcommands; unset flags fall back to the
/// config file and then the built-in defaults.
#[derive(Args, Default)]
struct Overrides {
    /// Corpus: number of synthetic speakers
    #[arg(long)]
    speakers: Option<usize>,
    /// Corpus: utterances per speaker
    #[arg(long)]
    utterances: Option<usize>,
    /// Corpus: utterance length in seconds
    #[arg(long)]
    duration: Option<f64>,
    /// Corpus: sample rate in Hz
    #[arg(long)]
    rate: Option<u32>,
    /// Encoder preset: cfgA, cfgB, cfgC or cfgD
    #[arg(long)]
    encoder: Option<String>,
    /// Training epochs
    #[arg(long)]
    epochs: Option<u32>,
    /// Epochs for the experiment's perturbation generator
    #[arg(long)]
    generator_epochs: Option<u32>,
    /// SGD learning rate
    #[arg(long)]
    learning_rate: Option<f64>,
    /// Angular margin of the classification head
    #[arg(long)]
    margin: Option<f64>,
    /// Logit scale of the classification head
    #[arg(long)]
    scale: Option<f64>,
    /// Perturbation bound (l-infinity)
    #[arg(long)]
    epsilon: Option<f64>,
    /// Optimizer steps per perturbation
    #[arg(long)]
    steps: Option<usize>,
    /// Optimizer step size (default: epsilon / 10)
    #[arg(long)]
    step_size: Option<f64>,
    /// Fraction of samples (by amplitude) allowed to carry noise
    #[arg(long)]
    mask_fraction: Option<f64>,
    /// Samples in the perturbation patch
    #[arg(long)]
    patch_length: Option<usize>,
    /// Sample-wise or speaker-wise perturbations
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// Drop the perceptual penalties (margin loss only)
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    plain_slem: Option<bool>,
    /// Weight of the margin loss
    #[arg(long)]
    alpha: Option<f64>,
    /// Weight of the spectral penalty
    #[arg(long)]
    beta: Option<f64>,
    /// Weight of the intelligibility penalty
    #[arg(long)]
    gamma: Option<f64>,
    /// Envelope-L1 weight inside the intelligibility loss
    #[arg(long)]
    lambda: Option<f64>,
    /// Detection-cost target prior
    #[arg(long)]
    p_target: Option<f64>,
    /// Detection cost of a miss
    #[arg(long)]
    c_miss: Option<f64>,
    /// Detection cost of a false accept
    #[arg(long)]
    c_fa: Option<f64>,
}

impl Overrides {
    fn apply(&self, cfg: &mut RunConfig) {
        macro_rules! set {
            ($($field:ident <- $opt:ident),* $(,)?) => {
                $(if let Some(v) = &self.$opt { cfg.$field = v.clone(); })*
            };
        }
        set!(
            speakers <- speakers,
            utterances <- utterances,
            duration_s <- duration,
            rate <- rate,
            encoder <- encoder,
            epochs <- epochs,
            generator_epochs <- generator_epochs,
            learning_rate <- learning_rate,
            margin <- margin,
            scale <- scale,
            epsilon <- epsilon,
            steps <- steps,
            mask_fraction <- mask_fraction,
            patch_length <- patch_length,
            plain_slem <- plain_slem,
            alpha <- alpha,
            beta <- beta,
            gamma <- gamma,
            lambda <- lambda,
            p_target <- p_target,
            c_miss <- c_miss,
            c_fa <- c_fa,
        );
        if let Some(v) = self.step_size {
            cfg.step_size = Some(v);
        }
        if let Some(m) = self.mode {
            cfg.mode = match m {
                ModeArg::Sample => Mode::SampleWise,
                ModeArg::Speaker => Mode::SpeakerWise,
            };
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate the deterministic synthetic corpus
    Synth {
        /// Output directory for WAVs, manifest and trial list
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Train a speaker encoder on a manifest
    Train {
        /// Training manifest (CSV: relative path, speaker label)
        #[arg(long)]
        manifest: PathBuf,
        /// Where to write the model file
        #[arg(long)]
        out: PathBuf,
        /// Optional trial list to score after training
        #[arg(long)]
        trials: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Optimize and apply protective noise to every manifest entry
    Protect {
        /// Frozen encoder model the perturbations are optimized against
        #[arg(long)]
        model: PathBuf,
        /// Manifest of the corpus to protect
        #[arg(long)]
        manifest: PathBuf,
        /// Output directory (mirrors the corpus layout)
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Train a fresh encoder on a manifest and score a trial list
    Evaluate {
        #[arg(long)]
        manifest: PathBuf,
        /// Trial list: `label pathA pathB` per line
        #[arg(long)]
        trials: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Measure distortion of a protected corpus against its clean source
    Audit {
        /// Manifest of the clean corpus
        #[arg(long)]
        clean_manifest: PathBuf,
        /// Directory holding the protected mirror
        #[arg(long)]
        protected: PathBuf,
        /// Where to write the audit CSV
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Full pipeline: corpus, five protection conditions, seven retrains
    Experiment {
        /// Working directory for corpora, models and results.csv
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
}

fn run(args: &Cli) -> voicecloak::Result<()> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &args.config {
        cli::apply_config_file(&mut cfg, path)?;
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(threads) = args.threads {
        cfg.threads = threads;
    }
    let overrides = match &args.command {
        Command::Synth { overrides, .. }
        | Command::Train { overrides, .. }
        | Command::Protect { overrides, .. }
        | Command::Evaluate { overrides, .. }
        | Command::Audit { overrides, .. }
        | Command::Experiment { overrides, .. } => overrides,
    };
    overrides.apply(&mut cfg);
    if cfg.threads > 0 {
        // ignore the error if a pool already exists (repeated in-process runs)
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.threads)
            .build_global();
    }

    match &args.command {
        Command::Synth { out, .. } => {
            cli::cmd_synth(&cfg, out)?;
        }
        Command::Train {
            manifest,
            out,
            trials,
            ..
        } => {
            cli::cmd_train(&cfg, manifest, out, trials.as_deref())?;
        }
        Command::Protect {
            model,
            manifest,
            out,
            ..
        } => {
            cli::cmd_protect(&cfg, model, manifest, out)?;
        }
        Command::Evaluate {
            manifest, trials, ..
        } => {
            cli::cmd_evaluate(&cfg, manifest, trials)?;
        }
        Command::Audit {
            clean_manifest,
            protected,
            out,
            ..
        } => {
            cli::cmd_audit(&cfg, clean_manifest, protected, out)?;
        }
        Command::Experiment { out, .. } => {
            cli::cmd_experiment(&cfg, out)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let args = Cli::parse();
    match run(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
