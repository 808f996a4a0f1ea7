use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use mmgen_core::ImageTensor;
use mmgen_harness::corpus::{self, Corpus};
use mmgen_harness::pipeline::{self, DecodeSource, TrainRequest};
use mmgen_harness::Config;
use mmgen_mmlm::Stage;
use mmgen_mmtok::Vocab;

#[derive(Parser)]
#[command(name = "mmgen", version, about = "Synthetic multimodal pretraining, decoding and few-shot evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Flat `key = value` configuration file; missing keys take defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configuration's `seed`.
    #[arg(long)]
    seed: Option<u64>,
}

impl Common {
    fn load(&self) -> Result<Config> {
        let mut cfg = match &self.config {
            Some(path) => Config::load(path)?,
            None => Config::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Render the synthetic corpus into a directory.
    GenCorpus {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write golden sequence records for every template in the corpus.
    Tokenize {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 2)]
        per_template: usize,
    },
    /// Train one stage: 1, 2, chat or gen.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_parser = parse_stage)]
        stage: Stage,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Start from this checkpoint's weights.
        #[arg(long, conflicts_with = "resume")]
        init: Option<PathBuf>,
        /// Continue an interrupted run of the same stage.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Metrics log; defaults to `<out>.metrics`.
        #[arg(long)]
        metrics: Option<PathBuf>,
        /// Stop after this many optimizer steps in total.
        #[arg(long)]
        until: Option<u64>,
    },
    /// Train the image decoder against a checkpoint's frozen encoder.
    TrainDecoder {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        metrics: Option<PathBuf>,
    },
    /// Reconstruct an image, or generate one from a text prompt, as PPM.
    Decode {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        decoder: PathBuf,
        #[arg(long, conflicts_with = "prompt", required_unless_present = "prompt")]
        image: Option<PathBuf>,
        #[arg(long, requires_all = ["checkpoint", "corpus"])]
        prompt: Option<String>,
        /// Language model checkpoint, for prompts.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Corpus directory holding the vocabulary, for prompts.
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Few-shot evaluation on the held-out attribute task.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = [0, 4, 8, 16])]
        shots: Vec<usize>,
        /// Also write the report here.
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

fn parse_stage(s: &str) -> Result<Stage, String> {
    s.parse().map_err(|_| format!("expected 1, 2, chat or gen, got `{s}`"))
}

fn metrics_path(out: &Path, given: Option<PathBuf>) -> PathBuf {
    given.unwrap_or_else(|| {
        let mut p = out.as_os_str().to_owned();
        p.push(".metrics");
        p.into()
    })
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("{}", path.display()))
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::GenCorpus { common, out } => {
            let cfg = common.load()?;
            corpus::generate(&cfg)?.write(&out, &cfg)?;
            println!("corpus written to {}", out.display());
        }
        Command::Tokenize { common, corpus, out, per_template } => {
            let cfg = common.load()?;
            let corpus = Corpus::load(&corpus)?;
            write(&out, &pipeline::tokenize_fixtures(&cfg, &corpus, per_template)?)?;
        }
        Command::Train { common, stage, corpus, out, init, resume, metrics, until } => {
            let cfg = common.load()?;
            let corpus = Corpus::load(&corpus)?;
            let metrics = metrics_path(&out, metrics);
            let req = TrainRequest {
                stage,
                init: init.as_deref(),
                resume: resume.as_deref(),
                out: &out,
                metrics: &metrics,
                until,
            };
            let steps = pipeline::train(&cfg, &corpus, &req)?;
            match steps.last() {
                Some(m) => println!("stage {stage}: {m}"),
                None => println!("stage {stage}: no steps left"),
            }
        }
        Command::TrainDecoder { common, corpus, checkpoint, out, metrics } => {
            let cfg = common.load()?;
            cfg.unet().validate()?;
            let corpus = Corpus::load(&corpus)?;
            pipeline::train_decoder_run(&cfg, &corpus, &checkpoint, &out, &metrics_path(&out, metrics))?;
        }
        Command::Decode { common, decoder, image, prompt, checkpoint, corpus, out } => {
            let cfg = common.load()?;
            let (encoder, dec) = pipeline::load_decoder(&cfg, &decoder)?;
            let result = match (image, prompt, checkpoint, corpus) {
                (Some(path), _, _, _) => {
                    let image = ImageTensor::read_ppm(&path)?;
                    pipeline::decode(&cfg, &encoder, &dec, DecodeSource::Reconstruct(&image), cfg.seed)?
                }
                (None, Some(text), Some(ckpt), Some(dir)) => {
                    let vocab_path = dir.join("vocab.txt");
                    let text_vocab = std::fs::read_to_string(&vocab_path)
                        .with_context(|| format!("{}", vocab_path.display()))?;
                    let vocab = Vocab::from_text(&text_vocab)?;
                    let model = pipeline::load_model(&cfg, &vocab, &ckpt)?;
                    let source = DecodeSource::Prompt { text: &text, model: &model, vocab: &vocab };
                    pipeline::decode(&cfg, &encoder, &dec, source, cfg.seed)?
                }
                _ => bail!("decode needs --image, or --prompt with --checkpoint and --corpus"),
            };
            result.write_ppm(&out)?;
        }
        Command::Eval { common, corpus, checkpoint, shots, report } => {
            let cfg = common.load()?;
            let corpus = Corpus::load(&corpus)?;
            let text = pipeline::evaluate(&cfg, &corpus, &checkpoint, &shots)?.to_string();
            if let Some(path) = report {
                write(&path, &text)?;
            }
            print!("{text}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => e.exit(),
        Err(e) => {
            let msg = e.to_string();
            eprintln!("{}", msg.lines().next().unwrap_or("invalid arguments"));
            return ExitCode::from(2);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // sources are often already spelled out by their wrapper
            let mut line = String::new();
            for cause in e.chain().map(|c| c.to_string()) {
                if !line.contains(&cause) {
                    if !line.is_empty() {
                        line.push_str(": ");
                    }
                    line.push_str(&cause);
                }
            }
            eprintln!("error: {}", line.replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}
