use std::io::{self, BufRead, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use emphi::config::RunConfig;
use emphi::model::Ablations;
use emphi::pipeline::{self, ChatSession, Workspace};
use emphi::{Error, IntentLabel};

#[derive(Parser, Debug)]
#[command(
    name = "emphi",
    version,
    about = "Intent-conditioned empathetic response generation"
)]
struct Cli {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    work_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    dialogues_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    intents_path: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Normalize the dialogue corpus, build the vocabulary and cache
    /// recognized intents for every response.
    PrepareData {
        #[arg(long)]
        train_fraction: Option<f64>,
    },
    /// Rank the top-k keywords per intent.
    ExtractKeywords {
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the response intent classifier.
    TrainClassifier,
    /// Train the generator.
    Train {
        #[arg(long, value_enum)]
        ablate: Vec<Ablate>,
        #[arg(long)]
        max_epochs: Option<usize>,
    },
    /// Generate for the test split and report metrics.
    Evaluate {
        #[arg(long, value_enum)]
        ablate: Vec<Ablate>,
    },
    /// Compare the intent histograms of two response files.
    AuditBias {
        #[arg(long)]
        model_file: PathBuf,
        #[arg(long)]
        human_file: PathBuf,
    },
    /// Interactive session over the trained artifacts.
    Chat {
        #[arg(long, value_enum)]
        ablate: Vec<Ablate>,
    },
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum Ablate {
    Intent,
    Gate,
    Copy,
}

fn ablations(flags: &[Ablate]) -> Ablations {
    Ablations {
        disable_intent: flags.contains(&Ablate::Intent),
        disable_gate: flags.contains(&Ablate::Gate),
        disable_copy: flags.contains(&Ablate::Copy),
    }
}

fn load_config(cli: &Cli) -> emphi::Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    cfg.apply_env();
    if let Some(seed) = cli.seed {
        cfg.set_seed(seed);
    }
    if let Some(p) = &cli.work_dir {
        cfg.paths.work_dir = p.clone();
    }
    if let Some(p) = &cli.dialogues_dir {
        cfg.paths.dialogues_dir = p.clone();
    }
    if let Some(p) = &cli.intents_path {
        cfg.paths.intents_path = p.clone();
    }
    Ok(cfg)
}

fn error_kind(e: &Error) -> &'static str {
    match e {
        Error::Io { .. } => "io",
        Error::MissingFile(_) => "missing_file",
        Error::UnknownIntent(_) => "unknown_intent",
        Error::UnknownEmotion(_) => "unknown_emotion",
        Error::MissingIntentClass(_) => "missing_intent_class",
        Error::TokenOutOfRange { .. } => "token_out_of_range",
        Error::Empty(_) => "empty_input",
        Error::InvalidArgument(_) => "invalid_argument",
        Error::NonFiniteLoss { .. } => "non_finite_loss",
        Error::Diverged(_) => "diverged",
        Error::Format { .. } => "format",
        Error::MissingArtifact { .. } => "missing_artifact",
        Error::Config(_) => "config",
    }
}

fn run(cli: Cli) -> emphi::Result<()> {
    let mut cfg = load_config(&cli)?;
    let ws = Workspace::new(&cfg.paths.work_dir);
    match cli.command {
        Command::PrepareData { train_fraction } => {
            if let Some(f) = train_fraction {
                cfg.data.train_fraction = f;
            }
            let m = pipeline::prepare_data_stage(&cfg)?;
            println!(
                "prepared {} train / {} valid / {} test examples, vocabulary {} ({} malformed rows skipped)",
                m.train_examples, m.valid_examples, m.test_examples, m.vocab_size, m.malformed_rows
            );
            println!("manifest: {}", ws.data_manifest().display());
        }
        Command::ExtractKeywords { k, out } => {
            if let Some(k) = k {
                cfg.keywords.k = k;
            }
            let (table, path) = pipeline::extract_keywords_stage(&cfg, out.as_deref())?;
            for intent in IntentLabel::all() {
                let top: Vec<&str> = table
                    .keywords(intent)
                    .iter()
                    .take(10)
                    .map(|(w, _)| w.as_str())
                    .collect();
                println!("{:<14} {}", intent.name(), top.join(" "));
            }
            println!("keywords: {}", path.display());
        }
        Command::TrainClassifier => {
            let m = pipeline::train_classifier_stage(&cfg)?;
            println!(
                "held-out accuracy {:.4} on {} examples ({} parameters)",
                m.heldout_accuracy, m.heldout_examples, m.parameter_count
            );
        }
        Command::Train { ablate, max_epochs } => {
            cfg.training.ablations = ablations(&ablate);
            if let Some(n) = max_epochs {
                cfg.training.max_epochs = n;
            }
            let (m, _) = pipeline::train_stage(&cfg)?;
            println!(
                "trained {} epochs, best epoch {}, {} parameters",
                m.epochs_run, m.best_epoch, m.parameter_count
            );
            println!(
                "checkpoint: {}",
                ws.model_checkpoint(&m.ablations).display()
            );
        }
        Command::Evaluate { ablate } => {
            let report = pipeline::evaluate_stage(&cfg, &ablations(&ablate))?;
            print!("{}", report.to_text());
        }
        Command::AuditBias {
            model_file,
            human_file,
        } => {
            let report = pipeline::audit_bias_stage(&cfg, &model_file, &human_file)?;
            print!("{}", report.to_text());
        }
        Command::Chat { ablate } => {
            let session = ChatSession::open(&cfg, &ablations(&ablate))?;
            chat(session, io::stdin().lock(), io::stdout().lock())?;
        }
    }
    Ok(())
}

fn chat(mut session: ChatSession, input: impl BufRead, mut out: impl Write) -> emphi::Result<()> {
    let io_err = |e| Error::Io {
        path: PathBuf::from("<stdout>"),
        source: e,
    };
    writeln!(
        out,
        "type an utterance; `/intent <name> <utterance>` forces an intent, `/quit` exits"
    )
    .map_err(io_err)?;
    let mut forced: Option<IntentLabel> = None;
    for line in input.lines() {
        let line = line.map_err(|e| Error::Io {
            path: PathBuf::from("<stdin>"),
            source: e,
        })?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if line == "/quit" {
            break;
        }
        let utterance = if let Some(rest) = line.strip_prefix("/intent") {
            let rest = rest.trim_start();
            let (name, tail) = rest.split_once(char::is_whitespace).unwrap_or((rest, ""));
            match IntentLabel::from_name(name) {
                Ok(label) => forced = Some(label),
                Err(_) => {
                    writeln!(
                        out,
                        "unknown intent `{name}`; valid names: {}",
                        IntentLabel::names().join(", ")
                    )
                    .map_err(io_err)?;
                    continue;
                }
            }
            let tail = tail.trim();
            if tail.is_empty() {
                writeln!(out, "next response will be conditioned on {}", name).map_err(io_err)?;
                continue;
            }
            tail.to_string()
        } else {
            line.to_string()
        };
        match session.reply(&utterance, forced.take()) {
            Ok(reply) => write!(out, "{}", reply.to_text()).map_err(io_err)?,
            Err(e) => writeln!(out, "error: {e}").map_err(io_err)?,
        }
        out.flush().map_err(io_err)?;
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let message = e.to_string().replace('\n', " ");
            match &e {
                Error::MissingArtifact { producer, .. } => {
                    eprintln!("error kind=missing_artifact producer={producer} message={message:?}")
                }
                _ => eprintln!("error kind={} message={message:?}", error_kind(&e)),
            }
            ExitCode::FAILURE
        }
    }
}
