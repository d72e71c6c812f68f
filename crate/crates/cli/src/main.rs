mod run_config;

use std::fs;
use std::io::{self, BufRead, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use log::info;
use serde_json::json;

use rssn::config::{AggregationMode, ModelConfig};
use rssn::corpus::{
    corpus_stats, handoff_position_hist, load_corpus, parse_unlabeled_utterance_line, split_corpus,
    synthesize_corpus, write_corpus, Dialogue, SynthSpec, Utterance, DEFAULT_RATIOS,
};
use rssn::metrics::{evaluate_model, Sections};
use rssn::numerics::GradCheckOptions;
use rssn::training::{
    full_model_grad_check, history_jsonl, load_checkpoint, prepare_model, save_checkpoint, train_model,
    StopReason,
};
use rssn::{Error, Result};

use run_config::RunConfigFile;

#[derive(Parser)]
#[command(name = "rssn", version, about = "Joint chatbot handoff prediction and satisfaction analysis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train from a TOML run configuration; writes best.ckpt and history.jsonl.
    Train {
        config: PathBuf,
    },
    /// Evaluate a checkpoint on a labeled corpus and print a JSON report.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        /// Report sections to compute.
        #[arg(long, value_delimiter = ',', default_values = ["mhch", "ssa"])]
        sections: Vec<Section>,
        /// Override the checkpoint's aggregation mode.
        #[arg(long)]
        aggregate: Option<Aggregate>,
        /// Write the per-dialogue breakdown as JSON lines.
        #[arg(long)]
        breakdown: Option<PathBuf>,
    },
    /// Stream utterances (one JSON object per line) and emit running predictions.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Input file; standard input when absent or `-`.
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Generate a planted-rule synthetic corpus.
    Synth {
        /// Generator settings (TOML); defaults when absent.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also write train/dev/test files next to `out` (80/10/10).
        #[arg(long)]
        split: bool,
    },
    /// Corpus statistics and relative handoff position histograms.
    Stats {
        corpus: PathBuf,
        #[arg(long, default_value_t = 10)]
        bins: usize,
    },
    /// Finite-difference check of the full model's gradients.
    Gradcheck {
        /// Run configuration whose model modes and loss weights are used.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Entries checked per parameter block.
        #[arg(long, default_value_t = 24)]
        samples: usize,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Section {
    Mhch,
    Ssa,
    Sentiment,
}

#[derive(Clone, Copy, ValueEnum)]
enum Aggregate {
    Attention,
    Average,
    Voting,
    Last,
}

impl From<Aggregate> for AggregationMode {
    fn from(a: Aggregate) -> Self {
        match a {
            Aggregate::Attention => AggregationMode::Attention,
            Aggregate::Average => AggregationMode::Average,
            Aggregate::Voting => AggregationMode::Voting,
            Aggregate::Last => AggregationMode::Last,
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Unimplemented(_) => 2,
        Error::Data(_) | Error::Parse { .. } | Error::Io(_) | Error::Json(_) | Error::Checkpoint(_) => 3,
        Error::Numeric(_) => 4,
        Error::Contract(_) => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stderr)
        .init();
    let cli = Cli::parse();
    let stdout = io::stdout();
    let mut out = BufWriter::new(stdout.lock());
    let result = match cli.command {
        Command::Train { config } => cmd_train(&config, &mut out),
        Command::Eval {
            checkpoint,
            corpus,
            sections,
            aggregate,
            breakdown,
        } => cmd_eval(&checkpoint, &corpus, &sections, aggregate, breakdown.as_deref(), &mut out),
        Command::Predict { checkpoint, input } => cmd_predict(&checkpoint, input.as_deref(), &mut out),
        Command::Synth {
            spec,
            out: path,
            seed,
            split,
        } => cmd_synth(spec.as_deref(), &path, seed, split, &mut out),
        Command::Stats { corpus, bins } => cmd_stats(&corpus, bins, &mut out),
        Command::Gradcheck { config, seed, samples } => cmd_gradcheck(config.as_deref(), seed, samples, &mut out),
    };
    let flushed = out.flush();
    match result {
        Ok(code) => {
            if let Err(e) = flushed {
                eprintln!("error: {e}");
                return ExitCode::from(3);
            }
            ExitCode::from(code)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn emit(out: &mut dyn Write, value: &impl serde::Serialize) -> Result<()> {
    serde_json::to_writer(&mut *out, value)?;
    writeln!(out)?;
    Ok(())
}

fn load_data(cfg: &RunConfigFile) -> Result<(Vec<Dialogue>, Vec<Dialogue>, Option<Vec<Dialogue>>)> {
    let max_len = cfg.training.model.max_dialogue_len;
    if let Some(spec) = &cfg.data.synth {
        let (corpus, _) = synthesize_corpus(spec, cfg.data.synth_seed)?;
        if let Some(d) = corpus.iter().find(|d| d.len() > max_len) {
            return Err(Error::Config(format!(
                "synthetic dialogue `{}` has {} utterances, above max_dialogue_len {max_len}",
                d.id,
                d.len()
            )));
        }
        let split = split_corpus(&corpus, DEFAULT_RATIOS, cfg.data.synth_seed)?;
        return Ok((split.train, split.dev, Some(split.test)));
    }
    let train = load_corpus(cfg.data.train.as_ref().expect("validated"), max_len)?;
    let dev = load_corpus(cfg.data.dev.as_ref().expect("validated"), max_len)?;
    let test = cfg.data.test.as_ref().map(|p| load_corpus(p, max_len)).transpose()?;
    Ok((train, dev, test))
}

fn cmd_train(config: &Path, out: &mut dyn Write) -> Result<u8> {
    let cfg = RunConfigFile::load(config)?;
    let resolved = cfg.to_toml();
    info!("resolved configuration:\n{resolved}");
    let (train, dev, test) = load_data(&cfg)?;
    info!(
        "train {} / dev {} / test {} dialogues",
        train.len(),
        dev.len(),
        test.as_ref().map_or(0, Vec::len)
    );
    let model = prepare_model(&cfg.training, &train, cfg.data.embeddings.as_deref())?;
    info!("{} parameters", model.store().num_values());

    let mut epoch_err = None;
    let outcome = train_model(model, &train, &dev, &cfg.training, &mut |r| {
        info!(
            "epoch {:>3}  loss {:.5}  dev mhch macro-F1 {:.4}  dev ssa macro-F1 {:.4}{}",
            r.epoch,
            r.train_loss,
            r.dev.mhch.as_ref().map_or(0.0, |m| m.macro_f1),
            r.dev.ssa.as_ref().map_or(0.0, |s| s.macro_f1),
            if r.best { "  *" } else { "" }
        );
        if let Err(e) = emit(out, r) {
            epoch_err.get_or_insert(e);
        }
    })?;
    if let Some(e) = epoch_err {
        return Err(e);
    }

    let dir = &cfg.data.checkpoint_dir;
    fs::create_dir_all(dir)?;
    fs::write(dir.join("config.toml"), &resolved)?;
    fs::write(dir.join("history.jsonl"), history_jsonl(&outcome.history)?)?;
    let ckpt = dir.join("best.ckpt");
    save_checkpoint(&outcome.best, &ckpt)?;
    info!("wrote {}", ckpt.display());

    if outcome.stop == StopReason::Diverged {
        eprintln!(
            "error: training diverged ({}); last finite checkpoint written",
            outcome.divergence.as_deref().unwrap_or("non-finite values")
        );
        return Ok(4);
    }
    let test_report = match &test {
        Some(t) => Some(evaluate_model(&outcome.best, t, Sections::TRAINING)?.0),
        None => None,
    };
    emit(
        out,
        &json!({
            "best_epoch": outcome.best_epoch,
            "stop": outcome.stop,
            "checkpoint": ckpt,
            "test": test_report,
        }),
    )?;
    Ok(0)
}

fn cmd_eval(
    checkpoint: &Path,
    corpus: &Path,
    sections: &[Section],
    aggregate: Option<Aggregate>,
    breakdown: Option<&Path>,
    out: &mut dyn Write,
) -> Result<u8> {
    let mut model = load_checkpoint(checkpoint)?;
    if let Some(a) = aggregate {
        model.config.aggregation = a.into();
    }
    let data = load_corpus(corpus, model.config.max_dialogue_len)?;
    let sel = Sections {
        mhch: sections.iter().any(|s| matches!(s, Section::Mhch)),
        ssa: sections.iter().any(|s| matches!(s, Section::Ssa)),
        sentiment: sections.iter().any(|s| matches!(s, Section::Sentiment)),
    };
    let (report, per_dialogue) = evaluate_model(&model, &data, sel)?;
    if let Some(path) = breakdown {
        let mut w = BufWriter::new(fs::File::create(path)?);
        for r in &per_dialogue {
            emit(&mut w, r)?;
        }
        w.flush()?;
    }
    emit(out, &report)?;
    Ok(0)
}

fn cmd_predict(checkpoint: &Path, input: Option<&Path>, out: &mut dyn Write) -> Result<u8> {
    let model = load_checkpoint(checkpoint)?;
    let reader: Box<dyn BufRead> = match input {
        Some(p) if p != Path::new("-") => Box::new(io::BufReader::new(fs::File::open(p)?)),
        _ => Box::new(io::BufReader::new(io::stdin())),
    };
    let source = input.unwrap_or(Path::new("<stdin>"));
    let mut utterances: Vec<Utterance> = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let u = parse_unlabeled_utterance_line(&line).map_err(|message| Error::Parse {
            path: source.to_path_buf(),
            line: i + 1,
            message,
        })?;
        utterances.push(u);
        if utterances.len() > model.config.max_dialogue_len {
            return Err(Error::Data(format!(
                "stream exceeds max_dialogue_len {}",
                model.config.max_dialogue_len
            )));
        }
        let trace = model.trace(&model.encode_utterances(&utterances))?;
        let t = utterances.len();
        emit(
            out,
            &json!({
                "utterance": t,
                "role": utterances[t - 1].role,
                "handoff": trace.handoff[t - 1],
                "satisfaction": trace.satisfaction,
            }),
        )?;
        out.flush()?;
    }
    if utterances.is_empty() {
        return Ok(0);
    }
    let trace = model.trace(&model.encode_utterances(&utterances))?;
    let satisfaction = trace.satisfaction.clone().ok_or_else(|| {
        Error::Data("stream has no customer utterance; satisfaction cannot be estimated".into())
    })?;
    emit(
        out,
        &json!({
            "final": true,
            "satisfaction": satisfaction,
            "prediction": trace.satisfaction_prediction().map(|s| s.as_str()),
            "trace": trace,
        }),
    )?;
    Ok(0)
}

fn cmd_synth(spec: Option<&Path>, path: &Path, seed: u64, split: bool, out: &mut dyn Write) -> Result<u8> {
    let spec: SynthSpec = match spec {
        Some(p) => {
            let text = fs::read_to_string(p)
                .map_err(|e| Error::Config(format!("cannot read {}: {e}", p.display())))?;
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
        }
        None => SynthSpec::default(),
    };
    let (corpus, tally) = synthesize_corpus(&spec, seed)?;
    write_corpus(path, &corpus)?;
    if split {
        let s = split_corpus(&corpus, DEFAULT_RATIOS, seed)?;
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("corpus");
        for (name, part) in [("train", &s.train), ("dev", &s.dev), ("test", &s.test)] {
            write_corpus(path.with_file_name(format!("{stem}.{name}.jsonl")), part)?;
        }
    }
    emit(out, &tally)?;
    Ok(0)
}

fn cmd_stats(corpus: &Path, bins: usize, out: &mut dyn Write) -> Result<u8> {
    let data = load_corpus(corpus, usize::MAX)?;
    let stats = corpus_stats(&data)?;
    let hist = handoff_position_hist(&data, bins)?;
    emit(out, &json!({ "stats": stats, "handoff_positions": hist }))?;
    Ok(0)
}

fn cmd_gradcheck(config: Option<&Path>, seed: u64, samples: usize, out: &mut dyn Write) -> Result<u8> {
    let (base, eta, delta) = match config {
        Some(p) => {
            let cfg = RunConfigFile::load(p)?;
            (cfg.training.model, cfg.training.eta, cfg.training.delta)
        }
        None => (ModelConfig::default(), 0.5, 1e-3),
    };
    let opts = GradCheckOptions {
        samples_per_block: samples.max(1),
        seed,
        ..GradCheckOptions::default()
    };
    let report = full_model_grad_check(&base, eta, delta, seed, &opts)?;
    let passed = report.passed();
    eprintln!(
        "max relative error {:.3e} (tolerance {:.0e}): {}",
        report.max_rel_error,
        report.tol,
        if passed { "PASS" } else { "FAIL" }
    );
    emit(out, &json!({ "passed": passed, "report": report }))?;
    Ok(if passed { 0 } else { 4 })
}
