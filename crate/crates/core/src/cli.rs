//! Command-line interface.

use std::fs;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use crate::corpus::{
    load_corpus, synthesize_corpus, write_corpus_file, Document, Split, SynthConfig,
};
use crate::error::{Error, Result};
use crate::metrics::format_table;
use crate::plot::{energy_plot, sphere_plot, Figure};
use crate::trainer::{
    check_label_space, evaluate, predict, train, Checkpoint, InferenceMode, Regime, Task,
    TrainConfig, TrainingLog,
};

#[derive(Debug, Parser)]
#[command(
    name = "event-energy",
    version,
    about = "Joint event detection and relation extraction with energy networks"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic corpus as JSONL.
    Synth(SynthArgs),
    /// Print corpus statistics.
    Stats {
        #[arg(long)]
        corpus: PathBuf,
    },
    /// Train on the training split of a corpus.
    Train(TrainArgs),
    /// Score a checkpoint on one split.
    Eval(EvalArgs),
    /// Write one JSON line per mention (trigger, event) or pair (ere).
    Predict(PredictArgs),
    /// Plot per-level losses from a training log.
    PlotEnergy {
        #[arg(long)]
        log: PathBuf,
        /// `.svg` or `.png`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Plot one class's centroid and mention embeddings in 2-D.
    PlotSphere(PlotSphereArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 200)]
    pub docs: usize,
    /// Event classes including None.
    #[arg(long, default_value_t = 5)]
    pub classes: usize,
    /// Relation labels including NA.
    #[arg(long, default_value_t = 4)]
    pub relations: usize,
    #[arg(long, default_value_t = 100)]
    pub vocab: usize,
    #[arg(long, default_value_t = 6)]
    pub mentions: usize,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// Flat `key = value` file; command-line flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub regime: Option<Regime>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub mention_cap: Option<usize>,
    /// Checkpoint path.
    #[arg(long)]
    pub out: PathBuf,
    /// Training log (CSV).
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub task: Task,
    #[arg(long, default_value = "test")]
    pub split: Split,
    /// Decode by minimizing each level's energy instead of taking the
    /// classifier argmax.
    #[arg(long)]
    pub energy_inference: bool,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub task: Task,
    /// Restrict to one split; the whole corpus by default.
    #[arg(long)]
    pub split: Option<Split>,
    #[arg(long)]
    pub energy_inference: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PlotSphereArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    /// Event class name.
    #[arg(long)]
    pub class: String,
    #[arg(long, default_value = "train")]
    pub split: Split,
    #[arg(long)]
    pub out: PathBuf,
}

const DESCENT: InferenceMode = InferenceMode::EnergyDescent {
    steps: 50,
    step_size: 0.5,
};

fn mode(energy: bool) -> InferenceMode {
    if energy {
        DESCENT
    } else {
        InferenceMode::Classifier
    }
}

/// Parses `args` (including the program name) and runs the command,
/// writing human-readable output to `out`.
pub fn run<I, T>(args: I, out: &mut dyn Write) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| Error::Config(e.to_string()))?;
    dispatch(cli.command, out)
}

pub fn dispatch(command: Command, out: &mut dyn Write) -> Result<()> {
    match command {
        Command::Synth(a) => cmd_synth(&a, out),
        Command::Stats { corpus } => cmd_stats(&corpus, out),
        Command::Train(a) => cmd_train(&a, out),
        Command::Eval(a) => cmd_eval(&a, out),
        Command::Predict(a) => cmd_predict(&a, out),
        Command::PlotEnergy { log, out: path } => cmd_plot_energy(&log, &path, out),
        Command::PlotSphere(a) => cmd_plot_sphere(&a, out),
    }
}

fn say(out: &mut dyn Write, text: &str) -> Result<()> {
    out.write_all(text.as_bytes())
        .map_err(|e| Error::io("<stdout>", e))
}

pub fn cmd_synth(a: &SynthArgs, out: &mut dyn Write) -> Result<()> {
    let (docs, spaces) = synthesize_corpus(&SynthConfig {
        n_docs: a.docs,
        n_classes: a.classes,
        n_relations: a.relations,
        vocab_size: a.vocab,
        mentions_per_doc: a.mentions,
        seed: a.seed,
    })?;
    write_corpus_file(&a.out, &docs, &spaces)?;
    say(
        out,
        &format!("wrote {} documents to {}\n", docs.len(), a.out.display()),
    )
}

pub fn cmd_stats(corpus: &PathBuf, out: &mut dyn Write) -> Result<()> {
    let (_, spaces, stats) = load_corpus(corpus, None)?;
    let mut text = format!(
        "documents {}\nmentions  {}\nclasses   {}\nrelations {}\n",
        stats.document_count,
        stats.mention_count,
        spaces.num_classes(),
        spaces.num_relations()
    );
    for (name, n) in &stats.relation_counts {
        text.push_str(&format!("  {name:<14} {n}\n"));
    }
    say(out, &text)
}

pub fn cmd_train(a: &TrainArgs, out: &mut dyn Write) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => TrainConfig::from_file(p)?,
        None => TrainConfig::default(),
    };
    if let Some(r) = a.regime {
        cfg.regime = r;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    if let Some(lr) = a.lr {
        cfg.lr = lr;
    }
    if let Some(c) = a.mention_cap {
        cfg.mention_cap = c;
    }
    cfg.validate()?;
    let (docs, spaces, _) = load_corpus(&a.corpus, None)?;
    let train_docs = cfg.split_docs(&docs, Split::Train);
    let valid_docs = cfg.split_docs(&docs, Split::Valid);
    let outcome = train(&train_docs, &valid_docs, &spaces, &cfg)?;
    outcome.checkpoint.save(&a.out)?;
    if let Some(log) = &a.log {
        outcome.log.save_csv(log)?;
    }
    let last = outcome.log.records.last();
    say(
        out,
        &format!(
            "trained {} steps on {} documents (regime {}), final loss {:.4}\ncheckpoint {} sha256 {}\n",
            outcome.log.records.len(),
            train_docs.len(),
            cfg.regime.name(),
            last.map_or(f64::NAN, |r| r.total),
            a.out.display(),
            outcome.checkpoint.hash()
        ),
    )
}

fn load_split(
    checkpoint: &Checkpoint,
    corpus: &PathBuf,
    split: Option<Split>,
) -> Result<Vec<Document>> {
    let (docs, _, _) = load_corpus(corpus, Some(&checkpoint.model.spaces))?;
    check_label_space(&checkpoint.model, &docs)?;
    Ok(match split {
        Some(s) => checkpoint.train.split_docs(&docs, s),
        None => docs,
    })
}

pub fn cmd_eval(a: &EvalArgs, out: &mut dyn Write) -> Result<()> {
    let ck = Checkpoint::load(&a.checkpoint)?;
    let docs = load_split(&ck, &a.corpus, Some(a.split))?;
    let reports = evaluate(&ck, &docs, a.task, mode(a.energy_inference))?;
    if a.json {
        let text = serde_json::to_string_pretty(&reports).expect("reports serialize");
        say(out, &format!("{text}\n"))
    } else {
        say(out, &format_table(&reports))
    }
}

pub fn cmd_predict(a: &PredictArgs, out: &mut dyn Write) -> Result<()> {
    let ck = Checkpoint::load(&a.checkpoint)?;
    let docs = load_split(&ck, &a.corpus, a.split)?;
    let model = &ck.model;
    let preds = predict(model, &docs, ck.train.mention_cap, mode(a.energy_inference))?;
    let classes = model.spaces.event_classes();
    let token_name = |k: usize| {
        if k < classes.len() {
            classes[k].clone()
        } else if k == model.spaces.non_trigger_label() {
            "<non-trigger>".to_string()
        } else {
            "<pad>".to_string()
        }
    };
    let mut lines = Vec::new();
    match a.task {
        Task::Trigger | Task::Event => {
            for m in &preds.mentions {
                let (label, score) = if a.task == Task::Event {
                    (classes[m.pred].clone(), Some(m.score))
                } else {
                    (token_name(m.trigger_pred), None)
                };
                let mut v = json!({
                    "doc_id": m.doc_id,
                    "mention_id": m.mention_id,
                    "task": a.task,
                    "label": label,
                    "gold": classes[m.gold],
                });
                if let Some(s) = score {
                    v["score"] = json!(s);
                }
                lines.push(v.to_string());
            }
        }
        Task::Ere => {
            let rel = model.spaces.relations();
            for p in &preds.pairs {
                lines.push(
                    json!({
                        "doc_id": p.doc_id,
                        "i": p.i,
                        "j": p.j,
                        "task": a.task,
                        "label": rel[p.pred],
                        "score": p.score,
                        "gold": rel[p.gold],
                    })
                    .to_string(),
                );
            }
        }
    }
    let mut body = lines.join("\n");
    if !body.is_empty() {
        body.push('\n');
    }
    fs::write(&a.out, body).map_err(|e| Error::io(&a.out, e))?;
    say(
        out,
        &format!("wrote {} predictions to {}\n", lines.len(), a.out.display()),
    )
}

pub fn cmd_plot_energy(log: &PathBuf, path: &PathBuf, out: &mut dyn Write) -> Result<()> {
    let log = TrainingLog::read_csv(log)?;
    Figure::Lines(energy_plot(&log)?).save(path)?;
    say(out, &format!("wrote {}\n", path.display()))
}

pub fn cmd_plot_sphere(a: &PlotSphereArgs, out: &mut dyn Write) -> Result<()> {
    let ck = Checkpoint::load(&a.checkpoint)?;
    let docs = load_split(&ck, &a.corpus, Some(a.split))?;
    let plot = sphere_plot(&ck.model, &docs, ck.train.mention_cap, &a.class)?;
    let n = plot.mentions.len();
    Figure::Sphere(plot).save(&a.out)?;
    say(out, &format!("wrote {} ({n} mentions)\n", a.out.display()))
}
