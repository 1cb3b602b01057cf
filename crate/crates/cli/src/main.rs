use std::io::{self, BufRead, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use chat_capsule::checkpoint;
use chat_capsule::config::ConfigFile;
use chat_capsule::data::{
    encode_dialog, load_dailydialog, parse_interchange, synthetic, tokens_of, write_interchange,
    Dialog, EncodedDialog, LabelSchema, RawUtterance, Split,
};
use chat_capsule::embed::{build_vocab, load_pretrained, EmbeddingTable};
use chat_capsule::gradcheck::{gradcheck, toy_fixture, GradcheckOptions};
use chat_capsule::metrics::argmax;
use chat_capsule::train::{evaluate, TrainConfig, Trainer};
use chat_capsule::{Architecture, Error, Model, ModelConfig};
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use serde_json::json;

#[derive(Parser)]
#[command(name = "chat-capsule", version, about = "Dialog emotion analysis with hierarchical capsules")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write checkpoints, a metrics log and a report.
    Train(TrainArgs),
    /// Score a checkpoint on a labeled corpus.
    Eval(EvalArgs),
    /// Stream utterances from stdin, one JSON object per line.
    Predict(PredictArgs),
    /// Write planted-label dialogs in the interchange format.
    GenData(GenArgs),
    /// Compare backpropagated and finite-difference gradients.
    Gradcheck(GradArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// `key = value` file; flags take precedence over it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Training corpus (interchange format).
    #[arg(long)]
    train: Option<PathBuf>,
    /// Validation corpus (interchange format).
    #[arg(long)]
    valid: Option<PathBuf>,
    /// DailyDialog directory; replaces --train and --valid.
    #[arg(long)]
    dailydialog: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Continue from a checkpoint with optimizer state.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Word vectors in text format.
    #[arg(long)]
    pretrained: Option<PathBuf>,
    /// chat-capsule or lstm-baseline.
    #[arg(long)]
    architecture: Option<String>,
    #[arg(long)]
    d_word: Option<usize>,
    #[arg(long)]
    d_model: Option<usize>,
    #[arg(long)]
    d_h: Option<usize>,
    #[arg(long)]
    d_a: Option<usize>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    lr_main: Option<f64>,
    #[arg(long)]
    lr_word: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    checkpoint_every: Option<u64>,
    #[arg(long)]
    max_epochs: Option<u64>,
    #[arg(long)]
    max_steps: Option<u64>,
    #[arg(long)]
    min_count: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    no_rectifier: bool,
    #[arg(long)]
    no_feedback: bool,
    #[arg(long)]
    bidirectional: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Corpus in interchange format.
    #[arg(long)]
    data: Option<PathBuf>,
    /// DailyDialog directory; used with --split.
    #[arg(long)]
    dailydialog: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    split: String,
    /// Directory for report.txt and report.kv.
    #[arg(long)]
    report_dir: Option<PathBuf>,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    checkpoint: PathBuf,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GradArgs {
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = chat_capsule::gradcheck::DEFAULT_STEP)]
    step: f64,
    #[arg(long, default_value_t = chat_capsule::gradcheck::DEFAULT_THRESHOLD)]
    threshold: f64,
    /// Test hook: perturb the analytic gradient of this tensor.
    #[arg(long, hide = true)]
    corrupt: Option<String>,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Usage(_) => 1,
        Error::Numeric(_) => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Predict(a) => predict(a),
        Command::GenData(a) => gen_data(a),
        Command::Gradcheck(a) => grad(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

const CONFIG_KEYS: &[&str] = &[
    "train",
    "valid",
    "dailydialog",
    "out",
    "pretrained",
    "architecture",
    "d-word",
    "d-model",
    "d-h",
    "d-a",
    "dropout",
    "lr-main",
    "lr-word",
    "batch-size",
    "checkpoint-every",
    "max-epochs",
    "max-steps",
    "min-count",
    "seed",
    "no-rectifier",
    "no-feedback",
    "bidirectional",
];

/// Flag, else config-file entry, else default.
fn pick<T: std::str::FromStr>(flag: Option<T>, file: &ConfigFile, key: &str, default: T) -> Result<T, Error>
where
    T::Err: std::fmt::Display,
{
    Ok(match flag {
        Some(v) => v,
        None => file.get(key)?.unwrap_or(default),
    })
}

fn pick_opt<T: std::str::FromStr>(flag: Option<T>, file: &ConfigFile, key: &str) -> Result<Option<T>, Error>
where
    T::Err: std::fmt::Display,
{
    Ok(match flag {
        Some(v) => Some(v),
        None => file.get(key)?,
    })
}

fn switch(flag: bool, file: &ConfigFile, key: &str) -> Result<bool, Error> {
    Ok(flag || file.get::<bool>(key)?.unwrap_or(false))
}

fn train(a: TrainArgs) -> Result<ExitCode, Error> {
    let file = match &a.config {
        Some(p) => ConfigFile::load(p)?,
        None => ConfigFile::default(),
    };
    file.check_keys(CONFIG_KEYS)?;
    let defaults = TrainConfig::default();
    let tc = TrainConfig {
        lr_main: pick(a.lr_main, &file, "lr-main", defaults.lr_main)?,
        lr_word: pick(a.lr_word, &file, "lr-word", defaults.lr_word)?,
        batch_size: pick(a.batch_size, &file, "batch-size", defaults.batch_size)?,
        checkpoint_every: pick(a.checkpoint_every, &file, "checkpoint-every", defaults.checkpoint_every)?,
        max_epochs: pick(a.max_epochs, &file, "max-epochs", defaults.max_epochs)?,
        max_steps: pick_opt(a.max_steps, &file, "max-steps")?,
        seed: pick(a.seed, &file, "seed", defaults.seed)?,
    };
    tc.validate()?;
    let out: PathBuf = pick_opt(a.out, &file, "out")?
        .ok_or_else(|| Error::Usage("--out is required".into()))?;
    let dd: Option<PathBuf> = pick_opt(a.dailydialog, &file, "dailydialog")?;
    let train_path: Option<PathBuf> = pick_opt(a.train, &file, "train")?;
    let valid_path: Option<PathBuf> = pick_opt(a.valid, &file, "valid")?;
    let pretrained: Option<PathBuf> = pick_opt(a.pretrained, &file, "pretrained")?;

    // Data first, so unreadable input fails before any model is built.
    let (schema, train_set, valid_set) = match (&dd, &train_path) {
        (Some(dir), None) => {
            let schema = LabelSchema::daily_dialog();
            let tr = load_dailydialog(dir, Split::Train)?;
            let va = load_dailydialog(dir, Split::Validation)?;
            (schema, tr, Some(va))
        }
        (None, Some(tp)) => {
            let schema = match &a.resume {
                Some(r) => checkpoint::load(r)?.model.config().schema.clone(),
                None => LabelSchema::customer_service(),
            };
            let tr = parse_interchange(tp, &schema)?;
            let va = valid_path.as_deref().map(|p| parse_interchange(p, &schema)).transpose()?;
            (schema, tr, va)
        }
        _ => {
            return Err(Error::Usage(
                "give exactly one of --train or --dailydialog".into(),
            ))
        }
    };

    let mut trainer = match &a.resume {
        Some(path) => {
            let ckpt = checkpoint::load(path)?;
            if ckpt.model.config().schema != schema {
                return Err(Error::Schema("checkpoint label schema differs from the corpus".into()));
            }
            Trainer::resume(ckpt, tc.clone())?
        }
        None => {
            let arch: Architecture = pick(
                a.architecture.map(|s| s.parse()).transpose()?,
                &file,
                "architecture",
                Architecture::ChatCapsule,
            )?;
            let base = ModelConfig::desk(schema.clone());
            let config = ModelConfig {
                architecture: arch,
                d_word: pick(a.d_word, &file, "d-word", base.d_word)?,
                d_model: pick(a.d_model, &file, "d-model", base.d_model)?,
                d_h: pick(a.d_h, &file, "d-h", base.d_h)?,
                d_a: pick(a.d_a, &file, "d-a", base.d_a)?,
                dropout: pick(a.dropout, &file, "dropout", base.dropout)?,
                use_rectifier: !switch(a.no_rectifier, &file, "no-rectifier")?,
                use_feedback: !switch(a.no_feedback, &file, "no-feedback")?,
                bidirectional_utterance: switch(a.bidirectional, &file, "bidirectional")?,
                seed: tc.seed,
                schema: schema.clone(),
            };
            config.validate()?;
            let min_count = pick(a.min_count, &file, "min-count", 1)?;
            let vocab = build_vocab(tokens_of(&train_set), min_count)?;
            let words = match &pretrained {
                Some(p) => {
                    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(tc.seed);
                    let pre = load_pretrained(p, &vocab, config.d_word, &mut rng)?;
                    eprintln!("pretrained coverage {:.3}", pre.coverage);
                    Some(pre.table)
                }
                None => None::<EmbeddingTable>,
            };
            Trainer::new(Model::new(config, vocab, words)?, tc.clone())?
        }
    };
    trainer.echo = json!({
        "code_version": env!("CARGO_PKG_VERSION"),
        "train": tc,
        "model": trainer.model.config(),
        "data": {
            "train": train_path,
            "valid": valid_path,
            "dailydialog": dd,
            "pretrained": pretrained,
        },
        "resume": a.resume,
    });
    let mut trainer = trainer.with_output(&out)?;
    let enc = |ds: &[Dialog]| -> Vec<EncodedDialog> {
        ds.iter().map(|d| encode_dialog(d, trainer.model.vocab())).collect()
    };
    let train_enc = enc(&train_set);
    let valid_enc = valid_set.as_deref().map(enc);
    let summary = trainer.run(&train_enc, valid_enc.as_deref(), |step, loss| {
        if step % 16 == 0 {
            eprintln!("step {step} loss {:.4}", loss.total());
        }
    })?;
    if let Some(report) = summary.validation {
        write_report(&out, &report, &trainer.echo)?;
        print!("{report}");
    }
    Ok(ExitCode::SUCCESS)
}

fn write_report(
    dir: &Path,
    report: &chat_capsule::metrics::Report,
    echo: &serde_json::Value,
) -> Result<(), Error> {
    let txt = dir.join("report.txt");
    let kv = dir.join("report.kv");
    let config = serde_json::to_string(echo).map_err(|e| Error::Format(e.to_string()))?;
    std::fs::write(&txt, format!("{report}config {config}\n")).map_err(|e| Error::io(txt, e))?;
    std::fs::write(&kv, format!("{}config={config}\n", report.to_key_values())).map_err(|e| {
        Error::io(kv, e)
    })
}

fn eval(a: EvalArgs) -> Result<ExitCode, Error> {
    let ckpt = checkpoint::load(&a.checkpoint)?;
    let model = ckpt.model;
    let schema = &model.config().schema;
    let dialogs = match (&a.data, &a.dailydialog) {
        (Some(p), None) => parse_interchange(p, schema)?,
        (None, Some(dir)) => {
            if *schema != LabelSchema::daily_dialog() {
                return Err(Error::Schema(
                    "checkpoint was not trained with the DailyDialog label schema".into(),
                ));
            }
            load_dailydialog(dir, a.split.parse()?)?
        }
        _ => return Err(Error::Usage("give exactly one of --data or --dailydialog".into())),
    };
    let enc: Vec<_> = dialogs.iter().map(|d| encode_dialog(d, model.vocab())).collect();
    if enc.is_empty() {
        return Err(Error::Usage("corpus is empty".into()));
    }
    let (report, loss) = evaluate(&model, &enc)?;
    print!("{report}");
    println!("loss {:.6}", loss.total());
    if let Some(dir) = &a.report_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let echo = json!({
            "code_version": env!("CARGO_PKG_VERSION"),
            "checkpoint": a.checkpoint,
            "data": a.data,
            "dailydialog": a.dailydialog,
            "run": ckpt.run,
        });
        write_report(dir, &report, &echo)?;
    }
    Ok(ExitCode::SUCCESS)
}

fn labeled(labels: &[String], probs: &[f64]) -> serde_json::Value {
    labels
        .iter()
        .zip(probs)
        .map(|(l, p)| (l.clone(), json!(p)))
        .collect::<serde_json::Map<_, _>>()
        .into()
}

fn predict(a: PredictArgs) -> Result<ExitCode, Error> {
    let ckpt = checkpoint::load(&a.checkpoint)?;
    let model = ckpt.model;
    let schema = model.config().schema.clone();
    let mut session = model.stream();
    let stdin = io::stdin();
    let mut out = io::stdout().lock();
    let mut had_error = false;
    for (n, line) in stdin.lock().lines().enumerate() {
        let line = line.map_err(|e| Error::io("<stdin>", e))?;
        let reply = if line.trim().is_empty() {
            session.reset();
            json!({ "reset": true })
        } else {
            let parsed = serde_json::from_str::<RawUtterance>(&line)
                .map_err(|e| Error::Parse {
                    path: "<stdin>".into(),
                    line: n + 1,
                    msg: e.to_string(),
                })
                .and_then(|raw| raw.encode(&schema, model.vocab()))
                .and_then(|u| session.push(&u));
            match parsed {
                Ok(o) => json!({
                    "utterance": session.state().step,
                    "emotion": schema.emotions[argmax(&o.probs)],
                    "probs": labeled(&schema.emotions, &o.probs),
                    "satisfaction": labeled(&schema.satisfaction, &o.satisfaction),
                    "curve": labeled(&schema.curves, &o.curve),
                }),
                Err(e) => {
                    had_error = true;
                    eprintln!("line {}: {e}", n + 1);
                    json!({ "error": e.to_string(), "line": n + 1 })
                }
            }
        };
        writeln!(out, "{reply}")
            .and_then(|_| out.flush())
            .map_err(|e| Error::io("<stdout>", e))?;
    }
    Ok(if had_error { ExitCode::from(2) } else { ExitCode::SUCCESS })
}

fn gen_data(a: GenArgs) -> Result<ExitCode, Error> {
    let schema = LabelSchema::customer_service();
    let dialogs = synthetic::gen_synthetic(a.n, a.seed, &schema);
    match &a.out {
        Some(p) => {
            let f = std::fs::File::create(p).map_err(|e| Error::io(p, e))?;
            let mut w = io::BufWriter::new(f);
            write_interchange(&mut w, &dialogs, &schema)
                .and_then(|_| w.flush())
                .map_err(|e| Error::io(p, e))?;
        }
        None => write_interchange(io::stdout().lock(), &dialogs, &schema)
            .map_err(|e| Error::io("<stdout>", e))?,
    }
    Ok(ExitCode::SUCCESS)
}

fn grad(a: GradArgs) -> Result<ExitCode, Error> {
    let (mut model, dialogs) = toy_fixture(a.seed)?;
    let opts = GradcheckOptions {
        step: a.step,
        threshold: a.threshold,
        corrupt: a.corrupt,
    };
    let report = gradcheck(&mut model, &dialogs, &opts)?;
    print!("{report}");
    if report.passed() {
        println!("PASS worst {:.3e} <= {:.1e}", report.worst(), report.threshold);
        Ok(ExitCode::SUCCESS)
    } else {
        for f in report.failures() {
            println!("FAIL {} {:.3e}", f.name, f.max_rel_error);
        }
        Ok(ExitCode::from(3))
    }
}
