use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;

use device_core::captioner::train::teacher_forced_accuracy;
use device_core::captioner::{CaptionModel, Dataset, ModelConfig, TokenSource, Trainer};
use device_core::eval::{
    bleu4_breakdown, cider_d_with, load_caption_lines, single_captions, BleuOptions, Corpus, IdfSource,
};
use device_core::features::PHOC_BIGRAMS;
use device_core::gradsuite;
use device_core::ingest::{gen_fixtures, load_vocabulary, FixtureConfig};
use device_core::{Error, Result};

#[derive(Parser)]
#[command(name = "device", version, about = "Depth- and concept-aware scene-text captioning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a seeded synthetic corpus (records, depth maps, vocabulary,
    /// embeddings, config) to a directory.
    GenFixtures {
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        out: PathBuf,
        /// JSON file overriding the fixture sizes.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train a model on a fixture directory and write a checkpoint.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 500)]
        steps: usize,
        /// Stop early once teacher-forced accuracy reaches this value.
        #[arg(long)]
        target_accuracy: Option<f64>,
        /// Steps between progress lines (and accuracy checks).
        #[arg(long, default_value_t = 25)]
        log_every: usize,
    },
    /// Greedy-decode every record and write {id, caption, token_sources} lines.
    Caption {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score predictions against references with BLEU-4 and CIDEr-D.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        refs: PathBuf,
        /// Add-one smoothing for BLEU orders above 1.
        #[arg(long)]
        smooth: bool,
        /// Count document frequencies per reference caption instead of per
        /// record, so a single record can be scored.
        #[arg(long)]
        idf_from_refs_only: bool,
    },
    /// Finite-difference gradient checks for every module.
    Gradcheck {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 5)]
        seeds: u64,
    },
    /// Print the PHOC bigram list in bit order.
    DumpBigrams,
}

#[derive(Serialize)]
struct CaptionLine<'a> {
    id: &'a str,
    caption: String,
    token_sources: Vec<TokenSource>,
}

fn config_dir(path: &Path) -> &Path {
    path.parent().unwrap_or_else(|| Path::new("."))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn gen_fixtures_cmd(seed: u64, n: usize, out: &Path, config: Option<&Path>) -> Result<()> {
    let fx = match config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::Io {
                path: p.to_path_buf(),
                source: e,
            })?;
            serde_json::from_str(&text)?
        }
        None => FixtureConfig::default(),
    };
    let set = gen_fixtures(seed, n, &fx, out)?;
    println!("wrote {} records to {}", set.records.len(), out.display());
    Ok(())
}

fn train_cmd(
    data: &Path,
    config_path: &Path,
    out: &Path,
    steps: usize,
    target_accuracy: Option<f64>,
    log_every: usize,
) -> Result<()> {
    let config = ModelConfig::load(config_path)?;
    let vocab_path = config
        .resolved_vocab_path(config_dir(config_path))
        .ok_or_else(|| Error::Argument(format!("{} has no vocab_path", config_path.display())))?;
    let vocab = load_vocabulary(vocab_path)?;
    let dataset = Dataset::load(data)?;
    let scenes = dataset.prepare(&config)?;
    let feature_dim = scenes
        .first()
        .map(|s| s.feature_dim())
        .ok_or_else(|| Error::Argument("no records to train on".into()))?;
    let mut model = CaptionModel::new(config, vocab, feature_dim)?;
    let mut trainer = Trainer::new(&model, &scenes, steps)?;
    let log_every = log_every.max(1);
    let mut last = None;
    for step in 0..steps {
        let report = trainer.step(&mut model, &scenes)?;
        last = Some(report.loss);
        if (step + 1) % log_every == 0 || step + 1 == steps {
            let acc = teacher_forced_accuracy(&model, &scenes, &trainer.examples)?;
            eprintln!(
                "step {:>5}  loss {:.6}  lr {:.2e}  acc {:.4}",
                step + 1,
                report.loss,
                report.lr,
                acc
            );
            if target_accuracy.is_some_and(|t| acc >= t) {
                break;
            }
        }
    }
    model.save(out)?;
    println!(
        "trained {} steps, last loss {:.6}, checkpoint {}",
        trainer.steps_done(),
        last.unwrap_or(f64::NAN),
        out.display()
    );
    Ok(())
}

fn caption_cmd(ckpt: &Path, data: &Path, out: &Path) -> Result<()> {
    let model = CaptionModel::load(ckpt)?;
    let dataset = Dataset::load(data)?;
    let scenes = dataset.prepare(&model.config)?;
    let mut buf = Vec::new();
    for scene in &scenes {
        let hyp = model.generate(scene)?;
        let line = CaptionLine {
            id: &scene.id,
            caption: hyp.text(),
            token_sources: hyp.sources(),
        };
        serde_json::to_writer(&mut buf, &line)?;
        buf.push(b'\n');
    }
    write_file(out, &buf)?;
    println!("captioned {} records to {}", scenes.len(), out.display());
    Ok(())
}

fn eval_cmd(pred: &Path, refs: &Path, smooth: bool, idf_from_refs_only: bool) -> Result<()> {
    let preds = single_captions(load_caption_lines(pred)?, &pred.display().to_string())?;
    let refs: BTreeMap<String, Vec<String>> = load_caption_lines(refs)?;
    let corpus = Corpus::from_captions(&preds, &refs)?;
    let bleu = bleu4_breakdown(&corpus, BleuOptions { smoothing: smooth })?.score;
    let idf = if idf_from_refs_only {
        IdfSource::References
    } else {
        IdfSource::Images
    };
    let cider = cider_d_with(&corpus, idf)?;
    println!("BLEU-4: {bleu:.6}");
    println!("CIDEr-D: {cider:.6}");
    Ok(())
}

fn gradcheck_cmd(config_path: &Path, seeds: u64) -> Result<bool> {
    let config = ModelConfig::load(config_path)?;
    let seeds: Vec<u64> = (1..=seeds).collect();
    let results = gradsuite::run_all(&seeds, &config)?;
    let mut ok = true;
    for r in &results {
        let verdict = if r.report.passed() { "PASS" } else { "FAIL" };
        ok &= r.report.passed();
        let worst = r
            .report
            .worst
            .as_ref()
            .map(|(n, i)| format!("{n}[{i}]"))
            .unwrap_or_default();
        println!(
            "{verdict} {:<10} seed {}  max rel err {:.3e} (tol {:.0e}, {} entries, worst {worst})",
            r.module, r.seed, r.report.max_rel_err, r.report.tol, r.report.entries_checked
        );
    }
    Ok(ok)
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::GenFixtures { seed, n, out, config } => gen_fixtures_cmd(seed, n, &out, config.as_deref())?,
        Command::Train {
            data,
            config,
            out,
            steps,
            target_accuracy,
            log_every,
        } => train_cmd(&data, &config, &out, steps, target_accuracy, log_every)?,
        Command::Caption { ckpt, data, out } => caption_cmd(&ckpt, &data, &out)?,
        Command::Eval {
            pred,
            refs,
            smooth,
            idf_from_refs_only,
        } => eval_cmd(&pred, &refs, smooth, idf_from_refs_only)?,
        Command::Gradcheck { config, seeds } => return gradcheck_cmd(&config, seeds),
        Command::DumpBigrams => {
            let mut out = std::io::stdout().lock();
            for b in PHOC_BIGRAMS {
                let _ = writeln!(out, "{b}");
            }
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
