use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use graftnet::config::RunConfig;
use graftnet::model::{GraphInput, Model};
use graftnet::pipeline::{self, Report};
use graftnet::retrieval::{answer_recall, Retriever};
use graftnet::synth;
use graftnet::{GraftError, Result};
use rayon::prelude::*;
use serde::Serialize;

const MODEL_DIR: &str = "model";
const RUN_CONFIG: &str = "run.cfg";
const METRICS: &str = "metrics.jsonl";
const REPORT: &str = "report.json";
const FUSION_REPORT: &str = "fusion.json";
const RETRIEVAL_REPORT: &str = "retrieval.json";
const SUBGRAPHS: &str = "subgraphs";
const ABLATE_TABLE: &str = "ablate.tsv";
const ABLATE_ROWS: &str = "ablate.jsonl";

#[derive(Parser)]
#[command(
    name = "graftnet",
    version,
    about = "Question answering over a KB and entity-linked text"
)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Key/value config file (`model.L = 3`, one per line).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one key, e.g. `--set trainer.p0=0.2`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; 1 gives a strictly single-threaded run.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic world into `paths.data`.
    Generate,
    /// Build and cache the subgraph of every question; report answer recall.
    Retrieve,
    /// Train a model and write its checkpoint and per-epoch metrics.
    Train {
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Evaluate the trained model on the test split.
    Eval,
    /// Rank the candidate answers of one question.
    Answer {
        #[arg(long)]
        question: u32,
        #[arg(long, default_value_t = 5)]
        top: usize,
    },
    /// Ensemble a KB-only run and a text-only run.
    Fuse {
        #[arg(long)]
        kb_run: PathBuf,
        #[arg(long)]
        text_run: PathBuf,
    },
    /// Train and evaluate every cell of the ablation grid.
    Ablate,
}

fn load_config(g: &Global) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(p) = &g.config {
        cfg.apply_file(p)?;
    }
    for kv in &g.overrides {
        cfg.apply_override(kv)?;
    }
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| GraftError::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| GraftError::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write(path, &(serde_json::to_string_pretty(value)? + "\n"))
}

#[derive(Serialize)]
struct GenerateSummary {
    entities: usize,
    triples: usize,
    documents: usize,
    questions: usize,
    one_hop: usize,
    two_hop: usize,
    kb_fraction: f64,
    kb_unanswerable: usize,
}

fn generate(cfg: &RunConfig) -> Result<()> {
    let world = synth::generate(&pipeline::world_spec(cfg))?;
    synth::save_world(&world, &cfg.data_dir)?;
    let kb = pipeline::training_kb(&world.dataset, cfg)?;
    let m = &world.manifest;
    let summary = GenerateSummary {
        entities: m.entities,
        triples: m.triples,
        documents: m.documents,
        questions: world.questions.len(),
        one_hop: m.one_hop,
        two_hop: m.two_hop,
        kb_fraction: cfg.kb_fraction,
        kb_unanswerable: synth::kb_unanswerable(&kb, &world.questions),
    };
    println!("{}", serde_json::to_string(&summary)?);
    Ok(())
}

#[derive(Serialize)]
struct RetrievalReport {
    mode: String,
    kb_fraction: f64,
    questions: usize,
    recall: f64,
    without_seeds: usize,
    mean_entities: f64,
    mean_documents: f64,
}

fn retrieve(cfg: &RunConfig) -> Result<()> {
    let (ds, _) = pipeline::load_world(&cfg.data_dir)?;
    let kb = pipeline::training_kb(&ds, cfg)?;
    let retriever = Retriever::new(&ds, &kb, cfg.retrieval.clone(), cfg.mode, pipeline::word_table(cfg)?)?;
    let graphs = ds
        .questions
        .par_iter()
        .map(|q| retriever.retrieve(q))
        .collect::<Result<Vec<_>>>()?;
    let dir = cfg.work_dir.join(SUBGRAPHS);
    for g in &graphs {
        write(
            &dir.join(format!("q{:06}.json", g.question)),
            &serde_json::to_string(g)?,
        )?;
    }
    let n = graphs.len().max(1) as f64;
    let report = RetrievalReport {
        mode: cfg.mode.to_string(),
        kb_fraction: cfg.kb_fraction,
        questions: graphs.len(),
        recall: answer_recall(&ds.questions, &graphs),
        without_seeds: graphs.iter().filter(|g| g.seeds.is_empty()).count(),
        mean_entities: graphs.iter().map(|g| g.entities.len()).sum::<usize>() as f64 / n,
        mean_documents: graphs.iter().map(|g| g.documents.len()).sum::<usize>() as f64 / n,
    };
    write_json(&cfg.work_dir.join(RETRIEVAL_REPORT), &report)?;
    println!("{}", serde_json::to_string(&report)?);
    Ok(())
}

fn train(cfg: &RunConfig) -> Result<()> {
    let (ds, manifest) = pipeline::load_world(&cfg.data_dir)?;
    let (model, history) = pipeline::train_model(&ds, &manifest, cfg)?;
    model.save(&cfg.work_dir.join(MODEL_DIR))?;
    write(&cfg.work_dir.join(METRICS), &history.to_jsonl()?)?;
    write(&cfg.work_dir.join(RUN_CONFIG), &cfg.to_text())?;
    let last = history.epochs.last();
    println!(
        "{}",
        serde_json::json!({
            "epochs": history.epochs.len(),
            "best_epoch": history.best_epoch,
            "stopped_early": history.stopped_early,
            "train_loss": last.map(|r| r.train_loss),
            "dev_hits1": last.map(|r| r.dev_hits1),
        })
    );
    Ok(())
}

fn load_model(run: &Path) -> Result<Model> {
    Model::load(&run.join(MODEL_DIR))
}

fn eval(cfg: &RunConfig) -> Result<()> {
    let model = load_model(&cfg.work_dir)?;
    let (ds, manifest) = pipeline::load_world(&cfg.data_dir)?;
    let ev = pipeline::evaluate_model(&ds, &manifest, cfg, &model)?;
    write_json(&cfg.work_dir.join(REPORT), &ev.test)?;
    println!("{}", serde_json::to_string(&ev.test)?);
    Ok(())
}

fn answer(cfg: &RunConfig, question: u32, top: usize) -> Result<()> {
    let model = load_model(&cfg.work_dir)?;
    let (ds, _) = pipeline::load_world(&cfg.data_dir)?;
    let q = ds
        .questions
        .iter()
        .find(|q| q.id == question)
        .ok_or_else(|| GraftError::Integrity(format!("no question with id {question}")))?;
    let kb = pipeline::training_kb(&ds, cfg)?;
    let retriever = Retriever::new(&ds, &kb, cfg.retrieval.clone(), cfg.mode, pipeline::word_table(cfg)?)?;
    let g = retriever.retrieve(q)?;
    if g.seeds.is_empty() {
        return Err(GraftError::Integrity(format!(
            "question {question} has no seed entity in the KB"
        )));
    }
    let x = GraphInput::build(&g, q, &ds.corpus, &model.vocab, None)?;
    let probs = model.predict(&x)?;
    let mut ranked: Vec<_> = x.entity_ids.iter().copied().zip(probs).collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    println!("{}", q.tokens.join(" "));
    for (e, p) in ranked.into_iter().take(top) {
        let gold = if q.answers.contains(&e) { " *" } else { "" };
        println!("{p:.4}\t{}\t{}{gold}", e.0, ds.kb.entity_name(e));
    }
    Ok(())
}

fn run_config(run: &Path) -> Result<RunConfig> {
    let path = run.join(RUN_CONFIG);
    if !path.exists() {
        return Err(GraftError::Dependency(format!(
            "no run config at {}; run `train` first",
            path.display()
        )));
    }
    let mut cfg = RunConfig::default();
    cfg.apply_file(&path)?;
    Ok(cfg)
}

fn fuse(cfg: &RunConfig, kb_run: &Path, text_run: &Path) -> Result<()> {
    let kb_cfg = run_config(kb_run)?;
    let text_cfg = run_config(text_run)?;
    if kb_cfg.data_dir != text_cfg.data_dir {
        return Err(GraftError::config(
            "paths.data",
            "the two runs were trained on different worlds",
        ));
    }
    let (ds, manifest) = pipeline::load_world(&kb_cfg.data_dir)?;
    let kb_eval = pipeline::evaluate_model(&ds, &manifest, &kb_cfg, &load_model(kb_run)?)?;
    let text_eval = pipeline::evaluate_model(&ds, &manifest, &text_cfg, &load_model(text_run)?)?;
    let [_, dev_q, test_q] = pipeline::splits(&ds, &manifest);
    let fused = pipeline::fuse(
        dev_q,
        test_q,
        (&kb_eval.dev_preds, &kb_eval.test_preds),
        (&text_eval.dev_preds, &text_eval.test_preds),
        cfg.theta,
    )?;
    write_json(&cfg.work_dir.join(FUSION_REPORT), &fused.test)?;
    println!("{}", serde_json::to_string(&fused.test)?);
    Ok(())
}

#[derive(Serialize)]
struct AblationRow {
    p0: f64,
    kb_fraction: f64,
    heterogeneous: bool,
    directed: bool,
    #[serde(flatten)]
    report: Report,
}

fn ablate(cfg: &RunConfig) -> Result<()> {
    let (ds, manifest) = pipeline::load_world(&cfg.data_dir)?;
    let g = &cfg.ablate;
    let mut cells = Vec::new();
    for &p0 in &g.p0 {
        for &f in &g.kb_fraction {
            for &h in &g.heterogeneous {
                for &d in &g.directed {
                    let mut c = cfg.clone();
                    c.trainer.p0 = p0;
                    c.kb_fraction = f;
                    c.model.heterogeneous = h;
                    c.model.directed = d;
                    cells.push(c);
                }
            }
        }
    }
    let rows = cells
        .par_iter()
        .map(|c| {
            let exp = pipeline::run_experiment(&ds, &manifest, c)?;
            Ok(AblationRow {
                p0: c.trainer.p0,
                kb_fraction: c.kb_fraction,
                heterogeneous: c.model.heterogeneous,
                directed: c.model.directed,
                report: exp.eval.test,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut table = String::from("p0\tkb_fraction\theterogeneous\tdirected\thits1\tf1\trecall\ttheta\n");
    let mut jsonl = String::new();
    for r in &rows {
        table += &format!(
            "{}\t{}\t{}\t{}\t{:.4}\t{:.4}\t{:.4}\t{}\n",
            r.p0,
            r.kb_fraction,
            r.heterogeneous,
            r.directed,
            r.report.hits1,
            r.report.f1,
            r.report.recall,
            r.report.theta
        );
        jsonl += &serde_json::to_string(r)?;
        jsonl.push('\n');
    }
    write(&cfg.work_dir.join(ABLATE_TABLE), &table)?;
    write(&cfg.work_dir.join(ABLATE_ROWS), &jsonl)?;
    print!("{table}");
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = load_config(&cli.global)?;
    if let Command::Train { epochs: Some(e) } = cli.command {
        cfg.trainer.epochs = e;
    }
    cfg.validate()?;
    if let Some(n) = cli.global.threads {
        if n == 0 {
            return Err(GraftError::config("threads", "must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| GraftError::config("threads", e.to_string()))?;
    }
    match cli.command {
        Command::Generate => generate(&cfg),
        Command::Retrieve => retrieve(&cfg),
        Command::Train { .. } => train(&cfg),
        Command::Eval => eval(&cfg),
        Command::Answer { question, top } => answer(&cfg, question, top),
        Command::Fuse { kb_run, text_run } => fuse(&cfg, &kb_run, &text_run),
        Command::Ablate => ablate(&cfg),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.global.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
