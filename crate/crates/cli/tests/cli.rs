use std::path::Path;
use std::process::{Command, Output};

use graftnet::config::RunConfig;
use graftnet::model::Model;
use graftnet::pipeline;

const SMALL_WORLD: &[&str] = &[
    "world.num_entities=60",
    "world.triples_per_relation=40",
    "world.one_hop_questions=40",
    "world.two_hop_questions=20",
    "model.n=8",
    "model.L=2",
    "trainer.epochs=2",
];

fn graftnet(args: &[&str], sets: &[String]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_graftnet"));
    cmd.args(args);
    for s in sets {
        cmd.arg("--set").arg(s);
    }
    cmd.output().unwrap()
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn sets(data: &Path, work: &Path, extra: &[&str]) -> Vec<String> {
    let mut v = vec![
        format!("paths.data={}", data.display()),
        format!("paths.work={}", work.display()),
    ];
    v.extend(SMALL_WORLD.iter().map(|s| s.to_string()));
    v.extend(extra.iter().map(|s| s.to_string()));
    v
}

fn config(s: &[String]) -> RunConfig {
    let mut cfg = RunConfig::default();
    for kv in s {
        cfg.apply_override(kv).unwrap();
    }
    cfg
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn default_world_retrieval_has_full_recall() {
    let dir = tempfile::tempdir().unwrap();
    let s = vec![
        format!("paths.data={}", dir.path().join("data").display()),
        format!("paths.work={}", dir.path().join("run").display()),
    ];
    ok(&graftnet(&["generate"], &s));
    let out = ok(&graftnet(&["retrieve"], &s));
    let report: serde_json::Value = serde_json::from_str(out.trim()).unwrap();
    assert!(report["recall"].as_f64().unwrap() >= 0.99, "{report}");
    let cached = std::fs::read_dir(dir.path().join("run/subgraphs")).unwrap().count();
    assert_eq!(cached, 2000);
    assert_eq!(json(&dir.path().join("run/retrieval.json")), report);
}

#[test]
fn zero_epoch_training_saves_the_initialization() {
    let dir = tempfile::tempdir().unwrap();
    let s = sets(&dir.path().join("data"), &dir.path().join("run"), &["seed=7"]);
    ok(&graftnet(&["generate"], &s));
    ok(&graftnet(&["train", "--epochs", "0"], &s));
    let saved = Model::load(&dir.path().join("run/model")).unwrap();
    let cfg = config(&s);
    let (ds, _) = pipeline::load_world(&cfg.data_dir).unwrap();
    assert_eq!(saved, pipeline::new_model(&ds, &cfg).unwrap());
    let metrics = std::fs::read_to_string(dir.path().join("run/metrics.jsonl")).unwrap();
    assert!(metrics.is_empty());
}

#[test]
fn single_cell_ablation_matches_train_then_eval() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let s = sets(
        &data,
        &dir.path().join("run"),
        &["trainer.p0=0.1", "retrieval.kb_fraction=0.5"],
    );
    ok(&graftnet(&["generate"], &s));
    ok(&graftnet(&["train"], &s));
    ok(&graftnet(&["eval"], &s));
    let report = json(&dir.path().join("run/report.json"));

    let a = sets(
        &data,
        &dir.path().join("grid"),
        &["ablate.p0=0.1", "ablate.kb_fraction=0.5"],
    );
    ok(&graftnet(&["ablate"], &a));
    let rows = std::fs::read_to_string(dir.path().join("grid/ablate.jsonl")).unwrap();
    let rows: Vec<serde_json::Value> = rows.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(rows.len(), 1);
    for key in ["hits1", "f1", "recall", "theta"] {
        assert_eq!(rows[0][key], report[key], "{key}");
    }
}

#[test]
fn ablation_table_has_one_row_per_grid_cell() {
    let dir = tempfile::tempdir().unwrap();
    let s = sets(
        &dir.path().join("data"),
        &dir.path().join("grid"),
        &[
            "ablate.p0=0,0.2",
            "ablate.heterogeneous=true,false",
            "ablate.kb_fraction=1",
            "trainer.epochs=1",
        ],
    );
    ok(&graftnet(&["generate"], &s));
    let out = ok(&graftnet(&["ablate"], &s));
    let table = std::fs::read_to_string(dir.path().join("grid/ablate.tsv")).unwrap();
    assert_eq!(table, out);
    assert_eq!(table.lines().count(), 1 + 4);
}

#[test]
fn single_threaded_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let mut outputs = Vec::new();
    for run in ["a", "b"] {
        let s = sets(
            &data,
            &dir.path().join(run),
            &["trainer.p0=0.2", "retrieval.mode=fused"],
        );
        ok(&graftnet(&["generate", "--threads", "1"], &s));
        ok(&graftnet(&["train", "--threads", "1"], &s));
        ok(&graftnet(&["eval", "--threads", "1"], &s));
        let read = |f: &str| std::fs::read(dir.path().join(run).join(f)).unwrap();
        outputs.push((read("model/model.ckpt"), read("metrics.jsonl"), read("report.json")));
    }
    assert!(outputs[0] == outputs[1]);
}

#[test]
fn late_fusion_of_two_runs() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let kb = sets(&data, &dir.path().join("kb"), &["retrieval.mode=kb"]);
    let text = sets(&data, &dir.path().join("text"), &["retrieval.mode=text"]);
    ok(&graftnet(&["generate"], &kb));
    ok(&graftnet(&["train"], &kb));
    ok(&graftnet(&["train"], &text));
    let f = sets(&data, &dir.path().join("fused"), &[]);
    let kb_run = dir.path().join("kb");
    let text_run = dir.path().join("text");
    let args = [
        "fuse",
        "--kb-run",
        kb_run.to_str().unwrap(),
        "--text-run",
        text_run.to_str().unwrap(),
    ];
    ok(&graftnet(&args, &f));
    let report = json(&dir.path().join("fused/fusion.json"));
    let beta = report["beta"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&beta));
}

#[test]
fn answer_ranks_candidates() {
    let dir = tempfile::tempdir().unwrap();
    let s = sets(&dir.path().join("data"), &dir.path().join("run"), &[]);
    ok(&graftnet(&["generate"], &s));
    ok(&graftnet(&["train"], &s));
    let out = ok(&graftnet(&["answer", "--question", "0", "--top", "3"], &s));
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines.len(), 4);
    let scores: Vec<f64> = lines[1..]
        .iter()
        .map(|l| l.split('\t').next().unwrap().parse().unwrap())
        .collect();
    assert!(scores.windows(2).all(|w| w[0] >= w[1]));
}

#[test]
fn config_errors_exit_2_and_name_the_key() {
    let out = graftnet(&["generate", "--set", "model.bogus=1"], &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("model.bogus"));

    let out = graftnet(&["train", "--set", "trainer.p0=2"], &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("trainer.p0"));

    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("run.cfg");
    std::fs::write(&file, "model.L = 3\nretrieval.E = many\n").unwrap();
    let out = graftnet(&["generate", "--config", file.to_str().unwrap()], &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("retrieval.E"));
}

#[test]
fn missing_artifacts_are_dependency_errors() {
    let dir = tempfile::tempdir().unwrap();
    let s = sets(&dir.path().join("data"), &dir.path().join("run"), &[]);
    let out = graftnet(&["train"], &s);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("generate"));
    ok(&graftnet(&["generate"], &s));
    let out = graftnet(&["eval"], &s);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("train"));
}

#[test]
fn diverging_training_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let s = sets(
        &dir.path().join("data"),
        &dir.path().join("run"),
        &["trainer.learning_rate=1e30"],
    );
    ok(&graftnet(&["generate"], &s));
    let out = graftnet(&["train"], &s);
    assert_eq!(out.status.code(), Some(4));
}
