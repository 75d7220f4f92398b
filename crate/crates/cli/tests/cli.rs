use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use edco_core::corpus::{load_jsonl, Split};
use edco_core::harness::{CompareSummary, EntropyPerformanceFit, ExperimentConfig, Manifest};
use edco_core::lm::load_checkpoint;
use edco_core::training::evaluate;

const SMALL: &str = r#"seed = 5

[task]
train_samples = 20
test_samples = 6
difficulty_range = [1, 2]

[train]
max_steps = 4
steps_per_interval = 2
n_select = 6
batch_size = 3
max_gen_len = 24
"#;

fn edco(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_edco"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn edco")
}

fn run_ok(sub: &str, config: &Path, out: &Path, extra: &[&str]) {
    let mut args = vec![sub, "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    let o = edco(&args);
    assert!(o.status.success(), "edco {sub} failed: {}", String::from_utf8_lossy(&o.stderr));
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("config.toml");
    std::fs::write(&p, text).unwrap();
    p
}

fn manifest(dir: &Path) -> Manifest {
    serde_json::from_slice(&std::fs::read(dir.join("manifest.json")).unwrap()).unwrap()
}

fn files_under(root: &Path) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in std::fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(root).unwrap();
                out.insert(rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/"));
            }
        }
    }
    out
}

#[test]
fn usage_errors_exit_nonzero() {
    let o = edco(&["frobnicate"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
    let o = edco(&["train", "--config", "x.toml", "--bogus"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("--bogus"));
}

#[test]
fn invalid_config_names_the_field() {
    let tmp = tempfile::tempdir().unwrap();
    let cases = [
        ("[train]\nbatch_sise = 3\n", "train.batch_sise"),
        ("[model]\ncontext_length = 40\n", "model.context_length"),
        ("[sweep]\nestimator = \"psychic\"\n", "sweep.estimator"),
    ];
    for (text, field) in cases {
        let cfg = write_config(tmp.path(), text);
        let o = edco(&["train", "--config", cfg.to_str().unwrap(), "--out", tmp.path().join("o").to_str().unwrap()]);
        assert!(!o.status.success());
        let err = String::from_utf8_lossy(&o.stderr);
        assert!(err.contains(field), "{field} not named in: {err}");
    }
    let cfg = write_config(tmp.path(), SMALL);
    let o = edco(&["train", "--config", cfg.to_str().unwrap(), "--out", "o", "--strategy", "hardest"]);
    assert!(!o.status.success());
}

#[test]
fn gen_data_writes_requested_samples() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "[task]\ntrain_samples = 120\ntest_samples = 60\n");
    let out = tmp.path().join("data");
    run_ok("gen-data", &cfg, &out, &[]);
    let text = std::fs::read_to_string(out.join("train.jsonl")).unwrap();
    assert_eq!(text.lines().count(), 120);
    assert_eq!(load_jsonl(&out.join("test.jsonl"), Split::Test).unwrap().len(), 60);

    let again = tmp.path().join("data2");
    run_ok("gen-data", &cfg, &again, &["--seed", "1"]);
    assert_ne!(manifest(&out).dataset_hash, manifest(&again).dataset_hash);
}

#[test]
fn train_compare_and_fit_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let edco_dir = tmp.path().join("edco");
    let rs_dir = tmp.path().join("rs");
    run_ok("train", &cfg, &edco_dir, &["--strategy", "edco"]);
    run_ok("train", &cfg, &rs_dir, &["--strategy", "random"]);

    let grid = |dir: &Path| -> Vec<(String, String)> {
        let mut r = csv::Reader::from_path(dir.join("steps.csv")).unwrap();
        r.records().map(|x| x.unwrap()).map(|x| (x[0].to_string(), x[1].to_string())).collect()
    };
    assert_eq!(grid(&edco_dir), grid(&rs_dir));
    assert_eq!(grid(&edco_dir).len(), 4);

    for dir in [&edco_dir, &rs_dir] {
        let m = manifest(dir);
        let mut listed: BTreeSet<String> = m.files.keys().cloned().collect();
        listed.insert("manifest.json".into());
        assert_eq!(listed, files_under(dir));
        assert_eq!(m.checkpoints.len(), 3);
        assert!(m.checkpoints.keys().all(|k| m.files.contains_key(k)));
    }

    let cmp = tmp.path().join("cmp");
    run_ok(
        "compare",
        &cfg,
        &cmp,
        &["--runs", edco_dir.to_str().unwrap(), rs_dir.to_str().unwrap()],
    );
    let summary: CompareSummary = serde_json::from_slice(&std::fs::read(cmp.join("summary.json")).unwrap()).unwrap();
    let names: Vec<&str> = summary.strategies.iter().map(|s| s.strategy.as_str()).collect();
    assert_eq!(names, ["edco", "random"]);

    let config = ExperimentConfig::load(&cfg).unwrap();
    let prepared = edco_core::harness::prepare(&config).unwrap();
    for (s, dir) in summary.strategies.iter().zip([&edco_dir, &rs_dir]) {
        assert_eq!(s.mean_pool_h.len(), 3);
        assert_eq!(s.mean_batch_h.len(), 2);
        let final_params = load_checkpoint(&dir.join("checkpoints/checkpoint_002.bin")).unwrap();
        let acc = evaluate(&final_params, prepared.test.samples(), true, config.train.max_gen_len).unwrap();
        assert_eq!(s.final_eval_accuracy, Some(acc));
    }

    let fit_dir = tmp.path().join("fit");
    run_ok("fit-eq3", &cfg, &fit_dir, &["--log", rs_dir.to_str().unwrap()]);
    let fit: EntropyPerformanceFit = serde_json::from_slice(&std::fs::read(fit_dir.join("fit.json")).unwrap()).unwrap();
    assert_eq!(fit.num_points, 3);
    assert!(fit.residual_rms.is_finite());
}

#[test]
fn output_dir_comes_from_config_or_flag() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("from_config");
    let text = format!("output_dir = {:?}\n{SMALL}", out.to_str().unwrap()).replacen("seed = 5\n", "", 1);
    let cfg = write_config(tmp.path(), &format!("seed = 5\n{text}"));
    let o = edco(&["sweep", "--config", cfg.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("entropy.csv").exists());

    let bare = write_config(tmp.path(), SMALL);
    let o = edco(&["sweep", "--config", bare.to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("--out"));
}
