use std::path::Path;
use std::process::{Command, Output};

use labelformer::config::ExperimentConfig;
use labelformer::dataset::{manifest_path, DatasetManifest};
use labelformer::experiment::RunManifest;
use labelformer_core::model::Encoding;
use labelformer_core::tasks::Task;
use labelformer_core::tokens::TaskMode;

fn labelformer(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_labelformer"))
        .args(args)
        .env_remove("LABELFORMER_OUT")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = labelformer(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn tiny(task_mode: TaskMode) -> ExperimentConfig {
    let mut c = ExperimentConfig::scaled_single(Task::SortShape, vec![1, 2], Encoding::Label);
    c.data.n_sequences = 60;
    c.data.min_len = 3;
    c.data.max_len = 6;
    c.data.train_max_len = 6;
    c.data.label_range = 10;
    c.generalization_lengths = (7, 8);
    c.model.d_model = 8;
    c.model.d_mlp = 6;
    c.model.code_vocab = 10;
    c.model.task_mode = task_mode;
    c.train.steps = 6;
    c.train.eval_every = 3;
    c.train.batch_size = 6;
    c.train.eval_sequences = 6;
    c
}

fn write_config(dir: &Path, name: &str, c: &ExperimentConfig) -> String {
    let p = dir.join(name);
    std::fs::write(&p, toml::to_string(c).unwrap()).unwrap();
    p.to_string_lossy().into_owned()
}

fn manifest(root: &Path, run: &str) -> RunManifest {
    serde_json::from_str(&std::fs::read_to_string(root.join(run).join("manifest.json")).unwrap())
        .unwrap()
}

#[test]
fn gen_data_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a/d.jsonl");
    let b = dir.path().join("b/d.jsonl");
    for p in [&a, &b] {
        ok(&[
            "gen-data",
            "--seed",
            "1",
            "--n",
            "1000",
            "--out",
            p.to_str().unwrap(),
        ]);
    }
    let read = |p: &Path| -> DatasetManifest {
        serde_json::from_str(&std::fs::read_to_string(manifest_path(p)).unwrap()).unwrap()
    };
    let (ma, mb) = (read(&a), read(&b));
    assert_eq!(ma.sha256, mb.sha256);
    assert_eq!(ma.n, 1000);
    assert_eq!(ma.seed, 1);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(std::fs::read_to_string(&a).unwrap().lines().count(), 1000);
}

#[test]
fn bad_flags_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("d.jsonl");
    let r = labelformer(&[
        "gen-data",
        "--n",
        "10",
        "--label-range",
        "10",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(r.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&r.stderr).contains("label"));
    assert!(!out.exists());

    assert_eq!(
        labelformer(&["train", "--task", "S[z]"]).status.code(),
        Some(1)
    );
    assert_eq!(
        labelformer(&["train", "--arch", "1,x"]).status.code(),
        Some(1)
    );
    assert_eq!(
        labelformer(&["eval", "--run", "x", "--protocol", "fig9"])
            .status
            .code(),
        Some(1)
    );
    assert_eq!(labelformer(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(labelformer(&["--help"]).status.code(), Some(0));
    let missing = labelformer(&[
        "eval",
        "--run",
        "nope",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn train_eval_analyze_report() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("runs");
    let rs = root.to_str().unwrap();
    let cfg = write_config(dir.path(), "tiny.toml", &tiny(TaskMode::Single));
    ok(&[
        "train", "--config", &cfg, "--run", "t", "--out", rs, "--quiet",
    ]);
    let m = manifest(&root, "t");
    assert_eq!(m.checkpoints, vec![3, 6]);
    let runlog = std::fs::read_to_string(root.join("t/runlog.csv")).unwrap();
    assert!(runlog.starts_with("step,split,metric,value\n3,train,loss,"));

    ok(&[
        "eval",
        "--run",
        "t",
        "--ckpt",
        "last",
        "--protocol",
        "fig2",
        "--scale",
        "0.002",
        "--out",
        rs,
    ]);
    let metrics = std::fs::read_to_string(root.join("t/eval/fig2_step6.csv")).unwrap();
    assert!(metrics.starts_with("protocol,set,task,mode,slice_type,slice_value,metric,value,n\n"));
    assert!(metrics.contains("fig2,generalization,all,rollout,all,all,item_accuracy,"));
    assert!(root.join("t/eval/fig2_step6_thresholds.csv").exists());
    assert!(root.join("t/eval/fig2_step6_outcomes.jsonl").exists());

    ok(&[
        "analyze",
        "--run",
        "t",
        "--analysis",
        "all",
        "--sequences",
        "8",
        "--out",
        rs,
    ]);
    let adir = root.join("analysis/t");
    for f in [
        "attn_maps_Ss.json",
        "attn_within_Ss.csv",
        "attn_withinfrac_Ss.csv",
        "attn_eos_Ss.csv",
        "gauss_fit_checkpoints.csv",
        "sim_items.csv",
        "ablate_all.csv",
        "pca_Ss.csv",
        "pca_summary.csv",
    ] {
        assert!(adir.join(f).exists(), "{f}");
    }
    let gauss = std::fs::read_to_string(adir.join("gauss_fit_checkpoints.csv")).unwrap();
    assert_eq!(gauss.lines().count(), 1 + 2 * 3);

    let m = manifest(&root, "t");
    for a in &m.artifacts {
        assert!(root.join(a).exists(), "{a}");
    }
    assert!(m
        .artifacts
        .iter()
        .any(|a| a == "analysis/t/pca_summary.csv"));
    assert!(m.artifacts.iter().any(|a| a == "t/eval/fig2_step6.csv"));

    // Re-running an analysis reproduces its bytes.
    let before = std::fs::read(adir.join("ablate_all.csv")).unwrap();
    ok(&[
        "analyze",
        "--run",
        "t",
        "--analysis",
        "ablate",
        "--sequences",
        "8",
        "--out",
        rs,
    ]);
    assert_eq!(std::fs::read(adir.join("ablate_all.csv")).unwrap(), before);

    let out = ok(&["report", "--out", rs]);
    assert!(out.contains("1 runs"));
    let summary = std::fs::read_to_string(root.join("summary.csv")).unwrap();
    assert!(summary
        .lines()
        .nth(1)
        .unwrap()
        .starts_with("t,S[s],\"1,2\",label,8,6,0,"));
}

#[test]
fn training_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "tiny.toml", &tiny(TaskMode::Single));
    let roots = [dir.path().join("a"), dir.path().join("b")];
    for r in &roots {
        ok(&[
            "train",
            "--config",
            &cfg,
            "--run",
            "t",
            "--out",
            r.to_str().unwrap(),
            "--quiet",
        ]);
    }
    for f in [
        "runlog.csv",
        "config.toml",
        "checkpoints/step_6.bin",
        "checkpoints/step_6.json",
    ] {
        assert_eq!(
            std::fs::read(roots[0].join("t").join(f)).unwrap(),
            std::fs::read(roots[1].join("t").join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn multi_task_run_writes_task_similarity() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("runs");
    let rs = root.to_str().unwrap();
    let cfg = write_config(dir.path(), "multi.toml", &tiny(TaskMode::Multi));
    ok(&[
        "train", "--config", &cfg, "--out", rs, "--quiet", "--steps", "3",
    ]);
    let run = "multi-1x2-label-d8-s0";
    assert_eq!(manifest(&root, run).config.model.task_mode, TaskMode::Multi);
    ok(&["analyze", "--run", run, "--analysis", "sim", "--out", rs]);
    let sim =
        std::fs::read_to_string(root.join("analysis").join(run).join("sim_tasks.csv")).unwrap();
    assert_eq!(sim.lines().count(), 1 + 36);
    assert!(sim.contains("S[s],S[s],1"));
    ok(&[
        "eval",
        "--run",
        run,
        "--protocol",
        "fig6",
        "--scale",
        "0.005",
        "--mode",
        "tf",
        "--out",
        rs,
    ]);
    let metrics = std::fs::read_to_string(root.join(run).join("eval/fig6_step3.csv")).unwrap();
    for t in ["C", "R", "G[s]", "G[c]", "S[s]", "S[c]"] {
        assert!(
            metrics.contains(&format!("fig6,generalization,{t},tf,")),
            "{t}"
        );
    }
}
