use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sensorimotor")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn write_config(dir: &Path) -> String {
    let path = dir.join("config.json");
    std::fs::write(
        &path,
        r#"{"objects": [{"label": "cube"}, {"label": "sphere"}], "learning": "supervised", "exploration_steps": 30}"#,
    )
    .unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn train_eval_and_show_model() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path());
    let out = dir.path().join("run");
    let o = run(&["train", "--config", &config, "--seed", "3", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let metrics: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(metrics["episodes"], 2);
    for f in ["episodes.csv", "steps.jsonl", "state.json", "lm_0.json"] {
        assert!(out.join(f).exists(), "missing {f}");
    }
    let mut rows = csv::Reader::from_path(out.join("episodes.csv")).unwrap();
    assert_eq!(rows.records().count(), 2);

    let state = out.join("state.json");
    let o = run(&["eval", "--config", &config, "--models", state.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let metrics: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(metrics["episodes"], 2);

    for models in [state, out.join("lm_0.json")] {
        let o = run(&["show-model", "--models", models.to_str().unwrap(), "--object", "cube"]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        let text = stdout(&o);
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("node,x,y,z,nx,ny,nz,d1x,d1y,d1z,features,neighbors"));
        assert!(lines.count() > 0);
    }
    let o = run(&["show-model", "--models", out.join("lm_0.json").to_str().unwrap(), "--object", "teapot"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error:"));
}

#[test]
fn same_seed_same_episode_log() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path());
    let csv = |name: &str| {
        let out = dir.path().join(name);
        let o = run(&["train", "--config", &config, "--seed", "11", "--out", out.to_str().unwrap()]);
        assert!(o.status.success());
        std::fs::read(out.join("episodes.csv")).unwrap()
    };
    assert_eq!(csv("a"), csv("b"));
}

#[test]
fn errors_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"objects": [{"label": "cube"}], "typo": 1}"#).unwrap();
    let out = dir.path().join("out");
    let cases: Vec<Vec<String>> = vec![
        vec!["train".into(), "--config".into(), bad.to_string_lossy().into(), "--seed".into(), "0".into(), "--out".into(), out.to_string_lossy().into()],
        vec!["train".into(), "--config".into(), "/nonexistent.json".into(), "--seed".into(), "0".into(), "--out".into(), out.to_string_lossy().into()],
        vec!["eval".into(), "--config".into(), write_config(dir.path()), "--models".into(), "/nonexistent/state.json".into()],
        vec!["show-model".into(), "--models".into(), bad.to_string_lossy().into(), "--object".into(), "cube".into()],
        vec!["benchmark".into(), "--suite".into(), "nonsense".into()],
        vec!["train".into(), "--seed".into(), "x".into()],
    ];
    for args in cases {
        let args: Vec<&str> = args.iter().map(String::as_str).collect();
        let o = run(&args);
        assert!(!o.status.success(), "{args:?} succeeded");
    }
}

#[test]
fn benchmark_writes_its_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("bench");
    let o = run(&["benchmark", "--suite", "unsupervised", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let metrics: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(metrics["matches"], 1);
    for f in ["train/episodes.csv", "eval/episodes.csv", "models/state.json"] {
        assert!(out.join(f).exists(), "missing {f}");
    }
}
