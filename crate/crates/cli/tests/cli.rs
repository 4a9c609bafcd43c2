use std::path::Path;
use std::process::{Command, Output};

fn lanesight(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lanesight"))
        .args(args)
        .env_remove("LANESIGHT_CONFIG")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let o = lanesight(args);
    assert!(
        o.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    o
}

fn code(args: &[&str]) -> i32 {
    lanesight(args).status.code().expect("exit code")
}

fn read(p: &Path) -> Vec<u8> {
    std::fs::read(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SMALL: &[&str] = &["--set", "synth.n_vehicles=16", "--set", "synth.duration_s=12"];

#[test]
fn synth_twice_gives_identical_scene_and_manifest() {
    let t = tempfile::tempdir().unwrap();
    let (a, b) = (t.path().join("a"), t.path().join("b"));
    for d in [&a, &b] {
        let mut args = vec!["--seed", "7", "--out", s(d), "synth"];
        args.extend(SMALL);
        ok(&args);
    }
    assert_eq!(read(&a.join("scene.ndjson")), read(&b.join("scene.ndjson")));
    assert_eq!(read(&a.join("synth.manifest.json")), read(&b.join("synth.manifest.json")));
    let c = t.path().join("c");
    let mut args = vec!["--seed", "8", "--out", s(&c), "synth"];
    args.extend(SMALL);
    ok(&args);
    assert_ne!(read(&a.join("scene.ndjson")), read(&c.join("scene.ndjson")));
}

#[test]
fn manifest_records_hashes_and_config() {
    let t = tempfile::tempdir().unwrap();
    let mut args = vec!["--seed", "3", "--out", s(t.path()), "synth"];
    args.extend(SMALL);
    ok(&args);
    ok(&["--out", s(t.path()), "label", "--scene", s(&t.path().join("scene.ndjson"))]);
    let m: serde_json::Value = serde_json::from_slice(&read(&t.path().join("label.manifest.json"))).unwrap();
    assert_eq!(m["command"], "label");
    assert_eq!(m["version"], env!("CARGO_PKG_VERSION"));
    assert_eq!(m["inputs"][0]["file"], "scene.ndjson");
    assert_eq!(m["inputs"][0]["sha256"].as_str().unwrap().len(), 64);
    assert_eq!(m["outputs"][0]["file"], "labels.csv");
    let synth: serde_json::Value = serde_json::from_slice(&read(&t.path().join("synth.manifest.json"))).unwrap();
    assert_eq!(synth["config"]["seed"], 3);
    assert_eq!(synth["config"]["synth"]["n_vehicles"], 16);
    assert_eq!(synth["outputs"][0]["sha256"], m["inputs"][0]["sha256"]);
}

#[test]
fn stored_manifest_config_reproduces_outputs() {
    let t = tempfile::tempdir().unwrap();
    let a = t.path().join("a");
    let mut args = vec!["--seed", "11", "--out", s(&a), "synth"];
    args.extend(SMALL);
    ok(&args);
    let b = t.path().join("b");
    let manifest = a.join("synth.manifest.json");
    ok(&["--config", s(&manifest), "--out", s(&b), "synth"]);
    assert_eq!(read(&a.join("scene.ndjson")), read(&b.join("scene.ndjson")));
    assert_eq!(read(&a.join("synth.manifest.json")), read(&b.join("synth.manifest.json")));
}

#[test]
fn toml_config_env_var_and_set_precedence() {
    let t = tempfile::tempdir().unwrap();
    let cfg = t.path().join("run.toml");
    std::fs::write(&cfg, "seed = 5\n[synth]\nn_vehicles = 12\nduration_s = 10.0\n").unwrap();
    let out = t.path().join("o");
    let o = Command::new(env!("CARGO_BIN_EXE_lanesight"))
        .args(["--out", s(&out), "--set", "synth.n_vehicles=9", "synth"])
        .env("LANESIGHT_CONFIG", &cfg)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let m: serde_json::Value = serde_json::from_slice(&read(&out.join("synth.manifest.json"))).unwrap();
    assert_eq!(m["config"]["seed"], 5);
    assert_eq!(m["config"]["synth"]["n_vehicles"], 9);
    assert_eq!(m["config"]["synth"]["duration_s"], 10.0);
    ok(&["--config", s(&cfg), "--seed", "6", "--out", s(&out), "synth"]);
    let m: serde_json::Value = serde_json::from_slice(&read(&out.join("synth.manifest.json"))).unwrap();
    assert_eq!(m["config"]["seed"], 6);
}

#[test]
fn dry_run_writes_nothing() {
    let t = tempfile::tempdir().unwrap();
    let out = t.path().join("plan");
    let o = ok(&["--dry-run", "--out", s(&out), "synth"]);
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("plan: synth"));
    assert!(text.contains("scene.ndjson"));
    assert!(!out.exists());
    // inputs are still validated
    assert_eq!(code(&["--dry-run", "--out", s(&out), "label", "--scene", "/nonexistent/scene.ndjson"]), 2);
    assert!(!out.exists());
}

#[test]
fn exit_codes() {
    let t = tempfile::tempdir().unwrap();
    let out = s(t.path());
    assert_eq!(code(&["--help"]), 0);
    assert_eq!(code(&["frobnicate"]), 1);
    assert_eq!(code(&["--out", out, "--set", "nokey", "synth"]), 1);
    assert_eq!(code(&["--out", out, "--set", "train.epochs=0", "synth"]), 1);
    assert_eq!(code(&["--out", out, "--set", "train.bogus=1", "synth"]), 1);
    assert_eq!(code(&["--out", out, "--set", "data.preset=unknown", "synth"]), 1);
    let bad = t.path().join("bad.ndjson");
    std::fs::write(&bad, "not a scene\n").unwrap();
    assert_eq!(code(&["--out", out, "label", "--scene", s(&bad)]), 2);
    let mut args = vec!["--out", out, "synth"];
    args.extend(SMALL);
    ok(&args);
    let scene = t.path().join("scene.ndjson");
    let diverge = [
        "--out", out, "--set", "train.epochs=1", "--set", "train.learning_rate=1e300", "--set", "model.hidden=4",
        "train", "--scene", s(&scene),
    ];
    assert_eq!(code(&diverge), 3);
    assert!(!t.path().join("model.ckpt").exists());
}

fn write_fixture(dir: &Path) {
    // vehicle 1: ground-truth L over frames 10..30; predictions L at 10..14 and 20..27
    let mut labels = String::new();
    let mut preds = String::from("vehicle_id,frame_index,p_l,p_f,p_r,predicted\n");
    for f in 0..40 {
        let gt = if (10..30).contains(&f) { "L" } else { "F" };
        labels.push_str(&format!("1,{f},{gt}\n"));
        let p = if (10..14).contains(&f) || (20..27).contains(&f) { "L" } else { "F" };
        let probs = if p == "L" { "0.8,0.1,0.1" } else { "0.1,0.8,0.1" };
        preds.push_str(&format!("1,{f},{probs},{p}\n"));
    }
    std::fs::write(dir.join("labels.csv"), labels).unwrap();
    std::fs::write(dir.join("pred.csv"), preds).unwrap();
}

#[test]
fn evaluate_two_prediction_events_on_one_maneuver() {
    let t = tempfile::tempdir().unwrap();
    write_fixture(t.path());
    let out = t.path().join("eval");
    ok(&[
        "--out", s(&out), "evaluate",
        "--labels", s(&t.path().join("labels.csv")),
        "--predictions", &format!("fixture={}", s(&t.path().join("pred.csv"))),
    ]);
    let r: serde_json::Value = serde_json::from_slice(&read(&out.join("report.json"))).unwrap();
    let left = &r["methods"][0]["report"]["events"]["left"];
    assert_eq!(r["methods"][0]["name"], "fixture");
    assert_eq!(left["delay_mean_s"], 0.0);
    assert!((left["overlap_mean"].as_f64().unwrap() - 0.2).abs() < 1e-12);
    assert_eq!(left["frequency_mean"], 2.0);
    assert_eq!(left["miss_rate"], 0.0);
    let table = String::from_utf8(read(&out.join("report.txt"))).unwrap();
    assert!(table.contains("Total Rank"));
    assert!(table.contains("fixture"));
    assert!(table.contains("0.200"));
}

#[test]
fn evaluate_rejects_predictions_that_do_not_cover_the_labels() {
    let t = tempfile::tempdir().unwrap();
    write_fixture(t.path());
    let short = t.path().join("short.csv");
    let text = String::from_utf8(read(&t.path().join("pred.csv"))).unwrap();
    let lines: Vec<&str> = text.lines().take(30).collect();
    std::fs::write(&short, lines.join("\n") + "\n").unwrap();
    let out = t.path().join("eval");
    assert_eq!(
        code(&["--out", s(&out), "evaluate", "--labels", s(&t.path().join("labels.csv")), "--predictions", s(&short)]),
        2
    );
    assert!(!out.exists());
}

#[test]
fn full_pipeline_on_synthetic_data() {
    let t = tempfile::tempdir().unwrap();
    let out = s(t.path());
    let p = |n: &str| t.path().join(n);
    let (scene, labels, features) = (p("scene.ndjson"), p("labels.csv"), p("features.csv"));
    let (scene, labels, features) = (s(&scene), s(&labels), s(&features));
    let small_model = ["--set", "model.hidden=8", "--set", "model.embed_dim=4", "--set", "model.attention_dim=4", "--set", "train.epochs=2"];
    ok(&["--seed", "2", "--out", out, "--set", "synth.n_vehicles=24", "--set", "synth.duration_s=15", "synth"]);
    ok(&["--out", out, "label", "--scene", scene]);
    ok(&["--out", out, "extract", "--scene", scene]);
    let mut train = vec!["--seed", "2", "--out", out];
    train.extend(small_model);
    train.extend(["train", "--scene", scene, "--labels", labels, "--features", features]);
    ok(&train);
    let log = String::from_utf8(read(&p("train_log.ndjson"))).unwrap();
    assert_eq!(log.lines().count(), 4);
    ok(&["--out", out, "predict", "--model", s(&p("model.ckpt")), "--scene", scene]);
    std::fs::rename(p("predictions.csv"), p("lstm_a.csv")).unwrap();
    let nb_dir = t.path().join("nb");
    let mut nb = vec!["--seed", "2", "--out", s(&nb_dir), "--set", "model.kind=\"naive_bayes\""];
    nb.extend(["train", "--scene", scene]);
    ok(&nb);
    ok(&["--out", out, "predict", "--model", s(&nb_dir.join("model.ckpt")), "--scene", scene]);
    std::fs::rename(p("predictions.csv"), p("nb.csv")).unwrap();
    ok(&[
        "--out", out, "evaluate", "--labels", labels,
        "--predictions", &format!("NB={}", s(&p("nb.csv"))),
        "--predictions", &format!("LSTM-A={}", s(&p("lstm_a.csv"))),
        "--split", s(&p("split.json")),
        "--scene", scene,
    ]);
    let table = String::from_utf8(read(&p("report.txt"))).unwrap();
    for h in ["Accuracy", "B4C", "Total Rank", "NB", "LSTM-A"] {
        assert!(table.contains(h), "missing {h} in\n{table}");
    }
    assert_eq!(table.lines().count(), 4);
    ok(&["--out", out, "rank", "--report", s(&p("report.json"))]);
    let ranks: serde_json::Value = serde_json::from_slice(&read(&p("rank.json"))).unwrap();
    assert_eq!(ranks.as_array().unwrap().len(), 2);
    let vid = String::from_utf8(read(&p("labels.csv"))).unwrap().lines().next().unwrap().split(',').next().unwrap().to_string();
    ok(&["--out", out, "explain", "--model", s(&p("model.ckpt")), "--scene", scene, "--vehicle", &vid, "--frame", "20", "--predictions", &format!("NB={}", s(&p("nb.csv")))]);
    let svg = String::from_utf8(read(&p(&format!("scene_v{vid}_f20.svg")))).unwrap();
    assert_eq!(svg.matches("class=\"bar\"").count(), 5);
    let timeline = String::from_utf8(read(&p(&format!("timeline_v{vid}.svg")))).unwrap();
    assert_eq!(timeline.matches("class=\"strip\"").count(), 3);
    let contributions = String::from_utf8(read(&p("contributions.ndjson"))).unwrap();
    assert_eq!(contributions.lines().count(), 1);
}
