use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const SHORT_CIRCLE: &str = r#"
[scenario]
preset = "circle"
count = 60

[flow]
eps = 0.2
end = 0.04

[constants]
c3 = 6.25e-7
"#;

fn vflow(args: &[&str], threads: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_vflow"));
    cmd.args(args);
    match threads {
        Some(t) => cmd.env("VFLOW_THREADS", t),
        None => cmd.env_remove("VFLOW_THREADS"),
    };
    cmd.output().expect("vflow runs")
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!("{e}: stdout {} stderr {}", String::from_utf8_lossy(&out.stdout), String::from_utf8_lossy(&out.stderr))
    })
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.display().to_string()
}

fn simulate(dir: &Path, config: &str, threads: Option<&str>) -> String {
    let cfg = write(dir, "run.toml", config);
    let out_dir = dir.join("out").display().to_string();
    let out = vflow(&["simulate", &cfg, "--out", &out_dir], threads);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    out_dir
}

#[test]
fn zero_step_config_gives_one_snapshot() {
    let dir = tempfile::tempdir().unwrap();
    let out = simulate(dir.path(), "[flow]\nend = 0.0\n", None);
    let m: Value = serde_json::from_str(&fs::read_to_string(Path::new(&out).join("trace.json")).unwrap()).unwrap();
    assert_eq!(m["frames"].as_array().unwrap().len(), 1);
    assert_eq!(m["times"], serde_json::json!([0.0]));
    assert_eq!(m["seed"], 0);
    assert_eq!(m["config"]["scenario"]["preset"], "circle");
    let sidecar: Value =
        serde_json::from_str(&fs::read_to_string(Path::new(&out).join("frames/frame_00000.json")).unwrap()).unwrap();
    assert_eq!(sidecar, serde_json::json!({"n": 2, "d": 1, "count": 200}));
}

#[test]
fn short_run_passes_mass_decay_and_technical_lemma() {
    let dir = tempfile::tempdir().unwrap();
    let out = simulate(dir.path(), SHORT_CIRCLE, None);
    let masses: Vec<f64> = serde_json::from_str::<Value>(&fs::read_to_string(Path::new(&out).join("trace.json")).unwrap())
        .unwrap()["masses"]
        .as_array()
        .unwrap()
        .iter()
        .map(|m| m.as_f64().unwrap())
        .collect();
    assert_eq!(masses.len(), 6);
    assert!(masses.windows(2).all(|w| w[1] < w[0]), "{masses:?}");
    let res = vflow(&["check", &out, "--cert", "mass-decay", "--cert", "technical-lemma"], None);
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stdout));
    let report = json(&res);
    let verdicts = report["verdicts"].as_array().unwrap();
    assert_eq!(verdicts.len(), 2);
    for v in verdicts {
        assert_eq!(v["pass"], true);
        for key in ["name", "anchor", "bound", "measured"] {
            assert!(!v[key].is_null(), "{key} missing in {v}");
        }
    }
}

#[test]
fn mass_edited_into_the_barrier_ball_fails() {
    let dir = tempfile::tempdir().unwrap();
    let out = simulate(dir.path(), SHORT_CIRCLE, None);
    let pass = vflow(&["check", &out, "-c", "eps-sphere-barrier"], None);
    assert_eq!(pass.status.code(), Some(0), "{}", String::from_utf8_lossy(&pass.stdout));

    let frame = Path::new(&out).join("frames/frame_00001.csv");
    let mut text = fs::read_to_string(&frame).unwrap();
    text.push_str("0,0,10000000000,1,0,0,0\n");
    fs::write(&frame, text).unwrap();
    let sidecar = frame.with_extension("json");
    let mut meta: Value = serde_json::from_str(&fs::read_to_string(&sidecar).unwrap()).unwrap();
    meta["count"] = Value::from(meta["count"].as_u64().unwrap() + 1);
    fs::write(&sidecar, meta.to_string()).unwrap();

    let fail = vflow(&["check", &out, "-c", "eps-sphere-barrier"], None);
    assert_eq!(fail.status.code(), Some(1));
    let v = &json(&fail)["verdicts"][0];
    assert_eq!(v["pass"], false);
    assert!(v["measured"].as_f64().unwrap() > v["bound"].as_f64().unwrap());
}

#[test]
fn distances() {
    let dir = tempfile::tempdir().unwrap();
    let origin = write(dir.path(), "o.csv", "x1,x2,w\n0,0,1\n");
    let one = write(dir.path(), "a.csv", "x1,x2,w\n1,0,1\n");
    let five = write(dir.path(), "b.csv", "x1,x2,w\n0,5,1\n");
    let d = |a: &str, b: &str| json(&vflow(&["distance", a, b], None))["distance"].as_f64().unwrap();
    assert_eq!(d(&origin, &origin), 0.0);
    assert!((d(&origin, &one) - 1.0).abs() < 1e-9);
    assert!((d(&origin, &five) - 2.0).abs() < 1e-9);
}

#[test]
fn volume_of_a_segment_loop() {
    let dir = tempfile::tempdir().unwrap();
    let mesh = write(dir.path(), "sq.csv", "loop,x,y\na,0,0\na,2,0\na,2,2\na,0,2\n");
    let out = vflow(&["volume", &mesh, "--ball", "2,1,0.5", "--samples", "40000"], None);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let r = json(&out);
    assert!((r["regions"][0]["volume"].as_f64().unwrap() - 4.0).abs() < 1e-12);
    let ball = &r["ball"];
    let half = std::f64::consts::PI * 0.125;
    assert!((ball["volume"].as_f64().unwrap() - half).abs() < 4.0 * ball["standard_error"].as_f64().unwrap());
}

#[test]
fn usage_and_config_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write(dir.path(), "bad.toml", "[flow]\neps = 0.1\nunknown_key = 1\n");
    let out = vflow(&["simulate", &bad, "--out", &dir.path().join("o").display().to_string()], None);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("bad.toml:3") && err.contains("unknown_key"), "{err}");

    let gate = write(dir.path(), "gate.toml", "[flow]\ndt = 0.01\nend = 0.1\n");
    let out = vflow(&["simulate", &gate, "--out", &dir.path().join("g").display().to_string()], None);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("gate"));

    let missing = vflow(&["check", &dir.path().join("nowhere").display().to_string()], None);
    assert_eq!(missing.status.code(), Some(2));
    assert_eq!(vflow(&["frobnicate"], None).status.code(), Some(2));
    assert_eq!(vflow(&["simulate", "--preset", "circle", "--print-config"], Some("zero")).status.code(), Some(2));
}

#[test]
fn preset_config_prints_and_reparses() {
    let dir = tempfile::tempdir().unwrap();
    let out = vflow(&["simulate", "--preset", "enlaced", "--print-config"], None);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("preset = \"enlaced-circles\""));
    let path = write(dir.path(), "p.toml", &text);
    let again = vflow(&["simulate", &path, "--print-config"], None);
    assert_eq!(String::from_utf8(again.stdout).unwrap(), text);
}

#[test]
fn frames_are_identical_across_thread_counts() {
    let max = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1).to_string();
    let mut runs = Vec::new();
    for threads in ["1", "2", max.as_str()] {
        let dir = tempfile::tempdir().unwrap();
        let out = simulate(dir.path(), SHORT_CIRCLE, Some(threads));
        let mut frames = Vec::new();
        let mut names: Vec<_> = fs::read_dir(Path::new(&out).join("frames")).unwrap().map(|e| e.unwrap().path()).collect();
        names.sort();
        for p in names {
            frames.push((p.file_name().unwrap().to_owned(), fs::read(&p).unwrap()));
        }
        runs.push(frames);
    }
    assert!(!runs[0].is_empty());
    assert_eq!(runs[0], runs[1]);
    assert_eq!(runs[0], runs[2]);
}
