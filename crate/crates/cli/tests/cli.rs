use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use loopeval::audio_io::{self, AudioClip};
use loopeval::tensorio;
use serde_json::Value;
use tempfile::TempDir;

fn loopeval(args: &[&str]) -> Output {
    loopeval_env(args, &[])
}

fn loopeval_env(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_loopeval"));
    cmd.args(args).env("SOURCE_DATE_EPOCH", "1700000000").env_remove("LOOPEVAL_THREADS");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth(dir: &Path, count: usize, diversity: &str, seed: u64) {
    let o = loopeval(&[
        "synth",
        "--count",
        &count.to_string(),
        "--diversity",
        diversity,
        "--seed",
        &seed.to_string(),
        "--out",
        s(dir),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
}

fn prepare(input: &Path, out: &Path) {
    let o = loopeval(&["prepare", "--input", s(input), "--out", s(out)]);
    assert!(o.status.success(), "{}", stderr(&o));
}

fn tree(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .collect();
    files.sort();
    files
        .into_iter()
        .map(|p| (p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap()))
        .collect()
}

#[test]
fn missing_input_is_a_usage_error() {
    let o = loopeval(&["prepare", "--out", "x"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("Usage"));
}

#[test]
fn bad_thread_setting_is_a_usage_error() {
    let tmp = TempDir::new().unwrap();
    let o = loopeval_env(
        &["synth", "--count", "1", "--out", s(tmp.path())],
        &[("LOOPEVAL_THREADS", "many")],
    );
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn synth_is_byte_identical_across_runs() {
    let tmp = TempDir::new().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    synth(&a, 10, "collapsed", 7);
    synth(&b, 10, "collapsed", 7);
    let (ta, tb) = (tree(&a), tree(&b));
    assert_eq!(ta, tb);
    let wavs: Vec<_> = ta.iter().filter(|(p, _)| p.extension().is_some_and(|e| e == "wav")).collect();
    assert_eq!(wavs.len(), 10);
    assert!(wavs.iter().all(|(_, bytes)| *bytes == wavs[0].1));
    let manifest: Value = serde_json::from_slice(&fs::read(a.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 7);
}

#[test]
fn prepare_writes_manifest_and_fixed_shape_tensors() {
    let tmp = TempDir::new().unwrap();
    let (wav, out) = (tmp.path().join("wav"), tmp.path().join("prep"));
    synth(&wav, 3, "high", 1);
    prepare(&wav, &out);
    let manifest: Value = serde_json::from_slice(&fs::read(out.join("manifest.json")).unwrap()).unwrap();
    let entries = manifest.as_array().unwrap();
    assert_eq!(entries.len(), 3);
    for e in entries {
        assert_eq!(e["status"], "ok");
        let t = tensorio::read_tensor(out.join(e["tensor_file"].as_str().unwrap())).unwrap();
        assert_eq!(t.dims, vec![80, 320]);
    }
}

#[test]
fn prepare_fails_when_every_bar_drops() {
    let tmp = TempDir::new().unwrap();
    let wav = tmp.path().join("wav");
    fs::create_dir_all(&wav).unwrap();
    let clip = AudioClip::new(vec![0.1; 44_100], 44_100).unwrap();
    audio_io::write_wav(&clip, wav.join("fast.wav")).unwrap();
    let ann = tmp.path().join("ann.csv");
    fs::write(&ann, "path,downbeat_seconds\nfast.wav,0.0\nfast.wav,0.1\nfast.wav,0.2\n").unwrap();
    let o = loopeval(&[
        "prepare",
        "--input",
        s(&wav),
        "--out",
        s(&tmp.path().join("prep")),
        "--annotations",
        s(&ann),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("tempo_range: 2"), "{}", stderr(&o));
}

#[test]
fn embed_writes_one_row_per_tensor() {
    let tmp = TempDir::new().unwrap();
    let (wav, out) = (tmp.path().join("wav"), tmp.path().join("prep"));
    synth(&wav, 4, "high", 2);
    prepare(&wav, &out);
    let emb = tmp.path().join("emb.lten");
    let o = loopeval(&["embed", "--input", s(&out), "--out", s(&emb), "--seed", "5"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(tensorio::read_tensor(&emb).unwrap().dims, vec![4, 160]);
    let side: Value = serde_json::from_slice(&fs::read(tmp.path().join("emb.lten.json")).unwrap()).unwrap();
    assert_eq!(side["seed"], 5);
}

#[test]
fn train_classifier_separates_fixture() {
    let tmp = TempDir::new().unwrap();
    let feats = tmp.path().join("f.csv");
    let labels = tmp.path().join("l.csv");
    let mut f = String::from("clip_id,x,y\n");
    let mut l = String::from("clip_id,label\n");
    for i in 0..40 {
        let (x, class) = if i % 2 == 0 { (-3.0 - i as f64 * 0.01, "a") } else { (3.0 + i as f64 * 0.01, "b") };
        f += &format!("c{i},{x},{}\n", (i as f64 * 0.37).sin());
        l += &format!("c{i},{class}\n");
    }
    fs::write(&feats, f).unwrap();
    fs::write(&labels, l).unwrap();
    let model = tmp.path().join("model.json");
    let o = loopeval(&[
        "train-classifier",
        "--features",
        s(&feats),
        "--labels",
        s(&labels),
        "--seed",
        "3",
        "--out",
        s(&model),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("training accuracy 1.000000"));
    let m: Value = serde_json::from_slice(&fs::read(&model).unwrap()).unwrap();
    assert_eq!(m["training_accuracy"], 1.0);
    assert_eq!(m["config"]["seed"], 3);
}

struct Sets {
    tmp: TempDir,
}

impl Sets {
    fn new() -> Self {
        let tmp = TempDir::new().unwrap();
        synth(&tmp.path().join("wr"), 12, "high", 1);
        synth(&tmp.path().join("wf"), 12, "collapsed", 2);
        prepare(&tmp.path().join("wr"), &tmp.path().join("real"));
        prepare(&tmp.path().join("wf"), &tmp.path().join("fake"));
        Self { tmp }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.tmp.path().join(name)
    }
}

#[test]
fn eval_contracts() {
    let sets = Sets::new();
    let real = sets.path("real");
    let fake = sets.path("fake");

    // same set
    let report = sets.path("same.json");
    let o = loopeval(&[
        "eval", "--real", s(&real), "--fake", s(&real), "--k", "4", "--seed", "1", "--report", s(&report),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let r: Value = serde_json::from_slice(&fs::read(&report).unwrap()).unwrap();
    assert_eq!(r["fad"], 0.0);
    assert_eq!(r["ndb"], 0);
    assert_eq!(r["jsd"], 0.0);
    assert_eq!(r["parameters"]["diversity"]["k"], 4);
    assert_eq!(r["parameters"]["diversity"]["alpha"], 0.05);
    assert_eq!(r["parameters"]["seed"], 1);
    assert_eq!(r["timestamp"], "2023-11-14T22:13:20Z");
    assert!(String::from_utf8_lossy(&o.stdout).contains("FAD"));

    // collapsed fake scores worse than the same-set run
    let report2 = sets.path("diff.json");
    let o = loopeval(&[
        "eval", "--real", s(&real), "--fake", s(&fake), "--k", "4", "--seed", "1", "--report", s(&report2),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let r2: Value = serde_json::from_slice(&fs::read(&report2).unwrap()).unwrap();
    assert!(r2["jsd"].as_f64().unwrap() > 0.0);
    assert!(r2["fad"].as_f64().unwrap() > 0.0);

    // the recorded command regenerates the report
    fs::remove_file(&report2).unwrap();
    let argv: Vec<String> = r2["command"].as_array().unwrap().iter().map(|v| v.as_str().unwrap().to_string()).collect();
    let args: Vec<&str> = argv[1..].iter().map(String::as_str).collect();
    assert!(loopeval(&args).status.success());
    let again: Value = serde_json::from_slice(&fs::read(&report2).unwrap()).unwrap();
    assert_eq!(again, r2);

    // inception score needs a posterior source
    let o = loopeval(&["eval", "--real", s(&real), "--fake", s(&fake), "--metrics", "is"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("posterior source"));

    // a failing metric is named and no report is written
    let bad = sets.path("bad.csv");
    fs::write(&bad, "clip_id,a,b\nx,0.5,0.2\n").unwrap();
    let report3 = sets.path("never.json");
    let o = loopeval(&[
        "eval", "--real", s(&real), "--fake", s(&fake), "--k", "4", "--posteriors", s(&bad), "--report", s(&report3),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("metric is failed"), "{}", stderr(&o));
    assert!(!report3.exists());

    // saved clusterings reproduce the fitted run
    let clusters = sets.path("clusters.json");
    let a = sets.path("a.json");
    let b = sets.path("b.json");
    let common = ["eval", "--real", s(&real), "--fake", s(&fake), "--k", "4", "--metrics", "ndb,jsd"];
    let mut first = common.to_vec();
    first.extend(["--clusters-out", s(&clusters), "--report", s(&a)]);
    assert!(loopeval(&first).status.success());
    let mut second = common.to_vec();
    second.extend(["--clusters-in", s(&clusters), "--report", s(&b)]);
    assert!(loopeval(&second).status.success());
    let (ra, rb): (Value, Value) = (
        serde_json::from_slice(&fs::read(&a).unwrap()).unwrap(),
        serde_json::from_slice(&fs::read(&b).unwrap()).unwrap(),
    );
    assert_eq!(ra["ndb"], rb["ndb"]);
    assert_eq!(ra["jsd"], rb["jsd"]);
}

#[test]
fn eval_with_classifier_and_external_arrays() {
    let sets = Sets::new();
    let (real, fake) = (sets.path("real"), sets.path("fake"));
    let (er, ef) = (sets.path("er.lten"), sets.path("ef.lten"));
    assert!(loopeval(&["embed", "--input", s(&real), "--out", s(&er)]).status.success());
    assert!(loopeval(&["embed", "--input", s(&fake), "--out", s(&ef)]).status.success());

    let labels = sets.path("labels.csv");
    let mut text = String::from("clip_id,label\n");
    for i in 0..12 {
        text += &format!("row{i},{}\n", if i < 6 { "x" } else { "y" });
    }
    fs::write(&labels, text).unwrap();
    let model = sets.path("model.json");
    let o = loopeval(&["train-classifier", "--features", s(&er), "--labels", s(&labels), "--out", s(&model)]);
    assert!(o.status.success(), "{}", stderr(&o));

    let report = sets.path("r.json");
    let o = loopeval(&[
        "eval", "--real", s(&real), "--fake", s(&fake), "--metrics", "is,fad", "--splits", "2",
        "--classifier", s(&model), "--embeddings", s(&er), s(&ef), "--report", s(&report),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let r: Value = serde_json::from_slice(&fs::read(&report).unwrap()).unwrap();
    let is = r["is_mean"].as_f64().unwrap();
    assert!((1.0..=2.0).contains(&is));
    assert_eq!(r["parameters"]["inception"]["splits"], 2);
    assert!(r.get("ndb").is_none());

    let (p1, p2) = (sets.path("p1.json"), sets.path("p2.json"));
    let o = loopeval(&["eval", "--real", s(&real), "--fake", s(&fake), "--metrics", "fad", "--report", s(&p1)]);
    assert!(o.status.success());
    let o = loopeval(&[
        "eval", "--real", s(&real), "--fake", s(&fake), "--metrics", "fad", "--embeddings", s(&er), s(&ef),
        "--report", s(&p2),
    ]);
    assert!(o.status.success());
    let fad = |p: &Path| -> f64 {
        let v: Value = serde_json::from_slice(&fs::read(p).unwrap()).unwrap();
        v["fad"].as_f64().unwrap()
    };
    // the LTEN files hold float32 copies of the same embeddings
    assert!((fad(&p1) - fad(&p2)).abs() <= 1e-4 * fad(&p1));
}
