use std::path::Path;
use std::process::{Command, Output};

use hola::manifest::{read_manifest, Split};

fn hola(args: &[&str], seed: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_hola"));
    cmd.args(args).env_remove("HOLA_SEED");
    if let Some(s) = seed {
        cmd.env("HOLA_SEED", s);
    }
    cmd.output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn gen(dir: &Path, seed: Option<&str>) -> Output {
    hola(&["gen-data", "--config", "tiny", "--out", dir.to_str().unwrap()], seed)
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    for sub in ["", "clips"] {
        let mut names: Vec<_> = std::fs::read_dir(dir.join(sub))
            .unwrap()
            .map(|e| e.unwrap().path())
            .filter(|p| p.is_file())
            .collect();
        names.sort();
        for p in names {
            out.push((p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()));
        }
    }
    out
}

#[test]
fn gen_data_is_byte_identical_and_seeded() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b, c) = (tmp.path().join("a"), tmp.path().join("b"), tmp.path().join("c"));
    assert_eq!(code(&gen(&a, None)), 0);
    assert_eq!(code(&gen(&b, None)), 0);
    assert_eq!(dir_bytes(&a), dir_bytes(&b));
    assert_eq!(code(&gen(&c, Some("5"))), 0);
    let header = std::fs::read_to_string(c.join("run_header.json")).unwrap();
    assert!(header.contains("\"seed\": 5"));
    assert_ne!(std::fs::read(a.join("clips/train-0001.clip")).unwrap(), std::fs::read(c.join("clips/train-0001.clip")).unwrap());

    let records = read_manifest(&a.join("manifest.jsonl")).unwrap();
    assert_eq!(records.len(), 2 * (4 + 2 + 4));
    for r in &records {
        assert!(a.join(&r.clip_path).is_file());
    }
}

#[test]
fn hidden_labels_stay_out_of_the_training_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(code(&gen(tmp.path(), None)), 0);
    let text = std::fs::read_to_string(tmp.path().join("manifest.jsonl")).unwrap();
    for line in text.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        let keys: Vec<&String> = v.as_object().unwrap().keys().collect();
        assert!(!keys.iter().any(|k| k.as_str() == "hidden_label"), "{line}");
        if v["split"] == "pool" {
            assert_eq!(keys.len(), 3, "pool rows expose only id, path and split: {line}");
        }
    }
    let oracle = read_manifest(&tmp.path().join("oracle.jsonl")).unwrap();
    assert!(oracle.iter().all(|r| r.hidden_label.is_some()));
    assert_eq!(oracle.iter().filter(|r| r.split == Split::Pool).count(), 8);
}

#[test]
fn full_pipeline_on_the_tiny_preset() {
    let tmp = tempfile::tempdir().unwrap();
    let p = |s: &str| tmp.path().join(s).to_str().unwrap().to_string();
    assert_eq!(code(&gen(&tmp.path().join("data"), None)), 0);
    let o = hola(&["pretrain", "--config", "tiny", "--data", &p("data"), "--out", &p("pre")], None);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let steps = std::fs::read_to_string(tmp.path().join("pre/pretrain_steps.jsonl")).unwrap();
    assert_eq!(steps.lines().count(), 2 * 4);
    let o = hola(
        &["finetune", "--config", "tiny", "--data", &p("data"), "--out", &p("ft"), "--init", &p("pre/pretrain.ckpt")],
        None,
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let o = hola(
        &["selftrain", "--config", "tiny", "--set", "selftrain.threshold=0.51", "--data", &p("data"), "--out", &p("st")],
        None,
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let iters = std::fs::read_to_string(tmp.path().join("st/selftrain_iterations.jsonl")).unwrap();
    assert_eq!(iters.lines().count(), 2);
    for dir in ["pre", "ft", "st"] {
        let h: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(tmp.path().join(dir).join("run_header.json")).unwrap())
                .unwrap();
        assert_eq!(h["config_hash"].as_str().unwrap().len(), 64);
        assert_eq!(h["formats"]["checkpoint"], 1);
    }

    let o = hola(&["evaluate", "--data", &p("data"), "--checkpoint", &p("ft/finetune.ckpt")], None);
    assert_eq!(code(&o), 0);
    let m: serde_json::Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    for k in ["acc", "uar", "wa_f1", "auc"] {
        assert!(m[k].is_number(), "{k}");
    }
    let o = hola(&["evaluate", "--data", &p("data"), "--checkpoint", &p("pre/pretrain.ckpt")], None);
    assert_eq!(code(&o), 1);

    // A flipped byte in the checkpoint is a validation failure, not a crash.
    let ck = tmp.path().join("ft/finetune.ckpt");
    let mut bytes = std::fs::read(&ck).unwrap();
    let n = bytes.len();
    bytes[n / 2] ^= 0xff;
    std::fs::write(&ck, bytes).unwrap();
    let o = hola(&["evaluate", "--data", &p("data"), "--checkpoint", &p("ft/finetune.ckpt")], None);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("checksum"));
}

#[test]
fn evaluate_prints_perfect_auc_for_perfect_predictions() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    assert_eq!(code(&gen(&data, None)), 0);
    let preds: String = read_manifest(&data.join("manifest.jsonl"))
        .unwrap()
        .iter()
        .filter(|r| r.split == Split::Val)
        .map(|r| {
            let p = if r.label == Some(hola::manifest::ClassLabel::Fake) { 0.9 } else { 0.1 };
            format!("{{\"id\":\"{}\",\"fake_prob\":{p}}}\n", r.id)
        })
        .collect();
    let pf = tmp.path().join("preds.jsonl");
    std::fs::write(&pf, preds).unwrap();
    let out = tmp.path().join("eval");
    let o = hola(
        &["evaluate", "--data", data.to_str().unwrap(), "--predictions", pf.to_str().unwrap(), "--out", out.to_str().unwrap()],
        None,
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(stdout(&o).trim(), r#"{"acc":1.0,"uar":1.0,"wa_f1":1.0,"auc":1.0}"#);
    assert!(out.join("run_header.json").is_file());
    assert!(out.join("metrics.json").is_file());
}

#[test]
fn gradcheck_tiny_passes_with_a_table() {
    let o = hola(&["gradcheck", "--config", "tiny"], None);
    assert_eq!(code(&o), 0);
    let text = stdout(&o);
    assert!(text.starts_with("check"));
    assert!(text.contains("max_rel_err"));
    assert!(text.contains("finetune_loss"));
    assert!(!text.contains("FAIL"));
}

#[test]
fn usage_and_validation_errors_exit_one() {
    let o = hola(&["frobnicate"], None);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
    assert_eq!(code(&hola(&["gen-data", "--out", "x", "--bogus"], None)), 1);
    assert_eq!(code(&hola(&[], None)), 1);
    assert_eq!(code(&hola(&["gen-data", "--config", "tiny", "--set", "nope=1", "--out", "x"], None)), 1);
    assert_eq!(code(&hola(&["gen-data", "--config", "/no/such/file", "--out", "x"], None)), 2);
    assert_eq!(code(&hola(&["gen-data", "--config", "tiny", "--out", "x"], Some("abc"))), 1);
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(code(&hola(&["pretrain", "--config", "tiny", "--data", tmp.path().to_str().unwrap(), "--out", tmp.path().join("o").to_str().unwrap()], None)), 2);
    assert_eq!(code(&hola(&["--help"], None)), 0);
}

#[test]
fn unwritable_output_is_a_runtime_failure() {
    let tmp = tempfile::tempdir().unwrap();
    let file = tmp.path().join("f");
    std::fs::write(&file, b"").unwrap();
    let o = hola(&["gen-data", "--config", "tiny", "--out", file.join("sub").to_str().unwrap()], None);
    assert_eq!(code(&o), 2);
}
