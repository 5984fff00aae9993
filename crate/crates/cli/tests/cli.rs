use std::path::Path;
use std::process::{Command, Output};

fn mipcnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mipcnet")).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const MICRO: &str = r#"{
  "model": {"input_size": 32, "num_classes": 3, "stem_base_width": 4,
            "transformer": {"hidden_dim": 16, "depth": 1, "heads": 2, "mlp_ratio": 2}},
  "train": {"batch_size": 2, "max_iterations": 3},
  "data": {"num_samples": 6, "num_classes": 3, "image_size": 32}
}"#;

fn micro_config(dir: &Path) -> String {
    let p = dir.join("micro.json");
    std::fs::write(&p, MICRO).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn missing_config_is_a_validation_error() {
    let o = mipcnet(&["train", "--config", "missing.json"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("missing.json"));
}

#[test]
fn unknown_keys_and_flags_are_named() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.json");
    std::fs::write(&p, r#"{"train": {"batch_sise": 4}}"#).unwrap();
    let o = mipcnet(&["train", "--config", p.to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("batch_sise"), "{}", stderr(&o));

    std::fs::write(&p, r#"{"model": {"transformer": {"layers": 2}}}"#).unwrap();
    let o = mipcnet(&["train", "--config", p.to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("layers"), "{}", stderr(&o));

    let o = mipcnet(&["train", "--bogus"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("--bogus"));

    let o = mipcnet(&["ablate", "--axis", "table7"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("table7"));
}

#[test]
fn invalid_values_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = mipcnet(&["train", "--lr", "-1", "--out", out]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("lr"));
    let o = mipcnet(&["evaluate", "--checkpoint", "nope.safetensors", "--out", out]);
    assert_eq!(code(&o), 1);
    let o = mipcnet(&["report", "--from", out, "--out", out]);
    assert_eq!(code(&o), 1);
}

#[test]
fn gradcheck_prints_each_check_and_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = mipcnet(&["gradcheck", "--preset", "tiny", "--only", "gate", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("channel_gate") && stdout.contains("position_gate"));
    assert!(dir.path().join("manifests/gradcheck.json").is_file());
}

#[test]
fn synth_train_evaluate_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = micro_config(dir.path());
    let out = dir.path().join("run");
    let out_s = out.to_str().unwrap();

    let o = mipcnet(&["synth-data", "--config", &cfg, "--seed", "3", "--out", out_s]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let data = out.join("data");
    assert!(data.join("case005_img.png").is_file() && data.join("case005_mask.png").is_file());
    assert!(data.join("manifest.json").is_file());

    let o = mipcnet(&["train", "--config", &cfg, "--data", data.to_str().unwrap(), "--out", out_s]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for f in ["checkpoints/model.safetensors", "train_log.jsonl", "report.json", "manifests/train.json"] {
        assert!(out.join(f).is_file(), "{f}");
    }
    let trained = std::fs::read_to_string(out.join("report.json")).unwrap();

    let eval_out = dir.path().join("eval");
    let ckpt = out.join("checkpoints/model.safetensors");
    let o = mipcnet(&[
        "evaluate",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--out",
        eval_out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(std::fs::read_to_string(eval_out.join("report.json")).unwrap(), trained);

    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("manifests/train.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["train"]["max_iterations"], 3);
    assert_eq!(manifest["artifacts"].as_array().unwrap().len(), 3);
}

#[test]
fn diverging_training_is_a_runtime_failure() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = micro_config(dir.path());
    let o = mipcnet(&[
        "train", "--config", &cfg, "--lr", "1e30", "--iterations", "30", "--out", dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    assert!(stderr(&o).contains("consecutive"));
}

#[test]
fn ablate_then_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = micro_config(dir.path());
    let out = dir.path().join("abl");
    let o = mipcnet(&["ablate", "--config", &cfg, "--axis", "table5", "--seed", "0", "--iterations", "2", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = std::fs::read_to_string(out.join("tables/table5.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);
    assert!(out.join("plots/table5.svg").is_file());
    assert!(out.join("manifests/ablate.json").is_file());

    let md = out.join("tables/table5.md");
    std::fs::remove_file(&md).unwrap();
    let o = mipcnet(&["report", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(std::fs::read_to_string(md).unwrap().contains("synthetic analog, not paper numbers"));
}
