use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn dapnet(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dapnet"))
        .args(args)
        .current_dir(cwd)
        .env_remove("DAPNET_OUT")
        .output()
        .expect("spawn dapnet")
}

fn stderr_json(out: &Output) -> serde_json::Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text.lines().last().expect("stderr line");
    serde_json::from_str(line).expect("one JSON error line")
}

fn synth(root: &Path, id: &str, style: &str) -> PathBuf {
    let out = dapnet(
        &["synth-gen", "--seed", "7", "--n", "6", "--size", "64", "--style", style, "--test", "2", "--out", "corpora", "--run-id", id],
        root,
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let manifest = root.join("corpora").join(id).join("manifest.csv");
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), manifest.strip_prefix(root).unwrap().display().to_string());
    manifest
}

fn write_config(root: &Path, src: &Path, tgt: &Path) -> PathBuf {
    let path = root.join("c.cfg");
    let text = format!(
        "# desk run\nvariant = NA\ncrop_size = 48\nbatch_size = 2\ncrops_per_image = 1\n\
         channel_width_scale = 0.125\ntotal_epochs = 2\nconstant_epochs = 1\n\
         source_manifest = {}\ntarget_manifest = {}\noutput_dir = {}\n",
        src.display(),
        tgt.display(),
        root.join("runs").display()
    );
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn synth_gen_writes_corpus_and_manifest() {
    let root = tempfile::tempdir().unwrap();
    let out = dapnet(
        &["synth-gen", "--seed", "7", "--n", "4", "--size", "64", "--style", "stainA", "--paired", "--out", "o", "--run-id", "a"],
        root.path(),
    );
    assert!(out.status.success());
    let dir = root.path().join("o/a");
    assert!(dir.join("manifest.csv").exists());
    assert_eq!(std::fs::read_dir(dir.join("images")).unwrap().count(), 4);
    assert_eq!(std::fs::read_dir(dir.join("masks")).unwrap().count(), 4);

    let again = dapnet(
        &["synth-gen", "--seed", "7", "--n", "4", "--size", "64", "--style", "stainB", "--paired", "--out", "o", "--run-id", "b"],
        root.path(),
    );
    assert!(again.status.success());
    for e in std::fs::read_dir(dir.join("masks")).unwrap() {
        let name = e.unwrap().file_name().into_string().unwrap();
        let twin = root.path().join("o/b/masks").join(name.replace("stainA", "stainB"));
        assert_eq!(std::fs::read(dir.join("masks").join(&name)).unwrap(), std::fs::read(twin).unwrap());
    }
}

#[test]
fn train_then_evaluate_then_report() {
    let root = tempfile::tempdir().unwrap();
    let r = root.path();
    let src = synth(r, "src", "stainA");
    let tgt = synth(r, "tgt", "stainB");
    let cfg = write_config(r, &src, &tgt);

    let out = dapnet(&["train", "--config", "c.cfg", "--set", "variant=FULL", "--run-id", "t1"], r);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let run = r.join("runs/t1");
    let ckpt = run.join("checkpoints/epoch_0002.ckpt");
    assert!(ckpt.exists());
    assert!(run.join("train_log.jsonl").exists());
    assert_eq!(std::fs::read_to_string(run.join("epochs.jsonl")).unwrap().lines().count(), 2);
    let frozen = std::fs::read_to_string(run.join("config.cfg")).unwrap();
    assert!(frozen.contains("variant = FULL"), "{frozen}");
    assert!(cfg.exists());

    let out = dapnet(&["evaluate", "--checkpoint", ckpt.to_str().unwrap(), "--overlays", "--run-id", "e1"], r);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let eval = r.join("runs/e1");
    for name in ["source_test", "target_test"] {
        let report: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(eval.join(format!("{name}.json"))).unwrap()).unwrap();
        assert_eq!(report["variant"], "FULL");
        assert_eq!(report["per_image"].as_array().unwrap().len(), 2);
        assert_eq!(std::fs::read_dir(eval.join("overlays").join(name)).unwrap().count(), 2);
    }
    assert!(eval.join("config.cfg").exists());

    let out = dapnet(&["report", "runs/e1", "--out", "reports", "--run-id", "r1"], r);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let table = String::from_utf8_lossy(&out.stdout);
    assert!(table.contains("target_test\tFULL"), "{table}");
}

#[test]
fn missing_checkpoint_is_a_usage_error() {
    let root = tempfile::tempdir().unwrap();
    let out = dapnet(&["evaluate", "--checkpoint", "missing.ckpt"], root.path());
    assert_eq!(out.status.code(), Some(2));
    let err = stderr_json(&out);
    assert_eq!(err["error"], "checkpoint_not_found");
    assert!(err["message"].as_str().unwrap().contains("checkpoint not found"));
}

#[test]
fn invalid_overrides_and_commands_exit_with_two() {
    let root = tempfile::tempdir().unwrap();
    std::fs::write(root.path().join("c.cfg"), "").unwrap();
    for set in ["crop_size=250", "nonsense", "no_such_key=1", "variant=XX"] {
        let out = dapnet(&["train", "--config", "c.cfg", "--set", set], root.path());
        assert_eq!(out.status.code(), Some(2), "{set}");
        assert!(stderr_json(&out)["message"].is_string());
    }
    let out = dapnet(&["frobnicate"], root.path());
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_json(&out)["error"], "usage");
}

#[test]
fn runtime_failures_exit_with_one() {
    let root = tempfile::tempdir().unwrap();
    std::fs::write(
        root.path().join("c.cfg"),
        "source_manifest = absent.csv\ntarget_manifest = absent.csv\n",
    )
    .unwrap();
    let out = dapnet(&["train", "--config", "c.cfg", "--out", "runs"], root.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr_json(&out)["error"].is_string());
}
