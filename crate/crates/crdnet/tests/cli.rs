//! End-to-end CLI checks: gen-data, train, eval, decode, and export-curves
//! against a tiny configuration, driving the installed binary.

use std::path::{Path, PathBuf};
use std::process::Command;

fn workdir() -> PathBuf {
    let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("cli");
    std::fs::create_dir_all(&dir).expect("create cli tmp dir");
    dir
}

fn crdnet(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_crdnet"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(path: &Path, out_dir: &Path) {
    let text = format!(
        r#"
preset = small
placement = 1GRU,1DNN
strategy = fs
seed = 3
data_seed = 4
epochs = 1
pretrain_epochs = 1
batch_size = 6
utterances = 24
out_dir = {}

lang.mini.role = target
lang.mini.vocab_size = 5
lang.mini.seed = 9
lang.mini.noise_std = 0.2
lang.mini.frames_per_token = 2..3
lang.mini.utterance_length = 1..3
"#,
        out_dir.display()
    );
    std::fs::write(path, text).expect("write config");
}

#[test]
fn cli_round_trip() {
    let dir = workdir();
    let config_path = dir.join("mini.cfg");
    let data_dir = dir.join("data");
    let train_dir = dir.join("train");
    write_config(&config_path, &train_dir);

    // gen-data writes one dataset file per language.
    let out = crdnet(&[
        "gen-data",
        "--config",
        config_path.to_str().unwrap(),
        "--out",
        data_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "gen-data: {}", String::from_utf8_lossy(&out.stderr));
    let dataset_path = data_dir.join("mini.mld");
    assert!(dataset_path.exists());

    // gen-data is byte-deterministic.
    let bytes_a = std::fs::read(&dataset_path).unwrap();
    let out = crdnet(&[
        "gen-data",
        "--config",
        config_path.to_str().unwrap(),
        "--out",
        data_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    assert_eq!(bytes_a, std::fs::read(&dataset_path).unwrap());

    // train runs the experiment and writes a summary + checkpoint.
    let out = crdnet(&["train", "--config", config_path.to_str().unwrap()]);
    assert!(out.status.success(), "train: {}", String::from_utf8_lossy(&out.stderr));
    let summary = std::fs::read_to_string(train_dir.join("summary.txt")).unwrap();
    assert!(summary.contains("status = complete"));
    assert!(summary.contains("strategy = fs"));
    let checkpoint = train_dir.join("model_mini.crdm");
    assert!(checkpoint.exists());
    assert!(train_dir.join("metrics.tsv").exists());

    // eval reports a TER on the dataset file.
    let out = crdnet(&[
        "eval",
        "--checkpoint",
        checkpoint.to_str().unwrap(),
        "--data",
        dataset_path.to_str().unwrap(),
        "--beam",
        "4",
    ]);
    assert!(out.status.success(), "eval: {}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("ter = "), "unexpected eval output: {stdout}");

    // decode consumes a standalone feature file.
    let dataset = crdnet::harness::read_dataset(&dataset_path).unwrap();
    let fbnk = dir.join("utt0.fbnk");
    crdnet::features::write_fbnk_file(&fbnk, &dataset.utterances[0].features).unwrap();
    let out = crdnet(&[
        "decode",
        "--checkpoint",
        checkpoint.to_str().unwrap(),
        "--features",
        fbnk.to_str().unwrap(),
        "--language",
        "mini",
    ]);
    assert!(out.status.success(), "decode: {}", String::from_utf8_lossy(&out.stderr));

    // export-curves writes one TSV per language plus the ReLU reference.
    let curves = dir.join("curves");
    let out = crdnet(&[
        "export-curves",
        "--checkpoint",
        checkpoint.to_str().unwrap(),
        "--layer",
        "gru2",
        "--points",
        "21",
        "--out",
        curves.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "export-curves: {}", String::from_utf8_lossy(&out.stderr));
    assert!(curves.join("gru2_mini.tsv").exists());
    assert!(curves.join("gru2_relu.tsv").exists());

    // Failure paths exit nonzero.
    let out = crdnet(&["eval", "--checkpoint", "/nonexistent.crdm", "--data", dataset_path.to_str().unwrap()]);
    assert!(!out.status.success());
}
