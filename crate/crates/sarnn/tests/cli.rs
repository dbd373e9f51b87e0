use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sarnn::artifacts::{strip_wall_time, CheckpointFile, ReportFile, RunManifest};
use sarnn::store::{read_dataset, DatasetManifest};

fn sarnn(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sarnn")).args(args).current_dir(cwd).output().expect("spawn sarnn")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

const SMALL_WAVE: &str = "preset = \"wave\"\n[training]\nmode = \"tf\"\nepochs = 6\n[evaluation]\ncases = 4\nhorizon = 40\n";

const SMALL_MACKEY: &str = "preset = \"mackey-snr60\"\n\
[dataset.mackey]\ntotal_time = 20000.0\n\
[dataset.split]\ntrain_sequences = 2\nval_sequences = 1\nsequence_len = 400\n\
[model]\nhidden_dim = 4\n\
[training]\nepochs = 2\nbatch_size = 2\n";

#[test]
fn wave_generate_has_paper_splits() {
    let tmp = tempfile::tempdir().unwrap();
    let o = sarnn(&["generate", "--preset", "wave", "--out", "nested/data"], tmp.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let m: DatasetManifest = serde_json::from_str(&fs::read_to_string(tmp.path().join("nested/data/manifest.json")).unwrap()).unwrap();
    assert_eq!(m.splits.train, vec![[200, 128]]);
    assert_eq!(m.splits.val, vec![[200, 128]]);
    assert_eq!(m.splits.test, vec![[200, 128]]);
    assert!(stdout(&o).contains(&m.sha256));
}

#[test]
fn mackey_generate_has_paper_splits() {
    let tmp = tempfile::tempdir().unwrap();
    let o = sarnn(&["generate", "--preset", "mackey-snr60", "--out", "mg"], tmp.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let ds = read_dataset(&tmp.path().join("mg")).unwrap();
    assert_eq!(ds.data.train.len(), 32);
    assert_eq!(ds.data.val.len(), 32);
    assert!(ds.data.train.iter().chain(&ds.data.val).all(|s| s.shape() == [1120, 1]));
    assert_eq!(ds.data.test[0].rows(), 200_000 - 71_680);
}

#[test]
fn darwin_config_reads_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let rows: Vec<String> = std::iter::once("slp".to_string()).chain((0..1400).map(|i| format!("{}", (i as f64 * 0.1).sin()))).collect();
    write(tmp.path(), "darwin.csv", &rows.join("\n"));
    write(tmp.path(), "d.toml", "preset = \"darwin\"\n");
    let o = sarnn(&["generate", "--config", "d.toml", "--out", "dd"], tmp.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let ds = read_dataset(&tmp.path().join("dd")).unwrap();
    assert_eq!(ds.data.split_rows(), [600, 400, 400]);
}

#[test]
fn train_writes_artifacts_and_refuses_overwrite() {
    let tmp = tempfile::tempdir().unwrap();
    write(tmp.path(), "w.toml", SMALL_WAVE);
    let o = sarnn(&["train", "--config", "w.toml", "--out", "run"], tmp.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let run = tmp.path().join("run");
    for f in ["checkpoint.json", "last.json", "history.csv", "manifest.json", "config.toml"] {
        assert!(run.join(f).exists(), "{f}");
    }
    let history = fs::read_to_string(run.join("history.csv")).unwrap();
    let lines: Vec<&str> = history.lines().collect();
    assert_eq!(lines[0], "epoch,mode,p,train_loss,val_loss_p1,wall_time_s");
    assert_eq!(lines.len(), 7);
    for l in &lines[1..] {
        let f: Vec<&str> = l.split(',').collect();
        assert_eq!((f[1], f[2]), ("tf", "0"));
    }
    let manifest: RunManifest = serde_json::from_str(&fs::read_to_string(run.join("manifest.json")).unwrap()).unwrap();
    let ck = CheckpointFile::load(&run.join("checkpoint.json")).unwrap();
    assert_eq!(manifest.best_epoch, ck.epoch);
    assert_eq!(manifest.dataset_sha256, ck.dataset_sha256);
    assert_eq!(manifest.seed, 1);

    let again = sarnn(&["train", "--config", "w.toml", "--out", "run"], tmp.path());
    assert_eq!(code(&again), 1);
    assert!(stderr(&again).contains("--force"));
    let forced = sarnn(&["train", "--config", "w.toml", "--out", "run", "--force", "--seed", "2"], tmp.path());
    assert_eq!(code(&forced), 0, "{}", stderr(&forced));
    let manifest: RunManifest = serde_json::from_str(&fs::read_to_string(run.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest.seed, 2);
}

#[test]
fn run_reproduces_from_its_config() {
    let tmp = tempfile::tempdir().unwrap();
    write(tmp.path(), "w.toml", &SMALL_WAVE.replace("\"tf\"", "\"sa\""));
    assert_eq!(code(&sarnn(&["train", "--config", "w.toml", "--out", "a"], tmp.path())), 0);
    let o = sarnn(&["train", "--config", "a/config.toml", "--out", "b"], tmp.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let read = |d: &str| strip_wall_time(&fs::read_to_string(tmp.path().join(d).join("history.csv")).unwrap());
    assert_eq!(read("a"), read("b"));
    let ck = |d: &str| fs::read_to_string(tmp.path().join(d).join("checkpoint.json")).unwrap();
    assert_eq!(ck("a"), ck("b"));
}

#[test]
fn divergence_exits_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    write(tmp.path(), "w.toml", &format!("{SMALL_WAVE}learning_rate = 1.7976931348623157e308\n").replace("[evaluation]\ncases = 4\nhorizon = 40\n", ""));
    let o = sarnn(&["train", "--config", "w.toml", "--out", "run"], tmp.path());
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    assert!(stderr(&o).contains("diverged at epoch"), "{}", stderr(&o));
    assert!(tmp.path().join("run/history.csv").exists());
    assert!(!tmp.path().join("run/checkpoint.json").exists());
}

#[test]
fn evaluate_writes_reports() {
    let tmp = tempfile::tempdir().unwrap();
    write(tmp.path(), "w.toml", SMALL_WAVE);
    assert_eq!(code(&sarnn(&["train", "--config", "w.toml", "--out", "run"], tmp.path())), 0);
    let o = sarnn(&["evaluate", "--checkpoint", "run/checkpoint.json"], tmp.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let summary = stdout(&o);
    assert!(summary.contains("rmse") && summary.contains("ssim") && summary.contains("spectrum_error"), "{summary}");
    let report: ReportFile = serde_json::from_str(&fs::read_to_string(tmp.path().join("run/report.json")).unwrap()).unwrap();
    assert_eq!(report.model.cases.len(), 4);
    assert_eq!(report.model.horizon, 40);
    assert!(report.model.ssim.is_some());
    let curves = fs::read_to_string(tmp.path().join("run/curves.csv")).unwrap();
    assert_eq!(curves.lines().count(), 41);
    assert_eq!(fs::read_to_string(tmp.path().join("run/cases.csv")).unwrap().lines().count(), 5);

    let again = sarnn(&["evaluate", "--checkpoint", "run/checkpoint.json"], tmp.path());
    assert_eq!(code(&again), 1);
    assert_eq!(code(&sarnn(&["evaluate", "--checkpoint", "run/checkpoint.json", "--force"], tmp.path())), 0);
}

#[test]
fn mackey_evaluation_uses_preset_protocol() {
    let tmp = tempfile::tempdir().unwrap();
    write(tmp.path(), "m.toml", SMALL_MACKEY);
    let o = sarnn(&["train", "--config", "m.toml", "--out", "run"], tmp.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let e = sarnn(&["evaluate", "--checkpoint", "run/checkpoint.json"], tmp.path());
    assert_eq!(code(&e), 0, "{}", stderr(&e));
    let report: ReportFile = serde_json::from_str(&fs::read_to_string(tmp.path().join("run/report.json")).unwrap()).unwrap();
    assert_eq!(report.model.cases.len(), 100);
    assert_eq!(report.model.horizon, 896);
    assert!(report.model.ssim.is_none());
}

#[test]
fn evaluate_rejects_dimension_mismatch() {
    let tmp = tempfile::tempdir().unwrap();
    write(tmp.path(), "w.toml", SMALL_WAVE);
    write(tmp.path(), "m.toml", SMALL_MACKEY);
    assert_eq!(code(&sarnn(&["train", "--config", "w.toml", "--out", "run"], tmp.path())), 0);
    let o = sarnn(&["evaluate", "--checkpoint", "run/checkpoint.json", "--config", "m.toml", "--out", "ev"], tmp.path());
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("d_x"), "{}", stderr(&o));
    assert!(!tmp.path().join("ev/report.json").exists());
}

#[test]
fn stored_dataset_with_wrong_hash_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(code(&sarnn(&["generate", "--preset", "wave", "--out", "data"], tmp.path())), 0);
    let cfg = format!(
        "{SMALL_WAVE}[dataset]\nkind = \"stored\"\ndir = \"data\"\nsha256 = \"{}\"\n",
        "0".repeat(64)
    );
    write(tmp.path(), "s.toml", &cfg);
    let o = sarnn(&["train", "--config", "s.toml", "--out", "run"], tmp.path());
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("hash"), "{}", stderr(&o));
    let m: DatasetManifest = serde_json::from_str(&fs::read_to_string(tmp.path().join("data/manifest.json")).unwrap()).unwrap();
    write(tmp.path(), "s.toml", &cfg.replace(&"0".repeat(64), &m.sha256));
    let o = sarnn(&["train", "--config", "s.toml", "--out", "run2"], tmp.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let manifest: RunManifest = serde_json::from_str(&fs::read_to_string(tmp.path().join("run2/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest.dataset_sha256, m.sha256);
}

#[test]
fn gradcheck_passes_and_reports_identities() {
    let tmp = tempfile::tempdir().unwrap();
    let o = sarnn(&["gradcheck"], tmp.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = stdout(&o);
    for name in ["grad_tf", "grad_ar", "grad_ss", "grad_sa", "identity_sa0_tf", "identity_sa1_ar", "lemma"] {
        assert!(text.lines().any(|l| l.starts_with(name) && l.ends_with("ok")), "{name}\n{text}");
    }
}

#[test]
fn gradcheck_names_a_corrupted_adjoint() {
    let tmp = tempfile::tempdir().unwrap();
    let o = sarnn(&["gradcheck", "--inject-fault", "sigmoid"], tmp.path());
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("sigmoid"), "{}", stderr(&o));
    assert!(stdout(&o).lines().any(|l| l.starts_with("sigmoid") && l.ends_with("FAIL")));
}

#[test]
fn usage_and_config_errors_exit_with_one() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(code(&sarnn(&["train", "--bogus"], tmp.path())), 1);
    assert_eq!(code(&sarnn(&[], tmp.path())), 1);
    assert_eq!(code(&sarnn(&["--help"], tmp.path())), 0);
    write(tmp.path(), "bad.toml", "[training]\nepochs = -3\n");
    let o = sarnn(&["train", "--config", "bad.toml"], tmp.path());
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("training.epochs"), "{}", stderr(&o));
    write(tmp.path(), "bad.toml", "[evaluation]\ncases = 0\n");
    let o = sarnn(&["gradcheck", "--config", "bad.toml"], tmp.path());
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("evaluation.cases"), "{}", stderr(&o));
    assert_eq!(code(&sarnn(&["train", "--preset", "nope"], tmp.path())), 1);
}
