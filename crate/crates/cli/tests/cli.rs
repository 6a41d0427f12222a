use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use confrec::synth::{generate, SyntheticConfig};
use confrec::{Checkpoint, EmbeddingState, Matrix, RawDataset};
use tempfile::TempDir;

fn confrec() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_confrec"));
    cmd.env_remove("CONF_REC_SEED").env_remove("RUST_LOG");
    cmd
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn assert_success(out: &Output) {
    assert!(
        out.status.success(),
        "stdout:\n{}\nstderr:\n{}",
        stdout(out),
        stderr(out)
    );
}

/// Small synthetic dataset in `user<TAB>item` format.
fn write_synthetic(dir: &Path) -> PathBuf {
    let raw = generate(&SyntheticConfig {
        users: 40,
        items: 60,
        ..SyntheticConfig::with_seed(1)
    })
    .unwrap();
    let text: String = raw
        .records()
        .iter()
        .map(|&(u, i)| format!("{}\t{}\n", raw.user_id(u as usize), raw.item_id(i as usize)))
        .collect();
    let path = dir.join("data.tsv");
    fs::write(&path, text).unwrap();
    path
}

fn train(data: &Path, out: &Path, extra: &[&str]) -> Output {
    run(confrec()
        .args([
            "train",
            "--epochs",
            "3",
            "--dim",
            "8",
            "--batch-size",
            "32",
            "--seed",
            "5",
        ])
        .arg("--data")
        .arg(data)
        .arg("--out")
        .arg(out)
        .args(extra))
}

fn snapshot(data: &Path, seed: u64) -> BTreeMap<String, String> {
    BTreeMap::from([
        ("data".to_owned(), data.display().to_string()),
        ("seed".to_owned(), seed.to_string()),
    ])
}

#[test]
fn training_is_byte_reproducible_across_thread_counts() {
    let dir = TempDir::new().unwrap();
    let data = write_synthetic(dir.path());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_success(&train(&data, &a, &["--threads", "1"]));
    assert_success(&train(&data, &b, &["--threads", "3"]));
    let ck_a = fs::read(a.join("checkpoint.bin")).unwrap();
    assert_eq!(ck_a, fs::read(b.join("checkpoint.bin")).unwrap());
    assert_eq!(&ck_a[..4], b"CFRC");
    let log = fs::read_to_string(a.join("train_log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 3);
}

#[test]
fn zero_conf_weight_logs_zero_penalty() {
    let dir = TempDir::new().unwrap();
    let data = write_synthetic(dir.path());
    assert_success(&train(&data, dir.path(), &["--conf-weight", "0"]));
    let log = fs::read_to_string(dir.path().join("train_log.jsonl")).unwrap();
    for line in log.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(v["conf"].as_f64(), Some(0.0));
        assert!(v["bpr"].as_f64().unwrap() > 0.0);
    }
}

#[test]
fn missing_data_file_is_an_input_error() {
    let dir = TempDir::new().unwrap();
    let missing = dir.path().join("nope.tsv");
    let out = train(&missing, dir.path(), &[]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("nope.tsv"), "{}", stderr(&out));
}

#[test]
fn corrupted_checkpoint_is_rejected() {
    let dir = TempDir::new().unwrap();
    let data = write_synthetic(dir.path());
    assert_success(&train(&data, dir.path(), &[]));
    let path = dir.path().join("checkpoint.bin");
    let mut bytes = fs::read(&path).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x40;
    fs::write(&path, bytes).unwrap();
    let out = run(confrec().arg("evaluate").arg("--checkpoint").arg(&path));
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("checksum"), "{}", stderr(&out));
}

#[test]
fn divergence_exits_with_code_two() {
    let dir = TempDir::new().unwrap();
    let data = write_synthetic(dir.path());
    let out = train(&data, dir.path(), &["--lr", "1e300"]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
}

#[test]
fn usage_errors_exit_with_code_one() {
    assert_eq!(run(confrec().arg("bogus")).status.code(), Some(1));
    assert_eq!(
        run(confrec().args(["train", "--topn", "x"])).status.code(),
        Some(1)
    );
    let out = run(confrec().arg("train"));
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("--data"));
    assert_eq!(run(confrec().arg("--help")).status.code(), Some(0));
}

#[test]
fn calibration_leaves_ranking_metrics_unchanged() {
    let dir = TempDir::new().unwrap();
    let data = write_synthetic(dir.path());
    assert_success(&train(&data, dir.path(), &[]));
    let out = run(confrec()
        .args(["evaluate", "--calibrate", "--tau", "0.5", "--topn", "10"])
        .arg("--checkpoint")
        .arg(dir.path().join("checkpoint.bin")));
    assert_success(&out);
    let text = stdout(&out);
    let metrics = |prefix: &str| {
        text.lines()
            .find_map(|l| l.strip_prefix(prefix))
            .map(|rest| rest.split(" tau").next().unwrap().to_owned())
            .unwrap_or_else(|| panic!("no `{prefix}` line in\n{text}"))
    };
    assert_eq!(metrics("raw "), metrics("calibrated "));
    assert!(metrics("raw ").starts_with("Precision@10 "));
}

/// Dataset where every user has two interactions over four items.
fn two_per_user(dir: &Path) -> PathBuf {
    let path = dir.join("pairs.tsv");
    fs::write(
        &path,
        "u0\ta\nu0\tb\nu1\tc\nu1\td\nu2\ta\nu2\tc\nu3\tb\nu3\td\n",
    )
    .unwrap();
    path
}

#[test]
fn oracle_embeddings_reach_full_precision_at_one() {
    let dir = TempDir::new().unwrap();
    let data = two_per_user(dir.path());
    let seed = 9;
    let raw = RawDataset::load(&data).unwrap();
    let split = raw.split(seed);
    let (n, m) = (raw.num_users(), raw.num_items());
    // Item embeddings are the identity; each user points at its test item.
    let mut users = Matrix::zeros(n, m);
    for u in 0..n {
        users.row_mut(u)[split.test(u)[0] as usize] = 1.0;
    }
    let mut items = Matrix::zeros(m, m);
    for i in 0..m {
        items.row_mut(i)[i] = 1.0;
    }
    let state = EmbeddingState::from_layer0(users, items);
    let ck = dir.path().join("oracle.bin");
    Checkpoint::from_state(&state, 0, snapshot(&data, seed))
        .write(&ck)
        .unwrap();
    let out = run(confrec()
        .args(["evaluate", "--topn", "1"])
        .arg("--checkpoint")
        .arg(&ck));
    assert_success(&out);
    assert!(
        stdout(&out).contains("raw Precision@1 100.000 Accuracy@1 100.000"),
        "{}",
        stdout(&out)
    );
}

fn zero_checkpoint(dir: &Path) -> PathBuf {
    let data = two_per_user(dir);
    let state = EmbeddingState::from_layer0(Matrix::zeros(4, 2), Matrix::zeros(4, 2));
    let ck = dir.join("zero.bin");
    Checkpoint::from_state(&state, 1, snapshot(&data, 3))
        .write(&ck)
        .unwrap();
    ck
}

#[test]
fn perfectly_calibrated_fixture_has_zero_ece() {
    // All ratings tie: three candidates at confidence 1/3 each, one of
    // which is the single test item.
    let dir = TempDir::new().unwrap();
    let ck = zero_checkpoint(dir.path());
    let out_dir = dir.path().join("rel");
    let out = run(confrec()
        .args(["reliability", "--topn", "3"])
        .arg("--checkpoint")
        .arg(&ck)
        .arg("--out")
        .arg(&out_dir));
    assert_success(&out);
    for line in stdout(&out).lines().filter(|l| l.starts_with("ece")) {
        let value: f64 = line.split_whitespace().nth(2).unwrap().parse().unwrap();
        assert!(value.abs() <= 1e-12, "{line}");
    }
    for file in ["reliability_raw.csv", "reliability_calibrated.csv"] {
        let csv = fs::read_to_string(out_dir.join(file)).unwrap();
        let rows: Vec<&str> = csv.lines().collect();
        assert_eq!(rows[0], "bin_lo,bin_hi,count,mean_confidence,accuracy");
        assert!(rows.len() - 2 <= 10);
        assert!(rows.last().unwrap().starts_with("ece,"));
    }
}

#[test]
fn tau_tuning_grid_handling() {
    let dir = TempDir::new().unwrap();
    let ck = zero_checkpoint(dir.path());
    let single = run(confrec()
        .args(["tune-tau", "--topn", "3", "--tau-grid", "0.7"])
        .arg("--checkpoint")
        .arg(&ck));
    // With two interactions per user the validation bucket is empty.
    assert_eq!(single.status.code(), Some(1), "{}", stdout(&single));

    let dir = TempDir::new().unwrap();
    let data = dir.path().join("five.tsv");
    let text: String = (0..4)
        .flat_map(|u| (0..10).map(move |k| format!("u{u}\ti{}\n", (u + k) % 12)))
        .collect();
    fs::write(&data, text).unwrap();
    let state = EmbeddingState::from_layer0(Matrix::zeros(4, 2), Matrix::zeros(12, 2));
    let ck = dir.path().join("zero.bin");
    Checkpoint::from_state(&state, 1, snapshot(&data, 3))
        .write(&ck)
        .unwrap();
    let tune = |grid: &str| {
        let out = run(confrec()
            .args(["tune-tau", "--topn", "3", "--tau-grid", grid])
            .arg("--checkpoint")
            .arg(&ck));
        assert_success(&out);
        stdout(&out)
    };
    assert!(tune("0.7").contains("best tau 0.7 "));
    // Every temperature leaves tied ratings unchanged, so the smallest wins.
    assert!(tune("2,0.5,1").contains("best tau 0.5 "));
}

#[test]
fn flags_override_config_file_and_env_seed_is_a_fallback() {
    let dir = TempDir::new().unwrap();
    let data = write_synthetic(dir.path());
    let conf = dir.path().join("run.conf");
    fs::write(
        &conf,
        format!(
            "data = {}\nepochs = 2\ndim = 8\nbatch_size = 32\n",
            data.display()
        ),
    )
    .unwrap();
    let train_with = |out: &str, extra: &[&str], env_seed: Option<&str>| {
        let mut cmd = confrec();
        cmd.arg("train")
            .arg("--config")
            .arg(&conf)
            .arg("--out")
            .arg(dir.path().join(out))
            .args(extra);
        if let Some(s) = env_seed {
            cmd.env("CONF_REC_SEED", s);
        }
        assert_success(&run(&mut cmd));
        fs::read(dir.path().join(out).join("checkpoint.bin")).unwrap()
    };
    train_with("file", &[], None);
    let log = fs::read_to_string(dir.path().join("file/train_log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 2);
    train_with("flag", &["--epochs", "1"], None);
    let log = fs::read_to_string(dir.path().join("flag/train_log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 1);

    let from_env = train_with("env", &[], Some("77"));
    let from_flag = train_with("seedflag", &["--seed", "77"], None);
    let overridden = train_with("both", &["--seed", "78"], Some("77"));
    assert_eq!(from_env, from_flag);
    assert_ne!(from_env, overridden);
}

#[test]
fn split_export_writes_three_files() {
    let dir = TempDir::new().unwrap();
    let data = two_per_user(dir.path());
    let out = run(confrec()
        .arg("split-export")
        .arg("--data")
        .arg(&data)
        .arg("--out")
        .arg(dir.path()));
    assert_success(&out);
    let read = |f: &str| fs::read_to_string(dir.path().join(f)).unwrap();
    let (train, valid, test) = (read("train.txt"), read("valid.txt"), read("test.txt"));
    assert_eq!(train.lines().count(), 4);
    assert_eq!(valid.lines().count(), 0);
    assert_eq!(test.lines().count(), 4);
    assert!(test.lines().all(|l| l.starts_with('u') && l.contains('\t')));
}

#[test]
fn checkpoint_dataset_mismatch_is_rejected() {
    let dir = TempDir::new().unwrap();
    let ck = zero_checkpoint(dir.path());
    let other = write_synthetic(dir.path());
    let out = run(confrec()
        .arg("evaluate")
        .arg("--checkpoint")
        .arg(&ck)
        .arg("--data")
        .arg(&other));
    assert_eq!(out.status.code(), Some(1));
    assert!(
        stderr(&out).contains("checkpoint has 4 users"),
        "{}",
        stderr(&out)
    );
}
