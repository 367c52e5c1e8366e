use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::Instant;

fn toy() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/toy")
}

fn config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/toy.conf")
}

fn pdegnn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pdegnn"))
        .args(args)
        .env_remove("PDEGNN_DATA")
        .output()
        .expect("binary runs")
}

fn train_toy(out: &Path, extra: &[&str]) -> Output {
    let (config, toy) = (config(), toy());
    let mut args = vec![
        "train",
        "--config",
        config.to_str().unwrap(),
        "--dataset",
        toy.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ];
    args.extend_from_slice(extra);
    pdegnn(&args)
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// CSV text with the wall-seconds column removed.
fn without_seconds(path: &Path) -> String {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| {
            let mut cols: Vec<&str> = l.split(',').collect();
            cols.remove(7);
            cols.join(",")
        })
        .collect::<Vec<_>>()
        .join("\n")
}

#[test]
fn missing_dataset_exits_2_and_names_the_flag() {
    let out = tempfile::tempdir().unwrap();
    let o = pdegnn(&["train", "--out", out.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--dataset"), "{}", stderr(&o));

    let o = pdegnn(&["train", "--dataset", "/definitely/not/here"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--dataset"));
}

#[test]
fn bad_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.conf");
    std::fs::write(&path, "speed=11\n").unwrap();
    let o = pdegnn(&["train", "--config", path.to_str().unwrap(), "--dataset", toy().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("speed"));
    let o = train_toy(dir.path(), &["--set", "dropout=2"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn toy_run_is_fast_and_writes_one_row_per_seed() {
    let out = tempfile::tempdir().unwrap();
    let start = Instant::now();
    let o = train_toy(out.path(), &[]);
    let secs = start.elapsed().as_secs_f64();
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(secs < 5.0, "toy run took {secs:.1}s");
    let csv = std::fs::read_to_string(out.path().join("results.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "dataset,block,depth,seed,best_val,test,epochs,seconds,config_hash");
    assert_eq!(lines.len(), 3);
    for row in &lines[1..] {
        let hash = row.rsplit(',').next().unwrap();
        assert!(out.path().join("runs").join(format!("{hash}.conf")).is_file());
    }
}

#[test]
fn identical_invocations_give_identical_csv() {
    let (a, b, c) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    assert!(train_toy(a.path(), &[]).status.success());
    assert!(train_toy(b.path(), &[]).status.success());
    assert!(train_toy(c.path(), &["--jobs", "2"]).status.success());
    let reference = without_seconds(&a.path().join("results.csv"));
    assert_eq!(reference, without_seconds(&b.path().join("results.csv")));
    assert_eq!(reference, without_seconds(&c.path().join("results.csv")));
}

#[test]
fn results_append_under_a_single_header() {
    let out = tempfile::tempdir().unwrap();
    assert!(train_toy(out.path(), &["--seed", "0"]).status.success());
    assert!(train_toy(out.path(), &["--seed", "1"]).status.success());
    let csv = std::fs::read_to_string(out.path().join("results.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    assert_eq!(csv.matches("dataset,").count(), 1);
}

#[test]
fn command_line_beats_config_file() {
    let out = tempfile::tempdir().unwrap();
    let o = train_toy(out.path(), &["--seed", "0", "--block", "diffusion", "--set", "lr=0.02"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("#   block=diffusion"));
    assert!(stdout.contains("#   lr=0.02"));
    assert!(stdout.contains("#   channels=16"));
    let csv = std::fs::read_to_string(out.path().join("results.csv")).unwrap();
    assert!(csv.lines().nth(1).unwrap().starts_with("toy,diffusion,4,0,"));
}

#[test]
fn sweep_with_one_depth_and_seed_gives_one_row() {
    let out = tempfile::tempdir().unwrap();
    let o = pdegnn(&[
        "sweep-depth",
        "--config",
        config().to_str().unwrap(),
        "--dataset",
        toy().to_str().unwrap(),
        "--depth",
        "2",
        "--seed",
        "0",
        "--out",
        out.path().to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let sweep = std::fs::read_to_string(out.path().join("sweep.csv")).unwrap();
    assert_eq!(sweep.lines().count(), 2);
    let table = std::fs::read_to_string(out.path().join("table.csv")).unwrap();
    assert_eq!(table.lines().next().unwrap(), "dataset,split,block,seeds,d2");
    let smoothing = std::fs::read_to_string(out.path().join("smoothing.csv")).unwrap();
    assert_eq!(smoothing.lines().count(), 1 + 3);
}

#[test]
fn verify_passes_and_catches_an_injected_fault() {
    let o = pdegnn(&["verify", "--quick"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    let o = pdegnn(&["verify", "--quick", "--inject-fault", "negate-advection"]);
    assert_eq!(o.status.code(), Some(1));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("PASS conservation/advection"));
    assert!(stdout.contains("FAIL oracle/advection"));
}

#[test]
fn inspect_reports_corruption_by_code() {
    let o = pdegnn(&["inspect-bundle", "--dataset", toy().to_str().unwrap()]);
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stdout).contains("class counts [20, 20, 20]"));

    let dir = tempfile::tempdir().unwrap();
    for f in ["meta.json", "edges.csv", "features.bin", "labels.csv"] {
        std::fs::copy(toy().join(f), dir.path().join(f)).unwrap();
    }
    let labels = std::fs::read_to_string(dir.path().join("labels.csv")).unwrap();
    let short: String = labels.lines().skip(1).map(|l| format!("{l}\n")).collect();
    std::fs::write(dir.path().join("labels.csv"), short).unwrap();
    let o = pdegnn(&["inspect-bundle", "--dataset", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stdout).contains("invalid [E_"));
}
