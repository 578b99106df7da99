use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const BIN: &str = env!("CARGO_BIN_EXE_desatscan");

fn write_config(dir: &Path, extra: &str) -> PathBuf {
    let text = format!(
        "data_dir = {data:?}\nout_dir = {out:?}\nstages = [\"N1\"]\nrepeats = 2\nseed = 3\n{extra}\n\
         [model]\nstem_channels = 4\nblocks = [[4, 2]]\nepochs = 2\nbatch_size = 32\n\
         [synth]\nsubjects_per_class = 3\nnight_duration = 1200.0\n",
        data = dir.join("data"),
        out = dir.join("out"),
    );
    let path = dir.join("run.toml");
    fs::write(&path, text).unwrap();
    path
}

fn run(cmd: &str, config: &Path, extra: &[&str]) -> Output {
    Command::new(BIN).arg(cmd).arg("--config").arg(config).args(extra).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn full_chain(dir: &Path) {
    let cfg = write_config(dir, "");
    for cmd in ["synth", "preprocess", "cohort", "split", "train", "report"] {
        let out = run(cmd, &cfg, &[]);
        assert_eq!(code(&out), 0, "{cmd}: {}", String::from_utf8_lossy(&out.stderr));
    }
}

#[test]
fn full_chain_is_deterministic() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    full_chain(a.path());
    full_chain(b.path());
    for file in ["cohort.tsv", "splits.tsv", "epochs.tsv", "runs.tsv", "report.tsv", "report.txt"] {
        let fa = fs::read(a.path().join("out").join(file)).unwrap();
        let fb = fs::read(b.path().join("out").join(file)).unwrap();
        assert!(fa == fb, "{file} differs between identical runs");
    }
    for dir in ["models", "predictions", "tensors"] {
        let mut names: Vec<_> = fs::read_dir(a.path().join("out").join(dir)).unwrap().map(|e| e.unwrap().file_name()).collect();
        names.sort();
        assert!(!names.is_empty(), "{dir} is empty");
        for name in names {
            let fa = fs::read(a.path().join("out").join(dir).join(&name)).unwrap();
            let fb = fs::read(b.path().join("out").join(dir).join(&name)).unwrap();
            assert!(fa == fb, "{dir}/{name:?} differs");
        }
    }
    let report = fs::read_to_string(a.path().join("out/report.txt")).unwrap();
    assert!(report.contains("NREM1"), "{report}");
    let saved = fs::read_to_string(a.path().join("out/config.toml")).unwrap();
    assert!(saved.contains("seed = 3"));
}

#[test]
fn exit_codes() {
    let dir = TempDir::new().unwrap();
    let missing = dir.path().join("nope.toml");
    assert_eq!(code(&run("synth", &missing, &[])), 3);

    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "repeats = \"many\"").unwrap();
    assert_eq!(code(&run("synth", &bad, &[])), 2);
    fs::write(&bad, "unknown_key = 1").unwrap();
    assert_eq!(code(&run("synth", &bad, &[])), 2);

    let cfg = write_config(dir.path(), "");
    fs::write(&cfg, fs::read_to_string(&cfg).unwrap().replace("repeats = 2", "repeats = 0")).unwrap();
    let out = run("cohort", &cfg, &[]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("repeats"));

    let cfg = write_config(dir.path(), "");
    assert_eq!(code(&run("preprocess", &cfg, &[])), 3);
    assert_eq!(code(&run("split", &cfg, &[])), 3);
    assert_eq!(code(&run("train", &cfg, &[])), 3);
    assert_eq!(code(&run("report", &cfg, &[])), 0);

    let usage = Command::new(BIN).arg("frobnicate").output().unwrap();
    assert_eq!(code(&usage), 2);
}

#[test]
fn synth_refuses_non_empty_dir_without_force() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "");
    let data = dir.path().join("data");
    fs::create_dir_all(&data).unwrap();
    fs::write(data.join("keep.txt"), "x").unwrap();
    assert_eq!(code(&run("synth", &cfg, &[])), 2);
    assert!(!data.join("ground_truth.tsv").exists());

    let out = run("synth", &cfg, &["--force"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let first = fs::read(data.join("ground_truth.tsv")).unwrap();

    let out = run("synth", &cfg, &["--force", "--seed", "4"]);
    assert_eq!(code(&out), 0);
    let other = fs::read(data.join("S0001.edf")).unwrap();
    let out = run("synth", &cfg, &["--force"]);
    assert_eq!(code(&out), 0);
    assert_eq!(fs::read(data.join("ground_truth.tsv")).unwrap(), first);
    assert_ne!(fs::read(data.join("S0001.edf")).unwrap(), other);
}
