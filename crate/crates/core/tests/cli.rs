use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const CONFIG: &str = "n_samples=20
n_tx=2
n_rx=1
n_sub=8
n_subband=4
pilots=every:2:0
d_model=8
n_heads=1
enc_depth=1
dec_depth=1
mixer_blocks=1
keep=2
d_q=2
budgets=8,16
snr_list=10
steps=3
steps2=2
quant_steps=2
batch_size=4
";

fn flowmat(dir: &Path, args: &[&str], seed: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_flowmat"));
    cmd.args(args).current_dir(dir).env_remove("FMAT_SEED");
    if let Some(s) = seed {
        cmd.env("FMAT_SEED", s);
    }
    cmd.output().unwrap()
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("c.txt"), CONFIG).unwrap();
    dir
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

#[test]
fn subcommands_run_and_write_artifacts() {
    let dir = setup();
    let d = dir.path();
    let o = flowmat(d, &["gen-data", "--config", "c.txt", "--out", "data"], None);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["channels.fmc1", "eigen.fmc1", "pilots.fmc1"] {
        assert!(d.join("data").join(f).is_file(), "{f}");
    }

    let o = flowmat(d, &["train", "--config", "c.txt", "--out", "run", "--task", "feedback"], None);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(d.join("run/feedback_float.fmw1").is_file());
    assert!(d.join("run/feedback_16.fmw1").is_file());

    let o = flowmat(d, &["eval", "--config", "c.txt", "--out", "run", "--task", "feedback"], None);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let results = fs::read_to_string(d.join("run/results.csv")).unwrap();
    assert_eq!(results.lines().count(), 4, "{results}");

    let o = flowmat(d, &["analyze-corr", "--config", "c.txt", "--out", "corr", "--set", "corr_paths=1,2"], None);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(d.join("corr/corr_summary.csv").is_file());

    for (task, regime) in [("estimate", "progressive"), ("estimate", "joint"), ("joint", "end_to_end"), ("joint", "splited")] {
        let out = format!("rep_{task}_{regime}");
        let o = flowmat(d, &["report", "--config", "c.txt", "--out", &out, "--task", task, "--regime", regime], None);
        assert_eq!(code(&o), 0, "{task}/{regime}: {}", String::from_utf8_lossy(&o.stderr));
        assert!(d.join(&out).join("report.md").is_file());
    }
}

#[test]
fn seed_override_is_deterministic() {
    let dir = setup();
    let d = dir.path();
    let run = |out: &str, seed: &str| {
        let o = flowmat(d, &["report", "--config", "c.txt", "--out", out], Some(seed));
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        fs::read_to_string(d.join(out).join("results.csv")).unwrap()
    };
    let a = run("a", "5");
    let b = run("b", "5");
    let c = run("c", "6");
    assert_eq!(a, b);
    assert_ne!(a, c);
    assert!(a.lines().nth(1).unwrap().contains(",5,"));
}

#[test]
fn exit_codes() {
    let dir = setup();
    let d = dir.path();
    // config errors
    assert_eq!(code(&flowmat(d, &["report", "--config", "c.txt", "--set", "bogus_key=1"], None)), 2);
    assert_eq!(code(&flowmat(d, &["report", "--config", "c.txt"], Some("abc"))), 2);
    assert_eq!(code(&flowmat(d, &["report", "--config", "missing.txt"], None)), 2);
    assert_eq!(code(&flowmat(d, &["report", "--config", "c.txt", "--task", "estimate", "--regime", "end_to_end"], None)), 2);
    // data errors
    assert_eq!(code(&flowmat(d, &["eval", "--config", "c.txt", "--out", "nothing"], None)), 3);
    fs::write(d.join("junk.fmc1"), b"FMC1junk").unwrap();
    assert_eq!(code(&flowmat(d, &["report", "--config", "c.txt", "--set", "data=junk.fmc1"], None)), 3);
    // divergence
    let o = flowmat(
        d,
        &["report", "--config", "c.txt", "--out", "div", "--task", "estimate", "--set", "lr=1e6", "--set", "steps=300", "--set", "divergence_patience=5"],
        None,
    );
    assert_eq!(code(&o), 4, "{}", String::from_utf8_lossy(&o.stderr));
}
