use std::fs;
use std::path::Path;
use std::process::Command;

use pcdiff::cloud::load_dataset;

fn pcdiff(dir: &Path, args: &[&str]) -> i32 {
    let out = Command::new(env!("CARGO_BIN_EXE_pcdiff"))
        .args(args)
        .current_dir(dir)
        .env("PCDIFF_THREADS", "1")
        .output()
        .unwrap();
    out.status.code().unwrap()
}

fn ok(dir: &Path, args: &[&str]) {
    let out = Command::new(env!("CARGO_BIN_EXE_pcdiff")).args(args).current_dir(dir).output().unwrap();
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

const SMALL: &str = "# compact net for tests
batch_size = 4
latent_dim = 16
time_dim = 8
encoder_widths = 32,64
decoder_widths = 64,32
checkpoint_every = 100
";

#[test]
fn synth_writes_requested_shapes() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["synth", "--family", "barbell", "--count", "64", "--points", "512", "--seed", "1", "--out", "d.lpcd"]);
    let ds = load_dataset(dir.path().join("d.lpcd")).unwrap();
    assert_eq!(ds.len(), 64);
    assert!(ds.shapes.iter().all(|s| s.len() == 512));
    assert!(dir.path().join("d.lpcd.manifest").exists());
}

#[test]
fn train_then_sample_guided() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("c.cfg"), SMALL).unwrap();
    ok(d, &["synth", "--family", "barbell", "--count", "8", "--points", "64", "--seed", "1", "--out", "d.lpcd"]);
    ok(d, &["train", "--mode", "guided", "--config", "c.cfg", "--data", "d.lpcd", "--out", "ck", "--steps", "20"]);
    for f in ["last", "metrics.log", "manifest.txt"] {
        assert!(d.join("ck").join(f).exists(), "{f}");
    }
    ok(d, &["sample", "--ckpt", "ck/last", "--n", "512", "--labels", "0.5,0.5", "--seed", "2", "--out", "s.lpcd"]);
    let s = load_dataset(d.join("s.lpcd")).unwrap();
    assert_eq!(s.shapes[0].label_counts(), vec![256, 256]);

    let first = fs::read(d.join("s.lpcd")).unwrap();
    ok(d, &["sample", "--ckpt", "ck/last", "--n", "512", "--labels", "0.5,0.5", "--seed", "2", "--out", "s.lpcd"]);
    assert_eq!(fs::read(d.join("s.lpcd")).unwrap(), first);
    assert_eq!(pcdiff(d, &["sample", "--ckpt", "ck/last", "--n", "16", "--out", "x.lpcd"]), 1);

    ok(d, &["reconstruct", "--ckpt", "ck/last", "--data", "d.lpcd", "--limit", "2", "--out", "r.txt"]);
    ok(d, &["export-ply", "--input", "s.lpcd", "--out", "one.ply", "--index", "0"]);
    assert!(fs::read_to_string(d.join("one.ply")).unwrap().starts_with("ply\n"));
}

#[test]
fn eval_of_identical_sets() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::create_dir(d.join("G")).unwrap();
    fs::create_dir(d.join("R")).unwrap();
    ok(d, &["synth", "--family", "barbell", "--count", "6", "--points", "128", "--seed", "3", "--out", "G/a.lpcd"]);
    fs::copy(d.join("G/a.lpcd"), d.join("R/a.lpcd")).unwrap();
    ok(d, &["eval", "--gen", "G", "--ref", "R", "--out", "report.kv"]);
    let kv = fs::read_to_string(d.join("report.kv")).unwrap();
    assert!(kv.contains("jsd_x100=0.00\n"), "{kv}");
    assert!(kv.contains("cov_x100=100.00\n"), "{kv}");
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(pcdiff(d, &["frobnicate"]), 1);
    assert_eq!(pcdiff(d, &["train", "--mode", "guided", "--data", "missing.lpcd", "--out", "ck"]), 2);
    fs::write(d.join("junk.lpcd"), b"not a dataset").unwrap();
    assert_eq!(pcdiff(d, &["export-ply", "--input", "junk.lpcd", "--out", "p"]), 2);
    fs::write(d.join("c.cfg"), "colour = red\n").unwrap();
    assert_eq!(pcdiff(d, &["train", "--mode", "guided", "--config", "c.cfg", "--data", "x", "--out", "ck"]), 1);

    fs::write(d.join("c.cfg"), SMALL).unwrap();
    assert_eq!(pcdiff(d, &["synth", "--family", "barbell", "--count", "4", "--points", "32", "--out", "d.lpcd"]), 0);
    let code = pcdiff(d, &["train", "--mode", "guided", "--config", "c.cfg", "--data", "d.lpcd", "--out", "ck", "--steps", "50", "--set", "learning_rate=1e12"]);
    assert_eq!(code, 3);
}

/// Same seed, same bytes: checkpoints and loss logs from two runs per mode.
#[test]
fn training_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("c.cfg"), SMALL).unwrap();
    ok(d, &["synth", "--family", "barbell", "--count", "8", "--points", "64", "--seed", "5", "--out", "d.lpcd"]);
    for mode in ["guided", "unguided"] {
        let runs: Vec<_> = ["a", "b"]
            .iter()
            .map(|tag| {
                let out = format!("{mode}_{tag}");
                ok(d, &["train", "--mode", mode, "--config", "c.cfg", "--data", "d.lpcd", "--out", &out, "--steps", "200", "--seed", "9"]);
                let p = d.join(&out);
                (fs::read(p.join("last")).unwrap(), fs::read(p.join("metrics.log")).unwrap())
            })
            .collect();
        assert_eq!(runs[0], runs[1], "{mode}");
        assert_eq!(String::from_utf8_lossy(&runs[0].1).lines().count(), 201);
    }
}
