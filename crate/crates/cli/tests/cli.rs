use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn s2g(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_s2g"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = s2g(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const TINY: &str = "\
encoder.dim = 8
encoder.heads = 2
encoder.layers = 1
encoder.ff = 16
latent.atom_dim = 4
latent.edge_dim = 4
latent.heads = 2
latent.inject_layers = 1
latent.encoder.hidden = 8
latent.decoder.layers = 1
latent.decoder.hidden = 8
denoiser.time_dim = 4
denoiser.node_dim = 8
denoiser.egnn.layers = 1
denoiser.egnn.hidden = 8
train.classifier_epochs = 1
train.ae_epochs = 1
train.ldm_epochs = 1
train.batch_size = 5
";

#[test]
fn perceive_prints_bonds_and_key() {
    let xyz = root().join("fixtures/toy10/xyz/acetonitrile.xyz");
    let out = ok(&["perceive", p(&xyz)]);
    let mut lines = out.lines();
    assert_eq!(lines.next(), Some("i,j,order,aromatic"));
    assert!(out.lines().any(|l| l.ends_with(",3,false")), "{out}");
    assert!(out.lines().last().unwrap().starts_with("# key "));
}

#[test]
fn fgmatch_labels_files() {
    let dir = root().join("fixtures/toy10/xyz");
    let a = dir.join("acetaldehyde.xyz");
    let b = dir.join("ethane.xyz");
    let out = ok(&["fgmatch", p(&a), p(&b)]);
    let rows: Vec<&str> = out.lines().collect();
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[0].split(',').count(), 21);
    assert!(rows[1].split(',').skip(1).any(|v| v == "1"));
}

#[test]
fn missing_inputs_fail_cleanly() {
    let out = s2g(&["perceive", "/nonexistent.xyz"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("nonexistent"));
    let dir = tempfile::tempdir().unwrap();
    let out = s2g(&["train-ldm", "--store", p(dir.path()), "--out", p(&dir.path().join("o"))]);
    assert!(!out.status.success());
}

#[test]
fn broaden_writes_one_csv_per_record() {
    let dir = tempfile::tempdir().unwrap();
    let spectra = root().join("fixtures/toy10/records.jsonl");
    ok(&["broaden", "--spectra", p(&spectra), "--out", p(dir.path())]);
    let files = fs::read_dir(dir.path()).unwrap().count();
    assert_eq!(files, 10);
    let csv = fs::read_to_string(dir.path().join("methane.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 3200);
}

#[test]
fn end_to_end_tiny_run() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = d.join("tiny.conf");
    fs::write(&cfg, TINY).unwrap();
    let toy = root().join("fixtures/toy10");
    let store = d.join("store");
    let out = ok(&[
        "ingest",
        "--xyz",
        p(&toy.join("xyz")),
        "--spectra",
        p(&toy.join("records.jsonl")),
        "--out",
        p(&store),
    ]);
    assert!(out.contains("kept 10 records"), "{out}");

    let stage = |cmd: &str, name: &str, parent: Option<&str>| {
        let o = d.join(name);
        let ck = parent.map(|prev| d.join(prev).join("checkpoint.s2g"));
        let mut args = vec![cmd, "--config", p(&cfg), "--store", p(&store), "--out", p(&o)];
        if let Some(ck) = &ck {
            args.extend(["--checkpoint", p(ck)]);
        }
        ok(&args);
        o
    };
    stage("train-classifier", "cls", None);
    let ae = stage("train-ae", "ae", Some("cls"));
    let ldm = stage("train-ldm", "ldm", Some("ae"));
    assert!(ae.join("manifest.json").exists());

    // Sampling refuses non-diffusion checkpoints.
    let bad = s2g(&[
        "sample",
        "--store",
        p(&store),
        "--checkpoint",
        p(&ae.join("checkpoint.s2g")),
        "--out",
        p(&d.join("x")),
    ]);
    assert!(!bad.status.success());

    let ck = ldm.join("checkpoint.s2g");
    let samples = d.join("samples");
    ok(&[
        "sample",
        "--store",
        p(&store),
        "--checkpoint",
        p(&ck),
        "--samples-per-spectrum",
        "1",
        "--seed",
        "3",
        "--out",
        p(&samples),
    ]);
    assert!(samples.join("manifest.json").exists());
    let again = d.join("again");
    ok(&[
        "sample",
        "--store",
        p(&store),
        "--checkpoint",
        p(&ck),
        "--samples-per-spectrum",
        "1",
        "--seed",
        "3",
        "--out",
        p(&again),
    ]);
    let a = fs::read(samples.join("samples/methane/0.xyz")).unwrap();
    assert_eq!(a, fs::read(again.join("samples/methane/0.xyz")).unwrap());

    let eval = d.join("eval");
    let out = ok(&[
        "evaluate",
        "--samples",
        p(&samples),
        "--store",
        p(&store),
        "--out",
        p(&eval),
    ]);
    assert!(out.starts_with("sim_g,max_sim_g,mol_acc_pct,SIS"), "{out}");
    for f in ["aggregate.csv", "spectra.csv", "samples.csv"] {
        assert!(eval.join(f).exists(), "{f}");
    }

    let att = d.join("att");
    ok(&[
        "export-attention",
        "--store",
        p(&store),
        "--checkpoint",
        p(&ck),
        "--id",
        "methanol",
        "--out",
        p(&att),
    ]);
    assert!(att.join("methanol_attention.csv").exists());
    assert!(att.join("methanol_attention.svg").exists());
}
