use std::collections::BTreeMap;
use std::path::Path;
use std::process::{Command, Output};

use sha2::{Digest, Sha256};

use xylo_snn::lif::LifParams;
use xylo_snn::matrix::Matrix;
use xylo_snn::network::{Layer, NetworkSpec};

fn cli(data: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_xylo-snn"))
        .args(args)
        .env("XYLO_SNN_DATA", data)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn hashes(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let key = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(key, Sha256::digest(std::fs::read(&path).unwrap()).to_vec());
            }
        }
    }
    out
}

const SMALL: [&str; 4] = ["--n-train", "24", "--n-test", "8"];

#[test]
fn synth_is_reproducible_for_a_seed() {
    let runs: Vec<_> = (0..2)
        .map(|_| {
            let dir = tempfile::tempdir().unwrap();
            let mut args = vec!["synth", "--classes", "4", "--seconds", "1", "--seed", "7"];
            args.extend(SMALL);
            let o = cli(dir.path(), &args);
            assert!(o.status.success(), "{}", stderr(&o));
            assert!(dir.path().join("dataset/manifest.toml").is_file());
            hashes(dir.path())
        })
        .collect();
    assert_eq!(runs[0].len(), 33);
    assert_eq!(runs[0], runs[1]);
}

#[test]
fn invalid_sample_rate_is_a_validation_failure() {
    let dir = tempfile::tempdir().unwrap();
    let o = cli(dir.path(), &["synth", "--sample-rate", "8000"]);
    assert_eq!(o.status.code(), Some(2));
    let msg = stderr(&o);
    assert!(msg.contains("sample rate") && msg.contains("16000"), "{msg}");
    assert!(!dir.path().join("dataset").exists());
}

#[test]
fn mapping_an_oversized_network_lists_the_violation() {
    let dir = tempfile::tempdir().unwrap();
    let net = NetworkSpec::new(
        16,
        vec![
            Layer {
                weights: Matrix::from_fn(16, 1001, |r, c| if (r + c) % 7 == 0 { 0.1 } else { 0.0 }),
                lif: LifParams::uniform(1001, 2e-3, 2e-3, 1.0, 1e-3),
            },
            Layer {
                weights: Matrix::from_fn(1001, 4, |r, _| if r % 50 == 0 { 0.1 } else { 0.0 }),
                lif: LifParams::uniform(4, 16e-3, 2e-3, 1.0, 1e-3),
            },
        ],
    )
    .unwrap();
    net.save(dir.path().join("network.toml")).unwrap();
    let o = cli(dir.path(), &["map"]);
    assert_eq!(o.status.code(), Some(2));
    let msg = stderr(&o);
    assert!(msg.contains("hidden-count") && msg.contains("1001"), "{msg}");
    assert!(!dir.path().join("mapped.toml").exists());
}

#[test]
fn missing_or_foreign_inputs_are_refused() {
    let dir = tempfile::tempdir().unwrap();
    let o = cli(dir.path(), &["quantize"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("does not exist"));

    std::fs::write(dir.path().join("mapped.toml"), "version = 99\n").unwrap();
    let o = cli(dir.path(), &["quantize"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn stages_chain_and_leave_their_inputs_alone() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let mut synth = vec!["synth", "--seed", "3"];
    synth.extend(SMALL);
    assert!(cli(d, &synth).status.success());

    let o = cli(d, &["--jobs", "1", "train", "--epochs", "2"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("loss"));

    let before = hashes(d);
    for stage in [&["map"][..], &["quantize"][..]] {
        let o = cli(d, stage);
        assert!(o.status.success(), "{stage:?}: {}", stderr(&o));
    }
    let after = hashes(d);
    for (k, v) in &before {
        assert_eq!(after.get(k), Some(v), "{k} changed");
    }

    let o = cli(d, &["sim", "--backend", "both"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("float accuracy") && text.contains("int accuracy") && text.contains("decision agreement"), "{text}");

    let wav = d.join("dataset/audio/test_0000.wav");
    let rec = d.join("rec");
    let out = d.join("out.txt");
    let o = cli(
        d,
        &["sim", "--input", wav.to_str().unwrap(), "--record", rec.to_str().unwrap(), "--output", out.to_str().unwrap()],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["float-hidden-1.csv", "float-readout.csv", "int-hidden.csv", "int-readout.csv"] {
        assert!(rec.join(f).is_file(), "{f}");
    }
    assert!(d.join("out-float.txt").is_file() && d.join("out-int.txt").is_file());

    for backend in ["float", "int"] {
        let o = cli(d, &["eval", "--backend", backend]);
        assert!(o.status.success(), "{}", stderr(&o));
        assert!(d.join(format!("eval-{backend}.toml")).is_file());
    }
    let o = cli(d, &["plot"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(d.join("plots/latency.svg").is_file() && d.join("plots/readout-traces.svg").is_file());

    let first = hashes(d);
    assert!(cli(d, &["map"]).status.success());
    assert!(cli(d, &["quantize"]).status.success());
    let second = hashes(d);
    assert_eq!(first.get("mapped.toml"), second.get("mapped.toml"));
    assert_eq!(first.get("config.toml"), second.get("config.toml"));
}

#[test]
fn run_accepts_a_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dir.path().join("pipeline.toml");
    std::fs::write(
        &manifest,
        "version = 1\nseed = 5\n[dataset]\nn_train = 16\nn_test = 8\n[train]\nepochs = 1\n",
    )
    .unwrap();
    let o = cli(dir.path(), &["run", "--manifest", manifest.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("float accuracy"));
    for f in ["checkpoint.toml", "network.toml", "mapped.toml", "config.toml", "eval-float.toml", "eval-int.toml"] {
        assert!(dir.path().join(f).is_file(), "{f}");
    }

    let o = cli(dir.path(), &["run", "--print-default"]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("[train]"));
}
