//! Process-level behaviour of the `mash` binary: flags, exit codes and
//! byte-identical reruns.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SUBCOMMANDS: [&str; 9] = ["synth", "sppmi", "align", "embed", "tree", "annotate", "eval", "run", "print-config"];

const TINY: &str = r#"
seed = 3

[synth.world]
n_leaves = 30
dim = 8

[synth.events]
patients = 400

[sppmi]
dim = 8

[align.transport]
hidden_sizes = [16, 16]
mapping_epochs = 20
coupling_iters = 3

[embed.train]
epochs = 40
warmup_epochs = 5

[annotate.client]
mode = "stub"
"#;

fn mash(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mash")).args(args).output().expect("spawn mash")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("run.toml");
    std::fs::write(&path, text).unwrap();
    path
}

/// Relative path → bytes for every file under `root`.
fn snapshot(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                out.insert(path.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&path).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

#[test]
fn help_documents_global_flags_on_every_subcommand() {
    for sub in SUBCOMMANDS {
        let o = mash(&[sub, "--help"]);
        assert!(o.status.success(), "{sub} --help failed");
        let text = String::from_utf8_lossy(&o.stdout);
        for flag in ["--config", "--seed", "--out-dir", "--log-level"] {
            assert!(text.contains(flag), "{sub} --help lacks {flag}");
        }
    }
    let top = mash(&["--help"]);
    let text = String::from_utf8_lossy(&top.stdout);
    for sub in SUBCOMMANDS {
        assert!(text.contains(sub), "top-level help lacks {sub}");
    }
}

#[test]
fn unknown_flags_and_subcommands_are_usage_errors() {
    assert_eq!(mash(&["synth", "--bogus"]).status.code(), Some(2));
    assert_eq!(mash(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(mash(&["synth", "--log-level", "loud"]).status.code(), Some(2));
}

#[test]
fn missing_config_file_exits_2_with_path() {
    let o = mash(&["--config", "/nonexistent/mash.toml", "synth"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("/nonexistent/mash.toml"));
}

#[test]
fn unknown_config_key_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "seed = 1\n[align.transport]\nlearnig_rate = 0.1\n");
    let o = mash(&["--config", cfg.to_str().unwrap(), "print-config"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("learnig_rate"));
}

#[test]
fn missing_explicit_input_exits_2_with_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("absent_events.csv");
    let text = format!("[inputs.events]\nva = {:?}\n", missing.to_str().unwrap());
    let cfg = write_config(dir.path(), &text);
    let o = mash(&["--config", cfg.to_str().unwrap(), "sppmi"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("absent_events.csv"));
}

#[test]
fn missing_stage_input_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = mash(&["--out-dir", out.to_str().unwrap(), "tree"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("input not found"));
}

#[test]
fn malformed_data_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let vocab = dir.path().join("vocab.csv");
    std::fs::write(&vocab, "code_id,description,domain,sources\nA,alpha,not-a-domain,\n").unwrap();
    let text = format!("{TINY}\n[inputs]\nvocab = {:?}\n", vocab.to_str().unwrap());
    let cfg = write_config(dir.path(), &text);
    let out = dir.path().join("out");
    let o = mash(&["--config", cfg.to_str().unwrap(), "--out-dir", out.to_str().unwrap(), "sppmi"]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("vocab.csv"));
}

#[test]
fn flags_override_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let o = mash(&["--config", cfg.to_str().unwrap(), "--seed", "11", "--out-dir", "elsewhere", "print-config"]);
    assert!(o.status.success());
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("seed = 11"));
    assert!(text.contains("out_dir = \"elsewhere\""));
    assert!(text.contains("n_leaves = 30"));
}

#[test]
fn stagewise_and_full_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let cfg = cfg.to_str().unwrap();

    let full = dir.path().join("full");
    let o = mash(&["--config", cfg, "--out-dir", full.to_str().unwrap(), "run"]);
    assert!(o.status.success(), "{}", stderr(&o));

    let staged = dir.path().join("staged");
    for stage in ["synth", "sppmi", "align", "embed", "tree", "annotate", "eval"] {
        let o = mash(&["--config", cfg, "--out-dir", staged.to_str().unwrap(), stage]);
        assert!(o.status.success(), "{stage}: {}", stderr(&o));
    }

    let a = snapshot(&full);
    let b = snapshot(&staged);
    assert_eq!(a.keys().collect::<Vec<_>>(), b.keys().collect::<Vec<_>>());
    for (path, bytes) in &a {
        assert!(bytes == &b[path], "{} differs between runs", path.display());
    }

    let metrics: serde_json::Value = serde_json::from_slice(&a[Path::new("eval/metrics.json")]).unwrap();
    assert!(metrics.is_object());

    let reseeded = dir.path().join("reseeded");
    let o = mash(&["--config", cfg, "--seed", "4", "--out-dir", reseeded.to_str().unwrap(), "synth"]);
    assert!(o.status.success());
    let c = snapshot(&reseeded);
    assert_ne!(c[Path::new("synth/pairs.csv")], a[Path::new("synth/pairs.csv")]);
}
