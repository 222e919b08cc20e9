#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/persona_world")
}

pub fn mcqdiff(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mcqdiff"))
        .args(args)
        .output()
        .expect("binary runs")
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Copies the fixture config into `dir` (with optional extra TOML appended to
/// named sections by the caller) and generates its world there.
pub fn prepare_world(dir: &Path) -> PathBuf {
    let cfg = dir.join("pipeline.toml");
    fs::copy(fixture_dir().join("pipeline.toml"), &cfg).unwrap();
    let o = mcqdiff(&["--config", cfg.to_str().unwrap(), "synth"]);
    assert!(o.status.success(), "synth failed: {}", stderr(&o));
    cfg
}

pub fn run_ok(args: &[&str]) {
    let o = mcqdiff(args);
    assert!(o.status.success(), "{args:?} failed: {}", stderr(&o));
}

/// Every regular file under `root`, keyed by relative path.
pub fn snapshot(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

pub fn sha256_hex(path: &Path) -> String {
    use sha2::{Digest, Sha256};
    hex::encode(Sha256::digest(fs::read(path).unwrap()))
}
