#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::Arc;

use qream_cli::{Options, Pipeline, RunConfig};
use qream_core::backend::{sim, BackendSpec, MockBackend};
use qream_core::corpus::{write_corpus, Split};

pub const TRAIN: usize = 24;

pub const CONFIG: &str = r#"
seed = 42
output_dir = "run"
workers = 8

[corpus]
train = "train.jsonl"
questions = "questions.jsonl"

[[backends]]
id = "sim"
kind = "mock"
responder = "simulated"
capabilities = { generate = true, score_logprobs = true }

[roles]
generator = "sim"
rewriter = "sim"
reader = "sim"
verifier = "sim"
scorer = "sim"
"#;

/// A directory holding a train corpus, `questions` synthetic questions and a
/// config bound to the simulated backend.
pub struct Fixture {
    pub dir: tempfile::TempDir,
    pub config: PathBuf,
}

pub fn fixture(questions: usize) -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    write_data(dir.path(), questions);
    let config = dir.path().join("qream.toml");
    std::fs::write(&config, CONFIG).unwrap();
    Fixture { dir, config }
}

pub fn write_data(dir: &Path, questions: usize) {
    let mut all = sim::synthetic_corpus(TRAIN + questions, 2024, Split::Test);
    let rest = all.split_off(TRAIN);
    for ex in &mut all {
        ex.split = Split::Train;
    }
    write_corpus(&dir.join("train.jsonl"), &all).unwrap();
    write_corpus(&dir.join("questions.jsonl"), &rest).unwrap();
}

impl Fixture {
    pub fn path(&self) -> &Path {
        self.dir.path()
    }

    pub fn config(&self, overrides: &[&str]) -> RunConfig {
        let overrides: Vec<String> = overrides.iter().map(|s| s.to_string()).collect();
        RunConfig::load(&self.config, &overrides).unwrap()
    }

    pub fn open(&self, overrides: &[&str]) -> Pipeline {
        Pipeline::open(self.config(overrides), Options::default()).unwrap()
    }

    /// Opens with an instrumented simulated backend in place of `sim`.
    pub fn open_with(&self, overrides: &[&str], backend: Arc<MockBackend>) -> Pipeline {
        let mut options = Options::default();
        options.backends.insert("sim".into(), backend);
        Pipeline::open(self.config(overrides), options).unwrap()
    }
}

pub fn instrumented() -> Arc<MockBackend> {
    Arc::new(sim::simulated_backend(BackendSpec::mock("sim")))
}

/// Relative path -> bytes of every file under `root`, skipping `skip` names.
pub fn snapshot(root: &Path, skip: &[&str]) -> std::collections::BTreeMap<String, Vec<u8>> {
    let mut out = std::collections::BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            let name = path.file_name().unwrap().to_string_lossy().to_string();
            if skip.contains(&name.as_str()) {
                continue;
            }
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().to_string();
                out.insert(rel, std::fs::read(&path).unwrap());
            }
        }
    }
    out
}
