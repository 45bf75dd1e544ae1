//! Writes a synthetic train/questions corpus pair that the simulated mock
//! backend can answer.
//!
//! cargo run -p qream-core --example synth_corpus -- <dir> [questions] [seed]

use std::path::PathBuf;

use qream_core::backend::sim;
use qream_core::corpus::{write_corpus, Split};

const TRAIN: usize = 40;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let dir = PathBuf::from(args.next().unwrap_or_else(|| "demo-data".into()));
    let questions: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(100);
    let seed: u64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(7);

    let mut train = sim::synthetic_corpus(TRAIN + questions, seed, Split::Test);
    let test = train.split_off(TRAIN);
    for ex in &mut train {
        ex.split = Split::Train;
    }
    std::fs::create_dir_all(&dir)?;
    write_corpus(&dir.join("train.jsonl"), &train)?;
    write_corpus(&dir.join("questions.jsonl"), &test)?;
    eprintln!("wrote {} train and {} test questions to {}", train.len(), test.len(), dir.display());
    Ok(())
}
