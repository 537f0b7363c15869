#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn resources_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../resources")
}

const BAIT: [&str; 6] = [
    "You won't believe what {} did next",
    "{} reasons why your {} is wrong",
    "This {} trick will blow your mind",
    "What happened to {} will shock you",
    "Can you guess which {} is the best?",
    "Here's why everyone loves {}",
];

const NEWS: [&str; 6] = [
    "Government announces {} policy review",
    "{} shares fall after quarterly report",
    "Officials confirm {} talks in Brussels",
    "Court rules on {} appeal",
    "Police investigate {} incident downtown",
    "Scientists publish {} study results",
];

const NOUNS: [&str; 12] = [
    "cat", "budget", "election", "pizza", "celebrity", "bank", "storm", "phone", "coffee", "trade", "dog", "vaccine",
];

/// Writes a synthetic `instances.jsonl` + `truth.jsonl` pair in the
/// challenge layout and returns the instances path.
pub fn write_challenge_corpus(dir: &Path, n: usize, seed: u64, with_truth: bool) -> PathBuf {
    fs::create_dir_all(dir).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut instances = String::new();
    let mut truth = String::new();
    for i in 0..n {
        let bait = rng.gen_bool(0.5);
        let template = if bait { BAIT.choose(&mut rng) } else { NEWS.choose(&mut rng) }.unwrap();
        let mut text = template.to_string();
        while text.contains("{}") {
            let fill = if rng.gen_bool(0.3) {
                rng.gen_range(2..20).to_string()
            } else {
                NOUNS.choose(&mut rng).unwrap().to_string()
            };
            text = text.replacen("{}", &fill, 1);
        }
        let hour = rng.gen_range(0..24);
        let media = if rng.gen_bool(0.4) { r#"["img.jpg"]"# } else { "[]" };
        instances.push_str(&format!(
            "{{\"id\":\"{i:04}\",\"postText\":[{}],\"postTimestamp\":\"Tue Jun 09 {hour:02}:31:10 +0000 2015\",\"postMedia\":{media}}}\n",
            serde_json::to_string(&text).unwrap()
        ));
        let base: f64 = if bait { 0.75 } else { 0.2 };
        let label = (base + rng.gen_range(-0.15..0.15)).clamp(0.0, 1.0);
        truth.push_str(&format!("{{\"id\":\"{i:04}\",\"truthMean\":{label}}}\n"));
    }
    let path = dir.join("instances.jsonl");
    fs::write(&path, instances).unwrap();
    if with_truth {
        fs::write(dir.join("truth.jsonl"), truth).unwrap();
    }
    path
}

/// Small config that keeps LMO and the sweep fast on the fixture corpus.
pub fn write_config(dir: &Path, train: &Path, out: &Path, extra: &str) -> PathBuf {
    let cfg = format!(
        "train = {train:?}\nresources = {res:?}\noutput_dir = {out:?}\nworkers = 2\n{extra}\n",
        train = train,
        res = resources_dir(),
        out = out,
    );
    let path = dir.join("icarfish.toml");
    fs::write(&path, cfg).unwrap();
    path
}

pub const FAST_LMO: &str = "[lmo]\nr = 6\ncoverage = 3.0\n\n[sweep]\nfractions = [1.0, 0.5, 0.25, 0.1]\n";
