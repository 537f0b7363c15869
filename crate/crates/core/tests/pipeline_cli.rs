mod common;

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use common::{resources_dir, write_challenge_corpus, write_config, FAST_LMO};
use icarfish::dataset::{load_dataset, Schema};
use icarfish::features::{extract_matrix, FeatureVocabulary, Resources};
use icarfish::pipeline::{self, PipelineConfig, ScoreOptions, MODEL_FILE, SCORES_FILE, SWEEP_FILE, VOCABULARY_FILE};
use icarfish::regression::{load_model, save_model, RidgeModel};
use icarfish::Error;
use tempfile::TempDir;

fn icarfish(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_icarfish"));
    cmd.args(args);
    for var in ["ICARFISH_CONFIG", "ICARFISH_SEED", "ICARFISH_WORKERS", "ICARFISH_OUTPUT_DIR", "ICARFISH_TRAIN", "ICARFISH_RESOURCES"] {
        cmd.env_remove(var);
    }
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn field<'a>(text: &'a str, key: &str) -> &'a str {
    text.lines()
        .find_map(|l| l.strip_prefix(key).and_then(|r| r.strip_prefix('\t')))
        .unwrap_or_else(|| panic!("no {key} line in:\n{text}"))
}

struct Fixture {
    _dir: TempDir,
    config: String,
    data: std::path::PathBuf,
    out: std::path::PathBuf,
}

fn fixture(extra: &str) -> Fixture {
    let dir = TempDir::new().unwrap();
    let data = dir.path().join("data");
    let train = write_challenge_corpus(&data, 60, 11, true);
    let out = dir.path().join("out");
    let config = write_config(dir.path(), &train, &out, &format!("seed = 5\n{extra}"));
    Fixture {
        config: config.to_string_lossy().into_owned(),
        _dir: dir,
        data,
        out,
    }
}

fn pipeline_config(f: &Fixture) -> PipelineConfig {
    PipelineConfig::from_toml_file(Path::new(&f.config)).unwrap()
}

#[test]
fn full_cli_pipeline() {
    let f = fixture(FAST_LMO);
    let cfg = ["--config", f.config.as_str()];

    let first = icarfish(&[&cfg[..], &["extract"]].concat(), &[]);
    assert!(first.status.success(), "{}", stderr(&first));
    let text = stdout(&first);
    assert_eq!(field(&text, "instances"), "60");
    let total: usize = field(&text, "total").parse().unwrap();
    let per_cat: usize = ["char_ngram", "word_ngram", "engineered", "wordlist"]
        .iter()
        .map(|c| field(&text, c).parse::<usize>().unwrap())
        .sum();
    assert_eq!(per_cat, total);
    assert_eq!(field(&text, "engineered"), "12");
    assert_eq!(field(&text, "wordlist"), "7");

    let second = icarfish(&[&cfg[..], &["extract"]].concat(), &[]);
    assert!(second.status.success());
    let text2 = stdout(&second);
    assert!(text2.contains("up to date"));
    assert_eq!(field(&text, "vocabulary_hash"), field(&text2, "vocabulary_hash"));
    assert_eq!(field(&text, "matrix_hash"), field(&text2, "matrix_hash"));

    let score = icarfish(&[&cfg[..], &["score"]].concat(), &[]);
    assert!(score.status.success(), "{}", stderr(&score));
    let s = stdout(&score);
    assert_eq!(field(&s, "master_seed"), "5");
    assert_eq!(field(&s, "r"), "6");
    let scores = fs::read_to_string(f.out.join(SCORES_FILE)).unwrap();
    assert!(scores.starts_with("# master_seed=5"));
    assert_eq!(scores.lines().filter(|l| !l.starts_with('#')).count(), total + 1);

    let sweep = icarfish(&[&cfg[..], &["sweep"]].concat(), &[]);
    assert!(sweep.status.success(), "{}", stderr(&sweep));
    assert!(stdout(&sweep).lines().any(|l| l.starts_with("best\t")));
    let csv = fs::read_to_string(f.out.join(SWEEP_FILE)).unwrap();
    assert_eq!(csv.lines().filter(|l| !l.starts_with('#')).count(), 5);

    let report = icarfish(&[&cfg[..], &["report"]].concat(), &[]);
    assert!(report.status.success(), "{}", stderr(&report));
    assert!(f.out.join("impact.tsv").exists());
    assert!(f.out.join("impact_by_category.csv").exists());

    // predict on a fresh corpus without labels
    let unseen = write_challenge_corpus(&f.data.join("unseen"), 17, 99, false);
    let results = f.out.join("results.jsonl");
    let pred = icarfish(
        &[&cfg[..], &["predict", unseen.to_str().unwrap(), "--out", results.to_str().unwrap()]].concat(),
        &[],
    );
    assert!(pred.status.success(), "{}", stderr(&pred));
    let lines: Vec<serde_json::Value> = fs::read_to_string(&results)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 17);
    for (i, v) in lines.iter().enumerate() {
        assert_eq!(v["id"], format!("{i:04}"));
        let s = v["clickbaitScore"].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&s));
    }

    // round trip: the written scores equal an in-process prediction
    let pc = pipeline_config(&f);
    let vocab = FeatureVocabulary::load(&pc.out(VOCABULARY_FILE)).unwrap();
    let (model, _) = load_model(&pc.out(MODEL_FILE)).unwrap();
    let ds = load_dataset(&unseen, Schema::ChallengeJsonl).unwrap();
    let x = extract_matrix(&ds, &vocab, &Resources::load(&resources_dir()).unwrap()).unwrap();
    let direct = model.predict(&x).unwrap();
    for (v, p) in lines.iter().zip(direct) {
        assert_eq!(v["clickbaitScore"].as_f64().unwrap(), p.clamp(0.0, 1.0));
    }
}

#[test]
fn rerun_reproduces_scores_and_sweep_bytes() {
    let f = fixture(FAST_LMO);
    let cfg = pipeline_config(&f);
    pipeline::cmd_extract(&cfg).unwrap();
    pipeline::cmd_score(&cfg, ScoreOptions::default()).unwrap();
    pipeline::cmd_sweep(&cfg).unwrap();
    let scores = fs::read(cfg.out(SCORES_FILE)).unwrap();
    let sweep = fs::read(cfg.out(SWEEP_FILE)).unwrap();

    // a finished spill resumes every run and reproduces the same table
    let again = pipeline::cmd_score(&cfg, ScoreOptions::default()).unwrap();
    assert_eq!(again.resumed_runs, 6);
    assert_eq!(fs::read(cfg.out(SCORES_FILE)).unwrap(), scores);

    // from scratch with a different worker count
    let mut other = cfg.clone();
    other.workers = 3;
    other.output_dir = cfg.output_dir.with_file_name("out2");
    pipeline::cmd_extract(&other).unwrap();
    pipeline::cmd_score(&other, ScoreOptions::default()).unwrap();
    pipeline::cmd_sweep(&other).unwrap();
    assert_eq!(fs::read(other.out(SCORES_FILE)).unwrap(), scores);
    assert_eq!(fs::read(other.out(SWEEP_FILE)).unwrap(), sweep);
}

#[test]
fn predict_clamps_constant_models() {
    let f = fixture(FAST_LMO);
    let cfg = pipeline_config(&f);
    pipeline::cmd_extract(&cfg).unwrap();
    pipeline::cmd_score(&cfg, ScoreOptions::default()).unwrap();
    pipeline::cmd_sweep(&cfg).unwrap();
    let vocab = FeatureVocabulary::load(&cfg.out(VOCABULARY_FILE)).unwrap();
    let (fitted, hash) = load_model(&cfg.out(MODEL_FILE)).unwrap();

    let unseen = write_challenge_corpus(&f.data.join("unseen"), 9, 3, false);
    let out = cfg.out("results.jsonl");
    for (intercept, expected) in [(0.375, 0.375), (1.7, 1.0), (-0.2, 0.0)] {
        let model = RidgeModel {
            weights: vec![0.0; fitted.weights.len()],
            intercept,
            alpha: fitted.alpha,
            active: fitted.active.clone(),
        };
        save_model(&model, &hash, &cfg.out(MODEL_FILE)).unwrap();
        let scores = pipeline::cmd_predict(&cfg, &unseen, Schema::ChallengeJsonl, &out).unwrap();
        assert_eq!(scores, vec![expected; 9]);
    }
    assert_eq!(vocab.hash(), hash);
}

#[test]
fn predict_rejects_foreign_vocabulary() {
    let f = fixture(FAST_LMO);
    let cfg = pipeline_config(&f);
    pipeline::cmd_extract(&cfg).unwrap();
    pipeline::cmd_score(&cfg, ScoreOptions::default()).unwrap();
    pipeline::cmd_sweep(&cfg).unwrap();
    let (model, _) = load_model(&cfg.out(MODEL_FILE)).unwrap();
    save_model(&model, "0000feed", &cfg.out(MODEL_FILE)).unwrap();
    let unseen = write_challenge_corpus(&f.data.join("unseen"), 4, 3, false);
    let err = pipeline::cmd_predict(&cfg, &unseen, Schema::ChallengeJsonl, &cfg.out("r.jsonl")).unwrap_err();
    assert!(matches!(err, Error::VocabularyMismatch { .. }), "{err}");
}

#[test]
fn missing_seed_is_refused() {
    let dir = TempDir::new().unwrap();
    let train = write_challenge_corpus(&dir.path().join("data"), 10, 1, true);
    let out = dir.path().join("out");
    let config = write_config(dir.path(), &train, &out, "");
    let o = icarfish(&["--config", config.to_str().unwrap(), "extract"], &[]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("seed"), "{}", stderr(&o));
    assert!(!out.join(VOCABULARY_FILE).exists());

    // env var and flag both supply it; the flag wins over the env var
    let o = icarfish(&["--config", config.to_str().unwrap(), "extract"], &[("ICARFISH_SEED", "8")]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = icarfish(
        &["--config", config.to_str().unwrap(), "--seed", "9", "score", "--runs", "2", "--coverage", "1"],
        &[("ICARFISH_SEED", "8")],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(field(&stdout(&o), "master_seed"), "9");
}

#[test]
fn budget_is_enforced_unless_overridden() {
    let f = fixture("[lmo]\ncompute_budget = 1000.0\nr = 6\ncoverage = 3.0\n");
    let cfg = ["--config", f.config.as_str()];
    assert!(icarfish(&[&cfg[..], &["extract"]].concat(), &[]).status.success());
    let o = icarfish(&[&cfg[..], &["score"]].concat(), &[]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("budget"), "{}", stderr(&o));
    assert!(!f.out.join(SCORES_FILE).exists());
    let o = icarfish(&[&cfg[..], &["score", "--budget-override"]].concat(), &[]);
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn missing_resources_are_listed() {
    let dir = TempDir::new().unwrap();
    let train = write_challenge_corpus(&dir.path().join("data"), 10, 1, true);
    let empty = dir.path().join("no_resources");
    fs::create_dir_all(&empty).unwrap();
    let o = icarfish(
        &[
            "--seed",
            "1",
            "--train",
            train.to_str().unwrap(),
            "--resources",
            empty.to_str().unwrap(),
            "--output-dir",
            dir.path().join("out").to_str().unwrap(),
            "extract",
        ],
        &[],
    );
    assert!(!o.status.success());
    let err = stderr(&o);
    assert!(err.contains("abbreviations.txt") && err.contains("sentiment_lexicon.tsv"), "{err}");
}

#[test]
fn later_stages_require_earlier_outputs() {
    let f = fixture(FAST_LMO);
    let cfg = pipeline_config(&f);
    let err = pipeline::cmd_score(&cfg, ScoreOptions::default()).unwrap_err();
    assert!(err.to_string().contains("extract"), "{err}");
    pipeline::cmd_extract(&cfg).unwrap();
    let err = pipeline::cmd_sweep(&cfg).unwrap_err();
    assert!(err.to_string().contains("score"), "{err}");
}

#[test]
fn example_config_parses() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../icarfish.example.toml");
    let cfg = PipelineConfig::from_toml_file(&path).unwrap();
    assert_eq!(cfg.seed, Some(20170101));
    assert_eq!(cfg.features.min_count, 3);
    assert_eq!(cfg.lmo.coverage, 25.0);
    assert!(cfg.resources.ends_with("resources"));
}
