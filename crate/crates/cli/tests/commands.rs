use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = "\
model.layers = 1
model.hidden = 16
model.embed_dim = 16
model.heads = 2
model.ffn_dim = 32
model.max_positions = 16
train.max_length = 16
train.total_steps = 12
train.warmup_steps = 3
train.batch_size = 4
train.peak_lr = 1e-3
train.neighbors = 0
train.sample_size = 12
eval.max_length = 16
";

fn wordlm(dir: &Path, args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_wordlm"));
    cmd.current_dir(dir).args(args);
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

/// 60 documents of 10 words over w00..w39, plus the small config.
fn workspace() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let mut corpus = String::new();
    let mut state = 7u64;
    for _ in 0..60 {
        let words: Vec<String> = (0..10)
            .map(|_| {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                format!("w{:02}", (state >> 33) % 40)
            })
            .collect();
        corpus.push_str(&words.join(" "));
        corpus.push('\n');
    }
    fs::write(dir.path().join("corpus.txt"), corpus).unwrap();
    fs::write(dir.path().join("small.cfg"), SMALL).unwrap();
    dir
}

#[test]
fn build_vocab_writes_specials_plus_top_k() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("c.txt"), "b a c a b a d\ne e e e\n").unwrap();
    let out = wordlm(dir.path(), &["build-vocab", "--corpus", "c.txt", "--k", "3", "--out", "v/vocab.tsv"], &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(dir.path().join("v/vocab.tsv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 1 + 5 + 3);
    assert_eq!(&lines[6..], ["e\t4", "a\t3", "b\t2"]);
    assert!(dir.path().join("v/effective_config.cfg").exists());
}

#[test]
fn pretraining_is_deterministic_per_seed() {
    let dir = workspace();
    let run = |out: &str, seed: &str| {
        let o = wordlm(
            dir.path(),
            &["pretrain", "--corpus", "corpus.txt", "--config", "small.cfg", "--seed", seed, "--out-dir", out],
            &[],
        );
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        let p = dir.path().join(out);
        (fs::read(p.join("checkpoint.bin")).unwrap(), fs::read_to_string(p.join("metrics.tsv")).unwrap())
    };
    let a = run("a", "5");
    let b = run("b", "5");
    let c = run("c", "6");
    assert_eq!(a, b);
    assert_ne!(a.0, c.0);
    assert_eq!(a.1.lines().count(), 12);
}

#[test]
fn exit_codes_separate_usage_config_and_runtime_errors() {
    let dir = workspace();
    let usage = wordlm(dir.path(), &["pretrain", "--corpus", "corpus.txt", "--no-such-flag"], &[]);
    assert_eq!(usage.status.code(), Some(2));

    let unknown = wordlm(
        dir.path(),
        &["pretrain", "--corpus", "corpus.txt", "--out-dir", "x", "--set", "train.bogus=1"],
        &[],
    );
    assert_eq!(unknown.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&unknown.stderr).contains("train.bogus"));

    let bad_env = wordlm(
        dir.path(),
        &["pretrain", "--corpus", "corpus.txt", "--out-dir", "x"],
        &[("WORDLM_TRAIN_PEAK_LR", "fast")],
    );
    assert_eq!(bad_env.status.code(), Some(3));

    let invariant = wordlm(
        dir.path(),
        &["pretrain", "--corpus", "corpus.txt", "--config", "small.cfg", "--set", "train.warmup_steps=99", "--out-dir", "x"],
        &[],
    );
    assert_eq!(invariant.status.code(), Some(3));

    let missing = wordlm(dir.path(), &["inspect-checkpoint", "--checkpoint", "nope.bin"], &[]);
    assert_eq!(missing.status.code(), Some(1));
    assert!(!dir.path().join("x").exists());
}

#[test]
fn set_beats_environment_beats_file() {
    let dir = workspace();
    let o = wordlm(
        dir.path(),
        &["build-vocab", "--corpus", "corpus.txt", "--config", "small.cfg", "--set", "train.batch_size=9", "--out", "v.tsv"],
        &[("WORDLM_TRAIN_BATCH_SIZE", "7"), ("WORDLM_TRAIN_PEAK_LR", "0.5")],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let cfg = fs::read_to_string(dir.path().join("effective_config.cfg")).unwrap();
    assert!(cfg.contains("train.batch_size = 9\n"));
    assert!(cfg.contains("train.peak_lr = 0.5\n"));
    assert!(cfg.contains("train.warmup_steps = 3\n"));
}

#[test]
fn probe_prints_one_row_per_bucket() {
    let dir = workspace();
    let o = wordlm(
        dir.path(),
        &["pretrain", "--corpus", "corpus.txt", "--config", "small.cfg", "--out-dir", "run"],
        &[],
    );
    assert!(o.status.success());
    let o = wordlm(
        dir.path(),
        &["probe", "--checkpoint", "run/checkpoint.bin", "--corpus", "corpus.txt", "--config", "small.cfg", "--out-dir", "probe"],
        &[],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    let rows: Vec<&str> = text.lines().collect();
    assert_eq!(rows[0], "bucket\tmasked\toov\ttop1\ttop5\ttop10");
    for (row, name) in rows[1..5].iter().zip(["High", "Medium", "Low", "Rare"]) {
        assert!(row.starts_with(name), "{row}");
    }
    assert!(dir.path().join("probe/probes.jsonl").exists());

    // Rebuilt probes scored from the saved file give the same table.
    let again = wordlm(
        dir.path(),
        &["probe", "--checkpoint", "run/checkpoint.bin", "--probes", "probe/probes.jsonl", "--config", "small.cfg"],
        &[],
    );
    assert_eq!(stdout(&again), text);
}

#[test]
fn span_metrics_from_prediction_files() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("gold.jsonl"),
        "{\"context_words\":[\"a\",\"b\",\"c\",\"d\"],\"question_words\":[\"q\"],\"gold_spans\":[[1,2]]}\n\
         {\"context_words\":[\"a\",\"b\"],\"question_words\":[\"q\"],\"gold_spans\":[]}\n",
    )
    .unwrap();
    fs::write(dir.path().join("pred.jsonl"), "{\"span\":[1,3]}\n{\"span\":null}\n").unwrap();
    let o = wordlm(dir.path(), &["eval-span", "--gold", "gold.jsonl", "--predictions", "pred.jsonl"], &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    // Item 1: P = 2/3, R = 1, F1 = 0.8; item 2: correct abstention.
    assert_eq!(stdout(&o).trim(), "exact match 0.5000 f1 0.9000 (2 items)");
}

#[test]
fn tag_metrics_from_prediction_files() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("gold.jsonl"),
        "{\"words\":[\"a\",\"b\",\"c\",\"d\"],\"gold_labels\":[\"B-P\",\"I-P\",\"O\",\"B-L\"]}\n",
    )
    .unwrap();
    fs::write(dir.path().join("pred.jsonl"), "{\"labels\":[\"B-P\",\"I-P\",\"B-L\",\"O\"]}\n").unwrap();
    let o = wordlm(dir.path(), &["eval-tag", "--gold", "gold.jsonl", "--predictions", "pred.jsonl"], &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(stdout(&o).trim(), "precision 0.5000 recall 0.5000 f1 0.5000");
}

#[test]
fn projection_recovers_a_planted_map() {
    let dir = tempfile::tempdir().unwrap();
    let w = [[1.0f32, -2.0, 0.5], [0.0, 1.5, 3.0]];
    let (mut src, mut dst) = (String::new(), String::new());
    for i in 0..12 {
        let x = [(i as f32 * 0.37).sin(), (i as f32 * 1.3).cos()];
        let y: Vec<f32> = (0..3).map(|j| x[0] * w[0][j] + x[1] * w[1][j]).collect();
        src.push_str(&format!("v{i} {} {}\n", x[0], x[1]));
        dst.push_str(&format!("v{i} {} {} {}\n", y[0], y[1], y[2]));
    }
    fs::write(dir.path().join("src.txt"), src).unwrap();
    fs::write(dir.path().join("dst.txt"), dst).unwrap();
    let o = wordlm(
        dir.path(),
        &["pretrain-projection", "--pretrained", "src.txt", "--target", "dst.txt", "--out", "w.txt",
          "--set", "projection.max_iters=5000"],
        &[],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let (rows, cols, data) = wordlm_cli::read_matrix(&dir.path().join("w.txt")).unwrap();
    assert_eq!((rows, cols), (2, 3));
    for (got, want) in data.iter().zip(w.iter().flatten()) {
        assert!((got - want).abs() < 1e-3, "{data:?}");
    }
}
