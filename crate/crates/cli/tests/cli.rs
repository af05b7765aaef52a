use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn hyporeader(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hyporeader"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn empty_input_dir_gives_header_only_csv() {
    let dir = tempfile::tempdir().unwrap();
    let docs = dir.path().join("docs");
    fs::create_dir(&docs).unwrap();
    let models = dir.path().join("m");
    let (d_bin, t_bin, l_bin) = (models.join("d.bin"), models.join("t.bin"), models.join("l.bin"));
    let glove = dir.path().join("glove.txt");
    let det = dir.path().join("det.jsonl");
    let tag = dir.path().join("tag.jsonl");
    let link = dir.path().join("link.jsonl");
    for args in [
        vec!["synth", "detector", "--positives", "40", "--negatives", "40", "--output", p(&det)],
        vec!["synth", "tagger", "--count", "10", "--output", p(&tag)],
        vec!["synth", "linker", "--count", "60", "--min-per-class", "10", "--output", p(&link)],
        vec!["synth", "glove", "--dim", "8", "--output", p(&glove)],
    ] {
        let out = hyporeader(&args);
        assert!(out.status.success(), "{}", stderr(&out));
    }
    let tagger_cfg = dir.path().join("tagger.toml");
    fs::write(&tagger_cfg, "epochs = 1\nlstm1_units = 4\nlstm2_units = 4\n").unwrap();
    let steps: [Vec<&str>; 3] = [
        vec!["train", "detector", "--input", p(&det), "--output", p(&d_bin)],
        vec![
            "--config", p(&tagger_cfg),
            "train", "tagger", "--input", p(&tag), "--glove", p(&glove), "--output", p(&t_bin),
        ],
        vec!["train", "linker", "--input", p(&link), "--output", p(&l_bin)],
    ];
    for args in steps {
        let out = hyporeader(&args);
        assert!(out.status.success(), "{}", stderr(&out));
    }
    let csv = dir.path().join("out.csv");
    let out = hyporeader(&[
        "run", "--input", p(&docs), "--output", p(&csv),
        "--detector", p(&d_bin),
        "--tagger", p(&t_bin),
        "--linker", p(&l_bin),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(
        fs::read_to_string(&csv).unwrap(),
        "file_name,hypothesis_num,hypothesis,variable_1,variable_2,direction,causal_relationship\n"
    );
}

#[test]
fn malformed_jsonl_names_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("bad.jsonl");
    fs::write(&input, "{\"text\": \"H1: a b c\", \"label\": 1}\n\n{\"text\": oops}\n").unwrap();
    let out = hyporeader(&["train", "detector", "--input", p(&input), "--output", p(&dir.path().join("d.bin"))]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("line 3"), "{}", stderr(&out));
}

#[test]
fn too_many_folds_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("det.jsonl");
    let out = hyporeader(&["synth", "detector", "--positives", "3", "--negatives", "3", "--output", p(&input)]);
    assert!(out.status.success(), "{}", stderr(&out));
    let out = hyporeader(&["eval", "detector", "--input", p(&input), "--folds", "10"]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    assert!(stderr(&out).contains("exceeds"));
}

#[test]
fn detector_training_echoes_default_config() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("det.jsonl");
    let out = hyporeader(&["synth", "detector", "--positives", "30", "--negatives", "30", "--output", p(&input)]);
    assert!(out.status.success(), "{}", stderr(&out));
    let out = hyporeader(&["train", "detector", "--input", p(&input), "--output", p(&dir.path().join("d.bin"))]);
    assert!(out.status.success(), "{}", stderr(&out));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let cfg = &report["config"];
    assert_eq!(cfg["ngram"], 1);
    assert_eq!(cfg["lr"], 0.3);
    assert_eq!(cfg["dim"], 120);
    assert_eq!(cfg["loss"], "negative_sampling");
}

#[test]
fn tagger_epoch_log_has_one_row_per_epoch() {
    let dir = tempfile::tempdir().unwrap();
    let tag = dir.path().join("tag.jsonl");
    let glove = dir.path().join("glove.txt");
    let cfg = dir.path().join("tagger.toml");
    fs::write(&cfg, "pad_len = 12\nlstm1_units = 2\nlstm2_units = 2\nbatch_size = 8\n").unwrap();
    assert!(hyporeader(&["synth", "tagger", "--count", "8", "--output", p(&tag)]).status.success());
    assert!(hyporeader(&["synth", "glove", "--dim", "4", "--output", p(&glove)]).status.success());
    let log = dir.path().join("epochs.csv");
    let out = hyporeader(&[
        "--config", p(&cfg),
        "train", "tagger", "--input", p(&tag), "--glove", p(&glove),
        "--output", p(&dir.path().join("t.bin")), "--epoch-log", p(&log),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = fs::read_to_string(&log).unwrap();
    assert_eq!(text.lines().count(), 51);
}
