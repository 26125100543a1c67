use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mmrescore"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

const SMALL: &[&str] = &[
    "--n-train", "60", "--n-validation", "20", "--n-test", "20", "--n-unpaired-text", "30",
    "--n-unpaired-speech", "30",
];

fn gen(dir: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["gen-data", "--out-dir", dir.to_str().unwrap()];
    args.extend_from_slice(SMALL);
    args.extend_from_slice(extra);
    run(&args)
}

fn value(out: &str, key: &str) -> String {
    out.lines()
        .find_map(|l| l.strip_prefix(&format!("{key}\t")))
        .unwrap_or_else(|| panic!("no {key} in output"))
        .to_string()
}

#[test]
fn unknown_subcommand_is_usage_error() {
    assert_eq!(run(&["bogus"]).status.code(), Some(1));
}

#[test]
fn unknown_flag_is_usage_error() {
    assert_eq!(run(&["eval", "--no-such-flag", "1"]).status.code(), Some(1));
}

#[test]
fn help_exits_zero() {
    let o = run(&["--help"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("rescore"));
}

#[test]
fn missing_file_is_data_error() {
    assert_eq!(run(&["eval", "--nbest", "/nonexistent/x.nbest"]).status.code(), Some(2));
}

#[test]
fn malformed_corpus_is_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.nbest");
    std::fs::write(&p, "{not json\n").unwrap();
    assert_eq!(run(&["eval", "--nbest", p.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn gen_data_then_eval() {
    let dir = tempfile::tempdir().unwrap();
    let g = gen(dir.path(), &[]);
    assert_eq!(g.status.code(), Some(0), "{}", String::from_utf8_lossy(&g.stderr));
    let g = stdout(&g);
    assert!(g.starts_with("# mmrescore "));
    for f in ["train.nbest", "dev.nbest", "test.nbest", "text.txt", "speech.tok", "vocab.txt"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }

    let test = dir.path().join("test.nbest");
    for (source, key) in [("top1", "test_first_pass_wer"), ("oracle", "test_oracle_wer")] {
        let o = run(&["eval", "--nbest", test.to_str().unwrap(), "--hyp-source", source]);
        assert_eq!(o.status.code(), Some(0));
        let total = stdout(&o);
        let total = total.lines().find(|l| l.starts_with("TOTAL\t")).unwrap();
        let wer: f64 = total.rsplit('\t').next().unwrap().parse().unwrap();
        let expected: f64 = value(&g, key).parse().unwrap();
        assert!((wer - expected).abs() < 1e-6, "{source}: {wer} vs {expected}");
    }
}

#[test]
fn gen_data_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert!(gen(a.path(), &["--seed", "5"]).status.success());
    assert!(gen(b.path(), &["--seed", "5"]).status.success());
    for f in ["train.nbest", "test.nbest", "speech.tok", "vocab.txt"] {
        let x = std::fs::read(a.path().join(f)).unwrap();
        let y = std::fs::read(b.path().join(f)).unwrap();
        assert_eq!(x, y, "{f}");
    }
    let c = tempfile::tempdir().unwrap();
    assert!(gen(c.path(), &["--seed", "6"]).status.success());
    assert_ne!(
        std::fs::read(a.path().join("train.nbest")).unwrap(),
        std::fs::read(c.path().join("train.nbest")).unwrap()
    );
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "# small corpus\nn_best = 3\nsub-rate = 0.3\n").unwrap();
    let out = dir.path().join("data");
    let o = run(&[
        "gen-data", "--config", cfg.to_str().unwrap(), "--out-dir", out.to_str().unwrap(),
        "--sub-rate", "0.1", "--n-train", "5", "--n-validation", "5", "--n-test", "5",
        "--n-unpaired-text", "0", "--n-unpaired-speech", "0",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let s = stdout(&o);
    assert!(s.contains("# n-best = 3\n"));
    assert!(s.contains("# sub-rate = 0.1\n"));
    assert!(s.contains("# del-rate = 0.02\n"));
}

#[test]
fn unknown_config_key_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "hyp-source = oracle\nno-such-key = 1\n").unwrap();
    let o = run(&["eval", "--config", cfg.to_str().unwrap(), "--nbest", "x"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains(":2: unknown key"));
}

#[test]
fn train_rescore_and_tune_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    assert!(gen(dir.path(), &[]).status.success());
    let p = |f: &str| dir.path().join(f).to_str().unwrap().to_string();
    let shape = ["--d-model", "16", "--d-ff", "32", "--n-layers", "1", "--steps", "20", "--batch", "4"];

    let (nb, tx, sp, ck) = (p("train.nbest"), p("text.txt"), p("speech.tok"), p("lm.ckpt"));
    let (vocab, test, dev) = (p("vocab.txt"), p("test.nbest"), p("dev.nbest"));
    let mut args = vec!["train-lm", "--vocab", &vocab];
    args.extend(["--nbest", &nb, "--text", &tx, "--speech", &sp, "--out", &ck]);
    args.extend(shape);
    let o = run(&args);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("step\tloss\n"));

    let rescore = |parallel: &str| {
        let o = run(&[
            "rescore", "--vocab", &vocab, "--checkpoint", &ck, "--nbest", &test, "--mode", "tf",
            "--parallel", parallel,
        ]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        stdout(&o)
    };
    let par = rescore("true");
    let seq = rescore("false");
    let body = |s: &str| s.lines().filter(|l| !l.starts_with('#')).collect::<Vec<_>>().join("\n");
    assert_eq!(body(&par), body(&seq));
    assert!(par.contains("utt_id\trank\tindex\tlm_logprob\tam_logprob\tcombined\ttext\n"));

    let o = run(&["tune-lambda", "--vocab", &vocab, "--checkpoint", &ck, "--nbest", &dev, "--grid", "0.5,am_only"]);
    assert_eq!(o.status.code(), Some(0));
    let s = stdout(&o);
    assert!(s.lines().any(|l| l.starts_with("best\t")));

    let o = run(&["tune-lambda", "--vocab", &vocab, "--checkpoint", &ck, "--nbest", &dev, "--grid", "-1"]);
    assert_eq!(o.status.code(), Some(1));
}
