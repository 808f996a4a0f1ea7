use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = "\
pairs = 12
qa = 12
episodes = 6
interleaved = 3
grounded = 3
gen = 3
chat = 3
eval_pool = 6
eval_test = 3
grid = 4
max_len = 300
layers = 1
stage1_steps = 3
stage2_steps = 4
chat_steps = 2
gen_steps = 2
";

fn mmgen(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mmgen"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = mmgen(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn fails(dir: &Path, args: &[&str]) -> String {
    let out = mmgen(dir, args);
    assert!(!out.status.success(), "{args:?} unexpectedly succeeded");
    let err = String::from_utf8(out.stderr).unwrap();
    assert_eq!(err.trim_end().lines().count(), 1, "diagnostic is one line: {err}");
    err
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("tiny.cfg"), TINY).unwrap();
    dir
}

#[test]
fn gen_corpus_is_reproducible() {
    let dir = setup();
    let d = dir.path();
    ok(d, &["gen-corpus", "--config", "tiny.cfg", "--seed", "7", "--out", "a"]);
    ok(d, &["gen-corpus", "--config", "tiny.cfg", "--seed", "7", "--out", "b"]);
    for file in ["pairs.tsv", "gen.tsv", "eval_test.tsv", "images/pair-00003.ppm", "corpus.cfg"] {
        assert_eq!(std::fs::read(d.join("a").join(file)).unwrap(), std::fs::read(d.join("b").join(file)).unwrap());
    }
    let cfg = std::fs::read_to_string(d.join("a/corpus.cfg")).unwrap();
    assert!(cfg.contains("seed = 7\n"));
}

#[test]
fn stages_chain_through_checkpoints_and_eval_reports() {
    let dir = setup();
    let d = dir.path();
    ok(d, &["gen-corpus", "--config", "tiny.cfg", "--out", "c"]);
    ok(d, &["train", "--config", "tiny.cfg", "--stage", "1", "--corpus", "c", "--out", "s1.ckpt"]);
    ok(d, &["train", "--config", "tiny.cfg", "--stage", "2", "--corpus", "c", "--init", "s1.ckpt", "--out", "s2.ckpt"]);
    let s1 = std::fs::read_to_string(d.join("s1.ckpt.metrics")).unwrap();
    let s2 = std::fs::read_to_string(d.join("s2.ckpt.metrics")).unwrap();
    assert_eq!(s1.lines().count(), 3);
    assert_eq!(s2.lines().count(), 4);
    for line in s2.lines() {
        let m = mmgen_mmlm::StepMetrics::parse(line).expect("metrics line parses");
        assert!(m.reg > 0.0, "{line}");
    }
    for line in s1.lines() {
        assert_eq!(mmgen_mmlm::StepMetrics::parse(line).unwrap().reg, 0.0);
    }
    ok(d, &["train", "--config", "tiny.cfg", "--stage", "chat", "--corpus", "c", "--init", "s2.ckpt", "--out", "chat.ckpt"]);
    ok(d, &["train", "--config", "tiny.cfg", "--stage", "gen", "--corpus", "c", "--init", "s2.ckpt", "--out", "gen.ckpt"]);

    let report = ok(d, &["eval", "--config", "tiny.cfg", "--corpus", "c", "--checkpoint", "s2.ckpt", "--shots", "0,4", "--report", "r.txt"]);
    let summaries: Vec<&str> = report.lines().filter(|l| l.starts_with("# k=")).collect();
    assert_eq!(summaries.len(), 2);
    assert!(summaries[0].starts_with("# k=0 ") && summaries[1].starts_with("# k=4 "));
    assert_eq!(report.lines().filter(|l| l.starts_with("item=")).count(), 6);
    assert_eq!(std::fs::read_to_string(d.join("r.txt")).unwrap(), report);

    ok(d, &["tokenize", "--config", "tiny.cfg", "--corpus", "c", "--out", "fx.tsv"]);
    let fx = std::fs::read_to_string(d.join("fx.tsv")).unwrap();
    for t in ["pair", "interleaved", "grounded", "chat", "gen"] {
        assert!(fx.lines().any(|l| l.starts_with(&format!("{t}\t"))), "{t}");
    }
}

#[test]
fn resuming_a_stage_needs_a_matching_checkpoint() {
    let dir = setup();
    let d = dir.path();
    ok(d, &["gen-corpus", "--config", "tiny.cfg", "--out", "c"]);
    ok(d, &["train", "--config", "tiny.cfg", "--stage", "1", "--corpus", "c", "--out", "s1.ckpt"]);
    let err = fails(d, &["train", "--config", "tiny.cfg", "--stage", "2", "--corpus", "c", "--resume", "s1.ckpt", "--out", "x"]);
    assert!(err.contains("stage"), "{err}");
}

#[test]
fn decoder_round_trip_writes_images() {
    let dir = setup();
    let d = dir.path();
    std::fs::write(
        d.join("dec.cfg"),
        "pairs = 4\nqa = 2\ngen = 2\neval_pool = 2\neval_test = 1\nlayers = 1\nstage1_steps = 1\n\
         dec_base = 4\ndec_mid = 8\ndec_cond_channels = 4\ndec_time_dim = 8\ndec_heads = 2\n\
         dec_steps = 2\ndec_batch = 2\nsample_steps = 3\n",
    )
    .unwrap();
    ok(d, &["gen-corpus", "--config", "dec.cfg", "--out", "c"]);
    ok(d, &["train", "--config", "dec.cfg", "--stage", "1", "--corpus", "c", "--out", "lm.ckpt"]);
    ok(d, &["train-decoder", "--config", "dec.cfg", "--corpus", "c", "--checkpoint", "lm.ckpt", "--out", "dec.ckpt"]);
    assert_eq!(std::fs::read_to_string(d.join("dec.ckpt.metrics")).unwrap().lines().count(), 2);
    ok(d, &["decode", "--config", "dec.cfg", "--decoder", "dec.ckpt", "--image", "c/images/pair-00000.ppm", "--out", "r.ppm"]);
    ok(d, &["decode", "--config", "dec.cfg", "--decoder", "dec.ckpt", "--image", "c/images/pair-00000.ppm", "--out", "r2.ppm"]);
    assert_eq!(std::fs::read(d.join("r.ppm")).unwrap(), std::fs::read(d.join("r2.ppm")).unwrap());
    ok(d, &[
        "decode", "--config", "dec.cfg", "--decoder", "dec.ckpt", "--prompt", "a red square .", "--checkpoint",
        "lm.ckpt", "--corpus", "c", "--out", "g.ppm",
    ]);
    let img = mmgen_core::ImageTensor::read_ppm(&d.join("g.ppm")).unwrap();
    assert_eq!((img.height, img.width, img.channels), (32, 32, 3));
}

#[test]
fn failures_exit_nonzero_with_one_line() {
    let dir = setup();
    let d = dir.path();
    fails(d, &["gen-corpus", "--out", "x", "--bogus"]);
    fails(d, &["train", "--stage", "3", "--corpus", "c", "--out", "x"]);
    std::fs::write(d.join("bad.cfg"), "seed = 1\nwidth = 3\n").unwrap();
    let err = fails(d, &["gen-corpus", "--config", "bad.cfg", "--out", "x"]);
    assert!(err.contains("line 2") && err.contains("width"), "{err}");
    let err = fails(d, &["eval", "--corpus", "missing", "--checkpoint", "none.ckpt"]);
    assert!(err.contains("missing"), "{err}");
    fails(d, &["decode", "--decoder", "none.ckpt", "--out", "x.ppm"]);
}
