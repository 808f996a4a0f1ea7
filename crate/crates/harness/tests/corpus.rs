use std::collections::BTreeMap;
use std::path::Path;

use mmgen_harness::corpus::{generate, Corpus};
use mmgen_harness::synth::{SceneSpec, SynthScene};
use mmgen_harness::task::HELD_OUT_COLORS;
use mmgen_harness::Config;
use mmgen_mmtok::{dequantize_coord, quantize_coord};
use proptest::prelude::*;

fn small() -> Config {
    Config::parse(
        "pairs = 12\nqa = 10\ninterleaved = 3\ngrounded = 4\ngen = 3\nchat = 4\neval_pool = 6\neval_test = 4\n",
    )
    .unwrap()
}

fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().display().to_string();
                out.insert(rel, std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn same_seed_gives_byte_identical_directories() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    generate(&cfg).unwrap().write(&a, &cfg).unwrap();
    generate(&cfg).unwrap().write(&b, &cfg).unwrap();
    let (sa, sb) = (snapshot(&a), snapshot(&b));
    assert!(sa.len() > 40);
    assert_eq!(sa, sb);
    let mut other = cfg.clone();
    other.seed = 1;
    generate(&other).unwrap().write(&b, &other).unwrap();
    assert_ne!(snapshot(&b)["pairs.tsv"], sa["pairs.tsv"]);
}

#[test]
fn a_written_corpus_loads_back_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small();
    let corpus = generate(&cfg).unwrap();
    corpus.write(dir.path(), &cfg).unwrap();
    assert_eq!(Corpus::load(dir.path()).unwrap(), corpus);
    assert_eq!(Config::load(&dir.path().join("corpus.cfg")).unwrap(), cfg);
}

#[test]
fn split_sizes_follow_the_config() {
    let cfg = small();
    let c = generate(&cfg).unwrap();
    assert_eq!(c.pairs.len(), 12);
    assert_eq!(c.qa.len(), 10);
    assert_eq!(c.interleaved.len(), 3);
    assert!(c.interleaved.iter().all(|d| (2..=4).contains(&d.len())));
    assert_eq!((c.grounded.len(), c.gen.len(), c.chat.len()), (4, 3, 4));
    assert_eq!((c.eval.pool.len(), c.eval.test.len()), (6, 4));
    c.eval.validate().unwrap();
}

#[test]
fn held_out_colours_appear_only_in_evaluation() {
    let c = generate(&small()).unwrap();
    let held: Vec<&str> = HELD_OUT_COLORS.iter().map(|col| col.word()).collect();
    let mut training_text: Vec<&str> = c.pairs.iter().map(|p| p.caption.as_str()).collect();
    training_text.extend(c.qa.iter().map(|q| q.answer.as_str()));
    training_text.extend(c.gen.iter().map(|g| g.caption.as_str()));
    training_text.extend(c.chat.iter().flat_map(|ch| ch.turns.iter().map(|t| t.1.as_str())));
    for text in training_text {
        assert!(held.iter().all(|h| !text.split(' ').any(|w| w == *h)), "{text}");
    }
    for item in c.eval.pool.iter().chain(&c.eval.test) {
        assert!(held.contains(&item.answer.as_str()), "{}", item.answer);
    }
}

#[test]
fn chat_opens_with_a_colour_question() {
    let c = generate(&small()).unwrap();
    for ch in &c.chat {
        assert_eq!(ch.turns.len(), 2);
        assert!(ch.turns[0].0.starts_with("what color is the "));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn scene_boxes_survive_quantization(seed in any::<u64>(), index in 0u64..1000) {
        let scene = SynthScene::generate(seed, index, &SceneSpec::default());
        for shape in &scene.shapes {
            let b = shape.bbox;
            for c in [b.x1, b.y1, b.x2, b.y2] {
                prop_assert!((0.0..=1.0).contains(&c));
                let back = dequantize_coord(quantize_coord(c).unwrap()).unwrap();
                prop_assert!((back - c).abs() <= 1.0 / 448.0 + 1e-12);
            }
        }
    }
}
