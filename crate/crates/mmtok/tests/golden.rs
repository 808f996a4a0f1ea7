//! Byte-exact fixtures. Set `MMGEN_BLESS=1` to regenerate after an audited
//! format change.

mod common;

use std::path::PathBuf;

use common::*;
use mmgen_mmtok::*;

fn fixture_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join(FIXTURE)
}

#[test]
fn templates_match_golden_records() {
    let got = golden_records();
    if std::env::var_os("MMGEN_BLESS").is_some() {
        std::fs::write(fixture_path(), &got).unwrap();
    }
    let want = std::fs::read_to_string(fixture_path()).expect("fixture missing; run with MMGEN_BLESS=1");
    assert_eq!(got, want);
}

#[test]
fn golden_records_parse_back_to_the_samples() {
    let v = vocab();
    for s in golden_samples() {
        s.validate(&v, SLOTS).unwrap();
        let parsed = SequenceSample::from_record(&s.to_record(&v).unwrap(), &v).unwrap();
        assert_eq!(parsed.elements, s.elements);
        assert_eq!(parsed.text_mask, s.text_mask);
        assert_eq!(parsed.visual_mask, s.visual_mask);
        assert_eq!(parsed.meta, s.meta);
        parsed.validate(&v, SLOTS).unwrap();
    }
}

#[test]
fn vocabulary_text_form_is_one_token_per_line() {
    let v = vocab();
    let text = v.to_text();
    for (i, line) in text.lines().enumerate() {
        assert_eq!(v.id(line).unwrap(), TokenId(i as u32));
    }
    assert_eq!(Vocab::from_text(&text).unwrap(), v);
}
