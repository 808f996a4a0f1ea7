use std::collections::BTreeMap;

use mmgen_core::{seeded, RngState, Tensor};
use mmgen_harness::checkpoint::MAGIC;
use mmgen_harness::pipeline::{open_checkpoint, KNOWN_SCOPES};
use mmgen_harness::{Checkpoint, HarnessError};
use rand::Rng;

fn sample() -> Checkpoint {
    let mut rng = seeded(3);
    let _: u64 = rng.random();
    Checkpoint {
        config: "seed = 3\n".into(),
        meta: BTreeMap::from([("stage".to_string(), "2".to_string())]),
        rng: Some(RngState::capture(&rng)),
        tensors: vec![
            ("mmlm/embed".into(), Tensor::randn(&[3, 4], 1.0, &mut rng)),
            ("viztok/proj/w".into(), Tensor::from_vec(&[2], vec![f32::MIN_POSITIVE, -0.0])),
        ],
    }
}

#[test]
fn save_load_save_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.ckpt");
    let ck = sample();
    ck.save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    assert_eq!(back.to_bytes(), ck.to_bytes());
    assert_eq!(back.tensors.len(), 2);
    for ((_, a), (_, b)) in back.tensors.iter().zip(&ck.tensors) {
        let bits = |t: &Tensor<f32>| t.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(a), bits(b));
    }
    let mut restored = back.rng.unwrap().restore();
    let mut original = ck.rng.unwrap().restore();
    assert_eq!(restored.random::<u64>(), original.random::<u64>());
}

fn load_err(bytes: &[u8]) -> String {
    match Checkpoint::from_bytes(bytes) {
        Err(HarnessError::Checkpoint(msg)) => msg,
        other => panic!("expected a checkpoint error, got {other:?}"),
    }
}

#[test]
fn corrupted_lengths_are_errors_not_crashes() {
    let bytes = sample().to_bytes();
    // config length field follows magic and version
    let mut huge = bytes.clone();
    huge[12..16].copy_from_slice(&u32::MAX.to_le_bytes());
    assert!(load_err(&huge).contains("truncated"));
    for cut in [0, 5, 13, bytes.len() / 2, bytes.len() - 1] {
        load_err(&bytes[..cut]);
    }
    let mut extra = bytes.clone();
    extra.push(0);
    assert!(load_err(&extra).contains("trailing"));
}

#[test]
fn version_and_magic_are_checked() {
    let mut bytes = sample().to_bytes();
    bytes[8..12].copy_from_slice(&99u32.to_le_bytes());
    assert!(load_err(&bytes).contains("version 99"));
    let mut bytes = sample().to_bytes();
    bytes[..MAGIC.len()].copy_from_slice(b"NOTACKPT");
    assert!(load_err(&bytes).contains("magic"));
}

#[test]
fn unknown_tensor_names_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("b.ckpt");
    let mut ck = sample();
    ck.tensors.push(("mystery/w".into(), Tensor::zeros(&[1])));
    ck.save(&path).unwrap();
    match open_checkpoint(&path) {
        Err(HarnessError::Checkpoint(msg)) => assert!(msg.contains("mystery/w"), "{msg}"),
        other => panic!("{other:?}"),
    }
    assert!(KNOWN_SCOPES.iter().all(|s| s.ends_with('/')));
}

#[test]
fn filling_checks_presence_and_shape() {
    let ck = sample();
    let mut wrong = Checkpoint::default();
    wrong.tensors.push(("embed".into(), Tensor::zeros(&[4, 3])));
    // a model-shaped set reads by namespace
    struct One(Tensor<f32>);
    impl mmgen_core::ParamSet<f32> for One {
        fn tensors(&self) -> Vec<(String, &Tensor<f32>)> {
            vec![("embed".into(), &self.0)]
        }
        fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor<f32>)> {
            vec![("embed".into(), &mut self.0)]
        }
    }
    let mut target = One(Tensor::zeros(&[3, 4]));
    ck.fill("mmlm", &mut target).unwrap();
    assert_eq!(target.0, ck.get("mmlm/embed").unwrap().clone());
    assert!(ck.fill("viztok", &mut target).is_err());
    assert!(wrong.fill("", &mut target).is_err());
}
