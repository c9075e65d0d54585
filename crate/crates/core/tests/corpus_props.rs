mod common;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use ntfuzz::corpus::{
    apply_fixups, assemble_image, extract_corpus, Corpus, CorpusError, ExtentKind,
};
use ntfuzz::forge::{build_image, ForgeSpec};
use ntfuzz::mutator::{mutate_in_place, MutationConfig};

use common::{geometry_sweep, verify_assembled};

fn seed() -> (Vec<u8>, Corpus) {
    let img = build_image(&ForgeSpec::default()).unwrap();
    let c = extract_corpus(&img).unwrap();
    (img, c)
}

#[test]
fn round_trip_across_geometries() {
    for spec in geometry_sweep() {
        let img = build_image(&spec).unwrap();
        let c = extract_corpus(&img).unwrap();
        assert_eq!(assemble_image(&img, &c).unwrap(), img, "{spec:?}");
        assert_eq!(Corpus::from_bytes(&c.to_bytes()).unwrap(), c);
    }
}

#[test]
fn seed_corpus_is_small_and_typed() {
    let (img, c) = seed();
    assert!(c.metadata.len() <= 64 * 1024);
    assert!(c.metadata.len() < img.len() / 16);
    assert_eq!(c.extents[0].kind, ExtentKind::Boot);
    assert!(c.extents.iter().any(|e| e.kind == ExtentKind::IndexBuffer));
    let paths: Vec<&str> = c.status.entries.keys().map(String::as_str).collect();
    assert_eq!(paths, ["/", "/a", "/d"]);
}

#[test]
fn standalone_fixups_are_idempotent_on_forged_images() {
    for spec in [ForgeSpec::default(), ForgeSpec::trigger_fixture()] {
        let img = build_image(&spec).unwrap();
        assert_eq!(apply_fixups(&img), img);
    }
}

#[test]
fn blob_of_the_wrong_length_is_refused() {
    let (img, mut c) = seed();
    c.metadata.pop();
    assert!(matches!(
        assemble_image(&img, &c),
        Err(CorpusError::BlobLength { .. })
    ));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn mutated_corpora_assemble_to_verifying_images(seed_v in any::<u64>(), rounds in 1usize..4) {
        let (img, mut c) = seed();
        let mut rng = ChaCha8Rng::seed_from_u64(seed_v);
        for _ in 0..rounds {
            mutate_in_place(&mut c.metadata, &MutationConfig::default(), &mut rng).unwrap();
        }
        let out = assemble_image(&img, &c).unwrap();
        prop_assert_eq!(out.len(), img.len());
        prop_assert!(verify_assembled(&out, &c).is_ok());
        // nothing outside the extents moves
        let mut inside = vec![false; img.len()];
        for e in &c.extents {
            inside[e.image_offset as usize..e.end() as usize].fill(true);
        }
        for (i, (a, b)) in img.iter().zip(&out).enumerate() {
            if !inside[i] {
                prop_assert_eq!(a, b, "byte {:#x} outside extents changed", i);
            }
        }
    }

    #[test]
    fn container_rejects_any_truncation(cut in 1usize..64) {
        let (_, c) = seed();
        let bytes = c.to_bytes();
        let cut = cut.min(bytes.len());
        prop_assert!(Corpus::from_bytes(&bytes[..bytes.len() - cut]).is_err());
    }
}
