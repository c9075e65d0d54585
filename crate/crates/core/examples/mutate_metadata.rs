//! One havoc round over a corpus, its log, and the fixups that keep the
//! assembled image well formed.

use ntfuzz::corpus::{assemble_image, extract_corpus};
use ntfuzz::forge::{build_image, ForgeSpec};
use ntfuzz::mutator::{mutate_blob, MutationConfig, MutationLog};

fn main() {
    let seed: u64 = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(7);
    let img = build_image(&ForgeSpec::default()).unwrap();
    let mut corpus = extract_corpus(&img).unwrap();
    let mut cfg = MutationConfig::with_seed(seed);
    cfg.tokens.push(b"FILE".to_vec());
    let (blob, log) = mutate_blob(&corpus.metadata, &cfg).unwrap();
    print!("{}", log.to_text());
    let parsed = MutationLog::from_text(&log.to_text()).unwrap();
    assert_eq!(parsed.replay(&corpus.metadata).unwrap(), blob);
    corpus.metadata = blob;
    let out = assemble_image(&img, &corpus).unwrap();
    let changed = img.iter().zip(&out).filter(|(a, b)| a != b).count();
    println!("{changed} image bytes differ after fixups");
}
