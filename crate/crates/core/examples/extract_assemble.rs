//! Condenses an image into its metadata corpus and scatters it back.

use ntfuzz::corpus::{assemble_image, extract_corpus, Corpus};
use ntfuzz::forge::{build_image, ForgeSpec};

fn main() {
    let img = build_image(&ForgeSpec::trigger_fixture()).unwrap();
    let corpus = extract_corpus(&img).unwrap();
    println!(
        "image {} bytes -> metadata {} bytes in {} extents",
        img.len(),
        corpus.metadata.len(),
        corpus.extents.len()
    );
    for e in corpus.extents.iter().take(6) {
        println!(
            "  {:#010x} {:5} {}",
            e.image_offset,
            e.length,
            e.kind.as_str()
        );
    }
    print!("status:\n{}", corpus.status.to_text());
    let bytes = corpus.to_bytes();
    let back = Corpus::from_bytes(&bytes).unwrap();
    assert_eq!(assemble_image(&img, &back).unwrap(), img);
    println!(
        "container {} bytes; round trip is byte-identical",
        bytes.len()
    );
}
