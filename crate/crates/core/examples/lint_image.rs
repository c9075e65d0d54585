//! Runs every hardened check over an image file, or over each crafted case
//! when no path is given.

use ntfuzz::forge::{craft_case, CrashCase};
use ntfuzz::ondisk::MAX_BYTES_PER_MFT;
use ntfuzz::target::lint_image;

fn main() {
    let images: Vec<(String, Vec<u8>)> = match std::env::args().nth(1) {
        Some(path) => vec![(path.clone(), std::fs::read(&path).expect("readable image"))],
        None => CrashCase::ALL
            .iter()
            .map(|&c| (c.to_string(), craft_case(c).0))
            .collect(),
    };
    for (name, img) in images {
        println!("{name}:");
        for hit in lint_image(&img, MAX_BYTES_PER_MFT) {
            println!("  {hit}");
        }
    }
}
