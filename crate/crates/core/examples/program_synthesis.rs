//! Grows a file-operation program that stays valid against the status of a
//! forged image, then rewrites one of its ops.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use ntfuzz::corpus::extract_corpus;
use ntfuzz::forge::{build_image, ForgeSpec};
use ntfuzz::program::{
    generate_op_with, mutate_program_with, replay, serialize_program, OpProgram,
};

fn main() {
    let img = build_image(&ForgeSpec::trigger_fixture()).unwrap();
    let status = extract_corpus(&img).unwrap().status;
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut p = OpProgram::default();
    for _ in 0..12 {
        p = generate_op_with(&p, &status, &mut rng);
    }
    println!("generated:");
    for line in serialize_program(&p).lines() {
        // xattr payloads are long; show their head
        let head: String = line.chars().take(72).collect();
        println!(
            "  {head}{}",
            if head.len() < line.len() { "..." } else { "" }
        );
    }
    let q = mutate_program_with(&p, &status, &mut rng);
    for (i, (a, b)) in p.ops.iter().zip(&q.ops).enumerate() {
        if a != b {
            println!("mutated op {i}: {}", a.kind());
        }
    }
    let end = replay(&q, &status).expect("mutation keeps the program valid");
    print!("final status:\n{}", end.to_text());
}
