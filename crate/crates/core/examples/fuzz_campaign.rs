//! A short vulnerable-mode campaign from the clean seed, then a replay of
//! every bundle it wrote.

use ntfuzz::checks::Mode;
use ntfuzz::forge::{build_image, ForgeSpec};
use ntfuzz::fuzzer::{reproduce, run_campaign, CampaignConfig};
use ntfuzz::mutator::MutationConfig;

fn main() {
    let iters: u64 = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(20_000);
    let seeds = tempfile::tempdir().unwrap();
    let findings = tempfile::tempdir().unwrap();
    std::fs::write(
        seeds.path().join("seed.img"),
        build_image(&ForgeSpec::default()).unwrap(),
    )
    .unwrap();
    let mut cfg = CampaignConfig::new(seeds.path(), findings.path(), Mode::Vulnerable);
    cfg.iterations = iters;
    cfg.mutation = MutationConfig::with_seed(1);
    let report = run_campaign(&cfg).unwrap();
    print!("{report}");
    for f in &report.findings {
        let out = reproduce(&f.bundle).unwrap();
        println!("replayed {}: {out}", f.bundle.display());
    }
}
