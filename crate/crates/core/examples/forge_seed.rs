//! Forges a small image with a custom tree and checks that it mounts.

use ntfuzz::checks::Mode;
use ntfuzz::forge::{build_image, ForgeSpec, TreeNode};
use ntfuzz::program::{FileOp, OpProgram};
use ntfuzz::target::run_case;

fn main() {
    let spec = ForgeSpec::with_tree(vec![
        TreeNode::file("/readme", 120),
        TreeNode::dir("/etc"),
        TreeNode::file("/etc/conf", 40).xattr("user.owner", b"root"),
        TreeNode::symlink("/conf", "/etc/conf"),
    ]);
    let img = build_image(&spec).expect("tree fits the default geometry");
    let stats = ["/readme", "/etc", "/etc/conf", "/conf"]
        .map(|p| FileOp::Stat { path: p.into() })
        .to_vec();
    let (outcome, coverage) = run_case(&img, &OpProgram::new(stats), Mode::Hardened);
    println!(
        "{} bytes, outcome {outcome}, {} sites",
        img.len(),
        coverage.len()
    );
    if let Some(path) = std::env::args().nth(1) {
        std::fs::write(&path, &img).expect("writable path");
        println!("wrote {path}");
    }
}
