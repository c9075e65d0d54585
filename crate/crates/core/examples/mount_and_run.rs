//! Mounts a forged image and runs a short program in both modes.

use ntfuzz::checks::Mode;
use ntfuzz::forge::{build_image, ForgeSpec};
use ntfuzz::program::{parse_program, serialize_op};
use ntfuzz::target::{execute, TargetConfig};

const PROGRAM: &str = r#"
open("/a", RDWR) -> $0
pwrite64($0, 64, 4096)
lseek($0, 0, 2)
mkdir("/d/sub", 0o755)
rename("/a", "/d/sub/a")
stat("/d/sub/a")
setxattr("/d", "user.k", 0x0102, 0)
listxattr("/d", 256)
close($0)
"#;

fn main() {
    let img = build_image(&ForgeSpec::default()).unwrap();
    let program = parse_program(PROGRAM).unwrap();
    for mode in [Mode::Hardened, Mode::Vulnerable] {
        let e = execute(&img, &program.ops, &TargetConfig::from_env(mode).unwrap());
        println!(
            "{mode}: mounted={} outcome={} coverage={}",
            e.mounted,
            e.outcome,
            e.coverage.len()
        );
        for (op, r) in program.ops.iter().zip(&e.results) {
            println!("  {:40} {r:?}", serialize_op(op));
        }
    }
}
