//! The five reproducer cases against both target modes.

use ntfuzz::checks::Mode;
use ntfuzz::forge::{craft_case, CrashCase};
use ntfuzz::target::run_case;

fn main() {
    for case in CrashCase::ALL {
        let (img, program) = craft_case(case);
        let (vuln, _) = run_case(&img, &program, Mode::Vulnerable);
        let (hard, _) = run_case(&img, &program, Mode::Hardened);
        println!("{case} ({})", case.commit());
        println!("  vulnerable: {vuln}");
        println!("  hardened:   {hard}");
    }
}
