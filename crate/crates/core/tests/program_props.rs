mod common;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use ntfuzz::corpus::extract_corpus;
use ntfuzz::forge::{build_image, ForgeSpec};
use ntfuzz::program::{
    apply_effect, attr_list_trigger, generate_op, generate_op_with, mutate_program,
    mutate_program_with, parse_program, replay, serialize_op, serialize_program, FileOp, FsStatus,
    OpProgram, OpenFlags,
};

use common::InvariantChecker;

fn fixture_status() -> FsStatus {
    let img = build_image(&ForgeSpec::trigger_fixture()).unwrap();
    extract_corpus(&img).unwrap().status
}

fn grow(status: &FsStatus, seed: u64, len: usize) -> OpProgram {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = OpProgram::default();
    while p.len() < len {
        p = generate_op_with(&p, status, &mut rng);
    }
    p
}

#[test]
fn trigger_program_has_eighteen_ops_and_round_trips() {
    let p = attr_list_trigger();
    assert_eq!(p.len(), 18);
    let text = serialize_program(&p);
    assert_eq!(text.lines().count(), 18);
    assert_eq!(parse_program(&text).unwrap(), p);
    let s = fixture_status();
    let mut st = s.clone();
    for op in &p.ops {
        st = apply_effect(&st, op).unwrap();
    }
    InvariantChecker::from_status_text(&s.to_text())
        .check(&p)
        .unwrap();
}

#[test]
fn stale_fsync_descriptor_is_repaired() {
    let s = fixture_status();
    let p = OpProgram::new(vec![
        FileOp::Open {
            path: "/a".into(),
            flags: OpenFlags::RDWR,
            slot: 0,
        },
        FileOp::Fsync { fd: 7 },
    ]);
    let q = mutate_program(&p, &s, 3);
    assert_eq!(q.ops[1], FileOp::Fsync { fd: 0 });
}

#[test]
fn empty_program_mutation_generates() {
    let s = FsStatus::default();
    let q = mutate_program(&OpProgram::default(), &s, 9);
    assert_eq!(q, generate_op(&OpProgram::default(), &s, 9));
    assert_eq!(q.len(), 1);
}

#[test]
fn unlinked_paths_leave_the_candidate_set() {
    let s = fixture_status();
    let p = OpProgram::new(vec![FileOp::Unlink { path: "/c".into() }]);
    for seed in 0..300 {
        let q = generate_op(&p, &s, seed);
        let last = q.ops.last().unwrap();
        let creates = matches!(
            last,
            FileOp::Open { .. }
                | FileOp::Mkdir { .. }
                | FileOp::Symlink { .. }
                | FileOp::Link { .. }
        );
        if !creates {
            assert!(!last.paths().contains(&"/c"), "{}", serialize_op(last));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn generated_programs_satisfy_the_checker(seed in any::<u64>(), len in 1usize..32) {
        let s = fixture_status();
        let p = grow(&s, seed, len);
        prop_assert!(replay(&p, &s).is_ok());
        let checked = InvariantChecker::from_status_text(&s.to_text()).check(&p);
        prop_assert!(checked.is_ok(), "{:?}\n{}", checked, serialize_program(&p));
        prop_assert_eq!(parse_program(&serialize_program(&p)).unwrap(), p);
    }

    #[test]
    fn mutation_touches_exactly_one_op(seed in any::<u64>(), len in 1usize..20, m in any::<u64>()) {
        let s = fixture_status();
        let p = grow(&s, seed, len);
        let q = mutate_program(&p, &s, m);
        prop_assert!(replay(&q, &s).is_ok());
        let before: Vec<String> = p.ops.iter().map(serialize_op).collect();
        let after: Vec<String> = q.ops.iter().map(serialize_op).collect();
        if after.len() == before.len() {
            let changed = before.iter().zip(&after).filter(|(a, b)| a != b).count();
            prop_assert_eq!(changed, 1);
            let i = before.iter().zip(&after).position(|(a, b)| a != b).unwrap();
            prop_assert_eq!(p.ops[i].kind(), q.ops[i].kind());
        } else {
            // fell back to generation
            prop_assert_eq!(&after[..before.len()], &before[..]);
            prop_assert_eq!(after.len(), before.len() + 1);
        }
    }

    #[test]
    fn mixed_rounds_stay_valid(seed in any::<u64>(), rounds in 1usize..40) {
        let s = fixture_status();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = OpProgram::default();
        for _ in 0..rounds {
            p = if rand::Rng::gen_bool(&mut rng, 0.5) {
                mutate_program_with(&p, &s, &mut rng)
            } else {
                generate_op_with(&p, &s, &mut rng)
            };
            prop_assert!(InvariantChecker::from_status_text(&s.to_text()).check(&p).is_ok());
        }
    }
}
