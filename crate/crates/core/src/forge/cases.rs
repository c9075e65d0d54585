use std::fmt;
use std::str::FromStr;

use super::{build_image_with_layout, ForgeSpec, Layout};
use crate::checks::{Check, CrashClass, Site};
use crate::corpus::{extract_corpus, Corpus};
use crate::ondisk::{
    usa, AttrType, FileRecord, INDX_HDR_OFFSET, MFT_REC_FREE, MFT_REC_MFT, MFT_REC_ROOT,
    OFF_RECORD_SIZE,
};
use crate::program::{attr_list_trigger, FileOp, OpProgram, OpenFlags};
use crate::reader::{get_u32, put_u16, put_u32};

/// The five published bugs, each reproduced by one corruption of a forged
/// image (and, for the syscall-triggered two, a program).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CrashCase {
    RecSizeNpd,
    AsizeOverflow,
    RootIopNpd,
    NamelenOobWrite,
    IndexUsedOobRead,
}

impl CrashCase {
    pub const ALL: [CrashCase; 5] = [
        CrashCase::RecSizeNpd,
        CrashCase::AsizeOverflow,
        CrashCase::RootIopNpd,
        CrashCase::NamelenOobWrite,
        CrashCase::IndexUsedOobRead,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CrashCase::RecSizeNpd => "rec_size_npd",
            CrashCase::AsizeOverflow => "asize_overflow",
            CrashCase::RootIopNpd => "root_iop_npd",
            CrashCase::NamelenOobWrite => "namelen_oob_write",
            CrashCase::IndexUsedOobRead => "index_used_oob_read",
        }
    }

    pub fn commit(self) -> &'static str {
        self.hardened_check()
            .commit()
            .expect("every case maps to a tagged check")
    }

    pub fn expected_crash(self) -> (CrashClass, Site) {
        match self {
            CrashCase::RecSizeNpd => (CrashClass::Npd, Site::FillSuperShift),
            CrashCase::AsizeOverflow => (CrashClass::OobRead, Site::EnumAttrOverflow),
            CrashCase::RootIopNpd => (CrashClass::Npd, Site::RootIop),
            CrashCase::NamelenOobWrite => (CrashClass::OobWrite, Site::AttrListCopy),
            CrashCase::IndexUsedOobRead => (CrashClass::OobRead, Site::HdrFindE),
        }
    }

    /// The pristine spec the case corrupts.
    pub fn spec(self) -> ForgeSpec {
        match self {
            CrashCase::NamelenOobWrite => ForgeSpec::trigger_fixture(),
            _ => ForgeSpec::default(),
        }
    }

    pub fn hardened_check(self) -> Check {
        self.expected_crash().1.guard()
    }

    /// Type II cases only crash once a program runs against the mount.
    pub fn needs_program(self) -> bool {
        matches!(
            self,
            CrashCase::NamelenOobWrite | CrashCase::IndexUsedOobRead
        )
    }
}

impl fmt::Display for CrashCase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CrashCase {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| format!("unknown case `{s}`"))
    }
}

/// Runs `f` over record `number` with its fixups undone, then re-protects it.
fn edit_record(
    img: &mut [u8],
    layout: &Layout,
    record_size: u32,
    number: u64,
    f: impl FnOnce(&FileRecord, &mut [u8]),
) {
    let at = layout.record_offset(record_size, number) as usize;
    let bytes = &mut img[at..at + record_size as usize];
    let usn = usa::usn(bytes).expect("forged record");
    let rec = FileRecord::decode(bytes, record_size as usize, true).expect("forged record");
    usa::restore(bytes).expect("forged record");
    f(&rec, bytes);
    usa::protect(bytes, usn).expect("forged record");
}

/// Builds the reproducer image and program for `case`.
pub fn craft_case(case: CrashCase) -> (Vec<u8>, OpProgram) {
    let spec = case.spec();
    let rs = spec.record_size;
    let (mut img, layout) = build_image_with_layout(&spec).expect("default geometry forges");
    let mut program = OpProgram::default();
    match case {
        CrashCase::RecSizeNpd => {
            // 1 << 8: a 256-byte record
            img[OFF_RECORD_SIZE] = (-8i8) as u8;
        }
        CrashCase::AsizeOverflow => {
            edit_record(&mut img, &layout, rs, MFT_REC_MFT, |rec, raw| {
                let off = rec.attrs_offset as u32;
                // off + asize wraps to 0x08, passing a 32-bit `> used` test
                put_u32(raw, off as usize + 4, 0x08u32.wrapping_sub(off));
            });
        }
        CrashCase::RootIopNpd => {
            edit_record(&mut img, &layout, rs, MFT_REC_ROOT, |rec, raw| {
                let root = rec
                    .find(AttrType::INDEX_ROOT)
                    .expect("root has an index root");
                put_u32(raw, root.offset as usize, AttrType::DATA.0);
            });
        }
        CrashCase::NamelenOobWrite => {
            edit_record(&mut img, &layout, rs, MFT_REC_FREE, |rec, raw| {
                for t in [AttrType::STANDARD_INFORMATION, AttrType::DATA] {
                    let attr = rec.find(t).expect("file has SI and DATA");
                    let at = attr.offset as usize;
                    raw[at + 9] = 255;
                    put_u16(raw, at + 0x0A, 0x18);
                }
            });
            program = attr_list_trigger();
        }
        CrashCase::IndexUsedOobRead => {
            let at = layout.root_indx_offset as usize;
            let ibs = spec.index_block_size as usize;
            let block = &mut img[at..at + ibs];
            let usn = usa::usn(block).expect("forged block");
            usa::restore(block).expect("forged block");
            let used_at = INDX_HDR_OFFSET + 4;
            debug_assert!(get_u32(block, used_at) < ibs as u32);
            put_u32(block, used_at, ibs as u32);
            usa::protect(block, usn).expect("forged block");
            program.ops.push(FileOp::Open {
                path: "/a".into(),
                flags: OpenFlags::RDWR,
                slot: 0,
            });
        }
    }
    (img, program)
}

/// The case as a fuzzing seed: the pristine image it was cut from, and a
/// corpus extracted from that image whose metadata carries the corruption.
pub fn case_seed(case: CrashCase) -> (Vec<u8>, Corpus) {
    let base = super::build_image(&case.spec()).expect("default geometry forges");
    let (crafted, program) = craft_case(case);
    let mut corpus = extract_corpus(&base).expect("pristine images extract");
    corpus.metadata = corpus
        .gather_blob(&crafted)
        .expect("crafted image has the pristine length");
    corpus.program = program;
    (base, corpus)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::checks::Mode;
    use crate::target::{run_case, Outcome};

    #[test]
    fn every_case_crashes_vulnerable_and_is_rejected_hardened() {
        for case in CrashCase::ALL {
            let (img, program) = craft_case(case);
            let (vuln, _) = run_case(&img, &program, Mode::Vulnerable);
            assert_eq!(
                vuln.crash_id(),
                Some(case.expected_crash()),
                "{case}: {vuln}"
            );
            let (hard, _) = run_case(&img, &program, Mode::Hardened);
            assert_eq!(hard.check(), Some(case.hardened_check()), "{case}: {hard}");
        }
    }

    #[test]
    fn case_seeds_assemble_to_the_crafted_image() {
        for case in CrashCase::ALL {
            let (base, corpus) = case_seed(case);
            let (crafted, program) = craft_case(case);
            assert_eq!(
                crate::corpus::assemble_image(&base, &corpus).unwrap(),
                crafted,
                "{case}"
            );
            assert_eq!(corpus.program, program);
        }
    }

    #[test]
    fn pristine_images_run_clean() {
        for spec in [ForgeSpec::default(), ForgeSpec::trigger_fixture()] {
            let img = super::super::build_image(&spec).unwrap();
            for mode in [Mode::Hardened, Mode::Vulnerable] {
                let (out, _) = run_case(&img, &attr_list_trigger(), mode);
                if spec == ForgeSpec::default() {
                    assert!(!out.is_crash(), "{out}");
                } else {
                    assert_eq!(out, Outcome::Ok);
                }
            }
        }
    }

    #[test]
    fn type_one_cases_fail_at_mount() {
        for case in CrashCase::ALL.into_iter().filter(|c| !c.needs_program()) {
            let (img, _) = craft_case(case);
            let e = crate::target::execute(
                &img,
                &[],
                &crate::target::TargetConfig::new(Mode::Vulnerable),
            );
            assert!(!e.mounted, "{case}");
        }
    }
}

#[cfg(test)]
mod trigger_tests {
    use super::*;
    use crate::checks::Mode;
    use crate::target::{execute, TargetConfig};

    #[test]
    fn attr_list_crash_lands_on_the_second_setxattr() {
        let (img, program) = craft_case(CrashCase::NamelenOobWrite);
        let e = execute(&img, &program.ops, &TargetConfig::new(Mode::Vulnerable));
        let setxattrs: Vec<usize> = program
            .ops
            .iter()
            .enumerate()
            .filter(|(_, op)| matches!(op, FileOp::Setxattr { .. }))
            .map(|(i, _)| i)
            .collect();
        assert_eq!(e.results.len(), setxattrs[1], "{:?}", e.results);
        assert_eq!(e.results[setxattrs[0]], Ok(0));
        assert!(e.outcome.is_crash());
    }
}
