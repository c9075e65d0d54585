mod common;

use std::fs;
use std::path::Path;

use ntfuzz::checks::{CrashClass, Mode, Site};
use ntfuzz::forge::CrashCase;
use ntfuzz::fuzzer::{
    list_bundles, reproduce, run_campaign, Bundle, CampaignConfig, FuzzError, ReproError, LOG_FILE,
    OUTCOME_FILE, PROGRAM_FILE,
};
use ntfuzz::mutator::MutationConfig;
use ntfuzz::program::FileOp;
use tempfile::TempDir;

use common::{write_case_seeds, write_clean_seed};

fn campaign(seeds: &Path, findings: &Path, mode: Mode, iters: u64) -> CampaignConfig {
    let mut cfg = CampaignConfig::new(seeds, findings, mode);
    cfg.iterations = iters;
    cfg.mutation = MutationConfig::with_seed(1);
    cfg
}

fn case_campaign() -> (TempDir, TempDir) {
    let seeds = TempDir::new().unwrap();
    let findings = TempDir::new().unwrap();
    write_case_seeds(seeds.path());
    let report = run_campaign(&campaign(
        seeds.path(),
        findings.path(),
        Mode::Vulnerable,
        0,
    ))
    .unwrap();
    assert_eq!(report.findings.len(), 5);
    (seeds, findings)
}

#[test]
fn crafted_seeds_without_mutation_give_five_findings() {
    let (_seeds, findings) = case_campaign();
    let mut ids: Vec<(CrashClass, Site)> = list_bundles(findings.path())
        .unwrap()
        .iter()
        .map(|b| Bundle::load(b).unwrap().finding.id())
        .collect();
    ids.sort();
    let mut want: Vec<(CrashClass, Site)> =
        CrashCase::ALL.iter().map(|c| c.expected_crash()).collect();
    want.sort();
    assert_eq!(ids, want);
    for b in list_bundles(findings.path()).unwrap() {
        let f = Bundle::load(&b).unwrap().finding;
        assert_eq!(f.first_seen, 0);
        assert_eq!(reproduce(&b).unwrap().crash_id(), Some(f.id()));
    }
}

#[test]
fn attr_list_bundle_reproduces_through_setxattr() {
    let (_seeds, findings) = case_campaign();
    let dir = findings.path().join("OOB_Write-attr_list_copy");
    let program = fs::read_to_string(dir.join(PROGRAM_FILE)).unwrap();
    assert!(program.contains("setxattr("));
    let f = Bundle::load(&dir).unwrap().finding;
    assert!(f
        .corpus
        .program
        .ops
        .iter()
        .any(|op| matches!(op, FileOp::Setxattr { .. })));
    let out = reproduce(&dir).unwrap();
    assert_eq!(
        out.crash_id(),
        Some((CrashClass::OobWrite, Site::AttrListCopy))
    );
    let outcome = fs::read_to_string(dir.join(OUTCOME_FILE)).unwrap();
    assert!(outcome.contains("repro=ntfuzz repro --bundle "));
}

#[test]
fn tampered_log_is_a_mismatch() {
    let (_seeds, findings) = case_campaign();
    let dir = findings.path().join("OOB_Read-hdr_find_e");
    let log = fs::read_to_string(dir.join(LOG_FILE)).unwrap();
    assert!(!log.is_empty(), "crafted seeds carry a delta log");
    let line = log.lines().next().unwrap();
    let mut words: Vec<&str> = line.split(' ').collect();
    let flipped = if words[3].starts_with('0') { "f" } else { "0" }.to_string() + &words[3][1..];
    words[3] = &flipped;
    let tampered = log.replacen(line, &words.join(" "), 1);
    fs::write(dir.join(LOG_FILE), tampered).unwrap();
    assert!(matches!(reproduce(&dir), Err(ReproError::Mismatch(_))));
}

#[test]
fn hardened_campaign_finds_nothing() {
    let seeds = TempDir::new().unwrap();
    let findings = TempDir::new().unwrap();
    write_case_seeds(seeds.path());
    write_clean_seed(seeds.path());
    let mut cfg = campaign(seeds.path(), findings.path(), Mode::Hardened, 3000);
    cfg.workers = 2;
    let report = run_campaign(&cfg).unwrap();
    assert!(report.findings.is_empty());
    assert_eq!(report.harness_faults, 0);
    assert!(list_bundles(findings.path()).unwrap().is_empty());
}

#[test]
fn report_matches_bundles_and_queue_grows_only_on_novelty() {
    let seeds = TempDir::new().unwrap();
    let findings = TempDir::new().unwrap();
    write_clean_seed(seeds.path());
    let report = run_campaign(&campaign(
        seeds.path(),
        findings.path(),
        Mode::Vulnerable,
        5000,
    ))
    .unwrap();
    let bundles = list_bundles(findings.path()).unwrap();
    assert_eq!(report.findings.len(), bundles.len());
    let mut ids: Vec<_> = report.findings.iter().map(|f| (f.class, f.site)).collect();
    ids.dedup();
    assert_eq!(ids.len(), report.findings.len());
    // one seed plus one entry per addition after the dry run
    let later = report.additions.iter().filter(|(i, _)| *i > 0).count();
    assert_eq!(report.queue_len, 1 + later);
    assert!(report.additions.iter().all(|&(_, n)| n > 0));
    assert!(report.additions.windows(2).all(|w| w[0].0 < w[1].0));
    let kv = report.to_kv();
    assert!(kv.contains(&format!("findings={}\n", bundles.len())));
    assert_eq!(report.executions, 5001);
}

#[test]
fn single_worker_campaigns_are_deterministic() {
    let seeds = TempDir::new().unwrap();
    write_clean_seed(seeds.path());
    let run = || {
        let findings = TempDir::new().unwrap();
        let r = run_campaign(&campaign(
            seeds.path(),
            findings.path(),
            Mode::Vulnerable,
            3000,
        ))
        .unwrap();
        let ids: Vec<_> = r
            .findings
            .iter()
            .map(|f| (f.class, f.site, f.first_seen))
            .collect();
        (ids, r.coverage, r.additions)
    };
    assert_eq!(run(), run());
}

#[test]
fn orphan_corpus_is_a_startup_error() {
    let seeds = TempDir::new().unwrap();
    let findings = TempDir::new().unwrap();
    write_clean_seed(seeds.path());
    fs::write(seeds.path().join("lost.ppra"), b"PPRA").unwrap();
    let err = run_campaign(&campaign(
        seeds.path(),
        findings.path(),
        Mode::Vulnerable,
        1,
    ))
    .unwrap_err();
    assert!(matches!(err, FuzzError::Seed(_)));
    let empty = TempDir::new().unwrap();
    assert!(run_campaign(&campaign(
        empty.path(),
        findings.path(),
        Mode::Vulnerable,
        1
    ))
    .is_err());
}

#[test]
fn bad_config_is_rejected() {
    let mut cfg = CampaignConfig::new("/nonexistent", "/tmp/x", Mode::Vulnerable);
    cfg.workers = 0;
    assert!(matches!(run_campaign(&cfg), Err(FuzzError::Config(_))));
    cfg.workers = 1;
    cfg.program_ratio = 1.5;
    assert!(matches!(run_campaign(&cfg), Err(FuzzError::Config(_))));
}
