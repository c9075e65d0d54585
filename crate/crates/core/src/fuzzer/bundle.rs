//! Finding bundles: one directory per crash id, holding everything needed
//! to replay the crash against its base image.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::checks::{CrashClass, Mode, Site};
use crate::corpus::{assemble_image, Corpus};
use crate::mutator::MutationLog;
use crate::program::{parse_program, serialize_program};
use crate::target::{execute, Outcome, TargetConfig};

pub const CORPUS_FILE: &str = "corpus.ppra";
pub const LOG_FILE: &str = "mutations.log";
pub const PROGRAM_FILE: &str = "program.txt";
pub const OUTCOME_FILE: &str = "outcome.txt";

#[derive(Debug, Error)]
pub enum ReproError {
    #[error("bundle {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("bundle is malformed: {0}")]
    Format(String),
    #[error("reproduction mismatch: {0}")]
    Mismatch(String),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> ReproError + '_ {
    move |source| ReproError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn blob_digest(blob: &[u8]) -> String {
    hex::encode(Sha256::digest(blob))
}

/// A deduplicated crash and the input that produced it first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Finding {
    pub class: CrashClass,
    pub site: Site,
    pub detail: String,
    /// Mutated metadata, program and status.
    pub corpus: Corpus,
    /// Steps from the base image's own metadata to `corpus.metadata`.
    pub log: MutationLog,
    /// Iteration that produced it; 0 for a seed's dry run.
    pub first_seen: u64,
    pub base_image: PathBuf,
    pub mode: Mode,
    pub max_record_bytes: u32,
}

impl Finding {
    pub fn id(&self) -> (CrashClass, Site) {
        (self.class, self.site)
    }

    pub fn dir_name(&self) -> String {
        format!("{}-{}", self.class, self.site)
    }

    pub fn repro_command(&self, bundle: &Path) -> String {
        format!("ntfuzz repro --bundle {}", bundle.display())
    }

    fn outcome_text(&self, bundle: &Path) -> String {
        let pairs = [
            ("class", self.class.to_string()),
            ("site", self.site.to_string()),
            ("mode", self.mode.to_string()),
            ("base_image", self.base_image.display().to_string()),
            ("max_mft_bytes", self.max_record_bytes.to_string()),
            ("blob_sha256", blob_digest(&self.corpus.metadata)),
            ("first_seen", self.first_seen.to_string()),
            ("detail", self.detail.replace('\n', " ")),
            ("repro", self.repro_command(bundle)),
        ];
        pairs.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    /// Writes the bundle under `findings_dir` and returns its path.
    pub fn persist(&self, findings_dir: &Path) -> io::Result<PathBuf> {
        let dir = findings_dir.join(self.dir_name());
        fs::create_dir_all(&dir)?;
        fs::write(dir.join(CORPUS_FILE), self.corpus.to_bytes())?;
        fs::write(dir.join(LOG_FILE), self.log.to_text())?;
        fs::write(
            dir.join(PROGRAM_FILE),
            serialize_program(&self.corpus.program),
        )?;
        fs::write(dir.join(OUTCOME_FILE), self.outcome_text(&dir))?;
        Ok(dir)
    }
}

fn parse_kv(text: &str) -> BTreeMap<&str, &str> {
    text.lines()
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.trim(), v.trim()))
        .collect()
}

/// A bundle read back from disk.
#[derive(Debug, Clone)]
pub struct Bundle {
    pub finding: Finding,
    pub blob_sha256: String,
}

impl Bundle {
    pub fn load(dir: &Path) -> Result<Self, ReproError> {
        let read = |name: &str| {
            let p = dir.join(name);
            fs::read(&p).map_err(io_err(&p))
        };
        let text = |name: &str| {
            String::from_utf8(read(name)?)
                .map_err(|_| ReproError::Format(format!("{name} is not UTF-8")))
        };
        let outcome = text(OUTCOME_FILE)?;
        let kv = parse_kv(&outcome);
        let get = |k: &str| {
            kv.get(k)
                .copied()
                .ok_or_else(|| ReproError::Format(format!("{OUTCOME_FILE} lacks `{k}`")))
        };
        let fmt = |e: String| ReproError::Format(e);
        let mut corpus = Corpus::from_bytes(&read(CORPUS_FILE)?).map_err(|e| fmt(e.to_string()))?;
        let program = parse_program(&text(PROGRAM_FILE)?).map_err(|e| fmt(e.to_string()))?;
        if program != corpus.program {
            return Err(ReproError::Mismatch(format!(
                "{PROGRAM_FILE} differs from the program in {CORPUS_FILE}"
            )));
        }
        corpus.program = program;
        let log = MutationLog::from_text(&text(LOG_FILE)?).map_err(|e| fmt(e.to_string()))?;
        let finding = Finding {
            class: get("class")?.parse().map_err(fmt)?,
            site: get("site")?.parse().map_err(fmt)?,
            detail: kv.get("detail").unwrap_or(&"").to_string(),
            corpus,
            log,
            first_seen: get("first_seen")?
                .parse()
                .map_err(|_| fmt("bad first_seen".into()))?,
            base_image: PathBuf::from(get("base_image")?),
            mode: get("mode")?.parse().map_err(fmt)?,
            max_record_bytes: get("max_mft_bytes")?
                .parse()
                .map_err(|_| fmt("bad max_mft_bytes".into()))?,
        };
        Ok(Self {
            finding,
            blob_sha256: get("blob_sha256")?.to_string(),
        })
    }
}

/// Replays a bundle: the mutation log over the base image's metadata, then
/// the program, in the recorded mode. The resulting crash id must match.
pub fn reproduce(dir: &Path) -> Result<Outcome, ReproError> {
    let Bundle {
        finding,
        blob_sha256,
    } = Bundle::load(dir)?;
    let base = fs::read(&finding.base_image).map_err(io_err(&finding.base_image))?;
    let original = finding
        .corpus
        .gather_blob(&base)
        .map_err(|e| ReproError::Format(e.to_string()))?;
    let blob = finding
        .log
        .replay(&original)
        .map_err(|e| ReproError::Mismatch(e.to_string()))?;
    if blob != finding.corpus.metadata || blob_digest(&blob) != blob_sha256 {
        return Err(ReproError::Mismatch(
            "mutation log does not rebuild the recorded metadata".into(),
        ));
    }
    let image =
        assemble_image(&base, &finding.corpus).map_err(|e| ReproError::Format(e.to_string()))?;
    let cfg = TargetConfig {
        mode: finding.mode,
        max_record_bytes: finding.max_record_bytes,
    };
    let outcome = execute(&image, &finding.corpus.program.ops, &cfg).outcome;
    match outcome.crash_id() {
        Some(id) if id == finding.id() => Ok(outcome),
        _ => Err(ReproError::Mismatch(format!(
            "expected {}/{}, got {outcome}",
            finding.class, finding.site
        ))),
    }
}
