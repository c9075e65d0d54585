//! The campaign loop: pick a queued corpus, mutate its metadata or its
//! program, assemble, run, keep inputs that reach new sites, and persist
//! every distinct crash as a replayable bundle.

mod bundle;
mod seeds;

use std::collections::{btree_map, BTreeMap, VecDeque};
use std::fmt;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::checks::{CrashClass, Mode, Site};
use crate::corpus::{Assembler, Corpus, FixupOptions};
use crate::mutator::{mutate_in_place, MutationConfig, MutationError, MutationLog};
use crate::program::{generate_op_with, mutate_program_with, GEN_MAX_OPS};
use crate::target::{execute, Coverage, Outcome, TargetConfig};

pub use bundle::{
    blob_digest, reproduce, Bundle, Finding, ReproError, CORPUS_FILE, LOG_FILE, OUTCOME_FILE,
    PROGRAM_FILE,
};
pub use seeds::{load_seed, load_seeds, Seed, CORPUS_EXT, IMAGE_EXT};

pub const DEFAULT_PROGRAM_RATIO: f64 = 0.2;
/// Iterations without new coverage after which program rounds append an
/// op instead of rewriting one.
pub const PLATEAU_ROUNDS: u64 = 10;
/// Extra picks a corpus earns when it reaches new coverage.
pub const NOVELTY_BOOST: u32 = 4;

#[derive(Debug, Error)]
pub enum FuzzError {
    #[error("seed {0}")]
    Seed(String),
    #[error("invalid campaign: {0}")]
    Config(String),
    #[error(transparent)]
    Mutation(#[from] MutationError),
    #[error("writing findings: {0}")]
    Persist(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CampaignConfig {
    pub seed_dir: PathBuf,
    pub findings_dir: PathBuf,
    pub mode: Mode,
    pub iterations: u64,
    /// Stops early once this much wall time has passed.
    pub time_budget: Option<Duration>,
    pub workers: usize,
    pub mutation: MutationConfig,
    pub program_ratio: f64,
    pub max_record_bytes: u32,
}

impl CampaignConfig {
    pub fn new(seed_dir: impl Into<PathBuf>, findings_dir: impl Into<PathBuf>, mode: Mode) -> Self {
        Self {
            seed_dir: seed_dir.into(),
            findings_dir: findings_dir.into(),
            mode,
            iterations: 1000,
            time_budget: None,
            workers: 1,
            mutation: MutationConfig::default(),
            program_ratio: DEFAULT_PROGRAM_RATIO,
            max_record_bytes: TargetConfig::new(mode).max_record_bytes,
        }
    }

    pub fn validate(&self) -> Result<(), FuzzError> {
        if self.workers == 0 {
            return Err(FuzzError::Config("workers must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.program_ratio) {
            return Err(FuzzError::Config(format!(
                "program_ratio {} outside [0, 1]",
                self.program_ratio
            )));
        }
        self.mutation.validate()?;
        Ok(())
    }

    fn target(&self) -> TargetConfig {
        TargetConfig {
            mode: self.mode,
            max_record_bytes: self.max_record_bytes,
        }
    }
}

/// A finding as reported, with its bundle location.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FindingSummary {
    pub class: CrashClass,
    pub site: Site,
    pub first_seen: u64,
    pub bundle: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CampaignReport {
    pub mode: Mode,
    pub executions: u64,
    pub elapsed: Duration,
    pub findings: Vec<FindingSummary>,
    pub coverage: usize,
    pub queue_len: usize,
    /// (iteration, sites added) for every queue addition.
    pub additions: Vec<(u64, usize)>,
    /// Panics inside the harness; always 0 unless the toolkit has a bug.
    pub harness_faults: u64,
}

impl CampaignReport {
    pub fn exec_per_sec(&self) -> f64 {
        let secs = self.elapsed.as_secs_f64();
        if secs > 0.0 {
            self.executions as f64 / secs
        } else {
            0.0
        }
    }

    /// `key=value` lines, one finding per `finding=` line.
    pub fn to_kv(&self) -> String {
        let mut out = format!(
            "mode={}\nexecutions={}\nelapsed_ms={}\nexec_per_sec={:.1}\nfindings={}\ncoverage={}\nqueue={}\nqueue_additions={}\nharness_faults={}\n",
            self.mode,
            self.executions,
            self.elapsed.as_millis(),
            self.exec_per_sec(),
            self.findings.len(),
            self.coverage,
            self.queue_len,
            self.additions.len(),
            self.harness_faults,
        );
        for f in &self.findings {
            out += &format!(
                "finding={}-{} first_seen={} bundle={}\n",
                f.class,
                f.site,
                f.first_seen,
                f.bundle.display()
            );
        }
        out
    }
}

impl fmt::Display for CampaignReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{} executions in {:.2}s ({:.0}/s), mode {}",
            self.executions,
            self.elapsed.as_secs_f64(),
            self.exec_per_sec(),
            self.mode
        )?;
        writeln!(
            f,
            "coverage {} sites, queue {} ({} added)",
            self.coverage,
            self.queue_len,
            self.additions.len()
        )?;
        writeln!(f, "{} distinct findings", self.findings.len())?;
        for x in &self.findings {
            writeln!(
                f,
                "  {}/{} at iteration {}: {}",
                x.class,
                x.site,
                x.first_seen,
                x.bundle.display()
            )?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct Entry {
    seed: usize,
    corpus: Corpus,
    /// From the seed's base metadata to `corpus.metadata`.
    log: MutationLog,
}

struct State {
    queue: Vec<Entry>,
    favored: VecDeque<usize>,
    cursor: usize,
    coverage: Coverage,
    since_new: u64,
    additions: Vec<(u64, usize)>,
    findings: BTreeMap<(CrashClass, Site), FindingSummary>,
    faults: u64,
    error: Option<FuzzError>,
}

impl State {
    fn pick(&mut self) -> Entry {
        let idx = match self.favored.pop_front() {
            Some(i) => i,
            None => {
                let i = self.cursor % self.queue.len();
                self.cursor = i + 1;
                i
            }
        };
        self.queue[idx].clone()
    }

    fn favor(&mut self, idx: usize) {
        self.favored
            .extend(std::iter::repeat_n(idx, NOVELTY_BOOST as usize));
    }
}

struct Shared<'a> {
    cfg: &'a CampaignConfig,
    seeds: &'a [Seed],
    state: Mutex<State>,
    next: AtomicU64,
    deadline: Option<Instant>,
}

enum Run {
    Done(Outcome, Coverage),
    Fault,
}

fn run_guarded(image: &[u8], corpus: &Corpus, target: &TargetConfig) -> Run {
    let res = panic::catch_unwind(AssertUnwindSafe(|| {
        execute(image, &corpus.program.ops, target)
    }));
    match res {
        Ok(e) => Run::Done(e.outcome, e.coverage),
        Err(_) => Run::Fault,
    }
}

impl Shared<'_> {
    /// Folds one run into the shared state. Returns false once the campaign
    /// must stop.
    fn record(&self, iteration: u64, entry: Entry, run: Run) -> bool {
        let mut st = self.state.lock().expect("campaign state poisoned");
        let (outcome, cov) = match run {
            Run::Done(o, c) => (o, c),
            Run::Fault => {
                st.faults += 1;
                return st.error.is_none();
            }
        };
        let added = st.coverage.merge(&cov);
        if added > 0 {
            st.since_new = 0;
            st.additions.push((iteration, added));
            if iteration > 0 {
                st.queue.push(entry.clone());
                let idx = st.queue.len() - 1;
                st.favor(idx);
            }
        } else {
            st.since_new += 1;
        }
        if let Outcome::Crash {
            class,
            site,
            detail,
        } = outcome
        {
            if let btree_map::Entry::Vacant(slot) = st.findings.entry((class, site)) {
                let seed = &self.seeds[entry.seed];
                let finding = Finding {
                    class,
                    site,
                    detail,
                    corpus: entry.corpus,
                    log: entry.log,
                    first_seen: iteration,
                    base_image: seed.base_path.clone(),
                    mode: self.cfg.mode,
                    max_record_bytes: self.cfg.max_record_bytes,
                };
                match finding.persist(&self.cfg.findings_dir) {
                    Ok(bundle) => {
                        slot.insert(FindingSummary {
                            class,
                            site,
                            first_seen: iteration,
                            bundle,
                        });
                    }
                    Err(e) => st.error = Some(e.into()),
                }
            }
        }
        st.error.is_none()
    }

    fn worker(&self) {
        let target = self.cfg.target();
        let fixups = FixupOptions::default();
        let mut assemblers: Vec<Assembler<'_>> =
            self.seeds.iter().map(|s| Assembler::new(&s.base)).collect();
        loop {
            if self.deadline.is_some_and(|d| Instant::now() >= d) {
                return;
            }
            let i = self.next.fetch_add(1, Ordering::Relaxed) + 1;
            if i > self.cfg.iterations {
                return;
            }
            let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.mutation.rng_seed);
            rng.set_stream(i);
            let (mut entry, plateau) = {
                let mut st = self.state.lock().expect("campaign state poisoned");
                (st.pick(), st.since_new >= PLATEAU_ROUNDS)
            };
            if rng.gen_bool(self.cfg.program_ratio) {
                let c = &mut entry.corpus;
                c.program = if plateau && c.program.len() < GEN_MAX_OPS {
                    generate_op_with(&c.program, &c.status, &mut rng)
                } else {
                    mutate_program_with(&c.program, &c.status, &mut rng)
                };
            } else {
                match mutate_in_place(&mut entry.corpus.metadata, &self.cfg.mutation, &mut rng) {
                    Ok(log) => entry.log.extend(log),
                    Err(e) => {
                        self.fail(e.into());
                        return;
                    }
                }
            }
            let run = match assemblers[entry.seed].assemble(&entry.corpus, &fixups) {
                Ok(image) => run_guarded(image, &entry.corpus, &target),
                Err(_) => continue,
            };
            if !self.record(i, entry, run) {
                return;
            }
        }
    }

    fn fail(&self, e: FuzzError) {
        let mut st = self.state.lock().expect("campaign state poisoned");
        st.error.get_or_insert(e);
    }
}

/// Runs a campaign to its iteration or time budget.
///
/// Every seed runs once unmutated before the loop; crashes there are
/// findings with `first_seen` 0.
pub fn run_campaign(cfg: &CampaignConfig) -> Result<CampaignReport, FuzzError> {
    cfg.validate()?;
    let seeds = load_seeds(&cfg.seed_dir)?;
    std::fs::create_dir_all(&cfg.findings_dir)?;
    let start = Instant::now();
    let queue: Vec<Entry> = seeds
        .iter()
        .enumerate()
        .map(|(i, s)| Entry {
            seed: i,
            corpus: s.corpus.clone(),
            log: s.prefix.clone(),
        })
        .collect();
    let shared = Shared {
        cfg,
        seeds: &seeds,
        state: Mutex::new(State {
            queue: queue.clone(),
            favored: VecDeque::new(),
            cursor: 0,
            coverage: Coverage::default(),
            since_new: 0,
            additions: Vec::new(),
            findings: BTreeMap::new(),
            faults: 0,
            error: None,
        }),
        next: AtomicU64::new(0),
        deadline: cfg.time_budget.map(|b| start + b),
    };
    let target = cfg.target();
    let fixups = FixupOptions::default();
    for entry in queue {
        let seed = &seeds[entry.seed];
        let mut asm = Assembler::new(&seed.base);
        let run = match asm.assemble(&entry.corpus, &fixups) {
            Ok(image) => run_guarded(image, &entry.corpus, &target),
            Err(e) => return Err(FuzzError::Seed(format!("{}: {e}", seed.name))),
        };
        shared.record(0, entry, run);
    }
    thread::scope(|s| {
        for _ in 0..cfg.workers {
            s.spawn(|| shared.worker());
        }
    });
    let executions = seeds.len() as u64 + shared.next.load(Ordering::Relaxed).min(cfg.iterations);
    let st = shared.state.into_inner().expect("campaign state poisoned");
    if let Some(e) = st.error {
        return Err(e);
    }
    Ok(CampaignReport {
        mode: cfg.mode,
        executions,
        elapsed: start.elapsed(),
        findings: st.findings.into_values().collect(),
        coverage: st.coverage.len(),
        queue_len: st.queue.len(),
        additions: st.additions,
        harness_faults: st.faults,
    })
}

/// Loads the bundles under `findings_dir`, by directory name.
pub fn list_bundles(findings_dir: &Path) -> std::io::Result<Vec<PathBuf>> {
    let mut dirs = Vec::new();
    for entry in std::fs::read_dir(findings_dir)? {
        let p = entry?.path();
        if p.join(OUTCOME_FILE).is_file() {
            dirs.push(p);
        }
    }
    dirs.sort();
    Ok(dirs)
}
