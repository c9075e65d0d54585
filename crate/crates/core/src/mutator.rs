//! Metadata blob mutation: bit flips, interesting values, small arithmetic
//! and chunk overwrites, all drawn from a seeded generator and logged so a
//! round can be replayed byte for byte.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Largest delta the arithmetic strategy adds or subtracts.
pub const ARITH_MAX: u64 = 35;
pub const DEFAULT_MAX_CHUNK: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Strategy {
    Flip,
    Interesting,
    Arith,
    Overwrite,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [
        Strategy::Flip,
        Strategy::Interesting,
        Strategy::Arith,
        Strategy::Overwrite,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Flip => "flip",
            Strategy::Interesting => "interesting",
            Strategy::Arith => "arith",
            Strategy::Overwrite => "overwrite",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown strategy `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MutationError {
    #[error("strategy weights must include a positive weight")]
    Weights,
    #[error("max_mutations_per_round must be at least 1")]
    Rounds,
    #[error("log line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("step {index} touches {offset}+{width} in a {len}-byte blob")]
    Range {
        index: usize,
        offset: usize,
        width: usize,
        len: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MutationConfig {
    pub max_mutations_per_round: u32,
    pub strategy_weights: BTreeMap<Strategy, u32>,
    pub tokens: Vec<Vec<u8>>,
    pub rng_seed: u64,
    /// Longest range one overwrite replaces.
    pub max_chunk: usize,
}

impl Default for MutationConfig {
    fn default() -> Self {
        Self {
            max_mutations_per_round: 4,
            strategy_weights: Strategy::ALL.into_iter().map(|s| (s, 1)).collect(),
            tokens: Vec::new(),
            rng_seed: 0,
            max_chunk: DEFAULT_MAX_CHUNK,
        }
    }
}

impl MutationConfig {
    pub fn with_seed(rng_seed: u64) -> Self {
        Self {
            rng_seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), MutationError> {
        if self.max_mutations_per_round == 0 {
            return Err(MutationError::Rounds);
        }
        if !self.strategy_weights.values().any(|&w| w > 0) {
            return Err(MutationError::Weights);
        }
        Ok(())
    }
}

/// One applied mutation. `operand` is the XOR mask for a flip and the bytes
/// written for every other strategy.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MutationStep {
    pub strategy: Strategy,
    pub offset: usize,
    pub width: usize,
    pub operand: Vec<u8>,
}

impl MutationStep {
    fn apply(&self, blob: &mut [u8]) {
        let dst = &mut blob[self.offset..self.offset + self.width];
        match self.strategy {
            Strategy::Flip => dst.iter_mut().zip(&self.operand).for_each(|(b, m)| *b ^= m),
            _ => dst.copy_from_slice(&self.operand),
        }
    }
}

impl fmt::Display for MutationStep {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {} {} {}",
            self.strategy,
            self.offset,
            self.width,
            hex::encode(&self.operand)
        )
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MutationLog {
    pub steps: Vec<MutationStep>,
}

impl MutationLog {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn extend(&mut self, other: MutationLog) {
        self.steps.extend(other.steps);
    }

    /// `strategy offset width operand_hex`, one step per line.
    pub fn to_text(&self) -> String {
        self.steps.iter().map(|s| format!("{s}\n")).collect()
    }

    pub fn from_text(text: &str) -> Result<Self, MutationError> {
        let mut steps = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |msg: String| MutationError::Parse { line: i + 1, msg };
            let words: Vec<&str> = line.split_whitespace().collect();
            let [strategy, offset, width, operand] = words[..] else {
                return Err(err(format!("expected 4 fields, got {}", words.len())));
            };
            let strategy = strategy.parse().map_err(err)?;
            let offset = offset
                .parse()
                .map_err(|_| err(format!("bad offset `{offset}`")))?;
            let width: usize = width
                .parse()
                .map_err(|_| err(format!("bad width `{width}`")))?;
            let operand = hex::decode(operand).map_err(|e| err(format!("operand: {e}")))?;
            if operand.len() != width || width == 0 {
                return Err(err(format!(
                    "operand of {} bytes for width {width}",
                    operand.len()
                )));
            }
            steps.push(MutationStep {
                strategy,
                offset,
                width,
                operand,
            });
        }
        Ok(Self { steps })
    }

    /// Applies the steps to `blob` in order.
    pub fn replay_into(&self, blob: &mut [u8]) -> Result<(), MutationError> {
        for (index, s) in self.steps.iter().enumerate() {
            if s.offset
                .checked_add(s.width)
                .is_none_or(|end| end > blob.len())
            {
                return Err(MutationError::Range {
                    index,
                    offset: s.offset,
                    width: s.width,
                    len: blob.len(),
                });
            }
            s.apply(blob);
        }
        Ok(())
    }

    pub fn replay(&self, blob: &[u8]) -> Result<Vec<u8>, MutationError> {
        let mut out = blob.to_vec();
        self.replay_into(&mut out)?;
        Ok(out)
    }
}

/// Overwrite steps turning `from` into `to`, one per differing run.
/// Both blobs must have the same length.
pub fn diff_log(from: &[u8], to: &[u8]) -> MutationLog {
    assert_eq!(from.len(), to.len(), "diff_log needs equal lengths");
    let mut steps = Vec::new();
    let mut i = 0;
    while i < to.len() {
        if from[i] == to[i] {
            i += 1;
            continue;
        }
        let start = i;
        while i < to.len() && from[i] != to[i] {
            i += 1;
        }
        steps.push(MutationStep {
            strategy: Strategy::Overwrite,
            offset: start,
            width: i - start,
            operand: to[start..i].to_vec(),
        });
    }
    MutationLog { steps }
}

/// Interesting values of a `width`-byte integer: 0, ±1, the signed and
/// unsigned extremes, and every power of two.
pub fn interesting_values(width: usize) -> Vec<u64> {
    let bits = 8 * width as u32;
    let mask = if bits == 64 {
        u64::MAX
    } else {
        (1u64 << bits) - 1
    };
    let mut v = vec![0, 1, mask, mask >> 1, 1 << (bits - 1)];
    v.extend((1..bits).map(|k| 1u64 << k));
    v.sort_unstable();
    v.dedup();
    v
}

fn to_bytes(value: u64, width: usize, big_endian: bool) -> Vec<u8> {
    let le = value.to_le_bytes();
    let mut out = le[..width].to_vec();
    if big_endian {
        out.reverse();
    }
    out
}

fn from_bytes(bytes: &[u8], big_endian: bool) -> u64 {
    let mut buf = [0u8; 8];
    if big_endian {
        bytes
            .iter()
            .rev()
            .enumerate()
            .for_each(|(i, b)| buf[i] = *b);
    } else {
        buf[..bytes.len()].copy_from_slice(bytes);
    }
    u64::from_le_bytes(buf)
}

fn pick_width<R: Rng>(rng: &mut R, len: usize) -> usize {
    let fits: Vec<usize> = [1, 2, 4].into_iter().filter(|&w| w <= len).collect();
    fits[rng.gen_range(0..fits.len())]
}

fn draw<R: Rng>(
    strategy: Strategy,
    blob: &[u8],
    cfg: &MutationConfig,
    rng: &mut R,
) -> MutationStep {
    let len = blob.len();
    match strategy {
        Strategy::Flip => {
            let bit = rng.gen_range(0..len * 8);
            MutationStep {
                strategy,
                offset: bit / 8,
                width: 1,
                operand: vec![1 << (bit % 8)],
            }
        }
        Strategy::Interesting => {
            let width = pick_width(rng, len);
            let values = interesting_values(width);
            let value = values[rng.gen_range(0..values.len())];
            MutationStep {
                strategy,
                offset: rng.gen_range(0..=len - width),
                width,
                operand: to_bytes(value, width, rng.gen_bool(0.5)),
            }
        }
        Strategy::Arith => {
            let width = pick_width(rng, len);
            let offset = rng.gen_range(0..=len - width);
            let big = rng.gen_bool(0.5);
            let delta = rng.gen_range(1..=ARITH_MAX);
            let cur = from_bytes(&blob[offset..offset + width], big);
            let next = if rng.gen_bool(0.5) {
                cur.wrapping_add(delta)
            } else {
                cur.wrapping_sub(delta)
            };
            MutationStep {
                strategy,
                offset,
                width,
                operand: to_bytes(next, width, big),
            }
        }
        Strategy::Overwrite => {
            let offset = rng.gen_range(0..len);
            let room = len - offset;
            let kinds = if cfg.tokens.is_empty() { 2 } else { 3 };
            let operand = match rng.gen_range(0..kinds) {
                0 => {
                    let width = rng.gen_range(1..=cfg.max_chunk.max(1)).min(room);
                    let src = rng.gen_range(0..=len - width);
                    blob[src..src + width].to_vec()
                }
                1 => {
                    let width = rng.gen_range(1..=cfg.max_chunk.max(1)).min(room);
                    vec![rng.gen::<u8>(); width]
                }
                _ => {
                    let token = &cfg.tokens[rng.gen_range(0..cfg.tokens.len())];
                    let mut t: Vec<u8> = token.iter().copied().take(room).collect();
                    if t.is_empty() {
                        t.push(0);
                    }
                    t
                }
            };
            MutationStep {
                strategy,
                offset,
                width: operand.len(),
                operand,
            }
        }
    }
}

/// One round over `blob` in place, drawing from `rng`.
pub fn mutate_in_place<R: Rng>(
    blob: &mut [u8],
    cfg: &MutationConfig,
    rng: &mut R,
) -> Result<MutationLog, MutationError> {
    cfg.validate()?;
    let mut log = MutationLog::default();
    if blob.is_empty() {
        return Ok(log);
    }
    let strategies: Vec<Strategy> = cfg.strategy_weights.keys().copied().collect();
    let weights = WeightedIndex::new(cfg.strategy_weights.values().copied())
        .map_err(|_| MutationError::Weights)?;
    let rounds = rng.gen_range(1..=cfg.max_mutations_per_round);
    for _ in 0..rounds {
        let strategy = strategies[weights.sample(rng)];
        let step = draw(strategy, blob, cfg, rng);
        step.apply(blob);
        log.steps.push(step);
    }
    Ok(log)
}

/// One round seeded from `cfg.rng_seed`.
pub fn mutate_blob(
    blob: &[u8],
    cfg: &MutationConfig,
) -> Result<(Vec<u8>, MutationLog), MutationError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut out = blob.to_vec();
    let log = mutate_in_place(&mut out, cfg, &mut rng)?;
    Ok((out, log))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn byte_interesting_values() {
        let v = interesting_values(1);
        for x in [0x00, 0x01, 0xFF, 0x80, 0x7F, 0x02, 0x40] {
            assert!(v.contains(&x), "{x:#x}");
        }
        assert!(v.iter().all(|&x| x <= 0xFF));
        let d = interesting_values(4);
        assert!(d.contains(&0xFFFF_FFFF) && d.contains(&0x8000_0000) && d.contains(&0x7FFF_FFFF));
    }

    #[test]
    fn endian_round_trip() {
        assert_eq!(to_bytes(0x1234, 2, true), [0x12, 0x34]);
        assert_eq!(to_bytes(0x1234, 2, false), [0x34, 0x12]);
        assert_eq!(from_bytes(&[0x12, 0x34], true), 0x1234);
    }

    #[test]
    fn same_seed_same_round() {
        let blob: Vec<u8> = (0..300).map(|i| i as u8).collect();
        let cfg = MutationConfig::with_seed(9);
        assert_eq!(
            mutate_blob(&blob, &cfg).unwrap(),
            mutate_blob(&blob, &cfg).unwrap()
        );
    }

    #[test]
    fn log_text_round_trip() {
        let blob = vec![0u8; 128];
        let cfg = MutationConfig {
            max_mutations_per_round: 16,
            tokens: vec![b"NTFS".to_vec()],
            ..MutationConfig::with_seed(3)
        };
        let (out, log) = mutate_blob(&blob, &cfg).unwrap();
        let parsed = MutationLog::from_text(&log.to_text()).unwrap();
        assert_eq!(parsed, log);
        assert_eq!(parsed.replay(&blob).unwrap(), out);
    }

    #[test]
    fn zero_weights_rejected() {
        let cfg = MutationConfig {
            strategy_weights: Strategy::ALL.into_iter().map(|s| (s, 0)).collect(),
            ..MutationConfig::default()
        };
        assert_eq!(
            mutate_blob(&[1, 2, 3], &cfg).unwrap_err(),
            MutationError::Weights
        );
    }

    #[test]
    fn diff_log_replays_to_target() {
        let a = vec![0u8; 64];
        let mut b = a.clone();
        b[3] = 1;
        b[10..14].copy_from_slice(&[9, 9, 9, 9]);
        let log = diff_log(&a, &b);
        assert_eq!(log.len(), 2);
        assert_eq!(log.replay(&a).unwrap(), b);
        assert!(diff_log(&a, &a).is_empty());
    }

    #[test]
    fn out_of_range_replay_fails() {
        let log = MutationLog::from_text("flip 10 1 01\n").unwrap();
        assert!(log.replay(&[0u8; 4]).is_err());
    }
}
