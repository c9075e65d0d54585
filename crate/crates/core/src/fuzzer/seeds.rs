//! Seed directories: `NAME.img` base images, each with an optional
//! `NAME.ppra` corpus. Without one, the corpus is extracted from the image.

use std::fs;
use std::path::{Path, PathBuf};

use super::FuzzError;
use crate::corpus::{extract_corpus, Corpus};
use crate::mutator::{diff_log, MutationLog};

pub const IMAGE_EXT: &str = "img";
pub const CORPUS_EXT: &str = "ppra";

#[derive(Debug, Clone)]
pub struct Seed {
    pub name: String,
    pub base_path: PathBuf,
    pub base: Vec<u8>,
    pub corpus: Corpus,
    /// Steps from the base image's metadata to `corpus.metadata`; empty for
    /// an extracted corpus.
    pub prefix: MutationLog,
}

fn seed_error(path: &Path, msg: impl std::fmt::Display) -> FuzzError {
    FuzzError::Seed(format!("{}: {msg}", path.display()))
}

pub fn load_seed(image_path: &Path) -> Result<Seed, FuzzError> {
    let base = fs::read(image_path).map_err(|e| seed_error(image_path, e))?;
    let corpus_path = image_path.with_extension(CORPUS_EXT);
    let corpus = if corpus_path.exists() {
        let bytes = fs::read(&corpus_path).map_err(|e| seed_error(&corpus_path, e))?;
        Corpus::from_bytes(&bytes).map_err(|e| seed_error(&corpus_path, e))?
    } else {
        extract_corpus(&base).map_err(|e| seed_error(image_path, e))?
    };
    let original = corpus
        .gather_blob(&base)
        .map_err(|e| seed_error(&corpus_path, e))?;
    let prefix = diff_log(&original, &corpus.metadata);
    let base_path = fs::canonicalize(image_path).map_err(|e| seed_error(image_path, e))?;
    let name = image_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(Seed {
        name,
        base_path,
        base,
        corpus,
        prefix,
    })
}

/// Every seed in `dir`, by file name.
pub fn load_seeds(dir: &Path) -> Result<Vec<Seed>, FuzzError> {
    let entries = fs::read_dir(dir).map_err(|e| seed_error(dir, e))?;
    let mut paths: Vec<PathBuf> = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| seed_error(dir, e))?.path();
        match path.extension().and_then(|e| e.to_str()) {
            Some(IMAGE_EXT) => paths.push(path),
            Some(CORPUS_EXT) if !path.with_extension(IMAGE_EXT).exists() => {
                return Err(seed_error(&path, "corpus without its base image"));
            }
            _ => {}
        }
    }
    paths.sort();
    if paths.is_empty() {
        return Err(seed_error(dir, "no .img seeds"));
    }
    paths.iter().map(|p| load_seed(p)).collect()
}
