use std::path::Path;

use super::{io_err, DataError, Result};

/// Length filter applied to training pairs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorpusFilter {
    /// Longest allowed side, in tokens.
    pub max_len: usize,
    /// Largest allowed ratio between the longer and the shorter side.
    pub max_ratio: f64,
}

impl Default for CorpusFilter {
    fn default() -> Self {
        Self {
            max_len: 60,
            max_ratio: 9.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawPair {
    pub source: Vec<String>,
    pub target: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct LoadedCorpus {
    pub pairs: Vec<RawPair>,
    pub dropped: usize,
}

/// Whether a pair with these token counts survives `filter`. The ratio is
/// checked in both directions; empty sides never survive.
pub fn keep_pair(source_len: usize, target_len: usize, filter: &CorpusFilter) -> bool {
    if source_len == 0 || target_len == 0 {
        return false;
    }
    if source_len > filter.max_len || target_len > filter.max_len {
        return false;
    }
    let (long, short) = if source_len >= target_len {
        (source_len, target_len)
    } else {
        (target_len, source_len)
    };
    long as f64 / short as f64 <= filter.max_ratio
}

/// Reads a UTF-8 text file into lines, reporting the 1-based line number of
/// the first undecodable line.
pub fn read_lines(path: &Path) -> Result<Vec<String>> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    let mut body: &[u8] = &bytes;
    if body.last() == Some(&b'\n') {
        body = &body[..body.len() - 1];
    }
    if body.is_empty() {
        return Ok(Vec::new());
    }
    body.split(|&b| b == b'\n')
        .enumerate()
        .map(|(i, line)| {
            let line = line.strip_suffix(b"\r").unwrap_or(line);
            String::from_utf8(line.to_vec()).map_err(|_| DataError::Utf8 {
                path: path.to_path_buf(),
                line: i + 1,
            })
        })
        .collect()
}

fn tokens(line: &str) -> Vec<String> {
    line.split_whitespace().map(str::to_owned).collect()
}

/// Loads two line-aligned files of whitespace-tokenised sentences and drops
/// pairs rejected by [`keep_pair`].
pub fn load_parallel_corpus(
    source_path: &Path,
    target_path: &Path,
    filter: &CorpusFilter,
) -> Result<LoadedCorpus> {
    let src = read_lines(source_path)?;
    let tgt = read_lines(target_path)?;
    if src.len() != tgt.len() {
        return Err(DataError::LineCountMismatch {
            source_lines: src.len(),
            target_lines: tgt.len(),
        });
    }
    let mut pairs = Vec::with_capacity(src.len());
    let mut dropped = 0;
    for (s, t) in src.iter().zip(&tgt) {
        let pair = RawPair {
            source: tokens(s),
            target: tokens(t),
        };
        if keep_pair(pair.source.len(), pair.target.len(), filter) {
            pairs.push(pair);
        } else {
            dropped += 1;
        }
    }
    Ok(LoadedCorpus { pairs, dropped })
}
