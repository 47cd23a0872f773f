//! Corpus ingestion, subword segmentation, vocabularies and batching.

mod batch;
mod bpe;
mod corpus;
mod vocab;

pub use batch::{make_batches, Batch, SentencePair};
pub use bpe::{de_bpe, BpeModel, CONTINUATION};
pub use corpus::{keep_pair, load_parallel_corpus, read_lines, CorpusFilter, LoadedCorpus, RawPair};
pub use vocab::{Side, Vocabulary, BOS, EOS, PAD, SPECIALS, UNK, WAIT};

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line counts differ: source has {source_lines}, target has {target_lines}")]
    LineCountMismatch {
        source_lines: usize,
        target_lines: usize,
    },
    #[error("{path}: line {line} is not valid UTF-8")]
    Utf8 { path: PathBuf, line: usize },
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("vocabulary size {requested} is below the minimum of {minimum}")]
    VocabTooSmall { requested: usize, minimum: usize },
    #[error("{what}: line {line}: {msg}")]
    Format {
        what: &'static str,
        line: usize,
        msg: String,
    },
    #[error("invalid sentence pair: {0}")]
    InvalidPair(String),
}

pub type Result<T> = std::result::Result<T, DataError>;

pub(crate) fn io_err(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    }
}
