use std::collections::HashMap;
use std::path::Path;

use super::{io_err, DataError, Result};

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const WAIT: usize = 3;
pub const UNK: usize = 4;

/// Reserved tokens, in id order.
pub const SPECIALS: [&str; 5] = ["<pad>", "<s>", "</s>", "<wait>", "<unk>"];

/// Which side of the corpus a vocabulary encodes. `<wait>` keeps its
/// reserved id on both sides, but only target text can produce it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Source,
    Target,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    side: Side,
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    fn from_tokens(tokens: Vec<String>, side: Side) -> Result<Self> {
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(DataError::Format {
                    what: "vocabulary",
                    line: i + 1,
                    msg: format!("duplicate token {t:?}"),
                });
            }
        }
        Ok(Self { side, tokens, index })
    }

    /// Keeps the `size - 5` most frequent tokens after the four reserved
    /// specials and UNK;
    /// equal counts are ordered lexicographically. Small corpora yield a
    /// smaller vocabulary.
    pub fn build<S: AsRef<str>>(sentences: &[Vec<S>], size: usize, side: Side) -> Result<Self> {
        if size < SPECIALS.len() {
            return Err(DataError::VocabTooSmall {
                requested: size,
                minimum: SPECIALS.len(),
            });
        }
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for s in sentences {
            for t in s {
                let t = t.as_ref();
                if !SPECIALS.contains(&t) {
                    *counts.entry(t).or_default() += 1;
                }
            }
        }
        let mut ranked: Vec<(&str, usize)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        let tokens = SPECIALS
            .iter()
            .map(|s| s.to_string())
            .chain(ranked.into_iter().take(size - SPECIALS.len()).map(|(t, _)| t.to_owned()))
            .collect();
        Self::from_tokens(tokens, side)
    }

    pub fn side(&self) -> Side {
        self.side
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Total lookup: unknown tokens (and `<wait>` on the source side) map to UNK.
    pub fn token_to_id(&self, token: &str) -> usize {
        match self.index.get(token) {
            Some(&WAIT) if self.side == Side::Source => UNK,
            Some(&id) => id,
            None => UNK,
        }
    }

    pub fn id_to_token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        tokens.iter().map(|t| self.token_to_id(t.as_ref())).collect()
    }

    /// Tokens for `ids`, dropping PAD, BOS, EOS and WAIT.
    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter()
            .filter(|&&i| !matches!(i, PAD | BOS | EOS | WAIT))
            .map(|&i| self.id_to_token(i).unwrap_or(SPECIALS[UNK]).to_owned())
            .collect()
    }

    /// One token per line; the line number is the id.
    pub fn to_text(&self) -> String {
        self.tokens.iter().map(|t| format!("{t}\n")).collect()
    }

    pub fn from_text(text: &str, side: Side) -> Result<Self> {
        let tokens: Vec<String> = text.lines().map(str::to_owned).collect();
        for (i, special) in SPECIALS.iter().enumerate() {
            if tokens.get(i).map(String::as_str) != Some(special) {
                return Err(DataError::Format {
                    what: "vocabulary",
                    line: i + 1,
                    msg: format!("expected reserved token {special}"),
                });
            }
        }
        Self::from_tokens(tokens, side)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(io_err(path))
    }

    pub fn load(path: &Path, side: Side) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        Self::from_text(&text, side)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corpus(lines: &[&str]) -> Vec<Vec<String>> {
        lines
            .iter()
            .map(|l| l.split_whitespace().map(str::to_owned).collect())
            .collect()
    }

    #[test]
    fn reserved_ids_are_fixed() {
        let v = Vocabulary::build(&corpus(&["a b"]), 10, Side::Target).unwrap();
        assert_eq!(v.id_to_token(PAD), Some("<pad>"));
        assert_eq!(v.id_to_token(BOS), Some("<s>"));
        assert_eq!(v.id_to_token(EOS), Some("</s>"));
        assert_eq!(v.id_to_token(WAIT), Some("<wait>"));
        assert_eq!(v.token_to_id("<wait>"), WAIT);
    }

    #[test]
    fn small_corpus_caps_size() {
        let v = Vocabulary::build(&corpus(&["x y x"]), 10, Side::Target).unwrap();
        assert_eq!(v.len(), 7);
    }

    #[test]
    fn exact_budget_is_respected() {
        let words: Vec<String> = (0..5000).map(|i| format!("w{i}")).collect();
        let v = Vocabulary::build(&[words], 4000, Side::Source).unwrap();
        assert_eq!(v.len(), 4000);
    }

    #[test]
    fn ties_break_lexicographically() {
        let v = Vocabulary::build(&corpus(&["c b a c"]), 7, Side::Target).unwrap();
        assert_eq!(v.id_to_token(5), Some("c"));
        assert_eq!(v.id_to_token(6), Some("a"));
        assert_eq!(v.token_to_id("b"), UNK);
    }

    #[test]
    fn too_small_size_rejected() {
        assert!(matches!(
            Vocabulary::build(&corpus(&["a"]), 4, Side::Target),
            Err(DataError::VocabTooSmall { requested: 4, minimum: 5 })
        ));
    }

    #[test]
    fn wait_is_target_only() {
        let v = Vocabulary::build(&corpus(&["a <wait>"]), 10, Side::Source).unwrap();
        assert_eq!(v.token_to_id("<wait>"), UNK);
        assert_eq!(v.len(), 6);
    }

    #[test]
    fn file_round_trip_and_bijection() {
        let v = Vocabulary::build(&corpus(&["the cat the dog"]), 20, Side::Target).unwrap();
        let back = Vocabulary::from_text(&v.to_text(), Side::Target).unwrap();
        assert_eq!(v, back);
        for id in 0..v.len() {
            let t = v.id_to_token(id).unwrap();
            assert_eq!(v.token_to_id(t), id);
        }
        assert!(Vocabulary::from_text("<s>\n<pad>\n", Side::Target).is_err());
    }
}
