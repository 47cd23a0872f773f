use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use super::{io_err, DataError, Result};

/// Suffix marking a subword that does not end a word.
pub const CONTINUATION: &str = "@@";
const END_OF_WORD: &str = "</w>";

/// Greedy byte-pair merges learned from whitespace-separated text.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct BpeModel {
    merges: Vec<(String, String)>,
    ranks: HashMap<(String, String), usize>,
}

fn split_word(word: &str) -> Vec<String> {
    let mut symbols: Vec<String> = word.chars().map(String::from).collect();
    if let Some(last) = symbols.last_mut() {
        last.push_str(END_OF_WORD);
    }
    symbols
}

fn merge_pair(symbols: &mut Vec<String>, left: &str, right: &str) {
    let mut i = 0;
    while i + 1 < symbols.len() {
        if symbols[i] == left && symbols[i + 1] == right {
            let r = symbols.remove(i + 1);
            symbols[i].push_str(&r);
        }
        i += 1;
    }
}

impl BpeModel {
    fn from_merges(merges: Vec<(String, String)>) -> Result<Self> {
        let mut ranks = HashMap::with_capacity(merges.len());
        for (i, m) in merges.iter().enumerate() {
            if ranks.insert(m.clone(), i).is_some() {
                return Err(DataError::Format {
                    what: "bpe model",
                    line: i + 1,
                    msg: format!("duplicate merge {} {}", m.0, m.1),
                });
            }
        }
        Ok(Self { merges, ranks })
    }

    /// Learns up to `merge_count` merges, each time joining the most frequent
    /// adjacent symbol pair (ties go to the lexicographically smallest pair).
    /// Stops early once every word is a single symbol.
    pub fn train<'a>(sentences: impl IntoIterator<Item = &'a str>, merge_count: usize) -> Result<Self> {
        let mut words: BTreeMap<&str, usize> = BTreeMap::new();
        for s in sentences {
            for w in s.split_whitespace() {
                *words.entry(w).or_default() += 1;
            }
        }
        if words.is_empty() {
            return Err(DataError::EmptyCorpus);
        }
        let mut entries: Vec<(Vec<String>, usize)> =
            words.into_iter().map(|(w, c)| (split_word(w), c)).collect();
        let mut merges = Vec::with_capacity(merge_count);
        for _ in 0..merge_count {
            let mut counts: HashMap<(&str, &str), usize> = HashMap::new();
            for (symbols, freq) in &entries {
                for pair in symbols.windows(2) {
                    *counts.entry((&pair[0], &pair[1])).or_default() += freq;
                }
            }
            let Some((best, _)) = counts
                .into_iter()
                .max_by(|(pa, ca), (pb, cb)| ca.cmp(cb).then_with(|| pb.cmp(pa)))
            else {
                break;
            };
            let (left, right) = (best.0.to_owned(), best.1.to_owned());
            for (symbols, _) in &mut entries {
                merge_pair(symbols, &left, &right);
            }
            merges.push((left, right));
        }
        Self::from_merges(merges)
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    /// Segments one word, replaying merges by rank.
    pub fn apply_word(&self, word: &str) -> Vec<String> {
        let mut symbols = split_word(word);
        loop {
            let best = symbols
                .windows(2)
                .filter_map(|p| self.ranks.get(&(p[0].clone(), p[1].clone())))
                .min()
                .copied();
            let Some(rank) = best else { break };
            let (l, r) = &self.merges[rank];
            merge_pair(&mut symbols, l, r);
        }
        let n = symbols.len();
        for (i, s) in symbols.iter_mut().enumerate() {
            if i + 1 == n {
                s.truncate(s.len() - END_OF_WORD.len());
            } else {
                s.push_str(CONTINUATION);
            }
        }
        symbols
    }

    /// Segments a whitespace-tokenised sentence into subwords.
    pub fn apply(&self, sentence: &str) -> Vec<String> {
        sentence.split_whitespace().flat_map(|w| self.apply_word(w)).collect()
    }

    /// One merge per line as `left right`.
    pub fn to_text(&self) -> String {
        self.merges.iter().map(|(l, r)| format!("{l} {r}\n")).collect()
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let merges = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, line)| {
                let mut parts = line.split(' ');
                match (parts.next(), parts.next(), parts.next()) {
                    (Some(l), Some(r), None) if !l.is_empty() && !r.is_empty() => {
                        Ok((l.to_owned(), r.to_owned()))
                    }
                    _ => Err(DataError::Format {
                        what: "bpe model",
                        line: i + 1,
                        msg: format!("expected `left right`, got {line:?}"),
                    }),
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_merges(merges)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(io_err(path))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        Self::from_text(&text)
    }
}

/// Undoes segmentation: joins with spaces and removes continuation markers.
pub fn de_bpe<S: AsRef<str>>(tokens: &[S]) -> String {
    let joined: Vec<&str> = tokens.iter().map(AsRef::as_ref).collect();
    let joined = joined.join(" ");
    let marker = format!("{CONTINUATION} ");
    joined.replace(&marker, "")
}
