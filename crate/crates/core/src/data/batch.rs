use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{DataError, Result, EOS, PAD};

/// An id-encoded training pair. The target always ends with EOS.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SentencePair {
    pub source: Vec<usize>,
    pub target: Vec<usize>,
}

impl SentencePair {
    /// Appends EOS to `target` unless it is already there.
    pub fn new(source: Vec<usize>, mut target: Vec<usize>) -> Result<Self> {
        if target.last() != Some(&EOS) {
            target.push(EOS);
        }
        let pair = Self { source, target };
        pair.check()?;
        Ok(pair)
    }

    pub fn check(&self) -> Result<()> {
        if self.source.is_empty() {
            return Err(DataError::InvalidPair("empty source".into()));
        }
        if self.target.last() != Some(&EOS) {
            return Err(DataError::InvalidPair("target must end with EOS".into()));
        }
        if self.source.contains(&PAD) || self.target.contains(&PAD) {
            return Err(DataError::InvalidPair("PAD inside a sentence".into()));
        }
        Ok(())
    }
}

/// Padded source/target matrices, stored row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub source: Vec<usize>,
    pub target: Vec<usize>,
    pub source_width: usize,
    pub target_width: usize,
    pub source_lengths: Vec<usize>,
    pub target_lengths: Vec<usize>,
}

impl Batch {
    pub fn from_pairs(pairs: &[&SentencePair]) -> Self {
        let source_width = pairs.iter().map(|p| p.source.len()).max().unwrap_or(0);
        let target_width = pairs.iter().map(|p| p.target.len()).max().unwrap_or(0);
        let mut source = vec![PAD; pairs.len() * source_width];
        let mut target = vec![PAD; pairs.len() * target_width];
        for (b, p) in pairs.iter().enumerate() {
            source[b * source_width..b * source_width + p.source.len()].copy_from_slice(&p.source);
            target[b * target_width..b * target_width + p.target.len()].copy_from_slice(&p.target);
        }
        Self {
            source,
            target,
            source_width,
            target_width,
            source_lengths: pairs.iter().map(|p| p.source.len()).collect(),
            target_lengths: pairs.iter().map(|p| p.target.len()).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.source_lengths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.source_lengths.is_empty()
    }

    pub fn source_row(&self, b: usize) -> &[usize] {
        let start = b * self.source_width;
        &self.source[start..start + self.source_lengths[b]]
    }

    pub fn target_row(&self, b: usize) -> &[usize] {
        let start = b * self.target_width;
        &self.target[start..start + self.target_lengths[b]]
    }

    /// Unpadded pair `b`.
    pub fn pair(&self, b: usize) -> SentencePair {
        SentencePair {
            source: self.source_row(b).to_vec(),
            target: self.target_row(b).to_vec(),
        }
    }

    pub fn pairs(&self) -> Vec<SentencePair> {
        (0..self.len()).map(|b| self.pair(b)).collect()
    }
}

/// Shuffles by `seed`, groups pairs of similar source length into batches
/// of `batch_size` (the last one may be smaller) and shuffles batch order.
pub fn make_batches(pairs: &[SentencePair], batch_size: usize, seed: u64) -> Vec<Batch> {
    let batch_size = batch_size.max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    order.shuffle(&mut rng);
    order.sort_by_key(|&i| pairs[i].source.len());
    let mut batches: Vec<Batch> = order
        .chunks(batch_size)
        .map(|idx| {
            let members: Vec<&SentencePair> = idx.iter().map(|&i| &pairs[i]).collect();
            Batch::from_pairs(&members)
        })
        .collect();
    batches.shuffle(&mut rng);
    batches
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pairs(n: usize) -> Vec<SentencePair> {
        (0..n)
            .map(|i| SentencePair::new(vec![5 + i % 7; 1 + i % 9], vec![6; 1 + i % 4]).unwrap())
            .collect()
    }

    #[test]
    fn sizes_for_130_pairs() {
        let mut sizes: Vec<usize> = make_batches(&pairs(130), 64, 3).iter().map(Batch::len).collect();
        sizes.sort();
        assert_eq!(sizes, vec![2, 64, 64]);
    }

    #[test]
    fn same_seed_same_batches() {
        let p = pairs(200);
        assert_eq!(make_batches(&p, 16, 11), make_batches(&p, 16, 11));
        assert_ne!(make_batches(&p, 16, 11), make_batches(&p, 16, 12));
    }

    #[test]
    fn pair_validation() {
        assert!(SentencePair::new(vec![], vec![5]).is_err());
        assert!(SentencePair::new(vec![5, PAD], vec![5]).is_err());
        assert_eq!(SentencePair::new(vec![5], vec![6]).unwrap().target, vec![6, EOS]);
    }

    proptest! {
        #[test]
        fn padding_invariant(n in 1usize..120, bs in 1usize..40, seed in 0u64..50) {
            let p = pairs(n);
            let batches = make_batches(&p, bs, seed);
            prop_assert_eq!(batches.iter().map(Batch::len).sum::<usize>(), n);
            for b in &batches {
                for r in 0..b.len() {
                    prop_assert!(b.source_lengths[r] <= b.source_width);
                    prop_assert!(b.target_lengths[r] <= b.target_width);
                    let srow = &b.source[r * b.source_width..(r + 1) * b.source_width];
                    prop_assert!(srow[b.source_lengths[r]..].iter().all(|&x| x == PAD));
                    let trow = &b.target[r * b.target_width..(r + 1) * b.target_width];
                    prop_assert!(trow[b.target_lengths[r]..].iter().all(|&x| x == PAD));
                    prop_assert!(b.pair(r).check().is_ok());
                }
            }
        }
    }
}
