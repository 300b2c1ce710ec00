use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datasets::manifest::{Labeled, Manifest};
use crate::error::{Error, Result};
use crate::nn::mix_seed;

/// Record indices of a train/val/test partition, each sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl SplitIndices {
    fn sorted(mut self) -> Self {
        self.train.sort_unstable();
        self.val.sort_unstable();
        self.test.sort_unstable();
        self
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.val.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Errors if any index appears in two splits or twice in one.
    pub fn check_disjoint(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for &i in self.train.iter().chain(&self.val).chain(&self.test) {
            if !seen.insert(i) {
                return Err(Error::InvalidSplit(format!("record {i} assigned twice")));
            }
        }
        Ok(())
    }
}

/// Declarative split protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum SplitSpec {
    /// Fixed occurrence counts per word class.
    PerClassCounts { train: usize, val: usize, test: usize },
    /// Fixed occurrence counts per (speaker, word) pair.
    SpeakerDependent { train: usize, val: usize, test: usize },
    /// One speaker for test, one for validation, the rest for training.
    HeldOutSpeaker { test_speaker: u32, val_speaker: u32 },
    /// Fractions of each speaker's records with largest-remainder rounding.
    PerSpeakerFraction { fractions: [f64; 3] },
}

impl SplitSpec {
    pub fn apply<R: Labeled>(&self, records: &[R], vocabulary: &[String], seed: u64) -> Result<SplitIndices> {
        match *self {
            SplitSpec::PerClassCounts { train, val, test } => {
                split_per_class_counts(records, vocabulary, [train, val, test], seed)
            }
            SplitSpec::SpeakerDependent { train, val, test } => {
                split_speaker_dependent(records, vocabulary, [train, val, test], seed)
            }
            SplitSpec::HeldOutSpeaker {
                test_speaker,
                val_speaker,
            } => split_held_out_speaker(records, test_speaker, val_speaker),
            SplitSpec::PerSpeakerFraction { fractions } => split_per_speaker_fraction(records, fractions, seed),
        }
    }

    /// Applies this protocol to a manifest and returns `(train, val, test)` manifests.
    pub fn split_manifest(&self, manifest: &Manifest, seed: u64) -> Result<(Manifest, Manifest, Manifest)> {
        let idx = self.apply(&manifest.records, manifest.vocabulary(), seed)?;
        Ok((manifest.subset(&idx.train)?, manifest.subset(&idx.val)?, manifest.subset(&idx.test)?))
    }
}

fn class_name(vocabulary: &[String], label: usize) -> String {
    vocabulary.get(label).cloned().unwrap_or_else(|| format!("#{label}"))
}

/// Seeded shuffle of each group, then counts assigned in order train/val/test.
fn assign_counts(
    groups: BTreeMap<(u32, usize), Vec<usize>>,
    counts: [usize; 3],
    seed: u64,
    describe: impl Fn(&(u32, usize)) -> String,
) -> Result<SplitIndices> {
    let needed: usize = counts.iter().sum();
    let mut out = SplitIndices::default();
    for (key, mut members) in groups {
        if members.len() < needed {
            return Err(Error::InsufficientOccurrences {
                class: describe(&key),
                available: members.len(),
                required: needed,
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(mix_seed(seed, key.0 as u64), key.1 as u64));
        members.shuffle(&mut rng);
        let mut it = members.into_iter();
        out.train.extend(it.by_ref().take(counts[0]));
        out.val.extend(it.by_ref().take(counts[1]));
        out.test.extend(it.take(counts[2]));
    }
    Ok(out.sorted())
}

/// Per word class: seeded shuffle, then `counts = [train, val, test]`.
pub fn split_per_class_counts<R: Labeled>(
    records: &[R],
    vocabulary: &[String],
    counts: [usize; 3],
    seed: u64,
) -> Result<SplitIndices> {
    if records.is_empty() {
        return Err(Error::Empty("manifest"));
    }
    let mut groups: BTreeMap<(u32, usize), Vec<usize>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        groups.entry((0, r.label())).or_default().push(i);
    }
    assign_counts(groups, counts, seed, |k| class_name(vocabulary, k.1))
}

/// Per (speaker, word) pair: seeded shuffle, then `counts = [train, val, test]`.
pub fn split_speaker_dependent<R: Labeled>(
    records: &[R],
    vocabulary: &[String],
    counts: [usize; 3],
    seed: u64,
) -> Result<SplitIndices> {
    if records.is_empty() {
        return Err(Error::Empty("manifest"));
    }
    let mut groups: BTreeMap<(u32, usize), Vec<usize>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        groups.entry((r.speaker(), r.label())).or_default().push(i);
    }
    assign_counts(groups, counts, seed, |k| {
        format!("{} (speaker {})", class_name(vocabulary, k.1), k.0)
    })
}

/// All of `test_speaker` to test, all of `val_speaker` to val, the rest to train.
pub fn split_held_out_speaker<R: Labeled>(records: &[R], test_speaker: u32, val_speaker: u32) -> Result<SplitIndices> {
    if test_speaker == val_speaker {
        return Err(Error::InvalidSplit(format!(
            "test and validation speaker are both {test_speaker}"
        )));
    }
    for s in [test_speaker, val_speaker] {
        if !records.iter().any(|r| r.speaker() == s) {
            return Err(Error::UnknownSpeaker(s));
        }
    }
    let mut out = SplitIndices::default();
    for (i, r) in records.iter().enumerate() {
        match r.speaker() {
            s if s == test_speaker => out.test.push(i),
            s if s == val_speaker => out.val.push(i),
            _ => out.train.push(i),
        }
    }
    Ok(out)
}

/// Split sizes for `n` items: floors of `f·n`, then the leftover units go to
/// the largest fractional parts (earlier split wins ties).
pub fn largest_remainder(n: usize, fractions: [f64; 3]) -> [usize; 3] {
    let exact: Vec<f64> = fractions.iter().map(|f| f * n as f64).collect();
    let mut sizes = [0usize; 3];
    for (s, e) in sizes.iter_mut().zip(&exact) {
        *s = e.floor() as usize;
    }
    let mut left = n.saturating_sub(sizes.iter().sum());
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.partial_cmp(&ra).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b))
    });
    for &k in order.iter().cycle() {
        if left == 0 {
            break;
        }
        sizes[k] += 1;
        left -= 1;
    }
    sizes
}

/// Per speaker: seeded shuffle, then contiguous train/val/test blocks sized
/// by [`largest_remainder`].
pub fn split_per_speaker_fraction<R: Labeled>(records: &[R], fractions: [f64; 3], seed: u64) -> Result<SplitIndices> {
    let total: f64 = fractions.iter().sum();
    if (total - 1.0).abs() > 1e-9 || fractions.iter().any(|f| !(0.0..=1.0).contains(f)) {
        return Err(Error::InvalidSplit(format!("fractions {fractions:?} must be in [0,1] and sum to 1")));
    }
    if records.is_empty() {
        return Err(Error::Empty("manifest"));
    }
    let mut by_speaker: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        by_speaker.entry(r.speaker()).or_default().push(i);
    }
    let mut out = SplitIndices::default();
    for (speaker, mut members) in by_speaker {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, speaker as u64));
        members.shuffle(&mut rng);
        let [a, b, _] = largest_remainder(members.len(), fractions);
        out.train.extend_from_slice(&members[..a]);
        out.val.extend_from_slice(&members[a..a + b]);
        out.test.extend_from_slice(&members[a + b..]);
    }
    Ok(out.sorted())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Debug, Clone)]
    struct Rec(usize, u32);

    impl Labeled for Rec {
        fn label(&self) -> usize {
            self.0
        }
        fn speaker(&self) -> u32 {
            self.1
        }
    }

    #[test]
    fn single_occurrence_goes_to_train() {
        let s = split_per_class_counts(&[Rec(0, 0)], &[], [1, 0, 0], 1).unwrap();
        assert_eq!(s.train, vec![0]);
        assert!(s.val.is_empty() && s.test.is_empty());
    }

    #[test]
    fn insufficient_occurrences_names_the_class() {
        let vocab = vec!["alpha".to_string(), "bravo".to_string()];
        let recs = vec![Rec(0, 0), Rec(0, 0), Rec(1, 0)];
        let err = split_per_class_counts(&recs, &vocab, [1, 1, 0], 1).unwrap_err();
        assert!(err.to_string().contains("bravo"), "{err}");
    }

    #[test]
    fn held_out_speaker_errors() {
        let recs = vec![Rec(0, 0), Rec(0, 1)];
        assert!(matches!(split_held_out_speaker(&recs, 0, 0), Err(Error::InvalidSplit(_))));
        assert!(matches!(split_held_out_speaker(&recs, 0, 7), Err(Error::UnknownSpeaker(7))));
    }

    #[test]
    fn fraction_rounding() {
        assert_eq!(largest_remainder(100, [0.9, 0.05, 0.05]), [90, 5, 5]);
        assert_eq!(largest_remainder(3, [1.0 / 3.0; 3]), [1, 1, 1]);
        assert_eq!(largest_remainder(7, [0.5, 0.25, 0.25]), [3, 2, 2]);
        assert!(split_per_speaker_fraction(&[Rec(0, 0)], [0.5, 0.5, 0.5], 1).is_err());
    }

    #[test]
    fn spec_serializes_with_mode_tag() {
        let spec = SplitSpec::SpeakerDependent { train: 8, val: 1, test: 1 };
        let text = serde_json::to_string(&spec).unwrap();
        assert_eq!(text, r#"{"mode":"speaker_dependent","train":8,"val":1,"test":1}"#);
    }

    proptest::proptest! {
        #[test]
        fn fractional_split_is_a_partition(n in 1usize..60, speakers in 1u32..4, a in 0.0f64..1.0, b in 0.0f64..1.0, seed in 0u64..1000) {
            let (a, b) = (a.min(1.0 - 1e-3), b);
            let b = b * (1.0 - a);
            let fractions = [a, b, 1.0 - a - b];
            let recs: Vec<Rec> = (0..n).map(|i| Rec(i % 3, i as u32 % speakers)).collect();
            let s = split_per_speaker_fraction(&recs, fractions, seed).unwrap();
            s.check_disjoint().unwrap();
            proptest::prop_assert_eq!(s.len(), n);
        }
    }
}
