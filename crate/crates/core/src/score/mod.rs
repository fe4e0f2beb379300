//! Edit-distance alignment, WER/TER, and report tables.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ScoreError {
    #[error("empty reference")]
    EmptyReference,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Minimal-edit alignment counts. The rate can exceed 1.0 when the
/// hypothesis is insertion-heavy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct AlignmentCounts {
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
    pub ref_len: usize,
}

impl AlignmentCounts {
    pub fn errors(&self) -> usize {
        self.substitutions + self.deletions + self.insertions
    }

    pub fn rate(&self) -> f64 {
        self.errors() as f64 / self.ref_len as f64
    }

    pub fn merge(&mut self, other: &AlignmentCounts) {
        self.substitutions += other.substitutions;
        self.deletions += other.deletions;
        self.insertions += other.insertions;
        self.ref_len += other.ref_len;
    }
}

/// Levenshtein alignment with unit costs.
///
/// Several minimal-cost alignments can exist; the reported decomposition is
/// the canonical one with the most exact matches. That choice is
/// deterministic and direction-symmetric: swapping reference and hypothesis
/// keeps the cost and substitution count and exchanges deletions with
/// insertions.
pub fn align<T: PartialEq>(reference: &[T], hypothesis: &[T]) -> Result<AlignmentCounts, ScoreError> {
    if reference.is_empty() {
        return Err(ScoreError::EmptyReference);
    }
    let m = reference.len();
    let n = hypothesis.len();
    // Per cell: (cost, matches) minimizing cost, then maximizing matches.
    // Both are additive along an alignment path, so the lexicographic
    // optimum has optimal substructure. The pair is packed into one u64
    // (cost in the high half, matches negated in the low half) so the
    // comparison is a single integer min.
    const ONE_COST: u64 = 1 << 32;
    const ONE_MATCH: u64 = 1; // subtracted, since matches are stored negated
    let start = (u32::MAX as u64) & 0xFFFF_FFFF;
    let mut prev: Vec<u64> = (0..=n as u64).map(|j| (j << 32) | start).collect();
    let mut curr = vec![0u64; n + 1];
    for i in 1..=m {
        curr[0] = ((i as u64) << 32) | start;
        for j in 1..=n {
            let step = if reference[i - 1] == hypothesis[j - 1] {
                // A match: no cost, one more match.
                prev[j - 1] - ONE_MATCH
            } else {
                prev[j - 1] + ONE_COST
            };
            let best = step.min(prev[j] + ONE_COST).min(curr[j - 1] + ONE_COST);
            curr[j] = best;
        }
        std::mem::swap(&mut prev, &mut curr);
    }
    let packed = prev[n];
    let cost = (packed >> 32) as usize;
    let matches = (start - (packed & 0xFFFF_FFFF)) as usize;
    // With M matches fixed: m = M + S + D and n = M + S + I, so the counts
    // follow from (cost, matches) alone.
    let substitutions = m + n - 2 * matches - cost;
    let deletions = m - matches - substitutions;
    let insertions = n - matches - substitutions;
    Ok(AlignmentCounts {
        substitutions,
        deletions,
        insertions,
        ref_len: m,
    })
}

/// Word error rate counts over whitespace-separated tokens.
pub fn wer_counts(reference: &str, hypothesis: &str) -> Result<AlignmentCounts, ScoreError> {
    let r: Vec<&str> = reference.split_whitespace().collect();
    let h: Vec<&str> = hypothesis.split_whitespace().collect();
    align(&r, &h)
}

pub fn wer(reference: &str, hypothesis: &str) -> Result<f64, ScoreError> {
    wer_counts(reference, hypothesis).map(|c| c.rate())
}

/// Token error rate counts over Unicode codepoints with all whitespace
/// removed first, so segmentation does not affect the score.
pub fn ter_counts(reference: &str, hypothesis: &str) -> Result<AlignmentCounts, ScoreError> {
    let r: Vec<char> = reference.chars().filter(|c| !c.is_whitespace()).collect();
    let h: Vec<char> = hypothesis.chars().filter(|c| !c.is_whitespace()).collect();
    align(&r, &h)
}

pub fn ter(reference: &str, hypothesis: &str) -> Result<f64, ScoreError> {
    ter_counts(reference, hypothesis).map(|c| c.rate())
}

/// Corpus-level counts: sums per-utterance counts, so the rate is the
/// count-weighted Σ(S+D+I)/ΣN rather than a mean of per-utterance rates.
pub fn aggregate<'a>(counts: impl IntoIterator<Item = &'a AlignmentCounts>) -> AlignmentCounts {
    let mut total = AlignmentCounts::default();
    for c in counts {
        total.merge(c);
    }
    total
}

/// (old - new) / old; positive when `new` improved over `old`.
pub fn relative_change(old: f64, new: f64) -> f64 {
    (old - new) / old
}

/// One scored utterance for the score file.
#[derive(Debug, Clone)]
pub struct ScoreRow {
    pub utt_id: String,
    pub counts: AlignmentCounts,
}

/// Writes the tab-separated score file: `utt-id S D I N rate` per line.
pub fn write_score_file(path: &Path, rows: &[ScoreRow]) -> Result<(), ScoreError> {
    let mut out = String::new();
    for row in rows {
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{:.6}",
            row.utt_id,
            row.counts.substitutions,
            row.counts.deletions,
            row.counts.insertions,
            row.counts.ref_len,
            row.counts.rate()
        )
        .expect("write to string");
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_score_file(path: &Path) -> Result<Vec<ScoreRow>, ScoreError> {
    let text = std::fs::read_to_string(path)?;
    let mut rows = Vec::new();
    for line in text.lines() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 6 {
            continue;
        }
        rows.push(ScoreRow {
            utt_id: fields[0].to_string(),
            counts: AlignmentCounts {
                substitutions: fields[1].parse().unwrap_or(0),
                deletions: fields[2].parse().unwrap_or(0),
                insertions: fields[3].parse().unwrap_or(0),
                ref_len: fields[4].parse().unwrap_or(0),
            },
        });
    }
    Ok(rows)
}

/// Per-(system, language) results laid out as systems x languages.
pub type ResultTable = BTreeMap<(String, String), AlignmentCounts>;

/// Renders an aligned text table and a machine-readable TSV. Rows are
/// systems, columns are languages, cells are error rates as percentages to
/// one decimal. With a baseline system given, a relative-change row
/// ((old-new)/old, in percent) is appended for every other system.
pub fn render_report(results: &ResultTable, baseline: Option<&str>) -> (String, String) {
    let mut systems: Vec<&String> = results.keys().map(|(s, _)| s).collect();
    systems.dedup();
    systems.sort();
    systems.dedup();
    let mut languages: Vec<&String> = results.keys().map(|(_, l)| l).collect();
    languages.sort();
    languages.dedup();

    let cell = |sys: &str, lang: &str| -> Option<f64> {
        results
            .get(&(sys.to_string(), lang.to_string()))
            .map(|c| c.rate() * 100.0)
    };

    let mut width = systems.iter().map(|s| s.len()).max().unwrap_or(6).max(6);
    if baseline.is_some() {
        width = width.max(systems.iter().map(|s| s.len() + 7).max().unwrap_or(0));
    }

    let mut pretty = format!("{:width$}", "system");
    let mut tsv = String::from("system");
    for lang in &languages {
        let _ = write!(pretty, " {:>8}", lang);
        let _ = write!(tsv, "\t{lang}");
    }
    pretty.push('\n');
    tsv.push('\n');

    for sys in &systems {
        let _ = write!(pretty, "{sys:width$}");
        tsv.push_str(sys);
        for lang in &languages {
            match cell(sys, lang) {
                Some(rate) => {
                    let _ = write!(pretty, " {rate:>8.1}");
                    let _ = write!(tsv, "\t{rate:.1}");
                }
                None => {
                    let _ = write!(pretty, " {:>8}", "-");
                    tsv.push_str("\t-");
                }
            }
        }
        pretty.push('\n');
        tsv.push('\n');
    }

    if let Some(base) = baseline {
        for sys in &systems {
            if sys.as_str() == base {
                continue;
            }
            let label = format!("{sys} rel%");
            let _ = write!(pretty, "{label:width$}");
            let _ = write!(tsv, "{label}");
            for lang in &languages {
                match (cell(base, lang), cell(sys, lang)) {
                    (Some(old), Some(new)) if old > 0.0 => {
                        let rel = relative_change(old, new) * 100.0;
                        let _ = write!(pretty, " {rel:>8.1}");
                        let _ = write!(tsv, "\t{rel:.1}");
                    }
                    _ => {
                        let _ = write!(pretty, " {:>8}", "-");
                        tsv.push_str("\t-");
                    }
                }
            }
            pretty.push('\n');
            tsv.push('\n');
        }
    }

    (pretty, tsv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::HashMap;

    /// Independent oracle: memoized recursion over the edit-script space.
    fn oracle_cost<T: PartialEq + Clone + std::hash::Hash + Eq>(a: &[T], b: &[T]) -> usize {
        fn go<T: PartialEq>(
            a: &[T],
            b: &[T],
            i: usize,
            j: usize,
            memo: &mut HashMap<(usize, usize), usize>,
        ) -> usize {
            if i == a.len() {
                return b.len() - j;
            }
            if j == b.len() {
                return a.len() - i;
            }
            if let Some(&c) = memo.get(&(i, j)) {
                return c;
            }
            let sub = go(a, b, i + 1, j + 1, memo) + usize::from(a[i] != b[j]);
            let del = go(a, b, i + 1, j, memo) + 1;
            let ins = go(a, b, i, j + 1, memo) + 1;
            let best = sub.min(del).min(ins);
            memo.insert((i, j), best);
            best
        }
        go(a, b, 0, 0, &mut HashMap::new())
    }

    #[test]
    fn identical_sequences_align_perfectly() {
        let c = align(&['a', 'b', 'c'], &['a', 'b', 'c']).unwrap();
        assert_eq!(c, AlignmentCounts { substitutions: 0, deletions: 0, insertions: 0, ref_len: 3 });
        assert_eq!(c.rate(), 0.0);
    }

    #[test]
    fn single_substitution() {
        let c = align(&["a", "b", "c"], &["a", "x", "c"]).unwrap();
        assert_eq!((c.substitutions, c.deletions, c.insertions), (1, 0, 0));
        assert!((c.rate() - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn rate_can_exceed_one() {
        let c = align(&["a"], &["a", "b", "c"]).unwrap();
        assert_eq!(c.insertions, 2);
        assert_eq!(c.rate(), 2.0);
    }

    #[test]
    fn empty_reference_is_an_error() {
        assert!(matches!(
            align::<char>(&[], &['a']),
            Err(ScoreError::EmptyReference)
        ));
        assert!(matches!(wer("   ", "a"), Err(ScoreError::EmptyReference)));
    }

    #[test]
    fn wer_matches_oracle_on_random_corpora() {
        let mut rng = crate::rng::Rng::from_seed(31);
        let words = ["on", "off", "play", "stop", "next", "song"];
        for _ in 0..10 {
            let make = |rng: &mut crate::rng::Rng| -> Vec<&str> {
                (0..1 + rng.next_below(7))
                    .map(|_| words[rng.next_below(words.len() as u64) as usize])
                    .collect()
            };
            let r = make(&mut rng);
            let mut h = r.clone();
            // Random edits.
            for _ in 0..rng.next_below(4) {
                if h.is_empty() {
                    break;
                }
                let pos = rng.next_below(h.len() as u64) as usize;
                match rng.next_below(3) {
                    0 => h[pos] = words[rng.next_below(words.len() as u64) as usize],
                    1 => {
                        h.remove(pos);
                    }
                    _ => h.insert(pos, words[rng.next_below(words.len() as u64) as usize]),
                }
            }
            let counts = align(&r, &h).unwrap();
            assert_eq!(counts.errors(), oracle_cost(&r, &h), "ref {r:?} hyp {h:?}");
        }
    }

    #[test]
    fn corpus_rate_is_count_weighted() {
        // Two utterances: 1 error over 1 token, 0 errors over 9 tokens.
        // Count-weighted rate is 1/10, not the mean of 1.0 and 0.0.
        let a = wer_counts("hi", "no").unwrap();
        let b = wer_counts("a b c d e f g h i", "a b c d e f g h i").unwrap();
        let total = aggregate([&a, &b]);
        assert!((total.rate() - 0.1).abs() < 1e-12);
    }

    #[test]
    fn ter_identical_katakana() {
        assert_eq!(ter("オン", "オン").unwrap(), 0.0);
    }

    #[test]
    fn ter_dropped_leading_latin_letter() {
        // 10 codepoints after whitespace removal; one deletion.
        let c = ter_counts("google 音声認識", "oogle 音声認識").unwrap();
        assert_eq!(c.ref_len, 10);
        assert_eq!((c.substitutions, c.deletions, c.insertions), (0, 1, 0));
        assert!((c.rate() - 0.1).abs() < 1e-12);
    }

    #[test]
    fn ter_ignores_whitespace_differences() {
        assert_eq!(ter("オ ン", "オン").unwrap(), 0.0);
        assert_eq!(ter("a b c", "abc").unwrap(), 0.0);
    }

    #[test]
    fn rate_invariant_to_outer_whitespace() {
        assert_eq!(wer("  hello world  ", "hello world").unwrap(), 0.0);
        assert_eq!(ter("  オン ", "オン").unwrap(), 0.0);
    }

    #[test]
    fn exhaustive_small_alphabet_matches_oracle() {
        // All pairs of token lists up to length 4 over {a,b,c}.
        let symbols = ['a', 'b', 'c'];
        let mut all: Vec<Vec<char>> = vec![vec![]];
        for len in 1..=4usize {
            let count = symbols.len().pow(len as u32);
            for mut idx in 0..count {
                let mut s = Vec::with_capacity(len);
                for _ in 0..len {
                    s.push(symbols[idx % 3]);
                    idx /= 3;
                }
                all.push(s);
            }
        }
        for r in &all {
            if r.is_empty() {
                continue;
            }
            for h in &all {
                let counts = align(r, h).unwrap();
                assert_eq!(counts.errors(), oracle_cost(r, h), "ref {r:?} hyp {h:?}");
            }
        }
    }

    #[test]
    fn relative_change_example() {
        // 13.8 -> 13.2 is a 4.3-4.4% relative reduction.
        let rel = relative_change(13.8, 13.2) * 100.0;
        assert!((4.3..=4.4).contains(&rel), "rel {rel}");
    }

    #[test]
    fn report_layout() {
        let mut results = ResultTable::new();
        let counts = |e: usize, n: usize| AlignmentCounts {
            substitutions: e,
            deletions: 0,
            insertions: 0,
            ref_len: n,
        };
        for (sys, lang, e, n) in [
            ("mono", "EN", 69, 1000),
            ("mono", "JA", 138, 1000),
            ("multi", "EN", 66, 1000),
            ("multi", "JA", 132, 1000),
        ] {
            results.insert((sys.to_string(), lang.to_string()), counts(e, n));
        }
        let (pretty, tsv) = render_report(&results, Some("mono"));
        assert!(pretty.contains("13.8"));
        assert!(pretty.contains("13.2"));
        assert!(tsv.contains("multi\t6.6\t13.2"));
        // Relative row present for the non-baseline system.
        assert!(tsv.lines().any(|l| l.starts_with("multi rel%")));
        let single = render_report(
            &ResultTable::from([(("s".to_string(), "L".to_string()), counts(1, 10))]),
            None,
        );
        assert!(single.1.contains("10.0"));
    }

    #[test]
    fn score_file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scores.tsv");
        let rows = vec![
            ScoreRow {
                utt_id: "utt-0".into(),
                counts: AlignmentCounts {
                    substitutions: 1,
                    deletions: 2,
                    insertions: 0,
                    ref_len: 12,
                },
            },
            ScoreRow {
                utt_id: "utt-1".into(),
                counts: AlignmentCounts {
                    substitutions: 0,
                    deletions: 0,
                    insertions: 0,
                    ref_len: 4,
                },
            },
        ];
        write_score_file(&path, &rows).unwrap();
        let back = read_score_file(&path).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].counts, rows[0].counts);
        assert_eq!(back[1].utt_id, "utt-1");
    }

    proptest! {
        /// Swapping ref and hyp preserves total cost and substitutions and
        /// exchanges deletions with insertions.
        #[test]
        fn swap_symmetry(
            r in proptest::collection::vec(0u8..3, 1..9),
            h in proptest::collection::vec(0u8..3, 1..9),
        ) {
            let fwd = align(&r, &h).unwrap();
            let rev = align(&h, &r).unwrap();
            prop_assert_eq!(fwd.errors(), rev.errors());
            prop_assert_eq!(fwd.substitutions, rev.substitutions);
            prop_assert_eq!(fwd.deletions, rev.insertions);
            prop_assert_eq!(fwd.insertions, rev.deletions);
        }

        /// Alignment cost always matches the independent oracle.
        #[test]
        fn cost_matches_oracle(
            r in proptest::collection::vec(0u8..3, 1..9),
            h in proptest::collection::vec(0u8..3, 0..9),
        ) {
            let counts = align(&r, &h).unwrap();
            prop_assert_eq!(counts.errors(), oracle_cost(&r, &h));
        }
    }
}
