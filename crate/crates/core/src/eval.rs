//! Scoring and error analysis: WER over minimum-edit-distance word
//! alignments, plus segment-level CER for tagged spans (proper nouns,
//! rare words) extracted from those alignments.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{self, BufRead, BufReader};
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("reference corpus has no words")]
    EmptyReference,
    #[error("no segments with a nonempty reference")]
    EmptySegments,
    #[error("invalid span [{start}, {end}] for a {len}-word reference")]
    InvalidSpan {
        start: usize,
        end: usize,
        len: usize,
    },
    #[error("line {0}: malformed entry")]
    MalformedLine(usize),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// One step of a minimum-cost alignment. Positions index into the
/// reference and hypothesis sequences.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EditOp {
    Match { ref_pos: usize, hyp_pos: usize },
    Substitute { ref_pos: usize, hyp_pos: usize },
    Delete { ref_pos: usize },
    Insert { hyp_pos: usize },
}

impl EditOp {
    pub fn cost(&self) -> usize {
        match self {
            EditOp::Match { .. } => 0,
            _ => 1,
        }
    }
}

/// Minimum-cost alignment with unit substitution/deletion/insertion costs.
/// At equal cost the backtrace prefers substitution over deletion over
/// insertion, so alignments are deterministic.
pub fn align_words<T: PartialEq>(reference: &[T], hypothesis: &[T]) -> Vec<EditOp> {
    let n = reference.len();
    let m = hypothesis.len();
    let width = m + 1;
    let mut cost = vec![0usize; (n + 1) * width];
    for i in 0..=n {
        cost[i * width] = i;
    }
    for (j, slot) in cost[..width].iter_mut().enumerate() {
        *slot = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let sub = cost[(i - 1) * width + (j - 1)]
                + usize::from(reference[i - 1] != hypothesis[j - 1]);
            let del = cost[(i - 1) * width + j] + 1;
            let ins = cost[i * width + (j - 1)] + 1;
            cost[i * width + j] = sub.min(del).min(ins);
        }
    }
    // Backtrace with the substitution > deletion > insertion preference.
    let mut ops = Vec::with_capacity(n.max(m));
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        let here = cost[i * width + j];
        if i > 0 && j > 0 {
            let diag = cost[(i - 1) * width + (j - 1)];
            let is_match = reference[i - 1] == hypothesis[j - 1];
            if here == diag + usize::from(!is_match) {
                ops.push(if is_match {
                    EditOp::Match {
                        ref_pos: i - 1,
                        hyp_pos: j - 1,
                    }
                } else {
                    EditOp::Substitute {
                        ref_pos: i - 1,
                        hyp_pos: j - 1,
                    }
                });
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && cost[i * width + j] == cost[(i - 1) * width + j] + 1 {
            ops.push(EditOp::Delete { ref_pos: i - 1 });
            i -= 1;
            continue;
        }
        ops.push(EditOp::Insert { hyp_pos: j - 1 });
        j -= 1;
    }
    ops.reverse();
    ops
}

/// Aggregated word-error counts over a corpus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct WerReport {
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
    pub reference_words: usize,
}

impl WerReport {
    pub fn errors(&self) -> usize {
        self.substitutions + self.deletions + self.insertions
    }

    /// `100 * (S + D + I) / N`, full precision.
    pub fn wer(&self) -> f64 {
        100.0 * self.errors() as f64 / self.reference_words as f64
    }

    /// Display form rounded to one decimal.
    pub fn wer_display(&self) -> String {
        format!("{:.1}", self.wer())
    }
}

/// Aggregates alignments into a WER report.
pub fn wer(alignments: &[Vec<EditOp>]) -> Result<WerReport, EvalError> {
    let mut report = WerReport::default();
    for ops in alignments {
        for op in ops {
            match op {
                EditOp::Match { .. } => report.reference_words += 1,
                EditOp::Substitute { .. } => {
                    report.substitutions += 1;
                    report.reference_words += 1;
                }
                EditOp::Delete { .. } => {
                    report.deletions += 1;
                    report.reference_words += 1;
                }
                EditOp::Insert { .. } => report.insertions += 1,
            }
        }
    }
    if report.reference_words == 0 {
        return Err(EvalError::EmptyReference);
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum TagLabel {
    ProperNoun,
    RareWord,
}

impl TagLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            TagLabel::ProperNoun => "propernoun",
            TagLabel::RareWord => "rareword",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "propernoun" | "proper" => Some(TagLabel::ProperNoun),
            "rareword" | "rare" => Some(TagLabel::RareWord),
            _ => None,
        }
    }
}

/// A tagged span of reference words, inclusive on both ends.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TagSpan {
    pub utt_id: String,
    pub start: usize,
    pub end: usize,
    pub label: TagLabel,
}

/// A reference segment paired with the hypothesis words aligned to it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentPair {
    pub reference: String,
    pub hypothesis: String,
}

/// Collects, for each tagged span, the hypothesis words aligned to its
/// reference positions. Substituted and matched words map directly;
/// deletions contribute nothing; an insertion attaches to the span iff the
/// reference position preceding it lies inside the span.
pub fn extract_tagged_segments(
    reference: &[String],
    hypothesis: &[String],
    alignment: &[EditOp],
    tags: &[TagSpan],
) -> Result<Vec<SegmentPair>, EvalError> {
    for t in tags {
        if t.start > t.end || t.end >= reference.len() {
            return Err(EvalError::InvalidSpan {
                start: t.start,
                end: t.end,
                len: reference.len(),
            });
        }
    }
    // hyp position -> reference anchor: the ref position it is aligned to,
    // or for insertions the ref position consumed just before them.
    let mut anchors: Vec<(usize, Option<usize>)> = Vec::new(); // (hyp_pos, anchor)
    let mut last_ref: Option<usize> = None;
    for op in alignment {
        match *op {
            EditOp::Match { ref_pos, hyp_pos } | EditOp::Substitute { ref_pos, hyp_pos } => {
                anchors.push((hyp_pos, Some(ref_pos)));
                last_ref = Some(ref_pos);
            }
            EditOp::Delete { ref_pos } => last_ref = Some(ref_pos),
            EditOp::Insert { hyp_pos } => anchors.push((hyp_pos, last_ref)),
        }
    }
    let mut out = Vec::with_capacity(tags.len());
    for t in tags {
        let hyp_words: Vec<&str> = anchors
            .iter()
            .filter(|(_, anchor)| matches!(anchor, Some(r) if *r >= t.start && *r <= t.end))
            .map(|&(h, _)| hypothesis[h].as_str())
            .collect();
        out.push(SegmentPair {
            reference: reference[t.start..=t.end].join(" "),
            hypothesis: hyp_words.join(" "),
        });
    }
    Ok(out)
}

/// Character error rate over segment pairs: character-level edit distance,
/// spaces included, aggregated as `100 * edits / reference characters`.
pub fn cer(segments: &[SegmentPair]) -> Result<f64, EvalError> {
    cer_with(segments, true)
}

/// As `cer`, with the space-counting rule explicit: with `count_spaces`
/// off, spaces inside multi-word segments are stripped from both sides
/// before the distance.
pub fn cer_with(segments: &[SegmentPair], count_spaces: bool) -> Result<f64, EvalError> {
    let mut edits = 0usize;
    let mut ref_chars = 0usize;
    let keep = |c: &char| count_spaces || *c != ' ';
    for pair in segments {
        let r: Vec<char> = pair.reference.chars().filter(keep).collect();
        let h: Vec<char> = pair.hypothesis.chars().filter(keep).collect();
        if r.is_empty() {
            continue;
        }
        ref_chars += r.len();
        edits += align_words(&r, &h)
            .iter()
            .map(|op| op.cost())
            .sum::<usize>();
    }
    if ref_chars == 0 {
        return Err(EvalError::EmptySegments);
    }
    Ok(100.0 * edits as f64 / ref_chars as f64)
}

/// What the bottom-`threshold` fraction in `select_rare_words` ranges
/// over: distinct words or token occurrences.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RareWordBasis {
    #[default]
    Types,
    Tokens,
}

/// Selects the rare tail of the vocabulary: words sorted by ascending
/// training count (ties lexicographic), taking the longest prefix whose
/// share of distinct words stays within `threshold`.
pub fn select_rare_words(counts: &BTreeMap<String, u64>, threshold: f64) -> BTreeSet<String> {
    select_rare_words_by(counts, threshold, RareWordBasis::Types)
}

/// As `select_rare_words`, with the fraction basis explicit: `Types`
/// cuts by share of distinct words, `Tokens` by cumulative share of
/// training occurrences.
pub fn select_rare_words_by(
    counts: &BTreeMap<String, u64>,
    threshold: f64,
    basis: RareWordBasis,
) -> BTreeSet<String> {
    let mut words: Vec<(&String, &u64)> = counts.iter().collect();
    words.sort_by(|a, b| a.1.cmp(b.1).then_with(|| a.0.cmp(b.0)));
    match basis {
        RareWordBasis::Types => {
            let take = ((threshold * words.len() as f64) + 1e-9).floor() as usize;
            words
                .into_iter()
                .take(take)
                .map(|(w, _)| w.clone())
                .collect()
        }
        RareWordBasis::Tokens => {
            let total: u64 = words.iter().map(|(_, &c)| c).sum();
            let budget = threshold * total as f64 + 1e-9;
            let mut cumulative = 0u64;
            let mut out = BTreeSet::new();
            for (w, &c) in words {
                if (cumulative + c) as f64 > budget {
                    break;
                }
                cumulative += c;
                out.insert(w.clone());
            }
            out
        }
    }
}

/// Reads a tag file: `utt_id<TAB>start<TAB>end<TAB>label` lines.
pub fn read_tags<R: BufRead>(r: R) -> Result<Vec<TagSpan>, EvalError> {
    let mut out = Vec::new();
    for (lineno, line) in r.lines().enumerate() {
        let line = line?;
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(EvalError::MalformedLine(lineno + 1));
        }
        let start: usize = fields[1]
            .parse()
            .map_err(|_| EvalError::MalformedLine(lineno + 1))?;
        let end: usize = fields[2]
            .parse()
            .map_err(|_| EvalError::MalformedLine(lineno + 1))?;
        let label = TagLabel::parse(fields[3]).ok_or(EvalError::MalformedLine(lineno + 1))?;
        out.push(TagSpan {
            utt_id: fields[0].to_string(),
            start,
            end,
            label,
        });
    }
    Ok(out)
}

pub fn read_tags_file<P: AsRef<Path>>(path: P) -> Result<Vec<TagSpan>, EvalError> {
    read_tags(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn words(s: &str) -> Vec<String> {
        s.split_whitespace().map(|w| w.to_string()).collect()
    }

    fn counts(ops: &[EditOp]) -> (usize, usize, usize) {
        let (mut s, mut d, mut i) = (0, 0, 0);
        for op in ops {
            match op {
                EditOp::Substitute { .. } => s += 1,
                EditOp::Delete { .. } => d += 1,
                EditOp::Insert { .. } => i += 1,
                EditOp::Match { .. } => {}
            }
        }
        (s, d, i)
    }

    #[test]
    fn identical_sequences_align_with_zero_cost() {
        let r = words("a b c");
        let ops = align_words(&r, &r);
        assert_eq!(counts(&ops), (0, 0, 0));
        assert_eq!(ops.len(), 3);
    }

    #[test]
    fn single_substitution_is_found() {
        let ops = align_words(&words("a b c"), &words("a x c"));
        assert_eq!(counts(&ops), (1, 0, 0));
    }

    #[test]
    fn empty_hypothesis_is_all_deletions() {
        let ops = align_words(&words("a b"), &words(""));
        assert_eq!(counts(&ops), (0, 2, 0));
    }

    /// Memoized recursive edit distance, structurally independent of the
    /// iterative table in `align_words`.
    fn brute_distance(r: &[String], h: &[String]) -> usize {
        fn go(
            r: &[String],
            h: &[String],
            i: usize,
            j: usize,
            memo: &mut Vec<Option<usize>>,
            m: usize,
        ) -> usize {
            if i == r.len() {
                return h.len() - j;
            }
            if j == h.len() {
                return r.len() - i;
            }
            if let Some(v) = memo[i * m + j] {
                return v;
            }
            let sub = go(r, h, i + 1, j + 1, memo, m) + usize::from(r[i] != h[j]);
            let del = go(r, h, i + 1, j, memo, m) + 1;
            let ins = go(r, h, i, j + 1, memo, m) + 1;
            let v = sub.min(del).min(ins);
            memo[i * m + j] = Some(v);
            v
        }
        let m = h.len() + 1;
        let mut memo = vec![None; (r.len() + 1) * m];
        go(r, h, 0, 0, &mut memo, m)
    }

    #[test]
    fn alignment_cost_matches_brute_force_on_short_strings() {
        // All pairs over a 3-symbol alphabet up to length 4 here; the
        // acceptance suite runs the full length-6 grid.
        let symbols = ["a", "b", "c"];
        let mut all: Vec<Vec<String>> = vec![vec![]];
        for len in 1..=4 {
            let mut next = Vec::new();
            fn gen(
                symbols: &[&str],
                cur: &mut Vec<String>,
                len: usize,
                out: &mut Vec<Vec<String>>,
            ) {
                if cur.len() == len {
                    out.push(cur.clone());
                    return;
                }
                for s in symbols {
                    cur.push(s.to_string());
                    gen(symbols, cur, len, out);
                    cur.pop();
                }
            }
            gen(&symbols, &mut Vec::new(), len, &mut next);
            all.extend(next);
        }
        for r in &all {
            for h in &all {
                let got: usize = align_words(r, h).iter().map(|o| o.cost()).sum();
                assert_eq!(got, brute_distance(r, h), "r={r:?} h={h:?}");
            }
        }
    }

    #[test]
    fn cost_is_symmetric_with_roles_swapped() {
        let pairs = [
            ("a b c", "a x c y"),
            ("x", ""),
            ("a a b", "b a a"),
            ("the cat sat", "the mat"),
        ];
        for (r, h) in pairs {
            let fwd: usize = align_words(&words(r), &words(h))
                .iter()
                .map(|o| o.cost())
                .sum();
            let rev: usize = align_words(&words(h), &words(r))
                .iter()
                .map(|o| o.cost())
                .sum();
            assert_eq!(fwd, rev);
        }
    }

    #[test]
    fn wer_percentages_match_hand_arithmetic() {
        let perfect = wer(&[align_words(&words("a b c"), &words("a b c"))]).unwrap();
        assert_eq!(perfect.wer(), 0.0);
        let one_sub = wer(&[align_words(&words("a b c"), &words("a x c"))]).unwrap();
        assert_eq!(one_sub.wer_display(), "33.3");
        let one_ins = wer(&[align_words(&words("a b c d"), &words("a b x c d"))]).unwrap();
        assert_eq!(one_ins.insertions, 1);
        assert_eq!(one_ins.wer_display(), "25.0");
    }

    #[test]
    fn wer_requires_reference_words() {
        assert!(matches!(
            wer(&[align_words(&words(""), &words("a"))]),
            Err(EvalError::EmptyReference)
        ));
    }

    fn span(start: usize, end: usize) -> TagSpan {
        TagSpan {
            utt_id: "u1".into(),
            start,
            end,
            label: TagLabel::ProperNoun,
        }
    }

    #[test]
    fn exact_match_span_extracts_identical_text() {
        let r = words("we saw jean valjean today");
        let h = r.clone();
        let ops = align_words(&r, &h);
        let segs = extract_tagged_segments(&r, &h, &ops, &[span(2, 3)]).unwrap();
        assert_eq!(
            segs,
            vec![SegmentPair {
                reference: "jean valjean".into(),
                hypothesis: "jean valjean".into()
            }]
        );
    }

    #[test]
    fn split_recognition_keeps_inserted_words_in_the_span() {
        let r = words("we saw jean valjean today");
        let h = words("we saw jean val jean today");
        let ops = align_words(&r, &h);
        let segs = extract_tagged_segments(&r, &h, &ops, &[span(2, 3)]).unwrap();
        assert_eq!(segs[0].reference, "jean valjean");
        assert_eq!(segs[0].hypothesis, "jean val jean");
    }

    #[test]
    fn deleted_span_yields_empty_hypothesis() {
        let r = words("visit saint paul now");
        let h = words("visit now");
        let ops = align_words(&r, &h);
        let segs = extract_tagged_segments(&r, &h, &ops, &[span(1, 2)]).unwrap();
        assert_eq!(segs[0].reference, "saint paul");
        assert_eq!(segs[0].hypothesis, "");
    }

    #[test]
    fn insertion_before_span_start_stays_outside() {
        let r = words("a b c");
        let h = words("a x b c");
        let ops = align_words(&r, &h);
        // Insertion "x" anchors to ref position 0, outside span [1, 2].
        let segs = extract_tagged_segments(&r, &h, &ops, &[span(1, 2)]).unwrap();
        assert_eq!(segs[0].hypothesis, "b c");
    }

    #[test]
    fn spans_cover_every_tagged_word_exactly_once() {
        let r = words("one two three four five six");
        let h = words("one too three for five");
        let ops = align_words(&r, &h);
        let tags = vec![span(0, 1), span(2, 3), span(4, 5)];
        let segs = extract_tagged_segments(&r, &h, &ops, &tags).unwrap();
        let total_ref_words: usize = segs
            .iter()
            .map(|s| s.reference.split_whitespace().count())
            .sum();
        assert_eq!(total_ref_words, 6);
        let rejoined: Vec<String> = segs
            .iter()
            .flat_map(|s| s.reference.split_whitespace().map(|w| w.to_string()))
            .collect();
        assert_eq!(rejoined, r);
    }

    #[test]
    fn invalid_span_is_rejected() {
        let r = words("a b");
        let h = words("a b");
        let ops = align_words(&r, &h);
        assert!(matches!(
            extract_tagged_segments(&r, &h, &ops, &[span(1, 2)]),
            Err(EvalError::InvalidSpan { .. })
        ));
    }

    #[test]
    fn cer_hand_cases() {
        let identical = vec![SegmentPair {
            reference: "saint paul".into(),
            hypothesis: "saint paul".into(),
        }];
        assert_eq!(cer(&identical).unwrap(), 0.0);
        let one_sub = vec![SegmentPair {
            reference: "cat".into(),
            hypothesis: "bat".into(),
        }];
        assert!((cer(&one_sub).unwrap() - 100.0 / 3.0).abs() < 1e-12);
        let deleted = vec![SegmentPair {
            reference: "ab".into(),
            hypothesis: "".into(),
        }];
        assert_eq!(cer(&deleted).unwrap(), 100.0);
    }

    #[test]
    fn cer_counts_spaces_inside_segments() {
        let pair = vec![SegmentPair {
            reference: "a b".into(),
            hypothesis: "ab".into(),
        }];
        // One deletion (the space) over three reference characters.
        assert!((cer(&pair).unwrap() - 100.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn perfect_hypothesis_has_zero_cer_for_any_tags() {
        let r = words("alpha beta gamma delta");
        let ops = align_words(&r, &r);
        for tags in [vec![span(0, 0)], vec![span(1, 3)], vec![span(0, 3)]] {
            let segs = extract_tagged_segments(&r, &r, &ops, &tags).unwrap();
            assert_eq!(cer(&segs).unwrap(), 0.0);
        }
    }

    #[test]
    fn rare_word_selection_cases() {
        let mut counts_map = BTreeMap::new();
        for w in ["a", "b", "c", "d", "e", "f", "g", "h", "i", "j"] {
            counts_map.insert(w.to_string(), 5); // uniform counts
        }
        let selected = select_rare_words(&counts_map, 0.8);
        assert_eq!(selected.len(), 8);
        // Uniform counts: ties break lexicographically, so a..h survive.
        assert!(selected.contains("a") && selected.contains("h"));
        assert!(!selected.contains("i") && !selected.contains("j"));
        assert!(select_rare_words(&counts_map, 0.0).is_empty());
    }

    #[test]
    fn zipf_selection_matches_sort_and_cut_oracle() {
        // 1000 words with Zipf-ish counts.
        let mut counts_map = BTreeMap::new();
        for i in 0..1000u64 {
            counts_map.insert(format!("w{i:04}"), 10_000 / (i + 1));
        }
        let selected = select_rare_words(&counts_map, 0.8);
        // Oracle: independent sort by (count, word) and cut at 800.
        let mut order: Vec<(u64, String)> =
            counts_map.iter().map(|(w, &c)| (c, w.clone())).collect();
        order.sort();
        let expected: BTreeSet<String> = order.into_iter().take(800).map(|(_, w)| w).collect();
        assert_eq!(selected, expected);
    }

    #[test]
    fn threshold_boundary_is_exact() {
        // 10 words at threshold 0.3: 3/10 <= 0.3 must select exactly 3.
        let mut counts_map = BTreeMap::new();
        for w in ["a", "b", "c", "d", "e", "f", "g", "h", "i", "j"] {
            counts_map.insert(w.to_string(), 1);
        }
        assert_eq!(select_rare_words(&counts_map, 0.3).len(), 3);
    }

    #[test]
    fn cer_space_rule_is_configurable() {
        let pair = vec![SegmentPair {
            reference: "a b".into(),
            hypothesis: "ab".into(),
        }];
        assert!((cer_with(&pair, true).unwrap() - 100.0 / 3.0).abs() < 1e-12);
        assert_eq!(cer_with(&pair, false).unwrap(), 0.0);
    }

    #[test]
    fn token_basis_cuts_by_occurrence_mass() {
        // Counts: a=1, b=1, c=2, d=16 -> total 20. At 0.2, the cheapest
        // words fit while their cumulative share stays within 4 tokens.
        let mut counts_map = BTreeMap::new();
        for (w, c) in [("a", 1u64), ("b", 1), ("c", 2), ("d", 16)] {
            counts_map.insert(w.to_string(), c);
        }
        let picked = select_rare_words_by(&counts_map, 0.2, RareWordBasis::Tokens);
        let expected: BTreeSet<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        assert_eq!(picked, expected);
        // Type basis at the same threshold takes bottom 20% of 4 types.
        let by_types = select_rare_words_by(&counts_map, 0.25, RareWordBasis::Types);
        assert_eq!(by_types.len(), 1);
    }

    #[test]
    fn tag_file_roundtrip() {
        let text = "u1\t0\t1\tpropernoun\nu2\t3\t3\trareword\n";
        let tags = read_tags(std::io::Cursor::new(text)).unwrap();
        assert_eq!(tags.len(), 2);
        assert_eq!(tags[0].label, TagLabel::ProperNoun);
        assert_eq!(tags[1].start, 3);
        assert!(matches!(
            read_tags(std::io::Cursor::new("u1\t0\t1\n")),
            Err(EvalError::MalformedLine(1))
        ));
    }
}
