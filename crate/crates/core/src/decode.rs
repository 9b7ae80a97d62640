//! One-pass token-passing beam decoder over a lexicon prefix tree with
//! n-gram LM scoring.
//!
//! The decoder's state topology mirrors the forced-alignment graphs:
//! mandatory silence at the utterance edges, optional silence between
//! words, one HMM state per unit with 0.5/0.5 self-loop and forward mass,
//! and uniform pronunciation branch mass (applied at word exits). A
//! hypothesis scored by the decoder therefore totals exactly
//! `alignment log-likelihood + lm_weight * ln(10) * LM log10-prob +
//! word_insertion_penalty * word_count`, which keeps every score auditable
//! against the aligner. LM scores apply at word ends; no look-ahead.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufRead, BufReader};
use std::path::Path;

use thiserror::Error;

use crate::am::AcousticModel;
use crate::context::{expand_contexts, CdConfig};
use crate::corpus::Features;
use crate::tree::{TiedStateMap, TreeError, SIL_TIED_ID};
use crate::units::{Lexicon, UnitInventory};

pub const LN_10: f64 = std::f64::consts::LN_10;
const SENTENCE_START: &str = "<s>";
const SENTENCE_END: &str = "</s>";

#[derive(Debug, Error)]
pub enum DecodeError {
    #[error("line {line}: malformed ARPA entry: {message}")]
    MalformedArpa { line: usize, message: String },
    #[error("ARPA order mismatch: section {order} lists {found} n-grams, header says {expected}")]
    OrderMismatch {
        order: usize,
        found: usize,
        expected: usize,
    },
    #[error("no hypothesis survived the beam; widen it")]
    NoHypothesis,
    #[error("empty lexicon or no word is in both lexicon and LM")]
    EmptyVocabulary,
    #[error("bad decode config: {0}")]
    BadConfig(String),
    #[error("dimension mismatch: {0} vs {1}")]
    DimMismatch(usize, usize),
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Backoff n-gram language model in log10 domain, as stored in ARPA files.
#[derive(Debug, Clone)]
pub struct NGramLm {
    order: usize,
    vocab: Vec<String>,
    index: BTreeMap<String, u32>,
    // tables[n-1]: n-gram -> (log10 prob, log10 backoff)
    tables: Vec<BTreeMap<Vec<u32>, (f64, f64)>>,
}

impl NGramLm {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn word_id(&self, word: &str) -> Option<u32> {
        self.index.get(word).copied()
    }

    pub fn word(&self, id: u32) -> &str {
        &self.vocab[id as usize]
    }

    pub fn contains(&self, word: &str) -> bool {
        self.index.contains_key(word)
    }

    /// `log10 P(word | history)` with standard backoff: the longest listed
    /// suffix n-gram wins; unlisted histories back off with weight 0.
    pub fn log10_prob(&self, history: &[u32], word: u32) -> f64 {
        let start = history.len().saturating_sub(self.order - 1);
        self.backoff_score(&history[start..], word)
    }

    fn backoff_score(&self, hist: &[u32], word: u32) -> f64 {
        let mut key = Vec::with_capacity(hist.len() + 1);
        key.extend_from_slice(hist);
        key.push(word);
        if let Some(&(p, _)) = self.tables[hist.len()].get(&key) {
            return p;
        }
        if hist.is_empty() {
            return -99.0; // word absent from the unigram section
        }
        let backoff = self.tables[hist.len() - 1]
            .get(hist)
            .map(|&(_, b)| b)
            .unwrap_or(0.0);
        backoff + self.backoff_score(&hist[1..], word)
    }

    /// History state after emitting `word`, truncated to order-1 words.
    pub fn advance(&self, history: &[u32], word: u32) -> Vec<u32> {
        let mut h = history.to_vec();
        h.push(word);
        let keep = self.order.saturating_sub(1);
        if h.len() > keep {
            h.drain(..h.len() - keep);
        }
        h
    }

    /// Initial history: `[<s>]` when the LM has a sentence-start token.
    pub fn initial_history(&self) -> Vec<u32> {
        match self.word_id(SENTENCE_START) {
            Some(id) if self.order > 1 => vec![id],
            _ => Vec::new(),
        }
    }

    /// `log10 P(</s> | history)`, or 0 when the LM has no end token.
    pub fn end_score(&self, history: &[u32]) -> f64 {
        match self.word_id(SENTENCE_END) {
            Some(id) => self.log10_prob(history, id),
            None => 0.0,
        }
    }
}

/// Parses an ARPA file. Missing backoff weights default to 0.0 (log10).
pub fn load_arpa<R: BufRead>(r: R) -> Result<NGramLm, DecodeError> {
    let mut lines = Vec::new();
    for line in r.lines() {
        lines.push(line?);
    }
    let mut i = 0usize;
    let bad = |line: usize, message: &str| DecodeError::MalformedArpa {
        line: line + 1,
        message: message.to_string(),
    };
    // Skip anything before \data\ (ARPA files may carry a preamble).
    while i < lines.len() && lines[i].trim() != "\\data\\" {
        i += 1;
    }
    if i == lines.len() {
        return Err(bad(0, "missing \\data\\ section"));
    }
    i += 1;
    let mut expected: Vec<usize> = Vec::new();
    while i < lines.len() {
        let line = lines[i].trim();
        if line.is_empty() {
            i += 1;
            continue;
        }
        if line.starts_with('\\') {
            break;
        }
        let rest = line
            .strip_prefix("ngram ")
            .ok_or_else(|| bad(i, "expected `ngram N=count`"))?;
        let (n, count) = rest
            .split_once('=')
            .ok_or_else(|| bad(i, "expected `ngram N=count`"))?;
        let n: usize = n.trim().parse().map_err(|_| bad(i, "bad order"))?;
        let count: usize = count.trim().parse().map_err(|_| bad(i, "bad count"))?;
        if n != expected.len() + 1 {
            return Err(bad(i, "ngram orders must be consecutive from 1"));
        }
        expected.push(count);
        i += 1;
    }
    if expected.is_empty() {
        return Err(bad(i.min(lines.len() - 1), "no ngram counts"));
    }
    let order = expected.len();
    let mut vocab: Vec<String> = Vec::new();
    let mut index: BTreeMap<String, u32> = BTreeMap::new();
    let mut tables: Vec<BTreeMap<Vec<u32>, (f64, f64)>> = vec![BTreeMap::new(); order];
    let mut current: Option<usize> = None;
    while i < lines.len() {
        let line = lines[i].trim();
        if line.is_empty() {
            i += 1;
            continue;
        }
        if line == "\\end\\" {
            current = None;
            i += 1;
            continue;
        }
        if let Some(section) = line
            .strip_prefix('\\')
            .and_then(|s| s.strip_suffix("-grams:"))
        {
            let n: usize = section.parse().map_err(|_| bad(i, "bad section header"))?;
            if n == 0 || n > order {
                return Err(bad(i, "section order out of range"));
            }
            current = Some(n);
            i += 1;
            continue;
        }
        let n = current.ok_or_else(|| bad(i, "entry outside any section"))?;
        let mut parts = line.split_whitespace();
        let prob: f64 = parts
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| bad(i, "bad probability"))?;
        if prob > 0.0 {
            return Err(bad(i, "positive log probability"));
        }
        let mut words = Vec::with_capacity(n);
        for _ in 0..n {
            words.push(parts.next().ok_or_else(|| bad(i, "too few words"))?);
        }
        let backoff: f64 = match parts.next() {
            None => 0.0,
            Some(t) => t.parse().map_err(|_| bad(i, "bad backoff"))?,
        };
        if parts.next().is_some() {
            return Err(bad(i, "trailing fields"));
        }
        let ids: Vec<u32> = if n == 1 {
            let w = words[0];
            let id = *index.entry(w.to_string()).or_insert_with(|| {
                vocab.push(w.to_string());
                (vocab.len() - 1) as u32
            });
            vec![id]
        } else {
            words
                .iter()
                .map(|w| {
                    index
                        .get(*w)
                        .copied()
                        .ok_or_else(|| bad(i, &format!("word {w:?} not in vocabulary")))
                })
                .collect::<Result<_, _>>()?
        };
        tables[n - 1].insert(ids, (prob, backoff));
        i += 1;
    }
    for (n, (&exp, table)) in expected.iter().zip(&tables).enumerate() {
        if table.len() != exp {
            return Err(DecodeError::OrderMismatch {
                order: n + 1,
                found: table.len(),
                expected: exp,
            });
        }
    }
    Ok(NGramLm {
        order,
        vocab,
        index,
        tables,
    })
}

pub fn load_arpa_file<P: AsRef<Path>>(path: P) -> Result<NGramLm, DecodeError> {
    load_arpa(BufReader::new(File::open(path)?))
}

/// A word completing at a trie node. `log_mass` is the log fraction of the
/// word's pronunciations that map to this tied-state path (0 for
/// single-pronunciation words).
#[derive(Debug, Clone, PartialEq)]
pub struct WordEnd {
    pub word: String,
    pub log_mass: f64,
}

#[derive(Debug, Clone, Default)]
struct TrieNode {
    children: BTreeMap<u32, usize>,
    word_ends: Vec<WordEnd>,
}

/// Lexicon prefix tree over tied-state sequences. Pronunciations sharing a
/// prefix share nodes; homophones share their whole path and stack word
/// labels on one node.
#[derive(Debug, Clone)]
pub struct PrefixTree {
    nodes: Vec<TrieNode>,
    tied: Vec<u32>, // tied state per node; node 0 is the non-emitting root
}

impl PrefixTree {
    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    /// Count of nodes carrying at least one word label, i.e. distinct
    /// tied-state pronunciation paths.
    pub fn word_end_nodes(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| !n.word_ends.is_empty())
            .count()
    }

    pub fn word_ends(&self, node: usize) -> &[WordEnd] {
        &self.nodes[node].word_ends
    }

    fn children(&self, node: usize) -> impl Iterator<Item = (u32, usize)> + '_ {
        self.nodes[node].children.iter().map(|(&t, &n)| (t, n))
    }
}

/// Builds the prefix tree: every pronunciation expands to tri-contexts
/// (word-internal, sentinels at the edges), ties to a state sequence, and
/// is inserted with shared prefixes merged.
pub fn build_prefix_tree(
    lexicon: &Lexicon,
    tied_map: &TiedStateMap,
    inventory: &UnitInventory,
    config: &CdConfig,
) -> Result<PrefixTree, DecodeError> {
    if lexicon.is_empty() {
        return Err(DecodeError::EmptyVocabulary);
    }
    let mut tree = PrefixTree {
        nodes: vec![TrieNode::default()],
        tied: vec![u32::MAX],
    };
    for (word, prons) in lexicon.iter() {
        let total = prons.len() as f64;
        for pron in prons {
            let ctxs = expand_contexts(pron, inventory, config);
            let mut node = 0usize;
            for ctx in &ctxs {
                let tied = tied_map.tie(ctx)?;
                node = match tree.nodes[node].children.get(&tied) {
                    Some(&n) => n,
                    None => {
                        let n = tree.nodes.len();
                        tree.nodes.push(TrieNode::default());
                        tree.tied.push(tied);
                        tree.nodes[node].children.insert(tied, n);
                        n
                    }
                };
            }
            // Merge repeated word labels: two pronunciations of one word
            // can tie to the same path, pooling their branch mass.
            let ends = &mut tree.nodes[node].word_ends;
            match ends.iter_mut().find(|e| e.word == word) {
                Some(e) => {
                    let mass = (e.log_mass.exp() + 1.0 / total).ln();
                    e.log_mass = mass;
                }
                None => ends.push(WordEnd {
                    word: word.to_string(),
                    log_mass: (1.0 / total).ln(),
                }),
            }
        }
    }
    Ok(tree)
}

/// Decoder knobs. The beam is a log-score window below the frame-best
/// token; `max_active` caps live tokens per frame by score rank.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecodeConfig {
    pub beam: f64,
    pub max_active: usize,
    pub lm_weight: f64,
    pub word_insertion_penalty: f64,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            beam: 200.0,
            max_active: 2000,
            lm_weight: 1.0,
            word_insertion_penalty: 0.0,
        }
    }
}

/// Best decoding of one utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    pub words: Vec<String>,
    /// Combined score: acoustic + lm_weight*ln(10)*lm_log10 + penalty*words.
    pub total_score: f64,
    /// Emission plus transition log-probability along the decoded path.
    pub acoustic_score: f64,
    /// LM log10 probability of the word sequence (with `</s>` if present).
    pub lm_log10: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum TokenPos {
    StartSil,
    BetweenSil,
    EndSil,
    Node(usize),
}

#[derive(Debug, Clone)]
struct Token {
    acoustic: f64,
    lm10: f64,
    words: Vec<u32>, // decoder vocab ids, lexicographically ordered
}

impl Token {
    fn total(&self, cfg: &DecodeConfig) -> f64 {
        self.acoustic
            + cfg.lm_weight * LN_10 * self.lm10
            + cfg.word_insertion_penalty * self.words.len() as f64
    }
}

/// One-pass Viterbi beam search. Ties between equal-score tokens break
/// toward the lexicographically smaller word sequence; `max_active`
/// pruning ranks by score with a deterministic state-order tie-break.
pub fn decode(
    features: &Features,
    model: &AcousticModel,
    tree: &PrefixTree,
    lm: &NGramLm,
    config: &DecodeConfig,
) -> Result<Hypothesis, DecodeError> {
    if config.beam.is_nan() || config.beam <= 0.0 {
        return Err(DecodeError::BadConfig(format!("beam {} <= 0", config.beam)));
    }
    if config.max_active == 0 {
        return Err(DecodeError::BadConfig("max_active is 0".into()));
    }
    if features.dim() != model.dim {
        return Err(DecodeError::DimMismatch(features.dim(), model.dim));
    }
    let frames = features.frames();
    if frames == 0 {
        return Err(DecodeError::NoHypothesis);
    }

    // Decoder vocabulary: lexicon words that the LM knows, in sorted order
    // so word-id comparison is string comparison.
    let mut dec_vocab: Vec<(String, u32)> = Vec::new(); // (word, lm id)
    for (node, _) in tree.nodes.iter().enumerate() {
        for end in tree.word_ends(node) {
            if end.word == SENTENCE_START || end.word == SENTENCE_END {
                continue;
            }
            if let Some(lm_id) = lm.word_id(&end.word) {
                dec_vocab.push((end.word.clone(), lm_id));
            }
        }
    }
    dec_vocab.sort();
    dec_vocab.dedup();
    if dec_vocab.is_empty() {
        return Err(DecodeError::EmptyVocabulary);
    }
    let dec_id_of = |word: &str| -> Option<u32> {
        dec_vocab
            .binary_search_by(|(w, _)| w.as_str().cmp(word))
            .ok()
            .map(|i| i as u32)
    };

    let half = 0.5f64.ln();
    let quarter = 0.25f64.ln();
    let num_tied = model.num_tied_states() as usize;
    let mut emissions = vec![0.0f64; num_tied];
    let compute_emissions = |t: usize, out: &mut Vec<f64>| {
        let x = features.row(t);
        for (id, pdf) in model.pdfs.iter().enumerate() {
            out[id] = pdf.log_pdf(x);
        }
    };

    type Key = (TokenPos, Vec<u32>); // position + LM history (lm ids)
    let mut current: BTreeMap<Key, Token> = BTreeMap::new();
    compute_emissions(0, &mut emissions);
    current.insert(
        (TokenPos::StartSil, lm.initial_history()),
        Token {
            acoustic: emissions[SIL_TIED_ID as usize],
            lm10: 0.0,
            words: Vec::new(),
        },
    );

    // Viterbi recombination: best total wins; exact ties go to the
    // lexicographically smaller word sequence.
    fn push(
        key: (TokenPos, Vec<u32>),
        tok: Token,
        next: &mut BTreeMap<(TokenPos, Vec<u32>), Token>,
        cfg: &DecodeConfig,
    ) {
        match next.get_mut(&key) {
            None => {
                next.insert(key, tok);
            }
            Some(existing) => {
                let (a, b) = (tok.total(cfg), existing.total(cfg));
                if a > b || (a == b && tok.words < existing.words) {
                    *existing = tok;
                }
            }
        }
    }

    for t in 1..frames {
        compute_emissions(t, &mut emissions);
        let mut next: BTreeMap<Key, Token> = BTreeMap::new();
        let enter_words = |mass: f64,
                           hist: &[u32],
                           tok: &Token,
                           emissions: &[f64],
                           next: &mut BTreeMap<Key, Token>| {
            for (tied, child) in tree.children(0) {
                let t2 = Token {
                    acoustic: tok.acoustic + mass + emissions[tied as usize],
                    lm10: tok.lm10,
                    words: tok.words.clone(),
                };
                push((TokenPos::Node(child), hist.to_vec()), t2, next, config);
            }
        };

        for ((pos, hist), tok) in &current {
            let sil_emit = emissions[SIL_TIED_ID as usize];
            match pos {
                TokenPos::StartSil | TokenPos::BetweenSil => {
                    // Self-loop, or forward into a word.
                    let t2 = Token {
                        acoustic: tok.acoustic + half + sil_emit,
                        ..tok.clone()
                    };
                    push((*pos, hist.clone()), t2, &mut next, config);
                    enter_words(half, hist, tok, &emissions, &mut next);
                }
                TokenPos::EndSil => {
                    let t2 = Token {
                        acoustic: tok.acoustic + half + sil_emit,
                        ..tok.clone()
                    };
                    push((TokenPos::EndSil, hist.clone()), t2, &mut next, config);
                }
                TokenPos::Node(n) => {
                    let t2 = Token {
                        acoustic: tok.acoustic + half + emissions[tree.tied[*n] as usize],
                        ..tok.clone()
                    };
                    push((TokenPos::Node(*n), hist.clone()), t2, &mut next, config);
                    for (tied, child) in tree.children(*n) {
                        let t2 = Token {
                            acoustic: tok.acoustic + half + emissions[tied as usize],
                            lm10: tok.lm10,
                            words: tok.words.clone(),
                        };
                        push((TokenPos::Node(child), hist.clone()), t2, &mut next, config);
                    }
                    for end in tree.word_ends(*n) {
                        let Some(dec_id) = dec_id_of(&end.word) else {
                            continue;
                        };
                        let lm_id = dec_vocab[dec_id as usize].1;
                        let lm10 = tok.lm10 + lm.log10_prob(hist, lm_id);
                        let hist2 = lm.advance(hist, lm_id);
                        let mut words = tok.words.clone();
                        words.push(dec_id);
                        let exited = Token {
                            acoustic: tok.acoustic + end.log_mass,
                            lm10,
                            words,
                        };
                        // Next word directly (skip silence), via optional
                        // silence, or wind down into the final silence.
                        enter_words(quarter, &hist2, &exited, &emissions, &mut next);
                        let sil = Token {
                            acoustic: exited.acoustic + quarter + sil_emit,
                            ..exited.clone()
                        };
                        push(
                            (TokenPos::BetweenSil, hist2.clone()),
                            sil,
                            &mut next,
                            config,
                        );
                        let end_tok = Token {
                            acoustic: exited.acoustic + half + sil_emit,
                            ..exited
                        };
                        push((TokenPos::EndSil, hist2), end_tok, &mut next, config);
                    }
                }
            }
        }

        // Beam + max_active pruning on combined scores.
        if !next.is_empty() {
            let best = next
                .values()
                .map(|t| t.total(config))
                .fold(f64::NEG_INFINITY, f64::max);
            next.retain(|_, t| t.total(config) >= best - config.beam);
            if next.len() > config.max_active {
                let mut ranked: Vec<(Key, Token)> = next.into_iter().collect();
                ranked.sort_by(|(ka, ta), (kb, tb)| {
                    tb.total(config)
                        .total_cmp(&ta.total(config))
                        .then_with(|| ka.cmp(kb))
                });
                ranked.truncate(config.max_active);
                next = ranked.into_iter().collect();
            }
        }
        current = next;
        if current.is_empty() {
            return Err(DecodeError::NoHypothesis);
        }
    }

    // Finish: only tokens in the mandatory end silence are complete.
    let mut best: Option<Hypothesis> = None;
    for ((pos, hist), tok) in &current {
        if *pos != TokenPos::EndSil {
            continue;
        }
        let lm10 = tok.lm10 + lm.end_score(hist);
        let acoustic = tok.acoustic + half; // exit arc
        let total = acoustic
            + config.lm_weight * LN_10 * lm10
            + config.word_insertion_penalty * tok.words.len() as f64;
        let words: Vec<String> = tok
            .words
            .iter()
            .map(|&id| dec_vocab[id as usize].0.clone())
            .collect();
        let cand = Hypothesis {
            words,
            total_score: total,
            acoustic_score: acoustic,
            lm_log10: lm10,
        };
        let take = match &best {
            None => true,
            Some(b) => {
                cand.total_score > b.total_score
                    || (cand.total_score == b.total_score && cand.words < b.words)
            }
        };
        if take {
            best = Some(cand);
        }
    }
    best.ok_or(DecodeError::NoHypothesis)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::am::{viterbi_align, DiagGaussian, Gmm};
    use crate::context::{build_alignment_graph, HmmTopology, TriContext, UtteranceGraph};
    use crate::units::{build_lexicon, CaseMode, Position, UnitId};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::io::Cursor;

    // A hand-normalized toy LM: unigrams 0.25 each over {a, b, c, </s>},
    // <s> at -99; bigrams for history "a" with backoff 0.4 so every
    // conditional sums to one.
    const TOY_ARPA: &str = "\\data\\
ngram 1=5
ngram 2=2

\\1-grams:
-99\t<s>\t-0.0
-0.6020599913279624\ta\t-0.3979400086720376
-0.6020599913279624\tb
-0.6020599913279624\tc
-0.6020599913279624\t</s>

\\2-grams:
-0.3010299956639812\ta b
-0.5228787452803376\ta c

\\end\\
";

    #[test]
    fn unigram_scores_are_listed_values() {
        let lm = load_arpa(Cursor::new(TOY_ARPA)).unwrap();
        assert_eq!(lm.order(), 2);
        let b = lm.word_id("b").unwrap();
        let p = lm.log10_prob(&[], b);
        assert!((p - (-0.6020599913279624)).abs() < 1e-12);
        assert!((10f64.powf(p) - 0.25).abs() < 1e-12);
    }

    #[test]
    fn listed_bigram_wins_and_unlisted_backs_off() {
        let lm = load_arpa(Cursor::new(TOY_ARPA)).unwrap();
        let a = lm.word_id("a").unwrap();
        let b = lm.word_id("b").unwrap();
        let listed: f64 = "-0.3010299956639812".parse().unwrap();
        assert!((lm.log10_prob(&[a], b) - listed).abs() < 1e-12);
        // P(a | a) backs off: bo(a) + P(a) = log10(0.4) + log10(0.25)
        let got = lm.log10_prob(&[a], a);
        let expected = 0.4f64.log10() + 0.25f64.log10();
        assert!((got - expected).abs() < 1e-12);
    }

    #[test]
    fn every_context_is_normalized() {
        let lm = load_arpa(Cursor::new(TOY_ARPA)).unwrap();
        // Exhaustive summation oracle: sum_w P(w|h) over all real words
        // plus </s> must be 1 for every one-word history.
        let end = lm.word_id("</s>").unwrap();
        let targets: Vec<u32> = ["a", "b", "c"]
            .iter()
            .map(|w| lm.word_id(w).unwrap())
            .chain(std::iter::once(end))
            .collect();
        for hist_word in ["<s>", "a", "b", "c"] {
            let h = lm.word_id(hist_word).unwrap();
            let total: f64 = targets
                .iter()
                .map(|&w| 10f64.powf(lm.log10_prob(&[h], w)))
                .sum();
            assert!(
                (total - 1.0).abs() < 1e-4,
                "sum over history {hist_word} = {total}"
            );
        }
    }

    #[test]
    fn missing_backoff_defaults_to_zero() {
        let lm = load_arpa(Cursor::new(TOY_ARPA)).unwrap();
        let b = lm.word_id("b").unwrap();
        let c = lm.word_id("c").unwrap();
        // History "b" has no backoff entry: P(c|b) = P(c).
        assert!((lm.log10_prob(&[b], c) - lm.log10_prob(&[], c)).abs() < 1e-12);
    }

    #[test]
    fn malformed_arpa_is_rejected_with_line() {
        let text = "\\data\\\nngram 1=1\n\\1-grams:\nnot-a-number a\n\\end\\\n";
        match load_arpa(Cursor::new(text)) {
            Err(DecodeError::MalformedArpa { line, .. }) => assert_eq!(line, 4),
            other => panic!("unexpected: {other:?}"),
        }
    }

    #[test]
    fn positive_log_probability_is_rejected() {
        let text = "\\data\\\nngram 1=1\n\\1-grams:\n0.5 a\n\\end\\\n";
        assert!(matches!(
            load_arpa(Cursor::new(text)),
            Err(DecodeError::MalformedArpa { line: 4, .. })
        ));
    }

    #[test]
    fn count_mismatch_is_rejected() {
        let text = "\\data\\\nngram 1=3\n\\1-grams:\n-0.5 a\n-0.5 b\n\\end\\\n";
        assert!(matches!(
            load_arpa(Cursor::new(text)),
            Err(DecodeError::OrderMismatch {
                order: 1,
                found: 2,
                expected: 3
            })
        ));
    }

    fn inv() -> UnitInventory {
        UnitInventory::graphemic(CaseMode::Lowercase)
    }

    fn ci_model(inv: &UnitInventory, means: &[(&str, f64)]) -> AcousticModel {
        let map = TiedStateMap::context_independent(inv);
        let mut pdfs: Vec<Gmm> = (0..map.num_tied_states())
            .map(|_| Gmm::single(DiagGaussian::new(vec![0.0], vec![1.0], 1e-4)))
            .collect();
        for &(sym, mean) in means {
            for pos in [Position::WordBoundary, Position::Internal] {
                if let Some(id) = inv.id(sym, pos) {
                    let tied = map.tie(&TriContext::ci(id)).unwrap();
                    pdfs[tied as usize] =
                        Gmm::single(DiagGaussian::new(vec![mean], vec![1.0], 1e-4));
                }
            }
        }
        AcousticModel {
            topology: HmmTopology::default(),
            tied_map: map,
            pdfs,
            dim: 1,
        }
    }

    #[test]
    fn one_word_lexicon_gives_linear_chain() {
        let inv = inv();
        let (lex, _) = build_lexicon(&["abc".to_string()], &inv).unwrap();
        let map = TiedStateMap::context_independent(&inv);
        let tree = build_prefix_tree(&lex, &map, &inv, &CdConfig::default()).unwrap();
        assert_eq!(tree.num_nodes(), 4); // root + 3 units
        assert_eq!(tree.word_end_nodes(), 1);
    }

    #[test]
    fn identical_pronunciations_share_one_path() {
        let inv = UnitInventory::graphemic(CaseMode::Preserve);
        let (lex, _) = build_lexicon(&["DNN".to_string(), "D.N.N.".to_string()], &inv).unwrap();
        let map = TiedStateMap::context_independent(&inv);
        let tree = build_prefix_tree(&lex, &map, &inv, &CdConfig::default()).unwrap();
        assert_eq!(tree.word_end_nodes(), 1);
        let terminal = (0..tree.num_nodes())
            .find(|&n| !tree.word_ends(n).is_empty())
            .unwrap();
        let words: Vec<&str> = tree
            .word_ends(terminal)
            .iter()
            .map(|e| e.word.as_str())
            .collect();
        assert_eq!(words, vec!["D.N.N.", "DNN"]);
    }

    #[test]
    fn path_count_equals_distinct_pronunciations() {
        let inv = inv();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut words = Vec::new();
        for _ in 0..10 {
            let len = rng.random_range(2..6);
            let w: String = (0..len)
                .map(|_| char::from(b'a' + rng.random_range(0..26u8)))
                .collect();
            words.push(w);
        }
        words.sort();
        words.dedup();
        let (lex, _) = build_lexicon(&words, &inv).unwrap();
        let map = TiedStateMap::context_independent(&inv);
        let tree = build_prefix_tree(&lex, &map, &inv, &CdConfig::default()).unwrap();
        // CI tying: distinct unit sequences stay distinct tied sequences.
        let mut distinct: Vec<Vec<UnitId>> = lex.iter().map(|(_, p)| p[0].clone()).collect();
        distinct.sort();
        distinct.dedup();
        assert_eq!(tree.word_end_nodes(), distinct.len());
    }

    /// Uniform unigram LM over the given words.
    fn uniform_lm(words: &[&str]) -> NGramLm {
        let n = words.len() + 1; // + </s>
        let p = format!("{:.10}", (1.0 / n as f64).log10());
        let mut text = String::from("\\data\\\n");
        text.push_str(&format!("ngram 1={}\n\\1-grams:\n", n + 1));
        text.push_str("-99\t<s>\n");
        for w in words {
            text.push_str(&format!("{p}\t{w}\n"));
        }
        text.push_str(&format!("{p}\t</s>\n\\end\\\n"));
        load_arpa(Cursor::new(text)).unwrap()
    }

    fn sample_word_frames(
        words: &[&str],
        lex: &Lexicon,
        model: &AcousticModel,
        rng: &mut ChaCha8Rng,
        noise: f64,
    ) -> Features {
        let mut feats = Features::new(1);
        let mean_of = |u: UnitId| {
            let tied = model.tied_map.tie(&TriContext::ci(u)).unwrap();
            model.pdfs[tied as usize].components()[0].mean()[0]
        };
        let emit = |mean: f64, rng: &mut ChaCha8Rng, feats: &mut Features| loop {
            let u1: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
            let u2: f64 = rng.random_range(0.0..1.0);
            let z = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
            feats.push_row(&[(mean + noise * z) as f32]);
            if rng.random_bool(0.5) {
                break;
            }
        };
        emit(0.0, rng, &mut feats);
        for (i, w) in words.iter().enumerate() {
            for &u in &lex.pronunciations(w).unwrap()[0] {
                emit(mean_of(u), rng, &mut feats);
            }
            if i + 1 < words.len() && rng.random_bool(0.5) {
                emit(0.0, rng, &mut feats);
            }
        }
        emit(0.0, rng, &mut feats);
        feats
    }

    #[test]
    fn well_separated_words_decode_exactly() {
        let inv = inv();
        let (lex, _) = build_lexicon(&["ab".to_string(), "cd".to_string()], &inv).unwrap();
        let model = ci_model(&inv, &[("a", 10.0), ("b", 20.0), ("c", 30.0), ("d", 40.0)]);
        let map = &model.tied_map;
        let tree = build_prefix_tree(&lex, map, &inv, &CdConfig::default()).unwrap();
        let lm = uniform_lm(&["ab", "cd"]);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let truth = if rng.random_bool(0.5) { "ab" } else { "cd" };
            let feats = sample_word_frames(&[truth], &lex, &model, &mut rng, 1.0);
            let hyp = decode(&feats, &model, &tree, &lm, &DecodeConfig::default()).unwrap();
            assert_eq!(hyp.words, vec![truth.to_string()]);
        }
    }

    /// Brute-force oracle: enumerate every word sequence the frame budget
    /// allows, score each sequence's best segmentation against its own
    /// alignment graph, and add LM and insertion terms. Path scoring uses
    /// the aligner for speed on longer sequences and cross-checks a pure
    /// path enumeration on small ones (the aligner itself is verified
    /// against path enumeration in the am tests).
    fn brute_force_decode(
        feats: &Features,
        model: &AcousticModel,
        lex: &Lexicon,
        inv: &UnitInventory,
        lm: &NGramLm,
        cfg: &DecodeConfig,
    ) -> Option<(Vec<String>, f64)> {
        let vocab: Vec<String> = lex.words().map(|w| w.to_string()).collect();
        let max_words = feats.frames().saturating_sub(2); // two silence frames minimum
        let mut best: Option<(Vec<String>, f64)> = None;
        let mut seqs: Vec<Vec<String>> = vec![];
        fn extend(vocab: &[String], cur: Vec<String>, left: usize, out: &mut Vec<Vec<String>>) {
            if !cur.is_empty() {
                out.push(cur.clone());
            }
            if left == 0 {
                return;
            }
            for w in vocab {
                let mut next = cur.clone();
                next.push(w.clone());
                extend(vocab, next, left - 1, out);
            }
        }
        extend(&vocab, Vec::new(), max_words, &mut seqs);
        for words in seqs {
            let graph = build_alignment_graph(
                &words,
                lex,
                inv,
                &CdConfig::default(),
                &HmmTopology::default(),
            )
            .unwrap();
            let Ok(aligned) = viterbi_align(&graph, feats, model) else {
                continue;
            };
            let acoustic = aligned.log_likelihood;
            if feats.frames() <= 5 && graph.num_states() <= 6 {
                let dfs = best_path_score(&graph, feats, model).unwrap();
                assert!((dfs - acoustic).abs() < 1e-9, "aligner disagrees with DFS");
            }
            let mut hist = lm.initial_history();
            let mut lm10 = 0.0;
            for w in &words {
                let id = lm.word_id(w).unwrap();
                lm10 += lm.log10_prob(&hist, id);
                hist = lm.advance(&hist, id);
            }
            lm10 += lm.end_score(&hist);
            let total = acoustic
                + cfg.lm_weight * LN_10 * lm10
                + cfg.word_insertion_penalty * words.len() as f64;
            let take = match &best {
                None => true,
                Some((bw, bs)) => {
                    total > *bs + 1e-12 || ((total - *bs).abs() <= 1e-12 && words < *bw)
                }
            };
            if take {
                best = Some((words, total));
            }
        }
        best
    }

    /// Exhaustive max-score path through a graph (emissions + transitions).
    fn best_path_score(
        graph: &UtteranceGraph,
        feats: &Features,
        model: &AcousticModel,
    ) -> Option<f64> {
        let frames = feats.frames();
        if frames < graph.min_path_states() {
            return None;
        }
        let tied: Vec<u32> = graph
            .contexts()
            .iter()
            .map(|c| model.tied_map.tie(c).unwrap())
            .collect();
        #[allow(clippy::too_many_arguments)]
        fn rec(
            graph: &UtteranceGraph,
            feats: &Features,
            model: &AcousticModel,
            tied: &[u32],
            state: usize,
            t: usize,
            score: f64,
            frames: usize,
            best: &mut f64,
        ) {
            if t == frames {
                if let Some(exit) = graph.exit_logprob(state) {
                    if score + exit > *best {
                        *best = score + exit;
                    }
                }
                return;
            }
            for &(d, lp) in graph.arcs_from(state) {
                let emit = model.pdfs[tied[d] as usize].log_pdf(feats.row(t));
                rec(
                    graph,
                    feats,
                    model,
                    tied,
                    d,
                    t + 1,
                    score + lp + emit,
                    frames,
                    best,
                );
            }
        }
        let mut best = f64::NEG_INFINITY;
        for &(s, lp) in graph.entry_arcs() {
            let emit = model.pdfs[tied[s] as usize].log_pdf(feats.row(0));
            rec(
                graph,
                feats,
                model,
                &tied,
                s,
                1,
                lp + emit,
                frames,
                &mut best,
            );
        }
        (best > f64::NEG_INFINITY).then_some(best)
    }

    #[test]
    fn decoder_matches_brute_force_on_tiny_instances() {
        let inv = inv();
        let words = vec!["a".to_string(), "bc".to_string(), "d".to_string()];
        let (lex, _) = build_lexicon(&words, &inv).unwrap();
        let model = ci_model(&inv, &[("a", -6.0), ("b", 3.0), ("c", 6.0), ("d", 9.0)]);
        let tree = build_prefix_tree(&lex, &model.tied_map, &inv, &CdConfig::default()).unwrap();
        let lm = uniform_lm(&["a", "bc", "d"]);
        let cfg = DecodeConfig {
            beam: f64::INFINITY,
            max_active: usize::MAX,
            lm_weight: 1.0,
            word_insertion_penalty: -0.5,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for frames in 3..=8 {
            for _ in 0..4 {
                let rows: Vec<Vec<f32>> = (0..frames)
                    .map(|_| vec![rng.random_range(-8.0..10.0)])
                    .collect();
                let feats = Features::from_rows(1, rows);
                let got = decode(&feats, &model, &tree, &lm, &cfg).unwrap();
                let (oracle_words, oracle_score) =
                    brute_force_decode(&feats, &model, &lex, &inv, &lm, &cfg).unwrap();
                assert_eq!(got.words, oracle_words, "frames {frames}");
                assert!(
                    (got.total_score - oracle_score).abs() < 1e-9,
                    "score {} vs oracle {}",
                    got.total_score,
                    oracle_score
                );
            }
        }
    }

    #[test]
    fn homophones_follow_the_language_model() {
        let inv = UnitInventory::graphemic(CaseMode::Preserve);
        let (lex, _) = build_lexicon(&["DNN".to_string(), "D.N.N.".to_string()], &inv).unwrap();
        let model = ci_model(&inv, &[("D", 5.0), ("N", -5.0)]);
        let tree = build_prefix_tree(&lex, &model.tied_map, &inv, &CdConfig::default()).unwrap();
        // LM strongly prefers the spelled-out form.
        let arpa = "\\data\\\nngram 1=4\n\\1-grams:\n-99\t<s>\n-0.05\tD.N.N.\n-2.0\tDNN\n-1.0\t</s>\n\\end\\\n";
        let lm = load_arpa(Cursor::new(arpa)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let feats = sample_word_frames(&["DNN"], &lex, &model, &mut rng, 0.5);
        let hyp = decode(&feats, &model, &tree, &lm, &DecodeConfig::default()).unwrap();
        assert_eq!(hyp.words, vec!["D.N.N.".to_string()]);
        // And with the preference flipped, the other spelling wins.
        let arpa2 = "\\data\\\nngram 1=4\n\\1-grams:\n-99\t<s>\n-2.0\tD.N.N.\n-0.05\tDNN\n-1.0\t</s>\n\\end\\\n";
        let lm2 = load_arpa(Cursor::new(arpa2)).unwrap();
        let hyp2 = decode(&feats, &model, &tree, &lm2, &DecodeConfig::default()).unwrap();
        assert_eq!(hyp2.words, vec!["DNN".to_string()]);
    }

    #[test]
    fn widening_the_beam_never_lowers_the_score() {
        let inv = inv();
        let (lex, _) = build_lexicon(&["ab".to_string(), "ba".to_string()], &inv).unwrap();
        let model = ci_model(&inv, &[("a", 2.0), ("b", -2.0)]);
        let tree = build_prefix_tree(&lex, &model.tied_map, &inv, &CdConfig::default()).unwrap();
        let lm = uniform_lm(&["ab", "ba"]);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let feats = sample_word_frames(&["ab", "ba"], &lex, &model, &mut rng, 1.5);
        let mut prev = f64::NEG_INFINITY;
        for beam in [1.0, 2.0, 5.0, 10.0, 50.0, f64::INFINITY] {
            let cfg = DecodeConfig {
                beam,
                ..DecodeConfig::default()
            };
            if let Ok(hyp) = decode(&feats, &model, &tree, &lm, &cfg) {
                assert!(
                    hyp.total_score >= prev - 1e-9,
                    "beam {beam}: {} < {prev}",
                    hyp.total_score
                );
                prev = hyp.total_score;
            }
        }
    }

    #[test]
    fn returned_score_decomposes_into_parts() {
        let inv = inv();
        let (lex, _) = build_lexicon(&["ab".to_string(), "cd".to_string()], &inv).unwrap();
        let model = ci_model(&inv, &[("a", 4.0), ("b", 8.0), ("c", -4.0), ("d", -8.0)]);
        let tree = build_prefix_tree(&lex, &model.tied_map, &inv, &CdConfig::default()).unwrap();
        let lm = uniform_lm(&["ab", "cd"]);
        let cfg = DecodeConfig {
            beam: f64::INFINITY,
            max_active: usize::MAX,
            lm_weight: 2.5,
            word_insertion_penalty: -1.25,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let feats = sample_word_frames(&["cd", "ab"], &lex, &model, &mut rng, 0.8);
        let hyp = decode(&feats, &model, &tree, &lm, &cfg).unwrap();
        // Recompute each term independently: the acoustic part must equal
        // the forced-alignment likelihood of the hypothesis words.
        let graph = build_alignment_graph(
            &hyp.words,
            &lex,
            &inv,
            &CdConfig::default(),
            &HmmTopology::default(),
        )
        .unwrap();
        let realigned = viterbi_align(&graph, &feats, &model).unwrap();
        assert!((realigned.log_likelihood - hyp.acoustic_score).abs() < 1e-6);
        let mut hist = lm.initial_history();
        let mut lm10 = 0.0;
        for w in &hyp.words {
            let id = lm.word_id(w).unwrap();
            lm10 += lm.log10_prob(&hist, id);
            hist = lm.advance(&hist, id);
        }
        lm10 += lm.end_score(&hist);
        assert!((lm10 - hyp.lm_log10).abs() < 1e-9);
        let recomposed = hyp.acoustic_score
            + cfg.lm_weight * LN_10 * hyp.lm_log10
            + cfg.word_insertion_penalty * hyp.words.len() as f64;
        assert!((recomposed - hyp.total_score).abs() < 1e-6);
    }

    #[test]
    fn narrow_beam_reports_no_hypothesis() {
        let inv = inv();
        let (lex, _) = build_lexicon(&["ab".to_string()], &inv).unwrap();
        let model = ci_model(&inv, &[("a", 50.0), ("b", -50.0)]);
        let tree = build_prefix_tree(&lex, &model.tied_map, &inv, &CdConfig::default()).unwrap();
        let lm = uniform_lm(&["ab"]);
        let feats = Features::from_rows(1, vec![vec![0.0]; 6]);
        let cfg = DecodeConfig {
            beam: 1e-3,
            max_active: 1,
            ..DecodeConfig::default()
        };
        match decode(&feats, &model, &tree, &lm, &cfg) {
            Err(DecodeError::NoHypothesis) | Ok(_) => {}
            other => panic!("unexpected: {other:?}"),
        }
    }

    #[test]
    fn multi_pronunciation_mass_matches_the_aligner() {
        // With two pronunciations for one word, the decoder's word-exit
        // mass must keep score parity with the alignment graph.
        let inv = UnitInventory::phonetic(["K", "AE", "EH", "T"]).unwrap();
        let lex =
            crate::units::load_phonetic_lexicon(Cursor::new("cat\tK AE T\ncat\tK EH T\n"), &inv)
                .unwrap();
        let map = TiedStateMap::context_independent(&inv);
        let mut pdfs: Vec<Gmm> = (0..map.num_tied_states())
            .map(|_| Gmm::single(DiagGaussian::new(vec![0.0], vec![1.0], 1e-4)))
            .collect();
        for (sym, mean) in [("K", 5.0), ("AE", 10.0), ("EH", -10.0), ("T", 15.0)] {
            for pos in [Position::WordBoundary, Position::Internal] {
                if let Some(id) = inv.id(sym, pos) {
                    let tied = map.tie(&TriContext::ci(id)).unwrap();
                    pdfs[tied as usize] =
                        Gmm::single(DiagGaussian::new(vec![mean], vec![1.0], 1e-4));
                }
            }
        }
        let model = AcousticModel {
            topology: HmmTopology::default(),
            tied_map: map,
            pdfs,
            dim: 1,
        };
        let tree = build_prefix_tree(&lex, &model.tied_map, &inv, &CdConfig::default()).unwrap();
        let lm = uniform_lm(&["cat"]);
        let cfg = DecodeConfig {
            beam: f64::INFINITY,
            max_active: usize::MAX,
            lm_weight: 1.0,
            word_insertion_penalty: 0.0,
        };
        let feats = Features::from_rows(
            1,
            vec![vec![0.0], vec![5.0], vec![10.0], vec![15.0], vec![0.0]],
        );
        let hyp = decode(&feats, &model, &tree, &lm, &cfg).unwrap();
        assert_eq!(hyp.words, vec!["cat".to_string()]);
        let graph = build_alignment_graph(
            &hyp.words,
            &lex,
            &inv,
            &CdConfig::default(),
            &HmmTopology::default(),
        )
        .unwrap();
        let aligned = viterbi_align(&graph, &feats, &model).unwrap();
        assert!((aligned.log_likelihood - hyp.acoustic_score).abs() < 1e-9);
    }
}
