//! Synthetic corpus generation.
//!
//! Utterances are sampled through the same topology the aligner and
//! decoder assume: mandatory silence at the edges, optional silence
//! between words, and a geometric dwell per unit state (self-loop 0.5,
//! expected two frames per state). Unit means sit on a ternary grid so
//! any two distinct units are well separated; optional colorings make a
//! unit's sound depend on its right neighbor or its word position, which
//! is what the context/position ablations need.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use chenflow_core::corpus::{write_transcripts_file, Features, Utterance};
use chenflow_core::eval::{TagLabel, TagSpan};
use chenflow_core::units::{build_lexicon, CaseMode, Lexicon, Position, UnitId, UnitInventory};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// How unit means are laid out.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Coloring {
    /// Every unit variant has one fixed mean.
    None,
    /// `a`/`b` share a base mean and differ only through the right
    /// neighbor (t vs d); `p`/`q` share a base mean and differ only
    /// through word position. Context (CD) and position (PD) modeling are
    /// then each necessary for one word family.
    Ablation {
        context_delta: f64,
        position_delta: f64,
    },
}

/// Everything the generator needs. A fixed seed gives byte-identical
/// corpora.
#[derive(Debug, Clone)]
pub struct SyntheticSpec {
    pub seed: u64,
    pub utterances: usize,
    pub vocab: Vec<String>,
    pub words_per_utt: (usize, usize),
    pub dim: usize,
    pub noise: f64,
    pub unit_separation: f64,
    pub coloring: Coloring,
    pub case_mode: CaseMode,
    /// The first `tagged_words` vocabulary entries are treated as proper
    /// nouns; every occurrence is emitted as a tag span.
    pub tagged_words: usize,
}

impl SyntheticSpec {
    /// Plain corpus with a pseudo-random vocabulary.
    pub fn standard(seed: u64, vocab_size: usize, utterances: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0001);
        let mut vocab: Vec<String> = Vec::new();
        while vocab.len() < vocab_size {
            let len = rng.random_range(2..=5);
            let w: String = (0..len)
                .map(|_| char::from(b'a' + rng.random_range(0..26u8)))
                .collect();
            if !vocab.contains(&w) {
                vocab.push(w);
            }
        }
        Self {
            seed,
            utterances,
            vocab,
            words_per_utt: (2, 5),
            dim: 3,
            noise: 0.5,
            unit_separation: 6.0,
            coloring: Coloring::None,
            case_mode: CaseMode::Lowercase,
            tagged_words: 2,
        }
    }

    /// The context/position-ambiguous corpus for the CD/PD ablation:
    /// `at/bt/ad/bd` are separable only through the right context of
    /// `a`/`b`; `ps/qs/spt/sqt` only through the word position of `p`/`q`.
    pub fn ablation(seed: u64, utterances: usize) -> Self {
        let vocab = [
            "at", "bt", "ad", "bd", "ps", "qs", "spt", "sqt", "mok", "lur", "fiz", "dex",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        Self {
            seed,
            utterances,
            vocab,
            words_per_utt: (2, 5),
            dim: 3,
            noise: 0.5,
            unit_separation: 6.0,
            coloring: Coloring::Ablation {
                context_delta: 2.0,
                position_delta: 2.0,
            },
            case_mode: CaseMode::Lowercase,
            tagged_words: 2,
        }
    }

    /// Cased corpus with homograph pairs (`SAT`/`sat`, `OK`/`ok`) whose
    /// members sound different; folding case merges their spellings.
    pub fn cased(seed: u64, utterances: usize) -> Self {
        let vocab = ["SAT", "sat", "OK", "ok", "mud", "lor", "fen"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        Self {
            seed,
            utterances,
            vocab,
            words_per_utt: (2, 5),
            dim: 4,
            noise: 0.5,
            unit_separation: 6.0,
            coloring: Coloring::None,
            case_mode: CaseMode::Preserve,
            tagged_words: 2,
        }
    }
}

/// A generated corpus, in memory.
pub struct SyntheticCorpus {
    pub inventory: UnitInventory,
    pub lexicon: Lexicon,
    pub utterances: Vec<Utterance>,
    pub tags: Vec<TagSpan>,
    /// Ground-truth per-frame unit labels, run-length encoded per
    /// utterance as (unit, frames).
    pub alignments: Vec<Vec<(UnitId, usize)>>,
    pub lm_text: String,
}

/// Grid index of a symbol: silence 0, a-z 1..=26, A-Z 27..=52.
fn symbol_slot(symbol: &str) -> usize {
    let c = symbol.chars().next().unwrap_or('a');
    match c {
        'a'..='z' => 1 + (c as usize - 'a' as usize),
        'A'..='Z' => 27 + (c as usize - 'A' as usize),
        _ => 53, // hyphen/apostrophe share one far slot; unused by default vocabs
    }
}

fn grid_mean(slot: usize, dim: usize, separation: f64) -> Vec<f64> {
    // Ternary digits in {-1, 0, 1} per dimension.
    let mut mean = vec![0.0; dim];
    let mut rest = slot;
    for slot_mean in mean.iter_mut() {
        let digit = (rest % 3) as f64 - 1.0;
        *slot_mean = digit * separation;
        rest /= 3;
    }
    mean
}

struct MeanModel {
    dim: usize,
    separation: f64,
    coloring: Coloring,
}

impl MeanModel {
    /// Mean of a unit instance given its word position and right neighbor
    /// symbol (the colorings key off those).
    fn mean(&self, symbol: &str, position: Position, right: Option<&str>) -> Vec<f64> {
        if symbol == "SIL" {
            return grid_mean(0, self.dim, self.separation);
        }
        if symbol == "GARBAGE" {
            return vec![-3.0 * self.separation; self.dim];
        }
        if let Coloring::Ablation {
            context_delta,
            position_delta,
        } = self.coloring
        {
            match symbol {
                "a" | "b" => {
                    let mut m = grid_mean(symbol_slot("a"), self.dim, self.separation);
                    let sign = if right == Some("t") { 1.0 } else { -1.0 };
                    let flip = if symbol == "a" { 1.0 } else { -1.0 };
                    m[0] += sign * flip * context_delta;
                    return m;
                }
                "p" | "q" => {
                    let mut m = grid_mean(symbol_slot("p"), self.dim, self.separation);
                    let sign = if position == Position::WordBoundary {
                        1.0
                    } else {
                        -1.0
                    };
                    let flip = if symbol == "p" { 1.0 } else { -1.0 };
                    m[1] += sign * flip * position_delta;
                    return m;
                }
                _ => {}
            }
        }
        grid_mean(symbol_slot(symbol), self.dim, self.separation)
    }
}

fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.random_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Samples a state dwell from the 0.5 self-loop: 1 + Geometric(0.5).
fn sample_dwell(rng: &mut ChaCha8Rng) -> usize {
    let mut n = 1;
    while !rng.random_bool(0.5) {
        n += 1;
    }
    n
}

/// Generates the corpus described by `spec`.
pub fn generate(spec: &SyntheticSpec) -> Result<SyntheticCorpus> {
    if spec.vocab.is_empty() {
        bail!("synthetic vocabulary is empty");
    }
    if spec.dim < 3 || (spec.case_mode == CaseMode::Preserve && spec.dim < 4) {
        bail!("dim {} is too small for the unit grid", spec.dim);
    }
    let inventory = UnitInventory::graphemic(spec.case_mode);
    let (lexicon, skipped) = build_lexicon(&spec.vocab, &inventory)?;
    if !skipped.is_empty() {
        bail!(
            "vocabulary word {:?} is empty after normalization",
            skipped[0].word
        );
    }
    let means = MeanModel {
        dim: spec.dim,
        separation: spec.unit_separation,
        coloring: spec.coloring,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut utterances = Vec::with_capacity(spec.utterances);
    let mut alignments = Vec::with_capacity(spec.utterances);
    let mut tags = Vec::new();
    let tagged: Vec<&String> = spec.vocab.iter().take(spec.tagged_words).collect();

    for i in 0..spec.utterances {
        let id = format!("utt{i:05}");
        let n_words = rng.random_range(spec.words_per_utt.0..=spec.words_per_utt.1);
        let words: Vec<String> = (0..n_words)
            .map(|_| spec.vocab[rng.random_range(0..spec.vocab.len())].clone())
            .collect();
        let mut feats = Features::new(spec.dim);
        let mut ali: Vec<(UnitId, usize)> = Vec::new();
        let emit_unit = |unit: UnitId,
                         right: Option<&str>,
                         rng: &mut ChaCha8Rng,
                         feats: &mut Features,
                         ali: &mut Vec<(UnitId, usize)>| {
            let u = inventory.unit(unit);
            let mean = means.mean(&u.symbol, u.position, right);
            let dwell = sample_dwell(rng);
            for _ in 0..dwell {
                let row: Vec<f32> = mean
                    .iter()
                    .map(|m| (m + spec.noise * standard_normal(rng)) as f32)
                    .collect();
                feats.push_row(&row);
            }
            ali.push((unit, dwell));
        };

        emit_unit(UnitId::SILENCE, None, &mut rng, &mut feats, &mut ali);
        for (wi, word) in words.iter().enumerate() {
            let pron = &lexicon
                .pronunciations(word)
                .expect("vocab words are in the lexicon")[0];
            for (ui, &unit) in pron.iter().enumerate() {
                let right = pron.get(ui + 1).map(|&r| {
                    let sym: &str = &inventory.unit(inventory.internal_variant(r)).symbol;
                    sym.to_string()
                });
                emit_unit(unit, right.as_deref(), &mut rng, &mut feats, &mut ali);
            }
            if wi + 1 < words.len() && rng.random_bool(0.5) {
                emit_unit(UnitId::SILENCE, None, &mut rng, &mut feats, &mut ali);
            }
        }
        emit_unit(UnitId::SILENCE, None, &mut rng, &mut feats, &mut ali);

        for (pos, w) in words.iter().enumerate() {
            if tagged.contains(&w) {
                tags.push(TagSpan {
                    utt_id: id.clone(),
                    start: pos,
                    end: pos,
                    label: TagLabel::ProperNoun,
                });
            }
        }
        alignments.push(ali);
        utterances.push(Utterance {
            id,
            words,
            features: feats,
        });
    }

    let lm_text = uniform_unigram_arpa(&spec.vocab);
    Ok(SyntheticCorpus {
        inventory,
        lexicon,
        utterances,
        tags,
        alignments,
        lm_text,
    })
}

/// Uniform unigram ARPA over the vocabulary plus `</s>`.
pub fn uniform_unigram_arpa(vocab: &[String]) -> String {
    let n = vocab.len() + 1;
    let logp = format!("{:.10}", (1.0 / n as f64).log10());
    let mut sorted: Vec<&String> = vocab.iter().collect();
    sorted.sort();
    let mut text = String::from("\\data\\\n");
    text.push_str(&format!("ngram 1={}\n\n\\1-grams:\n", n + 1));
    text.push_str("-99\t<s>\n");
    for w in sorted {
        text.push_str(&format!("{logp}\t{w}\n"));
    }
    text.push_str(&format!("{logp}\t</s>\n\n\\end\\\n"));
    text
}

/// Writes the corpus artifacts: `units.txt`, `lexicon.txt`,
/// `transcripts.txt`, `tags.txt`, `lm.arpa`, `ali_ref.txt`, and one
/// `feats/<utt>.cfea` per utterance.
pub fn write_corpus(corpus: &SyntheticCorpus, out_dir: &Path) -> Result<()> {
    fs::create_dir_all(out_dir.join("feats"))?;
    corpus
        .inventory
        .write_file(out_dir.join("units.txt"))
        .context("writing units.txt")?;
    corpus
        .lexicon
        .write_file(&corpus.inventory, out_dir.join("lexicon.txt"))
        .context("writing lexicon.txt")?;
    let entries: Vec<(String, Vec<String>)> = corpus
        .utterances
        .iter()
        .map(|u| (u.id.clone(), u.words.clone()))
        .collect();
    write_transcripts_file(&entries, out_dir.join("transcripts.txt"))?;
    let mut tag_text = String::new();
    for t in &corpus.tags {
        tag_text.push_str(&format!(
            "{}\t{}\t{}\t{}\n",
            t.utt_id,
            t.start,
            t.end,
            t.label.as_str()
        ));
    }
    fs::write(out_dir.join("tags.txt"), tag_text)?;
    fs::write(out_dir.join("lm.arpa"), &corpus.lm_text)?;
    let mut ali_text = String::new();
    for (utt, ali) in corpus.utterances.iter().zip(&corpus.alignments) {
        let fields: Vec<String> = ali
            .iter()
            .map(|&(u, n)| format!("{}:{}", corpus.inventory.format_unit(u), n))
            .collect();
        ali_text.push_str(&format!("{}\t{}\n", utt.id, fields.join(" ")));
    }
    fs::write(out_dir.join("ali_ref.txt"), ali_text)?;
    for utt in &corpus.utterances {
        utt.features
            .write_cfea_file(out_dir.join("feats").join(format!("{}.cfea", utt.id)))?;
    }
    Ok(())
}
