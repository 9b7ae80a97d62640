//! Stage runners behind the `chenflow` subcommands. Every stage reads its
//! inputs from the canonical artifact locations, writes its own artifact,
//! and appends a manifest line with input hashes. Stages compose: each
//! output parses as the next stage's input with no manual editing.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use rayon::prelude::*;

use chenflow_core::am::{
    build_graphs, em_iterate, flat_start, read_model_file, retie, split_mixtures, viterbi_align,
    write_model_file, AcousticModel,
};
use chenflow_core::context::{HmmTopology, TriContext};
use chenflow_core::corpus::{read_transcripts_file, word_counts, Features, Utterance};
use chenflow_core::decode::{build_prefix_tree, decode, load_arpa_file};
use chenflow_core::eval::{
    align_words, cer, extract_tagged_segments, read_tags_file, select_rare_words, wer, TagLabel,
    TagSpan, WerReport,
};
use chenflow_core::stats::{accumulate, format_neighbor, parse_neighbor, StatsTable};
use chenflow_core::tree::{generate_questions, grow_tree, TiedStateMap};
use chenflow_core::units::{
    build_lexicon, load_phonetic_lexicon_file, Lexicon, LexiconSource, UnitInventory,
};

use crate::config::PipelineConfig;
use crate::manifest::append_entry;
use crate::synth::{generate, write_corpus, SyntheticSpec};

/// Fails with a pointer to the producing stage when an artifact is absent.
fn require(path: &Path, producer: &str) -> Result<PathBuf> {
    if !path.exists() {
        bail!(
            "missing artifact {} (run `chenflow {}` first)",
            path.display(),
            producer
        );
    }
    Ok(path.to_path_buf())
}

/// Inventory for a run: the one written next to the corpus when present,
/// else the built-in graphemic inventory for the configured case mode.
pub fn load_inventory(cfg: &PipelineConfig) -> Result<UnitInventory> {
    let path = cfg.units_file.clone().unwrap_or_else(|| cfg.units_path());
    if path.exists() {
        Ok(UnitInventory::read_file(&path, cfg.case_mode)?)
    } else {
        Ok(UnitInventory::graphemic(cfg.case_mode))
    }
}

fn load_lexicon(cfg: &PipelineConfig, inventory: &UnitInventory) -> Result<Lexicon> {
    let path = require(&cfg.lexicon_path(), "lexicon (or synth)")?;
    // Source label follows the inventory: phone inventories mean the
    // lexicon came from a phonetic dictionary.
    let source = if inventory
        .units()
        .iter()
        .any(|u| u.kind == chenflow_core::units::UnitKind::Phoneme)
    {
        LexiconSource::Phonetic
    } else {
        LexiconSource::Graphemic
    };
    Ok(Lexicon::read_file(&path, inventory, source)?)
}

/// Loads the corpus: `transcripts.txt` plus one `feats/<utt>.cfea` each.
pub fn load_corpus(cfg: &PipelineConfig) -> Result<Vec<Utterance>> {
    let transcripts = require(&cfg.transcripts_path(), "synth")?;
    let entries = read_transcripts_file(&transcripts)?;
    let feats_dir = cfg.feats_dir();
    entries
        .into_iter()
        .map(|(id, words)| {
            let path = feats_dir.join(format!("{id}.cfea"));
            let features = Features::read_cfea_file(&path)
                .with_context(|| format!("reading features {}", path.display()))?;
            Ok(Utterance {
                id,
                words,
                features,
            })
        })
        .collect()
}

/// `lexicon`: builds a graphemic lexicon from a word list, or loads a
/// phonetic dictionary against a declared phone inventory. Writes
/// `lexicon.txt` and `units.txt`.
pub fn run_lexicon(cfg: &PipelineConfig) -> Result<()> {
    fs::create_dir_all(&cfg.out_dir)?;
    let (inventory, lexicon, input) = match (&cfg.word_list, &cfg.phonetic_dict) {
        (Some(words_path), None) => {
            let inventory = UnitInventory::graphemic(cfg.case_mode);
            let text = fs::read_to_string(words_path)
                .with_context(|| format!("reading word list {}", words_path.display()))?;
            let words: Vec<String> = text
                .lines()
                .map(|l| l.trim().to_string())
                .filter(|l| !l.is_empty() && !l.starts_with('#'))
                .collect();
            let (lexicon, skipped) = build_lexicon(&words, &inventory)?;
            for s in &skipped {
                eprintln!("skipped word {:?}: {}", s.word, s.error);
            }
            (inventory, lexicon, words_path.clone())
        }
        (None, Some(dict_path)) => {
            let units = cfg
                .units_file
                .as_ref()
                .ok_or_else(|| anyhow!("--phonetic needs --units with the phone inventory"))?;
            let inventory = UnitInventory::read_file(units, cfg.case_mode)?;
            let lexicon = load_phonetic_lexicon_file(dict_path, &inventory)?;
            (inventory, lexicon, dict_path.clone())
        }
        _ => bail!("lexicon needs exactly one of --words or --phonetic"),
    };
    inventory.write_file(cfg.units_path())?;
    lexicon.write_file(&inventory, cfg.lexicon_path())?;
    append_entry(
        &cfg.manifest_path(),
        "lexicon",
        &cfg.lexicon_path(),
        &[&input],
        &cfg.digest_string(),
    )?;
    Ok(())
}

/// `synth`: generates the corpus artifacts from a synthetic spec.
pub fn run_synth(cfg: &PipelineConfig, spec: &SyntheticSpec) -> Result<()> {
    fs::create_dir_all(&cfg.out_dir)?;
    let corpus = generate(spec)?;
    write_corpus(&corpus, &cfg.out_dir)?;
    append_entry(
        &cfg.manifest_path(),
        "synth",
        &cfg.transcripts_path(),
        &[],
        &format!("{} spec={spec:?}", cfg.digest_string()),
    )?;
    Ok(())
}

/// Which model the `train` stage produces.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainStage {
    /// Flat start plus EM: the context-independent bootstrap (`ci.cfam`).
    Ci,
    /// Retie on the grown tree plus EM: the context-dependent model
    /// (`cd.cfam`).
    Cd,
}

fn em_schedule(
    mut model: AcousticModel,
    corpus: &[Utterance],
    graphs: &[chenflow_core::UtteranceGraph],
    iterations: usize,
    target_components: usize,
    split_after: usize,
) -> Result<AcousticModel> {
    for i in 0..iterations {
        if i == split_after && target_components > 1 {
            model = split_mixtures(&model, target_components);
        }
        let (next, _) = em_iterate(&model, corpus, graphs)?;
        model = next;
    }
    Ok(model)
}

pub fn run_train(cfg: &PipelineConfig, stage: TrainStage) -> Result<()> {
    let inventory = load_inventory(cfg)?;
    let lexicon = load_lexicon(cfg, &inventory)?;
    let corpus = load_corpus(cfg)?;
    let topology = HmmTopology::default();
    let graphs = build_graphs(&corpus, &lexicon, &inventory, &cfg.cd, &topology)?;
    match stage {
        TrainStage::Ci => {
            let started = flat_start(&corpus, &lexicon, &inventory, &cfg.cd, &topology)?;
            for report in &started.skipped {
                eprintln!("flat start: {report}");
            }
            let model = em_schedule(
                started.model,
                &corpus,
                &graphs,
                cfg.em.ci_iterations,
                cfg.em.mixture_components,
                cfg.em.split_after,
            )?;
            write_model_file(&model, cfg.ci_model_path())?;
            append_entry(
                &cfg.manifest_path(),
                "train-ci",
                &cfg.ci_model_path(),
                &[&cfg.lexicon_path(), &cfg.transcripts_path()],
                &cfg.digest_string(),
            )?;
        }
        TrainStage::Cd => {
            let stats_path = require(&cfg.stats_path(), "stats")?;
            let tree_path = require(&cfg.tree_path(), "tree")?;
            let ci_path = require(&cfg.ci_model_path(), "train --stage ci")?;
            let stats = StatsTable::read_file(&stats_path, &inventory)?;
            let tied_map = TiedStateMap::read_file(&tree_path, &inventory)?;
            let ci_model =
                read_model_file(&ci_path, TiedStateMap::context_independent(&inventory))?;
            let seeded = retie(&ci_model, tied_map, &stats)?;
            let model = em_schedule(
                seeded,
                &corpus,
                &graphs,
                cfg.em.cd_iterations,
                cfg.em.mixture_components,
                cfg.em.split_after,
            )?;
            write_model_file(&model, cfg.cd_model_path())?;
            append_entry(
                &cfg.manifest_path(),
                "train-cd",
                &cfg.cd_model_path(),
                &[&stats_path, &tree_path, &ci_path],
                &cfg.digest_string(),
            )?;
        }
    }
    Ok(())
}

/// `align`: forced alignment of the corpus with the bootstrap model;
/// writes run-length encoded tri-context labels, one line per utterance.
pub fn run_align(cfg: &PipelineConfig) -> Result<()> {
    let inventory = load_inventory(cfg)?;
    let lexicon = load_lexicon(cfg, &inventory)?;
    let corpus = load_corpus(cfg)?;
    let ci_path = require(&cfg.ci_model_path(), "train --stage ci")?;
    let model = read_model_file(&ci_path, TiedStateMap::context_independent(&inventory))?;
    let topology = HmmTopology::default();
    let graphs = build_graphs(&corpus, &lexicon, &inventory, &cfg.cd, &topology)?;
    let results: Vec<Result<Vec<TriContext>>> = corpus
        .par_iter()
        .zip(graphs.par_iter())
        .map(|(utt, graph)| {
            let aligned = viterbi_align(graph, &utt.features, &model)
                .with_context(|| format!("aligning {}", utt.id))?;
            Ok(aligned.frame_labels.into_iter().map(|(_, c)| c).collect())
        })
        .collect();
    let mut out = BufWriter::new(File::create(cfg.alignments_path())?);
    let mut skipped = 0usize;
    for (utt, labels) in corpus.iter().zip(results) {
        match labels {
            Err(e) => {
                eprintln!("{e:#}");
                skipped += 1;
            }
            Ok(labels) => {
                write!(out, "{}\t", utt.id)?;
                let mut fields: Vec<String> = Vec::new();
                let mut run: Option<(TriContext, usize)> = None;
                for ctx in labels {
                    match &mut run {
                        Some((c, n)) if *c == ctx => *n += 1,
                        _ => {
                            if let Some((c, n)) = run.take() {
                                fields.push(format_label(&inventory, &c, n));
                            }
                            run = Some((ctx, 1));
                        }
                    }
                }
                if let Some((c, n)) = run {
                    fields.push(format_label(&inventory, &c, n));
                }
                writeln!(out, "{}", fields.join(" "))?;
            }
        }
    }
    out.flush()?;
    if skipped > 0 {
        eprintln!("alignment skipped {skipped} utterances");
    }
    append_entry(
        &cfg.manifest_path(),
        "align",
        &cfg.alignments_path(),
        &[&ci_path, &cfg.transcripts_path(), &cfg.lexicon_path()],
        &cfg.digest_string(),
    )?;
    Ok(())
}

fn format_label(inventory: &UnitInventory, ctx: &TriContext, count: usize) -> String {
    format!(
        "{},{},{}:{}",
        format_neighbor(inventory, ctx.left),
        inventory.format_unit(ctx.center),
        format_neighbor(inventory, ctx.right),
        count
    )
}

/// Parses one alignment line back to per-frame labels.
fn parse_alignment_line(
    inventory: &UnitInventory,
    line: &str,
    lineno: usize,
) -> Result<(String, Vec<TriContext>)> {
    let (id, rest) = line
        .split_once('\t')
        .ok_or_else(|| anyhow!("alignment line {lineno}: missing tab"))?;
    let mut labels = Vec::new();
    for field in rest.split_whitespace() {
        let (ctx_part, count) = field
            .rsplit_once(':')
            .ok_or_else(|| anyhow!("alignment line {lineno}: missing count in {field:?}"))?;
        let count: usize = count
            .parse()
            .with_context(|| format!("alignment line {lineno}: bad count"))?;
        let mut parts = ctx_part.split(',');
        let (l, c, r) = (
            parts.next().unwrap_or(""),
            parts.next().unwrap_or(""),
            parts.next().unwrap_or(""),
        );
        if parts.next().is_some() {
            bail!("alignment line {lineno}: too many fields in {field:?}");
        }
        let left = parse_neighbor(inventory, l)
            .ok_or_else(|| anyhow!("alignment line {lineno}: unknown symbol {l:?}"))?;
        let center = inventory
            .parse_unit(c)
            .ok_or_else(|| anyhow!("alignment line {lineno}: unknown symbol {c:?}"))?;
        let right = parse_neighbor(inventory, r)
            .ok_or_else(|| anyhow!("alignment line {lineno}: unknown symbol {r:?}"))?;
        for _ in 0..count {
            labels.push(TriContext::new(left, center, right));
        }
    }
    Ok((id.to_string(), labels))
}

/// `stats`: accumulates Gaussian statistics from the alignment file and
/// the features; writes `stats.cfstats`.
pub fn run_stats(cfg: &PipelineConfig) -> Result<()> {
    let inventory = load_inventory(cfg)?;
    let ali_path = require(&cfg.alignments_path(), "align")?;
    let corpus = load_corpus(cfg)?;
    let by_id: BTreeMap<&str, &Utterance> = corpus.iter().map(|u| (u.id.as_str(), u)).collect();
    let reader = BufReader::new(File::open(&ali_path)?);
    let mut table: Option<StatsTable> = None;
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (id, labels) = parse_alignment_line(&inventory, &line, lineno + 1)?;
        let utt = by_id
            .get(id.as_str())
            .ok_or_else(|| anyhow!("alignment for unknown utterance {id:?}"))?;
        let part = accumulate(&labels, &utt.features)?;
        table = Some(match table.take() {
            None => part,
            Some(t) => t.merge(part)?,
        });
    }
    let table = table.ok_or_else(|| anyhow!("alignment file {} is empty", ali_path.display()))?;
    table.write_file(&inventory, cfg.stats_path())?;
    append_entry(
        &cfg.manifest_path(),
        "stats",
        &cfg.stats_path(),
        &[&ali_path],
        &cfg.digest_string(),
    )?;
    Ok(())
}

/// `tree`: generates questions from the statistics and grows the tied
/// forest; writes `tree.cftree`.
pub fn run_tree(cfg: &PipelineConfig) -> Result<()> {
    let inventory = load_inventory(cfg)?;
    let stats_path = require(&cfg.stats_path(), "stats")?;
    let stats = StatsTable::read_file(&stats_path, &inventory)?;
    let questions = generate_questions(&stats, &inventory, cfg.tree.var_floor)?;
    let map = grow_tree(&stats, &questions, &cfg.tree, &inventory)?;
    map.write_file(cfg.tree_path())?;
    append_entry(
        &cfg.manifest_path(),
        "tree",
        &cfg.tree_path(),
        &[&stats_path],
        &cfg.digest_string(),
    )?;
    Ok(())
}

/// `decode`: beam decoding of the corpus with the CD model; writes
/// `hyp.txt` (`utt_id<TAB>word word ...`).
pub fn run_decode(cfg: &PipelineConfig) -> Result<()> {
    let inventory = load_inventory(cfg)?;
    let lexicon = load_lexicon(cfg, &inventory)?;
    let corpus = load_corpus(cfg)?;
    let tree_path = require(&cfg.tree_path(), "tree")?;
    let model_path = require(&cfg.cd_model_path(), "train --stage cd")?;
    let lm_path = require(&cfg.lm_path(), "synth (or provide lm.arpa)")?;
    let tied_map = TiedStateMap::read_file(&tree_path, &inventory)?;
    let model = read_model_file(&model_path, tied_map)?;
    let lm = load_arpa_file(&lm_path)?;
    let tree = build_prefix_tree(&lexicon, &model.tied_map, &inventory, &cfg.cd)?;
    let hyps: Vec<(String, String)> = corpus
        .par_iter()
        .map(|utt| {
            let words = match decode(&utt.features, &model, &tree, &lm, &cfg.decode) {
                Ok(h) => h.words.join(" "),
                Err(e) => {
                    eprintln!("decode {}: {}", utt.id, e);
                    String::new()
                }
            };
            (utt.id.clone(), words)
        })
        .collect();
    let mut out = BufWriter::new(File::create(cfg.hyp_path())?);
    for (id, words) in &hyps {
        writeln!(out, "{id}\t{words}")?;
    }
    out.flush()?;
    append_entry(
        &cfg.manifest_path(),
        "decode",
        &cfg.hyp_path(),
        &[&model_path, &tree_path, &lm_path, &cfg.lexicon_path()],
        &cfg.digest_string(),
    )?;
    Ok(())
}

/// Parsed contents of `report.txt`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSummary {
    pub report: WerReport,
    pub propernoun_cer: Option<f64>,
    pub rareword_cer: Option<f64>,
}

/// `score`: WER against the reference transcripts plus tagged-segment CER
/// for proper nouns (tags file) and rare words (bottom 80% of training
/// counts); writes `report.txt` as `key=value` lines.
pub fn run_score(cfg: &PipelineConfig) -> Result<ScoreSummary> {
    let refs_path = require(&cfg.transcripts_path(), "synth")?;
    let hyp_path = require(&cfg.hyp_path(), "decode")?;
    let refs = read_transcripts_file(&refs_path)?;
    let hyps: BTreeMap<String, Vec<String>> =
        read_transcripts_file(&hyp_path)?.into_iter().collect();
    let tags: Vec<TagSpan> = if cfg.tags_path().exists() {
        read_tags_file(cfg.tags_path())?
    } else {
        Vec::new()
    };
    let rare_words = select_rare_words(&word_counts(&refs), 0.8);

    let empty: Vec<String> = Vec::new();
    let mut alignments = Vec::with_capacity(refs.len());
    let mut pn_segments = Vec::new();
    let mut rare_segments = Vec::new();
    for (id, ref_words) in &refs {
        let hyp_words = hyps.get(id).unwrap_or(&empty);
        let ops = align_words(ref_words, hyp_words);
        let pn_tags: Vec<TagSpan> = tags
            .iter()
            .filter(|t| &t.utt_id == id && t.label == TagLabel::ProperNoun)
            .cloned()
            .collect();
        if !pn_tags.is_empty() {
            pn_segments.extend(extract_tagged_segments(
                ref_words, hyp_words, &ops, &pn_tags,
            )?);
        }
        let rare_tags: Vec<TagSpan> = ref_words
            .iter()
            .enumerate()
            .filter(|(_, w)| rare_words.contains(*w))
            .map(|(i, _)| TagSpan {
                utt_id: id.clone(),
                start: i,
                end: i,
                label: TagLabel::RareWord,
            })
            .collect();
        if !rare_tags.is_empty() {
            rare_segments.extend(extract_tagged_segments(
                ref_words, hyp_words, &ops, &rare_tags,
            )?);
        }
        alignments.push(ops);
    }
    let report = wer(&alignments)?;
    let propernoun_cer = if pn_segments.is_empty() {
        None
    } else {
        Some(cer(&pn_segments)?)
    };
    let rareword_cer = if rare_segments.is_empty() {
        None
    } else {
        Some(cer(&rare_segments)?)
    };

    let mut text = format!(
        "wer={}\nsub={}\ndel={}\nins={}\nref_words={}\n",
        report.wer_display(),
        report.substitutions,
        report.deletions,
        report.insertions,
        report.reference_words
    );
    if let Some(c) = propernoun_cer {
        text.push_str(&format!("propernoun_cer={c:.1}\n"));
    }
    if let Some(c) = rareword_cer {
        text.push_str(&format!("rareword_cer={c:.1}\n"));
    }
    fs::write(cfg.report_path(), text)?;
    append_entry(
        &cfg.manifest_path(),
        "score",
        &cfg.report_path(),
        &[&refs_path, &hyp_path],
        &cfg.digest_string(),
    )?;
    Ok(ScoreSummary {
        report,
        propernoun_cer,
        rareword_cer,
    })
}

/// The whole pipeline on a synthetic corpus: synth, bootstrap training,
/// alignment, statistics, tree, CD training, decoding, scoring.
pub fn run_full(cfg: &PipelineConfig, spec: &SyntheticSpec) -> Result<ScoreSummary> {
    run_synth(cfg, spec)?;
    run_train(cfg, TrainStage::Ci)?;
    run_align(cfg)?;
    run_stats(cfg)?;
    run_tree(cfg)?;
    run_train(cfg, TrainStage::Cd)?;
    run_decode(cfg)?;
    run_score(cfg)
}
