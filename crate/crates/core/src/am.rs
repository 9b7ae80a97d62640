//! Diagonal-GMM/HMM acoustic model: flat-start initialization, Viterbi
//! forced alignment, hard-assignment EM re-estimation, mixture growing,
//! and re-tying onto a context-dependent state map.
//!
//! Everything runs in the log domain; emission scores are exact log
//! densities. The E-step aligns utterances in parallel and merges the
//! per-utterance accumulators in utterance order, so results are
//! bitwise-deterministic regardless of thread scheduling.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use thiserror::Error;

use crate::context::{build_alignment_graph, CdConfig, HmmTopology, TriContext, UtteranceGraph};
use crate::corpus::{Features, Utterance};
use crate::stats::{fmt_f64, GaussStats, StatsTable};
use crate::tree::{TiedStateMap, TreeError, DEFAULT_VAR_FLOOR, GARBAGE_TIED_ID, SIL_TIED_ID};
use crate::units::{Lexicon, UnitId, UnitInventory};

/// Weight floor applied to mixture weights before renormalization.
pub const WEIGHT_FLOOR: f64 = 1e-5;

#[derive(Debug, Error)]
pub enum AmError {
    #[error("utterance {utt:?} has {frames} frames but the shortest path needs {min}")]
    UtteranceTooShort {
        utt: String,
        frames: usize,
        min: usize,
    },
    #[error("no path through the alignment graph")]
    NoPath,
    #[error("dimension mismatch: {0} vs {1}")]
    DimMismatch(usize, usize),
    #[error("corpus is empty or every utterance was skipped")]
    EmptyCorpus,
    #[error("corpus and graph lists differ in length")]
    LengthMismatch,
    #[error("model file line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error(transparent)]
    Context(#[from] crate::context::ContextError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Diagonal-covariance Gaussian with a precomputed log normalizer.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagGaussian {
    mean: Vec<f64>,
    var: Vec<f64>,
    log_norm: f64,
}

impl DiagGaussian {
    /// Floors the variance elementwise and caches the log normalizer.
    pub fn new(mean: Vec<f64>, var: Vec<f64>, var_floor: f64) -> Self {
        assert_eq!(mean.len(), var.len());
        let var: Vec<f64> = var.into_iter().map(|v| v.max(var_floor)).collect();
        let log_norm = -0.5
            * var
                .iter()
                .map(|v| (2.0 * std::f64::consts::PI * v).ln())
                .sum::<f64>();
        Self {
            mean,
            var,
            log_norm,
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn var(&self) -> &[f64] {
        &self.var
    }

    pub fn log_pdf(&self, x: &[f32]) -> f64 {
        debug_assert_eq!(x.len(), self.dim());
        let mut maha = 0.0;
        for ((&xi, mean), var) in x.iter().zip(&self.mean).zip(&self.var) {
            let diff = xi as f64 - mean;
            maha += diff * diff / var;
        }
        self.log_norm - 0.5 * maha
    }
}

/// Mixture of diagonal Gaussians with log-domain weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Gmm {
    weights: Vec<f64>,
    log_weights: Vec<f64>,
    components: Vec<DiagGaussian>,
}

impl Gmm {
    pub fn single(g: DiagGaussian) -> Self {
        Self {
            weights: vec![1.0],
            log_weights: vec![0.0],
            components: vec![g],
        }
    }

    /// Builds a mixture, flooring and renormalizing the weights.
    pub fn new(weights: Vec<f64>, components: Vec<DiagGaussian>) -> Self {
        assert_eq!(weights.len(), components.len());
        assert!(!components.is_empty());
        let floored: Vec<f64> = weights.iter().map(|w| w.max(WEIGHT_FLOOR)).collect();
        let total: f64 = floored.iter().sum();
        let weights: Vec<f64> = floored.into_iter().map(|w| w / total).collect();
        let log_weights = weights.iter().map(|w| w.ln()).collect();
        Self {
            weights,
            log_weights,
            components,
        }
    }

    pub fn num_components(&self) -> usize {
        self.components.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn components(&self) -> &[DiagGaussian] {
        &self.components
    }

    pub fn dim(&self) -> usize {
        self.components[0].dim()
    }

    pub fn log_pdf(&self, x: &[f32]) -> f64 {
        if self.components.len() == 1 {
            return self.components[0].log_pdf(x);
        }
        let scores: Vec<f64> = self
            .components
            .iter()
            .zip(&self.log_weights)
            .map(|(c, lw)| lw + c.log_pdf(x))
            .collect();
        log_sum_exp(&scores)
    }

    /// Per-component posterior responsibilities for one frame.
    fn responsibilities(&self, x: &[f32]) -> Vec<f64> {
        let scores: Vec<f64> = self
            .components
            .iter()
            .zip(&self.log_weights)
            .map(|(c, lw)| lw + c.log_pdf(x))
            .collect();
        let total = log_sum_exp(&scores);
        scores.iter().map(|s| (s - total).exp()).collect()
    }
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let sum: f64 = values.iter().map(|v| (v - max).exp()).sum();
    max + sum.ln()
}

/// The acoustic model: topology + tied-state map + one GMM per tied state.
#[derive(Debug, Clone)]
pub struct AcousticModel {
    pub topology: HmmTopology,
    pub tied_map: TiedStateMap,
    pub pdfs: Vec<Gmm>,
    pub dim: usize,
}

impl AcousticModel {
    pub fn num_tied_states(&self) -> u32 {
        self.tied_map.num_tied_states()
    }
}

/// Frame-level forced alignment of one utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentResult {
    /// One (tied state id, tri-context) label per frame.
    pub frame_labels: Vec<(u32, TriContext)>,
    /// Total path score: emissions plus transition and exit log-probs.
    pub log_likelihood: f64,
}

/// Viterbi forced alignment against an utterance graph.
///
/// Ties break toward the lower state id, first at the exit state and then
/// at every backtraced transition, so alignments are deterministic.
pub fn viterbi_align(
    graph: &UtteranceGraph,
    features: &Features,
    model: &AcousticModel,
) -> Result<AlignmentResult, AmError> {
    if features.dim() != model.dim {
        return Err(AmError::DimMismatch(features.dim(), model.dim));
    }
    let frames = features.frames();
    let n = graph.num_states();
    if frames < graph.min_path_states() {
        return Err(AmError::NoPath);
    }
    let tied: Vec<u32> = graph
        .contexts()
        .iter()
        .map(|ctx| model.tied_map.tie(ctx))
        .collect::<Result<_, _>>()?;

    // Incoming arcs per state, sorted by source id so the backtrace
    // tie-break is "lowest predecessor wins".
    let mut in_arcs: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for s in 0..n {
        for &(d, lp) in graph.arcs_from(s) {
            in_arcs[d].push((s, lp));
        }
    }
    for arcs in &mut in_arcs {
        arcs.sort_by_key(|&(s, _)| s);
    }

    let emit = |s: usize, t: usize| model.pdfs[tied[s] as usize].log_pdf(features.row(t));

    let mut delta = vec![f64::NEG_INFINITY; n];
    let mut backptr = vec![usize::MAX; n * frames];
    for &(s, lp) in graph.entry_arcs() {
        let score = lp + emit(s, 0);
        if score > delta[s] {
            delta[s] = score;
        }
    }
    let mut next = vec![f64::NEG_INFINITY; n];
    for t in 1..frames {
        for d in 0..n {
            let mut best = f64::NEG_INFINITY;
            let mut best_src = usize::MAX;
            for &(s, lp) in &in_arcs[d] {
                let cand = delta[s] + lp;
                if cand > best {
                    best = cand;
                    best_src = s;
                }
            }
            next[d] = if best == f64::NEG_INFINITY {
                f64::NEG_INFINITY
            } else {
                best + emit(d, t)
            };
            backptr[t * n + d] = best_src;
        }
        std::mem::swap(&mut delta, &mut next);
    }

    let mut best_final = f64::NEG_INFINITY;
    let mut best_state = usize::MAX;
    for (s, &score) in delta.iter().enumerate() {
        if let Some(exit) = graph.exit_logprob(s) {
            let cand = score + exit;
            if cand > best_final {
                best_final = cand;
                best_state = s;
            }
        }
    }
    if best_state == usize::MAX || best_final == f64::NEG_INFINITY {
        return Err(AmError::NoPath);
    }

    let mut path = vec![0usize; frames];
    path[frames - 1] = best_state;
    for t in (1..frames).rev() {
        path[t - 1] = backptr[t * n + path[t]];
    }
    let frame_labels = path.iter().map(|&s| (tied[s], *graph.context(s))).collect();
    Ok(AlignmentResult {
        frame_labels,
        log_likelihood: best_final,
    })
}

/// Result of flat-start initialization.
pub struct FlatStart {
    pub model: AcousticModel,
    /// Per-utterance `UtteranceTooShort` reports for inputs with fewer
    /// frames than canonical states; those utterances are left out of the
    /// seeding.
    pub skipped: Vec<AmError>,
}

/// Flat-start initialization: a context-independent model with one
/// Gaussian per unit variant, seeded by uniformly partitioning each
/// utterance's frames over its canonical state sequence (mandatory
/// silences plus the first pronunciation of every word; optional silences
/// skipped). Units never assigned a frame fall back to the global
/// mean/variance.
pub fn flat_start(
    corpus: &[Utterance],
    lexicon: &Lexicon,
    inventory: &UnitInventory,
    config: &CdConfig,
    topology: &HmmTopology,
) -> Result<FlatStart, AmError> {
    if corpus.is_empty() {
        return Err(AmError::EmptyCorpus);
    }
    let dim = corpus[0].features.dim();
    let tied_map = TiedStateMap::context_independent(inventory);
    let num_tied = tied_map.num_tied_states() as usize;
    let mut acc: Vec<GaussStats> = (0..num_tied).map(|_| GaussStats::new(dim)).collect();
    let mut global = GaussStats::new(dim);
    let mut skipped = Vec::new();
    let mut used_any = false;

    for utt in corpus {
        if utt.features.dim() != dim {
            return Err(AmError::DimMismatch(utt.features.dim(), dim));
        }
        // Canonical linear state sequence: SIL, first pronunciation of each
        // word (GARBAGE for OOVs), SIL.
        let mut seq: Vec<u32> = vec![SIL_TIED_ID];
        for word in &utt.words {
            match lexicon.pronunciations(word) {
                Some(prons) => {
                    for &unit in &prons[0] {
                        seq.push(ci_tied_id(&tied_map, inventory, unit, config)?);
                    }
                }
                None => seq.push(GARBAGE_TIED_ID),
            }
        }
        seq.push(SIL_TIED_ID);
        let frames = utt.features.frames();
        if frames < seq.len() {
            skipped.push(AmError::UtteranceTooShort {
                utt: utt.id.clone(),
                frames,
                min: seq.len(),
            });
            continue;
        }
        used_any = true;
        for (i, &state) in seq.iter().enumerate() {
            let lo = i * frames / seq.len();
            let hi = (i + 1) * frames / seq.len();
            for t in lo..hi {
                acc[state as usize].add_frame(utt.features.row(t));
                global.add_frame(utt.features.row(t));
            }
        }
    }
    if !used_any {
        return Err(AmError::EmptyCorpus);
    }

    let (global_mean, global_var) = global.mean_var(DEFAULT_VAR_FLOOR);
    let pdfs: Vec<Gmm> = acc
        .iter()
        .map(|s| {
            if s.count > 0.0 {
                let (mean, var) = s.mean_var(DEFAULT_VAR_FLOOR);
                Gmm::single(DiagGaussian::new(mean, var, DEFAULT_VAR_FLOOR))
            } else {
                Gmm::single(DiagGaussian::new(
                    global_mean.clone(),
                    global_var.clone(),
                    DEFAULT_VAR_FLOOR,
                ))
            }
        })
        .collect();
    Ok(FlatStart {
        model: AcousticModel {
            topology: *topology,
            tied_map,
            pdfs,
            dim,
        },
        skipped,
    })
}

fn ci_tied_id(
    map: &TiedStateMap,
    inventory: &UnitInventory,
    unit: UnitId,
    config: &CdConfig,
) -> Result<u32, AmError> {
    let unit = if config.position_dependent {
        unit
    } else {
        inventory.internal_variant(unit)
    };
    Ok(map.tie(&TriContext::ci(unit))?)
}

/// Outcome of one EM iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct EmOutcome {
    /// Total Viterbi log-likelihood under the pre-update model.
    pub log_likelihood: f64,
    pub aligned: usize,
    pub skipped: usize,
}

/// One Viterbi-EM iteration: align every utterance under the current
/// model (E-step, parallel per utterance), then re-estimate each tied
/// state's GMM from its aligned frames with per-component posteriors
/// (M-step). States with no aligned frames keep their parameters.
/// Returns the updated model and the pre-update total log-likelihood.
pub fn em_iterate(
    model: &AcousticModel,
    corpus: &[Utterance],
    graphs: &[UtteranceGraph],
) -> Result<(AcousticModel, EmOutcome), AmError> {
    if corpus.len() != graphs.len() {
        return Err(AmError::LengthMismatch);
    }
    if corpus.is_empty() {
        return Err(AmError::EmptyCorpus);
    }
    let alignments: Vec<Option<AlignmentResult>> = corpus
        .par_iter()
        .zip(graphs.par_iter())
        .map(|(utt, graph)| viterbi_align(graph, &utt.features, model).ok())
        .collect();

    let num_tied = model.num_tied_states() as usize;
    let dim = model.dim;
    // Per-(state, component) accumulators, merged in utterance order.
    let mut acc: Vec<Vec<GaussStats>> = model
        .pdfs
        .iter()
        .map(|g| {
            (0..g.num_components())
                .map(|_| GaussStats::new(dim))
                .collect()
        })
        .collect();
    let mut total_ll = 0.0;
    let mut aligned = 0usize;
    let mut skipped = 0usize;
    for (utt, alignment) in corpus.iter().zip(&alignments) {
        match alignment {
            None => skipped += 1,
            Some(a) => {
                aligned += 1;
                total_ll += a.log_likelihood;
                for (t, &(state, _)) in a.frame_labels.iter().enumerate() {
                    let x = utt.features.row(t);
                    let gmm = &model.pdfs[state as usize];
                    if gmm.num_components() == 1 {
                        acc[state as usize][0].add_frame(x);
                    } else {
                        for (k, r) in gmm.responsibilities(x).into_iter().enumerate() {
                            acc[state as usize][k].add_frame_weighted(x, r);
                        }
                    }
                }
            }
        }
    }
    if aligned == 0 {
        return Err(AmError::EmptyCorpus);
    }

    let mut pdfs = Vec::with_capacity(num_tied);
    for (state, old) in model.pdfs.iter().enumerate() {
        let state_acc = &acc[state];
        let state_count: f64 = state_acc.iter().map(|s| s.count).sum();
        if state_count <= 0.0 {
            pdfs.push(old.clone());
            continue;
        }
        let mut weights = Vec::with_capacity(old.num_components());
        let mut comps = Vec::with_capacity(old.num_components());
        for (k, comp_acc) in state_acc.iter().enumerate() {
            weights.push(comp_acc.count / state_count);
            if comp_acc.count > 1e-8 {
                let (mean, var) = comp_acc.mean_var(DEFAULT_VAR_FLOOR);
                comps.push(DiagGaussian::new(mean, var, DEFAULT_VAR_FLOOR));
            } else {
                comps.push(old.components()[k].clone());
            }
        }
        pdfs.push(Gmm::new(weights, comps));
    }
    Ok((
        AcousticModel {
            topology: model.topology,
            tied_map: model.tied_map.clone(),
            pdfs,
            dim,
        },
        EmOutcome {
            log_likelihood: total_ll,
            aligned,
            skipped,
        },
    ))
}

/// Grows every pdf to `target` components by repeatedly splitting the
/// largest-weight component, perturbing the two means by +-0.1 sigma.
pub fn split_mixtures(model: &AcousticModel, target: usize) -> AcousticModel {
    let pdfs = model
        .pdfs
        .iter()
        .map(|gmm| {
            let mut weights = gmm.weights().to_vec();
            let mut comps = gmm.components().to_vec();
            while comps.len() < target {
                let (k, _) = weights
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.total_cmp(b.1))
                    .expect("mixtures are nonempty");
                let w = weights[k] / 2.0;
                let base = comps[k].clone();
                let sigma: Vec<f64> = base.var().iter().map(|v| v.sqrt()).collect();
                let minus: Vec<f64> = base
                    .mean()
                    .iter()
                    .zip(&sigma)
                    .map(|(m, s)| m - 0.1 * s)
                    .collect();
                let plus: Vec<f64> = base
                    .mean()
                    .iter()
                    .zip(&sigma)
                    .map(|(m, s)| m + 0.1 * s)
                    .collect();
                weights[k] = w;
                comps[k] = DiagGaussian::new(minus, base.var().to_vec(), DEFAULT_VAR_FLOOR);
                weights.push(w);
                comps.push(DiagGaussian::new(
                    plus,
                    base.var().to_vec(),
                    DEFAULT_VAR_FLOOR,
                ));
            }
            Gmm::new(weights, comps)
        })
        .collect();
    AcousticModel {
        topology: model.topology,
        tied_map: model.tied_map.clone(),
        pdfs,
        dim: model.dim,
    }
}

/// Re-ties a bootstrap model onto a context-dependent map: every tied
/// state's pdf is seeded with a single Gaussian from its pooled leaf
/// statistics. Empty leaves inherit the nearest ancestor's pool; ids with
/// no statistics at all (including `SIL`/`GARBAGE` in a sparse table) keep
/// the bootstrap model's corresponding pdf when one exists, else the
/// global pool.
pub fn retie(
    model: &AcousticModel,
    tied_map: TiedStateMap,
    stats: &StatsTable,
) -> Result<AcousticModel, AmError> {
    if stats.dim() != model.dim {
        return Err(AmError::DimMismatch(stats.dim(), model.dim));
    }
    let pooled = tied_map.leaf_stats_with_fallback(stats);
    let mut global = GaussStats::new(stats.dim());
    for (_, s) in stats.rows() {
        global.add(s);
    }
    let (gmean, gvar) = global.mean_var(DEFAULT_VAR_FLOOR);
    let pdfs: Vec<Gmm> = pooled
        .iter()
        .enumerate()
        .map(|(id, slot)| match slot {
            Some(s) if s.count > 0.0 => {
                let (mean, var) = s.mean_var(DEFAULT_VAR_FLOOR);
                Gmm::single(DiagGaussian::new(mean, var, DEFAULT_VAR_FLOOR))
            }
            _ => {
                if id == SIL_TIED_ID as usize || id == GARBAGE_TIED_ID as usize {
                    model.pdfs[id].clone()
                } else {
                    Gmm::single(DiagGaussian::new(
                        gmean.clone(),
                        gvar.clone(),
                        DEFAULT_VAR_FLOOR,
                    ))
                }
            }
        })
        .collect();
    Ok(AcousticModel {
        topology: model.topology,
        tied_map,
        pdfs,
        dim: model.dim,
    })
}

/// Convenience: builds alignment graphs for a whole corpus.
pub fn build_graphs(
    corpus: &[Utterance],
    lexicon: &Lexicon,
    inventory: &UnitInventory,
    config: &CdConfig,
    topology: &HmmTopology,
) -> Result<Vec<UtteranceGraph>, AmError> {
    corpus
        .iter()
        .map(|u| {
            Ok(build_alignment_graph(
                &u.words, lexicon, inventory, config, topology,
            )?)
        })
        .collect()
}

/// Writes the `CFAM v1` text format: header with dim, tied-state count and
/// self-loop probability, then one `PDF` block per tied state with `W`,
/// and per component `M`/`V` lines at 17 significant digits.
pub fn write_model<W: Write>(model: &AcousticModel, mut w: W) -> io::Result<()> {
    writeln!(
        w,
        "CFAM v1 dim={} leaves={} selfloop={}",
        model.dim,
        model.num_tied_states(),
        model.topology.self_loop_prob()
    )?;
    for (id, gmm) in model.pdfs.iter().enumerate() {
        writeln!(w, "PDF {} ncomp={}", id, gmm.num_components())?;
        let weights: Vec<String> = gmm.weights().iter().map(|v| fmt_f64(*v)).collect();
        writeln!(w, "W {}", weights.join(" "))?;
        for comp in gmm.components() {
            let mean: Vec<String> = comp.mean().iter().map(|v| fmt_f64(*v)).collect();
            let var: Vec<String> = comp.var().iter().map(|v| fmt_f64(*v)).collect();
            writeln!(w, "M {}", mean.join(" "))?;
            writeln!(w, "V {}", var.join(" "))?;
        }
    }
    Ok(())
}

pub fn write_model_file<P: AsRef<Path>>(model: &AcousticModel, path: P) -> io::Result<()> {
    let mut f = BufWriter::new(File::create(path)?);
    write_model(model, &mut f)?;
    f.flush()
}

/// Reads a `CFAM v1` model, attaching the given tied-state map (stored
/// separately in the `CFTREE` format).
pub fn read_model<R: BufRead>(r: R, tied_map: TiedStateMap) -> Result<AcousticModel, AmError> {
    let mut lines = Vec::new();
    for line in r.lines() {
        lines.push(line?);
    }
    let header = lines.first().ok_or_else(|| AmError::Malformed {
        line: 1,
        message: "missing header".into(),
    })?;
    let (dim, leaves, self_loop) = parse_am_header(header).ok_or_else(|| AmError::Malformed {
        line: 1,
        message: format!("bad header {header:?}"),
    })?;
    if leaves != tied_map.num_tied_states() as usize {
        return Err(AmError::Malformed {
            line: 1,
            message: format!(
                "model has {leaves} tied states but the map has {}",
                tied_map.num_tied_states()
            ),
        });
    }
    let topology = HmmTopology::new(self_loop).map_err(|_| AmError::Malformed {
        line: 1,
        message: format!("bad self-loop {self_loop}"),
    })?;
    let mut pdfs: Vec<Gmm> = Vec::with_capacity(leaves);
    let mut i = 1usize;
    while i < lines.len() {
        let line = lines[i].trim();
        if line.is_empty() {
            i += 1;
            continue;
        }
        let bad = |message: String, at: usize| AmError::Malformed {
            line: at + 1,
            message,
        };
        let mut parts = line.split_whitespace();
        if parts.next() != Some("PDF") {
            return Err(bad(format!("expected PDF, got {line:?}"), i));
        }
        let id: usize = parts
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| bad("bad pdf id".into(), i))?;
        if id != pdfs.len() {
            return Err(bad(format!("pdf {id} out of order"), i));
        }
        let ncomp: usize = parts
            .next()
            .and_then(|t| t.strip_prefix("ncomp="))
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| bad("bad ncomp".into(), i))?;
        i += 1;
        let weights = parse_values(lines.get(i), "W").ok_or_else(|| bad("bad W line".into(), i))?;
        if weights.len() != ncomp {
            return Err(bad("weight count mismatch".into(), i));
        }
        i += 1;
        let mut comps = Vec::with_capacity(ncomp);
        for _ in 0..ncomp {
            let mean =
                parse_values(lines.get(i), "M").ok_or_else(|| bad("bad M line".into(), i))?;
            i += 1;
            let var = parse_values(lines.get(i), "V").ok_or_else(|| bad("bad V line".into(), i))?;
            i += 1;
            if mean.len() != dim || var.len() != dim {
                return Err(bad("component dim mismatch".into(), i));
            }
            comps.push(DiagGaussian::new(mean, var, DEFAULT_VAR_FLOOR));
        }
        pdfs.push(Gmm::new(weights, comps));
    }
    if pdfs.len() != leaves {
        return Err(AmError::Malformed {
            line: lines.len(),
            message: format!("expected {leaves} pdfs, found {}", pdfs.len()),
        });
    }
    Ok(AcousticModel {
        topology,
        tied_map,
        pdfs,
        dim,
    })
}

pub fn read_model_file<P: AsRef<Path>>(
    path: P,
    tied_map: TiedStateMap,
) -> Result<AcousticModel, AmError> {
    read_model(BufReader::new(File::open(path)?), tied_map)
}

fn parse_am_header(line: &str) -> Option<(usize, usize, f64)> {
    let mut parts = line.split_whitespace();
    if parts.next() != Some("CFAM") || parts.next() != Some("v1") {
        return None;
    }
    let mut dim = None;
    let mut leaves = None;
    let mut self_loop = None;
    for p in parts {
        if let Some(v) = p.strip_prefix("dim=") {
            dim = v.parse().ok();
        } else if let Some(v) = p.strip_prefix("leaves=") {
            leaves = v.parse().ok();
        } else if let Some(v) = p.strip_prefix("selfloop=") {
            self_loop = v.parse().ok();
        }
    }
    Some((dim?, leaves?, self_loop?))
}

fn parse_values(line: Option<&String>, tag: &str) -> Option<Vec<f64>> {
    let mut parts = line?.split_whitespace();
    if parts.next() != Some(tag) {
        return None;
    }
    parts.map(|t| t.parse::<f64>().ok()).collect()
}
