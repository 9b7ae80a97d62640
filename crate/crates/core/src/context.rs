//! Context expansion and HMM alignment graphs.
//!
//! Every unit instance is modeled in its tri-context (left, center, right).
//! Word edges and silence are represented by a boundary sentinel, so
//! within-word expansion never leaks context across words. Alignment graphs
//! use the 1-state-per-unit topology with fixed self-loop and forward
//! probability, mandatory silence at the utterance edges, and optional
//! silence between words.

use std::fmt;
use std::io::{self, Write};

use thiserror::Error;

use crate::units::{Lexicon, UnitId, UnitInventory, UnitKind};

#[derive(Debug, Error)]
pub enum ContextError {
    #[error("transcript is empty")]
    EmptyTranscript,
    #[error("topology is invalid: self-loop {0} must lie in (0, 1)")]
    InvalidTopology(f64),
    #[error("malformed graph: {0}")]
    BadGraph(String),
}

/// A context slot: either a real unit or the boundary sentinel used at word
/// edges and around silence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Neighbor {
    Boundary,
    Unit(UnitId),
}

impl Neighbor {
    pub fn unit(self) -> Option<UnitId> {
        match self {
            Neighbor::Boundary => None,
            Neighbor::Unit(u) => Some(u),
        }
    }
}

/// The (left, center, right) window a tied state is conditioned on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TriContext {
    pub left: Neighbor,
    pub center: UnitId,
    pub right: Neighbor,
}

impl TriContext {
    pub fn new(left: Neighbor, center: UnitId, right: Neighbor) -> Self {
        Self {
            left,
            center,
            right,
        }
    }

    /// Context-independent form: both neighbors are the sentinel.
    pub fn ci(center: UnitId) -> Self {
        Self {
            left: Neighbor::Boundary,
            center,
            right: Neighbor::Boundary,
        }
    }
}

// Rows sort by center first so serialized stats group per unit.
impl Ord for TriContext {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.center, self.left, self.right).cmp(&(other.center, other.left, other.right))
    }
}

impl PartialOrd for TriContext {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

/// Context- and position-dependency switches.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CdConfig {
    pub context_dependent: bool,
    pub position_dependent: bool,
    pub cross_word_context: bool,
}

impl Default for CdConfig {
    fn default() -> Self {
        Self {
            context_dependent: true,
            position_dependent: true,
            cross_word_context: false,
        }
    }
}

/// 1-state-per-unit HMM topology with fixed self-loop and forward
/// probability.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HmmTopology {
    self_loop_prob: f64,
    forward_prob: f64,
}

impl Default for HmmTopology {
    fn default() -> Self {
        Self {
            self_loop_prob: 0.5,
            forward_prob: 0.5,
        }
    }
}

impl HmmTopology {
    pub fn new(self_loop_prob: f64) -> Result<Self, ContextError> {
        if !(self_loop_prob > 0.0 && self_loop_prob < 1.0) {
            return Err(ContextError::InvalidTopology(self_loop_prob));
        }
        Ok(Self {
            self_loop_prob,
            forward_prob: 1.0 - self_loop_prob,
        })
    }

    pub fn states_per_unit(&self) -> usize {
        1
    }

    pub fn self_loop_prob(&self) -> f64 {
        self.self_loop_prob
    }

    pub fn forward_prob(&self) -> f64 {
        self.forward_prob
    }

    pub fn log_self_loop(&self) -> f64 {
        self.self_loop_prob.ln()
    }

    pub fn log_forward(&self) -> f64 {
        self.forward_prob.ln()
    }
}

fn is_special(inv: &UnitInventory, u: UnitId) -> bool {
    matches!(inv.unit(u).kind, UnitKind::Silence | UnitKind::Garbage)
}

/// Expands one word's units to tri-contexts.
///
/// Boundary sentinels appear at the word edges. Silence and garbage units
/// are always context-independent and reset the context of their
/// neighbors. With `context_dependent` off every context is CI; with
/// `position_dependent` off units are projected to their internal variants
/// before expansion.
pub fn expand_contexts(
    units: &[UnitId],
    inventory: &UnitInventory,
    config: &CdConfig,
) -> Vec<TriContext> {
    let projected: Vec<UnitId> = if config.position_dependent {
        units.to_vec()
    } else {
        units
            .iter()
            .map(|&u| inventory.internal_variant(u))
            .collect()
    };
    let n = projected.len();
    (0..n)
        .map(|i| {
            let center = projected[i];
            if !config.context_dependent || is_special(inventory, center) {
                return TriContext::ci(center);
            }
            let left = match i.checked_sub(1).map(|j| projected[j]) {
                Some(u) if !is_special(inventory, u) => Neighbor::Unit(u),
                _ => Neighbor::Boundary,
            };
            let right = match projected.get(i + 1).copied() {
                Some(u) if !is_special(inventory, u) => Neighbor::Unit(u),
                _ => Neighbor::Boundary,
            };
            TriContext::new(left, center, right)
        })
        .collect()
}

/// Expands a sequence of words. With `cross_word_context` off each word is
/// expanded independently (sentinels at the edges); with it on, the edge
/// units of adjacent words see each other.
pub fn expand_word_sequence(
    words: &[Vec<UnitId>],
    inventory: &UnitInventory,
    config: &CdConfig,
) -> Vec<Vec<TriContext>> {
    if !config.cross_word_context || !config.context_dependent {
        return words
            .iter()
            .map(|w| expand_contexts(w, inventory, config))
            .collect();
    }
    let project = |u: UnitId| {
        if config.position_dependent {
            u
        } else {
            inventory.internal_variant(u)
        }
    };
    let neighbor = |u: Option<UnitId>| match u {
        Some(u) if !is_special(inventory, u) => Neighbor::Unit(project(u)),
        _ => Neighbor::Boundary,
    };
    words
        .iter()
        .enumerate()
        .map(|(wi, word)| {
            let mut ctxs = expand_contexts(word, inventory, config);
            if let Some(first) = ctxs.first_mut() {
                if first.left == Neighbor::Boundary && !is_special(inventory, first.center) {
                    let prev = wi.checked_sub(1).and_then(|j| words[j].last().copied());
                    first.left = neighbor(prev);
                }
            }
            if let Some(last) = ctxs.last_mut() {
                if last.right == Neighbor::Boundary && !is_special(inventory, last.center) {
                    let next = words.get(wi + 1).and_then(|w| w.first().copied());
                    last.right = neighbor(next);
                }
            }
            ctxs
        })
        .collect()
}

/// Forced-alignment graph for one utterance: a linear word chain with
/// mandatory silence at the utterance edges, optional silence between
/// words, and one emitting HMM state per unit.
#[derive(Debug, Clone)]
pub struct UtteranceGraph {
    contexts: Vec<TriContext>,
    entry_arcs: Vec<(usize, f64)>,
    arcs: Vec<Vec<(usize, f64)>>,
    exit_arcs: Vec<Option<f64>>,
    min_path_states: usize,
}

impl UtteranceGraph {
    pub fn num_states(&self) -> usize {
        self.contexts.len()
    }

    pub fn context(&self, state: usize) -> &TriContext {
        &self.contexts[state]
    }

    pub fn contexts(&self) -> &[TriContext] {
        &self.contexts
    }

    /// Arcs from the virtual start node into emitting states.
    pub fn entry_arcs(&self) -> &[(usize, f64)] {
        &self.entry_arcs
    }

    /// Outgoing arcs of a state, self-loop included.
    pub fn arcs_from(&self, state: usize) -> &[(usize, f64)] {
        &self.arcs[state]
    }

    /// Log-probability of leaving `state` for the final node, if allowed.
    pub fn exit_logprob(&self, state: usize) -> Option<f64> {
        self.exit_arcs[state]
    }

    /// Number of states on the shortest complete path; a complete path must
    /// emit at least this many frames.
    pub fn min_path_states(&self) -> usize {
        self.min_path_states
    }

    /// Assembles a graph from raw parts. Intended for tooling and tests;
    /// `build_alignment_graph` is the normal constructor.
    pub fn from_parts(
        contexts: Vec<TriContext>,
        entry_arcs: Vec<(usize, f64)>,
        arcs: Vec<Vec<(usize, f64)>>,
        exit_arcs: Vec<Option<f64>>,
    ) -> Result<Self, ContextError> {
        let n = contexts.len();
        if n == 0 {
            return Err(ContextError::BadGraph("graph has no states".into()));
        }
        if arcs.len() != n || exit_arcs.len() != n {
            return Err(ContextError::BadGraph(
                "arc tables do not match state count".into(),
            ));
        }
        let all = entry_arcs
            .iter()
            .chain(arcs.iter().flatten())
            .map(|&(dst, lp)| (dst, lp));
        for (dst, lp) in all {
            if dst >= n {
                return Err(ContextError::BadGraph(format!(
                    "arc to unknown state {dst}"
                )));
            }
            if lp > 0.0 || lp.is_nan() {
                return Err(ContextError::BadGraph(format!("arc log-prob {lp} > 0")));
            }
        }
        if exit_arcs
            .iter()
            .flatten()
            .any(|&lp| lp > 0.0 || lp.is_nan())
        {
            return Err(ContextError::BadGraph("exit log-prob > 0".into()));
        }
        let min_path_states = min_path_states(&entry_arcs, &arcs, &exit_arcs)
            .ok_or_else(|| ContextError::BadGraph("no complete path".into()))?;
        Ok(Self {
            contexts,
            entry_arcs,
            arcs,
            exit_arcs,
            min_path_states,
        })
    }

    /// Writes the graph as one arc per line, `src dst label logprob`, with
    /// `start`/`final` pseudo-nodes. Debugging aid, not a parsed format.
    pub fn write_text<W: Write>(&self, inventory: &UnitInventory, mut w: W) -> io::Result<()> {
        let label = |ctx: &TriContext| {
            let side = |n: Neighbor| match n {
                Neighbor::Boundary => "<b>".to_string(),
                Neighbor::Unit(u) => inventory.format_unit(u),
            };
            format!(
                "{},{},{}",
                side(ctx.left),
                inventory.format_unit(ctx.center),
                side(ctx.right)
            )
        };
        for &(dst, lp) in &self.entry_arcs {
            writeln!(w, "start {} {} {:.6}", dst, label(&self.contexts[dst]), lp)?;
        }
        for (src, arcs) in self.arcs.iter().enumerate() {
            for &(dst, lp) in arcs {
                writeln!(
                    w,
                    "{} {} {} {:.6}",
                    src,
                    dst,
                    label(&self.contexts[dst]),
                    lp
                )?;
            }
        }
        for (src, exit) in self.exit_arcs.iter().enumerate() {
            if let Some(lp) = exit {
                writeln!(w, "{} final - {:.6}", src, lp)?;
            }
        }
        Ok(())
    }
}

fn min_path_states(
    entry_arcs: &[(usize, f64)],
    arcs: &[Vec<(usize, f64)>],
    exit_arcs: &[Option<f64>],
) -> Option<usize> {
    // Forward DP over the acyclic skeleton (self-loops ignored).
    let n = arcs.len();
    let mut dist = vec![usize::MAX; n];
    for &(s, _) in entry_arcs {
        dist[s] = 1;
    }
    // States are created in topological order by the builder; a fixed-point
    // sweep keeps this correct for hand-built graphs too.
    let mut changed = true;
    while changed {
        changed = false;
        for s in 0..n {
            if dist[s] == usize::MAX {
                continue;
            }
            for &(d, _) in &arcs[s] {
                if d != s && dist[s] + 1 < dist[d] {
                    dist[d] = dist[s] + 1;
                    changed = true;
                }
            }
        }
    }
    (0..n)
        .filter(|&s| exit_arcs[s].is_some() && dist[s] != usize::MAX)
        .map(|s| dist[s])
        .min()
}

struct GraphBuilder {
    contexts: Vec<TriContext>,
    entry_arcs: Vec<(usize, f64)>,
    arcs: Vec<Vec<(usize, f64)>>,
    exit_arcs: Vec<Option<f64>>,
    topology: HmmTopology,
}

impl GraphBuilder {
    fn new(topology: HmmTopology) -> Self {
        Self {
            contexts: Vec::new(),
            entry_arcs: Vec::new(),
            arcs: Vec::new(),
            exit_arcs: Vec::new(),
            topology,
        }
    }

    fn add_state(&mut self, ctx: TriContext) -> usize {
        let id = self.contexts.len();
        self.contexts.push(ctx);
        self.arcs.push(vec![(id, self.topology.log_self_loop())]);
        self.exit_arcs.push(None);
        id
    }

    fn connect(&mut self, sources: &[(usize, f64)], dst: usize) {
        for &(src, logmass) in sources {
            self.arcs[src].push((dst, logmass));
        }
    }
}

/// Builds the forced-alignment graph for a transcript.
///
/// Out-of-vocabulary words become a single `GARBAGE` state; words with
/// several pronunciations become parallel branches with uniform branch
/// mass. Every emitting state keeps `self_loop + sum(forward arcs) = 1`.
/// With `cross_word_context` on, neighbor labels use each word's first
/// pronunciation.
pub fn build_alignment_graph(
    transcript: &[String],
    lexicon: &Lexicon,
    inventory: &UnitInventory,
    config: &CdConfig,
    topology: &HmmTopology,
) -> Result<UtteranceGraph, ContextError> {
    if transcript.is_empty() {
        return Err(ContextError::EmptyTranscript);
    }
    let garbage_pron = vec![UnitId::GARBAGE];
    let prons_per_word: Vec<Vec<Vec<UnitId>>> = transcript
        .iter()
        .map(|w| match lexicon.pronunciations(w) {
            Some(prons) => prons.to_vec(),
            None => vec![garbage_pron.clone()],
        })
        .collect();
    // Context labels per word and pronunciation; cross-word labeling keys
    // off the first pronunciation of each neighbor.
    let first_prons: Vec<Vec<UnitId>> = prons_per_word.iter().map(|p| p[0].clone()).collect();
    let first_ctxs = expand_word_sequence(&first_prons, inventory, config);
    let word_ctxs: Vec<Vec<Vec<TriContext>>> = prons_per_word
        .iter()
        .enumerate()
        .map(|(wi, prons)| {
            prons
                .iter()
                .enumerate()
                .map(|(pi, pron)| {
                    if pi == 0 {
                        first_ctxs[wi].clone()
                    } else {
                        let mut seq = first_prons.clone();
                        seq[wi] = pron.clone();
                        expand_word_sequence(&seq, inventory, config)[wi].clone()
                    }
                })
                .collect()
        })
        .collect();

    let mut b = GraphBuilder::new(*topology);
    let fwd = topology.log_forward();
    let half = 0.5f64.ln();

    // Mandatory utterance-initial silence.
    let start_sil = b.add_state(TriContext::ci(UnitId::SILENCE));
    b.entry_arcs.push((start_sil, 0.0));

    // `frontier`: states whose next forward arc enters the upcoming word,
    // with the log mass already accumulated on that pending arc.
    let mut frontier: Vec<(usize, f64)> = vec![(start_sil, fwd)];
    let last_word = transcript.len() - 1;
    for (wi, prons) in word_ctxs.iter().enumerate() {
        let branch_mass = -(prons.len() as f64).ln();
        let mut word_finals: Vec<usize> = Vec::new();
        for ctxs in prons {
            let mut prev: Option<usize> = None;
            for ctx in ctxs {
                let s = b.add_state(*ctx);
                match prev {
                    None => {
                        let sources: Vec<(usize, f64)> = frontier
                            .iter()
                            .map(|&(src, m)| (src, m + branch_mass))
                            .collect();
                        b.connect(&sources, s);
                    }
                    Some(p) => b.connect(&[(p, fwd)], s),
                }
                prev = Some(s);
            }
            word_finals.push(prev.expect("pronunciations are nonempty"));
        }
        if wi == last_word {
            // Mandatory utterance-final silence, then exit.
            let end_sil = b.add_state(TriContext::ci(UnitId::SILENCE));
            for &f in &word_finals {
                b.connect(&[(f, fwd)], end_sil);
            }
            b.exit_arcs[end_sil] = Some(fwd);
            frontier.clear();
        } else {
            // Optional inter-word silence: skip and take both carry half of
            // the forward mass.
            let sil = b.add_state(TriContext::ci(UnitId::SILENCE));
            for &f in &word_finals {
                b.connect(&[(f, fwd + half)], sil);
            }
            frontier = word_finals.iter().map(|&f| (f, fwd + half)).collect();
            frontier.push((sil, fwd));
        }
    }

    let min = min_path_states(&b.entry_arcs, &b.arcs, &b.exit_arcs)
        .expect("constructed graphs always have a complete path");
    Ok(UtteranceGraph {
        contexts: b.contexts,
        entry_arcs: b.entry_arcs,
        arcs: b.arcs,
        exit_arcs: b.exit_arcs,
        min_path_states: min,
    })
}

impl fmt::Display for TriContext {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let side = |n: &Neighbor| match n {
            Neighbor::Boundary => "<b>".to_string(),
            Neighbor::Unit(u) => format!("u{}", u.0),
        };
        write!(
            f,
            "({},u{},{})",
            side(&self.left),
            self.center.0,
            side(&self.right)
        )
    }
}
