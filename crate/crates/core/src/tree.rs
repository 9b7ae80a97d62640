//! Decision-tree state tying: chenones for graphemes, senones for phones.
//!
//! Questions are set-membership tests on a context slot, generated fully
//! data-driven by bottom-up agglomerative clustering of the per-slot
//! Gaussian statistics. Trees grow greedily, always applying the
//! (leaf, question) pair with the largest single-Gaussian log-likelihood
//! gain, under `max_leaves` / `min_gain` / `min_count` limits. Each base
//! center unit gets its own root; its word-boundary and internal variants
//! share that root iff `share_wb_root` is set. `SIL` and `GARBAGE` are not
//! clustered and hold the fixed tied ids 0 and 1.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use thiserror::Error;

use crate::context::{Neighbor, TriContext};
use crate::stats::{fmt_f64, GaussStats, StatsTable};
use crate::units::{Position, UnitId, UnitInventory, UnitKind};

/// Tied id of the silence unit.
pub const SIL_TIED_ID: u32 = 0;
/// Tied id of the OOV catch-all unit.
pub const GARBAGE_TIED_ID: u32 = 1;
/// Default elementwise variance floor used in likelihood computations.
pub const DEFAULT_VAR_FLOOR: f64 = 1e-4;

#[derive(Debug, Error)]
pub enum TreeError {
    #[error("statistics are empty")]
    EmptyStats,
    #[error("no root group for center unit {0:?}")]
    MissingRoot(String),
    #[error("unknown center unit {0:?}")]
    UnknownCenterUnit(String),
    #[error("statistics row has zero count")]
    ZeroCount,
    #[error("max_leaves {max_leaves} is below the {roots} root groups")]
    TooFewLeaves { max_leaves: usize, roots: usize },
    #[error("bad tree config: {0}")]
    BadConfig(String),
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Context slot a question inspects.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum QuestionSlot {
    Left,
    Right,
    Center,
    Position,
}

impl QuestionSlot {
    fn as_str(self) -> &'static str {
        match self {
            QuestionSlot::Left => "left",
            QuestionSlot::Right => "right",
            QuestionSlot::Center => "center",
            QuestionSlot::Position => "position",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "left" => Some(QuestionSlot::Left),
            "right" => Some(QuestionSlot::Right),
            "center" => Some(QuestionSlot::Center),
            "position" => Some(QuestionSlot::Position),
            _ => None,
        }
    }
}

/// Set-membership test on a context slot. Members are base unit symbols;
/// the boundary sentinel belongs to no set, so it always answers "no".
/// The `Position` question tests whether the center unit is a word-boundary
/// variant and carries the fixed member set `{WB}`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Question {
    pub slot: QuestionSlot,
    pub members: BTreeSet<String>,
}

impl Question {
    pub fn membership<I, S>(slot: QuestionSlot, members: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            slot,
            members: members.into_iter().map(Into::into).collect(),
        }
    }

    pub fn position() -> Self {
        Self {
            slot: QuestionSlot::Position,
            members: std::iter::once("WB".to_string()).collect(),
        }
    }

    pub fn answer(&self, ctx: &TriContext, units: &UnitTable) -> bool {
        match self.slot {
            QuestionSlot::Left => self.neighbor_in(ctx.left, units),
            QuestionSlot::Right => self.neighbor_in(ctx.right, units),
            QuestionSlot::Center => self.members.contains(units.base(ctx.center)),
            QuestionSlot::Position => units.position(ctx.center) == Position::WordBoundary,
        }
    }

    fn neighbor_in(&self, n: Neighbor, units: &UnitTable) -> bool {
        match n {
            Neighbor::Boundary => false,
            Neighbor::Unit(u) => self.members.contains(units.base(u)),
        }
    }
}

/// Immutable snapshot of an inventory's unit identities, kept inside the
/// tied-state map so lookups need no inventory at call sites.
#[derive(Debug, Clone)]
pub struct UnitTable {
    entries: Vec<(String, Position, UnitKind)>,
}

impl UnitTable {
    pub fn from_inventory(inventory: &UnitInventory) -> Self {
        Self {
            entries: inventory
                .units()
                .iter()
                .map(|u| (u.symbol.clone(), u.position, u.kind))
                .collect(),
        }
    }

    pub fn base(&self, id: UnitId) -> &str {
        &self.entries[id.index()].0
    }

    pub fn position(&self, id: UnitId) -> Position {
        self.entries[id.index()].1
    }

    pub fn kind(&self, id: UnitId) -> UnitKind {
        self.entries[id.index()].2
    }
}

/// Limits for tree growth.
#[derive(Debug, Clone, PartialEq)]
pub struct TreeConfig {
    /// Upper bound on clustered leaves; the fixed `SIL`/`GARBAGE` ids are
    /// not counted against it.
    pub max_leaves: usize,
    pub min_gain: f64,
    pub min_count: f64,
    pub share_wb_root: bool,
    pub var_floor: f64,
}

impl Default for TreeConfig {
    fn default() -> Self {
        Self {
            max_leaves: 128,
            min_gain: 150.0,
            min_count: 3.0,
            share_wb_root: false,
            var_floor: DEFAULT_VAR_FLOOR,
        }
    }
}

/// Log-likelihood of a stats row under its own maximum-likelihood diagonal
/// Gaussian: `-count/2 * sum_d(log(2*pi*var_d) + 1)`, variances floored.
pub fn single_gauss_loglik(stats: &GaussStats, var_floor: f64) -> Result<f64, TreeError> {
    if stats.count <= 0.0 {
        return Err(TreeError::ZeroCount);
    }
    Ok(loglik_unchecked(stats, var_floor))
}

fn loglik_unchecked(stats: &GaussStats, var_floor: f64) -> f64 {
    if stats.count <= 0.0 {
        return 0.0;
    }
    let n = stats.count;
    let mut acc = 0.0;
    for d in 0..stats.dim() {
        let mean = stats.sum[d] / n;
        let var = (stats.sum_sq[d] / n - mean * mean).max(var_floor);
        acc += (2.0 * std::f64::consts::PI * var).ln() + 1.0;
    }
    -0.5 * n * acc
}

/// Gain of splitting a node by `question`: `L(yes) + L(no) - L(parent)`.
/// Returns `f64::NEG_INFINITY` when either side falls under `min_count`.
pub fn split_gain(
    parent: &GaussStats,
    question: &Question,
    rows: &[(&TriContext, &GaussStats)],
    units: &UnitTable,
    min_count: f64,
    var_floor: f64,
) -> f64 {
    let mut yes = GaussStats::new(parent.dim());
    for (ctx, stats) in rows {
        if question.answer(ctx, units) {
            yes.add(stats);
        }
    }
    let no = parent.minus(&yes);
    if yes.count < min_count || no.count < min_count {
        return f64::NEG_INFINITY;
    }
    loglik_unchecked(&yes, var_floor) + loglik_unchecked(&no, var_floor)
        - loglik_unchecked(parent, var_floor)
}

/// Generates the question set from alignment statistics.
///
/// Per slot (left, right): every base unit seen in that slot becomes a
/// singleton question, then bottom-up agglomerative clustering repeatedly
/// merges the pair with the smallest pooled-likelihood loss and emits every
/// intermediate cluster as a question. The `Position` question is always
/// emitted. Ties break toward the lexicographically smallest member symbol.
pub fn generate_questions(
    stats: &StatsTable,
    inventory: &UnitInventory,
    var_floor: f64,
) -> Result<Vec<Question>, TreeError> {
    if stats.is_empty() {
        return Err(TreeError::EmptyStats);
    }
    let units = UnitTable::from_inventory(inventory);
    let mut questions = Vec::new();
    for slot in [QuestionSlot::Left, QuestionSlot::Right] {
        let mut marginals: BTreeMap<String, GaussStats> = BTreeMap::new();
        for (ctx, row) in stats.rows() {
            let neighbor = match slot {
                QuestionSlot::Left => ctx.left,
                QuestionSlot::Right => ctx.right,
                _ => unreachable!(),
            };
            if let Neighbor::Unit(u) = neighbor {
                marginals
                    .entry(units.base(u).to_string())
                    .and_modify(|s| s.add(row))
                    .or_insert_with(|| row.clone());
            }
        }
        // Singleton questions, then one question per agglomerative merge.
        // `clusters` is kept ordered by smallest member; merging keeps that
        // order because the union inherits the smaller minimum.
        let mut clusters: Vec<(BTreeSet<String>, GaussStats)> = marginals
            .into_iter()
            .map(|(sym, st)| {
                questions.push(Question::membership(slot, [sym.clone()]));
                (std::iter::once(sym).collect::<BTreeSet<_>>(), st)
            })
            .collect();
        while clusters.len() > 1 {
            let mut best: Option<(f64, usize, usize)> = None;
            for i in 0..clusters.len() {
                for j in (i + 1)..clusters.len() {
                    let mut pooled = clusters[i].1.clone();
                    pooled.add(&clusters[j].1);
                    let loss = loglik_unchecked(&clusters[i].1, var_floor)
                        + loglik_unchecked(&clusters[j].1, var_floor)
                        - loglik_unchecked(&pooled, var_floor);
                    if best.is_none_or(|(l, _, _)| loss < l) {
                        best = Some((loss, i, j));
                    }
                }
            }
            let (_, i, j) = best.expect("at least one pair exists");
            let (set_j, stats_j) = clusters.remove(j);
            clusters[i].0.extend(set_j);
            clusters[i].1.add(&stats_j);
            questions.push(Question {
                slot,
                members: clusters[i].0.clone(),
            });
        }
    }
    questions.push(Question::position());
    questions.sort();
    questions.dedup();
    Ok(questions)
}

/// Root group key: a base center symbol, position-specific unless the WB
/// and internal variants share the root.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RootKey {
    pub base: String,
    pub position: Option<Position>,
}

impl RootKey {
    fn label(&self) -> String {
        match self.position {
            Some(Position::WordBoundary) => format!("{}_WB", self.base),
            _ => self.base.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TreeNode {
    Internal {
        question: Question,
        yes: Box<TreeNode>,
        no: Box<TreeNode>,
        gain: f64,
    },
    Leaf {
        id: u32,
    },
}

/// One accepted split, in the order splits were applied. Debug/verification
/// aid; not serialized.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitRecord {
    pub root: RootKey,
    pub question: Question,
    pub gain: f64,
}

/// The grown forest: a total map from tri-contexts to dense tied-state ids.
#[derive(Debug, Clone)]
pub struct TiedStateMap {
    units: UnitTable,
    roots: BTreeMap<RootKey, TreeNode>,
    num_tied: u32,
    share_wb_root: bool,
    splits: Vec<SplitRecord>,
}

impl TiedStateMap {
    /// Total number of tied states, the fixed `SIL`/`GARBAGE` ids included;
    /// every id in `0..num_tied_states()` needs an output distribution.
    pub fn num_tied_states(&self) -> u32 {
        self.num_tied
    }

    /// Number of clustered leaves (excludes `SIL`/`GARBAGE`).
    pub fn clustered_leaves(&self) -> u32 {
        self.num_tied - 2
    }

    pub fn share_wb_root(&self) -> bool {
        self.share_wb_root
    }

    pub fn splits(&self) -> &[SplitRecord] {
        &self.splits
    }

    pub fn unit_table(&self) -> &UnitTable {
        &self.units
    }

    pub fn roots(&self) -> impl Iterator<Item = (&RootKey, &TreeNode)> {
        self.roots.iter()
    }

    /// Maps any tri-context to its tied state. Total over unseen left and
    /// right values; only an unseen center unit is an error.
    pub fn tie(&self, ctx: &TriContext) -> Result<u32, TreeError> {
        match self.units.kind(ctx.center) {
            UnitKind::Silence => return Ok(SIL_TIED_ID),
            UnitKind::Garbage => return Ok(GARBAGE_TIED_ID),
            _ => {}
        }
        let base = self.units.base(ctx.center);
        let position = self.units.position(ctx.center);
        let node = self
            .roots
            .get(&RootKey {
                base: base.to_string(),
                position: Some(position),
            })
            .or_else(|| {
                self.roots.get(&RootKey {
                    base: base.to_string(),
                    position: None,
                })
            })
            .ok_or_else(|| TreeError::UnknownCenterUnit(base.to_string()))?;
        let mut cur = node;
        loop {
            match cur {
                TreeNode::Leaf { id } => return Ok(*id),
                TreeNode::Internal {
                    question, yes, no, ..
                } => {
                    cur = if question.answer(ctx, &self.units) {
                        yes
                    } else {
                        no
                    };
                }
            }
        }
    }

    /// Context-independent map over a whole inventory: one leaf per unit
    /// variant, no questions. The root/leaf order follows the sorted root
    /// keys.
    pub fn context_independent(inventory: &UnitInventory) -> Self {
        let units = UnitTable::from_inventory(inventory);
        let keys: BTreeSet<RootKey> = inventory
            .units()
            .iter()
            .filter(|u| !matches!(u.kind, UnitKind::Silence | UnitKind::Garbage))
            .map(|u| RootKey {
                base: u.symbol.clone(),
                position: Some(u.position),
            })
            .collect();
        let mut roots = BTreeMap::new();
        let mut next = 2u32;
        for key in keys {
            roots.insert(key, TreeNode::Leaf { id: next });
            next += 1;
        }
        Self {
            units,
            roots,
            num_tied: next,
            share_wb_root: false,
            splits: Vec::new(),
        }
    }

    /// Pooled statistics per tied id. Leaves without any statistics fall
    /// back to the nearest ancestor with data; ids whose whole root is
    /// empty stay `None`.
    pub fn leaf_stats_with_fallback(&self, stats: &StatsTable) -> Vec<Option<GaussStats>> {
        let dim = stats.dim();
        let mut out: Vec<Option<GaussStats>> = vec![None; self.num_tied as usize];
        // Pool SIL/GARBAGE rows directly.
        for (ctx, row) in stats.rows() {
            let slot = match self.units.kind(ctx.center) {
                UnitKind::Silence => Some(SIL_TIED_ID),
                UnitKind::Garbage => Some(GARBAGE_TIED_ID),
                _ => None,
            };
            if let Some(id) = slot {
                out[id as usize]
                    .get_or_insert_with(|| GaussStats::new(dim))
                    .add(row);
            }
        }
        for (key, node) in &self.roots {
            let rows: Vec<(&TriContext, &GaussStats)> = stats
                .rows()
                .filter(|(ctx, _)| {
                    if matches!(
                        self.units.kind(ctx.center),
                        UnitKind::Silence | UnitKind::Garbage
                    ) {
                        return false;
                    }
                    let base_ok = self.units.base(ctx.center) == key.base;
                    match key.position {
                        Some(p) => base_ok && self.units.position(ctx.center) == p,
                        None => base_ok,
                    }
                })
                .collect();
            pool_node(node, &rows, &self.units, dim, None, &mut out);
        }
        out
    }

    /// Writes the `CFTREE v1` text format: header, then per root a `ROOT`
    /// line followed by the tree in pre-order (`N slot members gain` for
    /// internal nodes, `L id` for leaves).
    pub fn write<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "CFTREE v1 leaves={}", self.num_tied)?;
        for (key, node) in &self.roots {
            let mode = if key.position.is_none() {
                "wb-shared"
            } else {
                "wb-split"
            };
            writeln!(w, "ROOT {} {}", key.label(), mode)?;
            write_node(node, &mut w)?;
        }
        Ok(())
    }

    pub fn write_file<P: AsRef<Path>>(&self, path: P) -> io::Result<()> {
        let mut f = BufWriter::new(File::create(path)?);
        self.write(&mut f)?;
        f.flush()
    }

    pub fn read<R: BufRead>(r: R, inventory: &UnitInventory) -> Result<Self, TreeError> {
        let mut lines = Vec::new();
        for line in r.lines() {
            lines.push(line?);
        }
        let mut it = lines.iter().enumerate();
        let (_, header) = it.next().ok_or_else(|| TreeError::Malformed {
            line: 1,
            message: "missing header".into(),
        })?;
        let num_tied = parse_tree_header(header).ok_or_else(|| TreeError::Malformed {
            line: 1,
            message: format!("bad header {header:?}"),
        })? as u32;
        let mut roots = BTreeMap::new();
        let mut share_any = false;
        let mut pending: Vec<(usize, &str)> = it
            .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'))
            .map(|(n, l)| (n + 1, l.as_str()))
            .collect();
        pending.reverse(); // consume from the back
        while let Some((lineno, line)) = pending.pop() {
            let mut parts = line.split_whitespace();
            if parts.next() != Some("ROOT") {
                return Err(TreeError::Malformed {
                    line: lineno,
                    message: "expected ROOT".into(),
                });
            }
            let label = parts.next().ok_or_else(|| TreeError::Malformed {
                line: lineno,
                message: "missing root label".into(),
            })?;
            let mode = parts.next().ok_or_else(|| TreeError::Malformed {
                line: lineno,
                message: "missing root mode".into(),
            })?;
            let key = match mode {
                "wb-shared" => {
                    share_any = true;
                    RootKey {
                        base: label.to_string(),
                        position: None,
                    }
                }
                "wb-split" => match label.strip_suffix("_WB") {
                    Some(base) => RootKey {
                        base: base.to_string(),
                        position: Some(Position::WordBoundary),
                    },
                    None => RootKey {
                        base: label.to_string(),
                        position: Some(Position::Internal),
                    },
                },
                _ => {
                    return Err(TreeError::Malformed {
                        line: lineno,
                        message: format!("bad root mode {mode:?}"),
                    })
                }
            };
            let node = read_node(&mut pending)?;
            roots.insert(key, node);
        }
        Ok(Self {
            units: UnitTable::from_inventory(inventory),
            roots,
            num_tied,
            share_wb_root: share_any,
            splits: Vec::new(),
        })
    }

    pub fn read_file<P: AsRef<Path>>(
        path: P,
        inventory: &UnitInventory,
    ) -> Result<Self, TreeError> {
        Self::read(BufReader::new(File::open(path)?), inventory)
    }
}

fn pool_node(
    node: &TreeNode,
    rows: &[(&TriContext, &GaussStats)],
    units: &UnitTable,
    dim: usize,
    inherited: Option<&GaussStats>,
    out: &mut Vec<Option<GaussStats>>,
) {
    let mut pooled = GaussStats::new(dim);
    for (_, s) in rows {
        pooled.add(s);
    }
    let effective = if pooled.count > 0.0 {
        Some(pooled)
    } else {
        inherited.cloned()
    };
    match node {
        TreeNode::Leaf { id } => {
            out[*id as usize] = effective;
        }
        TreeNode::Internal {
            question, yes, no, ..
        } => {
            let (yes_rows, no_rows): (Vec<_>, Vec<_>) = rows
                .iter()
                .partition(|(ctx, _)| question.answer(ctx, units));
            pool_node(yes, &yes_rows, units, dim, effective.as_ref(), out);
            pool_node(no, &no_rows, units, dim, effective.as_ref(), out);
        }
    }
}

fn write_node<W: Write>(node: &TreeNode, w: &mut W) -> io::Result<()> {
    match node {
        TreeNode::Leaf { id } => writeln!(w, "L {id}"),
        TreeNode::Internal {
            question,
            yes,
            no,
            gain,
        } => {
            let members: Vec<&str> = question.members.iter().map(|s| s.as_str()).collect();
            writeln!(
                w,
                "N {} {} {}",
                question.slot.as_str(),
                members.join(","),
                fmt_f64(*gain)
            )?;
            write_node(yes, w)?;
            write_node(no, w)
        }
    }
}

fn read_node(pending: &mut Vec<(usize, &str)>) -> Result<TreeNode, TreeError> {
    let (lineno, line) = pending.pop().ok_or_else(|| TreeError::Malformed {
        line: 0,
        message: "unexpected end of tree".into(),
    })?;
    let bad = |message: String| TreeError::Malformed {
        line: lineno,
        message,
    };
    let mut parts = line.split_whitespace();
    match parts.next() {
        Some("L") => {
            let id = parts
                .next()
                .and_then(|t| t.parse().ok())
                .ok_or_else(|| bad("bad leaf id".into()))?;
            Ok(TreeNode::Leaf { id })
        }
        Some("N") => {
            let slot = parts
                .next()
                .and_then(QuestionSlot::parse)
                .ok_or_else(|| bad("bad slot".into()))?;
            let members: BTreeSet<String> = parts
                .next()
                .ok_or_else(|| bad("missing members".into()))?
                .split(',')
                .map(|s| s.to_string())
                .collect();
            let gain: f64 = parts
                .next()
                .and_then(|t| t.parse().ok())
                .ok_or_else(|| bad("bad gain".into()))?;
            let yes = read_node(pending)?;
            let no = read_node(pending)?;
            Ok(TreeNode::Internal {
                question: Question { slot, members },
                yes: Box::new(yes),
                no: Box::new(no),
                gain,
            })
        }
        other => Err(bad(format!("unexpected token {other:?}"))),
    }
}

fn parse_tree_header(line: &str) -> Option<usize> {
    let mut parts = line.split_whitespace();
    if parts.next() != Some("CFTREE") || parts.next() != Some("v1") {
        return None;
    }
    parts.find_map(|p| p.strip_prefix("leaves=")?.parse().ok())
}

// Growth bookkeeping: leaves hold row indices into the flattened stats.
struct GrowLeaf {
    root_idx: usize,
    rows: Vec<usize>,
    seq: u64,
    best: Option<(f64, Question)>,
    alive: bool,
}

/// Grows the decision forest over alignment statistics.
///
/// Greedy best-first: the (leaf, question) pair with maximal gain is
/// applied until `max_leaves` is reached or the best gain drops under
/// `min_gain`. Ties break on lowest root index, then smallest question,
/// then leaf creation order, so builds are reproducible. Leaf ids are
/// assigned densely per root in creation order, after the fixed
/// `SIL`/`GARBAGE` ids.
pub fn grow_tree(
    stats: &StatsTable,
    questions: &[Question],
    config: &TreeConfig,
    inventory: &UnitInventory,
) -> Result<TiedStateMap, TreeError> {
    if stats.is_empty() {
        return Err(TreeError::EmptyStats);
    }
    if config.min_count < 1.0 {
        return Err(TreeError::BadConfig(format!(
            "min_count {} must be at least 1",
            config.min_count
        )));
    }
    let units = UnitTable::from_inventory(inventory);
    let rows: Vec<(&TriContext, &GaussStats)> = stats
        .rows()
        .filter(|(ctx, _)| {
            !matches!(
                units.kind(ctx.center),
                UnitKind::Silence | UnitKind::Garbage
            )
        })
        .collect();
    if rows.is_empty() {
        return Err(TreeError::EmptyStats);
    }

    // Root groups over observed centers.
    let mut root_rows: BTreeMap<RootKey, Vec<usize>> = BTreeMap::new();
    for (i, (ctx, _)) in rows.iter().enumerate() {
        let key = RootKey {
            base: units.base(ctx.center).to_string(),
            position: if config.share_wb_root {
                None
            } else {
                Some(units.position(ctx.center))
            },
        };
        root_rows.entry(key).or_default().push(i);
    }
    if config.max_leaves < root_rows.len() {
        return Err(TreeError::TooFewLeaves {
            max_leaves: config.max_leaves,
            roots: root_rows.len(),
        });
    }

    let dim = stats.dim();
    let agg_of = |row_ids: &[usize]| {
        let mut agg = GaussStats::new(dim);
        for &i in row_ids {
            agg.add(rows[i].1);
        }
        agg
    };
    let best_of = |row_ids: &[usize], agg: &GaussStats| -> Option<(f64, Question)> {
        let node_rows: Vec<(&TriContext, &GaussStats)> = row_ids.iter().map(|&i| rows[i]).collect();
        let mut best: Option<(f64, &Question)> = None;
        for q in questions {
            let gain = split_gain(
                agg,
                q,
                &node_rows,
                &units,
                config.min_count,
                config.var_floor,
            );
            if gain.is_finite() && best.is_none_or(|(g, _)| gain > g) {
                best = Some((gain, q));
            }
        }
        best.map(|(g, q)| (g, q.clone()))
    };

    let root_keys: Vec<RootKey> = root_rows.keys().cloned().collect();
    let mut leaves: Vec<GrowLeaf> = Vec::new();
    let mut seq = 0u64;
    // Arena of (leaf index | internal) per root, linked by child indices.
    enum Slot {
        Leaf(usize),
        Internal {
            question: Question,
            gain: f64,
            yes: usize,
            no: usize,
        },
    }
    let mut arena: Vec<Slot> = Vec::new();
    let mut root_nodes: Vec<usize> = Vec::new();
    for (ri, key) in root_keys.iter().enumerate() {
        let row_ids = root_rows.remove(key).expect("key came from this map");
        let agg = agg_of(&row_ids);
        let best = best_of(&row_ids, &agg);
        leaves.push(GrowLeaf {
            root_idx: ri,
            rows: row_ids,
            seq,
            best,
            alive: true,
        });
        seq += 1;
        root_nodes.push(arena.len());
        arena.push(Slot::Leaf(leaves.len() - 1));
    }
    let mut leaf_arena_slot: BTreeMap<usize, usize> = (0..leaves.len()).map(|i| (i, i)).collect();

    let mut num_leaves = leaves.len();
    let mut splits = Vec::new();
    while num_leaves < config.max_leaves {
        // Best candidate across the frontier; ties break on root index,
        // then question, then leaf creation order.
        let mut winner_leaf: Option<usize> = None;
        for (li, leaf) in leaves.iter().enumerate() {
            if !leaf.alive {
                continue;
            }
            if let Some((gain, ref q)) = leaf.best {
                let better = match winner_leaf {
                    None => true,
                    Some(wi) => {
                        let w = &leaves[wi];
                        let (wg, wq) = w.best.as_ref().map(|(g, q)| (*g, q)).unwrap();
                        match gain.total_cmp(&wg) {
                            std::cmp::Ordering::Greater => true,
                            std::cmp::Ordering::Less => false,
                            std::cmp::Ordering::Equal => {
                                (leaf.root_idx, q, leaf.seq) < (w.root_idx, wq, w.seq)
                            }
                        }
                    }
                };
                if better {
                    winner_leaf = Some(li);
                }
            }
        }
        let Some(li) = winner_leaf else { break };
        let (gain, question) = leaves[li].best.clone().expect("winner has a best split");
        if gain < config.min_gain {
            break;
        }
        let (yes_rows, no_rows): (Vec<usize>, Vec<usize>) = leaves[li]
            .rows
            .iter()
            .partition(|&&i| question.answer(rows[i].0, &units));
        let root_idx = leaves[li].root_idx;
        splits.push(SplitRecord {
            root: root_keys[root_idx].clone(),
            question: question.clone(),
            gain,
        });
        leaves[li].alive = false;
        let yes_agg = agg_of(&yes_rows);
        let no_agg = agg_of(&no_rows);
        let yes_leaf = leaves.len();
        let yes_best = best_of(&yes_rows, &yes_agg);
        leaves.push(GrowLeaf {
            root_idx,
            rows: yes_rows,

            seq,
            best: yes_best,
            alive: true,
        });
        seq += 1;
        let no_leaf = leaves.len();
        let no_best = best_of(&no_rows, &no_agg);
        leaves.push(GrowLeaf {
            root_idx,
            rows: no_rows,

            seq,
            best: no_best,
            alive: true,
        });
        seq += 1;
        // Rewire the arena: the split leaf's slot becomes internal.
        let slot = leaf_arena_slot[&li];
        let yes_slot = arena.len();
        arena.push(Slot::Leaf(yes_leaf));
        let no_slot = arena.len();
        arena.push(Slot::Leaf(no_leaf));
        leaf_arena_slot.insert(yes_leaf, yes_slot);
        leaf_arena_slot.insert(no_leaf, no_slot);
        arena[slot] = Slot::Internal {
            question,
            gain,
            yes: yes_slot,
            no: no_slot,
        };
        num_leaves += 1;
    }

    // Dense ids: per root in key order, leaves in creation order.
    let mut leaf_ids: BTreeMap<usize, u32> = BTreeMap::new();
    let mut next_id = 2u32;
    for ri in 0..root_keys.len() {
        let mut in_root: Vec<(u64, usize)> = leaves
            .iter()
            .enumerate()
            .filter(|(_, l)| l.alive && l.root_idx == ri)
            .map(|(i, l)| (l.seq, i))
            .collect();
        in_root.sort();
        for (_, li) in in_root {
            leaf_ids.insert(li, next_id);
            next_id += 1;
        }
    }

    fn materialize(arena: &[Slot], slot: usize, leaf_ids: &BTreeMap<usize, u32>) -> TreeNode {
        match &arena[slot] {
            Slot::Leaf(li) => TreeNode::Leaf { id: leaf_ids[li] },
            Slot::Internal {
                question,
                gain,
                yes,
                no,
            } => TreeNode::Internal {
                question: question.clone(),
                gain: *gain,
                yes: Box::new(materialize(arena, *yes, leaf_ids)),
                no: Box::new(materialize(arena, *no, leaf_ids)),
            },
        }
    }

    let roots: BTreeMap<RootKey, TreeNode> = root_keys
        .iter()
        .enumerate()
        .map(|(ri, key)| (key.clone(), materialize(&arena, root_nodes[ri], &leaf_ids)))
        .collect();

    Ok(TiedStateMap {
        units,
        roots,
        num_tied: next_id,
        share_wb_root: config.share_wb_root,
        splits,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::units::{CaseMode, UnitInventory};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn inv() -> UnitInventory {
        UnitInventory::graphemic(CaseMode::Lowercase)
    }

    fn wb(inv: &UnitInventory, s: &str) -> UnitId {
        inv.id(s, Position::WordBoundary).unwrap()
    }

    fn internal(inv: &UnitInventory, s: &str) -> UnitId {
        inv.id(s, Position::Internal).unwrap()
    }

    fn gauss_rows(rng: &mut ChaCha8Rng, mean: &[f64], sigma: f64, frames: usize) -> GaussStats {
        let mut s = GaussStats::new(mean.len());
        for _ in 0..frames {
            let x: Vec<f32> = mean
                .iter()
                .map(|m| (m + sigma * standard_normal(rng)) as f32)
                .collect();
            s.add_frame(&x);
        }
        s
    }

    fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
        // Box-Muller
        let u1: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
        let u2: f64 = rng.random_range(0.0..1.0);
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    #[test]
    fn loglik_of_floored_singleton_matches_closed_form() {
        let mut s = GaussStats::new(1);
        s.add_frame(&[2.5]);
        // variance floors to 1e-4: L = -1/2 (ln(2*pi*1e-4) + 1)
        let expected = -0.5 * ((2.0 * std::f64::consts::PI * 1e-4).ln() + 1.0);
        let got = single_gauss_loglik(&s, DEFAULT_VAR_FLOOR).unwrap();
        assert!((got - expected).abs() < 1e-12);
        assert!((got - 3.186_231_652_783_418_7).abs() < 1e-9);
    }

    #[test]
    fn duplicating_frames_doubles_loglik() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = gauss_rows(&mut rng, &[1.0, -2.0], 1.0, 50);
        let mut doubled = s.clone();
        doubled.add(&s);
        let l1 = single_gauss_loglik(&s, DEFAULT_VAR_FLOOR).unwrap();
        let l2 = single_gauss_loglik(&doubled, DEFAULT_VAR_FLOOR).unwrap();
        assert!((l2 - 2.0 * l1).abs() < 1e-9 * l1.abs());
    }

    #[test]
    fn zero_count_is_an_error() {
        let s = GaussStats::new(2);
        assert!(matches!(
            single_gauss_loglik(&s, DEFAULT_VAR_FLOOR),
            Err(TreeError::ZeroCount)
        ));
    }

    fn ctx_lcr(inv: &UnitInventory, l: Option<&str>, c: &str, r: Option<&str>) -> TriContext {
        let n = |s: Option<&str>| match s {
            None => Neighbor::Boundary,
            Some(s) => Neighbor::Unit(internal(inv, s)),
        };
        TriContext::new(n(l), wb(inv, c), n(r))
    }

    #[test]
    fn split_gain_is_zero_for_identical_halves() {
        let inv = inv();
        let units = UnitTable::from_inventory(&inv);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = ctx_lcr(&inv, None, "a", Some("t"));
        let b = ctx_lcr(&inv, None, "a", Some("d"));
        // Two large populations drawn from one distribution; use identical
        // stats so the halves are exactly interchangeable.
        let s = gauss_rows(&mut rng, &[0.0], 1.0, 5000);
        let rows = vec![(&a, &s), (&b, &s)];
        let mut parent = s.clone();
        parent.add(&s);
        let q = Question::membership(QuestionSlot::Right, ["t"]);
        let gain = split_gain(&parent, &q, &rows, &units, 1.0, DEFAULT_VAR_FLOOR);
        assert!(gain.abs() < 1e-6, "gain {gain}");
    }

    #[test]
    fn split_gain_matches_closed_form_oracle() {
        let inv = inv();
        let units = UnitTable::from_inventory(&inv);
        let a = ctx_lcr(&inv, None, "a", Some("t"));
        let b = ctx_lcr(&inv, None, "a", Some("d"));
        // Exact sufficient statistics: N=100 each, means 0 and 10, unit
        // variance (sum_sq = N*(var + mean^2)).
        let sa = GaussStats {
            count: 100.0,
            sum: vec![0.0],
            sum_sq: vec![100.0],
        };
        let sb = GaussStats {
            count: 100.0,
            sum: vec![1000.0],
            sum_sq: vec![10100.0],
        };
        let mut parent = sa.clone();
        parent.add(&sb);
        let q = Question::membership(QuestionSlot::Right, ["t"]);
        let gain = split_gain(&parent, &q, &[(&a, &sa), (&b, &sb)], &units, 1.0, 1e-4);
        // Oracle: direct evaluation of the closed form.
        let l = |n: f64, var: f64| -0.5 * n * ((2.0 * std::f64::consts::PI * var).ln() + 1.0);
        let parent_var = (100.0f64 + 10100.0) / 200.0 - 25.0; // E[x^2] - mean^2 = 26
        let expected = l(100.0, 1.0) + l(100.0, 1.0) - l(200.0, parent_var);
        assert!((expected - 325.809_653_802_148_3).abs() < 1e-9);
        assert!(
            (gain - expected).abs() <= 1e-9 * expected.abs(),
            "gain {gain} vs oracle {expected}"
        );
    }

    #[test]
    fn valid_split_gains_are_never_negative() {
        // L(yes) + L(no) >= L(parent) for any proper split.
        let inv = inv();
        let units = UnitTable::from_inventory(&inv);
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let rights = ["b", "c", "d", "f"];
        for _ in 0..50 {
            let dim = rng.random_range(1..4);
            let mut rows_data = Vec::new();
            for r in rights {
                let mean: Vec<f64> = (0..dim).map(|_| rng.random_range(-4.0..4.0)).collect();
                let mut rng2 = ChaCha8Rng::seed_from_u64(rng.random());
                let frames = rng.random_range(10..80);
                let mut s = GaussStats::new(dim);
                for _ in 0..frames {
                    let x: Vec<f32> = mean
                        .iter()
                        .map(|m| (m + standard_normal(&mut rng2)) as f32)
                        .collect();
                    s.add_frame(&x);
                }
                rows_data.push((ctx_lcr(&inv, None, "a", Some(r)), s));
            }
            let rows: Vec<(&TriContext, &GaussStats)> =
                rows_data.iter().map(|(c, s)| (c, s)).collect();
            let mut parent = GaussStats::new(dim);
            for (_, s) in &rows_data {
                parent.add(s);
            }
            let k = rng.random_range(1..rights.len());
            let q = Question::membership(
                QuestionSlot::Right,
                rights.iter().take(k).map(|s| s.to_string()),
            );
            let gain = split_gain(&parent, &q, &rows, &units, 1.0, 1e-4);
            assert!(gain >= -1e-9, "negative gain {gain}");
        }
    }

    #[test]
    fn split_with_empty_side_is_rejected() {
        let inv = inv();
        let units = UnitTable::from_inventory(&inv);
        let a = ctx_lcr(&inv, None, "a", Some("t"));
        let s = GaussStats {
            count: 10.0,
            sum: vec![5.0],
            sum_sq: vec![30.0],
        };
        let q = Question::membership(QuestionSlot::Right, ["z"]);
        let gain = split_gain(&s, &q, &[(&a, &s)], &units, 1.0, 1e-4);
        assert_eq!(gain, f64::NEG_INFINITY);
    }

    fn table_from(rows: Vec<(TriContext, GaussStats)>, dim: usize) -> StatsTable {
        let mut t = StatsTable::new(dim);
        for (ctx, s) in rows {
            t.add_row(ctx, &s);
        }
        t
    }

    #[test]
    fn questions_for_single_unit() {
        let inv = inv();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let ctx = ctx_lcr(&inv, Some("a"), "x", Some("a"));
        let table = table_from(vec![(ctx, gauss_rows(&mut rng, &[0.0], 1.0, 20))], 1);
        let qs = generate_questions(&table, &inv, 1e-4).unwrap();
        // One singleton per slot plus the position question.
        assert_eq!(qs.len(), 3);
        assert!(qs.contains(&Question::position()));
        assert!(qs.contains(&Question::membership(QuestionSlot::Left, ["a"])));
        assert!(qs.contains(&Question::membership(QuestionSlot::Right, ["a"])));
    }

    #[test]
    fn question_count_for_three_units() {
        let inv = inv();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let rows = ["a", "e", "t"]
            .iter()
            .enumerate()
            .map(|(i, s)| {
                (
                    ctx_lcr(&inv, Some(s), "x", Some(s)),
                    gauss_rows(&mut rng, &[i as f64], 0.5, 30),
                )
            })
            .collect();
        let table = table_from(rows, 1);
        let qs = generate_questions(&table, &inv, 1e-4).unwrap();
        // Per slot: 3 singletons + 2 merges; plus position.
        assert_eq!(qs.len(), 2 * (3 + 2) + 1);
    }

    #[test]
    fn first_merge_joins_the_closest_pair() {
        let inv = inv();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        // a and e share a distribution, t is far away.
        let rows = vec![
            (
                ctx_lcr(&inv, Some("a"), "x", None),
                gauss_rows(&mut rng, &[0.0], 1.0, 200),
            ),
            (
                ctx_lcr(&inv, Some("e"), "x", None),
                gauss_rows(&mut rng, &[0.05], 1.0, 200),
            ),
            (
                ctx_lcr(&inv, Some("t"), "x", None),
                gauss_rows(&mut rng, &[25.0], 1.0, 200),
            ),
        ];
        let table = table_from(rows, 1);
        let qs = generate_questions(&table, &inv, 1e-4).unwrap();
        let pair_sets: Vec<&Question> = qs
            .iter()
            .filter(|q| q.slot == QuestionSlot::Left && q.members.len() == 2)
            .collect();
        assert_eq!(pair_sets.len(), 1);
        let expected: BTreeSet<String> = ["a", "e"].iter().map(|s| s.to_string()).collect();
        assert_eq!(pair_sets[0].members, expected);

        // Brute-force oracle: evaluate all three pair losses directly.
        let stats_of = |sym: &str| {
            table
                .rows()
                .find(|(c, _)| matches!(c.left, Neighbor::Unit(u) if inv.unit(u).symbol == sym))
                .map(|(_, s)| s.clone())
                .unwrap()
        };
        let loss = |x: &GaussStats, y: &GaussStats| {
            let mut p = x.clone();
            p.add(y);
            single_gauss_loglik(x, 1e-4).unwrap() + single_gauss_loglik(y, 1e-4).unwrap()
                - single_gauss_loglik(&p, 1e-4).unwrap()
        };
        let (sa, se, st) = (stats_of("a"), stats_of("e"), stats_of("t"));
        assert!(loss(&sa, &se) < loss(&sa, &st));
        assert!(loss(&sa, &se) < loss(&se, &st));
    }

    /// Synthetic stats where 12 right-contexts of one center split into 4
    /// groups with well-separated generating Gaussians.
    fn four_group_stats(
        inv: &UnitInventory,
        seed: u64,
        frames_per_ctx: usize,
    ) -> (StatsTable, BTreeMap<String, usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rights = ["b", "c", "d", "f", "g", "h", "j", "k", "l", "m", "n", "p"];
        let means = [-30.0, -10.0, 10.0, 30.0]; // 10 sigma apart at sigma=2
        let mut table = StatsTable::new(1);
        let mut truth = BTreeMap::new();
        for (i, r) in rights.iter().enumerate() {
            let group = i % 4;
            truth.insert(r.to_string(), group);
            let ctx = ctx_lcr(inv, None, "a", Some(r));
            table.add_row(
                ctx,
                &gauss_rows(&mut rng, &[means[group]], 2.0, frames_per_ctx),
            );
        }
        (table, truth)
    }

    #[test]
    fn grow_recovers_generating_partition() {
        let inv = inv();
        for seed in 0..5 {
            let (table, truth) = four_group_stats(&inv, seed, 500);
            let qs = generate_questions(&table, &inv, 1e-4).unwrap();
            let cfg = TreeConfig {
                max_leaves: 4,
                min_gain: 1e-3,
                min_count: 1.0,
                share_wb_root: false,
                var_floor: 1e-4,
            };
            let map = grow_tree(&table, &qs, &cfg, &inv).unwrap();
            assert_eq!(map.clustered_leaves(), 4);
            // Contexts in the same generating group tie together, across
            // groups apart.
            let mut group_to_leaf: BTreeMap<usize, u32> = BTreeMap::new();
            for (ctx, _) in table.rows() {
                let right = match ctx.right {
                    Neighbor::Unit(u) => inv.unit(u).symbol.clone(),
                    _ => unreachable!(),
                };
                let leaf = map.tie(ctx).unwrap();
                let group = truth[&right];
                match group_to_leaf.get(&group) {
                    None => {
                        group_to_leaf.insert(group, leaf);
                    }
                    Some(&l) => assert_eq!(l, leaf, "group {group} split across leaves"),
                }
            }
            let distinct: BTreeSet<u32> = group_to_leaf.values().copied().collect();
            assert_eq!(distinct.len(), 4);
        }
    }

    #[test]
    fn max_leaves_at_root_count_means_ci_tying() {
        let inv = inv();
        let (table, _) = four_group_stats(&inv, 0, 50);
        let qs = generate_questions(&table, &inv, 1e-4).unwrap();
        let cfg = TreeConfig {
            max_leaves: 1, // single root group: center "a" WB
            min_gain: 1e-3,
            min_count: 1.0,
            share_wb_root: false,
            var_floor: 1e-4,
        };
        let map = grow_tree(&table, &qs, &cfg, &inv).unwrap();
        assert_eq!(map.clustered_leaves(), 1);
        assert!(map.splits().is_empty());
        let ids: BTreeSet<u32> = table.rows().map(|(c, _)| map.tie(c).unwrap()).collect();
        assert_eq!(ids.len(), 1);
    }

    #[test]
    fn fractional_min_count_is_rejected() {
        let inv = inv();
        let (table, _) = four_group_stats(&inv, 0, 20);
        let qs = generate_questions(&table, &inv, 1e-4).unwrap();
        let cfg = TreeConfig {
            min_count: 0.5,
            ..TreeConfig::default()
        };
        assert!(matches!(
            grow_tree(&table, &qs, &cfg, &inv),
            Err(TreeError::BadConfig(_))
        ));
    }

    #[test]
    fn infinite_min_gain_blocks_all_splits() {
        let inv = inv();
        let (table, _) = four_group_stats(&inv, 0, 50);
        let qs = generate_questions(&table, &inv, 1e-4).unwrap();
        let cfg = TreeConfig {
            max_leaves: 100,
            min_gain: f64::INFINITY,
            min_count: 1.0,
            share_wb_root: false,
            var_floor: 1e-4,
        };
        let map = grow_tree(&table, &qs, &cfg, &inv).unwrap();
        assert_eq!(map.clustered_leaves(), 1);
    }

    #[test]
    fn accepted_split_gains_meet_threshold_and_leaf_counts_partition() {
        let inv = inv();
        let (table, _) = four_group_stats(&inv, 3, 200);
        let qs = generate_questions(&table, &inv, 1e-4).unwrap();
        let cfg = TreeConfig {
            max_leaves: 8,
            min_gain: 5.0,
            min_count: 1.0,
            share_wb_root: false,
            var_floor: 1e-4,
        };
        let map = grow_tree(&table, &qs, &cfg, &inv).unwrap();
        for rec in map.splits() {
            assert!(rec.gain >= 5.0);
        }
        // Every row lands in exactly one leaf; leaf counts sum to the total.
        let mut per_leaf: BTreeMap<u32, f64> = BTreeMap::new();
        for (ctx, s) in table.rows() {
            *per_leaf.entry(map.tie(ctx).unwrap()).or_insert(0.0) += s.count;
        }
        let total: f64 = per_leaf.values().sum();
        assert!((total - table.total_count()).abs() < 1e-9);
    }

    #[test]
    fn larger_max_leaves_preserves_earlier_splits() {
        let inv = inv();
        let (table, _) = four_group_stats(&inv, 4, 300);
        let qs = generate_questions(&table, &inv, 1e-4).unwrap();
        let grow = |max_leaves| {
            let cfg = TreeConfig {
                max_leaves,
                min_gain: 1e-6,
                min_count: 1.0,
                share_wb_root: false,
                var_floor: 1e-4,
            };
            grow_tree(&table, &qs, &cfg, &inv).unwrap()
        };
        let small = grow(3);
        let large = grow(6);
        assert_eq!(small.splits().len(), 2);
        assert_eq!(&large.splits()[..2], small.splits());
    }

    #[test]
    fn unseen_contexts_resolve_without_error() {
        let inv = inv();
        let (table, _) = four_group_stats(&inv, 0, 100);
        let qs = generate_questions(&table, &inv, 1e-4).unwrap();
        let map = grow_tree(
            &table,
            &qs,
            &TreeConfig {
                max_leaves: 4,
                min_gain: 1e-3,
                min_count: 1.0,
                share_wb_root: false,
                var_floor: 1e-4,
            },
            &inv,
        )
        .unwrap();
        // Unseen right context and unseen left context both resolve.
        let unseen = ctx_lcr(&inv, Some("z"), "a", Some("z"));
        assert!(map.tie(&unseen).is_ok());
        // Unseen center errors.
        let bad = ctx_lcr(&inv, None, "q", None);
        assert!(matches!(
            map.tie(&bad),
            Err(TreeError::UnknownCenterUnit(_))
        ));
    }

    #[test]
    fn ci_map_ties_by_center_only() {
        let inv = inv();
        let map = TiedStateMap::context_independent(&inv);
        let a1 = ctx_lcr(&inv, Some("x"), "a", Some("y"));
        let a2 = ctx_lcr(&inv, Some("z"), "a", None);
        assert_eq!(map.tie(&a1).unwrap(), map.tie(&a2).unwrap());
        let b = ctx_lcr(&inv, Some("x"), "b", Some("y"));
        assert_ne!(map.tie(&a1).unwrap(), map.tie(&b).unwrap());
        assert_eq!(
            map.tie(&TriContext::ci(UnitId::SILENCE)).unwrap(),
            SIL_TIED_ID
        );
        assert_eq!(
            map.tie(&TriContext::ci(UnitId::GARBAGE)).unwrap(),
            GARBAGE_TIED_ID
        );
    }

    #[test]
    fn split_wb_roots_never_mix_positions() {
        let inv = inv();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut table = StatsTable::new(1);
        table.add_row(
            TriContext::ci(wb(&inv, "a")),
            &gauss_rows(&mut rng, &[0.0], 1.0, 100),
        );
        table.add_row(
            TriContext::ci(internal(&inv, "a")),
            &gauss_rows(&mut rng, &[0.1], 1.0, 100),
        );
        let qs = generate_questions(&table, &inv, 1e-4).unwrap();
        let split = grow_tree(&table, &qs, &TreeConfig::default(), &inv).unwrap();
        assert_ne!(
            split.tie(&TriContext::ci(wb(&inv, "a"))).unwrap(),
            split.tie(&TriContext::ci(internal(&inv, "a"))).unwrap()
        );
        // Shared roots pool the variants when no split separates them.
        let shared_cfg = TreeConfig {
            share_wb_root: true,
            min_gain: f64::INFINITY,
            max_leaves: 10,
            ..TreeConfig::default()
        };
        let shared = grow_tree(&table, &qs, &shared_cfg, &inv).unwrap();
        assert_eq!(
            shared.tie(&TriContext::ci(wb(&inv, "a"))).unwrap(),
            shared.tie(&TriContext::ci(internal(&inv, "a"))).unwrap()
        );
    }

    #[test]
    fn shared_root_can_resplit_on_position() {
        let inv = inv();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut table = StatsTable::new(1);
        table.add_row(
            TriContext::ci(wb(&inv, "a")),
            &gauss_rows(&mut rng, &[-20.0], 1.0, 300),
        );
        table.add_row(
            TriContext::ci(internal(&inv, "a")),
            &gauss_rows(&mut rng, &[20.0], 1.0, 300),
        );
        let qs = generate_questions(&table, &inv, 1e-4).unwrap();
        let cfg = TreeConfig {
            share_wb_root: true,
            min_gain: 1.0,
            max_leaves: 4,
            min_count: 1.0,
            var_floor: 1e-4,
        };
        let map = grow_tree(&table, &qs, &cfg, &inv).unwrap();
        assert_eq!(map.clustered_leaves(), 2);
        assert_eq!(map.splits()[0].question, Question::position());
        assert_ne!(
            map.tie(&TriContext::ci(wb(&inv, "a"))).unwrap(),
            map.tie(&TriContext::ci(internal(&inv, "a"))).unwrap()
        );
    }

    #[test]
    fn tree_file_roundtrip_is_bit_exact() {
        let inv = inv();
        let (table, _) = four_group_stats(&inv, 6, 200);
        let qs = generate_questions(&table, &inv, 1e-4).unwrap();
        let map = grow_tree(
            &table,
            &qs,
            &TreeConfig {
                max_leaves: 4,
                min_gain: 1e-3,
                min_count: 1.0,
                share_wb_root: false,
                var_floor: 1e-4,
            },
            &inv,
        )
        .unwrap();
        let mut buf = Vec::new();
        map.write(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("CFTREE v1 leaves=6\n"));
        let reread = TiedStateMap::read(std::io::Cursor::new(&buf), &inv).unwrap();
        let mut buf2 = Vec::new();
        reread.write(&mut buf2).unwrap();
        assert_eq!(buf, buf2);
        for (ctx, _) in table.rows() {
            assert_eq!(map.tie(ctx).unwrap(), reread.tie(ctx).unwrap());
        }
    }

    #[test]
    fn leaf_stats_fall_back_to_parent_pool() {
        let inv = inv();
        let (table, _) = four_group_stats(&inv, 2, 100);
        let qs = generate_questions(&table, &inv, 1e-4).unwrap();
        let map = grow_tree(
            &table,
            &qs,
            &TreeConfig {
                max_leaves: 4,
                min_gain: 1e-3,
                min_count: 1.0,
                share_wb_root: false,
                var_floor: 1e-4,
            },
            &inv,
        )
        .unwrap();
        // Stats restricted to half the rows leave some leaves empty; the
        // fallback must still provide statistics for every tree leaf.
        let mut partial = StatsTable::new(1);
        for (i, (ctx, s)) in table.rows().enumerate() {
            if i % 2 == 0 {
                partial.add_row(*ctx, s);
            }
        }
        let pooled = map.leaf_stats_with_fallback(&partial);
        for id in 2..map.num_tied_states() {
            let s = pooled[id as usize]
                .as_ref()
                .expect("every clustered leaf inherits stats");
            assert!(s.count > 0.0);
        }
    }
}
