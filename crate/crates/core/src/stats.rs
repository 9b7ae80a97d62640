//! Per-tri-context Gaussian sufficient statistics.
//!
//! Frame alignments are reduced to (count, sum, sum of squares) rows keyed
//! by tri-context. These rows drive question generation, tree growth, and
//! the seeding of context-dependent models. Accumulation runs
//! per-utterance; `merge` is the associative reduction for sharded runs.

use std::collections::btree_map::Entry;
use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use thiserror::Error;

use crate::context::{Neighbor, TriContext};
use crate::corpus::Features;
use crate::units::UnitInventory;

#[derive(Debug, Error)]
pub enum StatsError {
    #[error("labeling has {labels} frames but features have {frames}")]
    LengthMismatch { labels: usize, frames: usize },
    #[error("dimension mismatch: {0} vs {1}")]
    DimMismatch(usize, usize),
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Zeroth/first/second-order statistics of a set of frames. `count` is
/// real-valued so soft occupancies can be accumulated too.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussStats {
    pub count: f64,
    pub sum: Vec<f64>,
    pub sum_sq: Vec<f64>,
}

impl GaussStats {
    pub fn new(dim: usize) -> Self {
        Self {
            count: 0.0,
            sum: vec![0.0; dim],
            sum_sq: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.sum.len()
    }

    pub fn add_frame(&mut self, x: &[f32]) {
        self.add_frame_weighted(x, 1.0);
    }

    pub fn add_frame_weighted(&mut self, x: &[f32], weight: f64) {
        debug_assert_eq!(x.len(), self.dim());
        self.count += weight;
        for (d, &v) in x.iter().enumerate() {
            let v = v as f64;
            self.sum[d] += weight * v;
            self.sum_sq[d] += weight * v * v;
        }
    }

    pub fn add(&mut self, other: &GaussStats) {
        debug_assert_eq!(self.dim(), other.dim());
        self.count += other.count;
        for d in 0..self.dim() {
            self.sum[d] += other.sum[d];
            self.sum_sq[d] += other.sum_sq[d];
        }
    }

    /// Statistics of `self` minus `other`; used to derive the "no" side of
    /// a split from the parent without a second pass.
    pub fn minus(&self, other: &GaussStats) -> GaussStats {
        debug_assert_eq!(self.dim(), other.dim());
        GaussStats {
            count: self.count - other.count,
            sum: self
                .sum
                .iter()
                .zip(&other.sum)
                .map(|(a, b)| a - b)
                .collect(),
            sum_sq: self
                .sum_sq
                .iter()
                .zip(&other.sum_sq)
                .map(|(a, b)| a - b)
                .collect(),
        }
    }

    /// Maximum-likelihood mean and variance with the variance floored
    /// elementwise.
    pub fn mean_var(&self, var_floor: f64) -> (Vec<f64>, Vec<f64>) {
        let n = self.count.max(f64::MIN_POSITIVE);
        let mean: Vec<f64> = self.sum.iter().map(|s| s / n).collect();
        let var: Vec<f64> = self
            .sum_sq
            .iter()
            .zip(&mean)
            .map(|(sq, m)| (sq / n - m * m).max(var_floor))
            .collect();
        (mean, var)
    }
}

/// Map from tri-context to its pooled Gaussian statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct StatsTable {
    dim: usize,
    rows: BTreeMap<TriContext, GaussStats>,
}

impl StatsTable {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            rows: BTreeMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn row(&self, ctx: &TriContext) -> Option<&GaussStats> {
        self.rows.get(ctx)
    }

    pub fn rows(&self) -> impl Iterator<Item = (&TriContext, &GaussStats)> {
        self.rows.iter()
    }

    pub fn total_count(&self) -> f64 {
        self.rows.values().map(|s| s.count).sum()
    }

    pub fn add_frame(&mut self, ctx: TriContext, x: &[f32]) {
        debug_assert_eq!(x.len(), self.dim);
        self.rows
            .entry(ctx)
            .or_insert_with(|| GaussStats::new(self.dim))
            .add_frame(x);
    }

    pub fn add_row(&mut self, ctx: TriContext, stats: &GaussStats) {
        match self.rows.entry(ctx) {
            Entry::Vacant(e) => {
                e.insert(stats.clone());
            }
            Entry::Occupied(mut e) => e.get_mut().add(stats),
        }
    }

    /// Fieldwise sum per tri-context; keys union.
    pub fn merge(mut self, other: StatsTable) -> Result<StatsTable, StatsError> {
        if self.dim != other.dim {
            return Err(StatsError::DimMismatch(self.dim, other.dim));
        }
        for (ctx, stats) in other.rows {
            self.add_row(ctx, &stats);
        }
        Ok(self)
    }

    /// Serializes as `CFSTATS v1` text: header then one row per line,
    /// `left center right count sum... sumsq...`, floats at 17 significant
    /// digits so the round trip is bit-exact.
    pub fn write<W: Write>(&self, inventory: &UnitInventory, mut w: W) -> io::Result<()> {
        writeln!(w, "CFSTATS v1 dim={}", self.dim)?;
        for (ctx, stats) in &self.rows {
            write!(
                w,
                "{} {} {} {}",
                format_neighbor(inventory, ctx.left),
                inventory.format_unit(ctx.center),
                format_neighbor(inventory, ctx.right),
                fmt_f64(stats.count)
            )?;
            for v in stats.sum.iter().chain(&stats.sum_sq) {
                write!(w, " {}", fmt_f64(*v))?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn write_file<P: AsRef<Path>>(&self, inventory: &UnitInventory, path: P) -> io::Result<()> {
        let mut f = BufWriter::new(File::create(path)?);
        self.write(inventory, &mut f)?;
        f.flush()
    }

    pub fn read<R: BufRead>(r: R, inventory: &UnitInventory) -> Result<Self, StatsError> {
        let mut lines = r.lines().enumerate();
        let (_, header) = lines.next().ok_or_else(|| StatsError::Malformed {
            line: 1,
            message: "missing header".into(),
        })?;
        let header = header?;
        let dim = parse_header(&header, "CFSTATS", "dim").ok_or_else(|| StatsError::Malformed {
            line: 1,
            message: format!("bad header {header:?}"),
        })?;
        let mut table = StatsTable::new(dim);
        for (lineno, line) in lines {
            let line = line?;
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let lineno = lineno + 1;
            let bad = |message: &str| StatsError::Malformed {
                line: lineno,
                message: message.to_string(),
            };
            let mut tok = line.split_whitespace();
            let left = parse_neighbor(inventory, tok.next().ok_or_else(|| bad("missing left"))?)
                .ok_or_else(|| bad("unknown left symbol"))?;
            let center = tok
                .next()
                .and_then(|t| inventory.parse_unit(t))
                .ok_or_else(|| bad("unknown center symbol"))?;
            let right = parse_neighbor(inventory, tok.next().ok_or_else(|| bad("missing right"))?)
                .ok_or_else(|| bad("unknown right symbol"))?;
            let count: f64 = tok
                .next()
                .and_then(|t| t.parse().ok())
                .ok_or_else(|| bad("bad count"))?;
            let values: Vec<f64> = tok
                .map(|t| t.parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|_| bad("bad float"))?;
            if values.len() != 2 * dim {
                return Err(bad("wrong number of values"));
            }
            let stats = GaussStats {
                count,
                sum: values[..dim].to_vec(),
                sum_sq: values[dim..].to_vec(),
            };
            table.add_row(TriContext::new(left, center, right), &stats);
        }
        Ok(table)
    }

    pub fn read_file<P: AsRef<Path>>(
        path: P,
        inventory: &UnitInventory,
    ) -> Result<Self, StatsError> {
        Self::read(BufReader::new(File::open(path)?), inventory)
    }
}

/// Sentinel token used for the boundary neighbor in text formats.
pub const BOUNDARY_TOKEN: &str = "<b>";

pub fn format_neighbor(inventory: &UnitInventory, n: Neighbor) -> String {
    match n {
        Neighbor::Boundary => BOUNDARY_TOKEN.to_string(),
        Neighbor::Unit(u) => inventory.format_unit(u),
    }
}

pub fn parse_neighbor(inventory: &UnitInventory, token: &str) -> Option<Neighbor> {
    if token == BOUNDARY_TOKEN {
        Some(Neighbor::Boundary)
    } else {
        inventory.parse_unit(token).map(Neighbor::Unit)
    }
}

/// 17-significant-digit decimal form; parses back to the identical f64.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn parse_header(line: &str, magic: &str, field: &str) -> Option<usize> {
    let mut parts = line.split_whitespace();
    if parts.next() != Some(magic) || parts.next() != Some("v1") {
        return None;
    }
    for p in parts {
        if let Some(v) = p.strip_prefix(&format!("{field}=")) {
            return v.parse().ok();
        }
    }
    None
}

/// Accumulates one utterance's frame labeling into a fresh table.
pub fn accumulate(labels: &[TriContext], features: &Features) -> Result<StatsTable, StatsError> {
    if labels.len() != features.frames() {
        return Err(StatsError::LengthMismatch {
            labels: labels.len(),
            frames: features.frames(),
        });
    }
    let mut table = StatsTable::new(features.dim());
    for (t, &ctx) in labels.iter().enumerate() {
        table.add_frame(ctx, features.row(t));
    }
    Ok(table)
}

#[allow(unused_imports)]
use crate::units::Position; // referenced by tests below
