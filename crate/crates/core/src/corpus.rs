//! Feature matrices, the `CFEA` binary feature format, and corpus text
//! files (transcripts, hypotheses).

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("bad magic: expected CFEA")]
    BadMagic,
    #[error("unsupported feature file version {0}")]
    BadVersion(u32),
    #[error("feature file truncated")]
    Truncated,
    #[error("line {0}: malformed entry")]
    MalformedLine(usize),
    #[error(transparent)]
    Io(#[from] io::Error),
}

const CFEA_MAGIC: &[u8; 4] = b"CFEA";
const CFEA_VERSION: u32 = 1;

/// A frames-by-dim feature matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Features {
    dim: usize,
    data: Vec<f32>,
}

impl Features {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "feature dimension must be positive");
        Self {
            dim,
            data: Vec::new(),
        }
    }

    pub fn from_rows(dim: usize, rows: Vec<Vec<f32>>) -> Self {
        let mut f = Self::new(dim);
        for r in rows {
            f.push_row(&r);
        }
        f
    }

    pub fn from_flat(dim: usize, data: Vec<f32>) -> Self {
        assert!(dim > 0 && data.len().is_multiple_of(dim));
        Self { dim, data }
    }

    pub fn push_row(&mut self, row: &[f32]) {
        assert_eq!(row.len(), self.dim);
        self.data.extend_from_slice(row);
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn frames(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn row(&self, t: usize) -> &[f32] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f32]> {
        self.data.chunks_exact(self.dim)
    }

    /// `CFEA` binary format: magic, u32 version, u32 frames, u32 dim, then
    /// frames x dim little-endian f32 values, row-major.
    pub fn write_cfea<W: Write>(&self, mut w: W) -> io::Result<()> {
        w.write_all(CFEA_MAGIC)?;
        w.write_all(&CFEA_VERSION.to_le_bytes())?;
        w.write_all(&(self.frames() as u32).to_le_bytes())?;
        w.write_all(&(self.dim as u32).to_le_bytes())?;
        for v in &self.data {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn write_cfea_file<P: AsRef<Path>>(&self, path: P) -> io::Result<()> {
        let mut f = BufWriter::new(File::create(path)?);
        self.write_cfea(&mut f)?;
        f.flush()
    }

    pub fn read_cfea<R: Read>(mut r: R) -> Result<Self, CorpusError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(map_eof)?;
        if &magic != CFEA_MAGIC {
            return Err(CorpusError::BadMagic);
        }
        let version = read_u32(&mut r)?;
        if version != CFEA_VERSION {
            return Err(CorpusError::BadVersion(version));
        }
        let frames = read_u32(&mut r)? as usize;
        let dim = read_u32(&mut r)? as usize;
        if dim == 0 {
            return Err(CorpusError::Truncated);
        }
        let mut data = vec![0f32; frames * dim];
        let mut buf = [0u8; 4];
        for v in data.iter_mut() {
            r.read_exact(&mut buf).map_err(map_eof)?;
            *v = f32::from_le_bytes(buf);
        }
        Ok(Self { dim, data })
    }

    pub fn read_cfea_file<P: AsRef<Path>>(path: P) -> Result<Self, CorpusError> {
        Self::read_cfea(BufReader::new(File::open(path)?))
    }
}

fn map_eof(e: io::Error) -> CorpusError {
    if e.kind() == io::ErrorKind::UnexpectedEof {
        CorpusError::Truncated
    } else {
        CorpusError::Io(e)
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, CorpusError> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf).map_err(map_eof)?;
    Ok(u32::from_le_bytes(buf))
}

/// One corpus utterance: transcript words plus acoustic features.
#[derive(Debug, Clone)]
pub struct Utterance {
    pub id: String,
    pub words: Vec<String>,
    pub features: Features,
}

/// Reads a `utt_id<TAB>word word word` file (transcripts, references, or
/// hypotheses). The word list may be empty.
pub fn read_transcripts<R: BufRead>(r: R) -> Result<Vec<(String, Vec<String>)>, CorpusError> {
    let mut out = Vec::new();
    for (lineno, line) in r.lines().enumerate() {
        let line = line?;
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (id, rest) = line
            .split_once('\t')
            .ok_or(CorpusError::MalformedLine(lineno + 1))?;
        if id.is_empty() {
            return Err(CorpusError::MalformedLine(lineno + 1));
        }
        let words = rest.split_whitespace().map(|w| w.to_string()).collect();
        out.push((id.to_string(), words));
    }
    Ok(out)
}

pub fn read_transcripts_file<P: AsRef<Path>>(
    path: P,
) -> Result<Vec<(String, Vec<String>)>, CorpusError> {
    read_transcripts(BufReader::new(File::open(path)?))
}

pub fn write_transcripts<W: Write>(entries: &[(String, Vec<String>)], mut w: W) -> io::Result<()> {
    for (id, words) in entries {
        writeln!(w, "{}\t{}", id, words.join(" "))?;
    }
    Ok(())
}

pub fn write_transcripts_file<P: AsRef<Path>>(
    entries: &[(String, Vec<String>)],
    path: P,
) -> io::Result<()> {
    let mut f = BufWriter::new(File::create(path)?);
    write_transcripts(entries, &mut f)?;
    f.flush()
}

/// Word occurrence counts over a set of transcripts, for rare-word
/// selection.
pub fn word_counts(entries: &[(String, Vec<String>)]) -> BTreeMap<String, u64> {
    let mut counts = BTreeMap::new();
    for (_, words) in entries {
        for w in words {
            *counts.entry(w.clone()).or_insert(0) += 1;
        }
    }
    counts
}
