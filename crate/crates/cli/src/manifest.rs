//! Run manifest: every stage appends one line recording its output and the
//! hashes of the inputs it consumed, so any artifact can be traced back to
//! exact input bytes and settings.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::Path;

use anyhow::{Context, Result};

/// FNV-1a 64-bit over a byte slice.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf29ce484222325u64;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

pub fn hash_file<P: AsRef<Path>>(path: P) -> Result<u64> {
    let bytes =
        fs::read(path.as_ref()).with_context(|| format!("hashing {}", path.as_ref().display()))?;
    Ok(fnv1a64(&bytes))
}

/// Appends `stage=<name> out=<file>:<hash> in=<file>:<hash>,... config=<hash>`.
pub fn append_entry(
    manifest: &Path,
    stage: &str,
    output: &Path,
    inputs: &[&Path],
    config_digest: &str,
) -> Result<()> {
    let out_hash = hash_file(output)?;
    let mut ins = Vec::with_capacity(inputs.len());
    for p in inputs {
        ins.push(format!("{}:{:016x}", file_name(p), hash_file(p)?));
    }
    let line = format!(
        "stage={} out={}:{:016x} in={} config={:016x}\n",
        stage,
        file_name(output),
        out_hash,
        if ins.is_empty() {
            "-".to_string()
        } else {
            ins.join(",")
        },
        fnv1a64(config_digest.as_bytes()),
    );
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(manifest)
        .with_context(|| format!("opening manifest {}", manifest.display()))?;
    f.write_all(line.as_bytes())?;
    Ok(())
}

fn file_name(p: &Path) -> String {
    p.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| p.display().to_string())
}
