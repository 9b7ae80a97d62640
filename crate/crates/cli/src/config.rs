//! Line-oriented `key = value` configuration with `[section]` headers.
//! Every knob has a default and every flag is overridable on the command
//! line; the file just pins a run's settings in a diff-friendly form.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use chenflow_core::units::CaseMode;
use chenflow_core::{CdConfig, DecodeConfig, TreeConfig};

/// Parsed config file: section -> key -> value.
#[derive(Debug, Clone, Default)]
pub struct RawConfig {
    sections: BTreeMap<String, BTreeMap<String, String>>,
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut sections: BTreeMap<String, BTreeMap<String, String>> = BTreeMap::new();
        let mut current = String::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
                current = name.trim().to_string();
                sections.entry(current.clone()).or_default();
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                bail!("config line {}: expected `key = value`", lineno + 1);
            };
            sections
                .entry(current.clone())
                .or_default()
                .insert(key.trim().to_string(), value.trim().to_string());
        }
        Ok(Self { sections })
    }

    pub fn load<P: AsRef<Path>>(path: P) -> Result<Self> {
        let text = fs::read_to_string(path.as_ref())
            .with_context(|| format!("reading config {}", path.as_ref().display()))?;
        Self::parse(&text)
    }

    pub fn get(&self, section: &str, key: &str) -> Option<&str> {
        self.sections.get(section)?.get(key).map(|s| s.as_str())
    }

    /// Applies a `section.key=value` override, as passed via `--set`.
    pub fn set_override(&mut self, spec: &str) -> Result<()> {
        let (path, value) = spec
            .split_once('=')
            .ok_or_else(|| anyhow::anyhow!("--set expects section.key=value, got {spec:?}"))?;
        let (section, key) = path
            .trim()
            .split_once('.')
            .ok_or_else(|| anyhow::anyhow!("--set expects section.key=value, got {spec:?}"))?;
        self.sections
            .entry(section.to_string())
            .or_default()
            .insert(key.to_string(), value.trim().to_string());
        Ok(())
    }

    fn parsed<T: std::str::FromStr>(&self, section: &str, key: &str) -> Result<Option<T>> {
        match self.get(section, key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| anyhow::anyhow!("config [{}] {} = {:?} is invalid", section, key, v)),
        }
    }
}

fn parse_bool(v: &str) -> Result<bool> {
    match v.to_ascii_lowercase().as_str() {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => bail!("expected a boolean, got {v:?}"),
    }
}

/// Training schedule for the EM stages.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmSchedule {
    pub ci_iterations: usize,
    pub cd_iterations: usize,
    pub mixture_components: usize,
    /// Iterations to run before growing mixtures to the target.
    pub split_after: usize,
}

impl Default for EmSchedule {
    fn default() -> Self {
        Self {
            ci_iterations: 5,
            cd_iterations: 5,
            mixture_components: 2,
            split_after: 2,
        }
    }
}

/// Everything a pipeline run needs: artifact locations plus the per-stage
/// settings. Artifacts live under `out_dir` with fixed names so stages
/// compose without manual wiring.
#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub out_dir: PathBuf,
    pub seed: u64,
    pub jobs: Option<usize>,
    pub case_mode: CaseMode,
    pub cd: CdConfig,
    pub tree: TreeConfig,
    pub em: EmSchedule,
    pub decode: DecodeConfig,
    /// Input word list for `lexicon` (one word per line).
    pub word_list: Option<PathBuf>,
    /// Phonetic dictionary input for `lexicon` (with `units_file`).
    pub phonetic_dict: Option<PathBuf>,
    pub units_file: Option<PathBuf>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            out_dir: PathBuf::from("out"),
            seed: 0,
            jobs: None,
            case_mode: CaseMode::Lowercase,
            cd: CdConfig::default(),
            tree: TreeConfig::default(),
            em: EmSchedule::default(),
            decode: DecodeConfig::default(),
            word_list: None,
            phonetic_dict: None,
            units_file: None,
        }
    }
}

impl PipelineConfig {
    pub fn from_raw(raw: &RawConfig) -> Result<Self> {
        let mut cfg = Self::default();
        if let Some(v) = raw.get("paths", "out") {
            cfg.out_dir = PathBuf::from(v);
        }
        if let Some(v) = raw.get("paths", "word_list") {
            cfg.word_list = Some(PathBuf::from(v));
        }
        if let Some(v) = raw.get("paths", "phonetic_dict") {
            cfg.phonetic_dict = Some(PathBuf::from(v));
        }
        if let Some(v) = raw.get("paths", "units") {
            cfg.units_file = Some(PathBuf::from(v));
        }
        if let Some(v) = raw.parsed("run", "seed")? {
            cfg.seed = v;
        }
        if let Some(v) = raw.parsed("run", "jobs")? {
            cfg.jobs = Some(v);
        }
        if let Some(v) = raw.get("units", "case") {
            cfg.case_mode = match v.to_ascii_lowercase().as_str() {
                "preserve" => CaseMode::Preserve,
                "lowercase" => CaseMode::Lowercase,
                _ => bail!("config [units] case = {v:?} (use preserve|lowercase)"),
            };
        }
        if let Some(v) = raw.get("cd", "context_dependent") {
            cfg.cd.context_dependent = parse_bool(v)?;
        }
        if let Some(v) = raw.get("cd", "position_dependent") {
            cfg.cd.position_dependent = parse_bool(v)?;
        }
        if let Some(v) = raw.get("cd", "cross_word_context") {
            cfg.cd.cross_word_context = parse_bool(v)?;
        }
        if let Some(v) = raw.parsed("tree", "max_leaves")? {
            cfg.tree.max_leaves = v;
        }
        if let Some(v) = raw.parsed("tree", "min_gain")? {
            cfg.tree.min_gain = v;
        }
        if let Some(v) = raw.parsed("tree", "min_count")? {
            cfg.tree.min_count = v;
        }
        if let Some(v) = raw.get("tree", "share_wb_root") {
            cfg.tree.share_wb_root = parse_bool(v)?;
        }
        if let Some(v) = raw.parsed("tree", "var_floor")? {
            cfg.tree.var_floor = v;
        }
        if let Some(v) = raw.parsed("em", "ci_iterations")? {
            cfg.em.ci_iterations = v;
        }
        if let Some(v) = raw.parsed("em", "cd_iterations")? {
            cfg.em.cd_iterations = v;
        }
        if let Some(v) = raw.parsed("em", "mixture_components")? {
            cfg.em.mixture_components = v;
        }
        if let Some(v) = raw.parsed("em", "split_after")? {
            cfg.em.split_after = v;
        }
        if let Some(v) = raw.parsed("decode", "beam")? {
            cfg.decode.beam = v;
        }
        if let Some(v) = raw.parsed("decode", "max_active")? {
            cfg.decode.max_active = v;
        }
        if let Some(v) = raw.parsed("decode", "lm_weight")? {
            cfg.decode.lm_weight = v;
        }
        if let Some(v) = raw.parsed("decode", "word_insertion_penalty")? {
            cfg.decode.word_insertion_penalty = v;
        }
        Ok(cfg)
    }

    pub fn load<P: AsRef<Path>>(path: P) -> Result<Self> {
        Self::from_raw(&RawConfig::load(path)?)
    }

    // Canonical artifact locations inside the output directory.

    pub fn units_path(&self) -> PathBuf {
        self.out_dir.join("units.txt")
    }
    pub fn lexicon_path(&self) -> PathBuf {
        self.out_dir.join("lexicon.txt")
    }
    pub fn feats_dir(&self) -> PathBuf {
        self.out_dir.join("feats")
    }
    pub fn transcripts_path(&self) -> PathBuf {
        self.out_dir.join("transcripts.txt")
    }
    pub fn tags_path(&self) -> PathBuf {
        self.out_dir.join("tags.txt")
    }
    pub fn lm_path(&self) -> PathBuf {
        self.out_dir.join("lm.arpa")
    }
    pub fn reference_alignments_path(&self) -> PathBuf {
        self.out_dir.join("ali_ref.txt")
    }
    pub fn ci_model_path(&self) -> PathBuf {
        self.out_dir.join("ci.cfam")
    }
    pub fn alignments_path(&self) -> PathBuf {
        self.out_dir.join("ali.txt")
    }
    pub fn stats_path(&self) -> PathBuf {
        self.out_dir.join("stats.cfstats")
    }
    pub fn tree_path(&self) -> PathBuf {
        self.out_dir.join("tree.cftree")
    }
    pub fn cd_model_path(&self) -> PathBuf {
        self.out_dir.join("cd.cfam")
    }
    pub fn hyp_path(&self) -> PathBuf {
        self.out_dir.join("hyp.txt")
    }
    pub fn report_path(&self) -> PathBuf {
        self.out_dir.join("report.txt")
    }
    pub fn manifest_path(&self) -> PathBuf {
        self.out_dir.join("manifest.txt")
    }
    pub fn ablate_report_path(&self) -> PathBuf {
        self.out_dir.join("ablate_report.txt")
    }

    /// Stable textual digest of the settings relevant to artifact content,
    /// recorded in the manifest.
    pub fn digest_string(&self) -> String {
        format!(
            "seed={} case={:?} cd={:?} tree={:?} em={:?} decode={:?}",
            self.seed, self.case_mode, self.cd, self.tree, self.em, self.decode
        )
    }
}
