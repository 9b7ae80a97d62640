use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand, ValueEnum};

use chenflow_cli::ablate::{run_ablate, AblateOptions};
use chenflow_cli::config::PipelineConfig;
use chenflow_cli::pipeline::{
    run_align, run_decode, run_lexicon, run_score, run_stats, run_synth, run_train, run_tree,
    TrainStage,
};
use chenflow_cli::synth::SyntheticSpec;

/// Graphemic hybrid ASR pipeline: lexicons, tied-state trees, GMM-HMM
/// bootstrap training, beam decoding, and scoring.
#[derive(Parser)]
#[command(name = "chenflow", version, about)]
struct Cli {
    /// Config file (`key = value` lines under `[section]` headers).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory holding all artifacts.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Random seed for synthetic stages.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker thread cap for per-utterance parallelism.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Override any config value: `--set tree.max_leaves=64` (repeatable).
    #[arg(long = "set", global = true, value_name = "SECTION.KEY=VALUE")]
    set: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum SynthKind {
    /// Separable units; the end-to-end sanity corpus.
    Standard,
    /// Context- and position-colored unit pairs for the CD/PD ablation.
    Ablation,
    /// Cased homograph pairs for the casing comparison.
    Cased,
}

#[derive(Clone, Copy, ValueEnum)]
enum Stage {
    Ci,
    Cd,
}

#[derive(Subcommand)]
enum Command {
    /// Build a graphemic lexicon from a word list, or load a phonetic one.
    Lexicon {
        /// Word list, one word per line.
        #[arg(long)]
        words: Option<PathBuf>,
        /// Phonetic dictionary (`word<TAB>phone phone ...`).
        #[arg(long)]
        phonetic: Option<PathBuf>,
        /// Phone inventory file (required with --phonetic).
        #[arg(long)]
        units: Option<PathBuf>,
        /// Keep letter case instead of lower-casing.
        #[arg(long)]
        preserve_case: bool,
    },
    /// Generate a synthetic corpus (features, transcripts, tags, LM).
    Synth {
        #[arg(long, value_enum, default_value = "standard")]
        kind: SynthKind,
        #[arg(long, default_value_t = 500)]
        utterances: usize,
        /// Vocabulary size (standard kind only).
        #[arg(long, default_value_t = 20)]
        vocab_size: usize,
    },
    /// Force-align the corpus with the bootstrap model.
    Align,
    /// Accumulate Gaussian statistics from the alignments.
    Stats,
    /// Generate questions and grow the tied-state decision trees.
    Tree,
    /// Train a model: `ci` (flat start + EM) or `cd` (retie + EM).
    Train {
        #[arg(long, value_enum)]
        stage: Stage,
    },
    /// Beam-decode the corpus with the CD model and n-gram LM.
    Decode,
    /// Score hypotheses: WER plus proper-noun and rare-word CER.
    Score,
    /// Run the CD/PD (optionally casing) ablation grid.
    Ablate {
        /// Number of seeds to run (0..n).
        #[arg(long, default_value_t = 1)]
        seeds: u64,
        #[arg(long, default_value_t = 300)]
        utterances: usize,
        /// Also run the cased-vs-lowercased comparison.
        #[arg(long)]
        include_case: bool,
    },
}

fn build_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut raw = match &cli.config {
        Some(path) => chenflow_cli::config::RawConfig::load(path)?,
        None => chenflow_cli::config::RawConfig::default(),
    };
    for spec in &cli.set {
        raw.set_override(spec)?;
    }
    let mut cfg = PipelineConfig::from_raw(&raw)?;
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(jobs) = cli.jobs {
        cfg.jobs = Some(jobs);
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = build_config(&cli)?;
    if let Some(jobs) = cfg.jobs {
        // Ignore the error if a global pool already exists.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global();
    }
    match cli.command {
        Command::Lexicon {
            words,
            phonetic,
            units,
            preserve_case,
        } => {
            if words.is_some() {
                cfg.word_list = words;
            }
            if phonetic.is_some() {
                cfg.phonetic_dict = phonetic;
            }
            if units.is_some() {
                cfg.units_file = units;
            }
            if preserve_case {
                cfg.case_mode = chenflow_core::units::CaseMode::Preserve;
            }
            run_lexicon(&cfg)
        }
        Command::Synth {
            kind,
            utterances,
            vocab_size,
        } => {
            let spec = match kind {
                SynthKind::Standard => SyntheticSpec::standard(cfg.seed, vocab_size, utterances),
                SynthKind::Ablation => SyntheticSpec::ablation(cfg.seed, utterances),
                SynthKind::Cased => {
                    cfg.case_mode = chenflow_core::units::CaseMode::Preserve;
                    SyntheticSpec::cased(cfg.seed, utterances)
                }
            };
            run_synth(&cfg, &spec)
        }
        Command::Align => run_align(&cfg),
        Command::Stats => run_stats(&cfg),
        Command::Tree => run_tree(&cfg),
        Command::Train { stage } => run_train(
            &cfg,
            match stage {
                Stage::Ci => TrainStage::Ci,
                Stage::Cd => TrainStage::Cd,
            },
        ),
        Command::Decode => run_decode(&cfg),
        Command::Score => {
            let summary = run_score(&cfg)?;
            println!("wer={}", summary.report.wer_display());
            Ok(())
        }
        Command::Ablate {
            seeds,
            utterances,
            include_case,
        } => {
            let opts = AblateOptions {
                seeds: (0..seeds.max(1)).collect(),
                utterances,
                include_case,
            };
            run_ablate(&cfg, &opts)?;
            println!("wrote {}", cfg.ablate_report_path().display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
