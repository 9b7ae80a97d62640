//! Runs the whole pipeline programmatically on a synthetic corpus and
//! prints the resulting report. Handy as a quick health check:
//!
//! ```sh
//! cargo run -p chenflow-cli --release --example synthetic_run
//! ```

use chenflow_cli::config::PipelineConfig;
use chenflow_cli::pipeline::run_full;
use chenflow_cli::synth::SyntheticSpec;

fn main() -> anyhow::Result<()> {
    let out = std::env::temp_dir().join("chenflow_synthetic_run");
    let _ = std::fs::remove_dir_all(&out);
    let cfg = PipelineConfig {
        out_dir: out.clone(),
        seed: 77,
        ..PipelineConfig::default()
    };
    let spec = SyntheticSpec::standard(77, 50, 2000);
    let started = std::time::Instant::now();
    let summary = run_full(&cfg, &spec)?;
    println!(
        "2000 utterances over a 50-word vocabulary: WER {}% ({} errors / {} reference words) in {:.2?}",
        summary.report.wer_display(),
        summary.report.errors(),
        summary.report.reference_words,
        started.elapsed()
    );
    if let Some(c) = summary.propernoun_cer {
        println!("proper-noun CER {c:.1}%");
    }
    if let Some(c) = summary.rareword_cer {
        println!("rare-word CER {c:.1}%");
    }
    println!("artifacts in {}", out.display());
    Ok(())
}
