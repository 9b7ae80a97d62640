//! Ablation harness: runs the full pipeline per grid cell over context
//! dependency (CD), position dependency (PD), and optionally casing, and
//! writes a table-shaped report of one WER per cell.
//!
//! The comparison corpus colors one unit pair by right context and one by
//! word position. Note that with CD on, word position is recoverable from
//! the boundary sentinels in the tri-contexts, so the PD effect is read
//! from the CD-off column (N,N vs N,Y) while the CD effect is read at PD
//! on (N,Y vs Y,Y).

use std::fs;

use anyhow::Result;
use chenflow_core::units::CaseMode;

use crate::config::PipelineConfig;
use crate::pipeline::run_full;
use crate::synth::SyntheticSpec;

#[derive(Debug, Clone)]
pub struct AblateOptions {
    pub seeds: Vec<u64>,
    pub utterances: usize,
    pub include_case: bool,
}

impl Default for AblateOptions {
    fn default() -> Self {
        Self {
            seeds: vec![0],
            utterances: 300,
            include_case: false,
        }
    }
}

/// Which ablation family a cell belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CellFamily {
    CdPd,
    Casing,
}

/// One pipeline run inside the grid.
#[derive(Debug, Clone)]
pub struct CellOutcome {
    pub family: CellFamily,
    pub seed: u64,
    pub context_dependent: bool,
    pub position_dependent: bool,
    pub case_mode: CaseMode,
    /// WER percentage, or the error text if the cell failed.
    pub wer: Result<f64, String>,
}

#[derive(Debug, Clone)]
pub struct AblateReport {
    pub cells: Vec<CellOutcome>,
}

impl AblateReport {
    /// Mean WER over seeds for a CD/PD grid cell, ignoring failed runs.
    pub fn mean_wer(&self, cd: bool, pd: bool) -> Option<f64> {
        let values: Vec<f64> = self
            .cells
            .iter()
            .filter(|c| {
                c.family == CellFamily::CdPd
                    && c.context_dependent == cd
                    && c.position_dependent == pd
            })
            .filter_map(|c| c.wer.as_ref().ok().copied())
            .collect();
        if values.is_empty() {
            None
        } else {
            Some(values.iter().sum::<f64>() / values.len() as f64)
        }
    }

    /// Mean WER over seeds for a casing cell.
    pub fn mean_case_wer(&self, case_mode: CaseMode) -> Option<f64> {
        let values: Vec<f64> = self
            .cells
            .iter()
            .filter(|c| c.family == CellFamily::Casing && c.case_mode == case_mode)
            .filter_map(|c| c.wer.as_ref().ok().copied())
            .collect();
        if values.is_empty() {
            None
        } else {
            Some(values.iter().sum::<f64>() / values.len() as f64)
        }
    }
}

fn flag(b: bool) -> &'static str {
    if b {
        "Y"
    } else {
        "N"
    }
}

/// Runs the grid. Each cell gets its own output directory under
/// `<out>/ablate/`; per-cell failures are recorded and the remaining
/// cells still run.
pub fn run_ablate(cfg: &PipelineConfig, opts: &AblateOptions) -> Result<AblateReport> {
    let mut cells = Vec::new();
    for &seed in &opts.seeds {
        for (cd, pd) in [(false, false), (false, true), (true, false), (true, true)] {
            let mut cell_cfg = cfg.clone();
            cell_cfg.seed = seed;
            cell_cfg.cd.context_dependent = cd;
            cell_cfg.cd.position_dependent = pd;
            cell_cfg.case_mode = CaseMode::Lowercase;
            cell_cfg.out_dir =
                cfg.out_dir
                    .join(format!("ablate/s{seed}_cd{}_pd{}", flag(cd), flag(pd)));
            let spec = SyntheticSpec::ablation(seed, opts.utterances);
            let wer = run_full(&cell_cfg, &spec)
                .map(|summary| summary.report.wer())
                .map_err(|e| format!("{e:#}"));
            if let Err(e) = &wer {
                eprintln!("ablate cell seed={seed} cd={cd} pd={pd}: {e}");
            }
            cells.push(CellOutcome {
                family: CellFamily::CdPd,
                seed,
                context_dependent: cd,
                position_dependent: pd,
                case_mode: CaseMode::Lowercase,
                wer,
            });
        }
        if opts.include_case {
            for case_mode in [CaseMode::Preserve, CaseMode::Lowercase] {
                let mut cell_cfg = cfg.clone();
                cell_cfg.seed = seed;
                cell_cfg.case_mode = case_mode;
                let label = match case_mode {
                    CaseMode::Preserve => "cased",
                    CaseMode::Lowercase => "lower",
                };
                cell_cfg.out_dir = cfg.out_dir.join(format!("ablate/s{seed}_case_{label}"));
                let mut spec = SyntheticSpec::cased(seed, opts.utterances);
                spec.case_mode = case_mode;
                let wer = run_full(&cell_cfg, &spec)
                    .map(|summary| summary.report.wer())
                    .map_err(|e| format!("{e:#}"));
                if let Err(e) = &wer {
                    eprintln!("ablate case cell seed={seed} {label}: {e}");
                }
                cells.push(CellOutcome {
                    family: CellFamily::Casing,
                    seed,
                    context_dependent: true,
                    position_dependent: true,
                    case_mode,
                    wer,
                });
            }
        }
    }
    let report = AblateReport { cells };
    write_report(cfg, &report, opts)?;
    Ok(report)
}

fn write_report(cfg: &PipelineConfig, report: &AblateReport, opts: &AblateOptions) -> Result<()> {
    fs::create_dir_all(&cfg.out_dir)?;
    let mut text = String::from("CD PD WER\n");
    for (cd, pd) in [(false, false), (false, true), (true, false), (true, true)] {
        let cell = match report.mean_wer(cd, pd) {
            Some(wer) => format!("{wer:.1}"),
            None => "FAIL".to_string(),
        };
        text.push_str(&format!("{}  {}  {}\n", flag(cd), flag(pd), cell));
    }
    if opts.include_case {
        text.push_str("CASE WER\n");
        for case_mode in [CaseMode::Preserve, CaseMode::Lowercase] {
            let cell = match report.mean_case_wer(case_mode) {
                Some(wer) => format!("{wer:.1}"),
                None => "FAIL".to_string(),
            };
            let label = match case_mode {
                CaseMode::Preserve => "preserve",
                CaseMode::Lowercase => "lower",
            };
            text.push_str(&format!("{label}  {cell}\n"));
        }
    }
    // Per-seed detail lines, one per cell.
    for c in &report.cells {
        let wer = match &c.wer {
            Ok(w) => format!("{w:.3}"),
            Err(_) => "FAIL".to_string(),
        };
        text.push_str(&format!(
            "# seed={} cd={} pd={} case={:?} wer={}\n",
            c.seed,
            flag(c.context_dependent),
            flag(c.position_dependent),
            c.case_mode,
            wer
        ));
    }
    fs::write(cfg.ablate_report_path(), text)?;
    Ok(())
}
