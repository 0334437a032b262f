//! Experiment recipes: ablation grid, missing-modality robustness, (c, k)
//! sweep and the fusion-order perturbation study.
//!
//! Independent training runs execute on the rayon pool; every run is seeded
//! from its own config, so results do not depend on the thread count.

use mmsr_core::base::FusionOrder;
use mmsr_core::dataset::{Features, PerturbationConfig, PerturbationKind, SplitDataset};
use mmsr_core::metrics::MetricReport;
use mmsr_core::model::{ModelConfig, Recommender};
use mmsr_core::msgraph::MsGraph;
use mmsr_core::propagation::Aggregator;
use mmsr_core::quantizer::QuantizerConfig;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::pipeline::{eval_perturbed, fit, quantize, ModelKind, Quantized, Trained};

/// The ten ablation variants, in table order.
pub fn ablation_variants(base: &ModelConfig) -> Vec<(String, ModelConfig)> {
    let with = |agg: Aggregator| ModelConfig {
        aggregator: agg,
        ..base.clone()
    };
    let mut out: Vec<(String, ModelConfig)> = [
        Aggregator::Han,
        Aggregator::Sync,
        Aggregator::NiHohe,
        Aggregator::NiHeho,
        Aggregator::Hohe,
        Aggregator::Heho,
        Aggregator::Ho,
        Aggregator::He,
    ]
    .into_iter()
    .map(|a| (a.name().to_string(), with(a)))
    .collect();
    out.push((
        "w/o position".into(),
        ModelConfig {
            aggregator: Aggregator::Han,
            use_position: false,
            ..base.clone()
        },
    ));
    out.push((
        "w/o type".into(),
        ModelConfig {
            aggregator: Aggregator::Han,
            use_type: false,
            ..base.clone()
        },
    ));
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub config: ModelConfig,
    pub report: MetricReport,
    /// Reads of the heterogeneous edge set during one test-set propagation.
    pub hetero_reads: usize,
}

/// Heterogeneous-edge reads of one propagation over `graphs`.
pub fn count_hetero_reads(model: &mmsr_core::model::GraphModel, graphs: &[MsGraph]) -> usize {
    let refs: Vec<&MsGraph> = graphs.iter().collect();
    let batch = model.batch(&refs);
    model.node_states(&batch);
    batch.hetero_reads()
}

/// Trains and evaluates every ablation variant with identical seeds and
/// budgets.
pub fn run_ablation(
    split: &SplitDataset,
    q: &Quantized,
    base: &ModelConfig,
    ks: &[u32],
) -> mmsr_core::Result<Vec<AblationRow>> {
    ablation_variants(base)
        .into_par_iter()
        .map(|(variant, cfg)| {
            let (m, _) = fit(ModelKind::Graph, split, q, &cfg)?;
            let report = m.evaluate(split, ks)?;
            let Trained::Graph(g) = &m else {
                unreachable!("graph fit returns a graph model")
            };
            let graphs = split
                .test
                .iter()
                .take(64)
                .map(|p| g.prepare(&p.prefix))
                .collect::<mmsr_core::Result<Vec<_>>>()?;
            let hetero_reads = count_hetero_reads(g, &graphs);
            Ok(AblationRow {
                variant,
                config: cfg,
                report,
                hetero_reads,
            })
        })
        .collect()
}

/// Channel mode of the missing-modality sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MissingMode {
    Image,
    Text,
    Mix,
}

impl MissingMode {
    pub const ALL: [MissingMode; 3] = [MissingMode::Image, MissingMode::Text, MissingMode::Mix];

    pub fn kind(self) -> PerturbationKind {
        match self {
            MissingMode::Image => PerturbationKind::MissingImage,
            MissingMode::Text => PerturbationKind::MissingText,
            MissingMode::Mix => PerturbationKind::MissingMix,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub mode: MissingMode,
    pub ratio: f64,
    pub report: MetricReport,
}

/// Evaluates a trained model with test-time features removed for a growing
/// fraction of items, per channel mode. Ratio 0 reproduces the clean report.
pub fn run_robustness(
    model: &Trained,
    split: &SplitDataset,
    features: &Features,
    q: &Quantized,
    modes: &[MissingMode],
    ratios: &[f64],
    seed: u64,
    ks: &[u32],
) -> mmsr_core::Result<Vec<CurvePoint>> {
    let cells: Vec<(MissingMode, f64)> = modes
        .iter()
        .flat_map(|&m| ratios.iter().map(move |&r| (m, r)))
        .collect();
    cells
        .into_par_iter()
        .map(|(mode, ratio)| {
            let p = PerturbationConfig::new(mode.kind(), ratio, seed);
            let report = eval_perturbed(model, split, features, q, &p, ks)?;
            Ok(CurvePoint {
                mode,
                ratio,
                report,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    /// `None` for the no-codes baseline (one node per item and channel).
    pub c: Option<usize>,
    pub k: Option<usize>,
    pub report: MetricReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub cells: Vec<SweepCell>,
    /// `(c, k)` pairs skipped because `k > c`.
    pub skipped: Vec<(usize, usize)>,
}

impl SweepResult {
    /// The coded cell with the highest HR@5 (earliest on ties).
    pub fn best(&self) -> Option<&SweepCell> {
        self.cells
            .iter()
            .filter(|c| c.c.is_some())
            .fold(None, |best: Option<&SweepCell>, cell| match best {
                Some(b) if b.report.hr_at(5) >= cell.report.hr_at(5) => Some(b),
                _ => Some(cell),
            })
    }
}

/// Rebuilds the quantizer and retrains the graph model for every valid
/// `(c, k)` cell, plus the no-codes baseline.
pub fn run_ck_sweep(
    split: &SplitDataset,
    features: &Features,
    qcfg: &QuantizerConfig,
    cfg: &ModelConfig,
    cs: &[usize],
    ks_codes: &[usize],
    ks: &[u32],
) -> mmsr_core::Result<SweepResult> {
    let mut skipped = Vec::new();
    let mut jobs: Vec<(Option<usize>, Option<usize>, QuantizerConfig)> = Vec::new();
    for &c in cs {
        for &k in ks_codes {
            if k > c {
                log::warn!("skipping c={c}, k={k}: k exceeds c");
                skipped.push((c, k));
                continue;
            }
            jobs.push((
                Some(c),
                Some(k),
                QuantizerConfig {
                    clusters: c,
                    codes_per_item: k,
                    per_item: false,
                    ..qcfg.clone()
                },
            ));
        }
    }
    jobs.push((
        None,
        None,
        QuantizerConfig {
            per_item: true,
            codes_per_item: 1,
            ..qcfg.clone()
        },
    ));
    let cells = jobs
        .into_par_iter()
        .map(|(c, k, qc)| {
            let q = quantize(split, features, &qc)?;
            let (m, _) = fit(ModelKind::Graph, split, &q, cfg)?;
            Ok(SweepCell {
                c,
                k,
                report: m.evaluate(split, ks)?,
            })
        })
        .collect::<mmsr_core::Result<Vec<_>>>()?;
    Ok(SweepResult { cells, skipped })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionRow {
    pub order: FusionOrder,
    pub clean: f64,
    pub disordered: f64,
    pub mismatched: f64,
}

impl FusionRow {
    pub fn disordered_drop(&self) -> f64 {
        self.clean - self.disordered
    }

    pub fn mismatched_drop(&self) -> f64 {
        self.clean - self.mismatched
    }
}

/// Trains the early- and late-fusion base models on clean data and
/// measures HR@5 on test points perturbed as Disordered and Mismatched.
pub fn run_fusion_study(
    split: &SplitDataset,
    features: &Features,
    q: &Quantized,
    cfg: &ModelConfig,
    ratio: f64,
) -> mmsr_core::Result<Vec<FusionRow>> {
    [FusionOrder::Early, FusionOrder::Late]
        .into_par_iter()
        .map(|order| {
            let (m, _) = fit(ModelKind::Base(order), split, q, cfg)?;
            let clean = m.evaluate(split, &[5])?.hr_at(5);
            let hr = |kind| -> mmsr_core::Result<f64> {
                let p = PerturbationConfig::new(kind, ratio, cfg.seed);
                Ok(eval_perturbed(&m, split, features, q, &p, &[5])?.hr_at(5))
            };
            Ok(FusionRow {
                order,
                clean,
                disordered: hr(PerturbationKind::Disordered)?,
                mismatched: hr(PerturbationKind::Mismatched)?,
            })
        })
        .collect()
}
