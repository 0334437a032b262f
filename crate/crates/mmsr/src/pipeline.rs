//! Glue between the core stages: quantize, train and evaluate one model.

use std::time::Instant;

use mmsr_core::base::{BaseModel, FusionOrder};
use mmsr_core::dataset::{perturb, Channel, DataPoint, Features, PerturbationConfig, SplitDataset};
use mmsr_core::metrics::{metrics_from_ranks, MetricReport};
use mmsr_core::model::{GraphModel, ModelConfig, Recommender};
use mmsr_core::quantizer::{build_channel, ChannelQuantizer, ModalityCodebook, QuantizerConfig};
use mmsr_core::training::{prepare_points, rank_prepared, train, TrainReport};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Quantizers of the channels present in the feature set.
#[derive(Debug, Clone, PartialEq)]
pub struct Quantized {
    pub image: Option<ChannelQuantizer>,
    pub text: Option<ChannelQuantizer>,
}

impl Quantized {
    pub fn channel(&self, c: Channel) -> Option<&ChannelQuantizer> {
        match c {
            Channel::Image => self.image.as_ref(),
            Channel::Text => self.text.as_ref(),
        }
    }

    pub fn codebooks(&self) -> (Option<ModalityCodebook>, Option<ModalityCodebook>) {
        (
            self.image.as_ref().map(|q| q.codebook.clone()),
            self.text.as_ref().map(|q| q.codebook.clone()),
        )
    }

    /// Codebooks re-derived from (possibly perturbed) features through the
    /// frozen encoders and centers.
    pub fn reassign(&self, features: &Features) -> (Option<ModalityCodebook>, Option<ModalityCodebook>) {
        (
            self.image.as_ref().map(|q| q.reassign(features.image.as_ref())),
            self.text.as_ref().map(|q| q.reassign(features.text.as_ref())),
        )
    }
}

/// Builds a quantizer per present channel from training items only.
pub fn quantize(split: &SplitDataset, features: &Features, cfg: &QuantizerConfig) -> mmsr_core::Result<Quantized> {
    let train_items = split.train_items();
    let build = |t: Option<&mmsr_core::dataset::FeatureTable>| {
        t.map(|t| build_channel(t, &train_items, cfg)).transpose()
    };
    Ok(Quantized {
        image: build(features.image.as_ref())?,
        text: build(features.text.as_ref())?,
    })
}

/// Which recommender to fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelKind {
    Graph,
    Base(FusionOrder),
}

/// A trained model of either family.
#[derive(Debug, Clone)]
pub enum Trained {
    Graph(GraphModel),
    Base(BaseModel),
}

impl Trained {
    pub fn set_codebooks(
        &mut self,
        (image, text): (Option<ModalityCodebook>, Option<ModalityCodebook>),
    ) -> mmsr_core::Result<()> {
        match self {
            Trained::Graph(m) => m.set_codebooks(image, text),
            Trained::Base(m) => {
                m.set_codebooks(image, text);
                Ok(())
            }
        }
    }

    pub fn evaluate(&self, split: &SplitDataset, ks: &[u32]) -> mmsr_core::Result<MetricReport> {
        match self {
            Trained::Graph(m) => par_evaluate(m, &split.test, ks),
            Trained::Base(m) => par_evaluate(m, &split.test, ks),
        }
    }

    pub fn store(&self) -> &mmsr_core::optim::ParamStore {
        match self {
            Trained::Graph(m) => m.store(),
            Trained::Base(m) => m.store(),
        }
    }
}

/// Full-catalog metrics of `points`, scored batch by batch on the rayon
/// pool. Batches match the sequential evaluator, so results are identical.
pub fn par_evaluate<R>(model: &R, points: &[DataPoint], ks: &[u32]) -> mmsr_core::Result<MetricReport>
where
    R: Recommender + Sync,
    R::Input: Send,
{
    let bs = model.config().batch_size;
    let ranks = points
        .par_chunks(bs)
        .map(|chunk| {
            let (inputs, targets) = prepare_points(model, chunk)?;
            Ok(rank_prepared(model, &inputs, &targets))
        })
        .collect::<mmsr_core::Result<Vec<_>>>()?
        .concat();
    Ok(metrics_from_ranks(&ranks, ks, model.config().seed))
}

pub fn now_ms_since(start: Instant) -> impl Fn() -> u64 {
    move || start.elapsed().as_millis() as u64
}

/// Trains on the split's training points, holding out the last point of
/// every user for model selection.
pub fn fit(
    kind: ModelKind,
    split: &SplitDataset,
    q: &Quantized,
    cfg: &ModelConfig,
) -> mmsr_core::Result<(Trained, TrainReport)> {
    let (image, text) = q.codebooks();
    let (train_pts, val) = split.validation_split();
    let clock = now_ms_since(Instant::now());
    match kind {
        ModelKind::Graph => {
            let mut m = GraphModel::new(cfg.clone(), split.catalog.clone(), image, text)?;
            let r = train(&mut m, &train_pts, &val, &clock)?;
            Ok((Trained::Graph(m), r))
        }
        ModelKind::Base(order) => {
            let mut m = BaseModel::new(cfg.clone(), order, split.catalog.clone(), image, text)?;
            let r = train(&mut m, &train_pts, &val, &clock)?;
            Ok((Trained::Base(m), r))
        }
    }
}

/// Evaluates `model` on the test points after perturbing the split and
/// features; codes are re-derived from the perturbed features.
pub fn eval_perturbed(
    model: &Trained,
    split: &SplitDataset,
    features: &Features,
    q: &Quantized,
    perturbation: &PerturbationConfig,
    ks: &[u32],
) -> mmsr_core::Result<MetricReport> {
    let (split_p, features_p) = perturb(split, features, perturbation)?;
    let mut m = model.clone();
    m.set_codebooks(q.reassign(&features_p))?;
    m.evaluate(&split_p, ks)
}

/// Median of `xs` (mean of the middle pair for even lengths).
pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}
