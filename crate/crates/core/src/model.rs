//! Model configuration, the recommender interface and the graph model.

use alloc::format;
use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamId, Tape, Var};
use crate::dataset::{Channel, ItemId};
use crate::msgraph::{build_graph, CodeLookup, GraphBatch, GraphOptions, MsGraph};
use crate::optim::ParamStore;
use crate::propagation::{propagate, Aggregator, Ctx, PropParams, PropTrace};
use crate::quantizer::ModalityCodebook;
use crate::representation::{EmbeddingTables, ReprFlags, TableDims};
use crate::tensor::Matrix;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub d: usize,
    pub layers: usize,
    pub aggregator: Aggregator,
    pub lr: f64,
    pub l2: f64,
    pub dropout: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Longest history fed to the model; older interactions are dropped.
    pub m_max: usize,
    /// Hidden width of the gate MLP (`d` when unset).
    pub gate_hidden: Option<usize>,
    pub use_type: bool,
    pub use_position: bool,
    pub freeze_codes: bool,
    pub image_text_edges: bool,
    /// Scale attention scores by `1/√d`.
    pub score_scale: bool,
    pub clip_norm: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d: 32,
            layers: 2,
            aggregator: Aggregator::Han,
            lr: 1e-3,
            l2: 1e-6,
            dropout: 0.0,
            batch_size: 64,
            epochs: 30,
            seed: 7,
            m_max: 50,
            gate_hidden: None,
            use_type: true,
            use_position: true,
            freeze_codes: false,
            image_text_edges: true,
            score_scale: false,
            clip_norm: 5.0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(format!("model config: {m}")));
        if self.d == 0 || self.layers == 0 || self.batch_size == 0 || self.m_max == 0 {
            return bad("d, layers, batch_size and m_max must be positive");
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) || !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return bad("lr and l2 must be finite and non-negative");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        if self.gate_hidden == Some(0) || !(self.clip_norm > 0.0) {
            return bad("gate_hidden and clip_norm must be positive");
        }
        Ok(())
    }

    pub fn repr_flags(&self) -> ReprFlags {
        ReprFlags {
            use_type: self.use_type,
            use_position: self.use_position,
        }
    }
}

/// A sequential recommender trained by [`crate::training::train`].
pub trait Recommender {
    /// Per-prefix input prepared once and reused across epochs.
    type Input;

    fn config(&self) -> &ModelConfig;
    fn store(&self) -> &ParamStore;
    fn store_mut(&mut self) -> &mut ParamStore;
    /// Candidate item embeddings, one row per catalog entry.
    fn item_table(&self) -> ParamId;
    /// Parameters excluded from updates and from the L2 term.
    fn frozen(&self) -> Vec<ParamId>;
    /// Sorted catalog; row `i` of the item table belongs to `catalog()[i]`.
    fn catalog(&self) -> &[ItemId];
    fn prepare(&self, prefix: &[ItemId]) -> Result<Self::Input>;
    /// User representations `P` (`B × d`) for a batch.
    fn user_repr(
        &self,
        tape: &mut Tape,
        params: &[Var],
        inputs: &[&Self::Input],
        dropout: Option<&mut ChaCha8Rng>,
    ) -> Var;

    fn item_row(&self, item: ItemId) -> Option<usize> {
        self.catalog().binary_search(&item).ok()
    }
}

/// The most recent `m_max` items of `prefix`.
pub fn truncate(prefix: &[ItemId], m_max: usize) -> &[ItemId] {
    &prefix[prefix.len().saturating_sub(m_max)..]
}

/// Code-graph recommender: tables → node inputs → propagation → last
/// pooling.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphModel {
    pub cfg: ModelConfig,
    pub store: ParamStore,
    pub tables: EmbeddingTables,
    pub prop: PropParams,
    catalog: Vec<ItemId>,
    pub image: Option<ModalityCodebook>,
    pub text: Option<ModalityCodebook>,
}

impl GraphModel {
    pub fn new(
        cfg: ModelConfig,
        mut catalog: Vec<ItemId>,
        image: Option<ModalityCodebook>,
        text: Option<ModalityCodebook>,
    ) -> Result<Self> {
        cfg.validate()?;
        catalog.sort_unstable();
        catalog.dedup();
        let mut store = ParamStore::new();
        let dims = TableDims {
            d: cfg.d,
            n_items: catalog.len(),
            m_max: cfg.m_max,
        };
        let tables = EmbeddingTables::init(&mut store, dims, image.as_ref(), text.as_ref(), cfg.seed)?;
        let prop = PropParams::init(
            &mut store,
            cfg.aggregator,
            cfg.d,
            cfg.layers,
            cfg.gate_hidden.unwrap_or(cfg.d),
            cfg.seed.wrapping_add(1),
        )?;
        Ok(Self {
            cfg,
            store,
            tables,
            prop,
            catalog,
            image,
            text,
        })
    }

    /// Swaps code assignments (e.g. for perturbed features) without touching
    /// the trained tables. Code counts must match.
    pub fn set_codebooks(
        &mut self,
        image: Option<ModalityCodebook>,
        text: Option<ModalityCodebook>,
    ) -> Result<()> {
        for (c, new) in [(Channel::Image, &image), (Channel::Text, &text)] {
            let rows = self.store.get(self.tables.code(c)).rows();
            if let Some(b) = new {
                if b.c() != rows {
                    return Err(Error::Shape(format!(
                        "{c:?} codebook has {} codes, table has {rows}",
                        b.c()
                    )));
                }
            }
        }
        self.image = image;
        self.text = text;
        Ok(())
    }

    pub fn codes(&self) -> CodeLookup<'_> {
        CodeLookup {
            image: self.image.as_ref(),
            text: self.text.as_ref(),
        }
    }

    pub fn graph(&self, prefix: &[ItemId]) -> Result<MsGraph> {
        let prefix = truncate(prefix, self.cfg.m_max);
        if let Some(i) = prefix.iter().find(|&&i| self.item_row(i).is_none()) {
            return Err(Error::InvalidArgument(format!("item {} not in catalog", i.0)));
        }
        let opts = GraphOptions {
            image_text_edges: self.cfg.image_text_edges,
        };
        build_graph(prefix, &self.codes(), &opts)
    }

    pub fn batch(&self, graphs: &[&MsGraph]) -> GraphBatch {
        GraphBatch::new(graphs, |i| self.item_row(i).expect("item checked at graph build"))
    }

    /// Final node states `Z` of a batch (no dropout), with the trace.
    pub fn node_states(&self, batch: &GraphBatch) -> (Matrix, PropTrace) {
        let mut tape = Tape::new();
        let params = self.store.on_tape(&mut tape);
        let mut trace = PropTrace::default();
        let h0 = self
            .tables
            .node_inputs(&mut tape, &params, batch, self.cfg.repr_flags());
        let z = {
            let mut ctx = Ctx::new(&mut tape, &params, batch);
            ctx.score_scale = self.score_scale();
            ctx.trace = Some(&mut trace);
            propagate(&mut ctx, &self.prop, h0, None)
        };
        (tape.value(z).clone(), trace)
    }

    fn score_scale(&self) -> Option<f64> {
        self.cfg
            .score_scale
            .then(|| 1.0 / libm::sqrt(self.cfg.d as f64))
    }
}

impl Recommender for GraphModel {
    type Input = MsGraph;

    fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    fn store(&self) -> &ParamStore {
        &self.store
    }

    fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn item_table(&self) -> ParamId {
        self.tables.item
    }

    fn frozen(&self) -> Vec<ParamId> {
        if self.cfg.freeze_codes {
            Vec::from([self.tables.image_code, self.tables.text_code])
        } else {
            Vec::new()
        }
    }

    fn catalog(&self) -> &[ItemId] {
        &self.catalog
    }

    fn prepare(&self, prefix: &[ItemId]) -> Result<MsGraph> {
        self.graph(prefix)
    }

    fn user_repr(
        &self,
        tape: &mut Tape,
        params: &[Var],
        inputs: &[&MsGraph],
        dropout: Option<&mut ChaCha8Rng>,
    ) -> Var {
        let batch = self.batch(inputs);
        let h0 = self
            .tables
            .node_inputs(tape, params, &batch, self.cfg.repr_flags());
        let mut ctx = Ctx::new(tape, params, &batch);
        ctx.score_scale = self.score_scale();
        let z = propagate(
            &mut ctx,
            &self.prop,
            h0,
            dropout.map(|rng| (self.cfg.dropout, rng)),
        );
        tape.gather_rows(z, batch.last.clone())
    }
}
