//! Graph aggregators: GCN, GAT and the heterogeneity-aware dual-attention
//! family (HAN-GNN and its ablations).
//!
//! States are row vectors, so a transform `W h` is written `h · W` here.
//! Attention scores are normalized per destination node within one relation
//! class; a node without in-edges of a class keeps its input for that step.

use alloc::format;
use alloc::rc::Rc;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Index, ParamId, Tape, Var};
use crate::msgraph::{Edge, EdgeSet, GraphBatch, NodeType, Relation};
use crate::optim::ParamStore;
use crate::representation::uniform_init;
use crate::tensor::Matrix;
use crate::{Error, Result, LEAKY_SLOPE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Aggregator {
    #[serde(rename = "GCN")]
    Gcn,
    #[serde(rename = "GAT")]
    Gat,
    #[serde(rename = "HAN")]
    Han,
    #[serde(rename = "Sync")]
    Sync,
    #[serde(rename = "HO")]
    Ho,
    #[serde(rename = "HE")]
    He,
    #[serde(rename = "HOHE")]
    Hohe,
    #[serde(rename = "HEHO")]
    Heho,
    #[serde(rename = "NI-HOHE")]
    NiHohe,
    #[serde(rename = "NI-HEHO")]
    NiHeho,
}

impl Aggregator {
    pub const ALL: [Aggregator; 10] = [
        Aggregator::Gcn,
        Aggregator::Gat,
        Aggregator::Han,
        Aggregator::Sync,
        Aggregator::Ho,
        Aggregator::He,
        Aggregator::Hohe,
        Aggregator::Heho,
        Aggregator::NiHohe,
        Aggregator::NiHeho,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Aggregator::Gcn => "GCN",
            Aggregator::Gat => "GAT",
            Aggregator::Han => "HAN",
            Aggregator::Sync => "Sync",
            Aggregator::Ho => "HO",
            Aggregator::He => "HE",
            Aggregator::Hohe => "HOHE",
            Aggregator::Heho => "HEHO",
            Aggregator::NiHohe => "NI-HOHE",
            Aggregator::NiHeho => "NI-HEHO",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|a| a.name().eq_ignore_ascii_case(s))
    }

    fn phased(self) -> Option<(PhaseOrder, bool)> {
        match self {
            Aggregator::Hohe => Some((PhaseOrder::HoHe, false)),
            Aggregator::Heho => Some((PhaseOrder::HeHo, false)),
            Aggregator::NiHohe => Some((PhaseOrder::HoHe, true)),
            Aggregator::NiHeho => Some((PhaseOrder::HeHo, true)),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RelClass {
    Homogeneous,
    Heterogeneous,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PhaseOrder {
    HoHe,
    HeHo,
}

impl PhaseOrder {
    fn classes(self) -> (RelClass, RelClass) {
        match self {
            PhaseOrder::HoHe => (RelClass::Homogeneous, RelClass::Heterogeneous),
            PhaseOrder::HeHo => (RelClass::Heterogeneous, RelClass::Homogeneous),
        }
    }
}

impl EdgeSet {
    /// Homogeneous edges with their relation rows; any cross-modal edge is
    /// an error.
    pub fn homogeneous(edges: &[Edge]) -> Result<Self> {
        let mut rel = Vec::with_capacity(edges.len());
        for e in edges {
            rel.push(e.rel.homo_index().ok_or_else(|| {
                Error::InvalidArgument(format!("edge {}->{} is heterogeneous", e.src, e.dst))
            })?);
        }
        Ok(EdgeSet {
            src: edges.iter().map(|e| e.src).collect(),
            dst: edges.iter().map(|e| e.dst).collect(),
            rel: rel.into(),
        })
    }

    /// Cross-modal edges; any homogeneous edge is an error.
    pub fn heterogeneous(edges: &[Edge]) -> Result<Self> {
        if let Some(e) = edges.iter().find(|e| e.rel != Relation::CrossModal) {
            return Err(Error::InvalidArgument(format!(
                "edge {}->{} is homogeneous ({:?})",
                e.src, e.dst, e.rel
            )));
        }
        Ok(EdgeSet {
            src: edges.iter().map(|e| e.src).collect(),
            dst: edges.iter().map(|e| e.dst).collect(),
            rel: Vec::new().into(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GateParams {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

/// Parameters of one layer; only those the aggregator uses are present.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LayerParams {
    /// GCN/GAT transform.
    pub w: Option<ParamId>,
    /// GAT attention vector as `d × 2`: column 0 weighs the center, column 1
    /// the neighbor.
    pub gat_a: Option<ParamId>,
    pub wq: Option<[ParamId; 3]>,
    pub wk: Option<[ParamId; 3]>,
    pub wv: Option<[ParamId; 3]>,
    /// One row `a_r` per homogeneous relation.
    pub rel_a: Option<ParamId>,
    pub gate: Option<GateParams>,
    /// Synchronous merge weight `2d × d` and bias.
    pub sync: Option<(ParamId, ParamId)>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PropParams {
    pub aggregator: Aggregator,
    pub d: usize,
    pub layers: Vec<LayerParams>,
}

impl PropParams {
    pub fn init(
        store: &mut ParamStore,
        aggregator: Aggregator,
        d: usize,
        n_layers: usize,
        gate_hidden: usize,
        seed: u64,
    ) -> Result<Self> {
        if n_layers == 0 || d == 0 || gate_hidden == 0 {
            return Err(Error::InvalidArgument(
                "layer count, width and gate width must be positive".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(n_layers);
        for l in 0..n_layers {
            let mut lp = LayerParams::default();
            let add = |store: &mut ParamStore, name: &str, m: Matrix| -> ParamId {
                store.add(&format!("layer{l}.{name}"), m)
            };
            let typed = |store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str| {
                NodeType::ALL.map(|t| {
                    store.add(&format!("layer{l}.{name}.{t:?}"), uniform_init(rng, d, d, d))
                })
            };
            match aggregator {
                Aggregator::Gcn => lp.w = Some(add(store, "gcn_w", uniform_init(&mut rng, d, d, d))),
                Aggregator::Gat => {
                    lp.w = Some(add(store, "gat_w", uniform_init(&mut rng, d, d, d)));
                    lp.gat_a = Some(add(store, "gat_a", uniform_init(&mut rng, d, 2, d)));
                }
                _ => {
                    if aggregator != Aggregator::Ho {
                        lp.wq = Some(typed(store, &mut rng, "wq"));
                        lp.wk = Some(typed(store, &mut rng, "wk"));
                    }
                    lp.wv = Some(typed(store, &mut rng, "wv"));
                    if aggregator != Aggregator::He {
                        lp.rel_a = Some(add(store, "rel_a", uniform_init(&mut rng, 4, d, d)));
                    }
                    if aggregator == Aggregator::Sync {
                        lp.sync = Some((
                            add(store, "sync_w", uniform_init(&mut rng, 2 * d, d, d)),
                            add(store, "sync_b", Matrix::zeros(1, d)),
                        ));
                    }
                    if aggregator == Aggregator::Han {
                        lp.gate = Some(GateParams {
                            w1: add(store, "gate_w1", uniform_init(&mut rng, 2 * d, gate_hidden, d)),
                            b1: add(store, "gate_b1", Matrix::zeros(1, gate_hidden)),
                            w2: add(store, "gate_w2", uniform_init(&mut rng, gate_hidden, 2, d)),
                            b2: add(store, "gate_b2", Matrix::zeros(1, 2)),
                        });
                    }
                }
            }
            layers.push(lp);
        }
        Ok(Self {
            aggregator,
            d,
            layers,
        })
    }
}

/// Where a class aggregation happened.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stage {
    Gat,
    /// Single-phase aggregation over one class (HO, HE, Sync, and phase 1).
    Phase1(RelClass),
    /// Second phase of the given order.
    Phase2(PhaseOrder),
}

/// One softmax-normalized aggregation as it happened on the tape.
#[derive(Debug, Clone)]
pub struct ClassTrace {
    pub layer: usize,
    pub stage: Stage,
    pub src: Index,
    pub dst: Index,
    pub alpha: Vec<f64>,
    /// Value rows indexed by `src`.
    pub values: Matrix,
    pub output: Matrix,
}

#[derive(Debug, Clone, Default)]
pub struct PropTrace {
    pub classes: Vec<ClassTrace>,
    /// Per-layer gate weights (HAN only).
    pub beta: Vec<Matrix>,
    pub hohe: Vec<Matrix>,
    pub heho: Vec<Matrix>,
    /// Input values `W_V h⁽ˡ⁾` of every phased layer.
    pub values0: Vec<Matrix>,
}

/// Forward state shared by the layer functions.
pub struct Ctx<'a> {
    pub tape: &'a mut Tape,
    /// Tape variables of every stored parameter, indexed by [`ParamId`].
    pub params: &'a [Var],
    pub batch: &'a GraphBatch,
    /// Multiplies every dot-product score by this factor when set.
    pub score_scale: Option<f64>,
    pub trace: Option<&'a mut PropTrace>,
    layer: usize,
}

impl<'a> Ctx<'a> {
    pub fn new(tape: &'a mut Tape, params: &'a [Var], batch: &'a GraphBatch) -> Self {
        Self {
            tape,
            params,
            batch,
            score_scale: None,
            trace: None,
            layer: 0,
        }
    }

    fn p(&self, id: ParamId) -> Var {
        self.params[id.0]
    }

    fn typed(&mut self, ids: [ParamId; 3], h: Var) -> Var {
        let ws = ids.map(|i| self.params[i.0]);
        self.tape.typed_linear(h, &ws, self.batch.type_groups.clone())
    }

    fn scaled(&mut self, s: Var) -> Var {
        match self.score_scale {
            Some(f) => self.tape.scale(s, f),
            None => s,
        }
    }

    fn edges(&self, class: RelClass) -> EdgeSet {
        match class {
            RelClass::Homogeneous => self.batch.homo.clone(),
            RelClass::Heterogeneous => self.batch.hetero().clone(),
        }
    }
}

fn need<T: Copy>(v: Option<T>, what: &str) -> T {
    v.unwrap_or_else(|| panic!("layer has no {what} parameters"))
}

fn has_in_edges(dst: &[usize], n: usize) -> Rc<[bool]> {
    let mut m = vec![false; n];
    for &d in dst {
        m[d] = true;
    }
    m.into()
}

/// `σ(Σ_j d(i,j) · h_j W)` over all in-edges, self-loops included.
pub fn gcn_layer(ctx: &mut Ctx<'_>, lp: &LayerParams, h: Var) -> Var {
    let w = ctx.p(need(lp.w, "GCN"));
    let hw = ctx.tape.matmul(h, w);
    let b = ctx.batch;
    let norm = ctx.tape.constant(Matrix::column(&b.gcn_norm));
    let agg = ctx
        .tape
        .edge_aggregate(norm, hw, b.all.src.clone(), b.all.dst.clone(), b.n_nodes);
    ctx.tape.leaky_relu(agg, LEAKY_SLOPE)
}

/// `α = softmax_j LeakyReLU(aᵀ[W h_i; W h_j])`, output `Σ α_ij W h_j`.
pub fn gat_layer(ctx: &mut Ctx<'_>, lp: &LayerParams, h: Var) -> Var {
    let w = ctx.p(need(lp.w, "GAT"));
    let a = ctx.p(need(lp.gat_a, "GAT"));
    let b = ctx.batch;
    let hw = ctx.tape.matmul(h, w);
    let proj = ctx.tape.matmul(hw, a);
    let a_c = ctx.tape.col_slice(proj, 0, 1);
    let a_n = ctx.tape.col_slice(proj, 1, 1);
    let e_c = ctx.tape.gather_rows(a_c, b.all.dst.clone());
    let e_n = ctx.tape.gather_rows(a_n, b.all.src.clone());
    let e = ctx.tape.add(e_c, e_n);
    let e = ctx.tape.leaky_relu(e, LEAKY_SLOPE);
    let edges = b.all.clone();
    let (out, _) = aggregate_class(ctx, Stage::Gat, e, hw, &edges, h);
    out
}

/// `a_r · (h_i W_V ⊙ h_j W_V)` for every homogeneous edge.
pub fn homo_scores(ctx: &mut Ctx<'_>, lp: &LayerParams, h: Var, edges: &EdgeSet) -> Result<Var> {
    if edges.rel.len() != edges.len() {
        return Err(Error::InvalidArgument(
            "homogeneous scores need relation-typed edges".into(),
        ));
    }
    let v = ctx.typed(need(lp.wv, "value"), h);
    Ok(homo_scores_from(ctx, lp, v, edges))
}

fn homo_scores_from(ctx: &mut Ctx<'_>, lp: &LayerParams, v: Var, edges: &EdgeSet) -> Var {
    let a = ctx.p(need(lp.rel_a, "relation"));
    let s = ctx.tape.edge_score(
        v,
        v,
        Some((a, edges.rel.clone())),
        edges.src.clone(),
        edges.dst.clone(),
    );
    ctx.scaled(s)
}

/// `(h_j W_Q) · (h_i W_K)` for every heterogeneous edge `j → i`: the query
/// comes from the neighbor and the key from the center.
pub fn hetero_scores(ctx: &mut Ctx<'_>, lp: &LayerParams, h: Var, edges: &EdgeSet) -> Result<Var> {
    if !edges.rel.is_empty() {
        return Err(Error::InvalidArgument(
            "heterogeneous scores got relation-typed edges".into(),
        ));
    }
    Ok(hetero_scores_from(ctx, lp, h, edges))
}

fn hetero_scores_from(ctx: &mut Ctx<'_>, lp: &LayerParams, h: Var, edges: &EdgeSet) -> Var {
    let q = ctx.typed(need(lp.wq, "query"), h);
    let k = ctx.typed(need(lp.wk, "key"), h);
    let s = ctx
        .tape
        .edge_score(k, q, None, edges.src.clone(), edges.dst.clone());
    ctx.scaled(s)
}

/// Softmax of `scores` per destination, then `Σ α · values[src]`. Nodes
/// without in-edges take their row from `passthrough`. Returns the output
/// and the attention weights.
pub fn class_aggregate(
    ctx: &mut Ctx<'_>,
    scores: Var,
    values: Var,
    edges: &EdgeSet,
    passthrough: Var,
) -> (Var, Var) {
    let n = ctx.tape.value(passthrough).rows();
    let alpha = ctx.tape.segment_softmax(scores, edges.dst.clone());
    let agg = ctx
        .tape
        .edge_aggregate(alpha, values, edges.src.clone(), edges.dst.clone(), n);
    let out = ctx.tape.row_where(has_in_edges(&edges.dst, n), agg, passthrough);
    (out, alpha)
}

fn aggregate_class(
    ctx: &mut Ctx<'_>,
    stage: Stage,
    scores: Var,
    values: Var,
    edges: &EdgeSet,
    passthrough: Var,
) -> (Var, Var) {
    let (out, alpha) = class_aggregate(ctx, scores, values, edges, passthrough);
    let layer = ctx.layer;
    if let Some(t) = ctx.trace.as_deref_mut() {
        t.classes.push(ClassTrace {
            layer,
            stage,
            src: edges.src.clone(),
            dst: edges.dst.clone(),
            alpha: ctx.tape.value(alpha).data().to_vec(),
            values: ctx.tape.value(values).clone(),
            output: ctx.tape.value(out).clone(),
        });
    }
    (out, alpha)
}

/// One class step: scores from `s`, values `values`, passthrough `pass`.
/// `v_of_s` is `s W_V` when already on the tape.
#[allow(clippy::too_many_arguments)]
fn class_step(
    ctx: &mut Ctx<'_>,
    lp: &LayerParams,
    stage: Stage,
    class: RelClass,
    s: Var,
    v_of_s: Option<Var>,
    values: Var,
    pass: Var,
) -> Var {
    let edges = ctx.edges(class);
    let scores = match class {
        RelClass::Homogeneous => {
            let v = match v_of_s {
                Some(v) => v,
                None => ctx.typed(need(lp.wv, "value"), s),
            };
            homo_scores_from(ctx, lp, v, &edges)
        }
        RelClass::Heterogeneous => hetero_scores_from(ctx, lp, s, &edges),
    };
    aggregate_class(ctx, stage, scores, values, &edges, pass).0
}

/// Single-class layer (HO or HE).
pub fn single_class_layer(ctx: &mut Ctx<'_>, lp: &LayerParams, h: Var, class: RelClass) -> Var {
    let v0 = ctx.typed(need(lp.wv, "value"), h);
    class_step(ctx, lp, Stage::Phase1(class), class, h, Some(v0), v0, h)
}

/// `Linear([h^ho; h^he])`.
pub fn sync_layer(ctx: &mut Ctx<'_>, lp: &LayerParams, h: Var) -> Var {
    let (w, b) = need(lp.sync, "sync");
    let v0 = ctx.typed(need(lp.wv, "value"), h);
    let ho = class_step(ctx, lp, Stage::Phase1(RelClass::Homogeneous), RelClass::Homogeneous, h, Some(v0), v0, h);
    let he = class_step(ctx, lp, Stage::Phase1(RelClass::Heterogeneous), RelClass::Heterogeneous, h, Some(v0), v0, h);
    let cat = ctx.tape.hcat(&[ho, he]);
    let (w, b) = (ctx.p(w), ctx.p(b));
    let out = ctx.tape.matmul(cat, w);
    ctx.tape.add_row(out, b)
}

/// Phase 2 of a phased layer given phase-1 output `p1`.
fn second_phase(
    ctx: &mut Ctx<'_>,
    lp: &LayerParams,
    v0: Var,
    p1: Var,
    order: PhaseOrder,
    non_invasive: bool,
) -> Var {
    let (_, second) = order.classes();
    let wv = need(lp.wv, "value");
    let v1 = if non_invasive && second == RelClass::Heterogeneous {
        None
    } else {
        Some(ctx.typed(wv, p1))
    };
    let values = if non_invasive { v0 } else { v1.expect("phase-1 values") };
    class_step(ctx, lp, Stage::Phase2(order), second, p1, v1, values, p1)
}

/// Two-phase aggregation in `order`. Phase 1 aggregates the first class from
/// `h`; phase 2 scores the second class on phase-1 outputs and aggregates
/// values of `h` (non-invasive) or of the phase-1 outputs.
pub fn phased_layer(
    ctx: &mut Ctx<'_>,
    lp: &LayerParams,
    h: Var,
    order: PhaseOrder,
    non_invasive: bool,
) -> Var {
    let (first, _) = order.classes();
    let v0 = ctx.typed(need(lp.wv, "value"), h);
    if let Some(t) = ctx.trace.as_deref_mut() {
        t.values0.push(ctx.tape.value(v0).clone());
    }
    let p1 = class_step(ctx, lp, Stage::Phase1(first), first, h, Some(v0), v0, h);
    second_phase(ctx, lp, v0, p1, order, non_invasive)
}

/// Gated mix `β_0 h^hohe + β_1 h^heho` of both non-invasive orders with
/// `β = softmax(MLP([h^hohe; h^heho]))`.
pub fn han_layer(ctx: &mut Ctx<'_>, lp: &LayerParams, h: Var) -> Var {
    let g = need(lp.gate, "gate");
    let v0 = ctx.typed(need(lp.wv, "value"), h);
    if let Some(t) = ctx.trace.as_deref_mut() {
        t.values0.push(ctx.tape.value(v0).clone());
    }
    let ho = class_step(ctx, lp, Stage::Phase1(RelClass::Homogeneous), RelClass::Homogeneous, h, Some(v0), v0, h);
    let he = class_step(ctx, lp, Stage::Phase1(RelClass::Heterogeneous), RelClass::Heterogeneous, h, Some(v0), v0, h);
    let hohe = second_phase(ctx, lp, v0, ho, PhaseOrder::HoHe, true);
    let heho = second_phase(ctx, lp, v0, he, PhaseOrder::HeHo, true);
    let beta = gate(ctx, g, hohe, heho);
    let b0 = ctx.tape.col_slice(beta, 0, 1);
    let b1 = ctx.tape.col_slice(beta, 1, 1);
    let x = ctx.tape.mul_col(hohe, b0);
    let y = ctx.tape.mul_col(heho, b1);
    let out = ctx.tape.add(x, y);
    if let Some(t) = ctx.trace.as_deref_mut() {
        t.beta.push(ctx.tape.value(beta).clone());
        t.hohe.push(ctx.tape.value(hohe).clone());
        t.heho.push(ctx.tape.value(heho).clone());
    }
    out
}

fn gate(ctx: &mut Ctx<'_>, g: GateParams, hohe: Var, heho: Var) -> Var {
    let x = ctx.tape.hcat(&[hohe, heho]);
    let (w1, b1, w2, b2) = (ctx.p(g.w1), ctx.p(g.b1), ctx.p(g.w2), ctx.p(g.b2));
    let z = ctx.tape.matmul(x, w1);
    let z = ctx.tape.add_row(z, b1);
    let z = ctx.tape.leaky_relu(z, LEAKY_SLOPE);
    let logits = ctx.tape.matmul(z, w2);
    let logits = ctx.tape.add_row(logits, b2);
    ctx.tape.row_softmax(logits)
}

/// One layer of `aggregator`.
pub fn layer(ctx: &mut Ctx<'_>, aggregator: Aggregator, lp: &LayerParams, h: Var) -> Var {
    match aggregator {
        Aggregator::Gcn => gcn_layer(ctx, lp, h),
        Aggregator::Gat => gat_layer(ctx, lp, h),
        Aggregator::Ho => single_class_layer(ctx, lp, h, RelClass::Homogeneous),
        Aggregator::He => single_class_layer(ctx, lp, h, RelClass::Heterogeneous),
        Aggregator::Sync => sync_layer(ctx, lp, h),
        Aggregator::Han => han_layer(ctx, lp, h),
        a => {
            let (order, ni) = a.phased().expect("phased aggregator");
            phased_layer(ctx, lp, h, order, ni)
        }
    }
}

/// Runs every layer of `pp` from `h0`. With `dropout = Some((p, rng))` each
/// layer output is masked with inverted dropout of rate `p`.
pub fn propagate(
    ctx: &mut Ctx<'_>,
    pp: &PropParams,
    h0: Var,
    mut dropout: Option<(f64, &mut ChaCha8Rng)>,
) -> Var {
    let mut h = h0;
    for (l, lp) in pp.layers.iter().enumerate() {
        ctx.layer = l;
        h = layer(ctx, pp.aggregator, lp, h);
        if let Some((p, rng)) = dropout.as_mut() {
            if *p > 0.0 {
                let (n, d) = ctx.tape.value(h).shape();
                let keep = 1.0 / (1.0 - *p);
                let mask = (0..n * d)
                    .map(|_| if rng.gen::<f64>() < *p { 0.0 } else { keep })
                    .collect();
                let m = ctx.tape.constant(Matrix::from_vec(n, d, mask));
                h = ctx.tape.mul(h, m);
            }
        }
    }
    h
}

/// Names of parameters a layer stack reads, for diagnostics.
pub fn param_names(store: &ParamStore, pp: &PropParams) -> Vec<String> {
    let mut out = Vec::new();
    for lp in &pp.layers {
        let mut ids: Vec<ParamId> = Vec::new();
        ids.extend(lp.w);
        ids.extend(lp.gat_a);
        for t in [lp.wq, lp.wk, lp.wv].into_iter().flatten() {
            ids.extend(t);
        }
        ids.extend(lp.rel_a);
        if let Some(g) = lp.gate {
            ids.extend([g.w1, g.b1, g.w2, g.b2]);
        }
        if let Some((w, b)) = lp.sync {
            ids.extend([w, b]);
        }
        out.extend(ids.into_iter().map(|i| String::from(store.name(i))));
    }
    out
}
