//! Straight-line reference implementations used by the oracle, gradient
//! and acceptance suites. Everything here works on plain nested vectors,
//! one graph at a time, with no tape.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use mmsr_core::autodiff::Tape;
use mmsr_core::dataset::{Channel, ItemId};
use mmsr_core::model::{GraphModel, ModelConfig, Recommender};
use mmsr_core::msgraph::{Edge, MsGraph, NodeKey, NodeType, Relation};
use mmsr_core::optim::ParamStore;
use mmsr_core::propagation::{self, Aggregator, Ctx, GateParams, LayerParams, PropTrace};
use mmsr_core::training::batch_loss;
use mmsr_core::Matrix;
use mmsr_core::quantizer::ModalityCodebook;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Rows = Vec<Vec<f64>>;

pub const SLOPE: f64 = 0.01;

pub fn leaky(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        SLOPE * x
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn softmax(xs: &[f64]) -> Vec<f64> {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = xs.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

/// `x · W` for a row vector.
pub fn vecmat(x: &[f64], w: &Rows) -> Vec<f64> {
    let cols = w[0].len();
    let mut out = vec![0.0; cols];
    for (xi, row) in x.iter().zip(w) {
        for (o, wij) in out.iter_mut().zip(row) {
            *o += xi * wij;
        }
    }
    out
}

pub fn mat(store: &ParamStore, name: &str) -> Rows {
    let m = store.get(store.id(name).unwrap_or_else(|| panic!("no parameter {name}")));
    (0..m.rows()).map(|r| m.row(r).to_vec()).collect()
}

pub fn max_abs_diff(a: &Rows, b: &Rows) -> f64 {
    assert_eq!(a.len(), b.len(), "row counts differ");
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| {
            assert_eq!(x.len(), y.len());
            x.iter().zip(y).map(|(p, q)| (p - q).abs())
        })
        .fold(0.0, f64::max)
}

pub fn rows_of(m: &mmsr_core::Matrix) -> Rows {
    (0..m.rows()).map(|r| m.row(r).to_vec()).collect()
}

/// Per-type parameter triple read by name.
pub struct Typed(pub [Rows; 3]);

impl Typed {
    pub fn read(store: &ParamStore, ids: [mmsr_core::autodiff::ParamId; 3]) -> Self {
        Typed(ids.map(|id| rows_of(store.get(id))))
    }

    pub fn apply(&self, h: &Rows, types: &[NodeType]) -> Rows {
        h.iter()
            .zip(types)
            .map(|(x, t)| vecmat(x, &self.0[t.index()]))
            .collect()
    }
}

/// Plain copy of one layer's parameters.
pub struct LayerOracle {
    pub w: Option<Rows>,
    pub gat_a: Option<Rows>,
    pub wq: Option<Typed>,
    pub wk: Option<Typed>,
    pub wv: Option<Typed>,
    pub rel_a: Option<Rows>,
    pub gate: Option<[Rows; 4]>,
    pub sync: Option<(Rows, Rows)>,
}

impl LayerOracle {
    pub fn read(store: &ParamStore, lp: &LayerParams) -> Self {
        let m = |id: mmsr_core::autodiff::ParamId| rows_of(store.get(id));
        Self {
            w: lp.w.map(m),
            gat_a: lp.gat_a.map(m),
            wq: lp.wq.map(|ids| Typed::read(store, ids)),
            wk: lp.wk.map(|ids| Typed::read(store, ids)),
            wv: lp.wv.map(|ids| Typed::read(store, ids)),
            rel_a: lp.rel_a.map(m),
            gate: lp.gate.map(|GateParams { w1, b1, w2, b2 }| [m(w1), m(b1), m(w2), m(b2)]),
            sync: lp.sync.map(|(w, b)| (m(w), m(b))),
        }
    }
}

/// Relation row of `a_r`.
pub fn rel_row(r: Relation) -> usize {
    match r {
        Relation::TransitionIn => 0,
        Relation::TransitionOut => 1,
        Relation::BiDirectional => 2,
        Relation::SelfLoop => 3,
        Relation::CrossModal => panic!("cross-modal edge has no relation vector"),
    }
}

/// A graph reduced to what the layers need.
pub struct GraphView {
    pub types: Vec<NodeType>,
    pub edges: Vec<Edge>,
}

impl GraphView {
    pub fn of(g: &MsGraph) -> Self {
        Self {
            types: g.nodes.iter().map(|n| n.key.ntype).collect(),
            edges: g.edges.clone(),
        }
    }

    pub fn n(&self) -> usize {
        self.types.len()
    }

    pub fn homo(&self) -> Vec<Edge> {
        self.edges.iter().copied().filter(|e| e.rel.is_homogeneous()).collect()
    }

    pub fn hetero(&self) -> Vec<Edge> {
        self.edges.iter().copied().filter(|e| !e.rel.is_homogeneous()).collect()
    }
}

/// `a_r · (v_i ⊙ v_j)` per edge, with `v = s W_V`.
pub fn homo_scores(g: &GraphView, lo: &LayerOracle, s: &Rows, edges: &[Edge]) -> Vec<f64> {
    let v = lo.wv.as_ref().unwrap().apply(s, &g.types);
    let a = lo.rel_a.as_ref().unwrap();
    edges
        .iter()
        .map(|e| {
            let ar = &a[rel_row(e.rel)];
            (0..ar.len()).map(|k| ar[k] * v[e.dst][k] * v[e.src][k]).sum()
        })
        .collect()
}

/// `(s_j W_Q) · (s_i W_K)` per edge `j → i`.
pub fn hetero_scores(g: &GraphView, lo: &LayerOracle, s: &Rows, edges: &[Edge]) -> Vec<f64> {
    let q = lo.wq.as_ref().unwrap().apply(s, &g.types);
    let k = lo.wk.as_ref().unwrap().apply(s, &g.types);
    edges.iter().map(|e| dot(&q[e.src], &k[e.dst])).collect()
}

/// Per-destination softmax of `scores`, weighted sum of `values[src]`;
/// nodes without in-edges copy `pass`. Also returns the weights.
pub fn class_aggregate(edges: &[Edge], scores: &[f64], values: &Rows, pass: &Rows) -> (Rows, Vec<f64>) {
    let n = pass.len();
    let d = values[0].len();
    let mut alpha = vec![0.0; edges.len()];
    let mut out = pass.clone();
    for i in 0..n {
        let ids: Vec<usize> = (0..edges.len()).filter(|&e| edges[e].dst == i).collect();
        if ids.is_empty() {
            continue;
        }
        let w = softmax(&ids.iter().map(|&e| scores[e]).collect::<Vec<_>>());
        let mut acc = vec![0.0; d];
        for (&e, &a) in ids.iter().zip(&w) {
            alpha[e] = a;
            for k in 0..d {
                acc[k] += a * values[edges[e].src][k];
            }
        }
        out[i] = acc;
    }
    (out, alpha)
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Class {
    Ho,
    He,
}

fn class_edges(g: &GraphView, c: Class) -> Vec<Edge> {
    match c {
        Class::Ho => g.homo(),
        Class::He => g.hetero(),
    }
}

fn class_step(g: &GraphView, lo: &LayerOracle, c: Class, s: &Rows, values: &Rows, pass: &Rows) -> Rows {
    let edges = class_edges(g, c);
    let scores = match c {
        Class::Ho => homo_scores(g, lo, s, &edges),
        Class::He => hetero_scores(g, lo, s, &edges),
    };
    class_aggregate(&edges, &scores, values, pass).0
}

/// Two-phase layer; `first` is the class aggregated in phase 1.
pub fn phased(g: &GraphView, lo: &LayerOracle, h: &Rows, first: Class, non_invasive: bool) -> Rows {
    let second = if first == Class::Ho { Class::He } else { Class::Ho };
    let v0 = lo.wv.as_ref().unwrap().apply(h, &g.types);
    let p1 = class_step(g, lo, first, h, &v0, h);
    let values = if non_invasive {
        v0
    } else {
        lo.wv.as_ref().unwrap().apply(&p1, &g.types)
    };
    class_step(g, lo, second, &p1, &values, &p1)
}

pub fn single_class(g: &GraphView, lo: &LayerOracle, h: &Rows, c: Class) -> Rows {
    let v0 = lo.wv.as_ref().unwrap().apply(h, &g.types);
    class_step(g, lo, c, h, &v0, h)
}

pub fn sync(g: &GraphView, lo: &LayerOracle, h: &Rows) -> Rows {
    let v0 = lo.wv.as_ref().unwrap().apply(h, &g.types);
    let ho = class_step(g, lo, Class::Ho, h, &v0, h);
    let he = class_step(g, lo, Class::He, h, &v0, h);
    let (w, b) = lo.sync.as_ref().unwrap();
    ho.iter()
        .zip(&he)
        .map(|(x, y)| {
            let cat: Vec<f64> = x.iter().chain(y).copied().collect();
            vecmat(&cat, w).iter().zip(&b[0]).map(|(p, q)| p + q).collect()
        })
        .collect()
}

/// Gate weights `β` and the gated output.
pub fn han(g: &GraphView, lo: &LayerOracle, h: &Rows) -> (Rows, Rows) {
    let hohe = phased(g, lo, h, Class::Ho, true);
    let heho = phased(g, lo, h, Class::He, true);
    let [w1, b1, w2, b2] = lo.gate.as_ref().unwrap();
    let mut beta = Vec::new();
    let mut out = Vec::new();
    for (x, y) in hohe.iter().zip(&heho) {
        let cat: Vec<f64> = x.iter().chain(y).copied().collect();
        let z: Vec<f64> = vecmat(&cat, w1).iter().zip(&b1[0]).map(|(p, q)| leaky(p + q)).collect();
        let logits: Vec<f64> = vecmat(&z, w2).iter().zip(&b2[0]).map(|(p, q)| p + q).collect();
        let b = softmax(&logits);
        out.push(x.iter().zip(y).map(|(p, q)| b[0] * p + b[1] * q).collect());
        beta.push(b);
    }
    (out, beta)
}

/// Dense `σ(D^{-1/2} A D^{-1/2} H W)` with `A[i][j] = 1` for an edge `j → i`.
pub fn gcn_dense(g: &GraphView, w: &Rows, h: &Rows) -> Rows {
    let n = g.n();
    let mut a = vec![vec![0.0; n]; n];
    for e in &g.edges {
        a[e.dst][e.src] = 1.0;
    }
    let deg: Vec<f64> = a.iter().map(|r| r.iter().sum()).collect();
    let hw: Rows = h.iter().map(|x| vecmat(x, w)).collect();
    (0..n)
        .map(|i| {
            let mut acc = vec![0.0; w[0].len()];
            for j in 0..n {
                let c = a[i][j] / (deg[i] * deg[j]).sqrt();
                if c != 0.0 {
                    for k in 0..acc.len() {
                        acc[k] += c * hw[j][k];
                    }
                }
            }
            acc.into_iter().map(leaky).collect()
        })
        .collect()
}

/// Literal GAT: `e_ij = a_cᵀ W h_i + a_nᵀ W h_j`, softmax of LeakyReLU(e)
/// over in-neighbors, weighted sum of `W h_j`.
pub fn gat(g: &GraphView, w: &Rows, a: &Rows, h: &Rows) -> Rows {
    let hw: Rows = h.iter().map(|x| vecmat(x, w)).collect();
    let a_c: Vec<f64> = a.iter().map(|r| r[0]).collect();
    let a_n: Vec<f64> = a.iter().map(|r| r[1]).collect();
    let scores: Vec<f64> = g
        .edges
        .iter()
        .map(|e| leaky(dot(&a_c, &hw[e.dst]) + dot(&a_n, &hw[e.src])))
        .collect();
    class_aggregate(&g.edges, &scores, &hw, &hw).0
}

pub fn layer(g: &GraphView, agg: Aggregator, lo: &LayerOracle, h: &Rows) -> Rows {
    match agg {
        Aggregator::Gcn => gcn_dense(g, lo.w.as_ref().unwrap(), h),
        Aggregator::Gat => gat(g, lo.w.as_ref().unwrap(), lo.gat_a.as_ref().unwrap(), h),
        Aggregator::Ho => single_class(g, lo, h, Class::Ho),
        Aggregator::He => single_class(g, lo, h, Class::He),
        Aggregator::Sync => sync(g, lo, h),
        Aggregator::Han => han(g, lo, h).0,
        Aggregator::Hohe => phased(g, lo, h, Class::Ho, false),
        Aggregator::Heho => phased(g, lo, h, Class::He, false),
        Aggregator::NiHohe => phased(g, lo, h, Class::Ho, true),
        Aggregator::NiHeho => phased(g, lo, h, Class::He, true),
    }
}

/// `W_merge [e_n; e_ty; e_po]` for every node of `g`.
pub fn node_inputs(model: &GraphModel, g: &MsGraph) -> Rows {
    let s = &model.store;
    let item = mat(s, "item_table");
    let img = mat(s, "image_code_table");
    let txt = mat(s, "text_code_table");
    let ty = mat(s, "type_table");
    let pos = mat(s, "position_table");
    let merge = mat(s, "merge_weight");
    let d = model.cfg.d;
    g.nodes
        .iter()
        .map(|n| {
            let e_n = match n.key.ntype {
                NodeType::Item => item[model.item_row(ItemId(n.key.id)).unwrap()].clone(),
                NodeType::ImageCode => img[n.key.id as usize].clone(),
                NodeType::TextCode => txt[n.key.id as usize].clone(),
            };
            let e_ty = if model.cfg.use_type {
                ty[n.key.ntype.index()].clone()
            } else {
                vec![0.0; d]
            };
            let mut e_po = vec![0.0; d];
            if model.cfg.use_position {
                for &p in &n.positions {
                    for k in 0..d {
                        e_po[k] += pos[p as usize - 1][k] / n.positions.len() as f64;
                    }
                }
            }
            let cat: Vec<f64> = e_n.into_iter().chain(e_ty).chain(e_po).collect();
            vecmat(&cat, &merge)
        })
        .collect()
}

/// Final node states of one graph.
pub fn node_states(model: &GraphModel, g: &MsGraph) -> Rows {
    let view = GraphView::of(g);
    let mut h = node_inputs(model, g);
    for lp in &model.prop.layers {
        let lo = LayerOracle::read(&model.store, lp);
        h = layer(&view, model.cfg.aggregator, &lo, &h);
    }
    h
}

/// Brute-force edge set: transitions per channel chain, relabelled
/// bi-directional pairs, self-loops and cross-modal pairs per position.
pub fn edge_oracle(
    prefix: &[ItemId],
    codes: &dyn Fn(Channel, ItemId) -> Option<Vec<u32>>,
    image_text: bool,
) -> BTreeSet<(NodeKey, Relation, NodeKey)> {
    let keys_at = |item: ItemId, ch: usize| -> Vec<NodeKey> {
        match ch {
            0 => vec![NodeKey::item(item)],
            c => {
                let channel = Channel::ALL[c - 1];
                codes(channel, item)
                    .unwrap_or_default()
                    .into_iter()
                    .map(|k| NodeKey::code(channel, k))
                    .collect()
            }
        }
    };
    let mut directed: BTreeSet<(NodeKey, NodeKey)> = BTreeSet::new();
    for ch in 0..3 {
        let chain: Vec<Vec<NodeKey>> = prefix
            .iter()
            .map(|&i| keys_at(i, ch))
            .filter(|v| !v.is_empty())
            .collect();
        for w in chain.windows(2) {
            for &a in &w[0] {
                for &b in &w[1] {
                    if a != b {
                        directed.insert((a, b));
                    }
                }
            }
        }
    }
    let mut out = BTreeSet::new();
    for &(a, b) in &directed {
        if directed.contains(&(b, a)) {
            out.insert((a, Relation::BiDirectional, b));
        } else {
            out.insert((a, Relation::TransitionOut, b));
            out.insert((b, Relation::TransitionIn, a));
        }
    }
    let mut all_nodes = BTreeSet::new();
    for &i in prefix {
        let per: Vec<Vec<NodeKey>> = (0..3).map(|c| keys_at(i, c)).collect();
        for v in &per {
            all_nodes.extend(v.iter().copied());
        }
        let mut link = |xs: &[NodeKey], ys: &[NodeKey]| {
            for &x in xs {
                for &y in ys {
                    out.insert((x, Relation::CrossModal, y));
                    out.insert((y, Relation::CrossModal, x));
                }
            }
        };
        link(&per[0], &per[1]);
        link(&per[0], &per[2]);
        if image_text {
            link(&per[1], &per[2]);
        }
    }
    for n in all_nodes {
        out.insert((n, Relation::SelfLoop, n));
    }
    out
}

/// The graph's edges as key triples.
pub fn edge_keys(g: &MsGraph) -> BTreeSet<(NodeKey, Relation, NodeKey)> {
    g.edges
        .iter()
        .map(|e| (g.nodes[e.src].key, e.rel, g.nodes[e.dst].key))
        .collect()
}

/// Rank by full descending sort; ties placed ahead of the target.
pub fn sort_rank(logits: &[f64], target: usize) -> usize {
    let mut order: Vec<usize> = (0..logits.len()).collect();
    order.sort_by(|&a, &b| {
        logits[b]
            .partial_cmp(&logits[a])
            .unwrap()
            .then_with(|| (a == target).cmp(&(b == target)))
    });
    order.iter().position(|&i| i == target).unwrap() + 1
}

/// Random codebook over `items` with `c` centers of width `d` and `k`
/// distinct codes per item; items are dropped with probability `p_missing`.
pub fn random_codebook(
    rng: &mut ChaCha8Rng,
    channel: Channel,
    items: &[ItemId],
    c: usize,
    k: usize,
    d: usize,
    p_missing: f64,
) -> ModalityCodebook {
    let centers = (0..c)
        .map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    let mut assignments = BTreeMap::new();
    for &i in items {
        if rng.gen::<f64>() < p_missing {
            continue;
        }
        let mut codes: Vec<u32> = Vec::new();
        while codes.len() < k {
            let x = rng.gen_range(0..c as u32);
            if !codes.contains(&x) {
                codes.push(x);
            }
        }
        assignments.insert(i, codes);
    }
    ModalityCodebook {
        channel,
        centers,
        k,
        assignments,
    }
}

/// A small graph model with random codebooks and a random prefix.
pub struct Fixture {
    pub model: GraphModel,
    pub prefix: Vec<ItemId>,
}

pub fn fixture(agg: Aggregator, seed: u64, n_items: usize, len: usize, d: usize, layers: usize) -> Fixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let catalog: Vec<ItemId> = (0..n_items as u32).map(ItemId).collect();
    let image = random_codebook(&mut rng, Channel::Image, &catalog, 3, 1, d, 0.2);
    let text = random_codebook(&mut rng, Channel::Text, &catalog, 3, 1, d, 0.2);
    let cfg = ModelConfig {
        d,
        layers,
        aggregator: agg,
        seed,
        m_max: 10,
        l2: 0.0,
        ..ModelConfig::default()
    };
    let mut model = GraphModel::new(cfg, catalog, Some(image), Some(text)).unwrap();
    // Spread parameters beyond the init range so every term matters.
    let ids: Vec<_> = model.store.ids().collect();
    for id in ids {
        for x in model.store.get_mut(id).data_mut() {
            *x += rng.gen_range(-0.5..0.5);
        }
    }
    let prefix = (0..len).map(|_| ItemId(rng.gen_range(0..n_items as u32))).collect();
    Fixture { model, prefix }
}

pub fn random_rows(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Rows {
    (0..n).map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect()
}

/// First layer of `model` applied to explicit states `h`.
pub fn run_layer(model: &GraphModel, g: &MsGraph, h: &Rows) -> (Rows, PropTrace) {
    let batch = model.batch(&[g]);
    let mut tape = Tape::new();
    let params = model.store.on_tape(&mut tape);
    let hv = tape.constant(Matrix::from_rows(h));
    let mut trace = PropTrace::default();
    let out = {
        let mut ctx = Ctx::new(&mut tape, &params, &batch);
        ctx.trace = Some(&mut trace);
        propagation::layer(&mut ctx, model.cfg.aggregator, &model.prop.layers[0], hv)
    };
    (rows_of(tape.value(out)), trace)
}

pub const FD_EPS: f64 = 1e-5;
/// Central differences carry ~1e-11 of round-off; tensors whose whole
/// gradient is below this norm are compared against it instead.
pub const FD_SCALE_FLOOR: f64 = 1e-6;

fn loss_value<R: Recommender>(model: &R, inputs: &[&R::Input], targets: &[usize]) -> f64 {
    let mut tape = Tape::new();
    let params = model.store().on_tape(&mut tape);
    let l = batch_loss(model, &mut tape, &params, inputs, targets.to_vec().into(), None);
    tape.value(l).item()
}

/// Per-tensor relative error `max|g − g_fd| / (‖g‖ + ‖g_fd‖)` of the
/// analytic gradient of the batch loss against central differences.
pub fn fd_errors<R: Recommender>(model: &mut R, prefixes: &[Vec<ItemId>], targets: &[usize]) -> Vec<(String, f64)> {
    let inputs: Vec<R::Input> = prefixes.iter().map(|p| model.prepare(p).unwrap()).collect();
    let refs: Vec<&R::Input> = inputs.iter().collect();
    let mut tape = Tape::new();
    let params = model.store().on_tape(&mut tape);
    let l = batch_loss(&*model, &mut tape, &params, &refs, targets.to_vec().into(), None);
    let grads = tape.backward(l);
    let ids: Vec<_> = model.store().ids().collect();
    let mut out = Vec::new();
    for id in ids {
        let (r, c) = model.store().get(id).shape();
        let analytic = grads.param(id).unwrap_or_else(|| Matrix::zeros(r, c));
        let mut fd = Matrix::zeros(r, c);
        for k in 0..r * c {
            let x = model.store().get(id).data()[k];
            model.store_mut().get_mut(id).data_mut()[k] = x + FD_EPS;
            let up = loss_value(&*model, &refs, targets);
            model.store_mut().get_mut(id).data_mut()[k] = x - FD_EPS;
            let down = loss_value(&*model, &refs, targets);
            model.store_mut().get_mut(id).data_mut()[k] = x;
            fd.data_mut()[k] = (up - down) / (2.0 * FD_EPS);
        }
        let diff = analytic.max_abs_diff(&fd);
        let scale = analytic.sum_sq().sqrt() + fd.sum_sq().sqrt();
        out.push((model.store().name(id).to_string(), diff / scale.max(FD_SCALE_FLOOR)));
    }
    out
}

/// Two random length-4 prefixes and targets over `n_items`.
pub fn fd_batch(rng: &mut ChaCha8Rng, n_items: u32) -> (Vec<Vec<ItemId>>, Vec<usize>) {
    let p = (0..2)
        .map(|_| (0..4).map(|_| ItemId(rng.gen_range(0..n_items))).collect())
        .collect();
    let t = (0..2).map(|_| rng.gen_range(0..n_items as usize)).collect();
    (p, t)
}
