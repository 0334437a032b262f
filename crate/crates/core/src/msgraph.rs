//! Modality-enriched sequence graphs.
//!
//! One graph per user prefix. Item nodes are deduplicated over repeated
//! items; every item position also contributes one node per assigned
//! modality code in each present channel, shared across positions that map
//! to the same code. Homogeneous edges link adjacent positions within a
//! channel, heterogeneous (cross-modal) edges link the nodes of one item
//! position across channels, and every node carries a self-loop.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::rc::Rc;
use alloc::vec;
use alloc::vec::Vec;
use core::cell::Cell;

use serde::{Deserialize, Serialize};

use crate::autodiff::Index;
use crate::dataset::{Channel, ItemId};
use crate::quantizer::ModalityCodebook;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum NodeType {
    Item,
    ImageCode,
    TextCode,
}

impl NodeType {
    pub const ALL: [NodeType; 3] = [NodeType::Item, NodeType::ImageCode, NodeType::TextCode];

    pub fn index(self) -> usize {
        match self {
            NodeType::Item => 0,
            NodeType::ImageCode => 1,
            NodeType::TextCode => 2,
        }
    }

    pub fn of_channel(c: Channel) -> Self {
        match c {
            Channel::Image => NodeType::ImageCode,
            Channel::Text => NodeType::TextCode,
        }
    }
}

/// `(type, id)`: an item identifier for item nodes, a code index otherwise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeKey {
    pub ntype: NodeType,
    pub id: u32,
}

impl NodeKey {
    pub fn item(i: ItemId) -> Self {
        Self {
            ntype: NodeType::Item,
            id: i.0,
        }
    }

    pub fn code(c: Channel, code: u32) -> Self {
        Self {
            ntype: NodeType::of_channel(c),
            id: code,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Relation {
    TransitionIn,
    TransitionOut,
    BiDirectional,
    SelfLoop,
    CrossModal,
}

impl Relation {
    pub const HOMOGENEOUS: [Relation; 4] = [
        Relation::TransitionIn,
        Relation::TransitionOut,
        Relation::BiDirectional,
        Relation::SelfLoop,
    ];

    pub fn is_homogeneous(self) -> bool {
        self != Relation::CrossModal
    }

    /// Row of the per-relation attention vectors; `None` for cross-modal.
    pub fn homo_index(self) -> Option<usize> {
        match self {
            Relation::TransitionIn => Some(0),
            Relation::TransitionOut => Some(1),
            Relation::BiDirectional => Some(2),
            Relation::SelfLoop => Some(3),
            Relation::CrossModal => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphNode {
    pub key: NodeKey,
    /// 1-based sequence positions, ascending.
    pub positions: Vec<u32>,
}

/// Directed edge; messages flow from `src` to `dst`. `src` and `dst` index
/// into [`MsGraph::nodes`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Edge {
    pub src: usize,
    pub rel: Relation,
    pub dst: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MsGraph {
    pub nodes: Vec<GraphNode>,
    /// Sorted by `(dst, src, rel)`, no duplicates.
    pub edges: Vec<Edge>,
    /// Index of the item node holding the last position.
    pub last_item: usize,
    pub len: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphOptions {
    /// Add image↔text cross-modal edges in addition to item↔code edges.
    pub image_text_edges: bool,
}

impl Default for GraphOptions {
    fn default() -> Self {
        Self {
            image_text_edges: true,
        }
    }
}

/// Per-channel code lookup. A missing codebook, or an item absent from it,
/// means that modality is missing.
#[derive(Debug, Clone, Copy, Default)]
pub struct CodeLookup<'a> {
    pub image: Option<&'a ModalityCodebook>,
    pub text: Option<&'a ModalityCodebook>,
}

impl<'a> CodeLookup<'a> {
    pub fn codes(&self, c: Channel, item: ItemId) -> Option<&'a [u32]> {
        let book = match c {
            Channel::Image => self.image,
            Channel::Text => self.text,
        }?;
        book.codes(item)
    }
}

pub fn build_graph(prefix: &[ItemId], codes: &CodeLookup<'_>, opts: &GraphOptions) -> Result<MsGraph> {
    if prefix.is_empty() {
        return Err(Error::InvalidArgument("cannot build a graph from an empty prefix".into()));
    }
    let mut index: BTreeMap<NodeKey, usize> = BTreeMap::new();
    let mut nodes: Vec<GraphNode> = Vec::new();
    let mut intern = |key: NodeKey, pos: u32, nodes: &mut Vec<GraphNode>| -> usize {
        let i = *index.entry(key).or_insert_with(|| {
            nodes.push(GraphNode {
                key,
                positions: Vec::new(),
            });
            nodes.len() - 1
        });
        if nodes[i].positions.last() != Some(&pos) {
            nodes[i].positions.push(pos);
        }
        i
    };

    // at[p] = node lists per channel (item, image, text) for position p.
    let mut at: Vec<[Vec<usize>; 3]> = Vec::with_capacity(prefix.len());
    for (p, &item) in prefix.iter().enumerate() {
        let pos = p as u32 + 1;
        let mut slot: [Vec<usize>; 3] = Default::default();
        slot[0].push(intern(NodeKey::item(item), pos, &mut nodes));
        for c in Channel::ALL {
            if let Some(list) = codes.codes(c, item) {
                for &code in list {
                    slot[1 + c.index()].push(intern(NodeKey::code(c, code), pos, &mut nodes));
                }
            }
        }
        at.push(slot);
    }

    let mut edges: BTreeSet<Edge> = BTreeSet::new();

    // Homogeneous transitions; a channel's chain skips positions where it is missing.
    let mut precedes: BTreeSet<(usize, usize)> = BTreeSet::new();
    for ch in 0..3 {
        let mut prev: Option<&Vec<usize>> = None;
        for slot in &at {
            let cur = &slot[ch];
            if cur.is_empty() {
                continue;
            }
            if let Some(prev) = prev {
                for &a in prev {
                    for &b in cur {
                        if a != b {
                            precedes.insert((a, b));
                        }
                    }
                }
            }
            prev = Some(cur);
        }
    }
    for &(a, b) in &precedes {
        if precedes.contains(&(b, a)) {
            edges.insert(Edge {
                src: a,
                rel: Relation::BiDirectional,
                dst: b,
            });
        } else {
            edges.insert(Edge {
                src: a,
                rel: Relation::TransitionOut,
                dst: b,
            });
            edges.insert(Edge {
                src: b,
                rel: Relation::TransitionIn,
                dst: a,
            });
        }
    }

    for i in 0..nodes.len() {
        edges.insert(Edge {
            src: i,
            rel: Relation::SelfLoop,
            dst: i,
        });
    }

    // Heterogeneous: nodes of one position across channels.
    for slot in &at {
        let mut pairs = |xs: &[usize], ys: &[usize]| {
            for &x in xs {
                for &y in ys {
                    edges.insert(Edge {
                        src: x,
                        rel: Relation::CrossModal,
                        dst: y,
                    });
                    edges.insert(Edge {
                        src: y,
                        rel: Relation::CrossModal,
                        dst: x,
                    });
                }
            }
        };
        pairs(&slot[0], &slot[1]);
        pairs(&slot[0], &slot[2]);
        if opts.image_text_edges {
            pairs(&slot[1], &slot[2]);
        }
    }

    let mut edges: Vec<Edge> = edges.into_iter().collect();
    edges.sort_by_key(|e| (e.dst, e.src, e.rel));
    let last_item = at[prefix.len() - 1][0][0];
    Ok(MsGraph {
        nodes,
        edges,
        last_item,
        len: prefix.len(),
    })
}

/// In-neighbors of one node split by relation class.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NeighborSets {
    /// `(neighbor, relation)`, including the node's own self-loop.
    pub homogeneous: Vec<(usize, Relation)>,
    pub heterogeneous: Vec<usize>,
}

impl MsGraph {
    pub fn node_index(&self, key: NodeKey) -> Option<usize> {
        self.nodes.iter().position(|n| n.key == key)
    }

    pub fn neighbor_sets(&self, key: NodeKey) -> Result<NeighborSets> {
        let i = self
            .node_index(key)
            .ok_or_else(|| Error::UnknownNode(format!("{key:?}")))?;
        let mut out = NeighborSets {
            homogeneous: Vec::new(),
            heterogeneous: Vec::new(),
        };
        for e in self.edges.iter().filter(|e| e.dst == i) {
            if e.rel.is_homogeneous() {
                out.homogeneous.push((e.src, e.rel));
            } else {
                out.heterogeneous.push(e.src);
            }
        }
        Ok(out)
    }

    pub fn count_type(&self, t: NodeType) -> usize {
        self.nodes.iter().filter(|n| n.key.ntype == t).count()
    }

    pub fn dump(&self) -> GraphDump {
        GraphDump {
            nodes: self.nodes.clone(),
            edges: self
                .edges
                .iter()
                .map(|e| DumpEdge {
                    src: self.nodes[e.src].key,
                    rel: e.rel,
                    dst: self.nodes[e.dst].key,
                })
                .collect(),
            last_item: self.nodes[self.last_item].key,
        }
    }
}

/// Serializable view with node keys in place of indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphDump {
    pub nodes: Vec<GraphNode>,
    pub edges: Vec<DumpEdge>,
    pub last_item: NodeKey,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DumpEdge {
    pub src: NodeKey,
    pub rel: Relation,
    pub dst: NodeKey,
}

/// Edge lists of one relation class in index form.
#[derive(Debug, Clone)]
pub struct EdgeSet {
    pub src: Index,
    pub dst: Index,
    /// Homogeneous relation row per edge (empty for heterogeneous sets).
    pub rel: Index,
}

impl EdgeSet {
    pub fn len(&self) -> usize {
        self.src.len()
    }

    pub fn is_empty(&self) -> bool {
        self.src.is_empty()
    }
}

/// Several graphs packed into one disjoint graph for batched propagation.
#[derive(Debug, Clone)]
pub struct GraphBatch {
    pub n_nodes: usize,
    pub node_type: Vec<NodeType>,
    /// Row in the item table (item nodes) or code table (code nodes).
    pub table_row: Vec<usize>,
    /// Node rows grouped by type, in [`NodeType::ALL`] order.
    pub type_groups: Rc<[Vec<usize>]>,
    /// CSR of 0-based positions per node.
    pub pos_offsets: Index,
    pub pos_indices: Index,
    pub homo: EdgeSet,
    hetero: EdgeSet,
    /// All edges regardless of relation (GCN/GAT view).
    pub all: EdgeSet,
    /// `1/√(|N_dst|·|N_src|)` per edge of `all`.
    pub gcn_norm: Vec<f64>,
    pub has_hetero: Rc<[bool]>,
    /// Last-position item node of every graph.
    pub last: Index,
    /// Graph id of every node.
    pub graph_of: Vec<usize>,
    hetero_reads: Cell<usize>,
}

impl GraphBatch {
    /// `item_row` maps an item to its row in the item embedding table.
    pub fn new(graphs: &[&MsGraph], mut item_row: impl FnMut(ItemId) -> usize) -> Self {
        let mut node_type = Vec::new();
        let mut table_row = Vec::new();
        let mut pos_offsets = vec![0usize];
        let mut pos_indices = Vec::new();
        let mut graph_of = Vec::new();
        let mut last = Vec::with_capacity(graphs.len());
        let (mut hs, mut hd, mut hr) = (Vec::new(), Vec::new(), Vec::new());
        let (mut xs, mut xd) = (Vec::new(), Vec::new());
        let (mut as_, mut ad) = (Vec::new(), Vec::new());
        let mut offset = 0;
        for (g_id, g) in graphs.iter().enumerate() {
            for n in &g.nodes {
                node_type.push(n.key.ntype);
                table_row.push(match n.key.ntype {
                    NodeType::Item => item_row(ItemId(n.key.id)),
                    _ => n.key.id as usize,
                });
                pos_indices.extend(n.positions.iter().map(|&p| p as usize - 1));
                pos_offsets.push(pos_indices.len());
                graph_of.push(g_id);
            }
            for e in &g.edges {
                as_.push(e.src + offset);
                ad.push(e.dst + offset);
                match e.rel.homo_index() {
                    Some(r) => {
                        hs.push(e.src + offset);
                        hd.push(e.dst + offset);
                        hr.push(r);
                    }
                    None => {
                        xs.push(e.src + offset);
                        xd.push(e.dst + offset);
                    }
                }
            }
            last.push(g.last_item + offset);
            offset += g.nodes.len();
        }
        let n_nodes = offset;
        let mut groups = vec![Vec::new(), Vec::new(), Vec::new()];
        for (i, t) in node_type.iter().enumerate() {
            groups[t.index()].push(i);
        }
        let mut deg = vec![0usize; n_nodes];
        for &d in &ad {
            deg[d] += 1;
        }
        let gcn_norm = as_
            .iter()
            .zip(&ad)
            .map(|(&s, &d)| 1.0 / libm::sqrt((deg[s] * deg[d]) as f64))
            .collect();
        let mut has_hetero = vec![false; n_nodes];
        for &d in &xd {
            has_hetero[d] = true;
        }
        GraphBatch {
            n_nodes,
            node_type,
            table_row,
            type_groups: groups.into(),
            pos_offsets: pos_offsets.into(),
            pos_indices: pos_indices.into(),
            homo: EdgeSet {
                src: hs.into(),
                dst: hd.into(),
                rel: hr.into(),
            },
            hetero: EdgeSet {
                src: xs.into(),
                dst: xd.into(),
                rel: Vec::new().into(),
            },
            all: EdgeSet {
                src: as_.into(),
                dst: ad.into(),
                rel: Vec::new().into(),
            },
            gcn_norm,
            has_hetero: has_hetero.into(),
            last: last.into(),
            graph_of,
            hetero_reads: Cell::new(0),
        }
    }

    /// Heterogeneous edges. Every call is counted (see [`Self::hetero_reads`]).
    pub fn hetero(&self) -> &EdgeSet {
        self.hetero_reads.set(self.hetero_reads.get() + 1);
        &self.hetero
    }

    /// How many times the heterogeneous edge set was requested.
    pub fn hetero_reads(&self) -> usize {
        self.hetero_reads.get()
    }

    /// Every node has a self-loop, so the homogeneous class is never empty.
    pub fn has_homo(&self) -> Rc<[bool]> {
        vec![true; self.n_nodes].into()
    }
}
