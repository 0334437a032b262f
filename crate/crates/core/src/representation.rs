//! Embedding tables and initial node representations.
//!
//! A node's input state is `[e_n; e_type; e_pos] · W_merge`, where `e_n` is
//! the item or code embedding, `e_type` the node-type embedding and `e_pos`
//! the mean of the embeddings of every sequence position the node occupies.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::dataset::{Channel, ItemId};
use crate::msgraph::{CodeLookup, GraphBatch, NodeType};
use crate::optim::ParamStore;
use crate::autodiff::ParamId;
use crate::quantizer::ModalityCodebook;
use crate::tensor::Matrix;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableDims {
    pub d: usize,
    pub n_items: usize,
    pub m_max: usize,
}

/// Parameter ids of every embedding table.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EmbeddingTables {
    pub dims: TableDims,
    pub item: ParamId,
    pub image_code: ParamId,
    pub text_code: ParamId,
    pub node_type: ParamId,
    pub position: ParamId,
    pub merge: ParamId,
}

/// Which parts of `[e_n; e_type; e_pos]` feed the merge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReprFlags {
    pub use_type: bool,
    pub use_position: bool,
}

impl Default for ReprFlags {
    fn default() -> Self {
        Self {
            use_type: true,
            use_position: true,
        }
    }
}

/// Uniform `[-1/√d, 1/√d]` matrix.
pub fn uniform_init(rng: &mut ChaCha8Rng, rows: usize, cols: usize, d: usize) -> Matrix {
    let b = 1.0 / libm::sqrt(d as f64);
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-b..=b)).collect())
}

fn code_table(book: Option<&ModalityCodebook>, d: usize) -> Result<Matrix> {
    match book {
        None => Ok(Matrix::zeros(1, d)),
        Some(b) => {
            if b.dim() != d {
                return Err(Error::Shape(format!(
                    "{:?} codebook centers have dim {}, model dim is {d}",
                    b.channel,
                    b.dim()
                )));
            }
            Ok(Matrix::from_rows(&b.centers))
        }
    }
}

impl EmbeddingTables {
    /// Random tables from `seed`; code tables copy the cluster centers.
    pub fn init(
        store: &mut ParamStore,
        dims: TableDims,
        image: Option<&ModalityCodebook>,
        text: Option<&ModalityCodebook>,
        seed: u64,
    ) -> Result<Self> {
        let d = dims.d;
        if d == 0 || dims.n_items == 0 || dims.m_max == 0 {
            return Err(Error::InvalidArgument("table dimensions must be positive".into()));
        }
        let image_t = code_table(image, d)?;
        let text_t = code_table(text, d)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(Self {
            dims,
            item: store.add("item_table", uniform_init(&mut rng, dims.n_items, d, d)),
            image_code: store.add("image_code_table", image_t),
            text_code: store.add("text_code_table", text_t),
            node_type: store.add("type_table", uniform_init(&mut rng, 3, d, d)),
            position: store.add("position_table", uniform_init(&mut rng, dims.m_max, d, d)),
            merge: store.add("merge_weight", uniform_init(&mut rng, 3 * d, d, d)),
        })
    }

    pub fn code(&self, c: Channel) -> ParamId {
        match c {
            Channel::Image => self.image_code,
            Channel::Text => self.text_code,
        }
    }

    /// Input states `h⁽⁰⁾` for every node of a batch.
    pub fn node_inputs(&self, tape: &mut Tape, params: &[Var], batch: &GraphBatch, flags: ReprFlags) -> Var {
        let d = self.dims.d;
        let item = params[self.item.0];
        let img = params[self.image_code.0];
        let txt = params[self.text_code.0];
        let n_items = tape.value(item).rows();
        let n_img = tape.value(img).rows();
        let stacked = tape.vcat(&[item, img, txt]);
        let rows: Vec<usize> = batch
            .node_type
            .iter()
            .zip(&batch.table_row)
            .map(|(t, &r)| match t {
                NodeType::Item => r,
                NodeType::ImageCode => n_items + r,
                NodeType::TextCode => n_items + n_img + r,
            })
            .collect();
        let e_n = tape.gather_rows(stacked, rows.into());
        let e_ty = if flags.use_type {
            let idx: Vec<usize> = batch.node_type.iter().map(|t| t.index()).collect();
            tape.gather_rows(params[self.node_type.0], idx.into())
        } else {
            tape.constant(Matrix::zeros(batch.n_nodes, d))
        };
        let e_po = if flags.use_position {
            tape.gather_mean(
                params[self.position.0],
                batch.pos_offsets.clone(),
                batch.pos_indices.clone(),
            )
        } else {
            tape.constant(Matrix::zeros(batch.n_nodes, d))
        };
        let cat = tape.hcat(&[e_n, e_ty, e_po]);
        tape.matmul(cat, params[self.merge.0])
    }
}

/// Representation of one node outside any batch: `positions` are 1-based.
pub fn node_repr(
    store: &ParamStore,
    tables: &EmbeddingTables,
    ntype: NodeType,
    row: usize,
    positions: &[u32],
) -> Result<Vec<f64>> {
    if positions.is_empty() {
        return Err(Error::InvalidArgument("node has no positions".into()));
    }
    if let Some(&p) = positions.iter().find(|&&p| p == 0 || p as usize > tables.dims.m_max) {
        return Err(Error::InvalidArgument(format!(
            "position {p} outside 1..={}",
            tables.dims.m_max
        )));
    }
    let table = match ntype {
        NodeType::Item => tables.item,
        NodeType::ImageCode => tables.image_code,
        NodeType::TextCode => tables.text_code,
    };
    let e_n = store.get(table).row(row);
    let e_ty = store.get(tables.node_type).row(ntype.index());
    let pos = store.get(tables.position);
    let d = tables.dims.d;
    let mut e_po = vec![0.0; d];
    for &p in positions {
        for (o, v) in e_po.iter_mut().zip(pos.row(p as usize - 1)) {
            *o += v / positions.len() as f64;
        }
    }
    let mut cat = Vec::with_capacity(3 * d);
    cat.extend_from_slice(e_n);
    cat.extend_from_slice(e_ty);
    cat.extend_from_slice(&e_po);
    Ok(Matrix::row_vector(&cat).matmul(store.get(tables.merge)).into_vec())
}

/// Rows of the embedding tensor of a prefix: item, image and text
/// embeddings per position (`m × d` each). Multi-code modalities use the
/// mean of their code embeddings; a missing modality is a zero row with its
/// flag set in `missing`.
#[derive(Debug, Clone, PartialEq)]
pub struct BaseTensor {
    pub channels: [Matrix; 3],
    /// `missing[c][p]` for the image (`c = 0`) and text (`c = 1`) rows.
    pub missing: [Vec<bool>; 2],
}

pub fn base_tensor(
    store: &ParamStore,
    tables: &EmbeddingTables,
    prefix: &[ItemId],
    item_row: impl Fn(ItemId) -> usize,
    codes: &CodeLookup<'_>,
) -> BaseTensor {
    let d = tables.dims.d;
    let m = prefix.len();
    let mut items = Matrix::zeros(m, d);
    let mut mods = [Matrix::zeros(m, d), Matrix::zeros(m, d)];
    let mut missing = [vec![false; m], vec![false; m]];
    for (p, &it) in prefix.iter().enumerate() {
        items.row_mut(p).copy_from_slice(store.get(tables.item).row(item_row(it)));
        for c in Channel::ALL {
            match codes.codes(c, it) {
                Some(list) if !list.is_empty() => {
                    let t = store.get(tables.code(c));
                    let row = mods[c.index()].row_mut(p);
                    for &code in list {
                        for (o, v) in row.iter_mut().zip(t.row(code as usize)) {
                            *o += v / list.len() as f64;
                        }
                    }
                }
                _ => missing[c.index()][p] = true,
            }
        }
    }
    let [img, txt] = mods;
    BaseTensor {
        channels: [items, img, txt],
        missing,
    }
}
