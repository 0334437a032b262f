//! Early- and late-fusion base models over the per-position embedding
//! tensor (item, image and text rows), with a minimal gated recurrent cell
//! as the sequence encoder.
//!
//! Early fusion merges the three channels at each position and encodes the
//! fused sequence. Late fusion encodes every channel separately and merges
//! the final states.

use alloc::format;
use alloc::rc::Rc;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Index, ParamId, Tape, Var};
use crate::dataset::{Channel, ItemId};
use crate::model::{truncate, ModelConfig, Recommender};
use crate::optim::ParamStore;
use crate::quantizer::ModalityCodebook;
use crate::representation::uniform_init;
use crate::tensor::Matrix;
use crate::{Error, Result, LEAKY_SLOPE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FusionOrder {
    Early,
    Late,
}

/// Minimal gated unit:
/// `f = sigmoid(x W_f + h U_f + b_f)`,
/// `h̃ = tanh(x W_h + (f ⊙ h) U_h + b_h)`,
/// `h' = h + f ⊙ (h̃ − h)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MguCell {
    pub wf: ParamId,
    pub uf: ParamId,
    pub bf: ParamId,
    pub wh: ParamId,
    pub uh: ParamId,
    pub bh: ParamId,
}

impl MguCell {
    fn init(store: &mut ParamStore, name: &str, d: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut w = |s: &str, rows: usize, cols: usize, zero: bool| {
            let m = if zero {
                Matrix::zeros(rows, cols)
            } else {
                uniform_init(rng, rows, cols, d)
            };
            store.add(&format!("{name}.{s}"), m)
        };
        Self {
            wf: w("wf", d, d, false),
            uf: w("uf", d, d, false),
            bf: w("bf", 1, d, true),
            wh: w("wh", d, d, false),
            uh: w("uh", d, d, false),
            bh: w("bh", 1, d, true),
        }
    }

    pub fn step(&self, tape: &mut Tape, params: &[Var], x: Var, h: Var) -> Var {
        let p = |id: ParamId| params[id.0];
        let a = tape.matmul(x, p(self.wf));
        let b = tape.matmul(h, p(self.uf));
        let f = tape.add(a, b);
        let f = tape.add_row(f, p(self.bf));
        let f = tape.sigmoid(f);
        let fh = tape.mul(f, h);
        let a = tape.matmul(x, p(self.wh));
        let b = tape.matmul(fh, p(self.uh));
        let c = tape.add(a, b);
        let c = tape.add_row(c, p(self.bh));
        let c = tape.tanh(c);
        let diff = tape.sub(c, h);
        let upd = tape.mul(f, diff);
        tape.add(h, upd)
    }
}

/// Table rows of one prefix: item row per position and the code lists of
/// each modality (empty when missing).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BaseInput {
    pub items: Vec<usize>,
    pub codes: [Vec<Vec<u32>>; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaseModel {
    pub cfg: ModelConfig,
    pub order: FusionOrder,
    pub store: ParamStore,
    pub item: ParamId,
    pub code_tables: [ParamId; 2],
    /// One cell for early fusion; item, image and text cells for late.
    pub cells: Vec<MguCell>,
    pub fuse_w: ParamId,
    pub fuse_b: ParamId,
    catalog: Vec<ItemId>,
    pub image: Option<ModalityCodebook>,
    pub text: Option<ModalityCodebook>,
}

impl BaseModel {
    pub fn new(
        cfg: ModelConfig,
        order: FusionOrder,
        mut catalog: Vec<ItemId>,
        image: Option<ModalityCodebook>,
        text: Option<ModalityCodebook>,
    ) -> Result<Self> {
        cfg.validate()?;
        catalog.sort_unstable();
        catalog.dedup();
        let d = cfg.d;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut store = ParamStore::new();
        let item = store.add("item_table", uniform_init(&mut rng, catalog.len(), d, d));
        let mut code_tables = [ParamId(0); 2];
        for (c, book) in [(Channel::Image, &image), (Channel::Text, &text)] {
            let m = match book {
                Some(b) if b.dim() != d => {
                    return Err(Error::Shape(format!(
                        "{c:?} codebook dim {} differs from model dim {d}",
                        b.dim()
                    )))
                }
                Some(b) => Matrix::from_rows(&b.centers),
                None => Matrix::zeros(1, d),
            };
            code_tables[c.index()] = store.add(&format!("{c:?}_code_table").to_lowercase(), m);
        }
        let n_cells = match order {
            FusionOrder::Early => 1,
            FusionOrder::Late => 3,
        };
        let cells = (0..n_cells)
            .map(|i| MguCell::init(&mut store, &format!("cell{i}"), d, &mut rng))
            .collect();
        let fuse_w = store.add("fuse_w", uniform_init(&mut rng, 3 * d, d, d));
        let fuse_b = store.add("fuse_b", Matrix::zeros(1, d));
        Ok(Self {
            cfg,
            order,
            store,
            item,
            code_tables,
            cells,
            fuse_w,
            fuse_b,
            catalog,
            image,
            text,
        })
    }

    pub fn set_codebooks(&mut self, image: Option<ModalityCodebook>, text: Option<ModalityCodebook>) {
        self.image = image;
        self.text = text;
    }

    fn book(&self, c: Channel) -> Option<&ModalityCodebook> {
        match c {
            Channel::Image => self.image.as_ref(),
            Channel::Text => self.text.as_ref(),
        }
    }

    fn fuse(&self, tape: &mut Tape, params: &[Var], parts: &[Var]) -> Var {
        let x = tape.hcat(parts);
        let y = tape.matmul(x, params[self.fuse_w.0]);
        let y = tape.add_row(y, params[self.fuse_b.0]);
        tape.leaky_relu(y, LEAKY_SLOPE)
    }
}

impl Recommender for BaseModel {
    type Input = BaseInput;

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
        self.item
    }

    fn frozen(&self) -> Vec<ParamId> {
        if self.cfg.freeze_codes {
            self.code_tables.to_vec()
        } else {
            Vec::new()
        }
    }

    fn catalog(&self) -> &[ItemId] {
        &self.catalog
    }

    fn prepare(&self, prefix: &[ItemId]) -> Result<BaseInput> {
        let prefix = truncate(prefix, self.cfg.m_max);
        if prefix.is_empty() {
            return Err(Error::InvalidArgument("empty prefix".into()));
        }
        let items = prefix
            .iter()
            .map(|&i| {
                self.item_row(i)
                    .ok_or_else(|| Error::InvalidArgument(format!("item {} not in catalog", i.0)))
            })
            .collect::<Result<Vec<_>>>()?;
        let codes = Channel::ALL.map(|c| {
            prefix
                .iter()
                .map(|&i| {
                    self.book(c)
                        .and_then(|b| b.codes(i))
                        .map_or_else(Vec::new, <[u32]>::to_vec)
                })
                .collect()
        });
        Ok(BaseInput { items, codes })
    }

    fn user_repr(
        &self,
        tape: &mut Tape,
        params: &[Var],
        inputs: &[&BaseInput],
        _dropout: Option<&mut ChaCha8Rng>,
    ) -> Var {
        let b = inputs.len();
        let d = self.cfg.d;
        let t_max = inputs.iter().map(|x| x.items.len()).max().unwrap_or(0);
        // Left padding: sequence `s` occupies the last `len_s` steps.
        let offset = |s: usize| t_max - inputs[s].items.len();
        let zero = tape.constant(Matrix::zeros(b, d));
        let n_states = match self.order {
            FusionOrder::Early => 1,
            FusionOrder::Late => 3,
        };
        let mut h = alloc::vec![zero; n_states];
        for t in 0..t_max {
            let active: Rc<[bool]> = (0..b).map(|s| t >= offset(s)).collect();
            let pos = |s: usize| t.saturating_sub(offset(s)).min(inputs[s].items.len() - 1);
            let rows: Index = (0..b).map(|s| inputs[s].items[pos(s)]).collect();
            let e_item = tape.gather_rows(params[self.item.0], rows);
            let mut channels = alloc::vec![e_item];
            for c in Channel::ALL {
                let mut offsets = alloc::vec![0usize];
                let mut idx = Vec::new();
                for (s, inp) in inputs.iter().enumerate() {
                    if active[s] {
                        idx.extend(inp.codes[c.index()][pos(s)].iter().map(|&k| k as usize));
                    }
                    offsets.push(idx.len());
                }
                let table = params[self.code_tables[c.index()].0];
                channels.push(tape.gather_mean(table, offsets.into(), idx.into()));
            }
            match self.order {
                FusionOrder::Early => {
                    let x = self.fuse(tape, params, &channels);
                    let next = self.cells[0].step(tape, params, x, h[0]);
                    h[0] = tape.row_where(active.clone(), next, h[0]);
                }
                FusionOrder::Late => {
                    for (k, x) in channels.into_iter().enumerate() {
                        let next = self.cells[k].step(tape, params, x, h[k]);
                        h[k] = tape.row_where(active.clone(), next, h[k]);
                    }
                }
            }
        }
        match self.order {
            FusionOrder::Early => h[0],
            FusionOrder::Late => self.fuse(tape, params, &h),
        }
    }
}
