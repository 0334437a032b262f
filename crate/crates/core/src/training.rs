//! Loss, optimization loop and batched evaluation.

use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Index, ParamId, Tape, Var};
use crate::dataset::DataPoint;
use crate::metrics::{metrics_from_ranks, rank_of, MetricReport};
use crate::model::Recommender;
use crate::optim::{clip_global_norm, Adam, ParamStore};
use crate::tensor::Matrix;
use crate::{Error, Result};

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_hr5: f64,
    pub val_mrr5: f64,
    pub wall_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub log: Vec<EpochLog>,
    /// Epoch whose parameters were kept (1-based; 0 means the initial ones).
    pub best_epoch: usize,
    pub grad_norms_clipped: usize,
}

/// `λ Σ ‖θ‖²` over every non-frozen parameter, computed directly.
pub fn l2_penalty(store: &ParamStore, frozen: &[ParamId], lambda: f64) -> f64 {
    lambda
        * store
            .ids()
            .filter(|id| !frozen.contains(id))
            .map(|id| store.get(id).sum_sq())
            .sum::<f64>()
}

/// `P · item_tableᵀ`.
pub fn scores<R: Recommender>(model: &R, tape: &mut Tape, params: &[Var], p: Var) -> Var {
    tape.matmul_t(p, params[model.item_table().0])
}

/// Mean cross-entropy of a batch plus the L2 term, on `tape`.
pub fn batch_loss<R: Recommender>(
    model: &R,
    tape: &mut Tape,
    params: &[Var],
    inputs: &[&R::Input],
    targets: Index,
    dropout: Option<&mut ChaCha8Rng>,
) -> Var {
    let p = model.user_repr(tape, params, inputs, dropout);
    let logits = scores(model, tape, params, p);
    let xent = tape.softmax_xent(logits, targets);
    let lambda = model.config().l2;
    if lambda == 0.0 {
        return xent;
    }
    let frozen = model.frozen();
    let mut reg: Option<Var> = None;
    for id in model.store().ids().filter(|id| !frozen.contains(id)) {
        let s = tape.sum_sq(params[id.0]);
        reg = Some(match reg {
            Some(r) => tape.add(r, s),
            None => s,
        });
    }
    match reg {
        Some(r) => {
            let r = tape.scale(r, lambda);
            tape.add(xent, r)
        }
        None => xent,
    }
}

fn target_rows<R: Recommender>(model: &R, points: &[DataPoint]) -> Result<Vec<usize>> {
    points
        .iter()
        .map(|p| {
            model.item_row(p.target).ok_or_else(|| {
                Error::InvalidArgument(format!("target item {} not in catalog", p.target.0))
            })
        })
        .collect()
}

/// Prepared inputs and target rows of `points`.
pub fn prepare_points<R: Recommender>(
    model: &R,
    points: &[DataPoint],
) -> Result<(Vec<R::Input>, Vec<usize>)> {
    let inputs = points
        .iter()
        .map(|p| model.prepare(&p.prefix))
        .collect::<Result<Vec<_>>>()?;
    Ok((inputs, target_rows(model, points)?))
}

/// Logits for a batch of prepared inputs (`B × |catalog|`).
pub fn score_inputs<R: Recommender>(model: &R, inputs: &[&R::Input]) -> Matrix {
    let mut tape = Tape::new();
    let params = model.store().on_tape(&mut tape);
    let p = model.user_repr(&mut tape, &params, inputs, None);
    let s = scores(model, &mut tape, &params, p);
    tape.value(s).clone()
}

/// Rank of each target under the model, in batches of the configured size.
pub fn rank_prepared<R: Recommender>(model: &R, inputs: &[R::Input], targets: &[usize]) -> Vec<usize> {
    let bs = model.config().batch_size;
    let mut ranks = Vec::with_capacity(inputs.len());
    let refs: Vec<&R::Input> = inputs.iter().collect();
    for (chunk, tchunk) in refs.chunks(bs).zip(targets.chunks(bs)) {
        let logits = score_inputs(model, chunk);
        for (r, &t) in tchunk.iter().enumerate() {
            ranks.push(rank_of(logits.row(r), t));
        }
    }
    ranks
}

pub fn evaluate<R: Recommender>(model: &R, points: &[DataPoint], ks: &[u32]) -> Result<MetricReport> {
    let (inputs, targets) = prepare_points(model, points)?;
    let ranks = rank_prepared(model, &inputs, &targets);
    Ok(metrics_from_ranks(&ranks, ks, model.config().seed))
}

/// Mini-batch Adam on the cross-entropy loss. After every epoch the model is
/// scored on `val`; the parameters with the best validation HR@5 (ties go
/// to MRR@5, then the earlier epoch) are restored at the end. `now_ms`
/// supplies wall-clock time for the log.
pub fn train<R: Recommender>(
    model: &mut R,
    train_points: &[DataPoint],
    val: &[DataPoint],
    now_ms: &dyn Fn() -> u64,
) -> Result<TrainReport> {
    let cfg = model.config().clone();
    cfg.validate()?;
    if train_points.is_empty() {
        return Err(Error::InvalidArgument("no training points".into()));
    }
    let (inputs, targets) = prepare_points(model, train_points)?;
    let (val_inputs, val_targets) = prepare_points(model, val)?;
    let frozen = model.frozen();
    let mut adam = Adam::new(cfg.lr);
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(2));
    let mut drop_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(3));
    let mut best = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    let mut best_store = model.store().clone();
    let mut best_epoch = 0;
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut clipped = 0;
    let start = now_ms();

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&R::Input> = chunk.iter().map(|&i| &inputs[i]).collect();
            let tgt: Index = chunk.iter().map(|&i| targets[i]).collect();
            let mut tape = Tape::new();
            let params = model.store().on_tape(&mut tape);
            let dropout = (cfg.dropout > 0.0).then_some(&mut drop_rng);
            let loss = batch_loss(&*model, &mut tape, &params, &batch, tgt, dropout);
            let lv = tape.value(loss).item();
            if !lv.is_finite() {
                return Err(Error::Diverged { epoch, loss: lv });
            }
            total += lv * chunk.len() as f64;
            let grads = tape.backward(loss);
            let mut g = model.store().collect_grads(&grads);
            if clip_global_norm(&mut g, cfg.clip_norm) > cfg.clip_norm {
                clipped += 1;
            }
            adam.step(model.store_mut(), &g, &frozen);
        }
        if !model.store().is_finite() {
            return Err(Error::Diverged {
                epoch,
                loss: f64::NAN,
            });
        }
        let (hr, mrr) = if val_inputs.is_empty() {
            (0.0, 0.0)
        } else {
            let ranks = rank_prepared(&*model, &val_inputs, &val_targets);
            let r = metrics_from_ranks(&ranks, &[5], cfg.seed);
            (r.hr_at(5), r.mrr_at(5))
        };
        let entry = EpochLog {
            epoch,
            train_loss: total / inputs.len() as f64,
            val_hr5: hr,
            val_mrr5: mrr,
            wall_ms: now_ms().saturating_sub(start),
        };
        log::info!(
            "epoch {epoch}: loss {:.5} val HR@5 {hr:.4} MRR@5 {mrr:.4}",
            entry.train_loss
        );
        log.push(entry);
        if (hr, mrr) > best || val_inputs.is_empty() {
            best = (hr, mrr);
            best_store = model.store().clone();
            best_epoch = epoch;
        }
    }
    *model.store_mut() = best_store;
    Ok(TrainReport {
        log,
        best_epoch,
        grad_norms_clipped: clipped,
    })
}
