//! Full-catalog ranking metrics.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// 1-based rank of `target`: one plus the number of other items whose logit
/// is at least the target's (ties count against the target). A non-finite
/// target logit ranks last.
pub fn rank_of(logits: &[f64], target: usize) -> usize {
    let t = logits[target];
    if t.is_nan() {
        return logits.len();
    }
    1 + logits
        .iter()
        .enumerate()
        .filter(|&(j, &x)| j != target && x >= t)
        .count()
}

/// HR@K and MRR@K over a set of test points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub hr: BTreeMap<u32, f64>,
    pub mrr: BTreeMap<u32, f64>,
    pub n_points: usize,
    pub seed: u64,
}

impl MetricReport {
    pub fn hr_at(&self, k: u32) -> f64 {
        self.hr.get(&k).copied().unwrap_or(f64::NAN)
    }

    pub fn mrr_at(&self, k: u32) -> f64 {
        self.mrr.get(&k).copied().unwrap_or(f64::NAN)
    }

    /// `0 ≤ mrr ≤ hr ≤ 1` at every K and HR non-decreasing in K.
    pub fn validate(&self) -> Result<()> {
        let mut prev = 0.0;
        for (k, &h) in &self.hr {
            let m = *self
                .mrr
                .get(k)
                .ok_or_else(|| Error::InvalidArgument(format!("no MRR@{k}")))?;
            if !(0.0..=1.0).contains(&h) || !(0.0..=h + 1e-12).contains(&m) {
                return Err(Error::InvalidArgument(format!(
                    "bad metrics at K={k}: hr {h}, mrr {m}"
                )));
            }
            if h + 1e-12 < prev {
                return Err(Error::InvalidArgument(format!("HR decreases at K={k}")));
            }
            prev = h;
        }
        if self.hr.len() != self.mrr.len() {
            return Err(Error::InvalidArgument("HR and MRR cut-offs differ".into()));
        }
        Ok(())
    }
}

/// Aggregates ranks into HR@K and MRR@K for every K in `ks`.
pub fn metrics_from_ranks(ranks: &[usize], ks: &[u32], seed: u64) -> MetricReport {
    let n = ranks.len();
    let mut hr = BTreeMap::new();
    let mut mrr = BTreeMap::new();
    for &k in ks {
        let (mut h, mut m) = (0.0, 0.0);
        for &r in ranks {
            if r <= k as usize {
                h += 1.0;
                m += 1.0 / r as f64;
            }
        }
        let denom = n.max(1) as f64;
        hr.insert(k, h / denom);
        mrr.insert(k, m / denom);
    }
    MetricReport {
        hr,
        mrr,
        n_points: n,
        seed,
    }
}

/// Ranks every `(logits, target)` run and aggregates.
pub fn rank_metrics(runs: &[(Vec<f64>, usize)], ks: &[u32], seed: u64) -> MetricReport {
    let ranks: Vec<usize> = runs.iter().map(|(l, t)| rank_of(l, *t)).collect();
    metrics_from_ranks(&ranks, ks, seed)
}
