//! Modality codes: a linear autoencoder condenses raw feature vectors,
//! Lloyd's k-means clusters the condensed vectors, and each item modality
//! is mapped to its `k` most cosine-similar cluster centers.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{Channel, FeatureTable, ItemId};
use crate::optim::{Adam, ParamStore};
use crate::tensor::{dot, Matrix};
use crate::{Error, Result};

/// `z = x · encode`, `x̂ = z · decode`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearAutoencoder {
    pub channel: Channel,
    pub encode: Matrix,
    pub decode: Matrix,
}

impl LinearAutoencoder {
    pub fn input_dim(&self) -> usize {
        self.encode.rows()
    }

    pub fn code_dim(&self) -> usize {
        self.encode.cols()
    }

    pub fn encode(&self, x: &[f64]) -> Vec<f64> {
        Matrix::row_vector(x).matmul(&self.encode).into_vec()
    }

    /// Mean squared reconstruction error over all coordinates.
    pub fn mse(&self, x: &Matrix) -> f64 {
        let rec = x.matmul(&self.encode).matmul(&self.decode);
        let n = (x.rows() * x.cols()).max(1) as f64;
        rec.data()
            .iter()
            .zip(x.data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / n
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AutoencoderInit {
    /// Uniform in `[-1/√D, 1/√D]`.
    Random,
    /// `encode = [I; 0]`, `decode = encodeᵀ`.
    Identity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AutoencoderConfig {
    pub code_dim: usize,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
    pub init: AutoencoderInit,
}

/// Trained autoencoder plus the full-batch loss before each epoch and after
/// the last one. The returned weights are the best seen.
#[derive(Debug, Clone, PartialEq)]
pub struct AutoencoderFit {
    pub model: LinearAutoencoder,
    pub losses: Vec<f64>,
    pub best_loss: f64,
}

pub fn train_autoencoder(
    channel: Channel,
    vectors: &[Vec<f64>],
    cfg: &AutoencoderConfig,
) -> Result<AutoencoderFit> {
    if vectors.len() < 2 {
        return Err(Error::InvalidArgument("autoencoder needs at least 2 vectors".into()));
    }
    let dim = vectors[0].len();
    if vectors.iter().any(|v| v.len() != dim) {
        return Err(Error::Shape("autoencoder inputs differ in length".into()));
    }
    if vectors.iter().flatten().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("autoencoder input".into()));
    }
    if cfg.code_dim == 0 || cfg.code_dim > dim {
        return Err(Error::InvalidArgument(format!(
            "code dim {} must lie in 1..={dim}",
            cfg.code_dim
        )));
    }
    let x = Matrix::from_rows(vectors);
    let (enc, dec) = match cfg.init {
        AutoencoderInit::Identity => {
            let mut e = Matrix::zeros(dim, cfg.code_dim);
            for i in 0..cfg.code_dim {
                e.set(i, i, 1.0);
            }
            let d = e.transpose();
            (e, d)
        }
        AutoencoderInit::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let bound = 1.0 / libm::sqrt(dim as f64);
            let mut sample = |r, c| {
                Matrix::from_vec(r, c, (0..r * c).map(|_| rng.gen_range(-bound..=bound)).collect())
            };
            (sample(dim, cfg.code_dim), sample(cfg.code_dim, dim))
        }
    };
    let mut params = ParamStore::new();
    let e_id = params.add("encode", enc);
    let d_id = params.add("decode", dec);
    let mut adam = Adam::new(cfg.lr);
    let n = (x.rows() * x.cols()) as f64;

    let mut losses = Vec::with_capacity(cfg.epochs + 1);
    let mut best = (f64::INFINITY, params.clone());
    for epoch in 0..=cfg.epochs {
        let z = x.matmul(params.get(e_id));
        let mut resid = z.matmul(params.get(d_id));
        for (r, xv) in resid.data_mut().iter_mut().zip(x.data()) {
            *r -= xv;
        }
        let loss = resid.sum_sq() / n;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("autoencoder loss at epoch {epoch}")));
        }
        losses.push(loss);
        if loss < best.0 {
            best = (loss, params.clone());
        }
        if epoch == cfg.epochs {
            break;
        }
        // d/dD = 2/n zᵀR ; d/dE = 2/n xᵀ(R Dᵀ)
        let mut g_dec = z.t_matmul(&resid);
        g_dec.scale_assign(2.0 / n);
        let mut g_enc = x.t_matmul(&resid.matmul_t(params.get(d_id)));
        g_enc.scale_assign(2.0 / n);
        adam.step(&mut params, &[g_enc, g_dec], &[]);
    }
    let (best_loss, params) = best;
    Ok(AutoencoderFit {
        model: LinearAutoencoder {
            channel,
            encode: params.get(e_id).clone(),
            decode: params.get(d_id).clone(),
        },
        losses,
        best_loss,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeans {
    pub centers: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    /// Within-cluster SSE after each center update.
    pub sse: Vec<f64>,
    pub iterations: usize,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest center, ties to the lower index.
fn nearest(x: &[f64], centers: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (k, c) in centers.iter().enumerate() {
        let d = sq_dist(x, c);
        if d < best.1 {
            best = (k, d);
        }
    }
    best
}

pub fn sse(vectors: &[Vec<f64>], centers: &[Vec<f64>], labels: &[usize]) -> f64 {
    vectors
        .iter()
        .zip(labels)
        .map(|(v, &l)| sq_dist(v, &centers[l]))
        .sum()
}

/// Lloyd's algorithm with k-means++ seeding. A cluster that empties is
/// re-seeded with the point farthest from its current center (taken from
/// a cluster that keeps at least one other point).
pub fn kmeans(vectors: &[Vec<f64>], c: usize, max_iter: usize, seed: u64) -> Result<KMeans> {
    if c == 0 {
        return Err(Error::InvalidArgument("k-means needs c ≥ 1".into()));
    }
    let distinct = count_distinct(vectors);
    if c > distinct {
        return Err(Error::InvalidArgument(format!(
            "{c} clusters requested but only {distinct} distinct vectors"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // k-means++ over distinct points only, so no two centers coincide.
    let mut centers: Vec<Vec<f64>> = vec![vectors[rng.gen_range(0..vectors.len())].clone()];
    let mut d2: Vec<f64> = vectors.iter().map(|v| sq_dist(v, &centers[0])).collect();
    while centers.len() < c {
        let total: f64 = d2.iter().sum();
        let mut r = rng.gen::<f64>() * total;
        let mut pick = d2.iter().rposition(|&d| d > 0.0).unwrap_or(0);
        for (i, &d) in d2.iter().enumerate() {
            if d <= 0.0 {
                continue;
            }
            if r < d {
                pick = i;
                break;
            }
            r -= d;
        }
        centers.push(vectors[pick].clone());
        for (i, v) in vectors.iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(v, &centers[centers.len() - 1]));
        }
    }

    let mut labels: Vec<usize> = vectors.iter().map(|v| nearest(v, &centers).0).collect();
    let mut sse_log = Vec::new();
    let mut iterations = 0;
    for _ in 0..max_iter.max(1) {
        iterations += 1;
        reseed_empty(vectors, &centers, &mut labels, c);
        centers = update_centers(vectors, &labels, c);
        sse_log.push(sse(vectors, &centers, &labels));
        let next: Vec<usize> = vectors.iter().map(|v| nearest(v, &centers).0).collect();
        if next == labels {
            break;
        }
        labels = next;
    }
    Ok(KMeans {
        centers,
        labels,
        sse: sse_log,
        iterations,
    })
}

fn count_distinct(vectors: &[Vec<f64>]) -> usize {
    let keys: BTreeSet<Vec<u64>> = vectors
        .iter()
        .map(|v| v.iter().map(|x| x.to_bits()).collect())
        .collect();
    keys.len()
}

fn reseed_empty(vectors: &[Vec<f64>], centers: &[Vec<f64>], labels: &mut [usize], c: usize) {
    loop {
        let mut sizes = vec![0usize; c];
        for &l in labels.iter() {
            sizes[l] += 1;
        }
        let Some(empty) = sizes.iter().position(|&s| s == 0) else {
            return;
        };
        let far = (0..vectors.len())
            .filter(|&i| sizes[labels[i]] > 1)
            .max_by(|&a, &b| {
                let da = sq_dist(&vectors[a], &centers[labels[a]]);
                let db = sq_dist(&vectors[b], &centers[labels[b]]);
                da.total_cmp(&db).then(b.cmp(&a))
            });
        match far {
            Some(i) => labels[i] = empty,
            None => return,
        }
    }
}

fn update_centers(vectors: &[Vec<f64>], labels: &[usize], c: usize) -> Vec<Vec<f64>> {
    let dim = vectors[0].len();
    let mut sums = vec![vec![0.0; dim]; c];
    let mut counts = vec![0usize; c];
    for (v, &l) in vectors.iter().zip(labels) {
        counts[l] += 1;
        for (s, x) in sums[l].iter_mut().zip(v) {
            *s += x;
        }
    }
    for (s, &n) in sums.iter_mut().zip(&counts) {
        if n > 0 {
            s.iter_mut().for_each(|x| *x /= n as f64);
        }
    }
    sums
}

pub fn cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    let na = libm::sqrt(dot(a, a));
    let nb = libm::sqrt(dot(b, b));
    if na == 0.0 || nb == 0.0 {
        None
    } else {
        Some(dot(a, b) / (na * nb))
    }
}

/// The `k` centers most cosine-similar to `v`, by descending similarity,
/// ties to the lower index. A zero vector scores −1 against every center.
pub fn top_k_codes(v: &[f64], centers: &[Vec<f64>], k: usize) -> Vec<u32> {
    let sims: Vec<f64> = centers.iter().map(|c| cosine(v, c).unwrap_or(-1.0)).collect();
    let mut idx: Vec<usize> = (0..centers.len()).collect();
    idx.sort_by(|&a, &b| sims[b].total_cmp(&sims[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx.into_iter().map(|i| i as u32).collect()
}

pub fn assign_codes(
    encoded: &BTreeMap<ItemId, Vec<f64>>,
    centers: &[Vec<f64>],
    k: usize,
) -> Result<BTreeMap<ItemId, Vec<u32>>> {
    if k == 0 || k > centers.len() {
        return Err(Error::InvalidArgument(format!(
            "k = {k} must lie in 1..={}",
            centers.len()
        )));
    }
    Ok(encoded
        .iter()
        .map(|(&item, v)| {
            if v.iter().all(|&x| x == 0.0) {
                log::warn!("item {} has a zero modality vector; cosine undefined", item.0);
            }
            (item, top_k_codes(v, centers, k))
        })
        .collect())
}

/// Cluster centers of one channel and every item's code list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModalityCodebook {
    pub channel: Channel,
    pub centers: Vec<Vec<f64>>,
    pub k: usize,
    pub assignments: BTreeMap<ItemId, Vec<u32>>,
}

impl ModalityCodebook {
    pub fn c(&self) -> usize {
        self.centers.len()
    }

    pub fn dim(&self) -> usize {
        self.centers.first().map_or(0, Vec::len)
    }

    pub fn codes(&self, item: ItemId) -> Option<&[u32]> {
        self.assignments.get(&item).map(Vec::as_slice)
    }

    /// Keeps only assignments of items still present in `table`.
    pub fn restrict_to(&self, table: Option<&FeatureTable>) -> ModalityCodebook {
        let mut out = self.clone();
        out.assignments.retain(|item, _| table.is_some_and(|t| t.contains(*item)));
        out
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.k > self.c() {
            return Err(Error::InvalidArgument("codebook k out of range".into()));
        }
        for (item, codes) in &self.assignments {
            let uniq: BTreeSet<_> = codes.iter().collect();
            if codes.len() != self.k || uniq.len() != self.k || codes.iter().any(|&c| c as usize >= self.c()) {
                return Err(Error::InvalidArgument(format!("bad code list for item {}", item.0)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuantizerConfig {
    pub code_dim: usize,
    pub clusters: usize,
    pub codes_per_item: usize,
    pub ae_epochs: usize,
    pub ae_lr: f64,
    pub kmeans_iters: usize,
    pub seed: u64,
    /// Every item gets its own node (one "code" per item) instead of shared
    /// cluster codes.
    pub per_item: bool,
}

impl Default for QuantizerConfig {
    fn default() -> Self {
        Self {
            code_dim: 32,
            clusters: 20,
            codes_per_item: 1,
            ae_epochs: 300,
            ae_lr: 0.01,
            kmeans_iters: 50,
            seed: 7,
            per_item: false,
        }
    }
}

/// Autoencoder, codebook and diagnostics for one channel.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelQuantizer {
    pub autoencoder: LinearAutoencoder,
    pub codebook: ModalityCodebook,
    pub ae_losses: Vec<f64>,
    pub kmeans_sse: Vec<f64>,
}

impl ChannelQuantizer {
    /// Codes of the items in `table` through the frozen encoder and centers.
    /// Items absent from `table` get no codes.
    pub fn reassign(&self, table: Option<&FeatureTable>) -> ModalityCodebook {
        let mut out = self.codebook.clone();
        out.assignments = match table {
            None => BTreeMap::new(),
            Some(t) => t
                .iter()
                .map(|(i, v)| {
                    let z = self.autoencoder.encode(v);
                    (i, top_k_codes(&z, &out.centers, out.k))
                })
                .collect(),
        };
        out
    }
}

/// Trains the autoencoder and k-means on `train_items` only, then assigns
/// codes to every item present in `table` through the frozen codebook.
pub fn build_channel(
    table: &FeatureTable,
    train_items: &BTreeSet<ItemId>,
    cfg: &QuantizerConfig,
) -> Result<ChannelQuantizer> {
    let train_vecs: Vec<Vec<f64>> = table
        .iter()
        .filter(|(i, _)| train_items.contains(i))
        .map(|(_, v)| v.to_vec())
        .collect();
    let ae_cfg = AutoencoderConfig {
        code_dim: cfg.code_dim,
        epochs: cfg.ae_epochs,
        lr: cfg.ae_lr,
        seed: cfg.seed,
        init: AutoencoderInit::Random,
    };
    let fit = train_autoencoder(table.channel, &train_vecs, &ae_cfg)?;
    let encoded: BTreeMap<ItemId, Vec<f64>> =
        table.iter().map(|(i, v)| (i, fit.model.encode(v))).collect();

    if cfg.per_item {
        let items: Vec<ItemId> = encoded.keys().copied().collect();
        let centers = items.iter().map(|i| encoded[i].clone()).collect();
        let assignments = items
            .iter()
            .enumerate()
            .map(|(row, &i)| (i, vec![row as u32]))
            .collect();
        return Ok(ChannelQuantizer {
            autoencoder: fit.model,
            codebook: ModalityCodebook {
                channel: table.channel,
                centers,
                k: 1,
                assignments,
            },
            ae_losses: fit.losses,
            kmeans_sse: Vec::new(),
        });
    }

    let train_encoded: Vec<Vec<f64>> = encoded
        .iter()
        .filter(|(i, _)| train_items.contains(i))
        .map(|(_, v)| v.clone())
        .collect();
    let km = kmeans(&train_encoded, cfg.clusters, cfg.kmeans_iters, cfg.seed)?;
    let assignments = assign_codes(&encoded, &km.centers, cfg.codes_per_item)?;
    Ok(ChannelQuantizer {
        autoencoder: fit.model,
        codebook: ModalityCodebook {
            channel: table.channel,
            centers: km.centers,
            k: cfg.codes_per_item,
            assignments,
        },
        ae_losses: fit.losses,
        kmeans_sse: km.sse,
    })
}
