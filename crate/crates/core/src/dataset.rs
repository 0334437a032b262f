//! Interaction records, modality feature tables, filtering, temporal
//! splitting, perturbations and the planted-rule synthetic generator.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct UserId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ItemId(pub u32);

/// One positive user–item interaction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Interaction {
    pub user: UserId,
    pub item: ItemId,
    pub ts: i64,
}

/// Modality channel of a feature vector or code node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Channel {
    Image,
    Text,
}

impl Channel {
    pub const ALL: [Channel; 2] = [Channel::Image, Channel::Text];

    pub fn index(self) -> usize {
        match self {
            Channel::Image => 0,
            Channel::Text => 1,
        }
    }
}

/// Raw modality vectors of one channel. An absent item means the modality
/// is missing for that item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureTable {
    pub channel: Channel,
    dim: usize,
    entries: BTreeMap<ItemId, Vec<f64>>,
}

impl FeatureTable {
    pub fn new(channel: Channel, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("feature dim must be positive".into()));
        }
        Ok(Self {
            channel,
            dim,
            entries: BTreeMap::new(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn insert(&mut self, item: ItemId, v: Vec<f64>) -> Result<()> {
        if v.len() != self.dim {
            return Err(Error::Shape(format!(
                "feature of item {} has length {}, expected {}",
                item.0,
                v.len(),
                self.dim
            )));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("feature of item {}", item.0)));
        }
        self.entries.insert(item, v);
        Ok(())
    }

    pub fn get(&self, item: ItemId) -> Option<&[f64]> {
        self.entries.get(&item).map(Vec::as_slice)
    }

    pub fn remove(&mut self, item: ItemId) -> Option<Vec<f64>> {
        self.entries.remove(&item)
    }

    pub fn contains(&self, item: ItemId) -> bool {
        self.entries.contains_key(&item)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ItemId, &[f64])> {
        self.entries.iter().map(|(k, v)| (*k, v.as_slice()))
    }
}

/// Image and text tables; either may be absent altogether.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Features {
    pub image: Option<FeatureTable>,
    pub text: Option<FeatureTable>,
}

impl Features {
    pub fn channel(&self, c: Channel) -> Option<&FeatureTable> {
        match c {
            Channel::Image => self.image.as_ref(),
            Channel::Text => self.text.as_ref(),
        }
    }

    pub fn channel_mut(&mut self, c: Channel) -> Option<&mut FeatureTable> {
        match c {
            Channel::Image => self.image.as_mut(),
            Channel::Text => self.text.as_mut(),
        }
    }
}

/// `(user, preceding prefix, next item)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataPoint {
    pub user: UserId,
    pub prefix: Vec<ItemId>,
    pub target: ItemId,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitDataset {
    pub train: Vec<DataPoint>,
    pub test: Vec<DataPoint>,
    /// Sorted, deduplicated.
    pub catalog: Vec<ItemId>,
}

impl SplitDataset {
    /// Holds out the last training point of every user for model selection.
    pub fn validation_split(&self) -> (Vec<DataPoint>, Vec<DataPoint>) {
        let mut last: BTreeMap<UserId, usize> = BTreeMap::new();
        for (i, p) in self.train.iter().enumerate() {
            let e = last.entry(p.user).or_insert(i);
            if p.prefix.len() >= self.train[*e].prefix.len() {
                *e = i;
            }
        }
        let held: BTreeSet<usize> = last.into_values().collect();
        let mut train = Vec::new();
        let mut val = Vec::new();
        for (i, p) in self.train.iter().enumerate() {
            if held.contains(&i) {
                val.push(p.clone());
            } else {
                train.push(p.clone());
            }
        }
        (train, val)
    }

    /// Items that appear anywhere in the training points.
    pub fn train_items(&self) -> BTreeSet<ItemId> {
        let mut s = BTreeSet::new();
        for p in &self.train {
            s.extend(p.prefix.iter().copied());
            s.insert(p.target);
        }
        s
    }
}

/// Iteratively drops users and items with fewer than `min_count`
/// interactions until nothing changes.
pub fn core_filter(records: &[Interaction], min_count: usize) -> Vec<Interaction> {
    let mut current: Vec<Interaction> = records.to_vec();
    loop {
        let mut users: BTreeMap<UserId, usize> = BTreeMap::new();
        let mut items: BTreeMap<ItemId, usize> = BTreeMap::new();
        for r in &current {
            *users.entry(r.user).or_default() += 1;
            *items.entry(r.item).or_default() += 1;
        }
        let before = current.len();
        current.retain(|r| users[&r.user] >= min_count && items[&r.item] >= min_count);
        if current.len() == before {
            return current;
        }
    }
}

/// Per-user temporal split. Users shorter than `min_len` (or than 3, which
/// is needed for one train and one test point) are dropped; the last
/// `ceil(len · test_frac)` targets of each user become test points.
pub fn split_sequences(
    records: &[Interaction],
    test_frac: f64,
    min_len: usize,
) -> Result<SplitDataset> {
    if !(test_frac > 0.0 && test_frac < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "test_frac must lie in (0, 1), got {test_frac}"
        )));
    }
    if min_len < 2 {
        return Err(Error::InvalidArgument("min_len must be at least 2".into()));
    }
    let sequences = user_sequences(records);
    let mut train = Vec::new();
    let mut test = Vec::new();
    let mut catalog = BTreeSet::new();
    for (user, seq) in sequences {
        let len = seq.len();
        if len < min_len.max(3) {
            continue;
        }
        let n_test = test_count(len, test_frac);
        let first_test = len - n_test;
        for t in 1..len {
            let point = DataPoint {
                user,
                prefix: seq[..t].to_vec(),
                target: seq[t],
            };
            if t >= first_test {
                test.push(point);
            } else {
                train.push(point);
            }
        }
        catalog.extend(seq.iter().copied());
    }
    if test.is_empty() {
        return Err(Error::Infeasible("no user survives the length filter".into()));
    }
    Ok(SplitDataset {
        train,
        test,
        catalog: catalog.into_iter().collect(),
    })
}

/// `ceil(len · frac)`, clamped so at least one training target remains.
pub fn test_count(len: usize, frac: f64) -> usize {
    let raw = libm::ceil(len as f64 * frac) as usize;
    raw.clamp(1, len.saturating_sub(2).max(1))
}

/// Items per user in timestamp order; ties keep input order.
pub fn user_sequences(records: &[Interaction]) -> BTreeMap<UserId, Vec<ItemId>> {
    let mut by_user: BTreeMap<UserId, Vec<(i64, ItemId)>> = BTreeMap::new();
    for r in records {
        by_user.entry(r.user).or_default().push((r.ts, r.item));
    }
    by_user
        .into_iter()
        .map(|(u, mut v)| {
            v.sort_by_key(|&(ts, _)| ts);
            (u, v.into_iter().map(|(_, i)| i).collect())
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PerturbationKind {
    Disordered,
    Mismatched,
    MissingImage,
    MissingText,
    MissingMix,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerturbationConfig {
    pub kind: PerturbationKind,
    pub ratio: f64,
    pub seed: u64,
    /// Mismatched only: displace image and text independently instead of
    /// moving both vectors of an item as a unit.
    #[serde(default)]
    pub per_channel: bool,
}

impl PerturbationConfig {
    pub fn new(kind: PerturbationKind, ratio: f64, seed: u64) -> Self {
        Self {
            kind,
            ratio,
            seed,
            per_channel: false,
        }
    }
}

/// Applies one perturbation. `ratio` is the fraction of data points
/// (Disordered) or catalog items (all other kinds) affected; the affected
/// count is `round(ratio · n)`.
pub fn perturb(
    split: &SplitDataset,
    features: &Features,
    cfg: &PerturbationConfig,
) -> Result<(SplitDataset, Features)> {
    if !(0.0..=1.0).contains(&cfg.ratio) {
        return Err(Error::InvalidArgument(format!(
            "perturbation ratio must lie in [0, 1], got {}",
            cfg.ratio
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut split = split.clone();
    let mut features = features.clone();
    match cfg.kind {
        PerturbationKind::Disordered => {
            let n = split.train.len() + split.test.len();
            let chosen = sample_sorted(&mut rng, n, cfg.ratio);
            let ntrain = split.train.len();
            for i in chosen {
                let p = if i < ntrain {
                    &mut split.train[i]
                } else {
                    &mut split.test[i - ntrain]
                };
                p.prefix.shuffle(&mut rng);
            }
        }
        PerturbationKind::Mismatched => {
            let items = &split.catalog;
            let chosen = sample_sorted(&mut rng, items.len(), cfg.ratio);
            let chosen: Vec<ItemId> = chosen.into_iter().map(|i| items[i]).collect();
            if cfg.per_channel {
                for c in Channel::ALL {
                    let mapping = displacement(&mut rng, &chosen, items);
                    if let Some(t) = features.channel_mut(c) {
                        displace(t, &mapping);
                    }
                }
            } else {
                let mapping = displacement(&mut rng, &chosen, items);
                for c in Channel::ALL {
                    if let Some(t) = features.channel_mut(c) {
                        displace(t, &mapping);
                    }
                }
            }
        }
        PerturbationKind::MissingImage | PerturbationKind::MissingText => {
            let c = if cfg.kind == PerturbationKind::MissingImage {
                Channel::Image
            } else {
                Channel::Text
            };
            drop_channel(&mut rng, &split.catalog, &mut features, c, cfg.ratio);
        }
        PerturbationKind::MissingMix => {
            for c in Channel::ALL {
                drop_channel(&mut rng, &split.catalog, &mut features, c, cfg.ratio);
            }
        }
    }
    Ok((split, features))
}

fn drop_channel(
    rng: &mut ChaCha8Rng,
    items: &[ItemId],
    features: &mut Features,
    c: Channel,
    ratio: f64,
) {
    let chosen = sample_sorted(rng, items.len(), ratio);
    if let Some(t) = features.channel_mut(c) {
        for i in chosen {
            t.remove(items[i]);
        }
    }
}

/// `round(ratio · n)` indices from one seeded permutation, so for a fixed
/// seed the chosen sets are nested across ratios.
fn sample_sorted(rng: &mut ChaCha8Rng, n: usize, ratio: f64) -> Vec<usize> {
    let k = libm::round(ratio * n as f64) as usize;
    let mut v: Vec<usize> = (0..n).collect();
    v.shuffle(rng);
    v.truncate(k.min(n));
    v.sort_unstable();
    v
}

/// `(receiver, donor)` pairs: every chosen item receives another item's
/// vectors. Chosen items are cycled among themselves; a lone chosen item
/// takes a random other catalog item's vectors.
fn displacement(rng: &mut ChaCha8Rng, chosen: &[ItemId], catalog: &[ItemId]) -> Vec<(ItemId, ItemId)> {
    match chosen.len() {
        0 => Vec::new(),
        1 => {
            if catalog.len() < 2 {
                return Vec::new();
            }
            let me = chosen[0];
            let donor = loop {
                let d = catalog[rng.gen_range(0..catalog.len())];
                if d != me {
                    break d;
                }
            };
            vec![(me, donor), (donor, me)]
        }
        n => {
            let mut order = chosen.to_vec();
            order.shuffle(rng);
            (0..n).map(|t| (order[t], order[(t + 1) % n])).collect()
        }
    }
}

fn displace(table: &mut FeatureTable, mapping: &[(ItemId, ItemId)]) {
    let snapshot: Vec<(ItemId, Option<Vec<f64>>)> = mapping
        .iter()
        .map(|&(recv, donor)| (recv, table.get(donor).map(<[f64]>::to_vec)))
        .collect();
    for (recv, v) in snapshot {
        match v {
            Some(v) => {
                table.entries.insert(recv, v);
            }
            None => {
                table.entries.remove(&recv);
            }
        }
    }
}

/// How the synthetic next item depends on the current one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PlantedRule {
    /// Next item is `successor[cluster(current)]`; both modality channels
    /// reflect the same latent cluster.
    Cluster,
    /// Two channel-specific rules. Every item has an image cluster and an
    /// independent text cluster. Along a sequence the image clusters follow
    /// a fixed cycle (an intra-channel sequential pattern), and the next
    /// item is a fixed representative of the catalog items with image
    /// cluster `succ(image(current))` and text cluster
    /// `π_{image(current)}(text(current))`, where every image cluster has
    /// its own permutation `π` of text clusters (a cross-channel matching
    /// pattern).
    DualPattern,
}

/// Parameters of the planted-rule generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub users: usize,
    pub items: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub feature_dim: usize,
    pub clusters: usize,
    /// Probability that a transition ignores the rule and jumps uniformly.
    pub noise: f64,
    /// Standard deviation of per-coordinate feature noise around the unit
    /// cluster mean, scaled by `1/√dim`.
    pub spread: f64,
    pub rule: PlantedRule,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            users: 500,
            items: 200,
            min_len: 5,
            max_len: 15,
            feature_dim: 64,
            clusters: 20,
            noise: 0.1,
            spread: 0.3,
            rule: PlantedRule::Cluster,
            seed: 7,
        }
    }
}

/// Output of [`synthesize`]; the latent structure is kept so tests can
/// audit rule adherence and compute the Bayes-optimal predictor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthData {
    pub records: Vec<Interaction>,
    pub features: Features,
    pub image_cluster: Vec<usize>,
    pub text_cluster: Vec<usize>,
    /// Rule successor of every item (`None` when the rule is undefined for
    /// that item's cluster combination).
    pub successor: Vec<Option<ItemId>>,
}

impl SynthData {
    /// Whether `cur → next` follows the planted rule.
    pub fn obeys(&self, cur: ItemId, next: ItemId) -> bool {
        self.successor[cur.0 as usize] == Some(next)
    }
}

pub fn synthesize(spec: &SynthSpec) -> Result<SynthData> {
    if spec.clusters == 0 || spec.clusters > spec.items {
        return Err(Error::Infeasible(format!(
            "{} clusters for {} items",
            spec.clusters, spec.items
        )));
    }
    if spec.users == 0 || spec.min_len < 2 || spec.max_len < spec.min_len {
        return Err(Error::Infeasible("invalid user count or length range".into()));
    }
    if !(0.0..=1.0).contains(&spec.noise) || spec.feature_dim == 0 {
        return Err(Error::Infeasible("noise must lie in [0, 1] and dim > 0".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.items;
    let c = spec.clusters;

    let (image_cluster, text_cluster, successor) = match spec.rule {
        PlantedRule::Cluster => {
            // Balanced random cluster sizes.
            let mut z: Vec<usize> = (0..n).map(|i| i % c).collect();
            z.shuffle(&mut rng);
            let succ_of_cluster: Vec<ItemId> =
                (0..c).map(|_| ItemId(rng.gen_range(0..n) as u32)).collect();
            let successor: Vec<Option<ItemId>> = z.iter().map(|&k| Some(succ_of_cluster[k])).collect();
            (z.clone(), z, successor)
        }
        PlantedRule::DualPattern => {
            // Every (image, text) cluster pair is held by at least one item
            // when items ≥ clusters².
            if n < c * c {
                return Err(Error::Infeasible(format!(
                    "dual pattern needs items ≥ clusters² ({} < {})",
                    n,
                    c * c
                )));
            }
            let mut pairs: Vec<(usize, usize)> =
                (0..n).map(|i| ((i % (c * c)) / c, i % c)).collect();
            pairs.shuffle(&mut rng);
            let za: Vec<usize> = pairs.iter().map(|p| p.0).collect();
            let zb: Vec<usize> = pairs.iter().map(|p| p.1).collect();
            let mut cycle: Vec<usize> = (0..c).collect();
            cycle.shuffle(&mut rng);
            let mut next_image = vec![0; c];
            for t in 0..c {
                next_image[cycle[t]] = cycle[(t + 1) % c];
            }
            // One permutation of text clusters per image cluster, so the
            // pair map (a, b) -> (succ(a), text_map[a][b]) is a bijection and
            // no pair attracts a disproportionate share of the traffic.
            let mut text_map: Vec<usize> = Vec::with_capacity(c * c);
            for _ in 0..c {
                let mut perm: Vec<usize> = (0..c).collect();
                perm.shuffle(&mut rng);
                text_map.extend(perm);
            }
            // Representative item for each (image, text) pair.
            let mut rep: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
            for i in 0..n {
                rep.entry((za[i], zb[i])).or_default().push(i);
            }
            let choice: BTreeMap<(usize, usize), usize> = rep
                .into_iter()
                .map(|(k, v)| (k, v[rng.gen_range(0..v.len())]))
                .collect();
            let successor: Vec<Option<ItemId>> = (0..n)
                .map(|i| {
                    let a = next_image[za[i]];
                    let b = text_map[za[i] * c + zb[i]];
                    choice.get(&(a, b)).map(|&j| ItemId(j as u32))
                })
                .collect();
            (za, zb, successor)
        }
    };

    let means_a = random_unit_vectors(&mut rng, c, spec.feature_dim);
    let means_b = random_unit_vectors(&mut rng, c, spec.feature_dim);
    let mut image = FeatureTable::new(Channel::Image, spec.feature_dim)?;
    let mut text = FeatureTable::new(Channel::Text, spec.feature_dim)?;
    let scale = spec.spread / libm::sqrt(spec.feature_dim as f64);
    for i in 0..n {
        let va = noisy(&mut rng, &means_a[image_cluster[i]], scale);
        let vb = noisy(&mut rng, &means_b[text_cluster[i]], scale);
        image.insert(ItemId(i as u32), va)?;
        text.insert(ItemId(i as u32), vb)?;
    }

    let mut records = Vec::new();
    for u in 0..spec.users {
        let len = rng.gen_range(spec.min_len..=spec.max_len);
        let mut cur = ItemId(rng.gen_range(0..n) as u32);
        for t in 0..len {
            records.push(Interaction {
                user: UserId(u as u32),
                item: cur,
                ts: t as i64,
            });
            let follow = rng.gen::<f64>() >= spec.noise;
            cur = match (follow, successor[cur.0 as usize]) {
                (true, Some(next)) => next,
                _ => ItemId(rng.gen_range(0..n) as u32),
            };
        }
    }

    Ok(SynthData {
        records,
        features: Features {
            image: Some(image),
            text: Some(text),
        },
        image_cluster,
        text_cluster,
        successor,
    })
}

/// Standard normal sample (Box–Muller).
pub fn gaussian(rng: &mut impl Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen();
    libm::sqrt(-2.0 * libm::log(u1)) * libm::cos(core::f64::consts::TAU * u2)
}

fn random_unit_vectors(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| {
            let v: Vec<f64> = (0..dim).map(|_| gaussian(rng)).collect();
            let norm = libm::sqrt(v.iter().map(|x| x * x).sum::<f64>());
            v.into_iter().map(|x| x / norm).collect()
        })
        .collect()
}

fn noisy(rng: &mut ChaCha8Rng, mean: &[f64], scale: f64) -> Vec<f64> {
    mean.iter().map(|m| m + scale * gaussian(rng)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(user: u32, item: u32, ts: i64) -> Interaction {
        Interaction {
            user: UserId(user),
            item: ItemId(item),
            ts,
        }
    }

    /// Rescans the whole record list until a full pass removes nothing.
    fn filter_oracle(records: &[Interaction], min: usize) -> BTreeSet<(u32, u32, i64)> {
        let mut keep = records.to_vec();
        let mut changed = true;
        while changed {
            changed = false;
            let mut i = 0;
            while i < keep.len() {
                let r = keep[i];
                let uc = keep.iter().filter(|x| x.user == r.user).count();
                let ic = keep.iter().filter(|x| x.item == r.item).count();
                if uc < min || ic < min {
                    keep.remove(i);
                    changed = true;
                } else {
                    i += 1;
                }
            }
        }
        keep.iter().map(|r| (r.user.0, r.item.0, r.ts)).collect()
    }

    #[test]
    fn core_filter_identity_when_dense() {
        let mut recs = Vec::new();
        for u in 0..5 {
            for i in 0..5 {
                recs.push(rec(u, i, i as i64));
            }
        }
        assert_eq!(core_filter(&recs, 5), recs);
    }

    #[test]
    fn core_filter_drops_short_user() {
        let recs: Vec<_> = (0..4).map(|i| rec(0, i, i as i64)).collect();
        assert!(core_filter(&recs, 5).is_empty());
    }

    #[test]
    fn core_filter_cascade_matches_rescan_oracle() {
        // Users 0..4 share items 0..4 (dense block). User 5 has items 0..3
        // plus item 9; item 9 is also used by users 6..8 only, so item 9
        // has 4 interactions, which drops user 5 to 4 interactions, etc.
        let mut recs = Vec::new();
        for u in 0..5 {
            for i in 0..5 {
                recs.push(rec(u, i, i as i64));
            }
        }
        for i in 0..4 {
            recs.push(rec(5, i, i as i64));
        }
        recs.push(rec(5, 9, 10));
        for u in 6..9 {
            recs.push(rec(u, 9, 0));
            for i in 10..14 {
                recs.push(rec(u, i, i as i64));
            }
        }
        let got: BTreeSet<_> = core_filter(&recs, 5)
            .iter()
            .map(|r| (r.user.0, r.item.0, r.ts))
            .collect();
        assert_eq!(got, filter_oracle(&recs, 5));
        assert!(got.iter().all(|&(u, _, _)| u < 5));
    }

    #[test]
    fn split_example() {
        let recs: Vec<_> = (0..5).map(|i| rec(0, i, i as i64)).collect();
        let s = split_sequences(&recs, 0.2, 5).unwrap();
        assert_eq!(s.test.len(), 1);
        assert_eq!(s.test[0].prefix, vec![ItemId(0), ItemId(1), ItemId(2), ItemId(3)]);
        assert_eq!(s.test[0].target, ItemId(4));
        assert_eq!(s.train.len(), 3);
    }

    #[test]
    fn split_excludes_short_users() {
        let mut recs: Vec<_> = (0..4).map(|i| rec(0, i, i as i64)).collect();
        recs.extend((0..6).map(|i| rec(1, i, i as i64)));
        let s = split_sequences(&recs, 0.2, 5).unwrap();
        assert!(s.train.iter().chain(&s.test).all(|p| p.user == UserId(1)));
        assert!(split_sequences(&recs[..4], 0.2, 5).is_err());
    }

    #[test]
    fn split_ties_keep_input_order() {
        let recs = vec![rec(0, 3, 1), rec(0, 1, 0), rec(0, 2, 1), rec(0, 4, 1), rec(0, 5, 2)];
        let s = split_sequences(&recs, 0.2, 5).unwrap();
        let ids: Vec<u32> = s.test[0].prefix.iter().map(|i| i.0).collect();
        assert_eq!(ids, vec![1, 3, 2, 4]);
    }

    #[test]
    fn perturb_zero_ratio_is_identity() {
        let data = synthesize(&SynthSpec {
            users: 20,
            ..SynthSpec::default()
        })
        .unwrap();
        let split = split_sequences(&data.records, 0.2, 5).unwrap();
        for kind in [
            PerturbationKind::Disordered,
            PerturbationKind::Mismatched,
            PerturbationKind::MissingImage,
            PerturbationKind::MissingText,
            PerturbationKind::MissingMix,
        ] {
            let (s, f) = perturb(&split, &data.features, &PerturbationConfig::new(kind, 0.0, 3)).unwrap();
            assert_eq!(s, split);
            assert_eq!(f, data.features);
        }
    }

    #[test]
    fn missing_image_half_of_hundred() {
        let data = synthesize(&SynthSpec {
            users: 200,
            items: 100,
            clusters: 10,
            noise: 1.0,
            ..SynthSpec::default()
        })
        .unwrap();
        let split = SplitDataset {
            train: vec![],
            test: vec![],
            catalog: (0..100).map(ItemId).collect(),
        };
        let cfg = PerturbationConfig::new(PerturbationKind::MissingImage, 0.5, 11);
        let (_, f) = perturb(&split, &data.features, &cfg).unwrap();
        assert_eq!(100 - f.image.as_ref().unwrap().len(), 50);
        assert_eq!(f.text.as_ref().unwrap().len(), 100);
    }

    #[test]
    fn mismatched_displaces_exactly_the_chosen_items() {
        let data = synthesize(&SynthSpec::default()).unwrap();
        let split = split_sequences(&data.records, 0.2, 5).unwrap();
        let cfg = PerturbationConfig::new(PerturbationKind::Mismatched, 0.3, 5);
        let (s, f) = perturb(&split, &data.features, &cfg).unwrap();
        assert_eq!(s, split);
        let moved = split
            .catalog
            .iter()
            .filter(|&&i| f.image.as_ref().unwrap().get(i) != data.features.image.as_ref().unwrap().get(i))
            .count();
        let expected = libm::round(0.3 * split.catalog.len() as f64) as usize;
        assert_eq!(moved, expected);
        // Joint displacement keeps image and text of a receiver from the same donor.
        for &i in &split.catalog {
            let img = f.image.as_ref().unwrap().get(i).unwrap();
            let donor = data
                .features
                .image
                .as_ref()
                .unwrap()
                .iter()
                .find(|(_, v)| *v == img)
                .unwrap()
                .0;
            assert_eq!(f.text.as_ref().unwrap().get(i), data.features.text.as_ref().unwrap().get(donor));
        }
    }

    #[test]
    fn synth_noiseless_rule_holds_everywhere() {
        let data = synthesize(&SynthSpec {
            noise: 0.0,
            ..SynthSpec::default()
        })
        .unwrap();
        for seq in user_sequences(&data.records).values() {
            for w in seq.windows(2) {
                assert!(data.obeys(w[0], w[1]));
            }
        }
    }

    #[test]
    fn synth_rejects_infeasible() {
        let spec = SynthSpec {
            clusters: 300,
            ..SynthSpec::default()
        };
        assert!(matches!(synthesize(&spec), Err(Error::Infeasible(_))));
    }
}
