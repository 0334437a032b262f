//! On-disk formats: JSON-lines interactions, binary feature tables,
//! checkpoints and JSON artifacts.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use mmsr_core::dataset::{Channel, FeatureTable, Interaction, ItemId, UserId};
use mmsr_core::optim::ParamStore;
use mmsr_core::Matrix;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{AppError, AppResult};

pub const FEATURE_MAGIC: &[u8; 8] = b"MMSRFEAT";
pub const CHECKPOINT_MAGIC: &[u8; 8] = b"MMSRCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;
pub const ARTIFACT_VERSION: &str = concat!("mmsr/", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct RawInteraction {
    user: String,
    item: String,
    ts: i64,
}

/// String identifiers of users and items, indexed by their numeric ids.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdMaps {
    pub users: Vec<String>,
    pub items: Vec<String>,
}

impl IdMaps {
    pub fn item_index(&self) -> BTreeMap<&str, ItemId> {
        self.items
            .iter()
            .enumerate()
            .map(|(i, s)| (s.as_str(), ItemId(i as u32)))
            .collect()
    }
}

/// Parses JSON-lines interactions. Ids are numbered in sorted string order.
/// Blank lines are skipped; malformed lines are reported with their
/// 1-based line number.
pub fn parse_interactions(reader: impl BufRead) -> AppResult<(Vec<Interaction>, IdMaps)> {
    let mut raw = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let r: RawInteraction = serde_json::from_str(&line)
            .map_err(|e| AppError::Input(format!("interactions line {}: {e}", n + 1)))?;
        raw.push(r);
    }
    if raw.is_empty() {
        return Err(AppError::Input("interactions file has no records".into()));
    }
    let index = |f: fn(&RawInteraction) -> &String| -> BTreeMap<String, u32> {
        let mut keys: Vec<&String> = raw.iter().map(f).collect();
        keys.sort();
        keys.dedup();
        keys.into_iter()
            .enumerate()
            .map(|(i, k)| (k.clone(), i as u32))
            .collect()
    };
    let users = index(|r| &r.user);
    let items = index(|r| &r.item);
    let records = raw
        .iter()
        .map(|r| Interaction {
            user: UserId(users[&r.user]),
            item: ItemId(items[&r.item]),
            ts: r.ts,
        })
        .collect();
    let maps = IdMaps {
        users: users.into_keys().collect(),
        items: items.into_keys().collect(),
    };
    Ok((records, maps))
}

pub fn read_interactions(path: &Path) -> AppResult<(Vec<Interaction>, IdMaps)> {
    let f = open(path)?;
    parse_interactions(BufReader::new(f))
}

pub fn write_interactions(path: &Path, records: &[Interaction], ids: &IdMaps) -> AppResult<()> {
    let mut w = BufWriter::new(create(path)?);
    for r in records {
        let raw = RawInteraction {
            user: ids.users[r.user.0 as usize].clone(),
            item: ids.items[r.item.0 as usize].clone(),
            ts: r.ts,
        };
        serde_json::to_writer(&mut w, &raw).map_err(AppError::from_json)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Rows of a binary feature file: `(index into the id map, vector)`.
pub type FeatureRecords = Vec<(u32, Vec<f32>)>;

pub fn encode_features(dim: usize, records: &[(u32, Vec<f32>)]) -> AppResult<Vec<u8>> {
    let mut out = Vec::with_capacity(16 + records.len() * (4 + 4 * dim));
    out.extend_from_slice(FEATURE_MAGIC);
    out.extend_from_slice(&u32::try_from(records.len()).map_err(too_large)?.to_le_bytes());
    out.extend_from_slice(&u32::try_from(dim).map_err(too_large)?.to_le_bytes());
    for (idx, v) in records {
        if v.len() != dim {
            return Err(AppError::Input(format!(
                "feature record {idx} has {} values, expected {dim}",
                v.len()
            )));
        }
        out.extend_from_slice(&idx.to_le_bytes());
        for x in v {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_features(bytes: &[u8]) -> AppResult<(usize, FeatureRecords)> {
    let mut r = Cursor::new(bytes, "feature file");
    if r.take(8)? != FEATURE_MAGIC {
        return Err(AppError::Input("feature file: bad magic".into()));
    }
    let count = r.u32()? as usize;
    let dim = r.u32()? as usize;
    let mut records = Vec::with_capacity(count.min(1 << 20));
    for _ in 0..count {
        let idx = r.u32()?;
        let v = (0..dim).map(|_| r.f32()).collect::<AppResult<Vec<_>>>()?;
        records.push((idx, v));
    }
    r.finish()?;
    Ok((dim, records))
}

/// Writes a feature table as `<stem>.feat` plus the `<stem>.ids.json`
/// sidecar of item identifiers.
pub fn write_feature_table(dir: &Path, stem: &str, table: &FeatureTable, ids: &IdMaps) -> AppResult<()> {
    let mut names = Vec::with_capacity(table.len());
    let mut records = Vec::with_capacity(table.len());
    for (i, (item, v)) in table.iter().enumerate() {
        names.push(ids.items[item.0 as usize].clone());
        records.push((i as u32, v.iter().map(|&x| x as f32).collect()));
    }
    std::fs::write(
        dir.join(format!("{stem}.feat")),
        encode_features(table.dim(), &records)?,
    )?;
    write_json(&dir.join(format!("{stem}.ids.json")), &names)
}

/// Reads `path` and its sidecar (`<stem>.ids.json` next to `<stem>.feat`).
/// Identifiers unknown to `ids` are ignored.
pub fn read_feature_table(path: &Path, channel: Channel, ids: &IdMaps) -> AppResult<FeatureTable> {
    let (dim, records) = decode_features(&read_bytes(path)?)?;
    let sidecar = path.with_extension("ids.json");
    let names: Vec<String> = read_json(&sidecar)?;
    let index = ids.item_index();
    let mut table = FeatureTable::new(channel, dim)?;
    for (idx, v) in records {
        let name = names.get(idx as usize).ok_or_else(|| {
            AppError::Input(format!(
                "{}: index {idx} outside the {} sidecar ids",
                path.display(),
                names.len()
            ))
        })?;
        if let Some(&item) = index.get(name.as_str()) {
            table.insert(item, v.into_iter().map(f64::from).collect())?;
        }
    }
    Ok(table)
}

/// A dense matrix in the feature format, one record per row.
pub fn write_matrix(path: &Path, m: &Matrix) -> AppResult<()> {
    let records: FeatureRecords = (0..m.rows())
        .map(|r| (r as u32, m.row(r).iter().map(|&x| x as f32).collect()))
        .collect();
    std::fs::write(path, encode_features(m.cols(), &records)?)?;
    Ok(())
}

pub fn read_matrix(path: &Path) -> AppResult<Matrix> {
    let (dim, mut records) = decode_features(&read_bytes(path)?)?;
    records.sort_by_key(|r| r.0);
    if records.iter().enumerate().any(|(i, r)| r.0 as usize != i) {
        return Err(AppError::Input(format!("{}: rows are not 0..n", path.display())));
    }
    let rows = records.len();
    let data = records
        .into_iter()
        .flat_map(|(_, v)| v.into_iter().map(f64::from))
        .collect();
    Ok(Matrix::from_vec(rows, dim, data))
}

/// Every tensor of `store` in order: name, rank 2, dims, `f32` data.
pub fn encode_checkpoint(store: &ParamStore) -> AppResult<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&u32::try_from(store.len()).map_err(too_large)?.to_le_bytes());
    for (name, m) in store.iter() {
        out.extend_from_slice(&u32::try_from(name.len()).map_err(too_large)?.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&2u32.to_le_bytes());
        for d in [m.rows(), m.cols()] {
            out.extend_from_slice(&u32::try_from(d).map_err(too_large)?.to_le_bytes());
        }
        for &x in m.data() {
            out.extend_from_slice(&(x as f32).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> AppResult<Vec<(String, Matrix)>> {
    let mut r = Cursor::new(bytes, "checkpoint");
    if r.take(8)? != CHECKPOINT_MAGIC {
        return Err(AppError::Input("checkpoint: bad magic".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(AppError::Input(format!("checkpoint: unsupported version {version}")));
    }
    let n = r.u32()? as usize;
    let mut out = Vec::with_capacity(n.min(1024));
    for _ in 0..n {
        let len = r.u32()? as usize;
        let name = String::from_utf8(r.take(len)?.to_vec())
            .map_err(|_| AppError::Input("checkpoint: tensor name is not UTF-8".into()))?;
        let rank = r.u32()? as usize;
        let dims = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<AppResult<Vec<_>>>()?;
        let (rows, cols) = match dims[..] {
            [c] => (1, c),
            [rw, c] => (rw, c),
            _ => {
                return Err(AppError::Input(format!(
                    "checkpoint: tensor {name} has rank {rank}"
                )))
            }
        };
        let data = (0..rows * cols)
            .map(|_| r.f32().map(f64::from))
            .collect::<AppResult<Vec<_>>>()?;
        out.push((name, Matrix::from_vec(rows, cols, data)));
    }
    r.finish()?;
    Ok(out)
}

/// Overwrites every tensor of `store` with the checkpoint's tensor of the
/// same name. Missing names, extra names and shape mismatches are errors.
pub fn load_into(store: &mut ParamStore, tensors: Vec<(String, Matrix)>) -> AppResult<()> {
    if tensors.len() != store.len() {
        return Err(AppError::Input(format!(
            "checkpoint has {} tensors, model has {}",
            tensors.len(),
            store.len()
        )));
    }
    for (name, m) in tensors {
        let id = store
            .id(&name)
            .ok_or_else(|| AppError::Input(format!("checkpoint tensor {name} unknown to the model")))?;
        let slot = store.get_mut(id);
        if slot.shape() != m.shape() {
            return Err(AppError::Input(format!(
                "checkpoint tensor {name}: shape {:?}, model expects {:?}",
                m.shape(),
                slot.shape()
            )));
        }
        *slot = m;
    }
    Ok(())
}

/// Rounds every parameter to `f32`, so an in-memory model matches its
/// reloaded checkpoint exactly.
pub fn round_to_f32(store: &mut ParamStore) {
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        for x in store.get_mut(id).data_mut() {
            *x = f64::from(*x as f32);
        }
    }
}

/// JSON artifact with the metadata every output carries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifact<C, T> {
    pub artifact_version: String,
    pub seed: u64,
    pub config: C,
    pub data: T,
}

impl<C, T> Artifact<C, T> {
    pub fn new(seed: u64, config: C, data: T) -> Self {
        Self {
            artifact_version: ARTIFACT_VERSION.to_string(),
            seed,
            config,
            data,
        }
    }
}

pub fn to_json_pretty<T: Serialize>(value: &T) -> AppResult<String> {
    let mut s = serde_json::to_string_pretty(value).map_err(AppError::from_json)?;
    s.push('\n');
    Ok(s)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> AppResult<()> {
    std::fs::write(path, to_json_pretty(value)?)?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> AppResult<T> {
    let f = open(path)?;
    serde_json::from_reader(BufReader::new(f))
        .map_err(|e| AppError::Input(format!("{}: {e}", path.display())))
}

/// Writes one JSON object per line.
pub fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> AppResult<()> {
    let mut w = BufWriter::new(create(path)?);
    for r in rows {
        serde_json::to_writer(&mut w, r).map_err(AppError::from_json)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_csv<S: Serialize>(path: &Path, rows: &[S]) -> AppResult<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_error)?;
    for r in rows {
        w.serialize(r).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_bytes(path: &Path) -> AppResult<Vec<u8>> {
    let mut buf = Vec::new();
    open(path)?.read_to_end(&mut buf)?;
    Ok(buf)
}

fn open(path: &Path) -> AppResult<File> {
    File::open(path).map_err(|e| AppError::Input(format!("cannot open {}: {e}", path.display())))
}

fn create(path: &Path) -> AppResult<File> {
    File::create(path).map_err(|e| AppError::Input(format!("cannot create {}: {e}", path.display())))
}

fn too_large(_: std::num::TryFromIntError) -> AppError {
    AppError::Input("value does not fit in u32".into())
}

fn csv_error(e: csv::Error) -> AppError {
    AppError::Runtime(format!("csv: {e}"))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    what: &'static str,
}

impl<'a> Cursor<'a> {
    fn new(bytes: &'a [u8], what: &'static str) -> Self {
        Self { bytes, pos: 0, what }
    }

    fn take(&mut self, n: usize) -> AppResult<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| AppError::Input(format!("{}: truncated", self.what)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> AppResult<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f32(&mut self) -> AppResult<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn finish(&self) -> AppResult<()> {
        if self.pos == self.bytes.len() {
            Ok(())
        } else {
            Err(AppError::Input(format!(
                "{}: {} trailing bytes",
                self.what,
                self.bytes.len() - self.pos
            )))
        }
    }
}
