//! The pipeline stages behind the CLI subcommands. Every stage reads its
//! inputs from the work directory, writes its artifacts there and returns a
//! one-line summary.

use std::path::PathBuf;

use mmsr_core::dataset::{
    core_filter, split_sequences, synthesize, Channel, DataPoint, Features, ItemId, SplitDataset, SynthSpec, UserId,
};
use mmsr_core::metrics::MetricReport;
use mmsr_core::model::{GraphModel, Recommender};
use mmsr_core::msgraph::MsGraph;
use mmsr_core::quantizer::{ChannelQuantizer, LinearAutoencoder, ModalityCodebook};
use mmsr_core::training::TrainReport;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{AppError, AppResult};
use crate::experiments::{run_ablation, run_ck_sweep, run_robustness, AblationRow, CurvePoint, SweepResult};
use crate::io::{
    decode_checkpoint, encode_checkpoint, load_into, read_bytes, read_feature_table, read_interactions,
    read_json, read_matrix, round_to_f32, write_csv, write_feature_table, write_interactions, write_json,
    write_jsonl, write_matrix, Artifact, IdMaps,
};
use crate::pipeline::{eval_perturbed, fit, par_evaluate, quantize, ModelKind, Quantized, Trained};

pub const SPLIT: &str = "split.json";
pub const MANIFEST: &str = "manifest.json";
pub const INTERACTIONS: &str = "interactions.jsonl";
pub const CHECKPOINT: &str = "model.ckpt";
pub const TRAIN_REPORT: &str = "train.json";
pub const TRAIN_LOG: &str = "train_log.jsonl";
pub const METRICS: &str = "metrics.json";
pub const BETA: &str = "beta.json";
pub const ABLATION_JSON: &str = "ablation.json";
pub const ABLATION_CSV: &str = "ablation.csv";
pub const ROBUST_JSON: &str = "robustness.json";
pub const CURVES_CSV: &str = "curves.csv";
pub const SWEEP_JSON: &str = "sweep.json";
pub const SWEEP_CSV: &str = "sweep.csv";

fn stem(c: Channel) -> &'static str {
    match c {
        Channel::Image => "image",
        Channel::Text => "text",
    }
}

fn codebook_file(c: Channel) -> String {
    format!("codebook_{}.json", stem(c))
}

fn ae_files(c: Channel) -> [String; 2] {
    [
        format!("ae_{}.encode.feat", stem(c)),
        format!("ae_{}.decode.feat", stem(c)),
    ]
}

/// Work directory holding every artifact of one pipeline.
#[derive(Debug, Clone)]
pub struct Workspace {
    pub dir: PathBuf,
}

impl Workspace {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    fn create(&self) -> AppResult<()> {
        std::fs::create_dir_all(&self.dir)
            .map_err(|e| AppError::Input(format!("cannot create {}: {e}", self.dir.display())))
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    /// Path of an upstream artifact, or a "run `stage` first" error.
    fn need(&self, name: &str, stage: &str) -> AppResult<PathBuf> {
        let p = self.path(name);
        if p.exists() {
            Ok(p)
        } else {
            Err(AppError::run_first(stage, &p))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prepared {
    pub ids: IdMaps,
    pub split: SplitDataset,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub synth: Option<SynthSpec>,
    /// Record filters in the order they were applied.
    pub filters: Vec<String>,
    pub n_records: usize,
    pub n_users: usize,
    pub n_items: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub files: Vec<String>,
}

/// Loads or synthesizes interactions and features, filters, splits and
/// copies everything into the work directory.
pub fn prepare(ws: &Workspace, cfg: &RunConfig, synth: Option<&SynthSpec>) -> AppResult<String> {
    cfg.validate()?;
    let (records, ids, features) = match synth {
        Some(spec) => {
            let data = synthesize(spec)?;
            let users = data.records.iter().map(|r| r.user.0).max().map_or(0, |u| u + 1);
            let ids = IdMaps {
                users: (0..users).map(|u| format!("u{u:05}")).collect(),
                items: (0..spec.items).map(|i| format!("i{i:05}")).collect(),
            };
            (data.records, ids, data.features)
        }
        None => {
            let path = cfg.data.interactions.as_ref().ok_or_else(|| {
                AppError::Input("no interactions file configured (data.interactions) and no --synth spec".into())
            })?;
            let (records, ids) = read_interactions(path)?;
            let mut features = Features::default();
            for (c, p) in [
                (Channel::Image, &cfg.data.image_features),
                (Channel::Text, &cfg.data.text_features),
            ] {
                if let Some(p) = p {
                    let t = read_feature_table(p, c, &ids)?;
                    match c {
                        Channel::Image => features.image = Some(t),
                        Channel::Text => features.text = Some(t),
                    }
                }
            }
            if features.image.is_none() && features.text.is_none() {
                return Err(AppError::Input(
                    "no feature file configured (data.image_features / data.text_features)".into(),
                ));
            }
            (records, ids, features)
        }
    };
    let filtered = core_filter(&records, cfg.data.core);
    let split = split_sequences(&filtered, cfg.data.test_frac, cfg.data.min_len)?;
    ws.create()?;

    let mut files = vec![INTERACTIONS.to_string(), SPLIT.to_string()];
    write_interactions(&ws.path(INTERACTIONS), &records, &ids)?;
    for c in Channel::ALL {
        if let Some(t) = features.channel(c) {
            write_feature_table(&ws.dir, stem(c), t, &ids)?;
            files.push(format!("{}.feat", stem(c)));
            files.push(format!("{}.ids.json", stem(c)));
        }
    }
    let users: std::collections::BTreeSet<UserId> = split.test.iter().map(|p| p.user).collect();
    let manifest = Manifest {
        synth: synth.cloned(),
        filters: vec![
            format!("core-{} (iterated)", cfg.data.core),
            format!("min-length-{}", cfg.data.min_len.max(3)),
        ],
        n_records: filtered.len(),
        n_users: users.len(),
        n_items: split.catalog.len(),
        n_train: split.train.len(),
        n_test: split.test.len(),
        files,
    };
    let summary = format!(
        "prepared {} users, {} items, {} train / {} test points in {}",
        manifest.n_users,
        manifest.n_items,
        manifest.n_train,
        manifest.n_test,
        ws.dir.display()
    );
    write_json(&ws.path(SPLIT), &Artifact::new(cfg.seed(), cfg, Prepared { ids, split }))?;
    write_json(&ws.path(MANIFEST), &Artifact::new(cfg.seed(), cfg, manifest))?;
    Ok(summary)
}

pub fn load_prepared(ws: &Workspace) -> AppResult<Prepared> {
    let a: Artifact<serde_json::Value, Prepared> = read_json(&ws.need(SPLIT, "prepare")?)?;
    Ok(a.data)
}

pub fn load_features(ws: &Workspace, ids: &IdMaps) -> AppResult<Features> {
    let mut f = Features::default();
    for c in Channel::ALL {
        let p = ws.path(&format!("{}.feat", stem(c)));
        if p.exists() {
            let t = read_feature_table(&p, c, ids)?;
            match c {
                Channel::Image => f.image = Some(t),
                Channel::Text => f.text = Some(t),
            }
        }
    }
    if f.image.is_none() && f.text.is_none() {
        return Err(AppError::run_first("prepare", &ws.path("image.feat")));
    }
    Ok(f)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodebookData {
    pub codebook: ModalityCodebook,
    pub ae_losses: Vec<f64>,
    pub kmeans_sse: Vec<f64>,
}

/// Fits the autoencoder and codebook of every present channel.
pub fn quantize_stage(ws: &Workspace, cfg: &RunConfig) -> AppResult<String> {
    cfg.validate()?;
    let prepared = load_prepared(ws)?;
    let features = load_features(ws, &prepared.ids)?;
    let q = quantize(&prepared.split, &features, &cfg.quantizer)?;
    let mut parts = Vec::new();
    for c in Channel::ALL {
        let Some(cq) = q.channel(c) else { continue };
        let [enc, dec] = ae_files(c);
        write_matrix(&ws.path(&enc), &cq.autoencoder.encode)?;
        write_matrix(&ws.path(&dec), &cq.autoencoder.decode)?;
        let data = CodebookData {
            codebook: cq.codebook.clone(),
            ae_losses: cq.ae_losses.clone(),
            kmeans_sse: cq.kmeans_sse.clone(),
        };
        write_json(&ws.path(&codebook_file(c)), &Artifact::new(cfg.seed(), cfg, data))?;
        parts.push(format!(
            "{}: {} codes, {} per item",
            stem(c),
            cq.codebook.c(),
            cq.codebook.k
        ));
    }
    Ok(format!("quantized {}", parts.join("; ")))
}

/// Quantizers as written by [`quantize_stage`]; encoders are read back from
/// their `f32` files.
pub fn load_quantized(ws: &Workspace) -> AppResult<Quantized> {
    let mut q = Quantized { image: None, text: None };
    let mut any = false;
    for c in Channel::ALL {
        let p = ws.path(&codebook_file(c));
        if !p.exists() {
            continue;
        }
        any = true;
        let a: Artifact<serde_json::Value, CodebookData> = read_json(&p)?;
        let [enc, dec] = ae_files(c);
        let cq = ChannelQuantizer {
            autoencoder: LinearAutoencoder {
                channel: c,
                encode: read_matrix(&ws.need(&enc, "quantize")?)?,
                decode: read_matrix(&ws.need(&dec, "quantize")?)?,
            },
            codebook: a.data.codebook,
            ae_losses: a.data.ae_losses,
            kmeans_sse: a.data.kmeans_sse,
        };
        cq.codebook.validate()?;
        match c {
            Channel::Image => q.image = Some(cq),
            Channel::Text => q.text = Some(cq),
        }
    }
    if !any {
        return Err(AppError::run_first("quantize", &ws.path(&codebook_file(Channel::Image))));
    }
    Ok(q)
}

/// Realized graph sizes over the test prefixes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphStats {
    pub graphs: usize,
    pub mean_nodes: f64,
    pub max_nodes: usize,
    pub mean_edges: f64,
    pub max_edges: usize,
}

pub fn graph_stats(model: &GraphModel, points: &[DataPoint]) -> AppResult<GraphStats> {
    let (mut nodes, mut edges, mut max_nodes, mut max_edges) = (0usize, 0usize, 0usize, 0usize);
    for p in points {
        let g = model.graph(&p.prefix)?;
        nodes += g.nodes.len();
        edges += g.edges.len();
        max_nodes = max_nodes.max(g.nodes.len());
        max_edges = max_edges.max(g.edges.len());
    }
    let n = points.len().max(1) as f64;
    Ok(GraphStats {
        graphs: points.len(),
        mean_nodes: nodes as f64 / n,
        max_nodes,
        mean_edges: edges as f64 / n,
        max_edges,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    #[serde(flatten)]
    pub report: TrainReport,
    pub graph_sizes: GraphStats,
}

/// Trains the graph model and writes the checkpoint, the per-epoch log and
/// the training report.
pub fn train_stage(ws: &Workspace, cfg: &RunConfig) -> AppResult<String> {
    cfg.validate()?;
    let prepared = load_prepared(ws)?;
    let q = load_quantized(ws)?;
    let (trained, report) = fit(ModelKind::Graph, &prepared.split, &q, &cfg.model)?;
    let Trained::Graph(mut model) = trained else {
        unreachable!("graph fit returns a graph model")
    };
    round_to_f32(&mut model.store);
    std::fs::write(ws.path(CHECKPOINT), encode_checkpoint(&model.store)?)?;
    write_jsonl(&ws.path(TRAIN_LOG), &report.log)?;
    let best = report
        .log
        .iter()
        .find(|e| e.epoch == report.best_epoch)
        .map_or(0.0, |e| e.val_hr5);
    let summary = format!(
        "trained {} for {} epochs: best epoch {}, val HR@5 {best:.4}",
        cfg.model.aggregator.name(),
        report.log.len(),
        report.best_epoch
    );
    let record = TrainRecord {
        graph_sizes: graph_stats(&model, &prepared.split.test)?,
        report,
    };
    write_json(&ws.path(TRAIN_REPORT), &Artifact::new(cfg.seed(), cfg, record))?;
    Ok(summary)
}

/// The trained model rebuilt from the training config and the checkpoint.
pub fn load_model(ws: &Workspace) -> AppResult<(GraphModel, RunConfig)> {
    let report: Artifact<RunConfig, TrainReport> = read_json(&ws.need(TRAIN_REPORT, "train")?)?;
    let ckpt = ws.need(CHECKPOINT, "train")?;
    let prepared = load_prepared(ws)?;
    let (image, text) = load_quantized(ws)?.codebooks();
    let train_cfg = report.config;
    let mut model = GraphModel::new(train_cfg.model.clone(), prepared.split.catalog.clone(), image, text)?;
    load_into(&mut model.store, decode_checkpoint(&read_bytes(&ckpt)?)?)?;
    Ok((model, train_cfg))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub train: RunConfig,
    pub ks: Vec<u32>,
    pub perturbation: Option<mmsr_core::dataset::PerturbationConfig>,
}

/// Gate weights of one test graph: per node, one `[hohe, heho]` pair per
/// layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphBeta {
    pub user: UserId,
    pub target: ItemId,
    pub nodes: Vec<NodeBeta>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeBeta {
    pub node_type: mmsr_core::msgraph::NodeType,
    pub id: u32,
    pub beta: Vec<[f64; 2]>,
}

/// Per-node gate weights of every test graph (empty unless the model
/// gates, i.e. uses the HAN aggregator).
pub fn gate_scores(model: &GraphModel, split: &SplitDataset) -> AppResult<Vec<GraphBeta>> {
    let mut out = Vec::with_capacity(split.test.len());
    for chunk in split.test.chunks(model.cfg.batch_size) {
        let graphs = chunk
            .iter()
            .map(|p| model.prepare(&p.prefix))
            .collect::<mmsr_core::Result<Vec<MsGraph>>>()?;
        let refs: Vec<&MsGraph> = graphs.iter().collect();
        let batch = model.batch(&refs);
        let (_, trace) = model.node_states(&batch);
        if trace.beta.is_empty() {
            return Ok(Vec::new());
        }
        let mut row = 0;
        for (p, g) in chunk.iter().zip(&graphs) {
            let nodes = g
                .nodes
                .iter()
                .enumerate()
                .map(|(i, n)| NodeBeta {
                    node_type: n.key.ntype,
                    id: n.key.id,
                    beta: trace
                        .beta
                        .iter()
                        .map(|b| [b.get(row + i, 0), b.get(row + i, 1)])
                        .collect(),
                })
                .collect();
            row += g.nodes.len();
            out.push(GraphBeta {
                user: p.user,
                target: p.target,
                nodes,
            });
        }
    }
    Ok(out)
}

/// Scores the test points (optionally perturbed) with the trained model.
pub fn eval_stage(ws: &Workspace, cfg: &RunConfig, export_beta: bool) -> AppResult<String> {
    let (model, train_cfg) = load_model(ws)?;
    let prepared = load_prepared(ws)?;
    let report: MetricReport = match &cfg.perturbation {
        None => par_evaluate(&model, &prepared.split.test, &cfg.ks)?,
        Some(p) => {
            let features = load_features(ws, &prepared.ids)?;
            let q = load_quantized(ws)?;
            eval_perturbed(&Trained::Graph(model.clone()), &prepared.split, &features, &q, p, &cfg.ks)?
        }
    };
    report.validate()?;
    if export_beta {
        let beta = gate_scores(&model, &prepared.split)?;
        write_json(&ws.path(BETA), &Artifact::new(train_cfg.seed(), &train_cfg, beta))?;
    }
    let summary = format!(
        "{} ({} points)",
        report
            .hr
            .keys()
            .map(|&k| format!("HR@{k} {:.4} MRR@{k} {:.4}", report.hr_at(k), report.mrr_at(k)))
            .collect::<Vec<_>>()
            .join(" "),
        report.n_points
    );
    let echo = EvalConfig {
        train: train_cfg.clone(),
        ks: cfg.ks.clone(),
        perturbation: cfg.perturbation,
    };
    write_json(&ws.path(METRICS), &Artifact::new(train_cfg.seed(), echo, report))?;
    Ok(summary)
}

/// Flat row of the ablation table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationCsvRow {
    pub variant: String,
    pub hr5: f64,
    pub mrr5: f64,
    pub hr20: f64,
    pub mrr20: f64,
    pub hetero_reads: usize,
}

pub fn ablate_stage(ws: &Workspace, cfg: &RunConfig) -> AppResult<String> {
    cfg.validate()?;
    let prepared = load_prepared(ws)?;
    let q = load_quantized(ws)?;
    let ks = with_table_ks(&cfg.ks);
    let rows: Vec<AblationRow> = run_ablation(&prepared.split, &q, &cfg.model, &ks)?;
    for r in &rows {
        r.report.validate()?;
    }
    let csv: Vec<AblationCsvRow> = rows
        .iter()
        .map(|r| AblationCsvRow {
            variant: r.variant.clone(),
            hr5: r.report.hr_at(5),
            mrr5: r.report.mrr_at(5),
            hr20: r.report.hr_at(20),
            mrr20: r.report.mrr_at(20),
            hetero_reads: r.hetero_reads,
        })
        .collect();
    write_csv(&ws.path(ABLATION_CSV), &csv)?;
    let best = csv
        .iter()
        .fold(&csv[0], |b, r| if r.hr5 > b.hr5 { r } else { b });
    let summary = format!(
        "ablation: {} variants, best {} HR@5 {:.4}",
        csv.len(),
        best.variant,
        best.hr5
    );
    write_json(&ws.path(ABLATION_JSON), &Artifact::new(cfg.seed(), cfg, rows))?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveCsvRow {
    pub ratio: f64,
    pub mode: crate::experiments::MissingMode,
    pub hr5: f64,
    pub mrr5: f64,
}

pub fn robust_stage(ws: &Workspace, cfg: &RunConfig) -> AppResult<String> {
    cfg.validate()?;
    let (model, train_cfg) = load_model(ws)?;
    let prepared = load_prepared(ws)?;
    let features = load_features(ws, &prepared.ids)?;
    let q = load_quantized(ws)?;
    let ks = with_table_ks(&cfg.ks);
    let points: Vec<CurvePoint> = run_robustness(
        &Trained::Graph(model),
        &prepared.split,
        &features,
        &q,
        &cfg.experiments.robust_modes,
        &cfg.experiments.robust_ratios,
        cfg.seed(),
        &ks,
    )?;
    for p in &points {
        p.report.validate()?;
    }
    let csv: Vec<CurveCsvRow> = points
        .iter()
        .map(|p| CurveCsvRow {
            ratio: p.ratio,
            mode: p.mode,
            hr5: p.report.hr_at(5),
            mrr5: p.report.mrr_at(5),
        })
        .collect();
    write_csv(&ws.path(CURVES_CSV), &csv)?;
    let summary = format!(
        "robustness: {} points; {}",
        csv.len(),
        csv.iter()
            .map(|r| format!("{:?}@{}={:.4}", r.mode, r.ratio, r.hr5))
            .collect::<Vec<_>>()
            .join(" ")
    );
    let echo = EvalConfig {
        train: train_cfg,
        ks,
        perturbation: None,
    };
    write_json(&ws.path(ROBUST_JSON), &Artifact::new(cfg.seed(), (echo, &cfg.experiments), points))?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCsvRow {
    pub c: Option<usize>,
    pub k: Option<usize>,
    pub hr5: f64,
    pub mrr5: f64,
}

pub fn sweep_stage(ws: &Workspace, cfg: &RunConfig) -> AppResult<String> {
    cfg.validate()?;
    let prepared = load_prepared(ws)?;
    let features = load_features(ws, &prepared.ids)?;
    let ks = with_table_ks(&cfg.ks);
    let result: SweepResult = run_ck_sweep(
        &prepared.split,
        &features,
        &cfg.quantizer,
        &cfg.model,
        &cfg.experiments.sweep_cs,
        &cfg.experiments.sweep_ks,
        &ks,
    )?;
    let csv: Vec<SweepCsvRow> = result
        .cells
        .iter()
        .map(|c| SweepCsvRow {
            c: c.c,
            k: c.k,
            hr5: c.report.hr_at(5),
            mrr5: c.report.mrr_at(5),
        })
        .collect();
    write_csv(&ws.path(SWEEP_CSV), &csv)?;
    let summary = match result.best() {
        Some(b) => format!(
            "sweep: {} cells ({} skipped), best c={} k={} HR@5 {:.4}",
            result.cells.len(),
            result.skipped.len(),
            b.c.unwrap_or(0),
            b.k.unwrap_or(0),
            b.report.hr_at(5)
        ),
        None => format!("sweep: {} cells, no coded cell", result.cells.len()),
    };
    write_json(&ws.path(SWEEP_JSON), &Artifact::new(cfg.seed(), cfg, result))?;
    Ok(summary)
}

/// Configured cut-offs plus 5 and 20, which the tables always report.
fn with_table_ks(ks: &[u32]) -> Vec<u32> {
    let mut v: Vec<u32> = ks.iter().copied().chain([5, 20]).collect();
    v.sort_unstable();
    v.dedup();
    v
}
