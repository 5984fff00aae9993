//! Ablation grids at desk scale: one axis of controlled config deltas, each
//! cell trained per seed on the synthetic multi-class set and evaluated on a
//! held-out split.

mod report;

pub use report::{csv_table, markdown_table, svg_chart, write_outputs, OutputPaths};

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{generate_synthetic, preprocess, split_ids, Dataset, DatasetManifest, SyntheticSpec};
use crate::error::{Error, Result};
use crate::metrics::MetricsReport;
use crate::network::{AttentionBlock, GlPlacement, Model, ModelConfig};
use crate::nn::Mode;
use crate::tensor::Tensor;
use crate::training::{evaluate, train, TrainConfig};

pub const ANALOG_NOTE: &str = "synthetic analog, not paper numbers";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AblationAxis {
    /// PC block against MIPC block.
    #[serde(rename = "table4")]
    MutualInclusion,
    /// The four primary/auxiliary combinations.
    #[serde(rename = "table5")]
    MipcVariant,
    /// Where the global residue is injected.
    #[serde(rename = "table6")]
    GlPlacement,
}

impl std::str::FromStr for AblationAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "table4" | "mutual_inclusion" => Ok(AblationAxis::MutualInclusion),
            "table5" | "mipc_variant" => Ok(AblationAxis::MipcVariant),
            "table6" | "gl_placement" => Ok(AblationAxis::GlPlacement),
            other => Err(Error::Config(format!("axis: unknown value `{other}` (expected table4, table5 or table6)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationCell {
    pub name: String,
    pub model: ModelConfig,
}

impl AblationAxis {
    pub const ALL: [AblationAxis; 3] = [AblationAxis::MutualInclusion, AblationAxis::MipcVariant, AblationAxis::GlPlacement];

    pub fn label(self) -> &'static str {
        match self {
            AblationAxis::MutualInclusion => "table4",
            AblationAxis::MipcVariant => "table5",
            AblationAxis::GlPlacement => "table6",
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            AblationAxis::MutualInclusion => "Mutual inclusion: PC block vs MIPC block",
            AblationAxis::MipcVariant => "MIPC variants (part A primary + part C primary)",
            AblationAxis::GlPlacement => "Global residue placement",
        }
    }

    /// The grid rows, each a delta applied to `base`.
    pub fn cells(self, base: &ModelConfig) -> Vec<AblationCell> {
        let cell = |name: &str, model: ModelConfig| AblationCell { name: name.to_string(), model };
        match self {
            AblationAxis::MutualInclusion => vec![
                cell("PC", ModelConfig { attention_block: AttentionBlock::Pc, ..base.clone() }),
                cell("MIPC", ModelConfig { attention_block: AttentionBlock::Mipc, ..base.clone() }),
            ],
            AblationAxis::MipcVariant => crate::attention::MipcVariant::ALL
                .iter()
                .map(|&v| cell(&v.label(), ModelConfig { mipc_variant: v, ..base.clone() }))
                .collect(),
            AblationAxis::GlPlacement => {
                let mut v: Vec<AblationCell> = GlPlacement::ALL
                    .iter()
                    .map(|&p| {
                        let name = match p {
                            GlPlacement::None => "none",
                            GlPlacement::First => "1st",
                            GlPlacement::Second => "2nd",
                            GlPlacement::Third => "3rd",
                            GlPlacement::All => "1st+2nd+3rd",
                        };
                        cell(name, ModelConfig { gl_placement: p, ..base.clone() })
                    })
                    .collect();
                v.push(cell("baseline", base.clone().baseline()));
                v
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationSpec {
    pub axis: AblationAxis,
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// One training run per seed and cell; the seed replaces `train.seed`.
    pub seeds: Vec<u64>,
    pub data: SyntheticSpec,
    pub train_fraction: f64,
    pub split_seed: u64,
}

/// Four-class set for the tiny network: 40 images, 32 train / 8 test.
pub fn ablation_data() -> SyntheticSpec {
    SyntheticSpec { num_samples: 40, num_classes: 4, image_size: 64, channels: 1, shapes_per_class: (1, 3), noise_sigma: 0.1, seed: 1 }
}

impl AblationSpec {
    /// Tiny network, 300 iterations per run, three seeds.
    pub fn tiny(axis: AblationAxis) -> Self {
        Self {
            axis,
            model: ModelConfig::tiny(),
            train: TrainConfig { max_iterations: 300, ..TrainConfig::default() },
            seeds: vec![0, 1, 2],
            data: ablation_data(),
            train_fraction: 0.8,
            split_seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds: at least one seed is required".into()));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::Config(format!("train_fraction: {} outside (0, 1)", self.train_fraction)));
        }
        self.model.validate()?;
        self.train.validate()?;
        self.data.validate()?;
        if self.model.num_classes != self.data.num_classes {
            return Err(Error::Config(format!(
                "data.num_classes: {} does not match model.num_classes {}",
                self.data.num_classes, self.model.num_classes
            )));
        }
        if self.model.in_channels != self.data.channels {
            return Err(Error::Config(format!(
                "data.channels: {} does not match model.in_channels {}",
                self.data.channels, self.model.in_channels
            )));
        }
        for c in self.axis.cells(&self.model) {
            c.model.validate()?;
        }
        Ok(())
    }

    /// Preprocessed train and test sets plus the manifest describing them.
    pub fn datasets(&self) -> Result<(Dataset, Dataset, DatasetManifest)> {
        let raw = generate_synthetic(&self.data)?;
        let samples = raw
            .samples
            .iter()
            .map(|s| preprocess(s, self.model.input_size).map(|p| p.sample))
            .collect::<Result<Vec<_>>>()?;
        let ds = Dataset::new(raw.num_classes, raw.class_names.clone(), samples)?;
        let split = split_ids(&ds.ids(), self.train_fraction, self.split_seed)?;
        let (tr, te) = (ds.subset(&split.train), ds.subset(&split.test));
        if tr.len() < self.train.batch_size || te.is_empty() {
            return Err(Error::Config(format!(
                "data.num_samples: split gives {} train / {} test samples, need at least batch_size {} / 1",
                tr.len(),
                te.len(),
                self.train.batch_size
            )));
        }
        let manifest = DatasetManifest::describe(&ds, Some(self.data.clone()), Some(split));
        Ok((tr, te, manifest))
    }
}

/// Everything a single run depends on; its hash names the run's artifacts.
#[derive(Serialize)]
struct RunKey<'a> {
    version: &'a str,
    model: &'a ModelConfig,
    train: &'a TrainConfig,
    data: &'a SyntheticSpec,
    train_fraction: f64,
    split_seed: u64,
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn file_sha256(path: &Path) -> Result<String> {
    Ok(sha256_hex(&fs::read(path).map_err(|e| Error::io(path, e))?))
}

impl AblationSpec {
    fn key_hash(&self, model: &ModelConfig, train: &TrainConfig) -> String {
        let key = RunKey {
            version: env!("CARGO_PKG_VERSION"),
            model,
            train,
            data: &self.data,
            train_fraction: self.train_fraction,
            split_seed: self.split_seed,
        };
        sha256_hex(serde_json::to_string(&key).expect("plain data serializes").as_bytes())
    }

    /// Hash of a cell's configuration independent of the seed.
    pub fn cell_hash(&self, cell: &AblationCell) -> String {
        self.key_hash(&cell.model, &TrainConfig { seed: 0, ..self.train.clone() })
    }

    /// Hash of one training run.
    pub fn run_hash(&self, cell: &AblationCell, seed: u64) -> String {
        self.key_hash(&cell.model, &self.run_train(seed))
    }

    fn run_train(&self, seed: u64) -> TrainConfig {
        TrainConfig { seed, ..self.train.clone() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum RunOutcome {
    Completed { report: MetricsReport, iterations: usize, wall_time_secs: f64, checkpoint_sha256: String },
    Failed { error: String },
}

/// One (cell, seed) run as stored under `runs/<hash>.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub cell: String,
    pub hash: String,
    pub seed: u64,
    pub param_count: usize,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub outcome: RunOutcome,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub cell: String,
    pub config_hash: String,
    pub param_count: usize,
    pub seeds_completed: usize,
    pub seeds_total: usize,
    /// Mean foreground Dice in percent.
    pub dsc_mean: Option<f64>,
    /// Sample standard deviation; absent with fewer than two completed seeds.
    pub dsc_std: Option<f64>,
    pub hd_mean: Option<f64>,
    pub hd_std: Option<f64>,
    /// First failure message, if any seed failed.
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultTable {
    pub axis: AblationAxis,
    pub title: String,
    pub note: String,
    pub hd_unit: String,
    pub rows: Vec<ResultRow>,
    /// Summed training and evaluation time of the runs in the table.
    pub runtime_secs: f64,
}

/// Manifest written to `manifests/ablation-<axis>.json`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AblationManifest {
    pub version: String,
    pub spec: AblationSpec,
    pub dataset: DatasetManifest,
    pub runs: Vec<RunRecord>,
    /// Relative artifact path to sha256.
    pub artifacts: Vec<(String, String)>,
}

pub const RUNS_DIR: &str = "runs";
pub const CHECKPOINTS_DIR: &str = "checkpoints";
pub const MANIFESTS_DIR: &str = "manifests";
pub const TABLES_DIR: &str = "tables";
pub const PLOTS_DIR: &str = "plots";

fn mean_std(v: &[f64]) -> (Option<f64>, Option<f64>) {
    if v.is_empty() {
        return (None, None);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let std = (v.len() > 1).then(|| (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt());
    (Some(mean), std)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?).map_err(|e| Error::io(path, e))
}

fn run_one(spec: &AblationSpec, cell: &AblationCell, seed: u64, train_set: &Dataset, test_set: &Dataset, ckpt: &Path) -> Result<RunOutcome> {
    let start = Instant::now();
    let out = train::<f32>(&cell.model, &spec.run_train(seed), train_set, None)?;
    let report = evaluate(&out.model, test_set)?;
    out.model.save(ckpt)?;
    Ok(RunOutcome::Completed {
        report,
        iterations: out.log.iterations_run(),
        wall_time_secs: start.elapsed().as_secs_f64(),
        checkpoint_sha256: file_sha256(ckpt)?,
    })
}

/// Trains and evaluates every cell × seed under `out`, reusing any run whose
/// record already exists there. A failing run is recorded and the rest
/// proceed. `progress` receives one line per run.
pub fn run_ablation(spec: &AblationSpec, out: &Path, mut progress: impl FnMut(&str)) -> Result<ResultTable> {
    spec.validate()?;
    for d in [RUNS_DIR, CHECKPOINTS_DIR, MANIFESTS_DIR, TABLES_DIR, PLOTS_DIR] {
        let p = out.join(d);
        fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    let (train_set, test_set, dataset) = spec.datasets()?;
    let cells = spec.axis.cells(&spec.model);
    let mut runs = Vec::new();
    let mut rows = Vec::new();
    for cell in &cells {
        let param_count = Model::<f32>::new(&cell.model, 0).map(|m| m.param_count()).unwrap_or(0);
        let mut cell_runs = Vec::new();
        for &seed in &spec.seeds {
            let hash = spec.run_hash(cell, seed);
            let record_path = out.join(RUNS_DIR).join(format!("{hash}.json"));
            let cached = fs::read_to_string(&record_path).ok().and_then(|t| serde_json::from_str::<RunRecord>(&t).ok());
            let record = match cached {
                Some(r) if matches!(r.outcome, RunOutcome::Completed { .. }) => {
                    progress(&format!("{} seed {seed}: reused {}", cell.name, &hash[..12]));
                    r
                }
                _ => {
                    let ckpt = out.join(CHECKPOINTS_DIR).join(format!("{hash}.safetensors"));
                    let outcome = run_one(spec, cell, seed, &train_set, &test_set, &ckpt)
                        .unwrap_or_else(|e| RunOutcome::Failed { error: e.to_string() });
                    let r = RunRecord {
                        cell: cell.name.clone(),
                        hash: hash.clone(),
                        seed,
                        param_count,
                        model: cell.model.clone(),
                        train: spec.run_train(seed),
                        outcome,
                    };
                    write_json(&record_path, &r)?;
                    match &r.outcome {
                        RunOutcome::Completed { report, wall_time_secs, .. } => progress(&format!(
                            "{} seed {seed}: dice {:.4} hd {:.3} ({wall_time_secs:.0}s)",
                            cell.name, report.mean_dice, report.mean_hd
                        )),
                        RunOutcome::Failed { error } => progress(&format!("{} seed {seed}: failed: {error}", cell.name)),
                    }
                    r
                }
            };
            cell_runs.push(record);
        }
        rows.push(summarize(spec, cell, param_count, &cell_runs));
        runs.extend(cell_runs);
    }
    let hd_unit = runs
        .iter()
        .find_map(|r| match &r.outcome {
            RunOutcome::Completed { report, .. } => Some(report.hd_unit.clone()),
            RunOutcome::Failed { .. } => None,
        })
        .unwrap_or_else(|| "px".into());
    let runtime_secs = runs
        .iter()
        .map(|r| match r.outcome {
            RunOutcome::Completed { wall_time_secs, .. } => wall_time_secs,
            RunOutcome::Failed { .. } => 0.0,
        })
        .sum();
    let table = ResultTable {
        axis: spec.axis,
        title: spec.axis.title().to_string(),
        note: ANALOG_NOTE.to_string(),
        hd_unit,
        rows,
        runtime_secs,
    };
    let paths = write_outputs(&table, out)?;
    let mut artifacts = Vec::new();
    for r in &runs {
        if let RunOutcome::Completed { checkpoint_sha256, .. } = &r.outcome {
            artifacts.push((format!("{CHECKPOINTS_DIR}/{}.safetensors", r.hash), checkpoint_sha256.clone()));
        }
    }
    for p in paths.all() {
        artifacts.push((relative(out, p), file_sha256(p)?));
    }
    let manifest = AblationManifest { version: env!("CARGO_PKG_VERSION").to_string(), spec: spec.clone(), dataset, runs, artifacts };
    write_json(&manifest_path(out, spec.axis), &manifest)?;
    Ok(table)
}

pub fn manifest_path(out: &Path, axis: AblationAxis) -> PathBuf {
    out.join(MANIFESTS_DIR).join(format!("ablation-{}.json", axis.label()))
}

fn relative(base: &Path, p: &Path) -> String {
    p.strip_prefix(base).unwrap_or(p).to_string_lossy().into_owned()
}

fn summarize(spec: &AblationSpec, cell: &AblationCell, param_count: usize, runs: &[RunRecord]) -> ResultRow {
    let done: Vec<&MetricsReport> = runs
        .iter()
        .filter_map(|r| match &r.outcome {
            RunOutcome::Completed { report, .. } => Some(report),
            RunOutcome::Failed { .. } => None,
        })
        .collect();
    let (dsc_mean, dsc_std) = mean_std(&done.iter().map(|r| 100.0 * r.mean_dice).collect::<Vec<_>>());
    let (hd_mean, hd_std) = mean_std(&done.iter().map(|r| r.mean_hd).collect::<Vec<_>>());
    ResultRow {
        cell: cell.name.clone(),
        config_hash: spec.cell_hash(cell),
        param_count,
        seeds_completed: done.len(),
        seeds_total: runs.len(),
        dsc_mean,
        dsc_std,
        hd_mean,
        hd_std,
        error: runs.iter().find_map(|r| match &r.outcome {
            RunOutcome::Failed { error } => Some(error.clone()),
            RunOutcome::Completed { .. } => None,
        }),
    }
}

/// Eval-mode logits of every placement cell on `image`. Parameters shared
/// between cells are copied by name from one reference network, so the
/// outputs differ only through the placement itself.
pub fn placement_logits(base: &ModelConfig, seed: u64, image: &Tensor<f64>) -> Result<Vec<(String, Tensor<f64>)>> {
    let reference = Model::<f64>::new(&ModelConfig { gl_placement: GlPlacement::All, ..base.clone() }, seed)?;
    AblationAxis::GlPlacement
        .cells(base)
        .into_iter()
        .map(|cell| {
            let mut m = Model::<f64>::new(&cell.model, seed)?;
            for id in m.params.ids().collect::<Vec<_>>() {
                let name = m.params.entry(id).name.clone();
                if let Some(rid) = reference.params.find(&name) {
                    let v = reference.params.get(rid);
                    if v.shape() == m.params.get(id).shape() {
                        m.params.set(id, v.clone());
                    }
                }
            }
            Ok((cell.name, m.logits(image, Mode::Eval)?))
        })
        .collect()
}
