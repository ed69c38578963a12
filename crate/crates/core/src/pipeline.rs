//! Config-driven experiment stages.
//!
//! Output layout under `output_dir`:
//!
//! ```text
//! prep/                      train.tsv valid.tsv test.tsv catalog.tsv stats.json manifest.json
//! candidates/<model>.tsv     plus <model>.manifest.json
//! runs/<dataset>_<model>_<label>/
//!                            reranked.tsv sidecar.json manifest.json
//! report.csv report.json report_relative_harm.csv novelty/<run>.csv
//! sweep_<model>.csv          plus sweep_<model>.manifest.json
//! ```
//!
//! Manifests record content hashes rather than absolute paths or timestamps,
//! so repeated runs with the same config produce byte-identical files.

use std::fs::{self, File};
use std::io::{BufReader, Read, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baselines::{self, CandidateList, MfHyper};
use crate::catalog::{ItemCatalog, DEFAULT_HEAD_FRACTION};
use crate::dataio::{self, DatasetStats, Format, InteractionSet};
use crate::error::{Error, Result};
use crate::metrics::{self, CompensatedSum, EvalReport, MetricWeights, RunMeta};
use crate::reranker::{self, Preset, RerankConfig, Sidecar, Target, DEFAULT_LAMBDA};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub name: String,
    pub path: PathBuf,
    #[serde(default = "default_format")]
    pub format: Format,
    #[serde(default)]
    pub implicit: bool,
}

fn default_format() -> Format {
    Format::Tsv
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitConfig {
    pub ratios: [f64; 3],
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            ratios: [0.8, 0.1, 0.1],
            seed: 42,
        }
    }
}

/// `"eq"`, `"prop"`, or an explicit `[p_a, p_b]` pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TargetSpec {
    Named(String),
    Custom([f64; 2]),
}

impl TargetSpec {
    pub fn resolve(&self) -> Result<Target> {
        match self {
            TargetSpec::Named(name) => name.parse(),
            TargetSpec::Custom([a, b]) => Target::new(*a, *b),
        }
    }
}

impl Default for TargetSpec {
    fn default() -> Self {
        TargetSpec::Named("eq".into())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RerankerSettings {
    /// Named preset; ignored when `gamma` is given.
    pub preset: Option<Preset>,
    pub lambda: f64,
    pub gamma: Option<f64>,
    pub target: TargetSpec,
}

impl Default for RerankerSettings {
    fn default() -> Self {
        RerankerSettings {
            preset: None,
            lambda: DEFAULT_LAMBDA,
            gamma: None,
            target: TargetSpec::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepGrid {
    pub lambdas: Vec<f64>,
    pub gammas: Vec<f64>,
}

impl Default for SweepGrid {
    fn default() -> Self {
        SweepGrid {
            lambdas: vec![0.0, 0.05, 0.1, 0.5, 1.0],
            gammas: Preset::ALL.iter().map(|p| p.gamma()).collect(),
        }
    }
}

fn default_k_core() -> usize {
    10
}
fn default_head_fraction() -> f64 {
    DEFAULT_HEAD_FRACTION
}
fn default_top_n() -> usize {
    50
}
fn default_k() -> usize {
    10
}
fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

/// Experiment description, read from a single JSON document. Unknown keys are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    #[serde(default = "default_k_core")]
    pub k_core: usize,
    #[serde(default)]
    pub split: SplitConfig,
    #[serde(default = "default_head_fraction")]
    pub head_fraction: f64,
    #[serde(default = "default_top_n")]
    pub top_n: usize,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default)]
    pub reranker: RerankerSettings,
    #[serde(default)]
    pub weights: MetricWeights,
    #[serde(default)]
    pub sweep: SweepGrid,
    #[serde(default)]
    pub mf: MfHyper,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Directory relative paths are resolved against (the config file's directory).
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn from_json(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.base_dir = base_dir.to_path_buf();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_json(&text, base)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.dataset.name.is_empty() || self.dataset.name.contains(['/', '\\']) {
            return bad(format!("dataset name `{}` must be a plain word", self.dataset.name));
        }
        if self.k_core == 0 {
            return bad("k_core must be >= 1".into());
        }
        if !(self.head_fraction > 0.0 && self.head_fraction < 1.0) {
            return bad(format!("head_fraction must lie in (0, 1), got {}", self.head_fraction));
        }
        if self.k == 0 || self.top_n < self.k {
            return bad(format!("need 1 <= k <= top_n, got k = {}, top_n = {}", self.k, self.top_n));
        }
        if self.reranker.preset.is_some() && self.reranker.gamma.is_some() {
            return bad("reranker: give either `preset` or `gamma`, not both".into());
        }
        if self.sweep.lambdas.is_empty() || self.sweep.gammas.is_empty() {
            return bad("sweep grid axes must be non-empty".into());
        }
        self.reranker.target.resolve()?;
        self.weights.validate()?;
        self.rerank_config(None, None, None, None)?;
        Ok(())
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    pub fn output_dir(&self) -> PathBuf {
        self.resolve(&self.output_dir)
    }

    pub fn prep_dir(&self) -> PathBuf {
        self.output_dir().join("prep")
    }

    pub fn candidates_dir(&self) -> PathBuf {
        self.output_dir().join("candidates")
    }

    pub fn runs_dir(&self) -> PathBuf {
        self.output_dir().join("runs")
    }

    /// SHA-256 of the canonical JSON form of the config.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&canonical))
    }

    /// Re-ranking settings with command-line overrides applied.
    ///
    /// A preset fixes gamma; an explicit gamma drops any preset.
    pub fn rerank_config(
        &self,
        preset: Option<Preset>,
        lambda: Option<f64>,
        gamma: Option<f64>,
        target: Option<Target>,
    ) -> Result<RerankConfig> {
        if preset.is_some() && gamma.is_some() {
            return Err(Error::Config("give either a preset or gamma, not both".into()));
        }
        let lambda = lambda.unwrap_or(self.reranker.lambda);
        let target = match target {
            Some(t) => t,
            None => self.reranker.target.resolve()?,
        };
        match (preset, gamma) {
            (Some(p), _) => RerankConfig::from_preset(p, self.k, lambda, target),
            (None, Some(g)) => RerankConfig::new(self.k, lambda, g, target),
            (None, None) => match (self.reranker.preset, self.reranker.gamma) {
                (_, Some(g)) => RerankConfig::new(self.k, lambda, g, target),
                (Some(p), None) => RerankConfig::from_preset(p, self.k, lambda, target),
                (None, None) => RerankConfig::from_preset(Preset::Tpfr, self.k, lambda, target),
            },
        }
    }
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut file = BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?);
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 64 * 1024];
    loop {
        let n = file.read(&mut buf).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    /// Path relative to the output directory, or the file name for external inputs.
    pub path: String,
    pub sha256: String,
}

/// Provenance record written by every stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub stage: String,
    pub config_sha256: String,
    pub split_seed: u64,
    pub mf_seed: u64,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
}

impl Manifest {
    fn new(cfg: &ExperimentConfig, stage: &str) -> Self {
        Manifest {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            stage: stage.to_string(),
            config_sha256: cfg.hash(),
            split_seed: cfg.split.seed,
            mf_seed: cfg.mf.seed,
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    fn digest(cfg: &ExperimentConfig, path: &Path) -> Result<FileDigest> {
        let out = cfg.output_dir();
        let shown = match path.strip_prefix(&out) {
            Ok(rel) => rel.to_string_lossy().into_owned(),
            Err(_) => path
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default(),
        };
        Ok(FileDigest {
            path: shown,
            sha256: sha256_file(path)?,
        })
    }

    fn with_files(mut self, cfg: &ExperimentConfig, inputs: &[&Path], outputs: &[&Path]) -> Result<Self> {
        self.inputs = inputs
            .iter()
            .map(|p| Self::digest(cfg, p))
            .collect::<Result<_>>()?;
        self.outputs = outputs
            .iter()
            .map(|p| Self::digest(cfg, p))
            .collect::<Result<_>>()?;
        Ok(self)
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn ensure_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn require(path: &Path, hint: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::MissingArtifact {
            path: path.to_path_buf(),
            hint: hint.to_string(),
        })
    }
}

#[derive(Clone, Debug)]
pub struct PrepSummary {
    pub dir: PathBuf,
    pub stats: DatasetStats,
    pub train: usize,
    pub valid: usize,
    pub test: usize,
}

/// Loads the raw log, applies the k-core, splits, and writes splits, catalog and stats.
pub fn cmd_prep(cfg: &ExperimentConfig) -> Result<PrepSummary> {
    let input = cfg.resolve(&cfg.dataset.path);
    require(&input, "check `dataset.path` in the config")?;
    let raw = dataio::load_interactions(&input, cfg.dataset.format, cfg.dataset.implicit)?;
    let core = dataio::kcore_filter(&raw, cfg.k_core)?;
    let splits = dataio::split(&core, cfg.split.ratios, cfg.split.seed)?;
    let catalog = ItemCatalog::build(&splits.train, cfg.head_fraction)?;
    let stats = dataio::dataset_stats(&core)?;

    let dir = cfg.prep_dir();
    ensure_dir(&dir)?;
    dataio::write_splits(&dir, &splits)?;
    catalog.write_tsv(&dir.join("catalog.tsv"))?;
    write_json(&dir.join("stats.json"), &stats)?;

    let outputs: Vec<PathBuf> = ["train.tsv", "valid.tsv", "test.tsv", "catalog.tsv", "stats.json"]
        .iter()
        .map(|f| dir.join(f))
        .collect();
    let out_refs: Vec<&Path> = outputs.iter().map(PathBuf::as_path).collect();
    let manifest = Manifest::new(cfg, "prep").with_files(cfg, &[&input], &out_refs)?;
    write_json(&dir.join("manifest.json"), &manifest)?;

    Ok(PrepSummary {
        dir,
        stats,
        train: splits.train.len(),
        valid: splits.valid.len(),
        test: splits.test.len(),
    })
}

/// Training and test splits plus the catalog, reloaded from `prep/`.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub train: InteractionSet,
    pub test: InteractionSet,
    pub catalog: ItemCatalog,
}

pub fn load_prepared(cfg: &ExperimentConfig) -> Result<Prepared> {
    let dir = cfg.prep_dir();
    let hint = "run `fairrank prep --config <config>` first";
    let train_path = dir.join("train.tsv");
    let test_path = dir.join("test.tsv");
    require(&train_path, hint)?;
    require(&test_path, hint)?;
    let train = dataio::load_interactions(&train_path, Format::Tsv, false)?;
    let test = if fs::metadata(&test_path).map(|m| m.len() == 0).unwrap_or(false) {
        InteractionSet::default()
    } else {
        dataio::load_interactions(&test_path, Format::Tsv, false)?
    };
    let catalog = ItemCatalog::build(&train, cfg.head_fraction)?;
    Ok(Prepared {
        train,
        test,
        catalog,
    })
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum RankSource {
    MostPop,
    Mf,
    Import(PathBuf),
}

#[derive(Clone, Debug)]
pub struct RankSummary {
    pub path: PathBuf,
    pub lists: usize,
    /// Users whose list came out shorter than `top_n`.
    pub short_lists: usize,
    /// Imported candidates that the user already interacted with in training.
    pub seen_in_train: usize,
}

/// Produces `candidates/<model>.tsv` from a built-in ranker or an imported file.
pub fn cmd_rank(cfg: &ExperimentConfig, source: &RankSource) -> Result<RankSummary> {
    let prep = load_prepared(cfg)?;
    let (name, lists, inputs) = match source {
        RankSource::MostPop => (
            "mostpop".to_string(),
            baselines::mostpop_candidates(&prep.train, cfg.top_n)?,
            vec![],
        ),
        RankSource::Mf => {
            let model = baselines::mf_train(&prep.train, &cfg.mf)?;
            (
                "mf".to_string(),
                baselines::mf_candidates(&model, &prep.train, cfg.top_n)?,
                vec![],
            )
        }
        RankSource::Import(path) => {
            let path = cfg.resolve(path);
            require(&path, "candidate file to import not found")?;
            let stem = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "imported".into());
            let lists = baselines::load_candidates(&path, &prep.catalog)?
                .into_iter()
                .map(|l| l.top(cfg.top_n))
                .collect();
            (stem, lists, vec![path])
        }
    };
    let short_lists = lists.iter().filter(|l| l.len() < cfg.top_n).count();
    let seen_in_train = baselines::count_seen(&lists, &prep.train);

    let dir = cfg.candidates_dir();
    ensure_dir(&dir)?;
    let path = dir.join(format!("{name}.tsv"));
    baselines::write_candidates(&path, &lists)?;
    let train_path = cfg.prep_dir().join("train.tsv");
    let mut input_refs: Vec<&Path> = vec![&train_path];
    input_refs.extend(inputs.iter().map(PathBuf::as_path));
    let manifest = Manifest::new(cfg, "rank").with_files(cfg, &input_refs, &[&path])?;
    write_json(&dir.join(format!("{name}.manifest.json")), &manifest)?;

    Ok(RankSummary {
        path,
        lists: lists.len(),
        short_lists,
        seen_in_train,
    })
}

fn model_name(candidates: &Path) -> String {
    candidates
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "model".into())
}

/// Everything a run directory holds besides the re-ranked lists.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub dataset: String,
    pub model: String,
    #[serde(flatten)]
    pub sidecar: Sidecar,
}

#[derive(Clone, Debug)]
pub struct RunSummary {
    pub dir: PathBuf,
    pub users: usize,
    pub mean_deviation: f64,
}

pub fn run_dir_name(cfg: &ExperimentConfig, model: &str, rerank: &RerankConfig) -> String {
    format!("{}_{}_{}", cfg.dataset.name, model, rerank.label())
}

/// Re-ranks a candidate file and writes `reranked.tsv`, `sidecar.json` and a manifest.
pub fn cmd_rerank(cfg: &ExperimentConfig, candidates: &Path, rerank: &RerankConfig) -> Result<RunSummary> {
    let prep = load_prepared(cfg)?;
    let candidates = cfg.resolve(candidates);
    require(&candidates, "run `fairrank rank` first or pass an existing --candidates file")?;
    let lists = baselines::load_candidates(&candidates, &prep.catalog)?;
    let results = reranker::rerank_all(&lists, &prep.catalog, rerank)?;

    let model = model_name(&candidates);
    let dir = cfg.runs_dir().join(run_dir_name(cfg, &model, rerank));
    ensure_dir(&dir)?;
    let ranked: Vec<CandidateList> = results.iter().map(|r| r.to_candidate_list()).collect();
    let tsv = dir.join("reranked.tsv");
    baselines::write_candidates(&tsv, &ranked)?;
    let record = RunRecord {
        dataset: cfg.dataset.name.clone(),
        model,
        sidecar: Sidecar::new(rerank, &results),
    };
    let sidecar = dir.join("sidecar.json");
    write_json(&sidecar, &record)?;
    let train_path = cfg.prep_dir().join("train.tsv");
    let manifest = Manifest::new(cfg, "rerank").with_files(cfg, &[&train_path, &candidates], &[&tsv, &sidecar])?;
    write_json(&dir.join("manifest.json"), &manifest)?;

    let mean_deviation = results
        .iter()
        .map(|r| r.deviation)
        .collect::<CompensatedSum>()
        .mean()
        .unwrap_or(0.0);
    Ok(RunSummary {
        dir,
        users: results.len(),
        mean_deviation,
    })
}

pub fn read_run(dir: &Path) -> Result<(RunRecord, Vec<CandidateList>)> {
    let sidecar = dir.join("sidecar.json");
    let tsv = dir.join("reranked.tsv");
    require(&sidecar, "not a run directory; run `fairrank rerank` first")?;
    require(&tsv, "not a run directory; run `fairrank rerank` first")?;
    let file = File::open(&sidecar).map_err(|e| Error::io(&sidecar, e))?;
    let record: RunRecord = serde_json::from_reader(BufReader::new(file))?;
    Ok((record, baselines::read_candidates(&tsv)?))
}

/// Row order key: base first, then presets in emphasis order, then explicit settings.
fn row_rank(meta: &RunMeta) -> usize {
    if meta.preset == "base" {
        return 0;
    }
    Preset::ALL
        .iter()
        .position(|p| p.name() == meta.preset)
        .map_or(Preset::ALL.len() + 1, |i| i + 1)
}

#[derive(Clone, Debug)]
pub struct EvalSummary {
    pub report_csv: PathBuf,
    pub reports: Vec<EvalReport>,
}

/// Evaluates an optional base candidate file (its top-K) and any number of run
/// directories. The relative-change columns are filled against the base row
/// and against the first tPFR row when those are present.
pub fn cmd_eval(
    cfg: &ExperimentConfig,
    base: Option<&Path>,
    runs: &[PathBuf],
    out: Option<&Path>,
) -> Result<EvalSummary> {
    let prep = load_prepared(cfg)?;
    let mut reports = Vec::new();
    if let Some(base) = base {
        let base = cfg.resolve(base);
        require(&base, "base candidate file not found")?;
        let lists = baselines::load_candidates(&base, &prep.catalog)?;
        let meta = RunMeta {
            dataset: cfg.dataset.name.clone(),
            model: model_name(&base),
            preset: "base".into(),
            lambda: None,
            gamma: None,
            k: cfg.k,
        };
        reports.push(metrics::evaluate_run(&lists, &prep.test, &prep.catalog, &cfg.weights, None, meta)?);
    }
    for dir in runs {
        let (record, lists) = read_run(&cfg.resolve(dir))?;
        let rc = &record.sidecar.config;
        let meta = RunMeta {
            dataset: record.dataset.clone(),
            model: record.model.clone(),
            preset: rc.label(),
            lambda: Some(rc.lambda),
            gamma: Some(rc.gamma),
            k: rc.k,
        };
        reports.push(metrics::evaluate_run(&lists, &prep.test, &prep.catalog, &cfg.weights, None, meta)?);
    }
    reports.sort_by_key(|r| row_rank(&r.meta));

    let base_all = reports.iter().find(|r| r.meta.preset == "base").map(|r| r.all_metric);
    let tpfr_all = reports
        .iter()
        .find(|r| r.meta.preset == Preset::Tpfr.name())
        .map(|r| r.all_metric);
    for r in &mut reports {
        r.delta_b = base_all.map(|b| metrics::delta(r.all_metric, b)).transpose()?;
        r.delta_t = tpfr_all.map(|t| metrics::delta(r.all_metric, t)).transpose()?;
    }

    let report_csv = match out {
        Some(p) => cfg.resolve(p),
        None => cfg.output_dir().join("report.csv"),
    };
    let report_dir = report_csv.parent().map(Path::to_path_buf).unwrap_or_default();
    let novelty_dir = report_dir.join("novelty");
    ensure_dir(&novelty_dir)?;
    metrics::write_report_csv(&report_csv, &reports)?;
    write_json(&report_csv.with_extension("json"), &reports)?;
    let stem = report_csv.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    metrics::write_relative_harm_csv(&report_dir.join(format!("{stem}_relative_harm.csv")), &reports)?;
    for r in &reports {
        let name = format!("{}_{}_{}.csv", r.meta.dataset, r.meta.model, r.meta.preset);
        metrics::write_novelty_csv(&novelty_dir.join(name), &r.per_user)?;
    }
    Ok(EvalSummary {
        report_csv,
        reports,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub lambda: f64,
    pub gamma: f64,
    pub ndcg: Option<f64>,
    pub gf: Option<f64>,
    pub sgf: Option<f64>,
    pub all: Option<f64>,
    pub mean_deviation: Option<f64>,
    /// `ok`, or the error that stopped this cell.
    pub status: String,
}

/// Re-ranks and evaluates one grid cell.
pub fn sweep_cell(
    cfg: &ExperimentConfig,
    prep: &Prepared,
    lists: &[CandidateList],
    lambda: f64,
    gamma: f64,
    target: Target,
) -> SweepRow {
    let run = || -> Result<SweepRow> {
        let rc = RerankConfig::new(cfg.k, lambda, gamma, target)?;
        let results = reranker::rerank_all_sequential(lists, &prep.catalog, &rc)?;
        let ranked: Vec<CandidateList> = results.iter().map(|r| r.to_candidate_list()).collect();
        let meta = RunMeta {
            dataset: cfg.dataset.name.clone(),
            k: cfg.k,
            ..RunMeta::default()
        };
        let report = metrics::evaluate_run(&ranked, &prep.test, &prep.catalog, &cfg.weights, None, meta)?;
        let gf = metrics::gf_metric(&ranked, &prep.catalog, &target)?;
        let mean_deviation = results
            .iter()
            .map(|r| r.deviation)
            .collect::<CompensatedSum>()
            .mean()
            .unwrap_or(0.0);
        Ok(SweepRow {
            lambda,
            gamma,
            ndcg: Some(report.ndcg),
            gf: Some(gf),
            sgf: Some(report.sgf),
            all: Some(metrics::all_metric(report.ndcg, gf, report.sgf, &cfg.weights)),
            mean_deviation: Some(mean_deviation),
            status: "ok".into(),
        })
    };
    run().unwrap_or_else(|e| SweepRow {
        lambda,
        gamma,
        ndcg: None,
        gf: None,
        sgf: None,
        all: None,
        mean_deviation: None,
        status: e.to_string(),
    })
}

#[derive(Clone, Debug)]
pub struct SweepSummary {
    pub path: PathBuf,
    pub rows: Vec<SweepRow>,
    pub failed: usize,
}

pub const SWEEP_COLUMNS: [&str; 8] = [
    "lambda", "gamma", "ndcg", "gf", "sgf", "all", "mean_deviation", "status",
];

/// Evaluates every (lambda, gamma) cell of the configured grid, lambda-major.
/// Failed cells are reported in the `status` column; the grid always completes.
pub fn cmd_sweep(
    cfg: &ExperimentConfig,
    candidates: &Path,
    target: Option<Target>,
    out: Option<&Path>,
) -> Result<SweepSummary> {
    let prep = load_prepared(cfg)?;
    let candidates = cfg.resolve(candidates);
    require(&candidates, "run `fairrank rank` first or pass an existing --candidates file")?;
    let lists = baselines::load_candidates(&candidates, &prep.catalog)?;
    let target = match target {
        Some(t) => t,
        None => cfg.reranker.target.resolve()?,
    };
    let cells: Vec<(f64, f64)> = cfg
        .sweep
        .lambdas
        .iter()
        .flat_map(|&l| cfg.sweep.gammas.iter().map(move |&g| (l, g)))
        .collect();
    let rows: Vec<SweepRow> = cells
        .par_iter()
        .map(|&(l, g)| sweep_cell(cfg, &prep, &lists, l, g, target))
        .collect();

    let model = model_name(&candidates);
    let path = match out {
        Some(p) => cfg.resolve(p),
        None => cfg.output_dir().join(format!("sweep_{model}.csv")),
    };
    if let Some(parent) = path.parent() {
        ensure_dir(parent)?;
    }
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(SWEEP_COLUMNS)?;
    let num = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in &rows {
        w.write_record([
            r.lambda.to_string(),
            r.gamma.to_string(),
            num(r.ndcg),
            num(r.gf),
            num(r.sgf),
            num(r.all),
            num(r.mean_deviation),
            r.status.clone(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    let manifest = Manifest::new(cfg, "sweep").with_files(cfg, &[&candidates], &[&path])?;
    write_json(&path.with_extension("manifest.json"), &manifest)?;

    let failed = rows.iter().filter(|r| r.status != "ok").count();
    Ok(SweepSummary { path, rows, failed })
}

/// Writes a line to stderr, ignoring failures of the stream itself.
pub fn note(msg: impl AsRef<str>) {
    let _ = writeln!(std::io::stderr(), "{}", msg.as_ref());
}
