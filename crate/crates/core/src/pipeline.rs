//! Command driver behind the `tractwise` binary.
//!
//! A run loads a [`PipelineConfig`], applies command-line [`Overrides`],
//! rebuilds the cleaned dataset from the configured tables and writes the
//! artifacts of one [`Command`] into the output directory. JSON artifacts carry
//! a top-level `meta` object and SVGs a `<metadata>` element with the seed and
//! config digest; every run also writes `manifest.<command>.json` with the
//! SHA-256 of each artifact and input file.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dataset::{
    join_and_clean, load_table, normalize_nulls, CleanDataset, ColumnRole, ColumnSpec,
    DatasetError, NullTokens, DEFAULT_NULL_TOKENS,
};
use crate::eval::{
    cross_validate, depth_sweep, kfold_plan, train_test_split, CvReport, EvalError, ModelSpec,
    DEFAULT_FOLDS, DEFAULT_OVERFIT_TOLERANCE,
};
use crate::forest::{fit_forest, ForestConfig, ForestError, SampleMode};
use crate::linreg::{fit_poly, residual_report, spread_ratio, LinregError, MAX_DEGREE};
use crate::stats::{
    category_groups, corr_matrix, region_labels, split_by_threshold, threshold_groups,
    top_k_correlated, RankedColumn, StatsError,
};
use crate::svg::{self, Meta, Series, BLUE, GREY, RED};
use crate::tree::{fit_tree, TreeConfig, TreeError};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot parse config {path}: {source}")]
    ConfigParse {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("reports were evaluated on different fold plans ({left} vs {right})")]
    PlanMismatch { left: String, right: String },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Linreg(#[from] LinregError),
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error(transparent)]
    Forest(#[from] ForestError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

pub type Result<T, E = PipelineError> = std::result::Result<T, E>;

impl PipelineError {
    /// Stable machine-readable error code.
    pub fn code(&self) -> &'static str {
        match self {
            PipelineError::Config(_) => "config_invalid",
            PipelineError::ConfigParse { .. } => "config_parse",
            PipelineError::Io { .. } => "io",
            PipelineError::PlanMismatch { .. } => "plan_mismatch",
            PipelineError::Dataset(_) => "dataset",
            PipelineError::Stats(_) => "stats",
            PipelineError::Linreg(_) => "linreg",
            PipelineError::Tree(_) => "tree",
            PipelineError::Forest(_) => "forest",
            PipelineError::Eval(_) => "eval",
        }
    }

    /// `{code, message, context}` document.
    pub fn to_json(&self, context: Value) -> String {
        json!({
            "code": self.code(),
            "message": self.to_string(),
            "context": context,
        })
        .to_string()
    }
}

fn config_err(msg: impl Into<String>) -> PipelineError {
    PipelineError::Config(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Command {
    Clean,
    Correlate,
    Groups,
    Fit,
    Cv,
    Sweep,
    Report,
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Command::Clean => "clean",
            Command::Correlate => "correlate",
            Command::Groups => "groups",
            Command::Fit => "fit",
            Command::Cv => "cv",
            Command::Sweep => "sweep",
            Command::Report => "report",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Poly,
    #[default]
    Tree,
    Forest,
}

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Default, Serialize, Deserialize, clap::ValueEnum,
)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSetName {
    #[default]
    Socioeconomic,
    HealthIndicators,
    Custom,
}

impl fmt::Display for FeatureSetName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FeatureSetName::Socioeconomic => "socioeconomic",
            FeatureSetName::HealthIndicators => "health_indicators",
            FeatureSetName::Custom => "custom",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableConfig {
    pub name: String,
    /// Relative paths are resolved against the config file's directory.
    pub path: PathBuf,
    pub columns: Vec<ColumnSpec>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Targets {
    pub aggregate: Vec<String>,
    pub specific: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HealthIndicators {
    pub candidates: Vec<String>,
    #[serde(default = "default_k")]
    pub k: usize,
}

fn default_k() -> usize {
    4
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureSets {
    /// Empty means every feature column of the cleaned dataset.
    pub socioeconomic: Vec<String>,
    pub health_indicators: Option<HealthIndicators>,
    pub custom: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSettings {
    pub kind: ModelKind,
    pub degree: usize,
    /// Input column of the polynomial model.
    pub feature: Option<String>,
    pub tree: TreeConfig,
    pub n_trees: usize,
    pub sample_mode: SampleMode,
    pub max_features: Option<usize>,
}

impl Default for ModelSettings {
    fn default() -> Self {
        Self {
            kind: ModelKind::Tree,
            degree: 1,
            feature: None,
            tree: TreeConfig::default(),
            n_trees: 100,
            sample_mode: SampleMode::Bootstrap,
            max_features: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorrelateSettings {
    /// Defaults to every column of the cleaned dataset.
    pub columns: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupSettings {
    pub group_col: String,
    pub threshold: f64,
    pub outcome: String,
    #[serde(default = "default_bins")]
    pub bins: usize,
}

fn default_bins() -> usize {
    20
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CvSettings {
    pub k: usize,
}

impl Default for CvSettings {
    fn default() -> Self {
        Self { k: DEFAULT_FOLDS }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSettings {
    pub depths: Vec<usize>,
    pub test_fraction: f64,
    pub tolerance: f64,
}

impl Default for SweepSettings {
    fn default() -> Self {
        Self {
            depths: (1..=15).collect(),
            test_fraction: 0.3,
            tolerance: DEFAULT_OVERFIT_TOLERANCE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportSettings {
    /// Defaults to the aggregate then the specific targets.
    pub targets: Vec<String>,
    pub feature_sets: Vec<FeatureSetName>,
}

impl Default for ReportSettings {
    fn default() -> Self {
        Self {
            targets: Vec::new(),
            feature_sets: vec![FeatureSetName::Socioeconomic, FeatureSetName::HealthIndicators],
        }
    }
}

fn default_null_tokens() -> Vec<String> {
    DEFAULT_NULL_TOKENS.iter().map(|s| s.to_string()).collect()
}

/// Everything a run needs besides the command itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub schema: u32,
    pub seed: u64,
    /// Not part of the config digest.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    pub tables: Vec<TableConfig>,
    #[serde(default = "default_null_tokens")]
    pub null_tokens: Vec<String>,
    #[serde(default)]
    pub expected_max_discards: Option<usize>,
    #[serde(default)]
    pub targets: Targets,
    /// Target of `fit`, `cv` and `sweep`; defaults to the first listed target.
    #[serde(default)]
    pub target: Option<String>,
    #[serde(default)]
    pub feature_sets: FeatureSets,
    #[serde(default)]
    pub feature_set: FeatureSetName,
    #[serde(default)]
    pub model: ModelSettings,
    #[serde(default)]
    pub correlate: CorrelateSettings,
    #[serde(default)]
    pub groups: Option<GroupSettings>,
    /// JSON object mapping two-digit state codes to region names.
    #[serde(default)]
    pub region_map: Option<PathBuf>,
    #[serde(default)]
    pub cv: CvSettings,
    #[serde(default)]
    pub sweep: SweepSettings,
    #[serde(default)]
    pub report: ReportSettings,
}

/// Command-line values that replace config entries.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub model: Option<ModelKind>,
    pub degree: Option<usize>,
    pub feature: Option<String>,
    pub target: Option<String>,
    pub max_depth: Option<usize>,
    pub n_trees: Option<usize>,
    pub k: Option<usize>,
    pub depths: Option<Vec<usize>>,
    pub feature_set: Option<FeatureSetName>,
}

/// Parses `a..b` / `a..=b` (both inclusive) or a comma-separated list.
pub fn parse_depths(s: &str) -> std::result::Result<Vec<usize>, String> {
    let s = s.trim();
    let parse = |v: &str| {
        v.trim()
            .parse::<usize>()
            .map_err(|_| format!("invalid depth {v:?}"))
    };
    let depths: Vec<usize> = if let Some((a, b)) = s.split_once("..") {
        let b = b.strip_prefix('=').unwrap_or(b);
        let (a, b) = (parse(a)?, parse(b)?);
        if a > b {
            return Err(format!("empty depth range {s:?}"));
        }
        (a..=b).collect()
    } else {
        s.split(',').map(parse).collect::<std::result::Result<_, _>>()?
    };
    if depths.is_empty() || depths.contains(&0) {
        return Err("depths must be >= 1".into());
    }
    Ok(depths)
}

impl PipelineConfig {
    pub fn from_json(s: &str, path: &Path) -> Result<Self> {
        serde_json::from_str(s).map_err(|source| PipelineError::ConfigParse {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(d) = &o.out_dir {
            self.out_dir = Some(d.clone());
        }
        if let Some(m) = o.model {
            self.model.kind = m;
        }
        if let Some(d) = o.degree {
            self.model.degree = d;
        }
        if let Some(f) = &o.feature {
            self.model.feature = Some(f.clone());
        }
        if let Some(t) = &o.target {
            self.target = Some(t.clone());
        }
        if let Some(d) = o.max_depth {
            self.model.tree.max_depth = Some(d);
        }
        if let Some(n) = o.n_trees {
            self.model.n_trees = n;
        }
        if let Some(k) = o.k {
            self.cv.k = k;
        }
        if let Some(d) = &o.depths {
            self.sweep.depths = d.clone();
        }
        if let Some(f) = o.feature_set {
            self.feature_set = f;
        }
    }

    /// SHA-256 of the canonical JSON form, ignoring the output directory.
    pub fn digest(&self) -> String {
        let mut c = self.clone();
        c.out_dir = None;
        let bytes = serde_json::to_vec(&c).expect("config serializes");
        hex_sha256(&bytes)
    }

    /// Standard names of the value columns declared across all tables.
    fn declared(&self) -> BTreeMap<&str, ColumnRole> {
        self.tables
            .iter()
            .flat_map(|t| &t.columns)
            .filter(|c| matches!(c.role, ColumnRole::Feature | ColumnRole::Target))
            .map(|c| (c.standard_name.as_str(), c.role))
            .collect()
    }

    fn default_target(&self) -> Option<&str> {
        self.target
            .as_deref()
            .or_else(|| self.targets.aggregate.first().map(String::as_str))
            .or_else(|| self.targets.specific.first().map(String::as_str))
    }

    fn report_targets(&self) -> Vec<String> {
        if self.report.targets.is_empty() {
            self.targets
                .aggregate
                .iter()
                .chain(&self.targets.specific)
                .cloned()
                .collect()
        } else {
            self.report.targets.clone()
        }
    }

    fn forest_config(&self) -> ForestConfig {
        ForestConfig {
            n_trees: self.model.n_trees,
            tree: self.model.tree.clone(),
            seed: self.seed,
            sample_mode: self.model.sample_mode,
            max_features: self.model.max_features,
        }
    }

    /// Checks everything that can be checked without reading the tables.
    pub fn validate(&self, base_dir: &Path) -> Result<()> {
        if self.schema != SCHEMA_VERSION {
            return Err(config_err(format!(
                "unsupported schema {}, expected {SCHEMA_VERSION}",
                self.schema
            )));
        }
        if self.tables.is_empty() {
            return Err(config_err("at least one table is required"));
        }
        for t in &self.tables {
            let p = base_dir.join(&t.path);
            if !p.is_file() {
                return Err(config_err(format!(
                    "table `{}`: file {} does not exist",
                    t.name,
                    p.display()
                )));
            }
        }
        if let Some(r) = &self.region_map {
            let p = base_dir.join(r);
            if !p.is_file() {
                return Err(config_err(format!("region map {} does not exist", p.display())));
            }
        }
        let declared = self.declared();
        let known = |name: &str, what: &str| -> Result<()> {
            if declared.contains_key(name) {
                Ok(())
            } else {
                Err(config_err(format!("{what} `{name}` is not a declared column")))
            }
        };
        for t in self.targets.aggregate.iter().chain(&self.targets.specific) {
            known(t, "target")?;
            if declared[t.as_str()] != ColumnRole::Target {
                return Err(config_err(format!("target `{t}` is not declared with role target")));
            }
        }
        if let Some(t) = &self.target {
            known(t, "target")?;
        }
        for t in &self.report.targets {
            known(t, "report target")?;
        }
        for f in &self.feature_sets.socioeconomic {
            known(f, "socioeconomic feature")?;
        }
        if let Some(h) = &self.feature_sets.health_indicators {
            for c in &h.candidates {
                known(c, "health indicator candidate")?;
            }
            if h.k == 0 {
                return Err(config_err("health_indicators.k must be >= 1"));
            }
        }
        for f in self.feature_sets.custom.iter().flatten() {
            known(f, "custom feature")?;
        }
        if let Some(f) = &self.model.feature {
            known(f, "model feature")?;
        }
        if let Some(cols) = &self.correlate.columns {
            for c in cols {
                known(c, "correlate column")?;
            }
        }
        if let Some(g) = &self.groups {
            known(&g.group_col, "group column")?;
            known(&g.outcome, "group outcome")?;
            if !g.threshold.is_finite() {
                return Err(config_err("groups.threshold must be finite"));
            }
            if g.bins == 0 {
                return Err(config_err("groups.bins must be >= 1"));
            }
        }
        if !(1..=MAX_DEGREE).contains(&self.model.degree) {
            return Err(config_err(format!(
                "model.degree must be in 1..={MAX_DEGREE}, got {}",
                self.model.degree
            )));
        }
        self.forest_config().validate()?;
        if self.cv.k < 2 {
            return Err(config_err("cv.k must be >= 2"));
        }
        if self.sweep.depths.is_empty() || self.sweep.depths.contains(&0) {
            return Err(config_err("sweep.depths must be a non-empty list of depths >= 1"));
        }
        if !(self.sweep.test_fraction > 0.0 && self.sweep.test_fraction < 1.0) {
            return Err(config_err("sweep.test_fraction must be in (0, 1)"));
        }
        if !(self.sweep.tolerance >= 0.0 && self.sweep.tolerance.is_finite()) {
            return Err(config_err("sweep.tolerance must be a finite value >= 0"));
        }
        Ok(())
    }
}

pub fn hex_sha256(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

/// Loaded config plus the directories it refers to.
#[derive(Debug, Clone)]
pub struct Pipeline {
    pub config: PipelineConfig,
    pub base_dir: PathBuf,
    pub out_dir: PathBuf,
}

/// Paths written by one run, in write order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunSummary {
    pub artifacts: Vec<PathBuf>,
}

impl Pipeline {
    /// Reads the config file and applies the overrides. A relative `out_dir`
    /// from the file is resolved against the config directory; one given as
    /// an override is used as is.
    pub fn load(config_path: &Path, overrides: &Overrides) -> Result<Self> {
        let text = fs::read_to_string(config_path).map_err(|source| PipelineError::Io {
            path: config_path.to_path_buf(),
            source,
        })?;
        let mut config = PipelineConfig::from_json(&text, config_path)?;
        let base_dir = config_path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_default();
        let file_out = config
            .out_dir
            .as_ref()
            .map(|d| base_dir.join(d))
            .unwrap_or_else(|| base_dir.join("out"));
        config.apply(overrides);
        let out_dir = overrides.out_dir.clone().unwrap_or(file_out);
        config.validate(&base_dir)?;
        Ok(Self {
            config,
            base_dir,
            out_dir,
        })
    }

    pub fn from_config(config: PipelineConfig, base_dir: &Path, out_dir: &Path) -> Result<Self> {
        config.validate(base_dir)?;
        Ok(Self {
            config,
            base_dir: base_dir.to_path_buf(),
            out_dir: out_dir.to_path_buf(),
        })
    }

    pub fn meta(&self) -> Meta {
        Meta {
            seed: self.config.seed,
            config_digest: self.config.digest(),
        }
    }

    /// Loads, null-normalizes and joins the configured tables.
    pub fn load_dataset(&self) -> Result<CleanDataset> {
        let tokens = NullTokens::new(&self.config.null_tokens);
        let mut tables = Vec::with_capacity(self.config.tables.len());
        let mut specs = Vec::with_capacity(self.config.tables.len());
        for t in &self.config.tables {
            let raw = load_table(&self.base_dir.join(&t.path), &t.name, &t.columns)?;
            tables.push(normalize_nulls(raw, &tokens));
            specs.push(t.columns.clone());
        }
        let mut data = join_and_clean(&tables, &specs)?;
        if let Some(max) = self.config.expected_max_discards {
            data.report.check_discard_budget(max);
        }
        Ok(data)
    }

    fn input_digests(&self) -> Result<BTreeMap<String, String>> {
        let mut paths: Vec<&PathBuf> = self.config.tables.iter().map(|t| &t.path).collect();
        paths.extend(&self.config.region_map);
        paths
            .into_iter()
            .map(|p| {
                let full = self.base_dir.join(p);
                let bytes = fs::read(&full).map_err(|source| PipelineError::Io { path: full, source })?;
                Ok((p.display().to_string(), hex_sha256(&bytes)))
            })
            .collect()
    }

    /// Runs one command and writes its artifacts and manifest.
    pub fn run(&self, command: Command) -> Result<RunSummary> {
        let mut out = ArtifactWriter::new(&self.out_dir, self.meta(), command)?;
        let data = self.load_dataset()?;
        match command {
            Command::Clean => self.clean(&data, &mut out)?,
            Command::Correlate => self.correlate(&data, &mut out)?,
            Command::Groups => self.groups(&data, &mut out)?,
            Command::Fit => self.fit(&data, &mut out)?,
            Command::Cv => self.cv(&data, &mut out)?,
            Command::Sweep => self.sweep(&data, &mut out)?,
            Command::Report => self.report(&data, &mut out)?,
        }
        out.finish(self.input_digests()?)
    }

    fn target(&self) -> Result<&str> {
        self.config
            .default_target()
            .ok_or_else(|| config_err("no target configured (set `target` or `targets`)"))
    }

    /// Feature names of a feature set for one target, plus the ranking when the
    /// set is chosen by correlation.
    pub fn resolve_features(
        &self,
        data: &CleanDataset,
        set: FeatureSetName,
        target: &str,
    ) -> Result<(Vec<String>, Option<Vec<RankedColumn>>)> {
        let sets = &self.config.feature_sets;
        let names: Vec<String> = match set {
            FeatureSetName::Socioeconomic => {
                if sets.socioeconomic.is_empty() {
                    data.feature_names.clone()
                } else {
                    sets.socioeconomic.clone()
                }
            }
            FeatureSetName::HealthIndicators => {
                let h = sets
                    .health_indicators
                    .as_ref()
                    .ok_or_else(|| config_err("feature_sets.health_indicators is not configured"))?;
                let candidates: Vec<String> =
                    h.candidates.iter().filter(|c| *c != target).cloned().collect();
                let ranked = top_k_correlated(data, &candidates, target, h.k)?;
                let names = ranked.iter().map(|r| r.name.clone()).collect();
                return Ok((names, Some(ranked)));
            }
            FeatureSetName::Custom => sets
                .custom
                .clone()
                .ok_or_else(|| config_err("feature_sets.custom is not configured"))?,
        };
        let names: Vec<String> = names.into_iter().filter(|n| n != target).collect();
        if names.is_empty() {
            return Err(config_err(format!("feature set `{set}` is empty for target `{target}`")));
        }
        Ok((names, None))
    }

    /// Input columns and model for `fit`/`cv`/`sweep` style runs.
    fn design(
        &self,
        data: &CleanDataset,
        set: FeatureSetName,
        target: &str,
    ) -> Result<(Vec<String>, Option<Vec<RankedColumn>>, ModelSpec)> {
        let m = &self.config.model;
        Ok(match m.kind {
            ModelKind::Poly => {
                let f = m
                    .feature
                    .clone()
                    .ok_or_else(|| config_err("the poly model needs `model.feature` or --feature"))?;
                (vec![f], None, ModelSpec::Poly { degree: m.degree, feature: 0 })
            }
            ModelKind::Tree => {
                let (names, ranked) = self.resolve_features(data, set, target)?;
                (names, ranked, ModelSpec::Tree { config: m.tree.clone() })
            }
            ModelKind::Forest => {
                let (names, ranked) = self.resolve_features(data, set, target)?;
                (names, ranked, ModelSpec::Forest { config: self.config.forest_config() })
            }
        })
    }

    fn clean(&self, data: &CleanDataset, out: &mut ArtifactWriter) -> Result<()> {
        out.write_bytes("cleaned.csv", &data.to_csv_bytes())?;
        out.write_json("cleaning_report.json", &data.report)?;
        Ok(())
    }

    fn correlate(&self, data: &CleanDataset, out: &mut ArtifactWriter) -> Result<()> {
        let columns = match &self.config.correlate.columns {
            Some(c) => c.clone(),
            None => data.column_names().cloned().collect(),
        };
        let m = corr_matrix(data, &columns)?;
        out.write_bytes("correlation.csv", m.to_csv().as_bytes())?;
        out.write_text(
            "correlation.svg",
            &svg::heatmap(&m, "Pearson correlation", &out.meta),
        )?;
        let mut top = BTreeMap::new();
        if self.config.feature_sets.health_indicators.is_some() {
            for t in &self.config.targets.aggregate {
                let (_, ranked) =
                    self.resolve_features(data, FeatureSetName::HealthIndicators, t)?;
                top.insert(t.clone(), ranked);
            }
        }
        out.write_json(
            "correlation_summary.json",
            &json!({ "columns": columns, "degenerate": m.degenerate, "top_correlated": top }),
        )?;
        Ok(())
    }

    fn groups(&self, data: &CleanDataset, out: &mut ArtifactWriter) -> Result<()> {
        if self.config.groups.is_none() && self.config.region_map.is_none() {
            return Err(config_err("`groups` needs a `groups` section or a `region_map`"));
        }
        if let Some(g) = &self.config.groups {
            let cmp = threshold_groups(data, &g.group_col, g.threshold, &g.outcome)?;
            let (high, low) =
                split_by_threshold(&data.column(&g.group_col)?, &data.column(&g.outcome)?, g.threshold);
            out.write_json("groups.json", &cmp)?;
            let hi_label = format!("{} > {}", g.group_col, g.threshold);
            let lo_label = format!("{} <= {}", g.group_col, g.threshold);
            out.write_text(
                "groups.svg",
                &svg::histograms(
                    &[(&hi_label, RED, &high), (&lo_label, BLUE, &low)],
                    g.bins,
                    &format!("{} by {}", g.outcome, g.group_col),
                    &g.outcome,
                    &out.meta,
                ),
            )?;
        }
        if let Some(path) = &self.config.region_map {
            let full = self.base_dir.join(path);
            let text = fs::read_to_string(&full).map_err(|source| PipelineError::Io {
                path: full.clone(),
                source,
            })?;
            let map: BTreeMap<String, String> = serde_json::from_str(&text)
                .map_err(|source| PipelineError::ConfigParse { path: full, source })?;
            let outcome = match &self.config.groups {
                Some(g) => g.outcome.clone(),
                None => self.target()?.to_string(),
            };
            let labels = region_labels(&data.keys, &map);
            let unmapped = labels.iter().filter(|l| l.is_none()).count();
            let summaries = category_groups(&labels, &data.column(&outcome)?)?;
            out.write_json(
                "regions.json",
                &json!({ "outcome": outcome, "unmapped_rows": unmapped, "regions": summaries }),
            )?;
            let bars: Vec<(String, f64, Option<f64>)> = summaries
                .iter()
                .map(|s| (s.label.clone(), s.mean, Some(s.std_dev)))
                .collect();
            out.write_text(
                "regions.svg",
                &svg::bar_chart(&bars, &format!("{outcome} by region"), &outcome, &out.meta),
            )?;
        }
        Ok(())
    }

    fn fit(&self, data: &CleanDataset, out: &mut ArtifactWriter) -> Result<()> {
        let target = self.target()?.to_string();
        let (names, ranked, spec) = self.design(data, self.config.feature_set, &target)?;
        let x = data.matrix(&names)?;
        let y = data.column(&target)?;
        if let Some(r) = &ranked {
            out.write_json("selected_features.json", &json!({ "target": target, "ranked": r }))?;
        }
        match spec {
            ModelSpec::Poly { degree, .. } => {
                let xs = x.column(0);
                let model = fit_poly(&xs, &y, degree)?.with_names(&names[0], &target);
                let rep = residual_report(&model, &xs, &y)?;
                let fitted = crate::linreg::predict(&model, &xs);
                out.write_json("model_poly.json", &model)?;
                out.write_json(
                    "residuals.json",
                    &json!({
                        "n": xs.len(),
                        "rmse": rep.rmse,
                        "spread_ratio": spread_ratio(&fitted, &rep.residuals),
                    }),
                )?;
                let points: Vec<(f64, f64)> = xs.iter().copied().zip(y.iter().copied()).collect();
                let (lo, hi) = xs
                    .iter()
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
                let curve: Vec<(f64, f64)> = (0..=200)
                    .map(|i| {
                        let v = lo + (hi - lo) * i as f64 / 200.0;
                        (v, model.predict_one(v))
                    })
                    .collect();
                let label = format!("degree {degree} fit");
                out.write_text(
                    "poly_fit.svg",
                    &svg::scatter(
                        &points,
                        &[Series { label: &label, color: RED, points: curve }],
                        &format!("{target} vs {}", names[0]),
                        &names[0],
                        &target,
                        &out.meta,
                    ),
                )?;
                let resid: Vec<(f64, f64)> =
                    fitted.iter().copied().zip(rep.residuals.iter().copied()).collect();
                let (flo, fhi) = fitted
                    .iter()
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
                out.write_text(
                    "poly_residuals.svg",
                    &svg::scatter(
                        &resid,
                        &[Series { label: "zero", color: GREY, points: vec![(flo, 0.0), (fhi, 0.0)] }],
                        "Residuals vs fitted",
                        "fitted",
                        "residual",
                        &out.meta,
                    ),
                )?;
            }
            ModelSpec::Tree { config } => {
                let tree = fit_tree(&x, &y, &config)?.with_names(&names, &target);
                let pred = tree.predict(&x)?;
                out.write_json("model_tree.json", &tree)?;
                let mut text = format!("# seed={} config_digest={}\n", out.meta.seed, out.meta.config_digest);
                text.push_str(&tree.render_text());
                out.write_text("tree.txt", &text)?;
                out.write_text("tree_fit.svg", &observed_vs_predicted(&y, &pred, &target, "tree", &out.meta))?;
            }
            ModelSpec::Forest { config } => {
                let forest = fit_forest(&x, &y, &config)?.with_names(&names, &target);
                let pred = forest.predict(&x)?;
                out.write_json("model_forest.json", &forest)?;
                out.write_text(
                    "forest_fit.svg",
                    &observed_vs_predicted(&y, &pred, &target, "forest", &out.meta),
                )?;
            }
        }
        Ok(())
    }

    fn cv(&self, data: &CleanDataset, out: &mut ArtifactWriter) -> Result<()> {
        let target = self.target()?.to_string();
        let (names, _, spec) = self.design(data, self.config.feature_set, &target)?;
        let plan = kfold_plan(data.nrows(), self.config.cv.k, self.config.seed)?;
        let report = cross_validate(&data.matrix(&names)?, &data.column(&target)?, &spec, &plan)?;
        out.write_json(
            "cv_report.json",
            &json!({ "target": target, "features": names, "report": report }),
        )?;
        let scores: Vec<f64> = report.per_fold_r2.iter().flatten().copied().collect();
        out.write_text(
            "cv_scores.svg",
            &svg::histograms(
                &[("fold R2", BLUE, &scores)],
                10,
                &format!("{}-fold R2 for {target}", report.k),
                "R2",
                &out.meta,
            ),
        )?;
        Ok(())
    }

    fn sweep(&self, data: &CleanDataset, out: &mut ArtifactWriter) -> Result<()> {
        let target = self.target()?.to_string();
        let (names, _, spec) = self.design(data, self.config.feature_set, &target)?;
        let s = &self.config.sweep;
        let (train, test) = train_test_split(data.nrows(), s.test_fraction, self.config.seed)?;
        let x = data.matrix(&names)?;
        let y = data.column(&target)?;
        let pick = |rows: &[usize]| rows.iter().map(|&r| y[r]).collect::<Vec<f64>>();
        let report = depth_sweep(
            &x.select_rows(&train),
            &pick(&train),
            &x.select_rows(&test),
            &pick(&test),
            &s.depths,
            &spec,
            s.tolerance,
        )?;
        out.write_json(
            "sweep_report.json",
            &json!({
                "target": target,
                "features": names,
                "train_rows": train.len(),
                "test_rows": test.len(),
                "report": report,
            }),
        )?;
        let curve = |scores: &[Option<f64>]| -> Vec<(f64, f64)> {
            report
                .depths
                .iter()
                .zip(scores)
                .filter_map(|(&d, s)| s.map(|v| (d as f64, v)))
                .collect()
        };
        out.write_text(
            "sweep.svg",
            &svg::line_chart(
                &[
                    Series { label: "train", color: BLUE, points: curve(&report.train_r2) },
                    Series { label: "test", color: RED, points: curve(&report.test_r2) },
                ],
                &format!("R2 by max depth for {target}"),
                "max depth",
                "R2",
                &out.meta,
            ),
        )?;
        Ok(())
    }

    fn report(&self, data: &CleanDataset, out: &mut ArtifactWriter) -> Result<()> {
        if self.config.model.kind == ModelKind::Poly {
            return Err(config_err("`report` compares feature sets and needs a tree or forest model"));
        }
        let targets = self.config.report_targets();
        if targets.is_empty() {
            return Err(config_err("`report` needs at least one target"));
        }
        let plan = kfold_plan(data.nrows(), self.config.cv.k, self.config.seed)?;
        let mut rows = Vec::new();
        let mut csv = String::from("target,feature_set,features,mean_r2,std_r2,flagged_folds\n");
        let mut bars = Vec::new();
        for target in &targets {
            let y = data.column(target)?;
            let mut blocks = Vec::new();
            for &set in &self.config.report.feature_sets {
                let (names, ranked, spec) = self.design(data, set, target)?;
                let cv = cross_validate(&data.matrix(&names)?, &y, &spec, &plan)?;
                let _ = writeln_csv(
                    &mut csv,
                    &[
                        target.clone(),
                        set.to_string(),
                        names.join(";"),
                        fmt_opt(cv.mean_r2),
                        fmt_opt(cv.std_r2),
                        cv.flagged_folds.len().to_string(),
                    ],
                );
                if let Some(m) = cv.mean_r2 {
                    bars.push((format!("{target}/{set}"), m, cv.std_r2));
                }
                blocks.push((set, names, ranked, cv));
            }
            let comparisons = blocks
                .windows(2)
                .map(|w| compare_reports(&w[1].3, &w[0].3).map(|d| json!({
                    "feature_set": w[1].0,
                    "baseline": w[0].0,
                    "mean_r2_difference": d,
                })))
                .collect::<Result<Vec<_>>>()?;
            rows.push(json!({
                "target": target,
                "blocks": blocks.iter().map(|(set, names, ranked, cv)| json!({
                    "feature_set": set,
                    "features": names,
                    "ranked": ranked,
                    "cv": cv,
                })).collect::<Vec<_>>(),
                "comparisons": comparisons,
            }));
        }
        out.write_json(
            "report.json",
            &json!({ "k": plan.k, "plan_digest": plan.digest(), "targets": rows }),
        )?;
        out.write_bytes("report.csv", csv.as_bytes())?;
        out.write_text(
            "report.svg",
            &svg::bar_chart(&bars, "Mean cross-validated R2 by feature set", "mean R2", &out.meta),
        )?;
        Ok(())
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| x.to_string())
}

fn writeln_csv(out: &mut String, fields: &[String]) -> fmt::Result {
    use std::fmt::Write as _;
    let quoted: Vec<String> = fields
        .iter()
        .map(|f| {
            if f.contains([',', '"', '\n']) {
                format!("\"{}\"", f.replace('"', "\"\""))
            } else {
                f.clone()
            }
        })
        .collect();
    writeln!(out, "{}", quoted.join(","))
}

/// Difference of mean R² (`a - b`); refuses reports built on different folds.
pub fn compare_reports(a: &CvReport, b: &CvReport) -> Result<Option<f64>> {
    if a.plan_digest != b.plan_digest {
        return Err(PipelineError::PlanMismatch {
            left: a.plan_digest.clone(),
            right: b.plan_digest.clone(),
        });
    }
    Ok(a.mean_r2.zip(b.mean_r2).map(|(x, y)| x - y))
}

fn observed_vs_predicted(y: &[f64], pred: &[f64], target: &str, model: &str, meta: &Meta) -> String {
    let points: Vec<(f64, f64)> = y.iter().copied().zip(pred.iter().copied()).collect();
    let (lo, hi) = y
        .iter()
        .chain(pred)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    svg::scatter(
        &points,
        &[Series { label: "y = x", color: GREY, points: vec![(lo, lo), (hi, hi)] }],
        &format!("{model}: observed vs predicted {target}"),
        "observed",
        "predicted",
        meta,
    )
}

/// Inserts a `meta` object into a JSON object artifact.
pub fn with_meta(mut value: Value, meta: &Meta) -> Value {
    if let Value::Object(map) = &mut value {
        map.insert(
            "meta".into(),
            json!({ "seed": meta.seed, "config_digest": meta.config_digest }),
        );
    }
    value
}

/// Removes the `meta` object again, e.g. before loading a model artifact.
pub fn strip_meta(mut value: Value) -> Value {
    if let Value::Object(map) = &mut value {
        map.remove("meta");
    }
    value
}

/// Writes artifacts atomically and records their digests.
pub struct ArtifactWriter {
    dir: PathBuf,
    meta: Meta,
    command: Command,
    written: BTreeMap<String, String>,
    order: Vec<PathBuf>,
}

impl ArtifactWriter {
    pub fn new(dir: &Path, meta: Meta, command: Command) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|source| PipelineError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        Ok(Self {
            dir: dir.to_path_buf(),
            meta,
            command,
            written: BTreeMap::new(),
            order: Vec::new(),
        })
    }

    fn atomic_write(&self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.dir.join(name);
        let tmp = self.dir.join(format!(".{name}.tmp-{}", std::process::id()));
        let io = |source| PipelineError::Io {
            path: path.clone(),
            source,
        };
        let mut f = fs::File::create(&tmp).map_err(io)?;
        f.write_all(bytes).map_err(io)?;
        f.sync_all().map_err(io)?;
        drop(f);
        fs::rename(&tmp, &path).map_err(io)?;
        Ok(path)
    }

    pub fn write_bytes(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.atomic_write(name, bytes)?;
        self.written.insert(name.to_string(), hex_sha256(bytes));
        self.order.push(path);
        Ok(())
    }

    pub fn write_text(&mut self, name: &str, text: &str) -> Result<()> {
        self.write_bytes(name, text.as_bytes())
    }

    /// Pretty JSON with the run's `meta` object added.
    pub fn write_json<T: Serialize + ?Sized>(&mut self, name: &str, value: &T) -> Result<()> {
        let v = serde_json::to_value(value).expect("artifact serializes");
        let mut s = serde_json::to_string_pretty(&with_meta(v, &self.meta)).expect("artifact serializes");
        s.push('\n');
        self.write_bytes(name, s.as_bytes())
    }

    fn finish(mut self, inputs: BTreeMap<String, String>) -> Result<RunSummary> {
        let manifest = json!({
            "command": self.command.to_string(),
            "seed": self.meta.seed,
            "config_digest": self.meta.config_digest,
            "inputs": inputs,
            "artifacts": self.written,
        });
        let mut s = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        s.push('\n');
        let name = format!("manifest.{}.json", self.command);
        let path = self.atomic_write(&name, s.as_bytes())?;
        self.order.push(path);
        Ok(RunSummary {
            artifacts: self.order,
        })
    }
}

/// Reads a model artifact written by `fit`, dropping its `meta` object.
pub fn read_artifact(path: &Path) -> Result<Value> {
    let text = fs::read_to_string(path).map_err(|source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut de = serde_json::Deserializer::from_str(&text);
    de.disable_recursion_limit();
    let v = Value::deserialize(&mut de).map_err(|source| PipelineError::ConfigParse {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(strip_meta(v))
}
