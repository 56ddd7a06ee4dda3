//! Config-driven prompt × model sweeps with per-grid-point prediction files,
//! a result table, and factor-wise aggregation.
//!
//! A sweep is fully determined by one TOML document:
//!
//! ```toml
//! seed = 13
//! train = "train.jsonl"
//! eval = "dev.jsonl"
//! output_dir = "runs/remote"
//!
//! [models.toy]
//! provider = "mock"
//! model_id = "toy"
//! mock = { kind = "random-label", level = "clarity" }
//!
//! [[grid]]                      # an explicit grid point
//! name = "fs27-enriched-toy"
//! model = "toy"
//! strategy = "FS"
//! shots = 27
//! enriched = true
//!
//! [[product]]                   # expands to every combination
//! models = ["toy"]
//! strategies = ["ZS", "ZS+Re2", "FS9", "CoT"]
//! enriched = [false, true]
//! ```
//!
//! Relative paths resolve against the config file's directory.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;

use crate::cache::ResponseCache;
use crate::dataset::{load_split, Dataset, DatasetError, Split};
use crate::llm_client::{classify_instance, LlmClient, ModelConfig, PredictError, Prediction};
use crate::metrics::{confusion_matrix, prf_report};
use crate::parallel::bounded_map;
use crate::prediction_file::{render_predictions, write_text, PredictionFileError};
use crate::prompting::{select_demonstrations_excluding, PromptSpec, Strategy};
use crate::taxonomy::{Label, LabelTaxonomy, Level, NameStyle};

#[derive(Debug, Error)]
pub enum SweepError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] DatasetError),
    #[error(transparent)]
    Output(#[from] PredictionFileError),
    #[error("cache error: {0}")]
    Cache(#[from] std::io::Error),
    #[error("result table has no scored rows")]
    EmptyTable,
}

fn default_seed() -> u64 {
    13
}

fn default_level() -> Level {
    Level::Clarity
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridEntry {
    pub name: String,
    pub model: String,
    pub strategy: Strategy,
    #[serde(default)]
    pub shots: usize,
    #[serde(default = "default_level")]
    pub level: Level,
    #[serde(default)]
    pub enriched: bool,
    #[serde(default)]
    pub president_name: bool,
    #[serde(default)]
    pub subcategory_definitions: bool,
    /// Overrides the sweep seed for demonstration sampling.
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProductEntry {
    pub models: Vec<String>,
    /// Strategy tags: `ZS`, `ZS+Re2`, `CoT`, or `FS<k>`.
    pub strategies: Vec<String>,
    #[serde(default = "default_enriched_axis")]
    pub enriched: Vec<bool>,
    #[serde(default = "default_level")]
    pub level: Level,
    #[serde(default)]
    pub president_name: bool,
    #[serde(default)]
    pub subcategory_definitions: bool,
}

fn default_enriched_axis() -> Vec<bool> {
    vec![false]
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub train: Option<PathBuf>,
    pub eval: PathBuf,
    #[serde(default = "default_eval_split")]
    pub eval_split: Split,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub cache_dir: Option<PathBuf>,
    /// Write "Ambivalent Reply" instead of "Ambivalent" in prediction files.
    #[serde(default)]
    pub prompt_style_labels: bool,
    pub models: BTreeMap<String, ModelConfig>,
    #[serde(default)]
    pub grid: Vec<GridEntry>,
    #[serde(default)]
    pub product: Vec<ProductEntry>,
}

fn default_eval_split() -> Split {
    Split::Dev
}

/// A fully resolved grid point.
#[derive(Debug, Clone)]
pub struct GridPoint {
    pub name: String,
    pub model_key: String,
    pub spec: PromptSpec,
}

/// Parses `FS27` / `ZS+Re2` style tags into a strategy and shot count.
pub fn parse_strategy_tag(tag: &str) -> Result<(Strategy, usize), String> {
    let t = tag.trim();
    if let Some(k) = t.strip_prefix("FS").or_else(|| t.strip_prefix("fs")) {
        let shots = k.parse().map_err(|_| format!("bad shot count in `{tag}`"))?;
        return Ok((Strategy::FewShot, shots));
    }
    Ok((t.parse()?, 0))
}

impl SweepConfig {
    pub fn from_toml(text: &str) -> Result<Self, SweepError> {
        toml::from_str(text).map_err(|e| SweepError::Config(e.to_string()))
    }

    /// Loads a config and resolves its relative paths against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, SweepError> {
        let path = path.as_ref();
        let text =
            fs::read_to_string(path).map_err(|e| SweepError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        cfg.rebase(base);
        Ok(cfg)
    }

    pub fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(t) = self.train.as_mut() {
            fix(t);
        }
        fix(&mut self.eval);
        fix(&mut self.output_dir);
        if let Some(c) = self.cache_dir.as_mut() {
            fix(c);
        }
    }

    pub fn cache_dir(&self) -> PathBuf {
        self.cache_dir.clone().unwrap_or_else(|| self.output_dir.join("cache"))
    }

    pub fn label_style(&self) -> NameStyle {
        if self.prompt_style_labels {
            NameStyle::Prompt
        } else {
            NameStyle::Short
        }
    }

    /// Expands explicit and product entries into validated grid points.
    pub fn grid_points(&self) -> Result<Vec<GridPoint>, SweepError> {
        let mut points = Vec::new();
        for g in &self.grid {
            points.push(GridPoint {
                name: g.name.clone(),
                model_key: g.model.clone(),
                spec: PromptSpec {
                    strategy: g.strategy,
                    shots: g.shots,
                    level: g.level,
                    enriched: g.enriched,
                    president_name: g.president_name,
                    subcategory_definitions: g.subcategory_definitions,
                    seed: g.seed.unwrap_or(self.seed),
                },
            });
        }
        for p in &self.product {
            for model in &p.models {
                for tag in &p.strategies {
                    let (strategy, shots) = parse_strategy_tag(tag).map_err(SweepError::Config)?;
                    for &enriched in &p.enriched {
                        let spec = PromptSpec {
                            strategy,
                            shots,
                            level: p.level,
                            enriched,
                            president_name: p.president_name,
                            subcategory_definitions: p.subcategory_definitions,
                            seed: self.seed,
                        };
                        let mut name = format!(
                            "{}-{}",
                            spec.strategy_tag().to_lowercase().replace('+', "-"),
                            if enriched { "enriched" } else { "atomic" }
                        );
                        if p.level == Level::Evasion {
                            name.push_str("-evasion");
                        }
                        if p.subcategory_definitions {
                            name.push_str("-subcat");
                        }
                        if p.president_name {
                            name.push_str("-pres");
                        }
                        name.push('-');
                        name.push_str(model);
                        points.push(GridPoint {
                            name,
                            model_key: model.clone(),
                            spec,
                        });
                    }
                }
            }
        }

        if points.is_empty() {
            return Err(SweepError::Config("the sweep has no grid points".into()));
        }
        let mut seen = HashSet::new();
        for p in &points {
            if !seen.insert(p.name.as_str()) {
                return Err(SweepError::Config(format!("duplicate grid point name `{}`", p.name)));
            }
            if p.name.contains(['/', '\\']) || p.name.trim().is_empty() {
                return Err(SweepError::Config(format!(
                    "grid point name `{}` is not a valid file stem",
                    p.name
                )));
            }
            if !self.models.contains_key(&p.model_key) {
                return Err(SweepError::Config(format!(
                    "grid point `{}` references unknown model `{}`",
                    p.name, p.model_key
                )));
            }
            p.spec
                .validate()
                .map_err(|e| SweepError::Config(format!("grid point `{}`: {e}", p.name)))?;
            if p.spec.strategy == Strategy::FewShot && self.train.is_none() {
                return Err(SweepError::Config(format!(
                    "grid point `{}` is few-shot but no train split is configured",
                    p.name
                )));
            }
        }
        Ok(points)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RowStatus {
    Ok,
    Warning(String),
    Failed { message: String, transport: bool },
}

impl RowStatus {
    fn render(&self) -> String {
        match self {
            RowStatus::Ok => "ok".into(),
            RowStatus::Warning(w) => format!("warning: {w}"),
            RowStatus::Failed { message, .. } => format!("error: {message}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub name: String,
    pub strategy: String,
    pub enriched: bool,
    pub subcategory_definitions: bool,
    pub president_name: bool,
    pub model_id: String,
    pub level: Level,
    /// `None` when the grid point failed.
    pub macro_f1: Option<f64>,
    pub per_class_f1: Vec<f64>,
    pub scored: usize,
    pub unparsed: usize,
    pub status: RowStatus,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SweepResultTable {
    pub rows: Vec<SweepRow>,
}

impl SweepResultTable {
    pub fn to_tsv(&self) -> String {
        let mut out = String::from(
            "name\tstrategy\tenriched\tsubcategories\tpresident\tmodel_id\tlevel\tmacro_f1\tper_class_f1\tscored\tunparsed\tstatus\n",
        );
        for r in &self.rows {
            let macro_f1 = r.macro_f1.map(|m| format!("{m:.4}")).unwrap_or_default();
            let per_class = r
                .level
                .labels()
                .iter()
                .zip(&r.per_class_f1)
                .map(|(l, f)| format!("{l}={f:.4}"))
                .collect::<Vec<_>>()
                .join(";");
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
                r.name,
                r.strategy,
                r.enriched,
                r.subcategory_definitions,
                r.president_name,
                r.model_id,
                r.level,
                macro_f1,
                per_class,
                r.scored,
                r.unparsed,
                r.status.render().replace(['\t', '\n'], " ")
            ));
        }
        out
    }

    /// Rows ordered by macro-F1, best first; failed rows last.
    pub fn ranked(&self) -> Vec<&SweepRow> {
        let mut rows: Vec<&SweepRow> = self.rows.iter().collect();
        rows.sort_by(|a, b| {
            let key = |r: &SweepRow| r.macro_f1.unwrap_or(f64::NEG_INFINITY);
            key(b).total_cmp(&key(a)).then_with(|| a.name.cmp(&b.name))
        });
        rows
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Factor {
    Strategy,
    Enriched,
    Model,
}

impl Factor {
    fn value(self, row: &SweepRow) -> String {
        match self {
            Factor::Strategy => row.strategy.clone(),
            Factor::Enriched => if row.enriched { "enriched" } else { "atomic" }.to_string(),
            Factor::Model => row.model_id.clone(),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Factor::Strategy => "strategy",
            Factor::Enriched => "input",
            Factor::Model => "model",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FactorMean {
    pub value: String,
    pub mean_macro_f1: f64,
    pub rows: usize,
}

/// Mean macro-F1 per value of `factor`, averaging over every other design
/// variable. Groups appear in first-seen order; failed rows are skipped.
pub fn aggregate_by_factor(table: &SweepResultTable, factor: Factor) -> Result<Vec<FactorMean>, SweepError> {
    let mut order: Vec<String> = Vec::new();
    let mut sums: HashMap<String, (f64, usize)> = HashMap::new();
    for row in &table.rows {
        let Some(f1) = row.macro_f1 else { continue };
        let key = factor.value(row);
        let slot = sums.entry(key.clone()).or_insert_with(|| {
            order.push(key);
            (0.0, 0)
        });
        slot.0 += f1;
        slot.1 += 1;
    }
    if order.is_empty() {
        return Err(SweepError::EmptyTable);
    }
    Ok(order
        .into_iter()
        .map(|value| {
            let (sum, n) = sums[&value];
            FactorMean {
                value,
                mean_macro_f1: sum / n as f64,
                rows: n,
            }
        })
        .collect())
}

/// Atomic mean, enriched mean, and their difference.
pub fn enriched_delta(table: &SweepResultTable) -> Option<(f64, f64, f64)> {
    let groups = aggregate_by_factor(table, Factor::Enriched).ok()?;
    let mean = |v: &str| groups.iter().find(|g| g.value == v).map(|g| g.mean_macro_f1);
    let (atomic, enriched) = (mean("atomic")?, mean("enriched")?);
    Some((atomic, enriched, enriched - atomic))
}

pub fn render_aggregates(table: &SweepResultTable) -> Result<String, SweepError> {
    let mut out = String::from("factor\tvalue\tmean_macro_f1\trows\n");
    for factor in [Factor::Strategy, Factor::Enriched, Factor::Model] {
        for g in aggregate_by_factor(table, factor)? {
            out.push_str(&format!(
                "{}\t{}\t{:.4}\t{}\n",
                factor.as_str(),
                g.value,
                g.mean_macro_f1,
                g.rows
            ));
        }
    }
    if let Some((atomic, enriched, delta)) = enriched_delta(table) {
        out.push_str(&format!("delta\tenriched-atomic\t{delta:+.4}\t\n"));
        log::info!("atomic {atomic:.4}, enriched {enriched:.4}");
    }
    Ok(out)
}

#[derive(Debug)]
pub struct SweepOutcome {
    pub table: SweepResultTable,
    pub prediction_files: Vec<PathBuf>,
    pub results_path: PathBuf,
    /// Requests that reached a backend during this run (cache misses and retries).
    pub requests_sent: usize,
}

impl SweepOutcome {
    pub fn any_transport_failure(&self) -> bool {
        self.table
            .rows
            .iter()
            .any(|r| matches!(r.status, RowStatus::Failed { transport: true, .. }))
    }
}

fn score(eval: &Dataset, preds: &[Prediction], level: Level) -> (Option<f64>, Vec<f64>, usize, usize) {
    let mut gold: Vec<Label> = Vec::new();
    let mut pred: Vec<Label> = Vec::new();
    let mut unparsed = 0;
    for (inst, p) in eval.iter().zip(preds) {
        match (inst.gold(level), p.parsed) {
            (Some(g), Some(l)) => {
                gold.push(g);
                pred.push(l);
            }
            _ => unparsed += 1,
        }
    }
    let cm = confusion_matrix(level, &gold, &pred).expect("same level and length");
    let report = prf_report(&cm);
    let per_class = report.per_class.iter().map(|s| s.f1).collect();
    (Some(report.macro_f1), per_class, gold.len(), unparsed)
}

/// Runs every grid point in order. Failures are recorded on their row and
/// never abort the sweep.
pub fn run_sweep(cfg: &SweepConfig) -> Result<SweepOutcome, SweepError> {
    let points = cfg.grid_points()?;
    let eval = load_split(&cfg.eval, cfg.eval_split)?;
    let train = match &cfg.train {
        Some(p) => Some(load_split(p, Split::Train)?),
        None => None,
    };
    for level in points.iter().map(|p| p.spec.level).collect::<HashSet<_>>() {
        if let Some(inst) = eval.iter().find(|i| i.gold(level).is_none()) {
            return Err(DatasetError::MissingGold {
                id: inst.id.clone(),
                level,
            }
            .into());
        }
    }

    let cache = ResponseCache::open(cfg.cache_dir())?;
    let mut clients: BTreeMap<&str, LlmClient> = BTreeMap::new();
    for (key, model) in &cfg.models {
        let client = LlmClient::new(model.clone()).map_err(|e| SweepError::Config(format!("model `{key}`: {e}")))?;
        clients.insert(key.as_str(), client);
    }
    let taxonomy = LabelTaxonomy::standard();
    let eval_ids: HashSet<String> = eval.iter().map(|i| i.id.clone()).collect();
    let pred_dir = cfg.output_dir.join("predictions");
    fs::create_dir_all(&pred_dir)?;

    let mut table = SweepResultTable::default();
    let mut files = Vec::new();
    for point in &points {
        let client = &clients[point.model_key.as_str()];
        let model_id = client.config().model_id.clone();
        let spec = &point.spec;
        let mut row = SweepRow {
            name: point.name.clone(),
            strategy: spec.strategy_tag(),
            enriched: spec.enriched,
            subcategory_definitions: spec.subcategory_definitions,
            president_name: spec.president_name,
            model_id: model_id.clone(),
            level: spec.level,
            macro_f1: None,
            per_class_f1: Vec::new(),
            scored: 0,
            unparsed: 0,
            status: RowStatus::Ok,
        };

        let demos = match (spec.strategy, &train) {
            (Strategy::FewShot, Some(train)) => match select_demonstrations_excluding(train, spec, &eval_ids) {
                Ok(d) => d,
                Err(e) => {
                    row.status = RowStatus::Failed {
                        message: e.to_string(),
                        transport: false,
                    };
                    table.rows.push(row);
                    continue;
                }
            },
            _ => Vec::new(),
        };

        log::info!("grid point {} ({} instances)", point.name, eval.len());
        let results = bounded_map(&eval.instances, client.config().max_in_flight, |_, inst| {
            classify_instance(client, spec, &demos, inst, &taxonomy, Some(&cache))
        });
        let mut preds = Vec::with_capacity(results.len());
        let mut failures: Vec<PredictError> = Vec::new();
        for r in results {
            match r {
                Ok(p) => preds.push(p),
                Err(e) => failures.push(e),
            }
        }

        let path = pred_dir.join(format!("{}.tsv", point.name));
        write_text(&path, &render_predictions(&preds, spec.level, cfg.label_style()))?;
        files.push(path);

        if let Some(first) = failures.first() {
            let transport = matches!(first, PredictError::Client(c) if c.is_transport());
            row.status = RowStatus::Failed {
                message: format!("{} of {} instances failed; first: {first}", failures.len(), eval.len()),
                transport,
            };
            table.rows.push(row);
            continue;
        }

        let (macro_f1, per_class, scored, unparsed) = score(&eval, &preds, spec.level);
        row.macro_f1 = macro_f1;
        row.per_class_f1 = per_class;
        row.scored = scored;
        row.unparsed = unparsed;
        let mut warnings = Vec::new();
        if unparsed > 0 {
            warnings.push(format!(
                "{unparsed} of {} predictions unparseable and dropped",
                eval.len()
            ));
        }
        if spec.enriched {
            let bare = eval.iter().filter(|i| i.context.trim().is_empty()).count();
            if bare > 0 {
                warnings.push(format!(
                    "{bare} instances have no interviewer turn; atomic question used"
                ));
            }
        }
        if !warnings.is_empty() {
            row.status = RowStatus::Warning(warnings.join("; "));
        }
        table.rows.push(row);
    }

    let results_path = cfg.output_dir.join("results.tsv");
    write_text(&results_path, &table.to_tsv())?;
    if let Ok(text) = render_aggregates(&table) {
        write_text(cfg.output_dir.join("aggregates.tsv"), &text)?;
    }
    let requests_sent = clients.values().map(|c| c.requests_sent()).sum();
    Ok(SweepOutcome {
        table,
        prediction_files: files,
        results_path,
        requests_sent,
    })
}
