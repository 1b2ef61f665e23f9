//! Experiment configuration and orchestration: INI files in, JSON-lines
//! records, CSV summaries, checkpoints and mask dumps out.
//!
//! ```ini
//! [task]
//! kind = classification
//! name = kdml-v3
//! output = runs/kdml-v3
//!
//! [plan]
//! config = KD_ML
//! strategy = V3
//!
//! [train]
//! seeds = 1, 2, 3
//!
//! [data]
//! source = synth
//! n = 2000
//! resolution = 16
//! seed = 1
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use ini::Ini;
use serde::{Deserialize, Serialize};

use crate::data::{self, Dataset, Split};
use crate::error::{Error, Result};
use crate::eval;
use crate::nets::checkpoint;
use crate::sharing::{build_plan, Config, PlanWeights, SharingPlan, Strategy, StudentWeights, V3Layout, DEFAULT_TEMPERATURE};
use crate::train::{self, RunRecord, Splits, SummaryRow, TrainOptions};
use crate::Task;

/// Environment variable that roots relative output directories.
pub const OUTPUT_ROOT_ENV: &str = "KDSHARE_OUTPUT_ROOT";

#[derive(Clone, Debug, PartialEq)]
pub enum DataSpec {
    Synth { n: usize, resolution: usize, seed: u64 },
    /// CSV index of PNM files with split tags.
    Index(PathBuf),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub task: Task,
    pub name: String,
    pub output: PathBuf,
    pub config: Config,
    pub strategy: Strategy,
    pub temperature: f64,
    pub layout: V3Layout,
    /// `None` selects the tuned defaults of the cell.
    pub weights: Option<PlanWeights>,
    pub train: TrainOptions,
    pub seeds: Vec<u64>,
    pub data: DataSpec,
    /// Seed of the train/val/test partition of synthetic data.
    pub split_seed: u64,
}

const KEYS: &[(&str, &[&str])] = &[
    ("task", &["kind", "name", "output"]),
    ("plan", &["config", "strategy", "temperature", "v3_layout"]),
    (
        "weights",
        &["alpha", "beta", "gamma", "alpha_prime", "beta_prime", "gamma_prime"],
    ),
    (
        "train",
        &["epochs", "teacher_epochs", "batch_size", "lr", "seeds", "augment"],
    ),
    ("data", &["source", "n", "resolution", "seed", "index", "split_seed"]),
];

fn parse<T: std::str::FromStr>(section: &str, key: &str, v: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    v.parse()
        .map_err(|e| Error::Config(format!("[{section}] {key} = {v:?}: {e}")))
}

struct Sections<'a> {
    ini: &'a Ini,
}

impl<'a> Sections<'a> {
    fn get(&self, section: &str, key: &str) -> Option<&'a str> {
        self.ini.section(Some(section)).and_then(|p| p.get(key))
    }

    fn need(&self, section: &str, key: &str) -> Result<&'a str> {
        self.get(section, key)
            .ok_or_else(|| Error::Config(format!("missing [{section}] {key}")))
    }

    fn opt<T: std::str::FromStr>(&self, section: &str, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        self.get(section, key).map(|v| parse(section, key, v)).transpose()
    }
}

fn default_epochs(task: Task) -> usize {
    match task {
        Task::Classification => 20,
        Task::Segmentation => 30,
    }
}

impl ExperimentConfig {
    pub fn from_ini_str(text: &str, base: &Path) -> Result<Self> {
        let ini = Ini::load_from_str(text).map_err(|e| Error::Config(format!("config syntax: {e}")))?;
        for (section, props) in ini.iter() {
            let Some(section) = section else {
                if let Some((k, _)) = props.iter().next() {
                    return Err(Error::Config(format!("key {k} outside any section")));
                }
                continue;
            };
            let allowed = KEYS
                .iter()
                .find(|(s, _)| *s == section)
                .ok_or_else(|| Error::Config(format!("unknown section [{section}]")))?
                .1;
            for (k, _) in props.iter() {
                if !allowed.contains(&k) {
                    return Err(Error::Config(format!("unknown key [{section}] {k}")));
                }
            }
        }
        let s = Sections { ini: &ini };

        let task = match s.need("task", "kind")? {
            "classification" => Task::Classification,
            "segmentation" => Task::Segmentation,
            other => return Err(Error::Config(format!("[task] kind = {other:?}: expected classification or segmentation"))),
        };
        let name = s.get("task", "name").unwrap_or("experiment").to_owned();
        let output = resolve_output(Path::new(s.need("task", "output")?));

        let config: Config = parse("plan", "config", s.need("plan", "config")?)?;
        let strategy: Strategy = match config {
            Config::Standalone => s.opt("plan", "strategy")?.unwrap_or(Strategy::V1),
            _ => parse("plan", "strategy", s.need("plan", "strategy")?)?,
        };
        let temperature = s.opt("plan", "temperature")?.unwrap_or(DEFAULT_TEMPERATURE);
        let layout = s.opt("plan", "v3_layout")?.unwrap_or_default();
        let weights = parse_weights(&s, config)?;

        let epochs = s.opt("train", "epochs")?.unwrap_or(default_epochs(task));
        let defaults = TrainOptions::default();
        let mut adam = defaults.adam;
        adam.lr = s.opt("train", "lr")?.unwrap_or(adam.lr);
        let train = TrainOptions {
            epochs,
            teacher_epochs: s.opt("train", "teacher_epochs")?.unwrap_or(epochs),
            batch_size: s.opt("train", "batch_size")?.unwrap_or(defaults.batch_size),
            adam,
            augment: s.opt("train", "augment")?.unwrap_or(defaults.augment),
        };
        if train.batch_size == 0 || !(train.adam.lr > 0.0) {
            return Err(Error::Config("batch_size and lr must be positive".into()));
        }
        let seeds = parse_list(s.need("train", "seeds")?)
            .map_err(|e| Error::Config(format!("[train] seeds: {e}")))?;
        if seeds.is_empty() {
            return Err(Error::Config("[train] seeds is empty".into()));
        }

        let data = match s.need("data", "source")? {
            "synth" => DataSpec::Synth {
                n: parse("data", "n", s.need("data", "n")?)?,
                resolution: parse("data", "resolution", s.need("data", "resolution")?)?,
                seed: parse("data", "seed", s.need("data", "seed")?)?,
            },
            "index" => {
                let p = Path::new(s.need("data", "index")?);
                DataSpec::Index(if p.is_absolute() { p.to_owned() } else { base.join(p) })
            }
            other => return Err(Error::Config(format!("[data] source = {other:?}: expected synth or index"))),
        };
        let split_seed = s.opt("data", "split_seed")?.unwrap_or(0);

        let cfg = ExperimentConfig {
            task,
            name,
            output,
            config,
            strategy,
            temperature,
            layout,
            weights,
            train,
            seeds,
            data,
            split_seed,
        };
        cfg.plan()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_ini_str(&text, path.parent().unwrap_or(Path::new(".")))
    }

    /// The validated sharing plan of this experiment.
    pub fn plan(&self) -> Result<SharingPlan> {
        let weights = self
            .weights
            .unwrap_or_else(|| PlanWeights::paper_defaults(self.task, self.config, self.strategy));
        build_plan(self.config, self.strategy, self.task, weights, self.temperature, self.layout)
    }

    /// Short label of the cell, e.g. `KD_ML-V3`.
    pub fn model(&self) -> String {
        format!("{}-{}", self.config, self.strategy)
    }
}

fn parse_list(v: &str) -> std::result::Result<Vec<u64>, std::num::ParseIntError> {
    v.split(',').map(str::trim).filter(|s| !s.is_empty()).map(str::parse).collect()
}

fn parse_weights(s: &Sections, config: Config) -> Result<Option<PlanWeights>> {
    let get = |k: &str| s.opt::<f64>("weights", k);
    let (a, b, g) = (get("alpha")?, get("beta")?, get("gamma")?);
    let (a2, b2, g2) = (get("alpha_prime")?, get("beta_prime")?, get("gamma_prime")?);
    let given = [a, b, g, a2, b2, g2].iter().filter(|v| v.is_some()).count();
    if given == 0 {
        return Ok(None);
    }
    match (a, a2) {
        (Some(a), Some(a2)) if b.is_none() && g.is_none() && b2.is_none() && g2.is_none() && config != Config::KdMl => {
            Ok(Some(PlanWeights::derived(config, a, a2)))
        }
        _ => {
            let full = |a: Option<f64>, b: Option<f64>, g: Option<f64>| {
                Some(StudentWeights::new(a?, b.unwrap_or(0.0), g.unwrap_or(0.0)))
            };
            let (Some(s1), Some(s2)) = (full(a, b, g), full(a2, b2, g2)) else {
                return Err(Error::Config("[weights] needs alpha and alpha_prime".into()));
            };
            Ok(Some(PlanWeights { s1, s2 }))
        }
    }
}

/// Relative paths resolve under `$KDSHARE_OUTPUT_ROOT` when it is set.
pub fn resolve_output(p: &Path) -> PathBuf {
    match std::env::var_os(OUTPUT_ROOT_ENV) {
        Some(root) if p.is_relative() => PathBuf::from(root).join(p),
        _ => p.to_owned(),
    }
}

fn from_tags(full: &Dataset) -> Result<Splits> {
    let pick = |s: Split| full.tagged(s);
    let (train, val, test) = (pick(Split::Train), pick(Split::Val), pick(Split::Test));
    if train.is_empty() || test.is_empty() {
        return Err(Error::Config("index needs at least one train and one test sample".into()));
    }
    Ok(Splits {
        train,
        val,
        test,
        hash: full.content_hash(),
    })
}

/// Loads and partitions the experiment's dataset.
pub fn load_splits(cfg: &ExperimentConfig) -> Result<Splits> {
    match &cfg.data {
        DataSpec::Synth { n, resolution, seed } => {
            let full = match cfg.task {
                Task::Classification => data::synth_classification(*n, *resolution, *seed)?,
                Task::Segmentation => data::synth_segmentation(*n, *resolution, *seed)?,
            };
            Ok(Splits::new(&full, cfg.split_seed))
        }
        DataSpec::Index(path) => from_tags(&data::load_index(path, cfg.task)?),
    }
}

pub const SUMMARY_HEADER: [&str; 7] = ["model", "strategy", "network", "metric", "mean", "std", "seed_count"];

/// One line of `summary.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub model: String,
    pub strategy: String,
    pub network: String,
    pub metric: String,
    pub mean: f64,
    pub std: f64,
    pub seed_count: usize,
}

impl CsvRow {
    fn from_summary(config: Config, strategy: Strategy, r: &SummaryRow) -> Self {
        CsvRow {
            model: config.to_string(),
            strategy: strategy.to_string(),
            network: r.network.clone(),
            metric: r.metric.clone(),
            mean: r.mean,
            std: r.std,
            seed_count: r.seed_count,
        }
    }
}

pub fn write_csv(path: &Path, rows: &[CsvRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_csv(path: &Path) -> Result<Vec<CsvRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let rows = r.deserialize().collect::<std::result::Result<Vec<CsvRow>, _>>()?;
    Ok(rows)
}

pub fn write_records(path: &Path, records: &[RunRecord]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    for r in records {
        serde_json::to_writer(&mut f, r)?;
        f.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

pub fn read_records(path: &Path) -> Result<Vec<RunRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Ok(serde_json::from_str(l)?))
        .collect()
}

#[derive(Clone, Debug)]
pub struct ExperimentOutput {
    pub records: Vec<RunRecord>,
    pub rows: Vec<CsvRow>,
}

/// Trains every seed of `cfg` and writes its artifacts under `cfg.output`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let plan = cfg.plan()?;
    let splits = load_splits(cfg)?;
    let out = &cfg.output;
    let ckpt_dir = out.join("checkpoints");
    fs::create_dir_all(&ckpt_dir).map_err(|e| Error::io(&ckpt_dir, e))?;
    let mut records = Vec::new();
    for &seed in &cfg.seeds {
        log::info!("{}: seed {seed}", cfg.model());
        let (record, models) = train::run_seed(&plan, &splits, &cfg.train, seed)?;
        for (name, net) in &models.nets {
            checkpoint::save(net.params(), &ckpt_dir.join(format!("seed{seed}_{name}.ckpt")))?;
        }
        for ((src, dst), a) in &models.adapters {
            checkpoint::save(a.params(), &ckpt_dir.join(format!("seed{seed}_{src}-{dst}.ckpt")))?;
        }
        if cfg.task == Task::Segmentation {
            let students: Vec<&str> = plan.students().collect();
            let masks = eval::ensemble_masks(&models.nets, &students, &splits.test)?;
            let [_, h, w] = splits.test.in_shape()?;
            let dir = out.join("masks").join(format!("seed{seed}"));
            for (i, m) in masks.iter().enumerate() {
                let px: Vec<f32> = m.iter().map(|b| f32::from(u8::from(*b))).collect();
                data::write_mask_pgm(&dir.join(format!("{i:04}.pgm")), &px, h, w)?;
            }
        }
        records.push(record);
    }
    let rows: Vec<CsvRow> = train::summarize(&records)
        .iter()
        .map(|r| CsvRow::from_summary(cfg.config, cfg.strategy, r))
        .collect();
    write_records(&out.join("records.jsonl"), &records)?;
    write_csv(&out.join("summary.csv"), &rows)?;
    Ok(ExperimentOutput { records, rows })
}

/// Runs all twelve configuration × strategy cells with their tuned
/// weights; each cell writes into its own subdirectory and the combined
/// table goes to `summary.csv` under the base output.
pub fn sweep(base: &ExperimentConfig) -> Result<Vec<CsvRow>> {
    let mut rows = Vec::new();
    for config in Config::ALL {
        for strategy in Strategy::ALL {
            let mut cfg = base.clone();
            cfg.config = config;
            cfg.strategy = strategy;
            cfg.weights = None;
            cfg.output = base.output.join(cfg.model());
            rows.extend(run_experiment(&cfg)?.rows);
        }
    }
    fs::create_dir_all(&base.output).map_err(|e| Error::io(&base.output, e))?;
    write_csv(&base.output.join("summary.csv"), &rows)?;
    Ok(rows)
}

/// Grid search over the weights of `cfg`'s plan, scoring each cell by the
/// validation ensemble metric after `budget` epochs with the first seed.
pub fn gridsearch(cfg: &ExperimentConfig, values: &[f64], budget: usize) -> Result<train::GridResult> {
    let splits = load_splits(cfg)?;
    let opts = TrainOptions {
        epochs: budget,
        teacher_epochs: budget,
        ..cfg.train
    };
    let seed = cfg.seeds[0];
    let cells = train::grid_cells(cfg.config, values);
    let result = train::grid_search(&cells, |w| {
        let plan = build_plan(cfg.config, cfg.strategy, cfg.task, *w, cfg.temperature, cfg.layout)?;
        let score = train::validation_score(&plan, &splits, &opts, seed)?;
        log::info!("{w:?}: {score}");
        Ok(score)
    })?;
    fs::create_dir_all(&cfg.output).map_err(|e| Error::io(&cfg.output, e))?;
    let path = cfg.output.join("gridsearch.json");
    fs::write(&path, serde_json::to_string_pretty(&result)?).map_err(|e| Error::io(&path, e))?;
    Ok(result)
}

/// Ensemble means of one configuration across strategies.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StrategyRow {
    pub model: String,
    pub metric: String,
    pub means: BTreeMap<String, f64>,
    pub v3_best: bool,
    pub note: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub rows: Vec<StrategyRow>,
    /// Best ensemble mean of each configuration over its strategies.
    pub best_per_model: BTreeMap<String, f64>,
    pub kd_ml_best: bool,
    pub note: Option<String>,
}

fn primary_metric(rows: &[CsvRow]) -> &'static str {
    if rows.iter().any(|r| r.metric == "iou") {
        "iou"
    } else {
        "accuracy"
    }
}

fn strictly_best(values: &BTreeMap<String, f64>, key: &str) -> (bool, Option<String>) {
    let Some(mine) = values.get(key) else {
        return (false, Some(format!("{key} missing")));
    };
    let others: Vec<f64> = values.iter().filter(|(k, _)| *k != key).map(|(_, v)| *v).collect();
    let top = others.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if *mine > top {
        (true, None)
    } else if *mine == top {
        (false, Some(format!("{key} ties the best mean {top}")))
    } else {
        (false, None)
    }
}

/// Ordering flags over the ensemble rows of a sweep: whether V3 beats
/// V1 and V2 within each configuration, and whether KD+ML beats the rest.
pub fn compare_report(rows: &[CsvRow]) -> CompareReport {
    let metric = primary_metric(rows);
    let mut by_model: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.network == eval::ENSEMBLE && r.metric == metric) {
        by_model.entry(r.model.clone()).or_default().insert(r.strategy.clone(), r.mean);
    }
    let mut out_rows = Vec::new();
    let mut best_per_model = BTreeMap::new();
    for (model, means) in &by_model {
        let (v3_best, note) = strictly_best(means, "V3");
        best_per_model.insert(
            model.clone(),
            means.values().copied().fold(f64::NEG_INFINITY, f64::max),
        );
        out_rows.push(StrategyRow {
            model: model.clone(),
            metric: metric.to_owned(),
            means: means.clone(),
            v3_best,
            note,
        });
    }
    let (kd_ml_best, note) = strictly_best(&best_per_model, Config::KdMl.as_str());
    CompareReport {
        rows: out_rows,
        best_per_model,
        kd_ml_best,
        note,
    }
}

/// Plain-text rendering of a summary in `mean ± std` form.
pub fn render_table(rows: &[CsvRow]) -> String {
    let mut s = String::new();
    let models: BTreeSet<(&str, &str)> = rows.iter().map(|r| (r.model.as_str(), r.strategy.as_str())).collect();
    for (model, strategy) in models {
        s.push_str(&format!("{model} {strategy}\n"));
        for r in rows.iter().filter(|r| r.model == model && r.strategy == strategy) {
            s.push_str(&format!(
                "  {:<10} {:<9} {:.4} ± {:.4} (n={})\n",
                r.network, r.metric, r.mean, r.std, r.seed_count
            ));
        }
    }
    s
}

pub fn render_compare(rep: &CompareReport) -> String {
    let mut s = String::new();
    for r in &rep.rows {
        let means: Vec<String> = r.means.iter().map(|(k, v)| format!("{k}={v:.4}")).collect();
        s.push_str(&format!(
            "{:<8} {} {}  V3 best: {}{}\n",
            r.model,
            r.metric,
            means.join(" "),
            r.v3_best,
            r.note.as_ref().map(|n| format!(" ({n})")).unwrap_or_default()
        ));
    }
    s.push_str(&format!(
        "KD+ML best: {}{}\n",
        rep.kd_ml_best,
        rep.note.as_ref().map(|n| format!(" ({n})")).unwrap_or_default()
    ));
    s
}
