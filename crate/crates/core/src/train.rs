//! Training schedules, Adam, grid search and multi-seed statistics.
//!
//! Every step records one forward pass per network, evaluates all
//! objectives on it and only then updates parameters, so the order in
//! which networks are updated within a step does not matter.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::{Graph, Tensor};
use crate::data::{self, Batch, Dataset};
use crate::error::{Error, Result};
use crate::eval::{self, Metrics};
use crate::nets::{AdapterBlock, Capacity, Network, ParamSet};
use crate::sharing::{
    self, AdapterMap, BatchOutputs, BoundAdapter, Config, LossReport, NetOutputs, Phase, PlanWeights,
    Role, Schedule, SharingPlan, StudentWeights,
};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment buffers for one [`ParamSet`], kept in `f64`.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub cfg: AdamConfig,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(params: &ParamSet, cfg: AdamConfig) -> Self {
        let zeros = || params.tensors().map(|t| vec![0.0; t.numel()]).collect();
        AdamState {
            cfg,
            t: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }
}

/// One bias-corrected Adam update from the gradients stored on `params`.
pub fn adam_step(state: &mut AdamState, params: &mut ParamSet) -> Result<()> {
    if state.m.len() != params.len() {
        return Err(Error::Contract(format!(
            "optimizer tracks {} tensors, parameter set has {}",
            state.m.len(),
            params.len()
        )));
    }
    state.t += 1;
    let AdamConfig {
        lr,
        beta1,
        beta2,
        eps,
    } = state.cfg;
    let t = state.t as i32;
    let (c1, c2) = (1.0 - beta1.powi(t), 1.0 - beta2.powi(t));
    let names: Vec<String> = params.names().map(str::to_owned).collect();
    for (((p, m), v), name) in params.tensors_mut().zip(&mut state.m).zip(&mut state.v).zip(&names) {
        let grad: Vec<f64> = p
            .grad()
            .ok_or_else(|| Error::Contract(format!("no gradient for parameter {name}")))?
            .iter()
            .map(|g| f64::from(*g))
            .collect();
        for (((w, g), mi), vi) in p.data_mut().iter_mut().zip(&grad).zip(m.iter_mut()).zip(v.iter_mut()) {
            *mi = beta1 * *mi + (1.0 - beta1) * g;
            *vi = beta2 * *vi + (1.0 - beta2) * g * g;
            let update = lr * (*mi / c1) / ((*vi / c2).sqrt() + eps);
            *w = (f64::from(*w) - update) as f32;
        }
    }
    Ok(())
}

type EdgeKey = (String, String);

/// The networks of a plan together with the adapters of its feature edges.
#[derive(Clone, Debug, PartialEq)]
pub struct Models {
    pub nets: BTreeMap<String, Network>,
    pub adapters: BTreeMap<EdgeKey, AdapterBlock>,
}

fn fnv1a(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3)
    })
}

/// Initialisation seed of a named network; independent of the plan, so a
/// student starts from the same weights in every configuration.
pub fn net_seed(seed: u64, name: &str) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ fnv1a(name)
}

impl Models {
    pub fn build(plan: &SharingPlan, in_shape: [usize; 3], n_classes: usize, seed: u64) -> Result<Self> {
        let mut nets = BTreeMap::new();
        for (name, role) in &plan.networks {
            let cap = match role {
                Role::Teacher => Capacity::Teacher,
                Role::Student => Capacity::Student,
            };
            let net = Network::build(plan.task, name, cap, in_shape, n_classes, net_seed(seed, name))?;
            nets.insert(name.clone(), net);
        }
        let mut adapters = BTreeMap::new();
        for e in plan.edges.iter().filter(|e| e.channel == sharing::Channel::Features) {
            let (src, dst) = (nets[&e.src].feature_tap(), nets[&e.dst].feature_tap());
            if src.shape != dst.shape {
                let s = net_seed(seed, &format!("{}->{}", e.src, e.dst));
                adapters.insert((e.src.clone(), e.dst.clone()), AdapterBlock::new(&src, &dst, s)?);
            }
        }
        Ok(Models { nets, adapters })
    }

    pub fn net(&self, name: &str) -> Result<&Network> {
        self.nets
            .get(name)
            .ok_or_else(|| Error::Config(format!("no network named {name}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub epochs: usize,
    /// Offline phase-1 epochs; ignored by online schedules.
    pub teacher_epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub augment: bool,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            epochs: 20,
            teacher_epochs: 20,
            batch_size: 8,
            adam: AdamConfig::default(),
            augment: true,
        }
    }
}

struct Optimizers {
    nets: BTreeMap<String, AdamState>,
    adapters: BTreeMap<EdgeKey, AdamState>,
}

impl Optimizers {
    fn new(models: &Models, cfg: AdamConfig) -> Self {
        Optimizers {
            nets: models
                .nets
                .iter()
                .map(|(k, n)| (k.clone(), AdamState::new(n.params(), cfg)))
                .collect(),
            adapters: models
                .adapters
                .iter()
                .map(|(k, a)| (k.clone(), AdamState::new(a.params(), cfg)))
                .collect(),
        }
    }
}

fn trains(plan: &SharingPlan, role: Role, phase: Phase) -> bool {
    match (role, phase) {
        (Role::Teacher, Phase::Joint) => plan.teacher_cotrained(),
        (Role::Teacher, Phase::Pretrain) => true,
        (Role::Teacher, Phase::Distill) => false,
        (Role::Student, Phase::Pretrain) => false,
        (Role::Student, _) => true,
    }
}

/// Objectives of one batch recorded on `g`.
struct StepGraph {
    objectives: Vec<(String, crate::autodiff::Var, LossReport)>,
    bounds: BTreeMap<String, crate::nets::Bound>,
    adapter_bounds: BTreeMap<EdgeKey, crate::nets::Bound>,
}

fn record_step(
    g: &mut Graph<f32>,
    plan: &SharingPlan,
    models: &Models,
    batch: &Batch,
    phase: Phase,
) -> Result<StepGraph> {
    let x = g.constant(batch.images.clone());
    let target = g.constant(batch.target.clone());
    let mut nets = BTreeMap::new();
    let mut bounds = BTreeMap::new();
    for (name, role) in &plan.networks {
        if *role == Role::Student && phase == Phase::Pretrain {
            continue;
        }
        let net = models.net(name)?;
        let trainable = trains(plan, *role, phase);
        let b = net.bind(g, trainable);
        let f = net.forward(g, &b, x)?;
        let tap = f.taps.get(&net.feature_tap().layer).copied();
        nets.insert(name.clone(), NetOutputs { logits: f.logits, tap });
        if trainable {
            bounds.insert(name.clone(), b);
        }
    }
    let out = BatchOutputs { nets, target };
    let mut objectives = Vec::new();
    let mut adapter_bounds = BTreeMap::new();
    if let Some(t) = plan.teacher() {
        if trains(plan, Role::Teacher, phase) {
            let (v, r) = sharing::teacher_objective(g, plan, &out, phase)?;
            objectives.push((t.to_owned(), v, r));
        }
    }
    if phase != Phase::Pretrain {
        let mut adapters = AdapterMap::new();
        for (k, a) in &models.adapters {
            let bound = a.bind(g, true);
            adapter_bounds.insert(k.clone(), bound.clone());
            adapters.insert(k.clone(), BoundAdapter { block: a, bound });
        }
        for s in plan.students() {
            let (v, r) = sharing::student_objective(g, plan, s, &out, &adapters)?;
            objectives.push((s.to_owned(), v, r));
        }
    }
    Ok(StepGraph {
        objectives,
        bounds,
        adapter_bounds,
    })
}

/// Loss reports of every trained network on one batch, without updating.
pub fn batch_objectives(plan: &SharingPlan, models: &Models, batch: &Batch, phase: Phase) -> Result<Vec<LossReport>> {
    let mut g = Graph::new();
    let step = record_step(&mut g, plan, models, batch, phase)?;
    Ok(step.objectives.into_iter().map(|(_, _, r)| r).collect())
}

fn train_step(
    plan: &SharingPlan,
    models: &mut Models,
    opt: &mut Optimizers,
    batch: &Batch,
    phase: Phase,
    step: usize,
) -> Result<Vec<LossReport>> {
    let mut g = Graph::new();
    let sg = record_step(&mut g, plan, models, batch, phase)?;
    for (name, _, r) in &sg.objectives {
        if !r.total.is_finite() {
            return Err(Error::NonFinite {
                network: name.clone(),
                step,
            });
        }
    }
    // Objectives only reach their own network's parameters, so a single
    // backward pass over the sum yields every network's own gradient.
    let mut total = None;
    for (_, v, _) in &sg.objectives {
        total = Some(match total {
            None => *v,
            Some(t) => g.add(t, *v)?,
        });
    }
    let Some(total) = total else {
        return Ok(vec![]);
    };
    g.backward(total)?;
    for (name, bound) in &sg.bounds {
        let net = models.nets.get_mut(name).expect("bound networks exist");
        let params = net.params_mut();
        params.zero_grad();
        params.accumulate_grads(&g, bound);
        adam_step(opt.nets.get_mut(name).expect("optimizer per network"), params)?;
    }
    for (key, bound) in &sg.adapter_bounds {
        let params = models.adapters.get_mut(key).expect("bound adapters exist").params_mut();
        params.zero_grad();
        params.accumulate_grads(&g, bound);
        adam_step(opt.adapters.get_mut(key).expect("optimizer per adapter"), params)?;
    }
    Ok(sg.objectives.into_iter().map(|(_, _, r)| r).collect())
}

/// Mean loss reports of one epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub phase: String,
    pub epoch: usize,
    pub reports: Vec<LossReport>,
}

fn mean_reports(all: &[Vec<LossReport>]) -> Vec<LossReport> {
    let Some(first) = all.first() else {
        return vec![];
    };
    let n = all.len() as f64;
    first
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let mut out = r.clone();
            out.total = all.iter().map(|b| b[i].total).sum::<f64>() / n;
            for (j, c) in out.components.iter_mut().enumerate() {
                c.value = all.iter().map(|b| b[i].components[j].value).sum::<f64>() / n;
            }
            out
        })
        .collect()
}

fn run_epochs(
    plan: &SharingPlan,
    models: &mut Models,
    opt: &mut Optimizers,
    data: &Dataset,
    opts: &TrainOptions,
    phase: Phase,
    epochs: usize,
    rng: &mut ChaCha8Rng,
    step: &mut usize,
) -> Result<Vec<EpochLog>> {
    let label = match phase {
        Phase::Joint => "joint",
        Phase::Pretrain => "teacher",
        Phase::Distill => "distill",
    };
    let mut logs = Vec::with_capacity(epochs);
    for epoch in 0..epochs {
        let mut reports = Vec::new();
        for idx in data::batch_order(data.len(), opts.batch_size, rng) {
            let mut batch = data.batch(&idx)?;
            if opts.augment {
                batch = data::augment(&batch, rng.next_u64())?;
            }
            reports.push(train_step(plan, models, opt, &batch, phase, *step)?);
            *step += 1;
        }
        let mean = mean_reports(&reports);
        log::debug!("{label} epoch {epoch}: {:?}", mean.iter().map(|r| r.total).collect::<Vec<_>>());
        logs.push(EpochLog {
            phase: label.to_owned(),
            epoch,
            reports: mean,
        });
    }
    Ok(logs)
}

/// Trains every network of an online plan in one loop.
pub fn train_online(plan: &SharingPlan, models: &mut Models, data: &Dataset, opts: &TrainOptions, seed: u64) -> Result<Vec<EpochLog>> {
    if plan.schedule != Schedule::Online {
        return Err(Error::Contract(format!("{} plan is not online", plan.config)));
    }
    let mut opt = Optimizers::new(models, opts.adam);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut step = 0;
    run_epochs(plan, models, &mut opt, data, opts, Phase::Joint, opts.epochs, &mut rng, &mut step)
}

/// Phase 1 trains the teacher alone; phase 2 freezes it and trains the
/// students on their plan objectives.
pub fn train_offline(
    plan: &SharingPlan,
    models: &mut Models,
    data: &Dataset,
    opts: &TrainOptions,
    seed: u64,
) -> Result<Vec<EpochLog>> {
    if plan.schedule != Schedule::Offline {
        return Err(Error::Contract(format!("{} plan is not offline", plan.config)));
    }
    let mut opt = Optimizers::new(models, opts.adam);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut step = 0;
    let mut logs = run_epochs(
        plan,
        models,
        &mut opt,
        data,
        opts,
        Phase::Pretrain,
        opts.teacher_epochs,
        &mut rng,
        &mut step,
    )?;
    logs.extend(run_epochs(
        plan,
        models,
        &mut opt,
        data,
        opts,
        Phase::Distill,
        opts.epochs,
        &mut rng,
        &mut step,
    )?);
    Ok(logs)
}

/// Train / validation / test partitions of one dataset.
#[derive(Clone, Debug)]
pub struct Splits {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
    /// Hash of the full dataset the splits came from.
    pub hash: String,
}

impl Splits {
    pub fn new(full: &Dataset, seed: u64) -> Self {
        let (train, val, test) = data::split(full, seed);
        Splits {
            train,
            val,
            test,
            hash: full.content_hash(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub fingerprint: String,
    pub task: crate::Task,
    pub config: Config,
    pub strategy: sharing::Strategy,
    pub weights: BTreeMap<String, StudentWeights>,
    pub temperature: f64,
    pub seed: u64,
    pub dataset_hash: String,
    pub options: TrainOptions,
    pub epochs: Vec<EpochLog>,
    /// Network name (or `Ensemble`) → metric → value, on the test split.
    pub metrics: BTreeMap<String, Metrics>,
    pub wall_clock_s: f64,
}

/// Identifies a run by plan, weights, options, seed and dataset.
pub fn fingerprint(plan: &SharingPlan, opts: &TrainOptions, seed: u64, dataset_hash: &str) -> String {
    let key = serde_json::json!({
        "plan": plan,
        "options": opts,
        "seed": seed,
        "dataset": dataset_hash,
    });
    let digest = Sha256::digest(key.to_string().as_bytes());
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

/// Builds, trains and evaluates one seed of a plan.
pub fn run_seed(plan: &SharingPlan, splits: &Splits, opts: &TrainOptions, seed: u64) -> Result<(RunRecord, Models)> {
    let start = Instant::now();
    let in_shape = splits.train.in_shape()?;
    let mut models = Models::build(plan, in_shape, splits.train.n_classes, seed)?;
    let epochs = match plan.schedule {
        Schedule::Online => train_online(plan, &mut models, &splits.train, opts, seed)?,
        Schedule::Offline => train_offline(plan, &mut models, &splits.train, opts, seed)?,
    };
    let students: Vec<&str> = plan.students().collect();
    let metrics = eval::evaluate(&models.nets, &students, &splits.test)?;
    let record = RunRecord {
        fingerprint: fingerprint(plan, opts, seed, &splits.hash),
        task: plan.task,
        config: plan.config,
        strategy: plan.strategy,
        weights: plan.weights.clone(),
        temperature: plan.temperature,
        seed,
        dataset_hash: splits.hash.clone(),
        options: *opts,
        epochs,
        metrics,
        wall_clock_s: start.elapsed().as_secs_f64(),
    };
    Ok((record, models))
}

/// `mean ± std` of one metric of one network over seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub network: String,
    pub metric: String,
    pub mean: f64,
    /// Population standard deviation (divisor n).
    pub std: f64,
    pub seed_count: usize,
}

/// Mean and population standard deviation; sorted first so the result
/// does not depend on the order of the inputs.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Summary rows for every network and metric found in `records`.
pub fn summarize(records: &[RunRecord]) -> Vec<SummaryRow> {
    let mut acc: BTreeMap<(String, String), Vec<f64>> = BTreeMap::new();
    for r in records {
        for (net, m) in &r.metrics {
            for (k, v) in m {
                acc.entry((net.clone(), k.clone())).or_default().push(*v);
            }
        }
    }
    acc.into_iter()
        .map(|((network, metric), vals)| {
            let (mean, std) = mean_std(&vals);
            SummaryRow {
                network,
                metric,
                mean,
                std,
                seed_count: vals.len(),
            }
        })
        .collect()
}

/// Runs `plan` once per seed and summarises the test metrics.
pub fn multi_run(plan: &SharingPlan, splits: &Splits, opts: &TrainOptions, seeds: &[u64]) -> Result<(Vec<RunRecord>, Vec<SummaryRow>)> {
    let records = seeds
        .iter()
        .map(|s| run_seed(plan, splits, opts, *s).map(|(r, _)| r))
        .collect::<Result<Vec<_>>>()?;
    let rows = summarize(&records);
    Ok((records, rows))
}

/// Default per-weight grid values.
pub const GRID_VALUES: [f64; 5] = [0.1, 0.2, 0.3, 0.4, 0.45];

/// Weight sets the grid visits for `config`. Configurations with fixed
/// identities only vary `α` and `α'`; KD+ML cells keep `α + β + γ = 1`.
pub fn grid_cells(config: Config, values: &[f64]) -> Vec<PlanWeights> {
    let mut cells = Vec::new();
    match config {
        Config::KdMl => {
            let per: Vec<StudentWeights> = values
                .iter()
                .flat_map(|a| {
                    values
                        .iter()
                        .flat_map(move |b| values.iter().map(move |c| StudentWeights::new(*a, *b, *c)))
                })
                .filter(|w| (w.alpha + w.beta + w.gamma - 1.0).abs() <= sharing::WEIGHT_TOL)
                .collect();
            for s1 in &per {
                for s2 in &per {
                    cells.push(PlanWeights { s1: *s1, s2: *s2 });
                }
            }
        }
        Config::Standalone => cells.push(PlanWeights::derived(config, 1.0, 1.0)),
        _ => {
            for a in values {
                for b in values {
                    cells.push(PlanWeights::derived(config, *a, *b));
                }
            }
        }
    }
    cells
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub best: PlanWeights,
    pub score: f64,
    pub evaluated: usize,
}

fn knowledge_mass(w: &PlanWeights) -> f64 {
    w.s1.beta + w.s1.gamma + w.s2.beta + w.s2.gamma
}

fn as_tuple(w: &PlanWeights) -> [f64; 6] {
    [w.s1.alpha, w.s1.beta, w.s1.gamma, w.s2.alpha, w.s2.beta, w.s2.gamma]
}

/// True when `a` beats `b`: higher score, then smaller `Σ(β + γ)`, then
/// lexicographically smaller weights.
fn better(a: (f64, &PlanWeights), b: (f64, &PlanWeights)) -> bool {
    if a.0 != b.0 {
        return a.0 > b.0;
    }
    let (ma, mb) = (knowledge_mass(a.1), knowledge_mass(b.1));
    if ma != mb {
        return ma < mb;
    }
    as_tuple(a.1)
        .iter()
        .zip(as_tuple(b.1).iter())
        .find(|(x, y)| x != y)
        .is_some_and(|(x, y)| x < y)
}

/// Exhaustive search over `cells`, maximising `objective`.
pub fn grid_search<F>(cells: &[PlanWeights], mut objective: F) -> Result<GridResult>
where
    F: FnMut(&PlanWeights) -> Result<f64>,
{
    let mut best: Option<(f64, PlanWeights)> = None;
    for w in cells {
        let score = objective(w)?;
        if !score.is_finite() {
            continue;
        }
        if best.as_ref().is_none_or(|(s, b)| better((score, w), (*s, b))) {
            best = Some((score, *w));
        }
    }
    let (score, best) = best.ok_or_else(|| Error::Config("grid search found no scorable cell".into()))?;
    Ok(GridResult {
        best,
        score,
        evaluated: cells.len(),
    })
}

/// Validation ensemble metric of one short training run; the default
/// grid-search objective.
pub fn validation_score(plan: &SharingPlan, splits: &Splits, opts: &TrainOptions, seed: u64) -> Result<f64> {
    let in_shape = splits.train.in_shape()?;
    let mut models = Models::build(plan, in_shape, splits.train.n_classes, seed)?;
    match plan.schedule {
        Schedule::Online => train_online(plan, &mut models, &splits.train, opts, seed)?,
        Schedule::Offline => train_offline(plan, &mut models, &splits.train, opts, seed)?,
    };
    let students: Vec<&str> = plan.students().collect();
    let m = eval::evaluate(&models.nets, &students, &splits.val)?;
    let key = match plan.task {
        crate::Task::Classification => "accuracy",
        crate::Task::Segmentation => "iou",
    };
    Ok(m[eval::ENSEMBLE][key])
}

/// Teacher parameters as a checkpoint byte string, for freeze checks.
pub fn params_bytes(params: &ParamSet) -> Result<Vec<u8>> {
    crate::nets::checkpoint::encode(params)
}

/// Stacked batch of every sample in `ds`; handy for small evaluations.
pub fn full_batch(ds: &Dataset) -> Result<Batch> {
    let idx: Vec<usize> = (0..ds.len()).collect();
    ds.batch(&idx)
}

/// Ensures a one-sample tensor is usable as a batch.
pub fn single(t: &Tensor) -> Result<Tensor> {
    let mut shape = vec![1];
    shape.extend_from_slice(t.shape());
    t.reshaped(&shape)
}
