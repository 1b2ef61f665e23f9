//! Knowledge-sharing plans and the per-network objectives they induce.
//!
//! A plan names the networks (`T`, `S1`, `S2`), the directed edges between
//! them and the channel each edge carries. An edge `src → dst` adds a term
//! to `dst`'s loss in which `src`'s output is a detached target.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Element, Graph, Var};
use crate::error::{Error, Result};
use crate::losses::{self, FOCAL_TAU};
use crate::nets::{AdapterBlock, Bound};
use crate::Task;

pub const TEACHER: &str = "T";
pub const S1: &str = "S1";
pub const S2: &str = "S2";

/// Temperature used for softened predictions unless configured otherwise.
pub const DEFAULT_TEMPERATURE: f64 = 2.0;

pub const WEIGHT_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Config {
    #[serde(rename = "ML")]
    Ml,
    #[serde(rename = "KD_on")]
    KdOnline,
    #[serde(rename = "KD_off")]
    KdOffline,
    #[serde(rename = "KD_ML")]
    KdMl,
    /// A single student trained on ground truth only; the comparison baseline.
    #[serde(rename = "standalone")]
    Standalone,
}

impl Config {
    /// The four sharing configurations, in report order.
    pub const ALL: [Config; 4] = [Config::Ml, Config::KdOnline, Config::KdOffline, Config::KdMl];

    pub fn as_str(self) -> &'static str {
        match self {
            Config::Ml => "ML",
            Config::KdOnline => "KD_on",
            Config::KdOffline => "KD_off",
            Config::KdMl => "KD_ML",
            Config::Standalone => "standalone",
        }
    }

    pub fn has_teacher(self) -> bool {
        matches!(self, Config::KdOnline | Config::KdOffline | Config::KdMl)
    }

    fn kd_only(self) -> bool {
        matches!(self, Config::KdOnline | Config::KdOffline)
    }
}

impl fmt::Display for Config {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Config {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ML" => Ok(Config::Ml),
            "KD_on" => Ok(Config::KdOnline),
            "KD_off" => Ok(Config::KdOffline),
            "KD_ML" => Ok(Config::KdMl),
            "standalone" => Ok(Config::Standalone),
            _ => Err(Error::Config(format!(
                "unknown configuration {s:?} (expected ML, KD_on, KD_off, KD_ML or standalone)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Strategy {
    V1,
    V2,
    V3,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::V1, Strategy::V2, Strategy::V3];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::V1 => "V1",
            Strategy::V2 => "V2",
            Strategy::V3 => "V3",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "V1" => Ok(Strategy::V1),
            "V2" => Ok(Strategy::V2),
            "V3" => Ok(Strategy::V3),
            _ => Err(Error::Config(format!("unknown strategy {s:?} (expected V1, V2 or V3)"))),
        }
    }
}

/// Which V3 channel assignment to use. `Paper` gives S1 the teacher's
/// features and S2 the teacher's predictions; `Swapped` exchanges every V3
/// channel.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum V3Layout {
    #[default]
    Paper,
    Swapped,
}

impl FromStr for V3Layout {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(V3Layout::Paper),
            "swapped" => Ok(V3Layout::Swapped),
            _ => Err(Error::Config(format!("unknown v3_layout {s:?} (expected paper or swapped)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Channel {
    Predictions,
    Features,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Teacher,
    Student,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Schedule {
    /// Teacher pre-trained, then frozen while the students learn.
    Offline,
    /// Every network trains in the same loop.
    Online,
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Edge {
    pub src: String,
    pub dst: String,
    pub channel: Channel,
}

impl Edge {
    fn new(src: &str, dst: &str, channel: Channel) -> Self {
        Edge {
            src: src.to_owned(),
            dst: dst.to_owned(),
            channel,
        }
    }

    fn from_teacher(&self) -> bool {
        self.src == TEACHER
    }
}

/// `α` (task loss), `β` (teacher term) and `γ` (peer term) of one student.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudentWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl StudentWeights {
    pub const fn new(alpha: f64, beta: f64, gamma: f64) -> Self {
        StudentWeights { alpha, beta, gamma }
    }
}

/// Weights for both students; the primed symbols belong to `S2`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanWeights {
    pub s1: StudentWeights,
    pub s2: StudentWeights,
}

impl PlanWeights {
    /// Completes `α, α'` into a consistent weight set for configurations
    /// that fix `β` and `γ` by identity.
    pub fn derived(config: Config, alpha: f64, alpha_prime: f64) -> Self {
        let one = |a: f64| match config {
            Config::Ml => StudentWeights::new(a, 0.0, 1.0 - a),
            Config::KdOnline | Config::KdOffline => StudentWeights::new(a, 1.0 - a, 0.0),
            Config::Standalone => StudentWeights::new(a, 0.0, 0.0),
            Config::KdMl => StudentWeights::new(a, (1.0 - a) / 2.0, (1.0 - a) / 2.0),
        };
        PlanWeights {
            s1: one(alpha),
            s2: one(alpha_prime),
        }
    }

    /// Tuned weights reported for each cell of the experiment grid.
    pub fn paper_defaults(task: Task, config: Config, strategy: Strategy) -> Self {
        use Config::*;
        use Strategy::*;
        let both = |s1: StudentWeights, s2: StudentWeights| PlanWeights { s1, s2 };
        let w = StudentWeights::new;
        match (task, config) {
            (_, Standalone) => Self::derived(Standalone, 1.0, 1.0),
            (Task::Classification, Ml | KdOffline) => match strategy {
                V3 => Self::derived(config, 0.1, 0.2),
                _ => Self::derived(config, 0.2, 0.2),
            },
            (Task::Classification, KdOnline) => Self::derived(config, 0.2, 0.2),
            (Task::Classification, KdMl) => match strategy {
                V1 => both(w(0.1, 0.45, 0.45), w(0.2, 0.4, 0.4)),
                V2 => both(w(0.2, 0.4, 0.4), w(0.2, 0.4, 0.4)),
                V3 => both(w(0.1, 0.45, 0.45), w(0.4, 0.3, 0.3)),
            },
            (Task::Segmentation, Ml) => match strategy {
                V1 => Self::derived(config, 0.1, 0.1),
                _ => Self::derived(config, 0.2, 0.2),
            },
            (Task::Segmentation, KdOffline) => Self::derived(config, 0.2, 0.2),
            (Task::Segmentation, KdOnline) => match strategy {
                V1 => Self::derived(config, 0.1, 0.1),
                V2 => Self::derived(config, 0.2, 0.2),
                V3 => Self::derived(config, 0.1, 0.2),
            },
            (Task::Segmentation, KdMl) => match strategy {
                V3 => both(w(0.1, 0.45, 0.45), w(0.1, 0.45, 0.45)),
                _ => both(w(0.2, 0.4, 0.4), w(0.2, 0.4, 0.4)),
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SharingPlan {
    pub config: Config,
    pub strategy: Strategy,
    pub layout: V3Layout,
    pub task: Task,
    pub networks: Vec<(String, Role)>,
    pub edges: Vec<Edge>,
    /// Per-student weights, keyed by network name.
    pub weights: BTreeMap<String, StudentWeights>,
    pub schedule: Schedule,
    pub temperature: f64,
}

fn channels(strategy: Strategy, layout: V3Layout, v3: [Channel; 2]) -> [Channel; 2] {
    use Channel::*;
    match (strategy, layout) {
        (Strategy::V1, _) => [Predictions, Predictions],
        (Strategy::V2, _) => [Features, Features],
        (Strategy::V3, V3Layout::Paper) => v3,
        (Strategy::V3, V3Layout::Swapped) => v3.map(|c| match c {
            Predictions => Features,
            Features => Predictions,
        }),
    }
}

/// Edge set of one configuration × strategy cell.
fn edges_for(config: Config, strategy: Strategy, layout: V3Layout) -> Vec<Edge> {
    use Channel::*;
    match config {
        Config::Standalone => vec![],
        Config::KdOnline | Config::KdOffline => {
            let [a, b] = channels(strategy, layout, [Predictions, Features]);
            vec![Edge::new(TEACHER, S1, a), Edge::new(TEACHER, S2, b)]
        }
        Config::Ml => {
            let [a, b] = channels(strategy, layout, [Predictions, Features]);
            vec![Edge::new(S1, S2, a), Edge::new(S2, S1, b)]
        }
        Config::KdMl => {
            // Into S1: teacher features, S2's predictions.
            // Into S2: teacher predictions, S1's features.
            let [t1, t2] = channels(strategy, layout, [Features, Predictions]);
            let [p1, p2] = channels(strategy, layout, [Predictions, Features]);
            vec![
                Edge::new(TEACHER, S1, t1),
                Edge::new(S2, S1, p1),
                Edge::new(TEACHER, S2, t2),
                Edge::new(S1, S2, p2),
            ]
        }
    }
}

fn check_weights(config: Config, name: &str, w: &StudentWeights) -> Result<()> {
    let bad = |identity: &str| {
        Err(Error::Config(format!(
            "{config} plan violates {identity} for {name} (α={}, β={}, γ={})",
            w.alpha, w.beta, w.gamma
        )))
    };
    if ![w.alpha, w.beta, w.gamma].iter().all(|v| v.is_finite() && *v >= 0.0) {
        return bad("finite non-negative weights");
    }
    let near = |a: f64, b: f64| (a - b).abs() <= WEIGHT_TOL;
    match config {
        Config::KdOnline | Config::KdOffline => {
            if !near(w.gamma, 0.0) {
                return bad("γ = 0");
            }
            if !near(w.beta, 1.0 - w.alpha) {
                return bad("β = 1 − α");
            }
        }
        Config::Ml => {
            if !near(w.beta, 0.0) {
                return bad("β = 0");
            }
            if !near(w.gamma, 1.0 - w.alpha) {
                return bad("γ = 1 − α");
            }
        }
        Config::Standalone => {
            if !near(w.beta, 0.0) || !near(w.gamma, 0.0) {
                return bad("β = γ = 0");
            }
        }
        Config::KdMl => {}
    }
    Ok(())
}

/// Builds the plan of one cell after validating the weight identities.
pub fn build_plan(
    config: Config,
    strategy: Strategy,
    task: Task,
    weights: PlanWeights,
    temperature: f64,
    layout: V3Layout,
) -> Result<SharingPlan> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::Config(format!("temperature must be positive, got {temperature}")));
    }
    let mut networks = Vec::new();
    if config.has_teacher() {
        networks.push((TEACHER.to_owned(), Role::Teacher));
    }
    networks.push((S1.to_owned(), Role::Student));
    let mut by_name = BTreeMap::new();
    by_name.insert(S1.to_owned(), weights.s1);
    if config != Config::Standalone {
        networks.push((S2.to_owned(), Role::Student));
        by_name.insert(S2.to_owned(), weights.s2);
    }
    for (name, w) in &by_name {
        check_weights(config, name, w)?;
    }
    Ok(SharingPlan {
        config,
        strategy,
        layout,
        task,
        networks,
        edges: edges_for(config, strategy, layout),
        weights: by_name,
        schedule: if config == Config::KdOffline {
            Schedule::Offline
        } else {
            Schedule::Online
        },
        temperature,
    })
}

impl SharingPlan {
    /// Single-student baseline trained on ground truth alone.
    pub fn standalone(task: Task) -> Self {
        build_plan(
            Config::Standalone,
            Strategy::V1,
            task,
            PlanWeights::paper_defaults(task, Config::Standalone, Strategy::V1),
            DEFAULT_TEMPERATURE,
            V3Layout::Paper,
        )
        .expect("baseline weights are consistent")
    }

    pub fn teacher(&self) -> Option<&str> {
        self.networks
            .iter()
            .find(|(_, r)| *r == Role::Teacher)
            .map(|(n, _)| n.as_str())
    }

    pub fn students(&self) -> impl Iterator<Item = &str> {
        self.networks
            .iter()
            .filter(|(_, r)| *r == Role::Student)
            .map(|(n, _)| n.as_str())
    }

    /// True when the teacher trains in the same loop as the students.
    pub fn teacher_cotrained(&self) -> bool {
        self.teacher().is_some() && self.schedule == Schedule::Online
    }

    pub fn incoming<'a>(&'a self, dst: &'a str) -> impl Iterator<Item = &'a Edge> + 'a {
        self.edges.iter().filter(move |e| e.dst == dst)
    }

    /// `(src, dst, channel)` triples in a canonical order.
    pub fn edge_matrix(&self) -> Vec<(String, String, Channel)> {
        let mut m: Vec<_> = self
            .edges
            .iter()
            .map(|e| (e.src.clone(), e.dst.clone(), e.channel))
            .collect();
        m.sort();
        m
    }

    pub fn student_weights(&self, student: &str) -> Result<StudentWeights> {
        self.weights
            .get(student)
            .copied()
            .ok_or_else(|| Error::Config(format!("{student} is not a student of this plan")))
    }

    /// Copy with one student's weights replaced; identities are not
    /// re-validated.
    pub fn with_student_weights(&self, student: &str, w: StudentWeights) -> Self {
        let mut p = self.clone();
        p.weights.insert(student.to_owned(), w);
        p
    }
}

/// Graph handles of one network's outputs for the current batch.
#[derive(Clone, Copy, Debug)]
pub struct NetOutputs {
    pub logits: Var,
    pub tap: Option<Var>,
}

/// Everything the objectives read: per-network outputs and the ground
/// truth (one-hot `B×K` labels or `B×1×H×W` masks).
#[derive(Clone, Debug)]
pub struct BatchOutputs {
    pub nets: BTreeMap<String, NetOutputs>,
    pub target: Var,
}

impl BatchOutputs {
    fn net(&self, name: &str) -> Result<NetOutputs> {
        self.nets
            .get(name)
            .copied()
            .ok_or_else(|| Error::Config(format!("no outputs recorded for network {name}")))
    }

    fn tap(&self, name: &str) -> Result<Var> {
        self.net(name)?
            .tap
            .ok_or_else(|| Error::Config(format!("feature edge needs a tap on network {name}")))
    }
}

/// An adapter recorded on the graph for one feature edge.
#[derive(Clone, Debug)]
pub struct BoundAdapter<'a> {
    pub block: &'a AdapterBlock,
    pub bound: Bound,
}

/// Adapters keyed by `(src, dst)` of the edge they serve.
pub type AdapterMap<'a> = BTreeMap<(String, String), BoundAdapter<'a>>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Term {
    Task,
    Kd,
    Ml,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub term: Term,
    pub channel: Option<Channel>,
    pub weight: f64,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub network: String,
    pub total: f64,
    pub components: Vec<Component>,
}

impl LossReport {
    /// `Σ weight · value` over the components.
    pub fn reconstructed(&self) -> f64 {
        self.components.iter().map(|c| c.weight * c.value).sum()
    }
}

fn task_loss<E: Element>(g: &mut Graph<E>, task: Task, logits: Var, target: Var) -> Result<Var> {
    match task {
        Task::Classification => {
            let p = losses::softmax_t(g, logits, 1.0)?;
            losses::cross_entropy(g, &p, target)
        }
        Task::Segmentation => {
            let p = losses::pixel_map(g, logits, 1.0)?;
            losses::fd_loss(g, &p, target, FOCAL_TAU)
        }
    }
}

fn edge_loss<E: Element>(
    g: &mut Graph<E>,
    plan: &SharingPlan,
    edge: &Edge,
    out: &BatchOutputs,
    adapters: &AdapterMap<'_>,
) -> Result<Var> {
    match edge.channel {
        Channel::Predictions => {
            let (src, dst) = (out.net(&edge.src)?.logits, out.net(&edge.dst)?.logits);
            let t = plan.temperature;
            match plan.task {
                Task::Classification => {
                    let target = losses::softmax_t(g, src, t)?;
                    let source = losses::softmax_t(g, dst, t)?;
                    losses::kl_div(g, &target, &source)
                }
                Task::Segmentation => {
                    let target = losses::pixel_map(g, src, t)?;
                    let source = losses::pixel_map(g, dst, t)?;
                    losses::pixel_kl_div(g, &target, &source)
                }
            }
        }
        Channel::Features => {
            let src = out.tap(&edge.src)?;
            let own = out.tap(&edge.dst)?;
            let fixed = g.detach(src);
            let key = (edge.src.clone(), edge.dst.clone());
            let received = match adapters.get(&key) {
                Some(a) => a.block.forward(g, &a.bound, fixed)?,
                None => fixed,
            };
            losses::feature_mse(g, own, received)
        }
    }
}

fn weighted_sum<E: Element>(
    g: &mut Graph<E>,
    network: &str,
    parts: Vec<(Term, Option<Channel>, f64, Var)>,
) -> Result<(Var, LossReport)> {
    let mut total: Option<Var> = None;
    let mut components = Vec::with_capacity(parts.len());
    for (term, channel, weight, v) in parts {
        components.push(Component {
            term,
            channel,
            weight,
            value: g.value(v).item().wide(),
        });
        let w = g.scale(v, weight);
        total = Some(match total {
            None => w,
            Some(t) => g.add(t, w)?,
        });
    }
    let total = total.expect("every objective has a task term");
    let report = LossReport {
        network: network.to_owned(),
        total: g.value(total).item().wide(),
        components,
    };
    Ok((total, report))
}

/// `α·task + β·(teacher term) + γ·(peer term)` for one student.
pub fn student_objective<E: Element>(
    g: &mut Graph<E>,
    plan: &SharingPlan,
    student: &str,
    out: &BatchOutputs,
    adapters: &AdapterMap<'_>,
) -> Result<(Var, LossReport)> {
    let w = plan.student_weights(student)?;
    let own = out.net(student)?;
    let mut parts = vec![(
        Term::Task,
        None,
        w.alpha,
        task_loss(g, plan.task, own.logits, out.target)?,
    )];
    for edge in plan.incoming(student) {
        let (term, weight) = if edge.from_teacher() {
            (Term::Kd, w.beta)
        } else {
            (Term::Ml, w.gamma)
        };
        let v = edge_loss(g, plan, edge, out, adapters)?;
        parts.push((term, Some(edge.channel), weight, v));
    }
    weighted_sum(g, student, parts)
}

/// Training phase a teacher objective is requested for.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    /// Everyone trains together (online schedules).
    Joint,
    /// Offline phase 1: the teacher alone.
    Pretrain,
    /// Offline phase 2: students only, teacher frozen.
    Distill,
}

/// The teacher's ground-truth loss; teachers never receive knowledge.
pub fn teacher_objective<E: Element>(
    g: &mut Graph<E>,
    plan: &SharingPlan,
    out: &BatchOutputs,
    phase: Phase,
) -> Result<(Var, LossReport)> {
    let teacher = plan
        .teacher()
        .ok_or_else(|| Error::Contract(format!("{} plan has no teacher", plan.config)))?;
    if plan.schedule == Schedule::Offline && phase == Phase::Distill {
        return Err(Error::Contract(
            "the teacher is frozen while offline students distill".into(),
        ));
    }
    let logits = out.net(teacher)?.logits;
    let v = task_loss(g, plan.task, logits, out.target)?;
    weighted_sum(g, teacher, vec![(Term::Task, None, 1.0, v)])
}

/// Student relabeling that maps every `kind` edge of `from` onto an edge of
/// `to` with the same channel. Identity is tried before the swap.
fn relabeling(from: &SharingPlan, to: &SharingPlan, teacher_edges: bool) -> Option<BTreeMap<String, String>> {
    let identity: BTreeMap<String, String> = [(S1, S1), (S2, S2), (TEACHER, TEACHER)]
        .iter()
        .map(|(a, b)| (a.to_string(), b.to_string()))
        .collect();
    let swap: BTreeMap<String, String> = [(S1, S2), (S2, S1), (TEACHER, TEACHER)]
        .iter()
        .map(|(a, b)| (a.to_string(), b.to_string()))
        .collect();
    [identity, swap].into_iter().find(|m| {
        let mine: Vec<_> = from
            .edges
            .iter()
            .filter(|e| e.from_teacher() == teacher_edges)
            .collect();
        let mut mapped: Vec<_> = mine
            .iter()
            .map(|e| Edge::new(&m[&e.src], &m[&e.dst], e.channel))
            .collect();
        let mut theirs: Vec<_> = to.edges.clone();
        mapped.sort();
        theirs.sort();
        mapped == theirs
    })
}

fn relabel_outputs(out: &BatchOutputs, m: &BTreeMap<String, String>) -> BatchOutputs {
    BatchOutputs {
        nets: out
            .nets
            .iter()
            .map(|(k, v)| (m.get(k).cloned().unwrap_or_else(|| k.clone()), *v))
            .collect(),
        target: out.target,
    }
}

fn relabel_adapters<'a>(a: &AdapterMap<'a>, m: &BTreeMap<String, String>) -> AdapterMap<'a> {
    let name = |k: &String| m.get(k).cloned().unwrap_or_else(|| k.clone());
    a.iter()
        .map(|((s, d), v)| ((name(s), name(d)), v.clone()))
        .collect()
}

fn collapses_to<E: Element>(
    g: &mut Graph<E>,
    kdml: &SharingPlan,
    other: &SharingPlan,
    teacher_edges: bool,
    out: &BatchOutputs,
    adapters: &AdapterMap<'_>,
) -> Result<bool> {
    let Some(m) = relabeling(kdml, other, teacher_edges) else {
        return Ok(false);
    };
    let mut reduced = kdml.clone();
    for w in reduced.weights.values_mut() {
        if teacher_edges {
            w.gamma = 0.0;
        } else {
            w.beta = 0.0;
        }
    }
    let out_m = relabel_outputs(out, &m);
    let adapters_m = relabel_adapters(adapters, &m);
    for s in [S1, S2] {
        let (_, a) = student_objective(g, &reduced, s, out, adapters)?;
        let (_, b) = student_objective(g, other, &m[s], &out_m, &adapters_m)?;
        if (a.total - b.total).abs() > WEIGHT_TOL {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Checks on one batch that the combined objective with `γ = γ' = 0`
/// equals the KD-only objective and with `β = β' = 0` equals the ML-only
/// objective. Students are relabeled when the single-mode plan assigns the
/// channels the other way round.
pub fn reduction_check<E: Element>(
    g: &mut Graph<E>,
    plan_kdml: &SharingPlan,
    plan_kd: &SharingPlan,
    plan_ml: &SharingPlan,
    out: &BatchOutputs,
    adapters: &AdapterMap<'_>,
) -> Result<bool> {
    if plan_kdml.config != Config::KdMl || !plan_kd.config.kd_only() || plan_ml.config != Config::Ml {
        return Err(Error::Contract(
            "reduction_check expects KD_ML, KD-only and ML plans".into(),
        ));
    }
    Ok(collapses_to(g, plan_kdml, plan_kd, true, out, adapters)?
        && collapses_to(g, plan_kdml, plan_ml, false, out, adapters)?)
}

#[cfg(test)]
mod tests;
