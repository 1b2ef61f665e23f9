use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::autodiff::gradcheck::{self, STEP};
use crate::autodiff::Tensor;
use crate::nets::FeatureTap;

use Channel::{Features as F, Predictions as P};

fn plan(config: Config, strategy: Strategy, task: Task) -> SharingPlan {
    build_plan(
        config,
        strategy,
        task,
        PlanWeights::paper_defaults(task, config, strategy),
        DEFAULT_TEMPERATURE,
        V3Layout::Paper,
    )
    .unwrap()
}

fn triples(edges: &[(&str, &str, Channel)]) -> Vec<(String, String, Channel)> {
    let mut v: Vec<_> = edges
        .iter()
        .map(|(s, d, c)| (s.to_string(), d.to_string(), *c))
        .collect();
    v.sort();
    v
}

#[test]
fn edge_matrix_matches_the_strategy_table() {
    use Config::*;
    use Strategy::*;
    let expected: Vec<(Config, Strategy, Vec<(&str, &str, Channel)>)> = vec![
        (Ml, V1, vec![("S1", "S2", P), ("S2", "S1", P)]),
        (Ml, V2, vec![("S1", "S2", F), ("S2", "S1", F)]),
        (Ml, V3, vec![("S1", "S2", P), ("S2", "S1", F)]),
        (KdOnline, V1, vec![("T", "S1", P), ("T", "S2", P)]),
        (KdOnline, V2, vec![("T", "S1", F), ("T", "S2", F)]),
        (KdOnline, V3, vec![("T", "S1", P), ("T", "S2", F)]),
        (KdOffline, V1, vec![("T", "S1", P), ("T", "S2", P)]),
        (KdOffline, V2, vec![("T", "S1", F), ("T", "S2", F)]),
        (KdOffline, V3, vec![("T", "S1", P), ("T", "S2", F)]),
        (
            KdMl,
            V1,
            vec![("T", "S1", P), ("S2", "S1", P), ("T", "S2", P), ("S1", "S2", P)],
        ),
        (
            KdMl,
            V2,
            vec![("T", "S1", F), ("S2", "S1", F), ("T", "S2", F), ("S1", "S2", F)],
        ),
        (
            KdMl,
            V3,
            vec![("T", "S1", F), ("S2", "S1", P), ("T", "S2", P), ("S1", "S2", F)],
        ),
    ];
    assert_eq!(expected.len(), 12);
    for task in [Task::Classification, Task::Segmentation] {
        for (c, s, edges) in &expected {
            assert_eq!(plan(*c, *s, task).edge_matrix(), triples(edges), "{c} {s}");
        }
    }
}

#[test]
fn plan_examples() {
    let p = plan(Config::KdMl, Strategy::V3, Task::Classification);
    assert_eq!(p.edges.len(), 4);
    assert_eq!(p.schedule, Schedule::Online);
    assert!(p.teacher_cotrained());

    let p = plan(Config::Ml, Strategy::V1, Task::Classification);
    assert_eq!(p.teacher(), None);
    assert!(p.edges.iter().all(|e| e.channel == P && e.src != TEACHER));

    let p = plan(Config::KdOffline, Strategy::V2, Task::Segmentation);
    assert_eq!(p.schedule, Schedule::Offline);
    assert!(!p.teacher_cotrained());
    assert!(p.edges.iter().all(|e| e.channel == F && e.src == TEACHER));

    let p = SharingPlan::standalone(Task::Classification);
    assert!(p.edges.is_empty());
    assert_eq!(p.students().collect::<Vec<_>>(), vec![S1]);
}

#[test]
fn swapped_layout_exchanges_v3_channels_only() {
    let w = PlanWeights::paper_defaults(Task::Classification, Config::KdMl, Strategy::V3);
    let p = build_plan(Config::KdMl, Strategy::V3, Task::Classification, w, 2.0, V3Layout::Swapped).unwrap();
    assert_eq!(
        p.edge_matrix(),
        triples(&[("T", "S1", P), ("S2", "S1", F), ("T", "S2", F), ("S1", "S2", P)])
    );
    let w = PlanWeights::paper_defaults(Task::Classification, Config::KdMl, Strategy::V1);
    let p = build_plan(Config::KdMl, Strategy::V1, Task::Classification, w, 2.0, V3Layout::Swapped).unwrap();
    assert!(p.edges.iter().all(|e| e.channel == P));
}

#[test]
fn inconsistent_weights_are_rejected_with_the_identity() {
    let mut w = PlanWeights::derived(Config::KdOnline, 0.2, 0.2);
    w.s2.gamma = 0.1;
    let err = build_plan(Config::KdOnline, Strategy::V1, Task::Classification, w, 2.0, V3Layout::Paper)
        .unwrap_err();
    assert!(matches!(&err, Error::Config(m) if m.contains("γ = 0") && m.contains("S2")), "{err}");

    let mut w = PlanWeights::derived(Config::KdOffline, 0.2, 0.2);
    w.s1.beta = 0.7;
    let err = build_plan(Config::KdOffline, Strategy::V1, Task::Classification, w, 2.0, V3Layout::Paper)
        .unwrap_err();
    assert!(matches!(&err, Error::Config(m) if m.contains("β = 1 − α")), "{err}");

    let mut w = PlanWeights::derived(Config::Ml, 0.3, 0.3);
    w.s1.beta = 0.2;
    assert!(build_plan(Config::Ml, Strategy::V2, Task::Segmentation, w, 2.0, V3Layout::Paper).is_err());

    let w = PlanWeights::derived(Config::KdMl, 0.2, 0.2);
    assert!(build_plan(Config::KdMl, Strategy::V1, Task::Classification, w, 0.0, V3Layout::Paper).is_err());
    let mut w = w;
    w.s1.alpha = f64::NAN;
    assert!(build_plan(Config::KdMl, Strategy::V1, Task::Classification, w, 2.0, V3Layout::Paper).is_err());
}

#[test]
fn tuned_v3_classification_weights_are_accepted() {
    let w = PlanWeights {
        s1: StudentWeights::new(0.1, 0.45, 0.45),
        s2: StudentWeights::new(0.4, 0.3, 0.3),
    };
    assert_eq!(
        w,
        PlanWeights::paper_defaults(Task::Classification, Config::KdMl, Strategy::V3)
    );
    assert!(build_plan(Config::KdMl, Strategy::V3, Task::Classification, w, 2.0, V3Layout::Paper).is_ok());
}

#[test]
fn every_default_cell_builds() {
    for task in [Task::Classification, Task::Segmentation] {
        for c in Config::ALL {
            for s in Strategy::ALL {
                plan(c, s, task);
            }
        }
    }
}

struct Batch {
    outputs: BatchOutputs,
}

const T_TAP: [usize; 3] = [6, 2, 2];
const S_TAP: [usize; 3] = [4, 2, 2];

fn tap(network: &str, shape: [usize; 3]) -> FeatureTap {
    FeatureTap {
        network: network.into(),
        layer: "tap".into(),
        shape,
    }
}

fn adapter_blocks() -> BTreeMap<(String, String), AdapterBlock> {
    [S1, S2]
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let a = AdapterBlock::new(&tap(TEACHER, T_TAP), &tap(s, S_TAP), 40 + i as u64).unwrap();
            ((TEACHER.to_owned(), s.to_string()), a)
        })
        .collect()
}

fn bind_adapters<'a>(
    g: &mut Graph<f64>,
    blocks: &'a BTreeMap<(String, String), AdapterBlock>,
) -> AdapterMap<'a> {
    blocks
        .iter()
        .map(|(k, b)| {
            (
                k.clone(),
                BoundAdapter {
                    block: b,
                    bound: b.bind(g, false),
                },
            )
        })
        .collect()
}

/// Random inputs in a fixed order: per network (logits, tap), then target.
fn random_inputs(rng: &mut ChaCha8Rng, task: Task) -> Vec<Tensor<f64>> {
    let b = 3;
    let logits_shape: Vec<usize> = match task {
        Task::Classification => vec![b, 2],
        Task::Segmentation => vec![b, 1, 4, 4],
    };
    let mut v = Vec::new();
    for (_, shape) in [(TEACHER, T_TAP), (S1, S_TAP), (S2, S_TAP)] {
        v.push(Tensor::from_fn(&logits_shape, |_| rng.gen_range(-2.0..2.0)));
        let ts = [b, shape[0], shape[1], shape[2]];
        v.push(Tensor::from_fn(&ts, |_| rng.gen_range(-1.0..1.0)));
    }
    let target = match task {
        Task::Classification => {
            let labels: Vec<usize> = (0..b).map(|_| rng.gen_range(0..2)).collect();
            Tensor::from_fn(&[b, 2], |i| f64::from((labels[i / 2] == i % 2) as u8))
        }
        Task::Segmentation => {
            Tensor::from_fn(&logits_shape, |_| f64::from(rng.gen_bool(0.3) as u8))
        }
    };
    v.push(target);
    v
}

fn outputs_from(vars: &[Var]) -> BatchOutputs {
    let nets = [TEACHER, S1, S2]
        .iter()
        .enumerate()
        .map(|(i, n)| {
            (
                n.to_string(),
                NetOutputs {
                    logits: vars[2 * i],
                    tap: Some(vars[2 * i + 1]),
                },
            )
        })
        .collect();
    BatchOutputs {
        nets,
        target: vars[6],
    }
}

fn random_batch(g: &mut Graph<f64>, rng: &mut ChaCha8Rng, task: Task) -> Batch {
    let inputs = random_inputs(rng, task);
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t)).collect();
    Batch {
        outputs: outputs_from(&vars),
    }
}

#[test]
fn weighted_sum_arithmetic() {
    let mut g = Graph::<f64>::new();
    let parts = [1.0, 2.0, 3.0]
        .iter()
        .zip([0.2, 0.4, 0.4])
        .zip([Term::Task, Term::Kd, Term::Ml])
        .map(|((v, w), t)| (t, None, w, g.constant(Tensor::scalar(*v))))
        .collect();
    let (total, report) = weighted_sum(&mut g, S1, parts).unwrap();
    assert!((g.value(total).item() - 2.2).abs() < 1e-12);
    assert!((report.reconstructed() - report.total).abs() < 1e-12);
}

#[test]
fn pure_task_weights_reduce_to_the_task_loss() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let blocks = adapter_blocks();
    for task in [Task::Classification, Task::Segmentation] {
        let mut g = Graph::<f64>::new();
        let batch = random_batch(&mut g, &mut rng, task);
        let adapters = bind_adapters(&mut g, &blocks);
        let w = StudentWeights::new(1.0, 0.0, 0.0);
        let p = build_plan(
            Config::KdMl,
            Strategy::V3,
            task,
            PlanWeights { s1: w, s2: w },
            2.0,
            V3Layout::Paper,
        )
        .unwrap();
        let (total, report) = student_objective(&mut g, &p, S1, &batch.outputs, &adapters).unwrap();
        let own = batch.outputs.nets[S1].logits;
        let direct = task_loss(&mut g, task, own, batch.outputs.target).unwrap();
        assert_eq!(g.value(total).item(), g.value(direct).item());
        assert_eq!(report.components.len(), 3);
    }
}

#[test]
fn reports_reconstruct_their_totals() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let blocks = adapter_blocks();
    for task in [Task::Classification, Task::Segmentation] {
        for c in Config::ALL {
            for s in Strategy::ALL {
                let mut g = Graph::<f64>::new();
                let batch = random_batch(&mut g, &mut rng, task);
                let adapters = bind_adapters(&mut g, &blocks);
                let p = plan(c, s, task);
                for st in [S1, S2] {
                    let (_, r) = student_objective(&mut g, &p, st, &batch.outputs, &adapters).unwrap();
                    assert!((r.total - r.reconstructed()).abs() < 1e-6);
                    let expected_terms = 1 + p.incoming(st).count();
                    assert_eq!(r.components.len(), expected_terms);
                }
            }
        }
    }
}

#[test]
fn teacher_objective_is_plain_task_loss() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut g = Graph::<f64>::new();
    let batch = random_batch(&mut g, &mut rng, Task::Classification);
    let p = plan(Config::KdOnline, Strategy::V1, Task::Classification);
    let (v, r) = teacher_objective(&mut g, &p, &batch.outputs, Phase::Joint).unwrap();
    assert_eq!(r.components.len(), 1);
    let probs = losses::softmax_t(&mut g, batch.outputs.nets[TEACHER].logits, 1.0).unwrap();
    let ce = losses::cross_entropy(&mut g, &probs, batch.outputs.target).unwrap();
    assert_eq!(g.value(v).item(), g.value(ce).item());

    let off = plan(Config::KdOffline, Strategy::V1, Task::Classification);
    assert!(teacher_objective(&mut g, &off, &batch.outputs, Phase::Pretrain).is_ok());
    assert!(matches!(
        teacher_objective(&mut g, &off, &batch.outputs, Phase::Distill),
        Err(Error::Contract(_))
    ));
    let ml = plan(Config::Ml, Strategy::V1, Task::Classification);
    assert!(teacher_objective(&mut g, &ml, &batch.outputs, Phase::Joint).is_err());
}

#[test]
fn missing_tap_is_a_configuration_error() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut g = Graph::<f64>::new();
    let mut batch = random_batch(&mut g, &mut rng, Task::Classification);
    batch.outputs.nets.get_mut(S2).unwrap().tap = None;
    let p = plan(Config::Ml, Strategy::V2, Task::Classification);
    let err = student_objective(&mut g, &p, S1, &batch.outputs, &AdapterMap::new()).unwrap_err();
    assert!(matches!(err, Error::Config(_)));
}

fn reduction_holds(task: Task, strategy: Strategy, alpha: [f64; 2], perturb: f64, seed: u64) -> bool {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let blocks = adapter_blocks();
    let mut g = Graph::<f64>::new();
    let batch = random_batch(&mut g, &mut rng, task);
    let adapters = bind_adapters(&mut g, &blocks);
    let [a1, a2] = alpha;
    let kdml_w = PlanWeights {
        s1: StudentWeights::new(a1, 1.0 - a1 + perturb, 1.0 - a1),
        s2: StudentWeights::new(a2, 1.0 - a2, 1.0 - a2),
    };
    let kdml = build_plan(Config::KdMl, strategy, task, kdml_w, 2.0, V3Layout::Paper).unwrap();
    // The KD-only and ML-only plans may carry the students the other way
    // round; their weights follow the student with the matching channel.
    let reorder = |c: Config| {
        let swap = strategy == Strategy::V3;
        let (x, y) = if swap { (a2, a1) } else { (a1, a2) };
        build_plan(c, strategy, task, PlanWeights::derived(c, x, y), 2.0, V3Layout::Paper).unwrap()
    };
    let kd = reorder(Config::KdOnline);
    let ml = reorder(Config::Ml);
    reduction_check(&mut g, &kdml, &kd, &ml, &batch.outputs, &adapters).unwrap()
}

#[test]
fn reduction_identities_hold_and_detect_perturbation() {
    for task in [Task::Classification, Task::Segmentation] {
        for (i, s) in Strategy::ALL.into_iter().enumerate() {
            assert!(reduction_holds(task, s, [0.2, 0.35], 0.0, i as u64), "{task:?} {s}");
            assert!(!reduction_holds(task, s, [0.2, 0.35], 0.01, i as u64), "{task:?} {s}");
        }
    }
}

#[test]
fn student_objective_has_no_gradient_into_other_networks() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let blocks = adapter_blocks();
    for task in [Task::Classification, Task::Segmentation] {
        for s in Strategy::ALL {
            let p = plan(Config::KdMl, s, task);
            for st in [S1, S2] {
                let mut g = Graph::<f64>::new();
                let batch = random_batch(&mut g, &mut rng, task);
                let adapters = bind_adapters(&mut g, &blocks);
                let (v, _) = student_objective(&mut g, &p, st, &batch.outputs, &adapters).unwrap();
                g.backward(v).unwrap();
                for (name, o) in &batch.outputs.nets {
                    let zero = |x: Var| g.grad(x).is_none_or(|gr| gr.iter().all(|v| *v == 0.0));
                    if name != st {
                        assert!(zero(o.logits) && zero(o.tap.unwrap()), "{st} leaks into {name}");
                    } else {
                        assert!(!zero(o.logits));
                    }
                }
            }
        }
    }
}

#[test]
fn composite_objectives_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let blocks = adapter_blocks();
    for task in [Task::Classification, Task::Segmentation] {
        for s in Strategy::ALL {
            for c in Config::ALL {
                let p = plan(c, s, task);
                let inputs = random_inputs(&mut rng, task);
                for st in [S1, S2] {
                    let r = gradcheck::check(&inputs, STEP, |g, vars| {
                        let out = outputs_from(vars);
                        // Knowledge sources are detached, so finite
                        // differences only agree on the student's own outputs.
                        let adapters = bind_adapters(g, &blocks);
                        student_objective(g, &p, st, &out, &adapters).map(|r| r.0)
                    })
                    .unwrap();
                    let own = if st == S1 { [2, 3] } else { [4, 5] };
                    for i in own {
                        assert!(r.rel_err[i] < 1e-3, "{c} {s} {st}: {:?}", r.rel_err);
                    }
                }
            }
        }
    }
}
