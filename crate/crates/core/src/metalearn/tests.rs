use super::*;
use crate::data::{
    build_meta_tasks, generate_synthetic, split_sessions, CheckinRecord, Instance, MetaTask, SessionConfig, SynthConfig,
};
use crate::diffmath::{FlatParams, ParamSet, Tensor};
use crate::error::Error;
use crate::hypergraph::{CheckinHypergraph, Relation};
use crate::model::{ModelConfig, ModelParams};
use proptest::prelude::*;

fn rec(user: usize, poi: usize, category: usize) -> CheckinRecord {
    CheckinRecord {
        user,
        poi,
        category,
        lat: 0.0,
        lon: 0.0,
        timestamp: 0,
        time_slot: 0,
        tz_offset_min: 0,
    }
}

fn records_with_counts(counts: &[usize]) -> Vec<CheckinRecord> {
    counts
        .iter()
        .enumerate()
        .flat_map(|(c, &n)| std::iter::repeat(rec(0, 0, c)).take(n))
        .collect()
}

fn dummy_instance(user: usize) -> Instance {
    Instance {
        user,
        session: 0,
        prefix: vec![rec(user, 0, 0)],
        target: rec(user, 1, 0),
    }
}

fn task(user: usize, rate: f64) -> MetaTask {
    MetaTask {
        user,
        support: vec![dummy_instance(user)],
        query: vec![dummy_instance(user)],
        entropy: 0.0,
        inner_rate: rate,
    }
}

/// `Σ_i (x_i − target_u,i)²`, with one target vector per user, for support and query alike.
struct Quadratic {
    targets: Vec<Vec<f64>>,
    /// Report the negated gradient, turning descent into ascent.
    flip: bool,
}

impl Quadratic {
    fn new(targets: Vec<Vec<f64>>) -> Self {
        Quadratic { targets, flip: false }
    }
}

impl Objective<FlatParams> for Quadratic {
    fn loss(&self, params: &FlatParams, batch: &[Instance]) -> crate::Result<f64> {
        let t = &self.targets[batch[0].user];
        Ok(params.0[0].data().iter().zip(t).map(|(x, t)| (x - t).powi(2)).sum::<f64>() + 1.0)
    }

    fn loss_and_grad(&self, params: &FlatParams, batch: &[Instance]) -> crate::Result<(f64, Vec<Tensor>)> {
        let t = &self.targets[batch[0].user];
        let sign = if self.flip { -1.0 } else { 1.0 };
        let g: Vec<f64> = params.0[0].data().iter().zip(t).map(|(x, t)| sign * 2.0 * (x - t)).collect();
        let n = g.len();
        Ok((self.loss(params, batch)?, vec![Tensor::new(vec![n], g).unwrap()]))
    }
}

fn flat(values: &[f64]) -> FlatParams {
    FlatParams(vec![Tensor::new(vec![values.len()], values.to_vec()).unwrap()])
}

fn cfg() -> MetaConfig {
    MetaConfig {
        meta_batch: 2,
        epochs: 3,
        ..MetaConfig::default()
    }
}

#[test]
fn entropy_examples() {
    assert_eq!(behavior_entropy(&records_with_counts(&[5])).unwrap(), 0.0);
    let uniform = behavior_entropy(&records_with_counts(&[3, 3, 3, 3])).unwrap();
    assert!((uniform - 4f64.ln()).abs() < 1e-12);
    // p = (1/2, 1/4, 1/4): ½·ln 2 + 2·¼·ln 4 = 1.5·ln 2.
    let h = behavior_entropy(&records_with_counts(&[2, 1, 1])).unwrap();
    assert!((h - 1.5 * 2f64.ln()).abs() < 1e-12);
    assert!((h - 1.039721).abs() < 1e-6);
    assert!(matches!(behavior_entropy(&[]), Err(Error::InvalidArgument(_))));
}

#[test]
fn adaptive_rate_examples() {
    assert_eq!(adaptive_rate(0.0, 0.01, 1.0), 0.005);
    assert!((adaptive_rate(4f64.ln(), 0.01, 1.0) - 0.008).abs() < 1e-12);
    let expected = 0.01 / (1.0 + (-1.0f64).exp());
    assert!((adaptive_rate(2.0, 0.01, 0.5) - expected).abs() < 1e-15);
    assert!((adaptive_rate(2.0, 0.01, 0.5) - 0.0073106).abs() < 1e-7);
}

#[test]
fn vanishing_sensitivity_gives_half_base_rate() {
    for h in [0.0, 0.7, 20f64.ln()] {
        assert!((adaptive_rate(h, 0.04, 1e-14) - 0.02).abs() < 1e-15);
    }
}

proptest! {
    #[test]
    fn rate_is_increasing_and_bounded(h1 in 0.0f64..5.0, dh in 1e-3f64..5.0, beta in 0.05f64..3.0, alpha0 in 1e-4f64..1.0) {
        let a = adaptive_rate(h1, alpha0, beta);
        let b = adaptive_rate(h1 + dh, alpha0, beta);
        prop_assert!(b > a);
        prop_assert!(a >= alpha0 / 2.0 && b <= alpha0);
    }
}

#[test]
fn rates_follow_entropy_or_fixed_override() {
    let mut tasks = vec![task(0, 0.0), task(1, 0.0)];
    tasks[1].entropy = 20f64.ln();
    assign_rates(&mut tasks, 0.1, 1.0, None);
    assert_eq!(tasks[0].inner_rate, 0.05);
    assert!((tasks[1].inner_rate - 0.1 * 20.0 / 21.0).abs() < 1e-15);
    assign_rates(&mut tasks, 0.1, 1.0, Some(0.1));
    assert!(tasks.iter().all(|t| t.inner_rate == 0.1));
}

#[test]
fn quadratic_inner_step() {
    let obj = Quadratic::new(vec![vec![1.0]]);
    let theta = flat(&[0.0]);
    let r = inner_adapt(&theta, &task(0, 0.1), &cfg(), &obj).unwrap();
    assert!((r.adapted.0[0].data()[0] - 0.2).abs() < 1e-15);
    assert_eq!(theta, flat(&[0.0]));
    assert!(r.support_loss_post < r.support_loss_pre);
}

#[test]
fn zero_gradient_is_a_fixed_point() {
    let obj = Quadratic::new(vec![vec![0.3, -0.4]]);
    let theta = flat(&[0.3, -0.4]);
    let r = inner_adapt(&theta, &task(0, 0.5), &cfg(), &obj).unwrap();
    assert_eq!(r.adapted, theta);
}

#[test]
fn inner_gradients_are_clipped() {
    let obj = Quadratic::new(vec![vec![100.0]]);
    let r = inner_adapt(&flat(&[0.0]), &task(0, 1.0), &cfg(), &obj).unwrap();
    assert!((r.adapted.0[0].data()[0] - 5.0).abs() < 1e-12);
    assert!((r.query_grad[0].data()[0].abs() - 5.0).abs() < 1e-12);
}

#[test]
fn empty_support_is_rejected_during_training() {
    let obj = Quadratic::new(vec![vec![1.0]]);
    let mut t = task(0, 0.1);
    t.support.clear();
    assert!(matches!(inner_adapt(&flat(&[0.0]), &t, &cfg(), &obj), Err(Error::InvalidArgument(_))));
}

#[test]
fn outer_step_examples() {
    let obj = Quadratic::new(vec![vec![1.0, 2.0], vec![-3.0, 0.5]]);
    let theta = flat(&[0.5, 0.5]);
    let c = cfg();

    let mut zero = inner_adapt(&theta, &task(0, 0.1), &c, &obj).unwrap();
    zero.query_grad = theta.zeros_like();
    assert_eq!(outer_step(&theta, &[zero], 0.1).unwrap(), theta);

    let r0 = inner_adapt(&theta, &task(0, 0.1), &c, &obj).unwrap();
    let single = outer_step(&theta, std::slice::from_ref(&r0), 0.1).unwrap();
    // Plain gradient step with the query gradient at the adapted point.
    let x = r0.adapted.0[0].data();
    let expected: Vec<f64> = [0.5, 0.5]
        .iter()
        .zip(x)
        .zip([1.0, 2.0])
        .map(|((t, xa), tgt)| t - 0.1 * 2.0 * (xa - tgt))
        .collect();
    for (g, e) in single.0[0].data().iter().zip(&expected) {
        assert!((g - e).abs() < 1e-15);
    }

    let r1 = inner_adapt(&theta, &task(1, 0.1), &c, &obj).unwrap();
    let both = outer_step(&theta, &[r1.clone(), r0.clone()], 0.1).unwrap();
    let other = outer_step(&theta, std::slice::from_ref(&r1), 0.1).unwrap();
    for i in 0..2 {
        let t = theta.0[0].data()[i];
        let summed = t + (single.0[0].data()[i] - t) + (other.0[0].data()[i] - t);
        assert!((both.0[0].data()[i] - summed).abs() < 1e-15);
    }
    let reordered = outer_step(&theta, &[r0, r1], 0.1).unwrap();
    assert_eq!(both, reordered);
    assert!(matches!(outer_step::<FlatParams>(&theta, &[], 0.1), Err(Error::EmptyInput)));
}

#[test]
fn zero_rate_reduces_to_gradient_descent_on_queries() {
    let obj = Quadratic::new(vec![vec![1.0], vec![2.0]]);
    let theta = flat(&[0.0]);
    let results: Vec<_> = (0..2).map(|u| inner_adapt(&theta, &task(u, 0.0), &cfg(), &obj).unwrap()).collect();
    assert!(results.iter().all(|r| r.adapted == theta));
    let next = outer_step(&theta, &results, 0.01).unwrap();
    // Gradients at 0 are −2 and −4.
    assert!((next.0[0].data()[0] - 0.06).abs() < 1e-15);
}

#[test]
fn zero_epochs_return_the_initialization() {
    let obj = Quadratic::new(vec![vec![1.0]]);
    let c = MetaConfig { epochs: 0, ..cfg() };
    let out = train(flat(&[0.25]), &[task(0, 0.0)], &c, &obj, |_| Ok(())).unwrap();
    assert_eq!(out.params, flat(&[0.25]));
    assert!(out.log.is_empty());
}

fn strip_wall(log: &[EpochLog]) -> Vec<EpochLog> {
    log.iter().map(|e| EpochLog { wall_ms: 0, ..e.clone() }).collect()
}

#[test]
fn training_is_deterministic_across_thread_counts() {
    let targets: Vec<Vec<f64>> = (0..7).map(|u| vec![u as f64 * 0.3, 1.0 - u as f64 * 0.1]).collect();
    let tasks: Vec<_> = (0..7)
        .map(|u| MetaTask {
            entropy: u as f64 * 0.2,
            ..task(u, 0.0)
        })
        .collect();
    let obj = Quadratic::new(targets);
    let c = MetaConfig {
        epochs: 5,
        meta_batch: 3,
        beta_outer: 0.05,
        ..cfg()
    };
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| train(flat(&[0.0, 0.0]), &tasks, &c, &obj, |_| Ok(())).unwrap())
    };
    let a = run(1);
    let b = run(3);
    let again = run(1);
    assert_eq!(a.params, b.params);
    assert_eq!(a.params, again.params);
    assert_eq!(strip_wall(&a.log), strip_wall(&b.log));
    assert_eq!(strip_wall(&a.log), strip_wall(&again.log));
    assert!(a.log.last().unwrap().mean_query_loss < a.log[0].mean_query_loss);
}

#[test]
fn ascent_is_reported_as_divergence() {
    let obj = Quadratic {
        targets: vec![vec![0.0]],
        flip: true,
    };
    let c = MetaConfig {
        epochs: 200,
        beta_outer: 0.5,
        ..cfg()
    };
    let err = train(flat(&[0.1]), &[task(0, 0.0)], &c, &obj, |_| Ok(())).unwrap_err();
    assert!(matches!(err, Error::Divergence { .. }), "{err}");
}

#[test]
fn cold_start_examples() {
    let obj = Quadratic::new(vec![vec![1.0]]);
    let theta = flat(&[0.0]);
    let c = cfg();
    let mut empty = task(0, 0.1);
    empty.support.clear();
    let zs = cold_start_eval_adapt(&theta, &empty, &c, &obj).unwrap();
    assert!(zs.zero_shot);
    assert_eq!(zs.params, theta);

    let t = task(0, 0.1);
    let cs = cold_start_eval_adapt(&theta, &t, &c, &obj).unwrap();
    let tr = inner_adapt(&theta, &t, &c, &obj).unwrap();
    assert!(!cs.zero_shot);
    assert_eq!(cs.params, tr.adapted);
}

#[test]
fn cold_start_never_reads_the_query_set() {
    let obj = Quadratic::new(vec![vec![1.0]]);
    let theta = flat(&[0.0]);
    let t = task(0, 0.1);
    let mut poisoned = t.clone();
    poisoned.query = vec![Instance {
        user: 99,
        ..dummy_instance(0)
    }];
    let a = cold_start_eval_adapt(&theta, &t, &cfg(), &obj).unwrap();
    let b = cold_start_eval_adapt(&theta, &poisoned, &cfg(), &obj).unwrap();
    assert_eq!(a.params, b.params);
}

#[test]
fn model_support_loss_descends_for_small_rate() {
    let synth = SynthConfig {
        n_users: 8,
        n_pois: 25,
        n_categories: 8,
        days_per_user: 3,
        ..SynthConfig::default()
    };
    let (vocab, records) = generate_synthetic(&synth).unwrap();
    let split = split_sessions(&records, SessionConfig::default());
    let tasks = build_meta_tasks(&split.trajectories, 0.5).unwrap().tasks;
    let graph = CheckinHypergraph::build(&vocab, &records, 1.0).unwrap();
    let ops = graph.operators(&Relation::ALL);
    let params = ModelParams::init(&ModelConfig { dim: 4, ..ModelConfig::default() }, &ops.nodes).unwrap();
    let obj = HypergraphObjective { ops: &ops };
    let mut t = tasks[0].clone();
    t.inner_rate = 1e-2;
    let before = params.clone();
    let r = inner_adapt(&params, &t, &cfg(), &obj).unwrap();
    assert!(r.support_loss_post < r.support_loss_pre);
    assert_eq!(params, before);
    let next = outer_step(&params, &[r], 1e-3).unwrap();
    assert!(next.is_finite());
}
