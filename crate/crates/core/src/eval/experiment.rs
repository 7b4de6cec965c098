use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::data::{build_meta_tasks, split_sessions, CheckinRecord, MetaTask, SessionConfig, UserId, Vocab};
use crate::error::{Error, Result};
use crate::eval::metrics::{AtK, MetricsAccumulator, MetricsReport, UserMetrics};
use crate::hypergraph::{CheckinHypergraph, Relation, RelationOperators};
use crate::metalearn::{adaptive_rate, cold_start_eval_adapt, train, EpochLog, HypergraphObjective, MetaConfig};
use crate::model::{score_instances, ModelParams};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Full,
    WoTb,
    WoSf,
    WoUp,
    WoDm,
}

impl Variant {
    pub const ALL: [Variant; 5] = [Variant::Full, Variant::WoTb, Variant::WoSf, Variant::WoUp, Variant::WoDm];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::WoTb => "wo_tb",
            Variant::WoSf => "wo_sf",
            Variant::WoUp => "wo_up",
            Variant::WoDm => "wo_dm",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown variant `{s}`")))
    }
}

/// Which part of the model an experiment switches off.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AblationSpec {
    pub variant: Variant,
}

impl AblationSpec {
    pub fn new(variant: Variant) -> Self {
        AblationSpec { variant }
    }

    /// Relations whose operators the model propagates over.
    pub fn kept_relations(&self) -> Vec<Relation> {
        let dropped = match self.variant {
            Variant::WoTb => Some(Relation::TemporalBehavioral),
            Variant::WoSf => Some(Relation::SpatialFunctional),
            Variant::WoUp => Some(Relation::UserPreference),
            Variant::Full | Variant::WoDm => None,
        };
        Relation::ALL.into_iter().filter(|&r| Some(r) != dropped).collect()
    }

    /// The meta-learning settings of this variant; `wo_dm` fixes every inner rate to α_0.
    pub fn meta_config(&self, meta: &MetaConfig) -> MetaConfig {
        let mut out = meta.clone();
        if self.variant == Variant::WoDm {
            out.fixed_rate = Some(meta.alpha0);
        }
        out
    }
}

/// SHA-256 of the resolved configuration and variant.
pub fn fingerprint(cfg: &RunConfig, spec: &AblationSpec) -> String {
    let json = serde_json::to_vec(&(cfg, spec)).expect("configuration serializes");
    Sha256::digest(json).iter().map(|b| format!("{b:02x}")).collect()
}

/// Seeded split of `users` into (train, test); the test side holds
/// round(test_fraction · n) users, at least one and at most n − 1.
pub fn split_users(users: &[UserId], test_fraction: f64, seed: u64) -> Result<(BTreeSet<UserId>, BTreeSet<UserId>)> {
    if users.len() < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 users with tasks, found {}", users.len())));
    }
    let mut shuffled = users.to_vec();
    shuffled.sort_unstable();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    shuffled.shuffle(&mut rng);
    let n_test = ((test_fraction * users.len() as f64).round() as usize).clamp(1, users.len() - 1);
    let test = shuffled[..n_test].iter().copied().collect();
    let train = shuffled[n_test..].iter().copied().collect();
    Ok((train, test))
}

/// Tasks and hypergraph of one seeded run.
pub struct PreparedRun {
    pub train_tasks: Vec<MetaTask>,
    /// Held-out users, with entropies recomputed from their support sets.
    pub test_tasks: Vec<MetaTask>,
    pub graph: CheckinHypergraph,
}

/// Builds tasks, splits users and constructs the graph from training
/// check-ins plus the held-out users' support check-ins.
pub fn prepare_run(vocab: &Vocab, records: &[CheckinRecord], cfg: &RunConfig, seed: u64) -> Result<PreparedRun> {
    let sessions = split_sessions(
        records,
        SessionConfig {
            local_time: cfg.data.local_time,
        },
    );
    let tasks = build_meta_tasks(&sessions.trajectories, cfg.data.support_fraction)?.tasks;
    let users: Vec<UserId> = tasks.iter().map(|t| t.user).collect();
    let (train_users, test_users) = split_users(&users, cfg.eval.test_fraction, seed)?;
    let mut train_tasks = Vec::new();
    let mut test_tasks = Vec::new();
    for t in tasks {
        if test_users.contains(&t.user) {
            test_tasks.push(t.with_support_entropy()?);
        } else {
            train_tasks.push(t);
        }
    }
    let mut graph_records: Vec<CheckinRecord> =
        records.iter().filter(|r| train_users.contains(&r.user)).cloned().collect();
    for t in &test_tasks {
        graph_records.extend(t.support_checkins());
    }
    let graph = CheckinHypergraph::build(vocab, &graph_records, cfg.graph.delta_km)?;
    Ok(PreparedRun {
        train_tasks,
        test_tasks,
        graph,
    })
}

/// Cold-start evaluation of `params` on held-out tasks: adapt on support, rank all POIs for every query instance.
pub fn evaluate_tasks(
    params: &ModelParams,
    tasks: &[MetaTask],
    meta: &MetaConfig,
    ops: &RelationOperators,
    ks: &[usize],
) -> Result<(MetricsAccumulator, Vec<UserMetrics>)> {
    let objective = HypergraphObjective { ops };
    let per_user: Vec<(MetricsAccumulator, UserMetrics)> = tasks
        .par_iter()
        .map(|task| {
            let mut task = task.clone();
            task.inner_rate = meta
                .fixed_rate
                .unwrap_or_else(|| adaptive_rate(task.entropy, meta.alpha0, meta.beta_ent));
            let adapted = cold_start_eval_adapt(params, &task, meta, &objective)?;
            let mut acc = MetricsAccumulator::new(ks)?;
            if !task.query.is_empty() {
                let logits = score_instances(&adapted.params, ops, &task.query)?;
                for (i, inst) in task.query.iter().enumerate() {
                    acc.add_scores(logits.row(i), inst.next_poi());
                }
            }
            let user = UserMetrics {
                user: task.user,
                instances: acc.count(),
                rate: adapted.rate,
                zero_shot: adapted.zero_shot,
                metrics: acc.means(),
            };
            Ok((acc, user))
        })
        .collect::<Result<_>>()?;
    let mut total = MetricsAccumulator::new(ks)?;
    let mut users = Vec::with_capacity(per_user.len());
    for (acc, user) in per_user {
        total.merge(&acc);
        users.push(user);
    }
    users.sort_by_key(|u| u.user);
    Ok((total, users))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunOutcome {
    pub report: MetricsReport,
    pub train_log: Vec<EpochLog>,
}

/// Train and evaluate once with every random choice derived from `seed`.
pub fn run_once(
    vocab: &Vocab,
    records: &[CheckinRecord],
    cfg: &RunConfig,
    spec: &AblationSpec,
    seed: u64,
) -> Result<RunOutcome> {
    let prepared = prepare_run(vocab, records, cfg, seed)?;
    let ops = prepared.graph.operators(&spec.kept_relations());
    let meta = spec.meta_config(&cfg.meta_for_seed(seed));
    let params = ModelParams::init(&cfg.model_for_seed(seed), &ops.nodes)?;
    let objective = HypergraphObjective { ops: &ops };
    let trained = train(params, &prepared.train_tasks, &meta, &objective, |_| Ok(()))?;
    let (acc, per_user) = evaluate_tasks(&trained.params, &prepared.test_tasks, &meta, &ops, &cfg.eval.ks)?;
    let report = MetricsReport {
        seed,
        instances: acc.count(),
        zero_shot_users: per_user.iter().filter(|u| u.zero_shot).count(),
        metrics: acc.means(),
        per_user,
        fingerprint: fingerprint(cfg, spec),
    };
    Ok(RunOutcome {
        report,
        train_log: trained.log,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub variant: Variant,
    pub fingerprint: String,
    pub config: RunConfig,
    pub seeds: Vec<u64>,
    pub mean: Vec<AtK>,
    /// Sample standard deviation across seeds; zero for a single run.
    pub std: Vec<AtK>,
    pub runs: Vec<RunOutcome>,
}

impl ExperimentReport {
    pub fn mean_at(&self, k: usize) -> Option<&AtK> {
        self.mean.iter().find(|m| m.k == k)
    }

    pub fn std_at(&self, k: usize) -> Option<&AtK> {
        self.std.iter().find(|m| m.k == k)
    }

    /// Recall@k of every run, in seed order.
    pub fn recalls(&self, k: usize) -> Vec<f64> {
        self.runs
            .iter()
            .map(|r| r.report.at(k).map_or(f64::NAN, |m| m.recall))
            .collect()
    }
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Runs with the given seeds; failures are reported with the failing seed.
pub fn run_experiment_with_seeds(
    vocab: &Vocab,
    records: &[CheckinRecord],
    cfg: &RunConfig,
    spec: &AblationSpec,
    seeds: &[u64],
) -> Result<ExperimentReport> {
    if seeds.is_empty() {
        return Err(Error::InvalidArgument("at least one repeat is required".into()));
    }
    cfg.validate()?;
    let runs: Vec<RunOutcome> = seeds
        .par_iter()
        .map(|&seed| {
            run_once(vocab, records, cfg, spec, seed).map_err(|e| Error::Seeded {
                seed,
                source: Box::new(e),
            })
        })
        .collect::<Result<_>>()?;
    let mut mean = Vec::new();
    let mut std = Vec::new();
    for &k in &cfg.eval.ks {
        let pick = |f: fn(&AtK) -> f64| -> Vec<f64> { runs.iter().map(|r| f(r.report.at(k).expect("every K reported"))).collect() };
        let (rm, rs) = mean_std(&pick(|m| m.recall));
        let (nm, ns) = mean_std(&pick(|m| m.ndcg));
        mean.push(AtK { k, recall: rm, ndcg: nm });
        std.push(AtK { k, recall: rs, ndcg: ns });
    }
    Ok(ExperimentReport {
        variant: spec.variant,
        fingerprint: fingerprint(cfg, spec),
        config: cfg.clone(),
        seeds: seeds.to_vec(),
        mean,
        std,
        runs,
    })
}

/// `cfg.eval.repeats` runs with seeds `cfg.seed + i`.
pub fn run_experiment(
    vocab: &Vocab,
    records: &[CheckinRecord],
    cfg: &RunConfig,
    spec: &AblationSpec,
) -> Result<ExperimentReport> {
    let seeds: Vec<u64> = (0..cfg.eval.repeats as u64).map(|i| cfg.seed + i).collect();
    run_experiment_with_seeds(vocab, records, cfg, spec, &seeds)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParameter {
    InnerSteps,
    DeltaKm,
}

impl SweepParameter {
    pub fn name(self) -> &'static str {
        match self {
            SweepParameter::InnerSteps => "inner_steps",
            SweepParameter::DeltaKm => "delta_km",
        }
    }

    fn apply(self, cfg: &RunConfig, value: f64) -> Result<RunConfig> {
        let mut out = cfg.clone();
        match self {
            SweepParameter::InnerSteps => {
                if value < 1.0 || value.fract() != 0.0 {
                    return Err(Error::InvalidArgument(format!("inner_steps value {value} is not a positive integer")));
                }
                out.meta.inner_steps = value as usize;
            }
            SweepParameter::DeltaKm => out.graph.delta_km = value,
        }
        out.validate()?;
        Ok(out)
    }
}

impl FromStr for SweepParameter {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "inner_steps" => Ok(SweepParameter::InnerSteps),
            "delta_km" => Ok(SweepParameter::DeltaKm),
            _ => Err(Error::InvalidArgument(format!("unknown sweep parameter `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub value: f64,
    pub report: ExperimentReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub parameter: SweepParameter,
    pub points: Vec<SweepPoint>,
}

impl SweepReport {
    /// `param_value,recall@K,ndcg@K,...,std_recall@K,std_ndcg@K,...`
    pub fn to_csv(&self) -> String {
        let ks: Vec<usize> = self.points.first().map_or(Vec::new(), |p| p.report.mean.iter().map(|m| m.k).collect());
        let mut header = vec!["param_value".to_string()];
        for k in &ks {
            header.push(format!("recall@{k}"));
            header.push(format!("ndcg@{k}"));
        }
        for k in &ks {
            header.push(format!("std_recall@{k}"));
            header.push(format!("std_ndcg@{k}"));
        }
        let mut out = header.join(",");
        out.push('\n');
        for p in &self.points {
            let mut row = vec![p.value.to_string()];
            for m in p.report.mean.iter().chain(&p.report.std) {
                row.push(m.recall.to_string());
                row.push(m.ndcg.to_string());
            }
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

/// One experiment per value with every other setting fixed.
pub fn sweep(
    vocab: &Vocab,
    records: &[CheckinRecord],
    cfg: &RunConfig,
    spec: &AblationSpec,
    parameter: SweepParameter,
    values: &[f64],
) -> Result<SweepReport> {
    if values.len() < 2 {
        return Err(Error::InvalidArgument("a sweep needs at least two values".into()));
    }
    let points = values
        .iter()
        .map(|&value| {
            let point_cfg = parameter.apply(cfg, value)?;
            Ok(SweepPoint {
                value,
                report: run_experiment(vocab, records, &point_cfg, spec)?,
            })
        })
        .collect::<Result<_>>()?;
    Ok(SweepReport { parameter, points })
}
