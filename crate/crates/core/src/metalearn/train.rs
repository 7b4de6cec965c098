use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::MetaTask;
use crate::diffmath::ParamSet;
use crate::error::{Error, Result};
use crate::metalearn::adapt::{inner_adapt, outer_step, AdaptResult, Objective};
use crate::metalearn::entropy::assign_rates;
use crate::metalearn::MetaConfig;

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_support_loss_pre: f64,
    pub mean_support_loss_post: f64,
    pub mean_query_loss: f64,
    pub mean_alpha_u: f64,
    pub wall_ms: u64,
}

#[derive(Clone, Debug)]
pub struct TrainOutput<P> {
    pub params: P,
    pub log: Vec<EpochLog>,
}

/// Meta-trains `theta` on `tasks`. Inner rates are assigned from the config
/// before the first epoch; `on_epoch` sees every log line as it is produced.
pub fn train<P, O>(
    theta: P,
    tasks: &[MetaTask],
    cfg: &MetaConfig,
    objective: &O,
    mut on_epoch: impl FnMut(&EpochLog) -> Result<()>,
) -> Result<TrainOutput<P>>
where
    P: ParamSet,
    O: Objective<P>,
{
    cfg.validate()?;
    if cfg.epochs == 0 {
        return Ok(TrainOutput { params: theta, log: Vec::new() });
    }
    if tasks.is_empty() {
        return Err(Error::InvalidArgument("no training tasks".into()));
    }
    let mut tasks = tasks.to_vec();
    assign_rates(&mut tasks, cfg.alpha0, cfg.beta_ent, cfg.fixed_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..tasks.len()).collect();
    let mut theta = theta;
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut initial_query: Option<f64> = None;
    for epoch in 0..cfg.epochs {
        let start = Instant::now();
        order.shuffle(&mut rng);
        let (mut pre, mut post, mut query, mut alpha) = (0.0, 0.0, 0.0, 0.0);
        for batch in order.chunks(cfg.meta_batch) {
            let results: Vec<AdaptResult<P>> = batch
                .par_iter()
                .map(|&i| inner_adapt(&theta, &tasks[i], cfg, objective))
                .collect::<Result<_>>()?;
            for r in &results {
                pre += r.support_loss_pre;
                post += r.support_loss_post;
                query += r.query_loss;
                alpha += r.rate;
            }
            theta = outer_step(&theta, &results, cfg.beta_outer)?;
        }
        let n = tasks.len() as f64;
        let entry = EpochLog {
            epoch,
            mean_support_loss_pre: pre / n,
            mean_support_loss_post: post / n,
            mean_query_loss: query / n,
            mean_alpha_u: alpha / n,
            wall_ms: start.elapsed().as_millis() as u64,
        };
        on_epoch(&entry)?;
        let limit = cfg.divergence_factor * *initial_query.get_or_insert(entry.mean_query_loss);
        if !entry.mean_query_loss.is_finite() || entry.mean_query_loss > limit {
            return Err(Error::Divergence {
                epoch,
                loss: entry.mean_query_loss,
                limit,
            });
        }
        log.push(entry);
    }
    Ok(TrainOutput { params: theta, log })
}
