use std::collections::BTreeMap;

use crate::data::{CheckinRecord, MetaTask};
use crate::diffmath::sigmoid;
use crate::error::{Error, Result};

/// Shannon entropy (nats) of a user's category-visit distribution.
pub fn behavior_entropy(records: &[CheckinRecord]) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::InvalidArgument("behavior entropy of an empty record list".into()));
    }
    let mut counts = BTreeMap::<usize, usize>::new();
    for r in records {
        *counts.entry(r.category).or_default() += 1;
    }
    let n = records.len() as f64;
    let h: f64 = counts
        .values()
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum();
    Ok(h.max(0.0))
}

/// `α_0 · sigmoid(β_ent · H)`
pub fn adaptive_rate(entropy: f64, alpha0: f64, beta_ent: f64) -> f64 {
    alpha0 * sigmoid(beta_ent * entropy)
}

/// Sets each task's inner rate from its entropy, or to `fixed` when given.
pub fn assign_rates(tasks: &mut [MetaTask], alpha0: f64, beta_ent: f64, fixed: Option<f64>) {
    for t in tasks {
        t.inner_rate = fixed.unwrap_or_else(|| adaptive_rate(t.entropy, alpha0, beta_ent));
    }
}
