//! Run configuration: every data, graph, model, meta-learning and evaluation
//! setting, loadable from TOML with `key=value` overrides.

use serde::{Deserialize, Serialize};

use crate::data::{SynthConfig, TimeSlots};
use crate::error::{Error, Result};
use crate::metalearn::MetaConfig;
use crate::model::ModelConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub support_fraction: f64,
    pub local_time: bool,
    pub slot_count: usize,
    pub split_weekend: bool,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            support_fraction: 0.8,
            local_time: false,
            slot_count: 48,
            split_weekend: true,
        }
    }
}

impl DataConfig {
    pub fn time_slots(&self) -> Result<TimeSlots> {
        TimeSlots::new(self.slot_count, self.split_weekend)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraphConfig {
    pub delta_km: f64,
}

impl Default for GraphConfig {
    fn default() -> Self {
        GraphConfig { delta_km: 1.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub ks: Vec<usize>,
    pub test_fraction: f64,
    pub repeats: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            ks: vec![5, 10],
            test_fraction: 0.2,
            repeats: 10,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Base seed; model initialization, task shuffling and the user split derive from it.
    pub seed: u64,
    pub data: DataConfig,
    pub graph: GraphConfig,
    pub model: ModelConfig,
    pub meta: MetaConfig,
    pub eval: EvalConfig,
    pub synth: SynthConfig,
}

/// Documentation of every configuration key: (key, description).
pub const KEY_DOCS: &[(&str, &str)] = &[
    ("seed", "base seed for initialization, task order and user split"),
    ("data.support_fraction", "chronological share of each user's instances used as support"),
    ("data.local_time", "split sessions and slots on local rather than UTC days"),
    ("data.slot_count", "number of time slots"),
    ("data.split_weekend", "separate weekday and weekend slots"),
    ("graph.delta_km", "distance threshold for spatial hyperedges"),
    ("model.dim", "feature dimension shared by all node types"),
    ("model.layers", "number of hypergraph layers"),
    ("model.residual", "add the previous layer's features before the activation"),
    ("model.leaky_slope", "negative slope of the activation"),
    ("meta.alpha0", "base inner-loop learning rate"),
    ("meta.beta_ent", "entropy sensitivity of the inner rate"),
    ("meta.beta_outer", "outer-loop learning rate"),
    ("meta.inner_steps", "gradient steps per inner adaptation"),
    ("meta.meta_batch", "tasks per outer update"),
    ("meta.epochs", "passes over the training tasks"),
    ("meta.clip_norm", "global-norm cap on every task gradient"),
    ("meta.fixed_rate", "if set, use this inner rate for every user (unset by default)"),
    ("meta.divergence_factor", "abort when the query loss exceeds this multiple of its first value"),
    ("eval.ks", "ranking cutoffs"),
    ("eval.test_fraction", "share of users held out for cold-start evaluation"),
    ("eval.repeats", "seeded repetitions per experiment"),
    ("synth.n_users", "synthetic users"),
    ("synth.n_pois", "synthetic POIs"),
    ("synth.n_categories", "synthetic categories"),
    ("synth.grid_extent_km", "side of the square POIs are placed on"),
    ("synth.fraction_routine", "share of low-diversity users"),
    ("synth.routine_category_count", "categories visited by a routine user"),
    ("synth.explorer_category_count", "categories visited by an explorer"),
    ("synth.days_per_user", "days of activity per user"),
    ("synth.min_checkins_per_day", "fewest check-ins on an active day"),
    ("synth.max_checkins_per_day", "most check-ins on an active day"),
    ("synth.nearest_k", "candidate POIs per category around the current position"),
    ("synth.choice_noise", "probability of a uniformly random POI of the chosen category"),
    ("synth.hour_jitter", "standard deviation of visit hours around the category's hour"),
    ("synth.uniform_choice", "pick every POI uniformly at random"),
    ("synth.origin_lat", "latitude of the grid corner"),
    ("synth.origin_lon", "longitude of the grid corner"),
    ("synth.seed", "generator seed"),
];

fn flatten(prefix: &str, value: &toml::Value, out: &mut Vec<(String, String)>) {
    match value {
        toml::Value::Table(t) => {
            for (k, v) in t {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, v, out);
            }
        }
        other => out.push((prefix.to_string(), other.to_string())),
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::InvalidConfig(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parses `text` (possibly empty), then applies `key=value` overrides in order.
    pub fn from_toml_with_overrides(text: &str, overrides: &[String]) -> Result<Self> {
        let cfg = Self::apply_overrides(text, overrides)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Like `from_toml_with_overrides` without validating value ranges.
    pub fn apply_overrides(text: &str, overrides: &[String]) -> Result<Self> {
        let mut root: toml::Table = toml::from_str(text).map_err(|e| Error::InvalidConfig(e.message().to_string()))?;
        for o in overrides {
            let (key, raw) = o
                .split_once('=')
                .ok_or_else(|| Error::InvalidConfig(format!("override `{o}` is not key=value")))?;
            let value = parse_value(raw.trim());
            let path: Vec<&str> = key.trim().split('.').collect();
            let mut table = &mut root;
            for part in &path[..path.len() - 1] {
                table = table
                    .entry(part.to_string())
                    .or_insert_with(|| toml::Value::Table(toml::Table::new()))
                    .as_table_mut()
                    .ok_or_else(|| Error::InvalidConfig(format!("`{key}` does not name a setting")))?;
            }
            table.insert(path[path.len() - 1].to_string(), value);
        }
        let cfg: RunConfig = toml::Value::Table(root)
            .try_into()
            .map_err(|e: toml::de::Error| Error::InvalidConfig(e.message().to_string()))?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    /// Fully resolved `(key, value)` pairs; keys without a value are omitted.
    pub fn resolved(&self) -> Vec<(String, String)> {
        let value = toml::Value::try_from(self).expect("configuration serializes");
        let mut out = Vec::new();
        flatten("", &value, &mut out);
        out
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.data;
        if !(d.support_fraction > 0.0 && d.support_fraction < 1.0) {
            return Err(Error::InvalidConfig("data.support_fraction must lie in (0, 1)".into()));
        }
        d.time_slots()?;
        if !(self.graph.delta_km > 0.0 && self.graph.delta_km.is_finite()) {
            return Err(Error::InvalidConfig("graph.delta_km must be positive".into()));
        }
        self.model.validate()?;
        self.meta.validate()?;
        let e = &self.eval;
        if e.ks.is_empty() || e.ks.contains(&0) {
            return Err(Error::InvalidConfig("eval.ks must be a non-empty list of positive cutoffs".into()));
        }
        if !(e.test_fraction > 0.0 && e.test_fraction < 1.0) {
            return Err(Error::InvalidConfig("eval.test_fraction must lie in (0, 1)".into()));
        }
        if e.repeats == 0 {
            return Err(Error::InvalidConfig("eval.repeats must be at least 1".into()));
        }
        self.synth.validate()
    }

    /// Model settings with the initialization seed derived from `seed`.
    pub fn model_for_seed(&self, seed: u64) -> ModelConfig {
        ModelConfig {
            init_seed: seed,
            ..self.model.clone()
        }
    }

    pub fn meta_for_seed(&self, seed: u64) -> MetaConfig {
        MetaConfig {
            seed,
            ..self.meta.clone()
        }
    }
}

fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}
