pub mod config;
pub mod data;
pub mod diffmath;
pub mod error;
pub mod eval;
pub mod hypergraph;
pub mod metalearn;
pub mod model;

pub use config::RunConfig;
pub use data::{CheckinRecord, Instance, MetaTask, SynthConfig, Trajectory, Vocab};
pub use diffmath::{ParamSet, Tensor};
pub use eval::{AblationSpec, ExperimentReport, MetricsReport, SweepParameter, SweepReport, Variant};
pub use hypergraph::{CheckinHypergraph, NodeSpace, Relation, RelationOperators};
pub use metalearn::{EpochLog, MetaConfig};
pub use model::{ModelConfig, ModelParams};
pub use error::{Error, Result};
