//! Heterogeneous check-in hypergraph: three hyperedge families over
//! POI, user, category and time-slot nodes, and their normalized
//! propagation operators.

mod incidence;
mod nodes;
mod propagation;
mod spatial;

pub use incidence::{
    build_preference_edges, build_spatial_edges, build_temporal_edges, IncidenceMatrix, Relation,
};
pub use nodes::{NodeSpace, NodeType};
pub use propagation::{normalize, PropagationOperator};
pub use spatial::{haversine_km, SpatialGridIndex, EARTH_RADIUS_KM};

use crate::data::{CheckinRecord, Vocab};
use crate::error::Result;

/// The three incidence matrices built over one node space.
#[derive(Clone, Debug)]
pub struct CheckinHypergraph {
    pub nodes: NodeSpace,
    pub temporal: IncidenceMatrix,
    pub spatial: IncidenceMatrix,
    pub preference: IncidenceMatrix,
}

impl CheckinHypergraph {
    /// Builds all three families; `records` are the check-ins the graph may see.
    pub fn build(vocab: &Vocab, records: &[CheckinRecord], delta_km: f64) -> Result<Self> {
        let nodes = NodeSpace::from_vocab(vocab);
        let ((temporal, preference), spatial) = rayon::join(
            || {
                rayon::join(
                    || build_temporal_edges(records, &nodes),
                    || build_preference_edges(records, &nodes),
                )
            },
            || -> Result<IncidenceMatrix> {
                let index = SpatialGridIndex::build(&vocab.poi_coords, delta_km)?;
                build_spatial_edges(vocab, &nodes, delta_km, &index)
            },
        );
        Ok(CheckinHypergraph {
            nodes,
            temporal,
            spatial: spatial?,
            preference,
        })
    }

    pub fn incidence(&self, r: Relation) -> &IncidenceMatrix {
        match r {
            Relation::TemporalBehavioral => &self.temporal,
            Relation::SpatialFunctional => &self.spatial,
            Relation::UserPreference => &self.preference,
        }
    }

    /// Normalized operators; relations not in `keep` are left out.
    pub fn operators(&self, keep: &[Relation]) -> RelationOperators {
        let mut ops = RelationOperators {
            nodes: self.nodes.clone(),
            by_relation: [None, None, None],
        };
        for &r in keep {
            ops.by_relation[r.index()] = Some(normalize(self.incidence(r)));
        }
        ops
    }
}

/// Propagation operators shared read-only by every forward pass.
#[derive(Clone, Debug)]
pub struct RelationOperators {
    pub nodes: NodeSpace,
    by_relation: [Option<PropagationOperator>; 3],
}

impl RelationOperators {
    pub fn new(nodes: NodeSpace) -> Self {
        RelationOperators {
            nodes,
            by_relation: [None, None, None],
        }
    }

    pub fn with(mut self, op: PropagationOperator) -> Self {
        let r = op.relation();
        self.by_relation[r.index()] = Some(op);
        self
    }

    pub fn get(&self, r: Relation) -> Option<&PropagationOperator> {
        self.by_relation[r.index()].as_ref()
    }

    pub fn present(&self) -> impl Iterator<Item = &PropagationOperator> {
        self.by_relation.iter().flatten()
    }
}
