use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::nodes::{NodeSpace, NodeType};
use super::spatial::{haversine_km, SpatialGridIndex};
use crate::data::{CheckinRecord, Vocab};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Relation {
    TemporalBehavioral,
    SpatialFunctional,
    UserPreference,
}

impl Relation {
    pub const ALL: [Relation; 3] = [
        Relation::TemporalBehavioral,
        Relation::SpatialFunctional,
        Relation::UserPreference,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Relation::TemporalBehavioral => "temporal-behavioral",
            Relation::SpatialFunctional => "spatial-functional",
            Relation::UserPreference => "user-preference",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Binary node × hyperedge matrix stored column-compressed; each column
/// lists its member nodes in increasing global order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IncidenceMatrix {
    relation: Relation,
    n_nodes: usize,
    col_ptr: Vec<usize>,
    members: Vec<usize>,
}

impl IncidenceMatrix {
    pub fn from_edges(relation: Relation, n_nodes: usize, edges: &[Vec<usize>]) -> Result<Self> {
        let mut col_ptr = Vec::with_capacity(edges.len() + 1);
        col_ptr.push(0);
        let mut members = Vec::new();
        for (e, edge) in edges.iter().enumerate() {
            let mut sorted = edge.clone();
            sorted.sort_unstable();
            sorted.dedup();
            if sorted.len() < 2 {
                return Err(Error::InvalidArgument(format!("{relation} hyperedge {e} has fewer than 2 nodes")));
            }
            if sorted.last().is_some_and(|&n| n >= n_nodes) {
                return Err(Error::InvalidArgument(format!("{relation} hyperedge {e} references a missing node")));
            }
            members.extend(sorted);
            col_ptr.push(members.len());
        }
        Ok(IncidenceMatrix {
            relation,
            n_nodes,
            col_ptr,
            members,
        })
    }

    pub fn empty(relation: Relation, n_nodes: usize) -> Self {
        IncidenceMatrix {
            relation,
            n_nodes,
            col_ptr: vec![0],
            members: Vec::new(),
        }
    }

    pub fn relation(&self) -> Relation {
        self.relation
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn n_edges(&self) -> usize {
        self.col_ptr.len() - 1
    }

    pub fn nnz(&self) -> usize {
        self.members.len()
    }

    pub fn edge(&self, e: usize) -> &[usize] {
        &self.members[self.col_ptr[e]..self.col_ptr[e + 1]]
    }

    pub fn edges(&self) -> impl Iterator<Item = &[usize]> {
        (0..self.n_edges()).map(|e| self.edge(e))
    }

    pub fn node_degrees(&self) -> Vec<f64> {
        let mut deg = vec![0.0; self.n_nodes];
        for &n in &self.members {
            deg[n] += 1.0;
        }
        deg
    }

    pub fn edge_degrees(&self) -> Vec<f64> {
        self.edges().map(|e| e.len() as f64).collect()
    }

    /// Checks the per-relation column arity rules.
    pub fn check_arity(&self, nodes: &NodeSpace) -> Result<()> {
        for (e, edge) in self.edges().enumerate() {
            let mut per_type = [0usize; 4];
            for &n in edge {
                per_type[nodes.type_of(n).index()] += 1;
            }
            let [p, u, c, t] = per_type;
            let ok = match self.relation {
                Relation::TemporalBehavioral => p == 1 && c == 1 && t == 1 && u == 0,
                Relation::SpatialFunctional => p == 2 && c == 1 && u == 0 && t == 0,
                Relation::UserPreference => u == 1 && c == 1 && p >= 1 && t == 0,
            };
            if !ok {
                return Err(Error::InvalidArgument(format!(
                    "{} hyperedge {e} has arity p={p} u={u} c={c} t={t}",
                    self.relation
                )));
            }
        }
        Ok(())
    }

    /// Sorted `relation,row,col` triples.
    pub fn coordinate_list(&self) -> Vec<(usize, usize)> {
        let mut coo: Vec<(usize, usize)> = self
            .edges()
            .enumerate()
            .flat_map(|(e, edge)| edge.iter().map(move |&n| (n, e)))
            .collect();
        coo.sort_unstable();
        coo
    }

    pub fn write_coordinate_list(&self, out: &mut impl Write) -> std::io::Result<()> {
        for (row, col) in self.coordinate_list() {
            writeln!(out, "{},{},{}", self.relation, row, col)?;
        }
        Ok(())
    }
}

/// One hyperedge ⟨p, c, t⟩ per distinct observed triple.
pub fn build_temporal_edges(records: &[CheckinRecord], nodes: &NodeSpace) -> IncidenceMatrix {
    let triples: BTreeSet<(usize, usize, usize)> =
        records.iter().map(|r| (r.poi, r.category, r.time_slot)).collect();
    let edges: Vec<Vec<usize>> = triples
        .into_iter()
        .map(|(p, c, t)| {
            vec![
                nodes.global(NodeType::Poi, p),
                nodes.global(NodeType::Category, c),
                nodes.global(NodeType::Slot, t),
            ]
        })
        .collect();
    IncidenceMatrix::from_edges(Relation::TemporalBehavioral, nodes.total(), &edges)
        .expect("triples span three distinct node blocks")
}

/// One hyperedge ⟨p_i, p_j, c⟩ per unordered same-category pair within `delta_km`.
pub fn build_spatial_edges(
    vocab: &Vocab,
    nodes: &NodeSpace,
    delta_km: f64,
    index: &SpatialGridIndex,
) -> Result<IncidenceMatrix> {
    if !(delta_km > 0.0) {
        return Err(Error::InvalidArgument(format!("distance threshold {delta_km} km must be positive")));
    }
    if index.cell_km() < delta_km || index.len() != vocab.poi_count() {
        return Err(Error::InvalidArgument(format!(
            "grid index (cell {} km, {} points) cannot answer {delta_km} km queries over {} POIs",
            index.cell_km(),
            index.len(),
            vocab.poi_count()
        )));
    }
    let edges: Vec<Vec<usize>> = index
        .candidate_pairs()
        .into_iter()
        .filter(|&(i, j)| {
            vocab.poi_category[i] == vocab.poi_category[j]
                && haversine_km(vocab.poi_coords[i], vocab.poi_coords[j]) <= delta_km
        })
        .map(|(i, j)| {
            vec![
                nodes.global(NodeType::Poi, i),
                nodes.global(NodeType::Poi, j),
                nodes.global(NodeType::Category, vocab.poi_category[i]),
            ]
        })
        .collect();
    IncidenceMatrix::from_edges(Relation::SpatialFunctional, nodes.total(), &edges)
}

/// One hyperedge ⟨u, p_1..p_n, c⟩ per (user, category) with the user's distinct POIs of that category.
pub fn build_preference_edges(records: &[CheckinRecord], nodes: &NodeSpace) -> IncidenceMatrix {
    let mut groups: BTreeMap<(usize, usize), BTreeSet<usize>> = BTreeMap::new();
    for r in records {
        groups.entry((r.user, r.category)).or_default().insert(r.poi);
    }
    let edges: Vec<Vec<usize>> = groups
        .into_iter()
        .map(|((u, c), pois)| {
            let mut edge: Vec<usize> = pois.into_iter().map(|p| nodes.global(NodeType::Poi, p)).collect();
            edge.push(nodes.global(NodeType::User, u));
            edge.push(nodes.global(NodeType::Category, c));
            edge
        })
        .collect();
    IncidenceMatrix::from_edges(Relation::UserPreference, nodes.total(), &edges)
        .expect("preference edges hold a user, a category and at least one POI")
}
