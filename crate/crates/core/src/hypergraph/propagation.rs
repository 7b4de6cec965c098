use super::incidence::{IncidenceMatrix, Relation};
use crate::diffmath::CsrMatrix;

/// `A_r = D_v^{-1/2} H D_e^{-1} Hᵀ D_v^{-1/2}` with zero rows and columns
/// for isolated nodes.
#[derive(Clone, Debug)]
pub struct PropagationOperator {
    relation: Relation,
    matrix: CsrMatrix,
    node_degree: Vec<f64>,
    edge_degree: Vec<f64>,
}

fn inv_sqrt_or_zero(d: f64) -> f64 {
    if d > 0.0 {
        1.0 / d.sqrt()
    } else {
        0.0
    }
}

pub fn normalize(h: &IncidenceMatrix) -> PropagationOperator {
    let n = h.n_nodes();
    let node_degree = h.node_degrees();
    let edge_degree = h.edge_degrees();
    let scale: Vec<f64> = node_degree.iter().map(|&d| inv_sqrt_or_zero(d)).collect();

    // node -> incident edges, in increasing edge order
    let mut incident: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (e, edge) in h.edges().enumerate() {
        for &v in edge {
            incident[v].push(e);
        }
    }

    let mut indptr = Vec::with_capacity(n + 1);
    indptr.push(0);
    let mut indices = Vec::new();
    let mut values = Vec::new();
    let mut acc = vec![0.0; n];
    let mut touched: Vec<usize> = Vec::new();
    for i in 0..n {
        for &e in &incident[i] {
            let w = 1.0 / edge_degree[e];
            for &j in h.edge(e) {
                if acc[j] == 0.0 {
                    touched.push(j);
                }
                acc[j] += w;
            }
        }
        touched.sort_unstable();
        for &j in &touched {
            indices.push(j);
            values.push(acc[j] * (scale[i] * scale[j]));
            acc[j] = 0.0;
        }
        touched.clear();
        indptr.push(indices.len());
    }
    let matrix = CsrMatrix::from_parts(n, n, indptr, indices, values)
        .and_then(CsrMatrix::into_symmetric)
        .expect("normalized hypergraph operators are symmetric by construction");
    PropagationOperator {
        relation: h.relation(),
        matrix,
        node_degree,
        edge_degree,
    }
}

impl PropagationOperator {
    /// An all-zero operator over `n` nodes.
    pub fn zero(relation: Relation, n: usize) -> Self {
        PropagationOperator {
            relation,
            matrix: CsrMatrix::zeros(n, n),
            node_degree: vec![0.0; n],
            edge_degree: Vec::new(),
        }
    }

    pub fn relation(&self) -> Relation {
        self.relation
    }

    pub fn matrix(&self) -> &CsrMatrix {
        &self.matrix
    }

    pub fn node_degree(&self) -> &[f64] {
        &self.node_degree
    }

    pub fn edge_degree(&self) -> &[f64] {
        &self.edge_degree
    }

    pub fn n_nodes(&self) -> usize {
        self.matrix.n_rows()
    }
}
