use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffmath::{ParamSet, Tensor};
use crate::error::{Error, Result};
use crate::hypergraph::{NodeSpace, NodeType, Relation};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Shared feature dimension of every node type.
    pub dim: usize,
    pub layers: usize,
    /// Add the previous layer's features before the activation.
    pub residual: bool,
    pub leaky_slope: f64,
    /// Set from the run seed rather than read from configuration files.
    #[serde(skip)]
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            dim: 64,
            layers: 1,
            residual: true,
            leaky_slope: 0.01,
            init_seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::InvalidConfig("model dim must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.leaky_slope) {
            return Err(Error::InvalidConfig("leaky_slope must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Weights of one hypergraph layer.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams {
    /// Relation weights indexed by `Relation::index`.
    pub relation: [Tensor; 3],
    /// Type-specific transforms indexed by `NodeType::index`.
    pub transform: [Tensor; 4],
    pub theta: [Tensor; 4],
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    /// Layer-0 feature tables indexed by `NodeType::index`.
    pub embeddings: [Tensor; 4],
    pub layers: Vec<LayerParams>,
    /// 1 × 3d
    pub attention: Tensor,
    /// |P| × 5d
    pub out_weight: Tensor,
    /// 1 × |P|
    pub out_bias: Tensor,
}

impl ModelParams {
    /// Uniform(−1/√d, 1/√d) for every weight and embedding; zero bias.
    pub fn init(config: &ModelConfig, nodes: &NodeSpace) -> Result<Self> {
        config.validate()?;
        let d = config.dim;
        let bound = 1.0 / (d as f64).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        let mut uniform = |rows: usize, cols: usize| {
            let data = (0..rows * cols).map(|_| rng.gen_range(-bound..bound)).collect();
            Tensor::matrix(rows, cols, data).expect("consistent shape")
        };
        let embeddings = NodeType::ALL.map(|t| uniform(nodes.count(t), d));
        let layers = (0..config.layers)
            .map(|_| LayerParams {
                relation: [(); 3].map(|_| uniform(d, d)),
                transform: [(); 4].map(|_| uniform(d, d)),
                theta: [(); 4].map(|_| uniform(d, d)),
            })
            .collect();
        let attention = uniform(1, 3 * d);
        let n_pois = nodes.count(NodeType::Poi);
        let out_weight = uniform(n_pois, 5 * d);
        Ok(ModelParams {
            config: config.clone(),
            embeddings,
            layers,
            attention,
            out_weight,
            out_bias: Tensor::zeros(&[1, n_pois]),
        })
    }

    pub fn dim(&self) -> usize {
        self.config.dim
    }

    pub fn poi_count(&self) -> usize {
        self.out_bias.len()
    }

    /// Stable tensor names, in `tensors()` order.
    pub fn names(&self) -> Vec<String> {
        let mut names: Vec<String> = NodeType::ALL.iter().map(|t| format!("embedding.{}", t.name())).collect();
        for l in 0..self.layers.len() {
            for r in Relation::ALL {
                names.push(format!("layer{l}.relation.{}", r.name()));
            }
            for t in NodeType::ALL {
                names.push(format!("layer{l}.transform.{}", t.name()));
            }
            for t in NodeType::ALL {
                names.push(format!("layer{l}.theta.{}", t.name()));
            }
        }
        names.extend(["attention".into(), "output.weight".into(), "output.bias".into()]);
        names
    }

    /// Rebuilds parameters from named tensors, checking names and shapes against `config`.
    pub fn from_named(config: &ModelConfig, nodes: &NodeSpace, named: Vec<(String, Tensor)>) -> Result<Self> {
        let mut params = ModelParams::init(config, nodes)?;
        let names = params.names();
        if names.len() != named.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors for this model configuration, found {}",
                names.len(),
                named.len()
            )));
        }
        for ((slot, expected), (name, tensor)) in params.tensors_mut().into_iter().zip(&names).zip(named) {
            if &name != expected || slot.shape() != tensor.shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor {name} {:?} does not match expected {expected} {:?}",
                    tensor.shape(),
                    slot.shape()
                )));
            }
            *slot = tensor;
        }
        Ok(params)
    }
}

impl ParamSet for ModelParams {
    fn tensors(&self) -> Vec<&Tensor> {
        let mut out: Vec<&Tensor> = self.embeddings.iter().collect();
        for layer in &self.layers {
            out.extend(layer.relation.iter());
            out.extend(layer.transform.iter());
            out.extend(layer.theta.iter());
        }
        out.extend([&self.attention, &self.out_weight, &self.out_bias]);
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = self.embeddings.iter_mut().collect();
        for layer in &mut self.layers {
            out.extend(layer.relation.iter_mut());
            out.extend(layer.transform.iter_mut());
            out.extend(layer.theta.iter_mut());
        }
        out.extend([&mut self.attention, &mut self.out_weight, &mut self.out_bias]);
        out
    }
}
