use super::*;
use crate::data::{CheckinRecord, Instance};
use crate::diffmath::{ParamSet, Tensor};
use crate::error::Error;
use crate::hypergraph::{normalize, IncidenceMatrix, NodeSpace, NodeType, PropagationOperator, Relation, RelationOperators};

fn rec(user: usize, poi: usize, category: usize, time_slot: usize) -> CheckinRecord {
    CheckinRecord {
        user,
        poi,
        category,
        lat: 0.0,
        lon: 0.0,
        timestamp: 0,
        time_slot,
        tz_offset_min: 0,
    }
}

fn inst(prefix: Vec<CheckinRecord>, target: usize) -> Instance {
    let user = prefix[0].user;
    let target = rec(user, target, 0, 0);
    Instance {
        user,
        session: 0,
        prefix,
        target,
    }
}

fn config(dim: usize, layers: usize) -> ModelConfig {
    ModelConfig {
        dim,
        layers,
        init_seed: 3,
        ..ModelConfig::default()
    }
}

/// 4 POIs, 2 users, 2 categories, 2 slots: ten nodes, every relation present.
fn small_graph() -> RelationOperators {
    let nodes = NodeSpace::new(4, 2, 2, 2);
    let p = |i| nodes.global(NodeType::Poi, i);
    let u = |i| nodes.global(NodeType::User, i);
    let c = |i| nodes.global(NodeType::Category, i);
    let t = |i| nodes.global(NodeType::Slot, i);
    let temporal = vec![vec![p(0), c(0), t(0)], vec![p(1), c(0), t(1)], vec![p(2), c(1), t(1)], vec![p(3), c(1), t(0)]];
    let spatial = vec![vec![p(0), p(1), c(0)], vec![p(2), p(3), c(1)]];
    let preference = vec![vec![u(0), c(0), p(0), p(1)], vec![u(1), c(1), p(2), p(3)], vec![u(1), c(0), p(1)]];
    let n = nodes.total();
    let op = |r, e: &[Vec<usize>]| normalize(&IncidenceMatrix::from_edges(r, n, e).unwrap());
    RelationOperators::new(nodes.clone())
        .with(op(Relation::TemporalBehavioral, &temporal))
        .with(op(Relation::SpatialFunctional, &spatial))
        .with(op(Relation::UserPreference, &preference))
}

fn small_instances() -> Vec<Instance> {
    vec![
        inst(vec![rec(0, 0, 0, 0), rec(0, 1, 0, 1)], 2),
        inst(vec![rec(1, 3, 1, 0)], 1),
        inst(vec![rec(1, 2, 1, 1), rec(1, 3, 1, 0), rec(1, 1, 0, 1)], 0),
    ]
}

fn identity(d: usize) -> Tensor {
    let mut t = Tensor::zeros(&[d, d]);
    for i in 0..d {
        t.set(i, i, 1.0);
    }
    t
}

fn softmax(xs: &[f64]) -> Vec<f64> {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = xs.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

#[test]
fn zero_layers_returns_raw_embeddings() {
    let ops = small_graph();
    let params = ModelParams::init(&config(3, 0), &ops.nodes).unwrap();
    let emb = propagate(&params, &ops).unwrap();
    assert_eq!(emb.layers.len(), 1);
    assert_eq!(emb.last(), &params.embeddings);
}

#[test]
fn zero_embeddings_stay_zero() {
    let ops = small_graph();
    let mut params = ModelParams::init(&config(3, 2), &ops.nodes).unwrap();
    for t in params.embeddings.iter_mut() {
        *t = Tensor::zeros(t.shape());
    }
    let emb = propagate(&params, &ops).unwrap();
    for table in emb.last() {
        assert!(table.data().iter().all(|&v| v == 0.0));
    }
}

#[test]
fn single_hyperedge_layer_matches_hand_expansion() {
    // One POI, one category, one slot joined by a single temporal hyperedge.
    let nodes = NodeSpace::new(1, 0, 1, 1);
    let inc = IncidenceMatrix::from_edges(Relation::TemporalBehavioral, 3, &[vec![0, 1, 2]]).unwrap();
    let ops = RelationOperators::new(nodes.clone()).with(normalize(&inc));
    let mut params = ModelParams::init(&config(1, 1), &nodes).unwrap();
    let x = [1.0, 2.0, -6.0];
    params.embeddings = [
        Tensor::matrix(1, 1, vec![x[0]]).unwrap(),
        Tensor::zeros(&[0, 1]),
        Tensor::matrix(1, 1, vec![x[1]]).unwrap(),
        Tensor::matrix(1, 1, vec![x[2]]).unwrap(),
    ];
    let layer = &mut params.layers[0];
    for w in layer.relation.iter_mut().chain(layer.transform.iter_mut()).chain(layer.theta.iter_mut()) {
        *w = identity(1);
    }
    let emb = propagate(&params, &ops).unwrap();
    // Every entry of the operator is 1/(√3 · 3 · √3) · 3 = 1/3, so each node receives the mean.
    let mean = (x[0] + x[1] + x[2]) / 3.0;
    let leaky = |v: f64| if v > 0.0 { v } else { 0.01 * v };
    let got = [
        emb.get(NodeType::Poi).item(),
        emb.get(NodeType::Category).item(),
        emb.get(NodeType::Slot).item(),
    ];
    for (g, xi) in got.iter().zip(x) {
        assert!((g - leaky(mean + xi)).abs() < 1e-12, "{g} vs {}", leaky(mean + xi));
    }
}

#[test]
fn absent_relation_matches_zero_operator() {
    let ops = small_graph();
    let params = ModelParams::init(&config(3, 1), &ops.nodes).unwrap();
    let n = ops.nodes.total();
    let without = RelationOperators::new(ops.nodes.clone())
        .with(ops.get(Relation::TemporalBehavioral).unwrap().clone())
        .with(ops.get(Relation::UserPreference).unwrap().clone());
    let zeroed = without.clone().with(PropagationOperator::zero(Relation::SpatialFunctional, n));
    let a = propagate(&params, &without).unwrap();
    let b = propagate(&params, &zeroed).unwrap();
    for (x, y) in a.last().iter().zip(b.last()) {
        assert!(x.max_abs_diff(y) < 1e-15);
    }
}

#[test]
fn singleton_prefix_takes_full_attention() {
    let ops = small_graph();
    let params = ModelParams::init(&config(2, 1), &ops.nodes).unwrap();
    let emb = propagate(&params, &ops).unwrap();
    let r = rec(0, 2, 1, 0);
    let (z, alpha) = encode_trajectory(std::slice::from_ref(&r), &emb, &params).unwrap();
    assert_eq!(alpha, vec![1.0]);
    let mut expected = emb.get(NodeType::Poi).row(2).to_vec();
    expected.extend_from_slice(emb.get(NodeType::Category).row(1));
    expected.extend_from_slice(emb.get(NodeType::Slot).row(0));
    assert_eq!(z, expected);
}

#[test]
fn zero_attention_weights_average_uniformly() {
    let ops = small_graph();
    let mut params = ModelParams::init(&config(2, 1), &ops.nodes).unwrap();
    params.attention = Tensor::zeros(params.attention.shape());
    let emb = propagate(&params, &ops).unwrap();
    let prefix = small_instances()[2].prefix.clone();
    let (_, alpha) = encode_trajectory(&prefix, &emb, &params).unwrap();
    for a in alpha {
        assert!((a - 1.0 / 3.0).abs() < 1e-15);
    }
}

#[test]
fn two_position_summary_matches_hand_combination() {
    let nodes = NodeSpace::new(2, 1, 1, 1);
    let ops = RelationOperators::new(nodes.clone());
    let mut params = ModelParams::init(&config(1, 0), &nodes).unwrap();
    params.embeddings = [
        Tensor::matrix(2, 1, vec![1.0, -1.0]).unwrap(),
        Tensor::matrix(1, 1, vec![0.0]).unwrap(),
        Tensor::matrix(1, 1, vec![0.5]).unwrap(),
        Tensor::matrix(1, 1, vec![2.0]).unwrap(),
    ];
    params.attention = Tensor::matrix(1, 3, vec![1.0, 0.0, 0.0]).unwrap();
    let emb = propagate(&params, &ops).unwrap();
    let (z, alpha) = encode_trajectory(&[rec(0, 0, 0, 0), rec(0, 1, 0, 0)], &emb, &params).unwrap();
    // Logits are the POI features 1 and −1.
    let a0 = 1.0f64.exp() / (1.0f64.exp() + (-1.0f64).exp());
    assert!((alpha[0] - a0).abs() < 1e-15);
    assert!((alpha[1] - (1.0 - a0)).abs() < 1e-15);
    let expected = [a0 * 1.0 + (1.0 - a0) * -1.0, 0.5, 2.0];
    for (g, e) in z.iter().zip(expected) {
        assert!((g - e).abs() < 1e-15);
    }
}

#[test]
fn permuting_positions_permutes_attention() {
    let ops = small_graph();
    let params = ModelParams::init(&config(3, 1), &ops.nodes).unwrap();
    let emb = propagate(&params, &ops).unwrap();
    let prefix = small_instances()[2].prefix.clone();
    let (_, alpha) = encode_trajectory(&prefix, &emb, &params).unwrap();
    let perm = [2, 0, 1];
    let permuted: Vec<_> = perm.iter().map(|&i| prefix[i].clone()).collect();
    let (_, alpha_p) = encode_trajectory(&permuted, &emb, &params).unwrap();
    for (k, &i) in perm.iter().enumerate() {
        assert!((alpha_p[k] - alpha[i]).abs() < 1e-15);
    }
    assert!((alpha.iter().sum::<f64>() - 1.0).abs() < 1e-12);
}

#[test]
fn empty_prefix_is_rejected() {
    let ops = small_graph();
    let params = ModelParams::init(&config(2, 1), &ops.nodes).unwrap();
    let emb = propagate(&params, &ops).unwrap();
    assert!(matches!(encode_trajectory(&[], &emb, &params), Err(Error::InvalidArgument(_))));
}

#[test]
fn zero_output_weights_give_bias_logits() {
    let ops = small_graph();
    let mut params = ModelParams::init(&config(2, 1), &ops.nodes).unwrap();
    params.out_weight = Tensor::zeros(params.out_weight.shape());
    params.out_bias = Tensor::matrix(1, 4, vec![0.1, -0.2, 0.3, 0.0]).unwrap();
    let emb = propagate(&params, &ops).unwrap();
    let prefix = small_instances()[0].prefix.clone();
    let (z, _) = encode_trajectory(&prefix, &emb, &params).unwrap();
    let logits = score(&z, prefix.last().unwrap(), &emb, &params).unwrap();
    assert_eq!(logits, params.out_bias.data());
}

#[test]
fn logit_shift_leaves_probabilities_and_argmax() {
    let ops = small_graph();
    let params = ModelParams::init(&config(3, 1), &ops.nodes).unwrap();
    let emb = propagate(&params, &ops).unwrap();
    let prefix = small_instances()[2].prefix.clone();
    let (z, _) = encode_trajectory(&prefix, &emb, &params).unwrap();
    let logits = score(&z, prefix.last().unwrap(), &emb, &params).unwrap();
    let shifted: Vec<f64> = logits.iter().map(|l| l + 7.5).collect();
    let (p, q) = (softmax(&logits), softmax(&shifted));
    for (a, b) in p.iter().zip(&q) {
        assert!((a - b).abs() < 1e-15);
    }
    let argmax = |v: &[f64]| (0..v.len()).max_by(|&i, &j| v[i].total_cmp(&v[j])).unwrap();
    assert_eq!(argmax(&logits), argmax(&shifted));
}

#[test]
fn three_poi_toy_probabilities() {
    let nodes = NodeSpace::new(3, 1, 1, 1);
    let ops = RelationOperators::new(nodes.clone());
    let mut params = ModelParams::init(&config(1, 0), &nodes).unwrap();
    params.embeddings = [
        Tensor::matrix(3, 1, vec![1.0, 2.0, 3.0]).unwrap(),
        Tensor::matrix(1, 1, vec![0.0]).unwrap(),
        Tensor::matrix(1, 1, vec![1.0]).unwrap(),
        Tensor::matrix(1, 1, vec![-1.0]).unwrap(),
    ];
    // u = [z_p, z_c, z_t, h_p, h_c] = [2, 1, −1, 2, 1] for the prefix (poi 1).
    params.out_weight = Tensor::matrix(
        3,
        5,
        vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.5, 0.5],
    )
    .unwrap();
    params.out_bias = Tensor::matrix(1, 3, vec![0.0, 0.25, 0.0]).unwrap();
    let emb = propagate(&params, &ops).unwrap();
    let prefix = [rec(0, 1, 0, 0)];
    let (z, _) = encode_trajectory(&prefix, &emb, &params).unwrap();
    let logits = score(&z, &prefix[0], &emb, &params).unwrap();
    let hand = [2.0, -1.0 + 0.25, 1.5];
    for (g, e) in logits.iter().zip(hand) {
        assert!((g - e).abs() < 1e-15);
    }
    let e: Vec<f64> = hand.iter().map(|v: &f64| v.exp()).collect();
    let s: f64 = e.iter().sum();
    for (p, ei) in softmax(&logits).iter().zip(&e) {
        assert!((p - ei / s).abs() < 1e-15);
    }
}

#[test]
fn inner_product_reduction() {
    let ops = small_graph();
    let mut params = ModelParams::init(&config(3, 0), &ops.nodes).unwrap();
    let d = 3;
    let ep = params.embeddings[NodeType::Poi.index()].clone();
    let mut w = Tensor::zeros(&[4, 5 * d]);
    for j in 0..4 {
        w.row_mut(j)[3 * d..4 * d].copy_from_slice(ep.row(j));
    }
    params.out_weight = w;
    let emb = propagate(&params, &ops).unwrap();
    let prefix = small_instances()[0].prefix.clone();
    let (z, _) = encode_trajectory(&prefix, &emb, &params).unwrap();
    let last = prefix.last().unwrap().poi;
    let logits = score(&z, prefix.last().unwrap(), &emb, &params).unwrap();
    for j in 0..4 {
        let dot: f64 = ep.row(last).iter().zip(ep.row(j)).map(|(a, b)| a * b).sum();
        assert!((logits[j] - dot).abs() < 1e-15);
    }
}

#[test]
fn uniform_logits_give_log_poi_count() {
    let ops = small_graph();
    let mut params = ModelParams::init(&config(2, 1), &ops.nodes).unwrap();
    params.out_weight = Tensor::zeros(params.out_weight.shape());
    let loss = task_loss(&params, &ops, &small_instances()).unwrap();
    assert!((loss - 4f64.ln()).abs() < 1e-15);
}

#[test]
fn confident_correct_logits_drive_loss_to_zero() {
    let ops = small_graph();
    let mut params = ModelParams::init(&config(2, 1), &ops.nodes).unwrap();
    params.out_weight = Tensor::zeros(params.out_weight.shape());
    params.out_bias = Tensor::matrix(1, 4, vec![0.0, 0.0, 60.0, 0.0]).unwrap();
    let loss = task_loss(&params, &ops, &small_instances()[..1]).unwrap();
    assert!(loss < 1e-24);
}

#[test]
fn loss_is_mean_of_instance_losses() {
    let ops = small_graph();
    let params = ModelParams::init(&config(3, 1), &ops.nodes).unwrap();
    let instances = &small_instances()[..2];
    let emb = propagate(&params, &ops).unwrap();
    let per: Vec<f64> = instances
        .iter()
        .map(|i| {
            let (z, _) = encode_trajectory(&i.prefix, &emb, &params).unwrap();
            let p = softmax(&score(&z, i.last(), &emb, &params).unwrap());
            -p[i.next_poi()].ln()
        })
        .collect();
    let loss = task_loss(&params, &ops, instances).unwrap();
    assert!((loss - (per[0] + per[1]) / 2.0).abs() < 1e-12);
}

#[test]
fn batched_scores_match_single_instance_path() {
    let ops = small_graph();
    let params = ModelParams::init(&config(3, 2), &ops.nodes).unwrap();
    let instances = small_instances();
    let batched = score_instances(&params, &ops, &instances).unwrap();
    let emb = propagate(&params, &ops).unwrap();
    for (b, i) in instances.iter().enumerate() {
        let (z, _) = encode_trajectory(&i.prefix, &emb, &params).unwrap();
        let logits = score(&z, i.last(), &emb, &params).unwrap();
        for (g, e) in batched.row(b).iter().zip(&logits) {
            assert!((g - e).abs() < 1e-12);
        }
    }
}

#[test]
fn empty_instance_list_is_rejected() {
    let ops = small_graph();
    let params = ModelParams::init(&config(2, 1), &ops.nodes).unwrap();
    assert!(matches!(task_loss(&params, &ops, &[]), Err(Error::EmptyInput)));
}

#[test]
fn out_of_vocabulary_instance_is_rejected() {
    let ops = small_graph();
    let params = ModelParams::init(&config(2, 1), &ops.nodes).unwrap();
    let bad = vec![inst(vec![rec(0, 9, 0, 0)], 1)];
    assert!(matches!(task_loss(&params, &ops, &bad), Err(Error::InvalidArgument(_))));
}

#[test]
fn full_model_gradient_matches_central_differences() {
    let ops = small_graph();
    let params = ModelParams::init(&config(4, 1), &ops.nodes).unwrap();
    let instances = small_instances();
    let (_, grads) = task_loss_and_grad(&params, &ops, &instances).unwrap();
    let eps = 1e-5;
    let names = params.names();
    for (k, g) in grads.iter().enumerate() {
        let mut worst: f64 = 0.0;
        for i in 0..g.len() {
            let mut plus = params.clone();
            plus.tensors_mut()[k].data_mut()[i] += eps;
            let mut minus = params.clone();
            minus.tensors_mut()[k].data_mut()[i] -= eps;
            let numeric = (task_loss(&plus, &ops, &instances).unwrap() - task_loss(&minus, &ops, &instances).unwrap())
                / (2.0 * eps);
            let a = g.data()[i];
            worst = worst.max((a - numeric).abs() / a.abs().max(1.0));
        }
        assert!(worst < 1e-4, "{}: relative error {worst}", names[k]);
    }
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let ops = small_graph();
    let mut params = ModelParams::init(&config(3, 2), &ops.nodes).unwrap();
    round_to_storage(&mut params);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    save_checkpoint(&path, &params).unwrap();
    let loaded = load_checkpoint(&path, &params.config, &ops.nodes).unwrap();
    for (a, b) in params.tensors().iter().zip(loaded.tensors()) {
        assert_eq!(a.shape(), b.shape());
        assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
    let again = dir.path().join("again.ckpt");
    save_checkpoint(&again, &loaded).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&again).unwrap());
    let bytes = std::fs::read(&path).unwrap();
    assert_eq!(&bytes[..4], b"HMAN");
    assert_eq!(u16::from_le_bytes([bytes[4], bytes[5]]), FORMAT_VERSION);
}

#[test]
fn checkpoint_rejects_mismatched_config_and_corruption() {
    let ops = small_graph();
    let params = ModelParams::init(&config(3, 1), &ops.nodes).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    save_checkpoint(&path, &params).unwrap();
    assert!(matches!(load_checkpoint(&path, &config(4, 1), &ops.nodes), Err(Error::Checkpoint(_))));
    assert!(matches!(load_checkpoint(&path, &config(3, 2), &ops.nodes), Err(Error::Checkpoint(_))));
    let mut bytes = std::fs::read(&path).unwrap();
    bytes.truncate(bytes.len() - 1);
    assert!(matches!(decode_tensors(&bytes), Err(Error::Checkpoint(_))));
    bytes[0] = b'X';
    assert!(matches!(decode_tensors(&bytes), Err(Error::Checkpoint(_))));
}
