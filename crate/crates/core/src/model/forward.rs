use crate::data::{CheckinRecord, Instance};
use crate::diffmath::{attention_weights, ParamSet, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::hypergraph::{NodeType, RelationOperators};
use crate::model::params::ModelParams;

/// Per-type feature tables after every layer; `layers[0]` holds the raw embeddings.
#[derive(Clone, Debug, PartialEq)]
pub struct NodeEmbeddings {
    pub layers: Vec<[Tensor; 4]>,
}

impl NodeEmbeddings {
    pub fn last(&self) -> &[Tensor; 4] {
        self.layers.last().expect("at least the input layer")
    }

    pub fn get(&self, t: NodeType) -> &Tensor {
        &self.last()[t.index()]
    }
}

/// Tape handles of the leaves holding each parameter tensor, in `tensors()` order.
pub(crate) struct BoundParams {
    pub all: Vec<Var>,
}

impl BoundParams {
    pub fn bind(tape: &mut Tape<'_>, params: &ModelParams) -> Result<Self> {
        let all = params
            .tensors()
            .into_iter()
            .map(|t| tape.leaf(t.clone()))
            .collect::<Result<Vec<_>>>()?;
        Ok(BoundParams { all })
    }

    fn embedding(&self, t: NodeType) -> Var {
        self.all[t.index()]
    }

    fn layer_base(l: usize) -> usize {
        4 + 11 * l
    }

    fn relation(&self, l: usize, r: usize) -> Var {
        self.all[Self::layer_base(l) + r]
    }

    fn transform(&self, l: usize, t: NodeType) -> Var {
        self.all[Self::layer_base(l) + 3 + t.index()]
    }

    fn theta(&self, l: usize, t: NodeType) -> Var {
        self.all[Self::layer_base(l) + 7 + t.index()]
    }

    fn tail(&self, back: usize) -> Var {
        self.all[self.all.len() - back]
    }

    fn attention(&self) -> Var {
        self.tail(3)
    }

    fn out_weight(&self) -> Var {
        self.tail(2)
    }

    fn out_bias(&self) -> Var {
        self.tail(1)
    }
}

fn check_nodes(params: &ModelParams, ops: &RelationOperators) -> Result<()> {
    for t in NodeType::ALL {
        let table = &params.embeddings[t.index()];
        if table.rows() != ops.nodes.count(t) {
            return Err(Error::ShapeMismatch {
                op: "propagate",
                left: table.shape().to_vec(),
                right: vec![ops.nodes.count(t), params.dim()],
            });
        }
    }
    Ok(())
}

/// Records every layer on the tape and returns the per-type handles of the final layer.
pub(crate) fn propagate_on_tape<'a>(
    tape: &mut Tape<'a>,
    params: &ModelParams,
    ops: &'a RelationOperators,
    bound: &BoundParams,
    keep_layers: Option<&mut Vec<[Var; 4]>>,
) -> Result<[Var; 4]> {
    check_nodes(params, ops)?;
    let nodes = &ops.nodes;
    let slope = params.config.leaky_slope;
    let mut h = NodeType::ALL.map(|t| bound.embedding(t));
    let mut history = Vec::new();
    history.push(h);
    for l in 0..params.layers.len() {
        let x = tape.concat_rows(&h)?;
        let mut z: Option<Var> = None;
        for op in ops.present() {
            let msg = tape.sparse_apply(op.matrix(), x)?;
            let weighted = tape.matmul(msg, bound.relation(l, op.relation().index()))?;
            z = Some(match z {
                Some(acc) => tape.add(acc, weighted)?,
                None => weighted,
            });
        }
        let z = match z {
            Some(z) => z,
            None => tape.leaf(Tensor::zeros(&[nodes.total(), params.dim()]))?,
        };
        let mut next = h;
        for t in NodeType::ALL {
            let za = tape.slice_rows(z, nodes.offset(t), nodes.count(t))?;
            let m = tape.matmul(za, bound.transform(l, t))?;
            let mut pre = tape.matmul(m, bound.theta(l, t))?;
            if params.config.residual {
                pre = tape.add(pre, h[t.index()])?;
            }
            next[t.index()] = tape.leaky_relu(pre, slope)?;
        }
        h = next;
        history.push(h);
    }
    if let Some(out) = keep_layers {
        *out = history;
    }
    Ok(h)
}

fn check_instance(inst: &Instance, params: &ModelParams, ops: &RelationOperators) -> Result<()> {
    if inst.prefix.is_empty() {
        return Err(Error::InvalidArgument("trajectory prefix is empty".into()));
    }
    let nodes = &ops.nodes;
    let ok = |r: &CheckinRecord| {
        r.poi < nodes.count(NodeType::Poi)
            && r.category < nodes.count(NodeType::Category)
            && r.time_slot < nodes.count(NodeType::Slot)
    };
    if !inst.prefix.iter().all(ok) || inst.next_poi() >= params.poi_count() {
        return Err(Error::InvalidArgument(format!(
            "instance of user {} references an id outside the vocabulary",
            inst.user
        )));
    }
    Ok(())
}

/// Logits (B × |P|) of a batch of instances, recorded on the tape.
pub(crate) fn logits_on_tape(
    tape: &mut Tape<'_>,
    params: &ModelParams,
    ops: &RelationOperators,
    bound: &BoundParams,
    h: [Var; 4],
    instances: &[Instance],
) -> Result<Var> {
    if instances.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut offsets = vec![0];
    let (mut pois, mut cats, mut slots) = (Vec::new(), Vec::new(), Vec::new());
    for inst in instances {
        check_instance(inst, params, ops)?;
        for r in &inst.prefix {
            pois.push(r.poi);
            cats.push(r.category);
            slots.push(r.time_slot);
        }
        offsets.push(pois.len());
    }
    let gp = tape.gather_rows(h[NodeType::Poi.index()], &pois)?;
    let gc = tape.gather_rows(h[NodeType::Category.index()], &cats)?;
    let gt = tape.gather_rows(h[NodeType::Slot.index()], &slots)?;
    let seq = tape.concat_cols(&[gp, gc, gt])?;
    let pooled = tape.attention_pool(seq, bound.attention(), &offsets)?;
    let last_p: Vec<usize> = instances.iter().map(|i| i.last().poi).collect();
    let last_c: Vec<usize> = instances.iter().map(|i| i.last().category).collect();
    let lp = tape.gather_rows(h[NodeType::Poi.index()], &last_p)?;
    let lc = tape.gather_rows(h[NodeType::Category.index()], &last_c)?;
    let u = tape.concat_cols(&[pooled, lp, lc])?;
    let raw = tape.matmul_nt(u, bound.out_weight())?;
    tape.add_row_broadcast(raw, bound.out_bias())
}

/// Node features after every layer.
pub fn propagate(params: &ModelParams, ops: &RelationOperators) -> Result<NodeEmbeddings> {
    let mut tape = Tape::new();
    let bound = BoundParams::bind(&mut tape, params)?;
    let mut history = Vec::new();
    propagate_on_tape(&mut tape, params, ops, &bound, Some(&mut history))?;
    let layers = history
        .into_iter()
        .map(|vars| vars.map(|v| tape.value(v).clone()))
        .collect();
    Ok(NodeEmbeddings { layers })
}

/// Attention summary of a prefix: returns `(z_s, α)` with `z_s` of length 3d.
pub fn encode_trajectory(
    prefix: &[CheckinRecord],
    emb: &NodeEmbeddings,
    params: &ModelParams,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if prefix.is_empty() {
        return Err(Error::InvalidArgument("trajectory prefix is empty".into()));
    }
    let d = params.dim();
    let (hp, hc, ht) = (emb.get(NodeType::Poi), emb.get(NodeType::Category), emb.get(NodeType::Slot));
    let mut seq = Vec::with_capacity(prefix.len() * 3 * d);
    for r in prefix {
        if r.poi >= hp.rows() || r.category >= hc.rows() || r.time_slot >= ht.rows() {
            return Err(Error::InvalidArgument(format!(
                "check-in of user {} references an id outside the vocabulary",
                r.user
            )));
        }
        seq.extend_from_slice(hp.row(r.poi));
        seq.extend_from_slice(hc.row(r.category));
        seq.extend_from_slice(ht.row(r.time_slot));
    }
    let seq = Tensor::matrix(prefix.len(), 3 * d, seq)?;
    let alpha = attention_weights(&seq, params.attention.data(), &[0, prefix.len()]);
    let mut z = vec![0.0; 3 * d];
    for (i, a) in alpha.iter().enumerate() {
        for (o, s) in z.iter_mut().zip(seq.row(i)) {
            *o += a * s;
        }
    }
    Ok((z, alpha))
}

/// Next-POI logits from a trajectory summary and the prefix's last check-in.
pub fn score(z: &[f64], last: &CheckinRecord, emb: &NodeEmbeddings, params: &ModelParams) -> Result<Vec<f64>> {
    let d = params.dim();
    let (hp, hc) = (emb.get(NodeType::Poi), emb.get(NodeType::Category));
    if z.len() != 3 * d {
        return Err(Error::ShapeMismatch {
            op: "score",
            left: vec![z.len()],
            right: vec![3 * d],
        });
    }
    if last.poi >= hp.rows() || last.category >= hc.rows() {
        return Err(Error::InvalidArgument("last check-in references an id outside the vocabulary".into()));
    }
    let mut u = z.to_vec();
    u.extend_from_slice(hp.row(last.poi));
    u.extend_from_slice(hc.row(last.category));
    let w = &params.out_weight;
    Ok((0..w.rows())
        .map(|j| {
            let dot: f64 = w.row(j).iter().zip(&u).map(|(a, b)| a * b).sum();
            dot + params.out_bias.data()[j]
        })
        .collect())
}

/// Logits for every instance (B × |P|), with one propagation.
pub fn score_instances(params: &ModelParams, ops: &RelationOperators, instances: &[Instance]) -> Result<Tensor> {
    let mut tape = Tape::new();
    let bound = BoundParams::bind(&mut tape, params)?;
    let h = propagate_on_tape(&mut tape, params, ops, &bound, None)?;
    let logits = logits_on_tape(&mut tape, params, ops, &bound, h, instances)?;
    Ok(tape.value(logits).clone())
}

fn loss_on_tape<'a>(
    tape: &mut Tape<'a>,
    params: &ModelParams,
    ops: &'a RelationOperators,
    instances: &[Instance],
) -> Result<(BoundParams, Var)> {
    if instances.is_empty() {
        return Err(Error::EmptyInput);
    }
    let bound = BoundParams::bind(tape, params)?;
    let h = propagate_on_tape(tape, params, ops, &bound, None)?;
    let logits = logits_on_tape(tape, params, ops, &bound, h, instances)?;
    let targets: Vec<usize> = instances.iter().map(Instance::next_poi).collect();
    let loss = tape.cross_entropy_with_logits(logits, &targets)?;
    Ok((bound, loss))
}

/// Mean next-POI cross-entropy over `instances`.
pub fn task_loss(params: &ModelParams, ops: &RelationOperators, instances: &[Instance]) -> Result<f64> {
    let mut tape = Tape::new();
    let (_, loss) = loss_on_tape(&mut tape, params, ops, instances)?;
    Ok(tape.value(loss).item())
}

/// Loss and its gradient with respect to every parameter tensor, in `tensors()` order.
pub fn task_loss_and_grad(
    params: &ModelParams,
    ops: &RelationOperators,
    instances: &[Instance],
) -> Result<(f64, Vec<Tensor>)> {
    let mut tape = Tape::new();
    let (bound, loss) = loss_on_tape(&mut tape, params, ops, instances)?;
    let mut grads = tape.backward(loss)?;
    let out = bound
        .all
        .iter()
        .zip(params.tensors())
        .map(|(&v, t)| grads.take_or_zeros(v, t))
        .collect();
    Ok((tape.value(loss).item(), out))
}
