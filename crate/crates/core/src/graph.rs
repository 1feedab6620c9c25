//! GraphSAGE branch over the label hierarchy.
//!
//! Node features are the per-label token embeddings. Each layer computes
//! `h'_v = h_v·W_self + mean_{u→v} h_u·W_neigh + b`, with ReLU between layers.
//! Node outputs are mean-pooled and projected to `M` logits.

use rand::Rng;

use crate::encoder::linear;
use crate::error::{shape_err, Error, Result};
use crate::hierarchy::{EdgeList, LabelHierarchy};
use crate::numerics::{trunc_normal, Bound, ParameterStore, Real, Role, Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GraphConfig {
    pub layers: usize,
    pub hidden_dim: usize,
    pub add_reverse: bool,
    pub add_self_loops: bool,
}

impl GraphConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.hidden_dim == 0 {
            return Err(Error::InvalidConfig("graph layers and hidden_dim must be positive".into()));
        }
        Ok(())
    }
}

pub fn init_params<T: Real, R: Rng>(
    cfg: &GraphConfig,
    in_dim: usize,
    num_labels: usize,
    rng: &mut R,
) -> Result<ParameterStore<T>> {
    cfg.validate()?;
    let mut p = ParameterStore::new(Role::Online);
    let mut f_in = in_dim;
    for i in 0..cfg.layers {
        let h = cfg.hidden_dim;
        p.insert(format!("graph.layers.{i}.self.weight"), trunc_normal(rng, &[f_in, h], 0.02));
        p.insert(format!("graph.layers.{i}.neigh.weight"), trunc_normal(rng, &[f_in, h], 0.02));
        p.insert(format!("graph.layers.{i}.bias"), Tensor::zeros(&[h]));
        f_in = h;
    }
    p.insert("graph.head.weight", trunc_normal(rng, &[f_in, num_labels], 0.02));
    p.insert("graph.head.bias", Tensor::zeros(&[num_labels]));
    Ok(p)
}

/// Mean-aggregation matrix `[M, M]` of an edge list.
pub fn adjacency<T: Real>(edges: &EdgeList) -> Result<Tensor<T>> {
    let n = edges.num_nodes;
    if edges.edges.iter().any(|&(s, t)| s >= n || t >= n) {
        return shape_err(format!("edge id out of range for {n} nodes"));
    }
    Tensor::from_f64(&[n, n], &edges.mean_aggregation_matrix())
}

/// One mean-aggregator layer on `[B, M, f_in]` node features; `adj` is the
/// aggregation matrix repeated over the batch, `[B, M, M]`.
pub fn sage_layer<T: Real>(
    tape: &mut Tape<T>,
    params: &Bound,
    prefix: &str,
    nodes: Var,
    adj: Var,
    relu: bool,
) -> Result<Var> {
    let w_self = params.get(&format!("{prefix}.self.weight"))?;
    let w_neigh = params.get(&format!("{prefix}.neigh.weight"))?;
    let bias = params.get(&format!("{prefix}.bias"))?;
    let agg = tape.bmm(adj, nodes)?;
    let a = tape.matmul(nodes, w_self)?;
    let b = tape.matmul(agg, w_neigh)?;
    let s = tape.add(a, b)?;
    let out = tape.add(s, bias)?;
    if relu {
        tape.relu(out)
    } else {
        Ok(out)
    }
}

/// Graph branch state that does not change between batches.
#[derive(Clone, Debug)]
pub struct GraphBranch<T> {
    pub cfg: GraphConfig,
    pub edges: EdgeList,
    adj: Tensor<T>,
}

impl<T: Real> GraphBranch<T> {
    pub fn new(cfg: GraphConfig, h: &LabelHierarchy) -> Result<Self> {
        cfg.validate()?;
        let edges = h.build_edges(cfg.add_reverse, cfg.add_self_loops);
        Self::with_edges(cfg, edges)
    }

    pub fn with_edges(cfg: GraphConfig, edges: EdgeList) -> Result<Self> {
        let adj = adjacency(&edges)?;
        Ok(Self { cfg, edges, adj })
    }

    /// `p_g` logits `[B, M]` for every sample of the batch, labeled or not.
    pub fn forward(&self, tape: &mut Tape<T>, params: &Bound, cls: Var) -> Result<Var> {
        let shape = tape.shape(cls).to_vec();
        let m = self.edges.num_nodes;
        if shape.len() != 3 || shape[1] != m {
            return shape_err(format!("graph input {shape:?} for {m} nodes"));
        }
        let adj = tape.constant(batched(&self.adj, shape[0])?);
        let mut x = cls;
        for i in 0..self.cfg.layers {
            let last = i + 1 == self.cfg.layers;
            x = sage_layer(tape, params, &format!("graph.layers.{i}"), x, adj, !last)?;
        }
        let pooled = tape.mean_axis(x, 1)?;
        linear(tape, params, "graph.head", pooled)
    }
}

fn batched<T: Real>(t: &Tensor<T>, b: usize) -> Result<Tensor<T>> {
    let mut shape = vec![b];
    shape.extend_from_slice(t.shape());
    let mut data = Vec::with_capacity(t.len() * b);
    for _ in 0..b {
        data.extend_from_slice(t.data());
    }
    Tensor::new(&shape, data)
}
