//! BYOL heads, loss and the EMA target update.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::{layer_norm, linear};
use crate::error::{shape_err, Error, Result};
use crate::numerics::{trunc_normal, Bound, ParameterStore, Real, Role, Tape, Tensor, Var};

/// Which pooled representation feeds the projector.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ByolFeature {
    #[default]
    PooledPatches,
    PooledCls,
}

/// Name prefixes copied into the target store.
pub const TARGET_PREFIXES: [&str; 2] = ["encoder.", "byol.projector."];

const NORM_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HeadDims {
    pub input: usize,
    pub hidden: usize,
    pub output: usize,
}

/// `Linear → LayerNorm → ReLU → Linear` under `prefix`, weights drawn with
/// standard deviation `1 / sqrt(fan_in)`.
pub fn init_head<T: Real, R: Rng>(prefix: &str, dims: &HeadDims, rng: &mut R) -> ParameterStore<T> {
    let std = |fan_in: usize| 1.0 / (fan_in.max(1) as f64).sqrt();
    let mut p = ParameterStore::new(Role::Online);
    p.insert(format!("{prefix}.fc1.weight"), trunc_normal(rng, &[dims.input, dims.hidden], std(dims.input)));
    p.insert(format!("{prefix}.fc1.bias"), Tensor::zeros(&[dims.hidden]));
    p.insert(format!("{prefix}.ln.gamma"), Tensor::ones(&[dims.hidden]));
    p.insert(format!("{prefix}.ln.beta"), Tensor::zeros(&[dims.hidden]));
    p.insert(format!("{prefix}.fc2.weight"), trunc_normal(rng, &[dims.hidden, dims.output], std(dims.hidden)));
    p.insert(format!("{prefix}.fc2.bias"), Tensor::zeros(&[dims.output]));
    p
}

/// Online projector `byol.projector` (`d → hidden → out`) and predictor
/// `byol.predictor` (`out → hidden → out`).
pub fn init_params<T: Real, R: Rng>(
    embed_dim: usize,
    hidden: usize,
    out: usize,
    rng: &mut R,
) -> ParameterStore<T> {
    let mut p = init_head(
        "byol.projector",
        &HeadDims {
            input: embed_dim,
            hidden,
            output: out,
        },
        rng,
    );
    p.merge(init_head(
        "byol.predictor",
        &HeadDims {
            input: out,
            hidden,
            output: out,
        },
        rng,
    ));
    p
}

pub fn head<T: Real>(tape: &mut Tape<T>, params: &Bound, prefix: &str, x: Var) -> Result<Var> {
    let h = linear(tape, params, &format!("{prefix}.fc1"), x)?;
    let h = layer_norm(tape, params, &format!("{prefix}.ln"), h)?;
    let h = tape.relu(h)?;
    linear(tape, params, &format!("{prefix}.fc2"), h)
}

/// ξ: a copy of the online encoder and projector, tagged as target.
pub fn target_store<T: Real>(online: &ParameterStore<T>) -> ParameterStore<T> {
    online.subset(&TARGET_PREFIXES, Role::Target)
}

fn row_norms<T: Real>(t: &Tensor<T>) -> Vec<f64> {
    let d = t.shape()[1];
    t.data()
        .chunks(d)
        .map(|r| r.iter().map(|v| v.as_f64() * v.as_f64()).sum::<f64>().sqrt())
        .collect()
}

fn normalize_rows<T: Real>(tape: &mut Tape<T>, x: Var) -> Result<Var> {
    let sq = tape.mul(x, x)?;
    let s = tape.sum_axis(sq, 1)?;
    let n = tape.sqrt(s)?;
    tape.div(x, n)
}

/// Mean over rows of `2 − 2·cos(pred, target)`. `target` is detached.
pub fn byol_loss<T: Real>(tape: &mut Tape<T>, pred: Var, target: Var) -> Result<Var> {
    let (ps, ts) = (tape.shape(pred).to_vec(), tape.shape(target).to_vec());
    if ps.len() != 2 || ps != ts {
        return shape_err(format!("byol loss {ps:?} vs {ts:?}"));
    }
    for t in [pred, target] {
        if let Some(row) = row_norms(tape.value(t)).iter().position(|&n| n <= NORM_FLOOR) {
            return Err(Error::ZeroNorm(row));
        }
    }
    let target = tape.detach(target);
    let p = normalize_rows(tape, pred)?;
    let t = normalize_rows(tape, target)?;
    let prod = tape.mul(p, t)?;
    let cos = tape.sum_axis(prod, 1)?;
    let mean = tape.mean(cos)?;
    let scaled = tape.scale(mean, -2.0)?;
    tape.add_scalar(scaled, 2.0)
}

/// `ξ ← τ·ξ + (1 − τ)·θ` for every tensor of the target store.
pub fn ema_update<T: Real>(online: &ParameterStore<T>, target: &mut ParameterStore<T>, tau: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::InvalidConfig(format!("EMA momentum {tau} outside [0, 1]")));
    }
    for (name, t) in target.iter() {
        let o = online
            .get(name)
            .map_err(|_| Error::NameMismatch(format!("'{name}' has no online counterpart")))?;
        if o.shape() != t.shape() {
            return Err(Error::NameMismatch(format!("'{name}' shapes {:?} and {:?}", o.shape(), t.shape())));
        }
    }
    let (a, b) = (T::lit(tau), T::lit(1.0 - tau));
    for (name, t) in target.iter_mut() {
        let o = online.get(name)?;
        if tau == 0.0 {
            t.data_mut().copy_from_slice(o.data());
            continue;
        }
        for (x, &y) in t.data_mut().iter_mut().zip(o.data()) {
            *x = a * *x + b * y;
        }
    }
    Ok(())
}
