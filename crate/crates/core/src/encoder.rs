//! Vision transformer with one learnable class token per hierarchy label.
//!
//! The token sequence is `[T_CLS ; T_p]`: `M` position-free label tokens followed
//! by `N_p` patch tokens carrying learned positional embeddings. Blocks are
//! pre-norm. After the last block the sequence is split back into label and patch
//! embeddings, each of which is mean-pooled.

use rand::Rng;

use crate::error::{shape_err, Error, Result};
use crate::numerics::{trunc_normal, Bound, ParameterStore, Real, Role, Tape, Tensor, Var};

pub const LN_EPS: f64 = 1e-6;
const INIT_STD: f64 = 0.02;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncoderConfig {
    pub image_size: usize,
    pub patch_size: usize,
    pub channels: usize,
    pub embed_dim: usize,
    pub depth: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    /// Number of label tokens, `M`.
    pub num_labels: usize,
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.patch_size == 0 || self.image_size == 0 || self.image_size % self.patch_size != 0 {
            return bad(format!(
                "image size {} is not a multiple of patch size {}",
                self.image_size, self.patch_size
            ));
        }
        if self.heads == 0 || self.embed_dim == 0 || self.embed_dim % self.heads != 0 {
            return bad(format!(
                "embed dim {} is not divisible by {} heads",
                self.embed_dim, self.heads
            ));
        }
        if self.num_labels == 0 {
            return bad("at least one label token is required".into());
        }
        if self.channels == 0 || self.mlp_ratio == 0 {
            return bad("channels and mlp ratio must be positive".into());
        }
        Ok(())
    }

    pub fn grid(&self) -> usize {
        self.image_size / self.patch_size
    }

    /// `N_p`.
    pub fn num_patches(&self) -> usize {
        self.grid() * self.grid()
    }

    pub fn patch_dim(&self) -> usize {
        self.channels * self.patch_size * self.patch_size
    }

    pub fn seq_len(&self) -> usize {
        self.num_labels + self.num_patches()
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.heads
    }
}

/// Fresh encoder weights under the `encoder.` prefix.
pub fn init_params<T: Real, R: Rng>(cfg: &EncoderConfig, rng: &mut R) -> Result<ParameterStore<T>> {
    cfg.validate()?;
    let d = cfg.embed_dim;
    let hidden = d * cfg.mlp_ratio;
    let mut p = ParameterStore::new(Role::Online);
    p.insert("encoder.cls_tokens", trunc_normal(rng, &[cfg.num_labels, d], INIT_STD));
    p.insert("encoder.patch_embed.weight", trunc_normal(rng, &[cfg.patch_dim(), d], INIT_STD));
    p.insert("encoder.patch_embed.bias", Tensor::zeros(&[d]));
    p.insert("encoder.pos_embed", trunc_normal(rng, &[cfg.num_patches(), d], INIT_STD));
    for i in 0..cfg.depth {
        let b = format!("encoder.blocks.{i}");
        p.insert(format!("{b}.ln1.gamma"), Tensor::ones(&[d]));
        p.insert(format!("{b}.ln1.beta"), Tensor::zeros(&[d]));
        p.insert(format!("{b}.attn.qkv.weight"), trunc_normal(rng, &[d, 3 * d], INIT_STD));
        p.insert(format!("{b}.attn.qkv.bias"), Tensor::zeros(&[3 * d]));
        p.insert(format!("{b}.attn.proj.weight"), trunc_normal(rng, &[d, d], INIT_STD));
        p.insert(format!("{b}.attn.proj.bias"), Tensor::zeros(&[d]));
        p.insert(format!("{b}.ln2.gamma"), Tensor::ones(&[d]));
        p.insert(format!("{b}.ln2.beta"), Tensor::zeros(&[d]));
        p.insert(format!("{b}.mlp.fc1.weight"), trunc_normal(rng, &[d, hidden], INIT_STD));
        p.insert(format!("{b}.mlp.fc1.bias"), Tensor::zeros(&[hidden]));
        p.insert(format!("{b}.mlp.fc2.weight"), trunc_normal(rng, &[hidden, d], INIT_STD));
        p.insert(format!("{b}.mlp.fc2.bias"), Tensor::zeros(&[d]));
    }
    Ok(p)
}

/// Cut `[B, C, H, W]` images into `[B, N_p, C·P·P]` flattened patches, patches in
/// row-major grid order, each flattened channel-major.
pub fn patchify<T: Real>(images: &Tensor<T>, cfg: &EncoderConfig) -> Result<Tensor<T>> {
    let s = images.shape();
    if s.len() != 4 || s[1] != cfg.channels || s[2] != cfg.image_size || s[3] != cfg.image_size {
        return shape_err(format!(
            "images {:?} do not match [B, {}, {}, {}]",
            s, cfg.channels, cfg.image_size, cfg.image_size
        ));
    }
    let (b, c, n, p, g) = (s[0], cfg.channels, cfg.image_size, cfg.patch_size, cfg.grid());
    let pd = cfg.patch_dim();
    let src = images.data();
    let mut out = Vec::with_capacity(b * g * g * pd);
    for bi in 0..b {
        for gy in 0..g {
            for gx in 0..g {
                for ch in 0..c {
                    for y in 0..p {
                        let row = ((bi * c + ch) * n + gy * p + y) * n + gx * p;
                        out.extend_from_slice(&src[row..row + p]);
                    }
                }
            }
        }
    }
    Tensor::new(&[b, g * g, pd], out)
}

/// Affine map over the last axis: `x · W + b`.
pub fn linear<T: Real>(tape: &mut Tape<T>, params: &Bound, prefix: &str, x: Var) -> Result<Var> {
    let w = params.get(&format!("{prefix}.weight"))?;
    let b = params.get(&format!("{prefix}.bias"))?;
    let y = tape.matmul(x, w)?;
    tape.add(y, b)
}

/// Layer norm over the last axis with learned scale and shift.
pub fn layer_norm<T: Real>(tape: &mut Tape<T>, params: &Bound, prefix: &str, x: Var) -> Result<Var> {
    let gamma = params.get(&format!("{prefix}.gamma"))?;
    let beta = params.get(&format!("{prefix}.beta"))?;
    let n = tape.layer_norm(x, LN_EPS)?;
    let s = tape.mul(n, gamma)?;
    tape.add(s, beta)
}

/// One pre-norm block on `[B, S, d]`. Returns the output and the per-head
/// attention weights `[B, S, S]`.
pub fn attention_block<T: Real>(
    tape: &mut Tape<T>,
    params: &Bound,
    cfg: &EncoderConfig,
    index: usize,
    x: Var,
) -> Result<(Var, Vec<Var>)> {
    let shape = tape.shape(x).to_vec();
    if shape.len() != 3 || shape[2] != cfg.embed_dim {
        return shape_err(format!("block input {shape:?}, embed dim {}", cfg.embed_dim));
    }
    let b = format!("encoder.blocks.{index}");
    let (d, dh) = (cfg.embed_dim, cfg.head_dim());

    let h = layer_norm(tape, params, &format!("{b}.ln1"), x)?;
    let qkv = linear(tape, params, &format!("{b}.attn.qkv"), h)?;
    let mut heads = Vec::with_capacity(cfg.heads);
    let mut weights = Vec::with_capacity(cfg.heads);
    for hi in 0..cfg.heads {
        let q = tape.narrow(qkv, 2, hi * dh, dh)?;
        let k = tape.narrow(qkv, 2, d + hi * dh, dh)?;
        let v = tape.narrow(qkv, 2, 2 * d + hi * dh, dh)?;
        let kt = tape.transpose_last2(k)?;
        let scores = tape.bmm(q, kt)?;
        let scores = tape.scale(scores, 1.0 / (dh as f64).sqrt())?;
        let att = tape.softmax(scores)?;
        heads.push(tape.bmm(att, v)?);
        weights.push(att);
    }
    let merged = if heads.len() == 1 { heads[0] } else { tape.concat(&heads, 2)? };
    let attn_out = linear(tape, params, &format!("{b}.attn.proj"), merged)?;
    let x = tape.add(x, attn_out)?;

    let h = layer_norm(tape, params, &format!("{b}.ln2"), x)?;
    let h = linear(tape, params, &format!("{b}.mlp.fc1"), h)?;
    let h = tape.gelu(h)?;
    let h = linear(tape, params, &format!("{b}.mlp.fc2"), h)?;
    let out = tape.add(x, h)?;
    Ok((out, weights))
}

/// Tape handles for the outputs of one encoder pass over a batch.
#[derive(Clone, Debug)]
pub struct EncoderOutput {
    /// `z̃_CLS`, `[B, M, d]`.
    pub cls: Var,
    /// `[B, N_p, d]`.
    pub patches: Var,
    /// `f_CLS`, `[B, d]`.
    pub pooled_cls: Var,
    /// `F_p`, `[B, d]`.
    pub pooled_patches: Var,
    /// Attention weights, indexed `[block][head]`.
    pub attention: Vec<Vec<Var>>,
}

/// Run the encoder on `[B, C, H, W]` images. `params` may be bound from either
/// the online or the target store; both use the `encoder.` names.
pub fn forward<T: Real>(
    tape: &mut Tape<T>,
    params: &Bound,
    cfg: &EncoderConfig,
    images: &Tensor<T>,
) -> Result<EncoderOutput> {
    cfg.validate()?;
    let batch = images.shape().first().copied().unwrap_or(0);
    if batch == 0 {
        return Err(Error::Empty("encoder batch".into()));
    }
    let patches = tape.constant(patchify(images, cfg)?);
    let tokens = linear(tape, params, "encoder.patch_embed", patches)?;
    let pos = params.get("encoder.pos_embed")?;
    let tokens = tape.add(tokens, pos)?;
    let cls = params.get("encoder.cls_tokens")?;
    if tape.shape(cls) != [cfg.num_labels, cfg.embed_dim] {
        return shape_err(format!("cls tokens {:?}", tape.shape(cls)));
    }
    let cls = tape.expand_leading(cls, batch)?;
    let mut x = tape.concat(&[cls, tokens], 1)?;

    let mut attention = Vec::with_capacity(cfg.depth);
    for i in 0..cfg.depth {
        let (y, w) = attention_block(tape, params, cfg, i, x)?;
        x = y;
        attention.push(w);
    }

    let m = cfg.num_labels;
    let cls = tape.narrow(x, 1, 0, m)?;
    let patches = tape.narrow(x, 1, m, cfg.num_patches())?;
    let pooled_cls = tape.mean_axis(cls, 1)?;
    let pooled_patches = tape.mean_axis(patches, 1)?;
    Ok(EncoderOutput {
        cls,
        patches,
        pooled_cls,
        pooled_patches,
        attention,
    })
}

/// Detached encoder outputs for one batch.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardBundle<T> {
    pub cls_embeddings: Tensor<T>,
    pub pooled_cls: Tensor<T>,
    pub pooled_patches: Tensor<T>,
    pub patch_embeddings: Tensor<T>,
}

/// Inference-only pass returning plain tensors.
pub fn encode<T: Real>(
    params: &ParameterStore<T>,
    cfg: &EncoderConfig,
    images: &Tensor<T>,
) -> Result<ForwardBundle<T>> {
    let mut tape = Tape::new();
    let bound = tape.bind(params, false);
    let out = forward(&mut tape, &bound, cfg, images)?;
    Ok(ForwardBundle {
        cls_embeddings: tape.value(out.cls).clone(),
        pooled_cls: tape.value(out.pooled_cls).clone(),
        pooled_patches: tape.value(out.pooled_patches).clone(),
        patch_embeddings: tape.value(out.patches).clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::gradcheck_store;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg(depth: usize, m: usize) -> EncoderConfig {
        EncoderConfig {
            image_size: 8,
            patch_size: 4,
            channels: 3,
            embed_dim: 8,
            depth,
            heads: 2,
            mlp_ratio: 2,
            num_labels: m,
        }
    }

    fn images(cfg: &EncoderConfig, b: usize, seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = b * cfg.channels * cfg.image_size * cfg.image_size;
        Tensor::new(
            &[b, cfg.channels, cfg.image_size, cfg.image_size],
            (0..n).map(|_| rng.gen::<f64>()).collect(),
        )
        .unwrap()
    }

    #[test]
    fn patch_counts() {
        let base = EncoderConfig {
            image_size: 224,
            patch_size: 16,
            channels: 3,
            embed_dim: 768,
            depth: 12,
            heads: 12,
            mlp_ratio: 4,
            num_labels: 30,
        };
        assert_eq!(base.num_patches(), 196);
        assert_eq!(base.seq_len(), 226);
        let toy = EncoderConfig {
            image_size: 32,
            patch_size: 16,
            ..base
        };
        assert_eq!(toy.num_patches(), 4);
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut c = cfg(1, 3);
        c.patch_size = 3;
        assert!(c.validate().is_err());
        let mut c = cfg(1, 3);
        c.heads = 3;
        assert!(c.validate().is_err());
        let mut c = cfg(1, 3);
        c.num_labels = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn patchify_layout() {
        let c = EncoderConfig {
            image_size: 4,
            patch_size: 2,
            channels: 1,
            ..cfg(0, 1)
        };
        let img = Tensor::<f64>::from_f64(&[1, 1, 4, 4], &(0..16).map(f64::from).collect::<Vec<_>>()).unwrap();
        let p = patchify(&img, &c).unwrap();
        assert_eq!(p.shape(), &[1, 4, 4]);
        assert_eq!(&p.data()[..4], &[0.0, 1.0, 4.0, 5.0]);
        assert_eq!(&p.data()[4..8], &[2.0, 3.0, 6.0, 7.0]);
        let wrong = Tensor::<f64>::zeros(&[1, 1, 5, 5]);
        assert!(patchify(&wrong, &c).is_err());
    }

    #[test]
    fn zero_image_gives_positional_embeddings() {
        let c = cfg(0, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = init_params::<f64, _>(&c, &mut rng).unwrap();
        let b = encode(&p, &c, &Tensor::zeros(&[1, 3, 8, 8])).unwrap();
        assert_eq!(b.patch_embeddings.data(), p.get("encoder.pos_embed").unwrap().data());
    }

    #[test]
    fn depth_zero_is_identity_on_tokens() {
        let c = cfg(0, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = init_params::<f64, _>(&c, &mut rng).unwrap();
        let b = encode(&p, &c, &images(&c, 2, 2)).unwrap();
        let tokens = p.get("encoder.cls_tokens").unwrap().data();
        assert_eq!(&b.cls_embeddings.data()[..tokens.len()], tokens);
        assert_eq!(&b.cls_embeddings.data()[tokens.len()..], tokens);
    }

    #[test]
    fn shapes_and_pooling() {
        let c = cfg(2, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = init_params::<f64, _>(&c, &mut rng).unwrap();
        let b = encode(&p, &c, &images(&c, 2, 4)).unwrap();
        assert_eq!(b.cls_embeddings.shape(), &[2, 3, 8]);
        assert_eq!(b.patch_embeddings.shape(), &[2, 4, 8]);
        assert_eq!(b.pooled_cls.shape(), &[2, 8]);
        for j in 0..8 {
            let mean = (0..3).map(|m| b.cls_embeddings.data()[m * 8 + j]).sum::<f64>() / 3.0;
            assert!((mean - b.pooled_cls.data()[j]).abs() < 1e-12);
            let mean = (0..4).map(|m| b.patch_embeddings.data()[m * 8 + j]).sum::<f64>() / 4.0;
            assert!((mean - b.pooled_patches.data()[j]).abs() < 1e-12);
        }
    }

    #[test]
    fn duplicate_images_give_identical_bundles() {
        let c = cfg(1, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = init_params::<f64, _>(&c, &mut rng).unwrap();
        let one = images(&c, 1, 6);
        let two = Tensor::stack(&[one.reshape(&[3, 8, 8]).unwrap(), one.reshape(&[3, 8, 8]).unwrap()]).unwrap();
        let b = encode(&p, &c, &two).unwrap();
        let half = b.cls_embeddings.len() / 2;
        assert_eq!(b.cls_embeddings.data()[..half], b.cls_embeddings.data()[half..]);
    }

    #[test]
    fn zeroed_residual_branches_make_block_identity() {
        let c = cfg(1, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut p = init_params::<f64, _>(&c, &mut rng).unwrap();
        for name in ["attn.proj.weight", "mlp.fc2.weight"] {
            let t = p.get_mut(&format!("encoder.blocks.0.{name}")).unwrap();
            *t = Tensor::zeros(t.shape());
        }
        let mut tape = Tape::new();
        let bound = tape.bind(&p, false);
        let x = tape.constant(images(&c, 2, 8).reshape(&[2, 24, 8]).unwrap());
        let (y, w) = attention_block(&mut tape, &bound, &c, 0, x).unwrap();
        assert_eq!(tape.value(x), tape.value(y));
        for a in w {
            for row in tape.value(a).data().chunks(24) {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn singleton_sequence_attends_to_itself() {
        let c = cfg(1, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = init_params::<f64, _>(&c, &mut rng).unwrap();
        let mut tape = Tape::new();
        let bound = tape.bind(&p, false);
        let x = tape.constant(Tensor::from_f64(&[1, 1, 8], &[0.3, -1.0, 2.0, 0.1, 0.0, 0.5, -0.2, 1.1]).unwrap());
        let (_, w) = attention_block(&mut tape, &bound, &c, 0, x).unwrap();
        assert_eq!(tape.value(w[0]).data(), &[1.0]);
    }

    #[test]
    fn every_cls_token_receives_gradient() {
        let c = cfg(1, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let p = init_params::<f64, _>(&c, &mut rng).unwrap();
        let mut tape = Tape::new();
        let bound = tape.bind(&p, true);
        let out = forward(&mut tape, &bound, &c, &images(&c, 2, 11)).unwrap();
        let sq = tape.mul(out.pooled_cls, out.pooled_cls).unwrap();
        let loss = tape.sum(sq).unwrap();
        let g = tape.backward(loss).unwrap();
        let tok = g.get("encoder.cls_tokens").unwrap();
        for row in tok.data().chunks(8) {
            assert!(row.iter().map(|v| v * v).sum::<f64>() > 0.0);
        }
    }

    #[test]
    fn encoder_gradcheck_tiny() {
        let c = cfg(1, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let p = init_params::<f64, _>(&c, &mut rng).unwrap();
        let p = {
            // Wider init so the check is not dominated by near-zero activations.
            let mut q = p.clone();
            for (_, t) in q.iter_mut() {
                *t = t.map(|v| v * 10.0 + 0.01);
            }
            q
        };
        let imgs = images(&c, 2, 13);
        let report = gradcheck_store(
            |tape, bound| {
                let out = forward(tape, bound, &c, &imgs)?;
                let t = tape.gelu(out.cls)?;
                let s = tape.sum(t)?;
                let pp = tape.mean(out.patches)?;
                tape.add(s, pp)
            },
            &p,
            1e-6,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-3, "{report:?}");
    }
}
