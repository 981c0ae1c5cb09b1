//! Spectrogram transformer: overlapping patch embedding, prepended CLS
//! token, learned positional table, pre-norm encoder blocks, and one affine
//! head per quality dimension reading the CLS output.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dsp::LogMelSpectrogram;
use crate::params::{ParamId, ParamStore};
use crate::scores::Dimension;
use crate::tensor::Tensor;
use crate::train::autodiff::{Graph, NodeId};

use super::patches::{extract_patches, PatchSequence};
use super::{ModelConfig, ModelError, ModelKind, QualityModel};

const LN_EPS: f64 = 1e-5;
const POS_INIT: f64 = 0.02;
/// Head biases start at the middle of the 1–5 scale.
pub const HEAD_BIAS_INIT: f64 = 3.0;

#[derive(Clone, Debug)]
struct Linear {
    w: ParamId,
    b: ParamId,
}

#[derive(Clone, Debug)]
struct Norm {
    gamma: ParamId,
    beta: ParamId,
}

#[derive(Clone, Debug)]
struct Block {
    ln1: Norm,
    q: Linear,
    k: Linear,
    v: Linear,
    out: Linear,
    ln2: Norm,
    fc1: Linear,
    fc2: Linear,
}

#[derive(Clone, Debug)]
pub struct AstModel {
    config: ModelConfig,
    params: ParamStore,
    patch_embed: Linear,
    cls: ParamId,
    pos: ParamId,
    blocks: Vec<Block>,
    final_norm: Norm,
    heads: [Linear; 5],
}

fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize, bound: f64) -> Tensor {
    Tensor::from_vec(
        rows,
        cols,
        (0..rows * cols)
            .map(|_| rng.gen_range(-bound..=bound))
            .collect(),
    )
}

impl AstModel {
    /// Randomly initialized model: linear weights uniform in ±1/sqrt(fan_in),
    /// zero biases, unit layer-norm gains, zero CLS token, positional table
    /// uniform in ±0.02.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let d = config.embed_dim;
        let p2 = config.patch_size * config.patch_size;
        let (nf, nt) = config.max_grid()?;

        let linear = |store: &mut ParamStore,
                      rng: &mut ChaCha8Rng,
                      name: &str,
                      fan_in: usize,
                      fan_out: usize| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            Linear {
                w: store.add(
                    format!("{name}.weight"),
                    uniform(rng, fan_in, fan_out, bound),
                ),
                b: store.add(format!("{name}.bias"), Tensor::zeros(1, fan_out)),
            }
        };
        let norm = |store: &mut ParamStore, name: &str| Norm {
            gamma: store.add(format!("{name}.gamma"), Tensor::full(1, d, 1.0)),
            beta: store.add(format!("{name}.beta"), Tensor::zeros(1, d)),
        };

        let patch_embed = linear(&mut store, &mut rng, "patch_embed", p2, d);
        let cls = store.add("cls_token", Tensor::zeros(1, d));
        let pos = store.add("pos_embed", uniform(&mut rng, 1 + nf * nt, d, POS_INIT));
        let hidden = config.mlp_hidden();
        let mut blocks = Vec::with_capacity(config.n_layers);
        for l in 0..config.n_layers {
            let pre = format!("blocks.{l}");
            blocks.push(Block {
                ln1: norm(&mut store, &format!("{pre}.ln1")),
                q: linear(&mut store, &mut rng, &format!("{pre}.attn.q"), d, d),
                k: linear(&mut store, &mut rng, &format!("{pre}.attn.k"), d, d),
                v: linear(&mut store, &mut rng, &format!("{pre}.attn.v"), d, d),
                out: linear(&mut store, &mut rng, &format!("{pre}.attn.out"), d, d),
                ln2: norm(&mut store, &format!("{pre}.ln2")),
                fc1: linear(&mut store, &mut rng, &format!("{pre}.mlp.fc1"), d, hidden),
                fc2: linear(&mut store, &mut rng, &format!("{pre}.mlp.fc2"), hidden, d),
            });
        }
        let final_norm = norm(&mut store, "final_norm");
        let heads = Dimension::ALL.map(|dim| {
            let h = linear(&mut store, &mut rng, &format!("head_{}", dim.key()), d, 1);
            store.get_mut(h.b).data[0] = HEAD_BIAS_INIT;
            h
        });
        Ok(Self {
            config,
            params: store,
            patch_embed,
            cls,
            pos,
            blocks,
            final_norm,
            heads,
        })
    }

    /// Rebuild from a parameter store whose layout matches `config`.
    pub fn from_params(config: ModelConfig, params: ParamStore) -> Result<Self, ModelError> {
        let mut model = Self::new(config, 0)?;
        if !model.params.same_layout(&params) {
            return Err(ModelError::Layout(
                "checkpoint tensors do not match the transformer configuration".into(),
            ));
        }
        model.params = params;
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn head_params(&self, dim: Dimension) -> (ParamId, ParamId) {
        let h = &self.heads[dim.index()];
        (h.w, h.b)
    }

    /// Row of the positional table for each token (CLS first).
    fn positions(&self, seq: &PatchSequence) -> Result<Vec<usize>, ModelError> {
        let (nf_max, nt_max) = self.config.max_grid()?;
        let (nf, nt) = seq.grid;
        if nf != nf_max || nt > nt_max {
            return Err(ModelError::Shape(format!(
                "patch grid {nf}x{nt} exceeds configured {nf_max}x{nt_max}"
            )));
        }
        let mut pos = Vec::with_capacity(seq.len() + 1);
        pos.push(0);
        for i in 0..seq.len() {
            let (fi, ti) = seq.coords(i);
            pos.push(1 + fi * nt_max + ti);
        }
        Ok(pos)
    }

    /// Patch projection, CLS prepend and positional embedding. Returns the
    /// token node and the token validity mask (CLS always valid).
    pub fn embed(
        &self,
        g: &mut Graph,
        seq: &PatchSequence,
    ) -> Result<(NodeId, Vec<bool>), ModelError> {
        let p2 = self.config.patch_size * self.config.patch_size;
        if seq.patches.cols != p2 || seq.patches.rows != seq.len() {
            return Err(ModelError::Shape(format!(
                "patches are {}x{}, projection expects width {p2}",
                seq.patches.rows, seq.patches.cols
            )));
        }
        let positions = self.positions(seq)?;
        let x = g.constant(seq.patches.clone());
        let w = g.param(&self.params, self.patch_embed.w);
        let b = g.param(&self.params, self.patch_embed.b);
        let tokens = g.linear(x, w, b);
        let cls = g.param(&self.params, self.cls);
        let tokens = g.concat_rows(cls, tokens);
        let table = g.param(&self.params, self.pos);
        let pos = g.gather_rows(table, positions);
        let tokens = g.add(tokens, pos);
        let mut mask = Vec::with_capacity(seq.len() + 1);
        mask.push(true);
        mask.extend_from_slice(&seq.valid);
        Ok((tokens, mask))
    }

    /// Run the encoder blocks. Masked tokens are excluded as attention keys.
    pub fn encode(
        &self,
        g: &mut Graph,
        tokens: NodeId,
        mask: &[bool],
    ) -> Result<NodeId, ModelError> {
        if mask.len() != g.value(tokens).rows {
            return Err(ModelError::Shape(
                "mask length differs from token count".into(),
            ));
        }
        if !mask.first().copied().unwrap_or(false) {
            return Err(ModelError::Shape("CLS position must be valid".into()));
        }
        let p = &self.params;
        let mut x = tokens;
        for blk in &self.blocks {
            let (gm, bt) = (g.param(p, blk.ln1.gamma), g.param(p, blk.ln1.beta));
            let h = g.layer_norm(x, gm, bt, LN_EPS);
            let q = self.apply_linear(g, h, &blk.q);
            let k = self.apply_linear(g, h, &blk.k);
            let v = self.apply_linear(g, h, &blk.v);
            let a = g.attention(q, k, v, self.config.n_heads, mask.to_vec());
            let a = self.apply_linear(g, a, &blk.out);
            x = g.add(x, a);
            let (gm, bt) = (g.param(p, blk.ln2.gamma), g.param(p, blk.ln2.beta));
            let h = g.layer_norm(x, gm, bt, LN_EPS);
            let h = self.apply_linear(g, h, &blk.fc1);
            let h = g.gelu(h);
            let h = self.apply_linear(g, h, &blk.fc2);
            x = g.add(x, h);
        }
        if !g.value(x).all_finite() {
            return Err(ModelError::NonFinite);
        }
        Ok(x)
    }

    fn apply_linear(&self, g: &mut Graph, x: NodeId, l: &Linear) -> NodeId {
        let w = g.param(&self.params, l.w);
        let b = g.param(&self.params, l.b);
        g.linear(x, w, b)
    }

    /// Final norm on the CLS row and the five heads.
    fn heads_forward(&self, g: &mut Graph, encoded: NodeId) -> [NodeId; 5] {
        let cls = g.select_row(encoded, 0);
        let (gm, bt) = (
            g.param(&self.params, self.final_norm.gamma),
            g.param(&self.params, self.final_norm.beta),
        );
        let cls = g.layer_norm(cls, gm, bt, LN_EPS);
        let mut out = [cls; 5];
        for (o, h) in out.iter_mut().zip(&self.heads) {
            *o = self.apply_linear(g, cls, h);
        }
        out
    }
}

impl QualityModel for AstModel {
    type Input = PatchSequence;

    fn kind(&self) -> ModelKind {
        ModelKind::Ast
    }

    fn params(&self) -> &ParamStore {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn prepare(&self, spec: &LogMelSpectrogram) -> Result<PatchSequence, ModelError> {
        extract_patches(spec, &self.config)
    }

    fn forward(&self, g: &mut Graph, input: &PatchSequence) -> Result<[NodeId; 5], ModelError> {
        let (tokens, mask) = self.embed(g, input)?;
        let encoded = self.encode(g, tokens, &mask)?;
        let out = self.heads_forward(g, encoded);
        if out.iter().any(|&o| !g.value(o).all_finite()) {
            return Err(ModelError::NonFinite);
        }
        Ok(out)
    }
}
