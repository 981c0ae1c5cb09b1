//! Compact convolutional baseline over the same log-Mel input.
//!
//! Stacked same-padded conv + ReLU + max-pool stages, a mean over the
//! remaining time axis, and the same five affine heads as the transformer.
//! This is a stand-in exercising the CNN training protocol, not a faithful
//! reproduction of any published network.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dsp::LogMelSpectrogram;
use crate::params::{ParamId, ParamStore};
use crate::scores::Dimension;
use crate::tensor::Tensor;
use crate::train::autodiff::{Graph, NodeId};

use super::ast::HEAD_BIAS_INIT;
use super::{ModelError, ModelKind, Normalization, QualityModel};

#[derive(Clone, Debug, PartialEq)]
pub struct CnnConfig {
    pub channels: Vec<usize>,
    pub kernel: usize,
    /// Max-pool factors `(freq, time)` per stage.
    pub pools: Vec<(usize, usize)>,
    pub n_mels: usize,
    pub max_duration_s: f64,
    pub frame_hop_s: f64,
    pub log_floor: f64,
    pub normalization: Option<Normalization>,
}

impl Default for CnnConfig {
    fn default() -> Self {
        Self {
            channels: vec![16, 32, 64, 64],
            kernel: 3,
            pools: vec![(2, 2); 4],
            n_mels: 128,
            max_duration_s: 12.0,
            frame_hop_s: 0.010,
            log_floor: 1e-10,
            normalization: None,
        }
    }
}

impl CnnConfig {
    pub fn max_frames(&self) -> usize {
        (self.max_duration_s / self.frame_hop_s).round() as usize
    }

    /// Feature-map `(freq, time)` size after every stage.
    pub fn stage_dims(&self) -> Vec<(usize, usize)> {
        let (mut h, mut w) = (self.n_mels, self.max_frames());
        self.pools
            .iter()
            .map(|&(ph, pw)| {
                h /= ph.max(1);
                w /= pw.max(1);
                (h, w)
            })
            .collect()
    }

    /// Width of the pooled feature vector fed to each head.
    pub fn head_input_width(&self) -> usize {
        let h = self.stage_dims().last().map_or(self.n_mels, |d| d.0);
        self.channels.last().copied().unwrap_or(1) * h
    }

    pub fn pad_value(&self) -> f64 {
        let v = self.log_floor.ln();
        self.normalization.map_or(v, |n| n.apply(v))
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::Config(m));
        if self.channels.is_empty() || self.channels.contains(&0) {
            return bad("cnn needs at least one stage with non-zero channels".into());
        }
        if self.pools.len() != self.channels.len() {
            return bad(format!(
                "{} pool factors for {} conv stages",
                self.pools.len(),
                self.channels.len()
            ));
        }
        if self.kernel % 2 == 0 {
            return bad(format!("kernel {} must be odd", self.kernel));
        }
        if self.pools.iter().any(|&(a, b)| a == 0 || b == 0) {
            return bad("pool factors must be positive".into());
        }
        if !(self.max_duration_s > 0.0) || !(self.frame_hop_s > 0.0) {
            return bad("max_duration_s and frame_hop_s must be positive".into());
        }
        if self.stage_dims().iter().any(|&(h, w)| h == 0 || w == 0) {
            return bad(format!(
                "input {}x{} is too small for the pooling stack",
                self.n_mels,
                self.max_frames()
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct Conv {
    w: ParamId,
    b: ParamId,
}

#[derive(Clone, Debug)]
pub struct CnnModel {
    config: CnnConfig,
    params: ParamStore,
    convs: Vec<Conv>,
    heads: [(ParamId, ParamId); 5],
}

/// Spectrogram laid out as a `1 × (mels·frames)` feature map, padded or
/// truncated to the configured frame count.
#[derive(Clone, Debug, PartialEq)]
pub struct CnnInput {
    pub map: Tensor,
}

impl CnnModel {
    pub fn new(config: CnnConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let k2 = config.kernel * config.kernel;
        let mut in_ch = 1;
        let mut convs = Vec::new();
        for (i, &out_ch) in config.channels.iter().enumerate() {
            let fan_in = in_ch * k2;
            let bound = 1.0 / (fan_in as f64).sqrt();
            let w = Tensor::from_vec(
                out_ch,
                fan_in,
                (0..out_ch * fan_in)
                    .map(|_| rng.gen_range(-bound..=bound))
                    .collect(),
            );
            convs.push(Conv {
                w: store.add(format!("conv.{i}.weight"), w),
                b: store.add(format!("conv.{i}.bias"), Tensor::zeros(out_ch, 1)),
            });
            in_ch = out_ch;
        }
        let feat = config.head_input_width();
        let bound = 1.0 / (feat as f64).sqrt();
        let heads = Dimension::ALL.map(|dim| {
            let w = Tensor::from_vec(
                feat,
                1,
                (0..feat).map(|_| rng.gen_range(-bound..=bound)).collect(),
            );
            (
                store.add(format!("head_{}.weight", dim.key()), w),
                store.add(
                    format!("head_{}.bias", dim.key()),
                    Tensor::full(1, 1, HEAD_BIAS_INIT),
                ),
            )
        });
        Ok(Self {
            config,
            params: store,
            convs,
            heads,
        })
    }

    pub fn from_params(config: CnnConfig, params: ParamStore) -> Result<Self, ModelError> {
        let mut model = Self::new(config, 0)?;
        if !model.params.same_layout(&params) {
            return Err(ModelError::Layout(
                "checkpoint tensors do not match the CNN configuration".into(),
            ));
        }
        model.params = params;
        Ok(model)
    }

    pub fn config(&self) -> &CnnConfig {
        &self.config
    }

    pub fn head_params(&self, dim: Dimension) -> (ParamId, ParamId) {
        self.heads[dim.index()]
    }

    /// Pooled features (`1 × head_input_width`) before the heads.
    pub fn features(&self, g: &mut Graph, input: &CnnInput) -> Result<NodeId, ModelError> {
        let (mut h, mut w) = (self.config.n_mels, self.config.max_frames());
        if input.map.shape() != (1, h * w) {
            return Err(ModelError::Shape(format!(
                "cnn input is {}x{}, expected 1x{}",
                input.map.rows,
                input.map.cols,
                h * w
            )));
        }
        let mut x = g.constant(input.map.clone());
        for (conv, &(ph, pw)) in self.convs.iter().zip(&self.config.pools) {
            let wn = g.param(&self.params, conv.w);
            let bn = g.param(&self.params, conv.b);
            x = g.conv2d(x, wn, bn, h, w, self.config.kernel);
            x = g.relu(x);
            let (pooled, nh, nw) = g.max_pool(x, h, w, ph, pw);
            x = pooled;
            h = nh;
            w = nw;
        }
        Ok(g.time_mean(x, h, w))
    }
}

impl QualityModel for CnnModel {
    type Input = CnnInput;

    fn kind(&self) -> ModelKind {
        ModelKind::Cnn
    }

    fn params(&self) -> &ParamStore {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn prepare(&self, spec: &LogMelSpectrogram) -> Result<CnnInput, ModelError> {
        let cfg = &self.config;
        if spec.n_mels != cfg.n_mels {
            return Err(ModelError::MelMismatch {
                found: spec.n_mels,
                expected: cfg.n_mels,
            });
        }
        let frames = cfg.max_frames();
        let real = spec.frames.min(frames);
        let pad = cfg.pad_value();
        let mut map = Tensor::full(1, cfg.n_mels * frames, pad);
        for f in 0..cfg.n_mels {
            for t in 0..real {
                let v = spec.at(t, f);
                map.data[f * frames + t] = cfg.normalization.map_or(v, |n| n.apply(v));
            }
        }
        Ok(CnnInput { map })
    }

    fn forward(&self, g: &mut Graph, input: &CnnInput) -> Result<[NodeId; 5], ModelError> {
        let feat = self.features(g, input)?;
        let mut out = [feat; 5];
        for (o, &(w, b)) in out.iter_mut().zip(&self.heads) {
            let wn = g.param(&self.params, w);
            let bn = g.param(&self.params, b);
            *o = g.linear(feat, wn, bn);
        }
        if out.iter().any(|&o| !g.value(o).all_finite()) {
            return Err(ModelError::NonFinite);
        }
        Ok(out)
    }
}
