use super::ModelError;

/// Optional per-corpus normalization applied to log-Mel values before
/// patching: `(x - mean) / std`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Normalization {
    pub mean: f64,
    pub std: f64,
}

impl Normalization {
    pub fn apply(&self, v: f64) -> f64 {
        (v - self.mean) / self.std
    }
}

/// Transformer model hyper-parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub embed_dim: usize,
    pub patch_size: usize,
    pub patch_stride_time: usize,
    pub patch_stride_freq: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub mlp_ratio: f64,
    pub max_duration_s: f64,
    pub n_mels: usize,
    pub frame_hop_s: f64,
    pub log_floor: f64,
    pub normalization: Option<Normalization>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl ModelConfig {
    /// Small configuration used for tests and CPU training.
    pub fn desk() -> Self {
        Self {
            embed_dim: 64,
            patch_size: 16,
            patch_stride_time: 10,
            patch_stride_freq: 10,
            n_layers: 2,
            n_heads: 4,
            mlp_ratio: 4.0,
            max_duration_s: 12.0,
            n_mels: 128,
            frame_hop_s: 0.010,
            log_floor: 1e-10,
            normalization: None,
        }
    }

    /// AST base dimensions: 768-wide, 12 layers, 12 heads.
    pub fn full() -> Self {
        Self {
            embed_dim: 768,
            n_layers: 12,
            n_heads: 12,
            ..Self::desk()
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::Config(m));
        if self.embed_dim == 0 || self.n_heads == 0 || self.embed_dim % self.n_heads != 0 {
            return bad(format!(
                "embed_dim {} must be a positive multiple of n_heads {}",
                self.embed_dim, self.n_heads
            ));
        }
        if self.patch_size == 0 {
            return bad("patch_size must be positive".into());
        }
        for (name, s) in [
            ("patch_stride_time", self.patch_stride_time),
            ("patch_stride_freq", self.patch_stride_freq),
        ] {
            if s == 0 || s > self.patch_size {
                return bad(format!("{name} {s} must be in [1, {}]", self.patch_size));
            }
        }
        if !(self.max_duration_s > 0.0) || !(self.frame_hop_s > 0.0) {
            return bad("max_duration_s and frame_hop_s must be positive".into());
        }
        if !(self.mlp_ratio > 0.0) {
            return bad("mlp_ratio must be positive".into());
        }
        if let Some(n) = self.normalization {
            if !(n.std > 0.0) || !n.mean.is_finite() {
                return bad("normalization std must be positive and mean finite".into());
            }
        }
        let (nf, nt) = self.max_grid()?;
        if nf == 0 || nt == 0 {
            return bad("grid is empty".into());
        }
        Ok(())
    }

    /// Frame count every model input is padded or truncated to.
    pub fn max_frames(&self) -> usize {
        (self.max_duration_s / self.frame_hop_s).round() as usize
    }

    pub fn mlp_hidden(&self) -> usize {
        ((self.embed_dim as f64) * self.mlp_ratio).round() as usize
    }

    /// `(n_freq_patches, n_time_patches)` for a fully padded input.
    pub fn max_grid(&self) -> Result<(usize, usize), ModelError> {
        Ok((
            patches_per_axis(self.n_mels, self.patch_size, self.patch_stride_freq)?,
            patches_per_axis(self.max_frames(), self.patch_size, self.patch_stride_time)?,
        ))
    }

    /// Log-floor value used for padding frames, after optional normalization.
    pub fn pad_value(&self) -> f64 {
        let v = self.log_floor.ln();
        self.normalization.map_or(v, |n| n.apply(v))
    }
}

/// `floor((len - patch) / stride) + 1`.
pub fn patches_per_axis(len: usize, patch: usize, stride: usize) -> Result<usize, ModelError> {
    if len < patch {
        return Err(ModelError::TooSmall { len, patch });
    }
    Ok((len - patch) / stride + 1)
}
