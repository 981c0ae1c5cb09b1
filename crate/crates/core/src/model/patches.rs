use crate::dsp::LogMelSpectrogram;
use crate::tensor::Tensor;

use super::config::patches_per_axis;
use super::{ModelConfig, ModelError};

/// Flattened overlapping patches of a padded spectrogram.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchSequence {
    /// `n_patches × patch_size²`; each row is a patch read frequency-major
    /// (mel row by mel row, time within a row).
    pub patches: Tensor,
    /// `valid[i]` is false iff every frame of patch `i` is padding.
    pub valid: Vec<bool>,
    /// `(n_freq_patches, n_time_patches)`.
    pub grid: (usize, usize),
}

impl PatchSequence {
    pub fn len(&self) -> usize {
        self.valid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.valid.is_empty()
    }

    /// Grid coordinates of patch `i`.
    pub fn coords(&self, i: usize) -> (usize, usize) {
        (i / self.grid.1, i % self.grid.1)
    }
}

/// Pad or truncate to `config.max_frames()` and cut into patches.
pub fn extract_patches(
    spec: &LogMelSpectrogram,
    config: &ModelConfig,
) -> Result<PatchSequence, ModelError> {
    extract_patches_to(spec, config, config.max_frames())
}

/// As [`extract_patches`] but padding/truncating to `total_frames`, which
/// may be smaller than the configured maximum.
pub fn extract_patches_to(
    spec: &LogMelSpectrogram,
    config: &ModelConfig,
    total_frames: usize,
) -> Result<PatchSequence, ModelError> {
    if spec.n_mels != config.n_mels {
        return Err(ModelError::MelMismatch {
            found: spec.n_mels,
            expected: config.n_mels,
        });
    }
    let p = config.patch_size;
    let nf = patches_per_axis(spec.n_mels, p, config.patch_stride_freq)?;
    let nt = patches_per_axis(total_frames, p, config.patch_stride_time)?;
    let real_frames = spec.frames.min(total_frames);
    let pad = config.pad_value();
    let norm = config.normalization;
    let value = |frame: usize, bin: usize| -> f64 {
        if frame < real_frames {
            let v = spec.at(frame, bin);
            norm.map_or(v, |n| n.apply(v))
        } else {
            pad
        }
    };
    let mut patches = Tensor::zeros(nf * nt, p * p);
    let mut valid = Vec::with_capacity(nf * nt);
    for fi in 0..nf {
        let f0 = fi * config.patch_stride_freq;
        for ti in 0..nt {
            let t0 = ti * config.patch_stride_time;
            let row = patches.row_mut(fi * nt + ti);
            for df in 0..p {
                for dt in 0..p {
                    row[df * p + dt] = value(t0 + dt, f0 + df);
                }
            }
            valid.push(t0 < real_frames);
        }
    }
    Ok(PatchSequence {
        patches,
        valid,
        grid: (nf, nt),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn spec(frames: usize, mels: usize) -> LogMelSpectrogram {
        LogMelSpectrogram::new(frames, mels, (0..frames * mels).map(|i| i as f64).collect())
    }

    fn cfg(mels: usize, frames: usize, stride: usize) -> ModelConfig {
        ModelConfig {
            n_mels: mels,
            max_duration_s: frames as f64 * 0.01,
            patch_stride_time: stride,
            patch_stride_freq: stride,
            ..ModelConfig::desk()
        }
    }

    #[test]
    fn full_length_grid() {
        let s = extract_patches(&spec(1200, 128), &cfg(128, 1200, 10)).unwrap();
        assert_eq!(s.grid, (12, 119));
        assert_eq!(s.len(), 1428);
        assert!(s.valid.iter().all(|&v| v));
    }

    #[test]
    fn single_patch() {
        for stride in [1, 7, 16] {
            let s = extract_patches(&spec(16, 16), &cfg(16, 16, stride)).unwrap();
            assert_eq!(s.grid, (1, 1));
            assert_eq!(s.valid, vec![true]);
            // frequency-major flattening: element (df, dt) is spec[dt][df]
            assert_eq!(s.patches.get(0, 16 + 3), 3.0 * 16.0 + 1.0);
        }
    }

    #[test]
    fn padding_flags_follow_patch_start() {
        let s = extract_patches(&spec(600, 128), &cfg(128, 1200, 10)).unwrap();
        for i in 0..s.len() {
            let (_, ti) = s.coords(i);
            let t0 = ti * 10;
            let any_real = (t0..t0 + 16).any(|t| t < 600);
            assert_eq!(s.valid[i], any_real, "patch {i} at t0={t0}");
        }
        // patch starting at 590 covers 590..606 and straddles the boundary
        assert!(s.valid[59]);
        assert!(!s.valid[60]);
        let pad = 1e-10f64.ln();
        assert_eq!(s.patches.get(60, 0), pad);
    }

    #[test]
    fn narrow_input_is_an_error() {
        assert!(matches!(
            extract_patches(&spec(20, 8), &cfg(8, 20, 10)),
            Err(ModelError::TooSmall { .. })
        ));
        assert!(matches!(
            extract_patches(&spec(20, 64), &cfg(128, 20, 10)),
            Err(ModelError::MelMismatch { .. })
        ));
    }

    proptest! {
        #[test]
        fn patch_count_matches_floor_formula(
            frames in 16usize..200, mels in 16usize..64, patch in 1usize..16, st in 1usize..16, sf in 1usize..16,
        ) {
            let st = st.min(patch);
            let sf = sf.min(patch);
            let c = ModelConfig {
                n_mels: mels,
                patch_size: patch,
                patch_stride_time: st,
                patch_stride_freq: sf,
                max_duration_s: frames as f64 * 0.01,
                ..ModelConfig::desk()
            };
            let s = extract_patches(&spec(frames, mels), &c).unwrap();
            let nf = (mels - patch) / sf + 1;
            let nt = (frames - patch) / st + 1;
            prop_assert_eq!(s.grid, (nf, nt));
            prop_assert_eq!(s.patches.rows, nf * nt);
            prop_assert_eq!(s.patches.cols, patch * patch);
        }
    }
}
