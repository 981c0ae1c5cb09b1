//! Audio decoding and the log-Mel front end shared by both models.

mod cache;
mod mel;
mod wav;

pub use cache::{decode_features, encode_features, feature_digest, read_features, write_features};
pub use mel::{
    hann_window, hz_to_mel, log_mel_spectrogram, mel_filterbank, mel_to_hz, LogMelExtractor,
    MelFilterbank,
};
pub use wav::{decode_wav, write_wav, WavEncoding};

use thiserror::Error;

pub const MODEL_SAMPLE_RATE: u32 = 48_000;

#[derive(Debug, Error)]
pub enum DspError {
    #[error("cannot read WAV file {path}: {source}")]
    Wav {
        path: String,
        #[source]
        source: hound::Error,
    },
    #[error("unsupported audio encoding: {0}")]
    UnsupportedCodec(String),
    #[error("sample rate {found} Hz is not supported; resample to {expected} Hz first")]
    SampleRate { found: u32, expected: u32 },
    #[error("audio clip is empty")]
    EmptyClip,
    #[error("audio sample {index} is not finite")]
    NonFiniteSample { index: usize },
    #[error("clip has {samples} samples, shorter than one {window}-sample window")]
    ClipTooShort { samples: usize, window: usize },
    #[error("log-Mel output is not finite at frame {frame}, bin {bin}")]
    NonFiniteOutput { frame: usize, bin: usize },
    #[error("invalid front-end configuration: {0}")]
    Config(String),
    #[error("mel filter {row} has no positive weight; too many mel bins for FFT size {n_fft}")]
    EmptyFilter { row: usize, n_fft: usize },
    #[error("feature file {path}: {msg}")]
    Cache { path: String, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Mono waveform with its sample rate.
#[derive(Clone, Debug, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self, DspError> {
        if samples.is_empty() {
            return Err(DspError::EmptyClip);
        }
        if let Some(index) = samples.iter().position(|s| !s.is_finite()) {
            return Err(DspError::NonFiniteSample { index });
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / f64::from(self.sample_rate)
    }
}

/// Front-end parameters. Defaults: 48 kHz, 25 ms Hann window, 10 ms hop,
/// 2048-point FFT, 128 HTK mel bands over 0 Hz to Nyquist, natural log
/// floored at 1e-10.
#[derive(Clone, Debug, PartialEq)]
pub struct FrontendConfig {
    pub sample_rate: u32,
    pub frame_len_s: f64,
    pub frame_hop_s: f64,
    pub n_fft: usize,
    pub n_mels: usize,
    pub f_min: f64,
    pub f_max: f64,
    pub log_floor: f64,
}

impl Default for FrontendConfig {
    fn default() -> Self {
        Self {
            sample_rate: MODEL_SAMPLE_RATE,
            frame_len_s: 0.025,
            frame_hop_s: 0.010,
            n_fft: 2048,
            n_mels: 128,
            f_min: 0.0,
            f_max: f64::from(MODEL_SAMPLE_RATE) / 2.0,
            log_floor: 1e-10,
        }
    }
}

impl FrontendConfig {
    pub fn window_samples(&self) -> usize {
        (self.frame_len_s * f64::from(self.sample_rate)).round() as usize
    }

    pub fn hop_samples(&self) -> usize {
        (self.frame_hop_s * f64::from(self.sample_rate)).round() as usize
    }

    /// Frames produced for a clip of `num_samples` samples, or `None` when
    /// the clip is shorter than one window.
    pub fn frame_count(&self, num_samples: usize) -> Option<usize> {
        let win = self.window_samples();
        (num_samples >= win).then(|| (num_samples - win) / self.hop_samples() + 1)
    }

    /// Log value of silent bins.
    pub fn floor_value(&self) -> f64 {
        self.log_floor.ln()
    }

    pub fn validate(&self) -> Result<(), DspError> {
        let win = self.window_samples();
        if win == 0 || self.hop_samples() == 0 {
            return Err(DspError::Config(
                "window and hop must be at least one sample".into(),
            ));
        }
        if !self.n_fft.is_power_of_two() || self.n_fft < win {
            return Err(DspError::Config(format!(
                "n_fft {} must be a power of two no smaller than the {win}-sample window",
                self.n_fft
            )));
        }
        if self.n_mels == 0 {
            return Err(DspError::Config("n_mels must be at least 1".into()));
        }
        if !(self.log_floor > 0.0) {
            return Err(DspError::Config("log floor must be positive".into()));
        }
        Ok(())
    }
}

/// Log energies, `frames × n_mels`, row-major (one row per frame).
#[derive(Clone, Debug, PartialEq)]
pub struct LogMelSpectrogram {
    pub values: Vec<f64>,
    pub frames: usize,
    pub n_mels: usize,
    pub frame_hop_s: f64,
    pub frame_len_s: f64,
}

impl LogMelSpectrogram {
    pub fn new(frames: usize, n_mels: usize, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), frames * n_mels, "spectrogram size mismatch");
        let cfg = FrontendConfig::default();
        Self {
            values,
            frames,
            n_mels,
            frame_hop_s: cfg.frame_hop_s,
            frame_len_s: cfg.frame_len_s,
        }
    }

    #[inline]
    pub fn at(&self, frame: usize, bin: usize) -> f64 {
        self.values[frame * self.n_mels + bin]
    }

    pub fn frame(&self, frame: usize) -> &[f64] {
        &self.values[frame * self.n_mels..(frame + 1) * self.n_mels]
    }

    /// Pad with `fill` or truncate along time to exactly `frames` rows.
    pub fn fit_frames(&self, frames: usize, fill: f64) -> LogMelSpectrogram {
        let mut values = Vec::with_capacity(frames * self.n_mels);
        let keep = self.frames.min(frames);
        values.extend_from_slice(&self.values[..keep * self.n_mels]);
        values.resize(frames * self.n_mels, fill);
        LogMelSpectrogram {
            values,
            frames,
            ..self.clone()
        }
    }
}
