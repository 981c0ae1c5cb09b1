use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::{AudioClip, DspError, FrontendConfig, LogMelSpectrogram};

/// HTK mel scale.
pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Symmetric Hann window, `w[i] == w[n-1-i]` bit for bit.
pub fn hann_window(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![1.0];
    }
    let denom = (n - 1) as f64;
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let v = 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / denom).cos();
        w[i] = v;
        w[n - 1 - i] = v;
    }
    w
}

/// Triangular mel filters over the one-sided spectrum.
#[derive(Clone, Debug, PartialEq)]
pub struct MelFilterbank {
    pub n_mels: usize,
    pub n_bins: usize,
    /// `n_mels × n_bins`, row-major.
    pub weights: Vec<f64>,
    /// Peak frequency of each filter, in hertz.
    pub centers_hz: Vec<f64>,
    // non-zero column span of each row, for sparse application
    spans: Vec<(usize, usize)>,
}

impl MelFilterbank {
    pub fn row(&self, m: usize) -> &[f64] {
        &self.weights[m * self.n_bins..(m + 1) * self.n_bins]
    }

    /// Filterbank energies of one power spectrum (`n_bins` long).
    pub fn apply(&self, power: &[f64], out: &mut [f64]) {
        for (m, o) in out.iter_mut().enumerate() {
            let (lo, hi) = self.spans[m];
            let row = &self.weights[m * self.n_bins..];
            *o = (lo..hi).map(|k| row[k] * power[k]).sum();
        }
    }
}

/// HTK-scale filterbank spanning 0 Hz to Nyquist.
pub fn mel_filterbank(
    n_mels: usize,
    n_fft: usize,
    sample_rate: u32,
) -> Result<MelFilterbank, DspError> {
    mel_filterbank_range(
        n_mels,
        n_fft,
        sample_rate,
        0.0,
        f64::from(sample_rate) / 2.0,
    )
}

pub fn mel_filterbank_range(
    n_mels: usize,
    n_fft: usize,
    sample_rate: u32,
    f_min: f64,
    f_max: f64,
) -> Result<MelFilterbank, DspError> {
    if n_mels == 0 {
        return Err(DspError::Config("n_mels must be at least 1".into()));
    }
    if !n_fft.is_power_of_two() || n_fft < 2 {
        return Err(DspError::Config(format!(
            "n_fft {n_fft} is not a power of two"
        )));
    }
    if !(f_max > f_min && f_min >= 0.0) {
        return Err(DspError::Config(format!(
            "bad mel frequency range {f_min}..{f_max}"
        )));
    }
    let n_bins = n_fft / 2 + 1;
    let (mel_lo, mel_hi) = (hz_to_mel(f_min), hz_to_mel(f_max));
    let edges: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(mel_lo + (mel_hi - mel_lo) * i as f64 / (n_mels + 1) as f64))
        .collect();
    let bin_hz = f64::from(sample_rate) / n_fft as f64;
    let mut weights = vec![0.0; n_mels * n_bins];
    let mut spans = Vec::with_capacity(n_mels);
    for m in 0..n_mels {
        let (left, center, right) = (edges[m], edges[m + 1], edges[m + 2]);
        let row = &mut weights[m * n_bins..(m + 1) * n_bins];
        let (mut lo, mut hi) = (n_bins, 0);
        for (k, w) in row.iter_mut().enumerate() {
            let f = k as f64 * bin_hz;
            let up = (f - left) / (center - left);
            let down = (right - f) / (right - center);
            let v = up.min(down).max(0.0);
            if v > 0.0 {
                *w = v;
                lo = lo.min(k);
                hi = k + 1;
            }
        }
        if hi == 0 {
            return Err(DspError::EmptyFilter { row: m, n_fft });
        }
        spans.push((lo, hi));
    }
    Ok(MelFilterbank {
        n_mels,
        n_bins,
        weights,
        centers_hz: edges[1..=n_mels].to_vec(),
        spans,
    })
}

/// Reusable extractor holding the window, filterbank and FFT plan.
pub struct LogMelExtractor {
    config: FrontendConfig,
    window: Vec<f64>,
    filterbank: MelFilterbank,
    fft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for LogMelExtractor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LogMelExtractor")
            .field("config", &self.config)
            .finish()
    }
}

impl LogMelExtractor {
    pub fn new(config: FrontendConfig) -> Result<Self, DspError> {
        config.validate()?;
        let window = hann_window(config.window_samples());
        let filterbank = mel_filterbank_range(
            config.n_mels,
            config.n_fft,
            config.sample_rate,
            config.f_min,
            config.f_max,
        )?;
        let fft = FftPlanner::new().plan_fft_forward(config.n_fft);
        Ok(Self {
            config,
            window,
            filterbank,
            fft,
        })
    }

    pub fn config(&self) -> &FrontendConfig {
        &self.config
    }

    pub fn filterbank(&self) -> &MelFilterbank {
        &self.filterbank
    }

    pub fn window(&self) -> &[f64] {
        &self.window
    }

    pub fn extract(&self, clip: &AudioClip) -> Result<LogMelSpectrogram, DspError> {
        let cfg = &self.config;
        if clip.sample_rate != cfg.sample_rate {
            return Err(DspError::SampleRate {
                found: clip.sample_rate,
                expected: cfg.sample_rate,
            });
        }
        let win = self.window.len();
        let hop = cfg.hop_samples();
        let frames = cfg
            .frame_count(clip.samples.len())
            .ok_or(DspError::ClipTooShort {
                samples: clip.samples.len(),
                window: win,
            })?;
        let n_bins = self.filterbank.n_bins;
        let mut buf = vec![Complex::new(0.0, 0.0); cfg.n_fft];
        let mut scratch = vec![Complex::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
        let mut power = vec![0.0; n_bins];
        let mut values = vec![0.0; frames * cfg.n_mels];
        for t in 0..frames {
            let seg = &clip.samples[t * hop..t * hop + win];
            for (b, (s, w)) in buf.iter_mut().zip(seg.iter().zip(&self.window)) {
                *b = Complex::new(s * w, 0.0);
            }
            for b in &mut buf[win..] {
                *b = Complex::new(0.0, 0.0);
            }
            self.fft.process_with_scratch(&mut buf, &mut scratch);
            for (p, c) in power.iter_mut().zip(&buf) {
                *p = c.norm_sqr();
            }
            let row = &mut values[t * cfg.n_mels..(t + 1) * cfg.n_mels];
            self.filterbank.apply(&power, row);
            for (bin, v) in row.iter_mut().enumerate() {
                *v = v.max(cfg.log_floor).ln();
                if !v.is_finite() {
                    return Err(DspError::NonFiniteOutput { frame: t, bin });
                }
            }
        }
        Ok(LogMelSpectrogram {
            values,
            frames,
            n_mels: cfg.n_mels,
            frame_hop_s: cfg.frame_hop_s,
            frame_len_s: cfg.frame_len_s,
        })
    }
}

/// One-shot convenience over [`LogMelExtractor`].
pub fn log_mel_spectrogram(
    clip: &AudioClip,
    config: &FrontendConfig,
) -> Result<LogMelSpectrogram, DspError> {
    LogMelExtractor::new(config.clone())?.extract(clip)
}
