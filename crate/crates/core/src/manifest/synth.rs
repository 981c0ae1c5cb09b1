//! SYNTHETIC corpus generator for tests and demos. Clips are harmonic
//! tones with syllable-rate envelopes, degraded by scripted gain, white
//! noise, low-pass coloration and dropouts. Labels are rule-derived from
//! the degradation parameters and carry no perceptual meaning.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dsp::{write_wav, AudioClip, DspError, WavEncoding, MODEL_SAMPLE_RATE};
use crate::scores::QualityScores;

use super::{Manifest, ManifestEntry, Provenance, Split};

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub clips: usize,
    pub seed: u64,
    pub duration_s: f64,
    pub languages: Vec<String>,
    /// Fractions of each language's clips assigned to train and val;
    /// the rest is test.
    pub train_fraction: f64,
    pub val_fraction: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            clips: 16,
            seed: 0,
            duration_s: 0.5,
            languages: vec!["ENG".into()],
            train_fraction: 0.7,
            val_fraction: 0.15,
        }
    }
}

/// Degradation parameters of one clip.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Degradation {
    pub gain_db: f64,
    pub snr_db: f64,
    pub cutoff_hz: f64,
    pub dropout: f64,
}

impl Degradation {
    fn sample(rng: &mut ChaCha8Rng) -> Self {
        Self {
            gain_db: rng.gen_range(-30.0..0.0),
            snr_db: rng.gen_range(0.0..40.0),
            cutoff_hz: 1000.0 * 20f64.powf(rng.gen_range(0.0..1.0)),
            dropout: rng.gen_range(0.0..0.3),
        }
    }

    /// Pseudo-labels in head order (MOS, Col, Dis, Loud, Noi), each in [1, 5].
    pub fn labels(&self) -> [f64; 5] {
        let unit = |v: f64| v.clamp(0.0, 1.0);
        let col = 1.0 + 4.0 * unit((self.cutoff_hz / 1000.0).ln() / 20f64.ln());
        let dis = 5.0 - 4.0 * unit(self.dropout / 0.3);
        let loud = 1.0 + 4.0 * unit((self.gain_db + 30.0) / 30.0);
        let noi = 1.0 + 4.0 * unit(self.snr_db / 40.0);
        let mos = (col + dis + loud + noi) / 4.0;
        [mos, col, dis, loud, noi].map(|v| (v * 1000.0).round() / 1000.0)
    }

    /// Coarse condition key: each parameter binned in quarters.
    pub fn condition_id(&self) -> String {
        let q = |v: f64| ((v.clamp(0.0, 0.999)) * 4.0) as usize;
        format!(
            "g{}s{}c{}d{}",
            q((self.gain_db + 30.0) / 30.0),
            q(self.snr_db / 40.0),
            q((self.cutoff_hz / 1000.0).ln() / 20f64.ln()),
            q(self.dropout / 0.3)
        )
    }
}

/// Render one degraded clip.
pub fn render_clip(deg: &Degradation, duration_s: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let sr = MODEL_SAMPLE_RATE as f64;
    let n = (duration_s * sr).round() as usize;
    let f0 = rng.gen_range(110.0..280.0);
    let syllable_hz = rng.gen_range(3.0..6.0);
    let phase = rng.gen_range(0.0..std::f64::consts::TAU);
    let mut clean: Vec<f64> = (0..n)
        .map(|i| {
            let t = i as f64 / sr;
            let env = 0.55 + 0.45 * (std::f64::consts::TAU * syllable_hz * t + phase).sin();
            let tone: f64 = (1..=8)
                .map(|h| (std::f64::consts::TAU * f0 * h as f64 * t).sin() / h as f64)
                .sum();
            env * tone
        })
        .collect();
    // One-pole low-pass for coloration.
    let alpha = 1.0 - (-std::f64::consts::TAU * deg.cutoff_hz / sr).exp();
    let mut state = 0.0;
    for v in clean.iter_mut() {
        state += alpha * (*v - state);
        *v = state;
    }
    let peak = clean.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
    let power = clean.iter().map(|v| v * v).sum::<f64>() / n.max(1) as f64;
    let noise_std = (power / 10f64.powf(deg.snr_db / 10.0)).sqrt();
    let gain = 10f64.powf(deg.gain_db / 20.0) * 0.9 / peak;
    let block = (0.02 * sr) as usize;
    let mut out: Vec<f64> = clean
        .iter()
        .map(|&v| {
            // Sum of uniforms approximates a Gaussian of unit variance.
            let g: f64 = (0..12).map(|_| rng.gen_range(0.0..1.0)).sum::<f64>() - 6.0;
            ((v + noise_std * g) * gain).clamp(-1.0, 1.0)
        })
        .collect();
    for chunk in out.chunks_mut(block) {
        if rng.gen_bool(deg.dropout) {
            chunk.iter_mut().for_each(|v| *v = 0.0);
        }
    }
    out
}

/// Generate clips and their manifest in memory. Audio paths are
/// `audio/<sample_id>.wav`.
pub fn generate(config: &SynthConfig) -> Result<(Manifest, Vec<AudioClip>), DspError> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut entries = Vec::with_capacity(config.clips);
    let mut clips = Vec::with_capacity(config.clips);
    let langs = config.languages.len().max(1);
    for i in 0..config.clips {
        let language = config
            .languages
            .get(i % langs)
            .cloned()
            .unwrap_or_else(|| "ENG".into());
        let nth = i / langs;
        let per_lang = config.clips / langs + usize::from(i % langs < config.clips % langs);
        let pos = nth as f64 / per_lang.max(1) as f64;
        let split = if pos < config.train_fraction {
            Split::Train
        } else if pos < config.train_fraction + config.val_fraction {
            Split::Val
        } else {
            Split::Test
        };
        let deg = Degradation::sample(&mut rng);
        let samples = render_clip(&deg, config.duration_s, &mut rng);
        clips.push(AudioClip::new(samples, MODEL_SAMPLE_RATE)?);
        let sample_id = format!("{}_{i:05}", language.to_ascii_lowercase());
        entries.push(ManifestEntry {
            audio_path: PathBuf::from("audio").join(format!("{sample_id}.wav")),
            sample_id,
            language,
            condition_id: deg.condition_id(),
            split,
            labels: QualityScores::from_options(deg.labels().map(Some)),
            provenance: Provenance::Objective,
        });
    }
    Ok((
        Manifest {
            entries,
            base_dir: PathBuf::new(),
        },
        clips,
    ))
}

/// Generate and write `manifest.csv` plus 16-bit WAV files under `dir`.
pub fn write_corpus(dir: &Path, config: &SynthConfig) -> Result<Manifest, DspError> {
    let (mut manifest, clips) = generate(config)?;
    std::fs::create_dir_all(dir.join("audio"))?;
    for (entry, clip) in manifest.entries.iter().zip(&clips) {
        write_wav(&dir.join(&entry.audio_path), clip, WavEncoding::Pcm16)?;
    }
    crate::io::write_atomic(&dir.join("manifest.csv"), manifest.to_csv().as_bytes())?;
    manifest.base_dir = dir.to_path_buf();
    Ok(manifest)
}
