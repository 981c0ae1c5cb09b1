use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use super::{AudioClip, DspError, MODEL_SAMPLE_RATE};

/// Decode a PCM16 or float32 RIFF/WAVE file into a mono clip.
///
/// Stereo is averaged to mono. Integer samples are divided by 32768.
/// Anything not sampled at 48 kHz is rejected.
pub fn decode_wav(path: impl AsRef<Path>) -> Result<AudioClip, DspError> {
    let path = path.as_ref();
    let reader = WavReader::open(path).map_err(|e| DspError::Wav {
        path: path.display().to_string(),
        source: e,
    })?;
    let spec = reader.spec();
    let wav_err = |e| DspError::Wav {
        path: path.display().to_string(),
        source: e,
    };
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| f64::from(v) / 32768.0))
            .collect::<Result<_, _>>()
            .map_err(wav_err)?,
        (SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<Result<_, _>>()
            .map_err(wav_err)?,
        (fmt, bits) => {
            return Err(DspError::UnsupportedCodec(format!(
                "{}: {bits}-bit {fmt:?} samples (expected 16-bit PCM or 32-bit float)",
                path.display()
            )))
        }
    };
    let samples = match spec.channels {
        1 => interleaved,
        2 => interleaved
            .chunks_exact(2)
            .map(|lr| 0.5 * (lr[0] + lr[1]))
            .collect(),
        n => {
            return Err(DspError::UnsupportedCodec(format!(
                "{}: {n} channels (expected mono or stereo)",
                path.display()
            )))
        }
    };
    if spec.sample_rate != MODEL_SAMPLE_RATE {
        return Err(DspError::SampleRate {
            found: spec.sample_rate,
            expected: MODEL_SAMPLE_RATE,
        });
    }
    AudioClip::new(samples, spec.sample_rate)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WavEncoding {
    Pcm16,
    Float32,
}

/// Write a mono clip. PCM16 output scales by 32768 and saturates at the
/// integer limits.
pub fn write_wav(
    path: impl AsRef<Path>,
    clip: &AudioClip,
    encoding: WavEncoding,
) -> Result<(), DspError> {
    let path = path.as_ref();
    let wav_err = |e| DspError::Wav {
        path: path.display().to_string(),
        source: e,
    };
    let spec = WavSpec {
        channels: 1,
        sample_rate: clip.sample_rate,
        bits_per_sample: match encoding {
            WavEncoding::Pcm16 => 16,
            WavEncoding::Float32 => 32,
        },
        sample_format: match encoding {
            WavEncoding::Pcm16 => SampleFormat::Int,
            WavEncoding::Float32 => SampleFormat::Float,
        },
    };
    let mut writer = WavWriter::create(path, spec).map_err(wav_err)?;
    for &s in &clip.samples {
        match encoding {
            WavEncoding::Pcm16 => {
                let v = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
                writer.write_sample(v).map_err(wav_err)?;
            }
            WavEncoding::Float32 => writer.write_sample(s as f32).map_err(wav_err)?,
        }
    }
    writer.finalize().map_err(wav_err)
}
