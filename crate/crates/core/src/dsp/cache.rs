//! Binary feature cache: `u32 frames`, `u32 mels` (little-endian), then
//! `frames × mels` row-major little-endian `f32` values.

use std::path::Path;

use sha2::{Digest, Sha256};

use super::{DspError, LogMelSpectrogram};

pub fn encode_features(spec: &LogMelSpectrogram) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + spec.values.len() * 4);
    out.extend_from_slice(&(spec.frames as u32).to_le_bytes());
    out.extend_from_slice(&(spec.n_mels as u32).to_le_bytes());
    for &v in &spec.values {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn decode_features(bytes: &[u8], origin: &str) -> Result<LogMelSpectrogram, DspError> {
    let bad = |msg: String| DspError::Cache {
        path: origin.to_string(),
        msg,
    };
    if bytes.len() < 8 {
        return Err(bad(format!(
            "{} bytes is too short for the header",
            bytes.len()
        )));
    }
    let frames = u32::from_le_bytes(bytes[0..4].try_into().unwrap()) as usize;
    let mels = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let expected = frames
        .checked_mul(mels)
        .and_then(|n| n.checked_mul(4))
        .and_then(|n| n.checked_add(8))
        .ok_or_else(|| bad("dimensions overflow".into()))?;
    if bytes.len() != expected {
        return Err(bad(format!(
            "{frames}x{mels} header needs {expected} bytes, file has {}",
            bytes.len()
        )));
    }
    let values: Vec<f64> = bytes[8..]
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
        .collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(bad("contains non-finite values".into()));
    }
    Ok(LogMelSpectrogram::new(frames, mels, values))
}

/// Write atomically: data goes to a sibling temp file which is then renamed.
pub fn write_features(path: impl AsRef<Path>, spec: &LogMelSpectrogram) -> Result<(), DspError> {
    crate::io::write_atomic(path.as_ref(), &encode_features(spec))?;
    Ok(())
}

pub fn read_features(path: impl AsRef<Path>) -> Result<LogMelSpectrogram, DspError> {
    let path = path.as_ref();
    let bytes = std::fs::read(path)?;
    decode_features(&bytes, &path.display().to_string())
}

/// Hex SHA-256 of the cache encoding.
pub fn feature_digest(spec: &LogMelSpectrogram) -> String {
    hex::encode(Sha256::digest(encode_features(spec)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout_is_little_endian() {
        let spec = LogMelSpectrogram::new(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, -0.5]);
        let bytes = encode_features(&spec);
        assert_eq!(&bytes[0..8], &[2, 0, 0, 0, 3, 0, 0, 0]);
        assert_eq!(&bytes[8..12], &1.0f32.to_le_bytes());
        assert_eq!(bytes.len(), 8 + 24);
    }

    #[test]
    fn truncated_file_is_rejected() {
        let spec = LogMelSpectrogram::new(2, 2, vec![0.0; 4]);
        let bytes = encode_features(&spec);
        assert!(decode_features(&bytes[..bytes.len() - 1], "x").is_err());
        assert!(decode_features(&bytes[..5], "x").is_err());
    }

    proptest! {
        #[test]
        fn cache_round_trip_is_exact_at_f32(frames in 1usize..20, mels in 1usize..20, seed in any::<u64>()) {
            let values: Vec<f64> = (0..frames * mels)
                .map(|i| f64::from((((i as u64).wrapping_mul(seed | 1) % 10_000) as f32) / 37.0 - 100.0))
                .collect();
            let spec = LogMelSpectrogram::new(frames, mels, values);
            let back = decode_features(&encode_features(&spec), "mem").unwrap();
            prop_assert_eq!(back, spec);
        }
    }
}
