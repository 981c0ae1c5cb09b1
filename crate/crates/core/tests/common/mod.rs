#![allow(dead_code)]

use std::path::PathBuf;

use sqa_core::dsp::{FrontendConfig, LogMelExtractor, LogMelSpectrogram};
use sqa_core::manifest::synth::{generate, SynthConfig};
use sqa_core::manifest::Manifest;
use sqa_core::model::{CnnConfig, ModelConfig};

pub fn fixture_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

/// A published results table: rows of (language, five cells in Col, Dis,
/// Loud, MOS, Noi order) with the reference first, then the printed range.
pub struct PublishedTable {
    pub name: &'static str,
    pub metric: &'static str,
    pub reference: &'static str,
    pub rows: [(&'static str, [f64; 5]); 6],
    pub range: [f64; 5],
}

pub const CNN_PCC: PublishedTable = PublishedTable {
    name: "cnn baseline PCC",
    metric: "PCC",
    reference: "ENG",
    rows: [
        ("ENG", [0.759, 0.363, 0.586, 0.718, 0.879]),
        ("MAN", [0.799, 0.815, 0.769, 0.835, 0.927]),
        ("FR", [0.764, 0.794, 0.511, 0.826, 0.856]),
        ("DE", [0.665, 0.728, 0.574, 0.800, 0.808]),
        ("SE", [0.641, 0.698, 0.544, 0.673, 0.798]),
        ("NL", [0.622, 0.726, 0.622, 0.798, 0.641]),
    ],
    range: [0.18, 0.12, 0.26, 0.16, 0.29],
};

pub const CNN_RMSE: PublishedTable = PublishedTable {
    name: "cnn baseline RMSE",
    metric: "RMSE",
    reference: "ENG",
    rows: [
        ("ENG", [0.302, 0.357, 0.326, 0.280, 0.480]),
        ("MAN", [0.386, 0.439, 0.282, 0.568, 0.289]),
        ("FR", [0.361, 0.429, 0.295, 0.518, 0.376]),
        ("DE", [0.406, 0.460, 0.251, 0.499, 0.385]),
        ("SE", [0.333, 0.411, 0.297, 0.627, 0.319]),
        ("NL", [0.408, 0.564, 0.364, 0.539, 0.477]),
    ],
    range: [0.07, 0.15, 0.11, 0.13, 0.19],
};

pub const AST_PCC: PublishedTable = PublishedTable {
    name: "transformer PCC",
    metric: "PCC",
    reference: "EN",
    rows: [
        ("EN", [0.814, 0.359, 0.605, 0.701, 0.875]),
        ("MAN", [0.768, 0.550, 0.618, 0.792, 0.899]),
        ("SE", [0.631, 0.651, 0.601, 0.649, 0.768]),
        ("DE", [0.662, 0.658, 0.571, 0.768, 0.808]),
        ("FR", [0.732, 0.728, 0.496, 0.790, 0.827]),
        ("NL", [0.583, 0.737, 0.715, 0.790, 0.706]),
    ],
    range: [0.19, 0.19, 0.22, 0.14, 0.19],
};

pub const AST_RMSE: PublishedTable = PublishedTable {
    name: "transformer RMSE",
    metric: "RMSE",
    reference: "EN",
    rows: [
        ("EN", [0.263, 0.363, 0.308, 0.290, 0.489]),
        ("MAN", [0.375, 0.463, 0.350, 0.454, 0.431]),
        ("SE", [0.323, 0.418, 0.252, 0.641, 0.329]),
        ("DE", [0.405, 0.498, 0.264, 0.505, 0.413]),
        ("FR", [0.331, 0.442, 0.260, 0.525, 0.333]),
        ("NL", [0.414, 0.557, 0.298, 0.553, 0.473]),
    ],
    range: [0.09, 0.14, 0.10, 0.19, 0.14],
};

pub const ALL_TABLES: [&PublishedTable; 4] = [&CNN_PCC, &CNN_RMSE, &AST_PCC, &AST_RMSE];

/// Samples per language in the per-sample CNN PCC fixture.
pub const FIXTURE_N: usize = 8;

/// Orthonormal zero-mean vectors of length `FIXTURE_N`: a linear and a
/// quadratic contrast.
fn contrasts() -> (Vec<f64>, Vec<f64>) {
    let n = FIXTURE_N as f64;
    let mid = (n - 1.0) / 2.0;
    let a: Vec<f64> = (0..FIXTURE_N).map(|i| i as f64 - mid).collect();
    let qm = a.iter().map(|v| v * v).sum::<f64>() / n;
    let b: Vec<f64> = a.iter().map(|v| v * v - qm).collect();
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let (na, nb) = (norm(&a), norm(&b));
    (
        a.iter().map(|v| v / na).collect(),
        b.iter().map(|v| v / nb).collect(),
    )
}

/// Manifest and predictions CSV text whose per-language PCC for each
/// dimension equals the published CNN baseline PCC cell: labels are
/// `3 + a`, predictions `3 + r·a + sqrt(1 − r²)·b` with `a ⊥ b`, both
/// unit-norm and zero-mean.
pub fn cnn_pcc_fixture() -> (String, String) {
    let (a, b) = contrasts();
    // Table columns (Col, Dis, Loud, MOS, Noi) to head order (MOS, Col, Dis, Loud, Noi).
    let head_from_table = [3, 0, 1, 2, 4];
    let mut manifest = String::from(
        "# sqa-manifest v1\nsample_id,audio_path,language,condition_id,split,mos,col,dis,loud,noi,provenance\n",
    );
    let mut preds = String::from(
        "sample_id,language,provenance,pred_mos,pred_col,pred_dis,pred_loud,pred_noi,label_mos,label_col,label_dis,label_loud,label_noi\n",
    );
    for (lang, cells) in CNN_PCC.rows {
        for i in 0..FIXTURE_N {
            let id = format!("{}_{i}", lang.to_ascii_lowercase());
            let label = 3.0 + a[i];
            let pred: Vec<f64> = head_from_table
                .iter()
                .map(|&t| {
                    let r = cells[t];
                    3.0 + r * a[i] + (1.0 - r * r).sqrt() * b[i]
                })
                .collect();
            let labels = vec![label.to_string(); 5].join(",");
            manifest.push_str(&format!(
                "{id},audio/{id}.wav,{lang},c{i},test,{labels},subjective\n"
            ));
            let p: Vec<String> = pred.iter().map(|v| v.to_string()).collect();
            preds.push_str(&format!(
                "{id},{lang},subjective,{},{labels}\n",
                p.join(",")
            ));
        }
    }
    (manifest, preds)
}

/// Short-input front end and model configurations for training tests.
pub const SHORT_DURATION_S: f64 = 0.64;
pub const CLIP_DURATION_S: f64 = 0.5;

pub fn short_ast_config() -> ModelConfig {
    ModelConfig {
        max_duration_s: SHORT_DURATION_S,
        ..ModelConfig::desk()
    }
}

pub fn short_cnn_config() -> CnnConfig {
    CnnConfig {
        max_duration_s: SHORT_DURATION_S,
        ..CnnConfig::default()
    }
}

/// A seeded synthetic corpus and its spectrograms.
pub fn synthetic_corpus(clips: usize, seed: u64) -> (Manifest, Vec<LogMelSpectrogram>) {
    let (manifest, audio) = generate(&SynthConfig {
        clips,
        seed,
        duration_s: CLIP_DURATION_S,
        train_fraction: 1.0,
        val_fraction: 0.0,
        ..SynthConfig::default()
    })
    .expect("synthetic corpus");
    let fe = LogMelExtractor::new(FrontendConfig::default()).expect("front end");
    let specs = audio
        .iter()
        .map(|c| fe.extract(c).expect("features"))
        .collect();
    (manifest, specs)
}

/// Spectrogram of `frames` rows with seeded uniform values in [-12, 2).
pub fn random_spectrogram(frames: usize, n_mels: usize, seed: u64) -> LogMelSpectrogram {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let values = (0..frames * n_mels)
        .map(|_| rng.gen_range(-12.0..2.0))
        .collect();
    LogMelSpectrogram::new(frames, n_mels, values)
}
