//! Batch stages behind the command-line tool. Each stage reads and writes
//! on-disk artifacts, so any stage can be re-run on its own.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rayon::prelude::*;

use crate::calibration::{CalibrationPoint, CalibrationSet, GroupBy};
use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::dsp::{
    decode_wav, feature_digest, read_features, write_features, FrontendConfig, LogMelExtractor,
    LogMelSpectrogram,
};
use crate::eval::{evaluate, EvalReport, PredictionRecord};
use crate::manifest::{Manifest, ManifestEntry, Provenance, Split};
use crate::model::{AstModel, CnnModel, ModelKind, QualityModel};
use crate::scores::{Dimension, QualityScores};
use crate::train::{fit, gradcheck, History, Sample};

pub const FEATURE_EXT: &str = "feat";
pub const FEATURE_INDEX: &str = "features.csv";

/// Run `f` on a rayon pool of `jobs` threads (0 = rayon's default).
pub fn with_jobs<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .context("cannot build worker pool")?;
    Ok(pool.install(f))
}

pub fn feature_path(dir: &Path, sample_id: &str) -> PathBuf {
    dir.join(format!("{sample_id}.{FEATURE_EXT}"))
}

/// Where spectrograms come from: a feature cache directory written by
/// [`featurize`], or the audio files themselves.
pub struct FeatureSource {
    extractor: LogMelExtractor,
    cache: Option<PathBuf>,
}

impl FeatureSource {
    pub fn new(n_mels: usize, cache: Option<PathBuf>) -> Result<Self> {
        let extractor = LogMelExtractor::new(FrontendConfig {
            n_mels,
            ..FrontendConfig::default()
        })?;
        Ok(Self { extractor, cache })
    }

    pub fn spectrogram(
        &self,
        manifest: &Manifest,
        entry: &ManifestEntry,
    ) -> Result<LogMelSpectrogram> {
        match &self.cache {
            Some(dir) => Ok(read_features(feature_path(dir, &entry.sample_id))?),
            None => {
                let clip = decode_wav(manifest.resolve_audio(entry))?;
                self.extractor
                    .extract(&clip)
                    .with_context(|| format!("sample '{}'", entry.sample_id))
            }
        }
    }

    /// Spectrograms in entry order, computed in parallel.
    pub fn load_all(
        &self,
        manifest: &Manifest,
        entries: &[&ManifestEntry],
    ) -> Result<Vec<LogMelSpectrogram>> {
        entries
            .par_iter()
            .map(|e| self.spectrogram(manifest, e))
            .collect()
    }
}

/// Decode every clip, compute its log-Mel spectrogram and write
/// `<sample_id>.feat` plus an index with SHA-256 digests.
pub fn featurize(manifest: &Manifest, out_dir: &Path, n_mels: usize) -> Result<usize> {
    manifest.validate_audio()?;
    std::fs::create_dir_all(out_dir)
        .with_context(|| format!("cannot create {}", out_dir.display()))?;
    let source = FeatureSource::new(n_mels, None)?;
    let entries: Vec<&ManifestEntry> = manifest.entries.iter().collect();
    let digests: Vec<(String, usize, String)> = entries
        .par_iter()
        .map(|e| {
            let spec = source.spectrogram(manifest, e)?;
            write_features(feature_path(out_dir, &e.sample_id), &spec)?;
            Ok((e.sample_id.clone(), spec.frames, feature_digest(&spec)))
        })
        .collect::<Result<_>>()?;
    let mut index = String::from("sample_id,frames,sha256\n");
    for (id, frames, digest) in &digests {
        index.push_str(&format!("{id},{frames},{digest}\n"));
    }
    crate::io::write_atomic(&out_dir.join(FEATURE_INDEX), index.as_bytes())?;
    Ok(digests.len())
}

/// A model of either kind.
#[derive(Clone, Debug)]
pub enum AnyModel {
    Ast(AstModel),
    Cnn(CnnModel),
}

impl AnyModel {
    pub fn new(kind: ModelKind, config: &RunConfig) -> Result<Self> {
        Ok(match kind {
            ModelKind::Ast => AnyModel::Ast(AstModel::new(config.model_config()?, config.seed)?),
            ModelKind::Cnn => AnyModel::Cnn(CnnModel::new(config.cnn_config()?, config.seed)?),
        })
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            AnyModel::Ast(m) => m.kind(),
            AnyModel::Cnn(m) => m.kind(),
        }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<(Self, RunConfig)> {
        let config = RunConfig::parse(&ckpt.config_echo).context("checkpoint config echo")?;
        let params = ckpt.params.clone();
        let model = match ckpt.kind {
            ModelKind::Ast => AnyModel::Ast(AstModel::from_params(config.model_config()?, params)?),
            ModelKind::Cnn => AnyModel::Cnn(CnnModel::from_params(config.cnn_config()?, params)?),
        };
        Ok((model, config))
    }

    pub fn checkpoint(&self, config: &RunConfig) -> Checkpoint {
        let params = match self {
            AnyModel::Ast(m) => m.params().clone(),
            AnyModel::Cnn(m) => m.params().clone(),
        };
        Checkpoint {
            kind: self.kind(),
            config_echo: config.resolved(self.kind()).echo(),
            params,
        }
    }

    /// Clipped scores for each spectrogram, in order.
    pub fn predict_all(&self, specs: &[LogMelSpectrogram]) -> Result<Vec<QualityScores>> {
        fn run<M: QualityModel>(m: &M, specs: &[LogMelSpectrogram]) -> Result<Vec<QualityScores>> {
            specs.par_iter().map(|s| Ok(m.predict(s)?)).collect()
        }
        match self {
            AnyModel::Ast(m) => run(m, specs),
            AnyModel::Cnn(m) => run(m, specs),
        }
    }
}

fn samples<M: QualityModel>(
    model: &M,
    specs: &[LogMelSpectrogram],
    entries: &[&ManifestEntry],
) -> Result<Vec<Sample<M::Input>>> {
    specs
        .par_iter()
        .zip(entries)
        .map(|(s, e)| {
            Ok(Sample {
                input: model.prepare(s)?,
                labels: e.labels,
            })
        })
        .collect()
}

fn fit_model<M: QualityModel>(
    model: &mut M,
    train: (&[LogMelSpectrogram], &[&ManifestEntry]),
    val: (&[LogMelSpectrogram], &[&ManifestEntry]),
    config: &crate::train::TrainConfig,
) -> Result<History> {
    let tr = samples(model, train.0, train.1)?;
    let va = samples(model, val.0, val.1)?;
    Ok(fit(model, &tr, &va, config)?.history)
}

pub struct TrainOutput {
    pub checkpoint: Checkpoint,
    pub history: History,
}

/// Train on the manifest's `train` split, validating on `val`.
pub fn train(
    kind: ModelKind,
    config: &RunConfig,
    manifest: &Manifest,
    features: Option<PathBuf>,
) -> Result<TrainOutput> {
    let train_cfg = config.train_config(kind)?;
    if train_cfg.max_epochs == 0 {
        bail!(crate::train::TrainError::NoTraining);
    }
    let tr = manifest.split(Split::Train);
    let va = manifest.split(Split::Val);
    if tr.is_empty() || va.is_empty() {
        bail!(
            "manifest needs both train and val rows (found {} train, {} val)",
            tr.len(),
            va.len()
        );
    }
    let source = FeatureSource::new(config.n_mels, features)?;
    let tr_specs = source.load_all(manifest, &tr)?;
    let va_specs = source.load_all(manifest, &va)?;
    let mut model = AnyModel::new(kind, config)?;
    let history = match &mut model {
        AnyModel::Ast(m) => fit_model(m, (&tr_specs, &tr), (&va_specs, &va), &train_cfg)?,
        AnyModel::Cnn(m) => fit_model(m, (&tr_specs, &tr), (&va_specs, &va), &train_cfg)?,
    };
    Ok(TrainOutput {
        checkpoint: model.checkpoint(config),
        history,
    })
}

/// Predict every manifest entry (optionally one split) with a checkpoint.
pub fn predict(
    ckpt: &Checkpoint,
    manifest: &Manifest,
    features: Option<PathBuf>,
    split: Option<Split>,
) -> Result<Vec<PredictionRecord>> {
    let (model, config) = AnyModel::from_checkpoint(ckpt)?;
    let entries: Vec<&ManifestEntry> = manifest
        .entries
        .iter()
        .filter(|e| split.is_none_or(|s| e.split == s))
        .collect();
    let source = FeatureSource::new(config.n_mels, features)?;
    let specs = source.load_all(manifest, &entries)?;
    let scores = model.predict_all(&specs)?;
    Ok(entries
        .iter()
        .zip(scores)
        .map(|(e, pred)| PredictionRecord {
            sample_id: e.sample_id.clone(),
            language: e.language.clone(),
            provenance: e.provenance,
            pred,
            label: e.labels,
        })
        .collect())
}

/// Pair each prediction with its manifest labels.
fn join_labels<'a>(
    preds: &'a [PredictionRecord],
    manifest: &'a Manifest,
) -> Result<Vec<(&'a PredictionRecord, &'a ManifestEntry)>> {
    let by_id = manifest.by_id();
    preds
        .iter()
        .map(|p| {
            by_id
                .get(p.sample_id.as_str())
                .map(|e| (p, *e))
                .with_context(|| format!("prediction for '{}' has no manifest row", p.sample_id))
        })
        .collect()
}

pub fn calibrate(
    preds: &[PredictionRecord],
    labels: &Manifest,
    group: GroupBy,
    dims: &[Dimension],
) -> Result<CalibrationSet> {
    let joined = join_labels(preds, labels)?;
    let mut set = CalibrationSet::default();
    for &d in dims {
        let points: Vec<CalibrationPoint> = joined
            .iter()
            .filter_map(|(p, e)| {
                Some(CalibrationPoint {
                    group: group.key(&e.language),
                    pred: p.pred.get(d)?,
                    subj: e.labels.get(d)?,
                })
            })
            .collect();
        set.fit_dimension(d, &points)?;
    }
    Ok(set)
}

/// PCC and RMSE reports. Labels come from the manifest; `provenance`
/// restricts which labels count.
pub fn evaluate_predictions(
    preds: &[PredictionRecord],
    labels: &Manifest,
    calibration: Option<(&CalibrationSet, GroupBy)>,
    reference: &str,
    provenance: Option<Provenance>,
) -> Result<(EvalReport, EvalReport)> {
    let joined = join_labels(preds, labels)?;
    let mut p_scores = Vec::with_capacity(joined.len());
    let mut l_scores = Vec::with_capacity(joined.len());
    let mut langs = Vec::with_capacity(joined.len());
    for (p, e) in joined {
        if provenance.is_some_and(|want| e.provenance != want) {
            continue;
        }
        let mut pred = p.pred;
        if let Some((set, group)) = calibration {
            for d in Dimension::ALL {
                if let Some(v) = pred.get(d) {
                    pred.set(d, Some(set.apply(group.key(&e.language), d, v)?));
                }
            }
        }
        p_scores.push(pred);
        l_scores.push(e.labels);
        langs.push(e.language.clone());
    }
    evaluate(&p_scores, &l_scores, &langs, reference).map_err(anyhow::Error::msg)
}

/// Gradient checks of every primitive and both models, built from `config`
/// with inputs `gradcheck_duration_s` long.
const GRADCHECK_BIAS_OFFSET: f64 = 0.05;

pub fn run_gradcheck(config: &RunConfig) -> Result<Vec<gradcheck::GradCheck>> {
    let mut out = gradcheck::check_primitives(config.seed, config.gradcheck_step);
    let small = RunConfig {
        max_duration_s: config.gradcheck_duration_s,
        ..config.clone()
    };
    let mcfg = small.model_config()?;
    let frames = mcfg.max_frames();
    let real = frames
        .saturating_sub(config.patch_size)
        .max(config.patch_size)
        .min(frames);
    let spec = probe_spectrogram(real, config.n_mels, config.seed);
    let targets = [3.2, 2.1, 4.4, 1.7, 3.9];
    let mut ast = AstModel::new(mcfg, config.seed)?;
    gradcheck::offset_biases(ast.params_mut(), GRADCHECK_BIAS_OFFSET, config.seed);
    let input = ast.prepare(&spec)?;
    for mut c in gradcheck::check_model(
        &ast,
        &input,
        targets,
        config.gradcheck_coords,
        config.gradcheck_step,
        config.seed,
    )? {
        c.name = format!("ast.{}", c.name);
        out.push(c);
    }
    let mut cnn = CnnModel::new(small.cnn_config()?, config.seed)?;
    gradcheck::offset_biases(cnn.params_mut(), GRADCHECK_BIAS_OFFSET, config.seed);
    let input = cnn.prepare(&spec)?;
    for mut c in gradcheck::check_model(
        &cnn,
        &input,
        targets,
        config.gradcheck_coords,
        config.gradcheck_step,
        config.seed,
    )? {
        c.name = format!("cnn.{}", c.name);
        out.push(c);
    }
    Ok(out)
}

/// Smooth pseudo-spectrogram with values in a log-energy-like range.
pub fn probe_spectrogram(frames: usize, n_mels: usize, seed: u64) -> LogMelSpectrogram {
    let phase = (seed % 97) as f64 * 0.1;
    let values = (0..frames * n_mels)
        .map(|i| {
            let (t, m) = ((i / n_mels) as f64, (i % n_mels) as f64);
            -6.0 + 2.5 * (0.37 * t + phase).sin() * (0.11 * m).cos()
                + 0.8 * (0.05 * m * t + 0.3).sin()
        })
        .collect();
    LogMelSpectrogram::new(frames, n_mels, values)
}

/// Digests of the feature cache index, keyed by sample id.
pub fn read_feature_index(dir: &Path) -> Result<HashMap<String, String>> {
    let path = dir.join(FEATURE_INDEX);
    let text = std::fs::read_to_string(&path)
        .with_context(|| format!("cannot read {}", path.display()))?;
    Ok(text
        .lines()
        .skip(1)
        .filter_map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f.len() == 3).then(|| (f[0].to_string(), f[2].to_string()))
        })
        .collect())
}
