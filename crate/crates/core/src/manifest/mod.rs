//! Corpus manifest: one CSV row per clip binding audio to language,
//! condition, split and the five optional labels.
//!
//! ```text
//! # sqa-manifest v1
//! sample_id,audio_path,language,condition_id,split,mos,col,dis,loud,noi,provenance
//! nl_0001,audio/nl_0001.wav,NL,c17,test,3.2,,,,,subjective
//! ```
//!
//! The tag line is optional; when present it must name version 1. Empty
//! label fields are absent labels. Audio paths are relative to the manifest.

pub mod synth;

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use thiserror::Error;

use crate::scores::{Dimension, QualityScores, SCORE_MAX, SCORE_MIN};

pub const MANIFEST_TAG: &str = "# sqa-manifest v1";
pub const MANIFEST_COLUMNS: [&str; 11] = [
    "sample_id",
    "audio_path",
    "language",
    "condition_id",
    "split",
    "mos",
    "col",
    "dis",
    "loud",
    "noi",
    "provenance",
];
/// Languages with fewer samples than this are flagged in summaries.
pub const MIN_SAMPLES_PER_LANGUAGE: usize = 1000;

/// Language codes used in the evaluation tables; any other code is allowed.
pub const KNOWN_LANGUAGES: [&str; 6] = ["ENG", "DE", "FR", "MAN", "SE", "NL"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl FromStr for Split {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(format!(
                "unknown split '{other}' (expected train, val or test)"
            )),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

/// Whether labels come from listeners or from an objective model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Provenance {
    Subjective,
    Objective,
}

impl FromStr for Provenance {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "subjective" => Ok(Provenance::Subjective),
            "objective" => Ok(Provenance::Objective),
            other => Err(format!(
                "unknown provenance '{other}' (expected subjective or objective)"
            )),
        }
    }
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Provenance::Subjective => "subjective",
            Provenance::Objective => "objective",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestEntry {
    pub sample_id: String,
    pub audio_path: PathBuf,
    pub language: String,
    pub condition_id: String,
    pub split: Split,
    pub labels: QualityScores,
    pub provenance: Provenance,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RowError {
    pub line: u64,
    pub message: String,
}

impl fmt::Display for RowError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("cannot read manifest {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("manifest CSV error: {0}")]
    Csv(#[from] csv::Error),
    #[error("manifest header is missing column(s): {0}")]
    MissingColumns(String),
    #[error("unsupported manifest version tag '{0}'")]
    Version(String),
    #[error("{} malformed manifest row(s):\n{}", .0.len(), join_rows(.0))]
    Rows(Vec<RowError>),
    #[error("{} referenced audio file(s) missing, first: {}", .0.len(), .0[0].display())]
    MissingAudio(Vec<PathBuf>),
}

fn join_rows(rows: &[RowError]) -> String {
    rows.iter()
        .map(|r| format!("  {r}"))
        .collect::<Vec<_>>()
        .join("\n")
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
    /// Directory relative audio paths are resolved against.
    pub base_dir: PathBuf,
}

impl Manifest {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn resolve_audio(&self, entry: &ManifestEntry) -> PathBuf {
        if entry.audio_path.is_absolute() {
            entry.audio_path.clone()
        } else {
            self.base_dir.join(&entry.audio_path)
        }
    }

    /// Every referenced audio file must exist.
    pub fn validate_audio(&self) -> Result<(), ManifestError> {
        let missing: Vec<PathBuf> = self
            .entries
            .iter()
            .map(|e| self.resolve_audio(e))
            .filter(|p| !p.is_file())
            .collect();
        if missing.is_empty() {
            Ok(())
        } else {
            Err(ManifestError::MissingAudio(missing))
        }
    }

    pub fn split(&self, split: Split) -> Vec<&ManifestEntry> {
        self.entries.iter().filter(|e| e.split == split).collect()
    }

    pub fn by_id(&self) -> HashMap<&str, &ManifestEntry> {
        self.entries
            .iter()
            .map(|e| (e.sample_id.as_str(), e))
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
        w.write_record(MANIFEST_COLUMNS).expect("in-memory write");
        for e in &self.entries {
            let mut rec = vec![
                e.sample_id.clone(),
                e.audio_path.to_string_lossy().into_owned(),
                e.language.clone(),
                e.condition_id.clone(),
                e.split.to_string(),
            ];
            for d in Dimension::ALL {
                rec.push(e.labels.get(d).map(|v| v.to_string()).unwrap_or_default());
            }
            rec.push(e.provenance.to_string());
            w.write_record(&rec).expect("in-memory write");
        }
        let body = String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 csv");
        format!("{MANIFEST_TAG}\n{body}")
    }
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<Manifest, ManifestError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| ManifestError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    parse_manifest(&text, base_dir)
}

pub fn parse_manifest(text: &str, base_dir: PathBuf) -> Result<Manifest, ManifestError> {
    if let Some(first) = text.lines().next() {
        let t = first.trim();
        if t.starts_with("# sqa-manifest") && t != MANIFEST_TAG {
            return Err(ManifestError::Version(t.to_string()));
        }
    }
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader.headers()?.clone();
    let col: HashMap<&str, usize> = headers.iter().enumerate().map(|(i, h)| (h, i)).collect();
    let missing: Vec<&str> = MANIFEST_COLUMNS
        .iter()
        .copied()
        .filter(|c| !col.contains_key(c))
        .collect();
    if !missing.is_empty() {
        return Err(ManifestError::MissingColumns(missing.join(", ")));
    }
    let mut entries = Vec::new();
    let mut errors = Vec::new();
    let mut seen = HashSet::new();
    for record in reader.records() {
        let record = match record {
            Ok(r) => r,
            Err(e) => {
                let line = e.position().map_or(0, |p| p.line());
                errors.push(RowError {
                    line,
                    message: e.to_string(),
                });
                continue;
            }
        };
        let line = record.position().map_or(0, |p| p.line());
        let field = |name: &str| record.get(col[name]).unwrap_or("");
        let mut row_errs = Vec::new();
        let sample_id = field("sample_id").to_string();
        if sample_id.is_empty() {
            row_errs.push("empty sample_id".to_string());
        } else if !seen.insert(sample_id.clone()) {
            row_errs.push(format!("duplicate sample_id '{sample_id}'"));
        }
        let language = field("language").to_ascii_uppercase();
        if language.is_empty() {
            row_errs.push("empty language".to_string());
        }
        let split = field("split")
            .parse::<Split>()
            .map_err(|e| row_errs.push(e))
            .ok();
        let provenance = field("provenance")
            .parse::<Provenance>()
            .map_err(|e| row_errs.push(e))
            .ok();
        let mut labels = QualityScores::default();
        for d in Dimension::ALL {
            let raw = field(d.key());
            if raw.is_empty() {
                continue;
            }
            match raw.parse::<f64>() {
                Ok(v) if (SCORE_MIN..=SCORE_MAX).contains(&v) => labels.set(d, Some(v)),
                Ok(v) => row_errs.push(format!("{} label {v} outside [1, 5]", d.key())),
                Err(_) => row_errs.push(format!("{} label '{raw}' is not a number", d.key())),
            }
        }
        if row_errs.is_empty() {
            entries.push(ManifestEntry {
                sample_id,
                audio_path: PathBuf::from(field("audio_path")),
                language,
                condition_id: field("condition_id").to_string(),
                split: split.expect("checked"),
                labels,
                provenance: provenance.expect("checked"),
            });
        } else {
            errors.extend(
                row_errs
                    .into_iter()
                    .map(|message| RowError { line, message }),
            );
        }
    }
    if !errors.is_empty() {
        return Err(ManifestError::Rows(errors));
    }
    Ok(Manifest { entries, base_dir })
}

#[derive(Clone, Debug, PartialEq)]
pub struct LanguageSummary {
    pub language: String,
    pub samples: usize,
    pub conditions: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Summary {
    /// Languages in order of first appearance.
    pub rows: Vec<LanguageSummary>,
    pub warnings: Vec<String>,
}

impl Summary {
    pub fn render(&self) -> String {
        let mut out = format!("{:<10} {:>10} {:>8}\n", "Language", "Conditions", "Samples");
        for r in &self.rows {
            out.push_str(&format!(
                "{:<10} {:>10} {:>8}\n",
                r.language, r.conditions, r.samples
            ));
        }
        for w in &self.warnings {
            out.push_str(&format!("warning: {w}\n"));
        }
        out
    }
}

pub fn summarize(manifest: &Manifest) -> Summary {
    let mut order: Vec<&str> = Vec::new();
    let mut counts: HashMap<&str, (usize, HashSet<&str>)> = HashMap::new();
    for e in &manifest.entries {
        let slot = counts.entry(e.language.as_str()).or_insert_with(|| {
            order.push(e.language.as_str());
            (0, HashSet::new())
        });
        slot.0 += 1;
        slot.1.insert(e.condition_id.as_str());
    }
    let rows: Vec<LanguageSummary> = order
        .iter()
        .map(|&l| LanguageSummary {
            language: l.to_string(),
            samples: counts[l].0,
            conditions: counts[l].1.len(),
        })
        .collect();
    let warnings = rows
        .iter()
        .filter(|r| r.samples < MIN_SAMPLES_PER_LANGUAGE)
        .map(|r| {
            format!(
                "{} has {} samples, fewer than the {MIN_SAMPLES_PER_LANGUAGE} needed for comparison",
                r.language, r.samples
            )
        })
        .collect();
    Summary { rows, warnings }
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str =
        "sample_id,audio_path,language,condition_id,split,mos,col,dis,loud,noi,provenance\n";

    fn parse(body: &str) -> Result<Manifest, ManifestError> {
        parse_manifest(&format!("{MANIFEST_TAG}\n{HEADER}{body}"), PathBuf::new())
    }

    #[test]
    fn header_only_is_empty() {
        assert!(parse("").unwrap().is_empty());
        assert!(parse_manifest(HEADER, PathBuf::new()).unwrap().is_empty());
    }

    #[test]
    fn three_rows_in_file_order() {
        let m = parse(
            "a,a.wav,ENG,c1,train,3.5,2,,4.25,1,subjective\n\
             b,b.wav,de,c2,val,1,,,,,objective\n\
             c,sub/c.wav,MAN,c1,test,5,5,5,5,5,subjective\n",
        )
        .unwrap();
        let ids: Vec<&str> = m.entries.iter().map(|e| e.sample_id.as_str()).collect();
        assert_eq!(ids, ["a", "b", "c"]);
        assert_eq!(m.entries[0].labels.mos(), Some(3.5));
        assert_eq!(m.entries[0].labels.dis(), None);
        assert_eq!(m.entries[0].labels.loud(), Some(4.25));
        assert_eq!(m.entries[1].language, "DE");
        assert_eq!(m.entries[1].split, Split::Val);
        assert_eq!(m.entries[1].provenance, Provenance::Objective);
        assert_eq!(m.entries[2].audio_path, PathBuf::from("sub/c.wav"));
    }

    #[test]
    fn out_of_range_label_names_the_row() {
        let err = parse(
            "a,a.wav,ENG,c1,train,3,,,,,subjective\nb,b.wav,ENG,c1,train,6.0,,,,,subjective\n",
        )
        .unwrap_err();
        match err {
            ManifestError::Rows(rows) => {
                assert_eq!(rows.len(), 1);
                assert_eq!(rows[0].line, 4);
                assert!(rows[0].message.contains("mos label 6"));
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn duplicates_and_missing_columns() {
        let err =
            parse("a,a.wav,ENG,c1,train,3,,,,,subjective\na,b.wav,ENG,c1,train,3,,,,,subjective\n")
                .unwrap_err();
        assert!(err.to_string().contains("duplicate sample_id 'a'"));
        let err = parse_manifest("sample_id,audio_path,language\n", PathBuf::new()).unwrap_err();
        assert!(matches!(err, ManifestError::MissingColumns(c) if c.contains("condition_id")));
        let err =
            parse_manifest(&format!("# sqa-manifest v9\n{HEADER}"), PathBuf::new()).unwrap_err();
        assert!(matches!(err, ManifestError::Version(_)));
    }

    #[test]
    fn csv_round_trip() {
        let m = parse(
            "a,a.wav,ENG,c1,train,3.5,2,,4.25,1,subjective\nb,b.wav,FR,c9,test,,,,,,objective\n",
        )
        .unwrap();
        assert_eq!(parse_manifest(&m.to_csv(), PathBuf::new()).unwrap(), m);
    }

    fn synthetic(lang: &str, n: usize, conditions: usize) -> Vec<ManifestEntry> {
        (0..n)
            .map(|i| ManifestEntry {
                sample_id: format!("{lang}_{i}"),
                audio_path: PathBuf::from(format!("{lang}_{i}.wav")),
                language: lang.to_string(),
                condition_id: format!("c{}", i % conditions),
                split: Split::Test,
                labels: QualityScores::default(),
                provenance: Provenance::Subjective,
            })
            .collect()
    }

    #[test]
    fn summary_counts_and_threshold() {
        let mut entries = synthetic("NL", 1035, 59);
        entries.extend(synthetic("SE", 999, 3));
        entries.extend(synthetic("FR", 1000, 2));
        let s = summarize(&Manifest {
            entries,
            base_dir: PathBuf::new(),
        });
        assert_eq!(
            s.rows[0],
            LanguageSummary {
                language: "NL".into(),
                samples: 1035,
                conditions: 59
            }
        );
        assert_eq!(s.rows.len(), 3);
        assert_eq!(s.warnings.len(), 1);
        assert!(s.warnings[0].starts_with("SE has 999"));
        assert!(s.render().contains("NL"));
    }

    #[test]
    fn single_language_single_row() {
        let s = summarize(&Manifest {
            entries: synthetic("DE", 3, 1),
            base_dir: PathBuf::new(),
        });
        assert_eq!(s.rows.len(), 1);
    }

    #[test]
    fn splits_partition_entries() {
        let mut entries = synthetic("DE", 9, 1);
        for (i, e) in entries.iter_mut().enumerate() {
            e.split = [Split::Train, Split::Val, Split::Test][i % 3];
        }
        let m = Manifest {
            entries,
            base_dir: PathBuf::new(),
        };
        let total: usize = [Split::Train, Split::Val, Split::Test]
            .iter()
            .map(|&s| m.split(s).len())
            .sum();
        assert_eq!(total, m.len());
    }
}
