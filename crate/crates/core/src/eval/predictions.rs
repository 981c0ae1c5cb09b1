//! Predictions CSV: `sample_id,language,provenance,pred_*×5,label_*×5`,
//! empty field = absent.

use std::path::Path;

use crate::manifest::Provenance;
use crate::scores::{Dimension, QualityScores};

#[derive(Clone, Debug, PartialEq)]
pub struct PredictionRecord {
    pub sample_id: String,
    pub language: String,
    pub provenance: Provenance,
    pub pred: QualityScores,
    pub label: QualityScores,
}

pub fn prediction_columns() -> Vec<String> {
    let mut cols = vec![
        "sample_id".to_string(),
        "language".into(),
        "provenance".into(),
    ];
    cols.extend(Dimension::ALL.iter().map(|d| format!("pred_{}", d.key())));
    cols.extend(Dimension::ALL.iter().map(|d| format!("label_{}", d.key())));
    cols
}

/// Shortest decimal that round-trips the f64.
fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn render_predictions(records: &[PredictionRecord]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(prediction_columns())
        .expect("in-memory write");
    for r in records {
        let mut rec = vec![
            r.sample_id.clone(),
            r.language.clone(),
            r.provenance.to_string(),
        ];
        rec.extend(Dimension::ALL.iter().map(|&d| fmt_opt(r.pred.get(d))));
        rec.extend(Dimension::ALL.iter().map(|&d| fmt_opt(r.label.get(d))));
        w.write_record(&rec).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 csv")
}

pub fn parse_predictions(text: &str) -> Result<Vec<PredictionRecord>, String> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| e.to_string())?.clone();
    let expected = prediction_columns();
    if headers.iter().ne(expected.iter().map(String::as_str)) {
        return Err(format!(
            "predictions header mismatch: expected '{}', found '{}'",
            expected.join(","),
            headers.iter().collect::<Vec<_>>().join(",")
        ));
    }
    let mut out = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| e.to_string())?;
        let line = rec.position().map_or(0, |p| p.line());
        let num = |i: usize| -> Result<Option<f64>, String> {
            let s = &rec[i];
            if s.is_empty() {
                Ok(None)
            } else {
                s.parse()
                    .map(Some)
                    .map_err(|_| format!("line {line}: '{s}' is not a number"))
            }
        };
        let mut pred = [None; 5];
        let mut label = [None; 5];
        for k in 0..5 {
            pred[k] = num(3 + k)?;
            label[k] = num(8 + k)?;
        }
        out.push(PredictionRecord {
            sample_id: rec[0].to_string(),
            language: rec[1].to_string(),
            provenance: rec[2].parse().map_err(|e| format!("line {line}: {e}"))?,
            pred: QualityScores::from_options(pred),
            label: QualityScores::from_options(label),
        });
    }
    Ok(out)
}

pub fn read_predictions(path: &Path) -> Result<Vec<PredictionRecord>, String> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    parse_predictions(&text).map_err(|e| format!("{}: {e}", path.display()))
}
