use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use crate::scores::{Dimension, QualityScores};

use super::metrics::{pearson, rmse};

/// Display precision of cells and of the range row.
pub const CELL_DECIMALS: i32 = 3;
pub const RANGE_DECIMALS: i32 = 2;
pub const RANGE_LABEL: &str = "Range";
const ABSENT: &str = "-";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MetricKind {
    Pcc,
    Rmse,
}

impl MetricKind {
    pub fn label(self) -> &'static str {
        match self {
            MetricKind::Pcc => "PCC",
            MetricKind::Rmse => "RMSE",
        }
    }
}

impl FromStr for MetricKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "PCC" => Ok(MetricKind::Pcc),
            "RMSE" => Ok(MetricKind::Rmse),
            _ => Err(format!("unknown metric '{s}' (expected PCC or RMSE)")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Markdown,
}

impl FromStr for ReportFormat {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "markdown" | "md" => Ok(ReportFormat::Markdown),
            _ => Err(format!(
                "unknown report format '{s}' (expected csv or markdown)"
            )),
        }
    }
}

/// One language's five cells, indexed by [`Dimension::index`].
#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub language: String,
    pub values: [Option<f64>; 5],
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub metric: MetricKind,
    pub reference: String,
    /// Reference first, then descending by the MOS cell.
    pub rows: Vec<ReportRow>,
    /// Absent when there is no non-reference language.
    pub range: Option<[Option<f64>; 5]>,
}

/// Round half away from zero to `decimals` places.
pub fn round_half_away(v: f64, decimals: i32) -> f64 {
    let s = 10f64.powi(decimals);
    (v * s).round() / s
}

impl EvalReport {
    /// Build from precomputed cells; order and range are derived here.
    pub fn from_cells(metric: MetricKind, reference: &str, rows: Vec<ReportRow>) -> Self {
        let mos = Dimension::Mos.index();
        let (mut refs, mut others): (Vec<ReportRow>, Vec<ReportRow>) =
            rows.into_iter().partition(|r| r.language == reference);
        others.sort_by(|a, b| match (a.values[mos], b.values[mos]) {
            (Some(x), Some(y)) => y.total_cmp(&x).then_with(|| a.language.cmp(&b.language)),
            (Some(_), None) => std::cmp::Ordering::Less,
            (None, Some(_)) => std::cmp::Ordering::Greater,
            (None, None) => a.language.cmp(&b.language),
        });
        let range = (!others.is_empty()).then(|| {
            std::array::from_fn(|k| {
                let vals: Vec<f64> = others.iter().filter_map(|r| r.values[k]).collect();
                if vals.is_empty() {
                    return None;
                }
                let max = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let min = vals.iter().copied().fold(f64::INFINITY, f64::min);
                Some(max - min)
            })
        });
        refs.truncate(1);
        refs.extend(others);
        Self {
            metric,
            reference: reference.to_string(),
            rows: refs,
            range,
        }
    }

    pub fn row(&self, language: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.language == language)
    }

    pub fn render(&self, format: ReportFormat) -> String {
        let cell = |v: Option<f64>, d: i32| match v {
            Some(x) => format!("{:.*}", d as usize, round_half_away(x, d)),
            None => ABSENT.to_string(),
        };
        let mut lines: Vec<Vec<String>> = Vec::new();
        let mut header = vec![self.metric.label().to_string()];
        header.extend(Dimension::TABLE_ORDER.iter().map(|d| d.label().to_string()));
        for r in &self.rows {
            let mut line = vec![r.language.clone()];
            line.extend(
                Dimension::TABLE_ORDER
                    .iter()
                    .map(|d| cell(r.values[d.index()], CELL_DECIMALS)),
            );
            lines.push(line);
        }
        if let Some(range) = &self.range {
            let mut line = vec![RANGE_LABEL.to_string()];
            line.extend(
                Dimension::TABLE_ORDER
                    .iter()
                    .map(|d| cell(range[d.index()], RANGE_DECIMALS)),
            );
            lines.push(line);
        }
        match format {
            ReportFormat::Csv => {
                let mut out = header.join(",");
                out.push('\n');
                for l in lines {
                    out.push_str(&l.join(","));
                    out.push('\n');
                }
                out
            }
            ReportFormat::Markdown => {
                let mut out = format!("| {} |\n", header.join(" | "));
                out.push_str("|:---|");
                out.push_str(&"---:|".repeat(Dimension::TABLE_ORDER.len()));
                out.push('\n');
                for l in lines {
                    out.push_str(&format!("| {} |\n", l.join(" | ")));
                }
                out
            }
        }
    }
}

#[derive(Debug, PartialEq, thiserror::Error)]
#[error("cannot parse report: {0}")]
pub struct ReportParseError(pub String);

/// Inverse of [`EvalReport::render`] for either format. The first data
/// row is taken as the reference.
pub fn parse_report(text: &str) -> Result<EvalReport, ReportParseError> {
    let err = |m: String| ReportParseError(m);
    let markdown = text.trim_start().starts_with('|');
    let mut rows: Vec<Vec<String>> = Vec::new();
    for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
        let cells: Vec<String> = if markdown {
            let inner = line.trim_start_matches('|').trim_end_matches('|');
            inner.split('|').map(|c| c.trim().to_string()).collect()
        } else {
            line.split(',').map(|c| c.trim().to_string()).collect()
        };
        if markdown
            && cells
                .iter()
                .all(|c| !c.is_empty() && c.chars().all(|ch| ch == '-' || ch == ':'))
        {
            continue;
        }
        rows.push(cells);
    }
    let header = rows.first().ok_or_else(|| err("empty input".into()))?;
    let metric: MetricKind = header[0].parse().map_err(err)?;
    let mut dims = Vec::new();
    for h in &header[1..] {
        let d = Dimension::ALL
            .into_iter()
            .find(|d| d.label() == h)
            .ok_or_else(|| err(format!("unknown column '{h}'")))?;
        dims.push(d);
    }
    let parse_row = |cells: &[String]| -> Result<[Option<f64>; 5], ReportParseError> {
        if cells.len() != dims.len() + 1 {
            return Err(err(format!("row '{}' has {} cells", cells[0], cells.len())));
        }
        let mut out = [None; 5];
        for (d, c) in dims.iter().zip(&cells[1..]) {
            if c != ABSENT {
                out[d.index()] = Some(
                    c.parse::<f64>()
                        .map_err(|_| err(format!("bad value '{c}'")))?,
                );
            }
        }
        Ok(out)
    };
    let mut body = Vec::new();
    let mut range = None;
    for cells in &rows[1..] {
        if cells[0] == RANGE_LABEL {
            range = Some(parse_row(cells)?);
        } else {
            body.push(ReportRow {
                language: cells[0].clone(),
                values: parse_row(cells)?,
            });
        }
    }
    let reference = body.first().map(|r| r.language.clone()).unwrap_or_default();
    Ok(EvalReport {
        metric,
        reference,
        rows: body,
        range,
    })
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render(ReportFormat::Markdown))
    }
}

/// PCC and RMSE grids over aligned samples grouped by language. A cell
/// uses the samples with that dimension labelled and predicted; cells
/// with too few samples, or an undefined correlation, are absent.
pub fn evaluate(
    predictions: &[QualityScores],
    labels: &[QualityScores],
    languages: &[String],
    reference: &str,
) -> Result<(EvalReport, EvalReport), String> {
    if predictions.len() != labels.len() || labels.len() != languages.len() {
        return Err(format!(
            "misaligned inputs: {} predictions, {} labels, {} languages",
            predictions.len(),
            labels.len(),
            languages.len()
        ));
    }
    let mut order: Vec<&str> = Vec::new();
    let mut groups: HashMap<&str, Vec<usize>> = HashMap::new();
    for (i, l) in languages.iter().enumerate() {
        groups
            .entry(l.as_str())
            .or_insert_with(|| {
                order.push(l.as_str());
                Vec::new()
            })
            .push(i);
    }
    // Within a group, indices are sorted by value pair so that the result
    // does not depend on sample order down to the last bit.
    let mut pcc_rows = Vec::new();
    let mut rmse_rows = Vec::new();
    for lang in order {
        let mut pcc = [None; 5];
        let mut err = [None; 5];
        for d in Dimension::ALL {
            let k = d.index();
            let mut pairs: Vec<(f64, f64)> = groups[lang]
                .iter()
                .filter(|&&i| predictions[i].present[k] && labels[i].present[k])
                .map(|&i| (predictions[i].values[k], labels[i].values[k]))
                .collect();
            pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
            let (p, y): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            pcc[k] = pearson(&p, &y).ok();
            err[k] = rmse(&p, &y).ok();
        }
        pcc_rows.push(ReportRow {
            language: lang.to_string(),
            values: pcc,
        });
        rmse_rows.push(ReportRow {
            language: lang.to_string(),
            values: err,
        });
    }
    Ok((
        EvalReport::from_cells(MetricKind::Pcc, reference, pcc_rows),
        EvalReport::from_cells(MetricKind::Rmse, reference, rmse_rows),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(lang: &str, mos: Option<f64>, noi: Option<f64>) -> ReportRow {
        let mut values = [None; 5];
        values[Dimension::Mos.index()] = mos;
        values[Dimension::Noi.index()] = noi;
        ReportRow {
            language: lang.into(),
            values,
        }
    }

    #[test]
    fn range_excludes_reference_and_orders_rows() {
        let r = EvalReport::from_cells(
            MetricKind::Pcc,
            "ENG",
            vec![
                row("DE", Some(0.5), Some(0.808)),
                row("ENG", Some(0.9), Some(0.99)),
                row("MAN", Some(0.7), Some(0.927)),
                row("NL", None, Some(0.641)),
            ],
        );
        let langs: Vec<&str> = r.rows.iter().map(|r| r.language.as_str()).collect();
        assert_eq!(langs, ["ENG", "MAN", "DE", "NL"]);
        let range = r.range.unwrap();
        assert!((range[Dimension::Noi.index()].unwrap() - (0.927 - 0.641)).abs() < 1e-15);
        assert!((range[Dimension::Mos.index()].unwrap() - 0.2).abs() < 1e-12);
        assert_eq!(range[Dimension::Col.index()], None);
    }

    #[test]
    fn identical_cells_give_zero_range() {
        let r = EvalReport::from_cells(
            MetricKind::Rmse,
            "ENG",
            vec![row("DE", Some(0.4), None), row("FR", Some(0.4), None)],
        );
        assert_eq!(r.range.unwrap()[Dimension::Mos.index()], Some(0.0));
        assert!(r.render(ReportFormat::Csv).contains("Range,-,-,-,0.00,-"));
    }

    #[test]
    fn reference_only_has_no_range_row() {
        let r = EvalReport::from_cells(MetricKind::Pcc, "ENG", vec![row("ENG", Some(0.7), None)]);
        assert!(r.range.is_none());
        let md = r.render(ReportFormat::Markdown);
        assert_eq!(md.lines().count(), 3);
        assert!(!md.contains(RANGE_LABEL));
    }

    #[test]
    fn render_parse_round_trip() {
        let r = EvalReport::from_cells(
            MetricKind::Pcc,
            "ENG",
            vec![
                row("ENG", Some(0.71849), Some(0.87912)),
                row("FR", Some(0.6), None),
                row("SE", Some(0.12345), Some(-0.5)),
            ],
        );
        for format in [ReportFormat::Csv, ReportFormat::Markdown] {
            let parsed = parse_report(&r.render(format)).unwrap();
            assert_eq!(parsed.metric, r.metric);
            assert_eq!(parsed.reference, "ENG");
            for (a, b) in parsed.rows.iter().zip(&r.rows) {
                assert_eq!(a.language, b.language);
                for k in 0..5 {
                    assert_eq!(
                        a.values[k],
                        b.values[k].map(|v| round_half_away(v, CELL_DECIMALS))
                    );
                }
            }
            let (pr, rr) = (parsed.range.unwrap(), r.range.unwrap());
            for k in 0..5 {
                assert_eq!(pr[k], rr[k].map(|v| round_half_away(v, RANGE_DECIMALS)));
            }
        }
    }

    #[test]
    fn rounding_is_half_away_from_zero() {
        assert_eq!(round_half_away(0.125, 2), 0.13);
        assert_eq!(round_half_away(-0.125, 2), -0.13);
        assert_eq!(round_half_away(2.5, 0), 3.0);
    }

    #[test]
    fn evaluate_cells() {
        let scores = |m: f64| QualityScores::from_options([Some(m), None, None, None, None]);
        let preds = [
            scores(1.0),
            scores(2.0),
            scores(3.0),
            scores(4.0),
            scores(3.0),
        ];
        let labels = [
            scores(1.0),
            scores(3.0),
            scores(2.0),
            scores(4.0),
            scores(4.0),
        ];
        let langs: Vec<String> = ["ENG", "ENG", "ENG", "ENG", "DE"]
            .map(String::from)
            .to_vec();
        let (pcc, err) = evaluate(&preds, &labels, &langs, "ENG").unwrap();
        let k = Dimension::Mos.index();
        assert!((pcc.row("ENG").unwrap().values[k].unwrap() - 0.8).abs() < 1e-12);
        assert_eq!(pcc.row("DE").unwrap().values[k], None);
        assert_eq!(err.row("DE").unwrap().values[k], Some(1.0));
        assert_eq!(pcc.row("ENG").unwrap().values[Dimension::Col.index()], None);
        assert!(evaluate(&preds, &labels[..2], &langs, "ENG").is_err());
    }
}
