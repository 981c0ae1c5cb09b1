//! Third-order polynomial mapping of predictions onto subjective scores,
//! fitted per group and constrained to be non-decreasing.
//!
//! The fit works in the normalized variable `u = (x − c) / h`, which maps
//! the fit domain to [−1, 1]. The Vandermonde columns are scaled to unit
//! norm before the normal equations are solved. If the least-squares cubic
//! decreases somewhere on the domain, the quadratic and cubic terms are
//! shrunk by a factor λ ∈ [0, 1] toward zero, with the constant and linear
//! terms refitted for each λ; the largest admissible λ is found by
//! bisection. The derivative at every grid point is affine in λ, so the
//! admissible set is an interval containing 0 and bisection is exact up to
//! its iteration count. If even the linear fit decreases, the map is the
//! constant mean of the subjective scores. The identity map is kept instead
//! whenever it has the lower clipped squared error on the fit set.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::scores::{clip_score, Dimension};

/// Derivative sign is checked at this many evenly spaced points.
pub const MONOTONE_GRID: usize = 1001;
const BISECTION_STEPS: usize = 60;
/// Relative pivot threshold below which the system counts as singular.
const PIVOT_TOL: f64 = 1e-12;
pub const CALIBRATION_TAG: &str = "# sqa-calibration v1";
const HEADER: &str = "group,dimension,a0,a1,a2,a3,domain_min,domain_max";

#[derive(Debug, Error, PartialEq)]
pub enum CalibrationError {
    #[error("need at least 4 points to fit a cubic, got {0}")]
    TooFew(usize),
    #[error("prediction and subjective vectors differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error(
        "rank-deficient system: predictions are constant or take fewer than 4 distinct values"
    )]
    RankDeficient,
    #[error("non-finite input value")]
    NonFinite,
    #[error("group '{group}', {dimension}: {source}")]
    Group {
        group: String,
        dimension: Dimension,
        #[source]
        source: Box<CalibrationError>,
    },
    #[error("no calibration map for group '{group}', dimension {dimension}")]
    MissingMap { group: String, dimension: Dimension },
    #[error("cannot parse calibration maps: {0}")]
    Parse(String),
}

/// `y = a0 + a1·x + a2·x² + a3·x³`, clipped to [1, 5].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CalibrationMap {
    pub coefficients: [f64; 4],
    pub fit_domain: (f64, f64),
}

fn horner(c: &[f64; 4], x: f64) -> f64 {
    ((c[3] * x + c[2]) * x + c[1]) * x + c[0]
}

fn slope(c: &[f64; 4], x: f64) -> f64 {
    (3.0 * c[3] * x + 2.0 * c[2]) * x + c[1]
}

fn grid(lo: f64, hi: f64) -> impl Iterator<Item = f64> {
    (0..MONOTONE_GRID).map(move |i| lo + (hi - lo) * i as f64 / (MONOTONE_GRID - 1) as f64)
}

impl CalibrationMap {
    pub fn identity(fit_domain: (f64, f64)) -> Self {
        Self {
            coefficients: [0.0, 1.0, 0.0, 0.0],
            fit_domain,
        }
    }

    pub fn eval_raw(&self, x: f64) -> f64 {
        horner(&self.coefficients, x)
    }

    pub fn apply_one(&self, x: f64) -> f64 {
        clip_score(self.eval_raw(x))
    }

    pub fn apply(&self, pred: &[f64]) -> Vec<f64> {
        pred.iter().map(|&x| self.apply_one(x)).collect()
    }

    /// Derivative non-negative on the checking grid, allowing rounding noise
    /// relative to the coefficient magnitudes.
    pub fn is_monotone(&self) -> bool {
        let (lo, hi) = self.fit_domain;
        let scale = lo.abs().max(hi.abs()).max(1.0);
        let c = &self.coefficients;
        let tol = 1e-9
            * (c[1].abs() + 2.0 * c[2].abs() * scale + 3.0 * c[3].abs() * scale * scale)
                .max(1e-300);
        grid(lo, hi).all(|x| slope(c, x) >= -tol)
    }
}

/// Solve `A x = b` by Gaussian elimination with partial pivoting.
fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Result<Vec<f64>, CalibrationError> {
    let n = b.len();
    let max_diag = (0..n).map(|i| a[i][i].abs()).fold(0.0, f64::max);
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .expect("non-empty");
        if a[piv][col].abs() <= PIVOT_TOL * max_diag.max(f64::MIN_POSITIVE) {
            return Err(CalibrationError::RankDeficient);
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|k| a[i][k] * x[k]).sum();
        x[i] = (b[i] - s) / a[i][i];
    }
    Ok(x)
}

/// Least squares over the columns `u^p` for the given powers, with each
/// column scaled to unit norm.
fn least_squares(u: &[f64], y: &[f64], powers: &[i32]) -> Result<Vec<f64>, CalibrationError> {
    let cols: Vec<Vec<f64>> = powers
        .iter()
        .map(|&p| u.iter().map(|v| v.powi(p)).collect())
        .collect();
    let norms: Vec<f64> = cols
        .iter()
        .map(|c| c.iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    if norms.iter().any(|&n| n == 0.0) {
        return Err(CalibrationError::RankDeficient);
    }
    let scaled: Vec<Vec<f64>> = cols
        .iter()
        .zip(&norms)
        .map(|(c, n)| c.iter().map(|v| v / n).collect())
        .collect();
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let gram: Vec<Vec<f64>> = scaled
        .iter()
        .map(|a| scaled.iter().map(|b| dot(a, b)).collect())
        .collect();
    let rhs: Vec<f64> = scaled.iter().map(|a| dot(a, y)).collect();
    let sol = solve(gram, rhs)?;
    Ok(sol.iter().zip(&norms).map(|(s, n)| s / n).collect())
}

/// Coefficients in `u = (x − c)/h` to coefficients in `x`.
fn to_x_basis(b: [f64; 4], c: f64, h: f64) -> [f64; 4] {
    // u^k = Σ_j C(k,j) x^j (−c)^(k−j) / h^k
    let binom = [
        [1.0, 0.0, 0.0, 0.0],
        [1.0, 1.0, 0.0, 0.0],
        [1.0, 2.0, 1.0, 0.0],
        [1.0, 3.0, 3.0, 1.0],
    ];
    let mut a = [0.0; 4];
    for k in 0..4 {
        let scale = b[k] / h.powi(k as i32);
        for j in 0..=k {
            a[j] += scale * binom[k][j] * (-c).powi((k - j) as i32);
        }
    }
    a
}

/// Fit a non-decreasing cubic mapping `pred` onto `subj`.
pub fn fit_calibration(pred: &[f64], subj: &[f64]) -> Result<CalibrationMap, CalibrationError> {
    if pred.len() != subj.len() {
        return Err(CalibrationError::LengthMismatch(pred.len(), subj.len()));
    }
    if pred.len() < 4 {
        return Err(CalibrationError::TooFew(pred.len()));
    }
    if pred.iter().chain(subj).any(|v| !v.is_finite()) {
        return Err(CalibrationError::NonFinite);
    }
    let lo = pred.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = pred.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi - lo <= 1e-9 * lo.abs().max(hi.abs()).max(1.0) {
        return Err(CalibrationError::RankDeficient);
    }
    let c = 0.5 * (lo + hi);
    let h = 0.5 * (hi - lo);
    let u: Vec<f64> = pred.iter().map(|x| (x - c) / h).collect();
    let full = least_squares(&u, subj, &[0, 1, 2, 3])?;
    let cubic = [full[0], full[1], full[2], full[3]];
    let u_monotone = |b: &[f64; 4]| grid(-1.0, 1.0).all(|v| slope(b, v) >= 0.0);

    let b = if u_monotone(&cubic) {
        cubic
    } else {
        let shrunk = |lambda: f64| -> Result<[f64; 4], CalibrationError> {
            let resid: Vec<f64> = u
                .iter()
                .zip(subj)
                .map(|(v, y)| y - lambda * (cubic[2] * v * v + cubic[3] * v * v * v))
                .collect();
            let lin = least_squares(&u, &resid, &[0, 1])?;
            Ok([lin[0], lin[1], lambda * cubic[2], lambda * cubic[3]])
        };
        let linear = shrunk(0.0)?;
        if linear[1] < 0.0 {
            let mean = subj.iter().sum::<f64>() / subj.len() as f64;
            [mean, 0.0, 0.0, 0.0]
        } else {
            let (mut good, mut bad) = (0.0, 1.0);
            let mut best = linear;
            for _ in 0..BISECTION_STEPS {
                let mid = 0.5 * (good + bad);
                let cand = shrunk(mid)?;
                if u_monotone(&cand) {
                    good = mid;
                    best = cand;
                } else {
                    bad = mid;
                }
            }
            best
        }
    };
    let fitted = CalibrationMap {
        coefficients: to_x_basis(b, c, h),
        fit_domain: (lo, hi),
    };
    // The identity is itself admissible; never return a map that fits worse.
    let identity = CalibrationMap::identity((lo, hi));
    let sse = |m: &CalibrationMap| -> f64 {
        pred.iter()
            .zip(subj)
            .map(|(&x, y)| (m.apply_one(x) - y).powi(2))
            .sum()
    };
    Ok(if sse(&identity) < sse(&fitted) {
        identity
    } else {
        fitted
    })
}

/// How predictions are grouped for separate fits.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GroupBy {
    Language,
    /// One map for all samples, stored under the group key `*`.
    All,
}

impl std::str::FromStr for GroupBy {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "language" => Ok(GroupBy::Language),
            "none" | "all" => Ok(GroupBy::All),
            _ => Err(format!(
                "unknown grouping '{s}' (expected language or none)"
            )),
        }
    }
}

pub const ALL_GROUP: &str = "*";

impl GroupBy {
    pub fn key<'a>(self, language: &'a str) -> &'a str {
        match self {
            GroupBy::Language => language,
            GroupBy::All => ALL_GROUP,
        }
    }
}

/// Maps keyed by (group, dimension). Dimensions without any map pass
/// through unchanged.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CalibrationSet {
    pub maps: BTreeMap<(String, Dimension), CalibrationMap>,
}

/// One sample's prediction and subjective score for a dimension.
pub struct CalibrationPoint<'a> {
    pub group: &'a str,
    pub pred: f64,
    pub subj: f64,
}

impl CalibrationSet {
    /// Fit one map per group for `dimension` from aligned points.
    pub fn fit_dimension(
        &mut self,
        dimension: Dimension,
        points: &[CalibrationPoint<'_>],
    ) -> Result<(), CalibrationError> {
        let mut groups: BTreeMap<&str, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
        for p in points {
            let g = groups.entry(p.group).or_default();
            g.0.push(p.pred);
            g.1.push(p.subj);
        }
        for (group, (pred, subj)) in groups {
            let map = fit_calibration(&pred, &subj).map_err(|e| CalibrationError::Group {
                group: group.to_string(),
                dimension,
                source: Box::new(e),
            })?;
            self.maps.insert((group.to_string(), dimension), map);
        }
        Ok(())
    }

    pub fn has_dimension(&self, dimension: Dimension) -> bool {
        self.maps.keys().any(|(_, d)| *d == dimension)
    }

    /// Calibrated value, or the input unchanged when the dimension is not
    /// calibrated at all.
    pub fn apply(
        &self,
        group: &str,
        dimension: Dimension,
        x: f64,
    ) -> Result<f64, CalibrationError> {
        if !self.has_dimension(dimension) {
            return Ok(x);
        }
        let key = (group.to_string(), dimension);
        let map = self
            .maps
            .get(&key)
            .or_else(|| self.maps.get(&(ALL_GROUP.to_string(), dimension)))
            .ok_or_else(|| CalibrationError::MissingMap {
                group: group.to_string(),
                dimension,
            })?;
        Ok(map.apply_one(x))
    }

    pub fn render(&self) -> String {
        let mut out = format!("{CALIBRATION_TAG}\n{HEADER}\n");
        for ((group, dim), m) in &self.maps {
            let [a0, a1, a2, a3] = m.coefficients;
            let _ = writeln!(
                out,
                "{group},{},{a0:e},{a1:e},{a2:e},{a3:e},{:e},{:e}",
                dim.key(),
                m.fit_domain.0,
                m.fit_domain.1
            );
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self, CalibrationError> {
        let perr = |m: String| CalibrationError::Parse(m);
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let mut first = lines.next().ok_or_else(|| perr("empty file".into()))?;
        if first.starts_with('#') {
            if first.trim() != CALIBRATION_TAG {
                return Err(perr(format!("unsupported tag '{first}'")));
            }
            first = lines.next().ok_or_else(|| perr("missing header".into()))?;
        }
        if first.trim() != HEADER {
            return Err(perr(format!("expected header '{HEADER}'")));
        }
        let mut set = CalibrationSet::default();
        for (i, line) in lines.enumerate() {
            let f: Vec<&str> = line.split(',').map(str::trim).collect();
            if f.len() != 8 {
                return Err(perr(format!(
                    "row {}: expected 8 fields, got {}",
                    i + 1,
                    f.len()
                )));
            }
            let num = |s: &str| {
                s.parse::<f64>()
                    .map_err(|_| perr(format!("row {}: bad number '{s}'", i + 1)))
            };
            let dim: Dimension = f[1].parse().map_err(perr)?;
            let map = CalibrationMap {
                coefficients: [num(f[2])?, num(f[3])?, num(f[4])?, num(f[5])?],
                fit_domain: (num(f[6])?, num(f[7])?),
            };
            set.maps.insert((f[0].to_string(), dim), map);
        }
        Ok(set)
    }

    pub fn read(path: &Path) -> Result<Self, CalibrationError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CalibrationError::Parse(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }
}
