//! The five quality dimensions and per-clip score records.

use std::fmt;
use std::str::FromStr;

pub const SCORE_MIN: f64 = 1.0;
pub const SCORE_MAX: f64 = 5.0;

/// Quality dimension; discriminant order is the model head order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Dimension {
    Mos,
    Col,
    Dis,
    Loud,
    Noi,
}

impl Dimension {
    /// Head order.
    pub const ALL: [Dimension; 5] = [
        Dimension::Mos,
        Dimension::Col,
        Dimension::Dis,
        Dimension::Loud,
        Dimension::Noi,
    ];

    /// Column order of rendered tables.
    pub const TABLE_ORDER: [Dimension; 5] = [
        Dimension::Col,
        Dimension::Dis,
        Dimension::Loud,
        Dimension::Mos,
        Dimension::Noi,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Lower-case key used in file columns (`pred_mos`, `head_mos.weight`, ...).
    pub fn key(self) -> &'static str {
        match self {
            Dimension::Mos => "mos",
            Dimension::Col => "col",
            Dimension::Dis => "dis",
            Dimension::Loud => "loud",
            Dimension::Noi => "noi",
        }
    }

    /// Display label used in report tables.
    pub fn label(self) -> &'static str {
        match self {
            Dimension::Mos => "MOS",
            Dimension::Col => "Col",
            Dimension::Dis => "Dis",
            Dimension::Loud => "Loud",
            Dimension::Noi => "Noi",
        }
    }
}

impl fmt::Display for Dimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for Dimension {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Dimension::ALL
            .into_iter()
            .find(|d| d.key().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown dimension '{s}' (expected mos, col, dis, loud or noi)"))
    }
}

pub fn clip_score(v: f64) -> f64 {
    v.clamp(SCORE_MIN, SCORE_MAX)
}

/// Five scores indexed by [`Dimension`], each with a presence flag.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct QualityScores {
    pub values: [f64; 5],
    pub present: [bool; 5],
}

impl QualityScores {
    pub fn from_options(values: [Option<f64>; 5]) -> Self {
        let mut out = Self::default();
        for (i, v) in values.into_iter().enumerate() {
            if let Some(v) = v {
                out.values[i] = v;
                out.present[i] = true;
            }
        }
        out
    }

    /// All five present, clipped to the score scale.
    pub fn clipped(raw: [f64; 5]) -> Self {
        Self {
            values: raw.map(clip_score),
            present: [true; 5],
        }
    }

    pub fn get(&self, dim: Dimension) -> Option<f64> {
        self.present[dim.index()].then_some(self.values[dim.index()])
    }

    pub fn set(&mut self, dim: Dimension, value: Option<f64>) {
        match value {
            Some(v) => {
                self.values[dim.index()] = v;
                self.present[dim.index()] = true;
            }
            None => {
                self.values[dim.index()] = 0.0;
                self.present[dim.index()] = false;
            }
        }
    }

    pub fn mos(&self) -> Option<f64> {
        self.get(Dimension::Mos)
    }
    pub fn col(&self) -> Option<f64> {
        self.get(Dimension::Col)
    }
    pub fn dis(&self) -> Option<f64> {
        self.get(Dimension::Dis)
    }
    pub fn loud(&self) -> Option<f64> {
        self.get(Dimension::Loud)
    }
    pub fn noi(&self) -> Option<f64> {
        self.get(Dimension::Noi)
    }
}
