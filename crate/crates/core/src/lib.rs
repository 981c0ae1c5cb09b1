//! Non-intrusive speech quality assessment: a 48 kHz log-Mel front end, a
//! patch transformer and a CNN baseline with five quality heads, training,
//! cubic calibration and per-language evaluation.

pub mod calibration;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod dsp;
pub mod eval;
pub mod io;
pub mod manifest;
pub mod model;
pub mod params;
pub mod pipeline;
pub mod scores;
pub mod tensor;
pub mod train;
