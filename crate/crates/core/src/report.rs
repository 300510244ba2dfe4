//! Estimation methods and the inference report shared by every pipeline.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    ActiveBatch,
    ActiveSeq,
    ActiveSeqFinetune,
    Ppi,
    Classical,
    /// Betting interval around the active mean estimate.
    ActiveBetting,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::ActiveBatch,
        Method::ActiveSeq,
        Method::ActiveSeqFinetune,
        Method::Ppi,
        Method::Classical,
        Method::ActiveBetting,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::ActiveBatch => "active",
            Method::ActiveSeq => "active-seq",
            Method::ActiveSeqFinetune => "active-seq-finetune",
            Method::Ppi => "ppi",
            Method::Classical => "classical",
            Method::ActiveBetting => "active-betting",
        }
    }

    pub fn is_sequential(self) -> bool {
        matches!(self, Method::ActiveSeq | Method::ActiveSeqFinetune)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "active" | "active-batch" => Ok(Method::ActiveBatch),
            "active-seq" => Ok(Method::ActiveSeq),
            "active-seq-finetune" => Ok(Method::ActiveSeqFinetune),
            "ppi" | "uniform" => Ok(Method::Ppi),
            "classical" => Ok(Method::Classical),
            "active-betting" | "betting" => Ok(Method::ActiveBetting),
            other => Err(Error::Config(format!("unknown method `{other}`"))),
        }
    }
}

/// Per-coordinate interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoordinateInterval {
    pub coordinate: usize,
    pub lo: f64,
    pub hi: f64,
}

impl CoordinateInterval {
    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains(&self, v: f64) -> bool {
        self.lo <= v && v <= self.hi
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InferenceReport {
    pub method: Method,
    pub theta_hat: DVector<f64>,
    pub sigma_hat: DMatrix<f64>,
    pub intervals: Vec<CoordinateInterval>,
    pub alpha: f64,
    pub n: usize,
    pub n_lab: usize,
    /// Set when the interval came from a numerical fallback.
    pub degenerate: bool,
}

pub const REPORT_HEADER: [&str; 8] = ["method", "coordinate", "estimate", "lo", "hi", "n", "n_lab", "alpha"];

impl InferenceReport {
    pub fn interval(&self, coordinate: usize) -> Option<&CoordinateInterval> {
        self.intervals.iter().find(|c| c.coordinate == coordinate)
    }

    pub fn rows(&self) -> Vec<[String; 8]> {
        self.intervals
            .iter()
            .map(|c| {
                [
                    self.method.name().to_string(),
                    c.coordinate.to_string(),
                    self.theta_hat[c.coordinate].to_string(),
                    c.lo.to_string(),
                    c.hi.to_string(),
                    self.n.to_string(),
                    self.n_lab.to_string(),
                    self.alpha.to_string(),
                ]
            })
            .collect()
    }
}

/// Writes the header and every report's rows.
pub fn write_reports<W: Write>(writer: W, reports: &[InferenceReport]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(REPORT_HEADER)?;
    for r in reports {
        for row in r.rows() {
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}
