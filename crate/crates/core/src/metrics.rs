//! Top-1 accuracy and Grid Pointing Game localization scores.
//!
//! A GPG sample is the attribution energy summed over each quadrant of a 2x2
//! grid whose `correct_quadrant` holds the real test image. Sample files are
//! JSON lines; blank lines and lines starting with `#` are skipped so writers
//! can record their normalization policy in a header.

use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const QUADRANTS: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpgSample {
    pub image_id: String,
    #[serde(default)]
    pub concept_id: Option<String>,
    pub quadrant_scores: [f64; QUADRANTS],
    pub correct_quadrant: usize,
}

impl GpgSample {
    pub fn new(scores: [f64; QUADRANTS], correct_quadrant: usize) -> Self {
        Self {
            image_id: String::new(),
            concept_id: None,
            quadrant_scores: scores,
            correct_quadrant,
        }
    }

    fn check(&self) -> Result<f64> {
        if self.correct_quadrant >= QUADRANTS {
            return Err(Error::InvalidArgument(format!(
                "correct_quadrant {} outside 0..4",
                self.correct_quadrant
            )));
        }
        check_scores(&self.quadrant_scores)
    }
}

fn check_scores(scores: &[f64; QUADRANTS]) -> Result<f64> {
    if scores.iter().any(|s| !s.is_finite() || *s < 0.0) {
        return Err(Error::InvalidArgument(format!(
            "quadrant scores must be finite and non-negative: {scores:?}"
        )));
    }
    let total: f64 = scores.iter().sum();
    if total <= 0.0 {
        return Err(Error::InvalidArgument("all quadrant scores are zero".into()));
    }
    Ok(total)
}

/// Gini index of the quadrant energies, rescaled by `n / (n - 1)` so that a
/// single loaded quadrant scores exactly 1 and a uniform split scores 0.
pub fn gini(scores: &[f64; QUADRANTS]) -> Result<f64> {
    let total = check_scores(scores)?;
    let n = QUADRANTS as f64;
    let mut pairwise = 0.0;
    for a in scores {
        for b in scores {
            pairwise += (a - b).abs();
        }
    }
    Ok((pairwise / (2.0 * n * total) * n / (n - 1.0)).clamp(0.0, 1.0))
}

/// Share of the total energy that falls in the correct quadrant.
pub fn gpg_percentage(sample: &GpgSample) -> Result<f64> {
    let total = sample.check()?;
    Ok(sample.quadrant_scores[sample.correct_quadrant] / total)
}

/// 1 when the correct quadrant strictly beats every other quadrant.
pub fn gpg_max_hit(sample: &GpgSample) -> Result<u8> {
    sample.check()?;
    let s = &sample.quadrant_scores;
    let target = s[sample.correct_quadrant];
    let hit = (0..QUADRANTS)
        .filter(|&q| q != sample.correct_quadrant)
        .all(|q| target > s[q]);
    Ok(u8::from(hit))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpgReport {
    pub mean_gini: f64,
    pub mean_percentage: f64,
    pub mean_max_hit: f64,
    pub count: usize,
}

pub fn gpg_aggregate(samples: &[GpgSample]) -> Result<GpgReport> {
    if samples.is_empty() {
        return Err(Error::EmptyInput("no GPG samples"));
    }
    let (mut g, mut p, mut h) = (0.0, 0.0, 0.0);
    for s in samples {
        g += gini(&s.quadrant_scores)?;
        p += gpg_percentage(s)?;
        h += f64::from(gpg_max_hit(s)?);
    }
    let n = samples.len() as f64;
    Ok(GpgReport {
        mean_gini: g / n,
        mean_percentage: p / n,
        mean_max_hit: h / n,
        count: samples.len(),
    })
}

impl fmt::Display for GpgReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<12} {:>10}", "metric", "mean")?;
        writeln!(f, "{:<12} {:>10.4}", "gini", self.mean_gini)?;
        writeln!(f, "{:<12} {:>10.4}", "percentage", self.mean_percentage)?;
        writeln!(f, "{:<12} {:>10.4}", "max_hit", self.mean_max_hit)?;
        write!(f, "{:<12} {:>10}", "samples", self.count)
    }
}

pub fn parse_gpg_samples(text: &str) -> Result<Vec<GpgSample>> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let sample: GpgSample = serde_json::from_str(line)
            .map_err(|e| Error::Format(format!("GPG line {}: {e}", lineno + 1)))?;
        sample
            .check()
            .map_err(|e| Error::InvalidArgument(format!("GPG line {}: {e}", lineno + 1)))?;
        out.push(sample);
    }
    Ok(out)
}

pub fn read_gpg_samples(path: impl AsRef<Path>) -> Result<Vec<GpgSample>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_gpg_samples(&text)
}

pub fn write_gpg_samples(samples: &[GpgSample], header: Option<&str>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut text = String::new();
    if let Some(h) = header {
        for line in h.lines() {
            text.push_str("# ");
            text.push_str(line);
            text.push('\n');
        }
    }
    for s in samples {
        text.push_str(&serde_json::to_string(s)?);
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn top1_accuracy(predicted: &[usize], truth: &[usize]) -> Result<f64> {
    if predicted.len() != truth.len() {
        return Err(Error::DimensionMismatch {
            expected: truth.len(),
            found: predicted.len(),
        });
    }
    if truth.is_empty() {
        return Err(Error::EmptyInput("no labels to score"));
    }
    let hits = predicted.iter().zip(truth).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / truth.len() as f64)
}
