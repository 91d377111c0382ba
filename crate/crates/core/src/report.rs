//! Measurement-space error reporting for projected sessions.
//!
//! The metric is per-frame relative L2 error against the ground-truth
//! frames. When the invalid measurement indices are known, the report also
//! carries the zero-fill baseline (missing entries set to 0) and the
//! fraction of frames where the projection beats it. This is deliberately a
//! measurement-space metric, not a pose metric: no pose model exists here.

use std::fmt;

use serde::Serialize;

use crate::pod::SnapshotMatrix;
use crate::{Error, Result};

#[derive(Debug, Clone, Serialize)]
pub struct ErrorStats {
    pub median: f64,
    pub mean: f64,
    pub p95: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ErrorReport {
    pub frame_count: usize,
    pub per_frame: Vec<f64>,
    pub projected: ErrorStats,
    /// Zero-fill baseline stats, present when the invalid indices were known.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub baseline: Option<ErrorStats>,
    /// Fraction of frames where the projection error is strictly below the
    /// zero-fill baseline error.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beats_baseline_fraction: Option<f64>,
}

fn stats(mut errors: Vec<f64>) -> ErrorStats {
    let n = errors.len();
    let mean = errors.iter().sum::<f64>() / n as f64;
    errors.sort_by(f64::total_cmp);
    let median = if n % 2 == 1 {
        errors[n / 2]
    } else {
        (errors[n / 2 - 1] + errors[n / 2]) / 2.0
    };
    let p95 = errors[(((n as f64) * 0.95).ceil() as usize).clamp(1, n) - 1];
    ErrorStats { median, mean, p95 }
}

fn relative_error(truth: &nalgebra::DVector<f64>, other: &nalgebra::DVector<f64>) -> f64 {
    let denom = truth.norm();
    if denom == 0.0 {
        return if other.norm() == 0.0 { 0.0 } else { f64::INFINITY };
    }
    (other - truth).norm() / denom
}

/// Compares projected frames against ground truth.
///
/// `invalid_indices`, when given, are the measurement rows that were missing
/// before projection; they define the zero-fill baseline.
pub fn eval_projection(
    truth: &SnapshotMatrix,
    projected: &SnapshotMatrix,
    invalid_indices: Option<&[usize]>,
) -> Result<ErrorReport> {
    if truth.protocol_id != projected.protocol_id {
        return Err(Error::Mismatch(format!(
            "truth frames carry protocol {}, projected frames carry {}",
            truth.protocol_id, projected.protocol_id
        )));
    }
    if truth.frame_len() != projected.frame_len() || truth.frame_count() != projected.frame_count()
    {
        return Err(Error::Dimension(format!(
            "truth is {}×{}, projected is {}×{}",
            truth.frame_len(),
            truth.frame_count(),
            projected.frame_len(),
            projected.frame_count()
        )));
    }
    let n = truth.frame_count();
    let mut per_frame = Vec::with_capacity(n);
    let mut baseline_errors = Vec::with_capacity(n);
    let mut beats = 0usize;
    for f in 0..n {
        let t = truth.frame(f);
        let p = projected.frame(f);
        let err = relative_error(&t, &p);
        per_frame.push(err);
        if let Some(invalid) = invalid_indices {
            let mut zero_fill = t.clone();
            for &i in invalid {
                if i >= zero_fill.len() {
                    return Err(Error::Dimension(format!(
                        "invalid index {i} beyond frame length {}",
                        zero_fill.len()
                    )));
                }
                zero_fill[i] = 0.0;
            }
            let base = relative_error(&t, &zero_fill);
            if err < base {
                beats += 1;
            }
            baseline_errors.push(base);
        }
    }
    let baseline = invalid_indices.map(|_| stats(baseline_errors));
    Ok(ErrorReport {
        frame_count: n,
        projected: stats(per_frame.clone()),
        per_frame,
        baseline,
        beats_baseline_fraction: invalid_indices.map(|_| beats as f64 / n as f64),
    })
}

impl fmt::Display for ErrorReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "frames evaluated: {}", self.frame_count)?;
        writeln!(f, "{:<22} {:>12} {:>12} {:>12}", "relative L2 error", "median", "mean", "p95")?;
        writeln!(
            f,
            "{:<22} {:>12.4e} {:>12.4e} {:>12.4e}",
            "projected", self.projected.median, self.projected.mean, self.projected.p95
        )?;
        if let Some(b) = &self.baseline {
            writeln!(
                f,
                "{:<22} {:>12.4e} {:>12.4e} {:>12.4e}",
                "zero-fill baseline", b.median, b.mean, b.p95
            )?;
        }
        if let Some(frac) = self.beats_baseline_fraction {
            writeln!(f, "beats baseline on {:.1}% of frames", 100.0 * frac)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn snap(frames: DMatrix<f64>) -> SnapshotMatrix {
        SnapshotMatrix::new(frames, "p").unwrap()
    }

    #[test]
    fn identical_frames_score_zero() {
        let t = snap(DMatrix::from_fn(4, 3, |r, c| (r + c) as f64 + 1.0));
        let report = eval_projection(&t, &t.clone(), None).unwrap();
        assert!(report.per_frame.iter().all(|&e| e == 0.0));
        assert_eq!(report.projected.median, 0.0);
        assert!(report.baseline.is_none());
    }

    #[test]
    fn zero_frames_score_one() {
        let t = snap(DMatrix::from_fn(4, 3, |r, c| (r + c) as f64 + 1.0));
        let zeros = snap(DMatrix::zeros(4, 3));
        let report = eval_projection(&t, &zeros, None).unwrap();
        for &e in &report.per_frame {
            assert!((e - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn baseline_comparison() {
        // Truth has weight on rows 0 and 1; projection recovers row 0 exactly
        // while the zero-fill baseline loses it.
        let t = snap(DMatrix::from_fn(3, 4, |r, _| if r < 2 { 1.0 } else { 0.5 }));
        let p = t.clone();
        let report = eval_projection(&t, &p, Some(&[0])).unwrap();
        assert_eq!(report.beats_baseline_fraction, Some(1.0));
        assert!(report.baseline.unwrap().median > 0.0);
    }

    #[test]
    fn mismatched_inputs_rejected() {
        let t = snap(DMatrix::zeros(4, 3));
        let small = snap(DMatrix::zeros(3, 3));
        assert!(eval_projection(&t, &small, None).is_err());
        let other = SnapshotMatrix::new(DMatrix::zeros(4, 3), "q").unwrap();
        assert!(matches!(eval_projection(&t, &other, None), Err(Error::Mismatch(_))));
    }

    #[test]
    fn stats_percentile() {
        let s = stats((1..=100).map(|i| i as f64).collect());
        assert_eq!(s.p95, 95.0);
        assert_eq!(s.median, 50.5);
    }
}
