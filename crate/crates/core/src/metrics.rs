//! Accuracy metrics against ground truth.
//!
//! All metrics are computed after removing the global gauge with
//! [`gauge_align`]. Angles are in degrees.

use std::collections::BTreeMap;

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::so3::{angular_distance, project_so3_finite, DEGENERATE_SINGULAR_VALUE};
use crate::stack::RotationStack;

/// Number of thresholds used by [`average_accuracy`]: 0.1, 0.2, ..., 20.0 degrees.
pub const AA_THRESHOLDS: usize = 200;

/// Right-multiplies every estimate by `Q = proj(sum_i R_i^T R*_i)`.
pub fn gauge_align(est: &RotationStack, gt: &RotationStack) -> Result<RotationStack> {
    Ok(gauge_align_with_warning(est, gt)?.0)
}

/// Like [`gauge_align`], also returning a warning when the alignment sum is
/// degenerate and the identity was used.
pub fn gauge_align_with_warning(
    est: &RotationStack,
    gt: &RotationStack,
) -> Result<(RotationStack, Option<String>)> {
    if est.len() != gt.len() {
        return Err(Error::InvalidArgument(format!(
            "estimate has {} cameras, ground truth has {}",
            est.len(),
            gt.len()
        )));
    }
    let sum: Matrix3<f64> = est
        .blocks()
        .iter()
        .zip(gt.blocks())
        .map(|(r, g)| r.transpose() * g)
        .sum();
    let mut warning = None;
    if sum.svd(false, false).singular_values[0] < DEGENERATE_SINGULAR_VALUE {
        let msg = "degenerate gauge alignment; using the identity".to_string();
        log::warn!("{msg}");
        warning = Some(msg);
    }
    let q = project_so3_finite(&sum);
    Ok((est.right_multiplied(q.matrix()), warning))
}

/// Per-camera angular errors between two equally long stacks.
pub fn per_camera_errors(aligned: &RotationStack, gt: &RotationStack) -> Result<Vec<f64>> {
    if aligned.len() != gt.len() {
        return Err(Error::InvalidArgument(
            "stacks have different camera counts".into(),
        ));
    }
    (0..aligned.len())
        .map(|i| Ok(angular_distance(&aligned.rotation(i)?, &gt.rotation(i)?)))
        .collect()
}

/// Root mean square of the per-camera angular errors.
pub fn rms_error(aligned: &RotationStack, gt: &RotationStack) -> Result<f64> {
    Ok(rms(&per_camera_errors(aligned, gt)?))
}

pub fn rms(errors: &[f64]) -> f64 {
    if errors.is_empty() {
        return 0.0;
    }
    (errors.iter().map(|e| e * e).sum::<f64>() / errors.len() as f64).sqrt()
}

/// Area under the recall-vs-threshold curve on `[0, threshold]`, in percent.
///
/// The empirical recall curve is a step function, so the area is exact:
/// each camera contributes `threshold - min(error, threshold)`.
pub fn auc(errors_deg: &[f64], threshold_deg: f64) -> Result<f64> {
    if errors_deg.is_empty() {
        return Err(Error::InvalidArgument("AUC of an empty error list".into()));
    }
    if !(threshold_deg > 0.0) {
        return Err(Error::InvalidArgument("AUC threshold must be positive".into()));
    }
    let area: f64 = errors_deg
        .iter()
        .map(|&e| threshold_deg - e.min(threshold_deg))
        .sum();
    Ok(100.0 * area / (errors_deg.len() as f64 * threshold_deg))
}

/// Mean over thresholds 0.1..=20.0 (step 0.1) of the percentage of cameras
/// with error at most the threshold.
pub fn average_accuracy(errors_deg: &[f64]) -> Result<f64> {
    if errors_deg.is_empty() {
        return Err(Error::InvalidArgument("AA of an empty error list".into()));
    }
    let mut sorted = errors_deg.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut hits = 0usize;
    for m in 1..=AA_THRESHOLDS {
        let t = m as f64 / 10.0;
        hits += sorted.partition_point(|&e| e <= t);
    }
    Ok(100.0 * hits as f64 / (AA_THRESHOLDS * errors_deg.len()) as f64)
}

/// Linearly interpolated quantile of sorted data (the "type 7" convention).
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty data");
    let h = (sorted.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Median and interquartile range with linear-interpolation quantiles.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Spread {
    pub median: f64,
    pub iqr: f64,
}

pub fn spread(values: &[f64]) -> Result<Spread> {
    if values.is_empty() {
        return Err(Error::InvalidArgument("spread of an empty list".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(Spread {
        median: quantile_sorted(&sorted, 0.5),
        iqr: quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub rms_deg: f64,
    /// AUC in percent keyed by threshold in degrees, formatted without trailing zeros.
    pub auc: BTreeMap<String, f64>,
    pub aa: f64,
    pub per_camera_errors_deg: Vec<f64>,
}

impl MetricsReport {
    /// Aligns `est` to `gt` and computes every metric.
    pub fn evaluate(est: &RotationStack, gt: &RotationStack, auc_thresholds: &[f64]) -> Result<Self> {
        let aligned = gauge_align(est, gt)?;
        let errors = per_camera_errors(&aligned, gt)?;
        Self::from_errors(errors, auc_thresholds)
    }

    pub fn from_errors(errors: Vec<f64>, auc_thresholds: &[f64]) -> Result<Self> {
        let mut auc_map = BTreeMap::new();
        for &t in auc_thresholds {
            auc_map.insert(format!("{t}"), auc(&errors, t)?);
        }
        Ok(MetricsReport {
            rms_deg: rms(&errors),
            auc: auc_map,
            aa: average_accuracy(&errors)?,
            per_camera_errors_deg: errors,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("metrics serialize")
    }
}

/// Summary over scenes: spread of the RMS errors and mean AA.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneAggregate {
    pub scenes: usize,
    pub rms: Spread,
    pub maa: f64,
    pub quantile_convention: String,
}

pub fn aggregate(reports: &[MetricsReport]) -> Result<SceneAggregate> {
    if reports.is_empty() {
        return Err(Error::InvalidArgument("aggregate of zero scenes".into()));
    }
    let rms: Vec<f64> = reports.iter().map(|r| r.rms_deg).collect();
    Ok(SceneAggregate {
        scenes: reports.len(),
        rms: spread(&rms)?,
        maa: reports.iter().map(|r| r.aa).sum::<f64>() / reports.len() as f64,
        quantile_convention: "linear interpolation (type 7)".into(),
    })
}
