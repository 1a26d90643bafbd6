//! Navigation metrics: SR, SPL, SoftSPL and nDTW.
//!
//! Inputs are in cm. nDTW converts to metres before the DP, so `eta` is in metres.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::Scalar;

pub const DEFAULT_ETA: f64 = 5.0;
pub const DEFAULT_DELTA_CM: f64 = 100.0;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("path is empty")]
    EmptyPath,
    #[error("reference length L* must be positive")]
    ZeroLStar,
    #[error("initial distance d0 must be positive")]
    ZeroD0,
    #[error("eta must be positive")]
    BadEta,
    #[error("no records to aggregate")]
    EmptySet,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct TrajectoryRecord<T: Scalar> {
    /// Agent positions after reset and after every step, cm.
    pub poses: Vec<[T; 2]>,
    /// Sum of consecutive pose distances, cm.
    pub executed_length: T,
    /// Distance to goal at the end, cm.
    pub final_d: T,
    pub reference: Vec<[T; 2]>,
    pub l_star: T,
    pub d0: T,
    pub success_threshold: T,
}

fn dist<T: Scalar>(a: [T; 2], b: [T; 2]) -> T {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

pub fn path_length<T: Scalar>(poses: &[[T; 2]]) -> T {
    poses.windows(2).fold(T::zero(), |acc, w| acc + dist(w[0], w[1]))
}

impl<T: Scalar> TrajectoryRecord<T> {
    /// Builds a record with the executed length derived from `poses`; d0 = L*.
    pub fn new(poses: Vec<[T; 2]>, final_d: T, reference: Vec<[T; 2]>, l_star: T) -> Self {
        Self {
            executed_length: path_length(&poses),
            poses,
            final_d,
            reference,
            l_star,
            d0: l_star,
            success_threshold: T::lit(DEFAULT_DELTA_CM),
        }
    }
}

pub fn success<T: Scalar>(rec: &TrajectoryRecord<T>) -> T {
    if rec.final_d < rec.success_threshold {
        T::one()
    } else {
        T::zero()
    }
}

fn efficiency<T: Scalar>(rec: &TrajectoryRecord<T>) -> T {
    rec.l_star / rec.executed_length.max(rec.l_star)
}

pub fn spl<T: Scalar>(rec: &TrajectoryRecord<T>) -> Result<T, MetricError> {
    if rec.l_star <= T::zero() {
        return Err(MetricError::ZeroLStar);
    }
    Ok(success(rec) * efficiency(rec))
}

pub fn softspl<T: Scalar>(rec: &TrajectoryRecord<T>) -> Result<T, MetricError> {
    if rec.d0 <= T::zero() {
        return Err(MetricError::ZeroD0);
    }
    if rec.l_star <= T::zero() {
        return Err(MetricError::ZeroLStar);
    }
    let progress = (T::one() - rec.final_d / rec.d0).max(T::zero());
    Ok(progress * efficiency(rec))
}

/// Dynamic time warping with Euclidean point cost and match/insert/delete moves.
pub fn dtw<T: Scalar>(a: &[[T; 2]], b: &[[T; 2]]) -> Result<T, MetricError> {
    if a.is_empty() || b.is_empty() {
        return Err(MetricError::EmptyPath);
    }
    let m = b.len();
    let inf = T::infinity();
    let mut prev = vec![inf; m];
    let mut cur = vec![inf; m];
    for (i, p) in a.iter().enumerate() {
        for (j, q) in b.iter().enumerate() {
            let best = if i == 0 && j == 0 {
                T::zero()
            } else {
                let up = if i > 0 { prev[j] } else { inf };
                let left = if j > 0 { cur[j - 1] } else { inf };
                let diag = if i > 0 && j > 0 { prev[j - 1] } else { inf };
                up.min(left).min(diag)
            };
            cur[j] = best + dist(*p, *q);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    Ok(prev[m - 1])
}

/// exp(-DTW(P, P*) / (eta * |P*|)) with DTW measured in metres.
pub fn ndtw<T: Scalar>(rec: &TrajectoryRecord<T>, eta: T) -> Result<T, MetricError> {
    if eta <= T::zero() {
        return Err(MetricError::BadEta);
    }
    let to_m = |v: &[[T; 2]]| -> Vec<[T; 2]> {
        let k = T::lit(100.0);
        v.iter().map(|p| [p[0] / k, p[1] / k]).collect()
    };
    let d = dtw(&to_m(&rec.poses), &to_m(&rec.reference))?;
    let n = T::from_usize(rec.reference.len()).expect("length fits");
    Ok((-d / (eta * n)).exp())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct EpisodeMetrics<T: Scalar> {
    pub success: T,
    pub spl: T,
    pub softspl: T,
    pub ndtw: T,
}

pub fn episode_metrics<T: Scalar>(rec: &TrajectoryRecord<T>, eta: T) -> Result<EpisodeMetrics<T>, MetricError> {
    Ok(EpisodeMetrics {
        success: success(rec),
        spl: spl(rec)?,
        softspl: softspl(rec)?,
        ndtw: ndtw(rec, eta)?,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct MetricReport<T: Scalar> {
    #[serde(rename = "SR")]
    pub sr: T,
    #[serde(rename = "SPL")]
    pub spl: T,
    #[serde(rename = "SoftSPL")]
    pub softspl: T,
    #[serde(rename = "nDTW")]
    pub ndtw: T,
    #[serde(rename = "N")]
    pub n: usize,
}

/// Unweighted means over episodes; `delta` overrides each record's threshold.
pub fn aggregate<T: Scalar>(records: &[TrajectoryRecord<T>], eta: T, delta: T) -> Result<MetricReport<T>, MetricError> {
    if records.is_empty() {
        return Err(MetricError::EmptySet);
    }
    let mut sum = [T::zero(); 4];
    for r in records {
        let r = TrajectoryRecord {
            success_threshold: delta,
            ..r.clone()
        };
        let m = episode_metrics(&r, eta)?;
        for (s, v) in sum.iter_mut().zip([m.success, m.spl, m.softspl, m.ndtw]) {
            *s = *s + v;
        }
    }
    let n = T::from_usize(records.len()).expect("count fits");
    Ok(MetricReport {
        sr: sum[0] / n,
        spl: sum[1] / n,
        softspl: sum[2] / n,
        ndtw: sum[3] / n,
        n: records.len(),
    })
}
