//! Evaluation quantities (NM, REP, ME, RMSE) and the threshold sweeps.

use serde::{Deserialize, Serialize};

use crate::cascade::{neighborhood_support, ratio_filter, support_filter, MatchSet};
use crate::descriptor::{knn2_match, FeatureSet, Keypoint};
use crate::error::{MatchError, Result};
use crate::homography::{transfer_error, Homography};
use crate::pipeline::PipelineConfig;
use crate::robust::{prosac_estimate, quality_order, SAMPLE_SIZE};

/// How the per-match distance error is measured.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricMode {
    /// Raw distance between the matched coordinates.
    #[default]
    Displacement,
    /// Distance between the ground-truth projection of the target point and
    /// the matched reference point.
    GtTransfer,
}

impl std::str::FromStr for MetricMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "displacement" => Ok(MetricMode::Displacement),
            "gt_transfer" | "gt-transfer" => Ok(MetricMode::GtTransfer),
            other => Err(format!("unknown metric mode '{other}'")),
        }
    }
}

/// `n_matched / n_detected`.
pub fn repeatability(n_matched: usize, n_detected: usize) -> Result<f64> {
    if n_detected == 0 {
        return Err(MatchError::NoDetections);
    }
    if n_matched > n_detected {
        return Err(MatchError::InvalidParameter(format!(
            "{n_matched} matched exceeds {n_detected} detected"
        )));
    }
    Ok(n_matched as f64 / n_detected as f64)
}

fn pair_errors(pairs: &[(Keypoint, Keypoint)], mode: MetricMode, gt: Option<&Homography>) -> Result<Vec<f64>> {
    if pairs.is_empty() {
        return Err(MatchError::NoMatches);
    }
    match mode {
        MetricMode::Displacement => Ok(pairs.iter().map(|(p, q)| p.distance(q)).collect()),
        MetricMode::GtTransfer => {
            let h = gt.ok_or_else(|| {
                MatchError::InvalidParameter("gt_transfer mode needs a ground-truth homography".into())
            })?;
            pairs.iter().map(|(p, q)| transfer_error(h, p, q)).collect()
        }
    }
}

/// Mean distance error over all pairs.
pub fn mean_error(pairs: &[(Keypoint, Keypoint)], mode: MetricMode, gt: Option<&Homography>) -> Result<f64> {
    let e = pair_errors(pairs, mode, gt)?;
    Ok(e.iter().sum::<f64>() / e.len() as f64)
}

/// Root mean square distance error over all pairs.
pub fn rmse(pairs: &[(Keypoint, Keypoint)], mode: MetricMode, gt: Option<&Homography>) -> Result<f64> {
    let e = pair_errors(pairs, mode, gt)?;
    Ok((e.iter().map(|v| v * v).sum::<f64>() / e.len() as f64).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub nm: usize,
    pub rep: f64,
    pub me: f64,
    pub rmse: f64,
    pub mode: MetricMode,
    /// Pairs whose ground-truth transfer error is below the inlier threshold;
    /// present only when a ground truth is known.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub correct: Option<usize>,
}

impl MetricsReport {
    /// Evaluates a nonempty list of matched pairs. Repeatability is taken
    /// against `n_detected` target features.
    pub fn evaluate(
        pairs: &[(Keypoint, Keypoint)],
        n_detected: usize,
        mode: MetricMode,
        gt: Option<&Homography>,
        inlier_threshold: f64,
    ) -> Result<Self> {
        let errors = pair_errors(pairs, mode, gt)?;
        let n = errors.len() as f64;
        let correct = gt.map(|h| {
            pairs
                .iter()
                .filter(|(p, q)| transfer_error(h, p, q).is_ok_and(|e| e < inlier_threshold))
                .count()
        });
        Ok(Self {
            nm: pairs.len(),
            rep: repeatability(pairs.len(), n_detected)?,
            me: errors.iter().sum::<f64>() / n,
            rmse: (errors.iter().map(|v| v * v).sum::<f64>() / n).sqrt(),
            mode,
            correct,
        })
    }
}

/// One point of a threshold sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub threshold: f64,
    /// Matches surviving the swept stage.
    pub retained: usize,
    /// `retained` over the size of the stage input, as a fraction.
    pub q_percent: f64,
    pub nm: usize,
    /// `nm` minus the PROSAC output size; only for support-threshold sweeps.
    pub avg_diff: Option<f64>,
}

fn fraction(part: usize, whole: usize) -> f64 {
    if whole == 0 {
        0.0
    } else {
        part as f64 / whole as f64
    }
}

/// Checks that `value` moves in one direction as the threshold grows.
fn check_monotone(records: &[SweepRecord], nondecreasing: bool, what: &str) -> Result<()> {
    let mut sorted: Vec<&SweepRecord> = records.iter().collect();
    sorted.sort_by(|a, b| a.threshold.total_cmp(&b.threshold));
    for w in sorted.windows(2) {
        let ok = if nondecreasing {
            w[0].nm <= w[1].nm
        } else {
            w[0].nm >= w[1].nm
        };
        if !ok {
            return Err(MatchError::Monotonicity(format!(
                "{what} goes from {} at {} to {} at {}",
                w[0].nm, w[0].threshold, w[1].nm, w[1].threshold
            )));
        }
    }
    Ok(())
}

/// Ratio-test sweep: retention of KNN matches for every `t_w`.
pub fn sweep_tw(target: &FeatureSet, reference: &FeatureSet, tw_values: &[f64]) -> Result<Vec<SweepRecord>> {
    if tw_values.is_empty() {
        return Err(MatchError::InvalidParameter("empty t_w grid".into()));
    }
    if let Some(bad) = tw_values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
        return Err(MatchError::InvalidParameter(format!("invalid t_w value {bad}")));
    }
    let knn = MatchSet::from_knn(knn2_match(target, reference)?)?;
    let records: Vec<SweepRecord> = tw_values
        .iter()
        .map(|&t_w| {
            let kept = ratio_filter(&knn, t_w).len();
            SweepRecord {
                threshold: t_w,
                retained: kept,
                q_percent: fraction(kept, knn.len()),
                nm: kept,
                avg_diff: None,
            }
        })
        .collect();
    check_monotone(&records, true, "retention")?;
    Ok(records)
}

/// Support-threshold sweep: GMS output size for every `t_g`, and its gap to
/// the PROSAC output. The ratio test runs once at `cfg.t_w`.
pub fn sweep_tg(
    target: &FeatureSet,
    reference: &FeatureSet,
    cfg: &PipelineConfig,
    tg_values: &[usize],
) -> Result<Vec<SweepRecord>> {
    if tg_values.is_empty() {
        return Err(MatchError::InvalidParameter("empty t_g grid".into()));
    }
    cfg.validate()?;
    let knn = MatchSet::from_knn(knn2_match(target, reference)?)?;
    let tf = ratio_filter(&knn, cfg.t_w);
    let radius = cfg.neighborhood_radius.resolve(target, reference);
    let supports = neighborhood_support(&tf, target, reference, radius)?;
    let robust = cfg.robust_config();

    let records = tg_values
        .iter()
        .map(|&t_g| {
            let gms = support_filter(&tf, &supports, t_g)?;
            let final_count = if gms.len() < SAMPLE_SIZE {
                0
            } else {
                prosac_estimate(&quality_order(&gms)?, target, reference, &robust)?
                    .inlier_indices
                    .len()
            };
            Ok(SweepRecord {
                threshold: t_g as f64,
                retained: gms.len(),
                q_percent: fraction(gms.len(), tf.len()),
                nm: gms.len(),
                avg_diff: Some(gms.len() as f64 - final_count as f64),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    check_monotone(&records, false, "NM")?;
    Ok(records)
}
