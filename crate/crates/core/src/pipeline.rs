//! The full KNN -> TF -> GMS -> PROSAC cascade with a per-stage trace.

use serde::{Deserialize, Serialize};

use crate::cascade::{
    default_radius, neighborhood_support, ratio_filter_tally, support_filter, MatchSet, RatioTally, Stage,
};
use crate::descriptor::{knn2_match, FeatureSet};
use crate::error::{MatchError, Result};
use crate::homography::Homography;
use crate::metrics::{MetricMode, MetricsReport};
use crate::robust::{prosac_estimate, quality_order, ProsacMode, RobustConfig, RobustEstimate, SAMPLE_SIZE};

/// Neighborhood radius: explicit pixels, or a fraction of the image diagonal.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub enum Radius {
    #[default]
    Auto,
    Pixels(f64),
}

impl Radius {
    pub fn resolve(&self, target: &FeatureSet, reference: &FeatureSet) -> f64 {
        match *self {
            Radius::Auto => default_radius(target, reference),
            Radius::Pixels(r) => r,
        }
    }
}

impl std::str::FromStr for Radius {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        if s == "auto" {
            return Ok(Radius::Auto);
        }
        s.parse::<f64>()
            .map(Radius::Pixels)
            .map_err(|_| format!("radius must be 'auto' or a number of pixels, got '{s}'"))
    }
}

impl Serialize for Radius {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Radius::Auto => s.serialize_str("auto"),
            Radius::Pixels(r) => s.serialize_f64(*r),
        }
    }
}

impl<'de> Deserialize<'de> for Radius {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Text(String),
            Number(f64),
        }
        match Raw::deserialize(d)? {
            Raw::Number(r) => Ok(Radius::Pixels(r)),
            Raw::Text(t) => t.parse().map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub t_w: f64,
    pub t_g: usize,
    pub neighborhood_radius: Radius,
    pub inlier_threshold: f64,
    pub min_inliers: usize,
    pub max_iterations: usize,
    pub seed: u64,
    pub prosac_mode: ProsacMode,
    pub metric_mode: MetricMode,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            t_w: 0.66,
            t_g: 6,
            neighborhood_radius: Radius::Auto,
            inlier_threshold: 3.0,
            min_inliers: 10,
            max_iterations: 2000,
            seed: 0,
            prosac_mode: ProsacMode::Standard,
            metric_mode: MetricMode::Displacement,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.t_w > 0.0 && self.t_w <= 1.0) {
            return Err(MatchError::InvalidParameter(format!(
                "t_w must lie in (0, 1], got {}",
                self.t_w
            )));
        }
        if let Radius::Pixels(r) = self.neighborhood_radius {
            if !(r > 0.0 && r.is_finite()) {
                return Err(MatchError::InvalidParameter(format!(
                    "radius must be positive, got {r}"
                )));
            }
        }
        self.robust_config().validate()
    }

    pub fn robust_config(&self) -> RobustConfig {
        RobustConfig {
            inlier_threshold: self.inlier_threshold,
            min_inliers: self.min_inliers,
            max_iterations: self.max_iterations,
            seed: self.seed,
            mode: self.prosac_mode,
            ..RobustConfig::default()
        }
    }
}

/// Everything a pipeline run produced, stage by stage.
#[derive(Debug, Clone)]
pub struct PipelineRun {
    /// Output of each executed stage, in execution order.
    pub stages: Vec<MatchSet>,
    pub ratio_tally: RatioTally,
    /// Neighborhood radius actually used, when the GMS stage ran.
    pub radius: Option<f64>,
    /// Robust estimate, when the PROSAC stage ran on at least four matches.
    pub estimate: Option<RobustEstimate>,
}

impl PipelineRun {
    pub fn final_matches(&self) -> &MatchSet {
        self.stages.last().expect("pipeline always runs KNN")
    }

    pub fn stage(&self, stage: Stage) -> Option<&MatchSet> {
        self.stages.iter().find(|s| s.stage() == stage)
    }

    pub fn counts(&self) -> Vec<(Stage, usize)> {
        self.stages.iter().map(|s| (s.stage(), s.len())).collect()
    }

    /// Converged unless the PROSAC stage ran and failed to.
    pub fn converged(&self) -> bool {
        match self.stages.last().map(|s| s.stage()) {
            Some(Stage::Prosac) => self.estimate.as_ref().is_some_and(|e| e.converged),
            _ => true,
        }
    }

    pub fn homography(&self) -> Option<&Homography> {
        self.estimate.as_ref().and_then(|e| e.homography.as_ref())
    }

    /// Metrics of every stage; `None` for stages with no matches.
    pub fn stage_metrics(
        &self,
        target: &FeatureSet,
        reference: &FeatureSet,
        mode: MetricMode,
        gt: Option<&Homography>,
        inlier_threshold: f64,
    ) -> Result<Vec<Option<MetricsReport>>> {
        self.stages
            .iter()
            .map(|s| {
                if s.is_empty() {
                    return Ok(None);
                }
                let pairs = s.point_pairs(target, reference);
                MetricsReport::evaluate(&pairs, target.len(), mode, gt, inlier_threshold).map(Some)
            })
            .collect()
    }
}

/// Runs the cascade up to and including `stop_after`.
pub fn run_pipeline(
    target: &FeatureSet,
    reference: &FeatureSet,
    cfg: &PipelineConfig,
    stop_after: Stage,
) -> Result<PipelineRun> {
    cfg.validate()?;
    let knn = MatchSet::from_knn(knn2_match(target, reference)?)?;
    let mut run = PipelineRun {
        stages: vec![knn],
        ratio_tally: RatioTally::default(),
        radius: None,
        estimate: None,
    };
    if stop_after == Stage::Knn {
        return Ok(run);
    }

    let (tf, tally) = ratio_filter_tally(&run.stages[0], cfg.t_w);
    run.ratio_tally = tally;
    run.stages.push(tf);
    if stop_after == Stage::Tf {
        return Ok(run);
    }

    let radius = cfg.neighborhood_radius.resolve(target, reference);
    let tf = run.final_matches();
    let supports = neighborhood_support(tf, target, reference, radius)?;
    let gms = support_filter(tf, &supports, cfg.t_g)?;
    run.radius = Some(radius);
    run.stages.push(gms);
    if stop_after == Stage::Gms {
        return Ok(run);
    }

    let gms = run.final_matches();
    let prosac = if gms.len() < SAMPLE_SIZE {
        log::warn!("only {} matches left for PROSAC", gms.len());
        gms.retain_positions(Stage::Prosac, |_| false)
    } else {
        let estimate = prosac_estimate(&quality_order(gms)?, target, reference, &cfg.robust_config())?;
        let out = retain_indices(gms, &estimate.inlier_indices);
        run.estimate = Some(estimate);
        out
    };
    run.stages.push(prosac);
    Ok(run)
}

/// Keeps the matches at `sorted_indices`, relabeled as the PROSAC stage.
pub(crate) fn retain_indices(set: &MatchSet, sorted_indices: &[usize]) -> MatchSet {
    let mut next = sorted_indices.iter().peekable();
    set.retain_positions(Stage::Prosac, |i| {
        if next.peek() == Some(&&i) {
            next.next();
            true
        } else {
            false
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_scene, SynthConfig};

    fn scene() -> crate::synth::ScenePair {
        generate_scene(&SynthConfig {
            n_inliers: 150,
            n_outliers: 100,
            clusters: 6,
            cluster_radius: 40.0,
            noise_sigma: 0.5,
            descriptor_flip_bits: 8,
            seed: 3,
            ..SynthConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn stage_counts_are_nonincreasing_and_prefixes_agree() {
        let s = scene();
        let cfg = PipelineConfig::default();
        let full = run_pipeline(&s.target, &s.reference, &cfg, Stage::Prosac).unwrap();
        let counts = full.counts();
        assert_eq!(counts.len(), 4);
        assert!(counts.windows(2).all(|w| w[0].1 >= w[1].1), "{counts:?}");
        assert!(full.converged());

        for (i, stop) in [Stage::Knn, Stage::Tf, Stage::Gms].into_iter().enumerate() {
            let partial = run_pipeline(&s.target, &s.reference, &cfg, stop).unwrap();
            assert_eq!(partial.counts(), counts[..=i].to_vec());
            assert!(partial.converged());
        }
    }

    #[test]
    fn too_few_matches_for_prosac_is_not_converged() {
        let s = scene();
        let cfg = PipelineConfig {
            t_g: 10_000,
            ..PipelineConfig::default()
        };
        let run = run_pipeline(&s.target, &s.reference, &cfg, Stage::Prosac).unwrap();
        assert!(run.final_matches().is_empty());
        assert!(!run.converged());
    }

    #[test]
    fn config_validation() {
        let bad = PipelineConfig {
            t_w: 0.0,
            ..PipelineConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = PipelineConfig {
            neighborhood_radius: Radius::Pixels(-1.0),
            ..PipelineConfig::default()
        };
        assert!(bad.validate().is_err());
        assert_eq!("auto".parse::<Radius>().unwrap(), Radius::Auto);
        assert_eq!("12.5".parse::<Radius>().unwrap(), Radius::Pixels(12.5));
        let json = serde_json::to_string(&PipelineConfig::default()).unwrap();
        assert_eq!(
            serde_json::from_str::<PipelineConfig>(&json).unwrap(),
            PipelineConfig::default()
        );
    }
}
