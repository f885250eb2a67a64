//! Hypothesize-and-verify homography estimation.
//!
//! [`prosac_estimate`] draws minimal samples from a growing prefix of the
//! matches sorted by distance ratio, so the most distinctive matches are tried
//! first. [`ransac_estimate`] is the uniform-sampling baseline. Both share the
//! scoring, termination and final least-squares refit.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cascade::MatchSet;
use crate::descriptor::{FeatureSet, Keypoint};
use crate::error::{MatchError, Result};
use crate::homography::{dlt_homography, dlt_least_squares, transfer_error, Homography};

/// Minimal sample size for a homography.
pub const SAMPLE_SIZE: usize = 4;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProsacMode {
    /// Progressive prefix growth.
    #[default]
    Standard,
    /// Consecutive groups of four in quality order, tried best group first.
    Grouped,
}

impl std::str::FromStr for ProsacMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "standard" => Ok(ProsacMode::Standard),
            "grouped" => Ok(ProsacMode::Grouped),
            other => Err(format!("unknown prosac mode '{other}'")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustConfig {
    /// Transfer error (pixels) below which a match is an inlier.
    pub inlier_threshold: f64,
    /// Inliers required to report convergence.
    pub min_inliers: usize,
    /// Hard cap on drawn samples, degenerate ones included.
    pub max_iterations: usize,
    /// Probability of having drawn an all-inlier sample at early exit.
    pub confidence: f64,
    pub seed: u64,
    pub mode: ProsacMode,
}

impl Default for RobustConfig {
    fn default() -> Self {
        Self {
            inlier_threshold: 3.0,
            min_inliers: 10,
            max_iterations: 2000,
            confidence: 0.995,
            seed: 0,
            mode: ProsacMode::Standard,
        }
    }
}

impl RobustConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.inlier_threshold > 0.0 && self.inlier_threshold.is_finite()) {
            return Err(MatchError::InvalidParameter(format!(
                "inlier threshold must be positive, got {}",
                self.inlier_threshold
            )));
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(MatchError::InvalidParameter(format!(
                "confidence must lie in (0, 1), got {}",
                self.confidence
            )));
        }
        if self.max_iterations == 0 {
            return Err(MatchError::InvalidParameter("max_iterations must be positive".into()));
        }
        Ok(())
    }
}

/// Matches sorted by ascending distance ratio `d1 / d2`.
#[derive(Debug, Clone, PartialEq)]
pub struct QualityOrderedMatches {
    matches: MatchSet,
    quality: Vec<f64>,
    source_index: Vec<usize>,
}

impl QualityOrderedMatches {
    /// Sorted matches; the stage label is that of the input set.
    pub fn matches(&self) -> &MatchSet {
        &self.matches
    }

    /// Ratio of every sorted match, ascending.
    pub fn quality(&self) -> &[f64] {
        &self.quality
    }

    /// Position of every sorted match in the input set.
    pub fn source_index(&self) -> &[usize] {
        &self.source_index
    }

    pub fn len(&self) -> usize {
        self.quality.len()
    }

    pub fn is_empty(&self) -> bool {
        self.quality.is_empty()
    }
}

/// Stable ascending sort by `d1 / d2`; smaller ratios are more likely inliers.
pub fn quality_order(input: &MatchSet) -> Result<QualityOrderedMatches> {
    let ratios = input
        .matches()
        .iter()
        .enumerate()
        .map(|(i, m)| m.distance_ratio().ok_or(MatchError::Unscorable(i)))
        .collect::<Result<Vec<_>>>()?;
    let mut order: Vec<usize> = (0..ratios.len()).collect();
    order.sort_by(|&a, &b| ratios[a].total_cmp(&ratios[b]));
    let sorted = order.iter().map(|&i| input.matches()[i]).collect();
    Ok(QualityOrderedMatches {
        matches: MatchSet::new(sorted, input.stage())?,
        quality: order.iter().map(|&i| ratios[i]).collect(),
        source_index: order,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustEstimate {
    /// Best model, absent when every sample was degenerate.
    pub homography: Option<Homography>,
    /// Positions in the input match set, ascending.
    pub inlier_indices: Vec<usize>,
    pub iterations_used: usize,
    pub converged: bool,
}

/// One drawn sample, for inspecting the sampling schedule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HypothesisRecord {
    /// Positions in the input match set.
    pub sample: [usize; SAMPLE_SIZE],
    /// Size of the quality-ordered prefix the sample was drawn from.
    pub prefix: usize,
    pub degenerate: bool,
    /// Inliers of the hypothesis over all matches; 0 when degenerate.
    pub inliers: usize,
}

/// Samples needed to see an all-inlier minimal sample with probability
/// `confidence` when the inlier ratio is `w`.
pub fn required_iterations(w: f64, confidence: f64) -> f64 {
    let p_good = w.powi(SAMPLE_SIZE as i32);
    if p_good >= 1.0 {
        return 0.0;
    }
    if p_good <= 0.0 {
        return f64::INFINITY;
    }
    ((1.0 - confidence).ln() / (1.0 - p_good).ln()).ceil()
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Progressive sampling schedule over a quality-ordered list of `total` items.
///
/// Sample `t` (1-based) is drawn as item `n - 1` plus three items from the
/// first `n - 1`, where `n` is the smallest prefix with `T'_n >= t`. The
/// schedule uses `T_4 = T_N / C(N, 4)`, `T_{n+1} = T_n (n + 1) / (n + 1 - 4)`
/// and `T'_{n+1} = T'_n + ceil(T_{n+1} - T_n)` with `T'_4 = 1`. Past `T'_N`
/// samples are uniform over all items.
#[derive(Debug, Clone)]
pub struct ProsacSchedule {
    total: usize,
    n: usize,
    t_n: f64,
    t_n_prime: usize,
    t: usize,
}

impl ProsacSchedule {
    pub fn new(total: usize, budget: usize) -> Self {
        assert!(total >= SAMPLE_SIZE);
        Self {
            total,
            n: SAMPLE_SIZE,
            t_n: budget as f64 / binomial(total, SAMPLE_SIZE),
            t_n_prime: 1,
            t: 0,
        }
    }

    /// Current prefix size.
    pub fn prefix(&self) -> usize {
        self.n
    }

    /// Moves to the next sample index, growing the prefix as required.
    pub fn advance(&mut self) {
        self.t += 1;
        while self.t > self.t_n_prime && self.n < self.total {
            let next = self.t_n * (self.n + 1) as f64 / (self.n + 1 - SAMPLE_SIZE) as f64;
            self.t_n_prime += ((next - self.t_n).ceil() as usize).max(1);
            self.t_n = next;
            self.n += 1;
        }
    }

    /// True when the sample for the current index has exactly one possible draw.
    pub fn is_deterministic(&self) -> bool {
        self.n == SAMPLE_SIZE
    }

    /// Draws the sample for the current index as positions in the ordered list.
    pub fn draw(&self, rng: &mut impl Rng) -> [usize; SAMPLE_SIZE] {
        let mut out = [0; SAMPLE_SIZE];
        if self.t > self.t_n_prime {
            for (o, i) in out.iter_mut().zip(index::sample(rng, self.total, SAMPLE_SIZE)) {
                *o = i;
            }
        } else {
            for (o, i) in out.iter_mut().zip(index::sample(rng, self.n - 1, SAMPLE_SIZE - 1)) {
                *o = i;
            }
            out[SAMPLE_SIZE - 1] = self.n - 1;
        }
        out
    }
}

/// What the estimator loop needs from a sampling strategy.
trait Sampler {
    /// The next sample as positions into the point list, with its prefix size;
    /// `None` ends the search early.
    fn next(&mut self, rng: &mut ChaCha8Rng) -> Option<([usize; SAMPLE_SIZE], usize)>;
    /// Reports whether the last sample yielded a model.
    fn feedback(&mut self, degenerate: bool);
}

struct ProgressiveSampler {
    schedule: ProsacSchedule,
    pending: bool,
}

impl Sampler for ProgressiveSampler {
    fn next(&mut self, rng: &mut ChaCha8Rng) -> Option<([usize; SAMPLE_SIZE], usize)> {
        if !self.pending {
            self.schedule.advance();
            self.pending = true;
        }
        Some((self.schedule.draw(rng), self.schedule.prefix()))
    }

    fn feedback(&mut self, degenerate: bool) {
        // degenerate draws are retried at the same schedule index unless
        // there is nothing else to draw
        if !degenerate || self.schedule.is_deterministic() {
            self.pending = false;
        }
    }
}

struct GroupedSampler {
    groups: Vec<usize>,
    next_group: usize,
}

impl GroupedSampler {
    fn new(quality: &[f64]) -> Self {
        let count = quality.len() / SAMPLE_SIZE;
        let sums: Vec<f64> = (0..count)
            .map(|g| quality[g * SAMPLE_SIZE..(g + 1) * SAMPLE_SIZE].iter().sum())
            .collect();
        let mut groups: Vec<usize> = (0..count).collect();
        groups.sort_by(|&a, &b| sums[a].total_cmp(&sums[b]));
        Self { groups, next_group: 0 }
    }
}

impl Sampler for GroupedSampler {
    fn next(&mut self, _rng: &mut ChaCha8Rng) -> Option<([usize; SAMPLE_SIZE], usize)> {
        let g = *self.groups.get(self.next_group)?;
        self.next_group += 1;
        let base = g * SAMPLE_SIZE;
        Some(([base, base + 1, base + 2, base + 3], base + SAMPLE_SIZE))
    }

    fn feedback(&mut self, _degenerate: bool) {}
}

struct UniformSampler {
    total: usize,
}

impl Sampler for UniformSampler {
    fn next(&mut self, rng: &mut ChaCha8Rng) -> Option<([usize; SAMPLE_SIZE], usize)> {
        let mut out = [0; SAMPLE_SIZE];
        for (o, i) in out.iter_mut().zip(index::sample(rng, self.total, SAMPLE_SIZE)) {
            *o = i;
        }
        Some((out, self.total))
    }

    fn feedback(&mut self, _degenerate: bool) {}
}

struct Score {
    count: usize,
    error_sum: f64,
}

impl Score {
    fn better_than(&self, other: &Score) -> bool {
        // equal counts: compare mean errors via cross-multiplied sums
        self.count > other.count
            || (self.count == other.count
                && self.count > 0
                && self.error_sum * (other.count as f64) < other.error_sum * (self.count as f64))
    }
}

fn score(h: &Homography, points: &[(Keypoint, Keypoint)], threshold: f64) -> (Score, Vec<usize>) {
    let mut inliers = Vec::new();
    let mut error_sum = 0.0;
    for (i, (p, q)) in points.iter().enumerate() {
        if let Ok(e) = transfer_error(h, p, q) {
            if e < threshold {
                inliers.push(i);
                error_sum += e;
            }
        }
    }
    (
        Score {
            count: inliers.len(),
            error_sum,
        },
        inliers,
    )
}

/// Shared hypothesize-and-verify loop. `points` are in sampling order and
/// `source` maps each to its position in the caller's match set.
fn estimate(
    points: &[(Keypoint, Keypoint)],
    source: &[usize],
    sampler: &mut dyn Sampler,
    cfg: &RobustConfig,
) -> (RobustEstimate, Vec<HypothesisRecord>) {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut trace = Vec::new();
    let mut best: Option<(Homography, Score, Vec<usize>)> = None;
    let mut iterations = 0;
    let mut needed = f64::INFINITY;

    while iterations < cfg.max_iterations && (iterations as f64) < needed {
        let Some((sample, prefix)) = sampler.next(&mut rng) else {
            break;
        };
        iterations += 1;
        let pairs = sample.map(|i| points[i]);
        let model = dlt_homography(&pairs).ok();
        sampler.feedback(model.is_none());

        let mut record = HypothesisRecord {
            sample: sample.map(|i| source[i]),
            prefix,
            degenerate: model.is_none(),
            inliers: 0,
        };
        if let Some(h) = model {
            let (s, inliers) = score(&h, points, cfg.inlier_threshold);
            record.inliers = s.count;
            if best.as_ref().is_none_or(|(_, b, _)| s.better_than(b)) {
                needed = required_iterations(s.count as f64 / points.len() as f64, cfg.confidence);
                best = Some((h, s, inliers));
            }
        }
        trace.push(record);
    }

    let Some((mut h, mut best_score, mut inliers)) = best else {
        return (
            RobustEstimate {
                homography: None,
                inlier_indices: Vec::new(),
                iterations_used: iterations,
                converged: false,
            },
            trace,
        );
    };

    // one least-squares refit on the consensus set, kept only if it does not
    // lose inliers
    if inliers.len() >= SAMPLE_SIZE {
        let pairs: Vec<_> = inliers.iter().map(|&i| points[i]).collect();
        if let Ok(refit) = dlt_least_squares(&pairs) {
            let (s, refit_inliers) = score(&refit, points, cfg.inlier_threshold);
            if s.count >= best_score.count {
                h = refit;
                best_score = s;
                inliers = refit_inliers;
            }
        }
    }

    let mut inlier_indices: Vec<usize> = inliers.iter().map(|&i| source[i]).collect();
    inlier_indices.sort_unstable();
    (
        RobustEstimate {
            homography: Some(h),
            inlier_indices,
            iterations_used: iterations,
            converged: best_score.count >= cfg.min_inliers,
        },
        trace,
    )
}

fn checked_points(
    matches: &MatchSet,
    target: &FeatureSet,
    reference: &FeatureSet,
    cfg: &RobustConfig,
) -> Result<Vec<(Keypoint, Keypoint)>> {
    cfg.validate()?;
    if matches.len() < SAMPLE_SIZE {
        return Err(MatchError::InsufficientMatches(matches.len()));
    }
    matches.check_indices(target, reference)?;
    Ok(matches.point_pairs(target, reference))
}

/// PROSAC over quality-ordered matches. Inlier indices refer to the match set
/// that was passed to [`quality_order`].
pub fn prosac_estimate(
    ordered: &QualityOrderedMatches,
    target: &FeatureSet,
    reference: &FeatureSet,
    cfg: &RobustConfig,
) -> Result<RobustEstimate> {
    prosac_estimate_traced(ordered, target, reference, cfg).map(|r| r.0)
}

/// [`prosac_estimate`] plus the record of every drawn sample.
pub fn prosac_estimate_traced(
    ordered: &QualityOrderedMatches,
    target: &FeatureSet,
    reference: &FeatureSet,
    cfg: &RobustConfig,
) -> Result<(RobustEstimate, Vec<HypothesisRecord>)> {
    let points = checked_points(&ordered.matches, target, reference, cfg)?;
    let mut sampler: Box<dyn Sampler> = match cfg.mode {
        ProsacMode::Standard => Box::new(ProgressiveSampler {
            schedule: ProsacSchedule::new(points.len(), cfg.max_iterations),
            pending: false,
        }),
        ProsacMode::Grouped => Box::new(GroupedSampler::new(&ordered.quality)),
    };
    Ok(estimate(&points, &ordered.source_index, sampler.as_mut(), cfg))
}

/// Uniform-sampling RANSAC baseline.
pub fn ransac_estimate(
    matches: &MatchSet,
    target: &FeatureSet,
    reference: &FeatureSet,
    cfg: &RobustConfig,
) -> Result<RobustEstimate> {
    ransac_estimate_traced(matches, target, reference, cfg).map(|r| r.0)
}

/// [`ransac_estimate`] plus the record of every drawn sample.
pub fn ransac_estimate_traced(
    matches: &MatchSet,
    target: &FeatureSet,
    reference: &FeatureSet,
    cfg: &RobustConfig,
) -> Result<(RobustEstimate, Vec<HypothesisRecord>)> {
    let points = checked_points(matches, target, reference, cfg)?;
    let source: Vec<usize> = (0..points.len()).collect();
    let mut sampler = UniformSampler { total: points.len() };
    Ok(estimate(&points, &source, &mut sampler, cfg))
}
