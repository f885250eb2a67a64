//! The two intermediate refinement stages: the distance-ratio filter and the
//! neighborhood-support filter.

use std::collections::{HashMap, HashSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::descriptor::{Correspondence, FeatureSet, Keypoint};
use crate::error::{MatchError, Result};

/// Fraction of the image diagonal used as the default neighborhood radius.
pub const DEFAULT_RADIUS_FRACTION: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Stage {
    Knn,
    Tf,
    Gms,
    Prosac,
}

impl Stage {
    pub fn label(&self) -> &'static str {
        match self {
            Stage::Knn => "KNN",
            Stage::Tf => "TF",
            Stage::Gms => "GMS",
            Stage::Prosac => "PROSAC",
        }
    }
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

impl std::str::FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "knn" => Ok(Stage::Knn),
            "tf" => Ok(Stage::Tf),
            "gms" => Ok(Stage::Gms),
            "prosac" => Ok(Stage::Prosac),
            other => Err(format!("unknown stage '{other}'")),
        }
    }
}

/// Ordered matches tagged with the stage that produced them.
///
/// Later stages only ever drop elements; order and contents of the surviving
/// correspondences are untouched.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchSet {
    matches: Vec<Correspondence>,
    stage: Stage,
}

impl MatchSet {
    /// Wraps raw correspondences. Duplicate (query, train) pairs are rejected.
    pub fn new(matches: Vec<Correspondence>, stage: Stage) -> Result<Self> {
        let mut seen = HashSet::with_capacity(matches.len());
        for m in &matches {
            if !seen.insert(m.key()) {
                return Err(MatchError::InvalidParameter(format!(
                    "duplicate match ({}, {})",
                    m.query_idx, m.train_idx
                )));
            }
        }
        Ok(Self { matches, stage })
    }

    pub fn from_knn(matches: Vec<Correspondence>) -> Result<Self> {
        Self::new(matches, Stage::Knn)
    }

    /// Keeps the elements whose position satisfies `keep`.
    pub(crate) fn retain_positions(&self, stage: Stage, mut keep: impl FnMut(usize) -> bool) -> Self {
        let matches = self
            .matches
            .iter()
            .enumerate()
            .filter(|(i, _)| keep(*i))
            .map(|(_, m)| *m)
            .collect();
        Self { matches, stage }
    }

    pub fn matches(&self) -> &[Correspondence] {
        &self.matches
    }

    pub fn stage(&self) -> Stage {
        self.stage
    }

    pub fn len(&self) -> usize {
        self.matches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.matches.is_empty()
    }

    /// Keypoint pairs (target, reference) for every match.
    pub fn point_pairs(&self, target: &FeatureSet, reference: &FeatureSet) -> Vec<(Keypoint, Keypoint)> {
        self.matches
            .iter()
            .map(|m| (target.keypoints()[m.query_idx], reference.keypoints()[m.train_idx]))
            .collect()
    }

    /// Checks every index against the two feature sets.
    pub fn check_indices(&self, target: &FeatureSet, reference: &FeatureSet) -> Result<()> {
        for m in &self.matches {
            if m.query_idx >= target.len() || m.train_idx >= reference.len() {
                return Err(MatchError::InvalidParameter(format!(
                    "match ({}, {}) out of range for feature sets of size {} and {}",
                    m.query_idx,
                    m.train_idx,
                    target.len(),
                    reference.len()
                )));
            }
        }
        Ok(())
    }
}

/// Reasons the ratio filter dropped a match other than failing the test.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RatioTally {
    /// `d1 == d2 == 0`: perfect duplicates in the reference set.
    pub ambiguous: usize,
    /// No second neighbour.
    pub missing_second: usize,
}

/// Keeps matches with `d1 / d2 < t_w`.
pub fn ratio_filter(input: &MatchSet, t_w: f64) -> MatchSet {
    ratio_filter_tally(input, t_w).0
}

/// [`ratio_filter`] plus a tally of matches dropped for having no usable ratio.
pub fn ratio_filter_tally(input: &MatchSet, t_w: f64) -> (MatchSet, RatioTally) {
    let mut tally = RatioTally::default();
    let out = input.retain_positions(Stage::Tf, |i| {
        let m = &input.matches[i];
        match m.d2 {
            None => {
                tally.missing_second += 1;
                false
            }
            Some(0) => {
                tally.ambiguous += 1;
                false
            }
            Some(d2) => (m.d1 as f64 / d2 as f64) < t_w,
        }
    });
    (out, tally)
}

/// Neighborhood support of one match.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SupportRecord {
    pub match_index: usize,
    pub support: usize,
}

/// Default neighborhood radius for a pair of images: a fixed fraction of the
/// larger image diagonal.
pub fn default_radius(target: &FeatureSet, reference: &FeatureSet) -> f64 {
    DEFAULT_RADIUS_FRACTION * target.diagonal().max(reference.diagonal())
}

/// Uniform bucket grid over points, cell size at least the query radius.
struct PointGrid {
    cell: f64,
    buckets: HashMap<(i64, i64), Vec<usize>>,
}

impl PointGrid {
    fn new(points: &[Keypoint], cell: f64) -> Self {
        let mut buckets: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
        let grid = Self {
            cell,
            buckets: HashMap::new(),
        };
        for (i, p) in points.iter().enumerate() {
            buckets.entry(grid.cell_of(p)).or_default().push(i);
        }
        Self { buckets, ..grid }
    }

    fn cell_of(&self, p: &Keypoint) -> (i64, i64) {
        ((p.x / self.cell).floor() as i64, (p.y / self.cell).floor() as i64)
    }

    /// Indices in the 3x3 block of cells around `p`.
    fn candidates(&self, p: &Keypoint) -> impl Iterator<Item = usize> + '_ {
        let (cx, cy) = self.cell_of(p);
        (-1..=1)
            .flat_map(move |dx| (-1..=1).map(move |dy| (cx + dx, cy + dy)))
            .filter_map(|c| self.buckets.get(&c))
            .flatten()
            .copied()
    }
}

/// Counts, for every match, the other matches whose target endpoint lies
/// within `radius` of its target endpoint and whose reference endpoint lies
/// within `radius` of its reference endpoint.
pub fn neighborhood_support(
    input: &MatchSet,
    target: &FeatureSet,
    reference: &FeatureSet,
    radius: f64,
) -> Result<Vec<SupportRecord>> {
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(MatchError::InvalidParameter(format!(
            "neighborhood radius must be positive and finite, got {radius}"
        )));
    }
    input.check_indices(target, reference)?;
    let pairs = input.point_pairs(target, reference);
    let target_points: Vec<Keypoint> = pairs.iter().map(|p| p.0).collect();
    // slightly oversized cells so rounding never pushes a neighbor two cells away
    let grid = PointGrid::new(&target_points, radius * (1.0 + 1e-9));

    Ok(pairs
        .par_iter()
        .enumerate()
        .map(|(i, (p, q))| {
            let members = grid
                .candidates(p)
                .filter(|&j| {
                    let (pj, qj) = &pairs[j];
                    p.distance(pj) <= radius && q.distance(qj) <= radius
                })
                .count();
            SupportRecord {
                match_index: i,
                // the match itself is always a member
                support: members - 1,
            }
        })
        .collect())
}

/// Keeps matches with support of at least `t_g`.
pub fn support_filter(input: &MatchSet, supports: &[SupportRecord], t_g: usize) -> Result<MatchSet> {
    if supports.len() != input.len() || supports.iter().enumerate().any(|(i, s)| s.match_index != i) {
        return Err(MatchError::MisalignedSupports);
    }
    Ok(input.retain_positions(Stage::Gms, |i| supports[i].support >= t_g))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::descriptor::BinaryDescriptor;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn corr(q: usize, t: usize, d1: u32, d2: Option<u32>) -> Correspondence {
        Correspondence {
            query_idx: q,
            train_idx: t,
            d1,
            d2,
        }
    }

    fn features_at(points: &[(f64, f64)]) -> FeatureSet {
        FeatureSet::new(
            points.iter().map(|&(x, y)| Keypoint::new(x, y)).collect(),
            vec![BinaryDescriptor::default(); points.len()],
            (640, 480),
        )
        .unwrap()
    }

    fn brute_force_support(pairs: &[(Keypoint, Keypoint)], radius: f64) -> Vec<usize> {
        (0..pairs.len())
            .map(|i| {
                let mut n = 0;
                for j in 0..pairs.len() {
                    let dt = ((pairs[i].0.x - pairs[j].0.x).powi(2) + (pairs[i].0.y - pairs[j].0.y).powi(2)).sqrt();
                    let dr = ((pairs[i].1.x - pairs[j].1.x).powi(2) + (pairs[i].1.y - pairs[j].1.y).powi(2)).sqrt();
                    if dt <= radius && dr <= radius {
                        n += 1;
                    }
                }
                n - 1
            })
            .collect()
    }

    #[test]
    fn ratio_filter_examples() {
        let set = MatchSet::from_knn(vec![
            corr(0, 0, 30, Some(50)),
            corr(1, 1, 40, Some(40)),
            corr(2, 2, 0, Some(0)),
            corr(3, 3, 10, None),
            corr(4, 4, 32, Some(50)),
        ])
        .unwrap();
        let (out, tally) = ratio_filter_tally(&set, 0.66);
        let kept: Vec<_> = out.matches().iter().map(|m| m.query_idx).collect();
        assert_eq!(kept, vec![0, 4]);
        assert_eq!(out.stage(), Stage::Tf);
        assert_eq!(
            tally,
            RatioTally {
                ambiguous: 1,
                missing_second: 1
            }
        );
        // boundary ratio equal to threshold is dropped
        assert_eq!(ratio_filter(&set, 0.6).len(), 0);
        assert!(ratio_filter(&set, 0.0).is_empty());
        assert_eq!(ratio_filter(&set, 1.0).len(), 2);
    }

    #[test]
    fn duplicate_pairs_rejected() {
        assert!(MatchSet::from_knn(vec![corr(0, 1, 0, None), corr(0, 1, 3, None)]).is_err());
    }

    /// Three matches moving together plus one isolated match.
    #[test]
    fn two_co_neighbors_give_support_two() {
        let target = features_at(&[(100.0, 100.0), (104.0, 101.0), (98.0, 97.0), (400.0, 300.0)]);
        let reference = features_at(&[(120.0, 110.0), (124.0, 111.0), (118.0, 107.0), (50.0, 420.0)]);
        let set = MatchSet::from_knn((0..4).map(|i| corr(i, i, 0, Some(10))).collect()).unwrap();
        let s = neighborhood_support(&set, &target, &reference, 10.0).unwrap();
        let support: Vec<_> = s.iter().map(|r| r.support).collect();
        assert_eq!(support, vec![2, 2, 2, 0]);

        let kept = support_filter(&set, &s, 1).unwrap();
        assert_eq!(kept.len(), 3);
        assert!(kept.matches().iter().all(|m| m.query_idx != 3));
        assert_eq!(support_filter(&set, &s, 0).unwrap().matches(), set.matches());
    }

    #[test]
    fn single_match_has_zero_support() {
        let f = features_at(&[(1.0, 1.0)]);
        let set = MatchSet::from_knn(vec![corr(0, 0, 0, Some(1))]).unwrap();
        let s = neighborhood_support(&set, &f, &f, 5.0).unwrap();
        assert_eq!(
            s,
            vec![SupportRecord {
                match_index: 0,
                support: 0
            }]
        );
    }

    #[test]
    fn support_requires_both_images() {
        // close in the target image, far apart in the reference image
        let target = features_at(&[(10.0, 10.0), (12.0, 10.0)]);
        let reference = features_at(&[(10.0, 10.0), (300.0, 10.0)]);
        let set = MatchSet::from_knn(vec![corr(0, 0, 0, Some(1)), corr(1, 1, 0, Some(1))]).unwrap();
        let s = neighborhood_support(&set, &target, &reference, 5.0).unwrap();
        assert!(s.iter().all(|r| r.support == 0));
    }

    #[test]
    fn invalid_radius_and_misaligned_supports() {
        let f = features_at(&[(1.0, 1.0)]);
        let set = MatchSet::from_knn(vec![corr(0, 0, 0, Some(1))]).unwrap();
        assert!(neighborhood_support(&set, &f, &f, 0.0).is_err());
        assert!(neighborhood_support(&set, &f, &f, f64::NAN).is_err());
        assert!(matches!(
            support_filter(&set, &[], 1),
            Err(MatchError::MisalignedSupports)
        ));
    }

    #[test]
    fn support_equals_pairwise_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let n = rng.random_range(1..=300);
            let pts_t: Vec<(f64, f64)> = (0..n)
                .map(|_| (rng.random_range(-20.0..200.0), rng.random_range(0.0..150.0)))
                .collect();
            let pts_r: Vec<(f64, f64)> = pts_t
                .iter()
                .map(|&(x, y)| (x + rng.random_range(-8.0..8.0), y + rng.random_range(-8.0..8.0)))
                .collect();
            let target = features_at(&pts_t);
            let reference = features_at(&pts_r);
            let set = MatchSet::from_knn((0..n).map(|i| corr(i, i, 0, Some(1))).collect()).unwrap();
            let radius = rng.random_range(1.0..30.0);
            let got: Vec<_> = neighborhood_support(&set, &target, &reference, radius)
                .unwrap()
                .iter()
                .map(|r| r.support)
                .collect();
            assert_eq!(got, brute_force_support(&set.point_pairs(&target, &reference), radius));
        }
    }

    /// Four tight clusters of eight inliers each plus scattered outliers.
    #[test]
    fn dense_clusters_survive_t_g_six() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut pts_t = Vec::new();
        let mut pts_r = Vec::new();
        let centers = [(100.0, 100.0), (500.0, 100.0), (100.0, 380.0), (500.0, 380.0)];
        for &(cx, cy) in &centers {
            for _ in 0..8 {
                let (x, y) = (cx + rng.random_range(-10.0..10.0), cy + rng.random_range(-10.0..10.0));
                pts_t.push((x, y));
                pts_r.push((x + 5.0, y - 3.0));
            }
        }
        let n_in = pts_t.len();
        // outliers: grid-spaced so none lands near a cluster or another outlier
        for k in 0..6 {
            pts_t.push((200.0 + 40.0 * k as f64, 240.0));
            pts_r.push((600.0 - 90.0 * k as f64, 20.0 + 70.0 * k as f64));
        }
        let target = features_at(&pts_t);
        let reference = features_at(&pts_r);
        let set = MatchSet::from_knn((0..pts_t.len()).map(|i| corr(i, i, 0, Some(1))).collect()).unwrap();
        let s = neighborhood_support(&set, &target, &reference, 32.0).unwrap();
        let oracle = brute_force_support(&set.point_pairs(&target, &reference), 32.0);
        assert!(oracle[..n_in].iter().all(|&v| v >= 6));
        assert!(oracle[n_in..].iter().all(|&v| v <= 1));
        let kept = support_filter(&set, &s, 6).unwrap();
        let kept_idx: Vec<_> = kept.matches().iter().map(|m| m.query_idx).collect();
        assert_eq!(kept_idx, (0..n_in).collect::<Vec<_>>());
    }

    fn random_set(seed: u64) -> MatchSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(0..100);
        MatchSet::from_knn(
            (0..n)
                .map(|i| {
                    let d2 = rng.random_range(0..=256u32);
                    let d1 = rng.random_range(0..=d2);
                    corr(i, i, d1, (rng.random_range(0..10) > 0).then_some(d2))
                })
                .collect(),
        )
        .unwrap()
    }

    proptest! {
        #[test]
        fn ratio_filter_is_monotone_subset(seed in any::<u64>(), a in 0.0f64..1.0, b in 0.0f64..1.0) {
            let set = random_set(seed);
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let small = ratio_filter(&set, lo);
            let large = ratio_filter(&set, hi);
            let large_keys: HashSet<_> = large.matches().iter().map(|m| m.key()).collect();
            let input_keys: HashSet<_> = set.matches().iter().map(|m| m.key()).collect();
            prop_assert!(small.matches().iter().all(|m| large_keys.contains(&m.key())));
            prop_assert!(large_keys.is_subset(&input_keys));
        }

        #[test]
        fn support_filter_is_monotone_and_symmetric(seed in any::<u64>(), lo in 0usize..5, extra in 0usize..5) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = rng.random_range(1..80);
            let pts: Vec<(f64, f64)> = (0..n).map(|_| (rng.random_range(0.0..100.0), rng.random_range(0.0..100.0))).collect();
            let f = features_at(&pts);
            let set = MatchSet::from_knn((0..n).map(|i| corr(i, i, 0, Some(1))).collect()).unwrap();
            let s = neighborhood_support(&set, &f, &f, 15.0).unwrap();
            let strict = support_filter(&set, &s, lo + extra).unwrap();
            let loose = support_filter(&set, &s, lo).unwrap();
            let loose_keys: HashSet<_> = loose.matches().iter().map(|m| m.key()).collect();
            prop_assert!(strict.matches().iter().all(|m| loose_keys.contains(&m.key())));
            // neighbor relation is symmetric, so total support is even
            prop_assert_eq!(s.iter().map(|r| r.support).sum::<usize>() % 2, 0);
        }
    }
}
