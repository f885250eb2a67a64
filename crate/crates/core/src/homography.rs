//! Planar homographies: normalized DLT fitting and forward transfer error.

use nalgebra::{DMatrix, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::descriptor::Keypoint;
use crate::error::{MatchError, Result};

/// Homogeneous scale below which a projected point is treated as being at infinity.
pub const MIN_HOMOGENEOUS_SCALE: f64 = 1e-12;

/// Normalized triangle area below which three points count as collinear.
const COLLINEAR_AREA: f64 = 1e-8;

/// Ratio of the second-smallest to the largest singular value below which
/// the DLT system is treated as rank deficient.
const RANK_TOLERANCE: f64 = 1e-12;

/// A 3x3 projective transform, stored with unit Frobenius norm and its
/// largest-magnitude entry positive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 9]", into = "[f64; 9]")]
pub struct Homography {
    m: Matrix3<f64>,
}

impl Homography {
    pub fn new(m: Matrix3<f64>) -> Result<Self> {
        if m.iter().any(|v| !v.is_finite()) {
            return Err(MatchError::InvalidParameter("homography has non-finite entries".into()));
        }
        let norm = m.norm();
        if norm == 0.0 {
            return Err(MatchError::InvalidParameter("homography is the zero matrix".into()));
        }
        let mut m = m / norm;
        let largest = m
            .iter()
            .copied()
            .fold(0.0f64, |acc, v| if v.abs() > acc.abs() { v } else { acc });
        if largest < 0.0 {
            m = -m;
        }
        Ok(Self { m })
    }

    /// Row-major entries.
    pub fn from_rows(rows: [f64; 9]) -> Result<Self> {
        Self::new(Matrix3::from_row_slice(&rows))
    }

    pub fn identity() -> Self {
        Self::new(Matrix3::identity()).unwrap()
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.m
    }

    /// Row-major entries of the normalized matrix.
    pub fn to_rows(&self) -> [f64; 9] {
        let mut out = [0.0; 9];
        for r in 0..3 {
            for c in 0..3 {
                out[3 * r + c] = self.m[(r, c)];
            }
        }
        out
    }

    pub fn inverse(&self) -> Result<Self> {
        let inv = self
            .m
            .try_inverse()
            .ok_or_else(|| MatchError::InvalidParameter("homography is singular".into()))?;
        Self::new(inv)
    }

    /// Maps `p` through the homography.
    pub fn project(&self, p: &Keypoint) -> Result<Keypoint> {
        let v = self.m * Vector3::new(p.x, p.y, 1.0);
        if v.z.abs() <= MIN_HOMOGENEOUS_SCALE {
            return Err(MatchError::PointAtInfinity);
        }
        Ok(Keypoint::new(v.x / v.z, v.y / v.z))
    }

    /// Frobenius distance between the two normalized matrices, minimized over sign.
    pub fn distance_up_to_scale(&self, other: &Homography) -> f64 {
        (self.m - other.m).norm().min((self.m + other.m).norm())
    }
}

impl TryFrom<[f64; 9]> for Homography {
    type Error = MatchError;

    fn try_from(rows: [f64; 9]) -> Result<Self> {
        Self::from_rows(rows)
    }
}

impl From<Homography> for [f64; 9] {
    fn from(h: Homography) -> Self {
        h.to_rows()
    }
}

/// Forward transfer error `|H p - q|`.
pub fn transfer_error(h: &Homography, p: &Keypoint, q: &Keypoint) -> Result<f64> {
    Ok(h.project(p)?.distance(q))
}

/// Similarity moving the centroid to the origin with mean distance sqrt(2).
fn normalizing_transform(points: impl Iterator<Item = Keypoint> + Clone) -> Result<Matrix3<f64>> {
    let n = points.clone().count() as f64;
    let (sx, sy) = points.clone().fold((0.0, 0.0), |(sx, sy), p| (sx + p.x, sy + p.y));
    let (cx, cy) = (sx / n, sy / n);
    let mean_dist = points.map(|p| (p.x - cx).hypot(p.y - cy)).sum::<f64>() / n;
    if !(mean_dist > 0.0 && mean_dist.is_finite()) {
        return Err(MatchError::DegenerateSample);
    }
    let s = std::f64::consts::SQRT_2 / mean_dist;
    Ok(Matrix3::new(s, 0.0, -s * cx, 0.0, s, -s * cy, 0.0, 0.0, 1.0))
}

fn apply(t: &Matrix3<f64>, p: &Keypoint) -> (f64, f64) {
    (t[(0, 0)] * p.x + t[(0, 2)], t[(1, 1)] * p.y + t[(1, 2)])
}

fn triangle_area(a: (f64, f64), b: (f64, f64), c: (f64, f64)) -> f64 {
    0.5 * ((b.0 - a.0) * (c.1 - a.1) - (b.1 - a.1) * (c.0 - a.0)).abs()
}

fn has_collinear_triple(points: &[(f64, f64)]) -> bool {
    let n = points.len();
    for i in 0..n {
        for j in i + 1..n {
            for k in j + 1..n {
                if triangle_area(points[i], points[j], points[k]) < COLLINEAR_AREA {
                    return true;
                }
            }
        }
    }
    false
}

/// Hartley-normalized DLT over any number (at least four) of correspondences,
/// least squares in the algebraic error when more than four are given.
fn solve_dlt(pairs: &[(Keypoint, Keypoint)], check_collinear: bool) -> Result<Homography> {
    if pairs.len() < 4 {
        return Err(MatchError::InsufficientMatches(pairs.len()));
    }
    let t_src = normalizing_transform(pairs.iter().map(|p| p.0))?;
    let t_dst = normalizing_transform(pairs.iter().map(|p| p.1))?;
    let src: Vec<_> = pairs.iter().map(|p| apply(&t_src, &p.0)).collect();
    let dst: Vec<_> = pairs.iter().map(|p| apply(&t_dst, &p.1)).collect();
    if check_collinear && (has_collinear_triple(&src) || has_collinear_triple(&dst)) {
        return Err(MatchError::DegenerateSample);
    }

    // Pad to at least 9 rows so the SVD exposes the full right singular basis.
    let rows = (2 * pairs.len()).max(9);
    let mut a = DMatrix::<f64>::zeros(rows, 9);
    for (k, (&(x, y), &(u, v))) in src.iter().zip(dst.iter()).enumerate() {
        let r = 2 * k;
        a[(r, 0)] = -x;
        a[(r, 1)] = -y;
        a[(r, 2)] = -1.0;
        a[(r, 6)] = u * x;
        a[(r, 7)] = u * y;
        a[(r, 8)] = u;
        a[(r + 1, 3)] = -x;
        a[(r + 1, 4)] = -y;
        a[(r + 1, 5)] = -1.0;
        a[(r + 1, 6)] = v * x;
        a[(r + 1, 7)] = v * y;
        a[(r + 1, 8)] = v;
    }

    let svd = a.svd(false, true);
    let v_t = svd.v_t.ok_or(MatchError::DegenerateSample)?;
    let sv = &svd.singular_values;
    let mut order: Vec<usize> = (0..sv.len()).collect();
    order.sort_by(|&i, &j| sv[i].total_cmp(&sv[j]));
    let (smallest, second) = (order[0], order[1]);
    let largest = sv[order[sv.len() - 1]];
    if largest.is_nan() || largest <= 0.0 || sv[second] / largest < RANK_TOLERANCE {
        return Err(MatchError::DegenerateSample);
    }

    let h = v_t.row(smallest);
    let hn = Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], h[8]);
    let t_dst_inv = t_dst.try_inverse().ok_or(MatchError::DegenerateSample)?;
    Homography::new(t_dst_inv * hn * t_src).map_err(|_| MatchError::DegenerateSample)
}

/// Exact homography through four correspondences `(source, destination)`.
///
/// Fails with [`MatchError::DegenerateSample`] when three source or three
/// destination points are (numerically) collinear or coincide.
pub fn dlt_homography(pairs: &[(Keypoint, Keypoint); 4]) -> Result<Homography> {
    solve_dlt(pairs, true)
}

/// Least-squares DLT over all given correspondences.
pub fn dlt_least_squares(pairs: &[(Keypoint, Keypoint)]) -> Result<Homography> {
    solve_dlt(pairs, pairs.len() == 4)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn kp(x: f64, y: f64) -> Keypoint {
        Keypoint::new(x, y)
    }

    fn random_h(rng: &mut impl Rng) -> Homography {
        Homography::from_rows([
            1.0 + rng.random_range(-0.2..0.2),
            rng.random_range(-0.2..0.2),
            rng.random_range(-0.3..0.3),
            rng.random_range(-0.2..0.2),
            1.0 + rng.random_range(-0.2..0.2),
            rng.random_range(-0.3..0.3),
            rng.random_range(-0.2..0.2),
            rng.random_range(-0.2..0.2),
            1.0,
        ])
        .unwrap()
    }

    #[test]
    fn normalization_convention() {
        let h = Homography::from_rows([-2.0, 0.0, 0.0, 0.0, -2.0, 0.0, 0.0, 0.0, -2.0]).unwrap();
        assert!((h.matrix().norm() - 1.0).abs() < 1e-15);
        assert!(h.matrix()[(0, 0)] > 0.0);
        assert!(h.distance_up_to_scale(&Homography::identity()) < 1e-15);
        assert!(Homography::from_rows([0.0; 9]).is_err());
        assert!(Homography::from_rows([f64::NAN, 0., 0., 0., 1., 0., 0., 0., 1.]).is_err());
    }

    #[test]
    fn unit_square_identity() {
        let sq = [kp(0.0, 0.0), kp(1.0, 0.0), kp(1.0, 1.0), kp(0.0, 1.0)];
        let pairs = sq.map(|p| (p, p));
        let h = dlt_homography(&pairs).unwrap();
        assert!(h.distance_up_to_scale(&Homography::identity()) < 1e-12);
    }

    #[test]
    fn recovers_random_homography_from_four_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..200 {
            let truth = random_h(&mut rng);
            let src = [kp(0.1, 0.1), kp(0.9, 0.15), kp(0.85, 0.9), kp(0.2, 0.8)]
                .map(|p| kp(p.x + rng.random_range(-0.05..0.05), p.y + rng.random_range(-0.05..0.05)));
            let pairs = src.map(|p| (p, truth.project(&p).unwrap()));
            let h = dlt_homography(&pairs).unwrap();
            assert!(h.distance_up_to_scale(&truth) < 1e-6);
            for (p, q) in &pairs {
                assert!(transfer_error(&h, p, q).unwrap() < 1e-9);
            }
        }
    }

    #[test]
    fn collinear_and_duplicate_samples_are_degenerate() {
        let collinear = [kp(0.0, 0.0), kp(1.0, 1.0), kp(2.0, 2.0), kp(0.0, 5.0)];
        let pairs = collinear.map(|p| (p, kp(p.x + 1.0, p.y)));
        assert!(matches!(dlt_homography(&pairs), Err(MatchError::DegenerateSample)));

        let dup = [kp(0.0, 0.0), kp(0.0, 0.0), kp(3.0, 1.0), kp(0.0, 5.0)];
        assert!(matches!(
            dlt_homography(&dup.map(|p| (p, p))),
            Err(MatchError::DegenerateSample)
        ));

        let same = [kp(1.0, 1.0); 4];
        assert!(matches!(
            dlt_homography(&same.map(|p| (p, p))),
            Err(MatchError::DegenerateSample)
        ));

        // destination side collinear
        let src = [kp(0.0, 0.0), kp(1.0, 0.0), kp(1.0, 1.0), kp(0.0, 1.0)];
        let dst = [kp(0.0, 0.0), kp(1.0, 0.0), kp(2.0, 0.0), kp(0.0, 1.0)];
        let pairs = [(src[0], dst[0]), (src[1], dst[1]), (src[2], dst[2]), (src[3], dst[3])];
        assert!(matches!(dlt_homography(&pairs), Err(MatchError::DegenerateSample)));
    }

    #[test]
    fn transfer_error_cases() {
        let id = Homography::identity();
        assert_eq!(transfer_error(&id, &kp(2.0, 3.0), &kp(2.0, 3.0)).unwrap(), 0.0);
        assert!((transfer_error(&id, &kp(0.0, 0.0), &kp(3.0, 4.0)).unwrap() - 5.0).abs() < 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let h = random_h(&mut rng);
        let p = kp(0.4, 0.7);
        let delta = 0.37;
        let proj = h.project(&p).unwrap();
        let q = kp(proj.x + delta, proj.y);
        assert!((transfer_error(&h, &p, &q).unwrap() - delta).abs() < 1e-12);

        // third row maps (1, 0) to w = 0
        let at_inf = Homography::from_rows([1.0, 0.0, 0.0, 0.0, 1.0, 0.0, -1.0, 0.0, 1.0]).unwrap();
        assert!(matches!(
            transfer_error(&at_inf, &kp(1.0, 0.0), &kp(0.0, 0.0)),
            Err(MatchError::PointAtInfinity)
        ));
    }

    #[test]
    fn least_squares_fits_many_exact_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let truth = random_h(&mut rng);
        let pairs: Vec<_> = (0..50)
            .map(|_| {
                let p = kp(rng.random_range(0.0..640.0), rng.random_range(0.0..480.0));
                (p, truth.project(&p).unwrap())
            })
            .collect();
        let h = dlt_least_squares(&pairs).unwrap();
        assert!(h.distance_up_to_scale(&truth) < 1e-9);
        assert!(dlt_least_squares(&pairs[..3]).is_err());
    }

    #[test]
    fn serde_uses_row_major_array() {
        let h = Homography::identity();
        let s = serde_json::to_string(&h).unwrap();
        let back: Homography = serde_json::from_str(&s).unwrap();
        assert_eq!(back, h);
        assert!(serde_json::from_str::<Homography>("[0,0,0,0,0,0,0,0,0]").is_err());
    }
}
