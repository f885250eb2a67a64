//! Synthetic scene pairs with a known homography and known true matches.

use nalgebra::Matrix3;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::descriptor::{BinaryDescriptor, FeatureSet, Keypoint, DESCRIPTOR_BITS};
use crate::error::{MatchError, Result};
use crate::homography::Homography;

/// Noise samples are truncated at this many standard deviations per axis.
pub const NOISE_TRUNCATION: f64 = 4.0;

/// Bit flips applied to confuser descriptors are drawn from this range.
pub const CONFUSER_FLIPS: std::ops::RangeInclusive<usize> = 4..=16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_inliers: usize,
    pub n_outliers: usize,
    pub image_size: (u32, u32),
    /// Per-axis standard deviation of the reference-side position noise.
    pub noise_sigma: f64,
    /// Bits flipped between an inlier's two descriptors.
    pub descriptor_flip_bits: usize,
    /// Scale of the random departure of the ground truth from identity, in [0, 0.3].
    pub perspective_magnitude: f64,
    pub seed: u64,
    /// Number of clusters the inliers are drawn around; 0 spreads them uniformly.
    pub clusters: usize,
    /// Radius of each inlier cluster in target pixels.
    pub cluster_radius: f64,
    /// Outliers whose reference descriptor is a near copy of an inlier's.
    pub confusers: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_inliers: 200,
            n_outliers: 200,
            image_size: (640, 480),
            noise_sigma: 0.5,
            descriptor_flip_bits: 8,
            perspective_magnitude: 0.1,
            seed: 0,
            clusters: 0,
            cluster_radius: 40.0,
            confusers: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let invalid = |m: String| Err(MatchError::InvalidParameter(m));
        if self.n_inliers + self.n_outliers == 0 {
            return invalid("scene needs at least one feature".into());
        }
        if self.descriptor_flip_bits > DESCRIPTOR_BITS {
            return invalid(format!("cannot flip {} bits", self.descriptor_flip_bits));
        }
        if !(0.0..=0.3).contains(&self.perspective_magnitude) {
            return invalid(format!(
                "perspective magnitude {} outside [0, 0.3]",
                self.perspective_magnitude
            ));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return invalid(format!("invalid noise sigma {}", self.noise_sigma));
        }
        if self.image_size.0 == 0 || self.image_size.1 == 0 {
            return invalid("image size must be positive".into());
        }
        if self.clusters > 0 && (self.cluster_radius.is_nan() || self.cluster_radius <= 0.0) {
            return invalid("cluster radius must be positive".into());
        }
        if self.confusers > self.n_outliers || (self.confusers > 0 && self.n_inliers == 0) {
            return invalid("confusers need inliers to copy and must not exceed the outlier count".into());
        }
        Ok(())
    }

    /// Upper bound on the ground-truth transfer error of any inlier pair.
    pub fn noise_bound(&self) -> f64 {
        NOISE_TRUNCATION * std::f64::consts::SQRT_2 * self.noise_sigma
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenePair {
    pub target: FeatureSet,
    pub reference: FeatureSet,
    pub gt_h: Option<Homography>,
    /// True matches as (target index, reference index).
    pub gt_inlier_pairs: Option<Vec<(usize, usize)>>,
}

/// Identity perturbed in coordinates centred on the image and scaled to
/// roughly unit half-extent, so the magnitude is resolution independent.
fn sample_homography(rng: &mut impl Rng, size: (u32, u32), magnitude: f64) -> Homography {
    let mut u = |scale: f64| {
        if magnitude > 0.0 {
            rng.random_range(-1.0..1.0) * scale * magnitude
        } else {
            0.0
        }
    };
    let local = Matrix3::new(
        1.0 + u(0.5),
        u(0.5),
        u(0.25),
        u(0.5),
        1.0 + u(0.5),
        u(0.25),
        u(0.5),
        u(0.5),
        1.0,
    );
    let (cx, cy) = (size.0 as f64 / 2.0, size.1 as f64 / 2.0);
    let s = cx.max(cy);
    let to_local = Matrix3::new(1.0 / s, 0.0, -cx / s, 0.0, 1.0 / s, -cy / s, 0.0, 0.0, 1.0);
    let from_local = Matrix3::new(s, 0.0, cx, 0.0, s, cy, 0.0, 0.0, 1.0);
    Homography::new(from_local * local * to_local).expect("perturbed identity is finite and nonzero")
}

fn inside(p: &Keypoint, size: (u32, u32), margin: f64) -> bool {
    p.x >= margin && p.y >= margin && p.x <= size.0 as f64 - margin && p.y <= size.1 as f64 - margin
}

fn uniform_point(rng: &mut impl Rng, size: (u32, u32)) -> Keypoint {
    Keypoint::new(
        rng.random_range(0.0..size.0 as f64),
        rng.random_range(0.0..size.1 as f64),
    )
}

fn truncated(rng: &mut impl Rng, normal: &Normal<f64>, sigma: f64) -> f64 {
    if sigma == 0.0 {
        return 0.0;
    }
    loop {
        let v = normal.sample(rng);
        if v.abs() <= NOISE_TRUNCATION * sigma {
            return v;
        }
    }
}

fn flip_bits(d: &BinaryDescriptor, bits: &[usize]) -> BinaryDescriptor {
    let mut out = *d;
    for &bit in bits {
        out.flip_bit(bit);
    }
    out
}

/// A random ordering of all descriptor bits; flipping a prefix of it makes
/// flips nested across scenes that differ only in the flip count.
fn bit_order(rng: &mut impl Rng) -> Vec<usize> {
    let mut bits: Vec<usize> = (0..DESCRIPTOR_BITS).collect();
    bits.shuffle(rng);
    bits
}

/// Independent random streams, so that changing one knob (say the flip
/// count) leaves everything drawn from the other streams unchanged.
fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Generates a scene pair, fully determined by `cfg.seed`.
///
/// Inliers: a target point `p` whose ground-truth image lies inside the
/// reference image, a reference point `H p + noise`, and a reference
/// descriptor equal to the target one with `descriptor_flip_bits` bits
/// flipped. Outliers: independent uniform points and random descriptors on
/// both sides. Target features list inliers first; reference features are
/// shuffled.
///
/// Geometry, descriptors, flipped bits and confusers come from separate
/// streams of the seed. Two configurations that differ only in
/// `descriptor_flip_bits` give identical geometry and base descriptors, and
/// the flipped bits of the smaller count are a subset of the larger.
pub fn generate_scene(cfg: &SynthConfig) -> Result<ScenePair> {
    cfg.validate()?;
    let mut geo = stream(cfg.seed, 1);
    let mut desc = stream(cfg.seed, 2);
    let mut flips = stream(cfg.seed, 3);
    let mut confuse = stream(cfg.seed, 4);

    let size = cfg.image_size;
    let gt_h = sample_homography(&mut geo, size, cfg.perspective_magnitude);
    let normal = Normal::new(0.0, cfg.noise_sigma.max(f64::MIN_POSITIVE)).expect("finite sigma");
    let margin = NOISE_TRUNCATION * cfg.noise_sigma;

    let centers: Vec<Keypoint> = (0..cfg.clusters).map(|_| uniform_point(&mut geo, size)).collect();

    let total = cfg.n_inliers + cfg.n_outliers;
    let mut target_kp = Vec::with_capacity(total);
    let mut target_desc = Vec::with_capacity(total);
    let mut reference_kp = Vec::with_capacity(total);
    let mut reference_desc = Vec::with_capacity(total);

    for i in 0..cfg.n_inliers {
        let mut attempts = 0;
        let (p, hp) = loop {
            attempts += 1;
            // a cluster that maps almost entirely outside the reference image
            // falls back to uniform placement
            let p = if centers.is_empty() || attempts > 1000 {
                uniform_point(&mut geo, size)
            } else {
                let c = centers[i % centers.len()];
                let r = cfg.cluster_radius * geo.random::<f64>().sqrt();
                let a = geo.random_range(0.0..std::f64::consts::TAU);
                Keypoint::new(c.x + r * a.cos(), c.y + r * a.sin())
            };
            if !inside(&p, size, 0.0) {
                continue;
            }
            if let Ok(hp) = gt_h.project(&p) {
                if inside(&hp, size, margin) {
                    break (p, hp);
                }
            }
        };
        let q = Keypoint::new(
            (hp.x + truncated(&mut geo, &normal, cfg.noise_sigma)).clamp(0.0, size.0 as f64),
            (hp.y + truncated(&mut geo, &normal, cfg.noise_sigma)).clamp(0.0, size.1 as f64),
        );
        let d = BinaryDescriptor::from_words(desc.random());
        let order = bit_order(&mut flips);
        target_kp.push(p);
        target_desc.push(d);
        reference_kp.push(q);
        reference_desc.push(flip_bits(&d, &order[..cfg.descriptor_flip_bits]));
    }

    for k in 0..cfg.n_outliers {
        target_kp.push(uniform_point(&mut geo, size));
        reference_kp.push(uniform_point(&mut geo, size));
        target_desc.push(BinaryDescriptor::from_words(desc.random()));
        let random = BinaryDescriptor::from_words(desc.random());
        reference_desc.push(if k < cfg.confusers {
            let source = reference_desc[confuse.random_range(0..cfg.n_inliers)];
            let count = confuse.random_range(CONFUSER_FLIPS);
            flip_bits(&source, &bit_order(&mut confuse)[..count])
        } else {
            random
        });
    }

    // position[i] = where original reference feature i ends up
    let mut order: Vec<usize> = (0..total).collect();
    order.shuffle(&mut geo);
    let mut position = vec![0; total];
    for (new, &old) in order.iter().enumerate() {
        position[old] = new;
    }
    let reference_kp = order.iter().map(|&i| reference_kp[i]).collect();
    let reference_desc = order.iter().map(|&i| reference_desc[i]).collect();

    Ok(ScenePair {
        target: FeatureSet::new(target_kp, target_desc, size)?,
        reference: FeatureSet::new(reference_kp, reference_desc, size)?,
        gt_h: Some(gt_h),
        gt_inlier_pairs: Some((0..cfg.n_inliers).map(|i| (i, position[i])).collect()),
    })
}
