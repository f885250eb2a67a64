//! Feature types and exact 2-nearest-neighbor search in Hamming space.

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{MatchError, Result};

/// Number of bits in a descriptor.
pub const DESCRIPTOR_BITS: usize = 256;
/// Number of bytes in a descriptor.
pub const DESCRIPTOR_BYTES: usize = DESCRIPTOR_BITS / 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Keypoint {
    pub x: f64,
    pub y: f64,
}

impl Keypoint {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn distance(&self, other: &Keypoint) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// A 256-bit binary descriptor.
///
/// Bit `i` is bit `7 - i % 8` of byte `i / 8`, i.e. bit 0 is the most
/// significant bit of the first byte. The words are the big-endian
/// interpretation of consecutive 8-byte chunks, so the same numbering holds
/// for the packed representation.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct BinaryDescriptor {
    words: [u64; 4],
}

impl BinaryDescriptor {
    pub fn from_bytes(bytes: &[u8; DESCRIPTOR_BYTES]) -> Self {
        let mut words = [0u64; 4];
        for (w, chunk) in words.iter_mut().zip(bytes.chunks_exact(8)) {
            *w = u64::from_be_bytes(chunk.try_into().unwrap());
        }
        Self { words }
    }

    pub fn from_words(words: [u64; 4]) -> Self {
        Self { words }
    }

    pub fn to_bytes(&self) -> [u8; DESCRIPTOR_BYTES] {
        let mut out = [0u8; DESCRIPTOR_BYTES];
        for (chunk, w) in out.chunks_exact_mut(8).zip(self.words.iter()) {
            chunk.copy_from_slice(&w.to_be_bytes());
        }
        out
    }

    pub fn words(&self) -> &[u64; 4] {
        &self.words
    }

    /// Parses 64 hex characters (either case).
    pub fn from_hex(s: &str) -> Result<Self, String> {
        if s.len() != 2 * DESCRIPTOR_BYTES {
            return Err(format!(
                "descriptor hex must be {} characters, got {}",
                2 * DESCRIPTOR_BYTES,
                s.len()
            ));
        }
        let mut bytes = [0u8; DESCRIPTOR_BYTES];
        hex::decode_to_slice(s, &mut bytes).map_err(|e| format!("invalid descriptor hex: {e}"))?;
        Ok(Self::from_bytes(&bytes))
    }

    /// Lowercase hex, 64 characters.
    pub fn to_hex(&self) -> String {
        hex::encode(self.to_bytes())
    }

    pub fn bit(&self, i: usize) -> bool {
        assert!(i < DESCRIPTOR_BITS, "bit index {i} out of range");
        (self.words[i / 64] >> (63 - i % 64)) & 1 == 1
    }

    pub fn flip_bit(&mut self, i: usize) {
        assert!(i < DESCRIPTOR_BITS, "bit index {i} out of range");
        self.words[i / 64] ^= 1 << (63 - i % 64);
    }

    pub fn complement(&self) -> Self {
        Self {
            words: self.words.map(|w| !w),
        }
    }
}

impl fmt::Debug for BinaryDescriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "BinaryDescriptor({})", self.to_hex())
    }
}

/// Number of differing bits between two descriptors.
#[inline]
pub fn hamming_distance(a: &BinaryDescriptor, b: &BinaryDescriptor) -> u32 {
    a.words
        .iter()
        .zip(b.words.iter())
        .map(|(x, y)| (x ^ y).count_ones())
        .sum()
}

/// Keypoints with their descriptors and the size of the image they came from.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    keypoints: Vec<Keypoint>,
    descriptors: Vec<BinaryDescriptor>,
    image_size: (u32, u32),
}

impl FeatureSet {
    /// Builds a feature set. Keypoints outside the image are accepted with a
    /// warning; non-finite coordinates and length mismatches are errors.
    pub fn new(keypoints: Vec<Keypoint>, descriptors: Vec<BinaryDescriptor>, image_size: (u32, u32)) -> Result<Self> {
        if keypoints.len() != descriptors.len() {
            return Err(MatchError::LengthMismatch {
                keypoints: keypoints.len(),
                descriptors: descriptors.len(),
            });
        }
        if let Some(i) = keypoints.iter().position(|k| !k.is_finite()) {
            return Err(MatchError::NonFiniteKeypoint(i));
        }
        let (w, h) = (image_size.0 as f64, image_size.1 as f64);
        let outside = keypoints
            .iter()
            .filter(|k| k.x < 0.0 || k.y < 0.0 || k.x > w || k.y > h)
            .count();
        if outside > 0 {
            log::warn!("{outside} keypoints lie outside the {w}x{h} image");
        }
        Ok(Self {
            keypoints,
            descriptors,
            image_size,
        })
    }

    pub fn empty(image_size: (u32, u32)) -> Self {
        Self {
            keypoints: Vec::new(),
            descriptors: Vec::new(),
            image_size,
        }
    }

    pub fn len(&self) -> usize {
        self.keypoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keypoints.is_empty()
    }

    pub fn keypoints(&self) -> &[Keypoint] {
        &self.keypoints
    }

    pub fn descriptors(&self) -> &[BinaryDescriptor] {
        &self.descriptors
    }

    pub fn image_size(&self) -> (u32, u32) {
        self.image_size
    }

    pub fn diagonal(&self) -> f64 {
        (self.image_size.0 as f64).hypot(self.image_size.1 as f64)
    }
}

/// A target feature paired with its nearest reference feature.
///
/// `d1` is the distance to `train_idx`; `d2` is the distance to the
/// second-nearest reference feature, absent when the reference set has a
/// single element.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Correspondence {
    pub query_idx: usize,
    pub train_idx: usize,
    pub d1: u32,
    pub d2: Option<u32>,
}

impl Correspondence {
    pub fn key(&self) -> (usize, usize) {
        (self.query_idx, self.train_idx)
    }

    /// `d1 / d2`, or `None` when it is undefined.
    pub fn distance_ratio(&self) -> Option<f64> {
        match self.d2 {
            Some(d2) if d2 > 0 => Some(self.d1 as f64 / d2 as f64),
            _ => None,
        }
    }
}

/// Nearest and second-nearest reference features for one query descriptor.
/// Ties go to the lower reference index; the two entries always refer to
/// different reference indices.
fn nearest_two(query: &BinaryDescriptor, reference: &[BinaryDescriptor]) -> ((usize, u32), Option<u32>) {
    let mut best = (usize::MAX, u32::MAX);
    let mut second = u32::MAX;
    for (j, r) in reference.iter().enumerate() {
        let d = hamming_distance(query, r);
        if d < best.1 {
            second = best.1;
            best = (j, d);
        } else if d < second {
            second = d;
        }
    }
    let second = (reference.len() > 1).then_some(second);
    (best, second)
}

/// Exact 2-NN search of every target descriptor against the reference set.
///
/// Returns one correspondence per target feature, in target order.
pub fn knn2_match(target: &FeatureSet, reference: &FeatureSet) -> Result<Vec<Correspondence>> {
    if reference.is_empty() {
        return Err(MatchError::EmptyReference);
    }
    let refs = reference.descriptors();
    Ok(target
        .descriptors()
        .par_iter()
        .enumerate()
        .map(|(i, q)| {
            let ((train_idx, d1), d2) = nearest_two(q, refs);
            Correspondence {
                query_idx: i,
                train_idx,
                d1,
                d2,
            }
        })
        .collect())
}
