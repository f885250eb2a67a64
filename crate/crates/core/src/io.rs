//! Feature files, ground-truth homography files and ground-truth match lists.
//!
//! Feature files are a single JSON object:
//!
//! ```json
//! {
//!   "image_size": [640, 480],
//!   "keypoints": [[12.5, 30.0], [100.25, 7.0]],
//!   "descriptors": ["<64 hex chars>", "<64 hex chars>"]
//! }
//! ```
//!
//! Descriptor hex is the 32 descriptor bytes in order, most significant bit
//! of the first byte being bit 0. Homography files hold nine whitespace
//! separated numbers, one matrix row per line, as in the Oxford affine
//! benchmark.

use std::fmt::{self, Write as _};
use std::fs;
use std::path::Path;

use serde::de::{self, DeserializeSeed, SeqAccess, Visitor};
use serde::{Deserialize, Deserializer, Serialize};

use crate::descriptor::{BinaryDescriptor, FeatureSet, Keypoint};
use crate::error::{MatchError, Result};
use crate::homography::Homography;

struct DescriptorList(Vec<BinaryDescriptor>);

/// One hex descriptor; the index only labels errors.
struct IndexedHex(usize);

impl<'de> DeserializeSeed<'de> for IndexedHex {
    type Value = BinaryDescriptor;

    fn deserialize<D: Deserializer<'de>>(self, d: D) -> std::result::Result<Self::Value, D::Error> {
        d.deserialize_str(self)
    }
}

impl Visitor<'_> for IndexedHex {
    type Value = BinaryDescriptor;

    fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
        write!(f, "descriptor {} as a 64-character hex string", self.0)
    }

    fn visit_str<E: de::Error>(self, s: &str) -> std::result::Result<Self::Value, E> {
        BinaryDescriptor::from_hex(s).map_err(|e| E::custom(format!("descriptor {}: {e}", self.0)))
    }
}

impl<'de> Deserialize<'de> for DescriptorList {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct ListVisitor;

        impl<'de> Visitor<'de> for ListVisitor {
            type Value = DescriptorList;

            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("an array of 64-character hex strings")
            }

            fn visit_seq<A: SeqAccess<'de>>(self, mut seq: A) -> std::result::Result<Self::Value, A::Error> {
                let mut out = Vec::with_capacity(seq.size_hint().unwrap_or(0));
                while let Some(d) = seq.next_element_seed(IndexedHex(out.len()))? {
                    out.push(d);
                }
                Ok(DescriptorList(out))
            }
        }

        d.deserialize_seq(ListVisitor)
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FeatureFile {
    image_size: (u32, u32),
    keypoints: Vec<[f64; 2]>,
    descriptors: DescriptorList,
}

/// Parses the JSON feature format from a string.
pub fn parse_features(text: &str) -> std::result::Result<FeatureSet, String> {
    let file: FeatureFile = serde_json::from_str(text).map_err(|e| e.to_string())?;
    let keypoints = file.keypoints.iter().map(|&[x, y]| Keypoint::new(x, y)).collect();
    FeatureSet::new(keypoints, file.descriptors.0, file.image_size).map_err(|e| e.to_string())
}

/// Renders a feature set in the JSON feature format, one record per line.
pub fn format_features(features: &FeatureSet) -> String {
    let num = |v: f64| serde_json::to_string(&v).expect("finite coordinate");
    let (w, h) = features.image_size();
    let mut out = String::new();
    let _ = writeln!(out, "{{\n  \"image_size\": [{w}, {h}],\n  \"keypoints\": [");
    let n = features.len();
    for (i, k) in features.keypoints().iter().enumerate() {
        let sep = if i + 1 < n { "," } else { "" };
        let _ = writeln!(out, "    [{}, {}]{sep}", num(k.x), num(k.y));
    }
    out.push_str("  ],\n  \"descriptors\": [\n");
    for (i, d) in features.descriptors().iter().enumerate() {
        let sep = if i + 1 < n { "," } else { "" };
        let _ = writeln!(out, "    \"{}\"{sep}", d.to_hex());
    }
    out.push_str("  ]\n}\n");
    out
}

pub fn load_features(path: impl AsRef<Path>) -> Result<FeatureSet> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| MatchError::io(path, e))?;
    parse_features(&text).map_err(|m| MatchError::parse(path, m))
}

pub fn save_features(path: impl AsRef<Path>, features: &FeatureSet) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_features(features)).map_err(|e| MatchError::io(path, e))
}

/// Parses nine whitespace-separated numbers into a normalized homography.
pub fn parse_homography(text: &str) -> std::result::Result<Homography, String> {
    let tokens: Vec<&str> = text.split_whitespace().collect();
    if tokens.len() != 9 {
        return Err(format!("expected 9 numbers, found {}", tokens.len()));
    }
    let mut rows = [0.0; 9];
    for (i, (slot, tok)) in rows.iter_mut().zip(&tokens).enumerate() {
        *slot = tok
            .parse()
            .map_err(|_| format!("entry {} (row {}) is not a number: '{tok}'", i, i / 3 + 1))?;
    }
    Homography::from_rows(rows).map_err(|e| e.to_string())
}

/// Three lines of three numbers, in shortest round-trip form.
pub fn format_homography(h: &Homography) -> String {
    let r = h.to_rows();
    (0..3)
        .map(|i| format!("{} {} {}\n", r[3 * i], r[3 * i + 1], r[3 * i + 2]))
        .collect()
}

pub fn load_homography(path: impl AsRef<Path>) -> Result<Homography> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| MatchError::io(path, e))?;
    parse_homography(&text).map_err(|m| MatchError::parse(path, m))
}

pub fn save_homography(path: impl AsRef<Path>, h: &Homography) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_homography(h)).map_err(|e| MatchError::io(path, e))
}

#[derive(Debug, Serialize, Deserialize)]
struct PairRow {
    query_idx: usize,
    train_idx: usize,
}

/// Writes `query_idx,train_idx` rows with a header.
pub fn save_match_pairs(path: impl AsRef<Path>, pairs: &[(usize, usize)]) -> Result<()> {
    let path = path.as_ref();
    let to_err = |e: csv::Error| MatchError::parse(path, e.to_string());
    let mut w = csv::Writer::from_path(path).map_err(to_err)?;
    for &(query_idx, train_idx) in pairs {
        w.serialize(PairRow { query_idx, train_idx }).map_err(to_err)?;
    }
    w.flush().map_err(|e| MatchError::io(path, e))
}

pub fn load_match_pairs(path: impl AsRef<Path>) -> Result<Vec<(usize, usize)>> {
    let path = path.as_ref();
    let to_err = |e: csv::Error| MatchError::parse(path, e.to_string());
    let mut r = csv::Reader::from_path(path).map_err(to_err)?;
    r.deserialize::<PairRow>()
        .map(|row| row.map(|p| (p.query_idx, p.train_idx)).map_err(to_err))
        .collect()
}
