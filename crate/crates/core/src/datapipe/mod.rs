//! ROI image ingestion, augmentation, resizing and fold assignment.

mod augment;
mod folds;
mod io;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use augment::{augment_all, low_rank_approx, mirror, resize_bicubic, resize_to, rotate, svd_truncate, SVD_RATIOS};
pub use folds::{split_validation, stratified_folds, FoldAssignment};
pub use io::{load_dataset, synthetic_stripes, write_augmented_set, LoadOptions, ManifestRow};

/// Side length every ROI is resized to before entering a network.
pub const INPUT_SIDE: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Benign,
    Malignant,
}

impl Label {
    pub const ALL: [Label; 2] = [Label::Benign, Label::Malignant];

    /// Class index used by the networks: benign 0, malignant 1.
    pub fn index(self) -> usize {
        match self {
            Label::Benign => 0,
            Label::Malignant => 1,
        }
    }

    pub fn from_index(i: usize) -> Option<Label> {
        Label::ALL.get(i).copied()
    }

    pub fn dir_name(self) -> &'static str {
        match self {
            Label::Benign => "benign",
            Label::Malignant => "malignant",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.dir_name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Provenance {
    Original,
    Mirror,
    Rot90,
    Rot180,
    Rot270,
    Svd45,
    Svd35,
    Svd25,
}

impl Provenance {
    pub fn name(self) -> &'static str {
        match self {
            Provenance::Original => "ORIGINAL",
            Provenance::Mirror => "MIRROR",
            Provenance::Rot90 => "ROT90",
            Provenance::Rot180 => "ROT180",
            Provenance::Rot270 => "ROT270",
            Provenance::Svd45 => "SVD45",
            Provenance::Svd35 => "SVD35",
            Provenance::Svd25 => "SVD25",
        }
    }
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Provenance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        use Provenance::*;
        [Original, Mirror, Rot90, Rot180, Rot270, Svd45, Svd35, Svd25]
            .into_iter()
            .find(|p| p.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Format(format!("unknown provenance {s:?}")))
    }
}

/// An 8-bit grayscale region of interest, row-major.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoiImage {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<u8>,
    pub label: Label,
    pub source_id: String,
    pub provenance: Provenance,
}

impl RoiImage {
    pub fn new(height: usize, width: usize, pixels: Vec<u8>, label: Label, source_id: impl Into<String>) -> Result<Self> {
        if height < 2 || width < 2 {
            return Err(Error::InvalidArgument(format!("ROI must be at least 2x2, got {height}x{width}")));
        }
        if pixels.len() != height * width {
            return Err(Error::InvalidArgument(format!(
                "{height}x{width} ROI needs {} pixels, got {}",
                height * width,
                pixels.len()
            )));
        }
        Ok(RoiImage { height, width, pixels, label, source_id: source_id.into(), provenance: Provenance::Original })
    }

    pub fn at(&self, r: usize, c: usize) -> u8 {
        self.pixels[r * self.width + c]
    }

    /// Same label and source, new pixels and provenance.
    pub(crate) fn derive(&self, height: usize, width: usize, pixels: Vec<u8>, provenance: Provenance) -> RoiImage {
        RoiImage { height, width, pixels, label: self.label, source_id: self.source_id.clone(), provenance }
    }

    pub fn histogram(&self) -> [usize; 256] {
        let mut h = [0; 256];
        for &p in &self.pixels {
            h[p as usize] += 1;
        }
        h
    }

    pub fn mean(&self) -> f64 {
        self.pixels.iter().map(|&p| p as f64).sum::<f64>() / self.pixels.len() as f64
    }
}
