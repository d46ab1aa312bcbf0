//! Confidence re-scoring. `f * H * σ_h_rec` approximates the distance
//! uncertainty of a detection, so `score / (f * H * σ_h_rec)` ranks boxes by
//! 3D quality rather than 2D classification confidence alone.

use serde::{Deserialize, Serialize};

use crate::boxes::{Box2D, PhysicalSize, YawEncoding};
use crate::camera::Keypoint;
use crate::distance::DistanceFactors;
use crate::error::{Error, Result};

/// Everything the network predicts for one object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub cls: String,
    pub score: f64,
    pub box2d: Box2D,
    pub center_kpt: Keypoint,
    pub size: PhysicalSize,
    pub yaw: YawEncoding,
    pub factors: DistanceFactors,
    pub sigma_h: f64,
    pub sigma_hrec: f64,
}

impl DetectionRecord {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.score) {
            return Err(Error::InvalidInput(format!(
                "score {} outside [0, 1]",
                self.score
            )));
        }
        for s in [self.sigma_h, self.sigma_hrec] {
            if !(s > 0.0) {
                return Err(Error::NonPositiveSigma(s));
            }
        }
        DistanceFactors::new(self.factors.height, self.factors.h_rec)?;
        Ok(())
    }

    /// Composite confidence using the focal length of the detection's image.
    pub fn composite_confidence(&self, f: f64) -> Result<f64> {
        composite_confidence(self.score, f, self.factors.height, self.sigma_hrec)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreMode {
    #[default]
    Raw,
    Composite,
}

impl std::str::FromStr for ScoreMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "raw" => Ok(Self::Raw),
            "composite" => Ok(Self::Composite),
            other => Err(Error::InvalidInput(format!("unknown score mode {other:?}"))),
        }
    }
}

/// `score / (f * H * σ_h_rec)`. Unclamped; only its order matters.
pub fn composite_confidence(score: f64, f: f64, height: f64, sigma_hrec: f64) -> Result<f64> {
    for (name, value) in [("f", f), ("H", height), ("sigma_hrec", sigma_hrec)] {
        if !(value > 0.0 && value.is_finite()) {
            return Err(Error::InvalidFactor { name, value });
        }
    }
    if !(score >= 0.0) {
        return Err(Error::InvalidInput(format!("negative score {score}")));
    }
    Ok(score / (f * height * sigma_hrec))
}

pub fn ranking_key(det: &DetectionRecord, f: f64, mode: ScoreMode) -> Result<f64> {
    match mode {
        ScoreMode::Raw => Ok(det.score),
        ScoreMode::Composite => det.composite_confidence(f),
    }
}

/// Stable descending order of `keys`; ties keep their input order.
pub fn descending_order(keys: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..keys.len()).collect();
    idx.sort_by(|&a, &b| keys[b].total_cmp(&keys[a]));
    idx
}

/// Ranks detections by the chosen key. `focals[i]` is the focal length of
/// the image detection `i` came from. Returns a permutation of indices,
/// best first.
pub fn rank_detections(
    dets: &[DetectionRecord],
    focals: &[f64],
    mode: ScoreMode,
) -> Result<Vec<usize>> {
    if dets.len() != focals.len() {
        return Err(Error::LengthMismatch {
            left: dets.len(),
            right: focals.len(),
        });
    }
    let keys = dets
        .iter()
        .zip(focals)
        .map(|(d, &f)| ranking_key(d, f, mode))
        .collect::<Result<Vec<_>>>()?;
    Ok(descending_order(&keys))
}
