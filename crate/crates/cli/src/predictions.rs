//! JSON-lines prediction format read by `recover`.
//!
//! One file `<image id>.jsonl` per image, one object per line:
//!
//! ```json
//! {"category":"Car","score":0.9,"box2d":[x1,y1,x2,y2],"center_t":[t1,t2],
//!  "size":{"w":1.6,"h":1.5,"l":3.9},"yaw":{"sin":0.0,"cos":1.0},
//!  "factors":{"H":1.5,"h_rec":0.02},"sigma":{"H":0.05,"h_rec":0.001}}
//! ```
//!
//! `center_t` is the projected 3D center relative to `box2d`, `yaw` encodes
//! the allocentric angle alpha, and `factors` are the object height and the
//! reciprocal visual height. Unknown fields are rejected.

use serde::{Deserialize, Serialize};

use mono3d::boxes::YawEncoding;
use mono3d::losses::{denormalize_keypoint, NormalizedKeypoint};
use mono3d::{Box2D, DetectionRecord, DistanceFactors, PhysicalSize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SizeJson {
    pub w: f64,
    pub h: f64,
    pub l: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct YawJson {
    pub sin: f64,
    pub cos: f64,
}

/// A value for each distance factor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FactorPair {
    #[serde(rename = "H")]
    pub height: f64,
    pub h_rec: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Prediction {
    pub category: String,
    pub score: f64,
    pub box2d: [f64; 4],
    pub center_t: [f64; 2],
    pub size: SizeJson,
    pub yaw: YawJson,
    pub factors: FactorPair,
    pub sigma: FactorPair,
}

impl Prediction {
    /// Validates the fields and converts to a detection record with the
    /// center keypoint in pixels.
    pub fn to_record(&self) -> mono3d::Result<DetectionRecord> {
        let [x1, y1, x2, y2] = self.box2d;
        let box2d = Box2D::new(x1, y1, x2, y2)?;
        let center_kpt = denormalize_keypoint(
            &box2d,
            NormalizedKeypoint {
                t1: self.center_t[0],
                t2: self.center_t[1],
            },
        )?;
        let rec = DetectionRecord {
            cls: self.category.clone(),
            score: self.score,
            box2d,
            center_kpt,
            size: PhysicalSize::new(self.size.w, self.size.h, self.size.l)?,
            yaw: YawEncoding {
                sin_t: self.yaw.sin,
                cos_t: self.yaw.cos,
            }
            .normalize()?,
            factors: DistanceFactors::new(self.factors.height, self.factors.h_rec)?,
            sigma_h: self.sigma.height,
            sigma_hrec: self.sigma.h_rec,
        };
        rec.validate()?;
        Ok(rec)
    }
}

/// Parses a prediction file. Errors carry the 1-based line number.
pub fn parse_predictions(text: &str) -> Result<Vec<Prediction>, (usize, String)> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let p: Prediction = serde_json::from_str(line).map_err(|e| (i + 1, e.to_string()))?;
        p.to_record().map_err(|e| (i + 1, e.to_string()))?;
        out.push(p);
    }
    Ok(out)
}

pub fn write_predictions(preds: &[Prediction]) -> String {
    preds
        .iter()
        .map(|p| serde_json::to_string(p).expect("prediction is serializable") + "\n")
        .collect()
}

/// One entry of the `<image id>.json` sidecar written next to each
/// detection file, aligned with its lines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SidecarEntry {
    pub category: String,
    pub score: f64,
    pub composite: f64,
    pub focal: f64,
    pub factors: FactorPair,
    pub sigma: FactorPair,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sidecar {
    pub detections: Vec<SidecarEntry>,
}
