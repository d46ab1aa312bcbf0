//! KITTI label, detection and calibration files.
//!
//! Label lines carry 15 space-separated fields, detection lines a 16th
//! score field:
//!
//! ```text
//! type truncated occluded alpha x1 y1 x2 y2 h w l x y z rotation_y [score]
//! ```
//!
//! The stored location is the center of the bottom face; [`ObjectLabel::to_box3d`]
//! lifts it to the geometric center (`y - h/2`). Output uses a fixed
//! six-decimal float format with LF line endings so files are
//! byte-deterministic.

use std::f64::consts::PI;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::boxes::{ry_to_alpha, Box2D, Box3D, PhysicalSize};
use crate::camera::{CameraPoint, ProjectionMatrix};
use crate::error::{Error, Result};
use crate::scoring::DetectionRecord;

pub const DONT_CARE: &str = "DontCare";

const ANGLE_TOL: f64 = 1e-6;

/// One line of a KITTI label or detection file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectLabel {
    pub category: String,
    pub truncation: f64,
    pub occlusion: i32,
    pub alpha: f64,
    pub box2d: Box2D,
    pub size: PhysicalSize,
    /// Bottom-face center, as stored in the file.
    pub location: CameraPoint,
    pub ry: f64,
    pub score: Option<f64>,
}

impl ObjectLabel {
    pub fn is_dont_care(&self) -> bool {
        self.category == DONT_CARE
    }

    /// Box with its center moved from the bottom face to the geometric center.
    pub fn to_box3d(&self) -> Result<Box3D> {
        let size = PhysicalSize::new(self.size.w, self.size.h, self.size.l)?;
        Ok(Box3D {
            center: CameraPoint::new(
                self.location.x,
                self.location.y - size.h / 2.0,
                self.location.z,
            ),
            size,
            ry: self.ry,
        })
    }

    /// Builds a label from a box with geometric center. `alpha` is derived
    /// from `ry` and the viewing ray.
    pub fn from_box3d(
        category: impl Into<String>,
        box2d: Box2D,
        b: &Box3D,
        score: Option<f64>,
    ) -> Result<Self> {
        Ok(Self {
            category: category.into(),
            truncation: if score.is_some() { -1.0 } else { 0.0 },
            occlusion: if score.is_some() { -1 } else { 0 },
            alpha: ry_to_alpha(b.ry, b.center.x, b.center.z)?,
            box2d,
            size: b.size,
            location: CameraPoint::new(b.center.x, b.center.y + b.size.h / 2.0, b.center.z),
            ry: b.ry,
            score,
        })
    }
}

/// KITTI difficulty strata. `Ignored` sorts after every real level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Difficulty {
    Easy,
    Moderate,
    Hard,
    Ignored,
}

impl Difficulty {
    pub const LEVELS: [Difficulty; 3] = [Difficulty::Easy, Difficulty::Moderate, Difficulty::Hard];

    pub fn name(self) -> &'static str {
        match self {
            Difficulty::Easy => "easy",
            Difficulty::Moderate => "moderate",
            Difficulty::Hard => "hard",
            Difficulty::Ignored => "ignored",
        }
    }
}

impl std::str::FromStr for Difficulty {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "easy" => Ok(Self::Easy),
            "moderate" => Ok(Self::Moderate),
            "hard" => Ok(Self::Hard),
            other => Err(Error::InvalidInput(format!("unknown difficulty {other:?}"))),
        }
    }
}

/// Devkit thresholds: (min bbox height px, max occlusion, max truncation).
pub const DIFFICULTY_THRESHOLDS: [(Difficulty, f64, i32, f64); 3] = [
    (Difficulty::Easy, 40.0, 0, 0.15),
    (Difficulty::Moderate, 25.0, 1, 0.30),
    (Difficulty::Hard, 25.0, 2, 0.50),
];

pub fn assign_difficulty(label: &ObjectLabel) -> Difficulty {
    if label.is_dont_care() {
        return Difficulty::Ignored;
    }
    let height = label.box2d.height();
    DIFFICULTY_THRESHOLDS
        .iter()
        .find(|&&(_, min_h, max_occ, max_trunc)| {
            height >= min_h
                && (0..=max_occ).contains(&label.occlusion)
                && label.truncation <= max_trunc
        })
        .map_or(Difficulty::Ignored, |&(d, ..)| d)
}

const FIELD_NAMES: [&str; 16] = [
    "type",
    "truncated",
    "occluded",
    "alpha",
    "bbox_left",
    "bbox_top",
    "bbox_right",
    "bbox_bottom",
    "height",
    "width",
    "length",
    "location_x",
    "location_y",
    "location_z",
    "rotation_y",
    "score",
];

fn parse_f64(line: usize, idx: usize, token: &str) -> Result<f64> {
    match token.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(Error::NumericParse {
            line,
            field: FIELD_NAMES[idx],
            token: token.to_string(),
        }),
    }
}

fn range_err(line: usize, field: &'static str, reason: String) -> Error {
    Error::FieldRange {
        line,
        field,
        reason,
    }
}

fn parse_line(line_no: usize, tokens: &[&str]) -> Result<ObjectLabel> {
    let n = tokens.len();
    if n != 15 && n != 16 {
        return Err(Error::FieldCount {
            line: line_no,
            count: n,
        });
    }
    let category = tokens[0].to_string();
    let mut v = [0.0; 16];
    for i in 1..n {
        v[i] = parse_f64(line_no, i, tokens[i])?;
    }
    let occlusion = match tokens[2].parse::<i32>() {
        Ok(o) => o,
        // some exporters write the occlusion as a float
        Err(_) if v[2].fract() == 0.0 && v[2].abs() < 1e6 => v[2] as i32,
        Err(_) => {
            return Err(Error::NumericParse {
                line: line_no,
                field: FIELD_NAMES[2],
                token: tokens[2].to_string(),
            })
        }
    };
    let score = (n == 16).then_some(v[15]);
    let label = ObjectLabel {
        category,
        truncation: v[1],
        occlusion,
        alpha: v[3],
        box2d: Box2D {
            x1: v[4],
            y1: v[5],
            x2: v[6],
            y2: v[7],
        },
        size: PhysicalSize {
            h: v[8],
            w: v[9],
            l: v[10],
        },
        location: CameraPoint::new(v[11], v[12], v[13]),
        ry: v[14],
        score,
    };
    if !label.is_dont_care() {
        validate(line_no, &label)?;
    }
    Ok(label)
}

fn validate(line: usize, l: &ObjectLabel) -> Result<()> {
    // detection files use -1 for the unknown truncation/occlusion
    let sentinel = l.score.is_some() && l.truncation == -1.0 && l.occlusion == -1;
    if !sentinel {
        if !(0.0..=1.0).contains(&l.truncation) {
            return Err(range_err(
                line,
                "truncated",
                format!("{} not in [0, 1]", l.truncation),
            ));
        }
        if !(0..=3).contains(&l.occlusion) {
            return Err(range_err(
                line,
                "occluded",
                format!("{} not in 0..=3", l.occlusion),
            ));
        }
    }
    for (field, a) in [("alpha", l.alpha), ("rotation_y", l.ry)] {
        if a.abs() > PI + ANGLE_TOL {
            return Err(range_err(line, field, format!("{a} not in [-pi, pi]")));
        }
    }
    let b = l.box2d;
    if Box2D::new(b.x1, b.y1, b.x2, b.y2).is_err() {
        return Err(range_err(
            line,
            "bbox",
            format!("({}, {}, {}, {}) is empty", b.x1, b.y1, b.x2, b.y2),
        ));
    }
    for (field, s) in [
        ("height", l.size.h),
        ("width", l.size.w),
        ("length", l.size.l),
    ] {
        if !(s > 0.0) {
            return Err(range_err(line, field, format!("{s} is not positive")));
        }
    }
    Ok(())
}

/// Parses a label or detection file. Blank lines are skipped; line numbers
/// in errors are 1-based.
pub fn parse_label_file(text: &str) -> Result<Vec<ObjectLabel>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let tokens: Vec<&str> = line.split_ascii_whitespace().collect();
        if tokens.is_empty() {
            continue;
        }
        out.push(parse_line(i + 1, &tokens)?);
    }
    Ok(out)
}

/// Byte-level entry point; rejects invalid UTF-8 instead of panicking.
pub fn parse_label_bytes(bytes: &[u8]) -> Result<Vec<ObjectLabel>> {
    let text = std::str::from_utf8(bytes).map_err(|e| Error::InvalidUtf8(e.valid_up_to()))?;
    parse_label_file(text)
}

fn push_f64(out: &mut String, v: f64) {
    let _ = write!(out, " {v:.6}");
}

/// Serializes labels in the canonical format.
pub fn write_labels(labels: &[ObjectLabel]) -> String {
    let mut out = String::new();
    for l in labels {
        out.push_str(&l.category);
        push_f64(&mut out, l.truncation);
        let _ = write!(out, " {}", l.occlusion);
        for v in [
            l.alpha,
            l.box2d.x1,
            l.box2d.y1,
            l.box2d.x2,
            l.box2d.y2,
            l.size.h,
            l.size.w,
            l.size.l,
            l.location.x,
            l.location.y,
            l.location.z,
            l.ry,
        ] {
            push_f64(&mut out, v);
        }
        if let Some(s) = l.score {
            push_f64(&mut out, s);
        }
        out.push('\n');
    }
    out
}

/// Writes 16-field detection lines. The geometric center is converted back
/// to the bottom-face center and the raw score is written; re-scored
/// confidences belong in a sidecar file.
pub fn write_detections(dets: &[(DetectionRecord, Box3D)]) -> Result<String> {
    let labels = dets
        .iter()
        .map(|(rec, b)| ObjectLabel::from_box3d(rec.cls.clone(), rec.box2d, b, Some(rec.score)))
        .collect::<Result<Vec<_>>>()?;
    Ok(write_labels(&labels))
}

/// Reads the `P2` entry of a calibration file.
pub fn parse_calib_file(text: &str) -> Result<ProjectionMatrix> {
    parse_calib_key(text, "P2")
}

pub fn parse_calib_key(text: &str, key: &str) -> Result<ProjectionMatrix> {
    for (i, line) in text.lines().enumerate() {
        let Some((k, rest)) = line.split_once(':') else {
            continue;
        };
        if k.trim() != key {
            continue;
        }
        let tokens: Vec<&str> = rest.split_ascii_whitespace().collect();
        if tokens.len() != 12 {
            return Err(Error::FieldCount {
                line: i + 1,
                count: tokens.len(),
            });
        }
        let mut rows = [[0.0; 4]; 3];
        for (j, tok) in tokens.iter().enumerate() {
            rows[j / 4][j % 4] = match tok.parse::<f64>() {
                Ok(v) if v.is_finite() => v,
                _ => {
                    return Err(Error::NumericParse {
                        line: i + 1,
                        field: "P2",
                        token: tok.to_string(),
                    })
                }
            };
        }
        return ProjectionMatrix::new(rows);
    }
    Err(Error::MissingKey(key.to_string()))
}

/// Serializes `P2` in the canonical float format.
pub fn write_calib(p: &ProjectionMatrix) -> String {
    let mut out = String::from("P2:");
    for v in p.rows().iter().flatten() {
        push_f64(&mut out, *v);
    }
    out.push('\n');
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::boxes::YawEncoding;
    use crate::camera::Keypoint;
    use crate::distance::DistanceFactors;
    use proptest::prelude::*;

    const CAR: &str =
        "Car 0.00 0 -1.58 587.01 173.33 614.12 200.12 1.65 1.67 3.64 -0.65 1.71 46.70 -1.59";

    #[test]
    fn parse_devkit_line() {
        let labels = parse_label_file(CAR).unwrap();
        assert_eq!(labels.len(), 1);
        let l = &labels[0];
        assert_eq!(l.category, "Car");
        assert_eq!(l.truncation, 0.0);
        assert_eq!(l.occlusion, 0);
        assert_eq!(l.alpha, -1.58);
        assert_eq!(
            l.box2d,
            Box2D {
                x1: 587.01,
                y1: 173.33,
                x2: 614.12,
                y2: 200.12
            }
        );
        assert_eq!((l.size.h, l.size.w, l.size.l), (1.65, 1.67, 3.64));
        assert_eq!(l.location, CameraPoint::new(-0.65, 1.71, 46.70));
        assert_eq!(l.ry, -1.59);
        assert_eq!(l.score, None);

        let b = l.to_box3d().unwrap();
        assert_eq!(b.center.z, 46.70);
        assert!((b.center.y - (1.71 - 0.825)).abs() < 1e-12);
        assert_eq!(b.size.h, 1.65);
    }

    #[test]
    fn field_count_error() {
        let short = "Car 0.00 0 -1.58 587.01 173.33 614.12 200.12 1.65 1.67 3.64 -0.65 1.71 46.70";
        let text = format!("{CAR}\n{short}\n");
        assert_eq!(
            parse_label_file(&text),
            Err(Error::FieldCount { line: 2, count: 14 })
        );
    }

    #[test]
    fn numeric_error_names_field() {
        let bad = CAR.replace("46.70", "4x.70");
        match parse_label_file(&bad) {
            Err(Error::NumericParse {
                line: 1,
                field,
                token,
            }) => {
                assert_eq!(field, "location_z");
                assert_eq!(token, "4x.70");
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(parse_label_file(&CAR.replace("46.70", "NaN")).is_err());
        assert!(matches!(
            parse_label_file(&CAR.replace("0.00 0", "0.00 7")),
            Err(Error::FieldRange {
                field: "occluded",
                ..
            })
        ));
    }

    #[test]
    fn dont_care_is_ignorable() {
        let line = "DontCare -1 -1 -10 503.89 169.71 590.61 190.13 -1 -1 -1 -1000 -1000 -1000 -10";
        let labels = parse_label_file(line).unwrap();
        assert!(labels[0].is_dont_care());
        assert_eq!(labels[0].truncation, -1.0);
        assert_eq!(labels[0].occlusion, -1);
        assert_eq!(assign_difficulty(&labels[0]), Difficulty::Ignored);
        assert!(labels[0].to_box3d().is_err());
    }

    fn label_with(height: f64, occ: i32, trunc: f64) -> ObjectLabel {
        let mut l = parse_label_file(CAR).unwrap().remove(0);
        l.box2d.y2 = l.box2d.y1 + height;
        l.occlusion = occ;
        l.truncation = trunc;
        l
    }

    #[test]
    fn difficulty_table() {
        assert_eq!(
            assign_difficulty(&label_with(50.0, 0, 0.0)),
            Difficulty::Easy
        );
        assert_eq!(
            assign_difficulty(&label_with(30.0, 1, 0.2)),
            Difficulty::Moderate
        );
        assert_eq!(
            assign_difficulty(&label_with(30.0, 2, 0.45)),
            Difficulty::Hard
        );
        assert_eq!(
            assign_difficulty(&label_with(20.0, 0, 0.0)),
            Difficulty::Ignored
        );
        assert_eq!(
            assign_difficulty(&label_with(50.0, 3, 0.0)),
            Difficulty::Ignored
        );
        assert_eq!(
            assign_difficulty(&label_with(50.0, 0, 0.6)),
            Difficulty::Ignored
        );
        assert!(Difficulty::Easy < Difficulty::Moderate && Difficulty::Moderate < Difficulty::Hard);
    }

    #[test]
    fn calib_examples() {
        let p = parse_calib_file("P2: 1 0 0 0 0 1 0 0 0 0 1 0").unwrap();
        assert_eq!(crate::camera::focal_length(&p).unwrap(), 1.0);

        let text = "P0: 1 0 0 0 0 1 0 0 0 0 1 0\nP2: 700 0 600 0 0 700 200 0 0 0 1 0\n";
        let p = parse_calib_file(text).unwrap();
        assert_eq!(crate::camera::focal_length(&p).unwrap(), 700.0);
        assert_eq!(p.principal_point(), Keypoint::new(600.0, 200.0));

        let real = "P2: 7.215377e+02 0.000000e+00 6.095593e+02 4.485728e+01 0.000000e+00 7.215377e+02 1.728540e+02 2.163791e-01 0.000000e+00 0.000000e+00 1.000000e+00 2.745884e-03";
        let p = parse_calib_file(real).unwrap();
        let written = write_calib(&p);
        let reparsed = parse_calib_file(&written).unwrap();
        assert_eq!(write_calib(&reparsed), written);
        for (a, b) in p
            .rows()
            .iter()
            .flatten()
            .zip(reparsed.rows().iter().flatten())
        {
            assert!((a - b).abs() <= 5e-7);
        }
        let canonical = parse_calib_file(&written).unwrap();
        assert_eq!(
            canonical.rows(),
            parse_calib_file(&write_calib(&canonical)).unwrap().rows()
        );

        assert_eq!(
            parse_calib_file("P0: 1 2 3"),
            Err(Error::MissingKey("P2".into()))
        );
        assert!(matches!(
            parse_calib_file("P2: 1 0 0 0 0 1 0 0 0 0 1"),
            Err(Error::FieldCount { line: 1, count: 11 })
        ));
    }

    fn record(score: f64) -> DetectionRecord {
        DetectionRecord {
            cls: "Car".into(),
            score,
            box2d: Box2D::new(587.01, 173.33, 614.12, 200.12).unwrap(),
            center_kpt: Keypoint::new(600.0, 186.0),
            size: PhysicalSize::new(1.67, 1.65, 3.64).unwrap(),
            yaw: YawEncoding {
                sin_t: 0.0,
                cos_t: 1.0,
            },
            factors: DistanceFactors::new(1.65, 0.04).unwrap(),
            sigma_h: 0.1,
            sigma_hrec: 0.001,
        }
    }

    #[test]
    fn write_detections_fixed_point() {
        assert_eq!(write_detections(&[]).unwrap(), "");
        let p = ProjectionMatrix::from_intrinsics(721.5377, 721.5377, 609.5593, 172.854).unwrap();
        let factors = DistanceFactors::new(1.65, 0.0392).unwrap();
        let center =
            crate::distance::recover_center(&p, Keypoint::new(600.5, 186.2), &factors).unwrap();
        let b = Box3D {
            center,
            size: PhysicalSize::new(1.67, 1.65, 3.64).unwrap(),
            ry: -1.59,
        };
        let first = write_detections(&[(record(0.87), b)]).unwrap();
        let parsed = parse_label_file(&first).unwrap();
        let second = write_labels(&parsed);
        assert_eq!(first, second);
        assert!(first.ends_with('\n') && !first.contains('\r'));
        assert_eq!(first.split_ascii_whitespace().count(), 16);

        let back = parsed[0].to_box3d().unwrap();
        assert!((back.center.z - center.z).abs() < 1e-6);
        assert!((back.center.x - center.x).abs() < 1e-6);
        assert!((back.center.y - center.y).abs() < 1e-6);
        assert_eq!(parsed[0].score, Some(0.87));
    }

    proptest! {
        #[test]
        fn never_panics_on_bytes(bytes in prop::collection::vec(any::<u8>(), 0..256)) {
            let _ = parse_label_bytes(&bytes);
        }

        #[test]
        fn never_panics_on_token_soup(
            toks in prop::collection::vec(prop::sample::select(vec![
                "Car", "DontCare", "0", "-1", "1e309", "nan", "3.5", "-10", "", " ", "\n", "0.5",
            ]), 0..40)
        ) {
            let _ = parse_label_file(&toks.join(" "));
        }

        #[test]
        fn difficulty_monotone(h in 0.0..80.0f64, occ in 0..4i32, trunc in 0.0..1.0f64,
                               dh in 0.0..30.0f64, docc in 0..3i32, dtrunc in 0.0..0.5f64) {
            let base = assign_difficulty(&label_with(h.max(0.01), occ, trunc));
            let worse_h = assign_difficulty(&label_with((h - dh).max(0.01), occ, trunc));
            let worse_o = assign_difficulty(&label_with(h.max(0.01), (occ + docc).min(3), trunc));
            let worse_t = assign_difficulty(&label_with(h.max(0.01), occ, (trunc + dtrunc).min(1.0)));
            prop_assert!(worse_h >= base && worse_o >= base && worse_t >= base);
        }

        #[test]
        fn parse_write_identity(
            x in -40.0..40.0f64, y in -2.0..3.0f64, z in 2.0..80.0f64,
            h in 1.0..3.0f64, w in 1.0..2.5f64, l in 2.0..6.0f64,
            ry in -std::f64::consts::PI..std::f64::consts::PI, trunc in 0.0..1.0f64, occ in 0..4i32,
        ) {
            let label = ObjectLabel {
                category: "Car".into(),
                truncation: trunc,
                occlusion: occ,
                alpha: 0.25,
                box2d: Box2D::new(10.0, 20.0, 110.5, 90.25).unwrap(),
                size: PhysicalSize::new(w, h, l).unwrap(),
                location: CameraPoint::new(x, y, z),
                ry,
                score: None,
            };
            let text = write_labels(std::slice::from_ref(&label));
            let back = parse_label_file(&text).unwrap().remove(0);
            prop_assert_eq!(&back.category, &label.category);
            prop_assert!((back.location.z - z).abs() <= 1e-6 && (back.size.h - h).abs() <= 1e-6);
            prop_assert!((back.ry - ry).abs() <= 1e-6 && (back.truncation - trunc).abs() <= 1e-6);
            prop_assert_eq!(write_labels(&[back]), text);
        }
    }
}
