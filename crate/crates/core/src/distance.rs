//! Geometry-based distance decomposition `Z = f * H * h_rec`.
//!
//! `H` is the physical height of the object in meters and `h_rec = 1 / h`
//! the reciprocal of its projected visual height in pixels. The stored factor
//! is `h_rec` itself, the quantity that gets regressed.

use serde::{Deserialize, Serialize};

use crate::camera::{backproject, focal_length, CameraPoint, Keypoint, ProjectionMatrix};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistanceFactors {
    /// Physical height, meters.
    #[serde(rename = "H")]
    pub height: f64,
    /// Reciprocal visual height, 1/pixels.
    pub h_rec: f64,
}

fn positive(name: &'static str, value: f64) -> Result<f64> {
    if value > 0.0 && value.is_finite() {
        Ok(value)
    } else {
        Err(Error::InvalidFactor { name, value })
    }
}

impl DistanceFactors {
    pub fn new(height: f64, h_rec: f64) -> Result<Self> {
        Ok(Self {
            height: positive("H", height)?,
            h_rec: positive("h_rec", h_rec)?,
        })
    }

    /// Visual height `h = 1 / h_rec` in pixels.
    pub fn visual_height(&self) -> f64 {
        1.0 / self.h_rec
    }
}

/// `Z = f * H * h_rec`.
pub fn recover_distance(f: f64, factors: &DistanceFactors) -> Result<f64> {
    let f = positive("f", f)?;
    let height = positive("H", factors.height)?;
    let h_rec = positive("h_rec", factors.h_rec)?;
    Ok(f * height * h_rec)
}

/// Inverse of [`recover_distance`]: `h_rec = Z / (f * H)`.
pub fn decompose_distance(f: f64, height: f64, z: f64) -> Result<DistanceFactors> {
    let f = positive("f", f)?;
    let height = positive("H", height)?;
    let z = positive("Z", z)?;
    DistanceFactors::new(height, z / (f * height))
}

/// Full inference path: recover `Z` from the factors with the camera's
/// vertical focal length, then backproject the projected center keypoint.
pub fn recover_center(
    p: &ProjectionMatrix,
    center: Keypoint,
    factors: &DistanceFactors,
) -> Result<CameraPoint> {
    let z = recover_distance(focal_length(p)?, factors)?;
    backproject(p, center, z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::tests::gauss_solve;
    use proptest::prelude::*;

    #[test]
    fn recover_examples() {
        let z = recover_distance(700.0, &DistanceFactors::new(1.5, 1.0 / 70.0).unwrap()).unwrap();
        assert!((z - 15.0).abs() < 1e-12);
        assert_eq!(
            recover_distance(1.0, &DistanceFactors::new(1.0, 1.0).unwrap()).unwrap(),
            1.0
        );
        let z = recover_distance(721.5, &DistanceFactors::new(1.53, 0.02).unwrap()).unwrap();
        assert!((z - 22.0779).abs() < 1e-9);
        assert!(matches!(
            recover_distance(
                0.0,
                &DistanceFactors {
                    height: 1.0,
                    h_rec: 1.0
                }
            ),
            Err(Error::InvalidFactor { name: "f", .. })
        ));
        assert!(matches!(
            recover_distance(
                1.0,
                &DistanceFactors {
                    height: 1.0,
                    h_rec: -1.0
                }
            ),
            Err(Error::InvalidFactor { name: "h_rec", .. })
        ));
    }

    #[test]
    fn decompose_examples() {
        let d = decompose_distance(700.0, 1.5, 15.0).unwrap();
        assert!((d.h_rec - 1.0 / 70.0).abs() < 1e-15);
        assert!((d.h_rec - 0.0142857).abs() < 1e-7);
        assert!((d.visual_height() - 70.0).abs() < 1e-9);
        assert!(matches!(
            decompose_distance(700.0, 1.5, 0.0),
            Err(Error::InvalidFactor { name: "Z", .. })
        ));
    }

    #[test]
    fn recover_center_examples() {
        let p = ProjectionMatrix::from_intrinsics(700.0, 700.0, 0.0, 0.0).unwrap();
        let factors = DistanceFactors::new(1.5, 1.0 / 70.0).unwrap();
        let c = recover_center(&p, Keypoint::new(0.0, 0.0), &factors).unwrap();
        assert!(c.x.abs() < 1e-12 && c.y.abs() < 1e-12 && (c.z - 15.0).abs() < 1e-12);
        let c = recover_center(&p, Keypoint::new(70.0, 0.0), &factors).unwrap();
        assert!((c.x - 1.5).abs() < 1e-12 && (c.z - 15.0).abs() < 1e-12);
    }

    #[test]
    fn recover_center_kitti_matches_gauss_oracle() {
        let p = ProjectionMatrix::new([
            [721.5377, 0.0, 609.5593, 44.85728],
            [0.0, 721.5377, 172.854, 0.2163791],
            [0.0, 0.0, 1.0, 0.002745884],
        ])
        .unwrap();
        let factors = DistanceFactors::new(1.52, 0.031).unwrap();
        let kpt = Keypoint::new(700.25, 190.5);
        let z = 721.5377 * 1.52 * 0.031;
        let m = p.rows();
        let a = [
            [m[0][0], m[0][1], m[0][2]],
            [m[1][0], m[1][1], m[1][2]],
            [m[2][0], m[2][1], m[2][2]],
        ];
        let b = [kpt.u * z - m[0][3], kpt.v * z - m[1][3], z - m[2][3]];
        let want = gauss_solve(a, b);
        let got = recover_center(&p, kpt, &factors).unwrap();
        assert!((got.x - want[0]).abs() < 1e-10);
        assert!((got.y - want[1]).abs() < 1e-10);
        assert!((got.z - want[2]).abs() < 1e-10);
    }

    #[test]
    fn focal_decoupling() {
        // same object seen by two cameras: h_rec scales by f1/f2, Z is unchanged
        let (f1, f2, height, z) = (721.5, 1266.4, 1.55, 33.0);
        let d1 = decompose_distance(f1, height, z).unwrap();
        let d2 = decompose_distance(f2, height, z).unwrap();
        assert!((d2.h_rec / d1.h_rec - f1 / f2).abs() < 1e-12);
        let z1 = recover_distance(f1, &d1).unwrap();
        let z2 = recover_distance(f2, &d2).unwrap();
        assert!((z1 - z).abs() < 1e-12 && (z2 - z).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn round_trip(f in 100.0..2000.0f64, h in 0.5..4.0f64, z in 1.0..200.0f64) {
            let d = decompose_distance(f, h, z).unwrap();
            let back = recover_distance(f, &d).unwrap();
            prop_assert!(((back - z) / z).abs() < 1e-12);
        }

        #[test]
        fn monotone(f in 100.0..2000.0f64, h in 0.5..4.0f64, hr in 1e-3..0.2f64, bump in 1.0001..2.0f64) {
            let base = recover_distance(f, &DistanceFactors::new(h, hr).unwrap()).unwrap();
            prop_assert!(recover_distance(f * bump, &DistanceFactors::new(h, hr).unwrap()).unwrap() > base);
            prop_assert!(recover_distance(f, &DistanceFactors::new(h * bump, hr).unwrap()).unwrap() > base);
            prop_assert!(recover_distance(f, &DistanceFactors::new(h, hr * bump).unwrap()).unwrap() > base);
        }
    }
}
