//! Pinhole camera model.
//!
//! A [`ProjectionMatrix`] maps homogeneous camera points (meters, x right,
//! y down, z forward) to homogeneous pixels. Matrices are normalized at
//! construction so that entry (2,2) equals 1, which makes the homogeneous
//! depth component of a projected point equal to its metric depth whenever
//! the depth row is `[0, 0, 1, 0]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A point in the camera frame, meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraPoint {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl CameraPoint {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }
}

/// A pixel location on the image plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Keypoint {
    pub u: f64,
    pub v: f64,
}

impl Keypoint {
    pub const fn new(u: f64, v: f64) -> Self {
        Self { u, v }
    }
}

/// 3x4 camera projection matrix, canonically normalized so that entry
/// (2,2) is 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectionMatrix {
    rows: [[f64; 4]; 3],
}

impl ProjectionMatrix {
    /// Builds a projection matrix and applies canonical normalization.
    ///
    /// The whole matrix is divided by entry (2,2); projection is invariant
    /// to that scale. Fails if (2,2) is zero, any entry is non-finite, or a
    /// focal entry is not strictly positive after normalization.
    pub fn new(rows: [[f64; 4]; 3]) -> Result<Self> {
        if rows.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidProjection("non-finite entry".into()));
        }
        let scale = rows[2][2];
        if scale == 0.0 {
            return Err(Error::InvalidProjection("entry (2,2) is zero".into()));
        }
        let mut normalized = rows;
        for row in normalized.iter_mut() {
            for v in row.iter_mut() {
                *v /= scale;
            }
        }
        for (i, name) in [(0, "fx"), (1, "fy")] {
            if normalized[i][i] <= 0.0 {
                return Err(Error::InvalidProjection(format!(
                    "{name} = {} is not positive",
                    normalized[i][i]
                )));
            }
        }
        Ok(Self { rows: normalized })
    }

    /// Builds `[[fx,0,cx,0],[0,fy,cy,0],[0,0,1,0]]`.
    pub fn from_intrinsics(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self> {
        Self::new([[fx, 0.0, cx, 0.0], [0.0, fy, cy, 0.0], [0.0, 0.0, 1.0, 0.0]])
    }

    /// Row-major entries after normalization.
    pub fn rows(&self) -> &[[f64; 4]; 3] {
        &self.rows
    }

    pub fn principal_point(&self) -> Keypoint {
        Keypoint::new(self.rows[0][2], self.rows[1][2])
    }

    /// Applies `P * [x, y, z, 1]^T`.
    pub fn apply(&self, pt: CameraPoint) -> [f64; 3] {
        let h = [pt.x, pt.y, pt.z, 1.0];
        let mut out = [0.0; 3];
        for (o, row) in out.iter_mut().zip(&self.rows) {
            *o = row.iter().zip(&h).map(|(a, b)| a * b).sum();
        }
        out
    }

    /// Inverse of the left 3x3 block by cofactors.
    fn left_inverse(&self) -> Result<[[f64; 3]; 3]> {
        let m = &self.rows;
        let c00 = m[1][1] * m[2][2] - m[1][2] * m[2][1];
        let c01 = m[1][2] * m[2][0] - m[1][0] * m[2][2];
        let c02 = m[1][0] * m[2][1] - m[1][1] * m[2][0];
        let det = m[0][0] * c00 + m[0][1] * c01 + m[0][2] * c02;
        let norm = m
            .iter()
            .flat_map(|r| r[..3].iter())
            .fold(0.0_f64, |acc, v| acc.max(v.abs()));
        if det == 0.0 || !det.is_finite() || det.abs() <= 1e-14 * norm.powi(3) {
            return Err(Error::SingularProjection);
        }
        let inv_det = 1.0 / det;
        Ok([
            [
                c00 * inv_det,
                (m[0][2] * m[2][1] - m[0][1] * m[2][2]) * inv_det,
                (m[0][1] * m[1][2] - m[0][2] * m[1][1]) * inv_det,
            ],
            [
                c01 * inv_det,
                (m[0][0] * m[2][2] - m[0][2] * m[2][0]) * inv_det,
                (m[0][2] * m[1][0] - m[0][0] * m[1][2]) * inv_det,
            ],
            [
                c02 * inv_det,
                (m[0][1] * m[2][0] - m[0][0] * m[2][1]) * inv_det,
                (m[0][0] * m[1][1] - m[0][1] * m[1][0]) * inv_det,
            ],
        ])
    }
}

/// Projects a camera point to pixels. Returns the keypoint and the
/// homogeneous depth `w`.
pub fn project_to_pixel(p: &ProjectionMatrix, pt: CameraPoint) -> Result<(Keypoint, f64)> {
    let [a, b, w] = p.apply(pt);
    if !(w > 0.0) {
        return Err(Error::NonPositiveDepth(w));
    }
    Ok((Keypoint::new(a / w, b / w), w))
}

/// Recovers the camera point whose projection is `kpt` at homogeneous depth
/// `depth`. Solves the full 3x4 system, so a non-zero fourth column (stereo
/// baseline) is honored.
pub fn backproject(p: &ProjectionMatrix, kpt: Keypoint, depth: f64) -> Result<CameraPoint> {
    if !(depth > 0.0) {
        return Err(Error::NonPositiveDepth(depth));
    }
    let inv = p.left_inverse()?;
    let m = p.rows();
    let rhs = [
        kpt.u * depth - m[0][3],
        kpt.v * depth - m[1][3],
        depth - m[2][3],
    ];
    let solve = |row: &[f64; 3]| row[0] * rhs[0] + row[1] * rhs[1] + row[2] * rhs[2];
    Ok(CameraPoint::new(
        solve(&inv[0]),
        solve(&inv[1]),
        solve(&inv[2]),
    ))
}

/// The vertical focal length `fy`, entry (1,1) of the normalized matrix.
///
/// Visual height is a vertical extent, so `fy` is the focal length used in
/// `Z = f * H * h_rec`.
pub fn focal_length(p: &ProjectionMatrix) -> Result<f64> {
    let f = p.rows[1][1];
    if f > 0.0 {
        Ok(f)
    } else {
        Err(Error::NonPositiveFocal(f))
    }
}
