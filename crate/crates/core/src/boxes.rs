//! 3D box geometry: corners, the projected central line, visual height and
//! yaw encodings.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::camera::{focal_length, project_to_pixel, CameraPoint, ProjectionMatrix};
use crate::error::{Error, Result};

/// Physical width, height and length in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicalSize {
    pub w: f64,
    pub h: f64,
    pub l: f64,
}

impl PhysicalSize {
    pub fn new(w: f64, h: f64, l: f64) -> Result<Self> {
        for (name, value) in [("w", w), ("h", h), ("l", l)] {
            if !(value > 0.0 && value.is_finite()) {
                return Err(Error::InvalidSize { name, value });
            }
        }
        Ok(Self { w, h, l })
    }
}

/// `(sin θ, cos θ)` pair as regressed by the attribute head.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct YawEncoding {
    pub sin_t: f64,
    pub cos_t: f64,
}

impl YawEncoding {
    /// Rescales to unit norm.
    pub fn normalize(self) -> Result<Self> {
        let n = self.sin_t.hypot(self.cos_t);
        if n == 0.0 || !n.is_finite() {
            return Err(Error::DegenerateEncoding);
        }
        Ok(Self {
            sin_t: self.sin_t / n,
            cos_t: self.cos_t / n,
        })
    }
}

/// Oriented 3D box. `center` is the geometric center of the cuboid (not the
/// bottom face), `ry` the yaw about the camera y axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Box3D {
    pub center: CameraPoint,
    pub size: PhysicalSize,
    pub ry: f64,
}

/// Axis-aligned image box `(x1, y1)` top-left, `(x2, y2)` bottom-right.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Box2D {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl Box2D {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        let finite = [x1, y1, x2, y2].iter().all(|v| v.is_finite());
        if !finite || x1 >= x2 || y1 >= y2 {
            return Err(Error::InvalidBox2D { x1, y1, x2, y2 });
        }
        Ok(Self { x1, y1, x2, y2 })
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }
}

/// Wraps an angle into `(-π, π]`.
pub fn wrap_angle(theta: f64) -> f64 {
    let mut a = theta.rem_euclid(2.0 * PI);
    if a > PI {
        a -= 2.0 * PI;
    }
    // rem_euclid can round up to exactly 2π
    if a <= -PI {
        a += 2.0 * PI;
    }
    a
}

/// Local corner offsets as multiples of `(L/2, H/2, W/2)`.
///
/// Index 0 is front-top-left; 0..4 walk around the top face (y = -H/2,
/// camera y points down) and 4..8 are the bottom-face corners in the same
/// order, so corner `i + 4` lies directly below corner `i`.
pub const CORNER_SIGNS: [[f64; 3]; 8] = [
    [1.0, -1.0, 1.0],
    [1.0, -1.0, -1.0],
    [-1.0, -1.0, -1.0],
    [-1.0, -1.0, 1.0],
    [1.0, 1.0, 1.0],
    [1.0, 1.0, -1.0],
    [-1.0, 1.0, -1.0],
    [-1.0, 1.0, 1.0],
];

/// Rotates a local offset about the y axis by `ry`:
/// `R = [[cos, 0, sin], [0, 1, 0], [-sin, 0, cos]]`.
pub fn rotate_y(ry: f64, local: [f64; 3]) -> [f64; 3] {
    let (s, c) = ry.sin_cos();
    [
        c * local[0] + s * local[2],
        local[1],
        -s * local[0] + c * local[2],
    ]
}

pub fn corners_3d(b: &Box3D) -> [CameraPoint; 8] {
    let half = [b.size.l / 2.0, b.size.h / 2.0, b.size.w / 2.0];
    CORNER_SIGNS.map(|s| {
        let r = rotate_y(b.ry, [s[0] * half[0], s[1] * half[1], s[2] * half[2]]);
        CameraPoint::new(b.center.x + r[0], b.center.y + r[1], b.center.z + r[2])
    })
}

/// Endpoints of the vertical line through the box center: `(top, bottom)`.
pub fn pcl_endpoints(b: &Box3D) -> (CameraPoint, CameraPoint) {
    let c = b.center;
    let half = b.size.h / 2.0;
    (
        CameraPoint::new(c.x, c.y - half, c.z),
        CameraPoint::new(c.x, c.y + half, c.z),
    )
}

/// Pixel length of the projected central line.
pub fn visual_height(p: &ProjectionMatrix, b: &Box3D) -> Result<f64> {
    let (top, bottom) = pcl_endpoints(b);
    let (kt, _) = project_to_pixel(p, top)?;
    let (kb, _) = project_to_pixel(p, bottom)?;
    Ok(kb.v - kt.v)
}

/// `f * H / Z`, the closed form of [`visual_height`] for cameras without a
/// translation column.
pub fn visual_height_closed_form(p: &ProjectionMatrix, b: &Box3D) -> Result<f64> {
    if !(b.center.z > 0.0) {
        return Err(Error::NonPositiveDepth(b.center.z));
    }
    Ok(focal_length(p)? * b.size.h / b.center.z)
}

pub fn yaw_encode(theta: f64) -> YawEncoding {
    let (sin_t, cos_t) = theta.sin_cos();
    YawEncoding { sin_t, cos_t }
}

/// `atan2(sin, cos)`; scale-invariant, so unnormalized encodings are fine.
pub fn yaw_decode(a: YawEncoding) -> Result<f64> {
    if a.sin_t == 0.0 && a.cos_t == 0.0 {
        return Err(Error::DegenerateEncoding);
    }
    // atan2 returns -π for (-0.0, negative); fold into (-π, π]
    Ok(wrap_angle(a.sin_t.atan2(a.cos_t)))
}

/// Observation angle to egocentric yaw: `ry = wrap(alpha + atan2(x, z))`.
pub fn alpha_to_ry(alpha: f64, x: f64, z: f64) -> Result<f64> {
    if !(z > 0.0) {
        return Err(Error::NonPositiveDepth(z));
    }
    Ok(wrap_angle(alpha + x.atan2(z)))
}

pub fn ry_to_alpha(ry: f64, x: f64, z: f64) -> Result<f64> {
    if !(z > 0.0) {
        return Err(Error::NonPositiveDepth(z));
    }
    Ok(wrap_angle(ry - x.atan2(z)))
}
