//! Browser demo. Each export has a plain-Rust twin that the tests call.

use wasm_bindgen::prelude::*;

use mono3d::eval::{bev_iou, bev_polygon, clip_convex, polygon_area};
use mono3d::losses::uncertainty_l1_loss;
use mono3d::simulate::{self_consistency_experiment, ErrorModel, SceneDistribution};
use mono3d::{Box3D, CameraPoint, PhysicalSize};

/// Footprint in the ground plane: center `(x, z)`, width, length, yaw.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Footprint {
    pub x: f64,
    pub z: f64,
    pub w: f64,
    pub l: f64,
    pub ry: f64,
}

impl Footprint {
    fn to_box(self) -> Result<Box3D, String> {
        Ok(Box3D {
            center: CameraPoint::new(self.x, 0.0, self.z),
            size: PhysicalSize::new(self.w, 1.0, self.l).map_err(|e| e.to_string())?,
            ry: self.ry,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Overlap {
    pub iou: f64,
    pub intersection_area: f64,
    pub a: Vec<[f64; 2]>,
    pub b: Vec<[f64; 2]>,
    pub intersection: Vec<[f64; 2]>,
}

pub fn overlap(a: Footprint, b: Footprint) -> Result<Overlap, String> {
    let (ba, bb) = (a.to_box()?, b.to_box()?);
    let (pa, pb) = (bev_polygon(&ba), bev_polygon(&bb));
    let intersection = clip_convex(&pa, &pb);
    Ok(Overlap {
        iou: bev_iou(&ba, &bb),
        intersection_area: polygon_area(&intersection),
        a: pa,
        b: pb,
        intersection,
    })
}

/// Loss `|r| / σ + λ ln σ` sampled on a log grid, and its minimizer `|r| / λ`.
pub fn loss_curve(
    residual: f64,
    lambda: f64,
    sigma_lo: f64,
    sigma_hi: f64,
    n: usize,
) -> Result<(Vec<[f64; 2]>, f64), String> {
    if !(sigma_lo > 0.0 && sigma_hi > sigma_lo && n >= 2 && lambda > 0.0) {
        return Err("need 0 < sigma_lo < sigma_hi, n >= 2 and lambda > 0".into());
    }
    let ratio = (sigma_hi / sigma_lo).ln();
    let points = (0..n)
        .map(|i| {
            let s = sigma_lo * (ratio * i as f64 / (n - 1) as f64).exp();
            uncertainty_l1_loss(residual, 0.0, s, lambda).map(|v| [s, v])
        })
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| e.to_string())?;
    Ok((points, residual.abs() / lambda))
}

/// `[rmse_correlated, rmse_independent, predicted_correlated, predicted_independent, pcc]`.
pub fn self_consistency(
    rho: f64,
    std_h: f64,
    std_hrec: f64,
    n: usize,
    seed: u64,
) -> Result<[f64; 5], String> {
    let d = SceneDistribution {
        seed,
        ..SceneDistribution::default()
    };
    let em = ErrorModel {
        std_h,
        std_hrec,
        rho,
    };
    let r = self_consistency_experiment(&d, &em, n).map_err(|e| e.to_string())?;
    Ok([
        r.rmse_correlated,
        r.rmse_independent,
        r.predicted_correlated,
        r.predicted_independent,
        r.pcc,
    ])
}

fn flat(poly: &[[f64; 2]]) -> Vec<f64> {
    poly.iter().flat_map(|p| [p[0], p[1]]).collect()
}

/// BEV overlap of two footprints as
/// `[iou, area, na, nb, ni, a.., b.., intersection..]` with polygons as
/// flattened `(x, z)` pairs.
#[wasm_bindgen]
#[allow(clippy::too_many_arguments)]
pub fn bev_overlap(
    ax: f64,
    az: f64,
    aw: f64,
    al: f64,
    ary: f64,
    bx: f64,
    bz: f64,
    bw: f64,
    bl: f64,
    bry: f64,
) -> Result<Vec<f64>, JsValue> {
    let o = overlap(
        Footprint {
            x: ax,
            z: az,
            w: aw,
            l: al,
            ry: ary,
        },
        Footprint {
            x: bx,
            z: bz,
            w: bw,
            l: bl,
            ry: bry,
        },
    )
    .map_err(|e| JsValue::from_str(&e))?;
    let mut out = vec![
        o.iou,
        o.intersection_area,
        o.a.len() as f64,
        o.b.len() as f64,
        o.intersection.len() as f64,
    ];
    out.extend(flat(&o.a));
    out.extend(flat(&o.b));
    out.extend(flat(&o.intersection));
    Ok(out)
}

/// `[sigma_star, s0, l0, s1, l1, ...]`.
#[wasm_bindgen]
pub fn uncertainty_loss_curve(
    residual: f64,
    lambda: f64,
    sigma_lo: f64,
    sigma_hi: f64,
    n: usize,
) -> Result<Vec<f64>, JsValue> {
    let (points, best) =
        loss_curve(residual, lambda, sigma_lo, sigma_hi, n).map_err(|e| JsValue::from_str(&e))?;
    let mut out = vec![best];
    out.extend(flat(&points));
    Ok(out)
}

#[wasm_bindgen]
pub fn factor_error_experiment(
    rho: f64,
    std_h: f64,
    std_hrec: f64,
    n: usize,
    seed: u64,
) -> Result<Vec<f64>, JsValue> {
    self_consistency(rho, std_h, std_hrec, n, seed)
        .map(|r| r.to_vec())
        .map_err(|e| JsValue::from_str(&e))
}
