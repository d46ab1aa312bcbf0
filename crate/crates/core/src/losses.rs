//! Regression losses: the uncertainty-aware L1 used for `H` and `h_rec`,
//! plain L1 for size, yaw and keypoints, keypoint normalization, the weighted
//! total, and a finite-difference gradient checker.

use serde::{Deserialize, Serialize};

use crate::boxes::Box2D;
use crate::camera::Keypoint;
use crate::error::{Error, Result};

/// A regressed value with its learned uncertainty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UncertainScalar {
    pub value: f64,
    pub sigma: f64,
}

impl UncertainScalar {
    pub fn new(value: f64, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0) {
            return Err(Error::NonPositiveSigma(sigma));
        }
        Ok(Self { value, sigma })
    }
}

/// Weights of the overall training loss. `lambda_h` and `lambda_hrec`
/// balance the `log σ` terms inside the two uncertainty losses; the
/// uncertainty losses themselves enter the total unweighted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_cls: f64,
    pub lambda_bbox: f64,
    pub lambda_size: f64,
    pub lambda_yaw: f64,
    pub lambda_kpt: f64,
    pub lambda_h: f64,
    pub lambda_hrec: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_cls: 1.0,
            lambda_bbox: 1.0,
            lambda_size: 3.0,
            lambda_yaw: 5.0,
            lambda_kpt: 5.0,
            lambda_h: 0.25,
            lambda_hrec: 1.0,
        }
    }
}

/// Keypoint expressed relative to its proposal box. Not restricted to
/// `[0, 1]`: centers of truncated objects fall outside the proposal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizedKeypoint {
    pub t1: f64,
    pub t2: f64,
}

fn check_sigma(sigma: f64) -> Result<()> {
    if sigma > 0.0 {
        Ok(())
    } else {
        Err(Error::NonPositiveSigma(sigma))
    }
}

/// `|pred - gt| / σ + λ ln σ`.
pub fn uncertainty_l1_loss(pred: f64, gt: f64, sigma: f64, lambda: f64) -> Result<f64> {
    check_sigma(sigma)?;
    Ok((pred - gt).abs() / sigma + lambda * sigma.ln())
}

/// Analytic gradient of [`uncertainty_l1_loss`] w.r.t. `(pred, σ)`.
///
/// At `pred == gt` the subgradient 0 is used for `d_pred`.
pub fn uncertainty_l1_grad(pred: f64, gt: f64, sigma: f64, lambda: f64) -> Result<(f64, f64)> {
    check_sigma(sigma)?;
    let r = pred - gt;
    let d_pred = if r == 0.0 { 0.0 } else { r.signum() / sigma };
    let d_sigma = -r.abs() / (sigma * sigma) + lambda / sigma;
    Ok((d_pred, d_sigma))
}

/// Mean absolute error over components.
pub fn l1_vector_loss(pred: &[f64], gt: &[f64]) -> Result<f64> {
    if pred.len() != gt.len() {
        return Err(Error::LengthMismatch {
            left: pred.len(),
            right: gt.len(),
        });
    }
    if pred.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = pred.iter().zip(gt).map(|(a, b)| (a - b).abs()).sum();
    Ok(sum / pred.len() as f64)
}

fn proposal_extent(proposal: &Box2D) -> Result<(f64, f64)> {
    let (w, h) = (proposal.width(), proposal.height());
    if !(w > 0.0 && h > 0.0) {
        return Err(Error::DegenerateProposal);
    }
    Ok((w, h))
}

pub fn normalize_keypoint(proposal: &Box2D, kpt: Keypoint) -> Result<NormalizedKeypoint> {
    let (w, h) = proposal_extent(proposal)?;
    Ok(NormalizedKeypoint {
        t1: (kpt.u - proposal.x1) / w,
        t2: (kpt.v - proposal.y1) / h,
    })
}

pub fn denormalize_keypoint(proposal: &Box2D, t: NormalizedKeypoint) -> Result<Keypoint> {
    let (w, h) = proposal_extent(proposal)?;
    Ok(Keypoint::new(
        proposal.x1 + t.t1 * w,
        proposal.y1 + t.t2 * h,
    ))
}

/// Per-term losses fed into [`total_loss`]. Classification and 2D box
/// losses come from the detector and are taken as opaque numbers.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub cls: f64,
    pub bbox: f64,
    pub size: f64,
    pub yaw: f64,
    pub kpt: f64,
    pub h: f64,
    pub hrec: f64,
}

pub fn total_loss(parts: &LossParts, w: &LossWeights) -> f64 {
    w.lambda_cls * parts.cls
        + w.lambda_bbox * parts.bbox
        + w.lambda_size * parts.size
        + w.lambda_yaw * parts.yaw
        + w.lambda_kpt * parts.kpt
        + parts.h
        + parts.hrec
}

/// A scalar function with an analytic gradient, for [`finite_difference_check`].
pub trait Differentiable {
    fn value(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64]) -> Vec<f64>;

    /// Distance from `x` to the nearest point where the function is not
    /// differentiable (or leaves its domain). `None` means smooth everywhere.
    fn kink_distance(&self, _x: &[f64]) -> Option<f64> {
        None
    }
}

/// [`uncertainty_l1_loss`] as a function of `[pred, σ]` with fixed target
/// and λ.
#[derive(Debug, Clone, Copy)]
pub struct UncertaintyL1 {
    pub gt: f64,
    pub lambda: f64,
}

impl Differentiable for UncertaintyL1 {
    fn value(&self, x: &[f64]) -> f64 {
        (x[0] - self.gt).abs() / x[1] + self.lambda * x[1].ln()
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        match uncertainty_l1_grad(x[0], self.gt, x[1], self.lambda) {
            Ok((dp, ds)) => vec![dp, ds],
            Err(_) => vec![f64::NAN, f64::NAN],
        }
    }

    fn kink_distance(&self, x: &[f64]) -> Option<f64> {
        Some((x[0] - self.gt).abs().min(x[1]))
    }
}

/// Compares the analytic gradient against central differences and returns
/// the worst component error `|g - g_fd| / max(|g|, |g_fd|, 1)`.
///
/// Each component uses the step `step * max(|x_i|, 1)`. Points closer than
/// ten steps to a kink are rejected.
pub fn finite_difference_check(f: &dyn Differentiable, point: &[f64], step: f64) -> Result<f64> {
    if !(step > 0.0) {
        return Err(Error::PreconditionViolated(format!(
            "step {step} is not positive"
        )));
    }
    let max_step = point
        .iter()
        .map(|x| step * x.abs().max(1.0))
        .fold(0.0_f64, f64::max);
    if let Some(d) = f.kink_distance(point) {
        if d <= 10.0 * max_step {
            return Err(Error::PreconditionViolated(format!(
                "point is {d:e} from a non-differentiable point (step {max_step:e})"
            )));
        }
    }
    let analytic = f.gradient(point);
    if analytic.len() != point.len() {
        return Err(Error::LengthMismatch {
            left: analytic.len(),
            right: point.len(),
        });
    }
    let mut x = point.to_vec();
    let mut worst = 0.0_f64;
    for i in 0..point.len() {
        let h = step * point[i].abs().max(1.0);
        x[i] = point[i] + h;
        let up = f.value(&x);
        x[i] = point[i] - h;
        let down = f.value(&x);
        x[i] = point[i];
        let numeric = (up - down) / (2.0 * h);
        let denom = analytic[i].abs().max(numeric.abs()).max(1.0);
        let err = (analytic[i] - numeric).abs() / denom;
        if !err.is_finite() {
            return Ok(f64::INFINITY);
        }
        worst = worst.max(err);
    }
    Ok(worst)
}
