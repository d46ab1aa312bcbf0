//! Monte-Carlo scenes and numerical experiments around the distance
//! decomposition.
//!
//! Objects of different physical heights share one distance distribution,
//! so `H * E[h_rec] = E[Z] / f` holds for every height class. The
//! experiments here check that identity, compare correlated against
//! independent factor errors, fit the uncertainty loss by gradient descent,
//! and bin uncertainties by distance.
//!
//! All randomness comes from a seeded ChaCha8 stream; identical seeds give
//! bit-identical output within a build.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::boxes::{corners_3d, ry_to_alpha, Box2D, Box3D, PhysicalSize};
use crate::camera::{project_to_pixel, CameraPoint, ProjectionMatrix};
use crate::distance::{recover_distance, DistanceFactors};
use crate::error::{Error, Result};
use crate::eval::DistanceBin;
use crate::kitti_io::ObjectLabel;

/// Lower clamp on σ in [`fit_uncertainty`].
pub const SIGMA_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ZDistribution {
    Uniform { lo: f64, hi: f64 },
}

impl ZDistribution {
    fn sample(&self, rng: &mut impl Rng) -> f64 {
        match *self {
            ZDistribution::Uniform { lo, hi } => rng.random_range(lo..hi),
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            ZDistribution::Uniform { lo, hi } => (lo + hi) / 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeightClass {
    pub height: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneDistribution {
    pub z_dist: ZDistribution,
    pub height_classes: Vec<HeightClass>,
    pub focal: f64,
    pub seed: u64,
}

impl Default for SceneDistribution {
    fn default() -> Self {
        Self {
            z_dist: ZDistribution::Uniform { lo: 10.0, hi: 50.0 },
            height_classes: vec![
                HeightClass {
                    height: 1.5,
                    weight: 0.5,
                },
                HeightClass {
                    height: 3.0,
                    weight: 0.5,
                },
            ],
            focal: 700.0,
            seed: 0,
        }
    }
}

impl SceneDistribution {
    pub fn validate(&self) -> Result<()> {
        let ZDistribution::Uniform { lo, hi } = self.z_dist;
        if !(lo > 0.0 && hi > lo && hi.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "bad distance range [{lo}, {hi})"
            )));
        }
        if self.height_classes.is_empty() {
            return Err(Error::InvalidInput("no height classes".into()));
        }
        if self
            .height_classes
            .iter()
            .any(|c| !(c.height > 0.0 && c.weight > 0.0))
        {
            return Err(Error::InvalidInput(
                "heights and weights must be positive".into(),
            ));
        }
        let total: f64 = self.height_classes.iter().map(|c| c.weight).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidInput(format!(
                "class weights sum to {total}, not 1"
            )));
        }
        if !(self.focal > 0.0) {
            return Err(Error::InvalidFactor {
                name: "f",
                value: self.focal,
            });
        }
        Ok(())
    }
}

/// One simulated object.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneSample {
    pub class: usize,
    pub height: f64,
    pub z: f64,
    pub h_rec: f64,
}

/// Draws `n` objects: class by weight, then `Z` from the shared
/// distribution, then `h_rec = Z / (f H)`. The stored `z` is recomputed as
/// `f * H * h_rec` so the decomposition identity holds bit-exactly.
pub fn sample_scene(d: &SceneDistribution, n: usize) -> Result<Vec<SceneSample>> {
    d.validate()?;
    if n == 0 {
        return Err(Error::InsufficientSamples("n must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(d.seed);
    let weights = WeightedIndex::new(d.height_classes.iter().map(|c| c.weight))
        .map_err(|e| Error::InvalidInput(e.to_string()))?;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let class = weights.sample(&mut rng);
        let height = d.height_classes[class].height;
        let z0 = d.z_dist.sample(&mut rng);
        let h_rec = z0 / (d.focal * height);
        let z = recover_distance(d.focal, &DistanceFactors { height, h_rec })?;
        out.push(SceneSample {
            class,
            height,
            z,
            h_rec,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassConsistency {
    pub class: usize,
    pub height: f64,
    pub count: usize,
    pub mean_h_rec: f64,
    /// `H * mean(h_rec)`.
    pub product: f64,
    /// `|H * mean(h_rec) - mean(Z) / f|`.
    pub residual: f64,
    /// Standard error of the residual under the sampling model.
    pub standard_error: f64,
    pub within_bound: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioCheck {
    pub class_a: usize,
    pub class_b: usize,
    /// `H_b / H_a`, the predicted `E[h_rec | a] / E[h_rec | b]`.
    pub expected: f64,
    pub observed: f64,
    /// Three-sigma half width of the observed ratio.
    pub ci_half_width: f64,
    pub within_ci: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub n: usize,
    pub mean_z: f64,
    /// `mean(Z) / f`, the common value of `H * E[h_rec]`.
    pub target: f64,
    pub classes: Vec<ClassConsistency>,
    pub ratios: Vec<RatioCheck>,
    pub notice: Option<String>,
}

impl ConsistencyReport {
    pub fn passed(&self) -> bool {
        self.classes.iter().all(|c| c.within_bound) && self.ratios.iter().all(|r| r.within_ci)
    }
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64, usize) {
    let (n, sum) = values
        .clone()
        .fold((0usize, 0.0), |(n, s), v| (n + 1, s + v));
    let mean = sum / n as f64;
    let ss: f64 = values.map(|v| (v - mean).powi(2)).sum();
    let std = if n > 1 {
        (ss / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    (mean, std, n)
}

/// Checks `H * E[h_rec] = E[Z] / f` for each height class and the ratio of
/// `E[h_rec]` between every pair of classes.
///
/// The residual of a class equals `|mean(Z | class) - mean(Z)| / f`; its
/// standard error is `std(Z) / f * sqrt(1/n_c - 1/n)` because the class is
/// a subsample of the whole.
pub fn expectation_consistency_check(samples: &[SceneSample], f: f64) -> Result<ConsistencyReport> {
    if samples.len() < 2 {
        return Err(Error::InsufficientSamples(format!(
            "{} samples",
            samples.len()
        )));
    }
    if !(f > 0.0) {
        return Err(Error::InvalidFactor {
            name: "f",
            value: f,
        });
    }
    let (mean_z, std_z, n) = mean_std(samples.iter().map(|s| s.z));
    let target = mean_z / f;
    let mut class_ids: Vec<usize> = samples.iter().map(|s| s.class).collect();
    class_ids.sort_unstable();
    class_ids.dedup();

    let mut classes = Vec::new();
    let mut stats = Vec::new();
    for &c in &class_ids {
        let members = samples.iter().filter(|s| s.class == c);
        let height = members.clone().next().map(|s| s.height).unwrap_or(f64::NAN);
        let (mean_h_rec, std_h_rec, count) = mean_std(members.map(|s| s.h_rec));
        if count < 2 {
            return Err(Error::InsufficientSamples(format!(
                "class {c} has {count} sample"
            )));
        }
        let product = height * mean_h_rec;
        let residual = (product - target).abs();
        let standard_error = std_z / f * (1.0 / count as f64 - 1.0 / n as f64).max(0.0).sqrt();
        // relative slack covers floating-point summation error
        let within_bound = residual <= 3.0 * standard_error + 1e-12 * target;
        classes.push(ClassConsistency {
            class: c,
            height,
            count,
            mean_h_rec,
            product,
            residual,
            standard_error,
            within_bound,
        });
        stats.push((mean_h_rec, std_h_rec / (count as f64).sqrt()));
    }

    let mut ratios = Vec::new();
    for i in 0..classes.len() {
        for j in i + 1..classes.len() {
            let (ma, sa) = stats[i];
            let (mb, sb) = stats[j];
            let observed = ma / mb;
            let rel = ((sa / ma).powi(2) + (sb / mb).powi(2)).sqrt();
            let ci_half_width = 3.0 * observed * rel;
            let expected = classes[j].height / classes[i].height;
            ratios.push(RatioCheck {
                class_a: classes[i].class,
                class_b: classes[j].class,
                expected,
                observed,
                ci_half_width,
                within_ci: (observed - expected).abs() <= ci_half_width,
            });
        }
    }
    let notice = (classes.len() < 2)
        .then(|| "single height class: cross-class constancy check skipped".to_string());
    Ok(ConsistencyReport {
        n,
        mean_z,
        target,
        classes,
        ratios,
        notice,
    })
}

/// Relative Gaussian errors of the two distance factors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorModel {
    pub std_h: f64,
    pub std_hrec: f64,
    pub rho: f64,
}

impl ErrorModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.std_h >= 0.0 && self.std_hrec >= 0.0) {
            return Err(Error::InvalidInput(
                "standard deviations must be non-negative".into(),
            ));
        }
        if !(self.rho.abs() <= 1.0) {
            return Err(Error::InvalidInput(format!(
                "rho = {} outside [-1, 1]",
                self.rho
            )));
        }
        Ok(())
    }

    /// First-order relative variance of the recovered distance:
    /// `σ_H² + σ_h² + 2 ρ σ_H σ_h`.
    pub fn first_order_variance(&self, rho: f64) -> f64 {
        self.std_h.powi(2) + self.std_hrec.powi(2) + 2.0 * rho * self.std_h * self.std_hrec
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelfConsistencyResult {
    pub n: usize,
    /// Relative RMSE of recovered `Z` with correlated factor errors.
    pub rmse_correlated: f64,
    /// Relative RMSE with independent errors of equal marginal spread.
    pub rmse_independent: f64,
    pub predicted_correlated: f64,
    pub predicted_independent: f64,
    /// Empirical PCC of the correlated relative errors `(ΔH/H, Δh_rec/h_rec)`.
    pub pcc: f64,
}

/// Perturbs `H` and `h_rec` multiplicatively, once with correlation `rho`
/// (Cholesky of the 2x2 correlation matrix) and once independently, and
/// reports the relative RMSE of the recovered distance for both.
pub fn self_consistency_experiment(
    d: &SceneDistribution,
    em: &ErrorModel,
    n: usize,
) -> Result<SelfConsistencyResult> {
    em.validate()?;
    let scene = sample_scene(d, n)?;
    let mut rng = ChaCha8Rng::seed_from_u64(d.seed ^ 0x9e37_79b9_7f4a_7c15);
    let chol = (1.0 - em.rho * em.rho).max(0.0).sqrt();
    let (mut se_corr, mut se_ind) = (0.0, 0.0);
    let (mut dh, mut dhr) = (Vec::with_capacity(n), Vec::with_capacity(n));
    for s in &scene {
        let z1: f64 = rng.sample(StandardNormal);
        let z2: f64 = rng.sample(StandardNormal);
        let z3: f64 = rng.sample(StandardNormal);
        let eps_h = em.std_h * z1;
        let eps_corr = em.std_hrec * (em.rho * z1 + chol * z2);
        let eps_ind = em.std_hrec * z3;

        let h_pred = s.height * (1.0 + eps_h);
        let corr = d.focal * h_pred * s.h_rec * (1.0 + eps_corr);
        let ind = d.focal * h_pred * s.h_rec * (1.0 + eps_ind);
        se_corr += ((corr - s.z) / s.z).powi(2);
        se_ind += ((ind - s.z) / s.z).powi(2);
        dh.push(eps_h);
        dhr.push(eps_corr);
    }
    let pcc = crate::eval::pearson(&dh, &dhr).unwrap_or(0.0);
    Ok(SelfConsistencyResult {
        n,
        rmse_correlated: (se_corr / n as f64).sqrt(),
        rmse_independent: (se_ind / n as f64).sqrt(),
        predicted_correlated: em.first_order_variance(em.rho).sqrt(),
        predicted_independent: em.first_order_variance(0.0).sqrt(),
        pcc,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub lambda: f64,
    pub steps: usize,
    pub step_size: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            steps: 20_000,
            step_size: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub value: f64,
    pub sigma: f64,
    pub loss: f64,
    pub steps: usize,
}

fn mean_fit_loss(xs: &[f64], p: f64, log_sigma: f64, lambda: f64) -> f64 {
    let sigma = log_sigma.exp();
    xs.iter().map(|x| (x - p).abs()).sum::<f64>() / (xs.len() as f64 * sigma) + lambda * log_sigma
}

/// Fits a shared value and uncertainty to noisy observations by gradient
/// descent on `Σ|x_i - p| / σ + n λ ln σ` (divided by `n`).
///
/// σ is optimized as `ln σ` and clamped at [`SIGMA_FLOOR`]. The step size
/// decays as `step_size / sqrt(1 + t / 100)` so the L1 subgradient in `p`
/// settles on the median. The stationary point is `p* = median`,
/// `σ* = mean|x_i - p*| / λ`.
pub fn fit_uncertainty(samples: &[f64], opts: &FitOptions) -> Result<FitResult> {
    if samples.len() < 2 {
        return Err(Error::InsufficientSamples(format!(
            "{} samples",
            samples.len()
        )));
    }
    if !(opts.lambda > 0.0) {
        return Err(Error::InvalidInput(format!(
            "lambda {} must be positive",
            opts.lambda
        )));
    }
    if !(opts.step_size > 0.0) {
        return Err(Error::InvalidInput("step size must be positive".into()));
    }
    let n = samples.len() as f64;
    let log_floor = SIGMA_FLOOR.ln();
    let mut p = samples.iter().sum::<f64>() / n;
    let spread = samples.iter().map(|x| (x - p).abs()).sum::<f64>() / n;
    let mut s = (spread / opts.lambda).max(1.0).ln();

    let mut loss = mean_fit_loss(samples, p, s, opts.lambda);
    let mut rising = 0;
    for t in 0..opts.steps {
        let sigma = s.exp();
        let (mut sign_sum, mut abs_sum) = (0.0, 0.0);
        for x in samples {
            let r = x - p;
            if r != 0.0 {
                sign_sum += r.signum();
            }
            abs_sum += r.abs();
        }
        let grad_p = -sign_sum / (n * sigma);
        let grad_s = -abs_sum / (n * sigma) + opts.lambda;
        let eta = opts.step_size / (1.0 + t as f64 / 100.0).sqrt();
        // scale the p step by σ so its size does not depend on the residual scale
        p -= eta * sigma * grad_p;
        s = (s - eta * grad_s).max(log_floor);

        let next = mean_fit_loss(samples, p, s, opts.lambda);
        if !next.is_finite() {
            return Err(Error::Divergence { steps: t + 1 });
        }
        rising = if next > loss { rising + 1 } else { 0 };
        if rising >= 100 {
            return Err(Error::Divergence { steps: t + 1 });
        }
        loss = next;
    }
    Ok(FitResult {
        value: p,
        sigma: s.exp(),
        loss,
        steps: opts.steps,
    })
}

/// Uncertainty paired with the object distance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyRecord {
    pub z: f64,
    pub sigma_h: f64,
    pub sigma_hrec: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyBin {
    pub bin: DistanceBin,
    pub count: usize,
    pub mean_sigma_h: Option<f64>,
    pub mean_sigma_hrec: Option<f64>,
}

/// Mean `σ_H` and `σ_h_rec` per distance bin.
pub fn uncertainty_vs_distance_report(
    records: &[UncertaintyRecord],
    bins: &[DistanceBin],
) -> Result<Vec<UncertaintyBin>> {
    if records.is_empty() {
        return Err(Error::InsufficientSamples("no records".into()));
    }
    Ok(bins
        .iter()
        .map(|bin| {
            let (mut sh, mut shr, mut count) = (0.0, 0.0, 0usize);
            for r in records.iter().filter(|r| bin.contains(r.z)) {
                sh += r.sigma_h;
                shr += r.sigma_hrec;
                count += 1;
            }
            let mean = |s: f64| (count > 0).then(|| s / count as f64);
            UncertaintyBin {
                bin: *bin,
                count,
                mean_sigma_h: mean(sh),
                mean_sigma_hrec: mean(shr),
            }
        })
        .collect())
}

pub fn uncertainty_bins_csv(bins: &[UncertaintyBin]) -> String {
    let cell = |v: Option<f64>| v.map_or_else(String::new, |x| format!("{x:.6}"));
    let mut out = String::from("lo,hi,count,mean_sigma_h,mean_sigma_hrec\n");
    for b in bins {
        out.push_str(&format!(
            "{:.6},{},{},{},{}\n",
            b.bin.lo,
            cell(b.bin.hi),
            b.count,
            cell(b.mean_sigma_h),
            cell(b.mean_sigma_hrec)
        ));
    }
    out
}

/// A synthetic KITTI frame: camera plus non-overlapping, fully visible car
/// labels with 2D boxes from projected corners.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticFrame {
    pub calib: ProjectionMatrix,
    pub labels: Vec<ObjectLabel>,
}

pub const SYNTHETIC_IMAGE: (f64, f64) = (1242.0, 375.0);

/// Generates a reproducible frame with up to `max_objects` cars laid out in
/// separate lanes so that no two footprints overlap.
pub fn synthetic_frame(rng: &mut impl Rng, max_objects: usize) -> Result<SyntheticFrame> {
    let f = rng.random_range(700.0..760.0);
    let calib = ProjectionMatrix::new([
        [f, 0.0, 609.5593, 44.85728],
        [0.0, f, 172.854, 0.2163791],
        [0.0, 0.0, 1.0, 0.002745884],
    ])?;
    let mut labels = Vec::new();
    let lanes = [-7.0, -3.5, 0.0, 3.5, 7.0];
    for (i, &lane) in lanes.iter().enumerate().take(max_objects) {
        let z = 8.0 + 10.0 * i as f64 + rng.random_range(0.0..8.0);
        let size = PhysicalSize::new(
            rng.random_range(1.5..1.9),
            rng.random_range(1.4..1.7),
            rng.random_range(3.5..4.5),
        )?;
        let ground = 1.65 + rng.random_range(-0.1..0.1);
        let b = Box3D {
            center: CameraPoint::new(lane + rng.random_range(-0.5..0.5), ground - size.h / 2.0, z),
            size,
            ry: rng.random_range(-std::f64::consts::PI..std::f64::consts::PI),
        };
        let Some(box2d) = projected_box(&calib, &b)? else {
            continue;
        };
        let mut label = ObjectLabel::from_box3d("Car", box2d, &b, None)?;
        label.alpha = ry_to_alpha(b.ry, b.center.x, b.center.z)?;
        labels.push(label);
    }
    Ok(SyntheticFrame { calib, labels })
}

/// Bounding box of the projected corners, or `None` if it leaves the image.
pub fn projected_box(p: &ProjectionMatrix, b: &Box3D) -> Result<Option<Box2D>> {
    let (mut x1, mut y1, mut x2, mut y2) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
    for c in corners_3d(b) {
        let (k, _) = project_to_pixel(p, c)?;
        x1 = x1.min(k.u);
        y1 = y1.min(k.v);
        x2 = x2.max(k.u);
        y2 = y2.max(k.v);
    }
    let (w, h) = SYNTHETIC_IMAGE;
    if x1 < 0.0 || y1 < 0.0 || x2 > w || y2 > h {
        return Ok(None);
    }
    Ok(Box2D::new(x1, y1, x2, y2).ok())
}
