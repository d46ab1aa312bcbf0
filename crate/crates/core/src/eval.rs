//! Evaluation metrics: rotated BEV and 3D IoU, AP|R40 with devkit-style
//! greedy matching, distance-binned errors, yaw-sector size errors and
//! Pearson correlation.

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::boxes::{rotate_y, Box2D, Box3D, PhysicalSize};
use crate::camera::{focal_length, project_to_pixel, ProjectionMatrix};
use crate::distance::DistanceFactors;
use crate::error::{Error, Result};
use crate::kitti_io::{assign_difficulty, Difficulty, ObjectLabel};
use crate::scoring::ScoreMode;

/// Vertex classification tolerance for polygon clipping.
pub const CLIP_EPS: f64 = 1e-9;

/// Number of recall samples of AP|R40.
pub const RECALL_POINTS: usize = 40;

pub type Point2 = [f64; 2];

fn cross(o: Point2, a: Point2, b: Point2) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Absolute shoelace area.
pub fn polygon_area(poly: &[Point2]) -> f64 {
    if poly.len() < 3 {
        return 0.0;
    }
    let mut twice = 0.0;
    for i in 0..poly.len() {
        let (a, b) = (poly[i], poly[(i + 1) % poly.len()]);
        twice += a[0] * b[1] - a[1] * b[0];
    }
    twice.abs() / 2.0
}

/// Ground-plane footprint of a box as a counter-clockwise rectangle in
/// `(x, z)`.
pub fn bev_polygon(b: &Box3D) -> Vec<Point2> {
    let (hl, hw) = (b.size.l / 2.0, b.size.w / 2.0);
    let mut poly: Vec<Point2> = [[hl, hw], [hl, -hw], [-hl, -hw], [-hl, hw]]
        .iter()
        .map(|&[lx, lz]| {
            let r = rotate_y(b.ry, [lx, 0.0, lz]);
            [b.center.x + r[0], b.center.z + r[2]]
        })
        .collect();
    if signed_area(&poly) < 0.0 {
        poly.reverse();
    }
    poly
}

fn signed_area(poly: &[Point2]) -> f64 {
    let mut twice = 0.0;
    for i in 0..poly.len() {
        let (a, b) = (poly[i], poly[(i + 1) % poly.len()]);
        twice += a[0] * b[1] - a[1] * b[0];
    }
    twice / 2.0
}

/// Sutherland–Hodgman: clips `subject` by the convex counter-clockwise
/// polygon `clip`. Points on a clip edge count as inside.
pub fn clip_convex(subject: &[Point2], clip: &[Point2]) -> Vec<Point2> {
    let mut output = subject.to_vec();
    for i in 0..clip.len() {
        if output.is_empty() {
            break;
        }
        let (a, b) = (clip[i], clip[(i + 1) % clip.len()]);
        let input = std::mem::take(&mut output);
        let inside = |p: Point2| cross(a, b, p) >= -CLIP_EPS;
        let intersect = |p: Point2, q: Point2| {
            let (cp, cq) = (cross(a, b, p), cross(a, b, q));
            let t = cp / (cp - cq);
            [p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]
        };
        for j in 0..input.len() {
            let cur = input[j];
            let prev = input[(j + input.len() - 1) % input.len()];
            match (inside(prev), inside(cur)) {
                (true, true) => output.push(cur),
                (true, false) => output.push(intersect(prev, cur)),
                (false, true) => {
                    output.push(intersect(prev, cur));
                    output.push(cur);
                }
                (false, false) => {}
            }
        }
    }
    output
}

pub fn bev_intersection_area(a: &Box3D, b: &Box3D) -> f64 {
    polygon_area(&clip_convex(&bev_polygon(a), &bev_polygon(b)))
}

fn ratio(inter: f64, area_a: f64, area_b: f64) -> f64 {
    let union = area_a + area_b - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// IoU of the rotated ground-plane rectangles.
pub fn bev_iou(a: &Box3D, b: &Box3D) -> f64 {
    let inter = bev_intersection_area(a, b);
    ratio(inter, a.size.l * a.size.w, b.size.l * b.size.w)
}

/// IoU of the oriented cuboids (yaw about the vertical axis only).
pub fn iou_3d(a: &Box3D, b: &Box3D) -> f64 {
    let top = (a.center.y - a.size.h / 2.0).max(b.center.y - b.size.h / 2.0);
    let bottom = (a.center.y + a.size.h / 2.0).min(b.center.y + b.size.h / 2.0);
    let overlap = (bottom - top).max(0.0);
    if overlap == 0.0 {
        return 0.0;
    }
    let inter = bev_intersection_area(a, b) * overlap;
    let vol = |s: &PhysicalSize| s.l * s.w * s.h;
    ratio(inter, vol(&a.size), vol(&b.size))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IouKind {
    Bev,
    #[serde(rename = "3d")]
    ThreeD,
}

impl IouKind {
    pub fn compute(self, a: &Box3D, b: &Box3D) -> f64 {
        match self {
            IouKind::Bev => bev_iou(a, b),
            IouKind::ThreeD => iou_3d(a, b),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            IouKind::Bev => "bev",
            IouKind::ThreeD => "3d",
        }
    }
}

/// A detection prepared for evaluation. `key` is the ranking key (raw or
/// composite confidence).
#[derive(Debug, Clone, PartialEq)]
pub struct EvalDetection {
    pub category: String,
    pub box2d: Box2D,
    pub box3d: Box3D,
    pub key: f64,
    pub factors: Option<DistanceFactors>,
}

/// Ground truth and detections of one image.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalFrame {
    pub gts: Vec<ObjectLabel>,
    pub dets: Vec<EvalDetection>,
    /// Camera of the image, when calibration is known.
    pub calib: Option<ProjectionMatrix>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub recall: f64,
    pub precision: f64,
    pub key: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    pub points: Vec<PrPoint>,
    /// Interpolated precision at recalls `1/40, ..., 40/40`.
    pub sampled_precisions: Vec<f64>,
}

/// A true-positive assignment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Match {
    pub frame: usize,
    pub det: usize,
    pub gt: usize,
    pub iou: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApResult {
    pub ap: f64,
    pub curve: PrCurve,
    pub matches: Vec<Match>,
    pub num_gt: usize,
    pub num_tp: usize,
    pub num_fp: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Outcome {
    Tp(usize),
    Fp,
    Discarded,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum GtRole {
    Pool,
    Ignored,
    Absent,
}

fn gt_roles(
    gts: &[ObjectLabel],
    class: &str,
    difficulty: Difficulty,
) -> Vec<(GtRole, Option<Box3D>)> {
    gts.iter()
        .map(|g| {
            if g.category != class || g.is_dont_care() {
                return (GtRole::Absent, None);
            }
            let Ok(b) = g.to_box3d() else {
                return (GtRole::Absent, None);
            };
            let d = assign_difficulty(g);
            if d != Difficulty::Ignored && d <= difficulty {
                (GtRole::Pool, Some(b))
            } else {
                (GtRole::Ignored, Some(b))
            }
        })
        .collect()
}

/// Greedy matching inside one image, detections visited by descending key
/// with index as tie-breaker.
fn match_frame(
    frame: &EvalFrame,
    class: &str,
    iou: IouKind,
    thresh: f64,
    difficulty: Difficulty,
) -> (Vec<Option<(Outcome, f64)>>, usize) {
    let roles = gt_roles(&frame.gts, class, difficulty);
    let pool = roles.iter().filter(|r| r.0 == GtRole::Pool).count();
    let mut taken = vec![false; roles.len()];
    let mut order: Vec<usize> = (0..frame.dets.len())
        .filter(|&i| frame.dets[i].category == class)
        .collect();
    order.sort_by(|&a, &b| {
        frame.dets[b]
            .key
            .total_cmp(&frame.dets[a].key)
            .then(a.cmp(&b))
    });

    let mut outcomes = vec![None; frame.dets.len()];
    for di in order {
        let det = &frame.dets[di];
        let mut best: Option<(usize, f64)> = None;
        let mut hits_ignored = false;
        for (gi, (role, gbox)) in roles.iter().enumerate() {
            let Some(gbox) = gbox else { continue };
            let v = iou.compute(&det.box3d, gbox);
            if v < thresh {
                continue;
            }
            match role {
                GtRole::Pool if !taken[gi] => {
                    if best.is_none_or(|(_, bv)| v > bv) {
                        best = Some((gi, v));
                    }
                }
                GtRole::Ignored => hits_ignored = true,
                _ => {}
            }
        }
        outcomes[di] = Some(match best {
            Some((gi, v)) => {
                taken[gi] = true;
                (Outcome::Tp(gi), v)
            }
            None if hits_ignored => (Outcome::Discarded, 0.0),
            None => (Outcome::Fp, 0.0),
        });
    }
    (outcomes, pool)
}

/// Interpolated precision at `RECALL_POINTS` equally spaced recalls.
pub fn sample_precisions(points: &[PrPoint]) -> Vec<f64> {
    // suffix maximum of precision
    let mut best_from = vec![0.0_f64; points.len() + 1];
    for i in (0..points.len()).rev() {
        best_from[i] = best_from[i + 1].max(points[i].precision);
    }
    (1..=RECALL_POINTS)
        .map(|k| {
            let r = k as f64 / RECALL_POINTS as f64;
            // recalls are non-decreasing along the curve
            let first = points.partition_point(|p| p.recall < r - 1e-12);
            best_from[first]
        })
        .collect()
}

/// AP|R40 over a set of images.
///
/// The GT pool holds objects of `class` at or easier than `difficulty`.
/// Harder or ignored objects of the class absorb detections without
/// counting them (neither TP nor FP) and are never false negatives.
pub fn ap_r40(
    frames: &[EvalFrame],
    class: &str,
    iou: IouKind,
    thresh: f64,
    difficulty: Difficulty,
) -> Result<ApResult> {
    let per_frame: Vec<_> = frames
        .par_iter()
        .map(|f| match_frame(f, class, iou, thresh, difficulty))
        .collect();
    let num_gt: usize = per_frame.iter().map(|(_, n)| n).sum();
    if num_gt == 0 {
        return Err(Error::EmptyGroundTruth);
    }

    let mut ranked: Vec<(f64, usize, usize, Outcome, f64)> = Vec::new();
    for (fi, (outcomes, _)) in per_frame.iter().enumerate() {
        for (di, o) in outcomes.iter().enumerate() {
            if let Some((outcome, v)) = *o {
                if outcome != Outcome::Discarded {
                    ranked.push((frames[fi].dets[di].key, fi, di, outcome, v));
                }
            }
        }
    }
    ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

    let (mut tp, mut fp) = (0usize, 0usize);
    let mut points = Vec::with_capacity(ranked.len());
    let mut matches = Vec::new();
    for &(key, fi, di, outcome, v) in &ranked {
        match outcome {
            Outcome::Tp(gi) => {
                tp += 1;
                matches.push(Match {
                    frame: fi,
                    det: di,
                    gt: gi,
                    iou: v,
                });
            }
            _ => fp += 1,
        }
        points.push(PrPoint {
            recall: tp as f64 / num_gt as f64,
            precision: tp as f64 / (tp + fp) as f64,
            key,
        });
    }
    let sampled = sample_precisions(&points);
    let ap = sampled.iter().sum::<f64>() / RECALL_POINTS as f64;
    Ok(ApResult {
        ap,
        curve: PrCurve {
            points,
            sampled_precisions: sampled,
        },
        matches,
        num_gt,
        num_tp: tp,
        num_fp: fp,
    })
}

/// Half-open distance range `[lo, hi)`; `hi = None` is unbounded.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistanceBin {
    pub lo: f64,
    pub hi: Option<f64>,
}

impl DistanceBin {
    pub fn contains(&self, z: f64) -> bool {
        z >= self.lo && self.hi.is_none_or(|h| z < h)
    }
}

impl fmt::Display for DistanceBin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.hi {
            Some(h) => write!(f, "[{}, {})", self.lo, h),
            None => write!(f, "[{}, +inf)", self.lo),
        }
    }
}

/// Builds `[0, inf)` followed by the consecutive ranges between `edges`,
/// the last one unbounded. `"0,20,40"` gives the layout
/// `[0,inf) [0,20) [20,40) [40,inf)`.
pub fn bins_from_edges(edges: &[f64]) -> Result<Vec<DistanceBin>> {
    if edges.is_empty() || edges.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::InvalidInput(format!(
            "bin edges must be strictly increasing: {edges:?}"
        )));
    }
    let mut bins = vec![DistanceBin {
        lo: edges[0],
        hi: None,
    }];
    for (i, &lo) in edges.iter().enumerate() {
        bins.push(DistanceBin {
            lo,
            hi: edges.get(i + 1).copied(),
        });
    }
    Ok(bins)
}

pub fn parse_bin_edges(s: &str) -> Result<Vec<DistanceBin>> {
    let edges = s
        .split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| Error::InvalidInput(format!("bad bin edge {t:?}")))
        })
        .collect::<Result<Vec<_>>>()?;
    bins_from_edges(&edges)
}

pub fn default_bins() -> Vec<DistanceBin> {
    bins_from_edges(&[0.0, 20.0, 40.0]).expect("static edges")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinError {
    pub bin: DistanceBin,
    /// `None` for an empty bin.
    pub mean_abs_error: Option<f64>,
    pub count: usize,
}

/// Mean `|pred - gt|` per bin, binned by ground-truth distance.
/// `pairs` are `(gt_z, pred_z)`.
pub fn distance_binned_error(pairs: &[(f64, f64)], bins: &[DistanceBin]) -> Vec<BinError> {
    bins.iter()
        .map(|bin| {
            let (sum, count) = pairs
                .iter()
                .filter(|(gt, _)| bin.contains(*gt))
                .fold((0.0, 0usize), |(s, c), (gt, pred)| {
                    (s + (pred - gt).abs(), c + 1)
                });
            BinError {
                bin: *bin,
                mean_abs_error: (count > 0).then(|| sum / count as f64),
                count,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SizePair {
    pub gt: PhysicalSize,
    pub pred: PhysicalSize,
    pub gt_alpha: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum YawSector {
    Side,
    FrontBack,
}

/// Visible-side classification from the observation angle. At `alpha = ±π/2`
/// the camera looks at the front or back face; at `0` or `π` at a side.
pub fn yaw_sector(alpha: f64) -> YawSector {
    if (alpha.abs() - FRAC_PI_2).abs() <= FRAC_PI_4 {
        YawSector::FrontBack
    } else {
        YawSector::Side
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SectorErrors {
    pub count: usize,
    pub length: Option<f64>,
    pub width: Option<f64>,
    pub height: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SizeErrorTable {
    pub all: SectorErrors,
    pub side: SectorErrors,
    pub front_back: SectorErrors,
}

fn sector_errors<'a>(pairs: impl Iterator<Item = &'a SizePair>) -> SectorErrors {
    let mut sums = [0.0; 3];
    let mut count = 0;
    for p in pairs {
        sums[0] += (p.pred.l - p.gt.l).abs();
        sums[1] += (p.pred.w - p.gt.w).abs();
        sums[2] += (p.pred.h - p.gt.h).abs();
        count += 1;
    }
    let mean = |s: f64| (count > 0).then(|| s / count as f64);
    SectorErrors {
        count,
        length: mean(sums[0]),
        width: mean(sums[1]),
        height: mean(sums[2]),
    }
}

pub fn yaw_sector_size_error(pairs: &[SizePair]) -> SizeErrorTable {
    SizeErrorTable {
        all: sector_errors(pairs.iter()),
        side: sector_errors(
            pairs
                .iter()
                .filter(|p| yaw_sector(p.gt_alpha) == YawSector::Side),
        ),
        front_back: sector_errors(
            pairs
                .iter()
                .filter(|p| yaw_sector(p.gt_alpha) == YawSector::FrontBack),
        ),
    }
}

type SectorColumn = fn(&SectorErrors) -> Option<f64>;

impl fmt::Display for SizeErrorTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let cell = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.3}"));
        writeln!(
            f,
            "{:<8} | {:>9} {:>9} {:>9}",
            "", "S & F & B", "S", "F & B"
        )?;
        let rows: [(&str, SectorColumn); 3] = [
            ("Length", |s| s.length),
            ("Width", |s| s.width),
            ("Height", |s| s.height),
        ];
        for (name, get) in rows {
            writeln!(
                f,
                "{:<8} | {:>9} {:>9} {:>9}",
                name,
                cell(get(&self.all)),
                cell(get(&self.side)),
                cell(get(&self.front_back))
            )?;
        }
        Ok(())
    }
}

/// Sample Pearson correlation coefficient.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::LengthMismatch {
            left: xs.len(),
            right: ys.len(),
        });
    }
    if xs.len() < 2 {
        return Err(Error::DegenerateSequence(
            "need at least two samples".into(),
        ));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::DegenerateSequence("constant input".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Options of a full evaluation run.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub class: String,
    pub iou_thresh: f64,
    /// Difficulty whose matches feed the distance, size and PCC statistics.
    pub difficulty: Difficulty,
    pub score_mode: ScoreMode,
    pub bins: Vec<DistanceBin>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            class: "Car".into(),
            iou_thresh: 0.7,
            difficulty: Difficulty::Moderate,
            score_mode: ScoreMode::Raw,
            bins: default_bins(),
        }
    }
}

/// Evaluation summary. Serialized with sorted keys by [`EvalReport::to_json`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub class: String,
    pub iou_thresh: f64,
    pub difficulty: Difficulty,
    pub score_mode: ScoreMode,
    /// AP|R40 per difficulty name; `null` when there is no ground truth.
    pub ap_3d: BTreeMap<String, Option<f64>>,
    pub ap_bev: BTreeMap<String, Option<f64>>,
    pub num_gt: BTreeMap<String, usize>,
    pub distance_bins: Vec<BinError>,
    pub size_errors: SizeErrorTable,
    /// PCC of `(H_pred - H_gt, h_rec_pred - h_rec_gt)` over matched objects.
    pub pcc: Option<f64>,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        // serde_json::Value keeps object keys sorted
        let value = serde_json::to_value(self).expect("report is serializable");
        let mut s = serde_json::to_string_pretty(&value).expect("value is serializable");
        s.push('\n');
        s
    }

    /// True when every difficulty had ground truth for both metrics.
    pub fn has_empty_ground_truth(&self) -> bool {
        self.ap_3d
            .values()
            .chain(self.ap_bev.values())
            .any(Option::is_none)
    }
}

/// PR curves of a run keyed by `(metric, difficulty)`.
pub type PrCurves = Vec<(IouKind, Difficulty, PrCurve)>;

/// Runs AP_3D and AP_BEV at every difficulty, plus the distance, size and
/// PCC statistics over the BEV matches at `config.difficulty`.
pub fn evaluate(frames: &[EvalFrame], config: &EvalConfig) -> Result<(EvalReport, PrCurves)> {
    if !(config.iou_thresh > 0.0 && config.iou_thresh <= 1.0) {
        return Err(Error::InvalidInput(format!(
            "IoU threshold {} not in (0, 1]",
            config.iou_thresh
        )));
    }
    let mut ap_3d = BTreeMap::new();
    let mut ap_bev = BTreeMap::new();
    let mut num_gt = BTreeMap::new();
    let mut curves = Vec::new();
    let mut stats_matches = Vec::new();
    for kind in [IouKind::ThreeD, IouKind::Bev] {
        for d in Difficulty::LEVELS {
            let slot = match kind {
                IouKind::ThreeD => &mut ap_3d,
                IouKind::Bev => &mut ap_bev,
            };
            match ap_r40(frames, &config.class, kind, config.iou_thresh, d) {
                Ok(res) => {
                    slot.insert(d.name().to_string(), Some(res.ap));
                    num_gt.insert(d.name().to_string(), res.num_gt);
                    if kind == IouKind::Bev && d == config.difficulty {
                        stats_matches = res.matches.clone();
                    }
                    curves.push((kind, d, res.curve));
                }
                Err(Error::EmptyGroundTruth) => {
                    slot.insert(d.name().to_string(), None);
                    num_gt.insert(d.name().to_string(), 0);
                }
                Err(e) => return Err(e),
            }
        }
    }

    let mut z_pairs = Vec::new();
    let mut size_pairs = Vec::new();
    let (mut dh, mut dhrec) = (Vec::new(), Vec::new());
    for m in &stats_matches {
        let frame = &frames[m.frame];
        let gt = &frame.gts[m.gt];
        let det = &frame.dets[m.det];
        let gbox = gt.to_box3d()?;
        z_pairs.push((gbox.center.z, det.box3d.center.z));
        size_pairs.push(SizePair {
            gt: gbox.size,
            pred: det.box3d.size,
            gt_alpha: gt.alpha,
        });
        if let (Some(p), Some(pred)) = (&frame.calib, det.factors) {
            // depth along the projection, the quantity f * H * h_rec recovers
            let (_, depth) = project_to_pixel(p, gbox.center)?;
            let gt_hrec = depth / (focal_length(p)? * gbox.size.h);
            dh.push(pred.height - gbox.size.h);
            dhrec.push(pred.h_rec - gt_hrec);
        }
    }
    let report = EvalReport {
        class: config.class.clone(),
        iou_thresh: config.iou_thresh,
        difficulty: config.difficulty,
        score_mode: config.score_mode,
        ap_3d,
        ap_bev,
        num_gt,
        distance_bins: distance_binned_error(&z_pairs, &config.bins),
        size_errors: yaw_sector_size_error(&size_pairs),
        pcc: pearson(&dh, &dhrec).ok(),
    };
    Ok((report, curves))
}

/// PR curves as CSV: `metric,difficulty,rank,key,recall,precision`.
pub fn pr_curves_csv(curves: &PrCurves) -> String {
    let mut out = String::from("metric,difficulty,rank,key,recall,precision\n");
    for (kind, d, curve) in curves {
        for (i, p) in curve.points.iter().enumerate() {
            out.push_str(&format!(
                "{},{},{},{:.6},{:.6},{:.6}\n",
                kind.name(),
                d.name(),
                i,
                p.key,
                p.recall,
                p.precision
            ));
        }
    }
    out
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::camera::CameraPoint;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    pub(crate) fn bx(x: f64, y: f64, z: f64, w: f64, h: f64, l: f64, ry: f64) -> Box3D {
        Box3D {
            center: CameraPoint::new(x, y, z),
            size: PhysicalSize::new(w, h, l).unwrap(),
            ry,
        }
    }

    fn inside_footprint(b: &Box3D, x: f64, z: f64) -> bool {
        // inverse rotation into the box frame
        let local = rotate_y(-b.ry, [x - b.center.x, 0.0, z - b.center.z]);
        local[0].abs() <= b.size.l / 2.0 && local[2].abs() <= b.size.w / 2.0
    }

    /// Uniform point-sampling estimate of BEV IoU.
    pub(crate) fn mc_bev_iou(a: &Box3D, b: &Box3D, n: usize, rng: &mut impl Rng) -> f64 {
        let r = |bx: &Box3D| 0.5 * bx.size.l.hypot(bx.size.w);
        let x0 = (a.center.x - r(a)).min(b.center.x - r(b));
        let x1 = (a.center.x + r(a)).max(b.center.x + r(b));
        let z0 = (a.center.z - r(a)).min(b.center.z - r(b));
        let z1 = (a.center.z + r(a)).max(b.center.z + r(b));
        let (mut both, mut either) = (0usize, 0usize);
        for _ in 0..n {
            let x = rng.random_range(x0..x1);
            let z = rng.random_range(z0..z1);
            let (ia, ib) = (inside_footprint(a, x, z), inside_footprint(b, x, z));
            both += (ia && ib) as usize;
            either += (ia || ib) as usize;
        }
        if either == 0 {
            0.0
        } else {
            both as f64 / either as f64
        }
    }

    #[test]
    fn bev_hand_cases() {
        let a = bx(0.0, 0.0, 10.0, 1.0, 1.0, 1.0, 0.0);
        assert!((bev_iou(&a, &a) - 1.0).abs() < 1e-12);
        let b = bx(0.5, 0.0, 10.0, 1.0, 1.0, 1.0, 0.0);
        assert!((bev_intersection_area(&a, &b) - 0.5).abs() < 1e-12);
        assert!((bev_iou(&a, &b) - 1.0 / 3.0).abs() < 1e-12);

        let rot = bx(0.0, 0.0, 10.0, 1.0, 1.0, 1.0, PI / 4.0);
        let inter = 2.0 * (2f64.sqrt() - 1.0);
        assert!((bev_intersection_area(&a, &rot) - inter).abs() < 1e-9);
        assert!((bev_iou(&a, &rot) - inter / (2.0 - inter)).abs() < 1e-9);
        // the ratio simplifies to 1/sqrt(2) = 0.707107
        assert!((bev_iou(&a, &rot) - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-6);

        let far = bx(5.0, 0.0, 10.0, 1.0, 1.0, 1.0, 0.3);
        assert_eq!(bev_iou(&a, &far), 0.0);
    }

    #[test]
    fn bev_45_degree_matches_monte_carlo() {
        let a = bx(0.0, 0.0, 10.0, 1.0, 1.0, 1.0, 0.0);
        let rot = bx(0.0, 0.0, 10.0, 1.0, 1.0, 1.0, PI / 4.0);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mc = mc_bev_iou(&a, &rot, 1_000_000, &mut rng);
        assert!((mc - bev_iou(&a, &rot)).abs() < 5e-3, "{mc}");
    }

    #[test]
    fn iou_3d_hand_cases() {
        let a = bx(1.0, 1.0, 20.0, 1.6, 1.5, 3.9, 0.4);
        assert!((iou_3d(&a, &a) - 1.0).abs() < 1e-12);
        let mut up = a;
        up.center.y += 0.75;
        assert!((iou_3d(&a, &up) - 1.0 / 3.0).abs() < 1e-12);
        up.center.y += 2.0;
        assert_eq!(iou_3d(&a, &up), 0.0);
    }

    #[test]
    fn clip_disjoint_and_contained() {
        let sq = |c: f64, s: f64| {
            vec![
                [c - s, c - s],
                [c + s, c - s],
                [c + s, c + s],
                [c - s, c + s],
            ]
        };
        assert!(clip_convex(&sq(0.0, 1.0), &sq(10.0, 1.0)).len() < 3);
        let inner = clip_convex(&sq(0.0, 0.5), &sq(0.0, 2.0));
        assert!((polygon_area(&inner) - 1.0).abs() < 1e-12);
    }

    fn label(z: f64, height_px: f64) -> ObjectLabel {
        let b = bx(0.0, 1.0, z, 1.6, 1.5, 3.9, 0.0);
        let box2d = Box2D::new(100.0, 100.0, 200.0, 100.0 + height_px).unwrap();
        ObjectLabel::from_box3d("Car", box2d, &b, None).unwrap()
    }

    fn det_from(l: &ObjectLabel, key: f64) -> EvalDetection {
        EvalDetection {
            category: l.category.clone(),
            box2d: l.box2d,
            box3d: l.to_box3d().unwrap(),
            key,
            factors: None,
        }
    }

    #[test]
    fn ap_single_tp() {
        let gt = label(20.0, 50.0);
        let frame = EvalFrame {
            dets: vec![det_from(&gt, 0.9)],
            gts: vec![gt],
            calib: None,
        };
        let res = ap_r40(&[frame], "Car", IouKind::ThreeD, 0.7, Difficulty::Moderate).unwrap();
        assert_eq!(res.ap, 1.0);
        assert_eq!(res.curve.sampled_precisions, vec![1.0; 40]);
    }

    #[test]
    fn ap_single_fp() {
        let gt = label(20.0, 50.0);
        let mut d = det_from(&gt, 0.9);
        d.box3d.center.z += 3.0;
        let frame = EvalFrame {
            dets: vec![d],
            gts: vec![gt],
            calib: None,
        };
        let res = ap_r40(&[frame], "Car", IouKind::ThreeD, 0.7, Difficulty::Moderate).unwrap();
        assert_eq!(res.ap, 0.0);
        assert_eq!(res.num_fp, 1);
    }

    #[test]
    fn ap_two_gt_one_tp() {
        // hand enumeration: one point at (recall 0.5, precision 1)
        let g1 = label(20.0, 50.0);
        let mut g2 = label(35.0, 50.0);
        g2.location.x = 8.0;
        let frame = EvalFrame {
            dets: vec![det_from(&g1, 0.9)],
            gts: vec![g1, g2],
            calib: None,
        };
        let res = ap_r40(&[frame], "Car", IouKind::ThreeD, 0.7, Difficulty::Moderate).unwrap();
        assert_eq!(res.ap, 0.5);
        let expected: Vec<f64> = (1..=40).map(|k| if k <= 20 { 1.0 } else { 0.0 }).collect();
        assert_eq!(res.curve.sampled_precisions, expected);
    }

    #[test]
    fn ap_empty_ground_truth_is_distinct() {
        let frame = EvalFrame::default();
        assert_eq!(
            ap_r40(&[frame], "Car", IouKind::Bev, 0.7, Difficulty::Easy),
            Err(Error::EmptyGroundTruth)
        );
    }

    #[test]
    fn harder_gt_absorbs_detection() {
        // a 30 px tall object is Moderate: at Easy it is neither FN nor a TP target
        let easy = label(20.0, 50.0);
        let mut moderate = label(40.0, 30.0);
        moderate.occlusion = 1;
        moderate.location.x = 6.0;
        let frame = EvalFrame {
            dets: vec![det_from(&easy, 0.5), det_from(&moderate, 0.9)],
            gts: vec![easy, moderate],
            calib: None,
        };
        let res = ap_r40(
            std::slice::from_ref(&frame),
            "Car",
            IouKind::ThreeD,
            0.7,
            Difficulty::Easy,
        )
        .unwrap();
        assert_eq!((res.num_gt, res.num_tp, res.num_fp), (1, 1, 0));
        assert_eq!(res.ap, 1.0);
        let res = ap_r40(&[frame], "Car", IouKind::ThreeD, 0.7, Difficulty::Moderate).unwrap();
        assert_eq!((res.num_gt, res.num_tp), (2, 2));
    }

    #[test]
    fn duplicate_detection_is_fp() {
        let gt = label(20.0, 50.0);
        let frame = EvalFrame {
            dets: vec![det_from(&gt, 0.9), det_from(&gt, 0.8)],
            gts: vec![gt],
            calib: None,
        };
        let res = ap_r40(&[frame], "Car", IouKind::Bev, 0.7, Difficulty::Hard).unwrap();
        assert_eq!((res.num_tp, res.num_fp), (1, 1));
        assert_eq!(res.ap, 1.0);
    }

    #[test]
    fn binned_error_examples() {
        let bins = default_bins();
        let perfect = distance_binned_error(&[(10.0, 10.0), (30.0, 30.0), (45.0, 45.0)], &bins);
        assert!(perfect.iter().all(|b| b.mean_abs_error == Some(0.0)));

        let single = distance_binned_error(&[(15.0, 16.0)], &bins);
        assert_eq!(single[0].mean_abs_error, Some(1.0));
        assert_eq!(single[1].mean_abs_error, Some(1.0));
        assert_eq!((single[2].count, single[2].mean_abs_error), (0, None));
        assert_eq!((single[3].count, single[3].mean_abs_error), (0, None));

        let three = distance_binned_error(&[(10.0, 11.0), (30.0, 33.0), (50.0, 45.0)], &bins);
        let means: Vec<_> = three.iter().map(|b| b.mean_abs_error.unwrap()).collect();
        assert_eq!(means, vec![3.0, 1.0, 3.0, 5.0]);

        assert_eq!(parse_bin_edges("0,20,40").unwrap(), bins);
        assert!(parse_bin_edges("0,40,20").is_err());
        assert_eq!(bins[0].to_string(), "[0, +inf)");
    }

    #[test]
    fn size_sector_examples() {
        let s = PhysicalSize::new(1.6, 1.5, 3.9).unwrap();
        let t = yaw_sector_size_error(&[SizePair {
            gt: s,
            pred: s,
            gt_alpha: 0.3,
        }]);
        assert_eq!(t.all.length, Some(0.0));
        assert_eq!(t.side.height, Some(0.0));
        assert_eq!(t.front_back.count, 0);

        let taller = PhysicalSize { h: 1.6, ..s };
        let t = yaw_sector_size_error(&[SizePair {
            gt: s,
            pred: taller,
            gt_alpha: 0.0,
        }]);
        assert!((t.side.height.unwrap() - 0.1).abs() < 1e-12);
        assert_eq!(t.front_back.height, None);

        assert_eq!(yaw_sector(FRAC_PI_2), YawSector::FrontBack);
        assert_eq!(yaw_sector(-FRAC_PI_2 + 0.5), YawSector::FrontBack);
        assert_eq!(yaw_sector(PI), YawSector::Side);
        assert_eq!(yaw_sector(0.1), YawSector::Side);
    }

    #[test]
    fn size_table_layout() {
        // the published layout: rows Length/Width/Height, columns all/S/F&B
        let mk = |gt_l: f64, pred_l: f64, alpha: f64| SizePair {
            gt: PhysicalSize::new(1.6, 1.5, gt_l).unwrap(),
            pred: PhysicalSize::new(1.671, 1.578, pred_l).unwrap(),
            gt_alpha: alpha,
        };
        let t = yaw_sector_size_error(&[mk(3.9, 4.193, 0.0), mk(3.9, 4.193, FRAC_PI_2)]);
        let text = t.to_string();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 4);
        assert!(lines[0].contains("S & F & B") && lines[0].contains("F & B"));
        assert!(lines[1].starts_with("Length") && lines[1].contains("0.293"));
        assert!(lines[2].starts_with("Width") && lines[2].contains("0.071"));
        assert!(lines[3].starts_with("Height") && lines[3].contains("0.078"));
    }

    #[test]
    fn pearson_examples() {
        let xs = [1.0, 2.0, 4.0, 7.0, 11.0];
        let neg: Vec<f64> = xs.iter().map(|x| -x).collect();
        let aff: Vec<f64> = xs.iter().map(|x| 2.0 * x + 3.0).collect();
        assert!((pearson(&xs, &xs).unwrap() - 1.0).abs() < 1e-12);
        assert!((pearson(&xs, &neg).unwrap() + 1.0).abs() < 1e-12);
        assert!((pearson(&xs, &aff).unwrap() - 1.0).abs() < 1e-12);
        assert!(matches!(
            pearson(&xs, &[1.0; 5]),
            Err(Error::DegenerateSequence(_))
        ));
        assert!(pearson(&[1.0], &[2.0]).is_err());
    }

    #[test]
    fn report_json_is_sorted() {
        let gt = label(20.0, 50.0);
        let frame = EvalFrame {
            dets: vec![det_from(&gt, 1.0)],
            gts: vec![gt],
            calib: Some(ProjectionMatrix::from_intrinsics(700.0, 700.0, 600.0, 180.0).unwrap()),
        };
        let (report, curves) = evaluate(&[frame], &EvalConfig::default()).unwrap();
        assert_eq!(report.ap_3d["moderate"], Some(1.0));
        let json = report.to_json();
        let keys: Vec<usize> = [
            "\"ap_3d\"",
            "\"ap_bev\"",
            "\"class\"",
            "\"distance_bins\"",
            "\"pcc\"",
            "\"size_errors\"",
        ]
        .iter()
        .map(|k| json.find(k).unwrap())
        .collect();
        assert!(keys.windows(2).all(|w| w[0] < w[1]));
        let csv = pr_curves_csv(&curves);
        assert!(csv.starts_with("metric,difficulty,rank,key,recall,precision\n"));
        assert_eq!(csv.lines().count(), 1 + curves.len());
    }

    fn arb_box() -> impl Strategy<Value = Box3D> {
        (
            -3.0..3.0f64,
            8.0..14.0f64,
            0.5..2.5f64,
            0.5..2.0f64,
            1.0..5.0f64,
            -PI..PI,
            -0.5..0.5f64,
        )
            .prop_map(|(x, z, w, h, l, ry, y)| bx(x, y, z, w, h, l, ry))
    }

    proptest! {
        #[test]
        fn bev_iou_properties(a in arb_box(), b in arb_box(), tx in -20.0..20.0f64, tz in -5.0..5.0f64, rot in -PI..PI) {
            let ab = bev_iou(&a, &b);
            prop_assert!((0.0..=1.0).contains(&ab));
            prop_assert!((ab - bev_iou(&b, &a)).abs() < 1e-9);
            // apply the same rigid motion (rotation about the origin plus translation) to both
            let motion = |bx: &Box3D| {
                let r = rotate_y(rot, [bx.center.x, 0.0, bx.center.z]);
                Box3D { center: CameraPoint::new(r[0] + tx, bx.center.y, r[2] + tz + 30.0), size: bx.size, ry: bx.ry + rot }
            };
            prop_assert!((ab - bev_iou(&motion(&a), &motion(&b))).abs() < 1e-9);
            // half-turn symmetry of the rectangle
            let flipped = Box3D { ry: a.ry + PI, ..a };
            prop_assert!((bev_iou(&a, &flipped) - 1.0).abs() < 1e-9);
        }

        #[test]
        fn iou_3d_bounded_by_bev_shape(a in arb_box(), b in arb_box()) {
            let v = iou_3d(&a, &b);
            prop_assert!((0.0..=1.0).contains(&v));
            prop_assert!((v - iou_3d(&b, &a)).abs() < 1e-9);
        }

        #[test]
        fn ap_invariant_to_monotone_key_transform(keys in prop::collection::vec(0.01..1.0f64, 1..12), shift in prop::collection::vec(any::<bool>(), 12)) {
            let gts: Vec<ObjectLabel> = (0..keys.len()).map(|i| {
                let mut l = label(10.0 + 4.0 * i as f64, 50.0);
                l.location.x = 5.0 * i as f64 - 20.0;
                l
            }).collect();
            let dets: Vec<EvalDetection> = gts.iter().zip(&keys).enumerate().map(|(i, (g, &k))| {
                let mut d = det_from(g, k);
                if shift[i] { d.box3d.center.z += 2.5; }
                d
            }).collect();
            let frame = EvalFrame { gts: gts.clone(), dets: dets.clone(), calib: None };
            let base = ap_r40(std::slice::from_ref(&frame), "Car", IouKind::ThreeD, 0.7, Difficulty::Moderate).unwrap();
            let transformed = EvalFrame {
                dets: dets.iter().cloned().map(|mut d| { d.key = (3.0 * d.key).exp() - 7.0; d }).collect(),
                ..frame.clone()
            };
            let other = ap_r40(&[transformed], "Car", IouKind::ThreeD, 0.7, Difficulty::Moderate).unwrap();
            prop_assert_eq!(base.ap, other.ap);
            prop_assert!((0.0..=1.0).contains(&base.ap));

            // a lowest-ranked unmatched detection never raises AP
            let mut extra = frame.clone();
            let mut fp = det_from(&gts[0], 0.0);
            fp.box3d.center.x += 100.0;
            extra.dets.push(fp);
            let with_fp = ap_r40(&[extra], "Car", IouKind::ThreeD, 0.7, Difficulty::Moderate).unwrap();
            prop_assert!(with_fp.ap <= base.ap);
        }

        #[test]
        fn pearson_affine_invariant(xs in prop::collection::vec(-10.0..10.0f64, 3..30), a in 0.1..10.0f64, b in -5.0..5.0f64) {
            let ys: Vec<f64> = xs.iter().enumerate().map(|(i, x)| x * x + i as f64).collect();
            if let Ok(r) = pearson(&xs, &ys) {
                let xs2: Vec<f64> = xs.iter().map(|x| a * x + b).collect();
                prop_assert!((r - pearson(&xs2, &ys).unwrap()).abs() < 1e-9);
                prop_assert!((-1.0..=1.0).contains(&r));
            }
        }
    }
}
