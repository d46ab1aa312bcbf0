use std::path::Path;

use rayon::prelude::*;
use serde_json::json;

use mono3d::camera::focal_length;
use mono3d::eval::{evaluate, pr_curves_csv, EvalConfig, EvalDetection, EvalFrame, EvalReport};
use mono3d::kitti_io::parse_label_bytes;
use mono3d::scoring::composite_confidence;
use mono3d::{DistanceFactors, ScoreMode};

use crate::config::{required, RunConfig};
use crate::error::{core_in_file, in_file, CliError, CliResult};
use crate::fsio::{create_dir, id_path, list_ids, read_bytes, read_calib, read_text, write_text};
use crate::predictions::Sidecar;
use crate::RunOutput;

fn load_frame(cfg: &RunConfig, id: &str) -> CliResult<EvalFrame> {
    let gt_path = id_path(required(&cfg.gt_dir, "--gt-dir")?, id, "txt");
    let gts = parse_label_bytes(&read_bytes(&gt_path)?).map_err(|e| core_in_file(&gt_path, e))?;

    let (calib, focal) = match &cfg.calib_dir {
        Some(dir) => {
            let p = read_calib(dir, id)?;
            let f = focal_length(&p).map_err(|e| in_file(&id_path(dir, id, "txt"), None, e))?;
            (Some(p), Some(f))
        }
        None => (None, None),
    };

    let det_dir = required(&cfg.det_dir, "--det-dir")?;
    let det_path = id_path(det_dir, id, "txt");
    // a missing detection file means no detections for that image
    if !det_path.is_file() {
        return Ok(EvalFrame {
            gts,
            dets: Vec::new(),
            calib,
        });
    }
    let labels =
        parse_label_bytes(&read_bytes(&det_path)?).map_err(|e| core_in_file(&det_path, e))?;
    let sidecar = read_sidecar(&id_path(det_dir, id, "json"), labels.len())?;
    if cfg.score_mode == ScoreMode::Composite && !labels.is_empty() && sidecar.is_none() {
        return Err(in_file(
            &det_path,
            None,
            "composite scoring needs the .json sidecar written by `recover`",
        ));
    }

    let mut dets = Vec::with_capacity(labels.len());
    for (i, label) in labels.iter().enumerate() {
        let at = |e: mono3d::Error| in_file(&det_path, Some(i + 1), e);
        let score = label
            .score
            .ok_or_else(|| in_file(&det_path, Some(i + 1), "detection line has no score"))?;
        let entry = sidecar.as_ref().map(|s| &s.detections[i]);
        let factors = entry
            .map(|e| DistanceFactors::new(e.factors.height, e.factors.h_rec))
            .transpose()
            .map_err(at)?;
        let key = match (cfg.score_mode, entry) {
            (ScoreMode::Raw, _) => score,
            (ScoreMode::Composite, Some(e)) => {
                let f = focal.unwrap_or(e.focal);
                composite_confidence(score, f, e.factors.height, e.sigma.h_rec).map_err(at)?
            }
            (ScoreMode::Composite, None) => unreachable!("checked above"),
        };
        dets.push(EvalDetection {
            category: label.category.clone(),
            box2d: label.box2d,
            box3d: label.to_box3d().map_err(at)?,
            key,
            factors,
        });
    }
    Ok(EvalFrame { gts, dets, calib })
}

fn read_sidecar(path: &Path, expected: usize) -> CliResult<Option<Sidecar>> {
    if !path.is_file() {
        return Ok(None);
    }
    let sidecar: Sidecar =
        serde_json::from_str(&read_text(path)?).map_err(|e| in_file(path, Some(e.line()), e))?;
    if sidecar.detections.len() != expected {
        return Err(in_file(
            path,
            None,
            format!(
                "sidecar has {} entries, detection file has {expected}",
                sidecar.detections.len()
            ),
        ));
    }
    Ok(Some(sidecar))
}

/// Loads every image listed in the ground-truth directory.
pub fn load_frames(cfg: &RunConfig) -> CliResult<Vec<EvalFrame>> {
    let ids = list_ids(required(&cfg.gt_dir, "--gt-dir")?, "txt")?;
    ids.par_iter().map(|id| load_frame(cfg, id)).collect()
}

/// Evaluates the detection directory. Writes `report.json` and
/// `pr_curves.csv` when `--out` is set; the report is also the summary.
pub fn run_eval(cfg: &RunConfig) -> CliResult<RunOutput> {
    let frames = load_frames(cfg)?;
    let config = EvalConfig {
        class: cfg.class.clone(),
        iou_thresh: cfg.iou_thresh,
        difficulty: cfg.difficulty,
        score_mode: cfg.score_mode,
        bins: cfg.bins.clone(),
    };
    let (report, curves) =
        evaluate(&frames, &config).map_err(|e| CliError::Input(e.to_string()))?;
    if let Some(out) = &cfg.out {
        create_dir(out)?;
        write_text(&out.join("report.json"), &report.to_json())?;
        write_text(&out.join("pr_curves.csv"), &pr_curves_csv(&curves))?;
        write_text(
            &out.join("size_errors.txt"),
            &report.size_errors.to_string(),
        )?;
    }
    check_ground_truth(&report, cfg)?;
    let mut warnings = Vec::new();
    if report.has_empty_ground_truth() {
        warnings.push("some difficulty levels have no ground truth; their AP is null".into());
    }
    Ok(RunOutput {
        summary: serde_json::to_value(&report).expect("report is serializable"),
        warnings,
    })
}

fn check_ground_truth(report: &EvalReport, cfg: &RunConfig) -> CliResult<()> {
    let name = cfg.difficulty.name();
    if report.ap_bev.get(name).copied().flatten().is_none() {
        return Err(CliError::EmptyGroundTruth(format!(
            "no {} ground truth at difficulty {name}; AP is undefined ({})",
            cfg.class,
            json!(report.num_gt)
        )));
    }
    Ok(())
}
