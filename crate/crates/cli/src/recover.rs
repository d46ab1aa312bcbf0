use rayon::prelude::*;
use serde_json::json;

use mono3d::boxes::{alpha_to_ry, yaw_decode};
use mono3d::camera::focal_length;
use mono3d::distance::recover_center;
use mono3d::kitti_io::write_detections;
use mono3d::{Box3D, DetectionRecord, ProjectionMatrix};

use crate::config::{required, RunConfig};
use crate::error::{in_file, CliResult};
use crate::fsio::{
    create_dir, id_path, list_ids, read_calib, read_text, to_sorted_json, write_text,
};
use crate::predictions::{parse_predictions, FactorPair, Sidecar, SidecarEntry};
use crate::RunOutput;

/// Geometric-center 3D box of a detection.
pub fn recover_box(p: &ProjectionMatrix, rec: &DetectionRecord) -> mono3d::Result<Box3D> {
    let center = recover_center(p, rec.center_kpt, &rec.factors)?;
    let alpha = yaw_decode(rec.yaw)?;
    Ok(Box3D {
        center,
        size: rec.size,
        ry: alpha_to_ry(alpha, center.x, center.z)?,
    })
}

struct ImageOutput {
    id: String,
    labels: String,
    sidecar: Sidecar,
}

fn recover_image(cfg: &RunConfig, id: &str) -> CliResult<ImageOutput> {
    let pred_dir = required(&cfg.pred_dir, "--pred")?;
    let path = id_path(pred_dir, id, "jsonl");
    let calib = read_calib(required(&cfg.calib_dir, "--calib-dir")?, id)?;
    let f = focal_length(&calib).map_err(|e| in_file(&path, None, e))?;
    let text = read_text(&path)?;
    let preds = parse_predictions(&text).map_err(|(line, msg)| in_file(&path, Some(line), msg))?;

    let mut dets = Vec::with_capacity(preds.len());
    let mut sidecar = Sidecar::default();
    // line numbers for diagnostics, skipping blank lines as the parser does
    let lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, _)| i + 1);
    for (pred, line) in preds.iter().zip(lines) {
        let at = |e: mono3d::Error| in_file(&path, Some(line), e);
        let rec = pred.to_record().map_err(at)?;
        let b = recover_box(&calib, &rec).map_err(at)?;
        sidecar.detections.push(SidecarEntry {
            category: rec.cls.clone(),
            score: rec.score,
            composite: rec.composite_confidence(f).map_err(at)?,
            focal: f,
            factors: pred.factors,
            sigma: FactorPair {
                height: rec.sigma_h,
                h_rec: rec.sigma_hrec,
            },
        });
        dets.push((rec, b));
    }
    let labels = write_detections(&dets).map_err(|e| in_file(&path, None, e))?;
    Ok(ImageOutput {
        id: id.to_string(),
        labels,
        sidecar,
    })
}

/// Writes `<id>.txt` detections and `<id>.json` sidecars for every
/// prediction file.
pub fn run_recover(cfg: &RunConfig) -> CliResult<RunOutput> {
    let pred_dir = required(&cfg.pred_dir, "--pred")?;
    let out = required(&cfg.out, "--out")?;
    let ids = list_ids(pred_dir, "jsonl")?;
    let mut warnings = Vec::new();
    if ids.is_empty() {
        warnings.push(format!(
            "no .jsonl prediction files in {}",
            pred_dir.display()
        ));
    }
    let images = ids
        .par_iter()
        .map(|id| recover_image(cfg, id))
        .collect::<CliResult<Vec<_>>>()?;

    create_dir(out)?;
    let mut total = 0;
    for img in &images {
        write_text(&id_path(out, &img.id, "txt"), &img.labels)?;
        write_text(
            &id_path(out, &img.id, "json"),
            &to_sorted_json(&img.sidecar),
        )?;
        total += img.sidecar.detections.len();
    }
    Ok(RunOutput {
        summary: json!({ "command": "recover", "images": images.len(), "detections": total }),
        warnings,
    })
}
