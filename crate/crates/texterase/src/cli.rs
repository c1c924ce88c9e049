//! Command implementations behind the `texterase` binary: dataset
//! synthesis, training, erasing, and evaluation. Kept in the library so
//! integration tests can drive them directly.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{erase_regions, PipelineOptions, DEFAULT_EXPAND_FACTOR};
use crate::imagecore::{
    binarize, load_image, save_image, save_mask, ImageError, RegionKind, SaveFormat, TextRegion,
    DEFAULT_TAU,
};
use crate::metrics::{evaluate_pairs, MetricsError};
use crate::net::checkpoint::load_checkpoint;
use crate::net::{NetError, NetworkEraser};
use crate::synthgen::{write_dataset, SynthConfig, SynthError};
use crate::trainer::{fit, TrainConfig, TrainError};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// On-disk region annotation format:
/// `{"regions":[{"kind":"axis_aligned"|"quad"|"polygon","points":[[x,y],...]}]}`
#[derive(Serialize, Deserialize)]
pub struct RegionsFile {
    pub regions: Vec<RegionSpec>,
}

#[derive(Serialize, Deserialize)]
pub struct RegionSpec {
    pub kind: RegionKind,
    pub points: Vec<[f64; 2]>,
}

impl RegionSpec {
    pub fn to_region(&self) -> Result<TextRegion, CliError> {
        let pts: Vec<(f64, f64)> = self.points.iter().map(|p| (p[0], p[1])).collect();
        match self.kind {
            RegionKind::AxisAligned => {
                if pts.len() != 2 {
                    return Err(CliError::Usage(format!(
                        "axis_aligned region needs 2 points, got {}",
                        pts.len()
                    )));
                }
                Ok(TextRegion::axis_aligned(pts[0].0, pts[0].1, pts[1].0, pts[1].1))
            }
            RegionKind::Quad => {
                if pts.len() != 4 {
                    return Err(CliError::Usage(format!(
                        "quad region needs 4 points, got {}",
                        pts.len()
                    )));
                }
                Ok(TextRegion::quad([pts[0], pts[1], pts[2], pts[3]]))
            }
            RegionKind::Polygon => {
                if pts.len() < 4 || !pts.len().is_multiple_of(2) {
                    return Err(CliError::Usage(format!(
                        "polygon region needs 2N points (N >= 2), got {}",
                        pts.len()
                    )));
                }
                Ok(TextRegion::polygon(pts))
            }
        }
    }
}

pub fn load_regions(path: &Path) -> Result<Vec<TextRegion>, CliError> {
    let contents = std::fs::read_to_string(path)?;
    let file: RegionsFile = serde_json::from_str(&contents)?;
    file.regions.iter().map(|r| r.to_region()).collect()
}

/// `texterase synth`: generate a dataset and print the manifest path.
pub fn cmd_synth(
    config_path: &Path,
    count: usize,
    out_dir: &Path,
    seed_override: Option<u64>,
) -> Result<PathBuf, CliError> {
    let contents = std::fs::read_to_string(config_path)?;
    let mut config: SynthConfig = serde_json::from_str(&contents)?;
    if let Some(seed) = seed_override {
        config.seed = seed;
    }
    let manifest = write_dataset(&config, count, out_dir)?;
    println!("{}", manifest.display());
    Ok(manifest)
}

/// `texterase train`: run the training loop to completion.
pub fn cmd_train(config_path: &Path) -> Result<PathBuf, CliError> {
    let contents = std::fs::read_to_string(config_path)?;
    let config: TrainConfig = serde_json::from_str(&contents)?;
    if !config.dataset_manifest.exists() {
        return Err(CliError::Usage(format!(
            "dataset manifest {} does not exist",
            config.dataset_manifest.display()
        )));
    }
    let ckpt = fit(&config)?;
    println!("{}", ckpt.display());
    Ok(ckpt)
}

fn format_for(path: &Path) -> Result<SaveFormat, CliError> {
    match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase) {
        Some(ext) if ext == "png" => Ok(SaveFormat::Png),
        Some(ext) if ext == "jpg" || ext == "jpeg" => Ok(SaveFormat::Jpeg { quality: 95 }),
        other => Err(CliError::Usage(format!("unsupported output extension {other:?}"))),
    }
}

/// `texterase erase`: run the crop/rectify/erase/paste pipeline over every
/// annotated region. Per-region failures are warnings, not errors.
#[allow(clippy::too_many_arguments)]
pub fn cmd_erase(
    input: &Path,
    regions_path: &Path,
    weights: &Path,
    output: &Path,
    mask_out: Option<&Path>,
    parallel: bool,
    expand_factor: Option<f64>,
) -> Result<(), CliError> {
    let canvas = load_image(input)?;
    let regions = load_regions(regions_path)?;
    let loaded = load_checkpoint(weights)?;
    let eraser = NetworkEraser::new(loaded.network);
    let opts = PipelineOptions {
        expand_factor: expand_factor.unwrap_or(DEFAULT_EXPAND_FACTOR),
        parallel,
    };
    let outcome = erase_regions(&canvas, &regions, &eraser, &opts);
    for (idx, reason) in &outcome.skipped {
        eprintln!("warning: region {idx} skipped: {reason}");
    }
    save_image(&outcome.image, output, format_for(output)?)?;
    if let Some(mask_path) = mask_out {
        save_mask(&binarize(&outcome.mask, DEFAULT_TAU), mask_path)?;
    }
    Ok(())
}

fn image_names(dir: &Path) -> Result<Vec<String>, CliError> {
    let mut names = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let entry = entry?;
        let name = entry.file_name().to_string_lossy().into_owned();
        let lower = name.to_ascii_lowercase();
        if lower.ends_with(".png") || lower.ends_with(".jpg") || lower.ends_with(".jpeg") {
            names.push(name);
        }
    }
    names.sort();
    Ok(names)
}

/// `texterase eval`: PSNR/SSIM/MSE over matched filename pairs.
pub fn cmd_eval(pred_dir: &Path, gt_dir: &Path, report_base: &Path) -> Result<(), CliError> {
    let pred_names = image_names(pred_dir)?;
    let gt_names = image_names(gt_dir)?;
    if pred_names != gt_names {
        let missing: Vec<&String> = pred_names
            .iter()
            .filter(|n| !gt_names.contains(n))
            .chain(gt_names.iter().filter(|n| !pred_names.contains(n)))
            .collect();
        return Err(CliError::Usage(format!(
            "prediction and ground-truth directories do not match: {missing:?}"
        )));
    }
    if pred_names.is_empty() {
        return Err(CliError::Usage("no images to evaluate".into()));
    }
    let mut pairs = Vec::with_capacity(pred_names.len());
    for name in &pred_names {
        let p = load_image(&pred_dir.join(name))?;
        let g = load_image(&gt_dir.join(name))?;
        pairs.push((name.clone(), p, g));
    }
    let report = evaluate_pairs(&pairs)?;
    let json_path = report_base.with_extension("json");
    let csv_path = report_base.with_extension("csv");
    report.write(&json_path, &csv_path)?;
    println!(
        "images: {}  mean PSNR: {:.4} dB  mean SSIM: {:.6}  mean MSE: {:.8}",
        report.images.len(),
        report.mean_psnr,
        report.mean_ssim,
        report.mean_mse
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn regions_file_parses_every_kind() {
        let json = r#"{"regions":[
            {"kind":"axis_aligned","points":[[1,2],[30,12]]},
            {"kind":"quad","points":[[0,0],[10,1],[11,8],[1,7]]},
            {"kind":"polygon","points":[[0,0],[5,1],[10,0],[10,8],[5,9],[0,8]]}
        ]}"#;
        let file: RegionsFile = serde_json::from_str(json).unwrap();
        let regions: Vec<TextRegion> = file.regions.iter().map(|r| r.to_region().unwrap()).collect();
        assert_eq!(regions[0].kind, RegionKind::AxisAligned);
        assert_eq!(regions[1].kind, RegionKind::Quad);
        assert_eq!(regions[2].kind, RegionKind::Polygon);
        assert_eq!(regions[2].points.len(), 6);
    }

    #[test]
    fn bad_point_counts_are_usage_errors() {
        let spec = RegionSpec {
            kind: RegionKind::Quad,
            points: vec![[0.0, 0.0], [1.0, 1.0]],
        };
        assert!(matches!(spec.to_region(), Err(CliError::Usage(_))));
        let spec = RegionSpec {
            kind: RegionKind::Polygon,
            points: vec![[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]],
        };
        assert!(matches!(spec.to_region(), Err(CliError::Usage(_))));
    }
}
