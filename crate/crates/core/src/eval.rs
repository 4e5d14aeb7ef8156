//! Reconstruction and segmentation metrics plus side-by-side model
//! comparison over a test manifest.

use std::path::Path;

use crate::error::{Error, Result};
use crate::image::{
    crop_to_multiple, degrade, load_image, load_mask, BinaryMask, DatasetManifest, GrayImage,
    SCALE_FACTOR,
};
use crate::models::{FsrcnnModel, GeneratorModel, SegmenterModel};
use crate::tensor::ops::sigmoid;

/// SNR reported when the images are identical (MSE floored at 1e-12).
pub const SNR_CAP_DB: f64 = 120.0;
const MSE_FLOOR: f64 = 1e-12;

/// Probability threshold used for Table-style reports.
pub const SEG_THRESHOLD: f64 = 0.5;

fn check_same_dims(
    context: &'static str,
    a: (usize, usize),
    b: (usize, usize),
) -> Result<()> {
    if a != b {
        return Err(Error::Shape {
            context,
            expected: format!("{}x{}", a.0, a.1),
            actual: format!("{}x{}", b.0, b.1),
        });
    }
    Ok(())
}

/// Reconstruction quality in decibels: `10·log10(1 / mse)` over [0,1] pixels.
pub fn snr(hr: &GrayImage, sr: &GrayImage) -> Result<f64> {
    check_same_dims("snr", (hr.width(), hr.height()), (sr.width(), sr.height()))?;
    let mut acc = 0.0f64;
    for (&a, &b) in hr.pixels().iter().zip(sr.pixels()) {
        let d = a as f64 - b as f64;
        acc += d * d;
    }
    let mse = (acc / hr.pixels().len() as f64).max(MSE_FLOOR);
    Ok(10.0 * (1.0 / mse).log10())
}

/// Mask agreement: `2·|overlap| / (|a| + |b|)`, counting the overlap twice
/// over the summed mask sizes. Two empty masks agree perfectly (1.0).
pub fn iou(b_seg: &BinaryMask, b_gt: &BinaryMask) -> Result<f64> {
    check_same_dims(
        "iou",
        (b_seg.width(), b_seg.height()),
        (b_gt.width(), b_gt.height()),
    )?;
    let mut overlap = 0usize;
    for y in 0..b_seg.height() {
        for x in 0..b_seg.width() {
            if b_seg.get(x, y) && b_gt.get(x, y) {
                overlap += 1;
            }
        }
    }
    let total = b_seg.count_ones() + b_gt.count_ones();
    if total == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * overlap as f64 / total as f64)
}

/// Strict intersection-over-union (`|∩| / |∪|`). Not used in reports; kept
/// for comparison against [`iou`], which counts overlap twice.
pub fn jaccard(b_seg: &BinaryMask, b_gt: &BinaryMask) -> Result<f64> {
    check_same_dims(
        "jaccard",
        (b_seg.width(), b_seg.height()),
        (b_gt.width(), b_gt.height()),
    )?;
    let mut inter = 0usize;
    let mut union = 0usize;
    for y in 0..b_seg.height() {
        for x in 0..b_seg.width() {
            let (a, b) = (b_seg.get(x, y), b_gt.get(x, y));
            inter += (a && b) as usize;
            union += (a || b) as usize;
        }
    }
    if union == 0 {
        return Ok(1.0);
    }
    Ok(inter as f64 / union as f64)
}

/// Binarizes the segmenter's sigmoid probabilities; ties at the threshold
/// classify as root.
pub fn segment(img: &GrayImage, segmenter: &SegmenterModel, threshold: f64) -> Result<BinaryMask> {
    let logits = segmenter.forward(&img.to_tensor())?;
    let mut mask = BinaryMask::zeros(img.width(), img.height());
    for y in 0..img.height() {
        for x in 0..img.width() {
            let z = logits.data()[y * img.width() + x] as f64;
            mask.set(x, y, sigmoid(z) >= threshold);
        }
    }
    Ok(mask)
}

/// Sample standard deviation (n−1 denominator) divided by `sqrt(n)`; a
/// single observation has no spread estimate and returns 0.
pub fn standard_error(values: &[f64]) -> Result<f64> {
    let n = values.len();
    if n == 0 {
        return Err(Error::InvalidParam(
            "standard_error needs at least one value".into(),
        ));
    }
    if n == 1 {
        return Ok(0.0);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    Ok(var.sqrt() / (n as f64).sqrt())
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// One comparison-table row.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRecord {
    pub model_name: String,
    pub snr_mean: Option<f64>,
    pub snr_se: Option<f64>,
    pub iou_mean: Option<f64>,
    pub iou_se: Option<f64>,
    pub n_images: usize,
}

/// Super-resolver under test: receives the small LR image and its bicubic
/// upsampling back to original size, returns the SR estimate.
pub type SrFn<'a> = Box<dyn Fn(&GrayImage, &GrayImage) -> Result<GrayImage> + 'a>;

/// Adapts the small-input upscaler to the comparison harness.
pub fn fsrcnn_sr(model: &FsrcnnModel) -> SrFn<'_> {
    Box::new(move |lr_small, _| {
        let y = model.forward(&lr_small.to_tensor())?;
        GrayImage::from_tensor_plane(&y, 0)
    })
}

/// Adapts the residual generator (which consumes the upsampled input).
pub fn generator_sr(model: &GeneratorModel) -> SrFn<'_> {
    Box::new(move |_, lr_input| {
        let y = model.infer(&lr_input.to_tensor())?;
        GrayImage::from_tensor_plane(&y, 0)
    })
}

/// Degrades every test image by the fixed ×4 factor, applies each model, and
/// aggregates SNR (and IoU when a segmenter is given) into one record per
/// row. A "Bicubic" lower-bound row is always computed directly from the
/// degraded input, and an "HR" upper-bound row (IoU only) closes the table.
/// Models are applied to images in manifest order.
pub fn evaluate_models(
    models: &[(String, SrFn)],
    manifest: &DatasetManifest,
    segmenter: Option<&SegmenterModel>,
) -> Result<Vec<EvalRecord>> {
    if manifest.is_empty() {
        return Err(Error::Config("evaluation manifest has no entries".into()));
    }
    if segmenter.is_some() {
        let missing: Vec<String> = manifest
            .entries
            .iter()
            .filter(|e| e.mask_path.is_none())
            .map(|e| e.image_path.display().to_string())
            .collect();
        if !missing.is_empty() {
            return Err(Error::Config(format!(
                "IoU evaluation needs a ground-truth mask for every entry; missing for: {}",
                missing.join(", ")
            )));
        }
    }

    let n_rows = models.len() + 2;
    let mut snrs: Vec<Vec<f64>> = vec![Vec::new(); n_rows];
    let mut ious: Vec<Vec<f64>> = vec![Vec::new(); n_rows];

    for entry in &manifest.entries {
        let hr = crop_to_multiple(&load_image(&entry.image_path)?, SCALE_FACTOR)?;
        let (lr_small, lr_input) = degrade(&hr, SCALE_FACTOR)?;
        let gt = match (segmenter, &entry.mask_path) {
            (Some(_), Some(path)) => {
                let full = load_mask(path)?;
                Some(full.crop(0, 0, hr.width(), hr.height())?)
            }
            _ => None,
        };

        let mut score = |row: usize, sr: &GrayImage, with_snr: bool| -> Result<()> {
            if with_snr {
                snrs[row].push(snr(&hr, sr)?);
            }
            if let (Some(seg), Some(gt)) = (segmenter, &gt) {
                ious[row].push(iou(&segment(sr, seg, SEG_THRESHOLD)?, gt)?);
            }
            Ok(())
        };

        score(0, &lr_input, true)?;
        for (i, (_, apply)) in models.iter().enumerate() {
            let sr = apply(&lr_small, &lr_input)?;
            score(1 + i, &sr, true)?;
        }
        score(n_rows - 1, &hr, false)?;
    }

    let n_images = manifest.len();
    let mut records = Vec::with_capacity(n_rows);
    for (row, name) in std::iter::once("Bicubic".to_string())
        .chain(models.iter().map(|(n, _)| n.clone()))
        .chain(std::iter::once("HR".to_string()))
        .enumerate()
    {
        let (snr_mean, snr_se) = if snrs[row].is_empty() {
            (None, None)
        } else {
            (Some(mean(&snrs[row])), Some(standard_error(&snrs[row])?))
        };
        let (iou_mean, iou_se) = if ious[row].is_empty() {
            (None, None)
        } else {
            (Some(mean(&ious[row])), Some(standard_error(&ious[row])?))
        };
        records.push(EvalRecord {
            model_name: name,
            snr_mean,
            snr_se,
            iou_mean,
            iou_se,
            n_images,
        });
    }
    Ok(records)
}

fn fmt_pair(mean: Option<f64>, se: Option<f64>, decimals: usize) -> String {
    match (mean, se) {
        (Some(m), Some(s)) => format!("{m:.decimals$} ({s:.decimals$})"),
        _ => "---".into(),
    }
}

/// Human-readable aligned table, one row per record, numbered from 1.
pub fn format_eval_table(records: &[EvalRecord]) -> String {
    let mut rows = vec![(
        "model".to_string(),
        "SNR (se)".to_string(),
        "IoU (se)".to_string(),
    )];
    for (i, r) in records.iter().enumerate() {
        rows.push((
            format!("{}. {}", i + 1, r.model_name),
            fmt_pair(r.snr_mean, r.snr_se, 2),
            fmt_pair(r.iou_mean, r.iou_se, 4),
        ));
    }
    let w0 = rows.iter().map(|r| r.0.len()).max().unwrap();
    let w1 = rows.iter().map(|r| r.1.len()).max().unwrap();
    let mut out = String::new();
    for (a, b, c) in rows {
        out.push_str(&format!("{a:<w0$}  {b:<w1$}  {c}\n"));
    }
    out
}

/// Tab-separated counterpart of [`format_eval_table`], absent values as
/// `---`.
pub fn write_eval_tsv(records: &[EvalRecord], path: &Path) -> Result<()> {
    let fmt = |v: Option<f64>| match v {
        Some(v) => format!("{v:.6}"),
        None => "---".into(),
    };
    let mut out = String::from("index\tmodel\tsnr_mean\tsnr_se\tiou_mean\tiou_se\tn_images\n");
    for (i, r) in records.iter().enumerate() {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
            i + 1,
            r.model_name,
            fmt(r.snr_mean),
            fmt(r.snr_se),
            fmt(r.iou_mean),
            fmt(r.iou_se),
            r.n_images
        ));
    }
    std::fs::write(path, out).map_err(crate::error::io_err(path))
}
