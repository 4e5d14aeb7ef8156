//! Supervised training of the per-pixel segmenter on image/mask pairs.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom as _;

use crate::error::{Error, Result};
use crate::eval::{iou, segment, SEG_THRESHOLD};
use crate::image::{
    crop_to_multiple, load_image, load_mask, patch_corners, BinaryMask, DatasetManifest,
    GrayImage, ManifestEntry, PATCH_SIZE,
};
use crate::models::{build_segmenter, save_checkpoint, CheckpointMeta, SegmenterModel};
use crate::rng::{derive_seed, rng_from};
use crate::tensor::ops::{bce_with_logits, bce_with_logits_backward};
use crate::tensor::{adam_step, AdamConfig, Tensor};

use super::patch_salt;

#[derive(Debug, Clone)]
pub struct SegTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub patches_per_image: usize,
    pub val_count: Option<usize>,
    pub seed: u64,
}

impl Default for SegTrainConfig {
    fn default() -> Self {
        SegTrainConfig {
            epochs: 30,
            batch_size: 8,
            adam: AdamConfig::default(),
            patches_per_image: 4,
            val_count: None,
            seed: 0,
        }
    }
}

impl SegTrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.adam.validate()?;
        if self.batch_size == 0 || self.patches_per_image == 0 {
            return Err(Error::Config(format!(
                "batch_size ({}) and patches_per_image ({}) must be positive",
                self.batch_size, self.patches_per_image
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SegEpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub val_iou: f64,
}

#[derive(Debug, Clone)]
pub struct SegTrainReport {
    pub records: Vec<SegEpochRecord>,
    pub best_epoch: usize,
    pub best_checkpoint: PathBuf,
}

fn write_seg_report(report: &SegTrainReport, path: &Path) -> Result<()> {
    let mut out = String::from("epoch\tloss\tval_iou\n");
    for r in &report.records {
        out.push_str(&format!("{}\t{}\t{}\n", r.epoch, r.loss, r.val_iou));
    }
    out.push_str(&format!(
        "best {} {}\n",
        report.best_epoch,
        report.best_checkpoint.display()
    ));
    std::fs::write(path, out).map_err(crate::error::io_err(path))
}

fn load_pairs(entries: &[&ManifestEntry]) -> Result<Vec<(GrayImage, BinaryMask)>> {
    entries
        .iter()
        .map(|e| {
            let mask_path = e.mask_path.as_ref().expect("checked above");
            Ok((load_image(&e.image_path)?, load_mask(mask_path)?))
        })
        .collect()
}

fn mean_val_iou(model: &SegmenterModel, val: &[(GrayImage, BinaryMask)]) -> Result<f64> {
    let mut acc = 0.0f64;
    for (img, mask) in val {
        acc += iou(&segment(img, model, SEG_THRESHOLD)?, mask)?;
    }
    Ok(acc / val.len() as f64)
}

/// Minimizes per-pixel binary cross-entropy on 64x64 patches; checkpoints
/// are selected by mean validation overlap (stored in the checkpoint's
/// validation-score slot).
pub fn train_segmenter(
    manifest: &DatasetManifest,
    config: &SegTrainConfig,
    out_dir: &Path,
) -> Result<SegTrainReport> {
    config.validate()?;
    if manifest.is_empty() {
        return Err(Error::Config("training manifest has no entries".into()));
    }
    let missing: Vec<String> = manifest
        .entries
        .iter()
        .filter(|e| e.mask_path.is_none())
        .map(|e| e.image_path.display().to_string())
        .collect();
    if !missing.is_empty() {
        return Err(Error::Config(format!(
            "segmenter training needs a mask for every entry; missing for: {}",
            missing.join(", ")
        )));
    }

    let n = manifest.len();
    let val_count = config
        .val_count
        .unwrap_or_else(|| if n > 100 { 100 } else { (n / 5).max(1) });
    if val_count >= n && config.epochs > 0 {
        return Err(Error::Config(format!(
            "validation set of {val_count} leaves no training entries (manifest has {n})"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng_from(derive_seed(config.seed, "val-split", 0)));
    let val_entries: Vec<&ManifestEntry> = order[..val_count.min(n)]
        .iter()
        .map(|&i| &manifest.entries[i])
        .collect();
    let train_entries: Vec<&ManifestEntry> = order[val_count.min(n)..]
        .iter()
        .map(|&i| &manifest.entries[i])
        .collect();

    let train_pairs = load_pairs(&train_entries)?;
    let val_pairs: Vec<(GrayImage, BinaryMask)> = load_pairs(&val_entries)?
        .into_iter()
        .map(|(img, mask)| {
            let img = crop_to_multiple(&img, 2)?;
            let mask = mask.crop(0, 0, img.width(), img.height())?;
            Ok((img, mask))
        })
        .collect::<Result<_>>()?;

    std::fs::create_dir_all(out_dir).map_err(crate::error::io_err(out_dir))?;
    let mut model = build_segmenter(derive_seed(config.seed, "init", 0));

    let meta_pairs = vec![
        ("metric".to_string(), "iou".to_string()),
        ("epochs".to_string(), config.epochs.to_string()),
        ("batch_size".to_string(), config.batch_size.to_string()),
        (
            "learning_rate".to_string(),
            config.adam.learning_rate.to_string(),
        ),
        ("val_count".to_string(), val_count.to_string()),
    ];

    let mut records = Vec::with_capacity(config.epochs + 1);
    let mut epoch_paths = Vec::with_capacity(config.epochs + 1);
    let mut snapshot = |model: &SegmenterModel, epoch: usize, loss: f64| -> Result<SegEpochRecord> {
        let val_iou = mean_val_iou(model, &val_pairs)?;
        let ckpt = model.to_checkpoint(CheckpointMeta {
            epoch: epoch as u32,
            val_snr: val_iou,
            seed: config.seed,
            config: meta_pairs.clone(),
        });
        let path = out_dir.join(format!("epoch_{epoch}.ckpt"));
        save_checkpoint(&ckpt, &path)?;
        epoch_paths.push(path);
        Ok(SegEpochRecord {
            epoch,
            loss,
            val_iou,
        })
    };

    records.push(snapshot(&model, 0, f64::NAN)?);

    for epoch in 1..=config.epochs {
        let mut patches: Vec<(GrayImage, BinaryMask)> = Vec::new();
        for (i, (img, mask)) in train_pairs.iter().enumerate() {
            let seed = derive_seed(config.seed, "patches", patch_salt(epoch, 0, 0, i));
            for (x0, y0) in
                patch_corners(img.width(), img.height(), config.patches_per_image, seed)?
            {
                patches.push((
                    img.crop(x0, y0, PATCH_SIZE, PATCH_SIZE)?,
                    mask.crop(x0, y0, PATCH_SIZE, PATCH_SIZE)?,
                ));
            }
        }
        let order_seed = derive_seed(config.seed, "patch-order", patch_salt(epoch, 0, 0, 0));
        patches.shuffle(&mut rng_from(order_seed));

        let mut loss_sum = 0.0f64;
        let mut weight = 0.0f64;
        for chunk in patches.chunks(config.batch_size) {
            let images = GrayImage::batch_to_tensor(&chunk.iter().map(|(i, _)| i).collect::<Vec<_>>())?;
            let targets = {
                let planes: Vec<Tensor> = chunk.iter().map(|(_, m)| m.to_tensor()).collect();
                let mut data = Vec::with_capacity(chunk.len() * PATCH_SIZE * PATCH_SIZE);
                for p in &planes {
                    data.extend_from_slice(p.data());
                }
                Tensor::new([chunk.len(), 1, PATCH_SIZE, PATCH_SIZE], data)?
            };
            let (logits, cache) = model.forward_cached(&images)?;
            let loss = bce_with_logits(&logits, &targets)?;
            let grad = bce_with_logits_backward(&logits, &targets)?;
            model.backward(&cache, &grad)?;
            for p in model.net.params_mut() {
                adam_step(p, &config.adam);
            }
            loss_sum += loss * chunk.len() as f64;
            weight += chunk.len() as f64;
        }
        records.push(snapshot(&model, epoch, loss_sum / weight)?);
    }

    let mut best_epoch = 0;
    for rec in &records {
        if rec.val_iou > records[best_epoch].val_iou {
            best_epoch = rec.epoch;
        }
    }
    let best_path = out_dir.join("best.ckpt");
    std::fs::copy(&epoch_paths[best_epoch], &best_path)
        .map_err(crate::error::io_err(&best_path))?;

    let report = SegTrainReport {
        records,
        best_epoch,
        best_checkpoint: best_path,
    };
    write_seg_report(&report, &out_dir.join("report.tsv"))?;
    Ok(report)
}
