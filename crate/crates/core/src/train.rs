//! Training regimes: plain regression for the small-input upscaler,
//! adversarial training for the generator (single- and multi-discriminator),
//! and pretrain-then-finetune, all with validation-SNR checkpoint selection.
//!
//! Every run writes one checkpoint per epoch plus a `best.ckpt` copy and a
//! tab-separated `report.tsv` into its output directory. Runs are
//! deterministic: patch sampling, batch order, and weight init all derive
//! from the configured seed.

mod gan;
mod seg;

pub use gan::{train_muldis, train_srgan};
pub use seg::{train_segmenter, SegEpochRecord, SegTrainConfig, SegTrainReport};

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom as _;

use crate::error::{Error, Result};
use crate::eval::snr;
use crate::image::{
    crop_to_multiple, degrade, load_image, sample_patches, DatasetManifest, GrayImage,
    ManifestEntry, PatchPair, SCALE_FACTOR,
};
use crate::models::{
    build_fsrcnn, checkpoint_crc32, load_checkpoint, save_checkpoint, Checkpoint, CheckpointMeta,
    FsrcnnModel, GeneratorModel,
};
use crate::rng::{derive_seed, rng_from};
use crate::tensor::ops::{mse_loss, mse_loss_backward};
use crate::tensor::{adam_step, AdamConfig, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainMode {
    Fsrcnn,
    Srgan,
    Muldis,
}

impl TrainMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            TrainMode::Fsrcnn => "fsrcnn",
            TrainMode::Srgan => "srgan",
            TrainMode::Muldis => "muldis",
        }
    }

    pub fn parse(s: &str) -> Result<TrainMode> {
        match s {
            "fsrcnn" => Ok(TrainMode::Fsrcnn),
            "srgan" => Ok(TrainMode::Srgan),
            "muldis" => Ok(TrainMode::Muldis),
            other => Err(Error::Config(format!(
                "unknown training mode {other:?} (expected fsrcnn, srgan or muldis)"
            ))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub patches_per_image: usize,
    /// Validation images held out of training; `None` applies the default
    /// rule (100 when more are available, otherwise a fifth of the set).
    pub val_count: Option<usize>,
    pub seed: u64,
    pub init_checkpoint: Option<PathBuf>,
    /// Weight of the pixel reconstruction term in the generator loss.
    pub content_weight: f64,
    /// Train the generator on `log(1 − D(G(y)))` instead of the default
    /// `−log D(G(y))`.
    pub saturating_adversarial: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mode: TrainMode::Fsrcnn,
            epochs: 100,
            batch_size: 100,
            adam: AdamConfig::default(),
            patches_per_image: 4,
            val_count: None,
            seed: 0,
            init_checkpoint: None,
            content_weight: 1.0,
            saturating_adversarial: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.adam.validate()?;
        if self.batch_size == 0 || self.patches_per_image == 0 {
            return Err(Error::Config(format!(
                "batch_size ({}) and patches_per_image ({}) must be positive",
                self.batch_size, self.patches_per_image
            )));
        }
        if !self.content_weight.is_finite() || self.content_weight < 0.0 {
            return Err(Error::Config(format!(
                "content_weight must be a non-negative real, got {}",
                self.content_weight
            )));
        }
        Ok(())
    }

    pub fn resolved_val_count(&self, n_entries: usize) -> usize {
        self.val_count
            .unwrap_or_else(|| if n_entries > 100 { 100 } else { (n_entries / 5).max(1) })
    }

    /// Key-value pairs recorded in every checkpoint written by the run.
    pub fn meta_pairs(&self, val_count: usize) -> Vec<(String, String)> {
        vec![
            ("mode".into(), self.mode.as_str().into()),
            ("epochs".into(), self.epochs.to_string()),
            ("batch_size".into(), self.batch_size.to_string()),
            ("learning_rate".into(), self.adam.learning_rate.to_string()),
            (
                "patches_per_image".into(),
                self.patches_per_image.to_string(),
            ),
            ("val_count".into(), val_count.to_string()),
            ("content_weight".into(), self.content_weight.to_string()),
            (
                "saturating_adversarial".into(),
                self.saturating_adversarial.to_string(),
            ),
        ]
    }
}

/// One line of the training log. `epoch` 0 is the untrained starting point;
/// its loss fields are NaN because no batches ran.
#[derive(Debug, Clone)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss_content: f64,
    pub loss_adv: f64,
    pub loss_d: Vec<f64>,
    pub val_snr: f64,
}

/// Which discriminators a batch actually changed, established by comparing
/// every parameter bit-for-bit around the batch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoutingRecord {
    pub epoch: usize,
    pub batch: usize,
    pub dataset_id: u32,
    pub updated: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub records: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_checkpoint: PathBuf,
    pub finetuned_from: Option<(PathBuf, u32)>,
    pub routing: Vec<RoutingRecord>,
}

impl TrainReport {
    pub fn best_val_snr(&self) -> f64 {
        self.records[self.best_epoch].val_snr
    }
}

/// Deterministic disjoint validation/training split of manifest entries.
pub fn split_entries<'a>(
    manifest: &'a DatasetManifest,
    config: &TrainConfig,
) -> Result<(Vec<&'a ManifestEntry>, Vec<&'a ManifestEntry>)> {
    if manifest.is_empty() {
        return Err(Error::Config("training manifest has no entries".into()));
    }
    let n = manifest.len();
    let val_count = config.resolved_val_count(n);
    if val_count == 0 {
        return Err(Error::Config("validation set must not be empty".into()));
    }
    if val_count >= n && config.epochs > 0 {
        return Err(Error::Config(format!(
            "validation set of {val_count} leaves no training entries (manifest has {n})"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng_from(derive_seed(config.seed, "val-split", 0)));
    let val: Vec<&ManifestEntry> = order[..val_count.min(n)]
        .iter()
        .map(|&i| &manifest.entries[i])
        .collect();
    let train: Vec<&ManifestEntry> = order[val_count.min(n)..]
        .iter()
        .map(|&i| &manifest.entries[i])
        .collect();
    Ok((train, val))
}

/// A validation set with the degradation precomputed once.
pub struct ValSet {
    triples: Vec<(GrayImage, GrayImage, GrayImage)>,
}

impl ValSet {
    pub fn load(entries: &[&ManifestEntry]) -> Result<ValSet> {
        if entries.is_empty() {
            return Err(Error::Config("validation set must not be empty".into()));
        }
        let mut triples = Vec::with_capacity(entries.len());
        for entry in entries {
            let hr = crop_to_multiple(&load_image(&entry.image_path)?, SCALE_FACTOR)?;
            let (lr_small, lr_input) = degrade(&hr, SCALE_FACTOR)?;
            triples.push((hr, lr_small, lr_input));
        }
        Ok(ValSet { triples })
    }

    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }
}

/// Either super-resolution model, for validation scoring.
#[derive(Clone, Copy)]
pub enum SrModelRef<'a> {
    Fsrcnn(&'a FsrcnnModel),
    Generator(&'a GeneratorModel),
}

pub fn validate_cached(model: SrModelRef, val: &ValSet) -> Result<f64> {
    let mut acc = 0.0f64;
    for (hr, lr_small, lr_input) in &val.triples {
        let sr = match model {
            SrModelRef::Fsrcnn(m) => {
                GrayImage::from_tensor_plane(&m.forward(&lr_small.to_tensor())?, 0)?
            }
            SrModelRef::Generator(g) => {
                GrayImage::from_tensor_plane(&g.infer(&lr_input.to_tensor())?, 0)?
            }
        };
        acc += snr(hr, &sr)?;
    }
    Ok(acc / val.triples.len() as f64)
}

/// Mean validation SNR over `entries`: degrade ×4, super-resolve, compare.
pub fn validate(model: SrModelRef, entries: &[&ManifestEntry]) -> Result<f64> {
    validate_cached(model, &ValSet::load(entries)?)
}

pub(crate) fn load_training_images(entries: &[&ManifestEntry]) -> Result<Vec<GrayImage>> {
    entries.iter().map(|e| load_image(&e.image_path)).collect()
}

/// Fresh patches for one epoch. The salt layout keeps every
/// (epoch, dataset, refill, image) combination on its own RNG stream.
pub(crate) fn patch_salt(epoch: usize, dataset: usize, refill: u64, image: usize) -> u64 {
    ((epoch as u64) << 44) ^ ((dataset as u64) << 40) ^ (refill << 24) ^ image as u64
}

pub(crate) fn epoch_patches(
    images: &[GrayImage],
    config: &TrainConfig,
    epoch: usize,
    dataset: usize,
    refill: u64,
) -> Result<Vec<PatchPair>> {
    let mut all = Vec::with_capacity(images.len() * config.patches_per_image);
    for (i, img) in images.iter().enumerate() {
        let seed = derive_seed(config.seed, "patches", patch_salt(epoch, dataset, refill, i));
        all.extend(sample_patches(img, config.patches_per_image, seed)?);
    }
    let order_seed = derive_seed(
        config.seed,
        "patch-order",
        patch_salt(epoch, dataset, refill, 0),
    );
    all.shuffle(&mut rng_from(order_seed));
    Ok(all)
}

pub(crate) fn batch_hr(patches: &[PatchPair]) -> Result<Tensor> {
    GrayImage::batch_to_tensor(&patches.iter().map(|p| &p.hr).collect::<Vec<_>>())
}

pub(crate) fn batch_lr_small(patches: &[PatchPair]) -> Result<Tensor> {
    GrayImage::batch_to_tensor(&patches.iter().map(|p| &p.lr_small).collect::<Vec<_>>())
}

pub(crate) fn batch_lr_input(patches: &[PatchPair]) -> Result<Tensor> {
    GrayImage::batch_to_tensor(&patches.iter().map(|p| &p.lr_input).collect::<Vec<_>>())
}

pub(crate) struct RunDir<'a> {
    out_dir: &'a Path,
}

impl<'a> RunDir<'a> {
    pub(crate) fn create(out_dir: &'a Path) -> Result<RunDir<'a>> {
        std::fs::create_dir_all(out_dir).map_err(crate::error::io_err(out_dir))?;
        Ok(RunDir { out_dir })
    }

    pub(crate) fn save_epoch(&self, ckpt: &Checkpoint, epoch: usize) -> Result<PathBuf> {
        let path = self.out_dir.join(format!("epoch_{epoch}.ckpt"));
        save_checkpoint(ckpt, &path)?;
        Ok(path)
    }

    pub(crate) fn finish(
        &self,
        records: Vec<EpochRecord>,
        epoch_paths: &[PathBuf],
        n_discriminators: usize,
        finetuned_from: Option<(PathBuf, u32)>,
        routing: Vec<RoutingRecord>,
    ) -> Result<TrainReport> {
        let mut best_epoch = 0;
        for rec in &records {
            if rec.val_snr > records[best_epoch].val_snr {
                best_epoch = rec.epoch;
            }
        }
        let best_path = self.out_dir.join("best.ckpt");
        std::fs::copy(&epoch_paths[best_epoch], &best_path)
            .map_err(crate::error::io_err(&best_path))?;

        let report = TrainReport {
            records,
            best_epoch,
            best_checkpoint: best_path,
            finetuned_from,
            routing,
        };
        write_report(&report, n_discriminators, &self.out_dir.join("report.tsv"))?;
        if !report.routing.is_empty() {
            write_routing(&report.routing, &self.out_dir.join("routing.tsv"))?;
        }
        Ok(report)
    }
}

/// Line-oriented training log: optional finetune provenance comment, header,
/// one row per epoch, and a final `best <epoch> <path>` line.
pub fn write_report(report: &TrainReport, n_discriminators: usize, path: &Path) -> Result<()> {
    let mut out = String::new();
    if let Some((parent, crc)) = &report.finetuned_from {
        out.push_str(&format!(
            "# finetuned_from {} crc32 0x{crc:08x}\n",
            parent.display()
        ));
    }
    out.push_str("epoch\tloss_content\tloss_adv");
    for i in 0..n_discriminators {
        out.push_str(&format!("\tloss_d{i}"));
    }
    out.push_str("\tval_snr\n");
    for rec in &report.records {
        out.push_str(&format!(
            "{}\t{}\t{}",
            rec.epoch, rec.loss_content, rec.loss_adv
        ));
        for i in 0..n_discriminators {
            out.push_str(&format!("\t{}", rec.loss_d.get(i).copied().unwrap_or(f64::NAN)));
        }
        out.push_str(&format!("\t{}\n", rec.val_snr));
    }
    out.push_str(&format!(
        "best {} {}\n",
        report.best_epoch,
        report.best_checkpoint.display()
    ));
    std::fs::write(path, out).map_err(crate::error::io_err(path))
}

fn write_routing(routing: &[RoutingRecord], path: &Path) -> Result<()> {
    let mut out = String::from("epoch\tbatch\tdataset_id\tupdated\n");
    for r in routing {
        let updated: Vec<String> = r.updated.iter().map(|u| u.to_string()).collect();
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\n",
            r.epoch,
            r.batch,
            r.dataset_id,
            updated.join(",")
        ));
    }
    std::fs::write(path, out).map_err(crate::error::io_err(path))
}

pub(crate) fn finetune_provenance(
    config: &TrainConfig,
) -> Result<Option<(PathBuf, u32)>> {
    match &config.init_checkpoint {
        Some(path) => Ok(Some((path.clone(), checkpoint_crc32(path)?))),
        None => Ok(None),
    }
}

/// Minimizes the mean squared reconstruction error of the upscaler with
/// Adam, resampling patches every epoch.
pub fn train_fsrcnn(
    manifest: &DatasetManifest,
    config: &TrainConfig,
    out_dir: &Path,
) -> Result<TrainReport> {
    config.validate()?;
    let (train_entries, val_entries) = split_entries(manifest, config)?;
    let val = ValSet::load(&val_entries)?;
    let images = load_training_images(&train_entries)?;
    if images.is_empty() && config.epochs > 0 {
        return Err(Error::Config("no training entries left after the validation split".into()));
    }

    let mut model = match &config.init_checkpoint {
        Some(path) => FsrcnnModel::from_checkpoint(&load_checkpoint(path)?, path)?,
        None => build_fsrcnn(Default::default(), derive_seed(config.seed, "init", 0))?,
    };
    let finetuned_from = finetune_provenance(config)?;
    let run = RunDir::create(out_dir)?;
    let meta_pairs = config.meta_pairs(val.len());

    let mut records = Vec::with_capacity(config.epochs + 1);
    let mut epoch_paths = Vec::with_capacity(config.epochs + 1);

    let snapshot = |model: &FsrcnnModel, epoch: usize, val_snr: f64| -> Checkpoint {
        model.to_checkpoint(CheckpointMeta {
            epoch: epoch as u32,
            val_snr,
            seed: config.seed,
            config: meta_pairs.clone(),
        })
    };

    let val0 = validate_cached(SrModelRef::Fsrcnn(&model), &val)?;
    records.push(EpochRecord {
        epoch: 0,
        loss_content: f64::NAN,
        loss_adv: f64::NAN,
        loss_d: vec![],
        val_snr: val0,
    });
    epoch_paths.push(run.save_epoch(&snapshot(&model, 0, val0), 0)?);

    for epoch in 1..=config.epochs {
        let patches = epoch_patches(&images, config, epoch, 0, 0)?;
        let mut loss_sum = 0.0f64;
        let mut weight = 0.0f64;
        for chunk in patches.chunks(config.batch_size) {
            let lr_small = batch_lr_small(chunk)?;
            let hr = batch_hr(chunk)?;
            let (pred, cache) = model.forward_cached(&lr_small)?;
            let loss = mse_loss(&pred, &hr)?;
            let grad = mse_loss_backward(&pred, &hr)?;
            model.backward(&cache, &grad)?;
            for p in model.net.params_mut() {
                adam_step(p, &config.adam);
            }
            loss_sum += loss * chunk.len() as f64;
            weight += chunk.len() as f64;
        }
        let val_snr = validate_cached(SrModelRef::Fsrcnn(&model), &val)?;
        records.push(EpochRecord {
            epoch,
            loss_content: loss_sum / weight,
            loss_adv: f64::NAN,
            loss_d: vec![],
            val_snr,
        });
        epoch_paths.push(run.save_epoch(&snapshot(&model, epoch, val_snr), epoch)?);
    }

    run.finish(records, &epoch_paths, 0, finetuned_from, vec![])
}

/// Runs the regime selected by `config.mode`.
pub fn train(
    manifest: &DatasetManifest,
    config: &TrainConfig,
    out_dir: &Path,
) -> Result<TrainReport> {
    match config.mode {
        TrainMode::Fsrcnn => train_fsrcnn(manifest, config, out_dir),
        TrainMode::Srgan => train_srgan(manifest, config, out_dir),
        TrainMode::Muldis => train_muldis(manifest, config, out_dir),
    }
}

/// Same as [`train`], but starts from a saved checkpoint whose identity is
/// recorded in the report.
pub fn finetune(
    init_checkpoint: &Path,
    manifest: &DatasetManifest,
    config: &TrainConfig,
    out_dir: &Path,
) -> Result<TrainReport> {
    let mut config = config.clone();
    config.init_checkpoint = Some(init_checkpoint.to_path_buf());
    train(manifest, &config, out_dir)
}
