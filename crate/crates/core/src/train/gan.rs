//! Adversarial training: alternating discriminator/generator updates, with
//! an optional bank of per-dataset discriminators.

use std::collections::VecDeque;
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::{DatasetManifest, GrayImage, ManifestEntry, PatchPair};
use crate::models::{
    build_discriminator, build_generator, load_checkpoint, CheckpointMeta, DiscriminatorModel,
    GeneratorModel,
};
use crate::rng::derive_seed;
use crate::tensor::ops::{
    bce_with_logits_const, bce_with_logits_const_backward, mse_loss, mse_loss_backward,
};
use crate::tensor::{adam_step, Tensor};

use super::{
    batch_hr, batch_lr_input, epoch_patches, finetune_provenance, load_training_images,
    split_entries, validate_cached, EpochRecord, RoutingRecord, RunDir, SrModelRef, TrainConfig,
    TrainReport, ValSet,
};

pub(crate) struct GanLosses {
    pub content: f64,
    pub adv: f64,
    pub d: f64,
}

/// One discriminator step followed by one generator step on the same batch.
///
/// The discriminator trains on the real patches (label 1) against the
/// generator's outputs (label 0). Its backward pass walks only its own
/// layer cache, so no gradient reaches the generator during that step. The
/// generator then minimizes its adversarial term against the freshly updated
/// discriminator plus the weighted reconstruction error, propagating through
/// the discriminator with parameter accumulation off.
pub(crate) fn gan_batch_step(
    gen: &mut GeneratorModel,
    disc: &mut DiscriminatorModel,
    hr: &Tensor,
    lr_input: &Tensor,
    config: &TrainConfig,
) -> Result<GanLosses> {
    let (fake, cache_gen) = gen.forward_cached(lr_input)?;
    let (logits_real, cache_real) = disc.forward_cached(hr)?;
    let loss_real = bce_with_logits_const(&logits_real, 1.0);
    disc.backward(
        &cache_real,
        &bce_with_logits_const_backward(&logits_real, 1.0),
        true,
    )?;
    let (logits_fake, cache_fake) = disc.forward_cached(&fake)?;
    let loss_fake = bce_with_logits_const(&logits_fake, 0.0);
    disc.backward(
        &cache_fake,
        &bce_with_logits_const_backward(&logits_fake, 0.0),
        true,
    )?;
    for p in disc.net.params_mut() {
        adam_step(p, &config.adam);
    }

    let (logits, cache_disc) = disc.forward_cached(&fake)?;
    let (adv, grad_logits) = if config.saturating_adversarial {
        let mut g = bce_with_logits_const_backward(&logits, 0.0);
        for v in g.data_mut() {
            *v = -*v;
        }
        (-bce_with_logits_const(&logits, 0.0), g)
    } else {
        (
            bce_with_logits_const(&logits, 1.0),
            bce_with_logits_const_backward(&logits, 1.0),
        )
    };
    let mut grad_fake = disc.backward(&cache_disc, &grad_logits, false)?;
    let content = mse_loss(&fake, hr)?;
    grad_fake.add_scaled(&mse_loss_backward(&fake, hr)?, config.content_weight as f32);
    gen.backward(&cache_gen, &grad_fake)?;
    for p in gen.net.params_mut() {
        adam_step(p, &config.adam);
    }

    Ok(GanLosses {
        content,
        adv,
        d: loss_real + loss_fake,
    })
}

fn init_generator(config: &TrainConfig) -> Result<GeneratorModel> {
    match &config.init_checkpoint {
        Some(path) => GeneratorModel::from_checkpoint(&load_checkpoint(path)?, path),
        None => Ok(build_generator(derive_seed(config.seed, "init", 0))),
    }
}

/// Single-dataset adversarial training; checkpoints track the generator.
pub fn train_srgan(
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

    let mut gen = init_generator(config)?;
    let mut disc = build_discriminator(derive_seed(config.seed, "disc", 0));
    let finetuned_from = finetune_provenance(config)?;
    let run = RunDir::create(out_dir)?;
    let meta_pairs = config.meta_pairs(val.len());

    let mut records = Vec::with_capacity(config.epochs + 1);
    let mut epoch_paths = Vec::with_capacity(config.epochs + 1);

    let record_epoch = |gen: &GeneratorModel,
                        epoch: usize,
                        losses: Option<(f64, f64, f64)>,
                        records: &mut Vec<EpochRecord>,
                        epoch_paths: &mut Vec<std::path::PathBuf>|
     -> Result<()> {
        let val_snr = validate_cached(SrModelRef::Generator(gen), &val)?;
        let (loss_content, loss_adv, loss_d) = losses.unwrap_or((f64::NAN, f64::NAN, f64::NAN));
        records.push(EpochRecord {
            epoch,
            loss_content,
            loss_adv,
            loss_d: vec![loss_d],
            val_snr,
        });
        let ckpt = gen.to_checkpoint(CheckpointMeta {
            epoch: epoch as u32,
            val_snr,
            seed: config.seed,
            config: meta_pairs.clone(),
        });
        epoch_paths.push(run.save_epoch(&ckpt, epoch)?);
        Ok(())
    };

    record_epoch(&gen, 0, None, &mut records, &mut epoch_paths)?;

    for epoch in 1..=config.epochs {
        let patches = epoch_patches(&images, config, epoch, 0, 0)?;
        let (mut content, mut adv, mut d, mut weight) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
        for chunk in patches.chunks(config.batch_size) {
            let hr = batch_hr(chunk)?;
            let lr_input = batch_lr_input(chunk)?;
            let losses = gan_batch_step(&mut gen, &mut disc, &hr, &lr_input, config)?;
            let w = chunk.len() as f64;
            content += losses.content * w;
            adv += losses.adv * w;
            d += losses.d * w;
            weight += w;
        }
        record_epoch(
            &gen,
            epoch,
            Some((content / weight, adv / weight, d / weight)),
            &mut records,
            &mut epoch_paths,
        )?;
    }

    run.finish(records, &epoch_paths, 1, finetuned_from, vec![])
}

/// Endless per-dataset patch source: resamples a fresh shuffled pool
/// whenever the current one runs out, bumping the refill counter so every
/// pool draws from its own RNG stream.
struct PatchQueue<'a> {
    images: &'a [GrayImage],
    dataset_index: usize,
    refill: u64,
    buf: VecDeque<PatchPair>,
}

impl<'a> PatchQueue<'a> {
    fn new(images: &'a [GrayImage], dataset_index: usize) -> PatchQueue<'a> {
        PatchQueue {
            images,
            dataset_index,
            refill: 0,
            buf: VecDeque::new(),
        }
    }

    fn next_batch(
        &mut self,
        count: usize,
        config: &TrainConfig,
        epoch: usize,
    ) -> Result<Vec<PatchPair>> {
        let mut out = Vec::with_capacity(count);
        while out.len() < count {
            if self.buf.is_empty() {
                let pool =
                    epoch_patches(self.images, config, epoch, self.dataset_index, self.refill)?;
                self.refill += 1;
                self.buf.extend(pool);
            }
            while out.len() < count {
                match self.buf.pop_front() {
                    Some(p) => out.push(p),
                    None => break,
                }
            }
        }
        Ok(out)
    }
}

fn flatten_params(disc: &DiscriminatorModel) -> Vec<f32> {
    let mut out = Vec::new();
    for (_, value) in disc.net.named_values() {
        out.extend_from_slice(value.data());
    }
    out
}

/// Multi-discriminator training: one discriminator per dataset, batches
/// visiting datasets round-robin with equal batch counts per epoch. Small
/// datasets are oversampled to keep up. Every batch's routing is verified by
/// bit-comparing all discriminator parameters around the update.
pub fn train_muldis(
    manifest: &DatasetManifest,
    config: &TrainConfig,
    out_dir: &Path,
) -> Result<TrainReport> {
    config.validate()?;
    let ids = manifest.dataset_ids();
    if ids.len() < 2 {
        return Err(Error::Config(format!(
            "multi-discriminator mode needs at least 2 datasets, manifest has {}",
            ids.len()
        )));
    }

    let (train_entries, val_entries) = split_entries(manifest, config)?;
    let val = ValSet::load(&val_entries)?;

    let mut per_dataset: Vec<Vec<&ManifestEntry>> = vec![Vec::new(); ids.len()];
    for entry in &train_entries {
        let k = ids.iter().position(|&id| id == entry.dataset_id).unwrap();
        per_dataset[k].push(entry);
    }
    if config.epochs > 0 {
        if let Some(k) = per_dataset.iter().position(|v| v.is_empty()) {
            return Err(Error::Config(format!(
                "dataset {} has no training entries after the validation split",
                ids[k]
            )));
        }
    }
    let dataset_images: Vec<Vec<GrayImage>> = per_dataset
        .iter()
        .map(|entries| load_training_images(entries))
        .collect::<Result<_>>()?;

    let mut gen = init_generator(config)?;
    let mut discs: Vec<DiscriminatorModel> = (0..ids.len())
        .map(|k| build_discriminator(derive_seed(config.seed, "disc", k as u64)))
        .collect();
    let finetuned_from = finetune_provenance(config)?;
    let run = RunDir::create(out_dir)?;
    let meta_pairs = config.meta_pairs(val.len());

    let batches_per_dataset = dataset_images
        .iter()
        .map(|imgs| {
            let pool = imgs.len() * config.patches_per_image;
            pool.div_ceil(config.batch_size)
        })
        .max()
        .unwrap_or(0)
        .max(1);

    let mut records = Vec::with_capacity(config.epochs + 1);
    let mut epoch_paths = Vec::with_capacity(config.epochs + 1);
    let mut routing = Vec::new();

    let record_epoch = |gen: &GeneratorModel,
                        epoch: usize,
                        losses: Option<(f64, f64, Vec<f64>)>,
                        records: &mut Vec<EpochRecord>,
                        epoch_paths: &mut Vec<std::path::PathBuf>|
     -> Result<()> {
        let val_snr = validate_cached(SrModelRef::Generator(gen), &val)?;
        let (loss_content, loss_adv, loss_d) =
            losses.unwrap_or((f64::NAN, f64::NAN, vec![f64::NAN; ids.len()]));
        records.push(EpochRecord {
            epoch,
            loss_content,
            loss_adv,
            loss_d,
            val_snr,
        });
        let ckpt = gen.to_checkpoint(CheckpointMeta {
            epoch: epoch as u32,
            val_snr,
            seed: config.seed,
            config: meta_pairs.clone(),
        });
        epoch_paths.push(run.save_epoch(&ckpt, epoch)?);
        Ok(())
    };

    record_epoch(&gen, 0, None, &mut records, &mut epoch_paths)?;

    for epoch in 1..=config.epochs {
        let mut queues: Vec<PatchQueue> = dataset_images
            .iter()
            .enumerate()
            .map(|(k, imgs)| PatchQueue::new(imgs, k))
            .collect();
        let (mut content, mut adv, mut weight) = (0.0f64, 0.0f64, 0.0f64);
        let mut d_sums = vec![0.0f64; ids.len()];
        let mut d_weights = vec![0.0f64; ids.len()];
        let mut batch_index = 0usize;

        for _ in 0..batches_per_dataset {
            for (k, &dataset_id) in ids.iter().enumerate() {
                let patches = queues[k].next_batch(config.batch_size, config, epoch)?;
                let hr = batch_hr(&patches)?;
                let lr_input = batch_lr_input(&patches)?;

                let before: Vec<Vec<f32>> = discs.iter().map(flatten_params).collect();
                let losses = gan_batch_step(&mut gen, &mut discs[k], &hr, &lr_input, config)?;
                let updated: Vec<usize> = discs
                    .iter()
                    .enumerate()
                    .filter(|(i, d)| flatten_params(d) != before[*i])
                    .map(|(i, _)| i)
                    .collect();
                routing.push(RoutingRecord {
                    epoch,
                    batch: batch_index,
                    dataset_id,
                    updated,
                });
                batch_index += 1;

                let w = patches.len() as f64;
                content += losses.content * w;
                adv += losses.adv * w;
                d_sums[k] += losses.d * w;
                d_weights[k] += w;
                weight += w;
            }
        }

        let loss_d: Vec<f64> = d_sums
            .iter()
            .zip(&d_weights)
            .map(|(s, w)| s / w)
            .collect();
        record_epoch(
            &gen,
            epoch,
            Some((content / weight, adv / weight, loss_d)),
            &mut records,
            &mut epoch_paths,
        )?;
    }

    run.finish(records, &epoch_paths, ids.len(), finetuned_from, routing)
}
