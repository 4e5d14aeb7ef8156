//! End-to-end training runs on small synthetic datasets: determinism,
//! checkpoint selection, report layout, finetuning provenance, and the
//! per-dataset discriminator routing.

use std::fs;
use std::path::Path;

use rootsr::image::{
    load_manifest, make_synthetic_dataset, save_image, save_mask, write_manifest, BinaryMask,
    DatasetManifest, GrayImage, ManifestEntry,
};
use rootsr::models::{load_checkpoint, FsrcnnModel, SegmenterModel};
use rootsr::tensor::AdamConfig;
use rootsr::train::{
    finetune, split_entries, train, train_segmenter, validate, SegTrainConfig, SrModelRef,
    TrainConfig, TrainMode,
};
use rootsr::Error;

fn fsrcnn_config(seed: u64, epochs: usize) -> TrainConfig {
    TrainConfig {
        mode: TrainMode::Fsrcnn,
        epochs,
        batch_size: 8,
        patches_per_image: 2,
        val_count: Some(2),
        seed,
        ..Default::default()
    }
}

/// Writes `n` images with a striped pattern plus a diagonal mask, all in one
/// dataset, and returns the loaded manifest.
fn striped_dataset(dir: &Path, n: usize, size: usize) -> DatasetManifest {
    fs::create_dir_all(dir).unwrap();
    let mut manifest = DatasetManifest::default();
    manifest.dataset_names.insert(0, "striped".into());
    for i in 0..n {
        let img = GrayImage::from_fn(size, size, |x, y| {
            (((x * (i + 2) + y * 3) % 17) as f32 / 16.0) * 0.8 + 0.1
        });
        let mut mask = BinaryMask::zeros(size, size);
        for d in 0..size {
            mask.set(d, d, true);
            mask.set(d, (d + i) % size, true);
        }
        let image_path = dir.join(format!("img_{i}.pgm"));
        let mask_path = dir.join(format!("mask_{i}.pgm"));
        save_image(&img, &image_path).unwrap();
        save_mask(&mask, &mask_path).unwrap();
        manifest.entries.push(ManifestEntry {
            dataset_id: 0,
            image_path,
            mask_path: Some(mask_path),
        });
    }
    manifest
}

#[test]
fn same_seed_runs_are_bit_identical() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = striped_dataset(&dir.path().join("data"), 8, 64);
    let config = fsrcnn_config(9, 2);

    let a = train(&manifest, &config, &dir.path().join("run_a")).unwrap();
    let b = train(&manifest, &config, &dir.path().join("run_b")).unwrap();

    for (ra, rb) in a.records.iter().zip(&b.records) {
        assert_eq!(ra.loss_content.to_bits(), rb.loss_content.to_bits());
        assert_eq!(ra.val_snr.to_bits(), rb.val_snr.to_bits());
    }
    assert_eq!(a.best_epoch, b.best_epoch);
    assert_eq!(
        fs::read(&a.best_checkpoint).unwrap(),
        fs::read(&b.best_checkpoint).unwrap()
    );

    let c = train(
        &manifest,
        &fsrcnn_config(10, 2),
        &dir.path().join("run_c"),
    )
    .unwrap();
    assert_ne!(
        fs::read(&a.best_checkpoint).unwrap(),
        fs::read(&c.best_checkpoint).unwrap()
    );
}

#[test]
fn constant_images_train_to_tiny_loss() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    fs::create_dir_all(&data).unwrap();
    let mut manifest = DatasetManifest::default();
    manifest.dataset_names.insert(0, "flat".into());
    for i in 0..4 {
        let path = data.join(format!("img_{i}.pgm"));
        save_image(&GrayImage::constant(64, 64, 0.6), &path).unwrap();
        manifest.entries.push(ManifestEntry {
            dataset_id: 0,
            image_path: path,
            mask_path: None,
        });
    }
    let config = TrainConfig {
        epochs: 40,
        batch_size: 6,
        patches_per_image: 4,
        val_count: Some(1),
        seed: 4,
        adam: AdamConfig {
            learning_rate: 1e-2,
            ..Default::default()
        },
        ..Default::default()
    };
    let report = train(&manifest, &config, &dir.path().join("run")).unwrap();
    let first_loss = report.records[1].loss_content;
    let final_loss = report.records.last().unwrap().loss_content;
    assert!(
        final_loss < 2e-3 && final_loss < first_loss / 50.0,
        "loss went {first_loss} -> {final_loss}"
    );
}

#[test]
fn zero_epochs_snapshots_the_untrained_model() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = striped_dataset(&dir.path().join("data"), 4, 64);
    let report = train(&manifest, &fsrcnn_config(1, 0), &dir.path().join("run")).unwrap();

    assert_eq!(report.records.len(), 1);
    assert_eq!(report.records[0].epoch, 0);
    assert!(report.records[0].loss_content.is_nan());
    assert!(report.records[0].val_snr.is_finite());
    assert_eq!(report.best_epoch, 0);
    assert_eq!(
        fs::read(&report.best_checkpoint).unwrap(),
        fs::read(dir.path().join("run").join("epoch_0.ckpt")).unwrap()
    );
}

#[test]
fn finetune_with_zero_epochs_keeps_parent_weights() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = striped_dataset(&dir.path().join("data"), 6, 64);

    let parent = train(&manifest, &fsrcnn_config(2, 1), &dir.path().join("parent")).unwrap();
    let child = finetune(
        &parent.best_checkpoint,
        &manifest,
        &fsrcnn_config(2, 0),
        &dir.path().join("child"),
    )
    .unwrap();

    let parent_ckpt = load_checkpoint(&parent.best_checkpoint).unwrap();
    let child_ckpt = load_checkpoint(&child.best_checkpoint).unwrap();
    assert_eq!(parent_ckpt.tensors.len(), child_ckpt.tensors.len());
    for ((na, ta), (nb, tb)) in parent_ckpt.tensors.iter().zip(&child_ckpt.tensors) {
        assert_eq!(na, nb);
        assert_eq!(ta.data(), tb.data());
    }

    let (from_path, crc) = child.finetuned_from.clone().unwrap();
    assert_eq!(from_path, parent.best_checkpoint);
    let report_text = fs::read_to_string(dir.path().join("child").join("report.tsv")).unwrap();
    let first_line = report_text.lines().next().unwrap();
    assert!(first_line.starts_with("# finetuned_from "));
    assert!(first_line.contains(&format!("crc32 0x{crc:08x}")));
}

#[test]
fn report_has_header_rows_and_best_line() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = striped_dataset(&dir.path().join("data"), 5, 64);
    let report = train(&manifest, &fsrcnn_config(3, 2), &dir.path().join("run")).unwrap();

    let text = fs::read_to_string(dir.path().join("run").join("report.tsv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "epoch\tloss_content\tloss_adv\tval_snr");
    assert_eq!(lines.len(), 1 + 3 + 1);
    for (i, line) in lines[1..=3].iter().enumerate() {
        assert!(line.starts_with(&format!("{i}\t")), "row {i}: {line}");
        assert_eq!(line.split('\t').count(), 4);
    }
    assert_eq!(
        lines[4],
        format!("best {} {}", report.best_epoch, report.best_checkpoint.display())
    );
}

#[test]
fn best_checkpoint_reloads_to_the_reported_validation_snr() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = striped_dataset(&dir.path().join("data"), 8, 64);
    let config = fsrcnn_config(5, 3);
    let report = train(&manifest, &config, &dir.path().join("run")).unwrap();

    let best = report
        .records
        .iter()
        .max_by(|a, b| a.val_snr.partial_cmp(&b.val_snr).unwrap())
        .unwrap();
    assert_eq!(report.best_epoch, best.epoch);

    let model = FsrcnnModel::from_checkpoint(
        &load_checkpoint(&report.best_checkpoint).unwrap(),
        &report.best_checkpoint,
    )
    .unwrap();
    let (_, val_entries) = split_entries(&manifest, &config).unwrap();
    let snr = validate(SrModelRef::Fsrcnn(&model), &val_entries).unwrap();
    assert!(
        (snr - report.best_val_snr()).abs() < 1e-9,
        "reloaded {snr} vs reported {}",
        report.best_val_snr()
    );
}

#[test]
fn checkpoint_meta_records_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = striped_dataset(&dir.path().join("data"), 5, 64);
    let config = fsrcnn_config(6, 1);
    let report = train(&manifest, &config, &dir.path().join("run")).unwrap();

    let ckpt = load_checkpoint(&report.best_checkpoint).unwrap();
    assert_eq!(ckpt.arch, "fsrcnn");
    assert_eq!(ckpt.meta.epoch as usize, report.best_epoch);
    assert_eq!(ckpt.meta.seed, 6);
    assert_eq!(ckpt.meta.val_snr, report.best_val_snr());
    let get = |k: &str| {
        ckpt.meta
            .config
            .iter()
            .find(|(key, _)| key == k)
            .map(|(_, v)| v.clone())
    };
    assert_eq!(get("mode").as_deref(), Some("fsrcnn"));
    assert_eq!(get("val_count").as_deref(), Some("2"));
}

#[test]
fn srgan_records_adversarial_losses() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let manifest = make_synthetic_dataset(6, 72, 72, 31, &data).unwrap();
    let config = TrainConfig {
        mode: TrainMode::Srgan,
        epochs: 1,
        batch_size: 8,
        patches_per_image: 1,
        val_count: Some(2),
        seed: 7,
        ..Default::default()
    };
    let report = train(&manifest, &config, &dir.path().join("run")).unwrap();

    assert!(report.records[0].loss_adv.is_nan());
    let rec = &report.records[1];
    assert!(rec.loss_content.is_finite());
    assert!(rec.loss_adv.is_finite());
    assert_eq!(rec.loss_d.len(), 1);
    assert!(rec.loss_d[0].is_finite());
    assert!(report.routing.is_empty());

    let header = fs::read_to_string(dir.path().join("run").join("report.tsv")).unwrap();
    assert!(header.starts_with("epoch\tloss_content\tloss_adv\tloss_d0\tval_snr"));
}

#[test]
fn muldis_rejects_a_single_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = striped_dataset(&dir.path().join("data"), 4, 64);
    let config = TrainConfig {
        mode: TrainMode::Muldis,
        epochs: 1,
        batch_size: 4,
        patches_per_image: 1,
        val_count: Some(1),
        seed: 1,
        ..Default::default()
    };
    let err = train(&manifest, &config, &dir.path().join("run")).unwrap_err();
    assert!(matches!(err, Error::Config(_)), "{err}");
}

#[test]
fn muldis_routes_each_batch_to_its_own_discriminator() {
    let dir = tempfile::tempdir().unwrap();
    let a = make_synthetic_dataset(4, 72, 72, 41, dir.path().join("a")).unwrap();
    let b = make_synthetic_dataset(4, 72, 72, 42, dir.path().join("b")).unwrap();
    let mut manifest = DatasetManifest::default();
    manifest.dataset_names.insert(0, "first".into());
    manifest.dataset_names.insert(5, "second".into());
    for e in &a.entries {
        manifest.entries.push(ManifestEntry {
            dataset_id: 0,
            ..e.clone()
        });
    }
    for e in &b.entries {
        manifest.entries.push(ManifestEntry {
            dataset_id: 5,
            ..e.clone()
        });
    }

    let config = TrainConfig {
        mode: TrainMode::Muldis,
        epochs: 1,
        batch_size: 4,
        patches_per_image: 1,
        val_count: Some(2),
        seed: 13,
        ..Default::default()
    };
    let report = train(&manifest, &config, &dir.path().join("run")).unwrap();

    assert!(!report.routing.is_empty());
    let ids = manifest.dataset_ids();
    for r in &report.routing {
        let own = ids.iter().position(|&id| id == r.dataset_id).unwrap();
        assert_eq!(r.updated, vec![own], "epoch {} batch {}", r.epoch, r.batch);
    }
    assert_eq!(report.records[1].loss_d.len(), 2);
    assert!(dir.path().join("run").join("routing.tsv").is_file());
}

#[test]
fn segmenter_requires_a_mask_for_every_entry() {
    let dir = tempfile::tempdir().unwrap();
    let mut manifest = striped_dataset(&dir.path().join("data"), 4, 64);
    manifest.entries[2].mask_path = None;
    let config = SegTrainConfig {
        epochs: 1,
        batch_size: 4,
        patches_per_image: 1,
        val_count: Some(1),
        seed: 1,
        ..Default::default()
    };
    let err = train_segmenter(&manifest, &config, &dir.path().join("run")).unwrap_err();
    match err {
        Error::Config(msg) => assert!(msg.contains("img_2.pgm"), "{msg}"),
        other => panic!("unexpected error {other:?}"),
    }
}

#[test]
fn segmenter_run_writes_report_and_usable_best_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = striped_dataset(&dir.path().join("data"), 5, 64);
    let config = SegTrainConfig {
        epochs: 2,
        batch_size: 4,
        patches_per_image: 1,
        val_count: Some(1),
        seed: 2,
        ..Default::default()
    };
    let report = train_segmenter(&manifest, &config, &dir.path().join("run")).unwrap();

    let text = fs::read_to_string(dir.path().join("run").join("report.tsv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "epoch\tloss\tval_iou");
    assert_eq!(lines.len(), 1 + 3 + 1);
    assert!(lines[4].starts_with(&format!("best {} ", report.best_epoch)));

    let ckpt = load_checkpoint(&report.best_checkpoint).unwrap();
    assert_eq!(ckpt.arch, "segmenter");
    assert!(ckpt
        .meta
        .config
        .iter()
        .any(|(k, v)| k == "metric" && v == "iou"));
    let model = SegmenterModel::from_checkpoint(&ckpt, &report.best_checkpoint).unwrap();
    let out = model
        .forward(&GrayImage::constant(16, 16, 0.5).to_tensor())
        .unwrap();
    assert_eq!(out.shape(), [1, 1, 16, 16]);
}

#[test]
fn manifest_round_trip_preserves_training_split() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = striped_dataset(&dir.path().join("data"), 6, 64);
    let path = dir.path().join("data").join("manifest.tsv");
    write_manifest(&manifest, &path).unwrap();
    let reloaded = load_manifest(&path).unwrap();
    assert_eq!(reloaded, manifest);

    let config = fsrcnn_config(8, 1);
    let (train_a, val_a) = split_entries(&manifest, &config).unwrap();
    let (train_b, val_b) = split_entries(&reloaded, &config).unwrap();
    assert_eq!(
        train_a.iter().map(|e| &e.image_path).collect::<Vec<_>>(),
        train_b.iter().map(|e| &e.image_path).collect::<Vec<_>>()
    );
    assert_eq!(
        val_a.iter().map(|e| &e.image_path).collect::<Vec<_>>(),
        val_b.iter().map(|e| &e.image_path).collect::<Vec<_>>()
    );
    assert_eq!(val_a.len(), 2);
}
