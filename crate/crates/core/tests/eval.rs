//! Metric properties against loop oracles, and comparison-table behavior on
//! a synthetic dataset.

mod common;

use std::cell::Cell;

use common::assert_rel_close;
use proptest::prelude::*;
use rootsr::error::Error;
use rootsr::eval::{
    evaluate_models, fsrcnn_sr, generator_sr, iou, jaccard, snr, standard_error, EvalRecord,
    SrFn, SNR_CAP_DB,
};
use rootsr::image::{
    bicubic_resize, crop_to_multiple, degrade, load_image, make_synthetic_dataset, BinaryMask,
    GrayImage, SCALE_FACTOR,
};
use rootsr::models::{build_fsrcnn, build_generator, build_segmenter, FsrcnnConfig};
use rootsr::rng::rng_from;

fn rand_mask(rng: &mut rootsr::rng::Rng, w: usize, h: usize, density: f64) -> BinaryMask {
    let mut m = BinaryMask::zeros(w, h);
    for y in 0..h {
        for x in 0..w {
            if rand::Rng::gen_bool(rng, density) {
                m.set(x, y, true);
            }
        }
    }
    m
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn standard_error_matches_two_pass_loop_oracle(
        seed in any::<u64>(), n in 1usize..40,
    ) {
        let mut rng = rng_from(seed);
        let values: Vec<f64> = (0..n)
            .map(|_| rand::Rng::gen_range(&mut rng, -50.0..50.0))
            .collect();

        let mut total = 0.0;
        for &v in &values {
            total += v;
        }
        let mean = total / n as f64;
        let oracle = if n == 1 {
            0.0
        } else {
            let mut sq = 0.0;
            for &v in &values {
                sq += (v - mean) * (v - mean);
            }
            (sq / (n as f64 - 1.0)).sqrt() / (n as f64).sqrt()
        };

        let got = standard_error(&values).unwrap();
        prop_assert!((got - oracle).abs() < 1e-12, "{got} vs {oracle}");
    }

    #[test]
    fn snr_decreases_as_the_error_grows(
        seed in any::<u64>(), w in 2usize..12, h in 2usize..12,
    ) {
        let mut rng = rng_from(seed);
        let base = GrayImage::from_fn(w, h, |_, _| rand::Rng::gen_range(&mut rng, 0.2..0.8));
        let near = GrayImage::from_fn(w, h, |x, y| base.get(x, y) + 0.05);
        let far = GrayImage::from_fn(w, h, |x, y| base.get(x, y) + 0.15);
        let s_near = snr(&base, &near).unwrap();
        let s_far = snr(&base, &far).unwrap();
        prop_assert!(s_near > s_far, "{s_near} vs {s_far}");
        prop_assert_eq!(snr(&base, &near).unwrap(), snr(&near, &base).unwrap());
    }

    #[test]
    fn iou_is_symmetric_bounded_and_exact_at_the_extremes(
        seed in any::<u64>(), w in 1usize..10, h in 1usize..10, density in 0.1f64..0.9,
    ) {
        let mut rng = rng_from(seed);
        let a = rand_mask(&mut rng, w, h, density);
        let b = rand_mask(&mut rng, w, h, density);

        let ab = iou(&a, &b).unwrap();
        prop_assert_eq!(ab, iou(&b, &a).unwrap());
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert!(jaccard(&a, &b).unwrap() <= ab + 1e-12);

        prop_assert_eq!(iou(&a, &a).unwrap(), 1.0);
        if ab == 1.0 {
            for y in 0..h {
                for x in 0..w {
                    prop_assert_eq!(a.get(x, y), b.get(x, y));
                }
            }
        }
        if a.count_ones() > 0 && b.count_ones() == 0 {
            prop_assert_eq!(ab, 0.0);
        }
    }
}

fn test_manifest(dir: &std::path::Path) -> rootsr::image::DatasetManifest {
    make_synthetic_dataset(4, 80, 80, 55, dir).unwrap()
}

fn independent_bicubic_snr_mean(manifest: &rootsr::image::DatasetManifest) -> f64 {
    let mut values = Vec::new();
    for entry in &manifest.entries {
        let hr = crop_to_multiple(&load_image(&entry.image_path).unwrap(), SCALE_FACTOR).unwrap();
        let small = bicubic_resize(&hr, hr.width() / 4, hr.height() / 4).unwrap();
        let up = bicubic_resize(&small, hr.width(), hr.height()).unwrap();
        let mut acc = 0.0f64;
        for (&a, &b) in hr.pixels().iter().zip(up.pixels()) {
            acc += (a as f64 - b as f64) * (a as f64 - b as f64);
        }
        let mse = (acc / hr.pixels().len() as f64).max(1e-12);
        values.push(10.0 * (1.0 / mse).log10());
    }
    values.iter().sum::<f64>() / values.len() as f64
}

#[test]
fn bicubic_row_matches_an_independent_computation() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = test_manifest(dir.path());
    let records = evaluate_models(&[], &manifest, None).unwrap();

    assert_eq!(records.len(), 2);
    assert_eq!(records[0].model_name, "Bicubic");
    assert_eq!(records[1].model_name, "HR");
    assert_eq!(records[1].snr_mean, None);
    assert_eq!(records[0].n_images, 4);

    let expect = independent_bicubic_snr_mean(&manifest);
    assert_rel_close(records[0].snr_mean.unwrap(), expect, 1e-9, "bicubic row snr");
}

#[test]
fn model_order_does_not_change_any_record() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = test_manifest(dir.path());
    let seg = build_segmenter(3);

    let fsrcnn = build_fsrcnn(FsrcnnConfig { d: 5, s: 2, m: 1, n: 4 }, 10).unwrap();
    let gen = build_generator(11);

    let forward: Vec<(String, SrFn)> = vec![
        ("F".into(), fsrcnn_sr(&fsrcnn)),
        ("G".into(), generator_sr(&gen)),
    ];
    let reverse: Vec<(String, SrFn)> = vec![
        ("G".into(), generator_sr(&gen)),
        ("F".into(), fsrcnn_sr(&fsrcnn)),
    ];

    let a = evaluate_models(&forward, &manifest, Some(&seg)).unwrap();
    let b = evaluate_models(&reverse, &manifest, Some(&seg)).unwrap();

    let by_name = |recs: &[EvalRecord], name: &str| -> EvalRecord {
        recs.iter().find(|r| r.model_name == name).unwrap().clone()
    };
    for name in ["Bicubic", "F", "G", "HR"] {
        assert_eq!(by_name(&a, name), by_name(&b, name), "{name}");
    }
    assert!(a.iter().all(|r| r.iou_mean.is_some()));
}

#[test]
fn model_returning_hr_hits_the_snr_cap_and_the_hr_rows_iou() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = test_manifest(dir.path());
    let seg = build_segmenter(3);

    let hires: Vec<GrayImage> = manifest
        .entries
        .iter()
        .map(|e| crop_to_multiple(&load_image(&e.image_path).unwrap(), SCALE_FACTOR).unwrap())
        .collect();
    let next = Cell::new(0usize);
    let cheat: SrFn = Box::new(move |_, _| {
        let img = hires[next.get()].clone();
        next.set(next.get() + 1);
        Ok(img)
    });

    let records =
        evaluate_models(&[("Cheat".into(), cheat)], &manifest, Some(&seg)).unwrap();
    assert_eq!(records[1].model_name, "Cheat");
    assert_eq!(records[1].snr_mean, Some(SNR_CAP_DB));
    assert_eq!(records[1].snr_se, Some(0.0));
    assert_eq!(records[1].iou_mean, records[2].iou_mean);
    assert_eq!(records[2].model_name, "HR");
}

#[test]
fn identity_generator_row_equals_the_bicubic_row() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = test_manifest(dir.path());
    let mut gen = build_generator(0);
    for p in gen.net.params_mut() {
        p.value.fill(0.0);
    }
    let models: Vec<(String, SrFn)> = vec![("Identity".into(), generator_sr(&gen))];
    let records = evaluate_models(&models, &manifest, None).unwrap();
    assert_eq!(records[0].snr_mean, records[1].snr_mean);
    assert_eq!(records[0].snr_se, records[1].snr_se);
}

#[test]
fn missing_masks_with_segmenter_is_a_config_error_naming_entries() {
    let dir = tempfile::tempdir().unwrap();
    let mut manifest = test_manifest(dir.path());
    manifest.entries[1].mask_path = None;
    manifest.entries[2].mask_path = None;
    let seg = build_segmenter(0);

    let err = evaluate_models(&[], &manifest, Some(&seg)).unwrap_err();
    match err {
        Error::Config(msg) => {
            assert!(msg.contains("img_0001"), "{msg}");
            assert!(msg.contains("img_0002"), "{msg}");
            assert!(!msg.contains("img_0000"), "{msg}");
        }
        other => panic!("unexpected error {other:?}"),
    }
    assert!(evaluate_models(&[], &manifest, None).is_ok());
}

#[test]
fn single_image_set_reports_zero_standard_error() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = make_synthetic_dataset(1, 64, 64, 9, dir.path()).unwrap();
    let records = evaluate_models(&[], &manifest, None).unwrap();
    assert_eq!(records[0].snr_se, Some(0.0));
    assert_eq!(records[0].n_images, 1);
}

#[test]
fn degradation_costs_signal_on_synthetic_roots() {
    // The bicubic round trip must land in a plausible dB band: well below
    // the cap, well above zero.
    let dir = tempfile::tempdir().unwrap();
    let manifest = test_manifest(dir.path());
    let records = evaluate_models(&[], &manifest, None).unwrap();
    let bicubic = records[0].snr_mean.unwrap();
    assert!(bicubic > 5.0 && bicubic < 60.0, "{bicubic}");

    let hr = crop_to_multiple(
        &load_image(&manifest.entries[0].image_path).unwrap(),
        SCALE_FACTOR,
    )
    .unwrap();
    let (_, lr_input) = degrade(&hr, SCALE_FACTOR).unwrap();
    assert!(snr(&hr, &lr_input).unwrap() < SNR_CAP_DB);
}
