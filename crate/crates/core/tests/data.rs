use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use retifluid_core::data::*;
use retifluid_core::image::{one_hot, GrayImage, LabelMap};

fn random_sample(seed: u64, h: usize, w: usize, classes: u8) -> Sample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let image =
        GrayImage::new(h, w, (0..h * w).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap();
    let mask = LabelMap::new(
        h,
        w,
        (0..h * w).map(|_| rng.gen_range(0..classes)).collect(),
    )
    .unwrap();
    Sample::new("s", image, mask).unwrap()
}

fn labels(m: &LabelMap) -> Vec<u8> {
    m.label_set()
}

#[test]
fn sample_dims_must_agree() {
    assert!(Sample::new("a", GrayImage::filled(2, 3, 0.0), LabelMap::zeros(3, 2)).is_err());
}

#[test]
fn augment_gives_eight_deterministic_variants() {
    let s = random_sample(1, 16, 20, 3);
    let a = augment(&s, 42);
    assert_eq!(a.len(), AUGMENTED_VARIANTS);
    assert_eq!(AUGMENTED_VARIANTS, 8);
    assert_eq!(a, augment(&s, 42));
    assert_ne!(a, augment(&s, 43));
    for v in &a {
        assert_eq!((v.image.height, v.image.width), (16, 20));
        assert_eq!(v.subject_id, s.subject_id);
        assert!(v.image.data.iter().all(|x| (0.0..=1.0).contains(x)));
    }
    // variants differ from each other
    for i in 0..8 {
        for j in i + 1..8 {
            assert_ne!(a[i].image, a[j].image);
        }
    }
}

#[test]
fn identity_transform_is_exact() {
    let s = random_sample(2, 9, 7, 4);
    assert_eq!(apply_augment(&s, &AugmentParams::IDENTITY), s);
}

#[test]
fn integer_translation_shifts_pixels() {
    let s = random_sample(3, 8, 8, 3);
    let p = AugmentParams {
        dx: 2.0,
        dy: -1.0,
        ..AugmentParams::IDENTITY
    };
    let out = apply_augment(&s, &p);
    for y in 0..8 {
        for x in 0..8 {
            let (sy, sx) = (y as isize + 1, x as isize - 2);
            if (0..8).contains(&sy) && (0..8).contains(&sx) {
                assert_eq!(out.image.get(y, x), s.image.get(sy as usize, sx as usize));
                assert_eq!(out.mask.get(y, x), s.mask.get(sy as usize, sx as usize));
            } else {
                assert_eq!(out.image.get(y, x), 0.0);
                assert_eq!(out.mask.get(y, x), 0);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn mirror_is_an_involution(seed in any::<u64>(), h in 1usize..12, w in 1usize..12) {
        let s = random_sample(seed, h, w, 4);
        let p = AugmentParams { mirror: true, ..AugmentParams::IDENTITY };
        let once = apply_augment(&s, &p);
        for y in 0..h {
            for x in 0..w {
                prop_assert_eq!(once.mask.get(y, x), s.mask.get(y, w - 1 - x));
            }
        }
        prop_assert_eq!(apply_augment(&once, &p), s);
    }

    #[test]
    fn augmented_labels_are_a_subset(seed in any::<u64>(), h in 4usize..16, w in 4usize..16, aseed in any::<u64>()) {
        let mut s = random_sample(seed, h, w, 4);
        // keep background present so out-of-frame fill is not a new label
        s.mask.set(0, 0, 0);
        let allowed = labels(&s.mask);
        for v in augment(&s, aseed) {
            for l in labels(&v.mask) {
                prop_assert!(allowed.contains(&l));
            }
        }
    }

    #[test]
    fn label_warp_commutes_with_one_hot(seed in any::<u64>(), h in 4usize..12, w in 4usize..12, pseed in any::<u64>()) {
        let s = random_sample(seed, h, w, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(pseed);
        let p = AugmentParams::sample(&mut rng, &AugmentRanges::default(), h, w);
        let warped = one_hot(&warp_labels(&s.mask, &p), 3).unwrap();
        let oh = one_hot(&s.mask, 3).unwrap();
        for c in 0..3 {
            let plane = GrayImage::new(h, w, (0..h * w).map(|i| oh.data()[i * 3 + c]).collect()).unwrap();
            let fill = if c == 0 { 1.0 } else { 0.0 };
            let moved = warp_nearest(&plane, &p, fill);
            for i in 0..h * w {
                prop_assert_eq!(moved.data[i], warped.data()[i * 3 + c]);
            }
        }
    }

    #[test]
    fn resized_labels_come_from_the_input(seed in any::<u64>(), h in 1usize..20, w in 1usize..20, oh in 1usize..40, ow in 1usize..40) {
        let s = random_sample(seed, h, w, 5);
        let r = resize_labels(&s.mask, oh, ow);
        prop_assert_eq!((r.height, r.width), (oh, ow));
        let allowed = labels(&s.mask);
        for l in labels(&r) {
            prop_assert!(allowed.contains(&l));
        }
    }

    #[test]
    fn integer_upsampling_keeps_every_label(seed in any::<u64>(), h in 1usize..10, w in 1usize..10, f in 1usize..4) {
        let s = random_sample(seed, h, w, 5);
        let r = resize_labels(&s.mask, h * f, w * f);
        prop_assert_eq!(labels(&r), labels(&s.mask));
        for y in 0..h * f {
            for x in 0..w * f {
                prop_assert_eq!(r.get(y, x), s.mask.get(y / f, x / f));
            }
        }
    }

    #[test]
    fn preprocess_normalises_to_unit_range(seed in any::<u64>(), h in 2usize..20, w in 2usize..20) {
        let mut s = random_sample(seed, h, w, 3);
        s.image.data.iter_mut().for_each(|v| *v = 3.0 * *v - 1.0);
        let p = preprocess_sample(&s, (16, 24)).unwrap();
        prop_assert_eq!((p.image.height, p.image.width, p.mask.height, p.mask.width), (16, 24, 16, 24));
        let lo = p.image.data.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = p.image.data.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert_eq!(lo, 0.0);
        prop_assert!((hi - 1.0).abs() < 1e-12);
    }
}

#[test]
fn min_max_examples() {
    let img = GrayImage::new(1, 3, vec![2.0, 4.0, 3.0]).unwrap();
    assert_eq!(min_max_normalize(&img).data, vec![0.0, 1.0, 0.5]);
    assert_eq!(
        min_max_normalize(&GrayImage::filled(2, 2, 0.7)).data,
        vec![0.0; 4]
    );
    assert!(preprocess(&img, &LabelMap::zeros(1, 3), (0, 4)).is_err());
}

#[test]
fn bilinear_resize_properties() {
    let s = random_sample(5, 6, 6, 2);
    assert_eq!(resize_bilinear(&s.image, 6, 6), s.image);
    let c = resize_bilinear(&GrayImage::filled(5, 7, 0.25), 13, 3);
    assert!(c.data.iter().all(|&v| (v - 0.25).abs() < 1e-15));
    // a horizontal ramp stays a ramp at 2x
    let ramp = GrayImage::new(1, 2, vec![0.0, 1.0]).unwrap();
    assert_eq!(
        resize_bilinear(&ramp, 1, 4).data,
        vec![0.0, 0.25, 0.75, 1.0]
    );
}

#[test]
fn contrast_is_clamped() {
    let img = GrayImage::new(1, 3, vec![0.0, 0.5, 1.0]).unwrap();
    assert_eq!(adjust_contrast(&img, 1.0), img);
    assert_eq!(adjust_contrast(&img, 2.0).data, vec![0.0, 0.5, 1.0]);
    assert_eq!(adjust_contrast(&img, 0.5).data, vec![0.25, 0.5, 0.75]);
}

#[test]
fn synth_is_deterministic_and_well_formed() {
    let cfg = SynthConfig {
        subjects: 3,
        scans_per_subject: 2,
        height: 32,
        width: 48,
        ..SynthConfig::default()
    };
    let a = synth_generate(&cfg).unwrap();
    assert_eq!(a, synth_generate(&cfg).unwrap());
    assert_eq!(a.len(), 6);
    assert_ne!(
        a,
        synth_generate(&SynthConfig {
            seed: 1,
            ..cfg.clone()
        })
        .unwrap()
    );
    let ids: Vec<&str> = a.iter().map(|s| s.subject_id.as_str()).collect();
    assert_eq!(
        ids,
        [
            "subject00",
            "subject00",
            "subject01",
            "subject01",
            "subject02",
            "subject02"
        ]
    );
    let mut fluid = [0usize; 4];
    for s in &a {
        assert_eq!((s.image.height, s.image.width), (32, 48));
        assert!(s.mask.data.iter().all(|&l| l < 4));
        assert!(!has_isolated_pixel(&s.mask));
        for &v in &s.image.data {
            assert!((0.0..=1.0).contains(&v));
            assert_eq!((v * 255.0).round() / 255.0, v);
        }
        for &l in &s.mask.data {
            fluid[l as usize] += 1;
        }
    }
    assert!(fluid.iter().all(|&n| n > 0), "{fluid:?}");
}

#[test]
fn synth_rejects_bad_configs() {
    assert!(synth_generate(&SynthConfig {
        classes: 1,
        ..SynthConfig::default()
    })
    .is_err());
    assert!(synth_generate(&SynthConfig {
        height: 4,
        ..SynthConfig::default()
    })
    .is_err());
}

#[test]
fn isolated_pixels_are_relabelled() {
    let mut m = LabelMap::zeros(4, 4);
    m.set(1, 1, 2);
    m.set(3, 3, 1);
    assert!(has_isolated_pixel(&m));
    remove_isolated_pixels(&mut m);
    assert!(!has_isolated_pixel(&m));
    assert_eq!(m, LabelMap::zeros(4, 4));
}
