use mipcnet::data::{
    augment, generate_synthetic, load_folder, preprocess, save_folder, AugmentOp, Dataset, DatasetManifest, Sample,
    SyntheticSpec,
};
use mipcnet::metrics::{confusion_counts, overlap_metrics, BinaryMask};
use mipcnet::Tensor;

fn spec() -> SyntheticSpec {
    SyntheticSpec { num_samples: 5, ..SyntheticSpec::smoke() }
}

fn histogram(label: &[u8]) -> [usize; 256] {
    let mut h = [0; 256];
    label.iter().for_each(|&v| h[v as usize] += 1);
    h
}

#[test]
fn generation_is_deterministic() {
    let a = generate_synthetic(&spec()).unwrap();
    assert_eq!(a, generate_synthetic(&spec()).unwrap());
    let b = generate_synthetic(&SyntheticSpec { seed: 1, ..spec() }).unwrap();
    assert_ne!(a.samples[0].label, b.samples[0].label);
    assert_eq!(a.ids(), vec!["case000", "case001", "case002", "case003", "case004"]);
}

#[test]
fn noiseless_binary_threshold_recovers_label() {
    let ds = generate_synthetic(&SyntheticSpec { num_classes: 2, noise_sigma: 0.0, ..spec() }).unwrap();
    for s in &ds.samples {
        let n = s.height();
        let gt = BinaryMask::from_labels(&s.label, n, n, 1).unwrap();
        let thresholded = BinaryMask::from_fn(n, n, |r, c| s.image.data()[r * n + c] > 0.5);
        assert!(!gt.is_empty());
        assert_eq!(overlap_metrics(&confusion_counts(&thresholded, &gt).unwrap()).dice, 1.0);
    }
}

#[test]
fn nine_class_set_covers_every_label() {
    let ds = generate_synthetic(&SyntheticSpec {
        num_samples: 50,
        num_classes: 9,
        image_size: 64,
        channels: 1,
        shapes_per_class: (1, 2),
        noise_sigma: 0.1,
        seed: 5,
    })
    .unwrap();
    let mut total = [0usize; 256];
    for s in &ds.samples {
        for (t, h) in total.iter_mut().zip(histogram(&s.label)) {
            *t += h;
        }
    }
    assert!((0..9).all(|c| total[c] > 0));
    assert!(total[9..].iter().all(|&c| c == 0));
}

#[test]
fn manifest_lists_only_nonempty_classes() {
    let ds = generate_synthetic(&spec()).unwrap();
    let m = DatasetManifest::describe(&ds, Some(spec()), None);
    for (s, present) in ds.samples.iter().zip(&m.present_classes) {
        assert!(!present.is_empty());
        for &c in present {
            assert!(s.label.contains(&c));
        }
    }
}

#[test]
fn folder_round_trip_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    for channels in [1, 3] {
        let ds = generate_synthetic(&SyntheticSpec { channels, ..spec() }).unwrap();
        let sub = dir.path().join(format!("c{channels}"));
        save_folder(&ds, &sub, &DatasetManifest::describe(&ds, Some(spec()), None)).unwrap();
        let back = load_folder(&sub, 4).unwrap();
        assert_eq!(back, ds);
    }
}

#[test]
fn empty_folder_is_an_empty_dataset() {
    let dir = tempfile::tempdir().unwrap();
    assert!(load_folder(dir.path(), 3).unwrap().is_empty());
}

#[test]
fn folder_loads_in_lexicographic_order() {
    let dir = tempfile::tempdir().unwrap();
    let mut ds = generate_synthetic(&SyntheticSpec { num_samples: 3, ..spec() }).unwrap();
    for (s, id) in ds.samples.iter_mut().zip(["zeta", "alpha", "mid"]) {
        s.id = id.to_string();
    }
    save_folder(&ds, dir.path(), &DatasetManifest::describe(&ds, None, None)).unwrap();
    assert_eq!(load_folder(dir.path(), 4).unwrap().ids(), vec!["alpha", "mid", "zeta"]);
}

#[test]
fn missing_mask_and_bad_labels_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let ds = generate_synthetic(&SyntheticSpec { num_samples: 2, ..spec() }).unwrap();
    save_folder(&ds, dir.path(), &DatasetManifest::describe(&ds, None, None)).unwrap();
    let err = load_folder(dir.path(), 3).unwrap_err().to_string();
    assert!(err.contains("label value 3"), "{err}");
    std::fs::remove_file(dir.path().join("case001_mask.png")).unwrap();
    let err = load_folder(dir.path(), 4).unwrap_err().to_string();
    assert!(err.contains("case001"), "{err}");
}

fn sample(h: usize, w: usize) -> Sample {
    Sample {
        id: "s".into(),
        image: Tensor::from_fn(vec![1, h, w], |i| (i as f64 * 0.37).sin() * 3.0 + 10.0),
        label: (0..h * w).map(|i| if (i / w + i % w) % 5 == 0 { 3 } else { 0 }).collect(),
        spacing: None,
    }
}

#[test]
fn preprocess_same_size_only_normalizes() {
    let s = sample(8, 8);
    let p = preprocess(&s, 8).unwrap();
    assert!(!p.constant_image);
    assert_eq!(p.sample.label, s.label);
    let (lo, hi) = s.image.data().iter().fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));
    for (&a, &b) in p.sample.image.data().iter().zip(s.image.data()) {
        assert!((a - ((b - lo) / (hi - lo) * 2.0 - 1.0)).abs() < 1e-12);
    }
    let (lo2, hi2) = p.sample.image.data().iter().fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));
    assert_eq!((lo2, hi2), (-1.0, 1.0));
}

#[test]
fn nearest_resize_keeps_values_and_round_trips() {
    let s = sample(32, 32);
    let up = preprocess(&s, 64).unwrap().sample;
    assert_eq!(up.image.shape(), &[1, 64, 64]);
    assert!(up.label.iter().all(|&v| v == 0 || v == 3));
    let down = preprocess(&up, 32).unwrap().sample;
    assert_eq!(down.label, s.label);
    let odd = preprocess(&sample(20, 20), 13).unwrap().sample;
    assert!(odd.label.iter().all(|&v| v == 0 || v == 3));
}

#[test]
fn constant_image_maps_to_zero_and_is_flagged() {
    let s = Sample { image: Tensor::full(vec![1, 4, 4], 0.3), ..sample(4, 4) };
    let p = preprocess(&s, 4).unwrap();
    assert!(p.constant_image);
    assert!(p.sample.image.data().iter().all(|&v| v == 0.0));
}

#[test]
fn augmentation_permutes_pixels_consistently() {
    let s = Sample {
        image: Tensor::from_fn(vec![2, 3, 5], |i| i as f64),
        label: (0..15).map(|i| (i % 4) as u8).collect(),
        ..sample(3, 5)
    };
    assert_eq!(augment(&s, AugmentOp::IDENTITY), s);
    let rot = augment(&s, AugmentOp { flip_h: false, flip_v: false, quarter_turns: 1 });
    assert_eq!(rot.image.shape(), &[2, 5, 3]);
    // the top-right corner moves to the top-left under a counter-clockwise turn
    assert_eq!(rot.image.data()[0], 4.0);
    assert_eq!(rot.image.data()[15], 19.0);
    let four = (0..4).fold(s.clone(), |acc, _| augment(&acc, AugmentOp { flip_h: false, flip_v: false, quarter_turns: 1 }));
    assert_eq!(four, s);
    for flip_h in [false, true] {
        for flip_v in [false, true] {
            for quarter_turns in 0..4 {
                let a = augment(&s, AugmentOp { flip_h, flip_v, quarter_turns });
                assert_eq!(histogram(&a.label), histogram(&s.label));
                // image and label move together
                for (p, &l) in a.label.iter().enumerate() {
                    assert_eq!((a.image.data()[p] as usize) % 4, l as usize);
                }
            }
        }
    }
}

#[test]
fn augmentation_draw_is_deterministic() {
    assert_eq!(AugmentOp::draw(1, "case001", 3), AugmentOp::draw(1, "case001", 3));
    let draws: Vec<_> = (0..32).map(|e| AugmentOp::draw(1, "case001", e)).collect();
    assert!(draws.iter().any(|d| *d != draws[0]));
}

#[test]
fn batch_stacks_images_and_labels() {
    let ds = generate_synthetic(&spec()).unwrap();
    let refs: Vec<&Sample> = ds.samples.iter().take(3).collect();
    let (x, y) = Dataset::batch::<f32>(&refs).unwrap();
    assert_eq!(x.shape(), &[3, 1, 64, 64]);
    assert_eq!(y.len(), 3 * 64 * 64);
    assert_eq!(&y[64 * 64..2 * 64 * 64], ds.samples[1].label.as_slice());
}
