use std::collections::{BTreeMap, BTreeSet};

use cellnas::datapipe::{
    augment_all, low_rank_approx, mirror, rotate, split_validation, stratified_folds, write_augmented_set, Label, RoiImage,
};
use proptest::prelude::*;

fn image(label: Label, id: String) -> impl Strategy<Value = RoiImage> {
    (2usize..14, 2usize..14).prop_flat_map(move |(h, w)| {
        let id = id.clone();
        prop::collection::vec(any::<u8>(), h * w).prop_map(move |px| RoiImage::new(h, w, px, label, id.clone()).unwrap())
    })
}

fn any_image() -> impl Strategy<Value = RoiImage> {
    image(Label::Benign, "x.png".into())
}

/// Originals with `benign` and `malignant` sources of 3×3 pixels.
fn dataset(benign: usize, malignant: usize, salt: u8) -> Vec<RoiImage> {
    let mut v = Vec::new();
    for (label, n) in [(Label::Benign, benign), (Label::Malignant, malignant)] {
        for i in 0..n {
            let px = (0..9).map(|j| (i as u8).wrapping_mul(31).wrapping_add(j).wrapping_add(salt)).collect();
            v.push(RoiImage::new(3, 3, px, label, format!("{label}/{i:03}.png")).unwrap());
        }
    }
    v
}

fn frobenius(img: &RoiImage, recon: &[f64]) -> f64 {
    img.pixels.iter().zip(recon).map(|(&p, &q)| (p as f64 - q).powi(2)).sum::<f64>().sqrt()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn geometric_variants_preserve_histogram(img in any_image()) {
        prop_assert_eq!(mirror(&img).histogram(), img.histogram());
        for deg in [90, 180, 270] {
            let r = rotate(&img, deg).unwrap();
            prop_assert_eq!(r.histogram(), img.histogram());
            prop_assert_eq!(&r.source_id, &img.source_id);
            prop_assert_eq!(r.label, img.label);
        }
        prop_assert!(rotate(&img, 45).is_err());
    }

    #[test]
    fn truncation_error_shrinks_with_rank(img in any_image()) {
        let min = img.height.min(img.width);
        let mut prev = f64::INFINITY;
        for k in 0..=min {
            let (recon, sigma) = low_rank_approx(&img, k);
            let err = frobenius(&img, &recon);
            prop_assert!(err <= prev + 1e-9 * (1.0 + err), "k={} err={} prev={}", k, err, prev);
            let tail = sigma[k.min(sigma.len())..].iter().map(|s| s * s).sum::<f64>().sqrt();
            prop_assert!((err - tail).abs() <= 1e-8 * (1.0 + tail));
            prev = err;
        }
        prop_assert!(prev < 1e-8);
    }

    #[test]
    fn augmentation_is_sevenfold_and_deterministic(img in any_image()) {
        let a = augment_all(&img).unwrap();
        prop_assert_eq!(a.len(), 7);
        prop_assert_eq!(&a, &augment_all(&img).unwrap());
        prop_assert!(a.iter().all(|v| v.source_id == img.source_id && v.label == img.label));
    }

    #[test]
    fn folds_partition_and_balance(benign in 5usize..40, malignant in 5usize..40, k in 2usize..6, seed in any::<u64>()) {
        let ds = dataset(benign, malignant, 0);
        let folds = stratified_folds(&ds, k, seed).unwrap();
        prop_assert_eq!(folds.folds.len(), ds.len());
        prop_assert_eq!(&folds, &stratified_folds(&ds, k, seed).unwrap());
        for label in Label::ALL {
            let mut counts = vec![0usize; k];
            for img in ds.iter().filter(|i| i.label == label) {
                counts[folds.fold_of(&img.source_id).unwrap()] += 1;
            }
            prop_assert!(counts.iter().max().unwrap() - counts.iter().min().unwrap() <= 1, "{:?}", counts);
        }
        let mut seen = BTreeSet::new();
        for f in 0..k {
            for id in folds.members(f) {
                prop_assert!(seen.insert(id.to_string()));
            }
        }
        prop_assert_eq!(seen.len(), ds.len());
    }

    #[test]
    fn validation_split_is_disjoint(benign in 2usize..40, malignant in 2usize..40, fraction in 0.01f64..0.99, seed in any::<u64>()) {
        let sources: Vec<(String, Label)> = dataset(benign, malignant, 0).into_iter().map(|i| (i.source_id, i.label)).collect();
        let (train, val) = split_validation(&sources, fraction, seed).unwrap();
        prop_assert_eq!(train.len() + val.len(), sources.len());
        let t: BTreeSet<_> = train.iter().collect();
        prop_assert!(val.iter().all(|v| !t.contains(v)));
        for label in Label::ALL {
            let n = sources.iter().filter(|s| s.1 == label).count();
            let nv = val.iter().filter(|s| s.1 == label).count();
            let expect = ((fraction * n as f64 - 1e-9).ceil() as usize).clamp(1, n - 1);
            prop_assert_eq!(nv, expect);
        }
        prop_assert_eq!((train, val), split_validation(&sources, fraction, seed).unwrap());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn augmented_images_never_leave_their_fold(benign in 5usize..12, malignant in 5usize..12, salt in any::<u8>(), seed in any::<u64>()) {
        let originals = dataset(benign, malignant, salt);
        let folds = stratified_folds(&originals, 5, seed).unwrap();
        let mut all = Vec::new();
        for img in &originals {
            all.push(img.clone());
            all.extend(augment_all(img).unwrap());
        }
        prop_assert_eq!(all.len(), 8 * originals.len());
        let dir = tempfile::tempdir().unwrap();
        let rows = write_augmented_set(dir.path(), &all, Some(&folds)).unwrap();
        let mut fold_of_source: BTreeMap<&str, BTreeSet<Option<usize>>> = BTreeMap::new();
        for row in &rows {
            prop_assert!(dir.path().join(&row.file_path).is_file());
            fold_of_source.entry(&row.source_id).or_default().insert(row.fold);
        }
        for (source, fs) in fold_of_source {
            prop_assert_eq!(fs.len(), 1);
            prop_assert_eq!(*fs.iter().next().unwrap(), folds.fold_of(source));
        }
    }
}
