use std::path::PathBuf;

use proptest::prelude::*;
use varleak::data::{
    encode, generate_colored_mnist, ingest_image_table, load_dataset, save_dataset, split, ColorDistribution,
    DiscreteJoint, Features, GrayDigits, LabeledDataset, Roles,
};

fn fixture_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/mnist10k")
}

fn fixture_digits() -> GrayDigits {
    let d = fixture_dir();
    GrayDigits::from_idx(&d.join("images-idx3-ubyte.gz"), &d.join("labels-idx1-ubyte.gz")).unwrap()
}

#[test]
fn fixture_holds_ten_thousand_digits() {
    let digits = fixture_digits();
    assert_eq!(digits.len(), 10_000);
    assert_eq!((digits.height(), digits.width()), (28, 28));
    let mut counts = [0; 10];
    for &l in digits.labels() {
        counts[l as usize] += 1;
    }
    assert!(counts.iter().all(|&c| c > 800), "{counts:?}");
}

#[test]
fn missing_source_is_reported() {
    let err = GrayDigits::from_idx(&fixture_dir().join("nope"), &fixture_dir().join("nope")).unwrap_err();
    assert!(matches!(err, varleak::Error::MalformedSource(_)));
    let err = GrayDigits::from_mnist_dir(&fixture_dir()).unwrap_err();
    assert!(matches!(err, varleak::Error::MalformedSource(_)));
}

#[test]
fn generation_is_byte_deterministic() {
    let src = fixture_digits().take(2000);
    let d = ColorDistribution::biased();
    let a = encode(&generate_colored_mnist(&src, &d, Roles::DigitUtility, 17).unwrap()).unwrap();
    let b = encode(&generate_colored_mnist(&src, &d, Roles::DigitUtility, 17).unwrap()).unwrap();
    let c = encode(&generate_colored_mnist(&src, &d, Roles::DigitUtility, 18).unwrap()).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn stratified_split_preserves_class_frequencies() {
    let ds = generate_colored_mnist(&fixture_digits(), &ColorDistribution::biased(), Roles::DigitUtility, 3).unwrap();
    let (train, val, test) = split(&ds, [0.7, 0.1, 0.2], 5).unwrap();
    assert_eq!(train.len() + val.len() + test.len(), ds.len());
    assert_eq!((train.len(), val.len(), test.len()), (7000, 1000, 2000));
    for part in [&train, &val, &test] {
        for (a, b) in part.u_frequencies().iter().zip(ds.u_frequencies()) {
            assert!((a - b).abs() <= 0.02);
        }
        for (a, b) in part.s_frequencies().iter().zip(ds.s_frequencies()) {
            assert!((a - b).abs() <= 0.02);
        }
    }
    let (again, _, _) = split(&ds, [0.7, 0.1, 0.2], 5).unwrap();
    assert_eq!(again, train);
}

#[test]
fn container_round_trip_on_disk() {
    let dir = tempfile::tempdir().unwrap();
    let ds = generate_colored_mnist(&fixture_digits().take(500), &ColorDistribution::balanced(), Roles::ColorUtility, 1).unwrap();
    let path = dir.path().join("d.vlds");
    save_dataset(&path, &ds).unwrap();
    assert_eq!(load_dataset(&path).unwrap(), ds);
}

#[test]
fn independent_sampler_matches_table() {
    let j = DiscreteJoint::independent(&[vec![0.2, 0.8], vec![0.5, 0.3, 0.2]]).unwrap();
    let n = 100_000;
    let mut counts = vec![0usize; 6];
    for idx in j.sampler(11).take(n) {
        counts[idx[0] * 3 + idx[1]] += 1;
    }
    let tv: f64 = counts.iter().zip(j.probs()).map(|(&c, p)| (c as f64 / n as f64 - p).abs()).sum::<f64>() / 2.0;
    assert!(tv < 0.01, "total variation {tv}");
}

#[test]
fn copy_channel_empirical_information_is_entropy() {
    let j = DiscreteJoint::copy(&[0.5, 0.3, 0.2]).unwrap();
    let n = 100_000;
    let mut counts = vec![0.0; 9];
    for idx in j.sampler(2).take(n) {
        counts[idx[0] * 3 + idx[1]] += 1.0;
    }
    let empirical = DiscreteJoint::from_weights(vec![3, 3], counts).unwrap();
    let (a, b) = (empirical.marginal(&[0]).unwrap(), empirical.marginal(&[1]).unwrap());
    let mi = a.entropy() + b.entropy() - empirical.entropy();
    let h = j.marginal(&[0]).unwrap().entropy();
    assert!((mi - h).abs() < 0.01, "I = {mi}, H = {h}");
}

#[test]
fn csv_ingestion_resizes_to_64() {
    let dir = tempfile::tempdir().unwrap();
    let mut table = String::from("path,u,s\n");
    for i in 0..4u8 {
        let img = image::RgbImage::from_fn(32, 48, |x, y| image::Rgb([x as u8 * 8, y as u8 * 5, i * 60]));
        img.save(dir.path().join(format!("{i}.png"))).unwrap();
        table.push_str(&format!("{i}.png,{},{}\n", i % 2, i / 2));
    }
    std::fs::write(dir.path().join("labels.csv"), table).unwrap();
    let ds = ingest_image_table(&dir.path().join("labels.csv")).unwrap();
    assert_eq!(ds.len(), 4);
    assert!(matches!(ds.features, Features::Image { height: 64, width: 64, channels: 3, .. }));
    assert_eq!((ds.u.clone(), ds.s.clone()), (vec![0, 1, 0, 1], vec![0, 0, 1, 1]));

    std::fs::write(dir.path().join("bad.csv"), "path,u,s\nmissing.png,0,0\n").unwrap();
    assert!(matches!(ingest_image_table(&dir.path().join("bad.csv")), Err(varleak::Error::Image(_))));
    std::fs::write(dir.path().join("worse.csv"), "path,u\n0.png,0\n").unwrap();
    assert!(matches!(ingest_image_table(&dir.path().join("worse.csv")), Err(varleak::Error::LabelTable(_))));
}

fn vector_dataset(labels: &[(usize, usize)]) -> LabeledDataset {
    let values = (0..labels.len()).map(|i| i as f64).collect();
    let (u, s) = labels.iter().cloned().unzip();
    LabeledDataset::new(Features::Vector { dim: 1, values }, u, s, 4, 3).unwrap()
}

proptest! {
    #[test]
    fn split_is_disjoint_and_exhaustive(
        labels in proptest::collection::vec((0usize..4, 0usize..3), 20..300),
        a in 0.2f64..0.7, b in 0.05f64..0.2, seed in any::<u64>(),
    ) {
        let ds = vector_dataset(&labels);
        let (x, y, z) = split(&ds, [a, b, 1.0 - a - b], seed).unwrap();
        let mut ids: Vec<f64> = [x, y, z].iter().flat_map(|d| match &d.features {
            Features::Vector { values, .. } => values.clone(),
            _ => unreachable!(),
        }).collect();
        ids.sort_by(f64::total_cmp);
        prop_assert_eq!(ids, (0..labels.len()).map(|i| i as f64).collect::<Vec<_>>());
    }

    #[test]
    fn color_parse_accepts_any_normalized_triple(r in 0.0f64..1.0, g in 0.0f64..1.0) {
        prop_assume!(r + g <= 1.0);
        let text = format!("{r},{g},{}", 1.0 - r - g);
        let d = ColorDistribution::parse(&text).unwrap();
        prop_assert!((d.probs().iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }
}
