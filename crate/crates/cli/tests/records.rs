use std::fs;

use proptest::prelude::*;
use varleak_cli::records::{
    append_record, append_report, completed_hashes, config_hash, read_records, AdversaryResult, ComplexityTriple,
    ExperimentRecord, ReportRow, Status,
};
use varleak_cli::report::{emit_report, median};

fn record(beta: f64, dz: usize, seed: u64, acc: f64, kl: f64) -> ExperimentRecord {
    let mut r = ExperimentRecord::failed(config_hash(&(beta, dz, seed)), beta, dz, seed, String::new(), 1.0);
    r.status = Status::Ok;
    r.error = None;
    r.util_acc_test = Some(acc);
    r.adversary = vec![
        AdversaryResult { data_ratio: 0.5, accuracy: acc - 0.1, cross_entropy: 1.0 },
        AdversaryResult { data_ratio: 1.0, accuracy: acc, cross_entropy: 0.9 },
    ];
    r.complexity = Some(ComplexityTriple { kl_upper: kl, correction: 0.1 * kl, corrected: 0.9 * kl });
    r
}

#[test]
fn hash_is_stable_and_sensitive() {
    let a = config_hash(&("mnist-desk", 0.5, 8));
    assert_eq!(a, config_hash(&("mnist-desk", 0.5, 8)));
    assert_eq!(a.len(), 64);
    assert!(a.chars().all(|c| c.is_ascii_hexdigit()));
    assert_ne!(a, config_hash(&("mnist-desk", 0.5, 16)));
    assert_ne!(a, config_hash(&("mnist-desk", 0.25, 8)));
    // SHA-256 of the JSON text `[1,2]`, computed independently.
    assert_eq!(config_hash(&[1, 2]), "49a64717d5d4cb19952e6eac2946415cf6879adacf9908e7d872332d32c6e684");
}

#[test]
fn records_round_trip_and_skip_torn_lines() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("r.jsonl");
    let ok = record(0.1, 8, 0, 0.9, 2.0);
    let failed = ExperimentRecord::failed("h2".into(), 0.2, 8, 1, "diverged".into(), 0.5);
    append_record(&path, &ok).unwrap();
    append_record(&path, &failed).unwrap();
    fs::write(&path, fs::read_to_string(&path).unwrap() + "{\"schema\":1,\"con").unwrap();
    let back = read_records(&path).unwrap();
    assert_eq!(back, vec![ok.clone(), failed]);
    let done = completed_hashes(&back);
    assert!(done.contains(&ok.config_hash));
    assert!(!done.contains("h2"));
    assert!(read_records(&tmp.path().join("absent")).unwrap().is_empty());
}

#[test]
fn report_header_written_once() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("r.csv");
    let row = ReportRow { dz: 8, adv_acc: Some(0.5), ..Default::default() };
    append_report(&path, &[row.clone()]).unwrap();
    append_report(&path, &[row.clone(), row]).unwrap();
    let text = fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().filter(|l| l.starts_with("beta,")).count(), 1);
    assert_eq!(text.lines().count(), 4);
}

#[test]
fn medians() {
    assert_eq!(median(&mut []), None);
    assert_eq!(median(&mut [3.0, 1.0, 2.0]), Some(2.0));
    assert_eq!(median(&mut [4.0, 1.0, 3.0, 2.0]), Some(2.5));
}

#[test]
fn report_trends_follow_the_records() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("r.jsonl");
    for (beta, acc, kl) in [(0.0, 0.9, 5.0), (0.5, 0.7, 1.0), (0.9, 0.3, 0.1)] {
        for seed in 0..3u64 {
            // Seed 2 is an outlier that the median must ignore.
            let (a, k) = if seed == 2 { (0.0, 100.0) } else { (acc + 0.01 * seed as f64, kl) };
            append_record(&path, &record(beta, 8, seed, a, k)).unwrap();
        }
    }
    append_record(&path, &ExperimentRecord::failed("x".into(), 0.5, 8, 9, "boom".into(), 0.0)).unwrap();
    let out = tmp.path().join("plots");
    assert_eq!(emit_report(&path, &out).unwrap(), 3);

    let mut util = csv::Reader::from_path(out.join("utility.csv")).unwrap();
    let rows: Vec<csv::StringRecord> = util.records().map(Result::unwrap).collect();
    let betas: Vec<f64> = rows.iter().map(|r| r[1].parse().unwrap()).collect();
    assert_eq!(betas, [0.0, 0.5, 0.9]);
    assert!(rows.iter().all(|r| &r[2] == "3"));
    let acc: Vec<f64> = rows.iter().map(|r| r[5].parse().unwrap()).collect();
    assert!(acc.windows(2).all(|w| w[0] > w[1]), "{acc:?}");
    assert!((acc[0] - 0.9).abs() < 1e-12);

    let mut cx = csv::Reader::from_path(out.join("complexity.csv")).unwrap();
    let kl: Vec<f64> = cx.records().map(|r| r.unwrap()[2].parse().unwrap()).collect();
    assert_eq!(kl, [5.0, 1.0, 0.1]);

    let mut adv = csv::Reader::from_path(out.join("adversary_dz8.csv")).unwrap();
    assert_eq!(adv.records().count(), 6);
}

proptest! {
    #[test]
    fn median_lies_between_extremes(mut xs in prop::collection::vec(-1e6f64..1e6, 1..40)) {
        let lo = xs.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let m = median(&mut xs).unwrap();
        prop_assert!(lo <= m && m <= hi);
        let below = xs.iter().filter(|x| **x < m).count();
        let above = xs.iter().filter(|x| **x > m).count();
        prop_assert!(below <= xs.len() / 2 && above <= xs.len() / 2);
    }
}
