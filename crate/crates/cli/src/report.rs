//! Plot-ready CSVs from a records file: per (d_z, β) medians over seeds.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::error::{Abort, CliResult};
use crate::records::{read_records, ExperimentRecord, Status};

pub fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    Some(if n % 2 == 1 { values[n / 2] } else { 0.5 * (values[n / 2 - 1] + values[n / 2]) })
}

fn median_of<'a>(recs: &[&'a ExperimentRecord], f: impl Fn(&'a ExperimentRecord) -> Option<f64>) -> Option<f64> {
    median(&mut recs.iter().filter_map(|r| f(r)).collect::<Vec<_>>())
}

#[derive(Debug, Serialize)]
struct UtilityRow {
    dz: usize,
    beta: f64,
    seeds: usize,
    util_acc_train: Option<f64>,
    util_acc_val: Option<f64>,
    util_acc_test: Option<f64>,
}

#[derive(Debug, Serialize)]
struct ComplexityRow {
    dz: usize,
    beta: f64,
    kl_upper: Option<f64>,
    kl_correction: Option<f64>,
    corrected: Option<f64>,
}

#[derive(Debug, Serialize)]
struct LeakageRow {
    dz: usize,
    beta: f64,
    mi_sz_mine: Option<f64>,
    mi_uz_mine: Option<f64>,
    /// Adversary accuracy at the largest data ratio.
    adv_acc: Option<f64>,
}

#[derive(Debug, Serialize)]
struct AdversaryRow {
    beta: f64,
    data_ratio: f64,
    adv_acc: Option<f64>,
    adv_xent: Option<f64>,
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path).aborted(&format!("cannot write {}", path.display()))?;
    for r in rows {
        w.serialize(r).aborted("cannot write report row")?;
    }
    w.flush().aborted("cannot write report")
}

/// Groups successful records by `(d_z, β)`, keeping only the latest
/// record per config hash.
fn grouped(records: &[ExperimentRecord]) -> BTreeMap<(usize, u64), Vec<&ExperimentRecord>> {
    let mut latest: HashMap<&str, &ExperimentRecord> = HashMap::new();
    for r in records.iter().filter(|r| r.status == Status::Ok) {
        latest.insert(&r.config_hash, r);
    }
    let mut groups: BTreeMap<(usize, u64), Vec<&ExperimentRecord>> = BTreeMap::new();
    for r in latest.into_values() {
        // β ≥ 0, so its bit pattern sorts like the value.
        groups.entry((r.dz, r.beta.to_bits())).or_default().push(r);
    }
    for recs in groups.values_mut() {
        recs.sort_by_key(|r| r.seed);
    }
    groups
}

pub fn emit_report(records_path: &Path, out_dir: &Path) -> CliResult<usize> {
    let records = read_records(records_path)?;
    let groups = grouped(&records);
    fs::create_dir_all(out_dir).aborted("cannot create report directory")?;

    let (mut utility, mut complexity, mut leakage) = (Vec::new(), Vec::new(), Vec::new());
    let mut adversary: BTreeMap<usize, Vec<AdversaryRow>> = BTreeMap::new();
    for (&(dz, bits), recs) in &groups {
        let beta = f64::from_bits(bits);
        utility.push(UtilityRow {
            dz,
            beta,
            seeds: recs.len(),
            util_acc_train: median_of(recs, |r| r.util_acc_train),
            util_acc_val: median_of(recs, |r| r.util_acc_val),
            util_acc_test: median_of(recs, |r| r.util_acc_test),
        });
        complexity.push(ComplexityRow {
            dz,
            beta,
            kl_upper: median_of(recs, |r| r.complexity.map(|c| c.kl_upper)),
            kl_correction: median_of(recs, |r| r.complexity.map(|c| c.correction)),
            corrected: median_of(recs, |r| r.complexity.map(|c| c.corrected)),
        });
        let mut ratios: Vec<f64> = recs.iter().flat_map(|r| r.adversary.iter().map(|a| a.data_ratio)).collect();
        ratios.sort_by(f64::total_cmp);
        ratios.dedup();
        let at = |ratio: f64, f: fn(&crate::records::AdversaryResult) -> f64| {
            median_of(recs, |r| r.adversary.iter().find(|a| a.data_ratio == ratio).map(f))
        };
        leakage.push(LeakageRow {
            dz,
            beta,
            mi_sz_mine: median_of(recs, |r| r.mi_sz.map(|m| m.value)),
            mi_uz_mine: median_of(recs, |r| r.mi_uz.map(|m| m.value)),
            adv_acc: ratios.last().and_then(|&q| at(q, |a| a.accuracy)),
        });
        let rows = adversary.entry(dz).or_default();
        for &q in &ratios {
            rows.push(AdversaryRow { beta, data_ratio: q, adv_acc: at(q, |a| a.accuracy), adv_xent: at(q, |a| a.cross_entropy) });
        }
    }

    write_csv(&out_dir.join("utility.csv"), &utility)?;
    write_csv(&out_dir.join("complexity.csv"), &complexity)?;
    write_csv(&out_dir.join("leakage.csv"), &leakage)?;
    for (dz, rows) in &adversary {
        write_csv(&out_dir.join(format!("adversary_dz{dz}.csv")), rows)?;
    }
    Ok(groups.len())
}
