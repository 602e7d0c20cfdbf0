//! Aggregation of run records into CSV tables.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::metrics::representation;
use crate::vae::VaeModel;

use super::train::{RunRecord, RunStatus};

pub const METRICS: [&str; 4] = ["betavae", "factorvae", "mig", "dci"];

/// Every `record.json` under `dir`, in path order.
pub fn load_records(dir: &Path) -> Result<Vec<RunRecord>> {
    let mut out = Vec::new();
    for entry in walkdir::WalkDir::new(dir).sort_by_file_name() {
        let entry = entry.map_err(|e| Error::Io(e.into()))?;
        if entry.file_name() == "record.json" {
            out.push(RunRecord::load(entry.path())?);
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SummaryRow {
    pub objective: String,
    pub arm: String,
    /// Empty in the pooled table.
    pub hyper: String,
    pub metric: String,
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PairedRow {
    pub objective: String,
    pub hyper: String,
    pub seed: u64,
    pub arm: String,
    pub metric: String,
    pub original: f64,
    pub treated: f64,
    pub delta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SignRow {
    pub objective: String,
    pub arm: String,
    pub metric: String,
    pub pairs: usize,
    pub positive: usize,
    pub negative: usize,
    pub ties: usize,
    pub sign_test_p: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ResidualRow {
    pub config_hash: String,
    pub objective: String,
    pub arm: String,
    pub hyper: String,
    pub seed: u64,
    pub initial_abel: f64,
    pub final_abel: f64,
    pub initial_order: f64,
    pub final_order: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DistributionRow {
    pub objective: String,
    pub arm: String,
    pub hyper: String,
    pub seed: u64,
    pub metric: String,
    pub value: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Report {
    /// Per (objective, arm, hyperparameter, metric) over seeds.
    pub summary: Vec<SummaryRow>,
    /// Per (objective, arm, metric), pooled over hyperparameters and seeds.
    pub pooled: Vec<SummaryRow>,
    pub paired: Vec<PairedRow>,
    pub sign: Vec<SignRow>,
    pub distributions: Vec<DistributionRow>,
    pub residuals: Vec<ResidualRow>,
    pub warnings: Vec<String>,
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

/// Two-sided exact sign test with ties dropped.
pub fn sign_test_p(positive: usize, negative: usize) -> f64 {
    let k = positive + negative;
    if k == 0 {
        return 1.0;
    }
    let tail = positive.min(negative);
    let mut coef = 1.0f64;
    let mut total = 0.0f64;
    for i in 0..=tail {
        if i > 0 {
            coef = coef * (k - i + 1) as f64 / i as f64;
        }
        total += coef;
    }
    (2.0 * total / 2f64.powi(k as i32)).min(1.0)
}

/// Config keys that distinguish treatment arms; everything else (seed
/// included) identifies the matched cell.
const ARM_KEYS: [&str; 6] = ["decoder", "gamma_i", "loss_terms", "mode", "n", "pairs"];

fn cell_key(rec: &RunRecord) -> String {
    rec.config
        .lines()
        .filter(|l| !ARM_KEYS.iter().any(|k| l.starts_with(&format!("{k} = "))))
        .collect::<Vec<_>>()
        .join("\n")
}

fn final_scores(rec: &RunRecord) -> Option<BTreeMap<&'static str, f64>> {
    let e = rec.final_eval()?;
    Some(e.metrics.scores().into_iter().collect())
}

/// Builds every table from clean records; the input order does not matter.
pub fn build_report(records: &[RunRecord]) -> Report {
    let mut recs: Vec<&RunRecord> = records
        .iter()
        .filter(|r| r.status == RunStatus::Ok && r.final_eval().is_some())
        .collect();
    recs.sort_by(|a, b| {
        (&a.objective, &a.hyper, &a.arm, a.seed, &a.config_hash).cmp(&(&b.objective, &b.hyper, &b.arm, b.seed, &b.config_hash))
    });
    let mut report = Report::default();
    let skipped = records.len() - recs.len();
    if skipped > 0 {
        report.warnings.push(format!("{skipped} unfinished record(s) ignored"));
    }

    let mut by_cell: BTreeMap<(String, String, String, &str), Vec<f64>> = BTreeMap::new();
    let mut pooled: BTreeMap<(String, String, &str), Vec<f64>> = BTreeMap::new();
    for r in &recs {
        let scores = final_scores(r).expect("filtered");
        for m in METRICS {
            let v = scores[m];
            by_cell
                .entry((r.objective.clone(), r.arm.clone(), r.hyper.clone(), m))
                .or_default()
                .push(v);
            pooled.entry((r.objective.clone(), r.arm.clone(), m)).or_default().push(v);
            report.distributions.push(DistributionRow {
                objective: r.objective.clone(),
                arm: r.arm.clone(),
                hyper: r.hyper.clone(),
                seed: r.seed,
                metric: m.to_string(),
                value: v,
            });
        }
        if let (Some(first), Some(last)) = (r.initial_eval(), r.final_eval()) {
            report.residuals.push(ResidualRow {
                config_hash: r.config_hash.clone(),
                objective: r.objective.clone(),
                arm: r.arm.clone(),
                hyper: r.hyper.clone(),
                seed: r.seed,
                initial_abel: first.residuals.abel_residual.mean,
                final_abel: last.residuals.abel_residual.mean,
                initial_order: first.residuals.order_residual.mean,
                final_order: last.residuals.order_residual.mean,
            });
        }
    }
    for ((objective, arm, hyper, metric), v) in by_cell {
        let (mean, std) = mean_std(&v);
        report.summary.push(SummaryRow {
            objective,
            arm,
            hyper,
            metric: metric.to_string(),
            mean,
            std,
            n: v.len(),
        });
    }
    for ((objective, arm, metric), v) in pooled {
        let (mean, std) = mean_std(&v);
        report.pooled.push(SummaryRow {
            objective,
            arm,
            hyper: String::new(),
            metric: metric.to_string(),
            mean,
            std,
            n: v.len(),
        });
    }

    let mut originals: BTreeMap<String, &RunRecord> = BTreeMap::new();
    for r in recs.iter().filter(|r| r.arm == "original") {
        if originals.insert(cell_key(r), r).is_some() {
            report.warnings.push(format!("duplicate original run for cell of {}", r.config_hash));
        }
    }
    let mut counts: BTreeMap<(String, String, &str), (usize, usize, usize)> = BTreeMap::new();
    for r in recs.iter().filter(|r| r.arm != "original") {
        let Some(base) = originals.get(&cell_key(r)) else {
            report
                .warnings
                .push(format!("no matching original run for {} ({}); pairing skipped", r.config_hash, r.arm));
            continue;
        };
        let (a, b) = (final_scores(base).expect("filtered"), final_scores(r).expect("filtered"));
        for m in METRICS {
            let delta = b[m] - a[m];
            report.paired.push(PairedRow {
                objective: r.objective.clone(),
                hyper: r.hyper.clone(),
                seed: r.seed,
                arm: r.arm.clone(),
                metric: m.to_string(),
                original: a[m],
                treated: b[m],
                delta,
            });
            let c = counts.entry((r.objective.clone(), r.arm.clone(), m)).or_default();
            if delta > 0.0 {
                c.0 += 1;
            } else if delta < 0.0 {
                c.1 += 1;
            } else {
                c.2 += 1;
            }
        }
    }
    for ((objective, arm, metric), (positive, negative, ties)) in counts {
        report.sign.push(SignRow {
            objective,
            arm,
            metric: metric.to_string(),
            pairs: positive + negative + ties,
            positive,
            negative,
            ties,
            sign_test_p: sign_test_p(positive, negative),
        });
    }
    report
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// Latent means of every grid point for the three factors each best
/// captured by a single latent, one row per grid point.
pub fn latent_export(rec: &RunRecord, model: &VaeModel<f32>, dataset: &Dataset) -> Result<String> {
    let rep = representation(model, dataset)?;
    let mig = &rec.final_eval().ok_or_else(|| Error::Contract("record has no evaluation".into()))?.metrics.mig;
    let m = dataset.spec().num_factors();
    let mut best: Vec<(f64, usize, usize)> = (0..m)
        .map(|k| {
            let (j, mi) = mig
                .mi
                .iter()
                .enumerate()
                .map(|(j, row)| (j, row[k]))
                .fold((0, f64::NEG_INFINITY), |acc, x| if x.1 > acc.1 { x } else { acc });
            (mi / mig.factor_entropy[k].max(1e-12), k, j)
        })
        .collect();
    best.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    best.truncate(3);
    let names: Vec<&str> = best.iter().map(|&(_, k, _)| dataset.spec().factors[k].name.as_str()).collect();
    let mut out = String::from("index");
    for (&(_, _, j), name) in best.iter().zip(&names) {
        out.push_str(&format!(",{name},mu{j}"));
    }
    out.push('\n');
    for i in 0..dataset.len() {
        let labels = dataset.labels(i);
        out.push_str(&i.to_string());
        for &(_, k, j) in &best {
            out.push_str(&format!(",{},{}", labels.values[k], rep.code(i)[j]));
        }
        out.push('\n');
    }
    Ok(out)
}

/// Writes all tables into `out`, plus `latent/<hash>.csv` for every record
/// whose checkpoint loads against `dataset`.
pub fn write_report(report: &Report, records: &[RunRecord], out: &Path, dataset: Option<&Dataset>) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out)?;
    let mut written = Vec::new();
    let mut emit = |name: &str, f: &dyn Fn(&Path) -> Result<()>| -> Result<()> {
        let p = out.join(name);
        f(&p)?;
        written.push(p);
        Ok(())
    };
    emit("summary.csv", &|p| write_csv(p, &report.summary))?;
    emit("pooled.csv", &|p| write_csv(p, &report.pooled))?;
    emit("paired.csv", &|p| write_csv(p, &report.paired))?;
    emit("sign_test.csv", &|p| write_csv(p, &report.sign))?;
    emit("distributions.csv", &|p| write_csv(p, &report.distributions))?;
    emit("residuals.csv", &|p| write_csv(p, &report.residuals))?;
    if let Some(ds) = dataset {
        let dir = out.join("latent");
        fs::create_dir_all(&dir)?;
        for r in records.iter().filter(|r| r.status == RunStatus::Ok) {
            let Some(ckpt) = &r.checkpoint else { continue };
            let Ok(model) = VaeModel::load(Path::new(ckpt)) else { continue };
            if model.arch.pixels != ds.spec().pixels() {
                continue;
            }
            let p = dir.join(format!("{}.csv", r.config_hash));
            fs::write(&p, latent_export(r, &model, ds)?)?;
            written.push(p);
        }
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sign_test_values() {
        assert_eq!(sign_test_p(0, 0), 1.0);
        assert!((sign_test_p(5, 0) - 0.0625).abs() < 1e-12);
        assert!((sign_test_p(4, 1) - 0.375).abs() < 1e-12);
        assert_eq!(sign_test_p(3, 3), 1.0);
    }

    #[test]
    fn single_value_has_zero_std() {
        assert_eq!(mean_std(&[0.7]), (0.7, 0.0));
        let (m, s) = mean_std(&[1.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 2f64.sqrt()).abs() < 1e-12);
    }
}
