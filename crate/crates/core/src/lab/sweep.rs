//! Resumable sweeps over a grid of run configs.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use crate::data::Dataset;
use crate::error::{Error, Result};

use super::config::{DatasetSource, RunConfig, SweepConfig};
use super::train::{train, RunRecord, RunStatus};

pub const WORKERS_ENV: &str = "GVAE_WORKERS";

/// `GVAE_WORKERS` if set and positive, else the available parallelism.
pub fn workers_from_env() -> usize {
    std::env::var(WORKERS_ENV)
        .ok()
        .and_then(|v| v.parse().ok())
        .filter(|&w: &usize| w > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

pub fn run_dir(out: &Path, cfg: &RunConfig) -> PathBuf {
    out.join("runs").join(cfg.hash_hex())
}

/// A run counts as done when its record exists and finished cleanly.
pub fn is_complete(out: &Path, cfg: &RunConfig) -> bool {
    RunRecord::load(&run_dir(out, cfg).join("record.json"))
        .map(|r| r.status == RunStatus::Ok && r.config_hash == cfg.hash_hex())
        .unwrap_or(false)
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SweepSummary {
    pub total: usize,
    pub skipped: usize,
    pub completed: usize,
    /// `(config hash, error)` for every run that did not finish.
    pub failed: Vec<(String, String)>,
}

/// Runs every cell not already complete under `out/runs/<hash>`, at most
/// `workers` at a time. A failing cell is recorded and the sweep goes on.
pub fn run_sweep(
    sweep: &SweepConfig,
    out: &Path,
    workers: usize,
    progress: &(dyn Fn(&str) + Sync),
) -> Result<SweepSummary> {
    let configs = sweep.expand()?;
    run_configs(&configs, out, workers, progress)
}

pub fn run_configs(
    configs: &[RunConfig],
    out: &Path,
    workers: usize,
    progress: &(dyn Fn(&str) + Sync),
) -> Result<SweepSummary> {
    std::fs::create_dir_all(out.join("runs"))?;
    let mut datasets: HashMap<DatasetSource, Dataset> = HashMap::new();
    for cfg in configs {
        if !datasets.contains_key(&cfg.dataset) {
            datasets.insert(cfg.dataset.clone(), cfg.dataset.load()?);
        }
    }
    let pending: Vec<&RunConfig> = configs.iter().filter(|c| !is_complete(out, c)).collect();
    let summary = Mutex::new(SweepSummary {
        total: configs.len(),
        skipped: configs.len() - pending.len(),
        ..SweepSummary::default()
    });
    let next = AtomicUsize::new(0);
    std::thread::scope(|s| {
        for _ in 0..workers.max(1).min(pending.len().max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(cfg) = pending.get(i) else { break };
                let dir = run_dir(out, cfg);
                let label = format!("{} {} {} seed={}", cfg.hash_hex(), cfg.arm(), cfg.hyper_label(), cfg.seed);
                progress(&format!("start {label}"));
                let result = train(cfg, &datasets[&cfg.dataset], Some(&dir));
                let mut sum = summary.lock().expect("summary lock");
                match result {
                    Ok(_) => {
                        sum.completed += 1;
                        progress(&format!("done {label}"));
                    }
                    Err(e) => {
                        if !matches!(e, Error::Numeric { .. }) {
                            let mut rec = RunRecord::new(cfg);
                            rec.status = RunStatus::Failed;
                            rec.error = Some(e.to_string());
                            let _ = std::fs::create_dir_all(&dir).and_then(|_| {
                                rec.save(&dir.join("record.json")).map_err(std::io::Error::other)
                            });
                        }
                        progress(&format!("failed {label}: {e}"));
                        sum.failed.push((cfg.hash_hex(), e.to_string()));
                    }
                }
            });
        }
    });
    Ok(summary.into_inner().expect("summary lock"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sweep_resumes_only_missing_cells() {
        let dir = tempfile::tempdir().unwrap();
        let sweep = SweepConfig::parse(
            "steps = 2\nbatch = 4\neval_every = 0\naudit_size = 8\nseeds = 0,1\nmodes = original, groupified\n",
        )
        .unwrap();
        let quiet = |_: &str| {};
        let first = run_sweep(&sweep, dir.path(), 2, &quiet).unwrap();
        assert_eq!((first.total, first.completed, first.skipped), (4, 4, 0));
        let victim = &sweep.expand().unwrap()[1];
        std::fs::remove_file(run_dir(dir.path(), victim).join("record.json")).unwrap();
        let second = run_sweep(&sweep, dir.path(), 1, &quiet).unwrap();
        assert_eq!((second.completed, second.skipped), (1, 3));
        assert!(second.failed.is_empty());
    }

    #[test]
    fn failures_are_recorded_and_do_not_stop_the_sweep() {
        let dir = tempfile::tempdir().unwrap();
        let sweep = SweepConfig::parse(
            "steps = 30\nbatch = 4\neval_every = 0\naudit_size = 8\nmode = original\nactivation = relu\n\
             variant = lr=1e30\nvariant = lr=1e-3\n",
        )
        .unwrap();
        let s = run_sweep(&sweep, dir.path(), 1, &|_| {}).unwrap();
        assert_eq!(s.completed, 1);
        assert_eq!(s.failed.len(), 1);
        let bad = &sweep.expand().unwrap()[0];
        let rec = RunRecord::load(&run_dir(dir.path(), bad).join("record.json")).unwrap();
        assert_eq!(rec.status, RunStatus::NumericAbort);
    }
}
