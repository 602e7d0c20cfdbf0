mod common;

use std::collections::HashSet;
use std::path::PathBuf;

use gvae_core::lab::{build_report, evaluate_model, train, EvalSettings, RunConfig, RunRecord, SweepConfig};
use gvae_core::{Dataset, FactorSpec, OracleModel};

fn small(text: &str) -> RunConfig {
    let mut cfg = RunConfig::parse("steps = 40\neval_every = 20\naudit_size = 16\nbatch = 16").unwrap();
    for line in text.lines() {
        let (k, v) = line.split_once('=').unwrap();
        cfg.set(k.trim(), v.trim()).unwrap();
    }
    cfg.validate().unwrap();
    cfg
}

fn configs_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

#[test]
fn zero_isomorphism_weight_is_the_baseline() {
    let ds = Dataset::generate(&FactorSpec::default()).unwrap();
    let base = small("mode = original\nseed = 3");
    let degenerate = small("mode = groupified\ngamma_i = 0\ndecoder = original\nseed = 3");
    assert_ne!(base.hash(), degenerate.hash());
    let a = train(&base, &ds, None).unwrap();
    let b = train(&degenerate, &ds, None).unwrap();
    assert!(a.model.to_bytes() == b.model.to_bytes());
    assert_eq!(a.record.losses, b.record.losses);
}

#[test]
fn a_record_reproduces_its_run() {
    let ds = Dataset::generate(&FactorSpec::default()).unwrap();
    let cfg = small("seed = 5\nobjective = betatc\nbeta_tc = 3");
    let dir = tempfile::tempdir().unwrap();
    let first = train(&cfg, &ds, Some(dir.path())).unwrap();
    let rec = RunRecord::load(&dir.path().join("record.json")).unwrap();
    let again = train(&rec.run_config().unwrap(), &ds, None).unwrap();
    assert!(first.model.to_bytes() == again.model.to_bytes());
    assert_eq!(rec.evals.len(), 3);
    let scores = |r: &RunRecord| r.final_eval().unwrap().metrics.scores();
    assert_eq!(scores(&rec), scores(&again.record));
}

#[test]
fn oracle_evaluation_is_perfect() {
    let ds = Dataset::generate(&FactorSpec::default()).unwrap();
    let oracle = OracleModel::new(&ds, 8).unwrap();
    let settings = EvalSettings {
        n: 8,
        audit_size: 256,
        seed: 0,
    };
    let e = evaluate_model(&oracle, &ds, &settings, 0).unwrap();
    for (name, s) in e.metrics.scores() {
        assert!(s >= 0.98, "{name} = {s}");
    }
    assert_eq!(e.residuals.sample_size, 231);
    assert_eq!(e.recon_mse, 0.0);
}

#[test]
fn sweep_grids_have_the_advertised_shape() {
    let default = SweepConfig::load(&configs_dir().join("sweep_default.txt")).unwrap().expand().unwrap();
    let ablation = SweepConfig::load(&configs_dir().join("ablation.txt")).unwrap().expand().unwrap();
    assert_eq!(default.len(), 60);
    assert_eq!(ablation.len(), 20);
    let hashes: HashSet<u64> = default.iter().chain(&ablation).map(|c| c.hash()).collect();
    assert_eq!(hashes.len(), 80);
    // Every ablation arm finds its full-groupified and original partners
    // in the default grid.
    for cfg in &ablation {
        for mode in ["groupified", "original"] {
            let mut partner = cfg.clone();
            partner.set("mode", mode).unwrap();
            partner.set("n", "10").unwrap();
            partner.set("loss_terms", "both").unwrap();
            assert!(hashes.contains(&partner.hash()), "{} has no {mode} partner", cfg.arm());
        }
    }
}

#[test]
fn report_pairs_every_treated_run() {
    let ds = Dataset::generate(&FactorSpec::default()).unwrap();
    let mut records = Vec::new();
    for seed in 0..2 {
        for mode in ["original", "groupified"] {
            let cfg = small(&format!("mode = {mode}\nseed = {seed}\nsteps = 5\neval_every = 0"));
            records.push(train(&cfg, &ds, None).unwrap().record);
        }
    }
    let report = build_report(&records);
    assert!(report.warnings.is_empty(), "{:?}", report.warnings);
    assert_eq!(report.paired.len(), 2 * 4);
    assert_eq!(report.residuals.len(), 4);
    for row in report.sign.iter() {
        assert_eq!(row.pairs, 2);
        assert_eq!(row.positive + row.negative + row.ties, 2);
    }
    for row in &report.paired {
        assert!((row.delta - (row.treated - row.original)).abs() < 1e-15);
    }
}
