use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use gvae_core::lab::traverse::write_pgm;
use gvae_core::lab::{
    build_report, evaluate_model, load_records, run_sweep, train, traversal_points, traverse, workers_from_env,
    write_report, DatasetSource, EvalSettings, RunConfig, SweepConfig,
};
use gvae_core::vae::DecoderInput;
use gvae_core::{Dataset, Error, FactorSpec, GroupModel, OracleModel, VaeModel};

/// Groupified VAE laboratory.
#[derive(Parser)]
#[command(name = "gvae", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render the factor grid to a dataset file.
    GenData(GenData),
    /// Train one model from a run config.
    Train(Train),
    /// Metrics and isomorphism audit for a checkpoint (or the oracle model).
    Eval(Eval),
    /// Decode a latent traversal and check its period.
    Traverse(Traverse),
    /// Run every missing cell of a sweep config.
    Sweep(Sweep),
    /// Aggregate run records into CSV tables.
    Report(Report),
}

#[derive(Args)]
struct GenData {
    /// Factor cardinalities: shape, scale, pos_x, pos_y.
    #[arg(long, value_delimiter = ',', default_value = "3,6,8,8")]
    cards: Vec<usize>,
    #[arg(long, default_value_t = 16)]
    height: usize,
    #[arg(long, default_value_t = 16)]
    width: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct Train {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Run directory; defaults to `<out_dir>/<config hash>`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ModelSource {
    /// Checkpoint written by `train`.
    #[arg(long, conflicts_with = "oracle", required_unless_present = "oracle")]
    checkpoint: Option<PathBuf>,
    /// Use the closed-form oracle model instead of a checkpoint.
    #[arg(long)]
    oracle: bool,
    /// Dataset file, or `builtin` for the default grid.
    #[arg(long, default_value = "builtin")]
    dataset: String,
}

#[derive(Args)]
struct Eval {
    #[command(flatten)]
    source: ModelSource,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Cyclic modulus for the audit; defaults to the checkpoint's.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long, default_value_t = 256)]
    audit_size: usize,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct Traverse {
    #[command(flatten)]
    source: ModelSource,
    #[arg(long, default_value_t = 0)]
    image: usize,
    #[arg(long, default_value_t = 0)]
    dim: usize,
    #[arg(long, default_value_t = 0.0)]
    t0: f64,
    #[arg(long, default_value_t = 18.0)]
    t1: f64,
    #[arg(long, default_value_t = 2.0)]
    step: f64,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct Sweep {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Overrides the base seed list with a single seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct Report {
    /// Directory searched recursively for `record.json` files.
    #[arg(long)]
    records: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Dataset for the latent-space export.
    #[arg(long, default_value = "builtin")]
    dataset: String,
}

fn dataset_source(s: &str) -> DatasetSource {
    if s == "builtin" {
        DatasetSource::Builtin
    } else {
        DatasetSource::File(PathBuf::from(s))
    }
}

fn load_model(path: &Path, dataset: &Dataset) -> Result<VaeModel<f32>> {
    let model = VaeModel::load(path).with_context(|| format!("loading {}", path.display()))?;
    if model.arch.pixels != dataset.spec().pixels() {
        return Err(Error::Format(format!(
            "checkpoint expects {} pixels, dataset has {}",
            model.arch.pixels,
            dataset.spec().pixels()
        ))
        .into());
    }
    Ok(model)
}

fn model_modulus(model: &VaeModel<f32>) -> Option<usize> {
    match model.arch.decoder {
        DecoderInput::Cyclic { n } => Some(n),
        DecoderInput::Original => None,
    }
}

/// Runs `f` on the model named by `source`, with its cyclic modulus.
fn with_model<R>(
    source: &ModelSource,
    n: Option<usize>,
    f: impl FnOnce(&dyn ModelRef, &Dataset, usize) -> Result<R>,
) -> Result<R> {
    let dataset = dataset_source(&source.dataset).load()?;
    if source.oracle {
        let n = n.unwrap_or(dataset.spec().factors[2].cardinality);
        let oracle = OracleModel::new(&dataset, n)?;
        f(&oracle, &dataset, n)
    } else {
        let path = source.checkpoint.as_ref().context("--checkpoint is required")?;
        let model = load_model(path, &dataset)?;
        let n = n.or(model_modulus(&model)).unwrap_or(10);
        f(&model, &dataset, n)
    }
}

/// Object-safe view of the two model kinds the CLI can evaluate.
trait ModelRef {
    fn eval(&self, dataset: &Dataset, settings: &EvalSettings) -> gvae_core::Result<gvae_core::lab::EvalPoint>;
    fn traverse(
        &self,
        dataset: &Dataset,
        image: usize,
        dim: usize,
        ts: &[f64],
        n: usize,
    ) -> gvae_core::Result<gvae_core::lab::Traversal>;
    fn recon_floor(&self, dataset: &Dataset, indices: &[usize]) -> gvae_core::Result<f64>;
}

impl<M: GroupModel<f32>> ModelRef for M {
    fn eval(&self, dataset: &Dataset, settings: &EvalSettings) -> gvae_core::Result<gvae_core::lab::EvalPoint> {
        evaluate_model(self, dataset, settings, 0)
    }

    fn traverse(
        &self,
        dataset: &Dataset,
        image: usize,
        dim: usize,
        ts: &[f64],
        n: usize,
    ) -> gvae_core::Result<gvae_core::lab::Traversal> {
        traverse(self, dataset, image, dim, ts, n)
    }

    fn recon_floor(&self, dataset: &Dataset, indices: &[usize]) -> gvae_core::Result<f64> {
        gvae_core::lab::train::reconstruction_floor::<f32, _>(self, dataset, indices)
    }
}

fn cmd_gen_data(a: GenData) -> Result<()> {
    let spec = FactorSpec::new(&a.cards, a.height, a.width)?;
    let ds = Dataset::generate(&spec)?;
    ds.save(&a.out)?;
    println!("wrote {} images to {}", ds.len(), a.out.display());
    Ok(())
}

fn cmd_train(a: Train) -> Result<()> {
    let mut cfg = RunConfig::load(&a.config)?;
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    let dir = a.out.unwrap_or_else(|| cfg.out_dir.join(cfg.hash_hex()));
    let dataset = cfg.dataset.load()?;
    let out = train(&cfg, &dataset, Some(&dir))?;
    let last = out.record.final_eval().context("run produced no evaluation")?;
    let scores: serde_json::Map<_, _> = last
        .metrics
        .scores()
        .iter()
        .map(|(k, v)| (k.to_string(), serde_json::json!(v)))
        .collect();
    println!(
        "{}",
        serde_json::json!({
            "run_dir": dir.display().to_string(),
            "config_hash": out.record.config_hash,
            "steps": cfg.steps,
            "scores": scores,
            "abel_residual": last.residuals.abel_residual.mean,
            "order_residual": last.residuals.order_residual.mean,
        })
    );
    Ok(())
}

fn cmd_eval(a: Eval) -> Result<()> {
    let audit_size = a.audit_size;
    let seed = a.seed;
    let json = with_model(&a.source, a.n, |m, dataset, n| {
        let settings = EvalSettings { n, audit_size, seed };
        let e = m.eval(dataset, &settings)?;
        Ok(serde_json::to_string_pretty(&serde_json::json!({
            "n": n,
            "metrics": e.metrics,
            "residuals": e.residuals,
            "recon_mse": e.recon_mse,
        }))?)
    })?;
    match a.out {
        Some(p) => std::fs::write(&p, json).with_context(|| format!("writing {}", p.display()))?,
        None => println!("{json}"),
    }
    Ok(())
}

fn cmd_traverse(a: Traverse) -> Result<()> {
    let ts = traversal_points(a.t0, a.t1, a.step)?;
    std::fs::create_dir_all(&a.out)?;
    let (image, dim, out) = (a.image, a.dim, a.out.clone());
    let report = with_model(&a.source, a.n, |m, dataset, n| {
        {
            let tr = m.traverse(dataset, image, dim, &ts, n)?;
            let (w, h, px) = tr.strip();
            write_pgm(&out.join(format!("traverse_i{image}_d{dim}.pgm")), w, h, &px)?;
            let holdout = dataset.holdout_indices();
            let floor = m.recon_floor(dataset, &holdout)?;
            let period = tr.period_report(image, dim, n);
            Ok(serde_json::json!({
                "period": period,
                "recon_mse_floor": floor,
                "within_10x_floor": period.period_mse < 10.0 * floor,
            }))
        }
    })?;
    let text = serde_json::to_string_pretty(&report)?;
    std::fs::write(a.out.join("period.json"), &text)?;
    println!("{text}");
    Ok(())
}

fn cmd_sweep(a: Sweep) -> Result<()> {
    let mut sweep = SweepConfig::load(&a.config)?;
    if let Some(seed) = a.seed {
        sweep.seeds = vec![seed];
    }
    let workers = workers_from_env();
    let summary = run_sweep(&sweep, &a.out, workers, &|msg| eprintln!("{msg}"))?;
    println!(
        "{} runs: {} completed, {} already done, {} failed",
        summary.total,
        summary.completed,
        summary.skipped,
        summary.failed.len()
    );
    for (hash, err) in &summary.failed {
        eprintln!("failed {hash}: {err}");
    }
    Ok(())
}

fn cmd_report(a: Report) -> Result<()> {
    let records = load_records(&a.records)?;
    if records.is_empty() {
        bail!(Error::Config(format!("no record.json under {}", a.records.display())));
    }
    let dataset = dataset_source(&a.dataset).load().ok();
    let report = build_report(&records);
    let written = write_report(&report, &records, &a.out, dataset.as_ref())?;
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    println!("{} records, {} files written to {}", records.len(), written.len(), a.out.display());
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.chain().find_map(|e| e.downcast_ref::<Error>()) {
        Some(Error::Config(_)) => 2,
        Some(Error::Numeric { .. } | Error::Collapsed(_)) => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenData(a) => cmd_gen_data(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Traverse(a) => cmd_traverse(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Report(a) => cmd_report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
