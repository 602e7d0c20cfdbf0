//! The training loop, periodic evaluation, and the persisted run record.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::groupcheck::{audit_model, audit_sample, ResidualReport};
use crate::groupify::{all_pairs, total_loss, GroupModel};
use crate::metrics::{evaluate, representation, MetricConfig, MetricReport};
use crate::nn::{adam_step, loss_and_grad, seeded_rng};
use crate::tensor::Real;
use crate::vae::VaeModel;

use super::config::RunConfig;

pub const LOG_EVERY: u64 = 100;
const BATCH_STREAM: u64 = 0x5eed_da7a_0000_0001;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossPoint {
    pub step: u64,
    pub loss: f64,
    pub recon: f64,
    pub kl: f64,
    pub iso: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalPoint {
    pub step: u64,
    pub metrics: MetricReport,
    pub residuals: ResidualReport,
    /// Per-pixel MSE of `decode(encode_μ(o))` on the audit images.
    pub recon_mse: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Ok,
    NumericAbort,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config_hash: String,
    /// Canonical config text; parsing it reproduces the run.
    pub config: String,
    pub objective: String,
    pub hyper: String,
    pub arm: String,
    pub seed: u64,
    pub status: RunStatus,
    pub error: Option<String>,
    pub evals: Vec<EvalPoint>,
    pub losses: Vec<LossPoint>,
    pub checkpoint: Option<String>,
    pub wall_clock_s: f64,
}

impl RunRecord {
    pub fn new(cfg: &RunConfig) -> Self {
        Self {
            config_hash: cfg.hash_hex(),
            config: cfg.canonical(),
            objective: cfg.objective.tag().to_string(),
            hyper: cfg.hyper_label(),
            arm: cfg.arm(),
            seed: cfg.seed,
            status: RunStatus::Ok,
            error: None,
            evals: Vec::new(),
            losses: Vec::new(),
            checkpoint: None,
            wall_clock_s: 0.0,
        }
    }

    pub fn run_config(&self) -> Result<RunConfig> {
        RunConfig::parse(&self.config)
    }

    pub fn initial_eval(&self) -> Option<&EvalPoint> {
        self.evals.first()
    }

    pub fn final_eval(&self) -> Option<&EvalPoint> {
        self.evals.last()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, serde_json::to_string_pretty(self)?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&fs::read(path)?)?)
    }
}

/// Writes through a sibling temp file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().and_then(|e| e.to_str()).unwrap_or("")
    ));
    {
        let mut f = File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Settings for one evaluation pass.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalSettings {
    pub n: usize,
    pub audit_size: usize,
    pub seed: u64,
}

impl EvalSettings {
    pub fn for_run(cfg: &RunConfig) -> Self {
        Self {
            n: cfg.n,
            audit_size: cfg.audit_size,
            seed: cfg.seed,
        }
    }
}

/// Per-pixel MSE of `decode(encode_μ(o))` against `o` over `indices`.
pub fn reconstruction_floor<T: Real, M: GroupModel<T>>(model: &M, dataset: &Dataset, indices: &[usize]) -> Result<f64> {
    let mut se = 0.0;
    let mut count = 0usize;
    for chunk in indices.chunks(256) {
        let mut tape = Tape::<T>::new();
        let x = tape.leaf(dataset.batch_tensor(chunk).cast::<T>());
        let mu = model.encode_mu(&mut tape, x)?;
        let img = model.decode_image(&mut tape, mu)?;
        tape.check_finite()?;
        for (a, b) in tape.value(img).data().iter().zip(tape.value(x).data()) {
            se += (a.to_f64c() - b.to_f64c()).powi(2);
        }
        count += tape.value(x).len();
    }
    Ok(se / count as f64)
}

/// Metrics, isomorphism audit over all dims and pairs, and the
/// reconstruction floor, for any model on the grid.
pub fn evaluate_model<M: GroupModel<f32>>(model: &M, dataset: &Dataset, settings: &EvalSettings, step: u64) -> Result<EvalPoint> {
    let rep = representation(model, dataset)?;
    let metrics = evaluate(
        &rep,
        &MetricConfig {
            seed: settings.seed,
            ..MetricConfig::default()
        },
    )?;
    let sample = audit_sample(dataset, settings.audit_size, settings.seed);
    let dims = GroupModel::<f32>::acted_dims(model);
    let pairs: Vec<(usize, usize)> = all_pairs(dims.len()).into_iter().map(|(i, j)| (dims[i], dims[j])).collect();
    let residuals = audit_model::<f32, _>(model, dataset, settings.n, &dims, &pairs, &sample)?;
    let recon_mse = reconstruction_floor::<f32, _>(model, dataset, &sample)?;
    Ok(EvalPoint {
        step,
        metrics,
        residuals,
        recon_mse,
    })
}

pub struct TrainOutput {
    pub model: VaeModel<f32>,
    pub record: RunRecord,
}

struct RunFiles {
    dir: PathBuf,
    log: BufWriter<File>,
}

impl RunFiles {
    fn create(dir: &Path, cfg: &RunConfig) -> Result<Self> {
        fs::create_dir_all(dir)?;
        write_atomic(&dir.join("config.txt"), cfg.canonical().as_bytes())?;
        let log = BufWriter::new(File::create(dir.join("log.jsonl"))?);
        Ok(Self {
            dir: dir.to_path_buf(),
            log,
        })
    }

    fn line(&mut self, value: serde_json::Value) -> Result<()> {
        writeln!(self.log, "{value}")?;
        self.log.flush()?;
        Ok(())
    }
}

fn log_eval(files: &mut Option<RunFiles>, e: &EvalPoint) -> Result<()> {
    if let Some(f) = files {
        let scores: serde_json::Map<String, serde_json::Value> = e
            .metrics
            .scores()
            .iter()
            .map(|(k, v)| (k.to_string(), (*v).into()))
            .collect();
        f.line(serde_json::json!({
            "event": "eval",
            "step": e.step,
            "scores": scores,
            "recon_mse": e.recon_mse,
            "residuals": e.residuals,
        }))?;
    }
    Ok(())
}

/// Trains one model. With `dir`, writes `config.txt`, `log.jsonl`,
/// `model.gvae` and `record.json` there. A non-finite loss or gradient
/// stops the run with [`Error::Numeric`] after recording the abort.
pub fn train(cfg: &RunConfig, dataset: &Dataset, dir: Option<&Path>) -> Result<TrainOutput> {
    cfg.validate()?;
    if cfg.latent_dim == 0 || dataset.is_empty() {
        return Err(Error::Config("empty dataset or latent".into()));
    }
    let started = Instant::now();
    let mut files = dir.map(|d| RunFiles::create(d, cfg)).transpose()?;
    let mut record = RunRecord::new(cfg);
    let mut model = VaeModel::<f32>::init(cfg.architecture(dataset.spec().pixels()), cfg.seed)?;
    let train_idx = dataset.train_indices(cfg.exclude_holdout);
    let vae_cfg = cfg.vae_config(train_idx.len());
    vae_cfg.validate(cfg.batch)?;
    let group_cfg = cfg.groupify_config();
    let settings = EvalSettings::for_run(cfg);
    let mut rng = seeded_rng(cfg.seed ^ BATCH_STREAM);

    let first = evaluate_model(&model, dataset, &settings, 0)?;
    log_eval(&mut files, &first)?;
    record.evals.push(first);

    for step in 1..=cfg.steps {
        let batch: Vec<usize> = (0..cfg.batch)
            .map(|_| train_idx[rng.gen_range(0..train_idx.len())])
            .collect();
        let x = dataset.batch_tensor(&batch);
        let mut point = LossPoint {
            step,
            loss: 0.0,
            recon: 0.0,
            kl: 0.0,
            iso: None,
        };
        let m = &model;
        let result = loss_and_grad(&m.params, |tape, bound| {
            let bm = m.with_bound(bound.clone());
            let xv = tape.leaf(x);
            let t = total_loss(tape, &bm, xv, &vae_cfg, group_cfg.as_ref(), &mut rng, step as i64)?;
            point.recon = tape.scalar(t.vae.recon) as f64;
            point.kl = tape.scalar(t.vae.kl) as f64;
            point.iso = t.iso.map(|v| tape.scalar(v) as f64);
            Ok(t.loss)
        });
        let grads = match result {
            Ok(g) if g.loss.is_finite() && g.grads.values().all(|t| t.is_finite()) => g,
            Ok(g) => {
                let msg = format!("non-finite loss or gradient at step {step} (loss {})", g.loss);
                return abort(record, files, started, msg, RunStatus::NumericAbort, step);
            }
            Err(e @ Error::Numeric { .. }) => {
                return abort(record, files, started, e.to_string(), RunStatus::NumericAbort, step)
            }
            Err(e) => return Err(e),
        };
        point.loss = grads.loss as f64;
        adam_step(&mut model.params, &grads, cfg.lr, step)?;
        if step % LOG_EVERY == 0 {
            if let Some(f) = files.as_mut() {
                let mut v = serde_json::to_value(&point)?;
                v["event"] = "loss".into();
                f.line(v)?;
            }
            record.losses.push(point);
        }
        let at_cadence = cfg.eval_every > 0 && step % cfg.eval_every == 0;
        if at_cadence || step == cfg.steps {
            let e = evaluate_model(&model, dataset, &settings, step)?;
            log_eval(&mut files, &e)?;
            record.evals.push(e);
        }
    }

    record.wall_clock_s = started.elapsed().as_secs_f64();
    if let Some(f) = files.as_mut() {
        let ckpt = f.dir.join("model.gvae");
        let bytes = model.to_bytes();
        write_atomic(&ckpt, &bytes)?;
        record.checkpoint = Some(ckpt.display().to_string());
        record.save(&f.dir.join("record.json"))?;
    }
    Ok(TrainOutput { model, record })
}

fn abort(
    mut record: RunRecord,
    mut files: Option<RunFiles>,
    started: Instant,
    msg: String,
    status: RunStatus,
    step: u64,
) -> Result<TrainOutput> {
    record.status = status;
    record.error = Some(msg.clone());
    record.wall_clock_s = started.elapsed().as_secs_f64();
    if let Some(f) = files.as_mut() {
        f.line(serde_json::json!({"event": "abort", "step": step, "error": msg}))?;
        record.save(&f.dir.join("record.json"))?;
    }
    Err(Error::Numeric {
        node: step as usize,
        op: "training step",
    })
}
