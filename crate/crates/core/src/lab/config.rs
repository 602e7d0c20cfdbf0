//! Flat `key = value` run and sweep configuration.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::hash::Hasher;
use std::path::{Path, PathBuf};

use fnv::FnvHasher;

use crate::data::{Dataset, FactorSpec};
use crate::error::{Error, Result};
use crate::groupify::{GroupifyConfig, LossTerms, PairStrategy};
use crate::nn::Activation;
use crate::vae::{Architecture, DecoderInput, Objective, VaeConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Mode {
    Original,
    Groupified,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Original => "original",
            Mode::Groupified => "groupified",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "original" => Ok(Mode::Original),
            "groupified" => Ok(Mode::Groupified),
            _ => Err(Error::Config(format!("unknown mode `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum DatasetSource {
    /// The default factor grid, rendered in memory.
    Builtin,
    File(PathBuf),
}

impl DatasetSource {
    pub fn load(&self) -> Result<Dataset> {
        match self {
            DatasetSource::Builtin => Dataset::generate(&FactorSpec::default()),
            DatasetSource::File(p) => Dataset::load(p),
        }
    }

    fn as_value(&self) -> String {
        match self {
            DatasetSource::Builtin => "builtin".into(),
            DatasetSource::File(p) => p.display().to_string(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub dataset: DatasetSource,
    pub objective: Objective,
    pub latent_dim: usize,
    pub mode: Mode,
    /// Decoder convention; `mode = original` always uses the raw latent.
    pub cyclic_decoder: bool,
    pub n: usize,
    pub gamma_i: f64,
    pub pair_strategy: PairStrategy,
    pub loss_terms: LossTerms,
    pub activation: Activation,
    pub seed: u64,
    pub steps: u64,
    pub batch: usize,
    pub lr: f64,
    pub eval_every: u64,
    pub audit_size: usize,
    pub exclude_holdout: bool,
    pub out_dir: PathBuf,
}

pub const DEFAULT_ANNEAL_GAMMA: f64 = 100.0;
pub const DEFAULT_C_STEPS: u64 = 4000;

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetSource::Builtin,
            objective: Objective::Beta { beta: 4.0 },
            latent_dim: 4,
            mode: Mode::Groupified,
            cyclic_decoder: true,
            n: 10,
            gamma_i: 1.0,
            pair_strategy: PairStrategy::All,
            loss_terms: LossTerms::default(),
            activation: Activation::Tanh,
            seed: 0,
            steps: 8000,
            batch: 64,
            lr: 1e-3,
            eval_every: 2000,
            audit_size: 256,
            exclude_holdout: true,
            out_dir: PathBuf::from("runs"),
        }
    }
}

/// Keys accepted in a run config, in canonical order.
pub const RUN_KEYS: &[&str] = &[
    "activation",
    "anneal_gamma",
    "audit_size",
    "batch",
    "beta",
    "beta_tc",
    "c_max",
    "c_steps",
    "dataset",
    "decoder",
    "eval_every",
    "exclude_holdout",
    "gamma_i",
    "latent_dim",
    "loss_terms",
    "lr",
    "mode",
    "n",
    "objective",
    "out_dir",
    "pairs",
    "seed",
    "steps",
];

/// Parses `key = value` lines; `#` starts a comment. Repeated keys are
/// returned in order.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", lineno + 1)))?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(Error::Config(format!("line {}: empty key", lineno + 1)));
        }
        out.push((k.to_string(), v.to_string()));
    }
    Ok(out)
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{v}`")))
}

fn flag(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("`{key}`: expected true or false, got `{v}`"))),
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (k, v) in parse_pairs(text)? {
            if map.insert(k.clone(), v).is_some() {
                return Err(Error::Config(format!("duplicate key `{k}`")));
            }
        }
        Self::from_map(&map)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Applies `key = value` overrides on top of the defaults.
    pub fn from_map(map: &BTreeMap<String, String>) -> Result<Self> {
        let mut cfg = Self::default();
        for (k, v) in map {
            cfg.set(k, v)?;
        }
        // objective-specific knobs may precede `objective`; apply them again
        if let Some(obj) = map.get("objective") {
            cfg.set("objective", obj)?;
            for (k, v) in map {
                if matches!(k.as_str(), "beta" | "anneal_gamma" | "c_max" | "c_steps" | "beta_tc") {
                    cfg.set(k, v)?;
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "dataset" => {
                self.dataset = if v == "builtin" {
                    DatasetSource::Builtin
                } else {
                    DatasetSource::File(PathBuf::from(v))
                }
            }
            "objective" => {
                self.objective = match (v, &self.objective) {
                    ("beta", Objective::Beta { .. }) | ("anneal", Objective::Anneal { .. }) | ("betatc", Objective::BetaTc { .. }) => {
                        return Ok(())
                    }
                    ("beta", _) => Objective::Beta { beta: 4.0 },
                    ("anneal", _) => Objective::Anneal {
                        gamma: DEFAULT_ANNEAL_GAMMA,
                        c_max: 25.0,
                        c_steps: DEFAULT_C_STEPS,
                    },
                    ("betatc", _) => Objective::BetaTc { beta_tc: 6.0 },
                    _ => return Err(Error::Config(format!("unknown objective `{v}`"))),
                }
            }
            "beta" | "anneal_gamma" | "c_max" | "c_steps" | "beta_tc" => self.set_objective_knob(key, v)?,
            "latent_dim" => self.latent_dim = num(key, v)?,
            "mode" => self.mode = Mode::parse(v)?,
            "decoder" => {
                self.cyclic_decoder = match v {
                    "cyclic" => true,
                    "original" => false,
                    _ => return Err(Error::Config(format!("unknown decoder `{v}`"))),
                }
            }
            "n" => self.n = num(key, v)?,
            "gamma_i" => self.gamma_i = num(key, v)?,
            "pairs" => {
                self.pair_strategy = match v {
                    "all" => PairStrategy::All,
                    _ => match v.strip_prefix("sampled:") {
                        Some(k) => PairStrategy::Sampled(num(key, k)?),
                        None => return Err(Error::Config(format!("`pairs`: expected all or sampled:K, got `{v}`"))),
                    },
                }
            }
            "loss_terms" => {
                self.loss_terms = match v {
                    "both" => LossTerms { abel: true, order: true },
                    "abel" => LossTerms { abel: true, order: false },
                    "order" => LossTerms { abel: false, order: true },
                    _ => return Err(Error::Config(format!("`loss_terms`: expected both, abel or order, got `{v}`"))),
                }
            }
            "activation" => self.activation = Activation::parse(v)?,
            "seed" => self.seed = num(key, v)?,
            "steps" => self.steps = num(key, v)?,
            "batch" => self.batch = num(key, v)?,
            "lr" => self.lr = num(key, v)?,
            "eval_every" => self.eval_every = num(key, v)?,
            "audit_size" => self.audit_size = num(key, v)?,
            "exclude_holdout" => self.exclude_holdout = flag(key, v)?,
            "out_dir" => self.out_dir = PathBuf::from(v),
            _ => {
                return Err(Error::Config(format!(
                    "unknown key `{key}` (expected one of {})",
                    RUN_KEYS.join(", ")
                )))
            }
        }
        Ok(())
    }

    fn set_objective_knob(&mut self, key: &str, v: &str) -> Result<()> {
        match (&mut self.objective, key) {
            (Objective::Beta { beta }, "beta") => *beta = num(key, v)?,
            (Objective::Anneal { gamma, .. }, "anneal_gamma") => *gamma = num(key, v)?,
            (Objective::Anneal { c_max, .. }, "c_max") => *c_max = num(key, v)?,
            (Objective::Anneal { c_steps, .. }, "c_steps") => *c_steps = num(key, v)?,
            (Objective::BetaTc { beta_tc }, "beta_tc") => *beta_tc = num(key, v)?,
            // knobs of other objectives are accepted and ignored
            _ => {
                let _: f64 = num(key, v)?;
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch < 2 {
            return Err(Error::Config("batch must be >= 2".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config("lr must be positive".into()));
        }
        if self.audit_size == 0 {
            return Err(Error::Config("audit_size must be >= 1".into()));
        }
        self.vae_config(usize::MAX).validate(self.batch)?;
        GroupifyConfig {
            n: self.n,
            gamma_i: self.gamma_i,
            pair_strategy: self.pair_strategy,
            terms: self.loss_terms,
        }
        .validate()
    }

    pub fn effective_gamma_i(&self) -> f64 {
        match self.mode {
            Mode::Original => 0.0,
            Mode::Groupified => self.gamma_i,
        }
    }

    pub fn decoder_input(&self) -> DecoderInput {
        match (self.mode, self.cyclic_decoder) {
            (Mode::Groupified, true) => DecoderInput::Cyclic { n: self.n },
            _ => DecoderInput::Original,
        }
    }

    pub fn architecture(&self, pixels: usize) -> Architecture {
        let mut arch = Architecture::standard(pixels, self.latent_dim, self.decoder_input());
        arch.activation = self.activation;
        arch
    }

    pub fn vae_config(&self, dataset_size: usize) -> VaeConfig {
        VaeConfig {
            objective: self.objective.clone(),
            latent_dim: self.latent_dim,
            dataset_size,
        }
    }

    /// `None` when the isomorphism loss is off.
    pub fn groupify_config(&self) -> Option<GroupifyConfig> {
        let gamma_i = self.effective_gamma_i();
        (gamma_i > 0.0).then_some(GroupifyConfig {
            n: self.n,
            gamma_i,
            pair_strategy: self.pair_strategy,
            terms: self.loss_terms,
        })
    }

    fn objective_entries(&self) -> Vec<(&'static str, String)> {
        match &self.objective {
            Objective::Beta { beta } => vec![("beta", beta.to_string())],
            Objective::Anneal { gamma, c_max, c_steps } => vec![
                ("anneal_gamma", gamma.to_string()),
                ("c_max", c_max.to_string()),
                ("c_steps", c_steps.to_string()),
            ],
            Objective::BetaTc { beta_tc } => vec![("beta_tc", beta_tc.to_string())],
        }
    }

    /// Every key that shapes the run, sorted; the output directory is left
    /// out so a run hashes the same wherever it is written.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let mut e = vec![
            ("activation", self.activation.as_str().to_string()),
            ("audit_size", self.audit_size.to_string()),
            ("batch", self.batch.to_string()),
            ("dataset", self.dataset.as_value()),
            ("decoder", if self.cyclic_decoder { "cyclic" } else { "original" }.to_string()),
            ("eval_every", self.eval_every.to_string()),
            ("exclude_holdout", self.exclude_holdout.to_string()),
            ("gamma_i", self.gamma_i.to_string()),
            ("latent_dim", self.latent_dim.to_string()),
            ("loss_terms", self.loss_terms_label().to_string()),
            ("lr", self.lr.to_string()),
            ("mode", self.mode.as_str().to_string()),
            ("n", self.n.to_string()),
            ("objective", self.objective.tag().to_string()),
            (
                "pairs",
                match self.pair_strategy {
                    PairStrategy::All => "all".to_string(),
                    PairStrategy::Sampled(k) => format!("sampled:{k}"),
                },
            ),
            ("seed", self.seed.to_string()),
            ("steps", self.steps.to_string()),
        ];
        e.extend(self.objective_entries());
        e.sort();
        e
    }

    pub fn canonical(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    pub fn hash(&self) -> u64 {
        let mut h = FnvHasher::default();
        h.write(self.canonical().as_bytes());
        h.finish()
    }

    pub fn hash_hex(&self) -> String {
        format!("{:016x}", self.hash())
    }

    pub fn loss_terms_label(&self) -> &'static str {
        match (self.loss_terms.abel, self.loss_terms.order) {
            (true, false) => "abel",
            (false, true) => "order",
            _ => "both",
        }
    }

    /// The objective's hyperparameters, e.g. `beta=4`.
    pub fn hyper_label(&self) -> String {
        self.objective_entries()
            .iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// The treatment arm: mode plus any groupified variation.
    pub fn arm(&self) -> String {
        match self.mode {
            Mode::Original => "original".into(),
            Mode::Groupified => {
                let mut s = String::from("groupified");
                if self.loss_terms_label() != "both" {
                    s.push('-');
                    s.push_str(self.loss_terms_label());
                }
                if self.n != 10 {
                    let _ = write!(s, "-n{}", self.n);
                }
                if !self.cyclic_decoder {
                    s.push_str("-rawdecoder");
                }
                if self.gamma_i != 1.0 {
                    let _ = write!(s, "-g{}", self.gamma_i);
                }
                s
            }
        }
    }
}

/// A grid of runs: `variant` lines list objective settings, `seeds` and
/// `modes` are comma lists, every other key is shared by all runs.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepConfig {
    pub base: BTreeMap<String, String>,
    pub variants: Vec<BTreeMap<String, String>>,
    pub seeds: Vec<u64>,
    pub arms: Vec<BTreeMap<String, String>>,
}

impl SweepConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut base = BTreeMap::new();
        let mut variants = Vec::new();
        let mut arms = Vec::new();
        let mut seeds = vec![0];
        for (k, v) in parse_pairs(text)? {
            match k.as_str() {
                "variant" => variants.push(parse_inline(&v)?),
                "arm" => arms.push(parse_inline(&v)?),
                "seeds" => seeds = parse_seeds(&v)?,
                "modes" => {
                    for m in v.split(',') {
                        let m = Mode::parse(m.trim())?;
                        arms.push(BTreeMap::from([("mode".to_string(), m.as_str().to_string())]));
                    }
                }
                _ => {
                    if base.insert(k.clone(), v).is_some() {
                        return Err(Error::Config(format!("duplicate key `{k}`")));
                    }
                }
            }
        }
        if variants.is_empty() {
            variants.push(BTreeMap::new());
        }
        if arms.is_empty() {
            arms.push(BTreeMap::new());
        }
        let sweep = Self {
            base,
            variants,
            seeds,
            arms,
        };
        sweep.expand()?;
        Ok(sweep)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// One config per (variant, seed, arm), variant-major.
    pub fn expand(&self) -> Result<Vec<RunConfig>> {
        let mut out = Vec::new();
        for variant in &self.variants {
            for &seed in &self.seeds {
                for arm in &self.arms {
                    let mut map = self.base.clone();
                    map.extend(variant.clone());
                    map.extend(arm.clone());
                    map.insert("seed".into(), seed.to_string());
                    out.push(RunConfig::from_map(&map)?);
                }
            }
        }
        Ok(out)
    }
}

/// `k1=v1 k2=v2` on one line.
fn parse_inline(v: &str) -> Result<BTreeMap<String, String>> {
    v.split_whitespace()
        .map(|kv| {
            kv.split_once('=')
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .ok_or_else(|| Error::Config(format!("expected key=value, got `{kv}`")))
        })
        .collect()
}

/// `0,1,2` or `0..5`.
fn parse_seeds(v: &str) -> Result<Vec<u64>> {
    if let Some((a, b)) = v.split_once("..") {
        let (a, b): (u64, u64) = (num("seeds", a.trim())?, num("seeds", b.trim())?);
        if a >= b {
            return Err(Error::Config("empty seed range".into()));
        }
        return Ok((a..b).collect());
    }
    v.split(',').map(|s| num("seeds", s.trim())).collect()
}
