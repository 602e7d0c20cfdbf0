//! Encoder/decoder plumbing and the three VAE objectives: β-VAE,
//! capacity-annealed VAE and β-TCVAE.

use std::fs;
use std::path::Path;

use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::{Tape, Var};
use crate::data::ByteReader;
use crate::error::{Error, Result};
use crate::groupify::{eta_on_tape, GroupModel};
use crate::nn::{init_mlp_into, mlp_on_tape, seeded_rng, Activation, BoundParams, ParamStore, Rng};
use crate::tensor::{Real, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"GVAE";
pub const CHECKPOINT_VERSION: u16 = 1;
pub const LOGVAR_CLAMP: f64 = 10.0;

/// What the decoder consumes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DecoderInput {
    /// The raw latent `z` (width `d`).
    Original,
    /// The cyclic code `η(z)` with period `n` (width `2d`).
    Cyclic { n: usize },
}

impl DecoderInput {
    pub fn width(self, latent_dim: usize) -> usize {
        match self {
            DecoderInput::Original => latent_dim,
            DecoderInput::Cyclic { .. } => 2 * latent_dim,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Architecture {
    pub pixels: usize,
    pub latent_dim: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub decoder: DecoderInput,
}

impl Architecture {
    /// `[H·W, 256, 256, 2d]` encoder and `[2d, 256, 256, H·W]` decoder.
    pub fn standard(pixels: usize, latent_dim: usize, decoder: DecoderInput) -> Self {
        Self {
            pixels,
            latent_dim,
            hidden: vec![256, 256],
            activation: Activation::Tanh,
            decoder,
        }
    }

    pub fn encoder_sizes(&self) -> Vec<usize> {
        let mut s = vec![self.pixels];
        s.extend(&self.hidden);
        s.push(2 * self.latent_dim);
        s
    }

    pub fn decoder_sizes(&self) -> Vec<usize> {
        let mut s = vec![self.decoder.width(self.latent_dim)];
        s.extend(self.hidden.iter().rev());
        s.push(self.pixels);
        s
    }
}

/// Posterior parameters for a batch, already on a tape.
#[derive(Clone, Copy, Debug)]
pub struct EncoderOut {
    pub mu: Var,
    /// Clamped to `[-10, 10]`.
    pub logvar: Var,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VaeModel<T: Real = f32> {
    pub arch: Architecture,
    pub params: ParamStore<T>,
}

impl<T: Real> VaeModel<T> {
    pub fn init(arch: Architecture, seed: u64) -> Result<Self> {
        if arch.latent_dim == 0 {
            return Err(Error::Config("latent dimension must be at least 1".into()));
        }
        if let DecoderInput::Cyclic { n } = arch.decoder {
            if n < 2 {
                return Err(Error::Config(format!("cyclic modulus must be >= 2, got {n}")));
            }
        }
        let mut rng = seeded_rng(seed);
        let mut params = ParamStore::new();
        init_mlp_into(&mut params, "enc.", &arch.encoder_sizes(), &mut rng)?;
        init_mlp_into(&mut params, "dec.", &arch.decoder_sizes(), &mut rng)?;
        Ok(Self { arch, params })
    }

    pub fn bind<'m>(&'m self, tape: &mut Tape<T>) -> BoundVae<'m> {
        let bound = self.params.bind(tape);
        self.with_bound(bound)
    }

    /// Wraps handles produced by `self.params.bind` (e.g. inside
    /// [`crate::nn::loss_and_grad`]).
    pub fn with_bound(&self, bound: BoundParams) -> BoundVae<'_> {
        BoundVae {
            arch: &self.arch,
            bound,
            enc_layers: self.arch.encoder_sizes().len() - 1,
            dec_layers: self.arch.decoder_sizes().len() - 1,
        }
    }

    /// Posterior means for a batch of images, without recording gradients.
    pub fn encode_mu_batch(&self, images: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let m = self.bind(&mut tape);
        let x = tape.leaf(images.clone());
        let out = m.encode(&mut tape, x)?;
        tape.check_finite()?;
        Ok(tape.value(out.mu).clone())
    }

    /// Decoded images (after the sigmoid) for latent codes `z`.
    pub fn decode_batch(&self, z: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let m = self.bind(&mut tape);
        let zv = tape.leaf(z.clone());
        let img = m.decode_image(&mut tape, zv)?;
        tape.check_finite()?;
        Ok(tape.value(img).clone())
    }

    pub fn cast<U: Real>(&self) -> VaeModel<U> {
        VaeModel {
            arch: self.arch.clone(),
            params: self.params.cast(),
        }
    }
}

impl VaeModel<f32> {
    /// Binary layout: magic, version, activation and decoder tags, the
    /// layer-size table of both networks, then every parameter tensor as
    /// little-endian f32 in declaration order.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.push(match self.arch.activation {
            Activation::Tanh => 0,
            Activation::Relu => 1,
        });
        let (tag, n) = match self.arch.decoder {
            DecoderInput::Original => (0u8, 0u32),
            DecoderInput::Cyclic { n } => (1u8, n as u32),
        };
        out.push(tag);
        out.extend_from_slice(&n.to_le_bytes());
        out.extend_from_slice(&(self.arch.latent_dim as u32).to_le_bytes());
        for sizes in [self.arch.encoder_sizes(), self.arch.decoder_sizes()] {
            out.extend_from_slice(&(sizes.len() as u32).to_le_bytes());
            for s in sizes {
                out.extend_from_slice(&(s as u32).to_le_bytes());
            }
        }
        for p in self.params.params() {
            for v in p.value.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader { bytes, pos: 0 };
        if r.take(4)? != CHECKPOINT_MAGIC {
            return Err(Error::Format("bad checkpoint magic".into()));
        }
        let version = r.u16()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let activation = match r.u8()? {
            0 => Activation::Tanh,
            1 => Activation::Relu,
            t => return Err(Error::Format(format!("unknown activation tag {t}"))),
        };
        let tag = r.u8()?;
        let n = r.u32()? as usize;
        let decoder = match tag {
            0 => DecoderInput::Original,
            1 => DecoderInput::Cyclic { n },
            t => return Err(Error::Format(format!("unknown decoder tag {t}"))),
        };
        let latent_dim = r.u32()? as usize;
        let mut tables = Vec::new();
        for _ in 0..2 {
            let len = r.u32()? as usize;
            if !(2..=64).contains(&len) {
                return Err(Error::Format(format!("implausible layer count {len}")));
            }
            tables.push((0..len).map(|_| r.u32().map(|v| v as usize)).collect::<Result<Vec<_>>>()?);
        }
        let (enc, dec) = (&tables[0], &tables[1]);
        let arch = Architecture {
            pixels: enc[0],
            latent_dim,
            hidden: enc[1..enc.len() - 1].to_vec(),
            activation,
            decoder,
        };
        if arch.encoder_sizes() != *enc || arch.decoder_sizes() != *dec {
            return Err(Error::Format("layer table is inconsistent".into()));
        }
        let mut model = Self::init(arch, 0).map_err(|e| Error::Format(e.to_string()))?;
        for p in model.params.params_mut() {
            for v in p.value.data_mut() {
                *v = r.f32()?;
            }
        }
        if !r.rest().is_empty() {
            return Err(Error::Format("trailing bytes after parameters".into()));
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

/// A model whose parameters live on a tape.
pub struct BoundVae<'m> {
    pub arch: &'m Architecture,
    pub bound: BoundParams,
    enc_layers: usize,
    dec_layers: usize,
}

impl BoundVae<'_> {
    pub fn encode<T: Real>(&self, tape: &mut Tape<T>, images: Var) -> Result<EncoderOut> {
        let d = self.arch.latent_dim;
        let h = mlp_on_tape(tape, &self.bound, "enc.", self.enc_layers, images, self.arch.activation)?;
        let mu = tape.slice_cols(h, 0, d)?;
        let raw = tape.slice_cols(h, d, d)?;
        let logvar = tape.clamp(raw, -LOGVAR_CLAMP, LOGVAR_CLAMP);
        Ok(EncoderOut { mu, logvar })
    }

    /// Decoder logits; the cyclic convention feeds `η(z)`.
    pub fn decode_logits<T: Real>(&self, tape: &mut Tape<T>, z: Var) -> Result<Var> {
        let input = match self.arch.decoder {
            DecoderInput::Original => z,
            DecoderInput::Cyclic { n } => eta_on_tape(tape, z, n)?,
        };
        mlp_on_tape(tape, &self.bound, "dec.", self.dec_layers, input, self.arch.activation)
    }
}

impl<T: Real> GroupModel<T> for BoundVae<'_> {
    fn latent_dim(&self) -> usize {
        self.arch.latent_dim
    }

    fn encode_mu(&self, tape: &mut Tape<T>, images: Var) -> Result<Var> {
        Ok(self.encode(tape, images)?.mu)
    }

    fn decode_image(&self, tape: &mut Tape<T>, z: Var) -> Result<Var> {
        let logits = self.decode_logits(tape, z)?;
        Ok(tape.sigmoid(logits))
    }
}

/// Binds the parameters afresh on every call; convenient for evaluation,
/// where no gradients are taken.
impl<T: Real> GroupModel<T> for VaeModel<T> {
    fn latent_dim(&self) -> usize {
        self.arch.latent_dim
    }

    fn encode_mu(&self, tape: &mut Tape<T>, images: Var) -> Result<Var> {
        self.bind(tape).encode_mu(tape, images)
    }

    fn decode_image(&self, tape: &mut Tape<T>, z: Var) -> Result<Var> {
        self.bind(tape).decode_image(tape, z)
    }
}

/// `z = mu + exp(logvar / 2) ⊙ ε` with `ε ~ N(0, I)` drawn from `rng`.
pub fn reparameterize<T: Real>(tape: &mut Tape<T>, out: EncoderOut, rng: &mut Rng) -> Var {
    let shape = tape.value(out.mu).shape().to_vec();
    let len = shape.iter().product();
    let eps: Vec<T> = (0..len)
        .map(|_| {
            let e: f64 = StandardNormal.sample(rng);
            T::from_f64c(e)
        })
        .collect();
    let eps = tape.leaf(Tensor::new(shape, eps).expect("noise shape"));
    let half = tape.scale(out.logvar, 0.5);
    let std = tape.exp(half);
    let noise = tape.mul(std, eps);
    tape.add(out.mu, noise)
}

/// Bernoulli cross-entropy between targets in `[0,1]` and decoder logits.
pub fn recon_loss<T: Real>(tape: &mut Tape<T>, targets: Var, logits: Var) -> Var {
    tape.bce_with_logits(logits, targets)
}

/// `0.5·Σ(μ² + σ² − 1 − log σ²)`, averaged over the batch.
pub fn kl_gaussian<T: Real>(tape: &mut Tape<T>, out: EncoderOut) -> Var {
    let rows = tape.value(out.mu).rows() as f64;
    let mu2 = tape.square(out.mu);
    let var = tape.exp(out.logvar);
    let a = tape.add(mu2, var);
    let b = tape.sub(a, out.logvar);
    let c = tape.add_scalar(b, -1.0);
    let s = tape.sum(c);
    tape.scale(s, 0.5 / rows)
}

pub fn beta_vae_loss<T: Real>(tape: &mut Tape<T>, recon: Var, kl: Var, beta: f64) -> Var {
    let w = tape.scale(kl, beta);
    tape.add(recon, w)
}

/// Capacity target: linear from 0 to `c_max` over `c_steps`, then constant.
pub fn anneal_capacity(step: i64, c_max: f64, c_steps: u64) -> Result<f64> {
    if step < 0 {
        return Err(Error::Contract(format!("negative global step {step}")));
    }
    if c_steps == 0 || step as u64 >= c_steps {
        return Ok(c_max);
    }
    Ok(c_max * step as f64 / c_steps as f64)
}

/// `recon + gamma·|kl − C|`.
pub fn anneal_vae_loss<T: Real>(tape: &mut Tape<T>, recon: Var, kl: Var, gamma: f64, capacity: f64) -> Var {
    let gap = tape.add_scalar(kl, -capacity);
    let abs = tape.abs(gap);
    let w = tape.scale(abs, gamma);
    tape.add(recon, w)
}

/// The three batch-averaged terms of the decomposed KL.
#[derive(Clone, Copy, Debug)]
pub struct TcTerms {
    pub mutual_info: Var,
    pub total_correlation: Var,
    pub dim_kl: Var,
}

/// Minibatch-weighted-sampling decomposition of the KL term into index-code
/// mutual information, total correlation and dimension-wise KL.
pub fn betatc_terms<T: Real>(
    tape: &mut Tape<T>,
    z: Var,
    out: EncoderOut,
    dataset_size: usize,
) -> Result<TcTerms> {
    let b = tape.value(z).rows();
    if b < 2 {
        return Err(Error::Contract(
            "total-correlation estimator needs a batch of at least 2".into(),
        ));
    }
    let d = tape.value(z).cols();
    let log_qzx = {
        let dens = tape.gaussian_log_density(z, out.mu, out.logvar);
        tape.row_sum(dens)
    };
    let log_pz = {
        let zeros = tape.leaf(Tensor::zeros(&[b, d]));
        let dens = tape.gaussian_log_density(z, zeros, zeros);
        tape.row_sum(dens)
    };
    let q = tape.mws_log_q(z, out.mu, out.logvar, dataset_size);
    let log_qz = tape.slice_cols(q, 0, 1)?;
    let marginals = tape.slice_cols(q, 1, d)?;
    let log_prod = tape.row_sum(marginals);

    let mi = tape.sub(log_qzx, log_qz);
    let tc = tape.sub(log_qz, log_prod);
    let dk = tape.sub(log_prod, log_pz);
    Ok(TcTerms {
        mutual_info: tape.mean(mi),
        total_correlation: tape.mean(tc),
        dim_kl: tape.mean(dk),
    })
}

/// `recon + MI + beta_tc·TC + dimKL`.
pub fn betatc_loss<T: Real>(
    tape: &mut Tape<T>,
    z: Var,
    out: EncoderOut,
    recon: Var,
    beta_tc: f64,
    dataset_size: usize,
) -> Result<Var> {
    let t = betatc_terms(tape, z, out, dataset_size)?;
    let tc = tape.scale(t.total_correlation, beta_tc);
    let a = tape.add(recon, t.mutual_info);
    let b = tape.add(a, tc);
    Ok(tape.add(b, t.dim_kl))
}

#[derive(Clone, Debug, PartialEq)]
pub enum Objective {
    Beta { beta: f64 },
    Anneal { gamma: f64, c_max: f64, c_steps: u64 },
    BetaTc { beta_tc: f64 },
}

impl Objective {
    pub fn tag(&self) -> &'static str {
        match self {
            Objective::Beta { .. } => "beta",
            Objective::Anneal { .. } => "anneal",
            Objective::BetaTc { .. } => "betatc",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VaeConfig {
    pub objective: Objective,
    pub latent_dim: usize,
    pub dataset_size: usize,
}

impl VaeConfig {
    pub fn validate(&self, batch: usize) -> Result<()> {
        if self.latent_dim == 0 {
            return Err(Error::Config("latent_dim must be >= 1".into()));
        }
        if self.dataset_size < batch {
            return Err(Error::Config(format!(
                "dataset_size {} is smaller than the batch {batch}",
                self.dataset_size
            )));
        }
        let ok = match self.objective {
            Objective::Beta { beta } => beta >= 0.0,
            Objective::Anneal { gamma, c_max, .. } => gamma >= 0.0 && c_max >= 0.0,
            Objective::BetaTc { beta_tc } => beta_tc >= 0.0,
        };
        if !ok {
            return Err(Error::Config("objective weights must be non-negative".into()));
        }
        Ok(())
    }
}

/// Nodes of one evaluation of `L_VAE`.
#[derive(Clone, Copy, Debug)]
pub struct VaeTerms {
    pub loss: Var,
    pub recon: Var,
    pub kl: Var,
    pub posterior: EncoderOut,
}

/// Encodes `images`, samples `z`, decodes, and applies the configured
/// objective at global step `step`.
pub fn vae_loss<T: Real>(
    tape: &mut Tape<T>,
    model: &BoundVae<'_>,
    images: Var,
    cfg: &VaeConfig,
    rng: &mut Rng,
    step: i64,
) -> Result<VaeTerms> {
    let posterior = model.encode(tape, images)?;
    let z = reparameterize(tape, posterior, rng);
    let logits = model.decode_logits(tape, z)?;
    let recon = recon_loss(tape, images, logits);
    let kl = kl_gaussian(tape, posterior);
    let loss = match cfg.objective {
        Objective::Beta { beta } => beta_vae_loss(tape, recon, kl, beta),
        Objective::Anneal {
            gamma,
            c_max,
            c_steps,
        } => {
            let cap = anneal_capacity(step, c_max, c_steps)?;
            anneal_vae_loss(tape, recon, kl, gamma, cap)
        }
        Objective::BetaTc { beta_tc } => {
            betatc_loss(tape, z, posterior, recon, beta_tc, cfg.dataset_size)?
        }
    };
    Ok(VaeTerms {
        loss,
        recon,
        kl,
        posterior,
    })
}

/// Deterministic reconstruction MSE per pixel, `decode(μ)` against the input.
pub fn reconstruction_mse(model: &VaeModel<f32>, images: &Tensor<f32>) -> Result<f64> {
    let mu = model.encode_mu_batch(images)?;
    let recon = model.decode_batch(&mu)?;
    let se: f64 = recon
        .data()
        .iter()
        .zip(images.data())
        .map(|(&a, &b)| ((a - b) as f64).powi(2))
        .sum();
    Ok(se / images.len() as f64)
}
