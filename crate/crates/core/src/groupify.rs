//! Cyclic latent structure and the isomorphism losses.
//!
//! A latent vector is embedded on the unit circle with period `n` via
//! `η(z) = (sin 2πz/n, cos 2πz/n)`. The generator `φ_i` acting on an image
//! encodes it, adds 1 to latent coordinate `i`, and decodes `η` of the
//! result. The Abel loss penalizes non-commuting generator pairs; the Order
//! loss penalizes `φ_i^n ≠ e`, using `φ_i^{n-1}` as a single shift by
//! `n − 1` so every term chains exactly two encode/decode passes.

use std::collections::HashMap;
use std::f64::consts::PI;

use rand::seq::SliceRandom;

use crate::autodiff::{Tape, Var};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::Rng;
use crate::tensor::{Real, Tensor};
use crate::vae::{vae_loss, BoundVae, VaeConfig, VaeTerms};

/// Anything that maps images to latent means and latent codes back to
/// images in `[0, 1]`, recorded on a tape.
pub trait GroupModel<T: Real> {
    fn latent_dim(&self) -> usize;
    fn encode_mu(&self, tape: &mut Tape<T>, images: Var) -> Result<Var>;
    fn decode_image(&self, tape: &mut Tape<T>, z: Var) -> Result<Var>;

    /// Latent dims the group acts on; every dim unless a model says otherwise.
    fn acted_dims(&self) -> Vec<usize> {
        (0..self.latent_dim()).collect()
    }
}

/// An element of `(ℤ/nℤ)^m`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct GroupElement {
    pub values: Vec<usize>,
    pub n: usize,
}

impl GroupElement {
    pub fn new(values: Vec<usize>, n: usize) -> Result<Self> {
        if n < 2 || values.is_empty() {
            return Err(Error::Contract(format!(
                "need n >= 2 and m >= 1, got n = {n}, m = {}",
                values.len()
            )));
        }
        Ok(Self {
            values: values.into_iter().map(|v| v % n).collect(),
            n,
        })
    }

    pub fn identity(m: usize, n: usize) -> Result<Self> {
        Self::new(vec![0; m], n)
    }

    /// `k·g_i`: `k` in coordinate `i`, zero elsewhere.
    pub fn generator(m: usize, n: usize, i: usize, k: usize) -> Result<Self> {
        if i >= m {
            return Err(Error::Contract(format!("generator {i} out of range for m = {m}")));
        }
        let mut values = vec![0; m];
        values[i] = k;
        Self::new(values, n)
    }
}

/// Unit-circle embedding of a latent vector.
#[derive(Clone, Debug, PartialEq)]
pub struct CyclicCode {
    pub sin_part: Vec<f64>,
    pub cos_part: Vec<f64>,
}

pub fn eta(z: &[f64], n: usize) -> CyclicCode {
    let w = 2.0 * PI / n as f64;
    CyclicCode {
        sin_part: z.iter().map(|&v| (w * v).sin()).collect(),
        cos_part: z.iter().map(|&v| (w * v).cos()).collect(),
    }
}

/// `[B×d] → [B×2d]`: sin block followed by cos block.
pub fn eta_on_tape<T: Real>(tape: &mut Tape<T>, z: Var, n: usize) -> Result<Var> {
    let angle = tape.scale(z, 2.0 * PI / n as f64);
    let s = tape.sin(angle);
    let c = tape.cos(angle);
    tape.concat_cols(s, c)
}

/// `g·z`: adds `g` to the first `m` coordinates and reduces them mod `n`.
pub fn act(g: &GroupElement, z: &[f64]) -> Result<Vec<f64>> {
    if g.values.len() > z.len() {
        return Err(Error::Contract(format!(
            "group element of arity {} cannot act on a {}-dim latent",
            g.values.len(),
            z.len()
        )));
    }
    let n = g.n as f64;
    Ok(z.iter()
        .enumerate()
        .map(|(k, &v)| match g.values.get(k) {
            Some(&gk) => (v + gk as f64).rem_euclid(n),
            None => v,
        })
        .collect())
}

/// Tape version of [`act`] on a batch: adds `k` to column `dim` and wraps
/// that column into `[0, n)`. Other columns pass through untouched.
pub fn shift_on_tape<T: Real>(tape: &mut Tape<T>, z: Var, dim: usize, k: usize, n: usize) -> Result<Var> {
    let (rows, cols) = (tape.value(z).rows(), tape.value(z).cols());
    if dim >= cols {
        return Err(Error::Contract(format!("dimension {dim} out of range for d = {cols}")));
    }
    let before = tape.slice_cols(z, 0, dim)?;
    let col = tape.slice_cols(z, dim, 1)?;
    let after = tape.slice_cols(z, dim + 1, cols - dim - 1)?;
    let offset = tape.leaf(Tensor::full(&[rows, 1], T::from_f64c(k as f64)));
    let moved = tape.add(col, offset);
    let wrapped = tape.wrap_mod(moved, n as f64);
    let left = if dim > 0 { tape.concat_cols(before, wrapped)? } else { wrapped };
    if dim + 1 < cols {
        tape.concat_cols(left, after)
    } else {
        Ok(left)
    }
}

/// `φ_i^k · o = decode(η(encode_μ(o) + k·e_i))`.
pub fn generator_apply<T: Real, M: GroupModel<T>>(
    model: &M,
    tape: &mut Tape<T>,
    images: Var,
    dim: usize,
    k: usize,
    n: usize,
) -> Result<Var> {
    if dim >= model.latent_dim() {
        return Err(Error::Contract(format!(
            "generator dimension {dim} out of range for d = {}",
            model.latent_dim()
        )));
    }
    let mu = model.encode_mu(tape, images)?;
    apply_from_mu(model, tape, mu, dim, k, n)
}

fn apply_from_mu<T: Real, M: GroupModel<T>>(
    model: &M,
    tape: &mut Tape<T>,
    mu: Var,
    dim: usize,
    k: usize,
    n: usize,
) -> Result<Var> {
    let shifted = shift_on_tape(tape, mu, dim, k, n)?;
    model.decode_image(tape, shifted)
}

/// Per-pixel mean squared difference over the whole batch.
pub fn mse<T: Real>(tape: &mut Tape<T>, a: Var, b: Var) -> Var {
    let d = tape.sub(a, b);
    let sq = tape.square(d);
    tape.mean(sq)
}

/// The Abel and Order terms of one batch (`None` when switched off).
#[derive(Clone, Copy, Debug)]
pub struct IsoTerms {
    pub abel: Option<Var>,
    pub order: Option<Var>,
}

fn position(list: &mut Vec<(usize, usize)>, key: (usize, usize)) -> usize {
    match list.iter().position(|&k| k == key) {
        Some(p) => p,
        None => {
            list.push(key);
            list.len() - 1
        }
    }
}

/// Builds the Abel loss `Σ_{(i,j)} ‖φ_i φ_j o − φ_j φ_i o‖` and the Order
/// loss `Σ_i ‖φ_i φ_i^{n−1} o − o‖ + ‖φ_i^{n−1} φ_i o − o‖` (per-pixel MSE).
///
/// All first-level generator outputs are decoded as one stacked batch,
/// re-encoded as one batch, and all second-level compositions decoded as
/// one batch. Rows never interact, so this is the same graph as chaining
/// `generator_apply` term by term. `mu` may carry an encoding of `images`
/// that already exists on the tape.
#[allow(clippy::too_many_arguments)]
pub fn isomorphism_terms<T: Real, M: GroupModel<T>>(
    model: &M,
    tape: &mut Tape<T>,
    images: Var,
    mu: Option<Var>,
    n: usize,
    pairs: &[(usize, usize)],
    dims: &[usize],
    terms: LossTerms,
) -> Result<IsoTerms> {
    let d = model.latent_dim();
    if terms.abel {
        if pairs.is_empty() {
            return Err(Error::Contract("abel loss needs at least one pair".into()));
        }
        if let Some(&(i, j)) = pairs.iter().find(|&&(i, j)| i == j || i >= d || j >= d) {
            return Err(Error::Contract(format!("invalid abel pair ({i}, {j}) for d = {d}")));
        }
    }
    if terms.order {
        if dims.is_empty() {
            return Err(Error::Contract("order loss needs at least one dimension".into()));
        }
        if let Some(&i) = dims.iter().find(|&&i| i >= d) {
            return Err(Error::Contract(format!("dimension {i} out of range for d = {d}")));
        }
    }
    if !terms.abel && !terms.order {
        return Ok(IsoTerms {
            abel: None,
            order: None,
        });
    }
    let batch = tape.value(images).rows();
    let mu = match mu {
        Some(m) => m,
        None => model.encode_mu(tape, images)?,
    };

    // (outer, inner) generator powers for every second-level image needed.
    let mut second: Vec<((usize, usize), (usize, usize))> = Vec::new();
    if terms.abel {
        for &(i, j) in pairs {
            second.push(((i, 1), (j, 1)));
            second.push(((j, 1), (i, 1)));
        }
    }
    if terms.order {
        for &i in dims {
            second.push(((i, 1), (i, n - 1)));
            second.push(((i, n - 1), (i, 1)));
        }
    }
    let mut first: Vec<(usize, usize)> = Vec::new();
    let inner_pos: Vec<usize> = second
        .iter()
        .map(|&(_, inner)| position(&mut first, inner))
        .collect();

    let shifted = first
        .iter()
        .map(|&(dim, k)| shift_on_tape(tape, mu, dim, k, n))
        .collect::<Result<Vec<_>>>()?;
    let stacked = tape.concat_rows(&shifted)?;
    let level1 = model.decode_image(tape, stacked)?;
    let mu1 = model.encode_mu(tape, level1)?;

    let mut outer_in = Vec::with_capacity(second.len());
    for (&((dim, k), _), &p) in second.iter().zip(&inner_pos) {
        let block = tape.slice_rows(mu1, p * batch, batch)?;
        outer_in.push(shift_on_tape(tape, block, dim, k, n)?);
    }
    let stacked2 = tape.concat_rows(&outer_in)?;
    let level2 = model.decode_image(tape, stacked2)?;
    let out_block = |tape: &mut Tape<T>, q: usize| tape.slice_rows(level2, q * batch, batch);

    let mut q = 0;
    let mut abel = None;
    if terms.abel {
        let mut total: Option<Var> = None;
        for _ in pairs {
            let ij = out_block(tape, q)?;
            let ji = out_block(tape, q + 1)?;
            q += 2;
            let term = mse(tape, ij, ji);
            total = Some(match total {
                Some(t) => tape.add(t, term),
                None => term,
            });
        }
        abel = total;
    }
    let mut order = None;
    if terms.order {
        let mut total: Option<Var> = None;
        for _ in dims {
            let a = out_block(tape, q)?;
            let b = out_block(tape, q + 1)?;
            q += 2;
            let ta = mse(tape, a, images);
            let tb = mse(tape, b, images);
            let term = tape.add(ta, tb);
            total = Some(match total {
                Some(t) => tape.add(t, term),
                None => term,
            });
        }
        order = total;
    }
    Ok(IsoTerms { abel, order })
}

pub fn abel_loss<T: Real, M: GroupModel<T>>(
    model: &M,
    tape: &mut Tape<T>,
    images: Var,
    pairs: &[(usize, usize)],
    n: usize,
) -> Result<Var> {
    let terms = LossTerms {
        abel: true,
        order: false,
    };
    let t = isomorphism_terms(model, tape, images, None, n, pairs, &[], terms)?;
    Ok(t.abel.expect("abel enabled"))
}

pub fn order_loss<T: Real, M: GroupModel<T>>(
    model: &M,
    tape: &mut Tape<T>,
    images: Var,
    dims: &[usize],
    n: usize,
) -> Result<Var> {
    let terms = LossTerms {
        abel: false,
        order: true,
    };
    let t = isomorphism_terms(model, tape, images, None, n, &[], dims, terms)?;
    Ok(t.order.expect("order enabled"))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PairStrategy {
    All,
    Sampled(usize),
}

impl PairStrategy {
    /// All pairs up to `d = 8`, otherwise 8 sampled pairs per batch.
    pub fn default_for(latent_dim: usize) -> Self {
        if latent_dim <= 8 {
            PairStrategy::All
        } else {
            PairStrategy::Sampled(8)
        }
    }
}

/// Which isomorphism terms are active (the ablation switch).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LossTerms {
    pub abel: bool,
    pub order: bool,
}

impl Default for LossTerms {
    fn default() -> Self {
        Self {
            abel: true,
            order: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroupifyConfig {
    pub n: usize,
    pub gamma_i: f64,
    pub pair_strategy: PairStrategy,
    pub terms: LossTerms,
}

impl GroupifyConfig {
    pub fn new(n: usize, gamma_i: f64, latent_dim: usize) -> Result<Self> {
        let cfg = Self {
            n,
            gamma_i,
            pair_strategy: PairStrategy::default_for(latent_dim),
            terms: LossTerms::default(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::Config(format!("n must be >= 2, got {}", self.n)));
        }
        if self.gamma_i.is_nan() || self.gamma_i < 0.0 {
            return Err(Error::Config("gamma_I must be non-negative".into()));
        }
        Ok(())
    }
}

pub fn all_pairs(d: usize) -> Vec<(usize, usize)> {
    (0..d)
        .flat_map(|i| (i + 1..d).map(move |j| (i, j)))
        .collect()
}

pub fn select_pairs(d: usize, strategy: PairStrategy, rng: &mut Rng) -> Vec<(usize, usize)> {
    let mut pairs = all_pairs(d);
    if let PairStrategy::Sampled(k) = strategy {
        if k < pairs.len() {
            pairs.shuffle(rng);
            pairs.truncate(k);
            pairs.sort_unstable();
        }
    }
    pairs
}

fn combine<T: Real>(tape: &mut Tape<T>, t: IsoTerms) -> Var {
    match (t.abel, t.order) {
        (Some(a), Some(o)) => tape.add(a, o),
        (Some(a), None) => a,
        (None, Some(o)) => o,
        (None, None) => tape.constant(T::zero()),
    }
}

/// `L_I = L_a + L_o` over all `d` latent dimensions (either term may be
/// switched off for ablations).
pub fn iso_loss<T: Real, M: GroupModel<T>>(
    model: &M,
    tape: &mut Tape<T>,
    images: Var,
    cfg: &GroupifyConfig,
    rng: &mut Rng,
) -> Result<Var> {
    let d = model.latent_dim();
    let pairs = select_pairs(d, cfg.pair_strategy, rng);
    let dims: Vec<usize> = (0..d).collect();
    let mut terms = cfg.terms;
    terms.abel &= !pairs.is_empty();
    let t = isomorphism_terms(model, tape, images, None, cfg.n, &pairs, &dims, terms)?;
    Ok(combine(tape, t))
}

/// Nodes of one evaluation of the total objective.
#[derive(Clone, Copy, Debug)]
pub struct TotalTerms {
    pub loss: Var,
    pub vae: VaeTerms,
    pub iso: Option<Var>,
}

/// `L = L_VAE + γ_I·L_I`. With `γ_I = 0` the isomorphism graph is not built
/// at all and no extra randomness is consumed.
pub fn total_loss<T: Real>(
    tape: &mut Tape<T>,
    model: &BoundVae<'_>,
    images: Var,
    vae_cfg: &VaeConfig,
    group_cfg: Option<&GroupifyConfig>,
    rng: &mut Rng,
    step: i64,
) -> Result<TotalTerms> {
    let vae = vae_loss(tape, model, images, vae_cfg, rng, step)?;
    let Some(g) = group_cfg.filter(|g| g.gamma_i > 0.0) else {
        return Ok(TotalTerms {
            loss: vae.loss,
            vae,
            iso: None,
        });
    };
    let d = model.arch.latent_dim;
    let pairs = select_pairs(d, g.pair_strategy, rng);
    let dims: Vec<usize> = (0..d).collect();
    let mut terms = g.terms;
    terms.abel &= !pairs.is_empty();
    let t = isomorphism_terms(model, tape, images, Some(vae.posterior.mu), g.n, &pairs, &dims, terms)?;
    let iso = combine(tape, t);
    let weighted = tape.scale(iso, g.gamma_i);
    let loss = tape.add(vae.loss, weighted);
    Ok(TotalTerms {
        loss,
        vae,
        iso: Some(iso),
    })
}

/// Closed-form model over the synthetic grid whose latent coordinates are
/// the factor values themselves. Encoding looks the image up in the grid;
/// decoding reads each coordinate's angle off `η(z)`, rounds it back to an
/// integer mod `n` and renders that grid image. Its generators on the two
/// translation coordinates are exact cyclic shifts, so every isomorphism
/// residual vanishes.
pub struct OracleModel<'d> {
    dataset: &'d Dataset,
    n: usize,
    lookup: HashMap<Vec<u8>, usize>,
}

impl<'d> OracleModel<'d> {
    /// Both translation factors must have cardinality `n`.
    pub fn new(dataset: &'d Dataset, n: usize) -> Result<Self> {
        let card = dataset.spec().cardinalities();
        if card[2] != n || card[3] != n {
            return Err(Error::Contract(format!(
                "oracle needs pos_x and pos_y cardinality {n}, got {card:?}"
            )));
        }
        if card.iter().any(|&c| c > n) {
            return Err(Error::Contract("every factor cardinality must be <= n".into()));
        }
        let lookup = (0..dataset.len())
            .map(|i| (dataset.image_u8(i).to_vec(), i))
            .collect();
        Ok(Self { dataset, n, lookup })
    }

    pub fn modulus(&self) -> usize {
        self.n
    }

    /// Latent dims acted on by the translation generators.
    pub fn translation_dims() -> [usize; 2] {
        [2, 3]
    }

    fn flat_of(&self, pixels: &[u8]) -> Result<usize> {
        self.lookup
            .get(pixels)
            .copied()
            .ok_or_else(|| Error::Contract("image is not on the dataset grid".into()))
    }
}

impl<T: Real> GroupModel<T> for OracleModel<'_> {
    fn latent_dim(&self) -> usize {
        self.dataset.spec().num_factors()
    }

    fn acted_dims(&self) -> Vec<usize> {
        Self::translation_dims().to_vec()
    }

    fn encode_mu(&self, tape: &mut Tape<T>, images: Var) -> Result<Var> {
        let v = tape.value(images);
        let d = GroupModel::<T>::latent_dim(self);
        let mut out = Vec::with_capacity(v.rows() * d);
        for r in 0..v.rows() {
            let bytes: Vec<u8> = v
                .row(r)
                .iter()
                .map(|p| (p.to_f64c().clamp(0.0, 1.0) * 255.0).round() as u8)
                .collect();
            let flat = self.flat_of(&bytes)?;
            out.extend(
                self.dataset
                    .labels(flat)
                    .values
                    .iter()
                    .map(|&x| T::from_f64c(x as f64)),
            );
        }
        let t = Tensor::new(vec![v.rows(), d], out)?;
        Ok(tape.leaf(t))
    }

    fn decode_image(&self, tape: &mut Tape<T>, z: Var) -> Result<Var> {
        let code = eta_on_tape(tape, z, self.n)?;
        let cv = tape.value(code).clone();
        let d = cv.cols() / 2;
        let spec = self.dataset.spec();
        let card = spec.cardinalities();
        let n = self.n as f64;
        let mut flats = Vec::with_capacity(cv.rows());
        for r in 0..cv.rows() {
            let row = cv.row(r);
            let mut values = Vec::with_capacity(d);
            for k in 0..d {
                let angle = row[k].to_f64c().atan2(row[d + k].to_f64c());
                let v = ((angle * n / (2.0 * PI)).round() as i64).rem_euclid(self.n as i64) as usize;
                if v >= card[k] {
                    return Err(Error::Contract(format!(
                        "coordinate {k} decodes to {v}, outside cardinality {}",
                        card[k]
                    )));
                }
                values.push(v);
            }
            flats.push(spec.flat_index(&crate::data::FactorIndex::new(values)));
        }
        let imgs = self.dataset.batch_tensor(&flats).cast::<T>();
        Ok(tape.leaf(imgs))
    }
}
