//! Independent oracles shared by the integration and acceptance tests.
#![allow(dead_code, clippy::needless_range_loop)]

use gvae_core::autodiff::{Tape, Var};
use gvae_core::nn::{seeded_rng, Activation, BoundParams, ParamStore};
use gvae_core::vae::{Architecture, BoundVae, DecoderInput, VaeModel};
use gvae_core::{Result, Tensor};
use rand::Rng as _;

/// A VAE with at most 200 parameters: 6 pixels, d = 2, one hidden layer of 4.
pub fn tiny_arch(decoder: DecoderInput) -> Architecture {
    Architecture {
        pixels: 6,
        latent_dim: 2,
        hidden: vec![4],
        activation: Activation::Tanh,
        decoder,
    }
}

pub fn tiny_model(decoder: DecoderInput, seed: u64) -> VaeModel<f64> {
    let mut model = VaeModel::<f64>::init(tiny_arch(decoder), seed).unwrap();
    // Random biases too, so no gradient is structurally zero.
    let mut rng = seeded_rng(seed ^ 0xb1a5);
    for p in model.params.params_mut() {
        if p.name.ends_with("bias") {
            for v in p.value.data_mut() {
                *v = rng.gen_range(-0.5..0.5);
            }
        }
    }
    model
}

pub fn random_images(rows: usize, cols: usize, seed: u64) -> Tensor<f64> {
    let mut rng = seeded_rng(seed);
    Tensor::new(vec![rows, cols], (0..rows * cols).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap()
}

pub type LossGraph<'a> = dyn Fn(&mut Tape<f64>, &BoundVae<'_>) -> Result<Var> + 'a;

fn eval_with(model: &VaeModel<f64>, graph: &LossGraph<'_>) -> f64 {
    let mut tape = Tape::new();
    let bound = model.params.bind(&mut tape);
    let bm = model.with_bound(bound);
    let loss = graph(&mut tape, &bm).unwrap();
    tape.scalar(loss)
}

fn analytic(model: &VaeModel<f64>, graph: &LossGraph<'_>) -> Vec<f64> {
    let mut tape = Tape::new();
    let bound: BoundParams = model.params.bind(&mut tape);
    let bm = model.with_bound(bound.clone());
    let loss = graph(&mut tape, &bm).unwrap();
    let slots = tape.backward(loss).unwrap();
    let mut out = Vec::new();
    for ((_, var), p) in bound.iter().zip(model.params.params()) {
        match &slots[var.index()] {
            Some(g) => out.extend_from_slice(g.data()),
            None => out.extend(std::iter::repeat_n(0.0, p.value.len())),
        }
    }
    out
}

/// Central differences over every parameter scalar.
pub fn finite_difference(model: &VaeModel<f64>, graph: &LossGraph<'_>, h: f64) -> Vec<f64> {
    let mut work = model.clone();
    let mut out = Vec::with_capacity(model.params.num_scalars());
    for pi in 0..model.params.len() {
        for k in 0..model.params.params()[pi].value.len() {
            let orig = work.params.params()[pi].value.data()[k];
            work.params.params_mut()[pi].value.data_mut()[k] = orig + h;
            let up = eval_with(&work, graph);
            work.params.params_mut()[pi].value.data_mut()[k] = orig - h;
            let down = eval_with(&work, graph);
            work.params.params_mut()[pi].value.data_mut()[k] = orig;
            out.push((up - down) / (2.0 * h));
        }
    }
    out
}

/// `‖g_ad − g_fd‖ / max(‖g_ad‖, ‖g_fd‖)` for one model and loss.
pub fn gradient_relative_error(model: &VaeModel<f64>, graph: &LossGraph<'_>) -> f64 {
    let a = analytic(model, graph);
    let f = finite_difference(model, graph, 1e-3);
    assert_eq!(a.len(), f.len());
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(&f).map(|(x, y)| x - y).collect();
    let scale = norm(&a).max(norm(&f));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

pub fn num_params(model: &VaeModel<f64>) -> usize {
    model.params.num_scalars()
}

/// Straight-line MLP evaluation with plain loops: `tanh` hidden layers,
/// linear output, weights `[in, out]`.
pub fn naive_mlp(params: &ParamStore<f64>, prefix: &str, x: &[f64], act: Activation) -> Vec<f64> {
    let layers = params.layer_count(prefix);
    let mut h = x.to_vec();
    for l in 0..layers {
        let w = params.get(&format!("{prefix}{l}.weight")).unwrap();
        let b = params.get(&format!("{prefix}{l}.bias")).unwrap();
        let (inp, out) = (w.shape()[0], w.shape()[1]);
        let mut next = vec![0.0; out];
        for j in 0..out {
            let mut s = b.data()[j];
            for i in 0..inp {
                s += h[i] * w.data()[i * out + j];
            }
            next[j] = if l + 1 < layers {
                match act {
                    Activation::Tanh => s.tanh(),
                    Activation::Relu => s.max(0.0),
                }
            } else {
                s
            };
        }
        h = next;
    }
    h
}

/// `log N(z; mu, exp(logvar))` in f64.
pub fn log_normal(z: f64, mu: f64, logvar: f64) -> f64 {
    -0.5 * ((2.0 * std::f64::consts::PI).ln() + logvar + (z - mu).powi(2) * (-logvar).exp())
}

/// Binomial standard deviation of an accuracy estimated from `n` trials.
pub fn binomial_sigma(p: f64, n: usize) -> f64 {
    (p * (1.0 - p) / n as f64).sqrt()
}

/// Mutual information of two discrete sequences by direct enumeration of
/// their joint distribution (nats).
pub fn brute_force_mi(a: &[usize], b: &[usize]) -> f64 {
    use std::collections::HashMap;
    let n = a.len() as f64;
    let mut joint: HashMap<(usize, usize), f64> = HashMap::new();
    let mut pa: HashMap<usize, f64> = HashMap::new();
    let mut pb: HashMap<usize, f64> = HashMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *joint.entry((x, y)).or_default() += 1.0 / n;
        *pa.entry(x).or_default() += 1.0 / n;
        *pb.entry(y).or_default() += 1.0 / n;
    }
    joint.iter().map(|(&(x, y), &p)| p * (p / (pa[&x] * pb[&y])).ln()).sum()
}

pub fn brute_force_entropy(a: &[usize]) -> f64 {
    brute_force_mi(a, a)
}

pub const GRAD_LOSSES: [&str; 6] = ["recon", "kl", "betatc", "abel", "order", "total"];

/// Builds loss `name` on a fresh batch; the reparameterization noise is
/// reseeded on every evaluation so the loss is a deterministic function of
/// the parameters.
pub fn grad_graph<'a>(name: &'a str, images: &'a Tensor<f64>, noise_seed: u64) -> Box<LossGraph<'a>> {
    use gvae_core::groupify::{abel_loss, all_pairs, order_loss, total_loss, GroupifyConfig};
    use gvae_core::vae::{betatc_loss, kl_gaussian, recon_loss, reparameterize, Objective, VaeConfig};
    Box::new(move |tape: &mut Tape<f64>, m: &BoundVae<'_>| {
        let x = tape.leaf(images.clone());
        let mut rng = seeded_rng(noise_seed);
        let n = 5;
        match name {
            "recon" => {
                let out = m.encode(tape, x)?;
                let z = reparameterize(tape, out, &mut rng);
                let logits = m.decode_logits(tape, z)?;
                Ok(recon_loss(tape, x, logits))
            }
            "kl" => {
                let out = m.encode(tape, x)?;
                Ok(kl_gaussian(tape, out))
            }
            "betatc" => {
                let out = m.encode(tape, x)?;
                let z = reparameterize(tape, out, &mut rng);
                let logits = m.decode_logits(tape, z)?;
                let recon = recon_loss(tape, x, logits);
                betatc_loss(tape, z, out, recon, 6.0, 100)
            }
            "abel" => abel_loss(m, tape, x, &all_pairs(m.arch.latent_dim), n),
            "order" => {
                let dims: Vec<usize> = (0..m.arch.latent_dim).collect();
                order_loss(m, tape, x, &dims, n)
            }
            "total" => {
                let cfg = VaeConfig {
                    objective: Objective::Beta { beta: 4.0 },
                    latent_dim: m.arch.latent_dim,
                    dataset_size: 100,
                };
                let g = GroupifyConfig::new(n, 1.0, m.arch.latent_dim)?;
                Ok(total_loss(tape, m, x, &cfg, Some(&g), &mut rng, 1)?.loss)
            }
            other => panic!("unknown loss {other}"),
        }
    })
}

/// Worst relative gradient error of loss `name` over `instances` random
/// tiny models (alternating decoder conventions) and batches of 3.
pub fn worst_gradient_error(name: &str, instances: u64) -> (f64, usize) {
    let mut worst = 0.0f64;
    let mut max_params = 0;
    for i in 0..instances {
        let decoder = if i % 2 == 0 {
            DecoderInput::Cyclic { n: 5 }
        } else {
            DecoderInput::Original
        };
        // The `mod n` wrap is a jump for the plain decoder; a central
        // difference straddling it measures the jump, not the gradient, so
        // redraw instances whose shifted codes sit within 0.01 of a wrap.
        let (model, images) = (0..)
            .map(|r| (tiny_model(decoder, 100 + i + 1000 * r), random_images(3, 6, 200 + i + 1000 * r)))
            .find(|(m, x)| wrap_margin(m, x, 5) >= 0.01)
            .unwrap();
        max_params = max_params.max(num_params(&model));
        let graph = grad_graph(name, &images, 300 + i);
        worst = worst.max(gradient_relative_error(&model, &*graph));
    }
    (worst, max_params)
}

pub fn default_spec() -> gvae_core::FactorSpec {
    gvae_core::FactorSpec::new(&[3, 6, 8, 8], 16, 16).unwrap()
}

/// Scores of the four metrics on the label-built code and on noise, with
/// the chance band each noise score must fall in.
#[derive(Debug)]
pub struct Calibration {
    pub perfect: [(&'static str, f64); 4],
    pub noise: [(&'static str, f64); 4],
    /// `(lo, hi)` per metric, same order.
    pub chance_band: [(f64, f64); 4],
}

impl Calibration {
    pub fn failures(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (name, s) in self.perfect {
            if s < 0.98 {
                out.push(format!("perfect {name} = {s:.4} < 0.98"));
            }
        }
        for ((name, s), (lo, hi)) in self.noise.iter().zip(self.chance_band) {
            if *s < lo || *s > hi {
                out.push(format!("noise {name} = {s:.4} outside [{lo:.4}, {hi:.4}]"));
            }
        }
        out
    }
}

pub fn calibration() -> Calibration {
    use gvae_core::metrics::{dci_disentanglement, evaluate};
    use gvae_core::{MetricConfig, Representation};
    let spec = default_spec();
    let cfg = MetricConfig::default();
    let perfect = evaluate(&Representation::from_labels(&spec, 0), &cfg).unwrap().scores();
    let noise_rep = Representation::noise(&spec, 4, &mut seeded_rng(2024));
    let noise = evaluate(&noise_rep, &cfg).unwrap().scores();

    let m = spec.num_factors() as f64;
    let chance = 1.0 / m;
    let bv = 3.0 * binomial_sigma(chance, cfg.betavae_test);
    let fv = 3.0 * binomial_sigma(chance, cfg.factorvae_test);
    // DCI has no closed-form chance level: use its null distribution over
    // independent noise codes (seeds disjoint from the one scored above).
    let null: Vec<f64> = (0..30)
        .map(|s| {
            let rep = Representation::noise(&spec, 4, &mut seeded_rng(10_000 + s));
            dci_disentanglement(&rep, cfg.dci_lambda, cfg.dci_steps, cfg.dci_lr).unwrap().score
        })
        .collect();
    let mean = null.iter().sum::<f64>() / null.len() as f64;
    let sd = (null.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (null.len() - 1) as f64).sqrt();
    Calibration {
        perfect,
        noise,
        chance_band: [
            (chance - bv, chance + bv),
            (chance - fv, chance + fv),
            (0.0, 0.05),
            ((mean - 3.0 * sd).max(0.0), mean + 3.0 * sd),
        ],
    }
}

fn distance_to_wrap(v: f64, n: usize) -> f64 {
    let r = v.rem_euclid(n as f64);
    r.min(n as f64 - r)
}

/// Smallest distance from any pre-wrap code in the Abel/Order graphs (both
/// levels, shifts 1 and n-1) to a multiple of `n`. Infinite for the cyclic
/// decoder, where the wrap is invisible through η.
pub fn wrap_margin(model: &VaeModel<f64>, images: &Tensor<f64>, n: usize) -> f64 {
    if matches!(model.arch.decoder, DecoderInput::Cyclic { .. }) {
        return f64::INFINITY;
    }
    let d = model.arch.latent_dim;
    let shifts = [1, n - 1];
    let mu = model.encode_mu_batch(images).unwrap();
    let mut margin = f64::INFINITY;
    for dim in 0..d {
        for k in shifts {
            let mut z = mu.clone();
            for r in 0..z.rows() {
                let v = z.get2(r, dim) + k as f64;
                margin = margin.min(distance_to_wrap(v, n));
                z.data_mut()[r * d + dim] = v.rem_euclid(n as f64);
            }
            let mu1 = model.encode_mu_batch(&model.decode_batch(&z).unwrap()).unwrap();
            for v in mu1.data() {
                for k2 in shifts {
                    margin = margin.min(distance_to_wrap(v + k2 as f64, n));
                }
            }
        }
    }
    margin
}
