mod common;

use common::{log_normal, naive_mlp, random_images, tiny_model};
use gvae_core::autodiff::Tape;
use gvae_core::nn::{forward_mlp, init_params, seeded_rng, Activation};
use gvae_core::vae::{betatc_loss, betatc_terms, kl_gaussian, recon_loss, reparameterize, DecoderInput, EncoderOut};
use gvae_core::Tensor;
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::StandardNormal;

fn normal_tensor(rows: usize, cols: usize, scale: f64, seed: u64) -> Tensor<f64> {
    let mut rng = seeded_rng(seed);
    let data = (0..rows * cols)
        .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
        .collect();
    Tensor::new(vec![rows, cols], data).unwrap()
}

#[test]
fn forward_matches_plain_loops() {
    for (seed, act) in [(1, Activation::Tanh), (2, Activation::Relu)] {
        let params = init_params(&[5, 7, 6, 3], seed).unwrap().cast::<f64>();
        let x = normal_tensor(4, 5, 1.0, seed + 10);
        let out = forward_mlp(&params, &x, act).unwrap();
        for r in 0..4 {
            let expect = naive_mlp(&params, "", &x.data()[r * 5..r * 5 + 5], act);
            for (c, e) in expect.iter().enumerate() {
                assert!((out.get2(r, c) - e).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn reconstruction_loss_matches_direct_cross_entropy() {
    let logits = normal_tensor(5, 6, 3.0, 3);
    let targets = random_images(5, 6, 4);
    let mut tape = Tape::<f64>::new();
    let (l, t) = (tape.leaf(logits.clone()), tape.leaf(targets.clone()));
    let loss = recon_loss(&mut tape, t, l);
    let got = tape.scalar(loss);
    let mut expect = 0.0;
    for (&x, &y) in logits.data().iter().zip(targets.data()) {
        let p = 1.0 / (1.0 + (-x).exp());
        expect -= y * p.ln() + (1.0 - y) * (1.0 - p).ln();
    }
    expect /= 5.0;
    assert!((got - expect).abs() < 1e-9, "{got} vs {expect}");
}

#[test]
fn analytic_kl_matches_monte_carlo() {
    let mu = normal_tensor(4, 3, 1.0, 5);
    let logvar = normal_tensor(4, 3, 0.5, 6);
    let mut tape = Tape::<f64>::new();
    let out = EncoderOut {
        mu: tape.leaf(mu.clone()),
        logvar: tape.leaf(logvar.clone()),
    };
    let kl = kl_gaussian(&mut tape, out);
    let kl = tape.scalar(kl);
    let mut rng = seeded_rng(7);
    let draws = 20_000;
    let mut samples = Vec::with_capacity(draws);
    for _ in 0..draws {
        let mut s = 0.0;
        for (&m, &lv) in mu.data().iter().zip(logvar.data()) {
            let z = m + (0.5 * lv).exp() * rng.sample::<f64, _>(StandardNormal);
            s += log_normal(z, m, lv) - log_normal(z, 0.0, 0.0);
        }
        samples.push(s / 4.0);
    }
    let mean = samples.iter().sum::<f64>() / draws as f64;
    let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (draws - 1) as f64;
    let se = (var / draws as f64).sqrt();
    assert!((mean - kl).abs() < 3.0 * se, "mc {mean} ± {se}, analytic {kl}");
}

/// With `beta_tc = 1` the decomposition telescopes to a one-sample estimate
/// of the KL, so `loss − recon` averages to the analytic KL.
#[test]
fn unit_tc_weight_reduces_to_elbo() {
    let model = tiny_model(DecoderInput::Cyclic { n: 5 }, 11);
    let images = random_images(8, 6, 12);
    let mut rng = seeded_rng(13);
    let batches = 400;
    let mut diffs = Vec::with_capacity(batches);
    for _ in 0..batches {
        let mut tape = Tape::<f64>::new();
        let m = model.bind(&mut tape);
        let x = tape.leaf(images.clone());
        let out = m.encode(&mut tape, x).unwrap();
        let z = reparameterize(&mut tape, out, &mut rng);
        let logits = m.decode_logits(&mut tape, z).unwrap();
        let recon = recon_loss(&mut tape, x, logits);
        let tc = betatc_loss(&mut tape, z, out, recon, 1.0, 1000).unwrap();
        let kl = kl_gaussian(&mut tape, out);
        diffs.push(tape.scalar(tc) - tape.scalar(recon) - tape.scalar(kl));
    }
    let mean = diffs.iter().sum::<f64>() / batches as f64;
    let sd = (diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (batches - 1) as f64).sqrt();
    let se = sd / (batches as f64).sqrt();
    assert!(mean.abs() < 3.0 * se, "mean gap {mean}, standard error {se}");
}

fn tc_of(z: &Tensor<f64>, mu: &Tensor<f64>, logvar: &Tensor<f64>) -> f64 {
    let mut tape = Tape::<f64>::new();
    let out = EncoderOut {
        mu: tape.leaf(mu.clone()),
        logvar: tape.leaf(logvar.clone()),
    };
    let zv = tape.leaf(z.clone());
    let t = betatc_terms(&mut tape, zv, out, 1000).unwrap();
    tape.scalar(t.total_correlation)
}

#[test]
fn one_dimensional_code_has_no_total_correlation() {
    let mu = normal_tensor(32, 1, 1.0, 20);
    let logvar = normal_tensor(32, 1, 0.3, 21);
    let z = normal_tensor(32, 1, 1.0, 22);
    assert!(tc_of(&z, &mu, &logvar).abs() < 1e-10);
}

#[test]
fn duplicated_coordinate_raises_total_correlation() {
    let b = 64;
    let logvar = Tensor::new(vec![b, 2], vec![(0.01f64).ln(); b * 2]).unwrap();
    let independent = normal_tensor(b, 2, 1.0, 30);
    let mut dup = independent.clone();
    for r in 0..b {
        let v = dup.get2(r, 0);
        dup.data_mut()[r * 2 + 1] = v;
    }
    let tc_ind = tc_of(&independent, &independent, &logvar);
    let tc_dup = tc_of(&dup, &dup, &logvar);
    assert!(tc_dup > tc_ind + 1.0, "duplicated {tc_dup}, independent {tc_ind}");
}

#[test]
fn tc_terms_are_invariant_to_batch_order() {
    let b = 16;
    let mu = normal_tensor(b, 3, 1.0, 40);
    let logvar = normal_tensor(b, 3, 0.4, 41);
    let eps = normal_tensor(b, 3, 1.0, 42);
    let mut perm: Vec<usize> = (0..b).collect();
    perm.shuffle(&mut seeded_rng(43));
    let permute = |t: &Tensor<f64>| {
        let data = perm.iter().flat_map(|&r| t.data()[r * 3..r * 3 + 3].to_vec()).collect();
        Tensor::new(vec![b, 3], data).unwrap()
    };
    let terms = |mu: &Tensor<f64>, logvar: &Tensor<f64>, eps: &Tensor<f64>| {
        let mut tape = Tape::<f64>::new();
        let out = EncoderOut {
            mu: tape.leaf(mu.clone()),
            logvar: tape.leaf(logvar.clone()),
        };
        // z = mu + exp(logvar/2)·eps built by hand from an explicit noise leaf.
        let e = tape.leaf(eps.clone());
        let half = tape.scale(out.logvar, 0.5);
        let sd = tape.exp(half);
        let noise = tape.mul(sd, e);
        let z = tape.add(out.mu, noise);
        let t = betatc_terms(&mut tape, z, out, 500).unwrap();
        [t.mutual_info, t.total_correlation, t.dim_kl].map(|v| tape.scalar(v))
    };
    let a = terms(&mu, &logvar, &eps);
    let p = terms(&permute(&mu), &permute(&logvar), &permute(&eps));
    for (x, y) in a.iter().zip(&p) {
        assert!((x - y).abs() <= 1e-5, "{a:?} vs {p:?}");
    }
}
