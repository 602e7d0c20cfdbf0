//! Dense networks, parameter storage, gradients and the Adam optimizer.

use std::collections::BTreeMap;

use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// The single PRNG used everywhere in the crate.
pub type Rng = ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Activation {
    #[default]
    Tanh,
    Relu,
}

impl Activation {
    pub fn as_str(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "tanh" => Ok(Activation::Tanh),
            "relu" => Ok(Activation::Relu),
            other => Err(Error::Config(format!("unknown activation `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param<T: Real> {
    pub name: String,
    pub value: Tensor<T>,
    /// Adam first moment.
    pub m: Tensor<T>,
    /// Adam second moment.
    pub v: Tensor<T>,
}

/// Named parameters in declaration order, each with its Adam moments.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ParamStore<T: Real = f32> {
    params: Vec<Param<T>>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self { params: Vec::new() }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<()> {
        let name = name.into();
        if self.params.iter().any(|p| p.name == name) {
            return Err(Error::Contract(format!("duplicate parameter `{name}`")));
        }
        let m = Tensor::zeros(value.shape());
        let v = Tensor::zeros(value.shape());
        self.params.push(Param { name, value, m, v });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.params.iter().find(|p| p.name == name).map(|p| &p.value)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.params
            .iter_mut()
            .find(|p| p.name == name)
            .map(|p| &mut p.value)
    }

    pub fn params(&self) -> &[Param<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param<T>] {
        &mut self.params
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.iter().map(|p| p.name.as_str())
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Copy with a different element type; moments are reset.
    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        let mut out = ParamStore::new();
        for p in &self.params {
            out.insert(p.name.clone(), p.value.cast())
                .expect("names already unique");
        }
        out
    }

    /// Registers every parameter as a leaf on `tape`.
    pub fn bind(&self, tape: &mut Tape<T>) -> BoundParams {
        let mut bound = BoundParams::default();
        for p in &self.params {
            let var = tape.leaf(p.value.clone());
            bound.entries.push((p.name.clone(), var));
        }
        bound
    }

    /// Number of dense layers stored under `prefix` (`{prefix}{l}.weight`).
    pub fn layer_count(&self, prefix: &str) -> usize {
        (0..)
            .take_while(|l| self.get(&format!("{prefix}{l}.weight")).is_some())
            .count()
    }

    /// Layer widths `[in, h1, ..., out]` of the network stored under `prefix`.
    pub fn layer_sizes(&self, prefix: &str) -> Vec<usize> {
        let layers = self.layer_count(prefix);
        let mut sizes = Vec::with_capacity(layers + 1);
        for l in 0..layers {
            let w = self.get(&format!("{prefix}{l}.weight")).expect("counted");
            if l == 0 {
                sizes.push(w.shape()[0]);
            }
            sizes.push(w.shape()[1]);
        }
        sizes
    }
}

/// Tape handles for every parameter of a store.
#[derive(Clone, Debug, Default)]
pub struct BoundParams {
    entries: Vec<(String, Var)>,
}

impl BoundParams {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.entries
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| *v)
            .ok_or_else(|| Error::Contract(format!("unknown parameter `{name}`")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.entries.iter().map(|(n, v)| (n.as_str(), *v))
    }
}

/// Appends a Glorot-uniform initialized MLP under `prefix` to `store`.
pub fn init_mlp_into<T: Real>(
    store: &mut ParamStore<T>,
    prefix: &str,
    layer_sizes: &[usize],
    rng: &mut Rng,
) -> Result<()> {
    if layer_sizes.len() < 2 || layer_sizes.contains(&0) {
        return Err(Error::Config(format!(
            "layer sizes must have at least two positive entries, got {layer_sizes:?}"
        )));
    }
    for (l, pair) in layer_sizes.windows(2).enumerate() {
        let (fan_in, fan_out) = (pair[0], pair[1]);
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let data = (0..fan_in * fan_out)
            .map(|_| T::from_f64c(rng.gen_range(-bound..bound)))
            .collect();
        store.insert(
            format!("{prefix}{l}.weight"),
            Tensor::new(vec![fan_in, fan_out], data)?,
        )?;
        store.insert(format!("{prefix}{l}.bias"), Tensor::zeros(&[1, fan_out]))?;
    }
    Ok(())
}

/// Fresh MLP parameters named `{l}.weight` / `{l}.bias`.
pub fn init_params(layer_sizes: &[usize], seed: u64) -> Result<ParamStore> {
    let mut store = ParamStore::new();
    init_mlp_into(&mut store, "", layer_sizes, &mut seeded_rng(seed))?;
    Ok(store)
}

/// Records the MLP stored under `prefix` on `tape`. Hidden layers use
/// `activation`; the last layer is linear.
pub fn mlp_on_tape<T: Real>(
    tape: &mut Tape<T>,
    bound: &BoundParams,
    prefix: &str,
    layers: usize,
    input: Var,
    activation: Activation,
) -> Result<Var> {
    let mut h = input;
    for l in 0..layers {
        let w = bound.get(&format!("{prefix}{l}.weight"))?;
        let b = bound.get(&format!("{prefix}{l}.bias"))?;
        if tape.value(h).cols() != tape.value(w).shape()[0] {
            return Err(Error::Dimension(format!(
                "layer {prefix}{l} expects width {}, got {}",
                tape.value(w).shape()[0],
                tape.value(h).cols()
            )));
        }
        let a = tape.matmul(h, w)?;
        h = tape.add_bias(a, b)?;
        if l + 1 < layers {
            h = match activation {
                Activation::Tanh => tape.tanh(h),
                Activation::Relu => tape.relu(h),
            };
        }
    }
    Ok(h)
}

/// Batched forward pass of a store built by [`init_params`].
pub fn forward_mlp<T: Real>(
    params: &ParamStore<T>,
    input: &Tensor<T>,
    activation: Activation,
) -> Result<Tensor<T>> {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let x = tape.leaf(input.clone());
    let out = mlp_on_tape(&mut tape, &bound, "", params.layer_count(""), x, activation)?;
    tape.check_finite()?;
    Ok(tape.value(out).clone())
}

#[derive(Clone, Debug)]
pub struct GradResult<T: Real = f32> {
    pub loss: T,
    pub grads: BTreeMap<String, Tensor<T>>,
}

/// Evaluates `graph` on a fresh tape and returns the loss with exact
/// reverse-mode gradients for every parameter in `params`.
pub fn loss_and_grad<T, F>(params: &ParamStore<T>, graph: F) -> Result<GradResult<T>>
where
    T: Real,
    F: FnOnce(&mut Tape<T>, &BoundParams) -> Result<Var>,
{
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let loss = graph(&mut tape, &bound)?;
    let slots = tape.backward(loss)?;
    let mut grads = BTreeMap::new();
    for ((name, var), p) in bound.iter().zip(params.params()) {
        let g = slots[var.index()]
            .clone()
            .unwrap_or_else(|| Tensor::zeros(p.value.shape()));
        grads.insert(name.to_string(), g);
    }
    Ok(GradResult {
        loss: tape.scalar(loss),
        grads,
    })
}

/// One bias-corrected Adam update (`step` counts from 1).
pub fn adam_step<T: Real>(
    params: &mut ParamStore<T>,
    grads: &GradResult<T>,
    lr: f64,
    step: u64,
) -> Result<()> {
    if step == 0 {
        return Err(Error::Contract("adam step counter starts at 1".into()));
    }
    for p in params.params() {
        let g = grads
            .grads
            .get(&p.name)
            .ok_or_else(|| Error::Contract(format!("missing gradient for `{}`", p.name)))?;
        if g.shape() != p.value.shape() {
            return Err(Error::Dimension(format!(
                "gradient for `{}` has shape {:?}, parameter {:?}",
                p.name,
                g.shape(),
                p.value.shape()
            )));
        }
    }
    let b1 = T::from_f64c(ADAM_BETA1);
    let b2 = T::from_f64c(ADAM_BETA2);
    let eps = T::from_f64c(ADAM_EPS);
    let lr_t = T::from_f64c(lr);
    let c1 = T::from_f64c(1.0 - ADAM_BETA1.powi(step as i32));
    let c2 = T::from_f64c(1.0 - ADAM_BETA2.powi(step as i32));
    for p in params.params_mut() {
        let g = &grads.grads[&p.name];
        let Param { value, m, v, .. } = p;
        for (((w, mi), vi), &gi) in value
            .data_mut()
            .iter_mut()
            .zip(m.data_mut())
            .zip(v.data_mut())
            .zip(g.data())
        {
            *mi = b1 * *mi + (T::one() - b1) * gi;
            *vi = b2 * *vi + (T::one() - b2) * gi * gi;
            let mhat = *mi / c1;
            let vhat = *vi / c2;
            *w = *w - lr_t * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn biases_start_at_zero_and_init_is_deterministic() {
        let a = init_params(&[4, 3], 0).unwrap();
        let b = init_params(&[4, 3], 0).unwrap();
        assert!(a.get("0.bias").unwrap().data().iter().all(|&v| v == 0.0));
        assert_eq!(a, b);
        assert_ne!(a, init_params(&[4, 3], 1).unwrap());
    }

    #[test]
    fn init_respects_glorot_bound_per_layer() {
        let p = init_params(&[256, 128, 12], 7).unwrap();
        let first = (6.0f64 / 384.0).sqrt() as f32;
        assert!(p.get("0.weight").unwrap().data().iter().all(|w| w.abs() < first));
        let second = (6.0f64 / 140.0).sqrt() as f32;
        assert!(p.get("1.weight").unwrap().data().iter().all(|w| w.abs() < second));
    }

    #[test]
    fn bad_layer_sizes_are_config_errors() {
        assert!(matches!(init_params(&[], 0), Err(Error::Config(_))));
        assert!(matches!(init_params(&[4], 0), Err(Error::Config(_))));
        assert!(matches!(init_params(&[4, 0], 0), Err(Error::Config(_))));
    }

    #[test]
    fn zero_network_outputs_zero() {
        let mut p = init_params(&[3, 5, 2], 0).unwrap();
        for param in p.params_mut() {
            param.value.data_mut().fill(0.0);
        }
        let x = Tensor::new(vec![2, 3], vec![1.0, -2.0, 3.0, 0.5, 0.1, 9.0]).unwrap();
        let y = forward_mlp(&p, &x, Activation::Tanh).unwrap();
        assert_eq!(y.shape(), &[2, 2]);
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let mut p = ParamStore::<f32>::new();
        let mut eye = Tensor::zeros(&[3, 3]);
        for i in 0..3 {
            eye.data_mut()[i * 3 + i] = 1.0;
        }
        p.insert("0.weight", eye).unwrap();
        p.insert("0.bias", Tensor::zeros(&[1, 3])).unwrap();
        let x = Tensor::new(vec![1, 3], vec![0.25, -4.0, 7.5]).unwrap();
        assert_eq!(forward_mlp(&p, &x, Activation::Relu).unwrap(), x);
    }

    #[test]
    fn forward_rejects_wrong_width() {
        let p = init_params(&[3, 2], 0).unwrap();
        let x = Tensor::zeros(&[1, 4]);
        assert!(matches!(
            forward_mlp(&p, &x, Activation::Tanh),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn adam_zero_gradient_is_a_no_op() {
        let mut p = init_params(&[3, 2], 0).unwrap();
        let before = p.clone();
        let grads = GradResult {
            loss: 0.0,
            grads: p
                .params()
                .iter()
                .map(|q| (q.name.clone(), Tensor::zeros(q.value.shape())))
                .collect(),
        };
        adam_step(&mut p, &grads, 1e-3, 1).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut p = ParamStore::<f64>::new();
        p.insert("w", Tensor::new(vec![1, 3], vec![0.0, 1.0, -1.0]).unwrap())
            .unwrap();
        let g = Tensor::new(vec![1, 3], vec![0.3, -2.0, 1e-3]).unwrap();
        let grads = GradResult {
            loss: 0.0,
            grads: [("w".to_string(), g.clone())].into_iter().collect(),
        };
        adam_step(&mut p, &grads, 0.01, 1).unwrap();
        // m̂ = g, v̂ = g², so the step is lr·g/(|g| + ε).
        let w = p.get("w").unwrap().data();
        let start = [0.0, 1.0, -1.0];
        for k in 0..3 {
            let gi = g.data()[k];
            let expected = start[k] - 0.01 * gi / (gi.abs() + ADAM_EPS);
            assert!((w[k] - expected).abs() < 1e-15);
            assert!(((w[k] - start[k]).abs() - 0.01).abs() < 1e-6);
        }
    }

    #[test]
    fn adam_constant_gradient_descends() {
        let mut p = ParamStore::<f64>::new();
        p.insert("w", Tensor::new(vec![1, 2], vec![0.0, 0.0]).unwrap())
            .unwrap();
        let grads = GradResult {
            loss: 0.0,
            grads: [(
                "w".to_string(),
                Tensor::new(vec![1, 2], vec![0.5, -0.5]).unwrap(),
            )]
            .into_iter()
            .collect(),
        };
        for step in 1..=50 {
            adam_step(&mut p, &grads, 1e-2, step).unwrap();
        }
        let w = p.get("w").unwrap().data();
        assert!(w[0] < 0.0 && w[1] > 0.0);
    }

    #[test]
    fn adam_requires_every_gradient() {
        let mut p = init_params(&[2, 2], 0).unwrap();
        let grads = GradResult {
            loss: 0.0,
            grads: BTreeMap::new(),
        };
        assert!(matches!(
            adam_step(&mut p, &grads, 1e-3, 1),
            Err(Error::Contract(_))
        ));
    }
}
