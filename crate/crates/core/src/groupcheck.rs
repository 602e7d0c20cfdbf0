//! Exact arithmetic in `(ℤ/nℤ)^m` and empirical audits of how closely a
//! model's generators satisfy commutativity and `φ_i^n = e`.

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::groupify::{eta, isomorphism_terms, shift_on_tape, GroupModel, LossTerms};
use crate::nn::{seeded_rng, Rng};
use crate::tensor::Real;

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct CyclicTuple {
    pub values: Vec<u64>,
    pub n: u64,
}

impl CyclicTuple {
    pub fn new(values: Vec<u64>, n: u64) -> Result<Self> {
        if n == 0 {
            return Err(Error::Contract("modulus must be positive".into()));
        }
        Ok(Self {
            values: values.into_iter().map(|v| v % n).collect(),
            n,
        })
    }

    pub fn identity(n: u64, m: usize) -> Self {
        Self {
            values: vec![0; m],
            n,
        }
    }

    fn check_compatible(&self, other: &Self) -> Result<()> {
        if self.n != other.n || self.values.len() != other.values.len() {
            return Err(Error::Contract(format!(
                "cannot combine (Z/{}Z)^{} with (Z/{}Z)^{}",
                self.n,
                self.values.len(),
                other.n,
                other.values.len()
            )));
        }
        Ok(())
    }

    pub fn compose(&self, other: &Self) -> Result<Self> {
        self.check_compatible(other)?;
        Ok(Self {
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| (a + b) % self.n)
                .collect(),
            n: self.n,
        })
    }

    pub fn inverse(&self) -> Self {
        Self {
            values: self.values.iter().map(|&a| (self.n - a) % self.n).collect(),
            n: self.n,
        }
    }

    pub fn is_identity(&self) -> bool {
        self.values.iter().all(|&v| v == 0)
    }

    /// Least `k ≥ 1` with `k·a ≡ 0`: the lcm of the per-coordinate orders.
    pub fn order_of(&self) -> u64 {
        self.values
            .iter()
            .map(|&a| self.n / gcd(a, self.n))
            .fold(1, lcm)
    }
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn lcm(a: u64, b: u64) -> u64 {
    a / gcd(a, b) * b
}

/// Every element of `(ℤ/nℤ)^m` in lexicographic order.
pub fn elements(n: u64, m: usize) -> Vec<CyclicTuple> {
    let count = (n as usize).pow(m as u32);
    (0..count)
        .map(|mut flat| {
            let mut values = vec![0; m];
            for v in values.iter_mut().rev() {
                *v = (flat % n as usize) as u64;
                flat /= n as usize;
            }
            CyclicTuple { values, n }
        })
        .collect()
}

/// Checks closure, associativity, identity, inverses and commutativity of a
/// finite operation given as a Cayley table over element indices.
pub fn check_table_axioms(table: &[Vec<usize>]) -> bool {
    let size = table.len();
    if table.iter().any(|row| row.len() != size || row.iter().any(|&c| c >= size)) {
        return false;
    }
    let Some(e) = (0..size).find(|&e| (0..size).all(|a| table[e][a] == a && table[a][e] == a))
    else {
        return false;
    };
    if !(0..size).all(|a| (0..size).any(|b| table[a][b] == e && table[b][a] == e)) {
        return false;
    }
    for a in 0..size {
        for b in 0..size {
            if table[a][b] != table[b][a] {
                return false;
            }
            let ab = table[a][b];
            for c in 0..size {
                if table[ab][c] != table[a][table[b][c]] {
                    return false;
                }
            }
        }
    }
    true
}

/// Cayley table of `(ℤ/nℤ)^m` under [`CyclicTuple::compose`].
pub fn cayley_table(n: u64, m: usize) -> Vec<Vec<usize>> {
    let elems = elements(n, m);
    let index_of = |t: &CyclicTuple| {
        t.values
            .iter()
            .fold(0usize, |acc, &v| acc * n as usize + v as usize)
    };
    elems
        .iter()
        .map(|a| {
            elems
                .iter()
                .map(|b| index_of(&a.compose(b).expect("same group")))
                .collect()
        })
        .collect()
}

/// Exhaustive group-axiom check for `(ℤ/nℤ)^m`, intended for `n ≤ 6`, `m ≤ 3`.
pub fn check_group_axioms(n: u64, m: usize) -> Result<bool> {
    if n == 0 || m == 0 || (n as usize).pow(m as u32) > 1 << 12 {
        return Err(Error::Contract(format!(
            "(Z/{n}Z)^{m} is too large for exhaustive enumeration"
        )));
    }
    Ok(check_table_axioms(&cayley_table(n, m)))
}

/// Max elementwise deviation between `η(a + b)` and the complex product of
/// `η(a)` and `η(b)` (angle addition), over random integer tuples.
pub fn eta_homomorphism_check(n: usize, m: usize, trials: usize, rng: &mut Rng) -> f64 {
    let mut worst = 0.0f64;
    let span = 3 * n as i64;
    for _ in 0..trials {
        let a: Vec<f64> = (0..m).map(|_| rng.gen_range(-span..=span) as f64).collect();
        let b: Vec<f64> = (0..m).map(|_| rng.gen_range(-span..=span) as f64).collect();
        worst = worst.max(eta_pair_deviation(&a, &b, n));
    }
    worst
}

pub fn eta_pair_deviation(a: &[f64], b: &[f64], n: usize) -> f64 {
    let sum: Vec<f64> = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x + y).rem_euclid(n as f64))
        .collect();
    let (ea, eb, es) = (eta(a, n), eta(b, n), eta(&sum, n));
    let mut worst = 0.0f64;
    for k in 0..a.len() {
        let (sa, ca) = (ea.sin_part[k], ea.cos_part[k]);
        let (sb, cb) = (eb.sin_part[k], eb.cos_part[k]);
        let prod_sin = sa * cb + ca * sb;
        let prod_cos = ca * cb - sa * sb;
        worst = worst
            .max((es.sin_part[k] - prod_sin).abs())
            .max((es.cos_part[k] - prod_cos).abs());
    }
    worst
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ResidualStats {
    pub mean: f64,
    pub max: f64,
}

impl ResidualStats {
    fn from_values(mut values: Vec<f64>) -> Self {
        if values.is_empty() {
            return Self::default();
        }
        values.sort_by(f64::total_cmp);
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        Self {
            mean,
            max: *values.last().expect("nonempty"),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    /// Per image and pair: MSE between `φ_i φ_j o` and `φ_j φ_i o`.
    pub abel_residual: ResidualStats,
    /// Per image and dim: the two period terms of the Order loss, summed.
    pub order_residual: ResidualStats,
    pub abel_per_pair: Vec<((usize, usize), f64)>,
    pub order_per_dim: Vec<(usize, f64)>,
    pub sample_size: usize,
}

/// Held-out grid indices for audits: up to `size` of the every-5th-index
/// holdout set, chosen with `seed` and sorted.
pub fn audit_sample(dataset: &Dataset, size: usize, seed: u64) -> Vec<usize> {
    let mut pool = dataset.holdout_indices();
    if size < pool.len() {
        pool.shuffle(&mut seeded_rng(seed));
        pool.truncate(size);
    }
    pool.sort_unstable();
    pool
}

/// Evaluates the Abel and Order residuals image by image, without
/// gradients. The sample is sorted first so the result does not depend on
/// its ordering.
pub fn audit_model<T: Real, M: GroupModel<T>>(
    model: &M,
    dataset: &Dataset,
    n: usize,
    dims: &[usize],
    pairs: &[(usize, usize)],
    sample: &[usize],
) -> Result<ResidualReport> {
    if sample.is_empty() {
        return Err(Error::Contract("audit sample must not be empty".into()));
    }
    let mut sample = sample.to_vec();
    sample.sort_unstable();
    let mut abel_vals: Vec<Vec<f64>> = vec![Vec::new(); pairs.len()];
    let mut order_vals: Vec<Vec<f64>> = vec![Vec::new(); dims.len()];
    for chunk in sample.chunks(64) {
        let mut tape = Tape::<T>::new();
        let x = tape.leaf(dataset.batch_tensor(chunk).cast::<T>());
        let mu = model.encode_mu(&mut tape, x)?;
        let image = |tape: &mut Tape<T>, z| model.decode_image(tape, z);
        let apply = |tape: &mut Tape<T>, img, dim, k| -> Result<_> {
            let m = model.encode_mu(tape, img)?;
            let s = shift_on_tape(tape, m, dim, k, n)?;
            image(tape, s)
        };
        let first = |tape: &mut Tape<T>, dim, k| -> Result<_> {
            let s = shift_on_tape(tape, mu, dim, k, n)?;
            image(tape, s)
        };
        for (p, &(i, j)) in pairs.iter().enumerate() {
            let fi = first(&mut tape, i, 1)?;
            let fj = first(&mut tape, j, 1)?;
            let ij = apply(&mut tape, fj, i, 1)?;
            let ji = apply(&mut tape, fi, j, 1)?;
            let (a, b) = (tape.value(ij).clone(), tape.value(ji).clone());
            abel_vals[p].extend(row_mse(&a, &b));
        }
        for (q, &i) in dims.iter().enumerate() {
            let f1 = first(&mut tape, i, 1)?;
            let fm = first(&mut tape, i, n - 1)?;
            let a = apply(&mut tape, fm, i, 1)?;
            let b = apply(&mut tape, f1, i, n - 1)?;
            let o = tape.value(x).clone();
            let ra = row_mse(tape.value(a), &o);
            let rb = row_mse(tape.value(b), &o);
            order_vals[q].extend(ra.iter().zip(&rb).map(|(u, v)| u + v));
        }
        tape.check_finite()?;
    }
    let abel_per_pair = pairs
        .iter()
        .zip(&abel_vals)
        .map(|(&p, v)| (p, ResidualStats::from_values(v.clone()).mean))
        .collect();
    let order_per_dim = dims
        .iter()
        .zip(&order_vals)
        .map(|(&d, v)| (d, ResidualStats::from_values(v.clone()).mean))
        .collect();
    Ok(ResidualReport {
        abel_residual: ResidualStats::from_values(abel_vals.concat()),
        order_residual: ResidualStats::from_values(order_vals.concat()),
        abel_per_pair,
        order_per_dim,
        sample_size: sample.len(),
    })
}

fn row_mse<T: Real>(a: &crate::tensor::Tensor<T>, b: &crate::tensor::Tensor<T>) -> Vec<f64> {
    (0..a.rows())
        .map(|r| {
            let (x, y) = (a.row(r), b.row(r));
            x.iter()
                .zip(y)
                .map(|(&u, &v)| (u.to_f64c() - v.to_f64c()).powi(2))
                .sum::<f64>()
                / x.len() as f64
        })
        .collect()
}

/// Batch-level Abel and Order losses of a model on a fixed image set,
/// matching the training objective exactly (no gradients are taken).
pub fn batch_losses<T: Real, M: GroupModel<T>>(
    model: &M,
    dataset: &Dataset,
    n: usize,
    dims: &[usize],
    pairs: &[(usize, usize)],
    sample: &[usize],
) -> Result<(f64, f64)> {
    let mut tape = Tape::<T>::new();
    let x = tape.leaf(dataset.batch_tensor(sample).cast::<T>());
    let terms = isomorphism_terms(model, &mut tape, x, None, n, pairs, dims, LossTerms::default())?;
    tape.check_finite()?;
    Ok((
        tape.scalar(terms.abel.expect("abel on")).to_f64c(),
        tape.scalar(terms.order.expect("order on")).to_f64c(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::FactorSpec;
    use crate::groupify::OracleModel;

    fn tup(v: &[u64], n: u64) -> CyclicTuple {
        CyclicTuple::new(v.to_vec(), n).unwrap()
    }

    #[test]
    fn inverse_and_identity() {
        let a = tup(&[3, 7, 0], 10);
        assert!(a.compose(&a.inverse()).unwrap().is_identity());
        assert_eq!(a.inverse().inverse(), a);
        assert_eq!(tup(&[0, 1], 10).order_of(), 10);
        assert_eq!(tup(&[2, 5], 10).order_of(), 10);
        assert_eq!(CyclicTuple::identity(10, 2).order_of(), 1);
        assert!(tup(&[1], 10).compose(&tup(&[1], 9)).is_err());
        assert!(tup(&[1], 10).compose(&tup(&[1, 2], 10)).is_err());
    }

    #[test]
    fn small_groups_satisfy_axioms() {
        assert!(check_group_axioms(2, 1).unwrap());
        assert!(check_group_axioms(6, 2).unwrap());
    }

    #[test]
    fn corrupted_table_fails() {
        let mut table = cayley_table(4, 1);
        table[1][2] = 0;
        assert!(!check_table_axioms(&table));
        let mut swapped = cayley_table(3, 2);
        swapped[1].swap(5, 6);
        assert!(!check_table_axioms(&swapped));
    }

    #[test]
    fn eta_half_turn_and_identity() {
        let e = eta(&[2.0], 4);
        assert!(e.sin_part[0].abs() < 1e-15);
        assert!((e.cos_part[0] + 1.0).abs() < 1e-15);
        assert!(eta_pair_deviation(&[0.0, 0.0], &[3.0, -7.0], 10) < 1e-15);
    }

    #[test]
    fn oracle_audit_is_exactly_zero() {
        let ds = Dataset::generate(&FactorSpec::default()).unwrap();
        let oracle = OracleModel::new(&ds, 8).unwrap();
        let sample = audit_sample(&ds, 256, 0);
        let report = audit_model::<f32, _>(&oracle, &ds, 8, &[2, 3], &[(2, 3)], &sample).unwrap();
        assert_eq!(report.abel_residual.max, 0.0);
        assert_eq!(report.order_residual.max, 0.0);
        assert_eq!(report.sample_size, sample.len());
    }

    #[test]
    fn audit_sample_is_held_out_and_sorted() {
        let ds = Dataset::generate(&FactorSpec::default()).unwrap();
        let s = audit_sample(&ds, 100, 3);
        assert_eq!(s.len(), 100);
        assert!(s.iter().all(|i| i % 5 == 0));
        assert!(s.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(audit_sample(&ds, 10_000, 3).len(), ds.holdout_indices().len());
    }
}
