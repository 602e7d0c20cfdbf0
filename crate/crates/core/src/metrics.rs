//! BetaVAE score, FactorVAE score, MIG and DCI disentanglement, computed
//! from the latent means of every grid image against the true factors.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::data::{sample_index, sample_pair_fixed_factor, Dataset, FactorSpec};
use crate::error::{Error, Result};
use crate::groupify::GroupModel;
use crate::nn::{seeded_rng, Rng};
use crate::tensor::Real;

/// Latent codes for every grid point, row `i` belonging to flat index `i`.
#[derive(Clone, Debug, PartialEq)]
pub struct Representation {
    spec: FactorSpec,
    dim: usize,
    codes: Vec<f64>,
}

impl Representation {
    pub fn new(spec: FactorSpec, dim: usize, codes: Vec<f64>) -> Result<Self> {
        if dim == 0 || codes.len() != spec.grid_size() * dim {
            return Err(Error::Dimension(format!(
                "expected {} x {dim} codes, got {}",
                spec.grid_size(),
                codes.len()
            )));
        }
        if codes.iter().any(|c| !c.is_finite()) {
            return Err(Error::Contract("representation has non-finite codes".into()));
        }
        Ok(Self { spec, dim, codes })
    }

    /// `z_k = v_k / (card_k - 1)`, followed by `spare` constant dims.
    pub fn from_labels(spec: &FactorSpec, spare: usize) -> Self {
        let card = spec.cardinalities();
        let mut codes = Vec::with_capacity(spec.grid_size() * (card.len() + spare));
        for flat in 0..spec.grid_size() {
            let idx = spec.unflatten(flat);
            codes.extend(idx.values.iter().zip(&card).map(|(&v, &c)| v as f64 / (c - 1) as f64));
            codes.extend(std::iter::repeat_n(0.0, spare));
        }
        Self {
            spec: spec.clone(),
            dim: card.len() + spare,
            codes,
        }
    }

    /// I.i.d. standard-normal codes, independent of the factors.
    pub fn noise(spec: &FactorSpec, dim: usize, rng: &mut Rng) -> Self {
        use rand_distr::{Distribution, StandardNormal};
        let codes = (0..spec.grid_size() * dim)
            .map(|_| StandardNormal.sample(rng))
            .collect();
        Self {
            spec: spec.clone(),
            dim,
            codes,
        }
    }

    pub fn spec(&self) -> &FactorSpec {
        &self.spec
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.spec.grid_size()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn code(&self, flat: usize) -> &[f64] {
        &self.codes[flat * self.dim..(flat + 1) * self.dim]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.codes.iter().skip(j).step_by(self.dim).copied().collect()
    }

    pub fn labels(&self, k: usize) -> Vec<usize> {
        (0..self.len()).map(|i| self.spec.unflatten(i).values[k]).collect()
    }

    /// Reorders latent dims: new dim `j` is old dim `perm[j]`.
    pub fn permute_dims(&self, perm: &[usize]) -> Self {
        let codes = (0..self.len())
            .flat_map(|i| perm.iter().map(move |&p| self.codes[i * self.dim + p]))
            .collect();
        Self {
            spec: self.spec.clone(),
            dim: perm.len(),
            codes,
        }
    }

    /// `z_j ↦ scale_j · z_j + shift_j`.
    pub fn affine(&self, scale: &[f64], shift: &[f64]) -> Self {
        let codes = self
            .codes
            .iter()
            .enumerate()
            .map(|(p, &z)| scale[p % self.dim] * z + shift[p % self.dim])
            .collect();
        Self {
            spec: self.spec.clone(),
            dim: self.dim,
            codes,
        }
    }
}

/// Encodes every grid image to its latent mean.
pub fn representation<M: GroupModel<f32>>(model: &M, dataset: &Dataset) -> Result<Representation> {
    let d = model.latent_dim();
    let mut codes = Vec::with_capacity(dataset.len() * d);
    let all: Vec<usize> = (0..dataset.len()).collect();
    for chunk in all.chunks(256) {
        let mut tape = Tape::<f32>::new();
        let x = tape.leaf(dataset.batch_tensor(chunk));
        let mu = model.encode_mu(&mut tape, x)?;
        tape.check_finite()?;
        codes.extend(tape.value(mu).data().iter().map(|v| v.to_f64c()));
    }
    Representation::new(dataset.spec().clone(), d, codes)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricConfig {
    pub seed: u64,
    pub betavae_train: usize,
    pub betavae_test: usize,
    pub betavae_pairs: usize,
    pub factorvae_train: usize,
    pub factorvae_test: usize,
    pub factorvae_batch: usize,
    pub mig_bins: usize,
    pub dci_lambda: f64,
    pub dci_steps: usize,
    pub dci_lr: f64,
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            betavae_train: 500,
            betavae_test: 200,
            betavae_pairs: 16,
            factorvae_train: 800,
            factorvae_test: 400,
            factorvae_batch: 64,
            mig_bins: 20,
            dci_lambda: 0.01,
            dci_steps: 200,
            dci_lr: 0.1,
        }
    }
}

/// Multinomial logistic regression fitted by full-batch gradient descent
/// from zero weights, with an optional L1 proximal step on the weights.
#[derive(Clone, Debug)]
pub(crate) struct Softmax {
    pub classes: usize,
    /// `[features][classes]`, row-major.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Softmax {
    pub fn fit(
        x: &[f64],
        features: usize,
        labels: &[usize],
        classes: usize,
        steps: usize,
        lr: f64,
        l1: f64,
    ) -> Self {
        let rows = labels.len();
        let mut model = Self {
            classes,
            weights: vec![0.0; features * classes],
            bias: vec![0.0; classes],
        };
        let mut probs = vec![0.0; classes];
        for _ in 0..steps {
            let mut gw = vec![0.0; features * classes];
            let mut gb = vec![0.0; classes];
            for (r, &y) in labels.iter().enumerate() {
                let xr = &x[r * features..(r + 1) * features];
                model.probabilities(xr, &mut probs);
                probs[y] -= 1.0;
                for (c, &p) in probs.iter().enumerate() {
                    gb[c] += p;
                }
                for (f, &xv) in xr.iter().enumerate() {
                    let row = &mut gw[f * classes..(f + 1) * classes];
                    for (g, &p) in row.iter_mut().zip(&probs) {
                        *g += xv * p;
                    }
                }
            }
            let inv = 1.0 / rows as f64;
            for (w, g) in model.weights.iter_mut().zip(&gw) {
                let step = *w - lr * g * inv;
                *w = step.signum() * (step.abs() - lr * l1).max(0.0);
            }
            for (b, g) in model.bias.iter_mut().zip(&gb) {
                *b -= lr * g * inv;
            }
        }
        model
    }

    fn probabilities(&self, x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.bias);
        for (f, &xv) in x.iter().enumerate() {
            for (o, &w) in out.iter_mut().zip(&self.weights[f * self.classes..(f + 1) * self.classes]) {
                *o += xv * w;
            }
        }
        let max = out.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for o in out.iter_mut() {
            *o = (*o - max).exp();
            total += *o;
        }
        for o in out.iter_mut() {
            *o /= total;
        }
    }

    pub fn predict(&self, x: &[f64]) -> usize {
        let mut probs = vec![0.0; self.classes];
        self.probabilities(x, &mut probs);
        argmax(&probs)
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Standardizes each column with the given stats; constant columns become 0.
fn standardize(x: &mut [f64], features: usize, stats: &[(f64, f64)]) {
    for row in x.chunks_exact_mut(features) {
        for (v, &(m, s)) in row.iter_mut().zip(stats) {
            *v = if s > 1e-12 { (*v - m) / s } else { 0.0 };
        }
    }
}

fn column_stats(x: &[f64], features: usize) -> Vec<(f64, f64)> {
    (0..features)
        .map(|f| mean_std(x.iter().skip(f).step_by(features).copied()))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BetaVaeReport {
    pub score: f64,
    pub train_points: usize,
    pub test_points: usize,
    pub pairs_per_point: usize,
    /// Features were constant, so the score was set to chance.
    pub degenerate: bool,
    /// `confusion[true][predicted]` on the test points.
    pub confusion: Vec<Vec<usize>>,
}

fn betavae_points(rep: &Representation, rng: &mut Rng, count: usize, l: usize) -> Result<(Vec<f64>, Vec<usize>)> {
    let spec = rep.spec();
    let m = spec.num_factors();
    let d = rep.dim();
    let mut x = Vec::with_capacity(count * d);
    let mut y = Vec::with_capacity(count);
    for _ in 0..count {
        let k = rng.gen_range(0..m);
        let mut feat = vec![0.0; d];
        for (a, b) in sample_pair_fixed_factor(spec, rng, k, l)? {
            let (za, zb) = (rep.code(spec.flat_index(&a)), rep.code(spec.flat_index(&b)));
            for (f, (u, v)) in feat.iter_mut().zip(za.iter().zip(zb)) {
                *f += (u - v).abs() / l as f64;
            }
        }
        x.extend(feat);
        y.push(k);
    }
    Ok((x, y))
}

pub fn betavae_score(
    rep: &Representation,
    rng: &mut Rng,
    train_points: usize,
    test_points: usize,
    pairs: usize,
) -> Result<BetaVaeReport> {
    if train_points == 0 || test_points == 0 || pairs == 0 {
        return Err(Error::Contract("betavae_score needs positive sample sizes".into()));
    }
    let m = rep.spec().num_factors();
    let d = rep.dim();
    let (mut xtr, ytr) = betavae_points(rep, rng, train_points, pairs)?;
    let (mut xte, yte) = betavae_points(rep, rng, test_points, pairs)?;
    let stats = column_stats(&xtr, d);
    let mut confusion = vec![vec![0; m]; m];
    if stats.iter().all(|&(_, s)| s <= 1e-12) {
        return Ok(BetaVaeReport {
            score: 1.0 / m as f64,
            train_points,
            test_points,
            pairs_per_point: pairs,
            degenerate: true,
            confusion,
        });
    }
    standardize(&mut xtr, d, &stats);
    standardize(&mut xte, d, &stats);
    let clf = Softmax::fit(&xtr, d, &ytr, m, 500, 0.5, 0.0);
    let mut correct = 0;
    for (row, &y) in xte.chunks_exact(d).zip(&yte) {
        let p = clf.predict(row);
        confusion[y][p] += 1;
        correct += usize::from(p == y);
    }
    Ok(BetaVaeReport {
        score: correct as f64 / test_points as f64,
        train_points,
        test_points,
        pairs_per_point: pairs,
        degenerate: false,
        confusion,
    })
}

pub const COLLAPSE_STD: f64 = 0.05;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FactorVaeReport {
    pub score: f64,
    pub train_votes: usize,
    pub test_votes: usize,
    pub batch: usize,
    pub active_dims: Vec<usize>,
    /// `votes[dim][factor]` from the training votes.
    pub votes: Vec<Vec<usize>>,
    pub dim_to_factor: Vec<Option<usize>>,
}

fn factorvae_vote(rep: &Representation, rng: &mut Rng, batch: usize, stds: &[f64], active: &[usize]) -> (usize, usize) {
    let spec = rep.spec();
    let k = rng.gen_range(0..spec.num_factors());
    let value = rng.gen_range(0..spec.factors[k].cardinality);
    let d = rep.dim();
    let mut sum = vec![0.0; d];
    let mut sq = vec![0.0; d];
    for _ in 0..batch {
        let mut idx = sample_index(spec, rng);
        idx.values[k] = value;
        for (j, &z) in rep.code(spec.flat_index(&idx)).iter().enumerate() {
            let z = z / stds[j].max(1e-12);
            sum[j] += z;
            sq[j] += z * z;
        }
    }
    let b = batch as f64;
    let var = |j: usize| sq[j] / b - (sum[j] / b).powi(2);
    let mut best = active[0];
    for &j in active {
        if var(j) < var(best) {
            best = j;
        }
    }
    (best, k)
}

pub fn factorvae_score(
    rep: &Representation,
    rng: &mut Rng,
    train_votes: usize,
    test_votes: usize,
    batch: usize,
) -> Result<FactorVaeReport> {
    if train_votes == 0 || test_votes == 0 || batch < 2 {
        return Err(Error::Contract("factorvae_score needs positive votes and batch >= 2".into()));
    }
    let d = rep.dim();
    let m = rep.spec().num_factors();
    let stds: Vec<f64> = (0..d).map(|j| mean_std(rep.column(j).into_iter()).1).collect();
    let active: Vec<usize> = (0..d).filter(|&j| stds[j] >= COLLAPSE_STD).collect();
    if active.is_empty() {
        let max = stds.iter().copied().fold(0.0, f64::max);
        return Err(Error::Collapsed(max));
    }
    let mut votes = vec![vec![0usize; m]; d];
    for _ in 0..train_votes {
        let (j, k) = factorvae_vote(rep, rng, batch, &stds, &active);
        votes[j][k] += 1;
    }
    let dim_to_factor: Vec<Option<usize>> = votes
        .iter()
        .map(|row| {
            let total: usize = row.iter().sum();
            (total > 0).then(|| {
                let mut best = 0;
                for (k, &c) in row.iter().enumerate() {
                    if c > row[best] {
                        best = k;
                    }
                }
                best
            })
        })
        .collect();
    let mut correct = 0;
    for _ in 0..test_votes {
        let (j, k) = factorvae_vote(rep, rng, batch, &stds, &active);
        correct += usize::from(dim_to_factor[j] == Some(k));
    }
    Ok(FactorVaeReport {
        score: correct as f64 / test_votes as f64,
        train_votes,
        test_votes,
        batch,
        active_dims: active,
        votes,
        dim_to_factor,
    })
}

/// Equal-mass bin of every value. Ties share the bin of their first rank,
/// so a code that takes few distinct values keeps them apart.
pub fn equal_mass_bins(values: &[f64], bins: usize) -> Vec<usize> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut out = vec![0; n];
    let mut first = 0;
    for r in 0..n {
        if r > 0 && values[order[r]] != values[order[r - 1]] {
            first = r;
        }
        out[order[r]] = first * bins / n;
    }
    out
}

/// Mutual information (nats) of two discrete variables from their
/// empirical joint.
pub fn discrete_mi(a: &[usize], b: &[usize]) -> f64 {
    let n = a.len() as f64;
    let (na, nb) = (a.iter().max().map_or(0, |m| m + 1), b.iter().max().map_or(0, |m| m + 1));
    let mut joint = vec![0usize; na * nb];
    for (&x, &y) in a.iter().zip(b) {
        joint[x * nb + y] += 1;
    }
    let pa: Vec<f64> = (0..na).map(|x| joint[x * nb..(x + 1) * nb].iter().sum::<usize>() as f64 / n).collect();
    let pb: Vec<f64> = (0..nb)
        .map(|y| (0..na).map(|x| joint[x * nb + y]).sum::<usize>() as f64 / n)
        .collect();
    let mut mi = 0.0;
    for x in 0..na {
        for y in 0..nb {
            let c = joint[x * nb + y];
            if c > 0 {
                let p = c as f64 / n;
                mi += p * (p / (pa[x] * pb[y])).ln();
            }
        }
    }
    mi.max(0.0)
}

pub fn discrete_entropy(a: &[usize]) -> f64 {
    discrete_mi(a, a)
}

/// `mi[j][k]` = MI between binned latent `j` and factor `k`, in nats.
pub fn discrete_mutual_information(rep: &Representation, bins: usize) -> Result<Vec<Vec<f64>>> {
    if bins < 2 {
        return Err(Error::Contract("need at least 2 bins".into()));
    }
    let labels: Vec<Vec<usize>> = (0..rep.spec().num_factors()).map(|k| rep.labels(k)).collect();
    Ok((0..rep.dim())
        .map(|j| {
            let binned = equal_mass_bins(&rep.column(j), bins);
            labels.iter().map(|v| discrete_mi(&binned, v)).collect()
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MigReport {
    pub score: f64,
    pub bins: usize,
    pub mi: Vec<Vec<f64>>,
    pub factor_entropy: Vec<f64>,
    pub gaps: Vec<f64>,
}

pub fn mig(rep: &Representation, bins: usize) -> Result<MigReport> {
    let mi = discrete_mutual_information(rep, bins)?;
    let m = rep.spec().num_factors();
    let factor_entropy: Vec<f64> = (0..m).map(|k| discrete_entropy(&rep.labels(k))).collect();
    let mut gaps = Vec::with_capacity(m);
    for (k, &h) in factor_entropy.iter().enumerate() {
        if h <= 0.0 {
            return Err(Error::Contract(format!("factor {k} has zero entropy")));
        }
        let mut col: Vec<f64> = mi.iter().map(|row| row[k]).collect();
        col.sort_by(|a, b| b.total_cmp(a));
        let second = col.get(1).copied().unwrap_or(0.0);
        gaps.push(((col[0] - second) / h).clamp(0.0, 1.0));
    }
    let score = gaps.iter().sum::<f64>() / m as f64;
    Ok(MigReport {
        score,
        bins,
        mi,
        factor_entropy,
        gaps,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DciReport {
    pub score: f64,
    /// `importance[j][k]`: mean absolute weight of latent `j` for factor `k`.
    pub importance: Vec<Vec<f64>>,
    pub per_dim: Vec<Option<f64>>,
    pub lambda: f64,
    pub steps: usize,
    pub lr: f64,
}

pub fn dci_disentanglement(rep: &Representation, lambda: f64, steps: usize, lr: f64) -> Result<DciReport> {
    let d = rep.dim();
    let m = rep.spec().num_factors();
    let mut x: Vec<f64> = rep.codes.clone();
    let stats = column_stats(&x, d);
    if stats.iter().all(|&(_, s)| s <= 1e-12) {
        return Err(Error::Contract("dci needs at least one non-constant latent".into()));
    }
    standardize(&mut x, d, &stats);
    let mut importance = vec![vec![0.0; m]; d];
    for k in 0..m {
        let classes = rep.spec().factors[k].cardinality;
        let clf = Softmax::fit(&x, d, &rep.labels(k), classes, steps, lr, lambda);
        for (j, row) in importance.iter_mut().enumerate() {
            let w = &clf.weights[j * classes..(j + 1) * classes];
            row[k] = w.iter().map(|v| v.abs()).sum::<f64>() / classes as f64;
        }
    }
    let total: f64 = importance.iter().flatten().sum();
    let per_dim: Vec<Option<f64>> = importance
        .iter()
        .map(|row| {
            let s: f64 = row.iter().sum();
            (s > 0.0).then(|| {
                if m < 2 {
                    return 1.0;
                }
                let h: f64 = row
                    .iter()
                    .map(|&r| r / s)
                    .filter(|&p| p > 0.0)
                    .map(|p| -p * p.ln())
                    .sum();
                1.0 - h / (m as f64).ln()
            })
        })
        .collect();
    let score = if total > 0.0 {
        importance
            .iter()
            .zip(&per_dim)
            .filter_map(|(row, dj)| dj.map(|dj| row.iter().sum::<f64>() / total * dj))
            .sum::<f64>()
            .clamp(0.0, 1.0)
    } else {
        0.0
    };
    Ok(DciReport {
        score,
        importance,
        per_dim,
        lambda,
        steps,
        lr,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub betavae: BetaVaeReport,
    /// `None` when every latent dim collapsed below the std threshold.
    pub factorvae: Option<FactorVaeReport>,
    pub mig: MigReport,
    pub dci: DciReport,
    pub config: MetricConfig,
}

impl MetricReport {
    /// `(name, score)` for the four metrics; a collapsed FactorVAE counts as 0.
    pub fn scores(&self) -> [(&'static str, f64); 4] {
        [
            ("betavae", self.betavae.score),
            ("factorvae", self.factorvae.as_ref().map_or(0.0, |f| f.score)),
            ("mig", self.mig.score),
            ("dci", self.dci.score),
        ]
    }
}

/// All four metrics with independent seeded streams, so changing one
/// metric's sample size leaves the others untouched.
pub fn evaluate(rep: &Representation, cfg: &MetricConfig) -> Result<MetricReport> {
    let betavae = betavae_score(
        rep,
        &mut seeded_rng(cfg.seed.wrapping_mul(4).wrapping_add(1)),
        cfg.betavae_train,
        cfg.betavae_test,
        cfg.betavae_pairs,
    )?;
    let factorvae = match factorvae_score(
        rep,
        &mut seeded_rng(cfg.seed.wrapping_mul(4).wrapping_add(2)),
        cfg.factorvae_train,
        cfg.factorvae_test,
        cfg.factorvae_batch,
    ) {
        Ok(r) => Some(r),
        Err(Error::Collapsed(_)) => None,
        Err(e) => return Err(e),
    };
    let mig = mig(rep, cfg.mig_bins)?;
    let dci = match dci_disentanglement(rep, cfg.dci_lambda, cfg.dci_steps, cfg.dci_lr) {
        Ok(r) => r,
        Err(Error::Contract(_)) => DciReport {
            score: 0.0,
            importance: vec![vec![0.0; rep.spec().num_factors()]; rep.dim()],
            per_dim: vec![None; rep.dim()],
            lambda: cfg.dci_lambda,
            steps: cfg.dci_steps,
            lr: cfg.dci_lr,
        },
        Err(e) => return Err(e),
    };
    Ok(MetricReport {
        betavae,
        factorvae,
        mig,
        dci,
        config: cfg.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> FactorSpec {
        FactorSpec::default()
    }

    #[test]
    fn label_representation_layout() {
        let rep = Representation::from_labels(&spec(), 1);
        assert_eq!(rep.dim(), 5);
        assert_eq!(rep.len(), 1152);
        let idx = spec().unflatten(777);
        assert_eq!(rep.code(777)[2], idx.values[2] as f64 / 7.0);
        assert_eq!(rep.code(777)[4], 0.0);
        assert!(Representation::new(spec(), 2, vec![0.0; 3]).is_err());
        assert!(Representation::new(spec(), 1, vec![f64::NAN; 1152]).is_err());
    }

    #[test]
    fn equal_mass_bins_keep_ties_together() {
        let v = [3.0, 1.0, 1.0, 2.0, 2.0, 2.0];
        let b = equal_mass_bins(&v, 3);
        assert_eq!(b[1], b[2]);
        assert_eq!(b[3], b[4]);
        assert_ne!(b[0], b[3]);
        assert_eq!(equal_mass_bins(&[1.0, 2.0, 3.0, 4.0], 2), vec![0, 0, 1, 1]);
    }

    #[test]
    fn mi_of_identity_is_entropy() {
        let v: Vec<usize> = (0..40).map(|i| i % 4).collect();
        assert!((discrete_mi(&v, &v) - 4f64.ln()).abs() < 1e-12);
        let c = vec![0; 40];
        assert_eq!(discrete_mi(&c, &v), 0.0);
    }

    #[test]
    fn perfect_representation_scores_one() {
        let rep = Representation::from_labels(&spec(), 1);
        let r = evaluate(&rep, &MetricConfig::default()).unwrap();
        for (name, s) in r.scores() {
            assert!(s >= 0.98, "{name} = {s}");
        }
    }

    #[test]
    fn constant_codes_are_flagged() {
        let rep = Representation::new(spec(), 2, vec![1.0; 2304]).unwrap();
        let b = betavae_score(&rep, &mut seeded_rng(0), 20, 10, 2).unwrap();
        assert!(b.degenerate);
        assert_eq!(b.score, 0.25);
        assert!(matches!(
            factorvae_score(&rep, &mut seeded_rng(0), 10, 10, 8),
            Err(Error::Collapsed(_))
        ));
        assert_eq!(mig(&rep, 20).unwrap().score, 0.0);
        assert!(dci_disentanglement(&rep, 0.01, 10, 0.1).is_err());
    }

    #[test]
    fn sample_sizes_are_validated() {
        let rep = Representation::from_labels(&spec(), 0);
        assert!(betavae_score(&rep, &mut seeded_rng(0), 0, 1, 1).is_err());
        assert!(factorvae_score(&rep, &mut seeded_rng(0), 1, 1, 1).is_err());
        assert!(mig(&rep, 1).is_err());
    }
}
