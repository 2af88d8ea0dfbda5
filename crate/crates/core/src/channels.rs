//! Per-component description channels `U_i = f_i(X_i, ε_i)`.
//!
//! Three families are provided: soft encoders that embed each outcome as a
//! diagonal Gaussian in latent space, hard channels that partition outcomes,
//! and binary symmetric channels. All three implement [`Channel`], which is
//! what the Monte Carlo estimator consumes.

use std::f64::consts::LN_2;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::systems::JointTable;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Evaluation sample count.
pub const DEFAULT_EVAL_SAMPLES: usize = 200_000;

/// A Monte Carlo estimate and its standard error, in bits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub se: f64,
}

impl Estimate {
    pub fn exact(value: f64) -> Self {
        Estimate { value, se: 0.0 }
    }

    /// Mean and standard error of the mean of `samples`.
    pub fn from_samples(samples: &[f64]) -> Self {
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let var = if samples.len() > 1 {
            samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        Estimate {
            value: mean,
            se: (var / n).sqrt(),
        }
    }

    /// `Σ w_k e_k` with standard errors combined in quadrature.
    pub fn weighted_sum<'a>(terms: impl IntoIterator<Item = (f64, &'a Estimate)>) -> Self {
        let (value, var) = terms
            .into_iter()
            .fold((0.0, 0.0), |(v, s), (w, e)| (v + w * e.value, s + (w * e.se).powi(2)));
        Estimate {
            value,
            se: var.sqrt(),
        }
    }

    /// Whether `target` lies within `k` standard errors (plus `slack`).
    pub fn within(&self, target: f64, k: f64, slack: f64) -> bool {
        (self.value - target).abs() <= k * self.se + slack
    }
}

/// Anything that can draw `u ~ p(u|x)` and score it under every outcome.
pub trait Channel: Sync {
    fn alphabet_size(&self) -> usize;

    /// Draws `u ~ p(u|x)` and writes `ln p(u|x')` for every outcome `x'` into `out`.
    fn sample_log_likelihoods(&self, x: usize, rng: &mut dyn rand::RngCore, out: &mut [f64]);
}

// ---------------------------------------------------------------------------
// Soft encoders

/// Gaussian embedding of each outcome of one component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftEncoder {
    pub component: usize,
    /// `m × d` latent means.
    pub mu: Array2<f64>,
    /// `m × d` log standard deviations.
    pub log_sigma: Array2<f64>,
}

impl SoftEncoder {
    /// `μ ~ N(0, 0.1)`, `log σ = 0`.
    pub fn random<R: Rng + ?Sized>(component: usize, outcomes: usize, dim: usize, rng: &mut R) -> Self {
        let normal = Normal::new(0.0, 0.1).unwrap();
        let mu = Array2::from_shape_simple_fn((outcomes, dim), || normal.sample(rng));
        SoftEncoder {
            component,
            mu,
            log_sigma: Array2::zeros((outcomes, dim)),
        }
    }

    pub fn from_parts(component: usize, mu: Array2<f64>, log_sigma: Array2<f64>) -> Result<Self> {
        if mu.dim() != log_sigma.dim() {
            return Err(Error::Shape(format!(
                "mu is {:?} but log_sigma is {:?}",
                mu.dim(),
                log_sigma.dim()
            )));
        }
        if mu.nrows() == 0 || mu.ncols() == 0 {
            return Err(Error::Shape("encoder needs at least one outcome and dimension".into()));
        }
        let enc = SoftEncoder {
            component,
            mu,
            log_sigma,
        };
        enc.check_finite()?;
        Ok(enc)
    }

    pub fn n_outcomes(&self) -> usize {
        self.mu.nrows()
    }

    pub fn dim(&self) -> usize {
        self.mu.ncols()
    }

    pub fn check_finite(&self) -> Result<()> {
        if self.mu.iter().chain(self.log_sigma.iter()).all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite(format!(
                "encoder parameters of component {}",
                self.component
            )))
        }
    }

    fn check_outcome(&self, x: usize) -> Result<()> {
        if x < self.n_outcomes() {
            Ok(())
        } else {
            Err(Error::OutcomeOutOfRange {
                outcome: x,
                size: self.n_outcomes(),
            })
        }
    }

    /// Reparameterized draw `u = μ(x) + σ(x) ⊙ ε`.
    pub fn latent_from_noise(&self, x: usize, eps: ArrayView1<f64>) -> Result<Array1<f64>> {
        self.check_outcome(x)?;
        if eps.len() != self.dim() {
            return Err(Error::Shape(format!(
                "noise has {} entries, latent space has {}",
                eps.len(),
                self.dim()
            )));
        }
        let mu = self.mu.row(x);
        let ls = self.log_sigma.row(x);
        Ok(Array1::from_shape_fn(self.dim(), |d| mu[d] + ls[d].exp() * eps[d]))
    }

    /// Batch of reparameterized latents, one row per `(outcome, noise row)`.
    pub fn latents(&self, outcomes: &[u32], eps: ArrayView2<f64>) -> Result<Array2<f64>> {
        if eps.dim() != (outcomes.len(), self.dim()) {
            return Err(Error::Shape(format!(
                "noise is {:?}, expected {:?}",
                eps.dim(),
                (outcomes.len(), self.dim())
            )));
        }
        if let Some(&x) = outcomes.iter().find(|&&x| x as usize >= self.n_outcomes()) {
            return Err(Error::OutcomeOutOfRange {
                outcome: x as usize,
                size: self.n_outcomes(),
            });
        }
        let sigma = self.log_sigma.mapv(f64::exp);
        Ok(Array2::from_shape_fn(eps.dim(), |(a, d)| {
            let x = outcomes[a] as usize;
            self.mu[[x, d]] + sigma[[x, d]] * eps[[a, d]]
        }))
    }

    /// Pulls gradients on a batch of latents back to `(μ, log σ)`.
    pub fn latent_backward(
        &self,
        outcomes: &[u32],
        eps: ArrayView2<f64>,
        grad_latents: ArrayView2<f64>,
    ) -> (Array2<f64>, Array2<f64>) {
        let mut g_mu = Array2::zeros(self.mu.dim());
        let mut g_ls = Array2::zeros(self.mu.dim());
        for (a, &x) in outcomes.iter().enumerate() {
            let x = x as usize;
            for d in 0..self.dim() {
                let g = grad_latents[[a, d]];
                g_mu[[x, d]] += g;
                g_ls[[x, d]] += g * self.log_sigma[[x, d]].exp() * eps[[a, d]];
            }
        }
        (g_mu, g_ls)
    }

    pub fn sample<R: Rng + ?Sized>(&self, x: usize, rng: &mut R) -> Result<Array1<f64>> {
        let eps = Array1::from_shape_simple_fn(self.dim(), || rng.sample::<f64, _>(StandardNormal));
        self.latent_from_noise(x, eps.view())
    }

    #[inline]
    fn log_density_unchecked(&self, u: &[f64], x: usize) -> f64 {
        let mu = self.mu.row(x);
        let ls = self.log_sigma.row(x);
        let mut acc = 0.0;
        for d in 0..u.len() {
            let z = (u[d] - mu[d]) * (-ls[d]).exp();
            acc += -0.5 * z * z - ls[d] - HALF_LN_2PI;
        }
        acc
    }

    /// `ln p(u|x)` under the diagonal Gaussian of outcome `x`.
    pub fn log_conditional(&self, u: ArrayView1<f64>, x: usize) -> Result<f64> {
        self.check_outcome(x)?;
        self.check_finite()?;
        if u.len() != self.dim() {
            return Err(Error::Shape(format!(
                "latent point has {} entries, expected {}",
                u.len(),
                self.dim()
            )));
        }
        Ok(self.log_density_unchecked(&u.to_vec(), x))
    }

    /// `ln p(u) = ln Σ_x p(x) p(u|x)`, the mixture over outcomes weighted by
    /// the source marginal.
    pub fn log_marginal(&self, u: ArrayView1<f64>, marginal: &[f64]) -> Result<f64> {
        if marginal.len() != self.n_outcomes() {
            return Err(Error::Shape(format!(
                "marginal has {} entries for {} outcomes",
                marginal.len(),
                self.n_outcomes()
            )));
        }
        let terms = marginal
            .iter()
            .enumerate()
            .filter(|(_, &p)| p > 0.0)
            .map(|(x, &p)| Ok(p.ln() + self.log_conditional(u, x)?))
            .collect::<Result<Vec<f64>>>()?;
        Ok(log_sum_exp(&terms))
    }

    /// Bhattacharyya coefficient between the embeddings of two outcomes.
    pub fn bhattacharyya(&self, a: usize, b: usize) -> Result<f64> {
        self.check_outcome(a)?;
        self.check_outcome(b)?;
        Ok(bhattacharyya_gaussians(
            self.mu.row(a),
            self.log_sigma.row(a),
            self.mu.row(b),
            self.log_sigma.row(b),
        ))
    }
}

impl Channel for SoftEncoder {
    fn alphabet_size(&self) -> usize {
        self.n_outcomes()
    }

    fn sample_log_likelihoods(&self, x: usize, rng: &mut dyn rand::RngCore, out: &mut [f64]) {
        let mu = self.mu.row(x);
        let ls = self.log_sigma.row(x);
        let u: Vec<f64> = (0..self.dim())
            .map(|d| mu[d] + ls[d].exp() * rng.sample::<f64, _>(StandardNormal))
            .collect();
        for (xp, o) in out.iter_mut().enumerate() {
            *o = self.log_density_unchecked(&u, xp);
        }
    }
}

/// Bhattacharyya coefficient of two diagonal Gaussians.
pub fn bhattacharyya_gaussians(
    mu_a: ArrayView1<f64>,
    ls_a: ArrayView1<f64>,
    mu_b: ArrayView1<f64>,
    ls_b: ArrayView1<f64>,
) -> f64 {
    let mut distance = 0.0;
    for d in 0..mu_a.len() {
        let va = (2.0 * ls_a[d]).exp();
        let vb = (2.0 * ls_b[d]).exp();
        let s = 0.5 * (va + vb);
        let delta = mu_a[d] - mu_b[d];
        distance += delta * delta / (8.0 * s) + 0.5 * (s.ln() - ls_a[d] - ls_b[d]);
    }
    (-distance).exp().clamp(0.0, 1.0)
}

/// `ln Σ exp(v)`, safe against overflow; `-inf` for an empty or all `-inf` input.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

// ---------------------------------------------------------------------------
// Hard and binary symmetric channels

/// Deterministic partition of the outcomes of one component.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<u32>", into = "Vec<u32>")]
pub struct HardChannel {
    labels: Vec<u32>,
    n_labels: usize,
}

impl TryFrom<Vec<u32>> for HardChannel {
    type Error = Error;

    fn try_from(labels: Vec<u32>) -> Result<Self> {
        HardChannel::from_labels(labels)
    }
}

impl From<HardChannel> for Vec<u32> {
    fn from(c: HardChannel) -> Self {
        c.labels
    }
}

impl HardChannel {
    /// Validates that labels are contiguous from 0 with every label used.
    pub fn from_labels(labels: Vec<u32>) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::ChannelMismatch("hard channel with no outcomes".into()));
        }
        let n_labels = *labels.iter().max().unwrap() as usize + 1;
        let mut used = vec![false; n_labels];
        for &l in &labels {
            used[l as usize] = true;
        }
        if let Some(l) = used.iter().position(|&u| !u) {
            return Err(Error::ChannelMismatch(format!(
                "labels {labels:?} skip cluster {l}"
            )));
        }
        Ok(HardChannel { labels, n_labels })
    }

    /// Relabels an arbitrary cluster assignment in order of first appearance.
    pub fn canonical(assignment: &[usize]) -> Result<Self> {
        let mut map = std::collections::HashMap::new();
        let labels = assignment
            .iter()
            .map(|a| {
                let next = map.len() as u32;
                *map.entry(*a).or_insert(next)
            })
            .collect();
        Self::from_labels(labels)
    }

    pub fn identity(m: usize) -> Self {
        HardChannel {
            labels: (0..m as u32).collect(),
            n_labels: m,
        }
    }

    pub fn constant(m: usize) -> Self {
        HardChannel {
            labels: vec![0; m],
            n_labels: 1,
        }
    }

    pub fn n_inputs(&self) -> usize {
        self.labels.len()
    }

    pub fn n_labels(&self) -> usize {
        self.n_labels
    }

    pub fn label(&self, x: usize) -> u32 {
        self.labels[x]
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn to_matrix(&self) -> ChannelMatrix {
        let mut rows = vec![vec![0.0; self.n_labels]; self.labels.len()];
        for (x, &l) in self.labels.iter().enumerate() {
            rows[x][l as usize] = 1.0;
        }
        ChannelMatrix { rows }
    }

    /// Exact `I(X_i; U_i) = H(U_i)` for input marginal `p`.
    pub fn exact_mi(&self, marginal: &[f64]) -> f64 {
        let mut q = vec![0.0; self.n_labels];
        for (x, &p) in marginal.iter().enumerate() {
            q[self.labels[x] as usize] += p;
        }
        q.iter().filter(|&&p| p > 0.0).map(|&p| -p * p.log2()).sum::<f64>().max(0.0)
    }
}

impl Channel for HardChannel {
    fn alphabet_size(&self) -> usize {
        self.labels.len()
    }

    fn sample_log_likelihoods(&self, x: usize, _rng: &mut dyn rand::RngCore, out: &mut [f64]) {
        let u = self.labels[x];
        for (l, o) in self.labels.iter().zip(out.iter_mut()) {
            *o = if *l == u { 0.0 } else { f64::NEG_INFINITY };
        }
    }
}

/// Binary symmetric channel flipping its input with probability `flip`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BscChannel {
    flip: f64,
}

impl BscChannel {
    pub fn new(flip: f64) -> Result<Self> {
        if !(0.0..=0.5).contains(&flip) {
            return Err(Error::ChannelMismatch(format!(
                "flip probability {flip} outside [0, 0.5]"
            )));
        }
        Ok(BscChannel { flip })
    }

    pub fn flip(&self) -> f64 {
        self.flip
    }
}

impl Channel for BscChannel {
    fn alphabet_size(&self) -> usize {
        2
    }

    fn sample_log_likelihoods(&self, x: usize, rng: &mut dyn rand::RngCore, out: &mut [f64]) {
        let u = if rng.random::<f64>() < self.flip { 1 - x } else { x };
        out[u] = (1.0 - self.flip).ln();
        out[1 - u] = self.flip.ln();
    }
}

/// Binary entropy in bits.
pub fn binary_entropy(p: f64) -> f64 {
    [p, 1.0 - p]
        .iter()
        .filter(|&&q| q > 0.0)
        .map(|&q| -q * q.log2())
        .sum()
}

/// Exact `I(X; U) = H(U) − H_b(e)` for a binary input with marginal `marginal`.
pub fn bsc_exact_mi(channel: &BscChannel, marginal: &[f64]) -> Result<f64> {
    if marginal.len() != 2 {
        return Err(Error::ChannelMismatch(format!(
            "binary symmetric channel needs a binary input, got {} outcomes",
            marginal.len()
        )));
    }
    let e = channel.flip;
    let p1 = marginal[1] * (1.0 - e) + marginal[0] * e;
    Ok((binary_entropy(p1) - binary_entropy(e)).max(0.0))
}

/// Row-stochastic matrix `p(u|x)` for exact pushforward computations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelMatrix {
    rows: Vec<Vec<f64>>,
}

impl ChannelMatrix {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let k = rows.first().map_or(0, |r| r.len());
        if rows.is_empty() || k == 0 {
            return Err(Error::ChannelMismatch("empty channel matrix".into()));
        }
        for (x, r) in rows.iter().enumerate() {
            if r.len() != k {
                return Err(Error::ChannelMismatch(format!("row {x} has the wrong length")));
            }
            let s: f64 = r.iter().sum();
            if r.iter().any(|&p| !(p >= 0.0)) || (s - 1.0).abs() > 1e-12 {
                return Err(Error::ChannelMismatch(format!("row {x} is not a distribution")));
            }
        }
        Ok(ChannelMatrix { rows })
    }

    pub fn bsc(flip: f64) -> Result<Self> {
        let e = BscChannel::new(flip)?.flip;
        Ok(ChannelMatrix {
            rows: vec![vec![1.0 - e, e], vec![e, 1.0 - e]],
        })
    }

    pub fn n_inputs(&self) -> usize {
        self.rows.len()
    }

    pub fn n_outputs(&self) -> usize {
        self.rows[0].len()
    }

    pub fn row(&self, x: usize) -> &[f64] {
        &self.rows[x]
    }

    /// `H(U|X)` in bits for input marginal `marginal`.
    pub fn conditional_entropy(&self, marginal: &[f64]) -> f64 {
        self.rows
            .iter()
            .zip(marginal)
            .map(|(r, &p)| {
                p * r
                    .iter()
                    .filter(|&&q| q > 0.0)
                    .map(|&q| -q * q.log2())
                    .sum::<f64>()
            })
            .sum()
    }
}

// ---------------------------------------------------------------------------
// Monte Carlo mutual information

const SHARD: usize = 4096;

/// Monte Carlo estimate of `I(X_A; U_A) = E[ln p(u_A|x_A) − ln p(u_A)]` in bits.
///
/// `channels[k]` describes component `subset[k]`. The marginal `p(u_A)` is the
/// exact mixture over the support of `X_A`. Samples are drawn in fixed-size
/// shards with independent RNG streams, so results do not depend on the
/// number of threads.
pub fn mc_mutual_information<R: Rng + ?Sized>(
    channels: &[&dyn Channel],
    table: &JointTable,
    subset: &[usize],
    n_samples: usize,
    rng: &mut R,
) -> Result<Estimate> {
    table.check_subset(subset)?;
    if channels.len() != subset.len() {
        return Err(Error::ChannelMismatch(format!(
            "{} channels for a term over {} components",
            channels.len(),
            subset.len()
        )));
    }
    let mut by_component: Vec<Option<&dyn Channel>> = vec![None; table.n_components()];
    for (c, &i) in channels.iter().zip(subset) {
        by_component[i] = Some(*c);
    }
    let mut out = mc_terms(&by_component, table, &[subset.to_vec()], n_samples, rng)?;
    Ok(out.pop().unwrap())
}

/// [`mc_mutual_information`] for several terms evaluated on one shared set of
/// samples. `channels[i]` describes component `i`.
pub fn mc_mutual_information_terms<R: Rng + ?Sized>(
    channels: &[&dyn Channel],
    table: &JointTable,
    terms: &[Vec<usize>],
    n_samples: usize,
    rng: &mut R,
) -> Result<Vec<Estimate>> {
    if channels.len() != table.n_components() {
        return Err(Error::ChannelMismatch(format!(
            "{} channels for {} components",
            channels.len(),
            table.n_components()
        )));
    }
    let by_component: Vec<Option<&dyn Channel>> = channels.iter().map(|&c| Some(c)).collect();
    mc_terms(&by_component, table, terms, n_samples, rng)
}

struct TermSupport {
    subset: Vec<usize>,
    xs: Vec<u32>,
    log_p: Vec<f64>,
}

fn mc_terms<R: Rng + ?Sized>(
    channels: &[Option<&dyn Channel>],
    table: &JointTable,
    terms: &[Vec<usize>],
    n_samples: usize,
    rng: &mut R,
) -> Result<Vec<Estimate>> {
    if n_samples < 2 {
        return Err(Error::InvalidConfig(format!(
            "Monte Carlo needs at least 2 samples, got {n_samples}"
        )));
    }
    let sizes = table.alphabet_sizes();
    let mut used = vec![false; sizes.len()];
    for t in terms {
        table.check_subset(t)?;
        for &i in t {
            let c = channels[i].ok_or_else(|| {
                Error::ChannelMismatch(format!("no channel for component {i}"))
            })?;
            if c.alphabet_size() != sizes[i] {
                return Err(Error::ChannelMismatch(format!(
                    "channel for component {i} accepts {} outcomes, component has {}",
                    c.alphabet_size(),
                    sizes[i]
                )));
            }
            used[i] = true;
        }
    }
    let supports: Vec<TermSupport> = terms
        .iter()
        .map(|t| {
            let support = table.marginal_support(t);
            TermSupport {
                subset: t.clone(),
                xs: support.iter().flat_map(|(x, _)| x.iter().copied()).collect(),
                log_p: support.iter().map(|(_, p)| p.ln()).collect(),
            }
        })
        .collect();
    let offsets: Vec<usize> = sizes
        .iter()
        .scan(0, |acc, &m| {
            let o = *acc;
            *acc += m;
            Some(o)
        })
        .collect();
    let width: usize = sizes.iter().sum();
    let sampler = table.sampler();
    let base: u64 = rng.random();
    let shards = n_samples.div_ceil(SHARD);
    let values: Vec<Vec<Vec<f64>>> = (0..shards)
        .into_par_iter()
        .map(|s| {
            let mut srng = ChaCha8Rng::seed_from_u64(base);
            srng.set_stream(s as u64);
            let count = SHARD.min(n_samples - s * SHARD);
            let mut ll = vec![0.0; width];
            let mut mix = Vec::new();
            let mut out = vec![Vec::with_capacity(count); terms.len()];
            for _ in 0..count {
                let row = sampler.sample(&mut srng);
                let x = table.outcome(row);
                for (i, c) in channels.iter().enumerate() {
                    if used[i] {
                        let seg = &mut ll[offsets[i]..offsets[i] + sizes[i]];
                        c.unwrap().sample_log_likelihoods(x[i] as usize, &mut srng, seg);
                    }
                }
                for (t, sup) in supports.iter().enumerate() {
                    if sup.subset.is_empty() {
                        out[t].push(0.0);
                        continue;
                    }
                    let k = sup.subset.len();
                    let log_cond: f64 = sup.subset.iter().map(|&i| ll[offsets[i] + x[i] as usize]).sum();
                    mix.clear();
                    mix.extend(sup.log_p.iter().enumerate().map(|(r, lp)| {
                        let xs = &sup.xs[r * k..(r + 1) * k];
                        lp + sup
                            .subset
                            .iter()
                            .zip(xs)
                            .map(|(&i, &xi)| ll[offsets[i] + xi as usize])
                            .sum::<f64>()
                    }));
                    out[t].push((log_cond - log_sum_exp(&mix)) / LN_2);
                }
            }
            out
        })
        .collect();
    Ok((0..terms.len())
        .map(|t| {
            if terms[t].is_empty() {
                return Estimate::exact(0.0);
            }
            let flat: Vec<f64> = values.iter().flat_map(|shard| shard[t].iter().copied()).collect();
            Estimate::from_samples(&flat)
        })
        .collect())
}

// ---------------------------------------------------------------------------
// Hardening

/// Step-size and stopping rule for [`harden`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HardenConfig {
    pub step_size: f64,
    pub max_steps: usize,
    /// Every coefficient must end within this distance of 0 or 1.
    pub tolerance: f64,
}

impl Default for HardenConfig {
    fn default() -> Self {
        HardenConfig {
            step_size: 1e-2,
            max_steps: 10_000,
            tolerance: 1e-3,
        }
    }
}

/// A pair of outcomes that ended up in one cluster although their
/// embeddings are distinguishable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergeConflict {
    pub component: usize,
    pub a: usize,
    pub b: usize,
    pub coefficient: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hardened {
    pub channels: Vec<HardChannel>,
    /// The encoders after hardening descent.
    pub encoders: Vec<SoftEncoder>,
    pub steps: Vec<usize>,
    pub conflicts: Vec<MergeConflict>,
}

fn pair_loss(enc: &SoftEncoder) -> f64 {
    let m = enc.n_outcomes();
    let mut loss = 0.0;
    for a in 0..m {
        for b in (a + 1)..m {
            let bc = enc.bhattacharyya(a, b).unwrap();
            loss += bc.min(1.0 - bc);
        }
    }
    loss
}

fn worst_pair(enc: &SoftEncoder) -> Option<(usize, usize, f64, f64)> {
    let m = enc.n_outcomes();
    let mut worst: Option<(usize, usize, f64, f64)> = None;
    for a in 0..m {
        for b in (a + 1)..m {
            let bc = enc.bhattacharyya(a, b).unwrap();
            let gap = bc.min(1.0 - bc);
            if worst.is_none_or(|w| gap > w.3) {
                worst = Some((a, b, bc, gap));
            }
        }
    }
    worst
}

/// Gradient of `Σ_pairs min(BC, 1 − BC)` with respect to `(μ, log σ)`.
fn pair_loss_gradient(enc: &SoftEncoder) -> (Array2<f64>, Array2<f64>) {
    let (m, dim) = enc.mu.dim();
    let mut g_mu = Array2::zeros((m, dim));
    let mut g_ls = Array2::zeros((m, dim));
    for a in 0..m {
        for b in (a + 1)..m {
            let bc = enc.bhattacharyya(a, b).unwrap();
            // d loss / d BD: loss is BC below one half, 1 - BC above.
            let sign = if bc < 0.5 { -bc } else { bc };
            for d in 0..dim {
                let va = (2.0 * enc.log_sigma[[a, d]]).exp();
                let vb = (2.0 * enc.log_sigma[[b, d]]).exp();
                let s = 0.5 * (va + vb);
                let delta = enc.mu[[a, d]] - enc.mu[[b, d]];
                let dmu = delta / (4.0 * s);
                g_mu[[a, d]] += sign * dmu;
                g_mu[[b, d]] -= sign * dmu;
                let common = -delta * delta / (8.0 * s * s);
                g_ls[[a, d]] += sign * (common * va + 0.5 * va / s - 0.5);
                g_ls[[b, d]] += sign * (common * vb + 0.5 * vb / s - 0.5);
            }
        }
    }
    (g_mu, g_ls)
}

fn harden_one(enc: &SoftEncoder, cfg: &HardenConfig) -> Result<(SoftEncoder, usize)> {
    let mut enc = enc.clone();
    let mut step = cfg.step_size;
    let mut loss = pair_loss(&enc);
    for it in 0..=cfg.max_steps {
        match worst_pair(&enc) {
            None => return Ok((enc, it)),
            Some((_, _, _, gap)) if gap <= cfg.tolerance => return Ok((enc, it)),
            Some((a, b, bc, _)) if it == cfg.max_steps => {
                return Err(Error::HardeningStalled {
                    steps: it,
                    component: enc.component,
                    a,
                    b,
                    coefficient: bc,
                })
            }
            Some(_) => {}
        }
        let (g_mu, g_ls) = pair_loss_gradient(&enc);
        // Backtrack until the step reduces the loss; grow again after success.
        loop {
            let trial = SoftEncoder {
                component: enc.component,
                mu: &enc.mu - &(&g_mu * step),
                log_sigma: &enc.log_sigma - &(&g_ls * step),
            };
            let trial_loss = pair_loss(&trial);
            if trial_loss < loss || step < 1e-12 {
                enc = trial;
                loss = trial_loss;
                step = (step * 1.5).min(cfg.step_size * 1e6);
                break;
            }
            step *= 0.5;
        }
    }
    unreachable!("loop returns on its last iteration")
}

/// Drives every pairwise Bhattacharyya coefficient to 0 or 1 by gradient
/// descent on `Σ_pairs min(BC, 1 − BC)`, then clusters outcomes whose
/// embeddings became indistinguishable.
///
/// Clusters are the transitive closure of the `BC ≥ 1/2` relation; pairs
/// merged through the closure despite a small coefficient are reported as
/// conflicts.
pub fn harden(encoders: &[SoftEncoder], cfg: &HardenConfig) -> Result<Hardened> {
    let mut out = Hardened {
        channels: Vec::new(),
        encoders: Vec::new(),
        steps: Vec::new(),
        conflicts: Vec::new(),
    };
    for enc in encoders {
        enc.check_finite()?;
        let (hard, steps) = harden_one(enc, cfg)?;
        let m = hard.n_outcomes();
        let mut parent: Vec<usize> = (0..m).collect();
        fn find(p: &mut [usize], i: usize) -> usize {
            let mut r = i;
            while p[r] != r {
                r = p[r];
            }
            let mut j = i;
            while p[j] != r {
                let next = p[j];
                p[j] = r;
                j = next;
            }
            r
        }
        let mut bcs = vec![vec![1.0; m]; m];
        for a in 0..m {
            for b in (a + 1)..m {
                let bc = hard.bhattacharyya(a, b)?;
                bcs[a][b] = bc;
                bcs[b][a] = bc;
                if bc >= 0.5 {
                    let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
                    parent[ra.max(rb)] = ra.min(rb);
                }
            }
        }
        let roots: Vec<usize> = (0..m).map(|i| find(&mut parent, i)).collect();
        for a in 0..m {
            for b in (a + 1)..m {
                if roots[a] == roots[b] && bcs[a][b] < 0.5 {
                    out.conflicts.push(MergeConflict {
                        component: enc.component,
                        a,
                        b,
                        coefficient: bcs[a][b],
                    });
                }
            }
        }
        out.channels.push(HardChannel::canonical(&roots)?);
        out.encoders.push(hard);
        out.steps.push(steps);
    }
    Ok(out)
}

/// Numerically integrates a 1-d or 2-d density on a square grid; test helper.
#[doc(hidden)]
pub fn grid_integral(dim: usize, half_width: f64, points: usize, f: impl Fn(&[f64]) -> f64) -> f64 {
    let h = 2.0 * half_width / points as f64;
    let coord = |k: usize| -half_width + (k as f64 + 0.5) * h;
    match dim {
        1 => (0..points).map(|i| f(&[coord(i)])).sum::<f64>() * h,
        2 => (0..points)
            .flat_map(|i| (0..points).map(move |j| (i, j)))
            .map(|(i, j)| f(&[coord(i), coord(j)]))
            .sum::<f64>()
            * h
            * h,
        _ => panic!("grid integration supports at most two dimensions"),
    }
}
