//! Differentiable mutual-information surrogates used during training.
//!
//! Single-component terms `I(X_i;U_i)` use a batch likelihood-ratio bound
//! built from the encoder's own densities. Multi-component terms use InfoNCE
//! with a pair of critic networks; terms that are minimized route the negated
//! critic loss back to the encoders.

use std::f64::consts::LN_2;

use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channels::SoftEncoder;
use crate::error::{Error, Result};
use crate::nn::{Mlp, MlpGrads, Optimizer};

/// Output width of both critics.
pub const NCE_DIM: usize = 32;

/// InfoNCE loss of a batch of embedding pairs and its gradients.
#[derive(Debug, Clone)]
pub struct InfoNce {
    /// `−(1/B) Σ_α log softmax_β s(α, β)` at `β = α`, in nats.
    pub loss: f64,
    /// `(ln B − loss) / ln 2`, never above `log2 B`.
    pub bound_bits: f64,
    /// `∂loss/∂f`.
    pub grad_f: Array2<f64>,
    /// `∂loss/∂g`.
    pub grad_g: Array2<f64>,
}

/// InfoNCE on precomputed embeddings with `s(α, β) = −‖f_α − g_β‖² / τ`.
pub fn infonce_from_embeddings(f: ArrayView2<f64>, g: ArrayView2<f64>, tau: f64) -> Result<InfoNce> {
    let b = f.nrows();
    if b < 2 {
        return Err(Error::InvalidConfig(format!("InfoNCE needs a batch of at least 2, got {b}")));
    }
    if g.dim() != f.dim() {
        return Err(Error::Shape(format!(
            "embeddings are {:?} and {:?}",
            f.dim(),
            g.dim()
        )));
    }
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::InvalidConfig(format!("temperature must be positive, got {tau}")));
    }
    let f_sq: Vec<f64> = f.rows().into_iter().map(|r| r.dot(&r)).collect();
    let g_sq: Vec<f64> = g.rows().into_iter().map(|r| r.dot(&r)).collect();
    let mut s = f.dot(&g.t());
    for a in 0..b {
        for c in 0..b {
            s[[a, c]] = -(f_sq[a] + g_sq[c] - 2.0 * s[[a, c]]) / tau;
        }
    }
    if s.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("InfoNCE similarities".into()));
    }
    // s becomes G = (softmax − I) / B in place.
    let mut loss = 0.0;
    for (a, mut row) in s.rows_mut().into_iter().enumerate() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let total: f64 = row.iter().map(|v| (v - max).exp()).sum();
        let lse = max + total.ln();
        loss -= row[a] - lse;
        row.mapv_inplace(|v| (v - lse).exp() / b as f64);
        row[a] -= 1.0 / b as f64;
    }
    loss /= b as f64;
    let grad_f = s.dot(&g) * (2.0 / tau);
    let col: Vec<f64> = s.sum_axis(Axis(0)).to_vec();
    let mut grad_g = s.t().dot(&f);
    for (c, mut row) in grad_g.rows_mut().into_iter().enumerate() {
        row.scaled_add(-col[c], &g.row(c));
    }
    grad_g *= 2.0 / tau;
    let max_bits = (b as f64).log2();
    let bound_bits = (((b as f64).ln() - loss) / LN_2).min(max_bits);
    Ok(InfoNce {
        loss,
        bound_bits,
        grad_f,
        grad_g,
    })
}

/// Concatenated one-hot encoding of a batch of outcomes.
///
/// `columns[j]` holds the batch of outcomes of a component with alphabet `sizes[j]`.
pub fn one_hot(sizes: &[usize], columns: &[&[u32]]) -> Result<Array2<f64>> {
    if sizes.len() != columns.len() {
        return Err(Error::Shape(format!(
            "{} alphabets but {} outcome columns",
            sizes.len(),
            columns.len()
        )));
    }
    let b = columns.first().map_or(0, |c| c.len());
    let mut out = Array2::zeros((b, sizes.iter().sum()));
    let mut offset = 0;
    for (&m, col) in sizes.iter().zip(columns) {
        if col.len() != b {
            return Err(Error::Shape("outcome columns differ in length".into()));
        }
        for (a, &x) in col.iter().enumerate() {
            if x as usize >= m {
                return Err(Error::OutcomeOutOfRange {
                    outcome: x as usize,
                    size: m,
                });
            }
            out[[a, offset + x as usize]] = 1.0;
        }
        offset += m;
    }
    Ok(out)
}

/// Critic pair estimating `I(U_A; X_A)` for one index set `A`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NcePair {
    pub term: Vec<usize>,
    /// Embeds concatenated latents `u_A`.
    pub u_critic: Mlp,
    /// Embeds concatenated one-hot outcomes `x_A`.
    pub x_critic: Mlp,
    pub temperature: f64,
    /// Alphabet size of each component of `A`.
    pub alphabet_sizes: Vec<usize>,
}

/// Forward state of an [`NcePair`] evaluation.
#[derive(Debug, Clone)]
pub struct NcePass {
    pub value: InfoNce,
    u_tape: crate::nn::Tape,
    x_tape: crate::nn::Tape,
}

/// Gradients of the InfoNCE loss (nats).
#[derive(Debug, Clone)]
pub struct NceGrads {
    pub u_critic: MlpGrads,
    pub x_critic: MlpGrads,
    /// `∂loss/∂u_A`, one row per sample.
    pub u_input: Array2<f64>,
}

/// Separate optimizer state for the two critics of a pair.
#[derive(Debug, Clone)]
pub struct CriticOptimizer {
    pub u: Optimizer,
    pub x: Optimizer,
}

impl CriticOptimizer {
    pub fn new(template: &Optimizer) -> Self {
        CriticOptimizer {
            u: template.clone(),
            x: template.clone(),
        }
    }
}

impl NcePair {
    /// `system_sizes` are the alphabet sizes of every component of the system.
    pub fn new<R: Rng + ?Sized>(
        term: Vec<usize>,
        latent_dim: usize,
        system_sizes: &[usize],
        hidden: &[usize],
        temperature: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if term.is_empty() || term.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidSubset(format!(
                "term {term:?} must be non-empty and strictly increasing"
            )));
        }
        if let Some(&i) = term.iter().find(|&&i| i >= system_sizes.len()) {
            return Err(Error::InvalidSubset(format!(
                "index {i} out of range for {} components",
                system_sizes.len()
            )));
        }
        if latent_dim == 0 {
            return Err(Error::InvalidConfig("latent dimension must be positive".into()));
        }
        if !(temperature > 0.0) || !temperature.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "temperature must be positive, got {temperature}"
            )));
        }
        let alphabet_sizes: Vec<usize> = term.iter().map(|&i| system_sizes[i]).collect();
        let u_critic = Mlp::new(term.len() * latent_dim, hidden, NCE_DIM, rng);
        let x_critic = Mlp::new(alphabet_sizes.iter().sum(), hidden, NCE_DIM, rng);
        Ok(NcePair {
            term,
            u_critic,
            x_critic,
            temperature,
            alphabet_sizes,
        })
    }

    /// Concatenates the latents of the term's components. `latents[i]` is component `i`.
    pub fn u_input(&self, latents: &[Array2<f64>]) -> Result<Array2<f64>> {
        let views: Vec<ArrayView2<f64>> = self
            .term
            .iter()
            .map(|&i| {
                latents.get(i).map(|l| l.view()).ok_or_else(|| {
                    Error::Shape(format!("no latents for component {i}"))
                })
            })
            .collect::<Result<_>>()?;
        ndarray::concatenate(Axis(1), &views).map_err(|e| Error::Shape(e.to_string()))
    }

    /// One-hot input for the term. `outcomes[i]` is the batch column of component `i`.
    pub fn x_input(&self, outcomes: &[Vec<u32>]) -> Result<Array2<f64>> {
        let cols: Vec<&[u32]> = self
            .term
            .iter()
            .map(|&i| {
                outcomes
                    .get(i)
                    .map(|c| c.as_slice())
                    .ok_or_else(|| Error::Shape(format!("no outcomes for component {i}")))
            })
            .collect::<Result<_>>()?;
        one_hot(&self.alphabet_sizes, &cols)
    }

    pub fn forward(&self, u: ArrayView2<f64>, x: ArrayView2<f64>) -> Result<NcePass> {
        if u.nrows() != x.nrows() {
            return Err(Error::Shape(format!(
                "{} latent rows but {} outcome rows",
                u.nrows(),
                x.nrows()
            )));
        }
        let (f, u_tape) = self.u_critic.forward(u)?;
        let (g, x_tape) = self.x_critic.forward(x)?;
        let value = infonce_from_embeddings(f.view(), g.view(), self.temperature)?;
        Ok(NcePass { value, u_tape, x_tape })
    }

    pub fn backward(&self, pass: &NcePass) -> Result<NceGrads> {
        let (u_critic, u_input) = self.u_critic.backward(&pass.u_tape, pass.value.grad_f.view())?;
        let (x_critic, _) = self.x_critic.backward(&pass.x_tape, pass.value.grad_g.view())?;
        Ok(NceGrads {
            u_critic,
            x_critic,
            u_input,
        })
    }

    /// Moves both critics down the loss gradient (up the bound).
    pub fn apply(&mut self, grads: &NceGrads, opt: &mut CriticOptimizer) -> Result<()> {
        opt.u
            .step(&mut self.u_critic.params_mut(), &grads.u_critic.slices())?;
        opt.x
            .step(&mut self.x_critic.params_mut(), &grads.x_critic.slices())?;
        Ok(())
    }

    /// One critic update. Returns the pre-update evaluation and `∂loss/∂u_A`.
    pub fn train_step(
        &mut self,
        u: ArrayView2<f64>,
        x: ArrayView2<f64>,
        opt: &mut CriticOptimizer,
    ) -> Result<(InfoNce, Array2<f64>)> {
        let pass = self.forward(u, x)?;
        let grads = self.backward(&pass)?;
        self.apply(&grads, opt)?;
        Ok((pass.value, grads.u_input))
    }

    pub fn is_finite(&self) -> bool {
        self.u_critic.is_finite() && self.x_critic.is_finite()
    }
}

/// InfoNCE loss (nats) of a batch under a critic pair.
pub fn infonce_loss(pair: &NcePair, u: ArrayView2<f64>, x: ArrayView2<f64>) -> Result<f64> {
    Ok(pair.forward(u, x)?.value.loss)
}

/// Critic pair whose negated loss is handed to the encoders.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdversarialPair {
    pub pair: NcePair,
}

/// Result of one adversarial update.
#[derive(Debug, Clone)]
pub struct AdversarialStep {
    /// Bound before the critic update, in bits.
    pub bound_bits: f64,
    /// `−∂loss/∂u_A`: descending it lowers what the critics can extract.
    pub encoder_grad: Array2<f64>,
}

impl AdversarialPair {
    pub fn new(pair: NcePair) -> Self {
        AdversarialPair { pair }
    }

    /// Critics ascend the bound; the encoders get the negated loss gradient.
    pub fn adversarial_step(
        &mut self,
        u: ArrayView2<f64>,
        x: ArrayView2<f64>,
        opt: &mut CriticOptimizer,
    ) -> Result<AdversarialStep> {
        let (value, grad_u) = self.pair.train_step(u, x, opt)?;
        Ok(AdversarialStep {
            bound_bits: value.bound_bits,
            encoder_grad: -grad_u,
        })
    }
}

/// Batch bound on `I(X_i;U_i)` with total derivatives in the encoder parameters.
#[derive(Debug, Clone)]
pub struct ComponentBound {
    pub bits: f64,
    pub grad_mu: Array2<f64>,
    pub grad_log_sigma: Array2<f64>,
    /// Latents the bound was evaluated on.
    pub latents: Array2<f64>,
}

/// `(1/B) Σ_α [log2 p(u^α|x^α) − log2 (1/B) Σ_β p(u^α|x^β)]` with `u^α` drawn from
/// `encoder` using noise row `eps[α]`.
///
/// The inner mixture runs over the batch (positive sample included), grouped
/// by outcome so the cost is `B × distinct outcomes`.
pub fn component_info_bound(encoder: &SoftEncoder, outcomes: &[u32], eps: ArrayView2<f64>) -> Result<ComponentBound> {
    let b = outcomes.len();
    if b < 2 {
        return Err(Error::InvalidConfig(format!("batch bound needs at least 2 samples, got {b}")));
    }
    encoder.check_finite()?;
    let latents = encoder.latents(outcomes, eps)?;
    let m = encoder.n_outcomes();
    let dim = encoder.dim();
    let mut counts = vec![0usize; m];
    for &x in outcomes {
        counts[x as usize] += 1;
    }
    let present: Vec<usize> = (0..m).filter(|&k| counts[k] > 0).collect();
    let log_c: Vec<f64> = present
        .iter()
        .map(|&k| (counts[k] as f64 / b as f64).ln())
        .collect();
    let inv_var = encoder.log_sigma.mapv(|ls| (-2.0 * ls).exp());
    let ls_sum: Vec<f64> = encoder.log_sigma.rows().into_iter().map(|r| r.sum()).collect();

    let mut grad_mu = Array2::zeros((m, dim));
    let mut grad_ls = Array2::zeros((m, dim));
    let mut grad_u = Array2::zeros((b, dim));
    let mut values = Vec::with_capacity(b);
    let mut ell = vec![0.0; present.len()];
    let mut resp = vec![0.0; present.len()];
    let inv_b = 1.0 / b as f64;
    for a in 0..b {
        let u = latents.row(a);
        let own = outcomes[a] as usize;
        let mut own_j = 0;
        for (j, &k) in present.iter().enumerate() {
            let mut acc = -ls_sum[k];
            for d in 0..dim {
                let z = u[d] - encoder.mu[[k, d]];
                acc -= 0.5 * z * z * inv_var[[k, d]];
            }
            ell[j] = acc;
            if k == own {
                own_j = j;
            }
        }
        let max = ell
            .iter()
            .zip(&log_c)
            .map(|(l, c)| l + c)
            .fold(f64::NEG_INFINITY, f64::max);
        let total: f64 = ell.iter().zip(&log_c).map(|(l, c)| (l + c - max).exp()).sum();
        let lse = max + total.ln();
        let v = ell[own_j] - lse;
        if !v.is_finite() {
            return Err(Error::NonFinite(format!(
                "batch density ratio for sample {a} of component {}",
                encoder.component
            )));
        }
        values.push(v);
        for (j, r) in resp.iter_mut().enumerate() {
            *r = (ell[j] + log_c[j] - lse).exp();
        }
        // G_αk = (δ − r_αk) / B on each log-density.
        for (j, &k) in present.iter().enumerate() {
            let gk = ((j == own_j) as u8 as f64 - resp[j]) * inv_b;
            if gk == 0.0 {
                continue;
            }
            for d in 0..dim {
                let diff = u[d] - encoder.mu[[k, d]];
                let w = diff * inv_var[[k, d]];
                grad_u[[a, d]] -= gk * w;
                grad_mu[[k, d]] += gk * w;
                grad_ls[[k, d]] += gk * (diff * w - 1.0);
            }
        }
    }
    values.sort_by(f64::total_cmp);
    let nats = values.iter().sum::<f64>() * inv_b;

    let (rp_mu, rp_ls) = encoder.latent_backward(outcomes, eps, grad_u.view());
    grad_mu += &rp_mu;
    grad_ls += &rp_ls;
    grad_mu /= LN_2;
    grad_ls /= LN_2;
    Ok(ComponentBound {
        bits: nats / LN_2,
        grad_mu,
        grad_log_sigma: grad_ls,
        latents,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channels::{mc_mutual_information, Channel};
    use crate::systems::JointTable;
    use ndarray::array;
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn noise(r: &mut ChaCha8Rng, b: usize, d: usize) -> Array2<f64> {
        Array2::from_shape_simple_fn((b, d), || r.sample::<f64, _>(StandardNormal))
    }

    fn uniform_outcomes(r: &mut ChaCha8Rng, b: usize, m: u32) -> Vec<u32> {
        (0..b).map(|_| r.random_range(0..m)).collect()
    }

    #[test]
    fn bound_never_exceeds_log_batch() {
        let mut r = rng(1);
        for trial in 0..200 {
            let b = 2 + trial % 40;
            let scale = [0.1, 1.0, 30.0, 1e3][trial % 4];
            let f = noise(&mut r, b, 3) * scale;
            let g = if trial % 2 == 0 { f.clone() } else { noise(&mut r, b, 3) * scale };
            let v = infonce_from_embeddings(f.view(), g.view(), 1.0).unwrap();
            assert!(v.bound_bits <= (b as f64).log2(), "{} > log2 {b}", v.bound_bits);
            assert!(v.loss >= -1e-12);
        }
    }

    #[test]
    fn saturated_embeddings_reach_log_batch() {
        let b = 16;
        let f = Array2::from_shape_fn((b, b), |(a, c)| if a == c { 100.0 } else { 0.0 });
        let v = infonce_from_embeddings(f.view(), f.view(), 1.0).unwrap();
        assert!(v.loss < 1e-12);
        assert!((v.bound_bits - 4.0).abs() < 1e-12);
    }

    #[test]
    fn batch_of_one_rejected() {
        let f = Array2::zeros((1, 2));
        assert!(infonce_from_embeddings(f.view(), f.view(), 1.0).is_err());
        assert!(infonce_from_embeddings(f.view(), f.view(), 0.0).is_err());
    }

    #[test]
    fn embedding_gradients_match_finite_differences() {
        let mut r = rng(2);
        let f = noise(&mut r, 6, 4);
        let g = noise(&mut r, 6, 4);
        let tau = 1.7;
        let v = infonce_from_embeddings(f.view(), g.view(), tau).unwrap();
        let h = 1e-6;
        for (which, base, grad) in [(0, &f, &v.grad_f), (1, &g, &v.grad_g)] {
            for idx in [(0, 0), (2, 3), (5, 1), (3, 2)] {
                let mut p = base.clone();
                let mut m = base.clone();
                p[idx] += h;
                m[idx] -= h;
                let loss = |x: &Array2<f64>| {
                    let (ff, gg) = if which == 0 { (x, &g) } else { (&f, x) };
                    infonce_from_embeddings(ff.view(), gg.view(), tau).unwrap().loss
                };
                let fd = (loss(&p) - loss(&m)) / (2.0 * h);
                assert!((fd - grad[idx]).abs() < 1e-7, "{which} {idx:?}: {fd} vs {}", grad[idx]);
            }
        }
    }

    #[test]
    fn one_hot_layout() {
        let x = one_hot(&[2, 3], &[&[1, 0], &[2, 0]]).unwrap();
        assert_eq!(x, array![[0.0, 1.0, 0.0, 0.0, 1.0], [1.0, 0.0, 1.0, 0.0, 0.0]]);
        assert!(one_hot(&[2], &[&[2]]).is_err());
    }

    fn pair_for(term: Vec<usize>, sizes: &[usize], dim: usize, seed: u64) -> NcePair {
        NcePair::new(term, dim, sizes, &[16], 1.0, &mut rng(seed)).unwrap()
    }

    #[test]
    fn pair_gradients_match_finite_differences() {
        let sizes = [3, 2];
        let mut pair = pair_for(vec![0, 1], &sizes, 2, 3);
        let mut r = rng(4);
        let outcomes = vec![uniform_outcomes(&mut r, 8, 3), uniform_outcomes(&mut r, 8, 2)];
        let latents = vec![noise(&mut r, 8, 2), noise(&mut r, 8, 2)];
        let u = pair.u_input(&latents).unwrap();
        let x = pair.x_input(&outcomes).unwrap();
        let pass = pair.forward(u.view(), x.view()).unwrap();
        let grads = pair.backward(&pass).unwrap();
        let h = 1e-6;
        for idx in [(0, 0), (3, 2), (7, 3)] {
            let mut p = u.clone();
            let mut m = u.clone();
            p[idx] += h;
            m[idx] -= h;
            let fd = (infonce_loss(&pair, p.view(), x.view()).unwrap()
                - infonce_loss(&pair, m.view(), x.view()).unwrap())
                / (2.0 * h);
            let an = grads.u_input[idx];
            assert!((fd - an).abs() < 1e-6 * (1.0 + an.abs()), "{fd} vs {an}");
        }
        let an: Vec<Vec<f64>> = grads.x_critic.slices().iter().map(|s| s.to_vec()).collect();
        for (group, j) in [(0, 0), (1, 5), (2, 7), (3, 1)] {
            let base = pair.x_critic.params_mut()[group][j];
            pair.x_critic.params_mut()[group][j] = base + h;
            let lp = infonce_loss(&pair, u.view(), x.view()).unwrap();
            pair.x_critic.params_mut()[group][j] = base - h;
            let lm = infonce_loss(&pair, u.view(), x.view()).unwrap();
            pair.x_critic.params_mut()[group][j] = base;
            let fd = (lp - lm) / (2.0 * h);
            assert!((fd - an[group][j]).abs() < 1e-6 * (1.0 + fd.abs()), "{fd} vs {}", an[group][j]);
        }
    }

    #[test]
    fn constant_outcomes_leave_nothing_to_hide() {
        let mut pair = AdversarialPair::new(pair_for(vec![0], &[4], 2, 5));
        let mut r = rng(6);
        let latents = vec![noise(&mut r, 32, 2)];
        let outcomes = vec![vec![2u32; 32]];
        let u = pair.pair.u_input(&latents).unwrap();
        let x = pair.pair.x_input(&outcomes).unwrap();
        let mut opt = CriticOptimizer::new(&Optimizer::adam(1e-3).unwrap());
        let step = pair.adversarial_step(u.view(), x.view(), &mut opt).unwrap();
        assert!(step.encoder_grad.iter().all(|v| v.abs() < 1e-12));
        assert!(step.bound_bits.abs() < 1e-12);
    }

    /// Latents that identify `x` exactly: one-hot scaled up.
    fn identifying_latents(outcomes: &[u32], m: usize, r: &mut ChaCha8Rng) -> Array2<f64> {
        let noise = noise(r, outcomes.len(), m) * 0.05;
        Array2::from_shape_fn((outcomes.len(), m), |(a, d)| {
            if outcomes[a] as usize == d { 3.0 } else { 0.0 }
        }) + noise
    }

    #[test]
    fn critics_learn_and_stay_below_analytic() {
        // Four equiprobable outcomes seen through an invertible channel: 2 bits.
        let mut pair = pair_for(vec![0], &[4], 4, 7);
        let mut opt = CriticOptimizer::new(&Optimizer::adam(3e-3).unwrap());
        let mut r = rng(8);
        let b = 128;
        let mut early = Vec::new();
        let mut late = Vec::new();
        for step in 0..1000 {
            let xs = uniform_outcomes(&mut r, b, 4);
            let u = identifying_latents(&xs, 4, &mut r);
            let x = pair.x_input(&[xs]).unwrap();
            let (v, _) = pair.train_step(u.view(), x.view(), &mut opt).unwrap();
            if step < 100 {
                early.push(v.bound_bits);
            } else if step >= 900 {
                late.push(v.bound_bits);
            }
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        assert!(mean(&late) > mean(&early));
        let evals: Vec<f64> = (0..30)
            .map(|_| {
                let xs = uniform_outcomes(&mut r, b, 4);
                let u = identifying_latents(&xs, 4, &mut r);
                let x = pair.x_input(&[xs]).unwrap();
                pair.forward(u.view(), x.view()).unwrap().value.bound_bits
            })
            .collect();
        let est = crate::channels::Estimate::from_samples(&evals);
        assert!(est.value <= 2.0 + 3.0 * est.se, "{est:?}");
        assert!(est.value > 1.9, "{est:?}");
    }

    #[test]
    fn shuffled_pairs_give_no_information() {
        let mut pair = pair_for(vec![0], &[4], 4, 9);
        let mut opt = CriticOptimizer::new(&Optimizer::adam(3e-3).unwrap());
        let mut r = rng(10);
        let b = 128;
        let batch = |r: &mut ChaCha8Rng| {
            let xs = uniform_outcomes(r, b, 4);
            let u = identifying_latents(&xs, 4, r);
            let mut shuffled = xs.clone();
            shuffled.shuffle(r);
            (u, shuffled)
        };
        for _ in 0..1000 {
            let (u, xs) = batch(&mut r);
            let x = pair.x_input(&[xs]).unwrap();
            pair.train_step(u.view(), x.view(), &mut opt).unwrap();
        }
        let evals: Vec<f64> = (0..30)
            .map(|_| {
                let (u, xs) = batch(&mut r);
                let x = pair.x_input(&[xs]).unwrap();
                pair.forward(u.view(), x.view()).unwrap().value.bound_bits
            })
            .collect();
        let est = crate::channels::Estimate::from_samples(&evals);
        assert!(est.within(0.0, 3.0, 0.0), "{est:?}");
    }

    fn encoder(mu: Array2<f64>, ls: f64) -> SoftEncoder {
        let dim = mu.dim();
        SoftEncoder::from_parts(0, mu, Array2::from_elem(dim, ls)).unwrap()
    }

    #[test]
    fn constant_channel_bound_is_zero() {
        let enc = encoder(Array2::from_elem((4, 2), 0.3), 0.2);
        let mut r = rng(11);
        let xs = uniform_outcomes(&mut r, 64, 4);
        let cb = component_info_bound(&enc, &xs, noise(&mut r, 64, 2).view()).unwrap();
        assert!(cb.bits.abs() < 1e-12);
        assert!(cb.grad_mu.iter().chain(cb.grad_log_sigma.iter()).all(|g| g.is_finite()));
    }

    fn plug_in_entropy(xs: &[u32], m: usize) -> f64 {
        let mut c = vec![0.0; m];
        for &x in xs {
            c[x as usize] += 1.0;
        }
        let n = xs.len() as f64;
        c.iter().filter(|&&v| v > 0.0).map(|v| -(v / n) * (v / n).log2()).sum()
    }

    #[test]
    fn separated_encoder_reads_batch_entropy() {
        let enc = encoder(array![[0.0, 0.0], [60.0, 0.0], [0.0, 60.0], [60.0, 60.0]], 0.0);
        let mut r = rng(12);
        let xs = uniform_outcomes(&mut r, 256, 4);
        let cb = component_info_bound(&enc, &xs, noise(&mut r, 256, 2).view()).unwrap();
        assert!((cb.bits - plug_in_entropy(&xs, 4)).abs() < 1e-9);
        assert!((cb.bits - 2.0).abs() < 0.05);
        assert!(cb.bits <= 8.0);
    }

    #[test]
    fn batch_order_does_not_matter() {
        let enc = encoder(array![[0.0, 0.1], [0.7, -0.3], [1.5, 0.2]], -0.4);
        let mut r = rng(13);
        let xs = uniform_outcomes(&mut r, 200, 3);
        let eps = noise(&mut r, 200, 2);
        let base = component_info_bound(&enc, &xs, eps.view()).unwrap().bits;
        let mut order: Vec<usize> = (0..200).collect();
        for _ in 0..5 {
            order.shuffle(&mut r);
            let xs2: Vec<u32> = order.iter().map(|&a| xs[a]).collect();
            let eps2 = eps.select(Axis(0), &order);
            assert_eq!(component_info_bound(&enc, &xs2, eps2.view()).unwrap().bits, base);
        }
    }

    #[test]
    fn bound_gradients_match_finite_differences() {
        let mut r = rng(14);
        let mu = noise(&mut r, 3, 2) * 0.8;
        let ls = noise(&mut r, 3, 2) * 0.3;
        let enc = SoftEncoder::from_parts(0, mu, ls).unwrap();
        let xs = uniform_outcomes(&mut r, 24, 3);
        let eps = noise(&mut r, 24, 2);
        let cb = component_info_bound(&enc, &xs, eps.view()).unwrap();
        let h = 1e-6;
        for k in 0..3 {
            for d in 0..2 {
                for which in 0..2 {
                    let shift = |delta: f64| {
                        let mut e = enc.clone();
                        if which == 0 {
                            e.mu[[k, d]] += delta;
                        } else {
                            e.log_sigma[[k, d]] += delta;
                        }
                        component_info_bound(&e, &xs, eps.view()).unwrap().bits
                    };
                    let fd = (shift(h) - shift(-h)) / (2.0 * h);
                    let an = if which == 0 { cb.grad_mu[[k, d]] } else { cb.grad_log_sigma[[k, d]] };
                    assert!((fd - an).abs() < 1e-6, "{which} {k} {d}: {fd} vs {an}");
                }
            }
        }
    }

    #[test]
    fn large_batches_agree_with_monte_carlo() {
        let enc = encoder(array![[0.0], [1.0], [2.5], [2.9]], -0.3);
        let table = JointTable::from_weights(vec![4], (0..4).map(|x| (vec![x], 1.0)).collect::<Vec<_>>()).unwrap();
        let channels: Vec<&dyn Channel> = vec![&enc];
        let mc = mc_mutual_information(&channels, &table, &[0], 200_000, &mut rng(15)).unwrap();
        let mut r = rng(16);
        let batches: Vec<f64> = (0..30)
            .map(|_| {
                let xs = uniform_outcomes(&mut r, 2048, 4);
                component_info_bound(&enc, &xs, noise(&mut r, 2048, 1).view()).unwrap().bits
            })
            .collect();
        let est = crate::channels::Estimate::from_samples(&batches);
        let se = (est.se.powi(2) + mc.se.powi(2)).sqrt();
        assert!((est.value - mc.value).abs() < 3.0 * se, "{est:?} vs {mc:?}");
    }

    #[test]
    fn latents_match_single_draws() {
        let enc = encoder(array![[0.0, 1.0], [2.0, 3.0]], 0.5);
        let eps = array![[0.1, -0.2], [1.0, 0.5]];
        let lat = enc.latents(&[1, 0], eps.view()).unwrap();
        let first = enc.latent_from_noise(1, eps.row(0)).unwrap();
        assert_eq!(lat.row(0), first.view());
        assert!(enc.latents(&[2, 0], eps.view()).is_err());
    }
}
