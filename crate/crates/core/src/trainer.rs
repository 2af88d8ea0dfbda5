//! Optimization runs over soft descriptions.
//!
//! A [`Trainer`] owns one encoder per component and one critic pair per
//! extremized term. Scans ramp the information target over a single run and
//! evaluate checkpoints; points train at a fixed target with a staged γ.

use std::f64::consts::LN_2;

use ndarray::{s, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channels::{mc_mutual_information_terms, Channel, Estimate, SoftEncoder, DEFAULT_EVAL_SAMPLES};
use crate::error::{Error, Result};
use crate::estimators::{component_info_bound, CriticOptimizer, NceGrads, NcePair};
use crate::infotheory::entropy;
use crate::nn::{Optimizer, OptimizerKind};
use crate::objective::{GammaSchedule, ObjectiveSpec, TermRole};
use crate::systems::{JointTable, RowSampler};

/// Consecutive off-target steps tolerated before a run is declared divergent.
const OFF_TARGET_PATIENCE: usize = 1000;

/// Hyperparameters of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Latent dimension of every encoder.
    pub latent_dim: usize,
    /// Hidden widths of every critic network.
    pub critic_hidden: Vec<usize>,
    pub batch_size: usize,
    pub encoder_optimizer: OptimizerKind,
    pub encoder_lr: f64,
    pub critic_optimizer: OptimizerKind,
    pub critic_lr: f64,
    /// Largest gradient norm applied to one encoder per step; 0 disables clipping.
    pub encoder_grad_clip: f64,
    /// Lower bound on every encoder log σ, enforced after each update.
    pub min_log_sigma: Option<f64>,
    /// Upper bound on every encoder log σ. Very wide outcomes would otherwise
    /// feed the critics latents far outside anything they were trained on.
    pub max_log_sigma: Option<f64>,
    /// Critic updates per encoder update.
    pub critic_steps: usize,
    pub temperature: f64,
    pub steps: usize,
    pub gamma0: f64,
    pub gamma1: f64,
    /// Critic-only steps with frozen encoders after training.
    pub further_critic_steps: usize,
    pub repeats: usize,
    pub seed: u64,
    pub eval_samples: usize,
    /// Evaluated checkpoints of a scan.
    pub checkpoints: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::spins()
    }
}

impl TrainConfig {
    /// Five-spin settings.
    pub fn spins() -> Self {
        TrainConfig {
            latent_dim: 2,
            critic_hidden: vec![256],
            batch_size: 256,
            encoder_optimizer: OptimizerKind::Sgd,
            encoder_lr: 1e-2,
            critic_optimizer: OptimizerKind::Adam,
            critic_lr: 3e-4,
            encoder_grad_clip: 5.0,
            min_log_sigma: Some(-3.0),
            max_log_sigma: Some(0.0),
            critic_steps: 3,
            temperature: 1.0,
            steps: 50_000,
            gamma0: 1.0,
            gamma1: 1.0,
            further_critic_steps: 20_000,
            repeats: 5,
            seed: 0,
            eval_samples: DEFAULT_EVAL_SAMPLES,
            checkpoints: 50,
        }
    }

    /// 4×4 sudoku settings.
    pub fn sudoku() -> Self {
        TrainConfig {
            critic_hidden: vec![512, 512],
            batch_size: 576,
            critic_lr: 1e-4,
            steps: 20_000,
            gamma0: 1.0,
            gamma1: 10.0,
            critic_steps: 1,
            further_critic_steps: 0,
            ..Self::spins()
        }
    }

    /// Letter n-gram settings.
    pub fn ngrams() -> Self {
        TrainConfig {
            latent_dim: 8,
            critic_hidden: vec![256, 256, 256],
            batch_size: 1024,
            steps: 200_000,
            gamma0: 2.0,
            gamma1: 10.0,
            critic_steps: 1,
            further_critic_steps: 0,
            repeats: 1,
            ..Self::spins()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("latent_dim", self.latent_dim),
            ("steps", self.steps),
            ("repeats", self.repeats),
            ("checkpoints", self.checkpoints),
            ("critic_steps", self.critic_steps),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::InvalidConfig(format!("{name} must be positive")));
        }
        if self.batch_size < 2 {
            return Err(Error::InvalidConfig("batch_size must be at least 2".into()));
        }
        if self.eval_samples < 2 {
            return Err(Error::InvalidConfig("eval_samples must be at least 2".into()));
        }
        if self.critic_hidden.contains(&0) {
            return Err(Error::InvalidConfig("critic layers must be non-empty".into()));
        }
        if self.checkpoints > self.steps {
            return Err(Error::InvalidConfig(format!(
                "{} checkpoints exceed {} steps",
                self.checkpoints, self.steps
            )));
        }
        for (name, v) in [
            ("encoder_lr", self.encoder_lr),
            ("critic_lr", self.critic_lr),
            ("temperature", self.temperature),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidConfig(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.encoder_grad_clip >= 0.0) || !self.encoder_grad_clip.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "encoder_grad_clip must be non-negative, got {}",
                self.encoder_grad_clip
            )));
        }
        if let (Some(lo), Some(hi)) = (self.min_log_sigma, self.max_log_sigma) {
            if !(lo < hi) {
                return Err(Error::InvalidConfig(format!(
                    "min_log_sigma {lo} must be below max_log_sigma {hi}"
                )));
            }
        }
        GammaSchedule::new(self.gamma0, self.gamma1, self.steps)?;
        Ok(())
    }

    /// Named preset: `spins`, `sudoku` or `ngrams`.
    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "spins" => Ok(Self::spins()),
            "sudoku" => Ok(Self::sudoku()),
            "ngrams" => Ok(Self::ngrams()),
            other => Err(Error::InvalidConfig(format!("unknown preset {other:?}"))),
        }
    }

    /// Reads a JSON config; missing fields take the spin defaults.
    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: TrainConfig = serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// The objective's own schedule wins over the config's.
    pub fn schedule(&self, spec: &ObjectiveSpec) -> Result<GammaSchedule> {
        match spec.gamma {
            Some(g) => GammaSchedule::new(g.gamma0, g.gamma1, self.steps),
            None => GammaSchedule::new(self.gamma0, self.gamma1, self.steps),
        }
    }
}

/// One training batch: outcome columns and reparameterization noise per component.
#[derive(Debug, Clone)]
pub struct Batch {
    pub outcomes: Vec<Vec<u32>>,
    pub noise: Vec<Array2<f64>>,
}

/// Critic pair of one extremized term.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TermCritic {
    pub pair: NcePair,
    pub weight: f64,
}

impl TermCritic {
    pub fn role(&self) -> TermRole {
        ObjectiveSpec::role(self.weight)
    }
}

/// Loss of one batch and its gradients.
#[derive(Debug, Clone)]
pub struct LossGradients {
    /// `γ |I_in − Î_in| + Σ w_k I_k` in bits.
    pub loss: f64,
    pub i_in: f64,
    /// Per-component batch bounds.
    pub component_bits: Vec<f64>,
    /// Per-term InfoNCE bounds `(ln B − L_k)/ln 2`.
    pub term_bits: Vec<f64>,
    /// `∂loss/∂μ_i`.
    pub grad_mu: Vec<Array2<f64>>,
    /// `∂loss/∂log σ_i`.
    pub grad_log_sigma: Vec<Array2<f64>>,
    /// Gradients of each term's own InfoNCE loss (nats). The training loss
    /// depends on critic `k` through `−w_k / ln 2` times this.
    pub critics: Vec<NceGrads>,
}

/// Summary of one optimizer step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    pub loss: f64,
    pub i_in: f64,
}

/// Trainable state of a single run.
pub struct Trainer<'a> {
    table: &'a JointTable,
    spec: ObjectiveSpec,
    config: TrainConfig,
    encoders: Vec<SoftEncoder>,
    critics: Vec<TermCritic>,
    encoder_opts: Vec<Optimizer>,
    critic_opts: Vec<CriticOptimizer>,
    sampler: RowSampler,
    rng: ChaCha8Rng,
    step: usize,
    off_target: usize,
    total_entropy: f64,
}

impl<'a> Trainer<'a> {
    /// Validates `spec` against `table` and initializes encoders and critics from `seed`.
    pub fn new(table: &'a JointTable, spec: &ObjectiveSpec, config: &TrainConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let n = table.n_components();
        let spec = spec.validate(n)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sizes = table.alphabet_sizes().to_vec();
        let encoders: Vec<SoftEncoder> = sizes
            .iter()
            .enumerate()
            .map(|(i, &m)| SoftEncoder::random(i, m, config.latent_dim, &mut rng))
            .collect();
        let critics = spec
            .extremized()
            .map(|(_, term, weight)| {
                Ok(TermCritic {
                    pair: NcePair::new(
                        term.to_vec(),
                        config.latent_dim,
                        &sizes,
                        &config.critic_hidden,
                        config.temperature,
                        &mut rng,
                    )?,
                    weight,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let encoder_opts = (0..n)
            .map(|_| Optimizer::new(config.encoder_optimizer, config.encoder_lr))
            .collect::<Result<_>>()?;
        let critic_template = Optimizer::new(config.critic_optimizer, config.critic_lr)?;
        let critic_opts = critics.iter().map(|_| CriticOptimizer::new(&critic_template)).collect();
        let total_entropy = (0..n).map(|i| entropy(table, &[i])).sum::<Result<f64>>()?;
        Ok(Trainer {
            table,
            spec,
            config: config.clone(),
            encoders,
            critics,
            encoder_opts,
            critic_opts,
            sampler: table.sampler(),
            rng,
            step: 0,
            off_target: 0,
            total_entropy,
        })
    }

    pub fn spec(&self) -> &ObjectiveSpec {
        &self.spec
    }

    pub fn encoders(&self) -> &[SoftEncoder] {
        &self.encoders
    }

    pub fn encoders_mut(&mut self) -> &mut [SoftEncoder] {
        &mut self.encoders
    }

    pub fn critics(&self) -> &[TermCritic] {
        &self.critics
    }

    pub fn critics_mut(&mut self) -> &mut [TermCritic] {
        &mut self.critics
    }

    /// `Σ_i H(X_i)`, the largest attainable `I_in`.
    pub fn total_entropy(&self) -> f64 {
        self.total_entropy
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    /// Draws `B` rows i.i.d. from the table plus standard normal noise.
    pub fn draw_batch(&mut self) -> Batch {
        let b = self.config.batch_size;
        let n = self.table.n_components();
        let mut outcomes = vec![Vec::with_capacity(b); n];
        for _ in 0..b {
            let x = self.table.outcome(self.sampler.sample(&mut self.rng));
            for (col, &xi) in outcomes.iter_mut().zip(x) {
                col.push(xi);
            }
        }
        let d = self.config.latent_dim;
        let noise = (0..n)
            .map(|_| Array2::from_shape_simple_fn((b, d), || self.rng.sample::<f64, _>(StandardNormal)))
            .collect();
        Batch { outcomes, noise }
    }

    /// Loss and gradients on `batch` without touching any parameters.
    pub fn loss_and_gradients(&self, batch: &Batch, target: f64, gamma: f64) -> Result<LossGradients> {
        let n = self.encoders.len();
        let d = self.config.latent_dim;
        let bounds = self
            .encoders
            .iter()
            .zip(&batch.outcomes)
            .zip(&batch.noise)
            .map(|((enc, xs), eps)| component_info_bound(enc, xs, eps.view()))
            .collect::<Result<Vec<_>>>()?;
        let component_bits: Vec<f64> = bounds.iter().map(|b| b.bits).collect();
        let i_in: f64 = component_bits.iter().sum();
        let latents: Vec<Array2<f64>> = bounds.iter().map(|b| b.latents.clone()).collect();
        let b = batch.outcomes[0].len();
        let mut grad_latents = vec![Array2::<f64>::zeros((b, d)); n];
        let mut term_bits = Vec::with_capacity(self.critics.len());
        let mut critic_grads = Vec::with_capacity(self.critics.len());
        for tc in &self.critics {
            let u = tc.pair.u_input(&latents)?;
            let x = tc.pair.x_input(&batch.outcomes)?;
            let pass = tc.pair.forward(u.view(), x.view())?;
            let grads = tc.pair.backward(&pass)?;
            term_bits.push(((b as f64).ln() - pass.value.loss) / LN_2);
            let scale = -tc.weight / LN_2;
            for (j, &i) in tc.pair.term.iter().enumerate() {
                grad_latents[i].scaled_add(scale, &grads.u_input.slice(s![.., j * d..(j + 1) * d]));
            }
            critic_grads.push(grads);
        }
        let off = i_in - target;
        let dc = if off > 0.0 {
            gamma
        } else if off < 0.0 {
            -gamma
        } else {
            0.0
        };
        let mut grad_mu = Vec::with_capacity(n);
        let mut grad_log_sigma = Vec::with_capacity(n);
        for i in 0..n {
            let (rp_mu, rp_ls) =
                self.encoders[i].latent_backward(&batch.outcomes[i], batch.noise[i].view(), grad_latents[i].view());
            grad_mu.push(&bounds[i].grad_mu * dc + rp_mu);
            grad_log_sigma.push(&bounds[i].grad_log_sigma * dc + rp_ls);
        }
        let extremized: f64 = term_bits.iter().zip(&self.critics).map(|(v, tc)| v * tc.weight).sum();
        let loss = gamma * off.abs() + extremized;
        Ok(LossGradients {
            loss,
            i_in,
            component_bits,
            term_bits,
            grad_mu,
            grad_log_sigma,
            critics: critic_grads,
        })
    }

    /// One joint update of encoders and critics toward the target `Î_in`.
    pub fn step(&mut self, target: f64, gamma: f64) -> Result<StepReport> {
        let batch = self.draw_batch();
        let step = self.step;
        let diverged = |reason: String| Error::Diverged { step, reason };
        let g = match self.loss_and_gradients(&batch, target, gamma) {
            Ok(g) => g,
            Err(Error::NonFinite(what)) => return Err(diverged(what)),
            Err(e) => return Err(e),
        };
        if !g.loss.is_finite() {
            return Err(diverged(format!("loss is {}", g.loss)));
        }
        if (g.i_in - target).abs() > self.total_entropy + 5.0 {
            self.off_target += 1;
            if self.off_target >= OFF_TARGET_PATIENCE {
                return Err(diverged(format!(
                    "transmitted information {:.4} stayed far from target {:.4}",
                    g.i_in, target
                )));
            }
        } else {
            self.off_target = 0;
        }
        for ((tc, grads), opt) in self.critics.iter_mut().zip(&g.critics).zip(&mut self.critic_opts) {
            tc.pair.apply(grads, opt).map_err(|e| diverged(e.to_string()))?;
        }
        let clip = self.config.encoder_grad_clip;
        for (i, enc) in self.encoders.iter_mut().enumerate() {
            let (mut gm, mut gl) = (g.grad_mu[i].clone(), g.grad_log_sigma[i].clone());
            let norm = gm.iter().chain(gl.iter()).map(|v| v * v).sum::<f64>().sqrt();
            if clip > 0.0 && norm > clip {
                gm *= clip / norm;
                gl *= clip / norm;
            }
            let gm = gm.as_slice().expect("standard layout");
            let gl = gl.as_slice().expect("standard layout");
            let mu = enc.mu.as_slice_mut().expect("standard layout");
            let ls = enc.log_sigma.as_slice_mut().expect("standard layout");
            self.encoder_opts[i]
                .step(&mut [mu, ls], &[gm, gl])
                .map_err(|e| diverged(e.to_string()))?;
            let floor = self.config.min_log_sigma.unwrap_or(f64::NEG_INFINITY);
            let ceiling = self.config.max_log_sigma.unwrap_or(f64::INFINITY);
            enc.log_sigma.mapv_inplace(|v| v.clamp(floor, ceiling));
            enc.check_finite().map_err(|e| diverged(e.to_string()))?;
        }
        for _ in 1..self.config.critic_steps {
            self.critic_only_step().map_err(|e| match e {
                Error::NonFinite(what) => diverged(what),
                e => e,
            })?;
        }
        self.step += 1;
        Ok(StepReport { loss: g.loss, i_in: g.i_in })
    }

    /// One critic update on a fresh batch with frozen encoders. Returns each
    /// term's bound in bits.
    pub fn critic_only_step(&mut self) -> Result<Vec<f64>> {
        let batch = self.draw_batch();
        let latents = self
            .encoders
            .iter()
            .zip(&batch.outcomes)
            .zip(&batch.noise)
            .map(|((enc, xs), eps)| enc.latents(xs, eps.view()))
            .collect::<Result<Vec<_>>>()?;
        let mut bits = Vec::with_capacity(self.critics.len());
        for (tc, opt) in self.critics.iter_mut().zip(&mut self.critic_opts) {
            let u = tc.pair.u_input(&latents)?;
            let x = tc.pair.x_input(&batch.outcomes)?;
            let (v, _) = tc.pair.train_step(u.view(), x.view(), opt)?;
            bits.push(v.bound_bits);
        }
        Ok(bits)
    }

    /// Critic-only training with frozen encoders. Returns each term's mean
    /// bound over the final (up to) 100 steps.
    pub fn train_critics(&mut self, steps: usize) -> Result<Vec<f64>> {
        let window = steps.min(100);
        let mut sums = vec![0.0; self.critics.len()];
        for t in 0..steps {
            let bits = self.critic_only_step()?;
            if t + window >= steps {
                for (s, b) in sums.iter_mut().zip(bits) {
                    *s += b;
                }
            }
        }
        Ok(sums.into_iter().map(|s| if window > 0 { s / window as f64 } else { f64::NAN }).collect())
    }
}

/// Monte Carlo estimates of every term of an objective.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub estimates: Vec<Estimate>,
    /// `Σ_i I(X_i;U_i)`.
    pub i_in: Estimate,
    pub quantity: Estimate,
}

/// Evaluates every term of `spec` on one shared set of `n_samples` draws.
pub fn evaluate(
    table: &JointTable,
    channels: &[&dyn Channel],
    spec: &ObjectiveSpec,
    n_samples: usize,
    seed: u64,
) -> Result<Evaluation> {
    let n = table.n_components();
    if channels.len() != n {
        return Err(Error::ChannelMismatch(format!(
            "{} channels for {} components",
            channels.len(),
            n
        )));
    }
    let spec = spec.validate(n)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let estimates = mc_mutual_information_terms(channels, table, &spec.terms, n_samples, &mut rng)?;
    let i_in = Estimate::weighted_sum(estimates[..n].iter().map(|e| (1.0, e)));
    let quantity = spec.quantity(&estimates)?;
    Ok(Evaluation {
        estimates,
        i_in,
        quantity,
    })
}

/// An evaluated description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanRecord {
    pub iin_target: f64,
    /// Training steps taken when the snapshot was taken.
    pub step: usize,
    pub terms: Vec<Vec<usize>>,
    pub weights: Vec<f64>,
    pub estimates: Vec<Estimate>,
    pub i_in: Estimate,
    pub quantity: Estimate,
    /// Critic bounds after the extra critic-only phase, one per extremized term.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub critic_bits: Option<Vec<f64>>,
    pub encoders: Vec<SoftEncoder>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snapshot_path: Option<String>,
}

impl ScanRecord {
    fn from_trainer(trainer: &Trainer<'_>, target: f64, eval_seed: u64) -> Result<Self> {
        let channels: Vec<&dyn Channel> = trainer.encoders.iter().map(|e| e as &dyn Channel).collect();
        let ev = evaluate(
            trainer.table,
            &channels,
            &trainer.spec,
            trainer.config.eval_samples,
            eval_seed,
        )?;
        Ok(ScanRecord {
            iin_target: target,
            step: trainer.step,
            terms: trainer.spec.terms.clone(),
            weights: trainer.spec.weights.clone(),
            estimates: ev.estimates,
            i_in: ev.i_in,
            quantity: ev.quantity,
            critic_bits: None,
            encoders: trainer.encoders.clone(),
            snapshot_path: None,
        })
    }
}

/// Seed of the `r`-th repeat; repeat 0 uses the base seed itself.
pub fn derive_seed(seed: u64, r: usize) -> u64 {
    seed.wrapping_add((r as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

fn eval_seed(seed: u64, checkpoint: usize) -> u64 {
    derive_seed(seed ^ 0xD1B5_4A32_D192_ED03, checkpoint)
}

/// Steps after which each scan checkpoint is evaluated.
pub fn checkpoint_steps(steps: usize, checkpoints: usize) -> Vec<usize> {
    (1..=checkpoints).map(|c| c * steps / checkpoints).collect()
}

/// One run whose target ramps linearly from 0 to `Σ_i H(X_i)`, evaluated at
/// evenly spaced checkpoints.
pub fn run_scan(table: &JointTable, spec: &ObjectiveSpec, config: &TrainConfig) -> Result<Vec<ScanRecord>> {
    let mut trainer = Trainer::new(table, spec, config, config.seed)?;
    let schedule = config.schedule(spec)?;
    let total = trainer.total_entropy();
    let steps = config.steps;
    let marks = checkpoint_steps(steps, config.checkpoints);
    let mut records = Vec::with_capacity(marks.len());
    let mut next = 0;
    for t in 0..steps {
        let target = total * (t + 1) as f64 / steps as f64;
        trainer.step(target, schedule.gamma(t))?;
        while next < marks.len() && marks[next] == t + 1 {
            records.push(ScanRecord::from_trainer(&trainer, target, eval_seed(config.seed, next))?);
            next += 1;
        }
    }
    if config.further_critic_steps > 0 {
        let bits = trainer.train_critics(config.further_critic_steps)?;
        if let Some(last) = records.last_mut() {
            last.critic_bits = Some(bits);
        }
    }
    Ok(records)
}

/// One run at the fixed target `spec.iin_bits`.
pub fn run_point(table: &JointTable, spec: &ObjectiveSpec, config: &TrainConfig) -> Result<ScanRecord> {
    let target = spec
        .iin_bits
        .ok_or_else(|| Error::InvalidObjective("a point run needs iin_bits".into()))?;
    let mut trainer = Trainer::new(table, spec, config, config.seed)?;
    let schedule = config.schedule(spec)?;
    for t in 0..config.steps {
        trainer.step(target, schedule.gamma(t))?;
    }
    let mut record = ScanRecord::from_trainer(&trainer, target, eval_seed(config.seed, 0))?;
    if config.further_critic_steps > 0 {
        record.critic_bits = Some(trainer.train_critics(config.further_critic_steps)?);
    }
    Ok(record)
}

/// Worker cap from `DESCSPACE_THREADS`, defaulting to the rayon pool size.
pub fn thread_cap() -> usize {
    std::env::var("DESCSPACE_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&v| v > 0)
        .unwrap_or_else(rayon::current_num_threads)
}

fn run_repeats<T: Send>(k: usize, job: impl Fn(u64) -> Result<T> + Sync, seed: u64) -> Result<Vec<Result<T>>> {
    if k == 0 {
        return Err(Error::InvalidConfig("repeats must be at least 1".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(thread_cap().min(k))
        .build()
        .map_err(|e| Error::InvalidConfig(e.to_string()))?;
    Ok(pool.install(|| (0..k).into_par_iter().map(|r| job(derive_seed(seed, r))).collect()))
}

fn select<T>(runs: Vec<Result<T>>, score: impl Fn(&T) -> f64, maximize: bool) -> Result<T> {
    let mut best: Option<(f64, T)> = None;
    let mut first_err = None;
    for run in runs {
        match run {
            Ok(v) => {
                let q = score(&v);
                let better = match &best {
                    None => true,
                    Some((b, _)) => {
                        if maximize {
                            q > *b
                        } else {
                            q < *b
                        }
                    }
                };
                if better {
                    best = Some((q, v));
                }
            }
            Err(e) => {
                first_err.get_or_insert(e);
            }
        }
    }
    match best {
        Some((_, v)) => Ok(v),
        None => Err(first_err.unwrap()),
    }
}

/// `k` seeded point runs; returns the one with the most extreme quantity.
/// Divergent runs are skipped unless every run diverged.
pub fn best_of(table: &JointTable, spec: &ObjectiveSpec, config: &TrainConfig, k: usize) -> Result<ScanRecord> {
    let runs = run_repeats(
        k,
        |seed| {
            let cfg = TrainConfig { seed, ..config.clone() };
            run_point(table, spec, &cfg)
        },
        config.seed,
    )?;
    select(runs, |r| r.quantity.value, spec.direction == crate::objective::Direction::Maximize)
}

/// `k` seeded scans; returns the one whose quantity trace is most extreme in total.
pub fn best_of_scans(
    table: &JointTable,
    spec: &ObjectiveSpec,
    config: &TrainConfig,
    k: usize,
) -> Result<Vec<ScanRecord>> {
    let runs = run_repeats(
        k,
        |seed| {
            let cfg = TrainConfig { seed, ..config.clone() };
            run_scan(table, spec, &cfg)
        },
        config.seed,
    )?;
    select(
        runs,
        |rs| rs.iter().map(|r| r.quantity.value).sum(),
        spec.direction == crate::objective::Direction::Maximize,
    )
}
