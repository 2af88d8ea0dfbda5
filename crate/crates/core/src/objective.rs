//! Weighted sums of mutual-information terms and the information constraint.
//!
//! An objective lists index sets `A_k` and weights `w_k`. Training always
//! minimizes `Σ_{k ≥ N} w_k I(U_{A_k}; X_{A_k})` while the singleton terms are
//! held at the target `Σ_i I(U_i;X_i) = Î_in` by a penalty `γ |I_in − Î_in|`.
//! A positive weight therefore means the term is pushed down (adversarial
//! critics) and a negative weight means it is pushed up (plain InfoNCE).

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::channels::Estimate;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Minimize,
    Maximize,
}

impl Direction {
    /// Converts `Σ w_k I_k` into the reported quantity.
    pub fn sign(self) -> f64 {
        match self {
            Direction::Minimize => 1.0,
            Direction::Maximize => -1.0,
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::Minimize => "minimize",
            Direction::Maximize => "maximize",
        })
    }
}

impl FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "minimize" | "min" => Ok(Direction::Minimize),
            "maximize" | "max" => Ok(Direction::Maximize),
            _ => Err(Error::InvalidObjective(format!("unknown direction {s:?}"))),
        }
    }
}

/// How the critics of an extremized term are trained relative to the encoders.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TermRole {
    /// Encoders and critics both raise the bound.
    Direct,
    /// Critics raise the bound, encoders lower it.
    Adversarial,
}

/// Penalty coefficient: `γ0` for the first half of training, then exponential growth to `γ1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaSchedule {
    pub gamma0: f64,
    pub gamma1: f64,
    pub total_steps: usize,
}

impl GammaSchedule {
    pub fn new(gamma0: f64, gamma1: f64, total_steps: usize) -> Result<Self> {
        let s = GammaSchedule {
            gamma0,
            gamma1,
            total_steps,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn constant(gamma: f64, total_steps: usize) -> Result<Self> {
        Self::new(gamma, gamma, total_steps)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma0 > 0.0) || !self.gamma0.is_finite() || !self.gamma1.is_finite() {
            return Err(Error::InvalidObjective(format!(
                "gamma values must be positive and finite, got {} and {}",
                self.gamma0, self.gamma1
            )));
        }
        if self.gamma1 < self.gamma0 {
            return Err(Error::InvalidObjective(format!(
                "final gamma {} is below initial gamma {}",
                self.gamma1, self.gamma0
            )));
        }
        if self.total_steps == 0 {
            return Err(Error::InvalidObjective("gamma schedule needs at least one step".into()));
        }
        Ok(())
    }

    /// `γ(t)`; steps past `total_steps` keep the final value.
    pub fn gamma(&self, t: usize) -> f64 {
        let total = self.total_steps as f64;
        let t = (t as f64).min(total);
        if 2.0 * t <= total || self.gamma0 == self.gamma1 {
            self.gamma0
        } else {
            self.gamma0 * (self.gamma1 / self.gamma0).powf(2.0 * t / total - 1.0)
        }
    }
}

/// Terms, weights, direction and the information target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveSpec {
    pub terms: Vec<Vec<usize>>,
    pub weights: Vec<f64>,
    pub direction: Direction,
    /// Target `Î_in` in bits. Scans ignore it and ramp the target instead.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iin_bits: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<GammaSchedule>,
}

impl ObjectiveSpec {
    /// Total correlation: `Σ_i I(U_i;X_i) − I(U;X)`.
    pub fn tc(n: usize, direction: Direction) -> Result<Self> {
        if n < 2 {
            return Err(Error::TooFewComponents { required: 2, got: n });
        }
        let mut terms: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
        terms.push((0..n).collect());
        let mut weights = vec![1.0; n];
        weights.push(-1.0);
        Ok(Self::signed(terms, weights, direction))
    }

    /// O-information: `(N−2) I(U;X) + Σ_i [I(U_i;X_i) − I(U_{/i};X_{/i})]`.
    pub fn o_information(n: usize, direction: Direction) -> Result<Self> {
        if n < 3 {
            return Err(Error::TooFewComponents { required: 3, got: n });
        }
        let mut terms: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
        let mut weights = vec![1.0; n];
        for i in 0..n {
            terms.push((0..n).filter(|&j| j != i).collect());
            weights.push(-1.0);
        }
        terms.push((0..n).collect());
        weights.push(n as f64 - 2.0);
        Ok(Self::signed(terms, weights, direction))
    }

    fn signed(terms: Vec<Vec<usize>>, weights: Vec<f64>, direction: Direction) -> Self {
        let sign = direction.sign();
        ObjectiveSpec {
            terms,
            weights: weights.into_iter().map(|w| sign * w).collect(),
            direction,
            iin_bits: None,
            gamma: None,
        }
    }

    pub fn with_target(mut self, iin_bits: f64) -> Self {
        self.iin_bits = Some(iin_bits);
        self
    }

    pub fn with_gamma(mut self, gamma: GammaSchedule) -> Self {
        self.gamma = Some(gamma);
        self
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Json {
            path: path.to_path_buf(),
            source: e,
        })
    }

    /// Checks the spec against an `n`-component system; sorts index sets and
    /// merges duplicate terms by summing their weights.
    pub fn validate(&self, n: usize) -> Result<ObjectiveSpec> {
        if self.terms.len() != self.weights.len() {
            return Err(Error::InvalidObjective(format!(
                "{} terms but {} weights",
                self.terms.len(),
                self.weights.len()
            )));
        }
        if let Some(w) = self.weights.iter().find(|w| !w.is_finite()) {
            return Err(Error::InvalidObjective(format!("weight {w} is not finite")));
        }
        if let Some(t) = self.iin_bits {
            if !(t >= 0.0) || !t.is_finite() {
                return Err(Error::InvalidObjective(format!("target information {t} is invalid")));
            }
        }
        if let Some(g) = &self.gamma {
            g.validate()?;
        }
        let mut order: Vec<Vec<usize>> = Vec::new();
        let mut merged: BTreeMap<Vec<usize>, f64> = BTreeMap::new();
        for (term, &w) in self.terms.iter().zip(&self.weights) {
            let mut t = term.clone();
            t.sort_unstable();
            if t.is_empty() {
                return Err(Error::InvalidObjective("empty term".into()));
            }
            if t.windows(2).any(|p| p[0] == p[1]) {
                return Err(Error::InvalidObjective(format!("term {term:?} repeats an index")));
            }
            if let Some(&i) = t.iter().find(|&&i| i >= n) {
                return Err(Error::InvalidObjective(format!(
                    "index {i} out of range for {n} components"
                )));
            }
            match merged.get_mut(&t) {
                Some(acc) => *acc += w,
                None => {
                    merged.insert(t.clone(), w);
                    order.push(t);
                }
            }
        }
        for i in 0..n {
            if order.get(i) != Some(&vec![i]) {
                return Err(Error::InvalidObjective(format!(
                    "the first {n} terms must be the singletons [0]..[{}]",
                    n - 1
                )));
            }
        }
        let mut terms = Vec::with_capacity(order.len());
        let mut weights = Vec::with_capacity(order.len());
        for (k, t) in order.into_iter().enumerate() {
            let w = merged[&t];
            if k >= n && w == 0.0 {
                continue;
            }
            terms.push(t);
            weights.push(w);
        }
        Ok(ObjectiveSpec {
            terms,
            weights,
            direction: self.direction,
            iin_bits: self.iin_bits,
            gamma: self.gamma,
        })
    }

    /// Number of leading singleton terms, i.e. the component count.
    pub fn n_components(&self) -> usize {
        self.terms
            .iter()
            .enumerate()
            .take_while(|(i, t)| t.as_slice() == [*i])
            .count()
    }

    /// `(index, term, weight)` of every term after the singleton prefix.
    pub fn extremized(&self) -> impl Iterator<Item = (usize, &[usize], f64)> + '_ {
        let n = self.n_components();
        self.terms
            .iter()
            .zip(&self.weights)
            .enumerate()
            .skip(n)
            .map(|(k, (t, &w))| (k, t.as_slice(), w))
    }

    pub fn role(weight: f64) -> TermRole {
        if weight > 0.0 {
            TermRole::Adversarial
        } else {
            TermRole::Direct
        }
    }

    /// Reported quantity `sign · Σ_k w_k I_k` from exact term values (bits).
    pub fn quantity_exact(&self, values: &[f64]) -> Result<f64> {
        self.check_len(values.len())?;
        Ok(self.direction.sign() * values.iter().zip(&self.weights).map(|(v, w)| v * w).sum::<f64>())
    }

    /// Reported quantity with standard errors combined in quadrature.
    pub fn quantity(&self, estimates: &[Estimate]) -> Result<Estimate> {
        self.check_len(estimates.len())?;
        let sign = self.direction.sign();
        Ok(Estimate::weighted_sum(
            self.weights.iter().map(|w| sign * w).zip(estimates),
        ))
    }

    fn check_len(&self, got: usize) -> Result<()> {
        if got == self.terms.len() {
            Ok(())
        } else {
            Err(Error::InvalidObjective(format!(
                "{} values for {} terms",
                got,
                self.terms.len()
            )))
        }
    }

    /// `γ |I_in − Î_in| + Σ_{k ≥ N} w_k I_k`.
    ///
    /// `extremized` holds one estimate per non-singleton term, in order.
    pub fn loss(&self, extremized: &[f64], i_in: f64, target: f64, gamma: f64) -> Result<f64> {
        let n = self.n_components();
        if extremized.len() != self.terms.len() - n {
            return Err(Error::InvalidObjective(format!(
                "{} estimates for {} extremized terms",
                extremized.len(),
                self.terms.len() - n
            )));
        }
        if let Some(v) = extremized.iter().chain([&i_in, &target, &gamma]).find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("loss input {v}")));
        }
        let terms: f64 = extremized.iter().zip(&self.weights[n..]).map(|(v, w)| v * w).sum();
        Ok(gamma * (i_in - target).abs() + terms)
    }
}
