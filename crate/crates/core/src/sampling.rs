//! Non-learned surveys of description space: random binary symmetric
//! channels, enumerated hard partitions and band-conditioned hard samples.

use std::collections::HashMap;

use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channels::{bsc_exact_mi, BscChannel, ChannelMatrix, HardChannel};
use crate::error::{Error, Result};
use crate::infotheory::{description_joint, quantity_of, pushforward, Quantity};
use crate::systems::JointTable;

/// Largest alphabet whose partitions are enumerated (Bell(8) = 4140).
pub const MAX_PARTITION_ALPHABET: usize = 8;

/// Below this acceptance rate a naive draw-and-reject loop is hopeless. The
/// conditional sampler is unaffected, so callers only warn.
pub const LOW_ACCEPTANCE_RATE: f64 = 1e-6;

/// Histogram bin width for sampled quantities, in bits.
pub const HISTOGRAM_BIN_BITS: f64 = 0.05;

const SHARD: usize = 1024;
const MAX_SUM_STATES: usize = 1 << 22;

/// Every set partition of `m` elements as a restricted growth string:
/// element `j` gets label at most one more than the largest label before it.
/// Lexicographic order, starting with the single block.
pub fn enumerate_partitions(m: usize) -> Result<Vec<Vec<u32>>> {
    if m > MAX_PARTITION_ALPHABET {
        return Err(Error::TooLarge(format!(
            "partitions of {m} elements (limit {MAX_PARTITION_ALPHABET})"
        )));
    }
    let mut out = Vec::new();
    let mut labels = vec![0u32; m];
    fn rec(j: usize, max: u32, labels: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if j == labels.len() {
            out.push(labels.clone());
            return;
        }
        for l in 0..=max + 1 {
            labels[j] = l;
            rec(j + 1, max.max(l), labels, out);
        }
    }
    if m == 0 {
        out.push(Vec::new());
    } else {
        rec(1, 0, &mut labels, &mut out);
    }
    Ok(out)
}

/// Closed interval on `Σ_i I(X_i;U_i)`, in bits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InformationBand {
    pub lower: f64,
    pub upper: f64,
}

impl InformationBand {
    pub fn new(lower: f64, upper: f64) -> Result<Self> {
        if !(lower <= upper) || !lower.is_finite() || !upper.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "information band [{lower}, {upper}] is empty or not finite"
            )));
        }
        Ok(InformationBand { lower, upper })
    }

    pub fn contains(&self, bits: f64) -> bool {
        bits >= self.lower && bits <= self.upper
    }
}

/// One randomly drawn binary symmetric description, evaluated exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BscPoint {
    pub flips: Vec<f64>,
    pub sum_info: f64,
    pub tc: f64,
    pub o: f64,
}

fn shard_rngs<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<(usize, ChaCha8Rng)> {
    let base: u64 = rng.random();
    (0..n.div_ceil(SHARD))
        .map(|s| {
            let mut r = ChaCha8Rng::seed_from_u64(base);
            r.set_stream(s as u64);
            (s, r)
        })
        .collect()
}

fn shard_len(n: usize, s: usize) -> usize {
    SHARD.min(n - s * SHARD)
}

/// Draws `n_draws` descriptions with an independent flip probability
/// `e_i ~ U[0, 0.5]` per component and evaluates each exactly.
pub fn random_bsc_survey<R: Rng + ?Sized>(
    table: &JointTable,
    n_draws: usize,
    rng: &mut R,
) -> Result<Vec<BscPoint>> {
    if let Some(i) = table.alphabet_sizes().iter().position(|&m| m != 2) {
        return Err(Error::ChannelMismatch(format!(
            "component {i} has {} outcomes; binary symmetric channels need 2",
            table.alphabet_sizes()[i]
        )));
    }
    let n = table.n_components();
    let marginals: Vec<Vec<f64>> = (0..n).map(|i| table.component_marginal(i)).collect();
    let shards = shard_rngs(rng, n_draws)
        .into_par_iter()
        .map(|(s, mut r)| {
            (0..shard_len(n_draws, s))
                .map(|_| {
                    let flips: Vec<f64> = (0..n).map(|_| r.random_range(0.0..=0.5)).collect();
                    bsc_point(table, &marginals, flips)
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(shards.into_iter().flatten().collect())
}

/// Exact evaluation of the description with the given flip probabilities.
pub fn bsc_point(table: &JointTable, marginals: &[Vec<f64>], flips: Vec<f64>) -> Result<BscPoint> {
    let mut sum_info = 0.0;
    let mut mats = Vec::with_capacity(flips.len());
    for (&e, m) in flips.iter().zip(marginals) {
        sum_info += bsc_exact_mi(&BscChannel::new(e)?, m)?;
        mats.push(ChannelMatrix::bsc(e)?);
    }
    let u = pushforward(table, &mats)?;
    Ok(BscPoint {
        tc: quantity_of(&u, Quantity::Tc)?,
        o: quantity_of(&u, Quantity::O)?,
        flips,
        sum_info,
    })
}

/// One hard description with its exact summary quantities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HardSample {
    pub partitions: Vec<Vec<u32>>,
    pub sum_info: f64,
    pub tc: f64,
    pub o: f64,
}

impl HardSample {
    pub fn evaluate(table: &JointTable, partitions: Vec<Vec<u32>>) -> Result<Self> {
        let channels = partitions
            .iter()
            .map(|p| HardChannel::from_labels(p.clone()))
            .collect::<Result<Vec<_>>>()?;
        let sum_info = channels
            .iter()
            .enumerate()
            .map(|(i, c)| c.exact_mi(&table.component_marginal(i)))
            .sum();
        let u = description_joint(table, &channels)?;
        Ok(HardSample {
            partitions,
            sum_info,
            tc: quantity_of(&u, Quantity::Tc)?,
            o: quantity_of(&u, Quantity::O)?,
        })
    }
}

/// Band-conditioned hard descriptions plus the rate at which uniformly drawn
/// descriptions would land in the band.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectionSample {
    pub band: InformationBand,
    pub acceptance_rate: f64,
    pub samples: Vec<HardSample>,
}

/// Partitions of one component grouped by the information they transmit.
struct ComponentLevels {
    partitions: Vec<Vec<u32>>,
    /// `(bits, partition indices)` per distinct information value.
    levels: Vec<(f64, Vec<usize>)>,
}

impl ComponentLevels {
    fn new(m: usize, marginal: &[f64]) -> Result<Self> {
        let partitions = enumerate_partitions(m)?;
        let mut levels: Vec<(f64, Vec<usize>)> = Vec::new();
        let mut index: HashMap<u64, usize> = HashMap::new();
        for (j, p) in partitions.iter().enumerate() {
            let bits = HardChannel::from_labels(p.clone())?.exact_mi(marginal);
            let k = *index.entry(bits.to_bits()).or_insert_with(|| {
                levels.push((bits, Vec::new()));
                levels.len() - 1
            });
            levels[k].1.push(j);
        }
        Ok(ComponentLevels { partitions, levels })
    }
}

/// Distribution of the running information sum after each component, with
/// back-pointers for conditional sampling. Sums are accumulated left to right
/// exactly as `HardSample::evaluate` does, so band membership is decided on
/// the same floating-point value.
struct SumLattice {
    /// `layers[i]`: partial sums over components `0..=i` with their mass.
    layers: Vec<Vec<(f64, f64)>>,
    /// `preds[i][s]`: `(state in layer i-1, level of component i, mass)`.
    preds: Vec<Vec<Vec<(usize, usize, f64)>>>,
}

impl SumLattice {
    fn new(components: &[ComponentLevels]) -> Result<Self> {
        let mut layers: Vec<Vec<(f64, f64)>> = Vec::with_capacity(components.len());
        let mut preds = Vec::with_capacity(components.len());
        let start = vec![(0.0f64, 1.0f64)];
        for (i, comp) in components.iter().enumerate() {
            let prev = if i == 0 { &start } else { &layers[i - 1] };
            let total = comp.partitions.len() as f64;
            let mut states: Vec<(f64, f64)> = Vec::new();
            let mut back: Vec<Vec<(usize, usize, f64)>> = Vec::new();
            let mut index: HashMap<u64, usize> = HashMap::new();
            for (s, &(sum, mass)) in prev.iter().enumerate() {
                for (l, (bits, members)) in comp.levels.iter().enumerate() {
                    let next = if i == 0 { *bits } else { sum + bits };
                    let w = mass * members.len() as f64 / total;
                    let k = *index.entry(next.to_bits()).or_insert_with(|| {
                        states.push((next, 0.0));
                        back.push(Vec::new());
                        states.len() - 1
                    });
                    states[k].1 += w;
                    back[k].push((s, l, w));
                }
            }
            if states.len() > MAX_SUM_STATES {
                return Err(Error::TooLarge(format!(
                    "{} distinct information sums after component {i}",
                    states.len()
                )));
            }
            layers.push(states);
            preds.push(back);
        }
        Ok(SumLattice { layers, preds })
    }
}

/// Hard descriptions drawn uniformly (one partition per component, uniform
/// over that component's partition list) and kept iff their exact
/// `Σ I(X_i;U_i)` lies in `band`.
///
/// The conditional distribution is sampled directly by walking the lattice of
/// information sums backwards, which yields exactly the accepted draws of the
/// naive loop without the wasted draws. The reported acceptance rate is the
/// exact probability of landing in the band. Only a band no description can
/// reach is an error.
pub fn rejection_sample_hard<R: Rng + ?Sized>(
    table: &JointTable,
    band: InformationBand,
    n_accepted: usize,
    rng: &mut R,
) -> Result<RejectionSample> {
    let n = table.n_components();
    let components = (0..n)
        .map(|i| ComponentLevels::new(table.alphabet_sizes()[i], &table.component_marginal(i)))
        .collect::<Result<Vec<_>>>()?;
    let lattice = SumLattice::new(&components)?;
    let finals = lattice.layers.last().map(|l| l.as_slice()).unwrap_or(&[]);
    let inside: Vec<(usize, f64)> = finals
        .iter()
        .enumerate()
        .filter(|(_, (sum, _))| band.contains(*sum))
        .map(|(s, &(_, mass))| (s, mass))
        .collect();
    let acceptance_rate: f64 = inside.iter().map(|(_, m)| m).sum();
    if acceptance_rate == 0.0 {
        return Err(Error::BandUnreachable(format!(
            "no hard description has total component information in [{}, {}]",
            band.lower, band.upper
        )));
    }
    let final_pick = WeightedIndex::new(inside.iter().map(|(_, m)| *m))
        .map_err(|e| Error::NonFinite(e.to_string()))?;
    let pred_picks = lattice
        .preds
        .iter()
        .map(|layer| {
            layer
                .iter()
                .map(|b| WeightedIndex::new(b.iter().map(|p| p.2)))
                .collect::<std::result::Result<Vec<_>, _>>()
        })
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| Error::NonFinite(e.to_string()))?;

    let shards = shard_rngs(rng, n_accepted)
        .into_par_iter()
        .map(|(s, mut r)| {
            (0..shard_len(n_accepted, s))
                .map(|_| {
                    let mut state = inside[final_pick.sample(&mut r)].0;
                    let mut partitions = vec![Vec::new(); n];
                    for i in (0..n).rev() {
                        let (prev, level, _) = lattice.preds[i][state][pred_picks[i][state].sample(&mut r)];
                        let members = &components[i].levels[level].1;
                        let j = members[r.random_range(0..members.len())];
                        partitions[i] = components[i].partitions[j].clone();
                        state = prev;
                    }
                    let sample = HardSample::evaluate(table, partitions)?;
                    debug_assert!(band.contains(sample.sum_info));
                    Ok(sample)
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RejectionSample {
        band,
        acceptance_rate,
        samples: shards.into_iter().flatten().collect(),
    })
}

/// Counts per bin of width `width`, bins aligned to multiples of `width`.
/// Returns `(bin lower edge, count)` in increasing order, skipping empty bins.
pub fn histogram(values: &[f64], width: f64) -> Vec<(f64, usize)> {
    let mut counts: HashMap<i64, usize> = HashMap::new();
    for &v in values.iter().filter(|v| v.is_finite()) {
        *counts.entry((v / width).floor() as i64).or_default() += 1;
    }
    let mut bins: Vec<(i64, usize)> = counts.into_iter().collect();
    bins.sort_unstable();
    bins.into_iter().map(|(b, c)| (b as f64 * width, c)).collect()
}

/// Mean and sample standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (mean, var.sqrt())
}
