//! Exact information-theoretic quantities over explicit joint tables.
//!
//! All entropies are in bits. Zero-mass outcomes are never stored, so
//! `0 log 0` terms simply do not appear.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channels::{ChannelMatrix, HardChannel};
use crate::error::{Error, Result};
use crate::systems::JointTable;

/// Summary quantity charted over description space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Quantity {
    /// Total correlation.
    Tc,
    /// O-information.
    O,
}

impl std::str::FromStr for Quantity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tc" => Ok(Quantity::Tc),
            "o" => Ok(Quantity::O),
            other => Err(Error::InvalidObjective(format!("unknown quantity {other:?}"))),
        }
    }
}

fn entropy_of_masses(masses: &[f64]) -> f64 {
    let h: f64 = masses
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| -p * p.log2())
        .sum();
    h.max(0.0)
}

/// Shannon entropy of the marginal on `subset`. The empty subset has entropy 0.
pub fn entropy(table: &JointTable, subset: &[usize]) -> Result<f64> {
    table.check_subset(subset)?;
    Ok(entropy_of_masses(&table.marginal_masses(subset)))
}

fn full(table: &JointTable) -> Vec<usize> {
    (0..table.n_components()).collect()
}

fn without(n: usize, skip: usize) -> Vec<usize> {
    (0..n).filter(|&j| j != skip).collect()
}

/// `Σ_i H(X_i) − H(X)`.
pub fn total_correlation(table: &JointTable) -> Result<f64> {
    let n = table.n_components();
    let singles: f64 = (0..n).map(|i| entropy(table, &[i])).sum::<Result<f64>>()?;
    Ok(singles - entropy(table, &full(table))?)
}

/// O-information `(N−2)H(X) + Σ_i [H(X_i) − H(X_{/i})]`; positive values are
/// redundancy-dominated, negative synergy-dominated.
pub fn o_information(table: &JointTable) -> Result<f64> {
    let n = table.n_components();
    if n < 3 {
        return Err(Error::TooFewComponents { required: 3, got: n });
    }
    o_information_any(table)
}

/// O-information without the `N ≥ 3` requirement (it vanishes for fewer
/// than three non-constant components).
pub(crate) fn o_information_any(table: &JointTable) -> Result<f64> {
    let n = table.n_components();
    let mut omega = (n as f64 - 2.0) * entropy(table, &full(table))?;
    for i in 0..n {
        omega += entropy(table, &[i])? - entropy(table, &without(n, i))?;
    }
    Ok(omega)
}

/// Mutual information `I(X_a; X_b)` between two disjoint index sets.
pub fn mutual_information(table: &JointTable, a: &[usize], b: &[usize]) -> Result<f64> {
    let mut both: Vec<usize> = a.iter().chain(b).copied().collect();
    both.sort_unstable();
    let len = both.len();
    both.dedup();
    if both.len() != len {
        return Err(Error::InvalidSubset("mutual information sets overlap".into()));
    }
    Ok(entropy(table, a)? + entropy(table, b)? - entropy(table, &both)?)
}

fn check_channels(table: &JointTable, channels: &[ChannelMatrix]) -> Result<()> {
    if channels.len() != table.n_components() {
        return Err(Error::ChannelMismatch(format!(
            "{} channels for {} components",
            channels.len(),
            table.n_components()
        )));
    }
    for (i, (c, &m)) in channels.iter().zip(table.alphabet_sizes()).enumerate() {
        if c.n_inputs() != m {
            return Err(Error::ChannelMismatch(format!(
                "channel {i} accepts {} outcomes but component has {m}",
                c.n_inputs()
            )));
        }
    }
    Ok(())
}

/// Enumerates `(u, p(u|x))` over all codes with positive conditional mass,
/// as a product over components.
fn for_each_code(
    channels: &[ChannelMatrix],
    x: &[u32],
    mut visit: impl FnMut(&[u32], f64),
) {
    let mut code = vec![0u32; channels.len()];
    fn rec(
        i: usize,
        channels: &[ChannelMatrix],
        x: &[u32],
        code: &mut Vec<u32>,
        p: f64,
        visit: &mut dyn FnMut(&[u32], f64),
    ) {
        if i == channels.len() {
            visit(code, p);
            return;
        }
        let row = channels[i].row(x[i] as usize);
        for (u, &q) in row.iter().enumerate() {
            if q > 0.0 {
                code[i] = u as u32;
                rec(i + 1, channels, x, code, p * q, visit);
            }
        }
    }
    rec(0, channels, x, &mut code, 1.0, &mut visit);
}

/// Exact pushforward `p(u) = Σ_x p(x) Π_i p(u_i|x_i)` through stochastic
/// per-component channels.
pub fn pushforward(table: &JointTable, channels: &[ChannelMatrix]) -> Result<JointTable> {
    check_channels(table, channels)?;
    let sizes: Vec<usize> = channels.iter().map(|c| c.n_outputs()).collect();
    let mut acc: HashMap<Vec<u32>, f64> = HashMap::new();
    let mut order = Vec::new();
    for (x, p) in table.rows() {
        for_each_code(channels, x, |u, q| {
            let e = acc.entry(u.to_vec()).or_insert_with(|| {
                order.push(u.to_vec());
                0.0
            });
            *e += p * q;
        });
    }
    JointTable::from_weights(
        sizes,
        order.into_iter().map(|u| {
            let p = acc[&u];
            (u, p)
        }),
    )
}

/// Joint table over `(X, U)`: components `0..N` are the system, `N..2N` the
/// description.
pub fn joint_with_description(
    table: &JointTable,
    channels: &[ChannelMatrix],
) -> Result<JointTable> {
    check_channels(table, channels)?;
    let mut sizes = table.alphabet_sizes().to_vec();
    sizes.extend(channels.iter().map(|c| c.n_outputs()));
    let mut entries = Vec::new();
    for (x, p) in table.rows() {
        for_each_code(channels, x, |u, q| {
            let mut xu = x.to_vec();
            xu.extend_from_slice(u);
            entries.push((xu, p * q));
        });
    }
    JointTable::from_weights(sizes, entries)
}

/// Exact pushforward through hard (deterministic) channels.
pub fn description_joint(table: &JointTable, channels: &[HardChannel]) -> Result<JointTable> {
    if channels.len() != table.n_components() {
        return Err(Error::ChannelMismatch(format!(
            "{} channels for {} components",
            channels.len(),
            table.n_components()
        )));
    }
    for (i, (c, &m)) in channels.iter().zip(table.alphabet_sizes()).enumerate() {
        if c.n_inputs() != m {
            return Err(Error::ChannelMismatch(format!(
                "channel {i} accepts {} outcomes but component has {m}",
                c.n_inputs()
            )));
        }
    }
    let sizes = channels.iter().map(|c| c.n_labels()).collect();
    let entries: Vec<(Vec<u32>, f64)> = table
        .rows()
        .map(|(x, p)| {
            let u = x
                .iter()
                .zip(channels)
                .map(|(&xi, c)| c.label(xi as usize))
                .collect();
            (u, p)
        })
        .collect();
    JointTable::from_weights(sizes, entries)
}

/// Per-code contribution to a summary quantity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointwiseReport {
    pub code: Vec<u32>,
    pub mass: f64,
    /// `tc(u)` or `ω(u)` in bits.
    pub local_value: f64,
    /// `p(u)` times the local value.
    pub contribution: f64,
}

fn keyed_marginal(table: &JointTable, subset: &[usize]) -> (Vec<u64>, HashMap<u64, f64>) {
    let keys: Vec<u64> = (0..table.support_size())
        .map(|r| table.subset_key(r, subset))
        .collect();
    let mut m = HashMap::new();
    for (r, &k) in keys.iter().enumerate() {
        *m.entry(k).or_insert(0.0) += table.prob(r);
    }
    (keys, m)
}

/// Per-row `log2 p(u_S)` for each subset in `subsets`.
fn log_marginals(table: &JointTable, subset: &[usize]) -> Vec<f64> {
    let (keys, m) = keyed_marginal(table, subset);
    keys.iter().map(|k| m[k].log2()).collect()
}

fn log_product_of_singles(table: &JointTable) -> Vec<f64> {
    let n = table.n_components();
    let mut out = vec![0.0; table.support_size()];
    for i in 0..n {
        for (o, l) in out.iter_mut().zip(log_marginals(table, &[i])) {
            *o += l;
        }
    }
    out
}

/// Local total correlation `tc(u) = log2[p(u) / Π_i p(u_i)]` for every code.
pub fn pointwise_tc(table: &JointTable) -> Vec<PointwiseReport> {
    let singles = log_product_of_singles(table);
    table
        .rows()
        .zip(singles)
        .map(|((u, p), ls)| {
            let local = p.log2() - ls;
            PointwiseReport {
                code: u.to_vec(),
                mass: p,
                local_value: local,
                contribution: p * local,
            }
        })
        .collect()
}

/// Local O-information
/// `ω(u) = 2 log2[p(u)/Π p(u_i)] − Σ_i log2[p(u)/(p(u_{/i}) p(u_i))]`.
pub fn pointwise_o(table: &JointTable) -> Result<Vec<PointwiseReport>> {
    let n = table.n_components();
    if n < 3 {
        return Err(Error::TooFewComponents { required: 3, got: n });
    }
    let rows = table.support_size();
    let singles: Vec<Vec<f64>> = (0..n).map(|i| log_marginals(table, &[i])).collect();
    let leave_one_out: Vec<Vec<f64>> = (0..n)
        .map(|i| log_marginals(table, &without(n, i)))
        .collect();
    Ok((0..rows)
        .map(|r| {
            let lp = table.prob(r).log2();
            let prod: f64 = singles.iter().map(|s| s[r]).sum();
            let mut local = 2.0 * (lp - prod);
            for i in 0..n {
                local -= lp - leave_one_out[i][r] - singles[i][r];
            }
            PointwiseReport {
                code: table.outcome(r).to_vec(),
                mass: table.prob(r),
                local_value: local,
                contribution: table.prob(r) * local,
            }
        })
        .collect())
}

/// Sorts reports by contribution, largest first.
pub fn sort_by_contribution(reports: &mut [PointwiseReport]) {
    reports.sort_by(|a, b| {
        b.contribution
            .total_cmp(&a.contribution)
            .then_with(|| a.code.cmp(&b.code))
    });
}

/// A description conveying full information on `subset` and nothing elsewhere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsystemPoint {
    pub subset: Vec<usize>,
    /// `Σ_{i∈S} H(X_i)`.
    pub component_info: f64,
    /// `H(X_S)`, the information the description carries about the system.
    pub system_info: f64,
    pub quantity: f64,
}

/// Largest system whose subsets are enumerated.
pub const MAX_SUBSYSTEM_COMPONENTS: usize = 20;

/// Evaluates every discrete subsystem exactly, in order of subset bitmask.
pub fn subsystem_points(table: &JointTable, quantity: Quantity) -> Result<Vec<SubsystemPoint>> {
    let n = table.n_components();
    if n > MAX_SUBSYSTEM_COMPONENTS {
        return Err(Error::TooLarge(format!(
            "{n} components: 2^{n} subsets exceeds the enumeration limit"
        )));
    }
    let masks: Vec<usize> = (0..1usize << n).collect();
    let subset_of = |mask: usize| -> Vec<usize> { (0..n).filter(|i| mask >> i & 1 == 1).collect() };
    let h: Vec<f64> = masks
        .par_iter()
        .map(|&mask| entropy_of_masses(&table.marginal_masses(&subset_of(mask))))
        .collect();
    let points = masks
        .iter()
        .map(|&mask| {
            let subset = subset_of(mask);
            let component_info: f64 = subset.iter().map(|&i| h[1 << i]).sum();
            let system_info = h[mask];
            let value = match quantity {
                Quantity::Tc => component_info - system_info,
                Quantity::O => {
                    let k = subset.len() as f64;
                    let mut omega = (k - 2.0) * system_info;
                    for &i in &subset {
                        omega += h[1 << i] - h[mask & !(1 << i)];
                    }
                    // Fewer than three components carry no O-information.
                    if subset.len() < 3 {
                        0.0
                    } else {
                        omega
                    }
                }
            };
            SubsystemPoint {
                subset,
                component_info,
                system_info,
                quantity: value,
            }
        })
        .collect();
    Ok(points)
}

/// Evaluates `quantity` of a description table.
pub fn quantity_of(table: &JointTable, quantity: Quantity) -> Result<f64> {
    match quantity {
        Quantity::Tc => total_correlation(table),
        Quantity::O => o_information_any(table),
    }
}
