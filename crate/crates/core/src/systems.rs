//! Exact joint distributions for composite systems.
//!
//! Three families are supported out of the box: Boltzmann-distributed Ising
//! spin systems (enumerated exactly), uniform distributions over valid 4x4
//! sudoku boards, and 4-gram letter statistics compiled from a word
//! frequency list. Arbitrary tables can be supplied directly.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::Rng;
use rand_distr::weighted::WeightedAliasIndex;
use rand_distr::Distribution;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on total probability mass.
pub const MASS_TOLERANCE: f64 = 1e-12;

/// Largest spin system enumerated exactly.
pub const MAX_ISING_SPINS: usize = 20;

/// Explicit joint probability table over `N` finite-alphabet components.
///
/// Only outcomes with positive mass are stored. Outcome tuples are kept in a
/// flat row-major buffer; component `i` of row `r` is `outcomes[r * N + i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTable", into = "RawTable")]
pub struct JointTable {
    alphabet_sizes: Vec<usize>,
    outcomes: Vec<u32>,
    probs: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawTable {
    alphabet_sizes: Vec<usize>,
    outcomes: Vec<Vec<u32>>,
    probs: Vec<f64>,
}

impl TryFrom<RawTable> for JointTable {
    type Error = Error;

    fn try_from(raw: RawTable) -> Result<Self> {
        if raw.outcomes.len() != raw.probs.len() {
            return Err(Error::InvalidTable(format!(
                "{} outcomes but {} probabilities",
                raw.outcomes.len(),
                raw.probs.len()
            )));
        }
        JointTable::new(raw.alphabet_sizes, raw.outcomes.into_iter().zip(raw.probs))
    }
}

impl From<JointTable> for RawTable {
    fn from(t: JointTable) -> Self {
        RawTable {
            outcomes: t.rows().map(|(x, _)| x.to_vec()).collect(),
            probs: t.probs.clone(),
            alphabet_sizes: t.alphabet_sizes,
        }
    }
}

impl JointTable {
    /// Builds a table from `(outcome, mass)` pairs whose masses already sum to one.
    ///
    /// Duplicate outcomes are merged and zero-mass outcomes dropped.
    pub fn new<I>(alphabet_sizes: Vec<usize>, entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = (Vec<u32>, f64)>,
    {
        let table = Self::collect(alphabet_sizes, entries)?;
        let total: f64 = table.probs.iter().sum();
        if (total - 1.0).abs() > MASS_TOLERANCE {
            return Err(Error::InvalidTable(format!(
                "total mass {total} differs from 1 by more than {MASS_TOLERANCE:e}"
            )));
        }
        Ok(table)
    }

    /// Builds a table from non-negative weights, normalizing them.
    pub fn from_weights<I>(alphabet_sizes: Vec<usize>, entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = (Vec<u32>, f64)>,
    {
        let mut table = Self::collect(alphabet_sizes, entries)?;
        let total: f64 = table.probs.iter().sum();
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::InvalidTable(format!("total weight {total} is not positive")));
        }
        for p in &mut table.probs {
            *p /= total;
        }
        Ok(table)
    }

    fn collect<I>(alphabet_sizes: Vec<usize>, entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = (Vec<u32>, f64)>,
    {
        let n = alphabet_sizes.len();
        if n == 0 {
            return Err(Error::InvalidTable("no components".into()));
        }
        if let Some(i) = alphabet_sizes.iter().position(|&m| m == 0) {
            return Err(Error::InvalidTable(format!("component {i} has an empty alphabet")));
        }
        let log_space: f64 = alphabet_sizes.iter().map(|&m| (m as f64).log2()).sum();
        if log_space >= 63.0 {
            return Err(Error::TooLarge(format!(
                "outcome space of 2^{log_space:.1} states does not fit a 64-bit index"
            )));
        }
        let mut index: HashMap<Vec<u32>, usize> = HashMap::new();
        let mut outcomes = Vec::new();
        let mut probs: Vec<f64> = Vec::new();
        for (x, p) in entries {
            if x.len() != n {
                return Err(Error::InvalidTable(format!(
                    "outcome {x:?} has length {} but the table has {n} components",
                    x.len()
                )));
            }
            for (i, (&xi, &m)) in x.iter().zip(&alphabet_sizes).enumerate() {
                if xi as usize >= m {
                    return Err(Error::InvalidTable(format!(
                        "outcome {x:?}: component {i} value {xi} outside [0, {m})"
                    )));
                }
            }
            if !p.is_finite() || p < 0.0 {
                return Err(Error::InvalidTable(format!("outcome {x:?} has mass {p}")));
            }
            if p == 0.0 {
                continue;
            }
            match index.get(&x) {
                Some(&r) => probs[r] += p,
                None => {
                    index.insert(x.clone(), probs.len());
                    outcomes.extend_from_slice(&x);
                    probs.push(p);
                }
            }
        }
        if probs.is_empty() {
            return Err(Error::InvalidTable("no outcome has positive mass".into()));
        }
        Ok(JointTable {
            alphabet_sizes,
            outcomes,
            probs,
        })
    }

    pub fn n_components(&self) -> usize {
        self.alphabet_sizes.len()
    }

    pub fn alphabet_sizes(&self) -> &[usize] {
        &self.alphabet_sizes
    }

    /// Number of outcomes with positive mass.
    pub fn support_size(&self) -> usize {
        self.probs.len()
    }

    pub fn outcome(&self, row: usize) -> &[u32] {
        let n = self.n_components();
        &self.outcomes[row * n..(row + 1) * n]
    }

    pub fn prob(&self, row: usize) -> f64 {
        self.probs[row]
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn rows(&self) -> impl Iterator<Item = (&[u32], f64)> + '_ {
        self.outcomes
            .chunks_exact(self.n_components())
            .zip(self.probs.iter().copied())
    }

    /// Probability of a full outcome tuple (zero when absent).
    pub fn prob_of(&self, x: &[u32]) -> f64 {
        self.rows()
            .filter(|(o, _)| *o == x)
            .map(|(_, p)| p)
            .sum()
    }

    /// Checks that `subset` is strictly increasing and within range.
    pub fn check_subset(&self, subset: &[usize]) -> Result<()> {
        let n = self.n_components();
        for w in subset.windows(2) {
            if w[0] >= w[1] {
                return Err(Error::InvalidSubset(format!(
                    "{subset:?} is not strictly increasing"
                )));
            }
        }
        if let Some(&i) = subset.iter().find(|&&i| i >= n) {
            return Err(Error::InvalidSubset(format!(
                "index {i} out of range for {n} components"
            )));
        }
        Ok(())
    }

    /// Mixed-radix key of the outcome of `row` restricted to `subset`.
    #[inline]
    pub(crate) fn subset_key(&self, row: usize, subset: &[usize]) -> u64 {
        let x = self.outcome(row);
        subset.iter().fold(0u64, |key, &i| {
            key * self.alphabet_sizes[i] as u64 + x[i] as u64
        })
    }

    /// Probability masses of the marginal on `subset`, in unspecified order.
    pub fn marginal_masses(&self, subset: &[usize]) -> Vec<f64> {
        if subset.is_empty() {
            return vec![1.0];
        }
        let mut keyed: Vec<(u64, f64)> = (0..self.support_size())
            .map(|r| (self.subset_key(r, subset), self.probs[r]))
            .collect();
        keyed.sort_unstable_by_key(|&(k, _)| k);
        let mut masses = Vec::new();
        let mut current: Option<u64> = None;
        for (k, p) in keyed {
            if current == Some(k) {
                *masses.last_mut().unwrap() += p;
            } else {
                masses.push(p);
                current = Some(k);
            }
        }
        masses
    }

    /// Marginal support on `subset` as `(outcome restricted to subset, mass)` pairs,
    /// sorted by outcome.
    pub fn marginal_support(&self, subset: &[usize]) -> Vec<(Vec<u32>, f64)> {
        let mut acc: HashMap<u64, (Vec<u32>, f64)> = HashMap::new();
        for r in 0..self.support_size() {
            let key = self.subset_key(r, subset);
            let x = self.outcome(r);
            acc.entry(key)
                .or_insert_with(|| (subset.iter().map(|&i| x[i]).collect(), 0.0))
                .1 += self.probs[r];
        }
        let mut out: Vec<_> = acc.into_values().collect();
        out.sort_by(|a, b| a.0.cmp(&b.0));
        out
    }

    /// Marginal distribution of a single component as a dense vector of length `m_i`.
    pub fn component_marginal(&self, i: usize) -> Vec<f64> {
        let mut p = vec![0.0; self.alphabet_sizes[i]];
        for (x, q) in self.rows() {
            p[x[i] as usize] += q;
        }
        p
    }

    /// Marginal table on `subset`, with components renumbered in subset order.
    pub fn marginal(&self, subset: &[usize]) -> Result<JointTable> {
        self.check_subset(subset)?;
        if subset.is_empty() {
            return Err(Error::InvalidSubset("empty subset has no table".into()));
        }
        let sizes = subset.iter().map(|&i| self.alphabet_sizes[i]).collect();
        JointTable::from_weights(sizes, self.marginal_support(subset))
    }

    /// Alias sampler over the rows of the table.
    pub fn sampler(&self) -> RowSampler {
        RowSampler {
            alias: WeightedAliasIndex::new(self.probs.clone())
                .expect("table masses are positive and finite"),
        }
    }
}

/// O(1) sampler of table rows.
#[derive(Debug, Clone)]
pub struct RowSampler {
    alias: WeightedAliasIndex<f64>,
}

impl RowSampler {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        self.alias.sample(rng)
    }
}

// ---------------------------------------------------------------------------
// Ising spins

/// Pairwise-coupled spin system at temperature `k_BT`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsingSpec {
    #[serde(rename = "J")]
    pub couplings: Vec<Vec<f64>>,
    #[serde(rename = "kT")]
    pub temperature: f64,
}

impl IsingSpec {
    pub fn new(couplings: Vec<Vec<f64>>, temperature: f64) -> Result<Self> {
        let spec = IsingSpec {
            couplings,
            temperature,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Uncoupled system of `n` spins.
    pub fn free(n: usize, temperature: f64) -> Self {
        IsingSpec {
            couplings: vec![vec![0.0; n]; n],
            temperature,
        }
    }

    pub fn n_spins(&self) -> usize {
        self.couplings.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.couplings.len();
        if n == 0 {
            return Err(Error::InvalidSystem("coupling matrix is empty".into()));
        }
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            return Err(Error::InvalidSystem(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        for (i, row) in self.couplings.iter().enumerate() {
            if row.len() != n {
                return Err(Error::InvalidSystem(format!(
                    "coupling row {i} has length {} (expected {n})",
                    row.len()
                )));
            }
            if row[i] != 0.0 {
                return Err(Error::InvalidSystem(format!("J[{i}][{i}] must be zero")));
            }
            for (j, &c) in row.iter().enumerate() {
                if !c.is_finite() {
                    return Err(Error::InvalidSystem(format!("J[{i}][{j}] is not finite")));
                }
                if c != self.couplings[j][i] {
                    return Err(Error::InvalidSystem(format!(
                        "coupling matrix is not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        if n > MAX_ISING_SPINS {
            return Err(Error::TooLarge(format!(
                "{n} spins exceeds the exact-enumeration limit of {MAX_ISING_SPINS}"
            )));
        }
        Ok(())
    }
}

/// Spin value of a stored outcome index (0 -> -1, 1 -> +1).
#[inline]
pub fn spin_value(index: u32) -> f64 {
    if index == 0 {
        -1.0
    } else {
        1.0
    }
}

/// Exact Boltzmann distribution `p(x) ∝ exp(Σ_{i<j} J_ij x_i x_j / k_BT)` over all `2^N` states.
pub fn build_ising(spec: &IsingSpec) -> Result<JointTable> {
    spec.validate()?;
    let n = spec.n_spins();
    let states = 1usize << n;
    let mut log_weights = Vec::with_capacity(states);
    for s in 0..states {
        let mut coupling = 0.0;
        for i in 0..n {
            let xi = spin_value(((s >> i) & 1) as u32);
            for j in (i + 1)..n {
                let xj = spin_value(((s >> j) & 1) as u32);
                coupling += spec.couplings[i][j] * xi * xj;
            }
        }
        log_weights.push(coupling / spec.temperature);
    }
    let max = log_weights.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = log_weights.iter().map(|&l| (l - max).exp()).collect();
    let z: f64 = weights.iter().sum();
    let entries = (0..states).map(|s| {
        let x = (0..n).map(|i| ((s >> i) & 1) as u32).collect();
        (x, weights[s] / z)
    });
    JointTable::new(vec![2; n], entries)
}

// ---------------------------------------------------------------------------
// Sudoku

/// A filled 4x4 board, digits 1-4 in row-major order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Board(pub [u8; 16]);

impl FromStr for Board {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let malformed = |reason: &str| Error::MalformedBoard {
            board: s.to_string(),
            reason: reason.to_string(),
        };
        let digits: Vec<char> = s.trim().chars().collect();
        if digits.len() != 16 {
            return Err(malformed(&format!("expected 16 digits, found {}", digits.len())));
        }
        let mut cells = [0u8; 16];
        for (cell, c) in cells.iter_mut().zip(&digits) {
            match c.to_digit(10) {
                Some(d @ 1..=4) => *cell = d as u8,
                _ => return Err(malformed(&format!("invalid digit {c:?}"))),
            }
        }
        Ok(Board(cells))
    }
}

impl fmt::Display for Board {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for d in self.0 {
            write!(f, "{d}")?;
        }
        Ok(())
    }
}

const SUDOKU_GROUPS: [[usize; 4]; 12] = [
    [0, 1, 2, 3],
    [4, 5, 6, 7],
    [8, 9, 10, 11],
    [12, 13, 14, 15],
    [0, 4, 8, 12],
    [1, 5, 9, 13],
    [2, 6, 10, 14],
    [3, 7, 11, 15],
    [0, 1, 4, 5],
    [2, 3, 6, 7],
    [8, 9, 12, 13],
    [10, 11, 14, 15],
];

impl Board {
    /// True iff every row, column and quadrant holds each digit exactly once.
    pub fn is_valid(&self) -> bool {
        SUDOKU_GROUPS.iter().all(|group| {
            let mask = group.iter().fold(0u8, |m, &c| m | (1 << self.0[c]));
            mask == 0b11110
        })
    }
}

/// Parses a 16-digit board string and checks the sudoku constraints.
pub fn validate_board(board: &str) -> Result<bool> {
    Ok(board.parse::<Board>()?.is_valid())
}

/// All valid 4x4 boards in lexicographic order, by constrained backtracking.
pub fn enumerate_boards() -> Vec<Board> {
    fn fill(cells: &mut [u8; 16], pos: usize, out: &mut Vec<Board>) {
        if pos == 16 {
            out.push(Board(*cells));
            return;
        }
        for d in 1..=4u8 {
            let clash = SUDOKU_GROUPS
                .iter()
                .filter(|g| g.contains(&pos))
                .any(|g| g.iter().any(|&c| c < pos && cells[c] == d));
            if !clash {
                cells[pos] = d;
                fill(cells, pos + 1, out);
            }
        }
        cells[pos] = 0;
    }
    let mut out = Vec::with_capacity(288);
    fill(&mut [0; 16], 0, &mut out);
    out
}

/// The checked-in catalog of valid boards, one per line.
pub const SUDOKU_CATALOG: &str = include_str!("../data/sudoku_boards.txt");

/// Outcome of compiling a board catalog.
#[derive(Debug, Clone)]
pub struct SudokuSystem {
    pub table: JointTable,
    pub boards: Vec<Board>,
    /// Catalog lines that were rejected, with the reason.
    pub rejected: Vec<(String, String)>,
}

/// Uniform distribution over the valid boards of `catalog`.
///
/// Malformed lines are an error; well-formed but invalid boards and duplicates
/// are dropped and listed in [`SudokuSystem::rejected`].
pub fn build_sudoku<S: AsRef<str>>(catalog: &[S]) -> Result<SudokuSystem> {
    let mut boards = Vec::new();
    let mut rejected = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for line in catalog {
        let line = line.as_ref().trim();
        if line.is_empty() {
            continue;
        }
        let board: Board = line.parse()?;
        if !board.is_valid() {
            rejected.push((line.to_string(), "violates sudoku constraints".to_string()));
        } else if !seen.insert(board) {
            rejected.push((line.to_string(), "duplicate board".to_string()));
        } else {
            boards.push(board);
        }
    }
    if boards.is_empty() {
        return Err(Error::EmptyCatalog);
    }
    let p = 1.0 / boards.len() as f64;
    let entries = boards
        .iter()
        .map(|b| (b.0.iter().map(|&d| (d - 1) as u32).collect(), p));
    let table = JointTable::from_weights(vec![4; 16], entries)?;
    Ok(SudokuSystem {
        table,
        boards,
        rejected,
    })
}

// ---------------------------------------------------------------------------
// N-grams

/// Which 4 letters of each word form the 4-gram.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NgramWindow {
    #[serde(alias = "first")]
    FirstHalf,
    #[serde(alias = "second")]
    SecondHalf,
    Whole,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NgramSpec {
    pub word_length: usize,
    pub window: NgramWindow,
    pub max_rank: usize,
}

impl NgramSpec {
    pub fn new(word_length: usize, window: NgramWindow) -> Result<Self> {
        let spec = NgramSpec {
            word_length,
            window,
            max_rank: 10_000,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        match (self.word_length, self.window) {
            (4, NgramWindow::Whole) | (8, NgramWindow::FirstHalf | NgramWindow::SecondHalf) => {
                Ok(())
            }
            (len, w) => Err(Error::InvalidSystem(format!(
                "window {w:?} is not available for words of length {len}"
            ))),
        }
    }

    fn window_range(&self) -> std::ops::Range<usize> {
        match self.window {
            NgramWindow::FirstHalf | NgramWindow::Whole => 0..4,
            NgramWindow::SecondHalf => 4..8,
        }
    }
}

/// Compiles 4-gram statistics from whitespace-separated `word count` lines
/// ordered by descending count.
///
/// Keeps the first `max_rank` words of the requested length, discards words
/// with symbols outside `a-z`, and merges counts of duplicate 4-grams.
pub fn ngrams_from_str(contents: &str, spec: &NgramSpec) -> Result<JointTable> {
    spec.validate()?;
    let mut counts: HashMap<Vec<u32>, f64> = HashMap::new();
    let mut order: Vec<Vec<u32>> = Vec::new();
    let mut kept = 0usize;
    for (lineno, line) in contents.lines().enumerate() {
        let mut fields = line.split_whitespace();
        let Some(word) = fields.next() else {
            continue;
        };
        let count: u64 = fields
            .next()
            .and_then(|c| c.parse().ok())
            .ok_or_else(|| {
                Error::InvalidSystem(format!("line {}: expected `word count`", lineno + 1))
            })?;
        if word.chars().count() != spec.word_length {
            continue;
        }
        if kept == spec.max_rank {
            break;
        }
        kept += 1;
        if !word.bytes().all(|b| b.is_ascii_lowercase()) || count == 0 {
            continue;
        }
        let gram: Vec<u32> = word.as_bytes()[spec.window_range()]
            .iter()
            .map(|&b| (b - b'a') as u32)
            .collect();
        let entry = counts.entry(gram.clone()).or_insert_with(|| {
            order.push(gram);
            0.0
        });
        *entry += count as f64;
    }
    if order.is_empty() {
        return Err(Error::NoNgrams);
    }
    JointTable::from_weights(
        vec![26; 4],
        order.into_iter().map(|g| {
            let c = counts[&g];
            (g, c)
        }),
    )
}

pub fn load_ngrams(path: &Path, spec: &NgramSpec) -> Result<JointTable> {
    let contents = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    ngrams_from_str(&contents, spec)
}

/// Renders a 4-gram outcome as letters.
pub fn ngram_string(x: &[u32]) -> String {
    x.iter().map(|&c| (b'a' + c as u8) as char).collect()
}

// ---------------------------------------------------------------------------
// JSON system specifications

fn default_max_rank() -> usize {
    10_000
}

/// System specification file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum SystemSpec {
    Ising(IsingSpec),
    Sudoku {
        /// Board catalog; the built-in catalog is used when omitted.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        catalog: Option<PathBuf>,
    },
    Ngrams {
        file: PathBuf,
        length: usize,
        window: NgramWindow,
        #[serde(default = "default_max_rank")]
        max_rank: usize,
    },
    Table(JointTable),
}

impl SystemSpec {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })
    }

    /// Builds the table; relative data paths resolve against `base_dir`.
    pub fn build(&self, base_dir: &Path) -> Result<JointTable> {
        match self {
            SystemSpec::Ising(spec) => build_ising(spec),
            SystemSpec::Sudoku { catalog } => {
                let text = match catalog {
                    Some(p) => {
                        let p = base_dir.join(p);
                        fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?
                    }
                    None => SUDOKU_CATALOG.to_string(),
                };
                let lines: Vec<&str> = text.lines().collect();
                Ok(build_sudoku(&lines)?.table)
            }
            SystemSpec::Ngrams {
                file,
                length,
                window,
                max_rank,
            } => {
                let spec = NgramSpec {
                    word_length: *length,
                    window: *window,
                    max_rank: *max_rank,
                };
                load_ngrams(&base_dir.join(file), &spec)
            }
            SystemSpec::Table(t) => Ok(t.clone()),
        }
    }
}
