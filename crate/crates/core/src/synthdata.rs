//! Synthetic ground truth over length-`K` sequences of `K` categories:
//! all mass on permutations, three times more on those whose first symbol
//! is smaller than the last.

use rand::seq::SliceRandom;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codec::CategorySequence;
use crate::error::{invalid, Result};
use crate::rng::{self, domain, Rng};

pub const LIKELY_MASS: f64 = 0.75;
pub const RARE_MASS: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Partition {
    Likely,
    Rare,
    Ood,
}

impl Partition {
    pub fn is_positive(self) -> bool {
        self != Partition::Ood
    }
}

fn factorial(k: usize) -> f64 {
    (1..=k).map(|i| i as f64).product()
}

fn check(x: &CategorySequence, k: usize) -> Result<()> {
    if x.len() != k {
        return invalid(format!("sequence length {} differs from K={k}", x.len()));
    }
    x.check(k)
}

fn is_permutation(x: &[usize], k: usize) -> bool {
    let mut seen = vec![false; k];
    x.iter().all(|&v| !std::mem::replace(&mut seen[v], true))
}

pub fn partition_of(x: &CategorySequence, k: usize) -> Result<Partition> {
    check(x, k)?;
    let xs = x.as_slice();
    Ok(if !is_permutation(xs, k) {
        Partition::Ood
    } else if xs[0] < xs[k - 1] {
        Partition::Likely
    } else {
        Partition::Rare
    })
}

pub fn truth_pmf(x: &CategorySequence, k: usize) -> Result<f64> {
    let per_orientation = 2.0 * factorial(k);
    Ok(match partition_of(x, k)? {
        Partition::Likely => 3.0 / per_orientation,
        Partition::Rare => 1.0 / per_orientation,
        Partition::Ood => 0.0,
    })
}

/// `(likely, rare, ood)`.
pub fn truth_partition_masses(_k: usize) -> (f64, f64, f64) {
    (LIKELY_MASS, RARE_MASS, 0.0)
}

/// One exact draw: a uniform permutation whose endpoints are swapped when
/// their order disagrees with the chosen partition.
pub fn sample_one_truth(k: usize, rng: &mut Rng) -> CategorySequence {
    let mut perm: Vec<usize> = (0..k).collect();
    perm.shuffle(rng);
    let likely = rng.random::<f64>() < LIKELY_MASS;
    if (perm[0] < perm[k - 1]) != likely {
        perm.swap(0, k - 1);
    }
    CategorySequence(perm)
}

pub fn sample_truth(k: usize, n: usize, rng: &mut Rng) -> Result<Vec<CategorySequence>> {
    if k < 2 || n == 0 {
        return invalid("need K >= 2 and N >= 1");
    }
    Ok((0..n).map(|_| sample_one_truth(k, rng)).collect())
}

/// Parallel variant: draw `i` uses stream `(seed, DATA, i)`.
pub fn sample_truth_seeded(k: usize, n: usize, seed: u64) -> Result<Vec<CategorySequence>> {
    if k < 2 || n == 0 {
        return invalid("need K >= 2 and N >= 1");
    }
    Ok((0..n)
        .into_par_iter()
        .map(|i| sample_one_truth(k, &mut rng::substream(seed, domain::DATA, i as u64)))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruth {
    #[serde(rename = "K")]
    pub k: usize,
}

impl GroundTruth {
    pub fn new(k: usize) -> Result<Self> {
        if k < 2 {
            return invalid("ground truth needs K >= 2");
        }
        Ok(Self { k })
    }

    pub fn pmf(&self, x: &CategorySequence) -> Result<f64> {
        truth_pmf(x, self.k)
    }

    pub fn partition(&self, x: &CategorySequence) -> Result<Partition> {
        partition_of(x, self.k)
    }

    pub fn masses(&self) -> (f64, f64, f64) {
        truth_partition_masses(self.k)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitInfo {
    pub name: String,
    pub size: usize,
    pub file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "N")]
    pub n: usize,
    pub splits: Vec<SplitInfo>,
    pub seed: u64,
}

/// Split sizes for `ratios`, which must sum to one. Rounding leftovers go
/// to the last split.
pub fn split_sizes(n: usize, ratios: &[f64]) -> Result<Vec<usize>> {
    if ratios.is_empty() || ratios.iter().any(|r| !(*r >= 0.0)) {
        return invalid("split ratios must be non-negative");
    }
    let total: f64 = ratios.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return invalid(format!("split ratios sum to {total}, not 1"));
    }
    let mut sizes: Vec<usize> = ratios.iter().map(|r| (r * n as f64).round() as usize).collect();
    let head: usize = sizes[..sizes.len() - 1].iter().sum();
    if head > n {
        return invalid("split ratios overflow N");
    }
    *sizes.last_mut().expect("non-empty") = n - head;
    Ok(sizes)
}

/// `N` exact draws cut into consecutive splits.
pub fn generate_splits(k: usize, n: usize, ratios: &[f64], seed: u64) -> Result<Vec<Vec<CategorySequence>>> {
    let sizes = split_sizes(n, ratios)?;
    let mut all = sample_truth_seeded(k, n, seed)?.into_iter();
    Ok(sizes.into_iter().map(|s| all.by_ref().take(s).collect()).collect())
}
