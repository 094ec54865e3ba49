//! Distances between pmfs, Poissonized empirical estimates and pattern
//! covariation statistics.

use std::collections::{BTreeMap, HashMap, HashSet};

use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::codec::CategorySequence;
use crate::error::{invalid, GmcdError, Result};
use crate::rng::Rng;
use crate::synthdata::{GroundTruth, Partition};

/// Sparse pmf; absent atoms have zero mass.
pub type Pmf<T> = BTreeMap<T, f64>;

fn check_masses<T>(p: &Pmf<T>) -> Result<()> {
    if p.values().any(|v| !(*v >= 0.0) || !v.is_finite()) {
        return invalid("pmf masses must be finite and non-negative");
    }
    Ok(())
}

/// Folds `f(p_x, q_x)` over the sorted union of supports, so swapping the
/// arguments visits atoms in the same order.
fn union_fold<T: Ord>(p: &Pmf<T>, q: &Pmf<T>, mut keep: impl FnMut(&T) -> bool, f: impl Fn(f64, f64) -> f64) -> Result<f64> {
    check_masses(p)?;
    check_masses(q)?;
    let mut acc = 0.0;
    let (mut a, mut b) = (p.iter().peekable(), q.iter().peekable());
    loop {
        let (x, pv, qv) = match (a.peek(), b.peek()) {
            (None, None) => break,
            (Some((xa, _)), Some((xb, _))) if xa == xb => {
                let ((x, pv), (_, qv)) = (a.next().unwrap(), b.next().unwrap());
                (x, *pv, *qv)
            }
            (Some((xa, _)), Some((xb, _))) if xa < xb => {
                let (x, pv) = a.next().unwrap();
                (x, *pv, 0.0)
            }
            (Some(_), None) => {
                let (x, pv) = a.next().unwrap();
                (x, *pv, 0.0)
            }
            _ => {
                let (x, qv) = b.next().unwrap();
                (x, 0.0, *qv)
            }
        };
        if keep(x) {
            let (lo, hi) = if pv <= qv { (pv, qv) } else { (qv, pv) };
            acc += f(lo, hi);
        }
    }
    Ok(acc)
}

pub fn tv_distance<T: Ord>(p: &Pmf<T>, q: &Pmf<T>) -> Result<f64> {
    Ok(0.5 * union_fold(p, q, |_| true, |a, b| (a - b).abs())?)
}

/// Half the L1 distance over the atoms selected by `subset`.
pub fn tv_restricted<T: Ord>(p: &Pmf<T>, q: &Pmf<T>, subset: impl FnMut(&T) -> bool) -> Result<f64> {
    Ok(0.5 * union_fold(p, q, subset, |a, b| (a - b).abs())?)
}

pub fn hellinger<T: Ord>(p: &Pmf<T>, q: &Pmf<T>) -> Result<f64> {
    let sq = union_fold(p, q, |_| true, |a, b| (a.sqrt() - b.sqrt()).powi(2))?;
    Ok((sq / 2.0).sqrt())
}

/// Mass per label.
pub fn partition_mass<T, L: Ord>(p: &Pmf<T>, label: impl Fn(&T) -> L) -> BTreeMap<L, f64> {
    let mut out = BTreeMap::new();
    for (x, v) in p {
        *out.entry(label(x)).or_insert(0.0) += v;
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalPmf {
    pub masses: Pmf<CategorySequence>,
    /// Nominal budget; masses are counts divided by this.
    pub m: f64,
    /// Number of draws actually taken.
    pub draws: usize,
    pub seed: u64,
}

impl EmpiricalPmf {
    pub fn total_mass(&self) -> f64 {
        self.masses.values().sum()
    }
}

/// Something that yields sequences, e.g. a generator or a sample file.
pub trait SampleSource {
    /// `None` once a finite source is exhausted.
    fn next_sample(&mut self, rng: &mut Rng) -> Option<CategorySequence>;
}

/// Replays a fixed list in order.
pub struct ListSource<'a> {
    items: std::slice::Iter<'a, CategorySequence>,
}

impl<'a> ListSource<'a> {
    pub fn new(items: &'a [CategorySequence]) -> Self {
        Self { items: items.iter() }
    }
}

impl SampleSource for ListSource<'_> {
    fn next_sample(&mut self, _rng: &mut Rng) -> Option<CategorySequence> {
        self.items.next().cloned()
    }
}

/// Wraps a closure drawing one sequence per call.
pub struct FnSource<F>(pub F);

impl<F: FnMut(&mut Rng) -> CategorySequence> SampleSource for FnSource<F> {
    fn next_sample(&mut self, rng: &mut Rng) -> Option<CategorySequence> {
        Some((self.0)(rng))
    }
}

/// Budget for a finite file of `available` samples, leaving five standard
/// deviations of Poisson headroom.
pub fn file_budget(available: usize) -> f64 {
    let a = available as f64;
    (a - 5.0 * a.sqrt()).max(1.0)
}

/// Draws `N ~ Poisson(m)` samples and returns counts divided by `m`.
/// A finite source that runs dry ends the draw early.
pub fn poissonized_empirical(source: &mut dyn SampleSource, m: f64, seed: u64, rng: &mut Rng) -> Result<EmpiricalPmf> {
    if !(m >= 1.0) || !m.is_finite() {
        return invalid("Poissonization budget m must be >= 1");
    }
    let total = Poisson::new(m).map_err(|e| GmcdError::InvalidArgument(e.to_string()))?.sample(rng) as usize;
    let mut counts: BTreeMap<CategorySequence, usize> = BTreeMap::new();
    let mut draws = 0;
    while draws < total {
        match source.next_sample(rng) {
            Some(x) => *counts.entry(x).or_insert(0) += 1,
            None => break,
        }
        draws += 1;
    }
    Ok(EmpiricalPmf {
        masses: counts.into_iter().map(|(x, c)| (x, c as f64 / m)).collect(),
        m,
        draws,
        seed,
    })
}

/// Distances from an empirical pmf to the synthetic truth, computed from
/// the observed atoms alone: every unobserved positive atom contributes its
/// full truth mass, and those masses sum to one minus the observed ones.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruthDistances {
    pub hellinger: f64,
    pub tv: f64,
    pub tv_positive: f64,
    pub tv_ood: f64,
}

pub fn truth_distances(phat: &Pmf<CategorySequence>, truth: &GroundTruth) -> Result<TruthDistances> {
    check_masses(phat)?;
    let (mut l1_pos, mut l1_ood, mut hel_sq, mut seen_truth) = (0.0, 0.0, 0.0, 0.0);
    for (x, &q) in phat {
        let p = truth.pmf(x)?;
        if p > 0.0 {
            seen_truth += p;
            l1_pos += (q - p).abs();
        } else {
            l1_ood += q;
        }
        hel_sq += (q.sqrt() - p.sqrt()).powi(2);
    }
    let unseen = (1.0 - seen_truth).max(0.0);
    let tv_positive = 0.5 * (l1_pos + unseen);
    let tv_ood = 0.5 * l1_ood;
    Ok(TruthDistances {
        hellinger: ((hel_sq + unseen) / 2.0).sqrt(),
        tv: tv_positive + tv_ood,
        tv_positive,
        tv_ood,
    })
}

/// Positions (0-based, strictly increasing) and the category at each.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PatternSpec {
    pub positions: Vec<usize>,
    pub categories: Vec<usize>,
}

impl PatternSpec {
    pub fn new(positions: Vec<usize>, categories: Vec<usize>) -> Result<Self> {
        if positions.is_empty() || positions.len() != categories.len() {
            return invalid("pattern needs equally many positions and categories, at least one");
        }
        if positions.windows(2).any(|w| w[0] >= w[1]) {
            return invalid("pattern positions must be strictly increasing");
        }
        Ok(Self { positions, categories })
    }

    fn matches(&self, x: &[usize]) -> bool {
        self.positions.iter().zip(&self.categories).all(|(&s, &k)| x[s] == k)
    }
}

fn check_corpus(samples: &[CategorySequence], pat: &PatternSpec) -> Result<()> {
    if samples.is_empty() {
        return invalid("pattern statistics need at least one sample");
    }
    let max = *pat.positions.last().expect("non-empty pattern");
    if samples.iter().any(|x| x.len() <= max) {
        return invalid("pattern position beyond sequence length");
    }
    Ok(())
}

/// Joint frequency of the pattern minus the product of its single-site
/// frequencies.
pub fn pattern_covariation(samples: &[CategorySequence], pat: &PatternSpec) -> Result<f64> {
    check_corpus(samples, pat)?;
    let m = samples.len() as f64;
    let joint = samples.iter().filter(|x| pat.matches(x.as_slice())).count() as f64 / m;
    let product: f64 = pat
        .positions
        .iter()
        .zip(&pat.categories)
        .map(|(&s, &k)| samples.iter().filter(|x| x.as_slice()[s] == k).count() as f64 / m)
        .product();
    Ok(joint - product)
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).map(|i| (n - i) as f64 / (i + 1) as f64).product()
}

fn all_subsets(n: usize, p: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, n: usize, p: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == p {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            if n - i < p - cur.len() {
                break;
            }
            cur.push(i);
            rec(i + 1, n, p, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, n, p, &mut Vec::new(), &mut out);
    out
}

/// Up to `n_positions` distinct position sets of size `p`, each with its
/// `top_k` most frequent category tuples in `reference` (ties broken by
/// the smaller tuple). When no more than `n_positions` sets exist, all are
/// used.
pub fn select_patterns(
    reference: &[CategorySequence],
    p: usize,
    n_positions: usize,
    top_k: usize,
    rng: &mut Rng,
) -> Result<Vec<PatternSpec>> {
    let len = reference.first().map(CategorySequence::len).ok_or_else(|| GmcdError::InvalidArgument("empty reference corpus".into()))?;
    if p == 0 || p > len {
        return invalid(format!("pattern length {p} must lie in [1, {len}]"));
    }
    if reference.iter().any(|x| x.len() != len) {
        return invalid("reference sequences differ in length");
    }
    let sets = if binomial(len, p) <= n_positions as f64 {
        all_subsets(len, p)
    } else {
        let mut seen = HashSet::new();
        let mut sets = Vec::with_capacity(n_positions);
        while sets.len() < n_positions {
            let mut s = rand::seq::index::sample(rng, len, p).into_vec();
            s.sort_unstable();
            if seen.insert(s.clone()) {
                sets.push(s);
            }
        }
        sets
    };
    let mut out = Vec::new();
    for positions in sets {
        let mut counts: HashMap<Vec<usize>, usize> = HashMap::new();
        for x in reference {
            let key: Vec<usize> = positions.iter().map(|&s| x.as_slice()[s]).collect();
            *counts.entry(key).or_insert(0) += 1;
        }
        let mut ranked: Vec<(Vec<usize>, usize)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        for (categories, _) in ranked.into_iter().take(top_k) {
            out.push(PatternSpec {
                positions: positions.clone(),
                categories,
            });
        }
    }
    Ok(out)
}

pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return invalid("pearson needs two equal-length vectors of length >= 2");
    }
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(GmcdError::Degenerate("zero variance; correlation not significant".into()));
    }
    Ok((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

/// Pearson correlation of pattern covariations between two corpora.
pub fn pattern_correlation(reference: &[CategorySequence], generated: &[CategorySequence], patterns: &[PatternSpec]) -> Result<f64> {
    let a: Vec<f64> = patterns.iter().map(|p| pattern_covariation(reference, p)).collect::<Result<_>>()?;
    let b: Vec<f64> = patterns.iter().map(|p| pattern_covariation(generated, p)).collect::<Result<_>>()?;
    pearson(&a, &b)
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PartitionMasses {
    pub positive: f64,
    pub likely: f64,
    pub rare: f64,
    pub ood: f64,
}

pub fn truth_partition_mass(phat: &Pmf<CategorySequence>, truth: &GroundTruth) -> Result<PartitionMasses> {
    let mut out = PartitionMasses::default();
    for (x, v) in phat {
        match truth.partition(x)? {
            Partition::Likely => out.likely += v,
            Partition::Rare => out.rare += v,
            Partition::Ood => out.ood += v,
        }
    }
    out.positive = out.likely + out.rare;
    Ok(out)
}

/// Evaluation summary. Synthetic runs fill the distance and mass fields;
/// reference runs fill `rho`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricsReport {
    pub hellinger: Option<f64>,
    pub tv: Option<f64>,
    pub tv_positive: Option<f64>,
    pub tv_ood: Option<f64>,
    pub masses: Option<PartitionMasses>,
    /// Pattern length to Pearson correlation; `None` where undefined.
    pub rho: BTreeMap<usize, Option<f64>>,
    pub num_samples: usize,
    pub budget_m: Option<f64>,
    pub draws: Option<usize>,
    pub seeds: Vec<u64>,
}

impl MetricsReport {
    /// Synthetic-mode report from a Poissonized estimate.
    pub fn synthetic(phat: &EmpiricalPmf, truth: &GroundTruth, num_samples: usize) -> Result<Self> {
        let d = truth_distances(&phat.masses, truth)?;
        Ok(Self {
            hellinger: Some(d.hellinger),
            tv: Some(d.tv),
            tv_positive: Some(d.tv_positive),
            tv_ood: Some(d.tv_ood),
            masses: Some(truth_partition_mass(&phat.masses, truth)?),
            num_samples,
            budget_m: Some(phat.m),
            draws: Some(phat.draws),
            seeds: vec![phat.seed],
            ..Self::default()
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Columns in a fixed order, scaled by 100 like a results table.
    pub fn csv_columns(&self) -> Vec<(String, String)> {
        let pct = |v: Option<f64>| v.map(|x| format!("{:.4}", 100.0 * x)).unwrap_or_default();
        let masses = self.masses.clone();
        let mut cols = vec![
            ("hel".to_string(), pct(self.hellinger)),
            ("d_tv".to_string(), pct(self.tv)),
            ("d_tv_plus".to_string(), pct(self.tv_positive)),
            ("d_tv_ood".to_string(), pct(self.tv_ood)),
            ("p_likely".to_string(), pct(masses.as_ref().map(|m| m.likely))),
            ("p_rare".to_string(), pct(masses.as_ref().map(|m| m.rare))),
            ("p_plus".to_string(), pct(masses.as_ref().map(|m| m.positive))),
            ("p_ood".to_string(), pct(masses.as_ref().map(|m| m.ood))),
        ];
        for (p, r) in &self.rho {
            cols.push((format!("rho_{p}"), r.map(|v| format!("{v:.6}")).unwrap_or_else(|| "-".into())));
        }
        cols.push(("num_samples".into(), self.num_samples.to_string()));
        cols
    }

    pub fn to_csv(&self) -> String {
        let cols = self.csv_columns();
        let header: Vec<&str> = cols.iter().map(|c| c.0.as_str()).collect();
        let row: Vec<&str> = cols.iter().map(|c| c.1.as_str()).collect();
        format!("{}\n{}\n", header.join(","), row.join(","))
    }
}

/// Mean and sample standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}
