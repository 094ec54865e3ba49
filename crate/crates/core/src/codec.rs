//! Fixed Gaussian-mixture encoder, Bayes-rule decoder and the plain-text
//! dataset format.

use std::collections::HashMap;

use ndarray::{Array2, ArrayView1};
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, GmcdError, Result};
use crate::geometry::PackingResult;
use crate::rng::Rng;

/// Ordered token list; a token's position is its category index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Alphabet {
    symbols: Vec<String>,
    lookup: HashMap<String, usize>,
}

impl Alphabet {
    pub fn new(symbols: Vec<String>) -> Result<Self> {
        if symbols.is_empty() {
            return invalid("alphabet is empty");
        }
        let mut lookup = HashMap::with_capacity(symbols.len());
        for (i, s) in symbols.iter().enumerate() {
            if s.is_empty() || s.contains(char::is_whitespace) {
                return invalid(format!("alphabet token {s:?} is empty or contains whitespace"));
            }
            if lookup.insert(s.clone(), i).is_some() {
                return invalid(format!("duplicate alphabet token {s:?}"));
            }
        }
        Ok(Self { symbols, lookup })
    }

    /// Tokens `"1"..="K"`, the labels used for synthetic data.
    pub fn numeric(k: usize) -> Self {
        Self::new((1..=k).map(|i| i.to_string()).collect()).expect("numeric tokens are distinct")
    }

    /// One token per line; blank lines are ignored.
    pub fn from_text(text: &str) -> Result<Self> {
        Self::new(
            text.lines()
                .map(|l| l.trim_end_matches('\r'))
                .filter(|l| !l.trim().is_empty())
                .map(|l| l.trim().to_string())
                .collect(),
        )
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for s in &self.symbols {
            out.push_str(s);
            out.push('\n');
        }
        out
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    pub fn index_of(&self, token: &str) -> Option<usize> {
        self.lookup.get(token).copied()
    }

    pub fn token(&self, index: usize) -> Option<&str> {
        self.symbols.get(index).map(String::as_str)
    }

    /// Every token is a single character, so lines may omit separators.
    pub fn is_width_one(&self) -> bool {
        self.symbols.iter().all(|s| s.chars().count() == 1)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CategorySequence(pub Vec<usize>);

impl CategorySequence {
    pub fn new(symbols: Vec<usize>) -> Self {
        Self(symbols)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn check(&self, num_categories: usize) -> Result<()> {
        if self.0.is_empty() {
            return invalid("sequence is empty");
        }
        if let Some(&bad) = self.0.iter().find(|&&x| x >= num_categories) {
            return invalid(format!("category index {bad} out of range for K={num_categories}"));
        }
        Ok(())
    }
}

impl From<Vec<usize>> for CategorySequence {
    fn from(v: Vec<usize>) -> Self {
        Self(v)
    }
}

/// `S x d` continuous state of a sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentSequence(pub Array2<f64>);

impl LatentSequence {
    pub fn zeros(len: usize, dim: usize) -> Self {
        Self(Array2::zeros((len, dim)))
    }

    pub fn len(&self) -> usize {
        self.0.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.0.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.0.ncols()
    }

    pub fn row(&self, s: usize) -> ArrayView1<'_, f64> {
        self.0.row(s)
    }

    /// Rows are the means of the given categories.
    pub fn from_means(x: &CategorySequence, pack: &PackingResult) -> Result<Self> {
        x.check(pack.num_categories)?;
        let mut z = Array2::zeros((x.len(), pack.latent_dim));
        for (s, &k) in x.as_slice().iter().enumerate() {
            for (c, v) in pack.means[k].iter().enumerate() {
                z[[s, c]] = *v;
            }
        }
        Ok(Self(z))
    }
}

/// Draws `z_s ~ N(mu_{x_s}, sigma^2 I)` independently per position.
pub fn encode(x: &CategorySequence, pack: &PackingResult, rng: &mut Rng) -> Result<LatentSequence> {
    let mut z = LatentSequence::from_means(x, pack)?;
    if pack.sigma > 0.0 {
        for v in z.0.iter_mut() {
            *v += pack.sigma * rng.sample::<f64, _>(StandardNormal);
        }
    }
    Ok(z)
}

fn check_shape(z: &LatentSequence, pack: &PackingResult) -> Result<()> {
    if z.dim() != pack.latent_dim || z.is_empty() {
        return invalid(format!(
            "latent shape ({}, {}) incompatible with packing dimension {}",
            z.len(),
            z.dim(),
            pack.latent_dim
        ));
    }
    if z.0.iter().any(|v| !v.is_finite()) {
        return invalid("latent contains non-finite values");
    }
    Ok(())
}

/// Normalizes log-weights in place into probabilities.
pub(crate) fn softmax_in_place(logits: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for l in logits.iter_mut() {
        *l = (*l - max).exp();
        total += *l;
    }
    for l in logits.iter_mut() {
        *l /= total;
    }
}

/// Posterior `p(C_k | z_s)` under a uniform category prior, one row per
/// position.
pub fn decode_probs(z: &LatentSequence, pack: &PackingResult) -> Result<Array2<f64>> {
    check_shape(z, pack)?;
    if !(pack.sigma > 0.0) {
        return invalid("decoding requires sigma > 0");
    }
    let k_count = pack.num_categories;
    let inv_two_var = 1.0 / (2.0 * pack.sigma * pack.sigma);
    let mut out = Array2::zeros((z.len(), k_count));
    let mut row = vec![0.0; k_count];
    for s in 0..z.len() {
        let zs = z.row(s);
        for (k, r) in row.iter_mut().enumerate() {
            let d2: f64 = zs
                .iter()
                .zip(&pack.means[k])
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            *r = -d2 * inv_two_var;
        }
        softmax_in_place(&mut row);
        for (k, r) in row.iter().enumerate() {
            out[[s, k]] = *r;
        }
    }
    Ok(out)
}

/// Index of the largest entry; ties go to the lowest index.
pub(crate) fn argmax(row: ArrayView1<'_, f64>) -> usize {
    let mut best = 0;
    for (k, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = k;
        }
    }
    best
}

pub fn decode_map(z: &LatentSequence, pack: &PackingResult) -> Result<CategorySequence> {
    let probs = decode_probs(z, pack)?;
    Ok(CategorySequence(probs.rows().into_iter().map(argmax).collect()))
}

/// Draws each position from its decoder posterior.
pub fn decode_sample(z: &LatentSequence, pack: &PackingResult, rng: &mut Rng) -> Result<CategorySequence> {
    let probs = decode_probs(z, pack)?;
    Ok(CategorySequence(
        probs.rows().into_iter().map(|r| sample_categorical(r, rng)).collect(),
    ))
}

/// Inverse-CDF draw from a probability row.
pub(crate) fn sample_categorical(row: ArrayView1<'_, f64>, rng: &mut Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (k, &p) in row.iter().enumerate() {
        acc += p;
        if u < acc {
            return k;
        }
    }
    // Rounding left u above the final cumulative sum; take the last
    // category with positive mass.
    row.iter().rposition(|&p| p > 0.0).unwrap_or(row.len() - 1)
}

/// Token separator used on a dataset line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Separator {
    Space,
    /// Tokens written back to back; only valid for width-one alphabets.
    None,
}

impl Separator {
    pub fn default_for(alphabet: &Alphabet) -> Self {
        if alphabet.is_width_one() {
            Separator::None
        } else {
            Separator::Space
        }
    }
}

fn parse_line(line: &str, alphabet: &Alphabet, lineno: usize) -> Result<(Vec<usize>, Separator)> {
    let lookup = |tok: &str| {
        alphabet.index_of(tok).ok_or_else(|| {
            GmcdError::Parse(format!("line {lineno}: unknown token {tok:?}"))
        })
    };
    if line.contains(' ') {
        let symbols = line.split(' ').map(lookup).collect::<Result<Vec<_>>>()?;
        Ok((symbols, Separator::Space))
    } else if alphabet.is_width_one() {
        let mut buf = [0u8; 4];
        let symbols = line
            .chars()
            .map(|c| lookup(c.encode_utf8(&mut buf)))
            .collect::<Result<Vec<_>>>()?;
        Ok((symbols, Separator::None))
    } else {
        Ok((vec![lookup(line)?], Separator::Space))
    }
}

/// Parses one sequence per line. All sequences must share one length.
/// Returns the separator style detected on the first line.
pub fn parse_dataset(text: &str, alphabet: &Alphabet) -> Result<(Vec<CategorySequence>, Separator)> {
    let mut out = Vec::new();
    let mut style = None;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let (symbols, sep) = parse_line(line, alphabet, i + 1)?;
        if let Some(first) = out.first().map(|s: &CategorySequence| s.len()) {
            if symbols.len() != first {
                return Err(GmcdError::Parse(format!(
                    "line {}: length {} differs from {}",
                    i + 1,
                    symbols.len(),
                    first
                )));
            }
        }
        style.get_or_insert(sep);
        out.push(CategorySequence(symbols));
    }
    if out.is_empty() {
        return Err(GmcdError::Parse("dataset contains no sequences".into()));
    }
    Ok((out, style.unwrap_or(Separator::Space)))
}

pub fn format_dataset(seqs: &[CategorySequence], alphabet: &Alphabet, sep: Separator) -> Result<String> {
    if sep == Separator::None && !alphabet.is_width_one() {
        return invalid("separator-free output needs a width-one alphabet");
    }
    let mut out = String::new();
    for seq in seqs {
        seq.check(alphabet.len())?;
        for (i, &k) in seq.as_slice().iter().enumerate() {
            if i > 0 && sep == Separator::Space {
                out.push(' ');
            }
            out.push_str(&alphabet.symbols[k]);
        }
        out.push('\n');
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{pack_sphere, PackingConfig};
    use crate::rng::seeded;
    use ndarray::array;

    fn line_pack() -> PackingResult {
        PackingResult::from_means(vec![vec![1.0], vec![-1.0]], 0)
            .unwrap()
            .with_sigma(1.0 / 3.0)
            .unwrap()
    }

    #[test]
    fn zero_sigma_encodes_to_means() {
        let pack = pack_sphere(&PackingConfig::new(3, 2, 1)).unwrap().with_sigma(0.0).unwrap();
        let x = CategorySequence(vec![2, 0, 1]);
        let z = encode(&x, &pack, &mut seeded(0)).unwrap();
        for (s, &k) in x.as_slice().iter().enumerate() {
            assert_eq!(z.row(s).to_vec(), pack.means[k]);
        }
    }

    #[test]
    fn encoder_variance_matches_sigma() {
        let pack = pack_sphere(&PackingConfig::new(3, 2, 1)).unwrap();
        let x = CategorySequence(vec![1]);
        let mut rng = seeded(9);
        let n = 100_000;
        let (mut sum, mut sum2) = (0.0, 0.0);
        for _ in 0..n {
            let v = encode(&x, &pack, &mut rng).unwrap().0[[0, 0]];
            sum += v;
            sum2 += v * v;
        }
        let mean = sum / n as f64;
        let var = sum2 / n as f64 - mean * mean;
        let s2 = pack.sigma * pack.sigma;
        assert!((var - s2).abs() / s2 < 0.05, "var {var} vs {s2}");
        assert!((mean - pack.means[1][0]).abs() < 4.0 * pack.sigma / (n as f64).sqrt());
    }

    #[test]
    fn encode_is_deterministic_and_checks_indices() {
        let pack = pack_sphere(&PackingConfig::new(3, 2, 1)).unwrap();
        let x = CategorySequence(vec![0, 1, 2]);
        assert_eq!(
            encode(&x, &pack, &mut seeded(4)).unwrap(),
            encode(&x, &pack, &mut seeded(4)).unwrap()
        );
        assert!(encode(&CategorySequence(vec![3]), &pack, &mut seeded(4)).is_err());
    }

    #[test]
    fn decoder_density_ratio() {
        let z = LatentSequence(array![[0.5]]);
        let p = decode_probs(&z, &line_pack()).unwrap();
        let expected = 1.0 / (1.0 + (-9f64).exp());
        assert!((p[[0, 0]] - expected).abs() < 1e-12);
        assert!((p[[0, 0]] - 0.99988).abs() < 1e-5);
    }

    #[test]
    fn equidistant_point_is_uniform_and_ties_go_low() {
        let z = LatentSequence(array![[0.0]]);
        let p = decode_probs(&z, &line_pack()).unwrap();
        assert_eq!(p[[0, 0]], 0.5);
        assert_eq!(decode_map(&z, &line_pack()).unwrap().0, vec![0]);

        let tri: Vec<Vec<f64>> = (0..3)
            .map(|i| {
                let a = 2.0 * std::f64::consts::PI * i as f64 / 3.0;
                vec![a.cos(), a.sin()]
            })
            .collect();
        let pack = PackingResult::from_means(tri, 0).unwrap();
        let p = decode_probs(&LatentSequence(array![[0.0, 0.0]]), &pack).unwrap();
        for k in 0..3 {
            assert!((p[[0, k]] - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn map_round_trip_at_means() {
        let pack = pack_sphere(&PackingConfig::new(3, 2, 1)).unwrap();
        let x = CategorySequence(vec![0, 2, 1]);
        let z = LatentSequence::from_means(&x, &pack).unwrap();
        assert_eq!(decode_map(&z, &pack).unwrap(), x);
    }

    #[test]
    fn map_matches_argmax_of_probs() {
        let pack = pack_sphere(&PackingConfig::new(5, 3, 2)).unwrap();
        let mut rng = seeded(1);
        for _ in 0..50 {
            let z = LatentSequence(Array2::from_shape_fn((4, 3), |_| rng.random::<f64>() * 2.0 - 1.0));
            let p = decode_probs(&z, &pack).unwrap();
            let m = decode_map(&z, &pack).unwrap();
            for s in 0..4 {
                let best = (0..5).max_by(|&a, &b| p[[s, a]].total_cmp(&p[[s, b]]).then(b.cmp(&a))).unwrap();
                assert_eq!(m.0[s], best);
            }
        }
    }

    #[test]
    fn rows_are_normalized_and_finite_far_away() {
        let pack = pack_sphere(&PackingConfig::new(4, 3, 3)).unwrap();
        let far = LatentSequence(array![[80.0 * pack.sigma + 50.0, -300.0, 1e3]]);
        let p = decode_probs(&far, &pack).unwrap();
        assert!(p.iter().all(|v| v.is_finite()));
        assert!((p.sum() - 1.0).abs() < 1e-9);

        let mut rng = seeded(8);
        for _ in 0..20 {
            let z = LatentSequence(Array2::from_shape_fn((3, 3), |_| rng.random::<f64>() * 0.6 - 0.3));
            let p = decode_probs(&z, &pack).unwrap();
            for row in p.rows() {
                assert!((row.sum() - 1.0).abs() < 1e-9);
                assert!(row.iter().all(|&v| v > 0.0));
            }
        }
    }

    #[test]
    fn decode_rejects_bad_shape() {
        let pack = pack_sphere(&PackingConfig::new(3, 2, 1)).unwrap();
        assert!(decode_probs(&LatentSequence::zeros(2, 3), &pack).is_err());
    }

    #[test]
    fn encode_decode_round_trip_rate() {
        let pack = pack_sphere(&PackingConfig::new(6, 6, 0)).unwrap();
        let mut rng = seeded(2);
        let x = CategorySequence((0..100).map(|i| i % 6).collect());
        let mut wrong = 0;
        for _ in 0..1000 {
            let z = encode(&x, &pack, &mut rng).unwrap();
            let y = decode_map(&z, &pack).unwrap();
            wrong += x.0.iter().zip(&y.0).filter(|(a, b)| a != b).count();
        }
        assert!(wrong as f64 <= 0.001 * 100_000.0, "{wrong} errors");
    }

    #[test]
    fn alphabet_rejects_duplicates() {
        assert!(Alphabet::from_text("A\nB\nA\n").is_err());
        let a = Alphabet::from_text("A\nB\n\nC\n").unwrap();
        assert_eq!(a.len(), 3);
        assert_eq!(a.index_of("C"), Some(2));
    }

    #[test]
    fn dataset_formats() {
        let a = Alphabet::from_text("A\nC\n-\n").unwrap();
        let (seqs, sep) = parse_dataset("AC-\n-CA\n", &a).unwrap();
        assert_eq!(sep, Separator::None);
        assert_eq!(seqs[1].0, vec![2, 1, 0]);
        assert_eq!(format_dataset(&seqs, &a, sep).unwrap(), "AC-\n-CA\n");

        let (seqs, sep) = parse_dataset("A C -\n", &a).unwrap();
        assert_eq!(sep, Separator::Space);
        assert_eq!(format_dataset(&seqs, &a, sep).unwrap(), "A C -\n");

        let n = Alphabet::numeric(12);
        let (seqs, _) = parse_dataset("1 12 3\n", &n).unwrap();
        assert_eq!(seqs[0].0, vec![0, 11, 2]);
        assert!(format_dataset(&seqs, &n, Separator::None).is_err());

        assert!(parse_dataset("A C\nA C -\n", &a).is_err());
        assert!(parse_dataset("A X\n", &a).is_err());
    }
}
