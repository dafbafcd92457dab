//! Finite sequence distributions used as ground truth.
//!
//! A [`MarkovSource`] generates fixed-length token sequences; enumerating it
//! yields a [`DistributionTable`] over the whole sequence space, on which
//! entropy, KL divergence and total variation are computed exactly. All
//! information quantities are in nats.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

pub type Token = usize;
pub type Sequence = Vec<Token>;

/// Default bound on `V^n` for exact enumeration.
pub const DEFAULT_ENUMERATION_CAP: usize = 1 << 20;

const STOCHASTIC_TOL: f64 = 1e-12;
const TABLE_TOL: f64 = 1e-10;

/// Vocabulary of `size` dense token ids `0..size`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Vocab(usize);

impl Vocab {
    pub fn new(size: usize) -> Result<Self> {
        if size < 2 {
            return Err(Error::InvalidArgument(format!(
                "vocabulary size must be at least 2, got {size}"
            )));
        }
        Ok(Self(size))
    }

    pub fn size(self) -> usize {
        self.0
    }

    pub fn check(self, token: Token) -> Result<()> {
        if token < self.0 {
            Ok(())
        } else {
            Err(Error::TokenOutOfRange {
                token,
                vocab: self.0,
            })
        }
    }
}

/// Number of sequences in `V^n`, or an error if it exceeds `cap`.
pub fn space_size(vocab: Vocab, seq_len: usize, cap: usize) -> Result<usize> {
    let states = (vocab.size() as u128).checked_pow(seq_len as u32);
    match states {
        Some(s) if s <= cap as u128 => Ok(s as usize),
        Some(s) => Err(Error::EnumerationTooLarge { states: s, cap }),
        None => Err(Error::EnumerationTooLarge {
            states: u128::MAX,
            cap,
        }),
    }
}

fn check_simplex(what: &str, row: &[f64]) -> Result<()> {
    if let Some(bad) = row.iter().find(|p| !p.is_finite() || **p < 0.0) {
        return Err(Error::InvalidDistribution(format!(
            "{what} has invalid entry {bad}"
        )));
    }
    let total: f64 = row.iter().sum();
    if (total - 1.0).abs() > STOCHASTIC_TOL {
        return Err(Error::InvalidDistribution(format!(
            "{what} sums to {total}, not 1"
        )));
    }
    Ok(())
}

/// Order-1 Markov chain over fixed-length sequences.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkovSource {
    vocab: Vocab,
    initial: Vec<f64>,
    transition: Vec<Vec<f64>>,
    seq_len: usize,
}

impl MarkovSource {
    pub fn new(
        vocab: Vocab,
        initial: Vec<f64>,
        transition: Vec<Vec<f64>>,
        seq_len: usize,
    ) -> Result<Self> {
        let v = vocab.size();
        if seq_len == 0 {
            return Err(Error::InvalidArgument("sequence length must be positive".into()));
        }
        if initial.len() != v {
            return Err(Error::LengthMismatch {
                expected: v,
                found: initial.len(),
            });
        }
        if transition.len() != v {
            return Err(Error::LengthMismatch {
                expected: v,
                found: transition.len(),
            });
        }
        check_simplex("initial distribution", &initial)?;
        for (s, row) in transition.iter().enumerate() {
            if row.len() != v {
                return Err(Error::LengthMismatch {
                    expected: v,
                    found: row.len(),
                });
            }
            check_simplex(&format!("transition row {s}"), row)?;
        }
        Ok(Self {
            vocab,
            initial,
            transition,
            seq_len,
        })
    }

    /// Every token equally likely at every position.
    pub fn uniform(vocab: Vocab, seq_len: usize) -> Result<Self> {
        let v = vocab.size();
        let u = 1.0 / v as f64;
        Self::new(vocab, vec![u; v], vec![vec![u; v]; v], seq_len)
    }

    /// Uniform start; stays on the current token with probability `stay`,
    /// otherwise moves uniformly to one of the other tokens.
    pub fn sticky(vocab: Vocab, seq_len: usize, stay: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&stay) {
            return Err(Error::InvalidArgument(format!(
                "sticky probability must lie in [0, 1], got {stay}"
            )));
        }
        let v = vocab.size();
        let other = (1.0 - stay) / (v - 1) as f64;
        let transition = (0..v)
            .map(|s| (0..v).map(|t| if s == t { stay } else { other }).collect())
            .collect();
        Self::new(vocab, vec![1.0 / v as f64; v], transition, seq_len)
    }

    /// Multiplies every entry by `exp(epsilon * z)` with `z` standard normal,
    /// then renormalizes. Zero entries stay zero.
    pub fn perturbed(&self, epsilon: f64, seed: u64) -> Result<Self> {
        if !epsilon.is_finite() || epsilon < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "perturbation scale must be finite and non-negative, got {epsilon}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut jitter = |row: &[f64]| -> Vec<f64> {
            let raw: Vec<f64> = row
                .iter()
                .map(|&p| {
                    let z: f64 = rng.sample(StandardNormal);
                    p * (epsilon * z).exp()
                })
                .collect();
            let total: f64 = raw.iter().sum();
            raw.into_iter().map(|p| p / total).collect()
        };
        let initial = jitter(&self.initial);
        let transition = self.transition.iter().map(|row| jitter(row)).collect();
        Self::new(self.vocab, initial, transition, self.seq_len)
    }

    pub fn vocab(&self) -> Vocab {
        self.vocab
    }

    pub fn seq_len(&self) -> usize {
        self.seq_len
    }

    pub fn initial(&self) -> &[f64] {
        &self.initial
    }

    pub fn transition(&self) -> &[Vec<f64>] {
        &self.transition
    }

    /// Probability of a single sequence under the chain.
    pub fn sequence_prob(&self, y: &[Token]) -> Result<f64> {
        if y.len() != self.seq_len {
            return Err(Error::LengthMismatch {
                expected: self.seq_len,
                found: y.len(),
            });
        }
        for &t in y {
            self.vocab.check(t)?;
        }
        let mut p = self.initial[y[0]];
        for w in y.windows(2) {
            p *= self.transition[w[0]][w[1]];
        }
        Ok(p)
    }
}

/// Probability of every sequence in `V^n`, indexed by the base-`V` code of the
/// sequence (first token most significant).
#[derive(Debug, Clone, PartialEq)]
pub struct DistributionTable {
    vocab: Vocab,
    seq_len: usize,
    probs: Vec<f64>,
}

impl DistributionTable {
    pub fn new(vocab: Vocab, seq_len: usize, probs: Vec<f64>) -> Result<Self> {
        let size = space_size(vocab, seq_len, usize::MAX)?;
        if probs.len() != size {
            return Err(Error::LengthMismatch {
                expected: size,
                found: probs.len(),
            });
        }
        if let Some(bad) = probs.iter().find(|p| !p.is_finite() || **p < 0.0) {
            return Err(Error::InvalidDistribution(format!(
                "table has invalid entry {bad}"
            )));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > TABLE_TOL {
            return Err(Error::InvalidDistribution(format!(
                "table sums to {total}, not 1"
            )));
        }
        Ok(Self {
            vocab,
            seq_len,
            probs,
        })
    }

    pub fn vocab(&self) -> Vocab {
        self.vocab
    }

    pub fn seq_len(&self) -> usize {
        self.seq_len
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn encode(&self, y: &[Token]) -> Result<usize> {
        encode(self.vocab, self.seq_len, y)
    }

    pub fn decode(&self, code: usize) -> Sequence {
        decode(self.vocab, self.seq_len, code)
    }

    pub fn prob(&self, y: &[Token]) -> Result<f64> {
        Ok(self.probs[self.encode(y)?])
    }

    /// `(sequence, probability)` over the full space in code order.
    pub fn iter(&self) -> impl Iterator<Item = (Sequence, f64)> + '_ {
        self.probs
            .iter()
            .enumerate()
            .map(|(code, &p)| (self.decode(code), p))
    }

    /// Exact expectation `Σ p(y) f(y)`; terms with `p(y) = 0` are skipped.
    pub fn expect(&self, mut f: impl FnMut(&[Token]) -> f64) -> f64 {
        self.iter()
            .filter(|(_, p)| *p > 0.0)
            .map(|(y, p)| p * f(&y))
            .sum()
    }

    pub fn min_prob(&self) -> f64 {
        self.probs.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// `alpha * a + (1 - alpha) * b`. Mixtures of Markov chains are generally
    /// not Markov, which makes them useful truths for restricted model families.
    pub fn mixture(a: &Self, b: &Self, alpha: f64) -> Result<Self> {
        check_same_space(a, b)?;
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::InvalidArgument(format!(
                "mixture weight must lie in [0, 1], got {alpha}"
            )));
        }
        let probs = a
            .probs
            .iter()
            .zip(&b.probs)
            .map(|(p, q)| alpha * p + (1.0 - alpha) * q)
            .collect();
        Self::new(a.vocab, a.seq_len, probs)
    }

    /// I.i.d. draws by inverse CDF over the table.
    pub fn sample(&self, count: usize, seed: u64) -> Result<Dataset> {
        if count == 0 {
            return Err(Error::InvalidArgument("sample count must be at least 1".into()));
        }
        let index = WeightedIndex::new(&self.probs)
            .map_err(|e| Error::InvalidDistribution(e.to_string()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sequences = (0..count)
            .map(|_| self.decode(index.sample(&mut rng)))
            .collect();
        Dataset::new(self.vocab, self.seq_len, sequences, seed)
    }
}

pub(crate) fn encode(vocab: Vocab, seq_len: usize, y: &[Token]) -> Result<usize> {
    if y.len() != seq_len {
        return Err(Error::LengthMismatch {
            expected: seq_len,
            found: y.len(),
        });
    }
    let v = vocab.size();
    y.iter().try_fold(0usize, |code, &t| {
        vocab.check(t)?;
        Ok(code * v + t)
    })
}

pub(crate) fn decode(vocab: Vocab, seq_len: usize, mut code: usize) -> Sequence {
    let v = vocab.size();
    let mut y = vec![0; seq_len];
    for slot in y.iter_mut().rev() {
        *slot = code % v;
        code /= v;
    }
    y
}

pub(crate) fn check_same_space(p: &DistributionTable, q: &DistributionTable) -> Result<()> {
    if p.vocab != q.vocab || p.seq_len != q.seq_len {
        return Err(Error::SpaceMismatch {
            left_vocab: p.vocab.size(),
            left_len: p.seq_len,
            right_vocab: q.vocab.size(),
            right_len: q.seq_len,
        });
    }
    Ok(())
}

/// An ordered sample of sequences, tagged with the seed that drew it.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    vocab: Vocab,
    seq_len: usize,
    sequences: Vec<Sequence>,
    origin_seed: u64,
}

impl Dataset {
    pub fn new(
        vocab: Vocab,
        seq_len: usize,
        sequences: Vec<Sequence>,
        origin_seed: u64,
    ) -> Result<Self> {
        for y in &sequences {
            if y.len() != seq_len {
                return Err(Error::LengthMismatch {
                    expected: seq_len,
                    found: y.len(),
                });
            }
            for &t in y {
                vocab.check(t)?;
            }
        }
        Ok(Self {
            vocab,
            seq_len,
            sequences,
            origin_seed,
        })
    }

    pub fn vocab(&self) -> Vocab {
        self.vocab
    }

    pub fn seq_len(&self) -> usize {
        self.seq_len
    }

    pub fn sequences(&self) -> &[Sequence] {
        &self.sequences
    }

    pub fn origin_seed(&self) -> u64 {
        self.origin_seed
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    pub fn get(&self, index: usize) -> Option<&[Token]> {
        self.sequences.get(index).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = &[Token]> {
        self.sequences.iter().map(Vec::as_slice)
    }

    /// The first `count` sequences (or all of them).
    pub fn prefix(&self, count: usize) -> Self {
        Self {
            sequences: self.sequences[..count.min(self.len())].to_vec(),
            ..self.clone()
        }
    }

    /// Elements at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            sequences: indices.iter().map(|&i| self.sequences[i].clone()).collect(),
            ..self.clone()
        }
    }
}

/// Enumerates `source` with the default cap.
pub fn enumerate_distribution(source: &MarkovSource) -> Result<DistributionTable> {
    enumerate_distribution_with_cap(source, DEFAULT_ENUMERATION_CAP)
}

pub fn enumerate_distribution_with_cap(
    source: &MarkovSource,
    cap: usize,
) -> Result<DistributionTable> {
    let vocab = source.vocab;
    let size = space_size(vocab, source.seq_len, cap)?;
    let v = vocab.size();
    // Extend prefix probabilities one position at a time; code order is
    // preserved because the new token becomes the least significant digit.
    let mut probs = source.initial.clone();
    for _ in 1..source.seq_len {
        let mut next = Vec::with_capacity(probs.len() * v);
        for (code, &p) in probs.iter().enumerate() {
            let row = &source.transition[code % v];
            next.extend(row.iter().map(|&t| p * t));
        }
        probs = next;
    }
    debug_assert_eq!(probs.len(), size);
    DistributionTable::new(vocab, source.seq_len, probs)
}

/// Mixes a base seed with experiment coordinates (splitmix64 finalizer), so
/// every sweep cell gets an independent, reproducible stream.
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    let mut x = base;
    for &p in parts {
        x = x.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_add(p);
        x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        x ^= x >> 31;
    }
    x
}

/// Ancestral sampling of `count` i.i.d. sequences.
pub fn sample(source: &MarkovSource, count: usize, seed: u64) -> Result<Dataset> {
    if count == 0 {
        return Err(Error::InvalidArgument("sample count must be at least 1".into()));
    }
    let to_err = |e: rand::distr::weighted::Error| Error::InvalidDistribution(e.to_string());
    let start = WeightedIndex::new(&source.initial).map_err(to_err)?;
    let rows = source
        .transition
        .iter()
        .map(|row| WeightedIndex::new(row).map_err(to_err))
        .collect::<Result<Vec<_>>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sequences = (0..count)
        .map(|_| {
            let mut y = Vec::with_capacity(source.seq_len);
            let mut t = start.sample(&mut rng);
            y.push(t);
            for _ in 1..source.seq_len {
                t = rows[t].sample(&mut rng);
                y.push(t);
            }
            y
        })
        .collect();
    Dataset::new(source.vocab, source.seq_len, sequences, seed)
}

fn plogp(p: f64) -> f64 {
    if p > 0.0 {
        p * p.ln()
    } else {
        0.0
    }
}

fn vector_entropy(probs: &[f64]) -> f64 {
    -probs.iter().map(|&p| plogp(p)).sum::<f64>()
}

pub fn entropy(table: &DistributionTable) -> f64 {
    vector_entropy(&table.probs)
}

/// Entropy of a Markov source via the chain rule over positional marginals.
pub fn chain_rule_entropy(source: &MarkovSource) -> f64 {
    let v = source.vocab.size();
    let row_entropy: Vec<f64> = source.transition.iter().map(|r| vector_entropy(r)).collect();
    let mut marginal = source.initial.clone();
    let mut h = vector_entropy(&marginal);
    for _ in 1..source.seq_len {
        h += marginal
            .iter()
            .zip(&row_entropy)
            .map(|(m, e)| m * e)
            .sum::<f64>();
        let mut next = vec![0.0; v];
        for (s, &m) in marginal.iter().enumerate() {
            for (t, &p) in source.transition[s].iter().enumerate() {
                next[t] += m * p;
            }
        }
        marginal = next;
    }
    h
}

/// `KL(p || q) = Σ p log(p / q)`; requires `q > 0` wherever `p > 0`.
pub fn kl_divergence(p: &DistributionTable, q: &DistributionTable) -> Result<f64> {
    check_same_space(p, q)?;
    let mut kl = 0.0;
    for (index, (&pi, &qi)) in p.probs.iter().zip(&q.probs).enumerate() {
        if pi > 0.0 {
            if qi <= 0.0 {
                return Err(Error::AbsoluteContinuity { index });
            }
            kl += pi * (pi / qi).ln();
        }
    }
    Ok(kl)
}

pub fn total_variation(p: &DistributionTable, q: &DistributionTable) -> Result<f64> {
    check_same_space(p, q)?;
    Ok(0.5
        * p.probs
            .iter()
            .zip(&q.probs)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>())
}

/// Both sides of Pinsker's inequality `TV(p, q) <= sqrt(KL(p || q) / 2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PinskerReport {
    pub total_variation: f64,
    pub kl: f64,
    pub bound: f64,
    /// `bound - total_variation`; non-negative up to rounding.
    pub margin: f64,
}

pub fn pinsker(p: &DistributionTable, q: &DistributionTable) -> Result<PinskerReport> {
    let tv = total_variation(p, q)?;
    let kl = kl_divergence(p, q)?;
    let bound = (kl.max(0.0) / 2.0).sqrt();
    Ok(PinskerReport {
        total_variation: tv,
        kl,
        bound,
        margin: bound - tv,
    })
}

pub fn pinsker_margin(p: &DistributionTable, q: &DistributionTable) -> Result<f64> {
    pinsker(p, q).map(|r| r.margin)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop_assert, proptest};

    fn v(n: usize) -> Vocab {
        Vocab::new(n).unwrap()
    }

    fn table(probs: &[f64]) -> DistributionTable {
        DistributionTable::new(v(probs.len()), 1, probs.to_vec()).unwrap()
    }

    fn random_source(vocab: usize, seq_len: usize, seed: u64) -> MarkovSource {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut row = || {
            let raw: Vec<f64> = (0..vocab).map(|_| rng.random::<f64>() + 0.01).collect();
            let s: f64 = raw.iter().sum();
            raw.into_iter().map(|x| x / s).collect::<Vec<_>>()
        };
        let initial = row();
        let transition = (0..vocab).map(|_| row()).collect();
        MarkovSource::new(v(vocab), initial, transition, seq_len).unwrap()
    }

    #[test]
    fn vocab_needs_two_tokens() {
        assert!(Vocab::new(1).is_err());
        assert!(Vocab::new(2).is_ok());
    }

    #[test]
    fn rejects_non_stochastic_rows() {
        let err = MarkovSource::new(v(2), vec![0.5, 0.5], vec![vec![0.5, 0.6], vec![0.5, 0.5]], 2);
        assert!(matches!(err, Err(Error::InvalidDistribution(_))));
        let err = MarkovSource::new(v(2), vec![1.2, -0.2], vec![vec![0.5, 0.5]; 2], 2);
        assert!(matches!(err, Err(Error::InvalidDistribution(_))));
    }

    #[test]
    fn single_step_chain_table() {
        let s = MarkovSource::uniform(v(2), 1).unwrap();
        let t = enumerate_distribution(&s).unwrap();
        assert_eq!(t.probs(), &[0.5, 0.5]);
    }

    #[test]
    fn deterministic_start_table() {
        let s = MarkovSource::new(
            v(2),
            vec![1.0, 0.0],
            vec![vec![0.9, 0.1], vec![0.1, 0.9]],
            2,
        )
        .unwrap();
        let t = enumerate_distribution(&s).unwrap();
        assert_eq!(t.prob(&[0, 0]).unwrap(), 0.9);
        assert_eq!(t.prob(&[0, 1]).unwrap(), 0.1);
        assert_eq!(t.prob(&[1, 0]).unwrap(), 0.0);
        assert_eq!(t.prob(&[1, 1]).unwrap(), 0.0);
    }

    #[test]
    fn enumeration_matches_product_formula() {
        let s = random_source(3, 4, 1);
        let t = enumerate_distribution(&s).unwrap();
        let total: f64 = t.probs().iter().sum();
        assert!((total - 1.0).abs() < 1e-10);
        for (y, p) in t.iter() {
            assert!((p - s.sequence_prob(&y).unwrap()).abs() < 1e-15);
        }
    }

    #[test]
    fn enumeration_cap() {
        let s = MarkovSource::uniform(v(4), 11).unwrap();
        assert!(matches!(
            enumerate_distribution(&s),
            Err(Error::EnumerationTooLarge { .. })
        ));
        assert!(enumerate_distribution_with_cap(&s, 1 << 22).is_ok());
    }

    #[test]
    fn sampling_is_deterministic() {
        let s = random_source(3, 4, 2);
        assert_eq!(sample(&s, 50, 7).unwrap(), sample(&s, 50, 7).unwrap());
        assert_ne!(sample(&s, 50, 7).unwrap(), sample(&s, 50, 8).unwrap());
        assert!(sample(&s, 0, 7).is_err());
    }

    #[test]
    fn deterministic_chain_samples_one_sequence() {
        let s = MarkovSource::new(v(2), vec![0.0, 1.0], vec![vec![0.0, 1.0], vec![1.0, 0.0]], 4)
            .unwrap();
        let d = sample(&s, 5, 3).unwrap();
        assert_eq!(d.len(), 5);
        assert!(d.iter().all(|y| y == [1, 0, 1, 0]));
    }

    #[test]
    fn fair_coin_frequency() {
        let s = MarkovSource::uniform(v(2), 1).unwrap();
        let d = sample(&s, 10_000, 11).unwrap();
        let ones = d.iter().filter(|y| y[0] == 1).count() as f64 / 10_000.0;
        assert!((ones - 0.5).abs() < 0.02, "frequency {ones}");
    }

    #[test]
    fn entropy_examples() {
        assert!((entropy(&table(&[0.5, 0.5])) - 2f64.ln()).abs() < 1e-15);
        assert_eq!(entropy(&table(&[1.0, 0.0])), 0.0);
        let s = MarkovSource::new(v(2), vec![0.5, 0.5], vec![vec![0.9, 0.1], vec![0.1, 0.9]], 2)
            .unwrap();
        let t = enumerate_distribution(&s).unwrap();
        // Enumerate-and-sum oracle written out by hand.
        let oracle = -(2.0 * 0.45 * 0.45f64.ln() + 2.0 * 0.05 * 0.05f64.ln());
        assert!((entropy(&t) - oracle).abs() < 1e-12);
        assert!((entropy(&t) - 1.018_230_153_951).abs() < 1e-11);
    }

    #[test]
    fn kl_examples() {
        let p = table(&[0.75, 0.25]);
        let q = table(&[0.5, 0.5]);
        assert_eq!(kl_divergence(&p, &p).unwrap(), 0.0);
        let expected = 0.75 * 1.5f64.ln() + 0.25 * 0.5f64.ln();
        assert!((kl_divergence(&p, &q).unwrap() - expected).abs() < 1e-15);
        assert!((expected - 0.130_812).abs() < 1e-6);
        let err = kl_divergence(&table(&[1.0, 0.0]), &table(&[0.0, 1.0]));
        assert!(matches!(err, Err(Error::AbsoluteContinuity { index: 0 })));
    }

    #[test]
    fn kl_rejects_mismatched_spaces() {
        let p = table(&[0.5, 0.5]);
        let q = table(&[0.2, 0.3, 0.5]);
        assert!(matches!(kl_divergence(&p, &q), Err(Error::SpaceMismatch { .. })));
    }

    #[test]
    fn pinsker_examples() {
        let p = table(&[1.0, 0.0]);
        let q = table(&[0.5, 0.5]);
        let r = pinsker(&p, &q).unwrap();
        assert_eq!(r.total_variation, 0.5);
        assert!((r.kl - 2f64.ln()).abs() < 1e-15);
        assert!((r.margin - ((2f64.ln() / 2.0).sqrt() - 0.5)).abs() < 1e-15);
        assert!((r.margin - 0.0887).abs() < 1e-4);
        let same = pinsker(&q, &q).unwrap();
        assert_eq!(same.total_variation, 0.0);
        assert!(same.margin >= 0.0);
    }

    #[test]
    fn chain_rule_matches_enumeration() {
        for seed in 0..10 {
            let s = random_source(3, 5, seed);
            let t = enumerate_distribution(&s).unwrap();
            assert!((entropy(&t) - chain_rule_entropy(&s)).abs() < 1e-8);
        }
    }

    #[test]
    fn perturbation_is_seeded_and_stochastic() {
        let base = MarkovSource::sticky(v(4), 3, 0.7).unwrap();
        let a = base.perturbed(0.5, 3).unwrap();
        assert_eq!(a, base.perturbed(0.5, 3).unwrap());
        assert_ne!(a, base);
        assert_eq!(base.perturbed(0.0, 3).unwrap().initial(), base.initial());
    }

    #[test]
    fn mixture_and_table_sampling() {
        let a = enumerate_distribution(&random_source(2, 3, 4)).unwrap();
        let b = enumerate_distribution(&random_source(2, 3, 5)).unwrap();
        let m = DistributionTable::mixture(&a, &b, 0.3).unwrap();
        assert!((m.probs()[3] - (0.3 * a.probs()[3] + 0.7 * b.probs()[3])).abs() < 1e-15);
        let d = m.sample(100, 1).unwrap();
        assert_eq!(d, m.sample(100, 1).unwrap());
        assert_eq!(d.seq_len(), 3);
    }

    proptest! {
        #[test]
        fn information_inequalities(seed in 0u64..10_000, vocab in 2usize..4, len in 1usize..5) {
            let p = enumerate_distribution(&random_source(vocab, len, seed)).unwrap();
            let q = enumerate_distribution(&random_source(vocab, len, seed ^ 0x9e37)).unwrap();
            let total: f64 = p.probs().iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-10);
            prop_assert!(entropy(&p) <= len as f64 * (vocab as f64).ln() + 1e-10);
            prop_assert!(entropy(&p) >= 0.0);
            prop_assert!(kl_divergence(&p, &q).unwrap() >= -1e-12);
            prop_assert!(kl_divergence(&p, &p).unwrap().abs() < 1e-12);
            prop_assert!(pinsker_margin(&p, &q).unwrap() >= -1e-10);
        }
    }
}
