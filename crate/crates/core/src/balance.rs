//! Concept frequency statistics and long-tail resampling.
//!
//! Each pair is weighted by its rarest concept relative to the median
//! concept frequency: `w = clamp((f_ref / f_min)^alpha, w_min, w_max)`.
//! Head concepts get `w < 1` and are undersampled, tail concepts get `w > 1`
//! and are oversampled.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::caption::{tokenize, Stopwords};
use crate::corpus::CuratedPair;
use crate::error::{Error, Result};
use crate::rng::stream_rng;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FrequencyTable {
    counts: BTreeMap<String, u64>,
    total: u64,
}

impl FrequencyTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, token: &str, n: u64) {
        if n == 0 {
            return;
        }
        *self.counts.entry(token.to_owned()).or_default() += n;
        self.total += n;
    }

    pub fn merge(&mut self, other: &FrequencyTable) {
        for (k, v) in &other.counts {
            self.add(k, *v);
        }
    }

    pub fn get(&self, token: &str) -> Option<u64> {
        self.counts.get(token).copied()
    }

    pub fn counts(&self) -> &BTreeMap<String, u64> {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    /// Median of the per-entry counts; even sizes average the middle two.
    pub fn median_count(&self) -> Option<f64> {
        let mut v: Vec<u64> = self.counts.values().copied().collect();
        if v.is_empty() {
            return None;
        }
        v.sort_unstable();
        let n = v.len();
        Some(if n % 2 == 1 {
            v[n / 2] as f64
        } else {
            (v[n / 2 - 1] as f64 + v[n / 2] as f64) / 2.0
        })
    }

    /// TSV rows `token<TAB>count`, sorted by descending count then token.
    pub fn write_tsv<W: Write>(&self, mut w: W) -> Result<()> {
        let mut rows: Vec<(&String, &u64)> = self.counts.iter().collect();
        rows.sort_by(|a, b| b.1.cmp(a.1).then_with(|| a.0.cmp(b.0)));
        for (k, v) in rows {
            writeln!(w, "{k}\t{v}")?;
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = File::create(path).map_err(|e| Error::file(path, e))?;
        let mut w = BufWriter::new(f);
        self.write_tsv(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn read_tsv<R: BufRead>(r: R) -> Result<Self> {
        let mut t = FrequencyTable::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |reason: String| Error::TableFormat { line: i + 1, reason };
            let (tok, n) = line
                .split_once('\t')
                .ok_or_else(|| bad("expected token<TAB>count".into()))?;
            let n: u64 = n.trim().parse().map_err(|e| bad(format!("bad count: {e}")))?;
            t.add(tok, n);
        }
        Ok(t)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = File::open(path).map_err(|e| Error::file(path, e))?;
        Self::read_tsv(BufReader::new(f))
    }
}

/// Lowercase token counts over pair texts, stopwords excluded.
pub fn count_unigrams<'a, I>(pairs: I, stopwords: &Stopwords) -> FrequencyTable
where
    I: IntoIterator<Item = &'a CuratedPair>,
{
    let mut t = FrequencyTable::new();
    for p in pairs {
        for tok in tokenize(&p.text) {
            if !stopwords.contains(&tok) {
                t.add(&tok, 1);
            }
        }
    }
    t
}

/// Number of pairs carrying each canonical concept.
pub fn count_concepts<'a, I>(pairs: I) -> FrequencyTable
where
    I: IntoIterator<Item = &'a CuratedPair>,
{
    let mut t = FrequencyTable::new();
    for p in pairs {
        for c in &p.concepts {
            t.add(c, 1);
        }
    }
    t
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BalanceParams {
    pub alpha: f64,
    pub w_min: f64,
    pub w_max: f64,
    pub seed: u64,
}

impl Default for BalanceParams {
    fn default() -> Self {
        BalanceParams {
            alpha: 0.5,
            w_min: 0.1,
            w_max: 10.0,
            seed: 0,
        }
    }
}

impl BalanceParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::invalid(format!("alpha must be > 0, got {}", self.alpha)));
        }
        if !(0.0 < self.w_min && self.w_min <= 1.0 && 1.0 <= self.w_max && self.w_max.is_finite()) {
            return Err(Error::invalid(format!(
                "need 0 < w_min <= 1 <= w_max, got w_min={} w_max={}",
                self.w_min, self.w_max
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResampleMode {
    /// `floor(w)` copies plus one more with probability `frac(w)`.
    ExpectedCount,
    /// One copy with probability `min(1, w)`.
    Bernoulli,
}

/// Pair weights against a fixed frequency table, with the median cached.
#[derive(Debug, Clone)]
pub struct Reweighter<'a> {
    freq: &'a FrequencyTable,
    params: BalanceParams,
    f_ref: Option<f64>,
}

impl<'a> Reweighter<'a> {
    pub fn new(freq: &'a FrequencyTable, params: BalanceParams) -> Result<Self> {
        params.validate()?;
        Ok(Reweighter {
            freq,
            params,
            f_ref: freq.median_count(),
        })
    }

    pub fn weight_for_count(&self, f_min: f64) -> f64 {
        let Some(f_ref) = self.f_ref else { return 1.0 };
        let f_min = f_min.max(1.0);
        (f_ref / f_min)
            .powf(self.params.alpha)
            .clamp(self.params.w_min, self.params.w_max)
    }

    pub fn weight(&self, pair: &CuratedPair) -> f64 {
        // absent concepts count as seen once
        let f_min = pair
            .concepts
            .iter()
            .map(|c| self.freq.get(c).unwrap_or(1))
            .min();
        match f_min {
            None => 1.0,
            Some(f) => self.weight_for_count(f as f64),
        }
    }
}

pub fn pair_weight(pair: &CuratedPair, freq: &FrequencyTable, params: &BalanceParams) -> Result<f64> {
    Ok(Reweighter::new(freq, *params)?.weight(pair))
}

/// Copies of one item for a weight and a uniform variate in [0, 1).
pub fn multiplicity(weight: f64, u: f64, mode: ResampleMode) -> usize {
    match mode {
        ResampleMode::ExpectedCount => {
            let whole = weight.floor();
            whole as usize + usize::from(u < weight - whole)
        }
        ResampleMode::Bernoulli => usize::from(u < weight.min(1.0)),
    }
}

/// Streaming resampler: pair `i` of a shard consumes the `i`-th variate of
/// the (seed, shard) stream.
#[derive(Debug)]
pub struct Resampler<'a> {
    weigher: Reweighter<'a>,
    mode: ResampleMode,
    rng: ChaCha8Rng,
}

impl<'a> Resampler<'a> {
    pub fn new(freq: &'a FrequencyTable, params: &BalanceParams, mode: ResampleMode, shard: u64) -> Result<Self> {
        Ok(Resampler {
            weigher: Reweighter::new(freq, *params)?,
            mode,
            rng: stream_rng(params.seed, shard),
        })
    }

    /// Append the copies of `pair` to `out`, each annotated with its weight.
    /// Returns the copy count.
    pub fn push(&mut self, pair: &CuratedPair, out: &mut Vec<CuratedPair>) -> usize {
        let w = self.weigher.weight(pair);
        let u: f64 = self.rng.random();
        let n = multiplicity(w, u, self.mode);
        for _ in 0..n {
            let mut q = pair.clone();
            q.weight = w;
            out.push(q);
        }
        n
    }
}

/// Resample one shard; the output depends only on input order, seed and
/// shard index.
pub fn resample_shard(
    pairs: &[CuratedPair],
    freq: &FrequencyTable,
    params: &BalanceParams,
    mode: ResampleMode,
    shard: u64,
) -> Result<Vec<CuratedPair>> {
    let mut r = Resampler::new(freq, params, mode, shard)?;
    let mut out = Vec::with_capacity(pairs.len());
    for p in pairs {
        r.push(p, &mut out);
    }
    Ok(out)
}

pub fn resample(
    pairs: &[CuratedPair],
    freq: &FrequencyTable,
    params: &BalanceParams,
    mode: ResampleMode,
) -> Result<Vec<CuratedPair>> {
    resample_shard(pairs, freq, params, mode, 0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pair(text: &str, concepts: &[&str]) -> CuratedPair {
        CuratedPair::new("m", text).with_concepts(concepts.iter().copied())
    }

    fn table(entries: &[(&str, u64)]) -> FrequencyTable {
        let mut t = FrequencyTable::new();
        for (k, v) in entries {
            t.add(k, *v);
        }
        t
    }

    #[test]
    fn unigram_hand_count() {
        let pairs = [pair("a dog", &[]), pair("dog runs", &[])];
        let t = count_unigrams(&pairs, &Stopwords::from_words(["a"]));
        assert_eq!(t, table(&[("dog", 2), ("runs", 1)]));
        assert_eq!(t.total(), 3);
        assert!(count_unigrams(&[], &Stopwords::default()).is_empty());
    }

    #[test]
    fn tsv_roundtrip() {
        let t = table(&[("dog", 5), ("cat", 5), ("emu", 1)]);
        let mut buf = Vec::new();
        t.write_tsv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap(), "cat\t5\ndog\t5\nemu\t1\n");
        assert_eq!(FrequencyTable::read_tsv(buf.as_slice()).unwrap(), t);
    }

    #[test]
    fn weight_examples() {
        let p = BalanceParams::default();
        // even-sized table: median of {1, 100} is 50.5
        let freq = table(&[("ref", 100), ("rare", 1)]);
        let w = Reweighter::new(&freq, p).unwrap();
        assert_eq!(w.weight_for_count(50.5), 1.0);
        assert!((w.weight_for_count(101.0) - 0.5f64.sqrt()).abs() < 1e-15);

        let freq = table(&[("ref", 100)]);
        let w = Reweighter::new(&freq, p).unwrap();
        assert_eq!(w.weight_for_count(1.0), 10.0);
        assert_eq!(w.weight_for_count(10_000.0), 0.1);
        for alpha in [0.1, 1.0, 3.0] {
            let w = Reweighter::new(&freq, BalanceParams { alpha, ..p }).unwrap();
            assert_eq!(w.weight_for_count(100.0), 1.0);
        }
    }

    #[test]
    fn rarest_concept_governs() {
        let freq = table(&[("head", 10_000), ("mid", 100), ("tail", 1)]);
        let p = BalanceParams::default();
        assert_eq!(pair_weight(&pair("x", &["head", "tail"]), &freq, &p).unwrap(), 10.0);
        assert_eq!(pair_weight(&pair("x", &["head"]), &freq, &p).unwrap(), 0.1);
        assert_eq!(pair_weight(&pair("x", &[]), &freq, &p).unwrap(), 1.0);
        // unseen concept counts once
        assert_eq!(pair_weight(&pair("x", &["unseen"]), &freq, &p).unwrap(), 10.0);
    }

    #[test]
    fn params_validated() {
        let bad = BalanceParams { w_min: 1.5, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = BalanceParams { alpha: 0.0, ..Default::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn unit_weights_pass_through() {
        let pairs: Vec<_> = (0..50).map(|i| pair(&format!("p{i}"), &["c"])).collect();
        let freq = count_concepts(&pairs);
        let out = resample(&pairs, &freq, &BalanceParams::default(), ResampleMode::ExpectedCount).unwrap();
        assert_eq!(out, pairs);
    }

    #[test]
    fn integral_weight_is_exact() {
        assert_eq!(multiplicity(2.0, 0.0, ResampleMode::ExpectedCount), 2);
        assert_eq!(multiplicity(2.0, 0.999, ResampleMode::ExpectedCount), 2);
        assert_eq!(multiplicity(2.5, 0.49, ResampleMode::ExpectedCount), 3);
        assert_eq!(multiplicity(2.5, 0.5, ResampleMode::ExpectedCount), 2);
        assert_eq!(multiplicity(2.5, 0.99, ResampleMode::Bernoulli), 1);
        assert_eq!(multiplicity(0.3, 0.31, ResampleMode::Bernoulli), 0);

        // f_ref = 4 (median of {4, 4, 1}), tail count 1 -> (4/1)^0.5 = 2 copies
        let mut pairs = vec![pair("tail", &["t"])];
        pairs.extend((0..4).map(|_| pair("a", &["a"])));
        pairs.extend((0..4).map(|_| pair("b", &["b"])));
        let freq = count_concepts(&pairs);
        for seed in 0..10 {
            let p = BalanceParams { seed, ..Default::default() };
            let out = resample(&pairs, &freq, &p, ResampleMode::ExpectedCount).unwrap();
            assert_eq!(out.iter().filter(|q| q.text == "tail").count(), 2);
        }
    }

    #[test]
    fn shards_draw_independent_streams() {
        let pairs: Vec<_> = (0..200)
            .map(|i| pair(&format!("p{i}"), &[if i % 10 == 0 { "rare" } else { "common" }]))
            .collect();
        let freq = count_concepts(&pairs);
        let p = BalanceParams::default();
        let a = resample_shard(&pairs, &freq, &p, ResampleMode::Bernoulli, 0).unwrap();
        let b = resample_shard(&pairs, &freq, &p, ResampleMode::Bernoulli, 1).unwrap();
        assert_ne!(a, b);
        assert_eq!(a, resample_shard(&pairs, &freq, &p, ResampleMode::Bernoulli, 0).unwrap());
    }

    proptest! {
        #[test]
        fn merge_matches_whole(texts in prop::collection::vec("[a-e ]{0,12}", 0..40), cut in 0usize..40) {
            let pairs: Vec<_> = texts.iter().filter(|t| !t.is_empty()).map(|t| pair(t, &[])).collect();
            let cut = cut.min(pairs.len());
            let sw = Stopwords::from_words(["a"]);
            let whole = count_unigrams(&pairs, &sw);
            let mut left = count_unigrams(&pairs[..cut], &sw);
            let right = count_unigrams(&pairs[cut..], &sw);
            let mut swapped = right.clone();
            swapped.merge(&left);
            left.merge(&right);
            prop_assert_eq!(&left, &whole);
            prop_assert_eq!(&swapped, &whole);
            prop_assert_eq!(whole.total(), whole.counts().values().sum::<u64>());
        }

        #[test]
        fn weight_non_increasing(a in 1u64..100_000, b in 1u64..100_000, alpha in 0.05f64..3.0) {
            let freq = table(&[("x", 37), ("y", 900), ("z", 5)]);
            let w = Reweighter::new(&freq, BalanceParams { alpha, ..Default::default() }).unwrap();
            let (lo, hi) = (a.min(b) as f64, a.max(b) as f64);
            prop_assert!(w.weight_for_count(lo) >= w.weight_for_count(hi));
        }

        #[test]
        fn resample_deterministic(seed in any::<u64>(), n in 1usize..60) {
            let pairs: Vec<_> = (0..n).map(|i| pair(&format!("p{i}"), &[["a", "b", "c"][i % 3]])).collect();
            let mut freq = count_concepts(&pairs);
            freq.add("a", 50);
            let p = BalanceParams { seed, ..Default::default() };
            for mode in [ResampleMode::ExpectedCount, ResampleMode::Bernoulli] {
                prop_assert_eq!(
                    resample(&pairs, &freq, &p, mode).unwrap(),
                    resample(&pairs, &freq, &p, mode).unwrap()
                );
            }
        }
    }
}
