//! Sequence sampling and frequency-profile comparison for pre-tokenized
//! corpora.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Zipf};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::random::{self, STREAM_CORPUS};
use crate::{Error, Result};

pub type Sequence = Vec<String>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleConfig {
    pub count: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub seed: u64,
}

impl Default for SampleConfig {
    fn default() -> Self {
        SampleConfig { count: 5000, min_len: 3, max_len: 50, seed: 0 }
    }
}

/// Unique sequences drawn from a corpus, kept in corpus order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusSample {
    pub sequences: Vec<Sequence>,
    /// SHA-256 over every input sequence, tokens separated by one space and
    /// sequences terminated by a newline.
    pub source_hash: String,
    pub seed: u64,
    /// Unique, length-bounded sequences the sample was drawn from.
    pub eligible: usize,
}

/// Draw `count` sequences uniformly without replacement from the unique
/// sequences whose length lies in `[min_len, max_len]`.
pub fn sample_sequences<I>(corpus: I, cfg: &SampleConfig) -> Result<CorpusSample>
where
    I: IntoIterator<Item = Sequence>,
{
    if cfg.min_len == 0 || cfg.min_len > cfg.max_len {
        return Err(Error::Config(format!(
            "length bounds must satisfy 1 <= min <= max, got [{}, {}]",
            cfg.min_len, cfg.max_len
        )));
    }
    let mut hasher = Sha256::new();
    let mut seen: HashSet<Sequence> = HashSet::new();
    let mut eligible: Vec<Sequence> = Vec::new();
    for seq in corpus {
        hasher.update(seq.join(" ").as_bytes());
        hasher.update(b"\n");
        if (cfg.min_len..=cfg.max_len).contains(&seq.len()) && !seen.contains(&seq) {
            seen.insert(seq.clone());
            eligible.push(seq);
        }
    }
    if eligible.len() < cfg.count {
        return Err(Error::Data(format!(
            "only {} eligible unique sequences of length {}..={}, {} requested",
            eligible.len(),
            cfg.min_len,
            cfg.max_len,
            cfg.count
        )));
    }
    let mut rng = random::rng(cfg.seed, STREAM_CORPUS);
    let mut picked = rand::seq::index::sample(&mut rng, eligible.len(), cfg.count).into_vec();
    picked.sort_unstable();
    let total = eligible.len();
    let mut slots: Vec<Option<Sequence>> = eligible.into_iter().map(Some).collect();
    let sequences = picked.into_iter().map(|i| slots[i].take().expect("indices are distinct")).collect();
    Ok(CorpusSample {
        sequences,
        source_hash: hasher.finalize().iter().map(|b| format!("{b:02x}")).collect(),
        seed: cfg.seed,
        eligible: total,
    })
}

/// Whitespace-tokenized lines of every file, concatenated in argument order.
/// Blank lines become empty sequences.
pub fn read_token_lines<P: AsRef<Path>>(paths: &[P]) -> Result<Vec<Sequence>> {
    let mut out = Vec::new();
    for p in paths {
        let p = p.as_ref();
        let file = fs::File::open(p).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::NotFound(p.to_path_buf()),
            _ => Error::Io(e),
        })?;
        for line in BufReader::new(file).lines() {
            out.push(line?.split_whitespace().map(str::to_owned).collect());
        }
    }
    Ok(out)
}

/// One sequence per line, tokens separated by single spaces.
pub fn write_sequences(path: &Path, sequences: &[Sequence]) -> Result<()> {
    let mut w = std::io::BufWriter::new(fs::File::create(path)?);
    for s in sequences {
        writeln!(w, "{}", s.join(" "))?;
    }
    w.flush()?;
    Ok(())
}

/// Raw n-gram and length counts; shards merge by addition.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FrequencyCounts {
    pub unigram: BTreeMap<String, u64>,
    pub bigram: BTreeMap<(String, String), u64>,
    pub lengths: BTreeMap<usize, u64>,
    pub sequences: u64,
}

impl FrequencyCounts {
    pub fn add(&mut self, seq: &[String]) {
        self.sequences += 1;
        *self.lengths.entry(seq.len()).or_default() += 1;
        for t in seq {
            *self.unigram.entry(t.clone()).or_default() += 1;
        }
        for w in seq.windows(2) {
            *self.bigram.entry((w[0].clone(), w[1].clone())).or_default() += 1;
        }
    }

    pub fn merge(&mut self, other: &FrequencyCounts) {
        self.sequences += other.sequences;
        for (k, v) in &other.unigram {
            *self.unigram.entry(k.clone()).or_default() += v;
        }
        for (k, v) in &other.bigram {
            *self.bigram.entry(k.clone()).or_default() += v;
        }
        for (k, v) in &other.lengths {
            *self.lengths.entry(*k).or_default() += v;
        }
    }

    pub fn profile(&self) -> Result<FrequencyProfile> {
        if self.sequences == 0 {
            return Err(Error::InsufficientData("frequency profile of no sequences".into()));
        }
        Ok(FrequencyProfile {
            unigram: normalize(&self.unigram),
            bigram: normalize(&self.bigram),
            lengths: normalize(&self.lengths),
        })
    }
}

fn normalize<K: Clone + Ord>(counts: &BTreeMap<K, u64>) -> BTreeMap<K, f64> {
    let total: u64 = counts.values().sum();
    counts.iter().map(|(k, &c)| (k.clone(), c as f64 / total as f64)).collect()
}

/// Relative frequencies. Each map sums to 1, except that `bigram` is empty
/// when no sequence has two tokens.
#[derive(Clone, Debug, PartialEq)]
pub struct FrequencyProfile {
    pub unigram: BTreeMap<String, f64>,
    pub bigram: BTreeMap<(String, String), f64>,
    pub lengths: BTreeMap<usize, f64>,
}

pub fn frequency_profile<S: AsRef<[String]>>(sequences: &[S]) -> Result<FrequencyProfile> {
    let mut c = FrequencyCounts::default();
    for s in sequences {
        c.add(s.as_ref());
    }
    c.profile()
}

/// Jensen–Shannon divergence in nats over the union support; absent keys
/// have probability 0. Bounded by `ln 2`.
pub fn jsd<K: Ord>(p: &BTreeMap<K, f64>, q: &BTreeMap<K, f64>) -> f64 {
    let term = |a: f64, m: f64| if a > 0.0 { a * (a / m).ln() } else { 0.0 };
    let mut total = 0.0;
    for (k, &a) in p {
        let b = q.get(k).copied().unwrap_or(0.0);
        let m = 0.5 * (a + b);
        total += 0.5 * (term(a, m) + term(b, m));
    }
    for (k, &b) in q {
        if !p.contains_key(k) {
            total += 0.5 * term(b, 0.5 * b);
        }
    }
    total.clamp(0.0, std::f64::consts::LN_2)
}

/// One row of a plot-ready frequency table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankRow {
    pub rank: usize,
    pub item: String,
    pub sample: f64,
    pub full: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfileComparison {
    pub unigram_jsd: f64,
    pub bigram_jsd: f64,
    pub length_jsd: f64,
    /// Items ranked by full-corpus frequency, ties by item.
    #[serde(skip)]
    pub unigram_table: Vec<RankRow>,
    #[serde(skip)]
    pub bigram_table: Vec<RankRow>,
    /// Lengths in ascending order.
    #[serde(skip)]
    pub length_table: Vec<RankRow>,
}

pub fn compare_profiles(sample: &FrequencyProfile, full: &FrequencyProfile) -> ProfileComparison {
    let bigram_key = |(a, b): &(String, String)| format!("{a} {b}");
    ProfileComparison {
        unigram_jsd: jsd(&sample.unigram, &full.unigram),
        bigram_jsd: jsd(&sample.bigram, &full.bigram),
        length_jsd: jsd(&sample.lengths, &full.lengths),
        unigram_table: ranked(&sample.unigram, &full.unigram, |k| k.clone(), true),
        bigram_table: ranked(&sample.bigram, &full.bigram, bigram_key, true),
        length_table: ranked(&sample.lengths, &full.lengths, |k| k.to_string(), false),
    }
}

fn ranked<K: Ord>(
    sample: &BTreeMap<K, f64>,
    full: &BTreeMap<K, f64>,
    name: impl Fn(&K) -> String,
    by_frequency: bool,
) -> Vec<RankRow> {
    let mut keys: Vec<&K> = full.keys().chain(sample.keys().filter(|k| !full.contains_key(*k))).collect();
    keys.sort();
    let freq = |m: &BTreeMap<K, f64>, k: &K| m.get(k).copied().unwrap_or(0.0);
    if by_frequency {
        keys.sort_by(|a, b| freq(full, b).total_cmp(&freq(full, a)));
    }
    keys.into_iter()
        .enumerate()
        .map(|(i, k)| RankRow { rank: i + 1, item: name(k), sample: freq(sample, k), full: freq(full, k) })
        .collect()
}

/// CSV with header `rank,item,sample,full`. Items are quoted.
pub fn write_rank_table(path: &Path, rows: &[RankRow]) -> Result<()> {
    let mut w = std::io::BufWriter::new(fs::File::create(path)?);
    writeln!(w, "rank,item,sample,full")?;
    for r in rows {
        writeln!(w, "{},\"{}\",{},{}", r.rank, r.item.replace('"', "\"\""), r.sample, r.full)?;
    }
    w.flush()?;
    Ok(())
}

/// Baseline with the token labels randomly permuted over the vocabulary of
/// `sequences`: sequence lengths and the multiset of frequencies survive,
/// which token carries which frequency does not.
pub fn shuffle_tokens(sequences: &[Sequence], seed: u64) -> Vec<Sequence> {
    let vocab: Vec<&String> = {
        let mut v: Vec<&String> = sequences.iter().flatten().collect::<HashSet<_>>().into_iter().collect();
        v.sort();
        v
    };
    let mut image = vocab.clone();
    image.shuffle(&mut random::rng(seed, STREAM_CORPUS + 1));
    let map: BTreeMap<&String, &String> = vocab.into_iter().zip(image).collect();
    sequences.iter().map(|s| s.iter().map(|t| map[t].clone()).collect()).collect()
}

/// Synthetic corpus: Zipf(1.1) tokens over `vocab` words `w0, w1, …`,
/// lengths uniform on `1..=60`, and about 5% of lines repeating an earlier
/// line.
pub fn synthetic_corpus(lines: usize, vocab: usize, seed: u64) -> Result<Vec<Sequence>> {
    if vocab == 0 {
        return Err(Error::Config("vocabulary must be nonempty".into()));
    }
    let zipf = Zipf::new(vocab as f64, 1.1).map_err(|e| Error::Config(e.to_string()))?;
    let mut rng = random::rng(seed, STREAM_CORPUS + 2);
    let mut out: Vec<Sequence> = Vec::with_capacity(lines);
    for _ in 0..lines {
        if !out.is_empty() && rng.random::<f64>() < 0.05 {
            let j = rng.random_range(0..out.len());
            out.push(out[j].clone());
            continue;
        }
        let len = rng.random_range(1..=60);
        out.push((0..len).map(|_| format!("w{}", zipf.sample(&mut rng) as usize - 1)).collect());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(s: &str) -> Sequence {
        s.split_whitespace().map(str::to_owned).collect()
    }

    fn unique_lines(n: usize, len: usize) -> Vec<Sequence> {
        (0..n).map(|i| (0..len).map(|t| format!("t{i}_{t}")).collect()).collect()
    }

    #[test]
    fn sample_of_unique_fixed_length_lines() {
        let corpus = unique_lines(10_000, 10);
        let s = sample_sequences(corpus, &SampleConfig { seed: 4, ..SampleConfig::default() }).unwrap();
        assert_eq!(s.sequences.len(), 5000);
        assert!(s.sequences.iter().all(|q| q.len() == 10));
        assert_eq!(s.sequences.iter().collect::<HashSet<_>>().len(), 5000);
        assert_eq!(s.eligible, 10_000);
    }

    #[test]
    fn duplicates_count_once_and_bounds_apply() {
        let corpus = vec![seq("a b c"), seq("a b c"), seq("a b"), seq(""), seq("x y z w"), seq("a b c")];
        let cfg = SampleConfig { count: 2, ..SampleConfig::default() };
        let s = sample_sequences(corpus.clone(), &cfg).unwrap();
        assert_eq!(s.eligible, 2);
        assert_eq!(s.sequences, vec![seq("a b c"), seq("x y z w")]);
        let err = sample_sequences(corpus, &SampleConfig { count: 3, ..cfg }).unwrap_err();
        assert!(matches!(err, Error::Data(ref m) if m.contains("only 2 eligible")), "{err}");
    }

    #[test]
    fn sampling_is_seeded() {
        let corpus = unique_lines(200, 4);
        let cfg = |seed| SampleConfig { count: 20, seed, ..SampleConfig::default() };
        let a = sample_sequences(corpus.clone(), &cfg(1)).unwrap();
        let b = sample_sequences(corpus.clone(), &cfg(1)).unwrap();
        let c = sample_sequences(corpus, &cfg(2)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.sequences, c.sequences);
        assert_eq!(a.source_hash, c.source_hash);
    }

    #[test]
    fn hand_counted_profile() {
        let p = frequency_profile(&[seq("a b a")]).unwrap();
        assert_eq!(p.unigram["a"], 2.0 / 3.0);
        assert_eq!(p.unigram["b"], 1.0 / 3.0);
        assert_eq!(p.bigram[&("a".into(), "b".into())], 0.5);
        assert_eq!(p.bigram[&("b".into(), "a".into())], 0.5);
        assert_eq!(p.lengths[&3], 1.0);
        assert!(frequency_profile::<Sequence>(&[]).is_err());
    }

    #[test]
    fn jsd_extremes() {
        let p = frequency_profile(&[seq("a b a"), seq("c a")]).unwrap();
        assert_eq!(jsd(&p.unigram, &p.unigram), 0.0);
        let q = frequency_profile(&[seq("x y")]).unwrap();
        assert!((jsd(&p.unigram, &q.unigram) - std::f64::consts::LN_2).abs() < 1e-15);
        let cmp = compare_profiles(&p, &p);
        assert_eq!((cmp.unigram_jsd, cmp.bigram_jsd, cmp.length_jsd), (0.0, 0.0, 0.0));
    }

    #[test]
    fn rank_tables_order_by_full_frequency() {
        let sample = frequency_profile(&[seq("b b c")]).unwrap();
        let full = frequency_profile(&[seq("a a a b b c")]).unwrap();
        let cmp = compare_profiles(&sample, &full);
        let items: Vec<&str> = cmp.unigram_table.iter().map(|r| r.item.as_str()).collect();
        assert_eq!(items, ["a", "b", "c"]);
        assert_eq!(cmp.unigram_table[0].sample, 0.0);
        assert_eq!(cmp.length_table.iter().map(|r| r.item.as_str()).collect::<Vec<_>>(), ["3", "6"]);
    }

    #[test]
    fn shuffled_baseline_keeps_shape() {
        let corpus = synthetic_corpus(500, 100, 3).unwrap();
        let shuffled = shuffle_tokens(&corpus, 9);
        assert_eq!(
            corpus.iter().map(Vec::len).collect::<Vec<_>>(),
            shuffled.iter().map(Vec::len).collect::<Vec<_>>()
        );
        let mut a: Vec<f64> = frequency_profile(&corpus).unwrap().unigram.into_values().collect();
        let mut b: Vec<f64> = frequency_profile(&shuffled).unwrap().unigram.into_values().collect();
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        assert_eq!(a, b);
    }

    #[test]
    fn shards_merge_to_the_whole() {
        let corpus = synthetic_corpus(300, 50, 1).unwrap();
        let mut whole = FrequencyCounts::default();
        corpus.iter().for_each(|s| whole.add(s));
        let (l, r) = corpus.split_at(120);
        let mut left = FrequencyCounts::default();
        l.iter().for_each(|s| left.add(s));
        let mut right = FrequencyCounts::default();
        r.iter().for_each(|s| right.add(s));
        right.merge(&left);
        assert_eq!(right, whole);
    }
}
