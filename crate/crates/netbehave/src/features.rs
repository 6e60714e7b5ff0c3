//! Feature extraction on top of connections.
//!
//! Port sequences are summarized as n-gram count profiles over a dataset-wide
//! vocabulary, later compared with cosine distance. Separately, each
//! connection can be reduced to four simple statistics (mean size, mean
//! interval, duration, strongest periodicity) that form the baseline
//! clustering mode used for comparison against the sequence-based pipeline.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::Write;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::Serialize;
use thiserror::Error;

use crate::capture::Connection;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Fixed, ordered set of port n-grams observed across a dataset.
///
/// The vocabulary is the union of all length-`order` windows over the input
/// sequences, ordered lexicographically. Rebuilding over the same sequences
/// always yields the same ordering, so profile indices are stable.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NgramVocabulary {
    order: usize,
    grams: Vec<Vec<u16>>,
    index: HashMap<Vec<u16>, usize>,
}

impl NgramVocabulary {
    /// Builds a vocabulary from explicit grams, preserving their order.
    /// All grams must have length `order` and be distinct.
    pub fn from_grams(grams: Vec<Vec<u16>>, order: usize) -> Result<Self, FeatureError> {
        if order == 0 {
            return Err(FeatureError::InvalidParams("order must be at least 1".into()));
        }
        let mut index = HashMap::with_capacity(grams.len());
        for (i, g) in grams.iter().enumerate() {
            if g.len() != order {
                return Err(FeatureError::InvalidParams(format!(
                    "gram {g:?} has length {}, vocabulary order is {order}",
                    g.len()
                )));
            }
            if index.insert(g.clone(), i).is_some() {
                return Err(FeatureError::InvalidParams(format!("duplicate gram {g:?}")));
            }
        }
        Ok(NgramVocabulary { order, grams, index })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn len(&self) -> usize {
        self.grams.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grams.is_empty()
    }

    pub fn grams(&self) -> &[Vec<u16>] {
        &self.grams
    }

    pub fn position(&self, gram: &[u16]) -> Option<usize> {
        self.index.get(gram).copied()
    }
}

/// Collects every length-`order` window across the sequences into a sorted
/// vocabulary. Sequences shorter than `order` contribute nothing.
pub fn build_vocabulary<'a, I>(sequences: I, order: usize) -> Result<NgramVocabulary, FeatureError>
where
    I: IntoIterator<Item = &'a [u16]>,
{
    if order == 0 {
        return Err(FeatureError::InvalidParams("order must be at least 1".into()));
    }
    let mut set: BTreeSet<Vec<u16>> = BTreeSet::new();
    for seq in sequences {
        for window in seq.windows(order) {
            if !set.contains(window) {
                set.insert(window.to_vec());
            }
        }
    }
    NgramVocabulary::from_grams(set.into_iter().collect(), order)
}

/// N-gram counts of one sequence against a vocabulary.
///
/// Counts are stored sparsely as `(vocabulary index, count)` pairs in index
/// order; [`NgramProfile::counts`] materializes the dense vector of length
/// `|G|`. Windows not present in the vocabulary are ignored and counted in
/// [`NgramProfile::oov_count`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NgramProfile {
    vocab_len: usize,
    entries: Vec<(u32, u32)>,
    oov: u32,
}

impl NgramProfile {
    pub fn from_counts(counts: &[u32]) -> Self {
        let entries = counts
            .iter()
            .enumerate()
            .filter(|(_, &c)| c > 0)
            .map(|(i, &c)| (i as u32, c))
            .collect();
        NgramProfile {
            vocab_len: counts.len(),
            entries,
            oov: 0,
        }
    }

    /// Length of the dense count vector, i.e. the vocabulary size.
    pub fn vocab_len(&self) -> usize {
        self.vocab_len
    }

    /// Sparse non-zero counts, ordered by vocabulary index.
    pub fn entries(&self) -> &[(u32, u32)] {
        &self.entries
    }

    /// Windows that fell outside the vocabulary.
    pub fn oov_count(&self) -> u32 {
        self.oov
    }

    /// Dense count vector of length `|G|`.
    pub fn counts(&self) -> Vec<u32> {
        let mut out = vec![0u32; self.vocab_len];
        for &(i, c) in &self.entries {
            out[i as usize] = c;
        }
        out
    }

    /// Sum of all counts; equals `max(0, L - order + 1)` minus out-of-vocabulary
    /// windows for a sequence of length `L`.
    pub fn total(&self) -> u64 {
        self.entries.iter().map(|&(_, c)| c as u64).sum()
    }

    /// Euclidean norm of the count vector.
    pub fn norm(&self) -> f64 {
        self.entries
            .iter()
            .map(|&(_, c)| (c as f64) * (c as f64))
            .sum::<f64>()
            .sqrt()
    }
}

/// Slides a window of length `order` (stride 1) over the sequence and tallies
/// counts per vocabulary gram.
pub fn ngram_profile(sequence: &[u16], vocab: &NgramVocabulary) -> NgramProfile {
    let mut counts: BTreeMap<u32, u32> = BTreeMap::new();
    let mut oov = 0u32;
    for window in sequence.windows(vocab.order()) {
        match vocab.position(window) {
            Some(i) => *counts.entry(i as u32).or_insert(0) += 1,
            None => oov += 1,
        }
    }
    NgramProfile {
        vocab_len: vocab.len(),
        entries: counts.into_iter().collect(),
        oov,
    }
}

/// Statistical summary of one connection, used by the baseline mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BaselineFeatures {
    /// Mean packet size in bytes.
    pub avg_size: f64,
    /// Mean inter-arrival time in milliseconds, excluding the leading zero.
    /// 0 for single-packet connections.
    pub avg_interval: f64,
    /// Time span of the truncated window in seconds.
    pub duration: f64,
    /// Largest power-spectral-density value over non-zero frequencies of the
    /// binary packet-presence signal. 0 when the connection is shorter than
    /// one bin.
    pub max_psd: f64,
}

/// Hard ceiling on presence-signal length; wider connections fall back to a
/// proportionally coarser bin so memory stays bounded.
const MAX_BINS: usize = 1 << 21;

/// Computes the four baseline statistics for a connection.
///
/// The presence signal for the periodicity check is sampled at `bin_width`
/// seconds over the connection's duration: bin `floor(t / bin_width)` is 1
/// when at least one packet falls inside it. The power spectrum is
/// `|DFT(s)|^2 / N` with the DC component excluded. A duration shorter than
/// `bin_width` is a degenerate signal and yields `max_psd = 0`.
pub fn baseline_features(conn: &Connection, bin_width: f64) -> Result<BaselineFeatures, FeatureError> {
    if !(bin_width.is_finite() && bin_width > 0.0) {
        return Err(FeatureError::InvalidParams(format!(
            "bin width must be positive and finite, got {bin_width}"
        )));
    }
    let l = conn.len();
    assert!(l >= 1, "connections are never empty");
    let avg_size = conn.f_ps.iter().map(|&s| s as f64).sum::<f64>() / l as f64;
    let avg_interval = if l > 1 {
        conn.f_in[1..].iter().sum::<f64>() / (l - 1) as f64
    } else {
        0.0
    };
    let duration = conn.f_in.iter().sum::<f64>() / 1000.0;

    let mut times = Vec::with_capacity(l);
    let mut t = 0.0;
    for &gap in &conn.f_in {
        t += gap / 1000.0;
        times.push(t);
    }
    let max_psd = max_psd(&times, duration, bin_width);

    Ok(BaselineFeatures {
        avg_size,
        avg_interval,
        duration,
        max_psd,
    })
}

fn max_psd(times_s: &[f64], duration: f64, bin_width: f64) -> f64 {
    if duration < bin_width {
        return 0.0;
    }
    let mut width = bin_width;
    let mut n_bins = (duration / width).floor() as usize + 1;
    if n_bins > MAX_BINS {
        let factor = n_bins.div_ceil(MAX_BINS);
        width = bin_width * factor as f64;
        n_bins = (duration / width).floor() as usize + 1;
    }
    if n_bins < 2 {
        return 0.0;
    }
    let mut signal = vec![Complex::new(0.0, 0.0); n_bins];
    for &t in times_s {
        let bin = ((t / width).floor() as usize).min(n_bins - 1);
        signal[bin] = Complex::new(1.0, 0.0);
    }
    let fft = FftPlanner::new().plan_fft_forward(n_bins);
    fft.process(&mut signal);
    signal[1..]
        .iter()
        .map(|x| x.norm_sqr() / n_bins as f64)
        .fold(0.0, f64::max)
}

/// Writes the per-connection feature dump.
///
/// Columns, in order: key, direction, length, original_length, avg_size,
/// avg_interval_ms, duration_s, max_psd, src_ngram_counts, dst_ngram_counts.
/// The two count columns are dense space-separated vectors aligned with the
/// respective vocabulary.
pub fn write_feature_dump<W: Write>(
    connections: &[Connection],
    src_vocab: &NgramVocabulary,
    dst_vocab: &NgramVocabulary,
    bin_width: f64,
    w: W,
) -> Result<(), FeatureError> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record([
        "key",
        "direction",
        "length",
        "original_length",
        "avg_size",
        "avg_interval_ms",
        "duration_s",
        "max_psd",
        "src_ngram_counts",
        "dst_ngram_counts",
    ])?;
    for c in connections {
        let base = baseline_features(c, bin_width)?;
        let sp = ngram_profile(&c.f_sp, src_vocab);
        let dp = ngram_profile(&c.f_dp, dst_vocab);
        let join = |counts: Vec<u32>| {
            counts
                .iter()
                .map(u32::to_string)
                .collect::<Vec<_>>()
                .join(" ")
        };
        wtr.write_record([
            &c.key.to_string(),
            c.direction.as_str(),
            &c.len().to_string(),
            &c.original_length.to_string(),
            &base.avg_size.to_string(),
            &base.avg_interval.to_string(),
            &base.duration.to_string(),
            &base.max_psd.to_string(),
            &join(sp.counts()),
            &join(dp.counts()),
        ])?;
    }
    wtr.flush().map_err(csv::Error::from)?;
    Ok(())
}
