//! Pairwise distances between connections.
//!
//! Each unordered pair of connections is compared on up to four channels:
//! dynamic time warping over packet sizes and over inter-arrival times, and
//! cosine distance over source-port and destination-port n-gram profiles.
//! The two warping-cost matrices are min-max normalized independently into
//! `[0, 1]`, and the final distance is the mean of the selected channels, so
//! the combined matrix always stays within `[0, 1]` with a zero diagonal.

use std::cmp::Ordering;
use std::io::{Read, Write};

use thiserror::Error;

use crate::capture::Connection;
use crate::features::{ngram_profile, BaselineFeatures, NgramProfile, NgramVocabulary};

#[derive(Debug, Error)]
pub enum DistanceError {
    #[error("cannot compare an empty sequence")]
    EmptySequence,
    #[error("need at least 2 connections, got {found}")]
    TooFewConnections { found: usize },
    #[error("no features selected")]
    NoFeatures,
    #[error("malformed distance matrix: {reason}")]
    MalformedMatrix { reason: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Dense symmetric matrix with a zero diagonal, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    n: usize,
    data: Vec<f64>,
}

impl SymMatrix {
    pub fn zeros(n: usize) -> Self {
        SymMatrix {
            n,
            data: vec![0.0; n * n],
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    /// Sets both `(i, j)` and `(j, i)`.
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] = v;
        self.data[j * self.n + i] = v;
    }

    /// Row `i` as a slice.
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }
}

/// The four per-connection sequence channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SequenceFeature {
    PacketSize,
    Interval,
    SourcePort,
    DestPort,
}

impl SequenceFeature {
    pub const ALL: [SequenceFeature; 4] = [
        SequenceFeature::PacketSize,
        SequenceFeature::Interval,
        SequenceFeature::SourcePort,
        SequenceFeature::DestPort,
    ];

    /// Long name, used in artifact file names.
    pub fn as_str(self) -> &'static str {
        match self {
            SequenceFeature::PacketSize => "packet_size",
            SequenceFeature::Interval => "interval",
            SequenceFeature::SourcePort => "source_port",
            SequenceFeature::DestPort => "dest_port",
        }
    }

    /// Short token, used on the command line.
    pub fn token(self) -> &'static str {
        match self {
            SequenceFeature::PacketSize => "ps",
            SequenceFeature::Interval => "in",
            SequenceFeature::SourcePort => "sp",
            SequenceFeature::DestPort => "dp",
        }
    }
}

/// Which channels participate in the combined distance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeatureSet {
    pub packet_size: bool,
    pub interval: bool,
    pub source_port: bool,
    pub dest_port: bool,
}

impl Default for FeatureSet {
    fn default() -> Self {
        FeatureSet {
            packet_size: true,
            interval: true,
            source_port: true,
            dest_port: true,
        }
    }
}

impl FeatureSet {
    /// Parses a comma-separated list of `ps`, `in`, `sp`, `dp` tokens.
    pub fn parse(s: &str) -> Result<Self, DistanceError> {
        let mut set = FeatureSet {
            packet_size: false,
            interval: false,
            source_port: false,
            dest_port: false,
        };
        for token in s.split(',') {
            match token.trim() {
                "ps" => set.packet_size = true,
                "in" => set.interval = true,
                "sp" => set.source_port = true,
                "dp" => set.dest_port = true,
                "" => {}
                other => {
                    return Err(DistanceError::MalformedMatrix {
                        reason: format!("unknown feature token {other:?} (expected ps, in, sp, dp)"),
                    })
                }
            }
        }
        if set.selected().is_empty() {
            return Err(DistanceError::NoFeatures);
        }
        Ok(set)
    }

    pub fn contains(&self, f: SequenceFeature) -> bool {
        match f {
            SequenceFeature::PacketSize => self.packet_size,
            SequenceFeature::Interval => self.interval,
            SequenceFeature::SourcePort => self.source_port,
            SequenceFeature::DestPort => self.dest_port,
        }
    }

    pub fn selected(&self) -> Vec<SequenceFeature> {
        SequenceFeature::ALL
            .into_iter()
            .filter(|&f| self.contains(f))
            .collect()
    }
}

impl std::fmt::Display for FeatureSet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let tokens: Vec<&str> = self.selected().iter().map(|s| s.token()).collect();
        write!(f, "{}", tokens.join(","))
    }
}

/// Unconstrained dynamic time warping cost with local cost `|a_i - b_j|`.
///
/// `d(i, j) = |a_i - b_j| + min(d(i-1, j), d(i, j-1), d(i-1, j-1))` with
/// `d(1, 1) = |a_1 - b_1|`; the result is `d(|a|, |b|)`. Two rolling rows
/// keep memory at `O(|b|)`.
pub fn dtw_distance(a: &[f64], b: &[f64]) -> Result<f64, DistanceError> {
    if a.is_empty() || b.is_empty() {
        return Err(DistanceError::EmptySequence);
    }
    let m = b.len();
    let mut prev = vec![f64::INFINITY; m + 1];
    let mut curr = vec![f64::INFINITY; m + 1];
    prev[0] = 0.0;
    for &ai in a {
        curr[0] = f64::INFINITY;
        for j in 1..=m {
            let cost = (ai - b[j - 1]).abs();
            curr[j] = cost + prev[j].min(curr[j - 1]).min(prev[j - 1]);
        }
        std::mem::swap(&mut prev, &mut curr);
    }
    Ok(prev[m])
}

/// Cosine distance `1 - u.v / (|u||v|)` between two count profiles over the
/// same vocabulary, clamped into `[0, 1]`. If either profile is all-zero the
/// pair shares no behavior and the distance is 1.
pub fn cosine_distance(a: &NgramProfile, b: &NgramProfile) -> f64 {
    debug_assert_eq!(a.vocab_len(), b.vocab_len(), "profiles from different vocabularies");
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return 1.0;
    }
    let (ea, eb) = (a.entries(), b.entries());
    let mut dot = 0.0f64;
    let (mut i, mut j) = (0, 0);
    while i < ea.len() && j < eb.len() {
        match ea[i].0.cmp(&eb[j].0) {
            Ordering::Less => i += 1,
            Ordering::Greater => j += 1,
            Ordering::Equal => {
                dot += ea[i].1 as f64 * eb[j].1 as f64;
                i += 1;
                j += 1;
            }
        }
    }
    (1.0 - dot / (na * nb)).clamp(0.0, 1.0)
}

/// Min-max normalizes the off-diagonal entries in place. When every
/// off-diagonal entry is equal (including the 1-pair case) they all become 0.
pub fn normalize_matrix(m: &mut SymMatrix) {
    let n = m.n();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for i in 0..n {
        for j in (i + 1)..n {
            let v = m.get(i, j);
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    for i in 0..n {
        for j in (i + 1)..n {
            let v = if hi > lo { (m.get(i, j) - lo) / (hi - lo) } else { 0.0 };
            m.set(i, j, v);
        }
    }
}

/// Mean of the selected per-channel distances.
pub fn combine_components(components: &[f64]) -> f64 {
    assert!(!components.is_empty(), "combine_components needs at least one channel");
    components.iter().sum::<f64>() / components.len() as f64
}

#[derive(Debug, Clone)]
pub struct DistanceConfig {
    pub features: FeatureSet,
    /// Keep the per-channel matrices on the result (normalized for the two
    /// warping channels).
    pub retain_components: bool,
    /// Worker threads for the pairwise loop. The result is bit-identical for
    /// any worker count; 0 is treated as 1.
    pub workers: usize,
}

impl Default for DistanceConfig {
    fn default() -> Self {
        DistanceConfig {
            features: FeatureSet::default(),
            retain_components: false,
            workers: 1,
        }
    }
}

/// Combined distance matrix, with connection keys labeling the rows.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    pub keys: Vec<String>,
    pub values: SymMatrix,
    /// Per-channel matrices, present only when requested.
    pub components: Vec<(SequenceFeature, SymMatrix)>,
}

/// Computes the combined pairwise distance matrix over all connections.
///
/// Only the selected channels are computed. Pairs are split into contiguous
/// chunks across `workers` scoped threads; every pair's value lands in a
/// fixed slot, so the output does not depend on the worker count.
pub fn combined_matrix(
    connections: &[Connection],
    src_vocab: &NgramVocabulary,
    dst_vocab: &NgramVocabulary,
    cfg: &DistanceConfig,
) -> Result<DistanceMatrix, DistanceError> {
    let n = connections.len();
    if n < 2 {
        return Err(DistanceError::TooFewConnections { found: n });
    }
    let selected = cfg.features.selected();
    if selected.is_empty() {
        return Err(DistanceError::NoFeatures);
    }
    if connections.iter().any(|c| c.is_empty()) {
        return Err(DistanceError::EmptySequence);
    }

    let sizes: Vec<Vec<f64>> = connections
        .iter()
        .map(|c| c.f_ps.iter().map(|&s| s as f64).collect())
        .collect();
    let sp_profiles: Vec<NgramProfile> = connections
        .iter()
        .map(|c| ngram_profile(&c.f_sp, src_vocab))
        .collect();
    let dp_profiles: Vec<NgramProfile> = connections
        .iter()
        .map(|c| ngram_profile(&c.f_dp, dst_vocab))
        .collect();

    let mut pairs: Vec<(u32, u32)> = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            pairs.push((i as u32, j as u32));
        }
    }

    let features = cfg.features;
    let mut raw: Vec<[f64; 4]> = vec![[0.0; 4]; pairs.len()];
    let workers = cfg.workers.max(1).min(pairs.len().max(1));
    let chunk = pairs.len().div_ceil(workers);
    let (sizes, sp_profiles, dp_profiles) = (&sizes, &sp_profiles, &dp_profiles);
    std::thread::scope(|scope| {
        for (pair_chunk, out_chunk) in pairs.chunks(chunk).zip(raw.chunks_mut(chunk)) {
            scope.spawn(move || {
                for (&(i, j), out) in pair_chunk.iter().zip(out_chunk.iter_mut()) {
                    let (i, j) = (i as usize, j as usize);
                    if features.packet_size {
                        out[0] = dtw_distance(&sizes[i], &sizes[j])
                            .expect("connections checked non-empty");
                    }
                    if features.interval {
                        out[1] = dtw_distance(&connections[i].f_in, &connections[j].f_in)
                            .expect("connections checked non-empty");
                    }
                    if features.source_port {
                        out[2] = cosine_distance(&sp_profiles[i], &sp_profiles[j]);
                    }
                    if features.dest_port {
                        out[3] = cosine_distance(&dp_profiles[i], &dp_profiles[j]);
                    }
                }
            });
        }
    });

    let mut channel_matrices: Vec<(SequenceFeature, SymMatrix)> = Vec::new();
    for (slot, feature) in SequenceFeature::ALL.into_iter().enumerate() {
        if !features.contains(feature) {
            continue;
        }
        let mut m = SymMatrix::zeros(n);
        for (&(i, j), vals) in pairs.iter().zip(&raw) {
            m.set(i as usize, j as usize, vals[slot]);
        }
        if matches!(feature, SequenceFeature::PacketSize | SequenceFeature::Interval) {
            normalize_matrix(&mut m);
        }
        channel_matrices.push((feature, m));
    }

    let mut values = SymMatrix::zeros(n);
    let mut parts = Vec::with_capacity(channel_matrices.len());
    for &(i, j) in &pairs {
        parts.clear();
        for (_, m) in &channel_matrices {
            parts.push(m.get(i as usize, j as usize));
        }
        values.set(i as usize, j as usize, combine_components(&parts));
    }

    Ok(DistanceMatrix {
        keys: connections.iter().map(|c| c.key.to_string()).collect(),
        values,
        components: if cfg.retain_components {
            channel_matrices
        } else {
            Vec::new()
        },
    })
}

/// Distance matrix over the four baseline statistics: each statistic is
/// min-max normalized across connections (constant columns become 0), and the
/// distance is the Euclidean distance over the normalized values divided by
/// 2, which keeps it within `[0, 1]`.
pub fn baseline_matrix(
    keys: Vec<String>,
    features: &[BaselineFeatures],
) -> Result<DistanceMatrix, DistanceError> {
    let n = features.len();
    if n < 2 {
        return Err(DistanceError::TooFewConnections { found: n });
    }
    assert_eq!(keys.len(), n, "one key per feature row");

    let columns: [Vec<f64>; 4] = [
        features.iter().map(|f| f.avg_size).collect(),
        features.iter().map(|f| f.avg_interval).collect(),
        features.iter().map(|f| f.duration).collect(),
        features.iter().map(|f| f.max_psd).collect(),
    ];
    let mut normalized = vec![[0.0f64; 4]; n];
    for (c, column) in columns.iter().enumerate() {
        let lo = column.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = column.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if hi > lo {
            for (row, &v) in normalized.iter_mut().zip(column) {
                row[c] = (v - lo) / (hi - lo);
            }
        }
    }

    let mut values = SymMatrix::zeros(n);
    for i in 0..n {
        for j in (i + 1)..n {
            let d2: f64 = (0..4)
                .map(|c| {
                    let d = normalized[i][c] - normalized[j][c];
                    d * d
                })
                .sum();
            values.set(i, j, d2.sqrt() / 2.0);
        }
    }
    Ok(DistanceMatrix {
        keys,
        values,
        components: Vec::new(),
    })
}

/// Writes the combined matrix as a square CSV: header `key,<k1>,<k2>,...`,
/// then one row per connection. Values use the shortest exact decimal form,
/// so write-read-write is byte-stable.
pub fn write_distances_csv<W: Write>(m: &DistanceMatrix, w: W) -> Result<(), DistanceError> {
    let mut wtr = csv::Writer::from_writer(w);
    let mut header = Vec::with_capacity(m.keys.len() + 1);
    header.push("key".to_string());
    header.extend(m.keys.iter().cloned());
    wtr.write_record(&header)?;
    for (i, key) in m.keys.iter().enumerate() {
        let mut record = Vec::with_capacity(m.keys.len() + 1);
        record.push(key.clone());
        record.extend(m.values.row(i).iter().map(|v| v.to_string()));
        wtr.write_record(&record)?;
    }
    wtr.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Reads a matrix written by [`write_distances_csv`], validating shape,
/// symmetry, the zero diagonal, and the `[0, 1]` range.
pub fn read_distances_csv<R: Read>(r: R) -> Result<DistanceMatrix, DistanceError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).from_reader(r);
    let mut rows = rdr.records();
    let header = match rows.next() {
        Some(record) => record?,
        None => {
            return Err(DistanceError::MalformedMatrix {
                reason: "empty file".into(),
            })
        }
    };
    if header.get(0) != Some("key") {
        return Err(DistanceError::MalformedMatrix {
            reason: "first header column must be 'key'".into(),
        });
    }
    let keys: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let n = keys.len();
    if n < 2 {
        return Err(DistanceError::MalformedMatrix {
            reason: format!("matrix has {n} keys, need at least 2"),
        });
    }
    let mut values = SymMatrix::zeros(n);
    let mut i = 0usize;
    for record in rows {
        let record = record?;
        if i >= n {
            return Err(DistanceError::MalformedMatrix {
                reason: format!("more than {n} rows"),
            });
        }
        if record.get(0) != Some(keys[i].as_str()) {
            return Err(DistanceError::MalformedMatrix {
                reason: format!("row {i} is labeled {:?}, expected {:?}", record.get(0), keys[i]),
            });
        }
        if record.len() != n + 1 {
            return Err(DistanceError::MalformedMatrix {
                reason: format!("row {i} has {} columns, expected {}", record.len(), n + 1),
            });
        }
        for j in 0..n {
            let text = record.get(j + 1).unwrap();
            let v: f64 = text.parse().map_err(|_| DistanceError::MalformedMatrix {
                reason: format!("row {i} column {j}: {text:?} is not a number"),
            })?;
            if !v.is_finite() || !(0.0..=1.0).contains(&v) {
                return Err(DistanceError::MalformedMatrix {
                    reason: format!("row {i} column {j}: {v} outside [0, 1]"),
                });
            }
            values.data[i * n + j] = v;
        }
        i += 1;
    }
    if i != n {
        return Err(DistanceError::MalformedMatrix {
            reason: format!("{i} rows for {n} keys"),
        });
    }
    for a in 0..n {
        if values.get(a, a) != 0.0 {
            return Err(DistanceError::MalformedMatrix {
                reason: format!("diagonal entry {a} is {}", values.get(a, a)),
            });
        }
        for b in (a + 1)..n {
            if values.get(a, b) != values.get(b, a) {
                return Err(DistanceError::MalformedMatrix {
                    reason: format!("asymmetry at ({a}, {b})"),
                });
            }
        }
    }
    Ok(DistanceMatrix {
        keys,
        values,
        components: Vec::new(),
    })
}
