//! End-to-end orchestration: configuration, the full analysis run, and the
//! sequential-versus-baseline comparison.
//!
//! A run reads every capture in the input directory, extracts truncated
//! connections, computes the pairwise distance matrix (sequence channels by
//! default, the statistical baseline in baseline mode), clusters it, and
//! writes the artifact set in a fixed order: `connections.csv`,
//! `distances.csv`, `clusters.csv`, `profiles.csv`, `dag.dot`,
//! `heatmaps/*.svg`, `summary.csv`, `quality_report.csv`, plus auxiliary
//! exports and a `manifest.json` recording configuration, input digests, and
//! packet accounting. Artifacts are pure functions of config and input —
//! re-running a config reproduces every byte — and the CSV intermediates
//! double as resume points: heatmaps re-render from `clusters.csv` and the
//! DAG rebuilds from `profiles.csv` without recomputing distances.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufWriter, Write as IoWrite};
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::capture::{self, Connection, ConnectionKey, Direction};
use crate::cluster::{self, ClusterLabel, ClusterParams};
use crate::distance::{self, DistanceConfig, FeatureSet, SequenceFeature};
use crate::features;
use crate::profiles;
use crate::report::{self, FeatureBands, HeatmapSpec};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("no usable connections under {input:?}")]
    NoUsableConnections { input: PathBuf },
    #[error("bad configuration: {reason}")]
    Config { reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Capture(#[from] capture::CaptureError),
    #[error(transparent)]
    Feature(#[from] features::FeatureError),
    #[error(transparent)]
    Distance(#[from] distance::DistanceError),
    #[error(transparent)]
    Cluster(#[from] cluster::ClusterError),
    #[error(transparent)]
    Profile(#[from] profiles::ProfileError),
    #[error(transparent)]
    Report(#[from] report::ReportError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Full pipeline configuration. Defaults reproduce the reference setup:
/// window 20, trigram ports, clustering parameters (7, 7), all four sequence
/// channels.
#[derive(Debug, Clone)]
pub struct PipelineConfig {
    /// Capture file or directory of `.pcap` / `.jsonl` captures.
    pub input: PathBuf,
    /// Artifact directory, created if absent.
    pub out: PathBuf,
    /// Packets kept per connection (truncation window).
    pub len: usize,
    /// Minimum packets for a connection to be kept; defaults to `len`.
    pub min_len: Option<usize>,
    /// N-gram order for the port channels.
    pub order: usize,
    pub min_cluster_size: usize,
    pub k_nearest_neighbors: usize,
    /// Sequence channels entering the combined distance.
    pub features: FeatureSet,
    /// Swap the sequence distance for the statistical-feature baseline.
    pub baseline: bool,
    /// PSD bin width in seconds (baseline features).
    pub bin_width: f64,
    /// Addresses of the monitored host(s), for direction labeling.
    pub localhost: BTreeSet<String>,
    /// Optional `sample_id,family` CSV.
    pub family_labels: Option<PathBuf>,
    /// Optional `cluster_id,label` CSV (ids as `c3` or `3`, 1-based).
    pub capability_labels: Option<PathBuf>,
    /// Worker threads for the distance stage; 0 means 1.
    pub workers: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            input: PathBuf::new(),
            out: PathBuf::from("netbehave-out"),
            len: 20,
            min_len: None,
            order: 3,
            min_cluster_size: 7,
            k_nearest_neighbors: 7,
            features: FeatureSet::default(),
            baseline: false,
            bin_width: 1.0,
            localhost: BTreeSet::new(),
            family_labels: None,
            capability_labels: None,
            workers: default_workers(),
        }
    }
}

/// Available cores, the default distance-stage parallelism.
pub fn default_workers() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

impl PipelineConfig {
    /// The effective minimum connection length.
    pub fn effective_min_len(&self) -> usize {
        self.min_len.unwrap_or(self.len)
    }

    /// Loads a plain-text `key = value` config file. Blank lines and `#`
    /// comments are skipped; keys match the command-line flag names with
    /// underscores.
    pub fn from_file(path: &Path) -> Result<PipelineConfig, PipelineError> {
        let mut cfg = PipelineConfig::default();
        let text = fs::read_to_string(path)?;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| PipelineError::Config {
                reason: format!("line {}: expected key = value, got {line:?}", i + 1),
            })?;
            cfg.set(key.trim(), value.trim())?;
        }
        Ok(cfg)
    }

    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), PipelineError> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, PipelineError> {
            value.parse().map_err(|_| PipelineError::Config {
                reason: format!("{key}: cannot parse {value:?}"),
            })
        }
        match key {
            "input" => self.input = PathBuf::from(value),
            "out" => self.out = PathBuf::from(value),
            "len" => self.len = num(key, value)?,
            "min_len" => self.min_len = Some(num(key, value)?),
            "order" => self.order = num(key, value)?,
            "min_cluster_size" => self.min_cluster_size = num(key, value)?,
            "k" => self.k_nearest_neighbors = num(key, value)?,
            "features" => {
                self.features = FeatureSet::parse(value).map_err(|e| PipelineError::Config {
                    reason: format!("features: {e}"),
                })?
            }
            "baseline" => {
                self.baseline = match value {
                    "true" | "1" => true,
                    "false" | "0" => false,
                    other => {
                        return Err(PipelineError::Config {
                            reason: format!("baseline: expected true/false, got {other:?}"),
                        })
                    }
                }
            }
            "bin_width" => self.bin_width = num(key, value)?,
            "localhost" => {
                self.localhost = value
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(String::from)
                    .collect()
            }
            "family_labels" => self.family_labels = Some(PathBuf::from(value)),
            "capability_labels" => self.capability_labels = Some(PathBuf::from(value)),
            "workers" => self.workers = num(key, value)?,
            other => {
                return Err(PipelineError::Config { reason: format!("unknown key {other:?}") })
            }
        }
        Ok(())
    }

    fn validate(&self) -> Result<(), PipelineError> {
        let fail = |reason: String| Err(PipelineError::Config { reason });
        if self.input.as_os_str().is_empty() {
            return fail("input path is required".into());
        }
        if self.len == 0 {
            return fail("len must be at least 1".into());
        }
        let min_len = self.effective_min_len();
        if min_len == 0 || min_len > self.len {
            return fail(format!("min_len must lie in 1..={}, got {min_len}", self.len));
        }
        if self.order == 0 {
            return fail("order must be at least 1".into());
        }
        if self.min_cluster_size == 0 || self.k_nearest_neighbors == 0 {
            return fail("min_cluster_size and k must be at least 1".into());
        }
        if !(self.bin_width.is_finite() && self.bin_width > 0.0) {
            return fail(format!("bin_width must be positive, got {}", self.bin_width));
        }
        Ok(())
    }
}

/// What a finished run produced.
#[derive(Debug, Clone)]
pub struct PipelineReport {
    pub connections: usize,
    pub n_clusters: usize,
    pub noise: usize,
    pub mean_error_rate: f64,
    /// Artifact paths relative to `out_dir`, in write order.
    pub artifacts: Vec<String>,
    pub out_dir: PathBuf,
}

#[derive(Serialize)]
struct ManifestConfig {
    input: String,
    len: usize,
    min_len: usize,
    order: usize,
    min_cluster_size: usize,
    k_nearest_neighbors: usize,
    features: String,
    baseline: bool,
    bin_width: f64,
    localhost: Vec<String>,
    family_labels: Option<String>,
    capability_labels: Option<String>,
    workers: usize,
}

#[derive(Serialize)]
struct ManifestInput {
    file: String,
    sha256: String,
    packets: usize,
    non_ip_skipped: usize,
    malformed_lines: usize,
}

#[derive(Serialize)]
struct ManifestCounts {
    raw_packets: usize,
    packets_parsed: usize,
    non_ip_skipped: usize,
    malformed_lines: usize,
    portless_packets: usize,
    packets_kept: usize,
    packets_discarded: usize,
    connections: usize,
    discarded_connections: usize,
    clusters: usize,
    noise_connections: usize,
}

#[derive(Serialize)]
struct Manifest {
    config: ManifestConfig,
    inputs: Vec<ManifestInput>,
    counts: ManifestCounts,
    artifacts: Vec<String>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut hex = String::with_capacity(64);
    for byte in digest {
        hex.push_str(&format!("{byte:02x}"));
    }
    hex
}

/// Capture files under `input` (or `input` itself when it is a file),
/// sorted by name for deterministic ingestion order.
fn collect_input_files(input: &Path) -> Result<Vec<PathBuf>, PipelineError> {
    if input.is_file() {
        return Ok(vec![input.to_path_buf()]);
    }
    if !input.is_dir() {
        return Err(PipelineError::Config {
            reason: format!("input {input:?} is neither a file nor a directory"),
        });
    }
    let mut files: Vec<PathBuf> = fs::read_dir(input)?
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .map(|e| e.path())
        .filter(|p| {
            matches!(
                p.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
                Some("pcap") | Some("jsonl")
            )
        })
        .collect();
    files.sort();
    Ok(files)
}

struct ArtifactSink {
    dir: PathBuf,
    names: Vec<String>,
}

impl ArtifactSink {
    fn create(&mut self, rel: &str) -> Result<BufWriter<fs::File>, PipelineError> {
        let path = self.dir.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        self.names.push(rel.to_string());
        Ok(BufWriter::new(fs::File::create(path)?))
    }
}

fn load_family_labels(
    cfg: &PipelineConfig,
) -> Result<BTreeMap<String, String>, PipelineError> {
    match &cfg.family_labels {
        Some(path) => Ok(profiles::read_family_labels(fs::File::open(path)?)?),
        None => Ok(BTreeMap::new()),
    }
}

fn load_capability_labels(
    cfg: &PipelineConfig,
) -> Result<BTreeMap<usize, String>, PipelineError> {
    match &cfg.capability_labels {
        Some(path) => Ok(report::read_capability_labels(fs::File::open(path)?)?),
        None => Ok(BTreeMap::new()),
    }
}

fn write_heatmaps(
    sink: &mut ArtifactSink,
    connections: &[Connection],
    labels: &[ClusterLabel],
    n_clusters: usize,
    bands: &FeatureBands,
) -> Result<(), PipelineError> {
    let mut members_by_cluster: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &label) in labels.iter().enumerate() {
        if let ClusterLabel::Cluster(c) = label {
            members_by_cluster.entry(c).or_default().push(i);
        }
    }
    for c in 0..n_clusters {
        let mut members = members_by_cluster.get(&c).cloned().unwrap_or_default();
        members.sort_by_key(|&i| connections[i].key.to_string());
        for (slot, feature) in SequenceFeature::ALL.into_iter().enumerate() {
            let rows: Vec<(String, &[u8])> = members
                .iter()
                .map(|&i| (connections[i].key.to_string(), bands.banded[i][slot].as_slice()))
                .collect();
            let spec = HeatmapSpec {
                cluster_display_id: c + 1,
                feature,
                rows,
                scale: &bands.scales[slot],
            };
            let svg = report::render_heatmap(&spec)?;
            let rel = format!("heatmaps/cluster{}_{}.svg", c + 1, feature.as_str());
            let mut w = sink.create(&rel)?;
            w.write_all(svg.as_bytes())?;
        }
    }
    Ok(())
}

/// Runs the full pipeline and writes the artifact directory.
///
/// Artifacts appear in a fixed order and stages flush as they finish, so a
/// failing stage leaves the completed artifacts behind. An empty input
/// (no capture files, no packets, or nothing surviving `min_len`) fails
/// with [`PipelineError::NoUsableConnections`].
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<PipelineReport, PipelineError> {
    cfg.validate()?;
    let files = collect_input_files(&cfg.input)?;
    if files.is_empty() {
        return Err(PipelineError::NoUsableConnections { input: cfg.input.clone() });
    }

    let mut records = Vec::new();
    let mut inputs = Vec::with_capacity(files.len());
    let (mut non_ip_total, mut malformed_total, mut portless_total) = (0usize, 0usize, 0usize);
    for file in &files {
        let digest = sha256_hex(&fs::read(file)?);
        let parsed = capture::parse_capture(file)?;
        inputs.push(ManifestInput {
            file: file
                .file_name()
                .and_then(|n| n.to_str())
                .unwrap_or("capture")
                .to_string(),
            sha256: digest,
            packets: parsed.records.len(),
            non_ip_skipped: parsed.non_ip_skipped,
            malformed_lines: parsed.malformed.len(),
        });
        non_ip_total += parsed.non_ip_skipped;
        malformed_total += parsed.malformed.len();
        portless_total += parsed.portless_packets;
        records.extend(parsed.records);
    }

    let (mut connections, summary) =
        capture::extract_connections(&records, cfg.len, cfg.effective_min_len(), &cfg.localhost);
    if connections.is_empty() {
        return Err(PipelineError::NoUsableConnections { input: cfg.input.clone() });
    }
    connections.sort_by(|a, b| a.key.to_string().cmp(&b.key.to_string()));

    fs::create_dir_all(&cfg.out)?;
    let mut sink = ArtifactSink { dir: cfg.out.clone(), names: Vec::new() };

    capture::write_connections_csv(&connections, sink.create("connections.csv")?)
        .map_err(distance::DistanceError::from)?;

    let sp_vocab =
        features::build_vocabulary(connections.iter().map(|c| c.f_sp.as_slice()), cfg.order)?;
    let dp_vocab =
        features::build_vocabulary(connections.iter().map(|c| c.f_dp.as_slice()), cfg.order)?;

    let matrix = if cfg.baseline {
        let feats = connections
            .iter()
            .map(|c| features::baseline_features(c, cfg.bin_width))
            .collect::<Result<Vec<_>, _>>()?;
        let keys = connections.iter().map(|c| c.key.to_string()).collect();
        distance::baseline_matrix(keys, &feats)?
    } else {
        let dcfg = DistanceConfig {
            features: cfg.features,
            retain_components: false,
            workers: cfg.workers.max(1),
        };
        distance::combined_matrix(&connections, &sp_vocab, &dp_vocab, &dcfg)?
    };
    distance::write_distances_csv(&matrix, sink.create("distances.csv")?)?;

    let params = ClusterParams {
        min_cluster_size: cfg.min_cluster_size,
        k_nearest_neighbors: cfg.k_nearest_neighbors,
    };
    let clustering = cluster::cluster(&matrix.values, &params)?;
    cluster::write_clusters_csv(&matrix.keys, &clustering.labels, sink.create("clusters.csv")?)?;

    let keys: Vec<ConnectionKey> = connections.iter().map(|c| c.key.clone()).collect();
    let cms_profiles = profiles::build_all_cms(&keys, &clustering.labels, clustering.n_clusters);
    let families = load_family_labels(cfg)?;
    profiles::write_profiles_csv(&cms_profiles, &families, sink.create("profiles.csv")?)?;

    let dag = profiles::build_dag(&cms_profiles, &families)?;
    sink.create("dag.dot")?.write_all(profiles::to_dot(&dag).as_bytes())?;

    let bands = report::assign_bands(&connections);
    write_heatmaps(&mut sink, &connections, &clustering.labels, clustering.n_clusters, &bands)?;

    let capabilities = load_capability_labels(cfg)?;
    let sample_ids: Vec<String> =
        connections.iter().map(|c| c.key.sample_id.clone()).collect();
    let directions: Vec<Direction> = connections.iter().map(|c| c.direction).collect();
    let summary_rows =
        report::cluster_summary(&sample_ids, &directions, &clustering.labels, &families, &capabilities);
    report::write_summary_csv(&summary_rows, sink.create("summary.csv")?)?;

    let quality = report::quality_report(&clustering.labels, &matrix.values, &bands)?;
    report::write_quality_csv(&quality, sink.create("quality_report.csv")?)?;

    // Auxiliary artifacts, after the core set.
    sink.create("condensed_tree.json")?
        .write_all(cluster::condensed_tree_json(&clustering).as_bytes())?;
    features::write_feature_dump(
        &connections,
        &sp_vocab,
        &dp_vocab,
        cfg.bin_width,
        sink.create("features.csv")?,
    )?;
    let noise = clustering
        .labels
        .iter()
        .filter(|l| matches!(l, ClusterLabel::Noise))
        .count();
    let mut summary_txt = sink.create("summary.txt")?;
    report::write_summary_text(&summary_rows, &quality, noise, &mut summary_txt)?;
    drop(summary_txt);
    if !families.is_empty() {
        let cms_by_sample: BTreeMap<String, String> = cms_profiles
            .iter()
            .map(|p| (p.sample_id.clone(), p.bit_string()))
            .collect();
        let agreement = profiles::label_agreement(&families, &cms_by_sample);
        profiles::write_agreement_csv(&agreement, sink.create("agreement.csv")?)?;
        let matrix_rows = profiles::family_cluster_matrix(&cms_profiles, &families);
        let mut wtr = csv::Writer::from_writer(sink.create("family_matrix.csv")?);
        wtr.write_record(["family", "cms", "cluster_count"])
            .map_err(profiles::ProfileError::from)?;
        for row in &matrix_rows {
            let bits: String = row.bits.iter().map(|&b| if b { '1' } else { '0' }).collect();
            wtr.write_record([row.family.as_str(), &bits, &row.cluster_count.to_string()])
                .map_err(profiles::ProfileError::from)?;
        }
        wtr.flush()?;
    }

    let manifest = Manifest {
        config: ManifestConfig {
            input: cfg.input.display().to_string(),
            len: cfg.len,
            min_len: cfg.effective_min_len(),
            order: cfg.order,
            min_cluster_size: cfg.min_cluster_size,
            k_nearest_neighbors: cfg.k_nearest_neighbors,
            features: cfg.features.to_string(),
            baseline: cfg.baseline,
            bin_width: cfg.bin_width,
            localhost: cfg.localhost.iter().cloned().collect(),
            family_labels: cfg.family_labels.as_ref().map(|p| p.display().to_string()),
            capability_labels: cfg.capability_labels.as_ref().map(|p| p.display().to_string()),
            workers: cfg.workers,
        },
        inputs,
        counts: ManifestCounts {
            raw_packets: records.len() + non_ip_total + malformed_total,
            packets_parsed: records.len(),
            non_ip_skipped: non_ip_total,
            malformed_lines: malformed_total,
            portless_packets: portless_total,
            packets_kept: summary.packets_kept,
            packets_discarded: summary.packets_discarded,
            connections: connections.len(),
            discarded_connections: summary.discarded_connections,
            clusters: clustering.n_clusters,
            noise_connections: noise,
        },
        artifacts: sink.names.clone(),
    };
    let mut manifest_file = sink.create("manifest.json")?;
    serde_json::to_writer_pretty(&mut manifest_file, &manifest)?;
    manifest_file.write_all(b"\n")?;
    drop(manifest_file);

    Ok(PipelineReport {
        connections: connections.len(),
        n_clusters: clustering.n_clusters,
        noise,
        mean_error_rate: quality.mean_error_rate,
        artifacts: sink.names,
        out_dir: cfg.out.clone(),
    })
}

/// Side-by-side result of the two modes.
#[derive(Debug, Clone)]
pub struct ComparisonReport {
    pub sequential: PipelineReport,
    pub baseline: PipelineReport,
    /// `sequential mean CE rate - baseline mean CE rate`.
    pub difference: f64,
}

/// Runs the pipeline in sequential mode and in baseline mode on the same
/// input, then writes `comparison.csv` with both mean estimated clustering
/// error rates and their difference.
pub fn run_baseline_comparison(cfg: &PipelineConfig) -> Result<ComparisonReport, PipelineError> {
    let mut seq_cfg = cfg.clone();
    seq_cfg.out = cfg.out.join("sequential");
    seq_cfg.baseline = false;
    let sequential = run_pipeline(&seq_cfg)?;

    let mut base_cfg = cfg.clone();
    base_cfg.out = cfg.out.join("baseline");
    base_cfg.baseline = true;
    let baseline = run_pipeline(&base_cfg)?;

    let difference = sequential.mean_error_rate - baseline.mean_error_rate;
    let mut wtr = csv::Writer::from_writer(BufWriter::new(fs::File::create(
        cfg.out.join("comparison.csv"),
    )?));
    let write = |wtr: &mut csv::Writer<_>, mode: &str, r: &PipelineReport| {
        wtr.write_record([
            mode,
            &r.n_clusters.to_string(),
            &r.noise.to_string(),
            &r.mean_error_rate.to_string(),
        ])
    };
    wtr.write_record(["mode", "clusters", "noise", "mean_error_rate"])
        .map_err(profiles::ProfileError::from)?;
    write(&mut wtr, "sequential", &sequential).map_err(profiles::ProfileError::from)?;
    write(&mut wtr, "baseline", &baseline).map_err(profiles::ProfileError::from)?;
    wtr.write_record(["difference", "", "", &difference.to_string()])
        .map_err(profiles::ProfileError::from)?;
    wtr.flush()?;

    Ok(ComparisonReport { sequential, baseline, difference })
}

/// Re-renders every heatmap from `connections.csv` and `clusters.csv` in an
/// existing artifact directory. Returns the number of SVGs written.
pub fn rerender_heatmaps(out_dir: &Path) -> Result<usize, PipelineError> {
    let connections =
        capture::read_connections_csv(fs::File::open(out_dir.join("connections.csv"))?)?;
    let (keys, labels) =
        cluster::read_clusters_csv(fs::File::open(out_dir.join("clusters.csv"))?)?;
    let by_key: BTreeMap<String, ClusterLabel> =
        keys.into_iter().zip(labels.iter().copied()).collect();
    let mut connections = connections;
    connections.sort_by(|a, b| a.key.to_string().cmp(&b.key.to_string()));
    let aligned: Vec<ClusterLabel> = connections
        .iter()
        .map(|c| {
            by_key.get(&c.key.to_string()).copied().ok_or_else(|| PipelineError::Config {
                reason: format!("clusters.csv has no label for connection {}", c.key),
            })
        })
        .collect::<Result<_, _>>()?;
    let n_clusters = aligned
        .iter()
        .filter_map(|l| match l {
            ClusterLabel::Cluster(c) => Some(c + 1),
            ClusterLabel::Noise => None,
        })
        .max()
        .unwrap_or(0);
    let bands = report::assign_bands(&connections);
    let mut sink = ArtifactSink { dir: out_dir.to_path_buf(), names: Vec::new() };
    write_heatmaps(&mut sink, &connections, &aligned, n_clusters, &bands)?;
    Ok(sink.names.len())
}

/// Rebuilds `dag.dot` from `profiles.csv` in an existing artifact directory.
pub fn rebuild_dag(out_dir: &Path) -> Result<(), PipelineError> {
    let (cms_profiles, families) =
        profiles::read_profiles_csv(fs::File::open(out_dir.join("profiles.csv"))?)?;
    let dag = profiles::build_dag(&cms_profiles, &families)?;
    fs::write(out_dir.join("dag.dot"), profiles::to_dot(&dag))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{self, BehaviorKind, SYNTH_LOCALHOST};

    fn synth_fixture(dir: &Path) {
        let batches = vec![
            synth::generate(&BehaviorKind::systematic_port_scan(), 8, 10, 3).unwrap(),
            synth::generate(&BehaviorKind::periodic_heartbeat(), 8, 10, 3).unwrap(),
            synth::generate(&BehaviorKind::bulk_transfer(), 8, 10, 3).unwrap(),
        ];
        synth::write_batch_dir(dir, &batches).unwrap();
    }

    fn fixture_config(input: &Path, out: &Path) -> PipelineConfig {
        let mut cfg = PipelineConfig::default();
        cfg.input = input.to_path_buf();
        cfg.out = out.to_path_buf();
        cfg.len = 10;
        cfg.min_cluster_size = 4;
        cfg.k_nearest_neighbors = 4;
        cfg.localhost = BTreeSet::from([SYNTH_LOCALHOST.to_string()]);
        cfg.family_labels = Some(input.join("families.csv"));
        cfg.workers = 2;
        cfg
    }

    #[test]
    fn defaults_reproduce_the_reference_setup() {
        let cfg = PipelineConfig::default();
        assert_eq!(cfg.len, 20);
        assert_eq!(cfg.effective_min_len(), 20);
        assert_eq!(cfg.order, 3);
        assert_eq!(cfg.min_cluster_size, 7);
        assert_eq!(cfg.k_nearest_neighbors, 7);
        assert_eq!(cfg.bin_width, 1.0);
        assert!(!cfg.baseline);
        assert_eq!(cfg.features.to_string(), "ps,in,sp,dp");
    }

    #[test]
    fn config_files_parse_and_reject_unknown_keys() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.conf");
        fs::write(
            &path,
            "# analysis setup\ninput = captures\nlen = 30\nfeatures = ps,in\n\nbaseline = true\nlocalhost = 10.0.0.1, 10.0.0.2\nworkers = 3\n",
        )
        .unwrap();
        let cfg = PipelineConfig::from_file(&path).unwrap();
        assert_eq!(cfg.input, PathBuf::from("captures"));
        assert_eq!(cfg.len, 30);
        assert_eq!(cfg.effective_min_len(), 30, "min_len follows len");
        assert_eq!(cfg.features.to_string(), "ps,in");
        assert!(cfg.baseline);
        assert_eq!(cfg.localhost.len(), 2);
        assert_eq!(cfg.workers, 3);

        fs::write(&path, "wibble = 9\n").unwrap();
        assert!(matches!(
            PipelineConfig::from_file(&path),
            Err(PipelineError::Config { .. })
        ));
        fs::write(&path, "len thirty\n").unwrap();
        assert!(PipelineConfig::from_file(&path).is_err());
    }

    #[test]
    fn invalid_settings_are_rejected_before_running() {
        let mut cfg = PipelineConfig::default();
        cfg.input = PathBuf::from("somewhere");
        cfg.min_len = Some(25);
        assert!(matches!(run_pipeline(&cfg), Err(PipelineError::Config { .. })));
        cfg.min_len = None;
        cfg.bin_width = 0.0;
        assert!(matches!(run_pipeline(&cfg), Err(PipelineError::Config { .. })));
    }

    #[test]
    fn a_full_run_writes_the_documented_artifact_set() {
        let dir = tempfile::tempdir().unwrap();
        let input = dir.path().join("captures");
        synth_fixture(&input);
        let out = dir.path().join("analysis");
        let cfg = fixture_config(&input, &out);
        let report = run_pipeline(&cfg).unwrap();
        assert_eq!(report.connections, 24);
        assert!(report.n_clusters >= 3, "three planted kinds separate");

        for required in [
            "connections.csv",
            "distances.csv",
            "clusters.csv",
            "profiles.csv",
            "dag.dot",
            "summary.csv",
            "quality_report.csv",
            "condensed_tree.json",
            "features.csv",
            "summary.txt",
            "agreement.csv",
            "family_matrix.csv",
            "manifest.json",
        ] {
            assert!(out.join(required).is_file(), "missing {required}");
        }
        // One heatmap per cluster and feature.
        let svgs = fs::read_dir(out.join("heatmaps")).unwrap().count();
        assert_eq!(svgs, report.n_clusters * 4);
        // Every artifact the report lists exists on disk.
        for rel in &report.artifacts {
            assert!(out.join(rel).is_file(), "listed artifact {rel} missing");
        }

        let manifest: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
        assert_eq!(manifest["counts"]["connections"], 24);
        assert_eq!(manifest["counts"]["packets_parsed"], 240);
        let kept = manifest["counts"]["packets_kept"].as_u64().unwrap();
        let discarded = manifest["counts"]["packets_discarded"].as_u64().unwrap();
        let non_ip = manifest["counts"]["non_ip_skipped"].as_u64().unwrap();
        let malformed = manifest["counts"]["malformed_lines"].as_u64().unwrap();
        assert_eq!(
            kept + discarded + non_ip + malformed,
            manifest["counts"]["raw_packets"].as_u64().unwrap()
        );
        assert_eq!(manifest["inputs"].as_array().unwrap().len(), 24);
        let digest = manifest["inputs"][0]["sha256"].as_str().unwrap();
        assert_eq!(digest.len(), 64);
        assert!(digest.chars().all(|c| c.is_ascii_hexdigit()));
        assert!(manifest.get("timestamp").is_none());
    }

    fn dir_snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
        let mut out = BTreeMap::new();
        let mut stack = vec![dir.to_path_buf()];
        while let Some(d) = stack.pop() {
            for entry in fs::read_dir(&d).unwrap() {
                let path = entry.unwrap().path();
                if path.is_dir() {
                    stack.push(path);
                } else {
                    let rel = path.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                    out.insert(rel, fs::read(&path).unwrap());
                }
            }
        }
        out
    }

    #[test]
    fn identical_configs_reproduce_every_byte() {
        let dir = tempfile::tempdir().unwrap();
        let input = dir.path().join("captures");
        synth_fixture(&input);
        let out_a = dir.path().join("a");
        let out_b = dir.path().join("b");
        run_pipeline(&fixture_config(&input, &out_a)).unwrap();
        run_pipeline(&fixture_config(&input, &out_b)).unwrap();
        let snap_a = dir_snapshot(&out_a);
        let snap_b = dir_snapshot(&out_b);
        assert_eq!(
            snap_a.keys().collect::<Vec<_>>(),
            snap_b.keys().collect::<Vec<_>>(),
            "same file sets"
        );
        for (name, bytes) in &snap_a {
            assert_eq!(bytes, &snap_b[name], "artifact {name} differs between runs");
        }
    }

    #[test]
    fn baseline_mode_swaps_the_distance_stage_only() {
        let dir = tempfile::tempdir().unwrap();
        let input = dir.path().join("captures");
        synth_fixture(&input);
        let mut cfg = fixture_config(&input, &dir.path().join("base"));
        cfg.baseline = true;
        let report = run_pipeline(&cfg).unwrap();
        assert_eq!(report.connections, 24);
        let manifest: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(cfg.out.join("manifest.json")).unwrap())
                .unwrap();
        assert_eq!(manifest["config"]["baseline"], true);
        let seq = fs::read_to_string(dir.path().join("base").join("distances.csv")).unwrap();
        let mut seq_cfg = fixture_config(&input, &dir.path().join("seq"));
        seq_cfg.baseline = false;
        run_pipeline(&seq_cfg).unwrap();
        let base = fs::read_to_string(dir.path().join("seq").join("distances.csv")).unwrap();
        assert_ne!(seq, base, "the two modes measure different distances");
    }

    #[test]
    fn comparison_reports_both_rates_and_their_difference() {
        let dir = tempfile::tempdir().unwrap();
        let input = dir.path().join("captures");
        // One behavior only: both modes find one coherent cluster, zero
        // estimated errors, difference zero.
        let batches =
            vec![synth::generate(&BehaviorKind::periodic_heartbeat(), 10, 8, 5).unwrap()];
        synth::write_batch_dir(&input, &batches).unwrap();
        let mut cfg = fixture_config(&input, &dir.path().join("cmp"));
        cfg.len = 8;
        let report = run_baseline_comparison(&cfg).unwrap();
        assert_eq!(report.sequential.n_clusters, 1);
        assert_eq!(report.baseline.n_clusters, 1);
        assert_eq!(report.sequential.mean_error_rate, 0.0);
        assert_eq!(report.baseline.mean_error_rate, 0.0);
        assert_eq!(report.difference, 0.0);
        let text = fs::read_to_string(cfg.out.join("comparison.csv")).unwrap();
        assert_eq!(
            text,
            "mode,clusters,noise,mean_error_rate\nsequential,1,0,0\nbaseline,1,0,0\ndifference,,,0\n"
        );
        assert!(cfg.out.join("sequential/manifest.json").is_file());
        assert!(cfg.out.join("baseline/manifest.json").is_file());
    }

    #[test]
    fn empty_inputs_fail_with_the_no_usable_connections_diagnostic() {
        let dir = tempfile::tempdir().unwrap();
        let input = dir.path().join("captures");
        fs::create_dir_all(&input).unwrap();
        let cfg = fixture_config(&input, &dir.path().join("out"));
        let err = run_pipeline(&cfg).unwrap_err();
        assert!(
            err.to_string().contains("no usable connections"),
            "diagnostic was: {err}"
        );

        // A capture whose connections are all too short fails the same way.
        fs::write(
            input.join("tiny.jsonl"),
            "{\"ts\":1.0,\"src_ip\":\"10.0.0.1\",\"dst_ip\":\"1.2.3.4\",\"src_port\":1,\"dst_port\":2,\"ip_size\":40}\n",
        )
        .unwrap();
        let err = run_pipeline(&cfg).unwrap_err();
        assert!(err.to_string().contains("no usable connections"));
    }

    #[test]
    fn heatmaps_and_dag_rebuild_identically_from_intermediates() {
        let dir = tempfile::tempdir().unwrap();
        let input = dir.path().join("captures");
        synth_fixture(&input);
        let out = dir.path().join("analysis");
        let report = run_pipeline(&fixture_config(&input, &out)).unwrap();

        let before = dir_snapshot(&out);
        fs::remove_dir_all(out.join("heatmaps")).unwrap();
        fs::remove_file(out.join("dag.dot")).unwrap();
        let svgs = rerender_heatmaps(&out).unwrap();
        assert_eq!(svgs, report.n_clusters * 4);
        rebuild_dag(&out).unwrap();
        let after = dir_snapshot(&out);
        assert_eq!(before, after, "rebuilt intermediates must be byte-identical");
    }
}
