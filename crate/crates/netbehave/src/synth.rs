//! Deterministic synthetic traffic for demos, tuning, and ground-truth
//! evaluation.
//!
//! Each [`BehaviorKind`] emits packet trains with a distinctive temporal
//! shape — port sweeps, randomized scans, heartbeats, floods, bulk pushes —
//! so a labeled mixture exercises the whole pipeline end to end. Generation
//! is a pure function of `(kind, connection index, seed)`: every connection
//! draws from its own counter-seeded ChaCha8 stream, so batches are
//! reproducible regardless of generation order or batch composition.

use std::io::{Read, Write};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::capture::{ConnectionKey, PacketRecord};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid generator parameters: {0}")]
    InvalidParams(String),
    #[error("malformed ground-truth file: {reason}")]
    Malformed { reason: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// The IP the generator treats as the monitored host. Pass it as the
/// `--localhost` value when analyzing synthetic captures.
pub const SYNTH_LOCALHOST: &str = "10.0.0.1";

/// Epoch-seconds timestamp of the first packet of connection 0.
const BASE_TS: f64 = 1_700_000_000.0;

/// Seconds between the starts of consecutive connections of one kind.
const CONNECTION_SPACING: f64 = 64.0;

/// A family of synthetic behaviors. Use the constructors for tuned
/// parameters; every field stays overridable for experiments.
#[derive(Debug, Clone, PartialEq)]
pub enum BehaviorKind {
    /// Inbound sweep over a contiguous destination-port range.
    SystematicPortScan {
        first_port: u16,
        last_port: u16,
        period_ms: f64,
        jitter: f64,
        packet_size: u32,
    },
    /// Outbound scan probing uniformly random high ports.
    RandomizedPortScan {
        low_port: u16,
        high_port: u16,
        period_ms: f64,
        jitter: f64,
        /// Packet sizes alternate between the two values.
        sizes: (u32, u32),
    },
    /// Slow fixed-interval beacon to one service port.
    PeriodicHeartbeat { period_ms: f64, jitter: f64, packet_size: u32, port: u16 },
    /// Periodic discovery datagrams to a multicast group.
    BroadcastDiscovery { period_ms: f64, jitter: f64, packet_size: u32, port: u16 },
    /// Rapid-fire small requests to one web port.
    ConnectionSpam { period_ms: f64, jitter: f64, packet_size: u32, port: u16 },
    /// Inbound stream of large, closely spaced payload packets.
    BulkTransfer { period_ms: f64, jitter: f64, packet_size: u32, port: u16 },
}

impl BehaviorKind {
    pub fn systematic_port_scan() -> Self {
        BehaviorKind::SystematicPortScan {
            first_port: 1000,
            last_port: 1019,
            period_ms: 5.0,
            jitter: 0.05,
            packet_size: 44,
        }
    }

    pub fn randomized_port_scan() -> Self {
        BehaviorKind::RandomizedPortScan {
            low_port: 30_000,
            high_port: 60_000,
            period_ms: 5.0,
            jitter: 0.3,
            sizes: (26, 62),
        }
    }

    pub fn periodic_heartbeat() -> Self {
        BehaviorKind::PeriodicHeartbeat {
            period_ms: 1000.0,
            jitter: 0.02,
            packet_size: 90,
            port: 6667,
        }
    }

    pub fn broadcast_discovery() -> Self {
        BehaviorKind::BroadcastDiscovery {
            period_ms: 100.0,
            jitter: 0.1,
            packet_size: 175,
            port: 1900,
        }
    }

    pub fn connection_spam() -> Self {
        BehaviorKind::ConnectionSpam { period_ms: 1.0, jitter: 0.2, packet_size: 60, port: 80 }
    }

    pub fn bulk_transfer() -> Self {
        BehaviorKind::BulkTransfer { period_ms: 1.0, jitter: 0.2, packet_size: 1400, port: 52_000 }
    }

    /// All six kinds with tuned parameters, in slug order.
    pub fn catalog() -> Vec<BehaviorKind> {
        vec![
            BehaviorKind::systematic_port_scan(),
            BehaviorKind::randomized_port_scan(),
            BehaviorKind::periodic_heartbeat(),
            BehaviorKind::broadcast_discovery(),
            BehaviorKind::connection_spam(),
            BehaviorKind::bulk_transfer(),
        ]
    }

    /// Stable machine-readable name, used in sample ids and ground truth.
    pub fn slug(&self) -> &'static str {
        match self {
            BehaviorKind::SystematicPortScan { .. } => "systematic-port-scan",
            BehaviorKind::RandomizedPortScan { .. } => "randomized-port-scan",
            BehaviorKind::PeriodicHeartbeat { .. } => "periodic-heartbeat",
            BehaviorKind::BroadcastDiscovery { .. } => "broadcast-discovery",
            BehaviorKind::ConnectionSpam { .. } => "connection-spam",
            BehaviorKind::BulkTransfer { .. } => "bulk-transfer",
        }
    }

    /// Looks a slug up in the tuned catalog.
    pub fn from_slug(slug: &str) -> Option<BehaviorKind> {
        BehaviorKind::catalog().into_iter().find(|k| k.slug() == slug)
    }

    fn tag(&self) -> u64 {
        match self {
            BehaviorKind::SystematicPortScan { .. } => 1,
            BehaviorKind::RandomizedPortScan { .. } => 2,
            BehaviorKind::PeriodicHeartbeat { .. } => 3,
            BehaviorKind::BroadcastDiscovery { .. } => 4,
            BehaviorKind::ConnectionSpam { .. } => 5,
            BehaviorKind::BulkTransfer { .. } => 6,
        }
    }

    fn validate(&self) -> Result<(), SynthError> {
        let (period_ms, jitter) = match *self {
            BehaviorKind::SystematicPortScan { first_port, last_port, period_ms, jitter, .. } => {
                if first_port > last_port {
                    return Err(SynthError::InvalidParams(format!(
                        "port range {first_port}..{last_port} is empty"
                    )));
                }
                (period_ms, jitter)
            }
            BehaviorKind::RandomizedPortScan { low_port, high_port, period_ms, jitter, .. } => {
                if low_port > high_port {
                    return Err(SynthError::InvalidParams(format!(
                        "port range {low_port}..{high_port} is empty"
                    )));
                }
                (period_ms, jitter)
            }
            BehaviorKind::PeriodicHeartbeat { period_ms, jitter, .. }
            | BehaviorKind::BroadcastDiscovery { period_ms, jitter, .. }
            | BehaviorKind::ConnectionSpam { period_ms, jitter, .. }
            | BehaviorKind::BulkTransfer { period_ms, jitter, .. } => (period_ms, jitter),
        };
        if !(period_ms > 0.0) {
            return Err(SynthError::InvalidParams(format!(
                "period must be positive, got {period_ms} ms"
            )));
        }
        if !(0.0..=0.5).contains(&jitter) {
            return Err(SynthError::InvalidParams(format!(
                "jitter must lie in [0, 0.5] so intervals stay positive, got {jitter}"
            )));
        }
        Ok(())
    }

    /// Remote endpoint of connection `i` and whether the remote sends.
    fn remote(&self, i: usize) -> (String, bool) {
        let octet = 10 + (i % 246);
        match self {
            BehaviorKind::SystematicPortScan { .. } => (format!("203.0.113.{octet}"), true),
            BehaviorKind::RandomizedPortScan { .. } => (format!("198.51.100.{octet}"), false),
            BehaviorKind::PeriodicHeartbeat { .. } => (format!("192.0.2.{octet}"), false),
            BehaviorKind::BroadcastDiscovery { .. } => (format!("239.255.255.{octet}"), false),
            BehaviorKind::ConnectionSpam { .. } => (format!("198.18.0.{octet}"), false),
            BehaviorKind::BulkTransfer { .. } => (format!("198.19.0.{octet}"), true),
        }
    }

    fn sender_port(&self) -> u16 {
        match self {
            BehaviorKind::SystematicPortScan { .. } => 43_210,
            BehaviorKind::RandomizedPortScan { .. } => 51_234,
            BehaviorKind::PeriodicHeartbeat { .. } => 40_001,
            BehaviorKind::BroadcastDiscovery { .. } => 50_000,
            BehaviorKind::ConnectionSpam { .. } => 45_678,
            BehaviorKind::BulkTransfer { .. } => 443,
        }
    }
}

/// Generated packets plus the kind of every connection.
#[derive(Debug, Clone)]
pub struct SynthBatch {
    pub records: Vec<PacketRecord>,
    /// `(connection key, kind slug)` per generated connection.
    pub ground_truth: Vec<(ConnectionKey, String)>,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn connection_rng(seed: u64, kind_tag: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix(splitmix(splitmix(seed) ^ kind_tag) ^ index))
}

/// Generates `n_connections` connections of one kind, `len` packets each.
///
/// Packet `j + 1` follows packet `j` after `period * (1 + jitter * u)` with
/// `u` uniform in `[-1, 1]`, so inter-arrival times stay within
/// `period * (1 ± jitter)` and, because `jitter <= 0.5`, strictly positive.
pub fn generate(
    kind: &BehaviorKind,
    n_connections: usize,
    len: usize,
    seed: u64,
) -> Result<SynthBatch, SynthError> {
    kind.validate()?;
    if n_connections == 0 {
        return Err(SynthError::InvalidParams("need at least 1 connection".into()));
    }
    if len < 2 {
        return Err(SynthError::InvalidParams(format!(
            "connections need at least 2 packets to have an interval, got {len}"
        )));
    }
    let mut records = Vec::with_capacity(n_connections * len);
    let mut ground_truth = Vec::with_capacity(n_connections);
    for i in 0..n_connections {
        let mut rng = connection_rng(seed, kind.tag(), i as u64);
        let (remote_ip, remote_sends) = kind.remote(i);
        let sample_id = format!("{}-{:03}", kind.slug(), i);
        let (src_ip, dst_ip) = if remote_sends {
            (remote_ip, SYNTH_LOCALHOST.to_string())
        } else {
            (SYNTH_LOCALHOST.to_string(), remote_ip)
        };
        ground_truth.push((
            ConnectionKey {
                sample_id: sample_id.clone(),
                src_ip: src_ip.clone(),
                dst_ip: dst_ip.clone(),
            },
            kind.slug().to_string(),
        ));
        let mut ts = BASE_TS + i as f64 * CONNECTION_SPACING;
        for j in 0..len {
            let (size, dst_port, period_ms, jitter) = match *kind {
                BehaviorKind::SystematicPortScan {
                    first_port,
                    last_port,
                    period_ms,
                    jitter,
                    packet_size,
                } => {
                    let span = (last_port - first_port) as usize + 1;
                    (packet_size, first_port + (j % span) as u16, period_ms, jitter)
                }
                BehaviorKind::RandomizedPortScan {
                    low_port,
                    high_port,
                    period_ms,
                    jitter,
                    sizes,
                } => {
                    let size = if j % 2 == 0 { sizes.0 } else { sizes.1 };
                    (size, rng.random_range(low_port..=high_port), period_ms, jitter)
                }
                BehaviorKind::PeriodicHeartbeat { period_ms, jitter, packet_size, port }
                | BehaviorKind::BroadcastDiscovery { period_ms, jitter, packet_size, port }
                | BehaviorKind::ConnectionSpam { period_ms, jitter, packet_size, port }
                | BehaviorKind::BulkTransfer { period_ms, jitter, packet_size, port } => {
                    (packet_size, port, period_ms, jitter)
                }
            };
            records.push(PacketRecord {
                sample_id: sample_id.clone(),
                timestamp: ts,
                src_ip: src_ip.clone(),
                dst_ip: dst_ip.clone(),
                src_port: kind.sender_port(),
                dst_port,
                ip_size: size,
            });
            if j + 1 < len {
                let u: f64 = rng.random_range(-1.0..=1.0);
                ts += period_ms / 1000.0 * (1.0 + jitter * u);
            }
        }
    }
    Ok(SynthBatch { records, ground_truth })
}

/// Writes ground truth as `key,kind` rows, where `key` is the connection
/// key's display form.
pub fn write_ground_truth_csv<W: Write>(
    truth: &[(ConnectionKey, String)],
    w: W,
) -> Result<(), SynthError> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["key", "kind"])?;
    for (key, kind) in truth {
        wtr.write_record([key.to_string().as_str(), kind])?;
    }
    wtr.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Writes generated batches as a capture directory ready for analysis.
///
/// Since a capture file is one sample (its stem names the sample), each
/// sample's packets go to `<sample_id>.jsonl`. Alongside the captures:
/// `ground_truth.csv` (connection key, kind) and `families.csv`
/// (sample id, kind — directly usable as a family-label file).
pub fn write_batch_dir(dir: &std::path::Path, batches: &[SynthBatch]) -> Result<(), SynthError> {
    use std::collections::BTreeMap;
    std::fs::create_dir_all(dir)?;
    let mut by_sample: BTreeMap<&str, Vec<&PacketRecord>> = BTreeMap::new();
    let mut truth: Vec<(ConnectionKey, String)> = Vec::new();
    for batch in batches {
        for r in &batch.records {
            by_sample.entry(&r.sample_id).or_default().push(r);
        }
        truth.extend(batch.ground_truth.iter().cloned());
    }
    for (sample, records) in &by_sample {
        let owned: Vec<PacketRecord> = records.iter().map(|&r| r.clone()).collect();
        let file = std::fs::File::create(dir.join(format!("{sample}.jsonl")))?;
        crate::capture::write_jsonl(&owned, std::io::BufWriter::new(file))?;
    }
    truth.sort_by(|a, b| a.0.to_string().cmp(&b.0.to_string()));
    let truth_file = std::fs::File::create(dir.join("ground_truth.csv"))?;
    write_ground_truth_csv(&truth, std::io::BufWriter::new(truth_file))?;
    let mut wtr = csv::Writer::from_writer(std::io::BufWriter::new(std::fs::File::create(
        dir.join("families.csv"),
    )?));
    wtr.write_record(["sample_id", "family"])?;
    let families: BTreeMap<&str, &str> = truth
        .iter()
        .map(|(key, kind)| (key.sample_id.as_str(), kind.as_str()))
        .collect();
    for (sample, kind) in families {
        wtr.write_record([sample, kind])?;
    }
    wtr.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Reads a ground-truth file back as `(key display form, kind)` pairs.
pub fn read_ground_truth_csv<R: Read>(r: R) -> Result<Vec<(String, String)>, SynthError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(r);
    let mut out = Vec::new();
    for record in rdr.records() {
        let record = record?;
        if record.len() != 2 {
            return Err(SynthError::Malformed {
                reason: format!("expected 2 fields per row, got {}", record.len()),
            });
        }
        out.push((record[0].to_string(), record[1].to_string()));
    }
    Ok(out)
}
