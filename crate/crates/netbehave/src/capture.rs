//! Capture ingest: turns packet captures into per-connection feature sequences.
//!
//! Two input formats are supported. Classic pcap files (magic `0xa1b2c3d4`,
//! either byte order, Ethernet link type) are dissected down to the IP layer;
//! newline-delimited JSON gives the same packet fields in textual form. Either
//! way the output is a list of [`PacketRecord`]s, which [`extract_connections`]
//! groups into unidirectional connections keyed by (sample, source IP,
//! destination IP) and converts into the four feature sequences the rest of
//! the pipeline works on: packet sizes, inter-arrival times, source ports and
//! destination ports.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{Ipv4Addr, Ipv6Addr};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Errors raised while reading captures or reloading serialized connections.
#[derive(Debug, Error)]
pub enum CaptureError {
    #[error("cannot read {path}: {source}")]
    UnreadableFile {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("malformed capture {path}: {reason}")]
    MalformedHeader { path: PathBuf, reason: String },
    #[error("malformed record at line {line}: {reason}")]
    MalformedRecord { line: usize, reason: String },
}

/// Traffic direction of a connection relative to the configured local hosts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    /// Source address belongs to the local host set.
    Outgoing,
    /// Source address is remote.
    Incoming,
}

impl Direction {
    pub fn as_str(&self) -> &'static str {
        match self {
            Direction::Outgoing => "out",
            Direction::Incoming => "in",
        }
    }

    pub fn parse(s: &str) -> Option<Direction> {
        match s {
            "out" => Some(Direction::Outgoing),
            "in" => Some(Direction::Incoming),
            _ => None,
        }
    }
}

/// One captured IP packet, normalized across input formats.
#[derive(Debug, Clone, PartialEq)]
pub struct PacketRecord {
    /// Opaque name of the capture the packet came from (file stem).
    pub sample_id: String,
    /// Seconds since the epoch, microsecond precision.
    pub timestamp: f64,
    pub src_ip: String,
    pub dst_ip: String,
    /// 0 when the transport layer carries no TCP/UDP port.
    pub src_port: u16,
    /// 0 when the transport layer carries no TCP/UDP port.
    pub dst_port: u16,
    /// Size of the IP datagram in bytes, as stated by the IP header.
    pub ip_size: u32,
}

/// Identity of a unidirectional connection.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ConnectionKey {
    pub sample_id: String,
    pub src_ip: String,
    pub dst_ip: String,
}

impl fmt::Display for ConnectionKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}|{}->{}", self.sample_id, self.src_ip, self.dst_ip)
    }
}

/// A unidirectional connection reduced to its behavioral feature sequences.
///
/// All four sequences share the same length `L` with `1 <= L <= len` (the
/// truncation window). `f_in[0]` is always 0: the first packet has no
/// predecessor.
#[derive(Debug, Clone, PartialEq)]
pub struct Connection {
    pub key: ConnectionKey,
    pub direction: Direction,
    /// Packet sizes in bytes.
    pub f_ps: Vec<u32>,
    /// Inter-arrival times in milliseconds.
    pub f_in: Vec<f64>,
    /// Source ports per packet.
    pub f_sp: Vec<u16>,
    /// Destination ports per packet.
    pub f_dp: Vec<u16>,
    /// Packet count before truncation to the window.
    pub original_length: usize,
}

impl Connection {
    /// Number of packets retained after truncation.
    pub fn len(&self) -> usize {
        self.f_ps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.f_ps.is_empty()
    }
}

/// A jsonl line that failed to parse; parsing continues past it.
#[derive(Debug, Clone, PartialEq)]
pub struct MalformedLine {
    pub line: usize,
    pub reason: String,
}

/// Result of parsing one capture file.
#[derive(Debug, Clone, Default)]
pub struct CaptureReport {
    pub records: Vec<PacketRecord>,
    /// Frames without a parseable IP layer (pcap only).
    pub non_ip_skipped: usize,
    /// IP packets whose transport layer carries no TCP/UDP ports.
    pub portless_packets: usize,
    /// Unparseable jsonl lines, recorded but not fatal.
    pub malformed: Vec<MalformedLine>,
}

/// Parses a capture file; the format is chosen by extension
/// (`.pcap` or `.jsonl`).
///
/// The sample id of every record is the file stem, so `captures/mirai-7.pcap`
/// yields records tagged `mirai-7`.
pub fn parse_capture(path: &Path) -> Result<CaptureReport, CaptureError> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .unwrap_or("")
        .to_ascii_lowercase();
    match ext.as_str() {
        "pcap" => parse_pcap(path),
        "jsonl" => parse_jsonl(path),
        other => Err(CaptureError::MalformedHeader {
            path: path.to_path_buf(),
            reason: format!("unsupported capture extension {other:?}; expected .pcap or .jsonl"),
        }),
    }
}

fn sample_id_of(path: &Path) -> String {
    path.file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("capture")
        .to_string()
}

const PCAP_MAGIC: u32 = 0xa1b2_c3d4;
const PCAP_MAGIC_SWAPPED: u32 = 0xd4c3_b2a1;
const LINKTYPE_ETHERNET: u32 = 1;
const ETHERTYPE_IPV4: u16 = 0x0800;
const ETHERTYPE_IPV6: u16 = 0x86dd;
const PROTO_TCP: u8 = 6;
const PROTO_UDP: u8 = 17;

fn parse_pcap(path: &Path) -> Result<CaptureReport, CaptureError> {
    let bytes = std::fs::read(path).map_err(|source| CaptureError::UnreadableFile {
        path: path.to_path_buf(),
        source,
    })?;
    let header_err = |reason: String| CaptureError::MalformedHeader {
        path: path.to_path_buf(),
        reason,
    };
    if bytes.len() < 24 {
        return Err(header_err(format!(
            "file is {} bytes, shorter than the 24-byte global header",
            bytes.len()
        )));
    }
    let magic = u32::from_le_bytes(bytes[0..4].try_into().unwrap());
    let big_endian = match magic {
        PCAP_MAGIC => false,
        PCAP_MAGIC_SWAPPED => true,
        other => {
            return Err(header_err(format!("unknown pcap magic 0x{other:08x}")));
        }
    };
    let read_u32 = |buf: &[u8], off: usize| -> u32 {
        let raw: [u8; 4] = buf[off..off + 4].try_into().unwrap();
        if big_endian {
            u32::from_be_bytes(raw)
        } else {
            u32::from_le_bytes(raw)
        }
    };
    let linktype = read_u32(&bytes, 20);
    if linktype != LINKTYPE_ETHERNET {
        return Err(header_err(format!(
            "unsupported link type {linktype}; only Ethernet (1) captures are accepted"
        )));
    }

    let sample_id = sample_id_of(path);
    let mut report = CaptureReport::default();
    let mut off = 24usize;
    while off < bytes.len() {
        if off + 16 > bytes.len() {
            return Err(header_err(format!(
                "truncated packet record header at offset {off}"
            )));
        }
        let ts_sec = read_u32(&bytes, off);
        let ts_usec = read_u32(&bytes, off + 4);
        let incl_len = read_u32(&bytes, off + 8) as usize;
        off += 16;
        if off + incl_len > bytes.len() {
            return Err(header_err(format!(
                "packet record at offset {} claims {incl_len} bytes past end of file",
                off - 16
            )));
        }
        let frame = &bytes[off..off + incl_len];
        off += incl_len;

        let timestamp = ts_sec as f64 + ts_usec as f64 * 1e-6;
        match dissect_ethernet(frame) {
            Some(ip) => {
                if !ip.has_ports {
                    report.portless_packets += 1;
                }
                report.records.push(PacketRecord {
                    sample_id: sample_id.clone(),
                    timestamp,
                    src_ip: ip.src,
                    dst_ip: ip.dst,
                    src_port: ip.src_port,
                    dst_port: ip.dst_port,
                    ip_size: ip.ip_size,
                });
            }
            None => report.non_ip_skipped += 1,
        }
    }
    Ok(report)
}

struct IpInfo {
    src: String,
    dst: String,
    src_port: u16,
    dst_port: u16,
    ip_size: u32,
    has_ports: bool,
}

/// Extracts the IP layer from an Ethernet frame. Frames that are not IPv4 or
/// IPv6, or too truncated to carry the full IP header, yield `None` and are
/// counted as skipped by the caller.
fn dissect_ethernet(frame: &[u8]) -> Option<IpInfo> {
    if frame.len() < 14 {
        return None;
    }
    let ethertype = u16::from_be_bytes([frame[12], frame[13]]);
    let payload = &frame[14..];
    match ethertype {
        ETHERTYPE_IPV4 => dissect_ipv4(payload),
        ETHERTYPE_IPV6 => dissect_ipv6(payload),
        _ => None,
    }
}

fn dissect_ipv4(p: &[u8]) -> Option<IpInfo> {
    if p.len() < 20 {
        return None;
    }
    let version = p[0] >> 4;
    let ihl = (p[0] & 0x0f) as usize * 4;
    if version != 4 || ihl < 20 || p.len() < ihl {
        return None;
    }
    let total_len = u16::from_be_bytes([p[2], p[3]]) as u32;
    let proto = p[9];
    let src = Ipv4Addr::new(p[12], p[13], p[14], p[15]).to_string();
    let dst = Ipv4Addr::new(p[16], p[17], p[18], p[19]).to_string();
    let (src_port, dst_port, has_ports) = transport_ports(proto, &p[ihl..]);
    Some(IpInfo {
        src,
        dst,
        src_port,
        dst_port,
        ip_size: total_len,
        has_ports,
    })
}

fn dissect_ipv6(p: &[u8]) -> Option<IpInfo> {
    if p.len() < 40 {
        return None;
    }
    if p[0] >> 4 != 6 {
        return None;
    }
    let payload_len = u16::from_be_bytes([p[4], p[5]]) as u32;
    let next_header = p[6];
    let mut src = [0u8; 16];
    let mut dst = [0u8; 16];
    src.copy_from_slice(&p[8..24]);
    dst.copy_from_slice(&p[24..40]);
    // Extension headers are not walked: anything other than an immediate
    // TCP/UDP header is treated as portless.
    let (src_port, dst_port, has_ports) = transport_ports(next_header, &p[40..]);
    Some(IpInfo {
        src: Ipv6Addr::from(src).to_string(),
        dst: Ipv6Addr::from(dst).to_string(),
        src_port,
        dst_port,
        ip_size: 40 + payload_len,
        has_ports,
    })
}

/// Ports from the first four transport bytes for TCP/UDP; everything else
/// (including transports truncated before the port fields) gets port 0.
fn transport_ports(proto: u8, transport: &[u8]) -> (u16, u16, bool) {
    if (proto == PROTO_TCP || proto == PROTO_UDP) && transport.len() >= 4 {
        (
            u16::from_be_bytes([transport[0], transport[1]]),
            u16::from_be_bytes([transport[2], transport[3]]),
            true,
        )
    } else {
        (0, 0, false)
    }
}

/// One packet per line, exactly these fields.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct JsonlPacket {
    ts: f64,
    src_ip: String,
    dst_ip: String,
    src_port: u16,
    dst_port: u16,
    ip_size: u32,
}

fn parse_jsonl(path: &Path) -> Result<CaptureReport, CaptureError> {
    let file = std::fs::File::open(path).map_err(|source| CaptureError::UnreadableFile {
        path: path.to_path_buf(),
        source,
    })?;
    let sample_id = sample_id_of(path);
    let mut report = CaptureReport::default();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| CaptureError::UnreadableFile {
            path: path.to_path_buf(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<JsonlPacket>(&line) {
            Ok(p) if p.ts.is_finite() => report.records.push(PacketRecord {
                sample_id: sample_id.clone(),
                timestamp: p.ts,
                src_ip: p.src_ip,
                dst_ip: p.dst_ip,
                src_port: p.src_port,
                dst_port: p.dst_port,
                ip_size: p.ip_size,
            }),
            Ok(_) => report.malformed.push(MalformedLine {
                line: idx + 1,
                reason: "non-finite timestamp".to_string(),
            }),
            Err(e) => report.malformed.push(MalformedLine {
                line: idx + 1,
                reason: e.to_string(),
            }),
        }
    }
    Ok(report)
}

/// Writes records in the jsonl packet format. The sample id is not part of
/// the line format; it is reconstructed from the file stem when parsing.
pub fn write_jsonl<W: Write>(records: &[PacketRecord], mut w: W) -> std::io::Result<()> {
    for r in records {
        let line = serde_json::to_string(&JsonlPacket {
            ts: r.timestamp,
            src_ip: r.src_ip.clone(),
            dst_ip: r.dst_ip.clone(),
            src_port: r.src_port,
            dst_port: r.dst_port,
            ip_size: r.ip_size,
        })
        .expect("packet serialization cannot fail");
        writeln!(w, "{line}")?;
    }
    Ok(())
}

/// Connection extraction counters. The partition property holds:
/// `packets_kept + packets_discarded == total_packets`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ExtractSummary {
    pub total_packets: usize,
    /// Packets inside kept connections, after truncation.
    pub packets_kept: usize,
    /// Truncated tails plus all packets of discarded connections.
    pub packets_discarded: usize,
    /// Connections dropped for having fewer than `min_len` packets.
    pub discarded_connections: usize,
}

/// Groups packets into unidirectional connections and derives their feature
/// sequences.
///
/// Packets are grouped by (sample id, source IP, destination IP) and ordered
/// by timestamp, ties broken by capture order. Connections with fewer than
/// `min_len` packets are discarded (and counted); the rest are truncated to
/// the first `len` packets. A connection is `Outgoing` when its source
/// address is in `localhost`.
///
/// The result is ordered by connection key, so identical inputs always yield
/// an identical listing.
pub fn extract_connections(
    records: &[PacketRecord],
    len: usize,
    min_len: usize,
    localhost: &BTreeSet<String>,
) -> (Vec<Connection>, ExtractSummary) {
    assert!(len >= 1, "truncation window must be at least 1");
    assert!(
        (1..=len).contains(&min_len),
        "min_len must satisfy 1 <= min_len <= len"
    );

    let mut groups: BTreeMap<ConnectionKey, Vec<&PacketRecord>> = BTreeMap::new();
    for r in records {
        let key = ConnectionKey {
            sample_id: r.sample_id.clone(),
            src_ip: r.src_ip.clone(),
            dst_ip: r.dst_ip.clone(),
        };
        groups.entry(key).or_default().push(r);
    }

    let mut summary = ExtractSummary {
        total_packets: records.len(),
        ..Default::default()
    };
    let mut connections = Vec::new();
    for (key, mut packets) in groups {
        packets.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp));
        let original_length = packets.len();
        if original_length < min_len {
            summary.discarded_connections += 1;
            summary.packets_discarded += original_length;
            continue;
        }
        let kept = original_length.min(len);
        summary.packets_kept += kept;
        summary.packets_discarded += original_length - kept;

        let window = &packets[..kept];
        let mut f_in = Vec::with_capacity(kept);
        f_in.push(0.0);
        for pair in window.windows(2) {
            f_in.push((pair[1].timestamp - pair[0].timestamp) * 1000.0);
        }
        let direction = if localhost.contains(&key.src_ip) {
            Direction::Outgoing
        } else {
            Direction::Incoming
        };
        connections.push(Connection {
            key,
            direction,
            f_ps: window.iter().map(|p| p.ip_size).collect(),
            f_in,
            f_sp: window.iter().map(|p| p.src_port).collect(),
            f_dp: window.iter().map(|p| p.dst_port).collect(),
            original_length,
        });
    }
    (connections, summary)
}

/// Columns of the connection listing, in order: sample_id, src_ip, dst_ip,
/// direction, original_length, then the four sequences as space-separated
/// values (packet_sizes, intervals_ms, src_ports, dst_ports).
pub fn write_connections_csv<W: Write>(
    connections: &[Connection],
    w: W,
) -> Result<(), csv::Error> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record([
        "sample_id",
        "src_ip",
        "dst_ip",
        "direction",
        "original_length",
        "packet_sizes",
        "intervals_ms",
        "src_ports",
        "dst_ports",
    ])?;
    for c in connections {
        wtr.write_record([
            c.key.sample_id.as_str(),
            c.key.src_ip.as_str(),
            c.key.dst_ip.as_str(),
            c.direction.as_str(),
            &c.original_length.to_string(),
            &join_nums(&c.f_ps),
            &join_nums(&c.f_in),
            &join_nums(&c.f_sp),
            &join_nums(&c.f_dp),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

fn join_nums<T: ToString>(values: &[T]) -> String {
    values
        .iter()
        .map(T::to_string)
        .collect::<Vec<_>>()
        .join(" ")
}

/// Reloads a connection listing written by [`write_connections_csv`].
/// Inter-arrival times round-trip exactly: floats are written in shortest
/// round-trip form.
pub fn read_connections_csv<R: Read>(r: R) -> Result<Vec<Connection>, CaptureError> {
    let mut rdr = csv::Reader::from_reader(r);
    let mut out = Vec::new();
    for (idx, record) in rdr.records().enumerate() {
        let line = idx + 2; // header occupies line 1
        let malformed = |reason: String| CaptureError::MalformedRecord { line, reason };
        let record = record.map_err(|e| malformed(e.to_string()))?;
        if record.len() != 9 {
            return Err(malformed(format!("expected 9 fields, got {}", record.len())));
        }
        let direction = Direction::parse(&record[3])
            .ok_or_else(|| malformed(format!("unknown direction {:?}", &record[3])))?;
        let original_length: usize = record[4]
            .parse()
            .map_err(|e| malformed(format!("bad original_length: {e}")))?;
        let f_ps = split_nums::<u32>(&record[5]).map_err(&malformed)?;
        let f_in = split_nums::<f64>(&record[6]).map_err(&malformed)?;
        let f_sp = split_nums::<u16>(&record[7]).map_err(&malformed)?;
        let f_dp = split_nums::<u16>(&record[8]).map_err(&malformed)?;
        let lens = [f_ps.len(), f_in.len(), f_sp.len(), f_dp.len()];
        if lens.iter().any(|&l| l != f_ps.len()) || f_ps.is_empty() {
            return Err(malformed(format!("inconsistent sequence lengths {lens:?}")));
        }
        out.push(Connection {
            key: ConnectionKey {
                sample_id: record[0].to_string(),
                src_ip: record[1].to_string(),
                dst_ip: record[2].to_string(),
            },
            direction,
            f_ps,
            f_in,
            f_sp,
            f_dp,
            original_length,
        });
    }
    Ok(out)
}

fn split_nums<T: std::str::FromStr>(field: &str) -> Result<Vec<T>, String>
where
    T::Err: fmt::Display,
{
    field
        .split_whitespace()
        .map(|tok| tok.parse::<T>().map_err(|e| format!("bad number {tok:?}: {e}")))
        .collect()
}
