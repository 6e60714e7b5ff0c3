//! Cluster inspection: temporal heatmaps, estimated clustering errors, and
//! summary tables.
//!
//! Heatmaps show one row per connection and one column per packet index,
//! colored by a 10-band decile scale fitted on the dataset-wide value
//! distribution (log1p-scaled for sizes and intervals, raw for ports). The
//! clustering-error estimate automates the visual judgment those heatmaps
//! support: a connection is counted as an error when more than two of its
//! four feature sequences differ — over more than half their positions —
//! from the banded consensus of the cluster's rightful owners, the pair (or
//! tied pairs) with the least mutual combined distance.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use thiserror::Error;

use crate::capture::{Connection, Direction};
use crate::cluster::ClusterLabel;
use crate::distance::{SequenceFeature, SymMatrix};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("cannot render an empty cluster")]
    EmptyCluster,
    #[error("clustering-error estimation needs at least 2 connections, got {found}")]
    ClusterTooSmall { found: usize },
    #[error("malformed label file: {reason}")]
    Malformed { reason: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Decile banding of one feature's dataset-wide value distribution.
///
/// Nine cuts split the transformed values into ten bands; `band(v)` is the
/// number of cuts at or below the transformed value, so bands run 0..=9 from
/// the lowest decile to the highest. A constant distribution degenerates to
/// the single top band.
#[derive(Debug, Clone, PartialEq)]
pub struct BandScale {
    cuts: [f64; 9],
    log_scaled: bool,
}

impl BandScale {
    /// Fits decile cuts over the given raw values. `log_scaled` applies
    /// `ln(1 + v)` before banding — appropriate for heavy-tailed features.
    pub fn fit(values: &[f64], log_scaled: bool) -> BandScale {
        assert!(!values.is_empty(), "cannot band an empty distribution");
        let mut sorted: Vec<f64> = values
            .iter()
            .map(|&v| if log_scaled { v.ln_1p() } else { v })
            .collect();
        sorted.sort_by(f64::total_cmp);
        let m = sorted.len();
        let mut cuts = [0.0; 9];
        for (j, cut) in cuts.iter_mut().enumerate() {
            *cut = sorted[((j + 1) * m / 10).min(m - 1)];
        }
        BandScale { cuts, log_scaled }
    }

    /// Band index 0..=9 of a raw value.
    pub fn band(&self, v: f64) -> u8 {
        let t = if self.log_scaled { v.ln_1p() } else { v };
        self.cuts.iter().filter(|&&c| c <= t).count() as u8
    }

    pub fn is_log_scaled(&self) -> bool {
        self.log_scaled
    }

    /// Human-readable raw-space range of one band, for legends.
    pub fn range_label(&self, band: u8) -> String {
        let inv = |t: f64| if self.log_scaled { t.exp_m1() } else { t };
        let fmt = |x: f64| format!("{x:.1}");
        match band {
            0 => format!("< {}", fmt(inv(self.cuts[0]))),
            9 => format!(">= {}", fmt(inv(self.cuts[8]))),
            b => format!(
                "{} - {}",
                fmt(inv(self.cuts[b as usize - 1])),
                fmt(inv(self.cuts[b as usize]))
            ),
        }
    }
}

/// Dataset-wide band scales and the banded sequences of every connection.
#[derive(Debug, Clone)]
pub struct FeatureBands {
    /// Scales in [`SequenceFeature::ALL`] order.
    pub scales: [BandScale; 4],
    /// `banded[connection][feature][position]` = band 0..=9.
    pub banded: Vec<[Vec<u8>; 4]>,
}

fn feature_values(conn: &Connection, feature: SequenceFeature) -> Vec<f64> {
    match feature {
        SequenceFeature::PacketSize => conn.f_ps.iter().map(|&v| v as f64).collect(),
        SequenceFeature::Interval => conn.f_in.clone(),
        SequenceFeature::SourcePort => conn.f_sp.iter().map(|&v| v as f64).collect(),
        SequenceFeature::DestPort => conn.f_dp.iter().map(|&v| v as f64).collect(),
    }
}

/// Fits the four dataset-wide scales and bands every connection's sequences.
pub fn assign_bands(connections: &[Connection]) -> FeatureBands {
    assert!(!connections.is_empty(), "no connections to band");
    let scales: [BandScale; 4] = SequenceFeature::ALL.map(|feature| {
        let log_scaled = matches!(
            feature,
            SequenceFeature::PacketSize | SequenceFeature::Interval
        );
        let mut all = Vec::new();
        for c in connections {
            all.extend(feature_values(c, feature));
        }
        BandScale::fit(&all, log_scaled)
    });
    let banded = connections
        .iter()
        .map(|c| {
            let mut per = [const { Vec::new() }; 4];
            for (slot, feature) in SequenceFeature::ALL.into_iter().enumerate() {
                per[slot] = feature_values(c, feature)
                    .into_iter()
                    .map(|v| scales[slot].band(v))
                    .collect();
            }
            per
        })
        .collect();
    FeatureBands { scales, banded }
}

/// Everything needed to draw one cluster × feature heatmap.
pub struct HeatmapSpec<'a> {
    /// 1-based display number, matching `c<N>` names in the summary table.
    pub cluster_display_id: usize,
    pub feature: SequenceFeature,
    /// `(connection key, banded sequence)`, ordered by key.
    pub rows: Vec<(String, &'a [u8])>,
    pub scale: &'a BandScale,
}

/// Light-to-dark ten-step palette for bands 0..=9.
const PALETTE: [&str; 10] = [
    "#f7fbff", "#deebf7", "#c6dbef", "#9ecae1", "#6baed6", "#4292c6", "#2171b5", "#08519c",
    "#08306b", "#041d42",
];

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Renders the heatmap as a standalone SVG document. Output is a pure
/// function of its input: identical [`HeatmapSpec`]s give byte-identical SVG.
pub fn render_heatmap(spec: &HeatmapSpec) -> Result<String, ReportError> {
    if spec.rows.is_empty() {
        return Err(ReportError::EmptyCluster);
    }
    let cols = spec.rows.iter().map(|(_, seq)| seq.len()).max().unwrap();
    let rows = spec.rows.len();
    let cell = 18usize;
    let margin = 8usize;
    let title_h = 28usize;
    let max_key = spec.rows.iter().map(|(k, _)| k.len()).max().unwrap();
    let label_w = 7 * max_key + 16;
    let x0 = margin + label_w;
    let y0 = margin + title_h;
    let legend_y = y0 + rows * cell + 16;
    let width = (x0 + cols * cell + margin).max(x0 + 280);
    let height = legend_y + 10 * 18 + margin;

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" \
         viewBox=\"0 0 {width} {height}\" font-family=\"monospace\">\n"
    ));
    svg.push_str(&format!(
        "  <rect width=\"{width}\" height=\"{height}\" fill=\"#ffffff\"/>\n"
    ));
    svg.push_str(&format!(
        "  <text x=\"{margin}\" y=\"{}\" font-size=\"14\">cluster c{} - {} ({} rows)</text>\n",
        margin + 16,
        spec.cluster_display_id,
        spec.feature.as_str(),
        rows
    ));
    for (r, (key, seq)) in spec.rows.iter().enumerate() {
        svg.push_str(&format!(
            "  <text x=\"{margin}\" y=\"{}\" font-size=\"11\">{}</text>\n",
            y0 + r * cell + 13,
            xml_escape(key)
        ));
        for (c, &band) in seq.iter().enumerate() {
            svg.push_str(&format!(
                "  <rect x=\"{}\" y=\"{}\" width=\"{cell}\" height=\"{cell}\" fill=\"{}\" \
                 stroke=\"#ffffff\" stroke-width=\"1\"/>\n",
                x0 + c * cell,
                y0 + r * cell,
                PALETTE[band as usize]
            ));
        }
    }
    svg.push_str(&format!(
        "  <text x=\"{margin}\" y=\"{}\" font-size=\"12\">bands{}</text>\n",
        legend_y - 4,
        if spec.scale.is_log_scaled() { " (log scale)" } else { "" }
    ));
    for band in 0u8..10 {
        let y = legend_y + band as usize * 18;
        svg.push_str(&format!(
            "  <rect x=\"{margin}\" y=\"{y}\" width=\"14\" height=\"14\" fill=\"{}\" \
             stroke=\"#888888\" stroke-width=\"0.5\"/>\n",
            PALETTE[band as usize]
        ));
        svg.push_str(&format!(
            "  <text x=\"{}\" y=\"{}\" font-size=\"11\">{}: {}</text>\n",
            margin + 20,
            y + 11,
            band,
            xml_escape(&spec.scale.range_label(band))
        ));
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

/// Result of the clustering-error estimate for one cluster.
#[derive(Debug, Clone, PartialEq)]
pub struct CeEstimate {
    /// Connection indices (into the full dataset) of the rightful owners.
    pub owners: Vec<usize>,
    /// Per member (aligned with the input member list): flagged as CE?
    pub flags: Vec<bool>,
    pub ce_count: usize,
    /// `ce_count / members`.
    pub error_rate: f64,
}

/// Estimates clustering errors for one cluster.
///
/// `members` are connection indices into the dataset behind `combined` and
/// `bands`. Rightful owners are every connection appearing in a pair of
/// minimal mutual combined distance (ties widen the owner set). For each
/// remaining member and each feature, the member's banded sequence is
/// compared position-by-position against the owners' majority band (ties
/// toward the smaller band; positions no owner reaches count as differing):
/// the feature differs when more than half the member's positions disagree,
/// and the member is a clustering error when more than two features differ.
pub fn estimate_clustering_errors(
    members: &[usize],
    combined: &SymMatrix,
    bands: &FeatureBands,
) -> Result<CeEstimate, ReportError> {
    if members.len() < 2 {
        return Err(ReportError::ClusterTooSmall { found: members.len() });
    }
    let mut best = f64::INFINITY;
    for (i, &a) in members.iter().enumerate() {
        for &b in &members[i + 1..] {
            best = best.min(combined.get(a, b));
        }
    }
    let mut owner_set: std::collections::BTreeSet<usize> = std::collections::BTreeSet::new();
    for (i, &a) in members.iter().enumerate() {
        for &b in &members[i + 1..] {
            if combined.get(a, b) == best {
                owner_set.insert(a);
                owner_set.insert(b);
            }
        }
    }
    let owners: Vec<usize> = owner_set.iter().copied().collect();

    // Positionwise majority band of the owners, per feature.
    let mut majority: [Vec<Option<u8>>; 4] = [const { Vec::new() }; 4];
    for slot in 0..4 {
        let max_len = owners.iter().map(|&o| bands.banded[o][slot].len()).max().unwrap();
        majority[slot] = (0..max_len)
            .map(|pos| {
                let mut votes: BTreeMap<u8, usize> = BTreeMap::new();
                for &o in &owners {
                    if let Some(&b) = bands.banded[o][slot].get(pos) {
                        *votes.entry(b).or_insert(0) += 1;
                    }
                }
                votes
                    .iter()
                    .max_by(|(ba, ca), (bb, cb)| ca.cmp(cb).then(bb.cmp(ba)))
                    .map(|(&b, _)| b)
            })
            .collect();
    }

    let mut flags = vec![false; members.len()];
    let mut ce_count = 0;
    for (m, &conn) in members.iter().enumerate() {
        if owner_set.contains(&conn) {
            continue;
        }
        let mut differing_features = 0;
        for slot in 0..4 {
            let seq = &bands.banded[conn][slot];
            let mismatches = seq
                .iter()
                .enumerate()
                .filter(|&(pos, &b)| majority[slot].get(pos).copied().flatten() != Some(b))
                .count();
            if mismatches * 2 > seq.len() {
                differing_features += 1;
            }
        }
        if differing_features > 2 {
            flags[m] = true;
            ce_count += 1;
        }
    }
    Ok(CeEstimate {
        owners,
        flags,
        ce_count,
        error_rate: ce_count as f64 / members.len() as f64,
    })
}

/// Per-cluster quality row.
#[derive(Debug, Clone, PartialEq)]
pub struct QualityRow {
    /// 0-based cluster id.
    pub cluster: usize,
    pub size: usize,
    pub ce_count: usize,
    pub error_rate: f64,
}

/// Quality of every cluster plus the dataset-level mean.
#[derive(Debug, Clone, PartialEq)]
pub struct QualityReport {
    pub rows: Vec<QualityRow>,
    /// Unweighted mean of per-cluster error rates; 0 when there are no
    /// clusters.
    pub mean_error_rate: f64,
}

/// Runs the clustering-error estimate over every cluster.
pub fn quality_report(
    labels: &[ClusterLabel],
    combined: &SymMatrix,
    bands: &FeatureBands,
) -> Result<QualityReport, ReportError> {
    let mut members_by_cluster: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &label) in labels.iter().enumerate() {
        if let ClusterLabel::Cluster(c) = label {
            members_by_cluster.entry(c).or_default().push(i);
        }
    }
    let mut rows = Vec::with_capacity(members_by_cluster.len());
    for (&cluster, members) in &members_by_cluster {
        let estimate = estimate_clustering_errors(members, combined, bands)?;
        rows.push(QualityRow {
            cluster,
            size: members.len(),
            ce_count: estimate.ce_count,
            error_rate: estimate.error_rate,
        });
    }
    let mean_error_rate = if rows.is_empty() {
        0.0
    } else {
        rows.iter().map(|r| r.error_rate).sum::<f64>() / rows.len() as f64
    };
    Ok(QualityReport { rows, mean_error_rate })
}

/// Writes per-cluster quality rows plus a trailing `mean` row.
pub fn write_quality_csv<W: Write>(report: &QualityReport, w: W) -> Result<(), ReportError> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["cluster", "size", "ce_count", "error_rate"])?;
    for row in &report.rows {
        wtr.write_record([
            format!("c{}", row.cluster + 1),
            row.size.to_string(),
            row.ce_count.to_string(),
            row.error_rate.to_string(),
        ])?;
    }
    wtr.write_record(["mean", "", "", &report.mean_error_rate.to_string()])?;
    wtr.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// One cluster's summary line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SummaryRow {
    /// Display name `c<N>`, 1-based.
    pub cluster: String,
    pub connections: usize,
    /// Distinct family labels among the samples in the cluster.
    pub families: usize,
    /// Analyst-provided capability label, or `unlabeled`.
    pub capability: String,
    /// Majority traffic direction, `Out` or `In` (ties go to `Out`).
    pub direction: String,
}

/// Builds the per-cluster summary table. `sample_ids` and `directions` are
/// aligned with `labels`; `capability_labels` is keyed by 0-based cluster id.
pub fn cluster_summary(
    sample_ids: &[String],
    directions: &[Direction],
    labels: &[ClusterLabel],
    family_labels: &BTreeMap<String, String>,
    capability_labels: &BTreeMap<usize, String>,
) -> Vec<SummaryRow> {
    assert_eq!(sample_ids.len(), labels.len(), "one sample id per connection");
    assert_eq!(directions.len(), labels.len(), "one direction per connection");
    let mut by_cluster: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &label) in labels.iter().enumerate() {
        if let ClusterLabel::Cluster(c) = label {
            by_cluster.entry(c).or_default().push(i);
        }
    }
    by_cluster
        .iter()
        .map(|(&cluster, members)| {
            let mut families = std::collections::BTreeSet::new();
            let mut out = 0usize;
            for &m in members {
                families.insert(
                    family_labels
                        .get(&sample_ids[m])
                        .map(String::as_str)
                        .unwrap_or(crate::profiles::UNKNOWN_FAMILY),
                );
                if directions[m] == Direction::Outgoing {
                    out += 1;
                }
            }
            SummaryRow {
                cluster: format!("c{}", cluster + 1),
                connections: members.len(),
                families: families.len(),
                capability: capability_labels
                    .get(&cluster)
                    .cloned()
                    .unwrap_or_else(|| "unlabeled".to_string()),
                direction: if out * 2 >= members.len() { "Out" } else { "In" }.to_string(),
            }
        })
        .collect()
}

/// Writes the summary table as CSV.
pub fn write_summary_csv<W: Write>(rows: &[SummaryRow], w: W) -> Result<(), ReportError> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["cluster", "connections", "families", "capability", "direction"])?;
    for row in rows {
        wtr.write_record([
            row.cluster.as_str(),
            &row.connections.to_string(),
            &row.families.to_string(),
            &row.capability,
            &row.direction,
        ])?;
    }
    wtr.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Writes the summary as a fixed-width human-readable report.
pub fn write_summary_text<W: Write>(
    rows: &[SummaryRow],
    quality: &QualityReport,
    noise_count: usize,
    w: &mut W,
) -> std::io::Result<()> {
    writeln!(w, "{:<8} {:>12} {:>9} {:>10} {:<24}", "cluster", "connections", "families", "direction", "capability")?;
    for row in rows {
        writeln!(
            w,
            "{:<8} {:>12} {:>9} {:>10} {:<24}",
            row.cluster, row.connections, row.families, row.direction, row.capability
        )?;
    }
    writeln!(w)?;
    writeln!(w, "clusters: {}", rows.len())?;
    writeln!(w, "noise connections: {noise_count}")?;
    writeln!(w, "mean estimated error rate: {:.4}", quality.mean_error_rate)?;
    Ok(())
}

/// Loads a capability-label file: two columns, cluster id and label. The
/// cluster id is the display form (`c3`) or the bare 1-based number (`3`).
/// A `cluster_id,label` header row is permitted and skipped.
pub fn read_capability_labels<R: Read>(r: R) -> Result<BTreeMap<usize, String>, ReportError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).from_reader(r);
    let mut out = BTreeMap::new();
    for (i, record) in rdr.records().enumerate() {
        let record = record?;
        if record.len() != 2 {
            return Err(ReportError::Malformed {
                reason: format!("row {i} has {} fields, expected 2", record.len()),
            });
        }
        if i == 0 && &record[0] == "cluster_id" {
            continue;
        }
        let raw = record[0].strip_prefix('c').unwrap_or(&record[0]);
        let display: usize = raw.parse().map_err(|_| ReportError::Malformed {
            reason: format!("row {i}: {:?} is not a cluster id", &record[0]),
        })?;
        if display == 0 {
            return Err(ReportError::Malformed {
                reason: format!("row {i}: cluster ids are 1-based, got 0"),
            });
        }
        out.insert(display - 1, record[1].to_string());
    }
    Ok(out)
}
