//! Per-sample behavioral profiles and the relationships between them.
//!
//! Every sample (one capture file) gets a cluster membership string: a bit
//! vector over clusters where bit `i` is set iff the sample has at least one
//! connection in cluster `i`. Samples whose connections are all noise have
//! the all-zero string. Unique membership strings form a DAG: a node's
//! parents are the strict-subset nodes at minimal Hamming distance, which
//! makes shared behavior across samples (and across family labels) visible
//! at a glance.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use thiserror::Error;

use crate::capture::ConnectionKey;
use crate::cluster::ClusterLabel;

#[derive(Debug, Error)]
pub enum ProfileError {
    #[error("sample {sample_id:?} has no connections in this clustering")]
    UnknownSample { sample_id: String },
    #[error("bit vectors differ in length: {expected} vs {found}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("malformed profile file: {reason}")]
    Malformed { reason: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Placeholder family for samples missing from the label file.
pub const UNKNOWN_FAMILY: &str = "UNKNOWN";

/// One sample's cluster membership string.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BehavioralProfile {
    pub sample_id: String,
    /// Bit `i` = sample has a connection in cluster `i`. Leftmost character
    /// of the printed string is cluster 0.
    pub cms: Vec<bool>,
}

impl BehavioralProfile {
    pub fn bit_string(&self) -> String {
        self.cms.iter().map(|&b| if b { '1' } else { '0' }).collect()
    }

    pub fn popcount(&self) -> usize {
        self.cms.iter().filter(|&&b| b).count()
    }
}

/// Number of differing positions between two equal-length bit vectors.
pub fn hamming(a: &[bool], b: &[bool]) -> Result<usize, ProfileError> {
    if a.len() != b.len() {
        return Err(ProfileError::LengthMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    Ok(a.iter().zip(b).filter(|(x, y)| x != y).count())
}

/// Builds one sample's membership string from clustering output.
///
/// `keys` and `labels` are aligned per connection. Noise contributes
/// nothing; a sample with only noise connections gets the all-zero string.
pub fn build_cms(
    sample_id: &str,
    keys: &[ConnectionKey],
    labels: &[ClusterLabel],
    n_clusters: usize,
) -> Result<BehavioralProfile, ProfileError> {
    assert_eq!(keys.len(), labels.len(), "one label per connection");
    let mut cms = vec![false; n_clusters];
    let mut seen = false;
    for (key, &label) in keys.iter().zip(labels) {
        if key.sample_id != sample_id {
            continue;
        }
        seen = true;
        if let ClusterLabel::Cluster(c) = label {
            cms[c] = true;
        }
    }
    if !seen {
        return Err(ProfileError::UnknownSample {
            sample_id: sample_id.to_string(),
        });
    }
    Ok(BehavioralProfile {
        sample_id: sample_id.to_string(),
        cms,
    })
}

/// Membership strings for every sample present in `keys`, sorted by sample id.
pub fn build_all_cms(
    keys: &[ConnectionKey],
    labels: &[ClusterLabel],
    n_clusters: usize,
) -> Vec<BehavioralProfile> {
    assert_eq!(keys.len(), labels.len(), "one label per connection");
    let mut by_sample: BTreeMap<&str, Vec<bool>> = BTreeMap::new();
    for (key, &label) in keys.iter().zip(labels) {
        let cms = by_sample
            .entry(key.sample_id.as_str())
            .or_insert_with(|| vec![false; n_clusters]);
        if let ClusterLabel::Cluster(c) = label {
            cms[c] = true;
        }
    }
    by_sample
        .into_iter()
        .map(|(sample_id, cms)| BehavioralProfile {
            sample_id: sample_id.to_string(),
            cms,
        })
        .collect()
}

/// Node of the behavior DAG: one unique membership string.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DagNode {
    pub cms: Vec<bool>,
    /// Samples sharing this string, sorted.
    pub samples: Vec<String>,
    /// Family → number of samples of that family on this node.
    pub families: BTreeMap<String, usize>,
}

impl DagNode {
    pub fn bit_string(&self) -> String {
        self.cms.iter().map(|&b| if b { '1' } else { '0' }).collect()
    }
}

/// DAG over unique membership strings. Edges run parent → child where the
/// parent's bit-set is a strict subset of the child's.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BehaviorDag {
    /// Sorted by (popcount, bits), so parents precede children.
    pub nodes: Vec<DagNode>,
    /// `(parent index, child index)` pairs, sorted.
    pub edges: Vec<(usize, usize)>,
}

fn is_strict_subset(a: &[bool], b: &[bool]) -> bool {
    a.iter().zip(b).all(|(&x, &y)| !x || y) && a != b
}

/// Builds the DAG: nodes are unique membership strings; for each node `v`
/// with at least one strict-subset predecessor, edges come from exactly the
/// predecessors at minimal Hamming distance (several parents are possible).
/// Nodes without strict-subset predecessors are roots; the all-zero string,
/// when present, is therefore the unique root.
pub fn build_dag(
    profiles: &[BehavioralProfile],
    family_labels: &BTreeMap<String, String>,
) -> Result<BehaviorDag, ProfileError> {
    let width = profiles.first().map(|p| p.cms.len()).unwrap_or(0);
    for p in profiles {
        if p.cms.len() != width {
            return Err(ProfileError::LengthMismatch {
                expected: width,
                found: p.cms.len(),
            });
        }
    }
    let mut groups: BTreeMap<Vec<bool>, Vec<String>> = BTreeMap::new();
    for p in profiles {
        groups.entry(p.cms.clone()).or_default().push(p.sample_id.clone());
    }
    let mut order: Vec<Vec<bool>> = groups.keys().cloned().collect();
    let popcount = |bits: &Vec<bool>| bits.iter().filter(|&&b| b).count();
    order.sort_by(|a, b| popcount(a).cmp(&popcount(b)).then(a.cmp(b)));

    let nodes: Vec<DagNode> = order
        .iter()
        .map(|bits| {
            let mut samples = groups[bits].clone();
            samples.sort();
            let mut families: BTreeMap<String, usize> = BTreeMap::new();
            for s in &samples {
                let family = family_labels
                    .get(s)
                    .cloned()
                    .unwrap_or_else(|| UNKNOWN_FAMILY.to_string());
                *families.entry(family).or_insert(0) += 1;
            }
            DagNode {
                cms: bits.clone(),
                samples,
                families,
            }
        })
        .collect();

    let mut edges = Vec::new();
    for (v, child) in nodes.iter().enumerate() {
        let predecessors: Vec<usize> = (0..nodes.len())
            .filter(|&u| is_strict_subset(&nodes[u].cms, &child.cms))
            .collect();
        if predecessors.is_empty() {
            continue;
        }
        // For subsets, Hamming distance is the popcount gap, so the minimal
        // distance is achieved by the largest subsets.
        let best = predecessors
            .iter()
            .map(|&u| hamming(&nodes[u].cms, &child.cms).expect("widths validated"))
            .min()
            .unwrap();
        for &u in &predecessors {
            if hamming(&nodes[u].cms, &child.cms).expect("widths validated") == best {
                edges.push((u, v));
            }
        }
    }
    edges.sort_unstable();
    Ok(BehaviorDag { nodes, edges })
}

/// Renders the DAG in DOT graph-description format. Node labels carry the
/// membership string and `family(count)` annotations; output is
/// deterministic for a given DAG.
pub fn to_dot(dag: &BehaviorDag) -> String {
    let escape = |s: &str| s.replace('\\', "\\\\").replace('"', "\\\"");
    let mut out = String::new();
    out.push_str("digraph behavior {\n");
    out.push_str("  rankdir=TB;\n");
    out.push_str("  node [shape=box, fontname=\"monospace\"];\n");
    for (i, node) in dag.nodes.iter().enumerate() {
        let families: Vec<String> = node
            .families
            .iter()
            .map(|(f, c)| format!("{}({})", escape(f), c))
            .collect();
        out.push_str(&format!(
            "  n{} [label=\"{}\\n{}\"];\n",
            i,
            node.bit_string(),
            families.join(", ")
        ));
    }
    for &(u, v) in &dag.edges {
        out.push_str(&format!("  n{u} -> n{v};\n"));
    }
    out.push_str("}\n");
    out
}

/// Agreement between two labelings of (mostly) the same samples.
#[derive(Debug, Clone, PartialEq)]
pub struct AgreementReport {
    /// `crosstab[label_a][label_b]` = number of shared samples with that
    /// label pair.
    pub crosstab: BTreeMap<String, BTreeMap<String, usize>>,
    /// Samples present only in the first / only in the second map.
    pub only_a: usize,
    pub only_b: usize,
    /// Mean, over the first map's labels, of how many distinct labels the
    /// second map assigns to the same samples — 1.0 means perfect agreement.
    pub mean_distinct_a: f64,
    /// Same, seen from the second map's side.
    pub mean_distinct_b: f64,
}

/// Cross-tabulates two sample→label maps over their shared samples.
pub fn label_agreement(
    labels_a: &BTreeMap<String, String>,
    labels_b: &BTreeMap<String, String>,
) -> AgreementReport {
    let mut crosstab: BTreeMap<String, BTreeMap<String, usize>> = BTreeMap::new();
    let mut reverse: BTreeMap<&str, std::collections::BTreeSet<&str>> = BTreeMap::new();
    let mut shared = 0usize;
    for (sample, la) in labels_a {
        if let Some(lb) = labels_b.get(sample) {
            shared += 1;
            *crosstab
                .entry(la.clone())
                .or_default()
                .entry(lb.clone())
                .or_insert(0) += 1;
            reverse.entry(lb.as_str()).or_default().insert(la.as_str());
        }
    }
    let only_a = labels_a.len() - shared;
    let only_b = labels_b.len() - shared;
    let mean_distinct_a = if crosstab.is_empty() {
        0.0
    } else {
        crosstab.values().map(|m| m.len() as f64).sum::<f64>() / crosstab.len() as f64
    };
    let mean_distinct_b = if reverse.is_empty() {
        0.0
    } else {
        reverse.values().map(|s| s.len() as f64).sum::<f64>() / reverse.len() as f64
    };
    AgreementReport {
        crosstab,
        only_a,
        only_b,
        mean_distinct_a,
        mean_distinct_b,
    }
}

/// Writes the agreement cross-tabulation as a matrix CSV: one row per label
/// of the first map, one column per label of the second.
pub fn write_agreement_csv<W: Write>(report: &AgreementReport, w: W) -> Result<(), ProfileError> {
    let columns: Vec<String> = {
        let mut set = std::collections::BTreeSet::new();
        for row in report.crosstab.values() {
            set.extend(row.keys().cloned());
        }
        set.into_iter().collect()
    };
    let mut wtr = csv::Writer::from_writer(w);
    let mut header = vec!["label".to_string()];
    header.extend(columns.iter().cloned());
    wtr.write_record(&header)?;
    for (la, row) in &report.crosstab {
        let mut record = vec![la.clone()];
        for col in &columns {
            record.push(row.get(col).copied().unwrap_or(0).to_string());
        }
        wtr.write_record(&record)?;
    }
    wtr.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// One family's presence row: the union of its samples' membership strings.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FamilyRow {
    pub family: String,
    pub bits: Vec<bool>,
    /// Number of clusters the family touches (popcount of `bits`).
    pub cluster_count: usize,
}

/// Family × cluster presence table: cell (F, c) is set iff any sample of
/// family F has bit c set. Samples without a family label count under
/// [`UNKNOWN_FAMILY`]. Rows sorted by family name.
pub fn family_cluster_matrix(
    profiles: &[BehavioralProfile],
    family_labels: &BTreeMap<String, String>,
) -> Vec<FamilyRow> {
    let width = profiles.first().map(|p| p.cms.len()).unwrap_or(0);
    let mut rows: BTreeMap<String, Vec<bool>> = BTreeMap::new();
    for p in profiles {
        let family = family_labels
            .get(&p.sample_id)
            .cloned()
            .unwrap_or_else(|| UNKNOWN_FAMILY.to_string());
        let bits = rows.entry(family).or_insert_with(|| vec![false; width]);
        for (b, &set) in bits.iter_mut().zip(&p.cms) {
            *b |= set;
        }
    }
    rows.into_iter()
        .map(|(family, bits)| {
            let cluster_count = bits.iter().filter(|&&b| b).count();
            FamilyRow {
                family,
                bits,
                cluster_count,
            }
        })
        .collect()
}

/// Writes `sample_id,cms,family` rows, sorted by sample id.
pub fn write_profiles_csv<W: Write>(
    profiles: &[BehavioralProfile],
    family_labels: &BTreeMap<String, String>,
    w: W,
) -> Result<(), ProfileError> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["sample_id", "cms", "family"])?;
    for p in profiles {
        let family = family_labels
            .get(&p.sample_id)
            .map(String::as_str)
            .unwrap_or(UNKNOWN_FAMILY);
        wtr.write_record([p.sample_id.as_str(), &p.bit_string(), family])?;
    }
    wtr.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Reads a file written by [`write_profiles_csv`]; returns the profiles and
/// the sample→family map.
pub fn read_profiles_csv<R: Read>(
    r: R,
) -> Result<(Vec<BehavioralProfile>, BTreeMap<String, String>), ProfileError> {
    let mut rdr = csv::Reader::from_reader(r);
    {
        let headers = rdr.headers()?;
        if headers.len() != 3 || &headers[0] != "sample_id" || &headers[1] != "cms" || &headers[2] != "family"
        {
            return Err(ProfileError::Malformed {
                reason: format!("unexpected header {headers:?}"),
            });
        }
    }
    let mut profiles = Vec::new();
    let mut families = BTreeMap::new();
    for (i, record) in rdr.records().enumerate() {
        let record = record?;
        if record.len() != 3 {
            return Err(ProfileError::Malformed {
                reason: format!("row {i} has {} fields", record.len()),
            });
        }
        let cms: Vec<bool> = record[1]
            .chars()
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                other => Err(ProfileError::Malformed {
                    reason: format!("row {i}: invalid cms character {other:?}"),
                }),
            })
            .collect::<Result<_, _>>()?;
        profiles.push(BehavioralProfile {
            sample_id: record[0].to_string(),
            cms,
        });
        families.insert(record[0].to_string(), record[2].to_string());
    }
    Ok((profiles, families))
}

/// Loads a family-label file: two columns, sample id and family name. A
/// `sample_id,family` header row is permitted and skipped.
pub fn read_family_labels<R: Read>(r: R) -> Result<BTreeMap<String, String>, ProfileError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).from_reader(r);
    let mut out = BTreeMap::new();
    for (i, record) in rdr.records().enumerate() {
        let record = record?;
        if record.len() != 2 {
            return Err(ProfileError::Malformed {
                reason: format!("row {i} has {} fields, expected 2", record.len()),
            });
        }
        if i == 0 && &record[0] == "sample_id" {
            continue;
        }
        out.insert(record[0].to_string(), record[1].to_string());
    }
    Ok(out)
}
