//! Acceptance suite: one test per release criterion, each printing a
//! `[PASS]` line (visible with `cargo test --test acceptance -- --nocapture`).
//! Reference values are verified against independent test-side oracles —
//! exhaustive warping-path enumeration, a textbook Prim MST, a brute-force
//! DAG edge constructor — never against the library's own internals.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use netbehave::capture::{extract_connections, Connection, ConnectionKey, Direction};
use netbehave::cluster::{
    cluster, core_distances, minimum_spanning_tree, mutual_reachability, ClusterLabel,
    ClusterParams,
};
use netbehave::distance::{
    combined_matrix, cosine_distance, dtw_distance, DistanceConfig, FeatureSet, SequenceFeature,
    SymMatrix,
};
use netbehave::eval::{adjusted_rand_index, labels_for_scoring};
use netbehave::features::{ngram_profile, NgramVocabulary};
use netbehave::pipeline::{run_baseline_comparison, run_pipeline, PipelineConfig};
use netbehave::profiles::{build_dag, BehavioralProfile};
use netbehave::report::{assign_bands, estimate_clustering_errors};
use netbehave::synth::{self, BehaviorKind, SYNTH_LOCALHOST};

fn pass(criterion: usize, message: &str) {
    println!("[PASS] criterion {criterion}: {message}");
}

// ---------------------------------------------------------------- criterion 1

#[test]
fn criterion_01_worked_ngram_example_is_exact() {
    let start = Instant::now();
    // Sequences ABCBC and DABCA with A=1, B=2, C=3, D=4, bigrams in the
    // documented vocabulary order {AB, BC, CB, DA, CA}.
    let vocab = NgramVocabulary::from_grams(
        vec![vec![1, 2], vec![2, 3], vec![3, 2], vec![4, 1], vec![3, 1]],
        2,
    )
    .unwrap();
    let a = ngram_profile(&[1, 2, 3, 2, 3], &vocab);
    let b = ngram_profile(&[4, 1, 2, 3, 1], &vocab);
    assert_eq!(a.counts(), vec![1, 2, 1, 0, 0]);
    assert_eq!(b.counts(), vec![1, 1, 0, 1, 1]);
    let d = cosine_distance(&a, &b);
    assert!(
        (d - 0.3876).abs() <= 1e-4,
        "cosine distance {d} is not 0.3876 +/- 1e-4"
    );
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 1.0, "took {elapsed:?}, limit 1 s");
    pass(1, &format!("profiles [1,2,1,0,0]/[1,1,0,1,1], cosine {d:.6} ({elapsed:?})"));
}

// ---------------------------------------------------------------- criterion 2

/// Oracle: the minimum path cost over every monotone warping path, found by
/// literal enumeration (exponential, fine for lengths <= 6). Integer inputs
/// keep every partial sum exact in f64, so equality is exact.
fn exhaustive_warping_cost(a: &[f64], b: &[f64], i: usize, j: usize) -> f64 {
    let cost = (a[i] - b[j]).abs();
    if i + 1 == a.len() && j + 1 == b.len() {
        return cost;
    }
    let mut best = f64::INFINITY;
    if i + 1 < a.len() {
        best = best.min(exhaustive_warping_cost(a, b, i + 1, j));
    }
    if j + 1 < b.len() {
        best = best.min(exhaustive_warping_cost(a, b, i, j + 1));
    }
    if i + 1 < a.len() && j + 1 < b.len() {
        best = best.min(exhaustive_warping_cost(a, b, i + 1, j + 1));
    }
    cost + best
}

#[test]
fn criterion_02_dtw_matches_exhaustive_path_enumeration() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0x0002);
    for case in 0..200 {
        let la = rng.random_range(1..=6);
        let lb = rng.random_range(1..=6);
        let a: Vec<f64> = (0..la).map(|_| rng.random_range(0..10) as f64).collect();
        let b: Vec<f64> = (0..lb).map(|_| rng.random_range(0..10) as f64).collect();
        let got = dtw_distance(&a, &b).unwrap();
        let want = exhaustive_warping_cost(&a, &b, 0, 0);
        assert_eq!(got, want, "case {case}: dtw({a:?}, {b:?})");
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 10.0, "took {elapsed:?}, limit 10 s");
    pass(2, &format!("200 random pairs equal the enumeration oracle exactly ({elapsed:?})"));
}

// ---------------------------------------------------------------- criterion 3

fn random_connection(rng: &mut ChaCha8Rng, i: usize, len: usize) -> Connection {
    let mut f_in: Vec<f64> = (0..len).map(|_| rng.random_range(0.0..100.0)).collect();
    f_in[0] = 0.0;
    Connection {
        key: ConnectionKey {
            sample_id: format!("s{i:03}"),
            src_ip: format!("10.0.{}.{}", i / 250, i % 250),
            dst_ip: "192.0.2.1".to_string(),
        },
        direction: Direction::Outgoing,
        f_ps: (0..len).map(|_| rng.random_range(40..1500)).collect(),
        f_in,
        f_sp: (0..len).map(|_| rng.random_range(1..u16::MAX)).collect(),
        f_dp: (0..len).map(|_| rng.random_range(1..u16::MAX)).collect(),
        original_length: len,
    }
}

#[test]
fn criterion_03_distance_matrix_invariants_hold() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0x0003);
    let connections: Vec<Connection> =
        (0..100).map(|i| random_connection(&mut rng, i, 20)).collect();
    let sp_vocab = netbehave::features::build_vocabulary(
        connections.iter().map(|c| c.f_sp.as_slice()),
        3,
    )
    .unwrap();
    let dp_vocab = netbehave::features::build_vocabulary(
        connections.iter().map(|c| c.f_dp.as_slice()),
        3,
    )
    .unwrap();
    let serial = combined_matrix(
        &connections,
        &sp_vocab,
        &dp_vocab,
        &DistanceConfig { features: FeatureSet::default(), retain_components: true, workers: 1 },
    )
    .unwrap();
    let parallel = combined_matrix(
        &connections,
        &sp_vocab,
        &dp_vocab,
        &DistanceConfig { features: FeatureSet::default(), retain_components: true, workers: 8 },
    )
    .unwrap();

    let n = connections.len();
    for i in 0..n {
        assert_eq!(serial.values.get(i, i), 0.0, "diagonal must be zero");
        for j in 0..n {
            let v = serial.values.get(i, j);
            assert!((0.0..=1.0).contains(&v), "entry ({i},{j}) = {v} outside [0,1]");
            assert_eq!(v, serial.values.get(j, i), "symmetry at ({i},{j})");
        }
    }
    for feature in [SequenceFeature::PacketSize, SequenceFeature::Interval] {
        let comp = &serial
            .components
            .iter()
            .find(|(f, _)| *f == feature)
            .expect("retained component")
            .1;
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for i in 0..n {
            for j in (i + 1)..n {
                lo = lo.min(comp.get(i, j));
                hi = hi.max(comp.get(i, j));
            }
        }
        assert_eq!(lo, 0.0, "{} normalization must attain 0", feature.as_str());
        assert_eq!(hi, 1.0, "{} normalization must attain 1", feature.as_str());
    }
    for i in 0..n {
        for j in 0..n {
            assert_eq!(
                serial.values.get(i, j).to_bits(),
                parallel.values.get(i, j).to_bits(),
                "worker counts disagree at ({i},{j})"
            );
        }
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 30.0, "took {elapsed:?}, limit 30 s");
    pass(
        3,
        &format!("100x100 matrix: symmetric, zero-diagonal, [0,1], extremes attained, 8-worker == serial bitwise ({elapsed:?})"),
    );
}

// ---------------------------------------------------------------- criterion 4

/// Oracle: textbook Prim's algorithm, O(n^2) with a key array. Every vertex
/// after the first contributes the key it held when pulled into the tree.
fn prim_mst_weights(m: &SymMatrix) -> Vec<f64> {
    let n = m.n();
    let mut in_tree = vec![false; n];
    let mut key = vec![f64::INFINITY; n];
    key[0] = 0.0;
    let mut weights = Vec::with_capacity(n.saturating_sub(1));
    for round in 0..n {
        let u = (0..n)
            .filter(|&v| !in_tree[v])
            .min_by(|&x, &y| key[x].total_cmp(&key[y]))
            .unwrap();
        in_tree[u] = true;
        if round > 0 {
            weights.push(key[u]);
        }
        for v in 0..n {
            if !in_tree[v] && m.get(u, v) < key[v] {
                key[v] = m.get(u, v);
            }
        }
    }
    weights.sort_by(f64::total_cmp);
    weights
}

fn planted_three_groups() -> SymMatrix {
    let n = 30;
    let mut m = SymMatrix::zeros(n);
    for i in 0..n {
        for j in (i + 1)..n {
            let jitter = ((i * 7 + j * 13) % 9) as f64 * 0.0025; // <= 0.02
            let base = if i / 10 == j / 10 { 0.05 } else { 0.9 };
            m.set(i, j, base + jitter);
        }
    }
    m
}

#[test]
fn criterion_04_planted_groups_are_recovered_and_mst_matches_prim() {
    let start = Instant::now();
    let m = planted_three_groups();
    let params = ClusterParams { min_cluster_size: 7, k_nearest_neighbors: 7 };
    let result = cluster(&m, &params).unwrap();
    assert_eq!(result.n_clusters, 3, "exactly 3 clusters");
    let truth: Vec<i64> = (0..30).map(|i| (i / 10) as i64).collect();
    let ari = adjusted_rand_index(&labels_for_scoring(&result.labels), &truth);
    assert_eq!(ari, 1.0, "perfect recovery");

    let core = core_distances(&m, params.k_nearest_neighbors).unwrap();
    let mreach = mutual_reachability(&m, &core);
    let mut lib_weights: Vec<f64> =
        minimum_spanning_tree(&mreach).iter().map(|e| e.weight).collect();
    lib_weights.sort_by(f64::total_cmp);
    let oracle_weights = prim_mst_weights(&mreach);
    assert_eq!(lib_weights.len(), oracle_weights.len());
    for (got, want) in lib_weights.iter().zip(&oracle_weights) {
        assert_eq!(got.to_bits(), want.to_bits(), "MST weight multisets differ");
    }
    let total: f64 = lib_weights.iter().sum();
    let oracle_total: f64 = oracle_weights.iter().sum();
    assert_eq!(total, oracle_total, "MST total weight");

    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 5.0, "took {elapsed:?}, limit 5 s");
    pass(
        4,
        &format!("3 planted groups recovered, ARI = 1.0, MST weight {total:.4} equals Prim ({elapsed:?})"),
    );
}

// ---------------------------------------------------------------- criterion 5

fn five_kind_fixture(per_kind: usize, len: usize) -> Vec<synth::SynthBatch> {
    [
        BehaviorKind::systematic_port_scan(),
        BehaviorKind::randomized_port_scan(),
        BehaviorKind::periodic_heartbeat(),
        BehaviorKind::connection_spam(),
        BehaviorKind::bulk_transfer(),
    ]
    .iter()
    .map(|kind| synth::generate(kind, per_kind, len, 7).unwrap())
    .collect()
}

fn extract_fixture(batches: &[synth::SynthBatch], len: usize) -> (Vec<Connection>, Vec<i64>) {
    let mut records = Vec::new();
    let mut kind_of: BTreeMap<String, i64> = BTreeMap::new();
    for (k, batch) in batches.iter().enumerate() {
        records.extend(batch.records.iter().cloned());
        for (key, _) in &batch.ground_truth {
            kind_of.insert(key.to_string(), k as i64);
        }
    }
    let localhost = BTreeSet::from([SYNTH_LOCALHOST.to_string()]);
    let (mut connections, _) = extract_connections(&records, len, len, &localhost);
    connections.sort_by(|a, b| a.key.to_string().cmp(&b.key.to_string()));
    let truth: Vec<i64> =
        connections.iter().map(|c| kind_of[&c.key.to_string()]).collect();
    (connections, truth)
}

#[test]
fn criterion_05_five_behavior_kinds_separate_end_to_end() {
    let start = Instant::now();
    let batches = five_kind_fixture(15, 20);
    let (connections, truth) = extract_fixture(&batches, 20);
    assert_eq!(connections.len(), 75);

    let sp_vocab = netbehave::features::build_vocabulary(
        connections.iter().map(|c| c.f_sp.as_slice()),
        3,
    )
    .unwrap();
    let dp_vocab = netbehave::features::build_vocabulary(
        connections.iter().map(|c| c.f_dp.as_slice()),
        3,
    )
    .unwrap();
    let matrix = combined_matrix(
        &connections,
        &sp_vocab,
        &dp_vocab,
        &DistanceConfig::default(),
    )
    .unwrap();
    let result = cluster(
        &matrix.values,
        &ClusterParams { min_cluster_size: 7, k_nearest_neighbors: 7 },
    )
    .unwrap();

    let ari = adjusted_rand_index(&labels_for_scoring(&result.labels), &truth);
    assert!(ari >= 0.9, "ARI {ari} below 0.9");

    // The two scan kinds (truth ids 0 and 1) must share no cluster.
    let clusters_of = |kind: i64| -> BTreeSet<usize> {
        result
            .labels
            .iter()
            .zip(&truth)
            .filter_map(|(label, &t)| match label {
                ClusterLabel::Cluster(c) if t == kind => Some(*c),
                _ => None,
            })
            .collect()
    };
    let systematic = clusters_of(0);
    let randomized = clusters_of(1);
    assert!(
        systematic.is_disjoint(&randomized),
        "scan kinds share clusters: {systematic:?} vs {randomized:?}"
    );

    // Every cluster is at least 90% one traffic direction.
    let mut by_cluster: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, label) in result.labels.iter().enumerate() {
        if let ClusterLabel::Cluster(c) = label {
            by_cluster.entry(*c).or_default().push(i);
        }
    }
    for (c, members) in &by_cluster {
        let out = members
            .iter()
            .filter(|&&i| connections[i].direction == Direction::Outgoing)
            .count();
        let majority = out.max(members.len() - out) as f64 / members.len() as f64;
        assert!(majority >= 0.9, "cluster {c} direction purity {majority}");
    }

    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 60.0, "took {elapsed:?}, limit 60 s");
    pass(
        5,
        &format!(
            "5 kinds x 15: ARI {ari:.3}, {} clusters, scans disjoint, direction-pure ({elapsed:?})",
            result.n_clusters
        ),
    );
}

// ---------------------------------------------------------------- criterion 6

fn ce_fixture(deviant_features: usize) -> Vec<Connection> {
    let base_ps: Vec<u32> = (1..=10).map(|p| 100 * p).collect();
    let base_sp: Vec<u16> = (1..=10).collect();
    let base_dp: Vec<u16> = (80..90).collect();
    let intervals = vec![0.0, 10.0, 10.0, 10.0, 10.0, 10.0, 10.0, 10.0, 10.0, 10.0];
    let make = |name: &str, ps: Vec<u32>, sp: Vec<u16>, dp: Vec<u16>| Connection {
        key: ConnectionKey {
            sample_id: name.to_string(),
            src_ip: "a".to_string(),
            dst_ip: "b".to_string(),
        },
        direction: Direction::Outgoing,
        f_ps: ps,
        f_in: intervals.clone(),
        f_sp: sp,
        f_dp: dp,
        original_length: 10,
    };
    let mut out: Vec<Connection> = (0..7)
        .map(|i| make(&format!("s{i}"), base_ps.clone(), base_sp.clone(), base_dp.clone()))
        .collect();
    let ps = if deviant_features >= 1 { vec![9000; 10] } else { base_ps };
    let sp = if deviant_features >= 2 { vec![60_000; 10] } else { base_sp };
    let dp = if deviant_features >= 3 { vec![30_000; 10] } else { base_dp };
    out.push(make("dev", ps, sp, dp));
    out
}

fn ce_rate(connections: &[Connection]) -> f64 {
    let mut combined = SymMatrix::zeros(connections.len());
    for i in 0..connections.len() {
        for j in (i + 1)..connections.len() {
            let same = connections[i].f_ps == connections[j].f_ps
                && connections[i].f_sp == connections[j].f_sp
                && connections[i].f_dp == connections[j].f_dp;
            combined.set(i, j, if same { 0.0 } else { 0.5 });
        }
    }
    let bands = assign_bands(connections);
    let members: Vec<usize> = (0..connections.len()).collect();
    estimate_clustering_errors(&members, &combined, &bands).unwrap().error_rate
}

#[test]
fn criterion_06_ce_rule_flags_three_feature_deviants_only() {
    let three = ce_rate(&ce_fixture(3));
    assert_eq!(three, 1.0 / 8.0, "3-feature deviant must score exactly 1/8");
    let two = ce_rate(&ce_fixture(2));
    assert_eq!(two, 0.0, "2-feature deviant must score 0");
    pass(6, "8-connection cluster: 3-feature deviant -> rate 1/8, 2-feature variant -> 0");
}

// ---------------------------------------------------------------- criterion 7

#[test]
fn criterion_07_sequential_ce_rate_is_at_most_baseline() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("captures");
    synth::write_batch_dir(&input, &five_kind_fixture(15, 20)).unwrap();
    let mut cfg = PipelineConfig::default();
    cfg.input = input;
    cfg.out = dir.path().join("cmp");
    cfg.localhost = BTreeSet::from([SYNTH_LOCALHOST.to_string()]);
    cfg.workers = 8;
    let report = run_baseline_comparison(&cfg).unwrap();
    assert!(
        report.sequential.mean_error_rate <= report.baseline.mean_error_rate,
        "sequential {} > baseline {}",
        report.sequential.mean_error_rate,
        report.baseline.mean_error_rate
    );
    pass(
        7,
        &format!(
            "mean estimated CE rate: sequential {:.4} <= baseline {:.4}",
            report.sequential.mean_error_rate, report.baseline.mean_error_rate
        ),
    );
}

// ---------------------------------------------------------------- criterion 8

fn bit_string(bits: &[bool]) -> String {
    bits.iter().map(|&b| if b { '1' } else { '0' }).collect()
}

fn hamming_bits(a: &[bool], b: &[bool]) -> usize {
    a.iter().zip(b).filter(|(x, y)| x != y).count()
}

fn is_strict_subset(a: &[bool], b: &[bool]) -> bool {
    a != b && a.iter().zip(b).all(|(&x, &y)| !x || y)
}

/// Oracle: edges by definition — for every node, its parents are exactly
/// the strict subsets at minimal Hamming distance.
fn brute_force_edges(cmss: &[Vec<bool>]) -> BTreeSet<(String, String)> {
    let unique: Vec<&Vec<bool>> = {
        let mut seen = BTreeSet::new();
        cmss.iter().filter(|c| seen.insert(bit_string(c))).collect()
    };
    let mut edges = BTreeSet::new();
    for child in &unique {
        let subsets: Vec<&&Vec<bool>> =
            unique.iter().filter(|p| is_strict_subset(p, child)).collect();
        if let Some(min_h) = subsets.iter().map(|p| hamming_bits(p, child)).min() {
            for parent in subsets {
                if hamming_bits(parent, child) == min_h {
                    edges.insert((bit_string(parent), bit_string(child)));
                }
            }
        }
    }
    edges
}

fn assert_acyclic(n_nodes: usize, edges: &[(usize, usize)]) {
    // Kahn's algorithm: all nodes must drain.
    let mut indegree = vec![0usize; n_nodes];
    let mut out: Vec<Vec<usize>> = vec![Vec::new(); n_nodes];
    for &(p, c) in edges {
        indegree[c] += 1;
        out[p].push(c);
    }
    let mut queue: Vec<usize> =
        (0..n_nodes).filter(|&v| indegree[v] == 0).collect();
    let mut drained = 0;
    while let Some(v) = queue.pop() {
        drained += 1;
        for &c in &out[v] {
            indegree[c] -= 1;
            if indegree[c] == 0 {
                queue.push(c);
            }
        }
    }
    assert_eq!(drained, n_nodes, "cycle detected");
}

#[test]
fn criterion_08_cms_and_dag_match_the_brute_force_oracle() {
    // All-noise sample: all-zero CMS, unique root when present.
    let keys: Vec<ConnectionKey> = (0..3)
        .map(|i| ConnectionKey {
            sample_id: "noisy".to_string(),
            src_ip: format!("10.0.0.{i}"),
            dst_ip: "192.0.2.1".to_string(),
        })
        .collect();
    let labels = vec![ClusterLabel::Noise; 3];
    let profile = netbehave::profiles::build_cms("noisy", &keys, &labels, 4).unwrap();
    assert_eq!(profile.bit_string(), "0000");

    let mut profiles = vec![profile];
    for (i, bits) in [[true, false, false, false], [true, true, false, false]]
        .iter()
        .enumerate()
    {
        profiles.push(BehavioralProfile {
            sample_id: format!("s{i}"),
            cms: bits.to_vec(),
        });
    }
    let dag = build_dag(&profiles, &BTreeMap::new()).unwrap();
    let children: BTreeSet<usize> = dag.edges.iter().map(|&(_, c)| c).collect();
    let roots: Vec<usize> =
        (0..dag.nodes.len()).filter(|v| !children.contains(v)).collect();
    assert_eq!(roots.len(), 1, "unique root");
    assert_eq!(dag.nodes[roots[0]].bit_string(), "0000", "the all-zero CMS is the root");

    // 50 random CMS sets against the brute-force oracle.
    let mut rng = ChaCha8Rng::seed_from_u64(0x0008);
    for case in 0..50 {
        let width = rng.random_range(1..=12);
        let n_samples = rng.random_range(1..=20);
        let cmss: Vec<Vec<bool>> = (0..n_samples)
            .map(|_| (0..width).map(|_| rng.random_bool(0.4)).collect())
            .collect();
        let profiles: Vec<BehavioralProfile> = cmss
            .iter()
            .enumerate()
            .map(|(i, cms)| BehavioralProfile {
                sample_id: format!("s{i:02}"),
                cms: cms.clone(),
            })
            .collect();
        let dag = build_dag(&profiles, &BTreeMap::new()).unwrap();
        assert_acyclic(dag.nodes.len(), &dag.edges);
        let got: BTreeSet<(String, String)> = dag
            .edges
            .iter()
            .map(|&(p, c)| (dag.nodes[p].bit_string(), dag.nodes[c].bit_string()))
            .collect();
        let want = brute_force_edges(&cmss);
        assert_eq!(got, want, "case {case}: edge sets differ");
        // Subset direction: every edge goes strict-subset -> superset.
        for &(p, c) in &dag.edges {
            assert!(
                is_strict_subset(&dag.nodes[p].cms, &dag.nodes[c].cms),
                "case {case}: edge violates subset direction"
            );
        }
        if let Some(zero) = (0..dag.nodes.len())
            .find(|&v| dag.nodes[v].cms.iter().all(|&b| !b))
        {
            let children: BTreeSet<usize> = dag.edges.iter().map(|&(_, c)| c).collect();
            let roots: Vec<usize> =
                (0..dag.nodes.len()).filter(|v| !children.contains(v)).collect();
            assert_eq!(roots, vec![zero], "case {case}: zero CMS must be the unique root");
        }
    }
    pass(8, "all-noise CMS is the all-zero unique root; 50 random DAGs equal the brute-force edges, all acyclic");
}

// ---------------------------------------------------------------- criterion 9

fn vm_hwm_mib() -> Option<f64> {
    let status = std::fs::read_to_string("/proc/self/status").ok()?;
    for line in status.lines() {
        if let Some(rest) = line.strip_prefix("VmHWM:") {
            let kb: f64 = rest.trim().trim_end_matches("kB").trim().parse().ok()?;
            return Some(kb / 1024.0);
        }
    }
    None
}

#[test]
fn criterion_09_thousand_connection_matrix_fits_the_envelope() {
    let batches = five_kind_fixture(200, 20);
    let (connections, _) = extract_fixture(&batches, 20);
    assert_eq!(connections.len(), 1000);
    let sp_vocab = netbehave::features::build_vocabulary(
        connections.iter().map(|c| c.f_sp.as_slice()),
        3,
    )
    .unwrap();
    let dp_vocab = netbehave::features::build_vocabulary(
        connections.iter().map(|c| c.f_dp.as_slice()),
        3,
    )
    .unwrap();
    let start = Instant::now();
    let matrix = combined_matrix(
        &connections,
        &sp_vocab,
        &dp_vocab,
        &DistanceConfig { features: FeatureSet::default(), retain_components: false, workers: 8 },
    )
    .unwrap();
    let elapsed = start.elapsed();
    assert_eq!(matrix.values.n(), 1000);
    assert!(
        elapsed.as_secs_f64() < 60.0,
        "1000-connection matrix took {elapsed:?}, limit 60 s"
    );
    let peak = vm_hwm_mib();
    if let Some(mib) = peak {
        assert!(mib < 2048.0, "peak memory {mib:.0} MiB exceeds 2 GiB");
    }
    pass(
        9,
        &format!(
            "1000 connections, 8 workers: {elapsed:?} (< 60 s), peak RSS {} (< 2 GiB)",
            peak.map_or("unavailable".to_string(), |m| format!("{m:.0} MiB"))
        ),
    );
}

// --------------------------------------------------------------- criterion 10

fn dir_snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&path).unwrap());
            }
        }
    }
    out
}

#[test]
fn criterion_10_pipeline_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("captures");
    synth::write_batch_dir(&input, &five_kind_fixture(15, 20)).unwrap();
    let run = |out: &Path| {
        let mut cfg = PipelineConfig::default();
        cfg.input = input.clone();
        cfg.out = out.to_path_buf();
        cfg.localhost = BTreeSet::from([SYNTH_LOCALHOST.to_string()]);
        cfg.workers = 8;
        run_pipeline(&cfg).unwrap()
    };
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    let report = run(&out_a);
    run(&out_b);
    let snap_a = dir_snapshot(&out_a);
    let snap_b = dir_snapshot(&out_b);
    assert_eq!(
        snap_a.keys().collect::<Vec<_>>(),
        snap_b.keys().collect::<Vec<_>>(),
        "artifact sets differ"
    );
    let mut bytes = 0usize;
    for (name, content) in &snap_a {
        assert_eq!(content, &snap_b[name], "artifact {name} differs between runs");
        bytes += content.len();
    }
    pass(
        10,
        &format!(
            "two runs, {} artifacts each ({} clusters), {bytes} bytes byte-identical",
            snap_a.len(),
            report.n_clusters
        ),
    );
}
