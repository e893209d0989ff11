//! Crystal-graph data model: graphs, spectra, JSONL (de)serialization, the
//! synthetic generator, splitting, and disjoint-union batching.

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

/// Which DoS grid a spectrum lives on. Phonon and synthetic spectra are
/// normalized distributions; electronic spectra carry unnormalized mass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GridKind {
    PhDos,
    EDos,
    Synthetic,
}

impl GridKind {
    pub fn is_normalized(self) -> bool {
        !matches!(self, GridKind::EDos)
    }
}

/// A length-`l_y` non-negative spectrum, target or prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub values: Vec<f64>,
    pub grid: GridKind,
}

impl Spectrum {
    pub fn new(values: Vec<f64>, grid: GridKind) -> Self {
        Spectrum { values, grid }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn validate(&self, l_y: usize) -> std::result::Result<(), String> {
        if self.values.len() != l_y {
            return Err(format!(
                "spectrum length {} does not match l_y {}",
                self.values.len(),
                l_y
            ));
        }
        for (i, &v) in self.values.iter().enumerate() {
            if !v.is_finite() || v < 0.0 {
                return Err(format!("spectrum value {v} at position {i} invalid"));
            }
        }
        if self.grid.is_normalized() {
            let sum: f64 = self.values.iter().sum();
            if (sum - 1.0).abs() > 1e-6 {
                return Err(format!("normalized spectrum sums to {sum}, expected 1"));
            }
        }
        Ok(())
    }
}

/// Atoms with feature vectors plus distance-labelled directed neighbor lists.
#[derive(Debug, Clone)]
pub struct CrystalGraph {
    pub id: String,
    /// Per-atom feature vectors, all the same length `d_atom`.
    pub nodes: Vec<Vec<f64>>,
    /// `neighbors[i]` lists `(j, distance)` pairs node `i` attends over.
    pub neighbors: Vec<Vec<(usize, f64)>>,
}

impl CrystalGraph {
    pub fn n_atoms(&self) -> usize {
        self.nodes.len()
    }

    pub fn n_edges(&self) -> usize {
        self.neighbors.iter().map(Vec::len).sum()
    }

    pub fn validate(&self, d_atom: usize, n_max_nbr: usize) -> std::result::Result<(), String> {
        let n = self.nodes.len();
        if n == 0 {
            return Err("graph has no atoms".into());
        }
        if self.neighbors.len() != n {
            return Err(format!(
                "{} neighbor lists for {} atoms",
                self.neighbors.len(),
                n
            ));
        }
        for (i, feats) in self.nodes.iter().enumerate() {
            if feats.len() != d_atom {
                return Err(format!(
                    "atom {i} has {} features, expected {d_atom}",
                    feats.len()
                ));
            }
            if feats.iter().any(|f| !f.is_finite()) {
                return Err(format!("atom {i} has non-finite features"));
            }
        }
        for (i, nbrs) in self.neighbors.iter().enumerate() {
            if nbrs.is_empty() {
                return Err(format!("atom {i} has no neighbors"));
            }
            if nbrs.len() > n_max_nbr {
                return Err(format!(
                    "atom {i} has {} neighbors, cap is {n_max_nbr}",
                    nbrs.len()
                ));
            }
            for &(j, dist) in nbrs {
                if j >= n {
                    return Err(format!("atom {i} lists neighbor {j} out of range {n}"));
                }
                if !dist.is_finite() || dist <= 0.0 {
                    return Err(format!("atom {i} -> {j} has invalid distance {dist}"));
                }
            }
        }
        Ok(())
    }
}

/// Gaussian-basis expansion of bond distances: evenly spaced centers on
/// `[0, r_cut]`, component `k = exp(-(d - c_k)^2 / width^2)`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EdgeBasis {
    pub d_edge: usize,
    pub r_cut: f64,
    pub width: f64,
}

impl Default for EdgeBasis {
    fn default() -> Self {
        // Width equals the grid spacing.
        let d_edge = 41;
        let r_cut = 8.0;
        EdgeBasis {
            d_edge,
            r_cut,
            width: r_cut / (d_edge - 1) as f64,
        }
    }
}

impl EdgeBasis {
    pub fn center(&self, k: usize) -> f64 {
        self.r_cut * k as f64 / (self.d_edge - 1) as f64
    }

    /// Expand one distance into the basis. Distances must be positive.
    pub fn expand(&self, distance: f64) -> Result<Vec<f64>> {
        if !(distance > 0.0) || !distance.is_finite() {
            return Err(Error::domain(
                "gaussian_basis_expand",
                format!("distance must be positive and finite, got {distance}"),
            ));
        }
        Ok((0..self.d_edge)
            .map(|k| {
                let delta = distance - self.center(k);
                // Floor keeps far-tail components strictly positive where
                // exp would underflow to zero.
                (-(delta * delta) / (self.width * self.width))
                    .exp()
                    .max(f64::MIN_POSITIVE)
            })
            .collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// Samples plus split assignments. Splits are disjoint by construction and
/// a pure function of (sample id, seed).
#[derive(Debug, Clone)]
pub struct Dataset {
    pub samples: Vec<(CrystalGraph, Spectrum)>,
    pub splits: Vec<Split>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn indices_of(&self, split: Split) -> Vec<usize> {
        self.splits
            .iter()
            .enumerate()
            .filter_map(|(i, &s)| (s == split).then_some(i))
            .collect()
    }
}

#[derive(Serialize, Deserialize)]
struct Record {
    id: String,
    nodes: Vec<Vec<f64>>,
    edges: Vec<Vec<(usize, f64)>>,
    target: Vec<f64>,
}

/// Load a JSONL dataset, validating every record. Errors name the offending
/// line and record id. All samples land in the train split until
/// [`assign_splits`] runs.
pub fn load_dataset(
    path: &Path,
    l_y: usize,
    d_atom: usize,
    n_max_nbr: usize,
    grid: GridKind,
) -> Result<Dataset> {
    let file = std::fs::File::open(path)?;
    let reader = BufReader::new(file);
    let mut samples = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: Record = serde_json::from_str(&line).map_err(|e| Error::InvalidRecord {
            line: lineno + 1,
            id: String::from("<unparsed>"),
            reason: e.to_string(),
        })?;
        let invalid = |reason: String| Error::InvalidRecord {
            line: lineno + 1,
            id: record.id.clone(),
            reason,
        };
        let graph = CrystalGraph {
            id: record.id.clone(),
            nodes: record.nodes,
            neighbors: record.edges,
        };
        graph.validate(d_atom, n_max_nbr).map_err(&invalid)?;
        let spectrum = Spectrum::new(record.target, grid);
        spectrum.validate(l_y).map_err(&invalid)?;
        samples.push((graph, spectrum));
    }
    let splits = vec![Split::Train; samples.len()];
    Ok(Dataset { samples, splits })
}

/// Write a dataset as JSONL; floats round-trip bitwise through
/// [`load_dataset`].
pub fn save_dataset(path: &Path, dataset: &Dataset) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut writer = BufWriter::new(file);
    for (graph, spectrum) in &dataset.samples {
        let record = Record {
            id: graph.id.clone(),
            nodes: graph.nodes.clone(),
            edges: graph.neighbors.clone(),
            target: spectrum.values.clone(),
        };
        serde_json::to_writer(&mut writer, &record)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()?;
    Ok(())
}

/// Knobs of the synthetic generator. Defaults mirror the data model:
/// 92-dimensional atom features, 8 pseudo-elements, 12-neighbor cap.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SyntheticConfig {
    pub d_atom: usize,
    pub n_pseudo_elements: usize,
    pub n_max_nbr: usize,
    pub n_range: (usize, usize),
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            d_atom: 92,
            n_pseudo_elements: 8,
            n_max_nbr: 12,
            n_range: (4, 20),
        }
    }
}

/// Deterministic target construction shared by the generator and tests:
/// one Gaussian per atom on the grid, centered by pseudo-element and shifted
/// by the atom's mean neighbor distance, the mixture normalized to sum 1.
pub fn synthetic_target(
    elements: &[usize],
    mean_neighbor_dists: &[f64],
    l_y: usize,
    n_pseudo_elements: usize,
) -> Vec<f64> {
    assert_eq!(elements.len(), mean_neighbor_dists.len());
    let width = l_y as f64 / 25.0;
    let stride = l_y as f64 / n_pseudo_elements as f64;
    let mut out = vec![0.0; l_y];
    for (&e, &md) in elements.iter().zip(mean_neighbor_dists) {
        let center = (e as f64 + 0.5) * stride + 0.5 * md * (l_y as f64 / 51.0);
        for (g, o) in out.iter_mut().enumerate() {
            let delta = g as f64 - center;
            *o += (-(delta * delta) / (2.0 * width * width)).exp();
        }
    }
    let total: f64 = out.iter().sum();
    for o in out.iter_mut() {
        *o /= total;
    }
    out
}

/// Generate `count` random graphs with analytically determined targets.
/// Byte-identical output for identical `(count, seed, l_y, config)`.
pub fn generate_synthetic(
    count: usize,
    seed: u64,
    l_y: usize,
    config: &SyntheticConfig,
) -> Result<Dataset> {
    if count == 0 {
        return Err(Error::domain("generate_synthetic", "count must be >= 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = Vec::with_capacity(count);
    for idx in 0..count {
        let n = rng.gen_range(config.n_range.0..=config.n_range.1);
        let elements: Vec<usize> = (0..n)
            .map(|_| rng.gen_range(0..config.n_pseudo_elements))
            .collect();
        let positions = sample_positions(n, &mut rng);
        let k = config.n_max_nbr.min(n - 1);
        let mut neighbors = Vec::with_capacity(n);
        for i in 0..n {
            let mut by_dist: Vec<(usize, f64)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| (j, euclid(&positions[i], &positions[j])))
                .collect();
            by_dist.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)));
            by_dist.truncate(k);
            neighbors.push(by_dist);
        }
        let mut nodes = Vec::with_capacity(n);
        for &e in &elements {
            let mut feats: Vec<f64> = (0..config.d_atom).map(|_| 0.05 * rng.gen::<f64>()).collect();
            feats[e] += 1.0;
            nodes.push(feats);
        }
        let mean_dists: Vec<f64> = neighbors
            .iter()
            .map(|nbrs| nbrs.iter().map(|&(_, d)| d).sum::<f64>() / nbrs.len() as f64)
            .collect();
        let target = synthetic_target(&elements, &mean_dists, l_y, config.n_pseudo_elements);
        let graph = CrystalGraph {
            id: format!("syn-{seed}-{idx:05}"),
            nodes,
            neighbors,
        };
        debug_assert!(graph.validate(config.d_atom, config.n_max_nbr).is_ok());
        samples.push((graph, Spectrum::new(target, GridKind::Synthetic)));
    }
    let splits = vec![Split::Train; samples.len()];
    Ok(Dataset { samples, splits })
}

fn sample_positions(n: usize, rng: &mut ChaCha8Rng) -> Vec<[f64; 3]> {
    let side = 2.5 * (n as f64).cbrt();
    loop {
        let positions: Vec<[f64; 3]> = (0..n)
            .map(|_| {
                [
                    rng.gen::<f64>() * side,
                    rng.gen::<f64>() * side,
                    rng.gen::<f64>() * side,
                ]
            })
            .collect();
        let degenerate = (0..n).any(|i| {
            (i + 1..n).any(|j| euclid(&positions[i], &positions[j]) < 1e-6)
        });
        if !degenerate {
            return positions;
        }
    }
}

fn euclid(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// FNV-1a over the id bytes mixed with the seed; stable across platforms.
fn split_hash(id: &str, seed: u64) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in seed.to_le_bytes().iter().chain(id.as_bytes()) {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Assign train/val/test by hashing sample ids; deterministic, disjoint,
/// covering. Ratios must sum to 1.
pub fn assign_splits(dataset: &mut Dataset, ratios: (f64, f64, f64), seed: u64) -> Result<()> {
    let total = ratios.0 + ratios.1 + ratios.2;
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::config(vec![format!(
            "split ratios {ratios:?} sum to {total}, expected 1"
        )]));
    }
    for (i, (graph, _)) in dataset.samples.iter().enumerate() {
        // Top 53 bits -> uniform in [0, 1).
        let u = (split_hash(&graph.id, seed) >> 11) as f64 / (1u64 << 53) as f64;
        dataset.splits[i] = if u < ratios.0 {
            Split::Train
        } else if u < ratios.0 + ratios.1 {
            Split::Val
        } else {
            Split::Test
        };
    }
    Ok(())
}

/// Several graphs fused into one block-diagonal graph for batched encoding.
pub struct BatchGraph {
    /// `[n_total, d_atom]` stacked atom features.
    pub node_features: Tensor,
    /// `[e_total, d_edge]` expanded bond features.
    pub edge_features: Tensor,
    /// Destination (attending) node per edge.
    pub edge_dst: Vec<usize>,
    /// Source (neighbor) node per edge.
    pub edge_src: Vec<usize>,
    /// Owning graph index per node.
    pub node_graph: Vec<usize>,
    /// `(start, len)` node range of each graph.
    pub graph_ranges: Vec<(usize, usize)>,
    /// Neighbor-list length per node.
    pub degrees: Vec<usize>,
}

impl BatchGraph {
    pub fn new(graphs: &[&CrystalGraph], basis: &EdgeBasis) -> Result<Self> {
        let n_total: usize = graphs.iter().map(|g| g.n_atoms()).sum();
        let e_total: usize = graphs.iter().map(|g| g.n_edges()).sum();
        let d_atom = graphs
            .first()
            .and_then(|g| g.nodes.first())
            .map_or(0, Vec::len);
        let mut node_features = Vec::with_capacity(n_total * d_atom);
        let mut edge_features = Vec::with_capacity(e_total * basis.d_edge);
        let mut edge_dst = Vec::with_capacity(e_total);
        let mut edge_src = Vec::with_capacity(e_total);
        let mut node_graph = Vec::with_capacity(n_total);
        let mut graph_ranges = Vec::with_capacity(graphs.len());
        let mut degrees = Vec::with_capacity(n_total);
        let mut offset = 0;
        for (gi, graph) in graphs.iter().enumerate() {
            let n = graph.n_atoms();
            graph_ranges.push((offset, n));
            for feats in &graph.nodes {
                node_features.extend_from_slice(feats);
                node_graph.push(gi);
            }
            for (i, nbrs) in graph.neighbors.iter().enumerate() {
                degrees.push(nbrs.len());
                for &(j, dist) in nbrs {
                    edge_dst.push(offset + i);
                    edge_src.push(offset + j);
                    edge_features.extend_from_slice(&basis.expand(dist)?);
                }
            }
            offset += n;
        }
        Ok(BatchGraph {
            node_features: Tensor::new(vec![n_total, d_atom], node_features)?,
            edge_features: Tensor::new(vec![e_total, basis.d_edge], edge_features)?,
            edge_dst,
            edge_src,
            node_graph,
            graph_ranges,
            degrees,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.node_graph.len()
    }

    pub fn n_graphs(&self) -> usize {
        self.graph_ranges.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gaussian_peak_at_center() {
        let basis = EdgeBasis::default();
        let expansion = basis.expand(basis.center(5)).unwrap();
        assert_eq!(expansion[5], 1.0);
        assert!(expansion.iter().all(|&v| v > 0.0 && v <= 1.0));
    }

    #[test]
    fn gaussian_one_width_away_is_inv_e() {
        let basis = EdgeBasis::default();
        let d = basis.center(10) + basis.width;
        let expansion = basis.expand(d).unwrap();
        assert!((expansion[10] - (-1.0_f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn gaussian_rejects_non_positive_distance() {
        let basis = EdgeBasis::default();
        assert!(basis.expand(0.0).is_err());
        assert!(basis.expand(-1.0).is_err());
    }

    #[test]
    fn generator_is_deterministic() {
        let cfg = SyntheticConfig::default();
        let a = generate_synthetic(8, 42, 51, &cfg).unwrap();
        let b = generate_synthetic(8, 42, 51, &cfg).unwrap();
        for ((ga, sa), (gb, sb)) in a.samples.iter().zip(&b.samples) {
            assert_eq!(ga.id, gb.id);
            assert_eq!(ga.nodes, gb.nodes);
            assert_eq!(ga.neighbors, gb.neighbors);
            assert_eq!(sa.values, sb.values);
        }
    }

    #[test]
    fn generated_spectra_sum_to_one() {
        let cfg = SyntheticConfig::default();
        let ds = generate_synthetic(16, 7, 51, &cfg).unwrap();
        for (_, spectrum) in &ds.samples {
            let sum: f64 = spectrum.values.iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
            spectrum.validate(51).unwrap();
        }
    }

    #[test]
    fn generated_graphs_validate() {
        let cfg = SyntheticConfig::default();
        let ds = generate_synthetic(16, 3, 51, &cfg).unwrap();
        for (graph, _) in &ds.samples {
            graph.validate(cfg.d_atom, cfg.n_max_nbr).unwrap();
        }
    }

    #[test]
    fn identical_atoms_reproduce_single_atom_spectrum() {
        // A mixture of identical components equals the single component.
        let single = synthetic_target(&[3], &[2.0], 51, 8);
        let many = synthetic_target(&[3; 6], &[2.0; 6], 51, 8);
        for (a, b) in single.iter().zip(&many) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn split_ratios_must_sum_to_one() {
        let cfg = SyntheticConfig::default();
        let mut ds = generate_synthetic(4, 1, 51, &cfg).unwrap();
        assert!(assign_splits(&mut ds, (0.5, 0.2, 0.2), 0).is_err());
    }

    #[test]
    fn all_train_ratio_puts_everything_in_train() {
        let cfg = SyntheticConfig::default();
        let mut ds = generate_synthetic(10, 1, 51, &cfg).unwrap();
        assign_splits(&mut ds, (1.0, 0.0, 0.0), 5).unwrap();
        assert_eq!(ds.indices_of(Split::Train).len(), 10);
    }

    #[test]
    fn splits_are_deterministic_and_cover() {
        let cfg = SyntheticConfig::default();
        let mut a = generate_synthetic(50, 2, 51, &cfg).unwrap();
        let mut b = generate_synthetic(50, 2, 51, &cfg).unwrap();
        assign_splits(&mut a, (0.8, 0.1, 0.1), 9).unwrap();
        assign_splits(&mut b, (0.8, 0.1, 0.1), 9).unwrap();
        assert_eq!(a.splits, b.splits);
        let n = a.indices_of(Split::Train).len()
            + a.indices_of(Split::Val).len()
            + a.indices_of(Split::Test).len();
        assert_eq!(n, 50);
    }

    #[test]
    fn split_sizes_near_ratios_on_large_sample() {
        let cfg = SyntheticConfig {
            n_range: (4, 6),
            ..SyntheticConfig::default()
        };
        let mut ds = generate_synthetic(1000, 11, 51, &cfg).unwrap();
        assign_splits(&mut ds, (0.8, 0.1, 0.1), 13).unwrap();
        let train = ds.indices_of(Split::Train).len() as f64;
        let val = ds.indices_of(Split::Val).len() as f64;
        let test = ds.indices_of(Split::Test).len() as f64;
        assert!((train - 800.0).abs() <= 30.0, "train {train}");
        assert!((val - 100.0).abs() <= 30.0, "val {val}");
        assert!((test - 100.0).abs() <= 30.0, "test {test}");
    }

    #[test]
    fn round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.jsonl");
        let cfg = SyntheticConfig::default();
        let ds = generate_synthetic(6, 21, 51, &cfg).unwrap();
        save_dataset(&path, &ds).unwrap();
        let loaded = load_dataset(&path, 51, cfg.d_atom, cfg.n_max_nbr, GridKind::Synthetic).unwrap();
        assert_eq!(loaded.len(), ds.len());
        for ((ga, sa), (gb, sb)) in ds.samples.iter().zip(&loaded.samples) {
            assert_eq!(ga.nodes, gb.nodes);
            assert_eq!(ga.neighbors, gb.neighbors);
            assert_eq!(sa.values, sb.values);
        }
        // Saving the loaded copy reproduces identical bytes.
        let path2 = dir.path().join("data2.jsonl");
        save_dataset(&path2, &loaded).unwrap();
        assert_eq!(
            std::fs::read(&path).unwrap(),
            std::fs::read(&path2).unwrap()
        );
    }

    #[test]
    fn empty_file_loads_empty_dataset() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.jsonl");
        std::fs::write(&path, "").unwrap();
        let ds = load_dataset(&path, 51, 92, 12, GridKind::Synthetic).unwrap();
        assert!(ds.is_empty());
    }

    #[test]
    fn wrong_length_record_is_rejected_with_id() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        let record = serde_json::json!({
            "id": "bad-one",
            "nodes": [vec![0.0; 4], vec![0.0; 4]],
            "edges": [[[1, 1.5]], [[0, 1.5]]],
            "target": vec![0.5, 0.5] // 2 values, l_y expects 3
        });
        std::fs::write(&path, format!("{record}\n")).unwrap();
        match load_dataset(&path, 3, 4, 12, GridKind::EDos) {
            Err(Error::InvalidRecord { id, line, .. }) => {
                assert_eq!(id, "bad-one");
                assert_eq!(line, 1);
            }
            other => panic!("expected InvalidRecord, got {other:?}"),
        }
    }

    #[test]
    fn negative_target_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("neg.jsonl");
        let record = serde_json::json!({
            "id": "neg",
            "nodes": [vec![0.0; 4], vec![0.0; 4]],
            "edges": [[[1, 1.0]], [[0, 1.0]]],
            "target": vec![1.5, -0.5, 0.0]
        });
        std::fs::write(&path, format!("{record}\n")).unwrap();
        assert!(load_dataset(&path, 3, 4, 12, GridKind::EDos).is_err());
    }

    #[test]
    fn batch_graph_concatenates_disjointly() {
        let cfg = SyntheticConfig::default();
        let ds = generate_synthetic(3, 17, 51, &cfg).unwrap();
        let graphs: Vec<&CrystalGraph> = ds.samples.iter().map(|(g, _)| g).collect();
        let basis = EdgeBasis::default();
        let batch = BatchGraph::new(&graphs, &basis).unwrap();
        assert_eq!(batch.n_graphs(), 3);
        assert_eq!(
            batch.n_nodes(),
            graphs.iter().map(|g| g.n_atoms()).sum::<usize>()
        );
        // Edges stay within their graph's node range.
        for (e, (&dst, &src)) in batch.edge_dst.iter().zip(&batch.edge_src).enumerate() {
            let gi = batch.node_graph[dst];
            let (start, len) = batch.graph_ranges[gi];
            assert!(src >= start && src < start + len, "edge {e} crosses graphs");
        }
    }
}
