//! Dataset ingestion and synthesis.
//!
//! Canonical directory layout:
//!   edges.tsv    one `i<TAB>j` per line, 0-indexed, unordered pairs
//!   features.csv one row per node, comma-separated decimals
//!   labels.txt   one integer per line
//!   splits.json  {"train":[...],"val":[...],"test":[...]}
//!
//! Loading deduplicates edges, rejects self-loops, and validates the split
//! invariants. Saves are canonical: sorted edges, shortest round-trip
//! decimals, so save(load(dir)) is byte-stable.

use std::collections::BTreeSet;
use std::path::Path;

use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{GrandError, Result};
use crate::field::NodeField;
use crate::graph::Graph;

#[derive(Debug, Clone, Default, serde::Serialize, serde::Deserialize)]
pub struct Splits {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub graph: Graph,
    /// `n x d_in`, row-major.
    pub features: Array2<f64>,
    pub labels: Vec<usize>,
    pub splits: Splits,
    pub classes: usize,
}

impl Dataset {
    pub fn n(&self) -> usize {
        self.graph.n()
    }

    pub fn d_in(&self) -> usize {
        self.features.ncols()
    }

    pub fn features_field(&self) -> NodeField {
        NodeField::from_array(self.features.clone())
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.graph.n();
        if self.features.nrows() != n {
            return Err(GrandError::DataInvariant(format!(
                "feature rows {} != node count {n}",
                self.features.nrows()
            )));
        }
        if self.labels.len() != n {
            return Err(GrandError::DataInvariant(format!(
                "label count {} != node count {n}",
                self.labels.len()
            )));
        }
        if let Some(&bad) = self.labels.iter().find(|&&l| l >= self.classes) {
            return Err(GrandError::DataInvariant(format!(
                "label {bad} out of range for {} classes",
                self.classes
            )));
        }
        let mut seen = vec![false; n];
        for (name, split) in [
            ("train", &self.splits.train),
            ("val", &self.splits.val),
            ("test", &self.splits.test),
        ] {
            for &i in split {
                if i >= n {
                    return Err(GrandError::DataInvariant(format!(
                        "{name} index {i} out of range (n={n})"
                    )));
                }
                if seen[i] {
                    return Err(GrandError::DataInvariant(format!(
                        "node {i} appears in more than one split"
                    )));
                }
                seen[i] = true;
            }
        }
        Ok(())
    }
}

fn parse_error(path: &Path, line: usize, msg: impl Into<String>) -> GrandError {
    GrandError::DataFormat { path: path.display().to_string(), line, msg: msg.into() }
}

/// Loads the canonical layout. Input features are row-normalized to unit l1
/// mass by default (`normalize = true`), the usual treatment for sparse
/// bag-of-words citation features.
pub fn load_dataset(dir: &Path, normalize: bool) -> Result<Dataset> {
    let edges_path = dir.join("edges.tsv");
    let text = std::fs::read_to_string(&edges_path)?;
    let mut edges = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split('\t');
        let a = parts
            .next()
            .and_then(|s| s.parse::<usize>().ok())
            .ok_or_else(|| parse_error(&edges_path, lineno + 1, "expected integer endpoint"))?;
        let b = parts
            .next()
            .and_then(|s| s.parse::<usize>().ok())
            .ok_or_else(|| parse_error(&edges_path, lineno + 1, "expected two tab-separated endpoints"))?;
        if parts.next().is_some() {
            return Err(parse_error(&edges_path, lineno + 1, "trailing fields"));
        }
        if a == b {
            return Err(parse_error(&edges_path, lineno + 1, format!("self-loop at node {a}")));
        }
        edges.push((a, b));
    }

    let features_path = dir.join("features.csv");
    let text = std::fs::read_to_string(&features_path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width = None;
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: std::result::Result<Vec<f64>, _> =
            line.split(',').map(|s| s.trim().parse::<f64>()).collect();
        let row = row.map_err(|e| parse_error(&features_path, lineno + 1, format!("{e}")))?;
        if let Some(w) = width {
            if row.len() != w {
                return Err(parse_error(
                    &features_path,
                    lineno + 1,
                    format!("row has {} columns, expected {w}", row.len()),
                ));
            }
        } else {
            width = Some(row.len());
        }
        rows.push(row);
    }
    let n = rows.len();
    let d = width.unwrap_or(0);
    let mut features = Array2::zeros((n, d));
    for (i, row) in rows.into_iter().enumerate() {
        for (j, v) in row.into_iter().enumerate() {
            features[(i, j)] = v;
        }
    }
    if normalize {
        for mut row in features.rows_mut() {
            let mass: f64 = row.iter().map(|v| v.abs()).sum();
            if mass > 0.0 {
                row.mapv_inplace(|v| v / mass);
            }
        }
    }

    let labels_path = dir.join("labels.txt");
    let text = std::fs::read_to_string(&labels_path)?;
    let mut labels = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let l = line
            .parse::<usize>()
            .map_err(|e| parse_error(&labels_path, lineno + 1, format!("{e}")))?;
        labels.push(l);
    }
    if labels.len() != n {
        return Err(GrandError::DataInvariant(format!(
            "{} labels for {n} feature rows",
            labels.len()
        )));
    }
    let classes = labels.iter().copied().max().map_or(0, |m| m + 1);

    let splits: Splits = serde_json::from_str(&std::fs::read_to_string(dir.join("splits.json"))?)?;

    let graph = Graph::from_edges(n, &edges)?;
    let data = Dataset { graph, features, labels, splits, classes };
    data.validate()?;
    Ok(data)
}

/// Writes the canonical layout: sorted deduplicated edges, shortest
/// round-trip float formatting.
pub fn save_dataset(data: &Dataset, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut edges = String::new();
    for &(i, j) in data.graph.edges() {
        edges.push_str(&format!("{i}\t{j}\n"));
    }
    std::fs::write(dir.join("edges.tsv"), edges)?;

    let mut features = String::new();
    for row in data.features.rows() {
        let cells: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        features.push_str(&cells.join(","));
        features.push('\n');
    }
    std::fs::write(dir.join("features.csv"), features)?;

    let mut labels = String::new();
    for l in &data.labels {
        labels.push_str(&format!("{l}\n"));
    }
    std::fs::write(dir.join("labels.txt"), labels)?;

    std::fs::write(dir.join("splits.json"), serde_json::to_string_pretty(&data.splits)?)?;
    Ok(())
}

/// Induced subgraph on the largest connected component, nodes reindexed in
/// original order; split membership is carried through the index map. Ties
/// between equal-sized components go to the one containing the lowest
/// original index.
pub fn largest_connected_component(data: &Dataset) -> Result<Dataset> {
    let (labels, count) = data.graph.components();
    if count <= 1 {
        return Ok(data.clone());
    }
    let mut sizes = vec![0usize; count];
    for &c in &labels {
        sizes[c] += 1;
    }
    // component ids are assigned in scan order, so the first maximal id
    // contains the lowest original index among ties
    let best = (0..count).max_by_key(|&c| (sizes[c], std::cmp::Reverse(c))).unwrap();

    let keep: Vec<usize> = (0..data.n()).filter(|&i| labels[i] == best).collect();
    let mut new_index = vec![usize::MAX; data.n()];
    for (new, &old) in keep.iter().enumerate() {
        new_index[old] = new;
    }

    let edges: Vec<(usize, usize)> = data
        .graph
        .edges()
        .iter()
        .filter(|&&(i, j)| labels[i] == best && labels[j] == best)
        .map(|&(i, j)| (new_index[i], new_index[j]))
        .collect();
    let weights: Vec<f64> = data
        .graph
        .edges()
        .iter()
        .zip(data.graph.weights())
        .filter(|(&(i, _), _)| labels[i] == best)
        .map(|(_, &w)| w)
        .collect();

    let mut features = Array2::zeros((keep.len(), data.d_in()));
    let mut node_labels = Vec::with_capacity(keep.len());
    for (new, &old) in keep.iter().enumerate() {
        features.row_mut(new).assign(&data.features.row(old));
        node_labels.push(data.labels[old]);
    }
    let remap = |split: &[usize]| -> Vec<usize> {
        split.iter().filter_map(|&i| (new_index[i] != usize::MAX).then(|| new_index[i])).collect()
    };
    let splits = Splits {
        train: remap(&data.splits.train),
        val: remap(&data.splits.val),
        test: remap(&data.splits.test),
    };
    let graph = Graph::from_weighted_edges(keep.len(), &edges, &weights)?;
    let out = Dataset { graph, features, labels: node_labels, splits, classes: data.classes };
    out.validate()?;
    Ok(out)
}

/// Seeded split: `per_class_train` per class, then up to `val_cap` validation
/// nodes, remainder test.
pub fn random_splits(
    labels: &[usize],
    classes: usize,
    per_class_train: usize,
    val_cap: usize,
    seed: u64,
) -> Splits {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = labels.len();
    let mut order: Vec<usize> = (0..n).collect();
    // Fisher-Yates
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
    let mut train = Vec::new();
    let mut taken = vec![0usize; classes];
    let mut rest = Vec::new();
    for &i in &order {
        if taken[labels[i]] < per_class_train {
            taken[labels[i]] += 1;
            train.push(i);
        } else {
            rest.push(i);
        }
    }
    let val_count = val_cap.min(rest.len() / 2);
    let val = rest[..val_count].to_vec();
    let test = rest[val_count..].to_vec();
    let mut splits = Splits { train, val, test };
    splits.train.sort_unstable();
    splits.val.sort_unstable();
    splits.test.sort_unstable();
    splits
}

/// Stochastic block model with block-indicator features plus Gaussian
/// noise. Generation is deterministic per seed; if any node ends up
/// isolated or a block internally disconnected, a derived seed retries, up
/// to ten times.
pub fn synth_sbm(
    blocks: usize,
    n: usize,
    p_in: f64,
    p_out: f64,
    feat_noise: f64,
    seed: u64,
) -> Result<Dataset> {
    if blocks == 0 || n < blocks {
        return Err(GrandError::Generator(format!("cannot split {n} nodes into {blocks} blocks")));
    }
    if !(p_in > p_out) {
        return Err(GrandError::Generator(format!(
            "within-block density must exceed cross-block (got {p_in} <= {p_out})"
        )));
    }
    for attempt in 0..10 {
        let attempt_seed = seed.wrapping_add(attempt as u64 * 0x9e37_79b9_7f4a_7c15);
        if let Some(data) = try_sbm(blocks, n, p_in, p_out, feat_noise, attempt_seed, seed)? {
            return Ok(data);
        }
    }
    Err(GrandError::Generator(
        "generator produced a badly disconnected graph ten times in a row".into(),
    ))
}

fn try_sbm(
    blocks: usize,
    n: usize,
    p_in: f64,
    p_out: f64,
    feat_noise: f64,
    attempt_seed: u64,
    split_seed: u64,
) -> Result<Option<Dataset>> {
    let mut rng = ChaCha8Rng::seed_from_u64(attempt_seed);
    let labels: Vec<usize> = (0..n).map(|i| i * blocks / n).collect();
    let mut edges = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            let p = if labels[i] == labels[j] { p_in } else { p_out };
            if rng.gen_range(0.0..1.0) < p {
                edges.push((i, j));
            }
        }
    }
    let graph = Graph::from_edges(n, &edges)?;

    // block-internal connectivity check (cross-block edges may be absent)
    for b in 0..blocks {
        let members: Vec<usize> = (0..n).filter(|&i| labels[i] == b).collect();
        let index_of: std::collections::HashMap<usize, usize> =
            members.iter().enumerate().map(|(k, &v)| (v, k)).collect();
        let block_edges: Vec<(usize, usize)> = edges
            .iter()
            .filter(|&&(i, j)| labels[i] == b && labels[j] == b)
            .map(|&(i, j)| (index_of[&i], index_of[&j]))
            .collect();
        let block_graph = Graph::from_edges(members.len(), &block_edges)?;
        if !block_graph.is_connected() {
            return Ok(None);
        }
    }
    if p_out > 0.0 && !graph.is_connected() {
        return Ok(None);
    }

    // standard normal via Box-Muller, seeded
    let mut gauss = move || {
        let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
        let u2: f64 = rng.gen_range(0.0..1.0);
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    };
    let mut features = Array2::zeros((n, blocks));
    for i in 0..n {
        for c in 0..blocks {
            features[(i, c)] = if labels[i] == c { 1.0 } else { 0.0 } + feat_noise * gauss();
        }
    }

    let classes = blocks;
    let splits = random_splits(&labels, classes, 20, 500, split_seed);
    let data = Dataset { graph, features, labels, splits, classes };
    data.validate()?;
    Ok(Some(data))
}

/// Newman modularity of the planted partition.
pub fn modularity(graph: &Graph, labels: &[usize]) -> f64 {
    let m2: f64 = 2.0 * graph.edge_count() as f64;
    if m2 == 0.0 {
        return 0.0;
    }
    let mut within = 0.0;
    for &(i, j) in graph.edges() {
        if labels[i] == labels[j] {
            within += 1.0;
        }
    }
    let classes = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut degree_mass = vec![0.0; classes];
    for i in 0..graph.n() {
        degree_mass[labels[i]] += graph.degree(i) as f64;
    }
    let within_frac = 2.0 * within / m2;
    let expected: f64 = degree_mass.iter().map(|d| (d / m2) * (d / m2)).sum();
    within_frac - expected
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GridShape {
    /// Every pixel is background; a single-class degenerate image.
    Background,
    /// A centered disk of the given radius fraction (of the min dimension).
    Disk { radius_frac: f64 },
}

/// Four-connected grid graph over a `width x height` image; binary labels
/// (figure vs background), one intensity feature channel, and a 50% random
/// training mask. Validation takes half the remaining pixels.
pub fn synth_grid_image(width: usize, height: usize, shape: GridShape, seed: u64) -> Result<Dataset> {
    if width < 2 || height < 2 {
        return Err(GrandError::Generator("grid dimensions must be at least 2x2".into()));
    }
    let n = width * height;
    let at = |x: usize, y: usize| y * width + x;
    let mut edges = Vec::new();
    for y in 0..height {
        for x in 0..width {
            if x + 1 < width {
                edges.push((at(x, y), at(x + 1, y)));
            }
            if y + 1 < height {
                edges.push((at(x, y), at(x, y + 1)));
            }
        }
    }
    let graph = Graph::from_edges(n, &edges)?;

    let mut labels = vec![0usize; n];
    if let GridShape::Disk { radius_frac } = shape {
        let cx = (width as f64 - 1.0) / 2.0;
        let cy = (height as f64 - 1.0) / 2.0;
        let r = radius_frac * (width.min(height) as f64) / 2.0;
        for y in 0..height {
            for x in 0..width {
                let dx = x as f64 - cx;
                let dy = y as f64 - cy;
                if (dx * dx + dy * dy).sqrt() <= r {
                    labels[at(x, y)] = 1;
                }
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut features = Array2::zeros((n, 1));
    for i in 0..n {
        let base = if labels[i] == 1 { 0.85 } else { 0.15 };
        features[(i, 0)] = base + rng.gen_range(-0.1..0.1);
    }

    // 50% random training mask; half the rest validates
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
    let train_count = n / 2;
    let mut train = order[..train_count].to_vec();
    let rest = &order[train_count..];
    let mut val = rest[..rest.len() / 2].to_vec();
    let mut test = rest[rest.len() / 2..].to_vec();
    train.sort_unstable();
    val.sort_unstable();
    test.sort_unstable();

    let classes = 2; // binary labels even when one class is absent
    let data = Dataset {
        graph,
        features,
        labels,
        splits: Splits { train, val, test },
        classes,
    };
    data.validate()?;
    Ok(data)
}

/// Byte-for-byte canonical form check helper: loads, saves, and compares.
pub fn roundtrip_stable(dir: &Path, scratch: &Path) -> Result<bool> {
    let data = load_dataset(dir, false)?;
    save_dataset(&data, scratch)?;
    let a = std::fs::read(dir.join("edges.tsv"))?;
    let b = std::fs::read(scratch.join("edges.tsv"))?;
    Ok(a == b)
}

/// Nodes of each class present in a split (used by tests and reporting).
pub fn classes_in(split: &[usize], labels: &[usize]) -> BTreeSet<usize> {
    split.iter().map(|&i| labels[i]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_fixture(dir: &Path) {
        std::fs::create_dir_all(dir).unwrap();
        std::fs::write(dir.join("edges.tsv"), "0\t1\n1\t0\n").unwrap();
        std::fs::write(dir.join("features.csv"), "1.0,2.0\n0.5,0.25\n").unwrap();
        std::fs::write(dir.join("labels.txt"), "0\n1\n").unwrap();
        std::fs::write(dir.join("splits.json"), r#"{"train":[0],"val":[],"test":[1]}"#).unwrap();
    }

    #[test]
    fn minimal_fixture_loads_and_dedups() {
        let dir = tempfile::tempdir().unwrap();
        write_fixture(dir.path());
        let data = load_dataset(dir.path(), false).unwrap();
        assert_eq!(data.n(), 2);
        assert_eq!(data.graph.edge_count(), 1);
        assert_eq!(data.classes, 2);
    }

    #[test]
    fn malformed_line_reports_position() {
        let dir = tempfile::tempdir().unwrap();
        write_fixture(dir.path());
        std::fs::write(dir.path().join("edges.tsv"), "0\t1\nbroken\n").unwrap();
        let err = load_dataset(dir.path(), false).unwrap_err();
        match err {
            GrandError::DataFormat { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn split_overlap_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write_fixture(dir.path());
        std::fs::write(dir.path().join("splits.json"), r#"{"train":[0],"val":[0],"test":[1]}"#)
            .unwrap();
        assert!(load_dataset(dir.path(), false).is_err());
    }

    #[test]
    fn row_normalization_unit_mass() {
        let dir = tempfile::tempdir().unwrap();
        write_fixture(dir.path());
        let data = load_dataset(dir.path(), true).unwrap();
        for row in data.features.rows() {
            let mass: f64 = row.iter().map(|v| v.abs()).sum();
            assert!((mass - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn save_load_roundtrip_bytes() {
        let dir = tempfile::tempdir().unwrap();
        write_fixture(dir.path());
        // canonicalize once, then round-trip must be byte-stable
        let data = load_dataset(dir.path(), false).unwrap();
        let canon = tempfile::tempdir().unwrap();
        save_dataset(&data, canon.path()).unwrap();
        let scratch = tempfile::tempdir().unwrap();
        assert!(roundtrip_stable(canon.path(), scratch.path()).unwrap());
        let reloaded = load_dataset(canon.path(), false).unwrap();
        assert_eq!(reloaded.features, data.features);
    }

    #[test]
    fn lcc_identity_on_connected() {
        let dir = tempfile::tempdir().unwrap();
        write_fixture(dir.path());
        let data = load_dataset(dir.path(), false).unwrap();
        let lcc = largest_connected_component(&data).unwrap();
        assert_eq!(lcc.n(), data.n());
        assert_eq!(lcc.graph.edge_count(), data.graph.edge_count());
    }

    #[test]
    fn lcc_picks_larger_component_and_remaps_splits() {
        let graph = Graph::from_edges(5, &[(0, 1), (1, 2), (3, 4)]).unwrap();
        let data = Dataset {
            graph,
            features: Array2::from_shape_fn((5, 2), |(i, j)| (i * 2 + j) as f64),
            labels: vec![0, 1, 0, 1, 0],
            splits: Splits { train: vec![0, 3], val: vec![1], test: vec![2, 4] },
            classes: 2,
        };
        let lcc = largest_connected_component(&data).unwrap();
        assert_eq!(lcc.n(), 3);
        assert_eq!(lcc.splits.train, vec![0]);
        assert_eq!(lcc.splits.val, vec![1]);
        assert_eq!(lcc.splits.test, vec![2]);
        assert_eq!(lcc.features.row(2).to_vec(), vec![4.0, 5.0]);
    }

    #[test]
    fn lcc_tie_goes_to_lowest_index() {
        let graph = Graph::from_edges(4, &[(0, 1), (2, 3)]).unwrap();
        let data = Dataset {
            graph,
            features: Array2::zeros((4, 1)),
            labels: vec![0, 0, 1, 1],
            splits: Splits { train: vec![0, 2], val: vec![], test: vec![1, 3] },
            classes: 2,
        };
        let lcc = largest_connected_component(&data).unwrap();
        assert_eq!(lcc.n(), 2);
        // the surviving component contains original node 0
        assert_eq!(lcc.labels, vec![0, 0]);
    }

    #[test]
    fn sbm_deterministic_per_seed() {
        let a = synth_sbm(2, 60, 0.2, 0.02, 0.1, 5).unwrap();
        let b = synth_sbm(2, 60, 0.2, 0.02, 0.1, 5).unwrap();
        assert_eq!(a.graph.edges(), b.graph.edges());
        assert_eq!(a.features, b.features);
        assert_eq!(a.splits.train, b.splits.train);
    }

    #[test]
    fn sbm_zero_crosstalk_components_align_with_blocks() {
        let data = synth_sbm(2, 60, 0.25, 0.0, 0.1, 3).unwrap();
        let (comp, count) = data.graph.components();
        assert_eq!(count, 2);
        for i in 0..data.n() {
            for j in 0..data.n() {
                if data.labels[i] == data.labels[j] {
                    assert_eq!(comp[i], comp[j]);
                }
            }
        }
    }

    #[test]
    fn sbm_planted_partition_modular() {
        let data = synth_sbm(2, 200, 0.1, 0.01, 0.1, 7).unwrap();
        assert!(modularity(&data.graph, &data.labels) > 0.3);
    }

    #[test]
    fn grid_two_by_two() {
        let data = synth_grid_image(2, 2, GridShape::Background, 1).unwrap();
        assert_eq!(data.n(), 4);
        assert_eq!(data.graph.edge_count(), 4);
    }

    #[test]
    fn grid_all_background_still_valid() {
        let data = synth_grid_image(4, 4, GridShape::Background, 2).unwrap();
        assert!(data.labels.iter().all(|&l| l == 0));
        assert_eq!(data.classes, 2);
        data.validate().unwrap();
    }

    #[test]
    fn grid_disk_has_two_classes() {
        let data = synth_grid_image(8, 8, GridShape::Disk { radius_frac: 0.6 }, 3).unwrap();
        let figure = data.labels.iter().filter(|&&l| l == 1).count();
        assert!(figure > 0 && figure < data.n());
        // training mask is half the pixels
        assert_eq!(data.splits.train.len(), data.n() / 2);
    }
}
