//! Weisfeiler-Lehman subtree features and kernel matrices over labeled call
//! graphs.
//!
//! Labels are interned in a [`LabelDictionary`]. Base labels and per-iteration
//! signatures live in separate key namespaces, so every id belongs to exactly
//! one iteration and feature vectors can be accumulated in a single sparse map.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::cluster::LabeledGraph;

#[derive(Debug, thiserror::Error)]
pub enum WlError {
    #[error("label id {0} is not in the dictionary")]
    UnknownLabel(u32),
    #[error("invalid WL configuration: {0}")]
    InvalidConfig(String),
    #[error("kernel diagonal entry {0} is not strictly positive")]
    ZeroDiagonal(usize),
    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WlConfig {
    pub h: usize,
    /// One weight per iteration `0..=h`.
    pub alpha: Vec<f64>,
}

impl Default for WlConfig {
    fn default() -> Self {
        Self::uniform(3)
    }
}

impl WlConfig {
    pub fn uniform(h: usize) -> Self {
        Self {
            h,
            alpha: vec![1.0; h + 1],
        }
    }

    pub fn validate(&self) -> Result<(), WlError> {
        if self.alpha.len() != self.h + 1 {
            return Err(WlError::InvalidConfig(format!(
                "alpha has {} weights, h = {} needs {}",
                self.alpha.len(),
                self.h,
                self.h + 1
            )));
        }
        if let Some(a) = self.alpha.iter().find(|a| !(a.is_finite() && **a >= 0.0)) {
            return Err(WlError::InvalidConfig(format!(
                "alpha weight {a} must be finite and >= 0"
            )));
        }
        Ok(())
    }

    pub fn fingerprint(&self) -> String {
        crate::rng::sha256_hex(
            serde_json::to_string(self)
                .expect("config serializes")
                .as_bytes(),
        )
    }
}

/// Injective, insertion-ordered map from label keys to dense ids.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabelDictionary {
    keys: Vec<String>,
    index: HashMap<String, u32>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DictionaryFile {
    schema: String,
    keys: Vec<String>,
}

const DICT_SCHEMA: &str = "wldict/1";

fn base_key(label: &str) -> String {
    format!("L:{label}")
}

fn signature_key(iteration: usize, own: u32, neighbors: &[u32]) -> String {
    let mut key = format!("W{iteration}:{own}|");
    for (i, n) in neighbors.iter().enumerate() {
        if i > 0 {
            key.push(',');
        }
        key.push_str(&n.to_string());
    }
    key
}

impl LabelDictionary {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn key(&self, id: u32) -> Option<&str> {
        self.keys.get(id as usize).map(String::as_str)
    }

    pub fn get(&self, key: &str) -> Option<u32> {
        self.index.get(key).copied()
    }

    pub fn intern(&mut self, key: String) -> u32 {
        if let Some(&id) = self.index.get(&key) {
            return id;
        }
        let id = self.keys.len() as u32;
        self.index.insert(key.clone(), id);
        self.keys.push(key);
        id
    }

    pub fn intern_base(&mut self, label: &str) -> u32 {
        self.intern(base_key(label))
    }

    pub fn base_id(&self, label: &str) -> Option<u32> {
        self.get(&base_key(label))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&DictionaryFile {
            schema: DICT_SCHEMA.into(),
            keys: self.keys.clone(),
        })
        .expect("dictionary serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, WlError> {
        let file: DictionaryFile = serde_json::from_str(text)?;
        if file.schema != DICT_SCHEMA {
            return Err(WlError::InvalidConfig(format!(
                "unsupported dictionary schema `{}`",
                file.schema
            )));
        }
        let mut dict = Self::new();
        for k in file.keys {
            let before = dict.len();
            dict.intern(k);
            if dict.len() == before {
                return Err(WlError::InvalidConfig("duplicate dictionary key".into()));
            }
        }
        Ok(dict)
    }
}

/// Dictionary access during feature extraction. `Frozen` never mutates the
/// shared dictionary; unseen keys get graph-local ids past its end.
enum Interner<'a> {
    Grow(&'a mut LabelDictionary),
    Frozen {
        dict: &'a LabelDictionary,
        overlay: HashMap<String, u32>,
    },
}

impl Interner<'_> {
    fn intern(&mut self, key: String) -> u32 {
        match self {
            Interner::Grow(d) => d.intern(key),
            Interner::Frozen { dict, overlay } => {
                if let Some(id) = dict.get(&key) {
                    return id;
                }
                let next = (dict.len() + overlay.len()) as u32;
                *overlay.entry(key).or_insert(next)
            }
        }
    }

    fn len(&self) -> usize {
        match self {
            Interner::Grow(d) => d.len(),
            Interner::Frozen { dict, overlay } => dict.len() + overlay.len(),
        }
    }
}

fn relabel_with(
    adjacency: &[Vec<u32>],
    labels: &[u32],
    iteration: usize,
    interner: &mut Interner,
) -> Result<Vec<u32>, WlError> {
    let known = interner.len() as u32;
    if let Some(&bad) = labels.iter().find(|&&l| l >= known) {
        return Err(WlError::UnknownLabel(bad));
    }
    let mut scratch = Vec::new();
    let mut out = Vec::with_capacity(labels.len());
    for (v, nbrs) in adjacency.iter().enumerate() {
        scratch.clear();
        scratch.extend(nbrs.iter().map(|&u| labels[u as usize]));
        scratch.sort_unstable();
        out.push(interner.intern(signature_key(iteration, labels[v], &scratch)));
    }
    Ok(out)
}

/// One WL iteration: each vertex's new label is the id of
/// `(own label, sorted multiset of neighbor labels)`. `iteration` is the
/// index of the produced labeling (1 for the first relabel).
pub fn wl_relabel(
    adjacency: &[Vec<u32>],
    labels: &[u32],
    iteration: usize,
    dict: &mut LabelDictionary,
) -> Result<Vec<u32>, WlError> {
    if adjacency.len() != labels.len() {
        return Err(WlError::DimensionMismatch {
            expected: adjacency.len(),
            found: labels.len(),
        });
    }
    relabel_with(adjacency, labels, iteration, &mut Interner::Grow(dict))
}

/// Sparse WL feature vector: sorted `(label id, √α_i · count)` pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WlFeatureVector {
    pub graph_id: String,
    pub entries: Vec<(u32, f64)>,
    /// Squared norm of labels absent from a frozen dictionary. They match
    /// nothing in other graphs but still count toward the self-kernel.
    #[serde(default, skip_serializing_if = "is_zero")]
    pub unseen_norm_sq: f64,
}

fn is_zero(x: &f64) -> bool {
    *x == 0.0
}

impl WlFeatureVector {
    pub fn dot(&self, other: &WlFeatureVector) -> f64 {
        sparse_dot(&self.entries, &other.entries)
    }

    pub fn self_kernel(&self) -> f64 {
        self.entries.iter().map(|(_, v)| v * v).sum::<f64>() + self.unseen_norm_sq
    }

    pub fn squared_distance(&self, other: &WlFeatureVector) -> f64 {
        (self.self_kernel() + other.self_kernel() - 2.0 * self.dot(other)).max(0.0)
    }
}

fn sparse_dot(a: &[(u32, f64)], b: &[(u32, f64)]) -> f64 {
    let (mut i, mut j, mut acc) = (0, 0, 0.0);
    while i < a.len() && j < b.len() {
        match a[i].0.cmp(&b[j].0) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                acc += a[i].1 * b[j].1;
                i += 1;
                j += 1;
            }
        }
    }
    acc
}

/// Label ids of every vertex at iterations `0..=h`.
fn label_sequence_with(
    g: &LabeledGraph,
    h: usize,
    interner: &mut Interner,
) -> Result<Vec<Vec<u32>>, WlError> {
    let adjacency = g.topology().undirected_adjacency();
    let base: Vec<u32> = g
        .label_list()
        .into_iter()
        .map(|l| interner.intern(base_key(l)))
        .collect();
    let mut seq = vec![base];
    for i in 1..=h {
        let next = relabel_with(&adjacency, &seq[i - 1], i, interner)?;
        seq.push(next);
    }
    Ok(seq)
}

pub fn wl_label_sequence(
    g: &LabeledGraph,
    h: usize,
    dict: &mut LabelDictionary,
) -> Result<Vec<Vec<u32>>, WlError> {
    label_sequence_with(g, h, &mut Interner::Grow(dict))
}

fn features_from_sequence(
    graph_id: &str,
    seq: &[Vec<u32>],
    cfg: &WlConfig,
    known: usize,
) -> WlFeatureVector {
    let mut counts: BTreeMap<u32, (usize, u64)> = BTreeMap::new();
    for (i, labels) in seq.iter().enumerate() {
        for &l in labels {
            counts.entry(l).or_insert((i, 0)).1 += 1;
        }
    }
    let mut entries = Vec::with_capacity(counts.len());
    let mut unseen = 0.0;
    for (id, (iteration, c)) in counts {
        let alpha = cfg.alpha[iteration];
        if alpha == 0.0 {
            continue;
        }
        let v = if alpha == 1.0 {
            c as f64
        } else {
            alpha.sqrt() * c as f64
        };
        if (id as usize) < known {
            entries.push((id, v));
        } else {
            unseen += v * v;
        }
    }
    WlFeatureVector {
        graph_id: graph_id.to_string(),
        entries,
        unseen_norm_sq: unseen,
    }
}

/// Features of one graph, extending the dictionary with new labels.
pub fn wl_features(
    g: &LabeledGraph,
    cfg: &WlConfig,
    dict: &mut LabelDictionary,
) -> Result<WlFeatureVector, WlError> {
    cfg.validate()?;
    let seq = label_sequence_with(g, cfg.h, &mut Interner::Grow(dict))?;
    Ok(features_from_sequence(&g.file_id, &seq, cfg, usize::MAX))
}

/// Features against a frozen dictionary; labels it lacks are kept out of
/// the sparse entries.
pub fn wl_features_frozen(
    g: &LabeledGraph,
    cfg: &WlConfig,
    dict: &LabelDictionary,
) -> Result<WlFeatureVector, WlError> {
    cfg.validate()?;
    let mut interner = Interner::Frozen {
        dict,
        overlay: HashMap::new(),
    };
    let seq = label_sequence_with(g, cfg.h, &mut interner)?;
    Ok(features_from_sequence(&g.file_id, &seq, cfg, dict.len()))
}

/// Features for a corpus. Dictionary insertion follows graph order, then
/// vertex-id order, so ids are reproducible.
pub fn corpus_features(
    graphs: &[LabeledGraph],
    cfg: &WlConfig,
    dict: &mut LabelDictionary,
) -> Result<Vec<WlFeatureVector>, WlError> {
    graphs.iter().map(|g| wl_features(g, cfg, dict)).collect()
}

pub fn kernel(
    g: &LabeledGraph,
    g2: &LabeledGraph,
    cfg: &WlConfig,
    dict: &mut LabelDictionary,
) -> Result<f64, WlError> {
    let a = wl_features(g, cfg, dict)?;
    let b = wl_features(g2, cfg, dict)?;
    Ok(a.dot(&b))
}

/// Dense symmetric kernel matrix with the graph id of each row.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelMatrix {
    pub ids: Vec<String>,
    /// Row-major `n × n`.
    pub data: Vec<f64>,
}

impl KernelMatrix {
    pub fn from_data(ids: Vec<String>, data: Vec<f64>) -> Result<Self, WlError> {
        if data.len() != ids.len() * ids.len() {
            return Err(WlError::DimensionMismatch {
                expected: ids.len() * ids.len(),
                found: data.len(),
            });
        }
        Ok(Self { ids, data })
    }

    pub fn n(&self) -> usize {
        self.ids.len()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n() + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let n = self.n();
        &self.data[i * n..(i + 1) * n]
    }

    pub fn trace(&self) -> f64 {
        (0..self.n()).map(|i| self.get(i, i)).sum()
    }

    pub fn is_bit_symmetric(&self) -> bool {
        let n = self.n();
        (0..n).all(|i| (i + 1..n).all(|j| self.get(i, j).to_bits() == self.get(j, i).to_bits()))
    }

    /// Smallest eigenvalue, via a symmetric eigendecomposition.
    pub fn min_eigenvalue(&self) -> f64 {
        let n = self.n();
        if n == 0 {
            return 0.0;
        }
        let m = nalgebra::DMatrix::from_row_slice(n, n, &self.data);
        nalgebra::SymmetricEigen::new(m).eigenvalues.min()
    }

    /// PSD within `rel_tol · trace`.
    pub fn is_psd(&self, rel_tol: f64) -> bool {
        self.min_eigenvalue() >= -rel_tol * self.trace().abs()
    }

    /// Sub-matrix over the given rows and columns.
    pub fn select(&self, rows: &[usize], cols: &[usize]) -> Vec<Vec<f64>> {
        rows.iter()
            .map(|&r| cols.iter().map(|&c| self.get(r, c)).collect())
            .collect()
    }

    /// Writes the matrix as little-endian row-major f64 and a JSON index
    /// sidecar naming each row.
    pub fn write_binary(
        &self,
        matrix: &mut impl Write,
        index: &mut impl Write,
    ) -> Result<(), WlError> {
        let mut buf = Vec::with_capacity(self.data.len() * 8);
        for v in &self.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        matrix.write_all(&buf)?;
        serde_json::to_writer(
            &mut *index,
            &serde_json::json!({ "n": self.n(), "ids": self.ids }),
        )?;
        Ok(())
    }

    pub fn read_binary(matrix: &[u8], index: &str) -> Result<Self, WlError> {
        #[derive(Deserialize)]
        struct Index {
            n: usize,
            ids: Vec<String>,
        }
        let idx: Index = serde_json::from_str(index)?;
        if idx.ids.len() != idx.n || matrix.len() != idx.n * idx.n * 8 {
            return Err(WlError::DimensionMismatch {
                expected: idx.n * idx.n * 8,
                found: matrix.len(),
            });
        }
        let data = matrix
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        Self::from_data(idx.ids, data)
    }
}

/// Gram matrix of `features`. Only the upper triangle is computed; the lower
/// one is a copy, so the result is symmetric to the bit.
pub fn kernel_matrix(features: &[WlFeatureVector]) -> KernelMatrix {
    let n = features.len();
    let rows = crate::par::map_range(n, |i| {
        (i..n)
            .map(|j| {
                if i == j {
                    features[i].self_kernel()
                } else {
                    features[i].dot(&features[j])
                }
            })
            .collect::<Vec<f64>>()
    });
    let mut data = vec![0.0; n * n];
    for (i, upper) in rows.into_iter().enumerate() {
        for (off, v) in upper.into_iter().enumerate() {
            let j = i + off;
            data[i * n + j] = v;
            data[j * n + i] = v;
        }
    }
    KernelMatrix {
        ids: features.iter().map(|f| f.graph_id.clone()).collect(),
        data,
    }
}

/// Kernel rows of `queries` against `reference` (one row per query).
pub fn kernel_rows(queries: &[WlFeatureVector], reference: &[WlFeatureVector]) -> Vec<Vec<f64>> {
    crate::par::map(queries, |q| reference.iter().map(|r| q.dot(r)).collect())
}

/// `K[i][j] / √(K[i][i]·K[j][j])`.
pub fn normalize_kernel(k: &KernelMatrix) -> Result<KernelMatrix, WlError> {
    let n = k.n();
    let diag: Vec<f64> = (0..n).map(|i| k.get(i, i)).collect();
    if let Some(i) = diag.iter().position(|&d| !(d > 0.0)) {
        return Err(WlError::ZeroDiagonal(i));
    }
    let mut data = vec![0.0; n * n];
    for i in 0..n {
        data[i * n + i] = 1.0;
        for j in i + 1..n {
            let v = k.get(i, j) / (diag[i] * diag[j]).sqrt();
            data[i * n + j] = v;
            data[j * n + i] = v;
        }
    }
    Ok(KernelMatrix {
        ids: k.ids.clone(),
        data,
    })
}

/// Normalizes kernel rows of queries against a reference set, given the
/// queries' self-kernels and the reference diagonal.
pub fn normalize_rows(rows: &mut [Vec<f64>], query_diag: &[f64], reference_diag: &[f64]) {
    for (row, &dq) in rows.iter_mut().zip(query_diag) {
        for (v, &dr) in row.iter_mut().zip(reference_diag) {
            let denom = (dq * dr).sqrt();
            *v = if denom > 0.0 { *v / denom } else { 0.0 };
        }
    }
}

/// `exp(-γ‖φ(G) − φ(G')‖²)` over WL features.
pub fn rbf_kernel_matrix(features: &[WlFeatureVector], gamma: f64) -> KernelMatrix {
    let lin = kernel_matrix(features);
    let n = lin.n();
    let mut data = vec![0.0; n * n];
    for i in 0..n {
        data[i * n + i] = 1.0;
        for j in i + 1..n {
            let d2 = (lin.get(i, i) + lin.get(j, j) - 2.0 * lin.get(i, j)).max(0.0);
            let v = (-gamma * d2).exp();
            data[i * n + j] = v;
            data[j * n + i] = v;
        }
    }
    KernelMatrix { ids: lin.ids, data }
}

pub fn rbf_rows(
    queries: &[WlFeatureVector],
    reference: &[WlFeatureVector],
    gamma: f64,
) -> Vec<Vec<f64>> {
    crate::par::map(queries, |q| {
        reference
            .iter()
            .map(|r| (-gamma * q.squared_distance(r)).exp())
            .collect()
    })
}

pub fn write_features_jsonl(
    features: &[WlFeatureVector],
    out: &mut impl Write,
) -> Result<(), WlError> {
    for f in features {
        serde_json::to_writer(&mut *out, f)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_features_jsonl(text: &str) -> Result<Vec<WlFeatureVector>, WlError> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(WlError::from))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    pub(crate) fn graph(labels: &[&str], edges: &[(u32, u32)]) -> LabeledGraph {
        LabeledGraph::from_labels("g", labels.iter().map(|s| s.to_string()).collect(), edges)
    }

    fn feats(g: &LabeledGraph, h: usize) -> Vec<(String, f64)> {
        let mut d = LabelDictionary::new();
        let f = wl_features(g, &WlConfig::uniform(h), &mut d).unwrap();
        f.entries
            .iter()
            .map(|&(id, v)| (d.key(id).unwrap().to_string(), v))
            .collect()
    }

    #[test]
    fn triangle_shares_one_label() {
        let g = graph(&["a", "a", "a"], &[(0, 1), (1, 2), (2, 0)]);
        let mut d = LabelDictionary::new();
        let seq = wl_label_sequence(&g, 1, &mut d).unwrap();
        assert!(seq[1].iter().all(|&l| l == seq[1][0]));
    }

    #[test]
    fn path_endpoints_match() {
        let g = graph(&["a", "b", "a"], &[(0, 1), (1, 2)]);
        let mut d = LabelDictionary::new();
        let seq = wl_label_sequence(&g, 1, &mut d).unwrap();
        assert_eq!(seq[1][0], seq[1][2]);
        assert_ne!(seq[1][0], seq[1][1]);
        let a = d.base_id("a").unwrap();
        let b = d.base_id("b").unwrap();
        assert_eq!(d.key(seq[1][0]).unwrap(), format!("W1:{a}|{b}"));
        assert_eq!(d.key(seq[1][1]).unwrap(), format!("W1:{b}|{a},{a}"));
    }

    #[test]
    fn isolated_vertex_signature() {
        let g = graph(&["x"], &[]);
        let mut d = LabelDictionary::new();
        let seq = wl_label_sequence(&g, 1, &mut d).unwrap();
        assert_eq!(d.key(seq[1][0]).unwrap(), "W1:0|");
    }

    #[test]
    fn self_loop_counts_vertex_as_neighbor() {
        let g = graph(&["x"], &[(0, 0)]);
        let mut d = LabelDictionary::new();
        let seq = wl_label_sequence(&g, 1, &mut d).unwrap();
        assert_eq!(d.key(seq[1][0]).unwrap(), "W1:0|0");
    }

    #[test]
    fn h0_counts() {
        let g = graph(&["a", "a", "b"], &[]);
        assert_eq!(feats(&g, 0), vec![("L:a".into(), 2.0), ("L:b".into(), 1.0)]);
    }

    #[test]
    fn single_vertex_four_iterations() {
        let f = feats(&graph(&["z"], &[]), 3);
        assert_eq!(f.len(), 4);
        assert!(f.iter().all(|(_, c)| *c == 1.0));
    }

    #[test]
    fn disjoint_alphabets_h0() {
        let mut d = LabelDictionary::new();
        let g1 = graph(&["a", "b"], &[(0, 1)]);
        let g2 = graph(&["c", "d"], &[(0, 1)]);
        assert_eq!(
            kernel(&g1, &g2, &WlConfig::uniform(0), &mut d).unwrap(),
            0.0
        );
    }

    #[test]
    fn similar_topology_scores_higher() {
        let edges = [(0, 1), (0, 2), (1, 3), (2, 4), (3, 5)];
        let g0 = graph(&["a", "b", "b", "c", "c", "d"], &edges);
        let g1 = graph(&["a", "b", "b", "c", "c", "e"], &edges);
        let g2 = graph(
            &["a", "b", "b", "c", "c", "d"],
            &[(0, 1), (0, 2), (0, 3), (0, 4), (0, 5)],
        );
        let mut d = LabelDictionary::new();
        let cfg = WlConfig::default();
        let k01 = kernel(&g0, &g1, &cfg, &mut d).unwrap();
        let k02 = kernel(&g0, &g2, &cfg, &mut d).unwrap();
        assert!(k01 > k02, "{k01} vs {k02}");
    }

    #[test]
    fn alpha_weights_each_iteration() {
        let g = graph(&["a", "b", "a"], &[(0, 1), (1, 2)]);
        let cfg = WlConfig {
            h: 1,
            alpha: vec![2.0, 0.5],
        };
        let mut d = LabelDictionary::new();
        let f = wl_features(&g, &cfg, &mut d).unwrap();
        // iteration 0: counts {a:2,b:1}; iteration 1: {end:2, mid:1}
        let expected = 2.0 * (4.0 + 1.0) + 0.5 * (4.0 + 1.0);
        assert!((f.self_kernel() - expected).abs() < 1e-12);
    }

    #[test]
    fn invalid_config() {
        let cfg = WlConfig {
            h: 2,
            alpha: vec![1.0],
        };
        assert!(matches!(cfg.validate(), Err(WlError::InvalidConfig(_))));
        let cfg = WlConfig {
            h: 0,
            alpha: vec![-1.0],
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn unknown_label_is_rejected() {
        let mut d = LabelDictionary::new();
        let r = wl_relabel(&[vec![]], &[7], 1, &mut d);
        assert!(matches!(r, Err(WlError::UnknownLabel(7))));
    }

    #[test]
    fn frozen_dictionary_isolates_unseen_labels() {
        let cfg = WlConfig::default();
        let train = graph(&["a", "b"], &[(0, 1)]);
        let test = graph(&["a", "q", "q"], &[(0, 1), (1, 2)]);
        let mut d = LabelDictionary::new();
        let ft = wl_features(&train, &cfg, &mut d).unwrap();
        let frozen_len = d.len();
        let fq = wl_features_frozen(&test, &cfg, &d).unwrap();
        assert_eq!(d.len(), frozen_len);
        let mut grown = d.clone();
        let fg = wl_features(&test, &cfg, &mut grown).unwrap();
        assert_eq!(fq.dot(&ft), fg.dot(&ft));
        assert_eq!(fq.self_kernel(), fg.self_kernel());
    }

    #[test]
    fn matrix_small_cases() {
        let mut d = LabelDictionary::new();
        let g = graph(&["a", "b"], &[(0, 1)]);
        let f = wl_features(&g, &WlConfig::default(), &mut d).unwrap();
        let k1 = kernel_matrix(std::slice::from_ref(&f));
        assert_eq!(k1.data, vec![f.self_kernel()]);
        let k2 = kernel_matrix(&[f.clone(), f.clone()]);
        assert!(k2.data.iter().all(|&v| v == k2.data[0]));
    }

    #[test]
    fn normalize_arithmetic() {
        let k = KernelMatrix::from_data(vec!["a".into(), "b".into()], vec![4.0, 2.0, 2.0, 4.0])
            .unwrap();
        assert_eq!(normalize_kernel(&k).unwrap().data, vec![1.0, 0.5, 0.5, 1.0]);
        let z = KernelMatrix::from_data(vec!["a".into()], vec![0.0]).unwrap();
        assert!(matches!(
            normalize_kernel(&z),
            Err(WlError::ZeroDiagonal(0))
        ));
    }

    #[test]
    fn binary_export_round_trip() {
        let k = KernelMatrix::from_data(vec!["x".into(), "y".into()], vec![1.0, 0.25, 0.25, 3.0])
            .unwrap();
        let (mut m, mut i) = (Vec::new(), Vec::new());
        k.write_binary(&mut m, &mut i).unwrap();
        let back = KernelMatrix::read_binary(&m, std::str::from_utf8(&i).unwrap()).unwrap();
        assert_eq!(back, k);
    }

    #[test]
    fn dictionary_and_features_json_round_trip() {
        let mut d = LabelDictionary::new();
        let g = graph(&["a", "b", "c"], &[(0, 1), (1, 2)]);
        let f = wl_features(&g, &WlConfig::default(), &mut d).unwrap();
        assert_eq!(LabelDictionary::from_json(&d.to_json()).unwrap(), d);
        let mut buf = Vec::new();
        write_features_jsonl(std::slice::from_ref(&f), &mut buf).unwrap();
        assert_eq!(
            read_features_jsonl(std::str::from_utf8(&buf).unwrap()).unwrap(),
            vec![f]
        );
    }

    fn arb_graph() -> impl Strategy<Value = (Vec<String>, Vec<(u32, u32)>)> {
        (1usize..10).prop_flat_map(|n| {
            (
                proptest::collection::vec(prop::sample::select(vec!["a", "b", "c"]), n)
                    .prop_map(|v| v.into_iter().map(String::from).collect()),
                proptest::collection::vec((0..n as u32, 0..n as u32), 0..2 * n),
            )
        })
    }

    proptest! {
        #[test]
        fn permutation_invariance((labels, edges) in arb_graph(), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            let n = labels.len();
            let mut perm: Vec<u32> = (0..n as u32).collect();
            perm.shuffle(&mut crate::rng::seeded(seed));
            let mut plabels = vec![String::new(); n];
            for (i, l) in labels.iter().enumerate() {
                plabels[perm[i] as usize] = l.clone();
            }
            let pedges: Vec<(u32, u32)> =
                edges.iter().map(|&(a, b)| (perm[a as usize], perm[b as usize])).collect();
            let refs: Vec<&str> = labels.iter().map(String::as_str).collect();
            let prefs: Vec<&str> = plabels.iter().map(String::as_str).collect();
            let mut d = LabelDictionary::new();
            let cfg = WlConfig::default();
            let a = wl_features(&graph(&refs, &edges), &cfg, &mut d).unwrap();
            let b = wl_features(&graph(&prefs, &pedges), &cfg, &mut d).unwrap();
            prop_assert_eq!(a.entries, b.entries);
        }

        #[test]
        fn conservation_and_refinement((labels, edges) in arb_graph()) {
            let refs: Vec<&str> = labels.iter().map(String::as_str).collect();
            let g = graph(&refs, &edges);
            let mut d = LabelDictionary::new();
            let seq = wl_label_sequence(&g, 3, &mut d).unwrap();
            for i in 1..seq.len() {
                prop_assert_eq!(seq[i].len(), g.len());
                for u in 0..g.len() {
                    for v in 0..g.len() {
                        if seq[i][u] == seq[i][v] {
                            prop_assert_eq!(seq[i - 1][u], seq[i - 1][v]);
                        }
                    }
                }
            }
        }

        #[test]
        fn kernel_values_are_nonnegative_integers(
            (l1, e1) in arb_graph(),
            (l2, e2) in arb_graph(),
        ) {
            let r1: Vec<&str> = l1.iter().map(String::as_str).collect();
            let r2: Vec<&str> = l2.iter().map(String::as_str).collect();
            let mut d = LabelDictionary::new();
            let k = kernel(&graph(&r1, &e1), &graph(&r2, &e2), &WlConfig::default(), &mut d).unwrap();
            prop_assert!(k >= 0.0 && k.fract() == 0.0);
        }
    }
}
