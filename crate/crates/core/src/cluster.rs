//! Mini-batch k-means over function embeddings and cluster-ID labeling of
//! call-graph vertices.

use std::collections::{BTreeMap, HashMap};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::callgraph::{CallGraph, Vertex, VertexKind};
use crate::container::{Container, ContainerError};
use crate::linalg::{squared_distance, Matrix};

#[derive(Debug, thiserror::Error)]
pub enum ClusterError {
    #[error("need at least {k} points, got {n}")]
    TooFewPoints { n: usize, k: usize },
    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("no embedding for internal vertex `{0}`")]
    MissingEmbedding(String),
    #[error("invalid clustering parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Container(#[from] ContainerError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KMeansParams {
    pub k: usize,
    pub batch_size: usize,
    pub iterations: usize,
    pub seed: u64,
    /// Scale embeddings to unit length before clustering and assignment.
    pub unit_normalize: bool,
}

impl Default for KMeansParams {
    fn default() -> Self {
        Self {
            k: 50,
            batch_size: 256,
            iterations: 300,
            seed: 0,
            unit_normalize: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansModel {
    /// `k × dim` centroids.
    pub centroids: Matrix,
    /// Points each centroid has absorbed; drives the `1/count` step size.
    pub counts: Vec<u64>,
    pub seed: u64,
    pub unit_normalize: bool,
}

const CONTAINER_KIND: &str = "kmeans";

fn unit(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter().map(|x| x / n).collect()
    } else {
        v.to_vec()
    }
}

/// Index of the nearest row of `centroids` (lowest index on ties) and the
/// squared distance to it.
fn nearest(centroids: &Matrix, x: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for c in 0..centroids.rows {
        let d = squared_distance(centroids.row(c), x);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

impl KMeansModel {
    pub fn k(&self) -> usize {
        self.centroids.rows
    }

    pub fn dim(&self) -> usize {
        self.centroids.cols
    }

    fn prepare<'a>(&self, x: &'a [f64]) -> std::borrow::Cow<'a, [f64]> {
        if self.unit_normalize {
            std::borrow::Cow::Owned(unit(x))
        } else {
            std::borrow::Cow::Borrowed(x)
        }
    }

    /// Nearest centroid by squared Euclidean distance; ties go to the lowest
    /// index.
    pub fn assign(&self, embedding: &[f64]) -> Result<usize, ClusterError> {
        if embedding.len() != self.dim() {
            return Err(ClusterError::DimensionMismatch {
                expected: self.dim(),
                found: embedding.len(),
            });
        }
        Ok(nearest(&self.centroids, &self.prepare(embedding)).0)
    }

    /// Sum over points of the squared distance to the nearest centroid.
    pub fn inertia(&self, points: &[Vec<f64>]) -> f64 {
        points
            .iter()
            .map(|p| nearest(&self.centroids, &self.prepare(p)).1)
            .sum()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let meta = serde_json::json!({
            "seed": self.seed,
            "unit_normalize": self.unit_normalize,
            "counts": self.counts,
        });
        let mut c = Container::new(CONTAINER_KIND, meta);
        c.push("centroids", &self.centroids);
        c.to_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ClusterError> {
        let c = Container::from_bytes(bytes)?;
        c.expect_kind(CONTAINER_KIND)?;
        let counts: Vec<u64> = serde_json::from_value(c.header.meta["counts"].clone())
            .map_err(ContainerError::from)?;
        let shape = c
            .tensor("centroids")
            .map(|m| (m.rows, m.cols))
            .ok_or_else(|| ContainerError::MissingTensor("centroids".into()))?;
        if shape.0 != counts.len() {
            return Err(ContainerError::ShapeMismatch {
                name: "centroids".into(),
                expected: (counts.len(), shape.1),
                found: shape,
            }
            .into());
        }
        Ok(Self {
            centroids: c.take("centroids", shape)?,
            counts,
            seed: c.header.meta["seed"].as_u64().unwrap_or_default(),
            unit_normalize: c.header.meta["unit_normalize"].as_bool().unwrap_or(false),
        })
    }
}

/// Greedy k-means++ seeding: each new center is the best (lowest potential)
/// of `2 + ln k` candidates drawn proportionally to squared distance.
fn kmeans_plus_plus<R: Rng>(points: &[Vec<f64>], k: usize, rng: &mut R) -> Matrix {
    let n = points.len();
    let dim = points[0].len();
    let trials = 2 + (k as f64).ln().floor() as usize;
    let mut centers = Matrix::zeros(k, dim);
    let first = rng.gen_range(0..n);
    centers.row_mut(0).copy_from_slice(&points[first]);
    let mut closest: Vec<f64> = points
        .iter()
        .map(|p| squared_distance(p, &points[first]))
        .collect();
    for c in 1..k {
        let total: f64 = closest.iter().sum();
        let mut best: Option<(f64, usize, Vec<f64>)> = None;
        for _ in 0..trials {
            let candidate = if total > 0.0 {
                let mut target = rng.gen::<f64>() * total;
                let mut pick = n - 1;
                for (i, d) in closest.iter().enumerate() {
                    if target < *d {
                        pick = i;
                        break;
                    }
                    target -= d;
                }
                pick
            } else {
                rng.gen_range(0..n)
            };
            let updated: Vec<f64> = points
                .iter()
                .zip(&closest)
                .map(|(p, &d)| d.min(squared_distance(p, &points[candidate])))
                .collect();
            let potential: f64 = updated.iter().sum();
            if best.as_ref().is_none_or(|(b, _, _)| potential < *b) {
                best = Some((potential, candidate, updated));
            }
        }
        let (_, pick, updated) = best.expect("at least one trial");
        centers.row_mut(c).copy_from_slice(&points[pick]);
        closest = updated;
    }
    centers
}

/// Sculley's mini-batch k-means. Each iteration samples `batch_size` points
/// uniformly with replacement, caches their nearest centers, then moves each
/// center toward each of its points with step `1/count`. Centers never hit
/// by a batch stay put.
pub fn fit_minibatch_kmeans(
    embeddings: &[Vec<f64>],
    params: &KMeansParams,
) -> Result<KMeansModel, ClusterError> {
    let k = params.k;
    if k == 0 || params.batch_size == 0 {
        return Err(ClusterError::InvalidParams(format!("{params:?}")));
    }
    if embeddings.len() < k {
        return Err(ClusterError::TooFewPoints {
            n: embeddings.len(),
            k,
        });
    }
    let dim = embeddings[0].len();
    if let Some(bad) = embeddings.iter().find(|e| e.len() != dim) {
        return Err(ClusterError::DimensionMismatch {
            expected: dim,
            found: bad.len(),
        });
    }
    let points: Vec<Vec<f64>> = if params.unit_normalize {
        embeddings.iter().map(|e| unit(e)).collect()
    } else {
        embeddings.to_vec()
    };
    let mut rng = crate::rng::substream(params.seed, "kmeans");
    let mut centroids = kmeans_plus_plus(&points, k, &mut rng);
    let mut counts = vec![0u64; k];
    let n = points.len();
    let mut batch = vec![0usize; params.batch_size];
    let mut cached = vec![0usize; params.batch_size];
    for _ in 0..params.iterations {
        for slot in batch.iter_mut() {
            *slot = rng.gen_range(0..n);
        }
        for (c, &i) in cached.iter_mut().zip(&batch) {
            *c = nearest(&centroids, &points[i]).0;
        }
        for (&c, &i) in cached.iter().zip(&batch) {
            counts[c] += 1;
            let eta = 1.0 / counts[c] as f64;
            for (v, x) in centroids.row_mut(c).iter_mut().zip(&points[i]) {
                *v += eta * (x - *v);
            }
        }
    }
    Ok(KMeansModel {
        centroids,
        counts,
        seed: params.seed,
        unit_normalize: params.unit_normalize,
    })
}

/// Full-batch Lloyd refinement; each pass never increases inertia. Empty
/// clusters keep their centers.
pub fn refine_lloyd(model: &mut KMeansModel, embeddings: &[Vec<f64>], passes: usize) {
    let points: Vec<std::borrow::Cow<[f64]>> =
        embeddings.iter().map(|e| model.prepare(e)).collect();
    let (k, dim) = (model.k(), model.dim());
    for _ in 0..passes {
        let mut sums = Matrix::zeros(k, dim);
        let mut members = vec![0u64; k];
        for p in &points {
            let c = nearest(&model.centroids, p).0;
            members[c] += 1;
            crate::linalg::axpy(1.0, p, sums.row_mut(c));
        }
        let mut moved = false;
        for c in 0..k {
            if members[c] > 0 {
                let inv = 1.0 / members[c] as f64;
                for (dst, s) in model.centroids.row_mut(c).iter_mut().zip(sums.row(c)) {
                    let v = s * inv;
                    moved |= *dst != v;
                    *dst = v;
                }
            }
        }
        if !moved {
            break;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ElbowConfig {
    pub batch_size: usize,
    pub iterations: usize,
    pub seed: u64,
    /// Lloyd passes run after the mini-batch fit.
    pub lloyd_passes: usize,
}

impl Default for ElbowConfig {
    fn default() -> Self {
        Self {
            batch_size: 256,
            iterations: 200,
            seed: 0,
            lloyd_passes: 20,
        }
    }
}

/// Fits one model per `k` and reports its inertia, ordered by `k`.
pub fn elbow_scan(
    embeddings: &[Vec<f64>],
    k_values: &[usize],
    cfg: &ElbowConfig,
) -> Result<Vec<(usize, f64)>, ClusterError> {
    let mut ks = k_values.to_vec();
    ks.sort_unstable();
    ks.dedup();
    ks.into_iter()
        .map(|k| {
            let mut model = fit_minibatch_kmeans(
                embeddings,
                &KMeansParams {
                    k,
                    batch_size: cfg.batch_size,
                    iterations: cfg.iterations,
                    seed: cfg.seed,
                    unit_normalize: false,
                },
            )?;
            refine_lloyd(&mut model, embeddings, cfg.lloyd_passes);
            Ok((k, model.inertia(embeddings)))
        })
        .collect()
}

/// Call graph whose vertices carry discrete labels: `C{cluster}` for
/// internal functions, the import name for external ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabeledGraph {
    pub file_id: String,
    pub family: Option<String>,
    pub vertices: Vec<Vertex>,
    pub edges: Vec<(u32, u32)>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub keep_multiplicity: bool,
    pub labels: BTreeMap<u32, String>,
}

impl LabeledGraph {
    pub fn from_parts(graph: &CallGraph, labels: Vec<String>) -> Self {
        Self {
            file_id: graph.file_id.clone(),
            family: graph.family.clone(),
            vertices: graph.vertices.clone(),
            edges: graph.edges.clone(),
            keep_multiplicity: graph.keep_multiplicity,
            labels: labels
                .into_iter()
                .enumerate()
                .map(|(i, l)| (i as u32, l))
                .collect(),
        }
    }

    /// A graph of internal vertices `f000, f001, …` with the given labels.
    /// Duplicate edges collapse.
    pub fn from_labels(file_id: &str, labels: Vec<String>, edges: &[(u32, u32)]) -> Self {
        let vertices = (0..labels.len())
            .map(|i| Vertex {
                id: i as u32,
                kind: VertexKind::Internal,
                name: format!("f{i:03}"),
                seq_ref: None,
            })
            .collect();
        let mut edges = edges.to_vec();
        edges.sort_unstable();
        edges.dedup();
        let cg = CallGraph {
            file_id: file_id.into(),
            family: None,
            vertices,
            edges,
            keep_multiplicity: false,
        };
        Self::from_parts(&cg, labels)
    }

    pub fn topology(&self) -> CallGraph {
        CallGraph {
            file_id: self.file_id.clone(),
            family: self.family.clone(),
            vertices: self.vertices.clone(),
            edges: self.edges.clone(),
            keep_multiplicity: self.keep_multiplicity,
        }
    }

    /// Labels in vertex-id order.
    pub fn label_list(&self) -> Vec<&str> {
        (0..self.vertices.len() as u32)
            .map(|i| self.labels.get(&i).map(String::as_str).unwrap_or(""))
            .collect()
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("labeled graph serializes")
    }
}

pub fn cluster_label(cluster: usize) -> String {
    format!("C{cluster}")
}

/// External names that look like cluster labels are prefixed so the two
/// label namespaces never collide.
pub fn external_label(import_name: &str) -> String {
    let looks_like_cluster = import_name
        .strip_prefix('C')
        .is_some_and(|rest| !rest.is_empty() && rest.bytes().all(|b| b.is_ascii_digit()));
    if looks_like_cluster || import_name.starts_with("ext:") {
        format!("ext:{import_name}")
    } else {
        import_name.to_string()
    }
}

/// Labels internal vertices by their embedding's cluster and external
/// vertices by import name. `embeddings` is keyed by vertex name.
pub fn label_graph(
    g: &CallGraph,
    model: &KMeansModel,
    embeddings: &HashMap<String, Vec<f64>>,
) -> Result<LabeledGraph, ClusterError> {
    let labels = g
        .vertices
        .iter()
        .map(|v| match v.kind {
            VertexKind::Internal => {
                let e = embeddings
                    .get(&v.name)
                    .ok_or_else(|| ClusterError::MissingEmbedding(v.name.clone()))?;
                Ok(cluster_label(model.assign(e)?))
            }
            VertexKind::External => Ok(external_label(&v.name)),
        })
        .collect::<Result<Vec<_>, ClusterError>>()?;
    Ok(LabeledGraph::from_parts(g, labels))
}
