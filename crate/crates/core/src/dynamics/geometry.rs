//! Per-step centroid geometry of last-layer states.
//!
//! Traces are grouped by their exact number of memorized tokens (positions
//! where the generated token equals the true one). For every generation step
//! each group's centroid is the mean of its members' step embeddings, and
//! groups are compared pairwise by cosine similarity and Euclidean distance.

use std::collections::BTreeMap;

use super::pca::{pca_project, Pca};
use super::DynamicsError;
use crate::report::{fmt_opt_real, fmt_real};
use crate::trace::TraceSet;

#[derive(Debug, Clone, PartialEq)]
pub struct GroupCentroid {
    pub members: usize,
    /// `steps[s]` is the mean step-`s` embedding.
    pub steps: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupCentroids {
    pub continuation_len: usize,
    pub hidden_size: usize,
    /// Keyed by memorized-token count, ascending.
    pub groups: BTreeMap<usize, GroupCentroid>,
}

impl GroupCentroids {
    pub fn keys(&self) -> Vec<usize> {
        self.groups.keys().copied().collect()
    }
}

/// Averages step embeddings within each memorized-token-count group.
///
/// Members are summed in `sequence_id` order, so the result is bitwise
/// independent of trace order.
pub fn group_centroids(traces: &TraceSet) -> Result<GroupCentroids, DynamicsError> {
    if traces.is_empty() {
        return Err(DynamicsError::EmptyTraceSet);
    }
    let hidden = traces.traces()[0].model().hidden_size;
    let steps = traces.continuation_len();
    #[allow(clippy::type_complexity)]
    let mut members: BTreeMap<usize, Vec<(&str, &[Vec<f64>])>> = BTreeMap::new();
    for t in traces {
        let emb = t
            .step_embedding()
            .ok_or_else(|| DynamicsError::MissingEmbeddings(t.sequence_id().to_string()))?;
        if t.model().hidden_size != hidden {
            return Err(DynamicsError::DimensionMismatch {
                expected: hidden,
                got: t.model().hidden_size,
            });
        }
        members
            .entry(t.matched_tokens())
            .or_default()
            .push((t.sequence_id(), emb));
    }
    let groups = members
        .into_iter()
        .map(|(key, mut list)| {
            list.sort_by(|a, b| a.0.cmp(b.0));
            let n = list.len() as f64;
            let mut sums = vec![vec![0.0; hidden]; steps];
            for (_, emb) in &list {
                for (acc, v) in sums.iter_mut().zip(emb.iter()) {
                    for (a, x) in acc.iter_mut().zip(v) {
                        *a += x;
                    }
                }
            }
            for step in &mut sums {
                step.iter_mut().for_each(|a| *a /= n);
            }
            (
                key,
                GroupCentroid {
                    members: list.len(),
                    steps: sums,
                },
            )
        })
        .collect();
    Ok(GroupCentroids {
        continuation_len: steps,
        hidden_size: hidden,
        groups,
    })
}

/// Cosine and Euclidean matrices over groups at one step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepGeometry {
    /// `None` where either centroid is the zero vector.
    pub cosine: Vec<Vec<Option<f64>>>,
    pub euclidean: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeometryReport {
    /// Group keys, ascending; matrix rows and columns follow this order.
    pub keys: Vec<usize>,
    pub steps: Vec<StepGeometry>,
}

impl GeometryReport {
    /// `(step, group_a, group_b)` for every pair whose cosine is undefined.
    pub fn zero_vector_pairs(&self) -> Vec<(usize, usize, usize)> {
        let mut out = Vec::new();
        for (s, g) in self.steps.iter().enumerate() {
            for (i, row) in g.cosine.iter().enumerate() {
                for (j, c) in row.iter().enumerate() {
                    if c.is_none() {
                        out.push((s, self.keys[i], self.keys[j]));
                    }
                }
            }
        }
        out
    }

    /// `step,group_a,group_b,cosine,euclidean`; undefined cosines are empty.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,group_a,group_b,cosine,euclidean\n");
        for (s, g) in self.steps.iter().enumerate() {
            for (i, &a) in self.keys.iter().enumerate() {
                for (j, &b) in self.keys.iter().enumerate() {
                    out.push_str(&format!(
                        "{s},{a},{b},{},{}\n",
                        fmt_opt_real(g.cosine[i][j]),
                        fmt_real(g.euclidean[i][j])
                    ));
                }
            }
        }
        out
    }
}

pub fn cosine(u: &[f64], v: &[f64]) -> Option<f64> {
    let nu2 = u.iter().map(|x| x * x).sum::<f64>();
    let nv2 = v.iter().map(|x| x * x).sum::<f64>();
    if nu2 == 0.0 || nv2 == 0.0 {
        return None;
    }
    let d: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    Some((d / (nu2 * nv2).sqrt()).clamp(-1.0, 1.0))
}

pub fn euclidean(u: &[f64], v: &[f64]) -> f64 {
    u.iter()
        .zip(v)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
}

/// Pairwise cosine similarity and Euclidean distance at every step.
/// Matrices are filled from the upper triangle, so they are exactly
/// symmetric; non-zero diagonals are exactly 1 and 0.
pub fn pairwise_geometry(centroids: &GroupCentroids) -> Result<GeometryReport, DynamicsError> {
    let keys = centroids.keys();
    if keys.len() < 2 {
        return Err(DynamicsError::InsufficientGroups(keys.len()));
    }
    let groups: Vec<&GroupCentroid> = centroids.groups.values().collect();
    let g = groups.len();
    let steps = (0..centroids.continuation_len)
        .map(|s| {
            let mut cos = vec![vec![None; g]; g];
            let mut euc = vec![vec![0.0; g]; g];
            for i in 0..g {
                let u = &groups[i].steps[s];
                cos[i][i] = cosine(u, u).map(|_| 1.0);
                for j in i + 1..g {
                    let v = &groups[j].steps[s];
                    let c = cosine(u, v);
                    let e = euclidean(u, v);
                    cos[i][j] = c;
                    cos[j][i] = c;
                    euc[i][j] = e;
                    euc[j][i] = e;
                }
            }
            StepGeometry {
                cosine: cos,
                euclidean: euc,
            }
        })
        .collect();
    Ok(GeometryReport { keys, steps })
}

/// Centroids of every (step, group) projected onto one shared 2-D basis.
#[derive(Debug, Clone, PartialEq)]
pub struct CentroidProjection {
    /// `(step, group_key, coordinates)`, step-major then ascending key.
    pub points: Vec<(usize, usize, Vec<f64>)>,
    pub pca: Pca,
}

impl CentroidProjection {
    /// `step,group,pc1,pc2`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,group,pc1,pc2\n");
        for (s, g, c) in &self.points {
            out.push_str(&format!("{s},{g},{},{}\n", fmt_real(c[0]), fmt_real(c[1])));
        }
        out
    }
}

/// Fits one PCA on the union of all step centroids and projects each.
pub fn centroid_projection(centroids: &GroupCentroids) -> Result<CentroidProjection, DynamicsError> {
    let mut labels = Vec::new();
    let mut vectors = Vec::new();
    for s in 0..centroids.continuation_len {
        for (&key, g) in &centroids.groups {
            labels.push((s, key));
            vectors.push(g.steps[s].clone());
        }
    }
    let pca = pca_project(&vectors, 2)?;
    let points = labels
        .into_iter()
        .zip(&pca.coords)
        .map(|((s, k), c)| (s, k, c.clone()))
        .collect();
    Ok(CentroidProjection { points, pca })
}
