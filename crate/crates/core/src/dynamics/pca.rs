//! Principal component analysis by power iteration with deflation.
//!
//! Only the leading few components are ever needed and hidden sizes can be
//! in the thousands, so no dense eigensolver is used. Each component is
//! found by repeated multiplication with the (deflated) sample covariance
//! until successive unit vectors differ by less than [`TOLERANCE`] in
//! Euclidean norm, or [`MAX_ITERATIONS`] is reached. Every returned
//! eigenvector has its largest-magnitude entry positive (first such entry on
//! ties), which makes the output deterministic.

use super::DynamicsError;

pub const TOLERANCE: f64 = 1e-10;
pub const MAX_ITERATIONS: usize = 10_000;

type Matrix = Vec<Vec<f64>>;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn mat_vec(m: &Matrix, v: &[f64]) -> Vec<f64> {
    m.iter().map(|row| dot(row, v)).collect()
}

/// Removes the components of `v` along each (unit) vector in `basis`.
fn orthogonalize(v: &mut [f64], basis: &[Vec<f64>]) {
    for b in basis {
        let p = dot(v, b);
        for (x, y) in v.iter_mut().zip(b) {
            *x -= p * y;
        }
    }
}

/// Flips `v` so its largest-magnitude entry is positive.
pub fn fix_sign(v: &mut [f64]) {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i].abs() > v[best].abs() {
            best = i;
        }
    }
    if v.get(best).is_some_and(|&x| x < 0.0) {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

/// A unit vector orthogonal to `basis`, taken from the standard basis.
fn orthogonal_fallback(dim: usize, basis: &[Vec<f64>]) -> Vec<f64> {
    let mut best: Option<Vec<f64>> = None;
    let mut best_norm = 0.0;
    for i in 0..dim {
        let mut e = vec![0.0; dim];
        e[i] = 1.0;
        orthogonalize(&mut e, basis);
        let n = norm(&e);
        if n > best_norm + 1e-12 {
            best_norm = n;
            best = Some(e);
        }
    }
    let mut v = best.unwrap_or_else(|| vec![0.0; dim]);
    if best_norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= best_norm);
    }
    v
}

/// Result of one power-iteration solve.
#[derive(Debug, Clone, PartialEq)]
pub struct Eigenpairs {
    /// Descending.
    pub values: Vec<f64>,
    pub vectors: Vec<Vec<f64>>,
    pub iterations: Vec<usize>,
    pub converged: Vec<bool>,
}

/// Top `k` eigenpairs of a symmetric positive semi-definite matrix.
pub fn top_eigenpairs(matrix: &[Vec<f64>], k: usize) -> Result<Eigenpairs, DynamicsError> {
    let dim = matrix.len();
    if let Some(row) = matrix.iter().find(|r| r.len() != dim) {
        return Err(DynamicsError::DimensionMismatch {
            expected: dim,
            got: row.len(),
        });
    }
    if k > dim {
        return Err(DynamicsError::DimensionTooSmall { dim, k });
    }
    let mut a: Matrix = matrix.to_vec();
    let scale = a
        .iter()
        .flat_map(|r| r.iter())
        .fold(0.0f64, |m, x| m.max(x.abs()));
    let zero_threshold = scale * 1e-14;

    let mut out = Eigenpairs {
        values: Vec::with_capacity(k),
        vectors: Vec::with_capacity(k),
        iterations: Vec::with_capacity(k),
        converged: Vec::with_capacity(k),
    };
    for _ in 0..k {
        // Start from the row of largest norm, which has a non-zero component
        // along the leading eigenvector of a PSD matrix.
        let start = a
            .iter()
            .enumerate()
            .map(|(i, r)| (i, norm(r)))
            .fold((0, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
        let mut v = if start.1 > zero_threshold {
            let mut v = a[start.0].clone();
            orthogonalize(&mut v, &out.vectors);
            let n = norm(&v);
            if n > zero_threshold {
                v.iter_mut().for_each(|x| *x /= n);
                v
            } else {
                orthogonal_fallback(dim, &out.vectors)
            }
        } else {
            orthogonal_fallback(dim, &out.vectors)
        };

        let mut iterations = 0;
        let mut converged = false;
        while iterations < MAX_ITERATIONS {
            iterations += 1;
            let mut w = mat_vec(&a, &v);
            orthogonalize(&mut w, &out.vectors);
            let n = norm(&w);
            if n <= zero_threshold {
                // Remaining spectrum is zero; any orthogonal unit vector will do.
                converged = true;
                break;
            }
            w.iter_mut().for_each(|x| *x /= n);
            if dot(&w, &v) < 0.0 {
                w.iter_mut().for_each(|x| *x = -*x);
            }
            let delta = w
                .iter()
                .zip(&v)
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt();
            v = w;
            if delta < TOLERANCE {
                converged = true;
                break;
            }
        }
        fix_sign(&mut v);
        let lambda = dot(&v, &mat_vec(&a, &v)).max(0.0);
        for (i, row) in a.iter_mut().enumerate() {
            for (j, x) in row.iter_mut().enumerate() {
                *x -= lambda * v[i] * v[j];
            }
        }
        out.values.push(lambda);
        out.vectors.push(v);
        out.iterations.push(iterations);
        out.converged.push(converged);
    }
    Ok(out)
}

/// A fitted projection onto the leading principal components.
#[derive(Debug, Clone, PartialEq)]
pub struct Pca {
    pub mean: Vec<f64>,
    /// Unit eigenvectors of the sample covariance, by descending eigenvalue.
    pub components: Vec<Vec<f64>>,
    /// Sample-covariance eigenvalues (variance along each component).
    pub eigenvalues: Vec<f64>,
    /// Trace of the sample covariance, the variance summed over all
    /// dimensions.
    pub total_variance: f64,
    /// Projected coordinates of each input vector.
    pub coords: Vec<Vec<f64>>,
    pub iterations: Vec<usize>,
    pub converged: Vec<bool>,
}

impl Pca {
    pub fn explained_variance_ratio(&self) -> Vec<f64> {
        self.eigenvalues
            .iter()
            .map(|&l| if self.total_variance > 0.0 { l / self.total_variance } else { 0.0 })
            .collect()
    }

    pub fn project(&self, v: &[f64]) -> Vec<f64> {
        let centered: Vec<f64> = v.iter().zip(&self.mean).map(|(x, m)| x - m).collect();
        self.components.iter().map(|c| dot(c, &centered)).collect()
    }

    /// Maps coordinates back to the input space.
    pub fn reconstruct(&self, coords: &[f64]) -> Vec<f64> {
        let mut out = self.mean.clone();
        for (c, &z) in self.components.iter().zip(coords) {
            for (o, x) in out.iter_mut().zip(c) {
                *o += z * x;
            }
        }
        out
    }
}

/// Sample covariance (divisor `n − 1`) of mean-centered rows.
pub fn covariance(centered: &[Vec<f64>]) -> Matrix {
    let d = centered.first().map_or(0, |r| r.len());
    let n = centered.len();
    let mut cov = vec![vec![0.0; d]; d];
    for row in centered {
        for i in 0..d {
            let ri = row[i];
            if ri == 0.0 {
                continue;
            }
            for j in i..d {
                cov[i][j] += ri * row[j];
            }
        }
    }
    let denom = (n.max(2) - 1) as f64;
    for i in 0..d {
        for j in i..d {
            let v = cov[i][j] / denom;
            cov[i][j] = v;
            cov[j][i] = v;
        }
    }
    cov
}

/// Mean-centers `vectors`, finds the top `k` covariance eigenvectors and
/// projects every vector onto them.
pub fn pca_project(vectors: &[Vec<f64>], k: usize) -> Result<Pca, DynamicsError> {
    if vectors.len() < 2 {
        return Err(DynamicsError::TooFewVectors(vectors.len()));
    }
    let d = vectors[0].len();
    if let Some(v) = vectors.iter().find(|v| v.len() != d) {
        return Err(DynamicsError::DimensionMismatch {
            expected: d,
            got: v.len(),
        });
    }
    if d < k {
        return Err(DynamicsError::DimensionTooSmall { dim: d, k });
    }
    if vectors.iter().all(|v| v == &vectors[0]) {
        return Err(DynamicsError::DegenerateInput);
    }
    let n = vectors.len() as f64;
    let mut mean = vec![0.0; d];
    for v in vectors {
        for (m, x) in mean.iter_mut().zip(v) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let centered: Vec<Vec<f64>> = vectors
        .iter()
        .map(|v| v.iter().zip(&mean).map(|(x, m)| x - m).collect())
        .collect();
    let cov = covariance(&centered);
    let total_variance = (0..d).map(|i| cov[i][i]).sum();
    let eig = top_eigenpairs(&cov, k)?;
    let coords = centered
        .iter()
        .map(|c| eig.vectors.iter().map(|e| dot(e, c)).collect())
        .collect();
    Ok(Pca {
        mean,
        components: eig.vectors,
        eigenvalues: eig.values,
        total_variance,
        coords,
        iterations: eig.iterations,
        converged: eig.converged,
    })
}
