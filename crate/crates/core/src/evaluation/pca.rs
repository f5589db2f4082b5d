use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{AstnError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Projection {
    pub n: usize,
    pub k: usize,
    /// Row-major `n × k` scores.
    pub scores: Vec<f64>,
    /// Row-major `k × d` unit loadings.
    pub components: Vec<f64>,
    pub explained_variance_ratio: Vec<f64>,
}

impl Projection {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.scores[i * self.k..(i + 1) * self.k]
    }
}

/// Projects row-major `n × d` data onto its top `k` principal axes. Each
/// axis is oriented so its first non-negligible loading is positive. Data
/// without variance projects to zeros with zero explained variance.
pub fn pca_project(data: &[f64], n: usize, d: usize, k: usize) -> Result<Projection> {
    if n < 2 || d < k || k == 0 || data.len() != n * d {
        return Err(AstnError::Metric(format!(
            "PCA needs n >= 2 and d >= k > 0 with n·d values (n={n}, d={d}, k={k}, {} values)",
            data.len()
        )));
    }
    let mut x = DMatrix::from_row_slice(n, d, data);
    for mut col in x.column_iter_mut() {
        let mean = col.mean();
        col.add_scalar_mut(-mean);
    }
    let cov = (x.transpose() * &x) / (n as f64 - 1.0);
    let total: f64 = cov.trace();
    if total <= f64::EPSILON * d as f64 {
        return Ok(Projection {
            n,
            k,
            scores: vec![0.0; n * k],
            components: vec![0.0; k * d],
            explained_variance_ratio: vec![0.0; k],
        });
    }
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let mut components = Vec::with_capacity(k * d);
    let mut ratios = Vec::with_capacity(k);
    for &c in order.iter().take(k) {
        let v = eig.eigenvectors.column(c);
        let lead = v.iter().find(|x| x.abs() > 1e-12).copied().unwrap_or(1.0);
        let sign = if lead < 0.0 { -1.0 } else { 1.0 };
        components.extend(v.iter().map(|x| x * sign));
        ratios.push(eig.eigenvalues[c].max(0.0) / total);
    }
    let w = DMatrix::from_row_slice(k, d, &components);
    let proj = &x * w.transpose();
    let mut scores = Vec::with_capacity(n * k);
    for i in 0..n {
        scores.extend(proj.row(i).iter());
    }
    Ok(Projection {
        n,
        k,
        scores,
        components,
        explained_variance_ratio: ratios,
    })
}
