//! Feature maps over state-action pairs and Gaussian kernels on top of them.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::env::GridworldSpec;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    OneHot,
    CustomTable,
}

/// A `(s, a) -> R^dim` lookup table, row-major over `s * n_actions + a`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMap {
    pub kind: FeatureKind,
    pub name: String,
    pub n_states: usize,
    pub n_actions: usize,
    pub dim: usize,
    table: Vec<f64>,
}

impl FeatureMap {
    pub fn one_hot(n_states: usize, n_actions: usize) -> Self {
        let n = n_states * n_actions;
        let mut table = vec![0.0; n * n];
        for x in 0..n {
            table[x * n + x] = 1.0;
        }
        Self { kind: FeatureKind::OneHot, name: "one_hot".into(), n_states, n_actions, dim: n, table }
    }

    /// Indicator of the state, shared across actions.
    pub fn state_indicator(n_states: usize, n_actions: usize) -> Self {
        let mut table = vec![0.0; n_states * n_actions * n_states];
        for s in 0..n_states {
            for a in 0..n_actions {
                table[(s * n_actions + a) * n_states + s] = 1.0;
            }
        }
        Self { kind: FeatureKind::CustomTable, name: "state_indicator".into(), n_states, n_actions, dim: n_states, table }
    }

    /// Normalized grid coordinates followed by a one-hot action block.
    pub fn grid_embedding(spec: &GridworldSpec, n_actions: usize) -> Self {
        let scale = |v: usize, extent: usize| if extent > 1 { v as f64 / (extent - 1) as f64 } else { 0.0 };
        let dim = 2 + n_actions;
        let n_states = spec.n_states();
        let mut table = Vec::with_capacity(n_states * n_actions * dim);
        for s in 0..n_states {
            let (x, y) = spec.cell(s);
            for a in 0..n_actions {
                table.push(scale(x, spec.width));
                table.push(scale(y, spec.height));
                table.extend((0..n_actions).map(|b| if a == b { 1.0 } else { 0.0 }));
            }
        }
        Self { kind: FeatureKind::CustomTable, name: "grid_embedding".into(), n_states, n_actions, dim, table }
    }

    pub fn custom(name: &str, n_states: usize, n_actions: usize, dim: usize, table: Vec<f64>) -> Result<Self> {
        if table.len() != n_states * n_actions * dim {
            return Err(Error::Shape(format!(
                "feature table has {} entries, expected {}",
                table.len(),
                n_states * n_actions * dim
            )));
        }
        if table.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid("feature table has non-finite entries".into()));
        }
        Ok(Self { kind: FeatureKind::CustomTable, name: name.into(), n_states, n_actions, dim, table })
    }

    pub fn n_state_actions(&self) -> usize {
        self.n_states * self.n_actions
    }

    pub fn row(&self, x: usize) -> &[f64] {
        &self.table[x * self.dim..(x + 1) * self.dim]
    }

    /// The `(S*A) x dim` design matrix.
    pub fn matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n_state_actions(), self.dim, &self.table)
    }

    pub fn check_shape(&self, n_states: usize, n_actions: usize) -> Result<()> {
        if self.n_states != n_states || self.n_actions != n_actions {
            return Err(Error::Shape(format!(
                "feature map '{}' is over {}x{}, expected {}x{}",
                self.name, self.n_states, self.n_actions, n_states, n_actions
            )));
        }
        Ok(())
    }
}

/// Gaussian kernel `exp(-|e(x) - e(y)|^2 / (2 h^2))` on an embedding `e`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Kernel {
    pub bandwidth: f64,
    pub embedding: FeatureMap,
}

impl Kernel {
    pub fn gaussian(bandwidth: f64, embedding: FeatureMap) -> Result<Self> {
        if !(bandwidth > 0.0) || !bandwidth.is_finite() {
            return Err(Error::Config(format!("kernel bandwidth must be positive, got {bandwidth}")));
        }
        Ok(Self { bandwidth, embedding })
    }

    /// Bandwidth set to the median pairwise embedding distance among `points`.
    pub fn with_median_bandwidth(embedding: FeatureMap, points: &[usize]) -> Result<Self> {
        let h = median_pairwise_distance(&embedding, points);
        Self::gaussian(if h > 0.0 { h } else { 1.0 }, embedding)
    }

    /// The `{h/3, h/2, h}` sweep around the current bandwidth.
    pub fn bandwidth_sweep(&self) -> Vec<Kernel> {
        [3.0, 2.0, 1.0]
            .iter()
            .map(|d| Kernel { bandwidth: self.bandwidth / d, embedding: self.embedding.clone() })
            .collect()
    }

    pub fn eval(&self, x: usize, y: usize) -> f64 {
        let d2: f64 = self.embedding.row(x).iter().zip(self.embedding.row(y)).map(|(a, b)| (a - b) * (a - b)).sum();
        (-d2 / (2.0 * self.bandwidth * self.bandwidth)).exp()
    }

    /// Kernel values between every pair of state-action cells.
    pub fn gram_table(&self) -> DMatrix<f64> {
        let n = self.embedding.n_state_actions();
        DMatrix::from_fn(n, n, |i, j| self.eval(i, j))
    }

    /// Errors if the full Gram table has an eigenvalue below `-1e-8`.
    pub fn check_psd(&self) -> Result<()> {
        let min = SymmetricEigen::new(self.gram_table()).eigenvalues.min();
        if min < -1e-8 {
            return Err(Error::Numerical(format!("kernel Gram table has eigenvalue {min}")));
        }
        Ok(())
    }
}

/// Median Euclidean distance over distinct pairs of embedded points.
pub fn median_pairwise_distance(embedding: &FeatureMap, points: &[usize]) -> f64 {
    let mut unique = points.to_vec();
    unique.sort_unstable();
    unique.dedup();
    let mut dists = Vec::new();
    for (i, &x) in unique.iter().enumerate() {
        for &y in &unique[i + 1..] {
            let d2: f64 = embedding.row(x).iter().zip(embedding.row(y)).map(|(a, b)| (a - b) * (a - b)).sum();
            dists.push(d2.sqrt());
        }
    }
    if dists.is_empty() {
        return 0.0;
    }
    dists.sort_by(f64::total_cmp);
    let mid = dists.len() / 2;
    if dists.len() % 2 == 0 {
        0.5 * (dists[mid - 1] + dists[mid])
    } else {
        dists[mid]
    }
}
