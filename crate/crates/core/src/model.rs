//! Parameterized functions over state-action pairs.
//!
//! One type covers the fitted ratio, the correction weight, the q-function,
//! and the GradientDICE iterate. Evaluation is `clamp(link(raw(x)))`.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureMap, Kernel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Tabular,
    Linear,
    RkhsCoeffs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Link {
    Identity,
    Exp,
}

/// `x -> sum_i c_i k(basis_i, x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelExpansion {
    pub kernel: Kernel,
    pub basis: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightModel {
    pub kind: ModelKind,
    pub link: Link,
    pub params: Vec<f64>,
    pub features: Option<FeatureMap>,
    pub expansion: Option<KernelExpansion>,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
    pub n_states: usize,
    pub n_actions: usize,
}

/// Serialized form of a [`WeightModel`]. Feature maps are referenced by name
/// and supplied again on load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDocument {
    pub kind: ModelKind,
    pub link: Link,
    pub params: Vec<f64>,
    pub c_min: Option<f64>,
    pub c_max: Option<f64>,
    pub feature_ref: Option<String>,
    pub n_states: usize,
    pub n_actions: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bandwidth: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub basis: Option<Vec<usize>>,
}

impl WeightModel {
    pub fn tabular(n_states: usize, n_actions: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n_states * n_actions {
            return Err(Error::Shape(format!("tabular model needs {} values, got {}", n_states * n_actions, values.len())));
        }
        Ok(Self {
            kind: ModelKind::Tabular,
            link: Link::Identity,
            params: values,
            features: None,
            expansion: None,
            lower: None,
            upper: None,
            n_states,
            n_actions,
        })
    }

    pub fn constant(n_states: usize, n_actions: usize, value: f64) -> Self {
        Self::tabular(n_states, n_actions, vec![value; n_states * n_actions]).expect("shape is consistent")
    }

    pub fn linear(features: FeatureMap, params: Vec<f64>) -> Result<Self> {
        if params.len() != features.dim {
            return Err(Error::Shape(format!("linear model needs {} params, got {}", features.dim, params.len())));
        }
        Ok(Self {
            kind: ModelKind::Linear,
            link: Link::Identity,
            params,
            n_states: features.n_states,
            n_actions: features.n_actions,
            features: Some(features),
            expansion: None,
            lower: None,
            upper: None,
        })
    }

    pub fn rkhs(kernel: Kernel, basis: Vec<usize>, coeffs: Vec<f64>) -> Result<Self> {
        if basis.len() != coeffs.len() {
            return Err(Error::Shape(format!("{} basis points but {} coefficients", basis.len(), coeffs.len())));
        }
        let (n_states, n_actions) = (kernel.embedding.n_states, kernel.embedding.n_actions);
        if let Some(&x) = basis.iter().find(|&&x| x >= n_states * n_actions) {
            return Err(Error::Invalid(format!("basis index {x} out of range")));
        }
        Ok(Self {
            kind: ModelKind::RkhsCoeffs,
            link: Link::Identity,
            params: coeffs,
            features: None,
            expansion: Some(KernelExpansion { kernel, basis }),
            lower: None,
            upper: None,
            n_states,
            n_actions,
        })
    }

    pub fn with_link(mut self, link: Link) -> Self {
        self.link = link;
        self
    }

    pub fn with_clamp(mut self, lower: Option<f64>, upper: Option<f64>) -> Self {
        self.lower = lower;
        self.upper = upper;
        self
    }

    pub fn n_state_actions(&self) -> usize {
        self.n_states * self.n_actions
    }

    /// Pre-link score at cell `x = s * n_actions + a`.
    pub fn raw(&self, x: usize) -> f64 {
        match self.kind {
            ModelKind::Tabular => self.params[x],
            ModelKind::Linear => {
                let phi = self.features.as_ref().expect("linear models carry features");
                phi.row(x).iter().zip(&self.params).map(|(f, p)| f * p).sum()
            }
            ModelKind::RkhsCoeffs => {
                let ex = self.expansion.as_ref().expect("rkhs models carry a kernel");
                ex.basis.iter().zip(&self.params).map(|(&b, c)| c * ex.kernel.eval(b, x)).sum()
            }
        }
    }

    fn linked(&self, raw: f64) -> f64 {
        match self.link {
            Link::Identity => raw,
            Link::Exp => raw.exp(),
        }
    }

    fn clamp(&self, v: f64) -> f64 {
        let v = self.lower.map_or(v, |lo| v.max(lo));
        self.upper.map_or(v, |hi| v.min(hi))
    }

    pub fn eval(&self, s: usize, a: usize) -> f64 {
        self.eval_index(s * self.n_actions + a)
    }

    pub fn eval_index(&self, x: usize) -> f64 {
        self.clamp(self.linked(self.raw(x)))
    }

    /// Clamped values at every cell.
    pub fn table(&self) -> Vec<f64> {
        (0..self.n_state_actions()).map(|x| self.eval_index(x)).collect()
    }

    /// Linked but unclamped values at every cell.
    pub fn unclamped_table(&self) -> Vec<f64> {
        (0..self.n_state_actions()).map(|x| self.linked(self.raw(x))).collect()
    }

    /// Share of `weights` mass sitting on cells where the clamp is active.
    pub fn clamp_fraction(&self, weights: &[f64]) -> f64 {
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return 0.0;
        }
        let clamped: f64 = self
            .unclamped_table()
            .iter()
            .zip(weights)
            .filter(|(v, _)| self.clamp(**v) != **v)
            .map(|(_, w)| w)
            .sum();
        clamped / total
    }

    /// RKHS norm of a kernel expansion, `sqrt(c^T K_bb c)`.
    pub fn rkhs_norm(&self) -> Option<f64> {
        let ex = self.expansion.as_ref()?;
        let mut sq = 0.0;
        for (i, &bi) in ex.basis.iter().enumerate() {
            for (j, &bj) in ex.basis.iter().enumerate() {
                sq += self.params[i] * self.params[j] * ex.kernel.eval(bi, bj);
            }
        }
        Some(sq.max(0.0).sqrt())
    }

    pub fn params_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.params)
    }

    pub fn check_shape(&self, n_states: usize, n_actions: usize) -> Result<()> {
        if self.n_states != n_states || self.n_actions != n_actions {
            return Err(Error::Shape(format!(
                "model is over {}x{}, expected {}x{}",
                self.n_states, self.n_actions, n_states, n_actions
            )));
        }
        Ok(())
    }

    pub fn to_document(&self) -> ModelDocument {
        let ex = self.expansion.as_ref();
        ModelDocument {
            kind: self.kind,
            link: self.link,
            params: self.params.clone(),
            c_min: self.lower,
            c_max: self.upper,
            feature_ref: self
                .features
                .as_ref()
                .map(|f| f.name.clone())
                .or_else(|| ex.map(|e| e.kernel.embedding.name.clone())),
            n_states: self.n_states,
            n_actions: self.n_actions,
            bandwidth: ex.map(|e| e.kernel.bandwidth),
            basis: ex.map(|e| e.basis.clone()),
        }
    }

    /// Rebuilds a model; `features` must be the map named by `feature_ref`
    /// (the kernel embedding for RKHS models).
    pub fn from_document(doc: &ModelDocument, features: Option<FeatureMap>) -> Result<Self> {
        if let (Some(name), Some(f)) = (&doc.feature_ref, &features) {
            if *name != f.name {
                return Err(Error::Invalid(format!("model references features '{name}', got '{}'", f.name)));
            }
        }
        let model = match doc.kind {
            ModelKind::Tabular => Self::tabular(doc.n_states, doc.n_actions, doc.params.clone())?,
            ModelKind::Linear => {
                let f = features.ok_or_else(|| Error::Invalid("linear model needs its feature map".into()))?;
                Self::linear(f, doc.params.clone())?
            }
            ModelKind::RkhsCoeffs => {
                let f = features.ok_or_else(|| Error::Invalid("rkhs model needs its embedding".into()))?;
                let h = doc.bandwidth.ok_or_else(|| Error::Invalid("rkhs model needs a bandwidth".into()))?;
                let basis = doc.basis.clone().ok_or_else(|| Error::Invalid("rkhs model needs a basis".into()))?;
                Self::rkhs(Kernel::gaussian(h, f)?, basis, doc.params.clone())?
            }
        };
        model.check_shape(doc.n_states, doc.n_actions)?;
        Ok(model.with_link(doc.link).with_clamp(doc.c_min, doc.c_max))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_document())?)
    }

    pub fn from_json(text: &str, features: Option<FeatureMap>) -> Result<Self> {
        Self::from_document(&serde_json::from_str(text)?, features)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exp_link_and_clamp() {
        let m = WeightModel::tabular(1, 3, vec![-10.0, 0.0, 10.0])
            .unwrap()
            .with_link(Link::Exp)
            .with_clamp(Some(1e-3), Some(1e3));
        assert_eq!(m.table(), vec![1e-3, 1.0, 1e3]);
        assert!((m.clamp_fraction(&[1.0, 1.0, 2.0]) - 0.75).abs() < 1e-15);
    }

    #[test]
    fn linear_with_one_hot_matches_tabular() {
        let vals = vec![0.5, 1.5, 2.0, 0.1];
        let lin = WeightModel::linear(FeatureMap::one_hot(2, 2), vals.clone()).unwrap();
        let tab = WeightModel::tabular(2, 2, vals).unwrap();
        assert_eq!(lin.table(), tab.table());
    }

    #[test]
    fn rkhs_norm_of_single_atom_is_coefficient() {
        let k = Kernel::gaussian(1.0, FeatureMap::one_hot(2, 1)).unwrap();
        let m = WeightModel::rkhs(k, vec![1], vec![-0.3]).unwrap();
        assert!((m.rkhs_norm().unwrap() - 0.3).abs() < 1e-15);
        assert_eq!(m.eval(1, 0), -0.3);
    }

    #[test]
    fn json_roundtrip() {
        let phi = FeatureMap::state_indicator(2, 2);
        let m = WeightModel::linear(phi.clone(), vec![0.25, -1.0]).unwrap().with_clamp(Some(0.0), None);
        let text = m.to_json().unwrap();
        assert!(text.contains("\"feature_ref\": \"state_indicator\""));
        assert_eq!(WeightModel::from_json(&text, Some(phi)).unwrap(), m);
        assert!(WeightModel::from_json(&text, Some(FeatureMap::one_hot(2, 2))).is_err());
    }
}
