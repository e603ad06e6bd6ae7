//! Maximum-likelihood and quasi-likelihood regression.
//!
//! * [`fit_glm_poisson`]: Poisson / quasi-Poisson log-link GLM by IRLS.
//! * [`fit_betabin_logit`]: beta-binomial with logit mean and constant log dispersion.
//! * [`fit_multinomial_logit`] and [`fit_dirichlet_multinomial`]: compositional counts.

mod categorical;
mod glm;
pub(crate) mod optim;

pub use optim::Evaluation;

pub use categorical::{
    betabin_objective, dirmult_objective, multinomial_objective, fit_betabin_logit, fit_dirichlet_multinomial, fit_multinomial_logit, predict_categorical, CategoricalFit,
    CategoricalModel,
};
pub use glm::{
    anscombe_residuals, fit_glm_poisson, normalize_weights, outbreak_weights, predict_glm, reweight_outbreaks, GlmFit,
};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Regression design: covariates, offset and prior weights.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    pub x: DMatrix<f64>,
    pub labels: Vec<String>,
    pub offset: DVector<f64>,
    pub prior_weights: DVector<f64>,
}

impl DesignMatrix {
    pub fn new(x: DMatrix<f64>, labels: Vec<String>) -> Result<Self> {
        let (n, p) = x.shape();
        if labels.len() != p {
            return Err(Error::Dimension(format!("{} labels for {} columns", labels.len(), p)));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("design contains non-finite values".into()));
        }
        Ok(Self { x, labels, offset: DVector::zeros(n), prior_weights: DVector::from_element(n, 1.0) })
    }

    /// Single intercept column.
    pub fn intercept(n: usize) -> Self {
        Self::new(DMatrix::from_element(n, 1, 1.0), vec!["intercept".into()]).expect("valid intercept design")
    }

    /// Builds a design from named column vectors.
    pub fn from_columns(columns: Vec<(String, Vec<f64>)>) -> Result<Self> {
        let n = columns.first().map(|c| c.1.len()).unwrap_or(0);
        if columns.iter().any(|c| c.1.len() != n) {
            return Err(Error::Dimension("design columns differ in length".into()));
        }
        let x = DMatrix::from_fn(n, columns.len(), |r, c| columns[c].1[r]);
        Self::new(x, columns.into_iter().map(|c| c.0).collect())
    }

    pub fn with_offset(mut self, offset: Vec<f64>) -> Result<Self> {
        if offset.len() != self.nrows() {
            return Err(Error::Dimension(format!("offset length {} for {} rows", offset.len(), self.nrows())));
        }
        self.offset = DVector::from_vec(offset);
        Ok(self)
    }

    pub fn with_weights(mut self, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != self.nrows() {
            return Err(Error::Dimension(format!("weights length {} for {} rows", weights.len(), self.nrows())));
        }
        if weights.iter().any(|&w| !(w >= 0.0 && w.is_finite())) {
            return Err(Error::Data("prior weights must be finite and nonnegative".into()));
        }
        self.prior_weights = DVector::from_vec(weights);
        Ok(self)
    }

    pub fn nrows(&self) -> usize {
        self.x.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.x.ncols()
    }

    pub fn column_index(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    /// Intercept, optional linear trend and `s` cosine/sine pairs of the
    /// given period, evaluated at 1-based positions `row + 1`.
    pub fn harmonic(rows: &[usize], s: usize, trend: bool, period: f64) -> Self {
        let mut labels = vec!["intercept".to_string()];
        if trend {
            labels.push("trend".into());
        }
        for k in 1..=s {
            labels.push(format!("cos{k}"));
            labels.push(format!("sin{k}"));
        }
        let vals: Vec<Vec<f64>> = rows.iter().map(|&r| harmonic_row((r + 1) as f64, s, trend, period)).collect();
        let x = DMatrix::from_fn(rows.len(), labels.len(), |i, j| vals[i][j]);
        Self::new(x, labels).expect("finite harmonic design")
    }

    /// Copy of the design without the given column.
    pub fn without_column(&self, col: usize) -> Self {
        let mut out = self.clone();
        out.x = self.x.clone().remove_column(col);
        out.labels.remove(col);
        out
    }
}

/// One row of [`DesignMatrix::harmonic`] at position `t`.
pub fn harmonic_row(t: f64, s: usize, trend: bool, period: f64) -> Vec<f64> {
    let mut row = vec![1.0];
    if trend {
        row.push(t);
    }
    for k in 1..=s {
        let a = 2.0 * std::f64::consts::PI * k as f64 * t / period;
        row.push(a.cos());
        row.push(a.sin());
    }
    row
}

/// Indices of linearly independent columns, scanning left to right and
/// dropping each column that lies in the span of those already kept.
/// Only rows with positive weight take part.
pub(crate) fn independent_columns(x: &DMatrix<f64>, weights: &DVector<f64>) -> Vec<usize> {
    let rows: Vec<usize> = (0..x.nrows()).filter(|&r| weights[r] > 0.0).collect();
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut kept = Vec::new();
    for c in 0..x.ncols() {
        let mut v = DVector::from_iterator(rows.len(), rows.iter().map(|&r| x[(r, c)]));
        let norm0 = v.norm();
        if norm0 == 0.0 {
            continue;
        }
        // two passes of modified Gram-Schmidt
        for _ in 0..2 {
            for b in &basis {
                let proj = b.dot(&v);
                v.axpy(-proj, b, 1.0);
            }
        }
        let norm = v.norm();
        if norm > 1e-7 * norm0 {
            basis.push(v / norm);
            kept.push(c);
        }
    }
    kept
}
