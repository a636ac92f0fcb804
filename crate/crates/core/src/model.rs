//! Per-sample losses and (sub)gradients for the two convex objectives.
//!
//! Both objectives carry an optional ridge term `(l2_mu / 2) ||w||^2` on the
//! weights, never the bias.

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, TaskKind};
use crate::error::{AflError, Result};
use crate::params::ParamVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelTag {
    Regression,
    Svm,
}

impl ModelTag {
    pub fn task(self) -> TaskKind {
        match self {
            ModelTag::Regression => TaskKind::Regression,
            ModelTag::Svm => TaskKind::Classification,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelKind {
    pub tag: ModelTag,
    pub l2_mu: f64,
}

impl ModelKind {
    pub fn new(tag: ModelTag, l2_mu: f64) -> Result<Self> {
        if !(l2_mu >= 0.0 && l2_mu.is_finite()) {
            return Err(AflError::InvalidArgument(format!("l2_mu must be >= 0, got {l2_mu}")));
        }
        Ok(Self { tag, l2_mu })
    }

    pub fn regression() -> Self {
        Self {
            tag: ModelTag::Regression,
            l2_mu: 0.0,
        }
    }

    pub fn svm() -> Self {
        Self {
            tag: ModelTag::Svm,
            l2_mu: 0.0,
        }
    }

    pub fn loss(&self, p: &ParamVector, x: &[f64], y: f64) -> Result<f64> {
        match self.tag {
            ModelTag::Regression => mse_loss(p, x, y, self.l2_mu),
            ModelTag::Svm => hinge_loss(p, x, y, self.l2_mu),
        }
    }

    pub fn grad(&self, p: &ParamVector, x: &[f64], y: f64) -> Result<ParamVector> {
        match self.tag {
            ModelTag::Regression => mse_grad(p, x, y, self.l2_mu),
            ModelTag::Svm => hinge_subgrad(p, x, y, self.l2_mu),
        }
    }

    /// Data part of the per-sample gradient, accumulated into `out` with
    /// weight `scale`. The ridge term is left to the caller.
    pub(crate) fn accumulate_data_grad(
        &self,
        p: &ParamVector,
        x: &[f64],
        y: f64,
        scale: f64,
        out: &mut ParamVector,
    ) {
        let f = p.predict(x);
        let coeff = match self.tag {
            ModelTag::Regression => -(y - f),
            ModelTag::Svm => {
                if y * f < 1.0 {
                    -y
                } else {
                    0.0
                }
            }
        };
        if coeff == 0.0 {
            return;
        }
        let c = scale * coeff;
        for (o, xi) in out.weights.iter_mut().zip(x) {
            *o += c * xi;
        }
        out.bias += c;
    }

    /// Mean loss over every row of `data`.
    pub fn mean_loss(&self, p: &ParamVector, data: &Dataset) -> Result<f64> {
        if data.is_empty() {
            return Err(AflError::InvalidArgument("empty dataset".into()));
        }
        check_dim(p, data.row(0))?;
        let mut sum = 0.0;
        for i in 0..data.len() {
            sum += self.data_loss(p, data.row(i), data.target(i));
        }
        Ok(sum / data.len() as f64 + self.ridge(p))
    }

    /// Mean gradient over every row of `data`.
    pub fn full_grad(&self, p: &ParamVector, data: &Dataset) -> Result<ParamVector> {
        if data.is_empty() {
            return Err(AflError::InvalidArgument("empty dataset".into()));
        }
        check_dim(p, data.row(0))?;
        let mut g = ParamVector::zeros(p.dim());
        let scale = 1.0 / data.len() as f64;
        for i in 0..data.len() {
            self.accumulate_data_grad(p, data.row(i), data.target(i), scale, &mut g);
        }
        self.add_ridge_grad(p, &mut g);
        Ok(g)
    }

    pub(crate) fn data_loss(&self, p: &ParamVector, x: &[f64], y: f64) -> f64 {
        let f = p.predict(x);
        match self.tag {
            ModelTag::Regression => 0.5 * (y - f).powi(2),
            ModelTag::Svm => (1.0 - y * f).max(0.0),
        }
    }

    pub(crate) fn ridge(&self, p: &ParamVector) -> f64 {
        if self.l2_mu == 0.0 {
            return 0.0;
        }
        0.5 * self.l2_mu * p.weights.iter().map(|w| w * w).sum::<f64>()
    }

    pub(crate) fn add_ridge_grad(&self, p: &ParamVector, g: &mut ParamVector) {
        if self.l2_mu == 0.0 {
            return;
        }
        for (gi, wi) in g.weights.iter_mut().zip(&p.weights) {
            *gi += self.l2_mu * wi;
        }
    }
}

fn check_dim(p: &ParamVector, x: &[f64]) -> Result<()> {
    if p.dim() != x.len() {
        return Err(AflError::DimensionMismatch {
            expected: p.dim(),
            got: x.len(),
        });
    }
    Ok(())
}

fn check_label(y: f64) -> Result<()> {
    if y == 1.0 || y == -1.0 {
        Ok(())
    } else {
        Err(AflError::InvalidLabel(y))
    }
}

/// `½(y − (w·x + b))² + (l2_mu/2)‖w‖²`
pub fn mse_loss(p: &ParamVector, x: &[f64], y: f64, l2_mu: f64) -> Result<f64> {
    check_dim(p, x)?;
    let kind = ModelKind {
        tag: ModelTag::Regression,
        l2_mu,
    };
    Ok(kind.data_loss(p, x, y) + kind.ridge(p))
}

pub fn mse_grad(p: &ParamVector, x: &[f64], y: f64, l2_mu: f64) -> Result<ParamVector> {
    check_dim(p, x)?;
    let kind = ModelKind {
        tag: ModelTag::Regression,
        l2_mu,
    };
    let mut g = ParamVector::zeros(p.dim());
    kind.accumulate_data_grad(p, x, y, 1.0, &mut g);
    kind.add_ridge_grad(p, &mut g);
    Ok(g)
}

/// `max(0, 1 − y(w·x + b)) + (l2_mu/2)‖w‖²`, `y ∈ {−1, +1}`.
pub fn hinge_loss(p: &ParamVector, x: &[f64], y: f64, l2_mu: f64) -> Result<f64> {
    check_dim(p, x)?;
    check_label(y)?;
    let kind = ModelKind {
        tag: ModelTag::Svm,
        l2_mu,
    };
    Ok(kind.data_loss(p, x, y) + kind.ridge(p))
}

/// Subgradient of [`hinge_loss`]. At the kink `y·f(x) = 1` the zero-loss
/// branch is returned.
pub fn hinge_subgrad(p: &ParamVector, x: &[f64], y: f64, l2_mu: f64) -> Result<ParamVector> {
    check_dim(p, x)?;
    check_label(y)?;
    let kind = ModelKind {
        tag: ModelTag::Svm,
        l2_mu,
    };
    let mut g = ParamVector::zeros(p.dim());
    kind.accumulate_data_grad(p, x, y, 1.0, &mut g);
    kind.add_ridge_grad(p, &mut g);
    Ok(g)
}
