//! Problem constants of a federated ridge-regression instance.
//!
//! Every client objective is the quadratic `F_c(x) = x'H_c x/2 - b_c'x + c_c`
//! in the augmented coordinates `x = [w; b]`, and the global objective is the
//! unweighted client mean.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{AflError, Result};
use crate::model::{ModelKind, ModelTag};
use crate::params::ParamVector;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemConstants {
    pub mu: f64,
    pub l: f64,
    /// Bound on the standard deviation of a mini-batch gradient.
    pub delta: f64,
    /// `nu*^2 = mean_c ||grad F_c(x*)||^2`, stored as its square root.
    pub nu_star: f64,
    pub x_star: ParamVector,
    pub f_star: f64,
}

#[derive(Debug, Clone)]
struct Quadratic {
    h: DMatrix<f64>,
    b: DVector<f64>,
    c: f64,
}

impl Quadratic {
    fn value(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.h * x)) - self.b.dot(x) + self.c
    }

    fn grad(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.h * x - &self.b
    }
}

#[derive(Debug, Clone)]
pub struct QuadraticProblem {
    clients: Vec<Quadratic>,
    shards: Vec<Dataset>,
    kind: ModelKind,
    h_mean: DMatrix<f64>,
    x_star: DVector<f64>,
}

fn augmented(x: &[f64]) -> DVector<f64> {
    DVector::from_iterator(x.len() + 1, x.iter().copied().chain(std::iter::once(1.0)))
}

fn to_vec(p: &ParamVector) -> DVector<f64> {
    DVector::from_vec(p.to_flat())
}

fn to_params(v: &DVector<f64>) -> ParamVector {
    ParamVector::from_flat(v.as_slice()).expect("non-empty")
}

impl QuadraticProblem {
    pub fn from_shards(shards: &[Dataset], kind: &ModelKind) -> Result<Self> {
        if kind.tag != ModelTag::Regression {
            return Err(AflError::InvalidArgument("problem constants need the squared loss".into()));
        }
        if shards.is_empty() || shards.iter().any(Dataset::is_empty) {
            return Err(AflError::InvalidArgument("every shard must be non-empty".into()));
        }
        let p = shards[0].dim() + 1;
        let clients: Vec<Quadratic> = shards
            .iter()
            .map(|s| {
                let n = s.len() as f64;
                let mut h = DMatrix::zeros(p, p);
                let mut b = DVector::zeros(p);
                let mut c = 0.0;
                for i in 0..s.len() {
                    let z = augmented(s.row(i));
                    let y = s.target(i);
                    h.syger(1.0 / n, &z, &z, 1.0);
                    b.axpy(y / n, &z, 1.0);
                    c += 0.5 * y * y / n;
                }
                for k in 0..p - 1 {
                    h[(k, k)] += kind.l2_mu;
                }
                h.fill_upper_triangle_with_lower_triangle();
                Quadratic { h, b, c }
            })
            .collect();
        let m = clients.len() as f64;
        let h_mean = clients.iter().fold(DMatrix::zeros(p, p), |acc, q| acc + &q.h) / m;
        let b_mean = clients.iter().fold(DVector::zeros(p), |acc, q| acc + &q.b) / m;
        let x_star = h_mean
            .clone()
            .cholesky()
            .ok_or_else(|| AflError::InvalidArgument("global objective is not strongly convex".into()))?
            .solve(&b_mean);
        Ok(Self {
            clients,
            shards: shards.to_vec(),
            kind: *kind,
            h_mean,
            x_star,
        })
    }

    pub fn num_clients(&self) -> usize {
        self.clients.len()
    }

    pub fn x_star(&self) -> ParamVector {
        to_params(&self.x_star)
    }

    pub fn client_objective(&self, c: usize, x: &ParamVector) -> f64 {
        self.clients[c].value(&to_vec(x))
    }

    pub fn client_grad(&self, c: usize, x: &ParamVector) -> ParamVector {
        to_params(&self.clients[c].grad(&to_vec(x)))
    }

    pub fn objective(&self, x: &ParamVector) -> f64 {
        let v = to_vec(x);
        self.clients.iter().map(|q| q.value(&v)).sum::<f64>() / self.clients.len() as f64
    }

    /// `F(x) - F(x*) = (x - x*)' H (x - x*) / 2`, free of cancellation.
    pub fn bregman(&self, x: &ParamVector) -> f64 {
        let e = to_vec(x) - &self.x_star;
        0.5 * e.dot(&(&self.h_mean * &e))
    }

    /// `(lambda_min, lambda_max)` of client `c`'s Hessian.
    pub fn client_spectrum(&self, c: usize) -> (f64, f64) {
        let ev = SymmetricEigen::new(self.clients[c].h.clone()).eigenvalues;
        (ev.min(), ev.max())
    }

    /// Variance of a `batch`-sample mini-batch gradient drawn without
    /// replacement from client `c`'s shard, at `x`.
    pub fn minibatch_variance(&self, c: usize, x: &ParamVector, batch: usize) -> f64 {
        let shard = &self.shards[c];
        let n = shard.len();
        let b = batch.min(n);
        if b >= n {
            return 0.0;
        }
        let mut grads = Vec::with_capacity(n);
        let mut mean = ParamVector::zeros(x.dim());
        for i in 0..n {
            let mut g = ParamVector::zeros(x.dim());
            self.kind.accumulate_data_grad(x, shard.row(i), shard.target(i), 1.0, &mut g);
            mean.add_scaled(1.0 / n as f64, &g).expect("same dim");
            grads.push(g);
        }
        let sigma2 = grads.iter().map(|g| g.dist_sq(&mean)).sum::<f64>() / n as f64;
        sigma2 * (n - b) as f64 / (b as f64 * (n - 1) as f64)
    }

    /// Measures `mu`, `L`, `nu*` and `delta`. `delta^2` is the largest
    /// mini-batch variance over all clients and the given sample points.
    pub fn constants(&self, batch: usize, sample_points: &[ParamVector]) -> ProblemConstants {
        let (mut mu, mut l) = (f64::INFINITY, 0.0f64);
        for c in 0..self.num_clients() {
            let (lo, hi) = self.client_spectrum(c);
            mu = mu.min(lo);
            l = l.max(hi);
        }
        let nu2 = self
            .clients
            .iter()
            .map(|q| q.grad(&self.x_star).norm_squared())
            .sum::<f64>()
            / self.num_clients() as f64;
        let x_star = self.x_star();
        let mut delta2 = 0.0f64;
        for x in sample_points.iter().chain(std::iter::once(&x_star)) {
            for c in 0..self.num_clients() {
                delta2 = delta2.max(self.minibatch_variance(c, x, batch));
            }
        }
        ProblemConstants {
            mu,
            l,
            delta: delta2.sqrt(),
            nu_star: nu2.sqrt(),
            f_star: self.objective(&x_star),
            x_star,
        }
    }
}
