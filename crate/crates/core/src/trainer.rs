//! Local mini-batch SGD on a client shard.

use rand::seq::SliceRandom;

use crate::data::Dataset;
use crate::error::{AflError, Result};
use crate::model::ModelKind;
use crate::params::ParamVector;
use crate::seed;

/// Parameters above this magnitude abort the run as divergent.
pub const DIVERGENCE_LIMIT: f64 = 1e12;

#[derive(Debug, Clone, PartialEq)]
pub struct LocalRunReport {
    pub final_params: ParamVector,
    pub steps_taken: usize,
    /// Mean training loss over the shard after the last epoch.
    pub final_local_loss: f64,
    /// Mean training loss over the shard after each epoch.
    pub epoch_losses: Vec<f64>,
    /// Every local iterate `x_0 .. x_steps` when requested.
    pub iterates: Option<Vec<ParamVector>>,
}

#[derive(Debug, Clone, Copy)]
pub struct LocalSgd {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub record_iterates: bool,
}

impl LocalSgd {
    pub fn steps_per_run(&self, shard_len: usize) -> usize {
        self.epochs * shard_len.div_ceil(self.batch)
    }

    /// Runs `epochs` passes over `shard`, reshuffling before each pass with a
    /// stream derived from `seed`. The last partial batch is kept and averaged
    /// over its own size.
    pub fn run(
        &self,
        start: &ParamVector,
        shard: &Dataset,
        kind: &ModelKind,
        seed: u64,
    ) -> Result<LocalRunReport> {
        if shard.is_empty() {
            return Err(AflError::InvalidArgument("empty shard".into()));
        }
        if self.epochs == 0 || self.batch == 0 {
            return Err(AflError::InvalidArgument(
                "epochs and batch size must be at least 1".into(),
            ));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(AflError::InvalidArgument(format!("learning rate {}", self.lr)));
        }
        if start.dim() != shard.dim() {
            return Err(AflError::DimensionMismatch {
                expected: shard.dim(),
                got: start.dim(),
            });
        }

        let mut rng = seed::stream(seed, "local-sgd", &[]);
        let mut params = start.clone();
        let mut grad = ParamVector::zeros(start.dim());
        let mut order: Vec<usize> = (0..shard.len()).collect();
        let mut epoch_losses = Vec::with_capacity(self.epochs);
        let mut iterates = self.record_iterates.then(|| {
            let mut v = Vec::with_capacity(self.steps_per_run(shard.len()) + 1);
            v.push(start.clone());
            v
        });
        let mut step = 0usize;

        for _ in 0..self.epochs {
            order.shuffle(&mut rng);
            for batch in order.chunks(self.batch) {
                grad.weights.iter_mut().for_each(|g| *g = 0.0);
                grad.bias = 0.0;
                let scale = 1.0 / batch.len() as f64;
                for &i in batch {
                    kind.accumulate_data_grad(&params, shard.row(i), shard.target(i), scale, &mut grad);
                }
                kind.add_ridge_grad(&params, &mut grad);
                params.add_scaled(-self.lr, &grad)?;
                step += 1;
                if !params.is_finite() || params.max_abs() > DIVERGENCE_LIMIT {
                    return Err(AflError::Divergence {
                        round: None,
                        client: None,
                        step,
                        detail: format!("|param| = {:e}", params.max_abs()),
                    });
                }
                if let Some(it) = iterates.as_mut() {
                    it.push(params.clone());
                }
            }
            let loss = kind.mean_loss(&params, shard)?;
            if !loss.is_finite() {
                return Err(AflError::Divergence {
                    round: None,
                    client: None,
                    step,
                    detail: "non-finite training loss".into(),
                });
            }
            epoch_losses.push(loss);
        }

        Ok(LocalRunReport {
            final_local_loss: *epoch_losses.last().expect("epochs >= 1"),
            final_params: params,
            steps_taken: step,
            epoch_losses,
            iterates,
        })
    }
}

/// Convenience wrapper with the argument order of the component contract.
pub fn local_sgd(
    start: &ParamVector,
    shard: &Dataset,
    kind: &ModelKind,
    epochs: usize,
    batch: usize,
    lr: f64,
    seed: u64,
) -> Result<LocalRunReport> {
    LocalSgd {
        epochs,
        batch,
        lr,
        record_iterates: false,
    }
    .run(start, shard, kind, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_regression_data, TaskKind};

    #[test]
    fn zero_lr_is_a_no_op() {
        let ds = gen_regression_data(70, 3, 1).unwrap();
        let start = ParamVector::new(vec![0.3, -1.0, 2.0], 0.7);
        let rep = local_sgd(&start, &ds, &ModelKind::regression(), 3, 8, 0.0, 5).unwrap();
        assert_eq!(rep.final_params, start);
        assert_eq!(rep.steps_taken, 3 * 9);
        assert_eq!(rep.epoch_losses.len(), 3);
    }

    #[test]
    fn single_sample_step() {
        let ds = Dataset::new(vec![vec![1.0]], vec![1.0], TaskKind::Regression).unwrap();
        let rep = local_sgd(&ParamVector::zeros(1), &ds, &ModelKind::regression(), 1, 1, 0.1, 0)
            .unwrap();
        assert_eq!(rep.final_params, ParamVector::new(vec![0.1], 0.1));
        assert_eq!(rep.steps_taken, 1);
    }

    #[test]
    fn full_batch_matches_gradient_descent_oracle() {
        let ds = gen_regression_data(40, 3, 2).unwrap();
        let kind = ModelKind::regression();
        let lr = 0.01;
        let start = ParamVector::zeros(3);
        let rep = local_sgd(&start, &ds, &kind, 5, ds.len(), lr, 3).unwrap();
        assert_eq!(rep.steps_taken, 5);

        // independent full-batch GD written out longhand
        let (mut w, mut b) = (vec![0.0f64; 3], 0.0f64);
        for _ in 0..5 {
            let mut gw = [0.0f64; 3];
            let mut gb = 0.0;
            for i in 0..ds.len() {
                let x = ds.row(i);
                let r = ds.target(i) - (w[0] * x[0] + w[1] * x[1] + w[2] * x[2] + b);
                for k in 0..3 {
                    gw[k] -= r * x[k] / ds.len() as f64;
                }
                gb -= r / ds.len() as f64;
            }
            for k in 0..3 {
                w[k] -= lr * gw[k];
            }
            b -= lr * gb;
        }
        for k in 0..3 {
            assert!((rep.final_params.weights[k] - w[k]).abs() < 1e-12);
        }
        assert!((rep.final_params.bias - b).abs() < 1e-12);
    }

    #[test]
    fn deterministic_given_seed() {
        let ds = gen_regression_data(100, 4, 3).unwrap();
        let kind = ModelKind::regression();
        let a = local_sgd(&ParamVector::zeros(4), &ds, &kind, 2, 16, 0.001, 9).unwrap();
        let b = local_sgd(&ParamVector::zeros(4), &ds, &kind, 2, 16, 0.001, 9).unwrap();
        let c = local_sgd(&ParamVector::zeros(4), &ds, &kind, 2, 16, 0.001, 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.final_params, c.final_params);
    }

    #[test]
    fn each_epoch_visits_every_sample_once() {
        // one-hot rows: weight i moves only when row i is visited, so n steps
        // touching all n weights means every row was seen exactly once
        let n = 23;
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        let ds = Dataset::new(rows, vec![1.0; n], TaskKind::Regression).unwrap();
        let rep = LocalSgd {
            epochs: 1,
            batch: 1,
            lr: 0.01,
            record_iterates: true,
        }
        .run(&ParamVector::zeros(n), &ds, &ModelKind::regression(), 4)
        .unwrap();
        let it = rep.iterates.unwrap();
        let mut touched = vec![0usize; n];
        for pair in it.windows(2) {
            for (j, (a, b)) in pair[0].weights.iter().zip(&pair[1].weights).enumerate() {
                if a != b {
                    touched[j] += 1;
                }
            }
        }
        assert_eq!(touched, vec![1; n]);
    }

    #[test]
    fn full_batch_mse_is_monotone_below_one_over_l() {
        let ds = gen_regression_data(200, 5, 6).unwrap();
        // L <= mean ||[x;1]||^2 <= 5 * 25 + 1
        let lr = 1.0 / 126.0;
        let rep = local_sgd(&ParamVector::zeros(5), &ds, &ModelKind::regression(), 30, 200, lr, 1)
            .unwrap();
        for pair in rep.epoch_losses.windows(2) {
            assert!(pair[1] <= pair[0]);
        }
    }

    #[test]
    fn divergence_is_reported() {
        let ds = gen_regression_data(50, 3, 7).unwrap();
        let err = local_sgd(&ParamVector::zeros(3), &ds, &ModelKind::regression(), 50, 50, 5.0, 1)
            .unwrap_err();
        assert!(matches!(err, AflError::Divergence { .. }), "{err}");
    }

    #[test]
    fn iterates_are_recorded() {
        let ds = gen_regression_data(10, 2, 8).unwrap();
        let rep = LocalSgd {
            epochs: 2,
            batch: 4,
            lr: 0.01,
            record_iterates: true,
        }
        .run(&ParamVector::zeros(2), &ds, &ModelKind::regression(), 1)
        .unwrap();
        let it = rep.iterates.unwrap();
        assert_eq!(it.len(), rep.steps_taken + 1);
        assert_eq!(it[0], ParamVector::zeros(2));
        assert_eq!(it.last().unwrap(), &rep.final_params);
    }

    #[test]
    fn empty_shard_and_bad_hyperparameters() {
        let ds = gen_regression_data(10, 2, 8).unwrap();
        let kind = ModelKind::regression();
        assert!(local_sgd(&ParamVector::zeros(2), &ds, &kind, 0, 4, 0.1, 1).is_err());
        assert!(local_sgd(&ParamVector::zeros(2), &ds, &kind, 1, 0, 0.1, 1).is_err());
        assert!(local_sgd(&ParamVector::zeros(2), &ds, &kind, 1, 4, -0.1, 1).is_err());
        assert!(local_sgd(&ParamVector::zeros(3), &ds, &kind, 1, 4, 0.1, 1).is_err());
    }
}
