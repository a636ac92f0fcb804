//! The global convergence bound and its check on an identical-client run.

use super::constants::{ProblemConstants, QuadraticProblem};
use super::report::VerificationReport;
use crate::data::gen_regression_data;
use crate::delay::ScheduleKind;
use crate::error::{AflError, Result};
use crate::model::ModelKind;
use crate::orchestrator::{self, ExperimentConfig, Federation, Mode};
use crate::params::ParamVector;

/// `12 l delta^2/(CI) + 18 L l^2 delta^2/(CI) + 18 L l^2 nu*^2 / C`
pub fn residual_floor(k: &ProblemConstants, lambda_tilde: f64, c: usize, i: usize) -> f64 {
    let ci = (c * i) as f64;
    let d2 = k.delta.powi(2);
    12.0 * lambda_tilde * d2 / ci
        + 18.0 * k.l * lambda_tilde.powi(2) * d2 / ci
        + 18.0 * k.l * lambda_tilde.powi(2) * k.nu_star.powi(2) / c as f64
}

/// Bound after `rounds` rounds.
pub fn theorem_bound(
    k: &ProblemConstants,
    lambda_tilde: f64,
    c: usize,
    i: usize,
    rounds: f64,
    x0_dist_sq: f64,
) -> Result<f64> {
    let limit = 1.0 / (6.0 * k.l);
    if !(lambda_tilde > 0.0) || lambda_tilde > limit * (1.0 + 1e-12) {
        return Err(AflError::InvalidArgument(format!(
            "effective step {lambda_tilde} must lie in (0, 1/(6L) = {limit}]"
        )));
    }
    Ok(4.5 * k.mu * x0_dist_sq * (-k.mu * lambda_tilde * rounds / 2.0).exp()
        + residual_floor(k, lambda_tilde, c, i))
}

/// Bound for `1..=rounds` rounds.
pub fn theorem_bound_curve(
    k: &ProblemConstants,
    lambda_tilde: f64,
    c: usize,
    i: usize,
    rounds: usize,
    x0_dist_sq: f64,
) -> Result<Vec<f64>> {
    (1..=rounds)
        .map(|r| theorem_bound(k, lambda_tilde, c, i, r as f64, x0_dist_sq))
        .collect()
}

/// `F(xbar) - F(x*)` where `xbar` after `R` rounds is the average of
/// `x^(0) .. x^(R-1)` with weights `(1 - mu l/2)^-(j+1)`.
pub fn weighted_suboptimality(
    problem: &QuadraticProblem,
    globals: &[ParamVector],
    mu: f64,
    lambda_tilde: f64,
) -> Vec<f64> {
    let q = 1.0 - mu * lambda_tilde / 2.0;
    let mut out = Vec::with_capacity(globals.len().saturating_sub(1));
    let mut avg = match globals.first() {
        Some(x) => x.clone(),
        None => return out,
    };
    out.push(problem.bregman(&avg));
    for (j, x) in globals.iter().enumerate().skip(1).take(globals.len().saturating_sub(2)) {
        // w_j / sum_{k<=j} w_k = (1 - q) / (1 - q^(j+1))
        let share = (1.0 - q) / (1.0 - q.powi(j as i32 + 1));
        let mut step = x.clone();
        step.add_scaled(-1.0, &avg).expect("same dim");
        avg.add_scaled(share, &step).expect("same dim");
        out.push(problem.bregman(&avg));
    }
    out
}

/// Identical-client, full-batch, staleness-free instance.
#[derive(Debug, Clone, PartialEq)]
pub struct TheoremSetup {
    pub clients: usize,
    pub local_epochs: usize,
    pub rounds: usize,
    pub n: usize,
    pub d: usize,
    pub data_seed: u64,
    pub seed: u64,
}

impl Default for TheoremSetup {
    fn default() -> Self {
        Self {
            clients: 2,
            local_epochs: 3,
            rounds: 300,
            n: 500,
            d: 5,
            data_seed: 3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TheoremOutcome {
    pub constants: ProblemConstants,
    pub lambda_tilde: f64,
    pub bound: Vec<f64>,
    pub empirical: Vec<f64>,
    pub report: VerificationReport,
}

impl TheoremSetup {
    pub fn run(&self) -> Result<TheoremOutcome> {
        let raw = gen_regression_data(self.n, self.d, self.data_seed)?;
        // unit-variance features
        let data = raw.scale_features((12.0f64).sqrt() / 10.0);
        let shards = vec![data.clone(); self.clients];
        let kind = ModelKind::regression();
        let problem = QuadraticProblem::from_shards(&shards, &kind)?;
        let k = problem.constants(self.n, &[]);
        let lambda_tilde = 1.0 / (6.0 * k.l);
        let lambda = lambda_tilde / (self.clients * self.local_epochs) as f64;
        let cfg = ExperimentConfig {
            clients: self.clients,
            rounds: self.rounds,
            local_epochs: self.local_epochs,
            gamma0: lambda,
            alpha: 0.0,
            lr_schedule: ScheduleKind::Constant,
            batch: self.n,
            n: self.n,
            d: self.d,
            fraction: 1.0,
            tau_max: 0,
            l2_mu: 0.0,
            seed: self.seed,
            mode: Mode::Afl,
            ..ExperimentConfig::regression_table()
        };
        let fed = Federation::from_shards(data, shards, vec![1.0; self.clients])?;
        let trace = orchestrator::run_on(&cfg, &fed)?;
        let x0 = trace.globals[0].dist_sq(&k.x_star);
        let bound = theorem_bound_curve(&k, lambda_tilde, self.clients, self.local_epochs, self.rounds, x0)?;
        let empirical = weighted_suboptimality(&problem, &trace.globals, k.mu, lambda_tilde);
        let mut worst = 0.0f64;
        let mut violations = 0;
        for (e, b) in empirical.iter().zip(&bound) {
            let ratio = e / b;
            worst = worst.max(ratio);
            if ratio > 1.0 {
                violations += 1;
            }
        }
        let report = VerificationReport::bound("theorem-domination", 1.0, worst, 0.0, self.rounds)
            .note(format!("{violations} of {} rounds above the bound", bound.len()))
            .note(format!("L/mu = {:.4}", k.l / k.mu))
            .note("averaging weights grow as (1 - mu l/2)^-(j+1)");
        Ok(TheoremOutcome {
            constants: k,
            lambda_tilde,
            bound,
            empirical,
            report,
        })
    }
}
