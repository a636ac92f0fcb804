//! Client drift and the one-round recursion, measured on recorded runs.

use super::constants::{ProblemConstants, QuadraticProblem};
use super::report::{CheckKind, VerificationReport};
use crate::delay::ScheduleKind;
use crate::error::{AflError, Result};
use crate::model::ModelTag;
use crate::orchestrator::{self, ExperimentConfig, Federation, Mode, TrainingTrace};
use crate::params::ParamVector;

/// `||x_{c,i} - x^(j)||^2` for every round `j`, participant `c` and local
/// iterate `i = 0..=steps`.
pub fn drift_terms(trace: &TrainingTrace) -> Result<Vec<Vec<Vec<f64>>>> {
    trace
        .clients
        .iter()
        .zip(&trace.globals)
        .map(|(round, global)| {
            round
                .iter()
                .map(|c| {
                    let it = c.iterates.as_ref().ok_or(AflError::MissingIterates)?;
                    Ok(it.iter().map(|x| x.dist_sq(global)).collect())
                })
                .collect()
        })
        .collect()
}

/// `E_j = sum_c sum_{i < steps} ||x_{c,i} - x^(j)||^2` per round.
pub fn measure_client_drift(trace: &TrainingTrace) -> Result<Vec<f64>> {
    Ok(drift_terms(trace)?
        .iter()
        .map(|round| round.iter().map(|t| t[..t.len() - 1].iter().sum::<f64>()).sum())
        .collect())
}

/// Drift measured from each client's own start snapshot `x^(j - tau_c)`.
pub fn measure_local_drift(trace: &TrainingTrace) -> Result<Vec<f64>> {
    trace
        .clients
        .iter()
        .map(|round| {
            let mut sum = 0.0;
            for c in round {
                let it = c.iterates.as_ref().ok_or(AflError::MissingIterates)?;
                sum += it[..it.len() - 1].iter().map(|x| x.dist_sq(&it[0])).sum::<f64>();
            }
            Ok(sum)
        })
        .collect()
}

/// Per-round mean of `f(trace)` across traces of equal length.
pub fn mean_across<F>(traces: &[TrainingTrace], f: F) -> Result<Vec<f64>>
where
    F: Fn(&TrainingTrace) -> Result<Vec<f64>>,
{
    let first = traces
        .first()
        .ok_or_else(|| AflError::InvalidArgument("no traces".into()))?;
    let mut acc = vec![0.0; first.records.len()];
    for t in traces {
        let v = f(t)?;
        if v.len() != acc.len() {
            return Err(AflError::InvalidArgument("traces differ in length".into()));
        }
        acc.iter_mut().zip(v).for_each(|(a, x)| *a += x);
    }
    acc.iter_mut().for_each(|a| *a /= traces.len() as f64);
    Ok(acc)
}

pub fn step_size_limit(k: &ProblemConstants, j: usize, i: usize) -> f64 {
    1.0 / (6.0 * k.l * j as f64 * i as f64)
}

fn check_step(k: &ProblemConstants, lambda: f64, j: usize, i: usize) -> Result<()> {
    let limit = step_size_limit(k, j, i);
    if lambda > limit * (1.0 + 1e-12) {
        return Err(AflError::StepSizeTooLarge { lambda, limit });
    }
    Ok(())
}

/// `(9/4)J^2 I^2 l^2 delta^2 + (9/4)J^2 I^3 l^2 nu*^2 + 3L J^3 I^3 l^2 D_F`
pub fn drift_bound(k: &ProblemConstants, lambda: f64, j: usize, i: usize, d_f: f64) -> f64 {
    let (j, i) = (j as f64, i as f64);
    let l2 = lambda * lambda;
    2.25 * j * j * i * i * l2 * k.delta.powi(2)
        + 2.25 * j * j * i.powi(3) * l2 * k.nu_star.powi(2)
        + 3.0 * k.l * j.powi(3) * i.powi(3) * l2 * d_f
}

/// Seed-averaged drift against its bound at every round; the report's
/// empirical value is the largest ratio drift / bound.
pub fn check_drift_bound(
    traces: &[TrainingTrace],
    problem: &QuadraticProblem,
    k: &ProblemConstants,
    lambda: f64,
    j: usize,
    i: usize,
) -> Result<VerificationReport> {
    check_step(k, lambda, j, i)?;
    let drift = mean_across(traces, measure_client_drift)?;
    let d_f = mean_across(traces, |t| Ok(t.globals[..t.records.len()].iter().map(|x| problem.bregman(x)).collect()))?;
    let mut worst = 0.0f64;
    let mut violations = 0;
    for (e, d) in drift.iter().zip(&d_f) {
        let rhs = drift_bound(k, lambda, j, i, *d);
        let ratio = if rhs > 0.0 {
            e / rhs
        } else if *e > 0.0 {
            f64::INFINITY
        } else {
            0.0
        };
        worst = worst.max(ratio);
        if ratio > 1.0 + 1e-9 {
            violations += 1;
        }
    }
    Ok(
        VerificationReport::bound("drift-bound", 1.0, worst, 1e-9, traces.len())
            .note(format!("{violations} of {} rounds violate the bound", drift.len())),
    )
}

/// Right-hand side of the one-round recursion for a single trace and round.
#[allow(clippy::too_many_arguments)]
fn recursion_rhs(
    k: &ProblemConstants,
    lambda: f64,
    j: usize,
    i: usize,
    c: usize,
    dist_sq: f64,
    d_f: f64,
    local_drift: f64,
) -> f64 {
    let (jf, ifl, cf) = (j as f64, i as f64, c as f64);
    let sampling = if j == c { 0.0 } else { (cf - jf) / (jf * (cf - 1.0)) };
    (1.0 - k.mu * jf * ifl * lambda / 2.0) * dist_sq
        + 4.0 * jf * ifl * lambda * lambda * k.delta.powi(2)
        + 4.0 * jf * jf * ifl * ifl * lambda * lambda * sampling * k.nu_star.powi(2)
        - 2.0 / 3.0 * jf * ifl * lambda * d_f
        + 8.0 / 3.0 * k.l * lambda * local_drift
}

/// Per-round seed-averaged recursion check. `lambda` is the coefficient of
/// the summed local gradients in the global update. A round passes when the mean of
/// `lhs - rhs` over seeds is at most 3 standard errors; the report passes
/// when at least `min_rate` of the rounds do.
#[allow(clippy::too_many_arguments)]
pub fn check_recursion(
    traces: &[TrainingTrace],
    problem: &QuadraticProblem,
    k: &ProblemConstants,
    lambda: f64,
    j: usize,
    i: usize,
    c: usize,
    min_rate: f64,
) -> Result<VerificationReport> {
    check_step(k, lambda, j, i)?;
    if traces.is_empty() {
        return Err(AflError::InvalidArgument("no traces".into()));
    }
    let x_star = &k.x_star;
    let rounds = traces[0].records.len();
    let mut per_seed: Vec<Vec<f64>> = Vec::with_capacity(traces.len());
    for t in traces {
        if t.records.len() != rounds {
            return Err(AflError::InvalidArgument("traces differ in length".into()));
        }
        let local = measure_local_drift(t)?;
        per_seed.push(
            (0..rounds)
                .map(|r| {
                    let lhs = t.globals[r + 1].dist_sq(x_star);
                    let rhs = recursion_rhs(
                        k,
                        lambda,
                        j,
                        i,
                        c,
                        t.globals[r].dist_sq(x_star),
                        problem.bregman(&t.globals[r]),
                        local[r],
                    );
                    lhs - rhs
                })
                .collect(),
        );
    }
    let n = traces.len() as f64;
    let mut passed = 0;
    let mut worst = f64::NEG_INFINITY;
    for r in 0..rounds {
        let mean = per_seed.iter().map(|d| d[r]).sum::<f64>() / n;
        let se = if traces.len() > 1 {
            let var = per_seed.iter().map(|d| (d[r] - mean).powi(2)).sum::<f64>() / (n - 1.0);
            (var / n).sqrt()
        } else {
            0.0
        };
        let scale = traces
            .iter()
            .map(|t| t.globals[r].dist_sq(x_star))
            .sum::<f64>()
            / n;
        // absolute slack for rounding once the iterates sit at x*
        if mean <= 3.0 * se + 1e-12 * scale.max(f64::MIN_POSITIVE) {
            passed += 1;
        }
        worst = worst.max(mean);
    }
    let rate = passed as f64 / rounds as f64;
    Ok(
        VerificationReport::new("recursion", CheckKind::Rate, min_rate, rate, 0.0, traces.len())
            .note(format!("{passed} of {rounds} rounds within 3 standard errors"))
            .note(format!("largest mean excess lhs - rhs = {worst:.3e}"))
            .note("noise coefficient (C-J)/(J(C-1))"),
    )
}

/// Ridge-regression instance for the drift and recursion checks: full-batch
/// local steps, every client participating, step size `1/(6LJI)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TheorySetup {
    pub clients: usize,
    pub local_epochs: usize,
    pub rounds: usize,
    pub seeds: usize,
    pub n: usize,
    pub d: usize,
    pub l2_mu: f64,
    pub zeta: f64,
    pub tau_max: usize,
    pub data_seed: u64,
    /// Step size as a fraction of `1/(6LJI)`.
    pub step_fraction: f64,
}

impl Default for TheorySetup {
    fn default() -> Self {
        Self {
            clients: 4,
            local_epochs: 3,
            rounds: 100,
            seeds: 20,
            n: 2000,
            d: 10,
            l2_mu: 0.1,
            zeta: 0.5,
            tau_max: 2,
            data_seed: 7,
            step_fraction: 1.0,
        }
    }
}

pub struct TheoryRun {
    pub problem: QuadraticProblem,
    pub constants: ProblemConstants,
    pub lambda: f64,
    pub traces: Vec<TrainingTrace>,
    pub config: ExperimentConfig,
}

impl TheorySetup {
    pub fn config(&self, lambda: f64, seed: u64) -> ExperimentConfig {
        ExperimentConfig {
            clients: self.clients,
            rounds: self.rounds,
            local_epochs: self.local_epochs,
            gamma0: lambda,
            alpha: 0.0,
            lr_schedule: ScheduleKind::Constant,
            batch: self.n,
            d: self.d,
            n: self.n,
            fraction: 1.0,
            tau_max: self.tau_max,
            zeta: self.zeta,
            model: ModelTag::Regression,
            l2_mu: self.l2_mu,
            seed,
            data_seed: Some(self.data_seed),
            mode: Mode::Afl,
            min_per_client: Some(32.min(self.n / self.clients)),
            record_iterates: true,
            ..ExperimentConfig::regression_table()
        }
    }

    pub fn run(&self) -> Result<TheoryRun> {
        let federation = Federation::build(&self.config(1.0, 0))?;
        let kind = self.config(1.0, 0).model_kind();
        let problem = QuadraticProblem::from_shards(&federation.shards, &kind)?;
        let constants = problem.constants(self.n, &[ParamVector::zeros(self.d)]);
        let lambda = self.step_fraction * step_size_limit(&constants, self.clients, self.local_epochs);
        let traces = (0..self.seeds as u64)
            .map(|s| orchestrator::run_on(&self.config(lambda, s), &federation))
            .collect::<Result<Vec<_>>>()?;
        Ok(TheoryRun {
            problem,
            constants,
            lambda,
            config: self.config(lambda, 0),
            traces,
        })
    }
}

impl TheoryRun {
    pub fn drift_report(&self) -> Result<VerificationReport> {
        let j = self.config.participants();
        check_drift_bound(&self.traces, &self.problem, &self.constants, self.lambda, j, self.config.local_epochs)
    }

    /// Averaging moves the global model by `(lambda / J) sum_c sum_i g`, so
    /// the recursion is evaluated with the aggregate step `lambda / J`.
    pub fn recursion_report(&self, min_rate: f64) -> Result<VerificationReport> {
        let j = self.config.participants();
        check_recursion(
            &self.traces,
            &self.problem,
            &self.constants,
            self.lambda / j as f64,
            j,
            self.config.local_epochs,
            self.config.clients,
            min_rate,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_regression_data, Dataset};
    use crate::model::ModelKind;

    fn one_client_trace(lr: f64, rounds: usize, epochs: usize) -> (TrainingTrace, Dataset) {
        let data = gen_regression_data(50, 2, 3).unwrap();
        let fed = Federation::from_shards(data.clone(), vec![data.clone()], vec![1.0]).unwrap();
        let cfg = ExperimentConfig {
            clients: 1,
            rounds,
            local_epochs: epochs,
            gamma0: lr,
            alpha: 0.0,
            lr_schedule: ScheduleKind::Constant,
            batch: 50,
            fraction: 1.0,
            tau_max: 0,
            record_iterates: true,
            ..ExperimentConfig::regression_table()
        };
        (orchestrator::run_on(&cfg, &fed).unwrap(), data)
    }

    #[test]
    fn zero_step_without_staleness_has_no_drift() {
        let (t, _) = one_client_trace(1e-300, 5, 1);
        assert!(measure_client_drift(&t).unwrap().iter().all(|&e| e == 0.0));
    }

    #[test]
    fn first_step_contribution_is_lambda_squared_grad_norm() {
        let lr = 0.003;
        let (t, data) = one_client_trace(lr, 3, 2);
        let terms = drift_terms(&t).unwrap();
        for (j, round) in terms.iter().enumerate() {
            let g = ModelKind::regression().full_grad(&t.globals[j], &data).unwrap();
            assert_eq!(round[0][0], 0.0);
            assert!((round[0][1] - lr * lr * g.norm_sq()).abs() < 1e-12 * g.norm_sq().max(1.0));
        }
    }

    #[test]
    fn drift_matches_recomputation_from_iterates() {
        let setup = TheorySetup {
            rounds: 8,
            seeds: 1,
            n: 400,
            d: 3,
            ..TheorySetup::default()
        };
        let run = setup.run().unwrap();
        let t = &run.traces[0];
        let e = measure_client_drift(t).unwrap();
        for (j, round) in t.clients.iter().enumerate() {
            let mut brute = 0.0;
            for c in round {
                let it = c.iterates.as_ref().unwrap();
                for x in &it[..it.len() - 1] {
                    for (a, b) in x.to_flat().iter().zip(t.globals[j].to_flat()) {
                        brute += (a - b) * (a - b);
                    }
                }
            }
            assert!((e[j] - brute).abs() <= 1e-12 * brute.max(1.0));
        }
    }

    #[test]
    fn missing_iterates_is_an_error() {
        let data = gen_regression_data(20, 2, 1).unwrap();
        let fed = Federation::from_shards(data.clone(), vec![data], vec![1.0]).unwrap();
        let cfg = ExperimentConfig {
            clients: 1,
            rounds: 2,
            fraction: 1.0,
            local_epochs: 1,
            ..ExperimentConfig::regression_table()
        };
        let t = orchestrator::run_on(&cfg, &fed).unwrap();
        assert!(matches!(measure_client_drift(&t), Err(AflError::MissingIterates)));
    }

    #[test]
    fn oversized_step_is_rejected() {
        let setup = TheorySetup {
            rounds: 2,
            seeds: 1,
            n: 400,
            d: 3,
            ..TheorySetup::default()
        };
        let run = setup.run().unwrap();
        let err = check_drift_bound(&run.traces, &run.problem, &run.constants, run.lambda * 2.0, 4, 3).unwrap_err();
        assert!(err.to_string().contains("step size exceeds 1/(6LJI)"));
    }

    #[test]
    fn identical_clients_full_batch_drift_bound() {
        // delta = 0 and nu* = 0: the bound reduces to 3 L J^3 I^3 l^2 D_F
        let data = gen_regression_data(120, 3, 11).unwrap();
        let shards = vec![data.clone(); 3];
        let kind = ModelKind::new(ModelTag::Regression, 0.1).unwrap();
        let problem = QuadraticProblem::from_shards(&shards, &kind).unwrap();
        let k = problem.constants(120, &[]);
        assert_eq!(k.delta, 0.0);
        assert!(k.nu_star < 1e-9);
        let lambda = step_size_limit(&k, 3, 2);
        let fed = Federation::from_shards(data, shards, vec![1.0; 3]).unwrap();
        let cfg = ExperimentConfig {
            clients: 3,
            rounds: 30,
            local_epochs: 2,
            gamma0: lambda,
            alpha: 0.0,
            lr_schedule: ScheduleKind::Constant,
            batch: 120,
            fraction: 1.0,
            tau_max: 0,
            l2_mu: 0.1,
            record_iterates: true,
            ..ExperimentConfig::regression_table()
        };
        let t = orchestrator::run_on(&cfg, &fed).unwrap();
        let r = check_drift_bound(&[t], &problem, &k, lambda, 3, 2).unwrap();
        assert!(r.pass, "{}", r.summary());
    }

    #[test]
    fn fixed_point_recursion_holds_with_equality() {
        let data = gen_regression_data(60, 2, 4).unwrap();
        let kind = ModelKind::new(ModelTag::Regression, 0.1).unwrap();
        let problem = QuadraticProblem::from_shards(&[data.clone()], &kind).unwrap();
        let k = problem.constants(60, &[]);
        let lambda = step_size_limit(&k, 1, 1);
        let x = k.x_star.clone();
        let clients = vec![vec![crate::orchestrator::ClientRound {
            client: 0,
            staleness: 0,
            delay: 1.0,
            steps: 1,
            final_params: x.clone(),
            iterates: Some(vec![x.clone(), x.clone()]),
        }]];
        let t = TrainingTrace {
            records: vec![crate::params::RoundRecord {
                round: 1,
                server_loss: 0.0,
                selected: vec![0],
                delays: [(0, 1.0)].into(),
                tau_t: 0.0,
                gamma_t: lambda,
            }],
            clients,
            globals: vec![x.clone(), x],
        };
        let r = check_recursion(&[t], &problem, &k, lambda, 1, 1, 1, 1.0).unwrap();
        assert!(r.pass, "{}", r.summary());
    }
}
