//! Variance of the mean of a random `s`-sample drawn from a finite population.

use itertools::Itertools;
use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::report::VerificationReport;
use crate::error::{AflError, Result};
use crate::seed;

/// Populations up to this size are enumerated exactly by default.
pub const EXACT_MAX_POPULATION: usize = 8;
const EXACT_MAX_TUPLES: usize = 20_000_000;
const CHUNK: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplingMode {
    With,
    Without,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Exact,
    MonteCarlo { trials: usize, seed: u64 },
    /// Exact when `m <= 8`, otherwise Monte Carlo.
    Auto { trials: usize, seed: u64 },
}

pub fn population_mean(pop: &[Vec<f64>]) -> Vec<f64> {
    let dim = pop[0].len();
    let mut mean = vec![0.0; dim];
    for v in pop {
        for (m, x) in mean.iter_mut().zip(v) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= pop.len() as f64);
    mean
}

/// `nu^2 = (1/m) sum ||x_i - mean||^2`
pub fn population_variance(pop: &[Vec<f64>]) -> f64 {
    let mean = population_mean(pop);
    pop.iter().map(|v| sq_dist(v, &mean)).sum::<f64>() / pop.len() as f64
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// `(m - s) nu^2 / (s (m - 1))`
pub fn variance_without_replacement(nu2: f64, m: usize, s: usize) -> f64 {
    (m - s) as f64 * nu2 / (s as f64 * (m - 1) as f64)
}

/// `nu^2 / s`
pub fn variance_with_replacement(nu2: f64, s: usize) -> f64 {
    nu2 / s as f64
}

fn validate(pop: &[Vec<f64>], s: usize, mode: SamplingMode) -> Result<()> {
    let m = pop.len();
    if m == 0 || pop.iter().any(|v| v.len() != pop[0].len()) {
        return Err(AflError::InvalidArgument("population must be non-empty and of one dimension".into()));
    }
    if s == 0 {
        return Err(AflError::InvalidArgument("sample size must be at least 1".into()));
    }
    if mode == SamplingMode::Without {
        if s > m {
            return Err(AflError::InvalidArgument(format!(
                "cannot draw {s} of {m} without replacement"
            )));
        }
        if m < 2 {
            return Err(AflError::InvalidArgument("need m >= 2 without replacement".into()));
        }
    }
    Ok(())
}

fn sample_error(pop: &[Vec<f64>], idx: &[usize], mean: &[f64], buf: &mut [f64]) -> f64 {
    buf.iter_mut().for_each(|b| *b = 0.0);
    for &i in idx {
        for (b, x) in buf.iter_mut().zip(&pop[i]) {
            *b += x;
        }
    }
    let s = idx.len() as f64;
    buf.iter().zip(mean).map(|(b, m)| (b / s - m).powi(2)).sum()
}

fn exact(pop: &[Vec<f64>], s: usize, mode: SamplingMode, mean: &[f64]) -> (f64, usize) {
    let m = pop.len();
    let mut buf = vec![0.0; mean.len()];
    let (mut sum, mut count) = (0.0, 0usize);
    let mut visit = |idx: &[usize]| {
        sum += sample_error(pop, idx, mean, &mut buf);
        count += 1;
    };
    match mode {
        SamplingMode::Without => (0..m).combinations(s).for_each(|c| visit(&c)),
        SamplingMode::With => (0..s)
            .map(|_| 0..m)
            .multi_cartesian_product()
            .for_each(|c| visit(&c)),
    }
    (sum / count as f64, count)
}

fn monte_carlo(
    pop: &[Vec<f64>],
    s: usize,
    mode: SamplingMode,
    mean: &[f64],
    trials: usize,
    seed: u64,
) -> (f64, f64) {
    let m = pop.len();
    let parts: Vec<(f64, f64)> = (0..trials.div_ceil(CHUNK))
        .into_par_iter()
        .map(|k| {
            let mut rng = seed::stream(seed, "sampling", &[k as u64]);
            let mut buf = vec![0.0; mean.len()];
            let mut idx = vec![0usize; s];
            let (mut sum, mut sq) = (0.0, 0.0);
            for _ in 0..CHUNK.min(trials - k * CHUNK) {
                match mode {
                    SamplingMode::Without => {
                        idx.clear();
                        idx.extend(index::sample(&mut rng, m, s).iter());
                    }
                    SamplingMode::With => idx.iter_mut().for_each(|i| *i = rng.random_range(0..m)),
                }
                let e = sample_error(pop, &idx, mean, &mut buf);
                sum += e;
                sq += e * e;
            }
            (sum, sq)
        })
        .collect();
    let (sum, sq) = parts.into_iter().fold((0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
    let n = trials as f64;
    let est = sum / n;
    let se = ((sq / n - est * est).max(0.0) / (n - 1.0)).sqrt();
    (est, se)
}

/// Compares `E||mean(sample) - mean(population)||^2` against the analytic
/// formula. Exact paths use an absolute tolerance of 1e-12; Monte Carlo
/// paths pass within 3 standard errors.
pub fn verify_sampling_variance(
    pop: &[Vec<f64>],
    s: usize,
    mode: SamplingMode,
    method: Method,
) -> Result<VerificationReport> {
    validate(pop, s, mode)?;
    let m = pop.len();
    let nu2 = population_variance(pop);
    let mean = population_mean(pop);
    let analytic = match mode {
        SamplingMode::Without => variance_without_replacement(nu2, m, s),
        SamplingMode::With => variance_with_replacement(nu2, s),
    };
    let tuples = match mode {
        SamplingMode::Without => binomial(m, s),
        SamplingMode::With => (m as f64).powi(s as i32).min(usize::MAX as f64) as usize,
    };
    let use_exact = match method {
        Method::Exact => true,
        Method::MonteCarlo { .. } => false,
        Method::Auto { .. } => m <= EXACT_MAX_POPULATION && tuples <= EXACT_MAX_TUPLES,
    };
    let name = format!(
        "sampling-{}-m{m}-s{s}",
        match mode {
            SamplingMode::With => "with",
            SamplingMode::Without => "without",
        }
    );
    if use_exact {
        if tuples > EXACT_MAX_TUPLES {
            return Err(AflError::InvalidArgument(format!("{tuples} samples is too many to enumerate")));
        }
        let (est, count) = exact(pop, s, mode, &mean);
        return Ok(VerificationReport::equality(name, analytic, est, 1e-12, count).note("exact enumeration"));
    }
    let (trials, seed) = match method {
        Method::MonteCarlo { trials, seed } | Method::Auto { trials, seed } => (trials, seed),
        Method::Exact => unreachable!(),
    };
    if trials < 2 {
        return Err(AflError::InvalidArgument("need at least 2 trials".into()));
    }
    let (est, se) = monte_carlo(pop, s, mode, &mean, trials, seed);
    Ok(VerificationReport::equality(name, analytic, est, 3.0 * se, trials)
        .with_std_error(se)
        .note("monte carlo"))
}

fn binomial(n: usize, k: usize) -> usize {
    let k = k.min(n - k);
    (0..k).fold(1usize, |acc, i| acc.saturating_mul(n - i) / (i + 1))
}
