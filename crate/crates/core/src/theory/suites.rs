//! Named groups of checks with their default sizes.

use std::fmt;
use std::str::FromStr;

use rand_distr::{Distribution, StandardNormal};

use super::drift::TheorySetup;
use super::martingale::verify_martingale_identity;
use super::report::VerificationReport;
use super::sampling::{verify_sampling_variance, Method, SamplingMode};
use super::sequential::{verify_closed_form_identity, verify_sequential_participation_bound, Enumeration};
use super::theorem::TheoremSetup;
use crate::error::{AflError, Result};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Martingale,
    Sampling,
    Sequential,
    Drift,
    Recursion,
    Theorem,
    All,
}

impl Suite {
    pub const NAMES: [&'static str; 7] = ["martingale", "sampling", "sequential", "drift", "recursion", "theorem", "all"];
}

impl FromStr for Suite {
    type Err = AflError;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "martingale" => Suite::Martingale,
            "sampling" => Suite::Sampling,
            "sequential" => Suite::Sequential,
            "drift" => Suite::Drift,
            "recursion" => Suite::Recursion,
            "theorem" => Suite::Theorem,
            "all" => Suite::All,
            other => {
                return Err(AflError::InvalidArgument(format!(
                    "unknown suite `{other}`; expected one of {}",
                    Suite::NAMES.join(", ")
                )))
            }
        })
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let i = [
            Suite::Martingale,
            Suite::Sampling,
            Suite::Sequential,
            Suite::Drift,
            Suite::Recursion,
            Suite::Theorem,
            Suite::All,
        ]
        .iter()
        .position(|s| s == self)
        .expect("listed");
        f.write_str(Suite::NAMES[i])
    }
}

pub fn gaussian_population(m: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = seed::stream(seed, "population", &[m as u64, dim as u64]);
    (0..m)
        .map(|_| (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect())
        .collect()
}

fn martingale(master: u64) -> Result<Vec<VerificationReport>> {
    Ok(vec![
        verify_martingale_identity(1, 1.0, 10_000, master)?,
        verify_martingale_identity(10, 0.0, 1_000, master)?,
        verify_martingale_identity(10, 1.0, 1_000_000, master)?,
    ])
}

fn sampling(master: u64) -> Result<Vec<VerificationReport>> {
    let mut out = Vec::new();
    let scalars: Vec<Vec<f64>> = (1..=5).map(|x| vec![x as f64]).collect();
    let vectors = gaussian_population(5, 2, master);
    for pop in [&scalars, &vectors] {
        for s in 1..=5 {
            out.push(verify_sampling_variance(pop, s, SamplingMode::Without, Method::Exact)?);
            out.push(verify_sampling_variance(pop, s, SamplingMode::With, Method::Exact)?);
        }
    }
    let big = gaussian_population(100, 2, master);
    let mc = Method::MonteCarlo { trials: 100_000, seed: master };
    out.push(verify_sampling_variance(&big, 30, SamplingMode::Without, mc)?);
    out.push(verify_sampling_variance(&big, 30, SamplingMode::With, mc)?);
    Ok(out)
}

fn sequential(master: u64) -> Result<Vec<VerificationReport>> {
    let mut out = vec![verify_closed_form_identity(5)];
    for c in 2..=6 {
        let pop = gaussian_population(c, 3, master ^ c as u64);
        for j in 1..=c {
            for i in 1..=4 {
                out.extend(verify_sequential_participation_bound(&pop, j, i, Enumeration::Exact)?);
            }
        }
    }
    let pop = gaussian_population(10, 3, master);
    out.extend(verify_sequential_participation_bound(
        &pop,
        6,
        3,
        Enumeration::MonteCarlo { trials: 100_000, seed: master },
    )?);
    Ok(out)
}

/// Runs a suite at its default size; `master` seeds every random choice.
pub fn run_suite(suite: Suite, master: u64) -> Result<Vec<VerificationReport>> {
    match suite {
        Suite::Martingale => martingale(master),
        Suite::Sampling => sampling(master),
        Suite::Sequential => sequential(master),
        Suite::Drift => Ok(vec![TheorySetup::default().run()?.drift_report()?]),
        Suite::Recursion => Ok(vec![TheorySetup::default().run()?.recursion_report(0.95)?]),
        Suite::Theorem => Ok(vec![TheoremSetup::default().run()?.report]),
        Suite::All => {
            let mut out = martingale(master)?;
            out.extend(sampling(master)?);
            out.extend(sequential(master)?);
            let run = TheorySetup::default().run()?;
            out.push(run.drift_report()?);
            out.push(run.recursion_report(0.95)?);
            out.push(TheoremSetup::default().run()?.report);
            Ok(out)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for name in Suite::NAMES {
            assert_eq!(name.parse::<Suite>().unwrap().to_string(), name);
        }
        assert!("sampl".parse::<Suite>().is_err());
    }

    #[test]
    fn sampling_suite_passes() {
        let reps = run_suite(Suite::Sampling, 0).unwrap();
        assert!(reps.iter().all(|r| r.pass), "{:#?}", reps.iter().filter(|r| !r.pass).collect::<Vec<_>>());
    }
}
