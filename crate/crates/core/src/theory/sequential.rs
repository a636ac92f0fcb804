//! Accumulated deviation of sequentially visited clients drawn without
//! replacement.
//!
//! Client `c` of the first `J` in a random order contributes, at local step
//! `i`, the squared norm of `I * sum_{k<c} (x_k - mean) + i * (x_c - mean)`.

use itertools::Itertools;
use rand::seq::index;
use rayon::prelude::*;

use super::report::VerificationReport;
use super::sampling::{population_mean, population_variance};
use crate::error::{AflError, Result};
use crate::seed;

/// Populations up to this size are enumerated exactly.
pub const EXACT_MAX_CLIENTS: usize = 7;

/// `nu^2 (JI^2(JI-1)/2 - JI(I^2-1)/6 - (J-1)JI^2/(C-1) ((2J-1)I/6 - 1/2))`
pub fn sequential_closed_form(c: usize, j: usize, i: usize, nu2: f64) -> f64 {
    let (c, j, i) = (c as f64, j as f64, i as f64);
    nu2 * (0.5 * j * i * i * (j * i - 1.0) - j * i * (i * i - 1.0) / 6.0
        - (j - 1.0) * j * i * i / (c - 1.0) * ((2.0 * j - 1.0) * i / 6.0 - 0.5))
}

/// `J^2 I^3 nu^2 / 2`
pub fn sequential_bound(j: usize, i: usize, nu2: f64) -> f64 {
    0.5 * (j * j) as f64 * (i * i * i) as f64 * nu2
}

/// Term-by-term expectation scaled by `6(C-1)/nu^2`, in exact integers:
/// `sum_c sum_i 6[I^2 (c-1)(C-c+1) - 2Ii(c-1) + i^2 (C-1)]`.
pub fn expanded_scaled(c: usize, j: usize, i: usize) -> i128 {
    let (cc, ii) = (c as i128, i as i128);
    let mut total = 0i128;
    for k in 1..=j as i128 {
        for step in 0..ii {
            total += 6 * (ii * ii * (k - 1) * (cc - k + 1) - 2 * ii * step * (k - 1) + step * step * (cc - 1));
        }
    }
    total
}

/// Closed form scaled by `6(C-1)/nu^2`, in exact integers.
pub fn closed_form_scaled(c: usize, j: usize, i: usize) -> i128 {
    let (c, j, i) = (c as i128, j as i128, i as i128);
    3 * (c - 1) * j * i * i * (j * i - 1) - (c - 1) * j * i * (i * i - 1) - (j - 1) * j * i * i * ((2 * j - 1) * i - 3)
}

/// Checks the expanded sum against the closed form for every
/// `2 <= C <= max`, `1 <= J <= C`, `1 <= I <= max`.
pub fn verify_closed_form_identity(max: usize) -> VerificationReport {
    let mut worst = 0i128;
    let mut cases = 0;
    for c in 2..=max {
        for j in 1..=c {
            for i in 1..=max {
                worst = worst.max((expanded_scaled(c, j, i) - closed_form_scaled(c, j, i)).abs());
                cases += 1;
            }
        }
    }
    VerificationReport::equality("sequential-closed-form-identity", 0.0, worst as f64, 0.0, cases)
        .note("exact integer arithmetic after scaling by 6(C-1)/nu^2")
}

fn path_sum(pop: &[Vec<f64>], mean: &[f64], order: &[usize], i_steps: usize, acc: &mut [f64], cur: &mut [f64]) -> f64 {
    acc.iter_mut().for_each(|a| *a = 0.0);
    let mut total = 0.0;
    for &k in order {
        for (d, (x, m)) in cur.iter_mut().zip(pop[k].iter().zip(mean)) {
            *d = x - m;
        }
        let scale = i_steps as f64;
        for step in 0..i_steps {
            let s = step as f64;
            total += acc.iter().zip(cur.iter()).map(|(a, d)| (scale * a + s * d).powi(2)).sum::<f64>();
        }
        for (a, d) in acc.iter_mut().zip(cur.iter()) {
            *a += d;
        }
    }
    total
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Enumeration {
    Exact,
    MonteCarlo { trials: usize, seed: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequentialOutcome {
    pub lhs: f64,
    pub closed_form: f64,
    pub bound: f64,
    pub nu2: f64,
    pub std_error: Option<f64>,
    pub trials: usize,
}

/// Expected LHS over uniformly random orders of the population.
pub fn sequential_lhs(pop: &[Vec<f64>], j: usize, i_steps: usize, how: Enumeration) -> Result<SequentialOutcome> {
    let c = pop.len();
    if c < 2 || j == 0 || j > c || i_steps == 0 {
        return Err(AflError::InvalidArgument(format!(
            "need C >= 2, 1 <= J <= C, I >= 1; got C={c}, J={j}, I={i_steps}"
        )));
    }
    if pop.iter().any(|v| v.len() != pop[0].len()) {
        return Err(AflError::InvalidArgument("population vectors differ in dimension".into()));
    }
    let mean = population_mean(pop);
    let nu2 = population_variance(pop);
    let dim = mean.len();
    let (lhs, std_error, trials) = match how {
        Enumeration::Exact => {
            if c > EXACT_MAX_CLIENTS {
                return Err(AflError::InvalidArgument(format!("C={c} too large to enumerate")));
            }
            let (mut acc, mut cur) = (vec![0.0; dim], vec![0.0; dim]);
            let (mut sum, mut count) = (0.0, 0usize);
            for order in (0..c).permutations(j) {
                sum += path_sum(pop, &mean, &order, i_steps, &mut acc, &mut cur);
                count += 1;
            }
            (sum / count as f64, None, count)
        }
        Enumeration::MonteCarlo { trials, seed } => {
            if trials < 2 {
                return Err(AflError::InvalidArgument("need at least 2 trials".into()));
            }
            const CHUNK: usize = 4096;
            let parts: Vec<(f64, f64)> = (0..trials.div_ceil(CHUNK))
                .into_par_iter()
                .map(|k| {
                    let mut rng = seed::stream(seed, "sequential", &[k as u64]);
                    let (mut acc, mut cur) = (vec![0.0; dim], vec![0.0; dim]);
                    let (mut s, mut sq) = (0.0, 0.0);
                    for _ in 0..CHUNK.min(trials - k * CHUNK) {
                        let order = index::sample(&mut rng, c, j).into_vec();
                        let v = path_sum(pop, &mean, &order, i_steps, &mut acc, &mut cur);
                        s += v;
                        sq += v * v;
                    }
                    (s, sq)
                })
                .collect();
            let (s, sq) = parts.into_iter().fold((0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
            let n = trials as f64;
            let est = s / n;
            (est, Some(((sq / n - est * est).max(0.0) / (n - 1.0)).sqrt()), trials)
        }
    };
    Ok(SequentialOutcome {
        lhs,
        closed_form: sequential_closed_form(c, j, i_steps, nu2),
        bound: sequential_bound(j, i_steps, nu2),
        nu2,
        std_error,
        trials,
    })
}

/// Returns the closed-form equality report and the bound report. Exact
/// enumeration uses tolerance `1e-10 * max(1, |closed form|)`; Monte Carlo
/// uses 3 standard errors.
pub fn verify_sequential_participation_bound(
    pop: &[Vec<f64>],
    j: usize,
    i_steps: usize,
    how: Enumeration,
) -> Result<[VerificationReport; 2]> {
    let out = sequential_lhs(pop, j, i_steps, how)?;
    let c = pop.len();
    let tag = format!("C{c}-J{j}-I{i_steps}");
    let tol = match out.std_error {
        None => 1e-10 * out.closed_form.abs().max(1.0),
        Some(se) => 3.0 * se,
    };
    let mut eq = VerificationReport::equality(format!("sequential-closed-form-{tag}"), out.closed_form, out.lhs, tol, out.trials);
    let bound_tol = out.std_error.map_or(1e-12, |se| 3.0 * se / out.bound.max(f64::MIN_POSITIVE));
    let mut bd = VerificationReport::bound(format!("sequential-bound-{tag}"), out.bound, out.lhs, bound_tol, out.trials);
    if let Some(se) = out.std_error {
        eq = eq.with_std_error(se);
        bd = bd.with_std_error(se);
    }
    if out.bound == 0.0 {
        bd.pass = out.lhs.abs() <= tol;
    }
    Ok([eq, bd])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn basis(c: usize) -> Vec<Vec<f64>> {
        (0..c).map(|k| (0..c).map(|m| if k == m { 1.0 } else { 0.0 }).collect()).collect()
    }

    #[test]
    fn closed_form_hand_values() {
        assert!((sequential_closed_form(4, 3, 2, 1.0) - 53.0 / 3.0).abs() < 1e-12);
        assert!((sequential_closed_form(5, 5, 3, 1.0) - 115.0).abs() < 1e-12);
        assert!((sequential_closed_form(2, 2, 1, 1.0) - 1.0).abs() < 1e-12);
        assert_eq!(sequential_closed_form(2, 1, 1, 1.0), 0.0);
    }

    #[test]
    fn basis_population_c4_j3_i2() {
        let pop = basis(4);
        let [eq, bd] = verify_sequential_participation_bound(&pop, 3, 2, Enumeration::Exact).unwrap();
        assert_eq!(eq.trials, 24);
        assert!(eq.pass && bd.pass, "{} / {}", eq.summary(), bd.summary());
        let nu2 = population_variance(&pop);
        assert!((eq.empirical - 53.0 / 3.0 * nu2).abs() < 1e-12);
    }

    #[test]
    fn empty_sum_and_constant_population() {
        let pop = vec![vec![1.0], vec![-2.0]];
        let out = sequential_lhs(&pop, 1, 1, Enumeration::Exact).unwrap();
        assert_eq!(out.lhs, 0.0);
        assert!(out.lhs <= out.bound);
        let flat = vec![vec![3.0, 1.0]; 5];
        let [eq, bd] = verify_sequential_participation_bound(&flat, 4, 3, Enumeration::Exact).unwrap();
        assert_eq!(eq.empirical, 0.0);
        assert!(eq.pass && bd.pass);
    }

    #[test]
    fn identity_holds_on_grid() {
        let r = verify_closed_form_identity(5);
        assert!(r.pass, "{}", r.summary());
        assert_eq!(r.trials, (2..=5).map(|c| c * 5).sum::<usize>());
    }

    #[test]
    fn monte_carlo_matches_closed_form() {
        let pop: Vec<Vec<f64>> = (0..12).map(|k| vec![(k as f64).cos(), k as f64 / 12.0]).collect();
        let [eq, bd] =
            verify_sequential_participation_bound(&pop, 5, 3, Enumeration::MonteCarlo { trials: 40_000, seed: 9 })
                .unwrap();
        assert!(eq.pass, "{}", eq.summary());
        assert!(bd.pass);
    }
}
