//! Orthogonality of martingale differences: `E||sum d_k||^2 = sum E||d_k||^2`.

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use super::report::VerificationReport;
use crate::error::{AflError, Result};
use crate::seed;

const CHUNK: usize = 8192;
const DIM: usize = 2;

#[derive(Debug, Default, Clone, Copy)]
struct Sums {
    n: usize,
    lhs: f64,
    lhs_sq: f64,
    rhs: f64,
    diff: f64,
    diff_sq: f64,
}

impl Sums {
    fn merge(self, o: Sums) -> Sums {
        Sums {
            n: self.n + o.n,
            lhs: self.lhs + o.lhs,
            lhs_sq: self.lhs_sq + o.lhs_sq,
            rhs: self.rhs + o.rhs,
            diff: self.diff + o.diff,
            diff_sq: self.diff_sq + o.diff_sq,
        }
    }
}

/// One path of `m` differences `d_k = delta * s_k * z_k` with `z_k` standard
/// Gaussian scaled to unit second moment and `s_k in {1, 1/2}` chosen from
/// the sign of the running sum, so the conditional variance depends on the
/// past but never exceeds `delta^2`. Returns `(||sum d_k||^2, sum ||d_k||^2)`.
fn sample_path<R: rand::Rng>(m: usize, delta: f64, rng: &mut R) -> (f64, f64) {
    let unit = 1.0 / (DIM as f64).sqrt();
    let mut sum = [0.0; DIM];
    let mut sq = 0.0;
    for _ in 0..m {
        let s = if sum[0] >= 0.0 { 1.0 } else { 0.5 };
        for x in sum.iter_mut() {
            let z: f64 = StandardNormal.sample(rng);
            let d = delta * s * unit * z;
            *x += d;
            sq += d * d;
        }
    }
    (sum.iter().map(|x| x * x).sum(), sq)
}

pub fn verify_martingale_identity(m: usize, delta: f64, trials: usize, seed: u64) -> Result<VerificationReport> {
    if m == 0 || trials < 2 {
        return Err(AflError::InvalidArgument("need m >= 1 and at least 2 trials".into()));
    }
    if !(delta >= 0.0 && delta.is_finite()) {
        return Err(AflError::InvalidArgument(format!("noise scale {delta}")));
    }
    let chunks = trials.div_ceil(CHUNK);
    let parts: Vec<Sums> = (0..chunks)
        .into_par_iter()
        .map(|k| {
            let mut rng = seed::stream(seed, "martingale", &[k as u64]);
            let len = CHUNK.min(trials - k * CHUNK);
            let mut s = Sums::default();
            for _ in 0..len {
                let (l, r) = sample_path(m, delta, &mut rng);
                s.n += 1;
                s.lhs += l;
                s.lhs_sq += l * l;
                s.rhs += r;
                s.diff += l - r;
                s.diff_sq += (l - r) * (l - r);
            }
            s
        })
        .collect();
    let s = parts.into_iter().fold(Sums::default(), Sums::merge);
    let n = s.n as f64;
    let se = |sum: f64, sum_sq: f64| ((sum_sq / n - (sum / n).powi(2)).max(0.0) / (n - 1.0)).sqrt();
    let lhs = s.lhs / n;
    let rhs = s.rhs / n;
    let se_diff = se(s.diff, s.diff_sq);
    let se_lhs = se(s.lhs, s.lhs_sq);
    let bound = m as f64 * delta * delta;
    let tol = (0.01 * rhs).max(3.0 * se_diff);
    Ok(VerificationReport::equality("martingale-identity", rhs, lhs, tol, trials)
        .with_std_error(se_diff)
        .require(lhs <= bound + 3.0 * se_lhs, format!("E||sum||^2 = {lhs} exceeds m*delta^2 = {bound}"))
        .note(format!("bound m*delta^2 = {bound}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_term_sides_coincide() {
        let r = verify_martingale_identity(1, 1.0, 5000, 1).unwrap();
        assert!(r.pass);
        assert!((r.analytic - r.empirical).abs() < 1e-12);
        assert!(r.empirical <= 1.1);
    }

    #[test]
    fn zero_noise_is_exactly_zero() {
        let r = verify_martingale_identity(7, 0.0, 1000, 2).unwrap();
        assert_eq!((r.analytic, r.empirical), (0.0, 0.0));
        assert!(r.pass);
    }

    #[test]
    fn deterministic_and_rejects_bad_input() {
        let a = verify_martingale_identity(5, 0.7, 20_000, 3).unwrap();
        let b = verify_martingale_identity(5, 0.7, 20_000, 3).unwrap();
        assert_eq!(a, b);
        assert!(verify_martingale_identity(0, 1.0, 100, 0).is_err());
        assert!(verify_martingale_identity(3, -1.0, 100, 0).is_err());
    }
}
