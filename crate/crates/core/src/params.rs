//! Parameter vectors, global-model history and per-round records.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{AflError, Result};

/// Flat model parameters of a linear model: `f(x) = w·x + b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl ParamVector {
    pub fn new(weights: Vec<f64>, bias: f64) -> Self {
        Self { weights, bias }
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            weights: vec![0.0; dim],
            bias: 0.0,
        }
    }

    /// Input dimension `d` (the bias is not counted).
    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn is_finite(&self) -> bool {
        self.bias.is_finite() && self.weights.iter().all(|w| w.is_finite())
    }

    /// Largest absolute entry, bias included.
    pub fn max_abs(&self) -> f64 {
        self.weights
            .iter()
            .fold(self.bias.abs(), |m, w| m.max(w.abs()))
    }

    /// Decision value `w·x + b`.
    pub fn predict(&self, x: &[f64]) -> f64 {
        dot(&self.weights, x) + self.bias
    }

    pub fn norm_sq(&self) -> f64 {
        dot(&self.weights, &self.weights) + self.bias * self.bias
    }

    /// Squared Euclidean distance over all coordinates, bias included.
    pub fn dist_sq(&self, other: &ParamVector) -> f64 {
        debug_assert_eq!(self.dim(), other.dim());
        let mut s = (self.bias - other.bias).powi(2);
        for (a, b) in self.weights.iter().zip(&other.weights) {
            s += (a - b).powi(2);
        }
        s
    }

    /// `self += alpha * x`, in place.
    pub fn add_scaled(&mut self, alpha: f64, x: &ParamVector) -> Result<()> {
        self.check_dim(x)?;
        for (y, v) in self.weights.iter_mut().zip(&x.weights) {
            *y += alpha * v;
        }
        self.bias += alpha * x.bias;
        Ok(())
    }

    pub fn scale(&mut self, alpha: f64) {
        for w in &mut self.weights {
            *w *= alpha;
        }
        self.bias *= alpha;
    }

    /// Coordinates as one flat vector `[w_0, .., w_{d-1}, b]`.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = self.weights.clone();
        v.push(self.bias);
        v
    }

    pub fn from_flat(flat: &[f64]) -> Result<Self> {
        let (&bias, weights) = flat
            .split_last()
            .ok_or_else(|| AflError::InvalidArgument("empty flat parameter vector".into()))?;
        Ok(Self::new(weights.to_vec(), bias))
    }

    fn check_dim(&self, other: &ParamVector) -> Result<()> {
        if self.dim() != other.dim() {
            return Err(AflError::DimensionMismatch {
                expected: self.dim(),
                got: other.dim(),
            });
        }
        Ok(())
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Returns `y + alpha * x`.
pub fn axpy(alpha: f64, x: &ParamVector, y: &ParamVector) -> Result<ParamVector> {
    let mut out = y.clone();
    out.add_scaled(alpha, x)?;
    Ok(out)
}

/// Elementwise arithmetic mean.
///
/// Computed as `v_0 + (sum_i (v_i - v_0)) / c`, accumulated left to right in
/// the order given, so the mean of identical vectors reproduces them exactly.
/// Callers that need order-independence sort their inputs (by client id).
pub fn average_params<'a, I>(vectors: I) -> Result<ParamVector>
where
    I: IntoIterator<Item = &'a ParamVector>,
{
    let mut iter = vectors.into_iter();
    let first = iter.next().ok_or(AflError::EmptyAggregate)?;
    let mut offset = ParamVector::zeros(first.dim());
    let mut count = 1usize;
    for v in iter {
        first.check_dim(v)?;
        for ((o, x), f) in offset.weights.iter_mut().zip(&v.weights).zip(&first.weights) {
            *o += x - f;
        }
        offset.bias += v.bias - first.bias;
        count += 1;
    }
    let c = count as f64;
    let mut mean = first.clone();
    for (m, o) in mean.weights.iter_mut().zip(&offset.weights) {
        *m += o / c;
    }
    mean.bias += offset.bias / c;
    Ok(mean)
}

/// Ring buffer of the most recent `tau_max + 1` global models.
#[derive(Debug, Clone)]
pub struct GlobalModelHistory {
    capacity: usize,
    snapshots: VecDeque<(usize, ParamVector)>,
}

impl GlobalModelHistory {
    /// Starts the history with `initial` as the round-0 model.
    pub fn new(tau_max: usize, initial: ParamVector) -> Self {
        let capacity = tau_max + 1;
        let mut snapshots = VecDeque::with_capacity(capacity);
        snapshots.push_back((0, initial));
        Self {
            capacity,
            snapshots,
        }
    }

    pub fn tau_max(&self) -> usize {
        self.capacity - 1
    }

    /// Round index of the newest snapshot.
    pub fn current_round(&self) -> usize {
        self.snapshots.back().map(|(r, _)| *r).unwrap_or(0)
    }

    pub fn latest(&self) -> &ParamVector {
        &self.snapshots.back().expect("history is never empty").1
    }

    /// Largest age that can currently be looked up.
    pub fn max_age(&self) -> usize {
        self.snapshots.len() - 1
    }

    /// Snapshot `age` rounds older than the newest one.
    pub fn lookup(&self, age: usize) -> Result<&ParamVector> {
        if age > self.max_age() {
            return Err(AflError::InvalidArgument(format!(
                "snapshot age {age} unavailable (max {})",
                self.max_age()
            )));
        }
        Ok(&self.snapshots[self.snapshots.len() - 1 - age].1)
    }

    pub fn push(&mut self, params: ParamVector) {
        let round = self.current_round() + 1;
        if self.snapshots.len() == self.capacity {
            self.snapshots.pop_front();
        }
        self.snapshots.push_back((round, params));
    }
}

/// Metrics recorded for one aggregation round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub server_loss: f64,
    /// Participating client ids, ascending.
    pub selected: Vec<usize>,
    /// Execution delay in seconds per participating client.
    pub delays: BTreeMap<usize, f64>,
    /// Spread `max(delays) - min(delays)`.
    pub tau_t: f64,
    /// Learning rate used by this round's local runs.
    pub gamma_t: f64,
}

impl RoundRecord {
    pub fn max_delay(&self) -> f64 {
        self.delays.values().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pv(w: &[f64], b: f64) -> ParamVector {
        ParamVector::new(w.to_vec(), b)
    }

    #[test]
    fn average_of_identical_vectors() {
        let v = pv(&[2.0, 2.0], 2.0);
        let avg = average_params([&v, &v, &v]).unwrap();
        assert_eq!(avg, v);
    }

    #[test]
    fn average_midpoint() {
        let avg = average_params([&pv(&[0.0], 0.0), &pv(&[2.0], 4.0)]).unwrap();
        assert_eq!(avg, pv(&[1.0], 2.0));
    }

    #[test]
    fn average_empty_is_error() {
        let none: Vec<ParamVector> = Vec::new();
        let err = average_params(&none).unwrap_err();
        assert!(matches!(err, AflError::EmptyAggregate));
        assert_eq!(err.to_string(), "nothing to aggregate");
    }

    #[test]
    fn average_dimension_mismatch() {
        let err = average_params([&pv(&[1.0], 0.0), &pv(&[1.0, 2.0], 0.0)]).unwrap_err();
        assert!(matches!(err, AflError::DimensionMismatch { .. }));
    }

    #[test]
    fn axpy_examples() {
        let x = pv(&[3.0, -1.0], 7.0);
        let y = pv(&[1.0, 1.0], 1.0);
        assert_eq!(axpy(0.0, &x, &y).unwrap(), y);
        let one = pv(&[1.0], 1.0);
        assert_eq!(axpy(1.0, &one, &one).unwrap(), pv(&[2.0], 2.0));
        assert_eq!(axpy(-1.0, &x, &x).unwrap(), pv(&[0.0, 0.0], 0.0));
        assert!(axpy(1.0, &one, &y).is_err());
    }

    #[test]
    fn history_lookup_and_eviction() {
        let mut h = GlobalModelHistory::new(2, pv(&[0.0], 0.0));
        assert_eq!(h.max_age(), 0);
        assert!(h.lookup(1).is_err());
        for r in 1..=5 {
            h.push(pv(&[r as f64], 0.0));
            assert_eq!(h.current_round(), r);
            assert_eq!(h.lookup(0).unwrap().weights[0], r as f64);
            for age in 0..=r.min(2) {
                assert_eq!(h.lookup(age).unwrap().weights[0], (r - age) as f64);
            }
        }
        assert!(h.lookup(3).is_err());
    }

    #[test]
    fn flat_round_trip() {
        let v = pv(&[1.5, -2.0], 0.25);
        assert_eq!(ParamVector::from_flat(&v.to_flat()).unwrap(), v);
    }

    proptest! {
        #[test]
        fn average_of_copies_is_exact(
            w in prop::collection::vec(-1e6f64..1e6, 1..6),
            b in -1e6f64..1e6,
            copies in 1usize..9,
        ) {
            let v = ParamVector::new(w, b);
            let vs = vec![v.clone(); copies];
            prop_assert_eq!(average_params(&vs).unwrap(), v);
        }
    }
}
