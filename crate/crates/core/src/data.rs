//! Synthetic datasets and Dirichlet non-IID partitioning.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{AflError, Result};
use crate::params::dot;
use crate::seed;

pub const FEATURE_LOW: f64 = -5.0;
pub const FEATURE_HIGH: f64 = 5.0;
pub const TRUE_WEIGHT_LOW: f64 = 2.0;
pub const TRUE_WEIGHT_HIGH: f64 = 4.0;
pub const TRUE_BIAS: f64 = 5.0;
pub const NOISE_STD: f64 = 0.2;

/// Number of fresh Dirichlet draws attempted before a partition gives up.
pub const MAX_PARTITION_REDRAWS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Regression,
    Classification,
}

/// Generating parameters kept alongside synthetic data for diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub weights: Vec<f64>,
    pub bias: f64,
}

/// Row-major feature matrix plus targets.
///
/// Classification targets are stored as `-1.0` / `+1.0`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    n: usize,
    d: usize,
    features: Vec<f64>,
    targets: Vec<f64>,
    kind: TaskKind,
    truth: Option<GroundTruth>,
    logits: Option<Vec<f64>>,
}

impl Dataset {
    pub fn new(features: Vec<Vec<f64>>, targets: Vec<f64>, kind: TaskKind) -> Result<Self> {
        let n = features.len();
        if n == 0 {
            return Err(AflError::InvalidArgument("dataset needs at least one row".into()));
        }
        let d = features[0].len();
        if d == 0 {
            return Err(AflError::InvalidArgument("dataset needs at least one feature".into()));
        }
        if targets.len() != n {
            return Err(AflError::DimensionMismatch {
                expected: n,
                got: targets.len(),
            });
        }
        let mut flat = Vec::with_capacity(n * d);
        for row in &features {
            if row.len() != d {
                return Err(AflError::DimensionMismatch {
                    expected: d,
                    got: row.len(),
                });
            }
            flat.extend_from_slice(row);
        }
        Self::from_flat(n, d, flat, targets, kind)
    }

    fn from_flat(
        n: usize,
        d: usize,
        features: Vec<f64>,
        targets: Vec<f64>,
        kind: TaskKind,
    ) -> Result<Self> {
        if features.iter().any(|v| !v.is_finite()) || targets.iter().any(|v| !v.is_finite()) {
            return Err(AflError::InvalidArgument("dataset contains non-finite values".into()));
        }
        if kind == TaskKind::Classification {
            if let Some(&bad) = targets.iter().find(|&&y| y != 1.0 && y != -1.0) {
                return Err(AflError::InvalidLabel(bad));
            }
        }
        Ok(Self {
            n,
            d,
            features,
            targets,
            kind,
            truth: None,
            logits: None,
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn kind(&self) -> TaskKind {
        self.kind
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.d..(i + 1) * self.d]
    }

    pub fn target(&self, i: usize) -> f64 {
        self.targets[i]
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn truth(&self) -> Option<&GroundTruth> {
        self.truth.as_ref()
    }

    /// Raw decision scores `w*·x + b*` of a generated classification set.
    pub fn logits(&self) -> Option<&[f64]> {
        self.logits.as_deref()
    }

    /// Rows `indices`, in that order. Ground truth is carried over.
    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        if indices.is_empty() {
            return Err(AflError::InvalidArgument("empty subset".into()));
        }
        let mut features = Vec::with_capacity(indices.len() * self.d);
        let mut targets = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.n {
                return Err(AflError::InvalidArgument(format!(
                    "row {i} out of range for {} rows",
                    self.n
                )));
            }
            features.extend_from_slice(self.row(i));
            targets.push(self.targets[i]);
        }
        Ok(Dataset {
            n: indices.len(),
            d: self.d,
            features,
            targets,
            kind: self.kind,
            truth: self.truth.clone(),
            logits: self
                .logits
                .as_ref()
                .map(|l| indices.iter().map(|&i| l[i]).collect()),
        })
    }

    /// Multiply every feature by `factor`. Ground truth and logits are dropped.
    pub fn scale_features(&self, factor: f64) -> Dataset {
        let mut out = self.clone();
        for v in &mut out.features {
            *v *= factor;
        }
        out.truth = None;
        out.logits = None;
        out
    }

    /// Write as CSV with header `f0,..,f{d-1},y`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
        let mut header: Vec<String> = (0..self.d).map(|j| format!("f{j}")).collect();
        header.push("y".into());
        w.write_record(&header).map_err(|e| csv_err(path, e))?;
        for i in 0..self.n {
            let mut rec: Vec<String> = self.row(i).iter().map(|v| v.to_string()).collect();
            rec.push(self.targets[i].to_string());
            w.write_record(&rec).map_err(|e| csv_err(path, e))?;
        }
        w.flush().map_err(|e| AflError::io(path, e))
    }

    pub fn read_csv(path: &Path, kind: TaskKind) -> Result<Dataset> {
        let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
        let headers = r.headers().map_err(|e| csv_err(path, e))?.clone();
        let width = headers.len();
        if width < 2 || headers.get(width - 1) != Some("y") {
            return Err(AflError::format(path, "expected header f0,..,f{d-1},y"));
        }
        for (j, h) in headers.iter().take(width - 1).enumerate() {
            if h != format!("f{j}") {
                return Err(AflError::format(path, format!("unexpected column '{h}'")));
            }
        }
        let d = width - 1;
        let mut features = Vec::new();
        let mut targets = Vec::new();
        for (line, rec) in r.records().enumerate() {
            let rec = rec.map_err(|e| csv_err(path, e))?;
            for (j, field) in rec.iter().enumerate() {
                let v: f64 = field.parse().map_err(|_| {
                    AflError::format(path, format!("row {}: bad number '{field}'", line + 1))
                })?;
                if j < d {
                    features.push(v);
                } else {
                    targets.push(v);
                }
            }
        }
        if targets.is_empty() {
            return Err(AflError::format(path, "no data rows"));
        }
        if kind == TaskKind::Classification {
            // {0, 1} files become {-1, +1}
            targets.iter_mut().filter(|y| **y == 0.0).for_each(|y| *y = -1.0);
        }
        Dataset::from_flat(targets.len(), d, features, targets, kind)
    }
}

fn csv_err(path: &Path, e: csv::Error) -> AflError {
    AflError::format(path, e.to_string())
}

fn check_shape(n: usize, d: usize) -> Result<()> {
    if n == 0 || d == 0 {
        return Err(AflError::InvalidArgument(format!(
            "dataset shape must be at least 1x1, got {n}x{d}"
        )));
    }
    Ok(())
}

fn uniform_features(n: usize, d: usize, seed: u64) -> Vec<f64> {
    let mut rng = seed::stream(seed, "features", &[]);
    (0..n * d)
        .map(|_| rng.random_range(FEATURE_LOW..FEATURE_HIGH))
        .collect()
}

fn true_weights(d: usize, seed: u64) -> Vec<f64> {
    let mut rng = seed::stream(seed, "true-weights", &[]);
    (0..d)
        .map(|_| rng.random_range(TRUE_WEIGHT_LOW..TRUE_WEIGHT_HIGH))
        .collect()
}

/// Linear-regression data with the default noise level.
pub fn gen_regression_data(n: usize, d: usize, seed: u64) -> Result<Dataset> {
    gen_regression_data_with_noise(n, d, NOISE_STD, seed)
}

/// `y = w*·x + 5 + eps`, `x ~ U[-5,5]^d`, `w* ~ U[2,4]^d`, `eps ~ N(0, noise_std^2)`.
pub fn gen_regression_data_with_noise(
    n: usize,
    d: usize,
    noise_std: f64,
    seed: u64,
) -> Result<Dataset> {
    check_shape(n, d)?;
    if !(noise_std >= 0.0 && noise_std.is_finite()) {
        return Err(AflError::InvalidArgument(format!("noise std {noise_std}")));
    }
    let features = uniform_features(n, d, seed);
    let w = true_weights(d, seed);
    let mut noise_rng = seed::stream(seed, "noise", &[]);
    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    let targets = (0..n)
        .map(|i| {
            let clean = dot(&w, &features[i * d..(i + 1) * d]) + TRUE_BIAS;
            // zero std still consumes the stream so features stay aligned
            let eps: f64 = noise.sample(&mut noise_rng);
            clean + noise_std * eps
        })
        .collect();
    let mut ds = Dataset::from_flat(n, d, features, targets, TaskKind::Regression)?;
    ds.truth = Some(GroundTruth {
        weights: w,
        bias: TRUE_BIAS,
    });
    Ok(ds)
}

/// Labels `+1` where `w*·x + 5 > 0`, else `-1`; logits are retained.
pub fn gen_classification_data(n: usize, d: usize, seed: u64) -> Result<Dataset> {
    check_shape(n, d)?;
    let features = uniform_features(n, d, seed);
    let w = true_weights(d, seed);
    let logits: Vec<f64> = (0..n)
        .map(|i| dot(&w, &features[i * d..(i + 1) * d]) + TRUE_BIAS)
        .collect();
    let targets = logits.iter().map(|&l| label_from_logit(l)).collect();
    let mut ds = Dataset::from_flat(n, d, features, targets, TaskKind::Classification)?;
    ds.truth = Some(GroundTruth {
        weights: w,
        bias: TRUE_BIAS,
    });
    ds.logits = Some(logits);
    Ok(ds)
}

pub fn label_from_logit(logit: f64) -> f64 {
    if logit > 0.0 {
        1.0
    } else {
        -1.0
    }
}

/// Client-id → row indices into the parent dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionPlan {
    /// `assignments[c]` holds client `c`'s row indices, ascending.
    pub assignments: Vec<Vec<usize>>,
    pub concentration: f64,
    /// Number of Dirichlet draws rejected before this plan was accepted.
    pub redraws: usize,
}

impl PartitionPlan {
    pub fn num_clients(&self) -> usize {
        self.assignments.len()
    }

    pub fn shard_sizes(&self) -> Vec<usize> {
        self.assignments.iter().map(Vec::len).collect()
    }
}

/// Proportions on the simplex from normalised Gamma(zeta, 1) draws.
fn dirichlet<R: Rng>(rng: &mut R, k: usize, zeta: f64) -> Option<Vec<f64>> {
    let gamma = Gamma::new(zeta, 1.0).ok()?;
    let draws: Vec<f64> = (0..k).map(|_| gamma.sample(rng)).collect();
    let total: f64 = draws.iter().sum();
    if !(total > 0.0 && total.is_finite()) {
        return None;
    }
    Some(draws.into_iter().map(|g| g / total).collect())
}

/// Split `indices` into contiguous slices of size `round(len * p_c)`, the
/// last slice absorbing rounding. `None` if rounding overshoots.
fn slice_by_proportions(indices: &[usize], props: &[f64]) -> Option<Vec<Vec<usize>>> {
    let n = indices.len();
    let k = props.len();
    let mut out = Vec::with_capacity(k);
    let mut start = 0usize;
    for &p in &props[..k - 1] {
        let size = (n as f64 * p).round() as usize;
        if start + size > n {
            return None;
        }
        out.push(indices[start..start + size].to_vec());
        start += size;
    }
    out.push(indices[start..].to_vec());
    Some(out)
}

fn draw_plan(data: &Dataset, clients: usize, zeta: f64, seed: u64) -> Option<Vec<Vec<usize>>> {
    let mut rng = seed::stream(seed, "partition", &[]);
    match data.kind() {
        TaskKind::Regression => {
            let props = dirichlet(&mut rng, clients, zeta)?;
            let mut idx: Vec<usize> = (0..data.len()).collect();
            idx.shuffle(&mut rng);
            slice_by_proportions(&idx, &props)
        }
        TaskKind::Classification => {
            let mut shards = vec![Vec::new(); clients];
            for label in [-1.0, 1.0] {
                let mut idx: Vec<usize> = (0..data.len())
                    .filter(|&i| data.target(i) == label)
                    .collect();
                if idx.is_empty() {
                    continue;
                }
                let props = dirichlet(&mut rng, clients, zeta)?;
                idx.shuffle(&mut rng);
                for (shard, part) in shards.iter_mut().zip(slice_by_proportions(&idx, &props)?) {
                    shard.extend(part);
                }
            }
            Some(shards)
        }
    }
}

/// Non-IID split over `clients` shards.
///
/// Regression data gets quantity skew (one Dirichlet draw over clients);
/// classification data is split per label class. Draws leaving any client
/// with fewer than `min_per_client` rows are rejected and redrawn from a
/// fresh sub-seed.
pub fn dirichlet_partition(
    data: &Dataset,
    clients: usize,
    zeta: f64,
    seed: u64,
    min_per_client: usize,
) -> Result<PartitionPlan> {
    if clients == 0 {
        return Err(AflError::InvalidArgument("need at least one client".into()));
    }
    if !(zeta > 0.0 && zeta.is_finite()) {
        return Err(AflError::InvalidArgument(format!(
            "concentration must be positive, got {zeta}"
        )));
    }
    let floor = min_per_client.max(1);
    if clients.saturating_mul(floor) > data.len() {
        return Err(AflError::PartitionInfeasible(format!(
            "{clients} clients x {floor} rows exceeds {} rows",
            data.len()
        )));
    }
    if clients == 1 {
        return Ok(PartitionPlan {
            assignments: vec![(0..data.len()).collect()],
            concentration: zeta,
            redraws: 0,
        });
    }
    for attempt in 0..MAX_PARTITION_REDRAWS {
        let sub = seed::derive_seed(seed, "partition-attempt", &[attempt as u64]);
        if let Some(mut shards) = draw_plan(data, clients, zeta, sub) {
            if shards.iter().all(|s| s.len() >= floor) {
                for s in &mut shards {
                    s.sort_unstable();
                }
                return Ok(PartitionPlan {
                    assignments: shards,
                    concentration: zeta,
                    redraws: attempt,
                });
            }
        }
    }
    Err(AflError::RedrawBudgetExhausted(MAX_PARTITION_REDRAWS))
}
