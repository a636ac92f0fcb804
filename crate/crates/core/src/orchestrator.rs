//! The round-based asynchronous training loop and its synchronous baseline.
//!
//! Each round selects `J = round(fraction * C)` clients without replacement.
//! A selected client starts from the global snapshot `tau_c` rounds old,
//! runs local SGD, and the server replaces the global model with the plain
//! mean of the returned parameters. All randomness is drawn from streams
//! keyed by (seed, purpose, client, round), and aggregation runs in client-id
//! order, so a trace is bit-identical for any degree of parallelism.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{self, Dataset, PartitionPlan};
use crate::delay::{self, DelayMode, DelayModel, LrSchedule, ScheduleKind};
use crate::error::{AflError, Result};
use crate::model::{ModelKind, ModelTag};
use crate::params::{average_params, GlobalModelHistory, ParamVector, RoundRecord};
use crate::seed;
use crate::trainer::LocalSgd;

pub const GPU_WATTS: f64 = 125.0;
pub const CPU_WATTS: f64 = 45.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Afl,
    Sync,
}

/// Every knob of one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub clients: usize,
    pub rounds: usize,
    pub local_epochs: usize,
    pub gamma0: f64,
    pub alpha: f64,
    pub lr_schedule: ScheduleKind,
    pub batch: usize,
    pub d: usize,
    pub n: usize,
    pub fraction: f64,
    pub tau_max: usize,
    pub zeta: f64,
    pub model: ModelTag,
    pub l2_mu: f64,
    pub delay_mode: DelayMode,
    pub delay_base_mean: f64,
    pub delay_jitter: f64,
    pub seed: u64,
    /// Seed for data generation and partitioning; defaults to `seed`.
    pub data_seed: Option<u64>,
    pub mode: Mode,
    /// Smallest allowed shard; defaults to `batch`.
    pub min_per_client: Option<usize>,
    /// Watts per client id; defaults to alternating 125 W / 45 W.
    pub powers: Option<Vec<f64>>,
    pub record_iterates: bool,
}

impl ExperimentConfig {
    /// Linear-regression hyperparameters of the reference experiments.
    pub fn regression_table() -> Self {
        Self {
            clients: 10,
            rounds: 400,
            local_epochs: 50,
            gamma0: 0.001,
            alpha: 0.01,
            lr_schedule: ScheduleKind::Adaptive,
            batch: 32,
            d: 10,
            n: 2000,
            fraction: 0.5,
            tau_max: 2,
            zeta: 0.5,
            model: ModelTag::Regression,
            l2_mu: 0.0,
            delay_mode: DelayMode::Simulated,
            delay_base_mean: 1.0,
            delay_jitter: 0.2,
            seed: 0,
            data_seed: None,
            mode: Mode::Afl,
            min_per_client: None,
            powers: None,
            record_iterates: false,
        }
    }

    /// Linear-SVM hyperparameters of the reference experiments.
    pub fn svm_table() -> Self {
        Self {
            rounds: 1000,
            local_epochs: 100,
            gamma0: 0.0005,
            model: ModelTag::Svm,
            ..Self::regression_table()
        }
    }

    /// Number of clients selected per round.
    pub fn participants(&self) -> usize {
        (self.fraction * self.clients as f64).round() as usize
    }

    pub fn model_kind(&self) -> ModelKind {
        ModelKind {
            tag: self.model,
            l2_mu: self.l2_mu,
        }
    }

    pub fn delay_model(&self) -> DelayModel {
        DelayModel {
            mode: self.delay_mode,
            base_mean: self.delay_base_mean,
            jitter: self.delay_jitter,
            staleness_max: self.tau_max,
        }
    }

    pub fn schedule(&self) -> LrSchedule {
        LrSchedule {
            gamma0: self.gamma0,
            alpha: self.alpha,
            kind: self.lr_schedule,
        }
    }

    pub fn data_seed(&self) -> u64 {
        self.data_seed.unwrap_or(self.seed)
    }

    pub fn min_per_client(&self) -> usize {
        self.min_per_client.unwrap_or(self.batch)
    }

    pub fn power_map(&self) -> BTreeMap<usize, f64> {
        (0..self.clients)
            .map(|c| {
                let watts = match &self.powers {
                    Some(p) => p[c],
                    None if c % 2 == 0 => GPU_WATTS,
                    None => CPU_WATTS,
                };
                (c, watts)
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(AflError::InvalidArgument(msg));
        for (name, v) in [
            ("clients", self.clients),
            ("rounds", self.rounds),
            ("local_epochs", self.local_epochs),
            ("batch", self.batch),
            ("d", self.d),
            ("n", self.n),
        ] {
            if v == 0 {
                return bad(format!("{name} must be at least 1"));
            }
        }
        if !(self.fraction > 0.0 && self.fraction <= 1.0) {
            return bad(format!("fraction must lie in (0, 1], got {}", self.fraction));
        }
        let j = self.participants();
        if j < 1 || j > self.clients {
            return bad(format!(
                "fraction {} selects {j} of {} clients",
                self.fraction, self.clients
            ));
        }
        if !(self.zeta > 0.0 && self.zeta.is_finite()) {
            return bad(format!("zeta must be > 0, got {}", self.zeta));
        }
        if !(self.l2_mu >= 0.0 && self.l2_mu.is_finite()) {
            return bad(format!("l2_mu must be >= 0, got {}", self.l2_mu));
        }
        if let Some(p) = &self.powers {
            if p.len() != self.clients {
                return bad(format!(
                    "powers lists {} ratings for {} clients",
                    p.len(),
                    self.clients
                ));
            }
            if p.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
                return bad("powers must be finite and >= 0".into());
            }
        }
        self.schedule().validate()?;
        self.delay_model().validate()
    }
}

/// Data, shards and per-client hardware factors of one experiment.
#[derive(Debug, Clone)]
pub struct Federation {
    pub data: Dataset,
    pub shards: Vec<Dataset>,
    pub plan: Option<PartitionPlan>,
    pub scales: Vec<f64>,
}

impl Federation {
    pub fn build(config: &ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let ds = config.data_seed();
        let data_seed = seed::derive_seed(ds, "dataset", &[]);
        let data = match config.model {
            ModelTag::Regression => data::gen_regression_data(config.n, config.d, data_seed)?,
            ModelTag::Svm => data::gen_classification_data(config.n, config.d, data_seed)?,
        };
        let plan = data::dirichlet_partition(
            &data,
            config.clients,
            config.zeta,
            seed::derive_seed(ds, "partition-plan", &[]),
            config.min_per_client(),
        )?;
        let shards = plan
            .assignments
            .iter()
            .map(|idx| data.subset(idx))
            .collect::<Result<Vec<_>>>()?;
        let scales = delay::client_scales(config.clients, config.seed);
        Ok(Self {
            data,
            shards,
            plan: Some(plan),
            scales,
        })
    }

    /// Federation over caller-supplied shards; `data` is the evaluation set.
    pub fn from_shards(data: Dataset, shards: Vec<Dataset>, scales: Vec<f64>) -> Result<Self> {
        if shards.is_empty() || scales.len() != shards.len() {
            return Err(AflError::InvalidArgument(
                "need one scale factor per shard and at least one shard".into(),
            ));
        }
        if shards.iter().any(|s| s.dim() != data.dim() || s.kind() != data.kind()) {
            return Err(AflError::InvalidArgument("shard shape differs from data".into()));
        }
        Ok(Self {
            data,
            shards,
            plan: None,
            scales,
        })
    }

    pub fn num_clients(&self) -> usize {
        self.shards.len()
    }
}

/// One client's contribution to one round.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientRound {
    pub client: usize,
    /// Age in rounds of the snapshot the client started from.
    pub staleness: usize,
    pub delay: f64,
    pub steps: usize,
    pub final_params: ParamVector,
    /// Local iterates `x_{c,0} .. x_{c,steps}` when recording is enabled.
    pub iterates: Option<Vec<ParamVector>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingTrace {
    pub records: Vec<RoundRecord>,
    /// `clients[j]` lists the participants of round `j + 1`, ascending id.
    pub clients: Vec<Vec<ClientRound>>,
    /// Global models `x^(0) .. x^(rounds)`.
    pub globals: Vec<ParamVector>,
}

impl TrainingTrace {
    pub fn final_params(&self) -> &ParamVector {
        self.globals.last().expect("globals holds at least x^(0)")
    }

    pub fn server_losses(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.server_loss).collect()
    }
}

/// Uniform `j`-subset of `0..c`, ascending.
pub fn select_clients<R: Rng + ?Sized>(c: usize, j: usize, rng: &mut R) -> Result<Vec<usize>> {
    if j == 0 || j > c {
        return Err(AflError::InvalidArgument(format!(
            "cannot select {j} of {c} clients"
        )));
    }
    let mut ids = index::sample(rng, c, j).into_vec();
    ids.sort_unstable();
    Ok(ids)
}

/// Mutable simulation state; one [`Simulator::step`] is one round.
pub struct Simulator<'a> {
    config: ExperimentConfig,
    federation: &'a Federation,
    history: GlobalModelHistory,
    prev_tau: f64,
    trace: TrainingTrace,
}

impl<'a> Simulator<'a> {
    pub fn new(config: &ExperimentConfig, federation: &'a Federation) -> Result<Self> {
        config.validate()?;
        if federation.num_clients() != config.clients {
            return Err(AflError::InvalidArgument(format!(
                "config has {} clients, federation {}",
                config.clients,
                federation.num_clients()
            )));
        }
        let initial = ParamVector::zeros(federation.data.dim());
        let tau_max = match config.mode {
            Mode::Afl => config.tau_max,
            Mode::Sync => 0,
        };
        Ok(Self {
            config: config.clone(),
            federation,
            history: GlobalModelHistory::new(tau_max, initial.clone()),
            prev_tau: 0.0,
            trace: TrainingTrace {
                records: Vec::with_capacity(config.rounds),
                clients: Vec::with_capacity(config.rounds),
                globals: vec![initial],
            },
        })
    }

    pub fn history(&self) -> &GlobalModelHistory {
        &self.history
    }

    /// Runs one aggregation round and returns its record.
    pub fn step(&mut self) -> Result<&RoundRecord> {
        let cfg = &self.config;
        let t = self.history.current_round();
        let master = cfg.seed;
        let tau_for_lr = match cfg.mode {
            Mode::Afl => self.prev_tau,
            Mode::Sync => 0.0,
        };
        let gamma = cfg.schedule().rate(t, tau_for_lr);

        let mut sel_rng = seed::stream(master, "select", &[t as u64]);
        let selected = select_clients(cfg.clients, cfg.participants(), &mut sel_rng)?;

        let delay_model = cfg.delay_model();
        let kind = cfg.model_kind();
        let sgd = LocalSgd {
            epochs: cfg.local_epochs,
            batch: cfg.batch,
            lr: gamma,
            record_iterates: cfg.record_iterates,
        };
        let history = &self.history;
        let federation = self.federation;
        let mode = cfg.mode;

        let results: Vec<Result<ClientRound>> = selected
            .par_iter()
            .map(|&c| {
                let key = [c as u64, t as u64];
                let staleness = match mode {
                    Mode::Afl => {
                        let mut rng = seed::stream(master, "staleness", &key);
                        delay::sample_staleness(&delay_model, t, &mut rng)
                    }
                    Mode::Sync => 0,
                };
                let start = history.lookup(staleness)?;
                let sgd_seed = seed::derive_seed(master, "sgd", &key);
                let started = Instant::now();
                let report = sgd
                    .run(start, &federation.shards[c], &kind, sgd_seed)
                    .map_err(|e| e.in_round(t + 1, c))?;
                let delay = match delay_model.mode {
                    DelayMode::Simulated => {
                        let mut rng = seed::stream(master, "delay", &key);
                        delay::sample_delay(&delay_model, federation.scales[c], &mut rng)
                    }
                    DelayMode::Wallclock => started.elapsed().as_secs_f64(),
                };
                Ok(ClientRound {
                    client: c,
                    staleness,
                    delay,
                    steps: report.steps_taken,
                    final_params: report.final_params,
                    iterates: report.iterates,
                })
            })
            .collect();
        let mut rounds = results.into_iter().collect::<Result<Vec<_>>>()?;
        rounds.sort_by_key(|r| r.client);

        let delays: BTreeMap<usize, f64> = rounds.iter().map(|r| (r.client, r.delay)).collect();
        let tau_t = delay::round_delay_spread(&delays)?;
        let global = average_params(rounds.iter().map(|r| &r.final_params))?;
        let server_loss = kind.mean_loss(&global, &self.federation.data)?;
        if !server_loss.is_finite() {
            return Err(AflError::Divergence {
                round: Some(t + 1),
                client: None,
                step: 0,
                detail: "non-finite server loss".into(),
            });
        }

        self.prev_tau = tau_t;
        self.history.push(global.clone());
        self.trace.globals.push(global);
        self.trace.clients.push(rounds);
        self.trace.records.push(RoundRecord {
            round: t + 1,
            server_loss,
            selected,
            delays,
            tau_t,
            gamma_t: gamma,
        });
        Ok(self.trace.records.last().expect("just pushed"))
    }

    pub fn run(mut self) -> Result<TrainingTrace> {
        for _ in 0..self.config.rounds {
            self.step()?;
        }
        Ok(self.trace)
    }
}

/// Runs `config.rounds` rounds in `config.mode` over a prepared federation.
pub fn run_on(config: &ExperimentConfig, federation: &Federation) -> Result<TrainingTrace> {
    Simulator::new(config, federation)?.run()
}

/// Builds the federation from the config and runs it in `config.mode`.
pub fn run(config: &ExperimentConfig) -> Result<TrainingTrace> {
    let federation = Federation::build(config)?;
    run_on(config, &federation)
}

pub fn run_afl(config: &ExperimentConfig) -> Result<TrainingTrace> {
    run(&ExperimentConfig {
        mode: Mode::Afl,
        ..config.clone()
    })
}

/// Same pipeline with every staleness forced to 0 and `tau_t = 0` in the
/// learning-rate schedule.
pub fn run_sync_fl(config: &ExperimentConfig) -> Result<TrainingTrace> {
    run(&ExperimentConfig {
        mode: Mode::Sync,
        ..config.clone()
    })
}
