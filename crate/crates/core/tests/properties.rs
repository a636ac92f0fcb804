use std::collections::BTreeMap;

use afl_core::data::{dirichlet_partition, gen_regression_data};
use afl_core::delay::{delay_adjusted_lr, sample_staleness, DelayModel, LrSchedule};
use afl_core::metrics::{
    cumulative_wall_clock, energy_proxy, export_metrics, import_metrics_csv, import_metrics_json,
    ExportFormat, MetricsLog,
};
use afl_core::params::RoundRecord;
use afl_core::seed::stream;
use proptest::prelude::*;

fn records_from(delays: &[Vec<f64>]) -> Vec<RoundRecord> {
    delays
        .iter()
        .enumerate()
        .map(|(t, ds)| {
            let delays: BTreeMap<usize, f64> = ds.iter().copied().enumerate().collect();
            let hi = ds.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lo = ds.iter().copied().fold(f64::INFINITY, f64::min);
            RoundRecord {
                round: t + 1,
                server_loss: 1.0 / (t + 1) as f64,
                selected: (0..ds.len()).collect(),
                delays,
                tau_t: hi - lo,
                gamma_t: 0.01,
            }
        })
        .collect()
}

fn delay_rounds() -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(0.0..10.0f64, 1..5), 1..20)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn partition_is_an_exact_cover(n in 20usize..300, c in 1usize..6, zeta in 0.05..50.0f64, seed: u64) {
        let ds = gen_regression_data(n, 2, seed).unwrap();
        let plan = dirichlet_partition(&ds, c, zeta, seed, 1).unwrap();
        let mut all: Vec<usize> = plan.assignments.iter().flatten().copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        prop_assert!(plan.shard_sizes().iter().all(|&s| s >= 1));
    }

    #[test]
    fn staleness_never_exceeds_bound(tau_max in 0usize..6, round in 0usize..50, seed: u64) {
        let model = DelayModel { staleness_max: tau_max, ..DelayModel::default() };
        let mut rng = stream(seed, "prop", &[]);
        for _ in 0..32 {
            let s = sample_staleness(&model, round, &mut rng);
            prop_assert!(s <= tau_max.min(round));
        }
    }

    #[test]
    fn learning_rate_decreases(gamma0 in 1e-6..1.0f64, alpha in 0.0..=1.0f64, tau in 0.0..100.0f64, t in 0usize..10_000) {
        let s = LrSchedule::new(gamma0, alpha).unwrap();
        prop_assert!(delay_adjusted_lr(&s, t + 1, tau) < delay_adjusted_lr(&s, t, tau));
        prop_assert!(delay_adjusted_lr(&s, t, tau + 1.0) <= delay_adjusted_lr(&s, t, tau));
        prop_assert!(delay_adjusted_lr(&s, t, tau) <= gamma0);
    }

    #[test]
    fn cumulative_metrics_never_decrease(delays in delay_rounds()) {
        let records = records_from(&delays);
        let powers: BTreeMap<usize, f64> = (0..5).map(|c| (c, 45.0 + c as f64)).collect();
        let clock = cumulative_wall_clock(&records);
        let energy = energy_proxy(&records, &powers).unwrap();
        prop_assert_eq!(clock.len(), records.len());
        for w in clock.windows(2) {
            prop_assert!(w[1] >= w[0]);
        }
        for w in energy.windows(2) {
            prop_assert!(w[1] >= w[0]);
        }
    }

    #[test]
    fn exported_metrics_round_trip(delays in delay_rounds()) {
        let records = records_from(&delays);
        let powers: BTreeMap<usize, f64> = (0..5).map(|c| (c, 125.0)).collect();
        let log = MetricsLog::from_records(&records, &powers).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let json = export_metrics(&log, dir.path(), ExportFormat::Json).unwrap();
        prop_assert_eq!(&import_metrics_json(&json).unwrap(), &log);
        let csv = export_metrics(&log, dir.path(), ExportFormat::Csv).unwrap();
        let back = import_metrics_csv(&csv).unwrap();
        prop_assert_eq!(back.server_losses, log.server_losses);
        prop_assert_eq!(back.cum_wall_clock, log.cum_wall_clock);
        prop_assert_eq!(back.energy_proxy, log.energy_proxy);
        prop_assert_eq!(back.tau_t, log.tau_t);
    }
}
