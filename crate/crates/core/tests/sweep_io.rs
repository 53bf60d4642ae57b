use proptest::prelude::*;
use tradeoff_core::io::{generate_synthetic, load_csv, load_table, save_dataset_csv, save_table, SyntheticSpec};
use tradeoff_core::mechanisms::generate_laplace_grid;
use tradeoff_core::sweep::{evaluate_settings, EvaluationRecord, SubsetSchedule};
use tradeoff_core::{PrivacySetting, RngSeedPlan};

fn sweep(threads: usize) -> Vec<EvaluationRecord> {
    let ds = generate_synthetic(&SyntheticSpec::with_shape(40, 3, 24), 2).unwrap();
    let mut settings = generate_laplace_grid(0.01, 0.01, 0.05).unwrap().into_settings();
    settings.push(PrivacySetting::sine_polyonym(vec![0.3, 0.0, 0.6]).unwrap());
    settings.push(PrivacySetting::no_mask());
    let schedule = SubsetSchedule::new(vec![10, 25, 40], 2).unwrap();
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .unwrap()
        .install(|| evaluate_settings(&settings, &ds, &schedule, 3, &RngSeedPlan::new(11)))
}

#[test]
fn sweep_is_thread_count_invariant_and_round_trips() {
    let a = sweep(1);
    assert_eq!(a.len(), 7 * 3 * 2 * 3);
    assert_eq!(a, sweep(3));
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("records.csv");
    save_table(&p, &a).unwrap();
    assert_eq!(load_table::<EvaluationRecord>(&p).unwrap(), a);
}

#[test]
fn subsets_are_shared_across_settings() {
    let recs = sweep(1);
    let lap = recs.iter().filter(|r| r.setting.id() == "lap-0.01");
    let nomask = recs.iter().filter(|r| r.setting.id() == "nomask");
    for (x, y) in lap.zip(nomask) {
        assert_eq!(x.key().1..=x.key().3, y.key().1..=y.key().3);
        assert_eq!(x.seed, y.seed);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn dataset_csv_round_trip(users in 1usize..6, days in 1usize..4, slots in 1usize..6, seed in any::<u64>()) {
        let ds = generate_synthetic(&SyntheticSpec::with_shape(users, days, slots), seed).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ds.csv");
        save_dataset_csv(&p, &ds).unwrap();
        let back = load_csv(&p, slots).unwrap();
        prop_assert_eq!(back, ds);
    }
}
