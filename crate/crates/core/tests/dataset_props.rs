use gdiff_core::dataset::{generate_dataset, split_train_test, DatasetKind, DatasetSpec};
use gdiff_core::graph::Alphabet;
use proptest::prelude::*;

fn kinds() -> impl Strategy<Value = DatasetKind> {
    prop_oneof![Just(DatasetKind::Community), Just(DatasetKind::Sbm)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn generated_graphs_are_valid_and_pure(kind in kinds(), count in 0usize..12, seed in any::<u64>()) {
        let spec = DatasetSpec { kind, count, seed };
        let gs = generate_dataset(&spec);
        prop_assert_eq!(gs.len(), count);
        let alphabet = Alphabet::new(1, 2).unwrap();
        for g in &gs {
            g.validate(&alphabet).unwrap();
        }
        prop_assert_eq!(&generate_dataset(&spec), &gs);
    }

    #[test]
    fn split_partitions_the_set(count in 0usize..40, seed in any::<u64>()) {
        let gs = generate_dataset(&DatasetSpec { kind: DatasetKind::Sbm, count, seed });
        let (train, test) = split_train_test(&gs, seed);
        prop_assert_eq!(train.len() + test.len(), count);
        prop_assert_eq!(train.len(), (0.8 * count as f64).round() as usize);
        for g in train.iter().chain(&test) {
            prop_assert!(gs.contains(g));
        }
    }
}
