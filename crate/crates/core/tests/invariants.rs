mod common;

use proptest::prelude::*;
use sqa_core::data::{assign_splits, denormalize_mos, normalize_mos, Corpus, SampleRecord, Split};
use sqa_core::features::FeatureSequence;
use sqa_core::metrics::{dequantize_human_rmse, human_rmse};
use sqa_core::model::{BatchInput, Predictor};
use sqa_core::probing::find_local_optima;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn batch_order_does_not_change_predictions(lens in prop::collection::vec(1usize..9, 2..6), seed in 0u64..1000) {
        let m = Predictor::new(common::tiny_transformer(4, 1), seed).unwrap();
        let seqs: Vec<FeatureSequence> = lens.iter().enumerate().map(|(i, &t)| common::random_seq(t, 4, seed + i as u64)).collect();
        let fwd: Vec<&[FeatureSequence]> = seqs.iter().map(std::slice::from_ref).collect();
        let rev: Vec<&[FeatureSequence]> = fwd.iter().rev().cloned().collect();
        let a = m.predict_batch(&BatchInput::from_samples(&fwd).unwrap()).unwrap();
        let mut b = m.predict_batch(&BatchInput::from_samples(&rev).unwrap()).unwrap();
        b.reverse();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x.normalized - y.normalized).abs() < 1e-10);
        }
    }

    #[test]
    fn dequantization_is_monotone_and_never_increases(r1 in 0.0f64..3.0, r2 in 0.0f64..3.0, step in 0.01f64..2.0) {
        let (lo, hi) = if r1 <= r2 { (r1, r2) } else { (r2, r1) };
        let a = dequantize_human_rmse(lo, step).unwrap();
        let b = dequantize_human_rmse(hi, step).unwrap();
        prop_assert!(a <= b + 1e-15);
        prop_assert!(b <= hi && b >= 0.0);
    }

    #[test]
    fn human_rmse_ignores_record_order(stats in prop::collection::vec((1u32..20, 0.0f64..2.0), 1..20)) {
        let records: Vec<SampleRecord> = stats.iter().enumerate()
            .map(|(i, &(n, sd))| SampleRecord::new(format!("r{i}"), Corpus::Nisqa, 3.0).with_votes(n, sd))
            .collect();
        let mut reversed = records.clone();
        reversed.reverse();
        let a = human_rmse(&records).unwrap().rmse_human;
        let b = human_rmse(&reversed).unwrap().rmse_human;
        prop_assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn splits_partition_every_record(n in 1usize..300, seed in any::<u64>()) {
        let recs: Vec<SampleRecord> = (0..n).map(|i| SampleRecord::new(format!("x{i}"), Corpus::Pstn, 3.0)).collect();
        let out = assign_splits(recs, seed).unwrap();
        let train = out.iter().filter(|r| r.split == Split::Train).count();
        prop_assert_eq!(train, (85 * n).div_ceil(100));
        prop_assert!(out.iter().all(|r| matches!(r.split, Split::Train | Split::Validation)));
    }

    #[test]
    fn mos_normalization_round_trips(mos in 1.0f64..=5.0) {
        let x = normalize_mos(mos).unwrap();
        prop_assert!((0.0..=1.0).contains(&x));
        prop_assert!((denormalize_mos(x).unwrap() - mos).abs() < 1e-12);
    }

    #[test]
    fn optima_are_local_minima(v in prop::collection::vec(0u8..6, 1..40)) {
        let v: Vec<f64> = v.into_iter().map(f64::from).collect();
        for (a, b) in find_local_optima(&v) {
            prop_assert!((a..=b).all(|i| v[i] == v[a]));
            prop_assert!(a == 0 || v[a - 1] > v[a]);
            prop_assert!(b + 1 == v.len() || v[b + 1] > v[b]);
        }
    }
}
