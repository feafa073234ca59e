mod common;

use auglstm::data::SyntheticTask;
use auglstm::mc::{
    aggregate, curve_from_samples, draw_samples, example_seed, mc_accuracy, mc_curve, p_range, standard_accuracy,
    AggregationStrategy, McRunSpec,
};
use auglstm::model::{Classifier, ModelConfig};
use auglstm::Rng;
use common::synthetic;
use proptest::prelude::*;

fn model(keep: f64, seed: u64) -> Classifier {
    let cfg = ModelConfig {
        input_keep_prob: keep,
        ..ModelConfig::baseline(2, 6, 6, 3)
    };
    let mut m = Classifier::random(cfg, 12, &mut Rng::new(seed, 0)).unwrap();
    let mut rng = Rng::new(seed, 1);
    for t in m.params.tensors_mut() {
        *t = rng.uniform_tensor(t.shape(), 0.6);
    }
    m
}

#[test]
fn samples_are_reproducible_and_stream_indexed() {
    let m = model(0.5, 3);
    let a = draw_samples(&m, &[2, 5, 7, 3], 12, 99).unwrap();
    let b = draw_samples(&m, &[2, 5, 7, 3], 12, 99).unwrap();
    assert_eq!(a, b);
    // A longer draw extends the shorter one.
    let c = draw_samples(&m, &[2, 5, 7, 3], 20, 99).unwrap();
    assert_eq!(a.samples[..], c.samples[..12]);
    let d = draw_samples(&m, &[2, 5, 7, 3], 12, 100).unwrap();
    assert_ne!(a, d);
}

#[test]
fn keep_one_mc_equals_standard() {
    let m = model(1.0, 4);
    let data = synthetic(SyntheticTask::MajorityToken, 30, 5, 12, 3, 1);
    let std = standard_accuracy(&m, &data).unwrap();
    for strategy in AggregationStrategy::ALL {
        assert_eq!(mc_accuracy(&m, &data, 5, strategy, 7).unwrap(), std, "{}", strategy.name());
    }
}

#[test]
fn curve_rejects_bad_protocols() {
    let m = model(0.5, 5);
    let data = synthetic(SyntheticTask::MajorityToken, 4, 5, 12, 3, 2);
    let too_big = McRunSpec {
        k: 10,
        p_values: vec![2, 11],
        ..McRunSpec::default()
    };
    assert!(mc_curve(&m, &data, &too_big).is_err());
    let one_resample = McRunSpec {
        k: 10,
        p_values: vec![2],
        m: 1,
        ..McRunSpec::default()
    };
    assert!(mc_curve(&m, &data, &one_resample).is_err());
    assert!(mc_curve(&m, &[], &McRunSpec { k: 4, p_values: vec![2], ..McRunSpec::default() }).is_err());
}

#[test]
fn curve_is_seed_deterministic_and_writes_csv() {
    let m = model(0.5, 6);
    let data = synthetic(SyntheticTask::MajorityToken, 20, 5, 12, 3, 3);
    let spec = McRunSpec {
        k: 16,
        p_values: p_range(2, 16, 2),
        m: 5,
        seed: 11,
        ..McRunSpec::default()
    };
    let a = mc_curve(&m, &data, &spec).unwrap();
    let b = mc_curve(&m, &data, &spec).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.points.len(), 8);
    let last = a.points.last().unwrap();
    assert_eq!(last.p, 16);
    assert_eq!(last.variance, 0.0);
    assert_eq!(last.ci_low, last.ci_high);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("curve.csv");
    a.write_csv(&path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "p,mean_acc,ci_low,ci_high,baseline_acc");
    assert_eq!(lines.count(), 8);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn curve_points_are_ordered_intervals(seed in 0u64..200, m_resamples in 2usize..6) {
        let model = model(0.5, seed);
        let data = synthetic(SyntheticTask::MajorityToken, 8, 4, 12, 3, seed);
        let spec = McRunSpec { k: 8, p_values: vec![1, 3, 8], m: m_resamples, seed, ..McRunSpec::default() };
        let sets: Vec<_> = data
            .iter()
            .enumerate()
            .map(|(i, ex)| draw_samples(&model, &ex.token_ids, spec.k, example_seed(seed, i)).unwrap())
            .collect();
        let curve = curve_from_samples(&model, &data, &sets, &spec).unwrap();
        for p in &curve.points {
            prop_assert!(p.ci_low <= p.mean_acc && p.mean_acc <= p.ci_high);
            prop_assert!((0.0..=1.0).contains(&p.mean_acc));
            prop_assert!(p.variance >= 0.0);
        }
    }

    #[test]
    fn single_sample_aggregation_is_its_argmax(seed in 0u64..200) {
        let model = model(0.5, seed);
        let set = draw_samples(&model, &[1, 2, 3], 5, seed).unwrap();
        for (i, s) in set.samples.iter().enumerate() {
            let argmax = s.probs.data().iter().enumerate().fold(0, |b, (j, v)| if *v > s.probs.data()[b] { j } else { b });
            for strategy in AggregationStrategy::ALL {
                prop_assert_eq!(aggregate(&set, &[i], strategy, &model.params.projection).unwrap(), argmax);
            }
        }
    }
}
