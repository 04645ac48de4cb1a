//! Cross-module invariants: feature-tensor geometry, calendar-shift
//! invariance, the no-lookahead guarantee, SMOTE geometry, and split
//! hygiene.

use std::collections::BTreeMap;

use chrono::{Duration, NaiveDate};
use proptest::prelude::*;

use adhere_core::features::{
    attach_static, build_daily_samples, build_weekly_samples, FeatureNameMap, Task,
};
use adhere_core::harness::split_subject_kfold;
use adhere_core::ingest::{
    group_by_subject, label_daily, label_weekly, DoseEvent, IntervalWindow, SubjectId,
};
use adhere_core::preprocess::{smote, FitParams, PreprocessPlan};
use adhere_core::synthcohort::{generate, CohortSpec};

fn small_cohort(seed: u64) -> adhere_core::synthcohort::Cohort {
    let spec = CohortSpec { n_subjects: 6, n_days: 90, ..CohortSpec::default() };
    generate(&spec, seed).unwrap()
}

#[test]
fn flat_feature_counts_match_the_tensor_shapes() {
    let daily = FeatureNameMap::new(Task::Daily, 7);
    assert_eq!(daily.dynamic_names().len(), 42);
    let weekly = FeatureNameMap::new(Task::Weekly, 4);
    assert_eq!(weekly.dynamic_names().len(), 40);
    // bijectivity: names are unique and parse back to their positions
    for (map, lags) in [(&daily, 7usize), (&weekly, 4usize)] {
        let names = map.dynamic_names();
        let mut unique = names.clone();
        unique.sort();
        unique.dedup();
        assert_eq!(unique.len(), lags * map.channels.len());
        for (pos, name) in names.iter().enumerate() {
            let (lag, channel) = FeatureNameMap::parse_dynamic_name(name).unwrap();
            assert_eq!(pos, (lag - 1) * map.channels.len() + map.channels.iter().position(|c| c == channel).unwrap());
        }
    }
}

#[test]
fn shifting_by_whole_weeks_preserves_dynamic_features() {
    let cohort = small_cohort(21);
    let series = group_by_subject(&cohort.events);
    let days = label_daily(&series, IntervalWindow::default());
    let daily = build_daily_samples(&days, 7);
    let weeks = label_weekly(&days, 0.8);
    let weekly = build_weekly_samples(&weeks, 4);

    let shifted_events: Vec<DoseEvent> = cohort
        .events
        .iter()
        .map(|e| DoseEvent {
            subject_id: e.subject_id.clone(),
            timestamp: e.timestamp + Duration::days(14),
        })
        .collect();
    let shifted_series = group_by_subject(&shifted_events);
    let shifted_days = label_daily(&shifted_series, IntervalWindow::default());
    let shifted_daily = build_daily_samples(&shifted_days, 7);
    let shifted_weeks = label_weekly(&shifted_days, 0.8);
    let shifted_weekly = build_weekly_samples(&shifted_weeks, 4);

    assert_eq!(daily.samples.len(), shifted_daily.samples.len());
    for (a, b) in daily.samples.iter().zip(&shifted_daily.samples) {
        assert_eq!(a.target_start + Duration::days(14), b.target_start);
        assert_eq!(a.dynamic, b.dynamic, "daily features are week-shift invariant");
        assert_eq!(a.label, b.label);
    }
    assert_eq!(weekly.samples.len(), shifted_weekly.samples.len());
    for (a, b) in weekly.samples.iter().zip(&shifted_weekly.samples) {
        assert_eq!(a.dynamic, b.dynamic, "weekly features are week-shift invariant");
        assert_eq!(a.label, b.label);
    }
}

#[test]
fn dynamic_features_never_read_the_target_date_or_later() {
    let cohort = small_cohort(8);
    let series = group_by_subject(&cohort.events);
    let days = label_daily(&series, IntervalWindow::default());
    let baseline = build_daily_samples(&days, 7);

    // poison every label at dates ≥ the probe target and rebuild
    for probe in baseline.samples.iter().step_by(17) {
        let poisoned: Vec<_> = days
            .iter()
            .map(|d| {
                let mut d = d.clone();
                if d.date >= probe.target_start {
                    d.adherent = !d.adherent;
                    d.opening_hour = Some(3.0);
                    d.epoch = Some(adhere_core::ingest::Epoch::Night);
                }
                d
            })
            .collect();
        let rebuilt = build_daily_samples(&poisoned, 7);
        let twin = rebuilt
            .samples
            .iter()
            .find(|s| s.subject_id == probe.subject_id && s.target_start == probe.target_start)
            .expect("poisoning labels never removes samples");
        assert_eq!(twin.dynamic, probe.dynamic, "future labels leaked into features");
    }
}

#[test]
fn attach_static_is_pure_over_sample_order() {
    let cohort = small_cohort(30);
    let series = group_by_subject(&cohort.events);
    let anchors: BTreeMap<SubjectId, NaiveDate> =
        series.iter().map(|s| (s.subject_id.clone(), s.anchor_date)).collect();
    let days = label_daily(&series, IntervalWindow::default());
    let set = build_daily_samples(&days, 7);
    let mut reversed = set.clone();
    reversed.samples.reverse();
    let (a, _) = attach_static(set, &cohort.surveys, &anchors).unwrap();
    let (b, _) = attach_static(reversed, &cohort.surveys, &anchors).unwrap();
    let mut b_samples = b.samples;
    b_samples.reverse();
    for (x, y) in a.samples.iter().zip(&b_samples) {
        assert_eq!(x.subject_id, y.subject_id);
        assert_eq!(x.static_categorical, y.static_categorical);
        assert_eq!(
            x.static_numeric.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            y.static_numeric.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn smote_outputs_stay_in_the_minority_bounding_box(
        seed in 0u64..1000,
        n_major in 6usize..20,
        n_minor in 2usize..6,
    ) {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for _ in 0..n_major {
            rows.push(vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]);
            labels.push(false);
        }
        for _ in 0..n_minor {
            rows.push(vec![rng.random_range(4.0..6.0), rng.random_range(4.0..6.0), rng.random_range(4.0..6.0)]);
            labels.push(true);
        }
        let out = smote(&rows, &labels, 5, seed).unwrap();
        prop_assert_eq!(out.n_synthetic, n_major - n_minor);
        let pos = out.labels.iter().filter(|l| **l).count();
        prop_assert_eq!(pos, out.labels.len() - pos);

        // synthetic rows lie inside the minority bounding box (a convex-hull
        // projection property of segment interpolation)
        for j in 0..3 {
            let lo = rows[n_major..].iter().map(|r| r[j]).fold(f64::INFINITY, f64::min);
            let hi = rows[n_major..].iter().map(|r| r[j]).fold(f64::NEG_INFINITY, f64::max);
            for row in &out.rows[rows.len()..] {
                prop_assert!(row[j] >= lo - 1e-12 && row[j] <= hi + 1e-12);
            }
        }
    }

    #[test]
    fn kfold_invariants_hold_for_any_cohort_size(n in 5usize..40, k in 2usize..6, seed in 0u64..500) {
        prop_assume!(k <= n);
        let ids: Vec<SubjectId> = (0..n).map(|i| SubjectId::new(format!("S{i}"))).collect();
        let plan = split_subject_kfold(&ids, k, seed).unwrap();
        let mut test_sizes = Vec::new();
        let mut seen = Vec::new();
        for fold in &plan.folds {
            test_sizes.push(fold.test.len());
            seen.extend(fold.test.iter().cloned());
            let mut pool = fold.train.clone();
            pool.extend(fold.validation.iter().cloned());
            pool.extend(fold.test.iter().cloned());
            pool.sort();
            pool.dedup();
            prop_assert_eq!(pool.len(), n, "partitions are disjoint and complete");
        }
        seen.sort();
        let mut all = ids.clone();
        all.sort();
        prop_assert_eq!(seen, all);
        let min = test_sizes.iter().min().unwrap();
        let max = test_sizes.iter().max().unwrap();
        prop_assert!(max - min <= 1, "test group sizes differ by at most one");
    }
}

#[test]
fn preprocessing_plan_never_reads_heldout_rows() {
    let cohort = small_cohort(77);
    let series = group_by_subject(&cohort.events);
    let anchors: BTreeMap<SubjectId, NaiveDate> =
        series.iter().map(|s| (s.subject_id.clone(), s.anchor_date)).collect();
    let days = label_daily(&series, IntervalWindow::default());
    let set = build_daily_samples(&days, 7);
    let (set, _) = attach_static(set, &cohort.surveys, &anchors).unwrap();

    let subjects = set.subjects();
    let heldout = &subjects[..2];
    let train_rows: Vec<usize> = (0..set.samples.len())
        .filter(|&i| !heldout.contains(&set.samples[i].subject_id))
        .collect();

    let mut poisoned = set.clone();
    for s in poisoned.samples.iter_mut() {
        if heldout.contains(&s.subject_id) {
            s.dynamic.iter_mut().for_each(|v| *v = 1e6);
            s.static_numeric.iter_mut().for_each(|v| *v = -1e6);
            s.static_categorical.iter_mut().for_each(|c| *c = Some("poison".to_string()));
            s.label = !s.label;
        }
    }

    let params = FitParams { seed: 3, ..FitParams::default() };
    let clean_plan = PreprocessPlan::fit(&set, &train_rows, &params).unwrap();
    let poisoned_plan = PreprocessPlan::fit(&poisoned, &train_rows, &params).unwrap();
    assert_eq!(
        serde_json::to_string(&clean_plan).unwrap(),
        serde_json::to_string(&poisoned_plan).unwrap()
    );
}
