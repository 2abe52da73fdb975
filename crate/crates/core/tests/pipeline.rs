use alsched::acquisition::AcquisitionKind;
use alsched::clustering::ClusterMode;
use alsched::data::{split_dataset, synth_generate, Dataset, SampleId, SynthSpec};
use alsched::model::Architecture;
use alsched::pipeline::{run_baseline, run_training, warm_start_select, RunConfig, Sampling, Session, Start};
use alsched::rng::stream;
use alsched::scheduler::SchedulerKind;

/// 100 training samples (125 before an 80/10/10 split).
fn small() -> Dataset {
    let spec = SynthSpec {
        classes: 5,
        samples_per_class: 25,
        feature_dim: 6,
        separation: 3.0,
        ..SynthSpec::default()
    };
    split_dataset(&synth_generate(&spec).unwrap(), [0.8, 0.1, 0.1], 3).unwrap()
}

fn entropy() -> RunConfig {
    RunConfig {
        acquisition: AcquisitionKind::Entropy,
        learning_rate: 0.01,
        hidden_dim: 16,
        ..RunConfig::default()
    }
}

#[test]
fn accumulating_base_sizes_follow_the_remaining_pool() {
    let data = small();
    let mut s = Session::new(&entropy(), &data).unwrap();
    assert_eq!(s.state().train_size(), 100);
    assert_eq!(s.run_epoch().unwrap().annotated_count, 75);
    let second = s.run_epoch().unwrap();
    assert_eq!(second.newly_annotated, 19);
    assert_eq!(second.annotated_count, 94);
}

#[test]
fn warm_start_annotates_half_then_uses_epoch_two_fraction() {
    let data = small();
    let cfg = RunConfig {
        start: Start::Warm,
        scheduler: SchedulerKind::Linear,
        ..entropy()
    };
    let mut s = Session::new(&cfg, &data).unwrap();
    assert_eq!(s.run_epoch().unwrap().annotated_count, 50);
    // Epoch two of the linear table is 20% of the 50 left.
    assert_eq!(s.run_epoch().unwrap().newly_annotated, 10);
}

#[test]
fn warm_start_select_sizes_and_seeds() {
    let ten: Vec<SampleId> = (0..10).map(SampleId).collect();
    assert_eq!(warm_start_select(&ten, &mut stream(0, &[])).selected.len(), 5);
    assert_eq!(warm_start_select(&ten[..1], &mut stream(0, &[])).selected.len(), 1);
    let big: Vec<SampleId> = (0..1000).map(SampleId).collect();
    let a = warm_start_select(&big, &mut stream(1, &[])).selected;
    let b = warm_start_select(&big, &mut stream(2, &[])).selected;
    assert_eq!(a.len(), 500);
    assert_ne!(a, b);
}

#[test]
fn recalculating_takes_75_each_epoch() {
    let data = small();
    for scheduler in [SchedulerKind::Base, SchedulerKind::Prob] {
        let cfg = RunConfig {
            sampling: Sampling::Recalculating,
            scheduler,
            ..entropy()
        };
        let reports = run_training(&cfg, &data).unwrap();
        assert_eq!(reports.len(), 5);
        for r in &reports {
            assert_eq!(r.annotated_count, 75);
            assert!(r.cumulative_fraction >= 0.75 && r.cumulative_fraction <= 1.0);
        }
        assert!(reports
            .windows(2)
            .all(|w| w[0].cumulative_fraction <= w[1].cumulative_fraction));
        if scheduler == SchedulerKind::Base {
            // The top-scored samples overlap from epoch to epoch.
            assert!(reports[4].cumulative_fraction < 1.0, "{reports:?}");
        }
    }
}

#[test]
fn accumulating_fractions_are_monotone_and_bounded() {
    let data = small();
    for scheduler in SchedulerKind::ALL {
        let cfg = RunConfig {
            architecture: Architecture::Enn,
            acquisition: AcquisitionKind::Bald,
            clustering: ClusterMode::Dynamic,
            scheduler,
            acquisition_draws: 4,
            eval_draws: 4,
            ..entropy()
        };
        let reports = run_training(&cfg, &data).unwrap();
        let mut prev = 0.0;
        for r in &reports {
            assert_eq!(r.annotated_fraction, r.cumulative_fraction, "{scheduler:?}");
            assert!(r.cumulative_fraction >= prev && r.cumulative_fraction <= 1.0);
            assert!((0.0..=1.0).contains(&r.val_f1) && (0.0..=1.0).contains(&r.test_f1));
            prev = r.cumulative_fraction;
        }
    }
}

#[test]
fn no_acquisition_matches_baseline() {
    let data = small();
    let cfg = RunConfig {
        start: Start::Warm,
        scheduler: SchedulerKind::Linear,
        ..entropy()
    };
    let plain = RunConfig {
        acquisition: AcquisitionKind::None,
        ..cfg.clone()
    };
    let a = run_training(&plain, &data).unwrap();
    let b = run_baseline(&cfg, &data).unwrap();
    assert_eq!(a, b);
    assert!(b.iter().all(|r| r.annotated_fraction == 1.0));
    assert_eq!(b.len(), 5);
}

#[test]
fn baseline_separates_easy_data() {
    let spec = SynthSpec {
        classes: 3,
        samples_per_class: 200,
        feature_dim: 6,
        separation: 10.0,
        noise: 1.0,
        ..SynthSpec::default()
    };
    let data = split_dataset(&synth_generate(&spec).unwrap(), [0.8, 0.1, 0.1], 0).unwrap();
    let reports = run_baseline(&entropy(), &data).unwrap();
    assert!(reports.last().unwrap().test_f1 > 0.95, "{reports:?}");
}

#[test]
fn exhausted_pool_keeps_training() {
    let data = small();
    let cfg = RunConfig { epochs: 6, ..entropy() };
    let mut s = Session::new(&cfg, &data).unwrap();
    let reports: Vec<_> = (0..6).map(|_| s.run_epoch().unwrap()).collect();
    let last = &reports[5];
    assert_eq!(last.newly_annotated, 0);
    assert_eq!(last.annotated_count, 100);
    assert!(last.train_loss.is_some());
}

#[test]
fn incompatible_config_refused_before_running() {
    let cfg = RunConfig {
        acquisition: AcquisitionKind::Variance,
        ..entropy()
    };
    assert!(Session::new(&cfg, &small()).is_err());
}
