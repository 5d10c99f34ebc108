mod common;

use std::path::Path;

use proptest::prelude::*;
use svkit::backend::read_scores;
use svkit::metrics::{det_sweep, eer, min_dcf, DcfParams};

#[test]
fn matches_brute_force_on_small_sets() {
    let dcf = DcfParams::default();
    let loose = DcfParams { p_tar: 0.3, c_miss: 2.0, c_fa: 0.5 };
    let cases = common::metric_cases(11, 3);
    assert!(cases.len() >= 10_000);
    for trials in &cases {
        assert_eq!(eer(trials).unwrap().0, common::brute_eer(trials), "{trials:?}");
        assert_eq!(min_dcf(trials, &dcf).unwrap().0, common::brute_min_dcf(trials, 0.01, 1.0, 1.0));
        assert_eq!(min_dcf(trials, &loose).unwrap().0, common::brute_min_dcf(trials, 0.3, 2.0, 0.5));
        let ours: Vec<_> = det_sweep(trials).unwrap().iter().map(|p| (p.threshold, p.p_miss, p.p_fa)).collect();
        assert_eq!(ours, common::brute_sweep(trials));
    }
}

#[test]
fn six_trial_fixture() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/eval6");
    let mut scores = read_scores(&dir.join("scores.txt")).unwrap();
    scores.attach_labels(&svkit::backend::read_trials(&dir.join("trials.txt")).unwrap()).unwrap();
    let trials = scores.labeled().unwrap();
    let expected: Vec<f64> = std::fs::read_to_string(dir.join("expected.txt"))
        .unwrap()
        .lines()
        .map(|l| l.split_whitespace().nth(1).unwrap().parse().unwrap())
        .collect();
    let (e, et) = eer(&trials).unwrap();
    let (d, dt) = min_dcf(&trials, &DcfParams::default()).unwrap();
    assert_eq!([e, et, d, dt], expected[..]);
}

#[test]
fn perfect_and_inverted_systems() {
    let good = [(0.9, true), (0.8, true), (0.1, false), (0.2, false)];
    assert_eq!(eer(&good).unwrap().0, 0.0);
    assert_eq!(min_dcf(&good, &DcfParams::default()).unwrap().0, 0.0);
    let bad: Vec<_> = good.iter().map(|&(s, l)| (s, !l)).collect();
    assert_eq!(eer(&bad).unwrap().0, 1.0);
    assert_eq!(min_dcf(&bad, &DcfParams::default()).unwrap().0, 1.0);
}

#[test]
fn single_class_is_rejected() {
    assert!(eer(&[(0.1, true), (0.4, true)]).is_err());
    assert!(min_dcf(&[(0.1, false)], &DcfParams::default()).is_err());
    assert!(min_dcf(&[(0.1, false), (0.2, true)], &DcfParams { p_tar: 0.0, ..Default::default() }).is_err());
}

fn labeled() -> impl Strategy<Value = Vec<(f64, bool)>> {
    prop::collection::vec((-5.0f64..5.0, any::<bool>()), 2..60)
        .prop_filter("both classes", |v| v.iter().any(|t| t.1) && v.iter().any(|t| !t.1))
}

proptest! {
    #[test]
    fn rates_stay_in_unit_interval(trials in labeled()) {
        let (e, _) = eer(&trials).unwrap();
        let (d, _) = min_dcf(&trials, &DcfParams::default()).unwrap();
        prop_assert!((0.0..=1.0).contains(&e));
        prop_assert!((0.0..=1.0).contains(&d));
    }

    #[test]
    fn sweep_is_monotone(trials in labeled()) {
        let pts = det_sweep(&trials).unwrap();
        for w in pts.windows(2) {
            prop_assert!(w[0].threshold < w[1].threshold);
            prop_assert!(w[0].p_miss <= w[1].p_miss && w[0].p_fa >= w[1].p_fa);
        }
    }

    #[test]
    fn increasing_transform_keeps_rates(trials in labeled()) {
        let moved: Vec<_> = trials.iter().map(|&(s, l)| (3.0 * s + 1.0, l)).collect();
        prop_assert_eq!(eer(&trials).unwrap().0, eer(&moved).unwrap().0);
        let p = DcfParams::default();
        prop_assert_eq!(min_dcf(&trials, &p).unwrap().0, min_dcf(&moved, &p).unwrap().0);
    }
}
