mod common;

use hudcalib::calibrate::{calibration_report, fit_temperature, make_grid, Direction, Metric, Objective};
use hudcalib::hud::EvalSet;
use hudcalib::metrics::{evaluate, EvalOptions};

fn fit(alpha: f64, objective: Objective) -> (f64, f64, f64, bool) {
    let c = common::corpus(42, 1000, alpha, 0.0);
    let p = common::prepared(&c);
    let grid = make_grid(0.1, 2.0, 0.05).unwrap();
    let opts = EvalOptions::default();
    let f = fit_temperature(&p.samples, &c.vocab, &p.split, objective, &grid, &opts, EvalSet::All).unwrap();
    let before = evaluate(&p.samples, &c.vocab, &p.split, 1.0, &opts).unwrap();
    let after = evaluate(&p.samples, &c.vocab, &p.split, f.temperature, &opts).unwrap();
    let kl = |t: &hudcalib::metrics::MetricsTable| t.row(EvalSet::All).unwrap().kl;
    (f.temperature, kl(&before.table), kl(&after.table), f.saturated)
}

#[test]
fn recovers_overconfident_scale() {
    let (t, before, after, saturated) = fit(2.0, Objective::MeanKl);
    assert!((t - 2.0).abs() <= 0.05, "fitted {t}");
    assert!(after < before);
    assert!(saturated);
}

#[test]
fn recovers_underconfident_scale() {
    let (t, before, after, saturated) = fit(0.5, Objective::MeanKl);
    assert!((t - 0.5).abs() <= 0.05, "fitted {t}");
    assert!(after < before);
    assert!(!saturated);
}

#[test]
fn ece_fit_sharpens_underconfident_model() {
    let (t, ..) = fit(0.5, Objective::Ece);
    assert!(t < 1.0, "fitted {t}");
}

#[test]
fn human_direction_improves_every_set_when_overconfident() {
    let c = common::corpus(9, 1000, 3.0, 0.0);
    let p = common::prepared(&c);
    let grid = make_grid(0.1, 2.0, 0.05).unwrap();
    let opts = EvalOptions::default();
    let f = fit_temperature(
        &p.samples,
        &c.vocab,
        &p.split,
        Objective::MeanKl,
        &grid,
        &opts,
        EvalSet::All,
    )
    .unwrap();
    let before = evaluate(&p.samples, &c.vocab, &p.split, 1.0, &opts).unwrap();
    let after = evaluate(&p.samples, &c.vocab, &p.split, f.temperature, &opts).unwrap();
    let cmp = calibration_report(&before.table, &after.table).unwrap();
    for set in [EvalSet::Low, EvalSet::Medium, EvalSet::High] {
        for m in [Metric::Tvd, Metric::Kl, Metric::Entce] {
            assert_eq!(
                cmp.cell(set, m).unwrap().direction,
                Direction::Improved,
                "{set} {}",
                m.name()
            );
        }
        assert_eq!(cmp.cell(set, Metric::VqaAcc).unwrap().direction, Direction::Unchanged);
    }
}

#[test]
fn fit_is_deterministic() {
    let c = common::corpus(1, 300, 1.7, 0.4);
    let p = common::prepared(&c);
    let grid = make_grid(0.1, 2.0, 0.05).unwrap();
    let opts = EvalOptions::default();
    let a = fit_temperature(
        &p.samples,
        &c.vocab,
        &p.split,
        Objective::MeanTvd,
        &grid,
        &opts,
        EvalSet::High,
    )
    .unwrap();
    let b = fit_temperature(
        &p.samples,
        &c.vocab,
        &p.split,
        Objective::MeanTvd,
        &grid,
        &opts,
        EvalSet::High,
    )
    .unwrap();
    assert_eq!(a, b);
    assert_eq!(a.scores.len(), 39);
}
