//! Rolling forecasts and alerts from a small trained ensemble.

use chrono::{TimeZone, Utc};
use scour_core::dataset::{FeatureCombo, Prepared, WindowSpec};
use scour_core::earlywarn::{
    band, pooled_by_time, rolling_forecast, AlertConfig, AlertLevel, AlertReport, Aligned, RollingForecast,
};
use scour_core::exec::Exec;
use scour_core::harness::train_ensemble;
use scour_core::ingest::{Channel, UniformSeries};
use scour_core::neural::{Model, ModelConfig};

const SPEC: WindowSpec = WindowSpec { input_width: 24, label_width: 12 };

fn forecast(exec: Exec) -> (Prepared, RollingForecast) {
    let n = 1200;
    let mut s = UniformSeries::new(Utc.with_ymd_and_hms(2022, 6, 1, 0, 0, 0).unwrap(), n);
    let t = |i: usize| i as f64;
    s.set_channel(Channel::Sonar, (0..n).map(|i| Some(30.0 - 0.8 * (t(i) / 60.0).sin().abs())).collect()).unwrap();
    s.set_channel(Channel::Stage, (0..n).map(|i| Some(33.0 + 1.2 * (t(i) / 60.0).sin())).collect()).unwrap();
    let prepared = Prepared::new(&s, 0.2, 0.2).unwrap();
    let windows = prepared.windows(FeatureCombo::Ss, SPEC, 4).unwrap();
    let cfg = ModelConfig { window: SPEC, units: 6, max_epochs: 4, seed: 3, ..Default::default() };
    let ensemble = train_ensemble(&cfg, &windows, &prepared.norm, 4, exec).unwrap();
    let members: Vec<Model> = ensemble.members.into_iter().map(|(_, t)| t.model).collect();
    let fc = rolling_forecast(&members, &prepared.norm, &windows.test, 6, exec).unwrap();
    (prepared, fc)
}

#[test]
fn forecast_is_in_physical_units_and_independent_of_execution_mode() {
    let (prepared, fc) = forecast(Exec::Parallel);
    let (_, seq) = forecast(Exec::Sequential);
    assert_eq!(fc.predictions, seq.predictions);
    assert_eq!(fc.members(), 4);
    assert_eq!(fc.horizon(), 12);
    assert_eq!(fc.label_channels, vec![Channel::Sonar, Channel::Stage]);
    // Actuals are the denormalized test series.
    let (mean, _) = prepared.norm.get(Channel::Sonar).unwrap();
    assert!(fc.actual.iter().step_by(2).all(|v| (v - mean).abs() < 2.0));
    for k in 0..fc.origins.len() {
        assert!(fc.origins[k] >= prepared.ranges.test.start + SPEC.input_width - 1);
        assert!(fc.origins[k] + SPEC.label_width < prepared.ranges.test.end);
        if k > 0 {
            assert_eq!(fc.origins[k] - fc.origins[k - 1], 6);
        }
    }
}

#[test]
fn members_csv_round_trips_exactly() {
    let (_, fc) = forecast(Exec::Parallel);
    let mut buf = Vec::new();
    fc.write_members_csv(&mut buf).unwrap();
    let back = RollingForecast::read_members_csv(buf.as_slice()).unwrap();
    assert_eq!(back.origins, fc.origins);
    assert_eq!(back.predictions, fc.predictions);
    assert_eq!(back.actual, fc.actual);
    assert_eq!(back.at_origin, fc.at_origin);
    assert_eq!(back.series_origin, fc.series_origin);
}

#[test]
fn pooled_statistics_bracket_the_mean() {
    let (_, fc) = forecast(Exec::Parallel);
    let pooled = pooled_by_time(&fc);
    assert!(!pooled.index.is_empty());
    assert!(pooled.index.windows(2).all(|w| w[0] < w[1]));
    for j in 0..2 {
        let a = Aligned::from_pooled(&pooled, j);
        for i in 0..a.mean.len() {
            assert!(a.lower[i] <= a.mean[i] && a.mean[i] <= a.upper[i]);
        }
    }
    for k in 0..fc.origins.len() {
        let b = band(fc.at(k)).unwrap();
        assert!(b.lower.is_some() && b.upper.is_some());
    }
}

#[test]
fn alert_probabilities_follow_the_configured_thresholds() {
    let (_, fc) = forecast(Exec::Parallel);
    let k = fc.worst_origin().unwrap();
    let cfg = AlertConfig::default();
    let report = AlertReport::assess(&fc, k, &cfg).unwrap();
    assert_eq!(report.alert_depth, 2.0);
    assert!(report.exceedance.windows(2).all(|w| w[0].0 < w[1].0 && w[0].1 >= w[1].1));
    assert!(report.exceedance.iter().all(|(_, p)| (0.0..=1.0).contains(p)));
    assert_eq!(report.distribution.samples.len(), 4);

    // A datum far above the bed turns every member into an exceedance.
    let high = AlertConfig { datum: Some(report.distribution.datum + 10.0), ..cfg.clone() };
    let alarm = AlertReport::assess(&fc, k, &high).unwrap();
    assert_eq!(alarm.alert_probability, 1.0);
    assert_eq!(alarm.level, AlertLevel::Critical);
    let low = AlertConfig { datum: Some(report.distribution.datum - 10.0), ..cfg };
    let calm = AlertReport::assess(&fc, k, &low).unwrap();
    assert_eq!(calm.alert_probability, 0.0);
    assert_eq!(calm.level, AlertLevel::Normal);
    assert!(AlertReport::assess(&fc, fc.origins.len(), &AlertConfig::default()).is_err());
}
