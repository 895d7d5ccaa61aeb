//! Scheduling behaviour of the tuner on crafted codecs and series.

mod common;

use std::thread;
use std::time::Duration;

use common::*;
use ratiotune::compressor::{CapabilitySet, Codec};
use ratiotune::orchestrator::{run_all_fields, run_field_series, tune_dataset};
use ratiotune::synthetic::{regime_change_series, smooth_field, stationary_series};
use ratiotune::{
    Dataset, ElementKind, ErrorKind, FieldSeries, Result, TargetSpec, TuneResult,
};

/// Ratio 10 for bounds in `[7.3, 7.7)`, ratio 2 elsewhere.
#[derive(Debug)]
struct NarrowPlateau;

impl Codec for NarrowPlateau {
    fn name(&self) -> &str {
        "narrow"
    }

    fn capabilities(&self) -> CapabilitySet {
        CapabilitySet::new(1..=3, &[ErrorKind::AbsoluteMaxError], true, Some(0.0)).unwrap()
    }

    fn encode(&self, data: &Dataset, _: ErrorKind, bound: f64) -> Result<Vec<u8>> {
        let ratio = if (7.3..7.7).contains(&bound) { 10 } else { 2 };
        Ok(vec![0; data.byte_size() / ratio])
    }

    fn decode(&self, _: &[u8], shape: &[usize], _: ElementKind, _: ErrorKind, _: f64) -> Result<Vec<f64>> {
        Ok(vec![0.0; shape.iter().product()])
    }
}

/// A staircase codec that declares itself unsafe to call concurrently and
/// lingers in `encode` so overlapping calls would be observed.
#[derive(Debug)]
struct Exclusive(StepCodec);

impl Codec for Exclusive {
    fn name(&self) -> &str {
        "exclusive"
    }

    fn capabilities(&self) -> CapabilitySet {
        CapabilitySet::new(1..=3, &[ErrorKind::AbsoluteMaxError], false, Some(0.0)).unwrap()
    }

    fn encode(&self, data: &Dataset, kind: ErrorKind, bound: f64) -> Result<Vec<u8>> {
        thread::sleep(Duration::from_micros(200));
        self.0.encode(data, kind, bound)
    }

    fn decode(&self, b: &[u8], shape: &[usize], k: ElementKind, e: ErrorKind, bound: f64) -> Result<Vec<f64>> {
        self.0.decode(b, shape, k, e, bound)
    }
}

/// Results with timings cleared, for comparisons across runs.
fn untimed(mut r: TuneResult) -> TuneResult {
    r.elapsed = Duration::ZERO;
    for s in &mut r.per_step_log {
        s.elapsed = Duration::ZERO;
    }
    r
}

#[test]
fn stationary_series_trains_once() {
    let h = builtin("pq");
    let base = smooth_field(&[64, 64], 1);
    let series = stationary_series("s", &base, 10);
    let spec = TargetSpec::new(8.0, 0.1, value_range(&base)).unwrap().with_seed(3);
    let r = run_field_series(&h, &series, &spec).unwrap();
    assert!(r.feasible);
    assert_eq!(r.retrain_steps(), vec![0]);
    assert_eq!(r.compressor_calls, r.per_step_log[0].compressor_calls + 9);
    assert_eq!(h.stats().calls(), r.compressor_calls);
    assert!(r.per_step_log[1..].iter().all(|s| s.regions.is_empty()));
}

#[test]
fn regime_change_triggers_one_retrain() {
    let h = builtin("pq");
    let before = smooth_field(&[64, 64], 2);
    // same structure at fifty times the amplitude: the carried bound is now
    // far too tight
    let after = before.with_values(before.values().iter().map(|v| 50.0 * v).collect()).unwrap();
    let series = regime_change_series("r", &before, &after, 8, 5);
    let spec = TargetSpec::new(6.0, 0.1, value_range(&after).max(value_range(&before)))
        .unwrap()
        .with_seed(4);
    let r = run_field_series(&h, &series, &spec).unwrap();
    assert!(r.feasible, "{:?}", r.per_step_log);
    assert_eq!(r.retrain_steps(), vec![0, 5]);
}

#[test]
fn results_do_not_depend_on_pool_size() {
    let h = builtin("bt");
    let fields: Vec<FieldSeries> = (0..3)
        .map(|i| stationary_series(&format!("f{i}"), &smooth_field(&[32, 32], 10 + i), 3))
        .collect();
    let spec = TargetSpec::new(5.0, 0.1, 2.0).unwrap().with_seed(9);
    let run = |pool| -> Vec<TuneResult> {
        run_all_fields(&h, &fields, &spec, pool)
            .unwrap()
            .into_iter()
            .map(|r| untimed(r.unwrap()))
            .collect()
    };
    let reference = run(1);
    for pool in [4, 8, 1] {
        assert_eq!(run(pool), reference, "pool {pool}");
    }
}

#[test]
fn a_failing_field_does_not_affect_the_others() {
    let h = handle(FailingCodec { poison: -7.0 });
    let good = |name: &str, seed| stationary_series(name, &smooth_field(&[256], seed), 2);
    let mut poisoned = smooth_field(&[256], 5).values().to_vec();
    poisoned[0] = -7.0;
    let poisoned = Dataset::from_values(vec![256], ElementKind::F32, poisoned).unwrap();
    let fields = vec![good("a", 1), stationary_series("bad", &poisoned, 2), good("c", 3)];
    let spec = TargetSpec::new(11.0, 0.1, 1.0).unwrap();
    let results = run_all_fields(&h, &fields, &spec, 4).unwrap();
    for i in [0, 2] {
        let r = results[i].as_ref().unwrap();
        assert!(r.feasible && r.per_step_log.iter().all(|s| s.error.is_none()));
    }
    match &results[1] {
        Err(_) => {}
        Ok(r) => {
            assert!(!r.feasible);
            assert!(r.per_step_log.iter().all(|s| s.error.is_some()));
        }
    }
}

#[test]
fn a_plateau_inside_one_region_is_found() {
    let h = handle(NarrowPlateau);
    let spec = TargetSpec::new(10.0, 0.1, 12.0)
        .unwrap()
        .with_regions(12)
        .unwrap()
        .with_overlap(0.1)
        .unwrap();
    let r = tune_dataset(&h, &zeros(4096), &spec).unwrap();
    assert!(r.feasible);
    assert!((7.3..7.7).contains(&r.error_bound), "{}", r.error_bound);
}

#[test]
fn non_reentrant_codecs_are_never_called_concurrently() {
    let h = handle(Exclusive(StepCodec::seeded(1, 1024, 1.0)));
    let fields: Vec<FieldSeries> = (0..4)
        .map(|i| stationary_series(&format!("f{i}"), &zeros(1024), 1))
        .collect();
    // an unreachable target keeps every region busy for its whole budget
    let spec = TargetSpec::new(1000.0, 0.1, 1.0).unwrap().with_max_iterations(5).unwrap();
    let results = run_all_fields(&h, &fields, &spec, 8).unwrap();
    assert!(results.iter().all(|r| r.is_ok()));
    assert!(h.stats().calls() > 0);
    assert_eq!(h.stats().max_in_flight(), 1);
}

#[test]
fn infeasible_results_report_the_closest_observed_ratio() {
    for seed in 0..5 {
        let h = handle(StepCodec::seeded(seed, 2048, 1.0));
        let spec = TargetSpec::new(100.0, 0.1, 1.0).unwrap().with_seed(seed);
        let r = tune_dataset(&h, &zeros(2048), &spec).unwrap();
        assert!(!r.feasible);
        let closest = r.per_step_log[0]
            .regions
            .iter()
            .flat_map(|g| &g.trace.evaluations)
            .filter_map(|e| e.ratio)
            .map(|x| (x - 100.0).abs())
            .fold(f64::INFINITY, f64::min);
        assert_eq!((r.rho_achieved - 100.0).abs(), closest);
    }
}

#[test]
fn training_stays_within_the_call_budget() {
    let h = handle(StepCodec::seeded(2, 2048, 1.0));
    let spec = TargetSpec::new(1000.0, 0.1, 1.0)
        .unwrap()
        .with_regions(4)
        .unwrap()
        .with_max_iterations(10)
        .unwrap();
    let r = tune_dataset(&h, &zeros(2048), &spec).unwrap();
    assert!(r.compressor_calls <= 4 * 10 + 1, "{}", r.compressor_calls);
    assert_eq!(h.stats().calls(), r.compressor_calls);
}
