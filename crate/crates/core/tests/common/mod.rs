//! Helpers shared by the integration tests: crafted codecs with known ratio
//! curves, a seeded corpus and the climbing-bisection baseline.

#![allow(dead_code)]

use std::collections::BTreeMap;
use std::sync::Arc;

use ratiotune::compressor::{CapabilitySet, Codec, Registry};
use ratiotune::optimizer::SplitMix64;
use ratiotune::synthetic::{noisy_field, smooth_field};
use ratiotune::{
    acceptance_interval, CompressorHandle, Dataset, ElementKind, Error, ErrorKind, Result,
    TargetSpec,
};

pub fn builtin(name: &str) -> CompressorHandle {
    Registry::builtin().create(name, &BTreeMap::new()).unwrap()
}

pub fn handle(codec: impl Codec + 'static) -> CompressorHandle {
    CompressorHandle::new(Arc::new(codec), ErrorKind::AbsoluteMaxError).unwrap()
}

pub fn value_range(d: &Dataset) -> f64 {
    let v = d.values();
    let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
    hi - lo
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Zero-valued dataset, for codecs that ignore the samples.
pub fn zeros(n: usize) -> Dataset {
    Dataset::from_values(vec![n], ElementKind::F32, vec![0.0; n]).unwrap()
}

/// Ten seeded fields at the sizes used for feasibility checks.
pub fn feasibility_corpus() -> Vec<Dataset> {
    let specs: [(&[usize], bool, u64); 10] = [
        (&[65536], false, 1),
        (&[65536], true, 2),
        (&[65536], false, 3),
        (&[65536], true, 4),
        (&[256, 256], false, 5),
        (&[256, 256], true, 6),
        (&[256, 256], false, 7),
        (&[64, 64, 64], false, 8),
        (&[64, 64, 64], true, 9),
        (&[64, 64, 64], false, 10),
    ];
    specs
        .iter()
        .enumerate()
        .map(|(i, &(shape, noisy, seed))| {
            let d = if noisy { noisy_field(shape, seed) } else { smooth_field(shape, seed) };
            d.with_identity(format!("field{i}"), 0)
        })
        .collect()
}

/// Mostly-zero field: a smooth field kept only where a second smooth field
/// exceeds `threshold`. Zero runs compress well even at tiny bounds, so the
/// smallest achievable ratio is well above 1.
pub fn sparse_field(shape: &[usize], seed: u64, threshold: f64) -> Dataset {
    let signal = smooth_field(shape, seed);
    let mask = smooth_field(shape, seed.wrapping_add(1000));
    let values = signal
        .values()
        .iter()
        .zip(mask.values())
        .map(|(&s, &m)| if m > threshold { s } else { 0.0 })
        .collect();
    Dataset::from_values(shape.to_vec(), ElementKind::F32, values)
        .unwrap()
        .with_identity(format!("sparse{seed}"), 0)
}

/// Codec whose payload size is a step function of the bound: `sizes[k]`
/// bytes for bounds in `[edges[k-1], edges[k])`.
#[derive(Debug, Clone)]
pub struct StepCodec {
    pub edges: Vec<f64>,
    pub sizes: Vec<usize>,
}

impl StepCodec {
    pub fn size_at(&self, bound: f64) -> usize {
        self.sizes[self.edges.partition_point(|&e| e <= bound)]
    }

    /// Monotone staircase over `[0, upper]` with 8..=20 steps at uniform
    /// random positions; ratios on `n` f32 samples rise geometrically from
    /// 1.5 to 60.
    pub fn seeded(seed: u64, n: usize, upper: f64) -> Self {
        let mut rng = SplitMix64::new(seed);
        let m = 8 + (rng.next_u64() % 13) as usize;
        let mut edges: Vec<f64> = (0..m).map(|_| upper * rng.next_f64()).collect();
        edges.sort_by(f64::total_cmp);
        let sizes = (0..=m)
            .map(|k| {
                let ratio = 1.5 * 40f64.powf(k as f64 / m as f64);
                (4.0 * n as f64 / ratio) as usize
            })
            .collect();
        StepCodec { edges, sizes }
    }
}

impl Codec for StepCodec {
    fn name(&self) -> &str {
        "steps"
    }

    fn capabilities(&self) -> CapabilitySet {
        CapabilitySet::new(1..=3, &[ErrorKind::AbsoluteMaxError], true, Some(0.0)).unwrap()
    }

    fn encode(&self, _: &Dataset, _: ErrorKind, bound: f64) -> Result<Vec<u8>> {
        Ok(vec![0; self.size_at(bound)])
    }

    fn decode(&self, _: &[u8], shape: &[usize], _: ElementKind, _: ErrorKind, _: f64) -> Result<Vec<f64>> {
        Ok(vec![0.0; shape.iter().product()])
    }
}

/// Ratio grows linearly with the bound (1 at 0, 41 at 1); fails whenever
/// the data's first sample equals `poison`.
#[derive(Debug)]
pub struct FailingCodec {
    pub poison: f64,
}

impl Codec for FailingCodec {
    fn name(&self) -> &str {
        "failing"
    }

    fn capabilities(&self) -> CapabilitySet {
        CapabilitySet::new(1..=3, &[ErrorKind::AbsoluteMaxError], true, Some(0.0)).unwrap()
    }

    fn encode(&self, data: &Dataset, _: ErrorKind, bound: f64) -> Result<Vec<u8>> {
        if data.values()[0] == self.poison {
            return Err(Error::Codec {
                codec: "failing".into(),
                message: "poisoned input".into(),
            });
        }
        let n = data.byte_size();
        Ok(vec![0; ((n as f64) / (1.0 + 40.0 * bound)).ceil() as usize])
    }

    fn decode(&self, _: &[u8], shape: &[usize], _: ElementKind, _: ErrorKind, _: f64) -> Result<Vec<f64>> {
        Ok(vec![0.0; shape.iter().product()])
    }
}

/// Evaluations spent by the climbing-bisection baseline to reach a bound
/// whose ratio `spec` accepts, and whether it got there.
///
/// The baseline models manual trial and error without knowing the scale of
/// the bound: start at `U * 2^-24` (below the resolution of float32 data
/// spanning `U`), double until the ratio reaches the acceptance interval,
/// then bisect the last bracket. Gives up after `cap` evaluations.
pub fn climbing_bisection(
    compressor: &CompressorHandle,
    data: &Dataset,
    spec: &TargetSpec,
    cap: usize,
) -> (usize, bool) {
    let upper = spec.max_error_bound();
    let (lo_target, _) = acceptance_interval(spec);
    let mut evals = 0;
    let mut below = 0.0;
    let mut bound = upper * 2f64.powi(-24);
    loop {
        evals += 1;
        let r = compressor.eval_ratio(data, bound).unwrap();
        if spec.accepts(r) {
            return (evals, true);
        }
        if r >= lo_target || bound >= upper || evals >= cap {
            break;
        }
        below = bound;
        bound = (2.0 * bound).min(upper);
    }
    let (mut lo, mut hi) = (below, bound);
    while evals < cap {
        let mid = 0.5 * (lo + hi);
        evals += 1;
        let r = compressor.eval_ratio(data, mid).unwrap();
        if spec.accepts(r) {
            return (evals, true);
        }
        if r < lo_target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    (evals, false)
}
