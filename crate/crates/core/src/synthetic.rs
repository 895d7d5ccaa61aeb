//! Seeded synthetic float32 fields for tests, demos and benchmarks.

use std::f64::consts::PI;

use crate::model::{Dataset, ElementKind, FieldSeries};
use crate::optimizer::SplitMix64;

fn coords(shape: &[usize], mut flat: usize, out: &mut [f64]) {
    for d in (0..shape.len()).rev() {
        out[d] = (flat % shape[d]) as f64 / shape[d] as f64;
        flat /= shape[d];
    }
}

fn build(shape: &[usize], mut sample: impl FnMut(&[f64]) -> f64) -> Dataset {
    let n: usize = shape.iter().product();
    let mut c = vec![0.0; shape.len()];
    let values = (0..n)
        .map(|i| {
            coords(shape, i, &mut c);
            sample(&c)
        })
        .collect();
    Dataset::from_values(shape.to_vec(), ElementKind::F32, values).expect("finite samples")
}

/// Sum of four random plane waves with amplitude decaying by frequency, plus
/// noise of amplitude 1e-3. Values stay within roughly [-2, 2].
pub fn smooth_field(shape: &[usize], seed: u64) -> Dataset {
    let mut rng = SplitMix64::new(seed);
    let waves: Vec<(Vec<f64>, f64, f64)> = (0..4)
        .map(|w| {
            let freq: Vec<f64> = shape
                .iter()
                .map(|_| (1.0 + 3.0 * rng.next_f64()) * (w + 1) as f64)
                .collect();
            let phase = 2.0 * PI * rng.next_f64();
            let amp = 1.0 / (w + 1) as f64;
            (freq, phase, amp)
        })
        .collect();
    build(shape, |c| {
        let mut v = 0.0;
        for (freq, phase, amp) in &waves {
            let arg: f64 = freq.iter().zip(c).map(|(f, x)| f * x).sum();
            v += amp * (2.0 * PI * arg + phase).sin();
        }
        v + 1e-3 * (2.0 * rng.next_f64() - 1.0)
    })
}

/// Smooth background with uniform noise of amplitude 0.05.
pub fn noisy_field(shape: &[usize], seed: u64) -> Dataset {
    let background = smooth_field(shape, seed.wrapping_add(0x5EED));
    let mut rng = SplitMix64::new(seed);
    let values = background
        .values()
        .iter()
        .map(|v| v + 0.05 * (2.0 * rng.next_f64() - 1.0))
        .collect();
    Dataset::from_values(shape.to_vec(), ElementKind::F32, values).expect("finite samples")
}

/// Sawtooth ramp `(i mod period) * step`; exact in float32 for power-of-two
/// steps.
///
/// With the prediction codec the quantization error is carried from sample
/// to sample, so the code stream is periodic only when `step / (2 * bound)`
/// is close to a simple fraction. Only those bounds give the dictionary
/// stage long repeats, so the ratio spikes up and down as the bound grows.
pub fn sawtooth(n: usize, period: usize, step: f64) -> Dataset {
    let values = (0..n).map(|i| (i % period) as f64 * step).collect();
    Dataset::from_values(vec![n], ElementKind::F32, values).expect("finite samples")
}

/// `steps` copies of one field, time steps `0..steps`.
pub fn stationary_series(name: &str, base: &Dataset, steps: usize) -> FieldSeries {
    let data = (0..steps)
        .map(|t| base.clone().with_identity(name, t as u64))
        .collect();
    FieldSeries::new(name, data).expect("consistent steps")
}

/// Step `t` is `base` scaled by `(1 + rate)^t`.
pub fn drifting_series(name: &str, base: &Dataset, steps: usize, rate: f64) -> FieldSeries {
    let data = (0..steps)
        .map(|t| {
            let s = (1.0 + rate).powi(t as i32);
            base.with_values(base.values().iter().map(|v| v * s).collect())
                .expect("finite samples")
                .with_identity(name, t as u64)
        })
        .collect();
    FieldSeries::new(name, data).expect("consistent steps")
}

/// Steps before `change_at` are `before`, the rest are `after`.
pub fn regime_change_series(
    name: &str,
    before: &Dataset,
    after: &Dataset,
    steps: usize,
    change_at: usize,
) -> FieldSeries {
    let data = (0..steps)
        .map(|t| {
            let src = if t < change_at { before } else { after };
            src.clone().with_identity(name, t as u64)
        })
        .collect();
    FieldSeries::new(name, data).expect("consistent steps")
}
