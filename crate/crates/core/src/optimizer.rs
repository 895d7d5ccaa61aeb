//! Derivative-free global minimization of a scalar function on an interval.
//!
//! The search starts from a seeded random point and then alternates two
//! proposal rules:
//!
//! * **Lipschitz model.** With `k = 1.1 * max |f(x_i) - f(x_j)| / |x_i - x_j|`
//!   the function is bounded below by `L(x) = max_i f(x_i) - k |x - x_i|`.
//!   The proposal is the point of a 4096-point uniform grid over `[l, u]`
//!   with the largest slack `f_best - L(x)`; ties go to the grid point
//!   farthest from every evaluated point, then to the lowest grid index.
//! * **Quadratic refinement.** A parabola through the best point and its two
//!   nearest evaluated neighbors; its vertex, clamped to `[l, u]`, is the
//!   proposal. When the fit is not convex (typically because the best point
//!   sits on a plateau with its neighbors), the proposal is the midpoint of
//!   the wider gap bordering the run of points that share the best value,
//!   which narrows the lowest valley without a model. If that gap is
//!   exhausted the Lipschitz proposal is used.
//!
//! A proposal within `1e-12 * (u - l)` of an evaluated point is replaced by
//! the Lipschitz proposal and then by seeded uniform draws. The search stops
//! as soon as a value at or below the cutoff is observed, after `max_iters`
//! evaluations, or when no fresh point can be proposed.
//!
//! The random stream is SplitMix64, so a `(seed, f)` pair reproduces the
//! same trace in any language:
//!
//! ```text
//! state += 0x9E3779B97F4A7C15
//! z = state
//! z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
//! z = (z ^ (z >> 27)) * 0x94D049BB133111EB
//! out = z ^ (z >> 31)
//! uniform = (out >> 11) * 2^-53
//! ```

use std::fmt;

use serde::{Deserialize, Serialize};

pub const LIPSCHITZ_INFLATION: f64 = 1.1;
pub const CANDIDATE_GRID: usize = 4096;
pub const DEDUP_TOLERANCE: f64 = 1e-12;
const MAX_REDRAWS: usize = 16;

/// Seeded SplitMix64 generator.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        SplitMix64 { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform in `[0, 1)`.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Derives an independent seed for sub-stream `index`.
    pub fn derive(seed: u64, index: u64) -> u64 {
        let mut g = SplitMix64::new(seed ^ index.wrapping_mul(0xD1B5_4A32_D192_ED03));
        g.next_u64()
    }
}

/// Shape of the loss applied to `rho_r - rho_t`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// `min((rho_r - rho_t)^2, gamma)`.
    #[default]
    Squared,
    /// `min(|rho_r - rho_t|, gamma)`; kept for comparisons.
    Absolute,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossSpec {
    rho_target: f64,
    gamma: f64,
    kind: LossKind,
}

impl LossSpec {
    /// 80% of the largest finite double.
    pub const DEFAULT_GAMMA: f64 = 0.8 * f64::MAX;

    pub fn new(rho_target: f64) -> Self {
        LossSpec {
            rho_target,
            gamma: Self::DEFAULT_GAMMA,
            kind: LossKind::Squared,
        }
    }

    /// Fails unless `gamma > rho_target^2`.
    pub fn with_gamma(mut self, gamma: f64) -> Result<Self, String> {
        if !(gamma > self.rho_target * self.rho_target) {
            return Err(format!(
                "gamma {gamma} must exceed the squared target {}",
                self.rho_target * self.rho_target
            ));
        }
        self.gamma = gamma;
        Ok(self)
    }

    pub fn with_kind(mut self, kind: LossKind) -> Self {
        self.kind = kind;
        self
    }

    pub fn rho_target(&self) -> f64 {
        self.rho_target
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn kind(&self) -> LossKind {
        self.kind
    }
}

pub fn clamped_loss(rho_r: f64, spec: &LossSpec) -> f64 {
    let d = rho_r - spec.rho_target;
    let raw = match spec.kind {
        LossKind::Squared => d * d,
        LossKind::Absolute => d.abs(),
    };
    // NaN and overflow both clamp
    raw.min(spec.gamma)
}

/// Largest loss that still counts as a match: `eps^2 * rho_t^2`, or
/// `eps * rho_t` for the absolute loss.
pub fn cutoff_threshold(spec: &LossSpec, epsilon: f64) -> f64 {
    let tol = epsilon * spec.rho_target;
    match spec.kind {
        LossKind::Squared => tol * tol,
        LossKind::Absolute => tol,
    }
}

/// What an objective reports for one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Probe {
    pub value: f64,
    /// Compression ratio behind `value`, when the objective has one.
    pub ratio: Option<f64>,
}

impl From<f64> for Probe {
    fn from(value: f64) -> Self {
        Probe { value, ratio: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub x: f64,
    pub ratio: Option<f64>,
    pub loss: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Cutoff,
    Budget,
    ModelConvergence,
    /// The objective failed; never produced by the search itself but used by
    /// callers that keep partial traces.
    Aborted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchTrace {
    pub evaluations: Vec<Evaluation>,
    /// Index of the first evaluation with the minimal loss.
    pub best: usize,
    pub terminated_by: Termination,
}

impl SearchTrace {
    pub fn best_evaluation(&self) -> &Evaluation {
        &self.evaluations[self.best]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchOutcome {
    pub x: f64,
    pub value: f64,
    pub trace: SearchTrace,
}

#[derive(Debug)]
pub enum SearchError<E> {
    InvalidInput(String),
    /// The objective failed at `x`.
    Objective { x: f64, source: E },
}

impl<E: fmt::Display> fmt::Display for SearchError<E> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SearchError::InvalidInput(m) => write!(f, "invalid search input: {m}"),
            SearchError::Objective { x, source } => write!(f, "objective failed at {x:e}: {source}"),
        }
    }
}

impl<E: fmt::Debug + fmt::Display> std::error::Error for SearchError<E> {}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    Lipschitz,
    Quadratic,
}

struct State {
    lower: f64,
    upper: f64,
    xs: Vec<f64>,
    fs: Vec<f64>,
    best: usize,
    /// Largest observed pairwise slope, before inflation.
    slope: f64,
}

impl State {
    fn add(&mut self, x: f64, f: f64) {
        for (&xi, &fi) in self.xs.iter().zip(&self.fs) {
            let s = (fi - f).abs() / (xi - x).abs();
            if s > self.slope || s.is_nan() {
                self.slope = if s.is_nan() { f64::INFINITY } else { s };
            }
        }
        self.xs.push(x);
        self.fs.push(f);
        if f < self.fs[self.best] {
            self.best = self.xs.len() - 1;
        }
    }

    fn nearest_distance(&self, x: f64) -> f64 {
        self.xs.iter().map(|&xi| (x - xi).abs()).fold(f64::INFINITY, f64::min)
    }

    fn is_fresh(&self, x: f64) -> bool {
        self.nearest_distance(x) > DEDUP_TOLERANCE * (self.upper - self.lower)
    }

    fn grid_point(&self, m: usize) -> f64 {
        if m == CANDIDATE_GRID - 1 {
            self.upper
        } else {
            self.lower + (self.upper - self.lower) * (m as f64 / (CANDIDATE_GRID - 1) as f64)
        }
    }

    /// Grid point minimizing the Lipschitz lower bound.
    fn lipschitz_candidate(&self) -> Option<f64> {
        let k = LIPSCHITZ_INFLATION * self.slope;
        let f_best = self.fs[self.best];
        let mut chosen: Option<(f64, f64, f64)> = None; // (slack, spread, x)
        for m in 0..CANDIDATE_GRID {
            let x = self.grid_point(m);
            let spread = self.nearest_distance(x);
            if spread <= DEDUP_TOLERANCE * (self.upper - self.lower) {
                continue;
            }
            let slack = if k.is_finite() {
                let lb = self
                    .xs
                    .iter()
                    .zip(&self.fs)
                    .map(|(&xi, &fi)| fi - k * (x - xi).abs())
                    .fold(f64::NEG_INFINITY, f64::max);
                f_best - lb
            } else {
                // Unbounded slope: the model is uninformative away from
                // samples, so only the spread matters.
                f64::INFINITY
            };
            let better = match chosen {
                None => true,
                Some((s, d, _)) => slack > s || (slack == s && spread > d),
            };
            if better {
                chosen = Some((slack, spread, x));
            }
        }
        chosen.map(|(_, _, x)| x)
    }

    /// Vertex of the parabola through the best point and its two nearest
    /// neighbors, if that parabola opens upward.
    fn quadratic_candidate(&self) -> Option<f64> {
        if self.xs.len() < 3 {
            return None;
        }
        let xb = self.xs[self.best];
        let mut others: Vec<usize> = (0..self.xs.len()).filter(|&i| i != self.best).collect();
        others.sort_by(|&a, &b| {
            let da = (self.xs[a] - xb).abs();
            let db = (self.xs[b] - xb).abs();
            da.total_cmp(&db).then(self.xs[a].total_cmp(&self.xs[b]))
        });
        let (x1, f1) = (xb, self.fs[self.best]);
        let (x2, f2) = (self.xs[others[0]], self.fs[others[0]]);
        let (x3, f3) = (self.xs[others[1]], self.fs[others[1]]);
        if x1 == x2 || x1 == x3 || x2 == x3 {
            return None;
        }
        let s12 = (f2 - f1) / (x2 - x1);
        let s13 = (f3 - f1) / (x3 - x1);
        let a = (s13 - s12) / (x3 - x2);
        if !(a.is_finite() && a > 0.0) {
            return None;
        }
        let b = s12 - a * (x1 + x2);
        let vertex = -b / (2.0 * a);
        if !vertex.is_finite() {
            return None;
        }
        Some(vertex.clamp(self.lower, self.upper))
    }
}

impl State {
    /// Midpoint of the wider gap next to the run of evaluated points (in
    /// `x` order) that share the best value. The interval ends count as
    /// neighbors.
    fn valley_candidate(&self) -> Option<f64> {
        let mut order: Vec<usize> = (0..self.xs.len()).collect();
        order.sort_by(|&a, &b| self.xs[a].total_cmp(&self.xs[b]));
        let f_best = self.fs[self.best];
        let pos = order.iter().position(|&i| i == self.best)?;
        let mut first = pos;
        while first > 0 && self.fs[order[first - 1]] == f_best {
            first -= 1;
        }
        let mut last = pos;
        while last + 1 < order.len() && self.fs[order[last + 1]] == f_best {
            last += 1;
        }
        let left = (
            if first > 0 { self.xs[order[first - 1]] } else { self.lower },
            self.xs[order[first]],
        );
        let right = (
            self.xs[order[last]],
            if last + 1 < order.len() { self.xs[order[last + 1]] } else { self.upper },
        );
        let (a, b) = if right.1 - right.0 > left.1 - left.0 { right } else { left };
        let mid = 0.5 * (a + b);
        self.is_fresh(mid).then_some(mid)
    }
}

/// Minimizes `f` over `[lower, upper]` with at most `max_iters` evaluations,
/// stopping early once `f(x) <= cutoff`.
///
/// Returns the best point seen. A failing objective aborts the search and
/// reports the offending point.
pub fn find_min_global_with_cutoff<F, P, E>(
    mut f: F,
    lower: f64,
    upper: f64,
    cutoff: f64,
    max_iters: usize,
    seed: u64,
) -> Result<SearchOutcome, SearchError<E>>
where
    F: FnMut(f64) -> Result<P, E>,
    P: Into<Probe>,
{
    if !(lower.is_finite() && upper.is_finite() && lower < upper) {
        return Err(SearchError::InvalidInput(format!(
            "empty interval [{lower}, {upper}]"
        )));
    }
    if max_iters < 2 {
        return Err(SearchError::InvalidInput(format!(
            "max_iters must be at least 2, got {max_iters}"
        )));
    }

    let mut rng = SplitMix64::new(seed);
    let mut state = State {
        lower,
        upper,
        xs: Vec::with_capacity(max_iters),
        fs: Vec::with_capacity(max_iters),
        best: 0,
        slope: 0.0,
    };
    let mut evaluations = Vec::with_capacity(max_iters);

    let mut evaluate = |x: f64, state: &mut State, evaluations: &mut Vec<Evaluation>| {
        debug_assert!(x >= lower && x <= upper);
        let probe: Probe = f(x).map_err(|source| SearchError::Objective { x, source })?.into();
        state.add(x, probe.value);
        evaluations.push(Evaluation {
            x,
            ratio: probe.ratio,
            loss: probe.value,
        });
        Ok::<bool, SearchError<E>>(probe.value <= cutoff)
    };

    let first = (lower + (upper - lower) * rng.next_f64()).min(upper);
    let mut terminated_by = Termination::Budget;
    if evaluate(first, &mut state, &mut evaluations)? {
        terminated_by = Termination::Cutoff;
    } else {
        let mut phase = Phase::Lipschitz;
        while evaluations.len() < max_iters {
            let proposal = match phase {
                Phase::Lipschitz => state.lipschitz_candidate(),
                Phase::Quadratic => state
                    .quadratic_candidate()
                    .filter(|&x| state.is_fresh(x))
                    .or_else(|| state.valley_candidate())
                    .or_else(|| state.lipschitz_candidate()),
            };
            phase = match phase {
                Phase::Lipschitz => Phase::Quadratic,
                Phase::Quadratic => Phase::Lipschitz,
            };
            let next = proposal.filter(|&x| state.is_fresh(x)).or_else(|| {
                (0..MAX_REDRAWS)
                    .map(|_| (lower + (upper - lower) * rng.next_f64()).min(upper))
                    .find(|&x| state.is_fresh(x))
            });
            let Some(x) = next else {
                terminated_by = Termination::ModelConvergence;
                break;
            };
            if evaluate(x, &mut state, &mut evaluations)? {
                terminated_by = Termination::Cutoff;
                break;
            }
        }
    }

    let best = state.best;
    Ok(SearchOutcome {
        x: state.xs[best],
        value: state.fs[best],
        trace: SearchTrace {
            evaluations,
            best,
            terminated_by,
        },
    })
}
