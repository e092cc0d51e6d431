//! Differential stability (contraction) checks: decay of a Riemannian
//! metric along the linearized flow, chord contraction between trajectory
//! pairs, and convergence monitoring toward fixed points.
//!
//! These checks are falsifiers, not certifiers: a violation is a concrete
//! witness against the claimed contraction rate, while a clean report only
//! says the sampled evidence is consistent with it.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::dynsys::{flow, prolonged_flow, OdeOptions, SystemDef};
use crate::error::{Error, Result};
use crate::linalg::{linear_fit, symmetric_eigen};
use crate::sample::{random_unit_vector, BoxSampler};

type MetricFn = dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync;

/// Position-dependent SPD weight matrix `P(x)` defining
/// `|d|_x = sqrt(d' P(x) d)`.
#[derive(Clone)]
pub struct MetricSpec {
    eval: Arc<MetricFn>,
}

impl MetricSpec {
    pub fn new<F>(eval: F) -> Self
    where
        F: Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
    {
        Self { eval: Arc::new(eval) }
    }

    pub fn constant(p: DMatrix<f64>) -> Self {
        Self::new(move |_| p.clone())
    }

    pub fn identity(dim: usize) -> Self {
        Self::constant(DMatrix::identity(dim, dim))
    }

    pub fn matrix_at(&self, x: &DVector<f64>) -> DMatrix<f64> {
        (self.eval)(x)
    }

    pub fn norm_at(&self, x: &DVector<f64>, d: &DVector<f64>) -> f64 {
        let p = self.matrix_at(x);
        d.dot(&(&p * d)).max(0.0).sqrt()
    }

    /// Check symmetry (to 1e-12) and positive definiteness at the points.
    pub fn validate_at(&self, points: &[DVector<f64>]) -> Result<()> {
        for x in points {
            let p = self.matrix_at(x);
            if (&p - p.transpose()).norm() > 1e-12 * (1.0 + p.norm()) {
                return Err(Error::InvalidCone(format!("metric not symmetric at {x:?}")));
            }
            let (vals, _) = symmetric_eigen(&p);
            if vals[0] <= 0.0 {
                return Err(Error::InvalidCone(format!(
                    "metric not positive definite at {x:?} (min eig {})",
                    vals[0]
                )));
            }
        }
        Ok(())
    }
}

/// One tangent-vector decay measurement.
#[derive(Debug, Clone)]
pub struct ContractionSample {
    pub index: usize,
    pub x: DVector<f64>,
    pub direction: DVector<f64>,
    /// Fitted decay rate: `|Phi(t) d|_{psi(t,x)} ~ exp(-rate * t)`.
    pub decay_rate: f64,
    pub violated: bool,
}

/// One trajectory-pair chord decay measurement.
#[derive(Debug, Clone)]
pub struct PairSample {
    pub index: usize,
    pub x: DVector<f64>,
    pub y: DVector<f64>,
    pub decay_rate: f64,
    pub violated: bool,
}

/// Outcome of a metric-contraction check.
#[derive(Debug, Clone)]
pub struct ContractionReport {
    pub samples: Vec<ContractionSample>,
    pub pairs: Vec<PairSample>,
    /// Smallest fitted decay rate over all samples (slowest contraction).
    pub worst_rate: f64,
    pub violations: usize,
    pub lambda_target: f64,
    /// Per-sample integration failures, isolated from the batch.
    pub errors: Vec<(usize, Error)>,
}

const FIT_GRID: usize = 33;

fn fit_decay(times: &[f64], log_values: &[f64]) -> f64 {
    // Discard the first half: transient prefactors are not part of the rate.
    let start = times.len() / 2;
    let (slope, _) = linear_fit(&times[start..], &log_values[start..]);
    -slope
}

/// Verify `|Phi(t) dx|_{psi(t,x)} ~ exp(-lambda t)` on sampled states and
/// directions, and chord contraction `|psi(t,x) - psi(t,y)|` on sampled
/// pairs.
///
/// A sample is a violation when its fitted decay rate falls below
/// `lambda_target`. Chord lengths use the metric at the pair midpoint.
pub fn check_metric_contraction(
    sys: &SystemDef,
    metric: &MetricSpec,
    sampler: &BoxSampler,
    horizon: f64,
    lambda_target: f64,
) -> ContractionReport {
    assert!(horizon > 0.0);
    let opts = OdeOptions::default();
    let points = sampler.points();
    let mut rngs = sampler.derived_rngs();
    let dim = sys.dim();
    let directions: Vec<DVector<f64>> = rngs
        .iter_mut()
        .map(|rng| random_unit_vector(rng, dim))
        .collect();
    let grid: Vec<f64> = (0..FIT_GRID)
        .map(|i| horizon * i as f64 / (FIT_GRID - 1) as f64)
        .collect();

    let per_sample: Vec<(usize, Result<ContractionSample>)> = points
        .par_iter()
        .zip(directions.par_iter())
        .enumerate()
        .map(|(i, (x, d))| {
            let m0 = DMatrix::from_columns(&[d.clone()]);
            let run = prolonged_flow(sys, x, &m0, horizon, &opts).map(|seg| {
                let logs: Vec<f64> = grid
                    .iter()
                    .map(|&t| {
                        let state = seg.state_at(t);
                        let pushed = seg.fundamental_at(t).column(0).clone_owned();
                        metric.norm_at(&state, &pushed).max(1e-300).ln()
                    })
                    .collect();
                let rate = fit_decay(&grid, &logs);
                ContractionSample {
                    index: i,
                    x: x.clone(),
                    direction: d.clone(),
                    decay_rate: rate,
                    violated: rate < lambda_target,
                }
            });
            (i, run)
        })
        .collect();

    // Consecutive points form the chord pairs.
    let pair_indices: Vec<(usize, usize)> = (0..points.len() / 2)
        .map(|j| (2 * j, 2 * j + 1))
        .collect();
    let per_pair: Vec<(usize, Result<PairSample>)> = pair_indices
        .par_iter()
        .enumerate()
        .map(|(j, &(ia, ib))| {
            let (x, y) = (&points[ia], &points[ib]);
            let run = flow(sys, x, horizon, &opts).and_then(|sx| {
                let sy = flow(sys, y, horizon, &opts)?;
                let logs: Vec<f64> = grid
                    .iter()
                    .map(|&t| {
                        let a = sx.state_at(t);
                        let b = sy.state_at(t);
                        let mid = (&a + &b) * 0.5;
                        metric.norm_at(&mid, &(a - b)).max(1e-300).ln()
                    })
                    .collect();
                let rate = fit_decay(&grid, &logs);
                Ok(PairSample {
                    index: j,
                    x: x.clone(),
                    y: y.clone(),
                    decay_rate: rate,
                    violated: rate < lambda_target,
                })
            });
            (j, run)
        })
        .collect();

    let mut samples = Vec::new();
    let mut pairs = Vec::new();
    let mut errors = Vec::new();
    for (i, r) in per_sample {
        match r {
            Ok(s) => samples.push(s),
            Err(e) => errors.push((i, e)),
        }
    }
    for (j, r) in per_pair {
        match r {
            Ok(p) => pairs.push(p),
            Err(e) => errors.push((j, e)),
        }
    }
    let worst_rate = samples
        .iter()
        .map(|s| s.decay_rate)
        .chain(pairs.iter().map(|p| p.decay_rate))
        .fold(f64::INFINITY, f64::min);
    let violations = samples.iter().filter(|s| s.violated).count()
        + pairs.iter().filter(|p| p.violated).count();
    ContractionReport {
        samples,
        pairs,
        worst_rate,
        violations,
        lambda_target,
        errors,
    }
}

/// Time series of the trajectory speed `|f(psi(t, x0))|`.
#[derive(Debug, Clone)]
pub struct ConvergenceTrace {
    pub times: Vec<f64>,
    pub speeds: Vec<f64>,
    pub final_speed: f64,
    /// Fraction of consecutive grid steps on which the speed decreased;
    /// reported as a trend, not asserted.
    pub monotone_fraction: f64,
}

/// Monitor convergence toward a fixed point along one trajectory.
pub fn fixed_point_convergence(
    sys: &SystemDef,
    x0: &DVector<f64>,
    horizon: f64,
) -> Result<ConvergenceTrace> {
    let opts = OdeOptions::default();
    let seg = flow(sys, x0, horizon, &opts)?;
    let n = 129;
    let times: Vec<f64> = (0..n)
        .map(|i| horizon * i as f64 / (n - 1) as f64)
        .collect();
    let speeds: Vec<f64> = times
        .iter()
        .map(|&t| sys.eval(&seg.state_at(t)).norm())
        .collect();
    let decreasing = speeds.windows(2).filter(|w| w[1] <= w[0]).count();
    Ok(ConvergenceTrace {
        final_speed: *speeds.last().unwrap(),
        monotone_fraction: decreasing as f64 / (n - 1) as f64,
        times,
        speeds,
    })
}
