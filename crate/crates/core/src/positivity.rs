//! Differential positivity machinery: strict cone-invariance checking along
//! the variational flow, Perron-Frobenius vector estimation, Hilbert
//! contraction-rate measurement, the attractor/sensitivity dichotomy, the
//! linear positive-operator baseline, and the saddle obstruction test.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::cones::{hilbert_distance, Cone, ConeField};
use crate::dynsys::{flow, prolonged_flow, variational_along_reversed, OdeOptions, SystemDef};
use crate::error::{Error, Result};
use crate::linalg::{eigenvalues, linear_fit, real_eigenvector};
use crate::sample::BoxSampler;

/// Margins more negative than this count as violations; smaller excursions
/// are boundary noise at the integrator error floor.
pub const MARGIN_TOL: f64 = -1e-8;

/// Two distinct interior rays of a cone, deterministically chosen.
fn interior_pair(cone: &Cone) -> Result<(DVector<f64>, DVector<f64>)> {
    let u1 = cone
        .interior_ray()
        .ok_or_else(|| Error::InvalidCone("no interior ray".into()))?;
    let rays = cone.boundary_rays(2)?;
    // Interior plus a boundary ray stays interior for a convex cone.
    let u2 = (&u1 + &rays[0] * 0.5).normalize();
    Ok((u1, u2))
}

/// Result of the linear Perron-Frobenius baseline.
#[derive(Debug, Clone)]
pub struct LinearPfResult {
    pub w: DVector<f64>,
    pub iterations: usize,
    /// Sampled check that `A K` stayed inside `K`; a failed check is a
    /// warning, not an error.
    pub cone_preserved: bool,
}

/// Power iteration `x -> A x / |A x|` inside a cone.
///
/// Stops early when successive normalized iterates agree to 1e-12. Errors
/// when an iterate leaves the cone or collapses to zero.
pub fn linear_pf(
    a: &DMatrix<f64>,
    cone: &Cone,
    x0: &DVector<f64>,
    iters: usize,
) -> Result<LinearPfResult> {
    if cone.margin(x0) < MARGIN_TOL * x0.norm() {
        return Err(Error::NotInCone {
            margin: cone.margin(x0),
        });
    }
    // Sampled positivity of A: boundary rays and the interior ray must map
    // into the cone.
    let mut cone_preserved = true;
    let mut probes = cone.boundary_rays(8).unwrap_or_default();
    if let Some(u) = cone.interior_ray() {
        probes.push(u);
    }
    for p in &probes {
        let ap = a * p;
        if cone.margin(&ap) < MARGIN_TOL * ap.norm().max(1e-300) {
            cone_preserved = false;
        }
    }
    let mut v = x0.normalize();
    let mut used = 0;
    for k in 0..iters {
        let next = a * &v;
        let norm = next.norm();
        if norm < 1e-300 {
            return Err(Error::PowerIteration("iterate collapsed to zero".into()));
        }
        let next = next / norm;
        if cone.margin(&next) < MARGIN_TOL {
            return Err(Error::PowerIteration(format!(
                "iterate left the cone at step {k} (margin {:.3e})",
                cone.margin(&next)
            )));
        }
        let delta = (&next - &v).norm();
        v = next;
        used = k + 1;
        if delta < 1e-12 {
            break;
        }
    }
    Ok(LinearPfResult {
        w: v,
        iterations: used,
        cone_preserved,
    })
}

/// One (point, ray, horizon) inclusion measurement. Margins are evaluated
/// on the normalized pushed ray.
#[derive(Debug, Clone)]
pub struct PositivitySample {
    pub point: usize,
    pub ray: usize,
    pub horizon: f64,
    pub margin: f64,
    pub strict_margin: f64,
}

/// Outcome of a differential-positivity check.
#[derive(Debug, Clone)]
pub struct PositivityReport {
    pub samples: Vec<PositivitySample>,
    /// Indices into `samples` whose inclusion margin is below tolerance.
    pub violations: Vec<usize>,
    /// Smallest horizon at which every strict margin is positive, if any.
    pub t_used: Option<f64>,
    /// Median fitted Hilbert contraction rate across points (requires at
    /// least three horizons).
    pub lambda_hat: Option<f64>,
    /// Largest sampled Hilbert diameter of the strict cone inside its cone.
    pub delta_hat: Option<f64>,
    pub horizons: Vec<f64>,
    pub errors: Vec<(usize, Error)>,
    pub margin_tol: f64,
}

impl PositivityReport {
    pub fn violation_count(&self) -> usize {
        self.violations.len()
    }
}

#[derive(Debug, Clone)]
pub struct PositivityOptions {
    pub ode: OdeOptions,
    /// Shrink factor building the strict cone from the cone field.
    pub strict_shrink: f64,
    pub margin_tol: f64,
}

impl Default for PositivityOptions {
    fn default() -> Self {
        Self {
            ode: OdeOptions::default(),
            strict_shrink: 0.1,
            margin_tol: MARGIN_TOL,
        }
    }
}

/// Push every boundary ray of `K(x)` through the variational flow at each
/// horizon and record the inclusion margins in `K(psi^t(x))` and in the
/// strict cone `R(psi^t(x))`.
///
/// Per-point integration failures are isolated into `errors`; the fitted
/// contraction rate is the median over per-point fits of the Hilbert
/// distance between two pushed interior rays.
pub fn check_diff_positivity<F: ConeField>(
    sys: &SystemDef,
    field: &F,
    sampler: &BoxSampler,
    horizons: &[f64],
    rays: usize,
    opts: &PositivityOptions,
) -> PositivityReport {
    assert!(!horizons.is_empty());
    assert!(
        horizons.windows(2).all(|w| w[0] < w[1]),
        "horizons must be sorted ascending"
    );
    assert!(horizons[0] > 0.0);
    let eps = opts.strict_shrink;
    let points = sampler.points();
    let t_max = *horizons.last().unwrap();

    struct PointOutcome {
        samples: Vec<PositivitySample>,
        rate: Option<f64>,
        diameter: Option<f64>,
    }

    let results: Vec<(usize, Result<PointOutcome>)> = points
        .par_iter()
        .enumerate()
        .map(|(pi, x)| {
            let run = (|| {
                let cone_x = field.cone_at(x)?;
                let boundary = cone_x.boundary_rays(rays)?;
                let (u1, u2) = interior_pair(&cone_x)?;
                let mut columns = boundary.clone();
                columns.push(u1);
                columns.push(u2);
                let m0 = DMatrix::from_columns(&columns);
                let seg = prolonged_flow(sys, x, &m0, t_max, &opts.ode)?;
                let mut samples = Vec::with_capacity(boundary.len() * horizons.len());
                let mut rate_points: Vec<(f64, f64)> = Vec::new();
                for &t in horizons {
                    let y = seg.state_at(t);
                    let cone_y = field.cone_at(&y)?;
                    let phi = seg.fundamental_at(t);
                    for (ri, _) in boundary.iter().enumerate() {
                        let pushed = phi.column(ri).clone_owned();
                        let n = pushed.norm();
                        if n < 1e-300 {
                            continue;
                        }
                        let pushed = pushed / n;
                        samples.push(PositivitySample {
                            point: pi,
                            ray: ri,
                            horizon: t,
                            margin: cone_y.margin(&pushed),
                            strict_margin: field.strict_margin_at(&y, &pushed, eps)?,
                        });
                    }
                    let p1 = phi.column(boundary.len()).clone_owned();
                    let p2 = phi.column(boundary.len() + 1).clone_owned();
                    if let Ok(h) = hilbert_distance(&cone_y, &p1, &p2) {
                        if h.is_finite() && h > 1e-12 {
                            rate_points.push((t, h.ln()));
                        }
                    }
                }
                let rate = if rate_points.len() >= 3 {
                    let ts: Vec<f64> = rate_points.iter().map(|p| p.0).collect();
                    let hs: Vec<f64> = rate_points.iter().map(|p| p.1).collect();
                    Some(-linear_fit(&ts, &hs).0)
                } else {
                    None
                };
                // Sampled diameter of the strict cone measured in the cone.
                let diameter = field.strict_cone_at(x, eps)?.and_then(|strict| {
                    let rs = strict.boundary_rays(rays.max(4)).ok()?;
                    let mut best: f64 = 0.0;
                    for i in 0..rs.len() {
                        for j in i + 1..rs.len() {
                            if let Ok(h) = hilbert_distance(&cone_x, &rs[i], &rs[j]) {
                                if h.is_finite() {
                                    best = best.max(h);
                                }
                            }
                        }
                    }
                    Some(best)
                });
                Ok(PointOutcome {
                    samples,
                    rate,
                    diameter,
                })
            })();
            (pi, run)
        })
        .collect();

    let mut samples = Vec::new();
    let mut errors = Vec::new();
    let mut rates = Vec::new();
    let mut delta_hat: Option<f64> = None;
    for (pi, r) in results {
        match r {
            Ok(out) => {
                samples.extend(out.samples);
                if let Some(r) = out.rate {
                    rates.push(r);
                }
                if let Some(d) = out.diameter {
                    delta_hat = Some(delta_hat.map_or(d, |cur: f64| cur.max(d)));
                }
            }
            Err(e) => errors.push((pi, e)),
        }
    }
    let violations: Vec<usize> = samples
        .iter()
        .enumerate()
        .filter(|(_, s)| s.margin < opts.margin_tol)
        .map(|(i, _)| i)
        .collect();
    let t_used = horizons
        .iter()
        .copied()
        .find(|&t| {
            let at_t: Vec<&PositivitySample> =
                samples.iter().filter(|s| s.horizon == t).collect();
            !at_t.is_empty() && at_t.iter().all(|s| s.strict_margin > 0.0)
        });
    let lambda_hat = if horizons.len() >= 3 && !rates.is_empty() {
        let mut sorted = rates.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        Some(sorted[sorted.len() / 2])
    } else {
        None
    };
    PositivityReport {
        samples,
        violations,
        t_used,
        lambda_hat,
        delta_hat,
        horizons: horizons.to_vec(),
        errors,
        margin_tol: opts.margin_tol,
    }
}

/// A Perron-Frobenius vector estimate at a point.
#[derive(Debug, Clone)]
pub struct PFEstimate {
    pub x: DVector<f64>,
    /// Unit estimate of the PF direction at `x`.
    pub w: DVector<f64>,
    /// Backward seeding time actually used.
    pub s_used: f64,
    /// Hilbert distance between the two independently seeded estimates.
    pub residual: f64,
}

#[derive(Debug, Clone)]
pub struct PfOptions {
    /// Cap on the backward seeding time.
    pub s_max: f64,
    /// Residual below which the doubling stops.
    pub residual_target: f64,
    /// State-norm guard for the backward leg.
    pub blowup_guard: f64,
    pub ode: OdeOptions,
}

impl Default for PfOptions {
    fn default() -> Self {
        let mut ode = OdeOptions::with_tol(1e-12);
        ode.overflow_guard = 1e6;
        Self {
            s_max: 30.0,
            residual_target: 1e-6,
            blowup_guard: 1e6,
            ode,
        }
    }
}

/// Estimate the Perron-Frobenius direction at `x` by backward seeding:
/// flow backward for time `s`, seed two distinct cone rays there, and push
/// them forward by the variational flow along the stored backward path.
///
/// `s` is halved when the backward leg blows up and doubled while the
/// residual (Hilbert distance between the two pushed seeds) stays above
/// target, within `[0.25, s_max]`.
pub fn pf_vector<F: ConeField>(
    sys: &SystemDef,
    field: &F,
    x: &DVector<f64>,
    s_backward: f64,
    seeds: Option<(DVector<f64>, DVector<f64>)>,
    opts: &PfOptions,
) -> Result<PFEstimate> {
    let cone_x = field.cone_at(x)?;
    let mut ode = opts.ode.clone();
    ode.overflow_guard = opts.blowup_guard;
    let mut s = s_backward.min(opts.s_max);
    let mut best: Option<PFEstimate> = None;
    // Largest s that integrated cleanly and smallest that blew up; the
    // search settles just under the blow-up ceiling.
    let mut s_ok = 0.0f64;
    let mut s_fail = f64::INFINITY;
    let mut attempts = 0;
    loop {
        attempts += 1;
        if attempts > 32 {
            return best.ok_or(Error::BackwardBlowup {
                s_requested: s_backward,
                s_reached: s_ok,
            });
        }
        let seg = match flow(sys, x, -s, &ode) {
            Ok(seg) => seg,
            Err(Error::StateOverflow { t, .. }) => {
                s_fail = s_fail.min(s);
                let next = if s_ok > 0.0 {
                    0.5 * (s_ok + s_fail)
                } else {
                    0.5 * s
                };
                if next < 0.25 {
                    return best.ok_or(Error::BackwardBlowup {
                        s_requested: s_backward,
                        s_reached: t.abs(),
                    });
                }
                if s_ok > 0.0 && (s_fail - s_ok) < 0.05 * s_fail {
                    return Ok(best.unwrap());
                }
                s = next;
                continue;
            }
            Err(e) => return Err(e),
        };
        let x_b = seg.final_state().clone();
        let cone_b = field.cone_at(&x_b)?;
        let (u1, u2) = match &seeds {
            Some((a, b)) => {
                for v in [a, b] {
                    let m = cone_b.margin(v);
                    if m < MARGIN_TOL * v.norm() {
                        return Err(Error::NotInCone { margin: m });
                    }
                }
                (a.clone(), b.clone())
            }
            None => interior_pair(&cone_b)?,
        };
        let m0 = DMatrix::from_columns(&[u1, u2]);
        // The pushed tangent vectors may legitimately grow like e^{s L};
        // only the backward state leg is subject to the blow-up guard.
        let mut var_ode = ode.clone();
        var_ode.overflow_guard = 1e250;
        let pushed = match variational_along_reversed(sys, &seg, &m0, &var_ode) {
            Ok(p) => p,
            Err(Error::StateOverflow { .. }) => {
                s_fail = s_fail.min(s);
                let next = if s_ok > 0.0 { 0.5 * (s_ok + s_fail) } else { 0.5 * s };
                if next < 0.25 || (s_ok > 0.0 && (s_fail - s_ok) < 0.05 * s_fail) {
                    return best.ok_or(Error::BackwardBlowup {
                        s_requested: s_backward,
                        s_reached: s_ok,
                    });
                }
                s = next;
                continue;
            }
            Err(e) => return Err(e),
        };
        let w1 = pushed.column(0).clone_owned();
        let w2 = pushed.column(1).clone_owned();
        if w1.norm() < 1e-300 || w2.norm() < 1e-300 {
            return Err(Error::DegenerateGauge("pushed seed vanished".into()));
        }
        let mut w = w1.normalize();
        if cone_x.margin(&w) < 0.0 && cone_x.margin(&-&w) >= 0.0 {
            w = -w;
        }
        let residual = hilbert_distance(&cone_x, &w1, &w2).unwrap_or(f64::INFINITY);
        let est = PFEstimate {
            x: x.clone(),
            w,
            s_used: s,
            residual,
        };
        if residual < opts.residual_target {
            return Ok(est);
        }
        s_ok = s_ok.max(s);
        if best.as_ref().map_or(true, |b| residual < b.residual) {
            best = Some(est);
        }
        let next = if s_fail.is_finite() {
            0.5 * (s_ok + s_fail)
        } else {
            2.0 * s
        };
        if next > opts.s_max || (s_fail.is_finite() && (s_fail - s_ok) < 0.05 * s_fail) {
            return Ok(best.unwrap());
        }
        s = next;
    }
}

/// Hilbert contraction-rate fit along one trajectory.
#[derive(Debug, Clone)]
pub struct RateFit {
    pub lambda_hat: f64,
    /// (t, h) pairs entering the fit.
    pub points: Vec<(f64, f64)>,
    pub slope: f64,
    pub intercept: f64,
}

/// Fit the decay rate of the Hilbert distance between two pushed interior
/// rays over the horizon grid.
///
/// Grid points with `h < 1e-12` are discarded; an infinite `h` means the
/// rays left the cone and is reported as a positivity failure.
pub fn contraction_rate<F: ConeField>(
    sys: &SystemDef,
    field: &F,
    x: &DVector<f64>,
    grid: &[f64],
    opts: &OdeOptions,
) -> Result<RateFit> {
    assert!(grid.len() >= 2);
    let cone_x = field.cone_at(x)?;
    let (u1, u2) = interior_pair(&cone_x)?;
    let t_max = grid.iter().copied().fold(0.0, f64::max);
    let m0 = DMatrix::from_columns(&[u1, u2]);
    let seg = prolonged_flow(sys, x, &m0, t_max, opts)?;
    let mut points = Vec::with_capacity(grid.len());
    for &t in grid {
        let y = seg.state_at(t);
        let cone_y = field.cone_at(&y)?;
        let phi = seg.fundamental_at(t);
        let h = hilbert_distance(&cone_y, &phi.column(0).clone_owned(), &phi.column(1).clone_owned())?;
        if h.is_infinite() {
            return Err(Error::ProjectiveDivergence(format!(
                "pushed rays left the cone at t = {t}"
            )));
        }
        if h > 1e-12 {
            points.push((t, h));
        }
    }
    if points.len() < 2 {
        return Err(Error::DegenerateGauge(
            "contraction too fast: fewer than two usable grid points".into(),
        ));
    }
    let ts: Vec<f64> = points.iter().map(|p| p.0).collect();
    let hs: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let (slope, intercept) = linear_fit(&ts, &hs);
    Ok(RateFit {
        lambda_hat: -slope,
        points,
        slope,
        intercept,
    })
}

/// Verdict of the asymptotic dichotomy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DichotomyVerdict {
    /// The trajectory converges toward a PF curve: the vector field enters
    /// the cone, aligns with the PF direction, and the pushed PF vector
    /// stays bounded.
    AlignedAttractor,
    /// The vector field never enters the cone and the PF direction is
    /// expanding: maximal sensitivity transversal to the flow.
    TransversalSensitive,
    Undetermined,
}

#[derive(Debug, Clone)]
pub struct DichotomyEvidence {
    /// First grid time at which `f(psi(t,x))` has nonnegative cone margin.
    pub f_entry_time: Option<f64>,
    /// Hilbert distance between `f/|f|` and the PF estimate at the
    /// evaluation point (the last grid point with a usable speed).
    pub alignment_h: Option<f64>,
    /// Fitted growth exponent of `|Phi(t) w(x0)|` over the last half of
    /// the horizon.
    pub w_growth_exponent: f64,
    /// PF estimate at the initial point.
    pub w0: DVector<f64>,
    /// (t, cone margin of the normalized vector field) along the
    /// trajectory; NaN where the speed is below floor.
    pub f_margins: Vec<(f64, f64)>,
}

#[derive(Debug, Clone)]
pub struct DichotomyOptions {
    pub ode: OdeOptions,
    pub pf: PfOptions,
    /// Backward seeding time for PF estimates.
    pub s_backward: f64,
    /// Alignment threshold on the Hilbert distance.
    pub align_tol: f64,
    /// Slack on the growth exponent of the pushed PF vector.
    pub growth_tol: f64,
    /// Norm bound treated as an unbounded trajectory.
    pub bound: f64,
}

impl Default for DichotomyOptions {
    fn default() -> Self {
        Self {
            ode: OdeOptions::default(),
            pf: PfOptions::default(),
            s_backward: 10.0,
            align_tol: 1e-3,
            growth_tol: 0.05,
            bound: 1e6,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DichotomyResult {
    pub verdict: DichotomyVerdict,
    pub evidence: DichotomyEvidence,
}

/// Classify the asymptotic behavior of the trajectory from `x0` against
/// the cone field.
pub fn dichotomy_classify<F: ConeField>(
    sys: &SystemDef,
    field: &F,
    x0: &DVector<f64>,
    horizon: f64,
    opts: &DichotomyOptions,
) -> Result<DichotomyResult> {
    let mut ode = opts.ode.clone();
    ode.overflow_guard = opts.bound;
    let seg = flow(sys, x0, horizon, &ode).map_err(|e| match e {
        Error::StateOverflow { t, norm } => Error::UnboundedTrajectory { t, norm },
        other => other,
    })?;

    let n_grid = 65;
    let grid: Vec<f64> = (0..n_grid)
        .map(|i| horizon * i as f64 / (n_grid - 1) as f64)
        .collect();
    let mut f_margins = Vec::with_capacity(n_grid);
    let mut f_entry_time = None;
    let mut eval_idx: Option<usize> = None;
    for (i, &t) in grid.iter().enumerate() {
        let x = seg.state_at(t);
        let f = sys.eval(&x);
        if f.norm() < 1e-12 {
            f_margins.push((t, f64::NAN));
            continue;
        }
        let margin = field.cone_at(&x)?.margin(&f.normalize());
        f_margins.push((t, margin));
        if margin >= 0.0 && f_entry_time.is_none() {
            f_entry_time = Some(t);
        }
        if f.norm() >= 1e-8 {
            eval_idx = Some(i);
        }
    }

    // PF estimate at the start and its pushed growth.
    let w0 = pf_vector(sys, field, x0, opts.s_backward, None, &opts.pf)?;
    let pseg = prolonged_flow(
        sys,
        x0,
        &DMatrix::from_columns(&[w0.w.clone()]),
        horizon,
        &ode,
    )?;
    let logs: Vec<f64> = grid
        .iter()
        .map(|&t| pseg.fundamental_at(t).column(0).norm().max(1e-300).ln())
        .collect();
    let half = grid.len() / 2;
    let (w_growth_exponent, _) = linear_fit(&grid[half..], &logs[half..]);

    // Alignment at the last point with a healthy speed.
    let alignment_h = match eval_idx {
        Some(i) => {
            let t_e = grid[i];
            let x_e = seg.state_at(t_e);
            let f_e = sys.eval(&x_e).normalize();
            let s_align = opts.s_backward.min((t_e + 1.0).max(1.0));
            let w_e = pf_vector(sys, field, &x_e, s_align, None, &opts.pf)?;
            let cone_e = field.cone_at(&x_e)?;
            match hilbert_distance(&cone_e, &f_e, &w_e.w) {
                Ok(h) => Some(h),
                Err(Error::NotInCone { .. }) => None,
                Err(e) => return Err(e),
            }
        }
        None => None,
    };

    let aligned = f_entry_time.is_some()
        && alignment_h.map_or(false, |h| h < opts.align_tol)
        && w_growth_exponent <= opts.growth_tol;
    let transversal = f_entry_time.is_none() && w_growth_exponent > opts.growth_tol;
    let verdict = if aligned {
        DichotomyVerdict::AlignedAttractor
    } else if transversal {
        DichotomyVerdict::TransversalSensitive
    } else {
        DichotomyVerdict::Undetermined
    };
    Ok(DichotomyResult {
        verdict,
        evidence: DichotomyEvidence {
            f_entry_time,
            alignment_h,
            w_growth_exponent,
            w0: w0.w,
            f_margins,
        },
    })
}

/// Outcome of the saddle obstruction test.
#[derive(Debug, Clone)]
pub struct ObstructionReport {
    /// (t, h) between the two pushed bracketing rays.
    pub h_series: Vec<(f64, f64)>,
    /// Fitted slope of `log h`; non-contraction means slope >= -1e-3.
    pub slope: f64,
    pub obstructed: bool,
    pub spectrum: Vec<f64>,
}

/// Test whether a saddle with both eigendirections inside the cone
/// obstructs projective contraction.
///
/// Two interior rays bracketing the eigendirections are pushed by the
/// linearized flow at the fixed point; if their Hilbert distance does not
/// contract (fitted slope >= -1e-3) the configuration is obstructed.
pub fn saddle_obstruction(
    sys: &SystemDef,
    x_saddle: &DVector<f64>,
    cone: &Cone,
    horizon: f64,
    opts: &OdeOptions,
) -> Result<ObstructionReport> {
    let residual = sys.eval(x_saddle).norm();
    if residual >= 1e-8 {
        return Err(Error::InvalidAttractor(format!(
            "not a fixed point: |f| = {residual:.3e}"
        )));
    }
    let j = sys.jacobian(x_saddle);
    let mut eigs = eigenvalues(&j);
    eigs.sort_by(|a, b| b.re.partial_cmp(&a.re).unwrap());
    let scale = eigs.iter().map(|e| e.norm()).fold(1.0, f64::max);
    if eigs.iter().any(|e| e.im.abs() > 1e-9 * scale) {
        return Err(Error::SpectralSplit(
            "complex eigenvalues: no real split spectrum".into(),
        ));
    }
    let v_dom = real_eigenvector(&j, eigs[0].re)
        .ok_or_else(|| Error::SpectralSplit("no dominant eigenvector".into()))?;
    let v_slow = real_eigenvector(&j, eigs.last().unwrap().re)
        .ok_or_else(|| Error::SpectralSplit("no slow eigenvector".into()))?;
    // Orient the eigendirections into the cone.
    let orient = |v: DVector<f64>| -> Result<DVector<f64>> {
        if cone.margin(&v) >= MARGIN_TOL {
            Ok(v)
        } else if cone.margin(&-&v) >= MARGIN_TOL {
            Ok(-v)
        } else {
            Err(Error::NotInCone {
                margin: cone.margin(&v),
            })
        }
    };
    let v_dom = orient(v_dom)?;
    let v_slow = orient(v_slow)?;
    // Interior rays bracketing the eigendirections.
    let r1 = (&v_dom + &v_slow).normalize();
    let r2 = (&v_dom * 2.0 + &v_slow).normalize();
    let m0 = DMatrix::from_columns(&[r1, r2]);
    let seg = prolonged_flow(sys, x_saddle, &m0, horizon, opts)?;
    let n_grid = 11;
    let mut h_series = Vec::with_capacity(n_grid);
    for i in 0..n_grid {
        let t = horizon * i as f64 / (n_grid - 1) as f64;
        let phi = seg.fundamental_at(t);
        let h = hilbert_distance(
            cone,
            &phi.column(0).clone_owned(),
            &phi.column(1).clone_owned(),
        )?;
        if h.is_infinite() {
            return Err(Error::ProjectiveDivergence(format!(
                "bracketing rays left the cone at t = {t}"
            )));
        }
        h_series.push((t, h));
    }
    let usable: Vec<(f64, f64)> = h_series
        .iter()
        .filter(|(_, h)| *h > 1e-300)
        .map(|&(t, h)| (t, h.ln()))
        .collect();
    let ts: Vec<f64> = usable.iter().map(|p| p.0).collect();
    let hs: Vec<f64> = usable.iter().map(|p| p.1).collect();
    let (slope, _) = linear_fit(&ts, &hs);
    Ok(ObstructionReport {
        h_series,
        slope,
        obstructed: slope >= -1e-3,
        spectrum: eigs.iter().map(|e| e.re).collect(),
    })
}
