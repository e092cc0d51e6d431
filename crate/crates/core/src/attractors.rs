//! One-dimensional attractor models: fixed points with spectral splits,
//! limit cycles located through Poincare sections, Floquet multipliers, and
//! normal-hyperbolicity certificates.

use nalgebra::{Complex, DMatrix, DVector};

use crate::dynsys::{flow, flow_event, liouville_det, prolonged_flow, OdeOptions, SystemDef};
use crate::error::{Error, Result};
use crate::linalg::{
    eigenvalues, left_eigenvector, linear_fit, orthogonal_complement, orthonormalize_against,
    real_eigenvector,
};

/// Stability type of a hyperbolic fixed point.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FixedPointKind {
    Stable,
    Saddle,
    Unstable,
    /// An eigenvalue real part within tolerance of zero.
    Marginal,
}

#[derive(Debug, Clone)]
pub struct FixedPoint {
    pub x: DVector<f64>,
    pub jacobian: DMatrix<f64>,
    /// Eigenvalues sorted by descending real part.
    pub spectrum: Vec<Complex<f64>>,
    pub kind: FixedPointKind,
}

impl FixedPoint {
    fn classify_kind(spectrum: &[Complex<f64>]) -> FixedPointKind {
        const TOL: f64 = 1e-9;
        if spectrum.iter().any(|e| e.re.abs() <= TOL) {
            FixedPointKind::Marginal
        } else if spectrum.iter().all(|e| e.re < 0.0) {
            FixedPointKind::Stable
        } else if spectrum.iter().all(|e| e.re > 0.0) {
            FixedPointKind::Unstable
        } else {
            FixedPointKind::Saddle
        }
    }
}

/// Newton search for roots of `f` from the given seeds, restricted to the
/// box `[lo, hi]`.
///
/// Diverging seeds are skipped; converged roots are deduplicated (distance
/// 1e-6) and returned sorted lexicographically with their Jacobian spectra.
pub fn find_fixed_points(
    sys: &SystemDef,
    seeds: &[DVector<f64>],
    lo: &DVector<f64>,
    hi: &DVector<f64>,
) -> Vec<FixedPoint> {
    let mut roots: Vec<DVector<f64>> = Vec::new();
    let scale = (hi - lo).norm().max(1.0);
    for seed in seeds {
        let mut x = seed.clone();
        let mut fx = sys.eval(&x);
        let mut ok = false;
        for _ in 0..80 {
            if !fx.iter().all(|v| v.is_finite()) {
                break;
            }
            if fx.norm() < 1e-13 {
                ok = true;
                break;
            }
            let j = sys.jacobian(&x);
            let Some(step) = j.lu().solve(&(-&fx)) else {
                break;
            };
            // Damped update: halve until the residual shrinks.
            let mut lambda = 1.0;
            let mut accepted = false;
            for _ in 0..12 {
                let cand = &x + &step * lambda;
                let fc = sys.eval(&cand);
                if fc.norm() < fx.norm() {
                    x = cand;
                    fx = fc;
                    accepted = true;
                    break;
                }
                lambda *= 0.5;
            }
            if !accepted {
                break;
            }
            if x.norm() > 1e8 * scale {
                break;
            }
        }
        if (ok || fx.norm() < 1e-10)
            && x.iter()
                .zip(lo.iter().zip(hi.iter()))
                .all(|(&v, (&a, &b))| v >= a - 1e-6 * scale && v <= b + 1e-6 * scale)
            && !roots.iter().any(|r| (r - &x).norm() < 1e-6)
        {
            roots.push(x);
        }
    }
    roots.sort_by(|a, b| {
        a.iter()
            .zip(b.iter())
            .find_map(|(x, y)| x.partial_cmp(y).filter(|o| o.is_ne()))
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    roots
        .into_iter()
        .map(|x| {
            let jacobian = sys.jacobian(&x);
            let mut spectrum = eigenvalues(&jacobian);
            spectrum.sort_by(|a, b| b.re.partial_cmp(&a.re).unwrap());
            let kind = FixedPoint::classify_kind(&spectrum);
            FixedPoint {
                x,
                jacobian,
                spectrum,
                kind,
            }
        })
        .collect()
}

/// Dominant/normal splitting of the tangent space at a fixed point.
#[derive(Debug, Clone)]
pub struct SpectralSplit {
    pub spectrum: Vec<Complex<f64>>,
    /// Real part of the dominant (largest real part) eigenvalue.
    pub dominant: f64,
    /// Unit dominant eigenvector; the PF direction at the fixed point.
    pub pf_direction: DVector<f64>,
    /// Orthonormal basis of the flow-invariant complement (the kernel of
    /// the dominant left eigenvector).
    pub normal_basis: DMatrix<f64>,
    /// Spectral gap `c = Re(dominant) - max Re(others)`.
    pub gap: f64,
}

/// Split `T = W + N` at a fixed point, where `W` is spanned by the dominant
/// real eigenvector.
///
/// Fails when the dominant eigenvalue is complex or the gap to the rest of
/// the spectrum falls below `gap_threshold`.
pub fn classify_fixed_point(
    sys: &SystemDef,
    x_star: &DVector<f64>,
    gap_threshold: f64,
) -> Result<SpectralSplit> {
    let residual = sys.eval(x_star).norm();
    if residual >= 1e-8 {
        return Err(Error::InvalidAttractor(format!(
            "not a fixed point: |f| = {residual:.3e}"
        )));
    }
    let j = sys.jacobian(x_star);
    let mut spectrum = eigenvalues(&j);
    spectrum.sort_by(|a, b| b.re.partial_cmp(&a.re).unwrap());
    let dom = spectrum[0];
    let spec_scale = spectrum.iter().map(|e| e.norm()).fold(1.0, f64::max);
    if dom.im.abs() > 1e-9 * spec_scale {
        return Err(Error::SpectralSplit(format!(
            "dominant eigenvalue is complex: {:.6} + {:.6}i",
            dom.re, dom.im
        )));
    }
    let gap = if spectrum.len() == 1 {
        f64::INFINITY
    } else {
        spectrum
            .iter()
            .skip(1)
            .map(|e| dom.re - e.re)
            .fold(f64::INFINITY, f64::min)
    };
    if gap <= gap_threshold {
        return Err(Error::SpectralSplit(format!(
            "spectral gap {gap:.3e} below threshold {gap_threshold:.3e}"
        )));
    }
    let mut w = real_eigenvector(&j, dom.re)
        .ok_or_else(|| Error::SpectralSplit("no real dominant eigenvector".into()))?;
    // Canonical sign: largest-magnitude component positive.
    let imax = w.iamax();
    if w[imax] < 0.0 {
        w = -w;
    }
    let u = left_eigenvector(&j, dom.re)
        .ok_or_else(|| Error::SpectralSplit("no dominant left eigenvector".into()))?;
    let normal_basis = orthogonal_complement(&u);
    Ok(SpectralSplit {
        spectrum,
        dominant: dom.re,
        pf_direction: w,
        normal_basis,
        gap,
    })
}

/// A Poincare section: the hyperplane through `point` with unit `normal`.
#[derive(Debug, Clone)]
pub struct Section {
    pub point: DVector<f64>,
    pub normal: DVector<f64>,
}

/// A located periodic orbit.
#[derive(Debug, Clone)]
pub struct LimitCycle {
    pub anchor: DVector<f64>,
    pub period: f64,
    /// Uniform-in-time samples over one period with unit tangents.
    pub samples: Vec<CyclePoint>,
    /// Fundamental matrix over one period at the anchor.
    pub monodromy: DMatrix<f64>,
    /// `|psi(period, anchor) - anchor|`.
    pub closure_error: f64,
}

#[derive(Debug, Clone)]
pub struct CyclePoint {
    pub t: f64,
    pub x: DVector<f64>,
    pub tangent: DVector<f64>,
}

/// Options for the cycle search.
#[derive(Debug, Clone)]
pub struct CycleOptions {
    /// Transient skipped before placing the default section.
    pub t_burn: f64,
    /// Maximum time waited for one return.
    pub t_max: f64,
    /// Number of stored orbit samples.
    pub n_samples: usize,
    pub ode: OdeOptions,
}

impl Default for CycleOptions {
    fn default() -> Self {
        Self {
            t_burn: 30.0,
            t_max: 100.0,
            // Dense enough that arc-length resampling resolves the fast
            // segments of relaxation-type cycles.
            n_samples: 2048,
            ode: OdeOptions::with_tol(1e-11),
        }
    }
}

/// One application of the return map to a point on the section.
fn return_map(
    sys: &SystemDef,
    a: &DVector<f64>,
    section: &Section,
    opts: &CycleOptions,
) -> Result<(f64, DVector<f64>)> {
    // Leave the section before arming the event, so the t = 0 root of g is
    // not retriggered by round-off.
    let dt0 = 1e-2;
    let head = flow(sys, a, dt0, &opts.ode)?;
    let start = head.final_state().clone();
    let n = &section.normal;
    let p = &section.point;
    let (seg, hit) = flow_event(
        sys,
        &start,
        opts.t_max,
        |_t, x| n.dot(&(x - p)),
        1.0,
        1e-12,
        &opts.ode,
    )?;
    let t_ev = hit.ok_or(Error::NoReturn { t_max: opts.t_max })?;
    let x_ret = seg.state_at(t_ev);
    let speed = n.dot(&sys.eval(&x_ret)).abs();
    if speed < 1e-8 * sys.eval(&x_ret).norm().max(1e-300) {
        return Err(Error::TangentialCrossing {
            t: t_ev + dt0,
            speed,
        });
    }
    Ok((t_ev + dt0, x_ret))
}

/// Locate an attracting (or neutral) limit cycle by iterating the Poincare
/// return map until `|psi(tau, x) - x| < 1e-8`.
///
/// With `section = None` the hyperplane through `psi(t_burn, x0)` with
/// normal `f/|f|` is used, which is transversal at its anchor by
/// construction.
pub fn find_limit_cycle(
    sys: &SystemDef,
    x0: &DVector<f64>,
    section: Option<Section>,
    opts: &CycleOptions,
) -> Result<LimitCycle> {
    let (section, mut anchor) = match section {
        Some(s) => {
            let normal = s.normal.normalize();
            // Bring the trajectory onto the given section first.
            let burn = flow(sys, x0, opts.t_burn, &opts.ode)?;
            let start = burn.final_state().clone();
            let (seg, hit) = flow_event(
                sys,
                &start,
                opts.t_max,
                |_t, x| normal.dot(&(x - &s.point)),
                1.0,
                1e-12,
                &opts.ode,
            )?;
            let t_ev = hit.ok_or(Error::NoReturn { t_max: opts.t_max })?;
            let anchor = seg.state_at(t_ev);
            (
                Section {
                    point: s.point.clone(),
                    normal,
                },
                anchor,
            )
        }
        None => {
            let burn = flow(sys, x0, opts.t_burn, &opts.ode)?;
            let p = burn.final_state().clone();
            let fp = sys.eval(&p);
            if fp.norm() < 1e-8 {
                // The transient died at a fixed point: nothing returns.
                return Err(Error::NoReturn { t_max: opts.t_max });
            }
            let normal = fp.normalize();
            (
                Section {
                    point: p.clone(),
                    normal,
                },
                p,
            )
        }
    };

    let mut period = 0.0;
    let mut converged = false;
    for _ in 0..30 {
        let (tau, x_ret) = return_map(sys, &anchor, &section, opts)?;
        let displacement = (&x_ret - &anchor).norm();
        anchor = x_ret;
        period = tau;
        if displacement < 1e-9 {
            converged = true;
            break;
        }
    }
    if !converged {
        // One more pass to measure the residual honestly.
        let (tau, x_ret) = return_map(sys, &anchor, &section, opts)?;
        if (&x_ret - &anchor).norm() >= 1e-8 {
            return Err(Error::InvalidAttractor(format!(
                "return map did not converge (residual {:.3e})",
                (&x_ret - &anchor).norm()
            )));
        }
        anchor = x_ret;
        period = tau;
    }

    let seg = prolonged_flow(
        sys,
        &anchor,
        &DMatrix::identity(sys.dim(), sys.dim()),
        period,
        &opts.ode,
    )?;
    let monodromy = seg.final_fundamental();
    let closure_error = (seg.final_state() - &anchor).norm();
    let samples = (0..opts.n_samples)
        .map(|i| {
            let t = period * i as f64 / opts.n_samples as f64;
            let x = seg.state_at(t);
            let tangent = sys.eval(&x).normalize();
            CyclePoint { t, x, tangent }
        })
        .collect();
    Ok(LimitCycle {
        anchor,
        period,
        samples,
        monodromy,
        closure_error,
    })
}

/// Floquet data of a located cycle.
#[derive(Debug, Clone)]
pub struct FloquetResult {
    /// Multipliers sorted by descending magnitude.
    pub multipliers: Vec<Complex<f64>>,
    /// `det` of the monodromy matrix.
    pub product: f64,
    /// `exp` of the trace integral over one period (Liouville).
    pub liouville_product: f64,
    /// Angle (radians) between `f(anchor)` and the eigenvector of the
    /// multiplier nearest 1.
    pub trivial_angle: f64,
}

/// Multipliers of the monodromy matrix with the Liouville product check.
pub fn floquet(sys: &SystemDef, cycle: &LimitCycle) -> Result<FloquetResult> {
    let dim = sys.dim();
    let seg = prolonged_flow(
        sys,
        &cycle.anchor,
        &DMatrix::identity(dim, dim),
        cycle.period,
        &OdeOptions::with_tol(1e-11),
    )?;
    let check = liouville_det(sys, &seg);
    let liouville_product = *check.exp_trace.last().unwrap();
    let product = cycle.monodromy.determinant();
    let mut multipliers = eigenvalues(&cycle.monodromy);
    multipliers.sort_by(|a, b| b.norm().partial_cmp(&a.norm()).unwrap());
    let trivial = multipliers
        .iter()
        .min_by(|a, b| {
            (*a - Complex::new(1.0, 0.0))
                .norm()
                .partial_cmp(&(*b - Complex::new(1.0, 0.0)).norm())
                .unwrap()
        })
        .copied()
        .unwrap();
    let f_anchor = sys.eval(&cycle.anchor).normalize();
    let trivial_angle = real_eigenvector(&cycle.monodromy, trivial.re)
        .map(|v| v.dot(&f_anchor).abs().clamp(-1.0, 1.0).acos())
        .unwrap_or(f64::NAN);
    Ok(FloquetResult {
        multipliers,
        product,
        liouville_product,
        trivial_angle,
    })
}

/// Flow-ordered polyline along a heteroclinic arc.
#[derive(Debug, Clone)]
pub struct ArcSamples {
    pub points: Vec<DVector<f64>>,
    /// Unit `f/|f|` at each sample (flow direction).
    pub tangents: Vec<DVector<f64>>,
}

/// Trace the unstable-manifold arcs of each saddle until they land within
/// 1e-6 of a stable fixed point.
pub fn trace_arcs(sys: &SystemDef, fixed_points: &[FixedPoint]) -> Result<Vec<ArcSamples>> {
    let stable: Vec<&FixedPoint> = fixed_points
        .iter()
        .filter(|fp| fp.kind == FixedPointKind::Stable)
        .collect();
    if stable.is_empty() {
        return Err(Error::InvalidAttractor(
            "no stable fixed points to connect to".into(),
        ));
    }
    let opts = OdeOptions::default();
    let mut arcs = Vec::new();
    for fp in fixed_points {
        if fp.kind != FixedPointKind::Saddle {
            continue;
        }
        let unstable_count = fp.spectrum.iter().filter(|e| e.re > 0.0).count();
        if unstable_count != 1 {
            return Err(Error::InvalidAttractor(format!(
                "saddle with {unstable_count}-dimensional unstable manifold"
            )));
        }
        let unstable_dir = {
            let mut spectrum = fp.spectrum.clone();
            spectrum.sort_by(|a, b| b.re.partial_cmp(&a.re).unwrap());
            real_eigenvector(&fp.jacobian, spectrum[0].re).ok_or_else(|| {
                Error::SpectralSplit("no real unstable eigenvector at saddle".into())
            })?
        };
        for sign in [1.0, -1.0] {
            let start = &fp.x + &unstable_dir * (sign * 1e-6);
            let (seg, hit) = flow_event(
                sys,
                &start,
                400.0,
                |_t, x| {
                    stable
                        .iter()
                        .map(|s| (x - &s.x).norm())
                        .fold(f64::INFINITY, f64::min)
                        - 1e-6
                },
                -1.0,
                1e-10,
                &opts,
            )?;
            let t_end = hit.ok_or(Error::InvalidAttractor(
                "arc did not reach a stable fixed point".into(),
            ))?;
            let mut points = Vec::new();
            let mut tangents = Vec::new();
            let n = 200;
            for i in 0..=n {
                let t = t_end * i as f64 / n as f64;
                let x = seg.state_at(t);
                let f = sys.eval(&x);
                if f.norm() < 1e-12 {
                    continue;
                }
                tangents.push(f.normalize());
                points.push(x);
            }
            arcs.push(ArcSamples { points, tangents });
        }
    }
    if arcs.is_empty() {
        return Err(Error::InvalidAttractor("no saddle arcs found".into()));
    }
    Ok(arcs)
}

/// A one-dimensional attractor model.
#[derive(Debug, Clone)]
pub enum AttractorModel {
    FixedPointSet(Vec<FixedPoint>),
    LimitCycle(LimitCycle),
    FixedPointsWithArcs {
        fixed_points: Vec<FixedPoint>,
        arcs: Vec<ArcSamples>,
    },
}

/// A sample point of the attractor with a consistently oriented unit
/// tangent.
#[derive(Debug, Clone)]
pub struct AttractorPoint {
    pub x: DVector<f64>,
    pub tangent: DVector<f64>,
    /// Index into the model's fixed-point list when this sample is one.
    pub at_fixed_point: Option<usize>,
}

impl AttractorModel {
    /// The full ordered polyline of the attractor with consistently
    /// oriented unit tangents (consecutive tangents have positive dot
    /// products). Fixed points appear at their positions along the path.
    ///
    /// For a cycle the flow direction orients the tangents. For a saddle
    /// with two arcs the attractor is a path; one arc is reversed so the
    /// orientation runs from one stable endpoint to the other.
    pub fn path_points(&self) -> Result<Vec<AttractorPoint>> {
        let dominant_dir = |fp: &FixedPoint| -> Result<DVector<f64>> {
            let mut spectrum = fp.spectrum.clone();
            spectrum.sort_by(|a, b| b.re.partial_cmp(&a.re).unwrap());
            real_eigenvector(&fp.jacobian, spectrum[0].re)
                .ok_or_else(|| Error::SpectralSplit("no real dominant eigenvector".into()))
        };
        match self {
            AttractorModel::LimitCycle(cycle) => Ok(cycle
                .samples
                .iter()
                .map(|cp| AttractorPoint {
                    x: cp.x.clone(),
                    tangent: cp.tangent.clone(),
                    at_fixed_point: None,
                })
                .collect()),
            AttractorModel::FixedPointSet(fps) => fps
                .iter()
                .enumerate()
                .map(|(i, fp)| {
                    Ok(AttractorPoint {
                        x: fp.x.clone(),
                        tangent: dominant_dir(fp)?,
                        at_fixed_point: Some(i),
                    })
                })
                .collect(),
            AttractorModel::FixedPointsWithArcs { fixed_points, arcs } => {
                if arcs.len() != 2 {
                    return Err(Error::InvalidAttractor(format!(
                        "path orientation implemented for exactly two arcs, got {}",
                        arcs.len()
                    )));
                }
                // Path: end(arc0) <- reverse(arc0) <- saddle -> arc1 ->
                // end(arc1); tangents flip on the reversed leg.
                let mut path: Vec<AttractorPoint> = Vec::new();
                let fp_entry = |x: &DVector<f64>| -> Option<usize> {
                    fixed_points
                        .iter()
                        .enumerate()
                        .find(|(_, fp)| (&fp.x - x).norm() < 1e-4)
                        .map(|(i, _)| i)
                };
                // Stable endpoint of the reversed arc first.
                if let Some(i) = fp_entry(arcs[0].points.last().unwrap()) {
                    let mut w = dominant_dir(&fixed_points[i])?;
                    if w.dot(&arcs[0].tangents.last().unwrap().clone()) > 0.0 {
                        w = -w;
                    }
                    path.push(AttractorPoint {
                        x: fixed_points[i].x.clone(),
                        tangent: w,
                        at_fixed_point: Some(i),
                    });
                }
                for (i, p) in arcs[0].points.iter().enumerate().rev() {
                    path.push(AttractorPoint {
                        x: p.clone(),
                        tangent: -arcs[0].tangents[i].clone(),
                        at_fixed_point: None,
                    });
                }
                // The saddle sits between the two arc starts.
                if let Some(i) = fp_entry(&arcs[1].points[0]) {
                    let mut w = dominant_dir(&fixed_points[i])?;
                    if w.dot(&arcs[1].tangents[0]) < 0.0 {
                        w = -w;
                    }
                    path.push(AttractorPoint {
                        x: fixed_points[i].x.clone(),
                        tangent: w,
                        at_fixed_point: Some(i),
                    });
                }
                for (i, p) in arcs[1].points.iter().enumerate() {
                    path.push(AttractorPoint {
                        x: p.clone(),
                        tangent: arcs[1].tangents[i].clone(),
                        at_fixed_point: None,
                    });
                }
                if let Some(i) = fp_entry(arcs[1].points.last().unwrap()) {
                    let mut w = dominant_dir(&fixed_points[i])?;
                    if w.dot(&arcs[1].tangents.last().unwrap().clone()) < 0.0 {
                        w = -w;
                    }
                    path.push(AttractorPoint {
                        x: fixed_points[i].x.clone(),
                        tangent: w,
                        at_fixed_point: Some(i),
                    });
                }
                Ok(path)
            }
        }
    }

    /// Roughly equidistant subsample of the path, by cumulative chord
    /// length; fixed-point samples are always kept.
    pub fn sample_points(&self, n: usize) -> Result<Vec<AttractorPoint>> {
        let path = self.path_points()?;
        Ok(resample_by_arclength(&path, n))
    }

    pub fn fixed_points(&self) -> &[FixedPoint] {
        match self {
            AttractorModel::FixedPointSet(fps) => fps,
            AttractorModel::FixedPointsWithArcs { fixed_points, .. } => fixed_points,
            AttractorModel::LimitCycle(_) => &[],
        }
    }
}

/// Indices of `n` roughly equidistant points (by cumulative chord length)
/// of an ordered polyline, always including fixed-point entries.
pub fn arclength_indices(path: &[AttractorPoint], n: usize) -> Vec<usize> {
    if path.len() <= n {
        return (0..path.len()).collect();
    }
    let mut cum = vec![0.0f64];
    for w in path.windows(2) {
        cum.push(cum.last().unwrap() + (&w[1].x - &w[0].x).norm());
    }
    let total = *cum.last().unwrap();
    let n = n.max(2);
    let mut keep = vec![false; path.len()];
    let mut cursor = 0usize;
    for i in 0..n {
        let target = total * i as f64 / (n - 1) as f64;
        while cursor + 1 < path.len() && cum[cursor + 1] < target {
            cursor += 1;
        }
        // Nearer of the bracketing samples.
        let pick = if cursor + 1 < path.len()
            && (cum[cursor + 1] - target).abs() < (cum[cursor] - target).abs()
        {
            cursor + 1
        } else {
            cursor
        };
        keep[pick] = true;
    }
    for (i, p) in path.iter().enumerate() {
        if p.at_fixed_point.is_some() {
            keep[i] = true;
        }
    }
    keep.iter()
        .enumerate()
        .filter(|(_, k)| **k)
        .map(|(i, _)| i)
        .collect()
}

/// Pick `n` roughly equidistant points (by cumulative chord length) from an
/// ordered polyline, keeping every fixed-point entry.
pub fn resample_by_arclength(path: &[AttractorPoint], n: usize) -> Vec<AttractorPoint> {
    arclength_indices(path, n)
        .into_iter()
        .map(|i| path[i].clone())
        .collect()
}

/// Per-point exponent fits entering a certificate.
#[derive(Debug, Clone)]
pub struct NhPointFit {
    pub x: DVector<f64>,
    /// Fitted exponent of the pushed tangent norm (log-slope).
    pub tangent_exponent: f64,
    /// Leading fitted exponent over the normal directions.
    pub normal_exponent: f64,
}

/// Normal-hyperbolicity certificate (rates in 1/time).
#[derive(Debug, Clone)]
pub struct NHCertificate {
    /// Certified normal contraction rate: every normal exponent is at most
    /// `-lambda1`.
    pub lambda1: f64,
    /// Tangent bound: every tangent exponent is at least `-lambda2`.
    pub lambda2: f64,
    /// Upper prefactor for the normal bound (>= 1).
    pub rho1: f64,
    /// Lower prefactor for the tangent bound (<= 1).
    pub rho2: f64,
    pub fits: Vec<NhPointFit>,
    pub margin: f64,
    pub verdict: bool,
    pub threshold: f64,
}

#[derive(Debug, Clone)]
pub struct NhOptions {
    pub horizon: f64,
    /// Attractor sample points entering the fits.
    pub points: usize,
    /// Substeps of the discrete-QR normal propagation.
    pub substeps: usize,
    /// Required gap `lambda1 - lambda2` for a positive verdict.
    pub threshold: f64,
    pub ode: OdeOptions,
}

impl Default for NhOptions {
    fn default() -> Self {
        Self {
            horizon: 5.0,
            points: 12,
            substeps: 40,
            threshold: 0.1,
            ode: OdeOptions::default(),
        }
    }
}

/// Fit tangent and normal growth exponents at sampled attractor points and
/// aggregate them into a certificate.
///
/// Normal directions are propagated by the variational flow and
/// re-orthogonalized against the current tangent after each substep
/// (discrete QR); their cumulative log norms give the transversal
/// exponents. Tangent growth uses the pushed tangent vector, which follows
/// `f(psi(t, x))` off fixed points and the dominant eigendirection at them.
pub fn verify_normal_hyperbolicity(
    sys: &SystemDef,
    attractor: &AttractorModel,
    opts: &NhOptions,
) -> Result<NHCertificate> {
    let dim = sys.dim();
    let points = attractor.sample_points(opts.points)?;
    if points.is_empty() {
        return Err(Error::InvalidAttractor("no attractor samples".into()));
    }
    let dt = opts.horizon / opts.substeps as f64;
    let mut fits = Vec::with_capacity(points.len());
    let mut normal_curves: Vec<Vec<f64>> = Vec::new();
    let mut tangent_curves: Vec<Vec<f64>> = Vec::new();
    let times: Vec<f64> = (0..=opts.substeps).map(|i| dt * i as f64).collect();

    for pt in &points {
        let mut x = pt.x.clone();
        let mut tangent = pt.tangent.normalize();
        let mut q = orthogonal_complement(&tangent);
        let mut cum_normal = vec![0.0f64];
        let mut cum_tangent = vec![0.0f64];
        let mut acc_normal = 0.0;
        let mut acc_tangent = 0.0;
        for _ in 0..opts.substeps {
            let mut m0 = DMatrix::zeros(dim, dim);
            m0.columns_mut(0, dim - 1).copy_from(&q);
            m0.column_mut(dim - 1).copy_from(&tangent);
            let seg = prolonged_flow(sys, &x, &m0, dt, &opts.ode)?;
            let x1 = seg.final_state();
            let phi = seg.final_fundamental();
            let pushed_tangent = phi.column(dim - 1).clone_owned();
            acc_tangent += pushed_tangent.norm().max(1e-300).ln();
            cum_tangent.push(acc_tangent);
            // New tangent: flow direction off fixed points, pushed vector
            // at them (where it stays the eigendirection).
            let f1 = sys.eval(&x1);
            tangent = if pt.at_fixed_point.is_some() || f1.norm() < 1e-10 {
                pushed_tangent.normalize()
            } else {
                let mut t = f1.normalize();
                if t.dot(&pushed_tangent) < 0.0 {
                    t = -t;
                }
                t
            };
            // Leading normal growth: norm of the first pushed normal after
            // removing its tangent component.
            let pushed_normals = phi.columns(0, dim - 1).clone_owned();
            let lead = {
                let col = pushed_normals.column(0).clone_owned();
                let t_comp = tangent.dot(&col);
                (col - &tangent * t_comp).norm().max(1e-300)
            };
            acc_normal += lead.ln();
            cum_normal.push(acc_normal);
            q = orthonormalize_against(&tangent, &pushed_normals);
            x = x1;
        }
        let (t_slope, _) = linear_fit(&times, &cum_tangent);
        let (n_slope, _) = linear_fit(&times, &cum_normal);
        fits.push(NhPointFit {
            x: pt.x.clone(),
            tangent_exponent: t_slope,
            normal_exponent: n_slope,
        });
        normal_curves.push(cum_normal);
        tangent_curves.push(cum_tangent);
    }

    let lambda1 = -fits
        .iter()
        .map(|f| f.normal_exponent)
        .fold(f64::NEG_INFINITY, f64::max);
    let lambda2 = -fits
        .iter()
        .map(|f| f.tangent_exponent)
        .fold(f64::INFINITY, f64::min);
    // Prefactors: worst deviation of the cumulative logs from the
    // certified envelopes.
    let mut rho1: f64 = 1.0;
    let mut rho2: f64 = 1.0;
    for curve in &normal_curves {
        for (i, &v) in curve.iter().enumerate() {
            rho1 = rho1.max((v + lambda1 * times[i]).exp());
        }
    }
    for curve in &tangent_curves {
        for (i, &v) in curve.iter().enumerate() {
            rho2 = rho2.min((v + lambda2 * times[i]).exp());
        }
    }
    let margin = lambda1 - lambda2;
    Ok(NHCertificate {
        lambda1,
        lambda2,
        rho1,
        rho2,
        fits,
        margin,
        verdict: lambda2 < lambda1 && margin > opts.threshold,
        threshold: opts.threshold,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynsys::builtins;
    use approx::assert_relative_eq;

    fn vec2(a: f64, b: f64) -> DVector<f64> {
        DVector::from_vec(vec![a, b])
    }

    fn grid_seeds(lo: f64, hi: f64, n: usize) -> Vec<DVector<f64>> {
        let mut seeds = Vec::new();
        for i in 0..n {
            for j in 0..n {
                let a = lo + (hi - lo) * i as f64 / (n - 1) as f64;
                let b = lo + (hi - lo) * j as f64 / (n - 1) as f64;
                seeds.push(vec2(a, b));
            }
        }
        seeds
    }

    #[test]
    fn bistable_has_three_fixed_points() {
        let sys = builtins::bistable4();
        let fps = find_fixed_points(
            &sys,
            &grid_seeds(-2.0, 2.0, 7),
            &vec2(-2.0, -2.0),
            &vec2(2.0, 2.0),
        );
        assert_eq!(fps.len(), 3);
        let xs: Vec<f64> = fps.iter().map(|fp| fp.x[0]).collect();
        assert_relative_eq!(xs[0], -1.0, epsilon = 1e-9);
        assert_relative_eq!(xs[1], 0.0, epsilon = 1e-9);
        assert_relative_eq!(xs[2], 1.0, epsilon = 1e-9);
        assert_eq!(fps[0].kind, FixedPointKind::Stable);
        assert_eq!(fps[1].kind, FixedPointKind::Saddle);
        assert_eq!(fps[2].kind, FixedPointKind::Stable);
        for fp in &fps {
            assert!(sys.eval(&fp.x).norm() < 1e-10);
        }
    }

    #[test]
    fn vdp_has_unique_unstable_focus() {
        let sys = builtins::vdp();
        let fps = find_fixed_points(
            &sys,
            &grid_seeds(-3.0, 3.0, 5),
            &vec2(-3.0, -3.0),
            &vec2(3.0, 3.0),
        );
        assert_eq!(fps.len(), 1);
        assert!(fps[0].x.norm() < 1e-10);
        assert_eq!(fps[0].kind, FixedPointKind::Unstable);
        assert!(fps[0].spectrum[0].im.abs() > 0.1, "focus has complex pair");
    }

    #[test]
    fn scalar_decay_single_root() {
        let sys = crate::dynsys::SystemDef::linear(
            "decay",
            DMatrix::from_row_slice(1, 1, &[-1.0]),
        );
        let seeds = vec![
            DVector::from_vec(vec![-1.5]),
            DVector::from_vec(vec![0.7]),
        ];
        let fps = find_fixed_points(
            &sys,
            &seeds,
            &DVector::from_vec(vec![-2.0]),
            &DVector::from_vec(vec![2.0]),
        );
        assert_eq!(fps.len(), 1);
        assert!(fps[0].x[0].abs() < 1e-12);
    }

    #[test]
    fn classify_bistable_saddle_and_node() {
        let sys = builtins::bistable4();
        let s = classify_fixed_point(&sys, &vec2(0.0, 0.0), 1e-6).unwrap();
        assert_relative_eq!(s.dominant, 1.0, epsilon = 1e-9);
        assert_relative_eq!(s.gap, 5.0, epsilon = 1e-9);
        assert!((s.pf_direction.clone() - vec2(1.0, 0.0)).norm() < 1e-9);
        assert_eq!(s.normal_basis.ncols(), 1);
        assert!(s.normal_basis.column(0)[1].abs() > 1.0 - 1e-9);

        let n = classify_fixed_point(&sys, &vec2(1.0, 0.0), 1e-6).unwrap();
        assert_relative_eq!(n.dominant, -2.0, epsilon = 1e-9);
        assert_relative_eq!(n.gap, 2.0, epsilon = 1e-9);
    }

    #[test]
    fn classify_rejects_complex_dominant_pair() {
        let sys = builtins::vdp();
        let err = classify_fixed_point(&sys, &vec2(0.0, 0.0), 1e-6).unwrap_err();
        assert!(matches!(err, Error::SpectralSplit(_)), "{err}");
    }

    #[test]
    fn rotation_cycle_period_is_two_pi() {
        let sys = builtins::rot2();
        let mut opts = CycleOptions::default();
        opts.t_burn = 0.5;
        let cycle = find_limit_cycle(&sys, &vec2(1.0, 0.0), None, &opts).unwrap();
        assert_relative_eq!(cycle.period, 2.0 * std::f64::consts::PI, epsilon = 1e-8);
        assert!(cycle.closure_error < 1e-8);
    }

    #[test]
    fn bistable_has_no_return() {
        let sys = builtins::bistable4();
        let err =
            find_limit_cycle(&sys, &vec2(0.5, 0.3), None, &CycleOptions::default()).unwrap_err();
        assert!(matches!(err, Error::NoReturn { .. }), "{err}");
    }

    #[test]
    fn vdp_cycle_closure_and_section_independence() {
        let sys = builtins::vdp();
        let cycle =
            find_limit_cycle(&sys, &vec2(2.0, 0.0), None, &CycleOptions::default()).unwrap();
        assert!(cycle.closure_error < 1e-8, "closure {}", cycle.closure_error);
        assert!(cycle.period > 6.0 && cycle.period < 7.5);

        let other = Section {
            point: vec2(0.0, 0.0),
            normal: vec2(0.0, 1.0),
        };
        let cycle2 =
            find_limit_cycle(&sys, &vec2(-1.5, 1.0), Some(other), &CycleOptions::default())
                .unwrap();
        assert!(
            (cycle.period - cycle2.period).abs() < 1e-7,
            "periods {} vs {}",
            cycle.period,
            cycle2.period
        );
    }

    #[test]
    fn floquet_of_rotation_is_unit_pair() {
        let sys = builtins::rot2();
        let mut opts = CycleOptions::default();
        opts.t_burn = 0.5;
        let cycle = find_limit_cycle(&sys, &vec2(1.0, 0.0), None, &opts).unwrap();
        let fl = floquet(&sys, &cycle).unwrap();
        assert!((fl.multipliers[0].norm() - 1.0).abs() < 1e-7);
        assert!((fl.multipliers[1].norm() - 1.0).abs() < 1e-7);
        assert_relative_eq!(fl.product, fl.liouville_product, max_relative = 1e-6);
    }

    #[test]
    fn floquet_of_vdp_matches_liouville() {
        let sys = builtins::vdp();
        let cycle =
            find_limit_cycle(&sys, &vec2(2.0, 0.0), None, &CycleOptions::default()).unwrap();
        let fl = floquet(&sys, &cycle).unwrap();
        // Trivial multiplier at 1 with eigenvector along the flow.
        assert!((fl.multipliers[0].re - 1.0).abs() < 1e-4);
        assert!(fl.trivial_angle < 1e-3);
        // Second multiplier strictly inside the unit circle.
        let mu2 = fl.multipliers[1].norm();
        assert!(mu2 > 0.0 && mu2 < 1.0, "mu2 = {mu2}");
        assert_relative_eq!(fl.product, fl.liouville_product, max_relative = 1e-6);
    }

    #[test]
    fn arcs_connect_saddle_to_nodes() {
        let sys = builtins::bistable4();
        let fps = find_fixed_points(
            &sys,
            &grid_seeds(-2.0, 2.0, 7),
            &vec2(-2.0, -2.0),
            &vec2(2.0, 2.0),
        );
        let arcs = trace_arcs(&sys, &fps).unwrap();
        assert_eq!(arcs.len(), 2);
        for arc in &arcs {
            let last = arc.points.last().unwrap();
            assert!(
                (last - vec2(1.0, 0.0)).norm() < 2e-6 || (last - vec2(-1.0, 0.0)).norm() < 2e-6
            );
        }
    }

    fn bistable_attractor() -> (crate::dynsys::SystemDef, AttractorModel) {
        let sys = builtins::bistable4();
        let fps = find_fixed_points(
            &sys,
            &grid_seeds(-2.0, 2.0, 7),
            &vec2(-2.0, -2.0),
            &vec2(2.0, 2.0),
        );
        let arcs = trace_arcs(&sys, &fps).unwrap();
        let model = AttractorModel::FixedPointsWithArcs {
            fixed_points: fps,
            arcs,
        };
        (sys, model)
    }

    #[test]
    fn attractor_path_tangents_are_consistently_oriented() {
        let (_sys, model) = bistable_attractor();
        let pts = model.sample_points(24).unwrap();
        assert!(pts.len() >= 20);
        // All tangents point the same way along the path, including at the
        // fixed points.
        let sign = pts[0].tangent[0].signum();
        for p in &pts {
            assert!(
                sign * p.tangent[0] > 0.5,
                "tangent {:?} at {:?} not oriented",
                p.tangent,
                p.x
            );
        }
    }

    #[test]
    fn nh_certificate_bistable_rates() {
        let (sys, model) = bistable_attractor();
        let cert = verify_normal_hyperbolicity(&sys, &model, &NhOptions::default()).unwrap();
        assert!(cert.verdict, "margin {}", cert.margin);
        assert_relative_eq!(cert.lambda1, 4.0, max_relative = 0.05);
        assert_relative_eq!(cert.lambda2, 2.0, max_relative = 0.05);
        for fit in &cert.fits {
            assert!(fit.tangent_exponent >= -cert.lambda2 - 1e-9);
            assert!(fit.normal_exponent <= -cert.lambda1 + 1e-9);
        }
    }

    #[test]
    fn nh_certificate_vdp_rates() {
        let sys = builtins::vdp();
        let cycle =
            find_limit_cycle(&sys, &vec2(2.0, 0.0), None, &CycleOptions::default()).unwrap();
        let fl = floquet(&sys, &cycle).unwrap();
        let mu2 = fl.multipliers[1].norm();
        let expected_lambda1 = -mu2.ln() / cycle.period;
        let mut opts = NhOptions::default();
        opts.horizon = 2.0 * cycle.period;
        opts.substeps = 64;
        let model = AttractorModel::LimitCycle(cycle);
        let cert = verify_normal_hyperbolicity(&sys, &model, &opts).unwrap();
        assert!(cert.verdict);
        assert_relative_eq!(cert.lambda1, expected_lambda1, max_relative = 0.05);
        assert!(cert.lambda2.abs() < 0.05, "lambda2 = {}", cert.lambda2);
    }

    #[test]
    fn nh_certificate_rotation_is_negative() {
        let sys = builtins::rot2();
        let mut copts = CycleOptions::default();
        copts.t_burn = 0.5;
        let cycle = find_limit_cycle(&sys, &vec2(1.0, 0.0), None, &copts).unwrap();
        let model = AttractorModel::LimitCycle(cycle);
        let mut opts = NhOptions::default();
        opts.horizon = 4.0 * std::f64::consts::PI;
        let cert = verify_normal_hyperbolicity(&sys, &model, &opts).unwrap();
        assert!(!cert.verdict, "no normal gap for the harmonic rotation");
        assert!(cert.margin < 0.05);
    }
}
