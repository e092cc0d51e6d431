//! Constructive cone-field certification around a normally hyperbolic
//! one-dimensional attractor: adapted metric on the attractor, cone field
//! anchored to its frames, forward-invariant tube, and backward-transported
//! basin field, finished by a differential-positivity check.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::attractors::{
    arclength_indices, verify_normal_hyperbolicity, AttractorModel, AttractorPoint,
    NHCertificate, NhOptions,
};
use crate::cones::{Cone, ConeField};
use crate::dynsys::{flow, flow_event, prolonged_flow, OdeOptions, SystemDef};
use crate::error::{Error, Result};
use crate::linalg::{eigenvalues, orthogonal_complement, real_eigenvector};
use crate::positivity::{check_diff_positivity, PositivityOptions, PositivityReport};
use crate::sample::BoxSampler;

/// One attractor sample with its adapted-metric data.
///
/// The cone at the frame is `{ a xi + N v : a >= 0, a w_t >= e^rho |v|_W }`
/// in the oblique coordinates of the (tangent, normal) splitting; `rho = 0`
/// is the base cone of the construction.
#[derive(Debug, Clone)]
pub struct Frame {
    pub x: DVector<f64>,
    /// Unit tangent, consistently oriented along the attractor.
    pub xi: DVector<f64>,
    /// Unit spanning vectors of the invariant normal complement (columns;
    /// not necessarily orthogonal to the tangent).
    pub normal: DMatrix<f64>,
    /// Adapted tangent weight: integral of `|Phi(t) xi| e^{l2 t}`.
    pub tangent_weight: f64,
    /// Adapted normal Gram weight:
    /// integral of `<Phi n_j, Phi n_k> e^{2 l1 t}`.
    pub normal_weight: DMatrix<f64>,
    /// Cached inverse of the splitting basis `[xi | N]`.
    basis_inv: DMatrix<f64>,
}

impl Frame {
    /// The rho-parametrized cone at this frame, optionally pre-composed
    /// with a variational matrix `phi` (membership of `d` then means
    /// `phi d` lies in the frame cone). Composing here keeps both blocks
    /// of the quadratic form representable for large `rho` instead of
    /// materializing an extreme intermediate weight.
    pub fn cone(&self, rho: f64, phi: Option<&DMatrix<f64>>) -> Result<Cone> {
        let dim = self.x.len();
        let m = match phi {
            Some(p) => &self.basis_inv * p,
            None => self.basis_inv.clone(),
        };
        let wt2 = self.tangent_weight * self.tangent_weight * (-2.0 * rho).exp();
        let mut inner = DMatrix::zeros(dim, dim);
        inner[(0, 0)] = -wt2;
        inner
            .view_mut((1, 1), (dim - 1, dim - 1))
            .copy_from(&self.normal_weight);
        let q = m.transpose() * inner * &m;
        let hint = match phi {
            Some(p) => p
                .clone()
                .lu()
                .solve(&self.xi)
                .ok_or(Error::SingularTransport {
                    cond: crate::linalg::condition_number(p),
                })?,
            None => self.xi.clone(),
        };
        Cone::from_quadratic(&q, &hint)
    }
}

/// Frames of the adapted metric along the attractor.
#[derive(Debug, Clone)]
pub struct AttractorFrames {
    pub frames: Vec<Frame>,
    pub lambda1: f64,
    pub lambda2: f64,
    pub t_int: f64,
    /// Whether the frame sequence closes into a loop.
    pub cyclic: bool,
}

#[derive(Debug, Clone)]
pub struct MetricOptions {
    /// Quadrature window of the adapted-metric integrals.
    pub t_int: f64,
    /// Number of frames along the attractor.
    pub frame_count: usize,
    pub ode: OdeOptions,
}

impl Default for MetricOptions {
    fn default() -> Self {
        Self {
            t_int: 5.0,
            frame_count: 128,
            ode: OdeOptions::default(),
        }
    }
}

fn eps_bar(eps: f64) -> f64 {
    -(1.0 - eps).ln()
}

/// Invariant normal directions at the sampled attractor points.
///
/// For a planar limit cycle the nontrivial Floquet eigenvector is
/// propagated by the variational flow, which keeps the normal bundle
/// exactly invariant. At fixed points the dominant left eigenvector's
/// kernel is used. Elsewhere (and in higher dimensions) the orthogonal
/// complement of the tangent stands in; the quadrature divergence guard
/// catches cases where that approximation is inadequate.
fn invariant_normals(
    sys: &SystemDef,
    attractor: &AttractorModel,
    points: &[AttractorPoint],
    indices: &[usize],
    opts: &MetricOptions,
) -> Result<Vec<DMatrix<f64>>> {
    let dim = sys.dim();
    if let (AttractorModel::LimitCycle(cycle), 2) = (attractor, dim) {
        let mut mult = eigenvalues(&cycle.monodromy);
        mult.sort_by(|a, b| {
            (a - nalgebra::Complex::new(1.0, 0.0))
                .norm()
                .partial_cmp(&(b - nalgebra::Complex::new(1.0, 0.0)).norm())
                .unwrap()
        });
        let nontrivial = mult[1];
        if nontrivial.im.abs() > 1e-8 * (1.0 + nontrivial.norm()) {
            return Err(Error::SpectralSplit(
                "nontrivial Floquet multiplier is complex".into(),
            ));
        }
        let n0 = real_eigenvector(&cycle.monodromy, nontrivial.re)
            .ok_or_else(|| Error::SpectralSplit("no Floquet eigenvector".into()))?;
        let seg = prolonged_flow(
            sys,
            &cycle.anchor,
            &DMatrix::from_columns(&[n0]),
            cycle.period,
            &opts.ode,
        )?;
        let mut out = Vec::with_capacity(indices.len());
        let mut prev: Option<DVector<f64>> = None;
        for &i in indices {
            let t = cycle.samples[i].t;
            let mut n = seg.fundamental_at(t).column(0).normalize();
            if let Some(p) = &prev {
                if n.dot(p) < 0.0 {
                    n = -n;
                }
            }
            prev = Some(n.clone());
            out.push(DMatrix::from_columns(&[n]));
        }
        return Ok(out);
    }
    let fps = attractor.fixed_points();
    points
        .iter()
        .map(|pt| match pt.at_fixed_point {
            Some(i) => {
                let split = crate::attractors::classify_fixed_point(sys, &fps[i].x, 1e-9)?;
                Ok(split.normal_basis)
            }
            None => Ok(orthogonal_complement(&pt.tangent.normalize())),
        })
        .collect()
}

/// Build the adapted metric along the attractor.
///
/// The tangent weight damps the pushed tangent by `e^{lambda2 t}` and the
/// normal Gram weight damps pushed normal pairs by `e^{2 lambda1 t}`, so
/// one-step contraction factors satisfy the unit-prefactor bounds at the
/// sampled points. Requires a positive certificate.
pub fn adapted_metric(
    sys: &SystemDef,
    attractor: &AttractorModel,
    cert: &NHCertificate,
    opts: &MetricOptions,
) -> Result<AttractorFrames> {
    if !cert.verdict {
        return Err(Error::CertificateNegative(format!(
            "margin {} <= threshold {}",
            cert.margin, cert.threshold
        )));
    }
    let dim = sys.dim();
    let path = attractor.path_points()?;
    let indices = arclength_indices(&path, opts.frame_count);
    let points: Vec<AttractorPoint> = indices.iter().map(|&i| path[i].clone()).collect();
    let normals = invariant_normals(sys, attractor, &points, &indices, opts)?;
    for w in points.windows(2) {
        if w[0].tangent.dot(&w[1].tangent) <= 0.0 {
            return Err(Error::InvalidAttractor(
                "tangent orientation flips between consecutive frames".into(),
            ));
        }
    }

    let (l1, l2) = (cert.lambda1, cert.lambda2);
    let panels = 128usize;
    let dt = opts.t_int / panels as f64;
    let mut frames = Vec::with_capacity(points.len());
    for (pt, normal) in points.iter().zip(normals) {
        let xi = pt.tangent.normalize();
        let mut m0 = DMatrix::zeros(dim, dim);
        m0.column_mut(0).copy_from(&xi);
        m0.columns_mut(1, dim - 1).copy_from(&normal);
        let seg = prolonged_flow(sys, &pt.x, &m0, opts.t_int, &opts.ode)?;
        // Simpson quadrature of the damped integrands on the dense output.
        let mut w_t = 0.0;
        let mut gram = DMatrix::zeros(dim - 1, dim - 1);
        let mut first_t = 0.0;
        let mut last_t = 0.0;
        let mut first_n = 0.0;
        let mut last_n = 0.0;
        for i in 0..=2 * panels {
            let t = 0.5 * dt * i as f64;
            let phi = seg.fundamental_at(t);
            let g_t = phi.column(0).norm() * (l2 * t).exp();
            let cols = phi.columns(1, dim - 1);
            let g_n = cols.transpose() * cols * (2.0 * l1 * t).exp();
            let weight = if i == 0 || i == 2 * panels {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            w_t += weight * g_t;
            gram += &g_n * weight;
            if i == 0 {
                first_t = g_t;
                first_n = g_n.trace();
            }
            if i == 2 * panels {
                last_t = g_t;
                last_n = g_n.trace();
            }
        }
        w_t *= dt / 6.0;
        gram *= dt / 6.0;
        // The tangent integrand may grow (the metric only bounds tangent
        // decay from below); the normal integrand must not, or the damping
        // exceeds the actual contraction rate.
        if last_n > 50.0 * first_n.max(1e-300) || !w_t.is_finite() {
            return Err(Error::QuadratureDiverged(format!(
                "normal integrand grew {:.1}x over t_int = {} (tangent {:.1}x)",
                last_n / first_n.max(1e-300),
                opts.t_int,
                last_t / first_t.max(1e-300),
            )));
        }
        let gram = (&gram + gram.transpose()) * 0.5;
        let mut basis = DMatrix::zeros(dim, dim);
        basis.column_mut(0).copy_from(&xi);
        basis.columns_mut(1, dim - 1).copy_from(&normal);
        let basis_inv = basis.clone().try_inverse().ok_or_else(|| {
            Error::InvalidAttractor("tangent/normal splitting is degenerate".into())
        })?;
        frames.push(Frame {
            x: pt.x.clone(),
            xi,
            normal,
            tangent_weight: w_t,
            normal_weight: gram,
            basis_inv,
        });
    }
    Ok(AttractorFrames {
        frames,
        lambda1: l1,
        lambda2: l2,
        t_int: opts.t_int,
        cyclic: matches!(attractor, AttractorModel::LimitCycle(_)),
    })
}

/// Shared frame table with nearest-point lookup.
#[derive(Debug, Clone)]
struct FrameSet {
    frames: Arc<Vec<Frame>>,
    cyclic: bool,
}

impl FrameSet {
    fn nearest(&self, x: &DVector<f64>) -> (usize, f64) {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, f) in self.frames.iter().enumerate() {
            let d = (&f.x - x).norm();
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        (best, best_d)
    }

    /// Frames within `factor` of the nearest distance must be contiguous
    /// along the attractor, otherwise the projection is ambiguous.
    fn projection_unique(&self, x: &DVector<f64>, factor: f64) -> bool {
        let (_, d0) = self.nearest(x);
        let n = self.frames.len();
        let close: Vec<usize> = (0..n)
            .filter(|&i| (&self.frames[i].x - x).norm() <= d0 * factor + 1e-12)
            .collect();
        if close.len() <= 1 {
            return true;
        }
        let window = 6usize;
        close.windows(2).all(|w| {
            let gap = w[1] - w[0];
            gap <= window || (self.cyclic && n - gap <= window)
        })
    }

    fn max_spacing(&self) -> f64 {
        let mut m: f64 = 0.0;
        for w in self.frames.windows(2) {
            m = m.max((&w[1].x - &w[0].x).norm());
        }
        if self.cyclic && self.frames.len() > 1 {
            m = m.max((&self.frames[self.frames.len() - 1].x - &self.frames[0].x).norm());
        }
        m
    }
}

/// Cone field anchored to the attractor frames (nearest-frame lookup).
#[derive(Debug, Clone)]
pub struct AttractorField {
    set: FrameSet,
    /// Construction-time strict shrink (kept for reporting; checks pass
    /// their own epsilon).
    pub eps: f64,
}

/// Build the cone field of the adapted metric on the attractor.
pub fn attractor_cone_field(frames: &AttractorFrames, eps: f64) -> Result<AttractorField> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::InvalidCone(format!("eps {eps} outside (0, 1)")));
    }
    if frames.frames.is_empty() {
        return Err(Error::InvalidAttractor("no frames".into()));
    }
    // Spot-check that every frame yields a valid solid pointed cone for
    // both the base and the strict parameter.
    for f in &frames.frames {
        for rho in [0.0, eps_bar(eps)] {
            let cone = f.cone(rho, None)?;
            if !cone.is_pointed() || !cone.is_solid() {
                return Err(Error::InvalidCone(
                    "frame cone is not solid and pointed".into(),
                ));
            }
        }
    }
    Ok(AttractorField {
        set: FrameSet {
            frames: Arc::new(frames.frames.clone()),
            cyclic: frames.cyclic,
        },
        eps,
    })
}

impl AttractorField {
    pub fn frames(&self) -> &[Frame] {
        &self.set.frames
    }

    fn nearest_frame(&self, x: &DVector<f64>) -> &Frame {
        let (i, _) = self.set.nearest(x);
        &self.set.frames[i]
    }
}

impl ConeField for AttractorField {
    fn cone_at(&self, x: &DVector<f64>) -> Result<Cone> {
        self.nearest_frame(x).cone(0.0, None)
    }

    fn strict_margin_at(&self, x: &DVector<f64>, d: &DVector<f64>, eps: f64) -> Result<f64> {
        Ok(self.nearest_frame(x).cone(eps_bar(eps), None)?.margin(d))
    }

    fn strict_cone_at(&self, x: &DVector<f64>, eps: f64) -> Result<Option<Cone>> {
        Ok(Some(self.nearest_frame(x).cone(eps_bar(eps), None)?))
    }
}

/// Tube of radius `c` around the attractor with a certified safe radius:
/// sampled trajectories from the `safe_radius`-tube stay in the `c`-tube.
#[derive(Debug, Clone)]
pub struct TubeField {
    set: FrameSet,
    pub radius: f64,
    pub safe_radius: f64,
    pub eps: f64,
}

#[derive(Debug, Clone)]
pub struct TubeOptions {
    /// Horizon of the sampled forward-invariance test.
    pub invariance_horizon: f64,
    /// Every k-th frame seeds invariance test points.
    pub frame_stride: usize,
    pub ode: OdeOptions,
}

impl Default for TubeOptions {
    fn default() -> Self {
        Self {
            invariance_horizon: 6.0,
            frame_stride: 4,
            ode: OdeOptions::default(),
        }
    }
}

/// Extend the attractor cone field to a tube by nearest-point projection,
/// and certify (by sampling) a safe radius `rho(c) < c` whose trajectories
/// remain inside the `c`-tube.
pub fn tube_extension(
    sys: &SystemDef,
    field: &AttractorField,
    c: f64,
    opts: &TubeOptions,
) -> Result<TubeField> {
    let set = field.set.clone();
    let spacing = set.max_spacing();
    if spacing > c / 5.0 {
        return Err(Error::InvalidAttractor(format!(
            "frame spacing {spacing:.3e} exceeds c/5 = {:.3e}; use more frames",
            c / 5.0
        )));
    }
    let dist = |x: &DVector<f64>| set.nearest(x).1;
    let grid = 17usize;
    let test_radius = |r: f64| -> Result<bool> {
        for f in set.frames.iter().step_by(opts.frame_stride.max(1)) {
            for j in 0..f.normal.ncols() {
                for sign in [1.0, -1.0] {
                    let y0 = &f.x + f.normal.column(j) * (sign * r);
                    if !set.projection_unique(&y0, 1.25) {
                        return Err(Error::ProjectionAmbiguous { dist: r });
                    }
                    let seg = flow(sys, &y0, opts.invariance_horizon, &opts.ode)?;
                    for g in 0..=grid {
                        let t = opts.invariance_horizon * g as f64 / grid as f64;
                        if dist(&seg.state_at(t)) > c {
                            return Ok(false);
                        }
                    }
                }
            }
        }
        Ok(true)
    };
    let mut lo = 0.0f64;
    let mut hi = c;
    for _ in 0..8 {
        let mid = 0.5 * (lo + hi);
        if test_radius(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    if lo == 0.0 {
        return Err(Error::NoInvariantTube { c });
    }
    Ok(TubeField {
        set,
        radius: c,
        safe_radius: lo,
        eps: field.eps,
    })
}

impl TubeField {
    pub fn distance_to_attractor(&self, x: &DVector<f64>) -> f64 {
        self.set.nearest(x).1
    }

    fn nearest_frame(&self, x: &DVector<f64>) -> &Frame {
        let (i, _) = self.set.nearest(x);
        &self.set.frames[i]
    }
}

impl ConeField for TubeField {
    fn cone_at(&self, x: &DVector<f64>) -> Result<Cone> {
        self.nearest_frame(x).cone(0.0, None)
    }

    fn strict_margin_at(&self, x: &DVector<f64>, d: &DVector<f64>, eps: f64) -> Result<f64> {
        Ok(self.nearest_frame(x).cone(eps_bar(eps), None)?.margin(d))
    }

    fn strict_cone_at(&self, x: &DVector<f64>, eps: f64) -> Result<Option<Cone>> {
        Ok(Some(self.nearest_frame(x).cone(eps_bar(eps), None)?))
    }
}

/// Cone field over the basin: tube cones inside the safe tube, and cones
/// pulled back along the entry trajectory elsewhere.
///
/// At a point `x` with first tube-entry time `tau` and entry point `x0`,
/// the cone is the `e^{tau}`-tightened frame cone at `x0` transported by
/// the inverse variational matrix. The tightening exponent decreases along
/// trajectories exactly as the entry time does, which yields the sampled
/// inclusion property this field is checked against.
#[derive(Debug, Clone)]
pub struct BasinField {
    sys: SystemDef,
    tube: TubeField,
    pub tau_max: f64,
    ode: OdeOptions,
}

/// Entry data of one basin point.
#[derive(Debug, Clone)]
pub struct TubeEntry {
    pub tau: f64,
    pub x0: DVector<f64>,
    /// Variational matrix over the entry leg, `Phi(tau, x)`.
    pub phi: DMatrix<f64>,
}

pub fn basin_field(sys: &SystemDef, tube: TubeField, tau_max: f64, ode: OdeOptions) -> BasinField {
    BasinField {
        sys: sys.clone(),
        tube,
        tau_max,
        ode,
    }
}

impl BasinField {
    pub fn tube(&self) -> &TubeField {
        &self.tube
    }

    /// First-entry data for `x`: zero for points already inside the safe
    /// tube, otherwise located by event bisection on the attractor
    /// distance.
    pub fn entry(&self, x: &DVector<f64>) -> Result<TubeEntry> {
        let dim = self.sys.dim();
        if self.tube.distance_to_attractor(x) <= self.tube.safe_radius {
            return Ok(TubeEntry {
                tau: 0.0,
                x0: x.clone(),
                phi: DMatrix::identity(dim, dim),
            });
        }
        let guard = self.tube.safe_radius;
        let (seg, hit) = flow_event(
            &self.sys,
            x,
            self.tau_max,
            |_t, y| self.tube.distance_to_attractor(y) - guard,
            -1.0,
            1e-10,
            &self.ode,
        )?;
        let tau = hit.ok_or(Error::EntryTimeExceeded {
            tau_max: self.tau_max,
        })?;
        let x0 = seg.state_at(tau);
        let pseg = prolonged_flow(&self.sys, x, &DMatrix::identity(dim, dim), tau, &self.ode)?;
        Ok(TubeEntry {
            tau,
            x0,
            phi: pseg.fundamental_at(tau),
        })
    }

    /// The rho-shifted cone at `x` (`rho = 0` gives the cone field itself,
    /// `rho = -log(1-eps)` the strict field).
    fn shifted_cone_at(&self, x: &DVector<f64>, shift: f64) -> Result<Cone> {
        let entry = self.entry(x)?;
        let frame = self.tube.nearest_frame(&entry.x0);
        if entry.tau == 0.0 {
            frame.cone(shift, None)
        } else {
            frame.cone(entry.tau + shift, Some(&entry.phi))
        }
    }
}

impl ConeField for BasinField {
    fn cone_at(&self, x: &DVector<f64>) -> Result<Cone> {
        self.shifted_cone_at(x, 0.0)
    }

    fn strict_margin_at(&self, x: &DVector<f64>, d: &DVector<f64>, eps: f64) -> Result<f64> {
        Ok(self.shifted_cone_at(x, eps_bar(eps))?.margin(d))
    }

    fn strict_cone_at(&self, x: &DVector<f64>, eps: f64) -> Result<Option<Cone>> {
        Ok(Some(self.shifted_cone_at(x, eps_bar(eps))?))
    }
}

/// Parameters of the end-to-end certification pipeline.
#[derive(Debug, Clone)]
pub struct ConstructParams {
    /// Strict-cone shrink.
    pub eps: f64,
    /// Tube radius `c`.
    pub tube_radius: f64,
    /// Adapted-metric quadrature window.
    pub t_int: f64,
    /// Cap on tube entry times.
    pub tau_max: f64,
    /// Horizons of the final positivity check (ascending).
    pub horizons: Vec<f64>,
    /// Basin sample region.
    pub sampler: BoxSampler,
    /// Boundary rays per checked cone.
    pub rays: usize,
    pub nh: NhOptions,
    pub tube: TubeOptions,
    pub ode: OdeOptions,
}

impl ConstructParams {
    pub fn new(sampler: BoxSampler) -> Self {
        Self {
            eps: 0.1,
            tube_radius: 0.3,
            t_int: 5.0,
            tau_max: 30.0,
            horizons: vec![1.0, 2.0, 4.0],
            sampler,
            rays: 4,
            nh: NhOptions::default(),
            tube: TubeOptions::default(),
            ode: OdeOptions::default(),
        }
    }
}

/// Output of the certification pipeline.
#[derive(Debug)]
pub struct CertificateOutcome {
    pub nh: NHCertificate,
    pub field: BasinField,
    pub report: PositivityReport,
    pub success: bool,
}

/// Run the full pipeline: normal-hyperbolicity certificate, adapted
/// metric, attractor cone field, tube extension, basin field, and the
/// final differential-positivity check over sampled basin points.
///
/// Success requires a positive certificate and zero inclusion violations.
/// Stage failures carry the stage name.
pub fn certificate(
    sys: &SystemDef,
    attractor: &AttractorModel,
    params: &ConstructParams,
) -> Result<CertificateOutcome> {
    let nh =
        verify_normal_hyperbolicity(sys, attractor, &params.nh).map_err(|e| e.at_stage("nh"))?;
    if !nh.verdict {
        return Err(Error::CertificateNegative(format!(
            "lambda1 = {:.4}, lambda2 = {:.4}, margin {:.4} <= {:.4}",
            nh.lambda1, nh.lambda2, nh.margin, nh.threshold
        ))
        .at_stage("nh"));
    }
    // Frame density: arc-length spacing at most c/5.
    let path = attractor
        .path_points()
        .map_err(|e| e.at_stage("adapted-metric"))?;
    let length: f64 = path.windows(2).map(|w| (&w[1].x - &w[0].x).norm()).sum();
    let frame_count =
        ((5.0 * length / params.tube_radius).ceil() as usize + 1).clamp(64, 4096);
    // On a cycle the damped integrands are periodic; a whole number of
    // periods makes the quadrature window close exactly.
    let t_int = match attractor {
        AttractorModel::LimitCycle(c) => {
            c.period * (params.t_int / c.period).round().max(1.0)
        }
        _ => params.t_int,
    };
    let mopts = MetricOptions {
        t_int,
        frame_count,
        ode: params.ode.clone(),
    };
    let frames =
        adapted_metric(sys, attractor, &nh, &mopts).map_err(|e| e.at_stage("adapted-metric"))?;
    let afield =
        attractor_cone_field(&frames, params.eps).map_err(|e| e.at_stage("attractor-field"))?;
    let tube = tube_extension(sys, &afield, params.tube_radius, &params.tube)
        .map_err(|e| e.at_stage("tube"))?;
    let field = basin_field(sys, tube, params.tau_max, params.ode.clone());
    let popts = PositivityOptions {
        ode: params.ode.clone(),
        strict_shrink: params.eps,
        margin_tol: crate::positivity::MARGIN_TOL,
    };
    let report = check_diff_positivity(
        sys,
        &field,
        &params.sampler,
        &params.horizons,
        params.rays,
        &popts,
    );
    let success = report.violation_count() == 0 && !report.samples.is_empty();
    Ok(CertificateOutcome {
        nh,
        field,
        report,
        success,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attractors::{find_fixed_points, trace_arcs};
    use crate::dynsys::builtins;
    use approx::assert_relative_eq;

    fn vec2(a: f64, b: f64) -> DVector<f64> {
        DVector::from_vec(vec![a, b])
    }

    fn grid_seeds(lo: f64, hi: f64, n: usize) -> Vec<DVector<f64>> {
        let mut seeds = Vec::new();
        for i in 0..n {
            for j in 0..n {
                seeds.push(vec2(
                    lo + (hi - lo) * i as f64 / (n - 1) as f64,
                    lo + (hi - lo) * j as f64 / (n - 1) as f64,
                ));
            }
        }
        seeds
    }

    fn bistable_model() -> (SystemDef, AttractorModel) {
        let sys = builtins::bistable4();
        let fps = find_fixed_points(
            &sys,
            &grid_seeds(-2.0, 2.0, 7),
            &vec2(-2.0, -2.0),
            &vec2(2.0, 2.0),
        );
        let arcs = trace_arcs(&sys, &fps).unwrap();
        (
            sys,
            AttractorModel::FixedPointsWithArcs {
                fixed_points: fps,
                arcs,
            },
        )
    }

    fn bistable_frames() -> (SystemDef, AttractorModel, NHCertificate, AttractorFrames) {
        let (sys, model) = bistable_model();
        let nh = verify_normal_hyperbolicity(&sys, &model, &NhOptions::default()).unwrap();
        let frames = adapted_metric(&sys, &model, &nh, &MetricOptions::default()).unwrap();
        (sys, model, nh, frames)
    }

    #[test]
    fn tangent_weight_at_node_matches_closed_form() {
        // At (1, 0): |Phi(t) xi| = e^{-2t} and lambda2 = 2, so the
        // integrand is 1 and the weight equals t_int.
        let (_sys, _model, nh, frames) = bistable_frames();
        assert_relative_eq!(nh.lambda2, 2.0, max_relative = 0.03);
        let f = frames
            .frames
            .iter()
            .min_by(|a, b| {
                (&a.x - vec2(1.0, 0.0))
                    .norm()
                    .partial_cmp(&(&b.x - vec2(1.0, 0.0)).norm())
                    .unwrap()
            })
            .unwrap();
        assert!((&f.x - vec2(1.0, 0.0)).norm() < 1e-6);
        assert_relative_eq!(f.tangent_weight, 5.0, max_relative = 0.02);
    }

    #[test]
    fn normal_one_step_factor_is_unit_prefactor() {
        // The normal rate is exactly -4 everywhere, so the adapted normal
        // weight is constant along the attractor and one step contracts by
        // exactly e^{-4}.
        let (sys, _model, _nh, frames) = bistable_frames();
        let at = |x: &DVector<f64>| {
            frames
                .frames
                .iter()
                .min_by(|a, b| {
                    (&a.x - x).norm().partial_cmp(&(&b.x - x).norm()).unwrap()
                })
                .unwrap()
        };
        let x = vec2(0.5, 0.0);
        let fx = at(&x);
        let seg = prolonged_flow(
            &sys,
            &x,
            &DMatrix::from_columns(&[fx.normal.column(0).clone_owned()]),
            1.0,
            &OdeOptions::default(),
        )
        .unwrap();
        let x1 = seg.final_state();
        let f1 = at(&x1);
        let pushed = seg.final_fundamental().column(0).clone_owned();
        let norm_star = |f: &Frame, v: &DVector<f64>| {
            let coords = &f.basis_inv * v;
            let vn = coords.rows(1, 1).clone_owned();
            (vn.dot(&(&f.normal_weight * &vn))).sqrt()
        };
        let factor =
            norm_star(f1, &pushed) / norm_star(fx, &fx.normal.column(0).clone_owned());
        let e4 = (-4.0f64).exp();
        assert!(factor <= e4 * 1.001, "factor {factor} vs e^-4 = {e4}");
        assert!(factor >= e4 * 0.999);
    }

    #[test]
    fn frame_cones_are_wedges_with_expected_boundary() {
        // 2-D specialization at the node: the cone is
        // { a e1 + v e2 : a w_t >= sqrt(W) |v| }.
        let (_sys, _model, _nh, frames) = bistable_frames();
        let f = frames
            .frames
            .iter()
            .min_by(|a, b| {
                (&a.x - vec2(1.0, 0.0))
                    .norm()
                    .partial_cmp(&(&b.x - vec2(1.0, 0.0)).norm())
                    .unwrap()
            })
            .unwrap();
        let cone = f.cone(0.0, None).unwrap();
        let w_star = f.normal_weight[(0, 0)].sqrt();
        let boundary = &f.xi + f.normal.column(0) * (f.tangent_weight / w_star);
        assert!(
            cone.margin(&boundary).abs() < 1e-9 * boundary.norm(),
            "boundary margin {}",
            cone.margin(&boundary)
        );
        assert!(cone.margin(&f.xi) > 0.0);
        assert!(cone.is_pointed() && cone.is_solid());
    }

    #[test]
    fn strict_cone_limits_to_base_as_eps_vanishes() {
        let (_sys, _model, _nh, frames) = bistable_frames();
        let f = &frames.frames[frames.frames.len() / 2];
        let d = (&f.xi + f.normal.column(0) * 0.1).normalize();
        let base = f.cone(0.0, None).unwrap().margin(&d);
        let tiny = f.cone(eps_bar(1e-9), None).unwrap().margin(&d);
        assert_relative_eq!(base, tiny, epsilon = 1e-7);
    }

    #[test]
    fn rho_cones_are_nested() {
        let (_sys, _model, _nh, frames) = bistable_frames();
        let f = &frames.frames[10];
        let outer = f.cone(0.2, None).unwrap();
        let inner = f.cone(0.5, None).unwrap();
        for ray in inner.boundary_rays(4).unwrap() {
            assert!(
                outer.margin(&ray) > 0.0,
                "inner boundary ray must be strictly inside the outer cone"
            );
        }
    }

    #[test]
    fn quadrature_divergence_is_reported() {
        let (sys, model) = bistable_model();
        let nh = verify_normal_hyperbolicity(&sys, &model, &NhOptions::default()).unwrap();
        // Damping far above the true rates makes the integrand explode.
        let mut bad = nh.clone();
        bad.lambda1 = 12.0;
        let err = adapted_metric(&sys, &model, &bad, &MetricOptions::default()).unwrap_err();
        assert!(matches!(err, Error::QuadratureDiverged(_)), "{err}");
    }

    fn bistable_basin() -> (SystemDef, BasinField) {
        let (sys, model) = bistable_model();
        let nh = verify_normal_hyperbolicity(&sys, &model, &NhOptions::default()).unwrap();
        let mopts = MetricOptions {
            frame_count: 512,
            ..MetricOptions::default()
        };
        let frames = adapted_metric(&sys, &model, &nh, &mopts).unwrap();
        let afield = attractor_cone_field(&frames, 0.1).unwrap();
        let tube = tube_extension(&sys, &afield, 0.3, &TubeOptions::default()).unwrap();
        let field = basin_field(&sys, tube, 30.0, OdeOptions::default());
        (sys, field)
    }

    #[test]
    fn tube_accepts_reasonable_radius_for_bistable() {
        let (_sys, field) = bistable_basin();
        assert!(
            field.tube().safe_radius >= 0.1,
            "rho(c) = {}",
            field.tube().safe_radius
        );
        assert!(field.tube().safe_radius < 0.3);
    }

    #[test]
    fn basin_cone_equals_tube_cone_inside() {
        let (_sys, field) = bistable_basin();
        let x = vec2(0.5, 0.02);
        assert!(field.tube().distance_to_attractor(&x) < field.tube().safe_radius);
        let entry = field.entry(&x).unwrap();
        assert_eq!(entry.tau, 0.0);
        let basin_cone = field.cone_at(&x).unwrap();
        let tube_cone = field.tube().cone_at(&x).unwrap();
        for probe in [vec2(1.0, 0.1), vec2(1.0, 4.0), vec2(0.2, 0.3), vec2(-1.0, 0.0)] {
            assert_eq!(
                basin_cone.margin(&probe) >= 0.0,
                tube_cone.margin(&probe) >= 0.0
            );
        }
    }

    #[test]
    fn entry_times_satisfy_the_semigroup_identity() {
        let (sys, field) = bistable_basin();
        let x = vec2(2.0, 0.5);
        let e0 = field.entry(&x).unwrap();
        assert!(e0.tau > 0.2, "tau = {}", e0.tau);
        let t = (e0.tau * 0.5).min(1.0);
        let seg = flow(&sys, &x, t, &OdeOptions::default()).unwrap();
        let e1 = field.entry(seg.final_state()).unwrap();
        assert!(
            (e1.tau - (e0.tau - t)).abs() < 1e-6,
            "tau(psi^t x) = {} vs tau(x) - t = {}",
            e1.tau,
            e0.tau - t
        );
    }

    #[test]
    fn basin_cones_push_forward_into_themselves() {
        // Sampled inclusion along the trajectory of one basin point.
        let (sys, field) = bistable_basin();
        let x = vec2(2.0, 0.5);
        let tau = field.entry(&x).unwrap().tau;
        let cone_x = field.cone_at(&x).unwrap();
        let rays = cone_x.boundary_rays(4).unwrap();
        let m0 = DMatrix::from_columns(&rays);
        let t_max = tau + 1.0;
        let seg = prolonged_flow(&sys, &x, &m0, t_max, &OdeOptions::default()).unwrap();
        for t in [tau * 0.5, tau, tau + 1.0] {
            let y = seg.state_at(t);
            let cone_y = field.cone_at(&y).unwrap();
            let phi = seg.fundamental_at(t);
            for j in 0..rays.len() {
                let pushed = phi.column(j).normalize();
                let margin = cone_y.margin(&pushed);
                assert!(
                    margin >= -1e-8,
                    "margin {margin} at t = {t} for ray {j} (tau = {tau})"
                );
            }
        }
    }

    #[test]
    fn strict_contraction_beyond_entry_time() {
        // Pushing past tau by the strictness shift lands boundary rays in
        // the strict cone with positive margin.
        let (sys, field) = bistable_basin();
        let x = vec2(1.8, 0.4);
        let tau = field.entry(&x).unwrap().tau;
        let cone_x = field.cone_at(&x).unwrap();
        let rays = cone_x.boundary_rays(4).unwrap();
        let shift = eps_bar(0.1);
        let t = tau + shift + 0.5;
        let seg = prolonged_flow(
            &sys,
            &x,
            &DMatrix::from_columns(&rays),
            t,
            &OdeOptions::default(),
        )
        .unwrap();
        let y = seg.state_at(t);
        let phi = seg.fundamental_at(t);
        for j in 0..rays.len() {
            let pushed = phi.column(j).normalize();
            let strict = field.strict_margin_at(&y, &pushed, 0.1).unwrap();
            assert!(strict > 0.0, "strict margin {strict} for ray {j}");
        }
    }

    #[test]
    fn certificate_succeeds_on_bistable() {
        let (sys, model) = bistable_model();
        let sampler = BoxSampler::new(&[-2.0, -1.5], &[2.0, 1.5], 40, 23);
        let params = ConstructParams::new(sampler);
        let outcome = certificate(&sys, &model, &params).unwrap();
        assert!(
            outcome.success,
            "violations: {:?}, errors: {}",
            outcome.report.violations,
            outcome.report.errors.len()
        );
        assert!(outcome.nh.verdict);
        let rate = outcome.report.lambda_hat.unwrap();
        assert!(rate > 0.3, "lambda-hat = {rate}");
        assert!(outcome.report.t_used.is_some());
    }

    #[test]
    fn certificate_fails_at_nh_stage_for_rotation() {
        let sys = builtins::rot2();
        let mut copts = crate::attractors::CycleOptions::default();
        copts.t_burn = 0.5;
        let cycle =
            crate::attractors::find_limit_cycle(&sys, &vec2(1.0, 0.0), None, &copts).unwrap();
        let model = AttractorModel::LimitCycle(cycle);
        let sampler = BoxSampler::new(&[-2.0, -2.0], &[2.0, 2.0], 10, 3);
        let mut params = ConstructParams::new(sampler);
        params.nh.horizon = 4.0 * std::f64::consts::PI;
        let err = certificate(&sys, &model, &params).unwrap_err();
        match err {
            Error::Stage { stage, .. } => assert_eq!(stage, "nh"),
            other => panic!("expected a staged failure, got {other}"),
        }
    }
}
