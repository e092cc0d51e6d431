//! Cone representations, membership margins, gauges, the Hilbert projective
//! metric, boundary-ray sampling, and transport under invertible linear maps.
//!
//! Three cone variants are supported:
//!
//! - `Orthant`: `{ d : s_i d_i >= 0 }` for a sign pattern `s`;
//! - `Polyhedral`: `{ d : A d >= 0 }` with unit row normals;
//! - `Elliptical`: `{ a xi + N v : a >= 0, sigma a >= |v|_W }` where `xi` is
//!   a unit axis, the columns of `N` are an orthonormal basis of its
//!   orthogonal complement, `W` is SPD on the complement coordinates, and
//!   `sigma` in (0, 1] is a shrink factor.
//!
//! All margins are positively homogeneous of degree one and vanish exactly
//! on the cone boundary, so the same number serves as a membership test and
//! as a quantitative inclusion measure.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::{condition_number, orthogonal_complement, symmetric_eigen};

/// Relative scale below which a gauge denominator counts as zero.
const DENOM_TOL: f64 = 1e-13;
/// Relative membership slack accepted by gauge computations.
const MEMBER_TOL: f64 = 1e-8;

#[derive(Debug, Clone)]
pub enum Cone {
    Orthant {
        signs: Vec<f64>,
    },
    Polyhedral {
        /// Unit row normals; the cone is `{ d : normals * d >= 0 }`.
        normals: DMatrix<f64>,
    },
    Elliptical {
        axis: DVector<f64>,
        /// Orthonormal basis of the axis complement, one column per
        /// transversal direction.
        complement: DMatrix<f64>,
        /// SPD weight on complement coordinates.
        weight: DMatrix<f64>,
        /// Shrink factor sigma in (0, 1].
        shrink: f64,
    },
}

impl Cone {
    /// Orthant with the given sign pattern (entries +1 or -1).
    pub fn orthant(signs: &[f64]) -> Self {
        assert!(signs.iter().all(|&s| s == 1.0 || s == -1.0));
        Cone::Orthant {
            signs: signs.to_vec(),
        }
    }

    /// The nonnegative orthant of R^dim.
    pub fn positive_orthant(dim: usize) -> Self {
        Cone::orthant(&vec![1.0; dim])
    }

    /// Halfspace-intersection cone; rows are normalized internally.
    pub fn polyhedral(normals: DMatrix<f64>) -> Result<Self> {
        if normals.nrows() < normals.ncols() {
            return Err(Error::InvalidCone(
                "polyhedral cone needs at least dim halfspaces".into(),
            ));
        }
        let mut rows = normals;
        for mut r in rows.row_iter_mut() {
            let n = r.norm();
            if n < 1e-14 {
                return Err(Error::InvalidCone("zero halfspace normal".into()));
            }
            r /= n;
        }
        Ok(Cone::Polyhedral { normals: rows })
    }

    /// Elliptical cone about `axis`; the complement basis is constructed
    /// internally.
    pub fn elliptical(axis: &DVector<f64>, weight: &DMatrix<f64>, shrink: f64) -> Result<Self> {
        let norm = axis.norm();
        if norm < 1e-14 {
            return Err(Error::InvalidCone("zero axis".into()));
        }
        let unit = axis / norm;
        let complement = orthogonal_complement(&unit);
        Self::elliptical_with_complement(&unit, &complement, weight, shrink)
    }

    /// Elliptical cone with an explicit orthonormal complement basis.
    pub fn elliptical_with_complement(
        axis: &DVector<f64>,
        complement: &DMatrix<f64>,
        weight: &DMatrix<f64>,
        shrink: f64,
    ) -> Result<Self> {
        let dim = axis.len();
        if complement.nrows() != dim || complement.ncols() != dim - 1 {
            return Err(Error::InvalidCone("complement must be dim x (dim-1)".into()));
        }
        if weight.nrows() != dim - 1 || weight.ncols() != dim - 1 {
            return Err(Error::InvalidCone("weight must act on the complement".into()));
        }
        if !(shrink > 0.0 && shrink <= 1.0) {
            return Err(Error::InvalidCone(format!("shrink {shrink} outside (0, 1]")));
        }
        if (weight - weight.transpose()).norm() > 1e-12 * (1.0 + weight.norm()) {
            return Err(Error::InvalidCone("weight not symmetric".into()));
        }
        let (vals, _) = symmetric_eigen(weight);
        if vals[0] <= 0.0 {
            return Err(Error::InvalidCone("weight not positive definite".into()));
        }
        for j in 0..dim - 1 {
            if complement.column(j).dot(axis).abs() > 1e-10
                || (complement.column(j).norm() - 1.0).abs() > 1e-10
            {
                return Err(Error::InvalidCone("complement basis not orthonormal".into()));
            }
        }
        Ok(Cone::Elliptical {
            axis: axis.normalize(),
            complement: complement.clone(),
            weight: weight.clone(),
            shrink,
        })
    }

    pub fn dim(&self) -> usize {
        match self {
            Cone::Orthant { signs } => signs.len(),
            Cone::Polyhedral { normals } => normals.ncols(),
            Cone::Elliptical { axis, .. } => axis.len(),
        }
    }

    pub fn variant_name(&self) -> &'static str {
        match self {
            Cone::Orthant { .. } => "orthant",
            Cone::Polyhedral { .. } => "polyhedral",
            Cone::Elliptical { .. } => "elliptical",
        }
    }

    /// Signed membership margin: nonnegative iff `d` is in the cone, zero
    /// exactly on the boundary, positively homogeneous of degree one.
    pub fn margin(&self, d: &DVector<f64>) -> f64 {
        match self {
            Cone::Orthant { signs } => signs
                .iter()
                .zip(d.iter())
                .map(|(&s, &v)| s * v)
                .fold(f64::INFINITY, f64::min),
            Cone::Polyhedral { normals } => (normals * d).min(),
            Cone::Elliptical {
                axis,
                complement,
                weight,
                shrink,
            } => {
                let alpha = axis.dot(d);
                let v = complement.transpose() * d;
                let wn = (v.dot(&(weight * &v))).max(0.0).sqrt();
                shrink * alpha - wn
            }
        }
    }

    /// Margin against the strictly interior cone obtained by shrinking.
    ///
    /// For elliptical cones this is the margin of the cone with
    /// `sigma (1 - eps)`; for orthant and polyhedral cones the interior
    /// cone is `{ d : margin(d) >= eps |d| }`.
    pub fn strict_margin(&self, d: &DVector<f64>, eps: f64) -> f64 {
        match self {
            Cone::Elliptical {
                axis,
                complement,
                weight,
                shrink,
            } => {
                let alpha = axis.dot(d);
                let v = complement.transpose() * d;
                let wn = (v.dot(&(weight * &v))).max(0.0).sqrt();
                shrink * (1.0 - eps) * alpha - wn
            }
            _ => self.margin(d) - eps * d.norm(),
        }
    }

    /// The shrunk cone itself, when representable in the same family.
    ///
    /// Elliptical cones shrink exactly (`sigma -> sigma (1 - eps)`). Planar
    /// orthant/polyhedral wedges shrink by tilting the two normals inward by
    /// `asin(eps)`. Higher-dimensional polyhedral shrinks are not
    /// representable and yield `None`.
    pub fn shrunk(&self, eps: f64) -> Option<Cone> {
        match self {
            Cone::Elliptical {
                axis,
                complement,
                weight,
                shrink,
            } => Some(Cone::Elliptical {
                axis: axis.clone(),
                complement: complement.clone(),
                weight: weight.clone(),
                shrink: shrink * (1.0 - eps),
            }),
            Cone::Orthant { signs } if signs.len() == 2 => {
                let normals = DMatrix::from_row_slice(2, 2, &[signs[0], 0.0, 0.0, signs[1]]);
                Cone::Polyhedral { normals }.shrunk(eps)
            }
            Cone::Polyhedral { normals } if normals.ncols() == 2 => {
                let interior = self.interior_ray()?;
                let theta = eps.asin();
                let mut out = normals.clone();
                for i in 0..normals.nrows() {
                    let a = normals.row(i).transpose();
                    let rot = |t: f64| {
                        DVector::from_vec(vec![
                            t.cos() * a[0] - t.sin() * a[1],
                            t.sin() * a[0] + t.cos() * a[1],
                        ])
                    };
                    let plus = rot(theta);
                    let minus = rot(-theta);
                    // Tilting away from the interior ray cuts off the old
                    // boundary ray on this row's hyperplane.
                    let pick = if plus.dot(&interior) < minus.dot(&interior) {
                        plus
                    } else {
                        minus
                    };
                    out.row_mut(i).copy_from(&pick.transpose());
                }
                Some(Cone::Polyhedral { normals: out })
            }
            _ => None,
        }
    }

    /// A deterministic interior ray, unit norm.
    pub fn interior_ray(&self) -> Option<DVector<f64>> {
        match self {
            Cone::Orthant { signs } => {
                Some(DVector::from_iterator(signs.len(), signs.iter().copied()).normalize())
            }
            Cone::Polyhedral { normals } => {
                // Sum of row normals works for every salient wedge; fall
                // back to a deterministic scan if it does not.
                let mut cand = DVector::zeros(normals.ncols());
                for r in normals.row_iter() {
                    cand += r.transpose();
                }
                if cand.norm() > 1e-12 && self.margin(&cand.normalize()) > 0.0 {
                    return Some(cand.normalize());
                }
                let mut rng = ChaCha8Rng::seed_from_u64(0x1dea);
                for _ in 0..4096 {
                    let v = crate::sample::random_unit_vector(&mut rng, normals.ncols());
                    if self.margin(&v) > 1e-6 {
                        return Some(v);
                    }
                }
                None
            }
            Cone::Elliptical { axis, .. } => Some(axis.clone()),
        }
    }

    /// Pointedness: `K ∩ -K = {0}`.
    ///
    /// Exact for orthants and elliptical cones (by construction), and for
    /// polyhedral cones via the rank of the normal matrix.
    pub fn is_pointed(&self) -> bool {
        match self {
            Cone::Orthant { .. } => true,
            Cone::Elliptical { .. } => true,
            Cone::Polyhedral { normals } => {
                let svd = normals.clone().svd(false, false);
                let smax = svd.singular_values.max();
                svd.singular_values
                    .iter()
                    .filter(|&&s| s > 1e-12 * smax)
                    .count()
                    == normals.ncols()
            }
        }
    }

    /// Solidity (nonempty interior), certified by an explicit interior ray.
    pub fn is_solid(&self) -> bool {
        self.interior_ray()
            .map(|r| self.margin(&r) > 0.0)
            .unwrap_or(false)
    }

    /// `k` unit rays on the cone boundary.
    ///
    /// In the plane the boundary of a wedge is exactly two rays, which are
    /// returned regardless of `k >= 2`. Elliptical cones in dimension >= 3
    /// return a ring of `k` rays around the axis. Polyhedral boundaries in
    /// dimension >= 3 are unsupported.
    pub fn boundary_rays(&self, k: usize) -> Result<Vec<DVector<f64>>> {
        let dim = self.dim();
        assert!(k >= 2, "need at least two boundary rays");
        match self {
            Cone::Orthant { signs } => {
                if dim == 2 {
                    let mut rays = Vec::with_capacity(2);
                    for i in 0..2 {
                        let mut r = DVector::zeros(2);
                        r[i] = signs[i];
                        rays.push(r);
                    }
                    return Ok(rays);
                }
                // One coordinate pinned to a facet, the rest strictly inside.
                let mut rng = ChaCha8Rng::seed_from_u64(0x0c0e);
                let mut rays = Vec::with_capacity(k);
                for j in 0..k {
                    let facet = j % dim;
                    let mut r = DVector::from_iterator(
                        dim,
                        (0..dim).map(|i| signs[i] * rng.gen_range(0.2..1.0)),
                    );
                    r[facet] = 0.0;
                    rays.push(r.normalize());
                }
                Ok(rays)
            }
            Cone::Polyhedral { normals } => {
                if dim != 2 {
                    return Err(Error::UnsupportedBoundary {
                        variant: "polyhedral",
                        dim,
                    });
                }
                let mut rays: Vec<DVector<f64>> = Vec::new();
                for i in 0..normals.nrows() {
                    let a = normals.row(i);
                    for cand in [
                        DVector::from_vec(vec![-a[1], a[0]]),
                        DVector::from_vec(vec![a[1], -a[0]]),
                    ] {
                        if self.margin(&cand) > -1e-12
                            && !rays.iter().any(|r| (r - &cand).norm() < 1e-10)
                        {
                            rays.push(cand);
                        }
                    }
                }
                if rays.len() != 2 {
                    return Err(Error::InvalidCone(format!(
                        "expected 2 extreme rays, found {}",
                        rays.len()
                    )));
                }
                Ok(rays)
            }
            Cone::Elliptical {
                axis,
                complement,
                weight,
                shrink,
            } => {
                // Directions on the W-unit sphere of the complement, lifted
                // so that sigma * alpha = |v|_W.
                let m = dim - 1;
                let (vals, vecs) = symmetric_eigen(weight);
                let w_inv_sqrt = &vecs
                    * DMatrix::from_diagonal(&vals.map(|v| 1.0 / v.sqrt()))
                    * vecs.transpose();
                let dirs: Vec<DVector<f64>> = if m == 1 {
                    vec![DVector::from_vec(vec![1.0]), DVector::from_vec(vec![-1.0])]
                } else if m == 2 {
                    (0..k)
                        .map(|j| {
                            let th = 2.0 * std::f64::consts::PI * j as f64 / k as f64;
                            DVector::from_vec(vec![th.cos(), th.sin()])
                        })
                        .collect()
                } else {
                    let mut rng = ChaCha8Rng::seed_from_u64(0xe111);
                    (0..k)
                        .map(|_| crate::sample::random_unit_vector(&mut rng, m))
                        .collect()
                };
                Ok(dirs
                    .into_iter()
                    .map(|u| {
                        let v = &w_inv_sqrt * u;
                        let ray = axis / *shrink + complement * v;
                        ray.normalize()
                    })
                    .collect())
            }
        }
    }

    /// Elliptical cone `{ d : d' Q d <= 0, <d, dir> half-space }` from a
    /// symmetric quadratic form with inertia (n-1 positive, 1 negative).
    ///
    /// The negative eigendirection becomes the axis, sign-matched to
    /// `positive_direction`; the positive eigenvalues, scaled by the
    /// negative one, become the weight.
    pub fn from_quadratic(q: &DMatrix<f64>, positive_direction: &DVector<f64>) -> Result<Cone> {
        let dim = q.nrows();
        let sym = (q + q.transpose()) * 0.5;
        let (vals, vecs) = symmetric_eigen(&sym);
        if vals[0] >= 0.0 || vals[1] <= 0.0 {
            return Err(Error::InvalidCone(
                "quadratic form does not have (n-1, 1) inertia".into(),
            ));
        }
        let mut axis = vecs.column(0).clone_owned();
        if axis.dot(positive_direction) < 0.0 {
            axis = -axis;
        }
        let complement = DMatrix::from_columns(
            &(1..dim)
                .map(|j| vecs.column(j).clone_owned())
                .collect::<Vec<_>>(),
        );
        let weight = DMatrix::from_diagonal(&DVector::from_iterator(
            dim - 1,
            (1..dim).map(|j| vals[j] / -vals[0]),
        ));
        Cone::elliptical_with_complement(&axis, &complement, &weight, 1.0)
    }

    /// The quadratic form of an elliptical cone: membership is
    /// `d' Q d <= 0` on the axis-positive side.
    pub fn quadratic_form(&self) -> Option<DMatrix<f64>> {
        match self {
            Cone::Elliptical {
                axis,
                complement,
                weight,
                shrink,
            } => Some(
                complement * weight * complement.transpose()
                    - axis * axis.transpose() * (shrink * shrink),
            ),
            _ => None,
        }
    }

    /// Image cone `{ G d : d in K }` with membership preserved exactly.
    ///
    /// Orthant and polyhedral cones map to polyhedral cones with normals
    /// `A G^{-1}`. Elliptical cones are transported through their quadratic
    /// form: the pulled-back form `G^{-T} (N W N^T - s^2 xi xi^T) G^{-1}` is
    /// re-diagonalized and its single negative eigendirection becomes the
    /// new axis (sign-matched to `G xi`).
    pub fn transport(&self, g: &DMatrix<f64>) -> Result<Cone> {
        let dim = self.dim();
        assert_eq!(g.nrows(), dim);
        assert_eq!(g.ncols(), dim);
        let cond = condition_number(g);
        if !cond.is_finite() || cond > 1e14 {
            return Err(Error::SingularTransport { cond });
        }
        let g_inv = g
            .clone()
            .try_inverse()
            .ok_or(Error::SingularTransport { cond })?;
        match self {
            Cone::Orthant { signs } => {
                let a = DMatrix::from_diagonal(&DVector::from_iterator(
                    dim,
                    signs.iter().copied(),
                ));
                Cone::polyhedral(a * &g_inv)
            }
            Cone::Polyhedral { normals } => Cone::polyhedral(normals * &g_inv),
            Cone::Elliptical { axis, .. } => {
                let q = self.quadratic_form().unwrap();
                let pulled = g_inv.transpose() * q * &g_inv;
                Cone::from_quadratic(&pulled, &(g * axis))
            }
        }
    }
}

/// Oscillation gauges `M` and `m` of a pair of cone vectors.
///
/// `M = inf { l >= 0 : l dy - dx in K }` (infinity when the set is empty)
/// and `m = sup { l >= 0 : dx - l dy in K }`; always `0 <= m <= M`.
pub fn gauges(cone: &Cone, dx: &DVector<f64>, dy: &DVector<f64>) -> Result<(f64, f64)> {
    let nx = dx.norm();
    let ny = dy.norm();
    if nx < 1e-300 || ny < 1e-300 {
        return Err(Error::DegenerateGauge("zero ray".into()));
    }
    let mx = cone.margin(dx);
    let my = cone.margin(dy);
    if mx < -MEMBER_TOL * nx {
        return Err(Error::NotInCone { margin: mx });
    }
    if my < -MEMBER_TOL * ny {
        return Err(Error::NotInCone { margin: my });
    }
    let m_up = gauge_upper(cone, dx, dy);
    let rev = gauge_upper(cone, dy, dx);
    let m_low = if rev.is_infinite() {
        0.0
    } else if rev <= 0.0 {
        f64::INFINITY
    } else {
        1.0 / rev
    };
    Ok((m_up, m_low))
}

/// `inf { l >= 0 : l dy - dx in K }` by closed form.
fn gauge_upper(cone: &Cone, dx: &DVector<f64>, dy: &DVector<f64>) -> f64 {
    match cone {
        Cone::Orthant { .. } | Cone::Polyhedral { .. } => {
            let (ax, ay): (DVector<f64>, DVector<f64>) = match cone {
                Cone::Orthant { signs } => (
                    DVector::from_iterator(
                        signs.len(),
                        signs.iter().zip(dx.iter()).map(|(&s, &v)| s * v),
                    ),
                    DVector::from_iterator(
                        signs.len(),
                        signs.iter().zip(dy.iter()).map(|(&s, &v)| s * v),
                    ),
                ),
                Cone::Polyhedral { normals } => (normals * dx, normals * dy),
                _ => unreachable!(),
            };
            let scale_x = dx.norm();
            let scale_y = dy.norm();
            let mut best = 0.0f64;
            for i in 0..ax.len() {
                if ay[i] > DENOM_TOL * scale_y {
                    best = best.max(ax[i] / ay[i]);
                } else if ax[i] > DENOM_TOL * scale_x {
                    // Row annihilates dy but not dx: no finite multiple of
                    // dy dominates dx.
                    return f64::INFINITY;
                }
            }
            best
        }
        Cone::Elliptical {
            axis,
            complement,
            weight,
            shrink,
        } => {
            let s = *shrink;
            let ax = axis.dot(dx);
            let ay = axis.dot(dy);
            let vx = complement.transpose() * dx;
            let vy = complement.transpose() * dy;
            let wyy = vy.dot(&(weight * &vy));
            let wxy = vx.dot(&(weight * &vy));
            let wxx = vx.dot(&(weight * &vx));
            let margin_y = s * ay - wyy.max(0.0).sqrt();
            if margin_y <= DENOM_TOL * dy.norm() {
                // dy on the boundary: only a collinear dx has a finite gauge.
                let cross = (dx / dx.norm() - dy / dy.norm()).norm();
                if cross < 1e-12 {
                    return ax / ay;
                }
                return f64::INFINITY;
            }
            let a = s * s * ay * ay - wyy;
            let b = -2.0 * s * s * ax * ay + 2.0 * wxy;
            let c = s * s * ax * ax - wxx;
            let disc = (b * b - 4.0 * a * c).max(0.0);
            (-b + disc.sqrt()) / (2.0 * a)
        }
    }
}

/// Gauges by bisection on the membership margin; the independent fallback
/// the closed forms are verified against.
pub fn gauges_bisection(cone: &Cone, dx: &DVector<f64>, dy: &DVector<f64>) -> Result<(f64, f64)> {
    let upper = |dx: &DVector<f64>, dy: &DVector<f64>| -> f64 {
        let inside = |l: f64| cone.margin(&(dy * l - dx)) >= 0.0;
        let mut hi = 1.0;
        let mut grow = 0;
        while !inside(hi) {
            hi *= 2.0;
            grow += 1;
            if grow > 200 {
                return f64::INFINITY;
            }
        }
        let mut lo = 0.0;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if inside(mid) {
                hi = mid;
            } else {
                lo = mid;
            }
            if hi - lo <= 1e-15 * hi {
                break;
            }
        }
        0.5 * (lo + hi)
    };
    let nx = dx.norm();
    let ny = dy.norm();
    if nx < 1e-300 || ny < 1e-300 {
        return Err(Error::DegenerateGauge("zero ray".into()));
    }
    let m_up = upper(dx, dy);
    let rev = upper(dy, dx);
    let m_low = if rev.is_infinite() {
        0.0
    } else if rev <= 0.0 {
        f64::INFINITY
    } else {
        1.0 / rev
    };
    Ok((m_up, m_low))
}

/// Hilbert projective distance `log(M / m)` between two rays of a cone.
///
/// Returns `+inf` when either gauge degenerates (a ray on the boundary
/// against one not collinear with it); `0` iff the rays coincide.
pub fn hilbert_distance(cone: &Cone, dx: &DVector<f64>, dy: &DVector<f64>) -> Result<f64> {
    let (m_up, m_low) = gauges(cone, dx, dy)?;
    if !m_up.is_finite() || m_low == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok((m_up / m_low).ln().max(0.0))
}

/// Assignment of a cone to every point of the state space.
///
/// Evaluators must be pure and deterministic; fields are shared across
/// threads by the batch checks.
pub trait ConeField: Send + Sync {
    fn cone_at(&self, x: &DVector<f64>) -> Result<Cone>;

    /// Margin of `d` against the strictly interior cone at `x`.
    ///
    /// The default shrinks the cone returned by [`ConeField::cone_at`];
    /// constructed basin fields override this with their exact tightened
    /// cones.
    fn strict_margin_at(&self, x: &DVector<f64>, d: &DVector<f64>, eps: f64) -> Result<f64> {
        Ok(self.cone_at(x)?.strict_margin(d, eps))
    }

    /// The strictly interior cone at `x`, when representable.
    fn strict_cone_at(&self, x: &DVector<f64>, eps: f64) -> Result<Option<Cone>> {
        Ok(self.cone_at(x)?.shrunk(eps))
    }
}

impl<T: ConeField + ?Sized> ConeField for &T {
    fn cone_at(&self, x: &DVector<f64>) -> Result<Cone> {
        (**self).cone_at(x)
    }

    fn strict_margin_at(&self, x: &DVector<f64>, d: &DVector<f64>, eps: f64) -> Result<f64> {
        (**self).strict_margin_at(x, d, eps)
    }

    fn strict_cone_at(&self, x: &DVector<f64>, eps: f64) -> Result<Option<Cone>> {
        (**self).strict_cone_at(x, eps)
    }
}

/// The same cone everywhere.
#[derive(Debug, Clone)]
pub struct ConstantField(pub Cone);

impl ConeField for ConstantField {
    fn cone_at(&self, _x: &DVector<f64>) -> Result<Cone> {
        Ok(self.0.clone())
    }
}

/// Nearest-neighbor lookup into a finite table of cones.
#[derive(Debug, Clone)]
pub struct TabulatedField {
    points: Vec<DVector<f64>>,
    cones: Vec<Cone>,
}

impl TabulatedField {
    pub fn new(points: Vec<DVector<f64>>, cones: Vec<Cone>) -> Self {
        assert_eq!(points.len(), cones.len());
        assert!(!points.is_empty());
        Self { points, cones }
    }

    pub fn nearest_index(&self, x: &DVector<f64>) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, p) in self.points.iter().enumerate() {
            let d = (p - x).norm();
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        best
    }

    pub fn points(&self) -> &[DVector<f64>] {
        &self.points
    }

    pub fn cones(&self) -> &[Cone] {
        &self.cones
    }
}

impl ConeField for TabulatedField {
    fn cone_at(&self, x: &DVector<f64>) -> Result<Cone> {
        Ok(self.cones[self.nearest_index(x)].clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn vec2(a: f64, b: f64) -> DVector<f64> {
        DVector::from_vec(vec![a, b])
    }

    #[test]
    fn orthant_margins() {
        let k = Cone::positive_orthant(2);
        assert!(k.margin(&vec2(1.0, 1.0)) > 0.0);
        assert!(k.margin(&vec2(1.0, -1.0)) < 0.0);
        assert_eq!(k.margin(&vec2(1.0, 0.0)), 0.0);
    }

    #[test]
    fn elliptical_boundary_margin_is_zero() {
        let k = Cone::elliptical(&vec2(1.0, 0.0), &DMatrix::identity(1, 1), 1.0).unwrap();
        assert_relative_eq!(k.margin(&vec2(1.0, 1.0)), 0.0, epsilon = 1e-14);
        assert!(k.margin(&vec2(1.0, 0.5)) > 0.0);
        assert!(k.margin(&vec2(1.0, 1.5)) < 0.0);
        assert!(k.margin(&vec2(-1.0, 0.0)) < 0.0);
    }

    #[test]
    fn margin_is_homogeneous() {
        let k = Cone::elliptical(&vec2(3.0, 1.0), &DMatrix::identity(1, 1), 0.8).unwrap();
        let d = vec2(0.9, 0.4);
        assert_relative_eq!(k.margin(&(d.clone() * 7.0)), 7.0 * k.margin(&d), epsilon = 1e-12);
    }

    #[test]
    fn orthant_gauges_componentwise() {
        let k = Cone::positive_orthant(2);
        let (m_up, m_low) = gauges(&k, &vec2(2.0, 1.0), &vec2(1.0, 1.0)).unwrap();
        assert_eq!(m_up, 2.0);
        assert_eq!(m_low, 1.0);
    }

    #[test]
    fn identical_rays_have_unit_gauges() {
        for cone in [
            Cone::positive_orthant(2),
            Cone::elliptical(&vec2(1.0, 0.0), &DMatrix::identity(1, 1), 0.7).unwrap(),
        ] {
            let d = vec2(1.0, 0.3);
            let (m_up, m_low) = gauges(&cone, &d, &d).unwrap();
            assert_relative_eq!(m_up, 1.0, epsilon = 1e-12);
            assert_relative_eq!(m_low, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn boundary_partner_gives_infinite_gauge() {
        let k = Cone::positive_orthant(2);
        let (m_up, _) = gauges(&k, &vec2(1.0, 1.0), &vec2(1.0, 0.0)).unwrap();
        assert!(m_up.is_infinite());
        let h = hilbert_distance(&k, &vec2(1.0, 1.0), &vec2(1.0, 0.0)).unwrap();
        assert!(h.is_infinite());
    }

    #[test]
    fn hilbert_log2_and_projective_invariance() {
        let k = Cone::positive_orthant(2);
        let h = hilbert_distance(&k, &vec2(2.0, 1.0), &vec2(1.0, 1.0)).unwrap();
        assert_relative_eq!(h, 2.0f64.ln(), epsilon = 1e-15);
        let h2 =
            hilbert_distance(&k, &(vec2(2.0, 1.0) * 13.0), &(vec2(1.0, 1.0) * 0.07)).unwrap();
        assert_relative_eq!(h, h2, epsilon = 1e-12);
        let h0 = hilbert_distance(&k, &vec2(1.0, 1.0), &vec2(3.0, 3.0)).unwrap();
        assert_relative_eq!(h0, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn hilbert_symmetry_and_triangle() {
        let k = Cone::elliptical(&vec2(1.0, 0.1), &DMatrix::from_row_slice(1, 1, &[1.4]), 0.95)
            .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut checked = 0;
        while checked < 200 {
            let pick = |rng: &mut ChaCha8Rng| {
                let v = crate::sample::random_unit_vector(rng, 2);
                v * rng.gen_range(0.2..4.0)
            };
            let (a, b, c) = (pick(&mut rng), pick(&mut rng), pick(&mut rng));
            if k.margin(&a) < 1e-6 || k.margin(&b) < 1e-6 || k.margin(&c) < 1e-6 {
                continue;
            }
            let hab = hilbert_distance(&k, &a, &b).unwrap();
            let hba = hilbert_distance(&k, &b, &a).unwrap();
            let hac = hilbert_distance(&k, &a, &c).unwrap();
            let hbc = hilbert_distance(&k, &b, &c).unwrap();
            assert!((hab - hba).abs() < 1e-10, "symmetry violated: {hab} vs {hba}");
            assert!(hac <= hab + hbc + 1e-9, "triangle violated");
            checked += 1;
        }
    }

    #[test]
    fn elliptical_gauges_match_bisection() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let w = DMatrix::from_row_slice(1, 1, &[1.7]);
        let k = Cone::elliptical(&vec2(1.0, 0.4), &w, 0.9).unwrap();
        let axis = match &k {
            Cone::Elliptical { axis, .. } => axis.clone(),
            _ => unreachable!(),
        };
        for _ in 0..200 {
            let mk = |rng: &mut ChaCha8Rng| {
                let t: f64 = rng.gen_range(-0.5..0.5);
                let mut d = axis.clone();
                d[1] += t;
                d * rng.gen_range(0.1..3.0)
            };
            let dx = mk(&mut rng);
            let dy = mk(&mut rng);
            if k.margin(&dx) <= 1e-9 || k.margin(&dy) <= 1e-9 {
                continue;
            }
            let (m1, l1) = gauges(&k, &dx, &dy).unwrap();
            let (m2, l2) = gauges_bisection(&k, &dx, &dy).unwrap();
            assert_relative_eq!(m1, m2, max_relative = 1e-9);
            assert_relative_eq!(l1, l2, max_relative = 1e-9);
        }
    }

    #[test]
    fn boundary_rays_orthant_and_elliptical() {
        let k = Cone::positive_orthant(2);
        let rays = k.boundary_rays(2).unwrap();
        assert_eq!(rays.len(), 2);
        assert!(rays.iter().any(|r| (r - vec2(1.0, 0.0)).norm() < 1e-14));
        assert!(rays.iter().any(|r| (r - vec2(0.0, 1.0)).norm() < 1e-14));

        let e = Cone::elliptical(&vec2(1.0, 0.0), &DMatrix::identity(1, 1), 1.0).unwrap();
        let rays = e.boundary_rays(2).unwrap();
        let s = 1.0 / 2.0f64.sqrt();
        assert!(rays.iter().any(|r| (r - vec2(s, s)).norm() < 1e-12));
        assert!(rays.iter().any(|r| (r - vec2(s, -s)).norm() < 1e-12));

        let shrunk = Cone::elliptical(&vec2(1.0, 0.0), &DMatrix::identity(1, 1), 0.9).unwrap();
        let rays = shrunk.boundary_rays(2).unwrap();
        let expect = vec2(1.0, 0.9).normalize();
        assert!(rays.iter().any(|r| (r - &expect).norm() < 1e-12));
        for r in &rays {
            assert!(shrunk.margin(r).abs() < 1e-10);
        }
    }

    #[test]
    fn boundary_rays_three_dimensional_ring() {
        let axis = DVector::from_vec(vec![1.0, 0.0, 0.0]);
        let w = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let k = Cone::elliptical(&axis, &w, 0.8).unwrap();
        let rays = k.boundary_rays(16).unwrap();
        assert_eq!(rays.len(), 16);
        for r in &rays {
            assert!(k.margin(r).abs() < 1e-10, "margin {}", k.margin(r));
            assert_relative_eq!(r.norm(), 1.0, epsilon = 1e-12);
        }
        let o = Cone::positive_orthant(3);
        for r in o.boundary_rays(9).unwrap() {
            assert!(o.margin(&r).abs() < 1e-12);
        }
        let p = Cone::polyhedral(DMatrix::identity(3, 3)).unwrap();
        assert!(matches!(
            p.boundary_rays(4),
            Err(Error::UnsupportedBoundary { .. })
        ));
    }

    #[test]
    fn transport_identity_and_diagonal() {
        let k = Cone::positive_orthant(2);
        let id = k.transport(&DMatrix::identity(2, 2)).unwrap();
        let diag = k
            .transport(&DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 3.0]))
            .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..500 {
            let d = crate::sample::random_unit_vector(&mut rng, 2);
            assert_eq!(k.margin(&d) >= 0.0, id.margin(&d) >= 0.0);
            // Positive diagonal maps preserve the orthant as a set.
            assert_eq!(k.margin(&d) >= 0.0, diag.margin(&d) >= 0.0);
        }
    }

    #[test]
    fn transport_rotation_of_orthant() {
        let k = Cone::positive_orthant(2);
        let th = std::f64::consts::FRAC_PI_4;
        let rot = DMatrix::from_row_slice(2, 2, &[th.cos(), -th.sin(), th.sin(), th.cos()]);
        let t = k.transport(&rot).unwrap();
        // The extreme ray (1,0) maps onto the rotated boundary.
        let image = &rot * vec2(1.0, 0.0);
        assert!(t.margin(&image).abs() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..1000 {
            let d = crate::sample::random_unit_vector(&mut rng, 2) * rng.gen_range(0.1..10.0);
            let inside = k.margin(&d) >= 0.0;
            let mapped = t.margin(&(&rot * &d)) >= 0.0;
            assert_eq!(inside, mapped);
        }
    }

    #[test]
    fn transport_elliptical_membership_equivalence() {
        let w = DMatrix::from_row_slice(1, 1, &[2.5]);
        let k = Cone::elliptical(&vec2(2.0, 1.0), &w, 0.85).unwrap();
        let g = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]); // shear
        let t = k.transport(&g).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..1000 {
            let d = crate::sample::random_unit_vector(&mut rng, 2) * rng.gen_range(0.1..10.0);
            let inside = k.margin(&d) >= 1e-12;
            let outside = k.margin(&d) <= -1e-12;
            let mapped_margin = t.margin(&(&g * &d));
            if inside {
                assert!(mapped_margin >= 0.0, "interior point left the image cone");
            }
            if outside {
                assert!(mapped_margin <= 0.0, "exterior point entered the image cone");
            }
        }
        assert!(matches!(
            k.transport(&DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0])),
            Err(Error::SingularTransport { .. })
        ));
    }

    #[test]
    fn pointedness_and_solidity() {
        assert!(Cone::positive_orthant(3).is_pointed());
        assert!(Cone::positive_orthant(3).is_solid());
        // x >= 0 and x <= 0 is a line in the plane, not pointed.
        let half = Cone::polyhedral(DMatrix::from_row_slice(2, 2, &[1.0, 0.0, -1.0, 0.0]));
        assert!(!half.unwrap().is_pointed());
        let e = Cone::elliptical(&vec2(1.0, 0.0), &DMatrix::identity(1, 1), 1.0).unwrap();
        assert!(e.is_pointed() && e.is_solid());
    }

    #[test]
    fn convexity_spot_check() {
        let k = Cone::elliptical(&vec2(1.0, 0.2), &DMatrix::from_row_slice(1, 1, &[1.3]), 0.9)
            .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut tried = 0;
        while tried < 300 {
            let a = crate::sample::random_unit_vector(&mut rng, 2);
            let b = crate::sample::random_unit_vector(&mut rng, 2);
            if k.margin(&a) >= 0.0 && k.margin(&b) >= 0.0 {
                assert!(k.margin(&(a + b)) >= -1e-12);
                tried += 1;
            }
        }
    }

    #[test]
    fn strict_margin_shrinks_the_cone() {
        let k = Cone::elliptical(&vec2(1.0, 0.0), &DMatrix::identity(1, 1), 1.0).unwrap();
        let boundary = vec2(1.0, 1.0);
        assert!(k.margin(&boundary).abs() < 1e-14);
        assert!(k.strict_margin(&boundary, 0.1) < 0.0);
        let interior = vec2(1.0, 0.2);
        assert!(k.strict_margin(&interior, 0.1) > 0.0);
        let o = Cone::positive_orthant(2);
        assert!(o.strict_margin(&vec2(1.0, 0.0), 0.1) < 0.0);
        let r = o.shrunk(0.1).unwrap();
        assert!(r.margin(&vec2(1.0, 0.0)) < 0.0);
        assert!(r.margin(&vec2(1.0, 1.0)) > 0.0);
    }

    #[test]
    fn shrunk_cone_limits_to_original() {
        let k = Cone::elliptical(&vec2(1.0, 0.0), &DMatrix::identity(1, 1), 0.8).unwrap();
        let d = vec2(1.0, 0.79);
        let m0 = k.margin(&d);
        let m_eps = k.shrunk(1e-9).unwrap().margin(&d);
        assert_relative_eq!(m0, m_eps, epsilon = 1e-8);
    }

    #[test]
    fn tabulated_field_picks_nearest() {
        let k1 = Cone::positive_orthant(2);
        let k2 = Cone::orthant(&[-1.0, 1.0]);
        let field = TabulatedField::new(vec![vec2(0.0, 0.0), vec2(10.0, 0.0)], vec![k1, k2]);
        let c = field.cone_at(&vec2(9.0, 1.0)).unwrap();
        assert!(matches!(c, Cone::Orthant { ref signs } if signs[0] == -1.0));
    }
}
