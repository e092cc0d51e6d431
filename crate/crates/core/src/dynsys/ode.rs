//! Adaptive Dormand-Prince 5(4) integration with dense output.
//!
//! One engine drives plain flows, prolonged (variational) flows, event
//! location, and integration of the variational equation along a stored
//! trajectory. Dense output is the order-4 continuous extension of DOPRI5,
//! so any time inside the computed span can be queried without re-stepping.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::GAUSS5;

use super::SystemDef;

// Dormand-Prince 5(4) tableau.
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
// b - bhat, for the embedded order-4 error estimate.
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
// Dense-output coefficients (Hairer, Norsett & Wanner).
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

/// Integration options. Tolerances apply componentwise as
/// `abs_tol + rel_tol * |y|`.
#[derive(Debug, Clone)]
pub struct OdeOptions {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_steps: usize,
    /// Error out when the state norm exceeds this bound.
    pub overflow_guard: f64,
}

impl Default for OdeOptions {
    fn default() -> Self {
        Self {
            abs_tol: 1e-9,
            rel_tol: 1e-9,
            max_steps: 5_000_000,
            overflow_guard: 1e12,
        }
    }
}

impl OdeOptions {
    pub fn with_tol(tol: f64) -> Self {
        Self {
            abs_tol: tol,
            rel_tol: tol,
            ..Self::default()
        }
    }
}

/// One accepted step with its quartic interpolant.
#[derive(Debug, Clone)]
struct DenseStep {
    t0: f64,
    h: f64,
    rcont: [DVector<f64>; 5],
}

impl DenseStep {
    fn eval(&self, t: f64) -> DVector<f64> {
        let theta = ((t - self.t0) / self.h).clamp(0.0, 1.0);
        let theta1 = 1.0 - theta;
        let [r1, r2, r3, r4, r5] = &self.rcont;
        r1 + (r2 + (r3 + (r4 + r5 * theta1) * theta) * theta1) * theta
    }
}

/// Piecewise-polynomial solution over a time span starting at 0.
#[derive(Debug, Clone)]
struct DenseSolution {
    times: Vec<f64>,
    states: Vec<DVector<f64>>,
    steps: Vec<DenseStep>,
    dir: f64,
}

impl DenseSolution {
    fn single_point(z0: DVector<f64>) -> Self {
        Self {
            times: vec![0.0],
            states: vec![z0],
            steps: Vec::new(),
            dir: 1.0,
        }
    }

    fn t_end(&self) -> f64 {
        *self.times.last().unwrap()
    }

    fn eval(&self, t: f64) -> DVector<f64> {
        if self.steps.is_empty() {
            return self.states[0].clone();
        }
        let span = self.t_end();
        let slack = 1e-9 * (1.0 + span.abs());
        debug_assert!(
            (self.dir > 0.0 && t >= -slack && t <= span + slack)
                || (self.dir < 0.0 && t <= slack && t >= span - slack),
            "dense query t = {t} outside span [0, {span}]"
        );
        // Binary search over signed times.
        let key = t * self.dir;
        let mut lo = 0usize;
        let mut hi = self.steps.len() - 1;
        while lo < hi {
            let mid = (lo + hi) / 2;
            if self.times[mid + 1] * self.dir < key {
                lo = mid + 1;
            } else {
                hi = mid;
            }
        }
        self.steps[lo].eval(t)
    }

    /// Keep only components `range` of every stored vector.
    fn project(&self, offset: usize, len: usize) -> DenseSolution {
        let take = |v: &DVector<f64>| v.rows(offset, len).clone_owned();
        DenseSolution {
            times: self.times.clone(),
            states: self.states.iter().map(take).collect(),
            steps: self
                .steps
                .iter()
                .map(|s| DenseStep {
                    t0: s.t0,
                    h: s.h,
                    rcont: [
                        take(&s.rcont[0]),
                        take(&s.rcont[1]),
                        take(&s.rcont[2]),
                        take(&s.rcont[3]),
                        take(&s.rcont[4]),
                    ],
                })
                .collect(),
            dir: self.dir,
        }
    }

    /// Truncate at `t_stop` (inside the span), replacing the tail.
    fn truncate_at(&mut self, t_stop: f64) {
        let z = self.eval(t_stop);
        while let Some(&last) = self.times.last() {
            if self.times.len() > 1 && (last - t_stop) * self.dir > 0.0 {
                self.times.pop();
                self.states.pop();
                let keep_step = self
                    .times
                    .last()
                    .map(|&t| (t_stop - t) * self.dir > 0.0)
                    .unwrap_or(false);
                if !keep_step || (self.steps.last().map(|s| (s.t0 - t_stop) * self.dir >= 0.0))
                    == Some(true)
                {
                    self.steps.pop();
                }
            } else {
                break;
            }
        }
        // Re-attach the covering step and the stop point.
        if (self.times.last().copied().unwrap() - t_stop) * self.dir < 0.0 {
            self.times.push(t_stop);
            self.states.push(z);
        } else {
            *self.states.last_mut().unwrap() = z;
            *self.times.last_mut().unwrap() = t_stop;
        }
    }
}

struct Engine<'a, F: Fn(f64, &DVector<f64>) -> DVector<f64>> {
    rhs: F,
    opts: &'a OdeOptions,
    t: f64,
    t_end: f64,
    dir: f64,
    z: DVector<f64>,
    k1: DVector<f64>,
    h: f64,
    steps_taken: usize,
    last_rejected: bool,
}

impl<'a, F: Fn(f64, &DVector<f64>) -> DVector<f64>> Engine<'a, F> {
    fn new(rhs: F, z0: DVector<f64>, t_end: f64, opts: &'a OdeOptions) -> Self {
        let dir = if t_end < 0.0 { -1.0 } else { 1.0 };
        let k1 = rhs(0.0, &z0);
        let h = dir * initial_step(&rhs, &z0, &k1, t_end, opts);
        Engine {
            rhs,
            opts,
            t: 0.0,
            t_end,
            dir,
            z: z0,
            k1,
            h,
            steps_taken: 0,
            last_rejected: false,
        }
    }

    fn done(&self) -> bool {
        (self.t - self.t_end) * self.dir >= 0.0
    }

    /// Advance one accepted step; returns its dense interpolant.
    fn step(&mut self) -> Result<DenseStep> {
        let n = self.z.len();
        loop {
            self.steps_taken += 1;
            if self.steps_taken > self.opts.max_steps {
                return Err(Error::StepSizeUnderflow { t: self.t });
            }
            if self.h.abs() < 1e4 * f64::EPSILON * (self.t.abs() + 1.0) {
                return Err(Error::StepSizeUnderflow { t: self.t });
            }
            // Do not step past the end.
            if (self.t + self.h - self.t_end) * self.dir > 0.0 {
                self.h = self.t_end - self.t;
            }
            let h = self.h;
            let t = self.t;
            let y = &self.z;
            let k1 = self.k1.clone();
            let k2 = (self.rhs)(t + h / 5.0, &(y + &k1 * (A21 * h)));
            let k3 = (self.rhs)(t + h * 0.3, &(y + (&k1 * A31 + &k2 * A32) * h));
            let k4 = (self.rhs)(t + h * 0.8, &(y + (&k1 * A41 + &k2 * A42 + &k3 * A43) * h));
            let k5 = (self.rhs)(
                t + h * (8.0 / 9.0),
                &(y + (&k1 * A51 + &k2 * A52 + &k3 * A53 + &k4 * A54) * h),
            );
            let k6 = (self.rhs)(
                t + h,
                &(y + (&k1 * A61 + &k2 * A62 + &k3 * A63 + &k4 * A64 + &k5 * A65) * h),
            );
            let ynew = y + (&k1 * B1 + &k3 * B3 + &k4 * B4 + &k5 * B5 + &k6 * B6) * h;
            let k7 = (self.rhs)(t + h, &ynew);

            let errvec = (&k1 * E1 + &k3 * E3 + &k4 * E4 + &k5 * E5 + &k6 * E6 + &k7 * E7) * h;
            let mut err_sq = 0.0;
            for i in 0..n {
                let sk = self.opts.abs_tol
                    + self.opts.rel_tol * y[i].abs().max(ynew[i].abs());
                let e = errvec[i] / sk;
                err_sq += e * e;
            }
            let err = (err_sq / n as f64).sqrt();

            if !err.is_finite() {
                self.h *= 0.25;
                self.last_rejected = true;
                continue;
            }
            if err > 1.0 {
                let factor = (0.9 * err.powf(-0.2)).max(0.2);
                self.h *= factor;
                self.last_rejected = true;
                continue;
            }

            // Accepted.
            let ydiff = &ynew - y;
            let bspl = &k1 * h - &ydiff;
            let rcont = [
                y.clone(),
                ydiff.clone(),
                bspl.clone(),
                &ydiff - &k7 * h - &bspl,
                (&k1 * D1 + &k3 * D3 + &k4 * D4 + &k5 * D5 + &k6 * D6 + &k7 * D7) * h,
            ];
            let step = DenseStep { t0: t, h, rcont };

            let growth_cap = if self.last_rejected { 1.0 } else { 10.0 };
            let factor = (0.9 * err.max(1e-10).powf(-0.2)).clamp(0.2, growth_cap);
            self.last_rejected = false;
            self.t = t + h;
            self.h = h * factor;
            self.z = ynew;
            self.k1 = k7;

            let norm = self.z.norm();
            if !norm.is_finite() || norm > self.opts.overflow_guard {
                return Err(Error::StateOverflow { t: self.t, norm });
            }
            return Ok(step);
        }
    }
}

fn initial_step<F: Fn(f64, &DVector<f64>) -> DVector<f64>>(
    rhs: &F,
    z0: &DVector<f64>,
    f0: &DVector<f64>,
    t_end: f64,
    opts: &OdeOptions,
) -> f64 {
    let n = z0.len() as f64;
    let span = t_end.abs().max(f64::MIN_POSITIVE);
    let sk = |y: &DVector<f64>, i: usize| opts.abs_tol + opts.rel_tol * y[i].abs();
    let d0 = (z0
        .iter()
        .enumerate()
        .map(|(i, &v)| (v / sk(z0, i)).powi(2))
        .sum::<f64>()
        / n)
        .sqrt();
    let d1 = (f0
        .iter()
        .enumerate()
        .map(|(i, &v)| (v / sk(z0, i)).powi(2))
        .sum::<f64>()
        / n)
        .sqrt();
    let h0 = if d0 < 1e-5 || d1 < 1e-5 {
        1e-6
    } else {
        0.01 * d0 / d1
    }
    .min(span);
    let dir = t_end.signum();
    let z1 = z0 + f0 * (h0 * dir);
    let f1 = rhs(h0 * dir, &z1);
    let d2 = ((f1 - f0)
        .iter()
        .enumerate()
        .map(|(i, &v)| (v / sk(z0, i)).powi(2))
        .sum::<f64>()
        / n)
        .sqrt()
        / h0;
    let dmax = d1.max(d2);
    let h1 = if dmax <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / dmax).powf(0.2)
    };
    (100.0 * h0).min(h1).min(span)
}

fn run<F: Fn(f64, &DVector<f64>) -> DVector<f64>>(
    rhs: F,
    z0: DVector<f64>,
    t_end: f64,
    opts: &OdeOptions,
) -> Result<DenseSolution> {
    if t_end == 0.0 {
        return Ok(DenseSolution::single_point(z0));
    }
    let mut eng = Engine::new(rhs, z0.clone(), t_end, opts);
    let mut sol = DenseSolution {
        times: vec![0.0],
        states: vec![z0],
        steps: Vec::new(),
        dir: eng.dir,
    };
    while !eng.done() {
        let step = eng.step()?;
        sol.steps.push(step);
        sol.times.push(eng.t);
        sol.states.push(eng.z.clone());
    }
    Ok(sol)
}

/// A computed trajectory segment `psi(t, x0)` for t between 0 and `t_end`.
///
/// `t_end` may be negative (backward flow); the stored grid is then
/// decreasing so that `states[0]` is always `x0`.
#[derive(Debug, Clone)]
pub struct FlowSegment {
    x0: DVector<f64>,
    sol: DenseSolution,
}

impl FlowSegment {
    pub fn x0(&self) -> &DVector<f64> {
        &self.x0
    }

    pub fn t_end(&self) -> f64 {
        self.sol.t_end()
    }

    /// Accepted step endpoints, starting at t = 0, monotone in the
    /// integration direction.
    pub fn times(&self) -> &[f64] {
        &self.sol.times
    }

    pub fn states(&self) -> &[DVector<f64>] {
        &self.sol.states
    }

    pub fn final_state(&self) -> &DVector<f64> {
        self.sol.states.last().unwrap()
    }

    /// Dense-output query at any t inside the computed span.
    pub fn state_at(&self, t: f64) -> DVector<f64> {
        self.sol.eval(t)
    }
}

/// Integrate `xdot = f(x)` from `x0` over `[0, t_end]` (backward if
/// `t_end < 0`).
pub fn flow(sys: &SystemDef, x0: &DVector<f64>, t_end: f64, opts: &OdeOptions) -> Result<FlowSegment> {
    let sol = run(|_t, x| sys.eval(x), x0.clone(), t_end, opts)?;
    Ok(FlowSegment { x0: x0.clone(), sol })
}

/// Flow together with an event function: stops at the first root of `g`
/// crossed in the requested direction.
///
/// `direction > 0` accepts only minus-to-plus crossings, `< 0` the reverse,
/// `0` any sign change. The root is refined by bisection on the dense output
/// to `time_tol`. Returns the (possibly truncated) segment and the event
/// time, or `None` if no event occurred before `t_end`.
pub fn flow_event(
    sys: &SystemDef,
    x0: &DVector<f64>,
    t_end: f64,
    g: impl Fn(f64, &DVector<f64>) -> f64,
    direction: f64,
    time_tol: f64,
    opts: &OdeOptions,
) -> Result<(FlowSegment, Option<f64>)> {
    if t_end == 0.0 {
        return Ok((
            FlowSegment {
                x0: x0.clone(),
                sol: DenseSolution::single_point(x0.clone()),
            },
            None,
        ));
    }
    let rhs = |_t: f64, x: &DVector<f64>| sys.eval(x);
    let mut eng = Engine::new(rhs, x0.clone(), t_end, opts);
    let mut sol = DenseSolution {
        times: vec![0.0],
        states: vec![x0.clone()],
        steps: Vec::new(),
        dir: eng.dir,
    };
    let mut g_prev = g(0.0, x0);
    let crossing_ok = |before: f64, after: f64| {
        if direction > 0.0 {
            before < 0.0 && after >= 0.0
        } else if direction < 0.0 {
            before > 0.0 && after <= 0.0
        } else {
            before.signum() != after.signum()
        }
    };
    while !eng.done() {
        let step = eng.step()?;
        let t1 = eng.t;
        // Scan the step on a subgrid so narrow crossings are not missed.
        const SUBDIV: usize = 8;
        let mut ta = step.t0;
        let mut ga = g_prev;
        let mut found: Option<(f64, f64)> = None;
        for i in 1..=SUBDIV {
            let tb = step.t0 + step.h * (i as f64 / SUBDIV as f64);
            let gb = g(tb, &step.eval(tb));
            if crossing_ok(ga, gb) {
                found = Some((ta, tb));
                break;
            }
            ta = tb;
            ga = gb;
        }
        sol.steps.push(step.clone());
        sol.times.push(t1);
        sol.states.push(eng.z.clone());
        if let Some((mut lo, mut hi)) = found {
            let mut g_lo = g(lo, &step.eval(lo));
            while (hi - lo).abs() > time_tol {
                let mid = 0.5 * (lo + hi);
                let g_mid = g(mid, &step.eval(mid));
                if crossing_ok(g_lo, g_mid) {
                    hi = mid;
                } else {
                    lo = mid;
                    g_lo = g_mid;
                }
            }
            let t_event = 0.5 * (lo + hi);
            sol.truncate_at(t_event);
            return Ok((FlowSegment { x0: x0.clone(), sol }, Some(t_event)));
        }
        g_prev = g(t1, &eng.z);
    }
    Ok((FlowSegment { x0: x0.clone(), sol }, None))
}

/// A trajectory together with solutions of its variational equation.
///
/// Column j of the fundamental solution satisfies
/// `mdot_j = Df(psi(t, x0)) m_j` from the j-th column of the seed matrix.
/// With the identity seed this is the fundamental matrix `Phi(t)`.
#[derive(Debug, Clone)]
pub struct ProlongedSegment {
    dim: usize,
    k: usize,
    sol: DenseSolution,
}

impl ProlongedSegment {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn t_end(&self) -> f64 {
        self.sol.t_end()
    }

    pub fn times(&self) -> &[f64] {
        &self.sol.times
    }

    pub fn state_at(&self, t: f64) -> DVector<f64> {
        self.sol.eval(t).rows(0, self.dim).clone_owned()
    }

    pub fn fundamental_at(&self, t: f64) -> DMatrix<f64> {
        let z = self.sol.eval(t);
        DMatrix::from_iterator(self.dim, self.k, z.iter().skip(self.dim).copied())
    }

    pub fn final_state(&self) -> DVector<f64> {
        self.state_at(self.t_end())
    }

    pub fn final_fundamental(&self) -> DMatrix<f64> {
        let z = self.sol.states.last().unwrap();
        DMatrix::from_iterator(self.dim, self.k, z.iter().skip(self.dim).copied())
    }

    /// The trajectory part as a standalone segment (shares dense accuracy).
    pub fn base(&self) -> FlowSegment {
        FlowSegment {
            x0: self.sol.states[0].rows(0, self.dim).clone_owned(),
            sol: self.sol.project(0, self.dim),
        }
    }
}

/// Integrate the prolonged system: the trajectory from `x0` jointly with
/// `k = m0.ncols()` variational columns seeded by `m0`.
pub fn prolonged_flow(
    sys: &SystemDef,
    x0: &DVector<f64>,
    m0: &DMatrix<f64>,
    t_end: f64,
    opts: &OdeOptions,
) -> Result<ProlongedSegment> {
    let dim = sys.dim();
    assert_eq!(m0.nrows(), dim, "seed matrix row count must equal dim");
    let k = m0.ncols();
    let mut z0 = DVector::zeros(dim + dim * k);
    z0.rows_mut(0, dim).copy_from(x0);
    for j in 0..k {
        z0.rows_mut(dim + j * dim, dim).copy_from(&m0.column(j));
    }
    let rhs = move |_t: f64, z: &DVector<f64>| {
        let x = z.rows(0, dim).clone_owned();
        let fx = sys.eval(&x);
        let jx = sys.jacobian(&x);
        let mut out = DVector::zeros(dim + dim * k);
        out.rows_mut(0, dim).copy_from(&fx);
        for j in 0..k {
            let col = z.rows(dim + j * dim, dim);
            let dcol = &jx * col;
            out.rows_mut(dim + j * dim, dim).copy_from(&dcol);
        }
        out
    };
    let sol = run(rhs, z0, t_end, opts)?;
    Ok(ProlongedSegment { dim, k, sol })
}

/// Integrate the variational equation forward along the time-reversal of a
/// stored backward segment.
///
/// `seg` must come from a backward flow (`t_end < 0`) starting at some `x`;
/// the reversed path runs from `psi(-s, x)` back to `x`, and the returned
/// matrix is the fundamental solution along that path applied to `m0`.
/// Because the path ends exactly at the stored starting point, pushed
/// directions are evaluated at `x` itself rather than at a re-integrated
/// endpoint.
pub fn variational_along_reversed(
    sys: &SystemDef,
    seg: &FlowSegment,
    m0: &DMatrix<f64>,
    opts: &OdeOptions,
) -> Result<DMatrix<f64>> {
    let s = -seg.t_end();
    assert!(s > 0.0, "segment must be a backward flow");
    let dim = sys.dim();
    let k = m0.ncols();
    let mut z0 = DVector::zeros(dim * k);
    for j in 0..k {
        z0.rows_mut(j * dim, dim).copy_from(&m0.column(j));
    }
    let rhs = move |v: f64, z: &DVector<f64>| {
        let x = seg.state_at(v - s);
        let jx = sys.jacobian(&x);
        let mut out = DVector::zeros(dim * k);
        for j in 0..k {
            let col = z.rows(j * dim, dim);
            let dcol = &jx * col;
            out.rows_mut(j * dim, dim).copy_from(&dcol);
        }
        out
    };
    let sol = run(rhs, z0, s, opts)?;
    let z = sol.states.last().unwrap();
    Ok(DMatrix::from_iterator(dim, k, z.iter().copied()))
}

/// Liouville identity data: `det Phi(t)` against
/// `exp( integral of trace Df along the trajectory )` at every stored time.
#[derive(Debug, Clone)]
pub struct LiouvilleCheck {
    pub times: Vec<f64>,
    pub det_phi: Vec<f64>,
    pub exp_trace: Vec<f64>,
}

impl LiouvilleCheck {
    /// Largest relative discrepancy between the two sequences.
    pub fn max_rel_err(&self) -> f64 {
        self.det_phi
            .iter()
            .zip(&self.exp_trace)
            .map(|(&d, &e)| (d - e).abs() / d.abs().max(e.abs()).max(f64::MIN_POSITIVE))
            .fold(0.0, f64::max)
    }
}

/// Evaluate both sides of the Liouville identity along a prolonged segment.
///
/// The trace integral uses 5-point Gauss quadrature on the dense output of
/// each accepted step, so its accuracy is limited only by the trajectory
/// tolerance. Requires a square fundamental seed.
pub fn liouville_det(sys: &SystemDef, seg: &ProlongedSegment) -> LiouvilleCheck {
    assert_eq!(seg.k, seg.dim, "fundamental must be square");
    let times = seg.times().to_vec();
    let mut det_phi = Vec::with_capacity(times.len());
    let mut exp_trace = Vec::with_capacity(times.len());
    det_phi.push(seg.fundamental_at(0.0).determinant());
    exp_trace.push(1.0);
    let mut acc = 0.0;
    for (i, step) in seg.sol.steps.iter().enumerate() {
        for &(node, weight) in GAUSS5.iter() {
            let t = step.t0 + step.h * node;
            let x = step.eval(t).rows(0, seg.dim).clone_owned();
            acc += weight * step.h * sys.jacobian(&x).trace();
        }
        det_phi.push({
            let z = &seg.sol.states[i + 1];
            DMatrix::from_iterator(seg.dim, seg.k, z.iter().skip(seg.dim).copied()).determinant()
        });
        exp_trace.push(acc.exp());
    }
    LiouvilleCheck {
        times,
        det_phi,
        exp_trace,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynsys::builtins;
    use approx::assert_relative_eq;

    fn scalar_decay() -> SystemDef {
        SystemDef::linear("decay", DMatrix::from_row_slice(1, 1, &[-1.0]))
    }

    #[test]
    fn flow_matches_exponential() {
        let sys = scalar_decay();
        let seg = flow(&sys, &DVector::from_vec(vec![1.0]), 1.0, &OdeOptions::default()).unwrap();
        assert_relative_eq!(seg.final_state()[0], (-1.0f64).exp(), epsilon = 1e-9);
        // Dense output mid-span.
        assert_relative_eq!(seg.state_at(0.5)[0], (-0.5f64).exp(), epsilon = 1e-8);
    }

    #[test]
    fn backward_flow_returns_to_start() {
        let sys = builtins::vdp();
        let opts = OdeOptions::default();
        for t in [1.0, 3.0, 5.0] {
            let x0 = DVector::from_vec(vec![0.5, -0.25]);
            let back = flow(&sys, &x0, -t, &opts).unwrap();
            let fwd = flow(&sys, back.final_state(), t, &opts).unwrap();
            assert!(
                (fwd.final_state() - &x0).norm() < 1e-6,
                "round trip error {} at t = {t}",
                (fwd.final_state() - &x0).norm()
            );
        }
    }

    #[test]
    fn bistable_converges_to_stable_node() {
        let sys = builtins::bistable4();
        let seg = flow(
            &sys,
            &DVector::from_vec(vec![0.5, 0.3]),
            20.0,
            &OdeOptions::default(),
        )
        .unwrap();
        let target = DVector::from_vec(vec![1.0, 0.0]);
        assert!((seg.final_state() - target).norm() < 1e-6);
    }

    #[test]
    fn vdp_lands_on_limit_cycle() {
        let sys = builtins::vdp();
        let seg = flow(
            &sys,
            &DVector::from_vec(vec![2.0, 0.0]),
            100.0,
            &OdeOptions::default(),
        )
        .unwrap();
        let speed = sys.eval(seg.final_state()).norm();
        assert!(speed > 0.1, "cycle speed {speed} should not vanish");
    }

    #[test]
    fn prolonged_scalar_linear() {
        let sys = scalar_decay();
        let seg = prolonged_flow(
            &sys,
            &DVector::from_vec(vec![1.0]),
            &DMatrix::identity(1, 1),
            1.0,
            &OdeOptions::default(),
        )
        .unwrap();
        assert_relative_eq!(seg.final_fundamental()[(0, 0)], (-1.0f64).exp(), epsilon = 1e-9);
    }

    #[test]
    fn prolonged_saddle_closed_form() {
        let sys = builtins::saddle2();
        let seg = prolonged_flow(
            &sys,
            &DVector::from_vec(vec![0.1, 0.1]),
            &DMatrix::identity(2, 2),
            1.0,
            &OdeOptions::default(),
        )
        .unwrap();
        let phi = seg.final_fundamental();
        assert_relative_eq!(phi[(0, 0)], 1.0f64.exp(), epsilon = 1e-7);
        assert_relative_eq!(phi[(1, 1)], (-1.0f64).exp(), epsilon = 1e-9);
        assert!(phi[(0, 1)].abs() < 1e-10 && phi[(1, 0)].abs() < 1e-10);
    }

    #[test]
    fn variational_column_seeded_with_f_reproduces_f() {
        // (psi, f(psi)) is a trajectory of the prolonged system.
        let sys = builtins::vdp();
        let x0 = DVector::from_vec(vec![2.0, 0.0]);
        let f0 = sys.eval(&x0);
        let m0 = DMatrix::from_columns(&[f0]);
        let seg = prolonged_flow(&sys, &x0, &m0, 3.0, &OdeOptions::default()).unwrap();
        for &t in &[0.5, 1.5, 3.0] {
            let pushed = seg.fundamental_at(t).column(0).clone_owned();
            let expect = sys.eval(&seg.state_at(t));
            assert!(
                (pushed - &expect).norm() <= 1e-6 * expect.norm(),
                "eq-of-variations identity failed at t = {t}"
            );
        }
    }

    #[test]
    fn cocycle_property() {
        let sys = builtins::bistable4();
        let opts = OdeOptions::default();
        let x0 = DVector::from_vec(vec![0.4, -0.2]);
        let (s, t) = (0.7, 1.3);
        let seg_s = prolonged_flow(&sys, &x0, &DMatrix::identity(2, 2), s, &opts).unwrap();
        let phi_s = seg_s.final_fundamental();
        let xs = seg_s.final_state();
        let seg_t = prolonged_flow(&sys, &xs, &DMatrix::identity(2, 2), t, &opts).unwrap();
        let phi_ts = seg_t.final_fundamental() * &phi_s;
        let seg_full = prolonged_flow(&sys, &x0, &DMatrix::identity(2, 2), s + t, &opts).unwrap();
        let phi_full = seg_full.final_fundamental();
        assert!((phi_ts - &phi_full).norm() <= 1e-6 * phi_full.norm());
    }

    #[test]
    fn liouville_volume_preserved_for_saddle() {
        let sys = builtins::saddle2();
        let seg = prolonged_flow(
            &sys,
            &DVector::from_vec(vec![0.2, 0.8]),
            &DMatrix::identity(2, 2),
            2.0,
            &OdeOptions::default(),
        )
        .unwrap();
        let check = liouville_det(&sys, &seg);
        assert!(check.max_rel_err() < 1e-6);
        assert_relative_eq!(*check.det_phi.last().unwrap(), 1.0, epsilon = 1e-7);
    }

    #[test]
    fn liouville_at_bistable_rest_point() {
        let sys = builtins::bistable4();
        let seg = prolonged_flow(
            &sys,
            &DVector::from_vec(vec![1.0, 0.0]),
            &DMatrix::identity(2, 2),
            1.0,
            &OdeOptions::default(),
        )
        .unwrap();
        let check = liouville_det(&sys, &seg);
        let expect = (-6.0f64).exp();
        assert_relative_eq!(*check.det_phi.last().unwrap(), expect, max_relative = 1e-6);
        assert_relative_eq!(*check.exp_trace.last().unwrap(), expect, max_relative = 1e-6);
    }

    #[test]
    fn event_detects_axis_crossing() {
        // Rotation from (1, 0): x2 becomes positive immediately; the first
        // minus-to-plus crossing of x2 afterwards is a full turn.
        let sys = builtins::rot2();
        let x0 = DVector::from_vec(vec![1.0, 0.0]);
        let (seg, t_event) = flow_event(
            &sys,
            &x0,
            10.0,
            |_t, x| x[1],
            1.0,
            1e-12,
            &OdeOptions::default(),
        )
        .unwrap();
        let t_event = t_event.expect("should find the return");
        assert_relative_eq!(t_event, 2.0 * std::f64::consts::PI, epsilon = 1e-8);
        assert!((seg.final_state() - &x0).norm() < 1e-7);
    }

    #[test]
    fn overflow_guard_reports() {
        let sys = SystemDef::linear("blowup", DMatrix::from_row_slice(1, 1, &[5.0]));
        let mut opts = OdeOptions::default();
        opts.overflow_guard = 1e6;
        let err = flow(&sys, &DVector::from_vec(vec![1.0]), 10.0, &opts).unwrap_err();
        assert!(matches!(err, Error::StateOverflow { .. }));
    }
}
