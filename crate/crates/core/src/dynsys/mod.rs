//! Vector-field definitions, flow and prolonged-flow integration.

pub mod expr;
mod ode;

pub use ode::{
    flow, flow_event, liouville_det, prolonged_flow, variational_along_reversed, FlowSegment,
    LiouvilleCheck, OdeOptions, ProlongedSegment,
};

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use expr::parse_expression;

type FieldFn = dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync;
type JacFn = dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync;

/// A smooth autonomous system `xdot = f(x)` on R^dim.
///
/// Immutable after construction; cheap to clone and safe to share across
/// threads.
#[derive(Clone)]
pub struct SystemDef {
    name: String,
    dim: usize,
    field: Arc<FieldFn>,
    jac: Option<Arc<JacFn>>,
}

impl fmt::Debug for SystemDef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SystemDef")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("analytic_jacobian", &self.jac.is_some())
            .finish()
    }
}

impl SystemDef {
    pub fn new<F>(name: &str, dim: usize, field: F) -> Self
    where
        F: Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    {
        assert!(dim > 0, "dimension must be positive");
        Self {
            name: name.to_string(),
            dim,
            field: Arc::new(field),
            jac: None,
        }
    }

    pub fn with_jacobian<J>(mut self, jac: J) -> Self
    where
        J: Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
    {
        self.jac = Some(Arc::new(jac));
        self
    }

    /// Linear system `xdot = A x` with its exact Jacobian.
    pub fn linear(name: &str, a: DMatrix<f64>) -> Self {
        assert_eq!(a.nrows(), a.ncols());
        let dim = a.nrows();
        let a2 = a.clone();
        Self::new(name, dim, move |x| &a * x).with_jacobian(move |_| a2.clone())
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Evaluate the vector field.
    pub fn eval(&self, x: &DVector<f64>) -> DVector<f64> {
        (self.field)(x)
    }

    /// Jacobian of the field: analytic when available, otherwise central
    /// finite differences with per-component step `1e-6 * max(1, |x_j|)`.
    pub fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        if let Some(jac) = &self.jac {
            return jac(x);
        }
        let n = self.dim;
        let mut out = DMatrix::zeros(n, n);
        let mut xp = x.clone();
        let mut xm = x.clone();
        for j in 0..n {
            let h = 1e-6 * x[j].abs().max(1.0);
            xp[j] = x[j] + h;
            xm[j] = x[j] - h;
            let fp = self.eval(&xp);
            let fm = self.eval(&xm);
            for i in 0..n {
                out[(i, j)] = (fp[i] - fm[i]) / (2.0 * h);
            }
            xp[j] = x[j];
            xm[j] = x[j];
        }
        out
    }

    pub fn has_analytic_jacobian(&self) -> bool {
        self.jac.is_some()
    }
}

/// Build a system from one expression string per state component.
///
/// The finite-difference Jacobian default applies; see
/// [`SystemDef::jacobian`].
pub fn parse_field(exprs: &[&str], dim: usize) -> Result<SystemDef> {
    if exprs.len() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: exprs.len(),
        });
    }
    let parsed = exprs
        .iter()
        .map(|src| parse_expression(src, dim))
        .collect::<Result<Vec<_>>>()?;
    let name = format!("expr{dim}");
    Ok(SystemDef::new(&name, dim, move |x: &DVector<f64>| {
        let xs = x.as_slice();
        DVector::from_iterator(dim, parsed.iter().map(|e| e.eval(xs)))
    }))
}

/// Built-in test systems used throughout the analysis suite.
pub mod builtins {
    use super::*;

    /// `A = [[-1, 2], [1, -1]]`: a Metzler matrix, positive on the orthant.
    pub fn metzler2() -> SystemDef {
        SystemDef::linear("metzler2", DMatrix::from_row_slice(2, 2, &[-1.0, 2.0, 1.0, -1.0]))
    }

    /// Bistable planar system `x1' = x1 - x1^3`, `x2' = -4 x2`.
    pub fn bistable4() -> SystemDef {
        SystemDef::new("bistable4", 2, |x: &DVector<f64>| {
            DVector::from_vec(vec![x[0] - x[0].powi(3), -4.0 * x[1]])
        })
        .with_jacobian(|x: &DVector<f64>| {
            DMatrix::from_row_slice(2, 2, &[1.0 - 3.0 * x[0] * x[0], 0.0, 0.0, -4.0])
        })
    }

    /// Van der Pol oscillator with mu = 1.
    pub fn vdp() -> SystemDef {
        SystemDef::new("vdp", 2, |x: &DVector<f64>| {
            DVector::from_vec(vec![x[1], (1.0 - x[0] * x[0]) * x[1] - x[0]])
        })
        .with_jacobian(|x: &DVector<f64>| {
            DMatrix::from_row_slice(
                2,
                2,
                &[0.0, 1.0, -2.0 * x[0] * x[1] - 1.0, 1.0 - x[0] * x[0]],
            )
        })
    }

    /// Linear saddle `diag(1, -1)`.
    pub fn saddle2() -> SystemDef {
        SystemDef::linear("saddle2", DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]))
    }

    /// Harmonic rotation `x1' = -x2`, `x2' = x1`.
    pub fn rot2() -> SystemDef {
        SystemDef::linear("rot2", DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]))
    }

    /// Look up a built-in by name.
    pub fn by_name(name: &str) -> Option<SystemDef> {
        match name {
            "metzler2" => Some(metzler2()),
            "bistable4" => Some(bistable4()),
            "vdp" => Some(vdp()),
            "saddle2" => Some(saddle2()),
            "rot2" => Some(rot2()),
            _ => None,
        }
    }

    /// Names of all built-ins, for config validation messages.
    pub const NAMES: [&str; 5] = ["metzler2", "bistable4", "vdp", "saddle2", "rot2"];
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn parse_field_evaluates_bistable() {
        let sys = parse_field(&["x1 - x1^3", "-4*x2"], 2).unwrap();
        let f = sys.eval(&DVector::from_vec(vec![1.0, 1.0]));
        assert_relative_eq!(f[0], 0.0, epsilon = 1e-15);
        assert_relative_eq!(f[1], -4.0, epsilon = 1e-15);
    }

    #[test]
    fn parse_field_evaluates_vdp() {
        let sys = parse_field(&["x2", "(1-x1^2)*x2 - x1"], 2).unwrap();
        let f = sys.eval(&DVector::from_vec(vec![0.0, 1.0]));
        assert_relative_eq!(f[0], 1.0, epsilon = 1e-15);
        assert_relative_eq!(f[1], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn parse_field_reports_position() {
        let err = parse_field(&["x1 +"], 1).unwrap_err();
        match err {
            Error::Syntax { position, .. } => assert_eq!(position, 5),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn parse_field_dimension_mismatch() {
        assert!(matches!(
            parse_field(&["x1", "x2", "x1"], 2),
            Err(Error::DimensionMismatch { expected: 2, got: 3 })
        ));
    }

    #[test]
    fn jacobian_matches_polynomial_derivative() {
        let sys = builtins::bistable4();
        let j0 = sys.jacobian(&DVector::from_vec(vec![0.0, 0.0]));
        assert_relative_eq!(j0[(0, 0)], 1.0, epsilon = 1e-12);
        assert_relative_eq!(j0[(1, 1)], -4.0, epsilon = 1e-12);
        let j1 = sys.jacobian(&DVector::from_vec(vec![1.0, 0.0]));
        assert_relative_eq!(j1[(0, 0)], -2.0, epsilon = 1e-12);
        assert_relative_eq!(j1[(1, 1)], -4.0, epsilon = 1e-12);
    }

    #[test]
    fn finite_difference_jacobian_matches_analytic() {
        // Same field without the analytic Jacobian attached.
        let fd = parse_field(&["x1 - x1^3", "-4*x2"], 2).unwrap();
        let exact = builtins::bistable4();
        for p in [[0.3, -0.7], [1.1, 0.4], [-0.9, 2.0]] {
            let x = DVector::from_column_slice(&p);
            let a = fd.jacobian(&x);
            let b = exact.jacobian(&x);
            assert!((a - b).norm() < 1e-5);
        }
    }

    #[test]
    fn linear_system_jacobian_is_constant() {
        let sys = builtins::metzler2();
        let j = sys.jacobian(&DVector::from_vec(vec![3.0, -2.0]));
        assert_eq!(j, DMatrix::from_row_slice(2, 2, &[-1.0, 2.0, 1.0, -1.0]));
    }
}
