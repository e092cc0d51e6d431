//! Subcommand implementations: each builds its inputs from the validated
//! config, runs the corresponding library operations, prints a one-line
//! stage summary, and emits machine-readable artifacts.

use std::path::Path;

use nalgebra::DVector;
use serde_json::{Map, Value};

use diffpos_core::attractors::{
    find_fixed_points, find_limit_cycle, floquet, trace_arcs, verify_normal_hyperbolicity,
    AttractorModel, CycleOptions, FixedPointKind, NhOptions,
};
use diffpos_core::cones::{Cone, ConeField, ConstantField};
use diffpos_core::construct::{certificate, CertificateOutcome, ConstructParams, TubeOptions};
use diffpos_core::dynsys::{flow, OdeOptions, SystemDef};
use diffpos_core::error::Error as CoreError;
use diffpos_core::positivity::{
    check_diff_positivity, contraction_rate, dichotomy_classify, pf_vector, saddle_obstruction,
    DichotomyOptions, PfOptions, PositivityOptions, PositivityReport,
};
use diffpos_core::sample::BoxSampler;

use crate::config::{build_cone, ConeConfig, LoadedConfig, RegionConfig};
use crate::report::{envelope, num, vec_num, write_csv, write_report};

/// Exit codes: 0 ok, 2 config error, 3 numeric stage failure,
/// 4 verdict-negative.
pub enum Outcome {
    Ok,
    VerdictNegative,
}

impl Outcome {
    pub fn exit_code(&self) -> i32 {
        match self {
            Outcome::Ok => 0,
            Outcome::VerdictNegative => 4,
        }
    }
}

pub enum CmdError {
    Config(String),
    Numeric(String),
    Io(String),
}

impl From<CoreError> for CmdError {
    fn from(e: CoreError) -> Self {
        CmdError::Numeric(e.to_string())
    }
}

impl From<std::io::Error> for CmdError {
    fn from(e: std::io::Error) -> Self {
        CmdError::Io(e.to_string())
    }
}

type CmdResult = Result<Outcome, CmdError>;

fn ode_opts(cfg: &LoadedConfig) -> OdeOptions {
    OdeOptions {
        abs_tol: cfg.config.tolerances.abs,
        rel_tol: cfg.config.tolerances.rel,
        ..OdeOptions::default()
    }
}

fn require_x0(cfg: &LoadedConfig) -> Result<DVector<f64>, CmdError> {
    cfg.config
        .x0
        .as_ref()
        .map(|v| DVector::from_column_slice(v))
        .ok_or_else(|| CmdError::Config("x0: required for this command".into()))
}

fn require_region(cfg: &LoadedConfig) -> Result<&RegionConfig, CmdError> {
    cfg.config
        .region
        .as_ref()
        .ok_or_else(|| CmdError::Config("region: required for this command".into()))
}

fn sampler_from(cfg: &LoadedConfig, seed: u64) -> Result<BoxSampler, CmdError> {
    let region = require_region(cfg)?;
    Ok(BoxSampler::new(
        &region.min,
        &region.max,
        cfg.config.samples.points,
        seed,
    ))
}

fn require_cone(cfg: &LoadedConfig) -> Result<&ConeConfig, CmdError> {
    cfg.config
        .cone
        .as_ref()
        .ok_or_else(|| CmdError::Config("cone: required for this command".into()))
}

fn grid_seeds(region: &RegionConfig, per_axis: usize) -> Vec<DVector<f64>> {
    let dim = region.min.len();
    let mut seeds = Vec::new();
    let mut idx = vec![0usize; dim];
    loop {
        let p = DVector::from_iterator(
            dim,
            (0..dim).map(|k| {
                region.min[k]
                    + (region.max[k] - region.min[k]) * idx[k] as f64
                        / (per_axis - 1).max(1) as f64
            }),
        );
        seeds.push(p);
        // Odometer increment.
        let mut k = 0;
        loop {
            idx[k] += 1;
            if idx[k] < per_axis {
                break;
            }
            idx[k] = 0;
            k += 1;
            if k == dim {
                return seeds;
            }
        }
    }
}

/// Locate the attractor for pipeline commands: a limit cycle when the
/// trajectory from x0 returns, otherwise the fixed points of the region
/// (with heteroclinic arcs when a saddle is present).
fn build_attractor(
    sys: &SystemDef,
    cfg: &LoadedConfig,
) -> Result<AttractorModel, CmdError> {
    let x0 = require_x0(cfg)?;
    let mut copts = CycleOptions::default();
    copts.t_burn = cfg.config.construct.t_burn;
    match find_limit_cycle(sys, &x0, None, &copts) {
        Ok(cycle) => {
            println!(
                "attractor: limit cycle, period {:.6}, closure {:.2e}",
                cycle.period, cycle.closure_error
            );
            Ok(AttractorModel::LimitCycle(cycle))
        }
        Err(CoreError::NoReturn { .. }) => {
            let region = require_region(cfg)?;
            let seeds = grid_seeds(region, 7);
            let fps = find_fixed_points(
                sys,
                &seeds,
                &DVector::from_column_slice(&region.min),
                &DVector::from_column_slice(&region.max),
            );
            if fps.is_empty() {
                return Err(CmdError::Numeric(
                    "no attractor: neither a cycle nor fixed points found".into(),
                ));
            }
            let has_saddle = fps.iter().any(|f| f.kind == FixedPointKind::Saddle);
            println!(
                "attractor: {} fixed point(s){}",
                fps.len(),
                if has_saddle { " with connecting arcs" } else { "" }
            );
            if has_saddle {
                let arcs = trace_arcs(sys, &fps)?;
                Ok(AttractorModel::FixedPointsWithArcs {
                    fixed_points: fps,
                    arcs,
                })
            } else {
                Ok(AttractorModel::FixedPointSet(fps))
            }
        }
        Err(e) => Err(e.into()),
    }
}

fn positivity_json(report: &PositivityReport) -> Value {
    let mut m = Map::new();
    m.insert("samples_checked".into(), Value::from(report.samples.len()));
    m.insert("violations".into(), Value::from(report.violations.len()));
    m.insert(
        "violation_samples".into(),
        Value::Array(
            report
                .violations
                .iter()
                .take(32)
                .map(|&i| {
                    let s = &report.samples[i];
                    let mut e = Map::new();
                    e.insert("point".into(), Value::from(s.point));
                    e.insert("ray".into(), Value::from(s.ray));
                    e.insert("horizon".into(), num(s.horizon));
                    e.insert("margin".into(), num(s.margin));
                    Value::Object(e)
                })
                .collect(),
        ),
    );
    m.insert(
        "t_used".into(),
        report.t_used.map(num).unwrap_or(Value::Null),
    );
    m.insert(
        "lambda_hat".into(),
        report.lambda_hat.map(num).unwrap_or(Value::Null),
    );
    m.insert(
        "delta_hat".into(),
        report.delta_hat.map(num).unwrap_or(Value::Null),
    );
    m.insert("horizons".into(), vec_num(&report.horizons));
    m.insert("isolated_errors".into(), Value::from(report.errors.len()));
    m.insert("margin_tol".into(), num(report.margin_tol));
    Value::Object(m)
}

fn worst_margin(report: &PositivityReport) -> f64 {
    report
        .samples
        .iter()
        .map(|s| s.margin)
        .fold(f64::INFINITY, f64::min)
}

pub fn simulate(cfg: &LoadedConfig, out: &Path, seed: u64) -> CmdResult {
    let sys = &cfg.system;
    let x0 = require_x0(cfg)?;
    let seg = flow(sys, &x0, cfg.config.horizon, &ode_opts(cfg))?;
    let n = cfg.config.output_points.max(2);
    let header: Vec<String> = std::iter::once("t".to_string())
        .chain((1..=sys.dim()).map(|i| format!("x{i}")))
        .collect();
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let t = cfg.config.horizon * i as f64 / (n - 1) as f64;
            let x = seg.state_at(t);
            std::iter::once(t).chain(x.iter().copied()).collect()
        })
        .collect();
    write_csv(out, "trajectories.csv", &header, &rows)?;
    let final_state = seg.final_state();
    println!(
        "simulate: t = {}, |f(x_end)| = {:.3e}",
        cfg.config.horizon,
        sys.eval(final_state).norm()
    );
    let mut m = envelope("simulate", &cfg.system_label, seed, "ok");
    m.insert("horizon".into(), num(cfg.config.horizon));
    m.insert(
        "final_state".into(),
        vec_num(final_state.as_slice()),
    );
    m.insert(
        "final_speed".into(),
        num(sys.eval(final_state).norm()),
    );
    m.insert("rows".into(), Value::from(rows.len()));
    write_report(out, &Value::Object(m))?;
    Ok(Outcome::Ok)
}

pub fn fixed_points(cfg: &LoadedConfig, out: &Path, seed: u64) -> CmdResult {
    let sys = &cfg.system;
    let region = require_region(cfg)?;
    let mut seeds = grid_seeds(region, 7);
    seeds.extend(sampler_from(cfg, seed)?.points());
    let fps = find_fixed_points(
        sys,
        &seeds,
        &DVector::from_column_slice(&region.min),
        &DVector::from_column_slice(&region.max),
    );
    println!("fixed-points: {} found", fps.len());
    let mut m = envelope("fixed-points", &cfg.system_label, seed, "ok");
    m.insert(
        "fixed_points".into(),
        Value::Array(
            fps.iter()
                .map(|fp| {
                    let mut e = Map::new();
                    e.insert("x".into(), vec_num(fp.x.as_slice()));
                    e.insert(
                        "spectrum_re".into(),
                        vec_num(&fp.spectrum.iter().map(|c| c.re).collect::<Vec<_>>()),
                    );
                    e.insert(
                        "spectrum_im".into(),
                        vec_num(&fp.spectrum.iter().map(|c| c.im).collect::<Vec<_>>()),
                    );
                    e.insert("kind".into(), Value::String(format!("{:?}", fp.kind)));
                    e.insert("residual".into(), num(cfg.system.eval(&fp.x).norm()));
                    Value::Object(e)
                })
                .collect(),
        ),
    );
    write_report(out, &Value::Object(m))?;
    Ok(Outcome::Ok)
}

pub fn limit_cycle(cfg: &LoadedConfig, out: &Path, seed: u64) -> CmdResult {
    let sys = &cfg.system;
    let x0 = require_x0(cfg)?;
    let mut copts = CycleOptions::default();
    copts.t_burn = cfg.config.construct.t_burn;
    let cycle = find_limit_cycle(sys, &x0, None, &copts)?;
    let fl = floquet(sys, &cycle)?;
    println!(
        "limit-cycle: period {:.9}, closure {:.2e}, multipliers {:?}",
        cycle.period,
        cycle.closure_error,
        fl.multipliers.iter().map(|c| c.norm()).collect::<Vec<_>>()
    );
    let header: Vec<String> = std::iter::once("t".to_string())
        .chain((1..=sys.dim()).map(|i| format!("x{i}")))
        .collect();
    let rows: Vec<Vec<f64>> = cycle
        .samples
        .iter()
        .map(|cp| std::iter::once(cp.t).chain(cp.x.iter().copied()).collect())
        .collect();
    write_csv(out, "trajectories.csv", &header, &rows)?;
    let mut m = envelope("limit-cycle", &cfg.system_label, seed, "ok");
    m.insert("period".into(), num(cycle.period));
    m.insert("anchor".into(), vec_num(cycle.anchor.as_slice()));
    m.insert("closure_error".into(), num(cycle.closure_error));
    m.insert(
        "multipliers_abs".into(),
        vec_num(&fl.multipliers.iter().map(|c| c.norm()).collect::<Vec<_>>()),
    );
    m.insert("multiplier_product".into(), num(fl.product));
    m.insert("liouville_product".into(), num(fl.liouville_product));
    m.insert("trivial_angle".into(), num(fl.trivial_angle));
    write_report(out, &Value::Object(m))?;
    Ok(Outcome::Ok)
}

fn nh_options(cfg: &LoadedConfig) -> NhOptions {
    NhOptions {
        horizon: cfg.config.construct.nh_horizon,
        points: cfg.config.construct.nh_points,
        threshold: cfg.config.construct.nh_threshold,
        ode: ode_opts(cfg),
        ..NhOptions::default()
    }
}

pub fn nh_check(cfg: &LoadedConfig, out: &Path, seed: u64) -> CmdResult {
    let sys = &cfg.system;
    let attractor = build_attractor(sys, cfg)?;
    let mut opts = nh_options(cfg);
    if let AttractorModel::LimitCycle(c) = &attractor {
        // Whole periods keep the tangent fit unbiased.
        opts.horizon = 2.0 * c.period;
        opts.substeps = 64;
    }
    let cert = verify_normal_hyperbolicity(sys, &attractor, &opts)?;
    println!(
        "nh-check: lambda1 = {:.4}, lambda2 = {:.4}, margin = {:.4}, verdict = {}",
        cert.lambda1,
        cert.lambda2,
        cert.margin,
        if cert.verdict { "positive" } else { "negative" }
    );
    let status = if cert.verdict { "ok" } else { "verdict-negative" };
    let mut m = envelope("nh-check", &cfg.system_label, seed, status);
    m.insert("nh_certificate".into(), nh_json(&cert));
    write_report(out, &Value::Object(m))?;
    Ok(if cert.verdict {
        Outcome::Ok
    } else {
        Outcome::VerdictNegative
    })
}

fn nh_json(cert: &diffpos_core::attractors::NHCertificate) -> Value {
    let mut e = Map::new();
    e.insert("lambda1".into(), num(cert.lambda1));
    e.insert("lambda2".into(), num(cert.lambda2));
    e.insert("rho1".into(), num(cert.rho1));
    e.insert("rho2".into(), num(cert.rho2));
    e.insert("margin".into(), num(cert.margin));
    e.insert("verdict".into(), Value::Bool(cert.verdict));
    e.insert("points".into(), Value::from(cert.fits.len()));
    Value::Object(e)
}

pub fn check_dp(cfg: &LoadedConfig, out: &Path, seed: u64) -> CmdResult {
    let sys = &cfg.system;
    let sampler = sampler_from(cfg, seed)?;
    let popts = PositivityOptions {
        ode: ode_opts(cfg),
        strict_shrink: cfg.config.construct.epsilon,
        margin_tol: cfg.config.tolerances.margin,
    };
    let cone_cfg = require_cone(cfg)?;
    let report = match cone_cfg {
        ConeConfig::Construct {} => {
            let outcome = run_certificate(cfg, seed)?;
            write_field_csv(out, &outcome.field, &sampler)?;
            outcome.report
        }
        _ => {
            let cone = build_cone(cone_cfg).map_err(CmdError::Config)?;
            let field = ConstantField(cone);
            write_field_csv(out, &field, &sampler)?;
            check_diff_positivity(
                sys,
                &field,
                &sampler,
                &cfg.config.horizons,
                cfg.config.samples.rays,
                &popts,
            )
        }
    };
    let strict_ok = report.t_used.is_some();
    println!(
        "check-dp: {} samples, {} violations, t_used = {:?}, lambda_hat = {:?}",
        report.samples.len(),
        report.violations.len(),
        report.t_used,
        report.lambda_hat
    );
    let negative = !report.violations.is_empty() || !strict_ok;
    let status = if negative { "verdict-negative" } else { "ok" };
    let mut m = envelope("check-dp", &cfg.system_label, seed, status);
    m.insert("positivity_report".into(), positivity_json(&report));
    m.insert("worst_margin".into(), num(worst_margin(&report)));
    write_report(out, &Value::Object(m))?;
    Ok(if negative {
        Outcome::VerdictNegative
    } else {
        Outcome::Ok
    })
}

fn write_field_csv<F: ConeField>(
    out: &Path,
    field: &F,
    sampler: &BoxSampler,
) -> Result<(), CmdError> {
    let dim = sampler.dim();
    let mut header: Vec<String> = (1..=dim).map(|i| format!("x{i}")).collect();
    header.extend((1..=dim).map(|i| format!("axis{i}")));
    for i in 1..dim {
        for j in 1..dim {
            header.push(format!("w{i}{j}"));
        }
    }
    header.push("shrink".into());
    let mut rows = Vec::new();
    for p in sampler.points() {
        let Ok(cone) = field.cone_at(&p) else { continue };
        let mut row: Vec<f64> = p.iter().copied().collect();
        match &cone {
            Cone::Elliptical {
                axis,
                weight,
                shrink,
                ..
            } => {
                row.extend(axis.iter().copied());
                row.extend(weight.iter().copied());
                row.push(*shrink);
            }
            other => {
                // Orthant/polyhedral: the interior ray stands in for the
                // axis; weights are not applicable.
                let Some(ray) = other.interior_ray() else { continue };
                row.extend(ray.iter().copied());
                row.extend(std::iter::repeat(f64::NAN).take((dim - 1) * (dim - 1)));
                row.push(f64::NAN);
            }
        }
        rows.push(row);
    }
    write_csv(out, "field.csv", &header, &rows)?;
    Ok(())
}

pub fn pf_field(cfg: &LoadedConfig, out: &Path, seed: u64) -> CmdResult {
    let sys = &cfg.system;
    let sampler = sampler_from(cfg, seed)?;
    let cone = build_cone(require_cone(cfg)?).map_err(CmdError::Config)?;
    let field = ConstantField(cone);
    let mut pf_opts = PfOptions::default();
    pf_opts.s_max = cfg.config.pf.s_max;
    let mut samples = Vec::new();
    let mut failures = 0usize;
    for p in sampler.points() {
        match pf_vector(sys, &field, &p, cfg.config.pf.s_backward, None, &pf_opts) {
            Ok(est) => samples.push(est),
            Err(_) => failures += 1,
        }
    }
    println!(
        "pf-field: {} estimates, {} failures",
        samples.len(),
        failures
    );
    let mut m = envelope("pf-field", &cfg.system_label, seed, "ok");
    m.insert("pf_samples".into(), pf_json(&samples));
    m.insert("failures".into(), Value::from(failures));
    write_report(out, &Value::Object(m))?;
    Ok(Outcome::Ok)
}

fn pf_json(samples: &[diffpos_core::positivity::PFEstimate]) -> Value {
    Value::Array(
        samples
            .iter()
            .map(|est| {
                let mut e = Map::new();
                e.insert("x".into(), vec_num(est.x.as_slice()));
                e.insert("w".into(), vec_num(est.w.as_slice()));
                e.insert("s_used".into(), num(est.s_used));
                e.insert("residual".into(), num(est.residual));
                Value::Object(e)
            })
            .collect(),
    )
}

pub fn rate(cfg: &LoadedConfig, out: &Path, seed: u64) -> CmdResult {
    let sys = &cfg.system;
    let x0 = require_x0(cfg)?;
    let cone = build_cone(require_cone(cfg)?).map_err(CmdError::Config)?;
    let field = ConstantField(cone);
    let fit = contraction_rate(sys, &field, &x0, &cfg.config.horizons, &ode_opts(cfg))?;
    println!(
        "rate: lambda_hat = {:.6} over {} grid points",
        fit.lambda_hat,
        fit.points.len()
    );
    let mut m = envelope("rate", &cfg.system_label, seed, "ok");
    m.insert("lambda_hat".into(), num(fit.lambda_hat));
    m.insert("slope".into(), num(fit.slope));
    m.insert("intercept".into(), num(fit.intercept));
    m.insert(
        "h_points".into(),
        Value::Array(
            fit.points
                .iter()
                .map(|&(t, h)| Value::Array(vec![num(t), num(h)]))
                .collect(),
        ),
    );
    write_report(out, &Value::Object(m))?;
    Ok(Outcome::Ok)
}

pub fn classify(cfg: &LoadedConfig, out: &Path, seed: u64) -> CmdResult {
    let sys = &cfg.system;
    let x0 = require_x0(cfg)?;
    let mut opts = DichotomyOptions::default();
    opts.ode = ode_opts(cfg);
    opts.s_backward = cfg.config.pf.s_backward;
    opts.pf.s_max = cfg.config.pf.s_max;
    let cone_cfg = require_cone(cfg)?;
    let result = match cone_cfg {
        ConeConfig::Construct {} => {
            let outcome = run_certificate(cfg, seed)?;
            dichotomy_classify(sys, &outcome.field, &x0, cfg.config.horizon, &opts)?
        }
        _ => {
            let cone = build_cone(cone_cfg).map_err(CmdError::Config)?;
            dichotomy_classify(sys, &ConstantField(cone), &x0, cfg.config.horizon, &opts)?
        }
    };
    println!(
        "classify: {:?} (f entry {:?}, alignment {:?}, w growth {:.4})",
        result.verdict,
        result.evidence.f_entry_time,
        result.evidence.alignment_h,
        result.evidence.w_growth_exponent
    );
    let mut m = envelope("classify", &cfg.system_label, seed, "ok");
    m.insert(
        "verdict".into(),
        Value::String(format!("{:?}", result.verdict)),
    );
    let mut e = Map::new();
    e.insert(
        "f_entry_time".into(),
        result.evidence.f_entry_time.map(num).unwrap_or(Value::Null),
    );
    e.insert(
        "alignment_h".into(),
        result.evidence.alignment_h.map(num).unwrap_or(Value::Null),
    );
    e.insert(
        "w_growth_exponent".into(),
        num(result.evidence.w_growth_exponent),
    );
    e.insert("w0".into(), vec_num(result.evidence.w0.as_slice()));
    m.insert("evidence".into(), Value::Object(e));
    write_report(out, &Value::Object(m))?;
    Ok(Outcome::Ok)
}

fn run_certificate(cfg: &LoadedConfig, seed: u64) -> Result<CertificateOutcome, CmdError> {
    let sys = &cfg.system;
    let attractor = build_attractor(sys, cfg)?;
    let sampler = sampler_from(cfg, seed)?;
    let mut params = ConstructParams::new(sampler);
    params.eps = cfg.config.construct.epsilon;
    params.tube_radius = cfg.config.construct.tube_radius;
    params.t_int = cfg.config.construct.t_int;
    params.tau_max = cfg.config.construct.tau_max;
    params.horizons = cfg.config.horizons.clone();
    params.rays = cfg.config.samples.rays;
    params.nh = nh_options(cfg);
    if let AttractorModel::LimitCycle(c) = &attractor {
        params.nh.horizon = 2.0 * c.period;
        params.nh.substeps = 64;
    }
    params.tube = TubeOptions {
        invariance_horizon: cfg.config.construct.invariance_horizon,
        ..TubeOptions::default()
    };
    params.ode = ode_opts(cfg);
    let outcome = certificate(sys, &attractor, &params)?;
    println!(
        "construct: nh(lambda1 = {:.4}, lambda2 = {:.4}), tube(c = {}, rho = {:.4})",
        outcome.nh.lambda1,
        outcome.nh.lambda2,
        outcome.field.tube().radius,
        outcome.field.tube().safe_radius
    );
    Ok(outcome)
}

pub fn certify(cfg: &LoadedConfig, out: &Path, seed: u64) -> CmdResult {
    let sys = &cfg.system;
    let outcome = run_certificate(cfg, seed)?;
    println!(
        "certify: {} samples, {} violations, lambda_hat = {:?}, success = {}",
        outcome.report.samples.len(),
        outcome.report.violations.len(),
        outcome.report.lambda_hat,
        outcome.success
    );
    // PF estimates along the certified field at a few sampled points.
    let sampler = sampler_from(cfg, seed ^ 0x5eed)?;
    let mut pf_opts = PfOptions::default();
    pf_opts.s_max = cfg.config.pf.s_max;
    let mut pf_samples = Vec::new();
    for p in sampler.points().into_iter().take(8) {
        if let Ok(est) = pf_vector(
            sys,
            &outcome.field,
            &p,
            cfg.config.pf.s_backward,
            None,
            &pf_opts,
        ) {
            pf_samples.push(est);
        }
    }
    write_field_csv(out, &outcome.field, &sampler_from(cfg, seed)?)?;
    let status = if outcome.success { "ok" } else { "verdict-negative" };
    let mut m = envelope("certify", &cfg.system_label, seed, status);
    m.insert("nh_certificate".into(), nh_json(&outcome.nh));
    m.insert("positivity_report".into(), positivity_json(&outcome.report));
    m.insert("pf_samples".into(), pf_json(&pf_samples));
    let mut tube = Map::new();
    tube.insert("radius".into(), num(outcome.field.tube().radius));
    tube.insert("safe_radius".into(), num(outcome.field.tube().safe_radius));
    m.insert("tube".into(), Value::Object(tube));
    write_report(out, &Value::Object(m))?;
    Ok(if outcome.success {
        Outcome::Ok
    } else {
        Outcome::VerdictNegative
    })
}

pub fn obstruction(cfg: &LoadedConfig, out: &Path, seed: u64) -> CmdResult {
    let sys = &cfg.system;
    let x_guess = require_x0(cfg)?;
    let region = require_region(cfg)?;
    // Refine the guess to an actual fixed point first.
    let fps = find_fixed_points(
        sys,
        &[x_guess.clone()],
        &DVector::from_column_slice(&region.min),
        &DVector::from_column_slice(&region.max),
    );
    let x_star = fps
        .first()
        .map(|fp| fp.x.clone())
        .ok_or_else(|| CmdError::Numeric("no fixed point near x0".into()))?;
    let cone = build_cone(require_cone(cfg)?).map_err(CmdError::Config)?;
    let horizon = cfg.config.horizons.last().copied().unwrap_or(5.0);
    let report = saddle_obstruction(sys, &x_star, &cone, horizon, &ode_opts(cfg))?;
    println!(
        "obstruction: slope = {:.3e}, obstructed = {}",
        report.slope, report.obstructed
    );
    let status = if report.obstructed {
        "verdict-negative"
    } else {
        "ok"
    };
    let mut m = envelope("obstruction", &cfg.system_label, seed, status);
    m.insert("x_star".into(), vec_num(x_star.as_slice()));
    m.insert("slope".into(), num(report.slope));
    m.insert("obstructed".into(), Value::Bool(report.obstructed));
    m.insert("spectrum".into(), vec_num(&report.spectrum));
    m.insert(
        "h_series".into(),
        Value::Array(
            report
                .h_series
                .iter()
                .map(|&(t, h)| Value::Array(vec![num(t), num(h)]))
                .collect(),
        ),
    );
    write_report(out, &Value::Object(m))?;
    Ok(if report.obstructed {
        Outcome::VerdictNegative
    } else {
        Outcome::Ok
    })
}
