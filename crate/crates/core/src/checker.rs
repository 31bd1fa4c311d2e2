//! Invariance checks.
//!
//! The generic test evaluates, at a boundary point `x` and an outward normal
//! `u`, the kernel residual `|C(x) u|` and the corrected drift margin
//! `<u, b(x) - 1/2 sum_j DC^j(x) (C C^+)^j(x)>`. Sampling the boundary turns
//! this into a falsifier. For planar polynomial models on the flat, convex
//! and concave parabolic state spaces the conditions reduce to polynomial
//! identities and univariate nonnegativity, which are decided exactly.

use nalgebra::{DMatrix, DVector, Matrix2};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{default_tol, Domain, NormalRay, Window};
use crate::matcalc::{
    apply_generator, drift_correction, jacobian_fd, CorrectionOptions, FnCovariance,
    ProximalTestFunction, DEFAULT_RANK_TOL,
};
use crate::model::{DiffusionModel, PolyDiffusion2D};
use crate::poly::{eval_uni, nonneg_on_reals, real_roots_low_degree, NonnegRoute};

/// Relative tolerances of the pointwise test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Tolerances {
    /// Kernel threshold is `kernel * (1 + |C(x)|_F)`.
    pub kernel: f64,
    /// Drift threshold is `drift * (1 + |b(x)|)`.
    pub drift: f64,
    pub rank_tol: f64,
    pub fd_step: Option<f64>,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            kernel: 1e-7,
            drift: 1e-7,
            rank_tol: DEFAULT_RANK_TOL,
            fd_step: None,
        }
    }
}

impl Tolerances {
    fn correction(&self) -> CorrectionOptions {
        CorrectionOptions {
            rank_tol: self.rank_tol,
            fd_step: self.fd_step,
        }
    }
}

/// Which evaluation produced a verdict.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum VerdictRoute {
    /// Direct evaluation of the kernel and corrected drift conditions.
    Generic,
    /// Planar reduction for rays with a nonzero level-set component.
    Transverse,
    /// Planar reduction for rays normal to a first-coordinate endpoint.
    Tangential,
    /// Ray mixing both components; evaluated generically.
    MixedGeneric,
    /// Interior point: nothing to check.
    Vacuous,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PointVerdict {
    pub point: Vec<f64>,
    pub ray: Vec<f64>,
    /// `|C(x) u|` for the ray as given.
    pub kernel_residual: f64,
    /// `<u, b(x) - correction(x)>` for the ray as given.
    pub corrected_drift_margin: f64,
    pub kernel_tolerance: f64,
    pub drift_tolerance: f64,
    pub pass: bool,
    pub rank_warning: bool,
    pub routes_agree: bool,
    pub route: VerdictRoute,
}

impl PointVerdict {
    /// Trivial pass for a point without normal rays.
    pub fn vacuous(x: &DVector<f64>) -> Self {
        PointVerdict {
            point: x.iter().copied().collect(),
            ray: vec![0.0; x.len()],
            kernel_residual: 0.0,
            corrected_drift_margin: 0.0,
            kernel_tolerance: 0.0,
            drift_tolerance: 0.0,
            pass: true,
            rank_warning: false,
            routes_agree: true,
            route: VerdictRoute::Vacuous,
        }
    }
}

fn validate_ray(model: &DiffusionModel, x: &DVector<f64>, u: &DVector<f64>) -> Result<f64> {
    if x.len() != model.dim() || u.len() != model.dim() {
        return Err(Error::Dimension {
            expected: model.dim(),
            got: if x.len() != model.dim() {
                x.len()
            } else {
                u.len()
            },
        });
    }
    let norm = u.norm();
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(Error::InvalidArgument(
            "normal ray must be nonzero and finite".into(),
        ));
    }
    Ok(norm)
}

#[allow(clippy::too_many_arguments)]
fn verdict(
    x: &DVector<f64>,
    u: &DVector<f64>,
    norm_u: f64,
    kernel_residual: f64,
    margin: f64,
    c_norm: f64,
    b_norm: f64,
    tols: &Tolerances,
    rank_warning: bool,
    routes_agree: bool,
    route: VerdictRoute,
) -> PointVerdict {
    let kernel_tolerance = tols.kernel * (1.0 + c_norm);
    let drift_tolerance = tols.drift * (1.0 + b_norm);
    let pass = kernel_residual / norm_u <= kernel_tolerance && margin / norm_u <= drift_tolerance;
    PointVerdict {
        point: x.iter().copied().collect(),
        ray: u.iter().copied().collect(),
        kernel_residual,
        corrected_drift_margin: margin,
        kernel_tolerance,
        drift_tolerance,
        pass,
        rank_warning,
        routes_agree,
        route,
    }
}

/// Kernel and corrected drift conditions at `x` for the outward normal `u`.
///
/// `u` need not be normalized; thresholds apply to `u / |u|`.
pub fn check_point(
    model: &DiffusionModel,
    x: &DVector<f64>,
    u: &DVector<f64>,
    tols: &Tolerances,
) -> Result<PointVerdict> {
    let norm_u = validate_ray(model, x, u)?;
    let b = model.drift(x)?;
    let c = model.covariance(x)?;
    let corr = drift_correction(model, x, tols.correction())?;
    let kernel_residual = (c.as_matrix() * u).norm();
    let margin = u.dot(&(&b - &corr.value));
    Ok(verdict(
        x,
        u,
        norm_u,
        kernel_residual,
        margin,
        c.as_matrix().norm(),
        b.norm(),
        tols,
        corr.rank_warning,
        corr.routes_agree,
        VerdictRoute::Generic,
    ))
}

/// Description of the boundary sample behind a report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleSpec {
    pub requested: usize,
    pub window: Window,
    pub boundary_points: usize,
    pub rays: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InvarianceReport {
    pub verdicts: Vec<PointVerdict>,
    pub worst_kernel_residual: f64,
    /// `None` when the sample produced no normal rays.
    pub worst_drift_margin: Option<f64>,
    pub overall_pass: bool,
    pub failures: usize,
    pub rank_warnings: usize,
    pub sample_spec: SampleSpec,
}

impl InvarianceReport {
    /// The failing verdict with the largest normalized drift margin, or the
    /// largest kernel residual if no drift margin fails.
    pub fn witness(&self) -> Option<&PointVerdict> {
        let norm = |v: &PointVerdict| v.ray.iter().map(|r| r * r).sum::<f64>().sqrt();
        self.verdicts.iter().filter(|v| !v.pass).max_by(|a, b| {
            let ka = (
                a.corrected_drift_margin / norm(a),
                a.kernel_residual / norm(a),
            );
            let kb = (
                b.corrected_drift_margin / norm(b),
                b.kernel_residual / norm(b),
            );
            ka.partial_cmp(&kb).unwrap_or(std::cmp::Ordering::Equal)
        })
    }
}

/// Pointwise test over every ray at every sampled boundary point.
///
/// Points are evaluated in parallel; the report is identical for any worker
/// count.
pub fn check_domain(
    model: &DiffusionModel,
    domain: &Domain,
    n_samples: usize,
    window: &Window,
    tols: &Tolerances,
) -> Result<InvarianceReport> {
    if domain.dim() != model.dim() {
        return Err(Error::Dimension {
            expected: model.dim(),
            got: domain.dim(),
        });
    }
    let points = domain.boundary_sample(n_samples, window)?;
    let per_point: Vec<Vec<PointVerdict>> = points
        .par_iter()
        .map(|x| {
            let rays = domain.normal_cone_gens(x, default_tol(x))?;
            rays.iter()
                .map(|ray| {
                    let mut v = check_point(model, x, &ray.direction, tols)?;
                    if ray.is_mixed() && matches!(domain, Domain::Composite { .. }) {
                        v.route = VerdictRoute::MixedGeneric;
                    }
                    Ok(v)
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let verdicts: Vec<PointVerdict> = per_point.into_iter().flatten().collect();
    Ok(aggregate(verdicts, n_samples, window.clone(), points.len()))
}

fn aggregate(
    verdicts: Vec<PointVerdict>,
    requested: usize,
    window: Window,
    boundary_points: usize,
) -> InvarianceReport {
    let worst_kernel_residual = verdicts
        .iter()
        .map(|v| v.kernel_residual)
        .fold(0.0, f64::max);
    let worst_drift_margin = verdicts
        .iter()
        .map(|v| v.corrected_drift_margin)
        .reduce(f64::max);
    let failures = verdicts.iter().filter(|v| !v.pass).count();
    let rank_warnings = verdicts.iter().filter(|v| v.rank_warning).count();
    InvarianceReport {
        sample_spec: SampleSpec {
            requested,
            window,
            boundary_points,
            rays: verdicts.len(),
        },
        overall_pass: failures == 0,
        failures,
        rank_warnings,
        worst_kernel_residual,
        worst_drift_margin,
        verdicts,
    }
}

/// Planar reduction of the pointwise test, evaluated from `C`, `b` and the
/// first partials of `C` only.
///
/// Rays with a nonzero level-set component use the transverse form
///
/// ```text
/// C = C11 [[1, -u1/u2], [-u1/u2, u1^2/u2^2]]
/// <u, b> - 1{C11 != 0} / (2|u|^2) [u1 u2 d_u(C11 - C22) + (u2^2 - u1^2) d_u C12] <= 0
/// ```
///
/// with `d_u = u2 d1 - u1 d2`; rays normal to a first-coordinate endpoint use
/// `C11 = C12 = 0` and `u1 (b1 - 1/2 1{C22 != 0} d2 C12) <= 0`. Rays mixing
/// both are evaluated by [`check_point`].
pub fn check_planar_reduction(
    model: &DiffusionModel,
    domain: &Domain,
    x: &DVector<f64>,
    ray: &NormalRay,
    tols: &Tolerances,
) -> Result<PointVerdict> {
    if domain.dim() != 2 || model.dim() != 2 {
        return Err(Error::Dimension {
            expected: 2,
            got: domain.dim().max(model.dim()),
        });
    }
    if ray.components.len() != 2 {
        return Err(Error::InconsistentCone(format!(
            "expected two ray components, got {}",
            ray.components.len()
        )));
    }
    let u = &ray.direction;
    let norm_u = validate_ray(model, x, u)?;
    let (along_first, along_level) = (ray.components[0], ray.components[1]);
    if along_first != 0.0 && along_level != 0.0 {
        let mut v = check_point(model, x, u, tols)?;
        v.route = VerdictRoute::MixedGeneric;
        return Ok(v);
    }
    let b = model.drift(x)?;
    let c_sym = model.covariance(x)?;
    let c = c_sym.as_matrix();
    let (jac, _) = model.cov_jacobian(x, tols.fd_step)?;
    let (d1, d2) = (jac.partial(0), jac.partial(1));
    let c_norm = c.norm();
    let active = |v: f64| v > tols.rank_tol * (1.0 + c_norm);
    let (u1, u2) = (u[0], u[1]);
    let (kernel_residual, margin, route) = if along_level != 0.0 {
        if u2 == 0.0 {
            return Err(Error::InconsistentCone(
                "transverse ray with vanishing second component".into(),
            ));
        }
        let r = u1 / u2;
        let c11 = c[(0, 0)];
        let shape = DMatrix::from_row_slice(2, 2, &[1.0, -r, -r, r * r]);
        let kernel_residual = norm_u * (c - shape * c11).norm();
        let dmat = &d1 * u2 - &d2 * u1;
        let bracket = u1 * u2 * (dmat[(0, 0)] - dmat[(1, 1)]) + (u2 * u2 - u1 * u1) * dmat[(0, 1)];
        let correction = if active(c11) {
            bracket / (2.0 * (u1 * u1 + u2 * u2))
        } else {
            0.0
        };
        let margin = u.dot(&b) - correction;
        (kernel_residual, margin, VerdictRoute::Transverse)
    } else {
        let kernel_residual = u1.abs() * (c[(0, 0)].powi(2) + c[(0, 1)].powi(2)).sqrt();
        let correction = if active(c[(1, 1)]) {
            0.5 * d2[(0, 1)]
        } else {
            0.0
        };
        let margin = u1 * (b[0] - correction);
        (kernel_residual, margin, VerdictRoute::Tangential)
    };
    Ok(verdict(
        x,
        u,
        norm_u,
        kernel_residual,
        margin,
        c_norm,
        b.norm(),
        tols,
        false,
        true,
        route,
    ))
}

/// Which decision procedure produced a closed-form verdict.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// Polynomial identities and exact univariate nonnegativity.
    ClosedForm,
    /// Model outside the reducible class; boundary sampling only.
    SampledFallback,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Refutation {
    pub condition: String,
    pub detail: String,
    /// First coordinate of a boundary point where the condition fails.
    pub witness: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClosedFormVerdict {
    pub state_space: &'static str,
    pub pass: bool,
    pub regime: Regime,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    /// `"strict"` (quadratic drift condition) or `"equality"` (constant).
    pub branch: Option<&'static str>,
    /// Ascending coefficients of the drift polynomial that must be nonnegative.
    pub drift_polynomial: Vec<f64>,
    pub refutations: Vec<Refutation>,
    pub fallback: Option<InvarianceReport>,
}

impl ClosedFormVerdict {
    fn new(state_space: &'static str) -> Self {
        ClosedFormVerdict {
            state_space,
            pass: false,
            regime: Regime::ClosedForm,
            alpha: None,
            beta: None,
            branch: None,
            drift_polynomial: Vec::new(),
            refutations: Vec::new(),
            fallback: None,
        }
    }

    fn refute(&mut self, condition: &str, detail: String, witness: Option<f64>) {
        self.refutations.push(Refutation {
            condition: condition.into(),
            detail,
            witness,
        });
    }

    fn finish(mut self) -> Self {
        self.pass = self.refutations.is_empty();
        self
    }
}

fn coefficient_scale(model: &PolyDiffusion2D) -> f64 {
    let m = model
        .drift1()
        .iter()
        .chain(model.drift2().iter())
        .map(|v| v.abs())
        .fold(0.0, f64::max);
    model
        .cov_coeffs()
        .iter()
        .map(|a| a.amax())
        .fold(m, f64::max)
}

fn coef_tol(model: &PolyDiffusion2D) -> f64 {
    1e-9 * (1.0 + coefficient_scale(model))
}

/// Largest-magnitude point of a polynomial on a grid over `[-10, 10]`.
fn residual_witness(coeffs: &[f64]) -> Option<f64> {
    (0..=200)
        .map(|k| -10.0 + 0.1 * k as f64)
        .map(|x| (x, eval_uni(coeffs, x).abs()))
        .filter(|(_, v)| *v > 0.0)
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(x, _)| x)
}

/// Records a refutation for each listed polynomial with a coefficient above
/// `tol`.
fn require_zero_polys(
    v: &mut ClosedFormVerdict,
    condition: &str,
    polys: &[(&str, Vec<f64>)],
    tol: f64,
) {
    for (name, coeffs) in polys {
        if coeffs.iter().any(|c| c.abs() > tol) {
            v.refute(
                condition,
                format!("{name} does not vanish identically: coefficients {coeffs:?}"),
                residual_witness(coeffs),
            );
        }
    }
}

fn drift_nonneg(v: &mut ClosedFormVerdict, coeffs: Vec<f64>, tol: f64) {
    let verdict =
        nonneg_on_reals(&coeffs, tol, tol).expect("drift polynomial has degree at most three");
    v.branch = match (verdict.route, verdict.effective_degree) {
        (NonnegRoute::Discriminant, _) => Some("strict"),
        (NonnegRoute::Constant, _) => Some("equality"),
        _ => None,
    };
    if !verdict.nonneg {
        let detail = match verdict.route {
            NonnegRoute::LeadingMustVanish => {
                format!(
                    "odd-degree term of degree {} does not vanish",
                    verdict.effective_degree
                )
            }
            NonnegRoute::Discriminant => format!(
                "quadratic is negative somewhere, infimum {:?}",
                verdict.minimum
            ),
            NonnegRoute::Constant => format!("constant term {} is negative", coeffs[0]),
        };
        v.refute("drift", detail, verdict.witness);
    }
    v.drift_polynomial = coeffs;
}

fn entry(m: &Matrix2<f64>, i: usize, j: usize) -> f64 {
    m[(i, j)]
}

/// Exact decision for `R x [0, inf)`: `C(x1, 0) = C11(x1, 0) e1 e1^T` and
/// `b2(x1, 0) - 1/2 1{C11 != 0} d1 C12(x1, 0) >= 0` for all `x1`.
///
/// The drift condition is evaluated in the form it takes once the covariance
/// identity holds.
pub fn check_canonical(model: &PolyDiffusion2D) -> ClosedFormVerdict {
    let mut v = ClosedFormVerdict::new("canonical");
    let tol = coef_tol(model);
    let a = model.cov_coeffs();
    // C(x1, 0) = A0 + A1 x1 + A3 x1^2
    let on_boundary =
        |i: usize, j: usize| vec![entry(&a[0], i, j), entry(&a[1], i, j), entry(&a[3], i, j)];
    require_zero_polys(
        &mut v,
        "covariance",
        &[
            ("C12(x1, 0)", on_boundary(0, 1)),
            ("C22(x1, 0)", on_boundary(1, 1)),
        ],
        tol,
    );
    let c11 = on_boundary(0, 0);
    let b2 = model.drift2();
    let transverse = vec![b2[0], b2[1]];
    let dc12 = [entry(&a[1], 0, 1), 2.0 * entry(&a[3], 0, 1)];
    if c11.iter().all(|c| c.abs() <= tol) {
        drift_nonneg(&mut v, transverse, tol);
    } else {
        let corrected = vec![transverse[0] - 0.5 * dc12[0], transverse[1] - 0.5 * dc12[1]];
        drift_nonneg(&mut v, corrected, tol);
        // where C11 vanishes the projection removes the correction
        let roots = real_roots_low_degree(&c11).unwrap_or_default();
        for r in roots {
            let val = eval_uni(&transverse, r);
            if val < -tol {
                v.refute(
                    "drift",
                    format!("drift {val} < 0 where C11 vanishes"),
                    Some(r),
                );
            }
        }
    }
    v.finish()
}

fn fallback(
    model: &PolyDiffusion2D,
    domain: Domain,
    mut v: ClosedFormVerdict,
) -> Result<ClosedFormVerdict> {
    let window = Window {
        bounds: vec![(-10.0, 10.0), (-110.0, 110.0)],
    };
    let report = check_domain(
        &model.to_generic(),
        &domain,
        201,
        &window,
        &Tolerances::default(),
    )?;
    v.regime = Regime::SampledFallback;
    if let Some(w) = report.witness() {
        v.refute(
            "sampled",
            format!(
                "boundary sample fails with margin {}",
                w.corrected_drift_margin
            ),
            Some(w.point[0]),
        );
    }
    v.fallback = Some(report);
    Ok(v.finish())
}

/// Exact decision for the convex parabolic state space `{x2 >= x1^2}`.
///
/// Affine models are invariant iff `C(x) = alpha [[1, 2 x1], [2 x1, 4 x2]]`
/// for some `alpha >= 0`, and the cubic
/// `-2 p2 x1^3 + (q2 - 2 p1) x1^2 + (q1 - 2 p0) x1 + q0 - alpha` is
/// nonnegative on R (with `b1 = p0 + p1 x1 + p2 x2`, `b2 = q0 + q1 x1 + q2 x2`).
/// Models with quadratic covariance fall back to boundary sampling.
pub fn check_parabolic_convex(model: &PolyDiffusion2D) -> Result<ClosedFormVerdict> {
    let mut v = ClosedFormVerdict::new("parabolic_convex");
    if !model.is_affine() {
        return fallback(model, Domain::parabola(1.0), v);
    }
    let tol = coef_tol(model);
    let s = model.along_parabola(1.0);
    let poly = |i: usize, j: usize| -> Vec<f64> { s.iter().map(|m| m[(i, j)]).collect() };
    let (c11, c12, c22) = (poly(0, 0), poly(0, 1), poly(1, 1));
    // kernel along u = (2 x1, -1): C12 = 2 x1 C11, C22 = 2 x1 C12
    let shifted = |p: &[f64], k: f64| -> Vec<f64> {
        let mut out = vec![0.0; p.len() + 1];
        for (i, c) in p.iter().enumerate() {
            out[i + 1] = k * c;
        }
        out
    };
    let minus = |p: &[f64], q: &[f64]| -> Vec<f64> {
        (0..p.len().max(q.len()))
            .map(|i| p.get(i).copied().unwrap_or(0.0) - q.get(i).copied().unwrap_or(0.0))
            .collect()
    };
    require_zero_polys(
        &mut v,
        "covariance",
        &[
            ("C12 - 2 x1 C11", minus(&c12, &shifted(&c11, 2.0))),
            ("C22 - 2 x1 C12", minus(&c22, &shifted(&c12, 2.0))),
        ],
        tol,
    );
    let alpha = model.cov_coeff(0)[(0, 0)];
    v.alpha = Some(alpha);
    if alpha < -tol {
        v.refute(
            "covariance",
            format!("alpha = {alpha} is negative"),
            Some(0.0),
        );
    }
    let (p, q) = (model.drift1(), model.drift2());
    let cubic = vec![
        q[0] - alpha,
        q[1] - 2.0 * p[0],
        q[2] - 2.0 * p[1],
        -2.0 * p[2],
    ];
    drift_nonneg(&mut v, cubic, tol);
    Ok(v.finish())
}

/// Exact decision for the concave parabolic state space `{x2 >= -x1^2}`
/// when the first coordinate is affine on its own (`C11` and `b1` depend
/// on `x1` only).
///
/// Invariant iff there are `alpha, beta >= 0` with
/// `C(x) = [[alpha, -2 alpha x1], [-2 alpha x1, (4 alpha + beta) x1^2 + beta x2]]`
/// and `-2 p2 x1^3 + (2 p1 - q2) x1^2 + (q1 + 2 p0) x1 + q0 + alpha >= 0` on R.
/// A nonzero `p2` is reported as a refutation of the cubic.
pub fn check_parabolic_concave(model: &PolyDiffusion2D) -> Result<ClosedFormVerdict> {
    let a = model.cov_coeffs();
    let tol = coef_tol(model);
    let off_premise: Vec<usize> = [2, 3, 4, 5]
        .into_iter()
        .filter(|&k| a[k][(0, 0)].abs() > tol)
        .collect();
    if !off_premise.is_empty() {
        return Err(Error::Premise(format!(
            "C11 must be affine in x1 alone; coefficient slots {off_premise:?} are nonzero"
        )));
    }
    let mut v = ClosedFormVerdict::new("parabolic_concave");
    let alpha = a[0][(0, 0)];
    let beta = a[2][(1, 1)];
    v.alpha = Some(alpha);
    v.beta = Some(beta);
    require_zero_polys(
        &mut v,
        "covariance",
        &[
            ("C11 slope in x1", vec![a[1][(0, 0)]]),
            ("C12 constant", vec![a[0][(0, 1)]]),
            ("C22 constant", vec![a[0][(1, 1)]]),
            ("C12 slope + 2 alpha", vec![a[1][(0, 1)] + 2.0 * alpha]),
            ("C22 slope in x1", vec![a[1][(1, 1)]]),
            (
                "x1^2 minus x2 coefficient of C12",
                vec![a[3][(0, 1)] - a[2][(0, 1)]],
            ),
            (
                "x1^2 minus x2 coefficient of C22 - 4 alpha",
                vec![a[3][(1, 1)] - a[2][(1, 1)] - 4.0 * alpha],
            ),
            ("x1 x2 coefficient", vec![a[4][(0, 1)], a[4][(1, 1)]]),
            ("x2^2 coefficient", vec![a[5][(0, 1)], a[5][(1, 1)]]),
        ],
        tol,
    );
    if a[2][(0, 1)].abs() > tol {
        v.refute(
            "covariance",
            format!(
                "off-diagonal x2 coefficient {} breaks positivity inside the domain",
                a[2][(0, 1)]
            ),
            None,
        );
    }
    if alpha < -tol {
        v.refute(
            "covariance",
            format!("alpha = {alpha} is negative"),
            Some(0.0),
        );
    }
    if beta < -tol {
        v.refute("covariance", format!("beta = {beta} is negative"), None);
    }
    if model.is_affine() && alpha > tol {
        v.refute(
            "affine_nondegenerate",
            format!("an affine covariance needs alpha = 0 off the boundary, got alpha = {alpha}"),
            None,
        );
    }
    let (p, q) = (model.drift1(), model.drift2());
    let cubic = vec![
        q[0] + alpha,
        q[1] + 2.0 * p[0],
        2.0 * p[1] - q[2],
        -2.0 * p[2],
    ];
    drift_nonneg(&mut v, cubic, tol);
    Ok(v.finish())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StratonovichComparison {
    /// `<u, sum_j D sigma^j sigma^j>`.
    pub lhs: f64,
    /// `<u, sum_j DC^j (C C^+)^j>` with `C = sigma^2`.
    pub rhs: f64,
    pub abs_diff: f64,
}

/// For `u` in the kernel of a symmetric `sigma(x)`, compares the
/// Stratonovich-type drift term of `sigma` with the projected correction of
/// `C = sigma^2`.
pub fn stratonovich_equiv<F>(
    sigma: F,
    x: &DVector<f64>,
    u: &DVector<f64>,
    h: f64,
) -> Result<StratonovichComparison>
where
    F: Fn(&DVector<f64>) -> DMatrix<f64>,
{
    let d = x.len();
    let s = sigma(x);
    if s.shape() != (d, d) || u.len() != d {
        return Err(Error::Dimension {
            expected: d,
            got: if u.len() != d { u.len() } else { s.nrows() },
        });
    }
    let scale = 1.0 + s.norm();
    let su = (&s * u).norm();
    if su > 1e-8 * scale * u.norm().max(1.0) {
        return Err(Error::Precondition(format!(
            "u is not in the kernel of sigma(x): |sigma u| = {su:e}"
        )));
    }
    // d vec(sigma)/dx: rows j*d..j*d+d give D sigma^j
    let ds = jacobian_fd(&sigma, x, h)?;
    let mut stratonovich = DVector::zeros(d);
    for j in 0..d {
        let block = ds.rows(j * d, d);
        stratonovich += block * s.column(j);
    }
    let field = FnCovariance::new(d, |p: &DVector<f64>| {
        let sp = sigma(p);
        &sp * &sp
    });
    let corr = drift_correction(
        &field,
        x,
        CorrectionOptions {
            rank_tol: DEFAULT_RANK_TOL,
            fd_step: Some(h),
        },
    )?;
    let lhs = u.dot(&stratonovich);
    let rhs = 2.0 * u.dot(&corr.value);
    Ok(StratonovichComparison {
        lhs,
        rhs,
        abs_diff: (lhs - rhs).abs(),
    })
}

/// Value of the generator on `psi(y) = <u, y - x> - kappa/2 |y - x|^2`, with
/// `kappa` fitted so that `psi <= 0` on the domain near `x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MaximumPrincipleCheck {
    pub kappa: f64,
    pub generator_value: f64,
}

pub fn maximum_principle_value(
    model: &DiffusionModel,
    domain: &Domain,
    x: &DVector<f64>,
    ray: &NormalRay,
    radius: f64,
    seed: u64,
) -> Result<MaximumPrincipleCheck> {
    let kappa = domain.fit_proximal_kappa(x, &ray.direction, radius, 400, seed);
    let psi = ProximalTestFunction {
        center: x.clone(),
        normal: ray.direction.clone(),
        kappa,
    };
    let generator_value = apply_generator(model, &psi, x)?;
    Ok(MaximumPrincipleCheck {
        kappa,
        generator_value,
    })
}
