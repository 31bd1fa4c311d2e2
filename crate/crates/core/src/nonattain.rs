//! Boundary non-attainment.
//!
//! With `D` the closure of a connected component of `{Phi < 0}` and
//! `dD = {Phi = 0}`, the interior of `D` is invariant when some `v` satisfies
//!
//! ```text
//! D Phi(x) C(x) = Phi(x) v^T
//! <D Phi(x), b(x) - 1/2 sum_j DC^j(x) e_j> <= 0
//! ```
//!
//! Note the unprojected correction `e_j` in the drift condition, unlike the
//! invariance condition of [`crate::checker`].

use nalgebra::DVector;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{ClosedSet1D, Domain, Window};
use crate::matcalc::unprojected_drift_correction;
use crate::model::DiffusionModel;
use crate::poly::Polynomial;

/// Level function `Phi` with the interior on the negative side.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelBoundary {
    phi: Polynomial,
}

impl LevelBoundary {
    pub fn new(phi: Polynomial) -> Self {
        LevelBoundary { phi }
    }

    pub fn polynomial(&self) -> &Polynomial {
        &self.phi
    }

    pub fn dim(&self) -> usize {
        self.phi.nvars()
    }

    pub fn value(&self, x: &DVector<f64>) -> f64 {
        self.phi.eval(x.as_slice())
    }

    pub fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_vec(self.phi.gradient(x.as_slice()))
    }

    /// `Phi` for domains bounded by a single half-line constraint:
    /// `lo - x_k` for `[lo, inf)`, `x_k - hi` for `(-inf, hi]`, and
    /// `c - phi` or `phi - c` for composites with unconstrained first coordinate.
    pub fn derive(domain: &Domain) -> Option<Self> {
        let half_line = |s: &ClosedSet1D| -> Option<(f64, f64)> {
            match s.intervals() {
                [i] if i.lo.is_finite() && i.hi == f64::INFINITY => Some((i.lo, -1.0)),
                [i] if i.hi.is_finite() && i.lo == f64::NEG_INFINITY => Some((i.hi, 1.0)),
                _ => None,
            }
        };
        match domain {
            Domain::Canonical(f) => {
                let d = f.len();
                let constrained: Vec<usize> = (0..d).filter(|&k| !f[k].is_real_line()).collect();
                let [k] = constrained[..] else {
                    return None;
                };
                let (c, sign) = half_line(&f[k])?;
                let phi = Polynomial::linear(d, k, sign).add(&Polynomial::constant(d, -sign * c));
                Some(LevelBoundary::new(phi))
            }
            Domain::Composite { d1, d2, phi } => {
                if !d1.is_real_line() {
                    return None;
                }
                let (c, sign) = half_line(d2)?;
                Some(LevelBoundary::new(
                    phi.scale(sign).add(&Polynomial::constant(2, -sign * c)),
                ))
            }
        }
    }
}

/// Least-squares fit of `v` in `C(x) grad Phi(x) = Phi(x) v`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VFit {
    pub v: Vec<f64>,
    /// Largest `|C grad Phi - Phi v|` over the samples used.
    pub residual: f64,
    pub samples_used: usize,
}

fn check_model_level(model: &DiffusionModel, level: &LevelBoundary) -> Result<()> {
    if model.dim() != level.dim() {
        return Err(Error::Dimension {
            expected: model.dim(),
            got: level.dim(),
        });
    }
    Ok(())
}

/// Minimizes `sum |C(x) grad Phi(x) - Phi(x) v|^2` over the samples.
pub fn find_v(
    model: &DiffusionModel,
    level: &LevelBoundary,
    samples: &[DVector<f64>],
) -> Result<VFit> {
    check_model_level(model, level)?;
    let d = model.dim();
    if samples.len() < d {
        return Err(Error::DegenerateFit(format!(
            "need at least {d} samples, got {}",
            samples.len()
        )));
    }
    let mut rows = Vec::with_capacity(samples.len());
    for x in samples {
        let c = model.covariance(x)?;
        let g = level.gradient(x);
        rows.push((level.value(x), c.as_matrix() * g));
    }
    let weight: f64 = rows.iter().map(|(p, _)| p * p).sum();
    let scale = rows.iter().map(|(p, _)| p.abs()).fold(0.0, f64::max);
    if weight <= f64::MIN_POSITIVE || scale <= 1e-14 {
        return Err(Error::DegenerateFit(
            "all samples lie on the zero level set".into(),
        ));
    }
    let mut v = DVector::zeros(d);
    for (p, cg) in &rows {
        v += cg * *p;
    }
    v /= weight;
    let residual = rows
        .iter()
        .map(|(p, cg)| (cg - &v * *p).norm())
        .fold(0.0, f64::max);
    Ok(VFit {
        v: v.iter().copied().collect(),
        residual,
        samples_used: rows.len(),
    })
}

/// [`find_v`] restricted to samples with `0 < |Phi| <= radius`.
pub fn find_v_local(
    model: &DiffusionModel,
    level: &LevelBoundary,
    samples: &[DVector<f64>],
    radius: f64,
) -> Result<VFit> {
    let near: Vec<DVector<f64>> = samples
        .iter()
        .filter(|x| {
            let p = level.value(x).abs();
            p > 0.0 && p <= radius
        })
        .cloned()
        .collect();
    find_v(model, level, &near)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NonAttainmentSample {
    pub point: Vec<f64>,
    pub level_value: f64,
    /// `|C grad Phi - Phi v|`.
    pub kernel_residual: f64,
    /// `<grad Phi, b - 1/2 sum_j DC^j e_j>`.
    pub drift_margin: f64,
    pub kernel_tolerance: f64,
    pub drift_tolerance: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NonAttainmentVerdict {
    pub v: Vec<f64>,
    pub worst_kernel_residual: f64,
    pub worst_drift_margin: f64,
    pub kernel_pass: bool,
    pub drift_pass: bool,
    pub pass: bool,
    pub samples: Vec<NonAttainmentSample>,
}

/// Evaluates both conditions at every sample.
pub fn check_non_attainment(
    model: &DiffusionModel,
    level: &LevelBoundary,
    v: &[f64],
    samples: &[DVector<f64>],
) -> Result<NonAttainmentVerdict> {
    check_model_level(model, level)?;
    if v.len() != model.dim() {
        return Err(Error::Dimension {
            expected: model.dim(),
            got: v.len(),
        });
    }
    if samples.is_empty() {
        return Err(Error::EmptySample);
    }
    let vv = DVector::from_column_slice(v);
    let mut out = Vec::with_capacity(samples.len());
    for x in samples {
        let b = model.drift(x)?;
        let c = model.covariance(x)?;
        let g = level.gradient(x);
        let p = level.value(x);
        let cg = c.as_matrix() * &g;
        let kernel_residual = (&cg - &vv * p).norm();
        let corr = unprojected_drift_correction(model, x, None)?;
        let drift_margin = g.dot(&(&b - &corr));
        let kernel_tolerance = 1e-9 * (1.0 + cg.norm() + p.abs() * vv.norm());
        let drift_tolerance = 1e-9 * (1.0 + g.norm() * (b.norm() + corr.norm()));
        out.push(NonAttainmentSample {
            point: x.iter().copied().collect(),
            level_value: p,
            kernel_residual,
            drift_margin,
            kernel_tolerance,
            drift_tolerance,
            pass: kernel_residual <= kernel_tolerance && drift_margin <= drift_tolerance,
        });
    }
    let kernel_pass = out.iter().all(|s| s.kernel_residual <= s.kernel_tolerance);
    let drift_pass = out.iter().all(|s| s.drift_margin <= s.drift_tolerance);
    Ok(NonAttainmentVerdict {
        v: v.to_vec(),
        worst_kernel_residual: out.iter().map(|s| s.kernel_residual).fold(0.0, f64::max),
        worst_drift_margin: out
            .iter()
            .map(|s| s.drift_margin)
            .fold(f64::NEG_INFINITY, f64::max),
        kernel_pass,
        drift_pass,
        pass: kernel_pass && drift_pass,
        samples: out,
    })
}

/// Points `x - s grad Phi / |grad Phi|^2` (so `Phi ~ -s`) for each offset,
/// kept when inside `domain`.
pub fn inward_samples(
    domain: &Domain,
    level: &LevelBoundary,
    boundary: &[DVector<f64>],
    offsets: &[f64],
) -> Vec<DVector<f64>> {
    let mut out = Vec::new();
    for x in boundary {
        let g = level.gradient(x);
        let n2 = g.norm_squared();
        if n2 == 0.0 {
            continue;
        }
        for &s in offsets {
            let y = x - &g * (s / n2);
            if domain.contains(&y, 0.0) && level.value(&y) < 0.0 {
                out.push(y);
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryOptions {
    pub samples: usize,
    pub window: Window,
    /// Level-set distance of the samples used for the local fit of `v`.
    pub radius: f64,
    /// Fixed `v`; fitted locally when `None`.
    pub v: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NearBoundaryKernel {
    pub pass: bool,
    pub worst_residual: f64,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundaryNonAttainment {
    pub v: Vec<f64>,
    pub local_fit: VFit,
    /// Fit over points up to distance 2 from the boundary; reported only.
    pub global_fit: Option<VFit>,
    pub global_fit_error: Option<String>,
    pub boundary: NonAttainmentVerdict,
    pub near_boundary_kernel: NearBoundaryKernel,
    pub pass: bool,
}

/// Both non-attainment conditions at the sampled points of the zero level
/// set, plus the kernel condition at points just inside it.
///
/// The drift condition is only required on the boundary itself; away from
/// it the inequality need not hold for attainment to fail (the CIR drift
/// condition is violated for large `x` whatever the parameters).
pub fn non_attainment_on_boundary(
    model: &DiffusionModel,
    domain: &Domain,
    level: &LevelBoundary,
    opts: &BoundaryOptions,
) -> Result<BoundaryNonAttainment> {
    if !(opts.radius > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "radius must be positive, got {}",
            opts.radius
        )));
    }
    let boundary: Vec<DVector<f64>> = domain
        .boundary_sample(opts.samples, &opts.window)?
        .into_iter()
        .filter(|x| level.value(x).abs() <= 1e-9 * (1.0 + x.norm()))
        .collect();
    if boundary.is_empty() {
        return Err(Error::EmptySample);
    }
    let r = opts.radius;
    let local_points = inward_samples(domain, level, &boundary, &[r, r / 2.0, r / 4.0, r / 8.0]);
    let global_points = inward_samples(domain, level, &boundary, &[0.1, 0.5, 1.0, 2.0]);
    let local_fit = find_v_local(model, level, &local_points, 2.0 * r)?;
    let global = find_v(model, level, &global_points);
    let v = opts.v.clone().unwrap_or_else(|| local_fit.v.clone());
    let at_boundary = check_non_attainment(model, level, &v, &boundary)?;
    let near = check_non_attainment(model, level, &v, &local_points)?;
    Ok(BoundaryNonAttainment {
        pass: at_boundary.pass && near.kernel_pass,
        v,
        local_fit,
        global_fit_error: global.as_ref().err().map(|e| e.to_string()),
        global_fit: global.ok(),
        boundary: at_boundary,
        near_boundary_kernel: NearBoundaryKernel {
            pass: near.kernel_pass,
            worst_residual: near.worst_kernel_residual,
            samples: near.samples.len(),
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn cir(kappa_theta: f64, kappa: f64, eta: f64) -> DiffusionModel {
        DiffusionModel::new(
            1,
            move |x| DVector::from_element(1, kappa_theta - kappa * x[0]),
            move |x| DMatrix::from_element(1, 1, eta * eta * x[0]),
        )
    }

    fn jacobi(kappa_theta: f64, kappa: f64, eta: f64) -> DiffusionModel {
        DiffusionModel::new(
            1,
            move |x| DVector::from_element(1, kappa_theta - kappa * x[0]),
            move |x| DMatrix::from_element(1, 1, eta * eta * x[0] * (1.0 - x[0])),
        )
    }

    fn minus_x() -> LevelBoundary {
        LevelBoundary::new(Polynomial::linear(1, 0, -1.0))
    }

    fn pts(xs: &[f64]) -> Vec<DVector<f64>> {
        xs.iter().map(|&x| DVector::from_element(1, x)).collect()
    }

    #[test]
    fn cir_fit_is_exact() {
        let eta = 0.8;
        let fit = find_v(&cir(0.5, 1.0, eta), &minus_x(), &pts(&[0.1, 0.5, 2.0])).unwrap();
        assert!((fit.v[0] - eta * eta).abs() < 1e-14);
        assert!(fit.residual < 1e-12);
    }

    #[test]
    fn cir_threshold() {
        let level = minus_x();
        let boundary = pts(&[0.0]);
        for (kt, expect) in [(0.6, true), (0.5, true), (0.4, false)] {
            let r = check_non_attainment(&cir(kt, 1.0, 1.0), &level, &[1.0], &boundary).unwrap();
            assert_eq!(r.pass, expect, "kappa theta {kt}");
        }
    }

    #[test]
    fn jacobi_fit_is_local() {
        let eta = 1.0;
        let m = jacobi(0.5, 1.0, eta);
        let samples = pts(&[1e-6, 2e-6, 5e-6, 0.3, 0.6, 0.9]);
        let global = find_v(&m, &minus_x(), &samples).unwrap();
        assert!(global.residual > 1e-3);
        let local = find_v_local(&m, &minus_x(), &samples, 1e-5).unwrap();
        assert!((local.v[0] - eta * eta).abs() < 1e-5);
        assert!(local.residual < 1e-9);
        let r = check_non_attainment(&m, &minus_x(), &local.v, &pts(&[0.0])).unwrap();
        assert!(r.pass);
        assert!(r.worst_drift_margin.abs() < 1e-9);
    }

    #[test]
    fn zero_data_gives_zero_v() {
        let m = DiffusionModel::new(
            2,
            |_| DVector::zeros(2),
            |_| DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]),
        );
        let level = LevelBoundary::new(Polynomial::linear(2, 1, -1.0));
        let samples = vec![
            DVector::from_vec(vec![0.0, 1.0]),
            DVector::from_vec(vec![2.0, 0.5]),
        ];
        let fit = find_v(&m, &level, &samples).unwrap();
        assert_eq!(fit.v, vec![0.0, 0.0]);
    }

    #[test]
    fn boundary_only_samples_are_degenerate() {
        let err = find_v(&cir(0.5, 1.0, 1.0), &minus_x(), &pts(&[0.0, 0.0])).unwrap_err();
        assert!(matches!(err, Error::DegenerateFit(_)));
    }

    #[test]
    fn affine_correction_is_column_sum() {
        // C(x) = A0 + A1 x1 + A2 x2; 1/2 sum_j (A^j)^j
        let a1 = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 2.0]);
        let a2 = DMatrix::from_row_slice(2, 2, &[0.0, 0.3, 0.3, 4.0]);
        let (c1, c2) = (a1.clone(), a2.clone());
        let m = DiffusionModel::new(2, |_| DVector::zeros(2), move |x| &c1 * x[0] + &c2 * x[1]);
        let corr =
            unprojected_drift_correction(&m, &DVector::from_vec(vec![0.4, 0.7]), None).unwrap();
        let expected = (a1.column(0) + a2.column(1)) * 0.5;
        assert!((corr - expected).amax() < 1e-9);
    }

    #[test]
    fn linear_family_threshold() {
        let level = minus_x();
        for (b0, c) in [(0.3, 0.5), (0.2, 0.5), (1.0, 2.0), (0.99, 2.0), (0.0, 0.0)] {
            let m = DiffusionModel::new(
                1,
                move |_| DVector::from_element(1, b0),
                move |x| DMatrix::from_element(1, 1, c * x[0]),
            );
            let fit = find_v(&m, &level, &pts(&[0.5, 1.0, 3.0])).unwrap();
            assert!((fit.v[0] - c).abs() < 1e-12 && fit.residual <= 1e-12);
            let r = check_non_attainment(&m, &level, &fit.v, &pts(&[0.0])).unwrap();
            assert_eq!(r.pass, b0 >= c / 2.0, "b0 {b0} c {c}");
        }
    }

    #[test]
    fn derived_levels() {
        let l = LevelBoundary::derive(&Domain::half_line()).unwrap();
        assert_eq!(l.value(&DVector::from_element(1, 2.0)), -2.0);
        let l = LevelBoundary::derive(&Domain::parabola(1.0)).unwrap();
        assert_eq!(l.value(&DVector::from_vec(vec![1.0, 3.0])), -2.0);
        let box1 = Domain::Canonical(vec![ClosedSet1D::new(&[(0.0, 1.0)]).unwrap()]);
        assert!(LevelBoundary::derive(&box1).is_none());
    }

    #[test]
    fn boundary_flow_matches_threshold() {
        let opts = BoundaryOptions {
            samples: 11,
            window: Window::uniform(1, -1.0, 1.0),
            radius: 1e-5,
            v: None,
        };
        for (kt, expect) in [(0.6, true), (0.5, true), (0.49, false)] {
            let r = non_attainment_on_boundary(
                &cir(kt, 1.0, 1.0),
                &Domain::half_line(),
                &minus_x(),
                &opts,
            )
            .unwrap();
            assert_eq!(r.pass, expect, "kappa theta {kt}");
            assert!((r.v[0] - 1.0).abs() < 1e-9);
        }
        let unit = Domain::Canonical(vec![ClosedSet1D::new(&[(0.0, 1.0)]).unwrap()]);
        let r =
            non_attainment_on_boundary(&jacobi(0.5, 1.0, 1.0), &unit, &minus_x(), &opts).unwrap();
        assert!(r.pass);
        assert_eq!(r.boundary.samples.len(), 1);
        let wrong_v = BoundaryOptions {
            v: Some(vec![3.0]),
            ..opts
        };
        let r = non_attainment_on_boundary(
            &cir(0.6, 1.0, 1.0),
            &Domain::half_line(),
            &minus_x(),
            &wrong_v,
        )
        .unwrap();
        assert!(!r.pass && !r.near_boundary_kernel.pass);
    }

    #[test]
    fn inward_offsets() {
        let s = inward_samples(
            &Domain::half_line(),
            &minus_x(),
            &pts(&[0.0]),
            &[1e-3, 1e-6],
        );
        assert_eq!(s, pts(&[1e-3, 1e-6]));
    }
}
