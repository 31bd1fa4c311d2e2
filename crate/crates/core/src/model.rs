//! Diffusion models: a generic callable form and polynomial coefficient forms
//! with exact covariance Jacobians.
//!
//! Models are expected to satisfy a linear growth bound
//! `|b(x)| + |sigma(x)| <= L (1 + |x|)` and to have a covariance that extends
//! to a `C^{1,1}` map around the state space. Neither is verified; the growth
//! constant is carried as documentation only.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};

use crate::error::{Error, Result};
use crate::matcalc::{
    covariance_jacobian, default_fd_step, jacobian_fd, CovJacobian, SymMatrix, SYMMETRY_TOL,
};
use crate::poly::Polynomial;

type VectorFn = Arc<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;
type MatrixFn = Arc<dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync>;

/// Drift and covariance callables on R^d.
#[derive(Clone)]
pub struct DiffusionModel {
    dim: usize,
    drift: VectorFn,
    covariance: MatrixFn,
    cov_jacobian: Option<MatrixFn>,
    growth_const: Option<f64>,
}

impl fmt::Debug for DiffusionModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DiffusionModel")
            .field("dim", &self.dim)
            .field("analytic_jacobian", &self.cov_jacobian.is_some())
            .field("growth_const", &self.growth_const)
            .finish()
    }
}

impl DiffusionModel {
    pub fn new<B, C>(dim: usize, drift: B, covariance: C) -> Self
    where
        B: Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
        C: Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
    {
        assert!(dim > 0, "model dimension must be positive");
        DiffusionModel {
            dim,
            drift: Arc::new(drift),
            covariance: Arc::new(covariance),
            cov_jacobian: None,
            growth_const: None,
        }
    }

    /// Attach an exact `d^2 x d` covariance Jacobian (columns `d vec(C)/dx^k`).
    pub fn with_cov_jacobian<J>(mut self, jac: J) -> Self
    where
        J: Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
    {
        self.cov_jacobian = Some(Arc::new(jac));
        self
    }

    pub fn with_growth_const(mut self, l: f64) -> Result<Self> {
        if !(l > 0.0) || !l.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "growth constant must be > 0, got {l}"
            )));
        }
        self.growth_const = Some(l);
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn growth_const(&self) -> Option<f64> {
        self.growth_const
    }

    pub fn has_analytic_jacobian(&self) -> bool {
        self.cov_jacobian.is_some()
    }

    fn check_dim(&self, x: &DVector<f64>) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::Dimension {
                expected: self.dim,
                got: x.len(),
            });
        }
        Ok(())
    }

    pub fn drift(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_dim(x)?;
        let b = (self.drift)(x);
        if b.len() != self.dim {
            return Err(Error::Dimension {
                expected: self.dim,
                got: b.len(),
            });
        }
        if b.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                point: x.iter().copied().collect(),
            });
        }
        Ok(b)
    }

    pub fn covariance(&self, x: &DVector<f64>) -> Result<SymMatrix> {
        self.check_dim(x)?;
        let c = (self.covariance)(x);
        if c.shape() != (self.dim, self.dim) {
            return Err(Error::Dimension {
                expected: self.dim,
                got: c.nrows(),
            });
        }
        if c.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                point: x.iter().copied().collect(),
            });
        }
        SymMatrix::new(c)
    }

    /// Unchecked covariance evaluation.
    pub fn covariance_raw(&self, x: &DVector<f64>) -> DMatrix<f64> {
        (self.covariance)(x)
    }

    /// Unchecked analytic Jacobian, if the model has one.
    pub fn cov_jacobian_raw(&self, x: &DVector<f64>) -> Option<DMatrix<f64>> {
        self.cov_jacobian.as_ref().map(|j| j(x))
    }

    /// Covariance Jacobian, analytic if available; the flag says which.
    pub fn cov_jacobian(
        &self,
        x: &DVector<f64>,
        fd_step: Option<f64>,
    ) -> Result<(CovJacobian, bool)> {
        covariance_jacobian(self, x, fd_step)
    }

    /// Largest entrywise gap between the analytic Jacobian and central
    /// differences over `points`. `None` when no analytic Jacobian is attached.
    pub fn verify_jacobian(&self, points: &[DVector<f64>]) -> Result<Option<f64>> {
        let Some(jac) = &self.cov_jacobian else {
            return Ok(None);
        };
        let mut worst = 0.0f64;
        for x in points {
            self.check_dim(x)?;
            let fd = jacobian_fd(|p| (self.covariance)(p), x, default_fd_step(x))?;
            let exact = jac(x);
            if exact.shape() != fd.shape() {
                return Err(Error::Dimension {
                    expected: fd.nrows(),
                    got: exact.nrows(),
                });
            }
            worst = worst.max((exact - fd).amax());
        }
        Ok(Some(worst))
    }
}

/// Two-dimensional model with affine drift and quadratic covariance:
///
/// ```text
/// b1(x) = p0 + p1 x1 + p2 x2          b2(x) = q0 + q1 x1 + q2 x2
/// C(x)  = A0 + A1 x1 + A2 x2 + A3 x1^2 + A4 x1 x2 + A5 x2^2
/// ```
///
/// Affine when `A3 = A4 = A5 = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolyDiffusion2D {
    drift1: [f64; 3],
    drift2: [f64; 3],
    cov: [Matrix2<f64>; 6],
}

/// Monomials matching the covariance coefficient slots.
const COV_MONOMIALS: [[u32; 2]; 6] = [[0, 0], [1, 0], [0, 1], [2, 0], [1, 1], [0, 2]];

impl PolyDiffusion2D {
    /// `drift1`/`drift2` hold the coefficients of `1, x1, x2`; `cov[i]` the
    /// matrix multiplying the `i`-th monomial of `1, x1, x2, x1^2, x1 x2, x2^2`.
    pub fn new(drift1: [f64; 3], drift2: [f64; 3], cov: [Matrix2<f64>; 6]) -> Result<Self> {
        let all = drift1
            .iter()
            .chain(&drift2)
            .chain(cov.iter().flat_map(|m| m.iter()));
        if all.into_iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite coefficient".into()));
        }
        let mut sym = cov;
        for m in sym.iter_mut() {
            let asym = (m[(0, 1)] - m[(1, 0)]).abs();
            let tolerance = SYMMETRY_TOL * m.amax();
            if asym > tolerance {
                return Err(Error::SymmetryViolation {
                    asymmetry: asym,
                    tolerance,
                });
            }
            let off = 0.5 * (m[(0, 1)] + m[(1, 0)]);
            m[(0, 1)] = off;
            m[(1, 0)] = off;
        }
        Ok(PolyDiffusion2D {
            drift1,
            drift2,
            cov: sym,
        })
    }

    pub fn zero() -> Self {
        PolyDiffusion2D {
            drift1: [0.0; 3],
            drift2: [0.0; 3],
            cov: [Matrix2::zeros(); 6],
        }
    }

    /// `C(x) = alpha [[1, 2 x1], [2 x1, 4 x2]]`, the covariance that keeps
    /// the epigraph `{x2 >= x1^2}` invariant.
    pub fn gourieroux_sufana(alpha: f64, drift1: [f64; 3], drift2: [f64; 3]) -> Result<Self> {
        let mut cov = [Matrix2::zeros(); 6];
        cov[0] = Matrix2::new(alpha, 0.0, 0.0, 0.0);
        cov[1] = Matrix2::new(0.0, 2.0 * alpha, 2.0 * alpha, 0.0);
        cov[2] = Matrix2::new(0.0, 0.0, 0.0, 4.0 * alpha);
        Self::new(drift1, drift2, cov)
    }

    /// `C(x) = [[alpha, -2 alpha x1], [-2 alpha x1, (4 alpha + beta) x1^2 + beta x2]]`
    /// for the hypograph-complement `{x2 >= -x1^2}`.
    pub fn concave_parabolic(
        alpha: f64,
        beta: f64,
        drift1: [f64; 3],
        drift2: [f64; 3],
    ) -> Result<Self> {
        let mut cov = [Matrix2::zeros(); 6];
        cov[0] = Matrix2::new(alpha, 0.0, 0.0, 0.0);
        cov[1] = Matrix2::new(0.0, -2.0 * alpha, -2.0 * alpha, 0.0);
        cov[2] = Matrix2::new(0.0, 0.0, 0.0, beta);
        cov[3] = Matrix2::new(0.0, 0.0, 0.0, 4.0 * alpha + beta);
        Self::new(drift1, drift2, cov)
    }

    pub fn drift1(&self) -> [f64; 3] {
        self.drift1
    }

    pub fn drift2(&self) -> [f64; 3] {
        self.drift2
    }

    pub fn cov_coeff(&self, i: usize) -> &Matrix2<f64> {
        &self.cov[i]
    }

    pub fn cov_coeffs(&self) -> &[Matrix2<f64>; 6] {
        &self.cov
    }

    pub fn with_drift1(mut self, drift1: [f64; 3]) -> Self {
        self.drift1 = drift1;
        self
    }

    pub fn with_drift2(mut self, drift2: [f64; 3]) -> Self {
        self.drift2 = drift2;
        self
    }

    pub fn is_affine(&self) -> bool {
        self.cov[3..].iter().all(|m| m.iter().all(|&v| v == 0.0))
    }

    pub fn drift_at(&self, x: [f64; 2]) -> Vector2<f64> {
        let lin = |c: &[f64; 3]| c[0] + c[1] * x[0] + c[2] * x[1];
        Vector2::new(lin(&self.drift1), lin(&self.drift2))
    }

    pub fn covariance_at(&self, x: [f64; 2]) -> Matrix2<f64> {
        let [x1, x2] = x;
        self.cov[0]
            + self.cov[1] * x1
            + self.cov[2] * x2
            + self.cov[3] * (x1 * x1)
            + self.cov[4] * (x1 * x2)
            + self.cov[5] * (x2 * x2)
    }

    pub fn eval(&self, x: [f64; 2]) -> (Vector2<f64>, Matrix2<f64>) {
        (self.drift_at(x), self.covariance_at(x))
    }

    /// `dC/dx1` and `dC/dx2`.
    pub fn covariance_partials(&self, x: [f64; 2]) -> [Matrix2<f64>; 2] {
        let [x1, x2] = x;
        [
            self.cov[1] + self.cov[3] * (2.0 * x1) + self.cov[4] * x2,
            self.cov[2] + self.cov[4] * x1 + self.cov[5] * (2.0 * x2),
        ]
    }

    /// Exact covariance Jacobian, columns `vec(dC/dx1)`, `vec(dC/dx2)`.
    pub fn analytic_jacobian(&self, x: [f64; 2]) -> CovJacobian {
        let [d1, d2] = self.covariance_partials(x);
        let data = DMatrix::from_column_slice(4, 2, &[d1.as_slice(), d2.as_slice()].concat());
        CovJacobian::new(2, data).expect("shape is 4x2 with finite entries")
    }

    /// Coefficient matrices of `C(x1, s x1^2)` in ascending powers of `x1`.
    pub fn along_parabola(&self, s: f64) -> [Matrix2<f64>; 5] {
        let c = &self.cov;
        [c[0], c[1], c[2] * s + c[3], c[4] * s, c[5] * (s * s)]
    }

    /// Convex combination `(1 - t) self + t other` of the coefficients.
    pub fn lerp(&self, other: &Self, t: f64) -> Self {
        let mix3 = |a: &[f64; 3], b: &[f64; 3]| [0, 1, 2].map(|i| (1.0 - t) * a[i] + t * b[i]);
        let mut cov = self.cov;
        for (m, o) in cov.iter_mut().zip(&other.cov) {
            *m = *m * (1.0 - t) + o * t;
        }
        PolyDiffusion2D {
            drift1: mix3(&self.drift1, &other.drift1),
            drift2: mix3(&self.drift2, &other.drift2),
            cov,
        }
    }

    /// Polynomial entries of drift and covariance.
    pub fn to_polynomial(&self) -> PolynomialModel {
        let lin = |c: &[f64; 3]| {
            Polynomial::from_pairs(2, &[(c[0], &[0, 0]), (c[1], &[1, 0]), (c[2], &[0, 1])])
        };
        let entry = |i: usize, j: usize| {
            let pairs: Vec<(f64, &[u32])> = COV_MONOMIALS
                .iter()
                .zip(&self.cov)
                .map(|(e, m)| (m[(i, j)], &e[..]))
                .collect();
            Polynomial::from_pairs(2, &pairs)
        };
        PolynomialModel::new(
            vec![lin(&self.drift1), lin(&self.drift2)],
            vec![
                vec![entry(0, 0), entry(0, 1)],
                vec![entry(1, 0), entry(1, 1)],
            ],
        )
        .expect("coefficient form is always a valid polynomial model")
    }

    /// Generic callable form with the exact Jacobian attached.
    pub fn to_generic(&self) -> DiffusionModel {
        let (m1, m2, m3) = (self.clone(), self.clone(), self.clone());
        let pt = |x: &DVector<f64>| [x[0], x[1]];
        DiffusionModel::new(
            2,
            move |x| {
                let b = m1.drift_at(pt(x));
                DVector::from_column_slice(b.as_slice())
            },
            move |x| {
                let c = m2.covariance_at(pt(x));
                DMatrix::from_column_slice(2, 2, c.as_slice())
            },
        )
        .with_cov_jacobian(move |x| m3.analytic_jacobian(pt(x)).as_matrix().clone())
    }
}

/// Polynomial drift and covariance in any dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct PolynomialModel {
    drift: Vec<Polynomial>,
    covariance: Vec<Vec<Polynomial>>,
    /// `partials[k][i][j] = d C_ij / d x_k`
    partials: Vec<Vec<Vec<Polynomial>>>,
}

impl PolynomialModel {
    /// `covariance` must be a full symmetric `d x d` table.
    pub fn new(drift: Vec<Polynomial>, covariance: Vec<Vec<Polynomial>>) -> Result<Self> {
        let d = drift.len();
        if d == 0 {
            return Err(Error::InvalidArgument("empty drift".into()));
        }
        if covariance.len() != d || covariance.iter().any(|r| r.len() != d) {
            return Err(Error::Dimension {
                expected: d,
                got: covariance.len(),
            });
        }
        for p in drift.iter().chain(covariance.iter().flatten()) {
            if p.nvars() != d {
                return Err(Error::Dimension {
                    expected: d,
                    got: p.nvars(),
                });
            }
        }
        for i in 0..d {
            for j in (i + 1)..d {
                if covariance[i][j] != covariance[j][i] {
                    return Err(Error::InvalidArgument(format!(
                        "covariance entries ({i},{j}) and ({j},{i}) differ"
                    )));
                }
            }
        }
        let partials = (0..d)
            .map(|k| {
                covariance
                    .iter()
                    .map(|row| row.iter().map(|p| p.partial(k)).collect())
                    .collect()
            })
            .collect();
        Ok(PolynomialModel {
            drift,
            covariance,
            partials,
        })
    }

    pub fn dim(&self) -> usize {
        self.drift.len()
    }

    pub fn drift_polys(&self) -> &[Polynomial] {
        &self.drift
    }

    pub fn covariance_polys(&self) -> &[Vec<Polynomial>] {
        &self.covariance
    }

    pub fn drift_at(&self, x: &[f64]) -> DVector<f64> {
        DVector::from_iterator(self.dim(), self.drift.iter().map(|p| p.eval(x)))
    }

    pub fn covariance_at(&self, x: &[f64]) -> DMatrix<f64> {
        let d = self.dim();
        DMatrix::from_fn(d, d, |i, j| self.covariance[i][j].eval(x))
    }

    pub fn jacobian_at(&self, x: &[f64]) -> DMatrix<f64> {
        let d = self.dim();
        DMatrix::from_fn(d * d, d, |r, k| self.partials[k][r % d][r / d].eval(x))
    }

    pub fn to_generic(&self) -> DiffusionModel {
        let shared = Arc::new(self.clone());
        let (m1, m2, m3) = (shared.clone(), shared.clone(), shared);
        DiffusionModel::new(
            self.dim(),
            move |x| m1.drift_at(x.as_slice()),
            move |x| m2.covariance_at(x.as_slice()),
        )
        .with_cov_jacobian(move |x| m3.jacobian_at(x.as_slice()))
    }

    /// Coefficient form when `d = 2`, drift is affine and covariance quadratic.
    pub fn to_poly2d(&self) -> Option<PolyDiffusion2D> {
        if self.dim() != 2 || self.drift.iter().any(|p| p.degree() > 1) {
            return None;
        }
        if self.covariance.iter().flatten().any(|p| p.degree() > 2) {
            return None;
        }
        let lin = |p: &Polynomial| {
            [
                p.coefficient(&[0, 0]),
                p.coefficient(&[1, 0]),
                p.coefficient(&[0, 1]),
            ]
        };
        let mut cov = [Matrix2::zeros(); 6];
        for (m, e) in cov.iter_mut().zip(&COV_MONOMIALS) {
            for i in 0..2 {
                for j in 0..2 {
                    m[(i, j)] = self.covariance[i][j].coefficient(e);
                }
            }
        }
        PolyDiffusion2D::new(lin(&self.drift[0]), lin(&self.drift[1]), cov).ok()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_sym(rng: &mut ChaCha8Rng) -> Matrix2<f64> {
        let off = rng.random_range(-1.0..1.0);
        Matrix2::new(
            rng.random_range(-1.0..1.0),
            off,
            off,
            rng.random_range(-1.0..1.0),
        )
    }

    fn random_model(rng: &mut ChaCha8Rng) -> PolyDiffusion2D {
        let mut c3 = || {
            [
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
            ]
        };
        let (p, q) = (c3(), c3());
        let cov = [(); 6].map(|_| random_sym(rng));
        PolyDiffusion2D::new(p, q, cov).unwrap()
    }

    #[test]
    fn zero_model_evaluates_to_zero() {
        let (b, c) = PolyDiffusion2D::zero().eval([3.0, -2.0]);
        assert_eq!(b, Vector2::zeros());
        assert_eq!(c, Matrix2::zeros());
        assert!(PolyDiffusion2D::zero().is_affine());
        let g = PolyDiffusion2D::zero().to_generic();
        let x = DVector::from_vec(vec![1.0, 2.0]);
        assert_eq!(g.drift(&x).unwrap(), DVector::zeros(2));
        assert_eq!(g.covariance(&x).unwrap().as_matrix(), &DMatrix::zeros(2, 2));
    }

    #[test]
    fn gourieroux_sufana_covariance() {
        let m = PolyDiffusion2D::gourieroux_sufana(1.0, [0.0; 3], [0.0; 3]).unwrap();
        assert_eq!(
            m.covariance_at([1.0, 1.0]),
            Matrix2::new(1.0, 2.0, 2.0, 4.0)
        );
        assert!(m.is_affine());
        let j = m.analytic_jacobian([0.3, 7.0]);
        assert_eq!(
            j.partial(0),
            DMatrix::from_row_slice(2, 2, &[0.0, 2.0, 2.0, 0.0])
        );
        assert_eq!(
            j.partial(1),
            DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 4.0])
        );
    }

    #[test]
    fn concave_covariance() {
        let m = PolyDiffusion2D::concave_parabolic(1.0, 2.0, [0.0; 3], [0.0; 3]).unwrap();
        assert_eq!(
            m.covariance_at([1.0, 0.0]),
            Matrix2::new(1.0, -2.0, -2.0, 6.0)
        );
        assert!(!m.is_affine());
    }

    #[test]
    fn asymmetric_coefficient_rejected() {
        let mut cov = [Matrix2::zeros(); 6];
        cov[1] = Matrix2::new(0.0, 1.0, 0.5, 0.0);
        assert!(matches!(
            PolyDiffusion2D::new([0.0; 3], [0.0; 3], cov),
            Err(Error::SymmetryViolation { .. })
        ));
    }

    #[test]
    fn analytic_jacobian_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let m = random_model(&mut rng);
            let g = m.to_generic();
            let pts: Vec<_> = (0..5)
                .map(|_| {
                    DVector::from_vec(vec![
                        rng.random_range(-3.0..3.0),
                        rng.random_range(-3.0..3.0),
                    ])
                })
                .collect();
            let gap = g.verify_jacobian(&pts).unwrap().unwrap();
            assert!(gap < 1e-6, "gap {gap}");
        }
    }

    #[test]
    fn affine_jacobian_is_constant() {
        let m = PolyDiffusion2D::gourieroux_sufana(0.7, [1.0, 0.0, 0.0], [0.5, 0.0, 0.0]).unwrap();
        assert_eq!(
            m.analytic_jacobian([0.0, 0.0]),
            m.analytic_jacobian([5.0, -3.0])
        );
    }

    #[test]
    fn generic_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = random_model(&mut rng);
        let g = m.to_generic();
        let p = m.to_polynomial();
        let pg = p.to_generic();
        for _ in 0..100 {
            let x = [rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)];
            let xv = DVector::from_column_slice(&x);
            let (b, c) = m.eval(x);
            assert_eq!(g.drift(&xv).unwrap().as_slice(), b.as_slice());
            assert_eq!(g.covariance_raw(&xv).as_slice(), c.as_slice());
            assert!((pg.covariance_raw(&xv) - g.covariance_raw(&xv)).amax() < 1e-12);
            assert!(
                (pg.cov_jacobian_raw(&xv).unwrap() - g.cov_jacobian_raw(&xv).unwrap()).amax()
                    < 1e-12
            );
        }
        assert_eq!(p.to_poly2d().unwrap(), m);
    }

    #[test]
    fn evaluation_is_linear_in_coefficients() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let (a, b) = (random_model(&mut rng), random_model(&mut rng));
            let t = rng.random_range(0.0..1.0);
            let mix = a.lerp(&b, t);
            let x = [rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0)];
            let (ba, ca) = a.eval(x);
            let (bb, cb) = b.eval(x);
            let (bm, cm) = mix.eval(x);
            assert!((bm - (ba * (1.0 - t) + bb * t)).amax() < 1e-12);
            assert!((cm - (ca * (1.0 - t) + cb * t)).amax() < 1e-12);
        }
    }

    #[test]
    fn affine_covariance_on_parabola_has_degree_two() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let mut m = random_model(&mut rng);
            for k in 3..6 {
                m.cov[k] = Matrix2::zeros();
            }
            let coeffs = m.along_parabola(1.0);
            assert_eq!(coeffs[3], Matrix2::zeros());
            assert_eq!(coeffs[4], Matrix2::zeros());
            let x1 = rng.random_range(-2.0..2.0);
            let direct = m.covariance_at([x1, x1 * x1]);
            let series = coeffs[0] + coeffs[1] * x1 + coeffs[2] * (x1 * x1);
            assert!((direct - series).amax() < 1e-12);
        }
        // boundary form alpha [[1, 2x1], [2x1, 4x1^2]] forces a constant C11
        let gs = PolyDiffusion2D::gourieroux_sufana(2.0, [0.0; 3], [0.0; 3]).unwrap();
        let c = gs.along_parabola(1.0);
        assert_eq!((c[1][(0, 0)], c[2][(0, 0)]), (0.0, 0.0));
    }

    #[test]
    fn growth_constant_must_be_positive() {
        let m = PolyDiffusion2D::zero().to_generic();
        assert!(m.clone().with_growth_const(-1.0).is_err());
        assert_eq!(m.with_growth_const(2.0).unwrap().growth_const(), Some(2.0));
    }

    #[test]
    fn drift_dimension_checked() {
        let m = DiffusionModel::new(2, |_| DVector::zeros(3), |_| DMatrix::zeros(2, 2));
        assert!(matches!(
            m.drift(&DVector::zeros(2)),
            Err(Error::Dimension { .. })
        ));
        assert!(matches!(
            m.drift(&DVector::zeros(1)),
            Err(Error::Dimension { .. })
        ));
    }
}
