//! Matrix calculus kernel.
//!
//! Kronecker products and column-stacking `vec`, spectral pseudoinverse and
//! image projection of symmetric matrices, finite-difference Jacobians of
//! matrix-valued maps (stacked as `d(vec F)/d(x^T)`), and the
//! pseudoinverse-projected drift correction
//!
//! ```text
//! v_i = 1/2 sum_j [ DC^j(x) (C C^+)^j(x) ]_i
//! ```
//!
//! which is computed along two independent routes: the vec-Jacobian times
//! projection product, and the sum of directional derivatives
//! `D_q (C q)(x)` over the eigenvectors `q` spanning the image of `C(x)`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::model::DiffusionModel;

/// Default relative threshold for the numeric rank of a symmetric matrix.
pub const DEFAULT_RANK_TOL: f64 = 1e-8;

/// Relative asymmetry accepted by [`SymMatrix::new`].
pub const SYMMETRY_TOL: f64 = 1e-12;

/// Relative accuracy assumed for a central finite difference when comparing
/// the two drift-correction routes.
const FD_TOL: f64 = 1e-6;

/// A finite, symmetric, square matrix.
///
/// Construction symmetrizes the input after checking the asymmetry is within
/// [`SYMMETRY_TOL`] relative to the largest entry.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix(DMatrix<f64>);

impl SymMatrix {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::Dimension {
                expected: m.nrows(),
                got: m.ncols(),
            });
        }
        if m.nrows() == 0 {
            return Err(Error::InvalidArgument("empty matrix".into()));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(
                "matrix has non-finite entries".into(),
            ));
        }
        let scale = m.amax();
        let mut asym = 0.0f64;
        for i in 0..m.nrows() {
            for j in (i + 1)..m.ncols() {
                asym = asym.max((m[(i, j)] - m[(j, i)]).abs());
            }
        }
        let tolerance = SYMMETRY_TOL * scale;
        if asym > tolerance {
            return Err(Error::SymmetryViolation {
                asymmetry: asym,
                tolerance,
            });
        }
        let sym = (&m + m.transpose()) * 0.5;
        Ok(SymMatrix(sym))
    }

    pub fn zeros(d: usize) -> Self {
        SymMatrix(DMatrix::zeros(d, d))
    }

    pub fn identity(d: usize) -> Self {
        SymMatrix(DMatrix::identity(d, d))
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        SymMatrix(DMatrix::from_diagonal(&DVector::from_column_slice(diag)))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }
}

impl AsRef<DMatrix<f64>> for SymMatrix {
    fn as_ref(&self) -> &DMatrix<f64> {
        &self.0
    }
}

/// Eigendecomposition `A = Q diag(lambda) Q^T` with eigenvalues sorted in
/// descending order.
///
/// Each eigenvector is signed so that its largest-magnitude entry is positive.
#[derive(Debug, Clone)]
pub struct SpectralDecomp {
    pub eigenvalues: DVector<f64>,
    pub eigenvectors: DMatrix<f64>,
    pub rank_tol: f64,
    pub rank: usize,
}

impl SpectralDecomp {
    /// Eigenvalues with magnitude at or below this value count as zero.
    pub fn threshold(&self) -> f64 {
        self.rank_tol * self.eigenvalues.amax().max(1.0)
    }

    pub fn is_active(&self, i: usize) -> bool {
        self.eigenvalues[i].abs() > self.threshold()
    }

    /// True when some eigenvalue lies within a factor 10 of the threshold.
    pub fn rank_ambiguous(&self) -> bool {
        let thr = self.threshold();
        thr > 0.0
            && self
                .eigenvalues
                .iter()
                .any(|l| l.abs() > thr / 10.0 && l.abs() <= thr * 10.0)
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues.min()
    }

    pub fn reconstruct(&self) -> DMatrix<f64> {
        let q = &self.eigenvectors;
        q * DMatrix::from_diagonal(&self.eigenvalues) * q.transpose()
    }

    /// Fails if an eigenvalue is negative beyond the rank threshold.
    pub fn require_psd(&self) -> Result<()> {
        let slack = self.threshold();
        let min = self.min_eigenvalue();
        if min < -slack {
            return Err(Error::PsdViolation {
                eigenvalue: min,
                slack,
            });
        }
        Ok(())
    }

    fn spectral_map(&self, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
        let d = self.eigenvalues.len();
        let mapped = DVector::from_fn(d, |i, _| {
            if self.is_active(i) {
                f(self.eigenvalues[i])
            } else {
                0.0
            }
        });
        let q = &self.eigenvectors;
        let m = q * DMatrix::from_diagonal(&mapped) * q.transpose();
        (&m + m.transpose()) * 0.5
    }
}

/// Symmetric eigendecomposition with descending eigenvalues.
pub fn sym_eig(a: &SymMatrix, rank_tol: f64) -> Result<SpectralDecomp> {
    if !(rank_tol >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "rank_tol must be >= 0, got {rank_tol}"
        )));
    }
    let d = a.dim();
    let eig = SymmetricEigen::new(a.as_matrix().clone());
    let mut order: Vec<usize> = (0..d).collect();
    // stable: equal eigenvalues keep solver order
    order.sort_by(|&i, &j| {
        eig.eigenvalues[j]
            .partial_cmp(&eig.eigenvalues[i])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let eigenvalues = DVector::from_fn(d, |k, _| eig.eigenvalues[order[k]]);
    let mut eigenvectors = DMatrix::zeros(d, d);
    for (k, &src) in order.iter().enumerate() {
        let mut col = eig.eigenvectors.column(src).into_owned();
        let mut imax = 0;
        for i in 1..d {
            if col[i].abs() > col[imax].abs() {
                imax = i;
            }
        }
        if col[imax] < 0.0 {
            col.neg_mut();
        }
        eigenvectors.set_column(k, &col);
    }
    let mut decomp = SpectralDecomp {
        eigenvalues,
        eigenvectors,
        rank_tol,
        rank: 0,
    };
    decomp.rank = (0..d).filter(|&i| decomp.is_active(i)).count();
    Ok(decomp)
}

/// Moore-Penrose pseudoinverse `Q Lambda^+ Q^T` of a symmetric matrix.
pub fn sym_pinv(a: &SymMatrix, rank_tol: f64) -> Result<SymMatrix> {
    let decomp = sym_eig(a, rank_tol)?;
    Ok(SymMatrix(decomp.spectral_map(|l| 1.0 / l)))
}

/// Orthogonal projection `A A^+` onto the image of a symmetric matrix.
pub fn proj_image(a: &SymMatrix, rank_tol: f64) -> Result<SymMatrix> {
    let decomp = sym_eig(a, rank_tol)?;
    Ok(SymMatrix(decomp.spectral_map(|_| 1.0)))
}

/// Kronecker product with the block layout `[a_ij B]`.
pub fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let (m1, n1) = a.shape();
    let (m2, n2) = b.shape();
    DMatrix::from_fn(m1 * m2, n1 * n2, |r, c| {
        a[(r / m2, c / n2)] * b[(r % m2, c % n2)]
    })
}

/// Stacks the columns of `a` top to bottom.
pub fn vec(a: &DMatrix<f64>) -> DVector<f64> {
    // nalgebra storage is column-major
    DVector::from_column_slice(a.as_slice())
}

/// Inverse of [`vec`] for an `m x n` target.
pub fn unvec(v: &DVector<f64>, m: usize, n: usize) -> Result<DMatrix<f64>> {
    if v.len() != m * n {
        return Err(Error::Dimension {
            expected: m * n,
            got: v.len(),
        });
    }
    Ok(DMatrix::from_column_slice(m, n, v.as_slice()))
}

/// Default central-difference step `1e-5 (1 + |x|)`.
pub fn default_fd_step(x: &DVector<f64>) -> f64 {
    1e-5 * (1.0 + x.norm())
}

/// Central-difference Jacobian `d vec(F) / d x^T`, an `mp x d` matrix.
pub fn jacobian_fd<F>(f: F, x: &DVector<f64>, h: f64) -> Result<DMatrix<f64>>
where
    F: Fn(&DVector<f64>) -> DMatrix<f64>,
{
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "finite-difference step must be > 0, got {h}"
        )));
    }
    let d = x.len();
    let eval = |p: &DVector<f64>| -> Result<DVector<f64>> {
        let v = vec(&f(p));
        if v.iter().any(|e| !e.is_finite()) {
            return Err(Error::NonFinite {
                point: p.iter().copied().collect(),
            });
        }
        Ok(v)
    };
    let mut columns: Vec<DVector<f64>> = Vec::with_capacity(d);
    for k in 0..d {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[k] += h;
        xm[k] -= h;
        let fp = eval(&xp)?;
        let fm = eval(&xm)?;
        if fp.len() != fm.len() {
            return Err(Error::Dimension {
                expected: fp.len(),
                got: fm.len(),
            });
        }
        columns.push((fp - fm) / (2.0 * h));
    }
    if d == 0 {
        return Ok(DMatrix::zeros(vec(&f(x)).len(), 0));
    }
    Ok(DMatrix::from_columns(&columns))
}

/// Jacobian of a covariance field: a `d^2 x d` matrix whose column `k` is
/// `d vec(C) / d x^k`.
#[derive(Debug, Clone, PartialEq)]
pub struct CovJacobian {
    dim: usize,
    data: DMatrix<f64>,
}

impl CovJacobian {
    pub fn new(dim: usize, data: DMatrix<f64>) -> Result<Self> {
        if data.nrows() != dim * dim || data.ncols() != dim {
            return Err(Error::Dimension {
                expected: dim * dim,
                got: data.nrows(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(
                "covariance Jacobian has non-finite entries".into(),
            ));
        }
        Ok(CovJacobian { dim, data })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.data
    }

    /// `dC/dx^k` as a `d x d` matrix.
    pub fn partial(&self, k: usize) -> DMatrix<f64> {
        DMatrix::from_column_slice(self.dim, self.dim, self.data.column(k).as_slice())
    }

    /// `DC^j`: the `d x d` Jacobian of the `j`-th column of `C`.
    pub fn column_block(&self, j: usize) -> DMatrix<f64> {
        self.data.rows(j * self.dim, self.dim).into_owned()
    }

    /// Largest asymmetry over the `d x d` slices.
    pub fn max_slice_asymmetry(&self) -> f64 {
        (0..self.dim)
            .map(|k| {
                let s = self.partial(k);
                (&s - s.transpose()).amax()
            })
            .fold(0.0, f64::max)
    }
}

/// Source of covariance matrices `C(x)` and, optionally, their exact Jacobian.
pub trait CovarianceField {
    fn dim(&self) -> usize;

    fn covariance_at(&self, x: &DVector<f64>) -> DMatrix<f64>;

    fn covariance_jacobian_at(&self, _x: &DVector<f64>) -> Option<DMatrix<f64>> {
        None
    }
}

/// Closure-backed [`CovarianceField`] without an analytic Jacobian.
pub struct FnCovariance<F> {
    dim: usize,
    f: F,
}

impl<F> FnCovariance<F>
where
    F: Fn(&DVector<f64>) -> DMatrix<f64>,
{
    pub fn new(dim: usize, f: F) -> Self {
        FnCovariance { dim, f }
    }
}

impl<F> CovarianceField for FnCovariance<F>
where
    F: Fn(&DVector<f64>) -> DMatrix<f64>,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn covariance_at(&self, x: &DVector<f64>) -> DMatrix<f64> {
        (self.f)(x)
    }
}

impl CovarianceField for DiffusionModel {
    fn dim(&self) -> usize {
        DiffusionModel::dim(self)
    }

    fn covariance_at(&self, x: &DVector<f64>) -> DMatrix<f64> {
        self.covariance_raw(x)
    }

    fn covariance_jacobian_at(&self, x: &DVector<f64>) -> Option<DMatrix<f64>> {
        self.cov_jacobian_raw(x)
    }
}

fn check_point_dim<C: CovarianceField + ?Sized>(field: &C, x: &DVector<f64>) -> Result<()> {
    if x.len() != field.dim() {
        return Err(Error::Dimension {
            expected: field.dim(),
            got: x.len(),
        });
    }
    Ok(())
}

fn eval_sym<C: CovarianceField + ?Sized>(field: &C, x: &DVector<f64>) -> Result<SymMatrix> {
    let c = field.covariance_at(x);
    if c.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            point: x.iter().copied().collect(),
        });
    }
    SymMatrix::new(c)
}

/// Covariance Jacobian at `x`: analytic when the field provides one,
/// central differences otherwise. The flag reports which.
pub fn covariance_jacobian<C: CovarianceField + ?Sized>(
    field: &C,
    x: &DVector<f64>,
    h: Option<f64>,
) -> Result<(CovJacobian, bool)> {
    check_point_dim(field, x)?;
    let d = field.dim();
    if let Some(j) = field.covariance_jacobian_at(x) {
        return Ok((CovJacobian::new(d, j)?, true));
    }
    let step = h.unwrap_or_else(|| default_fd_step(x));
    let j = jacobian_fd(|p| field.covariance_at(p), x, step)?;
    Ok((CovJacobian::new(d, j)?, false))
}

/// Central-difference estimate of `D_q (C q)(x) = lim (C(x+tq) q - C(x) q) / t`.
pub fn dir_derivative<C: CovarianceField + ?Sized>(
    field: &C,
    x: &DVector<f64>,
    q: &DVector<f64>,
    h: f64,
) -> Result<DVector<f64>> {
    check_point_dim(field, x)?;
    if q.len() != x.len() {
        return Err(Error::Dimension {
            expected: x.len(),
            got: q.len(),
        });
    }
    if (q.norm() - 1.0).abs() > 1e-10 {
        return Err(Error::InvalidArgument(format!(
            "direction must be a unit vector, |q| = {}",
            q.norm()
        )));
    }
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "finite-difference step must be > 0, got {h}"
        )));
    }
    let xp = x + q * h;
    let xm = x - q * h;
    let cp = field.covariance_at(&xp) * q;
    let cm = field.covariance_at(&xm) * q;
    for (v, p) in [(&cp, &xp), (&cm, &xm)] {
        if v.iter().any(|e| !e.is_finite()) {
            return Err(Error::NonFinite {
                point: p.iter().copied().collect(),
            });
        }
    }
    Ok((cp - cm) / (2.0 * h))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorrectionOptions {
    pub rank_tol: f64,
    /// Finite-difference step; `None` selects [`default_fd_step`].
    pub fd_step: Option<f64>,
}

impl Default for CorrectionOptions {
    fn default() -> Self {
        CorrectionOptions {
            rank_tol: DEFAULT_RANK_TOL,
            fd_step: None,
        }
    }
}

/// Result of [`drift_correction`].
#[derive(Debug, Clone)]
pub struct DriftCorrection {
    /// `1/2 sum_j DC^j (C C^+)^j` from the Jacobian/projection product.
    pub value: DVector<f64>,
    /// `1/2 sum_{j <= r} D_{q_j}(C q_j)` over the image eigenvectors.
    pub directional: DVector<f64>,
    pub route_gap: f64,
    pub route_tolerance: f64,
    pub routes_agree: bool,
    pub rank: usize,
    pub rank_warning: bool,
    pub analytic_jacobian: bool,
}

/// `1/2 sum_j DC^j P^j` for a weight matrix `P`.
fn weighted_correction(dc: &CovJacobian, weights: &DMatrix<f64>) -> DVector<f64> {
    let d = dc.dim();
    let mut v = DVector::zeros(d);
    for j in 0..d {
        v += dc.column_block(j) * weights.column(j);
    }
    v * 0.5
}

/// Pseudoinverse-corrected drift term `1/2 sum_j DC^j(x) (C C^+)^j(x)`.
///
/// `C(x)` must be positive semi-definite up to the rank threshold. A rank
/// decision close to the threshold sets `rank_warning` rather than failing.
pub fn drift_correction<C: CovarianceField + ?Sized>(
    field: &C,
    x: &DVector<f64>,
    opts: CorrectionOptions,
) -> Result<DriftCorrection> {
    check_point_dim(field, x)?;
    let c = eval_sym(field, x)?;
    let decomp = sym_eig(&c, opts.rank_tol)?;
    decomp.require_psd()?;
    let projection = decomp.spectral_map(|_| 1.0);
    let (dc, analytic) = covariance_jacobian(field, x, opts.fd_step)?;
    let value = weighted_correction(&dc, &projection);

    let h = opts.fd_step.unwrap_or_else(|| default_fd_step(x));
    let d = field.dim();
    let mut directional = DVector::zeros(d);
    for j in 0..d {
        if decomp.eigenvalues[j] > decomp.threshold() {
            let q = decomp.eigenvectors.column(j).into_owned();
            directional += dir_derivative(field, x, &q, h)?;
        }
    }
    directional *= 0.5;

    let route_gap = (&value - &directional).amax();
    let route_tolerance = 10.0 * FD_TOL * (1.0 + dc.as_matrix().amax());
    Ok(DriftCorrection {
        value,
        directional,
        route_gap,
        route_tolerance,
        routes_agree: route_gap <= route_tolerance,
        rank: decomp.rank,
        rank_warning: decomp.rank_ambiguous(),
        analytic_jacobian: analytic,
    })
}

/// Unprojected correction `1/2 sum_j DC^j(x) e_j`, i.e. `1/2 sum_j d_j C_{ij}`.
///
/// This is the term of the boundary non-attainment drift condition; it is
/// intentionally separate from [`drift_correction`].
pub fn unprojected_drift_correction<C: CovarianceField + ?Sized>(
    field: &C,
    x: &DVector<f64>,
    fd_step: Option<f64>,
) -> Result<DVector<f64>> {
    let (dc, _) = covariance_jacobian(field, x, fd_step)?;
    let d = dc.dim();
    Ok(weighted_correction(&dc, &DMatrix::identity(d, d)))
}

/// A smooth scalar test function with gradient and Hessian.
pub trait TestFunction {
    fn value(&self, x: &DVector<f64>) -> f64;
    fn gradient(&self, x: &DVector<f64>) -> DVector<f64>;
    fn hessian(&self, x: &DVector<f64>) -> DMatrix<f64>;
}

/// `psi(y) = <u, y - x0> - kappa/2 |y - x0|^2`.
#[derive(Debug, Clone)]
pub struct ProximalTestFunction {
    pub center: DVector<f64>,
    pub normal: DVector<f64>,
    pub kappa: f64,
}

impl TestFunction for ProximalTestFunction {
    fn value(&self, y: &DVector<f64>) -> f64 {
        let dy = y - &self.center;
        self.normal.dot(&dy) - 0.5 * self.kappa * dy.norm_squared()
    }

    fn gradient(&self, y: &DVector<f64>) -> DVector<f64> {
        &self.normal - (y - &self.center) * self.kappa
    }

    fn hessian(&self, y: &DVector<f64>) -> DMatrix<f64> {
        let d = y.len();
        DMatrix::identity(d, d) * (-self.kappa)
    }
}

/// Generator `L phi(x) = D phi(x) b(x) + 1/2 Tr[C(x) D^2 phi(x)]`.
pub fn apply_generator<T: TestFunction + ?Sized>(
    model: &DiffusionModel,
    phi: &T,
    x: &DVector<f64>,
) -> Result<f64> {
    let b = model.drift(x)?;
    let c = model.covariance(x)?;
    let g = phi.gradient(x);
    let hess = phi.hessian(x);
    Ok(g.dot(&b) + 0.5 * (c.as_matrix() * hess).trace())
}

/// Serializes a vector as a plain JSON array.
pub(crate) fn serialize_dvector<S: serde::Serializer>(
    v: &DVector<f64>,
    s: S,
) -> std::result::Result<S::Ok, S::Error> {
    s.collect_seq(v.iter())
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;
    use proptest::prelude::*;

    fn affine_field(a0: DMatrix<f64>, a1: DMatrix<f64>, a2: DMatrix<f64>) -> impl CovarianceField {
        FnCovariance::new(2, move |x: &DVector<f64>| &a0 + &a1 * x[0] + &a2 * x[1])
    }

    #[test]
    fn kron_identity_and_block_layout() {
        let b = dmatrix![1.0, 2.0; 3.0, 4.0];
        assert_eq!(kron(&DMatrix::identity(1, 1), &b), b);
        let got = kron(&dmatrix![1.0, 2.0], &dmatrix![0.0; 3.0]);
        assert_eq!(got, dmatrix![0.0, 0.0; 3.0, 6.0]);
    }

    #[test]
    fn vec_stacks_columns() {
        assert_eq!(
            vec(&dmatrix![1.0, 2.0; 3.0, 4.0]).as_slice(),
            &[1.0, 3.0, 2.0, 4.0]
        );
        assert_eq!(vec(&DMatrix::zeros(2, 2)).as_slice(), &[0.0; 4]);
        let a = dmatrix![1.5, -2.0; 0.25, 7.0; 3.0, 9.5];
        let v = vec(&a);
        for i in 0..3 {
            for j in 0..2 {
                assert_eq!(v[i + 3 * j], a[(i, j)]);
            }
        }
        assert_eq!(unvec(&v, 3, 2).unwrap(), a);
    }

    #[test]
    fn eig_of_diagonal_and_rank_one() {
        let e = sym_eig(&SymMatrix::from_diagonal(&[2.0, 0.0]), DEFAULT_RANK_TOL).unwrap();
        assert_eq!(e.eigenvalues.as_slice(), &[2.0, 0.0]);
        assert_eq!(e.eigenvectors, DMatrix::identity(2, 2));
        assert_eq!(e.rank, 1);

        let uut = SymMatrix::new(dmatrix![1.0, 1.0; 1.0, 1.0]).unwrap();
        let e = sym_eig(&uut, DEFAULT_RANK_TOL).unwrap();
        assert!((e.eigenvalues[0] - 2.0).abs() < 1e-14);
        assert!(e.eigenvalues[1].abs() < 1e-14);
        assert_eq!(e.rank, 1);
        let q0 = e.eigenvectors.column(0);
        assert!((q0[0] - q0[1]).abs() < 1e-14 && q0[0] > 0.0);
    }

    #[test]
    fn asymmetric_input_rejected() {
        let err = SymMatrix::new(dmatrix![1.0, 2.0; 2.5, 1.0]).unwrap_err();
        assert!(matches!(err, Error::SymmetryViolation { .. }));
    }

    #[test]
    fn pinv_known_values() {
        let z = sym_pinv(&SymMatrix::zeros(3), DEFAULT_RANK_TOL).unwrap();
        assert_eq!(z.as_matrix(), &DMatrix::zeros(3, 3));
        let p = sym_pinv(&SymMatrix::from_diagonal(&[2.0, 0.0]), DEFAULT_RANK_TOL).unwrap();
        assert_eq!(p.as_matrix(), &dmatrix![0.5, 0.0; 0.0, 0.0]);
    }

    #[test]
    fn projection_known_values() {
        let p = proj_image(&SymMatrix::from_diagonal(&[0.0]), DEFAULT_RANK_TOL).unwrap();
        assert_eq!(p.as_matrix()[(0, 0)], 0.0);
        let full = SymMatrix::new(dmatrix![2.0, 1.0; 1.0, 3.0]).unwrap();
        let p = proj_image(&full, DEFAULT_RANK_TOL).unwrap();
        assert!((p.as_matrix() - DMatrix::identity(2, 2)).amax() < 1e-12);
        let v = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let vvt = SymMatrix::new(&v * v.transpose()).unwrap();
        let p = proj_image(&vvt, DEFAULT_RANK_TOL).unwrap();
        let expected = &v * v.transpose() / v.norm_squared();
        assert!((p.as_matrix() - expected).amax() < 1e-12);
    }

    #[test]
    fn negative_eigenvalue_beyond_slack_is_psd_violation() {
        let field = FnCovariance::new(1, |x: &DVector<f64>| DMatrix::from_element(1, 1, x[0]));
        let err = drift_correction(
            &field,
            &DVector::from_element(1, -0.5),
            CorrectionOptions::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::PsdViolation { .. }));
        // within slack: treated as zero
        let ok = drift_correction(
            &field,
            &DVector::from_element(1, -1e-10),
            CorrectionOptions::default(),
        )
        .unwrap();
        assert_eq!(ok.rank, 0);
    }

    #[test]
    fn jacobian_fd_examples() {
        let x = DVector::from_vec(vec![0.3, -1.2]);
        let j = jacobian_fd(|_| dmatrix![1.0, 2.0; 3.0, 4.0], &x, 1e-5).unwrap();
        assert_eq!(j, DMatrix::zeros(4, 2));

        let a = dmatrix![1.0, -2.0; 0.5, 3.0];
        let s = DVector::from_element(1, 0.7);
        let j = jacobian_fd(|p| &a * p[0], &s, 1e-5).unwrap();
        assert!((j.column(0) - vec(&a)).amax() < 1e-9);

        let err = jacobian_fd(
            |p| DMatrix::from_element(1, 1, 1.0 / p[0]),
            &DVector::zeros(1),
            0.0,
        )
        .unwrap_err();
        assert!(matches!(err, Error::InvalidArgument(_)));
        let err = jacobian_fd(
            |p| DMatrix::from_element(1, 1, if p[0] > 0.0 { f64::NAN } else { 0.0 }),
            &DVector::zeros(1),
            1e-3,
        )
        .unwrap_err();
        assert_eq!(err, Error::NonFinite { point: vec![1e-3] });
    }

    #[test]
    fn directional_derivative_examples() {
        let constant = FnCovariance::new(2, |_: &DVector<f64>| dmatrix![1.0, 0.2; 0.2, 3.0]);
        let q = DVector::from_vec(vec![0.6, 0.8]);
        let x = DVector::from_vec(vec![1.0, 2.0]);
        assert!(dir_derivative(&constant, &x, &q, 1e-5).unwrap().amax() < 1e-10);

        let lin = FnCovariance::new(1, |x: &DVector<f64>| DMatrix::from_element(1, 1, x[0]));
        for &x0 in &[0.0, 0.4, 3.0] {
            let v = dir_derivative(
                &lin,
                &DVector::from_element(1, x0),
                &DVector::from_element(1, 1.0),
                1e-5,
            )
            .unwrap();
            assert!((v[0] - 1.0).abs() < 1e-9);
        }

        let a1 = dmatrix![1.0, 0.5; 0.5, -2.0];
        let a2 = dmatrix![0.0, 1.0; 1.0, 4.0];
        let field = affine_field(dmatrix![2.0, 0.0; 0.0, 2.0], a1.clone(), a2.clone());
        let got = dir_derivative(&field, &x, &q, 1e-5).unwrap();
        let expected = (&a1 * q[0] + &a2 * q[1]) * &q;
        assert!((got - expected).amax() < 1e-9);

        let err = dir_derivative(&field, &x, &DVector::from_vec(vec![1.0, 1.0]), 1e-5).unwrap_err();
        assert!(matches!(err, Error::InvalidArgument(_)));
    }

    #[test]
    fn square_root_correction_projection_and_naive_value() {
        let field = FnCovariance::new(1, |x: &DVector<f64>| DMatrix::from_element(1, 1, x[0]));
        let at0 =
            drift_correction(&field, &DVector::zeros(1), CorrectionOptions::default()).unwrap();
        assert_eq!(at0.value[0], 0.0);
        assert_eq!(at0.rank, 0);
        let naive = unprojected_drift_correction(&field, &DVector::zeros(1), None).unwrap();
        assert!((naive[0] - 0.5).abs() < 1e-10);

        let pos = drift_correction(
            &field,
            &DVector::from_element(1, 0.8),
            CorrectionOptions::default(),
        )
        .unwrap();
        assert!((pos.value[0] - 0.5).abs() < 1e-10);
        assert!(pos.routes_agree);

        let eta = 0.7;
        let scaled = FnCovariance::new(1, move |x: &DVector<f64>| {
            DMatrix::from_element(1, 1, eta * eta * x[0])
        });
        let v = drift_correction(
            &scaled,
            &DVector::from_element(1, 2.0),
            CorrectionOptions::default(),
        )
        .unwrap();
        assert!((v.value[0] - eta * eta / 2.0).abs() < 1e-10);
    }

    #[test]
    fn rank_warning_near_threshold() {
        let field = FnCovariance::new(1, |x: &DVector<f64>| DMatrix::from_element(1, 1, x[0]));
        let r = drift_correction(
            &field,
            &DVector::from_element(1, 2e-8),
            CorrectionOptions::default(),
        )
        .unwrap();
        assert!(r.rank_warning);
        let r = drift_correction(
            &field,
            &DVector::from_element(1, 0.3),
            CorrectionOptions::default(),
        )
        .unwrap();
        assert!(!r.rank_warning);
    }

    #[test]
    fn generator_examples() {
        let model = DiffusionModel::new(
            1,
            |_: &DVector<f64>| DVector::from_element(1, 0.5),
            |x: &DVector<f64>| DMatrix::from_element(1, 1, x[0]),
        );
        struct Square;
        impl TestFunction for Square {
            fn value(&self, x: &DVector<f64>) -> f64 {
                x[0] * x[0]
            }
            fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
                x * 2.0
            }
            fn hessian(&self, _: &DVector<f64>) -> DMatrix<f64> {
                DMatrix::from_element(1, 1, 2.0)
            }
        }
        let x = DVector::from_element(1, 2.0);
        assert_eq!(apply_generator(&model, &Square, &x).unwrap(), 4.0);
        let constant = ProximalTestFunction {
            center: x.clone(),
            normal: DVector::zeros(1),
            kappa: 0.0,
        };
        assert_eq!(apply_generator(&model, &constant, &x).unwrap(), 0.0);
        let linear = ProximalTestFunction {
            center: x.clone(),
            normal: DVector::from_element(1, -3.0),
            kappa: 0.0,
        };
        assert_eq!(apply_generator(&model, &linear, &x).unwrap(), -1.5);
    }

    fn sym_strategy(d: usize) -> impl Strategy<Value = DMatrix<f64>> {
        prop::collection::vec(-3.0f64..3.0, d * d).prop_map(move |v| {
            let m = DMatrix::from_vec(d, d, v);
            (&m + m.transpose()) * 0.5
        })
    }

    proptest! {
        #[test]
        fn eig_reconstructs_and_is_orthogonal(m in sym_strategy(4)) {
            let a = SymMatrix::new(m.clone()).unwrap();
            let e = sym_eig(&a, DEFAULT_RANK_TOL).unwrap();
            let q = &e.eigenvectors;
            prop_assert!((q.transpose() * q - DMatrix::identity(4, 4)).amax() < 1e-10);
            prop_assert!((e.reconstruct() - &m).amax() <= 1e-10 * (1.0 + m.amax()));
            for i in 1..4 {
                prop_assert!(e.eigenvalues[i - 1] >= e.eigenvalues[i]);
            }
        }

        #[test]
        fn mixed_product_holds(a in sym_strategy(2), b in sym_strategy(2), c in sym_strategy(2), d in sym_strategy(2)) {
            let lhs = kron(&a, &b) * kron(&c, &d);
            let rhs = kron(&(&a * &c), &(&b * &d));
            prop_assert!((lhs - rhs).amax() < 1e-12);
        }

        #[test]
        fn vec_of_triple_product(
            a in prop::collection::vec(-2.0f64..2.0, 6),
            x in prop::collection::vec(-2.0f64..2.0, 12),
            b in prop::collection::vec(-2.0f64..2.0, 8),
        ) {
            let a = DMatrix::from_vec(2, 3, a);
            let x = DMatrix::from_vec(3, 4, x);
            let b = DMatrix::from_vec(4, 2, b);
            let lhs = vec(&(&a * &x * &b));
            let rhs = kron(&b.transpose(), &a) * vec(&x);
            prop_assert!((lhs - rhs).amax() < 1e-12);
        }

        #[test]
        fn penrose_conditions(
            k in 1usize..=4,
            entries in prop::collection::vec(-3.0f64..3.0, 16),
        ) {
            let b = DMatrix::from_vec(4, 4, entries).columns(0, k).into_owned();
            let a = SymMatrix::new(&b * b.transpose()).unwrap();
            let e = sym_eig(&a, DEFAULT_RANK_TOL).unwrap();
            prop_assume!(!e.rank_ambiguous());
            let p = sym_pinv(&a, DEFAULT_RANK_TOL).unwrap();
            let (am, pm) = (a.as_matrix(), p.as_matrix());
            let scale = 1.0 + am.norm() * pm.norm();
            let tol = 1e-9 * scale * scale;
            prop_assert!((am * pm * am - am).amax() <= tol * am.amax().max(1.0));
            prop_assert!((pm * am * pm - pm).amax() <= tol * pm.amax().max(1.0));
            let ap = am * pm;
            prop_assert!((&ap - ap.transpose()).amax() <= tol);
            let proj = proj_image(&a, DEFAULT_RANK_TOL).unwrap();
            let pr = proj.as_matrix();
            prop_assert!((pr * pr - pr).amax() <= tol);
        }

        #[test]
        fn routes_agree_on_squared_affine_fields(
            m0 in prop::collection::vec(-1.0f64..1.0, 4),
            m1 in prop::collection::vec(-1.0f64..1.0, 4),
            m2 in prop::collection::vec(-1.0f64..1.0, 4),
            x in prop::collection::vec(-2.0f64..2.0, 2),
        ) {
            let (m0, m1, m2) = (DMatrix::from_vec(2, 2, m0), DMatrix::from_vec(2, 2, m1), DMatrix::from_vec(2, 2, m2));
            let field = FnCovariance::new(2, move |y: &DVector<f64>| {
                let m = &m0 + &m1 * y[0] + &m2 * y[1];
                &m * m.transpose()
            });
            let x = DVector::from_vec(x);
            let c = drift_correction(&field, &x, CorrectionOptions::default()).unwrap();
            prop_assume!(!c.rank_warning);
            prop_assert!(c.routes_agree, "gap {} tol {}", c.route_gap, c.route_tolerance);
        }
    }
}
