//! Subspaces of ℝⁿ represented by orthonormal bases.
//!
//! Every rank decision in the crate funnels through [`rank_threshold`]: a
//! singular value counts as zero when it is at most `tol · σ_max`, with an
//! absolute floor of [`ABS_FLOOR`] so that the zero matrix and matrices whose
//! entries are pure rounding noise are treated as rank zero.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Default relative rank tolerance.
pub const DEFAULT_TOL: f64 = 1e-9;
/// Absolute floor applied to every rank threshold.
pub const ABS_FLOOR: f64 = 1e-12;
/// Containment residuals are compared against `CONTAIN_SLACK · tol`.
const CONTAIN_SLACK: f64 = 1e3;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SubspaceError {
    #[error("ambient dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
}

/// Threshold under which a singular value is treated as zero.
pub fn rank_threshold(sigma_max: f64, tol: f64) -> f64 {
    (tol * sigma_max).max(ABS_FLOOR)
}

/// A linear subspace stored as an `ambient_dim × k` matrix with orthonormal columns.
#[derive(Debug, Clone)]
pub struct Subspace {
    basis: Matrix,
    tol: f64,
}

impl Subspace {
    pub fn zero(ambient_dim: usize, tol: f64) -> Self {
        Self { basis: Matrix::zeros(ambient_dim, 0), tol }
    }

    pub fn full(ambient_dim: usize, tol: f64) -> Self {
        Self { basis: Matrix::identity(ambient_dim, ambient_dim), tol }
    }

    /// Span of the columns of `generators`.
    pub fn span(generators: &Matrix, tol: f64) -> Self {
        image(generators, tol)
    }

    pub fn ambient_dim(&self) -> usize {
        self.basis.nrows()
    }

    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }

    pub fn basis(&self) -> &Matrix {
        &self.basis
    }

    pub fn tol(&self) -> f64 {
        self.tol
    }

    pub fn is_zero(&self) -> bool {
        self.dim() == 0
    }

    pub fn is_full(&self) -> bool {
        self.dim() == self.ambient_dim()
    }

    /// Orthogonal complement.
    pub fn complement(&self) -> Subspace {
        if self.dim() == 0 {
            return Subspace::full(self.ambient_dim(), self.tol);
        }
        kernel_scaled(&self.basis.transpose(), self.tol, 1.0)
    }

    /// Euclidean distance from `v` to the subspace.
    pub fn distance(&self, v: &Vector) -> f64 {
        if self.dim() == 0 {
            return v.norm();
        }
        let coeffs = self.basis.tr_mul(v);
        (v - &self.basis * coeffs).norm()
    }

    /// Whether `v` lies in the subspace, relative to its own norm.
    pub fn contains_vector(&self, v: &Vector) -> bool {
        let scale = v.norm().max(1.0);
        self.distance(v) <= self.containment_slack() * scale
    }

    /// Orthogonal projection of `v`.
    pub fn project(&self, v: &Vector) -> Vector {
        &self.basis * self.basis.tr_mul(v)
    }

    fn containment_slack(&self) -> f64 {
        (CONTAIN_SLACK * self.tol).max(ABS_FLOOR)
    }

    fn check_same_ambient(&self, other: &Subspace) -> Result<(), SubspaceError> {
        if self.ambient_dim() != other.ambient_dim() {
            return Err(SubspaceError::DimensionMismatch { left: self.ambient_dim(), right: other.ambient_dim() });
        }
        Ok(())
    }
}

/// Full singular value decomposition `m = U Σ Vᵀ`, singular values descending.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: Matrix,
    pub singular_values: Vector,
    pub v: Matrix,
}

fn to_faer(m: &Matrix) -> faer::Mat<f64> {
    faer::Mat::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

fn from_faer(m: faer::MatRef<'_, f64>) -> Matrix {
    Matrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

/// SVD with full `U` (`rows × rows`) and `V` (`cols × cols`).
///
/// Backed by faer: nalgebra's bidiagonal SVD loses orthogonality on some
/// matrices with repeated singular values.
pub fn svd(m: &Matrix) -> Svd {
    let (rows, cols) = m.shape();
    if rows == 0 || cols == 0 {
        return Svd {
            u: Matrix::identity(rows, rows),
            singular_values: Vector::zeros(0),
            v: Matrix::identity(cols, cols),
        };
    }
    let d = to_faer(m).svd().expect("SVD failed to converge");
    let s = d.S().column_vector();
    Svd { u: from_faer(d.U()), singular_values: Vector::from_fn(rows.min(cols), |k, _| s[k]), v: from_faer(d.V()) }
}

/// Singular values in descending order.
pub fn singular_values(m: &Matrix) -> Vector {
    if m.is_empty() {
        return Vector::zeros(0);
    }
    let s = to_faer(m).singular_values().expect("SVD failed to converge");
    Vector::from_vec(s)
}

fn kernel_scaled(m: &Matrix, tol: f64, scale: f64) -> Subspace {
    let cols = m.ncols();
    if cols == 0 {
        return Subspace::zero(0, tol);
    }
    if m.nrows() == 0 {
        return Subspace::full(cols, tol);
    }
    let svd = svd(m);
    let sigma = &svd.singular_values;
    let thr = rank_threshold(sigma.max().max(scale), tol);
    let r = sigma.iter().filter(|&&s| s > thr).count();
    Subspace { basis: svd.v.columns(r, cols - r).into_owned(), tol }
}

/// Null space of `m` with rank decided at `tol` relative to `σ_max(m)`.
pub fn kernel(m: &Matrix, tol: f64) -> Subspace {
    kernel_scaled(m, tol, 0.0)
}

/// Column space of `m`.
pub fn image(m: &Matrix, tol: f64) -> Subspace {
    let rows = m.nrows();
    if m.ncols() == 0 || rows == 0 {
        return Subspace::zero(rows, tol);
    }
    let svd = svd(m);
    let sigma = &svd.singular_values;
    let thr = rank_threshold(sigma.max(), tol);
    let r = sigma.iter().filter(|&&s| s > thr).count();
    Subspace { basis: svd.u.columns(0, r).into_owned(), tol }
}

/// Numerical rank of `m`.
pub fn rank(m: &Matrix, tol: f64) -> usize {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0;
    }
    let sv = singular_values(m);
    let thr = rank_threshold(sv.max(), tol);
    sv.iter().filter(|&&s| s > thr).count()
}

/// `U + V`.
pub fn sum(u: &Subspace, v: &Subspace) -> Result<Subspace, SubspaceError> {
    u.check_same_ambient(v)?;
    let tol = u.tol.max(v.tol);
    if u.dim() == 0 {
        return Ok(Subspace { basis: v.basis.clone(), tol });
    }
    if v.dim() == 0 {
        return Ok(Subspace { basis: u.basis.clone(), tol });
    }
    let mut gens = Matrix::zeros(u.ambient_dim(), u.dim() + v.dim());
    gens.columns_mut(0, u.dim()).copy_from(&u.basis);
    gens.columns_mut(u.dim(), v.dim()).copy_from(&v.basis);
    Ok(image(&gens, tol))
}

/// `U ∩ V`, computed as `(U^⊥ + V^⊥)^⊥`.
pub fn intersect(u: &Subspace, v: &Subspace) -> Result<Subspace, SubspaceError> {
    u.check_same_ambient(v)?;
    let both = sum(&u.complement(), &v.complement())?;
    Ok(both.complement())
}

/// Inverse image `{x : Mx ∈ S}`.
pub fn preimage(m: &Matrix, s: &Subspace) -> Result<Subspace, SubspaceError> {
    if m.nrows() != s.ambient_dim() {
        return Err(SubspaceError::DimensionMismatch { left: m.nrows(), right: s.ambient_dim() });
    }
    let p_perp = Matrix::identity(m.nrows(), m.nrows()) - projector(s);
    let scale = m.norm();
    Ok(kernel_scaled(&(p_perp * m), s.tol, scale))
}

/// Orthogonal projector onto `s`.
pub fn projector(s: &Subspace) -> Matrix {
    &s.basis * s.basis.transpose()
}

/// Whether `V ⊆ U`.
pub fn contains(u: &Subspace, v: &Subspace) -> Result<bool, SubspaceError> {
    u.check_same_ambient(v)?;
    Ok(v.basis.column_iter().all(|b| u.contains_vector(&b.into_owned())))
}

/// Whether two subspaces coincide.
pub fn same(u: &Subspace, v: &Subspace) -> Result<bool, SubspaceError> {
    Ok(u.dim() == v.dim() && contains(u, v)?)
}

/// Image of a subspace under a linear map.
pub fn map(m: &Matrix, s: &Subspace) -> Subspace {
    image(&(m * &s.basis), s.tol)
}
