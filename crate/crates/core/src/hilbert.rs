//! Complex linear algebra substrate: state vectors, Hermitian operators,
//! tensor products, and partial inner products on finite-dimensional spaces.
//!
//! All values are immutable after construction and safe to share across
//! threads. The composite-space index convention is row-major,
//! `k = c * dim_r + r`, and every module in the crate shares it.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Construction-time tolerance for Hermiticity and normalization checks.
pub const CONSTRUCTION_TOL: f64 = 1e-10;

/// Complex amplitude vector on a finite Hilbert space.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    data: DVector<Complex64>,
}

impl StateVector {
    /// Wraps raw amplitudes. The vector need not be normalized.
    pub fn new(amplitudes: Vec<Complex64>) -> Result<Self> {
        if amplitudes.is_empty() {
            return Err(Error::InvalidParameter {
                name: "amplitudes",
                reason: "state vector must have positive dimension".into(),
            });
        }
        Ok(Self {
            data: DVector::from_vec(amplitudes),
        })
    }

    /// Wraps amplitudes that are required to be normalized to within
    /// [`CONSTRUCTION_TOL`].
    pub fn normalized(amplitudes: Vec<Complex64>) -> Result<Self> {
        let v = Self::new(amplitudes)?;
        let dev = (v.norm_squared() - 1.0).abs();
        if dev > CONSTRUCTION_TOL {
            return Err(Error::NotNormalized {
                dev,
                tol: CONSTRUCTION_TOL,
            });
        }
        Ok(v)
    }

    /// Basis vector `e_k` of the given dimension.
    pub fn basis(dim: usize, k: usize) -> Self {
        assert!(k < dim, "basis index {k} out of range for dim {dim}");
        let mut data = DVector::zeros(dim);
        data[k] = Complex64::new(1.0, 0.0);
        Self { data }
    }

    /// Zero vector of the given dimension.
    pub fn zero(dim: usize) -> Self {
        Self {
            data: DVector::zeros(dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.data.len()
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        self.data.as_slice()
    }

    pub fn norm_squared(&self) -> f64 {
        self.data.norm_squared()
    }

    pub fn norm(&self) -> f64 {
        self.data.norm()
    }

    /// Rescales to unit norm. Errors on the zero vector.
    pub fn normalize(&self) -> Result<Self> {
        let n = self.norm();
        if n == 0.0 {
            return Err(Error::InvalidParameter {
                name: "state",
                reason: "cannot normalize the zero vector".into(),
            });
        }
        Ok(Self {
            data: &self.data / Complex64::new(n, 0.0),
        })
    }

    /// Multiplies every amplitude by a scalar.
    pub fn scale(&self, factor: Complex64) -> Self {
        Self {
            data: &self.data * factor,
        }
    }

    pub(crate) fn from_dvector(data: DVector<Complex64>) -> Self {
        Self { data }
    }

    pub(crate) fn as_dvector(&self) -> &DVector<Complex64> {
        &self.data
    }
}

/// Dense Hermitian matrix, validated at construction.
#[derive(Debug, Clone, PartialEq)]
pub struct HermitianOperator {
    data: DMatrix<Complex64>,
}

impl HermitianOperator {
    /// Wraps a dense matrix, checking `‖A - A†‖_max <= 1e-10`.
    pub fn new(entries: DMatrix<Complex64>) -> Result<Self> {
        if entries.nrows() != entries.ncols() || entries.nrows() == 0 {
            return Err(Error::InvalidParameter {
                name: "entries",
                reason: format!(
                    "operator must be square and non-empty, got {}x{}",
                    entries.nrows(),
                    entries.ncols()
                ),
            });
        }
        let mut max_dev: f64 = 0.0;
        for i in 0..entries.nrows() {
            for j in i..entries.ncols() {
                let dev = (entries[(i, j)] - entries[(j, i)].conj()).norm();
                max_dev = max_dev.max(dev);
            }
        }
        if max_dev > CONSTRUCTION_TOL {
            return Err(Error::NotHermitian {
                max_dev,
                tol: CONSTRUCTION_TOL,
            });
        }
        Ok(Self { data: entries })
    }

    /// Builds from a row-major list of entries.
    pub fn from_rows(dim: usize, rows: &[Complex64]) -> Result<Self> {
        if rows.len() != dim * dim {
            return Err(Error::DimensionMismatch {
                context: "HermitianOperator::from_rows",
                expected: dim * dim,
                got: rows.len(),
            });
        }
        Self::new(DMatrix::from_row_slice(dim, dim, rows))
    }

    /// Zero operator (trivially Hermitian).
    pub fn zeros(dim: usize) -> Self {
        Self {
            data: DMatrix::zeros(dim, dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.data.nrows()
    }

    pub fn entries(&self) -> &DMatrix<Complex64> {
        &self.data
    }

    pub fn entry(&self, i: usize, j: usize) -> Complex64 {
        self.data[(i, j)]
    }
}

/// Tensor-product split `S = S_C ⊗ S_R` of the full space, with the
/// conscious-subsystem factor first. Global index `k = c * dim_r + r`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CompositeSpace {
    dim_c: usize,
    dim_r: usize,
}

impl CompositeSpace {
    pub fn new(dim_c: usize, dim_r: usize) -> Result<Self> {
        if dim_c == 0 || dim_r == 0 {
            return Err(Error::InvalidParameter {
                name: "space",
                reason: format!("dimensions must be >= 1, got dim_c={dim_c}, dim_r={dim_r}"),
            });
        }
        Ok(Self { dim_c, dim_r })
    }

    pub fn dim_c(&self) -> usize {
        self.dim_c
    }

    pub fn dim_r(&self) -> usize {
        self.dim_r
    }

    /// Total dimension `dim_c * dim_r`.
    pub fn dim(&self) -> usize {
        self.dim_c * self.dim_r
    }

    /// Global index of the pair `(c, r)`.
    pub fn index(&self, c: usize, r: usize) -> usize {
        debug_assert!(c < self.dim_c && r < self.dim_r);
        c * self.dim_r + r
    }
}

/// `⟨a|b⟩`, conjugate-linear in the first argument.
pub fn inner_product(a: &StateVector, b: &StateVector) -> Result<Complex64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            context: "inner_product",
            expected: a.dim(),
            got: b.dim(),
        });
    }
    Ok(a.data.dotc(&b.data))
}

/// Matrix–vector product `op · v`.
pub fn apply(op: &HermitianOperator, v: &StateVector) -> Result<StateVector> {
    if op.dim() != v.dim() {
        return Err(Error::DimensionMismatch {
            context: "apply",
            expected: op.dim(),
            got: v.dim(),
        });
    }
    Ok(StateVector {
        data: &op.data * &v.data,
    })
}

/// Tensor product `a ⊗ b` with `a` on `S_C` and `b` on `S_R`.
pub fn tensor_state(a: &StateVector, b: &StateVector, space: &CompositeSpace) -> Result<StateVector> {
    if a.dim() != space.dim_c() {
        return Err(Error::DimensionMismatch {
            context: "tensor_state (S_C factor)",
            expected: space.dim_c(),
            got: a.dim(),
        });
    }
    if b.dim() != space.dim_r() {
        return Err(Error::DimensionMismatch {
            context: "tensor_state (S_R factor)",
            expected: space.dim_r(),
            got: b.dim(),
        });
    }
    let mut data = DVector::zeros(space.dim());
    for c in 0..space.dim_c() {
        for r in 0..space.dim_r() {
            data[space.index(c, r)] = a.data[c] * b.data[r];
        }
    }
    Ok(StateVector { data })
}

/// Partial inner product `(⟨phi| ⊗ I)|Psi⟩`, mapping the full space to `S_R`.
///
/// `result_r = Σ_c conj(phi_c) · Psi_{c·dim_r + r}`
pub fn partial_inner(
    phi: &StateVector,
    psi: &StateVector,
    space: &CompositeSpace,
) -> Result<StateVector> {
    if phi.dim() != space.dim_c() {
        return Err(Error::DimensionMismatch {
            context: "partial_inner (S_C factor)",
            expected: space.dim_c(),
            got: phi.dim(),
        });
    }
    if psi.dim() != space.dim() {
        return Err(Error::DimensionMismatch {
            context: "partial_inner (full space)",
            expected: space.dim(),
            got: psi.dim(),
        });
    }
    let mut data = DVector::zeros(space.dim_r());
    for c in 0..space.dim_c() {
        let a = phi.data[c].conj();
        if a == Complex64::new(0.0, 0.0) {
            continue;
        }
        for r in 0..space.dim_r() {
            data[r] += a * psi.data[space.index(c, r)];
        }
    }
    Ok(StateVector { data })
}
