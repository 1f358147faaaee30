//! Ridge reconstruction of one feature set from another.
//!
//! Given a probe set `X` (`d x N`) and a dictionary `Y` (`d x M`), the
//! coefficients solve `min_W ||X - YW||_F^2 + beta ||W||_F^2`, i.e.
//! `(Y^T Y + beta I) W = Y^T X`. The reconstruction distance is the mean
//! residual norm over the columns of `X`.

use nalgebra::{Cholesky, DMatrix, Dyn, SymmetricEigen};

use crate::error::{Result, SfrError};
use crate::features::FeatureMatrix;

#[derive(Debug, Clone, PartialEq)]
pub struct ReconstructionCoefficients {
    matrix: DMatrix<f64>,
    beta: f64,
}

impl ReconstructionCoefficients {
    /// Wraps an externally obtained coefficient matrix.
    pub fn new(matrix: DMatrix<f64>, beta: f64) -> Result<Self> {
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(SfrError::NonFinite("coefficient entry".into()));
        }
        Ok(Self { matrix, beta })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReconstructionResult {
    pub coefficients: ReconstructionCoefficients,
    /// `X - YW`.
    pub residual: DMatrix<f64>,
    pub distance: f64,
}

/// Reciprocal condition estimate below which an unregularized Gram matrix
/// is treated as singular.
const SINGULAR_RCOND: f64 = 1e-12;

/// A dictionary with its regularized Gram matrix factored once, so that
/// many probe sets can be reconstructed against it.
#[derive(Debug, Clone)]
pub struct Dictionary {
    atoms: DMatrix<f64>,
    beta: f64,
    factor: Cholesky<f64, Dyn>,
}

impl Dictionary {
    pub fn new(y: &FeatureMatrix, beta: f64) -> Result<Self> {
        Self::from_matrix(y.matrix().clone(), beta)
    }

    pub fn from_matrix(atoms: DMatrix<f64>, beta: f64) -> Result<Self> {
        if !(beta >= 0.0 && beta.is_finite()) {
            return Err(SfrError::InvalidInput(format!("beta must be >= 0, got {beta}")));
        }
        if atoms.ncols() == 0 || atoms.nrows() == 0 {
            return Err(SfrError::InvalidInput("empty dictionary".into()));
        }
        let m = atoms.ncols();
        let mut gram = atoms.tr_mul(&atoms);
        for i in 0..m {
            gram[(i, i)] += beta;
        }
        let factor = match gram.clone().cholesky() {
            Some(f) => f,
            None => return Err(factorization_failure(&gram, beta)),
        };
        if beta == 0.0 {
            // Without regularization a numerically singular Gram matrix can
            // still pass the factorization with a vanishing pivot.
            let diag = factor.l_dirty().diagonal();
            let (lo, hi) = diag
                .iter()
                .fold((f64::INFINITY, 0.0f64), |(lo, hi), &v| (lo.min(v), hi.max(v)));
            if (lo / hi).powi(2) < SINGULAR_RCOND {
                return Err(factorization_failure(&gram, beta));
            }
        }
        Ok(Self {
            atoms,
            beta,
            factor,
        })
    }

    pub fn dim(&self) -> usize {
        self.atoms.nrows()
    }

    pub fn count(&self) -> usize {
        self.atoms.ncols()
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn atoms(&self) -> &DMatrix<f64> {
        &self.atoms
    }

    pub fn coefficients(&self, x: &DMatrix<f64>) -> Result<ReconstructionCoefficients> {
        if x.nrows() != self.dim() {
            return Err(SfrError::DimensionMismatch(format!(
                "probe dim {} vs dictionary dim {}",
                x.nrows(),
                self.dim()
            )));
        }
        if x.ncols() == 0 {
            return Err(SfrError::InvalidInput("probe set has no columns".into()));
        }
        let rhs = self.atoms.tr_mul(x);
        ReconstructionCoefficients::new(self.factor.solve(&rhs), self.beta)
    }

    pub fn reconstruct(&self, x: &DMatrix<f64>) -> Result<ReconstructionResult> {
        let coefficients = self.coefficients(x)?;
        let residual = x - &self.atoms * coefficients.matrix();
        let distance = mean_column_norm(&residual);
        Ok(ReconstructionResult {
            coefficients,
            residual,
            distance,
        })
    }
}

fn factorization_failure(gram: &DMatrix<f64>, beta: f64) -> SfrError {
    let eig = SymmetricEigen::new(gram.clone()).eigenvalues;
    let hi = eig.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
    let lo = eig.iter().fold(f64::INFINITY, |a, &b| a.min(b.abs()));
    SfrError::Factorization(format!(
        "Y^T Y + {beta} I is not numerically positive definite \
         (eigenvalues in [{lo:.3e}, {hi:.3e}], condition ~{:.3e})",
        hi / lo
    ))
}

/// Mean of the column norms of `m`.
pub fn mean_column_norm(m: &DMatrix<f64>) -> f64 {
    m.column_iter().map(|c| c.norm()).sum::<f64>() / m.ncols() as f64
}

/// Closed-form ridge coefficients `W = (Y^T Y + beta I)^{-1} Y^T X`.
pub fn solve_coefficients(
    x: &FeatureMatrix,
    y: &FeatureMatrix,
    beta: f64,
) -> Result<ReconstructionCoefficients> {
    check_dims(x, y)?;
    Dictionary::new(y, beta)?.coefficients(x.matrix())
}

/// Reconstructs `x` from the columns of `y`. Not symmetric in its arguments.
pub fn sfr_distance(x: &FeatureMatrix, y: &FeatureMatrix, beta: f64) -> Result<ReconstructionResult> {
    check_dims(x, y)?;
    Dictionary::new(y, beta)?.reconstruct(x.matrix())
}

fn check_dims(x: &FeatureMatrix, y: &FeatureMatrix) -> Result<()> {
    if x.dim() != y.dim() {
        return Err(SfrError::DimensionMismatch(format!(
            "X has dim {}, Y has dim {}",
            x.dim(),
            y.dim()
        )));
    }
    Ok(())
}

/// Gradients of `||Xa - Xo W||_F^2` with `W` held fixed:
/// `(2 (Xa - Xo W), -2 (Xa - Xo W) W^T)`.
pub fn sfr_gradients(
    anchor: &FeatureMatrix,
    other: &FeatureMatrix,
    w: &ReconstructionCoefficients,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    residual_gradients(anchor.matrix(), other.matrix(), w.matrix())
}

/// Matrix-level form of [`sfr_gradients`].
pub fn residual_gradients(
    anchor: &DMatrix<f64>,
    other: &DMatrix<f64>,
    w: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    check_triple(anchor, other, w)?;
    let residual = anchor - other * w;
    let grad_other = &residual * w.transpose() * -2.0;
    Ok((residual * 2.0, grad_other))
}

/// `||Xa - Xo W||_F^2`, the quantity whose gradients [`residual_gradients`] returns.
pub fn residual_energy(anchor: &DMatrix<f64>, other: &DMatrix<f64>, w: &DMatrix<f64>) -> Result<f64> {
    check_triple(anchor, other, w)?;
    Ok((anchor - other * w).norm_squared())
}

/// Ridge objective `||X - YW||_F^2 + beta ||W||_F^2`.
pub fn reconstruction_objective(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    w: &DMatrix<f64>,
    beta: f64,
) -> Result<f64> {
    Ok(residual_energy(x, y, w)? + beta * w.norm_squared())
}

fn check_triple(anchor: &DMatrix<f64>, other: &DMatrix<f64>, w: &DMatrix<f64>) -> Result<()> {
    if anchor.nrows() != other.nrows() || w.nrows() != other.ncols() || w.ncols() != anchor.ncols() {
        return Err(SfrError::DimensionMismatch(format!(
            "anchor {}x{}, other {}x{}, W {}x{}",
            anchor.nrows(),
            anchor.ncols(),
            other.nrows(),
            other.ncols(),
            w.nrows(),
            w.ncols()
        )));
    }
    Ok(())
}
