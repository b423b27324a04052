//! Shared oracles for unit tests. Everything here is independent of the
//! implementation paths it is used to check.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::hilbert::HermitianOperator;

/// Dense matrix exponential by scaling-and-squaring with a Taylor series.
/// Independent of the eigendecomposition route used by the evolution module.
pub fn expm_oracle(a: &DMatrix<Complex64>) -> DMatrix<Complex64> {
    let dim = a.nrows();
    let norm = a.iter().map(|z| z.norm()).fold(0.0, f64::max) * dim as f64;
    let squarings = if norm > 0.5 {
        (norm / 0.5).log2().ceil() as u32
    } else {
        0
    };
    let scaled = a / Complex64::new(2.0_f64.powi(squarings as i32), 0.0);
    let mut result = DMatrix::<Complex64>::identity(dim, dim);
    let mut term = DMatrix::<Complex64>::identity(dim, dim);
    for k in 1..=24 {
        term = &term * &scaled / Complex64::new(k as f64, 0.0);
        result += &term;
    }
    for _ in 0..squarings {
        result = &result * &result;
    }
    result
}

pub fn pauli_x(scale: f64) -> HermitianOperator {
    let z = Complex64::new(0.0, 0.0);
    let x = Complex64::new(scale, 0.0);
    HermitianOperator::from_rows(2, &[z, x, x, z]).unwrap()
}

pub fn pauli_z() -> HermitianOperator {
    let z = Complex64::new(0.0, 0.0);
    HermitianOperator::from_rows(
        2,
        &[Complex64::new(1.0, 0.0), z, z, Complex64::new(-1.0, 0.0)],
    )
    .unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn expm_oracle_matches_scalar_exponential() {
        // Diagonal input: entries exponentiate independently.
        let a = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![
            Complex64::new(0.0, 1.2),
            Complex64::new(-0.3, 2.0),
        ]));
        let e = expm_oracle(&a);
        assert!((e[(0, 0)] - Complex64::new(0.0, 1.2).exp()).norm() < 1e-13);
        assert!((e[(1, 1)] - Complex64::new(-0.3, 2.0).exp()).norm() < 1e-13);
        assert!(e[(0, 1)].norm() < 1e-15);
    }
}
