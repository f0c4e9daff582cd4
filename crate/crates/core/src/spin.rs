//! Dense complex-matrix kernel: spin operators, tensor embedding and unitary propagators.
//!
//! All Hamiltonians are angular frequencies (rad/s), so propagators are
//! `exp(-i H t)` with no ħ.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use thiserror::Error;

use crate::isotopes::Spin;

pub type CMatrix = DMatrix<Complex64>;

/// Hermiticity tolerance, relative to the largest matrix element.
pub const HERMITIAN_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KernelError {
    #[error("spin quantum number {0} is not a non-negative half-integer")]
    InvalidSpin(f64),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("matrix is not Hermitian (max deviation {deviation:.3e}, scale {scale:.3e})")]
    NotHermitian { deviation: f64, scale: f64 },
}

pub fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

pub fn identity(dim: usize) -> CMatrix {
    CMatrix::identity(dim, dim)
}

/// Spin matrices in the |m⟩ basis ordered m = I, I-1, …, -I.
#[derive(Debug, Clone)]
pub struct SpinOperators {
    pub spin: Spin,
    pub sx: CMatrix,
    pub sy: CMatrix,
    pub sz: CMatrix,
    pub s_plus: CMatrix,
    pub s_minus: CMatrix,
}

impl SpinOperators {
    pub fn new(spin: Spin) -> Self {
        let dim = spin.multiplicity();
        let j = spin.value();
        let m = |k: usize| j - k as f64;
        let sz = CMatrix::from_fn(
            dim,
            dim,
            |r, col| if r == col { c(m(r), 0.0) } else { c(0.0, 0.0) },
        );
        // <m+1| S+ |m> = sqrt(j(j+1) - m(m+1)); row k-1 holds m(k)+1.
        let s_plus = CMatrix::from_fn(dim, dim, |r, col| {
            if col == r + 1 {
                let mk = m(col);
                c((j * (j + 1.0) - mk * (mk + 1.0)).sqrt(), 0.0)
            } else {
                c(0.0, 0.0)
            }
        });
        let s_minus = s_plus.adjoint();
        let sx = (&s_plus + &s_minus) * c(0.5, 0.0);
        let sy = (&s_plus - &s_minus) * c(0.0, -0.5);
        SpinOperators {
            spin,
            sx,
            sy,
            sz,
            s_plus,
            s_minus,
        }
    }

    pub fn dim(&self) -> usize {
        self.spin.multiplicity()
    }

    /// Cartesian components in x, y, z order.
    pub fn vector(&self) -> [&CMatrix; 3] {
        [&self.sx, &self.sy, &self.sz]
    }
}

/// Spin operators for a spin given as a float; rejects values that are not half-integers.
pub fn spin_operators(value: f64) -> Result<SpinOperators, KernelError> {
    let spin = Spin::from_f64(value).map_err(|_| KernelError::InvalidSpin(value))?;
    Ok(SpinOperators::new(spin))
}

/// Places `op` on subsystem `slot` of a tensor product with subsystem dimensions `dims`.
pub fn embed(op: &CMatrix, slot: usize, dims: &[usize]) -> Result<CMatrix, KernelError> {
    if slot >= dims.len() {
        return Err(KernelError::Dimension(format!(
            "slot {slot} out of range for {} subsystems",
            dims.len()
        )));
    }
    if op.nrows() != dims[slot] || op.ncols() != dims[slot] {
        return Err(KernelError::Dimension(format!(
            "operator is {}x{}, subsystem {slot} has dimension {}",
            op.nrows(),
            op.ncols(),
            dims[slot]
        )));
    }
    let mut out = identity(1);
    for (k, &d) in dims.iter().enumerate() {
        out = if k == slot {
            out.kronecker(op)
        } else {
            out.kronecker(&identity(d))
        };
    }
    Ok(out)
}

fn max_abs(m: &CMatrix) -> f64 {
    m.iter().fold(0.0, |acc, z| acc.max(z.norm()))
}

/// A Hermitian matrix in angular-frequency units (rad/s).
#[derive(Debug, Clone, PartialEq)]
pub struct HermitianOperator {
    matrix: CMatrix,
}

impl HermitianOperator {
    pub fn new(matrix: CMatrix) -> Result<Self, KernelError> {
        if !matrix.is_square() {
            return Err(KernelError::Dimension(format!(
                "Hamiltonian must be square, got {}x{}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        let scale = max_abs(&matrix);
        let deviation = max_abs(&(&matrix - matrix.adjoint()));
        if deviation > HERMITIAN_TOLERANCE * scale.max(f64::MIN_POSITIVE) {
            return Err(KernelError::NotHermitian { deviation, scale });
        }
        Ok(HermitianOperator { matrix })
    }

    pub fn zeros(dim: usize) -> Self {
        HermitianOperator {
            matrix: CMatrix::zeros(dim, dim),
        }
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> CMatrix {
        self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn eigen(&self) -> HermitianEigen {
        HermitianEigen::new(self)
    }
}

/// Eigendecomposition H = V diag(λ) V†, reusable for many propagation times.
#[derive(Debug, Clone)]
pub struct HermitianEigen {
    pub values: DVector<f64>,
    pub vectors: CMatrix,
}

impl HermitianEigen {
    pub fn new(h: &HermitianOperator) -> Self {
        let dim = h.dim();
        if dim == 0 {
            return HermitianEigen {
                values: DVector::zeros(0),
                vectors: CMatrix::zeros(0, 0),
            };
        }
        // Symmetrize.
        let m = (h.matrix() + h.matrix().adjoint()) * c(0.5, 0.0);
        let eig = SymmetricEigen::new(m);
        HermitianEigen {
            values: eig.eigenvalues,
            vectors: eig.eigenvectors,
        }
    }

    /// exp(-i H t).
    pub fn propagator(&self, t: f64) -> CMatrix {
        let mut scaled = self.vectors.clone();
        for (k, mut col) in scaled.column_iter_mut().enumerate() {
            let phase = Complex64::from_polar(1.0, -self.values[k] * t);
            col *= phase;
        }
        scaled * self.vectors.adjoint()
    }
}

/// exp(-i H t) via Hermitian eigendecomposition.
pub fn propagator(h: &HermitianOperator, t: f64) -> CMatrix {
    h.eigen().propagator(t)
}

/// Largest element of |U†U - 1|.
pub fn unitarity_defect(u: &CMatrix) -> f64 {
    max_abs(&(u.adjoint() * u - identity(u.nrows())))
}

pub fn trace(m: &CMatrix) -> Complex64 {
    m.diagonal().iter().sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn max_diff(a: &CMatrix, b: &CMatrix) -> f64 {
        max_abs(&(a - b))
    }

    fn random_hermitian(dim: usize, seed: u64) -> HermitianOperator {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let a = CMatrix::from_fn(dim, dim, |_, _| {
            c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
        });
        HermitianOperator::new((&a + a.adjoint()) * c(0.5, 0.0)).unwrap()
    }

    #[test]
    fn spin_half_is_pauli_over_two() {
        let s = spin_operators(0.5).unwrap();
        assert_eq!(s.sz[(0, 0)], c(0.5, 0.0));
        assert_eq!(s.sz[(1, 1)], c(-0.5, 0.0));
        assert_eq!(s.sx[(0, 1)], c(0.5, 0.0));
        assert_eq!(s.sy[(0, 1)], c(0.0, -0.5));
        assert_eq!(s.s_plus[(0, 1)], c(1.0, 0.0));
    }

    #[test]
    fn spin_one_off_diagonals() {
        let s = spin_operators(1.0).unwrap();
        let r = 1.0 / 2f64.sqrt();
        for (i, j) in [(0, 1), (1, 0), (1, 2), (2, 1)] {
            assert!((s.sx[(i, j)].re - r).abs() < 1e-15);
        }
        assert_eq!(s.sx[(0, 2)], c(0.0, 0.0));
    }

    #[test]
    fn spin_five_halves_spectrum() {
        let s = spin_operators(2.5).unwrap();
        assert_eq!(s.dim(), 6);
        let diag: Vec<f64> = (0..6).map(|k| s.sz[(k, k)].re).collect();
        assert_eq!(diag, vec![2.5, 1.5, 0.5, -0.5, -1.5, -2.5]);
    }

    #[test]
    fn rejects_non_half_integer() {
        assert_eq!(
            spin_operators(0.3).unwrap_err(),
            KernelError::InvalidSpin(0.3)
        );
        assert!(spin_operators(-0.5).is_err());
    }

    #[test]
    fn angular_momentum_algebra() {
        for twice in 1..=9 {
            let s = SpinOperators::new(Spin::from_twice(twice));
            let j = s.spin.value();
            let d = s.dim();
            for op in s.vector() {
                assert!(max_diff(op, &op.adjoint()) < 1e-15);
            }
            let comm = &s.sx * &s.sy - &s.sy * &s.sx;
            assert!(max_diff(&comm, &(&s.sz * c(0.0, 1.0))) < 1e-12);
            let casimir = &s.sx * &s.sx + &s.sy * &s.sy + &s.sz * &s.sz;
            assert!(max_diff(&casimir, &(identity(d) * c(j * (j + 1.0), 0.0))) < 1e-12);
        }
    }

    #[test]
    fn embed_single_slot_is_identity_map() {
        let s = SpinOperators::new(Spin::HALF);
        assert_eq!(embed(&s.sz, 0, &[2]).unwrap(), s.sz);
        let id = embed(&identity(3), 1, &[2, 3, 4]).unwrap();
        assert_eq!(id, identity(24));
    }

    #[test]
    fn embed_trace_identity() {
        let s = SpinOperators::new(Spin::from_twice(3));
        let op = &s.sz * &s.sz + &s.sx;
        let dims = [2, 4, 3];
        let e = embed(&op, 1, &dims).unwrap();
        assert_eq!(e.nrows(), 24);
        let expected = trace(&op) * c(6.0, 0.0);
        assert!((trace(&e) - expected).norm() < 1e-12);
    }

    #[test]
    fn embed_dimension_mismatch() {
        let s = SpinOperators::new(Spin::HALF);
        assert!(matches!(
            embed(&s.sz, 1, &[2, 3]),
            Err(KernelError::Dimension(_))
        ));
        assert!(matches!(
            embed(&s.sz, 2, &[2, 2]),
            Err(KernelError::Dimension(_))
        ));
    }

    #[test]
    fn propagator_at_zero_is_identity() {
        let h = random_hermitian(5, 1);
        assert!(max_diff(&propagator(&h, 0.0), &identity(5)) < 1e-12);
    }

    #[test]
    fn diagonal_propagator() {
        let s = SpinOperators::new(Spin::HALF);
        let omega = 2.0e6;
        let t = 3.7e-6;
        let u = propagator(&HermitianOperator::new(&s.sz * c(omega, 0.0)).unwrap(), t);
        assert!((u[(0, 0)] - Complex64::from_polar(1.0, -omega * t / 2.0)).norm() < 1e-12);
        assert!((u[(1, 1)] - Complex64::from_polar(1.0, omega * t / 2.0)).norm() < 1e-12);
        assert!(u[(0, 1)].norm() < 1e-15);
    }

    #[test]
    fn forward_backward_is_identity() {
        let h = random_hermitian(8, 7);
        let t = 0.83;
        let prod = propagator(&h, t) * propagator(&h, -t);
        assert!(max_diff(&prod, &identity(8)) < 1e-10);
    }

    #[test]
    fn non_hermitian_rejected() {
        let mut m = CMatrix::zeros(2, 2);
        m[(0, 1)] = c(1.0, 0.0);
        assert!(matches!(
            HermitianOperator::new(m),
            Err(KernelError::NotHermitian { .. })
        ));
        assert!(HermitianOperator::new(CMatrix::zeros(2, 3)).is_err());
    }

    proptest! {
        #[test]
        fn propagators_are_unitary_and_compose(seed in 0u64..10_000, dim in 1usize..9, t1 in -5.0f64..5.0, t2 in -5.0f64..5.0) {
            let h = random_hermitian(dim, seed);
            let eig = h.eigen();
            let u1 = eig.propagator(t1);
            prop_assert!(unitarity_defect(&u1) <= 1e-10);
            let u12 = eig.propagator(t1 + t2);
            prop_assert!(max_diff(&u12, &(&u1 * eig.propagator(t2))) <= 1e-9);
        }
    }
}
