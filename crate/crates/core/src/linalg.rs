//! Small dense complex linear algebra.
//!
//! Everything in this crate lives in spaces of dimension at most a few dozen,
//! so matrices are plain row-major `Vec<Complex64>` buffers. Operator
//! predicates ([`is_projector`], [`commutator_norm`], ...) measure distances in
//! the Frobenius norm so that every tolerance in the crate refers to the same,
//! basis-independent quantity.
//!
//! The arithmetic operator impls (`&a * &b`, `&a + &b`, ...) panic on shape
//! mismatch, in the same way `ndarray` does; the `try_*`/named methods return a
//! [`LinalgError`] instead.

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use num_complex::Complex64;
use thiserror::Error;

/// Default tolerance for algebraic identity checks.
pub const DEFAULT_TOL: f64 = 1e-10;

pub const C_ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };
pub const C_ONE: Complex64 = Complex64 { re: 1.0, im: 0.0 };
pub const C_I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LinalgError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },
    #[error("empty vector or matrix")]
    Empty,
}

pub type Result<T> = std::result::Result<T, LinalgError>;

/// A column vector of complex amplitudes.
#[derive(Clone, PartialEq)]
pub struct CVector {
    entries: Vec<Complex64>,
}

impl CVector {
    pub fn new(entries: Vec<Complex64>) -> Result<Self> {
        if entries.is_empty() {
            return Err(LinalgError::Empty);
        }
        Ok(CVector { entries })
    }

    pub fn zeros(dim: usize) -> Self {
        assert!(dim > 0, "zero-dimensional vector");
        CVector {
            entries: vec![C_ZERO; dim],
        }
    }

    /// Standard basis vector `|index⟩`.
    pub fn basis(dim: usize, index: usize) -> Self {
        let mut v = Self::zeros(dim);
        v.entries[index] = C_ONE;
        v
    }

    pub fn from_real(entries: &[f64]) -> Result<Self> {
        Self::new(entries.iter().map(|&x| Complex64::new(x, 0.0)).collect())
    }

    pub fn dim(&self) -> usize {
        self.entries.len()
    }

    pub fn entries(&self) -> &[Complex64] {
        &self.entries
    }

    pub fn get(&self, i: usize) -> Complex64 {
        self.entries[i]
    }

    /// `⟨self|other⟩`, antilinear in the first argument.
    pub fn inner(&self, other: &CVector) -> Result<Complex64> {
        if self.dim() != other.dim() {
            return Err(LinalgError::DimensionMismatch(format!(
                "inner product of dims {} and {}",
                self.dim(),
                other.dim()
            )));
        }
        Ok(self
            .entries
            .iter()
            .zip(&other.entries)
            .map(|(a, b)| a.conj() * b)
            .sum())
    }

    pub fn norm_sqr(&self) -> f64 {
        self.entries.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    pub fn scale(&self, s: Complex64) -> CVector {
        CVector {
            entries: self.entries.iter().map(|z| z * s).collect(),
        }
    }

    pub fn normalized(&self) -> Option<CVector> {
        let n = self.norm();
        if n == 0.0 {
            None
        } else {
            Some(self.scale(Complex64::new(1.0 / n, 0.0)))
        }
    }

    /// Kronecker product `self ⊗ other`.
    pub fn tensor(&self, other: &CVector) -> CVector {
        let mut entries = Vec::with_capacity(self.dim() * other.dim());
        for a in &self.entries {
            for b in &other.entries {
                entries.push(a * b);
            }
        }
        CVector { entries }
    }

    /// Outer product `|self⟩⟨other|`.
    pub fn outer(&self, other: &CVector) -> CMatrix {
        let mut data = Vec::with_capacity(self.dim() * other.dim());
        for a in &self.entries {
            for b in &other.entries {
                data.push(a * b.conj());
            }
        }
        CMatrix {
            rows: self.dim(),
            cols: other.dim(),
            data,
        }
    }

    pub fn distance(&self, other: &CVector) -> Result<f64> {
        if self.dim() != other.dim() {
            return Err(LinalgError::DimensionMismatch(format!(
                "distance between dims {} and {}",
                self.dim(),
                other.dim()
            )));
        }
        Ok(self
            .entries
            .iter()
            .zip(&other.entries)
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>()
            .sqrt())
    }
}

impl fmt::Debug for CVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.entries.iter()).finish()
    }
}

impl Add<&CVector> for &CVector {
    type Output = CVector;
    fn add(self, rhs: &CVector) -> CVector {
        assert_eq!(self.dim(), rhs.dim(), "vector dimension mismatch");
        CVector {
            entries: self
                .entries
                .iter()
                .zip(&rhs.entries)
                .map(|(a, b)| a + b)
                .collect(),
        }
    }
}

impl Sub<&CVector> for &CVector {
    type Output = CVector;
    fn sub(self, rhs: &CVector) -> CVector {
        assert_eq!(self.dim(), rhs.dim(), "vector dimension mismatch");
        CVector {
            entries: self
                .entries
                .iter()
                .zip(&rhs.entries)
                .map(|(a, b)| a - b)
                .collect(),
        }
    }
}

/// A dense complex matrix in row-major order.
#[derive(Clone, PartialEq)]
pub struct CMatrix {
    rows: usize,
    cols: usize,
    data: Vec<Complex64>,
}

impl CMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<Complex64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(LinalgError::Empty);
        }
        if rows * cols != data.len() {
            return Err(LinalgError::DimensionMismatch(format!(
                "{} entries for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(CMatrix { rows, cols, data })
    }

    pub fn from_real(rows: usize, cols: usize, data: &[f64]) -> Result<Self> {
        Self::new(
            rows,
            cols,
            data.iter().map(|&x| Complex64::new(x, 0.0)).collect(),
        )
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "empty matrix");
        CMatrix {
            rows,
            cols,
            data: vec![C_ZERO; rows * cols],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim, dim);
        for i in 0..dim {
            m.data[i * dim + i] = C_ONE;
        }
        m
    }

    pub fn from_diag(diag: &[Complex64]) -> Self {
        let n = diag.len();
        let mut m = Self::zeros(n, n);
        for (i, d) in diag.iter().enumerate() {
            m.data[i * n + i] = *d;
        }
        m
    }

    pub fn from_real_diag(diag: &[f64]) -> Self {
        let d: Vec<Complex64> = diag.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        Self::from_diag(&d)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn entries(&self) -> &[Complex64] {
        &self.data
    }

    pub fn get(&self, r: usize, c: usize) -> Complex64 {
        self.data[r * self.cols + c]
    }

    fn require_square(&self) -> Result<usize> {
        if self.is_square() {
            Ok(self.rows)
        } else {
            Err(LinalgError::NotSquare {
                rows: self.rows,
                cols: self.cols,
            })
        }
    }

    /// Conjugate transpose.
    pub fn adjoint(&self) -> CMatrix {
        let mut data = Vec::with_capacity(self.data.len());
        for c in 0..self.cols {
            for r in 0..self.rows {
                data.push(self.get(r, c).conj());
            }
        }
        CMatrix {
            rows: self.cols,
            cols: self.rows,
            data,
        }
    }

    pub fn matmul(&self, other: &CMatrix) -> Result<CMatrix> {
        if self.cols != other.rows {
            return Err(LinalgError::DimensionMismatch(format!(
                "{}x{} times {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = CMatrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == C_ZERO {
                    continue;
                }
                let row = &other.data[k * other.cols..(k + 1) * other.cols];
                let dst = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (d, b) in dst.iter_mut().zip(row) {
                    *d += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn apply(&self, v: &CVector) -> Result<CVector> {
        if self.cols != v.dim() {
            return Err(LinalgError::DimensionMismatch(format!(
                "{}x{} applied to dim {}",
                self.rows,
                self.cols,
                v.dim()
            )));
        }
        let entries = (0..self.rows)
            .map(|i| {
                self.data[i * self.cols..(i + 1) * self.cols]
                    .iter()
                    .zip(v.entries())
                    .map(|(a, b)| a * b)
                    .sum()
            })
            .collect();
        Ok(CVector { entries })
    }

    /// Kronecker product `self ⊗ other`.
    pub fn tensor(&self, other: &CMatrix) -> CMatrix {
        let rows = self.rows * other.rows;
        let cols = self.cols * other.cols;
        let mut data = vec![C_ZERO; rows * cols];
        for i in 0..self.rows {
            for j in 0..self.cols {
                let a = self.get(i, j);
                if a == C_ZERO {
                    continue;
                }
                for k in 0..other.rows {
                    for l in 0..other.cols {
                        data[(i * other.rows + k) * cols + j * other.cols + l] =
                            a * other.get(k, l);
                    }
                }
            }
        }
        CMatrix { rows, cols, data }
    }

    pub fn scale(&self, s: Complex64) -> CMatrix {
        CMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|z| z * s).collect(),
        }
    }

    pub fn try_add(&self, other: &CMatrix) -> Result<CMatrix> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn try_sub(&self, other: &CMatrix) -> Result<CMatrix> {
        self.zip_with(other, |a, b| a - b)
    }

    fn zip_with(
        &self,
        other: &CMatrix,
        f: impl Fn(Complex64, Complex64) -> Complex64,
    ) -> Result<CMatrix> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(LinalgError::DimensionMismatch(format!(
                "{}x{} and {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        Ok(CMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| f(*a, *b))
                .collect(),
        })
    }

    pub fn trace(&self) -> Result<Complex64> {
        let n = self.require_square()?;
        Ok((0..n).map(|i| self.data[i * n + i]).sum())
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Frobenius distance `‖self − other‖_F`.
    pub fn distance(&self, other: &CMatrix) -> Result<f64> {
        Ok(self.try_sub(other)?.frobenius_norm())
    }

    /// `‖m† − m‖_F ≤ tol`.
    pub fn is_hermitian(&self, tol: f64) -> Result<bool> {
        self.require_square()?;
        Ok(self.distance(&self.adjoint())? <= tol)
    }

    /// True when `‖m − 1‖_F ≤ tol`.
    pub fn is_identity(&self, tol: f64) -> bool {
        self.is_square()
            && self
                .distance(&CMatrix::identity(self.rows))
                .is_ok_and(|d| d <= tol)
    }

    /// Positive semidefiniteness within `tol`: Cholesky of `m + tol·1` succeeds.
    ///
    /// Only meaningful for Hermitian input.
    pub fn is_positive_semidefinite(&self, tol: f64) -> Result<bool> {
        let n = self.require_square()?;
        let mut l = vec![C_ZERO; n * n];
        for j in 0..n {
            let mut diag = self.get(j, j).re + tol;
            for k in 0..j {
                diag -= l[j * n + k].norm_sqr();
            }
            if diag <= 0.0 {
                return Ok(false);
            }
            let ljj = diag.sqrt();
            l[j * n + j] = Complex64::new(ljj, 0.0);
            for i in (j + 1)..n {
                let mut s = self.get(i, j);
                for k in 0..j {
                    s -= l[i * n + k] * l[j * n + k].conj();
                }
                l[i * n + j] = s / ljj;
            }
        }
        Ok(true)
    }
}

impl fmt::Debug for CMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "CMatrix {}x{} [", self.rows, self.cols)?;
        for r in 0..self.rows {
            write!(f, "  ")?;
            for c in 0..self.cols {
                let z = self.get(r, c);
                write!(f, "{:+.4}{:+.4}i ", z.re, z.im)?;
            }
            writeln!(f)?;
        }
        write!(f, "]")
    }
}

impl Mul<&CMatrix> for &CMatrix {
    type Output = CMatrix;
    fn mul(self, rhs: &CMatrix) -> CMatrix {
        self.matmul(rhs).expect("matrix product shape mismatch")
    }
}

impl Mul<&CVector> for &CMatrix {
    type Output = CVector;
    fn mul(self, rhs: &CVector) -> CVector {
        self.apply(rhs).expect("matrix-vector shape mismatch")
    }
}

impl Add<&CMatrix> for &CMatrix {
    type Output = CMatrix;
    fn add(self, rhs: &CMatrix) -> CMatrix {
        self.try_add(rhs).expect("matrix sum shape mismatch")
    }
}

impl Sub<&CMatrix> for &CMatrix {
    type Output = CMatrix;
    fn sub(self, rhs: &CMatrix) -> CMatrix {
        self.try_sub(rhs).expect("matrix difference shape mismatch")
    }
}

impl Neg for &CMatrix {
    type Output = CMatrix;
    fn neg(self) -> CMatrix {
        self.scale(-C_ONE)
    }
}

/// Kronecker product of two matrices.
pub fn tensor(a: &CMatrix, b: &CMatrix) -> CMatrix {
    a.tensor(b)
}

/// True iff `m` is an orthogonal projector: `‖m² − m‖_F ≤ tol` and `‖m† − m‖_F ≤ tol`.
pub fn is_projector(m: &CMatrix, tol: f64) -> Result<bool> {
    m.require_square()?;
    let sq = m.matmul(m)?;
    Ok(sq.distance(m)? <= tol && m.is_hermitian(tol)?)
}

/// `‖ab − ba‖_F`.
pub fn commutator_norm(a: &CMatrix, b: &CMatrix) -> Result<f64> {
    a.require_square()?;
    b.require_square()?;
    if a.rows != b.rows {
        return Err(LinalgError::DimensionMismatch(format!(
            "commutator of {}x{} and {}x{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    a.matmul(b)?.distance(&b.matmul(a)?)
}

/// Embeds `m`, acting on factor `factor` of a product space with the given
/// factor dimensions, as `1 ⊗ … ⊗ m ⊗ … ⊗ 1`.
pub fn embed(dims: &[usize], factor: usize, m: &CMatrix) -> Result<CMatrix> {
    if factor >= dims.len() {
        return Err(LinalgError::DimensionMismatch(format!(
            "factor {factor} of a {}-fold product",
            dims.len()
        )));
    }
    if m.rows != dims[factor] || m.cols != dims[factor] {
        return Err(LinalgError::DimensionMismatch(format!(
            "{}x{} operator on a factor of dim {}",
            m.rows, m.cols, dims[factor]
        )));
    }
    let mut out: Option<CMatrix> = None;
    for (i, &d) in dims.iter().enumerate() {
        let piece = if i == factor {
            m.clone()
        } else {
            CMatrix::identity(d)
        };
        out = Some(match out {
            None => piece,
            Some(acc) => acc.tensor(&piece),
        });
    }
    Ok(out.expect("nonempty dims"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pauli_x() -> CMatrix {
        CMatrix::from_real(2, 2, &[0.0, 1.0, 1.0, 0.0]).unwrap()
    }

    #[test]
    fn identity_tensor_identity() {
        assert_eq!(
            tensor(&CMatrix::identity(2), &CMatrix::identity(2)),
            CMatrix::identity(4)
        );
    }

    #[test]
    fn block_structure() {
        let p = CMatrix::from_real_diag(&[1.0, 0.0]);
        let out = tensor(&p, &CMatrix::identity(2));
        assert_eq!(out, CMatrix::from_real_diag(&[1.0, 1.0, 0.0, 0.0]));
    }

    #[test]
    fn tensor_index_convention() {
        // (a ⊗ b)[(i*rb + k), (j*cb + l)] = a[i,j] b[k,l]
        let a = CMatrix::from_real(2, 2, &[1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = CMatrix::from_real(2, 2, &[0.0, 5.0, 6.0, 7.0]).unwrap();
        let k = tensor(&a, &b);
        assert_eq!(k.get(1, 3).re, 2.0 * 6.0 * 0.0 + 2.0 * 7.0);
        assert_eq!(k.get(2, 1).re, 3.0 * 5.0);
        let u = CVector::from_real(&[1.0, 2.0]).unwrap();
        let v = CVector::from_real(&[3.0, 4.0]).unwrap();
        assert_eq!(&k * &u.tensor(&v), (&a * &u).tensor(&(&b * &v)));
    }

    #[test]
    fn projector_predicate() {
        assert!(is_projector(&CMatrix::identity(3), 1e-12).unwrap());
        assert!(!is_projector(&pauli_x(), 1e-12).unwrap());
        let psi = CVector::from_real(&[0.5, -0.5, 0.5, -0.5]).unwrap();
        assert!(is_projector(&psi.outer(&psi), 1e-12).unwrap());
        let rect = CMatrix::zeros(2, 3);
        assert!(matches!(
            is_projector(&rect, 1e-12),
            Err(LinalgError::NotSquare { .. })
        ));
    }

    #[test]
    fn commutator_basics() {
        let z = CMatrix::from_real_diag(&[1.0, -1.0]);
        assert_eq!(commutator_norm(&z, &z).unwrap(), 0.0);
        // [σx, σz] = -2iσy, Frobenius norm 2√2
        let c = commutator_norm(&pauli_x(), &z).unwrap();
        assert!((c - 2.0 * 2f64.sqrt()).abs() < 1e-14);
        assert!(commutator_norm(&z, &CMatrix::identity(3)).is_err());
    }

    #[test]
    fn plumbing() {
        let v = CVector::from_real(&[0.6, 0.8]).unwrap();
        assert_eq!(&CMatrix::identity(2) * &v, v);
        assert!((v.inner(&v).unwrap().re - 1.0).abs() < 1e-15);
        assert!((v.norm() - 1.0).abs() < 1e-15);
        let m = CMatrix::new(2, 2, vec![C_ONE, C_I, -C_I, C_ZERO]).unwrap();
        assert_eq!(m.adjoint().adjoint(), m);
        assert!(m.is_hermitian(0.0).unwrap());
        assert!(CMatrix::new(2, 2, vec![C_ONE]).is_err());
        assert!(CVector::new(vec![]).is_err());
    }

    #[test]
    fn psd_check() {
        assert!(CMatrix::identity(3).is_positive_semidefinite(0.0).unwrap());
        assert!(CMatrix::from_real_diag(&[1.0, 0.0])
            .is_positive_semidefinite(1e-12)
            .unwrap());
        assert!(!CMatrix::from_real_diag(&[1.0, -0.1])
            .is_positive_semidefinite(1e-12)
            .unwrap());
        let psi = CVector::from_real(&[0.6, 0.8]).unwrap();
        assert!(psi.outer(&psi).is_positive_semidefinite(1e-12).unwrap());
    }

    #[test]
    fn embed_matches_tensor() {
        let z = CMatrix::from_real_diag(&[1.0, -1.0]);
        assert_eq!(
            embed(&[2, 3], 0, &z).unwrap(),
            z.tensor(&CMatrix::identity(3))
        );
        assert_eq!(
            embed(&[3, 2], 1, &z).unwrap(),
            CMatrix::identity(3).tensor(&z)
        );
        assert!(embed(&[3, 3], 1, &z).is_err());
    }

    fn small_int_matrix() -> impl Strategy<Value = CMatrix> {
        (1usize..=3, 1usize..=3).prop_flat_map(|(r, c)| {
            prop::collection::vec((-3i32..=3, -3i32..=3), r * c).prop_map(move |v| {
                let data = v
                    .into_iter()
                    .map(|(re, im)| Complex64::new(re as f64, im as f64))
                    .collect();
                CMatrix::new(r, c, data).unwrap()
            })
        })
    }

    fn random_square(n: usize) -> impl Strategy<Value = CMatrix> {
        prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), n * n).prop_map(move |v| {
            CMatrix::new(
                n,
                n,
                v.into_iter().map(|(a, b)| Complex64::new(a, b)).collect(),
            )
            .unwrap()
        })
    }

    proptest! {
        #[test]
        fn tensor_is_associative(a in small_int_matrix(), b in small_int_matrix(), c in small_int_matrix()) {
            prop_assert_eq!(tensor(&tensor(&a, &b), &c), tensor(&a, &tensor(&b, &c)));
        }

        #[test]
        fn commutator_norm_antisymmetric(a in random_square(4), b in random_square(4)) {
            let ab = commutator_norm(&a, &b).unwrap();
            let ba = commutator_norm(&b, &a).unwrap();
            prop_assert!((ab - ba).abs() <= 1e-12 * (1.0 + ab));
        }
    }
}
