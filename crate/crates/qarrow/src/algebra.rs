//! Dense complex matrix algebra for small Hilbert spaces (d = 2^n, n <= ~6),
//! together with the quantum-specific predicates and constructors the rest of
//! the crate relies on: density matrices, involutive observables, pure states,
//! Pauli operators on selected qubits and tangent-space projection.
//!
//! Matrices are stored dense and row-major. Trajectory integration dominates
//! runtime at these dimensions, so none of the operations here try to exploit
//! sparsity.

use num_complex::Complex64;
use serde::de::{self, Deserializer, MapAccess, Visitor};
use serde::ser::{SerializeStruct, Serializer};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const HERMITIAN_TOL_STATE: f64 = 1e-10;
pub const TRACE_TOL: f64 = 1e-10;
pub const PSD_TOL: f64 = -1e-9;
pub const HERMITIAN_TOL_OBSERVABLE: f64 = 1e-12;
pub const INVOLUTION_TOL: f64 = 1e-10;
pub const NORM_TOL: f64 = 1e-12;

/// Dense row-major complex matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexMatrix {
    dim: usize,
    data: Vec<Complex64>,
}

impl ComplexMatrix {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            data: vec![Complex64::new(0.0, 0.0); dim * dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m.data[i * dim + i] = Complex64::new(1.0, 0.0);
        }
        m
    }

    /// Builds a matrix from a row-major entry list.
    pub fn from_entries(dim: usize, entries: Vec<Complex64>) -> Result<Self> {
        if entries.len() != dim * dim {
            return Err(Error::BadShape {
                dim,
                got: entries.len(),
            });
        }
        Ok(Self { dim, data: entries })
    }

    pub fn from_fn(dim: usize, mut f: impl FnMut(usize, usize) -> Complex64) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            for j in 0..dim {
                m.data[i * dim + j] = f(i, j);
            }
        }
        m
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        self.data[i * self.dim + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: Complex64) {
        self.data[i * self.dim + j] = v;
    }

    #[inline]
    pub fn entries(&self) -> &[Complex64] {
        &self.data
    }

    pub fn trace(&self) -> Complex64 {
        (0..self.dim).map(|i| self.data[i * self.dim + i]).sum()
    }

    pub fn adjoint(&self) -> Self {
        Self::from_fn(self.dim, |i, j| self.get(j, i).conj())
    }

    pub fn scale(&self, s: Complex64) -> Self {
        Self {
            dim: self.dim,
            data: self.data.iter().map(|z| z * s).collect(),
        }
    }

    pub fn scale_re(&self, s: f64) -> Self {
        self.scale(Complex64::new(s, 0.0))
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.check_dim(other)?;
        Ok(Self {
            dim: self.dim,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a + b)
                .collect(),
        })
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.check_dim(other)?;
        Ok(Self {
            dim: self.dim,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a - b)
                .collect(),
        })
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.check_dim(other)?;
        let mut out = Self::zeros(self.dim);
        mul_into(&mut out, self, other);
        Ok(out)
    }

    /// self += s * other, dimensions assumed equal.
    #[inline]
    pub fn add_scaled(&mut self, other: &Self, s: Complex64) {
        debug_assert_eq!(self.dim, other.dim);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
    }

    pub(crate) fn copy_from(&mut self, other: &Self) {
        debug_assert_eq!(self.dim, other.dim);
        self.data.copy_from_slice(&other.data);
    }

    pub(crate) fn set_zero(&mut self) {
        for z in &mut self.data {
            *z = Complex64::new(0.0, 0.0);
        }
    }

    /// Replaces self with its Hermitian part (self + self†)/2.
    pub(crate) fn hermitize(&mut self) {
        let d = self.dim;
        for i in 0..d {
            let ii = i * d + i;
            self.data[ii] = Complex64::new(self.data[ii].re, 0.0);
            for j in (i + 1)..d {
                let ij = i * d + j;
                let ji = j * d + i;
                let avg = 0.5 * (self.data[ij] + self.data[ji].conj());
                self.data[ij] = avg;
                self.data[ji] = avg.conj();
            }
        }
    }

    pub(crate) fn scale_assign(&mut self, s: f64) {
        for z in &mut self.data {
            *z *= s;
        }
    }

    /// Largest entrywise modulus.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// max_ij |self_ij - other_ij|
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    /// ||M - M†||_max
    pub fn hermiticity_defect(&self) -> f64 {
        let d = self.dim;
        let mut worst = 0.0f64;
        for i in 0..d {
            for j in i..d {
                let defect = (self.get(i, j) - self.get(j, i).conj()).norm();
                worst = worst.max(defect);
            }
        }
        worst
    }

    pub fn is_finite(&self) -> bool {
        self.data
            .iter()
            .all(|z| z.re.is_finite() && z.im.is_finite())
    }

    /// Kronecker product self ⊗ other.
    pub fn kron(&self, other: &Self) -> Self {
        let da = self.dim;
        let db = other.dim;
        let d = da * db;
        let mut out = Self::zeros(d);
        for ia in 0..da {
            for ja in 0..da {
                let a = self.get(ia, ja);
                for ib in 0..db {
                    for jb in 0..db {
                        out.set(ia * db + ib, ja * db + jb, a * other.get(ib, jb));
                    }
                }
            }
        }
        out
    }

    fn check_dim(&self, other: &Self) -> Result<()> {
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch {
                left: self.dim,
                right: other.dim,
            });
        }
        Ok(())
    }
}

/// out = a * b (out must not alias a or b)
#[inline]
pub(crate) fn mul_into(out: &mut ComplexMatrix, a: &ComplexMatrix, b: &ComplexMatrix) {
    let d = a.dim;
    debug_assert_eq!(b.dim, d);
    debug_assert_eq!(out.dim, d);
    if d == 2 {
        // Unrolled qubit path; trajectory stepping lives here.
        let (a00, a01, a10, a11) = (a.data[0], a.data[1], a.data[2], a.data[3]);
        let (b00, b01, b10, b11) = (b.data[0], b.data[1], b.data[2], b.data[3]);
        out.data[0] = a00 * b00 + a01 * b10;
        out.data[1] = a00 * b01 + a01 * b11;
        out.data[2] = a10 * b00 + a11 * b10;
        out.data[3] = a10 * b01 + a11 * b11;
        return;
    }
    out.set_zero();
    for i in 0..d {
        for k in 0..d {
            let aik = a.data[i * d + k];
            if aik.re == 0.0 && aik.im == 0.0 {
                continue;
            }
            let brow = &b.data[k * d..(k + 1) * d];
            let orow = &mut out.data[i * d..(i + 1) * d];
            for j in 0..d {
                orow[j] += aik * brow[j];
            }
        }
    }
}

/// Tr(A·B) without forming the product.
#[inline]
pub(crate) fn trace_product(a: &ComplexMatrix, b: &ComplexMatrix) -> Complex64 {
    let d = a.dim;
    debug_assert_eq!(b.dim, d);
    let mut acc = Complex64::new(0.0, 0.0);
    for i in 0..d {
        for j in 0..d {
            acc += a.data[i * d + j] * b.data[j * d + i];
        }
    }
    acc
}

impl Serialize for ComplexMatrix {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        // Row-major list of (re, im) pairs, the wire format used by the CLI.
        let entries: Vec<(f64, f64)> = self.data.iter().map(|z| (z.re, z.im)).collect();
        let mut st = serializer.serialize_struct("ComplexMatrix", 2)?;
        st.serialize_field("dim", &self.dim)?;
        st.serialize_field("entries", &entries)?;
        st.end()
    }
}

impl<'de> Deserialize<'de> for ComplexMatrix {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        struct MatVisitor;
        impl<'de> Visitor<'de> for MatVisitor {
            type Value = ComplexMatrix;
            fn expecting(&self, f: &mut std::fmt::Formatter) -> std::fmt::Result {
                f.write_str("a matrix with dim and row-major (re, im) entries")
            }
            fn visit_map<A: MapAccess<'de>>(
                self,
                mut map: A,
            ) -> std::result::Result<Self::Value, A::Error> {
                let mut dim: Option<usize> = None;
                let mut entries: Option<Vec<(f64, f64)>> = None;
                while let Some(key) = map.next_key::<String>()? {
                    match key.as_str() {
                        "dim" => dim = Some(map.next_value()?),
                        "entries" => entries = Some(map.next_value()?),
                        other => return Err(de::Error::unknown_field(other, &["dim", "entries"])),
                    }
                }
                let dim = dim.ok_or_else(|| de::Error::missing_field("dim"))?;
                let entries = entries.ok_or_else(|| de::Error::missing_field("entries"))?;
                let data: Vec<Complex64> = entries
                    .iter()
                    .map(|&(re, im)| Complex64::new(re, im))
                    .collect();
                ComplexMatrix::from_entries(dim, data).map_err(|e| de::Error::custom(e.to_string()))
            }
        }
        deserializer.deserialize_struct("ComplexMatrix", &["dim", "entries"], MatVisitor)
    }
}

/// d x d complex positive unit-trace matrix; the quantum state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityMatrix {
    mat: ComplexMatrix,
}

impl DensityMatrix {
    /// Validating constructor: Hermitian, unit trace, positive semidefinite.
    pub fn new(mat: ComplexMatrix) -> Result<Self> {
        let rho = Self { mat };
        rho.validate()?;
        Ok(rho)
    }

    /// Construction from integrator output, which guarantees Hermiticity and
    /// unit trace by projection; positivity is checked at checkpoints only.
    pub(crate) fn trusted(mat: ComplexMatrix) -> Self {
        Self { mat }
    }

    pub fn validate(&self) -> Result<()> {
        let h = self.mat.hermiticity_defect();
        if h > HERMITIAN_TOL_STATE {
            return Err(Error::StateInvariant(format!(
                "Hermiticity defect {h:.3e} exceeds {HERMITIAN_TOL_STATE:.0e}"
            )));
        }
        let tr = self.mat.trace();
        let tr_defect = (tr - Complex64::new(1.0, 0.0)).norm();
        if tr_defect > TRACE_TOL {
            return Err(Error::StateInvariant(format!(
                "trace defect {tr_defect:.3e} exceeds {TRACE_TOL:.0e}"
            )));
        }
        let min_eig = min_eigenvalue(&self.mat);
        if min_eig < PSD_TOL {
            return Err(Error::StateInvariant(format!(
                "smallest eigenvalue {min_eig:.3e} below {PSD_TOL:.0e}"
            )));
        }
        Ok(())
    }

    pub fn maximally_mixed(dim: usize) -> Self {
        Self {
            mat: ComplexMatrix::identity(dim).scale_re(1.0 / dim as f64),
        }
    }

    /// Single-qubit state from a Bloch vector with |v| <= 1.
    pub fn from_bloch(x: f64, y: f64, z: f64) -> Result<Self> {
        let r = (x * x + y * y + z * z).sqrt();
        if r > 1.0 + 1e-12 {
            return Err(Error::InvalidValue {
                what: "Bloch vector",
                detail: format!("length {r} exceeds 1"),
            });
        }
        let mut m = ComplexMatrix::identity(2);
        m.add_scaled(&sigma_x(), Complex64::new(x, 0.0));
        m.add_scaled(&sigma_y(), Complex64::new(y, 0.0));
        m.add_scaled(&sigma_z(), Complex64::new(z, 0.0));
        m.scale_assign(0.5);
        Self::new(m)
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.mat.dim()
    }

    #[inline]
    pub fn mat(&self) -> &ComplexMatrix {
        &self.mat
    }

    pub fn into_mat(self) -> ComplexMatrix {
        self.mat
    }
}

/// d x d Hermitian involution (A² = identity); the measured operator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observable {
    mat: ComplexMatrix,
    label: String,
}

impl Observable {
    pub fn new(mat: ComplexMatrix, label: impl Into<String>) -> Result<Self> {
        let h = mat.hermiticity_defect();
        if h > HERMITIAN_TOL_OBSERVABLE {
            return Err(Error::ObservableInvariant(format!(
                "Hermiticity defect {h:.3e} exceeds {HERMITIAN_TOL_OBSERVABLE:.0e}"
            )));
        }
        let sq = mul(&mat, &mat);
        let inv_defect = sq.max_abs_diff(&ComplexMatrix::identity(mat.dim()));
        if inv_defect > INVOLUTION_TOL {
            return Err(Error::ObservableInvariant(format!(
                "involution defect {inv_defect:.3e} exceeds {INVOLUTION_TOL:.0e}"
            )));
        }
        Ok(Self {
            mat,
            label: label.into(),
        })
    }

    #[inline]
    pub fn mat(&self) -> &ComplexMatrix {
        &self.mat
    }

    #[inline]
    pub fn label(&self) -> &str {
        &self.label
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.mat.dim()
    }
}

/// Unit-norm state vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PureState {
    amplitudes: Vec<Complex64>,
}

impl PureState {
    pub fn new(amplitudes: Vec<Complex64>) -> Result<Self> {
        let norm_sq: f64 = amplitudes.iter().map(|z| z.norm_sqr()).sum();
        if (norm_sq - 1.0).abs() > NORM_TOL {
            return Err(Error::InvalidValue {
                what: "pure state",
                detail: format!("norm defect {:.3e} exceeds {NORM_TOL:.0e}", norm_sq - 1.0),
            });
        }
        Ok(Self { amplitudes })
    }

    /// Computational basis state |k> in dimension d.
    pub fn basis(dim: usize, k: usize) -> Result<Self> {
        if k >= dim {
            return Err(Error::InvalidValue {
                what: "basis index",
                detail: format!("{k} >= {dim}"),
            });
        }
        let mut amps = vec![Complex64::new(0.0, 0.0); dim];
        amps[k] = Complex64::new(1.0, 0.0);
        Ok(Self { amplitudes: amps })
    }

    pub fn normalized(mut amplitudes: Vec<Complex64>) -> Result<Self> {
        let norm: f64 = amplitudes.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if norm <= 0.0 || !norm.is_finite() {
            return Err(Error::InvalidValue {
                what: "pure state",
                detail: "cannot normalize the zero vector".into(),
            });
        }
        for z in &mut amplitudes {
            *z /= norm;
        }
        Ok(Self { amplitudes })
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    #[inline]
    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amplitudes
    }

    /// |ψ><ψ|
    pub fn projector(&self) -> DensityMatrix {
        let d = self.dim();
        let mat = ComplexMatrix::from_fn(d, |i, j| self.amplitudes[i] * self.amplitudes[j].conj());
        DensityMatrix::trusted(mat)
    }
}

fn mul(a: &ComplexMatrix, b: &ComplexMatrix) -> ComplexMatrix {
    let mut out = ComplexMatrix::zeros(a.dim());
    mul_into(&mut out, a, b);
    out
}

pub fn sigma_x() -> ComplexMatrix {
    ComplexMatrix::from_entries(
        2,
        vec![
            Complex64::new(0.0, 0.0),
            Complex64::new(1.0, 0.0),
            Complex64::new(1.0, 0.0),
            Complex64::new(0.0, 0.0),
        ],
    )
    .expect("static shape")
}

pub fn sigma_y() -> ComplexMatrix {
    ComplexMatrix::from_entries(
        2,
        vec![
            Complex64::new(0.0, 0.0),
            Complex64::new(0.0, -1.0),
            Complex64::new(0.0, 1.0),
            Complex64::new(0.0, 0.0),
        ],
    )
    .expect("static shape")
}

pub fn sigma_z() -> ComplexMatrix {
    ComplexMatrix::from_entries(
        2,
        vec![
            Complex64::new(1.0, 0.0),
            Complex64::new(0.0, 0.0),
            Complex64::new(0.0, 0.0),
            Complex64::new(-1.0, 0.0),
        ],
    )
    .expect("static shape")
}

/// Single-qubit Pauli axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Pauli {
    X,
    Y,
    Z,
}

impl Pauli {
    pub fn matrix(self) -> ComplexMatrix {
        match self {
            Pauli::X => sigma_x(),
            Pauli::Y => sigma_y(),
            Pauli::Z => sigma_z(),
        }
    }

    pub fn letter(self) -> char {
        match self {
            Pauli::X => 'X',
            Pauli::Y => 'Y',
            Pauli::Z => 'Z',
        }
    }
}

/// Tr(A·ρ) with the imaginary part discarded after checking it is negligible.
pub fn expectation(a: &Observable, rho: &DensityMatrix) -> Result<f64> {
    if a.dim() != rho.dim() {
        return Err(Error::DimensionMismatch {
            left: a.dim(),
            right: rho.dim(),
        });
    }
    let tr = trace_product(a.mat(), rho.mat());
    if tr.im.abs() > 1e-10 {
        return Err(Error::InvalidValue {
            what: "expectation",
            detail: format!("imaginary part {:.3e} exceeds 1e-10", tr.im),
        });
    }
    if tr.re.abs() > 1.0 + 1e-8 {
        return Err(Error::ExpectationOutOfRange { value: tr.re });
    }
    Ok(tr.re)
}

/// BC - CB
pub fn commutator(b: &ComplexMatrix, c: &ComplexMatrix) -> Result<ComplexMatrix> {
    if b.dim() != c.dim() {
        return Err(Error::DimensionMismatch {
            left: b.dim(),
            right: c.dim(),
        });
    }
    let mut bc = ComplexMatrix::zeros(b.dim());
    let mut cb = ComplexMatrix::zeros(b.dim());
    mul_into(&mut bc, b, c);
    mul_into(&mut cb, c, b);
    bc.add_scaled(&cb, Complex64::new(-1.0, 0.0));
    Ok(bc)
}

/// I ⊗ … ⊗ σ_which ⊗ … ⊗ I acting on the given qubit (qubit 0 is the leftmost
/// tensor factor).
pub fn pauli_on_qubit(which: Pauli, qubit_index: usize, n_qubits: usize) -> Result<Observable> {
    if qubit_index >= n_qubits || n_qubits == 0 || n_qubits > 6 {
        return Err(Error::QubitIndexOutOfRange {
            index: qubit_index,
            n_qubits,
        });
    }
    let mut mat = ComplexMatrix::identity(1);
    for q in 0..n_qubits {
        let factor = if q == qubit_index {
            which.matrix()
        } else {
            ComplexMatrix::identity(2)
        };
        mat = mat.kron(&factor);
    }
    Observable::new(mat, format!("{}{}", which.letter(), qubit_index))
}

/// Tr(ρ²) ∈ [1/d, 1]
pub fn purity(rho: &DensityMatrix) -> f64 {
    trace_product(rho.mat(), rho.mat()).re
}

/// Projects onto the tangent space of density matrices: Hermitian, traceless.
pub fn project_tangent(delta: &ComplexMatrix) -> ComplexMatrix {
    let mut out = delta.clone();
    out.hermitize();
    let tr = out.trace().re / delta.dim() as f64;
    for i in 0..delta.dim() {
        let v = out.get(i, i);
        out.set(i, i, v - Complex64::new(tr, 0.0));
    }
    out
}

/// Eigenvalues (ascending) and eigenvectors (columns) of a Hermitian matrix,
/// by cyclic complex Jacobi rotations. Intended for d <= 64.
pub fn hermitian_eigen(m: &ComplexMatrix) -> (Vec<f64>, ComplexMatrix) {
    let d = m.dim();
    let mut a = m.clone();
    a.hermitize();
    let mut v = ComplexMatrix::identity(d);
    let scale = a.max_abs().max(1e-300);

    for _sweep in 0..100 {
        let mut off = 0.0f64;
        for p in 0..d {
            for q in (p + 1)..d {
                off = off.max(a.get(p, q).norm());
            }
        }
        if off <= 1e-15 * scale {
            break;
        }
        for p in 0..d {
            for q in (p + 1)..d {
                let apq = a.get(p, q);
                let b = apq.norm();
                if b <= 1e-300 {
                    continue;
                }
                let phase = apq / b;
                let app = a.get(p, p).re;
                let aqq = a.get(q, q).re;
                // Zero a_pq: tan(2θ) = 2b / (app - aqq).
                let tau = (app - aqq) / (2.0 * b);
                let t = if tau >= 0.0 {
                    1.0 / (tau + (1.0 + tau * tau).sqrt())
                } else {
                    -1.0 / (-tau + (1.0 + tau * tau).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                // U = [[c, -s·e^{iφ}], [s·e^{-iφ}, c]] on the (p, q) plane.
                let upq = -s * phase;
                let uqp = s * phase.conj();
                // Columns: A <- A·U, V <- V·U
                for i in 0..d {
                    let aip = a.get(i, p);
                    let aiq = a.get(i, q);
                    a.set(i, p, aip * c + aiq * uqp);
                    a.set(i, q, aip * upq + aiq * c);
                    let vip = v.get(i, p);
                    let viq = v.get(i, q);
                    v.set(i, p, vip * c + viq * uqp);
                    v.set(i, q, vip * upq + viq * c);
                }
                // Rows: A <- U†·A
                for j in 0..d {
                    let apj = a.get(p, j);
                    let aqj = a.get(q, j);
                    a.set(p, j, apj * c + aqj * uqp.conj());
                    a.set(q, j, apj * upq.conj() + aqj * c);
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..d).collect();
    let eigs: Vec<f64> = (0..d).map(|i| a.get(i, i).re).collect();
    order.sort_by(|&i, &j| eigs[i].partial_cmp(&eigs[j]).expect("finite eigenvalues"));
    let sorted_eigs: Vec<f64> = order.iter().map(|&i| eigs[i]).collect();
    let sorted_v = ComplexMatrix::from_fn(d, |i, j| v.get(i, order[j]));
    (sorted_eigs, sorted_v)
}

pub fn min_eigenvalue(m: &ComplexMatrix) -> f64 {
    hermitian_eigen(m).0[0]
}

/// Trace norm ||M||₁ = Σ|λ_i| of a Hermitian matrix.
pub fn trace_norm_hermitian(m: &ComplexMatrix) -> f64 {
    hermitian_eigen(m).0.iter().map(|l| l.abs()).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn random_matrix(rng: &mut ChaCha8Rng, d: usize) -> ComplexMatrix {
        ComplexMatrix::from_fn(d, |_, _| {
            c(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)
        })
    }

    fn random_hermitian(rng: &mut ChaCha8Rng, d: usize) -> ComplexMatrix {
        let mut m = random_matrix(rng, d);
        m.hermitize();
        m
    }

    fn random_density(rng: &mut ChaCha8Rng, d: usize) -> DensityMatrix {
        let g = random_matrix(rng, d);
        let mut gg = ComplexMatrix::zeros(d);
        mul_into(&mut gg, &g, &g.adjoint());
        let tr = gg.trace().re;
        gg.scale_assign(1.0 / tr);
        gg.hermitize();
        DensityMatrix::new(gg).expect("GG†/Tr is a valid state")
    }

    fn ket0() -> DensityMatrix {
        PureState::basis(2, 0).unwrap().projector()
    }

    fn ket_plus() -> DensityMatrix {
        let s = PureState::new(vec![
            c(std::f64::consts::FRAC_1_SQRT_2, 0.0),
            c(std::f64::consts::FRAC_1_SQRT_2, 0.0),
        ])
        .unwrap();
        s.projector()
    }

    #[test]
    fn expectation_examples() {
        let z = Observable::new(sigma_z(), "Z").unwrap();
        let x = Observable::new(sigma_x(), "X").unwrap();
        assert!((expectation(&z, &ket0()).unwrap() - 1.0).abs() < 1e-14);
        assert!(
            expectation(&z, &DensityMatrix::maximally_mixed(2))
                .unwrap()
                .abs()
                < 1e-14
        );
        assert!((expectation(&x, &ket_plus()).unwrap() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn expectation_dimension_mismatch() {
        let z2 = pauli_on_qubit(Pauli::Z, 0, 2).unwrap();
        assert!(matches!(
            expectation(&z2, &ket0()),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn commutator_pauli_algebra() {
        // [σz, σx] = 2i σy
        let zx = commutator(&sigma_z(), &sigma_x()).unwrap();
        assert!(zx.max_abs_diff(&sigma_y().scale(c(0.0, 2.0))) < 1e-14);
        // [σz, σz] = 0
        let zz = commutator(&sigma_z(), &sigma_z()).unwrap();
        assert!(zz.max_abs() < 1e-14);
        // [σx, σy] = 2i σz
        let xy = commutator(&sigma_x(), &sigma_y()).unwrap();
        assert!(xy.max_abs_diff(&sigma_z().scale(c(0.0, 2.0))) < 1e-14);
    }

    #[test]
    fn pauli_on_qubit_structure() {
        let z0 = pauli_on_qubit(Pauli::Z, 0, 1).unwrap();
        assert!(z0.mat().max_abs_diff(&sigma_z()) < 1e-15);

        let z0_of_2 = pauli_on_qubit(Pauli::Z, 0, 2).unwrap();
        assert_eq!(z0_of_2.dim(), 4);
        let expected = [1.0, 1.0, -1.0, -1.0];
        for (i, want) in expected.iter().enumerate() {
            assert!((z0_of_2.mat().get(i, i).re - want).abs() < 1e-15);
            assert!(z0_of_2.mat().get(i, i).im.abs() < 1e-15);
        }

        let x1 = pauli_on_qubit(Pauli::X, 1, 2).unwrap();
        let want = ComplexMatrix::identity(2).kron(&sigma_x());
        assert!(x1.mat().max_abs_diff(&want) < 1e-15);

        assert!(pauli_on_qubit(Pauli::X, 2, 2).is_err());
    }

    #[test]
    fn purity_examples() {
        assert!((purity(&ket0()) - 1.0).abs() < 1e-14);
        assert!((purity(&DensityMatrix::maximally_mixed(2)) - 0.5).abs() < 1e-14);
        let diag = DensityMatrix::new(ComplexMatrix::from_fn(2, |i, j| {
            if i == j {
                c(if i == 0 { 0.75 } else { 0.25 }, 0.0)
            } else {
                c(0.0, 0.0)
            }
        }))
        .unwrap();
        assert!((purity(&diag) - 0.625).abs() < 1e-14);
    }

    #[test]
    fn project_tangent_examples() {
        assert!(project_tangent(&sigma_x()).max_abs_diff(&sigma_x()) < 1e-15);
        assert!(project_tangent(&ComplexMatrix::identity(2)).max_abs() < 1e-15);
        assert!(project_tangent(&sigma_z().scale(c(0.0, 1.0))).max_abs() < 1e-15);
    }

    #[test]
    fn density_validation_rejects_bad_states() {
        // Non-Hermitian
        let mut m = ComplexMatrix::identity(2).scale_re(0.5);
        m.set(0, 1, c(0.1, 0.0));
        assert!(DensityMatrix::new(m).is_err());
        // Wrong trace
        assert!(DensityMatrix::new(ComplexMatrix::identity(2)).is_err());
        // Not PSD: diag(1.5, -0.5)
        let neg = ComplexMatrix::from_fn(2, |i, j| {
            if i == j {
                c(if i == 0 { 1.5 } else { -0.5 }, 0.0)
            } else {
                c(0.0, 0.0)
            }
        });
        assert!(DensityMatrix::new(neg).is_err());
    }

    #[test]
    fn observable_validation() {
        assert!(Observable::new(sigma_z().scale_re(0.5), "half").is_err());
        let mut almost = sigma_x();
        almost.set(0, 1, c(1.0, 1e-6));
        assert!(Observable::new(almost, "skew").is_err());
    }

    #[test]
    fn eigen_known_values() {
        let (eigs, v) = hermitian_eigen(&sigma_z());
        assert!((eigs[0] + 1.0).abs() < 1e-13);
        assert!((eigs[1] - 1.0).abs() < 1e-13);
        // Reconstruction
        let lambda =
            ComplexMatrix::from_fn(2, |i, j| if i == j { c(eigs[i], 0.0) } else { c(0.0, 0.0) });
        let recon = v.mul(&lambda).unwrap().mul(&v.adjoint()).unwrap();
        assert!(recon.max_abs_diff(&sigma_z()) < 1e-12);
    }

    #[test]
    fn eigen_reconstructs_random_hermitian() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for &d in &[2usize, 3, 4, 8, 16] {
            let m = random_hermitian(&mut rng, d);
            let (eigs, v) = hermitian_eigen(&m);
            let lambda =
                ComplexMatrix::from_fn(
                    d,
                    |i, j| {
                        if i == j {
                            c(eigs[i], 0.0)
                        } else {
                            c(0.0, 0.0)
                        }
                    },
                );
            let recon = v.mul(&lambda).unwrap().mul(&v.adjoint()).unwrap();
            assert!(
                recon.max_abs_diff(&m) < 1e-11,
                "d={d} reconstruction defect {}",
                recon.max_abs_diff(&m)
            );
            // V unitary
            let vv = v.adjoint().mul(&v).unwrap();
            assert!(vv.max_abs_diff(&ComplexMatrix::identity(d)) < 1e-12);
            // Ascending
            for w in eigs.windows(2) {
                assert!(w[0] <= w[1] + 1e-13);
            }
        }
    }

    #[test]
    fn random_density_min_eig_nonnegative() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let rho = random_density(&mut rng, 4);
            assert!(min_eigenvalue(rho.mat()) > -1e-12);
            let p = purity(&rho);
            assert!(p <= 1.0 + 1e-12 && p >= 0.25 - 1e-12);
        }
    }

    #[test]
    fn matrix_serde_round_trip() {
        let m = sigma_y();
        let json = serde_json::to_string(&m).unwrap();
        assert!(json.contains("\"dim\":2"));
        assert!(json.contains("entries"));
        let back: ComplexMatrix = serde_json::from_str(&json).unwrap();
        assert!(back.max_abs_diff(&m) == 0.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn commutator_of_hermitians_is_antihermitian_traceless(seed in 0u64..1_000_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let b = random_hermitian(&mut rng, 4);
            let cmat = random_hermitian(&mut rng, 4);
            let k = commutator(&b, &cmat).unwrap();
            // Anti-Hermitian: K† = -K
            let defect = k.adjoint().max_abs_diff(&k.scale(c(-1.0, 0.0)));
            prop_assert!(defect < 1e-12);
            prop_assert!(k.trace().norm() < 1e-12);
        }

        #[test]
        fn expectation_is_linear_in_rho(seed in 0u64..1_000_000, alpha in 0.0f64..1.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = pauli_on_qubit(Pauli::Z, 0, 2).unwrap();
            let rho1 = random_density(&mut rng, 4);
            let rho2 = random_density(&mut rng, 4);
            let mut mix = rho1.mat().scale_re(alpha);
            mix.add_scaled(rho2.mat(), c(1.0 - alpha, 0.0));
            let mixed = DensityMatrix::new(mix).unwrap();
            let lhs = expectation(&a, &mixed).unwrap();
            let rhs = alpha * expectation(&a, &rho1).unwrap()
                + (1.0 - alpha) * expectation(&a, &rho2).unwrap();
            prop_assert!((lhs - rhs).abs() < 1e-12);
        }

        #[test]
        fn project_tangent_is_idempotent_and_in_tangent_space(seed in 0u64..1_000_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = random_matrix(&mut rng, 4);
            let p = project_tangent(&m);
            prop_assert!(p.hermiticity_defect() < 1e-12);
            prop_assert!(p.trace().norm() < 1e-12);
            let pp = project_tangent(&p);
            prop_assert!(pp.max_abs_diff(&p) < 1e-13);
        }

        #[test]
        fn paulis_on_distinct_qubits_commute(
            q1 in 0usize..3, q2 in 0usize..3,
            w1 in 0usize..3, w2 in 0usize..3,
        ) {
            prop_assume!(q1 != q2);
            let which = [Pauli::X, Pauli::Y, Pauli::Z];
            let a = pauli_on_qubit(which[w1], q1, 3).unwrap();
            let b = pauli_on_qubit(which[w2], q2, 3).unwrap();
            let k = commutator(a.mat(), b.mat()).unwrap();
            prop_assert!(k.max_abs() < 1e-13);
        }
    }
}
