//! Dense complex operator algebra on a finite-dimensional Hilbert space,
//! plus the superoperators the master equations are built from.
//!
//! Operators are immutable values; every operation here is a pure function.
//! Basis convention for a two-level atom: index 0 = |g>, index 1 = |e>,
//! so the lowering operator is sigma_minus = |g><e|.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::Error;

pub const I: Complex64 = Complex64::new(0.0, 1.0);
pub const ONE: Complex64 = Complex64::new(1.0, 0.0);
pub const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Dense square complex matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Operator {
    dim: usize,
    entries: Vec<Complex64>,
}

/// Serialized form: entries as `[re, im]` pairs, row-major, with a `dim` field.
#[derive(Serialize, Deserialize)]
struct OperatorRepr {
    dim: usize,
    entries: Vec<[f64; 2]>,
}

impl Serialize for Operator {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        OperatorRepr {
            dim: self.dim,
            entries: self.entries.iter().map(|z| [z.re, z.im]).collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Operator {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let repr = OperatorRepr::deserialize(d)?;
        if repr.entries.len() != repr.dim * repr.dim {
            return Err(serde::de::Error::custom(format!(
                "operator with dim {} needs {} entries, got {}",
                repr.dim,
                repr.dim * repr.dim,
                repr.entries.len()
            )));
        }
        Ok(Operator {
            dim: repr.dim,
            entries: repr
                .entries
                .iter()
                .map(|p| Complex64::new(p[0], p[1]))
                .collect(),
        })
    }
}

impl Operator {
    pub fn new(dim: usize, entries: Vec<Complex64>) -> Result<Self, Error> {
        if dim == 0 {
            return Err(Error::InvalidOperator("dimension must be positive".into()));
        }
        if entries.len() != dim * dim {
            return Err(Error::InvalidOperator(format!(
                "dim {} requires {} entries, got {}",
                dim,
                dim * dim,
                entries.len()
            )));
        }
        Ok(Self { dim, entries })
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            entries: vec![ZERO; dim * dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut op = Self::zeros(dim);
        for i in 0..dim {
            op[(i, i)] = ONE;
        }
        op
    }

    /// |ket><bra| in the computational basis.
    pub fn ketbra(dim: usize, ket: usize, bra: usize) -> Self {
        let mut op = Self::zeros(dim);
        op[(ket, bra)] = ONE;
        op
    }

    /// Lowering operator |g><e| for a two-level system.
    pub fn sigma_minus() -> Self {
        Self::ketbra(2, 0, 1)
    }

    /// Raising operator |e><g| for a two-level system.
    pub fn sigma_plus() -> Self {
        Self::ketbra(2, 1, 0)
    }

    /// Projector |e><e| onto the excited state of a two-level system.
    pub fn excited_projector() -> Self {
        Self::ketbra(2, 1, 1)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self) -> &[Complex64] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [Complex64] {
        &mut self.entries
    }

    pub fn adjoint(&self) -> Self {
        let d = self.dim;
        let mut out = Self::zeros(d);
        for i in 0..d {
            for j in 0..d {
                out[(j, i)] = self[(i, j)].conj();
            }
        }
        out
    }

    pub fn trace(&self) -> Complex64 {
        (0..self.dim).map(|i| self[(i, i)]).sum()
    }

    pub fn scale(&self, c: Complex64) -> Self {
        Self {
            dim: self.dim,
            entries: self.entries.iter().map(|z| z * c).collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        debug_assert_eq!(self.dim, other.dim);
        Self {
            dim: self.dim,
            entries: self
                .entries
                .iter()
                .zip(&other.entries)
                .map(|(a, b)| a + b)
                .collect(),
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        debug_assert_eq!(self.dim, other.dim);
        Self {
            dim: self.dim,
            entries: self
                .entries
                .iter()
                .zip(&other.entries)
                .map(|(a, b)| a - b)
                .collect(),
        }
    }

    pub fn matmul(&self, other: &Self) -> Self {
        let mut out = Self::zeros(self.dim);
        matmul_into(self, other, &mut out);
        out
    }

    /// Max absolute entry, used for tolerance checks.
    pub fn max_abs(&self) -> f64 {
        self.entries.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn is_identity(&self, tol: f64) -> bool {
        let d = self.dim;
        for i in 0..d {
            for j in 0..d {
                let expect = if i == j { ONE } else { ZERO };
                if (self[(i, j)] - expect).norm() > tol {
                    return false;
                }
            }
        }
        true
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.sub(&self.adjoint()).max_abs() <= tol
    }

    pub fn is_zero(&self, tol: f64) -> bool {
        self.max_abs() <= tol
    }

    /// Eigenvalues of a Hermitian matrix via cyclic Jacobi rotations.
    /// Only valid for (numerically) Hermitian input.
    pub fn hermitian_eigenvalues(&self) -> Vec<f64> {
        let d = self.dim;
        let mut a = self.clone();
        // Jacobi sweeps on the complex Hermitian matrix.
        for _ in 0..100 {
            let mut off = 0.0;
            for i in 0..d {
                for j in (i + 1)..d {
                    off += a[(i, j)].norm_sqr();
                }
            }
            if off < 1e-28 {
                break;
            }
            for p in 0..d {
                for q in (p + 1)..d {
                    let apq = a[(p, q)];
                    if apq.norm() < 1e-300 {
                        continue;
                    }
                    let app = a[(p, p)].re;
                    let aqq = a[(q, q)].re;
                    // Unitary 2x2 diagonalization of [[app, apq],[apq*, aqq]].
                    let phase = apq / apq.norm();
                    let theta = 0.5 * (2.0 * apq.norm()).atan2(aqq - app);
                    let (c, s) = (theta.cos(), theta.sin());
                    // Columns: v_p' = c v_p - s*phase* v_q ; v_q' = s phase^* ... apply G^dagger A G.
                    for k in 0..d {
                        let akp = a[(k, p)];
                        let akq = a[(k, q)];
                        a[(k, p)] = akp * c - akq * phase.conj() * s;
                        a[(k, q)] = akp * phase * s + akq * c;
                    }
                    for k in 0..d {
                        let apk = a[(p, k)];
                        let aqk = a[(q, k)];
                        a[(p, k)] = apk * c - aqk * phase * s;
                        a[(q, k)] = apk * phase.conj() * s + aqk * c;
                    }
                }
            }
        }
        let mut eigs: Vec<f64> = (0..d).map(|i| a[(i, i)].re).collect();
        eigs.sort_by(|x, y| x.partial_cmp(y).unwrap());
        eigs
    }

    /// Trace distance (1/2)||a - b||_1 between two Hermitian matrices.
    pub fn trace_distance(&self, other: &Self) -> f64 {
        let diff = self.sub(other);
        0.5 * diff
            .hermitian_eigenvalues()
            .iter()
            .map(|e| e.abs())
            .sum::<f64>()
    }

    /// Check density-matrix validity: Hermitian, unit trace, PSD.
    pub fn is_density_matrix(&self, tol: f64) -> bool {
        self.is_hermitian(tol)
            && (self.trace() - ONE).norm() <= tol
            && self
                .hermitian_eigenvalues()
                .first()
                .map_or(false, |&e| e >= -tol)
    }
}

impl std::ops::Index<(usize, usize)> for Operator {
    type Output = Complex64;
    fn index(&self, (i, j): (usize, usize)) -> &Complex64 {
        &self.entries[i * self.dim + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Operator {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut Complex64 {
        &mut self.entries[i * self.dim + j]
    }
}

/// out = a * b. Panics on dimension mismatch of the buffers.
pub fn matmul_into(a: &Operator, b: &Operator, out: &mut Operator) {
    let d = a.dim;
    assert_eq!(d, b.dim);
    assert_eq!(d, out.dim);
    for i in 0..d {
        for j in 0..d {
            let mut acc = ZERO;
            for k in 0..d {
                acc += a.entries[i * d + k] * b.entries[k * d + j];
            }
            out.entries[i * d + j] = acc;
        }
    }
}

/// out += c * (a * b)
pub fn matmul_acc(a: &Operator, b: &Operator, c: Complex64, out: &mut Operator) {
    let d = a.dim;
    for i in 0..d {
        for j in 0..d {
            let mut acc = ZERO;
            for k in 0..d {
                acc += a.entries[i * d + k] * b.entries[k * d + j];
            }
            out.entries[i * d + j] += c * acc;
        }
    }
}

fn check_dims(a: &Operator, b: &Operator) -> Result<(), Error> {
    if a.dim != b.dim {
        Err(Error::DimensionMismatch {
            left: a.dim,
            right: b.dim,
        })
    } else {
        Ok(())
    }
}

/// Lindblad dissipator L rho L^dag - (1/2)(L^dag L rho + rho L^dag L).
pub fn lindblad_dissipator(l: &Operator, rho: &Operator) -> Result<Operator, Error> {
    check_dims(l, rho)?;
    let l_dag = l.adjoint();
    let ldl = l_dag.matmul(l);
    let mut out = l.matmul(rho).matmul(&l_dag);
    let half = Complex64::new(-0.5, 0.0);
    matmul_acc(&ldl, rho, half, &mut out);
    matmul_acc(rho, &ldl, half, &mut out);
    Ok(out)
}

/// Commutator [a, b] = ab - ba.
pub fn commutator(a: &Operator, b: &Operator) -> Result<Operator, Error> {
    check_dims(a, b)?;
    let mut out = a.matmul(b);
    matmul_acc(b, a, -ONE, &mut out);
    Ok(out)
}

/// Hilbert-Schmidt pairing Tr[rho^dag x].  The adjoint on the state matters
/// only for the non-Hermitian off-diagonal generalized density operators.
pub fn expectation(rho: &Operator, x: &Operator) -> Result<Complex64, Error> {
    check_dims(rho, x)?;
    let d = rho.dim;
    let mut acc = ZERO;
    for i in 0..d {
        for j in 0..d {
            // (rho^dag x)_ii = sum_j conj(rho_ji) x_ji
            acc += rho.entries[j * d + i].conj() * x.entries[j * d + i];
        }
    }
    Ok(acc)
}

/// An (S, L, H) triple: scattering, coupling, and Hamiltonian operators.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SLHTriple {
    pub s: Operator,
    pub l: Operator,
    pub h: Operator,
}

impl SLHTriple {
    pub const HERMITICITY_TOL: f64 = 1e-12;

    pub fn new(s: Operator, l: Operator, h: Operator) -> Result<Self, Error> {
        if s.dim() != l.dim() || l.dim() != h.dim() {
            return Err(Error::InvalidOperator(
                "S, L, H must share the same dimension".into(),
            ));
        }
        if !h.is_hermitian(Self::HERMITICITY_TOL) {
            return Err(Error::InvalidOperator("H is not Hermitian".into()));
        }
        if !s.adjoint().matmul(&s).is_identity(Self::HERMITICITY_TOL) {
            return Err(Error::InvalidOperator("S is not unitary".into()));
        }
        Ok(Self { s, l, h })
    }

    pub fn dim(&self) -> usize {
        self.h.dim()
    }

    /// Two-level atom decaying at rate gamma: H = 0, L = sqrt(gamma)|g><e|, S = I.
    pub fn two_level_decay(gamma: f64) -> Self {
        Self {
            s: Operator::identity(2),
            l: Operator::sigma_minus().scale(Complex64::new(gamma.sqrt(), 0.0)),
            h: Operator::zeros(2),
        }
    }

    /// Vacuum master-equation generator -i[H, rho] + D[L] rho.
    pub fn vacuum_generator(&self, rho: &Operator) -> Result<Operator, Error> {
        let mut out = lindblad_dissipator(&self.l, rho)?;
        let comm = commutator(&self.h, rho)?;
        out = out.add(&comm.scale(-I));
        Ok(out)
    }
}

/// Multi-mode (S, L, H): an S matrix of operators, a coupling vector, one H.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MultiModeSLH {
    pub modes: usize,
    /// Row-major: s[i * modes + j] is S_ij.
    pub s: Vec<Operator>,
    pub l: Vec<Operator>,
    pub h: Operator,
}

impl MultiModeSLH {
    pub fn new(modes: usize, s: Vec<Operator>, l: Vec<Operator>, h: Operator) -> Result<Self, Error> {
        if s.len() != modes * modes || l.len() != modes {
            return Err(Error::InvalidOperator(
                "multi-mode SLH has wrong operator counts".into(),
            ));
        }
        let dim = h.dim();
        if s.iter().any(|op| op.dim() != dim) || l.iter().any(|op| op.dim() != dim) {
            return Err(Error::InvalidOperator("operator dimensions differ".into()));
        }
        if !h.is_hermitian(SLHTriple::HERMITICITY_TOL) {
            return Err(Error::InvalidOperator("H is not Hermitian".into()));
        }
        let out = Self { modes, s, l, h };
        if !out.scattering_unitary(SLHTriple::HERMITICITY_TOL) {
            return Err(Error::InvalidOperator(
                "scattering matrix violates sum_k S_ik S_jk^dag = delta_ij".into(),
            ));
        }
        Ok(out)
    }

    pub fn s_ij(&self, i: usize, j: usize) -> &Operator {
        &self.s[i * self.modes + j]
    }

    pub fn dim(&self) -> usize {
        self.h.dim()
    }

    /// sum_k S_ik S_jk^dag = delta_ij I and sum_k S_ki^dag S_kj = delta_ij I.
    pub fn scattering_unitary(&self, tol: f64) -> bool {
        let d = self.dim();
        let m = self.modes;
        for i in 0..m {
            for j in 0..m {
                let mut row = Operator::zeros(d);
                let mut col = Operator::zeros(d);
                for k in 0..m {
                    row = row.add(&self.s_ij(i, k).matmul(&self.s_ij(j, k).adjoint()));
                    col = col.add(&self.s_ij(k, i).adjoint().matmul(self.s_ij(k, j)));
                }
                let expect = if i == j {
                    Operator::identity(d)
                } else {
                    Operator::zeros(d)
                };
                if row.sub(&expect).max_abs() > tol || col.sub(&expect).max_abs() > tol {
                    return false;
                }
            }
        }
        true
    }

    /// Scattering preset: H = 0, L_i = sqrt(gamma_i)|g><e|, S diagonal-identity.
    /// The forward/backward waveguide study uses gamma_1 = gamma_2 = 1/2.
    pub fn waveguide_two_level(gamma1: f64, gamma2: f64) -> Self {
        let id = Operator::identity(2);
        let zero = Operator::zeros(2);
        Self {
            modes: 2,
            s: vec![id.clone(), zero.clone(), zero, id],
            l: vec![
                Operator::sigma_minus().scale(Complex64::new(gamma1.sqrt(), 0.0)),
                Operator::sigma_minus().scale(Complex64::new(gamma2.sqrt(), 0.0)),
            ],
            h: Operator::zeros(2),
        }
    }
}
