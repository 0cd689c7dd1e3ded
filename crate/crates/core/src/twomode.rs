//! Two-mode Fock hierarchy: photons in two field modes (e.g. forward and
//! backward propagation) with packets xi(t) in mode one and eta(t) in
//! mode two.
//!
//! Generalized density operators rho_{m,n;p,q} carry a (bra, ket) Fock
//! pair per mode.  With the multimode coupling (S_ij, L_i, H):
//!
//!   d rho_{m,n;p,q}/dt = -i[H, rho] + sum_i D[L_i] rho
//!     + sqrt(m) xi    sum_i [S_i1 rho_{m-1,n;p,q}, L_i^dag]
//!     + sqrt(p) eta   sum_i [S_i2 rho_{m,n;p-1,q}, L_i^dag]
//!     + sqrt(n) xi^*  sum_i [L_i, rho_{m,n-1;p,q} S_i1^dag]
//!     + sqrt(q) eta^* sum_i [L_i, rho_{m,n;p,q-1} S_i2^dag]
//!     + sqrt(mn) |xi|^2  (sum_i S_i1 rho_{m-1,n-1;p,q} S_i1^dag - rho_{m-1,n-1;p,q})
//!     + sqrt(pq) |eta|^2 (sum_i S_i2 rho_{m,n;p-1,q-1} S_i2^dag - rho_{m,n;p-1,q-1})
//!     + sqrt(mq) xi eta^* sum_i S_i1 rho_{m-1,n;p,q-1} S_i2^dag
//!     + sqrt(np) xi^* eta sum_i S_i2 rho_{m,n-1;p-1,q} S_i1^dag
//!
//! The adjoint symmetry rho_{n,m;q,p} = rho_{m,n;p,q}^dag halves the
//! storage: we keep labels whose joint bra index (m, p) is >= the joint
//! ket index (n, q) in lexicographic order.

use std::cell::RefCell;
use std::collections::{BTreeMap, HashMap};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::integrator::OdeSystem;
use crate::operators::{matmul_acc, matmul_into, MultiModeSLH, Operator, I, ONE, ZERO};
use crate::wavepacket::WavePacket;

pub type Label = (usize, usize, usize, usize); // (m, n, p, q)

/// Canonical label set for truncations n_max (mode one) and q_max (mode two).
#[derive(Debug, Clone)]
pub struct TwoModeLabels {
    pub n_max: usize,
    pub q_max: usize,
    pub stored: Vec<Label>,
    index: HashMap<Label, usize>,
}

fn is_canonical(m: usize, n: usize, p: usize, q: usize) -> bool {
    (m, p) >= (n, q)
}

impl TwoModeLabels {
    pub fn new(n_max: usize, q_max: usize) -> Self {
        let mut stored = Vec::new();
        for m in 0..=n_max {
            for n in 0..=n_max {
                for p in 0..=q_max {
                    for q in 0..=q_max {
                        if is_canonical(m, n, p, q) {
                            stored.push((m, n, p, q));
                        }
                    }
                }
            }
        }
        stored.sort();
        let index = stored.iter().enumerate().map(|(i, &l)| (l, i)).collect();
        Self {
            n_max,
            q_max,
            stored,
            index,
        }
    }

    pub fn len(&self) -> usize {
        self.stored.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn position(&self, label: Label) -> Option<usize> {
        self.index.get(&label).copied()
    }

    /// Index into the full (adjoint-completed) table.
    pub fn full_index(&self, m: usize, n: usize, p: usize, q: usize) -> usize {
        let w1 = self.n_max + 1;
        let w2 = self.q_max + 1;
        ((m * w1 + n) * w2 + p) * w2 + q
    }

    pub fn full_len(&self) -> usize {
        (self.n_max + 1) * (self.n_max + 1) * (self.q_max + 1) * (self.q_max + 1)
    }
}

/// State of all stored levels.
#[derive(Debug, Clone)]
pub struct TwoModeHierarchyState {
    pub labels: TwoModeLabels,
    pub time: f64,
    pub matrices: Vec<Operator>,
}

impl TwoModeHierarchyState {
    pub fn dim(&self) -> usize {
        self.matrices[0].dim()
    }

    pub fn level(&self, m: usize, n: usize, p: usize, q: usize) -> Operator {
        if is_canonical(m, n, p, q) {
            self.matrices[self.labels.position((m, n, p, q)).unwrap()].clone()
        } else {
            self.matrices[self.labels.position((n, m, q, p)).unwrap()].adjoint()
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            labels: self.labels.clone(),
            time: self.time,
            matrices: self
                .matrices
                .iter()
                .map(|m| Operator::zeros(m.dim()))
                .collect(),
        }
    }
}

/// Diagonal-in-both-modes levels start in rho_sys; everything else at zero.
pub fn initial_state_twomode(
    rho_sys: &Operator,
    n_max: usize,
    q_max: usize,
) -> Result<TwoModeHierarchyState, Error> {
    if !rho_sys.is_density_matrix(1e-10) {
        return Err(Error::InvalidFieldState(
            "initial system state is not a density matrix".into(),
        ));
    }
    let labels = TwoModeLabels::new(n_max, q_max);
    let matrices = labels
        .stored
        .iter()
        .map(|&(m, n, p, q)| {
            if m == n && p == q {
                rho_sys.clone()
            } else {
                Operator::zeros(rho_sys.dim())
            }
        })
        .collect();
    Ok(TwoModeHierarchyState {
        labels,
        time: 0.0,
        matrices,
    })
}

/// Field state over the two-mode Fock layers: standard matrix elements
/// c_{m,n;p,q} = <m_xi; p_eta| rho_field |n_xi; q_eta>.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TwoModeCombination {
    pub coeffs: BTreeMap<Label, Complex64>,
}

impl TwoModeCombination {
    /// |N_xi; Q_eta>
    pub fn fock(n: usize, q: usize) -> Self {
        let mut coeffs = BTreeMap::new();
        coeffs.insert((n, n, q, q), ONE);
        Self { coeffs }
    }

    /// Pure state sum amp |n_xi; q_eta>, amplitudes indexed (n, q).
    pub fn superposition(amplitudes: &[(usize, usize, Complex64)]) -> Self {
        let mut coeffs = BTreeMap::new();
        for &(m, p, am) in amplitudes {
            for &(n, q, an) in amplitudes {
                *coeffs.entry((m, n, p, q)).or_insert(ZERO) += am * an.conj();
            }
        }
        Self { coeffs }
    }

    /// Single-photon N00N state (|1;0> + |0;1>)/sqrt(2).
    pub fn noon_one() -> Self {
        let amp = Complex64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
        Self::superposition(&[(1, 0, amp), (0, 1, amp)])
    }

    pub fn max_levels(&self) -> (usize, usize) {
        let mut n_max = 0;
        let mut q_max = 0;
        for &(m, n, p, q) in self.coeffs.keys() {
            n_max = n_max.max(m.max(n));
            q_max = q_max.max(p.max(q));
        }
        (n_max, q_max)
    }

    /// Hermiticity, unit trace, and positivity over the joint Fock grid.
    pub fn validate(&self) -> Result<(), Error> {
        let (n_max, q_max) = self.max_levels();
        let w2 = q_max + 1;
        let dim = (n_max + 1) * w2;
        let mut mat = Operator::zeros(dim);
        for (&(m, n, p, q), &c) in &self.coeffs {
            mat[(m * w2 + p, n * w2 + q)] = c;
        }
        if !mat.is_hermitian(1e-12) {
            return Err(Error::InvalidFieldState(
                "two-mode coefficients are not Hermitian".into(),
            ));
        }
        if (mat.trace() - ONE).norm() > 1e-12 {
            return Err(Error::InvalidFieldState(
                "two-mode coefficients do not sum to unit trace".into(),
            ));
        }
        if mat
            .hermitian_eigenvalues()
            .first()
            .map_or(false, |&e| e < -1e-10)
        {
            return Err(Error::InvalidFieldState(
                "two-mode coefficients are not positive semidefinite".into(),
            ));
        }
        Ok(())
    }
}

/// rho_total = sum c^*_{m,n;p,q} rho_{m,n;p,q}
pub fn assemble_total_twomode(
    state: &TwoModeHierarchyState,
    combo: &TwoModeCombination,
) -> Result<Operator, Error> {
    let mut out = Operator::zeros(state.dim());
    for (&(m, n, p, q), &c) in &combo.coeffs {
        if m > state.labels.n_max || n > state.labels.n_max || p > state.labels.q_max
            || q > state.labels.q_max
        {
            return Err(Error::LevelOutOfRange {
                m: m.max(n),
                n: p.max(q),
                n_max: state.labels.n_max.min(state.labels.q_max),
            });
        }
        out = out.add(&state.level(m, n, p, q).scale(c.conj()));
    }
    Ok(out)
}

/// Precomputed multimode coupling operators.
struct MultiCache {
    modes: usize,
    l: Vec<Operator>,
    l_dag: Vec<Operator>,
    /// sum_i L_i^dag L_i
    ldl_sum: Operator,
    /// L_i^dag L_i per mode (flux observable per output channel)
    ldl: Vec<Operator>,
    s: Vec<Operator>,
    s_dag: Vec<Operator>,
    h: Operator,
    s_is_diag_identity: bool,
    h_is_zero: bool,
}

impl MultiCache {
    fn new(slh: &MultiModeSLH) -> Self {
        let d = slh.dim();
        let l_dag: Vec<_> = slh.l.iter().map(Operator::adjoint).collect();
        let ldl: Vec<_> = l_dag
            .iter()
            .zip(&slh.l)
            .map(|(ld, l)| ld.matmul(l))
            .collect();
        let mut ldl_sum = Operator::zeros(d);
        for x in &ldl {
            ldl_sum = ldl_sum.add(x);
        }
        let mut diag_id = true;
        for i in 0..slh.modes {
            for j in 0..slh.modes {
                let sij = slh.s_ij(i, j);
                let ok = if i == j {
                    sij.is_identity(1e-14)
                } else {
                    sij.is_zero(1e-14)
                };
                diag_id &= ok;
            }
        }
        Self {
            modes: slh.modes,
            l: slh.l.clone(),
            l_dag,
            ldl_sum,
            ldl,
            s_dag: slh.s.iter().map(Operator::adjoint).collect(),
            s: slh.s.clone(),
            h_is_zero: slh.h.is_zero(0.0),
            h: slh.h.clone(),
            s_is_diag_identity: diag_id,
        }
    }

    fn s_ij(&self, i: usize, j: usize) -> &Operator {
        &self.s[i * self.modes + j]
    }

    fn s_dag_ij(&self, i: usize, j: usize) -> &Operator {
        &self.s_dag[i * self.modes + j]
    }

    /// out += -i[H, rho] + sum_i D[L_i] rho
    fn add_vacuum_generator(&self, rho: &Operator, tmp: &mut Operator, out: &mut Operator) {
        let mhalf = Complex64::new(-0.5, 0.0);
        for i in 0..self.modes {
            matmul_into(&self.l[i], rho, tmp);
            matmul_acc(tmp, &self.l_dag[i], ONE, out);
        }
        matmul_acc(&self.ldl_sum, rho, mhalf, out);
        matmul_acc(rho, &self.ldl_sum, mhalf, out);
        if !self.h_is_zero {
            matmul_acc(&self.h, rho, -I, out);
            matmul_acc(rho, &self.h, I, out);
        }
    }

    /// out += c sum_i [S_{i,mode} rho, L_i^dag]
    fn add_drive_bra(
        &self,
        mode: usize,
        rho: &Operator,
        c: Complex64,
        tmp: &mut Operator,
        out: &mut Operator,
    ) {
        for i in 0..self.modes {
            if self.s_is_diag_identity {
                if i != mode {
                    continue;
                }
                matmul_acc(rho, &self.l_dag[i], c, out);
                matmul_acc(&self.l_dag[i], rho, -c, out);
            } else {
                matmul_into(self.s_ij(i, mode), rho, tmp);
                matmul_acc(tmp, &self.l_dag[i], c, out);
                matmul_acc(&self.l_dag[i], tmp, -c, out);
            }
        }
    }

    /// out += c sum_i [L_i, rho S_{i,mode}^dag]
    fn add_drive_ket(
        &self,
        mode: usize,
        rho: &Operator,
        c: Complex64,
        tmp: &mut Operator,
        out: &mut Operator,
    ) {
        for i in 0..self.modes {
            if self.s_is_diag_identity {
                if i != mode {
                    continue;
                }
                matmul_acc(&self.l[i], rho, c, out);
                matmul_acc(rho, &self.l[i], -c, out);
            } else {
                matmul_into(rho, self.s_dag_ij(i, mode), tmp);
                matmul_acc(&self.l[i], tmp, c, out);
                matmul_acc(tmp, &self.l[i], -c, out);
            }
        }
    }

    /// out += c (sum_i S_{i,a} rho S_{i,b}^dag - delta_{ab} rho)
    fn add_scatter(
        &self,
        a: usize,
        b: usize,
        rho: &Operator,
        c: Complex64,
        tmp: &mut Operator,
        out: &mut Operator,
    ) {
        if self.s_is_diag_identity {
            // sum_i S_{ia} rho S_{ib}^dag = delta_{ab} rho exactly
            return;
        }
        for i in 0..self.modes {
            matmul_into(self.s_ij(i, a), rho, tmp);
            matmul_acc(tmp, self.s_dag_ij(i, b), c, out);
        }
        if a == b {
            for (o, r) in out.entries_mut().iter_mut().zip(rho.entries()) {
                *o -= c * r;
            }
        }
    }
}

/// Operator-level right-hand side (reference implementation).
pub fn twomode_rhs(
    slh: &MultiModeSLH,
    xi: &WavePacket,
    eta: &WavePacket,
    state: &TwoModeHierarchyState,
    t: f64,
) -> Result<TwoModeHierarchyState, Error> {
    if slh.modes != 2 {
        return Err(Error::Unsupported(
            "two-mode hierarchy requires exactly 2 modes".into(),
        ));
    }
    if state.dim() != slh.dim() {
        return Err(Error::DimensionMismatch {
            left: state.dim(),
            right: slh.dim(),
        });
    }
    let cache = MultiCache::new(slh);
    let d = slh.dim();
    let xi_t = xi.eval(t);
    let eta_t = eta.eval(t);
    let mut out = state.zeros_like();
    let mut tmp = Operator::zeros(d);
    for (k, &(m, n, p, q)) in state.labels.stored.iter().enumerate() {
        let mut deriv = Operator::zeros(d);
        cache.add_vacuum_generator(&state.matrices[k], &mut tmp, &mut deriv);
        add_drive_terms(
            &cache,
            |a, b, c, e| state.level(a, b, c, e),
            m,
            n,
            p,
            q,
            xi_t,
            eta_t,
            &mut tmp,
            &mut deriv,
        );
        out.matrices[k] = deriv;
    }
    out.time = t;
    Ok(out)
}

/// The packet-dependent part of the two-mode generator, shared between the
/// reference and flattened implementations.
#[allow(clippy::too_many_arguments)]
fn add_drive_terms(
    cache: &MultiCache,
    level: impl Fn(usize, usize, usize, usize) -> Operator,
    m: usize,
    n: usize,
    p: usize,
    q: usize,
    xi_t: Complex64,
    eta_t: Complex64,
    tmp: &mut Operator,
    deriv: &mut Operator,
) {
    let (sm, sn, sp, sq) = (
        (m as f64).sqrt(),
        (n as f64).sqrt(),
        (p as f64).sqrt(),
        (q as f64).sqrt(),
    );
    if xi_t != ZERO {
        if m > 0 {
            cache.add_drive_bra(0, &level(m - 1, n, p, q), xi_t * sm, tmp, deriv);
        }
        if n > 0 {
            cache.add_drive_ket(0, &level(m, n - 1, p, q), xi_t.conj() * sn, tmp, deriv);
        }
        if m > 0 && n > 0 {
            let c = Complex64::new(xi_t.norm_sqr() * sm * sn, 0.0);
            cache.add_scatter(0, 0, &level(m - 1, n - 1, p, q), c, tmp, deriv);
        }
    }
    if eta_t != ZERO {
        if p > 0 {
            cache.add_drive_bra(1, &level(m, n, p - 1, q), eta_t * sp, tmp, deriv);
        }
        if q > 0 {
            cache.add_drive_ket(1, &level(m, n, p, q - 1), eta_t.conj() * sq, tmp, deriv);
        }
        if p > 0 && q > 0 {
            let c = Complex64::new(eta_t.norm_sqr() * sp * sq, 0.0);
            cache.add_scatter(1, 1, &level(m, n, p - 1, q - 1), c, tmp, deriv);
        }
    }
    if xi_t != ZERO && eta_t != ZERO {
        if m > 0 && q > 0 {
            let c = xi_t * eta_t.conj() * sm * sq;
            cache.add_scatter(0, 1, &level(m - 1, n, p, q - 1), c, tmp, deriv);
        }
        if n > 0 && p > 0 {
            let c = xi_t.conj() * eta_t * sn * sp;
            cache.add_scatter(1, 0, &level(m, n - 1, p - 1, q), c, tmp, deriv);
        }
    }
}

/// Flattened two-mode system with per-mode output accumulators.
/// State layout: stored level matrices (interleaved re/im), then per
/// stored level 8 reals: flux1, flux2, quad1, quad2 (re, im each).
pub struct TwoModeSystem {
    pub labels: TwoModeLabels,
    pub dim: usize,
    pub xi: WavePacket,
    pub eta: WavePacket,
    pub phi: f64,
    pub track_outputs: bool,
    cache: MultiCache,
    pulse_dt_cap: f64,
    support: (f64, f64),
    scratch: RefCell<TwoModeScratch>,
}

struct TwoModeScratch {
    table: Vec<Operator>,
    deriv: Operator,
    tmp: Operator,
}

impl TwoModeSystem {
    pub fn new(
        slh: &MultiModeSLH,
        xi: WavePacket,
        eta: WavePacket,
        n_max: usize,
        q_max: usize,
        track_outputs: bool,
        phi: f64,
    ) -> Result<Self, Error> {
        if slh.modes != 2 {
            return Err(Error::Unsupported(
                "two-mode hierarchy requires exactly 2 modes".into(),
            ));
        }
        let dim = slh.dim();
        let labels = TwoModeLabels::new(n_max, q_max);
        let cache = MultiCache::new(slh);
        let (xlo, xhi) = xi.support();
        let (elo, ehi) = eta.support();
        // When mode two carries vacuum its "support" is irrelevant; use
        // the union only if eta can actually be nonzero there.
        let eta_active = q_max > 0;
        let lo = if eta_active { xlo.min(elo) } else { xlo };
        let hi = if eta_active { xhi.max(ehi) } else { xhi };
        let width = (hi - lo) / 16.0;
        let gamma = cache.ldl_sum.trace().re.max(1e-12);
        Ok(Self {
            labels,
            dim,
            xi,
            eta,
            phi,
            track_outputs,
            pulse_dt_cap: 0.05 * (1.0 / gamma).min(width),
            support: (lo, hi),
            scratch: RefCell::new(TwoModeScratch {
                table: vec![Operator::zeros(dim); TwoModeLabels::new(n_max, q_max).full_len()],
                deriv: Operator::zeros(dim),
                tmp: Operator::zeros(dim),
            }),
            cache,
        })
    }

    fn mat_len(&self) -> usize {
        2 * self.dim * self.dim
    }

    pub fn state_len(&self) -> usize {
        let levels = self.labels.len() * self.mat_len();
        if self.track_outputs {
            levels + 8 * self.labels.len()
        } else {
            levels
        }
    }

    pub fn flatten(&self, state: &TwoModeHierarchyState, y: &mut Vec<f64>) {
        y.clear();
        for op in &state.matrices {
            for z in op.entries() {
                y.push(z.re);
                y.push(z.im);
            }
        }
        y.resize(self.state_len(), 0.0);
    }

    pub fn unflatten(&self, t: f64, y: &[f64]) -> TwoModeHierarchyState {
        let d = self.dim;
        let matrices = (0..self.labels.len())
            .map(|k| {
                let off = k * self.mat_len();
                let entries = (0..d * d)
                    .map(|i| Complex64::new(y[off + 2 * i], y[off + 2 * i + 1]))
                    .collect();
                Operator::new(d, entries).unwrap()
            })
            .collect();
        TwoModeHierarchyState {
            labels: self.labels.clone(),
            time: t,
            matrices,
        }
    }

    /// Accumulated (flux1, flux2, quad1, quad2) per stored label.
    pub fn outputs(&self, y: &[f64]) -> BTreeMap<Label, [Complex64; 4]> {
        let base = self.labels.len() * self.mat_len();
        let mut out = BTreeMap::new();
        if !self.track_outputs {
            return out;
        }
        for (k, &label) in self.labels.stored.iter().enumerate() {
            let off = base + 8 * k;
            out.insert(
                label,
                [
                    Complex64::new(y[off], y[off + 1]),
                    Complex64::new(y[off + 2], y[off + 3]),
                    Complex64::new(y[off + 4], y[off + 5]),
                    Complex64::new(y[off + 6], y[off + 7]),
                ],
            );
        }
        out
    }

    fn fill_table(&self, y: &[f64], table: &mut [Operator]) {
        let d = self.dim;
        for (k, &(m, n, p, q)) in self.labels.stored.iter().enumerate() {
            let off = k * self.mat_len();
            let fi = self.labels.full_index(m, n, p, q);
            {
                let op = &mut table[fi];
                for i in 0..d * d {
                    op.entries_mut()[i] = Complex64::new(y[off + 2 * i], y[off + 2 * i + 1]);
                }
            }
            let ai = self.labels.full_index(n, m, q, p);
            if ai != fi {
                let (src, dst) = if fi < ai {
                    let (lo, hi) = table.split_at_mut(ai);
                    (&lo[fi], &mut hi[0])
                } else {
                    let (lo, hi) = table.split_at_mut(fi);
                    (&hi[0], &mut lo[ai])
                };
                for i in 0..d {
                    for j in 0..d {
                        dst.entries_mut()[i * d + j] = src.entries()[j * d + i].conj();
                    }
                }
            }
        }
    }

    /// E_{m,n;p,q}[x] = Tr[rho_{n,m;q,p} x]
    fn expect(
        &self,
        table: &[Operator],
        m: usize,
        n: usize,
        p: usize,
        q: usize,
        x: &Operator,
    ) -> Complex64 {
        let d = self.dim;
        let rho = &table[self.labels.full_index(n, m, q, p)];
        let mut acc = ZERO;
        for i in 0..d {
            for j in 0..d {
                acc += rho.entries()[i * d + j] * x.entries()[j * d + i];
            }
        }
        acc
    }

    fn trace_level(&self, table: &[Operator], m: usize, n: usize, p: usize, q: usize) -> Complex64 {
        let rho = &table[self.labels.full_index(n, m, q, p)];
        (0..self.dim).map(|i| rho.entries()[i * self.dim + i]).sum()
    }

    /// dE_{m,n;p,q}[Lambda_{oo}^out]/dt for output channel `o`.
    #[allow(clippy::too_many_arguments)]
    fn flux_rate(
        &self,
        table: &[Operator],
        o: usize,
        m: usize,
        n: usize,
        p: usize,
        q: usize,
        xi_t: Complex64,
        eta_t: Complex64,
    ) -> Complex64 {
        let cache = &self.cache;
        let mut rate = self.expect(table, m, n, p, q, &cache.ldl[o]);
        // dB_k / dB_k^dag terms: L_o^dag S_{ok} kets and S_{ok}^dag L_o bras
        let amps = [xi_t, eta_t];
        let bra_idx = [m, p];
        let ket_idx = [n, q];
        for k in 0..2 {
            if ket_idx[k] > 0 && amps[k] != ZERO {
                let x = if cache.s_is_diag_identity {
                    if k == o {
                        cache.l_dag[o].clone()
                    } else {
                        continue;
                    }
                } else {
                    cache.l_dag[o].matmul(cache.s_ij(o, k))
                };
                let (nn, qq) = if k == 0 { (n - 1, q) } else { (n, q - 1) };
                rate += (ket_idx[k] as f64).sqrt() * amps[k] * self.expect(table, m, nn, p, qq, &x);
            }
        }
        for k in 0..2 {
            if bra_idx[k] > 0 && amps[k] != ZERO {
                let x = if cache.s_is_diag_identity {
                    if k == o {
                        cache.l[o].clone()
                    } else {
                        continue;
                    }
                } else {
                    cache.s_dag_ij(o, k).matmul(&cache.l[o])
                };
                let (mm, pp) = if k == 0 { (m - 1, p) } else { (m, p - 1) };
                rate +=
                    (bra_idx[k] as f64).sqrt() * amps[k].conj() * self.expect(table, mm, n, pp, q, &x);
            }
        }
        // dLambda_{kl} terms: sum_{k,l} S_{ko}^dag S_{lo} with bra removal
        // by mode k, ket removal by mode l.
        for k in 0..2 {
            for l in 0..2 {
                if bra_idx[k] == 0 || ket_idx[l] == 0 {
                    continue;
                }
                let amp = amps[k].conj() * amps[l];
                if amp == ZERO {
                    continue;
                }
                let (mm, pp) = if k == 0 { (m - 1, p) } else { (m, p - 1) };
                let (nn, qq) = if l == 0 { (n - 1, q) } else { (n, q - 1) };
                let weight = ((bra_idx[k] * ket_idx[l]) as f64).sqrt();
                let val = if cache.s_is_diag_identity {
                    if k == o && l == o {
                        self.trace_level(table, mm, nn, pp, qq)
                    } else {
                        continue;
                    }
                } else {
                    let x = cache.s_dag_ij(k, o).matmul(cache.s_ij(l, o));
                    self.expect(table, mm, nn, pp, qq, &x)
                };
                rate += weight * amp * val;
            }
        }
        rate
    }

    /// dE_{m,n;p,q}[Z_o^out]/dt at phase phi.
    #[allow(clippy::too_many_arguments)]
    fn quad_rate(
        &self,
        table: &[Operator],
        o: usize,
        m: usize,
        n: usize,
        p: usize,
        q: usize,
        xi_t: Complex64,
        eta_t: Complex64,
    ) -> Complex64 {
        let cache = &self.cache;
        let eip = Complex64::from_polar(1.0, self.phi);
        let mut rate = eip * self.expect(table, m, n, p, q, &cache.l[o])
            + eip.conj() * self.expect(table, m, n, p, q, &cache.l_dag[o]);
        let amps = [xi_t, eta_t];
        let bra_idx = [m, p];
        let ket_idx = [n, q];
        for k in 0..2 {
            if ket_idx[k] > 0 && amps[k] != ZERO {
                let (nn, qq) = if k == 0 { (n - 1, q) } else { (n, q - 1) };
                let val = if cache.s_is_diag_identity {
                    if k == o {
                        self.trace_level(table, m, nn, p, qq)
                    } else {
                        continue;
                    }
                } else {
                    self.expect(table, m, nn, p, qq, cache.s_ij(o, k))
                };
                rate += eip * (ket_idx[k] as f64).sqrt() * amps[k] * val;
            }
        }
        for k in 0..2 {
            if bra_idx[k] > 0 && amps[k] != ZERO {
                let (mm, pp) = if k == 0 { (m - 1, p) } else { (m, p - 1) };
                let val = if cache.s_is_diag_identity {
                    if k == o {
                        self.trace_level(table, mm, n, pp, q)
                    } else {
                        continue;
                    }
                } else {
                    self.expect(table, mm, n, pp, q, cache.s_dag_ij(o, k))
                };
                rate += eip.conj() * (bra_idx[k] as f64).sqrt() * amps[k].conj() * val;
            }
        }
        rate
    }
}

impl OdeSystem for TwoModeSystem {
    fn dim(&self) -> usize {
        self.state_len()
    }

    fn dt_cap(&self, t: f64) -> f64 {
        let (lo, hi) = self.support;
        if t < lo {
            (lo - t).max(self.pulse_dt_cap)
        } else if t <= hi {
            self.pulse_dt_cap
        } else {
            f64::INFINITY
        }
    }

    fn rhs(&self, t: f64, y: &[f64], dydt: &mut [f64]) {
        let scratch = &mut *self.scratch.borrow_mut();
        let TwoModeScratch { table, deriv, tmp } = scratch;
        self.fill_table(y, table);
        let xi_t = self.xi.eval(t);
        let eta_t = self.eta.eval(t);
        let d = self.dim;
        for (k, &(m, n, p, q)) in self.labels.stored.iter().enumerate() {
            deriv.entries_mut().fill(ZERO);
            let fi = self.labels.full_index(m, n, p, q);
            self.cache.add_vacuum_generator(&table[fi], tmp, deriv);
            add_drive_terms(
                &self.cache,
                |a, b, c, e| table[self.labels.full_index(a, b, c, e)].clone(),
                m,
                n,
                p,
                q,
                xi_t,
                eta_t,
                tmp,
                deriv,
            );
            let off = k * self.mat_len();
            for i in 0..d * d {
                dydt[off + 2 * i] = deriv.entries()[i].re;
                dydt[off + 2 * i + 1] = deriv.entries()[i].im;
            }
        }
        if self.track_outputs {
            let base = self.labels.len() * self.mat_len();
            for (k, &(m, n, p, q)) in self.labels.stored.iter().enumerate() {
                let f1 = self.flux_rate(table, 0, m, n, p, q, xi_t, eta_t);
                let f2 = self.flux_rate(table, 1, m, n, p, q, xi_t, eta_t);
                let z1 = self.quad_rate(table, 0, m, n, p, q, xi_t, eta_t);
                let z2 = self.quad_rate(table, 1, m, n, p, q, xi_t, eta_t);
                let off = base + 8 * k;
                for (slot, v) in [f1, f2, z1, z2].into_iter().enumerate() {
                    dydt[off + 2 * slot] = v.re;
                    dydt[off + 2 * slot + 1] = v.im;
                }
            }
        }
    }
}

/// Combined expectation over a two-mode combination:
/// E_total = sum c_{m,n;p,q} E_{m,n;p,q}, using adjoint symmetry
/// E_{n,m;q,p} = E_{m,n;p,q}^* for Hermitian observables.
pub fn combine_twomode(
    acc: &BTreeMap<Label, [Complex64; 4]>,
    combo: &TwoModeCombination,
    slot: usize,
) -> f64 {
    let mut total = ZERO;
    for (&(m, n, p, q), &c) in &combo.coeffs {
        let v = if is_canonical(m, n, p, q) {
            acc.get(&(m, n, p, q)).map(|a| a[slot]).unwrap_or(ZERO)
        } else {
            acc.get(&(n, m, q, p))
                .map(|a| a[slot].conj())
                .unwrap_or(ZERO)
        };
        total += c * v;
    }
    total.re
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hierarchy::{hierarchy_rhs, initial_state, level_pairs};
    use crate::operators::SLHTriple;
    use approx::assert_abs_diff_eq;

    #[test]
    fn label_counts() {
        // full grid halved, keeping the (m,p) == (n,q) diagonal whole
        let l = TwoModeLabels::new(1, 1);
        assert_eq!(l.len(), (16 + 4) / 2);
        // vacuum mode two: reduces to the single-mode count
        let l = TwoModeLabels::new(2, 0);
        assert_eq!(l.len(), 6);
        // every stored label canonical, every non-canonical reachable
        for &(m, n, p, q) in &l.stored {
            assert!(is_canonical(m, n, p, q));
        }
    }

    #[test]
    fn vacuum_mode_two_reduces_to_single_mode() {
        // gamma2 = 0 decouples mode two entirely; with Q = 0 the two-mode
        // generator must agree with the single-mode hierarchy.
        let gamma = 1.0;
        let mm = MultiModeSLH::waveguide_two_level(gamma, 0.0);
        let sm = SLHTriple::two_level_decay(gamma);
        let xi = WavePacket::gaussian(1.46, 0.0);
        let eta = WavePacket::gaussian(1.0, 0.0);
        let mut two = initial_state_twomode(&Operator::ketbra(2, 0, 0), 2, 0).unwrap();
        let mut one = initial_state(&Operator::ketbra(2, 0, 0), 2).unwrap();
        // seed identical off-diagonal structure
        for (k, &(m, n, _, _)) in two.labels.stored.iter().enumerate() {
            if m != n {
                let z = Complex64::new(0.1 * (m as f64), -0.2 * (n as f64 + 1.0));
                two.matrices[k][(0, 1)] = z;
                one.matrices[crate::hierarchy::level_index(m, n)][(0, 1)] = z;
            }
        }
        let d2 = twomode_rhs(&mm, &xi, &eta, &two, 0.1).unwrap();
        let d1 = hierarchy_rhs(&sm, &xi, &one, 0.1).unwrap();
        for (m, n) in level_pairs(2) {
            let diff = d2.level(m, n, 0, 0).sub(&d1.level(m, n)).max_abs();
            assert!(diff < 1e-12, "level ({m},{n}) differs by {diff}");
        }
    }

    #[test]
    fn flat_rhs_matches_reference() {
        let mm = MultiModeSLH::waveguide_two_level(0.5, 0.5);
        let xi = WavePacket::gaussian(1.0, 0.0);
        let eta = WavePacket::gaussian(2.0, 0.3);
        let sys = TwoModeSystem::new(&mm, xi.clone(), eta.clone(), 1, 1, false, 0.0).unwrap();
        let mut state = initial_state_twomode(&Operator::ketbra(2, 0, 0), 1, 1).unwrap();
        for (k, &(m, n, p, q)) in state.labels.stored.iter().enumerate() {
            if (m, p) != (n, q) {
                state.matrices[k][(1, 0)] =
                    Complex64::new(0.05 * (k as f64 + 1.0), -0.03 * (k as f64));
            }
        }
        let mut y = Vec::new();
        sys.flatten(&state, &mut y);
        let mut dydt = vec![0.0; y.len()];
        sys.rhs(0.2, &y, &mut dydt);
        let fast = sys.unflatten(0.2, &dydt);
        let reference = twomode_rhs(&mm, &xi, &eta, &state, 0.2).unwrap();
        for &(m, n, p, q) in &state.labels.stored {
            let diff = fast
                .level(m, n, p, q)
                .sub(&reference.level(m, n, p, q))
                .max_abs();
            assert!(diff < 1e-13, "label ({m},{n},{p},{q}) differs by {diff}");
        }
    }

    #[test]
    fn noon_state_is_valid_and_assembles() {
        let combo = TwoModeCombination::noon_one();
        combo.validate().unwrap();
        assert_eq!(combo.coeffs.len(), 4);
        for &c in combo.coeffs.values() {
            assert_abs_diff_eq!(c.re, 0.5, epsilon = 1e-15);
        }
        let state = initial_state_twomode(&Operator::ketbra(2, 0, 0), 1, 1).unwrap();
        let total = assemble_total_twomode(&state, &combo).unwrap();
        // at t = 0 the off-diagonal levels vanish: total = (rho + rho)/2
        assert_abs_diff_eq!(total.trace().re, 1.0, epsilon = 1e-14);
    }

    #[test]
    fn combination_validation_rejects_non_hermitian() {
        let mut combo = TwoModeCombination::fock(1, 0);
        combo.coeffs.insert((1, 0, 0, 0), ONE);
        assert!(combo.validate().is_err());
    }
}
