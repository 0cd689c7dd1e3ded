//! Single-mode Fock-state master-equation hierarchy.
//!
//! The generalized density operators rho_{m,n} (0 <= m, n <= N) obey
//!
//!   d rho_{m,n}/dt = -i[H, rho_{m,n}] + D[L] rho_{m,n}
//!       + sqrt(m) xi(t)   [S rho_{m-1,n}, L^dag]
//!       + sqrt(n) xi^*(t) [L, rho_{m,n-1} S^dag]
//!       + sqrt(mn) |xi(t)|^2 (S rho_{m-1,n-1} S^dag - rho_{m-1,n-1})
//!
//! with rho_{-1,.} = rho_{.,-1} = 0.  The equations couple downward only:
//! level (m,n) reads levels (m-1,n), (m,n-1), (m-1,n-1).  Diagonal levels
//! are valid states; off-diagonal levels are non-Hermitian with zero trace
//! and satisfy rho_{n,m} = rho_{m,n}^dag, so only the lower triangle
//! m >= n is stored and evolved: (N+1)(N+2)/2 matrices in total.

use std::cell::RefCell;
use std::collections::BTreeMap;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::integrator::OdeSystem;
use crate::operators::{matmul_acc, matmul_into, Operator, SLHTriple, I, ONE, ZERO};
use crate::wavepacket::WavePacket;

/// Number of independent (stored) levels for photon number `n_max`.
pub fn level_count(n_max: usize) -> usize {
    (n_max + 1) * (n_max + 2) / 2
}

/// Index of stored level (m, n), m >= n, in the canonical ordering
/// (sorted by m, then n).
pub fn level_index(m: usize, n: usize) -> usize {
    debug_assert!(m >= n);
    m * (m + 1) / 2 + n
}

/// Stored (m, n) pairs in canonical order.
pub fn level_pairs(n_max: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..=n_max).flat_map(|m| (0..=m).map(move |n| (m, n)))
}

/// The full set of generalized density operators at one time.
#[derive(Debug, Clone)]
pub struct FockHierarchyState {
    pub n_max: usize,
    pub time: f64,
    /// Lower triangle m >= n in canonical order.
    pub matrices: Vec<Operator>,
}

impl FockHierarchyState {
    pub fn dim(&self) -> usize {
        self.matrices[0].dim()
    }

    /// rho_{m,n} for any pair; the upper triangle is synthesized by adjoint.
    pub fn level(&self, m: usize, n: usize) -> Operator {
        if m >= n {
            self.matrices[level_index(m, n)].clone()
        } else {
            self.matrices[level_index(n, m)].adjoint()
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            n_max: self.n_max,
            time: self.time,
            matrices: self
                .matrices
                .iter()
                .map(|m| Operator::zeros(m.dim()))
                .collect(),
        }
    }
}

/// JSON snapshot: {time, levels: [{m, n, matrix}]}.
#[derive(Serialize, Deserialize)]
pub struct HierarchySnapshot {
    pub time: f64,
    pub levels: Vec<LevelSnapshot>,
}

#[derive(Serialize, Deserialize)]
pub struct LevelSnapshot {
    pub m: usize,
    pub n: usize,
    pub matrix: Operator,
}

impl From<&FockHierarchyState> for HierarchySnapshot {
    fn from(state: &FockHierarchyState) -> Self {
        Self {
            time: state.time,
            levels: level_pairs(state.n_max)
                .map(|(m, n)| LevelSnapshot {
                    m,
                    n,
                    matrix: state.matrices[level_index(m, n)].clone(),
                })
                .collect(),
        }
    }
}

/// Initial condition: every diagonal level starts in the system state,
/// every off-diagonal level starts at zero.
pub fn initial_state(rho_sys: &Operator, n_max: usize) -> Result<FockHierarchyState, Error> {
    if !rho_sys.is_density_matrix(1e-10) {
        return Err(Error::InvalidFieldState(
            "initial system state is not a density matrix".into(),
        ));
    }
    let matrices = level_pairs(n_max)
        .map(|(m, n)| {
            if m == n {
                rho_sys.clone()
            } else {
                Operator::zeros(rho_sys.dim())
            }
        })
        .collect();
    Ok(FockHierarchyState {
        n_max,
        time: 0.0,
        matrices,
    })
}

/// Input field state as a combination of Fock states in the same packet:
/// coeffs are standard matrix elements c_{m,n} = <m_xi| rho_field |n_xi>.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FieldCombination {
    pub coeffs: BTreeMap<(usize, usize), Complex64>,
}

impl FieldCombination {
    /// Pure Fock state |N>.
    pub fn fock(n: usize) -> Self {
        let mut coeffs = BTreeMap::new();
        coeffs.insert((n, n), ONE);
        Self { coeffs }
    }

    /// Pure superposition sum_n amp_n |n>, normalized by the caller.
    pub fn superposition(amplitudes: &[(usize, Complex64)]) -> Self {
        let mut coeffs = BTreeMap::new();
        for &(m, am) in amplitudes {
            for &(n, an) in amplitudes {
                *coeffs.entry((m, n)).or_insert(ZERO) += am * an.conj();
            }
        }
        Self { coeffs }
    }

    /// Statistical mixture sum_n p_n |n><n|.
    pub fn mixture(weights: &[(usize, f64)]) -> Self {
        let mut coeffs = BTreeMap::new();
        for &(n, p) in weights {
            *coeffs.entry((n, n)).or_insert(ZERO) += Complex64::new(p, 0.0);
        }
        Self { coeffs }
    }

    pub fn max_level(&self) -> usize {
        self.coeffs
            .keys()
            .map(|&(m, n)| m.max(n))
            .max()
            .unwrap_or(0)
    }

    /// Validity of [c_{m,n}] as a field state: Hermitian, unit trace,
    /// eigenvalues >= -1e-10.
    pub fn validate(&self) -> Result<(), Error> {
        let n = self.max_level() + 1;
        let mut mat = Operator::zeros(n);
        for (&(m, k), &c) in &self.coeffs {
            mat[(m, k)] = c;
        }
        if !mat.is_hermitian(1e-12) {
            return Err(Error::InvalidFieldState(
                "combination coefficients are not Hermitian".into(),
            ));
        }
        if (mat.trace() - ONE).norm() > 1e-12 {
            return Err(Error::InvalidFieldState(
                "combination coefficients do not sum to unit trace".into(),
            ));
        }
        if mat
            .hermitian_eigenvalues()
            .first()
            .map_or(false, |&e| e < -1e-10)
        {
            return Err(Error::InvalidFieldState(
                "combination coefficients are not positive semidefinite".into(),
            ));
        }
        Ok(())
    }
}

/// Physical system state rho_total = sum c^*_{m,n} rho_{m,n}.
pub fn assemble_total(
    state: &FockHierarchyState,
    combo: &FieldCombination,
) -> Result<Operator, Error> {
    let mut out = Operator::zeros(state.dim());
    for (&(m, n), &c) in &combo.coeffs {
        if m > state.n_max || n > state.n_max {
            return Err(Error::LevelOutOfRange {
                m,
                n,
                n_max: state.n_max,
            });
        }
        out = out.add(&state.level(m, n).scale(c.conj()));
    }
    Ok(out)
}

/// Tr[rho_total P], clamped to [0, 1] for reporting.
pub fn excitation_probability(total: &Operator, projector: &Operator) -> f64 {
    let val = crate::operators::expectation(&total.adjoint(), projector)
        .map(|v| v.re)
        .unwrap_or(0.0);
    val.clamp(0.0, 1.0)
}

/// Precomputed operators shared by every level's right-hand side.
pub(crate) struct SlhCache {
    pub l: Operator,
    pub l_dag: Operator,
    pub ldl: Operator,
    pub s: Operator,
    pub s_dag: Operator,
    pub h: Operator,
    pub s_is_identity: bool,
    pub h_is_zero: bool,
}

impl SlhCache {
    pub fn new(slh: &SLHTriple) -> Self {
        let l_dag = slh.l.adjoint();
        Self {
            ldl: l_dag.matmul(&slh.l),
            l_dag,
            l: slh.l.clone(),
            s_dag: slh.s.adjoint(),
            s_is_identity: slh.s.is_identity(1e-14),
            s: slh.s.clone(),
            h_is_zero: slh.h.is_zero(0.0),
            h: slh.h.clone(),
        }
    }

    /// out += -i[H, rho] + D[L] rho
    pub fn add_vacuum_generator(&self, rho: &Operator, tmp: &mut Operator, out: &mut Operator) {
        matmul_into(&self.l, rho, tmp);
        matmul_acc(tmp, &self.l_dag, ONE, out);
        let mhalf = Complex64::new(-0.5, 0.0);
        matmul_acc(&self.ldl, rho, mhalf, out);
        matmul_acc(rho, &self.ldl, mhalf, out);
        if !self.h_is_zero {
            matmul_acc(&self.h, rho, -I, out);
            matmul_acc(rho, &self.h, I, out);
        }
    }

    /// out += c [S rho, L^dag]
    pub fn add_drive_bra(
        &self,
        rho: &Operator,
        c: Complex64,
        tmp: &mut Operator,
        out: &mut Operator,
    ) {
        if self.s_is_identity {
            matmul_acc(rho, &self.l_dag, c, out);
            matmul_acc(&self.l_dag, rho, -c, out);
        } else {
            matmul_into(&self.s, rho, tmp);
            matmul_acc(tmp, &self.l_dag, c, out);
            matmul_acc(&self.l_dag, tmp, -c, out);
        }
    }

    /// out += c [L, rho S^dag]
    pub fn add_drive_ket(
        &self,
        rho: &Operator,
        c: Complex64,
        tmp: &mut Operator,
        out: &mut Operator,
    ) {
        if self.s_is_identity {
            matmul_acc(&self.l, rho, c, out);
            matmul_acc(rho, &self.l, -c, out);
        } else {
            matmul_into(rho, &self.s_dag, tmp);
            matmul_acc(&self.l, tmp, c, out);
            matmul_acc(tmp, &self.l, -c, out);
        }
    }

    /// out += c (S rho S^dag - rho); zero when S = I.
    pub fn add_scatter(
        &self,
        rho: &Operator,
        c: Complex64,
        tmp: &mut Operator,
        tmp2: &mut Operator,
        out: &mut Operator,
    ) {
        if self.s_is_identity {
            return;
        }
        matmul_into(&self.s, rho, tmp);
        matmul_into(tmp, &self.s_dag, tmp2);
        for (o, (a, b)) in out
            .entries_mut()
            .iter_mut()
            .zip(tmp2.entries().iter().zip(rho.entries()))
        {
            *o += c * (a - b);
        }
    }
}

/// Derivative of every stored level at time `t` (the hierarchy right-hand
/// side), as a state-shaped object.
pub fn hierarchy_rhs(
    slh: &SLHTriple,
    xi: &WavePacket,
    state: &FockHierarchyState,
    t: f64,
) -> Result<FockHierarchyState, Error> {
    if state.dim() != slh.dim() {
        return Err(Error::DimensionMismatch {
            left: state.dim(),
            right: slh.dim(),
        });
    }
    let cache = SlhCache::new(slh);
    let d = slh.dim();
    let xi_t = xi.eval(t);
    let mut out = state.zeros_like();
    let mut tmp = Operator::zeros(d);
    let mut tmp2 = Operator::zeros(d);
    for (m, n) in level_pairs(state.n_max) {
        let idx = level_index(m, n);
        let mut deriv = Operator::zeros(d);
        cache.add_vacuum_generator(&state.matrices[idx], &mut tmp, &mut deriv);
        if xi_t != ZERO {
            if m > 0 {
                let below = state.level(m - 1, n);
                cache.add_drive_bra(&below, xi_t * (m as f64).sqrt(), &mut tmp, &mut deriv);
            }
            if n > 0 {
                let below = state.level(m, n - 1);
                cache.add_drive_ket(&below, xi_t.conj() * (n as f64).sqrt(), &mut tmp, &mut deriv);
            }
            if m > 0 && n > 0 {
                let below = state.level(m - 1, n - 1);
                let c = Complex64::new(xi_t.norm_sqr() * ((m * n) as f64).sqrt(), 0.0);
                cache.add_scatter(&below, c, &mut tmp, &mut tmp2, &mut deriv);
            }
        }
        out.matrices[idx] = deriv;
    }
    out.time = t;
    Ok(out)
}

// ---------------------------------------------------------------------------
// Flattened ODE system: hierarchy levels + output-field accumulators.
// ---------------------------------------------------------------------------

/// Integrated output expectations per stored level: photon flux
/// E_{m,n}[Lambda^out] and quadrature E_{m,n}[Z^out] at phase phi.
/// Off-diagonal entries are intrinsically complex; entries for m < n are
/// reconstructed as conjugates of the stored m >= n half.
#[derive(Debug, Clone, Default)]
pub struct OutputAccumulator {
    pub flux: BTreeMap<(usize, usize), Complex64>,
    pub quad: BTreeMap<(usize, usize), Complex64>,
    pub phi: f64,
}

impl OutputAccumulator {
    pub fn entry(map: &BTreeMap<(usize, usize), Complex64>, m: usize, n: usize) -> Complex64 {
        if m >= n {
            map.get(&(m, n)).copied().unwrap_or(ZERO)
        } else {
            map.get(&(n, m)).copied().unwrap_or(ZERO).conj()
        }
    }
}

/// Combined output observables for a field combination:
/// E_total[X] = sum c_{m,n} E_{m,n}[X] (unconjugated coefficients).
pub fn combine_outputs(
    acc: &OutputAccumulator,
    combo: &FieldCombination,
) -> Result<(f64, f64), Error> {
    let mut flux = ZERO;
    let mut quad = ZERO;
    for (&(m, n), &c) in &combo.coeffs {
        flux += c * OutputAccumulator::entry(&acc.flux, m, n);
        quad += c * OutputAccumulator::entry(&acc.quad, m, n);
    }
    // Combinations of Hermitian observables must be real.
    debug_assert!(flux.im.abs() <= 1e-8 * flux.re.abs().max(1.0));
    Ok((flux.re, quad.re))
}

/// Flattened single-mode hierarchy + output accumulators as a real ODE
/// system.  State layout: for each stored level, d^2 interleaved (re, im)
/// pairs in level order; then per stored level the flux and quadrature
/// accumulators (re, im each).
pub struct FockSystem {
    pub n_max: usize,
    pub dim: usize,
    pub packet: WavePacket,
    pub phi: f64,
    pub track_outputs: bool,
    cache: SlhCache,
    /// dt cap inside the packet support (pulse-resolution guard).
    pulse_dt_cap: f64,
    support: (f64, f64),
    scratch: RefCell<Scratch>,
}

struct Scratch {
    /// Full (n_max+1)^2 table of level matrices, adjoint-completed.
    table: Vec<Operator>,
    deriv: Operator,
    tmp: Operator,
    tmp2: Operator,
}

impl FockSystem {
    pub fn new(slh: &SLHTriple, packet: WavePacket, n_max: usize, track_outputs: bool, phi: f64) -> Self {
        let dim = slh.dim();
        let support = packet.support();
        let width = (support.1 - support.0) / 16.0;
        // Keep the step below 5% of both the decay time and the packet
        // width while the envelope can be nonzero.
        let gamma = slh.l.adjoint().matmul(&slh.l).trace().re.max(1e-12);
        let pulse_dt_cap = 0.05 * (1.0 / gamma).min(width);
        Self {
            n_max,
            dim,
            packet,
            phi,
            track_outputs,
            cache: SlhCache::new(slh),
            pulse_dt_cap,
            support,
            scratch: RefCell::new(Scratch {
                table: vec![Operator::zeros(dim); (n_max + 1) * (n_max + 1)],
                deriv: Operator::zeros(dim),
                tmp: Operator::zeros(dim),
                tmp2: Operator::zeros(dim),
            }),
        }
    }

    pub fn n_levels(&self) -> usize {
        level_count(self.n_max)
    }

    fn mat_len(&self) -> usize {
        2 * self.dim * self.dim
    }

    pub fn state_len(&self) -> usize {
        let levels = self.n_levels() * self.mat_len();
        if self.track_outputs {
            levels + 4 * self.n_levels()
        } else {
            levels
        }
    }

    pub fn flatten(&self, state: &FockHierarchyState, y: &mut Vec<f64>) {
        y.clear();
        for op in &state.matrices {
            for z in op.entries() {
                y.push(z.re);
                y.push(z.im);
            }
        }
        if self.track_outputs {
            y.resize(self.state_len(), 0.0);
        }
    }

    pub fn unflatten(&self, t: f64, y: &[f64]) -> FockHierarchyState {
        let d = self.dim;
        let matrices = (0..self.n_levels())
            .map(|k| {
                let off = k * self.mat_len();
                let entries = (0..d * d)
                    .map(|i| Complex64::new(y[off + 2 * i], y[off + 2 * i + 1]))
                    .collect();
                Operator::new(d, entries).unwrap()
            })
            .collect();
        FockHierarchyState {
            n_max: self.n_max,
            time: t,
            matrices,
        }
    }

    pub fn outputs(&self, y: &[f64]) -> OutputAccumulator {
        let base = self.n_levels() * self.mat_len();
        let mut acc = OutputAccumulator {
            phi: self.phi,
            ..Default::default()
        };
        if !self.track_outputs {
            return acc;
        }
        for (k, (m, n)) in level_pairs(self.n_max).enumerate() {
            let off = base + 4 * k;
            acc.flux
                .insert((m, n), Complex64::new(y[off], y[off + 1]));
            acc.quad
                .insert((m, n), Complex64::new(y[off + 2], y[off + 3]));
        }
        acc
    }

    /// Instantaneous photon-flux rate dE_{m,n}[Lambda^out]/dt for every
    /// stored level, from the current state.
    pub fn flux_rates(&self, y: &[f64], t: f64) -> BTreeMap<(usize, usize), Complex64> {
        let scratch = &mut *self.scratch.borrow_mut();
        self.fill_table(y, &mut scratch.table);
        let xi_t = self.packet.eval(t);
        level_pairs(self.n_max)
            .map(|(m, n)| ((m, n), self.flux_rate_level(&scratch.table, m, n, xi_t)))
            .collect()
    }

    fn fill_table(&self, y: &[f64], table: &mut [Operator]) {
        let d = self.dim;
        let w = self.n_max + 1;
        for (k, (m, n)) in level_pairs(self.n_max).enumerate() {
            let off = k * self.mat_len();
            {
                let op = &mut table[m * w + n];
                for i in 0..d * d {
                    op.entries_mut()[i] = Complex64::new(y[off + 2 * i], y[off + 2 * i + 1]);
                }
            }
            if m != n {
                // m > n here, so the stored index m*w+n sits above the
                // adjoint slot n*w+m.
                let (lo, hi) = table.split_at_mut(m * w + n);
                let src = &hi[0];
                let dst = &mut lo[n * w + m];
                for i in 0..d {
                    for j in 0..d {
                        dst.entries_mut()[i * d + j] = src.entries()[j * d + i].conj();
                    }
                }
            }
        }
    }

    /// E_{a,b}[x] = Tr[rho_{b,a} x] read from the adjoint-completed table.
    fn expect(&self, table: &[Operator], a: usize, b: usize, x: &Operator) -> Complex64 {
        let d = self.dim;
        let rho = &table[b * (self.n_max + 1) + a];
        let mut acc = ZERO;
        for i in 0..d {
            for j in 0..d {
                acc += rho.entries()[i * d + j] * x.entries()[j * d + i];
            }
        }
        acc
    }

    fn trace_level(&self, table: &[Operator], a: usize, b: usize) -> Complex64 {
        // Tr rho_{b,a} (= E_{a,b}[I])
        let rho = &table[b * (self.n_max + 1) + a];
        (0..self.dim).map(|i| rho.entries()[i * self.dim + i]).sum()
    }

    fn flux_rate_level(
        &self,
        table: &[Operator],
        m: usize,
        n: usize,
        xi_t: Complex64,
    ) -> Complex64 {
        let cache = &self.cache;
        let mut rate = self.expect(table, m, n, &cache.ldl);
        if xi_t != ZERO {
            if m > 0 {
                let sdl = if cache.s_is_identity {
                    self.expect(table, m - 1, n, &cache.l)
                } else {
                    self.expect(table, m - 1, n, &cache.s_dag.matmul(&cache.l))
                };
                rate += (m as f64).sqrt() * xi_t.conj() * sdl;
            }
            if n > 0 {
                let lds = if cache.s_is_identity {
                    self.expect(table, m, n - 1, &cache.l_dag)
                } else {
                    self.expect(table, m, n - 1, &cache.l_dag.matmul(&cache.s))
                };
                rate += (n as f64).sqrt() * xi_t * lds;
            }
            if m > 0 && n > 0 {
                // sqrt(mn)|xi|^2 E_{m-1,n-1}[I]; the trace factor keeps
                // off-diagonal accumulators consistent with photon-number
                // bookkeeping for combination states.
                rate += ((m * n) as f64).sqrt()
                    * xi_t.norm_sqr()
                    * self.trace_level(table, m - 1, n - 1);
            }
        }
        rate
    }

    fn quad_rate_level(
        &self,
        table: &[Operator],
        m: usize,
        n: usize,
        xi_t: Complex64,
    ) -> Complex64 {
        let cache = &self.cache;
        let eip = Complex64::from_polar(1.0, self.phi);
        let mut rate =
            eip * self.expect(table, m, n, &cache.l) + eip.conj() * self.expect(table, m, n, &cache.l_dag);
        if xi_t != ZERO {
            if n > 0 {
                let s_exp = if cache.s_is_identity {
                    self.trace_level(table, m, n - 1)
                } else {
                    self.expect(table, m, n - 1, &cache.s)
                };
                rate += eip * (n as f64).sqrt() * xi_t * s_exp;
            }
            if m > 0 {
                let sd_exp = if cache.s_is_identity {
                    self.trace_level(table, m - 1, n)
                } else {
                    self.expect(table, m - 1, n, &cache.s_dag)
                };
                rate += eip.conj() * (m as f64).sqrt() * xi_t.conj() * sd_exp;
            }
        }
        rate
    }
}

impl OdeSystem for FockSystem {
    fn dim(&self) -> usize {
        self.state_len()
    }

    fn dt_cap(&self, t: f64) -> f64 {
        let (lo, hi) = self.support;
        if t < lo {
            // free flight, but never step past the packet start
            (lo - t).max(self.pulse_dt_cap)
        } else if t <= hi {
            self.pulse_dt_cap
        } else {
            f64::INFINITY
        }
    }

    fn rhs(&self, t: f64, y: &[f64], dydt: &mut [f64]) {
        let scratch = &mut *self.scratch.borrow_mut();
        self.fill_table(y, &mut scratch.table);
        let xi_t = self.packet.eval(t);
        let w = self.n_max + 1;
        let d = self.dim;
        for (k, (m, n)) in level_pairs(self.n_max).enumerate() {
            let deriv = &mut scratch.deriv;
            deriv.entries_mut().fill(ZERO);
            self.cache
                .add_vacuum_generator(&scratch.table[m * w + n], &mut scratch.tmp, deriv);
            if xi_t != ZERO {
                if m > 0 {
                    self.cache.add_drive_bra(
                        &scratch.table[(m - 1) * w + n],
                        xi_t * (m as f64).sqrt(),
                        &mut scratch.tmp,
                        deriv,
                    );
                }
                if n > 0 {
                    self.cache.add_drive_ket(
                        &scratch.table[m * w + (n - 1)],
                        xi_t.conj() * (n as f64).sqrt(),
                        &mut scratch.tmp,
                        deriv,
                    );
                }
                if m > 0 && n > 0 {
                    let c = Complex64::new(xi_t.norm_sqr() * ((m * n) as f64).sqrt(), 0.0);
                    self.cache.add_scatter(
                        &scratch.table[(m - 1) * w + (n - 1)],
                        c,
                        &mut scratch.tmp,
                        &mut scratch.tmp2,
                        deriv,
                    );
                }
            }
            let off = k * self.mat_len();
            for i in 0..d * d {
                dydt[off + 2 * i] = deriv.entries()[i].re;
                dydt[off + 2 * i + 1] = deriv.entries()[i].im;
            }
        }
        if self.track_outputs {
            let base = self.n_levels() * self.mat_len();
            for (k, (m, n)) in level_pairs(self.n_max).enumerate() {
                let flux = self.flux_rate_level(&scratch.table, m, n, xi_t);
                let quad = self.quad_rate_level(&scratch.table, m, n, xi_t);
                let off = base + 4 * k;
                dydt[off] = flux.re;
                dydt[off + 1] = flux.im;
                dydt[off + 2] = quad.re;
                dydt[off + 3] = quad.im;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn ground() -> Operator {
        Operator::ketbra(2, 0, 0)
    }

    fn excited() -> Operator {
        Operator::ketbra(2, 1, 1)
    }

    #[test]
    fn level_bookkeeping() {
        assert_eq!(level_count(0), 1);
        assert_eq!(level_count(2), 6);
        let pairs: Vec<_> = level_pairs(2).collect();
        assert_eq!(pairs, vec![(0, 0), (1, 0), (1, 1), (2, 0), (2, 1), (2, 2)]);
        for (i, &(m, n)) in pairs.iter().enumerate() {
            assert_eq!(level_index(m, n), i);
        }
    }

    #[test]
    fn initial_state_pattern() {
        let state = initial_state(&ground(), 2).unwrap();
        assert_eq!(state.matrices.len(), 6);
        for (m, n) in level_pairs(2) {
            let tr = state.level(m, n).trace();
            if m == n {
                assert_abs_diff_eq!(tr.re, 1.0, epsilon = 1e-15);
            } else {
                assert_abs_diff_eq!(tr.norm(), 0.0, epsilon = 1e-15);
            }
        }
        assert!(initial_state(&Operator::identity(2), 1).is_err()); // trace 2
    }

    #[test]
    fn vacuum_reduction_decay_rate() {
        // N = 0, H = 0, L = sqrt(Gamma) sigma_-, rho = |e><e|:
        // <e| drho/dt |e> = -Gamma
        let gamma = 1.0;
        let slh = SLHTriple::two_level_decay(gamma);
        let state = initial_state(&excited(), 0).unwrap();
        let xi = WavePacket::gaussian(1.0, 0.0);
        let deriv = hierarchy_rhs(&slh, &xi, &state, -100.0).unwrap();
        assert_abs_diff_eq!(deriv.level(0, 0)[(1, 1)].re, -gamma, epsilon = 1e-12);
    }

    #[test]
    fn zero_envelope_gives_vacuum_generator_everywhere() {
        let slh = SLHTriple::two_level_decay(1.0);
        let state = initial_state(&excited(), 2).unwrap();
        let xi = WavePacket::gaussian(1.0, 0.0);
        // far outside the support, xi = 0
        let deriv = hierarchy_rhs(&slh, &xi, &state, 1e6).unwrap();
        for (m, n) in level_pairs(2) {
            let expect = slh.vacuum_generator(&state.level(m, n)).unwrap();
            assert!(deriv.level(m, n).sub(&expect).max_abs() < 1e-14);
        }
    }

    #[test]
    fn assemble_pure_fock() {
        let state = initial_state(&ground(), 2).unwrap();
        let combo = FieldCombination::fock(2);
        let total = assemble_total(&state, &combo).unwrap();
        assert!(total.sub(&state.level(2, 2)).max_abs() < 1e-15);
    }

    #[test]
    fn assemble_superposition_weights() {
        // (|1> + |2>)/sqrt(2): all four weights 1/2.
        let inv = Complex64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
        let combo = FieldCombination::superposition(&[(1, inv), (2, inv)]);
        combo.validate().unwrap();
        for (pair, expect) in [((1, 1), 0.5), ((2, 2), 0.5), ((1, 2), 0.5), ((2, 1), 0.5)] {
            let c = combo.coeffs[&pair];
            assert_abs_diff_eq!(c.re, expect, epsilon = 1e-15);
            assert_abs_diff_eq!(c.im, 0.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn mixture_has_no_coherences() {
        let combo = FieldCombination::mixture(&[(1, 0.5), (2, 0.5)]);
        combo.validate().unwrap();
        assert!(combo.coeffs.get(&(1, 2)).is_none());
    }

    #[test]
    fn combination_validation_rejects_bad_states() {
        let mut combo = FieldCombination::fock(1);
        combo.coeffs.insert((0, 1), Complex64::new(0.3, 0.0));
        assert!(combo.validate().is_err()); // not Hermitian

        let mut combo = FieldCombination::fock(1);
        combo.coeffs.insert((1, 1), Complex64::new(2.0, 0.0));
        assert!(combo.validate().is_err()); // trace 2

        // Hermitian, unit trace, but indefinite
        let mut combo = FieldCombination::mixture(&[(0, 0.5), (1, 0.5)]);
        combo.coeffs.insert((0, 1), ONE);
        combo.coeffs.insert((1, 0), ONE);
        assert!(combo.validate().is_err());
    }

    #[test]
    fn assemble_rejects_out_of_range() {
        let state = initial_state(&ground(), 1).unwrap();
        let combo = FieldCombination::fock(2);
        assert!(assemble_total(&state, &combo).is_err());
    }

    #[test]
    fn excitation_probability_basics() {
        let p = Operator::excited_projector();
        assert_abs_diff_eq!(excitation_probability(&ground(), &p), 0.0);
        assert_abs_diff_eq!(excitation_probability(&excited(), &p), 1.0);
    }

    #[test]
    fn flatten_round_trip() {
        let slh = SLHTriple::two_level_decay(1.0);
        let sys = FockSystem::new(&slh, WavePacket::gaussian(1.0, 0.0), 2, true, 0.0);
        let state = initial_state(&ground(), 2).unwrap();
        let mut y = Vec::new();
        sys.flatten(&state, &mut y);
        assert_eq!(y.len(), sys.state_len());
        let back = sys.unflatten(0.0, &y);
        for (a, b) in back.matrices.iter().zip(&state.matrices) {
            assert!(a.sub(b).max_abs() < 1e-15);
        }
    }

    #[test]
    fn flat_rhs_matches_reference_rhs() {
        // The flattened system and the operator-level hierarchy_rhs must
        // agree on a nontrivial state inside the packet.
        let slh = SLHTriple::two_level_decay(1.0);
        let xi = WavePacket::gaussian(1.46, 0.0);
        let sys = FockSystem::new(&slh, xi.clone(), 2, false, 0.0);
        let mut state = initial_state(&ground(), 2).unwrap();
        // perturb off-diagonals so the cross terms see structure
        state.matrices[level_index(1, 0)][(0, 1)] = Complex64::new(0.3, -0.2);
        state.matrices[level_index(2, 1)][(1, 0)] = Complex64::new(-0.1, 0.45);
        let mut y = Vec::new();
        sys.flatten(&state, &mut y);
        let mut dydt = vec![0.0; y.len()];
        sys.rhs(0.1, &y, &mut dydt);
        let fast = sys.unflatten(0.1, &dydt);
        let reference = hierarchy_rhs(&slh, &xi, &state, 0.1).unwrap();
        for (m, n) in level_pairs(2) {
            assert!(fast.level(m, n).sub(&reference.level(m, n)).max_abs() < 1e-13);
        }
    }
}
