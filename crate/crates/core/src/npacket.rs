//! General N-photon states over an orthonormal basis of temporal packets
//! (occupation-number representation), and the corresponding hierarchy of
//! generalized density operators.
//!
//! A state |psi_N> = sum lambda_{i1<=...<=iN} |n1_{xi1}> |n2_{xi2}> ...
//! is stored by occupation label: the count vector (n_1, ..., n_K) over
//! the K basis packets.  The hierarchy runs over (bra, ket) label pairs
//! closed under single-photon removal:
//!
//!   d rho_{a,b}/dt = -i[H, rho] + D[L] rho
//!     + sum_k sqrt(a_k) xi_k(t)   [S rho_{a-e_k, b}, L^dag]
//!     + sum_k sqrt(b_k) xi_k^*(t) [L, rho_{a, b-e_k} S^dag]
//!     + sum_{k,k'} sqrt(a_k b_k') xi_k(t) xi_k'^*(t)
//!                   (S rho_{a-e_k, b-e_k'} S^dag - rho_{a-e_k, b-e_k'})
//!
//! Bra-side removals carry unconjugated envelopes and ket-side removals
//! conjugated ones, matching the single-packet limit and the drive terms.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::hierarchy::SlhCache;
use crate::integrator::OdeSystem;
use crate::operators::{Operator, SLHTriple, ONE, ZERO};
use crate::wavepacket::{BasisSet, WavePacket};

/// Photon counts per basis packet.
pub type OccupationLabel = Vec<usize>;

/// Amplitudes below this weight are dropped before building the closure.
pub const AMPLITUDE_PRUNE_TOL: f64 = 1e-14;

/// An N-photon state over an orthonormal packet basis.
#[derive(Debug, Clone)]
pub struct NPhotonSpec {
    pub basis: BasisSet,
    /// lambda per occupation label; all labels share the same total N.
    pub amplitudes: BTreeMap<OccupationLabel, Complex64>,
}

/// JSON form: basis packets plus amplitudes keyed by sorted index tuples
/// (i1 <= ... <= iN), as in the occupation expansion.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NPhotonSpecRepr {
    pub basis: Vec<WavePacket>,
    pub amplitudes: Vec<AmplitudeEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AmplitudeEntry {
    pub indices: Vec<usize>,
    pub re: f64,
    pub im: f64,
}

fn indices_to_counts(indices: &[usize], k: usize) -> OccupationLabel {
    let mut counts = vec![0usize; k];
    for &i in indices {
        counts[i] += 1;
    }
    counts
}

fn counts_to_indices(counts: &[usize]) -> Vec<usize> {
    let mut out = Vec::new();
    for (i, &n) in counts.iter().enumerate() {
        out.extend(std::iter::repeat(i).take(n));
    }
    out
}

impl NPhotonSpec {
    pub fn new(
        basis: BasisSet,
        amplitudes: BTreeMap<OccupationLabel, Complex64>,
    ) -> Result<Self, Error> {
        let k = basis.len();
        let mut total_photons: Option<usize> = None;
        let mut norm = 0.0;
        for (label, amp) in &amplitudes {
            if label.len() != k {
                return Err(Error::InvalidFieldState(format!(
                    "occupation label length {} does not match basis size {k}",
                    label.len()
                )));
            }
            let n: usize = label.iter().sum();
            match total_photons {
                None => total_photons = Some(n),
                Some(t) if t != n => {
                    return Err(Error::InvalidFieldState(
                        "occupation labels carry different photon totals".into(),
                    ))
                }
                _ => {}
            }
            norm += amp.norm_sqr();
        }
        if (norm - 1.0).abs() > 1e-10 {
            return Err(Error::InvalidFieldState(format!(
                "amplitudes are not normalized: sum |lambda|^2 = {norm}"
            )));
        }
        Ok(Self { basis, amplitudes })
    }

    /// Single-packet Fock state |n> (K = 1 degeneration).
    pub fn single_packet(packet: WavePacket, n: usize) -> Result<Self, Error> {
        let basis = BasisSet::from_packets_unchecked(vec![packet]);
        let mut amplitudes = BTreeMap::new();
        amplitudes.insert(vec![n], ONE);
        Self::new(basis, amplitudes)
    }

    /// Factorizable state (sum_k a_k B_k^dag)^N / sqrt(N!) |0>:
    /// lambda_n = sqrt(N! / prod n_k!) prod a_k^{n_k}.
    pub fn factorizable(basis: BasisSet, weights: &[Complex64], n: usize) -> Result<Self, Error> {
        if weights.len() != basis.len() {
            return Err(Error::DimensionMismatch {
                left: weights.len(),
                right: basis.len(),
            });
        }
        let w_norm: f64 = weights.iter().map(|a| a.norm_sqr()).sum();
        if (w_norm - 1.0).abs() > 1e-10 {
            return Err(Error::InvalidFieldState(
                "factorizable weights are not normalized".into(),
            ));
        }
        let k = basis.len();
        let mut amplitudes = BTreeMap::new();
        let mut stack: Vec<(OccupationLabel, usize)> = vec![(Vec::new(), n)];
        while let Some((prefix, remaining)) = stack.pop() {
            if prefix.len() == k - 1 {
                let mut label = prefix;
                label.push(remaining);
                let mut coeff = Complex64::new(multinomial_sqrt(&label), 0.0);
                for (i, &c) in label.iter().enumerate() {
                    coeff *= weights[i].powu(c as u32);
                }
                if coeff.norm_sqr() > AMPLITUDE_PRUNE_TOL {
                    amplitudes.insert(label, coeff);
                }
                continue;
            }
            for take in 0..=remaining {
                let mut next = prefix.clone();
                next.push(take);
                stack.push((next, remaining - take));
            }
        }
        Self::new(basis, amplitudes)
    }

    pub fn photons(&self) -> usize {
        self.amplitudes
            .keys()
            .next()
            .map(|l| l.iter().sum())
            .unwrap_or(0)
    }

    pub fn to_repr(&self) -> NPhotonSpecRepr {
        NPhotonSpecRepr {
            basis: self.basis.packets.clone(),
            amplitudes: self
                .amplitudes
                .iter()
                .map(|(label, amp)| AmplitudeEntry {
                    indices: counts_to_indices(label),
                    re: amp.re,
                    im: amp.im,
                })
                .collect(),
        }
    }

    pub fn from_repr(repr: NPhotonSpecRepr) -> Result<Self, Error> {
        let basis = BasisSet::new(repr.basis)?;
        let k = basis.len();
        let mut amplitudes = BTreeMap::new();
        for e in repr.amplitudes {
            if e.indices.iter().any(|&i| i >= k) {
                return Err(Error::InvalidFieldState(format!(
                    "amplitude index out of range for basis of size {k}"
                )));
            }
            amplitudes.insert(indices_to_counts(&e.indices, k), Complex64::new(e.re, e.im));
        }
        Self::new(basis, amplitudes)
    }
}

fn multinomial_sqrt(label: &[usize]) -> f64 {
    let n: usize = label.iter().sum();
    let mut v = factorial(n);
    for &c in label {
        v /= factorial(c);
    }
    v.sqrt()
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|i| i as f64).product()
}

/// Build an NPhotonSpec from raw amplitudes over ordered index tuples:
/// lambda_multiset = sqrt(prod n_k!) * sum over distinct orderings of
/// lambda'_sigma.  Tuples are grouped by their sorted form; the sum runs
/// over the raw entries present (absent orderings contribute zero).
pub fn symmetrize(
    raw: &[(Vec<usize>, Complex64)],
    basis: BasisSet,
    renormalize: bool,
) -> Result<NPhotonSpec, Error> {
    if raw.is_empty() {
        return Err(Error::InvalidFieldState("no raw amplitudes given".into()));
    }
    let n = raw[0].0.len();
    let k = basis.len();
    let mut grouped: BTreeMap<OccupationLabel, Complex64> = BTreeMap::new();
    for (tuple, amp) in raw {
        if tuple.len() != n {
            return Err(Error::InvalidFieldState(
                "raw amplitude tuples have inconsistent lengths".into(),
            ));
        }
        if tuple.iter().any(|&i| i >= k) {
            return Err(Error::InvalidFieldState(format!(
                "tuple index out of range for basis of size {k}"
            )));
        }
        *grouped.entry(indices_to_counts(tuple, k)).or_insert(ZERO) += amp;
    }
    let mut amplitudes: BTreeMap<OccupationLabel, Complex64> = grouped
        .into_iter()
        .map(|(label, sum)| {
            let factor: f64 = label.iter().map(|&c| factorial(c)).product::<f64>().sqrt();
            (label, sum * factor)
        })
        .filter(|(_, amp)| amp.norm_sqr() > AMPLITUDE_PRUNE_TOL)
        .collect();
    if renormalize {
        let norm: f64 = amplitudes.values().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::InvalidFieldState(
                "raw amplitudes sum to the zero state".into(),
            ));
        }
        for amp in amplitudes.values_mut() {
            *amp /= norm;
        }
    }
    NPhotonSpec::new(basis, amplitudes)
}

fn remove_photon(label: &[usize], k: usize) -> Option<OccupationLabel> {
    if label[k] == 0 {
        return None;
    }
    let mut out = label.to_vec();
    out[k] -= 1;
    Some(out)
}

/// Downward closure of the spec's occupation labels under single-photon
/// removal (amplitudes below the prune tolerance are ignored).
pub fn label_closure(spec: &NPhotonSpec) -> BTreeSet<OccupationLabel> {
    let mut closure = BTreeSet::new();
    let mut frontier: Vec<OccupationLabel> = spec
        .amplitudes
        .iter()
        .filter(|(_, amp)| amp.norm_sqr() > AMPLITUDE_PRUNE_TOL)
        .map(|(l, _)| l.clone())
        .collect();
    while let Some(label) = frontier.pop() {
        if !closure.insert(label.clone()) {
            continue;
        }
        for k in 0..label.len() {
            if let Some(below) = remove_photon(&label, k) {
                frontier.push(below);
            }
        }
    }
    closure
}

/// All (bra, ket) label pairs the hierarchy needs, in canonical storage:
/// only pairs with bra >= ket (lexicographic) are kept, the rest being
/// adjoints.  Returns (canonical pairs, closure size).
pub fn reachable_labels(spec: &NPhotonSpec) -> (Vec<(OccupationLabel, OccupationLabel)>, usize) {
    let closure = label_closure(spec);
    let mut pairs = Vec::new();
    for a in &closure {
        for b in &closure {
            if a >= b {
                pairs.push((a.clone(), b.clone()));
            }
        }
    }
    (pairs, closure.len())
}

/// Hierarchy state over canonical label pairs.
#[derive(Debug, Clone)]
pub struct NPacketState {
    pub pairs: Vec<(OccupationLabel, OccupationLabel)>,
    pub time: f64,
    pub matrices: Vec<Operator>,
    index: HashMap<(OccupationLabel, OccupationLabel), usize>,
}

impl NPacketState {
    pub fn dim(&self) -> usize {
        self.matrices[0].dim()
    }

    pub fn level(&self, a: &[usize], b: &[usize]) -> Operator {
        let key = (a.to_vec(), b.to_vec());
        if let Some(&i) = self.index.get(&key) {
            self.matrices[i].clone()
        } else {
            let flipped = (b.to_vec(), a.to_vec());
            self.matrices[self.index[&flipped]].adjoint()
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            pairs: self.pairs.clone(),
            time: self.time,
            matrices: self
                .matrices
                .iter()
                .map(|m| Operator::zeros(m.dim()))
                .collect(),
            index: self.index.clone(),
        }
    }
}

/// Equal-label pairs start in rho_sys, everything else at zero.
pub fn initial_state_npacket(rho_sys: &Operator, spec: &NPhotonSpec) -> Result<NPacketState, Error> {
    if !rho_sys.is_density_matrix(1e-10) {
        return Err(Error::InvalidFieldState(
            "initial system state is not a density matrix".into(),
        ));
    }
    let (pairs, _) = reachable_labels(spec);
    let matrices = pairs
        .iter()
        .map(|(a, b)| {
            if a == b {
                rho_sys.clone()
            } else {
                Operator::zeros(rho_sys.dim())
            }
        })
        .collect();
    let index = pairs.iter().enumerate().map(|(i, p)| (p.clone(), i)).collect();
    Ok(NPacketState {
        pairs,
        time: 0.0,
        matrices,
        index,
    })
}

/// rho_total = sum_{a,b} lambda_a^* lambda_b rho_{a,b}
pub fn assemble_total_npacket(state: &NPacketState, spec: &NPhotonSpec) -> Operator {
    let mut out = Operator::zeros(state.dim());
    for (a, la) in &spec.amplitudes {
        for (b, lb) in &spec.amplitudes {
            out = out.add(&state.level(a, b).scale(la.conj() * lb));
        }
    }
    out
}

/// Operator-level right-hand side (reference implementation).
pub fn npacket_hierarchy_rhs(
    slh: &SLHTriple,
    spec: &NPhotonSpec,
    state: &NPacketState,
    t: f64,
) -> Result<NPacketState, Error> {
    if state.dim() != slh.dim() {
        return Err(Error::DimensionMismatch {
            left: state.dim(),
            right: slh.dim(),
        });
    }
    let cache = SlhCache::new(slh);
    let d = slh.dim();
    let xi: Vec<Complex64> = spec.basis.packets.iter().map(|p| p.eval(t)).collect();
    let mut out = state.zeros_like();
    let mut tmp = Operator::zeros(d);
    let mut tmp2 = Operator::zeros(d);
    for (i, (a, b)) in state.pairs.iter().enumerate() {
        let mut deriv = Operator::zeros(d);
        cache.add_vacuum_generator(&state.matrices[i], &mut tmp, &mut deriv);
        for k in 0..a.len() {
            if a[k] > 0 && xi[k] != ZERO {
                let below = remove_photon(a, k).unwrap();
                cache.add_drive_bra(
                    &state.level(&below, b),
                    xi[k] * (a[k] as f64).sqrt(),
                    &mut tmp,
                    &mut deriv,
                );
            }
            if b[k] > 0 && xi[k] != ZERO {
                let below = remove_photon(b, k).unwrap();
                cache.add_drive_ket(
                    &state.level(a, &below),
                    xi[k].conj() * (b[k] as f64).sqrt(),
                    &mut tmp,
                    &mut deriv,
                );
            }
        }
        if !cache.s_is_identity {
            for k in 0..a.len() {
                if a[k] == 0 || xi[k] == ZERO {
                    continue;
                }
                let a_below = remove_photon(a, k).unwrap();
                for k2 in 0..b.len() {
                    if b[k2] == 0 || xi[k2] == ZERO {
                        continue;
                    }
                    let b_below = remove_photon(b, k2).unwrap();
                    let c = xi[k] * xi[k2].conj() * ((a[k] * b[k2]) as f64).sqrt();
                    cache.add_scatter(
                        &state.level(&a_below, &b_below),
                        c,
                        &mut tmp,
                        &mut tmp2,
                        &mut deriv,
                    );
                }
            }
        }
        out.matrices[i] = deriv;
    }
    out.time = t;
    Ok(out)
}

/// Flattened N-packet system with (extrapolated) output accumulators.
/// State layout mirrors FockSystem: level matrices then per-pair flux and
/// quadrature accumulators.
pub struct NPacketSystem {
    pub spec: NPhotonSpec,
    pub dim: usize,
    pub phi: f64,
    pub track_outputs: bool,
    pub pairs: Vec<(OccupationLabel, OccupationLabel)>,
    index: HashMap<(OccupationLabel, OccupationLabel), usize>,
    cache: SlhCache,
    pulse_dt_cap: f64,
    support: (f64, f64),
}

impl NPacketSystem {
    pub fn new(slh: &SLHTriple, spec: NPhotonSpec, track_outputs: bool, phi: f64) -> Self {
        let (pairs, _) = reachable_labels(&spec);
        let index = pairs.iter().enumerate().map(|(i, p)| (p.clone(), i)).collect();
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for p in &spec.basis.packets {
            let (a, b) = p.support();
            lo = lo.min(a);
            hi = hi.max(b);
        }
        let gamma = slh.l.adjoint().matmul(&slh.l).trace().re.max(1e-12);
        // resolve the narrowest basis packet, not just the union envelope
        let min_width = spec
            .basis
            .packets
            .iter()
            .map(|p| {
                let (a, b) = p.support();
                (b - a) / 16.0
            })
            .fold(f64::INFINITY, f64::min);
        Self {
            dim: slh.dim(),
            phi,
            track_outputs,
            index,
            pairs,
            cache: SlhCache::new(slh),
            pulse_dt_cap: 0.05 * (1.0 / gamma).min(min_width),
            support: (lo, hi),
            spec,
        }
    }

    pub fn support(&self) -> (f64, f64) {
        self.support
    }

    fn mat_len(&self) -> usize {
        2 * self.dim * self.dim
    }

    pub fn state_len(&self) -> usize {
        let levels = self.pairs.len() * self.mat_len();
        if self.track_outputs {
            levels + 4 * self.pairs.len()
        } else {
            levels
        }
    }

    pub fn flatten(&self, state: &NPacketState, y: &mut Vec<f64>) {
        y.clear();
        for op in &state.matrices {
            for z in op.entries() {
                y.push(z.re);
                y.push(z.im);
            }
        }
        y.resize(self.state_len(), 0.0);
    }

    pub fn unflatten(&self, t: f64, y: &[f64]) -> NPacketState {
        let d = self.dim;
        let matrices = (0..self.pairs.len())
            .map(|k| {
                let off = k * self.mat_len();
                let entries = (0..d * d)
                    .map(|i| Complex64::new(y[off + 2 * i], y[off + 2 * i + 1]))
                    .collect();
                Operator::new(d, entries).unwrap()
            })
            .collect();
        NPacketState {
            pairs: self.pairs.clone(),
            time: t,
            matrices,
            index: self.index.clone(),
        }
    }

    /// Accumulated (flux, quad) per canonical pair.
    pub fn outputs(
        &self,
        y: &[f64],
    ) -> BTreeMap<(OccupationLabel, OccupationLabel), [Complex64; 2]> {
        let base = self.pairs.len() * self.mat_len();
        let mut out = BTreeMap::new();
        if !self.track_outputs {
            return out;
        }
        for (k, pair) in self.pairs.iter().enumerate() {
            let off = base + 4 * k;
            out.insert(
                pair.clone(),
                [
                    Complex64::new(y[off], y[off + 1]),
                    Complex64::new(y[off + 2], y[off + 3]),
                ],
            );
        }
        out
    }

    /// E_{a,b}[x] = Tr[rho_{b,a} x]
    fn expect(&self, state: &NPacketState, a: &[usize], b: &[usize], x: &Operator) -> Complex64 {
        let rho = state.level(b, a);
        let d = self.dim;
        let mut acc = ZERO;
        for i in 0..d {
            for j in 0..d {
                acc += rho.entries()[i * d + j] * x.entries()[j * d + i];
            }
        }
        acc
    }

    fn flux_rate(
        &self,
        state: &NPacketState,
        a: &[usize],
        b: &[usize],
        xi: &[Complex64],
    ) -> Complex64 {
        let cache = &self.cache;
        let mut rate = self.expect(state, a, b, &cache.ldl);
        for k in 0..a.len() {
            if a[k] > 0 && xi[k] != ZERO {
                let below = remove_photon(a, k).unwrap();
                let x = if cache.s_is_identity {
                    cache.l.clone()
                } else {
                    cache.s_dag.matmul(&cache.l)
                };
                rate += (a[k] as f64).sqrt() * xi[k].conj() * self.expect(state, &below, b, &x);
            }
            if b[k] > 0 && xi[k] != ZERO {
                let below = remove_photon(b, k).unwrap();
                let x = if cache.s_is_identity {
                    cache.l_dag.clone()
                } else {
                    cache.l_dag.matmul(&cache.s)
                };
                rate += (b[k] as f64).sqrt() * xi[k] * self.expect(state, a, &below, &x);
            }
        }
        for k in 0..a.len() {
            if a[k] == 0 || xi[k] == ZERO {
                continue;
            }
            let a_below = remove_photon(a, k).unwrap();
            for k2 in 0..b.len() {
                if b[k2] == 0 || xi[k2] == ZERO {
                    continue;
                }
                let b_below = remove_photon(b, k2).unwrap();
                let weight = ((a[k] * b[k2]) as f64).sqrt();
                let val = if cache.s_is_identity {
                    state.level(&b_below, &a_below).trace()
                } else {
                    let x = cache.s_dag.matmul(&cache.s);
                    self.expect(state, &a_below, &b_below, &x)
                };
                rate += weight * xi[k].conj() * xi[k2] * val;
            }
        }
        rate
    }

    fn quad_rate(
        &self,
        state: &NPacketState,
        a: &[usize],
        b: &[usize],
        xi: &[Complex64],
    ) -> Complex64 {
        let cache = &self.cache;
        let eip = Complex64::from_polar(1.0, self.phi);
        let mut rate = eip * self.expect(state, a, b, &cache.l)
            + eip.conj() * self.expect(state, a, b, &cache.l_dag);
        for k in 0..a.len() {
            if b[k] > 0 && xi[k] != ZERO {
                let below = remove_photon(b, k).unwrap();
                let val = if cache.s_is_identity {
                    state.level(&below, a).trace()
                } else {
                    self.expect(state, a, &below, &cache.s)
                };
                rate += eip * (b[k] as f64).sqrt() * xi[k] * val;
            }
            if a[k] > 0 && xi[k] != ZERO {
                let below = remove_photon(a, k).unwrap();
                let val = if cache.s_is_identity {
                    state.level(b, &below).trace()
                } else {
                    self.expect(state, &below, b, &cache.s_dag)
                };
                rate += eip.conj() * (a[k] as f64).sqrt() * xi[k].conj() * val;
            }
        }
        rate
    }
}

impl OdeSystem for NPacketSystem {
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
        let state = self.unflatten(t, y);
        let deriv = npacket_hierarchy_rhs_cached(&self.cache, &self.spec, &state, t);
        let d = self.dim;
        for (k, op) in deriv.matrices.iter().enumerate() {
            let off = k * self.mat_len();
            for i in 0..d * d {
                dydt[off + 2 * i] = op.entries()[i].re;
                dydt[off + 2 * i + 1] = op.entries()[i].im;
            }
        }
        if self.track_outputs {
            let xi: Vec<Complex64> = self.spec.basis.packets.iter().map(|p| p.eval(t)).collect();
            let base = self.pairs.len() * self.mat_len();
            for (k, (a, b)) in self.pairs.iter().enumerate() {
                let flux = self.flux_rate(&state, a, b, &xi);
                let quad = self.quad_rate(&state, a, b, &xi);
                let off = base + 4 * k;
                dydt[off] = flux.re;
                dydt[off + 1] = flux.im;
                dydt[off + 2] = quad.re;
                dydt[off + 3] = quad.im;
            }
        }
    }
}

/// Combined flux/quad over the spec's amplitudes:
/// E_total = sum lambda_a lambda_b^* E_{a,b}.
pub fn combine_npacket_outputs(
    acc: &BTreeMap<(OccupationLabel, OccupationLabel), [Complex64; 2]>,
    spec: &NPhotonSpec,
    slot: usize,
) -> f64 {
    let mut total = ZERO;
    for (a, la) in &spec.amplitudes {
        for (b, lb) in &spec.amplitudes {
            let v = if a >= b {
                acc.get(&(a.clone(), b.clone())).map(|x| x[slot]).unwrap_or(ZERO)
            } else {
                acc.get(&(b.clone(), a.clone()))
                    .map(|x| x[slot].conj())
                    .unwrap_or(ZERO)
            };
            total += la * lb.conj() * v;
        }
    }
    total.re
}

fn npacket_hierarchy_rhs_cached(
    cache: &SlhCache,
    spec: &NPhotonSpec,
    state: &NPacketState,
    t: f64,
) -> NPacketState {
    // Same generator as npacket_hierarchy_rhs; the cache avoids rebuilding
    // the precomputed operators every step.
    let d = state.dim();
    let xi: Vec<Complex64> = spec.basis.packets.iter().map(|p| p.eval(t)).collect();
    let mut out = state.zeros_like();
    let mut tmp = Operator::zeros(d);
    let mut tmp2 = Operator::zeros(d);
    for (i, (a, b)) in state.pairs.iter().enumerate() {
        let mut deriv = Operator::zeros(d);
        cache.add_vacuum_generator(&state.matrices[i], &mut tmp, &mut deriv);
        for k in 0..a.len() {
            if a[k] > 0 && xi[k] != ZERO {
                let below = remove_photon(a, k).unwrap();
                cache.add_drive_bra(
                    &state.level(&below, b),
                    xi[k] * (a[k] as f64).sqrt(),
                    &mut tmp,
                    &mut deriv,
                );
            }
            if b[k] > 0 && xi[k] != ZERO {
                let below = remove_photon(b, k).unwrap();
                cache.add_drive_ket(
                    &state.level(a, &below),
                    xi[k].conj() * (b[k] as f64).sqrt(),
                    &mut tmp,
                    &mut deriv,
                );
            }
        }
        if !cache.s_is_identity {
            for k in 0..a.len() {
                if a[k] == 0 || xi[k] == ZERO {
                    continue;
                }
                let a_below = remove_photon(a, k).unwrap();
                for k2 in 0..b.len() {
                    if b[k2] == 0 || xi[k2] == ZERO {
                        continue;
                    }
                    let b_below = remove_photon(b, k2).unwrap();
                    let c = xi[k] * xi[k2].conj() * ((a[k] * b[k2]) as f64).sqrt();
                    cache.add_scatter(
                        &state.level(&a_below, &b_below),
                        c,
                        &mut tmp,
                        &mut tmp2,
                        &mut deriv,
                    );
                }
            }
        }
        out.matrices[i] = deriv;
    }
    out.time = t;
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hierarchy::{hierarchy_rhs, initial_state, level_index, level_pairs};
    use approx::assert_abs_diff_eq;

    fn two_packet_basis(sep: f64) -> BasisSet {
        BasisSet::new(vec![
            WavePacket::gaussian(1.0, 0.0),
            WavePacket::gaussian(1.0, sep),
        ])
        .unwrap()
    }

    #[test]
    fn symmetrize_single_index() {
        let basis = BasisSet::from_packets_unchecked(vec![WavePacket::gaussian(1.0, 0.0)]);
        let spec = symmetrize(&[(vec![0], ONE)], basis, false).unwrap();
        assert_eq!(spec.amplitudes.len(), 1);
        assert_abs_diff_eq!(spec.amplitudes[&vec![1]].re, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn symmetrize_factorizable_two_photon() {
        // lambda'_{ij} = a_i a_j with a = (1/sqrt2, 1/sqrt2); after
        // renormalization the table must match the direct expansion of
        // (sum a_k B_k^dag)^2 |0> / sqrt(2!): {1/2, 1/sqrt2, 1/2}.
        let a = Complex64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
        let raw: Vec<_> = [(0, 0), (0, 1), (1, 0), (1, 1)]
            .iter()
            .map(|&(i, j)| (vec![i, j], a * a))
            .collect();
        let spec = symmetrize(&raw, two_packet_basis(40.0), true).unwrap();
        assert_abs_diff_eq!(spec.amplitudes[&vec![2, 0]].re, 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(
            spec.amplitudes[&vec![1, 1]].re,
            std::f64::consts::FRAC_1_SQRT_2,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(spec.amplitudes[&vec![0, 2]].re, 0.5, epsilon = 1e-12);
        // and agrees with the closed-form factorizable constructor
        let direct = NPhotonSpec::factorizable(two_packet_basis(40.0), &[a, a], 2).unwrap();
        for (label, amp) in &direct.amplitudes {
            assert_abs_diff_eq!(spec.amplitudes[label].re, amp.re, epsilon = 1e-12);
        }
    }

    #[test]
    fn symmetrize_asymmetric_tuple_sums_orderings() {
        let l12 = Complex64::new(0.3, 0.1);
        let l21 = Complex64::new(0.5, -0.2);
        let raw = vec![(vec![0, 1], l12), (vec![1, 0], l21)];
        let spec = symmetrize(&raw, two_packet_basis(40.0), true).unwrap();
        let expect = l12 + l21;
        let got = spec.amplitudes[&vec![1, 1]];
        // single occupied slot each: sqrt(1!1!) = 1, then renormalized
        assert_abs_diff_eq!(got.norm(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(got.arg(), expect.arg(), epsilon = 1e-12);
    }

    #[test]
    fn reachable_label_counts() {
        // K=1, N=2: closure {2,1,0} -> 6 canonical pairs
        let packet = WavePacket::gaussian(1.0, 0.0);
        let spec = NPhotonSpec::single_packet(packet, 2).unwrap();
        let (pairs, closure) = reachable_labels(&spec);
        assert_eq!(closure, 3);
        assert_eq!(pairs.len(), 6);

        // K=2, N=1 superposition: labels {(1,0),(0,1),(0,0)} -> 6 pairs
        let a = Complex64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
        let spec = NPhotonSpec::factorizable(two_packet_basis(40.0), &[a, a], 1).unwrap();
        let (pairs, closure) = reachable_labels(&spec);
        assert_eq!(closure, 3);
        assert_eq!(pairs.len(), 6);

        // N=0: single pair
        let basis = BasisSet::from_packets_unchecked(vec![WavePacket::gaussian(1.0, 0.0)]);
        let mut amps = BTreeMap::new();
        amps.insert(vec![0], ONE);
        let spec = NPhotonSpec::new(basis, amps).unwrap();
        let (pairs, _) = reachable_labels(&spec);
        assert_eq!(pairs.len(), 1);
    }

    #[test]
    fn single_basis_degenerates_to_single_mode_hierarchy() {
        let slh = SLHTriple::two_level_decay(1.0);
        let packet = WavePacket::gaussian(1.46, 0.0);
        let spec = NPhotonSpec::single_packet(packet.clone(), 2).unwrap();
        let mut np = initial_state_npacket(&Operator::ketbra(2, 0, 0), &spec).unwrap();
        let mut sm = initial_state(&Operator::ketbra(2, 0, 0), 2).unwrap();
        // seed matching structure: pair ([m],[n]) <-> level (m,n)
        for (i, (a, b)) in np.pairs.clone().iter().enumerate() {
            if a != b {
                let z = Complex64::new(0.2 * (a[0] as f64), 0.1 + 0.3 * (b[0] as f64));
                np.matrices[i][(0, 1)] = z;
                sm.matrices[level_index(a[0], b[0])][(0, 1)] = z;
            }
        }
        let dn = npacket_hierarchy_rhs(&slh, &spec, &np, 0.15).unwrap();
        let ds = hierarchy_rhs(&slh, &packet, &sm, 0.15).unwrap();
        for (m, n) in level_pairs(2) {
            let diff = dn.level(&[m], &[n]).sub(&ds.level(m, n)).max_abs();
            assert!(diff < 1e-12, "level ({m},{n}) differs by {diff}");
        }
    }

    #[test]
    fn spec_validation() {
        let basis = two_packet_basis(40.0);
        // mixed totals rejected
        let mut amps = BTreeMap::new();
        amps.insert(vec![1, 0], Complex64::new(0.6, 0.0));
        amps.insert(vec![1, 1], Complex64::new(0.8, 0.0));
        assert!(NPhotonSpec::new(basis.clone(), amps).is_err());
        // unnormalized rejected
        let mut amps = BTreeMap::new();
        amps.insert(vec![1, 0], Complex64::new(0.5, 0.0));
        assert!(NPhotonSpec::new(basis.clone(), amps).is_err());
        // wrong label length rejected
        let mut amps = BTreeMap::new();
        amps.insert(vec![1], ONE);
        assert!(NPhotonSpec::new(basis, amps).is_err());
    }

    #[test]
    fn json_round_trip() {
        let a = Complex64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
        let spec = NPhotonSpec::factorizable(two_packet_basis(40.0), &[a, a], 2).unwrap();
        let json = serde_json::to_string(&spec.to_repr()).unwrap();
        let back = NPhotonSpec::from_repr(serde_json::from_str(&json).unwrap()).unwrap();
        assert_eq!(back.amplitudes.len(), spec.amplitudes.len());
        for (label, amp) in &spec.amplitudes {
            assert!((back.amplitudes[label] - amp).norm() < 1e-14);
        }
    }
}
