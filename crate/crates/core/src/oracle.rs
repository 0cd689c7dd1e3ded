//! Time-bin (collision-model) oracle: a brute-force discretization of the
//! joint system + field unitary, independent of the hierarchy machinery.
//!
//! The field over [t0, t0 + B dt] is chopped into B bins with mode
//! operators b_k; each step applies the bin unitary
//! U_k = exp(sqrt(Gamma dt) (sigma_+ b_k - sigma_- b_k^dag)) exactly.
//! For L = sqrt(Gamma) sigma_-, H = 0, S = I, total excitation number is
//! conserved, so the state lives in a small sector: with the atom ground
//! the field holds N photons, with the atom excited N - 1.  Each U_k is
//! block diagonal in 2-dim blocks {|g, n_k = m+1>, |e, n_k = m>} and acts
//! as a rotation by theta = sqrt(Gamma dt (m+1)) — no matrix exponentials
//! and no Ito calculus anywhere, which is the point of the oracle.
//!
//! Supported: N <= 2 photons, two-level systems, and a two-mode variant
//! (forward/backward ladders) for N = 1.

use num_complex::Complex64;

use crate::error::Error;
use crate::operators::{MultiModeSLH, Operator, SLHTriple, ZERO};
use crate::wavepacket::WavePacket;

#[derive(Debug, Clone)]
pub struct TimeBinConfig {
    pub bins: usize,
    pub t_start: f64,
    pub t_end: f64,
}

impl TimeBinConfig {
    pub fn dt_bin(&self) -> f64 {
        (self.t_end - self.t_start) / self.bins as f64
    }

    /// Midpoint of bin k.
    pub fn bin_time(&self, k: usize) -> f64 {
        self.t_start + (k as f64 + 0.5) * self.dt_bin()
    }
}

/// Discretized single-photon amplitudes c_k = xi(t_k) sqrt(dt).
pub fn bin_amplitudes(packet: &WavePacket, cfg: &TimeBinConfig) -> Vec<Complex64> {
    let dt = cfg.dt_bin();
    (0..cfg.bins)
        .map(|k| packet.eval(cfg.bin_time(k)) * dt.sqrt())
        .collect()
}

/// Sector-restricted joint state for total excitation N (atom starts
/// ground unless stated otherwise).
#[derive(Debug, Clone)]
pub enum SectorState {
    /// No excitations: ground atom, vacuum field.
    Zero { g: Complex64 },
    /// One excitation: g[k] = photon in bin k; e = excited atom, vacuum.
    One { g: Vec<Complex64>, e: Complex64 },
    /// Two excitations: g indexed by bin pairs i <= j; e[k] = excited
    /// atom plus one photon in bin k.
    Two { g: Vec<Complex64>, e: Vec<Complex64> },
}

/// Upper-triangular pair index for i <= j over B bins.
pub fn pair_index(i: usize, j: usize, bins: usize) -> usize {
    debug_assert!(i <= j && j < bins);
    i * bins - i * (i + 1) / 2 + j
}

impl SectorState {
    pub fn norm_sqr(&self) -> f64 {
        match self {
            SectorState::Zero { g } => g.norm_sqr(),
            SectorState::One { g, e } => {
                g.iter().map(|a| a.norm_sqr()).sum::<f64>() + e.norm_sqr()
            }
            SectorState::Two { g, e } => {
                g.iter().map(|a| a.norm_sqr()).sum::<f64>()
                    + e.iter().map(|a| a.norm_sqr()).sum::<f64>()
            }
        }
    }

    pub fn excited_population(&self) -> f64 {
        match self {
            SectorState::Zero { .. } => 0.0,
            SectorState::One { e, .. } => e.norm_sqr(),
            SectorState::Two { e, .. } => e.iter().map(|a| a.norm_sqr()).sum(),
        }
    }
}

/// Partial trace over all field bins.  Excitation conservation forbids
/// ground/excited coherence for Fock inputs (the sectors hold different
/// photon numbers), so the reduced state is diagonal.
pub fn reduced_system_state(state: &SectorState) -> Operator {
    let pe = state.excited_population();
    let pg = state.norm_sqr() - pe;
    let mut rho = Operator::zeros(2);
    rho[(0, 0)] = Complex64::new(pg, 0.0);
    rho[(1, 1)] = Complex64::new(pe, 0.0);
    rho
}

/// Check that the coupling is in oracle scope and extract Gamma:
/// L = sqrt(Gamma)|g><e|, H = 0, S = I.
fn dipole_gamma(slh: &SLHTriple) -> Result<f64, Error> {
    if slh.dim() != 2 {
        return Err(Error::Unsupported("oracle supports two-level systems".into()));
    }
    if !slh.s.is_identity(1e-12) {
        return Err(Error::Unsupported("oracle requires S = I".into()));
    }
    if !slh.h.is_zero(1e-12) {
        return Err(Error::Unsupported("oracle requires H = 0".into()));
    }
    let c = slh.l[(0, 1)];
    let residual = slh.l.sub(&Operator::sigma_minus().scale(c)).max_abs();
    if residual > 1e-12 || c.im.abs() > 1e-12 || c.re < 0.0 {
        return Err(Error::Unsupported(
            "oracle requires L = sqrt(Gamma)|g><e| with Gamma >= 0".into(),
        ));
    }
    Ok(c.re * c.re)
}

/// Build the discretized input |psi> from single-photon factor vectors:
/// N = factors.len() photons, |psi> = prod_f (sum_k f_k b_k^dag)|0> / Z.
/// Each factor must carry unit weight on the grid to 1e-6.
pub fn build_input_state(
    cfg: &TimeBinConfig,
    factors: &[Vec<Complex64>],
) -> Result<SectorState, Error> {
    for f in factors {
        if f.len() != cfg.bins {
            return Err(Error::DimensionMismatch {
                left: f.len(),
                right: cfg.bins,
            });
        }
        let w: f64 = f.iter().map(|a| a.norm_sqr()).sum();
        if (w - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidWavePacket(format!(
                "packet weight on the bin grid is {w}, not 1"
            )));
        }
    }
    let b = cfg.bins;
    let state = match factors.len() {
        0 => SectorState::Zero {
            g: Complex64::new(1.0, 0.0),
        },
        1 => SectorState::One {
            g: factors[0].clone(),
            e: ZERO,
        },
        2 => {
            let (c, d) = (&factors[0], &factors[1]);
            // b^dag(c) b^dag(d)|0> = sum_k c_k d_k sqrt2 |2_k>
            //   + sum_{i<j} (c_i d_j + c_j d_i) |1_i 1_j>, normalized by
            // Z = sqrt(1 + |<c|d>|^2).
            let overlap: Complex64 = c.iter().zip(d).map(|(a, b)| a.conj() * b).sum();
            let z = (1.0 + overlap.norm_sqr()).sqrt();
            let mut g = vec![ZERO; b * (b + 1) / 2];
            for i in 0..b {
                g[pair_index(i, i, b)] = c[i] * d[i] * std::f64::consts::SQRT_2 / z;
                for j in (i + 1)..b {
                    g[pair_index(i, j, b)] = (c[i] * d[j] + c[j] * d[i]) / z;
                }
            }
            SectorState::Two {
                g,
                e: vec![ZERO; b],
            }
        }
        n => {
            return Err(Error::Unsupported(format!(
                "oracle supports at most 2 photons, got {n}"
            )))
        }
    };
    let norm = state.norm_sqr().sqrt();
    if (norm - 1.0).abs() > 1e-8 {
        return Err(Error::InvalidFieldState(format!(
            "discretized input state norm {norm} deviates from 1"
        )));
    }
    Ok(state)
}

/// Vacuum field with the atom excited (one total excitation).
pub fn excited_atom_state(cfg: &TimeBinConfig) -> SectorState {
    SectorState::One {
        g: vec![ZERO; cfg.bins],
        e: Complex64::new(1.0, 0.0),
    }
}

#[inline]
fn rotate(a: &mut Complex64, b: &mut Complex64, theta: f64) {
    // |g, m+1> -> cos |g, m+1> + sin |e, m>;  |e, m> -> cos |e, m> - sin |g, m+1>
    let (s, c) = theta.sin_cos();
    let (ga, ea) = (*a, *b);
    *a = c * ga - s * ea;
    *b = c * ea + s * ga;
}

/// Apply the exact bin-k unitary.
pub fn step_collision(state: &mut SectorState, k: usize, bins: usize, gamma_dt: f64) {
    let theta = gamma_dt.sqrt();
    match state {
        SectorState::Zero { .. } => {}
        SectorState::One { g, e } => rotate(&mut g[k], e, theta),
        SectorState::Two { g, e } => {
            for i in 0..bins {
                if i == k {
                    // doubly occupied bin: theta scales with sqrt(m+1) = sqrt2
                    let idx = pair_index(k, k, bins);
                    rotate(&mut g[idx], &mut e[k], theta * std::f64::consts::SQRT_2);
                } else {
                    let idx = pair_index(i.min(k), i.max(k), bins);
                    rotate(&mut g[idx], &mut e[i], theta);
                }
            }
        }
    }
}

/// Full oracle run: P_e after every bin, plus the final state.
pub struct OracleRecord {
    pub times: Vec<f64>,
    pub pe: Vec<f64>,
    pub final_state: SectorState,
}

impl OracleRecord {
    /// P_e at time t by nearest sampled bin boundary.
    pub fn pe_at(&self, t: f64) -> f64 {
        let mut best = (f64::INFINITY, 0.0);
        for (&tt, &p) in self.times.iter().zip(&self.pe) {
            let d = (tt - t).abs();
            if d < best.0 {
                best = (d, p);
            }
        }
        best.1
    }
}

/// Run the single-mode oracle for an N-photon input in one packet.
pub fn run_oracle(
    slh: &SLHTriple,
    packet: &WavePacket,
    n: usize,
    cfg: &TimeBinConfig,
) -> Result<OracleRecord, Error> {
    let gamma = dipole_gamma(slh)?;
    let amps = bin_amplitudes(packet, cfg);
    let factors = vec![amps; n];
    let mut state = build_input_state(cfg, &factors)?;
    let dt = cfg.dt_bin();
    let mut times = Vec::with_capacity(cfg.bins + 1);
    let mut pe = Vec::with_capacity(cfg.bins + 1);
    times.push(cfg.t_start);
    pe.push(state.excited_population());
    for k in 0..cfg.bins {
        step_collision(&mut state, k, cfg.bins, gamma * dt);
        times.push(cfg.t_start + (k as f64 + 1.0) * dt);
        pe.push(state.excited_population());
    }
    let norm = state.norm_sqr();
    debug_assert!((norm - 1.0).abs() < 1e-10);
    Ok(OracleRecord {
        times,
        pe,
        final_state: state,
    })
}

/// Two-mode oracle for the waveguide preset: a single photon in the
/// forward packet, vacuum backward, L_i = sqrt(Gamma_i)|g><e|.  Per step
/// the atom collides with the forward then the backward bin (first-order
/// splitting).  Returns P_e plus final transmitted/reflected weights.
pub struct TwoModeOracleRecord {
    pub times: Vec<f64>,
    pub pe: Vec<f64>,
    pub transmitted: f64,
    pub reflected: f64,
}

pub fn run_oracle_two_mode(
    slh: &MultiModeSLH,
    packet: &WavePacket,
    cfg: &TimeBinConfig,
) -> Result<TwoModeOracleRecord, Error> {
    if slh.modes != 2 {
        return Err(Error::Unsupported("two-mode oracle needs 2 modes".into()));
    }
    let mut gammas = [0.0; 2];
    for i in 0..2 {
        let sub = SLHTriple::new(
            Operator::identity(2),
            slh.l[i].clone(),
            Operator::zeros(2),
        )?;
        gammas[i] = dipole_gamma(&sub)?;
        for j in 0..2 {
            let sij = slh.s_ij(i, j);
            let ok = if i == j {
                sij.is_identity(1e-12)
            } else {
                sij.is_zero(1e-12)
            };
            if !ok {
                return Err(Error::Unsupported("two-mode oracle requires diagonal S = I".into()));
            }
        }
    }
    if !slh.h.is_zero(1e-12) {
        return Err(Error::Unsupported("two-mode oracle requires H = 0".into()));
    }
    let amps = bin_amplitudes(packet, cfg);
    let w: f64 = amps.iter().map(|a| a.norm_sqr()).sum();
    if (w - 1.0).abs() > 1e-6 {
        return Err(Error::InvalidWavePacket(format!(
            "packet weight on the bin grid is {w}, not 1"
        )));
    }
    let b = cfg.bins;
    let dt = cfg.dt_bin();
    let mut fwd = amps;
    let mut bwd = vec![ZERO; b];
    let mut e = ZERO;
    let mut times = vec![cfg.t_start];
    let mut pe = vec![0.0];
    for k in 0..b {
        rotate(&mut fwd[k], &mut e, (gammas[0] * dt).sqrt());
        rotate(&mut bwd[k], &mut e, (gammas[1] * dt).sqrt());
        times.push(cfg.t_start + (k as f64 + 1.0) * dt);
        pe.push(e.norm_sqr());
    }
    Ok(TwoModeOracleRecord {
        times,
        pe,
        transmitted: fwd.iter().map(|a| a.norm_sqr()).sum(),
        reflected: bwd.iter().map(|a| a.norm_sqr()).sum(),
    })
}
