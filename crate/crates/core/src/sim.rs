//! End-to-end single-mode simulation driver.
//!
//! Integrates the Fock hierarchy over a time window derived from the
//! packet support, sampling excitation probability, photon flux, and a
//! field quadrature on a uniform grid.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::hierarchy::{
    assemble_total, combine_outputs, excitation_probability, initial_state, FieldCombination,
    FockSystem, OutputAccumulator,
};
use crate::integrator::{integrate, IntegratorConfig};
use crate::operators::{Operator, SLHTriple};
use crate::wavepacket::{PacketShape, WavePacket};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimConfig {
    /// Photon-number truncation of the hierarchy.
    pub n_max: usize,
    /// Input field state over Fock layers of the packet.
    pub combo: FieldCombination,
    /// Quadrature phase phi for Z^out.
    pub phi: f64,
    /// Integrate output-field accumulators alongside the hierarchy.
    pub track_outputs: bool,
    /// Number of uniform samples across the window.
    pub samples: usize,
    /// Override for the time window; None derives it from the packet.
    pub window: Option<(f64, f64)>,
    pub rtol: f64,
    pub atol: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n_max: 1,
            combo: FieldCombination::fock(1),
            phi: 0.0,
            track_outputs: true,
            samples: 400,
            window: None,
            rtol: 1e-8,
            atol: 1e-10,
        }
    }
}

/// Sampled observables along a run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TimeSeriesRecord {
    pub times: Vec<f64>,
    /// Tr[rho_total P_e]
    pub pe: Vec<f64>,
    /// d E_total[Lambda^out] / dt
    pub flux_rate: Vec<f64>,
    /// E_total[Lambda^out]
    pub flux_integrated: Vec<f64>,
    /// E_total[Z^out] at phase phi
    pub quad: Vec<f64>,
    /// Tr rho_total at each sample (unity up to integration error).
    pub trace: Vec<f64>,
}

impl TimeSeriesRecord {
    pub fn max_pe(&self) -> f64 {
        self.pe.iter().cloned().fold(0.0, f64::max)
    }

    pub fn final_flux(&self) -> f64 {
        self.flux_integrated.last().copied().unwrap_or(0.0)
    }
}

/// Simulation window derived from the packet: start at the support edge,
/// run to the later of the support end and t_a + 12 decay times so
/// emission completes.
pub fn default_window(packet: &WavePacket, gamma: f64) -> (f64, f64) {
    let (lo, hi) = packet.support();
    let tail = if gamma > 0.0 { 12.0 / gamma } else { 0.0 };
    match packet.shape {
        PacketShape::Gaussian { omega, t_a } => {
            let half = crate::wavepacket::GAUSSIAN_SUPPORT_WIDTHS / omega;
            (t_a - half, t_a + half.max(tail))
        }
        _ => (lo, hi + tail),
    }
}

/// Decay-rate scale Tr[L^dag L] used for window sizing.
pub fn coupling_scale(slh: &SLHTriple) -> f64 {
    slh.l.adjoint().matmul(&slh.l).trace().re
}

/// Run a single-mode simulation from the system ground-like state
/// `rho_sys`, sampling observables uniformly.
pub fn run_single_mode(
    slh: &SLHTriple,
    packet: &WavePacket,
    rho_sys: &Operator,
    projector: &Operator,
    cfg: &SimConfig,
) -> Result<TimeSeriesRecord, Error> {
    cfg.combo.validate()?;
    if cfg.combo.max_level() > cfg.n_max {
        return Err(Error::LevelOutOfRange {
            m: cfg.combo.max_level(),
            n: cfg.combo.max_level(),
            n_max: cfg.n_max,
        });
    }
    if cfg.samples < 2 {
        return Err(Error::InvalidConfig("need at least 2 samples".into()));
    }
    let system = FockSystem::new(slh, packet.clone(), cfg.n_max, cfg.track_outputs, cfg.phi);
    let (t0, t1) = cfg
        .window
        .unwrap_or_else(|| default_window(packet, coupling_scale(slh)));
    if !(t1 > t0) {
        return Err(Error::InvalidConfig(format!(
            "empty time window [{t0}, {t1}]"
        )));
    }

    let state0 = initial_state(rho_sys, cfg.n_max)?;
    let mut y0 = Vec::new();
    system.flatten(&state0, &mut y0);

    let int_cfg = IntegratorConfig {
        rtol: cfg.rtol,
        atol: cfg.atol,
        t_start: t0,
        t_end: t1,
        sample_points: cfg.samples,
        ..IntegratorConfig::default()
    };

    let mut record = TimeSeriesRecord {
        times: Vec::with_capacity(cfg.samples),
        pe: Vec::with_capacity(cfg.samples),
        flux_rate: Vec::with_capacity(cfg.samples),
        flux_integrated: Vec::with_capacity(cfg.samples),
        quad: Vec::with_capacity(cfg.samples),
        trace: Vec::with_capacity(cfg.samples),
    };
    let mut observe_err: Option<Error> = None;

    integrate(&system, &y0, &int_cfg, &mut |t: f64, y: &[f64]| {
        if observe_err.is_some() {
            return;
        }
        let state = system.unflatten(t, y);
        match assemble_total(&state, &cfg.combo) {
            Ok(total) => {
                record.times.push(t);
                record.pe.push(excitation_probability(&total, projector));
                record.trace.push(total.trace().re);
                if cfg.track_outputs {
                    let acc = system.outputs(y);
                    match combine_outputs(&acc, &cfg.combo) {
                        Ok((flux, quad)) => {
                            record.flux_integrated.push(flux);
                            record.quad.push(quad);
                        }
                        Err(e) => observe_err = Some(e),
                    }
                    let rates = system.flux_rates(y, t);
                    let acc_rates = OutputAccumulator {
                        flux: rates,
                        ..Default::default()
                    };
                    let mut rate = Complex64::new(0.0, 0.0);
                    for (&(m, n), &c) in &cfg.combo.coeffs {
                        rate += c * OutputAccumulator::entry(&acc_rates.flux, m, n);
                    }
                    record.flux_rate.push(rate.re);
                } else {
                    record.flux_integrated.push(0.0);
                    record.quad.push(0.0);
                    record.flux_rate.push(0.0);
                }
            }
            Err(e) => observe_err = Some(e),
        }
    })?;
    if let Some(e) = observe_err {
        return Err(e);
    }
    Ok(record)
}

/// Sampled observables along a two-mode run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TwoModeRecord {
    pub times: Vec<f64>,
    pub pe: Vec<f64>,
    /// E_total[Lambda_11^out]: photons emitted into mode one.
    pub flux1: Vec<f64>,
    /// E_total[Lambda_22^out]: photons emitted into mode two.
    pub flux2: Vec<f64>,
    pub quad1: Vec<f64>,
    pub quad2: Vec<f64>,
    pub trace: Vec<f64>,
}

impl TwoModeRecord {
    pub fn max_pe(&self) -> f64 {
        self.pe.iter().cloned().fold(0.0, f64::max)
    }

    pub fn final_flux(&self) -> (f64, f64) {
        (
            self.flux1.last().copied().unwrap_or(0.0),
            self.flux2.last().copied().unwrap_or(0.0),
        )
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TwoModeSimConfig {
    pub n_max: usize,
    pub q_max: usize,
    pub combo: crate::twomode::TwoModeCombination,
    pub phi: f64,
    pub samples: usize,
    pub window: Option<(f64, f64)>,
    pub rtol: f64,
    pub atol: f64,
}

impl Default for TwoModeSimConfig {
    fn default() -> Self {
        Self {
            n_max: 1,
            q_max: 0,
            combo: crate::twomode::TwoModeCombination::fock(1, 0),
            phi: 0.0,
            samples: 400,
            window: None,
            rtol: 1e-8,
            atol: 1e-10,
        }
    }
}

/// Run a two-mode simulation with packets xi (mode one) and eta (mode two).
pub fn run_two_mode(
    slh: &crate::operators::MultiModeSLH,
    xi: &WavePacket,
    eta: &WavePacket,
    rho_sys: &Operator,
    projector: &Operator,
    cfg: &TwoModeSimConfig,
) -> Result<TwoModeRecord, Error> {
    use crate::twomode::{
        assemble_total_twomode, combine_twomode, initial_state_twomode, TwoModeSystem,
    };
    cfg.combo.validate()?;
    let (cn, cq) = cfg.combo.max_levels();
    if cn > cfg.n_max || cq > cfg.q_max {
        return Err(Error::LevelOutOfRange {
            m: cn,
            n: cq,
            n_max: cfg.n_max.min(cfg.q_max),
        });
    }
    let system = TwoModeSystem::new(slh, xi.clone(), eta.clone(), cfg.n_max, cfg.q_max, true, cfg.phi)?;
    let gamma: f64 = slh
        .l
        .iter()
        .map(|l| l.adjoint().matmul(l).trace().re)
        .sum();
    let (t0, t1) = cfg.window.unwrap_or_else(|| {
        let (a0, a1) = default_window(xi, gamma);
        if cfg.q_max > 0 {
            let (b0, b1) = default_window(eta, gamma);
            (a0.min(b0), a1.max(b1))
        } else {
            (a0, a1)
        }
    });
    if !(t1 > t0) {
        return Err(Error::InvalidConfig(format!(
            "empty time window [{t0}, {t1}]"
        )));
    }

    let state0 = initial_state_twomode(rho_sys, cfg.n_max, cfg.q_max)?;
    let mut y0 = Vec::new();
    system.flatten(&state0, &mut y0);
    let int_cfg = IntegratorConfig {
        rtol: cfg.rtol,
        atol: cfg.atol,
        t_start: t0,
        t_end: t1,
        sample_points: cfg.samples,
        ..IntegratorConfig::default()
    };

    let mut record = TwoModeRecord {
        times: Vec::new(),
        pe: Vec::new(),
        flux1: Vec::new(),
        flux2: Vec::new(),
        quad1: Vec::new(),
        quad2: Vec::new(),
        trace: Vec::new(),
    };
    let mut observe_err: Option<Error> = None;
    integrate(&system, &y0, &int_cfg, &mut |t: f64, y: &[f64]| {
        if observe_err.is_some() {
            return;
        }
        let state = system.unflatten(t, y);
        match assemble_total_twomode(&state, &cfg.combo) {
            Ok(total) => {
                record.times.push(t);
                record.pe.push(excitation_probability(&total, projector));
                record.trace.push(total.trace().re);
                let acc = system.outputs(y);
                record.flux1.push(combine_twomode(&acc, &cfg.combo, 0));
                record.flux2.push(combine_twomode(&acc, &cfg.combo, 1));
                record.quad1.push(combine_twomode(&acc, &cfg.combo, 2));
                record.quad2.push(combine_twomode(&acc, &cfg.combo, 3));
            }
            Err(e) => observe_err = Some(e),
        }
    })?;
    if let Some(e) = observe_err {
        return Err(e);
    }
    Ok(record)
}

/// Run an N-packet (occupation-number) simulation.  Output flux and
/// quadrature extend the single-mode expressions term by term over the
/// packet basis and are cross-validated against the time-bin oracle.
pub fn run_npacket(
    slh: &SLHTriple,
    spec: &crate::npacket::NPhotonSpec,
    rho_sys: &Operator,
    projector: &Operator,
    samples: usize,
    window: Option<(f64, f64)>,
    rtol: f64,
) -> Result<TimeSeriesRecord, Error> {
    use crate::npacket::{
        assemble_total_npacket, combine_npacket_outputs, initial_state_npacket, NPacketSystem,
    };
    let system = NPacketSystem::new(slh, spec.clone(), true, 0.0);
    let gamma = coupling_scale(slh);
    let (t0, t1) = window.unwrap_or_else(|| {
        let (lo, hi) = system.support();
        (lo, hi + if gamma > 0.0 { 12.0 / gamma } else { 0.0 })
    });
    let state0 = initial_state_npacket(rho_sys, spec)?;
    let mut y0 = Vec::new();
    system.flatten(&state0, &mut y0);
    let int_cfg = IntegratorConfig {
        rtol,
        atol: rtol * 1e-2,
        t_start: t0,
        t_end: t1,
        sample_points: samples,
        ..IntegratorConfig::default()
    };
    let mut record = TimeSeriesRecord {
        times: Vec::new(),
        pe: Vec::new(),
        flux_rate: Vec::new(),
        flux_integrated: Vec::new(),
        quad: Vec::new(),
        trace: Vec::new(),
    };
    integrate(&system, &y0, &int_cfg, &mut |t: f64, y: &[f64]| {
        let state = system.unflatten(t, y);
        let total = assemble_total_npacket(&state, spec);
        record.times.push(t);
        record.pe.push(excitation_probability(&total, projector));
        record.trace.push(total.trace().re);
        let acc = system.outputs(y);
        record
            .flux_integrated
            .push(combine_npacket_outputs(&acc, spec, 0));
        record.quad.push(combine_npacket_outputs(&acc, spec, 1));
        record.flux_rate.push(0.0);
    })?;
    Ok(record)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn window_covers_packet_and_tail() {
        let packet = WavePacket::gaussian(2.0, 5.0);
        let (lo, hi) = default_window(&packet, 1.0);
        assert_abs_diff_eq!(lo, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(hi, 17.0, epsilon = 1e-12); // tail 12/Gamma wins
        // fast decay: support end wins
        let (_, hi) = default_window(&packet, 100.0);
        assert_abs_diff_eq!(hi, 9.0, epsilon = 1e-12);
    }

    #[test]
    fn vacuum_input_leaves_ground_state_alone() {
        let slh = SLHTriple::two_level_decay(1.0);
        let packet = WavePacket::gaussian(1.0, 0.0);
        let cfg = SimConfig {
            n_max: 0,
            combo: FieldCombination::fock(0),
            samples: 50,
            ..SimConfig::default()
        };
        let rec = run_single_mode(
            &slh,
            &packet,
            &Operator::ketbra(2, 0, 0),
            &Operator::excited_projector(),
            &cfg,
        )
        .unwrap();
        assert!(rec.max_pe() < 1e-12);
        assert!(rec.final_flux().abs() < 1e-10);
        for &tr in &rec.trace {
            assert_abs_diff_eq!(tr, 1.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn excited_atom_decays_into_output_flux() {
        // |e> with vacuum input: P_e(t) = e^{-Gamma t}, integrated flux -> 1.
        let gamma = 1.0;
        let slh = SLHTriple::two_level_decay(gamma);
        let packet = WavePacket::gaussian(1.0, 0.0);
        let cfg = SimConfig {
            n_max: 0,
            combo: FieldCombination::fock(0),
            samples: 200,
            window: Some((0.0, 15.0)),
            ..SimConfig::default()
        };
        let rec = run_single_mode(
            &slh,
            &packet,
            &Operator::ketbra(2, 1, 1),
            &Operator::excited_projector(),
            &cfg,
        )
        .unwrap();
        for (&t, &pe) in rec.times.iter().zip(&rec.pe) {
            assert_abs_diff_eq!(pe, (-gamma * t).exp(), epsilon = 1e-7);
        }
        assert_abs_diff_eq!(rec.final_flux(), 1.0, epsilon = 1e-6);
    }

    #[test]
    fn rejects_combination_beyond_truncation() {
        let slh = SLHTriple::two_level_decay(1.0);
        let packet = WavePacket::gaussian(1.0, 0.0);
        let cfg = SimConfig {
            n_max: 1,
            combo: FieldCombination::fock(2),
            ..SimConfig::default()
        };
        assert!(run_single_mode(
            &slh,
            &packet,
            &Operator::ketbra(2, 0, 0),
            &Operator::excited_projector(),
            &cfg,
        )
        .is_err());
    }
}
