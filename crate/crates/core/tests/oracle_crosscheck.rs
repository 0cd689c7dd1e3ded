//! The time-bin collision model and the coupled hierarchy are two
//! independent routes to the same physics.  They should agree to the
//! Trotter error of the collision model, which is first order in the bin
//! width, so halving the bin width should roughly halve the discrepancy.
//!
//! Hierarchy sample grids are chosen to coincide with bin boundaries so
//! the comparison carries no interpolation error.

use fockflow::npacket::NPhotonSpec;
use fockflow::oracle::reduced_system_state;
use fockflow::{
    run_npacket, run_oracle, run_oracle_two_mode, run_single_mode, run_two_mode,
    FieldCombination, MultiModeSLH, Operator, SLHTriple, SimConfig, TimeBinConfig,
    TwoModeSimConfig, WavePacket,
};
use num_complex::Complex64;

const CHECK_TIMES: [f64; 10] = [-3.0, -2.0, -1.0, -0.5, 0.0, 0.5, 1.0, 2.0, 4.0, 8.0];

/// Worst trace distance between hierarchy and oracle reduced system states
/// at the check times.  Both states are diagonal for Fock inputs, so the
/// trace distance is the P_e difference; full 2x2 states are compared
/// anyway to exercise the partial trace.
fn worst_discrepancy(n: usize, bins: usize) -> f64 {
    let slh = SLHTriple::two_level_decay(1.0);
    let packet = WavePacket::gaussian(1.46, 0.0);
    let ground = Operator::ketbra(2, 0, 0);
    let projector = Operator::excited_projector();
    let cfg = SimConfig {
        n_max: n,
        combo: FieldCombination::fock(n),
        samples: bins + 1,
        rtol: 1e-10,
        atol: 1e-12,
        ..SimConfig::default()
    };
    let rec = run_single_mode(&slh, &packet, &ground, &projector, &cfg).unwrap();
    let (lo, hi) = (rec.times[0], *rec.times.last().unwrap());
    let tb = TimeBinConfig {
        bins,
        t_start: lo,
        t_end: hi,
    };
    let orc = run_oracle(&slh, &packet, n, &tb).unwrap();
    let dt = tb.dt_bin();
    let mut worst = 0.0f64;
    for t in CHECK_TIMES {
        let k = (((t - lo) / dt).round() as usize).min(bins);
        let (pe_h, pe_o) = (rec.pe[k], orc.pe[k]);
        let mut rho_h = Operator::zeros(2);
        rho_h[(0, 0)] = Complex64::new(1.0 - pe_h, 0.0);
        rho_h[(1, 1)] = Complex64::new(pe_h, 0.0);
        let mut rho_o = Operator::zeros(2);
        rho_o[(0, 0)] = Complex64::new(1.0 - pe_o, 0.0);
        rho_o[(1, 1)] = Complex64::new(pe_o, 0.0);
        worst = worst.max(rho_h.trace_distance(&rho_o));
    }
    // final-state sanity: reduced_system_state agrees with the P_e series
    let rho_f = reduced_system_state(&orc.final_state);
    assert!((rho_f[(1, 1)].re - orc.pe.last().unwrap()).abs() < 1e-12);
    worst
}

#[test]
fn hierarchy_matches_oracle_n1() {
    let d = worst_discrepancy(1, 2000);
    assert!(d <= 1e-3, "N=1 discrepancy {d:.2e} exceeds 1e-3");
}

#[test]
fn hierarchy_matches_oracle_n2() {
    let d = worst_discrepancy(2, 2000);
    assert!(d <= 1e-3, "N=2 discrepancy {d:.2e} exceeds 1e-3");
}

#[test]
fn trotter_error_halves_with_bin_width() {
    let coarse = worst_discrepancy(1, 2000);
    let fine = worst_discrepancy(1, 4000);
    let factor = coarse / fine;
    assert!(
        (1.5..=3.0).contains(&factor),
        "convergence factor {factor:.2} outside [1.5, 3] (coarse {coarse:.2e}, fine {fine:.2e})"
    );
}

#[test]
fn npacket_two_packet_state_matches_oracle() {
    // one photon in each of two well-separated packets
    let slh = SLHTriple::two_level_decay(1.0);
    let p1 = WavePacket::gaussian(1.46, 0.0);
    let p2 = WavePacket::gaussian(1.46, 14.0);
    let basis = fockflow::BasisSet::new(vec![p1.clone(), p2.clone()]).unwrap();
    let mut amps = std::collections::BTreeMap::new();
    amps.insert(vec![1usize, 1usize], Complex64::new(1.0, 0.0));
    let spec = NPhotonSpec::new(basis, amps).unwrap();
    let ground = Operator::ketbra(2, 0, 0);
    let projector = Operator::excited_projector();
    let bins = 4000usize;
    let rec = run_npacket(&slh, &spec, &ground, &projector, bins + 1, None, 1e-9).unwrap();
    let (lo, hi) = (rec.times[0], *rec.times.last().unwrap());
    let tb = TimeBinConfig {
        bins,
        t_start: lo,
        t_end: hi,
    };
    let f1 = fockflow::oracle::bin_amplitudes(&p1, &tb);
    let f2 = fockflow::oracle::bin_amplitudes(&p2, &tb);
    let mut state = fockflow::oracle::build_input_state(&tb, &[f1, f2]).unwrap();
    let mut worst = 0.0f64;
    for k in 0..bins {
        fockflow::oracle::step_collision(&mut state, k, bins, tb.dt_bin());
        worst = worst.max((state.excited_population() - rec.pe[k + 1]).abs());
    }
    assert!(worst <= 2e-3, "n-packet vs oracle discrepancy {worst:.2e}");
}

#[test]
fn two_mode_scattering_matches_oracle() {
    let slh = MultiModeSLH::waveguide_two_level(0.5, 0.5);
    let packet = WavePacket::gaussian(1.0, 0.0);
    let ground = Operator::ketbra(2, 0, 0);
    let projector = Operator::excited_projector();
    let bins = 1000usize;
    let window = (-8.0, 12.0);
    let cfg = TwoModeSimConfig {
        n_max: 1,
        q_max: 0,
        combo: fockflow::twomode::TwoModeCombination::fock(1, 0),
        phi: 0.0,
        samples: bins + 1,
        window: Some(window),
        rtol: 1e-10,
        atol: 1e-12,
    };
    let rec = run_two_mode(&slh, &packet, &packet, &ground, &projector, &cfg).unwrap();
    let (t_h, r_h) = rec.final_flux();
    let tb = TimeBinConfig {
        bins,
        t_start: window.0,
        t_end: window.1,
    };
    let orc = run_oracle_two_mode(&slh, &packet, &tb).unwrap();
    assert!((orc.transmitted + orc.reflected + orc.pe.last().unwrap() - 1.0).abs() < 1e-10);
    assert!(
        (orc.transmitted - t_h).abs() < 5e-3 && (orc.reflected - r_h).abs() < 5e-3,
        "T/R mismatch: oracle ({:.4}, {:.4}) vs hierarchy ({t_h:.4}, {r_h:.4})",
        orc.transmitted,
        orc.reflected
    );
    let mut worst = 0.0f64;
    for k in 0..=bins {
        worst = worst.max((rec.pe[k] - orc.pe[k]).abs());
    }
    assert!(worst <= 5e-3, "two-mode P_e discrepancy {worst:.2e}");
}
