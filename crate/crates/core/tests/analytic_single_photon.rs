//! Closed-form cross-check: a two-level atom (L = sqrt(Gamma) sigma_-,
//! H = 0, S = I) driven by a single-photon packet xi(t) has
//!     P_e(t) = Gamma | int_{-inf}^t xi(t') e^{-Gamma (t - t')/2} dt' |^2,
//! the squared response of a first-order filter to the packet envelope.

use fockflow::wavepacket::simpson_complex;
use fockflow::{run_single_mode, FieldCombination, Operator, SLHTriple, SimConfig, WavePacket};
use num_complex::Complex64;

fn analytic_pe(packet: &WavePacket, gamma: f64, t: f64) -> f64 {
    let (lo, hi) = packet.support();
    if t <= lo {
        return 0.0;
    }
    // clip to the support so the quadrature never straddles the envelope's
    // edges; e^{-Gamma (t - t')/2} keeps the integrand bounded by |xi|
    let amp = simpson_complex(lo, t.min(hi), 2000, |tp| {
        packet.eval(tp) * Complex64::new((-gamma * (t - tp) / 2.0).exp(), 0.0)
    });
    gamma * amp.norm_sqr()
}

#[test]
fn single_photon_gaussian_matches_closed_form_across_bandwidths() {
    let gamma = 1.0;
    let slh = SLHTriple::two_level_decay(gamma);
    let ground = Operator::ketbra(2, 0, 0);
    let projector = Operator::excited_projector();
    for omega in [0.5, 1.0, 1.46, 3.0, 5.0] {
        let packet = WavePacket::gaussian(omega, 0.0);
        let cfg = SimConfig {
            n_max: 1,
            combo: FieldCombination::fock(1),
            samples: 400,
            rtol: 1e-10,
            atol: 1e-12,
            ..SimConfig::default()
        };
        let rec = run_single_mode(&slh, &packet, &ground, &projector, &cfg).unwrap();
        let mut sup = 0.0f64;
        for (&t, &pe) in rec.times.iter().zip(&rec.pe) {
            sup = sup.max((pe - analytic_pe(&packet, gamma, t)).abs());
        }
        assert!(
            sup <= 1e-4,
            "sup-norm {sup:.2e} exceeds 1e-4 at bandwidth {omega}"
        );
    }
}

#[test]
fn single_photon_rectangular_matches_closed_form() {
    let gamma = 1.0;
    let slh = SLHTriple::two_level_decay(gamma);
    let ground = Operator::ketbra(2, 0, 0);
    let projector = Operator::excited_projector();
    let packet = WavePacket::rectangular(0.0, 3.0);
    let cfg = SimConfig {
        n_max: 1,
        combo: FieldCombination::fock(1),
        samples: 400,
        rtol: 1e-10,
        atol: 1e-12,
        ..SimConfig::default()
    };
    let rec = run_single_mode(&slh, &packet, &ground, &projector, &cfg).unwrap();
    let mut sup = 0.0f64;
    for (&t, &pe) in rec.times.iter().zip(&rec.pe) {
        sup = sup.max((pe - analytic_pe(&packet, gamma, t)).abs());
    }
    assert!(sup <= 1e-4, "sup-norm {sup:.2e} exceeds 1e-4");
}
