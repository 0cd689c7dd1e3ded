//! Relabeling the two modes (swap packets, couplings, and the field
//! state) must swap the per-mode outputs and leave system observables
//! untouched.

use fockflow::twomode::TwoModeCombination;
use fockflow::{run_two_mode, MultiModeSLH, Operator, TwoModeSimConfig, WavePacket};

#[test]
fn mode_swap_symmetry() {
    let xi = WavePacket::gaussian(1.2, 0.0);
    let eta = WavePacket::gaussian(2.0, 1.0);
    let ground = Operator::ketbra(2, 0, 0);
    let projector = Operator::excited_projector();
    let window = Some((-8.0, 14.0));
    let cfg = |combo| TwoModeSimConfig {
        n_max: 1,
        q_max: 1,
        combo,
        phi: 0.3,
        samples: 300,
        window,
        rtol: 1e-10,
        atol: 1e-12,
    };
    let fwd = run_two_mode(
        &MultiModeSLH::waveguide_two_level(0.7, 0.3),
        &xi,
        &eta,
        &ground,
        &projector,
        &cfg(TwoModeCombination::fock(1, 1)),
    )
    .unwrap();
    let swp = run_two_mode(
        &MultiModeSLH::waveguide_two_level(0.3, 0.7),
        &eta,
        &xi,
        &ground,
        &projector,
        &cfg(TwoModeCombination::fock(1, 1)),
    )
    .unwrap();
    for k in 0..fwd.times.len() {
        assert!((fwd.pe[k] - swp.pe[k]).abs() < 1e-10, "P_e differs at {k}");
        assert!((fwd.flux1[k] - swp.flux2[k]).abs() < 1e-10);
        assert!((fwd.flux2[k] - swp.flux1[k]).abs() < 1e-10);
        assert!((fwd.quad1[k] - swp.quad2[k]).abs() < 1e-10);
        assert!((fwd.quad2[k] - swp.quad1[k]).abs() < 1e-10);
    }
}
