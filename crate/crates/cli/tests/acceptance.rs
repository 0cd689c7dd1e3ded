//! End-to-end acceptance suite.  Each numbered criterion prints exactly
//! one PASS/FAIL line; the test fails if any criterion fails.

use std::collections::BTreeMap;
use std::time::Instant;

use fockflow::hierarchy::{
    hierarchy_rhs, initial_state, level_index, level_pairs, FieldCombination,
};
use fockflow::npacket::{initial_state_npacket, npacket_hierarchy_rhs, NPhotonSpec};
use fockflow::operators::lindblad_dissipator;
use fockflow::twomode::TwoModeLabels;
use fockflow::wavepacket::simpson_complex;
use fockflow::{run_single_mode, Operator, SLHTriple, SimConfig, WavePacket};
use fockflow_cli::experiments::{
    excite_point, fit_scaling, oracle_check, run_rabi_rect, run_scatter_sweep,
};
use num_complex::Complex64;

fn ground() -> Operator {
    Operator::ketbra(2, 0, 0)
}

fn check(results: &mut Vec<(usize, Result<String, String>)>, id: usize, r: Result<String, String>) {
    match &r {
        Ok(msg) => println!("PASS criterion {id}: {msg}"),
        Err(msg) => println!("FAIL criterion {id}: {msg}"),
    }
    results.push((id, r));
}

#[test]
fn acceptance_criteria() {
    let mut results = Vec::new();
    check(&mut results, 1, criterion_1());
    check(&mut results, 2, criterion_2());
    check(&mut results, 3, criterion_3());
    check(&mut results, 4, criterion_4());
    check(&mut results, 5, criterion_5());
    check(&mut results, 6, criterion_6());
    check(&mut results, 7, criterion_7());
    check(&mut results, 8, criterion_8());
    check(&mut results, 9, criterion_9());
    let failures: Vec<usize> = results
        .iter()
        .filter(|(_, r)| r.is_err())
        .map(|(id, _)| *id)
        .collect();
    assert!(failures.is_empty(), "failed criteria: {failures:?}");
}

/// Golden excitation numbers at Omega/Gamma = 1.46.
fn criterion_1() -> Result<String, String> {
    let mut parts = Vec::new();
    for (n, expect) in [(1usize, 0.801), (2, 0.805)] {
        let start = Instant::now();
        let (pe_max, _) = excite_point(1.0, 1.46, n).map_err(|e| e.to_string())?;
        let elapsed = start.elapsed();
        if (pe_max - expect).abs() > 0.005 {
            return Err(format!("N={n}: pe_max {pe_max:.4} not within 0.005 of {expect}"));
        }
        if elapsed.as_secs_f64() > 1.0 {
            return Err(format!("N={n}: runtime {elapsed:?} exceeds 1 s"));
        }
        parts.push(format!("N={n} pe_max {pe_max:.4} in {elapsed:?}"));
    }
    Ok(parts.join(", "))
}

/// Single-photon hierarchy vs the closed-form response of the atom.
fn criterion_2() -> Result<String, String> {
    let gamma = 1.0;
    let slh = SLHTriple::two_level_decay(gamma);
    let mut worst = 0.0f64;
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
        let rec = run_single_mode(&slh, &packet, &ground(), &Operator::excited_projector(), &cfg)
            .map_err(|e| e.to_string())?;
        let (lo, hi) = packet.support();
        for (&t, &pe) in rec.times.iter().zip(&rec.pe) {
            let analytic = if t <= lo {
                0.0
            } else {
                let amp = simpson_complex(lo, t.min(hi), 2000, |tp| {
                    packet.eval(tp) * Complex64::new((-gamma * (t - tp) / 2.0).exp(), 0.0)
                });
                gamma * amp.norm_sqr()
            };
            worst = worst.max((pe - analytic).abs());
        }
    }
    if worst <= 1e-4 {
        Ok(format!("sup-norm {worst:.2e} over 5 bandwidths"))
    } else {
        Err(format!("sup-norm {worst:.2e} exceeds 1e-4"))
    }
}

/// Integrated-flux endpoints count the photons put in.
fn criterion_3() -> Result<String, String> {
    let slh = SLHTriple::two_level_decay(1.0);
    let packet = WavePacket::gaussian(1.46, 0.0);
    let inv = Complex64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
    let cases: [(FieldCombination, usize, f64); 3] = [
        (FieldCombination::fock(1), 1, 1.0),
        (FieldCombination::superposition(&[(1, inv), (2, inv)]), 2, 1.5),
        (FieldCombination::fock(2), 2, 2.0),
    ];
    let mut parts = Vec::new();
    for (combo, n_max, expect) in cases {
        let cfg = SimConfig {
            n_max,
            combo,
            samples: 400,
            rtol: 1e-9,
            atol: 1e-11,
            ..SimConfig::default()
        };
        let rec = run_single_mode(&slh, &packet, &ground(), &Operator::excited_projector(), &cfg)
            .map_err(|e| e.to_string())?;
        let endpoint = rec.final_flux();
        if (endpoint - expect).abs() > 0.01 {
            return Err(format!("flux endpoint {endpoint:.4} not within 0.01 of {expect}"));
        }
        parts.push(format!("{endpoint:.4}~{expect}"));
    }
    Ok(format!("endpoints {}", parts.join(", ")))
}

/// Power-law scaling of the optimized excitation probability.
fn criterion_4() -> Result<String, String> {
    let start = Instant::now();
    let result = fit_scaling(1.0, 10, 40).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    if elapsed.as_secs_f64() > 1800.0 {
        return Err(format!("runtime {elapsed:?} exceeds 30 min"));
    }
    let (pa, pb) = (result.pe_fit.a, result.pe_fit.b);
    let (oa, ob) = (result.omega_fit.a, result.omega_fit.b);
    if (pa - 0.269).abs() > 0.02 || (pb - 0.973).abs() > 0.02 {
        return Err(format!("P_e fit (a,b) = ({pa:.4}, {pb:.4}) outside 0.269+-0.02, 0.973+-0.02"));
    }
    if (oa - 1.45).abs() > 0.05 || (ob - 0.987).abs() > 0.01 {
        return Err(format!(
            "Omega fit (a,b) = ({oa:.4}, {ob:.4}) outside 1.45+-0.05, 0.987+-0.01"
        ));
    }
    Ok(format!(
        "P_e fit ({pa:.4}, {pb:.4}), Omega fit ({oa:.4}, {ob:.4}) in {elapsed:?}"
    ))
}

/// Large-bandwidth asymptote P_e^max -> 5 N Gamma / Omega.
fn criterion_5() -> Result<String, String> {
    for omega in [1e3, 1e4, 1e5] {
        for n in [1usize, 5, 10] {
            let (pe_max, _) = excite_point(1.0, omega, n).map_err(|e| e.to_string())?;
            let asymptote = 5.0 * n as f64 / omega;
            let rel = (pe_max - asymptote).abs() / asymptote;
            if rel > 0.10 {
                return Err(format!(
                    "Omega={omega:.0} N={n}: pe_max {pe_max:.3e} deviates {:.1}% from {asymptote:.3e}",
                    rel * 100.0
                ));
            }
        }
    }
    Ok("within 10% of 5 N Gamma/Omega on the 3x3 grid".into())
}

/// Rabi frequency of a short rectangular pulse.
fn criterion_6() -> Result<String, String> {
    let start = Instant::now();
    let outcome = run_rabi_rect(1.0, 50, 0.02).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    if elapsed.as_secs_f64() > 60.0 {
        return Err(format!("runtime {elapsed:?} exceeds 1 min"));
    }
    let freq = outcome
        .frequency
        .ok_or_else(|| "no frequency extracted".to_string())?;
    let rel = (freq - outcome.predicted).abs() / outcome.predicted;
    if rel > 0.05 {
        return Err(format!(
            "frequency {freq:.2} deviates {:.1}% from {:.2}",
            rel * 100.0,
            outcome.predicted
        ));
    }
    Ok(format!(
        "frequency {freq:.2} vs predicted {:.2} ({:.2}% off) in {elapsed:?}",
        outcome.predicted,
        rel * 100.0
    ))
}

/// Two-mode scattering: reflection/transmission limits and the N=5 bump.
fn criterion_7() -> Result<String, String> {
    let rows = run_scatter_sweep(&[0.05, 1.0, 3.0, 10.0, 100.0], &[1]).map_err(|e| e.to_string())?;
    let mut by_omega = BTreeMap::new();
    for r in &rows {
        if (r.transmission + r.reflection - 1.0).abs() > 1e-3 {
            return Err(format!(
                "T+R = {:.5} at Omega={} deviates from 1 by more than 1e-3",
                r.transmission + r.reflection,
                r.omega
            ));
        }
        by_omega.insert((r.omega * 100.0) as i64, r.clone());
    }
    let r_low = by_omega[&5].reflection;
    if r_low <= 0.95 {
        return Err(format!("reflection {r_low:.4} at Omega=0.05 not above 0.95"));
    }
    let t_high = by_omega[&10000].transmission;
    if t_high <= 0.95 {
        return Err(format!("transmission {t_high:.4} at Omega=100 not above 0.95"));
    }
    let bump = run_scatter_sweep(&[3.0], &[5]).map_err(|e| e.to_string())?;
    let t5 = bump[0].transmission;
    if (t5 + bump[0].reflection - 1.0).abs() > 1e-3 {
        return Err(format!("N=5 T+R = {:.5} off unity", t5 + bump[0].reflection));
    }
    let t1 = by_omega[&300].transmission;
    if t5 <= t1 {
        return Err(format!("no bound-state bump: T(N=5) {t5:.4} <= T(N=1) {t1:.4} at Omega=3"));
    }
    Ok(format!(
        "R(0.05) {r_low:.3}, T(100) {t_high:.3}, bump T5 {t5:.3} > T1 {t1:.3}"
    ))
}

/// Collision-model oracle equivalence and first-order convergence.
fn criterion_8() -> Result<String, String> {
    let mut parts = Vec::new();
    for n in [1usize, 2] {
        let outcome = oracle_check(1.0, 1.46, n, 2000).map_err(|e| e.to_string())?;
        if outcome.max_trace_distance > 1e-3 {
            return Err(format!(
                "N={n}: trace distance {:.2e} exceeds 1e-3",
                outcome.max_trace_distance
            ));
        }
        if !(1.5..=3.0).contains(&outcome.convergence_factor) {
            return Err(format!(
                "N={n}: convergence factor {:.2} outside [1.5, 3]",
                outcome.convergence_factor
            ));
        }
        parts.push(format!(
            "N={n} distance {:.1e} factor {:.2}",
            outcome.max_trace_distance, outcome.convergence_factor
        ));
    }
    Ok(parts.join(", "))
}

/// Structural invariants of the equations and their implementations.
fn criterion_9() -> Result<String, String> {
    // trace conservation, off-diagonal traces, adjoint symmetry, positivity
    let slh = SLHTriple::two_level_decay(1.0);
    let packet = WavePacket::gaussian(1.46, 0.0);
    let n_max = 2;
    let combo = FieldCombination::superposition(&[
        (1, Complex64::new(0.6, 0.0)),
        (2, Complex64::new(0.0, 0.8)),
    ]);
    let system = fockflow::FockSystem::new(&slh, packet.clone(), n_max, false, 0.0);
    let state0 = initial_state(&ground(), n_max).map_err(|e| e.to_string())?;
    let mut y0 = Vec::new();
    system.flatten(&state0, &mut y0);
    let int_cfg = fockflow::IntegratorConfig {
        rtol: 1e-10,
        atol: 1e-12,
        t_start: -5.0,
        t_end: 8.0,
        sample_points: 30,
        ..fockflow::IntegratorConfig::default()
    };
    let mut violation: Option<String> = None;
    fockflow::integrate(&system, &y0, &int_cfg, &mut |t: f64, y: &[f64]| {
        if violation.is_some() {
            return;
        }
        let state = system.unflatten(t, y);
        for (m, n) in level_pairs(n_max) {
            let tr = state.matrices[level_index(m, n)].trace();
            if m == n && (tr.re - 1.0).abs() > 1e-8 {
                violation = Some(format!("diagonal trace drift {:.2e}", (tr.re - 1.0).abs()));
            }
            if m != n && tr.norm() > 1e-8 {
                violation = Some(format!("off-diagonal trace {:.2e}", tr.norm()));
            }
            // rho_{n,m} = rho_{m,n}^dag as synthesized by the state
            let diff = state
                .level(n, m)
                .sub(&state.level(m, n).adjoint())
                .max_abs();
            if diff > 1e-9 {
                violation = Some(format!("adjoint symmetry broken by {diff:.2e}"));
            }
        }
        let total = fockflow::assemble_total(&state, &combo).unwrap();
        for ev in total.hermitian_eigenvalues() {
            if ev < -1e-7 {
                violation = Some(format!("negative eigenvalue {ev:.2e}"));
            }
        }
    })
    .map_err(|e| e.to_string())?;
    if let Some(v) = violation {
        return Err(v);
    }

    // Lindblad dissipator: trace annihilation and linearity
    let l = Operator::new(
        3,
        (0..9)
            .map(|k| Complex64::new(0.3 * (k as f64) - 1.0, 0.7 - 0.2 * (k as f64)))
            .collect(),
    )
    .map_err(|e| e.to_string())?;
    let a = Operator::new(
        3,
        (0..9)
            .map(|k| Complex64::new((k as f64).sin(), (k as f64).cos()))
            .collect(),
    )
    .map_err(|e| e.to_string())?;
    let b = Operator::new(
        3,
        (0..9)
            .map(|k| Complex64::new(0.5 - 0.1 * (k as f64), 0.2 * (k as f64)))
            .collect(),
    )
    .map_err(|e| e.to_string())?;
    let da = lindblad_dissipator(&l, &a).map_err(|e| e.to_string())?;
    if da.trace().norm() > 1e-12 {
        return Err(format!("dissipator trace {:.2e}", da.trace().norm()));
    }
    let c = Complex64::new(1.3, -0.4);
    let lin = lindblad_dissipator(&l, &a.scale(c).add(&b)).map_err(|e| e.to_string())?;
    let expect = da.scale(c).add(&lindblad_dissipator(&l, &b).map_err(|e| e.to_string())?);
    if lin.sub(&expect).max_abs() > 1e-12 {
        return Err("dissipator linearity broken".into());
    }

    // SLH constraint checks: non-unitary S and non-Hermitian H rejected
    let bad_s = Operator::new(
        2,
        vec![
            Complex64::new(1.0, 0.0),
            Complex64::new(0.5, 0.0),
            Complex64::new(0.0, 0.0),
            Complex64::new(1.0, 0.0),
        ],
    )
    .map_err(|e| e.to_string())?;
    if SLHTriple::new(bad_s, Operator::zeros(2), Operator::zeros(2)).is_ok() {
        return Err("non-unitary S accepted".into());
    }
    let mut bad_h = Operator::zeros(2);
    bad_h[(0, 1)] = Complex64::new(1.0, 0.0);
    if SLHTriple::new(Operator::identity(2), Operator::zeros(2), bad_h).is_ok() {
        return Err("non-Hermitian H accepted".into());
    }

    // equation counts: (N+1)(N+2)/2 stored single-mode equations and
    // (N+1)(N+2)(Q+1)(Q+2)/4 two-mode equations in the vacuum-mode case
    for n in 0..=8 {
        if fockflow::hierarchy::level_count(n) != (n + 1) * (n + 2) / 2 {
            return Err(format!("single-mode count wrong at N={n}"));
        }
        let q = 0usize;
        if TwoModeLabels::new(n, q).len() != (n + 1) * (n + 2) * (q + 1) * (q + 2) / 4 {
            return Err(format!("two-mode count wrong at N={n}, Q=0"));
        }
    }

    // npacket K=1 degeneration: generators agree to 1e-12
    let spec = NPhotonSpec::single_packet(packet.clone(), 2).map_err(|e| e.to_string())?;
    let mut np = initial_state_npacket(&ground(), &spec).map_err(|e| e.to_string())?;
    let mut sm = initial_state(&ground(), 2).map_err(|e| e.to_string())?;
    for (i, (la, lb)) in np.pairs.clone().iter().enumerate() {
        if la != lb {
            let z = Complex64::new(0.2 * la[0] as f64, 0.1 + 0.3 * lb[0] as f64);
            np.matrices[i][(0, 1)] = z;
            sm.matrices[level_index(la[0], lb[0])][(0, 1)] = z;
        }
    }
    let dn = npacket_hierarchy_rhs(&slh, &spec, &np, 0.15).map_err(|e| e.to_string())?;
    let ds = hierarchy_rhs(&slh, &packet, &sm, 0.15).map_err(|e| e.to_string())?;
    for (m, n) in level_pairs(2) {
        let diff = dn.level(&[m], &[n]).sub(&ds.level(m, n)).max_abs();
        if diff > 1e-12 {
            return Err(format!("npacket degeneration off by {diff:.2e} at ({m},{n})"));
        }
    }

    Ok("trace/adjoint/positivity, dissipator, SLH checks, counts, degeneration all hold".into())
}
