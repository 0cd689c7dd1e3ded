//! Time-stepping engine for the flattened hierarchy + output-accumulator
//! ODE system.
//!
//! Default method is adaptive Runge-Kutta 4(5) with the Dormand-Prince
//! coefficients; a fixed-step classic RK4 is available for convergence
//! studies.  Observables are sampled at `sample_points` uniformly spaced
//! times; the stepper lands on each sample time exactly (no dense output).

use serde::{Deserialize, Serialize};

use crate::error::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Rk4Fixed,
    Rk45Adaptive,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IntegratorConfig {
    pub method: Method,
    pub rtol: f64,
    pub atol: f64,
    pub dt_init: f64,
    pub dt_max: f64,
    pub dt_min: f64,
    pub t_start: f64,
    pub t_end: f64,
    pub sample_points: usize,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            method: Method::Rk45Adaptive,
            rtol: 1e-8,
            atol: 1e-10,
            dt_init: 1e-3,
            dt_max: 0.05,
            dt_min: 1e-12,
            t_start: 0.0,
            t_end: 1.0,
            sample_points: 400,
        }
    }
}

impl IntegratorConfig {
    pub fn validate(&self) -> Result<(), Error> {
        if !(self.dt_min > 0.0 && self.dt_min <= self.dt_init && self.dt_init <= self.dt_max) {
            return Err(Error::InvalidConfig(
                "require 0 < dt_min <= dt_init <= dt_max".into(),
            ));
        }
        if self.rtol <= 0.0 || self.atol <= 0.0 {
            return Err(Error::InvalidConfig("rtol and atol must be positive".into()));
        }
        if self.t_start >= self.t_end {
            return Err(Error::InvalidConfig("t_start must precede t_end".into()));
        }
        if self.sample_points < 2 {
            return Err(Error::InvalidConfig("need at least 2 sample points".into()));
        }
        Ok(())
    }
}

/// Right-hand side of a real first-order ODE system dy/dt = f(t, y).
pub trait OdeSystem {
    fn dim(&self) -> usize;
    fn rhs(&self, t: f64, y: &[f64], dydt: &mut [f64]);

    /// Optional per-time step cap, used to keep adaptive steps from
    /// overstepping a narrow pulse that arrives after a quiet period.
    fn dt_cap(&self, _t: f64) -> f64 {
        f64::INFINITY
    }
}

// Dormand-Prince 5(4) tableau.
const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
const B5: [f64; 7] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
    0.0,
];
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

struct Dopri45Workspace {
    k: Vec<Vec<f64>>,
    y_stage: Vec<f64>,
    y5: Vec<f64>,
    y4: Vec<f64>,
}

impl Dopri45Workspace {
    fn new(n: usize) -> Self {
        Self {
            k: (0..7).map(|_| vec![0.0; n]).collect(),
            y_stage: vec![0.0; n],
            y5: vec![0.0; n],
            y4: vec![0.0; n],
        }
    }
}

/// One Dormand-Prince step from (t, y) with step dt.
/// Returns the scaled error norm; `ws.y5` holds the 5th-order solution.
fn dopri45_step(
    system: &impl OdeSystem,
    t: f64,
    y: &[f64],
    dt: f64,
    rtol: f64,
    atol: f64,
    ws: &mut Dopri45Workspace,
) -> f64 {
    let n = y.len();
    for s in 0..7 {
        for i in 0..n {
            let mut acc = 0.0;
            for (j, a) in A[s][..s.min(6)].iter().enumerate() {
                acc += a * ws.k[j][i];
            }
            ws.y_stage[i] = y[i] + dt * acc;
        }
        if s == 0 {
            system.rhs(t, y, &mut ws.k[0]);
        } else {
            let (head, tail) = ws.k.split_at_mut(s);
            let _ = head;
            system.rhs(t + C[s] * dt, &ws.y_stage, &mut tail[0]);
        }
    }
    let mut err_sq = 0.0;
    for i in 0..n {
        let mut acc5 = 0.0;
        let mut acc4 = 0.0;
        for s in 0..7 {
            acc5 += B5[s] * ws.k[s][i];
            acc4 += B4[s] * ws.k[s][i];
        }
        ws.y5[i] = y[i] + dt * acc5;
        ws.y4[i] = y[i] + dt * acc4;
        let scale = atol + rtol * y[i].abs().max(ws.y5[i].abs());
        let e = (ws.y5[i] - ws.y4[i]) / scale;
        err_sq += e * e;
    }
    (err_sq / n as f64).sqrt()
}

fn rk4_step(system: &impl OdeSystem, t: f64, y: &mut [f64], dt: f64, ws: &mut Dopri45Workspace) {
    let n = y.len();
    system.rhs(t, y, &mut ws.k[0]);
    for i in 0..n {
        ws.y_stage[i] = y[i] + 0.5 * dt * ws.k[0][i];
    }
    {
        let (head, tail) = ws.k.split_at_mut(1);
        let _ = head;
        system.rhs(t + 0.5 * dt, &ws.y_stage, &mut tail[0]);
    }
    for i in 0..n {
        ws.y_stage[i] = y[i] + 0.5 * dt * ws.k[1][i];
    }
    {
        let (head, tail) = ws.k.split_at_mut(2);
        let _ = head;
        system.rhs(t + 0.5 * dt, &ws.y_stage, &mut tail[0]);
    }
    for i in 0..n {
        ws.y_stage[i] = y[i] + dt * ws.k[2][i];
    }
    {
        let (head, tail) = ws.k.split_at_mut(3);
        let _ = head;
        system.rhs(t + dt, &ws.y_stage, &mut tail[0]);
    }
    for i in 0..n {
        y[i] += dt / 6.0 * (ws.k[0][i] + 2.0 * ws.k[1][i] + 2.0 * ws.k[2][i] + ws.k[3][i]);
    }
}

/// Integrate `system` over the config window, invoking `observer` at each of
/// the `sample_points` uniformly spaced sample times (including both ends).
pub fn integrate(
    system: &impl OdeSystem,
    y0: &[f64],
    cfg: &IntegratorConfig,
    mut observer: impl FnMut(f64, &[f64]),
) -> Result<Vec<f64>, Error> {
    cfg.validate()?;
    if y0.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteState { t: cfg.t_start });
    }
    let n = y0.len();
    assert_eq!(n, system.dim());
    let mut y = y0.to_vec();
    let mut t = cfg.t_start;
    let mut ws = Dopri45Workspace::new(n);

    let span = cfg.t_end - cfg.t_start;
    let sample_dt = span / (cfg.sample_points - 1) as f64;
    observer(t, &y);

    let mut dt = cfg.dt_init;
    for sample in 1..cfg.sample_points {
        let t_target = cfg.t_start + sample as f64 * sample_dt;
        while t < t_target - 1e-12 * span {
            let cap = cfg.dt_max.min(system.dt_cap(t)).min(t_target - t);
            match cfg.method {
                Method::Rk4Fixed => {
                    let step = dt.min(cap);
                    rk4_step(system, t, &mut y, step, &mut ws);
                    t += step;
                }
                Method::Rk45Adaptive => {
                    let mut step = dt.min(cap);
                    loop {
                        let err = dopri45_step(system, t, &y, step, cfg.rtol, cfg.atol, &mut ws);
                        if !err.is_finite() {
                            return Err(Error::NonFiniteState { t });
                        }
                        if err <= 1.0 {
                            t += step;
                            y.copy_from_slice(&ws.y5);
                            // grow for the next step
                            let factor = if err == 0.0 {
                                5.0
                            } else {
                                (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
                            };
                            dt = (step * factor).min(cfg.dt_max);
                            break;
                        }
                        let factor = (0.9 * err.powf(-0.2)).clamp(0.2, 1.0);
                        step *= factor;
                        if step < cfg.dt_min {
                            return Err(Error::StepUnderflow {
                                t,
                                dt: step,
                                dt_min: cfg.dt_min,
                            });
                        }
                    }
                }
            }
            if y.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteState { t });
            }
        }
        t = t_target;
        observer(t, &y);
    }
    Ok(y)
}
