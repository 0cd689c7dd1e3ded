//! Square-normalized temporal envelopes xi(t) and orthonormal basis sets
//! for N-photon spectral decompositions.
//!
//! The Gaussian is parameterized so that the variance of |xi(t)|^2 is
//! 1/Omega^2:
//!
//!   xi(t) = (Omega^2 / 2 pi)^(1/4) exp(-Omega^2 (t - t_a)^2 / 4)
//!
//! A detuning Delta is applied as a phase e^{-i Delta t}; it leaves |xi|
//! unchanged.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::Error;

/// Width of the Gaussian support window in units of 1/Omega.  |xi|^2 mass
/// outside t_a +/- 8/Omega is below 1e-14.
pub const GAUSSIAN_SUPPORT_WIDTHS: f64 = 8.0;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PacketShape {
    Gaussian {
        /// Frequency bandwidth Omega (rate units).
        omega: f64,
        /// Arrival time of the peak.
        t_a: f64,
    },
    Rectangular {
        t0: f64,
        t_max: f64,
    },
    Sampled {
        t0: f64,
        dt: f64,
        values: Vec<Complex64>,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WavePacket {
    pub shape: PacketShape,
    /// Detuning Delta from the system frequency, applied as e^{-i Delta t}.
    #[serde(default)]
    pub detuning: f64,
}

impl WavePacket {
    pub fn gaussian(omega: f64, t_a: f64) -> Self {
        Self {
            shape: PacketShape::Gaussian { omega, t_a },
            detuning: 0.0,
        }
    }

    pub fn rectangular(t0: f64, t_max: f64) -> Self {
        Self {
            shape: PacketShape::Rectangular { t0, t_max },
            detuning: 0.0,
        }
    }

    pub fn sampled(t0: f64, dt: f64, values: Vec<Complex64>) -> Self {
        Self {
            shape: PacketShape::Sampled { t0, dt, values },
            detuning: 0.0,
        }
    }

    pub fn with_detuning(mut self, delta: f64) -> Self {
        self.detuning = delta;
        self
    }

    /// Load a sampled packet from two-column (time, re[, im]) CSV text.
    /// The grid must be uniform.
    pub fn from_csv(text: &str) -> Result<Self, Error> {
        let mut times = Vec::new();
        let mut values = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = line.split(',').map(str::trim).collect();
            if cols.len() < 2 || cols.len() > 3 {
                return Err(Error::InvalidWavePacket(format!(
                    "line {}: expected 2 or 3 columns, got {}",
                    lineno + 1,
                    cols.len()
                )));
            }
            let parse = |s: &str| -> Result<f64, Error> {
                s.parse()
                    .map_err(|_| Error::InvalidWavePacket(format!("line {}: bad number {s:?}", lineno + 1)))
            };
            times.push(parse(cols[0])?);
            let re = parse(cols[1])?;
            let im = if cols.len() == 3 { parse(cols[2])? } else { 0.0 };
            values.push(Complex64::new(re, im));
        }
        if times.len() < 2 {
            return Err(Error::InvalidWavePacket("need at least 2 samples".into()));
        }
        let dt = times[1] - times[0];
        for w in times.windows(2) {
            if ((w[1] - w[0]) - dt).abs() > 1e-9 * dt.abs().max(1.0) {
                return Err(Error::InvalidWavePacket("time grid is not uniform".into()));
            }
        }
        Ok(Self::sampled(times[0], dt, values))
    }

    /// Compact support [t_lo, t_hi] outside which the envelope is treated as 0.
    pub fn support(&self) -> (f64, f64) {
        match &self.shape {
            PacketShape::Gaussian { omega, t_a } => (
                t_a - GAUSSIAN_SUPPORT_WIDTHS / omega,
                t_a + GAUSSIAN_SUPPORT_WIDTHS / omega,
            ),
            PacketShape::Rectangular { t0, t_max } => (*t0, t0 + t_max),
            PacketShape::Sampled { t0, dt, values } => (*t0, t0 + dt * (values.len() - 1) as f64),
        }
    }

    /// Envelope amplitude without the detuning phase.
    fn envelope(&self, t: f64) -> Complex64 {
        match &self.shape {
            PacketShape::Gaussian { omega, t_a } => {
                let u = t - t_a;
                if u.abs() > GAUSSIAN_SUPPORT_WIDTHS / omega {
                    return Complex64::new(0.0, 0.0);
                }
                let amp = (omega * omega / (2.0 * std::f64::consts::PI)).powf(0.25)
                    * (-omega * omega * u * u / 4.0).exp();
                Complex64::new(amp, 0.0)
            }
            PacketShape::Rectangular { t0, t_max } => {
                if t >= *t0 && t <= t0 + t_max {
                    Complex64::new(1.0 / t_max.sqrt(), 0.0)
                } else {
                    Complex64::new(0.0, 0.0)
                }
            }
            PacketShape::Sampled { t0, dt, values } => {
                // Linear interpolation; zero outside the grid.
                let x = (t - t0) / dt;
                if x < 0.0 || x > (values.len() - 1) as f64 {
                    return Complex64::new(0.0, 0.0);
                }
                let i = (x.floor() as usize).min(values.len() - 2);
                let frac = x - i as f64;
                values[i] * (1.0 - frac) + values[i + 1] * frac
            }
        }
    }

    /// xi(t) e^{-i Delta t}.
    pub fn eval(&self, t: f64) -> Complex64 {
        let env = self.envelope(t);
        if self.detuning == 0.0 || (env.re == 0.0 && env.im == 0.0) {
            env
        } else {
            env * Complex64::from_polar(1.0, -self.detuning * t)
        }
    }

    /// Integral of |xi(t)|^2 over the packet's support, by composite Simpson.
    pub fn norm_check(&self) -> f64 {
        let (lo, hi) = self.support();
        let n = self.quadrature_points();
        simpson(lo, hi, n, |t| self.eval(t).norm_sqr())
    }

    fn quadrature_points(&self) -> usize {
        match &self.shape {
            PacketShape::Sampled { values, .. } => (values.len() * 4).max(400),
            _ => 4000,
        }
    }
}

/// Composite Simpson's rule with n (even) intervals.
pub fn simpson(lo: f64, hi: f64, n: usize, f: impl Fn(f64) -> f64) -> f64 {
    let n = if n % 2 == 0 { n } else { n + 1 };
    let h = (hi - lo) / n as f64;
    let mut acc = f(lo) + f(hi);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(lo + i as f64 * h);
    }
    acc * h / 3.0
}

/// Complex-valued composite Simpson.
pub fn simpson_complex(lo: f64, hi: f64, n: usize, f: impl Fn(f64) -> Complex64) -> Complex64 {
    let n = if n % 2 == 0 { n } else { n + 1 };
    let h = (hi - lo) / n as f64;
    let mut acc = f(lo) + f(hi);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += f(lo + i as f64 * h) * w;
    }
    acc * (h / 3.0)
}

/// Overlap integral of two packets over the union of their supports.
pub fn overlap(a: &WavePacket, b: &WavePacket) -> Complex64 {
    let (alo, ahi) = a.support();
    let (blo, bhi) = b.support();
    let lo = alo.min(blo);
    let hi = ahi.max(bhi);
    simpson_complex(lo, hi, 8000, |t| a.eval(t).conj() * b.eval(t))
}

/// An ordered set of packets intended to be pairwise orthonormal.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BasisSet {
    pub packets: Vec<WavePacket>,
}

pub const BASIS_ORTHONORMALITY_TOL: f64 = 1e-8;

impl BasisSet {
    /// Construct and validate pairwise orthonormality.
    pub fn new(packets: Vec<WavePacket>) -> Result<Self, Error> {
        let set = Self::from_packets_unchecked(packets);
        if set.packets.is_empty() {
            return Err(Error::InvalidWavePacket("empty basis set".into()));
        }
        let gram = set.gram_matrix();
        let k = set.packets.len();
        for i in 0..k {
            for j in 0..k {
                let expect = if i == j { 1.0 } else { 0.0 };
                if (gram[i * k + j] - expect).norm() > BASIS_ORTHONORMALITY_TOL {
                    return Err(Error::InvalidWavePacket(format!(
                        "basis not orthonormal: |<xi_{i}|xi_{j}> - {expect}| > {BASIS_ORTHONORMALITY_TOL}"
                    )));
                }
            }
        }
        Ok(set)
    }

    /// Skip the orthonormality check (for diagnostics on invalid sets).
    pub fn from_packets_unchecked(packets: Vec<WavePacket>) -> Self {
        Self { packets }
    }

    pub fn len(&self) -> usize {
        self.packets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.packets.is_empty()
    }

    /// Overlap matrix <xi_i|xi_j>, row-major.
    pub fn gram_matrix(&self) -> Vec<Complex64> {
        let k = self.packets.len();
        let mut out = vec![Complex64::new(0.0, 0.0); k * k];
        for i in 0..k {
            for j in i..k {
                let v = overlap(&self.packets[i], &self.packets[j]);
                out[i * k + j] = v;
                out[j * k + i] = v.conj();
            }
        }
        out
    }
}
