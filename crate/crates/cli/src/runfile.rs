//! Declarative run-file schema (JSON) and its resolution into engine
//! objects.  Unknown keys are schema errors; command-line `--set` overrides
//! are applied to the raw JSON before deserialization so every field stays
//! overridable.

use std::path::PathBuf;

use fockflow::hierarchy::FieldCombination;
use fockflow::npacket::{NPhotonSpec, NPhotonSpecRepr};
use fockflow::twomode::TwoModeCombination;
use fockflow::{MultiModeSLH, Operator, SLHTriple, WavePacket};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    ExciteSweep,
    ScalingFit,
    StrongCouplingMap,
    RabiRect,
    ScatterSweep,
    SingleRun,
    OracleCheck,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "preset", rename_all = "snake_case", deny_unknown_fields)]
pub enum SystemSpec {
    TwoLevelDecay {
        #[serde(default = "one")]
        gamma: f64,
    },
    Waveguide {
        #[serde(default = "half")]
        gamma1: f64,
        #[serde(default = "half")]
        gamma2: f64,
    },
    Explicit {
        s: Operator,
        l: Operator,
        h: Operator,
    },
}

fn one() -> f64 {
    1.0
}
fn half() -> f64 {
    0.5
}

impl Default for SystemSpec {
    fn default() -> Self {
        SystemSpec::TwoLevelDecay { gamma: 1.0 }
    }
}

impl SystemSpec {
    pub fn build_single(&self) -> Result<SLHTriple, CliError> {
        match self {
            SystemSpec::TwoLevelDecay { gamma } => {
                if *gamma <= 0.0 {
                    return Err(CliError::Schema("gamma must be positive".into()));
                }
                Ok(SLHTriple::two_level_decay(*gamma))
            }
            SystemSpec::Explicit { s, l, h } => {
                SLHTriple::new(s.clone(), l.clone(), h.clone()).map_err(CliError::from)
            }
            SystemSpec::Waveguide { .. } => Err(CliError::Schema(
                "waveguide preset requires a two-mode experiment".into(),
            )),
        }
    }

    pub fn build_two_mode(&self) -> Result<MultiModeSLH, CliError> {
        match self {
            SystemSpec::Waveguide { gamma1, gamma2 } => {
                if *gamma1 < 0.0 || *gamma2 < 0.0 {
                    return Err(CliError::Schema("decay rates must be nonnegative".into()));
                }
                Ok(MultiModeSLH::waveguide_two_level(*gamma1, *gamma2))
            }
            _ => Err(CliError::Schema(
                "two-mode experiments require the waveguide preset".into(),
            )),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case", deny_unknown_fields)]
pub enum PacketSpec {
    Gaussian {
        omega: f64,
        #[serde(default)]
        t_a: f64,
        #[serde(default)]
        detuning: f64,
    },
    Rectangular {
        t0: f64,
        t_max: f64,
        #[serde(default)]
        detuning: f64,
    },
    Csv {
        path: PathBuf,
        #[serde(default)]
        detuning: f64,
    },
}

impl PacketSpec {
    pub fn build(&self) -> Result<WavePacket, CliError> {
        let (packet, detuning) = match self {
            PacketSpec::Gaussian {
                omega,
                t_a,
                detuning,
            } => {
                if *omega <= 0.0 {
                    return Err(CliError::Schema("bandwidth must be positive".into()));
                }
                (WavePacket::gaussian(*omega, *t_a), *detuning)
            }
            PacketSpec::Rectangular {
                t0,
                t_max,
                detuning,
            } => (WavePacket::rectangular(*t0, *t_max), *detuning),
            PacketSpec::Csv { path, detuning } => {
                let text = std::fs::read_to_string(path)?;
                (WavePacket::from_csv(&text)?, *detuning)
            }
        };
        Ok(if detuning != 0.0 {
            packet.with_detuning(detuning)
        } else {
            packet
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AmplitudeSpec {
    pub n: usize,
    pub re: f64,
    #[serde(default)]
    pub im: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum FieldSpec {
    Fock { n: usize },
    Superposition { amplitudes: Vec<AmplitudeSpec> },
    Mixture { weights: Vec<(usize, f64)> },
    Npacket { spec: NPhotonSpecRepr },
}

impl FieldSpec {
    pub fn combination(&self) -> Result<FieldCombination, CliError> {
        let combo = match self {
            FieldSpec::Fock { n } => FieldCombination::fock(*n),
            FieldSpec::Superposition { amplitudes } => {
                let amps: Vec<(usize, Complex64)> = amplitudes
                    .iter()
                    .map(|a| (a.n, Complex64::new(a.re, a.im)))
                    .collect();
                FieldCombination::superposition(&amps)
            }
            FieldSpec::Mixture { weights } => FieldCombination::mixture(weights),
            FieldSpec::Npacket { .. } => {
                return Err(CliError::Schema(
                    "npacket field states use the occupation-number path".into(),
                ))
            }
        };
        combo.validate()?;
        Ok(combo)
    }

    pub fn npacket(&self) -> Result<Option<NPhotonSpec>, CliError> {
        match self {
            FieldSpec::Npacket { spec } => Ok(Some(NPhotonSpec::from_repr(spec.clone())?)),
            _ => Ok(None),
        }
    }

    pub fn max_level(&self) -> usize {
        match self {
            FieldSpec::Fock { n } => *n,
            FieldSpec::Superposition { amplitudes } => {
                amplitudes.iter().map(|a| a.n).max().unwrap_or(0)
            }
            FieldSpec::Mixture { weights } => weights.iter().map(|w| w.0).max().unwrap_or(0),
            FieldSpec::Npacket { spec } => spec
                .amplitudes
                .iter()
                .map(|a| a.indices.len())
                .max()
                .unwrap_or(0),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorSpec {
    #[serde(default = "default_rtol")]
    pub rtol: f64,
    #[serde(default = "default_atol")]
    pub atol: f64,
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default)]
    pub window: Option<(f64, f64)>,
}

fn default_rtol() -> f64 {
    1e-8
}
fn default_atol() -> f64 {
    1e-10
}
fn default_samples() -> usize {
    600
}

impl Default for IntegratorSpec {
    fn default() -> Self {
        Self {
            rtol: default_rtol(),
            atol: default_atol(),
            samples: default_samples(),
            window: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub bandwidths: Vec<f64>,
    pub photons: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitSpec {
    pub n_min: usize,
    pub n_max: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RabiSpec {
    pub n: usize,
    pub t_max: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapSpec {
    #[serde(default = "one_photon")]
    pub n: usize,
    #[serde(default = "one")]
    pub tau: f64,
    pub ts: (f64, f64, usize),
}

fn one_photon() -> usize {
    1
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleSpec {
    #[serde(default = "one_photon")]
    pub n: usize,
    #[serde(default = "default_bins")]
    pub bins: usize,
}

fn default_bins() -> usize {
    2000
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunFile {
    pub experiment: Experiment,
    #[serde(default)]
    pub system: SystemSpec,
    #[serde(default)]
    pub packet: Option<PacketSpec>,
    #[serde(default)]
    pub packet2: Option<PacketSpec>,
    #[serde(default)]
    pub field: Option<FieldSpec>,
    #[serde(default)]
    pub integrator: IntegratorSpec,
    #[serde(default)]
    pub phi: f64,
    #[serde(default)]
    pub sweep: Option<SweepSpec>,
    #[serde(default)]
    pub fit: Option<FitSpec>,
    #[serde(default)]
    pub rabi: Option<RabiSpec>,
    #[serde(default)]
    pub map: Option<MapSpec>,
    #[serde(default)]
    pub oracle: Option<OracleSpec>,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

impl RunFile {
    /// Parse JSON text, applying dotted-path overrides first.
    pub fn parse(text: &str, overrides: &[(String, String)]) -> Result<Self, CliError> {
        let mut value: serde_json::Value = serde_json::from_str(text)
            .map_err(|e| CliError::Schema(format!("run file is not valid JSON: {e}")))?;
        for (path, raw) in overrides {
            let new: serde_json::Value = serde_json::from_str(raw)
                .unwrap_or_else(|_| serde_json::Value::String(raw.clone()));
            let segments: Vec<&str> = path.split('.').collect();
            let mut cursor = &mut value;
            for seg in &segments[..segments.len() - 1] {
                let map = cursor.as_object_mut().ok_or_else(|| {
                    CliError::Schema(format!("override path '{path}' does not address an object"))
                })?;
                cursor = map
                    .entry((*seg).to_string())
                    .or_insert_with(|| serde_json::Value::Object(Default::default()));
            }
            let map = cursor.as_object_mut().ok_or_else(|| {
                CliError::Schema(format!("override path '{path}' does not address an object"))
            })?;
            map.insert(segments[segments.len() - 1].to_string(), new);
        }
        serde_json::from_value(value).map_err(|e| CliError::Schema(e.to_string()))
    }

    /// SHA-256 of the resolved configuration, for embedding in outputs.
    pub fn config_hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("run file serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        let mut hex = String::with_capacity(64);
        for byte in digest {
            hex.push_str(&format!("{byte:02x}"));
        }
        hex
    }

    pub fn two_mode_combination(&self) -> Result<TwoModeCombination, CliError> {
        match &self.field {
            Some(FieldSpec::Fock { n }) => Ok(TwoModeCombination::fock(*n, 0)),
            None => Ok(TwoModeCombination::fock(1, 0)),
            _ => Err(CliError::Schema(
                "two-mode runs support Fock inputs in mode one".into(),
            )),
        }
    }
}
