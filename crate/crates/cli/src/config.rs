//! Experiment configuration: one JSON file per run.
//!
//! The file is parsed against a closed schema (unknown keys are rejected),
//! defaults are filled in, and the resulting effective configuration is
//! serialized canonically (sorted keys, shortest round-trip floats). Its
//! SHA-256 is the config hash stored with every output.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use esrsim::detection::{EchoNoise, FluctuationModel};
use esrsim::dynamics::{SimOptions, SweepDetection};
use esrsim::resonator::{ReflectionFormat, ResonatorModel};
use esrsim::sample::{EnsembleConfig, DEFAULT_DEPTH_RANGE, DEFAULT_PEAK_DENSITY, DEFAULT_TAPER};
use esrsim::sequence::HahnParams;
use esrsim::spin::SpinSystem;

use crate::error::{CliError, CliResult};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    Spectrum,
    EchoDecay,
    T1,
    Rabi,
    Cpmg,
    Stats,
    S11Fit,
    CouplingMap,
    StrainMap,
    Sensitivity,
}

impl Kind {
    pub fn name(self) -> &'static str {
        match self {
            Kind::Spectrum => "spectrum",
            Kind::EchoDecay => "echo_decay",
            Kind::T1 => "t1",
            Kind::Rabi => "rabi",
            Kind::Cpmg => "cpmg",
            Kind::Stats => "stats",
            Kind::S11Fit => "s11_fit",
            Kind::CouplingMap => "coupling_map",
            Kind::StrainMap => "strain_map",
            Kind::Sensitivity => "sensitivity",
        }
    }
}

/// Top level of a configuration file. `params` is parsed according to
/// `experiment`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    schema_version: u32,
    experiment: Kind,
    #[serde(default = "default_seed")]
    seed: u64,
    spin_system: SpinSystem,
    resonator: ResonatorModel,
    #[serde(default)]
    sample: SampleSpec,
    #[serde(default)]
    simulation: SimOptions,
    params: serde_json::Value,
}

fn default_seed() -> u64 {
    1
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub experiment: Kind,
    pub seed: u64,
    pub spin_system: SpinSystem,
    pub resonator: ResonatorModel,
    pub sample: SampleSpec,
    pub simulation: SimOptions,
    pub params: Params,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SampleSpec {
    pub profile: ProfileSpec,
    pub strain: StrainSpec,
    pub ensemble: EnsembleConfig,
}

impl Default for SampleSpec {
    fn default() -> Self {
        Self {
            profile: ProfileSpec::default(),
            strain: StrainSpec::Analytic { film_stress: None },
            ensemble: EnsembleConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProfileSpec {
    /// Flat density between two depths with cosine shoulders, m^-3 and m.
    Plateau {
        peak_density: f64,
        depth_min: f64,
        depth_max: f64,
        taper: f64,
    },
    /// `depth_m, density_m3` table.
    Csv { path: PathBuf },
}

impl Default for ProfileSpec {
    fn default() -> Self {
        ProfileSpec::Plateau {
            peak_density: DEFAULT_PEAK_DENSITY,
            depth_min: DEFAULT_DEPTH_RANGE.0,
            depth_max: DEFAULT_DEPTH_RANGE.1,
            taper: DEFAULT_TAPER,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum StrainSpec {
    None,
    /// Film-edge model; `film_stress` overrides the thermal-mismatch stress, Pa.
    Analytic {
        film_stress: Option<f64>,
    },
    /// `x_m, y_m, eps_h` grid.
    Import {
        path: PathBuf,
    },
}

/// Sweep axis: explicit values or an evenly spaced range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Axis {
    Values(Vec<f64>),
    Range {
        min: f64,
        max: f64,
        points: usize,
        #[serde(default)]
        log: bool,
    },
}

impl Axis {
    pub fn values(&self, path: &str) -> CliResult<Vec<f64>> {
        let v = match *self {
            Axis::Values(ref v) => v.clone(),
            Axis::Range { min, max, points, log } => {
                if points == 0 {
                    return Err(CliError::schema(path, "points must be >= 1"));
                }
                if log && !(min > 0.0 && max > 0.0) {
                    return Err(CliError::schema(path, "log axis needs positive bounds"));
                }
                (0..points)
                    .map(|k| {
                        let u = if points == 1 {
                            0.0
                        } else {
                            k as f64 / (points - 1) as f64
                        };
                        if log {
                            (min.ln() + u * (max.ln() - min.ln())).exp()
                        } else {
                            min + u * (max - min)
                        }
                    })
                    .collect()
            }
        };
        if v.is_empty() {
            return Err(CliError::schema(path, "axis is empty"));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(CliError::schema(path, "axis values must be finite"));
        }
        Ok(v)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Params {
    Spectrum(SpectrumParams),
    EchoDecay(EchoDecayParams),
    T1(T1Params),
    Rabi(RabiParams),
    Cpmg(CpmgParams),
    Stats(StatsParams),
    S11Fit(S11Params),
    CouplingMap(CouplingMapParams),
    StrainMap(StrainMapParams),
    Sensitivity(SensitivityParams),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectrumParams {
    /// Static field, T.
    pub b0: Axis,
    pub curves: Vec<SpectrumCurve>,
    #[serde(default = "magnitude")]
    pub detection: SweepDetection,
}

fn magnitude() -> SweepDetection {
    SweepDetection::Magnitude
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectrumCurve {
    pub label: String,
    pub echo: HahnParams,
    /// Multiplies the strain field of the sample.
    #[serde(default = "one")]
    pub strain_scale: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EchoDecayParams {
    pub b0: f64,
    pub tau: Axis,
    pub echo: HahnParams,
    pub bath: Option<BathParams>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BathParams {
    /// Si-29 fraction.
    pub concentration: f64,
    /// m
    pub r_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct T1Params {
    pub b0: f64,
    /// Recovery delays, s.
    pub delay: Axis,
    pub echo: HahnParams,
    pub saturation: Option<SaturationPulse>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SaturationPulse {
    pub duration: f64,
    pub beta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RabiParams {
    pub b0: f64,
    pub beta_inv: Axis,
    pub dt_inv: f64,
    pub wait: f64,
    pub echo: HahnParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CpmgParams {
    pub b0: f64,
    pub echo: HahnParams,
    pub n_refocus: usize,
    #[serde(default = "uncorrelated")]
    pub noise: EchoNoise,
    /// Input-referred noise, photons; sets the per-echo noise of the integral.
    #[serde(default = "half")]
    pub n_tilde: f64,
}

fn uncorrelated() -> EchoNoise {
    EchoNoise::Uncorrelated
}

fn half() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StatsParams {
    pub mean: f64,
    pub fluctuation: FluctuationModel,
    pub white_sigma: f64,
    pub n_samples: usize,
    /// Hz
    pub rate: f64,
    pub n_values: Vec<usize>,
    #[serde(default = "no_decimation")]
    pub decimation: Vec<usize>,
}

fn no_decimation() -> Vec<usize> {
    vec![1]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct S11Params {
    pub source: S11Source,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum S11Source {
    File {
        path: PathBuf,
        format: ReflectionFormat,
        /// W
        input_power: f64,
    },
    /// Reflection of the configured resonator plus complex Gaussian noise.
    Synthetic {
        points: usize,
        /// Half-span in units of the linewidth.
        span_linewidths: f64,
        input_power: f64,
        snr_db: Option<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CouplingMapParams {
    pub b0: f64,
    /// m
    pub x: Axis,
    /// m
    pub y: Axis,
    #[serde(default)]
    pub line: usize,
    #[serde(default = "default_bins")]
    pub bins: usize,
}

fn default_bins() -> usize {
    60
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrainMapParams {
    pub x: Axis,
    pub y: Axis,
    /// Depth below the silicon surface of the plotted cut, m.
    #[serde(default = "default_cut")]
    pub cut_depth: f64,
}

fn default_cut() -> f64 {
    75e-9
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensitivityParams {
    /// rad/s; the resonator linewidth when absent.
    pub kappa: Option<f64>,
    /// rad/s
    pub g0: f64,
    pub n_tilde: f64,
    pub polarization: f64,
    pub snr_single: f64,
    pub n_spin: f64,
    /// Hz
    pub rep_rate: f64,
}

fn parse<T: DeserializeOwned>(value: serde_json::Value, prefix: &str) -> CliResult<T> {
    serde_path_to_error::deserialize(value).map_err(|e| {
        let inner = e.path().to_string();
        let path = match (prefix.is_empty(), inner.as_str()) {
            (true, _) => inner.clone(),
            (false, ".") => prefix.to_string(),
            (false, _) => format!("{prefix}.{inner}"),
        };
        CliError::schema(path, e.into_inner())
    })
}

fn parse_params(kind: Kind, v: serde_json::Value) -> CliResult<Params> {
    let p = "params";
    Ok(match kind {
        Kind::Spectrum => Params::Spectrum(parse(v, p)?),
        Kind::EchoDecay => Params::EchoDecay(parse(v, p)?),
        Kind::T1 => Params::T1(parse(v, p)?),
        Kind::Rabi => Params::Rabi(parse(v, p)?),
        Kind::Cpmg => Params::Cpmg(parse(v, p)?),
        Kind::Stats => Params::Stats(parse(v, p)?),
        Kind::S11Fit => Params::S11Fit(parse(v, p)?),
        Kind::CouplingMap => Params::CouplingMap(parse(v, p)?),
        Kind::StrainMap => Params::StrainMap(parse(v, p)?),
        Kind::Sensitivity => Params::Sensitivity(parse(v, p)?),
    })
}

/// Makes a relative path absolute against the config file directory.
fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl ExperimentConfig {
    /// Parses configuration text. Relative file paths are resolved
    /// against `base`.
    pub fn from_str(text: &str, base: &Path) -> CliResult<Self> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| CliError::schema(format!("line {}", e.line()), e))?;
        let raw: RawConfig = parse(value, "")?;
        if raw.schema_version != SCHEMA_VERSION {
            return Err(CliError::schema(
                "schema_version",
                format!("unsupported version {}, expected {SCHEMA_VERSION}", raw.schema_version),
            ));
        }
        let mut cfg = ExperimentConfig {
            schema_version: raw.schema_version,
            experiment: raw.experiment,
            seed: raw.seed,
            spin_system: raw.spin_system,
            resonator: raw.resonator,
            sample: raw.sample,
            simulation: raw.simulation,
            params: parse_params(raw.experiment, raw.params)?,
        };
        cfg.resolve_paths(base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path.display(), e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_str(&text, &base)
    }

    fn resolve_paths(&mut self, base: &Path) {
        if let ProfileSpec::Csv { path } = &mut self.sample.profile {
            resolve(base, path);
        }
        if let StrainSpec::Import { path } = &mut self.sample.strain {
            resolve(base, path);
        }
        if let Params::S11Fit(S11Params {
            source: S11Source::File { path, .. },
        }) = &mut self.params
        {
            resolve(base, path);
        }
    }

    fn validate(&self) -> CliResult<()> {
        self.spin_system
            .validate()
            .map_err(|e| CliError::schema("spin_system", e))?;
        self.resonator
            .validate()
            .map_err(|e| CliError::schema("resonator", e))?;
        self.sample
            .ensemble
            .validate()
            .map_err(|e| CliError::schema("sample.ensemble", e))?;
        Ok(())
    }

    /// Canonical JSON of the effective configuration.
    pub fn canonical_json(&self) -> String {
        // serde_json maps are ordered, so re-serializing through a Value
        // sorts every key.
        let v = serde_json::to_value(self).expect("config serializes");
        serde_json::to_string(&v).expect("value serializes")
    }

    pub fn pretty_json(&self) -> String {
        let v = serde_json::to_value(self).expect("config serializes");
        serde_json::to_string_pretty(&v).expect("value serializes") + "\n"
    }

    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_json().as_bytes()))
    }

    /// Hash of everything except the seed. Seed-independent outputs carry
    /// this one so that they stay identical under a seed override.
    pub fn model_hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Some(m) = v.as_object_mut() {
            m.remove("seed");
        }
        hex::encode(Sha256::digest(v.to_string().as_bytes()))
    }
}
