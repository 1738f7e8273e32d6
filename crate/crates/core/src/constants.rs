//! Physical constants and the versioned material table.

use std::f64::consts::PI;
use std::sync::OnceLock;

use serde::Deserialize;

pub const HBAR: f64 = 1.054_571_817e-34;
pub const MU0: f64 = 1.256_637_062_12e-6;
pub const TWO_PI: f64 = 2.0 * PI;

/// Converts a frequency in Hz to an angular frequency in rad/s.
pub fn hz(f: f64) -> f64 {
    TWO_PI * f
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Materials {
    pub version: u32,
    pub bismuth: Bismuth,
    pub electron: Electron,
    pub silicon: Silicon,
    pub aluminum: Aluminum,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bismuth {
    pub hyperfine_a_hz: f64,
    pub nuclear_spin: f64,
    pub gamma_n_hz_per_t: f64,
    pub da_deps_hz: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Electron {
    pub gamma_e_hz_per_t: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Silicon {
    pub lattice_constant_m: f64,
    pub young_modulus_pa: f64,
    pub poisson_ratio: f64,
    pub bulk_modulus_pa: f64,
    pub thermal_contraction: f64,
    pub si29_gamma_hz_per_t: f64,
    pub si29_natural_abundance: f64,
    pub si29_enriched_fraction: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Aluminum {
    pub young_modulus_pa: f64,
    pub poisson_ratio: f64,
    pub thermal_contraction: f64,
}

pub const MATERIALS_TOML: &str = include_str!("../data/materials.toml");

/// The bundled material table, parsed once.
pub fn materials() -> &'static Materials {
    static TABLE: OnceLock<Materials> = OnceLock::new();
    TABLE.get_or_init(|| toml::from_str(MATERIALS_TOML).expect("bundled materials.toml is valid"))
}
