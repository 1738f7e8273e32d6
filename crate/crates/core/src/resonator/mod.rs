//! Lumped LC resonator with a nanowire inductor.
//!
//! Rates follow `kappa_ext = omega0 / Q_ext`, `kappa_int = omega0 / Q_int`
//! and `kappa = kappa_ext + kappa_int`. Drive amplitudes `beta` are in
//! `s^-1/2`, so that `beta^2` is the incoming photon flux.

mod duffing;
mod field;
mod s11;
mod tls;

pub use duffing::{duffing_steady_state, duffing_sweep, DuffingRoot, DuffingSolution};
pub use field::{b1_field, coupling_strength, field_map, photon_current, write_field_map_csv, FieldSample};
pub use s11::{
    fit_s11, read_reflection_csv, s11_linear, write_reflection_csv, ReflectionFormat, ReflectionTrace, S11Fit,
};
pub use tls::{tls_qint, TlsModel};

/// Position of a point at `depth` below the silicon surface, directly under
/// the wire at lateral offset `x`.
pub fn depth_to_point(model: &ResonatorModel, x: f64, depth: f64) -> (f64, f64) {
    (x, -model.wire_thickness / 2.0 - depth)
}

use serde::{Deserialize, Serialize};

use crate::constants::{hz, HBAR};
use crate::error::{ensure_finite, Error, Result};

/// Input power at which the default Kerr coefficient puts the onset of
/// bistability (-90 dBm).
pub const DEFAULT_BISTABILITY_POWER_W: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResonatorModel {
    /// rad/s
    pub omega0: f64,
    pub q_ext: f64,
    pub q_int: f64,
    /// ohm
    #[serde(rename = "impedance_Zc")]
    pub impedance_zc: f64,
    /// m
    pub wire_width: f64,
    /// m
    pub wire_thickness: f64,
    /// m
    pub wire_length: f64,
    /// Photon-number frequency pull, rad/s per photon. Positive values pull
    /// the resonance down (kinetic inductance).
    #[serde(rename = "kerr_K")]
    pub kerr_k: f64,
}

impl Default for ResonatorModel {
    fn default() -> Self {
        Self::nanowire_s1()
    }
}

impl ResonatorModel {
    /// 7.25 GHz resonator with a 100 nm x 50 nm x 10 um aluminium nanowire.
    pub fn nanowire_s1() -> Self {
        let mut m = Self {
            omega0: hz(7.25e9),
            q_ext: 3e4,
            q_int: 8e4,
            impedance_zc: 15.0,
            wire_width: 100e-9,
            wire_thickness: 50e-9,
            wire_length: 10e-6,
            kerr_k: 0.0,
        };
        m.kerr_k = m.kerr_for_bistability_at(DEFAULT_BISTABILITY_POWER_W);
        m
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("omega0", self.omega0),
            ("q_ext", self.q_ext),
            ("q_int", self.q_int),
            ("impedance_zc", self.impedance_zc),
            ("wire_width", self.wire_width),
            ("wire_thickness", self.wire_thickness),
            ("wire_length", self.wire_length),
        ] {
            ensure_finite(name, v)?;
            if v <= 0.0 {
                return Err(Error::InvalidInput(format!("{name} must be > 0, got {v}")));
            }
        }
        ensure_finite("kerr_k", self.kerr_k)
    }

    pub fn kappa_ext(&self) -> f64 {
        self.omega0 / self.q_ext
    }

    pub fn kappa_int(&self) -> f64 {
        self.omega0 / self.q_int
    }

    pub fn kappa(&self) -> f64 {
        self.kappa_ext() + self.kappa_int()
    }

    /// `beta = sqrt(P_in / (hbar omega0))`.
    pub fn beta_from_power(&self, p_in: f64) -> f64 {
        (p_in / (HBAR * self.omega0)).sqrt()
    }

    pub fn power_from_beta(&self, beta: f64) -> f64 {
        beta * beta * HBAR * self.omega0
    }

    /// Steady-state intracavity photon number on resonance in the linear regime.
    pub fn photons_at_power(&self, p_in: f64) -> f64 {
        let beta = self.beta_from_power(p_in);
        let alpha = 2.0 * self.kappa_ext().sqrt() * beta / self.kappa();
        alpha * alpha
    }

    /// Kerr coefficient whose bistability onset (at detuning `-sqrt(3) kappa/2`)
    /// sits at input power `p_in`.
    pub fn kerr_for_bistability_at(&self, p_in: f64) -> f64 {
        let k = self.kappa();
        let beta2 = p_in / (HBAR * self.omega0);
        k.powi(3) / (3.0 * 3f64.sqrt() * self.kappa_ext() * beta2)
    }

    /// Drive amplitude at the onset of bistability, or `None` without Kerr term.
    pub fn bistability_beta(&self) -> Option<f64> {
        if self.kerr_k == 0.0 {
            return None;
        }
        let k = self.kappa();
        Some((k.powi(3) / (3.0 * 3f64.sqrt() * self.kerr_k.abs() * self.kappa_ext())).sqrt())
    }
}

/// Converts dBm to watts.
pub fn dbm_to_watts(dbm: f64) -> f64 {
    1e-3 * 10f64.powf(dbm / 10.0)
}
