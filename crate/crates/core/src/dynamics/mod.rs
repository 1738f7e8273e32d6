//! Cavity + spin-packet mean-field dynamics, Purcell rates, Rabi calibration
//! and ESEEM.

mod engine;
mod eseem;
mod sweep;
mod trace;

pub use engine::{collective_ratio, simulate, Engine, PacketState, Record, SimOptions, CHUNK, COLLECTIVE_LIMIT};
pub use eseem::{eseem_kernel, eseem_lattice_average};
pub use sweep::{
    echo_decay, echo_phasor, field_sweep, simulate_cycled, write_decay_csv, write_spectrum_csv, DecayPoint,
    NuclearBathSpec, SpectrumPoint, SweepDetection,
};
pub use trace::{TraceMetadata, TraceRecord};

use std::f64::consts::PI;

/// Purcell rate `kappa g0^2 / ((kappa/2)^2 + detuning^2)`, s^-1.
pub fn purcell_rate(g0: f64, kappa: f64, detuning: f64) -> f64 {
    kappa * g0 * g0 / (0.25 * kappa * kappa + detuning * detuning)
}

/// Coupling that a Hahn sequence with refocusing amplitude `beta` and pulse
/// length `dt` rotates by pi: `pi sqrt(kappa) / (4 beta dt)`. Assumes
/// `kappa_ext ~ kappa`.
pub fn selected_coupling(beta: f64, dt: f64, kappa: f64) -> f64 {
    PI * kappa.sqrt() / (4.0 * beta * dt)
}

/// Steady-state rotation angle `2 g0 alpha_ss dt`, `alpha_ss = 2 sqrt(kappa_ext) beta / kappa`.
pub fn rabi_angle(beta: f64, dt: f64, g0: f64, kappa: f64, kappa_ext: f64) -> f64 {
    2.0 * g0 * (2.0 * kappa_ext.sqrt() * beta / kappa) * dt
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constants::hz;

    #[test]
    fn purcell_at_nominal_coupling() {
        let t1 = 1.0 / purcell_rate(hz(2.7e3), hz(332e3), 0.0);
        assert!((t1 - 1.8e-3).abs() < 0.05e-3, "{t1}");
        let k = hz(332e3);
        assert_eq!(purcell_rate(1e4, k, 0.0), 4.0 * 1e4 * 1e4 / k);
        assert!(purcell_rate(1e4, k, 1e14) < 1e-12);
        let r = purcell_rate(2e4, k, 1e5) / purcell_rate(1e4, k, 1e5);
        assert!((r - 4.0).abs() < 1e-12);
    }

    #[test]
    fn selected_coupling_nominal() {
        let g = selected_coupling(6e4, 1e-6, hz(332e3));
        assert!((g / hz(1.0) - 3.0e3).abs() < 0.1e3, "{}", g / hz(1.0));
        assert!((selected_coupling(1.2e5, 1e-6, hz(332e3)) - g / 2.0).abs() < 1e-9 * g);
    }

    #[test]
    fn rabi_angle_inverts_selection() {
        let k = hz(332e3);
        let (beta, dt) = (6e4, 1e-6);
        let g = selected_coupling(beta, dt, k);
        assert!((rabi_angle(beta, dt, g, k, k) - PI).abs() < 1e-12);
        assert!((rabi_angle(2.0 * beta, dt, g, k, k) - 2.0 * PI).abs() < 1e-12);
    }

    #[test]
    fn selected_t1_scales_as_beta_squared() {
        let k = hz(332e3);
        let t1 = |b: f64| 1.0 / purcell_rate(selected_coupling(b, 1e-6, k), k, 0.0);
        assert!((t1(2e5) / t1(1e5) - 4.0).abs() < 1e-12);
    }
}
