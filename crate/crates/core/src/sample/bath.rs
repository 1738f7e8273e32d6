//! Dilute Si-29 nuclear spin bath around a substitutional donor.
//!
//! Silicon sites form a diamond lattice with the donor at the origin and the
//! static field along [001]. Each nucleus couples to the donor electron by
//! the point dipole interaction, `D = (mu0/4pi) gamma_e gamma_n hbar / r^3`,
//! with secular part `a = D (3 cos^2 theta - 1)` and pseudo-secular part
//! `b = 3 D sin(theta) cos(theta)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::constants::{hz, materials, HBAR, MU0};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Nucleus {
    /// Relative to the donor, m.
    pub position: [f64; 3],
    /// Nuclear Larmor frequency, rad/s.
    pub omega_i: f64,
    /// rad/s
    pub a_secular: f64,
    /// rad/s
    pub b_pseudosecular: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct NuclearBath {
    pub nuclei: Vec<Nucleus>,
}

/// Lattice sites within `r_max` of the origin, excluding the origin.
pub fn lattice_sites(lattice_constant: f64, r_max: f64) -> Vec<[f64; 3]> {
    const BASIS: [[f64; 3]; 8] = [
        [0.0, 0.0, 0.0],
        [0.0, 0.5, 0.5],
        [0.5, 0.0, 0.5],
        [0.5, 0.5, 0.0],
        [0.25, 0.25, 0.25],
        [0.25, 0.75, 0.75],
        [0.75, 0.25, 0.75],
        [0.75, 0.75, 0.25],
    ];
    let n = (r_max / lattice_constant).ceil() as i64 + 1;
    let mut out = Vec::new();
    for i in -n..=n {
        for j in -n..=n {
            for k in -n..=n {
                for b in &BASIS {
                    let p = [
                        (i as f64 + b[0]) * lattice_constant,
                        (j as f64 + b[1]) * lattice_constant,
                        (k as f64 + b[2]) * lattice_constant,
                    ];
                    let r2 = p[0] * p[0] + p[1] * p[1] + p[2] * p[2];
                    if r2 > 0.0 && r2 <= r_max * r_max {
                        out.push(p);
                    }
                }
            }
        }
    }
    out
}

/// Dipolar `(a, b)` couplings in rad/s for a nucleus at `position`.
pub fn dipolar_couplings(position: [f64; 3], gamma_e: f64, gamma_n: f64) -> (f64, f64) {
    let r2 = position.iter().map(|v| v * v).sum::<f64>();
    let r = r2.sqrt();
    let d = MU0 / (4.0 * std::f64::consts::PI) * gamma_e * gamma_n * HBAR / (r2 * r);
    let cos = position[2] / r;
    let sin = (1.0 - cos * cos).max(0.0).sqrt();
    (d * (3.0 * cos * cos - 1.0), 3.0 * d * sin * cos)
}

/// Occupies each lattice site within `r_max` with probability `concentration`.
pub fn nuclear_bath(concentration: f64, r_max: f64, b0: f64, seed: u64) -> Result<NuclearBath> {
    if !(0.0..=1.0).contains(&concentration) {
        return Err(Error::InvalidInput(format!(
            "concentration {concentration} not in [0, 1]"
        )));
    }
    if !(r_max > 0.0) {
        return Err(Error::InvalidInput("r_max must be positive".into()));
    }
    let m = materials();
    let gamma_e = hz(m.electron.gamma_e_hz_per_t);
    let gamma_n = hz(m.silicon.si29_gamma_hz_per_t);
    let omega_i = gamma_n * b0.abs();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nuclei = lattice_sites(m.silicon.lattice_constant_m, r_max)
        .into_iter()
        .filter(|_| rng.random::<f64>() < concentration)
        .map(|position| {
            let (a, b) = dipolar_couplings(position, gamma_e, gamma_n);
            Nucleus {
                position,
                omega_i,
                a_secular: a,
                b_pseudosecular: b,
            }
        })
        .collect();
    Ok(NuclearBath { nuclei })
}
