//! Two-pulse ESEEM from the Si-29 bath, as a multiplicative kernel on the
//! echo amplitude at `2 tau`.

use crate::constants::{hz, materials};
use crate::sample::{dipolar_couplings, lattice_sites, NuclearBath};

/// Nuclear frequencies in the two electron manifolds and modulation depth
/// `k`, or `None` when a frequency vanishes.
fn branch_frequencies(omega_i: f64, a: f64, b: f64) -> Option<(f64, f64, f64)> {
    let w_alpha = (omega_i + 0.5 * a).hypot(0.5 * b);
    let w_beta = (omega_i - 0.5 * a).hypot(0.5 * b);
    if w_alpha * w_beta <= f64::MIN_POSITIVE || !(w_alpha * w_beta).is_finite() {
        return None;
    }
    let k = (b * omega_i / (w_alpha * w_beta)).powi(2);
    Some((w_alpha, w_beta, k))
}

fn single_nucleus(w_alpha: f64, w_beta: f64, k: f64, tau: f64) -> f64 {
    1.0 - 0.25
        * k
        * (2.0 - 2.0 * (w_alpha * tau).cos() - 2.0 * (w_beta * tau).cos()
            + ((w_alpha - w_beta) * tau).cos()
            + ((w_alpha + w_beta) * tau).cos())
}

/// Product over the bath of the single-nucleus two-pulse modulation.
pub fn eseem_kernel(bath: &NuclearBath, tau: f64) -> f64 {
    let mut v = 1.0;
    for (j, n) in bath.nuclei.iter().enumerate() {
        match branch_frequencies(n.omega_i, n.a_secular, n.b_pseudosecular) {
            Some((wa, wb, k)) => v *= single_nucleus(wa, wb, k, tau),
            None => log::warn!("nucleus {j}: vanishing nuclear frequency, skipped"),
        }
    }
    v
}

/// Kernel averaged over random site occupation at `concentration`:
/// `prod_sites (1 - c (1 - V_site(tau)))` for all sites within `r_max`.
pub fn eseem_lattice_average(concentration: f64, r_max: f64, b0: f64, taus: &[f64]) -> Vec<f64> {
    let m = materials();
    let gamma_e = hz(m.electron.gamma_e_hz_per_t);
    let gamma_n = hz(m.silicon.si29_gamma_hz_per_t);
    let omega_i = gamma_n * b0.abs();
    let sites: Vec<(f64, f64, f64)> = lattice_sites(m.silicon.lattice_constant_m, r_max)
        .into_iter()
        .filter_map(|p| {
            let (a, b) = dipolar_couplings(p, gamma_e, gamma_n);
            branch_frequencies(omega_i, a, b)
        })
        .collect();
    taus.iter()
        .map(|&tau| {
            sites
                .iter()
                .map(|&(wa, wb, k)| 1.0 - concentration * (1.0 - single_nucleus(wa, wb, k, tau)))
                .product()
        })
        .collect()
}
