//! Kerr (Duffing) steady state of the driven cavity.
//!
//! The intracavity photon number `n` solves
//! `P(n) = n [(kappa/2)^2 + (delta + K n)^2] = kappa_ext beta^2`.
//! A root is stable when `dP/dn > 0`.

use serde::{Deserialize, Serialize};

use super::ResonatorModel;
use crate::numerics::brent_root;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DuffingRoot {
    pub photons: f64,
    pub stable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DuffingSolution {
    /// Ascending in photon number.
    pub roots: Vec<DuffingRoot>,
}

impl DuffingSolution {
    pub fn stable(&self) -> impl Iterator<Item = f64> + '_ {
        self.roots.iter().filter(|r| r.stable).map(|r| r.photons)
    }

    pub fn is_bistable(&self) -> bool {
        self.stable().count() == 2
    }
}

struct Cubic {
    half_kappa2: f64,
    delta: f64,
    k: f64,
}

impl Cubic {
    fn p(&self, n: f64) -> f64 {
        let d = self.delta + self.k * n;
        n * (self.half_kappa2 + d * d)
    }

    fn dp(&self, n: f64) -> f64 {
        3.0 * self.k * self.k * n * n + 4.0 * self.delta * self.k * n + self.half_kappa2 + self.delta * self.delta
    }

    /// Positive turning points of `P`, if `P` is not monotone on `n >= 0`.
    fn turning_points(&self) -> Option<(f64, f64)> {
        if self.k == 0.0 {
            return None;
        }
        let disc = 4.0 * self.delta * self.delta - 12.0 * self.half_kappa2;
        if disc <= 0.0 || self.delta * self.k >= 0.0 {
            return None;
        }
        let root = self.k.abs() * disc.sqrt();
        let a = 6.0 * self.k * self.k;
        let b = -4.0 * self.delta * self.k;
        // Stable quadratic roots.
        let q = 0.5 * (b + root);
        let n2 = q / (0.5 * a);
        let n1 = (self.half_kappa2 + self.delta * self.delta) / (3.0 * self.k * self.k) / n2;
        Some((n1.min(n2), n1.max(n2)))
    }
}

fn solve(c: &Cubic, lo: f64, hi: f64, target: f64) -> f64 {
    let scale = target.abs().max(f64::MIN_POSITIVE);
    brent_root(
        |n| Ok((c.p(n) - target) / scale),
        lo,
        hi,
        1e-15 * hi.max(1e-300),
        0.0,
        300,
    )
    .unwrap_or(0.5 * (lo + hi))
}

/// All non-negative steady-state photon numbers at detuning
/// `delta = omega_drive - omega0` and drive amplitude `beta`.
pub fn duffing_steady_state(model: &ResonatorModel, detuning: f64, beta: f64) -> DuffingSolution {
    let target = model.kappa_ext() * beta * beta;
    let kappa = model.kappa();
    let c = Cubic {
        half_kappa2: 0.25 * kappa * kappa,
        delta: detuning,
        k: model.kerr_k,
    };
    if target == 0.0 {
        return DuffingSolution {
            roots: vec![DuffingRoot {
                photons: 0.0,
                stable: true,
            }],
        };
    }
    let mut upper = target / (c.half_kappa2 + detuning * detuning).max(c.half_kappa2);
    while c.p(upper) < target {
        upper *= 2.0;
    }
    let mut roots = Vec::with_capacity(3);
    match c.turning_points() {
        None => roots.push(solve(&c, 0.0, upper, target)),
        Some((n1, n2)) => {
            let (p1, p2) = (c.p(n1), c.p(n2));
            if target <= p1 {
                roots.push(solve(&c, 0.0, n1, target));
            }
            if target >= p2 && target <= p1 {
                roots.push(solve(&c, n1, n2, target));
            }
            if target >= p2 {
                roots.push(solve(&c, n2, upper.max(n2 * 2.0 + 1.0), target));
            }
        }
    }
    let roots = roots
        .into_iter()
        .map(|n| DuffingRoot {
            photons: n,
            stable: c.dp(n) > 0.0,
        })
        .collect();
    DuffingSolution { roots }
}

/// Quasi-static sweep of `beta` that follows the current stable branch and
/// jumps only when that branch disappears. Returns the photon number at each
/// drive amplitude; the sweep direction is the order of `betas`.
pub fn duffing_sweep(model: &ResonatorModel, detuning: f64, betas: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(betas.len());
    let mut prev: Option<f64> = None;
    for &b in betas {
        let sol = duffing_steady_state(model, detuning, b);
        let stable: Vec<f64> = sol.stable().collect();
        let pick = match (prev, stable.as_slice()) {
            (_, []) => sol.roots[0].photons,
            (None, s) => s[0],
            (Some(p), s) => *s
                .iter()
                .min_by(|a, b| (*a - p).abs().total_cmp(&(*b - p).abs()))
                .expect("non-empty"),
        };
        out.push(pick);
        prev = Some(pick);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn model() -> ResonatorModel {
        ResonatorModel::nanowire_s1()
    }

    #[test]
    fn linear_cavity_single_root() {
        let mut m = model();
        m.kerr_k = 0.0;
        let (d, b) = (0.3 * m.kappa(), 2e3);
        let sol = duffing_steady_state(&m, d, b);
        assert_eq!(sol.roots.len(), 1);
        let expected = m.kappa_ext() * b * b / (0.25 * m.kappa() * m.kappa() + d * d);
        assert!((sol.roots[0].photons / expected - 1.0).abs() < 1e-12);
        assert!(sol.roots[0].stable);
    }

    /// Discriminant of `a n^3 + b n^2 + c n + d`.
    fn discriminant(a: f64, b: f64, c: f64, d: f64) -> f64 {
        18.0 * a * b * c * d - 4.0 * b.powi(3) * d + b * b * c * c - 4.0 * a * c.powi(3) - 27.0 * a * a * d * d
    }

    #[test]
    fn cusp_is_a_degenerate_root() {
        let m = model();
        let (k, kk) = (m.kappa(), m.kerr_k);
        let delta = -3f64.sqrt() * k / 2.0;
        let beta = m.bistability_beta().unwrap();
        let target = m.kappa_ext() * beta * beta;
        let (a, b, c, d) = (kk * kk, 2.0 * delta * kk, 0.25 * k * k + delta * delta, -target);
        // Normalized discriminant vanishes at the onset.
        let scale = 4.0 * a * c.powi(3) + 27.0 * a * a * d * d;
        assert!(discriminant(a, b, c, d).abs() / scale < 1e-9);
        let sol = duffing_steady_state(&m, delta, beta);
        let nc = k / (3f64.sqrt() * kk);
        assert!(sol.roots.iter().all(|r| (r.photons / nc - 1.0).abs() < 1e-4), "{sol:?}");
    }

    #[test]
    fn fold_is_a_double_root() {
        let m = model();
        let delta = -1.5 * m.kappa();
        let c = Cubic {
            half_kappa2: 0.25 * m.kappa().powi(2),
            delta,
            k: m.kerr_k,
        };
        let (n1, _) = c.turning_points().unwrap();
        let beta = (c.p(n1) / m.kappa_ext()).sqrt();
        let sol = duffing_steady_state(&m, delta, beta);
        assert_eq!(sol.roots.len(), 3);
        assert!((sol.roots[0].photons / sol.roots[1].photons - 1.0).abs() < 1e-6);
    }

    #[test]
    fn bistable_above_threshold() {
        let m = model();
        let delta = -1.5 * m.kappa();
        let beta = 1.3 * m.bistability_beta().unwrap();
        let found = (0..200).any(|k| duffing_steady_state(&m, delta, beta * (1.0 + 0.02 * k as f64)).is_bistable());
        assert!(found);
    }

    #[test]
    fn sweep_shows_hysteresis() {
        let m = model();
        let delta = -2.0 * m.kappa();
        let b0 = m.bistability_beta().unwrap();
        let betas: Vec<f64> = (0..400).map(|k| b0 * (0.5 + 5.0 * k as f64 / 399.0)).collect();
        let up = duffing_sweep(&m, delta, &betas);
        let rev: Vec<f64> = betas.iter().rev().copied().collect();
        let mut down = duffing_sweep(&m, delta, &rev);
        down.reverse();
        let max_gap = up
            .iter()
            .zip(&down)
            .map(|(a, b)| (a - b).abs() / a.max(*b))
            .fold(0.0, f64::max);
        assert!(max_gap > 0.5, "no hysteresis: {max_gap}");
        let jump = up.windows(2).map(|w| w[1] / w[0]).fold(0.0, f64::max);
        assert!(jump > 2.0, "no abrupt jump: {jump}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn root_structure(dk in -4.0f64..1.0, bscale in 0.05f64..8.0) {
            let m = model();
            let delta = dk * m.kappa();
            let beta = bscale * m.bistability_beta().unwrap();
            let sol = duffing_steady_state(&m, delta, beta);
            let stable = sol.stable().count();
            prop_assert!(
                (sol.roots.len() == 1 && stable == 1) || (sol.roots.len() == 3 && stable == 2),
                "{sol:?}"
            );
            let target = m.kappa_ext() * beta * beta;
            for r in &sol.roots {
                let d = delta + m.kerr_k * r.photons;
                let p = r.photons * (0.25 * m.kappa().powi(2) + d * d);
                prop_assert!((p / target - 1.0).abs() < 1e-9);
            }
        }

        /// Away from folds, stable branches grow with drive and the unstable
        /// branch shrinks.
        #[test]
        fn continuity_in_beta(dk in -4.0f64..-0.9, bscale in 0.2f64..6.0) {
            let m = model();
            let delta = dk * m.kappa();
            let beta = bscale * m.bistability_beta().unwrap();
            let a = duffing_steady_state(&m, delta, beta);
            let b = duffing_steady_state(&m, delta, beta * (1.0 + 1e-6));
            if a.roots.len() == b.roots.len() {
                for (ra, rb) in a.roots.iter().zip(&b.roots) {
                    if ra.stable {
                        prop_assert!(rb.photons >= ra.photons);
                    } else {
                        prop_assert!(rb.photons <= ra.photons);
                    }
                    prop_assert!((rb.photons / ra.photons - 1.0).abs() < 0.05);
                }
            }
        }
    }
}
