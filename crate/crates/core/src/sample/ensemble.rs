//! Monte Carlo donor draws and their aggregation into spin packets.
//!
//! Donors are drawn in the wire cross-section: depth from the implant
//! profile, lateral position from a mixture of a narrow window around the
//! wire and the full lateral extent. Importance weights make every draw
//! represent a donor count over the wire length. Per donor and ESR line the
//! coupling `g0` and detuning from the resonator are computed and the pairs
//! are binned on a log-`g0` x linear-detuning grid; each occupied cell
//! becomes one packet.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::profile::ImplantProfile;
use super::strain::{hyperfine_shift, StrainMap};
use crate::constants::hz;
use crate::dynamics::purcell_rate;
use crate::error::{Error, Result};
use crate::numerics::Grid2;
use crate::resonator::{b1_field, coupling_strength, ResonatorModel};
use crate::spin::{transitions, SpinSystem};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum FieldSource {
    /// Single-photon field of the resonator nanowire.
    Nanowire,
    /// Spatially uniform transverse field, tesla.
    Uniform { b1: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnsembleConfig {
    /// Monte Carlo donor draws.
    pub n_donors: usize,
    /// Donors occupy `|x| <= lateral_extent`.
    pub lateral_extent: f64,
    /// Half-width of the preferentially sampled window around the wire.
    pub near_halfwidth: f64,
    /// Fraction of draws taken from the near window.
    pub near_fraction: f64,
    pub g0_bins: usize,
    pub detuning_bins: usize,
    /// Lowest `g0` bin edge relative to the largest coupling.
    pub g0_dynamic_range: f64,
    /// Pairs with `|detuning| > window` are dropped; `None` keeps all.
    pub detuning_window: Option<f64>,
    pub max_packets: usize,
    pub transition_threshold: f64,
    /// Restrict to these line ids; `None` keeps all ten.
    pub lines: Option<Vec<usize>>,
    /// Echo coherence time including the Purcell contribution, s.
    pub t2: f64,
    pub field: FieldSource,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self {
            n_donors: 200_000,
            lateral_extent: 2e-6,
            near_halfwidth: 300e-9,
            near_fraction: 0.6,
            g0_bins: 60,
            detuning_bins: 40,
            g0_dynamic_range: 1e3,
            detuning_window: Some(hz(1.5e6)),
            max_packets: 50_000,
            transition_threshold: 0.05,
            lines: None,
            t2: 0.85e-3,
            field: FieldSource::Nanowire,
        }
    }
}

impl EnsembleConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidInput(m.to_string()));
        if self.n_donors == 0 {
            return bad("n_donors must be >= 1");
        }
        if !(self.lateral_extent > 0.0) || !(self.near_halfwidth > 0.0) {
            return bad("lateral extents must be positive");
        }
        if !(0.0..=1.0).contains(&self.near_fraction) {
            return bad("near_fraction must be in [0, 1]");
        }
        if self.g0_bins == 0 || self.detuning_bins == 0 {
            return bad("bin counts must be >= 1");
        }
        if !(self.g0_dynamic_range > 1.0) {
            return bad("g0_dynamic_range must exceed 1");
        }
        if let Some(w) = self.detuning_window {
            if !(w > 0.0) {
                return bad("detuning_window must be positive");
            }
        }
        if !(self.t2 > 0.0) {
            return bad("t2 must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpinPacket {
    /// Cross-section position of the representative donor, m.
    pub x: f64,
    pub y: f64,
    /// rad/s
    pub g0: f64,
    pub transition_id: usize,
    /// Spin frequency minus resonator frequency, rad/s.
    pub detuning: f64,
    /// Donors represented.
    pub weight: f64,
    /// Purcell relaxation time, s.
    pub t1: f64,
    /// Pure dephasing time; the transverse rate is `1/t2 + 1/(2 t1)`.
    pub t2: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Donor {
    pub x: f64,
    pub y: f64,
    pub weight: f64,
    /// Transverse single-photon field magnitude, T.
    pub b1: f64,
    pub epsilon_h: f64,
    /// rad/s
    pub delta_a: f64,
}

/// Donor draws, independent of the static field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DonorSet {
    pub donors: Vec<Donor>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ensemble {
    pub b0: f64,
    pub packets: Vec<SpinPacket>,
    /// Weight of all (donor, line) pairs before the detuning window.
    pub total_weight: f64,
}

const MIN_TABLE_DEPTH: f64 = 2e-9;

/// Bilinear table of `|B1|` over `x >= 0` and depth, built from the
/// quadrature once per draw set.
struct FieldTable {
    grid: Grid2,
    thickness: f64,
}

impl FieldTable {
    fn build(model: &ResonatorModel, lateral: f64, min_depth: f64, max_depth: f64) -> Result<Self> {
        let mut xs: Vec<f64> = Vec::new();
        let fine = 400e-9f64.min(lateral);
        let nf = (fine / 2e-9).ceil() as usize;
        xs.extend((0..=nf).map(|i| fine * i as f64 / nf as f64));
        if lateral > fine {
            let nc = ((lateral - fine) / 20e-9).ceil() as usize;
            xs.extend((1..=nc).map(|i| fine + (lateral - fine) * i as f64 / nc as f64));
        }
        let nd = ((max_depth - min_depth) / 2e-9).ceil().max(1.0) as usize;
        let depths: Vec<f64> = (0..=nd)
            .map(|j| min_depth + (max_depth - min_depth) * j as f64 / nd as f64)
            .collect();
        // Grid axis must increase, so store y = -depth in reverse order.
        let ys: Vec<f64> = depths.iter().rev().map(|d| -model.wire_thickness / 2.0 - d).collect();
        let points: Vec<(f64, f64)> = ys.iter().flat_map(|&y| xs.iter().map(move |&x| (x, y))).collect();
        let values = points
            .par_iter()
            .map(|&(x, y)| b1_field(model, (x, y)).map(|b| b[0].hypot(b[1])))
            .collect::<Result<Vec<f64>>>()?;
        Ok(Self {
            grid: Grid2::new(xs, ys, values)?,
            thickness: model.wire_thickness,
        })
    }

    fn at(&self, x: f64, y: f64) -> f64 {
        debug_assert!(y <= -self.thickness / 2.0 + 1e-15);
        self.grid.at(x.abs(), y)
    }
}

/// Pure dephasing time that, with Purcell rate `gamma1`, gives a total
/// coherence time `t2`; infinite once `gamma1 / 2` alone exceeds `1 / t2`.
fn pure_dephasing_time(t2: f64, gamma1: f64) -> f64 {
    let rate = 1.0 / t2 - 0.5 * gamma1;
    if rate > 0.0 {
        1.0 / rate
    } else {
        f64::INFINITY
    }
}

/// Draws `cfg.n_donors` donors. Donor `i` uses ChaCha8 stream `i` of `seed`,
/// so the result does not depend on the thread count.
pub fn draw_donors(
    profile: &ImplantProfile,
    strain: &StrainMap,
    resonator: &ResonatorModel,
    cfg: &EnsembleConfig,
    seed: u64,
) -> Result<DonorSet> {
    cfg.validate()?;
    resonator.validate()?;
    let sampler = profile.sampler()?;
    let dose = profile.areal_dose();
    let max_depth = *profile.depth_grid.last().expect("non-empty");
    // The quadrature is singular at the wire corners; the table starts
    // MIN_TABLE_DEPTH below the surface and clamps shallower donors to it.
    let first = profile
        .density
        .iter()
        .position(|&n| n > 0.0)
        .unwrap_or(0)
        .saturating_sub(1);
    let min_depth = profile.depth_grid[first].max(MIN_TABLE_DEPTH).min(max_depth);
    let table = match cfg.field {
        FieldSource::Nanowire => Some(FieldTable::build(resonator, cfg.lateral_extent, min_depth, max_depth)?),
        FieldSource::Uniform { .. } => None,
    };
    let near = cfg.near_halfwidth.min(cfg.lateral_extent);
    let full = cfg.lateral_extent;
    let p_near = if near < full { cfg.near_fraction } else { 0.0 };
    // Lateral proposal density (per metre) at |x|.
    let q = |x: f64| -> f64 {
        let mut v = (1.0 - p_near) / (2.0 * full);
        if x.abs() <= near {
            v += p_near / (2.0 * near);
        }
        v
    };
    let per_draw = resonator.wire_length * dose / cfg.n_donors as f64;
    let surface = -resonator.wire_thickness / 2.0;
    let donors = (0..cfg.n_donors)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let u_mix: f64 = rng.random();
            let u_x: f64 = rng.random();
            let u_d: f64 = rng.random();
            let half = if u_mix < p_near { near } else { full };
            let x = (2.0 * u_x - 1.0) * half;
            let depth = sampler.depth(u_d);
            let y = surface - depth;
            let b1 = match (&table, cfg.field) {
                (Some(t), _) => t.at(x, y),
                (None, FieldSource::Uniform { b1 }) => b1,
                (None, FieldSource::Nanowire) => unreachable!(),
            };
            let epsilon_h = strain.epsilon_h(x, y);
            Donor {
                x,
                y,
                weight: per_draw / q(x),
                b1,
                epsilon_h,
                delta_a: hyperfine_shift(epsilon_h),
            }
        })
        .collect();
    Ok(DonorSet { donors, seed })
}

/// Draws donors and aggregates them at static field `b0`.
#[allow(clippy::too_many_arguments)]
pub fn build_ensemble(
    profile: &ImplantProfile,
    strain: &StrainMap,
    resonator: &ResonatorModel,
    spin: &SpinSystem,
    b0: f64,
    cfg: &EnsembleConfig,
    seed: u64,
) -> Result<Ensemble> {
    draw_donors(profile, strain, resonator, cfg, seed)?.aggregate(spin, resonator, b0, cfg)
}

struct Line {
    id: usize,
    frequency: f64,
    sx: f64,
    dfreq_da: f64,
}

impl DonorSet {
    pub fn total_weight(&self) -> f64 {
        self.donors.iter().map(|d| d.weight).sum()
    }

    /// Bins the (donor, line) pairs at static field `b0` into packets.
    pub fn aggregate(
        &self,
        spin: &SpinSystem,
        resonator: &ResonatorModel,
        b0: f64,
        cfg: &EnsembleConfig,
    ) -> Result<Ensemble> {
        cfg.validate()?;
        if self.donors.is_empty() {
            return Err(Error::InvalidInput("no donors drawn".into()));
        }
        let cells = cfg.g0_bins * cfg.detuning_bins;
        let levels = spin.levels(b0, 0.0)?;
        let table = transitions(&levels, cfg.transition_threshold)?;
        let lines: Vec<Line> = table
            .entries
            .iter()
            .filter(|l| cfg.lines.as_ref().is_none_or(|ids| ids.contains(&l.id)))
            .map(|l| Line {
                id: l.id,
                frequency: l.frequency,
                sx: l.sx_element,
                dfreq_da: l.dfreq_da,
            })
            .collect();
        if cells * lines.len() > cfg.max_packets {
            return Err(Error::InvalidInput(format!(
                "{} bins x {} lines exceed the packet cap {}",
                cells,
                lines.len(),
                cfg.max_packets
            )));
        }
        let omega0 = resonator.omega0;
        let kappa = resonator.kappa();
        let weight_all = self.total_weight();
        let total_weight = weight_all * lines.len() as f64;

        let mut g_max: f64 = 0.0;
        for l in &lines {
            let b_max = self.donors.iter().map(|d| d.b1).fold(0.0, f64::max);
            g_max = g_max.max(coupling_strength(b_max, l.sx, spin.gamma_e));
        }
        let mut packets = Vec::new();
        if g_max <= 0.0 {
            return Ok(Ensemble {
                b0,
                packets,
                total_weight,
            });
        }
        let log_hi = g_max.ln();
        let log_lo = (g_max / cfg.g0_dynamic_range).ln();
        let g_bin = |g: f64| -> usize {
            let t = ((g.max(f64::MIN_POSITIVE).ln() - log_lo) / (log_hi - log_lo)).clamp(0.0, 1.0);
            ((t * cfg.g0_bins as f64) as usize).min(cfg.g0_bins - 1)
        };
        for l in &lines {
            let detunings: Vec<f64> = self
                .donors
                .iter()
                .map(|d| l.frequency + l.dfreq_da * d.delta_a - omega0)
                .collect();
            let (d_lo, d_hi) = match cfg.detuning_window {
                Some(w) => (-w, w),
                None => {
                    let lo = detunings.iter().copied().fold(f64::INFINITY, f64::min);
                    let hi = detunings.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    if hi > lo {
                        (lo, hi)
                    } else {
                        (lo - 1.0, hi + 1.0)
                    }
                }
            };
            let mut rep: Vec<Option<usize>> = vec![None; cells];
            let mut mass = vec![0.0; cells];
            for (k, (d, &det)) in self.donors.iter().zip(&detunings).enumerate() {
                if det < d_lo || det > d_hi {
                    continue;
                }
                let g = coupling_strength(d.b1, l.sx, spin.gamma_e);
                let di =
                    (((det - d_lo) / (d_hi - d_lo) * cfg.detuning_bins as f64) as usize).min(cfg.detuning_bins - 1);
                let cell = g_bin(g) * cfg.detuning_bins + di;
                rep[cell].get_or_insert(k);
                mass[cell] += d.weight;
            }
            for (cell, r) in rep.iter().enumerate() {
                let Some(k) = *r else { continue };
                let d = &self.donors[k];
                let g0 = coupling_strength(d.b1, l.sx, spin.gamma_e);
                let detuning = detunings[k];
                let rate = purcell_rate(g0, kappa, detuning);
                packets.push(SpinPacket {
                    x: d.x,
                    y: d.y,
                    g0,
                    transition_id: l.id,
                    detuning,
                    weight: mass[cell],
                    t1: if rate > 0.0 { 1.0 / rate } else { f64::INFINITY },
                    t2: pure_dephasing_time(cfg.t2, rate),
                });
            }
        }
        Ok(Ensemble {
            b0,
            packets,
            total_weight,
        })
    }
}

impl Ensemble {
    pub fn weight(&self) -> f64 {
        self.packets.iter().map(|p| p.weight).sum()
    }

    /// Multiplies every packet weight by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        let mut e = self.clone();
        for p in &mut e.packets {
            p.weight *= factor;
        }
        e.total_weight *= factor;
        e
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record([
            "x_m",
            "y_m",
            "g0_rad_s",
            "transition_id",
            "detuning_rad_s",
            "weight",
            "T1_s",
            "T2_s",
        ])?;
        for p in &self.packets {
            wr.write_record([
                format!("{:.17e}", p.x),
                format!("{:.17e}", p.y),
                format!("{:.17e}", p.g0),
                p.transition_id.to_string(),
                format!("{:.17e}", p.detuning),
                format!("{:.17e}", p.weight),
                format!("{:.17e}", p.t1),
                format!("{:.17e}", p.t2),
            ])?;
        }
        wr.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// rad/s, `counts.len() + 1` edges.
    pub edges: Vec<f64>,
    /// Donors per bin.
    pub counts: Vec<f64>,
}

/// Weighted histogram of `g0` over packets of one line, `bins` linear bins
/// from zero to the largest coupling.
pub fn coupling_histogram(ensemble: &Ensemble, transition_id: usize, bins: usize) -> Result<Histogram> {
    if bins == 0 {
        return Err(Error::InvalidInput("bins must be >= 1".into()));
    }
    let sel: Vec<&SpinPacket> = ensemble
        .packets
        .iter()
        .filter(|p| p.transition_id == transition_id)
        .collect();
    if sel.is_empty() {
        return Err(Error::InsufficientData(format!(
            "no packets for transition {transition_id}"
        )));
    }
    let g_max = sel.iter().map(|p| p.g0).fold(0.0, f64::max);
    let top = if g_max > 0.0 { g_max } else { 1.0 };
    let edges: Vec<f64> = (0..=bins).map(|k| top * k as f64 / bins as f64).collect();
    let mut counts = vec![0.0; bins];
    for p in sel {
        let k = ((p.g0 / top * bins as f64) as usize).min(bins - 1);
        counts[k] += p.weight;
    }
    Ok(Histogram { edges, counts })
}

impl Histogram {
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["g0_low_rad_s", "g0_high_rad_s", "donors"])?;
        for (k, c) in self.counts.iter().enumerate() {
            wr.write_record([
                format!("{:.17e}", self.edges[k]),
                format!("{:.17e}", self.edges[k + 1]),
                format!("{c:.17e}"),
            ])?;
        }
        wr.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sample::profile::{implant_profile, DEFAULT_DEPTH_RANGE, DEFAULT_PEAK_DENSITY};

    fn small_cfg() -> EnsembleConfig {
        EnsembleConfig {
            n_donors: 4000,
            detuning_window: None,
            ..Default::default()
        }
    }

    fn profile() -> ImplantProfile {
        implant_profile(DEFAULT_PEAK_DENSITY, DEFAULT_DEPTH_RANGE).unwrap()
    }

    #[test]
    fn uniform_field_gives_one_coupling_per_line() {
        let cfg = EnsembleConfig {
            field: FieldSource::Uniform { b1: 0.2e-6 },
            ..small_cfg()
        };
        let r = ResonatorModel::nanowire_s1();
        let e = build_ensemble(&profile(), &StrainMap::None, &r, &SpinSystem::bismuth(), 1e-3, &cfg, 7).unwrap();
        for id in 0..10 {
            let gs: Vec<f64> = e
                .packets
                .iter()
                .filter(|p| p.transition_id == id)
                .map(|p| p.g0)
                .collect();
            assert!(!gs.is_empty());
            assert!(gs.iter().all(|g| *g == gs[0]));
        }
    }

    #[test]
    fn weights_represent_donor_count() {
        let r = ResonatorModel::nanowire_s1();
        let p = profile();
        let cfg = small_cfg();
        let set = draw_donors(&p, &StrainMap::None, &r, &cfg, 3).unwrap();
        let expected = p.areal_dose() * 2.0 * cfg.lateral_extent * r.wire_length;
        assert!((set.total_weight() / expected - 1.0).abs() < 0.05);
        let e = set.aggregate(&SpinSystem::bismuth(), &r, 0.5e-3, &cfg).unwrap();
        assert!((e.weight() / e.total_weight - 1.0).abs() < 1e-12);
    }

    #[test]
    fn deterministic_and_thread_independent() {
        let r = ResonatorModel::nanowire_s1();
        let cfg = small_cfg();
        let strain = StrainMap::Analytic(crate::sample::FilmEdgeModel::thermal_mismatch(&r));
        let a = draw_donors(&profile(), &strain, &r, &cfg, 11).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool.install(|| draw_donors(&profile(), &strain, &r, &cfg, 11)).unwrap();
        assert_eq!(a, b);
        let c = draw_donors(&profile(), &strain, &r, &cfg, 12).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn doubling_density_doubles_weight_only() {
        let r = ResonatorModel::nanowire_s1();
        let cfg = small_cfg();
        let spin = SpinSystem::bismuth();
        let p = profile();
        let e1 = build_ensemble(&p, &StrainMap::None, &r, &spin, 1e-3, &cfg, 5).unwrap();
        let e2 = build_ensemble(&p.scaled(2.0), &StrainMap::None, &r, &spin, 1e-3, &cfg, 5).unwrap();
        assert!((e2.weight() / e1.weight() - 2.0).abs() < 1e-12);
        let h1 = coupling_histogram(&e1, 0, 20).unwrap();
        let h2 = coupling_histogram(&e2, 0, 20).unwrap();
        assert_eq!(h1.edges, h2.edges);
        let (s1, s2) = (h1.counts.iter().sum::<f64>(), h2.counts.iter().sum::<f64>());
        for (a, b) in h1.counts.iter().zip(&h2.counts) {
            assert!((a / s1 - b / s2).abs() < 1e-12);
        }
    }

    #[test]
    fn histogram_conserves_mass() {
        let r = ResonatorModel::nanowire_s1();
        let e = build_ensemble(
            &profile(),
            &StrainMap::None,
            &r,
            &SpinSystem::bismuth(),
            1e-3,
            &small_cfg(),
            9,
        )
        .unwrap();
        let line0: f64 = e
            .packets
            .iter()
            .filter(|p| p.transition_id == 0)
            .map(|p| p.weight)
            .sum();
        for bins in [1, 7, 50] {
            let h = coupling_histogram(&e, 0, bins).unwrap();
            assert!((h.counts.iter().sum::<f64>() / line0 - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn single_packet_single_bin() {
        let e = Ensemble {
            b0: 0.0,
            packets: vec![SpinPacket {
                x: 0.0,
                y: -1e-7,
                g0: 1e4,
                transition_id: 0,
                detuning: 0.0,
                weight: 3.0,
                t1: 1e-3,
                t2: 1e-3,
            }],
            total_weight: 3.0,
        };
        let h = coupling_histogram(&e, 0, 10).unwrap();
        assert_eq!(h.counts.iter().filter(|c| **c > 0.0).count(), 1);
    }

    #[test]
    fn purcell_times_are_consistent() {
        let r = ResonatorModel::nanowire_s1();
        let e = build_ensemble(
            &profile(),
            &StrainMap::None,
            &r,
            &SpinSystem::bismuth(),
            1e-3,
            &small_cfg(),
            2,
        )
        .unwrap();
        for p in e.packets.iter().take(50) {
            let rate = purcell_rate(p.g0, r.kappa(), p.detuning);
            assert!((p.t1 * rate - 1.0).abs() < 1e-12);
        }
    }
}
