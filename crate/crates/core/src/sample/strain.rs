//! Hydrostatic strain under the contracting aluminium wire.
//!
//! The film pulls the substrate surface at each wire edge with a tangential
//! line force `f = sigma_film * t` pointing towards the wire centre. Each
//! force produces the plane-strain Flamant field on the half-space,
//! `sigma_rr = -(2 f / (pi r)) cos(phi)` with `phi` measured from the force
//! direction; `sigma_zz = nu (sigma_xx + sigma_yy)` and
//! `eps_h = tr(sigma) / (3 K)`.

use serde::{Deserialize, Serialize};

use crate::constants::{hz, materials};
use crate::error::{Error, Result};
use crate::numerics::Grid2;
use crate::resonator::ResonatorModel;

/// Sanity bound on `|eps_h|`.
pub const STRAIN_BOUND: f64 = 1e-2;
pub const DEFAULT_R_MIN: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilmEdgeModel {
    pub wire_width: f64,
    pub wire_thickness: f64,
    /// Biaxial film stress, Pa (positive = tensile film).
    pub film_stress: f64,
    pub substrate_poisson: f64,
    pub substrate_bulk_modulus: f64,
    pub r_min: f64,
}

impl FilmEdgeModel {
    /// Stress from the differential contraction of Al on Si,
    /// `E_Al / (1 - nu_Al) * (contraction_Al - contraction_Si)`.
    pub fn thermal_mismatch(resonator: &ResonatorModel) -> Self {
        let m = materials();
        let mismatch = m.aluminum.thermal_contraction - m.silicon.thermal_contraction;
        Self {
            wire_width: resonator.wire_width,
            wire_thickness: resonator.wire_thickness,
            film_stress: m.aluminum.young_modulus_pa / (1.0 - m.aluminum.poisson_ratio) * mismatch,
            substrate_poisson: m.silicon.poisson_ratio,
            substrate_bulk_modulus: m.silicon.bulk_modulus_pa,
            r_min: DEFAULT_R_MIN,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("wire_width", self.wire_width),
            ("wire_thickness", self.wire_thickness),
            ("substrate_bulk_modulus", self.substrate_bulk_modulus),
            ("r_min", self.r_min),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidInput(format!("{name} must be positive, got {v}")));
            }
        }
        if !self.film_stress.is_finite() || !(0.0..0.5).contains(&self.substrate_poisson) {
            return Err(Error::InvalidInput(
                "film stress must be finite and Poisson ratio in [0, 0.5)".into(),
            ));
        }
        Ok(())
    }

    pub fn line_force(&self) -> f64 {
        self.film_stress * self.wire_thickness
    }

    /// Strain from one edge force at surface point `(x0, surface_y)` pointing
    /// along `direction` (+1 or -1 in x). Returns the value and whether `r`
    /// was clamped.
    pub fn single_edge(&self, x0: f64, direction: f64, x: f64, y: f64) -> (f64, bool) {
        let surface = -self.wire_thickness / 2.0;
        let (dx, dy) = (x - x0, y - surface);
        let r_true = dx.hypot(dy);
        let clamped = r_true < self.r_min;
        let r = r_true.max(self.r_min);
        let cos_phi = if r_true > 0.0 { direction * dx / r_true } else { 0.0 };
        let sigma_rr = -2.0 * self.line_force() / (std::f64::consts::PI * r) * cos_phi;
        let trace = (1.0 + self.substrate_poisson) * sigma_rr;
        (trace / (3.0 * self.substrate_bulk_modulus), clamped)
    }

    /// Superposed strain of both inward edge forces at `(x, y)`.
    pub fn strain(&self, x: f64, y: f64) -> f64 {
        let half = self.wire_width / 2.0;
        let (right, c1) = self.single_edge(half, -1.0, x, y);
        let (left, c2) = self.single_edge(-half, 1.0, x, y);
        if c1 || c2 {
            log::warn!(
                "strain evaluated within r_min = {:e} m of a wire edge; radius clamped",
                self.r_min
            );
        }
        saturate(right + left)
    }
}

fn saturate(eps: f64) -> f64 {
    if eps.abs() > STRAIN_BOUND {
        log::warn!("hydrostatic strain {eps:e} exceeds the sanity bound; saturated");
        eps.clamp(-STRAIN_BOUND, STRAIN_BOUND)
    } else {
        eps
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrainSource {
    Analytic,
    Imported,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GriddedStrain {
    pub grid: Grid2,
    pub source: StrainSource,
}

/// Hydrostatic strain field in the wire cross-section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrainMap {
    /// No strain anywhere.
    None,
    Analytic(FilmEdgeModel),
    Gridded(GriddedStrain),
}

pub fn strain_analytic(model: FilmEdgeModel) -> Result<StrainMap> {
    model.validate()?;
    Ok(StrainMap::Analytic(model))
}

impl StrainMap {
    pub fn epsilon_h(&self, x: f64, y: f64) -> f64 {
        match self {
            StrainMap::None => 0.0,
            StrainMap::Analytic(m) => m.strain(x, y),
            StrainMap::Gridded(g) => saturate(g.grid.at(x, y)),
        }
    }

    /// Samples the map onto a grid.
    pub fn to_grid(&self, xs: Vec<f64>, ys: Vec<f64>) -> Result<GriddedStrain> {
        let values = ys
            .iter()
            .flat_map(|&y| xs.iter().map(move |&x| (x, y)))
            .map(|(x, y)| self.epsilon_h(x, y))
            .collect();
        let source = match self {
            StrainMap::Gridded(g) => g.source,
            _ => StrainSource::Analytic,
        };
        Ok(GriddedStrain {
            grid: Grid2::new(xs, ys, values)?,
            source,
        })
    }
}

impl GriddedStrain {
    /// Writes `x_m, y_m, eps_h` with `x` varying fastest.
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["x_m", "y_m", "eps_h"])?;
        let nx = self.grid.xs.len();
        for (j, y) in self.grid.ys.iter().enumerate() {
            for (i, x) in self.grid.xs.iter().enumerate() {
                wr.write_record([
                    format!("{x:.17e}"),
                    format!("{y:.17e}"),
                    format!("{:.17e}", self.grid.values[j * nx + i]),
                ])?;
            }
        }
        wr.flush()?;
        Ok(())
    }
}

/// Reads a rectilinear `x_m, y_m, eps_h` grid in any row order.
pub fn strain_import<R: std::io::Read>(reader: R) -> Result<StrainMap> {
    let mut rd = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut rows = Vec::new();
    for (k, rec) in rd.records().enumerate() {
        let rec = rec?;
        if rec.len() < 3 {
            return Err(Error::Format(format!("strain row {}: expected 3 columns", k + 2)));
        }
        let mut v = [0.0; 3];
        for (c, slot) in v.iter_mut().enumerate() {
            *slot = rec[c]
                .parse()
                .map_err(|e| Error::Format(format!("strain row {}, column {}: {e}", k + 2, c + 1)))?;
        }
        rows.push(v);
    }
    let axis = |c: usize| {
        let mut a: Vec<f64> = rows.iter().map(|r| r[c]).collect();
        a.sort_by(f64::total_cmp);
        a.dedup();
        a
    };
    let xs = axis(0);
    let ys = axis(1);
    if xs.len() < 2 || ys.len() < 2 || xs.len() * ys.len() != rows.len() {
        return Err(Error::Format(format!(
            "strain grid is not rectilinear: {} rows for {} x {} distinct coordinates",
            rows.len(),
            xs.len(),
            ys.len()
        )));
    }
    let nx = xs.len();
    let mut values = vec![f64::NAN; rows.len()];
    for r in &rows {
        let i = xs.binary_search_by(|v| v.total_cmp(&r[0])).expect("present");
        let j = ys.binary_search_by(|v| v.total_cmp(&r[1])).expect("present");
        if !values[j * nx + i].is_nan() {
            return Err(Error::Format(format!("duplicate strain node ({}, {})", r[0], r[1])));
        }
        values[j * nx + i] = r[2];
    }
    Ok(StrainMap::Gridded(GriddedStrain {
        grid: Grid2::new(xs, ys, values)?,
        source: StrainSource::Imported,
    }))
}

/// `delta_A = (dA/d eps) * eps`, rad/s, with the bundled coefficient.
pub fn hyperfine_shift(epsilon_h: f64) -> f64 {
    hyperfine_shift_with(epsilon_h, hz(materials().bismuth.da_deps_hz))
}

pub fn hyperfine_shift_with(epsilon_h: f64, da_deps: f64) -> f64 {
    da_deps * epsilon_h
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn model() -> FilmEdgeModel {
        FilmEdgeModel::thermal_mismatch(&ResonatorModel::nanowire_s1())
    }

    #[test]
    fn single_edge_decays_as_inverse_r() {
        let m = model();
        let s = -m.wire_thickness / 2.0;
        let (a, _) = m.single_edge(0.0, 1.0, 0.6e-6, s - 0.8e-6);
        let (b, _) = m.single_edge(0.0, 1.0, 1.2e-6, s - 1.6e-6);
        assert!((a / b - 2.0).abs() < 1e-12);
    }

    #[test]
    fn single_edge_is_antisymmetric() {
        let m = model();
        let s = -m.wire_thickness / 2.0;
        for &(x, d) in &[(30e-9, 50e-9), (200e-9, 10e-9), (1e-9, 300e-9)] {
            let (a, _) = m.single_edge(0.0, 1.0, x, s - d);
            let (b, _) = m.single_edge(0.0, 1.0, -x, s - d);
            assert_eq!(a, -b);
        }
    }

    #[test]
    fn compressive_under_wire() {
        let m = model();
        let y = -m.wire_thickness / 2.0 - 75e-9;
        assert!(m.strain(0.0, y) < 0.0);
        assert!(m.strain(40e-9, y) < 0.0);
        assert!(m.strain(300e-9, y) > 0.0);
    }

    #[test]
    fn donor_layer_strain_magnitude() {
        let m = model();
        let surface = -m.wire_thickness / 2.0;
        let mut vals = Vec::new();
        for i in 0..=40 {
            for j in 0..=10 {
                let x = -100e-9 + 5e-9 * i as f64;
                let d = 50e-9 + 5e-9 * j as f64;
                vals.push(m.strain(x, surface - d));
            }
        }
        let peak = vals.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        assert!((1e-4..=1e-2).contains(&peak), "{peak:e}");
        // Spread of the zero-field splitting 5A near the wire: ~100 MHz.
        let shifts: Vec<f64> = vals.iter().map(|&e| 5.0 * hyperfine_shift(e) / hz(1.0)).collect();
        let mean = shifts.iter().sum::<f64>() / shifts.len() as f64;
        let sd = (shifts.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / shifts.len() as f64).sqrt();
        assert!((3e7..=3e8).contains(&sd), "{sd:e}");
    }

    #[test]
    fn clamps_at_edge() {
        let m = model();
        let v = m.strain(m.wire_width / 2.0 + 1e-12, -m.wire_thickness / 2.0 - 1e-12);
        assert!(v.is_finite() && v.abs() <= STRAIN_BOUND);
    }

    #[test]
    fn hyperfine_shift_values() {
        assert_eq!(hyperfine_shift(0.0), 0.0);
        let d5a = 5.0 * hyperfine_shift(6.9e-4) / hz(1.0);
        assert!((d5a - 100e6).abs() < 0.5e6, "{d5a}");
        assert_eq!(hyperfine_shift(2.0 * 3e-4), 2.0 * hyperfine_shift(3e-4));
    }

    #[test]
    fn constant_grid_interpolates_constant() {
        let xs = vec![-1e-7, 0.0, 2e-7];
        let ys = vec![-2e-7, -1e-7];
        let g = GriddedStrain {
            grid: Grid2::new(xs, ys, vec![3e-4; 6]).unwrap(),
            source: StrainSource::Imported,
        };
        let map = StrainMap::Gridded(g);
        for &(x, y) in &[(0.5e-7, -1.5e-7), (-1e-7, -2e-7), (5e-7, 0.0)] {
            assert_eq!(map.epsilon_h(x, y), 3e-4);
        }
    }

    #[test]
    fn export_import_round_trip() {
        let m = StrainMap::Analytic(model());
        let g = m
            .to_grid(
                (0..7).map(|i| -150e-9 + 50e-9 * i as f64).collect(),
                (0..5).map(|j| -200e-9 + 30e-9 * j as f64).collect(),
            )
            .unwrap();
        let mut buf = Vec::new();
        g.write_csv(&mut buf).unwrap();
        let back = strain_import(&buf[..]).unwrap();
        let StrainMap::Gridded(b) = &back else { panic!() };
        assert_eq!(b.grid, g.grid);
        for (k, &x) in g.grid.xs.iter().enumerate() {
            let y = g.grid.ys[2];
            assert_eq!(back.epsilon_h(x, y), g.grid.values[2 * 7 + k]);
        }
    }

    #[test]
    fn non_rectilinear_rejected() {
        let text = "x_m,y_m,eps_h\n0,0,1e-4\n1e-7,0,1e-4\n0,1e-7,1e-4\n";
        assert!(matches!(strain_import(text.as_bytes()), Err(Error::Format(_))));
    }

    proptest! {
        #[test]
        fn bounded_everywhere(x in -2e-6f64..2e-6, d in 0.0f64..2e-6) {
            let m = model();
            let eps = m.strain(x, -m.wire_thickness / 2.0 - d);
            prop_assert!(eps.abs() <= STRAIN_BOUND);
        }

        #[test]
        fn mirror_symmetric_total(x in 0.0f64..1e-6, d in 1e-9f64..1e-6) {
            let m = model();
            let y = -m.wire_thickness / 2.0 - d;
            let (a, b) = (m.strain(x, y), m.strain(-x, y));
            prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1e-12));
        }
    }
}
