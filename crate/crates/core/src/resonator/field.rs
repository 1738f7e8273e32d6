//! Single-photon magnetic field around the nanowire.
//!
//! Cross-section coordinates: origin at the wire centre, `x` across the
//! wire, `y` pointing away from the substrate. The wire occupies
//! `|x| <= w/2, |y| <= t/2`; the silicon surface is the plane `y = -t/2`.
//! Current flows along `z` (parallel to B0) with uniform density.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ResonatorModel;
use crate::constants::{HBAR, MU0};
use crate::error::{Error, Result};
use crate::numerics::gauss_legendre;

/// Vacuum current `delta_i = omega0 sqrt(hbar / (2 Zc))`, in amperes.
pub fn photon_current(model: &ResonatorModel) -> f64 {
    model.omega0 * (HBAR / (2.0 * model.impedance_zc)).sqrt()
}

const QUAD_ORDER: usize = 8;
const QUAD_TOL: f64 = 1e-9;
const QUAD_MAX_PANELS: usize = 256;

/// `(Bx, By)` in tesla for one photon in the resonator, at `point = (x, y)`.
///
/// Composite Gauss-Legendre over the conductor cross-section; the panel
/// count doubles until successive estimates agree to 1e-9 relative.
pub fn b1_field(model: &ResonatorModel, point: (f64, f64)) -> Result<[f64; 2]> {
    let (x, y) = point;
    // Evaluate on the x >= 0 half; the mirror image flips By only.
    let (bx, by) = rectangle_field(model, x.abs(), y)?;
    let by = if x < 0.0 { -by } else { by };
    Ok([bx, by])
}

fn rectangle_field(model: &ResonatorModel, x: f64, y: f64) -> Result<(f64, f64)> {
    let w = model.wire_width;
    let t = model.wire_thickness;
    let current = photon_current(model);
    let density = current / (w * t);
    let pref = MU0 * density / (2.0 * std::f64::consts::PI);
    let (nodes, weights) = gauss_legendre(QUAD_ORDER);

    let integrate = |panels: usize| -> (f64, f64) {
        let hx = w / panels as f64;
        let hy = t / panels as f64;
        let mut sx = 0.0;
        let mut sy = 0.0;
        for pi in 0..panels {
            let x0 = -w / 2.0 + (pi as f64 + 0.5) * hx;
            for pj in 0..panels {
                let y0 = -t / 2.0 + (pj as f64 + 0.5) * hy;
                for (a, wa) in nodes.iter().zip(&weights) {
                    let xs = x0 + 0.5 * hx * a;
                    for (b, wb) in nodes.iter().zip(&weights) {
                        let ys = y0 + 0.5 * hy * b;
                        let dx = x - xs;
                        let dy = y - ys;
                        let r2 = dx * dx + dy * dy;
                        if r2 == 0.0 {
                            continue;
                        }
                        let wgt = wa * wb / r2;
                        sx -= dy * wgt;
                        sy += dx * wgt;
                    }
                }
            }
        }
        let jac = 0.25 * hx * hy;
        (pref * sx * jac, pref * sy * jac)
    };

    let mut panels = 1;
    let mut prev = integrate(panels);
    loop {
        panels *= 2;
        let cur = integrate(panels);
        let mag = cur.0.hypot(cur.1).max(f64::MIN_POSITIVE);
        let change = (cur.0 - prev.0).hypot(cur.1 - prev.1) / mag;
        if change <= QUAD_TOL {
            return Ok(cur);
        }
        if panels >= QUAD_MAX_PANELS {
            return Err(Error::Quadrature {
                tolerance: QUAD_TOL,
                achieved: change,
            });
        }
        prev = cur;
    }
}

/// `g0 = gamma_e <0|Sx|1> |B1_perp|`, rad/s.
pub fn coupling_strength(b1_perp: f64, sx_element: f64, gamma_e: f64) -> f64 {
    gamma_e * sx_element * b1_perp.abs()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldSample {
    pub x: f64,
    pub y: f64,
    pub bx: f64,
    pub by: f64,
}

impl FieldSample {
    pub fn magnitude(&self) -> f64 {
        self.bx.hypot(self.by)
    }
}

/// Field on the grid `xs x ys` (row-major in `ys`), evaluated in parallel.
pub fn field_map(model: &ResonatorModel, xs: &[f64], ys: &[f64]) -> Result<Vec<FieldSample>> {
    let points: Vec<(f64, f64)> = ys.iter().flat_map(|&y| xs.iter().map(move |&x| (x, y))).collect();
    points
        .par_iter()
        .map(|&(x, y)| {
            let [bx, by] = b1_field(model, (x, y))?;
            Ok(FieldSample { x, y, bx, by })
        })
        .collect()
}

/// Writes a field map as CSV `x_m, y_m, Bx_T, By_T, |B|_T`.
pub fn write_field_map_csv<W: std::io::Write>(samples: &[FieldSample], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["x_m", "y_m", "Bx_T", "By_T", "|B|_T"])?;
    for s in samples {
        wr.write_record([
            format!("{:.17e}", s.x),
            format!("{:.17e}", s.y),
            format!("{:.17e}", s.bx),
            format!("{:.17e}", s.by),
            format!("{:.17e}", s.magnitude()),
        ])?;
    }
    wr.flush()?;
    Ok(())
}
