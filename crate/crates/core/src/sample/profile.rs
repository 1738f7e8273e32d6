//! Donor implantation depth profile.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};

/// Depth of the cosine shoulders on each side of the plateau.
pub const DEFAULT_TAPER: f64 = 25e-9;
/// Peak donor concentration, m^-3 (8e16 cm^-3).
pub const DEFAULT_PEAK_DENSITY: f64 = 8e22;
pub const DEFAULT_DEPTH_RANGE: (f64, f64) = (50e-9, 100e-9);

/// Piecewise-linear density `N(d)` in donors/m^3 versus depth below the
/// silicon surface. Zero outside the grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImplantProfile {
    pub depth_grid: Vec<f64>,
    pub density: Vec<f64>,
}

/// Raised-cosine plateau: flat at `peak_density` on `depth_range`, with
/// half-cosine shoulders of width [`DEFAULT_TAPER`] on both sides.
pub fn implant_profile(peak_density: f64, depth_range: (f64, f64)) -> Result<ImplantProfile> {
    implant_profile_with_taper(peak_density, depth_range, DEFAULT_TAPER)
}

pub fn implant_profile_with_taper(peak_density: f64, depth_range: (f64, f64), taper: f64) -> Result<ImplantProfile> {
    let (d0, d1) = depth_range;
    ensure_finite("peak_density", peak_density)?;
    ensure_finite("taper", taper)?;
    if peak_density < 0.0 {
        return Err(Error::InvalidInput(format!("negative peak density {peak_density}")));
    }
    if !(d0 >= 0.0 && d1 > d0) {
        return Err(Error::InvalidInput(format!(
            "depth range must satisfy 0 <= min < max, got {d0}..{d1}"
        )));
    }
    if taper < 0.0 {
        return Err(Error::InvalidInput("taper must be >= 0".into()));
    }
    let start = (d0 - taper).max(0.0);
    let end = d1 + taper;
    let step = 0.25e-9;
    let n = ((end - start) / step).ceil() as usize;
    let mut depth_grid: Vec<f64> = (0..=n).map(|k| start + (end - start) * k as f64 / n as f64).collect();
    // Make the plateau edges grid nodes so the peak value is exact.
    for d in [d0, d1] {
        if let Err(pos) = depth_grid.binary_search_by(|g| g.total_cmp(&d)) {
            depth_grid.insert(pos, d);
        }
    }
    let shape = |d: f64| -> f64 {
        if d >= d0 && d <= d1 {
            1.0
        } else if taper == 0.0 {
            0.0
        } else if d < d0 {
            let u = ((d0 - d) / taper).min(1.0);
            0.5 * (1.0 + (std::f64::consts::PI * u).cos())
        } else {
            let u = ((d - d1) / taper).min(1.0);
            0.5 * (1.0 + (std::f64::consts::PI * u).cos())
        }
    };
    let density = depth_grid.iter().map(|&d| peak_density * shape(d)).collect();
    ImplantProfile::new(depth_grid, density)
}

impl ImplantProfile {
    pub fn new(depth_grid: Vec<f64>, density: Vec<f64>) -> Result<Self> {
        if depth_grid.len() != density.len() || depth_grid.len() < 2 {
            return Err(Error::InvalidInput(
                "profile needs matching depth/density arrays with >= 2 nodes".into(),
            ));
        }
        if depth_grid.windows(2).any(|w| !(w[1] > w[0])) || depth_grid[0] < 0.0 {
            return Err(Error::InvalidInput(
                "profile depths must be >= 0 and strictly increasing".into(),
            ));
        }
        if let Some(v) = density.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidInput(format!("negative or non-finite density {v}")));
        }
        Ok(Self { depth_grid, density })
    }

    /// Linear interpolation, exact at nodes, zero outside the grid.
    pub fn density_at(&self, depth: f64) -> f64 {
        let g = &self.depth_grid;
        let n = g.len();
        if depth < g[0] || depth > g[n - 1] {
            return 0.0;
        }
        let (i, t) = crate::numerics::locate(g, depth);
        if t == 0.0 {
            self.density[i]
        } else if t == 1.0 {
            self.density[i + 1]
        } else {
            self.density[i] * (1.0 - t) + self.density[i + 1] * t
        }
    }

    pub fn peak(&self) -> f64 {
        self.density.iter().copied().fold(0.0, f64::max)
    }

    /// Areal dose, donors/m^2.
    pub fn areal_dose(&self) -> f64 {
        self.cumulative().last().copied().unwrap_or(0.0)
    }

    fn cumulative(&self) -> Vec<f64> {
        let mut acc = 0.0;
        let mut out = Vec::with_capacity(self.density.len());
        out.push(0.0);
        for k in 1..self.density.len() {
            acc += 0.5 * (self.density[k] + self.density[k - 1]) * (self.depth_grid[k] - self.depth_grid[k - 1]);
            out.push(acc);
        }
        out
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            depth_grid: self.depth_grid.clone(),
            density: self.density.iter().map(|d| d * factor).collect(),
        }
    }

    /// Inverse-CDF sampler for the depth distribution.
    pub fn sampler(&self) -> Result<DepthSampler> {
        let cdf = self.cumulative();
        let total = *cdf.last().expect("non-empty");
        if !(total > 0.0) {
            return Err(Error::InvalidInput("implant profile has zero dose".into()));
        }
        Ok(DepthSampler {
            depth: self.depth_grid.clone(),
            density: self.density.clone(),
            cdf,
            total,
        })
    }

    /// Reads `depth_m, density_m3` rows (header required).
    pub fn read_csv<R: std::io::Read>(reader: R) -> Result<Self> {
        let mut rd = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let mut depth = Vec::new();
        let mut density = Vec::new();
        for (row, rec) in rd.records().enumerate() {
            let rec = rec?;
            if rec.len() < 2 {
                return Err(Error::Format(format!("profile row {}: expected 2 columns", row + 2)));
            }
            let parse = |k: usize| -> Result<f64> {
                rec[k]
                    .parse()
                    .map_err(|e| Error::Format(format!("profile row {}, column {}: {e}", row + 2, k + 1)))
            };
            depth.push(parse(0)?);
            density.push(parse(1)?);
        }
        Self::new(depth, density)
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["depth_m", "density_m3"])?;
        for (d, n) in self.depth_grid.iter().zip(&self.density) {
            wr.write_record([format!("{d:.17e}"), format!("{n:.17e}")])?;
        }
        wr.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct DepthSampler {
    depth: Vec<f64>,
    density: Vec<f64>,
    cdf: Vec<f64>,
    total: f64,
}

impl DepthSampler {
    /// Maps `u` in `[0, 1)` to a depth; exact inverse of the piecewise-linear density.
    pub fn depth(&self, u: f64) -> f64 {
        let target = u.clamp(0.0, 1.0) * self.total;
        let k = self.cdf.partition_point(|&c| c < target).clamp(1, self.cdf.len() - 1);
        let (d0, d1) = (self.depth[k - 1], self.depth[k]);
        let (n0, n1) = (self.density[k - 1], self.density[k]);
        let rem = target - self.cdf[k - 1];
        let h = d1 - d0;
        if rem <= 0.0 {
            return d0;
        }
        let slope = (n1 - n0) / h;
        // Solve n0 s + slope s^2 / 2 = rem for s in [0, h].
        let s = if slope.abs() * h < 1e-12 * n0.max(n1) {
            if n0 > 0.0 {
                rem / n0
            } else {
                0.0
            }
        } else {
            let disc = (n0 * n0 + 2.0 * slope * rem).max(0.0);
            2.0 * rem / (n0 + disc.sqrt())
        };
        d0 + s.clamp(0.0, h)
    }
}
