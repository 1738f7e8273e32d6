//! Linear reflection coefficient and its least-squares fit.
//!
//! Convention: `S11 = (kappa_ext - kappa_int - 2i delta) / (kappa_ext + kappa_int + 2i delta)`
//! with `delta = omega - omega0`. An over-coupled resonator reflects `+1`
//! far from resonance and a positive real value on resonance.

use nalgebra::Complex;
use serde::{Deserialize, Serialize};

use super::ResonatorModel;
use crate::error::{Error, Result};
use crate::numerics::{levenberg_marquardt, linear_fit, LmOptions};

type C64 = Complex<f64>;

pub fn s11_linear(model: &ResonatorModel, omega: f64) -> C64 {
    s11_rates(model.kappa_ext(), model.kappa_int(), omega - model.omega0)
}

fn s11_rates(kappa_ext: f64, kappa_int: f64, delta: f64) -> C64 {
    C64::new(kappa_ext - kappa_int, -2.0 * delta) / C64::new(kappa_ext + kappa_int, 2.0 * delta)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReflectionTrace {
    /// rad/s
    pub frequencies: Vec<f64>,
    pub s11: Vec<C64>,
    /// W
    pub input_power: f64,
}

impl ReflectionTrace {
    pub fn from_model(model: &ResonatorModel, frequencies: Vec<f64>, input_power: f64) -> Self {
        let s11 = frequencies.iter().map(|&w| s11_linear(model, w)).collect();
        Self {
            frequencies,
            s11,
            input_power,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct S11Fit {
    pub omega0: f64,
    pub q_ext: f64,
    pub q_int: f64,
    /// `sqrt(sum |model - data|^2 / sum |data|^2)`
    pub fit_residual: f64,
    pub amplitude: f64,
    pub phase: f64,
    /// Cable delay, s.
    pub delay: f64,
    /// Frequency at which `phase` is referenced, rad/s.
    pub delay_reference: f64,
}

impl S11Fit {
    /// Fitted reflection at `omega`, including the nuisance terms.
    pub fn model(&self, omega: f64) -> C64 {
        let s = s11_rates(self.omega0 / self.q_ext, self.omega0 / self.q_int, omega - self.omega0);
        C64::from_polar(self.amplitude, self.phase - self.delay * (omega - self.delay_reference)) * s
    }
}

/// Parameter layout for the optimizer, all scaled by the linewidth guess:
/// `[(omega0 - centre)/k, ln(kappa_ext/k), ln(kappa_int/k), ln a, phi, tau k]`.
struct Scaled<'a> {
    centre: f64,
    kappa_guess: f64,
    u: Vec<f64>,
    data: &'a [C64],
}

impl Scaled<'_> {
    fn model_at(&self, p: &[f64], u: f64) -> C64 {
        let ke = p[1].exp();
        let ki = p[2].exp();
        let s = s11_rates(ke, ki, u - p[0]);
        C64::from_polar(p[3].exp(), p[4] - p[5] * u) * s
    }

    fn residuals(&self, p: &[f64]) -> Vec<f64> {
        let mut r = Vec::with_capacity(2 * self.u.len());
        for (&u, d) in self.u.iter().zip(self.data) {
            let e = self.model_at(p, u) - d;
            r.push(e.re);
            r.push(e.im);
        }
        r
    }
}

/// Fits a complex Lorentzian with amplitude, phase and delay nuisance
/// parameters. The dip minimum seeds `omega0` and the half-depth width of
/// `1 - |S11|^2` seeds the linewidth; both coupling regimes are tried.
pub fn fit_s11(trace: &ReflectionTrace) -> Result<S11Fit> {
    let n = trace.frequencies.len();
    if n != trace.s11.len() {
        return Err(Error::InvalidInput("frequency and S11 arrays differ in length".into()));
    }
    if n < 50 {
        return Err(Error::InsufficientData(format!(
            "S11 fit needs at least 50 points, got {n}"
        )));
    }
    if trace.frequencies.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidInput("frequencies must be strictly increasing".into()));
    }
    let f = &trace.frequencies;
    let span = f[n - 1] - f[0];
    let centre = 0.5 * (f[0] + f[n - 1]);

    let mag: Vec<f64> = trace.s11.iter().map(|s| s.norm()).collect();
    let edge = (n / 20).max(1);
    let a0 = (mag[..edge].iter().sum::<f64>() + mag[n - edge..].iter().sum::<f64>()) / (2 * edge) as f64;
    let half = (n / 80).max(1);
    let smooth: Vec<f64> = (0..n)
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(n);
            mag[lo..hi].iter().sum::<f64>() / (hi - lo) as f64 / a0
        })
        .collect();
    let (imin, &dmin) = smooth
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .expect("non-empty");
    let lor: Vec<f64> = smooth.iter().map(|m| 1.0 - m * m).collect();
    let peak = lor[imin];
    let no_dip = |what: &'static str| Error::NonConvergence {
        what,
        iterations: 0,
        residual: peak,
        last: vec![f[imin], a0],
    };
    if !(peak > 1e-3) {
        return Err(no_dip("S11 fit: no resonance dip in |S11|"));
    }
    let crossing = |range: &mut dyn Iterator<Item = usize>| -> Option<f64> {
        let mut prev = imin;
        for i in range {
            if lor[i] < 0.5 * peak {
                let t = (lor[prev] - 0.5 * peak) / (lor[prev] - lor[i]);
                return Some(f[prev] + t * (f[i] - f[prev]));
            }
            prev = i;
        }
        None
    };
    let left = crossing(&mut (0..imin).rev());
    let right = crossing(&mut (imin + 1..n));
    let (Some(left), Some(right)) = (left, right) else {
        return Err(no_dip("S11 fit: resonance not resolved inside the trace"));
    };
    let kappa_guess = (right - left).max(span / n as f64);
    let omega_guess = f[imin];

    let problem = Scaled {
        centre,
        kappa_guess,
        u: f.iter().map(|w| (w - centre) / kappa_guess).collect(),
        data: &trace.s11,
    };
    let depth = dmin.clamp(0.0, 0.999);
    let u0 = (omega_guess - centre) / kappa_guess;

    let mut best: Option<crate::numerics::LmResult> = None;
    let mut last_err = None;
    for over in [true, false] {
        let (ke, ki) = if over {
            ((1.0 + depth) / 2.0, (1.0 - depth) / 2.0)
        } else {
            ((1.0 - depth) / 2.0, (1.0 + depth) / 2.0)
        };
        let ki = ki.max(1e-4);
        let ke = ke.max(1e-4);
        // Phase and delay from the ratio of data to the bare Lorentzian.
        let mut us = Vec::new();
        let mut ph = Vec::new();
        let mut amp = 0.0;
        let mut count = 0.0;
        let mut last_phase: Option<f64> = None;
        for (&u, d) in problem.u.iter().zip(&trace.s11) {
            let s = s11_rates(ke, ki, u - u0);
            if s.norm() < 0.2 {
                continue;
            }
            let r = d / s;
            let mut p = r.arg();
            if let Some(lp) = last_phase {
                p += (2.0 * std::f64::consts::PI) * ((lp - p) / (2.0 * std::f64::consts::PI)).round();
            }
            last_phase = Some(p);
            us.push(u);
            ph.push(p);
            amp += r.norm();
            count += 1.0;
        }
        let (slope, intercept) = if us.len() >= 2 {
            linear_fit(&us, &ph)
        } else {
            (0.0, 0.0)
        };
        let amp = if count > 0.0 { amp / count } else { a0 };
        let start = [u0, ke.ln(), ki.ln(), amp.max(1e-300).ln(), intercept, -slope];
        match levenberg_marquardt(|p| problem.residuals(p), &start, &LmOptions::default()) {
            Ok(res) => {
                if best.as_ref().is_none_or(|b| res.cost < b.cost) {
                    best = Some(res);
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    let Some(res) = best else {
        return Err(last_err.expect("at least one attempt"));
    };
    let p = &res.params;
    let omega0 = problem.centre + p[0] * problem.kappa_guess;
    let kappa_ext = p[1].exp() * problem.kappa_guess;
    let kappa_int = p[2].exp() * problem.kappa_guess;
    let norm: f64 = trace.s11.iter().map(|s| s.norm_sqr()).sum();
    let fit_residual = (res.cost / norm).sqrt();
    let kappa = kappa_ext + kappa_int;
    if !(omega0 > f[0] && omega0 < f[n - 1]) || !(kappa < span) || !fit_residual.is_finite() {
        return Err(Error::NonConvergence {
            what: "S11 fit",
            iterations: res.iterations,
            residual: fit_residual,
            last: vec![omega0, omega0 / kappa_ext, omega0 / kappa_int],
        });
    }
    Ok(S11Fit {
        omega0,
        q_ext: omega0 / kappa_ext,
        q_int: omega0 / kappa_int,
        fit_residual,
        amplitude: p[3].exp(),
        phase: p[4],
        delay: p[5] / problem.kappa_guess,
        delay_reference: problem.centre,
    })
}

/// Column layout of a reflection CSV file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReflectionFormat {
    /// `freq_Hz, re_s11, im_s11`
    ReIm,
    /// `freq_Hz, mag_dB, phase_deg`
    MagPhase,
}

/// Reads a reflection trace; the first row is a header.
pub fn read_reflection_csv<R: std::io::Read>(
    reader: R,
    format: ReflectionFormat,
    input_power: f64,
) -> Result<ReflectionTrace> {
    let mut rd = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut frequencies = Vec::new();
    let mut s11 = Vec::new();
    for (row, rec) in rd.records().enumerate() {
        let rec = rec?;
        if rec.len() < 3 {
            return Err(Error::Format(format!(
                "row {}: expected 3 columns, got {}",
                row + 2,
                rec.len()
            )));
        }
        let num = |k: usize| -> Result<f64> {
            rec[k]
                .parse::<f64>()
                .map_err(|e| Error::Format(format!("row {}, column {}: {e}", row + 2, k + 1)))
        };
        let f_hz = num(0)?;
        let (a, b) = (num(1)?, num(2)?);
        let s = match format {
            ReflectionFormat::ReIm => C64::new(a, b),
            ReflectionFormat::MagPhase => C64::from_polar(10f64.powf(a / 20.0), b.to_radians()),
        };
        frequencies.push(crate::constants::hz(f_hz));
        s11.push(s);
    }
    Ok(ReflectionTrace {
        frequencies,
        s11,
        input_power,
    })
}

/// Writes `freq_Hz, re_s11, im_s11`.
pub fn write_reflection_csv<W: std::io::Write>(trace: &ReflectionTrace, w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["freq_Hz", "re_s11", "im_s11"])?;
    for (f, s) in trace.frequencies.iter().zip(&trace.s11) {
        wr.write_record([
            format!("{:.17e}", f / crate::constants::TWO_PI),
            format!("{:.17e}", s.re),
            format!("{:.17e}", s.im),
        ])?;
    }
    wr.flush()?;
    Ok(())
}
