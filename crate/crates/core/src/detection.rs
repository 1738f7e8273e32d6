//! Detected records: quantum-limited noise, phase cycling, echo integrals,
//! spin counting, sensitivity and averaging statistics.

use nalgebra::Complex;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dynamics::TraceRecord;
use crate::error::{Error, Result};
use crate::numerics::golden_min;

type C64 = Complex<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AmplifierMode {
    /// Both quadratures amplified; requires `n_tilde >= 1/2`.
    PhasePreserving,
    /// Only the quadrature at `phase` is kept; the conjugate one is discarded.
    Degenerate { phase: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseModel {
    /// Input-referred noise, photons.
    pub n_tilde: f64,
    pub gain: f64,
    pub mode: AmplifierMode,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self {
            n_tilde: 0.5,
            gain: 1.0,
            mode: AmplifierMode::Degenerate { phase: 0.0 },
        }
    }
}

impl NoiseModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.n_tilde >= 0.0) || !self.n_tilde.is_finite() {
            return Err(Error::InvalidInput("n_tilde must be >= 0".into()));
        }
        if matches!(self.mode, AmplifierMode::PhasePreserving) && self.n_tilde < 0.5 {
            return Err(Error::InvalidInput(
                "phase-preserving detection needs n_tilde >= 1/2".into(),
            ));
        }
        if !(self.gain > 0.0) || !self.gain.is_finite() {
            return Err(Error::InvalidInput("gain must be positive".into()));
        }
        Ok(())
    }
}

/// Sample spacing per sample; the first sample takes the spacing of the second.
fn sample_spacing(times: &[f64]) -> Result<Vec<f64>> {
    if times.len() < 2 {
        return Err(Error::InsufficientData("trace needs at least two samples".into()));
    }
    let mut dt: Vec<f64> = times.windows(2).map(|w| w[1] - w[0]).collect();
    dt.insert(0, dt[0]);
    if dt.iter().any(|&d| !(d > 0.0)) {
        return Err(Error::InvalidInput("trace times must increase".into()));
    }
    Ok(dt)
}

/// Adds white Gaussian noise of variance `n_tilde / (2 dt)` per quadrature.
/// In degenerate mode the trace is first projected on the amplified
/// quadrature and `Q` is zeroed.
pub fn add_noise(trace: &TraceRecord, noise: &NoiseModel, seed: u64) -> Result<TraceRecord> {
    noise.validate()?;
    let mut out = trace.clone();
    if trace.is_empty() {
        return Ok(out);
    }
    let dt = if noise.n_tilde > 0.0 {
        sample_spacing(&trace.times)?
    } else {
        vec![1.0; trace.len()]
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (k, &h) in dt.iter().enumerate() {
        let sigma = (noise.n_tilde / (2.0 * h)).sqrt();
        let mut nz = || -> f64 {
            if sigma > 0.0 {
                let z: f64 = StandardNormal.sample(&mut rng);
                sigma * z
            } else {
                0.0
            }
        };
        match noise.mode {
            AmplifierMode::PhasePreserving => {
                out.i[k] = noise.gain * (trace.i[k] + nz());
                out.q[k] = noise.gain * (trace.q[k] + nz());
            }
            AmplifierMode::Degenerate { phase } => {
                let s = (C64::new(trace.i[k], trace.q[k]) * C64::from_polar(1.0, -phase)).re;
                out.i[k] = noise.gain * (s + nz());
                out.q[k] = 0.0;
            }
        }
    }
    out.metadata.seed = Some(seed);
    Ok(out)
}

/// `(plus - minus) / 2`.
pub fn phase_cycle(plus: &TraceRecord, minus: &TraceRecord) -> Result<TraceRecord> {
    if plus.len() != minus.len() {
        return Err(Error::InvalidInput(format!(
            "phase cycle on traces of {} and {} samples",
            plus.len(),
            minus.len()
        )));
    }
    plus.half_difference(minus)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Integration {
    Boxcar,
    /// Weighted by the noiseless template (complex samples aligned with the trace).
    Matched(Vec<C64>),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EchoResult {
    pub integral_ae: f64,
    pub window: (f64, f64),
    /// Expected SNR for white noise of the given model, when requested.
    pub snr: Option<f64>,
    pub seed: Option<u64>,
}

/// Integral of the quadrature at `phase` over samples with `t0 <= t <= t1`.
///
/// Boxcar: `sum Re(a e^{-i phase}) dt`. Matched: `sum Re(T* a) dt /
/// sqrt(sum |T|^2 dt / W)` with `W` the window length, which equals the
/// boxcar value for a flat real template.
pub fn echo_integral(trace: &TraceRecord, window: (f64, f64), mode: &Integration, phase: f64) -> Result<EchoResult> {
    let (t0, t1) = window;
    if !(t1 > t0) {
        return Err(Error::InvalidInput("empty integration window".into()));
    }
    if trace.is_empty() || t0 < trace.times[0] - 1e-15 || t1 > trace.times[trace.len() - 1] + 1e-15 {
        return Err(Error::InvalidInput("integration window outside the trace".into()));
    }
    let dt = sample_spacing(&trace.times)?;
    let idx: Vec<usize> = (0..trace.len())
        .filter(|&k| trace.times[k] >= t0 && trace.times[k] <= t1)
        .collect();
    if idx.is_empty() {
        return Err(Error::InvalidInput("no samples in integration window".into()));
    }
    let rot = C64::from_polar(1.0, -phase);
    let a = |k: usize| C64::new(trace.i[k], trace.q[k]);
    let integral = match mode {
        Integration::Boxcar => idx.iter().map(|&k| (a(k) * rot).re * dt[k]).sum(),
        Integration::Matched(template) => {
            if template.len() != trace.len() {
                return Err(Error::InvalidInput("template length differs from trace".into()));
            }
            let w: f64 = idx.iter().map(|&k| dt[k]).sum();
            let norm: f64 = idx.iter().map(|&k| template[k].norm_sqr() * dt[k]).sum::<f64>() / w;
            if !(norm > 0.0) {
                return Err(Error::InvalidInput("template vanishes in window".into()));
            }
            idx.iter().map(|&k| (template[k].conj() * a(k)).re * dt[k]).sum::<f64>() / norm.sqrt()
        }
    };
    Ok(EchoResult {
        integral_ae: integral,
        window,
        snr: None,
        seed: trace.metadata.seed,
    })
}

/// Expected SNR of [`echo_integral`] on the noiseless `trace` with white
/// noise of variance `n_tilde / (2 dt)` on the integrated quadrature.
pub fn echo_snr(trace: &TraceRecord, window: (f64, f64), mode: &Integration, phase: f64, n_tilde: f64) -> Result<f64> {
    let signal = echo_integral(trace, window, mode, phase)?.integral_ae;
    let dt = sample_spacing(&trace.times)?;
    let idx = (0..trace.len()).filter(|&k| trace.times[k] >= window.0 && trace.times[k] <= window.1);
    // Var(sum w n dt) = sum w^2 (n_tilde / 2dt) dt^2.
    let var = match mode {
        Integration::Boxcar => idx.map(|k| 0.5 * n_tilde * dt[k]).sum::<f64>(),
        Integration::Matched(t) => {
            let idx: Vec<usize> = idx.collect();
            let w: f64 = idx.iter().map(|&k| dt[k]).sum();
            let norm: f64 = idx.iter().map(|&k| t[k].norm_sqr() * dt[k]).sum::<f64>() / w;
            // Only the component of T along the detected quadrature weights the noise.
            let rot = C64::from_polar(1.0, -phase);
            idx.iter()
                .map(|&k| {
                    let wk = (t[k].conj() * rot.conj()).re;
                    0.5 * n_tilde * dt[k] * wk * wk
                })
                .sum::<f64>()
                / norm
        }
    };
    Ok(signal.abs() / var.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpinCountEstimate {
    pub n_spin: f64,
    pub scale: f64,
    /// `dN / d(ratio)` at the optimum, from a central difference.
    pub dn_dratio: f64,
}

/// Scale factor on the ensemble that makes `simulate(scale)` reproduce
/// `measured_ratio`, searched on `[0, max_scale]`; the count is `scale *
/// baseline_count`.
pub fn estimate_spin_count<F>(
    measured_ratio: f64,
    baseline_count: f64,
    max_scale: f64,
    mut simulate: F,
) -> Result<SpinCountEstimate>
where
    F: FnMut(f64) -> Result<f64>,
{
    if measured_ratio == 0.0 {
        return Ok(SpinCountEstimate {
            n_spin: 0.0,
            scale: 0.0,
            dn_dratio: f64::NAN,
        });
    }
    if !(max_scale > 0.0) {
        return Err(Error::InvalidInput("max_scale must be positive".into()));
    }
    let (scale, _) = golden_min(
        |s| simulate(s).map(|r| (r - measured_ratio).powi(2)),
        0.0,
        max_scale,
        1e-6 * max_scale,
        200,
    )?;
    if scale > max_scale * (1.0 - 1e-4) {
        return Err(Error::NotFound(format!(
            "spin count minimum not bracketed below scale {max_scale}"
        )));
    }
    let h = 1e-3 * scale.max(1e-3 * max_scale);
    let slope = (simulate(scale + h)? - simulate((scale - h).max(0.0))?) / (scale + h - (scale - h).max(0.0));
    Ok(SpinCountEstimate {
        n_spin: scale * baseline_count,
        scale,
        dn_dratio: baseline_count / slope,
    })
}

/// `N_min = kappa sqrt(n_tilde) / (2 P g0)`.
pub fn sensitivity_formula(kappa: f64, g0: f64, n_tilde: f64, polarization: f64) -> f64 {
    kappa / (2.0 * polarization * g0) * n_tilde.sqrt()
}

/// `(n_spin / snr_single, n_spin / snr_single / sqrt(rep_rate))`.
pub fn sensitivity_pipeline(snr_single: f64, n_spin: f64, rep_rate: f64) -> Result<(f64, f64)> {
    if !(snr_single > 0.0) || !(rep_rate > 0.0) {
        return Err(Error::InvalidInput("snr and repetition rate must be positive".into()));
    }
    let n_min = n_spin / snr_single;
    Ok((n_min, n_min / rep_rate.sqrt()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SigmaPoint {
    pub n: usize,
    pub sigma: f64,
    pub blocks: usize,
    /// Standard error of `sigma` for Gaussian block means.
    pub stderr: f64,
}

/// Standard deviation of disjoint block means of size `n` of every
/// `decimation`-th sample.
pub fn sigma_scaling(series: &[f64], n_values: &[usize], decimation: usize) -> Result<Vec<SigmaPoint>> {
    if decimation == 0 {
        return Err(Error::InvalidInput("decimation must be >= 1".into()));
    }
    let max_n = n_values.iter().copied().max().unwrap_or(0);
    if max_n == 0 {
        return Err(Error::InvalidInput("block sizes must be >= 1".into()));
    }
    let dec: Vec<f64> = series.iter().step_by(decimation).copied().collect();
    if dec.len() < 2 * max_n {
        return Err(Error::InsufficientData(format!(
            "{} samples after decimation {decimation}, need two blocks of {max_n}",
            dec.len()
        )));
    }
    Ok(n_values
        .iter()
        .map(|&n| {
            let means: Vec<f64> = dec.chunks_exact(n).map(|c| c.iter().sum::<f64>() / n as f64).collect();
            let m = means.len();
            let mean = means.iter().sum::<f64>() / m as f64;
            let var = means.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1) as f64;
            let sigma = var.sqrt();
            SigmaPoint {
                n,
                sigma,
                blocks: m,
                stderr: sigma / (2.0 * (m - 1) as f64).sqrt(),
            }
        })
        .collect())
}

pub fn write_sigma_csv<W: std::io::Write>(points: &[SigmaPoint], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["n", "sigma", "blocks", "stderr"])?;
    for p in points {
        wr.write_record([
            p.n.to_string(),
            format!("{:e}", p.sigma),
            p.blocks.to_string(),
            format!("{:e}", p.stderr),
        ])?;
    }
    wr.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FluctuationModel {
    pub relative_sigma: f64,
    /// s
    pub correlation_time: f64,
}

/// `X_k = mean (1 + eta_k) + xi_k` with `eta` a stationary Ornstein-Uhlenbeck
/// process sampled exactly at `rate` and `xi` white.
pub fn ou_series(
    mean: f64,
    fluct: &FluctuationModel,
    white_sigma: f64,
    n_samples: usize,
    rate: f64,
    seed: u64,
) -> Result<Vec<f64>> {
    if !(rate > 0.0) {
        return Err(Error::InvalidInput("rate must be positive".into()));
    }
    if !(fluct.relative_sigma >= 0.0) || !(fluct.correlation_time >= 0.0) || !(white_sigma >= 0.0) {
        return Err(Error::InvalidInput("fluctuation parameters must be >= 0".into()));
    }
    let rho = if fluct.correlation_time > 0.0 {
        (-1.0 / (rate * fluct.correlation_time)).exp()
    } else {
        0.0
    };
    let innov = fluct.relative_sigma * (1.0 - rho * rho).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut normal = move || -> f64 { StandardNormal.sample(&mut rng) };
    let mut eta = fluct.relative_sigma * normal();
    let mut out = Vec::with_capacity(n_samples);
    for k in 0..n_samples {
        if k > 0 {
            eta = rho * eta + innov * normal();
        }
        out.push(mean * (1.0 + eta) + white_sigma * normal());
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EchoNoise {
    Uncorrelated,
    /// Equal correlation coefficient between the noise of any two echoes.
    Correlated {
        rho: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CpmgSnr {
    pub snr: Vec<f64>,
    pub improvement: Vec<f64>,
    /// Number of echoes (1-based) at the maximum improvement.
    pub best_n: usize,
    pub max_improvement: f64,
}

/// SNR of the sum of the first `n` echoes, `sum A_k / (sigma sqrt(var_n))`.
pub fn cpmg_snr(amplitudes: &[f64], noise_sigma: f64, noise: EchoNoise) -> Result<CpmgSnr> {
    if amplitudes.is_empty() {
        return Err(Error::InsufficientData("no echoes".into()));
    }
    if !(noise_sigma > 0.0) {
        return Err(Error::InvalidInput("noise sigma must be positive".into()));
    }
    let mut sum = 0.0;
    let snr: Vec<f64> = amplitudes
        .iter()
        .enumerate()
        .map(|(k, a)| {
            sum += a;
            let n = (k + 1) as f64;
            let var = match noise {
                EchoNoise::Uncorrelated => n,
                EchoNoise::Correlated { rho } => n + n * (n - 1.0) * rho,
            };
            sum / (noise_sigma * var.sqrt())
        })
        .collect();
    let improvement: Vec<f64> = snr.iter().map(|s| s / snr[0]).collect();
    let (best, max) = improvement.iter().enumerate().fold(
        (0, f64::NEG_INFINITY),
        |acc, (k, &v)| if v > acc.1 { (k, v) } else { acc },
    );
    Ok(CpmgSnr {
        snr,
        improvement,
        best_n: best + 1,
        max_improvement: max,
    })
}
