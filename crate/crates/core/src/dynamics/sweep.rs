use std::f64::consts::FRAC_PI_2;

use nalgebra::Complex;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::engine::{simulate, SimOptions};
use super::eseem::eseem_lattice_average;
use super::trace::TraceRecord;
use crate::error::Result;
use crate::resonator::ResonatorModel;
use crate::sample::{DonorSet, EnsembleConfig, SpinPacket};
use crate::sequence::{build_hahn, HahnParams, PulseSequence, Segment};
use crate::spin::SpinSystem;

type C64 = Complex<f64>;

/// Simulates every phase-cycle variant of `sequence` and returns
/// `(first - second) / 2`, or the single trace when there is no cycle.
/// With `echo_pathway_cycle`, each variant is further run with the first
/// refocusing pulse at phases `k pi/2` and combined with signs `(-1)^k / 4`.
pub fn simulate_cycled(
    sequence: &PulseSequence,
    packets: &[SpinPacket],
    model: &ResonatorModel,
    options: &SimOptions,
) -> Result<TraceRecord> {
    let mut runs: Vec<(PulseSequence, f64)> = Vec::new();
    let base = sequence.variants();
    let sign = if base.len() == 2 { [0.5, -0.5] } else { [1.0, 0.0] };
    let refocus = options.echo_pathway_cycle.then(|| refocus_segment(sequence)).flatten();
    for (v, s) in base.into_iter().zip(sign) {
        match refocus {
            Some(k) => {
                for step in 0..4 {
                    let mut w = v.clone();
                    if let Segment::Drive { phase, .. } = &mut w.segments[k] {
                        *phase += step as f64 * FRAC_PI_2;
                    }
                    let r = if step % 2 == 0 { 0.25 } else { -0.25 };
                    runs.push((w, s * r));
                }
            }
            None => runs.push((v, s)),
        }
    }
    let traces = runs
        .par_iter()
        .map(|(v, _)| simulate(v, packets, model, options))
        .collect::<Result<Vec<_>>>()?;
    let weights: Vec<f64> = runs.iter().map(|r| r.1).collect();
    TraceRecord::linear_combination(&traces, &weights)
}

/// First drive with non-zero amplitude after the cycled pulse.
fn refocus_segment(sequence: &PulseSequence) -> Option<usize> {
    let first = sequence.cycled_segment().or_else(|| {
        sequence
            .segments
            .iter()
            .position(|s| matches!(s, Segment::Drive { .. }))
    })?;
    sequence
        .segments
        .iter()
        .enumerate()
        .skip(first + 1)
        .find(|(_, s)| matches!(s, Segment::Drive { beta, .. } if *beta > 0.0))
        .map(|(k, _)| k)
}

/// `sum a_out dt` over acquire window `k`.
pub fn echo_phasor(trace: &TraceRecord, k: usize) -> C64 {
    let r = trace.window_range(k);
    if r.is_empty() {
        return C64::new(0.0, 0.0);
    }
    let (t0, t1) = trace
        .windows
        .get(k)
        .copied()
        .unwrap_or((trace.times[r.start], trace.times[r.end - 1]));
    let dt = (t1 - t0) / r.len() as f64;
    r.map(|j| C64::new(trace.i[j], trace.q[j]) * dt).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SweepDetection {
    /// `|sum a_out dt|` over the first acquire window.
    Magnitude,
    /// Projection of the echo phasor on `phase`.
    Quadrature { phase: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectrumPoint {
    /// T
    pub b0: f64,
    pub ae: f64,
    pub packets: usize,
    /// Donors inside the detuning window.
    pub weight: f64,
}

/// Echo integral versus static field. Detunings are rebuilt at every field
/// from the same donor draws; points run in parallel.
#[allow(clippy::too_many_arguments)]
pub fn field_sweep(
    b0s: &[f64],
    sequence: &PulseSequence,
    donors: &DonorSet,
    spin: &SpinSystem,
    model: &ResonatorModel,
    cfg: &EnsembleConfig,
    options: &SimOptions,
    detection: SweepDetection,
) -> Result<Vec<SpectrumPoint>> {
    sequence.validate()?;
    b0s.par_iter()
        .map(|&b0| {
            let ens = if donors.donors.is_empty() {
                None
            } else {
                Some(donors.aggregate(spin, model, b0, cfg)?)
            };
            let packets: &[SpinPacket] = ens.as_ref().map_or(&[], |e| &e.packets);
            let ae = if packets.is_empty() {
                0.0
            } else {
                let trace = simulate_cycled(sequence, packets, model, options)?;
                let z = echo_phasor(&trace, 0);
                match detection {
                    SweepDetection::Magnitude => z.norm(),
                    SweepDetection::Quadrature { phase } => (z * C64::from_polar(1.0, -phase)).re,
                }
            };
            Ok(SpectrumPoint {
                b0,
                ae,
                packets: packets.len(),
                weight: packets.iter().map(|p| p.weight).sum(),
            })
        })
        .collect()
}

/// Si-29 bath averaged into the two-pulse decay.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NuclearBathSpec {
    pub concentration: f64,
    /// Lattice sites within this distance of the donor, m.
    pub r_max: f64,
    /// T
    pub b0: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayPoint {
    pub tau: f64,
    /// `|sum a_out dt|` times the nuclear modulation.
    pub ae: f64,
    pub modulation: f64,
}

/// Hahn echo magnitude versus `tau`, multiplied by the lattice-averaged
/// ESEEM kernel when `bath` is given. Delays run in parallel.
pub fn echo_decay(
    taus: &[f64],
    detection: &HahnParams,
    packets: &[SpinPacket],
    model: &ResonatorModel,
    options: &SimOptions,
    bath: Option<NuclearBathSpec>,
) -> Result<Vec<DecayPoint>> {
    let modulation = match bath {
        Some(b) => eseem_lattice_average(b.concentration, b.r_max, b.b0, taus),
        None => vec![1.0; taus.len()],
    };
    taus.par_iter()
        .zip(&modulation)
        .map(|(&tau, &v)| {
            let seq = build_hahn(&HahnParams { tau, ..*detection })?;
            let trace = simulate_cycled(&seq, packets, model, options)?;
            Ok(DecayPoint {
                tau,
                ae: echo_phasor(&trace, 0).norm() * v,
                modulation: v,
            })
        })
        .collect()
}

pub fn write_decay_csv<W: std::io::Write>(points: &[DecayPoint], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["tau_s", "echo_integral", "modulation"])?;
    for p in points {
        wr.write_record([
            format!("{:e}", p.tau),
            format!("{:e}", p.ae),
            format!("{:e}", p.modulation),
        ])?;
    }
    wr.flush()?;
    Ok(())
}

pub fn write_spectrum_csv<W: std::io::Write>(points: &[SpectrumPoint], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["b0_T", "echo_integral", "packets", "weight"])?;
    for p in points {
        wr.write_record([
            format!("{:e}", p.b0),
            format!("{:e}", p.ae),
            p.packets.to_string(),
            format!("{:e}", p.weight),
        ])?;
    }
    wr.flush()?;
    Ok(())
}
