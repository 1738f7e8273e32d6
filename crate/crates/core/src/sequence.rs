//! Rectangular pulse sequences.
//!
//! A sequence is an ordered list of back-to-back segments. Drive phases are
//! rotation-axis angles in the rotating frame: `x = 0`, `y = pi/2`.

use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::resonator::ResonatorModel;

pub const PHASE_X: f64 = 0.0;
pub const PHASE_Y: f64 = FRAC_PI_2;

/// Saturation pulse length when none is given.
pub const DEFAULT_SATURATION_DURATION: f64 = 10e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Segment {
    Drive { duration: f64, beta: f64, phase: f64 },
    Delay { duration: f64 },
    Acquire { duration: f64 },
}

impl Segment {
    pub fn duration(&self) -> f64 {
        match *self {
            Segment::Drive { duration, .. } | Segment::Delay { duration } | Segment::Acquire { duration } => duration,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhaseCycle {
    None,
    /// Two acquisitions with the first pulse phase `phi` and `phi + pi`.
    FirstPulse,
    /// As `FirstPulse`, for the drive at segment `index`.
    Segment {
        index: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PulseSequence {
    pub segments: Vec<Segment>,
    /// Hz
    pub repetition_rate: f64,
    pub phase_cycle: PhaseCycle,
}

impl PulseSequence {
    pub fn new(segments: Vec<Segment>, repetition_rate: f64, phase_cycle: PhaseCycle) -> Result<Self> {
        let s = Self {
            segments,
            repetition_rate,
            phase_cycle,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.segments.is_empty() {
            return Err(Error::InvalidInput("sequence has no segments".into()));
        }
        for (k, seg) in self.segments.iter().enumerate() {
            let d = seg.duration();
            if !(d > 0.0) || !d.is_finite() {
                return Err(Error::InvalidInput(format!(
                    "segment {k}: duration must be > 0, got {d}"
                )));
            }
            if let Segment::Drive { beta, phase, .. } = *seg {
                if !(beta >= 0.0) || !beta.is_finite() || !phase.is_finite() {
                    return Err(Error::InvalidInput(format!(
                        "segment {k}: drive needs finite beta >= 0 and phase"
                    )));
                }
            }
        }
        if !(self.repetition_rate > 0.0) || !self.repetition_rate.is_finite() {
            return Err(Error::InvalidInput("repetition rate must be positive".into()));
        }
        let total = self.duration();
        if total > 1.0 / self.repetition_rate * (1.0 + 1e-12) {
            return Err(Error::InvalidInput(format!(
                "sequence lasts {total:e} s, longer than the repetition period {:e} s",
                1.0 / self.repetition_rate
            )));
        }
        if self.phase_cycle != PhaseCycle::None && self.cycled_segment().is_none() {
            return Err(Error::InvalidInput(
                "phase cycle does not point at a drive segment".into(),
            ));
        }
        Ok(())
    }

    pub fn duration(&self) -> f64 {
        self.segments.iter().map(Segment::duration).sum()
    }

    /// Start time of every segment.
    pub fn start_times(&self) -> Vec<f64> {
        let mut t = 0.0;
        self.segments
            .iter()
            .map(|s| {
                let start = t;
                t += s.duration();
                start
            })
            .collect()
    }

    /// `(start, end)` of every acquire window.
    pub fn acquire_windows(&self) -> Vec<(f64, f64)> {
        self.start_times()
            .into_iter()
            .zip(&self.segments)
            .filter(|(_, s)| matches!(s, Segment::Acquire { .. }))
            .map(|(t, s)| (t, t + s.duration()))
            .collect()
    }

    /// `(start, end)` of every drive segment with a non-zero amplitude.
    pub fn drive_windows(&self) -> Vec<(f64, f64)> {
        self.start_times()
            .into_iter()
            .zip(&self.segments)
            .filter(|(_, s)| matches!(s, Segment::Drive { beta, .. } if *beta > 0.0))
            .map(|(t, s)| (t, t + s.duration()))
            .collect()
    }

    /// Index of the drive whose phase the cycle alternates.
    pub fn cycled_segment(&self) -> Option<usize> {
        let k = match self.phase_cycle {
            PhaseCycle::None => return None,
            PhaseCycle::FirstPulse => self.segments.iter().position(|s| matches!(s, Segment::Drive { .. }))?,
            PhaseCycle::Segment { index } => index,
        };
        matches!(self.segments.get(k), Some(Segment::Drive { .. })).then_some(k)
    }

    /// The acquisitions to combine: one sequence, or two differing only by
    /// `pi` in the first pulse phase.
    pub fn variants(&self) -> Vec<PulseSequence> {
        match self.phase_cycle {
            PhaseCycle::None => vec![self.clone()],
            PhaseCycle::FirstPulse | PhaseCycle::Segment { .. } => {
                let k = self.cycled_segment().expect("validated");
                let mut minus = self.clone();
                if let Segment::Drive { phase, .. } = &mut minus.segments[k] {
                    *phase += PI;
                }
                vec![self.clone(), minus]
            }
        }
    }

    /// Copy with every drive phase shifted by `phi`.
    pub fn with_global_phase(&self, phi: f64) -> PulseSequence {
        let mut s = self.clone();
        for seg in &mut s.segments {
            if let Segment::Drive { phase, .. } = seg {
                *phase += phi;
            }
        }
        s
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let s: Self = serde_json::from_str(text)?;
        s.validate()?;
        Ok(s)
    }
}

/// Detection echo parameters shared by the constructors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HahnParams {
    /// Amplitude of the refocusing pulse; the first pulse uses `beta / 2`.
    pub beta: f64,
    pub dt: f64,
    pub tau: f64,
    /// Acquire window centred on the echo, s.
    pub acquire: f64,
    pub repetition_rate: f64,
    pub phase_cycle: bool,
}

impl Default for HahnParams {
    fn default() -> Self {
        Self {
            beta: 6e4,
            dt: 1e-6,
            tau: 50e-6,
            acquire: default_acquire(&ResonatorModel::nanowire_s1()),
            repetition_rate: 100.0,
            phase_cycle: true,
        }
    }
}

/// Eight cavity field decay times, `8 * 2 / kappa`.
pub fn default_acquire(model: &ResonatorModel) -> f64 {
    16.0 / model.kappa()
}

impl HahnParams {
    pub fn new(beta: f64, dt: f64, tau: f64) -> Self {
        Self {
            beta,
            dt,
            tau,
            ..Default::default()
        }
    }

    fn check(&self) -> Result<()> {
        for (name, v) in [("beta", self.beta), ("dt", self.dt), ("acquire", self.acquire)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidInput(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.tau > self.acquire / 2.0) {
            return Err(Error::InvalidInput(format!(
                "tau = {:e} s puts the echo window over the refocusing pulse (window {:e} s)",
                self.tau, self.acquire
            )));
        }
        Ok(())
    }

    fn cycle(&self) -> PhaseCycle {
        if self.phase_cycle {
            PhaseCycle::FirstPulse
        } else {
            PhaseCycle::None
        }
    }

    /// Cycle of the detection pi/2 placed at segment `index`.
    fn cycle_at(&self, index: usize) -> PhaseCycle {
        if self.phase_cycle {
            PhaseCycle::Segment { index }
        } else {
            PhaseCycle::None
        }
    }

    /// Segments of the echo block: pi/2, tau, pi, then the window centred
    /// `tau` after the end of the refocusing pulse.
    fn block(&self, refocus_phase: f64) -> Vec<Segment> {
        vec![
            Segment::Drive {
                duration: self.dt,
                beta: self.beta / 2.0,
                phase: PHASE_X,
            },
            Segment::Delay { duration: self.tau },
            Segment::Drive {
                duration: self.dt,
                beta: self.beta,
                phase: refocus_phase,
            },
            Segment::Delay {
                duration: self.tau - self.acquire / 2.0,
            },
            Segment::Acquire { duration: self.acquire },
        ]
    }
}

pub fn build_hahn(p: &HahnParams) -> Result<PulseSequence> {
    p.check()?;
    PulseSequence::new(p.block(PHASE_X), p.repetition_rate, p.cycle())
}

/// `(pi/2)_x - tau - pi_y - tau - echo - (tau/2 - pi_y - tau/2 - echo)^(n-1)`:
/// `n_refocus` refocusing pulses, echoes spaced by `tau`.
pub fn build_cpmg(p: &HahnParams, n_refocus: usize) -> Result<PulseSequence> {
    p.check()?;
    if n_refocus == 0 {
        return Err(Error::InvalidInput("n_refocus must be >= 1".into()));
    }
    let mut segs = p.block(PHASE_Y);
    let gap = p.tau / 2.0 - p.acquire / 2.0;
    if n_refocus > 1 && !(gap > 0.0) {
        return Err(Error::InvalidInput(format!(
            "tau = {:e} s is too short for an acquire window of {:e} s between refocusing pulses",
            p.tau, p.acquire
        )));
    }
    for _ in 1..n_refocus {
        segs.push(Segment::Delay { duration: gap });
        segs.push(Segment::Drive {
            duration: p.dt,
            beta: p.beta,
            phase: PHASE_Y,
        });
        segs.push(Segment::Delay { duration: gap });
        segs.push(Segment::Acquire { duration: p.acquire });
    }
    PulseSequence::new(segs, p.repetition_rate, p.cycle())
}

/// Saturation pulse, recovery delay `t_delay`, then a Hahn detection echo.
/// `saturation` is `(duration, beta)`; the default is 10 ms at the detection `beta`.
pub fn build_saturation_recovery(
    t_delay: f64,
    detection: &HahnParams,
    saturation: Option<(f64, f64)>,
) -> Result<PulseSequence> {
    detection.check()?;
    if !(t_delay >= 0.0) {
        return Err(Error::InvalidInput("t_delay must be >= 0".into()));
    }
    let (duration, beta) = saturation.unwrap_or((DEFAULT_SATURATION_DURATION, detection.beta));
    let mut segs = vec![Segment::Drive {
        duration,
        beta,
        phase: PHASE_X,
    }];
    if t_delay > 0.0 {
        segs.push(Segment::Delay { duration: t_delay });
    }
    let cycle = detection.cycle_at(segs.len());
    segs.extend(detection.block(PHASE_X));
    let total: f64 = segs.iter().map(Segment::duration).sum();
    // The repetition rate drops when the recovery delay needs a longer period.
    let rate = detection.repetition_rate.min(1.0 / total);
    PulseSequence::new(segs, rate, cycle)
}

/// Inversion pulse `(beta_inv, dt_inv)`, wait, then a Hahn detection echo.
pub fn build_rabi_nutation(beta_inv: f64, dt_inv: f64, wait: f64, detection: &HahnParams) -> Result<PulseSequence> {
    detection.check()?;
    if !(beta_inv >= 0.0) || !(dt_inv > 0.0) || !(wait > 0.0) {
        return Err(Error::InvalidInput(
            "nutation needs beta_inv >= 0, dt_inv > 0, wait > 0".into(),
        ));
    }
    let mut segs = vec![
        Segment::Drive {
            duration: dt_inv,
            beta: beta_inv,
            phase: PHASE_X,
        },
        Segment::Delay { duration: wait },
    ];
    let cycle = detection.cycle_at(segs.len());
    segs.extend(detection.block(PHASE_X));
    PulseSequence::new(segs, detection.repetition_rate, cycle)
}
