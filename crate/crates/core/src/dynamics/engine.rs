//! Fixed-step RK4 integration of the cavity field and the spin packets.
//!
//! Frame rotating at `omega0`:
//!
//! ```text
//! da/dt    = -(kappa/2) a + sqrt(kappa_ext) beta e^{i phi} - i sum_j w_j g_j s-_j
//! ds-_j/dt = -(1/T2_j + G1_j/2 + i delta_j) s-_j + 2 i g_j a s_z_j
//! dsz_j/dt = -G1_j (s_z_j - s_z_eq) + i g_j (a* s-_j - a s-_j*)
//! a_out    = sqrt(kappa_ext) a - beta e^{i phi}
//! ```
//!
//! The sum over packets is reduced in fixed chunks of [`CHUNK`] packets, in
//! index order, so results do not depend on the thread count.
//!
//! With `fast_path` on, long drive or delay segments are integrated with RK4
//! only until the cavity has settled to its adiabatic value. The remainder is
//! propagated exactly per packet at constant cavity field (4x4 affine matrix
//! exponential, closed form when the field is zero) and the cavity is then
//! set to `sqrt(kappa_ext) beta e^{i phi} / (kappa/2)` plus the field each
//! packet radiates while precessing freely,
//! `-i w g s- / (kappa/2 - gamma2 - i delta)`.
//! Collective back-action of the spins on the cavity is dropped during the
//! exact stretch, so the fast path is refused when any spectral slice of
//! width `kappa/2` carries a cavity-mediated damping rate `4 sum w g^2 / kappa`
//! above [`COLLECTIVE_LIMIT`] of that width. Acquire windows always use RK4.

use nalgebra::{Complex, Matrix4, Vector4};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::trace::{TraceMetadata, TraceRecord};
use crate::error::{Error, Result};
use crate::resonator::ResonatorModel;
use crate::sample::SpinPacket;
use crate::sequence::{PulseSequence, Segment};

type C64 = Complex<f64>;

pub const CHUNK: usize = 512;
const PARALLEL_MIN: usize = 4 * CHUNK;
const MAX_STEPS: f64 = 1e9;
pub const COLLECTIVE_LIMIT: f64 = 0.1;

/// Largest collective damping rate of packets within any `kappa/2` wide
/// detuning slice, relative to `kappa/2`.
pub fn collective_ratio(packets: &[SpinPacket], kappa: f64) -> f64 {
    let mut lines: Vec<(f64, f64)> = packets.iter().map(|p| (p.detuning, p.weight * p.g0 * p.g0)).collect();
    lines.sort_by(|a, b| a.0.total_cmp(&b.0));
    let width = 0.5 * kappa;
    let (mut lo, mut sum, mut best) = (0, 0.0, 0.0f64);
    for hi in 0..lines.len() {
        sum += lines[hi].1;
        while lines[hi].0 - lines[lo].0 > width {
            sum -= lines[lo].1;
            lo += 1;
        }
        best = best.max(sum);
    }
    4.0 * best / kappa / width
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Record {
    /// Output samples inside acquire windows only.
    Acquire,
    /// Acquire windows and drive segments.
    DrivesAndAcquire,
    /// Every integrated step.
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimOptions {
    pub record: Record,
    pub fast_path: bool,
    /// Relative cavity settling tolerance before switching to exact propagation.
    pub settle_tol: f64,
    /// Upper bound on the RK4 step, s; combined with the automatic bounds.
    pub max_step: Option<f64>,
    pub bloch_tol: f64,
    /// Spin polarization at equilibrium.
    pub sz_eq: f64,
    /// Also step the first refocusing pulse through four phases `k pi/2` and
    /// combine with signs `(-1)^k`, keeping only the echo pathway. A finite
    /// set of packets leaves a free-induction residue that a continuous
    /// line would dephase; this removes it.
    pub echo_pathway_cycle: bool,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            record: Record::Acquire,
            fast_path: true,
            settle_tol: 1e-7,
            max_step: None,
            bloch_tol: 1e-9,
            sz_eq: -0.5,
            echo_pathway_cycle: false,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Params {
    g: f64,
    w: f64,
    delta: f64,
    gamma1: f64,
    gamma2: f64,
    sz_eq: f64,
    /// `w g / (kappa/2 - gamma2 - i delta)`: cavity field slaved to a freely
    /// precessing packet, per unit `-i s-`.
    slave: C64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PacketState {
    pub s_minus: C64,
    pub s_z: f64,
}

#[derive(Debug, Clone, Copy)]
struct Slot {
    p: Params,
    y: PacketState,
    cur: PacketState,
    acc_m: C64,
    acc_z: f64,
}

#[inline]
fn spin_rhs(p: &Params, s: &PacketState, a: C64) -> (C64, f64) {
    let dm = -C64::new(p.gamma2, p.delta) * s.s_minus + C64::new(0.0, 2.0 * p.g * s.s_z) * a;
    let dz = -p.gamma1 * (s.s_z - p.sz_eq) - 2.0 * p.g * (a.conj() * s.s_minus).im;
    (dm, dz)
}

pub struct Engine {
    kappa: f64,
    sqrt_kext: f64,
    slots: Vec<Slot>,
    alpha: C64,
    /// `sum w g s-` of the current state.
    source: C64,
    t: f64,
    h_max: f64,
    opts: SimOptions,
    /// False when collective back-action is too strong for the fast path.
    fast_ok: bool,
}

impl Engine {
    pub fn new(model: &ResonatorModel, packets: &[SpinPacket], h_max: f64, opts: SimOptions) -> Result<Self> {
        model.validate()?;
        if !(h_max > 0.0) || !h_max.is_finite() {
            return Err(Error::StepUnderflow { step: h_max, min: 0.0 });
        }
        let kappa = model.kappa();
        let ratio = collective_ratio(packets, kappa);
        let fast_ok = ratio <= COLLECTIVE_LIMIT;
        if opts.fast_path && !fast_ok {
            log::debug!("collective damping ratio {ratio:.3} exceeds {COLLECTIVE_LIMIT}; fast path off");
        }
        let slots = packets
            .iter()
            .map(|pk| {
                let gamma1 = if pk.t1.is_finite() && pk.t1 > 0.0 {
                    1.0 / pk.t1
                } else {
                    0.0
                };
                let inv_t2 = if pk.t2.is_finite() && pk.t2 > 0.0 {
                    1.0 / pk.t2
                } else {
                    0.0
                };
                let y = PacketState {
                    s_minus: C64::new(0.0, 0.0),
                    s_z: opts.sz_eq,
                };
                Slot {
                    p: Params {
                        g: pk.g0,
                        w: pk.weight,
                        delta: pk.detuning,
                        gamma1,
                        gamma2: inv_t2 + 0.5 * gamma1,
                        sz_eq: opts.sz_eq,
                        slave: pk.weight * pk.g0 / C64::new(0.5 * kappa - inv_t2 - 0.5 * gamma1, -pk.detuning),
                    },
                    y,
                    cur: y,
                    acc_m: C64::new(0.0, 0.0),
                    acc_z: 0.0,
                }
            })
            .collect();
        Ok(Self {
            kappa,
            sqrt_kext: model.kappa_ext().sqrt(),
            slots,
            alpha: C64::new(0.0, 0.0),
            source: C64::new(0.0, 0.0),
            t: 0.0,
            h_max,
            opts,
            fast_ok,
        })
    }

    /// Default step bound `min(1/(20 kappa), 1/(20 max|delta|), dt_min/50)`,
    /// further limited to a Rabi rotation of 0.1 rad per step for the
    /// strongest packet at the largest steady-state drive.
    pub fn step_bound(model: &ResonatorModel, packets: &[SpinPacket], sequence: &PulseSequence) -> f64 {
        let max_delta = packets.iter().map(|p| p.detuning.abs()).fold(0.0, f64::max);
        let max_g = packets.iter().map(|p| p.g0.abs()).fold(0.0, f64::max);
        let mut dt_min = f64::INFINITY;
        let mut beta_max: f64 = 0.0;
        for s in &sequence.segments {
            if let Segment::Drive { duration, beta, .. } = *s {
                dt_min = dt_min.min(duration);
                beta_max = beta_max.max(beta);
            }
        }
        let mut h = 1.0 / (20.0 * model.kappa());
        if max_delta > 0.0 {
            h = h.min(1.0 / (20.0 * max_delta));
        }
        if dt_min.is_finite() {
            h = h.min(dt_min / 50.0);
        }
        let rabi = 2.0 * max_g * 2.0 * model.kappa_ext().sqrt() * beta_max / model.kappa();
        if rabi > 0.0 {
            h = h.min(0.1 / rabi);
        }
        h
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    pub fn alpha(&self) -> C64 {
        self.alpha
    }

    pub fn states(&self) -> Vec<PacketState> {
        self.slots.iter().map(|s| s.y).collect()
    }

    pub fn set_states(&mut self, states: &[PacketState]) -> Result<()> {
        if states.len() != self.slots.len() {
            return Err(Error::InvalidInput("state count differs from packet count".into()));
        }
        for (s, st) in self.slots.iter_mut().zip(states) {
            s.y = *st;
            s.cur = *st;
        }
        self.source = self.reduce();
        Ok(())
    }

    /// Instantaneous rotation by `angle` about the axis at `phase` in the
    /// transverse plane, applied to every packet.
    pub fn rotate(&mut self, angle: f64, phase: f64) {
        let (sin, cos) = angle.sin_cos();
        let e = C64::from_polar(1.0, phase);
        for s in &mut self.slots {
            // Work in the frame where the axis is x: s-' = s- e^{-i phase}... conjugate convention.
            let m = s.y.s_minus * e.conj();
            let (u, v) = (m.re, m.im);
            let z = s.y.s_z;
            // Same sense as the driven equations for a real cavity field.
            let v2 = v * cos + z * sin;
            let z2 = z * cos - v * sin;
            s.y.s_minus = C64::new(u, v2) * e;
            s.y.s_z = z2;
            s.cur = s.y;
        }
        self.source = self.reduce();
    }

    /// `sum w s_z` and `sum w (s_z - s_z_eq)`.
    pub fn polarization(&self) -> (f64, f64) {
        let mut a = 0.0;
        let mut b = 0.0;
        for s in &self.slots {
            a += s.p.w * s.y.s_z;
            b += s.p.w * (s.y.s_z - s.p.sz_eq);
        }
        (a, b)
    }

    pub fn output(&self, drive: C64) -> C64 {
        self.sqrt_kext * self.alpha - drive
    }

    fn reduce(&self) -> C64 {
        let chunk_sum = |c: &[Slot]| {
            c.iter()
                .fold(C64::new(0.0, 0.0), |acc, s| acc + s.y.s_minus * (s.p.w * s.p.g))
        };
        let parts: Vec<C64> = if self.slots.len() >= PARALLEL_MIN {
            self.slots.par_chunks(CHUNK).map(chunk_sum).collect()
        } else {
            self.slots.chunks(CHUNK).map(chunk_sum).collect()
        };
        parts.into_iter().fold(C64::new(0.0, 0.0), |a, b| a + b)
    }

    /// Cavity field radiated by the packets if each precessed freely:
    /// `-i sum w g s- / (kappa/2 - gamma2 - i delta)`.
    fn slaved_field(&self) -> C64 {
        let chunk_sum = |c: &[Slot]| {
            c.iter()
                .fold(C64::new(0.0, 0.0), |acc, s| acc + s.y.s_minus * s.p.slave)
        };
        let parts: Vec<C64> = if self.slots.len() >= PARALLEL_MIN {
            self.slots.par_chunks(CHUNK).map(chunk_sum).collect()
        } else {
            self.slots.chunks(CHUNK).map(chunk_sum).collect()
        };
        parts.into_iter().fold(C64::new(0.0, 0.0), |a, b| a + b) * C64::new(0.0, -1.0)
    }

    /// One RK4 stage over all packets; returns `sum w g s-` of the next stage
    /// state and the worst Bloch excess (last stage only).
    fn stage(&mut self, k: usize, a: C64, h: f64) -> (C64, f64, usize) {
        let weight = [1.0, 2.0, 2.0, 1.0][k];
        let next_c = [0.5 * h, 0.5 * h, h, 0.0][k];
        let last = k == 3;
        let work = |(ci, chunk): (usize, &mut [Slot])| -> (C64, f64, usize) {
            let mut sum = C64::new(0.0, 0.0);
            let mut worst = f64::NEG_INFINITY;
            let mut worst_i = 0;
            for (i, s) in chunk.iter_mut().enumerate() {
                let (dm, dz) = spin_rhs(&s.p, &s.cur, a);
                s.acc_m += dm * weight;
                s.acc_z += dz * weight;
                if last {
                    s.y.s_minus += s.acc_m * (h / 6.0);
                    s.y.s_z += s.acc_z * (h / 6.0);
                    s.acc_m = C64::new(0.0, 0.0);
                    s.acc_z = 0.0;
                    s.cur = s.y;
                    let excess = s.y.s_minus.norm_sqr() + s.y.s_z * s.y.s_z - 0.25;
                    if excess > worst {
                        worst = excess;
                        worst_i = ci * CHUNK + i;
                    }
                } else {
                    s.cur.s_minus = s.y.s_minus + dm * next_c;
                    s.cur.s_z = s.y.s_z + dz * next_c;
                }
                sum += s.cur.s_minus * (s.p.w * s.p.g);
            }
            (sum, worst, worst_i)
        };
        let parts: Vec<(C64, f64, usize)> = if self.slots.len() >= PARALLEL_MIN {
            self.slots.par_chunks_mut(CHUNK).enumerate().map(work).collect()
        } else {
            self.slots.chunks_mut(CHUNK).enumerate().map(work).collect()
        };
        let mut sum = C64::new(0.0, 0.0);
        let mut worst = f64::NEG_INFINITY;
        let mut worst_i = 0;
        for (s, w, i) in parts {
            sum += s;
            if w > worst {
                worst = w;
                worst_i = i;
            }
        }
        (sum, worst, worst_i)
    }

    fn rk4_step(&mut self, drive_in: C64, h: f64, t_next: f64) -> Result<()> {
        let half_k = 0.5 * self.kappa;
        let f_a = |a: C64, s: C64| -a * half_k + drive_in - C64::new(0.0, 1.0) * s;
        let a0 = self.alpha;
        let k1 = f_a(a0, self.source);
        let (s2, _, _) = self.stage(0, a0, h);
        let a2 = a0 + k1 * (0.5 * h);
        let k2 = f_a(a2, s2);
        let (s3, _, _) = self.stage(1, a2, h);
        let a3 = a0 + k2 * (0.5 * h);
        let k3 = f_a(a3, s3);
        let (s4, _, _) = self.stage(2, a3, h);
        let a4 = a0 + k3 * h;
        let k4 = f_a(a4, s4);
        let (s_next, worst, worst_i) = self.stage(3, a4, h);
        self.alpha = a0 + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        self.source = s_next;
        self.t = t_next;
        if worst > self.opts.bloch_tol {
            return Err(Error::BlochViolation {
                packet: worst_i,
                time: self.t,
                norm2: worst + 0.25,
            });
        }
        if !self.alpha.re.is_finite() || !self.alpha.im.is_finite() {
            return Err(Error::NonConvergence {
                what: "cavity integration",
                iterations: 0,
                residual: f64::NAN,
                last: vec![self.t],
            });
        }
        Ok(())
    }

    /// Exact propagation of every packet for `duration` at fixed cavity field `a`.
    fn propagate_exact(&mut self, a: C64, duration: f64) -> Result<()> {
        let t_end = self.t + duration;
        let tol = self.opts.bloch_tol;
        let work = |(ci, chunk): (usize, &mut [Slot])| -> std::result::Result<(), (usize, f64)> {
            for (i, s) in chunk.iter_mut().enumerate() {
                let p = &s.p;
                if a.norm_sqr() == 0.0 || p.g == 0.0 {
                    let decay = C64::new(-p.gamma2 * duration, -p.delta * duration).exp();
                    s.y.s_minus *= decay;
                    s.y.s_z = p.sz_eq + (s.y.s_z - p.sz_eq) * (-p.gamma1 * duration).exp();
                } else {
                    let (ar, ai) = (a.re, a.im);
                    let m = Matrix4::new(
                        -p.gamma2,
                        p.delta,
                        -2.0 * p.g * ai,
                        0.0,
                        -p.delta,
                        -p.gamma2,
                        2.0 * p.g * ar,
                        0.0,
                        2.0 * p.g * ai,
                        -2.0 * p.g * ar,
                        -p.gamma1,
                        p.gamma1 * p.sz_eq,
                        0.0,
                        0.0,
                        0.0,
                        0.0,
                    ) * duration;
                    let v = m.exp() * Vector4::new(s.y.s_minus.re, s.y.s_minus.im, s.y.s_z, 1.0);
                    s.y.s_minus = C64::new(v[0], v[1]);
                    s.y.s_z = v[2];
                }
                s.cur = s.y;
                let norm2 = s.y.s_minus.norm_sqr() + s.y.s_z * s.y.s_z;
                if norm2 - 0.25 > tol {
                    return Err((ci * CHUNK + i, norm2));
                }
            }
            Ok(())
        };
        let res: std::result::Result<Vec<()>, (usize, f64)> = if self.slots.len() >= PARALLEL_MIN {
            self.slots.par_chunks_mut(CHUNK).enumerate().map(work).collect()
        } else {
            self.slots.chunks_mut(CHUNK).enumerate().map(work).collect()
        };
        if let Err((packet, norm2)) = res {
            return Err(Error::BlochViolation {
                packet,
                time: t_end,
                norm2,
            });
        }
        self.t = t_end;
        self.source = self.reduce();
        Ok(())
    }

    /// Integrates one constant-drive interval. `on_step` receives
    /// `(time, a_out)` after every RK4 step when `record` is true.
    pub fn run_interval(
        &mut self,
        duration: f64,
        beta: f64,
        phase: f64,
        allow_fast: bool,
        record: bool,
        on_step: &mut dyn FnMut(f64, C64),
    ) -> Result<()> {
        let drive = C64::from_polar(beta, phase);
        let drive_in = drive * self.sqrt_kext;
        let n = (duration / self.h_max).ceil();
        let fast = allow_fast && self.opts.fast_path && self.fast_ok;
        if n > MAX_STEPS && !fast {
            return Err(Error::StepUnderflow {
                step: duration / n,
                min: duration / MAX_STEPS,
            });
        }
        let n = n.max(1.0) as usize;
        let h = duration / n as f64;
        let half_k = 0.5 * self.kappa;
        let t0 = self.t;
        // Ring-down time of a drive transient to `settle_tol`; past it the
        // remaining cavity motion is spin radiation, which the exact stretch drops.
        let settle_cap = self.opts.settle_tol.recip().ln().max(1.0) / half_k;
        let mut peak = self.alpha.norm();
        for k in 0..n {
            let t_next = t0 + (k + 1) as f64 * h;
            self.rk4_step(drive_in, h, t_next)?;
            if record {
                on_step(self.t, self.output(drive));
            }
            if fast && k + 1 < n {
                let adiabatic = drive_in / half_k + self.slaved_field();
                peak = peak.max(self.alpha.norm());
                let scale = peak.max(adiabatic.norm()).max(f64::MIN_POSITIVE);
                let settled = (self.alpha - adiabatic).norm() <= self.opts.settle_tol * scale;
                if settled || t_next - t0 >= settle_cap {
                    let remaining = (n - k - 1) as f64 * h;
                    self.propagate_exact(drive_in / half_k, remaining)?;
                    self.alpha = drive_in / half_k + self.slaved_field();
                    self.t = t0 + duration;
                    if record {
                        on_step(self.t, self.output(drive));
                    }
                    return Ok(());
                }
            }
        }
        self.t = t0 + duration;
        Ok(())
    }
}

/// Integrates `sequence` from thermal equilibrium and returns the noiseless
/// output field.
pub fn simulate(
    sequence: &PulseSequence,
    packets: &[SpinPacket],
    model: &ResonatorModel,
    options: &SimOptions,
) -> Result<TraceRecord> {
    sequence.validate()?;
    if let Some(bc) = model.bistability_beta() {
        let max_beta = sequence
            .segments
            .iter()
            .filter_map(|s| match s {
                Segment::Drive { beta, .. } => Some(*beta),
                _ => None,
            })
            .fold(0.0, f64::max);
        if max_beta > bc {
            log::warn!("drive beta {max_beta:e} exceeds the Kerr bistability threshold {bc:e}; linear cavity assumed");
        }
    }
    let mut h = Engine::step_bound(model, packets, sequence);
    if let Some(m) = options.max_step {
        h = h.min(m);
    }
    let mut engine = Engine::new(model, packets, h, *options)?;
    let mut rec = TraceRecord {
        times: Vec::new(),
        i: Vec::new(),
        q: Vec::new(),
        window: Vec::new(),
        windows: sequence.acquire_windows(),
        polarization: vec![(0.0, engine.polarization().0)],
        excited_after_first_pulse: None,
        step: h,
        metadata: TraceMetadata::default(),
    };
    let mut window_index = 0usize;
    let mut first_drive_done = false;
    for seg in &sequence.segments {
        let (beta, phase, acquire, is_drive) = match *seg {
            Segment::Drive { beta, phase, .. } => (beta, phase, false, true),
            Segment::Delay { .. } => (0.0, 0.0, false, false),
            Segment::Acquire { .. } => (0.0, 0.0, true, false),
        };
        let record =
            acquire || options.record == Record::All || (options.record == Record::DrivesAndAcquire && is_drive);
        let win = if acquire { Some(window_index) } else { None };
        {
            let rec_ref = &mut rec;
            let mut push = |t: f64, a: C64| {
                rec_ref.times.push(t);
                rec_ref.i.push(a.re);
                rec_ref.q.push(a.im);
                rec_ref.window.push(win.map_or(-1, |w| w as i64));
            };
            engine.run_interval(seg.duration(), beta, phase, !acquire, record, &mut push)?;
        }
        if acquire {
            window_index += 1;
        }
        if is_drive && beta > 0.0 && !first_drive_done {
            first_drive_done = true;
        } else if first_drive_done && rec.excited_after_first_pulse.is_none() {
            // Value once the first pulse and its ring-down segment are over.
            rec.excited_after_first_pulse = Some(engine.polarization().1);
        }
        rec.polarization.push((engine.time(), engine.polarization().0));
    }
    if first_drive_done && rec.excited_after_first_pulse.is_none() {
        rec.excited_after_first_pulse = Some(engine.polarization().1);
    }
    Ok(rec)
}
