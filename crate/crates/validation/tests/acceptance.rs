//! Acceptance suite. Runs every criterion at its stated tolerance, prints one
//! PASS/FAIL line per criterion and exits non-zero if any fails.

use std::process::ExitCode;
use std::time::Instant;

use nalgebra::Complex;
use rand::SeedableRng;
use rand_distr::{Distribution, Normal};

use esrsim::constants::{hz, TWO_PI};
use esrsim::detection::{
    cpmg_snr, ou_series, sensitivity_formula, sensitivity_pipeline, sigma_scaling, EchoNoise, FluctuationModel,
};
use esrsim::dynamics::{
    echo_decay, echo_phasor, field_sweep, purcell_rate, rabi_angle, selected_coupling, simulate, simulate_cycled,
    Engine, NuclearBathSpec, Record, SimOptions, SweepDetection,
};
use esrsim::numerics::{fit_exponential, linear_fit};
use esrsim::resonator::{coupling_strength, duffing_steady_state, fit_s11, ReflectionTrace, ResonatorModel};
use esrsim::sample::{
    build_ensemble, draw_donors, implant_profile, strain_analytic, EnsembleConfig, FilmEdgeModel, SpinPacket,
    StrainMap, DEFAULT_DEPTH_RANGE, DEFAULT_PEAK_DENSITY,
};
use esrsim::sequence::{build_cpmg, build_hahn, HahnParams, PhaseCycle, PulseSequence, Segment, PHASE_X};
use esrsim::spin::{breit_rabi, transition_field, transitions, LevelLabel, SpinSystem};

type C64 = Complex<f64>;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn packet(g0: f64, detuning: f64, weight: f64, t1: f64, t2: f64) -> SpinPacket {
    SpinPacket {
        x: 0.0,
        y: 0.0,
        g0,
        transition_id: 0,
        detuning,
        weight,
        t1,
        t2,
    }
}

fn full_options() -> SimOptions {
    SimOptions {
        fast_path: false,
        record: Record::Acquire,
        ..Default::default()
    }
}

fn default_donors_strained(m: &ResonatorModel, cfg: &EnsembleConfig) -> esrsim::sample::DonorSet {
    let prof = implant_profile(DEFAULT_PEAK_DENSITY, DEFAULT_DEPTH_RANGE).unwrap();
    let strain = strain_analytic(FilmEdgeModel::thermal_mismatch(m)).unwrap();
    draw_donors(&prof, &strain, m, cfg, 1).unwrap()
}

fn hamiltonian_oracle() -> Outcome {
    let t = Instant::now();
    let sys = SpinSystem::bismuth();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let b0 = 50e-3 * rand::Rng::random::<f64>(&mut rng);
        let num = sys.levels(b0, 0.0).unwrap().energies;
        let exact = breit_rabi(&sys, b0).unwrap();
        let scale = exact.iter().fold(0.0f64, |a, e| a.max(e.abs()));
        for (a, b) in num.iter().zip(&exact) {
            worst = worst.max((a - b).abs() / scale);
        }
    }
    let e0 = sys.levels(0.0, 0.0).unwrap().energies;
    let split = e0[19] - e0[0];
    let five_a = 5.0 * sys.hyperfine_a;
    let elapsed = t.elapsed().as_secs_f64();
    let pass = worst <= 1e-9
        && (split / five_a - 1.0).abs() < 1e-9
        && (split / TWO_PI - 7.377e9).abs() < 1e6
        && elapsed < 10.0;
    outcome(
        pass,
        format!(
            "max rel dev {worst:.2e} (<= 1e-9); zero-field splitting {:.6} GHz = 5A x {:.12}; {elapsed:.1} s",
            split / TWO_PI / 1e9,
            split / five_a
        ),
    )
}

fn ten_transitions() -> Outcome {
    let sys = SpinSystem::bismuth();
    let table = transitions(&sys.levels(1e-4, 0.0).unwrap(), 0.05).unwrap();
    let lowest = &table.entries[0];
    let cg = 0.5 * (0.9f64).sqrt();
    let pass = table.entries.len() == 10
        && (lowest.sx_element - 0.4743).abs() <= 1e-3
        && (lowest.sx_element - cg).abs() <= 1e-3
        && lowest.label_low == LevelLabel { f: 4.0, m_f: -4.0 };
    outcome(
        pass,
        format!(
            "{} lines; <4,-4|Sx|5,-5> = {:.5} (Clebsch-Gordan {cg:.5})",
            table.entries.len(),
            lowest.sx_element
        ),
    )
}

fn purcell_consistency() -> Outcome {
    let t = Instant::now();
    let m = ResonatorModel::nanowire_s1();
    let g = hz(2.7e3);
    let rate = purcell_rate(g, m.kappa(), 0.0);
    let t1 = 1.0 / rate;
    let dt = 20e-6;
    let beta = std::f64::consts::PI / rabi_angle(1.0, dt, g, m.kappa(), m.kappa_ext());
    let mut segs = vec![
        Segment::Drive {
            duration: dt,
            beta,
            phase: PHASE_X,
        },
        Segment::Delay { duration: 20e-6 },
    ];
    for _ in 0..20 {
        segs.push(Segment::Delay { duration: 0.25 * t1 });
    }
    let seq = PulseSequence::new(segs, 10.0, PhaseCycle::None).unwrap();
    let pk = [packet(g, 0.0, 1e-3, t1, 20e-6)];
    let tr = simulate(&seq, &pk, &m, &full_options()).unwrap();
    // Excess population over equilibrium, normalized at the end of the ring-down.
    let pol = &tr.polarization;
    let w = pk[0].weight;
    let (t_ref, p_ref) = (pol[2].0, pol[2].1 / w + 0.5);
    let mut worst: f64 = 0.0;
    for &(t, p) in &pol[3..] {
        let expect = p_ref * (-rate * (t - t_ref)).exp();
        worst = worst.max(((p / w + 0.5) / expect - 1.0).abs());
    }
    let elapsed = t.elapsed().as_secs_f64();
    let pass = worst < 5e-3 && (t1 / 1.81e-3 - 1.0).abs() < 5e-3 && elapsed < 60.0;
    outcome(
        pass,
        format!(
            "free decay vs purcell_rate max dev {:.2e} over {:.1} T1; T1 = {:.4} ms; {elapsed:.1} s",
            worst,
            (pol.last().unwrap().0 - t_ref) / t1,
            t1 * 1e3
        ),
    )
}

/// Rabi angle of a weakly coupled resonant packet after a drive of `dt`
/// and the cavity ring-down.
fn simulated_rabi_angle(m: &ResonatorModel, g: f64, beta: f64, dt: f64) -> f64 {
    let pk = [packet(g, 0.0, 1e-6, f64::INFINITY, f64::INFINITY)];
    let h = 1.0 / (40.0 * m.kappa());
    let mut e = Engine::new(m, &pk, h, full_options()).unwrap();
    e.run_interval(dt, beta, 0.0, false, false, &mut |_, _| {}).unwrap();
    e.run_interval(40.0 / m.kappa(), 0.0, 0.0, false, false, &mut |_, _| {})
        .unwrap();
    let s = e.states()[0];
    (2.0 * s.s_minus.norm()).atan2(-2.0 * s.s_z)
}

fn selection_formula() -> Outcome {
    let m = ResonatorModel::nanowire_s1();
    let g = hz(2e3);
    let mut worst_angle: f64 = 0.0;
    for mult in [10.0, 20.0, 40.0] {
        let dt = mult * 2.0 / m.kappa();
        for target in [0.5, 1.5, 2.5] {
            let beta = target / rabi_angle(1.0, dt, g, m.kappa(), m.kappa_ext());
            let theta = simulated_rabi_angle(&m, g, beta, dt);
            let closed = rabi_angle(beta, dt, g, m.kappa(), m.kappa_ext());
            worst_angle = worst_angle.max((theta / closed - 1.0).abs());
        }
    }
    let g_sel = selected_coupling(6e4, 1e-6, m.kappa()) / TWO_PI;

    // T1 of the selected class from single-packet free decay, versus beta.
    let betas = [3e4, 6e4, 1.2e5, 2.4e5];
    let mut log_b = Vec::new();
    let mut log_t1 = Vec::new();
    for &beta in &betas {
        let g0 = selected_coupling(beta, 1e-6, m.kappa());
        let rate = purcell_rate(g0, m.kappa(), 0.0);
        let pk = [packet(g0, 0.0, 1e-6, 1.0 / rate, f64::INFINITY)];
        let h = 1.0 / (20.0 * m.kappa());
        let mut e = Engine::new(&m, &pk, h, full_options()).unwrap();
        e.set_states(&[esrsim::dynamics::PacketState {
            s_minus: C64::new(0.0, 0.0),
            s_z: 0.5,
        }])
        .unwrap();
        let step = 0.5 / rate;
        let mut ts = Vec::new();
        let mut ys = Vec::new();
        for k in 1..=8 {
            e.run_interval(step, 0.0, 0.0, false, false, &mut |_, _| {}).unwrap();
            ts.push(k as f64 * step);
            ys.push(e.states()[0].s_z + 0.5);
        }
        let (_, t1, _) = fit_exponential(&ts, &ys, 1.0 / rate).unwrap();
        log_b.push(beta.ln());
        log_t1.push(t1.ln());
    }
    let (slope, _) = linear_fit(&log_b, &log_t1);
    let pass = worst_angle < 0.05
        && (g_sel - 3.0e3).abs() < 0.05e3
        && (g_sel / 2.7e3 - 1.0).abs() <= 0.15
        && (slope - 2.0).abs() <= 0.1;
    outcome(
        pass,
        format!(
            "Rabi angle max dev {:.2}% (dt >= 10*2/kappa); g0(6e4, 1 us) = {:.3} kHz ({:+.1}% vs 2.7 kHz); T1(beta) exponent {slope:.4}",
            worst_angle * 100.0,
            g_sel / 1e3,
            (g_sel / 2.7e3 - 1.0) * 100.0
        ),
    )
}

/// Distance from `(x, y)` to the wire cross-section centred at the origin.
fn distance_to_wire(m: &ResonatorModel, x: f64, y: f64) -> f64 {
    let dx = (x.abs() - 0.5 * m.wire_width).max(0.0);
    let dy = (y.abs() - 0.5 * m.wire_thickness).max(0.0);
    dx.hypot(dy)
}

fn coupling_map() -> Outcome {
    let t = Instant::now();
    let m = ResonatorModel::nanowire_s1();
    let spin = SpinSystem::bismuth();
    let sx = transitions(&spin.levels(1e-4, 0.0).unwrap(), 0.05).unwrap().entries[0].sx_element;
    let cfg = EnsembleConfig {
        n_donors: 50_000,
        ..Default::default()
    };
    let donors = default_donors_strained(&m, &cfg);
    let best = donors
        .donors
        .iter()
        .max_by(|a, b| a.b1.total_cmp(&b.b1))
        .expect("donors drawn");
    let g_max = coupling_strength(best.b1, sx, spin.gamma_e) / TWO_PI;
    let dist = distance_to_wire(&m, best.x, best.y);
    let elapsed = t.elapsed().as_secs_f64();
    let pass = (3e3..=5e3).contains(&g_max) && dist <= 40e-9 && elapsed < 60.0;
    outcome(
        pass,
        format!(
            "max g0 = {:.3} kHz at ({:.1}, {:.1}) nm, {:.1} nm from the wire; 50k draws in {elapsed:.1} s",
            g_max / 1e3,
            best.x * 1e9,
            best.y * 1e9,
            dist * 1e9
        ),
    )
}

fn spectrum_morphology() -> Outcome {
    let m = ResonatorModel::nanowire_s1();
    let spin = SpinSystem::bismuth();
    let cfg = EnsembleConfig::default();
    let opts = SimOptions::default();

    // Unstrained donors, high-beta detection, 4-10 mT in 10 uT steps.
    let prof = implant_profile(DEFAULT_PEAK_DENSITY, DEFAULT_DEPTH_RANGE).unwrap();
    let flat = draw_donors(&prof, &StrainMap::None, &m, &cfg, 1).unwrap();
    let hahn_high = build_hahn(&HahnParams::new(1e5, 1e-6, 50e-6)).unwrap();
    let (b_lo, b_hi) = (4e-3, 10e-3);
    let mut lines: Vec<f64> = Vec::new();
    for m_low in -4..=4 {
        for dm in [-1, 1] {
            let low = LevelLabel {
                f: 4.0,
                m_f: m_low as f64,
            };
            let high = LevelLabel {
                f: 5.0,
                m_f: (m_low + dm) as f64,
            };
            if let Ok(b) = transition_field(&spin, low, high, m.omega0, 50e-3) {
                if (b_lo..=b_hi).contains(&b) {
                    lines.push(b);
                }
            }
        }
    }
    lines.sort_by(f64::total_cmp);
    let b0s: Vec<f64> = (0..=600).map(|k| b_lo + k as f64 * 10e-6).collect();
    let pts = field_sweep(
        &b0s,
        &hahn_high,
        &flat,
        &spin,
        &m,
        &cfg,
        &opts,
        SweepDetection::Magnitude,
    )
    .unwrap();
    // Contiguous runs of nonzero signal are the peaks.
    let mut peaks: Vec<(f64, f64, f64)> = Vec::new();
    let mut run: Vec<(f64, f64)> = Vec::new();
    for p in pts.iter().chain(std::iter::once(&esrsim::dynamics::SpectrumPoint {
        b0: b_hi,
        ae: 0.0,
        packets: 0,
        weight: 0.0,
    })) {
        if p.ae > 0.0 {
            run.push((p.b0, p.ae));
        } else if !run.is_empty() {
            let total: f64 = run.iter().map(|r| r.1).sum();
            let centroid = run.iter().map(|r| r.0 * r.1).sum::<f64>() / total;
            peaks.push((run[0].0, run[run.len() - 1].0, centroid));
            run.clear();
        }
    }
    // Near-degenerate sigma pairs fall inside the same peak.
    let located = lines
        .iter()
        .all(|&b| peaks.iter().any(|&(lo, hi, _)| lo <= b && b <= hi))
        && peaks
            .iter()
            .all(|&(lo, hi, _)| lines.iter().any(|&b| lo <= b && b <= hi));
    let notes: Vec<String> = peaks
        .iter()
        .map(|&(lo, hi, c)| {
            let nearest = lines
                .iter()
                .map(|b| c - b)
                .min_by(|a, b| a.abs().total_cmp(&b.abs()))
                .unwrap_or(f64::NAN);
            format!(
                "{:.3}-{:.3} mT, centroid {:+.1} uT off",
                lo * 1e3,
                hi * 1e3,
                nearest * 1e6
            )
        })
        .collect();

    // Analytic strain, low-beta detection, down to zero field.
    let strained = default_donors_strained(&m, &cfg);
    let hahn_low = build_hahn(&HahnParams::new(6e4, 1e-6, 50e-6)).unwrap();
    let b0s: Vec<f64> = (0..13).map(|k| k as f64 * 0.25e-3).collect();
    let pts = field_sweep(
        &b0s,
        &hahn_low,
        &strained,
        &spin,
        &m,
        &cfg,
        &opts,
        SweepDetection::Magnitude,
    )
    .unwrap();
    let mean = pts.iter().map(|p| p.ae).sum::<f64>() / pts.len() as f64;
    let spread = pts.iter().map(|p| (p.ae / mean - 1.0).abs()).fold(0.0, f64::max);
    let flat_ok = spread <= 0.3 && pts[0].ae > 0.0;
    outcome(
        located && flat_ok,
        format!(
            "unstrained: {} resolved peaks covering lines at {:?} mT: [{}]; strained 0-3 mT: max |Ae/mean - 1| = {:.1}% (<= 30%)",
            peaks.len(),
            lines.iter().map(|b| (b * 1e6).round() / 1e3).collect::<Vec<_>>(),
            notes.join("; "),
            spread * 100.0
        ),
    )
}

fn eseem() -> Outcome {
    let m = ResonatorModel::nanowire_s1();
    let spin = SpinSystem::bismuth();
    let b0 = 0.5e-3;
    let cfg = EnsembleConfig::default();
    let prof = implant_profile(DEFAULT_PEAK_DENSITY, DEFAULT_DEPTH_RANGE).unwrap();
    let strain = strain_analytic(FilmEdgeModel::thermal_mismatch(&m)).unwrap();
    let ens = build_ensemble(&prof, &strain, &m, &spin, b0, &cfg, 1).unwrap();
    let taus: Vec<f64> = [
        20, 40, 60, 80, 100, 120, 140, 160, 200, 300, 400, 500, 600, 800, 1000, 1200,
    ]
    .iter()
    .map(|&us| us as f64 * 1e-6)
    .collect();
    let opts = SimOptions {
        echo_pathway_cycle: true,
        ..Default::default()
    };
    let detection = HahnParams::default();
    let run = |c: f64| {
        echo_decay(
            &taus,
            &detection,
            &ens.packets,
            &m,
            &opts,
            Some(NuclearBathSpec {
                concentration: c,
                r_max: 5e-9,
                b0,
            }),
        )
        .unwrap()
    };
    let bare = run(0.0);
    let x: Vec<f64> = taus.iter().map(|t| 2.0 * t).collect();
    let y: Vec<f64> = bare.iter().map(|p| p.ae).collect();
    let (amp, t2, offset) = fit_exponential(&x, &y, 1e-3).unwrap();
    let envelope: Vec<f64> = x.iter().map(|&t| amp * (-t / t2).exp() + offset).collect();
    let depth = |pts: &[esrsim::dynamics::DecayPoint]| {
        pts.iter()
            .zip(&envelope)
            .map(|(p, e)| (p.ae / e - 1.0).abs())
            .fold(0.0, f64::max)
    };
    let d0 = depth(&bare);
    let d_nat = depth(&run(5e-4));
    let pass = d0 < 0.02 && d_nat > 0.02 && (t2 - 0.85e-3).abs() <= 0.1e-3;
    outcome(
        pass,
        format!(
            "modulation depth {:.1}% at c = 5e-4, {:.2}% at c = 0 (< 2%); envelope T2 = {:.3} ms (configured 0.85 ms)",
            d_nat * 100.0,
            d0 * 100.0,
            t2 * 1e3
        ),
    )
}

fn sensitivity_chain() -> Outcome {
    let n_min = sensitivity_formula(hz(332e3), hz(2.7e3), 0.5, 1.0);
    let (single, per_rt_hz) = sensitivity_pipeline(0.33, 36.0, 100.0).unwrap();
    let pass = (43.0..=51.0).contains(&n_min)
        && (single - 109.1).abs() < 0.05
        && (per_rt_hz - 10.91).abs() < 0.005
        && (single - 120.0).abs() <= 24.0
        && (per_rt_hz - 12.0).abs() <= 3.0;
    outcome(
        pass,
        format!("N_min formula {n_min:.2}; pipeline ({single:.1}, {per_rt_hz:.2})"),
    )
}

fn averaging_statistics() -> Outcome {
    let t = Instant::now();
    let white_sigma = 1.0;
    let mean = 0.33;
    let ns: Vec<usize> = vec![1, 2, 5, 10, 20, 50, 100, 200, 500, 1000, 2000, 5000, 10_000];
    let quiet = FluctuationModel {
        relative_sigma: 0.0,
        correlation_time: 3.0,
    };
    let white = ou_series(mean, &quiet, white_sigma, 1_000_000, 100.0, 7).unwrap();
    let sw = sigma_scaling(&white, &ns, 1).unwrap();
    let ok_white = sw
        .iter()
        .all(|p| (p.sigma * (p.n as f64).sqrt() - sw[0].sigma).abs() <= 3.0 * p.stderr * (p.n as f64).sqrt());

    let fluct = FluctuationModel {
        relative_sigma: 0.11,
        correlation_time: 3.0,
    };
    let ou = ou_series(mean, &fluct, white_sigma, 1_000_000, 100.0, 8).unwrap();
    let so = sigma_scaling(&ou, &ns, 1).unwrap();
    let dev = |p: &esrsim::detection::SigmaPoint, s1: f64| p.sigma * (p.n as f64).sqrt() / s1 - 1.0;
    let dev_at = |n: usize| dev(so.iter().find(|p| p.n == n).unwrap(), so[0].sigma);
    let ok_early = so.iter().filter(|p| p.n <= 50).all(|p| dev(p, so[0].sigma) < 0.1);
    let ok_late = so.iter().filter(|p| p.n >= 500).all(|p| dev(p, so[0].sigma) > 0.1);

    let dec_ns: Vec<usize> = vec![1, 2, 5, 10, 20, 50, 100];
    let sd = sigma_scaling(&ou, &dec_ns, 100).unwrap();
    let ok_dec = sd
        .iter()
        .all(|p| (p.sigma * (p.n as f64).sqrt() - sd[0].sigma).abs() <= 3.0 * p.stderr * (p.n as f64).sqrt());
    let elapsed = t.elapsed().as_secs_f64();
    outcome(
        ok_white && ok_early && ok_late && ok_dec && elapsed < 120.0,
        format!(
            "white 1/sqrt(n) to 1e4: {ok_white}; OU deviation {:.1}% at n=50, {:.1}% at n=200, {:.1}% at n=500; decimated by 100 within 3 sigma: {ok_dec}; {elapsed:.1} s",
            dev_at(50) * 100.0,
            dev_at(200) * 100.0,
            dev_at(500) * 100.0
        ),
    )
}

fn cpmg() -> Outcome {
    let m = ResonatorModel::nanowire_s1();
    let spin = SpinSystem::bismuth();
    let cfg = EnsembleConfig::default();
    let prof = implant_profile(DEFAULT_PEAK_DENSITY, DEFAULT_DEPTH_RANGE).unwrap();
    let strain = strain_analytic(FilmEdgeModel::thermal_mismatch(&m)).unwrap();
    let ens = build_ensemble(&prof, &strain, &m, &spin, 1e-4, &cfg, 1).unwrap();
    let n = 20;
    let seq = build_cpmg(&HahnParams::new(6e4, 1e-6, 50e-6), n).unwrap();
    let opts = SimOptions {
        echo_pathway_cycle: true,
        ..Default::default()
    };
    let tr = simulate_cycled(&seq, &ens.packets, &m, &opts).unwrap();
    let z: Vec<C64> = (0..n).map(|k| echo_phasor(&tr, k)).collect();
    let ref_phase = C64::from_polar(1.0, -z[0].arg());
    let amps: Vec<f64> = z.iter().map(|v| (v * ref_phase).re).collect();
    let rises: Vec<usize> = (1..n).filter(|&k| amps[k] > amps[k - 1]).map(|k| k + 1).collect();
    let snr = cpmg_snr(&amps, 1.0, EchoNoise::Uncorrelated).unwrap();
    let constant = cpmg_snr(&vec![1.0; n], 1.0, EchoNoise::Uncorrelated).unwrap();
    let sqrt_ok = constant
        .improvement
        .iter()
        .enumerate()
        .all(|(k, &v)| (v - ((k + 1) as f64).sqrt()).abs() < 1e-12);
    let pass = rises.is_empty() && (snr.max_improvement - 2.0).abs() <= 0.5 && sqrt_ok;
    outcome(
        pass,
        format!(
            "echo 20/echo 1 = {:.2}; echoes larger than their predecessor: {:?}; max improvement {:.2} at n = {}; constant train sqrt(n): {sqrt_ok}",
            amps[n - 1] / amps[0],
            rises,
            snr.max_improvement,
            snr.best_n
        ),
    )
}

fn resonator_fitting() -> Outcome {
    let t = Instant::now();
    let base = ResonatorModel::nanowire_s1();
    let sweep = |m: &ResonatorModel, n: usize| -> Vec<f64> {
        (0..n)
            .map(|i| m.omega0 + 5.0 * m.kappa() * (2.0 * i as f64 / (n - 1) as f64 - 1.0))
            .collect()
    };
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
    let mut worst_clean: f64 = 0.0;
    for _ in 0..20 {
        let u: [f64; 3] = [
            rand::Rng::random(&mut rng),
            rand::Rng::random(&mut rng),
            rand::Rng::random(&mut rng),
        ];
        let m = ResonatorModel {
            omega0: hz(1e9 + 11e9 * u[0]),
            q_ext: 10f64.powf(3.0 + 3.0 * u[1]),
            q_int: 10f64.powf(3.0 + 3.0 * u[2]),
            ..base
        };
        let fit = fit_s11(&ReflectionTrace::from_model(&m, sweep(&m, 401), 1e-17)).unwrap();
        for (a, b) in [(fit.omega0, m.omega0), (fit.q_ext, m.q_ext), (fit.q_int, m.q_int)] {
            worst_clean = worst_clean.max((a / b - 1.0).abs());
        }
    }

    let clean = ReflectionTrace::from_model(&base, sweep(&base, 4001), 1e-17);
    let power = clean.s11.iter().map(|s| s.norm_sqr()).sum::<f64>() / clean.s11.len() as f64;
    let normal = Normal::new(0.0, (0.01 * power / 2.0).sqrt()).unwrap();
    let seeds = 100;
    let mut mean = [0.0; 3];
    let mut msq = [0.0; 3];
    for seed in 0..seeds {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut tr = clean.clone();
        for s in &mut tr.s11 {
            *s += C64::new(normal.sample(&mut rng), normal.sample(&mut rng));
        }
        let fit = fit_s11(&tr).unwrap();
        let err = [
            fit.omega0 / base.omega0 - 1.0,
            fit.q_ext / base.q_ext - 1.0,
            fit.q_int / base.q_int - 1.0,
        ];
        for k in 0..3 {
            mean[k] += err[k] / seeds as f64;
            msq[k] += err[k] * err[k] / seeds as f64;
        }
    }
    let worst_noisy = (0..3).map(|k| mean[k].abs().max(msq[k].sqrt())).fold(0.0, f64::max);

    // Duffing root structure and continuity on a 100 x 100 grid.
    let mut bad_count = 0usize;
    let mut bad_jump = 0usize;
    let bc = base.bistability_beta().unwrap();
    for i in 0..100 {
        let delta = base.kappa() * (-4.0 + 5.0 * i as f64 / 99.0);
        let betas: Vec<f64> = (0..100).map(|j| bc * (0.05 + 7.95 * j as f64 / 99.0)).collect();
        let sols: Vec<_> = betas.iter().map(|&b| duffing_steady_state(&base, delta, b)).collect();
        for s in &sols {
            let stable = s.stable().count();
            if !((s.roots.len() == 1 && stable == 1) || (s.roots.len() == 3 && stable == 2)) {
                bad_count += 1;
            }
        }
        // Between neighbouring drive values with the same root count the
        // branches move continuously: refine the step and check convergence.
        for j in 0..99 {
            if sols[j].roots.len() != sols[j + 1].roots.len() {
                continue;
            }
            let b = betas[j];
            let near = duffing_steady_state(&base, delta, b * (1.0 + 1e-7));
            if near.roots.len() == sols[j].roots.len() {
                for (ra, rb) in sols[j].roots.iter().zip(&near.roots) {
                    if (rb.photons / ra.photons - 1.0).abs() > 1e-3 {
                        bad_jump += 1;
                    }
                }
            }
        }
    }
    let elapsed = t.elapsed().as_secs_f64();
    let pass = worst_clean <= 1e-3 && worst_noisy <= 0.02 && bad_count == 0 && bad_jump == 0 && elapsed < 60.0;
    outcome(
        pass,
        format!(
            "noiseless max rel err {worst_clean:.1e}; 20 dB over 100 seeds worst mean/rms {:.2}%; Duffing grid bad root sets {bad_count}, discontinuities {bad_jump}; {elapsed:.1} s",
            worst_noisy * 100.0
        ),
    )
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() -> ExitCode {
    let criteria: [Criterion; 11] = [
        ("Hamiltonian oracle", hamiltonian_oracle),
        ("Ten transitions", ten_transitions),
        ("Purcell consistency", purcell_consistency),
        ("Selection formula", selection_formula),
        ("Coupling map", coupling_map),
        ("Spectrum morphology", spectrum_morphology),
        ("ESEEM", eseem),
        ("Sensitivity chain", sensitivity_chain),
        ("Averaging statistics", averaging_statistics),
        ("CPMG", cpmg),
        ("Resonator fitting", resonator_fitting),
    ];
    // ACCEPTANCE_ONLY=3,7 runs a subset.
    let only: Option<Vec<usize>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect());
    let mut failed = 0;
    let mut ran = 0;
    for (k, (name, f)) in criteria.iter().enumerate() {
        if only.as_ref().is_some_and(|o| !o.contains(&(k + 1))) {
            continue;
        }
        ran += 1;
        let t = Instant::now();
        let o = f();
        if !o.pass {
            failed += 1;
        }
        println!(
            "criterion {:>2} {:<22} {} [{:.1} s] {}",
            k + 1,
            name,
            if o.pass { "PASS" } else { "FAIL" },
            t.elapsed().as_secs_f64(),
            o.detail
        );
    }
    println!("acceptance: {} of {ran} criteria passed", ran - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
