//! One function per experiment kind. Each returns its artifacts in memory;
//! writing them is left to the caller.

use nalgebra::Complex;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use esrsim::constants::TWO_PI;
use esrsim::detection::{cpmg_snr, ou_series, sensitivity_formula, sensitivity_pipeline, sigma_scaling};
use esrsim::dynamics::{echo_decay, echo_phasor, field_sweep, simulate_cycled, write_decay_csv, NuclearBathSpec};
use esrsim::numerics::fit_exponential;
use esrsim::resonator::{coupling_strength, field_map, fit_s11, read_reflection_csv, ReflectionTrace};
use esrsim::sample::{
    coupling_histogram, draw_donors, hyperfine_shift, implant_profile_with_taper, strain_import, DonorSet, Ensemble,
    FilmEdgeModel, ImplantProfile, StrainMap,
};
use esrsim::sequence::{build_cpmg, build_hahn, build_rabi_nutation, build_saturation_recovery};
use esrsim::spin::transitions;

use crate::config::*;
use crate::error::{CliError, CliResult};
use crate::svg::Plot;

type C64 = Complex<f64>;

/// One output file. Stochastic artifacts change with the seed.
#[derive(Debug, Clone)]
pub struct Artifact {
    pub name: String,
    pub bytes: Vec<u8>,
    pub stochastic: bool,
}

struct Outputs(Vec<Artifact>);

impl Outputs {
    fn add(&mut self, name: &str, bytes: Vec<u8>, stochastic: bool) {
        self.0.push(Artifact {
            name: name.into(),
            bytes,
            stochastic,
        });
    }

    fn csv(
        &mut self,
        name: &str,
        stochastic: bool,
        write: impl FnOnce(&mut Vec<u8>) -> esrsim::Result<()>,
    ) -> CliResult<()> {
        let mut buf = Vec::new();
        write(&mut buf)?;
        self.add(name, buf, stochastic);
        Ok(())
    }

    fn json(&mut self, name: &str, stochastic: bool, value: serde_json::Value) {
        let text = serde_json::to_string_pretty(&value).expect("json value") + "\n";
        self.add(name, text.into_bytes(), stochastic);
    }

    fn svg(&mut self, name: &str, stochastic: bool, plot: Plot) {
        self.add(name, plot.render().into_bytes(), stochastic);
    }
}

fn table(header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> CliResult<Vec<u8>> {
    let mut wr = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| CliError::io("csv", e);
    wr.write_record(header).map_err(io)?;
    for r in rows {
        wr.write_record(&r).map_err(io)?;
    }
    wr.into_inner().map_err(|e| CliError::io("csv", e.error()))
}

fn num(v: f64) -> String {
    format!("{v:e}")
}

fn profile(cfg: &ExperimentConfig) -> CliResult<ImplantProfile> {
    match &cfg.sample.profile {
        ProfileSpec::Plateau {
            peak_density,
            depth_min,
            depth_max,
            taper,
        } => implant_profile_with_taper(*peak_density, (*depth_min, *depth_max), *taper)
            .map_err(|e| CliError::schema("sample.profile", e)),
        ProfileSpec::Csv { path } => {
            let f = std::fs::File::open(path).map_err(|e| CliError::io(path.display(), e))?;
            ImplantProfile::read_csv(f).map_err(|e| CliError::io(path.display(), e))
        }
    }
}

fn strain(cfg: &ExperimentConfig, scale: f64) -> CliResult<StrainMap> {
    Ok(match &cfg.sample.strain {
        StrainSpec::None => StrainMap::None,
        _ if scale == 0.0 => StrainMap::None,
        StrainSpec::Analytic { film_stress } => {
            let mut m = FilmEdgeModel::thermal_mismatch(&cfg.resonator);
            if let Some(s) = film_stress {
                m.film_stress = *s;
            }
            m.film_stress *= scale;
            esrsim::sample::strain_analytic(m).map_err(|e| CliError::schema("sample.strain", e))?
        }
        StrainSpec::Import { path } => {
            let f = std::fs::File::open(path).map_err(|e| CliError::io(path.display(), e))?;
            let mut map = strain_import(f).map_err(|e| CliError::io(path.display(), e))?;
            if let StrainMap::Gridded(g) = &mut map {
                g.grid.values.iter_mut().for_each(|v| *v *= scale);
            }
            map
        }
    })
}

fn donors(cfg: &ExperimentConfig, scale: f64) -> CliResult<DonorSet> {
    Ok(draw_donors(
        &profile(cfg)?,
        &strain(cfg, scale)?,
        &cfg.resonator,
        &cfg.sample.ensemble,
        cfg.seed,
    )?)
}

fn ensemble(cfg: &ExperimentConfig, b0: f64) -> CliResult<Ensemble> {
    Ok(donors(cfg, 1.0)?.aggregate(&cfg.spin_system, &cfg.resonator, b0, &cfg.sample.ensemble)?)
}

/// Provenance fields for JSON outputs. Seed-independent outputs carry the
/// model hash only.
fn summary_header(cfg: &ExperimentConfig, stochastic: bool) -> serde_json::Value {
    let mut v = serde_json::json!({
        "experiment": cfg.experiment.name(),
        "model_hash": cfg.model_hash(),
        "version": env!("CARGO_PKG_VERSION"),
    });
    if stochastic {
        v["config_hash"] = cfg.hash().into();
        v["seed"] = cfg.seed.into();
    }
    v
}

fn with(mut base: serde_json::Value, extra: serde_json::Value) -> serde_json::Value {
    if let (Some(b), Some(e)) = (base.as_object_mut(), extra.as_object()) {
        for (k, v) in e {
            b.insert(k.clone(), v.clone());
        }
    }
    base
}

pub fn run(cfg: &ExperimentConfig) -> CliResult<Vec<Artifact>> {
    let mut out = Outputs(Vec::new());
    match &cfg.params {
        Params::Spectrum(p) => spectrum(cfg, p, &mut out)?,
        Params::EchoDecay(p) => decay(cfg, p, &mut out)?,
        Params::T1(p) => t1(cfg, p, &mut out)?,
        Params::Rabi(p) => rabi(cfg, p, &mut out)?,
        Params::Cpmg(p) => cpmg(cfg, p, &mut out)?,
        Params::Stats(p) => stats(cfg, p, &mut out)?,
        Params::S11Fit(p) => s11(cfg, p, &mut out)?,
        Params::CouplingMap(p) => coupling(cfg, p, &mut out)?,
        Params::StrainMap(p) => strain_map(cfg, p, &mut out)?,
        Params::Sensitivity(p) => sensitivity(cfg, p, &mut out)?,
    }
    Ok(out.0)
}

/// `spectrum.csv`: `curve, b0_T, echo_integral, packets, weight`.
fn spectrum(cfg: &ExperimentConfig, p: &SpectrumParams, out: &mut Outputs) -> CliResult<()> {
    let b0s = p.b0.values("params.b0")?;
    if p.curves.is_empty() {
        return Err(CliError::schema("params.curves", "at least one curve is required"));
    }
    let mut rows = Vec::new();
    let mut plot = Plot::new("Echo integral versus field", "B0 (mT)", "Ae");
    for (k, c) in p.curves.iter().enumerate() {
        let seq = build_hahn(&c.echo).map_err(|e| CliError::schema(format!("params.curves[{k}].echo"), e))?;
        let set = donors(cfg, c.strain_scale)?;
        let pts = field_sweep(
            &b0s,
            &seq,
            &set,
            &cfg.spin_system,
            &cfg.resonator,
            &cfg.sample.ensemble,
            &cfg.simulation,
            p.detection,
        )?;
        plot = plot.with(&c.label, pts.iter().map(|q| (q.b0 * 1e3, q.ae)).collect());
        rows.extend(pts.iter().map(|q| {
            vec![
                c.label.clone(),
                num(q.b0),
                num(q.ae),
                q.packets.to_string(),
                num(q.weight),
            ]
        }));
    }
    out.add(
        "spectrum.csv",
        table(
            &["curve", "b0_T", "echo_integral", "packets", "weight"],
            rows.into_iter(),
        )?,
        true,
    );
    out.svg("spectrum.svg", true, plot);
    Ok(())
}

/// `decay.csv`: `tau_s, echo_integral, modulation`; `summary.json` holds the
/// exponential fit of the echo against `2 tau`.
fn decay(cfg: &ExperimentConfig, p: &EchoDecayParams, out: &mut Outputs) -> CliResult<()> {
    let taus = p.tau.values("params.tau")?;
    let ens = ensemble(cfg, p.b0)?;
    let bath = p.bath.map(|b| NuclearBathSpec {
        concentration: b.concentration,
        r_max: b.r_max,
        b0: p.b0,
    });
    let pts = echo_decay(&taus, &p.echo, &ens.packets, &cfg.resonator, &cfg.simulation, bath)?;
    out.csv("decay.csv", true, |w| write_decay_csv(&pts, w))?;
    let x: Vec<f64> = taus.iter().map(|t| 2.0 * t).collect();
    let y: Vec<f64> = pts.iter().map(|q| q.ae).collect();
    let fit = if x.len() >= 4 {
        fit_exponential(&x, &y, cfg.sample.ensemble.t2).ok()
    } else {
        None
    };
    let fit_json = match fit {
        Some((a, t2, c)) => serde_json::json!({"amplitude": a, "t2_s": t2, "offset": c}),
        None => serde_json::Value::Null,
    };
    out.json(
        "summary.json",
        true,
        with(
            summary_header(cfg, true),
            serde_json::json!({"b0_T": p.b0, "packets": ens.packets.len(), "fit": fit_json}),
        ),
    );
    let mut plot =
        Plot::new("Two-pulse echo decay", "2 tau (s)", "Ae").with("echo", x.iter().copied().zip(y).collect());
    if let Some((a, t2, c)) = fit {
        plot = plot.with(
            &format!("fit T2 = {:.3} ms", t2 * 1e3),
            x.iter().map(|&t| (t, a * (-t / t2).exp() + c)).collect(),
        );
    }
    out.svg("decay.svg", true, plot);
    Ok(())
}

/// `recovery.csv`: `delay_s, echo_integral`; `summary.json` holds the fitted T1.
fn t1(cfg: &ExperimentConfig, p: &T1Params, out: &mut Outputs) -> CliResult<()> {
    let delays = p.delay.values("params.delay")?;
    let ens = ensemble(cfg, p.b0)?;
    let sat = p.saturation.map(|s| (s.duration, s.beta));
    let ys = delays
        .par_iter()
        .map(|&d| {
            let seq = build_saturation_recovery(d, &p.echo, sat)?;
            let tr = simulate_cycled(&seq, &ens.packets, &cfg.resonator, &cfg.simulation)?;
            Ok(echo_phasor(&tr, 0).norm())
        })
        .collect::<esrsim::Result<Vec<f64>>>()?;
    let fit = fit_exponential(&delays, &ys, 2e-3)?;
    out.add(
        "recovery.csv",
        table(
            &["delay_s", "echo_integral"],
            delays.iter().zip(&ys).map(|(d, y)| vec![num(*d), num(*y)]),
        )?,
        true,
    );
    out.json(
        "summary.json",
        true,
        with(
            summary_header(cfg, true),
            serde_json::json!({
                "b0_T": p.b0,
                "packets": ens.packets.len(),
                "t1_s": fit.1,
                "amplitude": fit.0,
                "offset": fit.2,
            }),
        ),
    );
    let lo = delays.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = delays.iter().copied().fold(0.0, f64::max);
    let curve: Vec<(f64, f64)> = (0..=200)
        .map(|k| {
            let t = lo + (hi - lo) * k as f64 / 200.0;
            (t * 1e3, fit.0 * (-t / fit.1).exp() + fit.2)
        })
        .collect();
    let plot = Plot::new("Saturation recovery", "delay (ms)", "Ae")
        .with("echo", delays.iter().map(|d| d * 1e3).zip(ys.iter().copied()).collect())
        .with(&format!("fit T1 = {:.3} ms", fit.1 * 1e3), curve);
    out.svg("recovery.svg", true, plot);
    Ok(())
}

/// `nutation.csv`: `beta_inv, echo_projected, echo_magnitude`. The echo is
/// projected on the phase of the echo without inversion pulse.
fn rabi(cfg: &ExperimentConfig, p: &RabiParams, out: &mut Outputs) -> CliResult<()> {
    let betas = p.beta_inv.values("params.beta_inv")?;
    let ens = ensemble(cfg, p.b0)?;
    let reference = echo_phasor(
        &simulate_cycled(&build_hahn(&p.echo)?, &ens.packets, &cfg.resonator, &cfg.simulation)?,
        0,
    );
    let unit = if reference.norm() > 0.0 {
        reference / reference.norm()
    } else {
        C64::new(1.0, 0.0)
    };
    let zs = betas
        .par_iter()
        .map(|&b| {
            let seq = build_rabi_nutation(b, p.dt_inv, p.wait, &p.echo)?;
            Ok(echo_phasor(
                &simulate_cycled(&seq, &ens.packets, &cfg.resonator, &cfg.simulation)?,
                0,
            ))
        })
        .collect::<esrsim::Result<Vec<C64>>>()?;
    let proj: Vec<f64> = zs.iter().map(|z| (z * unit.conj()).re).collect();
    out.add(
        "nutation.csv",
        table(
            &["beta_inv", "echo_projected", "echo_magnitude"],
            betas
                .iter()
                .zip(&zs)
                .zip(&proj)
                .map(|((b, z), q)| vec![num(*b), num(*q), num(z.norm())]),
        )?,
        true,
    );
    out.svg(
        "nutation.svg",
        true,
        Plot::new("Rabi nutation", "beta_inv (s^-1/2)", "Ae").with("echo", betas.iter().copied().zip(proj).collect()),
    );
    Ok(())
}

/// `echoes.csv`: `echo, re, im, amplitude, snr, improvement`, with the
/// amplitude projected on the phase of the first echo.
fn cpmg(cfg: &ExperimentConfig, p: &CpmgParams, out: &mut Outputs) -> CliResult<()> {
    if p.n_refocus == 0 {
        return Err(CliError::schema("params.n_refocus", "must be >= 1"));
    }
    let ens = ensemble(cfg, p.b0)?;
    let seq = build_cpmg(&p.echo, p.n_refocus)?;
    let tr = simulate_cycled(&seq, &ens.packets, &cfg.resonator, &cfg.simulation)?;
    let z: Vec<C64> = (0..p.n_refocus).map(|k| echo_phasor(&tr, k)).collect();
    let unit = if z[0].norm() > 0.0 {
        z[0] / z[0].norm()
    } else {
        C64::new(1.0, 0.0)
    };
    let amps: Vec<f64> = z.iter().map(|v| (v * unit.conj()).re).collect();
    // Integrated white noise of variance n_tilde / (2 dt) per quadrature.
    let sigma = (p.n_tilde * p.echo.acquire / 2.0).sqrt();
    let snr = cpmg_snr(&amps, sigma, p.noise)?;
    out.add(
        "echoes.csv",
        table(
            &["echo", "re", "im", "amplitude", "snr", "improvement"],
            (0..p.n_refocus).map(|k| {
                vec![
                    (k + 1).to_string(),
                    num(z[k].re),
                    num(z[k].im),
                    num(amps[k]),
                    num(snr.snr[k]),
                    num(snr.improvement[k]),
                ]
            }),
        )?,
        true,
    );
    out.json(
        "summary.json",
        true,
        with(
            summary_header(cfg, true),
            serde_json::json!({
                "b0_T": p.b0,
                "noise_sigma": sigma,
                "best_n": snr.best_n,
                "max_improvement": snr.max_improvement,
            }),
        ),
    );
    let idx = |v: &[f64]| {
        v.iter()
            .enumerate()
            .map(|(k, &a)| ((k + 1) as f64, a))
            .collect::<Vec<_>>()
    };
    out.svg(
        "echoes.svg",
        true,
        Plot::new("CPMG echo train", "echo", "amplitude / echo 1")
            .with("amplitude", idx(&amps.iter().map(|a| a / amps[0]).collect::<Vec<_>>())),
    );
    out.svg(
        "improvement.svg",
        true,
        Plot::new("SNR improvement of summed echoes", "echoes summed", "improvement")
            .with("simulated", idx(&snr.improvement))
            .with(
                "sqrt(n)",
                (1..=p.n_refocus).map(|n| (n as f64, (n as f64).sqrt())).collect(),
            ),
    );
    Ok(())
}

/// `sigma.csv`: `decimation, n, sigma, blocks, stderr, ideal` where `ideal`
/// is `sigma(1) / sqrt(n)` of the same decimation.
fn stats(cfg: &ExperimentConfig, p: &StatsParams, out: &mut Outputs) -> CliResult<()> {
    let series = ou_series(p.mean, &p.fluctuation, p.white_sigma, p.n_samples, p.rate, cfg.seed)?;
    let mut rows = Vec::new();
    let mut plot = Plot::new("Standard deviation of averaged echoes", "n", "sigma").log(true, true);
    for &d in &p.decimation {
        let pts = sigma_scaling(&series, &p.n_values, d)?;
        let Some(first) = pts.first() else { continue };
        let s1 = first.sigma * (first.n as f64).sqrt();
        for q in &pts {
            rows.push(vec![
                d.to_string(),
                q.n.to_string(),
                num(q.sigma),
                q.blocks.to_string(),
                num(q.stderr),
                num(s1 / (q.n as f64).sqrt()),
            ]);
        }
        plot = plot
            .with(
                &format!("decimation {d}"),
                pts.iter().map(|q| (q.n as f64, q.sigma)).collect(),
            )
            .with(
                &format!("1/sqrt(n), decimation {d}"),
                pts.iter().map(|q| (q.n as f64, s1 / (q.n as f64).sqrt())).collect(),
            );
    }
    out.add(
        "sigma.csv",
        table(
            &["decimation", "n", "sigma", "blocks", "stderr", "ideal"],
            rows.into_iter(),
        )?,
        true,
    );
    out.svg("sigma.svg", true, plot);
    Ok(())
}

/// `s11.csv`: `freq_Hz, re_s11, im_s11, re_fit, im_fit`; `fit.json` holds the
/// fitted resonator.
fn s11(cfg: &ExperimentConfig, p: &S11Params, out: &mut Outputs) -> CliResult<()> {
    let (trace, stochastic) = match &p.source {
        S11Source::File {
            path,
            format,
            input_power,
        } => {
            let f = std::fs::File::open(path).map_err(|e| CliError::io(path.display(), e))?;
            let t = read_reflection_csv(f, *format, *input_power).map_err(|e| CliError::io(path.display(), e))?;
            (t, false)
        }
        S11Source::Synthetic {
            points,
            span_linewidths,
            input_power,
            snr_db,
        } => {
            let m = &cfg.resonator;
            if *points < 2 {
                return Err(CliError::schema("params.source.points", "must be >= 2"));
            }
            let freqs = (0..*points)
                .map(|i| m.omega0 + span_linewidths * m.kappa() * (2.0 * i as f64 / (*points - 1) as f64 - 1.0))
                .collect();
            let mut t = ReflectionTrace::from_model(m, freqs, *input_power);
            if let Some(snr) = snr_db {
                let power = t.s11.iter().map(|s| s.norm_sqr()).sum::<f64>() / t.s11.len() as f64;
                let sd = (power / 10f64.powf(snr / 10.0) / 2.0).sqrt();
                let normal = Normal::new(0.0, sd).map_err(|e| CliError::schema("params.source.snr_db", e))?;
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
                for s in &mut t.s11 {
                    *s += C64::new(normal.sample(&mut rng), normal.sample(&mut rng));
                }
            }
            (t, snr_db.is_some())
        }
    };
    let fit = fit_s11(&trace)?;
    out.add(
        "s11.csv",
        table(
            &["freq_Hz", "re_s11", "im_s11", "re_fit", "im_fit"],
            trace.frequencies.iter().zip(&trace.s11).map(|(&w, s)| {
                let f = fit.model(w);
                vec![num(w / TWO_PI), num(s.re), num(s.im), num(f.re), num(f.im)]
            }),
        )?,
        stochastic,
    );
    let truth = match p.source {
        S11Source::Synthetic { .. } => serde_json::json!({
            "omega0": cfg.resonator.omega0,
            "q_ext": cfg.resonator.q_ext,
            "q_int": cfg.resonator.q_int,
        }),
        S11Source::File { .. } => serde_json::Value::Null,
    };
    out.json(
        "fit.json",
        stochastic,
        with(
            summary_header(cfg, stochastic),
            serde_json::json!({"fit": fit, "f0_Hz": fit.omega0 / TWO_PI, "model": truth}),
        ),
    );
    let ghz = |w: f64| w / TWO_PI / 1e9;
    out.svg(
        "s11.svg",
        stochastic,
        Plot::new("Reflection magnitude", "frequency (GHz)", "|S11|")
            .with(
                "data",
                trace
                    .frequencies
                    .iter()
                    .zip(&trace.s11)
                    .map(|(&w, s)| (ghz(w), s.norm()))
                    .collect(),
            )
            .with(
                "fit",
                trace
                    .frequencies
                    .iter()
                    .map(|&w| (ghz(w), fit.model(w).norm()))
                    .collect(),
            ),
    );
    Ok(())
}

/// `coupling_map.csv`: `x_m, y_m, Bx_T, By_T, g0_Hz` of the selected line;
/// `histogram.csv`: donor-weighted `g0` histogram of the drawn ensemble.
fn coupling(cfg: &ExperimentConfig, p: &CouplingMapParams, out: &mut Outputs) -> CliResult<()> {
    let xs = p.x.values("params.x")?;
    let ys = p.y.values("params.y")?;
    let table_lines = transitions(
        &cfg.spin_system.levels(p.b0, 0.0)?,
        cfg.sample.ensemble.transition_threshold,
    )?;
    let line = table_lines.entries.get(p.line).ok_or_else(|| {
        CliError::schema(
            "params.line",
            format!("only {} lines at this field", table_lines.entries.len()),
        )
    })?;
    let map = field_map(&cfg.resonator, &xs, &ys)?;
    let g = |b: f64| coupling_strength(b, line.sx_element, cfg.spin_system.gamma_e) / TWO_PI;
    out.add(
        "coupling_map.csv",
        table(
            &["x_m", "y_m", "Bx_T", "By_T", "g0_Hz"],
            map.iter()
                .map(|s| vec![num(s.x), num(s.y), num(s.bx), num(s.by), num(g(s.magnitude()))]),
        )?,
        false,
    );
    let mut ecfg = cfg.sample.ensemble.clone();
    ecfg.detuning_window = None;
    ecfg.lines = Some(vec![p.line]);
    let ens = donors(cfg, 1.0)?.aggregate(&cfg.spin_system, &cfg.resonator, p.b0, &ecfg)?;
    let hist = coupling_histogram(&ens, line.id, p.bins)?;
    out.csv("histogram.csv", true, |w| hist.write_csv(w))?;
    let g_max = map.iter().map(|s| g(s.magnitude())).fold(0.0, f64::max);
    out.json(
        "summary.json",
        true,
        with(
            summary_header(cfg, true),
            serde_json::json!({
                "line": line.id,
                "sx_element": line.sx_element,
                "grid_g0_max_Hz": g_max,
                "ensemble_g0_max_Hz": hist.edges.last().copied().unwrap_or(0.0) / TWO_PI,
                "donors": hist.counts.iter().sum::<f64>(),
            }),
        ),
    );
    out.svg(
        "histogram.svg",
        true,
        Plot::new("Coupling distribution", "g0 (kHz)", "donors per bin").with(
            "donors",
            hist.counts
                .iter()
                .enumerate()
                .map(|(k, &c)| (0.5 * (hist.edges[k] + hist.edges[k + 1]) / TWO_PI / 1e3, c))
                .collect(),
        ),
    );
    Ok(())
}

/// `strain_map.csv`: `x_m, y_m, eps_h`; `cut.csv`: strain and zero-field
/// splitting shift `5 dA` along `x` at `cut_depth`.
fn strain_map(cfg: &ExperimentConfig, p: &StrainMapParams, out: &mut Outputs) -> CliResult<()> {
    let xs = p.x.values("params.x")?;
    let ys = p.y.values("params.y")?;
    let map = strain(cfg, 1.0)?;
    let grid = map.to_grid(xs.clone(), ys)?;
    out.csv("strain_map.csv", false, |w| grid.write_csv(w))?;
    let (_, y_cut) = esrsim::resonator::depth_to_point(&cfg.resonator, 0.0, p.cut_depth);
    let cut: Vec<(f64, f64, f64)> = xs
        .iter()
        .map(|&x| {
            let e = map.epsilon_h(x, y_cut);
            (x, e, 5.0 * hyperfine_shift(e) / TWO_PI)
        })
        .collect();
    out.add(
        "cut.csv",
        table(
            &["x_m", "eps_h", "zfs_shift_Hz"],
            cut.iter().map(|&(x, e, s)| vec![num(x), num(e), num(s)]),
        )?,
        false,
    );
    out.svg(
        "cut.svg",
        false,
        Plot::new(
            &format!("Hydrostatic strain {:.0} nm below the surface", p.cut_depth * 1e9),
            "x (nm)",
            "eps_h",
        )
        .with("eps_h", cut.iter().map(|&(x, e, _)| (x * 1e9, e)).collect()),
    );
    Ok(())
}

fn sensitivity(cfg: &ExperimentConfig, p: &SensitivityParams, out: &mut Outputs) -> CliResult<()> {
    let kappa = p.kappa.unwrap_or_else(|| cfg.resonator.kappa());
    let n_min = sensitivity_formula(kappa, p.g0, p.n_tilde, p.polarization);
    let (single, per_rt_hz) = sensitivity_pipeline(p.snr_single, p.n_spin, p.rep_rate)?;
    out.json(
        "sensitivity.json",
        false,
        with(
            summary_header(cfg, false),
            serde_json::json!({
                "kappa": kappa,
                "n_min_formula": n_min,
                "n_min_single_shot": single,
                "spins_per_sqrt_hz": per_rt_hz,
            }),
        ),
    );
    Ok(())
}
