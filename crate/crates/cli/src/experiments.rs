//! The experiments behind `bfc-sim run`. Each one returns its artifacts in
//! memory; writing them to disk is left to the caller.

use std::fmt::Write as _;

use bfc_core::correlator::{
    car, compensate_gate, cross_correlate, measure_jsi_detailed, predicted_car, sideband_histogram,
    Histogram,
};
use bfc_core::dispersion::{
    apply_dispersion, dispersed_correlation, frequency_time_map_check, integrate_peaks,
    pair_delay_offset, peak_positions, peaks_to_csv, DispersionElement, Peak,
};
use bfc_core::events::{detect, generate_pairs};
use bfc_core::franson::{
    central_lobe_width, envelope, fit_period, fit_visibility, fringe_scan, FransonConfig,
    FransonSimulator, FringeScan, ScanAxis,
};
use bfc_core::rng::derive_seed;
use bfc_core::schmidt::{simulate_schmidt_pipeline, SchmidtResult};
use bfc_core::state::{correlation_fwhm, temporal_correlation};
use bfc_core::units::{FS_PER_PS, PS_PER_NS};
use bfc_core::{BiphotonState, Channel, CorrelationCurve};

use crate::config::ExperimentConfig;
use crate::svg::{fringe_plot, heat_map, line_plot, LinePlot, Series, SvgError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, clap::ValueEnum)]
#[value(rename_all = "snake_case")]
pub enum Experiment {
    Correlate,
    Jsi,
    FransonCommon,
    FransonTaud,
    Dispersion,
    Schmidt,
    All,
}

impl Experiment {
    pub const SINGLE: [Experiment; 6] = [
        Experiment::Correlate,
        Experiment::Jsi,
        Experiment::FransonCommon,
        Experiment::FransonTaud,
        Experiment::Dispersion,
        Experiment::Schmidt,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::Correlate => "correlate",
            Experiment::Jsi => "jsi",
            Experiment::FransonCommon => "franson_common",
            Experiment::FransonTaud => "franson_taud",
            Experiment::Dispersion => "dispersion",
            Experiment::Schmidt => "schmidt",
            Experiment::All => "all",
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Core(#[from] bfc_core::Error),
    #[error(transparent)]
    Svg(#[from] SvgError),
    #[error("two experiments produced `{0}`")]
    Duplicate(String),
    #[error("{experiment}: {source}")]
    In {
        experiment: &'static str,
        source: Box<RunError>,
    },
}

type Result<T> = std::result::Result<T, RunError>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Artifact {
    pub name: String,
    pub bytes: Vec<u8>,
}

impl Artifact {
    fn new(name: impl Into<String>, text: String) -> Self {
        Artifact {
            name: name.into(),
            bytes: text.into_bytes(),
        }
    }
}

#[derive(Debug, Default)]
pub struct RunOutput {
    pub artifacts: Vec<Artifact>,
    /// Non-fatal findings meant for stderr.
    pub warnings: Vec<String>,
}

impl RunOutput {
    fn push(&mut self, name: impl Into<String>, text: String) {
        self.artifacts.push(Artifact::new(name, text));
    }
}

/// Runs one experiment, or every experiment concurrently for [`Experiment::All`].
pub fn run(cfg: &ExperimentConfig, which: Experiment) -> Result<RunOutput> {
    if which != Experiment::All {
        return run_single(cfg, which).map_err(|e| RunError::In {
            experiment: which.name(),
            source: Box::new(e),
        });
    }
    let results: Vec<Result<RunOutput>> = std::thread::scope(|scope| {
        let handles: Vec<_> = Experiment::SINGLE
            .iter()
            .map(|&e| scope.spawn(move || run(cfg, e)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("experiment thread panicked"))
            .collect()
    });
    let mut out = RunOutput::default();
    for r in results {
        let r = r?;
        out.artifacts.extend(r.artifacts);
        out.warnings.extend(r.warnings);
    }
    let mut names: Vec<&str> = out.artifacts.iter().map(|a| a.name.as_str()).collect();
    names.sort_unstable();
    if let Some(w) = names.windows(2).find(|w| w[0] == w[1]) {
        return Err(RunError::Duplicate(w[0].to_string()));
    }
    Ok(out)
}

fn run_single(cfg: &ExperimentConfig, which: Experiment) -> Result<RunOutput> {
    let state = cfg.state()?;
    match which {
        Experiment::Correlate => correlate(cfg, &state),
        Experiment::Jsi => jsi(cfg, &state),
        Experiment::FransonCommon => franson_common(cfg, &state),
        Experiment::FransonTaud => franson_taud(cfg, &state),
        Experiment::Dispersion => dispersion(cfg, &state),
        Experiment::Schmidt => schmidt(cfg, &state),
        Experiment::All => unreachable!("handled by run"),
    }
}

fn ns(ps: &[f64]) -> Vec<f64> {
    ps.iter().map(|t| t / PS_PER_NS).collect()
}

/// Mean counts per bin far from every peak: bins where `profile` is below 0.1 %
/// of its maximum. Falls back to the smallest count when no such bin exists.
fn baseline(hist: &Histogram, profile: &[f64]) -> f64 {
    let pmax = profile.iter().copied().fold(0.0, f64::max);
    let far: Vec<f64> = hist
        .counts
        .iter()
        .zip(profile)
        .filter(|(_, p)| **p <= 1e-3 * pmax)
        .map(|(c, _)| *c as f64)
        .collect();
    if far.is_empty() {
        hist.counts.iter().copied().min().unwrap_or(0) as f64
    } else {
        far.iter().sum::<f64>() / far.len() as f64
    }
}

/// Least-squares scale of `profile` onto the counts above `base`.
fn fit_scale(hist: &Histogram, profile: &[f64], base: f64) -> f64 {
    let num: f64 = hist
        .counts
        .iter()
        .zip(profile)
        .map(|(c, p)| (*c as f64 - base) * p)
        .sum();
    let den: f64 = profile.iter().map(|p| p * p).sum();
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

fn correlate(cfg: &ExperimentConfig, state: &BiphotonState) -> Result<RunOutput> {
    let k = cfg.ring.min_sideband;
    let tag = format!("S{k}I{k}");
    let hist = sideband_histogram(state, &cfg.source, cfg.channels(), k, k, &cfg.tia)?;
    let est = car(&hist, cfg.tia.window_ps())?;
    let centers = hist.centers();
    let shifted: Vec<f64> = centers.iter().map(|t| t - est.peak_center_ps).collect();
    let profile = temporal_correlation(state, k, &shifted)?;
    let base = baseline(&hist, &profile.values);
    let scale = fit_scale(&hist, &profile.values, base);

    let mut out = RunOutput::default();
    out.push(format!("correlation_{tag}.csv"), hist.to_csv());
    out.push(
        format!("correlation_{tag}_analytic.csv"),
        CorrelationCurve::new(centers.clone(), profile.values.clone(), tag.clone())?.to_csv(),
    );

    let mut txt = String::new();
    let _ = writeln!(txt, "sideband_pair={tag}");
    let _ = writeln!(txt, "car={}", est.ratio);
    let _ = writeln!(txt, "car_stderr={}", est.stderr());
    let _ = writeln!(txt, "peak_counts={}", est.peak_counts);
    let _ = writeln!(txt, "mean_accidentals={}", est.mean_accidentals);
    let _ = writeln!(txt, "background_windows={}", est.n_background_windows);
    let _ = writeln!(txt, "peak_center_ps={}", est.peak_center_ps);
    let (sig, idl) = cfg.channels();
    let car_model = predicted_car(
        cfg.source.pair_rate_hz * state.weights.get(k),
        sig,
        idl,
        state.gamma(),
        cfg.tia.window_ps(),
    );
    let _ = writeln!(txt, "car_predicted={car_model}");
    let _ = writeln!(txt, "fwhm_predicted_ps={}", state.correlation_fwhm_ps());
    match correlation_fwhm(&hist.baseline_subtracted(base, tag.clone())) {
        Ok(w) => {
            let _ = writeln!(txt, "fwhm_ps={w}");
        }
        Err(e) => out.warnings.push(format!("correlate: no FWHM: {e}")),
    }
    out.push(format!("car_{tag}.txt"), txt);

    if let (Some(gs), Some(gi)) = (&sig.gate, &idl.gate) {
        if gs == gi {
            out.push(
                format!("correlation_{tag}_gate_corrected.csv"),
                compensate_gate(&hist, gs)?.to_csv(),
            );
        } else {
            out.warnings.push(
                "correlate: signal and idler gates differ; no gate compensation written".into(),
            );
        }
    }

    let model: Vec<f64> = profile.values.iter().map(|p| base + scale * p).collect();
    out.push(
        format!("correlation_{tag}.svg"),
        line_plot(&LinePlot {
            title: format!("{tag} coincidences"),
            x_label: "delay (ns)".into(),
            y_label: "counts per bin".into(),
            series: vec![
                Series::new(
                    "measured",
                    ns(&centers),
                    hist.counts.iter().map(|&c| c as f64).collect(),
                ),
                Series::new("exp(-2Γ|τ|) fit", ns(&centers), model),
            ],
        })?,
    );
    Ok(out)
}

fn jsi(cfg: &ExperimentConfig, state: &BiphotonState) -> Result<RunOutput> {
    let m = measure_jsi_detailed(state, &cfg.source, cfg.channels(), cfg.k_range(), &cfg.tia)?;
    let mut out = RunOutput::default();
    out.push("jsi.csv", m.subtracted.to_csv());
    out.push("jsi_raw.csv", m.raw.to_csv());
    out.push("jsi_accidentals.csv", m.accidentals.to_csv());
    let mut txt = String::new();
    let _ = writeln!(
        txt,
        "off_diagonal_energy_ratio={}",
        m.subtracted.off_diagonal_energy_ratio()
    );
    let _ = writeln!(
        txt,
        "off_diagonal_energy_ratio_raw={}",
        m.raw.off_diagonal_energy_ratio()
    );
    let total: f64 = m.subtracted.diagonal().iter().sum();
    let wsum: f64 = m.subtracted.ks().map(|k| state.weights.get(k)).sum();
    for (k, d) in m.subtracted.ks().zip(m.subtracted.diagonal()) {
        let measured = if total > 0.0 { d / total } else { 0.0 };
        let _ = writeln!(txt, "S{k}I{k}.measured={measured}");
        let _ = writeln!(txt, "S{k}I{k}.expected={}", state.weights.get(k) / wsum);
    }
    out.push("jsi.txt", txt);
    out.push(
        "jsi.svg",
        heat_map(
            "Joint spectral intensity (accidentals subtracted)",
            &m.subtracted,
        )?,
    );
    Ok(out)
}

fn fit_summary(txt: &mut String, prefix: &str, scan: &FringeScan, band: f64) {
    let n = scan.delays_fs.len();
    match fit_visibility(scan, 0..n) {
        Ok(f) => {
            let _ = writeln!(txt, "{prefix}.visibility={}", f.visibility);
            let _ = writeln!(txt, "{prefix}.visibility_stderr={}", f.stderr);
            let _ = writeln!(
                txt,
                "{prefix}.exceeds_bell_threshold={}",
                f.exceeds_bell_threshold()
            );
        }
        Err(e) => {
            let _ = writeln!(txt, "{prefix}.visibility=unavailable ({e})");
        }
    }
    let c = scan.carrier_thz;
    match fit_period(scan, 0..n, c * (1.0 - band), c * (1.0 + band)) {
        Ok(p) => {
            let _ = writeln!(txt, "{prefix}.period_fs={p}");
        }
        Err(e) => {
            let _ = writeln!(txt, "{prefix}.period_fs=unavailable ({e})");
        }
    }
}

fn simulator(cfg: &ExperimentConfig, state: &BiphotonState) -> Result<FransonSimulator> {
    Ok(FransonSimulator::new(
        state,
        &cfg.source,
        cfg.channels(),
        cfg.franson.window_ns * PS_PER_NS,
    )?)
}

const LABEL_COMMON: u64 = 0x434F_4D4D;
const LABEL_ENVELOPE: u64 = 0x454E_5645;

fn franson_common(cfg: &ExperimentConfig, state: &BiphotonState) -> Result<RunOutput> {
    let template = cfg.franson.interferometer();
    let grid = cfg.franson.common_scan.values();
    let analytic = fringe_scan(state, &template, ScanAxis::CommonDelay, &grid)?;
    let sim = simulator(cfg, state)?;
    let mc = sim.scan(
        &template,
        ScanAxis::CommonDelay,
        &grid,
        derive_seed(cfg.source.seed, &[LABEL_COMMON]),
    )?;

    let mut out = RunOutput::default();
    out.push("franson_common.csv", analytic.to_csv());
    out.push("franson_common_mc.csv", mc.to_csv());
    let mut txt = String::new();
    let _ = writeln!(
        txt,
        "expected_period_fs={}",
        FS_PER_PS / analytic.carrier_thz
    );
    let _ = writeln!(txt, "detected_pairs={}", sim.detected_pairs());
    let _ = writeln!(txt, "pairs_in_window={}", sim.pairs_in_window());
    fit_summary(&mut txt, "analytic", &analytic, 0.2);
    fit_summary(&mut txt, "mc", &mc, 0.2);
    out.push("franson_common.txt", txt);

    // half of the pairs leave for the satellite peaks
    let norm = 0.5 * sim.pairs_in_window().max(1) as f64;
    out.push(
        "franson_common.svg",
        line_plot(&LinePlot {
            title: "Franson fringes, common delay scan".into(),
            x_label: "common delay offset (fs)".into(),
            y_label: "normalized coincidence rate".into(),
            series: vec![
                Series::new("analytic", grid.clone(), analytic.coincidences.clone()),
                Series::new(
                    "Monte Carlo",
                    grid,
                    mc.coincidences.iter().map(|c| c / norm).collect(),
                ),
            ],
        })?,
    );
    Ok(out)
}

/// Visibility from a short common-delay scan at fixed τ_d, with a standard
/// error that includes the spread of the shared pair sample.
fn mc_visibility(
    sim: &FransonSimulator,
    template: &FransonConfig,
    seed: u64,
) -> Result<(f64, f64)> {
    let grid: Vec<f64> = (0..16).map(|i| 0.375 * i as f64).collect();
    let scan = sim.scan(template, ScanAxis::CommonDelay, &grid, seed)?;
    let fit = fit_visibility(&scan, 0..grid.len())?;
    let v = fit.visibility;
    let composition = (1.0 - v * v).max(0.0) / sim.pairs_in_window().max(1) as f64;
    Ok((v, (fit.stderr.powi(2) + composition).sqrt()))
}

fn franson_taud(cfg: &ExperimentConfig, state: &BiphotonState) -> Result<RunOutput> {
    let template = cfg.franson.interferometer();
    let grid = cfg.franson.taud_scan.values();
    let analytic = fringe_scan(state, &template, ScanAxis::TauD, &grid)?;
    let mut out = RunOutput::default();
    out.push("franson_taud.csv", analytic.to_csv());
    out.push(
        "franson_taud.svg",
        fringe_plot(
            &analytic,
            "Franson fringes versus τ_d",
            "τ_d (ps)",
            1.0 / FS_PER_PS,
        )?,
    );

    let sim = simulator(cfg, state)?;
    let taus = cfg.franson.envelope_scan.values();
    let mut csv = String::from("tau_d_ps,visibility,stderr,analytic\n");
    let mut mc = Vec::with_capacity(taus.len());
    for (j, &t) in taus.iter().enumerate() {
        let setting = FransonConfig {
            tau_i_ns: template.tau_s_ns + t / PS_PER_NS,
            ..template
        };
        let (v, se) = mc_visibility(
            &sim,
            &setting,
            derive_seed(cfg.source.seed, &[LABEL_ENVELOPE, j as u64]),
        )?;
        let a = template.base_visibility * envelope(state, t);
        let _ = writeln!(csv, "{t},{v},{se},{a}");
        mc.push(v);
    }
    out.push("franson_envelope_mc.csv", csv);

    let g = cfg.franson.envelope_scan;
    let hi = g.start + g.step * (g.points.max(2) - 1) as f64;
    let fine: Vec<f64> = (0..=400)
        .map(|i| g.start + (hi - g.start) * i as f64 / 400.0)
        .collect();
    let env: Vec<f64> = fine
        .iter()
        .map(|&t| template.base_visibility * envelope(state, t))
        .collect();
    out.push(
        "franson_envelope.svg",
        line_plot(&LinePlot {
            title: "Fringe visibility versus τ_d".into(),
            x_label: "τ_d (ps)".into(),
            y_label: "visibility".into(),
            series: vec![
                Series::new("analytic", fine, env),
                Series::new("Monte Carlo", taus, mc),
            ],
        })?,
    );

    let mut txt = String::new();
    let _ = writeln!(txt, "revival_period_ps={}", 1.0 / state.params.fsr_thz());
    match central_lobe_width(state) {
        Some(w) => {
            let _ = writeln!(txt, "central_lobe_width_ps={w}");
        }
        None => {
            let _ = writeln!(txt, "central_lobe_width_ps=unavailable");
        }
    }
    let _ = writeln!(txt, "carrier_thz={}", analytic.carrier_thz);
    out.push("franson_taud.txt", txt);
    Ok(out)
}

const LABEL_GRATING_S: u64 = 0x4752_5453;
const LABEL_GRATING_I: u64 = 0x4752_5449;

/// Peaks ordered by sideband index, using the sign of the delay shift.
fn peaks_by_sideband(
    state: &BiphotonState,
    d_s: &DispersionElement,
    d_i: &DispersionElement,
    mut peaks: Vec<Peak>,
) -> Vec<Peak> {
    let (lo, hi) = (state.weights.first(), state.weights.last());
    let p = &state.params;
    if pair_delay_offset(p, d_s, d_i, hi) < pair_delay_offset(p, d_s, d_i, lo) {
        peaks.reverse();
    }
    peaks
}

fn dispersion(cfg: &ExperimentConfig, state: &BiphotonState) -> Result<RunOutput> {
    let [lo, hi] = cfg.dispersion.sidebands;
    let sub = cfg.dispersion_state()?;
    let seed = cfg.source.seed;
    // emit over the whole comb and filter, so the configured pair rate keeps its meaning
    let batch = generate_pairs(state, &cfg.source)?.filter_sidebands(|k| (lo..=hi).contains(&k));
    let (ch_s, ch_i) = cfg.channels();
    let sig0 = detect(&batch, Channel::Signal, ch_s, seed)?;
    let idl0 = detect(&batch, Channel::Idler, ch_i, seed)?;

    let none = DispersionElement::none(cfg.ref_wavelength_nm());
    let gs = cfg.grating(cfg.dispersion.d_signal_ns_per_nm);
    let gi = cfg.grating(cfg.dispersion.d_idler_ns_per_nm);
    let cases = [
        ("none", none, none),
        ("signal", gs, none),
        ("idler", none, gi),
        ("both", gs, gi),
    ];

    let mut out = RunOutput::default();
    let mut overlay = Vec::new();
    let mut signal_peaks = None;
    for (name, d_s, d_i) in cases {
        let sig = apply_dispersion(
            &sig0,
            &cfg.ring,
            &d_s,
            derive_seed(seed, &[LABEL_GRATING_S]),
        )?;
        let idl = apply_dispersion(
            &idl0,
            &cfg.ring,
            &d_i,
            derive_seed(seed, &[LABEL_GRATING_I]),
        )?;
        let hist = cross_correlate(&sig, &idl, cfg.tia.bin_ps, cfg.tia.range_ps())?;
        let centers = hist.centers();
        let analytic = dispersed_correlation(&sub, &d_s, &d_i, &centers)?;
        let curve = hist.to_curve(name);
        let peaks = if curve.max() > 0.0 {
            peak_positions(&curve, 0.3 * curve.max())?
        } else {
            Vec::new()
        };
        out.push(format!("dispersion_{name}.csv"), hist.to_csv());
        out.push(format!("dispersion_{name}_analytic.csv"), analytic.to_csv());
        out.push(format!("peaks_{name}.csv"), peaks_to_csv(&peaks));

        let base = baseline(&hist, &analytic.values);
        let scale = fit_scale(&hist, &analytic.values, base);
        out.push(
            format!("dispersion_{name}.svg"),
            line_plot(&LinePlot {
                title: format!("Coincidences, grating on {name}"),
                x_label: "delay (ns)".into(),
                y_label: "counts per bin".into(),
                series: vec![
                    Series::new("measured", ns(&centers), curve.values.clone()),
                    Series::new(
                        "model",
                        ns(&centers),
                        analytic.values.iter().map(|v| base + scale * v).collect(),
                    ),
                ],
            })?,
        );
        overlay.push(Series::new(name, ns(&centers), curve.values.clone()));
        if name == "signal" {
            // peak areas must not include the accidental floor
            signal_peaks = Some((hist.baseline_subtracted(base, name), peaks, d_s, d_i));
        }
    }
    out.push(
        "dispersion.svg",
        line_plot(&LinePlot {
            title: "Coincidences with and without gratings".into(),
            x_label: "delay (ns)".into(),
            y_label: "counts per bin".into(),
            series: overlay,
        })?,
    );

    // frequency-to-time mapping: peak areas behind the signal grating against the JSI diagonal
    let (curve, peaks, d_s, d_i) = signal_peaks.expect("signal case always runs");
    let m = measure_jsi_detailed(state, &cfg.source, cfg.channels(), (lo, hi), &cfg.tia)?;
    let spacing = (pair_delay_offset(&cfg.ring, &d_s, &d_i, lo)
        - pair_delay_offset(&cfg.ring, &d_s, &d_i, lo + 1))
    .abs();
    let half = (0.4 * spacing).min(2500.0);
    let areas = integrate_peaks(&curve, &peaks_by_sideband(&sub, &d_s, &d_i, peaks), half);
    let mut txt = String::new();
    match frequency_time_map_check(&m.subtracted, &areas) {
        Ok(entries) => {
            let mut csv =
                String::from("k,jsi_diagonal,peak_height,ratio,stderr,consistent_3sigma\n");
            for e in &entries {
                let _ = writeln!(
                    csv,
                    "{},{},{},{},{},{}",
                    e.k,
                    e.jsi_diagonal,
                    e.peak_height,
                    e.ratio,
                    e.stderr,
                    e.consistent(3.0)
                );
            }
            let _ = writeln!(txt, "status=ok");
            let _ = writeln!(
                txt,
                "all_consistent_3sigma={}",
                entries.iter().all(|e| e.consistent(3.0))
            );
            out.push("ftm_check.csv", csv);
        }
        Err(e) => {
            let _ = writeln!(txt, "status=unavailable ({e})");
            out.warnings
                .push(format!("dispersion: frequency-to-time check skipped: {e}"));
        }
    }
    let _ = writeln!(txt, "peak_window_half_width_ps={half}");
    out.push("ftm_check.txt", txt);
    Ok(out)
}

fn prefixed(prefix: &str, r: &SchmidtResult) -> String {
    r.to_text()
        .lines()
        .map(|l| format!("{prefix}.{l}\n"))
        .collect()
}

fn schmidt(cfg: &ExperimentConfig, state: &BiphotonState) -> Result<RunOutput> {
    let p = simulate_schmidt_pipeline(state, &cfg.source, cfg.channels(), cfg.k_range(), &cfg.tia)?;
    let mut out = RunOutput::default();
    if p.k_min.clamped_cells > 0 {
        out.warnings.push(format!(
            "schmidt: {} negative JSI cells clamped to zero before the square root",
            p.k_min.clamped_cells
        ));
    }
    let mut txt = prefixed("k_min", &p.k_min);
    txt.push_str(&prefixed("k_diag", &p.k_diag));
    out.push("schmidt.txt", txt);
    out.push("jsi_schmidt.csv", p.jsi.to_csv());
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::ValueEnum;

    #[test]
    fn names_match_cli_values() {
        for e in Experiment::value_variants() {
            let v = e.to_possible_value().unwrap();
            assert_eq!(v.get_name(), e.name());
        }
    }
}
