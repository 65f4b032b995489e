//! Franson two-photon interference for a comb of sideband pairs.
//!
//! With sideband weights `w_k`, idler carriers `ω_{i,k}` and imbalance
//! difference `τ_d = τ_i - τ_s`, the post-selected coincidence rate is
//!
//! ```text
//! C = ½·[1 + V₀·Re(exp(i·2ω_p·τ_s) · E(τ_d))]
//! E(τ_d) = exp(-Γ|τ_d|) · Σ_k w_k · exp(i·ω_{i,k}·τ_d)
//! ```
//!
//! For two equal sidebands this is the familiar
//! `1 + cos(2ω_p τ_s + ω̄_i τ_d)·cos(Δω τ_d / 2)` form; with more sidebands the
//! envelope `|E|` becomes a Dirichlet kernel with revivals every `1/FSR`.

use std::f64::consts::{FRAC_1_SQRT_2, PI, TAU};
use std::ops::Range;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::correlator::count_in_window;
use crate::error::{invalid, Error, Result};
use crate::events::{
    detect, generate_pairs, sort_tags, tag_uniform, Channel, ChannelConfig, SourceConfig, TimeTag,
    Truth,
};
use crate::state::BiphotonState;
use crate::units::{phase_cycles, FS_PER_PS, PS_PER_NS};

/// Visibility above which two-photon fringes rule out local hidden-variable
/// models of energy-time correlations.
pub const BELL_VISIBILITY_THRESHOLD: f64 = FRAC_1_SQRT_2;

fn default_pump_coherence_us() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FransonConfig {
    /// Long-minus-short delay of the signal interferometer.
    pub tau_s_ns: f64,
    pub tau_i_ns: f64,
    /// Lumped visibility factor V₀ covering every non-ideal effect.
    pub base_visibility: f64,
    #[serde(default = "default_pump_coherence_us")]
    pub pump_coherence_us: f64,
}

impl FransonConfig {
    pub fn new(tau_s_ns: f64, tau_i_ns: f64, base_visibility: f64) -> Self {
        FransonConfig {
            tau_s_ns,
            tau_i_ns,
            base_visibility,
            pump_coherence_us: default_pump_coherence_us(),
        }
    }

    pub fn tau_s_ps(&self) -> f64 {
        self.tau_s_ns * PS_PER_NS
    }

    pub fn tau_i_ps(&self) -> f64 {
        self.tau_i_ns * PS_PER_NS
    }

    pub fn tau_d_ps(&self) -> f64 {
        self.tau_i_ps() - self.tau_s_ps()
    }

    /// Imbalances must exceed five single-photon coherence times `1/(π·FWHM)`
    /// and stay below the pump coherence time.
    pub fn validate(&self, state: &BiphotonState) -> Result<()> {
        if !(0.0..=1.0).contains(&self.base_visibility) {
            return Err(invalid("base_visibility", "must lie in [0, 1]"));
        }
        let single = 1.0 / (PI * state.params.linewidth_thz());
        let pump = self.pump_coherence_us * 1e6;
        for (field, tau) in [("tau_s_ns", self.tau_s_ps()), ("tau_i_ns", self.tau_i_ps())] {
            if !(tau > 5.0 * single) {
                return Err(invalid(
                    field,
                    format!(
                        "{:.3} ns does not exceed 5 single-photon coherence times ({:.3} ns)",
                        tau / PS_PER_NS,
                        5.0 * single / PS_PER_NS
                    ),
                ));
            }
            if !(tau < pump) {
                return Err(invalid(
                    field,
                    "must be shorter than the pump coherence time",
                ));
            }
        }
        Ok(())
    }
}

/// Single-resonance coherence factor `exp(-Γ|τ_d|)`.
pub fn coherence_factor(state: &BiphotonState, tau_d_ps: f64) -> f64 {
    (-state.gamma() * tau_d_ps.abs()).exp()
}

/// `|Σ_k w_k exp(i·ω_{i,k}·τ_d)|` without the single-resonance factor.
pub fn discrete_envelope(state: &BiphotonState, tau_d_ps: f64) -> f64 {
    // a common carrier only rotates the sum, so offsets from the pump suffice
    let fsr = state.params.fsr_thz();
    let (re, im) = state.weights.iter().fold((0.0, 0.0), |(re, im), (k, w)| {
        let phi = TAU * phase_cycles(-f64::from(k) * fsr, tau_d_ps);
        (re + w * phi.cos(), im + w * phi.sin())
    });
    re.hypot(im)
}

/// Fringe envelope `|E(τ_d)|`.
pub fn envelope(state: &BiphotonState, tau_d_ps: f64) -> f64 {
    coherence_factor(state, tau_d_ps) * discrete_envelope(state, tau_d_ps)
}

fn idler_frequency(state: &BiphotonState, k: i32) -> f64 {
    state.params.pump_thz() - f64::from(k) * state.params.fsr_thz()
}

/// Normalized rate for explicit imbalances in ps.
pub fn rate_at(state: &BiphotonState, base_visibility: f64, tau_s_ps: f64, tau_d_ps: f64) -> f64 {
    let pump_phase = phase_cycles(2.0 * state.params.pump_thz(), tau_s_ps);
    let sum: f64 = state
        .weights
        .iter()
        .map(|(k, w)| {
            let p = pump_phase + phase_cycles(idler_frequency(state, k), tau_d_ps);
            w * (TAU * p).cos()
        })
        .sum();
    0.5 * (1.0 + base_visibility * coherence_factor(state, tau_d_ps) * sum)
}

/// Post-selected coincidence rate normalized to [0, 1].
pub fn coincidence_rate(state: &BiphotonState, cfg: &FransonConfig) -> f64 {
    rate_at(state, cfg.base_visibility, cfg.tau_s_ps(), cfg.tau_d_ps())
}

/// Coincidence probability of one pair whose idler has frequency `idler_thz`.
/// Averaging over the Lorentzian detuning restores the `exp(-Γ|τ_d|)` factor.
pub fn pair_rate(state: &BiphotonState, cfg: &FransonConfig, idler_thz: f64) -> f64 {
    let p = phase_cycles(2.0 * state.params.pump_thz(), cfg.tau_s_ps())
        + phase_cycles(idler_thz, cfg.tau_d_ps());
    0.5 * (1.0 + cfg.base_visibility * (TAU * p).cos())
}

/// Weighted mean idler carrier, THz.
pub fn mean_idler_frequency(state: &BiphotonState) -> f64 {
    state
        .weights
        .iter()
        .map(|(k, w)| w * idler_frequency(state, k))
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScanAxis {
    /// τ_s and τ_i moved together.
    CommonDelay,
    /// τ_s fixed, τ_i swept.
    TauD,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FringeScan {
    pub axis: ScanAxis,
    /// Common-delay offsets or τ_d values, fs.
    pub delays_fs: Vec<f64>,
    pub coincidences: Vec<f64>,
    /// Expected fringe visibility at each point, when known.
    pub visibility: Option<Vec<f64>>,
    /// Fringe carrier along the scan axis, THz.
    pub carrier_thz: f64,
}

impl FringeScan {
    pub fn to_csv(&self) -> String {
        use std::fmt::Write as _;
        let mut out = String::from(if self.visibility.is_some() {
            "delay_fs,coincidences,visibility\n"
        } else {
            "delay_fs,coincidences\n"
        });
        for (i, (d, c)) in self.delays_fs.iter().zip(&self.coincidences).enumerate() {
            let _ = match &self.visibility {
                Some(v) => writeln!(out, "{d},{c},{}", v[i]),
                None => writeln!(out, "{d},{c}"),
            };
        }
        out
    }
}

/// Analytic fringe scan.
///
/// `CommonDelay`: each grid value (fs) is added to both imbalances; fringes
/// have period `1/(2ν_p)`. `TauD`: each grid value is τ_d itself with τ_s
/// held at the template value; fringes follow the mean idler carrier under
/// the envelope `|E|`.
pub fn fringe_scan(
    state: &BiphotonState,
    template: &FransonConfig,
    axis: ScanAxis,
    grid_fs: &[f64],
) -> Result<FringeScan> {
    if grid_fs.is_empty() {
        return Err(invalid("grid", "scan grid is empty"));
    }
    template.validate(state)?;
    let v0 = template.base_visibility;
    let (coincidences, visibility): (Vec<f64>, Vec<f64>) = grid_fs
        .iter()
        .map(|&g| {
            let g_ps = g / FS_PER_PS;
            let (tau_s, tau_d) = match axis {
                ScanAxis::CommonDelay => (template.tau_s_ps() + g_ps, template.tau_d_ps()),
                ScanAxis::TauD => (template.tau_s_ps(), g_ps),
            };
            (
                rate_at(state, v0, tau_s, tau_d),
                v0 * envelope(state, tau_d),
            )
        })
        .unzip();
    let carrier_thz = match axis {
        ScanAxis::CommonDelay => 2.0 * state.params.pump_thz(),
        ScanAxis::TauD => mean_idler_frequency(state),
    };
    Ok(FringeScan {
        axis,
        delays_fs: grid_fs.to_vec(),
        coincidences,
        visibility: Some(visibility),
        carrier_thz,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FringeFit {
    pub visibility: f64,
    /// Phase of the cosine at zero delay, rad.
    pub phase: f64,
    pub stderr: f64,
    pub offset: f64,
    pub amplitude: f64,
    /// Residual sum of squares.
    pub rss: f64,
}

impl FringeFit {
    pub fn exceeds_bell_threshold(&self) -> bool {
        self.visibility > BELL_VISIBILITY_THRESHOLD
    }
}

fn solve3(m: [[f64; 3]; 3], rhs: [f64; 3]) -> Option<[f64; 3]> {
    let inv = invert3(m)?;
    Some([0, 1, 2].map(|r| (0..3).map(|c| inv[r][c] * rhs[c]).sum()))
}

fn invert3(m: [[f64; 3]; 3]) -> Option<[[f64; 3]; 3]> {
    let cof = |r: usize, c: usize| {
        let (r1, r2) = ((r + 1) % 3, (r + 2) % 3);
        let (c1, c2) = ((c + 1) % 3, (c + 2) % 3);
        m[r1][c1] * m[r2][c2] - m[r1][c2] * m[r2][c1]
    };
    let det = m[0][0] * cof(0, 0) + m[0][1] * cof(0, 1) + m[0][2] * cof(0, 2);
    let scale = m.iter().flatten().fold(0.0f64, |a, v| a.max(v.abs()));
    if !(det.abs() > 1e-14 * scale.powi(3)) {
        return None;
    }
    Some([0, 1, 2].map(|r| [0, 1, 2].map(|c| cof(c, r) / det)))
}

/// Least-squares fit of `a + b·cos(2πνx) + c·sin(2πνx)` at a fixed frequency.
fn sinusoid_fit(x_ps: &[f64], y: &[f64], freq_thz: f64) -> Option<([f64; 3], f64, [[f64; 3]; 3])> {
    let mut xtx = [[0.0; 3]; 3];
    let mut xty = [0.0; 3];
    let rows: Vec<[f64; 3]> = x_ps
        .iter()
        .map(|&x| {
            let p = TAU * phase_cycles(freq_thz, x);
            [1.0, p.cos(), p.sin()]
        })
        .collect();
    for (row, &yv) in rows.iter().zip(y) {
        for r in 0..3 {
            xty[r] += row[r] * yv;
            for c in 0..3 {
                xtx[r][c] += row[r] * row[c];
            }
        }
    }
    let beta = solve3(xtx, xty)?;
    let rss = rows
        .iter()
        .zip(y)
        .map(|(row, &yv)| {
            let fit: f64 = (0..3).map(|i| row[i] * beta[i]).sum();
            (yv - fit).powi(2)
        })
        .sum();
    Some((beta, rss, invert3(xtx)?))
}

fn window_data(scan: &FringeScan, window: Range<usize>) -> Result<(Vec<f64>, Vec<f64>)> {
    if window.end > scan.delays_fs.len() || window.len() < 4 {
        return Err(invalid(
            "window",
            "needs at least four scan points inside the scan",
        ));
    }
    let x: Vec<f64> = scan.delays_fs[window.clone()]
        .iter()
        .map(|d| d / FS_PER_PS)
        .collect();
    Ok((x, scan.coincidences[window].to_vec()))
}

/// Sinusoid fit at the scan's known carrier; visibility = amplitude / offset.
pub fn fit_visibility(scan: &FringeScan, window: Range<usize>) -> Result<FringeFit> {
    let (x, y) = window_data(scan, window)?;
    let span = x[x.len() - 1] - x[0];
    if span * scan.carrier_thz < 2.0 {
        return Err(invalid(
            "window",
            "fit window must span at least two fringe periods",
        ));
    }
    let (beta, rss, inv) = sinusoid_fit(&x, &y, scan.carrier_thz)
        .ok_or_else(|| Error::Degenerate("singular fringe fit".into()))?;
    let [a, b, c] = beta;
    if !(a > 0.0) {
        return Err(Error::Degenerate(
            "fitted fringe offset is not positive".into(),
        ));
    }
    let amplitude = b.hypot(c);
    let visibility = amplitude / a;
    let dof = x.len() as f64 - 3.0;
    let sigma2 = rss / dof;
    let cov = |i: usize, j: usize| sigma2 * inv[i][j];
    let stderr = if amplitude > 0.0 {
        let g = [-visibility / a, b / (a * amplitude), c / (a * amplitude)];
        (0..3)
            .flat_map(|i| (0..3).map(move |j| (i, j)))
            .map(|(i, j)| g[i] * g[j] * cov(i, j))
            .sum::<f64>()
            .max(0.0)
            .sqrt()
    } else {
        (0.5 * (cov(1, 1) + cov(2, 2))).max(0.0).sqrt() / a
    };
    Ok(FringeFit {
        visibility,
        phase: (-c).atan2(b),
        stderr,
        offset: a,
        amplitude,
        rss,
    })
}

/// Fringe period (fs) with the carrier treated as unknown inside
/// `[f_min, f_max]` THz: coarse periodogram scan then golden-section refinement.
pub fn fit_period(scan: &FringeScan, window: Range<usize>, f_min: f64, f_max: f64) -> Result<f64> {
    if !(f_min > 0.0 && f_max > f_min) {
        return Err(invalid("frequency range", "need 0 < f_min < f_max"));
    }
    let (x, y) = window_data(scan, window)?;
    let rss = |f: f64| sinusoid_fit(&x, &y, f).map_or(f64::INFINITY, |(_, r, _)| r);
    let n = 4000;
    let step = (f_max - f_min) / n as f64;
    let best = (0..=n)
        .map(|i| f_min + i as f64 * step)
        .min_by(|a, b| rss(*a).total_cmp(&rss(*b)))
        .expect("non-empty grid");
    let (mut lo, mut hi) = ((best - step).max(f_min), (best + step).min(f_max));
    let g = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..100 {
        let m1 = hi - g * (hi - lo);
        let m2 = lo + g * (hi - lo);
        if rss(m1) < rss(m2) {
            hi = m2;
        } else {
            lo = m1;
        }
    }
    Ok(FS_PER_PS / (0.5 * (lo + hi)))
}

/// Peak of a sampled curve inside `[lo, hi]`, refined by a least-squares
/// parabola through every sample within `half_width` of the raw maximum.
pub fn locate_peak(
    delays: &[f64],
    values: &[f64],
    lo: f64,
    hi: f64,
    half_width: f64,
) -> Result<f64> {
    let (imax, _) = delays
        .iter()
        .zip(values)
        .enumerate()
        .filter(|(_, (d, _))| (lo..=hi).contains(*d))
        .max_by(|a, b| a.1 .1.total_cmp(b.1 .1))
        .ok_or_else(|| Error::Degenerate("no samples in the search range".into()))?;
    let x0 = delays[imax];
    let mut xtx = [[0.0; 3]; 3];
    let mut xty = [0.0; 3];
    let mut n = 0;
    for (&d, &v) in delays.iter().zip(values) {
        if (d - x0).abs() <= half_width {
            let u = d - x0;
            let row = [1.0, u, u * u];
            for r in 0..3 {
                xty[r] += row[r] * v;
                for c in 0..3 {
                    xtx[r][c] += row[r] * row[c];
                }
            }
            n += 1;
        }
    }
    if n < 3 {
        return Err(Error::Degenerate("too few samples around the peak".into()));
    }
    let [_, b, c] =
        solve3(xtx, xty).ok_or_else(|| Error::Degenerate("singular parabola fit".into()))?;
    if !(c < 0.0) {
        return Err(Error::Degenerate(
            "samples around the maximum are not concave".into(),
        ));
    }
    Ok(x0 - b / (2.0 * c))
}

/// Width (ps) of the central envelope lobe: twice the first minimum of `|E|`
/// for τ_d in `(0, 1/FSR)`. `None` when the envelope has no interior minimum.
pub fn central_lobe_width(state: &BiphotonState) -> Option<f64> {
    let period = 1.0 / state.params.fsr_thz();
    let n = 4000;
    let h = period / n as f64;
    let env = |t: f64| envelope(state, t);
    let i = (1..n).find(|&i| {
        let t = i as f64 * h;
        env(t) <= env(t - h) && env(t) < env(t + h)
    })?;
    let (mut lo, mut hi) = ((i - 1) as f64 * h, (i + 1) as f64 * h);
    let g = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..100 {
        let m1 = hi - g * (hi - lo);
        let m2 = lo + g * (hi - lo);
        if env(m1) < env(m2) {
            hi = m2;
        } else {
            lo = m1;
        }
    }
    Some(lo + hi)
}

const LABEL_PATH: u64 = 0x5041_5448;
const LABEL_FATE: u64 = 0x4641_5445;

/// Detected tag streams ready to be sent through a Franson interferometer.
///
/// The interferometer acts at the probability level: a detected pair lands in
/// one of the satellite peaks (`|SL⟩`, `|LS⟩`) with probability ½ and is moved
/// out of the central window by ±τ_s; otherwise it is kept in the central peak
/// with probability [`pair_rate`] evaluated at the pair's own idler frequency.
/// Unpaired photons and dark counts pass unchanged and supply accidentals.
#[derive(Debug, Clone)]
pub struct FransonSimulator {
    state: BiphotonState,
    signal: Vec<TimeTag>,
    idler: Vec<TimeTag>,
    paired: Vec<bool>,
    window_ps: f64,
    in_window: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FransonCounts {
    /// Coincidences inside the central window, accidentals included.
    pub coincidences: u64,
    /// Pairs with both photons detected before the interferometers.
    pub detected_pairs: usize,
}

impl FransonSimulator {
    pub fn new(
        state: &BiphotonState,
        src: &SourceConfig,
        channels: (&ChannelConfig, &ChannelConfig),
        window_ps: f64,
    ) -> Result<Self> {
        if !(window_ps > 0.0) {
            return Err(invalid("window", "must be positive"));
        }
        let batch = generate_pairs(state, src)?;
        let signal = detect(&batch, Channel::Signal, channels.0, src.seed)?;
        let idler = detect(&batch, Channel::Idler, channels.1, src.seed)?;
        let mut paired = vec![false; batch.pairs.len()];
        let mut signal_time = vec![f64::NAN; batch.pairs.len()];
        for t in &signal {
            if let Some(id) = t.pair_id() {
                signal_time[id as usize] = t.time_ps;
            }
        }
        let half = window_ps / 2.0;
        let mut in_window = 0;
        for t in &idler {
            if let Some(id) = t.pair_id() {
                let ts = signal_time[id as usize];
                paired[id as usize] = !ts.is_nan();
                if (-half..half).contains(&(ts - t.time_ps)) {
                    in_window += 1;
                }
            }
        }
        Ok(FransonSimulator {
            state: state.clone(),
            signal,
            idler,
            paired,
            window_ps,
            in_window,
        })
    }

    pub fn detected_pairs(&self) -> usize {
        self.paired.iter().filter(|&&p| p).count()
    }

    /// Detected pairs whose photons fall inside the central window without
    /// interferometers; the sample that every setting re-weights.
    pub fn pairs_in_window(&self) -> usize {
        self.in_window
    }

    /// Runs one interferometer setting. Reproducible from `(cfg, seed)`.
    pub fn count(&self, cfg: &FransonConfig, seed: u64) -> Result<FransonCounts> {
        cfg.validate(&self.state)?;
        if self.window_ps >= cfg.tau_s_ps() {
            return Err(invalid(
                "window",
                "coincidence window must be shorter than tau_s",
            ));
        }
        let pump = self.state.params.pump_thz();
        let fsr = self.state.params.fsr_thz();
        let mut idler = Vec::with_capacity(self.idler.len());
        for tag in &self.idler {
            let Truth::Pair {
                id,
                k,
                detuning_thz,
            } = tag.truth
            else {
                idler.push(*tag);
                continue;
            };
            if !self.paired[id as usize] {
                idler.push(*tag);
                continue;
            }
            let path = tag_uniform(seed, LABEL_PATH, tag);
            if path < 0.5 {
                let shift = if path < 0.25 {
                    cfg.tau_i_ps()
                } else {
                    -cfg.tau_i_ps()
                };
                idler.push(TimeTag {
                    time_ps: tag.time_ps + shift,
                    ..*tag
                });
                continue;
            }
            let nu_i = pump - f64::from(k) * fsr - detuning_thz;
            if tag_uniform(seed, LABEL_FATE, tag) < pair_rate(&self.state, cfg, nu_i) {
                idler.push(*tag);
            }
        }
        sort_tags(&mut idler);
        let half = self.window_ps / 2.0;
        Ok(FransonCounts {
            coincidences: count_in_window(&self.signal, &idler, -half, half)?,
            detected_pairs: self.detected_pairs(),
        })
    }

    /// Evaluates many settings concurrently; setting `j` uses a seed derived from `(seed, j)`.
    pub fn count_many(&self, cfgs: &[FransonConfig], seed: u64) -> Result<Vec<FransonCounts>> {
        cfgs.par_iter()
            .enumerate()
            .map(|(j, cfg)| self.count(cfg, crate::rng::derive_seed(seed, &[j as u64])))
            .collect()
    }

    /// Monte Carlo fringe scan over the same axes as [`fringe_scan`].
    pub fn scan(
        &self,
        template: &FransonConfig,
        axis: ScanAxis,
        grid_fs: &[f64],
        seed: u64,
    ) -> Result<FringeScan> {
        let cfgs: Vec<FransonConfig> = grid_fs
            .iter()
            .map(|&g| {
                let g_ns = g / FS_PER_PS / PS_PER_NS;
                match axis {
                    ScanAxis::CommonDelay => FransonConfig {
                        tau_s_ns: template.tau_s_ns + g_ns,
                        tau_i_ns: template.tau_i_ns + g_ns,
                        ..*template
                    },
                    ScanAxis::TauD => FransonConfig {
                        tau_i_ns: template.tau_s_ns + g_ns,
                        ..*template
                    },
                }
            })
            .collect();
        let counts = self.count_many(&cfgs, seed)?;
        Ok(FringeScan {
            axis,
            delays_fs: grid_fs.to_vec(),
            coincidences: counts.iter().map(|c| c.coincidences as f64).collect(),
            visibility: None,
            carrier_thz: match axis {
                ScanAxis::CommonDelay => 2.0 * self.state.params.pump_thz(),
                ScanAxis::TauD => mean_idler_frequency(&self.state),
            },
        })
    }
}

/// One Monte Carlo Franson measurement: central-window coincidence count.
pub fn mc_franson(
    state: &BiphotonState,
    src: &SourceConfig,
    channels: (&ChannelConfig, &ChannelConfig),
    cfg: &FransonConfig,
    window_ps: f64,
    seed: u64,
) -> Result<FransonCounts> {
    if window_ps >= cfg.tau_s_ps() {
        return Err(invalid(
            "window",
            "coincidence window must be shorter than tau_s",
        ));
    }
    FransonSimulator::new(state, src, channels, window_ps)?.count(cfg, seed)
}
