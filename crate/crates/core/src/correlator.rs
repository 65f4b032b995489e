//! Time interval analysis: signal/idler cross-correlation histograms,
//! coincidence-to-accidental ratio, JSI measurement and gate compensation.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::events::{detect, generate_pairs, Channel, ChannelConfig, Gate, SourceConfig, TimeTag};
use crate::jsi::{JsiMatrix, JsiNormalization};
use crate::rng::derive_seed;
use crate::state::{BiphotonState, CorrelationCurve};
use crate::units::PS_PER_NS;

/// Time interval analyzer settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TiaConfig {
    pub bin_ps: f64,
    /// Histogram covers delays in `[-range, +range)`.
    pub range_ns: f64,
    /// Coincidence window width.
    pub window_ns: f64,
}

impl Default for TiaConfig {
    fn default() -> Self {
        TiaConfig {
            bin_ps: 100.0,
            range_ns: 50.0,
            window_ns: 2.0,
        }
    }
}

impl TiaConfig {
    pub fn validate(&self) -> Result<()> {
        Histogram::new(self.bin_ps, self.range_ps())?;
        if self.window_ps() < self.bin_ps {
            return Err(invalid("window_ns", "window must be at least one bin wide"));
        }
        if self.window_ps() > self.range_ps() {
            return Err(invalid(
                "window_ns",
                "window exceeds half the histogram span",
            ));
        }
        Ok(())
    }

    pub fn range_ps(&self) -> f64 {
        self.range_ns * PS_PER_NS
    }

    pub fn window_ps(&self) -> f64 {
        self.window_ns * PS_PER_NS
    }
}

/// Counts of signal-minus-idler delays. Bin `b` covers
/// `[-range + b·bin, -range + (b+1)·bin)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub bin_width_ps: f64,
    pub range_ps: f64,
    pub counts: Vec<u64>,
    pub n_signal: u64,
    pub n_idler: u64,
}

impl Histogram {
    pub fn new(bin_width_ps: f64, range_ps: f64) -> Result<Self> {
        if !(bin_width_ps > 0.0) || !(range_ps > 0.0) {
            return Err(invalid("bin_ps", "bin width and range must be positive"));
        }
        let n = 2.0 * range_ps / bin_width_ps;
        if (n - n.round()).abs() > 1e-9 * n {
            return Err(invalid(
                "range_ns",
                "twice the range must be a multiple of the bin width",
            ));
        }
        Ok(Histogram {
            bin_width_ps,
            range_ps,
            counts: vec![0; n.round() as usize],
            n_signal: 0,
            n_idler: 0,
        })
    }

    pub fn n_bins(&self) -> usize {
        self.counts.len()
    }

    pub fn bin_of(&self, delay_ps: f64) -> Option<usize> {
        if !(delay_ps >= -self.range_ps && delay_ps < self.range_ps) {
            return None;
        }
        let b = ((delay_ps + self.range_ps) / self.bin_width_ps).floor() as usize;
        (b < self.counts.len()).then_some(b)
    }

    pub fn bin_center(&self, b: usize) -> f64 {
        -self.range_ps + (b as f64 + 0.5) * self.bin_width_ps
    }

    pub fn centers(&self) -> Vec<f64> {
        (0..self.n_bins()).map(|b| self.bin_center(b)).collect()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    fn check_compatible(&self, other: &Histogram) -> Result<()> {
        if self.bin_width_ps != other.bin_width_ps || self.range_ps != other.range_ps {
            return Err(invalid(
                "histogram",
                "cannot combine histograms with different binning",
            ));
        }
        Ok(())
    }

    /// Adds another histogram in place. Addition is associative and commutative.
    pub fn merge(&mut self, other: &Histogram) -> Result<()> {
        self.check_compatible(other)?;
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.n_signal += other.n_signal;
        self.n_idler += other.n_idler;
        Ok(())
    }

    /// Histogram with the delay axis reversed (signal and idler swapped).
    pub fn mirrored(&self) -> Histogram {
        let mut counts = self.counts.clone();
        counts.reverse();
        Histogram {
            counts,
            n_signal: self.n_idler,
            n_idler: self.n_signal,
            ..self.clone()
        }
    }

    pub fn to_curve(&self, label: impl Into<String>) -> CorrelationCurve {
        CorrelationCurve::new(
            self.centers(),
            self.counts.iter().map(|&c| c as f64).collect(),
            label,
        )
        .expect("bin centers increase and counts are non-negative")
    }

    /// Curve with a flat per-bin baseline removed, clamped at zero.
    pub fn baseline_subtracted(&self, per_bin: f64, label: impl Into<String>) -> CorrelationCurve {
        CorrelationCurve::new(
            self.centers(),
            self.counts
                .iter()
                .map(|&c| (c as f64 - per_bin).max(0.0))
                .collect(),
            label,
        )
        .expect("bin centers increase and values are clamped")
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("delay_ps,counts\n");
        for (b, c) in self.counts.iter().enumerate() {
            let _ = writeln!(out, "{},{c}", self.bin_center(b));
        }
        out
    }
}

fn check_sorted(tags: &[TimeTag], name: &'static str) -> Result<()> {
    if tags.windows(2).any(|w| !(w[0].time_ps <= w[1].time_ps)) {
        return Err(Error::UnsortedStream(name));
    }
    Ok(())
}

/// Multi-stop cross-correlation of two time-sorted streams.
///
/// A single forward sweep keeps a lower pointer into the idler stream, so the
/// cost is linear in the stream lengths plus the number of pairs inside the range.
pub fn cross_correlate(
    signal: &[TimeTag],
    idler: &[TimeTag],
    bin_width_ps: f64,
    range_ps: f64,
) -> Result<Histogram> {
    check_sorted(signal, "signal")?;
    check_sorted(idler, "idler")?;
    let mut hist = Histogram::new(bin_width_ps, range_ps)?;
    hist.n_signal = signal.len() as u64;
    hist.n_idler = idler.len() as u64;
    // one bin of slack; exact membership is decided by `bin_of`
    let reach = range_ps + bin_width_ps;
    let mut lo = 0;
    for s in signal {
        while lo < idler.len() && s.time_ps - idler[lo].time_ps > reach {
            lo += 1;
        }
        for i in &idler[lo..] {
            if i.time_ps - s.time_ps > reach {
                break;
            }
            if let Some(b) = hist.bin_of(s.time_ps - i.time_ps) {
                hist.counts[b] += 1;
            }
        }
    }
    Ok(hist)
}

/// Number of (signal, idler) pairs with `lo <= t_s - t_i < hi`.
pub fn count_in_window(
    signal: &[TimeTag],
    idler: &[TimeTag],
    lo_ps: f64,
    hi_ps: f64,
) -> Result<u64> {
    check_sorted(signal, "signal")?;
    check_sorted(idler, "idler")?;
    let mut first = 0;
    let mut n = 0;
    for s in signal {
        while first < idler.len() && s.time_ps - idler[first].time_ps >= hi_ps {
            first += 1;
        }
        n += idler[first..]
            .iter()
            .take_while(|i| s.time_ps - i.time_ps >= lo_ps)
            .count() as u64;
    }
    Ok(n)
}

/// Coincidence-to-accidental ratio estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CarEstimate {
    /// `f64::INFINITY` when no accidental was observed.
    pub ratio: f64,
    pub peak_counts: u64,
    /// Mean counts per off-peak window.
    pub mean_accidentals: f64,
    pub n_background_windows: usize,
    /// Centre of the peak window, ps.
    pub peak_center_ps: f64,
    pub window_bins: usize,
}

impl CarEstimate {
    pub fn is_infinite(&self) -> bool {
        self.ratio.is_infinite()
    }

    /// Peak minus mean accidentals, clamped at zero.
    pub fn net_coincidences(&self) -> f64 {
        (self.peak_counts as f64 - self.mean_accidentals).max(0.0)
    }

    /// Counting-statistics standard error of the ratio.
    pub fn stderr(&self) -> f64 {
        let background = self.mean_accidentals * self.n_background_windows as f64;
        if self.peak_counts == 0 || background == 0.0 {
            return f64::INFINITY;
        }
        self.ratio * (1.0 / self.peak_counts as f64 + 1.0 / background).sqrt()
    }
}

/// Gap between the peak window and the first background window. The peak's
/// exponential tails would otherwise leak into the accidental estimate.
pub const BACKGROUND_GUARD_PS: f64 = 5000.0;

/// CAR with the peak window placed where it collects the most counts.
pub fn car(hist: &Histogram, window_ps: f64) -> Result<CarEstimate> {
    let w = window_bins(hist, window_ps)?;
    let mut sum: u64 = hist.counts[..w].iter().sum();
    let (mut best, mut best_sum) = (0, sum);
    for a in 1..=hist.n_bins() - w {
        sum = sum + hist.counts[a + w - 1] - hist.counts[a - 1];
        if sum > best_sum {
            (best, best_sum) = (a, sum);
        }
    }
    car_from_start(hist, w, best, BACKGROUND_GUARD_PS)
}

/// CAR with the peak window centred at a given delay (e.g. zero, where an
/// energy-matched pair would produce its peak).
pub fn car_at(hist: &Histogram, window_ps: f64, center_ps: f64) -> Result<CarEstimate> {
    car_at_with_guard(hist, window_ps, center_ps, BACKGROUND_GUARD_PS)
}

/// As [`car_at`], with background windows starting `guard_ps` away from the peak window.
pub fn car_at_with_guard(
    hist: &Histogram,
    window_ps: f64,
    center_ps: f64,
    guard_ps: f64,
) -> Result<CarEstimate> {
    let w = window_bins(hist, window_ps)?;
    // nearest bin edge to the centre, minus half the window
    let edge = ((center_ps + hist.range_ps) / hist.bin_width_ps)
        .round()
        .max(0.0) as usize;
    let start = edge.saturating_sub(w / 2).min(hist.n_bins() - w);
    car_from_start(hist, w, start, guard_ps)
}

fn window_bins(hist: &Histogram, window_ps: f64) -> Result<usize> {
    if window_ps < hist.bin_width_ps {
        return Err(invalid("window", "window must be at least one bin wide"));
    }
    if window_ps > hist.range_ps {
        return Err(invalid("window", "window exceeds half the histogram span"));
    }
    Ok(((window_ps / hist.bin_width_ps).round() as usize).max(1))
}

fn car_from_start(hist: &Histogram, w: usize, start: usize, guard_ps: f64) -> Result<CarEstimate> {
    if !(guard_ps >= 0.0) {
        return Err(invalid("guard", "must be non-negative"));
    }
    let n = hist.n_bins();
    let guard = (guard_ps / hist.bin_width_ps).ceil() as usize;
    let end = start + w;
    let window_sum = |a: usize| hist.counts[a..a + w].iter().sum::<u64>();
    let peak = window_sum(start);
    let mut background = 0u64;
    let mut windows = 0usize;
    let mut a = start.saturating_sub(guard);
    while a >= w && start >= guard {
        a -= w;
        background += window_sum(a);
        windows += 1;
    }
    let mut a = end + guard;
    while a + w <= n {
        background += window_sum(a);
        windows += 1;
        a += w;
    }
    if windows == 0 {
        return Err(invalid(
            "window",
            "no off-peak window fits in the histogram",
        ));
    }
    let mean = background as f64 / windows as f64;
    let ratio = if mean > 0.0 {
        peak as f64 / mean
    } else {
        f64::INFINITY
    };
    Ok(CarEstimate {
        ratio,
        peak_counts: peak,
        mean_accidentals: mean,
        n_background_windows: windows,
        peak_center_ps: -hist.range_ps + (start as f64 + w as f64 / 2.0) * hist.bin_width_ps,
        window_bins: w,
    })
}

/// Expected CAR for one sideband pair from rates alone.
///
/// `pair_rate_hz` is the rate of pairs in the selected sideband; the true
/// coincidence fraction inside the window follows the `exp(-2Γ|τ|)` profile
/// (timing jitter ignored).
pub fn predicted_car(
    pair_rate_hz: f64,
    signal: &ChannelConfig,
    idler: &ChannelConfig,
    gamma_per_ps: f64,
    window_ps: f64,
) -> f64 {
    let to_ps = 1e-12;
    let r = pair_rate_hz * to_ps;
    let s = r * signal.efficiency + signal.dark_rate_hz * to_ps;
    let i = r * idler.efficiency + idler.dark_rate_hz * to_ps;
    let true_rate =
        r * signal.efficiency * idler.efficiency * (1.0 - (-gamma_per_ps * window_ps).exp());
    let acc = s * i * window_ps;
    (true_rate + acc) / acc
}

/// Histogram of one pulse-shaper setting: signal sideband `ks`, idler sideband `ki`.
pub fn sideband_histogram(
    state: &BiphotonState,
    src: &SourceConfig,
    channels: (&ChannelConfig, &ChannelConfig),
    ks: i32,
    ki: i32,
    tia: &TiaConfig,
) -> Result<Histogram> {
    let batch = generate_pairs(state, src)?;
    cell_histogram(&batch, channels, ks, ki, tia, src.seed)
}

fn cell_histogram(
    batch: &crate::events::PairBatch,
    channels: (&ChannelConfig, &ChannelConfig),
    ks: i32,
    ki: i32,
    tia: &TiaConfig,
    seed: u64,
) -> Result<Histogram> {
    let cell_seed = derive_seed(seed, &[0x4A53_4943, ks as u64, ki as u64]);
    let sig = detect(
        &batch.filter_sidebands(|k| k == ks),
        Channel::Signal,
        channels.0,
        cell_seed,
    )?;
    let idl = detect(
        &batch.filter_sidebands(|k| k == ki),
        Channel::Idler,
        channels.1,
        cell_seed,
    )?;
    cross_correlate(&sig, &idl, tia.bin_ps, tia.range_ps())
}

/// Raw and accidental-subtracted JSI from one Monte Carlo run.
#[derive(Debug, Clone, PartialEq)]
pub struct JsiMeasurement {
    /// Peak-window coincidences minus mean accidentals, clamped at zero.
    pub subtracted: JsiMatrix,
    /// Peak-window coincidences including accidentals.
    pub raw: JsiMatrix,
    pub accidentals: JsiMatrix,
}

/// Scans every (signal, idler) sideband combination in `k_range` with an
/// ideal brick-wall filter per arm; windows are centred at zero delay.
pub fn measure_jsi_detailed(
    state: &BiphotonState,
    src: &SourceConfig,
    channels: (&ChannelConfig, &ChannelConfig),
    k_range: (i32, i32),
    tia: &TiaConfig,
) -> Result<JsiMeasurement> {
    tia.validate()?;
    let (k_lo, k_hi) = k_range;
    if k_lo > k_hi || !state.weights.contains(k_lo) || !state.weights.contains(k_hi) {
        return Err(invalid(
            "k_range",
            "must lie within the populated sidebands",
        ));
    }
    let batch = generate_pairs(state, src)?;
    let cells: Vec<(i32, i32)> = (k_lo..=k_hi)
        .flat_map(|ks| (k_lo..=k_hi).map(move |ki| (ks, ki)))
        .collect();
    let results: Vec<Result<(i32, i32, CarEstimate)>> = cells
        .par_iter()
        .map(|&(ks, ki)| {
            let h = cell_histogram(&batch, channels, ks, ki, tia, src.seed)?;
            Ok((ks, ki, car_at(&h, tia.window_ps(), 0.0)?))
        })
        .collect();
    let n = (k_hi - k_lo + 1) as usize;
    let mut out = JsiMeasurement {
        subtracted: JsiMatrix::zeros(k_lo, n, JsiNormalization::Counts),
        raw: JsiMatrix::zeros(k_lo, n, JsiNormalization::Counts),
        accidentals: JsiMatrix::zeros(k_lo, n, JsiNormalization::Counts),
    };
    for r in results {
        let (ks, ki, c) = r?;
        out.subtracted.set(ks, ki, c.net_coincidences());
        out.raw.set(ks, ki, c.peak_counts as f64);
        out.accidentals.set(ks, ki, c.mean_accidentals);
    }
    Ok(out)
}

/// Accidental-subtracted JSI; see [`measure_jsi_detailed`].
pub fn measure_jsi(
    state: &BiphotonState,
    src: &SourceConfig,
    channels: (&ChannelConfig, &ChannelConfig),
    k_range: (i32, i32),
    tia: &TiaConfig,
) -> Result<JsiMatrix> {
    Ok(measure_jsi_detailed(state, src, channels, k_range, tia)?.subtracted)
}

/// Bins whose gate acceptance falls below this are masked, not amplified.
pub const MIN_GATE_ACCEPTANCE: f64 = 0.05;

/// Relative probability that two photons separated by `delay_ps` both land in
/// an open gate, normalized to 1 at zero delay.
pub fn gate_acceptance(gate: &Gate, delay_ps: f64) -> f64 {
    let p = gate.period_ps();
    let w = gate.width_ps();
    let overlap = |d: f64| {
        let m_lo = ((d - w) / p).floor() as i64;
        let m_hi = ((d + w) / p).ceil() as i64;
        (m_lo..=m_hi)
            .map(|m| (w - (d - m as f64 * p).abs()).max(0.0))
            .sum::<f64>()
    };
    overlap(delay_ps) / overlap(0.0)
}

/// Histogram after gate compensation; `valid[b]` is false where the gate
/// acceptance was too small to correct.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrectedHistogram {
    pub bin_width_ps: f64,
    pub range_ps: f64,
    pub values: Vec<f64>,
    pub valid: Vec<bool>,
}

impl CorrectedHistogram {
    pub fn bin_center(&self, b: usize) -> f64 {
        -self.range_ps + (b as f64 + 0.5) * self.bin_width_ps
    }

    pub fn to_curve(&self, label: impl Into<String>) -> CorrelationCurve {
        CorrelationCurve::new(
            (0..self.values.len()).map(|b| self.bin_center(b)).collect(),
            self.values.clone(),
            label,
        )
        .expect("bin centers increase and values are non-negative")
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("delay_ps,counts,valid\n");
        for (b, (v, ok)) in self.values.iter().zip(&self.valid).enumerate() {
            let _ = writeln!(out, "{},{v},{}", self.bin_center(b), u8::from(*ok));
        }
        out
    }
}

/// Divides out the triangular roll-off caused by a finite detection gate.
pub fn compensate_gate(hist: &Histogram, gate: &Gate) -> Result<CorrectedHistogram> {
    gate.validate()?;
    let mut values = Vec::with_capacity(hist.n_bins());
    let mut valid = Vec::with_capacity(hist.n_bins());
    for (b, &c) in hist.counts.iter().enumerate() {
        let a = gate_acceptance(gate, hist.bin_center(b));
        let ok = a >= MIN_GATE_ACCEPTANCE;
        values.push(if ok { c as f64 / a } else { 0.0 });
        valid.push(ok);
    }
    if !valid.iter().any(|&v| v) {
        return Err(Error::Degenerate(
            "gate acceptance vanishes over the whole histogram".into(),
        ));
    }
    Ok(CorrectedHistogram {
        bin_width_ps: hist.bin_width_ps,
        range_ps: hist.range_ps,
        values,
        valid,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::events::Truth;
    use proptest::prelude::*;

    fn tag(t: f64, channel: Channel) -> TimeTag {
        TimeTag {
            time_ps: t,
            channel,
            truth: Truth::Dark,
        }
    }

    fn stream(times: &[f64], channel: Channel) -> Vec<TimeTag> {
        let mut v: Vec<TimeTag> = times.iter().map(|&t| tag(t, channel)).collect();
        crate::events::sort_tags(&mut v);
        v
    }

    fn brute_force(signal: &[TimeTag], idler: &[TimeTag], bw: f64, range: f64) -> Histogram {
        let mut h = Histogram::new(bw, range).unwrap();
        for s in signal {
            for i in idler {
                if let Some(b) = h.bin_of(s.time_ps - i.time_ps) {
                    h.counts[b] += 1;
                }
            }
        }
        h.n_signal = signal.len() as u64;
        h.n_idler = idler.len() as u64;
        h
    }

    #[test]
    fn single_tag_lands_in_zero_bin() {
        let s = stream(&[5000.0], Channel::Signal);
        let i = stream(&[5000.0], Channel::Idler);
        let h = cross_correlate(&s, &i, 100.0, 10_000.0).unwrap();
        assert_eq!(h.total(), 1);
        assert_eq!(h.counts[h.n_bins() / 2], 1);
        assert_eq!(h.bin_of(0.0), Some(h.n_bins() / 2));
    }

    #[test]
    fn offset_streams_land_in_offset_bin() {
        let times: Vec<f64> = (0..100).map(|i| i as f64 * 1e5 + 37.0).collect();
        let s = stream(
            &times.iter().map(|t| t + 3000.0).collect::<Vec<_>>(),
            Channel::Signal,
        );
        let i = stream(&times, Channel::Idler);
        let h = cross_correlate(&s, &i, 100.0, 10_000.0).unwrap();
        assert_eq!(h.total(), 100);
        assert_eq!(h.counts[h.bin_of(3000.0).unwrap()], 100);
    }

    #[test]
    fn rejects_unsorted_and_bad_binning() {
        let s = vec![tag(2.0, Channel::Signal), tag(1.0, Channel::Signal)];
        assert_eq!(
            cross_correlate(&s, &[], 100.0, 1000.0),
            Err(Error::UnsortedStream("signal"))
        );
        assert!(cross_correlate(&[], &[], 300.0, 1000.0).is_err());
    }

    #[test]
    fn car_of_flat_histogram_is_one() {
        let mut h = Histogram::new(100.0, 10_000.0).unwrap();
        h.counts.iter_mut().for_each(|c| *c = 7);
        let c = car(&h, 2000.0).unwrap();
        assert_eq!(c.ratio, 1.0);
        assert!(car(&h, 20_000.0).is_err());
        assert!(car(&h, 50.0).is_err());
    }

    #[test]
    fn car_of_constructed_peak() {
        // 20-bin window: 26 counts per bin in the peak, 0.5 per bin elsewhere
        let mut h = Histogram::new(100.0, 10_000.0).unwrap();
        for (b, c) in h.counts.iter_mut().enumerate() {
            *c = if (90..110).contains(&b) {
                26
            } else if b % 2 == 0 {
                1
            } else {
                0
            };
        }
        let c = car_at(&h, 2000.0, 0.0).unwrap();
        assert_eq!(c.peak_counts, 520);
        assert_eq!(c.mean_accidentals, 10.0);
        assert_eq!(c.ratio, 52.0);
        assert_eq!(car(&h, 2000.0).unwrap().ratio, 52.0);
        assert_eq!(c.peak_center_ps, 0.0);
    }

    #[test]
    fn car_without_background_is_infinite() {
        let mut h = Histogram::new(100.0, 10_000.0).unwrap();
        h.counts[100] = 40;
        let c = car(&h, 2000.0).unwrap();
        assert!(c.is_infinite());
        assert_eq!(c.peak_counts, 40);
    }

    #[test]
    fn gate_compensation() {
        let mut h = Histogram::new(100.0, 10_000.0).unwrap();
        h.counts.iter_mut().for_each(|c| *c = 10);
        let always_on = Gate {
            period_ns: 100.0,
            width_ns: 100.0,
        };
        let out = compensate_gate(&h, &always_on).unwrap();
        assert!(out.values.iter().all(|&v| (v - 10.0).abs() < 1e-12));
        let wide = Gate {
            period_ns: 1e6,
            width_ns: 1e5,
        };
        let out = compensate_gate(&h, &wide).unwrap();
        assert!(out.values.iter().all(|&v| (v - 10.0).abs() < 1e-3));

        // acceptance 1 - |d|/W equals 0.5 at the bin centre d = W/2 = 4.95 ns
        let gate = Gate {
            period_ns: 100.0,
            width_ns: 9.9,
        };
        let mut h = Histogram::new(100.0, 10_000.0).unwrap();
        let b = h.bin_of(4950.0).unwrap();
        h.counts[b] = 8;
        assert!((gate_acceptance(&gate, h.bin_center(b)) - 0.5).abs() < 1e-12);
        let out = compensate_gate(&h, &gate).unwrap();
        assert!((out.values[b] - 16.0).abs() < 1e-9);
        assert!(!out.valid[0]);
        assert!(out.valid[h.n_bins() / 2]);
    }

    #[test]
    fn predicted_car_limits() {
        let ch = ChannelConfig {
            efficiency: 0.1,
            dark_rate_hz: 0.0,
            jitter_ps: 0.0,
            gate: None,
        };
        // no dark counts: CAR - 1 = f / (R W)
        let gamma = std::f64::consts::PI * 270e-6;
        let c = predicted_car(8e6, &ch, &ch, gamma, 2000.0);
        let f = 1.0 - (-gamma * 2000.0f64).exp();
        assert!(((c - 1.0) - f / (8e6 * 1e-12 * 2000.0)).abs() < 1e-9);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn sweep_equals_brute_force(
            s in proptest::collection::vec(0.0f64..200_000.0, 0..2000),
            i in proptest::collection::vec(0.0f64..200_000.0, 0..2000),
        ) {
            let s = stream(&s, Channel::Signal);
            let i = stream(&i, Channel::Idler);
            let fast = cross_correlate(&s, &i, 100.0, 5_000.0).unwrap();
            prop_assert_eq!(fast, brute_force(&s, &i, 100.0, 5_000.0));
        }

        #[test]
        fn window_count_equals_brute_force(
            s in proptest::collection::vec(0.0f64..50_000.0, 0..300),
            i in proptest::collection::vec(0.0f64..50_000.0, 0..300),
            lo in -3000.0f64..0.0, w in 1.0f64..3000.0,
        ) {
            let s = stream(&s, Channel::Signal);
            let i = stream(&i, Channel::Idler);
            let brute = s.iter().flat_map(|a| i.iter().map(move |b| a.time_ps - b.time_ps))
                .filter(|d| *d >= lo && *d < lo + w).count() as u64;
            prop_assert_eq!(count_in_window(&s, &i, lo, lo + w).unwrap(), brute);
        }

        #[test]
        fn partition_and_merge_is_invariant(
            s in proptest::collection::vec(0.0f64..100_000.0, 0..400),
            i in proptest::collection::vec(0.0f64..100_000.0, 0..400),
            cut in 0.0f64..100_000.0,
        ) {
            let s = stream(&s, Channel::Signal);
            let i = stream(&i, Channel::Idler);
            let whole = cross_correlate(&s, &i, 100.0, 5_000.0).unwrap();
            let (a, b): (Vec<TimeTag>, Vec<TimeTag>) = s.iter().partition(|t| t.time_ps < cut);
            let mut merged = cross_correlate(&b, &i, 100.0, 5_000.0).unwrap();
            merged.merge(&cross_correlate(&a, &i, 100.0, 5_000.0).unwrap()).unwrap();
            merged.n_signal = whole.n_signal;
            prop_assert_eq!(merged.counts, whole.counts);
        }

        #[test]
        fn swapping_streams_mirrors(
            s in proptest::collection::vec(0.0f64..100_000.0, 0..400),
            i in proptest::collection::vec(0.0f64..100_000.0, 0..400),
        ) {
            let s = stream(&s, Channel::Signal);
            let i = stream(&i, Channel::Idler);
            let fwd = cross_correlate(&s, &i, 100.0, 5_000.0).unwrap();
            let rev = cross_correlate(&i, &s, 100.0, 5_000.0).unwrap();
            prop_assert_eq!(rev, fwd.mirrored());
        }
    }
}
