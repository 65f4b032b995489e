//! Monte Carlo photon-pair emission and single-photon detection.
//!
//! The run is cut into fixed blocks of [`BLOCK_PS`]; every block draws from its
//! own RNG stream derived from `(seed, block index)`, so results do not depend
//! on how many threads process the blocks.

use rand::Rng;
use rand_distr::{Distribution, Exp, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{invalid, Result};
use crate::rng::{derive_seed, stream, LABEL_DARK, LABEL_DETECT, LABEL_PAIRS, LABEL_THIN};
use crate::state::BiphotonState;
use crate::units::{PS_PER_NS, PS_PER_S};

/// Length of one independent generation block (1 ms).
pub const BLOCK_PS: f64 = 1e9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceConfig {
    /// Aggregate pair emission rate over all sidebands, pairs/s.
    pub pair_rate_hz: f64,
    pub duration_s: f64,
    pub seed: u64,
}

impl SourceConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.pair_rate_hz > 0.0 && self.pair_rate_hz.is_finite()) {
            return Err(invalid("pair_rate_hz", "must be positive"));
        }
        if !(self.duration_s > 0.0 && self.duration_s.is_finite()) {
            return Err(invalid("duration_s", "must be positive"));
        }
        Ok(())
    }

    pub fn duration_ps(&self) -> f64 {
        self.duration_s * PS_PER_S
    }
}

/// Periodic detection gate: the detector is live while `t mod period < width`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Gate {
    pub period_ns: f64,
    pub width_ns: f64,
}

impl Gate {
    pub fn validate(&self) -> Result<()> {
        if !(self.period_ns > 0.0) {
            return Err(invalid("gate.period_ns", "must be positive"));
        }
        if !(self.width_ns > 0.0 && self.width_ns <= self.period_ns) {
            return Err(invalid(
                "gate.width_ns",
                "must be positive and at most the period",
            ));
        }
        Ok(())
    }

    pub fn period_ps(&self) -> f64 {
        self.period_ns * PS_PER_NS
    }

    pub fn width_ps(&self) -> f64 {
        self.width_ns * PS_PER_NS
    }

    pub fn is_open(&self, time_ps: f64) -> bool {
        time_ps.rem_euclid(self.period_ps()) < self.width_ps()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelConfig {
    pub efficiency: f64,
    pub dark_rate_hz: f64,
    /// Gaussian timing jitter, RMS.
    pub jitter_ps: f64,
    #[serde(default)]
    pub gate: Option<Gate>,
}

impl ChannelConfig {
    pub fn ideal() -> Self {
        ChannelConfig {
            efficiency: 1.0,
            dark_rate_hz: 0.0,
            jitter_ps: 0.0,
            gate: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.efficiency) {
            return Err(invalid("efficiency", "must lie in [0, 1]"));
        }
        if !(self.dark_rate_hz >= 0.0 && self.dark_rate_hz.is_finite()) {
            return Err(invalid("dark_rate_hz", "must be non-negative"));
        }
        if !(self.jitter_ps >= 0.0 && self.jitter_ps.is_finite()) {
            return Err(invalid("jitter_ps", "must be non-negative"));
        }
        if let Some(g) = &self.gate {
            g.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Channel {
    Signal,
    Idler,
}

impl Channel {
    fn label(self) -> u64 {
        match self {
            Channel::Signal => 1,
            Channel::Idler => 2,
        }
    }

    /// Sign of the photon's frequency offset from the pump.
    pub fn sign(self) -> f64 {
        match self {
            Channel::Signal => 1.0,
            Channel::Idler => -1.0,
        }
    }
}

/// Ground truth attached to a detection, for diagnostics and filtering.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Truth {
    /// Photon from pair `id` in sideband pair `k`; `detuning_thz` is the
    /// signal-side offset from the resonance centre (the idler carries minus it).
    Pair {
        id: u64,
        k: i32,
        detuning_thz: f64,
    },
    Dark,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeTag {
    pub time_ps: f64,
    pub channel: Channel,
    pub truth: Truth,
}

impl TimeTag {
    pub fn pair_id(&self) -> Option<u64> {
        match self.truth {
            Truth::Pair { id, .. } => Some(id),
            Truth::Dark => None,
        }
    }

    pub fn sideband(&self) -> Option<i32> {
        match self.truth {
            Truth::Pair { k, .. } => Some(k),
            Truth::Dark => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairEvent {
    pub id: u64,
    pub emission_ps: f64,
    pub k: i32,
    pub detuning_thz: f64,
    /// Signal arrival minus idler arrival.
    pub tau_rel_ps: f64,
}

/// Pairs emitted over one run, sorted by emission time.
#[derive(Debug, Clone, PartialEq)]
pub struct PairBatch {
    pub pairs: Vec<PairEvent>,
    pub duration_ps: f64,
}

impl PairBatch {
    fn n_blocks(&self) -> usize {
        n_blocks(self.duration_ps)
    }

    /// Keeps only pairs whose sideband satisfies `keep`; used for pulse-shaper filtering.
    pub fn filter_sidebands(&self, keep: impl Fn(i32) -> bool) -> PairBatch {
        PairBatch {
            pairs: self.pairs.iter().filter(|p| keep(p.k)).copied().collect(),
            duration_ps: self.duration_ps,
        }
    }

    fn block_slice(&self, b: usize) -> &[PairEvent] {
        let lo = b as f64 * BLOCK_PS;
        let hi = lo + BLOCK_PS;
        let start = self.pairs.partition_point(|p| p.emission_ps < lo);
        let end = self.pairs.partition_point(|p| p.emission_ps < hi);
        &self.pairs[start..end]
    }
}

fn n_blocks(duration_ps: f64) -> usize {
    (duration_ps / BLOCK_PS).ceil().max(1.0) as usize
}

fn block_bounds(b: usize, duration_ps: f64) -> (f64, f64) {
    let lo = b as f64 * BLOCK_PS;
    (lo, (lo + BLOCK_PS).min(duration_ps))
}

/// Samples a Poisson process of the given rate (per ps) on `[lo, hi)`.
fn poisson_times<R: Rng>(rng: &mut R, rate_per_ps: f64, lo: f64, hi: f64) -> Vec<f64> {
    let mut out = Vec::new();
    if rate_per_ps <= 0.0 {
        return out;
    }
    let gaps = Exp::new(rate_per_ps).expect("positive rate");
    let mut t = lo;
    loop {
        t += gaps.sample(rng);
        if t >= hi {
            return out;
        }
        out.push(t);
    }
}

/// Emits photon pairs: Poisson emission times, sideband drawn from the
/// weights, Lorentzian detuning and two-sided exponential relative delay.
///
/// Detunings are truncated at half an FSR so a photon never leaves its resonance.
pub fn generate_pairs(state: &BiphotonState, src: &SourceConfig) -> Result<PairBatch> {
    src.validate()?;
    let duration = src.duration_ps();
    let rate = src.pair_rate_hz / PS_PER_S;
    let cumulative: Vec<(i32, f64)> = state
        .weights
        .iter()
        .scan(0.0, |acc, (k, w)| {
            *acc += w;
            Some((k, *acc))
        })
        .collect();
    let last_k = state.weights.last();
    let half_width = state.params.linewidth_thz() / 2.0;
    let cutoff = state.params.fsr_thz() / 2.0;
    let u_span = (cutoff / half_width).atan() / PI;
    let delay = Exp::new(2.0 * state.gamma()).expect("positive linewidth");

    let blocks: Vec<Vec<PairEvent>> = (0..n_blocks(duration))
        .into_par_iter()
        .map(|b| {
            let mut rng = stream(src.seed, &[LABEL_PAIRS, b as u64]);
            let (lo, hi) = block_bounds(b, duration);
            let times = poisson_times(&mut rng, rate, lo, hi);
            times
                .into_iter()
                .map(|t| {
                    let u: f64 = rng.random();
                    let k = cumulative
                        .iter()
                        .find(|(_, c)| u < *c)
                        .map_or(last_k, |(k, _)| *k);
                    let v: f64 = rng.random_range(-u_span..u_span);
                    let detuning_thz = half_width * (PI * v).tan();
                    let magnitude = delay.sample(&mut rng);
                    let tau_rel_ps = if rng.random::<bool>() {
                        magnitude
                    } else {
                        -magnitude
                    };
                    PairEvent {
                        id: 0,
                        emission_ps: t,
                        k,
                        detuning_thz,
                        tau_rel_ps,
                    }
                })
                .collect()
        })
        .collect();

    let mut pairs: Vec<PairEvent> = blocks.into_iter().flatten().collect();
    for (i, p) in pairs.iter_mut().enumerate() {
        p.id = i as u64;
    }
    Ok(PairBatch {
        pairs,
        duration_ps: duration,
    })
}

/// Detects one photon of every pair on channel `which`: loss, timing jitter,
/// dark counts and optional gating. Output is sorted by time and clipped to
/// the run window.
pub fn detect(
    batch: &PairBatch,
    which: Channel,
    cfg: &ChannelConfig,
    seed: u64,
) -> Result<Vec<TimeTag>> {
    cfg.validate()?;
    let duration = batch.duration_ps;
    let jitter =
        (cfg.jitter_ps > 0.0).then(|| Normal::new(0.0, cfg.jitter_ps).expect("valid sigma"));
    let dark_rate = cfg.dark_rate_hz / PS_PER_S;
    let sign = which.sign();

    let blocks: Vec<Vec<TimeTag>> = (0..batch.n_blocks())
        .into_par_iter()
        .map(|b| {
            let mut rng = stream(seed, &[LABEL_DETECT, which.label(), b as u64]);
            let mut tags = Vec::new();
            for p in batch.block_slice(b) {
                if cfg.efficiency < 1.0 && rng.random::<f64>() >= cfg.efficiency {
                    continue;
                }
                let mut t = p.emission_ps + sign * p.tau_rel_ps / 2.0;
                if let Some(j) = &jitter {
                    t += j.sample(&mut rng);
                }
                tags.push(TimeTag {
                    time_ps: t,
                    channel: which,
                    truth: Truth::Pair {
                        id: p.id,
                        k: p.k,
                        detuning_thz: p.detuning_thz,
                    },
                });
            }
            let mut dark_rng = stream(seed, &[LABEL_DARK, which.label(), b as u64]);
            let (lo, hi) = block_bounds(b, duration);
            tags.extend(
                poisson_times(&mut dark_rng, dark_rate, lo, hi)
                    .into_iter()
                    .map(|t| TimeTag {
                        time_ps: t,
                        channel: which,
                        truth: Truth::Dark,
                    }),
            );
            tags
        })
        .collect();

    let mut tags: Vec<TimeTag> = blocks
        .into_iter()
        .flatten()
        .filter(|t| (0.0..=duration).contains(&t.time_ps))
        .filter(|t| cfg.gate.is_none_or(|g| g.is_open(t.time_ps)))
        .collect();
    sort_tags(&mut tags);
    Ok(tags)
}

pub fn sort_tags(tags: &mut [TimeTag]) {
    tags.sort_by(|a, b| a.time_ps.total_cmp(&b.time_ps));
}

/// Drops tags that arrive while the gate is closed.
pub fn apply_gate(tags: &[TimeTag], gate: &Gate) -> Vec<TimeTag> {
    tags.iter()
        .filter(|t| gate.is_open(t.time_ps))
        .copied()
        .collect()
}

/// Uniform draw in [0, 1) fixed by `(seed, tag identity)`, independent of stream order.
pub(crate) fn tag_uniform(seed: u64, label: u64, tag: &TimeTag) -> f64 {
    let identity = match tag.truth {
        Truth::Pair { id, .. } => id,
        Truth::Dark => tag.time_ps.to_bits() ^ 0xD00D_0000_0000_0000,
    };
    let h = derive_seed(seed, &[label, tag.channel.label(), identity]);
    (h >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Bernoulli thinning: each tag survives with probability `keep`.
pub fn thin(tags: &[TimeTag], keep: f64, seed: u64) -> Result<Vec<TimeTag>> {
    if !(0.0..=1.0).contains(&keep) {
        return Err(invalid("keep", "survival probability must lie in [0, 1]"));
    }
    Ok(tags
        .iter()
        .filter(|t| tag_uniform(seed, LABEL_THIN, t) < keep)
        .copied()
        .collect())
}

/// Number of pairs with a tag in both streams.
pub fn count_true_coincidences(signal: &[TimeTag], idler: &[TimeTag]) -> usize {
    let mut ids: Vec<u64> = signal.iter().filter_map(TimeTag::pair_id).collect();
    ids.sort_unstable();
    idler
        .iter()
        .filter_map(TimeTag::pair_id)
        .filter(|id| ids.binary_search(id).is_ok())
        .count()
}
