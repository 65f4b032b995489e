//! Microring resonance comb: resonance positions, Lorentzian lineshape and
//! sideband power weights.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{invalid, Error, Result};
use crate::units::{wavelength_to_thz, THZ_PER_GHZ, THZ_PER_MHZ};

/// Largest allowed linewidth/FSR ratio; above it resonances start to overlap.
pub const MAX_LINEWIDTH_FSR_RATIO: f64 = 0.01;

/// How the sideband pair powers |α_k|² fall off away from the pump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case", deny_unknown_fields)]
pub enum WeightModel {
    /// User supplied powers, one per sideband, normalized on use.
    Explicit {
        values: Vec<f64>,
    },
    /// `w_k ∝ 1 / (1 + (k/scale)^4)`.
    LorentzianRolloff {
        scale: f64,
    },
    Flat,
}

fn default_min_sideband() -> i32 {
    2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RingParams {
    pub pump_wavelength_nm: f64,
    pub fsr_ghz: f64,
    /// Full width at half maximum of one resonance.
    pub linewidth_fwhm_mhz: f64,
    pub n_sidebands: usize,
    /// Lowest usable sideband index. Lower ones are removed with the pump.
    #[serde(default = "default_min_sideband")]
    pub min_sideband: i32,
    pub weights: WeightModel,
}

impl RingParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.pump_wavelength_nm > 0.0) {
            return Err(invalid("pump_wavelength_nm", "must be positive"));
        }
        if !(self.fsr_ghz > 0.0) {
            return Err(invalid("fsr_ghz", "must be positive"));
        }
        if !(self.linewidth_fwhm_mhz > 0.0) {
            return Err(invalid("linewidth_fwhm_mhz", "must be positive"));
        }
        let ratio = self.linewidth_thz() / self.fsr_thz();
        if ratio >= MAX_LINEWIDTH_FSR_RATIO {
            return Err(invalid(
                "linewidth_fwhm_mhz",
                format!(
                    "linewidth/FSR ratio {ratio:.3e} must stay below {MAX_LINEWIDTH_FSR_RATIO}"
                ),
            ));
        }
        if self.n_sidebands < 1 {
            return Err(invalid("n_sidebands", "at least one sideband is required"));
        }
        if self.min_sideband < 1 {
            return Err(invalid("min_sideband", "must be at least 1"));
        }
        match &self.weights {
            WeightModel::Explicit { values } => check_explicit(values, self.n_sidebands)?,
            WeightModel::LorentzianRolloff { scale } if !(*scale > 0.0) => {
                return Err(invalid("weights.scale", "roll-off scale must be positive"));
            }
            _ => {}
        }
        Ok(())
    }

    pub fn pump_thz(&self) -> f64 {
        wavelength_to_thz(self.pump_wavelength_nm)
    }

    pub fn fsr_thz(&self) -> f64 {
        self.fsr_ghz * THZ_PER_GHZ
    }

    pub fn linewidth_thz(&self) -> f64 {
        self.linewidth_fwhm_mhz * THZ_PER_MHZ
    }

    /// Angular half width Γ = π·FWHM, in rad/ps.
    pub fn gamma(&self) -> f64 {
        PI * self.linewidth_thz()
    }

    pub fn max_sideband(&self) -> i32 {
        self.min_sideband + self.n_sidebands as i32 - 1
    }

    pub fn sidebands(&self) -> std::ops::RangeInclusive<i32> {
        self.min_sideband..=self.max_sideband()
    }
}

fn check_explicit(values: &[f64], n: usize) -> Result<()> {
    if values.len() != n {
        return Err(invalid(
            "weights.values",
            format!("expected {n} entries, found {}", values.len()),
        ));
    }
    if let Some(v) = values.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
        return Err(invalid(
            "weights.values",
            format!("entry {v} is negative or not finite"),
        ));
    }
    if values.iter().sum::<f64>() <= 0.0 {
        return Err(invalid("weights.values", "all entries are zero"));
    }
    Ok(())
}

/// Normalized sideband pair powers `w_k = |α_k|²` for consecutive `k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SidebandWeights {
    first: i32,
    weights: Vec<f64>,
}

impl SidebandWeights {
    /// Builds normalized weights starting at sideband `first`.
    pub fn new(first: i32, raw: Vec<f64>) -> Result<Self> {
        if raw.is_empty() {
            return Err(invalid("weights", "empty weight list"));
        }
        check_explicit(&raw, raw.len())?;
        let total: f64 = raw.iter().sum();
        Ok(SidebandWeights {
            first,
            weights: raw.into_iter().map(|w| w / total).collect(),
        })
    }

    pub fn first(&self) -> i32 {
        self.first
    }

    pub fn last(&self) -> i32 {
        self.first + self.weights.len() as i32 - 1
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn contains(&self, k: i32) -> bool {
        (self.first..=self.last()).contains(&k)
    }

    /// Weight of sideband `k`, zero outside the populated range.
    pub fn get(&self, k: i32) -> f64 {
        if self.contains(k) {
            self.weights[(k - self.first) as usize]
        } else {
            0.0
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.weights
    }

    pub fn iter(&self) -> impl Iterator<Item = (i32, f64)> + '_ {
        self.weights
            .iter()
            .enumerate()
            .map(move |(i, &w)| (self.first + i as i32, w))
    }

    /// Effective number of modes `1/Σw²`.
    pub fn effective_modes(&self) -> f64 {
        1.0 / self.weights.iter().map(|w| w * w).sum::<f64>()
    }
}

/// Signal and idler resonance frequencies (THz) of sideband pair `k`.
///
/// Negative `k` swaps the roles of signal and idler. `k = 0` is the pump.
pub fn resonance_frequencies(params: &RingParams, k: i32) -> Result<(f64, f64)> {
    if k != 0 && k.abs() < params.min_sideband {
        return Err(Error::SidebandUnavailable {
            k,
            reason: format!(
                "sidebands below {} are removed by the pump rejection filter",
                params.min_sideband
            ),
        });
    }
    let pump = params.pump_thz();
    let offset = f64::from(k) * params.fsr_thz();
    Ok((pump + offset, pump - offset))
}

/// Complex Lorentzian field amplitude `Γ/(Γ + iΩ)` at a detuning given in THz.
pub fn lineshape(params: &RingParams, detuning_thz: f64) -> Complex64 {
    let gamma = params.gamma();
    let omega = 2.0 * PI * detuning_thz;
    Complex64::new(gamma, 0.0) / Complex64::new(gamma, omega)
}

pub fn sideband_weights(params: &RingParams) -> Result<SidebandWeights> {
    let raw = match &params.weights {
        WeightModel::Flat => vec![1.0; params.n_sidebands],
        WeightModel::Explicit { values } => {
            check_explicit(values, params.n_sidebands)?;
            values.clone()
        }
        WeightModel::LorentzianRolloff { scale } => {
            if !(*scale > 0.0) {
                return Err(invalid("weights.scale", "roll-off scale must be positive"));
            }
            params
                .sidebands()
                .map(|k| 1.0 / (1.0 + (f64::from(k) / scale).powi(4)))
                .collect()
        }
    };
    SidebandWeights::new(params.min_sideband, raw)
}

/// Pulse-shaper equalization: sidebands in `subset` are attenuated to the
/// subset minimum, everything else is blocked, and the result renormalized.
pub fn equalize_weights(weights: &SidebandWeights, subset: &[i32]) -> Result<SidebandWeights> {
    if subset.is_empty() {
        return Err(invalid("subset", "cannot equalize an empty subset"));
    }
    if let Some(&k) = subset.iter().find(|&&k| !weights.contains(k)) {
        return Err(Error::SidebandUnavailable {
            k,
            reason: "not among the populated sidebands".into(),
        });
    }
    let floor = subset
        .iter()
        .map(|&k| weights.get(k))
        .fold(f64::INFINITY, f64::min);
    if floor <= 0.0 {
        return Err(Error::Degenerate(
            "a sideband in the subset carries no power".into(),
        ));
    }
    let raw = (weights.first()..=weights.last())
        .map(|k| if subset.contains(&k) { floor } else { 0.0 })
        .collect();
    SidebandWeights::new(weights.first(), raw)
}

/// Roll-off scale for which the normalized weights have `1/Σw² = target`.
pub fn rolloff_scale_for_effective_modes(params: &RingParams, target: f64) -> Result<f64> {
    let n = params.n_sidebands as f64;
    if !(target > 1.0 && target < n) {
        return Err(invalid(
            "target",
            format!("effective mode count must lie in (1, {n})"),
        ));
    }
    let modes = |scale: f64| -> Result<f64> {
        let p = RingParams {
            weights: WeightModel::LorentzianRolloff { scale },
            ..params.clone()
        };
        Ok(sideband_weights(&p)?.effective_modes())
    };
    let (mut lo, mut hi) = (1e-3_f64.ln(), 1e4_f64.ln());
    if modes(lo.exp())? > target || modes(hi.exp())? < target {
        return Err(Error::Degenerate(format!(
            "roll-off family cannot reach {target} effective modes"
        )));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if modes(mid.exp())? < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok((0.5 * (lo + hi)).exp())
}
