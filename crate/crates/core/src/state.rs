//! The comb state as a computable object: per-sideband weights plus the
//! Lorentzian lineshape shared by every resonance.

use std::fmt::Write as _;

use crate::error::{invalid, Error, Result};
use crate::jsi::{JsiMatrix, JsiNormalization};
use crate::spectral::{sideband_weights, RingParams, SidebandWeights};

#[derive(Debug, Clone, PartialEq)]
pub struct BiphotonState {
    pub params: RingParams,
    pub weights: SidebandWeights,
}

impl BiphotonState {
    /// State with weights taken from the ring's weight model.
    pub fn new(params: RingParams) -> Result<Self> {
        params.validate()?;
        let weights = sideband_weights(&params)?;
        Ok(BiphotonState { params, weights })
    }

    /// State with externally prepared weights, e.g. after pulse-shaper equalization.
    pub fn with_weights(params: RingParams, weights: SidebandWeights) -> Result<Self> {
        params.validate()?;
        if weights.len() != params.n_sidebands || weights.first() != params.min_sideband {
            return Err(Error::LengthMismatch {
                expected: params.n_sidebands,
                found: weights.len(),
            });
        }
        Ok(BiphotonState { params, weights })
    }

    /// Angular half width Γ of each resonance, rad/ps.
    pub fn gamma(&self) -> f64 {
        self.params.gamma()
    }

    /// FWHM of the two-photon coincidence profile, `ln2/Γ` in ps.
    pub fn correlation_fwhm_ps(&self) -> f64 {
        std::f64::consts::LN_2 / self.gamma()
    }
}

/// A sampled non-negative curve over delay (ps).
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationCurve {
    pub delays_ps: Vec<f64>,
    pub values: Vec<f64>,
    pub label: String,
}

impl CorrelationCurve {
    pub fn new(delays_ps: Vec<f64>, values: Vec<f64>, label: impl Into<String>) -> Result<Self> {
        if delays_ps.len() != values.len() {
            return Err(Error::LengthMismatch {
                expected: delays_ps.len(),
                found: values.len(),
            });
        }
        check_grid(&delays_ps)?;
        if values.iter().any(|v| !(*v >= 0.0)) {
            return Err(invalid("values", "curve values must be non-negative"));
        }
        Ok(CorrelationCurve {
            delays_ps,
            values,
            label: label.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("delay_ps,value\n");
        for (d, v) in self.delays_ps.iter().zip(&self.values) {
            let _ = writeln!(out, "{d},{v}");
        }
        out
    }
}

pub(crate) fn check_grid(delays: &[f64]) -> Result<()> {
    if delays.is_empty() {
        return Err(invalid("delays", "grid is empty"));
    }
    if delays.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(invalid("delays", "grid must be strictly increasing"));
    }
    Ok(())
}

/// Accidental-free JSI: diagonal with entries `w_k`, unit trace.
pub fn predicted_jsi(state: &BiphotonState) -> JsiMatrix {
    let w = &state.weights;
    let mut jsi = JsiMatrix::zeros(w.first(), w.len(), JsiNormalization::UnitTrace);
    for (k, wk) in w.iter() {
        jsi.set(k, k, wk);
    }
    jsi
}

/// Coincidence profile of sideband pair `k`: `exp(-2Γ|τ|)`, unit peak.
///
/// This is the squared modulus of the Fourier transform of the joint spectral
/// amplitude `Φ(Ω)Φ*(Ω) = |Φ(Ω)|²` for a Lorentzian resonance.
pub fn temporal_correlation(
    state: &BiphotonState,
    k: i32,
    delays_ps: &[f64],
) -> Result<CorrelationCurve> {
    if !state.weights.contains(k) || state.weights.get(k) <= 0.0 {
        return Err(Error::SidebandUnavailable {
            k,
            reason: "sideband is not populated".into(),
        });
    }
    check_grid(delays_ps)?;
    let g2 = 2.0 * state.gamma();
    let values = delays_ps.iter().map(|t| (-g2 * t.abs()).exp()).collect();
    CorrelationCurve::new(delays_ps.to_vec(), values, format!("S{k}I{k}"))
}

/// Full width at half maximum of the highest peak, by linear interpolation
/// between the grid points that bracket the half level.
pub fn correlation_fwhm(curve: &CorrelationCurve) -> Result<f64> {
    let v = &curve.values;
    let t = &curve.delays_ps;
    if v.is_empty() {
        return Err(Error::Degenerate("empty curve".into()));
    }
    let (imax, &peak) =
        v.iter().enumerate().fold(
            (0, &v[0]),
            |best, (i, x)| if *x > *best.1 { (i, x) } else { best },
        );
    let half = peak / 2.0;
    let cross = |i: usize, j: usize| t[i] + (half - v[i]) * (t[j] - t[i]) / (v[j] - v[i]);
    let left = (1..=imax)
        .rev()
        .find(|&i| v[i - 1] < half)
        .map(|i| cross(i - 1, i))
        .ok_or(Error::NoHalfMaximumCrossing("left"))?;
    let right = (imax..v.len() - 1)
        .find(|&i| v[i + 1] < half)
        .map(|i| cross(i, i + 1))
        .ok_or(Error::NoHalfMaximumCrossing("right"))?;
    Ok(right - left)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::WeightModel;
    use std::f64::consts::PI;

    fn state(linewidth: f64, weights: WeightModel, n: usize) -> BiphotonState {
        BiphotonState::new(RingParams {
            pump_wavelength_nm: 1550.9,
            fsr_ghz: 384.6,
            linewidth_fwhm_mhz: linewidth,
            n_sidebands: n,
            min_sideband: 2,
            weights,
        })
        .unwrap()
    }

    fn grid(half_span: f64, step: f64) -> Vec<f64> {
        let n = (half_span / step).round() as i64;
        (-n..=n).map(|i| i as f64 * step).collect()
    }

    #[test]
    fn predicted_jsi_is_diagonal() {
        let s = state(270.0, WeightModel::Flat, 3);
        let j = predicted_jsi(&s);
        for r in 0..3 {
            for c in 0..3 {
                let expect = if r == c { 1.0 / 3.0 } else { 0.0 };
                assert!((j.at(r, c) - expect).abs() < 1e-15);
            }
        }
        let s = state(
            270.0,
            WeightModel::Explicit {
                values: vec![0.4, 0.6],
            },
            2,
        );
        assert_eq!(predicted_jsi(&s).diagonal(), vec![0.4, 0.6]);
        assert!((predicted_jsi(&s).trace() - 1.0).abs() < 1e-15);
    }

    /// Squared modulus of the numerically integrated Fourier transform of
    /// |Φ(Ω)|², using Ω = Γ tan θ to map the infinite axis onto (-π/2, π/2).
    fn numeric_profile(gamma: f64, tau: f64) -> f64 {
        let n = 400_000;
        let h = PI / n as f64;
        let ft: f64 = (0..n)
            .map(|i| {
                let theta = -PI / 2.0 + (i as f64 + 0.5) * h;
                (gamma * tau * theta.tan()).cos()
            })
            .sum::<f64>()
            * h
            / PI;
        ft * ft
    }

    #[test]
    fn analytic_profile_matches_numeric_transform() {
        let s = state(270.0, WeightModel::Flat, 3);
        let taus = [0.0, 150.0, 409.0, 800.0, 1500.0];
        let curve = temporal_correlation(&s, 2, &taus).unwrap();
        for (tau, v) in taus.iter().zip(&curve.values) {
            let oracle = numeric_profile(s.gamma(), *tau);
            assert!(
                (v - oracle).abs() < 2e-3,
                "tau={tau} analytic={v} numeric={oracle}"
            );
        }
    }

    #[test]
    fn temporal_correlation_shape() {
        let s = state(270.0, WeightModel::Flat, 6);
        let g = grid(3000.0, 1.0);
        let c = temporal_correlation(&s, 2, &g).unwrap();
        let mid = g.len() / 2;
        assert_eq!(c.values[mid], 1.0);
        for i in 0..g.len() {
            assert_eq!(c.values[i], c.values[g.len() - 1 - i]);
        }
        let fwhm = correlation_fwhm(&c).unwrap();
        // ln2 / (π · 270 MHz) = 817.2 ps
        assert!((fwhm - 817.2).abs() < 1.0, "{fwhm}");
        assert!((fwhm - s.correlation_fwhm_ps()).abs() < 1.0);
        let c5 = temporal_correlation(&s, 5, &g).unwrap();
        assert_eq!(c.values, c5.values);
        assert!(temporal_correlation(&s, 8, &g).is_err());
        assert!(temporal_correlation(&s, 1, &g).is_err());
    }

    #[test]
    fn fwhm_scales_inversely_with_linewidth() {
        let g = grid(3000.0, 0.5);
        let narrow = correlation_fwhm(
            &temporal_correlation(&state(270.0, WeightModel::Flat, 2), 2, &g).unwrap(),
        )
        .unwrap();
        let broad = correlation_fwhm(
            &temporal_correlation(&state(540.0, WeightModel::Flat, 2), 2, &g).unwrap(),
        )
        .unwrap();
        assert!((narrow / broad - 2.0).abs() < 0.02);
    }

    #[test]
    fn fwhm_of_triangle_and_flat() {
        let tri = CorrelationCurve::new(vec![-1.0, 0.0, 1.0], vec![0.0, 1.0, 0.0], "tri").unwrap();
        assert!((correlation_fwhm(&tri).unwrap() - 1.0).abs() < 1e-15);
        let flat = CorrelationCurve::new(vec![0.0, 1.0, 2.0], vec![1.0; 3], "flat").unwrap();
        assert!(matches!(
            correlation_fwhm(&flat),
            Err(Error::NoHalfMaximumCrossing(_))
        ));
    }

    #[test]
    fn curve_validation_and_csv() {
        assert!(CorrelationCurve::new(vec![0.0, 0.0], vec![1.0, 1.0], "x").is_err());
        assert!(CorrelationCurve::new(vec![0.0, 1.0], vec![1.0, -1.0], "x").is_err());
        let c = CorrelationCurve::new(vec![-1.0, 1.5], vec![0.5, 1.0], "x").unwrap();
        assert_eq!(c.to_csv(), "delay_ps,value\n-1,0.5\n1.5,1\n");
    }
}
