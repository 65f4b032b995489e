//! Chirped-grating dispersion on the arrival times of comb photons.
//!
//! The group delay is taken linear in optical frequency about the reference,
//! `τ(ν) = -D·(λ_ref²/c)·(ν - ν_ref)`, which is the first-order expansion of
//! `D·(λ - λ_ref)`. Positive `D` delays longer wavelengths. Keeping the delay
//! linear in frequency makes opposite gratings on energy-anticorrelated photons
//! cancel exactly for every sideband.

use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::events::{sort_tags, tag_uniform, TimeTag, Truth};
use crate::jsi::JsiMatrix;
use crate::spectral::RingParams;
use crate::state::{check_grid, BiphotonState, CorrelationCurve};
use crate::units::{wavelength_to_thz, PS_PER_NS, SPEED_OF_LIGHT_NM_THZ};

const LABEL_LOSS: u64 = 0x4C4F_5353;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DispersionElement {
    pub d_ns_per_nm: f64,
    pub ref_wavelength_nm: f64,
    /// Probability that a photon passes the element (3 dB → 0.5).
    #[serde(default = "one")]
    pub transmission: f64,
}

fn one() -> f64 {
    1.0
}

impl DispersionElement {
    pub fn new(d_ns_per_nm: f64, ref_wavelength_nm: f64) -> Self {
        DispersionElement {
            d_ns_per_nm,
            ref_wavelength_nm,
            transmission: 1.0,
        }
    }

    /// Lossless element with no dispersion.
    pub fn none(ref_wavelength_nm: f64) -> Self {
        Self::new(0.0, ref_wavelength_nm)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.ref_wavelength_nm > 0.0) {
            return Err(invalid("ref_wavelength_nm", "must be positive"));
        }
        if !self.d_ns_per_nm.is_finite() {
            return Err(invalid("d_ns_per_nm", "must be finite"));
        }
        if !(0.0..=1.0).contains(&self.transmission) {
            return Err(invalid("transmission", "must lie in [0, 1]"));
        }
        Ok(())
    }

    /// Group-delay slope dτ/dν in ps/THz.
    pub fn slope_ps_per_thz(&self) -> f64 {
        let lambda = self.ref_wavelength_nm;
        -self.d_ns_per_nm * PS_PER_NS * lambda * lambda / SPEED_OF_LIGHT_NM_THZ
    }

    /// Element whose delay is the sum of both at every frequency.
    pub fn then(&self, other: &DispersionElement) -> Result<DispersionElement> {
        if self.ref_wavelength_nm != other.ref_wavelength_nm {
            return Err(invalid(
                "ref_wavelength_nm",
                "cascaded elements must share a reference",
            ));
        }
        Ok(DispersionElement {
            d_ns_per_nm: self.d_ns_per_nm + other.d_ns_per_nm,
            ref_wavelength_nm: self.ref_wavelength_nm,
            transmission: self.transmission * other.transmission,
        })
    }
}

/// Group delay in ps at optical frequency `freq_thz`.
pub fn group_delay(elem: &DispersionElement, freq_thz: f64) -> f64 {
    elem.slope_ps_per_thz() * (freq_thz - wavelength_to_thz(elem.ref_wavelength_nm))
}

/// Optical frequency of a detected photon from its ground truth; `None` for darks.
pub fn photon_frequency(params: &RingParams, tag: &TimeTag) -> Option<f64> {
    match tag.truth {
        Truth::Pair {
            k, detuning_thz, ..
        } => {
            let offset = f64::from(k) * params.fsr_thz() + detuning_thz;
            Some(params.pump_thz() + tag.channel.sign() * offset)
        }
        Truth::Dark => None,
    }
}

/// Sends detected tags through the element: each photon survives with the
/// element's transmission and is delayed by the group delay at its exact
/// frequency. Dark counts originate at the detector and pass unchanged.
pub fn apply_dispersion(
    tags: &[TimeTag],
    params: &RingParams,
    elem: &DispersionElement,
    seed: u64,
) -> Result<Vec<TimeTag>> {
    elem.validate()?;
    let mut out: Vec<TimeTag> = tags
        .iter()
        .filter_map(|tag| {
            let Some(freq) = photon_frequency(params, tag) else {
                return Some(*tag);
            };
            if elem.transmission < 1.0 && tag_uniform(seed, LABEL_LOSS, tag) >= elem.transmission {
                return None;
            }
            Some(TimeTag {
                time_ps: tag.time_ps + group_delay(elem, freq),
                ..*tag
            })
        })
        .collect();
    sort_tags(&mut out);
    Ok(out)
}

/// Mean signal-minus-idler delay of sideband pair `k`, ps.
pub fn pair_delay_offset(
    params: &RingParams,
    d_s: &DispersionElement,
    d_i: &DispersionElement,
    k: i32,
) -> f64 {
    let offset = f64::from(k) * params.fsr_thz();
    group_delay(d_s, params.pump_thz() + offset) - group_delay(d_i, params.pump_thz() - offset)
}

/// Delay spread per unit detuning left after both gratings act on the
/// anticorrelated detunings, ps/THz.
fn residual_slope(d_s: &DispersionElement, d_i: &DispersionElement) -> f64 {
    d_s.slope_ps_per_thz() + d_i.slope_ps_per_thz()
}

/// `exp(-2Γ|τ|)` convolved with a Cauchy delay spread of half width `scale`,
/// normalized so the spread-free profile peaks at one.
fn spread_profile(two_gamma: f64, scale: f64, tau: f64) -> f64 {
    if scale == 0.0 {
        return (-two_gamma * tau.abs()).exp();
    }
    // u = scale·tanθ maps the Cauchy density onto uniform θ; split at the cusp
    let cusp = (tau / scale).atan();
    let f = |theta: f64| {
        let u = scale * theta.tan();
        (-two_gamma * (tau - u).abs()).exp()
    };
    (adaptive_simpson(&f, -FRAC_PI_2, cusp) + adaptive_simpson(&f, cusp, FRAC_PI_2)) / PI
}

fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    // the integrand vanishes at ±π/2; skip evaluating tan there
    let eval = |x: f64| if x.abs() >= FRAC_PI_2 { 0.0 } else { f(x) };
    #[allow(clippy::too_many_arguments)]
    fn step(
        eval: &dyn Fn(f64) -> f64,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (eval(lm), eval(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        step(eval, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
            + step(eval, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
    }
    let (fa, fb, fm) = (eval(a), eval(b), eval(0.5 * (a + b)));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    step(&eval, a, b, fa, fm, fb, whole, 1e-10, 48)
}

/// Analytic coincidence curve with a grating on each arm: the `w_k`-weighted
/// sum of per-pair profiles, each shifted to [`pair_delay_offset`] and spread
/// by the residual dispersion acting across the resonance linewidth.
pub fn dispersed_correlation(
    state: &BiphotonState,
    d_s: &DispersionElement,
    d_i: &DispersionElement,
    delays_ps: &[f64],
) -> Result<CorrelationCurve> {
    d_s.validate()?;
    d_i.validate()?;
    check_grid(delays_ps)?;
    let two_gamma = 2.0 * state.gamma();
    let scale = residual_slope(d_s, d_i).abs() * state.params.linewidth_thz() / 2.0;
    let centers: Vec<(f64, f64)> = state
        .weights
        .iter()
        .filter(|(_, w)| *w > 0.0)
        .map(|(k, w)| (pair_delay_offset(&state.params, d_s, d_i, k), w))
        .collect();
    let values = delays_ps
        .iter()
        .map(|&t| {
            centers
                .iter()
                .map(|&(c, w)| w * spread_profile(two_gamma, scale, t - c))
                .sum()
        })
        .collect();
    CorrelationCurve::new(delays_ps.to_vec(), values, "dispersed")
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Peak {
    pub delay_ps: f64,
    pub height: f64,
    pub prominence: f64,
}

/// Local maxima whose topographic prominence reaches `min_prominence`,
/// refined by a parabola through the three samples around each maximum
/// (plateaus use their midpoint), sorted by delay.
pub fn peak_positions(curve: &CorrelationCurve, min_prominence: f64) -> Result<Vec<Peak>> {
    if !(min_prominence > 0.0) {
        return Err(invalid("min_prominence", "must be positive"));
    }
    let v = &curve.values;
    let t = &curve.delays_ps;
    let n = v.len();
    let mut peaks = Vec::new();
    let mut i = 1;
    while i + 1 < n {
        if v[i] <= v[i - 1] {
            i += 1;
            continue;
        }
        let mut j = i;
        while j + 1 < n && v[j + 1] == v[i] {
            j += 1;
        }
        if j + 1 == n || v[j + 1] > v[i] {
            i = j + 1;
            continue;
        }
        let h = v[i];
        let left_base = v[..i]
            .iter()
            .rev()
            .take_while(|&&x| x <= h)
            .fold(h, |m, &x| m.min(x));
        let right_base = v[j + 1..]
            .iter()
            .take_while(|&&x| x <= h)
            .fold(h, |m, &x| m.min(x));
        let prominence = h - left_base.max(right_base);
        if prominence >= min_prominence {
            let mid = (i + j) / 2;
            peaks.push(refine(t, v, mid, i == j, prominence));
        }
        i = j + 1;
    }
    Ok(peaks)
}

fn refine(t: &[f64], v: &[f64], m: usize, strict: bool, prominence: f64) -> Peak {
    let (y0, y1, y2) = (v[m - 1], v[m], v[m + 1]);
    let denom = y0 - 2.0 * y1 + y2;
    let (x, h) = if strict && denom < 0.0 {
        let p = 0.5 * (y0 - y2) / denom;
        let step = 0.5 * (t[m + 1] - t[m - 1]);
        (t[m] + p * step, y1 - 0.25 * (y0 - y2) * p)
    } else {
        (t[m], y1)
    };
    Peak {
        delay_ps: x,
        height: h,
        prominence,
    }
}

/// Replaces each peak height by the curve summed over `|t - peak| <= half_width`.
/// Binned cusp-shaped peaks lose height depending on where the centre falls in
/// its bin; the windowed sum does not.
pub fn integrate_peaks(curve: &CorrelationCurve, peaks: &[Peak], half_width_ps: f64) -> Vec<Peak> {
    peaks
        .iter()
        .map(|p| Peak {
            height: curve
                .delays_ps
                .iter()
                .zip(&curve.values)
                .filter(|(t, _)| (*t - p.delay_ps).abs() <= half_width_ps)
                .map(|(_, v)| v)
                .sum(),
            ..*p
        })
        .collect()
}

pub fn peaks_to_csv(peaks: &[Peak]) -> String {
    use std::fmt::Write as _;
    let mut out = String::from("delay_ns,height\n");
    for p in peaks {
        let _ = writeln!(out, "{},{}", p.delay_ps / PS_PER_NS, p.height);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MapEntry {
    pub k: i32,
    /// JSI diagonal entry divided by the largest diagonal entry.
    pub jsi_diagonal: f64,
    /// Peak height divided by the largest peak height.
    pub peak_height: f64,
    pub ratio: f64,
    /// Poisson standard error of `ratio`, meaningful when both inputs are counts.
    pub stderr: f64,
}

impl MapEntry {
    pub fn consistent(&self, sigmas: f64) -> bool {
        (self.ratio - 1.0).abs() <= sigmas * self.stderr
    }
}

/// Compares the JSI diagonal with dispersed peak heights. `peaks[j]` must be
/// the peak of sideband pair `k_first + j`.
pub fn frequency_time_map_check(jsi: &JsiMatrix, peaks: &[Peak]) -> Result<Vec<MapEntry>> {
    let diag = jsi.diagonal();
    if diag.len() != peaks.len() {
        return Err(Error::LengthMismatch {
            expected: diag.len(),
            found: peaks.len(),
        });
    }
    let dmax = diag.iter().copied().fold(0.0, f64::max);
    let pmax = peaks.iter().map(|p| p.height).fold(0.0, f64::max);
    if !(dmax > 0.0 && pmax > 0.0) {
        return Err(Error::Degenerate("nothing to normalize against".into()));
    }
    let rel = |x: f64| if x > 0.0 { 1.0 / x } else { f64::INFINITY };
    Ok(jsi
        .ks()
        .zip(diag.iter().zip(peaks))
        .map(|(k, (&d, p))| {
            let (dn, pn) = (d / dmax, p.height / pmax);
            let ratio = dn / pn;
            let mut var = rel(d) + rel(p.height);
            if d != dmax {
                var += rel(dmax);
            }
            if p.height != pmax {
                var += rel(pmax);
            }
            MapEntry {
                k,
                jsi_diagonal: dn,
                peak_height: pn,
                ratio,
                stderr: ratio * var.sqrt(),
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::WeightModel;
    use crate::state::{correlation_fwhm, predicted_jsi};

    const LAMBDA: f64 = 1550.9;

    fn state(n: usize) -> BiphotonState {
        BiphotonState::new(RingParams {
            pump_wavelength_nm: LAMBDA,
            fsr_ghz: 384.6,
            linewidth_fwhm_mhz: 270.0,
            n_sidebands: n,
            min_sideband: 2,
            weights: WeightModel::Flat,
        })
        .unwrap()
    }

    fn grid(lo: f64, hi: f64, step: f64) -> Vec<f64> {
        let n = ((hi - lo) / step).round() as usize;
        (0..=n).map(|i| lo + i as f64 * step).collect()
    }

    #[test]
    fn delay_at_reference_and_one_fsr() {
        let e = DispersionElement::new(2.0, LAMBDA);
        let nu = wavelength_to_thz(LAMBDA);
        assert_eq!(group_delay(&e, nu), 0.0);
        // one FSR toward the red: Δλ = λ²Δν/c
        let d = group_delay(&e, nu - 0.3846);
        let dl = LAMBDA * LAMBDA * 0.3846 / SPEED_OF_LIGHT_NM_THZ;
        assert!((dl - 3.09).abs() < 0.01);
        assert!((d - 2000.0 * dl).abs() < 1e-9);
        assert!((d - 6170.0).abs() < 5.0, "{d}");
        let flipped = DispersionElement::new(-2.0, LAMBDA);
        assert_eq!(group_delay(&flipped, nu - 0.3846), -d);
    }

    #[test]
    fn wavelength_form_agrees_to_first_order() {
        let e = DispersionElement::new(2.0, LAMBDA);
        let nu0 = wavelength_to_thz(LAMBDA);
        let dnu = 1e-4;
        let lam = SPEED_OF_LIGHT_NM_THZ / (nu0 + dnu);
        let literal = 2000.0 * (lam - LAMBDA);
        assert!((group_delay(&e, nu0 + dnu) - literal).abs() < 1e-6 * literal.abs());
    }

    #[test]
    fn undispersed_matches_single_pair_profile() {
        let s = state(4);
        let none = DispersionElement::none(LAMBDA);
        let c = dispersed_correlation(&s, &none, &none, &grid(-3000.0, 3000.0, 1.0)).unwrap();
        assert!((correlation_fwhm(&c).unwrap() - s.correlation_fwhm_ps()).abs() < 1.0);
    }

    #[test]
    fn four_peaks_spaced_one_fsr_delay() {
        let s = state(4);
        let d = DispersionElement::new(2.0, LAMBDA);
        let none = DispersionElement::none(LAMBDA);
        let c = dispersed_correlation(&s, &d, &none, &grid(-40000.0, 10000.0, 20.0)).unwrap();
        let peaks = peak_positions(&c, 0.1).unwrap();
        assert_eq!(peaks.len(), 4);
        for w in peaks.windows(2) {
            assert!(((w[1].delay_ps - w[0].delay_ps) - 6170.0).abs() < 10.0);
        }
        let mirrored = dispersed_correlation(
            &s,
            &none,
            &DispersionElement::new(-2.0, LAMBDA),
            &grid(-10000.0, 40000.0, 20.0),
        )
        .unwrap();
        let mp = peak_positions(&mirrored, 0.1).unwrap();
        for (a, b) in peaks.iter().zip(mp.iter().rev()) {
            assert!((a.delay_ps + b.delay_ps).abs() < 1.0);
        }
    }

    #[test]
    fn opposite_gratings_cancel() {
        let s = state(4);
        let g = grid(-3000.0, 3000.0, 1.0);
        let none = DispersionElement::none(LAMBDA);
        let base = dispersed_correlation(&s, &none, &none, &g).unwrap();
        let canc = dispersed_correlation(
            &s,
            &DispersionElement::new(2.0, LAMBDA),
            &DispersionElement::new(-2.0, LAMBDA),
            &g,
        )
        .unwrap();
        for (a, b) in base.values.iter().zip(&canc.values) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn spread_profile_conserves_area() {
        let two_gamma = 2.0 * state(1).gamma();
        let area = |s: f64| {
            let h = 2.0;
            (-20000..=20000)
                .map(|i| spread_profile(two_gamma, s, i as f64 * h) * h)
                .sum::<f64>()
        };
        let a0 = area(0.0);
        assert!((area(50.0) / a0 - 1.0).abs() < 0.03);
        assert!(spread_profile(two_gamma, 50.0, 0.0) < 1.0);
        assert!((spread_profile(two_gamma, 1e-3, 100.0) - (-two_gamma * 100.0).exp()).abs() < 1e-5);
    }

    #[test]
    fn peak_finder_basics() {
        let g = grid(-100.0, 100.0, 1.0);
        let bump = |c: f64| {
            g.iter()
                .map(|t| (-(t - c).powi(2) / 50.0).exp())
                .collect::<Vec<_>>()
        };
        let c = CorrelationCurve::new(g.clone(), bump(3.3), "x").unwrap();
        let p = peak_positions(&c, 0.5).unwrap();
        assert_eq!(p.len(), 1);
        assert!((p[0].delay_ps - 3.3).abs() < 0.1);
        let flat = CorrelationCurve::new(g.clone(), vec![1.0; g.len()], "flat").unwrap();
        assert!(peak_positions(&flat, 0.1).unwrap().is_empty());
        assert!(peak_positions(&flat, 0.0).is_err());
        let mut plateau = vec![0.0; g.len()];
        plateau[50..53].fill(1.0);
        let c = CorrelationCurve::new(g.clone(), plateau, "p").unwrap();
        let p = peak_positions(&c, 0.5).unwrap();
        assert_eq!(p.len(), 1);
        assert_eq!(p[0].delay_ps, g[51]);
    }

    #[test]
    fn map_check_flat_and_mismatch() {
        let s = state(4);
        let jsi = predicted_jsi(&s);
        let peaks: Vec<Peak> = (0..4)
            .map(|i| Peak {
                delay_ps: i as f64,
                height: 1.0,
                prominence: 1.0,
            })
            .collect();
        let m = frequency_time_map_check(&jsi, &peaks).unwrap();
        assert!(m
            .iter()
            .all(|e| (e.ratio - 1.0).abs() < 1e-12 && e.jsi_diagonal == 1.0));
        assert!(frequency_time_map_check(&jsi, &peaks[..3]).is_err());

        let counts = JsiMatrix::from_rows(
            2,
            &[vec![10000.0, 0.0], vec![0.0, 10000.0]],
            crate::jsi::JsiNormalization::Counts,
        )
        .unwrap();
        let pk = [
            Peak {
                delay_ps: 0.0,
                height: 10000.0,
                prominence: 1.0,
            },
            Peak {
                delay_ps: 1.0,
                height: 7000.0,
                prominence: 1.0,
            },
        ];
        let m = frequency_time_map_check(&counts, &pk).unwrap();
        assert!(m[0].consistent(3.0));
        assert!(!m[1].consistent(3.0));
    }
}
