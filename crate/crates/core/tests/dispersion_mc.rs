//! Grating dispersion on event streams against the analytic curves.

use bfc_core::correlator::cross_correlate;
use bfc_core::dispersion::{
    apply_dispersion, dispersed_correlation, group_delay, photon_frequency, DispersionElement,
};
use bfc_core::events::{detect, generate_pairs};
use bfc_core::state::correlation_fwhm;
use bfc_core::*;

const LAMBDA: f64 = 1550.9;

fn state(weights: WeightModel, n: usize) -> BiphotonState {
    BiphotonState::new(RingParams {
        pump_wavelength_nm: LAMBDA,
        fsr_ghz: 384.6,
        linewidth_fwhm_mhz: 270.0,
        n_sidebands: n,
        min_sideband: 2,
        weights,
    })
    .unwrap()
}

fn streams(s: &BiphotonState, pairs: f64, seed: u64) -> (Vec<TimeTag>, Vec<TimeTag>) {
    let src = SourceConfig {
        pair_rate_hz: pairs,
        duration_s: 1.0,
        seed,
    };
    let batch = generate_pairs(s, &src).unwrap();
    let ch = ChannelConfig::ideal();
    (
        detect(&batch, Channel::Signal, &ch, seed).unwrap(),
        detect(&batch, Channel::Idler, &ch, seed).unwrap(),
    )
}

#[test]
fn cascaded_elements_add_delays() {
    let s = state(WeightModel::Flat, 4);
    let (sig, _) = streams(&s, 2e4, 1);
    let d1 = DispersionElement::new(1.3, LAMBDA);
    let d2 = DispersionElement::new(-0.45, LAMBDA);
    let twice = apply_dispersion(
        &apply_dispersion(&sig, &s.params, &d1, 0).unwrap(),
        &s.params,
        &d2,
        0,
    )
    .unwrap();
    let once = apply_dispersion(&sig, &s.params, &d1.then(&d2).unwrap(), 0).unwrap();
    assert_eq!(twice.len(), once.len());
    // absolute times reach 1e12 ps; allow a few ulps of rounding
    let tol = |t: f64| 4.0 * f64::EPSILON * t.abs();
    for (a, b) in twice.iter().zip(&once) {
        assert_eq!(a.pair_id(), b.pair_id());
        assert!(
            (a.time_ps - b.time_ps).abs() <= tol(a.time_ps),
            "{} vs {}",
            a.time_ps,
            b.time_ps
        );
    }
    // per-frequency delay sum holds for every photon
    let mut once = once;
    once.sort_by_key(|t| t.pair_id());
    let mut sig = sig;
    sig.sort_by_key(|t| t.pair_id());
    for (tag, orig) in once.iter().zip(&sig) {
        let nu = photon_frequency(&s.params, orig).unwrap();
        let sum = group_delay(&d1, nu) + group_delay(&d2, nu);
        assert!((tag.time_ps - orig.time_ps - sum).abs() <= tol(tag.time_ps));
    }
}

#[test]
fn loss_and_dark_counts() {
    let s = state(WeightModel::Flat, 2);
    let (sig, _) = streams(&s, 1e5, 2);
    let lossy = DispersionElement {
        transmission: 0.5,
        ..DispersionElement::new(2.0, LAMBDA)
    };
    let out = apply_dispersion(&sig, &s.params, &lossy, 3).unwrap();
    let n = sig.len() as f64;
    assert!((out.len() as f64 - 0.5 * n).abs() < 4.0 * (0.25 * n).sqrt());
    assert!(out.windows(2).all(|w| w[0].time_ps <= w[1].time_ps));

    let dark = vec![TimeTag {
        time_ps: 12.5,
        channel: Channel::Idler,
        truth: Truth::Dark,
    }];
    let same = apply_dispersion(&dark, &s.params, &lossy, 3).unwrap();
    assert_eq!(same, dark);
    let none = apply_dispersion(&sig, &s.params, &DispersionElement::none(LAMBDA), 3).unwrap();
    assert_eq!(none, sig);
}

#[test]
fn swapping_and_negating_gratings() {
    let s = state(WeightModel::LorentzianRolloff { scale: 3.5 }, 4);
    let d = DispersionElement::new(2.0, LAMBDA);
    let none = DispersionElement::none(LAMBDA);
    let grid: Vec<f64> = (-4000..=4000).map(|i| i as f64 * 10.0).collect();
    let base = dispersed_correlation(&s, &d, &none, &grid).unwrap();
    // energy anticorrelation: the same grating on either photon shifts the
    // delay the same way, so swapping arms leaves the curve unchanged
    let swapped = dispersed_correlation(&s, &none, &d, &grid).unwrap();
    // negating the dispersion mirrors it about the undispersed centre
    let negated =
        dispersed_correlation(&s, &DispersionElement::new(-2.0, LAMBDA), &none, &grid).unwrap();
    let n = grid.len();
    for i in 0..n {
        assert!((base.values[i] - swapped.values[i]).abs() < 1e-9);
        assert!((base.values[i] - negated.values[n - 1 - i]).abs() < 1e-9);
    }
}

#[test]
fn cancellation_for_any_strength() {
    let s = state(WeightModel::LorentzianRolloff { scale: 3.0 }, 6);
    let grid: Vec<f64> = (-3000..=3000).map(|i| i as f64).collect();
    let none = DispersionElement::none(LAMBDA);
    let base = dispersed_correlation(&s, &none, &none, &grid).unwrap();
    let w0 = correlation_fwhm(&base).unwrap();
    for d in [0.1, 0.7, 2.0, 5.0, -3.0] {
        let c = dispersed_correlation(
            &s,
            &DispersionElement::new(d, LAMBDA),
            &DispersionElement::new(-d, LAMBDA),
            &grid,
        )
        .unwrap();
        let w = correlation_fwhm(&c).unwrap();
        assert!((w - w0).abs() < 0.01 * w0);
        let imax = c
            .values
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0;
        assert!(grid[imax].abs() <= 1.0);
    }
}

#[test]
fn event_histogram_matches_analytic_curve() {
    let s = state(WeightModel::LorentzianRolloff { scale: 3.5 }, 4);
    let d = DispersionElement::new(2.0, LAMBDA);
    let none = DispersionElement::none(LAMBDA);
    let (sig, idl) = streams(&s, 1e6, 7);
    let sig = apply_dispersion(&sig, &s.params, &d, 7).unwrap();
    let idl = apply_dispersion(&idl, &s.params, &none, 8).unwrap();
    let bin = 200.0;
    let range = 40_000.0;
    let h = cross_correlate(&sig, &idl, bin, range).unwrap();

    // expected counts per bin: N·Γ·∫ curve over the bin, midpoint rule on 2 ps steps
    let sub = 100;
    let fine: Vec<f64> = (0..h.n_bins() * sub)
        .map(|j| -range + (j as f64 + 0.5) * bin / sub as f64)
        .collect();
    let curve = dispersed_correlation(&s, &d, &none, &fine).unwrap();
    let n_pairs = sig.len().min(idl.len()) as f64;
    let scale = n_pairs * s.gamma() * bin / sub as f64;
    let mut beyond3 = 0;
    let mut beyond5 = 0;
    let mut tested = 0;
    for b in 0..h.n_bins() {
        let expect: f64 = curve.values[b * sub..(b + 1) * sub].iter().sum::<f64>() * scale;
        // accidentals from unrelated pairs at 1e6/s
        let acc = (sig.len() as f64) * (idl.len() as f64) * bin / 1e12;
        let mu = expect + acc;
        if mu < 20.0 {
            continue;
        }
        tested += 1;
        let z = (h.counts[b] as f64 - mu) / mu.sqrt();
        if z.abs() > 3.0 {
            beyond3 += 1;
        }
        if z.abs() > 5.0 {
            beyond5 += 1;
        }
    }
    assert!(tested > 100, "{tested}");
    assert_eq!(beyond5, 0);
    // 3σ excursions at the Gaussian rate, with slack for a small sample
    assert!(
        beyond3 as f64 <= 0.01 * tested as f64 + 2.0,
        "{beyond3} of {tested} bins beyond 3σ"
    );
}
