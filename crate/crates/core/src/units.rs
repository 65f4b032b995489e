//! Unit conventions.
//!
//! Internally every time is in picoseconds and every optical frequency in
//! terahertz, so `frequency * time` is a dimensionless cycle count.
//! Wavelengths are in nanometres.

/// Speed of light in nm·THz.
pub const SPEED_OF_LIGHT_NM_THZ: f64 = 299_792.458;

pub const PS_PER_NS: f64 = 1e3;
pub const PS_PER_S: f64 = 1e12;
pub const FS_PER_PS: f64 = 1e3;
pub const THZ_PER_GHZ: f64 = 1e-3;
pub const THZ_PER_MHZ: f64 = 1e-6;

pub fn wavelength_to_thz(wavelength_nm: f64) -> f64 {
    SPEED_OF_LIGHT_NM_THZ / wavelength_nm
}

pub fn thz_to_wavelength(freq_thz: f64) -> f64 {
    SPEED_OF_LIGHT_NM_THZ / freq_thz
}

/// Fractional part of `freq_thz * time_ps`, reduced to `[-0.5, 0.5)` cycles.
///
/// The product is split with an FMA so the reduction stays accurate even when
/// the raw cycle count is in the millions (optical carriers over nanosecond
/// interferometer imbalances).
pub fn phase_cycles(freq_thz: f64, time_ps: f64) -> f64 {
    let hi = freq_thz * time_ps;
    let lo = freq_thz.mul_add(time_ps, -hi);
    let frac = (hi - hi.round()) + lo;
    frac - frac.round()
}
