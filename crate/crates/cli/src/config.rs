//! Experiment configuration: one TOML file, parsed strictly.
//!
//! Every section is checked against its module's invariants at load time.
//! Errors name the offending field and, when it can be found, the line.

use std::fmt;
use std::path::{Path, PathBuf};

use bfc_core::correlator::TiaConfig;
use bfc_core::dispersion::DispersionElement;
use bfc_core::franson::FransonConfig;
use bfc_core::spectral::SidebandWeights;
use bfc_core::{BiphotonState, ChannelConfig, Error as CoreError, RingParams, SourceConfig};
use serde::Deserialize;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub output_dir: PathBuf,
    pub ring: RingParams,
    pub source: SourceConfig,
    pub detectors: Detectors,
    #[serde(default)]
    pub tia: TiaConfig,
    pub franson: FransonSection,
    pub dispersion: DispersionSection,
    #[serde(default)]
    pub schmidt: SchmidtSection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Detectors {
    pub signal: ChannelConfig,
    pub idler: ChannelConfig,
}

/// Evenly spaced scan grid.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanGrid {
    pub start: f64,
    pub step: f64,
    pub points: usize,
}

impl ScanGrid {
    pub fn values(&self) -> Vec<f64> {
        (0..self.points)
            .map(|i| self.start + i as f64 * self.step)
            .collect()
    }
}

fn default_pump_coherence_us() -> f64 {
    1.0
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FransonSection {
    pub tau_s_ns: f64,
    pub tau_i_ns: f64,
    pub base_visibility: f64,
    #[serde(default = "default_pump_coherence_us")]
    pub pump_coherence_us: f64,
    /// Central-peak coincidence window.
    pub window_ns: f64,
    /// Common-delay offsets, fs.
    pub common_scan: ScanGrid,
    /// τ_d values, fs.
    pub taud_scan: ScanGrid,
    /// τ_d values (ps) at which Monte Carlo visibility is measured.
    pub envelope_scan: ScanGrid,
}

impl FransonSection {
    pub fn interferometer(&self) -> FransonConfig {
        FransonConfig {
            tau_s_ns: self.tau_s_ns,
            tau_i_ns: self.tau_i_ns,
            base_visibility: self.base_visibility,
            pump_coherence_us: self.pump_coherence_us,
        }
    }
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DispersionSection {
    pub d_signal_ns_per_nm: f64,
    pub d_idler_ns_per_nm: f64,
    /// Defaults to the pump wavelength.
    #[serde(default)]
    pub ref_wavelength_nm: Option<f64>,
    /// Grating transmission, 0.5 for 3 dB insertion loss.
    #[serde(default = "one")]
    pub transmission: f64,
    /// First and last sideband passed to the gratings.
    pub sidebands: [i32; 2],
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchmidtSection {
    /// First and last sideband of the JSI scan; defaults to every sideband.
    #[serde(default)]
    pub k_range: Option<[i32; 2]>,
}

#[derive(Debug)]
pub enum ConfigError {
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    Invalid {
        path: PathBuf,
        line: Option<usize>,
        field: String,
        reason: String,
    },
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConfigError::Io { path, source } => write!(f, "{}: {source}", path.display()),
            ConfigError::Invalid {
                path,
                line,
                field,
                reason,
            } => {
                write!(f, "{}", path.display())?;
                if let Some(l) = line {
                    write!(f, ":{l}")?;
                }
                if field.is_empty() {
                    write!(f, ": {reason}")
                } else {
                    write!(f, ": {field}: {reason}")
                }
            }
        }
    }
}

impl std::error::Error for ConfigError {}

/// A parsed and validated configuration with the raw bytes it came from.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    pub path: PathBuf,
    pub raw: Vec<u8>,
}

impl ExperimentConfig {
    pub fn state(&self) -> Result<BiphotonState, CoreError> {
        BiphotonState::new(self.ring.clone())
    }

    pub fn channels(&self) -> (&ChannelConfig, &ChannelConfig) {
        (&self.detectors.signal, &self.detectors.idler)
    }

    pub fn k_range(&self) -> (i32, i32) {
        self.schmidt.k_range.map_or(
            (self.ring.min_sideband, self.ring.max_sideband()),
            |[a, b]| (a, b),
        )
    }

    pub fn ref_wavelength_nm(&self) -> f64 {
        self.dispersion
            .ref_wavelength_nm
            .unwrap_or(self.ring.pump_wavelength_nm)
    }

    pub fn grating(&self, d_ns_per_nm: f64) -> DispersionElement {
        DispersionElement {
            d_ns_per_nm,
            ref_wavelength_nm: self.ref_wavelength_nm(),
            transmission: self.dispersion.transmission,
        }
    }

    /// The comb restricted to the sidebands sent through the gratings.
    pub fn dispersion_state(&self) -> Result<BiphotonState, CoreError> {
        let state = self.state()?;
        let [lo, hi] = self.dispersion.sidebands;
        let raw = state
            .weights
            .iter()
            .map(|(k, w)| if (lo..=hi).contains(&k) { w } else { 0.0 })
            .collect();
        BiphotonState::with_weights(
            self.ring.clone(),
            SidebandWeights::new(state.weights.first(), raw)?,
        )
    }
}

pub fn load(path: &Path) -> Result<LoadedConfig, ConfigError> {
    let raw = std::fs::read(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let text = String::from_utf8_lossy(&raw).into_owned();
    let config = parse(&text).map_err(|e| e.at(path))?;
    Ok(LoadedConfig {
        config,
        path: path.to_path_buf(),
        raw,
    })
}

/// Parse failure before a file path is attached.
#[derive(Debug)]
pub struct ParseError {
    pub line: Option<usize>,
    pub field: String,
    pub reason: String,
}

impl ParseError {
    fn at(self, path: &Path) -> ConfigError {
        ConfigError::Invalid {
            path: path.to_path_buf(),
            line: self.line,
            field: self.field,
            reason: self.reason,
        }
    }
}

fn line_of_offset(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Line of the `key = ...` entry inside `[section]`, or of the header when `key` is `None`.
fn find_line(text: &str, section: &str, key: Option<&str>) -> Option<usize> {
    let mut current = String::new();
    for (i, line) in text.lines().enumerate() {
        let t = line.trim();
        if t.starts_with('[') {
            current = t.trim_matches(|c| c == '[' || c == ']').trim().to_string();
            if key.is_none() && current == section {
                return Some(i + 1);
            }
            continue;
        }
        if let (Some(key), true) = (key, current == section) {
            if t.split_once('=').is_some_and(|(k, _)| k.trim() == key) {
                return Some(i + 1);
            }
        }
    }
    None
}

/// Line of `key` inside `[section]`, falling back to the section header.
fn locate(text: &str, section: &str, key: &str) -> Option<usize> {
    find_line(text, section, Some(key)).or_else(|| find_line(text, section, None))
}

fn invalid_in(text: &str, section: &str, err: CoreError) -> ParseError {
    match err {
        CoreError::InvalidParameter { field, reason } => {
            // nested fields such as `gate.period_ns` live in their own sub-table
            let (sub, key) = match field.rsplit_once('.') {
                Some((parent, key)) => (format!("{section}.{parent}"), key),
                None => (section.to_string(), field),
            };
            // inline tables such as `gate = { ... }` only have the parent key's line
            let inline = || {
                let (parent, name) = sub.rsplit_once('.')?;
                find_line(text, parent, Some(name))
            };
            let line = find_line(text, &sub, Some(key))
                .or_else(inline)
                .or_else(|| locate(text, section, key));
            ParseError {
                line,
                field: format!("{sub}.{key}"),
                reason,
            }
        }
        other => ParseError {
            line: locate(text, section, ""),
            field: section.to_string(),
            reason: other.to_string(),
        },
    }
}

fn check_grid(text: &str, section: &str, grid: &ScanGrid) -> Result<(), ParseError> {
    let bad = |key: &str, reason: &str| ParseError {
        line: locate(text, section, key),
        field: format!("{section}.{key}"),
        reason: reason.into(),
    };
    if grid.points == 0 {
        return Err(bad("points", "scan needs at least one point"));
    }
    if !(grid.step > 0.0 && grid.step.is_finite()) {
        return Err(bad("step", "must be positive"));
    }
    if !grid.start.is_finite() {
        return Err(bad("start", "must be finite"));
    }
    Ok(())
}

pub fn parse(text: &str) -> Result<ExperimentConfig, ParseError> {
    let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| ParseError {
        line: e.span().map(|s| line_of_offset(text, s.start)),
        field: String::new(),
        reason: e.message().trim().to_string(),
    })?;
    validate(text, &cfg)?;
    Ok(cfg)
}

fn validate(text: &str, cfg: &ExperimentConfig) -> Result<(), ParseError> {
    let state = cfg.state().map_err(|e| invalid_in(text, "ring", e))?;
    cfg.source
        .validate()
        .map_err(|e| invalid_in(text, "source", e))?;
    for (section, ch) in [
        ("detectors.signal", &cfg.detectors.signal),
        ("detectors.idler", &cfg.detectors.idler),
    ] {
        ch.validate().map_err(|e| invalid_in(text, section, e))?;
    }
    cfg.tia.validate().map_err(|e| invalid_in(text, "tia", e))?;

    let f = &cfg.franson;
    f.interferometer()
        .validate(&state)
        .map_err(|e| invalid_in(text, "franson", e))?;
    if !(f.window_ns > 0.0 && f.window_ns < f.tau_s_ns) {
        return Err(ParseError {
            line: locate(text, "franson", "window_ns"),
            field: "franson.window_ns".into(),
            reason: "must be positive and shorter than tau_s_ns".into(),
        });
    }
    check_grid(text, "franson.common_scan", &f.common_scan)?;
    check_grid(text, "franson.taud_scan", &f.taud_scan)?;
    check_grid(text, "franson.envelope_scan", &f.envelope_scan)?;

    for d in [
        cfg.dispersion.d_signal_ns_per_nm,
        cfg.dispersion.d_idler_ns_per_nm,
    ] {
        cfg.grating(d)
            .validate()
            .map_err(|e| invalid_in(text, "dispersion", e))?;
    }
    let in_ring = |k: i32| state.weights.contains(k);
    let [lo, hi] = cfg.dispersion.sidebands;
    if !(lo <= hi && in_ring(lo) && in_ring(hi)) {
        return Err(ParseError {
            line: locate(text, "dispersion", "sidebands"),
            field: "dispersion.sidebands".into(),
            reason: format!(
                "must be an ordered pair within the ring's sidebands {}..={}",
                state.weights.first(),
                state.weights.last()
            ),
        });
    }
    let (a, b) = cfg.k_range();
    if !(a <= b && in_ring(a) && in_ring(b)) {
        return Err(ParseError {
            line: locate(text, "schmidt", "k_range"),
            field: "schmidt.k_range".into(),
            reason: "must be an ordered pair within the ring's sidebands".into(),
        });
    }
    Ok(())
}
