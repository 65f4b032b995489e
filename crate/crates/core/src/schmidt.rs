//! Schmidt analysis of a measured joint spectral intensity.
//!
//! Only intensities are measured, so the joint amplitude is taken as the
//! element-wise square root with all phases zero. Any spectral phase can only
//! spread the Schmidt spectrum further, which makes the resulting `K` a lower
//! bound on the true Schmidt number.

use std::fmt::Write as _;

use crate::correlator::{measure_jsi_detailed, TiaConfig};
use crate::error::{invalid, Error, Result};
use crate::events::{ChannelConfig, SourceConfig};
use crate::jsi::JsiMatrix;
use crate::state::BiphotonState;

/// Largest matrix accepted by [`singular_values`].
pub const MAX_SVD_DIM: usize = 16;
const OFF_DIAGONAL_TOL: f64 = 1e-12;
const MAX_SWEEPS: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct SchmidtResult {
    /// Normalized Schmidt coefficients λ_n, descending, summing to one.
    pub coefficients: Vec<f64>,
    /// `K = 1/Σλ_n²`.
    pub schmidt_number: f64,
    /// `log₂K`.
    pub effective_bits: f64,
    /// Negative input cells that were clamped to zero.
    pub clamped_cells: usize,
}

impl SchmidtResult {
    fn from_coefficients(mut coefficients: Vec<f64>, clamped_cells: usize) -> Self {
        let total: f64 = coefficients.iter().sum();
        coefficients.iter_mut().for_each(|c| *c /= total);
        coefficients.sort_by(|a, b| b.total_cmp(a));
        let schmidt_number = 1.0 / coefficients.iter().map(|c| c * c).sum::<f64>();
        SchmidtResult {
            coefficients,
            schmidt_number,
            effective_bits: schmidt_number.log2(),
            clamped_cells,
        }
    }

    /// Key-value text: one `key=value` per line, coefficients comma separated.
    pub fn to_text(&self) -> String {
        let coeffs: Vec<String> = self.coefficients.iter().map(|c| c.to_string()).collect();
        let mut out = String::new();
        let _ = writeln!(out, "coefficients={}", coeffs.join(","));
        let _ = writeln!(out, "schmidt_number={}", self.schmidt_number);
        let _ = writeln!(out, "effective_bits={}", self.effective_bits);
        let _ = writeln!(out, "clamped_cells={}", self.clamped_cells);
        out
    }
}

/// Singular values of a dense row-major matrix by one-sided Jacobi rotations,
/// descending. Sweeps until the off-diagonal Frobenius mass of `AᵀA` drops
/// below 1e-12 relative to its trace.
pub fn singular_values(rows: &[Vec<f64>]) -> Result<Vec<f64>> {
    let m = rows.len();
    let n = rows.first().map_or(0, Vec::len);
    if m == 0 || n == 0 {
        return Err(invalid("matrix", "empty matrix"));
    }
    if m > MAX_SVD_DIM || n > MAX_SVD_DIM {
        return Err(invalid(
            "matrix",
            format!("dimensions above {MAX_SVD_DIM} are not supported"),
        ));
    }
    if rows.iter().any(|r| r.len() != n) {
        return Err(invalid("matrix", "ragged rows"));
    }
    // column-major copy; columns are rotated in place
    let mut cols: Vec<Vec<f64>> = (0..n)
        .map(|c| rows.iter().map(|r| r[c]).collect())
        .collect();
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let scale: f64 = cols.iter().map(|c| dot(c, c)).sum();
    if scale == 0.0 {
        return Ok(vec![0.0; n.min(m)]);
    }
    let mut converged = false;
    for _ in 0..MAX_SWEEPS {
        let mut off = 0.0;
        for p in 0..n {
            for q in p + 1..n {
                let alpha = dot(&cols[p], &cols[p]);
                let beta = dot(&cols[q], &cols[q]);
                let gamma = dot(&cols[p], &cols[q]);
                off += 2.0 * gamma * gamma;
                if gamma == 0.0 {
                    continue;
                }
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                let (left, right) = cols.split_at_mut(q);
                for (x, y) in left[p].iter_mut().zip(right[0].iter_mut()) {
                    let (a, b) = (*x, *y);
                    *x = c * a - s * b;
                    *y = s * a + c * b;
                }
            }
        }
        if off.sqrt() < OFF_DIAGONAL_TOL * scale {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::Degenerate("Jacobi SVD did not converge".into()));
    }
    let mut sv: Vec<f64> = cols.iter().map(|c| dot(c, c).sqrt()).collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv.truncate(n.min(m));
    Ok(sv)
}

fn decompose_rows(rows: &[Vec<f64>]) -> Result<SchmidtResult> {
    let mut clamped = 0;
    let amp: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| {
            r.iter()
                .map(|&v| {
                    if v < 0.0 {
                        clamped += 1;
                        0.0
                    } else {
                        v.sqrt()
                    }
                })
                .collect()
        })
        .collect();
    let norm: f64 = amp.iter().flatten().map(|a| a * a).sum::<f64>().sqrt();
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(Error::Degenerate("JSI has no positive entries".into()));
    }
    let amp: Vec<Vec<f64>> = amp
        .iter()
        .map(|r| r.iter().map(|a| a / norm).collect())
        .collect();
    let sv = singular_values(&amp)?;
    Ok(SchmidtResult::from_coefficients(
        sv.iter().map(|s| s * s).collect(),
        clamped,
    ))
}

/// Schmidt decomposition of `√JSI`; negative cells are clamped to zero and
/// counted in [`SchmidtResult::clamped_cells`].
pub fn schmidt_decompose(jsi: &JsiMatrix) -> Result<SchmidtResult> {
    decompose_rows(&jsi.rows())
}

/// Schmidt number with every off-diagonal cell discarded.
pub fn diagonal_schmidt(jsi: &JsiMatrix) -> Result<SchmidtResult> {
    if !jsi.diagonal().iter().any(|&d| d > 0.0) {
        return Err(Error::Degenerate("JSI diagonal is zero".into()));
    }
    schmidt_decompose(&jsi.diagonal_only())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SchmidtPipeline {
    /// From the full measured JSI, accidentals included.
    pub k_min: SchmidtResult,
    /// From the diagonal of the same JSI.
    pub k_diag: SchmidtResult,
    pub jsi: JsiMatrix,
}

/// Measures the JSI by Monte Carlo and runs both decompositions on the raw
/// counts, as a real scan would without accidental subtraction.
pub fn simulate_schmidt_pipeline(
    state: &BiphotonState,
    src: &SourceConfig,
    channels: (&ChannelConfig, &ChannelConfig),
    k_range: (i32, i32),
    tia: &TiaConfig,
) -> Result<SchmidtPipeline> {
    let m = measure_jsi_detailed(state, src, channels, k_range, tia)?;
    Ok(SchmidtPipeline {
        k_min: schmidt_decompose(&m.raw)?,
        k_diag: diagonal_schmidt(&m.raw)?,
        jsi: m.raw,
    })
}
