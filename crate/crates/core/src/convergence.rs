//! Convergence tests and iteration-gain bounds for the frequency-domain
//! update `U_k = U_{k−1} + ρ·Ĝ⁻¹·(Y_d − Y_{k−1})`.
//!
//! * [`iteration_map_spectral_radius`]: the exact test, `ρ(I − ρĜ⁻¹G) < 1`.
//! * [`scalar_gain_bound`] / [`mimo_gain_bound`]: Gershgorin-disc bounds from
//!   a known error matrix `Δ = Ĝ⁻¹G`.
//! * [`bounded_uncertainty_gain`]: worst case over entrywise boxes on the
//!   real and imaginary parts of `G`, usable when only `Ĝ` and its
//!   uncertainty are known.

use std::f64::consts::FRAC_PI_2;
use std::io::Write;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::cgpr::ModelEstimate;
use crate::error::{Error, Result};

/// Fraction of the admissible bound used as the actual gain.
pub const DEFAULT_GAIN_FRACTION: f64 = 0.6;

/// Condition number above which inverting `Ĝ` logs a warning.
pub const CONDITION_WARNING: f64 = 1e8;

/// Condition number treated as singular.
pub const CONDITION_SINGULAR: f64 = 1e14;

/// Entrywise bounds on `|Re(Ĝ − G)|` and `|Im(Ĝ − G)|`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelErrorBounds {
    pub delta_a: DMatrix<f64>,
    pub delta_b: DMatrix<f64>,
}

impl ModelErrorBounds {
    pub fn new(delta_a: DMatrix<f64>, delta_b: DMatrix<f64>) -> Result<Self> {
        if delta_a.shape() != delta_b.shape() {
            return Err(Error::invalid("real and imaginary bounds differ in shape"));
        }
        if delta_a.iter().chain(delta_b.iter()).any(|v| !(*v >= 0.0)) {
            return Err(Error::invalid("error bounds must be nonnegative"));
        }
        Ok(Self { delta_a, delta_b })
    }

    pub fn zeros(n: usize) -> Self {
        Self { delta_a: DMatrix::zeros(n, n), delta_b: DMatrix::zeros(n, n) }
    }
}

/// Per-channel gains. `rho[i] = 0` wherever `feasible[i]` is false.
#[derive(Debug, Clone, PartialEq)]
pub struct GainResult {
    pub rho: Vec<f64>,
    pub feasible: Vec<bool>,
    pub bound: Vec<f64>,
}

impl GainResult {
    fn from_bounds(bounds: Vec<Option<f64>>, fraction: f64) -> Self {
        let feasible: Vec<bool> = bounds.iter().map(Option::is_some).collect();
        let bound: Vec<f64> = bounds.iter().map(|b| b.unwrap_or(0.0)).collect();
        let rho = bound.iter().map(|b| fraction * b).collect();
        Self { rho, feasible, bound }
    }

    /// All channels infeasible.
    pub fn infeasible(n: usize) -> Self {
        Self { rho: vec![0.0; n], feasible: vec![false; n], bound: vec![0.0; n] }
    }

    pub fn all_feasible(&self) -> bool {
        self.feasible.iter().all(|f| *f)
    }
}

fn check_fraction(fraction: f64) -> Result<()> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::invalid(format!("gain fraction {fraction} not in (0, 1]")));
    }
    Ok(())
}

/// Largest eigenvalue magnitude of a general complex square matrix.
pub fn spectral_radius(m: &DMatrix<Complex64>) -> Result<f64> {
    if !m.is_square() {
        return Err(Error::invalid("spectral radius needs a square matrix"));
    }
    if m.nrows() == 0 {
        return Ok(0.0);
    }
    if m.nrows() == 1 {
        return Ok(m[(0, 0)].norm());
    }
    let eig = m
        .clone()
        .schur()
        .eigenvalues()
        .ok_or_else(|| Error::numerical("eigenvalue iteration did not converge"))?;
    Ok(eig.iter().fold(0.0, |r, v| r.max(v.norm())))
}

/// `max |λ(I − diag(ρ)·Ĝ⁻¹·G)|`; below one iff the fixed-frequency
/// iteration converges.
pub fn iteration_map_spectral_radius(
    g: &DMatrix<Complex64>,
    g_inv_est: &DMatrix<Complex64>,
    rho: &[f64],
) -> Result<f64> {
    let n = g.nrows();
    if !g.is_square() || g_inv_est.shape() != (n, n) || rho.len() != n {
        return Err(Error::invalid("iteration map needs square matrices and one gain per channel"));
    }
    if rho.iter().any(|r| !r.is_finite()) {
        return Err(Error::invalid("gains must be finite"));
    }
    let mut m = -(g_inv_est * g);
    for i in 0..n {
        for j in 0..n {
            m[(i, j)] *= rho[i];
        }
        m[(i, i)] += Complex64::new(1.0, 0.0);
    }
    spectral_radius(&m)
}

/// Scalar criterion: feasible iff `|Δ_p| < π/2`, bound `2cosΔ_p/Δ_m`.
pub fn scalar_gain_bound(delta_m: f64, delta_p: f64, fraction: f64) -> Result<GainResult> {
    check_fraction(fraction)?;
    if !(delta_m > 0.0 && delta_m.is_finite()) {
        return Err(Error::invalid("model error magnitude must be positive"));
    }
    let cos = delta_p.cos();
    let bound = (delta_p.abs() < FRAC_PI_2 && cos > 0.0).then(|| 2.0 * cos / delta_m);
    Ok(GainResult::from_bounds(vec![bound], fraction))
}

/// Gershgorin bound per channel from a known error matrix `Δ = Ĝ⁻¹G`:
/// feasible iff `Δ_mii cosΔ_pii > Σ_{j≠i} Δ_mij`, and then
/// `ρ_i < 2(Δ_mii cosΔ_pii − S_i)/(Δ_mii² − S_i²)`.
pub fn mimo_gain_bound(delta: &DMatrix<Complex64>, fraction: f64) -> Result<GainResult> {
    check_fraction(fraction)?;
    if !delta.is_square() {
        return Err(Error::invalid("error matrix must be square"));
    }
    let n = delta.nrows();
    let bounds = (0..n)
        .map(|i| {
            let d = delta[(i, i)];
            let dm = d.norm();
            if dm == 0.0 {
                return Err(Error::invalid(format!("diagonal error magnitude is zero in channel {i}")));
            }
            let off: f64 = (0..n).filter(|&j| j != i).map(|j| delta[(i, j)].norm()).sum();
            let margin = d.re - off;
            Ok((margin > 0.0).then(|| 2.0 * margin / (dm * dm - off * off)))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(GainResult::from_bounds(bounds, fraction))
}

/// Dense inverse with a condition-number check. Errors when effectively
/// singular; logs a warning above [`CONDITION_WARNING`].
pub fn checked_inverse(g: &DMatrix<Complex64>) -> Result<(DMatrix<Complex64>, f64)> {
    if !g.is_square() {
        return Err(Error::invalid("cannot invert a non-square matrix"));
    }
    let sv = g.clone().singular_values();
    let smax = sv.iter().cloned().fold(0.0, f64::max);
    let smin = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    let cond = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    if !(cond.is_finite() && cond < CONDITION_SINGULAR) {
        return Err(Error::numerical(format!("estimated transfer matrix is singular (condition {cond:.3e})")));
    }
    if cond > CONDITION_WARNING {
        log::warn!("ill-conditioned transfer estimate (condition {cond:.3e})");
    }
    let inv = g
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::numerical("estimated transfer matrix is singular"))?;
    Ok((inv, cond))
}

/// Worst-case gain bound over all `G` with `|Re(Ĝ−G)| ≤ Δ_a`,
/// `|Im(Ĝ−G)| ≤ Δ_b` entrywise.
///
/// Numerator lower bound on `Δ_mii cosΔ_pii − Σ_{j≠i} Δ_mij`:
/// `1 − |Re r̂_i|·Δ_a,i − |Im r̂_i|·Δ_b,i − Σ_{j≠i} |r̂_i|·|Δ_a,j + jΔ_b,j|`
/// where the products are inner products over the column entries and the
/// bars are taken elementwise. Denominator upper bound on `Δ_mii²`:
/// `‖r̂_i‖²·‖ĉ_abs,i + Δ_a,i + jΔ_b,i‖²`.
pub fn bounded_uncertainty_gain(
    g_est: &DMatrix<Complex64>,
    bounds: &ModelErrorBounds,
    fraction: f64,
) -> Result<GainResult> {
    check_fraction(fraction)?;
    let n = g_est.nrows();
    if !g_est.is_square() || bounds.delta_a.shape() != (n, n) {
        return Err(Error::invalid("estimate and bounds must be conformal square matrices"));
    }
    let (r, _) = checked_inverse(g_est)?;
    Ok(uncertainty_gain_with_inverse(g_est, &r, bounds, fraction))
}

pub(crate) fn uncertainty_gain_with_inverse(
    g_est: &DMatrix<Complex64>,
    r: &DMatrix<Complex64>,
    bounds: &ModelErrorBounds,
    fraction: f64,
) -> GainResult {
    let n = g_est.nrows();
    let (da, db) = (&bounds.delta_a, &bounds.delta_b);
    let out = (0..n)
        .map(|i| {
            let phase_loss: f64 = (0..n)
                .map(|k| r[(i, k)].re.abs() * da[(k, i)] + r[(i, k)].im.abs() * db[(k, i)])
                .sum();
            let coupling: f64 = (0..n)
                .filter(|&j| j != i)
                .map(|j| {
                    (0..n)
                        .map(|k| r[(i, k)].norm() * da[(k, j)].hypot(db[(k, j)]))
                        .sum::<f64>()
                })
                .sum();
            let numerator = 1.0 - phase_loss - coupling;
            let r_norm2: f64 = (0..n).map(|k| r[(i, k)].norm_sqr()).sum();
            let c_abs2: f64 = (0..n)
                .map(|k| {
                    let a = g_est[(k, i)].re.abs() + da[(k, i)];
                    let b = g_est[(k, i)].im.abs() + db[(k, i)];
                    a * a + b * b
                })
                .sum();
            let denominator = r_norm2 * c_abs2;
            (numerator > 0.0 && denominator > 0.0).then(|| 2.0 * numerator / denominator)
        })
        .collect();
    GainResult::from_bounds(out, fraction)
}

/// `Δ_a = Δ_b = sigma_multiple·√V` for one frequency.
pub fn bounds_from_variance(variance: &DMatrix<f64>, sigma_multiple: f64) -> Result<ModelErrorBounds> {
    if !(sigma_multiple > 0.0) {
        return Err(Error::invalid("sigma multiple must be positive"));
    }
    if variance.iter().any(|v| !(*v >= 0.0)) {
        return Err(Error::invalid("variance must be nonnegative"));
    }
    let d = variance.map(|v| sigma_multiple * v.sqrt());
    Ok(ModelErrorBounds { delta_a: d.clone(), delta_b: d })
}

/// [`bounds_from_variance`] at every frequency of an estimate.
pub fn variance_to_bounds(estimate: &ModelEstimate, sigma_multiple: f64) -> Result<Vec<ModelErrorBounds>> {
    estimate
        .variance
        .iter()
        .map(|v| bounds_from_variance(v, sigma_multiple))
        .collect()
}

/// One row of the per-frequency gain dump.
#[derive(Debug, Clone, PartialEq)]
pub struct GainDiagnostic {
    pub omega: f64,
    pub channel: usize,
    pub bound: f64,
    pub rho: f64,
    pub feasible: bool,
    /// Radius of `I − ρĜ⁻¹Ĝ` at this frequency (nominal-model check).
    pub spectral_radius_check: f64,
}

pub fn write_diagnostics_csv<W: Write>(rows: &[GainDiagnostic], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["omega", "channel", "bound", "rho", "feasible", "spectral_radius_check"])?;
    for r in rows {
        w.write_record([
            format!("{}", r.omega),
            r.channel.to_string(),
            format!("{}", r.bound),
            format!("{}", r.rho),
            r.feasible.to_string(),
            format!("{}", r.spectral_radius_check),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn perfect_model_has_zero_radius() {
        let g = DMatrix::from_row_slice(2, 2, &[c(1.0, 0.5), c(0.2, 0.0), c(-0.3, 0.1), c(0.8, -0.2)]);
        let gi = g.clone().try_inverse().unwrap();
        assert!(iteration_map_spectral_radius(&g, &gi, &[1.0, 1.0]).unwrap() < 1e-12);
        assert_abs_diff_eq!(iteration_map_spectral_radius(&g, &gi, &[0.0, 0.0]).unwrap(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn non_square_rejected() {
        let g = DMatrix::from_element(2, 3, c(1.0, 0.0));
        assert!(iteration_map_spectral_radius(&g, &g, &[1.0, 1.0]).is_err());
        assert!(mimo_gain_bound(&g, 0.6).is_err());
    }

    #[test]
    fn scalar_examples() {
        let r = scalar_gain_bound(1.0, 0.0, 0.6).unwrap();
        assert_abs_diff_eq!(r.bound[0], 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(r.rho[0], 1.2, epsilon = 1e-15);
        let r = scalar_gain_bound(1.0, PI / 3.0, 0.6).unwrap();
        assert_abs_diff_eq!(r.bound[0], 1.0, epsilon = 1e-15);
        let r = scalar_gain_bound(1.0, PI / 2.0, 0.6).unwrap();
        assert!(!r.feasible[0]);
        assert_eq!(r.rho[0], 0.0);
        assert!(scalar_gain_bound(0.0, 0.0, 0.6).is_err());
    }

    #[test]
    fn mimo_examples() {
        let r = mimo_gain_bound(&DMatrix::identity(3, 3), 0.6).unwrap();
        assert!(r.bound.iter().all(|b| (b - 2.0).abs() < 1e-15));
        let d = DMatrix::from_element(1, 1, Complex64::from_polar(1.0, PI / 3.0));
        let m = mimo_gain_bound(&d, 0.6).unwrap();
        let s = scalar_gain_bound(1.0, PI / 3.0, 0.6).unwrap();
        assert_abs_diff_eq!(m.bound[0], s.bound[0], epsilon = 1e-12);
        // off-diagonal row sum 0.6 > cos(π/3) = 0.5
        let d = DMatrix::from_row_slice(
            2,
            2,
            &[Complex64::from_polar(1.0, PI / 3.0), c(0.6, 0.0), c(0.1, 0.0), c(1.0, 0.0)],
        );
        let r = mimo_gain_bound(&d, 0.6).unwrap();
        assert_eq!(r.feasible, vec![false, true]);
        assert_eq!(r.rho[0], 0.0);
        let z = DMatrix::from_row_slice(2, 2, &[c(0.0, 0.0), c(0.1, 0.0), c(0.0, 0.0), c(1.0, 0.0)]);
        assert!(mimo_gain_bound(&z, 0.6).is_err());
    }

    #[test]
    fn uncertainty_examples() {
        let g = DMatrix::identity(2, 2);
        let r = bounded_uncertainty_gain(&g, &ModelErrorBounds::zeros(2), 0.6).unwrap();
        assert!(r.bound.iter().all(|b| (b - 2.0).abs() < 1e-14));
        let big = ModelErrorBounds::new(DMatrix::from_element(2, 2, 0.8), DMatrix::from_element(2, 2, 0.8)).unwrap();
        let r = bounded_uncertainty_gain(&g, &big, 0.6).unwrap();
        assert_eq!(r.feasible, vec![false, false]);
        assert_eq!(r.rho, vec![0.0, 0.0]);
        let singular = DMatrix::from_element(2, 2, c(1.0, 0.0));
        assert!(matches!(
            bounded_uncertainty_gain(&singular, &ModelErrorBounds::zeros(2), 0.6),
            Err(Error::Numerical(_))
        ));
    }

    #[test]
    fn variance_examples() {
        let b = bounds_from_variance(&DMatrix::from_element(1, 1, 0.0), 2.0).unwrap();
        assert_eq!(b.delta_a[(0, 0)], 0.0);
        let b = bounds_from_variance(&DMatrix::from_element(1, 1, 1.0), 2.0).unwrap();
        assert_eq!((b.delta_a[(0, 0)], b.delta_b[(0, 0)]), (2.0, 2.0));
        let b = bounds_from_variance(&DMatrix::from_element(1, 1, 0.25), 2.0).unwrap();
        assert_abs_diff_eq!(b.delta_a[(0, 0)], 1.0, epsilon = 1e-15);
        assert!(bounds_from_variance(&DMatrix::from_element(1, 1, -1e-3), 2.0).is_err());
    }

    #[test]
    fn diagnostics_csv_header() {
        let rows = vec![GainDiagnostic {
            omega: 1.5,
            channel: 0,
            bound: 2.0,
            rho: 1.2,
            feasible: true,
            spectral_radius_check: 0.2,
        }];
        let mut buf = Vec::new();
        write_diagnostics_csv(&rows, &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "omega,channel,bound,rho,feasible,spectral_radius_check\n1.5,0,2,1.2,true,0.2\n"
        );
    }
}
