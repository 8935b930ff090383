//! Monte-Carlo checks of the convergence bounds. Every trial draws from its
//! own ChaCha stream of the master seed, so results do not depend on how
//! trials are scheduled.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::convergence::{
    bounded_uncertainty_gain, checked_inverse, iteration_map_spectral_radius, mimo_gain_bound, scalar_gain_bound,
    ModelErrorBounds,
};
use crate::error::Result;
use crate::par;

/// Outcome of one suite.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteResult {
    pub name: String,
    pub trials: usize,
    pub failures: usize,
    /// Largest value of the suite's statistic (a radius or a discrepancy).
    pub worst: f64,
    /// Infeasible draws that were replaced.
    pub resampled: usize,
}

impl SuiteResult {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

fn trial_rng(seed: u64, trial: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial as u64);
    rng
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Complex Gaussian 2×2 matrix with condition number below 100.
fn random_plant(rng: &mut ChaCha8Rng) -> DMatrix<Complex64> {
    loop {
        let g = DMatrix::from_fn(2, 2, |_, _| Complex64::new(normal(rng), normal(rng)));
        if matches!(checked_inverse(&g), Ok((_, c)) if c < 100.0) {
            return g;
        }
    }
}

/// Runs `trial` for every index in parallel and folds the results in order.
fn collect<F>(name: &str, trials: usize, trial: F) -> Result<SuiteResult>
where
    F: Fn(usize) -> Result<(bool, f64, usize)> + Sync + Send,
{
    let mut out = SuiteResult { name: name.into(), trials, failures: 0, worst: 0.0, resampled: 0 };
    for r in par::map_range(trials, trial) {
        let (ok, stat, resampled) = r?;
        out.failures += usize::from(!ok);
        out.worst = out.worst.max(stat);
        out.resampled += resampled;
    }
    Ok(out)
}

/// Perfect model with unit gain: `I − Ĝ⁻¹G` should vanish.
pub fn perfect_model_suite(seed: u64, trials: usize, tol: f64) -> Result<SuiteResult> {
    collect("perfect model, unit gain", trials, |t| {
        let mut rng = trial_rng(seed, t);
        let g = random_plant(&mut rng);
        let (inv, _) = checked_inverse(&g)?;
        let r = iteration_map_spectral_radius(&g, &inv, &[1.0, 1.0])?;
        Ok((r <= tol, r, 0))
    })
}

/// Gains drawn strictly inside the Gershgorin bound of a known `Δ = Ĝ⁻¹G`
/// must give a contraction.
pub fn gershgorin_suite(seed: u64, trials: usize) -> Result<SuiteResult> {
    collect("gain inside the known-error bound", trials, |t| {
        let mut rng = trial_rng(seed, t);
        let mut resampled = 0;
        loop {
            let g = random_plant(&mut rng);
            let scale = rng.random_range(0.05..0.5);
            let g_est = g.map(|v| v + Complex64::new(normal(&mut rng), normal(&mut rng)) * (scale * v.norm()));
            let Ok((inv, _)) = checked_inverse(&g_est) else {
                resampled += 1;
                continue;
            };
            let bound = mimo_gain_bound(&(&inv * &g), 1.0)?;
            if !bound.all_feasible() {
                resampled += 1;
                continue;
            }
            let rho: Vec<f64> = bound.bound.iter().map(|b| rng.random_range(0.01..0.99) * b).collect();
            let r = iteration_map_spectral_radius(&g, &inv, &rho)?;
            return Ok((r < 1.0, r, resampled));
        }
    })
}

/// The one-channel Gershgorin bound against `2cosΔ_p/Δ_m` on a regular
/// grid of `side × side` pairs. The statistic is the relative discrepancy.
pub fn scalar_consistency_suite(side: usize, tol: f64) -> Result<SuiteResult> {
    collect("scalar and MIMO bounds agree", side * side, |t| {
        let (a, b) = (t / side, t % side);
        let dm = 0.05 + 10.0 * (a as f64 + 0.5) / side as f64;
        let dp = -std::f64::consts::PI + 2.0 * std::f64::consts::PI * (b as f64 + 0.5) / side as f64;
        let s = scalar_gain_bound(dm, dp, 1.0)?;
        let m = mimo_gain_bound(&DMatrix::from_element(1, 1, Complex64::from_polar(dm, dp)), 1.0)?;
        if s.feasible != m.feasible {
            return Ok((false, f64::INFINITY, 0));
        }
        let diff = (s.bound[0] - m.bound[0]).abs() / s.bound[0].abs().max(1.0);
        Ok((diff <= tol, diff, 0))
    })
}

/// Bounded-uncertainty gains never exceed the known-error bound of the
/// realized plant, and `fraction` of them contracts. The statistic is the
/// spectral radius; a bound violation counts as a failure.
pub fn uncertainty_suite(seed: u64, trials: usize, fraction: f64) -> Result<SuiteResult> {
    collect("uncertainty bound is conservative", trials, |t| {
        let mut rng = trial_rng(seed, t);
        let mut resampled = 0;
        loop {
            let g_est = random_plant(&mut rng);
            let scale = rng.random_range(0.01..0.2);
            let da = g_est.map(|v| rng.random_range(0.0..scale) * v.norm());
            let db = g_est.map(|v| rng.random_range(0.0..scale) * v.norm());
            let g = DMatrix::from_fn(2, 2, |i, j| {
                let e = Complex64::new(
                    rng.random_range(-1.0..=1.0) * da[(i, j)],
                    rng.random_range(-1.0..=1.0) * db[(i, j)],
                );
                g_est[(i, j)] - e
            });
            let conservative = bounded_uncertainty_gain(&g_est, &ModelErrorBounds::new(da, db)?, 1.0)?;
            if !conservative.all_feasible() {
                resampled += 1;
                continue;
            }
            let (inv, _) = checked_inverse(&g_est)?;
            let known = mimo_gain_bound(&(&inv * &g), 1.0)?;
            let below = (0..2).all(|i| known.feasible[i] && conservative.bound[i] <= known.bound[i] * (1.0 + 1e-12));
            let rho: Vec<f64> = conservative.bound.iter().map(|b| fraction * b).collect();
            let r = iteration_map_spectral_radius(&g, &inv, &rho)?;
            return Ok((below && r < 1.0, r, resampled));
        }
    })
}

/// All suites with the default trial counts.
pub fn verify_lemmas(seed: u64, trials: usize) -> Result<Vec<SuiteResult>> {
    Ok(vec![
        perfect_model_suite(seed, trials, 1e-10)?,
        gershgorin_suite(seed ^ 0x9e37_79b9_7f4a_7c15, trials)?,
        scalar_consistency_suite(100, 1e-12)?,
        uncertainty_suite(seed ^ 0xc2b2_ae3d_27d4_eb4f, trials, crate::convergence::DEFAULT_GAIN_FRACTION)?,
    ])
}
