//! Complex-valued Gaussian process regression over `(ω, p₁..p_m)`.
//!
//! Each transfer-matrix entry `G_ij` is an independent zero-mean GP with a
//! real squared-exponential ARD kernel. Output `i` is observed only through
//! `Y_i = Σ_j G_ij·U_j + ε`, which gives the input-weighted covariance
//!
//! ```text
//! k'_i(x_r, x_s) = Σ_j U_jr · k_ij(x_r, x_s) · conj(U_js)
//! ```
//!
//! Predictions with test weights `U_j* = 1` (others zero) recover the
//! individual entries. Variances are single real numbers per prediction,
//! read as circular complex Gaussians.

use nalgebra::{Cholesky, DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optimize::{nelder_mead, NelderMeadOptions};
use crate::par;
use crate::signals::{Spectrum, Window};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Format tag written into model snapshots.
pub const SNAPSHOT_FORMAT: &str = "gpilc-cgpr/1";

/// Squared-exponential ARD hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    pub signal_variance: f64,
    /// `(ℓ_ω, ℓ_p1, ..., ℓ_pm)`
    pub length_scales: Vec<f64>,
    pub noise_variance: f64,
}

impl KernelParams {
    pub fn new(signal_variance: f64, length_scales: Vec<f64>, noise_variance: f64) -> Result<Self> {
        let p = Self { signal_variance, length_scales, noise_variance };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.signal_variance > 0.0 && self.signal_variance.is_finite()) {
            return Err(Error::invalid("signal variance must be positive"));
        }
        if self.length_scales.is_empty()
            || self.length_scales.iter().any(|l| !(*l > 0.0 && l.is_finite()))
        {
            return Err(Error::invalid("length scales must be positive"));
        }
        if !(self.noise_variance >= 0.0 && self.noise_variance.is_finite()) {
            return Err(Error::invalid("noise variance must be nonnegative"));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.length_scales.len()
    }
}

#[inline]
fn se(x1: &[f64], x2: &[f64], p: &KernelParams) -> f64 {
    let r2: f64 = x1
        .iter()
        .zip(x2)
        .zip(&p.length_scales)
        .map(|((a, b), l)| {
            let d = (a - b) / l;
            d * d
        })
        .sum();
    p.signal_variance * (-0.5 * r2).exp()
}

/// `σ_f²·exp(−½ Σ_d ((x1_d − x2_d)/ℓ_d)²)`
pub fn kernel_eval(x1: &[f64], x2: &[f64], params: &KernelParams) -> Result<f64> {
    if x1.len() != params.dim() || x2.len() != params.dim() {
        return Err(Error::invalid(format!(
            "kernel expects {}-dimensional inputs, got {} and {}",
            params.dim(),
            x1.len(),
            x2.len()
        )));
    }
    Ok(se(x1, x2, params))
}

/// One frequency-domain observation: location `[ω, p₁..p_m]`, the input
/// spectra at that bin, and the output spectrum value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingPoint {
    pub location: Vec<f64>,
    pub weights: Vec<Complex64>,
    pub target: Complex64,
}

#[inline]
fn weighted_unchecked(p1: &TrainingPoint, p2: &TrainingPoint, kernels: &[KernelParams]) -> Complex64 {
    kernels
        .iter()
        .enumerate()
        .filter(|(j, _)| p1.weights[*j] != ZERO && p2.weights[*j] != ZERO)
        .map(|(j, k)| p1.weights[j] * se(&p1.location, &p2.location, k) * p2.weights[j].conj())
        .sum()
}

fn check_points(points: &[TrainingPoint], kernels: &[KernelParams]) -> Result<()> {
    if kernels.is_empty() {
        return Err(Error::invalid("need at least one kernel"));
    }
    let dim = kernels[0].dim();
    if kernels.iter().any(|k| k.dim() != dim) {
        return Err(Error::invalid("all kernels must share the input dimension"));
    }
    for p in points {
        if p.weights.len() != kernels.len() {
            return Err(Error::invalid(format!(
                "point carries {} input weights, model has {} inputs",
                p.weights.len(),
                kernels.len()
            )));
        }
        if p.location.len() != dim {
            return Err(Error::invalid("training location has the wrong dimension"));
        }
    }
    Ok(())
}

/// `Σ_j U_jr·k_j(x_r, x_s)·conj(U_js)`
pub fn weighted_kernel_eval(
    p1: &TrainingPoint,
    p2: &TrainingPoint,
    per_input_params: &[KernelParams],
) -> Result<Complex64> {
    check_points(std::slice::from_ref(p1), per_input_params)?;
    check_points(std::slice::from_ref(p2), per_input_params)?;
    Ok(weighted_unchecked(p1, p2, per_input_params))
}

/// Noise-free input-weighted covariance `K' = Σ_j diag(U_j) K_j diag(Ū_j)`.
pub fn build_covariance(points: &[TrainingPoint], per_input_params: &[KernelParams]) -> Result<DMatrix<Complex64>> {
    check_points(points, per_input_params)?;
    let n = points.len();
    let rows = par::map_range(n, |r| {
        (0..=r)
            .map(|s| weighted_unchecked(&points[r], &points[s], per_input_params))
            .collect::<Vec<_>>()
    });
    let mut k = DMatrix::from_element(n, n, ZERO);
    for (r, row) in rows.into_iter().enumerate() {
        for (s, v) in row.into_iter().enumerate() {
            if !(v.re.is_finite() && v.im.is_finite()) {
                return Err(Error::numerical(format!("non-finite covariance entry at ({r}, {s})")));
            }
            k[(r, s)] = v;
            k[(s, r)] = v.conj();
        }
        k[(r, r)].im = 0.0;
    }
    Ok(k)
}

/// How the observation noise enters the output covariance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseModel {
    /// `σ_ε²·I` on the outputs.
    #[default]
    Output,
    /// `σ_ε²·diag(Σ_j |U_j|²)`: noise on the transfer samples, carried
    /// through the input weights.
    InputWeighted,
}

/// Hyperparameters for one output row: one kernel per input plus the
/// output noise variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowParams {
    pub kernels: Vec<KernelParams>,
    pub noise_variance: f64,
}

impl RowParams {
    /// Single-input row using the kernel's own noise variance.
    pub fn single(k: KernelParams) -> Self {
        let noise_variance = k.noise_variance;
        Self { kernels: vec![k], noise_variance }
    }

    pub fn uniform(k: KernelParams, n_inputs: usize) -> Self {
        let noise_variance = k.noise_variance;
        Self { kernels: vec![k; n_inputs], noise_variance }
    }

    fn validate(&self) -> Result<()> {
        for k in &self.kernels {
            k.validate()?;
        }
        if !(self.noise_variance >= 0.0 && self.noise_variance.is_finite()) {
            return Err(Error::invalid("noise variance must be nonnegative"));
        }
        Ok(())
    }
}

fn noisy_covariance(points: &[TrainingPoint], params: &RowParams, noise: NoiseModel) -> Result<DMatrix<Complex64>> {
    let mut k = build_covariance(points, &params.kernels)?;
    for (i, p) in points.iter().enumerate() {
        let scale = match noise {
            NoiseModel::Output => 1.0,
            NoiseModel::InputWeighted => p.weights.iter().map(|w| w.norm_sqr()).sum(),
        };
        k[(i, i)].re += params.noise_variance * scale;
    }
    Ok(k)
}

/// Hermitian factorization with adaptive jitter: try as is, then add
/// `1e-10·trace/n` growing ×10 up to three times.
fn factorize(k: DMatrix<Complex64>) -> Result<(DMatrix<Complex64>, f64)> {
    let n = k.nrows();
    if n == 0 {
        return Ok((k, 0.0));
    }
    if let Some(c) = Cholesky::new(k.clone()) {
        return Ok((c.unpack(), 0.0));
    }
    let trace: f64 = (0..n).map(|i| k[(i, i)].re).sum();
    let mut jitter = 1e-10 * trace.abs().max(f64::MIN_POSITIVE) / n as f64;
    for _ in 0..=3 {
        let mut kj = k.clone();
        for i in 0..n {
            kj[(i, i)].re += jitter;
        }
        if let Some(c) = Cholesky::new(kj) {
            log::debug!("covariance factorized with jitter {jitter:.3e}");
            return Ok((c.unpack(), jitter));
        }
        jitter *= 10.0;
    }
    Err(Error::numerical(format!(
        "covariance not positive definite after jitter; condition number {:.3e}",
        condition_number(&k)
    )))
}

/// Ratio of extreme eigenvalue magnitudes of a Hermitian matrix.
pub fn condition_number(k: &DMatrix<Complex64>) -> f64 {
    let eig = k.clone().symmetric_eigenvalues();
    let max = eig.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let min = eig.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// A trained single-output GP: cached factorization `K_T = L·Lᴴ` and
/// `α = K_T⁻¹·y`.
#[derive(Debug, Clone)]
pub struct GpRow {
    params: RowParams,
    noise: NoiseModel,
    points: Vec<TrainingPoint>,
    l: DMatrix<Complex64>,
    alpha: DVector<Complex64>,
    jitter: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub mean: Vec<Complex64>,
    pub variance: Vec<f64>,
}

impl GpRow {
    pub fn train(points: Vec<TrainingPoint>, params: RowParams, noise: NoiseModel) -> Result<Self> {
        params.validate()?;
        let k = noisy_covariance(&points, &params, noise)?;
        let (l, jitter) = factorize(k)?;
        let y = DVector::from_iterator(points.len(), points.iter().map(|p| p.target));
        let alpha = if points.is_empty() {
            y
        } else {
            let z = l
                .solve_lower_triangular(&y)
                .ok_or_else(|| Error::numerical("singular factor"))?;
            l.ad_solve_lower_triangular(&z)
                .ok_or_else(|| Error::numerical("singular factor"))?
        };
        Ok(Self { params, noise, points, l, alpha, jitter })
    }

    pub fn params(&self) -> &RowParams {
        &self.params
    }

    pub fn points(&self) -> &[TrainingPoint] {
        &self.points
    }

    pub fn noise_model(&self) -> NoiseModel {
        self.noise
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn n_inputs(&self) -> usize {
        self.params.kernels.len()
    }

    /// Complex-Gaussian log marginal likelihood
    /// `−yᴴK⁻¹y − ln det K − n ln π`, from the cached factor.
    pub fn log_marginal_likelihood(&self) -> f64 {
        let n = self.points.len();
        let fit: f64 = self
            .points
            .iter()
            .zip(self.alpha.iter())
            .map(|(p, a)| (p.target.conj() * a).re)
            .sum();
        let logdet: f64 = 2.0 * (0..n).map(|i| self.l[(i, i)].re.ln()).sum::<f64>();
        -fit - logdet - n as f64 * std::f64::consts::PI.ln()
    }

    /// Mean and variance at `locations` for a latent output driven by
    /// `weights[t][j]` on input `j`.
    pub fn predict(&self, locations: &[Vec<f64>], weights: &[Vec<Complex64>]) -> Result<Prediction> {
        if locations.len() != weights.len() {
            return Err(Error::invalid("one weight vector per test location required"));
        }
        let dim = self.params.kernels[0].dim();
        for (loc, w) in locations.iter().zip(weights) {
            if loc.len() != dim {
                return Err(Error::invalid("test location has the wrong dimension"));
            }
            if w.len() != self.n_inputs() {
                return Err(Error::invalid("test weights do not match the number of inputs"));
            }
        }
        const BLOCK: usize = 32;
        let n_blocks = locations.len().div_ceil(BLOCK);
        let blocks = par::map_range(n_blocks, |b| {
            let lo = b * BLOCK;
            let hi = (lo + BLOCK).min(locations.len());
            self.predict_block(&locations[lo..hi], &weights[lo..hi])
        });
        let mut mean = Vec::with_capacity(locations.len());
        let mut variance = Vec::with_capacity(locations.len());
        for (m, v) in blocks {
            mean.extend(m);
            variance.extend(v);
        }
        Ok(Prediction { mean, variance })
    }

    fn predict_block(&self, locs: &[Vec<f64>], weights: &[Vec<Complex64>]) -> (Vec<Complex64>, Vec<f64>) {
        let n = self.points.len();
        let m = locs.len();
        let prior: Vec<f64> = weights
            .iter()
            .map(|w| {
                w.iter()
                    .zip(&self.params.kernels)
                    .map(|(wj, k)| wj.norm_sqr() * k.signal_variance)
                    .sum()
            })
            .collect();
        if n == 0 {
            return (vec![ZERO; m], prior);
        }
        // b[r, t] = k'(x_r, x*_t)
        let mut b = DMatrix::from_element(n, m, ZERO);
        for (t, (loc, w)) in locs.iter().zip(weights).enumerate() {
            for (r, p) in self.points.iter().enumerate() {
                let mut acc = ZERO;
                for (j, k) in self.params.kernels.iter().enumerate() {
                    if w[j] != ZERO && p.weights[j] != ZERO {
                        acc += p.weights[j] * se(&p.location, loc, k) * w[j].conj();
                    }
                }
                b[(r, t)] = acc;
            }
        }
        let mean: Vec<Complex64> = (0..m)
            .map(|t| b.column(t).iter().zip(self.alpha.iter()).map(|(bk, a)| bk.conj() * a).sum())
            .collect();
        self.l.solve_lower_triangular_mut(&mut b);
        let variance = (0..m)
            .map(|t| {
                let explained: f64 = b.column(t).iter().map(|v| v.norm_sqr()).sum();
                (prior[t] - explained).max(0.0)
            })
            .collect();
        (mean, variance)
    }
}

/// Log marginal likelihood for given data and hyperparameters.
pub fn log_marginal_likelihood(points: &[TrainingPoint], params: &RowParams, noise: NoiseModel) -> Result<f64> {
    Ok(GpRow::train(points.to_vec(), params.clone(), noise)?.log_marginal_likelihood())
}

/// Per-parameter search intervals (all strictly positive).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperBounds {
    pub signal_variance: (f64, f64),
    pub length_scales: Vec<(f64, f64)>,
    pub noise_variance: (f64, f64),
}

impl HyperBounds {
    fn validate(&self, dim: usize) -> Result<()> {
        let ok = |(lo, hi): (f64, f64)| lo > 0.0 && hi >= lo && hi.is_finite();
        if !ok(self.signal_variance) || !ok(self.noise_variance) || !self.length_scales.iter().all(|b| ok(*b)) {
            return Err(Error::invalid("hyperparameter bounds must be finite and positive"));
        }
        if self.length_scales.len() != dim {
            return Err(Error::invalid("length-scale bounds do not match the input dimension"));
        }
        Ok(())
    }
}

/// Whether kernels within an output row share hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HyperSharing {
    #[default]
    PerEntry,
    PerOutput,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitOptions {
    pub starts: usize,
    pub max_evals_per_start: usize,
    pub seed: u64,
    /// Fitting uses a deterministic stride subsample of at most this many points.
    pub max_points: usize,
    pub sharing: HyperSharing,
    pub noise: NoiseModel,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            starts: 4,
            max_evals_per_start: 150,
            seed: 0,
            max_points: 150,
            sharing: HyperSharing::PerEntry,
            noise: NoiseModel::Output,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    pub params: RowParams,
    pub log_likelihood: f64,
    pub initial_log_likelihood: f64,
    /// False when no start improved on `init`; `params` is then `init`.
    pub improved: bool,
}

struct Encoding {
    n_inputs: usize,
    dim: usize,
    sharing: HyperSharing,
}

impl Encoding {
    fn n_kernels(&self) -> usize {
        match self.sharing {
            HyperSharing::PerEntry => self.n_inputs,
            HyperSharing::PerOutput => 1,
        }
    }

    fn len(&self) -> usize {
        self.n_kernels() * (1 + self.dim) + 1
    }

    fn bounds(&self, b: &HyperBounds) -> Vec<(f64, f64)> {
        let log = |(lo, hi): (f64, f64)| (f64::ln(lo), f64::ln(hi));
        let mut out = Vec::with_capacity(self.len());
        for _ in 0..self.n_kernels() {
            out.push(log(b.signal_variance));
            out.extend(b.length_scales.iter().map(|&x| log(x)));
        }
        out.push(log(b.noise_variance));
        out
    }

    fn encode(&self, p: &RowParams) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len());
        for k in p.kernels.iter().take(self.n_kernels()) {
            out.push(k.signal_variance.ln());
            out.extend(k.length_scales.iter().map(|l| l.ln()));
        }
        out.push(p.noise_variance.ln());
        out
    }

    fn decode(&self, x: &[f64]) -> RowParams {
        let noise_variance = x[x.len() - 1].exp();
        let kernels: Vec<KernelParams> = x[..x.len() - 1]
            .chunks(1 + self.dim)
            .map(|c| KernelParams {
                signal_variance: c[0].exp(),
                length_scales: c[1..].iter().map(|v| v.exp()).collect(),
                noise_variance,
            })
            .collect();
        let kernels = match self.sharing {
            HyperSharing::PerEntry => kernels,
            HyperSharing::PerOutput => vec![kernels[0].clone(); self.n_inputs],
        };
        RowParams { kernels, noise_variance }
    }
}

fn stride_subsample(points: &[TrainingPoint], max_points: usize) -> Vec<TrainingPoint> {
    if points.len() <= max_points || max_points == 0 {
        return points.to_vec();
    }
    (0..max_points)
        .map(|i| points[i * points.len() / max_points].clone())
        .collect()
}

/// Maximizes the marginal likelihood of one output row by multi-start
/// Nelder–Mead in log-parameter space. The first start is `init`; the others
/// are drawn uniformly (in log space) inside `bounds` from `options.seed`.
pub fn fit_row_hyperparameters(
    points: &[TrainingPoint],
    init: &RowParams,
    bounds: &HyperBounds,
    options: &FitOptions,
) -> Result<FitReport> {
    if points.len() < 2 {
        return Err(Error::invalid("hyperparameter fitting needs at least two points"));
    }
    init.validate()?;
    let dim = init.kernels[0].dim();
    bounds.validate(dim)?;
    check_points(points, &init.kernels)?;
    let data = stride_subsample(points, options.max_points);
    let enc = Encoding { n_inputs: init.kernels.len(), dim, sharing: options.sharing };
    let box_ = enc.bounds(bounds);
    let objective = |x: &[f64]| -> f64 {
        match GpRow::train(data.clone(), enc.decode(x), options.noise) {
            Ok(gp) => -gp.log_marginal_likelihood(),
            Err(_) => f64::INFINITY,
        }
    };
    let initial_log_likelihood = GpRow::train(data.clone(), init.clone(), options.noise)
        .map(|gp| gp.log_marginal_likelihood())
        .unwrap_or(f64::NEG_INFINITY);

    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let mut starts = vec![enc.encode(init)];
    for _ in 1..options.starts.max(1) {
        starts.push(box_.iter().map(|&(lo, hi)| rng.random_range(lo..=hi)).collect());
    }
    let nm = NelderMeadOptions { max_evals: options.max_evals_per_start, initial_step: 0.7, f_tolerance: 1e-9 };
    let results = par::map_slice(&starts, |x0| nelder_mead(objective, x0, &box_, &nm));
    let best = results
        .into_iter()
        .min_by(|a, b| a.value.total_cmp(&b.value))
        .expect("at least one start");
    let best_ll = -best.value;
    if best_ll.is_finite() && best_ll >= initial_log_likelihood {
        Ok(FitReport {
            params: enc.decode(&best.x),
            log_likelihood: best_ll,
            initial_log_likelihood,
            improved: best_ll > initial_log_likelihood,
        })
    } else {
        log::warn!("hyperparameter search did not improve on the initial values");
        Ok(FitReport {
            params: init.clone(),
            log_likelihood: initial_log_likelihood,
            initial_log_likelihood,
            improved: false,
        })
    }
}

/// Single-kernel convenience wrapper around [`fit_row_hyperparameters`].
pub fn fit_hyperparameters(
    points: &[TrainingPoint],
    init: &KernelParams,
    bounds: &HyperBounds,
    options: &FitOptions,
) -> Result<(KernelParams, FitReport)> {
    let report = fit_row_hyperparameters(points, &RowParams::single(init.clone()), bounds, options)?;
    let mut k = report.params.kernels[0].clone();
    k.noise_variance = report.params.noise_variance;
    Ok((k, report))
}

/// One training point per kept bin: location `[ω_k, window params]`, the
/// input spectra as weights and the output spectrum as target.
pub fn samples_from_spectra(u: &[Spectrum], y: &Spectrum, window: &Window, kept: &[usize]) -> Vec<TrainingPoint> {
    kept.iter()
        .map(|&k| {
            let mut location = Vec::with_capacity(1 + window.representative_params.len());
            location.push(y.frequencies()[k]);
            location.extend_from_slice(&window.representative_params);
            TrainingPoint {
                location,
                weights: u.iter().map(|s| s.values()[k]).collect(),
                target: y.values()[k],
            }
        })
        .collect()
}

/// Transfer-matrix estimate on a frequency grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelEstimate {
    pub frequencies: Vec<f64>,
    /// `mean[f]` is the `n_outputs × n_inputs` matrix at `frequencies[f]`.
    pub mean: Vec<DMatrix<Complex64>>,
    pub variance: Vec<DMatrix<f64>>,
}

impl ModelEstimate {
    pub fn n_outputs(&self) -> usize {
        self.mean.first().map_or(0, |m| m.nrows())
    }

    pub fn n_inputs(&self) -> usize {
        self.mean.first().map_or(0, |m| m.ncols())
    }
}

/// Settings shared by every row of a [`CgprModel`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CgprSettings {
    pub n_inputs: usize,
    pub n_outputs: usize,
    pub init: KernelParams,
    pub bounds: HyperBounds,
    pub fit: FitOptions,
}

impl CgprSettings {
    /// Defaults scaled for joint-angle parameters (rad) and frequencies in rad/s.
    pub fn for_plant(n_inputs: usize, n_outputs: usize, n_params: usize) -> Self {
        let mut length_scales = vec![10.0];
        length_scales.extend(std::iter::repeat_n(0.6, n_params));
        let mut ls_bounds = vec![(0.5, 300.0)];
        ls_bounds.extend(std::iter::repeat_n((0.1, 20.0), n_params));
        Self {
            n_inputs,
            n_outputs,
            init: KernelParams { signal_variance: 1.0, length_scales, noise_variance: 1e-4 },
            bounds: HyperBounds {
                signal_variance: (1e-4, 1e2),
                length_scales: ls_bounds,
                noise_variance: (1e-8, 1.0),
            },
            fit: FitOptions::default(),
        }
    }

    fn dim(&self) -> usize {
        self.init.dim()
    }
}

/// Multi-output transfer-matrix model: one input-weighted GP per output row.
#[derive(Debug, Clone)]
pub struct CgprModel {
    settings: CgprSettings,
    points: Vec<Vec<TrainingPoint>>,
    params: Vec<RowParams>,
    rows: Option<Vec<GpRow>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelSnapshot {
    pub format: String,
    pub settings: CgprSettings,
    pub params: Vec<RowParams>,
    pub points: Vec<Vec<TrainingPoint>>,
}

impl CgprModel {
    pub fn new(settings: CgprSettings) -> Result<Self> {
        settings.init.validate()?;
        settings.bounds.validate(settings.dim())?;
        if settings.n_inputs == 0 || settings.n_outputs == 0 {
            return Err(Error::invalid("model needs at least one input and one output"));
        }
        let params = vec![RowParams::uniform(settings.init.clone(), settings.n_inputs); settings.n_outputs];
        Ok(Self { points: vec![Vec::new(); settings.n_outputs], params, rows: None, settings })
    }

    pub fn settings(&self) -> &CgprSettings {
        &self.settings
    }

    pub fn params(&self) -> &[RowParams] {
        &self.params
    }

    pub fn set_params(&mut self, output: usize, params: RowParams) -> Result<()> {
        params.validate()?;
        if params.kernels.len() != self.settings.n_inputs {
            return Err(Error::invalid("row params must have one kernel per input"));
        }
        self.params[output] = params;
        self.rows = None;
        Ok(())
    }

    pub fn points(&self, output: usize) -> &[TrainingPoint] {
        &self.points[output]
    }

    pub fn training_len(&self) -> usize {
        self.points.iter().map(Vec::len).sum()
    }

    pub fn add_points(&mut self, output: usize, pts: impl IntoIterator<Item = TrainingPoint>) -> Result<()> {
        if output >= self.settings.n_outputs {
            return Err(Error::invalid("output index out of range"));
        }
        let start = self.points[output].len();
        self.points[output].extend(pts);
        check_points(&self.points[output][start..], &self.params[output].kernels)?;
        self.rows = None;
        Ok(())
    }

    /// Replaces the training set of one output.
    pub fn replace_points(&mut self, output: usize, pts: Vec<TrainingPoint>) -> Result<()> {
        check_points(&pts, &self.params[output].kernels)?;
        self.points[output] = pts;
        self.rows = None;
        Ok(())
    }

    /// Refits every row whose training set has at least two points.
    pub fn fit_hyperparameters(&mut self) -> Result<Vec<Option<FitReport>>> {
        let mut reports = Vec::with_capacity(self.settings.n_outputs);
        for i in 0..self.settings.n_outputs {
            if self.points[i].len() < 2 {
                reports.push(None);
                continue;
            }
            let mut opts = self.settings.fit.clone();
            opts.seed = opts.seed.wrapping_add(i as u64);
            let rep = fit_row_hyperparameters(&self.points[i], &self.params[i], &self.settings.bounds, &opts)?;
            self.params[i] = rep.params.clone();
            reports.push(Some(rep));
        }
        self.rows = None;
        Ok(reports)
    }

    pub fn train(&mut self) -> Result<()> {
        let rows = (0..self.settings.n_outputs)
            .map(|i| GpRow::train(self.points[i].clone(), self.params[i].clone(), self.settings.fit.noise))
            .collect::<Result<Vec<_>>>()?;
        self.rows = Some(rows);
        Ok(())
    }

    pub fn is_trained(&self) -> bool {
        self.rows.is_some()
    }

    pub fn rows(&self) -> Result<&[GpRow]> {
        self.rows.as_deref().ok_or_else(|| Error::State("model has not been trained".into()))
    }

    /// Predicts entry `(output, input)` at `locations` with unit test weight
    /// on `input` and zero on the others.
    pub fn predict_entry(&self, output: usize, input: usize, locations: &[Vec<f64>]) -> Result<Prediction> {
        let rows = self.rows()?;
        let mut w = vec![ZERO; self.settings.n_inputs];
        w[input] = Complex64::new(1.0, 0.0);
        rows[output].predict(locations, &vec![w; locations.len()])
    }

    /// Transfer-matrix estimate at every frequency in `freqs` for the
    /// parameter vector `params`.
    pub fn estimate(&self, params: &[f64], freqs: &[f64]) -> Result<ModelEstimate> {
        if params.len() + 1 != self.settings.dim() {
            return Err(Error::invalid("parameter vector has the wrong dimension"));
        }
        let locations: Vec<Vec<f64>> = freqs
            .iter()
            .map(|&w| std::iter::once(w).chain(params.iter().copied()).collect())
            .collect();
        let (no, ni) = (self.settings.n_outputs, self.settings.n_inputs);
        let mut mean = vec![DMatrix::from_element(no, ni, ZERO); freqs.len()];
        let mut variance = vec![DMatrix::zeros(no, ni); freqs.len()];
        for i in 0..no {
            for j in 0..ni {
                let p = self.predict_entry(i, j, &locations)?;
                for f in 0..freqs.len() {
                    mean[f][(i, j)] = p.mean[f];
                    variance[f][(i, j)] = p.variance[f];
                }
            }
        }
        Ok(ModelEstimate { frequencies: freqs.to_vec(), mean, variance })
    }

    pub fn snapshot(&self) -> ModelSnapshot {
        ModelSnapshot {
            format: SNAPSHOT_FORMAT.to_string(),
            settings: self.settings.clone(),
            params: self.params.clone(),
            points: self.points.clone(),
        }
    }

    /// Rebuilds a model from a snapshot and refactorizes it.
    pub fn from_snapshot(s: ModelSnapshot) -> Result<Self> {
        if s.format != SNAPSHOT_FORMAT {
            return Err(Error::invalid(format!("unsupported model format `{}`", s.format)));
        }
        let mut m = Self::new(s.settings)?;
        if s.params.len() != m.settings.n_outputs || s.points.len() != m.settings.n_outputs {
            return Err(Error::invalid("snapshot row count does not match its settings"));
        }
        for (i, (p, pts)) in s.params.into_iter().zip(s.points).enumerate() {
            m.set_params(i, p)?;
            m.replace_points(i, pts)?;
        }
        m.train()?;
        Ok(m)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.snapshot())?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Self::from_snapshot(serde_json::from_str(s)?)
    }
}
