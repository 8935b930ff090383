//! The learning loop: windowed training data from each run, local models per
//! quantized parameter combination, gain selection and the frequency-domain
//! input update `u_k = u_{k−1} + F⁻¹(ρ Ĝ⁻¹ F(e_{k−1}))`, applied region by
//! region.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::cgpr::{samples_from_spectra, CgprModel, CgprSettings, ModelEstimate, RowParams, TrainingPoint};
use crate::convergence::{checked_inverse, uncertainty_gain_with_inverse, variance_to_bounds, GainResult};
use crate::error::{Error, Result};
use crate::par;
use crate::plant::{Plant, PlantFault};
use crate::signals::{
    differenced_segment_spectrum, dft_grid, extract_windows, forward_transform, inverse_half_spectrum,
    threshold_magnitudes, Spectrum, TimeSeries,
};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// How the per-frequency iteration gain is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GainPolicy {
    /// Worst case over the model's `sigma_multiple·σ` error box, times
    /// `gain_fraction`.
    #[default]
    BoundedUncertainty,
    /// The same gain on every channel and frequency below the cutoff.
    Constant(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LearningConfig {
    /// rad
    pub param_quantum: f64,
    pub window_seconds: f64,
    pub threshold_fraction: f64,
    pub gain_fraction: f64,
    pub sigma_multiple: f64,
    /// Tracking iterations after the initial run.
    pub max_iterations: usize,
    /// rad/s; `None` means a quarter of the Nyquist frequency.
    pub frequency_cutoff: Option<f64>,
    pub gain_policy: GainPolicy,
    /// Stop after this many consecutive iterations improving the max error
    /// by less than `stall_tolerance`; 0 disables.
    pub stall_iterations: usize,
    /// rad
    pub stall_tolerance: f64,
    /// Max error (rad) at or below which the loop stops as converged.
    pub converged_tolerance: f64,
    /// Training points kept per output row; seed data is never dropped.
    pub max_training_points: usize,
    /// Refit hyperparameters after every iteration up to this index, then
    /// keep them; `None` refits every time.
    pub refit_until: Option<usize>,
    /// Width (s) of the Hann window that smooths region masks; 0 applies
    /// each region's correction with a hard mask.
    pub blend_seconds: f64,
    /// Compute corrections on the even extension of the error (twice the
    /// horizon), which behaves like a plant holding still before and after
    /// the run instead of wrapping the end onto the start.
    pub mirror: bool,
}

impl Default for LearningConfig {
    fn default() -> Self {
        Self {
            param_quantum: std::f64::consts::PI / 10.0,
            window_seconds: 2.0,
            threshold_fraction: 0.5,
            gain_fraction: 0.6,
            sigma_multiple: 2.0,
            max_iterations: 20,
            frequency_cutoff: None,
            gain_policy: GainPolicy::BoundedUncertainty,
            stall_iterations: 3,
            stall_tolerance: 1e-4,
            converged_tolerance: 1e-6,
            max_training_points: 500,
            refit_until: None,
            blend_seconds: 1.0,
            mirror: true,
        }
    }
}

impl LearningConfig {
    pub fn validate(&self) -> Result<()> {
        let ratio = |v: f64| v > 0.0 && v <= 1.0;
        if !ratio(self.threshold_fraction) || !ratio(self.gain_fraction) {
            return Err(Error::Config("threshold and gain fractions must lie in (0, 1]".into()));
        }
        if !(self.param_quantum > 0.0) || !(self.window_seconds > 0.0) || !(self.sigma_multiple > 0.0) {
            return Err(Error::Config("quantum, window and sigma multiple must be positive".into()));
        }
        if let Some(c) = self.frequency_cutoff {
            if !(c > 0.0) {
                return Err(Error::Config("frequency cutoff must be positive".into()));
            }
        }
        if let GainPolicy::Constant(r) = self.gain_policy {
            if !(r > 0.0 && r.is_finite()) {
                return Err(Error::Config("constant gain must be positive".into()));
            }
        }
        if !(self.blend_seconds >= 0.0 && self.blend_seconds.is_finite()) {
            return Err(Error::Config("blend width must be nonnegative".into()));
        }
        if !(self.stall_tolerance >= 0.0) || !(self.converged_tolerance >= 0.0) {
            return Err(Error::Config("tolerances must be nonnegative".into()));
        }
        if self.max_training_points < 2 {
            return Err(Error::Config("need room for at least two training points".into()));
        }
        Ok(())
    }

    pub fn cutoff(&self, sample_rate: f64) -> f64 {
        self.frequency_cutoff.unwrap_or(std::f64::consts::PI * sample_rate / 4.0)
    }
}

/// Rounds to the nearest multiple of `quantum`, ties away from zero.
pub fn quantize(value: f64, quantum: f64) -> f64 {
    (value / quantum).round() * quantum
}

pub fn quantize_params(channels: &[Vec<f64>], quantum: f64) -> Result<Vec<Vec<f64>>> {
    if !(quantum > 0.0) {
        return Err(Error::invalid("quantum must be positive"));
    }
    Ok(channels.iter().map(|c| c.iter().map(|&v| quantize(v, quantum)).collect()).collect())
}

/// Training points for every output row from one run. `params` are the
/// quantized parameter channels that define the windows. A bin is kept for
/// row `i` when both the input energy `√Σ|U_j|²` and `|Y_i|` reach the
/// threshold fraction of their peaks within the window.
pub fn build_training_update(
    u: &TimeSeries,
    y: &TimeSeries,
    params: &[Vec<f64>],
    config: &LearningConfig,
) -> Result<Vec<Vec<TrainingPoint>>> {
    if u.len() != y.len() || (u.sample_rate() - y.sample_rate()).abs() > 0.0 {
        return Err(Error::invalid("input and output must be aligned"));
    }
    let fs = u.sample_rate();
    let windows = extract_windows(u.len(), params, fs, config.window_seconds)?;
    let mut rows = vec![Vec::new(); y.n_channels()];
    for w in &windows {
        let us = u
            .channels()
            .iter()
            .map(|c| differenced_segment_spectrum(c, w, fs))
            .collect::<Result<Vec<_>>>()?;
        let u_mag: Vec<f64> = (0..us[0].len())
            .map(|k| us.iter().map(|s| s.values()[k].norm_sqr()).sum::<f64>().sqrt())
            .collect();
        for (i, row) in rows.iter_mut().enumerate() {
            let ys = differenced_segment_spectrum(y.channel(i), w, fs)?;
            let kept = threshold_magnitudes(&u_mag, &ys.magnitudes(), config.threshold_fraction);
            row.extend(samples_from_spectra(&us, &ys, w, &kept));
        }
    }
    Ok(rows)
}

/// Something that turns run data into transfer-matrix estimates.
pub trait Learner {
    fn n_channels(&self) -> usize;
    /// Data from the seeding run; kept for the whole experiment.
    fn add_seed(&mut self, points: Vec<Vec<TrainingPoint>>) -> Result<()>;
    fn add_iteration(&mut self, points: Vec<Vec<TrainingPoint>>) -> Result<()>;
    /// Rebuilds the model after new data, refitting hyperparameters if asked.
    fn refresh(&mut self, refit: bool) -> Result<()>;
    fn estimate(&self, params: &[f64], freqs: &[f64]) -> Result<ModelEstimate>;
    fn training_len(&self) -> usize;
    /// Highest frequency (rad/s) covered by training data in every row;
    /// `None` when the model is valid at all frequencies.
    fn trained_band(&self) -> Option<f64> {
        None
    }
    fn hyperparameters(&self) -> Option<Vec<RowParams>> {
        None
    }
    fn snapshot_json(&self) -> Result<Option<String>> {
        Ok(None)
    }
}

/// cGPR-backed learner with a bounded training set: all seed points plus
/// the newest iteration points up to `max_points` per row.
#[derive(Debug, Clone)]
pub struct GpLearner {
    model: CgprModel,
    seed: Vec<Vec<TrainingPoint>>,
    history: Vec<Vec<TrainingPoint>>,
    max_points: usize,
}

impl GpLearner {
    pub fn new(settings: CgprSettings, max_points: usize) -> Result<Self> {
        if settings.n_inputs != settings.n_outputs {
            return Err(Error::invalid("learning needs a square plant"));
        }
        let n = settings.n_outputs;
        Ok(Self { model: CgprModel::new(settings)?, seed: vec![Vec::new(); n], history: vec![Vec::new(); n], max_points })
    }

    pub fn model(&self) -> &CgprModel {
        &self.model
    }

    fn check(&self, points: &[Vec<TrainingPoint>]) -> Result<()> {
        if points.len() != self.seed.len() {
            return Err(Error::invalid("one point list per output row expected"));
        }
        Ok(())
    }

    fn sync(&mut self) -> Result<()> {
        for i in 0..self.seed.len() {
            let room = self.max_points.saturating_sub(self.seed[i].len());
            let h = &self.history[i];
            let mut pts = self.seed[i].clone();
            pts.extend_from_slice(&h[h.len().saturating_sub(room)..]);
            self.model.replace_points(i, pts)?;
        }
        Ok(())
    }
}

impl Learner for GpLearner {
    fn n_channels(&self) -> usize {
        self.seed.len()
    }

    fn add_seed(&mut self, points: Vec<Vec<TrainingPoint>>) -> Result<()> {
        self.check(&points)?;
        for (s, p) in self.seed.iter_mut().zip(points) {
            s.extend(p);
        }
        self.sync()
    }

    fn add_iteration(&mut self, points: Vec<Vec<TrainingPoint>>) -> Result<()> {
        self.check(&points)?;
        for (h, p) in self.history.iter_mut().zip(points) {
            h.extend(p);
        }
        self.sync()
    }

    fn refresh(&mut self, refit: bool) -> Result<()> {
        if refit {
            for (i, rep) in self.model.fit_hyperparameters()?.iter().enumerate() {
                if let Some(r) = rep {
                    log::debug!("row {i}: log likelihood {:.3} -> {:.3}", r.initial_log_likelihood, r.log_likelihood);
                }
            }
        }
        self.model.train()
    }

    fn estimate(&self, params: &[f64], freqs: &[f64]) -> Result<ModelEstimate> {
        self.model.estimate(params, freqs)
    }

    fn training_len(&self) -> usize {
        self.model.training_len()
    }

    fn trained_band(&self) -> Option<f64> {
        (0..self.seed.len())
            .map(|i| self.model.points(i).iter().map(|p| p.location[0]).fold(0.0, f64::max))
            .reduce(f64::min)
    }

    fn hyperparameters(&self) -> Option<Vec<RowParams>> {
        Some(self.model.params().to_vec())
    }

    fn snapshot_json(&self) -> Result<Option<String>> {
        self.model.to_json().map(Some)
    }
}

type ResponseFn = Box<dyn Fn(&[f64], &[f64]) -> Vec<DMatrix<Complex64>> + Send + Sync>;
type VarianceFn = Box<dyn Fn(&[f64], &[f64]) -> Vec<DMatrix<f64>> + Send + Sync>;

/// A fixed model that ignores training data. Useful against analytic plants.
pub struct KnownModel {
    n: usize,
    response: ResponseFn,
    variance: Option<VarianceFn>,
    seen: usize,
}

impl KnownModel {
    /// `response(params, freqs)` gives one `n × n` matrix per frequency.
    pub fn new(n: usize, response: impl Fn(&[f64], &[f64]) -> Vec<DMatrix<Complex64>> + Send + Sync + 'static) -> Self {
        Self { n, response: Box::new(response), variance: None, seen: 0 }
    }

    /// Reported variance; zero when not set.
    pub fn with_variance(mut self, variance: impl Fn(&[f64], &[f64]) -> Vec<DMatrix<f64>> + Send + Sync + 'static) -> Self {
        self.variance = Some(Box::new(variance));
        self
    }
}

impl std::fmt::Debug for KnownModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("KnownModel").field("n", &self.n).finish_non_exhaustive()
    }
}

impl Learner for KnownModel {
    fn n_channels(&self) -> usize {
        self.n
    }

    fn add_seed(&mut self, points: Vec<Vec<TrainingPoint>>) -> Result<()> {
        self.seen += points.iter().map(Vec::len).sum::<usize>();
        Ok(())
    }

    fn add_iteration(&mut self, points: Vec<Vec<TrainingPoint>>) -> Result<()> {
        self.add_seed(points)
    }

    fn refresh(&mut self, _refit: bool) -> Result<()> {
        Ok(())
    }

    fn estimate(&self, params: &[f64], freqs: &[f64]) -> Result<ModelEstimate> {
        let mean = (self.response)(params, freqs);
        let variance = match &self.variance {
            Some(v) => v(params, freqs),
            None => vec![DMatrix::zeros(self.n, self.n); freqs.len()],
        };
        if mean.len() != freqs.len() || variance.len() != freqs.len() {
            return Err(Error::invalid("known model returned the wrong number of frequencies"));
        }
        Ok(ModelEstimate { frequencies: freqs.to_vec(), mean, variance })
    }

    fn training_len(&self) -> usize {
        self.seen
    }
}

/// Transfer-matrix estimate for one parameter combination.
pub fn local_model(learner: &dyn Learner, params: &[f64], freqs: &[f64]) -> Result<ModelEstimate> {
    learner.estimate(params, freqs)
}

/// Inverse estimate and gains at one frequency; singular estimates are
/// infeasible.
fn gains_at(
    g: &DMatrix<Complex64>,
    variance: &DMatrix<f64>,
    config: &LearningConfig,
) -> Result<(Option<DMatrix<Complex64>>, GainResult)> {
    let n = g.nrows();
    let inv = match checked_inverse(g) {
        Ok((inv, _)) => inv,
        Err(Error::Numerical(_)) => return Ok((None, GainResult::infeasible(n))),
        Err(e) => return Err(e),
    };
    let gains = match config.gain_policy {
        GainPolicy::Constant(r) => GainResult { rho: vec![r; n], feasible: vec![true; n], bound: vec![f64::INFINITY; n] },
        GainPolicy::BoundedUncertainty => {
            let est = ModelEstimate { frequencies: vec![0.0], mean: vec![g.clone()], variance: vec![variance.clone()] };
            let b = variance_to_bounds(&est, config.sigma_multiple)?;
            uncertainty_gain_with_inverse(g, &inv, &b[0], config.gain_fraction)
        }
    };
    Ok((Some(inv), gains))
}

/// Gains for every frequency of an estimate.
pub fn frequency_gains(estimate: &ModelEstimate, config: &LearningConfig) -> Result<Vec<GainResult>> {
    par::map_range(estimate.frequencies.len(), |f| {
        gains_at(&estimate.mean[f], &estimate.variance[f], config).map(|(_, g)| g)
    })
    .into_iter()
    .collect()
}

/// Correction spectra `ρ Ĝ⁻¹ E` on the one-sided grid of `errors`, one per
/// input channel. Bins above `cutoff`, and channels with `ρ = 0`, get an
/// exact zero.
pub fn correction_spectrum(
    errors: &[Spectrum],
    estimate: &ModelEstimate,
    cutoff: f64,
    config: &LearningConfig,
) -> Result<(Vec<Vec<Complex64>>, Vec<GainResult>)> {
    let n = errors.len();
    let bins = errors[0].len();
    let active = errors[0].frequencies().iter().take_while(|w| **w <= cutoff).count();
    if estimate.frequencies.len() < active || estimate.n_inputs() != n || estimate.n_outputs() != n {
        return Err(Error::invalid("estimate does not cover the error spectrum"));
    }
    let per_bin = par::map_range(active, |f| -> Result<(Vec<Complex64>, GainResult)> {
        let (inv, gains) = gains_at(&estimate.mean[f], &estimate.variance[f], config)?;
        let mut c = vec![ZERO; n];
        if let Some(inv) = inv {
            for i in 0..n {
                if gains.rho[i] == 0.0 {
                    continue;
                }
                let s: Complex64 = (0..n).map(|k| inv[(i, k)] * errors[k].values()[f]).sum();
                c[i] = s * gains.rho[i];
            }
        }
        Ok((c, gains))
    });
    let mut out = vec![vec![ZERO; bins]; n];
    let mut all_gains = Vec::with_capacity(active);
    for (f, r) in per_bin.into_iter().enumerate() {
        let (c, g) = r?;
        for i in 0..n {
            out[i][f] = c[i];
        }
        all_gains.push(g);
    }
    Ok((out, all_gains))
}

/// Gain statistics of one update.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GainSummary {
    /// Fraction of (region, bin, channel) triples below the cutoff with a
    /// feasible gain.
    pub feasible_fraction: f64,
    pub feasible_count: usize,
    pub total_count: usize,
    pub mean_rho: f64,
    pub regions: usize,
}

/// Distinct parameter combinations of `params` in order of first
/// appearance, with the sample indices where each holds.
pub fn parameter_regions(params: &[Vec<f64>]) -> Vec<(Vec<f64>, Vec<usize>)> {
    let n = params.first().map_or(0, Vec::len);
    let mut order: Vec<Vec<f64>> = Vec::new();
    let mut index: BTreeMap<Vec<u64>, usize> = BTreeMap::new();
    let mut members: Vec<Vec<usize>> = Vec::new();
    for t in 0..n {
        let p: Vec<f64> = params.iter().map(|c| c[t]).collect();
        let key: Vec<u64> = p.iter().map(|v| (v + 0.0).to_bits()).collect();
        let slot = *index.entry(key).or_insert_with(|| {
            order.push(p);
            members.push(Vec::new());
            order.len() - 1
        });
        members[slot].push(t);
    }
    order.into_iter().zip(members).collect()
}

/// Per-region weights over the horizon. With `blend_len ≤ 1` these are the
/// region indicators; otherwise each indicator is smoothed by a Hann window
/// of that many samples and the set renormalized to sum to one, so
/// neighbouring corrections cross-fade instead of jumping.
pub fn region_masks(regions: &[(Vec<f64>, Vec<usize>)], n: usize, blend_len: usize) -> Vec<Vec<f64>> {
    let mut masks: Vec<Vec<f64>> = regions
        .iter()
        .map(|(_, members)| {
            let mut m = vec![0.0; n];
            for &t in members {
                m[t] = 1.0;
            }
            m
        })
        .collect();
    if blend_len <= 1 || masks.len() < 2 {
        return masks;
    }
    let half = blend_len / 2;
    let kernel: Vec<f64> = (0..=2 * half)
        .map(|i| (std::f64::consts::PI * (i + 1) as f64 / (2 * half + 2) as f64).sin().powi(2))
        .collect();
    masks = par::map_slice(&masks, |m| {
        (0..n)
            .map(|t| {
                let lo = t.saturating_sub(half);
                let hi = (t + half).min(n - 1);
                (lo..=hi).map(|s| m[s] * kernel[s + half - t]).sum()
            })
            .collect()
    });
    for t in 0..n {
        let total: f64 = masks.iter().map(|m| m[t]).sum();
        for m in masks.iter_mut() {
            m[t] /= total;
        }
    }
    masks
}

/// One update: the correction computed with each region's local model is
/// transformed over the whole horizon and applied at that region's samples
/// (cross-faded over `blend_seconds`). Frequencies above the learner's trained band get no correction,
/// since a GP extrapolating in frequency is overconfident near unseen
/// resonances. Zero error returns `u_prev` unchanged.
pub fn update_input(
    u_prev: &TimeSeries,
    e_prev: &TimeSeries,
    regions: &[Vec<f64>],
    learner: &dyn Learner,
    config: &LearningConfig,
) -> Result<(TimeSeries, GainSummary)> {
    let n = u_prev.len();
    let fs = u_prev.sample_rate();
    let ch = learner.n_channels();
    if e_prev.len() != n || u_prev.n_channels() < ch || e_prev.n_channels() < ch {
        return Err(Error::invalid("input and error must be aligned"));
    }
    let m = if config.mirror { 2 * n } else { n };
    let errors = (0..ch)
        .map(|i| {
            let e = e_prev.channel(i);
            if config.mirror {
                let ext: Vec<f64> = e.iter().chain(e.iter().rev()).copied().collect();
                forward_transform(&ext, fs)
            } else {
                forward_transform(e, fs)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let cutoff = match learner.trained_band() {
        Some(b) => config.cutoff(fs).min(b),
        None => config.cutoff(fs),
    };
    let grid: Vec<f64> = dft_grid(m, fs).into_iter().take_while(|w| *w <= cutoff).collect();
    let mut next: Vec<Vec<f64>> = (0..ch).map(|i| u_prev.channel(i).to_vec()).collect();
    let mut summary = GainSummary::default();
    let mut rho_sum = 0.0;
    let regions = parameter_regions(regions);
    summary.regions = regions.len();
    let masks = region_masks(&regions, n, (config.blend_seconds * fs).round() as usize);
    for ((params, _), mask) in regions.iter().zip(&masks) {
        let estimate = local_model(learner, params, &grid)?;
        let (spec, gains) = correction_spectrum(&errors, &estimate, cutoff, config)?;
        for g in &gains {
            summary.total_count += g.rho.len();
            summary.feasible_count += g.feasible.iter().filter(|f| **f).count();
            rho_sum += g.rho.iter().sum::<f64>();
        }
        for (i, s) in spec.iter().enumerate() {
            if s.iter().all(|v| *v == ZERO) {
                continue;
            }
            let corr = inverse_half_spectrum(s, m);
            for t in 0..n {
                if mask[t] != 0.0 {
                    next[i][t] += mask[t] * corr[t];
                }
            }
        }
    }
    if summary.total_count > 0 {
        summary.feasible_fraction = summary.feasible_count as f64 / summary.total_count as f64;
        summary.mean_rho = rho_sum / summary.total_count as f64;
    }
    let names = u_prev.names()[..ch].to_vec();
    Ok((TimeSeries::new(fs, u_prev.start_time(), names, next)?, summary))
}

/// One tracking run.
#[derive(Debug, Clone)]
pub struct IterationRecord {
    pub index: usize,
    pub input: TimeSeries,
    pub output: TimeSeries,
    pub error: TimeSeries,
    pub max_abs_error: Vec<f64>,
    pub rms_error: Vec<f64>,
    pub model_snapshot_ref: String,
    /// Training points per row summed, after this run's data was added.
    pub training_len: usize,
    /// Statistics of the update computed from this run (none for the last).
    pub gains: Option<GainSummary>,
    pub fault: Option<PlantFault>,
}

impl IterationRecord {
    pub fn worst_error(&self) -> f64 {
        self.max_abs_error.iter().cloned().fold(0.0, f64::max)
    }
}

/// Error series and per-channel statistics. Only the first `y.len()`
/// samples are compared when the output was truncated.
pub fn tracking_error(y_d: &TimeSeries, y: &TimeSeries) -> Result<(TimeSeries, Vec<f64>, Vec<f64>)> {
    let n = y.len().min(y_d.len());
    let ch = y.n_channels().min(y_d.n_channels());
    let mut e = Vec::with_capacity(ch);
    let (mut max, mut rms) = (Vec::with_capacity(ch), Vec::with_capacity(ch));
    for i in 0..ch {
        let c: Vec<f64> = (0..n).map(|t| y_d.channel(i)[t] - y.channel(i)[t]).collect();
        max.push(c.iter().fold(0.0f64, |m, v| m.max(v.abs())));
        rms.push(if n == 0 { 0.0 } else { (c.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt() });
        e.push(c);
    }
    let names = (1..=ch).map(|i| format!("e{i}")).collect();
    Ok((TimeSeries::new(y_d.sample_rate(), y_d.start_time(), names, e)?, max, rms))
}

/// The seeding input and the parameter levels it holds at each sample.
#[derive(Debug, Clone)]
pub struct SeedTrajectory {
    pub input: TimeSeries,
    pub levels: Vec<Vec<f64>>,
}

/// Per-channel DC gain from the seed run: for every hold where a channel's
/// level changed, the settled output change over the commanded change. The
/// settled value is the mean over the last third of the hold, which averages
/// out lightly damped ringing.
pub fn estimate_dc_gain(seed: &SeedTrajectory, output: &TimeSeries) -> Result<Vec<f64>> {
    let ch = seed.levels.len();
    let n = output.len();
    let settled = |y: &[f64], lo: usize, hi: usize| {
        let from = hi - (hi - lo).div_ceil(3);
        y[from..hi].iter().sum::<f64>() / (hi - from) as f64
    };
    let mut g0 = Vec::with_capacity(ch);
    for i in 0..ch {
        let lv = &seed.levels[i];
        // segment boundaries: every change of any channel's level
        let mut bounds: Vec<usize> = (1..n).filter(|&t| seed.levels.iter().any(|l| l[t] != l[t - 1])).collect();
        bounds.insert(0, 0);
        bounds.push(n);
        let mut ratios = Vec::new();
        for k in 1..bounds.len() - 1 {
            let (prev, start, end) = (bounds[k - 1], bounds[k], bounds[k + 1]);
            let du = lv[start] - lv[start - 1];
            if du.abs() < 1e-12 || start - prev < 2 || end - start < 2 {
                continue;
            }
            let y = output.channel(i);
            ratios.push((settled(y, start, end) - settled(y, prev, start)) / du);
        }
        if ratios.is_empty() {
            return Err(Error::invalid(format!("seed trajectory never steps channel {}", i + 1)));
        }
        g0.push(ratios.iter().sum::<f64>() / ratios.len() as f64);
    }
    Ok(g0)
}

/// Result of [`run_learning`].
#[derive(Debug, Clone)]
pub struct LearningOutcome {
    pub dc_gain: Vec<f64>,
    pub seed_output: Option<TimeSeries>,
    pub records: Vec<IterationRecord>,
    pub converged: bool,
    /// Set when a plant fault ended the run; the faulted record is last.
    pub fault: Option<PlantFault>,
}

/// Hooks invoked as the loop progresses, e.g. to persist artifacts.
pub trait Observer {
    fn seed_done(&mut self, _seed: &SeedTrajectory, _output: &TimeSeries, _learner: &dyn Learner) -> Result<()> {
        Ok(())
    }
    fn iteration_done(&mut self, _record: &IterationRecord, _learner: &dyn Learner) -> Result<()> {
        Ok(())
    }
}

impl Observer for () {}

/// Runs the seeding trajectory (if any), then `u₀ = y_d/G₀` and up to
/// `max_iterations` learning iterations. `dc_gain` overrides the seed
/// estimate of `G₀`; without either, the learner's DC estimate is used.
pub fn run_learning(
    plant: &mut dyn Plant,
    learner: &mut dyn Learner,
    y_d: &TimeSeries,
    seed: Option<&SeedTrajectory>,
    dc_gain: Option<Vec<f64>>,
    config: &LearningConfig,
    observer: &mut dyn Observer,
) -> Result<LearningOutcome> {
    config.validate()?;
    let ch = learner.n_channels();
    if plant.n_inputs() != ch || plant.n_outputs() != ch || y_d.n_channels() < ch {
        return Err(Error::invalid("plant, learner and reference disagree on channel count"));
    }
    if y_d.len() < 2 {
        return Err(Error::invalid("reference needs at least two samples"));
    }
    let regions = quantize_params(&y_d.channels()[..ch], config.param_quantum)?;
    let mut outcome =
        LearningOutcome { dc_gain: Vec::new(), seed_output: None, records: Vec::new(), converged: false, fault: None };

    let mut seed_g0 = None;
    if let Some(s) = seed {
        let ex = plant.execute(&s.input)?;
        if let Some(f) = ex.fault {
            log::error!("seeding run faulted: {f}");
            outcome.fault = Some(f);
            outcome.seed_output = Some(ex.output);
            return Ok(outcome);
        }
        let pts = build_training_update(&s.input, &ex.output, &s.levels, config)?;
        learner.add_seed(pts)?;
        learner.refresh(true)?;
        seed_g0 = estimate_dc_gain(s, &ex.output).ok();
        observer.seed_done(s, &ex.output, learner)?;
        outcome.seed_output = Some(ex.output);
    } else {
        learner.refresh(false)?;
    }
    let g0 = match dc_gain.or(seed_g0) {
        Some(g) => g,
        None => {
            let p: Vec<f64> = regions.iter().map(|c| c[0]).collect();
            let est = learner.estimate(&p, &[0.0])?;
            (0..ch).map(|i| est.mean[0][(i, i)].re).collect()
        }
    };
    if g0.len() != ch || g0.iter().any(|g| !g.is_finite() || g.abs() < 1e-9) {
        return Err(Error::numerical(format!("unusable DC gain estimate {g0:?}")));
    }
    log::info!("DC gain estimate {g0:?}");
    outcome.dc_gain = g0.clone();

    let u0: Vec<Vec<f64>> = (0..ch).map(|i| y_d.channel(i).iter().map(|v| v / g0[i]).collect()).collect();
    let names = (1..=ch).map(|i| format!("u{i}")).collect();
    let mut u = TimeSeries::new(y_d.sample_rate(), y_d.start_time(), names, u0)?;
    let mut stall = 0;
    let mut best = f64::INFINITY;
    for k in 0..=config.max_iterations {
        let ex = plant.execute(&u)?;
        let (error, max_abs_error, rms_error) = tracking_error(y_d, &ex.output)?;
        let mut record = IterationRecord {
            index: k,
            input: u.clone(),
            output: ex.output,
            error,
            max_abs_error,
            rms_error,
            model_snapshot_ref: format!("model_{k:03}"),
            training_len: learner.training_len(),
            gains: None,
            fault: ex.fault.clone(),
        };
        if let Some(f) = ex.fault {
            log::error!("iteration {k} aborted: {f}");
            observer.iteration_done(&record, learner)?;
            outcome.records.push(record);
            outcome.fault = Some(f);
            return Ok(outcome);
        }
        let worst = record.worst_error();
        log::info!("iteration {k}: max error {:?} rad", record.max_abs_error);
        if worst <= config.converged_tolerance {
            outcome.converged = true;
        } else if config.stall_iterations > 0 {
            if best - worst < config.stall_tolerance {
                stall += 1;
            } else {
                stall = 0;
            }
            if stall >= config.stall_iterations {
                outcome.converged = true;
            }
        }
        best = best.min(worst);
        let last = k == config.max_iterations || outcome.converged;
        if !last {
            let pts = build_training_update(&record.input, &record.output, &regions, config)?;
            learner.add_iteration(pts)?;
            record.training_len = learner.training_len();
            learner.refresh(config.refit_until.is_none_or(|r| k < r))?;
            let (next, summary) = update_input(&u, &record.error, &regions, learner, config)?;
            record.gains = Some(summary);
            u = next;
        }
        observer.iteration_done(&record, learner)?;
        outcome.records.push(record);
        if last {
            break;
        }
    }
    Ok(outcome)
}
