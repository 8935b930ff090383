//! Time- and frequency-domain signal containers and the transforms used to
//! turn trajectories into transfer-function samples.
//!
//! DFT convention: the forward transform is unnormalized and stored one-sided
//! (bins `0..=N/2`), the inverse carries the `1/N` factor and restores the
//! negative-frequency half by Hermitian symmetry.

use std::cell::RefCell;
use std::f64::consts::PI;
use std::io::{Read, Write};

use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn fft_in_place(buf: &mut [Complex64], inverse: bool) {
    PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        let fft = if inverse {
            p.plan_fft_inverse(buf.len())
        } else {
            p.plan_fft_forward(buf.len())
        };
        fft.process(buf);
    });
}

/// Uniformly sampled multichannel real signal.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    sample_rate: f64,
    start_time: f64,
    names: Vec<String>,
    channels: Vec<Vec<f64>>,
}

impl TimeSeries {
    pub fn new(
        sample_rate: f64,
        start_time: f64,
        names: Vec<String>,
        channels: Vec<Vec<f64>>,
    ) -> Result<Self> {
        if !(sample_rate > 0.0 && sample_rate.is_finite()) {
            return Err(Error::invalid(format!("sample rate must be positive, got {sample_rate}")));
        }
        if names.len() != channels.len() || channels.is_empty() {
            return Err(Error::invalid("need one name per channel and at least one channel"));
        }
        let len = channels[0].len();
        if len == 0 {
            return Err(Error::invalid("channels must hold at least one sample"));
        }
        if channels.iter().any(|c| c.len() != len) {
            return Err(Error::invalid("all channels must have the same length"));
        }
        Ok(Self { sample_rate, start_time, names, channels })
    }

    /// Builds a series starting at t = 0 from `(name, samples)` pairs.
    pub fn from_channels<S: Into<String>>(
        sample_rate: f64,
        channels: impl IntoIterator<Item = (S, Vec<f64>)>,
    ) -> Result<Self> {
        let (names, data): (Vec<String>, Vec<Vec<f64>>) =
            channels.into_iter().map(|(n, c)| (n.into(), c)).unzip();
        Self::new(sample_rate, 0.0, names, data)
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    pub fn start_time(&self) -> f64 {
        self.start_time
    }

    pub fn len(&self) -> usize {
        self.channels[0].len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn n_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn channels(&self) -> &[Vec<f64>] {
        &self.channels
    }

    pub fn channel(&self, idx: usize) -> &[f64] {
        &self.channels[idx]
    }

    pub fn channel_by_name(&self, name: &str) -> Option<&[f64]> {
        self.names.iter().position(|n| n == name).map(|i| self.channels[i].as_slice())
    }

    pub fn time(&self, idx: usize) -> f64 {
        self.start_time + idx as f64 / self.sample_rate
    }

    pub fn duration(&self) -> f64 {
        self.len() as f64 / self.sample_rate
    }

    /// Writes the series as CSV with a leading `t` column.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = Vec::with_capacity(self.names.len() + 1);
        header.push("t".to_string());
        header.extend(self.names.iter().cloned());
        w.write_record(&header)?;
        let mut row = Vec::with_capacity(header.len());
        for i in 0..self.len() {
            row.clear();
            row.push(format!("{}", self.time(i)));
            row.extend(self.channels.iter().map(|c| format!("{}", c[i])));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a CSV written by [`TimeSeries::write_csv`]. The sample rate is
    /// recovered from the spacing of the `t` column, which must be uniform.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let header = rdr.headers()?.clone();
        if header.get(0).map(str::trim) != Some("t") {
            return Err(Error::invalid("first CSV column must be `t`"));
        }
        if header.len() < 2 {
            return Err(Error::invalid("CSV needs at least one data channel"));
        }
        let names: Vec<String> = header.iter().skip(1).map(|s| s.trim().to_string()).collect();
        let mut times = Vec::new();
        let mut channels = vec![Vec::new(); names.len()];
        for rec in rdr.records() {
            let rec = rec?;
            if rec.len() != names.len() + 1 {
                return Err(Error::invalid("ragged CSV row"));
            }
            let parse = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::invalid(format!("bad number `{s}`: {e}")))
            };
            times.push(parse(&rec[0])?);
            for (c, field) in channels.iter_mut().zip(rec.iter().skip(1)) {
                c.push(parse(field)?);
            }
        }
        if times.len() < 2 {
            return Err(Error::invalid("CSV needs at least two rows to infer the sample rate"));
        }
        let dt = times[1] - times[0];
        if !(dt > 0.0) {
            return Err(Error::invalid("time column must be increasing"));
        }
        for (i, t) in times.iter().enumerate() {
            let expected = times[0] + i as f64 * dt;
            if (t - expected).abs() > 1e-6 * dt.max(1.0) + 1e-9 * t.abs() {
                return Err(Error::invalid("time column is not uniformly sampled"));
            }
        }
        let span = times[times.len() - 1] - times[0];
        let sample_rate = (times.len() - 1) as f64 / span;
        Self::new(sample_rate, times[0], names, channels)
    }
}

/// One-sided complex spectrum on an explicit angular-frequency grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    frequencies: Vec<f64>,
    values: Vec<Complex64>,
}

impl Spectrum {
    pub fn new(frequencies: Vec<f64>, values: Vec<Complex64>) -> Result<Self> {
        if frequencies.len() != values.len() {
            return Err(Error::invalid("spectrum grid and values differ in length"));
        }
        if let Some(&f0) = frequencies.first() {
            if f0 < 0.0 {
                return Err(Error::invalid("spectrum grid must be nonnegative"));
            }
        }
        if frequencies.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("spectrum grid must be strictly increasing"));
        }
        Ok(Self { frequencies, values })
    }

    pub fn frequencies(&self) -> &[f64] {
        &self.frequencies
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn magnitudes(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.norm()).collect()
    }
}

/// Angular frequencies `2πk·fs/N`, `k = 0..=N/2`, of the one-sided DFT grid.
pub fn dft_grid(n_samples: usize, sample_rate: f64) -> Vec<f64> {
    (0..=n_samples / 2)
        .map(|k| 2.0 * PI * k as f64 * sample_rate / n_samples as f64)
        .collect()
}

/// One-sided unnormalized DFT of a real channel.
pub fn forward_transform(x: &[f64], sample_rate: f64) -> Result<Spectrum> {
    if x.len() < 2 {
        return Err(Error::invalid("transform needs at least two samples"));
    }
    if !(sample_rate > 0.0) {
        return Err(Error::invalid("sample rate must be positive"));
    }
    let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft_in_place(&mut buf, false);
    buf.truncate(x.len() / 2 + 1);
    Ok(Spectrum { frequencies: dft_grid(x.len(), sample_rate), values: buf })
}

/// Inverse of [`forward_transform`]; the grid must be the DFT grid of
/// `(n_samples, sample_rate)`.
pub fn inverse_transform(s: &Spectrum, n_samples: usize, sample_rate: f64) -> Result<Vec<f64>> {
    if n_samples < 2 {
        return Err(Error::invalid("inverse transform needs at least two samples"));
    }
    let grid = dft_grid(n_samples, sample_rate);
    if grid.len() != s.len() {
        return Err(Error::invalid(format!(
            "spectrum has {} bins, expected {} for N = {n_samples}",
            s.len(),
            grid.len()
        )));
    }
    let scale = grid.last().copied().unwrap_or(1.0).max(1.0);
    if grid
        .iter()
        .zip(&s.frequencies)
        .any(|(a, b)| (a - b).abs() > 1e-9 * scale)
    {
        return Err(Error::invalid("spectrum grid does not match the DFT grid"));
    }
    Ok(inverse_half_spectrum(&s.values, n_samples))
}

/// Inverse DFT from one-sided bins without grid bookkeeping. DC and (for even
/// N) Nyquist bins contribute only their real parts.
pub(crate) fn inverse_half_spectrum(half: &[Complex64], n: usize) -> Vec<f64> {
    debug_assert_eq!(half.len(), n / 2 + 1);
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    buf[0] = Complex64::new(half[0].re, 0.0);
    for k in 1..half.len() {
        if 2 * k == n {
            buf[k] = Complex64::new(half[k].re, 0.0);
        } else {
            buf[k] = half[k];
            buf[n - k] = half[k].conj();
        }
    }
    fft_in_place(&mut buf, true);
    let inv_n = 1.0 / n as f64;
    buf.iter().map(|v| v.re * inv_n).collect()
}

/// Circular convolution `(x ⋆ z)[n] = Σ_m x[m]·z[(n − m) mod N]`, evaluated
/// directly in the time domain.
pub fn circular_convolution(x: &[f64], z: &[f64]) -> Result<Vec<f64>> {
    if x.len() != z.len() || x.is_empty() {
        return Err(Error::invalid("circular convolution needs equal, nonzero lengths"));
    }
    let n = x.len();
    Ok((0..n)
        .map(|i| (0..n).map(|m| x[m] * z[(i + n - m) % n]).sum())
        .collect())
}

/// A contiguous segment of a trajectory tagged with the quantized parameter
/// values in force when it starts.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub start_index: usize,
    pub length: usize,
    pub representative_params: Vec<f64>,
}

impl Window {
    pub fn range(&self) -> std::ops::Range<usize> {
        self.start_index..self.start_index + self.length
    }
}

/// Splits a trajectory into windows starting wherever any quantized
/// parameter channel changes value. Windows are `window_seconds` long,
/// truncated at the end of the signal and dropped when shorter than two
/// samples. With no change at all, one window covers the whole signal.
pub fn extract_windows(
    n_samples: usize,
    quantized_params: &[Vec<f64>],
    sample_rate: f64,
    window_seconds: f64,
) -> Result<Vec<Window>> {
    if quantized_params.is_empty() {
        return Err(Error::invalid("need at least one parameter channel"));
    }
    if quantized_params.iter().any(|c| c.len() != n_samples) {
        return Err(Error::invalid("parameter channels must match the signal length"));
    }
    let win_len = (window_seconds * sample_rate).round() as usize;
    if win_len < 2 {
        return Err(Error::invalid("window must span at least two samples"));
    }
    let params_at = |i: usize| quantized_params.iter().map(|c| c[i]).collect::<Vec<_>>();
    let changes: Vec<usize> = (1..n_samples)
        .filter(|&i| quantized_params.iter().any(|c| c[i] != c[i - 1]))
        .collect();
    if changes.is_empty() {
        if n_samples < 2 {
            return Ok(Vec::new());
        }
        return Ok(vec![Window {
            start_index: 0,
            length: n_samples,
            representative_params: params_at(0),
        }]);
    }
    Ok(changes
        .into_iter()
        .filter_map(|start| {
            let length = win_len.min(n_samples - start);
            (length >= 2).then(|| Window {
                start_index: start,
                length,
                representative_params: params_at(start),
            })
        })
        .collect())
}

/// Indices where both `|u_k| ≥ fraction·max|u|` and `|y_k| ≥ fraction·max|y|`.
/// An all-zero spectrum yields an empty set and a logged warning.
pub fn threshold_spectra(u: &Spectrum, y: &Spectrum, fraction: f64) -> Result<Vec<usize>> {
    if u.len() != y.len() {
        return Err(Error::invalid("spectra must share a grid"));
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::invalid(format!("threshold fraction {fraction} not in (0, 1]")));
    }
    Ok(threshold_magnitudes(&u.magnitudes(), &y.magnitudes(), fraction))
}

pub(crate) fn threshold_magnitudes(u: &[f64], y: &[f64], fraction: f64) -> Vec<usize> {
    let umax = u.iter().cloned().fold(0.0, f64::max);
    let ymax = y.iter().cloned().fold(0.0, f64::max);
    if umax == 0.0 || ymax == 0.0 {
        log::warn!("all-zero spectrum in thresholding; no bins kept");
        return Vec::new();
    }
    (0..u.len())
        .filter(|&k| u[k] >= fraction * umax && y[k] >= fraction * ymax)
        .collect()
}

/// Spectrum of the first difference of `x` over `window`. The sample just
/// before the window serves as the reference, so a step at the window start
/// shows up as an impulse. Differencing both input and output leaves their
/// ratio unchanged while removing the trend that a rectangular window would
/// otherwise smear across all bins.
pub fn differenced_segment_spectrum(x: &[f64], window: &Window, sample_rate: f64) -> Result<Spectrum> {
    let r = window.range();
    if r.end > x.len() {
        return Err(Error::invalid("window extends past the signal"));
    }
    let mut prev = if r.start > 0 { x[r.start - 1] } else { x[r.start] };
    let diff: Vec<f64> = x[r]
        .iter()
        .map(|&v| {
            let d = v - prev;
            prev = v;
            d
        })
        .collect();
    forward_transform(&diff, sample_rate)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn direct_dft(x: &[f64]) -> Vec<Complex64> {
        let n = x.len();
        (0..=n / 2)
            .map(|k| {
                x.iter()
                    .enumerate()
                    .map(|(t, &v)| v * Complex64::from_polar(1.0, -2.0 * PI * (k * t) as f64 / n as f64))
                    .sum()
            })
            .collect()
    }

    #[test]
    fn constant_signal_is_dc_only() {
        let s = forward_transform(&[3.0; 16], 10.0).unwrap();
        assert_abs_diff_eq!(s.values()[0].re, 48.0, epsilon = 1e-12);
        for v in &s.values()[1..] {
            assert!(v.norm() < 1e-12);
        }
    }

    #[test]
    fn impulse_is_flat() {
        let mut x = vec![0.0; 9];
        x[0] = 1.0;
        let s = forward_transform(&x, 1.0).unwrap();
        for v in s.values() {
            assert_abs_diff_eq!(v.re, 1.0, epsilon = 1e-14);
            assert_abs_diff_eq!(v.im, 0.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn sine_matches_direct_dft() {
        let fs = 100.0;
        let x: Vec<f64> = (0..200).map(|i| (2.0 * PI * 5.0 * i as f64 / fs).sin()).collect();
        let s = forward_transform(&x, fs).unwrap();
        let oracle = direct_dft(&x);
        for (a, b) in s.values().iter().zip(&oracle) {
            assert!((a - b).norm() < 1e-9);
        }
        let peak = s
            .magnitudes()
            .iter()
            .enumerate()
            .fold((0, 0.0), |acc, (i, &m)| if m > acc.1 { (i, m) } else { acc })
            .0;
        assert_abs_diff_eq!(s.frequencies()[peak], 2.0 * PI * 5.0, epsilon = 1e-9);
    }

    #[test]
    fn too_short_rejected() {
        assert!(forward_transform(&[], 1.0).is_err());
        assert!(forward_transform(&[1.0], 1.0).is_err());
    }

    #[test]
    fn zero_spectrum_inverts_to_zero() {
        let s = Spectrum::new(dft_grid(10, 5.0), vec![Complex64::new(0.0, 0.0); 6]).unwrap();
        assert!(inverse_transform(&s, 10, 5.0).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_bin_inverts_to_cosine() {
        let n = 32;
        let k = 3;
        let c = Complex64::from_polar(2.0, 0.4);
        let mut vals = vec![Complex64::new(0.0, 0.0); n / 2 + 1];
        vals[k] = c;
        let s = Spectrum::new(dft_grid(n, 1.0), vals).unwrap();
        let x = inverse_transform(&s, n, 1.0).unwrap();
        // x[t] = (c e^{iωt} + c̄ e^{-iωt})/N = 2|c|/N cos(ωt + arg c)
        for (t, v) in x.iter().enumerate() {
            let expect = 2.0 * c.norm() / n as f64 * (2.0 * PI * (k * t) as f64 / n as f64 + c.arg()).cos();
            assert_abs_diff_eq!(*v, expect, epsilon = 1e-14);
        }
    }

    #[test]
    fn grid_mismatch_rejected() {
        let s = forward_transform(&[1.0, 2.0, 3.0, 4.0], 2.0).unwrap();
        assert!(inverse_transform(&s, 4, 3.0).is_err());
        assert!(inverse_transform(&s, 6, 2.0).is_err());
    }

    fn staircase(levels: &[f64], hold: usize) -> Vec<f64> {
        levels.iter().flat_map(|&l| std::iter::repeat_n(l, hold)).collect()
    }

    #[test]
    fn staircase_windows() {
        // 6 levels = 5 transitions, each held 3 s at 100 Hz
        let p = staircase(&[0.0, 1.0, 2.0, 3.0, 4.0, 5.0], 300);
        let n = p.len();
        let oracle: Vec<usize> = (1..n).filter(|&i| p[i] != p[i - 1]).collect();
        let w = extract_windows(n, &[p], 100.0, 2.0).unwrap();
        assert_eq!(w.len(), oracle.len());
        assert_eq!(w.len(), 5);
        for (win, start) in w.iter().zip(&oracle) {
            assert_eq!(win.start_index, *start);
            assert_eq!(win.length, 200);
        }
        assert_eq!(w[2].representative_params, vec![3.0]);
    }

    #[test]
    fn constant_params_single_window() {
        let w = extract_windows(50, &[vec![0.3; 50], vec![1.0; 50]], 100.0, 2.0).unwrap();
        assert_eq!(w.len(), 1);
        assert_eq!((w[0].start_index, w[0].length), (0, 50));
        assert_eq!(w[0].representative_params, vec![0.3, 1.0]);
    }

    #[test]
    fn boundary_windows_truncated_or_dropped() {
        let mut p = vec![0.0; 500];
        p[350..].iter_mut().for_each(|v| *v = 1.0);
        p[499] = 2.0;
        let w = extract_windows(500, &[p.clone()], 100.0, 2.0).unwrap();
        // step at 350 leaves 150 samples; step at the final sample leaves 1
        assert_eq!(w.len(), 1);
        assert_eq!((w[0].start_index, w[0].length), (350, 150));

        p[498] = 2.0;
        let w = extract_windows(500, &[p], 100.0, 2.0).unwrap();
        assert_eq!(w.len(), 2);
        assert_eq!((w[1].start_index, w[1].length), (498, 2));
    }

    #[test]
    fn window_too_short_rejected() {
        assert!(extract_windows(10, &[vec![0.0; 10]], 100.0, 0.01).is_err());
    }

    fn spec_from_mags(m: &[f64]) -> Spectrum {
        let grid = (0..m.len()).map(|k| k as f64).collect();
        Spectrum::new(grid, m.iter().map(|&v| Complex64::new(v, 0.0)).collect()).unwrap()
    }

    #[test]
    fn threshold_examples() {
        let u = spec_from_mags(&[1.0, 0.6, 0.4]);
        assert_eq!(threshold_spectra(&u, &u, 0.5).unwrap(), vec![0, 1]);
        assert_eq!(threshold_spectra(&u, &u, 1.0).unwrap(), vec![0]);
        let z = spec_from_mags(&[0.0, 0.0, 0.0]);
        assert!(threshold_spectra(&u, &z, 0.5).unwrap().is_empty());
        assert!(threshold_spectra(&u, &u, 0.0).is_err());
        assert!(threshold_spectra(&u, &u, 1.5).is_err());
    }

    #[test]
    fn differenced_step_is_flat() {
        let x: Vec<f64> = (0..40).map(|i| if i >= 10 { 2.0 } else { 0.0 }).collect();
        let w = Window { start_index: 10, length: 20, representative_params: vec![] };
        let s = differenced_segment_spectrum(&x, &w, 10.0).unwrap();
        for v in s.values() {
            assert_abs_diff_eq!(v.re, 2.0, epsilon = 1e-12);
            assert_abs_diff_eq!(v.im, 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn csv_round_trip() {
        let ts = TimeSeries::from_channels(100.0, [("u1", vec![0.0, 0.5, -1.25]), ("y1", vec![1.0, 2.0, 3.0])]).unwrap();
        let mut buf = Vec::new();
        ts.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("t,u1,y1\n0,0,1\n0.01,0.5,2\n"));
        let back = TimeSeries::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back.channels(), ts.channels());
        assert_abs_diff_eq!(back.sample_rate(), 100.0, epsilon = 1e-9);
    }

    #[test]
    fn csv_rejects_bad_header() {
        assert!(TimeSeries::read_csv("x,a\n0,1\n1,2\n".as_bytes()).is_err());
        assert!(TimeSeries::read_csv("t,a\n0,1\n".as_bytes()).is_err());
    }

    #[test]
    fn timeseries_invariants() {
        assert!(TimeSeries::from_channels(0.0, [("a", vec![1.0])]).is_err());
        assert!(TimeSeries::from_channels(1.0, [("a", vec![1.0]), ("b", vec![])]).is_err());
        assert!(TimeSeries::from_channels(1.0, [("a", Vec::<f64>::new())]).is_err());
    }
}
