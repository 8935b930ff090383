use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ilc::{quantize, SeedTrajectory};
use crate::signals::TimeSeries;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrajectoryKind {
    SlowFullRange,
    FastShortRange,
    /// Reference read from a CSV file in the signal format.
    Custom(String),
}

/// Point-to-point move with a sinusoidal acceleration profile, padded with
/// rest before and after so the learning update sees a quiet horizon edge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrajectorySpec {
    pub kind: TrajectoryKind,
    /// Net displacement per joint (rad).
    pub amplitude: Vec<f64>,
    /// Duration of the move (s).
    pub duration: f64,
    /// Rest before the move (s).
    pub lead: f64,
    /// Rest after the move (s).
    pub tail: f64,
}

impl Default for TrajectorySpec {
    fn default() -> Self {
        Self::slow()
    }
}

impl TrajectorySpec {
    pub fn slow() -> Self {
        Self { kind: TrajectoryKind::SlowFullRange, amplitude: vec![PI, PI], duration: 10.0, lead: 0.5, tail: 2.0 }
    }

    pub fn fast() -> Self {
        Self {
            kind: TrajectoryKind::FastShortRange,
            amplitude: vec![PI / 2.0, PI / 2.0],
            duration: 4.0,
            lead: 0.5,
            tail: 2.0,
        }
    }

    pub fn custom(path: impl Into<String>) -> Self {
        Self { kind: TrajectoryKind::Custom(path.into()), amplitude: Vec::new(), duration: 0.0, lead: 0.0, tail: 0.0 }
    }

    /// `slow`, `fast` or `custom:<path>`.
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "slow" => Ok(Self::slow()),
            "fast" => Ok(Self::fast()),
            _ => match s.strip_prefix("custom:") {
                Some(p) if !p.is_empty() => Ok(Self::custom(p)),
                _ => Err(Error::Config(format!("unknown trajectory `{s}`; expected slow, fast or custom:<path>"))),
            },
        }
    }
}

/// Position along a sinusoidal-acceleration move of unit displacement at
/// normalized time `s ∈ [0, 1]`: `a ∝ sin(2πs)` integrated twice.
pub fn unit_profile(s: f64) -> f64 {
    let s = s.clamp(0.0, 1.0);
    s - (2.0 * PI * s).sin() / (2.0 * PI)
}

/// Desired joint angles on the full padded horizon.
pub fn generate_trajectory(spec: &TrajectorySpec, sample_rate: f64) -> Result<TimeSeries> {
    if let TrajectoryKind::Custom(path) = &spec.kind {
        let f = std::fs::File::open(path).map_err(|e| Error::Config(format!("cannot open trajectory `{path}`: {e}")))?;
        let ts = TimeSeries::read_csv(f)?;
        if (ts.sample_rate() - sample_rate).abs() > 1e-6 * sample_rate {
            return Err(Error::Config(format!(
                "custom trajectory sampled at {} Hz, configuration expects {sample_rate} Hz",
                ts.sample_rate()
            )));
        }
        return Ok(ts);
    }
    if !(spec.duration > 0.0) || !spec.duration.is_finite() {
        return Err(Error::invalid("trajectory duration must be positive"));
    }
    if !(sample_rate > 0.0) || !(spec.lead >= 0.0) || !(spec.tail >= 0.0) || spec.amplitude.is_empty() {
        return Err(Error::invalid("trajectory needs a sample rate, nonnegative padding and amplitudes"));
    }
    let n = ((spec.lead + spec.duration + spec.tail) * sample_rate).round() as usize + 1;
    let channels = spec
        .amplitude
        .iter()
        .map(|&a| (0..n).map(|i| a * unit_profile((i as f64 / sample_rate - spec.lead) / spec.duration)).collect())
        .collect();
    let names = (1..=spec.amplitude.len()).map(|i| format!("y{i}")).collect();
    TimeSeries::new(sample_rate, 0.0, names, channels)
}

/// Shape of the seeding staircase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SeedConfig {
    /// Rest before the first step (s).
    pub lead_seconds: f64,
    /// Extra hold after each training window (s).
    pub settle_seconds: f64,
    /// Each step is a smooth move of this length rather than a jump, so the
    /// springs stay below the torque limit (s).
    pub transition_seconds: f64,
}

impl Default for SeedConfig {
    fn default() -> Self {
        Self { lead_seconds: 1.0, settle_seconds: 1.0, transition_seconds: 0.4 }
    }
}

/// Distinct consecutive quantized levels visited by a channel.
fn level_sequence(x: &[f64], quantum: f64) -> Vec<f64> {
    let mut out: Vec<f64> = Vec::new();
    for &v in x {
        let q = quantize(v, quantum);
        if out.last() != Some(&q) {
            out.push(q);
        }
    }
    out
}

/// Staircase through the quantized levels of `y_d`. Channels step one at a
/// time in turn, so each window excites a single input; each level is held
/// for `window_seconds + settle_seconds`.
pub fn generate_seed_trajectory(
    y_d: &TimeSeries,
    quantum: f64,
    window_seconds: f64,
    seed: &SeedConfig,
) -> Result<SeedTrajectory> {
    if y_d.is_empty() || y_d.n_channels() == 0 {
        return Err(Error::invalid("reference is empty"));
    }
    if !(quantum > 0.0) || !(window_seconds > 0.0) {
        return Err(Error::invalid("quantum and window must be positive"));
    }
    if !(seed.settle_seconds >= 0.0) || !(seed.lead_seconds >= 0.0) || !(seed.transition_seconds >= 0.0) {
        return Err(Error::invalid("seed timing must be nonnegative"));
    }
    let hold = window_seconds + seed.settle_seconds;
    if seed.transition_seconds > hold {
        return Err(Error::invalid("seed transition longer than the hold"));
    }
    let fs = y_d.sample_rate();
    let ch = y_d.n_channels();
    let seqs: Vec<Vec<f64>> = y_d.channels().iter().map(|c| level_sequence(c, quantum)).collect();

    // (channel, from, to) in alternating order
    let mut steps = Vec::new();
    let longest = seqs.iter().map(Vec::len).max().unwrap_or(1);
    for k in 1..longest {
        for (c, s) in seqs.iter().enumerate() {
            if k < s.len() {
                steps.push((c, s[k - 1], s[k]));
            }
        }
    }
    let lead = (seed.lead_seconds * fs).round() as usize;
    let hold_n = (hold * fs).round() as usize;
    let trans_n = (seed.transition_seconds * fs).round() as usize;
    let n = lead + hold_n * steps.len().max(1) + 1;
    let mut levels: Vec<Vec<f64>> = seqs.iter().map(|s| vec![s[0]; n]).collect();
    let mut input: Vec<Vec<f64>> = levels.clone();
    for (k, &(c, from, to)) in steps.iter().enumerate() {
        let start = lead + k * hold_n;
        for t in start..n {
            levels[c][t] = to;
            let frac = if trans_n == 0 { 1.0 } else { unit_profile((t - start + 1) as f64 / trans_n as f64) };
            input[c][t] = from + (to - from) * frac;
        }
    }
    let names = (1..=ch).map(|i| format!("u{i}")).collect();
    Ok(SeedTrajectory { input: TimeSeries::new(fs, 0.0, names, input)?, levels })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slow_move_covers_pi_and_starts_and_ends_at_rest() {
        let fs = 100.0;
        let y = generate_trajectory(&TrajectorySpec::slow(), fs).unwrap();
        for c in y.channels() {
            assert!((c[c.len() - 1] - c[0] - PI).abs() < 1e-12);
            let v0 = (c[1] - c[0]) * fs;
            let v1 = (c[c.len() - 1] - c[c.len() - 2]) * fs;
            assert_eq!((v0, v1), (0.0, 0.0));
        }
        let spec = TrajectorySpec { amplitude: vec![0.0], ..TrajectorySpec::fast() };
        assert!(generate_trajectory(&spec, fs).unwrap().channel(0).iter().all(|v| *v == 0.0));
        let spec = TrajectorySpec { duration: 0.0, ..TrajectorySpec::fast() };
        assert!(generate_trajectory(&spec, fs).is_err());
    }

    #[test]
    fn parse_kinds() {
        assert_eq!(TrajectorySpec::parse("slow").unwrap(), TrajectorySpec::slow());
        assert_eq!(TrajectorySpec::parse("custom:a.csv").unwrap().kind, TrajectoryKind::Custom("a.csv".into()));
        assert!(matches!(TrajectorySpec::parse("medium"), Err(Error::Config(_))));
    }

    #[test]
    fn seed_staircase_levels() {
        let y = generate_trajectory(&TrajectorySpec::slow(), 100.0).unwrap();
        let s = generate_seed_trajectory(&y, PI / 10.0, 2.0, &SeedConfig::default()).unwrap();
        assert!(s.input.duration() >= 20.0 * 3.0);
        for c in &s.levels {
            let mut distinct: Vec<f64> = c.clone();
            distinct.dedup();
            assert_eq!(distinct.len(), 11);
            for v in distinct {
                let m = v / (PI / 10.0);
                assert!((m - m.round()).abs() < 1e-12);
            }
        }
        // the input settles on each level well before the next step
        let q = &s.levels[0];
        let u = s.input.channel(0);
        for t in 1..q.len() {
            if q[t] != q[t - 1] {
                assert_eq!(u[t - 1], q[t - 1]);
            }
        }

        let flat = TimeSeries::from_channels(100.0, [("y1", vec![0.2; 50])]).unwrap();
        let s = generate_seed_trajectory(&flat, PI / 10.0, 2.0, &SeedConfig::default()).unwrap();
        let mut d = s.levels[0].clone();
        d.dedup();
        assert_eq!(d, vec![quantize(0.2, PI / 10.0)]);
    }
}
