use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{output_names, Execution, Plant};
use crate::error::{Error, Result};
use crate::signals::{forward_transform, inverse_transform, Spectrum, TimeSeries};

/// Continuous-time rational transfer function, coefficients in descending
/// powers of `s`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RationalTf {
    pub num: Vec<f64>,
    pub den: Vec<f64>,
}

impl RationalTf {
    pub fn new(num: Vec<f64>, den: Vec<f64>) -> Result<Self> {
        let tf = Self { num, den };
        tf.validate()?;
        Ok(tf)
    }

    pub fn gain(k: f64) -> Self {
        Self { num: vec![k], den: vec![1.0] }
    }

    /// `ω_n²/(s² + 2ζω_n s + ω_n²)`
    pub fn second_order(omega_n: f64, zeta: f64) -> Self {
        Self { num: vec![omega_n * omega_n], den: vec![1.0, 2.0 * zeta * omega_n, omega_n * omega_n] }
    }

    fn trimmed(c: &[f64]) -> &[f64] {
        let first = c.iter().position(|v| *v != 0.0).unwrap_or(c.len());
        &c[first..]
    }

    fn validate(&self) -> Result<()> {
        let den = Self::trimmed(&self.den);
        if den.is_empty() {
            return Err(Error::invalid("denominator is identically zero"));
        }
        if Self::trimmed(&self.num).len() > den.len() {
            return Err(Error::invalid("transfer function must be proper"));
        }
        if self.num.iter().chain(&self.den).any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite coefficient"));
        }
        Ok(())
    }

    pub fn eval(&self, s: Complex64) -> Complex64 {
        let horner = |c: &[f64]| c.iter().fold(Complex64::new(0.0, 0.0), |acc, &v| acc * s + v);
        horner(&self.num) / horner(&self.den)
    }

    pub fn is_zero(&self) -> bool {
        Self::trimmed(&self.num).is_empty()
    }

    /// Controllable canonical realization `(A, B, C, D)`.
    fn state_space(&self) -> (DMatrix<f64>, DVector<f64>, DVector<f64>, f64) {
        let den = Self::trimmed(&self.den);
        let lead = den[0];
        let a: Vec<f64> = den.iter().map(|v| v / lead).collect();
        let n = a.len() - 1;
        let mut b: Vec<f64> = vec![0.0; n + 1];
        let num = Self::trimmed(&self.num);
        for (k, v) in num.iter().rev().enumerate() {
            b[n - k] = v / lead;
        }
        let d = b[0];
        // strictly proper remainder: b_k − d·a_k
        let c_desc: Vec<f64> = (1..=n).map(|k| b[k] - d * a[k]).collect();
        let mut am = DMatrix::zeros(n, n);
        for i in 0..n.saturating_sub(1) {
            am[(i, i + 1)] = 1.0;
        }
        for j in 0..n {
            am[(n - 1, j)] = -a[n - j];
        }
        let mut bm = DVector::zeros(n);
        if n > 0 {
            bm[n - 1] = 1.0;
        }
        let cm = DVector::from_iterator(n, (0..n).map(|j| c_desc[n - 1 - j]));
        (am, bm, cm, d)
    }

    pub fn poles(&self) -> Vec<Complex64> {
        let (a, ..) = self.state_space();
        if a.nrows() == 0 {
            return Vec::new();
        }
        a.complex_eigenvalues().iter().copied().collect()
    }
}

/// Exact zero-order-hold discretization of one entry.
#[derive(Debug, Clone)]
struct Discrete {
    ad: DMatrix<f64>,
    bd: DVector<f64>,
    c: DVector<f64>,
    d: f64,
    slowest_decay: f64,
}

impl Discrete {
    fn new(tf: &RationalTf, sample_rate: f64) -> Result<Self> {
        let poles = tf.poles();
        if let Some(p) = poles.iter().find(|p| p.re >= 0.0) {
            return Err(Error::invalid(format!("unstable or marginal pole at {p}")));
        }
        let slowest_decay = poles.iter().map(|p| -p.re).fold(f64::INFINITY, f64::min);
        let (a, b, c, d) = tf.state_space();
        let n = a.nrows();
        let dt = 1.0 / sample_rate;
        let mut aug = DMatrix::zeros(n + 1, n + 1);
        aug.view_mut((0, 0), (n, n)).copy_from(&(a * dt));
        aug.view_mut((0, n), (n, 1)).copy_from(&(b * dt));
        let e = aug.exp();
        let ad = e.view((0, 0), (n, n)).into_owned();
        let bd = e.view((0, n), (n, 1)).column(0).into_owned();
        Ok(Self { ad, bd, c, d, slowest_decay })
    }

    fn response(&self, z: Complex64) -> Complex64 {
        let n = self.ad.nrows();
        if n == 0 {
            return Complex64::new(self.d, 0.0);
        }
        let mut m = self.ad.map(|v| Complex64::new(-v, 0.0));
        for i in 0..n {
            m[(i, i)] += z;
        }
        let rhs = self.bd.map(|v| Complex64::new(v, 0.0));
        let x = m.lu().solve(&rhs).expect("z on the unit circle is not a pole of a stable plant");
        self.c.iter().zip(x.iter()).map(|(c, x)| x * *c).sum::<Complex64>() + self.d
    }
}

/// One entry of an LTI transfer matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TfEntry {
    pub output: usize,
    pub input: usize,
    pub num: Vec<f64>,
    pub den: Vec<f64>,
}

/// File description of an LTI plant; entries not listed are zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LtiSpec {
    pub inputs: usize,
    pub outputs: usize,
    #[serde(rename = "entry")]
    pub entries: Vec<TfEntry>,
}

/// Stable LTI plant simulated exactly for zero-order-hold inputs: each entry
/// is discretized with the matrix exponential and applied by multiplication
/// of zero-padded spectra, the padding chosen so the impulse response has
/// decayed below `1e-13` and no wrap-around occurs.
#[derive(Debug, Clone)]
pub struct LtiPlant {
    tfs: Vec<Vec<RationalTf>>,
    sample_rate: f64,
    discrete: Vec<Vec<Option<Discrete>>>,
    pad: usize,
}

impl LtiPlant {
    /// `entries[i][j]` maps input `j` to output `i`.
    pub fn new(entries: Vec<Vec<RationalTf>>, sample_rate: f64) -> Result<Self> {
        if entries.is_empty() || entries[0].is_empty() || entries.iter().any(|r| r.len() != entries[0].len()) {
            return Err(Error::invalid("transfer matrix must be rectangular and nonempty"));
        }
        if !(sample_rate > 0.0) {
            return Err(Error::invalid("sample rate must be positive"));
        }
        let mut slowest = f64::INFINITY;
        let mut discrete = Vec::with_capacity(entries.len());
        for row in &entries {
            let mut out = Vec::with_capacity(row.len());
            for tf in row {
                tf.validate()?;
                if tf.is_zero() {
                    out.push(None);
                    continue;
                }
                let d = Discrete::new(tf, sample_rate)?;
                slowest = slowest.min(d.slowest_decay);
                out.push(Some(d));
            }
            discrete.push(out);
        }
        let pad = if slowest.is_finite() {
            ((13.0 * std::f64::consts::LN_10 / slowest) * sample_rate).ceil() as usize + 8
        } else {
            0
        };
        if pad > 1 << 24 {
            return Err(Error::invalid("plant dynamics too slow for the sample rate"));
        }
        Ok(Self { tfs: entries, sample_rate, discrete, pad })
    }

    pub fn scalar(tf: RationalTf, sample_rate: f64) -> Result<Self> {
        Self::new(vec![vec![tf]], sample_rate)
    }

    /// 2×2 diagonal plant.
    pub fn diagonal(g11: RationalTf, g22: RationalTf, sample_rate: f64) -> Result<Self> {
        let z = || RationalTf::gain(0.0);
        Self::new(vec![vec![g11, z()], vec![z(), g22]], sample_rate)
    }

    pub fn from_spec(spec: &LtiSpec, sample_rate: f64) -> Result<Self> {
        let mut tfs = vec![vec![RationalTf::gain(0.0); spec.inputs]; spec.outputs];
        for e in &spec.entries {
            if e.output >= spec.outputs || e.input >= spec.inputs {
                return Err(Error::invalid("transfer entry index out of range"));
            }
            tfs[e.output][e.input] = RationalTf::new(e.num.clone(), e.den.clone())?;
        }
        Self::new(tfs, sample_rate)
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    pub fn continuous(&self) -> &[Vec<RationalTf>] {
        &self.tfs
    }

    /// Frequency response of the sampled plant, `G_d(e^{jωT})`, at each
    /// angular frequency.
    pub fn frequency_response(&self, freqs: &[f64]) -> Vec<DMatrix<Complex64>> {
        let (no, ni) = (self.discrete.len(), self.discrete[0].len());
        freqs
            .iter()
            .map(|&w| {
                let z = Complex64::from_polar(1.0, w / self.sample_rate);
                DMatrix::from_fn(no, ni, |i, j| {
                    self.discrete[i][j].as_ref().map_or(Complex64::new(0.0, 0.0), |d| d.response(z))
                })
            })
            .collect()
    }
}

impl Plant for LtiPlant {
    fn n_inputs(&self) -> usize {
        self.discrete[0].len()
    }

    fn n_outputs(&self) -> usize {
        self.discrete.len()
    }

    fn execute(&mut self, u: &TimeSeries) -> Result<Execution> {
        if (u.sample_rate() - self.sample_rate).abs() > 1e-9 * self.sample_rate {
            return Err(Error::invalid("input sample rate differs from the plant's"));
        }
        let ni = self.n_inputs();
        if u.n_channels() < ni {
            return Err(Error::invalid("not enough input channels"));
        }
        let n = u.len();
        let total = (n + self.pad).max(2);
        let spectra = (0..ni)
            .map(|j| {
                let mut x = u.channel(j).to_vec();
                x.resize(total, 0.0);
                forward_transform(&x, self.sample_rate)
            })
            .collect::<Result<Vec<_>>>()?;
        let freqs = spectra[0].frequencies().to_vec();
        let g = self.frequency_response(&freqs);
        let mut outputs = Vec::with_capacity(self.n_outputs());
        for i in 0..self.n_outputs() {
            let mut acc = vec![Complex64::new(0.0, 0.0); freqs.len()];
            for (j, s) in spectra.iter().enumerate() {
                if self.discrete[i][j].is_none() {
                    continue;
                }
                for (k, a) in acc.iter_mut().enumerate() {
                    *a += g[k][(i, j)] * s.values()[k];
                }
            }
            let mut y = inverse_transform(&Spectrum::new(freqs.clone(), acc)?, total, self.sample_rate)?;
            y.truncate(n);
            outputs.push(y);
        }
        let output = TimeSeries::new(self.sample_rate, u.start_time(), output_names(self.n_outputs()), outputs)?;
        Ok(Execution { output, fault: None })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_passes_input() {
        let mut p = LtiPlant::scalar(RationalTf::gain(1.0), 50.0).unwrap();
        let x: Vec<f64> = (0..37).map(|i| (i as f64 * 0.7).sin()).collect();
        let u = TimeSeries::from_channels(50.0, [("u1", x.clone())]).unwrap();
        let y = p.execute(&u).unwrap().output;
        for (a, b) in y.channel(0).iter().zip(&x) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn first_order_step_response() {
        let fs = 100.0;
        let mut p = LtiPlant::scalar(RationalTf::new(vec![1.0], vec![1.0, 1.0]).unwrap(), fs).unwrap();
        let u = TimeSeries::from_channels(fs, [("u1", vec![1.0; 800])]).unwrap();
        let y = p.execute(&u).unwrap().output;
        let dev = y
            .channel(0)
            .iter()
            .enumerate()
            .map(|(i, v)| (v - (1.0 - (-(i as f64) / fs).exp())).abs())
            .fold(0.0, f64::max);
        assert!(dev < 1e-6, "max deviation {dev}");
    }

    #[test]
    fn diagonal_plant_has_no_cross_talk() {
        let fs = 100.0;
        let mut p = LtiPlant::diagonal(RationalTf::second_order(10.0, 0.5), RationalTf::new(vec![2.0], vec![1.0, 4.0]).unwrap(), fs)
            .unwrap();
        let x: Vec<f64> = (0..300).map(|i| (i as f64 * 0.05).sin()).collect();
        let u = TimeSeries::from_channels(fs, [("u1", x), ("u2", vec![0.0; 300])]).unwrap();
        let y = p.execute(&u).unwrap().output;
        assert!(y.channel(1).iter().all(|v| *v == 0.0));
        assert!(y.channel(0).iter().any(|v| v.abs() > 0.1));
    }

    #[test]
    fn unstable_rejected() {
        assert!(LtiPlant::scalar(RationalTf::new(vec![1.0], vec![1.0, -1.0]).unwrap(), 100.0).is_err());
        assert!(RationalTf::new(vec![1.0, 0.0, 0.0], vec![1.0, 1.0]).is_err());
    }

    #[test]
    fn dc_response_matches_continuous() {
        let tf = RationalTf::second_order(4.0 * std::f64::consts::PI, 0.7);
        let p = LtiPlant::scalar(tf.clone(), 100.0).unwrap();
        let g = p.frequency_response(&[0.0, 2.0]);
        assert!((g[0][(0, 0)] - Complex64::new(1.0, 0.0)).norm() < 1e-12);
        // ZOH adds about half a sample of delay
        let cont = tf.eval(Complex64::new(0.0, 2.0)) * Complex64::from_polar(1.0, -2.0 * 0.005);
        assert!((g[1][(0, 0)] - cont).norm() < 1e-3);
    }

    #[test]
    fn spec_parses_from_toml() {
        let text = "inputs = 1\noutputs = 1\n[[entry]]\noutput = 0\ninput = 0\nnum = [1.0]\nden = [1.0, 1.0]\n";
        let spec: LtiSpec = toml::from_str(text).unwrap();
        assert!(LtiPlant::from_spec(&spec, 100.0).is_ok());
    }
}
