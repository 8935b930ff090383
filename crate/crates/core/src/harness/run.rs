use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::config::{PlantSelection, RunConfig};
use super::report::{report, CONVERGENCE_FILE, FAULT_FILE};
use super::trajectory::{generate_seed_trajectory, generate_trajectory};
use crate::convergence::{checked_inverse, iteration_map_spectral_radius, write_diagnostics_csv, GainDiagnostic};
use crate::error::{Error, Result};
use crate::ilc::{
    frequency_gains, local_model, run_learning, GainSummary, GpLearner, IterationRecord, Learner, Observer,
    SeedTrajectory,
};
use crate::plant::{linearized_response, LtiPlant, LtiSpec, Plant, PlantFault, SeaArm};
use crate::signals::{dft_grid, TimeSeries};

/// True plant response at a pose, `(pose, ω) -> G(jω)`; used to check the
/// learned gains against the real plant.
pub type TrueResponse = Box<dyn Fn(&[f64], &[f64]) -> Vec<DMatrix<Complex64>>>;

/// Structured per-iteration summary stored next to the trajectory CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationSummary {
    pub index: usize,
    pub max_abs_error: Vec<f64>,
    pub rms_error: Vec<f64>,
    pub training_len: usize,
    pub model: String,
    pub gains: Option<GainSummary>,
    pub fault: Option<String>,
}

impl From<&IterationRecord> for IterationSummary {
    fn from(r: &IterationRecord) -> Self {
        Self {
            index: r.index,
            max_abs_error: r.max_abs_error.clone(),
            rms_error: r.rms_error.clone(),
            training_len: r.training_len,
            model: r.model_snapshot_ref.clone(),
            gains: r.gains.clone(),
            fault: r.fault.as_ref().map(ToString::to_string),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub dir: PathBuf,
    pub dc_gain: Vec<f64>,
    /// Max error per joint for every executed iteration.
    pub max_errors: Vec<Vec<f64>>,
    pub converged: bool,
    pub fault: Option<PlantFault>,
}

impl RunSummary {
    pub fn initial_max_error(&self) -> Option<&[f64]> {
        self.max_errors.first().map(Vec::as_slice)
    }

    pub fn final_max_error(&self) -> Option<&[f64]> {
        self.max_errors.last().map(Vec::as_slice)
    }
}

/// Plant named by the configuration, plus its exact response when known.
pub fn build_plant(config: &RunConfig) -> Result<(Box<dyn Plant>, Option<TrueResponse>)> {
    match &config.plant {
        PlantSelection::SeaArm => {
            let arm = config.arm_config();
            let params = arm.params.clone();
            let plant = SeaArm::new(arm).map_err(|e| Error::Config(format!("arm: {e}")))?;
            let truth: TrueResponse = Box::new(move |pose: &[f64], freqs: &[f64]| {
                freqs.iter().map(|&w| linearized_response(&params, [pose[0], pose[1]], w)).collect()
            });
            Ok((Box::new(plant), Some(truth)))
        }
        PlantSelection::Lti(path) => {
            let text =
                fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read plant `{path}`: {e}")))?;
            let spec: LtiSpec = toml::from_str(&text).map_err(|e| Error::Config(format!("plant `{path}`: {e}")))?;
            let plant =
                LtiPlant::from_spec(&spec, config.sample_rate).map_err(|e| Error::Config(format!("plant `{path}`: {e}")))?;
            let reference = plant.clone();
            let truth: TrueResponse = Box::new(move |_: &[f64], freqs: &[f64]| reference.frequency_response(freqs));
            Ok((Box::new(plant), Some(truth)))
        }
    }
}

/// Runs the configured experiment and writes its artifacts to
/// `config.out_dir`.
pub fn run_experiment(config: &RunConfig) -> Result<RunSummary> {
    let (mut plant, truth) = build_plant(config)?;
    run_with_plant(config, plant.as_mut(), truth.as_ref())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn write_series(path: &Path, ts: &TimeSeries) -> Result<()> {
    ts.write_csv(create(path)?)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

/// `t, u…, y…, e…` over the samples the plant actually produced.
fn iteration_series(r: &IterationRecord) -> Result<TimeSeries> {
    let n = r.error.len();
    let mut names = Vec::new();
    let mut data = Vec::new();
    for ts in [&r.input, &r.output, &r.error] {
        names.extend(ts.names().iter().cloned());
        data.extend(ts.channels().iter().map(|c| c[..n].to_vec()));
    }
    TimeSeries::new(r.input.sample_rate(), r.input.start_time(), names, data)
}

fn write_convergence(path: &Path, rows: &[(usize, Vec<f64>, Vec<f64>)], channels: usize) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    let mut header = vec!["iteration".to_string()];
    header.extend((1..=channels).map(|i| format!("max_e{i}")));
    header.extend((1..=channels).map(|i| format!("rms_e{i}")));
    w.write_record(&header)?;
    for (k, max, rms) in rows {
        let mut rec = vec![k.to_string()];
        rec.extend(max.iter().chain(rms).map(|v| format!("{v}")));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Persists artifacts as the loop runs so a fault leaves everything up to
/// the faulted iteration on disk.
struct Recorder<'a> {
    dir: &'a Path,
    channels: usize,
    rows: Vec<(usize, Vec<f64>, Vec<f64>)>,
}

impl Observer for Recorder<'_> {
    fn seed_done(&mut self, _seed: &SeedTrajectory, output: &TimeSeries, learner: &dyn Learner) -> Result<()> {
        write_series(&self.dir.join("seed_output.csv"), output)?;
        if let Some(json) = learner.snapshot_json()? {
            fs::write(self.dir.join("models").join("model_seed.json"), json)?;
        }
        Ok(())
    }

    fn iteration_done(&mut self, r: &IterationRecord, learner: &dyn Learner) -> Result<()> {
        let it = self.dir.join("iterations");
        write_series(&it.join(format!("iter_{:03}.csv", r.index)), &iteration_series(r)?)?;
        write_json(&it.join(format!("iter_{:03}.json", r.index)), &IterationSummary::from(r))?;
        if let Some(json) = learner.snapshot_json()? {
            fs::write(self.dir.join("models").join(format!("{}.json", r.model_snapshot_ref)), json)?;
        }
        self.rows.push((r.index, r.max_abs_error.clone(), r.rms_error.clone()));
        write_convergence(&self.dir.join(CONVERGENCE_FILE), &self.rows, self.channels)
    }
}

/// Reference poses for the model tables: each joint in turn at π/2 with the
/// others at zero.
pub fn reference_poses(channels: usize) -> Vec<Vec<f64>> {
    (0..channels)
        .map(|c| (0..channels).map(|j| if j == c { std::f64::consts::FRAC_PI_2 } else { 0.0 }).collect())
        .collect()
}

/// Bode table and gain diagnostics of the final model at one pose.
fn write_pose_tables(
    dir: &Path,
    label: usize,
    pose: &[f64],
    freqs: &[f64],
    learner: &dyn Learner,
    truth: Option<&TrueResponse>,
    config: &RunConfig,
) -> Result<()> {
    let est = local_model(learner, pose, freqs)?;
    let actual = truth.map(|t| t(pose, freqs));
    let n = est.n_outputs();

    let mut w = csv::Writer::from_writer(create(&dir.join(format!("bode_pose_{label}.csv")))?);
    let mut header: Vec<String> = ["omega", "output", "input", "magnitude", "phase", "std"].map(String::from).to_vec();
    if actual.is_some() {
        header.extend(["true_magnitude".to_string(), "true_phase".to_string()]);
    }
    w.write_record(&header)?;
    for (f, &omega) in freqs.iter().enumerate() {
        for i in 0..n {
            for j in 0..est.n_inputs() {
                let g = est.mean[f][(i, j)];
                let mut rec = vec![
                    format!("{omega}"),
                    (i + 1).to_string(),
                    (j + 1).to_string(),
                    format!("{}", g.norm()),
                    format!("{}", g.arg()),
                    format!("{}", est.variance[f][(i, j)].sqrt()),
                ];
                if let Some(a) = &actual {
                    rec.push(format!("{}", a[f][(i, j)].norm()));
                    rec.push(format!("{}", a[f][(i, j)].arg()));
                }
                w.write_record(&rec)?;
            }
        }
    }
    w.flush()?;

    // radius of the iteration map against the real plant when known,
    // otherwise against the model itself
    let gains = frequency_gains(&est, &config.learning)?;
    let mut rows = Vec::with_capacity(freqs.len() * n);
    for (f, g) in gains.iter().enumerate() {
        let check = match checked_inverse(&est.mean[f]) {
            Ok((inv, _)) => {
                let plant = actual.as_ref().map_or(&est.mean[f], |a| &a[f]);
                let rho: Vec<f64> = g.rho.iter().map(|r| if r.is_finite() { *r } else { 0.0 }).collect();
                iteration_map_spectral_radius(plant, &inv, &rho)?
            }
            Err(_) => f64::NAN,
        };
        for c in 0..n {
            rows.push(GainDiagnostic {
                omega: freqs[f],
                channel: c + 1,
                bound: g.bound[c],
                rho: g.rho[c],
                feasible: g.feasible[c],
                spectral_radius_check: check,
            });
        }
    }
    write_diagnostics_csv(&rows, create(&dir.join(format!("gains_pose_{label}.csv")))?)
}

/// [`run_experiment`] against a caller-supplied plant.
pub fn run_with_plant(config: &RunConfig, plant: &mut dyn Plant, truth: Option<&TrueResponse>) -> Result<RunSummary> {
    config.validate()?;
    let fs_ = config.sample_rate;
    let y_full = generate_trajectory(&config.trajectory, fs_)?;
    let n = plant.n_inputs();
    if plant.n_outputs() != n || y_full.n_channels() < n {
        return Err(Error::Config(format!(
            "plant has {n} inputs and {} outputs; the reference has {} channels",
            plant.n_outputs(),
            y_full.n_channels()
        )));
    }
    let y_d = TimeSeries::new(
        fs_,
        y_full.start_time(),
        y_full.names()[..n].to_vec(),
        y_full.channels()[..n].to_vec(),
    )?;

    let dir = PathBuf::from(&config.out_dir);
    fs::create_dir_all(dir.join("iterations"))?;
    fs::create_dir_all(dir.join("models"))?;
    let _ = fs::remove_file(dir.join(FAULT_FILE));
    fs::write(dir.join("config.toml"), config.to_toml()?)?;
    write_series(&dir.join("reference.csv"), &y_d)?;

    let lc = &config.learning;
    let mut learner = GpLearner::new(config.model.settings(n, config.seed)?, lc.max_training_points)?;
    let seed = generate_seed_trajectory(&y_d, lc.param_quantum, lc.window_seconds, &config.seeding)?;
    write_series(&dir.join("seed_input.csv"), &seed.input)?;

    let mut rec = Recorder { dir: &dir, channels: n, rows: Vec::new() };
    write_convergence(&dir.join(CONVERGENCE_FILE), &rec.rows, n)?;
    let outcome = run_learning(plant, &mut learner, &y_d, Some(&seed), None, lc, &mut rec)?;

    if let Some(f) = &outcome.fault {
        let at = match outcome.records.last() {
            Some(r) => format!("iteration {}", r.index),
            None => {
                if let Some(out) = &outcome.seed_output {
                    write_series(&dir.join("seed_output.csv"), out)?;
                }
                "seeding run".to_string()
            }
        };
        fs::write(dir.join(FAULT_FILE), format!("{at}: {f}\n"))?;
    }

    if learner.training_len() > 0 {
        let limit = lc.cutoff(fs_).min(learner.trained_band().unwrap_or(f64::INFINITY));
        let freqs: Vec<f64> = dft_grid(y_d.len(), fs_).into_iter().filter(|w| *w <= limit).collect();
        for (k, pose) in reference_poses(n).iter().enumerate() {
            write_pose_tables(&dir, k + 1, pose, &freqs, &learner, truth, config)?;
        }
    }

    let summary = report(&dir)?;
    fs::write(dir.join("summary.txt"), &summary.text)?;
    Ok(RunSummary {
        dir,
        dc_gain: outcome.dc_gain,
        max_errors: outcome.records.iter().map(|r| r.max_abs_error.clone()).collect(),
        converged: outcome.converged,
        fault: outcome.fault,
    })
}

/// Plant-only execution of an input series.
pub fn simulate(config: &RunConfig, input: &TimeSeries) -> Result<(TimeSeries, Option<PlantFault>)> {
    config.validate()?;
    if (input.sample_rate() - config.sample_rate).abs() > 1e-6 * config.sample_rate {
        return Err(Error::Config(format!(
            "input sampled at {} Hz, configuration expects {} Hz",
            input.sample_rate(),
            config.sample_rate
        )));
    }
    let (mut plant, _) = build_plant(config)?;
    let ex = plant.execute(input)?;
    Ok((ex.output, ex.fault))
}
