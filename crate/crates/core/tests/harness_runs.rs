mod common;

use std::f64::consts::PI;
use std::fs;

use gpilc::harness::{
    build_plant, read_convergence, report, run_experiment, run_with_plant, PlantSelection, RunConfig, TrajectorySpec,
};
use gpilc::plant::{Execution, Plant, PlantFault};
use gpilc::signals::TimeSeries;

fn lti_config(dir: &std::path::Path, iterations: usize) -> RunConfig {
    let plant = common::write_plant(dir);
    let mut c = RunConfig {
        plant: PlantSelection::Lti(plant.display().to_string()),
        trajectory: TrajectorySpec::fast(),
        out_dir: dir.join("run").display().to_string(),
        ..RunConfig::default()
    };
    c.learning.max_iterations = iterations;
    c
}

#[test]
fn lti_run_writes_a_self_describing_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let c = lti_config(tmp.path(), 4);
    let s = run_experiment(&c).unwrap();
    assert!(s.fault.is_none());
    let rows = read_convergence(&s.dir.join("convergence.csv")).unwrap();
    assert_eq!(rows.iter().map(|r| r.iteration).collect::<Vec<_>>(), vec![0, 1, 2, 3, 4]);
    let (first, last) = (s.initial_max_error().unwrap(), s.final_max_error().unwrap());
    for j in 0..2 {
        assert!(last[j] < 0.2 * first[j], "joint {j}: {first:?} -> {last:?}");
    }

    // the stored configuration reproduces the run's settings
    let stored = RunConfig::load(&s.dir.join("config.toml")).unwrap();
    assert_eq!(stored, c);

    let it = TimeSeries::read_csv(fs::File::open(s.dir.join("iterations/iter_002.csv")).unwrap()).unwrap();
    assert_eq!(it.names(), ["u1", "u2", "y1", "y2", "e1", "e2"]);
    for name in ["bode_pose_1.csv", "bode_pose_2.csv", "gains_pose_1.csv", "gains_pose_2.csv", "summary.txt"] {
        assert!(s.dir.join(name).is_file(), "{name} missing");
    }
    assert!(s.dir.join("models/model_004.json").is_file());
    let header = fs::read_to_string(s.dir.join("gains_pose_1.csv")).unwrap();
    assert!(header.starts_with("omega,channel,bound,rho,feasible,spectral_radius_check\n"));

    let r = report(&s.dir).unwrap();
    assert!(r.fault.is_none());
    assert!(r.text.contains("initial max error: ["), "{}", r.text);
    assert!(r.text.contains("G12: signal variance"));
    assert_eq!(r.csv.lines().count(), 6);
}

/// Wraps a plant and flags a divergence on a chosen call.
struct FaultOn {
    inner: Box<dyn Plant>,
    call: usize,
    fault_at: usize,
}

impl Plant for FaultOn {
    fn n_inputs(&self) -> usize {
        self.inner.n_inputs()
    }
    fn n_outputs(&self) -> usize {
        self.inner.n_outputs()
    }
    fn execute(&mut self, u: &TimeSeries) -> gpilc::Result<Execution> {
        let mut ex = self.inner.execute(u)?;
        if self.call == self.fault_at {
            ex.fault = Some(PlantFault::Divergence { time: 1.0, joint: 1 });
        }
        self.call += 1;
        Ok(ex)
    }
}

#[test]
fn fault_keeps_partial_artifacts_and_report_notes_it() {
    let tmp = tempfile::tempdir().unwrap();
    let c = lti_config(tmp.path(), 10);
    let (inner, truth) = build_plant(&c).unwrap();
    // call 0 is the seeding run, so call 4 is iteration 3
    let mut plant = FaultOn { inner, call: 0, fault_at: 4 };
    let s = run_with_plant(&c, &mut plant, truth.as_ref()).unwrap();
    assert!(matches!(s.fault, Some(PlantFault::Divergence { .. })));
    assert_eq!(s.max_errors.len(), 4);

    let r = report(&s.dir).unwrap();
    assert_eq!(r.rows.iter().map(|r| r.iteration).collect::<Vec<_>>(), vec![0, 1, 2, 3]);
    assert!(r.fault.as_deref().unwrap().starts_with("iteration 3:"));
    assert!(r.text.contains("iterations: 0..3"));
    assert!(r.text.contains("FAULT"));
    assert!(s.dir.join("iterations/iter_003.csv").is_file());
    assert!(!s.dir.join("iterations/iter_004.csv").exists());
}

#[test]
fn seeding_fault_is_reported_without_iterations() {
    let tmp = tempfile::tempdir().unwrap();
    let c = lti_config(tmp.path(), 3);
    let (inner, truth) = build_plant(&c).unwrap();
    let mut plant = FaultOn { inner, call: 0, fault_at: 0 };
    let s = run_with_plant(&c, &mut plant, truth.as_ref()).unwrap();
    assert!(s.fault.is_some() && s.max_errors.is_empty());
    let r = report(&s.dir).unwrap();
    assert!(r.fault.as_deref().unwrap().starts_with("seeding run:"));
    assert!(r.text.contains("none completed"));
}

#[test]
fn reference_with_too_few_channels_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let mut c = lti_config(tmp.path(), 1);
    c.trajectory.amplitude = vec![PI / 2.0];
    assert!(matches!(run_experiment(&c), Err(gpilc::Error::Config(_))));
}
