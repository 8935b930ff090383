use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::config::RunConfig;
use super::run::{reference_poses, IterationSummary};
use crate::cgpr::ModelSnapshot;
use crate::error::{Error, Result};

pub const CONVERGENCE_FILE: &str = "convergence.csv";
pub const FAULT_FILE: &str = "fault.txt";

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceRow {
    pub iteration: usize,
    pub max_error: Vec<f64>,
    pub rms_error: Vec<f64>,
}

/// Plain-text and CSV digest of a run directory.
#[derive(Debug, Clone)]
pub struct Report {
    pub text: String,
    pub csv: String,
    pub rows: Vec<ConvergenceRow>,
    pub fault: Option<String>,
}

pub fn read_convergence(path: &Path) -> Result<Vec<ConvergenceRow>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let width = rdr.headers()?.len();
    if width < 3 || width % 2 == 0 {
        return Err(Error::invalid(format!("{} has an unexpected header", path.display())));
    }
    let ch = (width - 1) / 2;
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let num = |i: usize| {
            rec[i].parse::<f64>().map_err(|e| Error::invalid(format!("bad value `{}`: {e}", &rec[i])))
        };
        let iteration = rec[0].parse().map_err(|e| Error::invalid(format!("bad iteration `{}`: {e}", &rec[0])))?;
        let max_error = (1..=ch).map(num).collect::<Result<_>>()?;
        let rms_error = (ch + 1..=2 * ch).map(num).collect::<Result<_>>()?;
        rows.push(ConvergenceRow { iteration, max_error, rms_error });
    }
    Ok(rows)
}

/// Three significant digits, switching to exponent form for small values.
fn sig3(v: f64) -> String {
    if v == 0.0 || (1e-3..1e4).contains(&v.abs()) {
        let digits = if v == 0.0 { 3 } else { (2 - v.abs().log10().floor() as i32).max(0) as usize };
        format!("{v:.digits$}")
    } else {
        format!("{v:.2e}")
    }
}

fn bracket(v: &[f64]) -> String {
    format!("[{}]", v.iter().map(|x| sig3(*x)).collect::<Vec<_>>().join(", "))
}

fn load_summaries(dir: &Path, rows: &[ConvergenceRow]) -> Vec<Option<IterationSummary>> {
    rows.iter()
        .map(|r| {
            let p = dir.join("iterations").join(format!("iter_{:03}.json", r.iteration));
            fs::read_to_string(p).ok().and_then(|s| serde_json::from_str(&s).ok())
        })
        .collect()
}

fn latest_model(dir: &Path, summaries: &[Option<IterationSummary>]) -> Option<ModelSnapshot> {
    let names = summaries
        .iter()
        .rev()
        .flatten()
        .map(|s| s.model.clone())
        .chain(std::iter::once("model_seed".to_string()));
    names
        .filter_map(|m| fs::read_to_string(dir.join("models").join(format!("{m}.json"))).ok())
        .find_map(|s| serde_json::from_str(&s).ok())
}

/// Summarizes a completed or partial run directory.
pub fn report(dir: &Path) -> Result<Report> {
    if !dir.is_dir() {
        return Err(Error::invalid(format!("{} is not a directory", dir.display())));
    }
    let fault = fs::read_to_string(dir.join(FAULT_FILE)).ok().map(|s| s.trim().to_string());
    let conv = dir.join(CONVERGENCE_FILE);
    let rows = if conv.is_file() {
        read_convergence(&conv)?
    } else if fault.is_some() {
        Vec::new()
    } else {
        return Err(Error::invalid(format!("{} holds no run", dir.display())));
    };
    if rows.is_empty() && fault.is_none() {
        return Err(Error::invalid(format!("{} holds no completed iteration", dir.display())));
    }
    let summaries = load_summaries(dir, &rows);
    let config = fs::read_to_string(dir.join("config.toml")).ok().and_then(|s| RunConfig::from_toml(&s).ok());

    let mut t = String::new();
    writeln!(t, "run directory: {}", dir.display()).unwrap();
    if let Some(c) = &config {
        writeln!(t, "plant: {}, trajectory: {:?}, seed: {}", c.plant, c.trajectory.kind, c.seed).unwrap();
    }
    if let (Some(first), Some(last)) = (rows.first(), rows.last()) {
        writeln!(t, "iterations: {}..{}", first.iteration, last.iteration).unwrap();
        writeln!(t, "initial max error: {} rad", bracket(&first.max_error)).unwrap();
        writeln!(t, "final max error: {} rad", bracket(&last.max_error)).unwrap();
        let red: Vec<String> = first
            .max_error
            .iter()
            .zip(&last.max_error)
            .map(|(a, b)| if *a > 0.0 { format!("{:.1}%", 100.0 * (1.0 - b / a)) } else { "n/a".into() })
            .collect();
        writeln!(t, "reduction: [{}]", red.join(", ")).unwrap();
    } else {
        writeln!(t, "iterations: none completed").unwrap();
    }
    if let Some(f) = &fault {
        writeln!(t, "FAULT: {f}; artifacts cover the run up to the fault").unwrap();
    }

    let ch = rows.first().map_or(0, |r| r.max_error.len());
    let mut c = String::from("iteration");
    for i in 1..=ch {
        write!(c, ",max_e{i}").unwrap();
    }
    for i in 1..=ch {
        write!(c, ",rms_e{i}").unwrap();
    }
    c.push_str(",training_len,feasible_fraction,feasible_count,total_count,mean_rho\n");
    if !rows.is_empty() {
        writeln!(t, "\niter  max error (rad)         rms error (rad)         feasible").unwrap();
    }
    for (r, s) in rows.iter().zip(&summaries) {
        let gains = s.as_ref().and_then(|s| s.gains.clone());
        let feasible = gains.as_ref().map_or("-".into(), |g| format!("{:.1}%", 100.0 * g.feasible_fraction));
        writeln!(t, "{:>4}  {:<22}  {:<22}  {feasible}", r.iteration, bracket(&r.max_error), bracket(&r.rms_error))
            .unwrap();
        write!(c, "{}", r.iteration).unwrap();
        for v in r.max_error.iter().chain(&r.rms_error) {
            write!(c, ",{v}").unwrap();
        }
        let tl = s.as_ref().map_or(String::new(), |s| s.training_len.to_string());
        match gains {
            Some(g) => writeln!(
                c,
                ",{tl},{},{},{},{}",
                g.feasible_fraction, g.feasible_count, g.total_count, g.mean_rho
            ),
            None => writeln!(c, ",{tl},,,,"),
        }
        .unwrap();
    }

    if let Some(m) = latest_model(dir, &summaries) {
        writeln!(t, "\nhyperparameters ({} training points per row):", m.points.iter().map(Vec::len).max().unwrap_or(0))
            .unwrap();
        for (i, row) in m.params.iter().enumerate() {
            for (j, k) in row.kernels.iter().enumerate() {
                let ls: Vec<String> = k.length_scales.iter().map(|v| sig3(*v)).collect();
                writeln!(
                    t,
                    "  G{}{}: signal variance {}, length scales [{}]",
                    i + 1,
                    j + 1,
                    sig3(k.signal_variance),
                    ls.join(", ")
                )
                .unwrap();
            }
            writeln!(t, "  row {} noise variance {}", i + 1, sig3(row.noise_variance)).unwrap();
        }
    }

    let tables: Vec<String> = reference_poses(ch.max(1))
        .iter()
        .enumerate()
        .filter(|(k, _)| dir.join(format!("bode_pose_{}.csv", k + 1)).is_file())
        .map(|(k, p)| format!("  bode_pose_{}.csv, gains_pose_{}.csv at pose {}", k + 1, k + 1, bracket(p)))
        .collect();
    if !tables.is_empty() {
        writeln!(t, "\nmodel tables:\n{}", tables.join("\n")).unwrap();
    }
    Ok(Report { text: t, csv: c, rows, fault })
}
