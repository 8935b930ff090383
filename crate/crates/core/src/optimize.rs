//! Box-constrained Nelder–Mead simplex search.

#[derive(Debug, Clone, Copy)]
pub struct NelderMeadOptions {
    pub max_evals: usize,
    /// Initial simplex edge, in the units of the search space.
    pub initial_step: f64,
    /// Stop when the spread of simplex values drops below this.
    pub f_tolerance: f64,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        Self { max_evals: 200, initial_step: 0.5, f_tolerance: 1e-8 }
    }
}

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub evals: usize,
}

fn clamp_into(x: &mut [f64], bounds: &[(f64, f64)]) {
    for (v, &(lo, hi)) in x.iter_mut().zip(bounds) {
        *v = v.clamp(lo, hi);
    }
}

/// Minimizes `f` starting from `x0`. Points are projected onto `bounds`
/// before every evaluation; non-finite values are treated as `+inf`.
pub fn nelder_mead<F>(mut f: F, x0: &[f64], bounds: &[(f64, f64)], opts: &NelderMeadOptions) -> Minimum
where
    F: FnMut(&[f64]) -> f64,
{
    let d = x0.len();
    assert_eq!(d, bounds.len());
    let evals = std::cell::Cell::new(0usize);
    let mut eval = |x: &mut Vec<f64>| {
        clamp_into(x, bounds);
        evals.set(evals.get() + 1);
        let v = f(x);
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    };

    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(d + 1);
    let mut start = x0.to_vec();
    let v0 = eval(&mut start);
    simplex.push((start.clone(), v0));
    for i in 0..d {
        let mut p = start.clone();
        // step toward the interior when sitting on the upper bound
        let step = if p[i] + opts.initial_step > bounds[i].1 { -opts.initial_step } else { opts.initial_step };
        p[i] += step;
        let v = eval(&mut p);
        simplex.push((p, v));
    }

    while evals.get() < opts.max_evals {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let best = simplex[0].1;
        let worst = simplex[d].1;
        if (worst - best).abs() <= opts.f_tolerance * (1.0 + best.abs()) {
            break;
        }
        let centroid: Vec<f64> = (0..d)
            .map(|k| simplex[..d].iter().map(|(p, _)| p[k]).sum::<f64>() / d as f64)
            .collect();
        let along = |t: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&simplex[d].0)
                .map(|(c, w)| c + t * (c - w))
                .collect()
        };

        let mut reflected = along(1.0);
        let fr = eval(&mut reflected);
        if fr < simplex[0].1 {
            let mut expanded = along(2.0);
            let fe = eval(&mut expanded);
            simplex[d] = if fe < fr { (expanded, fe) } else { (reflected, fr) };
            continue;
        }
        if fr < simplex[d - 1].1 {
            simplex[d] = (reflected, fr);
            continue;
        }
        let (mut contracted, fc) = if fr < simplex[d].1 {
            let mut c = along(0.5);
            let v = eval(&mut c);
            (c, v)
        } else {
            let mut c = along(-0.5);
            let v = eval(&mut c);
            (c, v)
        };
        if fc < simplex[d].1.min(fr) {
            simplex[d] = (std::mem::take(&mut contracted), fc);
            continue;
        }
        // shrink toward the best vertex
        let best_point = simplex[0].0.clone();
        for (p, v) in simplex.iter_mut().skip(1) {
            for (pk, bk) in p.iter_mut().zip(&best_point) {
                *pk = bk + 0.5 * (*pk - bk);
            }
            *v = eval(p);
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (x, value) = simplex.swap_remove(0);
    Minimum { x, value, evals: evals.get() }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finds_rosenbrock_minimum() {
        let rosen = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let opts = NelderMeadOptions { max_evals: 2000, initial_step: 0.5, f_tolerance: 1e-14 };
        let m = nelder_mead(rosen, &[-1.2, 1.0], &[(-5.0, 5.0), (-5.0, 5.0)], &opts);
        assert!((m.x[0] - 1.0).abs() < 1e-3 && (m.x[1] - 1.0).abs() < 1e-3, "{:?}", m.x);
    }

    #[test]
    fn respects_bounds() {
        let f = |x: &[f64]| (x[0] - 10.0).powi(2);
        let m = nelder_mead(f, &[0.0], &[(-1.0, 2.0)], &NelderMeadOptions::default());
        assert!((m.x[0] - 2.0).abs() < 1e-6);
    }

    #[test]
    fn never_worse_than_start() {
        let f = |x: &[f64]| x[0].abs() + (x[1] * 3.0).sin();
        let x0 = [0.3, -0.2];
        let m = nelder_mead(f, &x0, &[(-1.0, 1.0), (-1.0, 1.0)], &NelderMeadOptions::default());
        assert!(m.value <= f(&x0));
    }
}
