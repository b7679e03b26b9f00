//! Box-bounded derivative-free and gradient minimisers used by calibration.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerOptions {
    pub max_iter: usize,
    /// Stop once the objective falls below this value.
    pub f_tol: f64,
    /// Stop once the simplex (or step) is this small relative to the point.
    pub x_tol: f64,
    /// Fresh-simplex restarts from the incumbent after a size-based stop.
    pub restarts: usize,
}

impl Default for OptimizerOptions {
    fn default() -> Self {
        OptimizerOptions {
            max_iter: 5000,
            f_tol: 1e-12,
            x_tol: 1e-10,
            restarts: 8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
    /// Best objective after each iteration; non-increasing.
    pub trace: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct BoxBounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl BoxBounds {
    pub fn clamp(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(v, (lo, hi))| v.clamp(*lo, *hi))
            .collect()
    }

    fn excess_sq(&self, x: &[f64], clamped: &[f64]) -> f64 {
        x.iter().zip(clamped).map(|(a, b)| (a - b) * (a - b)).sum()
    }
}

struct Counted<F> {
    f: F,
    evals: usize,
}

impl<F: FnMut(&[f64]) -> f64> Counted<F> {
    fn call(&mut self, x: &[f64]) -> f64 {
        self.evals += 1;
        (self.f)(x)
    }
}

const PENALTY: f64 = 1.0;

/// Nelder-Mead over a box. Trial points outside the box are scored at their
/// projection plus a quadratic penalty on the excursion, so the incumbent is
/// always feasible after projection.
pub fn nelder_mead<F>(f: F, x0: &[f64], bounds: &BoxBounds, opts: &OptimizerOptions) -> Minimum
where
    F: FnMut(&[f64]) -> f64,
{
    let n = x0.len();
    let mut obj = Counted { f, evals: 0 };
    let eval = |x: &[f64], obj: &mut Counted<F>| {
        let c = bounds.clamp(x);
        let v = obj.call(&c);
        let v = if v.is_nan() { f64::INFINITY } else { v };
        v + PENALTY * bounds.excess_sq(x, &c)
    };

    let start = bounds.clamp(x0);
    let f0 = eval(&start, &mut obj);
    let mut trace = vec![f0];
    if n == 0 || f0 < opts.f_tol {
        return Minimum {
            x: start,
            f: f0,
            iterations: 0,
            evaluations: obj.evals,
            converged: true,
            trace,
        };
    }

    let (alpha, gamma, rho, sigma) = (1.0, 2.0, 0.5, 0.5);
    let mut best_x = start;
    let mut best_f = f0;
    let mut iterations = 0;
    let mut converged = false;

    let mut round_start_f = best_f;
    for round in 0..=opts.restarts {
        // initial simplex around the incumbent, stepping inward at the walls
        let mut simplex: Vec<(Vec<f64>, f64)> = vec![(best_x.clone(), best_f)];
        for i in 0..n {
            let range = bounds.upper[i] - bounds.lower[i];
            let step = if range.is_finite() && range > 0.0 {
                0.1 * range
            } else {
                0.1 * best_x[i].abs().max(1.0)
            };
            let mut v = best_x.clone();
            v[i] = if v[i] + step <= bounds.upper[i] { v[i] + step } else { v[i] - step };
            let fv = eval(&v, &mut obj);
            simplex.push((v, fv));
        }

        let mut size_stop = false;
        while iterations < opts.max_iter {
            simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
            if simplex[0].1 < best_f {
                best_f = simplex[0].1;
                best_x = bounds.clamp(&simplex[0].0);
            }
            if best_f < opts.f_tol {
                converged = true;
                break;
            }
            let scale = simplex[0].0.iter().fold(1.0f64, |m, v| m.max(v.abs()));
            let size = simplex[1..]
                .iter()
                .flat_map(|(v, _)| v.iter().zip(&simplex[0].0).map(|(a, b)| (a - b).abs()))
                .fold(0.0f64, f64::max);
            if size / scale < opts.x_tol {
                size_stop = true;
                break;
            }
            iterations += 1;

            let centroid: Vec<f64> = (0..n)
                .map(|j| simplex[..n].iter().map(|(v, _)| v[j]).sum::<f64>() / n as f64)
                .collect();
            let worst = simplex[n].clone();
            let toward = |coef: f64, from: &[f64]| -> Vec<f64> {
                centroid.iter().zip(from).map(|(c, w)| c + coef * (c - w)).collect()
            };
            let xr = toward(alpha, &worst.0);
            let fr = eval(&xr, &mut obj);
            if fr < simplex[0].1 {
                let xe = toward(alpha * gamma, &worst.0);
                let fe = eval(&xe, &mut obj);
                simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
            } else if fr < simplex[n - 1].1 {
                simplex[n] = (xr, fr);
            } else {
                let (xc, fc) = if fr < worst.1 {
                    let xc = toward(alpha * rho, &worst.0);
                    let fc = eval(&xc, &mut obj);
                    (xc, fc)
                } else {
                    let xc = toward(-rho, &worst.0);
                    let fc = eval(&xc, &mut obj);
                    (xc, fc)
                };
                if fc < worst.1.min(fr) {
                    simplex[n] = (xc, fc);
                } else {
                    let anchor = simplex[0].0.clone();
                    for vertex in simplex.iter_mut().skip(1) {
                        let v: Vec<f64> = anchor
                            .iter()
                            .zip(&vertex.0)
                            .map(|(b, x)| b + sigma * (x - b))
                            .collect();
                        let fv = eval(&v, &mut obj);
                        *vertex = (v, fv);
                    }
                }
            }
            let current = simplex.iter().map(|v| v.1).fold(f64::INFINITY, f64::min);
            trace.push(current.min(best_f));
        }
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        if simplex[0].1 < best_f {
            best_f = simplex[0].1;
            best_x = bounds.clamp(&simplex[0].0);
        }
        if best_f < opts.f_tol {
            converged = true;
        }
        if converged || !size_stop {
            break;
        }
        // collapsed simplex: stop unless the last round still made progress
        if best_f >= round_start_f && round > 0 {
            converged = true;
            break;
        }
        round_start_f = best_f;
        converged = round == opts.restarts;
    }

    // feasible incumbent, scored without penalty
    let f_final = obj.call(&best_x);
    Minimum {
        x: best_x,
        f: f_final,
        iterations,
        evaluations: obj.evals,
        converged,
        trace,
    }
}

/// Projected gradient descent with central differences and backtracking.
pub fn projected_gradient<F>(f: F, x0: &[f64], bounds: &BoxBounds, opts: &OptimizerOptions) -> Minimum
where
    F: FnMut(&[f64]) -> f64,
{
    let n = x0.len();
    let mut obj = Counted { f, evals: 0 };
    let mut x = bounds.clamp(x0);
    let mut fx = obj.call(&x);
    let mut trace = vec![fx];
    let mut step = 1.0;
    let mut iterations = 0;
    let mut converged = fx < opts.f_tol;

    while !converged && iterations < opts.max_iter {
        iterations += 1;
        let mut grad = vec![0.0; n];
        for i in 0..n {
            let h = 1e-6 * x[i].abs().max(1.0);
            let mut up = x.clone();
            let mut dn = x.clone();
            up[i] = (x[i] + h).min(bounds.upper[i]);
            dn[i] = (x[i] - h).max(bounds.lower[i]);
            let width = up[i] - dn[i];
            if width > 0.0 {
                grad[i] = (obj.call(&up) - obj.call(&dn)) / width;
            }
        }
        let gnorm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if gnorm == 0.0 || !gnorm.is_finite() {
            converged = true;
            break;
        }
        // Armijo backtracking on the projected arc; grow the trial step when it is accepted at once
        let mut t = step * 4.0;
        let mut accepted = None;
        for _ in 0..80 {
            let trial: Vec<f64> = x.iter().zip(&grad).map(|(v, g)| v - t * g).collect();
            let trial = bounds.clamp(&trial);
            let decrease: f64 = grad.iter().zip(x.iter().zip(&trial)).map(|(g, (a, b))| g * (a - b)).sum();
            let ft = obj.call(&trial);
            if ft <= fx - 1e-4 * decrease && ft < fx {
                accepted = Some((trial, ft));
                break;
            }
            t *= 0.5;
        }
        let Some((nx, nf)) = accepted else {
            converged = true;
            break;
        };
        step = t;
        let scale = x.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        let moved = x.iter().zip(&nx).map(|(a, b)| (a - b).abs()).fold(0.0f64, f64::max);
        x = nx;
        fx = nf;
        trace.push(fx);
        if fx < opts.f_tol || moved / scale < opts.x_tol {
            converged = true;
        }
    }
    Minimum {
        x,
        f: fx,
        iterations,
        evaluations: obj.evals,
        converged,
        trace,
    }
}
