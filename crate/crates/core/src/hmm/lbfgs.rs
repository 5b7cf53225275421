//! Limited-memory BFGS with a strong-Wolfe line search.
//!
//! Minimises a smooth function given a closure that writes the gradient and
//! returns the value. Non-finite values are treated as an overshoot by the
//! line search.

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LbfgsConfig {
    pub memory: usize,
    pub max_iterations: usize,
    /// Stop once the relative change of the objective falls below this.
    pub tolerance: f64,
    /// Sufficient-decrease constant.
    pub c1: f64,
    /// Curvature constant.
    pub c2: f64,
    /// Function evaluations allowed per line search.
    pub max_line_search: usize,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        LbfgsConfig {
            memory: 10,
            max_iterations: 100,
            tolerance: 1e-5,
            c1: 1e-4,
            c2: 0.9,
            max_line_search: 40,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Termination {
    Converged,
    GradientVanished,
    MaxIterations,
    LineSearchFailed,
}

#[derive(Clone, Debug)]
pub struct LbfgsResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub evaluations: usize,
    /// Objective at the start point and after each accepted iteration.
    pub trace: Vec<f64>,
    pub termination: Termination,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

struct Point {
    x: Vec<f64>,
    f: f64,
    g: Vec<f64>,
}

struct Problem<F> {
    f: F,
    evaluations: usize,
}

impl<F: FnMut(&[f64], &mut [f64]) -> f64> Problem<F> {
    fn eval(&mut self, x: Vec<f64>) -> Point {
        let mut g = vec![0.0; x.len()];
        let f = (self.f)(&x, &mut g);
        self.evaluations += 1;
        Point { x, f, g }
    }

    fn along(&mut self, base: &Point, dir: &[f64], step: f64) -> Point {
        let x = base.x.iter().zip(dir).map(|(x, d)| x + step * d).collect();
        self.eval(x)
    }
}

fn finite(p: &Point) -> bool {
    p.f.is_finite() && p.g.iter().all(|g| g.is_finite())
}

/// Minimiser of the cubic through `(a, fa, da)` and `(b, fb, db)`, kept
/// away from the interval ends; falls back to bisection.
fn interpolate(a: f64, fa: f64, da: f64, b: f64, fb: f64, db: f64) -> f64 {
    let (lo, hi) = if a < b { (a, b) } else { (b, a) };
    let margin = 0.1 * (hi - lo);
    let d1 = da + db - 3.0 * (fa - fb) / (a - b);
    let disc = d1 * d1 - da * db;
    if disc >= 0.0 && fa.is_finite() && fb.is_finite() {
        let d2 = (b - a).signum() * disc.sqrt();
        let t = b - (b - a) * (db + d2 - d1) / (db - da + 2.0 * d2);
        if t.is_finite() && t > lo + margin && t < hi - margin {
            return t;
        }
    }
    0.5 * (a + b)
}

/// Strong-Wolfe line search. Returns the accepted point or `None`.
fn line_search<F: FnMut(&[f64], &mut [f64]) -> f64>(
    problem: &mut Problem<F>,
    start: &Point,
    dir: &[f64],
    initial: f64,
    cfg: &LbfgsConfig,
) -> Option<(Point, f64)> {
    let f0 = start.f;
    let d0 = dot(&start.g, dir);
    let sufficient = |a: f64, p: &Point| finite(p) && p.f <= f0 + cfg.c1 * a * d0;
    let curvature = |p: &Point| dot(&p.g, dir).abs() <= -cfg.c2 * d0;

    let mut prev_a = 0.0;
    let mut prev_f = f0;
    let mut prev_d = d0;
    let mut a = initial;
    let mut budget = cfg.max_line_search;
    // Bracketing phase.
    let (mut lo, mut hi) = loop {
        if budget == 0 {
            return None;
        }
        budget -= 1;
        let p = problem.along(start, dir, a);
        if !sufficient(a, &p) || (prev_a > 0.0 && p.f >= prev_f) {
            let fa = if finite(&p) { p.f } else { f64::INFINITY };
            let da = if finite(&p) { dot(&p.g, dir) } else { f64::NAN };
            break ((prev_a, prev_f, prev_d), (a, fa, da));
        }
        if curvature(&p) {
            return Some((p, a));
        }
        let d = dot(&p.g, dir);
        if d >= 0.0 {
            break ((a, p.f, d), (prev_a, prev_f, prev_d));
        }
        prev_a = a;
        prev_f = p.f;
        prev_d = d;
        a *= 2.0;
    };
    // Zoom phase.
    while budget > 0 {
        budget -= 1;
        let t = if hi.1.is_finite() && hi.2.is_finite() {
            interpolate(lo.0, lo.1, lo.2, hi.0, hi.1, hi.2)
        } else {
            0.5 * (lo.0 + hi.0)
        };
        let p = problem.along(start, dir, t);
        if !sufficient(t, &p) || p.f >= lo.1 {
            let ft = if finite(&p) { p.f } else { f64::INFINITY };
            let dt = if finite(&p) { dot(&p.g, dir) } else { f64::NAN };
            hi = (t, ft, dt);
        } else {
            if curvature(&p) {
                return Some((p, t));
            }
            let d = dot(&p.g, dir);
            if d * (hi.0 - lo.0) >= 0.0 {
                hi = lo;
            }
            lo = (t, p.f, d);
        }
        if (hi.0 - lo.0).abs() < 1e-16 * lo.0.abs().max(1.0) {
            break;
        }
    }
    // Fall back to the best point with sufficient decrease, if any.
    if lo.0 > 0.0 {
        let p = problem.along(start, dir, lo.0);
        if sufficient(lo.0, &p) {
            return Some((p, lo.0));
        }
    }
    None
}

/// Minimise `f` from `x0`. The closure receives the point and a gradient
/// buffer to fill and returns the objective value.
pub fn minimize<F>(f: F, x0: Vec<f64>, cfg: &LbfgsConfig) -> LbfgsResult
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let mut problem = Problem { f, evaluations: 0 };
    let mut current = problem.eval(x0);
    let mut trace = vec![current.f];
    let mut history: std::collections::VecDeque<(Vec<f64>, Vec<f64>, f64)> = Default::default();
    let mut termination = Termination::MaxIterations;
    let mut iterations = 0;

    if !finite(&current) {
        termination = Termination::LineSearchFailed;
    }
    while termination == Termination::MaxIterations && iterations < cfg.max_iterations {
        let gnorm = dot(&current.g, &current.g).sqrt();
        if gnorm == 0.0 {
            termination = Termination::GradientVanished;
            break;
        }
        // Two-loop recursion for the search direction.
        let mut q = current.g.clone();
        let mut alphas = Vec::with_capacity(history.len());
        for (s, y, rho) in history.iter().rev() {
            let a = rho * dot(s, &q);
            q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
            alphas.push(a);
        }
        if let Some((s, y, _)) = history.back() {
            let gamma = dot(s, y) / dot(y, y);
            q.iter_mut().for_each(|qi| *qi *= gamma);
        }
        for ((s, y, rho), a) in history.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &q);
            q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a - b) * si);
        }
        let mut dir: Vec<f64> = q.into_iter().map(|v| -v).collect();
        let mut initial = 1.0;
        if history.is_empty() || dot(&dir, &current.g) >= 0.0 {
            history.clear();
            dir = current.g.iter().map(|g| -g).collect();
            initial = 1.0 / gnorm;
        }

        let Some((next, _step)) = line_search(&mut problem, &current, &dir, initial, cfg) else {
            log::warn!("line search failed after {iterations} iterations; keeping best point");
            termination = Termination::LineSearchFailed;
            break;
        };
        iterations += 1;
        let s: Vec<f64> = next.x.iter().zip(&current.x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = next.g.iter().zip(&current.g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-10 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() {
            if history.len() == cfg.memory {
                history.pop_front();
            }
            history.push_back((s, y, 1.0 / sy));
        }
        let change = (current.f - next.f).abs() / current.f.abs().max(next.f.abs()).max(1.0);
        current = next;
        trace.push(current.f);
        if change < cfg.tolerance {
            termination = Termination::Converged;
        }
    }
    LbfgsResult {
        value: current.f,
        x: current.x,
        iterations,
        evaluations: problem.evaluations,
        trace,
        termination,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rosenbrock(x: &[f64], g: &mut [f64]) -> f64 {
        let (a, b) = (x[0], x[1]);
        g[0] = -2.0 * (1.0 - a) - 400.0 * a * (b - a * a);
        g[1] = 200.0 * (b - a * a);
        (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2)
    }

    #[test]
    fn solves_rosenbrock() {
        let cfg = LbfgsConfig { tolerance: 1e-14, max_iterations: 500, ..Default::default() };
        let r = minimize(rosenbrock, vec![-1.2, 1.0], &cfg);
        assert!((r.x[0] - 1.0).abs() < 1e-5 && (r.x[1] - 1.0).abs() < 1e-5, "{:?}", r);
        assert!(r.trace.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn quadratic_is_exact() {
        // f = sum_i (i+1) (x_i - i)^2
        let f = |x: &[f64], g: &mut [f64]| {
            let mut v = 0.0;
            for i in 0..x.len() {
                let w = (i + 1) as f64;
                v += w * (x[i] - i as f64).powi(2);
                g[i] = 2.0 * w * (x[i] - i as f64);
            }
            v
        };
        let r = minimize(f, vec![0.0; 6], &LbfgsConfig { tolerance: 1e-15, ..Default::default() });
        for (i, x) in r.x.iter().enumerate() {
            assert!((x - i as f64).abs() < 1e-6);
        }
    }

    #[test]
    fn zero_budget_returns_start() {
        let r = minimize(rosenbrock, vec![0.5, 0.5], &LbfgsConfig { max_iterations: 0, ..Default::default() });
        assert_eq!(r.x, vec![0.5, 0.5]);
        assert_eq!(r.iterations, 0);
        assert_eq!(r.termination, Termination::MaxIterations);
    }

    #[test]
    fn survives_non_finite_regions() {
        // -log(x) + x has its minimum at 1 and is undefined for x <= 0.
        let f = |x: &[f64], g: &mut [f64]| {
            if x[0] <= 0.0 {
                g[0] = f64::NAN;
                return f64::INFINITY;
            }
            g[0] = 1.0 - 1.0 / x[0];
            x[0] - x[0].ln()
        };
        let r = minimize(f, vec![5.0], &LbfgsConfig { tolerance: 1e-14, ..Default::default() });
        assert!((r.x[0] - 1.0).abs() < 1e-5, "{:?}", r);
    }
}
