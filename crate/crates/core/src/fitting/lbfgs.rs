//! Limited-memory BFGS with optional box bounds.
//!
//! Search directions come from the usual two-loop recursion restricted to the
//! free variables (those not pinned at a bound by the gradient). Steps are
//! taken along the straight line up to the first bound with a strong-Wolfe
//! line search; when that first bound is too close to make progress, a
//! projected Armijo backtracking search along `P(x + αd)` is used instead.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub max_iterations: usize,
    /// Stop when `‖P(x − g) − x‖∞` falls below this.
    pub gradient_tolerance: f64,
    pub memory: usize,
    /// Sufficient-decrease constant.
    pub c1: f64,
    /// Curvature constant.
    pub c2: f64,
    /// Box bounds per variable; `None` means unbounded.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bounds: Option<Vec<(f64, f64)>>,
    /// Multi-start count used by the fitters.
    pub restarts: usize,
    pub seed: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            max_iterations: 2000,
            gradient_tolerance: 1e-7,
            memory: 10,
            c1: 1e-4,
            c2: 0.9,
            bounds: None,
            restarts: 4,
            seed: 0,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gradient_tolerance > 0.0) {
            return Err(Error::Input("gradient tolerance must be positive".into()));
        }
        if !(0.0 < self.c1 && self.c1 < self.c2 && self.c2 < 1.0) {
            return Err(Error::Input("line search constants must satisfy 0 < c1 < c2 < 1".into()));
        }
        if self.memory == 0 {
            return Err(Error::Input("L-BFGS memory must be at least 1".into()));
        }
        if let Some(b) = &self.bounds {
            if b.iter().any(|(lo, hi)| !(lo <= hi)) {
                return Err(Error::Input("bounds must satisfy lo <= hi".into()));
            }
        }
        Ok(())
    }

    pub fn with_bounds(&self, bounds: Vec<(f64, f64)>) -> Self {
        Self { bounds: Some(bounds), ..self.clone() }
    }
}

/// One accepted iterate. Row 0 is the starting point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub objective: f64,
    pub gradient_norm: f64,
    pub step_length: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    GradientTolerance,
    MaxIterations,
    /// No step along the search direction decreased the objective.
    NoProgress,
    /// The observer asked to stop.
    Stopped,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
    pub termination: Termination,
    pub trace: Vec<TraceRow>,
}

impl Minimum {
    pub fn converged(&self) -> bool {
        self.termination == Termination::GradientTolerance
    }
}

/// What the observer sees after every accepted iterate.
pub struct Progress<'a> {
    pub iteration: usize,
    pub x: &'a [f64],
    pub f: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Control {
    Continue,
    Stop,
}

/// Minimizes `f`, which returns the objective and writes the gradient into its
/// second argument.
pub fn lbfgs_minimize<F>(f: F, x0: &[f64], cfg: &OptimizerConfig) -> Result<Minimum>
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    lbfgs_minimize_observed(f, x0, cfg, |_| Control::Continue)
}

pub fn lbfgs_minimize_observed<F, O>(mut f: F, x0: &[f64], cfg: &OptimizerConfig, mut observe: O) -> Result<Minimum>
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
    O: FnMut(&Progress<'_>) -> Control,
{
    cfg.validate()?;
    let n = x0.len();
    let bounds = cfg.bounds.as_deref();
    if let Some(b) = bounds {
        if b.len() != n {
            return Err(Error::Shape(format!("{} bounds for {n} variables", b.len())));
        }
    }
    let mut x = x0.to_vec();
    if let Some(b) = bounds {
        project(&mut x, b);
    }
    let mut g = vec![0.0; n];
    let mut fx = f(&x, &mut g);
    let mut trace = Vec::new();
    if !fx.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Err(Error::Diverged { reason: "objective not finite at the starting point".into(), trace });
    }
    trace.push(TraceRow {
        iteration: 0,
        objective: fx,
        gradient_norm: projected_grad_norm(&x, &g, bounds),
        step_length: 0.0,
    });

    let mut memory: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(cfg.memory);
    let mut termination = Termination::MaxIterations;
    let mut iteration = 0;
    if observe(&Progress { iteration: 0, x: &x, f: fx }) == Control::Stop {
        termination = Termination::Stopped;
    } else if trace[0].gradient_norm <= cfg.gradient_tolerance {
        termination = Termination::GradientTolerance;
    } else {
        while iteration < cfg.max_iterations {
            let free = free_mask(&x, &g, bounds);
            let mut d = two_loop(&g, &free, &memory);
            let mut slope = dot(&g, &d);
            if !(slope < 0.0) {
                memory.clear();
                d = free.iter().zip(&g).map(|(&fr, &gi)| if fr { -gi } else { 0.0 }).collect();
                slope = dot(&g, &d);
                if !(slope < 0.0) {
                    termination = Termination::GradientTolerance;
                    break;
                }
            }
            let alpha_init = if memory.is_empty() { (1.0 / norm2(&d)).min(1.0) } else { 1.0 };
            let alpha_max = bounds.map_or(f64::INFINITY, |b| max_feasible_step(&x, &d, b));

            let mut accepted = None;
            if alpha_max > 1e-10 * alpha_init {
                accepted = wolfe_search(&mut f, &x, fx, &d, slope, alpha_init, alpha_max, cfg, &trace)?;
            }
            if accepted.is_none() {
                if let Some(b) = bounds {
                    accepted = projected_backtrack(&mut f, &x, fx, &g, &d, b, cfg.c1);
                }
            }
            let Some(step) = accepted else {
                termination = Termination::NoProgress;
                break;
            };

            let mut x_new = step.x;
            if let Some(b) = bounds {
                project(&mut x_new, b);
            }
            let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
            let y: Vec<f64> = step.g.iter().zip(&g).map(|(a, b)| a - b).collect();
            let sy = dot(&s, &y);
            if sy > 1e-12 * norm2(&s) * norm2(&y) && sy > 0.0 {
                if memory.len() == cfg.memory {
                    memory.pop_front();
                }
                memory.push_back((s, y, 1.0 / sy));
            }
            x = x_new;
            g = step.g;
            fx = step.f;
            iteration += 1;
            let gnorm = projected_grad_norm(&x, &g, bounds);
            trace.push(TraceRow { iteration, objective: fx, gradient_norm: gnorm, step_length: step.alpha });
            if observe(&Progress { iteration, x: &x, f: fx }) == Control::Stop {
                termination = Termination::Stopped;
                break;
            }
            if gnorm <= cfg.gradient_tolerance {
                termination = Termination::GradientTolerance;
                break;
            }
        }
    }
    Ok(Minimum { x, f: fx, iterations: iteration, termination, trace })
}

struct Step {
    alpha: f64,
    x: Vec<f64>,
    f: f64,
    g: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn project(x: &mut [f64], bounds: &[(f64, f64)]) {
    for (xi, &(lo, hi)) in x.iter_mut().zip(bounds) {
        *xi = xi.clamp(lo, hi);
    }
}

fn projected_grad_norm(x: &[f64], g: &[f64], bounds: Option<&[(f64, f64)]>) -> f64 {
    match bounds {
        None => g.iter().fold(0.0, |m, v| m.max(v.abs())),
        Some(b) => x
            .iter()
            .zip(g)
            .zip(b)
            .map(|((&xi, &gi), &(lo, hi))| ((xi - gi).clamp(lo, hi) - xi).abs())
            .fold(0.0, f64::max),
    }
}

/// Variables that may move: not sitting on a bound with the gradient pushing
/// outward.
fn free_mask(x: &[f64], g: &[f64], bounds: Option<&[(f64, f64)]>) -> Vec<bool> {
    match bounds {
        None => vec![true; x.len()],
        Some(b) => x
            .iter()
            .zip(g)
            .zip(b)
            .map(|((&xi, &gi), &(lo, hi))| {
                let tol_lo = 1e-12 * (1.0 + lo.abs());
                let tol_hi = 1e-12 * (1.0 + hi.abs());
                lo < hi && !((xi <= lo + tol_lo && gi > 0.0) || (xi >= hi - tol_hi && gi < 0.0))
            })
            .collect(),
    }
}

fn two_loop(g: &[f64], free: &[bool], memory: &VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let mut q: Vec<f64> = g.iter().zip(free).map(|(&gi, &fr)| if fr { gi } else { 0.0 }).collect();
    let mut alphas = Vec::with_capacity(memory.len());
    for (s, y, rho) in memory.iter().rev() {
        let a = rho * dot(s, &q);
        for (qi, yi) in q.iter_mut().zip(y) {
            *qi -= a * yi;
        }
        alphas.push(a);
    }
    if let Some((s, y, _)) = memory.back() {
        let gamma = dot(s, y) / dot(y, y);
        q.iter_mut().for_each(|v| *v *= gamma);
    }
    for ((s, y, rho), a) in memory.iter().zip(alphas.iter().rev()) {
        let b = rho * dot(y, &q);
        for (qi, si) in q.iter_mut().zip(s) {
            *qi += (a - b) * si;
        }
    }
    q.iter().zip(free).map(|(&qi, &fr)| if fr { -qi } else { 0.0 }).collect()
}

fn max_feasible_step(x: &[f64], d: &[f64], bounds: &[(f64, f64)]) -> f64 {
    let mut a = f64::INFINITY;
    for ((&xi, &di), &(lo, hi)) in x.iter().zip(d).zip(bounds) {
        if di > 0.0 {
            a = a.min((hi - xi) / di);
        } else if di < 0.0 {
            a = a.min((lo - xi) / di);
        }
    }
    a.max(0.0)
}

/// Strong-Wolfe line search (bracketing + zoom) on `[0, alpha_max]`. Reaching
/// `alpha_max` with sufficient decrease is accepted; the bound then becomes
/// active.
#[allow(clippy::too_many_arguments)]
fn wolfe_search<F>(
    f: &mut F,
    x: &[f64],
    f0: f64,
    d: &[f64],
    slope0: f64,
    alpha_init: f64,
    alpha_max: f64,
    cfg: &OptimizerConfig,
    trace: &[TraceRow],
) -> Result<Option<Step>>
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    const MAX_EVALS: usize = 40;
    let (c1, c2) = (cfg.c1, cfg.c2);
    let n = x.len();
    let mut evals = 0;
    let mut any_finite = false;
    let mut eval = |alpha: f64, evals: &mut usize| -> Step {
        *evals += 1;
        let xa: Vec<f64> = x.iter().zip(d).map(|(xi, di)| xi + alpha * di).collect();
        let mut ga = vec![0.0; n];
        let fa = f(&xa, &mut ga);
        Step { alpha, x: xa, f: fa, g: ga }
    };
    let finite = |s: &Step| s.f.is_finite() && s.g.iter().all(|v| v.is_finite());

    let mut prev_alpha = 0.0;
    let mut prev_f = f0;
    let mut prev_slope = slope0;
    let mut prev_step: Option<Step> = None;
    let mut alpha = alpha_init.min(alpha_max);
    let mut lo;
    let mut hi;
    loop {
        if evals >= MAX_EVALS {
            return finish(prev_step, any_finite, trace);
        }
        let st = eval(alpha, &mut evals);
        if !finite(&st) {
            // Too far: shrink toward the last good point.
            alpha = prev_alpha + 0.25 * (alpha - prev_alpha);
            if alpha - prev_alpha <= 1e-16 * (1.0 + prev_alpha) {
                return finish(prev_step, any_finite, trace);
            }
            continue;
        }
        any_finite = true;
        let slope = dot(&st.g, d);
        if st.f > f0 + c1 * alpha * slope0 || (prev_step.is_some() && st.f >= prev_f) {
            lo = (prev_alpha, prev_f, prev_slope, prev_step);
            hi = (alpha, st.f, slope, Some(st));
            break;
        }
        if slope.abs() <= -c2 * slope0 {
            return Ok(Some(st));
        }
        if slope >= 0.0 {
            lo = (alpha, st.f, slope, Some(st));
            hi = (prev_alpha, prev_f, prev_slope, prev_step);
            break;
        }
        if alpha >= alpha_max {
            return Ok(Some(st));
        }
        prev_alpha = alpha;
        prev_f = st.f;
        prev_slope = slope;
        prev_step = Some(st);
        alpha = (alpha * 4.0).min(alpha_max);
    }

    // Zoom: `lo` always satisfies sufficient decrease and has the lowest
    // objective seen so far.
    loop {
        if evals >= MAX_EVALS {
            return finish(lo.3, any_finite, trace);
        }
        let (a_lo, f_lo, s_lo) = (lo.0, lo.1, lo.2);
        let (a_hi, f_hi, s_hi) = (hi.0, hi.1, hi.2);
        let width = (a_hi - a_lo).abs();
        if width <= 1e-14 * a_lo.abs().max(a_hi.abs()).max(1e-300) {
            return finish(lo.3, any_finite, trace);
        }
        let mut a = cubic_min(a_lo, f_lo, s_lo, a_hi, f_hi, s_hi);
        let (left, right) = if a_lo < a_hi { (a_lo, a_hi) } else { (a_hi, a_lo) };
        let margin = 0.1 * width;
        if !a.is_finite() || a < left + margin || a > right - margin {
            a = 0.5 * (a_lo + a_hi);
        }
        let st = eval(a, &mut evals);
        if !finite(&st) {
            hi = (a, f64::INFINITY, 0.0, None);
            continue;
        }
        any_finite = true;
        let slope = dot(&st.g, d);
        if st.f > f0 + c1 * a * slope0 || st.f >= f_lo {
            hi = (a, st.f, slope, Some(st));
        } else {
            if slope.abs() <= -c2 * slope0 {
                return Ok(Some(st));
            }
            if slope * (a_hi - a_lo) >= 0.0 {
                hi = lo;
            }
            lo = (a, st.f, slope, Some(st));
        }
    }
}

fn finish(best: Option<Step>, any_finite: bool, trace: &[TraceRow]) -> Result<Option<Step>> {
    match best {
        Some(s) => Ok(Some(s)),
        None if !any_finite => Err(Error::Diverged {
            reason: "objective not finite anywhere along the search direction".into(),
            trace: trace.to_vec(),
        }),
        None => Ok(None),
    }
}

/// Minimizer of the cubic interpolating values and slopes at two points.
fn cubic_min(a: f64, fa: f64, ga: f64, b: f64, fb: f64, gb: f64) -> f64 {
    if !fb.is_finite() {
        return f64::NAN;
    }
    let d1 = ga + gb - 3.0 * (fa - fb) / (a - b);
    let disc = d1 * d1 - ga * gb;
    if disc < 0.0 {
        return f64::NAN;
    }
    let d2 = (b - a).signum() * disc.sqrt();
    b - (b - a) * (gb + d2 - d1) / (gb - ga + 2.0 * d2)
}

fn projected_backtrack<F>(
    f: &mut F,
    x: &[f64],
    f0: f64,
    g: &[f64],
    d: &[f64],
    bounds: &[(f64, f64)],
    c1: f64,
) -> Option<Step>
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let mut alpha = 1.0;
    for _ in 0..50 {
        let mut xa: Vec<f64> = x.iter().zip(d).map(|(xi, di)| xi + alpha * di).collect();
        project(&mut xa, bounds);
        let decrease: f64 = g.iter().zip(xa.iter().zip(x)).map(|(gi, (a, b))| gi * (a - b)).sum();
        if decrease < 0.0 {
            let mut ga = vec![0.0; x.len()];
            let fa = f(&xa, &mut ga);
            if fa.is_finite() && fa <= f0 + c1 * decrease && fa < f0 {
                return Some(Step { alpha, x: xa, f: fa, g: ga });
            }
        }
        alpha *= 0.5;
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn tight() -> OptimizerConfig {
        OptimizerConfig { gradient_tolerance: 1e-12, max_iterations: 5000, ..Default::default() }
    }

    #[test]
    fn one_dimensional_quadratic() {
        let m = lbfgs_minimize(
            |x, g| {
                g[0] = 2.0 * (x[0] - 3.0);
                (x[0] - 3.0).powi(2)
            },
            &[0.0],
            &tight(),
        )
        .unwrap();
        assert_abs_diff_eq!(m.x[0], 3.0, epsilon = 1e-8);
        assert!(m.converged());
    }

    #[test]
    fn rosenbrock() {
        let m = lbfgs_minimize(
            |x, g| {
                let (a, b) = (x[0], x[1]);
                g[0] = -2.0 * (1.0 - a) - 400.0 * a * (b - a * a);
                g[1] = 200.0 * (b - a * a);
                (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2)
            },
            &[-1.2, 1.0],
            &tight(),
        )
        .unwrap();
        assert_abs_diff_eq!(m.x[0], 1.0, epsilon = 1e-6);
        assert_abs_diff_eq!(m.x[1], 1.0, epsilon = 1e-6);
    }

    #[test]
    fn bound_becomes_active() {
        let cfg = tight().with_bounds(vec![(0.0, 2.0), (-1.0, 1.0)]);
        let m = lbfgs_minimize(
            |x, g| {
                g[0] = 2.0 * (x[0] - 3.0);
                g[1] = 2.0 * (x[1] + 0.5);
                (x[0] - 3.0).powi(2) + (x[1] + 0.5).powi(2)
            },
            &[0.5, 0.5],
            &cfg,
        )
        .unwrap();
        assert_eq!(m.x[0], 2.0);
        assert_abs_diff_eq!(m.x[1], -0.5, epsilon = 1e-9);
        assert!(m.converged());
    }

    #[test]
    fn start_outside_bounds_is_projected() {
        let cfg = tight().with_bounds(vec![(1.0, 4.0)]);
        let m = lbfgs_minimize(
            |x, g| {
                g[0] = 2.0 * x[0];
                x[0] * x[0]
            },
            &[-5.0],
            &cfg,
        )
        .unwrap();
        assert_eq!(m.x[0], 1.0);
    }

    #[test]
    fn non_finite_start_is_diverged() {
        let r = lbfgs_minimize(
            |_, g| {
                g[0] = 0.0;
                f64::NAN
            },
            &[1.0],
            &tight(),
        );
        assert!(matches!(r, Err(Error::Diverged { .. })));
    }

    #[test]
    fn non_finite_region_is_avoided() {
        // log barrier: infinite for x <= 0, minimum at x = 1.
        let m = lbfgs_minimize(
            |x, g| {
                if x[0] <= 0.0 {
                    g[0] = f64::NAN;
                    return f64::INFINITY;
                }
                g[0] = 1.0 - 1.0 / x[0];
                x[0] - x[0].ln()
            },
            &[20.0],
            &tight(),
        )
        .unwrap();
        assert_abs_diff_eq!(m.x[0], 1.0, epsilon = 1e-6);
    }

    #[test]
    fn observer_can_stop() {
        let mut seen = Vec::new();
        let m = lbfgs_minimize_observed(
            |x, g| {
                g[0] = 4.0 * x[0].powi(3);
                x[0].powi(4)
            },
            &[3.0],
            &tight(),
            |p| {
                seen.push(p.iteration);
                if p.iteration == 3 {
                    Control::Stop
                } else {
                    Control::Continue
                }
            },
        )
        .unwrap();
        assert_eq!(m.termination, Termination::Stopped);
        assert_eq!(seen, vec![0, 1, 2, 3]);
    }

    #[test]
    fn invalid_config_rejected() {
        let cfg = OptimizerConfig { c1: 0.95, c2: 0.9, ..Default::default() };
        assert!(lbfgs_minimize(|_, _| 0.0, &[0.0], &cfg).is_err());
    }
}
