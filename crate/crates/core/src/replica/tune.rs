//! Minimizing the predicted distortion over regularizer parameters.
//!
//! One free variable: a grid scan brackets the minimum, then golden-section
//! search narrows it. Several free variables: coordinate descent over the same
//! one-dimensional search. Positive ranges are searched on a log scale.

use super::{rs_solve, RsOptions, RsProblem, RsSolution, RsState};
use crate::error::{Error, Result};
use crate::regularizers::{Domain, RegKind};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FreeVar {
    /// `λ_j` of one terminal.
    Lambda(usize),
    /// All `λ_j` set to the same value.
    LambdaAll,
    Weight,
    Phi,
    Alpha,
    /// Box half-width `B`.
    Bound,
}

impl FreeVar {
    pub fn name(self) -> String {
        match self {
            FreeVar::Lambda(j) => format!("lambda.{}", j + 1),
            FreeVar::LambdaAll => "lambda".into(),
            FreeVar::Weight => "weight".into(),
            FreeVar::Phi => "phi".into(),
            FreeVar::Alpha => "alpha".into(),
            FreeVar::Bound => "bound".into(),
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "lambda" => FreeVar::LambdaAll,
            "weight" => FreeVar::Weight,
            "phi" => FreeVar::Phi,
            "alpha" => FreeVar::Alpha,
            "bound" => FreeVar::Bound,
            _ => {
                let j: usize = s.strip_prefix("lambda.")?.parse().ok()?;
                FreeVar::Lambda(j.checked_sub(1)?)
            }
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FreeParam {
    pub var: FreeVar,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TuneOptions {
    pub solve: RsOptions,
    /// Width at which a one-dimensional search stops: relative for log-scale
    /// variables, a fraction of the range otherwise.
    pub rel_tol: f64,
    pub grid_points: usize,
    pub max_sweeps: usize,
}

impl Default for TuneOptions {
    fn default() -> Self {
        TuneOptions {
            solve: RsOptions::default(),
            rel_tol: 1e-3,
            grid_points: 9,
            max_sweeps: 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TuneResult {
    pub values: Vec<f64>,
    pub d: f64,
    pub solution: RsSolution,
    pub evaluations: usize,
    pub failures: usize,
}

fn apply(problem: &mut RsProblem, var: FreeVar, value: f64) -> Result<()> {
    match var {
        FreeVar::Lambda(j) => {
            let t = problem
                .terminals
                .get_mut(j)
                .ok_or_else(|| Error::InvalidParameter(format!("no terminal {}", j + 1)))?;
            t.lambda = value;
        }
        FreeVar::LambdaAll => problem.terminals.iter_mut().for_each(|t| t.lambda = value),
        FreeVar::Weight => problem.spec.weight = value,
        FreeVar::Phi | FreeVar::Alpha => match &mut problem.spec.kind {
            RegKind::TwoDimLasso { phi, alpha } => {
                if var == FreeVar::Phi {
                    *phi = value;
                } else {
                    *alpha = value;
                }
            }
            other => {
                return Err(Error::InvalidParameter(format!("{} is not a parameter of {}", var.name(), other.name())));
            }
        },
        FreeVar::Bound => problem.spec.domain = Domain::Box(value),
    }
    Ok(())
}

/// The template with `values` substituted for the free variables.
pub fn tuned_problem(template: &RsProblem, free: &[FreeParam], values: &[f64]) -> Result<RsProblem> {
    if free.len() != values.len() {
        return Err(Error::Shape(format!("{} free variables, {} values", free.len(), values.len())));
    }
    let mut problem = template.clone();
    for (p, v) in free.iter().zip(values) {
        apply(&mut problem, p.var, *v)?;
    }
    Ok(problem)
}

fn current(problem: &RsProblem, var: FreeVar) -> Option<f64> {
    match var {
        FreeVar::Lambda(j) => problem.terminals.get(j).map(|t| t.lambda),
        FreeVar::LambdaAll => problem.terminals.first().map(|t| t.lambda),
        FreeVar::Weight => Some(problem.spec.weight),
        FreeVar::Phi => match problem.spec.kind {
            RegKind::TwoDimLasso { phi, .. } => Some(phi),
            _ => None,
        },
        FreeVar::Alpha => match problem.spec.kind {
            RegKind::TwoDimLasso { alpha, .. } => Some(alpha),
            _ => None,
        },
        FreeVar::Bound => match problem.spec.domain {
            Domain::Box(b) => Some(b),
            Domain::Reals => None,
        },
    }
}

struct Objective<'a> {
    template: &'a RsProblem,
    free: &'a [FreeParam],
    opts: &'a TuneOptions,
    warm: Option<RsState>,
    best: Option<(Vec<f64>, RsSolution)>,
    evaluations: usize,
    failures: usize,
}

impl Objective<'_> {
    /// Predicted `D` at `values`, `+∞` when the solve fails or stalls.
    fn eval(&mut self, values: &[f64]) -> f64 {
        self.evaluations += 1;
        let mut problem = self.template.clone();
        for (p, v) in self.free.iter().zip(values) {
            if apply(&mut problem, p.var, *v).is_err() {
                self.failures += 1;
                return f64::INFINITY;
            }
        }
        let mut outcome = rs_solve(&problem, self.warm.as_ref(), &self.opts.solve);
        if self.warm.is_some() && !matches!(&outcome, Ok(s) if s.converged) {
            outcome = rs_solve(&problem, None, &self.opts.solve);
        }
        match outcome {
            Ok(sol) if sol.converged && sol.d.is_finite() => {
                let d = sol.d;
                self.warm = Some(sol.state.clone());
                let improves = self.best.as_ref().is_none_or(|(_, b)| d < b.d);
                if improves {
                    self.best = Some((values.to_vec(), sol));
                }
                d
            }
            _ => {
                self.failures += 1;
                f64::INFINITY
            }
        }
    }
}

struct Axis {
    lo: f64,
    hi: f64,
    log: bool,
}

impl Axis {
    fn to_u(&self, x: f64) -> f64 {
        if self.log {
            x.ln()
        } else {
            x
        }
    }

    fn from_u(&self, u: f64) -> f64 {
        let x = if self.log { u.exp() } else { u };
        x.clamp(self.lo, self.hi)
    }

    fn tolerance(&self, rel_tol: f64) -> f64 {
        if self.log {
            rel_tol
        } else {
            rel_tol * (self.hi - self.lo)
        }
    }
}

const INV_PHI: f64 = 0.618_033_988_749_894_9;

/// Minimize along coordinate `k` starting from `values`; returns the best
/// point found (never worse than the start).
fn line_search(obj: &mut Objective, values: &mut [f64], fval: &mut f64, k: usize, axis: &Axis, local: Option<f64>) {
    let tol = axis.tolerance(obj.opts.rel_tol);
    let n = obj.opts.grid_points.max(3);
    let (ulo, uhi) = match local {
        Some(width) => {
            let u = axis.to_u(values[k]);
            ((u - width).max(axis.to_u(axis.lo)), (u + width).min(axis.to_u(axis.hi)))
        }
        None => (axis.to_u(axis.lo), axis.to_u(axis.hi)),
    };
    let mut probe = values.to_vec();
    let mut at = |u: f64, obj: &mut Objective| {
        probe[k] = axis.from_u(u);
        (probe[k], obj.eval(&probe))
    };
    let grid: Vec<f64> = (0..n).map(|i| ulo + (uhi - ulo) * i as f64 / (n - 1) as f64).collect();
    let mut vals = Vec::with_capacity(n);
    for &u in &grid {
        let (x, f) = at(u, obj);
        vals.push(f);
        if f < *fval {
            *fval = f;
            values[k] = x;
        }
    }
    let Some(i) = (0..n).filter(|i| vals[*i].is_finite()).min_by(|a, b| vals[*a].total_cmp(&vals[*b])) else {
        return;
    };
    let (mut a, mut b) = (grid[i.saturating_sub(1)], grid[(i + 1).min(n - 1)]);
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let (_, mut fc) = at(c, obj);
    let (_, mut fd) = at(d, obj);
    while b - a > tol {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = at(c, obj).1;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = at(d, obj).1;
        }
    }
    for (u, f) in [(c, fc), (d, fd)] {
        if f < *fval {
            *fval = f;
            values[k] = axis.from_u(u);
        }
    }
}

/// Tune from the template's current parameter values, clamped into bounds.
pub fn tune_regularizer(template: &RsProblem, free: &[FreeParam], opts: &TuneOptions) -> Result<TuneResult> {
    let start: Vec<f64> = free
        .iter()
        .map(|p| {
            let mid = if p.lo > 0.0 { (p.lo * p.hi).sqrt() } else { 0.5 * (p.lo + p.hi) };
            current(template, p.var).unwrap_or(mid).clamp(p.lo, p.hi)
        })
        .collect();
    tune_regularizer_from(template, free, &start, opts)
}

/// Tune starting at `start`. The start is evaluated first, so the result is
/// never worse than it.
pub fn tune_regularizer_from(
    template: &RsProblem,
    free: &[FreeParam],
    start: &[f64],
    opts: &TuneOptions,
) -> Result<TuneResult> {
    template.validate()?;
    if free.is_empty() || free.len() != start.len() {
        return Err(Error::InvalidParameter("need at least one free variable and a start value for each".into()));
    }
    let axes: Vec<Axis> = free
        .iter()
        .map(|p| {
            if !(p.lo <= p.hi) || !p.lo.is_finite() || !p.hi.is_finite() {
                return Err(Error::InvalidParameter(format!("bounds of {} must be finite and ordered", p.var.name())));
            }
            Ok(Axis { lo: p.lo, hi: p.hi, log: p.lo > 0.0 })
        })
        .collect::<Result<_>>()?;
    let mut probe = template.clone();
    for p in free {
        apply(&mut probe, p.var, p.lo)?;
    }
    let mut obj = Objective { template, free, opts, warm: None, best: None, evaluations: 0, failures: 0 };
    let mut values: Vec<f64> = start.iter().zip(&axes).map(|(v, a)| v.clamp(a.lo, a.hi)).collect();
    let mut fval = obj.eval(&values);
    for sweep in 0..opts.max_sweeps.max(1) {
        let before = values.clone();
        let f_before = fval;
        for (k, axis) in axes.iter().enumerate() {
            let local = (sweep > 0).then(|| {
                let span = axis.to_u(axis.hi) - axis.to_u(axis.lo);
                2.0 * span / (opts.grid_points.max(3) - 1) as f64
            });
            line_search(&mut obj, &mut values, &mut fval, k, axis, local);
        }
        if free.len() == 1 {
            break;
        }
        let moved = values
            .iter()
            .zip(&before)
            .zip(&axes)
            .any(|((v, b), a)| (a.to_u(*v) - a.to_u(*b)).abs() > a.tolerance(opts.rel_tol));
        if !moved || f_before - fval <= 1e-12 * fval.abs() {
            break;
        }
    }
    let (values, solution) = obj.best.ok_or_else(|| {
        Error::AllFailed(format!("{} evaluations, none converged", obj.evaluations))
    })?;
    Ok(TuneResult {
        d: solution.d,
        values,
        solution,
        evaluations: obj.evaluations,
        failures: obj.failures,
    })
}
