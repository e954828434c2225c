//! Experiment drivers: replica predictions, Monte Carlo validation, region
//! sweeps, tuning curves and spectrum checks, all emitting flat records.
//!
//! Every driver is deterministic in `(config, seed)`. Tasks run on the
//! current rayon pool and results are collected in task order, so the thread
//! count changes wall time only.

pub mod config;
pub mod output;

use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

pub use config::{
    parse_config, read_config, to_text, write_config, ExperimentConfig, Format, Mode, OutputConfig, SimulateConfig,
    SpectrumConfig, SweepConfig, TerminalConfig, TuneConfig,
};
pub use output::{render_records, write_records, Field, ResultRecord, HEADER, SCHEMA_VERSION};

use crate::error::{Error, Result};
use crate::recovery::{rls_solve, score, Instance, SolveOptions};
use crate::regularizers::{Domain, RegKind};
use crate::replica::{
    rs_solve, tune_regularizer, tune_regularizer_from, tuned_problem, FreeParam, FreeVar, RsProblem, RsSolution,
    TerminalParams, TuneResult,
};
use crate::rng::{derive_seed, stream, Purpose};
use crate::signal_model::sample_joint;
use crate::spectra::{empirical_dos, sample_matrix, EnsembleKind, EnsembleSpec};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Records of one run plus point accounting for exit statuses.
#[derive(Clone, Debug, PartialEq)]
pub struct RunOutput {
    pub records: Vec<ResultRecord>,
    pub points: usize,
    pub failed: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Outcome {
    Success,
    Partial,
    AllFailed,
}

impl RunOutput {
    pub fn outcome(&self) -> Outcome {
        match self.failed {
            0 => Outcome::Success,
            f if f >= self.points => Outcome::AllFailed,
            _ => Outcome::Partial,
        }
    }
}

/// Dispatch on the configured mode.
pub fn run(cfg: &ExperimentConfig) -> Result<RunOutput> {
    cfg.validate()?;
    match cfg.mode {
        Mode::Predict => run_predict(cfg),
        Mode::Simulate => run_simulate(cfg),
        Mode::SweepRegion => run_sweep_region(cfg),
        Mode::Tune => run_tune(cfg),
        Mode::Spectrum => run_spectrum(cfg),
    }
}

fn require_mode(cfg: &ExperimentConfig, mode: Mode) -> Result<()> {
    cfg.validate()?;
    if cfg.mode != mode {
        return Err(Error::config("mode", format!("expected {}, got {}", mode.name(), cfg.mode.name())));
    }
    Ok(())
}

/// The replica problem described by the config.
pub fn build_problem(cfg: &ExperimentConfig) -> Result<RsProblem> {
    let terminals = cfg
        .terminals
        .iter()
        .map(|t| Ok(TerminalParams { law: t.ensemble.law()?, lambda: t.lambda, sigma2: t.sigma2 }))
        .collect::<Result<Vec<_>>>()?;
    RsProblem::new(cfg.prior.clone(), cfg.spec, terminals, cfg.distortion)
}

// ---------------------------------------------------------------- records

struct Stamp {
    hash: String,
    seed: u64,
    mode: &'static str,
}

impl Stamp {
    fn new(cfg: &ExperimentConfig) -> Self {
        Stamp { hash: cfg.hash(), seed: cfg.seed, mode: cfg.mode.name() }
    }

    fn record(&self, point: usize, row: &str) -> ResultRecord {
        let mut r = ResultRecord::new();
        r.set("schema", SCHEMA_VERSION)
            .set("version", VERSION)
            .set("config_hash", self.hash.as_str())
            .set("seed", self.seed.to_string())
            .set("mode", self.mode)
            .set("point", point)
            .set("row", row);
        r
    }
}

fn set_problem_inputs(r: &mut ResultRecord, problem: &RsProblem, ensembles: &[EnsembleSpec], j: usize) {
    let spec = &problem.spec;
    let t = &problem.terminals[j];
    r.set("terminal", j + 1)
        .set("ensemble", ensembles[j].kind.name())
        .set("rho", ensembles[j].rho)
        .set("lambda", t.lambda)
        .set("sigma2", t.sigma2)
        .set("mu_c", problem.prior.mu_c)
        .set("mu_0", problem.prior.mu_0)
        .set("mu_j", problem.prior.mu_j[j])
        .set("regularizer", spec.kind.name())
        .set("weight", spec.weight);
    match spec.kind {
        RegKind::Lpq { p, q } => {
            r.set("reg_p", p).set("reg_q", q);
        }
        RegKind::TwoDimLasso { phi, alpha } => {
            r.set("phi", phi).set("alpha", alpha);
        }
        _ => {}
    }
    if let Domain::Box(b) = spec.domain {
        r.set("bound", b);
    }
}

fn set_solution(r: &mut ResultRecord, sol: &RsSolution, j: usize) {
    r.set("q", sol.state.q[j])
        .set("chi", sol.state.chi[j])
        .set("tau", sol.system.tau[j])
        .set("xi2", sol.system.xi2[j])
        .set("iterations", sol.iterations)
        .set("residual", sol.residual)
        .set("converged", sol.converged);
    if sol.converged {
        r.set("d", sol.d).set_opt("d_std_error", sol.d_std_error);
    }
}

/// One row per terminal for a solved (or failed) replica point.
fn point_rows(
    stamp: &Stamp,
    point: usize,
    problem: &RsProblem,
    ensembles: &[EnsembleSpec],
    outcome: &Result<RsSolution>,
    extra: impl Fn(&mut ResultRecord),
) -> Vec<ResultRecord> {
    (0..problem.terminal_count())
        .map(|j| {
            let mut r = stamp.record(point, "point");
            set_problem_inputs(&mut r, problem, ensembles, j);
            match outcome {
                Ok(sol) => {
                    set_solution(&mut r, sol, j);
                    r.set("status", if sol.converged { "ok" } else { "not_converged" });
                }
                Err(e) => {
                    r.set("status", "failed").set("reason", e.to_string());
                }
            }
            extra(&mut r);
            r
        })
        .collect()
}

fn point_ok(outcome: &Result<RsSolution>) -> bool {
    matches!(outcome, Ok(sol) if sol.converged)
}

fn ensembles(cfg: &ExperimentConfig) -> Vec<EnsembleSpec> {
    cfg.terminals.iter().map(|t| t.ensemble.clone()).collect()
}

// ---------------------------------------------------------------- predict

/// Replica prediction at the configured point.
pub fn run_predict(cfg: &ExperimentConfig) -> Result<RunOutput> {
    require_mode(cfg, Mode::Predict)?;
    let stamp = Stamp::new(cfg);
    let problem = build_problem(cfg)?;
    let outcome = rs_solve(&problem, None, &cfg.solver);
    let ok = point_ok(&outcome);
    Ok(RunOutput {
        records: point_rows(&stamp, 0, &problem, &ensembles(cfg), &outcome, |_| {}),
        points: 1,
        failed: usize::from(!ok),
    })
}

// ---------------------------------------------------------------- simulate

/// Outcome of one Monte Carlo trial.
#[derive(Clone, Debug, PartialEq)]
pub struct TrialResult {
    pub d: f64,
    pub iterations: usize,
    pub converged: bool,
    pub objective: f64,
}

/// Draw one problem instance and solve it. Trial `t` only reads streams
/// derived from `(seed, t)`.
pub fn simulate_trial(cfg: &ExperimentConfig, sim: &SimulateConfig, trial: u64) -> Result<TrialResult> {
    let j_count = cfg.terminals.len() as u64;
    let n = sim.n;
    let truth = sample_joint(&cfg.prior, n, derive_seed(cfg.seed, Purpose::Signal, trial))?;
    let mut a = Vec::with_capacity(cfg.terminals.len());
    let mut y = Vec::with_capacity(cfg.terminals.len());
    for (j, t) in cfg.terminals.iter().enumerate() {
        let index = trial * j_count + j as u64;
        let aj = sample_matrix(&t.ensemble, n, derive_seed(cfg.seed, Purpose::Matrix, index))?;
        let mut rng = stream(cfg.seed, Purpose::Noise, index);
        let sd = t.sigma2.sqrt();
        let noise = DVector::from_fn(aj.nrows(), |_, _| sd * rng.sample::<f64, _>(StandardNormal));
        y.push(&aj * truth.x.row(j).transpose() + noise);
        a.push(aj);
    }
    let lambda = cfg.terminals.iter().map(|t| t.lambda).collect();
    let inst = Instance::new(a, y, lambda, cfg.spec, Some(truth.x))?;
    let opts = SolveOptions { max_iter: sim.max_iter, tol: sim.tol, ..SolveOptions::default() };
    let report = rls_solve(&inst, &opts)?;
    Ok(TrialResult {
        d: score(&inst, &report, cfg.distortion)?,
        iterations: report.iterations,
        converged: report.converged,
        objective: *report.objective_trace.last().unwrap_or(&f64::NAN),
    })
}

/// Mean and standard error of a sample; the error needs two or more values.
pub fn mean_and_std_error(values: &[f64]) -> (f64, Option<f64>) {
    let k = values.len() as f64;
    let mean = values.iter().sum::<f64>() / k;
    if values.len() < 2 {
        return (mean, None);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0);
    (mean, Some((var / k).sqrt()))
}

/// Monte Carlo estimate of the finite-size distortion.
pub fn run_simulate(cfg: &ExperimentConfig) -> Result<RunOutput> {
    require_mode(cfg, Mode::Simulate)?;
    let sim = cfg.simulate.ok_or_else(|| Error::config("simulate", "missing"))?;
    let stamp = Stamp::new(cfg);
    let problem = build_problem(cfg)?;
    let ens = ensembles(cfg);

    let trials: Vec<Result<TrialResult>> = (0..sim.trials as u64)
        .into_par_iter()
        .map(|t| simulate_trial(cfg, &sim, t))
        .collect();

    let mut records = Vec::new();
    let mut kept = Vec::new();
    for (t, res) in trials.iter().enumerate() {
        let mut r = stamp.record(t, "trial");
        r.set("n", sim.n);
        match res {
            Ok(tr) => {
                r.set("d", tr.d)
                    .set("iterations", tr.iterations)
                    .set("converged", tr.converged)
                    .set("objective", tr.objective);
                if tr.converged {
                    r.set("status", "ok");
                    kept.push(tr.d);
                } else {
                    r.set("status", "not_converged").set("reason", "iteration limit reached");
                }
            }
            Err(e) => {
                r.set("status", "failed").set("reason", e.to_string());
            }
        }
        records.push(r);
    }
    let failed = sim.trials - kept.len();

    let prediction = if sim.predict { Some(rs_solve(&problem, None, &cfg.solver)) } else { None };
    for j in 0..problem.terminal_count() {
        let mut r = stamp.record(sim.trials, "summary");
        set_problem_inputs(&mut r, &problem, &ens, j);
        r.set("n", sim.n).set("trials", kept.len()).set("failed_trials", failed);
        if kept.is_empty() {
            r.set("status", "failed").set("reason", "no trial succeeded");
        } else {
            let (mean, se) = mean_and_std_error(&kept);
            r.set("status", "ok").set("d", mean).set_opt("d_std_error", se);
            if let Some(Ok(sol)) = &prediction {
                if sol.converged {
                    r.set("d_rs", sol.d)
                        .set("q", sol.state.q[j])
                        .set("chi", sol.state.chi[j])
                        .set("tau", sol.system.tau[j])
                        .set("xi2", sol.system.xi2[j]);
                    if mean > 0.0 {
                        r.set("rel_gap", (sol.d - mean).abs() / mean);
                    }
                }
            }
        }
        records.push(r);
    }
    Ok(RunOutput { records, points: sim.trials, failed })
}

// ---------------------------------------------------------------- tuning

fn tune_section(cfg: &ExperimentConfig) -> Result<&TuneConfig> {
    cfg.tune.as_ref().ok_or_else(|| Error::config("tune", "missing"))
}

/// Tune the free variables. For a two-dimensional LASSO whose coupling `phi`
/// is free and may vanish, the other variables are first tuned at `phi = 0`
/// and the joint search starts there, so the result is never worse than the
/// per-terminal LASSO at the same point.
pub fn tune_point(template: &RsProblem, free: &[FreeParam], cfg: &ExperimentConfig) -> Result<TuneResult> {
    let opts = cfg.tune_options();
    let phi = free.iter().find(|p| p.var == FreeVar::Phi);
    let staged = matches!(template.spec.kind, RegKind::TwoDimLasso { .. })
        && phi.is_some_and(|p| p.lo <= 0.0 && 0.0 <= p.hi);
    if !staged {
        return tune_regularizer(template, free, &opts);
    }
    let mut base = template.clone();
    if let RegKind::TwoDimLasso { phi, .. } = &mut base.spec.kind {
        *phi = 0.0;
    }
    let inner: Vec<FreeParam> = free
        .iter()
        .copied()
        .filter(|p| !matches!(p.var, FreeVar::Phi | FreeVar::Alpha))
        .collect();
    let stage = if inner.is_empty() {
        None
    } else {
        Some(tune_regularizer(&base, &inner, &opts)?)
    };
    let start: Vec<f64> = free
        .iter()
        .map(|p| match p.var {
            FreeVar::Phi => 0.0,
            _ => {
                let at = inner.iter().position(|q| q.var == p.var);
                match (at, &stage) {
                    (Some(k), Some(s)) => s.values[k],
                    _ => current_value(template, p.var).unwrap_or(p.lo),
                }
            }
        })
        .collect();
    let mut result = tune_regularizer_from(template, free, &start, &opts)?;
    if let Some(s) = stage {
        result.evaluations += s.evaluations;
        result.failures += s.failures;
    }
    Ok(result)
}

fn current_value(problem: &RsProblem, var: FreeVar) -> Option<f64> {
    match var {
        FreeVar::Lambda(j) => problem.terminals.get(j).map(|t| t.lambda),
        FreeVar::LambdaAll => problem.terminals.first().map(|t| t.lambda),
        FreeVar::Weight => Some(problem.spec.weight),
        FreeVar::Phi | FreeVar::Alpha => match problem.spec.kind {
            RegKind::TwoDimLasso { phi, alpha } => Some(if var == FreeVar::Phi { phi } else { alpha }),
            _ => None,
        },
        FreeVar::Bound => match problem.spec.domain {
            Domain::Box(b) => Some(b),
            Domain::Reals => None,
        },
    }
}

fn tuned_rows(
    stamp: &Stamp,
    point: usize,
    template: &RsProblem,
    free: &[FreeParam],
    ensembles: &[EnsembleSpec],
    outcome: &Result<TuneResult>,
    extra: impl Fn(&mut ResultRecord, Option<f64>),
) -> Vec<ResultRecord> {
    let (problem, solution) = match outcome {
        Ok(t) => match tuned_problem(template, free, &t.values) {
            Ok(p) => (p, Ok(t.solution.clone())),
            Err(e) => (template.clone(), Err(e)),
        },
        Err(e) => (template.clone(), Err(Error::AllFailed(e.to_string()))),
    };
    let d = solution.as_ref().ok().filter(|s| s.converged).map(|s| s.d);
    let evaluations = outcome.as_ref().ok().map(|t| t.evaluations);
    point_rows(stamp, point, &problem, ensembles, &solution, |r| {
        r.set_opt("evaluations", evaluations);
        extra(r, d);
    })
}

/// Tuned distortion over an SNR grid, or at the configured noise level.
pub fn run_tune(cfg: &ExperimentConfig) -> Result<RunOutput> {
    require_mode(cfg, Mode::Tune)?;
    let tune = tune_section(cfg)?;
    let stamp = Stamp::new(cfg);
    let base = build_problem(cfg)?;
    let ens = ensembles(cfg);
    let grid: Vec<Option<f64>> = match &tune.snr_db {
        Some(snr) => snr.iter().map(|s| Some(*s)).collect(),
        None => vec![None],
    };
    let results: Vec<(RsProblem, Result<TuneResult>)> = grid
        .par_iter()
        .map(|snr| {
            let mut problem = base.clone();
            if let Some(s) = snr {
                let sigma2 = tune.signal_power / 10f64.powf(s / 10.0);
                problem.terminals.iter_mut().for_each(|t| t.sigma2 = sigma2);
            }
            let res = tune_point(&problem, &tune.free, cfg);
            (problem, res)
        })
        .collect();
    let mut records = Vec::new();
    let mut failed = 0;
    for (point, ((problem, res), snr)) in results.iter().zip(&grid).enumerate() {
        if !matches!(res, Ok(t) if t.solution.converged) {
            failed += 1;
        }
        records.extend(tuned_rows(&stamp, point, problem, &tune.free, &ens, res, |r, _| {
            r.set_opt("snr_db", *snr);
        }));
    }
    Ok(RunOutput { records, points: grid.len(), failed })
}

// ---------------------------------------------------------------- region

fn with_rho(spec: &EnsembleSpec, rho: f64) -> Result<EnsembleSpec> {
    if spec.kind == EnsembleKind::CustomSpectrum {
        return Err(Error::config("terminal.ensemble", "rate sweeps need a named ensemble"));
    }
    let mut out = spec.clone();
    out.rho = rho;
    out.validate()?;
    Ok(out)
}

/// Tuned distortion over a grid of compression-rate pairs, flagged against
/// the threshold. Rows run over `rho_1` fastest.
pub fn run_sweep_region(cfg: &ExperimentConfig) -> Result<RunOutput> {
    require_mode(cfg, Mode::SweepRegion)?;
    let sweep = cfg.sweep.as_ref().ok_or_else(|| Error::config("sweep", "missing"))?;
    let tune = tune_section(cfg)?;
    let stamp = Stamp::new(cfg);
    let base = build_problem(cfg)?;
    let (n1, n2) = (sweep.rho_1.len(), sweep.rho_2.len());
    let grid: Vec<(usize, usize)> = (0..n2).flat_map(|b| (0..n1).map(move |a| (a, b))).collect();

    let results: Vec<(RsProblem, Vec<EnsembleSpec>, Result<TuneResult>)> = grid
        .par_iter()
        .map(|&(a, b)| {
            let rhos = [sweep.rho_1[a], sweep.rho_2[b]];
            let mut problem = base.clone();
            let mut ens = Vec::with_capacity(2);
            for (j, rho) in rhos.iter().enumerate() {
                match with_rho(&cfg.terminals[j].ensemble, *rho).and_then(|e| Ok((e.law()?, e))) {
                    Ok((law, e)) => {
                        problem.terminals[j].law = law;
                        ens.push(e);
                    }
                    Err(e) => return (problem, ensembles(cfg), Err(e)),
                }
            }
            let res = tune_point(&problem, &tune.free, cfg);
            (problem, ens, res)
        })
        .collect();

    let inside: Vec<Option<bool>> = results
        .iter()
        .map(|(_, _, r)| match r {
            Ok(t) if t.solution.converged => Some(t.solution.d <= sweep.threshold),
            _ => None,
        })
        .collect();
    let at = |a: usize, b: usize| inside[b * n1 + a];

    let mut records = Vec::new();
    let mut failed = 0;
    for (point, ((problem, ens, res), &(a, b))) in results.iter().zip(&grid).enumerate() {
        let flag = at(a, b);
        if flag.is_none() {
            failed += 1;
        }
        // lower-left frontier: inside, with an outside (or missing) lower neighbour
        let frontier = flag.map(|f| {
            f && (a == 0 || b == 0 || at(a - 1, b) != Some(true) || at(a, b - 1) != Some(true))
        });
        records.extend(tuned_rows(&stamp, point, problem, &tune.free, ens, res, |r, _| {
            r.set("threshold", sweep.threshold).set_opt("in_region", flag).set_opt("frontier", frontier);
        }));
    }
    Ok(RunOutput { records, points: grid.len(), failed })
}

// ---------------------------------------------------------------- spectrum

/// Empirical eigenvalue CDF of sampled matrices against the asymptotic law.
pub fn run_spectrum(cfg: &ExperimentConfig) -> Result<RunOutput> {
    require_mode(cfg, Mode::Spectrum)?;
    let sp = cfg.spectrum.ok_or_else(|| Error::config("spectrum", "missing"))?;
    let stamp = Stamp::new(cfg);
    let per_terminal: Vec<Result<Vec<ResultRecord>>> = cfg
        .terminals
        .par_iter()
        .enumerate()
        .map(|(j, t)| {
            let a = sample_matrix(&t.ensemble, sp.n, derive_seed(cfg.seed, Purpose::Spectrum, j as u64))?;
            let dos = empirical_dos(&a)?;
            let law = t.ensemble.law()?;
            let ks = dos.kolmogorov_distance(|x| law.cdf(x));
            let top = dos.eigenvalues.last().copied().unwrap_or(0.0).max(law.support_max);
            let lo = dos.eigenvalues.first().copied().unwrap_or(0.0).min(law.support_min).min(0.0);
            let hi = top * 1.05 + 1e-3;
            let rows = (0..sp.points)
                .map(|i| {
                    let x = lo + (hi - lo) * i as f64 / (sp.points - 1) as f64;
                    let mut r = stamp.record(i, "cdf");
                    r.set("terminal", j + 1)
                        .set("ensemble", t.ensemble.kind.name())
                        .set("rho", t.ensemble.rho)
                        .set("n", sp.n)
                        .set("status", "ok")
                        .set("x", x)
                        .set("cdf", dos.cdf(x))
                        .set("cdf_law", law.cdf(x))
                        .set("eig_mean", dos.moment(1))
                        .set("eig_second_moment", dos.moment(2))
                        .set("law_mean", law.mean_eigenvalue)
                        .set("law_second_moment", law.second_moment())
                        .set("ks_distance", ks);
                    r
                })
                .collect();
            Ok(rows)
        })
        .collect();
    let mut records = Vec::new();
    let mut failed = 0;
    for (j, res) in per_terminal.into_iter().enumerate() {
        match res {
            Ok(rows) => records.extend(rows),
            Err(e) => {
                failed += 1;
                let mut r = stamp.record(0, "cdf");
                r.set("terminal", j + 1).set("status", "failed").set("reason", e.to_string());
                records.push(r);
            }
        }
    }
    Ok(RunOutput { records, points: cfg.terminals.len(), failed })
}
