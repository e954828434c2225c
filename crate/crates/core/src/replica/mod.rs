//! Replica-symmetric fixed point for regularized least-squares recovery.
//!
//! Each terminal `j` reduces to the scalar channel `y_j = x_j + z_j`,
//! `z_j ~ N(0, ξ_j²)`, seen through the decoupled estimator with weights
//! `τ_j`. The order parameters `(q_j, χ_j)` close the loop:
//!
//! ```text
//! τ_j  = λ_j / R_j(-χ_j/λ_j)
//! ξ_j² = R_j⁻² ∂/∂χ_j [(σ_j² χ_j - λ_j q_j) R_j(-χ_j/λ_j)]      (q_j held fixed)
//! q_j  = E[(x̂_j - x_j)²]
//! χ_j  = (τ_j/ξ_j²) E[(x̂_j - x_j) z_j]
//! ```
//!
//! and the predicted distortion is `D = E[Δ(x̂; x)]` in the decoupled system.

mod expectations;
pub mod quadrature;
mod tune;

pub use expectations::{rs_expectations, ExpectationErrors, ExpectationMethod, Expectations};
pub use tune::{tune_regularizer, tune_regularizer_from, tuned_problem, FreeParam, FreeVar, TuneOptions, TuneResult};

use crate::error::{Error, Result};
use crate::regularizers::RegularizerSpec;
use crate::signal_model::{DistortionKind, JointSparsityPrior};
use crate::spectra::SpectralLaw;

/// Per-terminal inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct TerminalParams {
    pub law: SpectralLaw,
    /// Postulated noise variance; weights the residual term by `1/(2λ)`.
    pub lambda: f64,
    /// True noise variance.
    pub sigma2: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RsProblem {
    pub prior: JointSparsityPrior,
    pub spec: RegularizerSpec,
    pub terminals: Vec<TerminalParams>,
    pub distortion: DistortionKind,
}

impl RsProblem {
    pub fn new(
        prior: JointSparsityPrior,
        spec: RegularizerSpec,
        terminals: Vec<TerminalParams>,
        distortion: DistortionKind,
    ) -> Result<Self> {
        let problem = RsProblem { prior, spec, terminals, distortion };
        problem.validate()?;
        Ok(problem)
    }

    pub fn terminal_count(&self) -> usize {
        self.terminals.len()
    }

    pub fn validate(&self) -> Result<()> {
        self.prior.validate()?;
        let j = self.terminals.len();
        if self.prior.terminals() != j {
            return Err(Error::Shape(format!(
                "prior has {} terminals, problem has {j}",
                self.prior.terminals()
            )));
        }
        self.spec.validate(j)?;
        for (k, t) in self.terminals.iter().enumerate() {
            if !(t.lambda > 0.0) || !t.lambda.is_finite() {
                return Err(Error::InvalidParameter(format!("terminal {k}: lambda must be positive, got {}", t.lambda)));
            }
            if !(t.sigma2 >= 0.0) || !t.sigma2.is_finite() {
                return Err(Error::InvalidParameter(format!("terminal {k}: sigma2 must be >= 0, got {}", t.sigma2)));
            }
        }
        Ok(())
    }

    /// `q_j = E[x_j²]`, `χ_j = λ_j`.
    pub fn default_state(&self) -> RsState {
        RsState {
            q: (0..self.terminal_count()).map(|j| self.prior.second_moment(j)).collect(),
            chi: self.terminals.iter().map(|t| t.lambda).collect(),
        }
    }
}

/// Order parameters `(q_j, χ_j)`.
#[derive(Clone, Debug, PartialEq)]
pub struct RsState {
    pub q: Vec<f64>,
    pub chi: Vec<f64>,
}

/// Scalar-channel parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct DecoupledSystem {
    pub tau: Vec<f64>,
    pub xi2: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RsSolution {
    pub state: RsState,
    pub system: DecoupledSystem,
    pub d: f64,
    /// Standard error of `d` when the expectations were sampled.
    pub d_std_error: Option<f64>,
    pub iterations: usize,
    pub residual: f64,
    pub converged: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RsOptions {
    pub damping: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub method: ExpectationMethod,
}

impl Default for RsOptions {
    fn default() -> Self {
        RsOptions {
            damping: 0.5,
            tol: 1e-9,
            max_iter: 500,
            method: ExpectationMethod::default(),
        }
    }
}

/// Map order parameters to the scalar channel.
pub fn decouple(state: &RsState, problem: &RsProblem) -> Result<DecoupledSystem> {
    let j_count = problem.terminal_count();
    if state.q.len() != j_count || state.chi.len() != j_count {
        return Err(Error::Shape(format!(
            "state has {}/{} entries for {j_count} terminals",
            state.q.len(),
            state.chi.len()
        )));
    }
    let mut tau = Vec::with_capacity(j_count);
    let mut xi2 = Vec::with_capacity(j_count);
    for (j, t) in problem.terminals.iter().enumerate() {
        let (q, chi) = (state.q[j], state.chi[j]);
        if !(q >= 0.0 && chi >= 0.0) || !q.is_finite() || !chi.is_finite() {
            return Err(Error::Domain(format!("terminal {j}: state (q={q}, chi={chi}) must be finite and >= 0")));
        }
        let omega = -chi / t.lambda;
        let r = t.law.r_transform(omega)?;
        let dr = t.law.r_transform_derivative(omega)?;
        if !(r > 0.0) || !r.is_finite() {
            return Err(Error::Domain(format!("terminal {j}: R({omega}) = {r} is not positive")));
        }
        let num = t.sigma2 * r + (q - t.sigma2 * chi / t.lambda) * dr;
        let mut x = num / (r * r);
        let scale = (t.sigma2 * r).abs() + (q * dr).abs() + (t.sigma2 * chi / t.lambda * dr).abs();
        if x < 0.0 && x * r * r >= -1e-14 * scale {
            x = 0.0;
        }
        if !(x >= 0.0) || !x.is_finite() {
            return Err(Error::Domain(format!("terminal {j}: decoupled noise variance {x} is negative")));
        }
        tau.push(t.lambda / r);
        xi2.push(x);
    }
    Ok(DecoupledSystem { tau, xi2 })
}

/// Damped fixed-point iteration from `init` (default: [`RsProblem::default_state`]).
pub fn rs_solve(problem: &RsProblem, init: Option<&RsState>, opts: &RsOptions) -> Result<RsSolution> {
    problem.validate()?;
    if !(opts.damping > 0.0 && opts.damping <= 1.0) {
        return Err(Error::InvalidParameter(format!("damping must lie in (0, 1], got {}", opts.damping)));
    }
    if opts.max_iter == 0 || !(opts.tol > 0.0) {
        return Err(Error::InvalidParameter("need max_iter >= 1 and tol > 0".into()));
    }
    let gamma = opts.damping;
    let mut state = init.cloned().unwrap_or_else(|| problem.default_state());
    let attach = |state: &RsState, e: Error| Error::FixedPoint { state: state.clone(), source: Box::new(e) };
    let mut last = None;
    for it in 1..=opts.max_iter {
        let system = decouple(&state, problem).map_err(|e| attach(&state, e))?;
        let exp = rs_expectations(&system, problem, opts.method).map_err(|e| attach(&state, e))?;
        if exp.q.iter().chain(&exp.chi).any(|v| !v.is_finite()) || !exp.d.is_finite() {
            return Err(attach(&state, Error::NonFinite("expectations".into())));
        }
        let mut residual: f64 = 0.0;
        let mut next = state.clone();
        for j in 0..state.q.len() {
            next.q[j] = (1.0 - gamma) * state.q[j] + gamma * exp.q[j];
            next.chi[j] = (1.0 - gamma) * state.chi[j] + gamma * exp.chi[j];
            let change = (next.q[j] - state.q[j]).abs() + (next.chi[j] - state.chi[j]).abs();
            residual = residual.max(change / (state.q[j].abs() + state.chi[j].abs()).max(1.0));
        }
        let d_std_error = exp.std_error.as_ref().map(|e| e.d);
        if residual < opts.tol {
            return Ok(RsSolution {
                state,
                system,
                d: exp.d,
                d_std_error,
                iterations: it,
                residual,
                converged: true,
            });
        }
        last = Some((system, exp.d, d_std_error, residual));
        state = next;
    }
    let (system, d, d_std_error, residual) = last.expect("at least one iteration");
    Ok(RsSolution {
        state,
        system,
        d,
        d_std_error,
        iterations: opts.max_iter,
        residual,
        converged: false,
    })
}

/// Solve from the default start and from 8 log-spaced starts, returning the
/// distinct converged fixed points ordered by `D`.
pub fn rs_scan(problem: &RsProblem, opts: &RsOptions) -> Result<Vec<RsSolution>> {
    let base = problem.default_state();
    let mut starts = vec![base.clone()];
    for k in 0..8 {
        let f = 10f64.powf(-3.0 + 6.0 * k as f64 / 7.0);
        starts.push(RsState {
            q: base.q.iter().map(|q| (q + 1e-3) * f).collect(),
            chi: problem.terminals.iter().map(|t| t.lambda * f).collect(),
        });
    }
    let mut found: Vec<RsSolution> = Vec::new();
    let mut first_err = None;
    for s in &starts {
        match rs_solve(problem, Some(s), opts) {
            Ok(sol) if sol.converged => {
                let same = |o: &RsSolution| {
                    o.state
                        .q
                        .iter()
                        .chain(&o.state.chi)
                        .zip(sol.state.q.iter().chain(&sol.state.chi))
                        .all(|(a, b)| (a - b).abs() <= 1e-6 * a.abs().max(b.abs()).max(1e-3))
                };
                if !found.iter().any(same) {
                    found.push(sol);
                }
            }
            Ok(_) => {}
            Err(e) => {
                first_err.get_or_insert(e);
            }
        }
    }
    if found.is_empty() {
        if let Some(e) = first_err {
            return Err(e);
        }
        return Ok(vec![rs_solve(problem, None, opts)?]);
    }
    found.sort_by(|a, b| a.d.total_cmp(&b.d));
    Ok(found)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::regularizers::RegKind;

    fn gaussian_ridge(law: SpectralLaw, w: f64, lambda: f64, sigma2: f64) -> RsProblem {
        RsProblem::new(
            JointSparsityPrior::bernoulli(1.0, Default::default()).unwrap(),
            RegularizerSpec::new(RegKind::Ridge, w),
            vec![TerminalParams { law, lambda, sigma2 }],
            DistortionKind::Mse,
        )
        .unwrap()
    }

    #[test]
    fn identity_law_decouples_to_constants() {
        let p = gaussian_ridge(SpectralLaw::identity(), 1.0, 0.7, 0.2);
        for (q, chi) in [(0.0, 0.0), (0.3, 1.2), (2.0, 0.01)] {
            let s = decouple(&RsState { q: vec![q], chi: vec![chi] }, &p).unwrap();
            assert!((s.tau[0] - 0.7).abs() < 1e-12);
            assert!((s.xi2[0] - 0.2).abs() < 1e-12);
        }
    }

    #[test]
    fn gaussian_law_tau_closed_form() {
        let (lambda, chi, rho) = (0.4, 0.9, 0.5);
        let p = gaussian_ridge(SpectralLaw::marchenko_pastur(rho).unwrap(), 1.0, lambda, 0.1);
        let s = decouple(&RsState { q: vec![0.05], chi: vec![chi] }, &p).unwrap();
        assert!((s.tau[0] - (lambda + chi) / rho).abs() < 1e-12);
        assert!((s.xi2[0] - (0.1 + 0.05) / rho).abs() < 1e-12);
    }

    #[test]
    fn xi2_matches_finite_difference() {
        let law = SpectralLaw::marchenko_pastur(0.5).unwrap();
        let (lambda, chi, sigma2, q) = (1.0, 1.0, 0.1, 0.05);
        let p = gaussian_ridge(law.clone(), 1.0, lambda, sigma2);
        let s = decouple(&RsState { q: vec![q], chi: vec![chi] }, &p).unwrap();
        let f = |c: f64| (sigma2 * c - lambda * q) * law.r_transform(-c / lambda).unwrap();
        let h = 1e-5;
        let fd = (f(chi + h) - f(chi - h)) / (2.0 * h) / law.r_transform(-chi / lambda).unwrap().powi(2);
        assert!((s.xi2[0] - fd).abs() < 1e-6);
    }

    #[test]
    fn negative_state_is_rejected() {
        let p = gaussian_ridge(SpectralLaw::identity(), 1.0, 1.0, 0.1);
        assert!(decouple(&RsState { q: vec![-1.0], chi: vec![0.0] }, &p).is_err());
    }

    #[test]
    fn ridge_identity_fixed_point_is_closed_form() {
        let (w, lambda, sigma2) = (0.8, 0.5, 0.3);
        let p = gaussian_ridge(SpectralLaw::identity(), w, lambda, sigma2);
        let sol = rs_solve(&p, None, &RsOptions::default()).unwrap();
        assert!(sol.converged);
        let a = w * lambda;
        let expect = (a * a + sigma2) / ((1.0 + a) * (1.0 + a));
        assert!((sol.d - expect).abs() < 1e-10, "{} vs {expect}", sol.d);
        assert!((sol.state.chi[0] - lambda / (1.0 + a)).abs() < 1e-9);
    }

    #[test]
    fn empty_prior_without_noise_converges_immediately() {
        let prior = JointSparsityPrior::new(0.0, 0.0, vec![0.0]).unwrap();
        let p = RsProblem::new(
            prior,
            RegularizerSpec::l1(1.0),
            vec![TerminalParams { law: SpectralLaw::marchenko_pastur(0.5).unwrap(), lambda: 0.1, sigma2: 0.0 }],
            DistortionKind::Mse,
        )
        .unwrap();
        let opts = RsOptions { damping: 1.0, ..Default::default() };
        let sol = rs_solve(&p, None, &opts).unwrap();
        assert!(sol.converged && sol.iterations <= 3);
        assert_eq!(sol.d, 0.0);
        assert_eq!(sol.state.q, vec![0.0]);
    }

    #[test]
    fn scan_finds_the_unique_convex_fixed_point() {
        let p = gaussian_ridge(SpectralLaw::marchenko_pastur(0.5).unwrap(), 1.0, 0.3, 0.05);
        let sols = rs_scan(&p, &RsOptions::default()).unwrap();
        assert_eq!(sols.len(), 1);
    }
}
