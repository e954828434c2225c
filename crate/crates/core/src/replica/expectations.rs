//! Expectations over the decoupled channel `y = x + z`.
//!
//! Conditioning on a prior mixture component makes `(x, z, y)` jointly
//! Gaussian, so everything reduces to integrals over `y`:
//!
//! - `E[(x̂_j - x_j)²] = E[(x̂_j - E[x_j|y])² + Var(x_j|y)]`
//! - `E[x̂_j z_j] = ξ_j² E[x̂_j h_j]` with `h = Σ_y⁺ (y - m)`
//!
//! Terminal-separable estimators integrate each marginal over panels split at
//! the estimator's kinks. Coupled estimators use tensor Gauss–Hermite over the
//! active eigen-directions of `Σ_y`, or Monte Carlo beyond two terminals.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand_distr::{Distribution, StandardNormal};

use super::quadrature::{gauss_hermite, gauss_legendre};
use super::{DecoupledSystem, RsProblem};
use crate::error::{Error, Result};
use crate::regularizers::{scalar_estimate_1d, RegKind};
use crate::rng::{self, Purpose};
use crate::signal_model::{draw_column, prior_mixture, DistortionKind};

/// Draws used when quadrature is requested for a coupled estimator on more
/// than two terminals.
pub const FALLBACK_DRAWS: usize = 1_000_000;

/// Half-width, in standard deviations, of the integration window.
const WINDOW: f64 = 12.0;
/// Gauss–Legendre points per unit-width panel.
const PANEL_POINTS: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ExpectationMethod {
    /// Exact mixture enumeration times quadrature over the noise, `order`
    /// Gauss–Hermite points per dimension.
    Quadrature { order: usize },
    MonteCarlo { draws: usize, seed: u64 },
}

impl Default for ExpectationMethod {
    fn default() -> Self {
        ExpectationMethod::Quadrature { order: 61 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExpectationErrors {
    pub q: Vec<f64>,
    pub chi: Vec<f64>,
    pub d: f64,
}

/// Updated order parameters and the predicted distortion.
#[derive(Clone, Debug, PartialEq)]
pub struct Expectations {
    pub q: Vec<f64>,
    pub chi: Vec<f64>,
    pub d: f64,
    /// Standard errors, for sampled expectations only.
    pub std_error: Option<ExpectationErrors>,
}

pub fn rs_expectations(system: &DecoupledSystem, problem: &RsProblem, method: ExpectationMethod) -> Result<Expectations> {
    let j_count = problem.terminal_count();
    if system.tau.len() != j_count || system.xi2.len() != j_count {
        return Err(Error::Shape(format!("decoupled system does not have {j_count} terminals")));
    }
    if system.xi2.iter().any(|x| !(*x >= 0.0) || !x.is_finite()) {
        return Err(Error::Domain(format!("negative or non-finite xi2 {:?}", system.xi2)));
    }
    if system.tau.iter().any(|t| !(*t > 0.0) || !t.is_finite()) {
        return Err(Error::Domain(format!("non-positive tau {:?}", system.tau)));
    }
    match method {
        ExpectationMethod::Quadrature { order } => {
            if order < 3 {
                return Err(Error::InvalidParameter(format!("quadrature order must be >= 3, got {order}")));
            }
            if problem.spec.scalar_rule(j_count).is_some() {
                Ok(separable(system, problem))
            } else if j_count <= 2 {
                joint_quadrature(system, problem, order)
            } else {
                monte_carlo(system, problem, FALLBACK_DRAWS, 0)
            }
        }
        ExpectationMethod::MonteCarlo { draws, seed } => {
            if draws < 2 {
                return Err(Error::InvalidParameter("Monte Carlo needs at least 2 draws".into()));
            }
            monte_carlo(system, problem, draws, seed)
        }
    }
}

fn finish(problem: &RsProblem, q: Vec<f64>, chi: Vec<f64>, support: Vec<f64>) -> Expectations {
    let d = match problem.distortion {
        DistortionKind::Mse => q.iter().sum(),
        DistortionKind::SupportError => support.iter().sum(),
    };
    Expectations { q, chi, d, std_error: None }
}

#[inline]
fn std_normal_pdf(t: f64) -> f64 {
    const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;
    INV_SQRT_2PI * (-0.5 * t * t).exp()
}

fn separable(system: &DecoupledSystem, problem: &RsProblem) -> Expectations {
    let (q, chi, support) = separable_parts(system, problem);
    finish(problem, q, chi, support)
}

/// Per-terminal `(q, χ, support error)` for a terminal-separable estimator.
fn separable_parts(system: &DecoupledSystem, problem: &RsProblem) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let j_count = problem.terminal_count();
    let rule = problem.spec.scalar_rule(j_count).expect("separable spec");
    let domain = problem.spec.domain;
    let gl = gauss_legendre(PANEL_POINTS);
    let mut q = vec![0.0; j_count];
    let mut chi = vec![0.0; j_count];
    let mut support = vec![0.0; j_count];
    for j in 0..j_count {
        let (tau, xi2) = (system.tau[j], system.xi2[j]);
        let est = |y: f64| scalar_estimate_1d(rule, domain, y, tau);
        let kinks = problem.spec.breakpoints_1d(j_count, tau);
        for comp in problem.prior.marginal(j) {
            let (m, s2) = (comp.mean, comp.variance);
            let nonzero = m != 0.0 || s2 > 0.0;
            let v = s2 + xi2;
            let (mut cq, mut cchi, mut csup) = (0.0, 0.0, 0.0);
            if v == 0.0 {
                let xh = est(m);
                cq = (xh - m) * (xh - m);
                let h = 1e-6 * m.abs().max(1.0);
                cchi = tau * (est(m + h) - est(m - h)) / (2.0 * h);
                csup = f64::from(u8::from((xh != 0.0) != nonzero));
            } else {
                let sd = v.sqrt();
                let gain = s2 / v;
                let post_var = s2 * xi2 / v;
                let mut edges: Vec<f64> = (0..=(2.0 * WINDOW) as usize).map(|k| -WINDOW + k as f64).collect();
                edges.extend(kinks.iter().map(|b| (b - m) / sd).filter(|t| t.abs() < WINDOW));
                edges.sort_by(f64::total_cmp);
                edges.dedup();
                for pair in edges.windows(2) {
                    let (a, b) = (pair[0], pair[1]);
                    let (mid, half) = (0.5 * (a + b), 0.5 * (b - a));
                    if half <= 0.0 {
                        continue;
                    }
                    for (x, w) in gl.nodes.iter().zip(&gl.weights) {
                        let t = mid + half * x;
                        let wt = half * w * std_normal_pdf(t);
                        let y = m + sd * t;
                        let xh = est(y);
                        let mu = m + gain * sd * t;
                        cq += wt * ((xh - mu) * (xh - mu) + post_var);
                        cchi += wt * xh * t;
                        if (xh != 0.0) != nonzero {
                            csup += wt;
                        }
                    }
                }
                cchi *= tau / sd;
            }
            q[j] += comp.prob * cq;
            chi[j] += comp.prob * cchi;
            support[j] += comp.prob * csup;
        }
    }
    (q, chi, support)
}

/// Separable estimator whose kinks sit close to those of `spec`, integrated
/// exactly and used as a control variate for the coupled quadrature.
fn companion(problem: &RsProblem, system: &DecoupledSystem) -> Option<RsProblem> {
    if system.xi2.iter().any(|x| *x == 0.0) {
        return None;
    }
    match problem.spec.kind {
        RegKind::TwoDimLasso { .. } => {
            let mut p = problem.clone();
            p.spec.kind = RegKind::L1;
            Some(p)
        }
        _ => None,
    }
}

fn joint_quadrature(system: &DecoupledSystem, problem: &RsProblem, order: usize) -> Result<Expectations> {
    let j_count = problem.terminal_count();
    let spec = &problem.spec;
    let tau = &system.tau;
    let xi2 = &system.xi2;
    let rule = gauss_hermite(order);
    let control = companion(problem, system);
    let control_rule = control.as_ref().and_then(|p| p.spec.scalar_rule(j_count));
    let mut q = vec![0.0; j_count];
    let mut chi = vec![0.0; j_count];
    let mut support = vec![0.0; j_count];
    let mut y = vec![0.0; j_count];
    let mut xh = vec![0.0; j_count];
    let mut xh_m = vec![0.0; j_count];
    let mut xc = vec![0.0; j_count];
    let mut xc_m = vec![0.0; j_count];
    let mut probe = vec![0.0; j_count];
    let mut probe_out = vec![0.0; j_count];
    let mut h = vec![0.0; j_count];
    let mut t = Vec::with_capacity(j_count);
    for comp in prior_mixture(&problem.prior)? {
        let m = &comp.mean;
        let sx = &comp.cov;
        let sy = sx + DMatrix::from_diagonal(&DVector::from_column_slice(xi2));
        let eig = SymmetricEigen::new(sy);
        let dmax = eig.eigenvalues.iter().fold(0.0f64, |a, b| a.max(*b));
        let active: Vec<usize> = (0..j_count)
            .filter(|&k| eig.eigenvalues[k] > 1e-13 * dmax.max(1e-300))
            .collect();
        let mut pinv = DMatrix::zeros(j_count, j_count);
        for &k in &active {
            let v = eig.eigenvectors.column(k);
            pinv += v * v.transpose() / eig.eigenvalues[k];
        }
        let gain = sx * &pinv;
        let post = sx - &gain * sx;
        let nonzero: Vec<bool> = (0..j_count).map(|j| !comp.is_zero(j)).collect();
        spec.estimate_into(m, tau, &mut xh_m)?;
        if let Some(r) = control_rule {
            for j in 0..j_count {
                xc_m[j] = scalar_estimate_1d(r, spec.domain, m[j], tau[j]);
            }
        }

        let a = active.len();
        let nodes = order.pow(a as u32);
        for idx in 0..nodes {
            t.clear();
            let mut rest = idx;
            let mut weight = comp.prob;
            for _ in 0..a {
                let i = rest % order;
                rest /= order;
                t.push(rule.nodes[i]);
                weight *= rule.weights[i];
            }
            if weight == 0.0 {
                continue;
            }
            y.copy_from_slice(m);
            h.iter_mut().for_each(|v| *v = 0.0);
            for (&k, tk) in active.iter().zip(&t) {
                let d = eig.eigenvalues[k].sqrt();
                for j in 0..j_count {
                    let v = eig.eigenvectors[(j, k)];
                    y[j] += v * d * tk;
                    h[j] += v * tk / d;
                }
            }
            spec.estimate_into(&y, tau, &mut xh)?;
            if let Some(r) = control_rule {
                for j in 0..j_count {
                    xc[j] = scalar_estimate_1d(r, spec.domain, y[j], tau[j]);
                }
            }
            for j in 0..j_count {
                let mut mu = m[j];
                for k in 0..j_count {
                    mu += gain[(j, k)] * (y[k] - m[k]);
                }
                let mut dq = (xh[j] - mu) * (xh[j] - mu);
                if control_rule.is_some() {
                    dq -= (xc[j] - mu) * (xc[j] - mu);
                } else {
                    dq += post[(j, j)];
                }
                q[j] += weight * dq;
                if xi2[j] > 0.0 {
                    let mut dc = (xh[j] - xh_m[j]) * h[j];
                    if control_rule.is_some() {
                        dc -= (xc[j] - xc_m[j]) * h[j];
                    }
                    chi[j] += weight * tau[j] * dc;
                } else {
                    let step = 1e-6 * y[j].abs().max(1.0);
                    probe.copy_from_slice(&y);
                    probe[j] = y[j] + step;
                    spec.estimate_into(&probe, tau, &mut probe_out)?;
                    let up = probe_out[j];
                    probe[j] = y[j] - step;
                    spec.estimate_into(&probe, tau, &mut probe_out)?;
                    chi[j] += weight * tau[j] * (up - probe_out[j]) / (2.0 * step);
                }
                let mut ds = f64::from(u8::from((xh[j] != 0.0) != nonzero[j]));
                if control_rule.is_some() {
                    ds -= f64::from(u8::from((xc[j] != 0.0) != nonzero[j]));
                }
                support[j] += weight * ds;
            }
        }
    }
    if let Some(p) = control {
        let (eq, echi, esup) = separable_parts(system, &p);
        for j in 0..j_count {
            q[j] += eq[j];
            chi[j] += echi[j];
            support[j] += esup[j];
        }
    }
    Ok(finish(problem, q, chi, support))
}

fn monte_carlo(system: &DecoupledSystem, problem: &RsProblem, draws: usize, seed: u64) -> Result<Expectations> {
    let j_count = problem.terminal_count();
    let spec = &problem.spec;
    let tau = &system.tau;
    let xi2 = &system.xi2;
    let sd: Vec<f64> = xi2.iter().map(|v| v.sqrt()).collect();
    let mut rng = rng::stream(seed, Purpose::MonteCarlo, 0);
    let mut x = vec![0.0; j_count];
    let mut flags = vec![false; j_count];
    let mut z = vec![0.0; j_count];
    let mut y = vec![0.0; j_count];
    let mut xh = vec![0.0; j_count];
    let mut probe = vec![0.0; j_count];
    let mut probe_out = vec![0.0; j_count];
    // running sums and sums of squares: q_j, chi_j, then d
    let mut sum = vec![0.0; 2 * j_count + 1];
    let mut sum_sq = vec![0.0; 2 * j_count + 1];
    let mut sample = vec![0.0; 2 * j_count + 1];
    for _ in 0..draws {
        draw_column(&problem.prior, &mut rng, &mut x, &mut flags);
        for j in 0..j_count {
            let g: f64 = StandardNormal.sample(&mut rng);
            z[j] = sd[j] * g;
            y[j] = x[j] + z[j];
        }
        spec.estimate_into(&y, tau, &mut xh)?;
        let mut d = 0.0;
        for j in 0..j_count {
            let err = xh[j] - x[j];
            sample[j] = err * err;
            sample[j_count + j] = if xi2[j] > 0.0 {
                tau[j] / xi2[j] * err * z[j]
            } else {
                let step = 1e-6 * y[j].abs().max(1.0);
                probe.copy_from_slice(&y);
                probe[j] = y[j] + step;
                spec.estimate_into(&probe, tau, &mut probe_out)?;
                let up = probe_out[j];
                probe[j] = y[j] - step;
                spec.estimate_into(&probe, tau, &mut probe_out)?;
                tau[j] * (up - probe_out[j]) / (2.0 * step)
            };
            d += problem.distortion.entry(xh[j], x[j]);
        }
        sample[2 * j_count] = d;
        for (k, s) in sample.iter().enumerate() {
            sum[k] += s;
            sum_sq[k] += s * s;
        }
    }
    let n = draws as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
    let se: Vec<f64> = sum_sq
        .iter()
        .zip(&mean)
        .map(|(s2, m)| ((s2 / n - m * m).max(0.0) * n / (n - 1.0) / n).sqrt())
        .collect();
    Ok(Expectations {
        q: mean[..j_count].to_vec(),
        chi: mean[j_count..2 * j_count].to_vec(),
        d: mean[2 * j_count],
        std_error: Some(ExpectationErrors {
            q: se[..j_count].to_vec(),
            chi: se[j_count..2 * j_count].to_vec(),
            d: se[2 * j_count],
        }),
    })
}
