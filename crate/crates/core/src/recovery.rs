//! Finite-size regularized least squares:
//!
//! ```text
//! min_{V ∈ X^{J×N}}  Σ_j ‖y_j - A_j v_j‖² / (2λ_j) + Σ_n u(V_{·n})
//! ```
//!
//! solved by proximal gradient. A gradient step of size `η` leaves the
//! columnwise subproblem of the decoupled estimator with `τ_j = η`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::regularizers::RegularizerSpec;
use crate::signal_model::{distortion, DistortionKind};

/// Measurements of all terminals plus the penalty.
#[derive(Clone, Debug, PartialEq)]
pub struct Instance {
    pub a: Vec<DMatrix<f64>>,
    pub y: Vec<DVector<f64>>,
    pub lambda: Vec<f64>,
    pub spec: RegularizerSpec,
    /// `J×N` ground truth, for scoring.
    pub x_true: Option<DMatrix<f64>>,
}

impl Instance {
    pub fn new(
        a: Vec<DMatrix<f64>>,
        y: Vec<DVector<f64>>,
        lambda: Vec<f64>,
        spec: RegularizerSpec,
        x_true: Option<DMatrix<f64>>,
    ) -> Result<Self> {
        let inst = Instance { a, y, lambda, spec, x_true };
        inst.validate()?;
        Ok(inst)
    }

    pub fn terminals(&self) -> usize {
        self.a.len()
    }

    /// Signal length `N`.
    pub fn len(&self) -> usize {
        self.a.first().map_or(0, |a| a.ncols())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn validate(&self) -> Result<()> {
        let j = self.a.len();
        if j == 0 || self.y.len() != j || self.lambda.len() != j {
            return Err(Error::Shape(format!(
                "{} matrices, {} measurement vectors, {} lambdas",
                j,
                self.y.len(),
                self.lambda.len()
            )));
        }
        let n = self.len();
        for (k, (a, y)) in self.a.iter().zip(&self.y).enumerate() {
            if a.ncols() != n || a.nrows() != y.len() {
                return Err(Error::Shape(format!(
                    "terminal {k}: A is {}×{}, y has {} entries, N = {n}",
                    a.nrows(),
                    a.ncols(),
                    y.len()
                )));
            }
        }
        if let Some(x) = &self.x_true {
            if x.shape() != (j, n) {
                return Err(Error::Shape(format!("x_true is {:?}, expected ({j}, {n})", x.shape())));
            }
        }
        if self.lambda.iter().any(|l| !(*l > 0.0) || !l.is_finite()) {
            return Err(Error::InvalidParameter(format!("lambda must be positive, got {:?}", self.lambda)));
        }
        self.spec.validate(j)
    }
}

/// Sum of the residual terms for given products `A_j v_j`.
fn smooth_value(inst: &Instance, av: &[DVector<f64>]) -> f64 {
    av.iter()
        .zip(&inst.y)
        .zip(&inst.lambda)
        .map(|((av, y), l)| (av - y).norm_squared() / (2.0 * l))
        .sum()
}

fn penalty(spec: &RegularizerSpec, v: &DMatrix<f64>) -> f64 {
    let mut col = vec![0.0; v.nrows()];
    v.column_iter()
        .map(|c| {
            col.iter_mut().zip(c.iter()).for_each(|(o, x)| *o = *x);
            spec.value(&col)
        })
        .sum()
}

fn products(inst: &Instance, v: &DMatrix<f64>) -> Vec<DVector<f64>> {
    inst.a.iter().enumerate().map(|(j, a)| a * v.row(j).transpose()).collect()
}

/// The RLS objective at `v` (`J×N`).
pub fn objective(inst: &Instance, v: &DMatrix<f64>) -> Result<f64> {
    if v.shape() != (inst.terminals(), inst.len()) {
        return Err(Error::Shape(format!(
            "V is {:?}, expected ({}, {})",
            v.shape(),
            inst.terminals(),
            inst.len()
        )));
    }
    Ok(smooth_value(inst, &products(inst, v)) + penalty(&inst.spec, v))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum StepPolicy {
    /// Start at `1/L` and halve until the quadratic upper bound holds.
    Backtracking,
    Fixed(f64),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolveOptions {
    pub max_iter: usize,
    /// Stop when the relative objective decrease falls below this.
    pub tol: f64,
    pub step: StepPolicy,
    /// Nesterov acceleration; `None` enables it for convex penalties only.
    pub accelerate: Option<bool>,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            max_iter: 5000,
            tol: 1e-10,
            step: StepPolicy::Backtracking,
            accelerate: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolveReport {
    pub xhat: DMatrix<f64>,
    /// Objective after each accepted iterate, starting at the initial point.
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub final_step: f64,
}

/// Largest singular value by power iteration on `AᵀA`.
pub fn operator_norm(a: &DMatrix<f64>, steps: usize, tol: f64) -> f64 {
    let n = a.ncols();
    if n == 0 || a.nrows() == 0 {
        return 0.0;
    }
    // deterministic, generic start vector
    let mut v = DVector::from_fn(n, |i, _| 1.0 + ((i as f64 + 1.0) * 0.618_033_988_749_895).fract());
    v /= v.norm();
    let mut sigma = 0.0;
    for _ in 0..steps {
        let av = a * &v;
        let mut w = a.tr_mul(&av);
        let norm = w.norm();
        if norm == 0.0 {
            return 0.0;
        }
        w /= norm;
        let next = norm.sqrt();
        v = w;
        if (next - sigma).abs() <= tol * next {
            sigma = next;
            break;
        }
        sigma = next;
    }
    sigma
}

/// Proximal-gradient solve from `V = 0`.
pub fn rls_solve(inst: &Instance, opts: &SolveOptions) -> Result<SolveReport> {
    inst.validate()?;
    if opts.max_iter == 0 || !(opts.tol > 0.0) {
        return Err(Error::InvalidParameter("need max_iter >= 1 and tol > 0".into()));
    }
    let j_count = inst.terminals();
    let n = inst.len();
    let spec = &inst.spec;
    let accelerate = opts.accelerate.unwrap_or_else(|| spec.is_convex());

    let lipschitz = inst
        .a
        .iter()
        .zip(&inst.lambda)
        .map(|(a, l)| operator_norm(a, 50, 1e-10).powi(2) / l)
        .fold(0.0f64, f64::max);
    let mut step = match opts.step {
        StepPolicy::Fixed(s) if s > 0.0 => s,
        StepPolicy::Fixed(s) => return Err(Error::InvalidParameter(format!("step must be positive, got {s}"))),
        StepPolicy::Backtracking if lipschitz > 0.0 => 1.0 / lipschitz,
        StepPolicy::Backtracking => 1.0,
    };
    let backtrack = opts.step == StepPolicy::Backtracking;

    let mut x = DMatrix::zeros(j_count, n);
    let mut ax: Vec<DVector<f64>> = inst.a.iter().map(|a| DVector::zeros(a.nrows())).collect();
    let mut x_prev = x.clone();
    let mut ax_prev = ax.clone();
    let mut f_obj = smooth_value(inst, &ax) + penalty(spec, &x);
    let mut trace = vec![f_obj];
    let mut t_k: f64 = 1.0;
    let mut converged = false;
    let mut iterations = 0;

    let mut z = x.clone();
    let mut az = ax.clone();
    let mut grad = DMatrix::zeros(j_count, n);
    let mut cand = DMatrix::zeros(j_count, n);
    let mut point = DMatrix::zeros(j_count, n);
    let tau_buf = |s: f64| vec![s; j_count];

    for it in 1..=opts.max_iter {
        iterations = it;
        // extrapolation
        let beta = if accelerate && it > 1 {
            let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t_k * t_k).sqrt());
            let b = (t_k - 1.0) / t_next;
            t_k = t_next;
            b
        } else {
            0.0
        };
        z.copy_from(&x);
        if beta != 0.0 {
            z += (&x - &x_prev) * beta;
        }
        for j in 0..j_count {
            az[j].copy_from(&ax[j]);
            if beta != 0.0 {
                az[j] += (&ax[j] - &ax_prev[j]) * beta;
            }
        }

        let mut restarted = false;
        loop {
            let f_z = smooth_value(inst, &az);
            for j in 0..j_count {
                let g = inst.a[j].tr_mul(&(&az[j] - &inst.y[j])) / inst.lambda[j];
                grad.row_mut(j).copy_from(&g.transpose());
            }
            // backtracking on the quadratic upper bound
            let (f_cand, a_cand) = loop {
                point.copy_from(&z);
                point.zip_apply(&grad, |p, g| *p -= step * g);
                spec.prox_block_into(&point, &tau_buf(step), &mut cand)?;
                let a_cand = products(inst, &cand);
                let f_cand = smooth_value(inst, &a_cand);
                if !backtrack {
                    break (f_cand, a_cand);
                }
                let diff = &cand - &z;
                let bound = f_z + grad.dot(&diff) + diff.norm_squared() / (2.0 * step);
                if f_cand <= bound + 1e-12 * bound.abs().max(1e-300) || step < 1e-300 {
                    break (f_cand, a_cand);
                }
                step *= 0.5;
            };
            let obj = f_cand + penalty(spec, &cand);
            if !obj.is_finite() {
                trace.push(obj);
                return Err(Error::Diverged { iterations: it, trace });
            }
            if obj > f_obj && beta != 0.0 && !restarted {
                // restart: redo a plain step from the current iterate
                restarted = true;
                t_k = 1.0;
                z.copy_from(&x);
                for j in 0..j_count {
                    az[j].copy_from(&ax[j]);
                }
                continue;
            }
            let decrease = f_obj - obj;
            std::mem::swap(&mut x_prev, &mut x);
            std::mem::swap(&mut ax_prev, &mut ax);
            if obj <= f_obj || !backtrack {
                x.copy_from(&cand);
                ax = a_cand;
                f_obj = obj;
            } else {
                // a plain step that fails to decrease leaves the iterate in place
                x.copy_from(&x_prev);
                ax = ax_prev.clone();
            }
            trace.push(f_obj);
            if decrease.abs() <= opts.tol * f_obj.abs().max(1e-300) {
                converged = true;
            }
            break;
        }
        if converged {
            break;
        }
    }
    Ok(SolveReport {
        xhat: x,
        objective_trace: trace,
        iterations,
        converged,
        final_step: step,
    })
}

/// Distortion of the solution against the instance's ground truth.
pub fn score(inst: &Instance, report: &SolveReport, kind: DistortionKind) -> Result<f64> {
    let x = inst
        .x_true
        .as_ref()
        .ok_or_else(|| Error::InvalidParameter("instance has no ground truth to score against".into()))?;
    distortion(&report.xhat, x, kind)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::regularizers::RegKind;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(m: usize, n: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(m, n, |_, _| rng.random::<f64>() * 2.0 - 1.0)
    }

    #[test]
    fn zero_point_of_empty_problem() {
        let inst = Instance::new(
            vec![DMatrix::identity(3, 3)],
            vec![DVector::zeros(3)],
            vec![1.0],
            RegularizerSpec::l1(1.0),
            None,
        )
        .unwrap();
        assert_eq!(objective(&inst, &DMatrix::zeros(1, 3)).unwrap(), 0.0);
    }

    #[test]
    fn objective_matches_explicit_loops() {
        let (m, n) = (3, 5);
        let a = vec![random_matrix(m, n, 1), random_matrix(m, n, 2)];
        let y = vec![DVector::from_fn(m, |i, _| i as f64), DVector::from_fn(m, |i, _| 1.0 - i as f64)];
        let spec = RegularizerSpec::new(RegKind::TwoDimLasso { phi: 0.5, alpha: -1.0 }, 0.3);
        let inst = Instance::new(a.clone(), y.clone(), vec![0.5, 2.0], spec, None).unwrap();
        let v = random_matrix(2, n, 3);
        let mut expect = 0.0;
        for j in 0..2 {
            let lam = [0.5, 2.0][j];
            for r in 0..m {
                let mut s = 0.0;
                for c in 0..n {
                    s += a[j][(r, c)] * v[(j, c)];
                }
                expect += (y[j][r] - s).powi(2) / (2.0 * lam);
            }
        }
        for c in 0..n {
            expect += 0.3 * (v[(0, c)].abs() + v[(1, c)].abs() + 0.5 * (v[(0, c)] - v[(1, c)]).abs());
        }
        assert!((objective(&inst, &v).unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn unregularized_square_system_is_solved() {
        let a = random_matrix(6, 6, 7) + DMatrix::identity(6, 6) * 3.0;
        let x = DVector::from_fn(6, |i, _| i as f64 - 2.5);
        let y = &a * &x;
        let inst = Instance::new(vec![a], vec![y], vec![1.0], RegularizerSpec::zero(), None).unwrap();
        let rep = rls_solve(&inst, &SolveOptions { tol: 1e-16, max_iter: 20000, ..Default::default() }).unwrap();
        for i in 0..6 {
            assert!((rep.xhat[(0, i)] - x[i]).abs() < 1e-8, "{}", rep.xhat);
        }
    }

    #[test]
    fn identity_sensing_is_soft_threshold() {
        let n = 8;
        let y = DVector::from_fn(n, |i, _| (i as f64 - 3.5) * 0.4);
        let spec = RegularizerSpec::l1(0.5);
        let lambda = 0.8;
        let inst = Instance::new(vec![DMatrix::identity(n, n)], vec![y.clone()], vec![lambda], spec, None).unwrap();
        let rep = rls_solve(&inst, &SolveOptions::default()).unwrap();
        for i in 0..n {
            let expect = spec.scalar_estimate(&[y[i]], &[lambda]).unwrap()[0];
            assert!((rep.xhat[(0, i)] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn trace_is_monotone_and_solve_is_deterministic() {
        let a = random_matrix(20, 40, 5) / 5.0;
        let y = DVector::from_fn(20, |i, _| ((i * 7) % 5) as f64 - 2.0);
        let spec = RegularizerSpec::new(RegKind::GroupL21, 0.2);
        let inst = Instance::new(vec![a.clone(), a], vec![y.clone(), y * 0.5], vec![0.3, 0.6], spec, None).unwrap();
        let rep = rls_solve(&inst, &SolveOptions::default()).unwrap();
        assert!(rep.converged);
        for w in rep.objective_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-12);
        }
        let again = rls_solve(&inst, &SolveOptions::default()).unwrap();
        assert_eq!(rep.xhat, again.xhat);
    }

    #[test]
    fn score_needs_ground_truth() {
        let inst = Instance::new(
            vec![DMatrix::identity(2, 2)],
            vec![DVector::zeros(2)],
            vec![1.0],
            RegularizerSpec::zero(),
            None,
        )
        .unwrap();
        let rep = rls_solve(&inst, &SolveOptions::default()).unwrap();
        assert!(score(&inst, &rep, DistortionKind::Mse).is_err());
    }

    #[test]
    fn operator_norm_of_diagonal() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -3.0, 2.0]));
        assert!((operator_norm(&a, 200, 1e-14) - 3.0).abs() < 1e-6);
    }
}
