//! Gauss rules by the Golub–Welsch eigenvalue method, cached per order.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::{DMatrix, SymmetricEigen};

/// Nodes and weights of an `n`-point rule.
#[derive(Clone, Debug)]
pub struct Rule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

/// Rule from the symmetric tridiagonal Jacobi matrix with zero diagonal and
/// off-diagonal `beta[k]`, for a weight of total mass `mass`.
fn golub_welsch(beta: &[f64], mass: f64) -> Rule {
    let n = beta.len() + 1;
    let mut jac = DMatrix::zeros(n, n);
    for (k, b) in beta.iter().enumerate() {
        jac[(k, k + 1)] = *b;
        jac[(k + 1, k)] = *b;
    }
    let eig = SymmetricEigen::new(jac);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|i| (eig.eigenvalues[i], mass * eig.eigenvectors[(0, i)].powi(2)))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    // Both weights are even; symmetrise to remove rounding asymmetry.
    for i in 0..n / 2 {
        let k = n - 1 - i;
        let x = 0.5 * (pairs[k].0 - pairs[i].0);
        let w = 0.5 * (pairs[i].1 + pairs[k].1);
        pairs[i] = (-x, w);
        pairs[k] = (x, w);
    }
    if n % 2 == 1 {
        pairs[n / 2].0 = 0.0;
    }
    Rule {
        nodes: pairs.iter().map(|p| p.0).collect(),
        weights: pairs.iter().map(|p| p.1).collect(),
    }
}

fn cached(table: &'static OnceLock<Mutex<HashMap<usize, Arc<Rule>>>>, n: usize, build: fn(usize) -> Rule) -> Arc<Rule> {
    let map = table.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = map.lock().unwrap_or_else(|e| e.into_inner());
    guard.entry(n).or_insert_with(|| Arc::new(build(n))).clone()
}

/// `E[f(t)]` for `t ~ N(0, 1)`: probabilists' Gauss–Hermite, weights summing to one.
pub fn gauss_hermite(n: usize) -> Arc<Rule> {
    static TABLE: OnceLock<Mutex<HashMap<usize, Arc<Rule>>>> = OnceLock::new();
    cached(&TABLE, n, |n| {
        let beta: Vec<f64> = (1..n).map(|k| (k as f64).sqrt()).collect();
        golub_welsch(&beta, 1.0)
    })
}

/// `∫_{-1}^{1} f(t) dt`: Gauss–Legendre.
pub fn gauss_legendre(n: usize) -> Arc<Rule> {
    static TABLE: OnceLock<Mutex<HashMap<usize, Arc<Rule>>>> = OnceLock::new();
    cached(&TABLE, n, |n| {
        let beta: Vec<f64> = (1..n)
            .map(|k| {
                let k = k as f64;
                k / (4.0 * k * k - 1.0).sqrt()
            })
            .collect();
        golub_welsch(&beta, 2.0)
    })
}
