//! Separable penalties `u(v^J)` and the decoupled estimator
//!
//! ```text
//! x̂ = argmin_{v ∈ X^J}  Σ_j (y_j - v_j)² / (2 τ_j) + u(v)
//! ```
//!
//! Convex kinds are solved exactly: closed forms for the separable ones, a
//! secular equation for the group norm, and enumeration of the linear pieces
//! for the two-dimensional LASSO. Box constraints are handled by enumerating
//! which coordinates sit on a face of the box. The general `ℓ_{p,q}` penalty,
//! which may be nonconvex, goes through a grid search with local refinement.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RegKind {
    /// `Σ_j |v_j|`
    L1,
    /// `(Σ_j |v_j|^p)^{q/p}`
    Lpq { p: f64, q: f64 },
    /// `‖v‖₂`, the group LASSO; identical to `Lpq { p: 2, q: 1 }`.
    GroupL21,
    /// `|v_1| + |v_2| + φ |v_1 + α v_2|`, two terminals only.
    TwoDimLasso { phi: f64, alpha: f64 },
    /// `½ Σ_j v_j²`
    Ridge,
    Zero,
    /// Number of nonzero entries. Experimental: nonconvex.
    L0,
}

impl RegKind {
    pub fn name(&self) -> &'static str {
        match self {
            RegKind::L1 => "l1",
            RegKind::Lpq { .. } => "lpq",
            RegKind::GroupL21 => "group_l21",
            RegKind::TwoDimLasso { .. } => "two_dim_lasso",
            RegKind::Ridge => "ridge",
            RegKind::Zero => "zero",
            RegKind::L0 => "l0",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Domain {
    Reals,
    /// `[-B, B]` per coordinate.
    Box(f64),
}

impl Domain {
    fn bound(self) -> Option<f64> {
        match self {
            Domain::Reals => None,
            Domain::Box(b) => Some(b),
        }
    }

    #[inline]
    fn clip(self, v: f64) -> f64 {
        match self {
            Domain::Reals => v,
            Domain::Box(b) => v.clamp(-b, b),
        }
    }
}

/// Penalty `weight · u(v)` over the feasible set `domain`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RegularizerSpec {
    pub kind: RegKind,
    pub weight: f64,
    pub domain: Domain,
}

/// One-dimensional penalty law of a separable spec.
#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) enum ScalarRule {
    Identity,
    /// `w |v|`
    Soft(f64),
    /// `w v² / 2`
    Shrink(f64),
    /// `w · 1{v ≠ 0}`
    Hard(f64),
    /// `w |v|^e`
    Power(f64, f64),
}

impl RegularizerSpec {
    pub fn new(kind: RegKind, weight: f64) -> Self {
        RegularizerSpec { kind, weight, domain: Domain::Reals }
    }

    pub fn l1(weight: f64) -> Self {
        Self::new(RegKind::L1, weight)
    }

    pub fn ridge(weight: f64) -> Self {
        Self::new(RegKind::Ridge, weight)
    }

    pub fn zero() -> Self {
        Self::new(RegKind::Zero, 0.0)
    }

    pub fn with_box(mut self, bound: f64) -> Self {
        self.domain = Domain::Box(bound);
        self
    }

    pub fn validate(&self, terminals: usize) -> Result<()> {
        if !(self.weight >= 0.0) || !self.weight.is_finite() {
            return Err(Error::InvalidParameter(format!("weight must be >= 0, got {}", self.weight)));
        }
        if let Domain::Box(b) = self.domain {
            if !(b > 0.0) || !b.is_finite() {
                return Err(Error::InvalidParameter(format!("box bound must be positive, got {b}")));
            }
        }
        match self.kind {
            RegKind::Lpq { p, q } => {
                if !(p > 0.0 && q > 0.0) || !p.is_finite() || !q.is_finite() {
                    return Err(Error::InvalidParameter(format!("lpq needs p, q > 0, got ({p}, {q})")));
                }
            }
            RegKind::TwoDimLasso { phi, alpha } => {
                if terminals != 2 {
                    return Err(Error::InvalidParameter(format!(
                        "two_dim_lasso needs exactly 2 terminals, got {terminals}"
                    )));
                }
                if !(phi >= 0.0) || !phi.is_finite() || !alpha.is_finite() {
                    return Err(Error::InvalidParameter(format!(
                        "two_dim_lasso needs phi >= 0 and finite alpha, got ({phi}, {alpha})"
                    )));
                }
            }
            _ => {}
        }
        Ok(())
    }

    /// Convexity of the penalty; decides whether the finite-N solver may accelerate.
    pub fn is_convex(&self) -> bool {
        match self.kind {
            RegKind::L0 => false,
            RegKind::Lpq { p, q } => p >= 1.0 && q >= 1.0,
            _ => true,
        }
    }

    /// Whether the estimator acts on each terminal independently.
    pub fn is_separable(&self, terminals: usize) -> bool {
        self.scalar_rule(terminals).is_some()
    }

    pub(crate) fn scalar_rule(&self, terminals: usize) -> Option<ScalarRule> {
        let w = self.weight;
        let power = |e: f64| {
            if e == 1.0 {
                ScalarRule::Soft(w)
            } else if e == 2.0 {
                ScalarRule::Shrink(2.0 * w)
            } else {
                ScalarRule::Power(w, e)
            }
        };
        if w == 0.0 {
            return Some(ScalarRule::Identity);
        }
        match self.kind {
            RegKind::Zero => Some(ScalarRule::Identity),
            RegKind::L1 => Some(ScalarRule::Soft(w)),
            RegKind::Ridge => Some(ScalarRule::Shrink(w)),
            RegKind::L0 => Some(ScalarRule::Hard(w)),
            RegKind::GroupL21 if terminals == 1 => Some(ScalarRule::Soft(w)),
            RegKind::Lpq { q, .. } if terminals == 1 => Some(power(q)),
            RegKind::Lpq { p, q } if p == q => Some(power(p)),
            RegKind::TwoDimLasso { phi, .. } if phi == 0.0 => Some(ScalarRule::Soft(w)),
            _ => None,
        }
    }

    /// `weight · u(v)`.
    pub fn value(&self, v: &[f64]) -> f64 {
        let w = self.weight;
        if w == 0.0 {
            return 0.0;
        }
        let u = match self.kind {
            RegKind::Zero => 0.0,
            RegKind::L1 => v.iter().map(|x| x.abs()).sum(),
            RegKind::Ridge => 0.5 * v.iter().map(|x| x * x).sum::<f64>(),
            RegKind::L0 => v.iter().filter(|x| **x != 0.0).count() as f64,
            RegKind::GroupL21 => euclidean(v),
            RegKind::Lpq { p, q } if p == 2.0 && q == 1.0 => euclidean(v),
            RegKind::Lpq { p, q } => {
                let s: f64 = v.iter().map(|x| x.abs().powf(p)).sum();
                s.powf(q / p)
            }
            RegKind::TwoDimLasso { phi, alpha } => {
                let (a, b) = (v[0], v[1]);
                a.abs() + b.abs() + phi * (a + alpha * b).abs()
            }
        };
        w * u
    }

    /// `Σ_j (y_j - v_j)² / (2τ_j) + weight · u(v)`.
    pub fn objective(&self, y: &[f64], tau: &[f64], v: &[f64]) -> f64 {
        let fit: f64 = y
            .iter()
            .zip(tau)
            .zip(v)
            .map(|((y, t), v)| (y - v) * (y - v) / (2.0 * t))
            .sum();
        fit + self.value(v)
    }

    /// The decoupled estimator: a global minimizer of [`objective`](Self::objective)
    /// over the domain. Ties go to the smaller Euclidean norm.
    pub fn scalar_estimate(&self, y: &[f64], tau: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; y.len()];
        self.estimate_into(y, tau, &mut out)?;
        Ok(out)
    }

    /// [`scalar_estimate`](Self::scalar_estimate) writing into `out`.
    pub fn estimate_into(&self, y: &[f64], tau: &[f64], out: &mut [f64]) -> Result<()> {
        let j = y.len();
        if tau.len() != j || out.len() != j {
            return Err(Error::Shape(format!(
                "y has {j} entries, tau {}, output {}",
                tau.len(),
                out.len()
            )));
        }
        if y.iter().chain(tau).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("decoupled input y={y:?}, tau={tau:?}")));
        }
        if tau.iter().any(|t| *t <= 0.0) {
            return Err(Error::InvalidParameter(format!("tau must be positive, got {tau:?}")));
        }
        if let Some(rule) = self.scalar_rule(j) {
            for k in 0..j {
                out[k] = scalar_estimate_1d(rule, self.domain, y[k], tau[k]);
            }
            return Ok(());
        }
        match self.kind {
            RegKind::GroupL21 => group_estimate(y, tau, self.weight, self.domain.bound(), out),
            RegKind::Lpq { p, q } if p == 2.0 && q == 1.0 => {
                group_estimate(y, tau, self.weight, self.domain.bound(), out)
            }
            RegKind::TwoDimLasso { phi, alpha } => {
                if self.domain == Domain::Reals && alpha != 0.0 {
                    if let Some(v) = two_dim_kkt(self.weight, phi, alpha, [y[0], y[1]], [tau[0], tau[1]]) {
                        out[0] = v[0];
                        out[1] = v[1];
                        return Ok(());
                    }
                }
                let rows = [
                    ([1.0, 0.0], self.weight),
                    ([0.0, 1.0], self.weight),
                    ([1.0, alpha], self.weight * phi),
                ];
                let v = polyhedral_2d(self, &rows, [y[0], y[1]], [tau[0], tau[1]]);
                out[0] = v[0];
                out[1] = v[1];
            }
            RegKind::Lpq { .. } => grid_estimate(self, y, tau, out),
            _ => unreachable!("separable kinds are dispatched above"),
        }
        Ok(())
    }

    /// One-dimensional estimate for terminal-separable specs, `None` otherwise.
    pub fn separable_estimate(&self, terminals: usize, y: f64, tau: f64) -> Option<f64> {
        self.scalar_rule(terminals)
            .map(|rule| scalar_estimate_1d(rule, self.domain, y, tau))
    }

    /// Apply the estimator to every column of a `J×N` matrix.
    pub fn prox_block(&self, v: &DMatrix<f64>, tau: &[f64]) -> Result<DMatrix<f64>> {
        let mut out = DMatrix::zeros(v.nrows(), v.ncols());
        self.prox_block_into(v, tau, &mut out)?;
        Ok(out)
    }

    pub fn prox_block_into(&self, v: &DMatrix<f64>, tau: &[f64], out: &mut DMatrix<f64>) -> Result<()> {
        if tau.len() != v.nrows() || out.shape() != v.shape() {
            return Err(Error::Shape(format!(
                "block is {:?}, tau has {} entries, output is {:?}",
                v.shape(),
                tau.len(),
                out.shape()
            )));
        }
        let j = v.nrows();
        if let Some(rule) = self.scalar_rule(j) {
            if tau.iter().any(|t| !(*t > 0.0)) {
                return Err(Error::InvalidParameter(format!("tau must be positive, got {tau:?}")));
            }
            for (col_in, mut col_out) in v.column_iter().zip(out.column_iter_mut()) {
                for k in 0..j {
                    let y = col_in[k];
                    if !y.is_finite() {
                        return Err(Error::NonFinite(format!("prox input {y}")));
                    }
                    col_out[k] = scalar_estimate_1d(rule, self.domain, y, tau[k]);
                }
            }
            return Ok(());
        }
        let mut buf = vec![0.0; j];
        let mut res = vec![0.0; j];
        for (col_in, mut col_out) in v.column_iter().zip(out.column_iter_mut()) {
            buf.iter_mut().zip(col_in.iter()).for_each(|(b, c)| *b = *c);
            self.estimate_into(&buf, tau, &mut res)?;
            col_out.iter_mut().zip(&res).for_each(|(o, r)| *o = *r);
        }
        Ok(())
    }

    /// Points where the one-dimensional estimate of a separable spec is not
    /// smooth in `y`. Used to split quadrature panels.
    pub fn breakpoints_1d(&self, terminals: usize, tau: f64) -> Vec<f64> {
        let Some(rule) = self.scalar_rule(terminals) else {
            return Vec::new();
        };
        let mut pts = Vec::new();
        let thresh = match rule {
            ScalarRule::Soft(w) => Some(w * tau),
            ScalarRule::Hard(w) => Some((2.0 * w * tau).sqrt()),
            _ => None,
        };
        if let Some(t) = thresh {
            pts.extend([-t, t]);
        }
        if let Domain::Box(b) = self.domain {
            // y values at which the unconstrained estimate reaches ±B
            let edge = match rule {
                ScalarRule::Identity => Some(b),
                ScalarRule::Soft(w) => Some(b + w * tau),
                ScalarRule::Shrink(w) => Some(b * (1.0 + w * tau)),
                ScalarRule::Hard(w) => Some(b / 2.0 + w * tau / b),
                ScalarRule::Power(..) => None,
            };
            if let Some(e) = edge {
                pts.extend([-e, e]);
            }
            pts.extend([-b, b]);
        }
        pts.retain(|p| p.is_finite());
        pts.sort_by(f64::total_cmp);
        pts.dedup();
        pts
    }
}

#[inline]
fn euclidean(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[inline]
fn soft_threshold(y: f64, t: f64) -> f64 {
    if y > t {
        y - t
    } else if y < -t {
        y + t
    } else {
        0.0
    }
}

pub(crate) fn scalar_estimate_1d(rule: ScalarRule, domain: Domain, y: f64, tau: f64) -> f64 {
    match rule {
        ScalarRule::Identity => domain.clip(y),
        ScalarRule::Soft(w) => domain.clip(soft_threshold(y, w * tau)),
        ScalarRule::Shrink(w) => domain.clip(y / (1.0 + w * tau)),
        ScalarRule::Hard(w) => {
            let kept = domain.clip(y);
            let cost_kept = (y - kept) * (y - kept) / (2.0 * tau) + w;
            let cost_zero = y * y / (2.0 * tau);
            if cost_kept < cost_zero {
                kept
            } else {
                0.0
            }
        }
        ScalarRule::Power(w, e) => {
            // The minimizer shares the sign of y and shrinks its magnitude.
            let a = y.abs();
            let hi = domain.bound().map_or(a, |b| a.min(b));
            let h = |t: f64| (a - t) * (a - t) / (2.0 * tau) + w * t.powf(e);
            y.signum() * minimize_1d(&h, 0.0, hi, 2001)
        }
    }
}

/// Global minimum of `h` on `[lo, hi]` over a uniform grid, refined by golden
/// section around each discrete local minimum. Ties go to the smaller point.
fn minimize_1d(h: &dyn Fn(f64) -> f64, lo: f64, hi: f64, points: usize) -> f64 {
    if hi <= lo {
        return lo;
    }
    let step = (hi - lo) / (points - 1) as f64;
    let vals: Vec<f64> = (0..points).map(|i| h(lo + step * i as f64)).collect();
    let mut best_t = lo;
    let mut best_h = vals[0];
    for i in 0..points {
        let left = if i > 0 { vals[i - 1] } else { f64::INFINITY };
        let right = if i + 1 < points { vals[i + 1] } else { f64::INFINITY };
        if vals[i] > left || vals[i] > right {
            continue;
        }
        let t = lo + step * i as f64;
        let (a, b) = ((t - step).max(lo), (t + step).min(hi));
        let (rt, rh) = golden(h, a, b);
        let (cand_t, cand_h) = if rh < vals[i] { (rt, rh) } else { (t, vals[i]) };
        if cand_h < best_h || (cand_h == best_h && cand_t.abs() < best_t.abs()) {
            best_t = cand_t;
            best_h = cand_h;
        }
    }
    best_t
}

/// Golden-section search for a local minimum of `h` in `[a, b]`.
fn golden(h: &dyn Fn(f64) -> f64, mut a: f64, mut b: f64) -> (f64, f64) {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut hc = h(c);
    let mut hd = h(d);
    for _ in 0..200 {
        if (b - a).abs() <= 1e-15 * (1.0 + a.abs().max(b.abs())) {
            break;
        }
        if hc <= hd {
            b = d;
            d = c;
            hd = hc;
            c = b - INV_PHI * (b - a);
            hc = h(c);
        } else {
            a = c;
            c = d;
            hc = hd;
            d = a + INV_PHI * (b - a);
            hd = h(d);
        }
    }
    let mut best = if hc <= hd { (c, hc) } else { (d, hd) };
    for t in [a, b] {
        let ht = h(t);
        if ht < best.1 {
            best = (t, ht);
        }
    }
    best
}

/// Root of a decreasing function on `[lo, hi]` by bisection.
fn bisect_decreasing(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Group LASSO `w‖v‖₂` with optional box.
fn group_estimate(y: &[f64], tau: &[f64], w: f64, bound: Option<f64>, out: &mut [f64]) {
    let j = y.len();
    group_unconstrained(y, tau, w, out);
    let Some(b) = bound else { return };
    if out.iter().all(|v| v.abs() <= b) {
        return;
    }
    // Enumerate which coordinates sit on a face of the box; the optimum is the
    // best feasible stationary point over these patterns.
    let spec = RegularizerSpec::new(RegKind::GroupL21, w).with_box(b);
    let mut best = vec![0.0; j];
    let mut best_obj = f64::INFINITY;
    let mut cand = vec![0.0; j];
    let patterns = 3usize.pow(j as u32);
    for code in 1..patterns {
        let mut rest = code;
        let mut fixed_sq = 0.0;
        let mut free = Vec::with_capacity(j);
        for k in 0..j {
            match rest % 3 {
                0 => free.push(k),
                1 => {
                    cand[k] = b;
                    fixed_sq += b * b;
                }
                _ => {
                    cand[k] = -b;
                    fixed_sq += b * b;
                }
            }
            rest /= 3;
        }
        if fixed_sq == 0.0 {
            continue;
        }
        if w == 0.0 {
            for &k in &free {
                cand[k] = y[k];
            }
        } else if !free.is_empty() {
            // Stationarity: v_k = y_k r / (r + w τ_k) with r = ‖v‖ solving
            // fixed/r² + Σ y_k² / (r + w τ_k)² = 1.
            let psi = |r: f64| {
                fixed_sq / (r * r) + free.iter().map(|&k| (y[k] / (r + w * tau[k])).powi(2)).sum::<f64>() - 1.0
            };
            let lo = fixed_sq.sqrt();
            let norm_free = free.iter().map(|&k| y[k] * y[k]).sum::<f64>().sqrt();
            let r = bisect_decreasing(psi, lo, lo + norm_free);
            for &k in &free {
                cand[k] = y[k] * r / (r + w * tau[k]);
            }
        }
        if free.iter().any(|&k| cand[k].abs() > b * (1.0 + 1e-12)) {
            continue;
        }
        for &k in &free {
            cand[k] = cand[k].clamp(-b, b);
        }
        let obj = spec.objective(y, tau, &cand);
        if better(obj, &cand, best_obj, &best) {
            best_obj = obj;
            best.copy_from_slice(&cand);
        }
    }
    out.copy_from_slice(&best);
}

fn group_unconstrained(y: &[f64], tau: &[f64], w: f64, out: &mut [f64]) {
    if w == 0.0 {
        out.copy_from_slice(y);
        return;
    }
    let scaled: f64 = y.iter().zip(tau).map(|(y, t)| (y / t) * (y / t)).sum();
    if scaled <= w * w {
        out.iter_mut().for_each(|v| *v = 0.0);
        return;
    }
    let norm = euclidean(y);
    let r = if tau.iter().all(|t| *t == tau[0]) {
        norm - w * tau[0]
    } else {
        let phi = |r: f64| y.iter().zip(tau).map(|(y, t)| (y / (r + w * t)).powi(2)).sum::<f64>() - 1.0;
        bisect_decreasing(phi, 0.0, norm)
    };
    for ((o, y), t) in out.iter_mut().zip(y).zip(tau) {
        *o = y * r / (r + w * t);
    }
}

/// Lexicographic preference: lower objective, then smaller norm, then
/// lexicographically smaller vector. Objectives within 1e-14 relative tie.
fn better(obj: f64, v: &[f64], best_obj: f64, best: &[f64]) -> bool {
    if !best_obj.is_finite() {
        return obj.is_finite() || best_obj.is_nan();
    }
    let tol = 1e-14 * best_obj.abs().max(1.0);
    if obj < best_obj - tol {
        return true;
    }
    if obj > best_obj + tol {
        return false;
    }
    let (nv, nb) = (euclidean(v), euclidean(best));
    if nv != nb {
        return nv < nb;
    }
    v.iter().zip(best).find(|(a, b)| a != b).is_some_and(|(a, b)| a < b)
}

/// Exact minimizer for two coordinates and a polyhedral penalty
/// `Σ_k c_k |a_k · v|`, by enumerating sign patterns of the rows (and box
/// faces). Every candidate is feasible, and the optimum is the candidate of
/// its own pattern, so the best candidate is a global minimizer.
fn polyhedral_2d(spec: &RegularizerSpec, rows: &[([f64; 2], f64)], y: [f64; 2], tau: [f64; 2]) -> [f64; 2] {
    let bound = spec.domain.bound();
    let box_states: &[i8] = if bound.is_some() { &[0, 1, -1] } else { &[0] };
    let k = rows.len();
    let sign_patterns = 3usize.pow(k as u32);
    let mut best = [0.0; 2];
    let mut best_obj = f64::INFINITY;
    let mut constraints: Vec<([f64; 2], f64)> = Vec::with_capacity(k + 2);
    for code in 0..sign_patterns {
        let mut g = [0.0; 2];
        let mut rest = code;
        constraints.clear();
        for (a, c) in rows {
            match rest % 3 {
                0 => constraints.push((*a, 0.0)),
                s => {
                    let sign = if s == 1 { 1.0 } else { -1.0 };
                    g[0] += c * sign * a[0];
                    g[1] += c * sign * a[1];
                }
            }
            rest /= 3;
        }
        let base = constraints.len();
        for &b0 in box_states {
            for &b1 in box_states {
                constraints.truncate(base);
                let b = bound.unwrap_or(0.0);
                if b0 != 0 {
                    constraints.push(([1.0, 0.0], b0 as f64 * b));
                }
                if b1 != 0 {
                    constraints.push(([0.0, 1.0], b1 as f64 * b));
                }
                let Some(mut v) = constrained_quadratic_2d(y, tau, g, &constraints) else {
                    continue;
                };
                if let Some(b) = bound {
                    if v.iter().any(|x| x.abs() > b * (1.0 + 1e-12)) {
                        continue;
                    }
                    v = [v[0].clamp(-b, b), v[1].clamp(-b, b)];
                }
                let obj = spec.objective(&y, &tau, &v);
                if better(obj, &v, best_obj, &best) {
                    best_obj = obj;
                    best = v;
                }
            }
        }
    }
    best
}

/// Unconstrained two-dimensional LASSO by KKT certification: candidates are
/// tried by zero set (the origin, one vanishing row, none) and the first one
/// admitting a valid subgradient is the unique minimizer. `None` if rounding
/// rejects every candidate.
fn two_dim_kkt(w: f64, phi: f64, alpha: f64, y: [f64; 2], tau: [f64; 2]) -> Option<[f64; 2]> {
    let rows = [[1.0, 0.0], [0.0, 1.0], [1.0, alpha]];
    let c = [w, w, w * phi];
    let dot = |a: [f64; 2], v: [f64; 2]| a[0] * v[0] + a[1] * v[1];
    let scale = y[0].abs() + y[1].abs() + w * (tau[0] + tau[1]) * (2.0 + phi) * (1.0 + alpha.abs());
    let eps = 1e-12 * scale;

    // v = 0 iff T⁻¹y lies in the zonotope Σ c_k [-1, 1] a_k.
    let p = [y[0] / tau[0], y[1] / tau[1]];
    let at_origin = (0..3).all(|k| {
        let g = [c[k] * rows[k][0], c[k] * rows[k][1]];
        let n = [-g[1], g[0]];
        let support: f64 = (0..3).map(|i| (c[i] * dot(n, rows[i])).abs()).sum();
        dot(n, p).abs() <= support * (1.0 + 1e-14)
    });
    if at_origin {
        return Some([0.0, 0.0]);
    }

    let signs = [1.0, -1.0];
    // One vanishing row k, the others with fixed signs.
    for k in 0..3 {
        let (i, l) = match k {
            0 => (1, 2),
            1 => (0, 2),
            _ => (0, 1),
        };
        for si in signs {
            for sl in signs {
                let u = [
                    y[0] - tau[0] * (c[i] * si * rows[i][0] + c[l] * sl * rows[l][0]),
                    y[1] - tau[1] * (c[i] * si * rows[i][1] + c[l] * sl * rows[l][1]),
                ];
                let a = rows[k];
                let ta = [tau[0] * a[0], tau[1] * a[1]];
                let mu = dot(a, u) / dot(a, ta);
                if mu.abs() > c[k] * (1.0 + 1e-12) + eps {
                    continue;
                }
                let mut v = [u[0] - mu * ta[0], u[1] - mu * ta[1]];
                if si * dot(rows[i], v) < -eps || sl * dot(rows[l], v) < -eps {
                    continue;
                }
                // enforce the vanishing row exactly
                if k < 2 {
                    v[k] = 0.0;
                }
                return Some(v);
            }
        }
    }

    // No vanishing row.
    for code in 0..8 {
        let s = [
            if code & 1 == 0 { 1.0 } else { -1.0 },
            if code & 2 == 0 { 1.0 } else { -1.0 },
            if code & 4 == 0 { 1.0 } else { -1.0 },
        ];
        let g = [
            c[0] * s[0] + c[2] * s[2] * rows[2][0],
            c[1] * s[1] + c[2] * s[2] * rows[2][1],
        ];
        let v = [y[0] - tau[0] * g[0], y[1] - tau[1] * g[1]];
        if (0..3).all(|k| s[k] * dot(rows[k], v) >= -eps) {
            return Some(v);
        }
    }
    None
}

/// `argmin Σ (v_j - y_j)²/(2τ_j) + g·v` subject to `n·v = d` for each
/// constraint, or `None` when the constraints are inconsistent.
fn constrained_quadratic_2d(y: [f64; 2], tau: [f64; 2], g: [f64; 2], cons: &[([f64; 2], f64)]) -> Option<[f64; 2]> {
    let u = [y[0] - tau[0] * g[0], y[1] - tau[1] * g[1]];
    let Some(&(n1, d1)) = cons.first() else {
        return Some(u);
    };
    let scale = 1.0 + y[0].abs().max(y[1].abs()) + d1.abs();
    let cross = |a: [f64; 2], b: [f64; 2]| a[0] * b[1] - a[1] * b[0];
    let norm = |a: [f64; 2]| a[0].hypot(a[1]);
    let independent = cons
        .iter()
        .find(|(n, _)| cross(n1, *n).abs() > 1e-12 * norm(n1) * norm(*n));
    let v = match independent {
        Some(&(n2, d2)) => {
            let det = cross(n1, n2);
            [(d1 * n2[1] - d2 * n1[1]) / det, (n1[0] * d2 - n2[0] * d1) / det]
        }
        None => {
            let tn = [tau[0] * n1[0], tau[1] * n1[1]];
            let mu = (n1[0] * u[0] + n1[1] * u[1] - d1) / (n1[0] * tn[0] + n1[1] * tn[1]);
            [u[0] - mu * tn[0], u[1] - mu * tn[1]]
        }
    };
    let consistent = cons
        .iter()
        .all(|(n, d)| (n[0] * v[0] + n[1] * v[1] - d).abs() <= 1e-12 * scale * norm(*n).max(1.0));
    consistent.then_some(v)
}

/// Per-axis grid resolution for the general `ℓ_{p,q}` search.
fn grid_points(terminals: usize) -> usize {
    match terminals {
        1 => 2001,
        2 => 201,
        3 => 41,
        _ => 17,
    }
}

/// Grid search over magnitudes `0 ≤ t_j ≤ min(|y_j|, B)` followed by
/// coordinate-wise golden refinement of the best grid points. Signs follow `y`:
/// flipping a sign or overshooting `|y_j|` never lowers the objective.
fn grid_estimate(spec: &RegularizerSpec, y: &[f64], tau: &[f64], out: &mut [f64]) {
    let j = y.len();
    let hi: Vec<f64> = y
        .iter()
        .map(|v| spec.domain.bound().map_or(v.abs(), |b| v.abs().min(b)))
        .collect();
    let sign: Vec<f64> = y.iter().map(|v| if *v < 0.0 { -1.0 } else { 1.0 }).collect();
    let eval = |t: &[f64], buf: &mut Vec<f64>| -> f64 {
        buf.clear();
        buf.extend(t.iter().zip(&sign).map(|(t, s)| t * s));
        spec.objective(y, tau, buf)
    };
    let points = grid_points(j);
    let total = points.pow(j as u32);
    let mut buf = Vec::with_capacity(j);
    let mut t = vec![0.0; j];
    let mut scored: Vec<(f64, Vec<f64>)> = Vec::new();
    const KEEP: usize = 8;
    for idx in 0..total {
        let mut rest = idx;
        for k in 0..j {
            t[k] = hi[k] * (rest % points) as f64 / (points - 1) as f64;
            rest /= points;
        }
        let obj = eval(&t, &mut buf);
        if scored.len() < KEEP || obj < scored[scored.len() - 1].0 {
            let pos = scored.partition_point(|(o, _)| *o <= obj);
            scored.insert(pos, (obj, t.clone()));
            scored.truncate(KEEP);
        }
    }
    let step: Vec<f64> = hi.iter().map(|h| h / (points - 1) as f64).collect();
    let mut best = vec![0.0; j];
    let mut best_obj = f64::INFINITY;
    for (_, start) in scored {
        let mut cur = start;
        let mut radius: Vec<f64> = step.clone();
        for _ in 0..60 {
            for k in 0..j {
                let (a, b) = ((cur[k] - radius[k]).max(0.0), (cur[k] + radius[k]).min(hi[k]));
                let h = |x: f64| {
                    let mut probe = cur.clone();
                    probe[k] = x;
                    let mut local = Vec::with_capacity(j);
                    eval(&probe, &mut local)
                };
                let (x, hx) = golden(&h, a, b);
                let h0 = h(0.0);
                let here = h(cur[k]);
                if h0 <= hx && h0 <= here {
                    cur[k] = 0.0;
                } else if hx < here {
                    cur[k] = x;
                }
            }
            radius.iter_mut().for_each(|r| *r *= 0.5);
            if radius.iter().all(|r| *r < 1e-14) {
                break;
            }
        }
        let v: Vec<f64> = cur.iter().zip(&sign).map(|(t, s)| t * s).collect();
        let obj = spec.objective(y, tau, &v);
        if better(obj, &v, best_obj, &best) {
            best_obj = obj;
            best = v;
        }
    }
    out.copy_from_slice(&best);
}
