//! Sensing-matrix ensembles and the spectral laws of their Gramians.
//!
//! Transforms follow the convention `G(s) = ∫ dF(λ) / (λ - s)` and
//! `R(ω) = G⁻¹(-ω) - 1/ω`. With this convention the replica solver evaluates
//! `R` at non-positive arguments, which corresponds to inverting `G` to the
//! left of the spectral support. Arguments to the right of the support are
//! also accepted, which gives access to positive `ω` up to `-G(support_max⁺)`.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::rng::{self, Purpose};

/// Below this `|ω|·scale` the R-transform is evaluated from its free-cumulant
/// series; the direct inversion loses digits there to cancellation.
const SERIES_RADIUS: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EnsembleKind {
    IidGaussian,
    RowOrthogonal,
    CustomSpectrum,
}

impl EnsembleKind {
    pub fn name(self) -> &'static str {
        match self {
            EnsembleKind::IidGaussian => "iid_gaussian",
            EnsembleKind::RowOrthogonal => "row_orthogonal",
            EnsembleKind::CustomSpectrum => "custom_spectrum",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "iid_gaussian" => Some(EnsembleKind::IidGaussian),
            "row_orthogonal" => Some(EnsembleKind::RowOrthogonal),
            "custom_spectrum" => Some(EnsembleKind::CustomSpectrum),
            _ => None,
        }
    }
}

/// A sensing-matrix ensemble with compression ratio `rho = M/N`.
#[derive(Clone, Debug, PartialEq)]
pub struct EnsembleSpec {
    pub kind: EnsembleKind,
    pub rho: f64,
    /// `(eigenvalue, mass)` pairs of the Gramian law, for `CustomSpectrum`.
    pub custom_atoms: Option<Vec<(f64, f64)>>,
    /// Permit `rho > 1` for the Gaussian ensemble.
    pub allow_overcomplete: bool,
}

impl EnsembleSpec {
    pub fn iid_gaussian(rho: f64) -> Result<Self> {
        let spec = EnsembleSpec {
            kind: EnsembleKind::IidGaussian,
            rho,
            custom_atoms: None,
            allow_overcomplete: false,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn row_orthogonal(rho: f64) -> Result<Self> {
        let spec = EnsembleSpec {
            kind: EnsembleKind::RowOrthogonal,
            rho,
            custom_atoms: None,
            allow_overcomplete: false,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Gramian with the given eigenvalue law. `rho` is set to the mass of the
    /// nonzero atoms.
    pub fn custom(atoms: Vec<(f64, f64)>) -> Result<Self> {
        let nonzero: f64 = atoms.iter().filter(|a| a.0 > 0.0).map(|a| a.1).sum();
        let spec = EnsembleSpec {
            kind: EnsembleKind::CustomSpectrum,
            rho: nonzero.clamp(f64::MIN_POSITIVE, 1.0),
            custom_atoms: Some(atoms),
            allow_overcomplete: false,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Orthogonal sensing (`A^T A = I`).
    pub fn identity() -> Self {
        EnsembleSpec {
            kind: EnsembleKind::CustomSpectrum,
            rho: 1.0,
            custom_atoms: Some(vec![(1.0, 1.0)]),
            allow_overcomplete: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0) || !self.rho.is_finite() {
            return Err(Error::InvalidParameter(format!("rho must be positive, got {}", self.rho)));
        }
        if self.rho > 1.0 {
            let allowed = self.allow_overcomplete && self.kind == EnsembleKind::IidGaussian;
            if !allowed {
                return Err(Error::InvalidParameter(format!(
                    "rho = {} exceeds 1 for {}",
                    self.rho,
                    self.kind.name()
                )));
            }
        }
        if self.kind == EnsembleKind::CustomSpectrum {
            let atoms = self.custom_atoms.as_ref().ok_or_else(|| {
                Error::InvalidParameter("custom_spectrum requires atoms".into())
            })?;
            validate_atoms(atoms)?;
        }
        Ok(())
    }

    pub fn law(&self) -> Result<SpectralLaw> {
        self.validate()?;
        match self.kind {
            EnsembleKind::IidGaussian => SpectralLaw::marchenko_pastur(self.rho),
            EnsembleKind::RowOrthogonal => {
                SpectralLaw::atoms(&[(0.0, 1.0 - self.rho), (1.0, self.rho)])
            }
            EnsembleKind::CustomSpectrum => {
                SpectralLaw::atoms(self.custom_atoms.as_deref().unwrap_or(&[]))
            }
        }
    }
}

fn validate_atoms(atoms: &[(f64, f64)]) -> Result<()> {
    if atoms.is_empty() {
        return Err(Error::InvalidParameter("spectral law needs at least one atom".into()));
    }
    let mut total = 0.0;
    for &(value, mass) in atoms {
        if !(value >= 0.0) || !value.is_finite() {
            return Err(Error::InvalidParameter(format!("eigenvalue {value} is not a finite nonnegative number")));
        }
        if !(mass >= 0.0) || !mass.is_finite() {
            return Err(Error::InvalidParameter(format!("atom mass {mass} is negative")));
        }
        total += mass;
    }
    if (total - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidParameter(format!("atom masses sum to {total}, expected 1")));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub enum Evaluator {
    /// Gramian of an `M×N` matrix with i.i.d. `N(0, 1/N)` entries, `rho = M/N`.
    MarchenkoPastur { rho: f64 },
    /// Finite mixture of point masses.
    Atoms { values: Vec<f64>, masses: Vec<f64> },
}

/// Asymptotic eigenvalue law of a Gramian `A^T A`.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralLaw {
    pub support_min: f64,
    pub support_max: f64,
    pub mean_eigenvalue: f64,
    pub evaluator: Evaluator,
    /// First four free cumulants.
    cumulants: [f64; 4],
}

impl SpectralLaw {
    pub fn marchenko_pastur(rho: f64) -> Result<Self> {
        if !(rho > 0.0) || !rho.is_finite() {
            return Err(Error::InvalidParameter(format!("rho must be positive, got {rho}")));
        }
        let r = rho.sqrt();
        let support_min = if rho <= 1.0 { 0.0 } else { (r - 1.0).powi(2) };
        // The free cumulants of this law are all equal to rho.
        Ok(SpectralLaw {
            support_min,
            support_max: (1.0 + r).powi(2),
            mean_eigenvalue: rho,
            evaluator: Evaluator::MarchenkoPastur { rho },
            cumulants: [rho; 4],
        })
    }

    pub fn atoms(atoms: &[(f64, f64)]) -> Result<Self> {
        validate_atoms(atoms)?;
        let mut kept: Vec<(f64, f64)> = atoms.iter().copied().filter(|a| a.1 > 0.0).collect();
        kept.sort_by(|a, b| a.0.total_cmp(&b.0));
        let values: Vec<f64> = kept.iter().map(|a| a.0).collect();
        let masses: Vec<f64> = kept.iter().map(|a| a.1).collect();
        let moment = |k: i32| -> f64 { kept.iter().map(|(v, m)| m * v.powi(k)).sum() };
        let (m1, m2, m3, m4) = (moment(1), moment(2), moment(3), moment(4));
        let cumulants = [
            m1,
            m2 - m1 * m1,
            m3 - 3.0 * m1 * m2 + 2.0 * m1.powi(3),
            m4 - 4.0 * m1 * m3 - 2.0 * m2 * m2 + 10.0 * m1 * m1 * m2 - 5.0 * m1.powi(4),
        ];
        Ok(SpectralLaw {
            support_min: values[0],
            support_max: *values.last().unwrap(),
            mean_eigenvalue: m1,
            evaluator: Evaluator::Atoms { values, masses },
            cumulants,
        })
    }

    /// Point mass at one; the Gramian law of an orthogonal matrix.
    pub fn identity() -> Self {
        SpectralLaw::atoms(&[(1.0, 1.0)]).expect("valid atom")
    }

    /// Uniform atoms on the eigenvalues of an empirical density of states.
    pub fn from_empirical(dos: &EmpiricalDos) -> Result<Self> {
        let n = dos.eigenvalues.len();
        if n == 0 {
            return Err(Error::InvalidParameter("empty density of states".into()));
        }
        let mass = 1.0 / n as f64;
        let mut atoms: Vec<(f64, f64)> = dos.eigenvalues.iter().map(|&v| (v.max(0.0), mass)).collect();
        // Renormalise so the masses pass the 1e-12 check for any N.
        let total: f64 = atoms.iter().map(|a| a.1).sum();
        for a in &mut atoms {
            a.1 /= total;
        }
        SpectralLaw::atoms(&atoms)
    }

    pub fn second_moment(&self) -> f64 {
        self.cumulants[1] + self.mean_eigenvalue.powi(2)
    }

    pub fn free_cumulants(&self) -> [f64; 4] {
        self.cumulants
    }

    fn outside_support(&self, s: f64) -> bool {
        s < self.support_min || s > self.support_max
    }

    /// `G(s)` for real `s` outside the spectral support.
    pub fn stieltjes(&self, s: f64) -> Result<f64> {
        if !s.is_finite() || !self.outside_support(s) {
            return Err(Error::Domain(format!(
                "Stieltjes transform needs s outside [{}, {}], got {s}",
                self.support_min, self.support_max
            )));
        }
        Ok(self.stieltjes_unchecked(s))
    }

    fn stieltjes_unchecked(&self, s: f64) -> f64 {
        match &self.evaluator {
            Evaluator::MarchenkoPastur { rho } => {
                // G solves s g² + (s - rho + 1) g + 1 = 0; the branch vanishing at infinity.
                let b = s - rho + 1.0;
                let disc = (b * b - 4.0 * s).max(0.0).sqrt();
                if s <= self.support_min {
                    2.0 / (disc - b)
                } else {
                    -2.0 / (b + disc)
                }
            }
            Evaluator::Atoms { values, masses } => values
                .iter()
                .zip(masses)
                .map(|(v, m)| m / (v - s))
                .sum(),
        }
    }

    /// `G'(s) = ∫ dF(λ) / (λ - s)²`.
    pub fn stieltjes_derivative(&self, s: f64) -> Result<f64> {
        let g = self.stieltjes(s)?;
        Ok(match &self.evaluator {
            Evaluator::MarchenkoPastur { rho } => {
                let b = s - rho + 1.0;
                -(g * g + g) / (2.0 * s * g + b)
            }
            Evaluator::Atoms { values, masses } => values
                .iter()
                .zip(masses)
                .map(|(v, m)| m / ((v - s) * (v - s)))
                .sum(),
        })
    }

    /// Open interval of admissible R-transform arguments. Zero is included
    /// through the continuous extension.
    pub fn omega_domain(&self) -> (f64, f64) {
        match &self.evaluator {
            Evaluator::MarchenkoPastur { rho } => {
                let r = rho.sqrt();
                let lo = if *rho <= 1.0 { f64::NEG_INFINITY } else { -1.0 / (r - 1.0) };
                (lo, 1.0 / (1.0 + r))
            }
            // Atoms make G unbounded at both edges of the support.
            Evaluator::Atoms { .. } => (f64::NEG_INFINITY, f64::INFINITY),
        }
    }

    fn check_omega(&self, omega: f64) -> Result<()> {
        let (lo, hi) = self.omega_domain();
        if !omega.is_finite() || omega <= lo || omega >= hi {
            return Err(Error::Domain(format!(
                "R-transform argument {omega} outside ({lo}, {hi})"
            )));
        }
        Ok(())
    }

    fn series_scale(&self) -> f64 {
        self.support_max.abs().max(self.support_min.abs()).max(1e-300)
    }

    /// Solve `G(s) = target` by bisection to machine precision.
    ///
    /// `target > 0` searches left of the support, `target < 0` to the right.
    /// Uses only the evaluator's `G`, so it also cross-checks closed forms.
    pub fn inverse_stieltjes_numeric(&self, target: f64) -> Result<f64> {
        if !target.is_finite() || target == 0.0 {
            return Err(Error::Domain(format!("cannot invert G at {target}")));
        }
        let (smin, smax) = (self.support_min, self.support_max);
        // Bounds from 1/(smax - s) <= G(s) <= 1/(smin - s) on the left and the
        // mirrored pair on the right.
        let inv = 1.0 / target.abs();
        let (mut lo, mut hi) = if target > 0.0 {
            (smin - inv, smin.min(smax - inv))
        } else {
            (smax.max(smin + inv), smax + inv)
        };
        let g_at = |s: f64| -> f64 {
            let g = self.stieltjes_unchecked(s);
            // An atom at the right edge yields +inf from a positive zero.
            if target < 0.0 && g == f64::INFINITY {
                f64::NEG_INFINITY
            } else {
                g
            }
        };
        // When the bracket reaches the support edge, the target may lie beyond
        // the range G attains on this side.
        let at_edge = if target > 0.0 { hi >= smin } else { lo <= smax };
        if at_edge {
            let edge = if target > 0.0 { g_at(hi) } else { g_at(lo) };
            let unreachable = if target > 0.0 { edge <= target } else { edge >= target };
            if unreachable {
                return Err(Error::Domain(format!(
                    "G does not reach {target} outside the support (edge value {edge})"
                )));
            }
        }
        for _ in 0..400 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if g_at(mid) < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let s = 0.5 * (lo + hi);
        if !self.outside_support(s) {
            // Collapsed onto the edge: only happens when the target sits at the edge value.
            return Err(Error::Domain(format!("inversion of G at {target} hit the support edge")));
        }
        Ok(s)
    }

    /// `G⁻¹(g)`, closed form where one exists.
    pub fn inverse_stieltjes(&self, g: f64) -> Result<f64> {
        self.check_omega(-g)?;
        if g == 0.0 {
            return Err(Error::Domain("G⁻¹(0) is at infinity".into()));
        }
        match &self.evaluator {
            Evaluator::MarchenkoPastur { rho } => Ok(rho / (1.0 + g) - 1.0 / g),
            Evaluator::Atoms { .. } => self.inverse_stieltjes_numeric(g),
        }
    }

    fn series(&self, omega: f64) -> (f64, f64) {
        let [k1, k2, k3, k4] = self.cumulants;
        let r = k1 + omega * (k2 + omega * (k3 + omega * k4));
        let dr = k2 + omega * (2.0 * k3 + omega * 3.0 * k4);
        (r, dr)
    }

    /// `R(ω) = G⁻¹(-ω) - 1/ω`, with `R(0)` the mean eigenvalue.
    pub fn r_transform(&self, omega: f64) -> Result<f64> {
        self.check_omega(omega)?;
        match &self.evaluator {
            Evaluator::MarchenkoPastur { rho } => Ok(rho / (1.0 - omega)),
            Evaluator::Atoms { .. } => {
                if omega.abs() * self.series_scale() < SERIES_RADIUS {
                    return Ok(self.series(omega).0);
                }
                let s = self.inverse_stieltjes_numeric(-omega)?;
                Ok(s - 1.0 / omega)
            }
        }
    }

    /// `R(ω)` through numeric inversion of `G`, whatever the evaluator.
    pub fn r_transform_numeric(&self, omega: f64) -> Result<f64> {
        self.check_omega(omega)?;
        if omega == 0.0 {
            return Ok(self.mean_eigenvalue);
        }
        let s = self.inverse_stieltjes_numeric(-omega)?;
        Ok(s - 1.0 / omega)
    }

    /// `dR/dω`.
    pub fn r_transform_derivative(&self, omega: f64) -> Result<f64> {
        self.check_omega(omega)?;
        match &self.evaluator {
            Evaluator::MarchenkoPastur { rho } => Ok(rho / ((1.0 - omega) * (1.0 - omega))),
            Evaluator::Atoms { .. } => {
                if omega.abs() * self.series_scale() < SERIES_RADIUS {
                    return Ok(self.series(omega).1);
                }
                // G(s(ω)) = -ω gives s' = -1/G'(s), so R' = 1/G² - 1/G'. With
                // u = 1/(λ - s) this is Var(u) / (G² G'), free of cancellation.
                let s = self.inverse_stieltjes_numeric(-omega)?;
                let Evaluator::Atoms { values, masses } = &self.evaluator else { unreachable!() };
                let (mut g, mut g2) = (0.0, 0.0);
                for (v, m) in values.iter().zip(masses) {
                    let u = 1.0 / (v - s);
                    g += m * u;
                    g2 += m * u * u;
                }
                let var: f64 = values
                    .iter()
                    .zip(masses)
                    .map(|(v, m)| {
                        let d = 1.0 / (v - s) - g;
                        m * d * d
                    })
                    .sum();
                Ok(var / (g * g * g2))
            }
        }
    }

    /// `R` applied to the eigenvalues of a symmetric matrix.
    pub fn matrix_r_transform(&self, s: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if !s.is_square() {
            return Err(Error::Shape(format!("expected a square matrix, got {}×{}", s.nrows(), s.ncols())));
        }
        let scale = s.amax().max(1.0);
        if (s - s.transpose()).amax() > 1e-12 * scale {
            return Err(Error::InvalidParameter("matrix argument is not symmetric".into()));
        }
        let eig = SymmetricEigen::try_new(s.clone(), 1e-15, 10_000)
            .ok_or_else(|| Error::Numerical("symmetric eigensolver did not converge".into()))?;
        let mut mapped = eig.eigenvalues.clone();
        for v in mapped.iter_mut() {
            *v = self.r_transform(*v)?;
        }
        let vecs = &eig.eigenvectors;
        let out = vecs * DMatrix::from_diagonal(&mapped) * vecs.transpose();
        Ok((&out + out.transpose()) * 0.5)
    }

    /// Cumulative distribution function `F(x)`.
    pub fn cdf(&self, x: f64) -> f64 {
        match &self.evaluator {
            Evaluator::Atoms { values, masses } => values
                .iter()
                .zip(masses)
                .filter(|(v, _)| **v <= x)
                .map(|(_, m)| m)
                .sum(),
            Evaluator::MarchenkoPastur { rho } => marchenko_pastur_cdf(*rho, x),
        }
    }
}

/// CDF of the Gramian law of an `M×N` matrix with `N(0, 1/N)` entries.
///
/// The continuous part has density `sqrt((b-t)(t-a)) / (2πt)` on `[a, b]`,
/// `a, b = (1 ∓ √ρ)²`, plus an atom of mass `1 - ρ` at zero when `ρ < 1`.
pub fn marchenko_pastur_cdf(rho: f64, x: f64) -> f64 {
    let r = rho.sqrt();
    let (a, b) = ((1.0 - r).powi(2), (1.0 + r).powi(2));
    let atom = if rho < 1.0 && x >= 0.0 { 1.0 - rho } else { 0.0 };
    if x <= a {
        return atom;
    }
    if x >= b {
        return atom + rho.min(1.0);
    }
    // t = c - h cos θ removes both square-root edges.
    let (c, h) = (0.5 * (a + b), 0.5 * (b - a));
    let theta_x = ((c - x) / h).clamp(-1.0, 1.0).acos();
    let f = |theta: f64| {
        let t = c - h * theta.cos();
        let sn = theta.sin();
        if t <= 0.0 {
            // a = 0 (rho = 1): sin²θ / t stays finite as θ → 0.
            return h / std::f64::consts::PI;
        }
        h * h * sn * sn / (2.0 * std::f64::consts::PI * t)
    };
    let panels = 512;
    let step = theta_x / panels as f64;
    let mut acc = f(0.0) + f(theta_x);
    for i in 1..panels {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(i as f64 * step);
    }
    atom + acc * step / 3.0
}

/// Sorted eigenvalues of a Gramian `A^T A`.
#[derive(Clone, Debug, PartialEq)]
pub struct EmpiricalDos {
    pub eigenvalues: Vec<f64>,
    pub n: usize,
}

impl EmpiricalDos {
    /// Empirical CDF `F^N(x)`.
    pub fn cdf(&self, x: f64) -> f64 {
        self.eigenvalues.partition_point(|&v| v <= x) as f64 / self.n as f64
    }

    pub fn moment(&self, k: i32) -> f64 {
        self.eigenvalues.iter().map(|v| v.powi(k)).sum::<f64>() / self.n as f64
    }

    /// Kolmogorov distance to a reference CDF, compared on both sides of each
    /// jump. Eigenvalues closer than `1e-9` (relative) form one jump, so
    /// rounding noise around an atom of the reference does not count.
    pub fn kolmogorov_distance(&self, reference: impl Fn(f64) -> f64) -> f64 {
        let n = self.n as f64;
        let ev = &self.eigenvalues;
        let mut worst: f64 = 0.0;
        let mut i = 0;
        while i < ev.len() {
            let delta = |v: f64| 1e-9 * v.abs().max(1.0);
            let mut k = i + 1;
            while k < ev.len() && ev[k] - ev[k - 1] <= delta(ev[k]) {
                k += 1;
            }
            let (lo, hi) = (ev[i], ev[k - 1]);
            worst = worst.max((reference(hi + delta(hi)) - k as f64 / n).abs());
            worst = worst.max((reference(lo - delta(lo)) - i as f64 / n).abs());
            i = k;
        }
        worst
    }
}

/// Eigenvalues of `A^T A`, computed through the smaller Gram matrix.
pub fn empirical_dos(a: &DMatrix<f64>) -> Result<EmpiricalDos> {
    let (m, n) = a.shape();
    let gram = if m < n { a * a.transpose() } else { a.transpose() * a };
    let eig = SymmetricEigen::try_new(gram, 1e-15, 100_000)
        .ok_or_else(|| Error::Numerical("symmetric eigensolver did not converge".into()))?;
    let mut eigenvalues: Vec<f64> = eig.eigenvalues.iter().map(|v| v.max(0.0)).collect();
    eigenvalues.resize(n, 0.0);
    eigenvalues.sort_by(f64::total_cmp);
    Ok(EmpiricalDos { eigenvalues, n })
}

fn gaussian_matrix(rows: usize, cols: usize, std: f64, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| {
        let z: f64 = rng.sample(StandardNormal);
        std * z
    })
}

/// `k×n` matrix (`k ≤ n`) with Haar-distributed orthonormal rows.
///
/// This is the `Q` of the LQ factorisation of a Gaussian matrix with positive
/// diagonal in `L`, computed by Cholesky passes on the Gram matrix (a second
/// pass when the first is poorly conditioned), with a Householder fallback.
fn haar_rows(k: usize, n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let g = gaussian_matrix(k, n, 1.0, rng);
    if let Some((q, spread)) = cholesky_rows(&g) {
        if spread < 1e3 {
            return q;
        }
        if let Some((q, _)) = cholesky_rows(&q) {
            return q;
        }
    }
    let qr = g.transpose().qr();
    let r = qr.r();
    let mut q = qr.q();
    for (i, mut col) in q.column_iter_mut().enumerate() {
        if r[(i, i)] < 0.0 {
            col.neg_mut();
        }
    }
    q.transpose()
}

/// `L⁻¹ G` where `L Lᵀ = G Gᵀ`, plus the squared spread of `diag(L)`.
fn cholesky_rows(g: &DMatrix<f64>) -> Option<(DMatrix<f64>, f64)> {
    let k = g.nrows();
    let l = (g * g.transpose()).cholesky()?.unpack();
    let diag = l.diagonal();
    let spread = (diag.max() / diag.min()).powi(2);
    let l_inv = l.solve_lower_triangular(&DMatrix::identity(k, k))?;
    let q = l_inv * g;
    (q.iter().all(|v| v.is_finite()) && spread.is_finite()).then_some((q, spread))
}

/// Number of rows `round(rho·N)` used by the Gaussian and row-orthogonal ensembles.
pub fn measurement_count(rho: f64, n: usize) -> usize {
    (rho * n as f64).round() as usize
}

/// Draw a sensing matrix from `spec`. Deterministic in `seed`.
///
/// Custom spectra are realised as `Diag(√λ) Qᵀ` with Haar `Q`; eigenvalues are
/// assigned by quantile, and rows belonging to zero eigenvalues are dropped.
pub fn sample_matrix(spec: &EnsembleSpec, n: usize, seed: u64) -> Result<DMatrix<f64>> {
    spec.validate()?;
    if n < 2 {
        return Err(Error::InvalidParameter(format!("need N >= 2, got {n}")));
    }
    let mut rng = rng::stream(seed, Purpose::Matrix, 0);
    match spec.kind {
        EnsembleKind::IidGaussian => {
            let m = measurement_count(spec.rho, n);
            if m == 0 {
                return Err(Error::InvalidParameter(format!("round(rho·N) = 0 for rho={}, N={n}", spec.rho)));
            }
            Ok(gaussian_matrix(m, n, (1.0 / n as f64).sqrt(), &mut rng))
        }
        EnsembleKind::RowOrthogonal => {
            let m = measurement_count(spec.rho, n);
            if m == 0 {
                return Err(Error::InvalidParameter(format!("round(rho·N) = 0 for rho={}, N={n}", spec.rho)));
            }
            Ok(haar_rows(m, n, &mut rng))
        }
        EnsembleKind::CustomSpectrum => {
            let atoms = spec.custom_atoms.as_deref().unwrap_or(&[]);
            let eigen = quantile_eigenvalues(atoms, n);
            let nonzero: Vec<f64> = eigen.into_iter().filter(|v| *v > 0.0).collect();
            if nonzero.is_empty() {
                return Ok(DMatrix::zeros(1, n));
            }
            let mut a = haar_rows(nonzero.len(), n, &mut rng);
            for (i, lam) in nonzero.iter().enumerate() {
                a.row_mut(i).scale_mut(lam.sqrt());
            }
            Ok(a)
        }
    }
}

/// Eigenvalue `n` is the atom whose cumulative-mass interval holds `(n + ½)/N`.
fn quantile_eigenvalues(atoms: &[(f64, f64)], n: usize) -> Vec<f64> {
    let mut sorted: Vec<(f64, f64)> = atoms.iter().copied().filter(|a| a.1 > 0.0).collect();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    (0..n)
        .map(|i| {
            let u = (i as f64 + 0.5) / n as f64;
            let mut cum = 0.0;
            for &(v, m) in &sorted {
                cum += m;
                if u < cum {
                    return v;
                }
            }
            sorted.last().map(|a| a.0).unwrap_or(0.0)
        })
        .collect()
}
