//! Jointly sparse sources and distortion measures.
//!
//! Sample `n` of terminal `j` is
//! `x_jn = c_n·w_0n + s_0n·w_jn + s_jn·u_jn`
//! with Bernoulli indicators `c ~ Bern(μ_c)`, `s_0 ~ Bern(μ_0)`,
//! `s_j ~ Bern(μ_j)` and amplitudes drawn from [`ValueDist`]s that put no mass
//! at zero.

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::rng::{self, Purpose};

/// Largest terminal count for which the prior mixture is enumerated exactly.
pub const MAX_ENUMERATED_TERMINALS: usize = 4;

/// Law of a nonzero amplitude.
#[derive(Clone, Debug, PartialEq)]
pub enum ValueDist {
    Gaussian { mean: f64, variance: f64 },
    PointMass { value: f64 },
    /// Finite set of nonzero values with probabilities.
    Discrete { atoms: Vec<(f64, f64)> },
}

impl Default for ValueDist {
    fn default() -> Self {
        ValueDist::Gaussian { mean: 0.0, variance: 1.0 }
    }
}

impl ValueDist {
    pub fn standard_gaussian() -> Self {
        ValueDist::default()
    }

    /// Equiprobable `±a`.
    pub fn symmetric_pair(a: f64) -> Self {
        ValueDist::Discrete { atoms: vec![(-a, 0.5), (a, 0.5)] }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ValueDist::Gaussian { mean, variance } => {
                if !mean.is_finite() || !(*variance > 0.0) || !variance.is_finite() {
                    return Err(Error::InvalidParameter(format!(
                        "gaussian amplitude needs finite mean and positive variance, got ({mean}, {variance})"
                    )));
                }
            }
            ValueDist::PointMass { value } => {
                if *value == 0.0 || !value.is_finite() {
                    return Err(Error::InvalidParameter(format!(
                        "point-mass amplitude must be finite and nonzero, got {value}"
                    )));
                }
            }
            ValueDist::Discrete { atoms } => {
                if atoms.is_empty() {
                    return Err(Error::InvalidParameter("discrete amplitude law has no atoms".into()));
                }
                let mut total = 0.0;
                for &(v, p) in atoms {
                    if !v.is_finite() || !(p >= 0.0) {
                        return Err(Error::InvalidParameter(format!("bad discrete atom ({v}, {p})")));
                    }
                    if v == 0.0 && p > 0.0 {
                        return Err(Error::InvalidParameter(
                            "amplitude laws may not put mass at zero".into(),
                        ));
                    }
                    total += p;
                }
                if (total - 1.0).abs() > 1e-12 {
                    return Err(Error::InvalidParameter(format!("discrete probabilities sum to {total}")));
                }
            }
        }
        Ok(())
    }

    pub fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        match self {
            ValueDist::Gaussian { mean, variance } => {
                let z: f64 = rng.sample(StandardNormal);
                mean + variance.sqrt() * z
            }
            ValueDist::PointMass { value } => *value,
            ValueDist::Discrete { atoms } => {
                let u: f64 = rng.random();
                let mut cum = 0.0;
                for &(v, p) in atoms {
                    cum += p;
                    if u < cum {
                        return v;
                    }
                }
                atoms.last().map(|a| a.0).unwrap_or(0.0)
            }
        }
    }

    pub fn mean(&self) -> f64 {
        match self {
            ValueDist::Gaussian { mean, .. } => *mean,
            ValueDist::PointMass { value } => *value,
            ValueDist::Discrete { atoms } => atoms.iter().map(|(v, p)| v * p).sum(),
        }
    }

    pub fn second_moment(&self) -> f64 {
        match self {
            ValueDist::Gaussian { mean, variance } => mean * mean + variance,
            ValueDist::PointMass { value } => value * value,
            ValueDist::Discrete { atoms } => atoms.iter().map(|(v, p)| v * v * p).sum(),
        }
    }

    /// `(probability, mean, variance)` pieces.
    fn pieces(&self) -> Vec<(f64, f64, f64)> {
        match self {
            ValueDist::Gaussian { mean, variance } => vec![(1.0, *mean, *variance)],
            ValueDist::PointMass { value } => vec![(1.0, *value, 0.0)],
            ValueDist::Discrete { atoms } => atoms
                .iter()
                .filter(|a| a.1 > 0.0)
                .map(|&(v, p)| (p, v, 0.0))
                .collect(),
        }
    }
}

/// Three-component joint sparsity model over `J = mu_j.len()` terminals.
#[derive(Clone, Debug, PartialEq)]
pub struct JointSparsityPrior {
    pub mu_c: f64,
    pub mu_0: f64,
    pub mu_j: Vec<f64>,
    pub dist_w0: ValueDist,
    pub dist_wj: ValueDist,
    pub dist_uj: ValueDist,
}

impl JointSparsityPrior {
    /// Prior with standard Gaussian amplitudes for all three components.
    pub fn new(mu_c: f64, mu_0: f64, mu_j: Vec<f64>) -> Result<Self> {
        let prior = JointSparsityPrior {
            mu_c,
            mu_0,
            mu_j,
            dist_w0: ValueDist::default(),
            dist_wj: ValueDist::default(),
            dist_uj: ValueDist::default(),
        };
        prior.validate()?;
        Ok(prior)
    }

    /// Single terminal, Bernoulli(`mu`) support with amplitudes from `dist`.
    pub fn bernoulli(mu: f64, dist: ValueDist) -> Result<Self> {
        let prior = JointSparsityPrior {
            mu_c: 0.0,
            mu_0: 0.0,
            mu_j: vec![mu],
            dist_w0: ValueDist::default(),
            dist_wj: ValueDist::default(),
            dist_uj: dist,
        };
        prior.validate()?;
        Ok(prior)
    }

    pub fn terminals(&self) -> usize {
        self.mu_j.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.mu_j.is_empty() {
            return Err(Error::InvalidParameter("prior needs at least one terminal".into()));
        }
        for (name, p) in [("mu_c", self.mu_c), ("mu_0", self.mu_0)]
            .into_iter()
            .chain(self.mu_j.iter().map(|p| ("mu_j", *p)))
        {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidParameter(format!("{name} = {p} is not a probability")));
            }
        }
        self.dist_w0.validate()?;
        self.dist_wj.validate()?;
        self.dist_uj.validate()?;
        Ok(())
    }

    /// Probability that `x_j` is nonzero, assuming continuous amplitudes.
    pub fn nonzero_probability(&self, j: usize) -> f64 {
        1.0 - (1.0 - self.mu_c) * (1.0 - self.mu_0) * (1.0 - self.mu_j[j])
    }

    /// `E[x_j²]`.
    pub fn second_moment(&self, j: usize) -> f64 {
        self.marginal(j).iter().map(|c| c.prob * (c.mean * c.mean + c.variance)).sum()
    }

    /// Marginal law of `x_j` as a one-dimensional Gaussian mixture with
    /// identical pieces merged.
    pub fn marginal(&self, j: usize) -> Vec<ScalarComponent> {
        let mut out: Vec<ScalarComponent> = Vec::new();
        let parts = [
            (self.mu_c, &self.dist_w0),
            (self.mu_0, &self.dist_wj),
            (self.mu_j[j], &self.dist_uj),
        ];
        // Start from the zero law and convolve in each component.
        let mut acc = vec![ScalarComponent { prob: 1.0, mean: 0.0, variance: 0.0 }];
        for (mu, dist) in parts {
            let mut next = Vec::new();
            for c in &acc {
                if mu < 1.0 {
                    next.push(ScalarComponent { prob: c.prob * (1.0 - mu), ..*c });
                }
                if mu > 0.0 {
                    for (p, m, v) in dist.pieces() {
                        next.push(ScalarComponent {
                            prob: c.prob * mu * p,
                            mean: c.mean + m,
                            variance: c.variance + v,
                        });
                    }
                }
            }
            acc = next;
        }
        for c in acc {
            if c.prob <= 0.0 {
                continue;
            }
            match out.iter_mut().find(|o| o.mean == c.mean && o.variance == c.variance) {
                Some(o) => o.prob += c.prob,
                None => out.push(c),
            }
        }
        out
    }
}

/// A piece of a one-dimensional Gaussian mixture.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScalarComponent {
    pub prob: f64,
    pub mean: f64,
    pub variance: f64,
}

/// One indicator configuration of the prior, with the conditional law of
/// `x^J` it induces: a Gaussian with mean `mean` and covariance `cov`.
#[derive(Clone, Debug, PartialEq)]
pub struct MixtureComponent {
    pub prob: f64,
    pub common: bool,
    pub shared: bool,
    pub innovation: Vec<bool>,
    pub mean: Vec<f64>,
    pub cov: DMatrix<f64>,
}

impl MixtureComponent {
    /// Whether `x_j` is identically zero under this component.
    pub fn is_zero(&self, j: usize) -> bool {
        self.mean[j] == 0.0 && self.cov[(j, j)] == 0.0
    }
}

/// Enumerate indicator configurations `(c, s_0, s_1..s_J)` with nonzero
/// probability. Discrete amplitude laws are expanded into their atoms.
pub fn prior_mixture(prior: &JointSparsityPrior) -> Result<Vec<MixtureComponent>> {
    prior.validate()?;
    let j_count = prior.terminals();
    if j_count > MAX_ENUMERATED_TERMINALS {
        return Err(Error::InvalidParameter(format!(
            "exact enumeration supports at most {MAX_ENUMERATED_TERMINALS} terminals, got {j_count}"
        )));
    }
    let configs = 1usize << (j_count + 2);
    let mut out = Vec::new();
    for bits in 0..configs {
        let common = bits & 1 == 1;
        let shared = bits & 2 == 2;
        let innovation: Vec<bool> = (0..j_count).map(|j| bits >> (j + 2) & 1 == 1).collect();
        let bern = |on: bool, mu: f64| if on { mu } else { 1.0 - mu };
        let mut prob = bern(common, prior.mu_c) * bern(shared, prior.mu_0);
        for (j, on) in innovation.iter().enumerate() {
            prob *= bern(*on, prior.mu_j[j]);
        }
        if prob <= 0.0 {
            continue;
        }
        // Each active amplitude is an independent draw; `w_0` is shared by
        // every terminal, `w_j` and `u_j` are per terminal.
        let mut partial = vec![(prob, vec![0.0; j_count], DMatrix::zeros(j_count, j_count))];
        let add = |targets: &[usize], dist: &ValueDist, partial: &mut Vec<(f64, Vec<f64>, DMatrix<f64>)>| {
            let mut next = Vec::with_capacity(partial.len() * 2);
            for (p, mean, cov) in partial.iter() {
                for (pp, m, v) in dist.pieces() {
                    let mut mean = mean.clone();
                    let mut cov = cov.clone();
                    for &a in targets {
                        mean[a] += m;
                        for &b in targets {
                            cov[(a, b)] += v;
                        }
                    }
                    next.push((p * pp, mean, cov));
                }
            }
            *partial = next;
        };
        if common {
            let all: Vec<usize> = (0..j_count).collect();
            add(&all, &prior.dist_w0, &mut partial);
        }
        if shared {
            for j in 0..j_count {
                add(&[j], &prior.dist_wj, &mut partial);
            }
        }
        for (j, on) in innovation.iter().enumerate() {
            if *on {
                add(&[j], &prior.dist_uj, &mut partial);
            }
        }
        for (p, mean, cov) in partial {
            if p > 0.0 {
                out.push(MixtureComponent {
                    prob: p,
                    common,
                    shared,
                    innovation: innovation.clone(),
                    mean,
                    cov,
                });
            }
        }
    }
    Ok(out)
}

/// Samples with their latent indicators.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleBlock {
    /// `J×N` true samples.
    pub x: DMatrix<f64>,
    pub common: Vec<bool>,
    pub shared: Vec<bool>,
    /// `J×N` innovation indicators.
    pub innovation: DMatrix<bool>,
}

/// Draw one column into `x`, recording innovation indicators in `innovation`.
/// Returns the common and shared indicators.
pub(crate) fn draw_column(
    prior: &JointSparsityPrior,
    rng: &mut ChaCha8Rng,
    x: &mut [f64],
    innovation: &mut [bool],
) -> (bool, bool) {
    let common = rng.random::<f64>() < prior.mu_c;
    let shared = rng.random::<f64>() < prior.mu_0;
    let w0 = if common { prior.dist_w0.sample(rng) } else { 0.0 };
    for j in 0..x.len() {
        let wj = if shared { prior.dist_wj.sample(rng) } else { 0.0 };
        let on = rng.random::<f64>() < prior.mu_j[j];
        let uj = if on { prior.dist_uj.sample(rng) } else { 0.0 };
        x[j] = w0 + wj + uj;
        innovation[j] = on;
    }
    (common, shared)
}

/// Draw `n` i.i.d. columns. Deterministic in `seed`.
pub fn sample_joint(prior: &JointSparsityPrior, n: usize, seed: u64) -> Result<SampleBlock> {
    prior.validate()?;
    if n == 0 {
        return Err(Error::InvalidParameter("need N >= 1".into()));
    }
    let j_count = prior.terminals();
    let mut rng = rng::stream(seed, Purpose::Signal, 0);
    let mut x = DMatrix::zeros(j_count, n);
    let mut innovation = DMatrix::from_element(j_count, n, false);
    let mut common = Vec::with_capacity(n);
    let mut shared = Vec::with_capacity(n);
    let mut column = vec![0.0; j_count];
    let mut flags = vec![false; j_count];
    for col in 0..n {
        let (c, s0) = draw_column(prior, &mut rng, &mut column, &mut flags);
        for j in 0..j_count {
            x[(j, col)] = column[j];
            innovation[(j, col)] = flags[j];
        }
        common.push(c);
        shared.push(s0);
    }
    Ok(SampleBlock { x, common, shared, innovation })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SpecialCase {
    ClassicalCs,
    MmvCommonSupport,
    DcsCommonInnovation,
}

/// Surviving parameters for [`special_case`]. Unset entries default to zero.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SpecialCaseParams {
    pub terminals: usize,
    pub mu_c: Option<f64>,
    pub mu_0: Option<f64>,
    pub mu_j: Option<f64>,
}

/// Build the prior of a named special case by zeroing the indicators the case
/// removes: classical CS sets `c = s_0 = 0` with one terminal, the common-support
/// model sets `s_j = c = 0`, the common-innovation model sets `s_j = 0`.
pub fn special_case(kind: SpecialCase, params: &SpecialCaseParams) -> Result<JointSparsityPrior> {
    let forbid = |name: &str, v: Option<f64>| -> Result<()> {
        match v {
            Some(x) if x != 0.0 => Err(Error::InvalidParameter(format!(
                "{name} = {x} contradicts the {kind:?} model"
            ))),
            _ => Ok(()),
        }
    };
    let need = |name: &str, v: Option<f64>| -> Result<f64> {
        v.ok_or_else(|| Error::InvalidParameter(format!("{kind:?} needs {name}")))
    };
    match kind {
        SpecialCase::ClassicalCs => {
            if params.terminals > 1 {
                return Err(Error::InvalidParameter("classical CS has a single terminal".into()));
            }
            forbid("mu_c", params.mu_c)?;
            forbid("mu_0", params.mu_0)?;
            JointSparsityPrior::new(0.0, 0.0, vec![need("mu_j", params.mu_j)?])
        }
        SpecialCase::MmvCommonSupport => {
            forbid("mu_c", params.mu_c)?;
            forbid("mu_j", params.mu_j)?;
            let j = params.terminals.max(1);
            JointSparsityPrior::new(0.0, need("mu_0", params.mu_0)?, vec![0.0; j])
        }
        SpecialCase::DcsCommonInnovation => {
            forbid("mu_j", params.mu_j)?;
            let j = params.terminals.max(1);
            JointSparsityPrior::new(need("mu_c", params.mu_c)?, need("mu_0", params.mu_0)?, vec![0.0; j])
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DistortionKind {
    /// Squared Euclidean distance summed over terminals.
    Mse,
    /// Number of terminals whose zero/nonzero status is wrong.
    SupportError,
}

impl DistortionKind {
    pub fn name(self) -> &'static str {
        match self {
            DistortionKind::Mse => "mse",
            DistortionKind::SupportError => "support_error",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "mse" => Some(DistortionKind::Mse),
            "support_error" => Some(DistortionKind::SupportError),
            _ => None,
        }
    }

    /// Per-terminal distortion of a single entry.
    #[inline]
    pub fn entry(self, xhat: f64, x: f64) -> f64 {
        match self {
            DistortionKind::Mse => (xhat - x) * (xhat - x),
            DistortionKind::SupportError => ((xhat != 0.0) != (x != 0.0)) as u8 as f64,
        }
    }
}

/// `(1/N) Σ_n Δ(x̂_n; x_n)`.
pub fn distortion(xhat: &DMatrix<f64>, x: &DMatrix<f64>, kind: DistortionKind) -> Result<f64> {
    if xhat.shape() != x.shape() {
        return Err(Error::Shape(format!(
            "estimate is {:?} but truth is {:?}",
            xhat.shape(),
            x.shape()
        )));
    }
    let n = x.ncols();
    if n == 0 {
        return Ok(0.0);
    }
    let total: f64 = xhat.iter().zip(x.iter()).map(|(a, b)| kind.entry(*a, *b)).sum();
    Ok(total / n as f64)
}
