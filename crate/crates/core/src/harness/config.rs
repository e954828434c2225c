//! Experiment configuration as flat, typed key paths.
//!
//! A config file is TOML restricted to dotted keys such as
//! `prior.mu_c = 0.3` or `terminal.1.rho = 0.5`; table headers are accepted
//! and flattened to the same paths. Unknown keys are errors.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};
use toml::Value;

use crate::error::{Error, Result};
use crate::regularizers::{Domain, RegKind, RegularizerSpec};
use crate::replica::{ExpectationMethod, FreeParam, FreeVar, RsOptions, TuneOptions};
use crate::signal_model::{DistortionKind, JointSparsityPrior, ValueDist};
use crate::spectra::{EnsembleKind, EnsembleSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Predict,
    Simulate,
    SweepRegion,
    Tune,
    Spectrum,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Predict => "predict",
            Mode::Simulate => "simulate",
            Mode::SweepRegion => "sweep_region",
            Mode::Tune => "tune",
            Mode::Spectrum => "spectrum",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "predict" => Mode::Predict,
            "simulate" => Mode::Simulate,
            "sweep_region" | "sweep-region" => Mode::SweepRegion,
            "tune" => Mode::Tune,
            "spectrum" => Mode::Spectrum,
            _ => return None,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

impl Format {
    pub fn name(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "csv" => Some(Format::Csv),
            "json" | "jsonl" => Some(Format::Json),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TerminalConfig {
    pub ensemble: EnsembleSpec,
    pub lambda: f64,
    pub sigma2: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimulateConfig {
    pub n: usize,
    pub trials: usize,
    pub max_iter: usize,
    pub tol: f64,
    /// Also solve the replica prediction and report the relative gap.
    pub predict: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepConfig {
    pub rho_1: Vec<f64>,
    pub rho_2: Vec<f64>,
    pub threshold: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TuneConfig {
    pub free: Vec<FreeParam>,
    /// Swept SNR grid in dB; `σ² = signal_power / 10^(snr/10)` on every terminal.
    pub snr_db: Option<Vec<f64>>,
    pub signal_power: f64,
    pub rel_tol: f64,
    pub grid_points: usize,
    pub max_sweeps: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpectrumConfig {
    pub n: usize,
    /// Number of CDF sample abscissae.
    pub points: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OutputConfig {
    pub path: Option<PathBuf>,
    pub format: Format,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub mode: Mode,
    pub seed: u64,
    pub distortion: DistortionKind,
    pub prior: JointSparsityPrior,
    pub spec: RegularizerSpec,
    pub terminals: Vec<TerminalConfig>,
    pub solver: RsOptions,
    pub simulate: Option<SimulateConfig>,
    pub sweep: Option<SweepConfig>,
    pub tune: Option<TuneConfig>,
    pub spectrum: Option<SpectrumConfig>,
    pub output: OutputConfig,
}

impl ExperimentConfig {
    /// Mode-specific checks.
    pub fn validate(&self) -> Result<()> {
        let j = self.terminals.len();
        if j == 0 {
            return Err(Error::config("terminal", "at least one terminal is required"));
        }
        if self.prior.terminals() != j {
            return Err(Error::config(
                "prior.mu_j",
                format!("{} entries for {j} terminals", self.prior.terminals()),
            ));
        }
        self.prior.validate().map_err(|e| Error::config("prior", e.to_string()))?;
        self.spec.validate(j).map_err(|e| Error::config("regularizer", e.to_string()))?;
        for (k, t) in self.terminals.iter().enumerate() {
            let at = |f: &str| format!("terminal.{}.{f}", k + 1);
            t.ensemble.validate().map_err(|e| Error::config(at("ensemble"), e.to_string()))?;
            if !(t.lambda > 0.0) || !t.lambda.is_finite() {
                return Err(Error::config(at("lambda"), "must be positive"));
            }
            if !(t.sigma2 >= 0.0) || !t.sigma2.is_finite() {
                return Err(Error::config(at("sigma2"), "must be finite and >= 0"));
            }
        }
        let s = &self.solver;
        if !(s.damping > 0.0 && s.damping <= 1.0) {
            return Err(Error::config("solver.damping", "must lie in (0, 1]"));
        }
        if !(s.tol > 0.0) || s.max_iter == 0 {
            return Err(Error::config("solver", "need tol > 0 and max_iter >= 1"));
        }
        match self.mode {
            Mode::Predict => {}
            Mode::Simulate => {
                let sim = self.simulate.ok_or_else(|| Error::config("simulate.n", "required in simulate mode"))?;
                if sim.n < 64 {
                    return Err(Error::config("simulate.n", format!("must be >= 64, got {}", sim.n)));
                }
                if sim.trials == 0 {
                    return Err(Error::config("simulate.trials", "must be >= 1"));
                }
                if !(sim.tol > 0.0) || sim.max_iter == 0 {
                    return Err(Error::config("simulate", "need tol > 0 and max_iter >= 1"));
                }
            }
            Mode::SweepRegion => {
                if j != 2 {
                    return Err(Error::config("terminal", format!("sweep_region needs 2 terminals, got {j}")));
                }
                let sweep = self.sweep.as_ref().ok_or_else(|| Error::config("sweep", "required in sweep_region mode"))?;
                for (key, grid) in [("sweep.rho_1", &sweep.rho_1), ("sweep.rho_2", &sweep.rho_2)] {
                    if grid.is_empty() || grid.iter().any(|r| !(*r > 0.0) || !r.is_finite()) {
                        return Err(Error::config(key, "need a nonempty grid of positive ratios"));
                    }
                }
                if sweep.threshold.is_nan() {
                    return Err(Error::config("sweep.threshold", "must be a number"));
                }
                self.validate_tune()?;
            }
            Mode::Tune => self.validate_tune()?,
            Mode::Spectrum => {
                let sp = self.spectrum.ok_or_else(|| Error::config("spectrum.n", "required in spectrum mode"))?;
                if sp.n < 2 || sp.points < 2 {
                    return Err(Error::config("spectrum", "need n >= 2 and points >= 2"));
                }
            }
        }
        Ok(())
    }

    fn validate_tune(&self) -> Result<()> {
        let tune = self.tune.as_ref().ok_or_else(|| Error::config("tune.free", "required in this mode"))?;
        if tune.free.is_empty() {
            return Err(Error::config("tune.free", "need at least one free variable"));
        }
        for p in &tune.free {
            if !(p.lo <= p.hi) || !p.lo.is_finite() || !p.hi.is_finite() {
                return Err(Error::config("tune.lo", format!("bounds of {} must be finite and ordered", p.var.name())));
            }
            if let FreeVar::Lambda(j) = p.var {
                if j >= self.terminals.len() {
                    return Err(Error::config("tune.free", format!("{} names a missing terminal", p.var.name())));
                }
            }
        }
        if !(tune.signal_power > 0.0) || !(tune.rel_tol > 0.0) || tune.grid_points < 3 {
            return Err(Error::config("tune", "need signal_power > 0, rel_tol > 0 and grid_points >= 3"));
        }
        Ok(())
    }

    /// Replace the master seed, including the one of sampled expectations.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        if let ExpectationMethod::MonteCarlo { seed: s, .. } = &mut self.solver.method {
            *s = seed;
        }
        self
    }

    /// Non-fatal remarks about the configuration.
    pub fn warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        if let (Mode::Simulate, Some(sim)) = (self.mode, self.simulate) {
            if sim.n < 256 {
                out.push(format!("simulate.n = {} is small; finite-size effects may dominate", sim.n));
            }
        }
        out
    }

    pub fn tune_options(&self) -> TuneOptions {
        let base = TuneOptions { solve: self.solver, ..TuneOptions::default() };
        match &self.tune {
            Some(t) => TuneOptions {
                rel_tol: t.rel_tol,
                grid_points: t.grid_points,
                max_sweeps: t.max_sweeps,
                ..base
            },
            None => base,
        }
    }

    /// Lowercase hex SHA-256 of the canonical text form.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(to_text(self).as_bytes()))
    }
}

/// Defaults for a single terminal point with the given mode.
impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            mode: Mode::Predict,
            seed: 1,
            distortion: DistortionKind::Mse,
            prior: JointSparsityPrior::bernoulli(0.1, ValueDist::default()).expect("valid default prior"),
            spec: RegularizerSpec::l1(1.0),
            terminals: vec![TerminalConfig {
                ensemble: EnsembleSpec::iid_gaussian(0.5).expect("valid default ensemble"),
                lambda: 0.1,
                sigma2: 0.01,
            }],
            solver: RsOptions::default(),
            simulate: None,
            sweep: None,
            tune: None,
            spectrum: None,
            output: OutputConfig { path: None, format: Format::Csv },
        }
    }
}

impl Default for SimulateConfig {
    fn default() -> Self {
        SimulateConfig { n: 1024, trials: 20, max_iter: 5000, tol: 1e-10, predict: true }
    }
}

impl Default for TuneConfig {
    fn default() -> Self {
        let o = TuneOptions::default();
        TuneConfig {
            free: Vec::new(),
            snr_db: None,
            signal_power: 1.0,
            rel_tol: o.rel_tol,
            grid_points: o.grid_points,
            max_sweeps: o.max_sweeps,
        }
    }
}

// ---------------------------------------------------------------- reading

struct Keys {
    map: BTreeMap<String, Value>,
    used: BTreeSet<String>,
}

fn flatten(prefix: &str, table: &toml::Table, out: &mut BTreeMap<String, Value>) {
    for (k, v) in table {
        let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match v {
            Value::Table(t) => flatten(&path, t, out),
            _ => {
                out.insert(path, v.clone());
            }
        }
    }
}

impl Keys {
    fn has_prefix(&self, prefix: &str) -> bool {
        let dotted = format!("{prefix}.");
        self.map.keys().any(|k| k == prefix || k.starts_with(&dotted))
    }

    fn take(&mut self, key: &str) -> Option<Value> {
        let v = self.map.get(key).cloned();
        if v.is_some() {
            self.used.insert(key.to_string());
        }
        v
    }

    fn f64(&mut self, key: &str) -> Result<Option<f64>> {
        match self.take(key) {
            None => Ok(None),
            Some(Value::Float(x)) => Ok(Some(x)),
            Some(Value::Integer(i)) => Ok(Some(i as f64)),
            Some(other) => Err(Error::config(key, format!("expected a number, got {}", other.type_str()))),
        }
    }

    fn f64_or(&mut self, key: &str, default: f64) -> Result<f64> {
        Ok(self.f64(key)?.unwrap_or(default))
    }

    fn f64_req(&mut self, key: &str) -> Result<f64> {
        self.f64(key)?.ok_or_else(|| Error::config(key, "required"))
    }

    fn usize_or(&mut self, key: &str, default: usize) -> Result<usize> {
        match self.take(key) {
            None => Ok(default),
            Some(Value::Integer(i)) if i >= 0 => Ok(i as usize),
            Some(other) => Err(Error::config(key, format!("expected a non-negative integer, got {other}"))),
        }
    }

    fn bool_or(&mut self, key: &str, default: bool) -> Result<bool> {
        match self.take(key) {
            None => Ok(default),
            Some(Value::Boolean(b)) => Ok(b),
            Some(other) => Err(Error::config(key, format!("expected a boolean, got {other}"))),
        }
    }

    fn string(&mut self, key: &str) -> Result<Option<String>> {
        match self.take(key) {
            None => Ok(None),
            Some(Value::String(s)) => Ok(Some(s)),
            Some(other) => Err(Error::config(key, format!("expected a string, got {other}"))),
        }
    }

    fn f64_array(&mut self, key: &str) -> Result<Option<Vec<f64>>> {
        match self.take(key) {
            None => Ok(None),
            Some(Value::Array(a)) => a
                .iter()
                .map(|v| match v {
                    Value::Float(x) => Ok(*x),
                    Value::Integer(i) => Ok(*i as f64),
                    _ => Err(Error::config(key, "expected an array of numbers")),
                })
                .collect::<Result<Vec<_>>>()
                .map(Some),
            Some(other) => Err(Error::config(key, format!("expected an array, got {}", other.type_str()))),
        }
    }

    fn string_array(&mut self, key: &str) -> Result<Option<Vec<String>>> {
        match self.take(key) {
            None => Ok(None),
            Some(Value::Array(a)) => a
                .iter()
                .map(|v| match v {
                    Value::String(s) => Ok(s.clone()),
                    _ => Err(Error::config(key, "expected an array of strings")),
                })
                .collect::<Result<Vec<_>>>()
                .map(Some),
            Some(other) => Err(Error::config(key, format!("expected an array, got {}", other.type_str()))),
        }
    }

    fn finish(self) -> Result<()> {
        match self.map.keys().find(|k| !self.used.contains(*k)) {
            Some(k) => Err(Error::config(k.clone(), "unknown key")),
            None => Ok(()),
        }
    }
}

fn read_value_dist(keys: &mut Keys, prefix: &str) -> Result<ValueDist> {
    let at = |f: &str| format!("{prefix}.{f}");
    let kind = keys.string(&at("kind"))?.unwrap_or_else(|| "gaussian".into());
    let dist = match kind.as_str() {
        "gaussian" => ValueDist::Gaussian {
            mean: keys.f64_or(&at("mean"), 0.0)?,
            variance: keys.f64_or(&at("variance"), 1.0)?,
        },
        "point_mass" => ValueDist::PointMass { value: keys.f64_req(&at("value"))? },
        "discrete" => {
            let values = keys.f64_array(&at("values"))?.ok_or_else(|| Error::config(at("values"), "required"))?;
            let probs = keys.f64_array(&at("probs"))?.ok_or_else(|| Error::config(at("probs"), "required"))?;
            if values.len() != probs.len() {
                return Err(Error::config(at("probs"), "must have one entry per value"));
            }
            ValueDist::Discrete { atoms: values.into_iter().zip(probs).collect() }
        }
        other => return Err(Error::config(at("kind"), format!("unknown amplitude law `{other}`"))),
    };
    dist.validate().map_err(|e| Error::config(prefix, e.to_string()))?;
    Ok(dist)
}

fn read_regularizer(keys: &mut Keys) -> Result<RegularizerSpec> {
    let kind_name = keys.string("regularizer.kind")?.unwrap_or_else(|| "l1".into());
    let kind = match kind_name.as_str() {
        "l1" => RegKind::L1,
        "lpq" => RegKind::Lpq {
            p: keys.f64_req("regularizer.p")?,
            q: keys.f64_req("regularizer.q")?,
        },
        "group_l21" => RegKind::GroupL21,
        "two_dim_lasso" => RegKind::TwoDimLasso {
            phi: keys.f64_req("regularizer.phi")?,
            alpha: keys.f64_req("regularizer.alpha")?,
        },
        "ridge" => RegKind::Ridge,
        "zero" => RegKind::Zero,
        "l0" => RegKind::L0,
        other => return Err(Error::config("regularizer.kind", format!("unknown regularizer `{other}`"))),
    };
    let weight = keys.f64_or("regularizer.weight", 1.0)?;
    let mut spec = RegularizerSpec::new(kind, weight);
    if let Some(b) = keys.f64("regularizer.bound")? {
        spec = spec.with_box(b);
    }
    Ok(spec)
}

fn read_terminal(keys: &mut Keys, index: usize) -> Result<TerminalConfig> {
    let at = |f: &str| format!("terminal.{index}.{f}");
    let name = keys.string(&at("ensemble"))?.unwrap_or_else(|| "iid_gaussian".into());
    let overcomplete = keys.bool_or(&at("allow_overcomplete"), false)?;
    let ensemble = match name.as_str() {
        "identity" => EnsembleSpec::identity(),
        "custom_spectrum" => {
            let eig = keys.f64_array(&at("eigenvalues"))?.ok_or_else(|| Error::config(at("eigenvalues"), "required"))?;
            let mass = keys.f64_array(&at("masses"))?.ok_or_else(|| Error::config(at("masses"), "required"))?;
            if eig.len() != mass.len() {
                return Err(Error::config(at("masses"), "must have one entry per eigenvalue"));
            }
            EnsembleSpec::custom(eig.into_iter().zip(mass).collect()).map_err(|e| Error::config(at("ensemble"), e.to_string()))?
        }
        other => {
            let kind = EnsembleKind::parse(other)
                .ok_or_else(|| Error::config(at("ensemble"), format!("unknown ensemble `{other}`")))?;
            let spec = EnsembleSpec {
                kind,
                rho: keys.f64_req(&at("rho"))?,
                custom_atoms: None,
                allow_overcomplete: overcomplete,
            };
            spec.validate().map_err(|e| Error::config(at("rho"), e.to_string()))?;
            spec
        }
    };
    Ok(TerminalConfig {
        ensemble,
        lambda: keys.f64_req(&at("lambda"))?,
        sigma2: keys.f64_or(&at("sigma2"), 0.0)?,
    })
}

fn read_seed(keys: &mut Keys) -> Result<u64> {
    match keys.take("seed") {
        None => Ok(1),
        Some(Value::Integer(i)) if i >= 0 => Ok(i as u64),
        Some(Value::String(s)) => s.parse().map_err(|_| Error::config("seed", format!("`{s}` is not a u64"))),
        Some(other) => Err(Error::config("seed", format!("expected a non-negative integer, got {other}"))),
    }
}

/// Parse config text.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::config("<document>", e.to_string()))?;
    let mut map = BTreeMap::new();
    flatten("", &table, &mut map);
    let mut keys = Keys { map, used: BTreeSet::new() };

    let mode_name = keys.string("mode")?.ok_or_else(|| Error::config("mode", "required"))?;
    let mode = Mode::parse(&mode_name).ok_or_else(|| Error::config("mode", format!("unknown mode `{mode_name}`")))?;
    let seed = read_seed(&mut keys)?;
    let distortion = match keys.string("distortion")?.as_deref() {
        None | Some("mse") => DistortionKind::Mse,
        Some("support_error") => DistortionKind::SupportError,
        Some(other) => return Err(Error::config("distortion", format!("unknown distortion `{other}`"))),
    };

    // terminals are numbered 1..=J without gaps
    let mut count = 0;
    while keys.has_prefix(&format!("terminal.{}", count + 1)) {
        count += 1;
    }
    let terminals = (1..=count).map(|k| read_terminal(&mut keys, k)).collect::<Result<Vec<_>>>()?;

    let mu_j = keys.f64_array("prior.mu_j")?.unwrap_or_else(|| vec![0.1; count.max(1)]);
    let prior = JointSparsityPrior {
        mu_c: keys.f64_or("prior.mu_c", 0.0)?,
        mu_0: keys.f64_or("prior.mu_0", 0.0)?,
        mu_j,
        dist_w0: read_value_dist(&mut keys, "prior.w0")?,
        dist_wj: read_value_dist(&mut keys, "prior.wj")?,
        dist_uj: read_value_dist(&mut keys, "prior.uj")?,
    };
    let spec = read_regularizer(&mut keys)?;

    let d = RsOptions::default();
    let method = match keys.string("solver.method")?.as_deref() {
        None | Some("quadrature") => ExpectationMethod::Quadrature {
            order: keys.usize_or("solver.order", 61)?,
        },
        Some("monte_carlo") => ExpectationMethod::MonteCarlo {
            draws: keys.usize_or("solver.draws", 100_000)?,
            seed,
        },
        Some(other) => return Err(Error::config("solver.method", format!("unknown method `{other}`"))),
    };
    let solver = RsOptions {
        damping: keys.f64_or("solver.damping", d.damping)?,
        tol: keys.f64_or("solver.tol", d.tol)?,
        max_iter: keys.usize_or("solver.max_iter", d.max_iter)?,
        method,
    };

    let simulate = if keys.has_prefix("simulate") {
        let d = SimulateConfig::default();
        Some(SimulateConfig {
            n: keys.usize_or("simulate.n", d.n)?,
            trials: keys.usize_or("simulate.trials", d.trials)?,
            max_iter: keys.usize_or("simulate.max_iter", d.max_iter)?,
            tol: keys.f64_or("simulate.tol", d.tol)?,
            predict: keys.bool_or("simulate.predict", d.predict)?,
        })
    } else {
        None
    };

    let sweep = if keys.has_prefix("sweep") {
        Some(SweepConfig {
            rho_1: keys.f64_array("sweep.rho_1")?.ok_or_else(|| Error::config("sweep.rho_1", "required"))?,
            rho_2: keys.f64_array("sweep.rho_2")?.ok_or_else(|| Error::config("sweep.rho_2", "required"))?,
            threshold: keys.f64_or("sweep.threshold", f64::INFINITY)?,
        })
    } else {
        None
    };

    let tune = if keys.has_prefix("tune") {
        let d = TuneConfig::default();
        let names = keys.string_array("tune.free")?.unwrap_or_default();
        let lo = keys.f64_array("tune.lo")?.unwrap_or_default();
        let hi = keys.f64_array("tune.hi")?.unwrap_or_default();
        if lo.len() != names.len() || hi.len() != names.len() {
            return Err(Error::config("tune.lo", "tune.free, tune.lo and tune.hi must have equal lengths"));
        }
        let free = names
            .iter()
            .zip(lo.iter().zip(&hi))
            .map(|(name, (lo, hi))| {
                let var = FreeVar::parse(name)
                    .ok_or_else(|| Error::config("tune.free", format!("unknown free variable `{name}`")))?;
                Ok(FreeParam { var, lo: *lo, hi: *hi })
            })
            .collect::<Result<Vec<_>>>()?;
        Some(TuneConfig {
            free,
            snr_db: keys.f64_array("tune.snr_db")?,
            signal_power: keys.f64_or("tune.signal_power", d.signal_power)?,
            rel_tol: keys.f64_or("tune.rel_tol", d.rel_tol)?,
            grid_points: keys.usize_or("tune.grid_points", d.grid_points)?,
            max_sweeps: keys.usize_or("tune.max_sweeps", d.max_sweeps)?,
        })
    } else {
        None
    };

    let spectrum = if keys.has_prefix("spectrum") {
        Some(SpectrumConfig {
            n: keys.usize_or("spectrum.n", 512)?,
            points: keys.usize_or("spectrum.points", 101)?,
        })
    } else {
        None
    };

    let output = OutputConfig {
        path: keys.string("output.path")?.map(PathBuf::from),
        format: match keys.string("output.format")? {
            None => Format::Csv,
            Some(s) => Format::parse(&s).ok_or_else(|| Error::config("output.format", format!("unknown format `{s}`")))?,
        },
    };

    keys.finish()?;
    let cfg = ExperimentConfig {
        mode,
        seed,
        distortion,
        prior,
        spec,
        terminals,
        solver,
        simulate,
        sweep,
        tune,
        spectrum,
        output,
    };
    cfg.validate()?;
    Ok(cfg)
}

pub fn read_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::config(path.display().to_string(), e.to_string()))?;
    parse_config(&text)
}

// ---------------------------------------------------------------- writing

fn line(out: &mut String, key: &str, value: impl Into<Value>) {
    let _ = writeln!(out, "{key} = {}", value.into());
}

fn floats(v: &[f64]) -> Value {
    Value::Array(v.iter().map(|x| Value::Float(*x)).collect())
}

fn write_value_dist(out: &mut String, prefix: &str, dist: &ValueDist) {
    match dist {
        ValueDist::Gaussian { mean, variance } => {
            line(out, &format!("{prefix}.kind"), "gaussian");
            line(out, &format!("{prefix}.mean"), *mean);
            line(out, &format!("{prefix}.variance"), *variance);
        }
        ValueDist::PointMass { value } => {
            line(out, &format!("{prefix}.kind"), "point_mass");
            line(out, &format!("{prefix}.value"), *value);
        }
        ValueDist::Discrete { atoms } => {
            line(out, &format!("{prefix}.kind"), "discrete");
            let (v, p): (Vec<f64>, Vec<f64>) = atoms.iter().copied().unzip();
            line(out, &format!("{prefix}.values"), floats(&v));
            line(out, &format!("{prefix}.probs"), floats(&p));
        }
    }
}

/// Canonical text form; `parse_config(to_text(c)) == c`.
pub fn to_text(cfg: &ExperimentConfig) -> String {
    let mut out = String::new();
    line(&mut out, "mode", cfg.mode.name());
    if cfg.seed <= i64::MAX as u64 {
        line(&mut out, "seed", cfg.seed as i64);
    } else {
        line(&mut out, "seed", cfg.seed.to_string());
    }
    line(&mut out, "distortion", cfg.distortion.name());

    line(&mut out, "prior.mu_c", cfg.prior.mu_c);
    line(&mut out, "prior.mu_0", cfg.prior.mu_0);
    line(&mut out, "prior.mu_j", floats(&cfg.prior.mu_j));
    write_value_dist(&mut out, "prior.w0", &cfg.prior.dist_w0);
    write_value_dist(&mut out, "prior.wj", &cfg.prior.dist_wj);
    write_value_dist(&mut out, "prior.uj", &cfg.prior.dist_uj);

    let spec = &cfg.spec;
    line(&mut out, "regularizer.kind", spec.kind.name());
    line(&mut out, "regularizer.weight", spec.weight);
    match spec.kind {
        RegKind::Lpq { p, q } => {
            line(&mut out, "regularizer.p", p);
            line(&mut out, "regularizer.q", q);
        }
        RegKind::TwoDimLasso { phi, alpha } => {
            line(&mut out, "regularizer.phi", phi);
            line(&mut out, "regularizer.alpha", alpha);
        }
        _ => {}
    }
    if let Domain::Box(b) = spec.domain {
        line(&mut out, "regularizer.bound", b);
    }

    for (k, t) in cfg.terminals.iter().enumerate() {
        let at = |f: &str| format!("terminal.{}.{f}", k + 1);
        let e = &t.ensemble;
        line(&mut out, &at("ensemble"), e.kind.name());
        match (&e.kind, &e.custom_atoms) {
            (EnsembleKind::CustomSpectrum, Some(atoms)) => {
                let (v, m): (Vec<f64>, Vec<f64>) = atoms.iter().copied().unzip();
                line(&mut out, &at("eigenvalues"), floats(&v));
                line(&mut out, &at("masses"), floats(&m));
            }
            _ => {
                line(&mut out, &at("rho"), e.rho);
                if e.allow_overcomplete {
                    line(&mut out, &at("allow_overcomplete"), true);
                }
            }
        }
        line(&mut out, &at("lambda"), t.lambda);
        line(&mut out, &at("sigma2"), t.sigma2);
    }

    let s = &cfg.solver;
    line(&mut out, "solver.damping", s.damping);
    line(&mut out, "solver.tol", s.tol);
    line(&mut out, "solver.max_iter", s.max_iter as i64);
    match s.method {
        ExpectationMethod::Quadrature { order } => {
            line(&mut out, "solver.method", "quadrature");
            line(&mut out, "solver.order", order as i64);
        }
        ExpectationMethod::MonteCarlo { draws, .. } => {
            line(&mut out, "solver.method", "monte_carlo");
            line(&mut out, "solver.draws", draws as i64);
        }
    }

    if let Some(sim) = &cfg.simulate {
        line(&mut out, "simulate.n", sim.n as i64);
        line(&mut out, "simulate.trials", sim.trials as i64);
        line(&mut out, "simulate.max_iter", sim.max_iter as i64);
        line(&mut out, "simulate.tol", sim.tol);
        line(&mut out, "simulate.predict", sim.predict);
    }
    if let Some(sw) = &cfg.sweep {
        line(&mut out, "sweep.rho_1", floats(&sw.rho_1));
        line(&mut out, "sweep.rho_2", floats(&sw.rho_2));
        line(&mut out, "sweep.threshold", sw.threshold);
    }
    if let Some(t) = &cfg.tune {
        let names: Vec<Value> = t.free.iter().map(|p| Value::String(p.var.name())).collect();
        line(&mut out, "tune.free", Value::Array(names));
        line(&mut out, "tune.lo", floats(&t.free.iter().map(|p| p.lo).collect::<Vec<_>>()));
        line(&mut out, "tune.hi", floats(&t.free.iter().map(|p| p.hi).collect::<Vec<_>>()));
        if let Some(snr) = &t.snr_db {
            line(&mut out, "tune.snr_db", floats(snr));
        }
        line(&mut out, "tune.signal_power", t.signal_power);
        line(&mut out, "tune.rel_tol", t.rel_tol);
        line(&mut out, "tune.grid_points", t.grid_points as i64);
        line(&mut out, "tune.max_sweeps", t.max_sweeps as i64);
    }
    if let Some(sp) = &cfg.spectrum {
        line(&mut out, "spectrum.n", sp.n as i64);
        line(&mut out, "spectrum.points", sp.points as i64);
    }
    if let Some(p) = &cfg.output.path {
        line(&mut out, "output.path", p.display().to_string());
    }
    line(&mut out, "output.format", cfg.output.format.name());
    out
}

/// Write the canonical form atomically.
pub fn write_config(cfg: &ExperimentConfig, path: &Path) -> Result<()> {
    super::output::atomic_write(path, to_text(cfg).as_bytes())
}
