//! Experiment orchestration: specs, presets, runs and precise JSON output.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{Family, ModelKind};
use crate::poly::Polynomial;
use crate::sampling::{
    sample_direct, sample_map, sample_mcmc_with, supports_direct, write_binary, BoundaryTerm, GGEConfig, JacobiParams,
    LocalObservable, McmcSettings, MeasureType, SampleBatch, Sampler, SeriesObservable,
};
use crate::seeds::{extract_seed, poly_json, verify_decomposition};
use crate::stats::{self, Prediction};
use crate::transferop::{clt_mean_and_variance, susceptibility, toda_current_mean, CLTQuantities, OperatorSettings, Part};

// ---------------------------------------------------------------------------
// JSON output

/// Pretty JSON formatter that prints every double with 17 significant digits.
pub struct PreciseFormatter {
    inner: serde_json::ser::PrettyFormatter<'static>,
}

impl Default for PreciseFormatter {
    fn default() -> Self {
        Self { inner: serde_json::ser::PrettyFormatter::new() }
    }
}

impl serde_json::ser::Formatter for PreciseFormatter {
    fn write_f64<W: ?Sized + io::Write>(&mut self, w: &mut W, v: f64) -> io::Result<()> {
        write!(w, "{v:.16e}")
    }
    fn write_f32<W: ?Sized + io::Write>(&mut self, w: &mut W, v: f32) -> io::Result<()> {
        write!(w, "{:.16e}", v as f64)
    }
    fn begin_array<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.inner.begin_array(w)
    }
    fn end_array<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.inner.end_array(w)
    }
    fn begin_array_value<W: ?Sized + io::Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.inner.begin_array_value(w, first)
    }
    fn end_array_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.inner.end_array_value(w)
    }
    fn begin_object<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.inner.begin_object(w)
    }
    fn end_object<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.inner.end_object(w)
    }
    fn begin_object_key<W: ?Sized + io::Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.inner.begin_object_key(w, first)
    }
    fn begin_object_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.inner.begin_object_value(w)
    }
    fn end_object_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.inner.end_object_value(w)
    }
}

/// Serializes `value` with [`PreciseFormatter`]; non-finite doubles become `null`.
pub fn to_json<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, PreciseFormatter::default());
    value.serialize(&mut ser)?;
    buf.push(b'\n');
    String::from_utf8(buf).map_err(|e| Error::Io(e.to_string()))
}

// ---------------------------------------------------------------------------
// Experiment spec

/// Potential as an expression (`"x^4 + x^2/2"`) or real coefficients in increasing degree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PotentialSpec {
    Coefficients(Vec<f64>),
    Expression(String),
}

impl PotentialSpec {
    pub fn polynomial(&self) -> Result<Polynomial> {
        match self {
            PotentialSpec::Coefficients(c) => Ok(Polynomial::from_real(c)),
            PotentialSpec::Expression(s) => Polynomial::parse(s),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ObservableSpec {
    pub s: usize,
    pub part: Part,
}

impl Default for ObservableSpec {
    fn default() -> Self {
        Self { s: 2, part: Part::Re }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplerMethod {
    Auto,
    Direct,
    Mcmc,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerSpec {
    pub method: SamplerMethod,
    pub count: usize,
    pub burn_in: usize,
    /// Sweeps between samples; 0 selects the energy autocorrelation time.
    pub thin: usize,
    pub chains: usize,
    pub rng_seed: u64,
}

impl Default for SamplerSpec {
    fn default() -> Self {
        Self { method: SamplerMethod::Auto, count: 4000, burn_in: 1000, thin: 0, chains: 1, rng_seed: 0 }
    }
}

impl SamplerSpec {
    pub fn sampler(&self) -> Sampler {
        let (thin, burn_in, chains) = (self.thin, self.burn_in, self.chains);
        match self.method {
            SamplerMethod::Auto => Sampler::Auto { thin, burn_in, chains },
            SamplerMethod::Direct => Sampler::Direct,
            SamplerMethod::Mcmc => Sampler::Mcmc { thin, burn_in, chains },
        }
    }
}

/// Tolerances of the sampled CLT checks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CheckSettings {
    /// Largest accepted KS distance of the standardized observable.
    pub ks_max: f64,
    /// Absolute slack added to the 3 SE mean check; `None` means 0 for type 1
    /// and `2(1 + |A|)/N` for type 2, whose finite-`N` mean carries an `O(1/N)` bias.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_slack: Option<f64>,
}

impl Default for CheckSettings {
    fn default() -> Self {
        Self { ks_max: 0.05, mean_slack: None }
    }
}

/// Jacobi ensemble parameters, or `"restricted"` for `ã = b̃` with `ã + b̃ = -1 + β/4`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum JacobiSpec {
    Params(JacobiParams),
    Named(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecaySpec {
    /// Local field `[L^m]_{jj}` correlated with itself across distances.
    pub m: usize,
    pub max_distance: usize,
    /// Sample count; defaults to the sampler count.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
}

impl Default for DecaySpec {
    fn default() -> Self {
        Self { m: 2, max_distance: 16, samples: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    Sample,
    Transfer,
    VerifyClt,
    /// `(m, n)` pairs of `C_{m,n}`.
    Susceptibility(Vec<[usize; 2]>),
    Decay(DecaySpec),
    BerryEsseen,
    SeedsCheck,
    /// Current index `n` of the Toda current mean.
    Currents(usize),
}

impl Task {
    fn label(&self) -> &'static str {
        match self {
            Task::Sample => "sample",
            Task::Transfer => "transfer",
            Task::VerifyClt => "verify-clt",
            Task::Susceptibility(_) => "susceptibility",
            Task::Decay(_) => "decay",
            Task::BerryEsseen => "berry-esseen",
            Task::SeedsCheck => "seeds-check",
            Task::Currents(_) => "currents",
        }
    }
}

mod model_name {
    use super::ModelKind;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(k: &ModelKind, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&k.name())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<ModelKind, D::Error> {
        let s = String::deserialize(d)?;
        ModelKind::parse(&s).map_err(serde::de::Error::custom)
    }
}

fn type1() -> MeasureType {
    MeasureType::Type1
}

fn is_false(b: &bool) -> bool {
    !*b
}

/// One experiment: model, measure, potential, sizes, settings and tasks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub name: String,
    #[serde(with = "model_name")]
    pub model: ModelKind,
    #[serde(default = "type1")]
    pub measure_type: MeasureType,
    pub alpha: f64,
    pub potential: PotentialSpec,
    #[serde(default)]
    pub observable: ObservableSpec,
    #[serde(default, rename = "N", skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(default, rename = "Ns", skip_serializing_if = "Option::is_none")]
    pub ns: Option<Vec<usize>>,
    #[serde(default)]
    pub sampler: SamplerSpec,
    #[serde(default)]
    pub operator: OperatorSettings,
    #[serde(default, skip_serializing_if = "is_false")]
    pub real_cmv: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub jacobi: Option<JacobiSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub boundary: Option<BoundaryTerm>,
    /// Closed-form `(A, σ²)` used in place of the transfer operator.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predicted: Option<Prediction>,
    #[serde(default)]
    pub checks: CheckSettings,
    #[serde(default)]
    pub tasks: Vec<Task>,
}

impl ExperimentSpec {
    /// Parses TOML, or JSON when the text starts with `{`.
    pub fn parse(text: &str) -> Result<Self> {
        if text.trim_start().starts_with('{') {
            serde_json::from_str(text).map_err(|e| Error::Config(format!("spec JSON: {e}")))
        } else {
            toml::from_str(text).map_err(|e| Error::Config(format!("spec TOML: {e}")))
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    fn has(&self, label: &str) -> bool {
        self.tasks.iter().any(|t| t.label() == label)
    }

    /// Operator settings; Jacobi factors use their exponents at lattice size `N`.
    fn operator_settings(&self) -> Result<OperatorSettings> {
        let jacobi = match self.n {
            Some(n) => self.config(n)?.jacobi.map(|j| {
                let shift = self.alpha / n as f64;
                [j.a_tilde + 1.0 - shift, j.b_tilde + 1.0 - shift]
            }),
            None => None,
        };
        Ok(OperatorSettings { real_cmv: self.real_cmv, jacobi: jacobi.or(self.operator.jacobi), ..self.operator.clone() })
    }

    /// Sampling configuration at lattice size `n`.
    pub fn config(&self, n: usize) -> Result<GGEConfig> {
        let jacobi = match &self.jacobi {
            None => None,
            Some(JacobiSpec::Params(p)) => Some(*p),
            Some(JacobiSpec::Named(s)) if s == "restricted" => Some(JacobiParams::restricted(self.alpha, n)),
            Some(JacobiSpec::Named(s)) => return Err(Error::Config(format!("unknown Jacobi parameter set '{s}'"))),
        };
        Ok(GGEConfig {
            kind: self.model,
            alpha: self.alpha,
            potential: self.potential.polynomial()?,
            n,
            measure_type: self.measure_type,
            boundary: self.boundary.clone(),
            real_cmv: self.real_cmv,
            jacobi,
        })
    }

    fn require_n(&self, task: &str) -> Result<usize> {
        self.n.ok_or_else(|| Error::Config(format!("task '{task}' needs N")))
    }

    /// Checks that every requested task can run; configuration errors only.
    pub fn validate(&self) -> Result<()> {
        if self.tasks.is_empty() {
            return Err(Error::Config("no tasks requested".into()));
        }
        if self.name.is_empty() || self.name.contains(['/', '\\']) || self.name.starts_with('.') {
            return Err(Error::Config(format!("invalid experiment name '{}'", self.name)));
        }
        self.potential.polynomial()?;
        if self.observable.s == 0 {
            return Err(Error::Config("observable power s must be positive".into()));
        }
        if self.sampler.count == 0 {
            return Err(Error::Config("sampler count must be positive".into()));
        }
        if self.sampler.chains == 0 {
            return Err(Error::Config("sampler needs at least one chain".into()));
        }
        if let Some(n) = self.n {
            self.config(n)?.validate()?;
        }
        for t in &self.tasks {
            let label = t.label();
            if matches!(t, Task::Sample | Task::VerifyClt | Task::Decay(_) | Task::SeedsCheck) {
                self.require_n(label)?;
            }
            match t {
                Task::VerifyClt => {
                    if !self.has("sample") {
                        return Err(Error::Config("verify-clt needs the sample task".into()));
                    }
                    if !self.has("transfer") && self.predicted.is_none() {
                        return Err(Error::Config("verify-clt needs the transfer task or closed-form predictions".into()));
                    }
                }
                Task::Susceptibility(pairs) => {
                    if self.measure_type != MeasureType::Type1 {
                        return Err(Error::Config("susceptibility is defined for type-1 measures".into()));
                    }
                    if pairs.is_empty() || pairs.iter().any(|p| p[0] == 0 || p[1] == 0) {
                        return Err(Error::Config("susceptibility needs (m, n) pairs with positive entries".into()));
                    }
                }
                Task::Decay(d) => {
                    let n = self.require_n("decay")?;
                    if self.measure_type != MeasureType::Type1 {
                        return Err(Error::Config("decay needs a translation-invariant type-1 measure".into()));
                    }
                    if d.m == 0 || d.max_distance < 3 || 2 * d.max_distance > n {
                        return Err(Error::Config(format!("decay needs m >= 1 and 3 <= max_distance <= N/2, got {d:?}")));
                    }
                }
                Task::BerryEsseen => {
                    let ns = self.ns.as_ref().ok_or_else(|| Error::Config("berry-esseen needs Ns".into()))?;
                    if ns.len() < 2 {
                        return Err(Error::Config("berry-esseen needs at least two sizes".into()));
                    }
                    for &n in ns {
                        self.config(n)?.validate()?;
                    }
                    if self.observable.part != Part::Re {
                        return Err(Error::Config("berry-esseen scans Tr Re L^s only".into()));
                    }
                }
                Task::Currents(n) => {
                    if self.model.family() != Family::Jacobi || self.measure_type != MeasureType::Type1 {
                        return Err(Error::Config("currents are defined for the periodic Toda lattice".into()));
                    }
                    if *n == 0 {
                        return Err(Error::Config("current index must be positive".into()));
                    }
                }
                _ => {}
            }
        }
        if self.observable.part == Part::Im && !self.model.is_cmv() {
            return Err(Error::Config("Im Tr L^s is identically zero for real models".into()));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Presets

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Preset {
    pub name: &'static str,
    pub title: &'static str,
    pub description: &'static str,
    pub spec: ExperimentSpec,
}

fn base(name: &str, model: ModelKind, measure: MeasureType, potential: &str, n: usize, count: usize) -> ExperimentSpec {
    ExperimentSpec {
        name: name.to_string(),
        model,
        measure_type: measure,
        alpha: 1.0,
        potential: PotentialSpec::Expression(potential.to_string()),
        observable: ObservableSpec::default(),
        n: Some(n),
        ns: None,
        sampler: SamplerSpec { count, ..SamplerSpec::default() },
        operator: OperatorSettings::default(),
        real_cmv: false,
        jacobi: None,
        boundary: None,
        predicted: None,
        checks: CheckSettings::default(),
        tasks: vec![Task::Sample, Task::Transfer, Task::VerifyClt, Task::SeedsCheck],
    }
}

/// Built-in experiments, one per model family and measure type, plus the heavy Toda checks.
pub fn presets() -> Vec<Preset> {
    use MeasureType::{Type1, Type2};
    let mut out = Vec::new();
    let mut push = |name: &'static str, title: &'static str, description: &'static str, spec: ExperimentSpec| {
        out.push(Preset { name, title, description, spec });
    };

    let mut s = base("toda-quadratic-clt", ModelKind::TodaPeriodic, Type1, "x^2/2", 64, 20_000);
    s.tasks.extend([Task::Susceptibility(vec![[1, 1], [2, 2], [1, 2]]), Task::Currents(1)]);
    push("toda-quadratic-clt", "CLT for the Toda lattice", "Toda GGE with P = x^2/2: Tr L^2 against A = 1+2a, s2 = 2+4a", s);

    let s = base("real-beta-clt", ModelKind::TodaNonPeriodic, Type2, "x^2/2", 256, 20_000);
    push("real-beta-clt", "CLT for real, high temperature beta-ensemble", "Gaussian beta-ensemble at beta = 2a/N: Tr T^2", s);

    let mut s = base("exp-toda-clt", ModelKind::ExpTodaPeriodic, Type1, "x", 64, 20_000);
    s.operator.deltas = [2e-3, 1e-3];
    push("exp-toda-clt", "CLT for the Exponential Toda lattice", "Exponential Toda GGE with P = x: Tr L^2", s);

    let mut s = base("laguerre-clt", ModelKind::LaguerreNonPeriodic, Type2, "x", 256, 20_000);
    s.operator.deltas = [2e-3, 1e-3];
    push("laguerre-clt", "CLT for Laguerre beta-ensemble", "Laguerre beta-ensemble at beta = 2a/N with P = x: Tr L^2", s);

    let s = base("volterra-clt", ModelKind::VolterraPeriodic, Type1, "-x^2", 64, 20_000);
    push("volterra-clt", "CLT for Volterra lattice", "Volterra GGE with P = -x^2 (Tr P(L) = 2 sum a_j): Tr L^2", s);

    let s = base("antisym-clt", ModelKind::AntisymNonPeriodic, Type2, "-x^2", 256, 20_000);
    push("antisym-clt", "CLT for Antisymmetric beta-ensemble", "Antisymmetric beta-ensemble at beta = 2a/N: Tr L^2", s);

    let mut s = base("ablowitz-ladik-clt", ModelKind::CMVPeriodic, Type1, "0", 64, 20_000);
    s.observable = ObservableSpec { s: 1, part: Part::Re };
    s.operator.nodes_per_dim = 11;
    push("ablowitz-ladik-clt", "CLT for defocusing Ablowitz-Ladik lattice", "Ablowitz-Ladik GGE with P = 0: Re Tr E", s);

    let mut s = base("circular-beta-clt", ModelKind::CMVNonPeriodic, Type2, "0", 256, 20_000);
    s.observable = ObservableSpec { s: 1, part: Part::Re };
    s.operator.nodes_per_dim = 11;
    push("circular-beta-clt", "CLT for Circular beta-ensemble", "Circular beta-ensemble at beta = 2a/N: Re Tr E", s);

    let mut s = base("schur-flow-clt", ModelKind::CMVPeriodic, Type1, "0", 64, 20_000);
    s.real_cmv = true;
    s.observable = ObservableSpec { s: 2, part: Part::Re };
    push("schur-flow-clt", "CLT for defocusing Schur flow", "Schur flow GGE on real coefficients with P = 0: Tr E^2", s);

    let mut s = base("jacobi-beta-clt", ModelKind::CMVNonPeriodic, Type2, "0", 256, 20_000);
    s.real_cmv = true;
    s.jacobi = Some(JacobiSpec::Named("restricted".into()));
    s.observable = ObservableSpec { s: 2, part: Part::Re };
    push(
        "jacobi-beta-clt",
        "CLT for Jacobi beta-ensemble in the high-temperature",
        "Jacobi beta-ensemble with a~ = b~ and a~ + b~ = -1 + beta/4: Tr E^2 against the Jacobi-weighted operator",
        s,
    );

    let mut s = base("inb-clt", ModelKind::INBAdditive(2), Type1, "x^3", 128, 10_000);
    s.sampler.burn_in = 2000;
    s.observable = ObservableSpec { s: 6, part: Part::Re };
    s.operator.nodes_per_dim = 20;
    push("inb-clt", "CLT for INB lattices", "Additive INB lattice with r = 2 and P = x^3: Tr L^6", s);

    let mut s = base("toda-quartic-clt", ModelKind::TodaPeriodic, Type1, "x^4 + x^2/2", 256, 20_000);
    s.sampler.method = SamplerMethod::Mcmc;
    s.sampler.thin = 8;
    s.sampler.chains = 4;
    s.tasks.extend([Task::Susceptibility(vec![[2, 2]]), Task::Currents(1)]);
    push("toda-quartic-clt", "Quartic Toda CLT", "Toda GGE with P = x^4 + x^2/2 at N = 256 by MCMC", s);

    let mut s = base("toda-quartic-decay", ModelKind::TodaPeriodic, Type1, "x^4 + x^2/2", 256, 20_000);
    s.sampler.method = SamplerMethod::Mcmc;
    s.sampler.thin = 4;
    s.sampler.chains = 4;
    s.tasks = vec![Task::Decay(DecaySpec { m: 2, max_distance: 8, samples: None })];
    push("toda-quartic-decay", "Quartic Toda decay of correlations", "Exponential decay of Cov(h_1, h_j) for h = [L^2]_jj", s);

    let mut s = base("toda-quartic-berry-esseen", ModelKind::TodaPeriodic, Type1, "x^4 + x^2/2", 64, 10_000);
    s.n = None;
    s.ns = Some(vec![16, 64, 256]);
    s.sampler.method = SamplerMethod::Mcmc;
    s.sampler.thin = 8;
    s.sampler.chains = 4;
    s.tasks = vec![Task::Transfer, Task::BerryEsseen];
    push("toda-quartic-berry-esseen", "Quartic Toda Berry-Esseen scan", "sup-CDF distance times sqrt(N) across sizes", s);

    out
}

/// `name  title  description` table.
pub fn preset_table() -> String {
    let list = presets();
    let w = list.iter().map(|p| p.name.len()).max().unwrap_or(0);
    let mut s = String::new();
    for p in &list {
        let _ = writeln!(s, "{:w$}  {}: {}", p.name, p.title, p.description);
    }
    s
}

pub fn preset(name: &str) -> Option<ExperimentSpec> {
    presets().into_iter().find(|p| p.name == name).map(|p| p.spec)
}

// ---------------------------------------------------------------------------
// Running

/// Outcome of one named invariant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub checks: Vec<Check>,
    /// 0 when every check passes, 1 on a failed check or runtime error, 2 on a configuration error.
    pub exit_code: i32,
    pub log: Vec<String>,
}

/// Whether a library error stems from the configuration rather than from the run.
pub fn is_config_error(e: &Error) -> bool {
    matches!(
        e,
        Error::Config(_)
            | Error::Domain(_)
            | Error::UnsupportedPotential(_)
            | Error::NotFactorizable(_)
            | Error::NonNormalizable(_)
            | Error::IncompatibleSeeds { .. }
            | Error::GridTooLarge { .. }
            | Error::Index { .. }
    )
}

struct Runner<'a> {
    spec: &'a ExperimentSpec,
    dir: PathBuf,
    log: Vec<String>,
    checks: Vec<Check>,
    batch: Option<SampleBatch>,
    quantities: Option<CLTQuantities>,
}

impl Runner<'_> {
    fn note(&mut self, msg: impl Into<String>) {
        self.log.push(msg.into());
    }

    fn check(&mut self, name: &str, pass: bool, detail: String) -> bool {
        self.note(format!("[{}] {name}: {detail}", if pass { "PASS" } else { "FAIL" }));
        self.checks.push(Check { name: name.to_string(), pass, detail });
        pass
    }

    fn write(&self, file: &str, value: &impl Serialize) -> Result<()> {
        fs::write(self.dir.join(file), to_json(value)?)?;
        Ok(())
    }

    fn prediction(&self) -> Option<Prediction> {
        self.spec
            .predicted
            .or_else(|| self.quantities.as_ref().map(|q| Prediction::from_quantities(q, self.spec.measure_type)))
    }

    fn task(&mut self, t: &Task) -> Result<()> {
        let spec = self.spec;
        match t {
            Task::Sample => {
                let n = spec.require_n("sample")?;
                let cfg = spec.config(n)?;
                let sm = &spec.sampler;
                let direct = match sm.method {
                    SamplerMethod::Direct => true,
                    SamplerMethod::Mcmc => false,
                    SamplerMethod::Auto => supports_direct(&cfg),
                };
                let batch = if direct {
                    sample_direct(&cfg, sm.count, sm.rng_seed)?
                } else {
                    let settings = McmcSettings {
                        count: sm.count,
                        thin: sm.thin,
                        burn_in: sm.burn_in,
                        chains: sm.chains,
                        rng_seed: sm.rng_seed,
                    };
                    sample_mcmc_with(&cfg, &settings)?
                };
                write_binary(&batch, &self.dir.join("samples.bin"))?;
                let d = &batch.diagnostics;
                self.note(format!(
                    "sample: {} configurations at N={n} ({}), acceptance {:.4}, thin {}",
                    batch.configs.len(),
                    if direct { "direct" } else { "mcmc" },
                    d.acceptance_rate,
                    d.thin
                ));
                for w in &d.warnings {
                    self.note(format!("warning: {w}"));
                }
                self.batch = Some(batch);
            }
            Task::Transfer => {
                let ob = spec.observable;
                let q = clt_mean_and_variance(
                    spec.model.periodic(),
                    &spec.potential.polynomial()?,
                    ob.s,
                    ob.part,
                    spec.alpha,
                    &spec.operator_settings()?,
                )?;
                let ok = q.lambda > 0.0 && q.gap > 0.0;
                self.check(
                    "dominant eigenvalue real positive with a spectral gap",
                    ok,
                    format!("lambda = {:.10e}, gap = {:.6e}", q.lambda, q.gap),
                );
                if !q.converged {
                    self.note("warning: grid refinement changed ln lambda beyond tolerance");
                }
                self.write("operator.json", &serde_json::json!({"observable": ob, "quantities": q, "pass": ok}))?;
                self.quantities = Some(q);
            }
            Task::VerifyClt => {
                let batch = self.batch.as_ref().ok_or_else(|| Error::Config("verify-clt needs samples".into()))?;
                let pred = self.prediction().ok_or_else(|| Error::Config("verify-clt needs predictions".into()))?;
                let ob = spec.observable;
                let obs = match ob.part {
                    Part::Re => SeriesObservable::ReTracePower(ob.s),
                    Part::Im => SeriesObservable::ImTracePower(ob.s),
                };
                let series = crate::sampling::observable_series(batch, obs)?;
                let label = format!("Tr {} L^{}", if ob.part == Part::Re { "Re" } else { "Im" }, ob.s);
                let n = batch.config.n;
                let r = stats::clt_check_series(&series, n, &label, pred)?;
                let slack = spec.checks.mean_slack.unwrap_or(match spec.measure_type {
                    MeasureType::Type1 => 0.0,
                    MeasureType::Type2 => 2.0 * (1.0 + pred.a.abs()) / n as f64,
                });
                let mean_ok = (r.empirical_mean - r.predicted_a).abs() < 3.0 * r.mean_se + slack;
                let ks_ok = r.ks_distance < spec.checks.ks_max;
                let pass = mean_ok && r.var_ok && ks_ok;
                self.check(
                    "mean per site within 3 SE (plus slack) of A",
                    mean_ok,
                    format!("{:.8e} vs {:.8e} (SE {:.3e}, slack {slack:.3e})", r.empirical_mean, r.predicted_a, r.mean_se),
                );
                self.check(
                    "variance per site within max(3 SE, 5%) of sigma2",
                    r.var_ok,
                    format!("{:.8e} vs {:.8e} (SE {:.3e})", r.empirical_var, r.predicted_sigma2, r.var_se),
                );
                self.check(
                    "KS distance of the standardized observable below ks_max",
                    ks_ok,
                    format!("D = {:.5} (limit {}), p = {:.4}", r.ks_distance, spec.checks.ks_max, r.ks_pvalue),
                );
                let out = serde_json::json!({"report": r, "mean_slack": slack, "mean_pass": mean_ok, "ks_pass": ks_ok, "pass": pass});
                self.write("clt.json", &out)?;
            }
            Task::Susceptibility(pairs) => {
                let p = spec.potential.polynomial()?;
                let settings = spec.operator_settings()?;
                let mut rows = Vec::new();
                let mut all = true;
                for &[m, k] in pairs {
                    let c = susceptibility(spec.model.periodic(), &p, m, k, spec.alpha, &settings)?;
                    let c_sym = susceptibility(spec.model.periodic(), &p, k, m, spec.alpha, &settings)?;
                    let sym_ok = (c - c_sym).abs() < 1e-6 * (1.0 + c.abs());
                    all &= self.check(&format!("C_{{{m},{k}}} symmetric"), sym_ok, format!("{c:.10e} vs {c_sym:.10e}"));
                    let empirical = match &self.batch {
                        Some(b) => {
                            let e = stats::susceptibility_empirical(b, m, k)?;
                            let ok = e.within(c, 3.0);
                            all &= self.check(
                                &format!("C_{{{m},{k}}} operator within 3 SE of empirical"),
                                ok,
                                format!("{c:.8e} vs {:.8e} (SE {:.3e})", e.value, e.se),
                            );
                            Some(e)
                        }
                        None => None,
                    };
                    rows.push(serde_json::json!({"m": m, "n": k, "operator": c, "operator_swapped": c_sym, "empirical": empirical}));
                }
                self.write("susceptibility.json", &serde_json::json!({"pairs": rows, "pass": all}))?;
            }
            Task::Decay(d) => {
                let n = spec.require_n("decay")?;
                let cfg = spec.config(n)?;
                let kind = cfg.lattice_kind()?;
                let count = d.samples.unwrap_or(spec.sampler.count);
                let obs = LocalObservable::LocalField(d.m);
                let (rows, _) = sample_map(&cfg, spec.sampler.sampler(), count, spec.sampler.rng_seed, |c| {
                    stats::decay_row(kind, c, obs, obs, d.max_distance)
                })?;
                let rows: Vec<Vec<f64>> = rows.into_iter().collect::<Result<_>>()?;
                let rep = stats::decay_from_rows(&rows, d.max_distance, 50);
                let (pass, report) = match rep {
                    Ok(r) => {
                        let ok = r.fitted_log_slope < 0.0 && r.slope_ci[1] < 0.0 && r.fit_r2 > 0.9;
                        self.check(
                            "log covariance decays linearly (slope CI < 0, R2 > 0.9)",
                            ok,
                            format!("slope {:.5} CI [{:.5}, {:.5}], R2 {:.4}", r.fitted_log_slope, r.slope_ci[0], r.slope_ci[1], r.fit_r2),
                        );
                        (ok, serde_json::to_value(&r)?)
                    }
                    Err(Error::NoDecayDetected) => {
                        self.check("log covariance decays linearly", false, "no decay detected above noise".into());
                        (false, serde_json::Value::Null)
                    }
                    Err(e) => return Err(e),
                };
                self.write("decay.json", &serde_json::json!({"m": d.m, "samples": count, "report": report, "pass": pass}))?;
            }
            Task::BerryEsseen => {
                let ns = spec.ns.clone().unwrap_or_default();
                let pred = match self.prediction() {
                    Some(p) => p,
                    None => {
                        let q = clt_mean_and_variance(
                            spec.model.periodic(),
                            &spec.potential.polynomial()?,
                            spec.observable.s,
                            Part::Re,
                            spec.alpha,
                            &spec.operator_settings()?,
                        )?;
                        Prediction::from_quantities(&q, spec.measure_type)
                    }
                };
                let cfg = spec.config(ns[0])?;
                let rep = stats::berry_esseen_scan(
                    &cfg,
                    spec.observable.s,
                    &ns,
                    spec.sampler.count,
                    spec.sampler.sampler(),
                    spec.sampler.rng_seed,
                    |_| Ok(pred),
                )?;
                let ratio = rep.scaled_ratio();
                let pass = ratio < 3.0;
                self.check("sup distance times sqrt(N) varies by less than 3x", pass, format!("ratio {ratio:.4}, scaled {:?}", rep.scaled));
                self.write("berry_esseen.json", &serde_json::json!({"report": rep, "ratio": ratio, "pass": pass}))?;
            }
            Task::SeedsCheck => {
                let n = spec.require_n("seeds-check")?;
                let cfg = spec.config(n)?;
                let kind = cfg.lattice_kind()?;
                let seed = extract_seed(kind, &cfg.potential, n)?;
                let configs = match &self.batch {
                    Some(b) => b.configs.iter().take(200).cloned().collect(),
                    None => {
                        let take = spec.sampler.count.min(200);
                        sample_map(&cfg, spec.sampler.sampler(), take, spec.sampler.rng_seed, |c| c.clone())?.0
                    }
                };
                let mut worst = 0.0f64;
                for c in &configs {
                    worst = worst.max(verify_decomposition(&seed, kind, &cfg.potential, c)?);
                }
                let pass = worst < 1e-10;
                self.check(
                    "seed and weed sum to Tr P(L)",
                    pass,
                    format!("max relative residual {worst:.3e} over {} configurations", configs.len()),
                );
                let out = serde_json::json!({
                    "model": kind.name(), "k": seed.k, "blocks": seed.m_blocks, "ell": seed.ell,
                    "lower_bound": seed.lower_bound, "seed": seed.seed_json(), "weed": poly_json(kind, &seed.weed),
                    "max_residual": worst, "pass": pass,
                });
                self.write("seeds.json", &out)?;
            }
            Task::Currents(k) => {
                let p = spec.potential.polynomial()?;
                let cm = toda_current_mean(&p, *k, spec.alpha, &spec.operator_settings()?)?;
                let agree = (cm.integral_form - cm.free_energy_form).abs() < 1e-3;
                let mut pass = self.check(
                    &format!("current J^[{k}] integral and free-energy forms agree"),
                    agree,
                    format!("{:.10e} vs {:.10e}", cm.integral_form, cm.free_energy_form),
                );
                let empirical = match &self.batch {
                    Some(b) => {
                        let kind = b.config.lattice_kind()?;
                        let series: Vec<f64> = b
                            .configs
                            .iter()
                            .map(|c| LocalObservable::Current(*k).profile(kind, c).map(|v| stats::mean(&v)))
                            .collect::<Result<_>>()?;
                        let est = stats::Estimate {
                            value: stats::mean(&series),
                            se: (stats::variance(&series) / stats::effective_sample_size(&series)).sqrt(),
                        };
                        pass &= self.check(
                            &format!("current J^[{k}] mean within 3 SE of Monte Carlo"),
                            est.within(cm.integral_form, 3.0),
                            format!("{:.8e} vs {:.8e} (SE {:.3e})", cm.integral_form, est.value, est.se),
                        );
                        Some(est)
                    }
                    None => None,
                };
                self.write("currents.json", &serde_json::json!({"n": k, "operator": cm, "empirical": empirical, "pass": pass}))?;
            }
        }
        Ok(())
    }
}

/// Runs `spec` and writes its artifacts under `out_root/<name>/`.
pub fn run(spec: &ExperimentSpec, out_root: &Path) -> RunOutcome {
    let dir = out_root.join(&spec.name);
    let fail = |code: i32, msg: String, dir: PathBuf| RunOutcome {
        dir,
        checks: vec![],
        exit_code: code,
        log: vec![format!("error: {msg}")],
    };
    if let Err(e) = spec.validate() {
        let msg = match &e {
            Error::Config(m) => m.clone(),
            other => other.to_string(),
        };
        return fail(2, msg, dir);
    }
    if let Err(e) = fs::create_dir_all(&dir) {
        return fail(2, format!("cannot create {}: {e}", dir.display()), dir);
    }
    let mut r = Runner { spec, dir: dir.clone(), log: vec![], checks: vec![], batch: None, quantities: None };
    let mut code = 0;
    match r.write("spec.json", spec) {
        Ok(()) => {
            // Producers run before consumers regardless of list order.
            let order = ["sample", "transfer", "verify-clt", "susceptibility", "currents", "seeds-check", "decay", "berry-esseen"];
            for label in order {
                for t in spec.tasks.iter().filter(|t| t.label() == label) {
                    r.note(format!("task {label}"));
                    if let Err(e) = r.task(t) {
                        r.note(format!("error in task {label}: {e}"));
                        code = if is_config_error(&e) { 2 } else { 1 };
                        break;
                    }
                }
                if code != 0 {
                    break;
                }
            }
        }
        Err(e) => {
            r.note(format!("error: {e}"));
            code = 2;
        }
    }
    if code == 0 && r.checks.iter().any(|c| !c.pass) {
        code = 1;
    }
    r.note(format!("exit {code}"));
    let mut text = r.log.join("\n");
    text.push('\n');
    let _ = fs::write(dir.join("log.txt"), text);
    RunOutcome { dir, checks: r.checks, exit_code: code, log: r.log }
}

/// Loads a spec from a path, or a preset by name when no such file exists.
pub fn resolve_spec(arg: &str) -> Result<ExperimentSpec> {
    let path = Path::new(arg);
    if path.exists() {
        return ExperimentSpec::load(path);
    }
    preset(arg).ok_or_else(|| Error::Config(format!("'{arg}' is neither a spec file nor a preset")))
}

/// JSON description of the seed of `Tr P(L)` for `model` at size `n`.
pub fn seed_report(model: &str, potential: &str, n: usize) -> Result<serde_json::Value> {
    let kind = ModelKind::parse(model)?;
    let p = Polynomial::parse(potential)?;
    let seed = extract_seed(kind, &p, n)?;
    Ok(serde_json::json!({
        "model": kind.name(),
        "potential": p.to_expr(),
        "N": n,
        "k": seed.k,
        "blocks": seed.m_blocks,
        "ell": seed.ell,
        "lower_bound": seed.lower_bound,
        "seed": seed.seed_json(),
        "weed": poly_json(kind, &seed.weed),
    }))
}

/// Thread count from `GGE_SPECTRA_THREADS`, else the flag, else all logical cores.
pub fn thread_count(flag: Option<usize>) -> Result<Option<usize>> {
    match std::env::var("GGE_SPECTRA_THREADS") {
        Ok(v) if !v.trim().is_empty() => {
            let n: usize = v.trim().parse().map_err(|_| Error::Config(format!("GGE_SPECTRA_THREADS='{v}' is not a count")))?;
            Ok(Some(n))
        }
        _ => Ok(flag),
    }
}
