//! The batch verification harness behind the `verify` binary.
//!
//! A run expands `(suite, seed index)` jobs, each with its own ChaCha8
//! stream derived from `(seed_base, suite name, index)`, so adding or
//! removing a suite never shifts another suite's randomness. Jobs may run
//! in parallel; records are reassembled in job order.

use crate::calculus::{
    counting_integral, is_q_adapted_process, meyer_transform, mobius_transform, multiple_qs_integral_apply,
    operator_single_integral, q_commutator_residual, q_meyer_roundtrip_residual, single_counting_integral,
    KernelProcess, PointIntegrand,
};
use crate::chainspace::{enumerate_tables, fubini_residual, Chain, PointSpace, Role, SpaceError};
use crate::fock::{weighted_operator_norm, FockVector, QField, WeightFunction};
use crate::ito::{
    product_closure, multiplication_table_kernel_residual, multiplication_table_symbolic_check, verify_q_adapted_ito,
    verify_strong_ito, verify_weak_ito, wiener_process, wiener_suite,
};
use crate::kernel::{
    block_shape, exponential_bound, kernel_product, projective_norm, relative_norm, star_adjoint, Block,
    IntegrandKernel, Kernel, WeightQuadruple,
};
use crate::repr::{epsilon, epsilon_adjoint_residual, epsilon_defect_residual, epsilon_homomorphism_residual, epsilon_unit_residual};
use crate::C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

pub const SUITES: [&str; 11] = [
    "fubini",
    "epsilon_adjoint",
    "epsilon_homomorphism",
    "meyer_mobius",
    "intertwining",
    "norms",
    "lemma2",
    "strong_ito",
    "weak_ito",
    "q_adapted_ito",
    "wiener",
];

/// Caps the worker count of a run.
pub const THREADS_ENV: &str = "VERIFY_THREADS";

/// Largest Fock dimension a config may request.
pub const MAX_FOCK_DIM: usize = 2048;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("invalid config field `{field}`: {reason}")]
    Config { field: String, reason: String },
    #[error("cannot read config {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("cannot write {path}: {source}")]
    Write { path: PathBuf, source: std::io::Error },
    #[error("thread pool: {0}")]
    Pool(String),
}

fn config_err(field: &str, reason: impl Into<String>) -> HarnessError {
    HarnessError::Config { field: field.into(), reason: reason.into() }
}

/// A uniform value or one value per point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PerPoint<T> {
    Uniform(T),
    List(Vec<T>),
}

impl<T: Clone> PerPoint<T> {
    fn expand(&self, n: usize, field: &str) -> Result<Vec<T>, HarnessError> {
        match self {
            PerPoint::Uniform(v) => Ok(vec![v.clone(); n]),
            PerPoint::List(v) if v.len() == n => Ok(v.clone()),
            PerPoint::List(v) => Err(config_err(field, format!("expected {n} values, got {}", v.len()))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Json,
    Csv,
    Table,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    #[serde(default = "default_rel")]
    pub relative: f64,
    /// Keyed by `suite` or `suite.check`; the longer key wins.
    #[serde(default)]
    pub overrides: BTreeMap<String, f64>,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances { relative: default_rel(), overrides: BTreeMap::new() }
    }
}

fn default_rel() -> f64 {
    1e-8
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HarnessConfig {
    #[serde(default = "d_n")]
    pub n_points: usize,
    #[serde(default = "d_horizon")]
    pub horizon: f64,
    /// Explicit increasing times; uniform on `(0, horizon]` when absent.
    #[serde(default)]
    pub times: Option<Vec<f64>>,
    /// Point weights; `horizon / n` when absent.
    #[serde(default)]
    pub weights: Option<PerPoint<f64>>,
    #[serde(default = "d_mult")]
    pub multiplicities: PerPoint<usize>,
    #[serde(default = "d_dh")]
    pub initial_dim: usize,
    #[serde(default = "d_seeds")]
    pub seed_count: usize,
    #[serde(default)]
    pub seed_base: u64,
    #[serde(default = "d_suites")]
    pub suites: Vec<String>,
    /// `identity`, `zero`, `projector(r)`, `scalar(c)` or `scalar(re, im)`, `random`.
    #[serde(default = "d_q")]
    pub q_field: String,
    #[serde(default = "d_density")]
    pub density: f64,
    #[serde(default = "d_mag")]
    pub magnitude: f64,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub format: Option<Format>,
}

fn d_n() -> usize {
    4
}
fn d_horizon() -> f64 {
    1.0
}
fn d_mult() -> PerPoint<usize> {
    PerPoint::Uniform(1)
}
fn d_dh() -> usize {
    2
}
fn d_seeds() -> usize {
    100
}
fn d_suites() -> Vec<String> {
    SUITES.iter().map(|s| s.to_string()).collect()
}
fn d_q() -> String {
    "identity".into()
}
fn d_density() -> f64 {
    0.3
}
fn d_mag() -> f64 {
    1.0
}

impl Default for HarnessConfig {
    fn default() -> Self {
        toml::from_str("").expect("defaults deserialize")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum QSpec {
    Identity,
    Zero,
    Projector(usize),
    Scalar(C64),
    Random,
}

impl QSpec {
    pub fn parse(s: &str) -> Result<QSpec, HarnessError> {
        let s = s.trim();
        let arg = |name: &str| -> Option<&str> { s.strip_prefix(name)?.strip_prefix('(')?.strip_suffix(')') };
        let bad = || config_err("q_field", format!("unrecognized field `{s}`"));
        match s {
            "identity" => return Ok(QSpec::Identity),
            "zero" => return Ok(QSpec::Zero),
            "random" => return Ok(QSpec::Random),
            _ => {}
        }
        if let Some(a) = arg("projector") {
            return a.trim().parse().map(QSpec::Projector).map_err(|_| bad());
        }
        if let Some(a) = arg("scalar") {
            let parts: Vec<&str> = a.split(',').map(str::trim).collect();
            let num = |p: &str| p.parse::<f64>().map_err(|_| bad());
            return match parts[..] {
                [re] => Ok(QSpec::Scalar(C64::new(num(re)?, 0.0))),
                [re, im] => Ok(QSpec::Scalar(C64::new(num(re)?, num(im)?))),
                _ => Err(bad()),
            };
        }
        Err(bad())
    }

    pub fn build(&self, space: &PointSpace, rng: &mut ChaCha8Rng) -> QField {
        match self {
            QSpec::Identity => QField::identity(space),
            QSpec::Zero => QField::zero(space),
            QSpec::Scalar(c) => QField::scalar(space, *c),
            QSpec::Projector(r) => random_projector(space, rng, *r),
            QSpec::Random => QField(
                (0..space.n())
                    .map(|x| {
                        let d = space.multiplicity(x);
                        random_block(rng, d, d, 1.0)
                    })
                    .collect(),
            ),
        }
    }

    fn is_projector(&self) -> bool {
        matches!(self, QSpec::Identity | QSpec::Zero | QSpec::Projector(_))
    }
}

impl HarnessConfig {
    pub fn from_toml(s: &str) -> Result<HarnessConfig, HarnessError> {
        toml::from_str(s).map_err(|e| {
            let field = e
                .span()
                .and_then(|sp| s.get(sp).map(|t| t.split('=').next().unwrap_or("").trim().to_string()))
                .filter(|f| !f.is_empty())
                .unwrap_or_else(|| "config".into());
            config_err(&field, e.message().to_string())
        })
    }

    pub fn load(path: &Path) -> Result<HarnessConfig, HarnessError> {
        let s = std::fs::read_to_string(path).map_err(|source| HarnessError::Read { path: path.into(), source })?;
        Self::from_toml(&s)
    }

    /// Checks every field and builds the point space.
    pub fn validate(&self) -> Result<PointSpace, HarnessError> {
        for s in &self.suites {
            if !SUITES.contains(&s.as_str()) {
                return Err(config_err("suites", format!("unknown suite `{s}`")));
            }
        }
        if self.seed_count == 0 {
            return Err(config_err("seed_count", "must be at least 1"));
        }
        if !(self.density > 0.0 && self.density <= 1.0) {
            return Err(config_err("density", "must lie in (0, 1]"));
        }
        if !(self.magnitude >= 0.0 && self.magnitude.is_finite()) {
            return Err(config_err("magnitude", "must be finite and nonnegative"));
        }
        if self.tolerances.relative.is_nan() || self.tolerances.relative < 0.0 {
            return Err(config_err("tolerances.relative", "must be nonnegative"));
        }
        for (k, v) in &self.tolerances.overrides {
            let suite = k.split('.').next().unwrap_or("");
            if !SUITES.contains(&suite) {
                return Err(config_err("tolerances.overrides", format!("unknown suite in `{k}`")));
            }
            if v.is_nan() || *v < 0.0 {
                return Err(config_err("tolerances.overrides", format!("`{k}` must be nonnegative")));
            }
        }
        QSpec::parse(&self.q_field)?;
        let n = self.n_points;
        if n > crate::chainspace::MAX_POINTS {
            return Err(config_err("n_points", format!("at most {} points", crate::chainspace::MAX_POINTS)));
        }
        if n > 0 && !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(config_err("horizon", "must be positive and finite"));
        }
        let step = if n == 0 { 0.0 } else { self.horizon / n as f64 };
        let times = match &self.times {
            Some(t) if t.len() != n => {
                return Err(config_err("times", format!("expected {n} values, got {}", t.len())));
            }
            Some(t) => t.clone(),
            None => (1..=n).map(|k| k as f64 * step).collect(),
        };
        let weights = match &self.weights {
            Some(w) => w.expand(n, "weights")?,
            None => vec![step; n],
        };
        let mults = self.multiplicities.expand(n, "multiplicities")?;
        let space = PointSpace::new(&times, &weights, &mults, self.initial_dim).map_err(|e| {
            let field = match e {
                SpaceError::BadTime(_) => "times",
                SpaceError::BadWeight(_) => "weights",
                SpaceError::BadMultiplicity(_) => "multiplicities",
                SpaceError::BadInitialDim => "initial_dim",
                SpaceError::TooManyPoints(_) | SpaceError::LengthMismatch => "n_points",
            };
            config_err(field, e.to_string())
        })?;
        if space.fock_dim() > MAX_FOCK_DIM {
            return Err(config_err(
                "n_points",
                format!("Fock dimension {} exceeds {MAX_FOCK_DIM}", space.fock_dim()),
            ));
        }
        Ok(space)
    }

    fn tolerance(&self, suite: &str, check: &str, default: f64) -> f64 {
        let o = &self.tolerances.overrides;
        o.get(&format!("{suite}.{check}")).or_else(|| o.get(suite)).copied().unwrap_or(default)
    }
}

/// One checked quantity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub suite: String,
    pub check: String,
    pub seed_index: usize,
    /// Derived stream seed; with the config this reproduces the case.
    pub seed: u64,
    pub residual: f64,
    pub tolerance: f64,
    /// Size of the compared quantity when the relative rule applies.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scale: Option<f64>,
    /// Margin of an inequality, `bound - value`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub slack: Option<f64>,
    /// Reason when the precondition of the suite does not hold.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub skipped: Option<String>,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteSummary {
    pub records: usize,
    pub failed: usize,
    pub skipped: usize,
    pub worst_residual: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: HarnessConfig,
    pub records: Vec<Record>,
    pub suites: BTreeMap<String, SuiteSummary>,
    pub aggregate_pass: bool,
    pub runtime_seconds: f64,
}

impl RunReport {
    /// The report with runtime fields zeroed, for comparisons.
    pub fn without_runtime(&self) -> RunReport {
        RunReport { runtime_seconds: 0.0, ..self.clone() }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x100_0000_01b3))
}

/// Stream seed of job `(suite, index)`.
pub fn derive_seed(base: u64, suite: &str, index: usize) -> u64 {
    splitmix64(splitmix64(base ^ fnv1a(suite)).wrapping_add(index as u64))
}

/// Uniform on the closed disc of radius `magnitude`.
pub fn random_complex(rng: &mut ChaCha8Rng, magnitude: f64) -> C64 {
    let r = magnitude * rng.gen::<f64>().sqrt();
    C64::from_polar(r, rng.gen_range(0.0..std::f64::consts::TAU))
}

pub fn random_block(rng: &mut ChaCha8Rng, r: usize, c: usize, magnitude: f64) -> Block {
    Block::from_fn(r, c, |_, _| random_complex(rng, magnitude))
}

/// Each table is populated with probability `density`.
pub fn random_kernel_from(space: &PointSpace, rng: &mut ChaCha8Rng, density: f64, magnitude: f64) -> Kernel {
    let mut k = Kernel::new();
    if magnitude == 0.0 {
        return k;
    }
    for t in enumerate_tables(space) {
        if rng.gen::<f64>() < density {
            let (r, c) = block_shape(space, &t);
            k.insert(space, t, random_block(rng, r, c, magnitude)).expect("shape from block_shape");
        }
    }
    k
}

pub fn random_kernel(space: &PointSpace, seed: u64, density: f64, magnitude: f64) -> Kernel {
    random_kernel_from(space, &mut ChaCha8Rng::seed_from_u64(seed), density, magnitude)
}

/// Each split `(upsilon, kappa)` of each table is populated with
/// probability `density`.
pub fn random_integrand(space: &PointSpace, rng: &mut ChaCha8Rng, density: f64, magnitude: f64) -> IntegrandKernel {
    let mut m = IntegrandKernel::new();
    if magnitude == 0.0 {
        return m;
    }
    for t in enumerate_tables(space) {
        for u in t.subtables(space.full_chain()) {
            if rng.gen::<f64>() < density {
                let (r, c) = block_shape(space, &t);
                m.insert(space, u, t.difference(&u), random_block(rng, r, c, magnitude))
                    .expect("shape from block_shape");
            }
        }
    }
    m
}

/// Orthogonal projector of rank `min(rank, d(x))` onto a random frame.
pub fn random_projector(space: &PointSpace, rng: &mut ChaCha8Rng, rank: usize) -> QField {
    QField(
        (0..space.n())
            .map(|x| {
                let d = space.multiplicity(x);
                let q = random_block(rng, d, d, 1.0).qr().q();
                let u = q.columns(0, rank.min(d)).into_owned();
                &u * u.adjoint()
            })
            .collect(),
    )
}

pub fn random_weights(space: &PointSpace, rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> WeightFunction {
    WeightFunction((0..space.n()).map(|_| rng.gen_range(lo..hi)).collect())
}

pub fn random_quadruple(space: &PointSpace, rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> WeightQuadruple {
    let mut v = || (0..space.n()).map(|_| rng.gen_range(lo..hi)).collect::<Vec<f64>>();
    WeightQuadruple::new(v(), v(), v(), v())
}

pub fn random_vector(space: &PointSpace, rng: &mut ChaCha8Rng) -> FockVector {
    FockVector::from_fn(space.fock_dim(), |_, _| random_complex(rng, 1.0))
}

/// `N(upsilon, kappa) = B - B`-type null integrand: for each populated split
/// `(u, k)` with latest point `y` in `u`, the mass is cancelled at
/// `(u - rest, k + rest)` for the points `rest` of `u` before `y`.
pub fn random_null_integrand(space: &PointSpace, rng: &mut ChaCha8Rng, density: f64, magnitude: f64) -> IntegrandKernel {
    let mut n = IntegrandKernel::new();
    for t in enumerate_tables(space) {
        let supp = t.support();
        let Some(y) = supp.members().last() else { continue };
        let earlier = supp.without(y);
        if earlier.is_empty() || rng.gen::<f64>() >= density {
            continue;
        }
        let (r, c) = block_shape(space, &t);
        let b = random_block(rng, r, c, magnitude);
        n.accumulate(t, crate::chainspace::Table::EMPTY, b.clone());
        n.accumulate(t.restrict(Chain::singleton(y)), t.restrict(earlier), -b);
    }
    n
}

/// Shared per-run context.
struct Ctx<'a> {
    cfg: &'a HarnessConfig,
    space: &'a PointSpace,
    q: QSpec,
}

/// Records of one job before the pass flags are set.
struct Out {
    suite: &'static str,
    index: usize,
    seed: u64,
    recs: Vec<Record>,
}

impl Out {
    fn push(&mut self, ctx: &Ctx, check: &str, residual: f64, default_tol: f64, scale: Option<f64>, slack: Option<f64>) {
        let tol = ctx.cfg.tolerance(self.suite, check, default_tol);
        let rel = ctx.cfg.tolerances.relative;
        let pass = residual <= tol || scale.is_some_and(|s| s > 1.0 && residual / s <= rel);
        self.recs.push(Record {
            suite: self.suite.into(),
            check: check.into(),
            seed_index: self.index,
            seed: self.seed,
            residual,
            tolerance: tol,
            scale,
            slack,
            skipped: None,
            pass,
        });
    }

    fn skip(&mut self, check: &str, reason: &str) {
        self.recs.push(Record {
            suite: self.suite.into(),
            check: check.into(),
            seed_index: self.index,
            seed: self.seed,
            residual: 0.0,
            tolerance: 0.0,
            scale: None,
            slack: None,
            skipped: Some(reason.into()),
            pass: true,
        });
    }
}

fn ineq_residual(lhs: f64, rhs: f64) -> (f64, f64) {
    ((lhs - rhs).max(0.0) / rhs.abs().max(1.0), rhs - lhs)
}

fn suite_fubini(ctx: &Ctx, rng: &mut ChaCha8Rng, out: &mut Out) {
    let s = ctx.space;
    let mut f = BTreeMap::new();
    for &u in s.chains() {
        for &k in s.chains() {
            if u.is_disjoint(k) {
                f.insert((u, k), random_complex(rng, ctx.cfg.magnitude));
            }
        }
    }
    let r = fubini_residual(s, |u, k| f[&(u, k)]);
    out.push(ctx, "fubini", r, 1e-12, None, None);
}

fn suite_epsilon_adjoint(ctx: &Ctx, rng: &mut ChaCha8Rng, out: &mut Out) {
    let t = random_kernel_from(ctx.space, rng, ctx.cfg.density, ctx.cfg.magnitude);
    out.push(ctx, "adjoint", epsilon_adjoint_residual(ctx.space, &t), 1e-12, None, None);
    out.push(ctx, "unit", epsilon_unit_residual(ctx.space), 0.0, None, None);
}

fn suite_epsilon_homomorphism(ctx: &Ctx, rng: &mut ChaCha8Rng, out: &mut Out) {
    let s = ctx.space;
    let x = random_kernel_from(s, rng, ctx.cfg.density, ctx.cfg.magnitude);
    let y = random_kernel_from(s, rng, ctx.cfg.density, ctx.cfg.magnitude);
    let xs = star_adjoint(&x);
    out.push(ctx, "product", epsilon_homomorphism_residual(s, &x, &y), 1e-10, None, None);
    out.push(ctx, "star_pair", epsilon_homomorphism_residual(s, &x, &xs), 1e-10, None, None);
    out.push(ctx, "defect_closure", epsilon_defect_residual(s, &x, &y), 1e-10, None, None);
    out.push(ctx, "defect_closure_star_pair", epsilon_defect_residual(s, &x, &xs), 1e-10, None, None);
}

fn suite_meyer_mobius(ctx: &Ctx, rng: &mut ChaCha8Rng, out: &mut Out) {
    let s = ctx.space;
    let t = random_kernel_from(s, rng, ctx.cfg.density, ctx.cfg.magnitude);
    let m = random_kernel_from(s, rng, ctx.cfg.density, ctx.cfg.magnitude);
    let cases = [
        ("zero", QSpec::Zero),
        ("identity", QSpec::Identity),
        ("projector", QSpec::Projector(1)),
        ("scalar2", QSpec::Scalar(C64::new(2.0, 0.0))),
        ("random", QSpec::Random),
    ];
    for (name, spec) in cases {
        let q = spec.build(s, rng);
        let a = mobius_transform(s, &meyer_transform(s, &t, &q), &q).distance(&t);
        let b = meyer_transform(s, &mobius_transform(s, &t, &q), &q).distance(&t);
        out.push(ctx, &format!("roundtrip_{name}"), a.max(b), 1e-12, None, None);
        let p = KernelProcess::Integral(IntegrandKernel::ampliation(s, &m, &q));
        out.push(ctx, &format!("process_{name}"), q_meyer_roundtrip_residual(s, &p, &q), 1e-12, None, None);
    }
}

fn suite_intertwining(ctx: &Ctx, rng: &mut ChaCha8Rng, out: &mut Out) {
    let s = ctx.space;
    let m = random_integrand(s, rng, ctx.cfg.density, ctx.cfg.magnitude);
    let chi = random_vector(s, rng);
    let mut d = PointIntegrand::new();
    for x in 0..s.n() {
        for r in crate::chainspace::ROLES {
            d.set(x, r, &random_kernel_from(s, rng, ctx.cfg.density, ctx.cfg.magnitude));
        }
    }
    let (mut multiple, mut single, mut collapse) = (0.0f64, 0.0f64, 0.0f64);
    let atomic = d.to_integrand();
    for &t in &s.cut_times() {
        let a = epsilon(s, &counting_integral(&m, s, t)) * &chi;
        let b = multiple_qs_integral_apply(s, &m, t, &chi);
        multiple = multiple.max((a - b).norm());
        let e = epsilon(s, &single_counting_integral(s, &d, t)) - operator_single_integral(s, &d, t);
        single = single.max(e.norm());
        collapse = collapse.max(counting_integral(&atomic, s, t).distance(&single_counting_integral(s, &d, t)));
    }
    out.push(ctx, "multiple", multiple, 1e-10, None, None);
    out.push(ctx, "single", single, 1e-10, None, None);
    out.push(ctx, "single_point_collapse", collapse, 1e-12, None, None);
    // eps(T) as the multiple integral of T (x) P_vacuum
    let t = random_kernel_from(s, rng, ctx.cfg.density, ctx.cfg.magnitude);
    let mut vac = IntegrandKernel::new();
    for (k, b) in t.iter() {
        vac.accumulate(*k, crate::chainspace::Table::EMPTY, b.clone());
    }
    let r = (epsilon(s, &t) * &chi - multiple_qs_integral_apply(s, &vac, f64::INFINITY, &chi)).norm();
    out.push(ctx, "vacuum_adapted", r, 1e-10, None, None);
}

fn suite_norms(ctx: &Ctx, rng: &mut ChaCha8Rng, out: &mut Out) {
    let s = ctx.space;
    let t = random_kernel_from(s, rng, ctx.cfg.density, ctx.cfg.magnitude);
    let q = random_weights(s, rng, 0.5, 2.0);
    let r = random_weights(s, rng, 0.5, 2.0);
    let p = q.add(&r.recip());
    let lhs = weighted_operator_norm(s, &epsilon(s, &t), &p).expect("valid weights");
    let rhs = projective_norm(s, &t, &q, &r);
    let (res, slack) = ineq_residual(lhs, rhs);
    out.push(ctx, "operator_vs_projective", res, 1e-12, None, Some(slack));

    // alpha_n <= q keeps the exponential bound applicable
    let mut alpha = random_quadruple(s, rng, 0.5, 1.5);
    for x in 0..s.n() {
        alpha.0[Role::Number.index()][x] = alpha.0[Role::Number.index()][x].min(q.0[x]);
    }
    let bound = exponential_bound(s, relative_norm(&t, &alpha), &alpha, &r, &q).expect("alpha_n <= q");
    let (res, slack) = ineq_residual(rhs, bound);
    out.push(ctx, "projective_vs_exponential", res, 1e-12, None, Some(slack));

    let y = random_kernel_from(s, rng, ctx.cfg.density, ctx.cfg.magnitude);
    let gamma = random_quadruple(s, rng, 0.5, 1.5);
    let lhs = relative_norm(&kernel_product(&t, &y), &alpha.product(&gamma));
    let rhs = relative_norm(&t, &alpha) * relative_norm(&y, &gamma);
    let (res, slack) = ineq_residual(lhs, rhs);
    out.push(ctx, "product", res, 1e-12, None, Some(slack));
}

fn suite_counting_bound(ctx: &Ctx, rng: &mut ChaCha8Rng, out: &mut Out) {
    let s = ctx.space;
    let m = random_integrand(s, rng, ctx.cfg.density, ctx.cfg.magnitude);
    let beta = random_quadruple(s, rng, 0.5, 1.5);
    let gamma = random_quadruple(s, rng, 0.5, 1.5);
    // smallest c satisfying the hypothesis
    let c = m
        .iter()
        .map(|((u, k), b)| crate::fock::spectral_norm(b) / (beta.on_table(u) * gamma.on_table(k)))
        .fold(0.0, f64::max);
    let cuts = s.cut_times();
    let t = cuts[rng.gen_range(0..cuts.len())];
    let rep = crate::calculus::counting_norm_bound(s, &m, &beta, &gamma, c, t);
    let (res, slack) = ineq_residual(rep.lhs, rep.rhs);
    let res = if rep.hypothesis_holds { res } else { f64::INFINITY };
    out.push(ctx, "counting_bound", res, 1e-12, None, Some(slack));
}

fn suite_strong_ito(ctx: &Ctx, rng: &mut ChaCha8Rng, out: &mut Out) {
    let s = ctx.space;
    let p = KernelProcess::Integral(random_integrand(s, rng, ctx.cfg.density, ctx.cfg.magnitude));
    let (mut lit, mut scale, mut forms, mut kid, mut clo) = (0.0f64, 0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for cut in 0..KernelProcess::n_cuts(s) {
        let r = verify_strong_ito(s, &p, cut);
        if r.literal_residual >= lit {
            lit = r.literal_residual;
            scale = r.lhs_norm;
        }
        forms = forms.max(r.rhs_forms_residual);
        kid = kid.max(r.kernel_identity_residual);
        clo = clo.max(r.defect_closure_residual);
    }
    out.push(ctx, "literal", lit, 1e-9, Some(scale), None);
    out.push(ctx, "rhs_forms", forms, 1e-10, None, None);
    out.push(ctx, "kernel_identity", kid, 1e-9, None, None);
    out.push(ctx, "defect_closure", clo, 1e-9, None, None);
}

fn suite_weak_ito(ctx: &Ctx, rng: &mut ChaCha8Rng, out: &mut Out) {
    let s = ctx.space;
    let p = KernelProcess::Integral(random_integrand(s, rng, ctx.cfg.density, ctx.cfg.magnitude));
    let chi = random_vector(s, rng);
    let (mut lit, mut scale, mut cor, mut kr) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for cut in 0..KernelProcess::n_cuts(s) {
        let r = verify_weak_ito(s, &p, cut, &chi);
        if r.literal_residual >= lit {
            lit = r.literal_residual;
            scale = r.lhs.abs();
        }
        cor = cor.max(r.corrected_residual);
        kr = kr.max(r.kernel_route_residual);
    }
    out.push(ctx, "literal", lit, 1e-9, Some(scale), None);
    out.push(ctx, "corrected", cor, 1e-9, None, None);
    out.push(ctx, "kernel_route", kr, 1e-9, None, None);
    let sym = if multiplication_table_symbolic_check() { 0.0 } else { 1.0 };
    out.push(ctx, "table_symbolic", sym, 0.0, None, None);
    let mut pk: f64 = 0.0;
    for x in 0..s.n() {
        let (g, _, d) = crate::calculus::germ(s, &p, x);
        pk = pk.max(multiplication_table_kernel_residual(&g, &d));
    }
    out.push(ctx, "table_kernel", pk, 1e-10, None, None);
}

fn suite_q_adapted_ito(ctx: &Ctx, rng: &mut ChaCha8Rng, out: &mut Out) {
    let s = ctx.space;
    let m = random_kernel_from(s, rng, ctx.cfg.density, ctx.cfg.magnitude);
    let chi = random_vector(s, rng);
    let mut cases = vec![("identity".to_string(), QSpec::Identity), ("projector".to_string(), QSpec::Projector(1))];
    if ctx.q != QSpec::Identity && ctx.q != QSpec::Projector(1) {
        cases.push(("config".to_string(), ctx.q.clone()));
    }
    for (name, spec) in cases {
        let q = spec.build(s, rng);
        let p = KernelProcess::Integral(IntegrandKernel::ampliation(s, &m, &q));
        let a = is_q_adapted_process(s, &p, &q, 1e-10);
        out.push(ctx, &format!("{name}.adapted"), if a.adapted { 0.0 } else { a.residual.max(1.0) }, 0.0, None, None);
        let (mut lit, mut scale, mut kid, mut clo, mut st, mut closure) = (0.0f64, 0.0f64, 0.0f64, 0.0f64, 0.0f64, 0.0f64);
        for cut in 0..KernelProcess::n_cuts(s) {
            let r = verify_q_adapted_ito(s, &p, &q, cut);
            if r.literal_residual >= lit {
                lit = r.literal_residual;
                scale = r.lhs_norm;
            }
            kid = kid.max(r.kernel_identity_residual);
            clo = clo.max(r.defect_closure_residual);
            st = st.max(r.germ_structure_residual);
            if spec.is_projector() {
                closure = closure.max(product_closure(s, &p, &q, cut).residual);
            }
        }
        out.push(ctx, &format!("{name}.literal"), lit, 1e-9, Some(scale), None);
        out.push(ctx, &format!("{name}.kernel_identity"), kid, 1e-9, None, None);
        out.push(ctx, &format!("{name}.defect_closure"), clo, 1e-9, None, None);
        out.push(ctx, &format!("{name}.germ_structure"), st, 1e-10, None, None);
        if spec.is_projector() {
            out.push(ctx, &format!("{name}.product_closure"), closure, 1e-10, None, None);
        }
        let qc = (0..s.n()).map(|x| q_commutator_residual(s, &p, &q, x, &chi)).fold(0.0, f64::max);
        out.push(ctx, &format!("{name}.q_commutator"), qc, 1e-10, None, None);
    }
    // Q = 2: the square of an adapted process is adapted for Q^2, not Q
    let two = QField::scalar(s, C64::new(2.0, 0.0));
    let p = KernelProcess::Integral(IntegrandKernel::ampliation(s, &m, &two));
    let found = (0..KernelProcess::n_cuts(s)).any(|c| product_closure(s, &p, &two, c).witness.is_some());
    if m.is_empty() || s.n() == 0 {
        out.skip("scalar2.closure_witness", "no nonzero kernel to square");
    } else {
        out.push(ctx, "scalar2.closure_witness", if found { 0.0 } else { 1.0 }, 0.0, None, None);
    }
}

fn suite_wiener(ctx: &Ctx, rng: &mut ChaCha8Rng, out: &mut Out) {
    let s = ctx.space;
    if !s.is_scalar() {
        out.skip("all", "needs multiplicity 1 at every point");
        return;
    }
    let dh = s.initial_dim();
    let mut g = BTreeMap::new();
    for &u in s.chains() {
        for &k in s.chains() {
            if u.is_disjoint(k) && rng.gen::<f64>() < ctx.cfg.density.max(0.5) {
                g.insert((u, k), random_block(rng, dh, dh, ctx.cfg.magnitude));
            }
        }
    }
    let chi = random_vector(s, rng);
    let last = KernelProcess::n_cuts(s) - 1;
    for (name, adapted) in [("nonadapted", false), ("adapted", true)] {
        let p = wiener_process(s, |u, k| g.get(&(u, k)).cloned(), adapted).expect("scalar space");
        let r = wiener_suite(s, &p, last, &chi).expect("scalar space");
        if !adapted {
            out.push(ctx, "commutator", r.commutator, 1e-12, None, None);
        }
        out.push(ctx, &format!("{name}.decomposition"), r.decomposition_residual, 1e-9, None, None);
        out.push(ctx, &format!("{name}.structure"), r.structure_residual, 1e-12, None, None);
        if adapted {
            out.push(ctx, "adapted.dt_term", r.dt_term.max(r.dt_norm), 1e-10, None, None);
        }
    }
}

fn run_job(ctx: &Ctx, suite: &'static str, index: usize) -> Vec<Record> {
    let seed = derive_seed(ctx.cfg.seed_base, suite, index);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Out { suite, index, seed, recs: Vec::new() };
    match suite {
        "fubini" => suite_fubini(ctx, &mut rng, &mut out),
        "epsilon_adjoint" => suite_epsilon_adjoint(ctx, &mut rng, &mut out),
        "epsilon_homomorphism" => suite_epsilon_homomorphism(ctx, &mut rng, &mut out),
        "meyer_mobius" => suite_meyer_mobius(ctx, &mut rng, &mut out),
        "intertwining" => suite_intertwining(ctx, &mut rng, &mut out),
        "norms" => suite_norms(ctx, &mut rng, &mut out),
        "lemma2" => suite_counting_bound(ctx, &mut rng, &mut out),
        "strong_ito" => suite_strong_ito(ctx, &mut rng, &mut out),
        "weak_ito" => suite_weak_ito(ctx, &mut rng, &mut out),
        "q_adapted_ito" => suite_q_adapted_ito(ctx, &mut rng, &mut out),
        "wiener" => suite_wiener(ctx, &mut rng, &mut out),
        _ => unreachable!("suite names are validated"),
    }
    out.recs
}

fn thread_cap() -> Option<usize> {
    std::env::var(THREADS_ENV).ok()?.trim().parse().ok().filter(|&n: &usize| n > 0)
}

/// Runs every configured suite; the config is validated first, so an error
/// means nothing ran.
pub fn run(cfg: &HarnessConfig) -> Result<RunReport, HarnessError> {
    let space = cfg.validate()?;
    let q = QSpec::parse(&cfg.q_field)?;
    let start = Instant::now();
    let ctx = Ctx { cfg, space: &space, q };
    let mut suites: Vec<&'static str> = Vec::new();
    for name in SUITES {
        if cfg.suites.iter().any(|s| s == name) {
            suites.push(name);
        }
    }
    let jobs: Vec<(&'static str, usize)> =
        suites.iter().flat_map(|&s| (0..cfg.seed_count).map(move |i| (s, i))).collect();
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = thread_cap() {
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| HarnessError::Pool(e.to_string()))?;
    let per_job: Vec<Vec<Record>> = pool.install(|| jobs.par_iter().map(|&(s, i)| run_job(&ctx, s, i)).collect());
    let records: Vec<Record> = per_job.into_iter().flatten().collect();
    let mut summary = BTreeMap::new();
    for s in &suites {
        let mine: Vec<&Record> = records.iter().filter(|r| r.suite == *s).collect();
        let failed = mine.iter().filter(|r| !r.pass).count();
        summary.insert(
            s.to_string(),
            SuiteSummary {
                records: mine.len(),
                failed,
                skipped: mine.iter().filter(|r| r.skipped.is_some()).count(),
                worst_residual: mine.iter().map(|r| r.residual).fold(0.0, f64::max),
                pass: failed == 0,
            },
        );
    }
    let aggregate_pass = records.iter().all(|r| r.pass);
    Ok(RunReport {
        config: cfg.clone(),
        records,
        suites: summary,
        aggregate_pass,
        runtime_seconds: start.elapsed().as_secs_f64(),
    })
}

pub fn render(report: &RunReport, format: Format) -> String {
    match format {
        Format::Json => serde_json::to_string_pretty(report).expect("report serializes") + "\n",
        Format::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(["suite", "seed", "residual", "tolerance", "pass"]).expect("in-memory write");
            for r in &report.records {
                w.write_record([
                    format!("{}.{}", r.suite, r.check),
                    r.seed.to_string(),
                    format!("{:e}", r.residual),
                    format!("{:e}", r.tolerance),
                    r.pass.to_string(),
                ])
                .expect("in-memory write");
            }
            String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
        }
        Format::Table => {
            let mut s = String::new();
            s.push_str(&format!("{:<48} {:>6} {:>12} {:>10}  result\n", "check", "seed#", "residual", "tol"));
            for r in &report.records {
                let verdict = match (&r.skipped, r.pass) {
                    (Some(_), _) => "SKIP",
                    (None, true) => "PASS",
                    (None, false) => "FAIL",
                };
                s.push_str(&format!(
                    "{:<48} {:>6} {:>12.3e} {:>10.1e}  {verdict}\n",
                    format!("{}.{}", r.suite, r.check),
                    r.seed_index,
                    r.residual,
                    r.tolerance
                ));
            }
            s.push('\n');
            for (name, su) in &report.suites {
                s.push_str(&format!(
                    "{name:<24} {} records, {} failed, {} skipped, worst {:.3e}\n",
                    su.records, su.failed, su.skipped, su.worst_residual
                ));
            }
            s.push_str(&format!(
                "aggregate: {} ({:.2} s)\n",
                if report.aggregate_pass { "PASS" } else { "FAIL" },
                report.runtime_seconds
            ));
            s
        }
    }
}

/// Writes the rendered report to `path`, or returns it for stdout when
/// `path` is `None`.
pub fn emit(report: &RunReport, format: Format, path: Option<&Path>) -> Result<Option<String>, HarnessError> {
    let text = render(report, format);
    match path {
        Some(p) => {
            std::fs::write(p, text).map_err(|source| HarnessError::Write { path: p.into(), source })?;
            Ok(None)
        }
        None => Ok(Some(text)),
    }
}
