//! The constrained nested-composition problem
//!
//! ```text
//! min_x,y  F(x) + Σ_j r_j(y_j)   s.t.  A x + Σ_j B_j y_j = c
//! F(x) = E_j f2_j( E_i f1_i(x) )
//! ```
//!
//! Component maps are reached through [`CompositionOracle`]; batch means,
//! exact chain-rule gradients, and the smoothness constants the calibration
//! consumes live here too.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generators::GeneratorSpec;
use crate::linalg::{fro2, gram_max_eigenvalue, spectral_bounds, spectral_norm, Matrix, Vector};
use crate::prox::Regularizer;

/// Index population of one composition level.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Population {
    /// Components `0..n`, sampled uniformly.
    Finite(usize),
    /// Unbounded stream; any `u64` names a component.
    Stream,
}

/// Finite-sum (exact means available) or online (sampled only).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Hash)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    FiniteSum,
    Online,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::FiniteSum => "finite-sum",
            Mode::Online => "online",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "finite-sum" => Ok(Mode::FiniteSum),
            "online" => Ok(Mode::Online),
            _ => Err(Error::ConfigError(format!("unknown mode `{s}`"))),
        }
    }
}

/// A multiset of component indices, or a whole finite population.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Batch {
    Full(usize),
    Sample(Vec<u64>),
}

impl Batch {
    pub fn len(&self) -> usize {
        match self {
            Batch::Full(n) => *n,
            Batch::Sample(idx) => idx.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn indices(&self) -> Box<dyn Iterator<Item = u64> + '_> {
        match self {
            Batch::Full(n) => Box::new(0..*n as u64),
            Batch::Sample(idx) => Box::new(idx.iter().copied()),
        }
    }

    fn check(&self, pop: Population) -> Result<()> {
        if self.is_empty() {
            return Err(Error::EmptyBatch);
        }
        match (self, pop) {
            (Batch::Full(n), Population::Finite(m)) if *n == m => Ok(()),
            (Batch::Full(_), _) => Err(Error::UnsupportedMode),
            (Batch::Sample(idx), Population::Finite(n)) => {
                match idx.iter().find(|&&i| i >= n as u64) {
                    Some(&bad) => Err(Error::IndexError {
                        index: bad,
                        population: n,
                    }),
                    None => Ok(()),
                }
            }
            (Batch::Sample(_), Population::Stream) => Ok(()),
        }
    }
}

/// Indexed access to the component maps `f1_i : R^d → R^l` and
/// `f2_j : R^l → R`.
///
/// Implementations must be deterministic in `(index, input)` and must not
/// hold RNG state; sampling is the caller's job. The batch-mean methods have
/// per-component default implementations that generators may override.
pub trait CompositionOracle: Send + Sync + fmt::Debug {
    fn dim_x(&self) -> usize;
    fn dim_inner(&self) -> usize;
    fn inner_population(&self) -> Population;
    fn outer_population(&self) -> Population;

    fn inner_value(&self, i: u64, x: &Vector) -> Vector;
    fn inner_jacobian(&self, i: u64, x: &Vector) -> Matrix;
    fn outer_value(&self, j: u64, w: &Vector) -> f64;
    fn outer_gradient(&self, j: u64, w: &Vector) -> Vector;

    fn mean_inner_value(&self, batch: &Batch, x: &Vector) -> Vector {
        let mut out = Vector::zeros(self.dim_inner());
        for i in batch.indices() {
            out += self.inner_value(i, x);
        }
        out / batch.len() as f64
    }

    fn mean_inner_jacobian(&self, batch: &Batch, x: &Vector) -> Matrix {
        let mut out = Matrix::zeros(self.dim_inner(), self.dim_x());
        for i in batch.indices() {
            out += self.inner_jacobian(i, x);
        }
        out / batch.len() as f64
    }

    fn mean_outer_gradient(&self, batch: &Batch, w: &Vector) -> Vector {
        let mut out = Vector::zeros(self.dim_inner());
        for j in batch.indices() {
            out += self.outer_gradient(j, w);
        }
        out / batch.len() as f64
    }

    fn mean_outer_value(&self, batch: &Batch, w: &Vector) -> f64 {
        batch.indices().map(|j| self.outer_value(j, w)).sum::<f64>() / batch.len() as f64
    }

    /// Population means of a streamed oracle, when known in closed form.
    fn expected_inner_value(&self, _x: &Vector) -> Option<Vector> {
        None
    }
    fn expected_inner_jacobian(&self, _x: &Vector) -> Option<Matrix> {
        None
    }
    fn expected_outer_gradient(&self, _w: &Vector) -> Option<Vector> {
        None
    }
    fn expected_outer_value(&self, _w: &Vector) -> Option<f64> {
        None
    }

    fn mode(&self) -> Mode {
        match (self.inner_population(), self.outer_population()) {
            (Population::Finite(_), Population::Finite(_)) => Mode::FiniteSum,
            _ => Mode::Online,
        }
    }

    /// Whether exact means are available, by summation or in closed form.
    fn has_exact_means(&self) -> bool {
        let x = Vector::zeros(self.dim_x());
        let w = Vector::zeros(self.dim_inner());
        let inner = matches!(self.inner_population(), Population::Finite(_))
            || (self.expected_inner_value(&x).is_some()
                && self.expected_inner_jacobian(&x).is_some());
        let outer = matches!(self.outer_population(), Population::Finite(_))
            || (self.expected_outer_gradient(&w).is_some()
                && self.expected_outer_value(&w).is_some());
        inner && outer
    }
}

/// Mean of `f1_i(x)` over a batch.
pub fn batch_f1(o: &dyn CompositionOracle, batch: &Batch, x: &Vector) -> Result<Vector> {
    batch.check(o.inner_population())?;
    check_len(x, o.dim_x(), "x")?;
    Ok(o.mean_inner_value(batch, x))
}

/// Mean Jacobian `f1_i'(x)` over a batch.
pub fn batch_jac_f1(o: &dyn CompositionOracle, batch: &Batch, x: &Vector) -> Result<Matrix> {
    batch.check(o.inner_population())?;
    check_len(x, o.dim_x(), "x")?;
    Ok(o.mean_inner_jacobian(batch, x))
}

/// Mean gradient `∇f2_j(w)` over a batch.
pub fn batch_grad_f2(o: &dyn CompositionOracle, batch: &Batch, w: &Vector) -> Result<Vector> {
    batch.check(o.outer_population())?;
    check_len(w, o.dim_inner(), "w")?;
    Ok(o.mean_outer_gradient(batch, w))
}

/// Mean of `f1_i(x)` over an index multiset.
pub fn eval_f1(o: &dyn CompositionOracle, idx: &[u64], x: &Vector) -> Result<Vector> {
    batch_f1(o, &Batch::Sample(idx.to_vec()), x)
}

/// Mean Jacobian `f1_i'(x)` over an index multiset.
pub fn eval_jac_f1(o: &dyn CompositionOracle, idx: &[u64], x: &Vector) -> Result<Matrix> {
    batch_jac_f1(o, &Batch::Sample(idx.to_vec()), x)
}

/// Mean gradient `∇f2_j(w)` over an index multiset.
pub fn eval_grad_f2(o: &dyn CompositionOracle, idx: &[u64], w: &Vector) -> Result<Vector> {
    batch_grad_f2(o, &Batch::Sample(idx.to_vec()), w)
}

/// Exact inner mean `f1(x)`: full summation for a finite population, the
/// closed form for a stream.
pub fn full_f1(o: &dyn CompositionOracle, x: &Vector) -> Result<Vector> {
    match o.inner_population() {
        Population::Finite(n) => batch_f1(o, &Batch::Full(n), x),
        Population::Stream => o.expected_inner_value(x).ok_or(Error::UnsupportedMode),
    }
}

/// Exact inner mean Jacobian.
pub fn full_jac_f1(o: &dyn CompositionOracle, x: &Vector) -> Result<Matrix> {
    match o.inner_population() {
        Population::Finite(n) => batch_jac_f1(o, &Batch::Full(n), x),
        Population::Stream => o.expected_inner_jacobian(x).ok_or(Error::UnsupportedMode),
    }
}

/// Exact outer mean gradient.
pub fn full_grad_f2(o: &dyn CompositionOracle, w: &Vector) -> Result<Vector> {
    match o.outer_population() {
        Population::Finite(n) => batch_grad_f2(o, &Batch::Full(n), w),
        Population::Stream => o.expected_outer_gradient(w).ok_or(Error::UnsupportedMode),
    }
}

fn full_f2_value(o: &dyn CompositionOracle, w: &Vector) -> Result<f64> {
    match o.outer_population() {
        Population::Finite(0) => Err(Error::EmptyBatch),
        Population::Finite(n) => Ok(o.mean_outer_value(&Batch::Full(n), w)),
        Population::Stream => o.expected_outer_value(w).ok_or(Error::UnsupportedMode),
    }
}

/// `F'(x) = (E f1'(x))ᵀ E ∇f2(E f1(x))` with exact means.
pub fn exact_nested_gradient(o: &dyn CompositionOracle, x: &Vector) -> Result<Vector> {
    check_len(x, o.dim_x(), "x")?;
    let w = full_f1(o, x)?;
    let jac = full_jac_f1(o, x)?;
    let g = full_grad_f2(o, &w)?;
    Ok(jac.tr_mul(&g))
}

/// `F(x)` with exact means.
pub fn exact_value(o: &dyn CompositionOracle, x: &Vector) -> Result<f64> {
    check_len(x, o.dim_x(), "x")?;
    let w = full_f1(o, x)?;
    full_f2_value(o, &w)
}

pub(crate) fn check_len(v: &Vector, n: usize, what: &str) -> Result<()> {
    if v.len() != n {
        return Err(Error::DimensionError(format!(
            "{what} has length {}, expected {n}",
            v.len()
        )));
    }
    Ok(())
}

/// Lipschitz, smoothness, and variance constants of the component maps.
///
/// `ell1`/`ell2`: Lipschitz constants of `f1_i` / `f2_j`; `lip1`/`lip2`:
/// Lipschitz constants of their Jacobians; `lip_f`: smoothness of `F`;
/// `delta`, `sigma1`, `sigma2`: standard-deviation bounds of the inner value,
/// inner Jacobian, and outer gradient.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothnessProfile {
    pub ell1: f64,
    pub ell2: f64,
    pub lip1: f64,
    pub lip2: f64,
    pub lip_f: f64,
    pub delta: f64,
    pub sigma1: f64,
    pub sigma2: f64,
}

impl SmoothnessProfile {
    pub fn unit() -> Self {
        Self {
            ell1: 1.0,
            ell2: 1.0,
            lip1: 1.0,
            lip2: 1.0,
            lip_f: 1.0,
            delta: 1.0,
            sigma1: 1.0,
            sigma2: 1.0,
        }
    }

    /// The Lipschitz constants and `lip_f` must be positive; the Jacobian
    /// Lipschitz and variance constants may be zero (affine maps, identical
    /// components).
    pub fn validate(&self) -> Result<()> {
        let strict = [
            ("ell1", self.ell1),
            ("ell2", self.ell2),
            ("lip_f", self.lip_f),
        ];
        let loose = [
            ("lip1", self.lip1),
            ("lip2", self.lip2),
            ("delta", self.delta),
            ("sigma1", self.sigma1),
            ("sigma2", self.sigma2),
        ];
        for (name, v) in strict {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidProfile(format!("{name} = {v}")));
            }
        }
        for (name, v) in loose {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidProfile(format!("{name} = {v}")));
            }
        }
        Ok(())
    }

    fn scaled(&self, factor: f64) -> Self {
        Self {
            ell1: self.ell1 * factor,
            ell2: self.ell2 * factor,
            lip1: self.lip1 * factor,
            lip2: self.lip2 * factor,
            lip_f: self.lip_f * factor,
            delta: self.delta * factor,
            sigma1: self.sigma1 * factor,
            sigma2: self.sigma2 * factor,
        }
    }
}

/// Safety factor applied by [`estimate_profile`].
pub const PROFILE_SAFETY: f64 = 1.5;
const PROFILE_MAX_COMPONENTS: usize = 256;

/// Where the calibration gets its constants from.
#[derive(Debug, Clone)]
pub enum ProfileSource {
    Supplied(SmoothnessProfile),
    Estimated { probes: Vec<Vector>, safety: f64 },
}

pub fn resolve_profile(
    o: &dyn CompositionOracle,
    source: &ProfileSource,
    rng: &mut dyn RngCore,
) -> Result<SmoothnessProfile> {
    match source {
        ProfileSource::Supplied(p) => Ok(*p),
        ProfileSource::Estimated { probes, safety } => {
            estimate_profile_with_safety(o, probes, rng, *safety)
        }
    }
}

/// Empirical smoothness profile at the probe points, inflated by
/// [`PROFILE_SAFETY`].
pub fn estimate_profile(
    o: &dyn CompositionOracle,
    probes: &[Vector],
    rng: &mut dyn RngCore,
) -> Result<SmoothnessProfile> {
    estimate_profile_with_safety(o, probes, rng, PROFILE_SAFETY)
}

pub fn estimate_profile_with_safety(
    o: &dyn CompositionOracle,
    probes: &[Vector],
    rng: &mut dyn RngCore,
    safety: f64,
) -> Result<SmoothnessProfile> {
    if probes.len() < 2 {
        return Err(Error::InsufficientProbes(probes.len()));
    }
    for x in probes {
        check_len(x, o.dim_x(), "probe")?;
    }
    let inner = component_sample(o.inner_population(), rng);
    let outer = component_sample(o.outer_population(), rng);
    let ni = inner.len() as f64;
    let no = outer.len() as f64;

    let mut ell1 = 0.0f64;
    let mut delta2 = 0.0f64;
    let mut sigma1_2 = 0.0f64;
    let mut jacs: Vec<Vec<Matrix>> = Vec::with_capacity(probes.len());
    let mut ws: Vec<Vector> = Vec::with_capacity(probes.len());
    for x in probes {
        let vals: Vec<Vector> = inner.iter().map(|&i| o.inner_value(i, x)).collect();
        let js: Vec<Matrix> = inner.iter().map(|&i| o.inner_jacobian(i, x)).collect();
        let mean_v = vals
            .iter()
            .fold(Vector::zeros(o.dim_inner()), |acc, v| acc + v)
            / ni;
        let mean_j = js
            .iter()
            .fold(Matrix::zeros(o.dim_inner(), o.dim_x()), |acc, j| acc + j)
            / ni;
        for j in &js {
            ell1 = ell1.max(spectral_norm(j)?);
        }
        delta2 = delta2.max(
            vals.iter()
                .map(|v| (v - &mean_v).norm_squared())
                .sum::<f64>()
                / ni,
        );
        sigma1_2 = sigma1_2.max(js.iter().map(|j| fro2(&(j - &mean_j))).sum::<f64>() / ni);
        jacs.push(js);
        ws.push(mean_v);
    }

    let mut ell2 = 0.0f64;
    let mut sigma2_2 = 0.0f64;
    let mut grads: Vec<Vec<Vector>> = Vec::with_capacity(ws.len());
    for w in &ws {
        let gs: Vec<Vector> = outer.iter().map(|&j| o.outer_gradient(j, w)).collect();
        let mean_g = gs
            .iter()
            .fold(Vector::zeros(o.dim_inner()), |acc, g| acc + g)
            / no;
        for g in &gs {
            ell2 = ell2.max(g.norm());
        }
        sigma2_2 = sigma2_2.max(gs.iter().map(|g| (g - &mean_g).norm_squared()).sum::<f64>() / no);
        grads.push(gs);
    }

    let mut lip1 = 0.0f64;
    let mut lip2 = 0.0f64;
    for a in 0..probes.len() {
        for b in (a + 1)..probes.len() {
            let dx = (&probes[a] - &probes[b]).norm();
            if dx > 0.0 {
                for (ja, jb) in jacs[a].iter().zip(&jacs[b]) {
                    lip1 = lip1.max(spectral_norm(&(ja - jb))? / dx);
                }
            }
            let dw = (&ws[a] - &ws[b]).norm();
            if dw > 0.0 {
                for (ga, gb) in grads[a].iter().zip(&grads[b]) {
                    lip2 = lip2.max((ga - gb).norm() / dw);
                }
            }
        }
    }

    let raw = SmoothnessProfile {
        ell1,
        ell2,
        lip1,
        lip2,
        lip_f: ell1 * ell1 * lip2 + ell2 * lip1,
        delta: delta2.sqrt(),
        sigma1: sigma1_2.sqrt(),
        sigma2: sigma2_2.sqrt(),
    };
    Ok(raw.scaled(safety))
}

fn component_sample(pop: Population, rng: &mut dyn RngCore) -> Vec<u64> {
    match pop {
        Population::Finite(n) if n <= PROFILE_MAX_COMPONENTS => (0..n as u64).collect(),
        Population::Finite(n) => (0..PROFILE_MAX_COMPONENTS)
            .map(|_| rng.random_range(0..n as u64))
            .collect(),
        Population::Stream => (0..PROFILE_MAX_COMPONENTS)
            .map(|_| rng.random::<u64>())
            .collect(),
    }
}

/// Eigenvalue summary of the coupling matrices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralSummary {
    /// Smallest eigenvalue of `AᵀA`.
    pub sigma_min_a: f64,
    /// Largest eigenvalue of `AᵀA`.
    pub sigma_max_a: f64,
    /// Largest eigenvalue of `B_jᵀB_j`, per block.
    pub sigma_max_b: Vec<f64>,
    /// `sigma_max_a / sigma_min_a`.
    pub kappa: f64,
}

impl SpectralSummary {
    pub fn compute(a: &Matrix, b: &[Matrix]) -> Result<Self> {
        let (sigma_min_a, sigma_max_a) = spectral_bounds(a)?;
        let sigma_max_b = b
            .iter()
            .map(gram_max_eigenvalue)
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            sigma_min_a,
            sigma_max_a,
            sigma_max_b,
            kappa: if sigma_min_a > 0.0 {
                sigma_max_a / sigma_min_a
            } else {
                f64::INFINITY
            },
        })
    }
}

/// Relative threshold below which `σ_min(AᵀA)` counts as zero.
pub const RANK_TOL: f64 = 1e-9;

/// The full constrained problem.
#[derive(Debug, Clone)]
pub struct ProblemInstance {
    pub a: Matrix,
    pub b: Vec<Matrix>,
    pub c: Vector,
    pub regs: Vec<Regularizer>,
    pub oracle: Arc<dyn CompositionOracle>,
    pub spectral: SpectralSummary,
    /// Certified constants attached by a generator, if any.
    pub profile: Option<SmoothnessProfile>,
    /// Generator that rebuilds the oracle, if the instance came from one.
    pub origin: Option<GeneratorSpec>,
}

impl ProblemInstance {
    pub fn new(
        a: Matrix,
        b: Vec<Matrix>,
        c: Vector,
        regs: Vec<Regularizer>,
        oracle: Arc<dyn CompositionOracle>,
    ) -> Result<Self> {
        let p = a.nrows();
        if b.is_empty() {
            return Err(Error::DimensionError("need at least one y-block".into()));
        }
        if regs.len() != b.len() {
            return Err(Error::DimensionError(format!(
                "{} regularizers for {} blocks",
                regs.len(),
                b.len()
            )));
        }
        for (j, bj) in b.iter().enumerate() {
            if bj.nrows() != p {
                return Err(Error::DimensionError(format!(
                    "B_{j} has {} rows, A has {p}",
                    bj.nrows()
                )));
            }
        }
        check_len(&c, p, "c")?;
        if a.ncols() != oracle.dim_x() {
            return Err(Error::DimensionError(format!(
                "A has {} columns, oracle dimension is {}",
                a.ncols(),
                oracle.dim_x()
            )));
        }
        let spectral = SpectralSummary::compute(&a, &b)?;
        if spectral.sigma_min_a <= RANK_TOL * spectral.sigma_max_a {
            return Err(Error::InvalidMatrix(format!(
                "A must have full column rank (σ_min(AᵀA) = {:e})",
                spectral.sigma_min_a
            )));
        }
        Ok(Self {
            a,
            b,
            c,
            regs,
            oracle,
            spectral,
            profile: None,
            origin: None,
        })
    }

    pub fn with_profile(mut self, profile: SmoothnessProfile) -> Self {
        self.profile = Some(profile);
        self
    }

    pub fn dim_x(&self) -> usize {
        self.a.ncols()
    }

    pub fn dim_p(&self) -> usize {
        self.a.nrows()
    }

    pub fn num_blocks(&self) -> usize {
        self.b.len()
    }

    pub fn block_dims(&self) -> Vec<usize> {
        self.b.iter().map(|bj| bj.ncols()).collect()
    }

    pub fn mode(&self) -> Mode {
        self.oracle.mode()
    }

    pub fn check_blocks(&self, y: &[Vector]) -> Result<()> {
        if y.len() != self.b.len() {
            return Err(Error::DimensionError(format!(
                "{} y-blocks, expected {}",
                y.len(),
                self.b.len()
            )));
        }
        for (j, (yj, bj)) in y.iter().zip(&self.b).enumerate() {
            check_len(yj, bj.ncols(), &format!("y_{j}"))?;
        }
        Ok(())
    }

    /// `A x + Σ B_j y_j − c`.
    pub fn residual(&self, x: &Vector, y: &[Vector]) -> Vector {
        let mut r = &self.a * x - &self.c;
        for (bj, yj) in self.b.iter().zip(y) {
            r.gemv(1.0, bj, yj, 1.0);
        }
        r
    }

    pub fn exact_gradient(&self, x: &Vector) -> Result<Vector> {
        exact_nested_gradient(self.oracle.as_ref(), x)
    }

    /// `F(x) + Σ r_j(y_j)` with exact means.
    pub fn full_objective(&self, x: &Vector, y: &[Vector]) -> Result<f64> {
        check_len(x, self.dim_x(), "x")?;
        self.check_blocks(y)?;
        let f = exact_value(self.oracle.as_ref(), x)?;
        Ok(f + self
            .regs
            .iter()
            .zip(y)
            .map(|(r, yj)| r.value(yj))
            .sum::<f64>())
    }
}

/// Free-function form of [`ProblemInstance::full_objective`].
pub fn full_objective(problem: &ProblemInstance, x: &Vector, y: &[Vector]) -> Result<f64> {
    problem.full_objective(x, y)
}
