//! Synthetic problem families with certified smoothness constants.
//!
//! All families share an affine inner level
//! `f1_i(x) = M̄x + b̄ + s_i(σ_J P_{k_i} x + σ_v p_{k_i'})` where `s_i = ±1`
//! alternates between consecutive indices (antithetic pairs, so the
//! population mean is exactly `M̄x + b̄`) and `P_k`, `p_k` come from a small
//! dictionary of unit-norm directions picked by a hash of `(seed, i/2)`.
//! Components are therefore cheap to evaluate and never stored, which lets
//! the same construction serve finite populations and unbounded streams.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{fro2, spectral_norm, Matrix, Vector};
use crate::problem::{Batch, CompositionOracle, Population, ProblemInstance, SmoothnessProfile};
use crate::prox::{RegKind, Regularizer};

const DICTIONARY_SIZE: usize = 16;
const INNER_SALT: u64 = 0x1f1f_0000_0000_0001;
const OUTER_SALT: u64 = 0x2f2f_0000_0000_0002;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GeneratorKind {
    QuadraticComposition,
    LogisticComposition,
    GraphGuidedLasso,
}

impl GeneratorKind {
    pub fn name(self) -> &'static str {
        match self {
            GeneratorKind::QuadraticComposition => "quadratic-composition",
            GeneratorKind::LogisticComposition => "logistic-composition",
            GeneratorKind::GraphGuidedLasso => "graph-guided-lasso",
        }
    }
}

impl fmt::Display for GeneratorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for GeneratorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            GeneratorKind::QuadraticComposition,
            GeneratorKind::LogisticComposition,
            GeneratorKind::GraphGuidedLasso,
        ]
        .into_iter()
        .find(|k| k.name() == s)
        .ok_or_else(|| Error::ConfigError(format!("unknown generator `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GraphShape {
    Path,
    Random,
}

fn default_blocks() -> usize {
    1
}
fn default_noise() -> f64 {
    0.1
}
fn default_condition() -> f64 {
    100.0
}
fn default_offset() -> f64 {
    1.0
}
fn default_reg_kind() -> RegKind {
    RegKind::L1
}
fn default_reg_weight() -> f64 {
    1e-3
}
fn default_graph() -> GraphShape {
    GraphShape::Random
}
fn default_edge_prob() -> f64 {
    0.3
}
fn default_perturbation() -> f64 {
    0.01
}

/// Parameters of a synthetic instance. Missing counts mean a streamed level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorSpec {
    pub kind: GeneratorKind,
    /// Dimension of `x`.
    pub dim_x: usize,
    /// Dimension of the inner map's output.
    pub dim_inner: usize,
    /// Number of constraint rows; defaults to `dim_x` (ignored by the graph family).
    #[serde(default)]
    pub dim_constraint: Option<usize>,
    #[serde(default)]
    pub n_inner: Option<usize>,
    #[serde(default)]
    pub n_outer: Option<usize>,
    /// Number of `y` blocks.
    #[serde(default = "default_blocks")]
    pub blocks: usize,
    /// Default scale of every noise term.
    #[serde(default = "default_noise")]
    pub noise: f64,
    #[serde(default)]
    pub value_noise: Option<f64>,
    #[serde(default)]
    pub jacobian_noise: Option<f64>,
    #[serde(default)]
    pub gradient_noise: Option<f64>,
    /// Ratio of the extreme nonzero eigenvalues of `M̄ᵀM̄`.
    #[serde(default = "default_condition")]
    pub condition: f64,
    /// Scale of the outer target; zero puts the unconstrained minimizer at 0.
    #[serde(default = "default_offset")]
    pub offset: f64,
    /// Radius of the ball over which the profile is certified; derived from
    /// the instance when absent.
    #[serde(default)]
    pub radius: Option<f64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_reg_kind")]
    pub reg_kind: RegKind,
    #[serde(default = "default_reg_weight")]
    pub reg_weight: f64,
    #[serde(default = "default_graph")]
    pub graph: GraphShape,
    #[serde(default = "default_edge_prob")]
    pub edge_prob: f64,
    /// Relative spread `ε` of the coupling matrix's singular values around 1.
    #[serde(default = "default_perturbation")]
    pub coupling_perturbation: f64,
}

impl GeneratorSpec {
    /// A quadratic-composition spec with default extras.
    pub fn quadratic(
        dim_x: usize,
        dim_inner: usize,
        n_inner: Option<usize>,
        n_outer: Option<usize>,
        seed: u64,
    ) -> Self {
        Self {
            kind: GeneratorKind::QuadraticComposition,
            dim_x,
            dim_inner,
            dim_constraint: None,
            n_inner,
            n_outer,
            blocks: default_blocks(),
            noise: default_noise(),
            value_noise: None,
            jacobian_noise: None,
            gradient_noise: None,
            condition: default_condition(),
            offset: default_offset(),
            radius: None,
            seed,
            reg_kind: default_reg_kind(),
            reg_weight: default_reg_weight(),
            graph: default_graph(),
            edge_prob: default_edge_prob(),
            coupling_perturbation: default_perturbation(),
        }
    }

    pub fn with_kind(mut self, kind: GeneratorKind) -> Self {
        self.kind = kind;
        self
    }

    fn value_noise(&self) -> f64 {
        self.value_noise.unwrap_or(self.noise)
    }
    fn jacobian_noise(&self) -> f64 {
        self.jacobian_noise.unwrap_or(self.noise)
    }
    fn gradient_noise(&self) -> f64 {
        self.gradient_noise.unwrap_or(self.noise)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::GeneratorError(m));
        if self.dim_x == 0 || self.dim_inner == 0 {
            return fail("dimensions must be positive".into());
        }
        if self.n_inner == Some(0) || self.n_outer == Some(0) {
            return fail("component counts must be positive".into());
        }
        for (name, v) in [
            ("noise", self.noise),
            ("value_noise", self.value_noise()),
            ("jacobian_noise", self.jacobian_noise()),
            ("gradient_noise", self.gradient_noise()),
            ("reg_weight", self.reg_weight),
            ("coupling_perturbation", self.coupling_perturbation),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return fail(format!("{name} must be finite and nonnegative, got {v}"));
            }
        }
        if !(self.condition >= 1.0 && self.condition.is_finite()) {
            return fail(format!(
                "condition must be at least 1, got {}",
                self.condition
            ));
        }
        if self.coupling_perturbation >= 1.0 {
            return fail(format!(
                "coupling_perturbation must be below 1, got {}",
                self.coupling_perturbation
            ));
        }
        if !self.offset.is_finite() {
            return fail("offset must be finite".into());
        }
        if let Some(r) = self.radius {
            if !(r > 0.0 && r.is_finite()) {
                return fail(format!("radius must be positive, got {r}"));
            }
        }
        if self.blocks == 0 {
            return fail("need at least one block".into());
        }
        match self.kind {
            GeneratorKind::GraphGuidedLasso => {
                if self.blocks != 1 {
                    return fail("graph-guided-lasso uses a single block".into());
                }
                if !(0.0..=1.0).contains(&self.edge_prob) {
                    return fail(format!(
                        "edge_prob must lie in [0, 1], got {}",
                        self.edge_prob
                    ));
                }
            }
            _ => {
                let p = self.dim_constraint.unwrap_or(self.dim_x);
                if p < self.dim_x {
                    return fail(format!(
                        "dim_constraint = {p} < dim_x = {}; A would lack full column rank",
                        self.dim_x
                    ));
                }
                if self.blocks > p {
                    return fail(format!("{} blocks exceed {p} constraint rows", self.blocks));
                }
            }
        }
        if self.kind == GeneratorKind::LogisticComposition && self.n_outer.is_none() {
            return fail("logistic-composition needs a finite outer count".into());
        }
        Ok(())
    }
}

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn component_hash(seed: u64, salt: u64, index: u64) -> u64 {
    mix(mix(seed ^ salt) ^ (index >> 1))
}

fn sign_of(index: u64) -> f64 {
    if index & 1 == 0 {
        1.0
    } else {
        -1.0
    }
}

fn dict_slot(h: u64, shift: u32) -> usize {
    ((h >> shift) % DICTIONARY_SIZE as u64) as usize
}

fn uniform_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
    Matrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
}

fn unit_vector(rng: &mut ChaCha8Rng, n: usize) -> Vector {
    loop {
        let v = Vector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        let norm = v.norm();
        if norm > 1e-3 {
            return v / norm;
        }
    }
}

/// `n×k` matrix with orthonormal columns, `k ≤ n`.
fn orthonormal(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Matrix {
    let q = uniform_matrix(rng, n, n).qr().q();
    q.columns(0, k).into_owned()
}

/// Signed weights per dictionary slot, `Σ_{i∈batch, slot(i)=k} s_i / |batch|`.
fn slot_weights(batch: &Batch, seed: u64, salt: u64, shift: u32) -> [f64; DICTIONARY_SIZE] {
    let mut w = [0.0; DICTIONARY_SIZE];
    let scale = 1.0 / batch.len() as f64;
    for i in batch.indices() {
        w[dict_slot(component_hash(seed, salt, i), shift)] += sign_of(i) * scale;
    }
    w
}

/// Hashed affine inner level.
#[derive(Debug, Clone)]
struct AffineInner {
    mean_map: Matrix,
    offset: Vector,
    jac_dict: Vec<Matrix>,
    val_dict: Vec<Vector>,
    jac_noise: f64,
    val_noise: f64,
    seed: u64,
    population: Population,
}

impl AffineInner {
    fn slots(&self, i: u64) -> (usize, usize) {
        let h = component_hash(self.seed, INNER_SALT, i);
        (dict_slot(h, 0), dict_slot(h, 20))
    }

    fn value(&self, i: u64, x: &Vector) -> Vector {
        let (kj, kv) = self.slots(i);
        let s = sign_of(i);
        let mut out = &self.mean_map * x + &self.offset;
        out.gemv(s * self.jac_noise, &self.jac_dict[kj], x, 1.0);
        out.axpy(s * self.val_noise, &self.val_dict[kv], 1.0);
        out
    }

    fn jacobian(&self, i: u64) -> Matrix {
        let (kj, _) = self.slots(i);
        &self.mean_map + &self.jac_dict[kj] * (sign_of(i) * self.jac_noise)
    }

    fn mean_value(&self, batch: &Batch, x: &Vector) -> Vector {
        let wj = slot_weights(batch, self.seed, INNER_SALT, 0);
        let wv = slot_weights(batch, self.seed, INNER_SALT, 20);
        let mut out = &self.mean_map * x + &self.offset;
        for k in 0..DICTIONARY_SIZE {
            if wj[k] != 0.0 {
                out.gemv(wj[k] * self.jac_noise, &self.jac_dict[k], x, 1.0);
            }
            if wv[k] != 0.0 {
                out.axpy(wv[k] * self.val_noise, &self.val_dict[k], 1.0);
            }
        }
        out
    }

    fn mean_jacobian(&self, batch: &Batch) -> Matrix {
        let wj = slot_weights(batch, self.seed, INNER_SALT, 0);
        let mut out = self.mean_map.clone();
        for (k, &w) in wj.iter().enumerate() {
            if w != 0.0 {
                out += &self.jac_dict[k] * (w * self.jac_noise);
            }
        }
        out
    }

    /// Components present in the population, as dictionary-slot pairs with
    /// their sign; the whole dictionary for a stream.
    fn support(&self) -> Vec<(usize, usize, f64)> {
        match self.population {
            Population::Finite(n) => (0..n as u64)
                .map(|i| {
                    let (a, b) = self.slots(i);
                    (a, b, sign_of(i))
                })
                .collect(),
            Population::Stream => (0..DICTIONARY_SIZE)
                .flat_map(|a| (0..DICTIONARY_SIZE).flat_map(move |b| [(a, b, 1.0), (a, b, -1.0)]))
                .collect(),
        }
    }
}

#[derive(Debug, Clone)]
enum OuterLevel {
    /// `f2_j(w) = ½‖w − d̄ − s_j σ_o q_{k_j}‖²`.
    Quadratic {
        target: Vector,
        dict: Vec<Vector>,
        noise: f64,
        seed: u64,
        population: Population,
    },
    /// `f2_j(w) = log(1 + exp(−y_j a_jᵀw))`.
    Logistic {
        features: Vec<Vector>,
        labels: Vec<f64>,
    },
}

/// Oracle shared by the generated families.
#[derive(Debug, Clone)]
pub struct SyntheticOracle {
    inner: AffineInner,
    outer: OuterLevel,
}

fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

impl SyntheticOracle {
    fn outer_target(&self, j: u64) -> Vector {
        match &self.outer {
            OuterLevel::Quadratic {
                target,
                dict,
                noise,
                seed,
                ..
            } => {
                let k = dict_slot(component_hash(*seed, OUTER_SALT, j), 0);
                target + &dict[k] * (sign_of(j) * noise)
            }
            OuterLevel::Logistic { .. } => unreachable!("logistic outer level has no target"),
        }
    }

    /// Mean inner Jacobian of the population (exact, by summation when finite).
    fn population_mean_map(&self) -> Matrix {
        match self.inner.population {
            Population::Finite(n) => self.inner.mean_jacobian(&Batch::Full(n)),
            Population::Stream => self.inner.mean_map.clone(),
        }
    }
}

impl CompositionOracle for SyntheticOracle {
    fn dim_x(&self) -> usize {
        self.inner.mean_map.ncols()
    }

    fn dim_inner(&self) -> usize {
        self.inner.mean_map.nrows()
    }

    fn inner_population(&self) -> Population {
        self.inner.population
    }

    fn outer_population(&self) -> Population {
        match &self.outer {
            OuterLevel::Quadratic { population, .. } => *population,
            OuterLevel::Logistic { labels, .. } => Population::Finite(labels.len()),
        }
    }

    fn inner_value(&self, i: u64, x: &Vector) -> Vector {
        self.inner.value(i, x)
    }

    fn inner_jacobian(&self, i: u64, _x: &Vector) -> Matrix {
        self.inner.jacobian(i)
    }

    fn outer_value(&self, j: u64, w: &Vector) -> f64 {
        match &self.outer {
            OuterLevel::Quadratic { .. } => 0.5 * (w - self.outer_target(j)).norm_squared(),
            OuterLevel::Logistic { features, labels } => {
                let j = j as usize;
                softplus(-labels[j] * features[j].dot(w))
            }
        }
    }

    fn outer_gradient(&self, j: u64, w: &Vector) -> Vector {
        match &self.outer {
            OuterLevel::Quadratic { .. } => w - self.outer_target(j),
            OuterLevel::Logistic { features, labels } => {
                let j = j as usize;
                let t = -labels[j] * features[j].dot(w);
                &features[j] * (-labels[j] * sigmoid(t))
            }
        }
    }

    fn mean_inner_value(&self, batch: &Batch, x: &Vector) -> Vector {
        self.inner.mean_value(batch, x)
    }

    fn mean_inner_jacobian(&self, batch: &Batch, _x: &Vector) -> Matrix {
        self.inner.mean_jacobian(batch)
    }

    fn mean_outer_gradient(&self, batch: &Batch, w: &Vector) -> Vector {
        match &self.outer {
            OuterLevel::Quadratic {
                target,
                dict,
                noise,
                seed,
                ..
            } => {
                let wts = slot_weights(batch, *seed, OUTER_SALT, 0);
                let mut out = w - target;
                for (k, &c) in wts.iter().enumerate() {
                    if c != 0.0 {
                        out.axpy(-c * noise, &dict[k], 1.0);
                    }
                }
                out
            }
            OuterLevel::Logistic { .. } => {
                let mut out = Vector::zeros(w.len());
                for j in batch.indices() {
                    out += self.outer_gradient(j, w);
                }
                out / batch.len() as f64
            }
        }
    }

    fn mean_outer_value(&self, batch: &Batch, w: &Vector) -> f64 {
        match &self.outer {
            OuterLevel::Quadratic {
                target,
                dict,
                noise,
                seed,
                ..
            } => {
                let diff = w - target;
                let scale = 1.0 / batch.len() as f64;
                let mut signed = [0.0; DICTIONARY_SIZE];
                let mut counts = [0.0; DICTIONARY_SIZE];
                for j in batch.indices() {
                    let k = dict_slot(component_hash(*seed, OUTER_SALT, j), 0);
                    signed[k] += sign_of(j) * scale;
                    counts[k] += scale;
                }
                let mut v = 0.5 * diff.norm_squared();
                for k in 0..DICTIONARY_SIZE {
                    v -= signed[k] * noise * diff.dot(&dict[k]);
                    v += 0.5 * counts[k] * noise * noise * dict[k].norm_squared();
                }
                v
            }
            OuterLevel::Logistic { .. } => {
                batch.indices().map(|j| self.outer_value(j, w)).sum::<f64>() / batch.len() as f64
            }
        }
    }

    fn expected_inner_value(&self, x: &Vector) -> Option<Vector> {
        Some(&self.inner.mean_map * x + &self.inner.offset)
    }

    fn expected_inner_jacobian(&self, _x: &Vector) -> Option<Matrix> {
        Some(self.inner.mean_map.clone())
    }

    fn expected_outer_gradient(&self, w: &Vector) -> Option<Vector> {
        match &self.outer {
            OuterLevel::Quadratic { target, .. } => Some(w - target),
            OuterLevel::Logistic { .. } => None,
        }
    }

    fn expected_outer_value(&self, w: &Vector) -> Option<f64> {
        match &self.outer {
            OuterLevel::Quadratic {
                target,
                dict,
                noise,
                ..
            } => {
                let spread = dict.iter().map(|q| q.norm_squared()).sum::<f64>() / dict.len() as f64;
                Some(0.5 * (w - target).norm_squared() + 0.5 * noise * noise * spread)
            }
            OuterLevel::Logistic { .. } => None,
        }
    }
}

fn population(n: Option<usize>) -> Population {
    n.map_or(Population::Stream, Population::Finite)
}

/// Builds the instance described by `spec`. Identical specs give bitwise
/// identical instances.
pub fn generate_instance(spec: &GeneratorSpec) -> Result<ProblemInstance> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let d = spec.dim_x;
    let l = spec.dim_inner;
    let rank = d.min(l);

    // mean inner map U diag(s) Vᵀ with s² log-spaced over [1/condition, 1]
    let u = orthonormal(&mut rng, l, rank);
    let v = orthonormal(&mut rng, d, rank);
    let singular = Vector::from_fn(rank, |i, _| {
        let t = if rank > 1 {
            i as f64 / (rank - 1) as f64
        } else {
            0.0
        };
        spec.condition.powf(-0.5 * t)
    });
    let mean_map = &u * Matrix::from_diagonal(&singular) * v.transpose();
    let signs = Vector::from_fn(rank, |_, _| if rng.random_bool(0.5) { 1.0 } else { -1.0 });
    let target = &u * &signs * (spec.offset / (rank as f64).sqrt());

    let jac_dict = (0..DICTIONARY_SIZE)
        .map(|_| {
            let m = uniform_matrix(&mut rng, l, d);
            let n = spectral_norm(&m)?;
            Ok(m / n)
        })
        .collect::<Result<Vec<_>>>()?;
    let val_dict: Vec<Vector> = (0..DICTIONARY_SIZE)
        .map(|_| unit_vector(&mut rng, l))
        .collect();
    let out_dict: Vec<Vector> = (0..DICTIONARY_SIZE)
        .map(|_| unit_vector(&mut rng, l))
        .collect();
    let comp_seed = rng.random::<u64>();

    let inner = AffineInner {
        mean_map,
        offset: Vector::zeros(l),
        jac_dict,
        val_dict,
        jac_noise: spec.jacobian_noise(),
        val_noise: spec.value_noise(),
        seed: comp_seed,
        population: population(spec.n_inner),
    };

    let outer = match spec.kind {
        GeneratorKind::LogisticComposition => {
            let n2 = spec.n_outer.expect("validated");
            let truth = unit_vector(&mut rng, l);
            let features: Vec<Vector> = (0..n2)
                .map(|_| unit_vector(&mut rng, l) * (1.0 + spec.gradient_noise()))
                .collect();
            let labels = features
                .iter()
                .map(|a| {
                    let flip = rng.random_bool(0.1);
                    let y = if a.dot(&truth) >= 0.0 { 1.0 } else { -1.0 };
                    if flip {
                        -y
                    } else {
                        y
                    }
                })
                .collect();
            OuterLevel::Logistic { features, labels }
        }
        _ => OuterLevel::Quadratic {
            target,
            dict: out_dict,
            noise: spec.gradient_noise(),
            seed: comp_seed ^ 0x5a5a_5a5a,
            population: population(spec.n_outer),
        },
    };
    let oracle = SyntheticOracle { inner, outer };

    let (a, b) = match spec.kind {
        GeneratorKind::GraphGuidedLasso => {
            let edges = graph_edges(spec.graph, d, spec.edge_prob, &mut rng);
            let a = graph_coupling(&edges, d);
            let p = a.nrows();
            (a, vec![-Matrix::identity(p, p)])
        }
        _ => {
            let p = spec.dim_constraint.unwrap_or(d);
            let a = coupling_matrix(&mut rng, p, d, spec.coupling_perturbation);
            (a, split_negative_identity(p, spec.blocks))
        }
    };
    let p = a.nrows();
    let reg = Regularizer::new(spec.reg_kind, spec.reg_weight)?;
    let regs = vec![reg; b.len()];

    let radius = match spec.radius {
        Some(r) => r,
        None => default_radius(&oracle)?,
    };
    let profile = certified_profile(&oracle, radius)?;
    let oracle: Arc<dyn CompositionOracle> = Arc::new(oracle);
    let mut inst = ProblemInstance::new(a, b, Vector::zeros(p), regs, oracle)?;
    inst.profile = Some(profile);
    inst.origin = Some(spec.clone());
    Ok(inst)
}

/// `U·diag(s)·Vᵀ` with orthonormal `U` (`p×d`) and `V`, extreme singular
/// values `1 ± ε` and the rest spread over `[1 − ε/2, 1 + ε/2]`, so both ends
/// of the spectrum of `AᵀA` are separated from their neighbours.
fn coupling_matrix(rng: &mut ChaCha8Rng, p: usize, d: usize, eps: f64) -> Matrix {
    let u = orthonormal(rng, p, d);
    let v = orthonormal(rng, d, d);
    let s = Vector::from_fn(d, |i, _| match i {
        0 => 1.0 + eps,
        _ if i + 1 == d => 1.0 - eps,
        _ => 1.0 + eps * (rng.random_range(-0.5..0.5)),
    });
    u * Matrix::from_diagonal(&s) * v.transpose()
}

/// Columns of `−I_p` split into `m` contiguous blocks.
fn split_negative_identity(p: usize, m: usize) -> Vec<Matrix> {
    let base = p / m;
    let extra = p % m;
    let mut start = 0;
    (0..m)
        .map(|j| {
            let width = base + usize::from(j < extra);
            let mut bj = Matrix::zeros(p, width);
            for c in 0..width {
                bj[(start + c, c)] = -1.0;
            }
            start += width;
            bj
        })
        .collect()
}

fn graph_edges(
    shape: GraphShape,
    n: usize,
    prob: f64,
    rng: &mut ChaCha8Rng,
) -> Vec<(usize, usize)> {
    match shape {
        GraphShape::Path => (1..n).map(|i| (i - 1, i)).collect(),
        GraphShape::Random => {
            let mut edges = Vec::new();
            for i in 0..n {
                for j in (i + 1)..n {
                    if rng.random_bool(prob) {
                        edges.push((i, j));
                    }
                }
            }
            edges
        }
    }
}

/// Edge-incidence rows (`+1` at the first endpoint, `−1` at the second)
/// stacked over `0.1·I`.
pub fn graph_coupling(edges: &[(usize, usize)], n: usize) -> Matrix {
    let mut a = Matrix::zeros(edges.len() + n, n);
    for (r, &(i, j)) in edges.iter().enumerate() {
        a[(r, i)] = 1.0;
        a[(r, j)] = -1.0;
    }
    for i in 0..n {
        a[(edges.len() + i, i)] = 0.1;
    }
    a
}

/// Edge-incidence matrix of the path graph on `n` nodes.
pub fn path_incidence(n: usize) -> Matrix {
    let edges: Vec<_> = (1..n).map(|i| (i - 1, i)).collect();
    graph_coupling(&edges, n).rows(0, edges.len()).into_owned()
}

/// Twice the norm of the unconstrained minimizer of the mean objective,
/// plus a small margin.
fn default_radius(o: &SyntheticOracle) -> Result<f64> {
    match &o.outer {
        OuterLevel::Quadratic { target, .. } => {
            let m = o.population_mean_map();
            let rhs = target - &o.inner.offset;
            let x = m
                .clone()
                .svd(true, true)
                .solve(&rhs, 1e-12)
                .map_err(|e| Error::GeneratorError(e.to_string()))?;
            Ok(2.0 * x.norm() + 0.1)
        }
        OuterLevel::Logistic { .. } => Ok(5.0),
    }
}

/// Profile constants valid for `‖x‖ ≤ radius`.
fn certified_profile(o: &SyntheticOracle, radius: f64) -> Result<SmoothnessProfile> {
    let inner = &o.inner;
    let support = inner.support();
    let n = support.len() as f64;

    let mut ell1 = 0.0f64;
    let mut sigma1_sq = 0.0;
    let mut delta_sq = 0.0;
    let jac_norms: Vec<f64> = inner
        .jac_dict
        .iter()
        .map(spectral_norm)
        .collect::<Result<_>>()?;
    for k in 0..DICTIONARY_SIZE {
        for s in [1.0, -1.0] {
            ell1 = ell1.max(spectral_norm(
                &(&inner.mean_map + &inner.jac_dict[k] * (s * inner.jac_noise)),
            )?);
        }
    }
    for &(kj, kv, _) in &support {
        sigma1_sq += inner.jac_noise.powi(2) * fro2(&inner.jac_dict[kj]) / n;
        let spread =
            inner.jac_noise * jac_norms[kj] * radius + inner.val_noise * inner.val_dict[kv].norm();
        delta_sq += spread * spread / n;
    }
    let mean_map = o.population_mean_map();
    let map_norm = spectral_norm(&mean_map)?;
    let max_val_dir = inner.val_dict.iter().map(|v| v.norm()).fold(0.0, f64::max);
    let w_bound = ell1 * radius + inner.offset.norm() + inner.val_noise * max_val_dir;

    let (ell2, lip2, sigma2, lip_f) = match &o.outer {
        OuterLevel::Quadratic {
            target,
            dict,
            noise,
            ..
        } => {
            let max_dir = dict.iter().map(|q| q.norm()).fold(0.0, f64::max);
            let ell2 = w_bound + target.norm() + noise * max_dir;
            let sigma2_sq = match o.outer_population() {
                Population::Finite(n2) => {
                    (0..n2 as u64)
                        .map(|j| (o.outer_target(j) - target).norm_squared())
                        .sum::<f64>()
                        / n2 as f64
                }
                Population::Stream => {
                    noise * noise * dict.iter().map(|q| q.norm_squared()).sum::<f64>()
                        / dict.len() as f64
                }
            };
            (ell2, 1.0, sigma2_sq.sqrt(), map_norm * map_norm)
        }
        OuterLevel::Logistic { features, .. } => {
            let max_a = features.iter().map(|a| a.norm()).fold(0.0, f64::max);
            let second =
                features.iter().map(|a| a.norm_squared()).sum::<f64>() / features.len() as f64;
            let cov = features
                .iter()
                .fold(Matrix::zeros(o.dim_inner(), o.dim_inner()), |acc, a| {
                    acc + a * a.transpose()
                })
                / features.len() as f64;
            let cov_norm = spectral_norm(&cov)?;
            (
                max_a,
                max_a * max_a / 4.0,
                second.sqrt(),
                map_norm * map_norm * cov_norm / 4.0,
            )
        }
    };
    let profile = SmoothnessProfile {
        ell1,
        ell2,
        lip1: 0.0,
        lip2,
        lip_f,
        delta: delta_sq.sqrt(),
        sigma1: sigma1_sq.sqrt(),
        sigma2,
    };
    profile.validate()?;
    Ok(profile)
}
