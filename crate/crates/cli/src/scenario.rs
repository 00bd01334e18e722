//! Scenario files: declarations of spaces, bundles and tunnels, and the
//! tasks to run on them.

use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use proplab_core::algebra::{derive_seed, AlgebraShape, CMat, Element, State, StarMorphism, C64};
use proplab_core::bundle::{qvba, HilbertModule, ModElem, Mqvb};
use proplab_core::convex::SolverOpts;
use proplab_core::metrical::{
    compose_metrical, make_metrical, multiplication_metrical_tunnel, scalar_metrical_tunnel, scalar_space, MetricalBundle,
    MetricalTunnel, ModuleAction, METRICAL_SAMPLES,
};
use proplab_core::modular::{
    compose_modular, fallback_tunnel, free_module_tunnel, modular_tunnel_from_bridge, BridgeTunnelOpts, ModularBridge, ModularTunnel,
};
use proplab_core::qcms::tunnel::{compose_tunnels, tunnel_from_bridge, CheckBudget, Tunnel};
use proplab_core::qcms::{Bridge, Qcms, CONSTRUCTION_SAMPLES};
use proplab_core::seminorm::{commutator, lipschitz, PermissibleTriple, Seminorm};

use crate::instances::unit_anchors;

pub const SCHEMA: &str = "propinquity-lab/1";

/// Parse or validation failure, anchored to a line of the scenario file
/// when one can be found.
#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioError {
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ScenarioError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "line {l}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

impl std::error::Error for ScenarioError {}

/// A complex scalar: a real number or `[re, im]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Scalar {
    Real(f64),
    Complex([f64; 2]),
}

impl Scalar {
    pub fn value(self) -> C64 {
        match self {
            Scalar::Real(x) => C64::new(x, 0.0),
            Scalar::Complex([re, im]) => C64::new(re, im),
        }
    }
}

impl From<C64> for Scalar {
    fn from(c: C64) -> Self {
        if c.im == 0.0 {
            Scalar::Real(c.re)
        } else {
            Scalar::Complex([c.re, c.im])
        }
    }
}

/// An algebra element: one row-major matrix per block, or for a
/// commutative algebra the list of its values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ElementLit {
    Blocks(Vec<Vec<Vec<Scalar>>>),
    Values(Vec<Scalar>),
}

impl ElementLit {
    pub fn of(e: &Element) -> Self {
        if e.blocks.iter().all(|b| b.nrows() == 1) {
            return ElementLit::Values(e.blocks.iter().map(|b| b[(0, 0)].into()).collect());
        }
        ElementLit::Blocks(
            e.blocks
                .iter()
                .map(|b| (0..b.nrows()).map(|i| (0..b.ncols()).map(|j| b[(i, j)].into()).collect()).collect())
                .collect(),
        )
    }

    pub fn resolve(&self, shape: &AlgebraShape) -> Result<Element, String> {
        let e = match self {
            ElementLit::Values(v) => Element::from_values(&v.iter().map(|s| s.value()).collect::<Vec<_>>()),
            ElementLit::Blocks(bs) => {
                let mut blocks = Vec::with_capacity(bs.len());
                for rows in bs {
                    let n = rows.len();
                    if rows.iter().any(|r| r.len() != n) {
                        return Err("element blocks must be square".into());
                    }
                    blocks.push(CMat::from_fn(n, n, |i, j| rows[i][j].value()));
                }
                Element { blocks }
            }
        };
        e.check(shape).map_err(|err| err.to_string())?;
        Ok(e)
    }
}

/// A state: a point mass, a probability vector, the normalized trace, or a
/// vector state on one block.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StateLit {
    Point { point: usize },
    Probabilities { probabilities: Vec<f64> },
    Vector { block: usize, vector: Vec<Scalar> },
    Tracial { tracial: bool },
}

impl StateLit {
    pub fn resolve(&self, shape: &AlgebraShape) -> Result<State, String> {
        let s = match self {
            StateLit::Point { point } => State::point_mass(shape, *point).map_err(|e| e.to_string())?,
            StateLit::Probabilities { probabilities } => {
                let s = State::from_probabilities(probabilities).map_err(|e| e.to_string())?;
                if &s.shape() != shape {
                    return Err(format!("{} probabilities for an algebra of shape {shape}", probabilities.len()));
                }
                s
            }
            StateLit::Vector { block, vector } => {
                if *block >= shape.num_blocks() || shape.blocks()[*block] != vector.len() {
                    return Err(format!("vector does not fit block {block} of {shape}"));
                }
                let v = DVector::from_vec(vector.iter().map(|s| s.value()).collect());
                let n = v.norm();
                if n == 0.0 {
                    return Err("zero vector".into());
                }
                State::vector_state(shape, *block, &(v / C64::new(n, 0.0)))
            }
            StateLit::Tracial { .. } => State::tracial(shape),
        };
        Ok(s)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AlgebraDecl {
    pub id: String,
    pub blocks: Vec<usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct WeightedRef {
    pub seminorm: String,
    #[serde(default = "one")]
    pub weight: f64,
}

fn one() -> f64 {
    1.0
}

fn yes() -> bool {
    true
}

/// Representation used by a commutator seminorm: target block sizes and
/// the source blocks placed on each target block.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RepresentationLit {
    pub blocks: Vec<usize>,
    pub layout: Vec<Vec<usize>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SeminormKind {
    Lipschitz { metric: Vec<Vec<f64>> },
    Commutator {
        algebra: String,
        dirac: Vec<ElementLit>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        representation: Option<RepresentationLit>,
    },
    Max { parts: Vec<WeightedRef> },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SeminormDecl {
    pub id: String,
    #[serde(flatten)]
    pub kind: SeminormKind,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct QcmsDecl {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metric: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub algebra: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seminorm: Option<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModuleKind {
    Free { base: String, rank: usize },
    Dsum { parts: Vec<String> },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModuleDecl {
    pub id: String,
    #[serde(flatten)]
    pub kind: ModuleKind,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BundleDecl {
    pub id: String,
    pub module: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BridgeKind {
    Correspondence { pairs: Vec<(usize, usize)> },
    Tensor,
    Identity,
    /// Pivot block sizes, pivot element, and for each side the block layout
    /// of its embedding into the pivot.
    General {
        pivot: Vec<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        x: Option<ElementLit>,
        legs: [Vec<Vec<usize>>; 2],
    },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BridgeDecl {
    pub id: String,
    pub first: String,
    pub second: String,
    #[serde(flatten)]
    pub kind: BridgeKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TunnelKind {
    Bridge {
        bridge: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        lambda: Option<f64>,
    },
    Compose { first: String, second: String, epsilon: f64 },
    Identity { space: String },
    Inverse { tunnel: String },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TunnelDecl {
    pub id: String,
    #[serde(flatten)]
    pub kind: TunnelKind,
}

/// Module element: one algebra element per component.
pub type ModuleLit = Vec<ElementLit>;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModularBridgeDecl {
    pub id: String,
    pub base_bridge: String,
    pub first: String,
    pub second: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anchors: Option<Vec<ModuleLit>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coanchors: Option<Vec<ModuleLit>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(default = "yes")]
    pub convexify: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModularTunnelKind {
    Bridge {
        modular_bridge: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        imprint_samples: Option<usize>,
    },
    Free { tunnel: String, rank: usize },
    Compose { first: String, second: String, epsilon: f64 },
    Identity { bundle: String },
    Inverse { tunnel: String },
    Fallback { first: String, second: String },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModularTunnelDecl {
    pub id: String,
    #[serde(flatten)]
    pub kind: ModularTunnelKind,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ActionDecl {
    pub id: String,
    pub bundle: String,
    /// `"C"` for scalar multiplication, otherwise a declared space.
    pub acting_qcms: String,
    /// One `p x p` matrix over the base per matrix unit of the acting
    /// algebra; when absent the acting space must be `"C"` or the base.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matrix_over_base: Option<Vec<Vec<Vec<ElementLit>>>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MetricalTunnelKind {
    Scalar { modular_tunnel: String, first: String, second: String },
    Multiplication { modular_tunnel: String, first: String, second: String },
    Compose { first: String, second: String, epsilon: f64 },
    Identity { action: String },
    Inverse { tunnel: String },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MetricalTunnelDecl {
    pub id: String,
    #[serde(flatten)]
    pub kind: MetricalTunnelKind,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum TaskOp {
    MkDistance { space: String, first: StateLit, second: StateLit },
    Diameter { space: String },
    BridgeStats { bridge: String },
    TunnelExtent { tunnel: String },
    Propinquity { first: String, second: String, candidates: Vec<String> },
    Imprint {
        modular_bridge: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        samples: Option<usize>,
    },
    ModularExtent { tunnel: String },
    DmodPropinquity {
        first: String,
        second: String,
        #[serde(default)]
        candidates: Vec<String>,
        #[serde(default = "yes")]
        fallback: bool,
    },
    MetricalExtent { tunnel: String },
    DmetPropinquity { first: String, second: String, candidates: Vec<String> },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TaskDecl {
    pub id: String,
    #[serde(flatten)]
    pub op: TaskOp,
}

fn default_samples() -> usize {
    CheckBudget::default().samples
}

fn default_tol() -> f64 {
    1e-6
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Scenario {
    pub schema: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub solver: SolverOpts,
    /// Samples per leg check.
    #[serde(default = "default_samples")]
    pub samples: usize,
    /// Tolerance for the pass flags of the report.
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub algebras: Vec<AlgebraDecl>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub seminorms: Vec<SeminormDecl>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub qcms: Vec<QcmsDecl>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub modules: Vec<ModuleDecl>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub bundles: Vec<BundleDecl>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub bridges: Vec<BridgeDecl>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tunnels: Vec<TunnelDecl>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub modular_bridges: Vec<ModularBridgeDecl>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub modular_tunnels: Vec<ModularTunnelDecl>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub actions: Vec<ActionDecl>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub metrical_tunnels: Vec<MetricalTunnelDecl>,
    #[serde(default)]
    pub tasks: Vec<TaskDecl>,
}

impl Scenario {
    pub fn empty(seed: u64) -> Self {
        Self {
            schema: SCHEMA.into(),
            seed,
            solver: SolverOpts::default(),
            samples: default_samples(),
            tol: default_tol(),
            algebras: vec![],
            seminorms: vec![],
            qcms: vec![],
            modules: vec![],
            bundles: vec![],
            bridges: vec![],
            tunnels: vec![],
            modular_bridges: vec![],
            modular_tunnels: vec![],
            actions: vec![],
            metrical_tunnels: vec![],
            tasks: vec![],
        }
    }

    pub fn parse(text: &str) -> Result<Self, ScenarioError> {
        let s: Scenario =
            serde_json::from_str(text).map_err(|e| ScenarioError { line: Some(e.line()).filter(|&l| l > 0), message: e.to_string() })?;
        if s.schema != SCHEMA {
            return Err(ScenarioError { line: line_of(text, "schema"), message: format!("unsupported schema {:?}, expected {SCHEMA:?}", s.schema) });
        }
        Ok(s)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }
}

/// One-based line of the first occurrence of `"needle"`.
pub fn line_of(text: &str, needle: &str) -> Option<usize> {
    let quoted = format!("\"{needle}\"");
    text.lines().position(|l| l.contains(&quoted)).map(|i| i + 1)
}

/// Reference or build failure for a declaration.
type BuildResult<T> = std::result::Result<T, (String, String)>;

/// Everything declared by a scenario, built and validated.
#[derive(Default)]
pub struct World {
    pub algebras: HashMap<String, AlgebraShape>,
    pub seminorms: HashMap<String, (AlgebraShape, Seminorm)>,
    pub qcms: HashMap<String, Arc<Qcms>>,
    pub modules: HashMap<String, (HilbertModule, String)>,
    pub bundles: HashMap<String, Arc<Mqvb>>,
    pub bridges: HashMap<String, (Arc<Bridge>, Option<f64>)>,
    pub tunnels: HashMap<String, Arc<Tunnel>>,
    pub modular_bridges: HashMap<String, (Arc<ModularBridge>, BridgeTunnelOpts)>,
    pub modular_tunnels: HashMap<String, Arc<ModularTunnel>>,
    pub actions: HashMap<String, Arc<MetricalBundle>>,
    pub metrical_tunnels: HashMap<String, Arc<MetricalTunnel>>,
    pub budget: CheckBudget,
}

fn get<'a, T>(map: &'a HashMap<String, T>, what: &str, id: &str) -> BuildResult<&'a T> {
    map.get(id).ok_or_else(|| (id.to_string(), format!("unknown {what} {id:?}")))
}

fn fresh<T>(map: &HashMap<String, T>, what: &str, id: &str) -> BuildResult<()> {
    if map.contains_key(id) {
        return Err((id.to_string(), format!("duplicate {what} {id:?}")));
    }
    Ok(())
}

fn at<T, E: fmt::Display>(id: &str, r: std::result::Result<T, E>) -> BuildResult<T> {
    r.map_err(|e| (id.to_string(), format!("{id}: {e}")))
}

fn matrix(id: &str, rows: &[Vec<f64>]) -> BuildResult<DMatrix<f64>> {
    let n = rows.len();
    if n == 0 || rows.iter().any(|r| r.len() != n) {
        return Err((id.into(), format!("{id}: metric must be a nonempty square matrix")));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

fn module_element(id: &str, b: &Mqvb, lit: &ModuleLit) -> BuildResult<ModElem> {
    let supports = b.module.supports();
    if lit.len() != supports.len() {
        return Err((id.into(), format!("{id}: {} components for a module with {}", lit.len(), supports.len())));
    }
    let comps = at(id, lit.iter().map(|e| e.resolve(b.module.base())).collect::<std::result::Result<Vec<_>, _>>())?;
    at(id, b.module.element(comps))
}

impl World {
    /// Builds every declaration in order; each may refer only to earlier
    /// ones.
    pub fn build(s: &Scenario, text: &str) -> Result<Self, ScenarioError> {
        let opts = SolverOpts { seed: s.seed, ..s.solver };
        let budget = CheckBudget { samples: s.samples, seed: s.seed, opts, ..CheckBudget::default() };
        let mut w = World { budget, ..World::default() };
        w.build_all(s).map_err(|(anchor, message)| ScenarioError { line: line_of(text, &anchor), message })?;
        Ok(w)
    }

    fn build_all(&mut self, s: &Scenario) -> BuildResult<()> {
        let seed = s.seed;
        let mut ordinal = 0u64;
        let mut next = || {
            ordinal += 1;
            derive_seed(seed, ordinal)
        };
        for a in &s.algebras {
            fresh(&self.algebras, "algebra", &a.id)?;
            self.algebras.insert(a.id.clone(), at(&a.id, AlgebraShape::new(a.blocks.clone()))?);
        }
        for d in &s.seminorms {
            fresh(&self.seminorms, "seminorm", &d.id)?;
            let v = self.seminorm(d)?;
            self.seminorms.insert(d.id.clone(), v);
        }
        for d in &s.qcms {
            fresh(&self.qcms, "space", &d.id)?;
            if d.id == "C" {
                return Err((d.id.clone(), "the space id \"C\" is reserved for the scalars".into()));
            }
            let q = match (&d.metric, &d.algebra, &d.seminorm) {
                (Some(m), None, None) => at(&d.id, Qcms::metric_space(d.id.clone(), &matrix(&d.id, m)?, next()))?,
                (None, a, Some(l)) => {
                    let (shape, lip) = get(&self.seminorms, "seminorm", l)?.clone();
                    if let Some(a) = a {
                        if get(&self.algebras, "algebra", a)? != &shape {
                            return Err((d.id.clone(), format!("{}: seminorm {l} is not on algebra {a}", d.id)));
                        }
                    }
                    at(&d.id, Qcms::new(d.id.clone(), shape, lip, PermissibleTriple::leibniz(), CONSTRUCTION_SAMPLES, next()))?
                }
                _ => return Err((d.id.clone(), format!("{}: give either a metric or a seminorm", d.id))),
            };
            self.qcms.insert(d.id.clone(), q);
        }
        for d in &s.modules {
            fresh(&self.modules, "module", &d.id)?;
            let v = match &d.kind {
                ModuleKind::Free { base, rank } => {
                    let q = get(&self.qcms, "space", base)?;
                    (at(&d.id, HilbertModule::free(&q.shape, *rank))?, base.clone())
                }
                ModuleKind::Dsum { parts } => {
                    let Some((first, rest)) = parts.split_first() else {
                        return Err((d.id.clone(), format!("{}: empty direct sum", d.id)));
                    };
                    let (mut m, base) = get(&self.modules, "module", first)?.clone();
                    for p in rest {
                        let (n, b) = get(&self.modules, "module", p)?;
                        if b != &base {
                            return Err((d.id.clone(), format!("{}: parts are over different spaces", d.id)));
                        }
                        m = at(&d.id, HilbertModule::direct_sum(&m, n))?;
                    }
                    (m, base)
                }
            };
            self.modules.insert(d.id.clone(), v);
        }
        for d in &s.bundles {
            fresh(&self.bundles, "bundle", &d.id)?;
            let (m, base) = get(&self.modules, "module", &d.module)?;
            let rank = m.components();
            let expected = HilbertModule::free(m.base(), rank).ok();
            if expected.as_ref() != Some(m) {
                return Err((d.id.clone(), format!("{}: bundles are built on free modules", d.id)));
            }
            let q = self.qcms[base].clone();
            self.bundles.insert(d.id.clone(), at(&d.id, qvba(q, rank, next()))?);
        }
        for d in &s.bridges {
            fresh(&self.bridges, "bridge", &d.id)?;
            let a = get(&self.qcms, "space", &d.first)?.clone();
            let b = get(&self.qcms, "space", &d.second)?.clone();
            let br = match &d.kind {
                BridgeKind::Correspondence { pairs } => at(&d.id, Bridge::correspondence(a, b, pairs))?,
                BridgeKind::Tensor => at(&d.id, Bridge::tensor(a, b))?,
                BridgeKind::Identity => {
                    if d.first != d.second {
                        return Err((d.id.clone(), format!("{}: an identity bridge joins a space to itself", d.id)));
                    }
                    at(&d.id, Bridge::identity(a))?
                }
                BridgeKind::General { pivot, x, legs } => {
                    let shape = at(&d.id, AlgebraShape::new(pivot.clone()))?;
                    let x = match x {
                        Some(x) => at(&d.id, x.resolve(&shape))?,
                        None => Element::unit(&shape),
                    };
                    let pa = at(&d.id, StarMorphism::block_layout(&a.shape, &shape, &legs[0]))?;
                    let pb = at(&d.id, StarMorphism::block_layout(&b.shape, &shape, &legs[1]))?;
                    at(&d.id, Bridge::new(d.id.clone(), a, b, x, pa, pb))?
                }
            };
            self.bridges.insert(d.id.clone(), (Arc::new(br), d.lambda));
        }
        for d in &s.tunnels {
            fresh(&self.tunnels, "tunnel", &d.id)?;
            let t = match &d.kind {
                TunnelKind::Bridge { bridge, lambda } => {
                    let (br, bl) = get(&self.bridges, "bridge", bridge)?.clone();
                    let budget = CheckBudget { seed: next(), ..self.budget };
                    let stats = at(&d.id, br.stats(&budget.opts))?;
                    let lambda = lambda.or(bl).unwrap_or(stats.length.value + 1e-6);
                    at(&d.id, tunnel_from_bridge(br, lambda, Some(&stats), true, &budget))?
                }
                TunnelKind::Compose { first, second, epsilon } => {
                    let t1 = get(&self.tunnels, "tunnel", first)?.clone();
                    let t2 = get(&self.tunnels, "tunnel", second)?.clone();
                    let budget = CheckBudget { seed: next(), ..self.budget };
                    at(&d.id, compose_tunnels(t1, t2, *epsilon, &budget))?
                }
                TunnelKind::Identity { space } => Tunnel::identity(get(&self.qcms, "space", space)?.clone()),
                TunnelKind::Inverse { tunnel } => get(&self.tunnels, "tunnel", tunnel)?.invert(),
            };
            self.tunnels.insert(d.id.clone(), Arc::new(t));
        }
        for d in &s.modular_bridges {
            fresh(&self.modular_bridges, "modular bridge", &d.id)?;
            let (br, _) = get(&self.bridges, "bridge", &d.base_bridge)?.clone();
            let a = get(&self.bundles, "bundle", &d.first)?.clone();
            let b = get(&self.bundles, "bundle", &d.second)?.clone();
            let (anchors, coanchors) = match (&d.anchors, &d.coanchors) {
                (Some(x), Some(y)) => (
                    x.iter().map(|l| module_element(&d.id, &a, l)).collect::<BuildResult<Vec<_>>>()?,
                    y.iter().map(|l| module_element(&d.id, &b, l)).collect::<BuildResult<Vec<_>>>()?,
                ),
                (None, None) => at(&d.id, unit_anchors(&a, &b))?,
                _ => return Err((d.id.clone(), format!("{}: give both anchors and coanchors or neither", d.id))),
            };
            let mut mb = at(&d.id, ModularBridge::new(br, a, b, anchors, coanchors))?;
            if d.convexify {
                mb = mb.convexify();
            }
            let o = BridgeTunnelOpts { lambda: d.lambda, epsilon: d.epsilon.unwrap_or(0.0), radius: d.radius, imprint_samples: 0 };
            self.modular_bridges.insert(d.id.clone(), (Arc::new(mb), o));
        }
        for d in &s.modular_tunnels {
            fresh(&self.modular_tunnels, "modular tunnel", &d.id)?;
            let budget = CheckBudget { seed: next(), ..self.budget };
            let t = match &d.kind {
                ModularTunnelKind::Bridge { modular_bridge, imprint_samples } => {
                    let (mb, o) = get(&self.modular_bridges, "modular bridge", modular_bridge)?.clone();
                    let o = BridgeTunnelOpts { imprint_samples: imprint_samples.unwrap_or(200), ..o };
                    at(&d.id, modular_tunnel_from_bridge(mb, &o, &budget))?
                }
                ModularTunnelKind::Free { tunnel, rank } => {
                    let base = get(&self.tunnels, "tunnel", tunnel)?.clone();
                    at(&d.id, free_module_tunnel(base, *rank, &budget))?
                }
                ModularTunnelKind::Compose { first, second, epsilon } => {
                    let t1 = get(&self.modular_tunnels, "modular tunnel", first)?.clone();
                    let t2 = get(&self.modular_tunnels, "modular tunnel", second)?.clone();
                    at(&d.id, compose_modular(t1, t2, *epsilon, &budget))?
                }
                ModularTunnelKind::Identity { bundle } => ModularTunnel::identity(get(&self.bundles, "bundle", bundle)?.clone()),
                ModularTunnelKind::Inverse { tunnel } => get(&self.modular_tunnels, "modular tunnel", tunnel)?.invert(),
                ModularTunnelKind::Fallback { first, second } => {
                    let a = get(&self.bundles, "bundle", first)?.clone();
                    let b = get(&self.bundles, "bundle", second)?.clone();
                    at(&d.id, fallback_tunnel(a, b, &budget))?
                }
            };
            self.modular_tunnels.insert(d.id.clone(), Arc::new(t));
        }
        for d in &s.actions {
            fresh(&self.actions, "action", &d.id)?;
            let b = get(&self.bundles, "bundle", &d.bundle)?.clone();
            let acting = if d.acting_qcms == "C" { scalar_space() } else { get(&self.qcms, "space", &d.acting_qcms)?.clone() };
            let action = match &d.matrix_over_base {
                Some(images) => {
                    let base = b.module.base();
                    let mut ks = Vec::with_capacity(images.len());
                    for k in images {
                        let mut rows = Vec::with_capacity(k.len());
                        for r in k {
                            rows.push(at(&d.id, r.iter().map(|e| e.resolve(base)).collect::<std::result::Result<Vec<_>, _>>())?);
                        }
                        ks.push(rows);
                    }
                    at(&d.id, ModuleAction::from_matrices(&acting.shape, &b.module, &ks))?
                }
                None if d.acting_qcms == "C" => ModuleAction::scalar(&b.module),
                None if d.acting_qcms == b.base.name => ModuleAction::by_multiplication(&b.module),
                None => return Err((d.id.clone(), format!("{}: give matrix_over_base for the action of {}", d.id, d.acting_qcms))),
            };
            let m = at(&d.id, make_metrical(b, acting, action, PermissibleTriple::leibniz(), METRICAL_SAMPLES, next()))?;
            self.actions.insert(d.id.clone(), m);
        }
        for d in &s.metrical_tunnels {
            fresh(&self.metrical_tunnels, "metrical tunnel", &d.id)?;
            let seed = next();
            let t = match &d.kind {
                MetricalTunnelKind::Scalar { modular_tunnel, first, second } | MetricalTunnelKind::Multiplication { modular_tunnel, first, second } => {
                    let m = get(&self.modular_tunnels, "modular tunnel", modular_tunnel)?.clone();
                    let a = get(&self.actions, "action", first)?.clone();
                    let b = get(&self.actions, "action", second)?.clone();
                    if matches!(d.kind, MetricalTunnelKind::Scalar { .. }) {
                        at(&d.id, scalar_metrical_tunnel(m, a, b, METRICAL_SAMPLES, seed))?
                    } else {
                        at(&d.id, multiplication_metrical_tunnel(m, a, b, METRICAL_SAMPLES, seed))?
                    }
                }
                MetricalTunnelKind::Compose { first, second, epsilon } => {
                    let t1 = get(&self.metrical_tunnels, "metrical tunnel", first)?.clone();
                    let t2 = get(&self.metrical_tunnels, "metrical tunnel", second)?.clone();
                    let budget = CheckBudget { seed, ..self.budget };
                    at(&d.id, compose_metrical(&t1, &t2, *epsilon, &budget, METRICAL_SAMPLES))?
                }
                MetricalTunnelKind::Identity { action } => MetricalTunnel::identity(get(&self.actions, "action", action)?.clone()),
                MetricalTunnelKind::Inverse { tunnel } => get(&self.metrical_tunnels, "metrical tunnel", tunnel)?.invert(),
            };
            self.metrical_tunnels.insert(d.id.clone(), Arc::new(t));
        }
        let mut ids = HashMap::new();
        for t in &s.tasks {
            if ids.insert(t.id.clone(), ()).is_some() {
                return Err((t.id.clone(), format!("duplicate task {:?}", t.id)));
            }
            self.check_task(t)?;
        }
        Ok(())
    }

    fn seminorm(&self, d: &SeminormDecl) -> BuildResult<(AlgebraShape, Seminorm)> {
        match &d.kind {
            SeminormKind::Lipschitz { metric } => {
                let m = matrix(&d.id, metric)?;
                Ok((AlgebraShape::commutative(m.nrows()), at(&d.id, lipschitz(&m))?))
            }
            SeminormKind::Commutator { algebra, dirac, representation } => {
                let shape = get(&self.algebras, "algebra", algebra)?.clone();
                let rep = match representation {
                    Some(r) => {
                        let target = at(&d.id, AlgebraShape::new(r.blocks.clone()))?;
                        at(&d.id, StarMorphism::block_layout(&shape, &target, &r.layout))?
                    }
                    None => StarMorphism::identity(&shape),
                };
                let ds = dirac.iter().map(|e| at(&d.id, e.resolve(rep.target()))).collect::<BuildResult<Vec<_>>>()?;
                Ok((shape, at(&d.id, commutator(&rep, &ds))?))
            }
            SeminormKind::Max { parts } => {
                let mut shape = None;
                let mut refs = Vec::with_capacity(parts.len());
                for p in parts {
                    let (s, l) = get(&self.seminorms, "seminorm", &p.seminorm)?;
                    if shape.get_or_insert_with(|| s.clone()) != s {
                        return Err((d.id.clone(), format!("{}: parts are on different algebras", d.id)));
                    }
                    refs.push((l, p.weight));
                }
                let Some(shape) = shape else {
                    return Err((d.id.clone(), format!("{}: empty maximum", d.id)));
                };
                Ok((shape, at(&d.id, Seminorm::combine_max(&refs))?))
            }
        }
    }

    /// Resolves the references of a task without running it.
    fn check_task(&self, t: &TaskDecl) -> BuildResult<()> {
        match &t.op {
            TaskOp::MkDistance { space, first, second } => {
                let q = get(&self.qcms, "space", space)?;
                at(&t.id, first.resolve(&q.shape))?;
                at(&t.id, second.resolve(&q.shape))?;
            }
            TaskOp::Diameter { space } => {
                get(&self.qcms, "space", space)?;
            }
            TaskOp::BridgeStats { bridge } => {
                get(&self.bridges, "bridge", bridge)?;
            }
            TaskOp::TunnelExtent { tunnel } => {
                get(&self.tunnels, "tunnel", tunnel)?;
            }
            TaskOp::Propinquity { first, second, candidates } => {
                get(&self.qcms, "space", first)?;
                get(&self.qcms, "space", second)?;
                for c in candidates {
                    get(&self.tunnels, "tunnel", c)?;
                }
            }
            TaskOp::Imprint { modular_bridge, .. } => {
                get(&self.modular_bridges, "modular bridge", modular_bridge)?;
            }
            TaskOp::ModularExtent { tunnel } => {
                get(&self.modular_tunnels, "modular tunnel", tunnel)?;
            }
            TaskOp::DmodPropinquity { first, second, candidates, .. } => {
                get(&self.bundles, "bundle", first)?;
                get(&self.bundles, "bundle", second)?;
                for c in candidates {
                    get(&self.modular_tunnels, "modular tunnel", c)?;
                }
            }
            TaskOp::MetricalExtent { tunnel } => {
                get(&self.metrical_tunnels, "metrical tunnel", tunnel)?;
            }
            TaskOp::DmetPropinquity { first, second, candidates } => {
                get(&self.actions, "action", first)?;
                get(&self.actions, "action", second)?;
                for c in candidates {
                    get(&self.metrical_tunnels, "metrical tunnel", c)?;
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalars_and_elements_parse() {
        let e: ElementLit = serde_json::from_str("[[[1, [0, 2]], [[0, -2], 3]]]").unwrap();
        let x = e.resolve(&AlgebraShape::matrix(2)).unwrap();
        assert_eq!(x.blocks[0][(0, 1)], C64::new(0.0, 2.0));
        assert!(x.is_self_adjoint(0.0));
        let v: ElementLit = serde_json::from_str("[1, [0, 1]]").unwrap();
        assert_eq!(v, ElementLit::Values(vec![Scalar::Real(1.0), Scalar::Complex([0.0, 1.0])]));
        assert!(v.resolve(&AlgebraShape::commutative(3)).is_err());
    }

    #[test]
    fn wrong_schema_is_rejected() {
        let err = Scenario::parse("{\n  \"schema\": \"other/2\"\n}").unwrap_err();
        assert_eq!(err.line, Some(2));
    }

    #[test]
    fn dangling_reference_points_at_its_line() {
        let text = "{\n \"schema\": \"propinquity-lab/1\",\n \"qcms\": [{\"id\": \"X\", \"metric\": [[0, 1], [1, 0]]}],\n \"tasks\": [\n  {\"id\": \"d\", \"op\": \"diameter\", \"space\": \"Y\"}\n ]\n}";
        let s = Scenario::parse(text).unwrap();
        let err = World::build(&s, text).err().unwrap();
        assert_eq!(err.line, Some(5));
        assert!(err.message.contains("unknown space"));
    }
}
