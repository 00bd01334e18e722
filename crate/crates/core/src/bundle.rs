//! Hilbert modules over finite-dimensional algebras, D-norms and metrized
//! quantum vector bundles.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use std::collections::HashMap;
use std::sync::{Arc, RwLock};

use crate::algebra::{
    derive_seed, matrix_units, random_element, rng_from_seed, AlgebraShape, CMat, Element, StarMorphism, C64,
};
use crate::convex::{ball_ascent, fiber_infimum, Ascent, SolverOpts};
use crate::error::{Error, Result};
use crate::estimate::{CheckReport, Estimate};
use crate::qcms::{quantum_isometry_check, LiftFn, Qcms};
use crate::seminorm::{real_matrix, Atom, Ext, Gauge, PermFn, PermissibleTriple, Seminorm};

/// How a module was assembled.
#[derive(Clone, Debug, PartialEq)]
pub enum ModuleTree {
    Free { rank: usize },
    Sum(Box<HilbertModule>, Box<HilbertModule>),
}

/// A module assembled from free modules by direct sums. Elements are lists
/// of components in the base algebra; component `j` is supported on the
/// base blocks `supports[j]`, and `<w, z> = sum_j w_j z_j*`.
#[derive(Clone, Debug, PartialEq)]
pub struct HilbertModule {
    base: AlgebraShape,
    supports: Vec<Vec<usize>>,
    pub tree: ModuleTree,
}

/// An element of a module: one base-algebra element per component, zero
/// off the component's support.
#[derive(Clone, Debug, PartialEq)]
pub struct ModElem {
    pub comps: Vec<Element>,
}

impl ModElem {
    pub fn add(&self, o: &ModElem) -> ModElem {
        ModElem { comps: self.comps.iter().zip(&o.comps).map(|(a, b)| a.add(b)).collect() }
    }

    pub fn sub(&self, o: &ModElem) -> ModElem {
        ModElem { comps: self.comps.iter().zip(&o.comps).map(|(a, b)| a.sub(b)).collect() }
    }

    pub fn scale(&self, c: C64) -> ModElem {
        ModElem { comps: self.comps.iter().map(|a| a.scale(c)).collect() }
    }

    pub fn scale_real(&self, c: f64) -> ModElem {
        ModElem { comps: self.comps.iter().map(|a| a.scale_real(c)).collect() }
    }
}

impl HilbertModule {
    pub fn free(base: &AlgebraShape, rank: usize) -> Result<Self> {
        if rank == 0 {
            return Err(Error::Validation("free module rank must be positive".into()));
        }
        let all: Vec<usize> = (0..base.num_blocks()).collect();
        Ok(Self { base: base.clone(), supports: vec![all; rank], tree: ModuleTree::Free { rank } })
    }

    /// `M (+) N` over `A (+) B`.
    pub fn direct_sum(m: &HilbertModule, n: &HilbertModule) -> Result<Self> {
        let base = m.base.direct_sum(&n.base)?;
        let k = m.base.num_blocks();
        let mut supports = m.supports.clone();
        supports.extend(n.supports.iter().map(|s| s.iter().map(|b| b + k).collect()));
        Ok(Self { base, supports, tree: ModuleTree::Sum(Box::new(m.clone()), Box::new(n.clone())) })
    }

    pub fn base(&self) -> &AlgebraShape {
        &self.base
    }

    pub fn components(&self) -> usize {
        self.supports.len()
    }

    pub fn supports(&self) -> &[Vec<usize>] {
        &self.supports
    }

    /// Real dimension of the coordinate space.
    pub fn dim(&self) -> usize {
        let b = self.base.blocks();
        self.supports.iter().map(|s| s.iter().map(|&k| 2 * b[k] * b[k]).sum::<usize>()).sum()
    }

    pub fn zero(&self) -> ModElem {
        ModElem { comps: vec![Element::zeros(&self.base); self.components()] }
    }

    pub fn check(&self, w: &ModElem) -> Result<()> {
        if w.comps.len() != self.components() {
            return Err(Error::Shape(format!("module element has {} components, expected {}", w.comps.len(), self.components())));
        }
        for (j, c) in w.comps.iter().enumerate() {
            c.check(&self.base)?;
            for (k, blk) in c.blocks.iter().enumerate() {
                if !self.supports[j].contains(&k) && blk.iter().any(|z| z.norm() > 0.0) {
                    return Err(Error::Shape(format!("component {j} is nonzero off its support")));
                }
            }
        }
        Ok(())
    }

    /// Builds an element, zeroing each component off its support.
    pub fn element(&self, comps: Vec<Element>) -> Result<ModElem> {
        if comps.len() != self.components() {
            return Err(Error::Shape(format!("{} components given, expected {}", comps.len(), self.components())));
        }
        let comps = comps
            .into_iter()
            .enumerate()
            .map(|(j, mut c)| {
                c.check(&self.base)?;
                for (k, blk) in c.blocks.iter_mut().enumerate() {
                    if !self.supports[j].contains(&k) {
                        blk.fill(C64::new(0.0, 0.0));
                    }
                }
                Ok(c)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ModElem { comps })
    }

    pub fn to_coords(&self, w: &ModElem) -> DVector<f64> {
        let mut v = Vec::with_capacity(self.dim());
        for (j, c) in w.comps.iter().enumerate() {
            for &k in &self.supports[j] {
                for z in c.blocks[k].transpose().iter() {
                    v.push(z.re);
                    v.push(z.im);
                }
            }
        }
        DVector::from_vec(v)
    }

    pub fn from_coords(&self, v: &[f64]) -> Result<ModElem> {
        if v.len() != self.dim() {
            return Err(Error::Shape(format!("module coordinates have length {}, expected {}", v.len(), self.dim())));
        }
        let b = self.base.blocks();
        let mut o = 0;
        let mut comps = Vec::with_capacity(self.components());
        for s in &self.supports {
            let mut e = Element::zeros(&self.base);
            for &k in s {
                let n = b[k];
                e.blocks[k] = CMat::from_fn(n, n, |i, j| {
                    let p = o + 2 * (i * n + j);
                    C64::new(v[p], v[p + 1])
                });
                o += 2 * n * n;
            }
            comps.push(e);
        }
        Ok(ModElem { comps })
    }

    pub fn inner(&self, w: &ModElem, z: &ModElem) -> Element {
        let mut acc = Element::zeros(&self.base);
        for (a, b) in w.comps.iter().zip(&z.comps) {
            acc = acc.add(&a.mul(&b.adjoint()));
        }
        acc
    }

    /// `sqrt(||<w, w>||)`.
    pub fn norm(&self, w: &ModElem) -> f64 {
        self.inner(w, w).opnorm().max(0.0).sqrt()
    }

    /// Left action `a w`.
    pub fn act(&self, a: &Element, w: &ModElem) -> ModElem {
        ModElem { comps: w.comps.iter().map(|c| a.mul(c)).collect() }
    }

    /// The module norm as an atom on coordinates: on base block `k` it is
    /// the operator norm of the row of components supported there.
    pub fn norm_atom(&self) -> Result<Atom> {
        let b = self.base.blocks().to_vec();
        let counts: Vec<usize> = (0..b.len()).map(|k| self.supports.iter().filter(|s| s.contains(&k)).count()).collect();
        let out: Vec<(usize, usize)> =
            (0..b.len()).filter(|&k| counts[k] > 0).map(|k| (b[k], counts[k] * b[k])).collect();
        let rows: usize = out.iter().map(|(r, c)| 2 * r * c).sum();
        let map = real_matrix(self.dim(), rows, |v| {
            let w = self.from_coords(v.as_slice()).expect("coords");
            let mut y = Vec::with_capacity(rows);
            for k in 0..b.len() {
                if counts[k] == 0 {
                    continue;
                }
                let n = b[k];
                let row: Vec<&CMat> = (0..self.components()).filter(|&j| self.supports[j].contains(&k)).map(|j| &w.comps[j].blocks[k]).collect();
                for i in 0..n {
                    for blk in &row {
                        for q in 0..n {
                            y.push(blk[(i, q)].re);
                            y.push(blk[(i, q)].im);
                        }
                    }
                }
            }
            DVector::from_vec(y)
        });
        Atom::new(1.0, map, out)
    }

    /// Real-linear map `z -> <w, z>` from coordinates to full base coordinates.
    pub fn inner_map(&self, w: &ModElem) -> DMatrix<f64> {
        real_matrix(self.dim(), self.base.real_dim(), |v| {
            let z = self.from_coords(v.as_slice()).expect("coords");
            self.inner(w, &z).to_real_coords()
        })
    }

    /// Real-linear map `w -> <w, z>` from coordinates to full base coordinates.
    pub fn inner_map_left(&self, z: &ModElem) -> DMatrix<f64> {
        real_matrix(self.dim(), self.base.real_dim(), |v| {
            let w = self.from_coords(v.as_slice()).expect("coords");
            self.inner(&w, z).to_real_coords()
        })
    }

    /// Module map induced componentwise by an algebra morphism, as a real
    /// matrix between coordinate spaces.
    pub fn componentwise(&self, pi: &StarMorphism, target: &HilbertModule) -> DMatrix<f64> {
        real_matrix(self.dim(), target.dim(), |v| {
            let w = self.from_coords(v.as_slice()).expect("coords");
            let comps = w.comps.iter().map(|c| pi.apply(c)).collect();
            target.to_coords(&target.element(comps).expect("shape"))
        })
    }

    /// Random element of mixed character: generic, rescaled, close to
    /// constant components, or small.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, i: usize) -> ModElem {
        let comps: Vec<Element> = (0..self.components()).map(|_| random_element(&self.base, rng)).collect();
        let w = self.element(comps).expect("shape");
        let n = self.norm(&w).max(1e-12);
        let w = w.scale_real(1.0 / n);
        match i % 4 {
            0 => w,
            1 => w.scale_real(rng.gen_range(0.1..3.0)),
            2 => {
                let consts: Vec<Element> = (0..self.components())
                    .map(|_| Element::unit(&self.base).scale(C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))))
                    .collect();
                let c = self.element(consts).expect("shape");
                c.add(&w.scale_real(rng.gen_range(0.0..0.2)))
            }
            _ => w.scale_real(rng.gen_range(0.0..0.05)),
        }
    }

    /// Samples the Hilbert-module identities: linearity in the first slot
    /// over the base, conjugate symmetry, positivity and Cauchy-Schwarz.
    pub fn axioms_check(&self, samples: usize, seed: u64) -> CheckReport {
        let mut rep = CheckReport::new("Hilbert module axioms", 1e-9);
        let mut rng = rng_from_seed(seed);
        for i in 0..samples {
            let w = self.sample(&mut rng, i);
            let z = self.sample(&mut rng, i + 1);
            let a = random_element(&self.base, &mut rng);
            let scale = 1.0 + self.norm(&w) * self.norm(&z) * (1.0 + a.opnorm());
            let lin = self.inner(&self.act(&a, &w), &z).sub(&a.mul(&self.inner(&w, &z))).opnorm();
            rep.record(-lin / scale, || format!("sample {i}: <aw, z> != a<w, z> by {lin:e}"));
            let sym = self.inner(&w, &z).sub(&self.inner(&z, &w).adjoint()).opnorm();
            rep.record(-sym / scale, || format!("sample {i}: conjugate symmetry off by {sym:e}"));
            let ww = self.inner(&w, &w);
            let lmin = ww.blocks.iter().map(|b| {
                let h = (b + b.adjoint()) * C64::new(0.5, 0.0);
                h.symmetric_eigen().eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min)
            }).fold(f64::INFINITY, f64::min);
            rep.record(lmin / scale, || format!("sample {i}: <w, w> has eigenvalue {lmin:e}"));
            let cs = self.norm(&w) * self.norm(&z) - self.inner(&w, &z).opnorm();
            rep.record(cs / scale, || format!("sample {i}: Cauchy-Schwarz fails by {cs:e}"));
        }
        rep
    }
}

/// Provenance of a bundle, used to pick exact evaluation paths.
#[derive(Clone, Debug, PartialEq)]
pub enum BundleFamily {
    /// `A^p` with `D = max(||w||, L(Re w_j), L(Im w_j))`.
    FreeLipschitz { rank: usize },
    General,
}

/// Findings of the D-norm checks.
#[derive(Clone, Debug)]
pub struct DNormReport {
    pub dominates: CheckReport,
    pub positive: CheckReport,
    pub inner_leibniz: CheckReport,
}

impl DNormReport {
    pub fn pass(&self) -> bool {
        self.dominates.pass && self.positive.pass && self.inner_leibniz.pass
    }

    pub fn worst_margin(&self) -> f64 {
        self.dominates.worst_margin.min(self.positive.worst_margin).min(self.inner_leibniz.worst_margin)
    }
}

impl std::fmt::Display for DNormReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}; {}; {}", self.dominates, self.positive, self.inner_leibniz)
    }
}

/// A module with a D-norm over a quantum compact metric space.
#[derive(Debug)]
pub struct Mqvb {
    pub name: String,
    pub module: HilbertModule,
    pub dnorm: Seminorm,
    pub base: Arc<Qcms>,
    pub triple: PermissibleTriple,
    pub family: BundleFamily,
    pub report: DNormReport,
}

/// Sample budget used when validating a new bundle.
pub const BUNDLE_SAMPLES: usize = 500;

impl Mqvb {
    pub fn new(
        name: impl Into<String>,
        module: HilbertModule,
        dnorm: Seminorm,
        base: Arc<Qcms>,
        triple: PermissibleTriple,
        family: BundleFamily,
        samples: usize,
        seed: u64,
    ) -> Result<Arc<Self>> {
        let name = name.into();
        if module.base() != &base.shape {
            return Err(Error::Shape(format!("{name}: module base differs from the space")));
        }
        if dnorm.dim() != module.dim() {
            return Err(Error::Shape(format!("{name}: D-norm is not on the module coordinates")));
        }
        let report = dnorm_validate_parts(&module, &dnorm, &base.lip, &triple, samples, seed);
        if !report.pass() {
            return Err(Error::Validation(format!("{name}: {report}")));
        }
        Ok(Arc::new(Self { name, module, dnorm, base, triple, family, report }))
    }

    pub fn d(&self, w: &ModElem) -> f64 {
        self.dnorm.eval(&self.module.to_coords(w))
    }
}

/// `x, y -> 8 p F(x, y, x, y)`.
pub fn free_module_h(triple: &PermissibleTriple, p: usize) -> PermFn {
    let f = triple.f.clone();
    PermFn::new(format!("8*{p}*F(x,y,x,y)"), 2, move |a| 8.0 * p as f64 * f.call(&[a[0], a[1], a[0], a[1]]))
}

/// Free module `A^p` with `D(w) = max(||w||, max_j L(Re w_j), max_j L(Im w_j))`.
pub fn qvba(x: Arc<Qcms>, p: usize, seed: u64) -> Result<Arc<Mqvb>> {
    let module = HilbertModule::free(&x.shape, p)?;
    let dim = module.dim();
    let mut parts = vec![Seminorm::from_atoms(dim, vec![module.norm_atom()?])?];
    let sa_t = x.shape.sa_embedding().transpose();
    for j in 0..p {
        for imag in [false, true] {
            let m = real_matrix(dim, x.shape.sa_dim(), |v| {
                let w = module.from_coords(v.as_slice()).expect("coords");
                let c = &w.comps[j];
                let (re, im) = c.re_im();
                let part = if imag { im } else { re };
                &sa_t * part.to_real_coords()
            });
            parts.push(x.lip.pullback(&m)?);
        }
    }
    let refs: Vec<(&Seminorm, f64)> = parts.iter().map(|s| (s, 1.0)).collect();
    let dnorm = Seminorm::combine_max(&refs)?;
    let triple = x.triple.with_h(free_module_h(&x.triple, p));
    Mqvb::new(format!("{}^{p}", x.name), module, dnorm, x.clone(), triple, BundleFamily::FreeLipschitz { rank: p }, BUNDLE_SAMPLES, seed)
}

fn dnorm_validate_parts(
    module: &HilbertModule,
    dnorm: &Seminorm,
    lip: &Seminorm,
    triple: &PermissibleTriple,
    samples: usize,
    seed: u64,
) -> DNormReport {
    let mut dominates = CheckReport::new("D dominates the module norm", 1e-8);
    let mut positive = CheckReport::new("D is positive", 1e-8);
    let mut inner = CheckReport::new("inner quasi-Leibniz", 1e-8);
    let mut rng = rng_from_seed(seed);
    let z0 = dnorm.eval(&DVector::zeros(module.dim()));
    positive.record(-z0.abs(), || format!("D(0) = {z0:e}"));
    for i in 0..samples {
        let w = module.sample(&mut rng, i);
        let z = module.sample(&mut rng, i / 4 + i);
        let dw = dnorm.eval(&module.to_coords(&w));
        let dz = dnorm.eval(&module.to_coords(&z));
        let nw = module.norm(&w);
        dominates.record(dw - nw, || format!("sample {i}: D {dw:.6e} < norm {nw:.6e}"));
        if nw > 0.0 {
            positive.record(if dw > 0.0 { 0.0 } else { -1.0 }, || format!("sample {i}: D vanishes on a nonzero element"));
        }
        let (re, im) = module.inner(&w, &z).re_im();
        let lhs = lip.eval(&re.to_sa_coords()).max(lip.eval(&im.to_sa_coords()));
        let rhs = triple.h(dw, dz);
        inner.record(rhs - lhs, || format!("sample {i}: L(<w, z>) = {lhs:.6e} > H = {rhs:.6e}"));
    }
    DNormReport { dominates, positive, inner_leibniz: inner }
}

/// Checks `D >= ||.||`, positivity and the inner quasi-Leibniz inequality
/// on random pairs.
pub fn dnorm_validate(b: &Mqvb, samples: usize, seed: u64) -> DNormReport {
    dnorm_validate_parts(&b.module, &b.dnorm, &b.base.lip, &b.triple, samples, seed)
}

/// `sup { ||<w - z, u>|| : D(u) <= 1 }`.
///
/// For free modules with the Lipschitz D-norm over a commutative base the
/// constant unit vectors are in the ball, so the value is `||w - z||`;
/// otherwise an ascent over the ball gives a lower bound.
pub fn modular_mk(b: &Mqvb, w: &ModElem, z: &ModElem, opts: &SolverOpts) -> Result<Estimate> {
    b.module.check(w)?;
    b.module.check(z)?;
    let diff = w.sub(z);
    let n = b.module.norm(&diff);
    if n == 0.0 {
        return Ok(Estimate::exact(0.0));
    }
    if matches!(b.family, BundleFamily::FreeLipschitz { .. }) && b.base.is_commutative() {
        return Ok(Estimate::exact(n));
    }
    let m = b.module.inner_map(&diff);
    let base = b.module.base().clone();
    let objective = move |u: &DVector<f64>| {
        let e = Element::from_real_coords(&base, (&m * u).as_slice()).expect("coords");
        let (v, g) = e.opnorm_with_subgradient();
        (v, m.transpose() * g)
    };
    let prob = Ascent { ball: &b.dnorm, objective: &objective, flat: None, to_boundary: true };
    let start = b.module.to_coords(&diff.scale_real(1.0 / b.d(&diff).max(1e-300)));
    let mut e = ball_ascent(&prob, &[start], opts);
    e.value = e.value.min(n);
    Ok(e)
}

/// A module map `Theta` over an algebra morphism `theta`, stored as a real
/// matrix on module coordinates.
#[derive(Clone, Debug)]
pub struct ModularMorphism {
    pub theta: StarMorphism,
    pub source: HilbertModule,
    pub target: HilbertModule,
    map: DMatrix<f64>,
}

impl ModularMorphism {
    /// Verifies `Theta(a w) = theta(a) Theta(w)` on matrix units and basis
    /// elements.
    pub fn new(theta: StarMorphism, source: HilbertModule, target: HilbertModule, map: DMatrix<f64>) -> Result<Self> {
        if theta.source() != source.base() || theta.target() != target.base() {
            return Err(Error::Shape("module morphism: algebra morphism does not match the bases".into()));
        }
        if map.nrows() != target.dim() || map.ncols() != source.dim() {
            return Err(Error::Shape("module morphism matrix has wrong dimensions".into()));
        }
        let m = Self { theta, source, target, map };
        let units = matrix_units(m.source.base());
        let mut e = vec![0.0; m.source.dim()];
        for c in 0..m.source.dim() {
            e[c] = 1.0;
            let w = m.source.from_coords(&e)?;
            e[c] = 0.0;
            let tw = m.apply(&w);
            for u in &units {
                let lhs = m.apply(&m.source.act(u, &w));
                let rhs = m.target.act(&m.theta.apply(u), &tw);
                let d = m.target.to_coords(&lhs.sub(&rhs)).amax();
                if d > 1e-10 {
                    return Err(Error::Validation(format!("module map is not a module morphism (defect {d:e})")));
                }
            }
        }
        Ok(m)
    }

    pub fn from_fn<F: Fn(&ModElem) -> ModElem>(theta: StarMorphism, source: HilbertModule, target: HilbertModule, f: F) -> Result<Self> {
        let map = real_matrix(source.dim(), target.dim(), |v| {
            let w = source.from_coords(v.as_slice()).expect("coords");
            target.to_coords(&f(&w))
        });
        Self::new(theta, source, target, map)
    }

    pub fn identity(module: &HilbertModule) -> Self {
        Self::new(StarMorphism::identity(module.base()), module.clone(), module.clone(), DMatrix::identity(module.dim(), module.dim()))
            .expect("identity module map")
    }

    pub fn map(&self) -> &DMatrix<f64> {
        &self.map
    }

    pub fn apply(&self, w: &ModElem) -> ModElem {
        let v = &self.map * self.source.to_coords(w);
        self.target.from_coords(v.as_slice()).expect("image")
    }

    pub fn is_surjective(&self) -> bool {
        self.map.rank(1e-9) == self.target.dim()
    }

    /// `self o first`.
    pub fn after(&self, first: &ModularMorphism) -> Result<Self> {
        if first.target != self.source {
            return Err(Error::Shape("module composition: target and source differ".into()));
        }
        Self::new(self.theta.after(&first.theta)?, first.source.clone(), self.target.clone(), &self.map * &first.map)
    }

    /// Samples `theta(<w, z>) = <Theta w, Theta z>`.
    pub fn inner_law_check(&self, samples: usize, seed: u64) -> CheckReport {
        let mut rep = CheckReport::new("inner product preserved", 1e-9);
        let mut rng = rng_from_seed(seed);
        for i in 0..samples {
            let w = self.source.sample(&mut rng, i);
            let z = self.source.sample(&mut rng, i + 2);
            let lhs = self.theta.apply(&self.source.inner(&w, &z));
            let rhs = self.target.inner(&self.apply(&w), &self.apply(&z));
            let d = lhs.sub(&rhs).opnorm() / (1.0 + self.source.norm(&w) * self.source.norm(&z));
            rep.record(-d, || format!("sample {i}: defect {d:e}"));
        }
        rep
    }
}

/// Canonical projections of `M (+) N` onto `M` and `N`.
pub fn sum_projections(module: &HilbertModule) -> Result<(ModularMorphism, ModularMorphism)> {
    let (m, n) = match &module.tree {
        ModuleTree::Sum(m, n) => (m.as_ref().clone(), n.as_ref().clone()),
        _ => return Err(Error::Unsupported("not a direct-sum module".into())),
    };
    let sum = crate::algebra::direct_sum(m.base(), n.base())?;
    let ka = m.base().num_blocks();
    let pm = m.components();
    let first = ModularMorphism::from_fn(sum.proj_first, module.clone(), m.clone(), |w| ModElem {
        comps: w.comps[..pm].iter().map(|c| Element { blocks: c.blocks[..ka].to_vec() }).collect(),
    })?;
    let second = ModularMorphism::from_fn(sum.proj_second, module.clone(), n.clone(), |w| ModElem {
        comps: w.comps[pm..].iter().map(|c| Element { blocks: c.blocks[ka..].to_vec() }).collect(),
    })?;
    Ok((first, second))
}

/// Embeds `(w, z)` of `M`, `N` into `M (+) N`.
pub fn sum_join(module: &HilbertModule, w: &ModElem, z: &ModElem) -> Result<ModElem> {
    let (m, n) = match &module.tree {
        ModuleTree::Sum(m, n) => (m, n),
        _ => return Err(Error::Unsupported("not a direct-sum module".into())),
    };
    let mut comps = Vec::with_capacity(module.components());
    for c in &w.comps {
        comps.push(crate::algebra::DirectSum::join(c, &Element::zeros(n.base())));
    }
    for c in &z.comps {
        comps.push(crate::algebra::DirectSum::join(&Element::zeros(m.base()), c));
    }
    module.element(comps)
}

/// Checks `|inf { D_src(u) : Theta u = w } - D_dst(w)| <= tol` on sampled
/// `w`, and optionally that the algebra morphism is a quantum isometry.
#[allow(clippy::too_many_arguments)]
pub fn modular_isometry_check(
    morph: &ModularMorphism,
    src: &Mqvb,
    dst: &Mqvb,
    samples: usize,
    seed: u64,
    tol: f64,
    lift: Option<LiftFn<'_>>,
    check_base: bool,
    opts: &SolverOpts,
) -> Result<CheckReport> {
    if morph.source != src.module || morph.target != dst.module {
        return Err(Error::Shape("module morphism does not connect the given bundles".into()));
    }
    if !morph.is_surjective() {
        return Err(Error::Precondition("modular isometry check needs a surjection".into()));
    }
    let mut rep = CheckReport::new("modular isometry", tol);
    if check_base {
        let base = quantum_isometry_check(&morph.theta, &src.base, &dst.base, samples.min(20), derive_seed(seed, 1), tol, None, opts)?;
        rep.merge(&base);
    }
    let mut rng = rng_from_seed(seed);
    for i in 0..samples {
        let w = dst.module.to_coords(&dst.module.sample(&mut rng, i));
        let target = dst.dnorm.eval(&w);
        let hints: Vec<DVector<f64>> = lift.map(|f| vec![f(&w)]).unwrap_or_default();
        let stop = target + 0.1 * tol * target.max(1.0);
        let q = fiber_infimum(&src.dnorm, morph.map(), &w, &hints, Some(stop), &opts.with_seed(derive_seed(opts.seed, i as u64)))?;
        let diff = (q.value - target).abs() / target.max(1.0);
        rep.record(-diff, || format!("sample {i}: quotient {:.6e} vs target {target:.6e}", q.value));
    }
    Ok(rep)
}

/// `w -> inf { D(u) : Theta u = w }`, memoized per evaluation point.
struct QuotientGauge {
    dnorm: Seminorm,
    map: DMatrix<f64>,
    opts: SolverOpts,
    cache: RwLock<HashMap<Vec<u64>, Ext>>,
}

impl Gauge for QuotientGauge {
    fn dim(&self) -> usize {
        self.map.nrows()
    }

    fn eval(&self, v: &DVector<f64>) -> Ext {
        let key: Vec<u64> = v.iter().map(|x| x.to_bits()).collect();
        if let Some(e) = self.cache.read().expect("cache lock").get(&key) {
            return *e;
        }
        let e = match fiber_infimum(&self.dnorm, &self.map, v, &[], None, &self.opts) {
            Ok(est) if est.infinite => Ext::Infinite,
            Ok(est) => Ext::Finite(est.value),
            Err(_) => Ext::Infinite,
        };
        self.cache.write().expect("cache lock").insert(key, e);
        e
    }

    fn describe(&self) -> String {
        "quotient D-norm".into()
    }
}

/// The quotient D-norm `w -> inf { D(u) : Theta u = w }` on the target
/// module coordinates. It may take the value `+infinity` on points outside
/// the image, which cannot happen for a surjection.
pub fn quotient_dnorm(morph: &ModularMorphism, dnorm: &Seminorm, opts: &SolverOpts) -> Result<Seminorm> {
    if !morph.is_surjective() {
        return Err(Error::Precondition("quotient D-norm needs a surjection".into()));
    }
    if dnorm.dim() != morph.source.dim() {
        return Err(Error::Shape("D-norm is not on the source module".into()));
    }
    let g = QuotientGauge { dnorm: dnorm.clone(), map: morph.map().clone(), opts: *opts, cache: RwLock::new(HashMap::new()) };
    Seminorm::zero(morph.target.dim()).with_gauge(1.0, Arc::new(g))
}

/// The target module carrying the quotient D-norm over `base` (which should
/// be the quotient space of the source base along `theta`).
pub fn quotient_bundle(src: &Mqvb, morph: &ModularMorphism, base: Arc<Qcms>, samples: usize, seed: u64, opts: &SolverOpts) -> Result<Arc<Mqvb>> {
    if morph.source != src.module {
        return Err(Error::Shape("module morphism does not start at the bundle".into()));
    }
    let d = quotient_dnorm(morph, &src.dnorm, opts)?;
    Mqvb::new(format!("{}/q", src.name), morph.target.clone(), d, base, src.triple.clone(), BundleFamily::General, samples, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(n: usize, h: f64) -> DMatrix<f64> {
        DMatrix::from_fn(n, n, |i, j| (i as f64 - j as f64).abs() * h)
    }

    fn c(re: f64, im: f64) -> Element {
        Element::from_values(&[C64::new(re, im)])
    }

    #[test]
    fn inner_product_examples() {
        let s = AlgebraShape::commutative(1);
        let m = HilbertModule::free(&s, 2).unwrap();
        let w = m.element(vec![c(1.0, 0.0), c(0.0, 0.0)]).unwrap();
        let z = m.element(vec![c(0.0, 0.0), c(1.0, 0.0)]).unwrap();
        assert_eq!(m.inner(&w, &z).opnorm(), 0.0);
        assert!((m.norm(&w) - 1.0).abs() < 1e-15 && (m.norm(&z) - 1.0).abs() < 1e-15);
        assert_eq!(m.inner(&w, &m.zero()).opnorm(), 0.0);
        let x = AlgebraShape::commutative(3);
        let one = HilbertModule::free(&x, 1).unwrap();
        let u = one.element(vec![Element::unit(&x)]).unwrap();
        assert_eq!(one.inner(&u, &u), Element::unit(&x));
    }

    #[test]
    fn module_axioms_hold() {
        let s = AlgebraShape::new(vec![1, 2]).unwrap();
        let m = HilbertModule::free(&s, 2).unwrap();
        let n = HilbertModule::free(&AlgebraShape::commutative(2), 1).unwrap();
        let sum = HilbertModule::direct_sum(&m, &n).unwrap();
        assert!(m.axioms_check(200, 1).pass);
        assert!(sum.axioms_check(200, 2).pass);
    }

    #[test]
    fn norm_atom_is_module_norm() {
        let s = AlgebraShape::new(vec![2, 1]).unwrap();
        let m = HilbertModule::free(&s, 3).unwrap();
        let a = Seminorm::from_atoms(m.dim(), vec![m.norm_atom().unwrap()]).unwrap();
        let mut rng = rng_from_seed(4);
        for i in 0..20 {
            let w = m.sample(&mut rng, i);
            assert!((a.eval(&m.to_coords(&w)) - m.norm(&w)).abs() < 1e-10);
        }
    }

    #[test]
    fn one_point_qvba_is_modulus() {
        let p = Qcms::metric_space("pt", &DMatrix::zeros(1, 1), 1).unwrap();
        let b = qvba(p, 1, 1).unwrap();
        let w = b.module.element(vec![c(0.6, -0.8)]).unwrap();
        assert!((b.d(&w) - 1.0).abs() < 1e-12);
        let z = b.module.element(vec![c(0.1, 0.2)]).unwrap();
        let k = modular_mk(&b, &w, &z, &SolverOpts::default()).unwrap();
        assert!((k.value - ((0.5f64).powi(2) + 1.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn qvba_unit_vector_and_checks() {
        let x = Qcms::metric_space("x", &line(3, 1.0), 1).unwrap();
        let b = qvba(x.clone(), 2, 1).unwrap();
        let e = b.module.element(vec![Element::unit(&x.shape), Element::zeros(&x.shape)]).unwrap();
        assert!((b.d(&e) - 1.0).abs() < 1e-12);
        assert!(b.report.pass());
        assert_eq!(b.d(&b.module.zero()), 0.0);
    }

    #[test]
    fn halved_dnorm_fails_dominance() {
        let x = Qcms::metric_space("x", &line(2, 1.0), 1).unwrap();
        let b = qvba(x.clone(), 1, 1).unwrap();
        let half = b.dnorm.scaled(0.5).unwrap();
        let r = dnorm_validate_parts(&b.module, &half, &x.lip, &b.triple, 50, 1);
        assert!(!r.dominates.pass);
    }

    #[test]
    fn modular_mk_descent_matches_exact_path() {
        // Ascent on the ball against the closed form for a commutative base.
        let x = Qcms::metric_space("x", &line(3, 0.5), 1).unwrap();
        let b = qvba(x, 2, 1).unwrap();
        let mut rng = rng_from_seed(9);
        let w = b.module.sample(&mut rng, 0);
        let z = b.module.sample(&mut rng, 1);
        let exact = modular_mk(&b, &w, &z, &SolverOpts::default()).unwrap();
        let general = Mqvb {
            name: "g".into(),
            module: b.module.clone(),
            dnorm: b.dnorm.clone(),
            base: b.base.clone(),
            triple: b.triple.clone(),
            family: BundleFamily::General,
            report: b.report.clone(),
        };
        let approx = modular_mk(&general, &w, &z, &SolverOpts::default()).unwrap();
        assert!(approx.value <= exact.value + 1e-12);
        assert!((approx.value - exact.value).abs() < 1e-3 * exact.value, "{} vs {}", approx.value, exact.value);
    }

    #[test]
    fn identity_is_modular_isometry() {
        let x = Qcms::metric_space("x", &line(2, 1.0), 1).unwrap();
        let b = qvba(x, 1, 1).unwrap();
        let id = ModularMorphism::identity(&b.module);
        let r = modular_isometry_check(&id, &b, &b, 10, 1, 1e-6, None, true, &SolverOpts::default()).unwrap();
        assert!(r.pass, "{r}");
        let doubled = Mqvb {
            name: "2b".into(),
            module: b.module.clone(),
            dnorm: b.dnorm.scaled(2.0).unwrap(),
            base: b.base.clone(),
            triple: b.triple.clone(),
            family: BundleFamily::General,
            report: b.report.clone(),
        };
        let r = modular_isometry_check(&id, &b, &doubled, 10, 1, 1e-6, None, false, &SolverOpts::default()).unwrap();
        assert!(!r.pass);
    }

    #[test]
    fn quotient_of_sum_matches_grid() {
        // M = N = C over C (+) C with D(w, z) = max(|w|, |z|, 2|w - z|):
        // inf over z of D(w, z) is |w| (take z = w).
        let pt = AlgebraShape::commutative(1);
        let m = HilbertModule::free(&pt, 1).unwrap();
        let sum = HilbertModule::direct_sum(&m, &m).unwrap();
        let norm = Seminorm::from_atoms(sum.dim(), vec![sum.norm_atom().unwrap()]).unwrap();
        let diff = real_matrix(sum.dim(), 2, |v| DVector::from_vec(vec![v[0] - v[2], v[1] - v[3]]));
        let coup = Seminorm::from_atoms(sum.dim(), vec![Atom::new(2.0, diff, vec![(1, 1)]).unwrap()]).unwrap();
        let d = Seminorm::combine_max(&[(&norm, 1.0), (&coup, 1.0)]).unwrap();
        let (p1, _) = sum_projections(&sum).unwrap();
        let q = quotient_dnorm(&p1, &d, &SolverOpts::default()).unwrap();
        for (re, im) in [(1.0, 0.0), (0.3, -0.4), (0.0, 0.0)] {
            let v = DVector::from_vec(vec![re, im]);
            // Grid oracle over z in [-2, 2]^2.
            let mut best = f64::INFINITY;
            for a in 0..=80 {
                for b in 0..=80 {
                    let z = (-2.0 + a as f64 * 0.05, -2.0 + b as f64 * 0.05);
                    let u = DVector::from_vec(vec![re, im, z.0, z.1]);
                    best = best.min(d.eval(&u));
                }
            }
            let got = q.eval(&v);
            assert!((got - best).abs() < 1e-6, "{got} vs {best}");
        }
    }

    #[test]
    fn projection_preserves_inner_products() {
        let x = AlgebraShape::commutative(2);
        let m = HilbertModule::free(&x, 2).unwrap();
        let n = HilbertModule::free(&AlgebraShape::matrix(2), 1).unwrap();
        let sum = HilbertModule::direct_sum(&m, &n).unwrap();
        let (p1, p2) = sum_projections(&sum).unwrap();
        assert!(p1.inner_law_check(30, 1).pass && p2.inner_law_check(30, 2).pass);
        let mut rng = rng_from_seed(3);
        let w = m.sample(&mut rng, 0);
        let z = n.sample(&mut rng, 0);
        let j = sum_join(&sum, &w, &z).unwrap();
        assert_eq!(p1.apply(&j), w);
    }
}
