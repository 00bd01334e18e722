//! Metrical bundles: a second quantum metric space acting on a metrized
//! bundle by adjointable operators, metrical tunnels, their composition and
//! the dual metrical propinquity estimate.

use nalgebra::{DMatrix, DVector};
use std::sync::Arc;

use crate::algebra::{derive_seed, matrix_units, random_element, random_real_vector, rng_from_seed, AlgebraShape, Element, C64};
use crate::bundle::{HilbertModule, ModElem, Mqvb};
use crate::convex::{orthonormal_basis, SolverOpts};
use crate::error::{Error, Result};
use crate::estimate::{CheckReport, Estimate};
use crate::modular::{compose_modular, module_target_set, ray_extent, ModularTunnel};
use crate::qcms::bridge::Side;
use crate::qcms::tunnel::{compose_tunnels, CheckBudget, Tunnel};
use crate::qcms::Qcms;
use crate::seminorm::{real_matrix, test_element, PermissibleTriple};

/// Sample count for the G-condition checks.
pub const METRICAL_SAMPLES: usize = 500;

/// A unital *-representation of an acting algebra by module operators,
/// stored as one real operator on module coordinates per full real
/// coordinate of the acting algebra.
#[derive(Clone, Debug, PartialEq)]
pub struct ModuleAction {
    pub acting: AlgebraShape,
    pub module: HilbertModule,
    gens: Vec<DMatrix<f64>>,
}

impl ModuleAction {
    /// Action from a function that is complex linear in the acting element.
    pub fn from_fn<F: Fn(&Element, &ModElem) -> ModElem>(acting: &AlgebraShape, module: &HilbertModule, f: F) -> Result<Self> {
        let n = acting.real_dim();
        let mut gens = Vec::with_capacity(n);
        for k in 0..n {
            let mut e = vec![0.0; n];
            e[k] = 1.0;
            let b = Element::from_real_coords(acting, &e)?;
            gens.push(real_matrix(module.dim(), module.dim(), |v| {
                let w = module.from_coords(v.as_slice()).expect("coords");
                module.to_coords(&f(&b, &w))
            }));
        }
        Ok(Self { acting: acting.clone(), module: module.clone(), gens })
    }

    /// The complex numbers acting by scalar multiplication.
    pub fn scalar(module: &HilbertModule) -> Self {
        Self::from_fn(&AlgebraShape::commutative(1), module, |b, w| w.scale(b.blocks[0][(0, 0)])).expect("scalar action")
    }

    /// The base algebra acting by left multiplication. Adjointable only
    /// when the base is commutative.
    pub fn by_multiplication(module: &HilbertModule) -> Self {
        Self::from_fn(module.base(), module, |b, w| module.act(b, w)).expect("multiplication action")
    }

    /// Action on a module with `p` components given by one `p x p` matrix
    /// over the base per matrix unit of the acting algebra (in the order of
    /// [`matrix_units`]); `(b w)_j = sum_i w_i K(b)_ij`.
    pub fn from_matrices(acting: &AlgebraShape, module: &HilbertModule, images: &[Vec<Vec<Element>>]) -> Result<Self> {
        let units = matrix_units(acting);
        let p = module.components();
        if images.len() != units.len() {
            return Err(Error::Shape(format!("{} images for {} matrix units", images.len(), units.len())));
        }
        for k in images {
            if k.len() != p || k.iter().any(|r| r.len() != p) {
                return Err(Error::Shape(format!("action images must be {p} x {p} matrices")));
            }
            for r in k {
                for e in r {
                    e.check(module.base())?;
                }
            }
        }
        let apply = |k: &Vec<Vec<Element>>, c: C64, w: &ModElem| -> ModElem {
            let comps = (0..p)
                .map(|j| {
                    let mut acc = Element::zeros(module.base());
                    for i in 0..p {
                        acc = acc.add(&w.comps[i].mul(&k[i][j]));
                    }
                    acc.scale(c)
                })
                .collect();
            module.element(comps).expect("shape")
        };
        let n = acting.real_dim();
        let mut gens = Vec::with_capacity(n);
        // Full real coordinates run over matrix units, real then imaginary.
        for (u, k) in images.iter().enumerate() {
            for c in [C64::new(1.0, 0.0), C64::new(0.0, 1.0)] {
                gens.push(real_matrix(module.dim(), module.dim(), |v| {
                    let w = module.from_coords(v.as_slice()).expect("coords");
                    module.to_coords(&apply(k, c, &w))
                }));
            }
            debug_assert!(u < units.len());
        }
        Ok(Self { acting: acting.clone(), module: module.clone(), gens })
    }

    /// `(d1, d2)(w, z) = (d1 w, d2 z)` on `M (+) N`.
    pub fn direct_sum(first: &ModuleAction, second: &ModuleAction) -> Result<Self> {
        let acting = first.acting.direct_sum(&second.acting)?;
        let module = HilbertModule::direct_sum(&first.module, &second.module)?;
        let (m, n) = (first.module.dim(), second.module.dim());
        let mut gens = Vec::with_capacity(first.gens.len() + second.gens.len());
        for g in &first.gens {
            let mut t = DMatrix::zeros(m + n, m + n);
            t.view_mut((0, 0), (m, m)).copy_from(g);
            gens.push(t);
        }
        for g in &second.gens {
            let mut t = DMatrix::zeros(m + n, m + n);
            t.view_mut((m, m), (n, n)).copy_from(g);
            gens.push(t);
        }
        Ok(Self { acting, module, gens })
    }

    /// Real operator on module coordinates for `b`.
    pub fn operator(&self, b: &Element) -> DMatrix<f64> {
        let c = b.to_real_coords();
        let d = self.module.dim();
        let mut t = DMatrix::zeros(d, d);
        for (k, g) in self.gens.iter().enumerate() {
            if c[k] != 0.0 {
                t += g * c[k];
            }
        }
        t
    }

    pub fn apply_coords(&self, b: &Element, w: &DVector<f64>) -> DVector<f64> {
        self.operator(b) * w
    }

    pub fn apply(&self, b: &Element, w: &ModElem) -> ModElem {
        let v = self.apply_coords(b, &self.module.to_coords(w));
        self.module.from_coords(v.as_slice()).expect("coords")
    }

    /// Samples unitality, multiplicativity, `<b w, z> = <w, b* z>`,
    /// commutation with the base action and `||b w|| <= ||b|| ||w||`.
    pub fn check(&self, samples: usize, seed: u64) -> CheckReport {
        let mut rep = CheckReport::new("module action", 1e-9);
        let m = &self.module;
        let id = self.operator(&Element::unit(&self.acting));
        let u = (id - DMatrix::identity(m.dim(), m.dim())).amax();
        rep.record(-u, || format!("unit acts with defect {u:e}"));
        let mut rng = rng_from_seed(seed);
        for i in 0..samples {
            let b = random_element(&self.acting, &mut rng);
            let c = random_element(&self.acting, &mut rng);
            let w = m.sample(&mut rng, i);
            let z = m.sample(&mut rng, i + 1);
            let a = random_element(m.base(), &mut rng);
            let scale = 1.0 + b.opnorm() * (1.0 + c.opnorm() + a.opnorm()) * (m.norm(&w) + 1.0) * (m.norm(&z) + 1.0);
            let bw = self.apply(&b, &w);
            let mult = self.apply(&b.mul(&c), &w).sub(&self.apply(&b, &self.apply(&c, &w)));
            let e = m.norm(&mult);
            rep.record(-e / scale, || format!("sample {i}: (bc)w != b(cw) by {e:e}"));
            let adj = m.inner(&bw, &z).sub(&m.inner(&w, &self.apply(&b.adjoint(), &z))).opnorm();
            rep.record(-adj / scale, || format!("sample {i}: <bw, z> != <w, b* z> by {adj:e}"));
            let lin = m.norm(&self.apply(&b, &m.act(&a, &w)).sub(&m.act(&a, &bw)));
            rep.record(-lin / scale, || format!("sample {i}: b(aw) != a(bw) by {lin:e}"));
            let nb = b.opnorm() * m.norm(&w) - m.norm(&bw);
            rep.record(nb / scale, || format!("sample {i}: ||bw|| exceeds ||b|| ||w|| by {:e}", -nb));
        }
        rep
    }
}

/// G-condition margins under both readings of the third argument.
#[derive(Clone, Debug)]
pub struct GReport {
    /// `D(b w) <= G(||b||, L'(b), D(w))`; this is the enforced reading.
    pub dnorm_slot: CheckReport,
    /// `D(b w) <= G(||b||, L'(b), ||w||)`; reported only.
    pub norm_slot: CheckReport,
}

/// Samples the G-condition for `action` on a bundle, with the acting
/// Lip-norm `lip` on self-adjoint coordinates of the acting algebra.
fn g_check(bundle: &Mqvb, acting: &Qcms, action: &ModuleAction, triple: &PermissibleTriple, samples: usize, seed: u64) -> GReport {
    let mut dslot = CheckReport::new("G-condition", 1e-8);
    let mut nslot = CheckReport::new("G-condition with the module norm", 1e-8);
    let m = &bundle.module;
    let mut rng = rng_from_seed(seed);
    for i in 0..samples {
        let b = test_element(&acting.shape, &mut rng, i);
        let w = m.to_coords(&m.sample(&mut rng, i / 2 + 3 * i));
        let lhs = bundle.dnorm.eval(&action.apply_coords(&b, &w));
        let nb = b.opnorm();
        let lb = acting.lip_of(&b);
        let dw = bundle.dnorm.eval(&w);
        let nw = m.norm(&m.from_coords(w.as_slice()).expect("coords"));
        let g1 = triple.g(nb, lb, dw);
        let g2 = triple.g(nb, lb, nw);
        dslot.record((g1 - lhs) / g1.max(1.0), || format!("sample {i}: D(bw) = {lhs:.6e} > G = {g1:.6e}"));
        nslot.record((g2 - lhs) / g2.max(1.0), || format!("sample {i}: D(bw) = {lhs:.6e} > G = {g2:.6e}"));
    }
    GReport { dnorm_slot: dslot, norm_slot: nslot }
}

/// A metrized bundle with an acting quantum metric space.
#[derive(Debug)]
pub struct MetricalBundle {
    pub bundle: Arc<Mqvb>,
    pub acting: Arc<Qcms>,
    pub action: ModuleAction,
    pub triple: PermissibleTriple,
    pub action_report: CheckReport,
    pub g_report: GReport,
}

impl MetricalBundle {
    /// The underlying metrized bundle.
    pub fn flat(&self) -> &Arc<Mqvb> {
        &self.bundle
    }

    /// The acting space.
    pub fn alt(&self) -> &Arc<Qcms> {
        &self.acting
    }
}

/// Validates the action and the G-condition and assembles the bundle.
pub fn make_metrical(bundle: Arc<Mqvb>, acting: Arc<Qcms>, action: ModuleAction, triple: PermissibleTriple, samples: usize, seed: u64) -> Result<Arc<MetricalBundle>> {
    if action.acting != acting.shape || action.module != bundle.module {
        return Err(Error::Shape(format!("action does not connect {} to {}", acting.name, bundle.name)));
    }
    if let Some(r) = triple.validate().into_iter().find(|r| !r.pass) {
        return Err(Error::Validation(format!("triple is not permissible: {r}")));
    }
    let action_report = action.check(samples.min(100), derive_seed(seed, 1));
    if !action_report.pass {
        return Err(Error::Validation(format!("{} on {}: {action_report}", acting.name, bundle.name)));
    }
    let g_report = g_check(&bundle, &acting, &action, &triple, samples, derive_seed(seed, 2));
    if !g_report.dnorm_slot.pass {
        return Err(Error::Validation(format!("{} on {}: {}", acting.name, bundle.name, g_report.dnorm_slot)));
    }
    Ok(Arc::new(MetricalBundle { bundle, acting, action, triple, action_report, g_report }))
}

/// The one-point space, whose algebra is the complex numbers with zero
/// Lip-norm.
pub fn scalar_space() -> Arc<Qcms> {
    Qcms::metric_space("C", &DMatrix::zeros(1, 1), 0).expect("one-point space")
}

/// The bundle with the complex numbers acting by scalars.
pub fn scalar_metrical(bundle: Arc<Mqvb>, samples: usize, seed: u64) -> Result<Arc<MetricalBundle>> {
    let action = ModuleAction::scalar(&bundle.module);
    make_metrical(bundle, scalar_space(), action, PermissibleTriple::leibniz(), samples, seed)
}

/// A modular tunnel paired with a tunnel between the acting spaces whose
/// pivot acts on the pivot module.
#[derive(Clone, Debug)]
pub struct MetricalTunnel {
    pub modular: Arc<ModularTunnel>,
    pub acting: Arc<Tunnel>,
    pub action: ModuleAction,
    pub domain: Arc<MetricalBundle>,
    pub codomain: Arc<MetricalBundle>,
    pub figure: f64,
    pub action_report: CheckReport,
    pub g_report: GReport,
    /// `Theta_j(d w) = pi_j(d) Theta_j(w)` for both legs.
    pub law_report: CheckReport,
}

fn same_space(a: &Qcms, b: &Qcms) -> bool {
    a.name == b.name && a.shape == b.shape
}

fn same_flat(a: &Mqvb, b: &Mqvb) -> bool {
    a.name == b.name && a.module == b.module
}

impl MetricalTunnel {
    pub fn new(
        modular: Arc<ModularTunnel>,
        acting: Arc<Tunnel>,
        action: ModuleAction,
        domain: Arc<MetricalBundle>,
        codomain: Arc<MetricalBundle>,
        samples: usize,
        seed: u64,
    ) -> Result<Self> {
        if !same_flat(&modular.domain, &domain.bundle) || !same_flat(&modular.codomain, &codomain.bundle) {
            return Err(Error::Shape("modular tunnel does not join the underlying bundles".into()));
        }
        if !same_space(&acting.domain, &domain.acting) || !same_space(&acting.codomain, &codomain.acting) {
            return Err(Error::Shape("acting tunnel does not join the acting spaces".into()));
        }
        if action.acting != acting.pivot.shape || action.module != modular.pivot.module {
            return Err(Error::Shape("pivot action does not connect the pivots".into()));
        }
        let action_report = action.check(samples.min(100), derive_seed(seed, 1));
        if !action_report.pass {
            return Err(Error::Validation(format!("pivot action: {action_report}")));
        }
        let g_report = g_check(&modular.pivot, &acting.pivot, &action, &domain.triple, samples, derive_seed(seed, 2));
        if !g_report.dnorm_slot.pass {
            return Err(Error::Validation(format!("pivot action: {}", g_report.dnorm_slot)));
        }
        let law_report = module_law(&modular, &acting, &action, &domain, &codomain, samples.min(100), derive_seed(seed, 3));
        if !law_report.pass {
            return Err(Error::Validation(format!("legs are not module morphisms: {law_report}")));
        }
        let figure = modular.figure.max(acting.figure);
        Ok(Self { modular, acting, action, domain, codomain, figure, action_report, g_report, law_report })
    }

    /// Identity tunnel of a metrical bundle.
    pub fn identity(b: Arc<MetricalBundle>) -> Self {
        let mut ok = CheckReport::new("identity", 0.0);
        ok.record(0.0, String::new);
        Self {
            modular: Arc::new(ModularTunnel::identity(b.bundle.clone())),
            acting: Arc::new(Tunnel::identity(b.acting.clone())),
            action: b.action.clone(),
            domain: b.clone(),
            codomain: b.clone(),
            figure: 0.0,
            action_report: b.action_report.clone(),
            g_report: b.g_report.clone(),
            law_report: ok,
        }
    }

    pub fn invert(&self) -> Self {
        Self {
            modular: Arc::new(self.modular.invert()),
            acting: Arc::new(self.acting.invert()),
            domain: self.codomain.clone(),
            codomain: self.domain.clone(),
            ..self.clone()
        }
    }

    pub fn upper_figure(&self) -> Estimate {
        Estimate::upper(self.figure, 0.0, 0)
    }
}

fn module_law(
    modular: &ModularTunnel,
    acting: &Tunnel,
    action: &ModuleAction,
    domain: &MetricalBundle,
    codomain: &MetricalBundle,
    samples: usize,
    seed: u64,
) -> CheckReport {
    let mut rep = CheckReport::new("pivot module law", 1e-9);
    let pm = &modular.pivot.module;
    let mut rng = rng_from_seed(seed);
    for i in 0..samples {
        let d = random_element(&acting.pivot.shape, &mut rng);
        let xi = pm.to_coords(&pm.sample(&mut rng, i));
        let dxi = action.apply_coords(&d, &xi);
        for (leg, pi, end) in [(&modular.leg_first, &acting.leg_first, domain), (&modular.leg_second, &acting.leg_second, codomain)] {
            let lhs = leg.map() * &dxi;
            let rhs = end.action.apply_coords(&pi.apply(&d), &(leg.map() * &xi));
            let e = (&lhs - &rhs).amax();
            let scale = 1.0 + d.opnorm() * xi.amax();
            rep.record(-e / scale, || format!("sample {i}: leg law off by {e:e}"));
        }
    }
    rep
}

/// `max(extent of the modular tunnel, extent of the acting tunnel)`.
pub fn metrical_extent(t: &MetricalTunnel, opts: &SolverOpts) -> Result<Estimate> {
    let a = t.modular.extent(opts)?;
    let b = t.acting.extent(opts)?;
    Ok(a.max(&b))
}

/// Scalar-acting metrical tunnel over a modular tunnel between two
/// scalar-acting bundles.
pub fn scalar_metrical_tunnel(modular: Arc<ModularTunnel>, domain: Arc<MetricalBundle>, codomain: Arc<MetricalBundle>, samples: usize, seed: u64) -> Result<MetricalTunnel> {
    let c = domain.acting.clone();
    let action = ModuleAction::scalar(&modular.pivot.module);
    MetricalTunnel::new(modular, Arc::new(Tunnel::identity(c)), action, domain, codomain, samples, seed)
}

/// Metrical tunnel whose acting tunnel is the base tunnel of `modular`,
/// acting on the pivot module by multiplication; the ends must be acted on
/// by their own bases.
pub fn multiplication_metrical_tunnel(modular: Arc<ModularTunnel>, domain: Arc<MetricalBundle>, codomain: Arc<MetricalBundle>, samples: usize, seed: u64) -> Result<MetricalTunnel> {
    let action = ModuleAction::by_multiplication(&modular.pivot.module);
    let base = modular.base.clone();
    MetricalTunnel::new(modular, base, action, domain, codomain, samples, seed)
}

/// Joins `t1 : A -> B` and `t2 : B -> E`: modular parts by
/// [`compose_modular`], acting parts by [`compose_tunnels`], with the two
/// pivot actions side by side. The G-condition is re-sampled.
pub fn compose_metrical(t1: &MetricalTunnel, t2: &MetricalTunnel, epsilon: f64, budget: &CheckBudget, samples: usize) -> Result<MetricalTunnel> {
    if !same_flat(&t1.codomain.bundle, &t2.domain.bundle) || !same_space(&t1.codomain.acting, &t2.domain.acting) {
        return Err(Error::Shape(format!("cannot compose: {} is not {}", t1.codomain.bundle.name, t2.domain.bundle.name)));
    }
    let modular = Arc::new(compose_modular(t1.modular.clone(), t2.modular.clone(), epsilon, budget)?);
    let acting = Arc::new(compose_tunnels(t1.acting.clone(), t2.acting.clone(), epsilon, budget)?);
    let action = ModuleAction::direct_sum(&t1.action, &t2.action)?;
    MetricalTunnel::new(modular, acting, action, t1.domain.clone(), t2.codomain.clone(), samples, derive_seed(budget.seed, 0x51))
}

/// Result of the action target-set check.
#[derive(Clone, Debug)]
pub struct ActionTargetReport {
    /// Witness `d xi` maps to `(a w, b z)`.
    pub legs: CheckReport,
    /// `D(d xi) <= G(||a|| + 2 l' ext', l', l)`.
    pub level: CheckReport,
    /// Same with `2 l ext'` in the first argument.
    pub level_stated: CheckReport,
    pub pairs: usize,
}

impl ActionTargetReport {
    pub fn pass(&self) -> bool {
        self.legs.pass && self.level.pass
    }
}

/// For `a` (self-adjoint coordinates of the first acting space) with
/// `L'(a) <= l2` and `w` with `D(w) <= l`: samples lifts `d` of `a` and
/// `xi` of `w`, and checks that `d xi` witnesses `b z` in the target set of
/// `a w` at the level `G(||a|| + 2 l2 ext', l2, l)`, `ext'` the acting
/// tunnel's certified figure.
#[allow(clippy::too_many_arguments)]
pub fn action_target_check(t: &MetricalTunnel, a: &DVector<f64>, w: &DVector<f64>, l: f64, l2: f64, k: usize, seed: u64, tol: f64, opts: &SolverOpts) -> Result<ActionTargetReport> {
    let act = &t.acting;
    let la = act.domain.lip.eval(a);
    if la > l2 * (1.0 + 1e-9) + 1e-12 {
        return Err(Error::Precondition(format!("acting element has Lip value {la} above {l2}")));
    }
    let xis = module_target_set(&t.modular, w, l, k, derive_seed(seed, 1), opts)?;
    let d0 = act.lift(Side::First, a, opts);
    let lip = &act.pivot.lip;
    let l0 = lip.eval(&d0);
    if l0 > l2 * (1.0 + 1e-6) + 1e-9 {
        return Err(Error::Infeasible(format!("acting lift has Lip value {l0} above {l2}")));
    }
    let range = orthonormal_basis(&act.leg_first.sa_map().transpose());
    let mut ds = vec![d0.clone()];
    let mut rng = rng_from_seed(derive_seed(seed, 2));
    for _ in 0..k.saturating_sub(1) {
        let u = random_real_vector(d0.len(), &mut rng);
        let u = if range.ncols() == 0 { u.clone() } else { &u - &range * (range.transpose() * &u) };
        if u.norm() < 1e-12 {
            break;
        }
        let u = &u / u.norm();
        let tmax = ray_extent(lip, &d0, &u, l2.max(l0));
        if tmax >= 1e8 {
            continue;
        }
        ds.push(&d0 + u * (0.5 * tmax));
    }
    let shape = &act.pivot.shape;
    let ashape = &act.domain.shape;
    let aelem = Element::from_sa_coords(ashape, a.as_slice())?;
    let anorm = aelem.opnorm();
    let ext = act.figure;
    let g = |x: f64| t.domain.triple.g(x, l2, l);
    let (bound, stated) = (g(anorm + 2.0 * l2 * ext), g(anorm + 2.0 * l * ext));
    let target = t.domain.action.apply_coords(&aelem, w);
    let mut legs = CheckReport::new("action target legs", tol);
    let mut level = CheckReport::new("action target level", tol);
    let mut level_stated = CheckReport::new("action target level (stated)", tol);
    let mut pairs = 0;
    for d in &ds {
        let de = Element::from_sa_coords(shape, d.as_slice())?;
        let b = act.leg_second.apply(&de);
        for x in &xis {
            pairs += 1;
            let z = t.modular.leg_second.map() * &x.pivot;
            let dx = t.action.apply_coords(&de, &x.pivot);
            let e1 = (t.modular.leg_first.map() * &dx - &target).amax();
            let e2 = (t.modular.leg_second.map() * &dx - t.codomain.action.apply_coords(&b, &z)).amax();
            legs.record(-(e1.max(e2)), || format!("witness misses (a w, b z) by {:e}", e1.max(e2)));
            let dv = t.modular.pivot.dnorm.eval(&dx);
            level.record((bound - dv) / bound.max(1.0), || format!("D(d xi) = {dv:.6e} > {bound:.6e}"));
            level_stated.record((stated - dv) / stated.max(1.0), || format!("D(d xi) = {dv:.6e} > {stated:.6e}"));
        }
    }
    Ok(ActionTargetReport { legs, level, level_stated, pairs })
}

/// Least certified figure over candidate metrical tunnels from `a` to `b`.
pub fn dual_metrical_propinquity_ub(a: &MetricalBundle, b: &MetricalBundle, candidates: &[&MetricalTunnel]) -> Result<(Estimate, usize)> {
    if candidates.is_empty() {
        return Err(Error::Precondition("no candidate metrical tunnels".into()));
    }
    let mut best = (f64::INFINITY, 0);
    for (i, c) in candidates.iter().enumerate() {
        if !same_flat(&c.domain.bundle, &a.bundle) || !same_flat(&c.codomain.bundle, &b.bundle) || !same_space(&c.domain.acting, &a.acting) || !same_space(&c.codomain.acting, &b.acting) {
            return Err(Error::Precondition(format!("candidate {i} does not join {} to {}", a.bundle.name, b.bundle.name)));
        }
        if c.figure < best.0 {
            best = (c.figure, i);
        }
    }
    Ok((Estimate::upper(best.0, 0.0, 0), best.1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bundle::qvba;
    use crate::modular::{free_module_tunnel, modular_tunnel_from_bridge, BridgeTunnelOpts, ModularBridge};
    use crate::qcms::tunnel::tunnel_from_bridge;
    use crate::qcms::Bridge;

    fn line(n: usize, h: f64) -> DMatrix<f64> {
        DMatrix::from_fn(n, n, |i, j| (i as f64 - j as f64).abs() * h)
    }

    #[test]
    fn scalar_action_is_valid() {
        let x = Qcms::metric_space("x", &line(3, 1.0), 1).unwrap();
        let b = qvba(x, 2, 1).unwrap();
        let m = scalar_metrical(b, 200, 1).unwrap();
        assert!(m.g_report.dnorm_slot.pass && m.action_report.pass);
        assert!(m.g_report.dnorm_slot.worst_margin > -1e-12);
    }

    #[test]
    fn multiplication_action_margins() {
        // Oracle: brute force over a grid of self-adjoint b = (s, t) and
        // real module elements w = (u, v) on two points at distance 1, where
        // L(f) = |f0 - f1| and D(w) = max(|u|, |v|, |u - v|).
        let mut worst_d = f64::INFINITY;
        let mut worst_n = f64::INFINITY;
        let grid: Vec<f64> = (-4..=4).map(|i| i as f64 / 2.0).collect();
        for &s in &grid {
            for &t in &grid {
                for &u in &grid {
                    for &v in &grid {
                        let d = |p: f64, q: f64| p.abs().max(q.abs()).max((p - q).abs());
                        let lhs = d(s * u, t * v);
                        let (nb, lb) = (s.abs().max(t.abs()), (s - t).abs());
                        worst_d = worst_d.min((nb + lb) * d(u, v) - lhs);
                        worst_n = worst_n.min((nb + lb) * u.abs().max(v.abs()) - lhs);
                    }
                }
            }
        }
        assert!(worst_d >= 0.0 && worst_n < 0.0);
        let x = Qcms::metric_space("x", &line(2, 1.0), 1).unwrap();
        let b = qvba(x.clone(), 1, 1).unwrap();
        let action = ModuleAction::by_multiplication(&b.module);
        let m = make_metrical(b, x, action, PermissibleTriple::leibniz(), 500, 2).unwrap();
        assert!(m.g_report.dnorm_slot.pass);
        assert!(!m.g_report.norm_slot.pass);
    }

    #[test]
    fn non_adjointable_action_rejected() {
        let shape = AlgebraShape::matrix(2);
        let module = HilbertModule::free(&shape, 1).unwrap();
        let act = ModuleAction::by_multiplication(&module);
        let rep = act.check(20, 1);
        assert!(!rep.pass);
    }

    #[test]
    fn from_matrices_matches_scalar() {
        let x = Qcms::metric_space("x", &line(2, 1.0), 1).unwrap();
        let b = qvba(x, 2, 1).unwrap();
        let one = Element::unit(&b.module.base().clone());
        let zero = Element::zeros(b.module.base());
        let k = vec![vec![one.clone(), zero.clone()], vec![zero, one]];
        let m = ModuleAction::from_matrices(&AlgebraShape::commutative(1), &b.module, &[k]).unwrap();
        assert_eq!(m, ModuleAction::scalar(&b.module));
    }

    #[test]
    fn identity_and_composition() {
        let x = Qcms::metric_space("x", &line(2, 1.0), 1).unwrap();
        let b = scalar_metrical(qvba(x, 1, 1).unwrap(), 200, 1).unwrap();
        let id = MetricalTunnel::identity(b.clone());
        let opts = SolverOpts::default();
        assert_eq!(metrical_extent(&id, &opts).unwrap().value, 0.0);
        let c = compose_metrical(&id, &id, 0.05, &CheckBudget::default(), 500).unwrap();
        assert!(c.g_report.dnorm_slot.worst_margin >= -1e-8);
        assert!(c.figure <= 0.05 + 1e-15);
        assert!(metrical_extent(&c, &opts).unwrap().value <= 0.05 + 1e-6);
        let (e, i) = dual_metrical_propinquity_ub(&b, &b, &[&c, &id]).unwrap();
        assert_eq!((e.value, i), (0.0, 1));
        let inv = c.invert();
        assert!((metrical_extent(&inv, &opts).unwrap().value - metrical_extent(&c, &opts).unwrap().value).abs() < 1e-9);
    }

    #[test]
    fn scalar_bridge_tunnel() {
        let x = Qcms::metric_space("x", &line(2, 1.0), 1).unwrap();
        let y = Qcms::metric_space("y", &line(2, 0.8), 2).unwrap();
        let bx = qvba(x.clone(), 1, 1).unwrap();
        let by = qvba(y.clone(), 1, 2).unwrap();
        let br = Arc::new(Bridge::correspondence(x, y, &[(0, 0), (1, 1)]).unwrap());
        let one = |b: &Mqvb| b.module.element(vec![Element::unit(b.module.base())]).unwrap();
        let mb = ModularBridge::new(br, bx.clone(), by.clone(), vec![one(&bx)], vec![one(&by)]).unwrap().convexify();
        let budget = CheckBudget::default();
        let t = Arc::new(modular_tunnel_from_bridge(Arc::new(mb), &BridgeTunnelOpts::default(), &budget).unwrap());
        let (mx, my) = (scalar_metrical(bx, 100, 1).unwrap(), scalar_metrical(by, 100, 2).unwrap());
        let mt = scalar_metrical_tunnel(t.clone(), mx, my, 500, 3).unwrap();
        assert!(mt.g_report.dnorm_slot.worst_margin >= -1e-8);
        let opts = SolverOpts::default();
        assert!((metrical_extent(&mt, &opts).unwrap().value - t.extent(&opts).unwrap().value).abs() < 1e-12);
    }

    #[test]
    fn multiplication_free_module_tunnel() {
        let x = Qcms::metric_space("x", &line(2, 1.0), 1).unwrap();
        let y = Qcms::metric_space("y", &line(2, 0.9), 2).unwrap();
        let br = Arc::new(Bridge::correspondence(x.clone(), y.clone(), &[(0, 0), (1, 1)]).unwrap());
        let budget = CheckBudget::default();
        let base = Arc::new(tunnel_from_bridge(br, 0.1, None, true, &budget).unwrap());
        let t = Arc::new(free_module_tunnel(base, 1, &budget).unwrap());
        let mk = |b: Arc<Mqvb>, s: Arc<Qcms>| {
            let a = ModuleAction::by_multiplication(&b.module);
            make_metrical(b, s, a, PermissibleTriple::leibniz(), 200, 1).unwrap()
        };
        let (mx, my) = (mk(t.domain.clone(), x), mk(t.codomain.clone(), y));
        let mt = multiplication_metrical_tunnel(t, mx, my, 500, 4).unwrap();
        assert!(mt.g_report.dnorm_slot.pass && mt.law_report.pass);
        let opts = SolverOpts::default();
        let mut rng = rng_from_seed(9);
        let a = test_element(&mt.acting.domain.shape, &mut rng, 0).to_sa_coords();
        let l2 = mt.acting.domain.lip.eval(&a);
        let dm = &mt.modular.domain;
        let w = dm.module.to_coords(&dm.module.sample(&mut rng, 0));
        let l = dm.dnorm.eval(&w);
        let r = action_target_check(&mt, &a, &w, l, l2, 3, 5, 1e-6, &opts).unwrap();
        assert!(r.pass(), "{:?}", r);
    }

    #[test]
    fn identity_action_target_is_exact() {
        let x = Qcms::metric_space("x", &line(2, 1.0), 1).unwrap();
        let b = qvba(x.clone(), 1, 1).unwrap();
        let a = ModuleAction::by_multiplication(&b.module);
        let m = make_metrical(b.clone(), x, a, PermissibleTriple::leibniz(), 100, 1).unwrap();
        let id = MetricalTunnel::identity(m);
        let mut rng = rng_from_seed(3);
        let av = test_element(&b.base.shape, &mut rng, 0).to_sa_coords();
        let w = b.module.to_coords(&b.module.sample(&mut rng, 0));
        let r = action_target_check(&id, &av, &w, b.dnorm.eval(&w), b.base.lip.eval(&av), 2, 1, 1e-12, &SolverOpts::default()).unwrap();
        assert!(r.legs.pass && r.level.pass);
    }
}
