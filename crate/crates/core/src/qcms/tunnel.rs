//! Tunnels: a pivot space with quantum-isometric surjections onto both
//! ends, their extent, composition and target sets.

use nalgebra::{DMatrix, DVector};
use std::sync::{Arc, OnceLock};

use super::bridge::{Bridge, BridgeStats, Side};
use super::{add_ball, lambda_max_sa, lp_rows, quantum_isometry_check, Qcms, CONSTRUCTION_SAMPLES};
use crate::algebra::{
    derive_seed, direct_sum, pure_states, random_real_vector, rng_from_seed, sample_states, Element, StarMorphism, State,
};
use crate::convex::{ball_ascent, fiber_infimum, orthonormal_basis, Ascent, LinearProgram, SolverOpts};
use crate::error::{Error, Result};
use crate::estimate::{BoundKind, CheckReport, Estimate};
use crate::seminorm::{Atom, Seminorm};

/// How a tunnel was obtained; used for certified figures and for lifting
/// elements of an end to good preimages in the pivot.
#[derive(Clone, Debug)]
pub enum Origin {
    Identity,
    Bridge { bridge: Arc<Bridge>, lambda: f64 },
    Composite { first: Arc<Tunnel>, second: Arc<Tunnel>, epsilon: f64 },
    Inverse(Arc<Tunnel>),
    /// Pivot `A (+) D (+) B` around the pivot `D` of `base`.
    Widened { base: Arc<Tunnel>, gamma: f64 },
    Custom(String),
}

/// Sampling budget for the leg checks run at construction.
#[derive(Clone, Copy, Debug)]
pub struct CheckBudget {
    pub samples: usize,
    pub tol: f64,
    pub seed: u64,
    pub opts: SolverOpts,
}

impl Default for CheckBudget {
    fn default() -> Self {
        Self { samples: 24, tol: 1e-4, seed: 0, opts: SolverOpts::default() }
    }
}

#[derive(Clone, Debug)]
pub struct Tunnel {
    pub pivot: Arc<Qcms>,
    pub domain: Arc<Qcms>,
    pub codomain: Arc<Qcms>,
    /// Pivot onto the domain.
    pub leg_first: StarMorphism,
    /// Pivot onto the codomain.
    pub leg_second: StarMorphism,
    /// Extent upper bound certified by the construction.
    pub figure: f64,
    /// Number of bridge or composition steps behind the tunnel.
    pub stages: usize,
    pub origin: Origin,
    pub isometry: [CheckReport; 2],
    extent: OnceLock<Estimate>,
}

impl Tunnel {
    /// Checks both legs as quantum isometries and fails if either does not
    /// pass.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        pivot: Arc<Qcms>,
        domain: Arc<Qcms>,
        codomain: Arc<Qcms>,
        leg_first: StarMorphism,
        leg_second: StarMorphism,
        figure: f64,
        stages: usize,
        origin: Origin,
        budget: &CheckBudget,
    ) -> Result<Self> {
        if leg_first.source() != &pivot.shape || leg_second.source() != &pivot.shape {
            return Err(Error::Shape("tunnel legs must start at the pivot".into()));
        }
        if leg_first.target() != &domain.shape || leg_second.target() != &codomain.shape {
            return Err(Error::Shape("tunnel legs must end at the domain and codomain".into()));
        }
        let mut t = Self {
            pivot,
            domain,
            codomain,
            leg_first,
            leg_second,
            figure,
            stages,
            origin,
            isometry: [CheckReport::new("leg", budget.tol), CheckReport::new("leg", budget.tol)],
            extent: OnceLock::new(),
        };
        for (i, side) in [Side::First, Side::Second].into_iter().enumerate() {
            let lift = |w: &DVector<f64>| t.lift(side, w, &budget.opts);
            let rep = quantum_isometry_check(
                t.leg(side),
                &t.pivot,
                t.end(side),
                budget.samples,
                derive_seed(budget.seed, i as u64),
                budget.tol,
                Some(&lift),
                &budget.opts,
            )?;
            if !rep.pass {
                return Err(Error::Validation(format!("tunnel leg onto {} is not a quantum isometry: {rep}", t.end(side).name)));
            }
            t.isometry[i] = rep;
        }
        Ok(t)
    }

    pub fn identity(space: Arc<Qcms>) -> Self {
        let id = StarMorphism::identity(&space.shape);
        let mut rep = CheckReport::new("quantum isometry", 0.0);
        rep.record(0.0, String::new);
        Self {
            pivot: space.clone(),
            domain: space.clone(),
            codomain: space,
            leg_first: id.clone(),
            leg_second: id,
            figure: 0.0,
            stages: 0,
            origin: Origin::Identity,
            isometry: [rep.clone(), rep],
            extent: OnceLock::new(),
        }
    }

    /// Same pivot with the legs exchanged.
    pub fn invert(&self) -> Self {
        Self {
            pivot: self.pivot.clone(),
            domain: self.codomain.clone(),
            codomain: self.domain.clone(),
            leg_first: self.leg_second.clone(),
            leg_second: self.leg_first.clone(),
            figure: self.figure,
            stages: self.stages,
            origin: Origin::Inverse(Arc::new(self.clone())),
            isometry: [self.isometry[1].clone(), self.isometry[0].clone()],
            extent: OnceLock::new(),
        }
    }

    pub fn leg(&self, side: Side) -> &StarMorphism {
        match side {
            Side::First => &self.leg_first,
            Side::Second => &self.leg_second,
        }
    }

    pub fn end(&self, side: Side) -> &Arc<Qcms> {
        match side {
            Side::First => &self.domain,
            Side::Second => &self.codomain,
        }
    }

    /// A preimage in the pivot (self-adjoint coordinates) of `w`, an element
    /// of one end, with Lip value close to the smallest possible.
    pub fn lift(&self, side: Side, w: &DVector<f64>, opts: &SolverOpts) -> DVector<f64> {
        match &self.origin {
            Origin::Identity => w.clone(),
            Origin::Inverse(t) => t.lift(side.other(), w, opts),
            Origin::Bridge { bridge, .. } => {
                let space = bridge.space(side);
                let other = bridge.space(side.other());
                let l = space.lip.eval(w);
                let partner = if l <= 1e-12 {
                    // A scalar: its value at any state, times the unit.
                    let c = State::tracial(&space.shape).sa_functional().dot(w);
                    other.shape.sa_coords_of_unit() * c
                } else {
                    match bridge.partner(side, &(w / l), opts) {
                        Ok((_, z, _)) => z * l,
                        Err(_) => other.shape.sa_coords_of_unit() * State::tracial(&space.shape).sa_functional().dot(w),
                    }
                };
                match side {
                    Side::First => concat(w, &partner),
                    Side::Second => concat(&partner, w),
                }
            }
            Origin::Composite { first, second, .. } => match side {
                Side::First => {
                    let d1 = first.lift(Side::First, w, opts);
                    let mid = first.leg_second.sa_map() * &d1;
                    let d2 = second.lift(Side::First, &mid, opts);
                    concat(&d1, &d2)
                }
                Side::Second => {
                    let d2 = second.lift(Side::Second, w, opts);
                    let mid = second.leg_first.sa_map() * &d2;
                    let d1 = first.lift(Side::Second, &mid, opts);
                    concat(&d1, &d2)
                }
            },
            Origin::Widened { base, .. } => {
                let d = base.lift(side, w, opts);
                let a = base.leg_first.sa_map() * &d;
                let b = base.leg_second.sa_map() * &d;
                concat(&concat(&a, &d), &b)
            }
            Origin::Custom(_) => fiber_infimum(&self.pivot.lip, self.leg(side).sa_map(), w, &[], None, opts)
                .ok()
                .and_then(|e| e.certificate)
                .map(DVector::from_vec)
                .unwrap_or_else(|| {
                    let p = self.leg(side).sa_map().clone().pseudo_inverse(1e-12).expect("pseudo-inverse");
                    p * w
                }),
        }
    }

    /// The numeric extent, computed once with the options of the first call.
    pub fn extent(&self, opts: &SolverOpts) -> Result<Estimate> {
        if let Some(e) = self.extent.get() {
            return Ok(e.clone());
        }
        let e = tunnel_extent(self, opts)?;
        Ok(self.extent.get_or_init(|| e).clone())
    }

    pub fn upper_figure(&self) -> Estimate {
        Estimate::upper(self.figure, 0.0, 0)
    }
}

fn concat(a: &DVector<f64>, b: &DVector<f64>) -> DVector<f64> {
    DVector::from_iterator(a.len() + b.len(), a.iter().chain(b.iter()).cloned())
}

/// Coordinate projection on the self-adjoint part of `A (+) B`.
fn block_selector(total: usize, off: usize, len: usize) -> DMatrix<f64> {
    let mut p = DMatrix::zeros(len, total);
    for i in 0..len {
        p[(i, off + i)] = 1.0;
    }
    p
}

/// Tunnel on `A (+) B` with `L(a, b) = max(L_A(a), L_B(b), bn(a, b) / lambda)`.
///
/// `lambda` must be at least the bridge length; when `stats` is given it is
/// used for that check, and `allow_slack` accepts `lambda` within the
/// estimate's tolerance below it.
pub fn tunnel_from_bridge(
    bridge: Arc<Bridge>,
    lambda: f64,
    stats: Option<&BridgeStats>,
    allow_slack: bool,
    budget: &CheckBudget,
) -> Result<Tunnel> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::Precondition(format!("tunnel parameter must be positive, got {lambda}")));
    }
    let computed;
    let stats = match stats {
        Some(s) => s,
        None => {
            computed = bridge.stats(&budget.opts)?;
            &computed
        }
    };
    let len = stats.length.value;
    let slack = if allow_slack { stats.length.tol.max(1e-6) } else { 0.0 };
    if lambda < len - slack {
        return Err(Error::Precondition(format!("parameter {lambda} is below the bridge length {len}")));
    }
    let a = &bridge.first;
    let b = &bridge.second;
    let sum = direct_sum(&a.shape, &b.shape)?;
    let (na, nb) = (a.shape.sa_dim(), b.shape.sa_dim());
    let la = a.lip.pullback(&block_selector(na + nb, 0, na))?;
    let lb = b.lip.pullback(&block_selector(na + nb, na, nb))?;
    let bn = bridge.seminorm_on_sum(1.0 / lambda)?;
    let unit = sum.shape.sa_coords_of_unit();
    let unit = &unit / unit.norm();
    let lip = Seminorm::combine_max(&[(&la, 1.0), (&lb, 1.0), (&bn, 1.0)])?
        .with_kernel(DMatrix::from_column_slice(na + nb, 1, unit.as_slice()))?;
    let pivot = Qcms::new(
        format!("{}[{lambda}]", bridge.label),
        sum.shape.clone(),
        lip,
        a.triple.clone(),
        CONSTRUCTION_SAMPLES,
        derive_seed(budget.seed, 0xB1),
    )?;
    Tunnel::new(
        pivot,
        a.clone(),
        b.clone(),
        sum.proj_first,
        sum.proj_second,
        lambda,
        1,
        Origin::Bridge { bridge, lambda },
        budget,
    )
}

/// Tunnel on `D1 (+) D2` joining `t1 : A -> B` and `t2 : B -> E`, with the
/// coupling term `||theta(d1) - pi(d2)|| / epsilon` where `theta` and `pi`
/// are the legs onto `B`.
pub fn compose_tunnels(t1: Arc<Tunnel>, t2: Arc<Tunnel>, epsilon: f64, budget: &CheckBudget) -> Result<Tunnel> {
    if !(epsilon > 0.0) {
        return Err(Error::Precondition(format!("composition slack must be positive, got {epsilon}")));
    }
    let mid = &t1.codomain;
    if !(Arc::ptr_eq(mid, &t2.domain) || (mid.name == t2.domain.name && mid.shape == t2.domain.shape)) {
        return Err(Error::Shape(format!("cannot compose: {} is not {}", mid.name, t2.domain.name)));
    }
    let d1 = &t1.pivot;
    let d2 = &t2.pivot;
    let sum = direct_sum(&d1.shape, &d2.shape)?;
    let (n1, n2) = (d1.shape.sa_dim(), d2.shape.sa_dim());
    let l1 = d1.lip.pullback(&block_selector(n1 + n2, 0, n1))?;
    let l2 = d2.lip.pullback(&block_selector(n1 + n2, n1, n2))?;
    let theta = t1.leg_second.map() * d1.shape.sa_embedding();
    let pi = t2.leg_first.map() * d2.shape.sa_embedding();
    let rows = mid.shape.real_dim();
    let mut map = DMatrix::zeros(rows, n1 + n2);
    map.view_mut((0, 0), (rows, n1)).copy_from(&theta);
    map.view_mut((0, n1), (rows, n2)).copy_from(&(-pi));
    let out = mid.shape.blocks().iter().map(|&n| (n, n)).collect();
    let coupling = Seminorm::from_atoms(n1 + n2, vec![Atom::new(1.0 / epsilon, map, out)?])?;
    let unit = sum.shape.sa_coords_of_unit();
    let unit = &unit / unit.norm();
    let lip = Seminorm::combine_max(&[(&l1, 1.0), (&l2, 1.0), (&coupling, 1.0)])?
        .with_kernel(DMatrix::from_column_slice(n1 + n2, 1, unit.as_slice()))?;
    let pivot = Qcms::new(
        format!("({} ; {})", d1.name, d2.name),
        sum.shape.clone(),
        lip,
        d1.triple.clone(),
        CONSTRUCTION_SAMPLES,
        derive_seed(budget.seed, 0xC0),
    )?;
    let leg_first = t1.leg_first.after(&sum.proj_first)?;
    let leg_second = t2.leg_second.after(&sum.proj_second)?;
    let figure = t1.figure + t2.figure + epsilon;
    let stages = t1.stages + t2.stages + 1;
    let (domain, codomain) = (t1.domain.clone(), t2.codomain.clone());
    Tunnel::new(pivot, domain, codomain, leg_first, leg_second, figure, stages, Origin::Composite { first: t1, second: t2, epsilon }, budget)
}

/// Tunnel on `A (+) D (+) B` around `base : A -> B` with pivot `D`:
/// `L(a, d, b) = max(L_A(a), L_D(d), L_B(b), w ||a - pi_A(d)||, w ||b - pi_B(d)||)`
/// with `w = gamma / (gamma - 1)`. Figure `2 (gamma - 1) / gamma + figure(base)`.
pub fn widen_tunnel(base: Arc<Tunnel>, gamma: f64, budget: &CheckBudget) -> Result<Tunnel> {
    if !(gamma > 1.0) || !gamma.is_finite() {
        return Err(Error::Precondition(format!("widening needs gamma > 1, got {gamma}")));
    }
    let (a, d, b) = (&base.domain, &base.pivot, &base.codomain);
    let ad = direct_sum(&a.shape, &d.shape)?;
    let all = direct_sum(&ad.shape, &b.shape)?;
    let (na, nd, nb) = (a.shape.sa_dim(), d.shape.sa_dim(), b.shape.sa_dim());
    let n = na + nd + nb;
    let la = a.lip.pullback(&block_selector(n, 0, na))?;
    let ld = d.lip.pullback(&block_selector(n, na, nd))?;
    let lb = b.lip.pullback(&block_selector(n, na + nd, nb))?;
    let w = gamma / (gamma - 1.0);
    let coupling = |end: &Qcms, off: usize, len: usize, leg: &StarMorphism| -> Result<Seminorm> {
        let rows = end.shape.real_dim();
        let mut map = DMatrix::zeros(rows, n);
        map.view_mut((0, off), (rows, len)).copy_from(&end.shape.sa_embedding());
        let pd = leg.map() * d.shape.sa_embedding();
        map.view_mut((0, na), (rows, nd)).copy_from(&(-pd));
        let out = end.shape.blocks().iter().map(|&k| (k, k)).collect();
        Seminorm::from_atoms(n, vec![Atom::new(w, map, out)?])
    };
    let ca = coupling(a, 0, na, &base.leg_first)?;
    let cb = coupling(b, na + nd, nb, &base.leg_second)?;
    let unit = all.shape.sa_coords_of_unit();
    let unit = &unit / unit.norm();
    let lip = Seminorm::combine_max(&[(&la, 1.0), (&ld, 1.0), (&lb, 1.0), (&ca, 1.0), (&cb, 1.0)])?
        .with_kernel(DMatrix::from_column_slice(n, 1, unit.as_slice()))?;
    let pivot = Qcms::new(
        format!("{}~{gamma}", d.name),
        all.shape.clone(),
        lip,
        d.triple.clone(),
        CONSTRUCTION_SAMPLES,
        derive_seed(budget.seed, 0xD1),
    )?;
    let leg_first = ad.proj_first.after(&all.proj_first)?;
    let figure = 2.0 * (gamma - 1.0) / gamma + base.figure;
    let stages = base.stages;
    let (domain, codomain) = (a.clone(), b.clone());
    Tunnel::new(pivot, domain, codomain, leg_first, all.proj_second, figure, stages, Origin::Widened { base, gamma }, budget)
}

/// `max_j Haus(S(D), pullbacks of S(A_j))`, computed as
/// `max_j sup { lambda_max(d) - lambda_max(pi_j d) : L_D(d) <= 1 }`.
/// Exact through linear programs when the pivot is commutative with a
/// Lip-norm given by real functionals; otherwise a lower bound.
pub fn tunnel_extent(t: &Tunnel, opts: &SolverOpts) -> Result<Estimate> {
    let mut best = Estimate::exact(0.0);
    for (i, side) in [Side::First, Side::Second].into_iter().enumerate() {
        let e = side_extent(t, side, &opts.with_seed(derive_seed(opts.seed, i as u64)))?;
        best = if e.value > best.value { Estimate { kind: best.kind.max_of(e.kind), ..e } } else { Estimate { kind: best.kind.max_of(e.kind), ..best } };
    }
    Ok(best)
}

fn side_extent(t: &Tunnel, side: Side, opts: &SolverOpts) -> Result<Estimate> {
    let d = &t.pivot;
    let leg = t.leg(side);
    let end = t.end(side);
    let sam = leg.sa_map();
    let n = d.shape.sa_dim();
    if n == 1 {
        return Ok(Estimate::exact(0.0));
    }
    if d.is_commutative() {
        if let Some(rows) = lp_rows(&d.lip) {
            let m = end.shape.sa_dim();
            let mut best = Estimate::exact(0.0);
            for z in 0..n {
                let mut obj = vec![0.0; n + 1];
                obj[z] = 1.0;
                obj[n] = -1.0;
                let mut lp = LinearProgram::maximize(obj);
                add_ball(&mut lp, &rows, 0, 1.0);
                lp.eq(&(0..n).map(|i| (i, 1.0)).collect::<Vec<_>>(), 0.0);
                for k in 0..m {
                    let mut r: Vec<(usize, f64)> = (0..n).map(|i| (i, sam[(k, i)])).collect();
                    r.push((n, -1.0));
                    lp.le(&r, 0.0);
                }
                let (v, x) = lp.solve()?;
                if v > best.value {
                    best = Estimate::new(v, BoundKind::Exact, 1e-9, 1).with_certificate(x[..n].to_vec());
                }
            }
            return Ok(best);
        }
    }
    let psis: Vec<State> = if d.is_commutative() { pure_states(&d.shape)? } else { sample_states(&d.shape, 6, opts.seed)? };
    let mut best = Estimate::lower(0.0, opts.tol, 0);
    for (i, psi0) in psis.iter().enumerate() {
        let mut f = psi0.sa_functional();
        for round in 0..2 {
            let objective = |v: &DVector<f64>| {
                let (s, g) = lambda_max_sa(&end.shape, &(sam * v));
                (f.dot(v) - s, &f - sam.transpose() * g)
            };
            let prob = Ascent { ball: &d.lip, objective: &objective, flat: Some(d.unit_kernel()), to_boundary: true };
            let o = opts.with_seed(derive_seed(opts.seed, (2 * i + round) as u64)).with_iterations(opts.iterations.min(1500));
            let e = ball_ascent(&prob, &[], &o);
            best.iterations += e.iterations;
            if e.value > best.value {
                best.value = e.value;
                best.certificate = e.certificate.clone();
            }
            let v = DVector::from_vec(e.certificate.unwrap_or_default());
            if v.len() != n {
                break;
            }
            f = lambda_max_sa(&d.shape, &v).1;
        }
    }
    Ok(best)
}

/// Smallest certified figure among the candidates, ties broken by fewer
/// stages. Returns the bound and the index of the winning candidate.
pub fn propinquity_ub(x: &Qcms, y: &Qcms, candidates: &[&Tunnel]) -> Result<(Estimate, usize)> {
    if candidates.is_empty() {
        return Err(Error::Precondition("no candidate tunnels".into()));
    }
    for c in candidates {
        if c.domain.shape != x.shape || c.codomain.shape != y.shape || c.domain.name != x.name || c.codomain.name != y.name {
            return Err(Error::Precondition(format!("candidate connects {} to {}, not {} to {}", c.domain.name, c.codomain.name, x.name, y.name)));
        }
    }
    let mut k = 0;
    for (i, c) in candidates.iter().enumerate() {
        let b = candidates[k];
        if c.figure < b.figure || (c.figure == b.figure && c.stages < b.stages) {
            k = i;
        }
    }
    Ok((candidates[k].upper_figure(), k))
}

/// Largest `t >= 0` with `S(p + t u) <= l`, given `S(p) <= l`.
fn ray_extent(s: &Seminorm, p: &DVector<f64>, u: &DVector<f64>, l: f64) -> f64 {
    let inside = |t: f64| s.eval(&(p + u * t)) <= l;
    let mut hi = 1.0;
    while inside(hi) {
        hi *= 2.0;
        if hi > 1e8 {
            return hi;
        }
    }
    let mut lo = 0.0;
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if inside(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

/// Points of the `l`-target set of `a`: images under the second leg of
/// pivot elements `d` with first-leg image `a` and `L_D(d) <= l`. All
/// coordinates are self-adjoint.
pub fn target_set_points(t: &Tunnel, a: &DVector<f64>, l: f64, k: usize, seed: u64, opts: &SolverOpts) -> Result<Vec<DVector<f64>>> {
    let d = &t.pivot;
    let p = t.leg_first.sa_map();
    let la = t.domain.lip.eval(a);
    if la > l * (1.0 + 1e-9) + 1e-12 {
        return Err(Error::Precondition(format!("element has Lip value {la} above {l}")));
    }
    let hint = t.lift(Side::First, a, opts);
    let fib = fiber_infimum(&d.lip, p, a, &[hint.clone()], Some(la), opts)?;
    let d0 = match &fib.certificate {
        Some(c) if d.lip.eval(&DVector::from_column_slice(c)) <= d.lip.eval(&hint) => DVector::from_column_slice(c),
        _ => hint,
    };
    let l0 = d.lip.eval(&d0);
    if l0 > l * (1.0 + 1e-6) + 1e-9 {
        return Err(Error::Infeasible(format!("no preimage with Lip value {l}; best found {l0}")));
    }
    // Directions that keep the first-leg image fixed.
    let range = orthonormal_basis(&p.transpose());
    let proj = |v: &DVector<f64>| if range.ncols() == 0 { v.clone() } else { v - &range * (range.transpose() * v) };
    let q = t.leg_second.sa_map();
    let mut out = vec![q * &d0];
    let mut rng = rng_from_seed(seed);
    let lmax = l.max(l0);
    if let Some(rows) = lp_rows(&d.lip) {
        let n = d.shape.sa_dim();
        for _ in 0..k / 2 {
            let c = proj(&random_real_vector(n, &mut rng));
            let mut lp = LinearProgram::maximize(c.iter().cloned().collect());
            add_ball(&mut lp, &rows, 0, lmax);
            for (i, row) in p.row_iter().enumerate() {
                lp.eq(&row.iter().cloned().enumerate().collect::<Vec<_>>(), a[i]);
            }
            if let Ok((_, x)) = lp.solve() {
                out.push(q * DVector::from_vec(x));
            }
        }
    }
    while out.len() < k.max(1) {
        let u = proj(&random_real_vector(d0.len(), &mut rng));
        if u.norm() < 1e-12 {
            break;
        }
        let u = &u / u.norm();
        let s = if out.len() % 2 == 0 { 1.0 } else { -1.0 };
        let u = u * s;
        let tmax = ray_extent(&d.lip, &d0, &u, lmax);
        if tmax >= 1e8 {
            continue;
        }
        out.push(q * (&d0 + u * tmax));
    }
    Ok(out)
}

/// Outcome of the target-set bounds, for the certified figure and for the
/// numeric extent.
#[derive(Clone, Debug)]
pub struct TargetSetReport {
    pub points: usize,
    pub diameter: f64,
    pub max_norm: f64,
    pub with_figure: CheckReport,
    pub with_extent: CheckReport,
}

/// Checks `diam <= 2 l ext` and `||b|| <= ||a|| + l ext` on sampled target
/// points, reading `ext` both as the certified figure and as the numeric
/// extent.
pub fn target_set_diameter_check(
    t: &Tunnel,
    a: &DVector<f64>,
    l: f64,
    k: usize,
    seed: u64,
    tol: f64,
    opts: &SolverOpts,
) -> Result<TargetSetReport> {
    let pts = target_set_points(t, a, l, k, seed, opts)?;
    let elems: Vec<Element> = pts
        .iter()
        .map(|v| Element::from_sa_coords(&t.codomain.shape, v.as_slice()))
        .collect::<Result<_>>()?;
    let mut diameter: f64 = 0.0;
    for i in 0..elems.len() {
        for j in (i + 1)..elems.len() {
            diameter = diameter.max(elems[i].sub(&elems[j]).opnorm());
        }
    }
    let max_norm = elems.iter().map(|e| e.opnorm()).fold(0.0, f64::max);
    let an = Element::from_sa_coords(&t.domain.shape, a.as_slice())?.opnorm();
    let numeric = t.extent(opts)?.value;
    let mut reports = Vec::new();
    for (name, ext) in [("target set (figure)", t.figure), ("target set (extent)", numeric)] {
        let mut r = CheckReport::new(name, tol);
        r.record(2.0 * l * ext - diameter, || format!("diameter {diameter:.6e} > 2 l ext = {:.6e}", 2.0 * l * ext));
        r.record(an + l * ext - max_norm, || format!("norm {max_norm:.6e} > {:.6e}", an + l * ext));
        reports.push(r);
    }
    let with_extent = reports.pop().expect("two reports");
    let with_figure = reports.pop().expect("two reports");
    Ok(TargetSetReport { points: pts.len(), diameter, max_norm, with_figure, with_extent })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(n: usize, h: f64) -> DMatrix<f64> {
        DMatrix::from_fn(n, n, |i, j| (i as f64 - j as f64).abs() * h)
    }

    #[test]
    fn identity_tunnel_extent_is_zero() {
        let x = Qcms::metric_space("x", &line(3, 1.0), 1).unwrap();
        let t = Tunnel::identity(x);
        assert_eq!(tunnel_extent(&t, &SolverOpts::default()).unwrap().value, 0.0);
    }

    #[test]
    fn bridge_tunnel_respects_lambda() {
        let opts = SolverOpts::default();
        let x = Qcms::metric_space("x", &line(3, 0.5), 1).unwrap();
        let y = Qcms::metric_space("y", &line(2, 1.0), 2).unwrap();
        let b = Arc::new(Bridge::correspondence(x, y, &[(0, 0), (1, 0), (1, 1), (2, 1)]).unwrap());
        let stats = b.stats(&opts).unwrap();
        let lambda = stats.length.value.max(1e-3);
        let t = tunnel_from_bridge(b, lambda, Some(&stats), false, &CheckBudget::default()).unwrap();
        let e = tunnel_extent(&t, &opts).unwrap();
        assert!(e.value <= lambda + 1e-3, "{e} vs {lambda}");
        let inv = t.invert();
        assert!((tunnel_extent(&inv, &opts).unwrap().value - e.value).abs() < 1e-9);
    }

    #[test]
    fn lambda_below_length_is_rejected() {
        let opts = SolverOpts::default();
        let x = Qcms::metric_space("x", &line(2, 1.0), 1).unwrap();
        let p = Qcms::metric_space("p", &DMatrix::zeros(1, 1), 1).unwrap();
        let b = Arc::new(Bridge::correspondence(x, p, &[(0, 0), (1, 0)]).unwrap());
        let stats = b.stats(&opts).unwrap();
        assert!(matches!(tunnel_from_bridge(b.clone(), 0.25, Some(&stats), false, &CheckBudget::default()), Err(Error::Precondition(_))));
        assert!(tunnel_from_bridge(b, 0.5, Some(&stats), false, &CheckBudget::default()).is_ok());
    }

    #[test]
    fn two_point_pivot_kernel() {
        let p = Qcms::metric_space("p", &DMatrix::zeros(1, 1), 1).unwrap();
        let q = Qcms::metric_space("q", &DMatrix::zeros(1, 1), 2).unwrap();
        let b = Arc::new(Bridge::correspondence(p, q, &[(0, 0)]).unwrap());
        let t = tunnel_from_bridge(b, 1.0, None, false, &CheckBudget::default()).unwrap();
        assert!(t.pivot.report.kernel.pass);
    }

    #[test]
    fn composing_identities() {
        let opts = SolverOpts::default();
        let x = Qcms::metric_space("x", &line(3, 1.0), 1).unwrap();
        let id = Arc::new(Tunnel::identity(x));
        let c = compose_tunnels(id.clone(), id, 0.1, &CheckBudget::default()).unwrap();
        assert!(c.pivot.is_commutative());
        assert!(c.pivot.report.kernel.pass);
        assert!((c.figure - 0.1).abs() < 1e-15 && c.stages == 1);
        assert!(tunnel_extent(&c, &opts).unwrap().value <= 0.1 + 1e-9);
    }

    #[test]
    fn identity_target_set() {
        let opts = SolverOpts::default();
        let x = Qcms::metric_space("x", &line(3, 1.0), 1).unwrap();
        let t = Tunnel::identity(x);
        let a = DVector::from_vec(vec![0.0, 0.5, 1.0]);
        let r = target_set_diameter_check(&t, &a, 0.5, 6, 1, 1e-9, &opts).unwrap();
        assert!(r.diameter < 1e-9 && r.with_figure.pass);
    }

    #[test]
    fn widened_tunnel_extent_within_figure() {
        let opts = SolverOpts::default();
        let x = Qcms::metric_space("x", &line(2, 1.0), 1).unwrap();
        let y = Qcms::metric_space("y", &line(2, 0.8), 2).unwrap();
        let b = Arc::new(Bridge::correspondence(x, y, &[(0, 0), (1, 1)]).unwrap());
        let t = Arc::new(tunnel_from_bridge(b, 0.2, None, true, &CheckBudget::default()).unwrap());
        let w = widen_tunnel(t, 1.4, &CheckBudget::default()).unwrap();
        assert!(w.pivot.report.kernel.pass);
        assert!((w.figure - (0.8 / 1.4 + 0.2)).abs() < 1e-12);
        let e = tunnel_extent(&w, &opts).unwrap();
        assert!(e.value <= w.figure + 1e-9, "{e} vs {}", w.figure);
    }

    #[test]
    fn propinquity_prefers_smaller_figure() {
        let x = Qcms::metric_space("x", &line(2, 1.0), 1).unwrap();
        let id = Tunnel::identity(x.clone());
        let c = compose_tunnels(Arc::new(id.clone()), Arc::new(id.clone()), 0.5, &CheckBudget::default()).unwrap();
        let (e, k) = propinquity_ub(&x, &x, &[&c, &id]).unwrap();
        assert_eq!((e.value, k), (0.0, 1));
        assert!(propinquity_ub(&x, &x, &[]).is_err());
    }
}
