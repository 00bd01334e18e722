//! Modular bridges and modular tunnels between metrized bundles: deck norm,
//! imprint, the gauge set of a convexified bridge, composition, module
//! target sets, free-module tunnels and the dual modular propinquity
//! estimate.

use nalgebra::DVector;
use std::collections::HashMap;
use std::fmt;
use std::sync::{Arc, OnceLock, RwLock};

use crate::algebra::{derive_seed, rng_from_seed, random_real_vector, Element, C64};
use crate::bundle::{
    modular_isometry_check, modular_mk, qvba, sum_projections, BundleFamily, HilbertModule, ModElem,
    ModularMorphism, Mqvb, BUNDLE_SAMPLES,
};
use crate::convex::{ball_ascent, fiber_infimum, minimize_affine, minkowski_gauge, orthonormal_basis, Ascent, SolverOpts};
use crate::error::{Error, Result};
use crate::estimate::{BoundKind, CheckReport, Estimate};
use crate::qcms::bridge::{Bridge, BridgeStats, Side};
use crate::qcms::tunnel::{compose_tunnels, target_set_points, tunnel_from_bridge, widen_tunnel, CheckBudget, Tunnel};
use crate::qcms::diameter;
use crate::seminorm::{Atom, Ext, Gauge, PermFn, Seminorm};

/// Euclidean projection onto `{ t : sum_j |t_j| <= radius }`.
pub fn project_l1_ball(v: &DVector<f64>, radius: f64) -> DVector<f64> {
    let n1: f64 = v.iter().map(|x| x.abs()).sum();
    if n1 <= radius {
        return v.clone();
    }
    let mut u: Vec<f64> = v.iter().map(|x| x.abs()).collect();
    u.sort_by(|a, b| b.partial_cmp(a).expect("finite"));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (i, &ui) in u.iter().enumerate() {
        cum += ui;
        let t = (cum - radius) / (i + 1) as f64;
        if ui > t {
            theta = t;
        }
    }
    v.map(|x| x.signum() * (x.abs() - theta).max(0.0))
}

/// Projected subgradient descent over the unit l1 ball; returns the best
/// point seen.
fn l1_ball_descent<F>(f: F, starts: &[DVector<f64>], iters: usize) -> (f64, DVector<f64>)
where
    F: Fn(&DVector<f64>) -> (f64, DVector<f64>),
{
    let starts: Vec<DVector<f64>> = starts.iter().map(|s| project_l1_ball(s, 1.0)).collect();
    let mut best_x = starts[0].clone();
    let mut best = f(&best_x).0;
    let per = (iters / (2 * starts.len())).max(20);
    for s in &starts {
        let mut x = s.clone();
        for k in 0..per {
            let (v, g) = f(&x);
            if v < best {
                best = v;
                best_x = x.clone();
            }
            let gn = g.norm();
            if gn < 1e-15 {
                break;
            }
            x = project_l1_ball(&(x - g * (0.5 / ((k + 1) as f64).sqrt() / gn)), 1.0);
        }
    }
    let mut h = 0.1;
    let mut used = 0;
    while used < iters && h > 1e-10 {
        let before = best;
        let mut x = best_x.clone();
        for k in 0..50 {
            let (v, g) = f(&x);
            used += 1;
            if v < best {
                best = v;
                best_x = x.clone();
            }
            let gn = g.norm();
            if gn < 1e-15 {
                break;
            }
            x = project_l1_ball(&(x - g * (h / ((k + 1) as f64).sqrt() / gn)), 1.0);
        }
        h *= if best < before - 1e-12 { 0.8 } else { 0.5 };
    }
    (best, best_x)
}

/// Minimizer of a convex function of one variable on `[lo, hi]`.
fn golden_section<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64) -> (f64, f64) {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut a = hi - r * (hi - lo);
    let mut b = lo + r * (hi - lo);
    let (mut fa, mut fb) = (f(a), f(b));
    for _ in 0..80 {
        if fa <= fb {
            hi = b;
            b = a;
            fb = fa;
            a = hi - r * (hi - lo);
            fa = f(a);
        } else {
            lo = a;
            a = b;
            fa = fb;
            b = lo + r * (hi - lo);
            fb = f(b);
        }
    }
    if fa <= fb {
        (a, fa)
    } else {
        (b, fb)
    }
}

fn concat(a: &DVector<f64>, b: &DVector<f64>) -> DVector<f64> {
    DVector::from_iterator(a.len() + b.len(), a.iter().chain(b.iter()).cloned())
}

fn selector(total: usize, off: usize, len: usize) -> nalgebra::DMatrix<f64> {
    let mut p = nalgebra::DMatrix::zeros(len, total);
    for i in 0..len {
        p[(i, off + i)] = 1.0;
    }
    p
}

fn norm_seminorm(m: &HilbertModule) -> Result<Seminorm> {
    Seminorm::from_atoms(m.dim(), vec![m.norm_atom()?])
}

fn same_bundle(a: &Mqvb, b: &Mqvb) -> bool {
    a.name == b.name && a.module == b.module
}

/// Whether the modular Monge-Kantorovich metric of `b` is the module norm
/// distance (constant unit vectors attain the supremum).
fn norm_is_mk(b: &Mqvb) -> bool {
    matches!(b.family, BundleFamily::FreeLipschitz { .. }) && b.base.is_commutative()
}

/// A bridge between the base spaces together with paired anchors and
/// co-anchors in the unit balls of the two D-norms. With `hull` set, the
/// anchor family is the set of combinations `sum t_j w_j`, `sum |t_j| <= 1`,
/// paired with the same combinations of co-anchors.
#[derive(Clone, Debug)]
pub struct ModularBridge {
    pub base: Arc<Bridge>,
    pub first: Arc<Mqvb>,
    pub second: Arc<Mqvb>,
    pub anchors: Vec<ModElem>,
    pub coanchors: Vec<ModElem>,
    pub hull: bool,
    deck: Seminorm,
}

/// Imprint estimate and the radius figure used downstream.
#[derive(Clone, Debug)]
pub struct Imprint {
    /// Largest sampled distance from unit-ball points to the anchors.
    pub estimate: Estimate,
    /// Bound that holds regardless of sampling: 1 for a hull (it contains
    /// 0), 2 otherwise.
    pub cap: f64,
    /// `min(cap, 1.25 estimate + 0.01)`.
    pub figure: f64,
}

impl ModularBridge {
    pub fn new(base: Arc<Bridge>, first: Arc<Mqvb>, second: Arc<Mqvb>, anchors: Vec<ModElem>, coanchors: Vec<ModElem>) -> Result<Self> {
        for (space, bundle) in [(&base.first, &first), (&base.second, &second)] {
            if space.name != bundle.base.name || space.shape != bundle.base.shape {
                return Err(Error::Shape(format!("bridge end {} is not the base of {}", space.name, bundle.name)));
            }
        }
        if anchors.is_empty() {
            return Err(Error::Precondition("a modular bridge needs at least one anchor".into()));
        }
        if anchors.len() != coanchors.len() {
            return Err(Error::Precondition(format!("{} anchors but {} co-anchors", anchors.len(), coanchors.len())));
        }
        for (j, (w, z)) in anchors.iter().zip(&coanchors).enumerate() {
            first.module.check(w)?;
            second.module.check(z)?;
            let (dw, dz) = (first.d(w), second.d(z));
            if dw > 1.0 + 1e-9 || dz > 1.0 + 1e-9 {
                return Err(Error::Validation(format!("anchor pair {j} has D-norms {dw}, {dz} above 1")));
            }
        }
        let deck = deck_seminorm(&base, &first.module, &second.module, &anchors, &coanchors)?;
        Ok(Self { base, first, second, anchors, coanchors, hull: false, deck })
    }

    /// Same bridge with the balanced convex hull of the anchor pairs.
    pub fn convexify(&self) -> Self {
        Self { hull: true, ..self.clone() }
    }

    /// Anchor pair with coefficients `t`, `sum |t_j| <= 1`.
    pub fn combination(&self, t: &[f64]) -> Result<(ModElem, ModElem)> {
        if t.len() != self.anchors.len() {
            return Err(Error::Shape(format!("{} coefficients for {} anchors", t.len(), self.anchors.len())));
        }
        let s: f64 = t.iter().map(|x| x.abs()).sum();
        if s > 1.0 + 1e-12 {
            return Err(Error::Precondition(format!("coefficients have l1 norm {s} above 1")));
        }
        let mut w = self.first.module.zero();
        let mut z = self.second.module.zero();
        for (j, &c) in t.iter().enumerate() {
            w = w.add(&self.anchors[j].scale_real(c));
            z = z.add(&self.coanchors[j].scale_real(c));
        }
        Ok((w, z))
    }

    /// Samples `D(w_t) <= 1` and `D(z_t) <= 1` over random coefficients.
    pub fn hull_check(&self, samples: usize, seed: u64) -> CheckReport {
        let mut rep = CheckReport::new("anchor hull in the unit balls", 1e-9);
        let mut rng = rng_from_seed(seed);
        for i in 0..samples {
            let t = project_l1_ball(&random_real_vector(self.anchors.len(), &mut rng), 1.0);
            let (w, z) = self.combination(t.as_slice()).expect("coefficients");
            let m = 1.0 - self.first.d(&w).max(self.second.d(&z));
            rep.record(m, || format!("sample {i}: combination has D-norm {}", 1.0 - m));
        }
        rep
    }

    /// Deck norm on `M (+) N` coordinates, weight 1.
    pub fn deck_seminorm(&self) -> &Seminorm {
        &self.deck
    }

    pub fn deck_norm(&self, w: &ModElem, z: &ModElem) -> Result<f64> {
        self.first.module.check(w)?;
        self.second.module.check(z)?;
        Ok(self.deck.eval(&concat(&self.first.module.to_coords(w), &self.second.module.to_coords(z))))
    }

    /// `max_j dn(w_j, z_j)`; exact, and unchanged by taking the hull.
    pub fn modular_reach(&self) -> Estimate {
        let v = self
            .anchors
            .iter()
            .zip(&self.coanchors)
            .map(|(w, z)| self.deck_norm(w, z).expect("anchors"))
            .fold(0.0, f64::max);
        Estimate::exact(v)
    }

    fn anchor_matrix(&self, side: Side) -> nalgebra::DMatrix<f64> {
        let (m, list) = match side {
            Side::First => (&self.first.module, &self.anchors),
            Side::Second => (&self.second.module, &self.coanchors),
        };
        let cols: Vec<DVector<f64>> = list.iter().map(|w| m.to_coords(w)).collect();
        nalgebra::DMatrix::from_columns(&cols)
    }

    fn bundle(&self, side: Side) -> &Arc<Mqvb> {
        match side {
            Side::First => &self.first,
            Side::Second => &self.second,
        }
    }

    /// Distance, in module norm, from `w` to the anchors of one side (to
    /// their hull when `hull` is set), with the coefficients attaining it.
    pub fn anchor_distance(&self, side: Side, w: &DVector<f64>) -> (f64, DVector<f64>) {
        let a = self.anchor_matrix(side);
        let norm = norm_seminorm(&self.bundle(side).module).expect("norm atom");
        nearest_anchor(&a, &norm, w, self.hull)
    }

    /// Hausdorff distance between the D-unit ball and the anchors, for the
    /// module-norm distance. Sampled boundary points are refined by ascent;
    /// the value found is a lower bound when the module norm is the modular
    /// Monge-Kantorovich metric, and an estimate of an upper proxy otherwise.
    pub fn imprint(&self, samples: usize, seed: u64, opts: &SolverOpts) -> Imprint {
        let mut best: f64 = 0.0;
        let mut iterations = 0;
        for (s, side) in [Side::First, Side::Second].into_iter().enumerate() {
            let b = self.bundle(side);
            let mut rng = rng_from_seed(derive_seed(seed, s as u64));
            let mut scored: Vec<(f64, DVector<f64>)> = Vec::with_capacity(samples);
            for i in 0..samples {
                let w = b.module.to_coords(&b.module.sample(&mut rng, i));
                let d = b.dnorm.eval(&w);
                if d <= 1e-12 {
                    continue;
                }
                // Distance to a finite set can peak inside the ball.
                let scales: &[f64] = if self.hull { &[1.0] } else { &[1.0, 0.5, 0.0] };
                for &c in scales {
                    let w = &w * (c / d);
                    let (dist, _) = self.anchor_distance(side, &w);
                    scored.push((dist, w));
                }
            }
            scored.sort_by(|x, y| y.0.partial_cmp(&x.0).expect("finite"));
            if let Some(top) = scored.first() {
                best = best.max(top.0);
            }
            let a = self.anchor_matrix(side);
            let norm = norm_seminorm(&b.module).expect("norm atom");
            let hull = self.hull;
            let objective = move |v: &DVector<f64>| {
                let (dist, beta) = nearest_anchor(&a, &norm, v, hull);
                let (_, g) = norm.eval_with_subgradient(&(v - &a * beta));
                (dist, g)
            };
            let prob = Ascent { ball: &b.dnorm, objective: &objective, flat: None, to_boundary: hull };
            let starts: Vec<DVector<f64>> = scored.iter().take(3).map(|x| x.1.clone()).collect();
            if !starts.is_empty() {
                let e = ball_ascent(&prob, &starts, &opts.with_iterations(opts.iterations.min(300)).with_seed(derive_seed(seed, 7 + s as u64)));
                iterations += e.iterations;
                best = best.max(e.value);
            }
        }
        let exact = norm_is_mk(&self.first) && norm_is_mk(&self.second);
        let kind = if exact { BoundKind::Lower } else { BoundKind::Approx };
        let cap = if self.hull { 1.0 } else { 2.0 };
        let best = best.min(cap);
        Imprint { estimate: Estimate::new(best, kind, opts.tol, iterations), cap, figure: cap.min(1.25 * best + 0.01) }
    }

    /// `max(length of the base bridge, imprint + modular reach)`.
    pub fn modular_length(&self, stats: &BridgeStats, imprint: f64) -> Estimate {
        let reach = self.modular_reach();
        let v = stats.length.value.max(imprint + reach.value);
        Estimate::new(v, stats.length.kind.max_of(BoundKind::Approx), stats.length.tol, stats.length.iterations)
    }
}

/// Nearest anchor (`hull == false`) or nearest point of the balanced hull,
/// in the seminorm `norm`; returns the distance and the coefficients.
fn nearest_anchor(a: &nalgebra::DMatrix<f64>, norm: &Seminorm, w: &DVector<f64>, hull: bool) -> (f64, DVector<f64>) {
    let j = a.ncols();
    if !hull {
        let mut best = (f64::INFINITY, DVector::zeros(j));
        for k in 0..j {
            let d = norm.eval(&(w - a.column(k)));
            if d < best.0 {
                let mut e = DVector::zeros(j);
                e[k] = 1.0;
                best = (d, e);
            }
        }
        return best;
    }
    let f = |beta: &DVector<f64>| {
        let (v, g) = norm.eval_with_subgradient(&(w - a * beta));
        (v, -(a.transpose() * g))
    };
    let mut starts = vec![DVector::zeros(j)];
    for k in 0..j {
        for s in [1.0, -1.0] {
            let mut e = DVector::zeros(j);
            e[k] = s;
            starts.push(e);
        }
    }
    if let Ok(p) = a.clone().pseudo_inverse(1e-10) {
        starts.push(p * w);
    }
    starts.sort_by(|x, y| f(&project_l1_ball(x, 1.0)).0.partial_cmp(&f(&project_l1_ball(y, 1.0)).0).expect("finite"));
    starts.truncate(4);
    l1_ball_descent(f, &starts, 600)
}

fn deck_seminorm(base: &Bridge, m: &HilbertModule, n: &HilbertModule, anchors: &[ModElem], coanchors: &[ModElem]) -> Result<Seminorm> {
    let (left, right) = base.full_maps();
    let (dm, dn) = (m.dim(), n.dim());
    let rows = base.pivot.real_dim();
    let out: Vec<(usize, usize)> = base.pivot.blocks().iter().map(|&k| (k, k)).collect();
    let mut atoms = Vec::new();
    for (w, z) in anchors.iter().zip(coanchors) {
        for (mw, mz) in [(m.inner_map_left(w), n.inner_map_left(z)), (m.inner_map(w), n.inner_map(z))] {
            let mut map = nalgebra::DMatrix::zeros(rows, dm + dn);
            map.view_mut((0, 0), (rows, dm)).copy_from(&(left * mw));
            map.view_mut((0, dm), (rows, dn)).copy_from(&(-(right * mz)));
            atoms.push(Atom::new(1.0, map, out.clone())?);
        }
    }
    Seminorm::from_atoms(dm + dn, atoms)
}

/// Gauge of the set of pairs within `radius` (module norm) of a common
/// anchor combination:
/// `p(w, z) = min_t max(||w - A t|| / r, ||z - B t|| / r, sum |t_j|)`.
pub struct PivotGauge {
    dm: usize,
    a: nalgebra::DMatrix<f64>,
    b: nalgebra::DMatrix<f64>,
    stacked_pinv: Option<nalgebra::DMatrix<f64>>,
    norm_m: Seminorm,
    norm_n: Seminorm,
    pub radius: f64,
    opts: SolverOpts,
    hints: RwLock<Vec<DVector<f64>>>,
    cache: RwLock<HashMap<Vec<u64>, (f64, DVector<f64>)>>,
}

impl fmt::Debug for PivotGauge {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PivotGauge(radius {}, {} anchors)", self.radius, self.a.ncols())
    }
}

const GAUGE_HINTS: usize = 64;
/// Most recent hints tried as line-search directions per evaluation.
const HINT_STARTS: usize = 8;

impl PivotGauge {
    fn new(bridge: &ModularBridge, radius: f64, opts: &SolverOpts) -> Result<Self> {
        if !(radius > 0.0) {
            return Err(Error::Precondition(format!("gauge radius must be positive, got {radius}")));
        }
        let a = bridge.anchor_matrix(Side::First);
        let b = bridge.anchor_matrix(Side::Second);
        let mut stacked = nalgebra::DMatrix::zeros(a.nrows() + b.nrows(), a.ncols());
        stacked.view_mut((0, 0), (a.nrows(), a.ncols())).copy_from(&a);
        stacked.view_mut((a.nrows(), 0), (b.nrows(), a.ncols())).copy_from(&b);
        Ok(Self {
            dm: bridge.first.module.dim(),
            stacked_pinv: stacked.pseudo_inverse(1e-10).ok(),
            a,
            b,
            norm_m: norm_seminorm(&bridge.first.module)?,
            norm_n: norm_seminorm(&bridge.second.module)?,
            radius,
            opts: opts.with_iterations(400),
            hints: RwLock::new(Vec::new()),
            cache: RwLock::new(HashMap::new()),
        })
    }

    fn split(&self, v: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        (v.rows(0, self.dm).into_owned(), v.rows(self.dm, v.len() - self.dm).into_owned())
    }

    /// Objective in the coefficients, its subgradient, and which term is
    /// active (0: first side, 1: second side, 2: l1 norm).
    fn objective(&self, w: &DVector<f64>, z: &DVector<f64>, t: &DVector<f64>) -> (f64, DVector<f64>, usize) {
        let r = self.radius;
        let (v1, g1) = self.norm_m.eval_with_subgradient(&(w - &self.a * t));
        let (v2, g2) = self.norm_n.eval_with_subgradient(&(z - &self.b * t));
        let v3: f64 = t.iter().map(|x| x.abs()).sum();
        let (v1, v2) = (v1 / r, v2 / r);
        if v1 >= v2 && v1 >= v3 {
            (v1, -(self.a.transpose() * g1) / r, 0)
        } else if v2 >= v3 {
            (v2, -(self.b.transpose() * g2) / r, 1)
        } else {
            (v3, t.map(|x| if x > 0.0 { 1.0 } else if x < 0.0 { -1.0 } else { 0.0 }), 2)
        }
    }

    /// Value and minimizing coefficients at `v` in `M (+) N` coordinates.
    /// The solve runs on a quantized unit direction with a fixed sign, so
    /// that `p(c v) = |c| p(v)` holds to rounding.
    pub fn value_at(&self, v: &DVector<f64>) -> (f64, DVector<f64>) {
        let n = v.norm();
        if n == 0.0 {
            return (0.0, DVector::zeros(self.a.ncols()));
        }
        const GRID: f64 = 1099511627776.0; // 2^40
        let mut u = v.map(|x| (x / n * GRID).round() / GRID);
        let sign = u.iter().find(|x| **x != 0.0).map_or(1.0, |x| x.signum());
        u *= sign;
        let (val, t) = self.value_unit(&u);
        (val * n, t * (n * sign))
    }

    fn value_unit(&self, v: &DVector<f64>) -> (f64, DVector<f64>) {
        let j = self.a.ncols();
        if v.iter().all(|x| *x == 0.0) {
            return (0.0, DVector::zeros(j));
        }
        let key: Vec<u64> = v.iter().map(|x| x.to_bits()).collect();
        if let Some(hit) = self.cache.read().expect("cache lock").get(&key) {
            return hit.clone();
        }
        let (w, z) = self.split(v);
        let f = |t: &DVector<f64>| {
            let (val, g, _) = self.objective(&w, &z, t);
            (val, g)
        };
        let g0 = f(&DVector::zeros(j)).0;
        let mut dirs: Vec<DVector<f64>> = {
            let h = self.hints.read().expect("hint lock");
            h.iter().rev().take(HINT_STARTS).cloned().collect()
        };
        if let Some(p) = &self.stacked_pinv {
            dirs.push(p * v);
        }
        let mut starts = vec![DVector::zeros(j)];
        for d in dirs {
            let l1: f64 = d.iter().map(|x| x.abs()).sum();
            if l1 <= 1e-15 {
                continue;
            }
            let bound = g0 / l1;
            let (s, _) = golden_section(|s| f(&(&d * s)).0, -bound, bound);
            starts.push(d * s);
        }
        let mut scored: Vec<(f64, DVector<f64>)> = starts.into_iter().map(|t| (f(&t).0, t)).collect();
        scored.sort_by(|x, y| x.0.partial_cmp(&y.0).expect("finite"));
        let starts: Vec<DVector<f64>> = scored.into_iter().take(4).map(|x| x.1).collect();
        let (val, t, _) = minimize_affine(f, &starts, |g: &DVector<f64>| g.clone(), &self.opts, None);
        let out = (val, t);
        let mut c = self.cache.write().expect("cache lock");
        if c.len() > 200_000 {
            c.clear();
        }
        c.insert(key, out.clone());
        out
    }

    /// Remembers anchor coefficients found by a lift, for reuse as starting
    /// directions.
    fn register(&self, t: &DVector<f64>) {
        let mut h = self.hints.write().expect("hint lock");
        if h.iter().any(|x| (x - t).amax() < 1e-12) {
            return;
        }
        if h.len() >= GAUGE_HINTS {
            h.remove(0);
        }
        h.push(t.clone());
    }

    /// Whether some combination `t` in the unit l1 ball has both sides
    /// within the radius, up to `tol`.
    pub fn contains(&self, v: &DVector<f64>, tol: f64) -> bool {
        let (w, z) = self.split(v);
        let r = self.radius;
        let f = |t: &DVector<f64>| {
            let (v1, g1) = self.norm_m.eval_with_subgradient(&(&w - &self.a * t));
            let (v2, g2) = self.norm_n.eval_with_subgradient(&(&z - &self.b * t));
            if v1 >= v2 {
                (v1 - r, -(self.a.transpose() * g1))
            } else {
                (v2 - r, -(self.b.transpose() * g2))
            }
        };
        let j = self.a.ncols();
        let (_, t0) = self.value_at(v);
        let l1: f64 = t0.iter().map(|x| x.abs()).sum();
        let mut starts = vec![DVector::zeros(j), t0 / l1.max(1.0)];
        starts.sort_by(|x, y| f(x).0.partial_cmp(&f(y).0).expect("finite"));
        if f(&starts[0]).0 <= tol {
            return true;
        }
        l1_ball_descent(f, &starts, 600).0 <= tol
    }

    /// The gauge by bisection on the membership oracle.
    pub fn by_bisection(&self, v: &DVector<f64>, tol: f64) -> Result<Estimate> {
        minkowski_gauge(|u| self.contains(u, 1e-9), v, tol)
    }
}

impl Gauge for PivotGauge {
    fn dim(&self) -> usize {
        self.a.nrows() + self.b.nrows()
    }

    fn eval(&self, v: &DVector<f64>) -> Ext {
        Ext::Finite(self.value_at(v).0)
    }

    fn subgradient(&self, v: &DVector<f64>) -> Option<DVector<f64>> {
        let (_, t) = self.value_at(v);
        let (w, z) = self.split(v);
        let (_, _, which) = self.objective(&w, &z, &t);
        let mut g = DVector::zeros(v.len());
        match which {
            0 => {
                let (_, g1) = self.norm_m.eval_with_subgradient(&(&w - &self.a * &t));
                g.rows_mut(0, self.dm).copy_from(&(g1 / self.radius));
            }
            1 => {
                let (_, g2) = self.norm_n.eval_with_subgradient(&(&z - &self.b * &t));
                let n = v.len() - self.dm;
                g.rows_mut(self.dm, n).copy_from(&(g2 / self.radius));
            }
            _ => {}
        }
        Some(g)
    }

    fn describe(&self) -> String {
        format!("anchor gauge (radius {})", self.radius)
    }
}

/// Data needed to lift along the legs of a bridge-built modular tunnel.
#[derive(Clone, Debug)]
pub struct BridgeLift {
    pub bridge: Arc<ModularBridge>,
    pub gauge: Arc<PivotGauge>,
}

/// How a modular tunnel was obtained.
#[derive(Clone, Debug)]
pub enum ModOrigin {
    Identity,
    Bridge(BridgeLift),
    Composite { first: Arc<ModularTunnel>, second: Arc<ModularTunnel>, epsilon: f64 },
    Inverse(Arc<ModularTunnel>),
    FreeModule { base: Arc<Tunnel>, gamma: f64, rank: usize },
    Custom(String),
}

/// A pivot bundle with module maps onto both ends, certified as modular
/// quantum isometries, over a tunnel between the base spaces.
#[derive(Clone, Debug)]
pub struct ModularTunnel {
    pub pivot: Arc<Mqvb>,
    pub base: Arc<Tunnel>,
    pub domain: Arc<Mqvb>,
    pub codomain: Arc<Mqvb>,
    pub leg_first: ModularMorphism,
    pub leg_second: ModularMorphism,
    /// Extent upper bound certified by the construction.
    pub figure: f64,
    pub stages: usize,
    pub origin: ModOrigin,
    /// Construction parameters actually used (radius, lambda, epsilon, ...).
    pub parameters: Vec<(String, f64)>,
    pub isometry: [CheckReport; 2],
    extent: OnceLock<Estimate>,
}

impl ModularTunnel {
    /// Checks the legs against the base tunnel and as modular isometries.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        pivot: Arc<Mqvb>,
        base: Arc<Tunnel>,
        domain: Arc<Mqvb>,
        codomain: Arc<Mqvb>,
        leg_first: ModularMorphism,
        leg_second: ModularMorphism,
        figure: f64,
        stages: usize,
        origin: ModOrigin,
        parameters: Vec<(String, f64)>,
        budget: &CheckBudget,
    ) -> Result<Self> {
        if pivot.base.name != base.pivot.name || pivot.base.shape != base.pivot.shape {
            return Err(Error::Shape("pivot bundle is not over the base tunnel's pivot".into()));
        }
        for (leg, tleg, end, tend) in [(&leg_first, &base.leg_first, &domain, &base.domain), (&leg_second, &base.leg_second, &codomain, &base.codomain)] {
            if (leg.theta.map() - tleg.map()).amax() > 1e-12 {
                return Err(Error::Shape("module leg is not over the base tunnel leg".into()));
            }
            if leg.source != pivot.module || leg.target != end.module {
                return Err(Error::Shape("module leg does not connect the pivot to the end".into()));
            }
            if end.base.name != tend.name || end.base.shape != tend.shape {
                return Err(Error::Shape(format!("bundle {} is not over {}", end.name, tend.name)));
            }
        }
        let mut t = Self {
            pivot,
            base,
            domain,
            codomain,
            leg_first,
            leg_second,
            figure,
            stages,
            origin,
            parameters,
            isometry: [CheckReport::new("leg", budget.tol), CheckReport::new("leg", budget.tol)],
            extent: OnceLock::new(),
        };
        for (i, side) in [Side::First, Side::Second].into_iter().enumerate() {
            let lift = |w: &DVector<f64>| t.lift(side, w, &budget.opts);
            let rep = modular_isometry_check(
                t.leg(side),
                &t.pivot,
                t.end(side),
                budget.samples,
                derive_seed(budget.seed, 0x30 + i as u64),
                budget.tol,
                Some(&lift),
                false,
                &budget.opts,
            )?;
            if !rep.pass {
                return Err(Error::Validation(format!("module leg onto {} is not a modular isometry: {rep}", t.end(side).name)));
            }
            t.isometry[i] = rep;
        }
        Ok(t)
    }

    pub fn identity(bundle: Arc<Mqvb>) -> Self {
        let base = Arc::new(Tunnel::identity(bundle.base.clone()));
        let id = ModularMorphism::identity(&bundle.module);
        let mut rep = CheckReport::new("modular isometry", 0.0);
        rep.record(0.0, String::new);
        Self {
            pivot: bundle.clone(),
            base,
            domain: bundle.clone(),
            codomain: bundle,
            leg_first: id.clone(),
            leg_second: id,
            figure: 0.0,
            stages: 0,
            origin: ModOrigin::Identity,
            parameters: Vec::new(),
            isometry: [rep.clone(), rep],
            extent: OnceLock::new(),
        }
    }

    pub fn invert(&self) -> Self {
        Self {
            pivot: self.pivot.clone(),
            base: Arc::new(self.base.invert()),
            domain: self.codomain.clone(),
            codomain: self.domain.clone(),
            leg_first: self.leg_second.clone(),
            leg_second: self.leg_first.clone(),
            figure: self.figure,
            stages: self.stages,
            origin: ModOrigin::Inverse(Arc::new(self.clone())),
            parameters: self.parameters.clone(),
            isometry: [self.isometry[1].clone(), self.isometry[0].clone()],
            extent: OnceLock::new(),
        }
    }

    pub fn leg(&self, side: Side) -> &ModularMorphism {
        match side {
            Side::First => &self.leg_first,
            Side::Second => &self.leg_second,
        }
    }

    pub fn end(&self, side: Side) -> &Arc<Mqvb> {
        match side {
            Side::First => &self.domain,
            Side::Second => &self.codomain,
        }
    }

    /// A preimage in the pivot module of `w` (coordinates of one end) with
    /// D-norm close to `D(w)`.
    pub fn lift(&self, side: Side, w: &DVector<f64>, opts: &SolverOpts) -> DVector<f64> {
        match &self.origin {
            ModOrigin::Identity => w.clone(),
            ModOrigin::Inverse(t) => t.lift(side.other(), w, opts),
            ModOrigin::Bridge(bl) => {
                let b = &bl.bridge;
                let s = b.bundle(side).dnorm.eval(w);
                let other = b.bundle(side.other()).module.dim();
                if s <= 1e-300 {
                    return match side {
                        Side::First => concat(w, &DVector::zeros(other)),
                        Side::Second => concat(&DVector::zeros(other), w),
                    };
                }
                let (_, t) = b.anchor_distance(side, &(w / s));
                bl.gauge.register(&t);
                let partner = b.anchor_matrix(side.other()) * &t * s;
                match side {
                    Side::First => concat(w, &partner),
                    Side::Second => concat(&partner, w),
                }
            }
            ModOrigin::Composite { first, second, .. } => match side {
                Side::First => {
                    let p = first.lift(Side::First, w, opts);
                    let mid = first.leg_second.map() * &p;
                    let r = second.lift(Side::First, &mid, opts);
                    concat(&p, &r)
                }
                Side::Second => {
                    let r = second.lift(Side::Second, w, opts);
                    let mid = second.leg_first.map() * &r;
                    let p = first.lift(Side::Second, &mid, opts);
                    concat(&p, &r)
                }
            },
            ModOrigin::FreeModule { base, gamma, .. } => free_module_lift(self, base, *gamma, side, w, opts),
            ModOrigin::Custom(_) => {
                let leg = self.leg(side);
                fiber_infimum(&self.pivot.dnorm, leg.map(), w, &[], None, opts)
                    .ok()
                    .and_then(|e| e.certificate)
                    .map(DVector::from_vec)
                    .unwrap_or_else(|| leg.map().clone().pseudo_inverse(1e-12).expect("pseudo-inverse") * w)
            }
        }
    }

    /// Extent of the base tunnel, computed once.
    pub fn extent(&self, opts: &SolverOpts) -> Result<Estimate> {
        if let Some(e) = self.extent.get() {
            return Ok(e.clone());
        }
        let e = self.base.extent(opts)?;
        Ok(self.extent.get_or_init(|| e).clone())
    }

    pub fn upper_figure(&self) -> Estimate {
        Estimate::upper(self.figure, 0.0, 0)
    }

    pub fn parameter(&self, name: &str) -> Option<f64> {
        self.parameters.iter().find(|(k, _)| k == name).map(|(_, v)| *v)
    }
}

/// Extent of a modular tunnel: the extent of its base tunnel.
pub fn modular_extent(t: &ModularTunnel, opts: &SolverOpts) -> Result<Estimate> {
    t.extent(opts)
}

/// Options for building a modular tunnel from a bridge.
#[derive(Clone, Copy, Debug, Default)]
pub struct BridgeTunnelOpts {
    /// Length figure; defaults to `max(1.25 len + 1e-3, radius + reach)`.
    pub lambda: Option<f64>,
    /// Slack added to `lambda`; when `lambda` is 0 and this is 0, 1e-6 is used.
    pub epsilon: f64,
    /// Radius of the gauge set; defaults to the imprint figure.
    pub radius: Option<f64>,
    /// Sample count for the imprint estimate.
    pub imprint_samples: usize,
}

/// Modular tunnel on `M (+) N` from a convexified modular bridge, with
/// `L = max(L_A, L_B, bn / (lambda + eps))` and
/// `D = max(D_M, D_N, dn / (lambda + eps), p)`, `p` the gauge of the
/// anchor set thickened by the radius.
pub fn modular_tunnel_from_bridge(bridge: Arc<ModularBridge>, o: &BridgeTunnelOpts, budget: &CheckBudget) -> Result<ModularTunnel> {
    if !bridge.hull {
        return Err(Error::Precondition("the bridge must be convexified first".into()));
    }
    let opts = &budget.opts;
    let stats = bridge.base.stats(opts)?;
    let mut parameters = Vec::new();
    let radius = match o.radius {
        Some(r) => r,
        None => {
            let im = bridge.imprint(if o.imprint_samples == 0 { 200 } else { o.imprint_samples }, derive_seed(budget.seed, 0x1A), opts);
            parameters.push(("imprint_estimate".to_string(), im.estimate.value));
            im.figure
        }
    };
    parameters.push(("radius".to_string(), radius));
    let reach = bridge.modular_reach().value;
    let lambda = o.lambda.unwrap_or_else(|| (1.25 * stats.length.value + 1e-3).max(radius + reach));
    let epsilon = if lambda == 0.0 && o.epsilon == 0.0 { 1e-6 } else { o.epsilon };
    if !(lambda + epsilon > 0.0) {
        return Err(Error::Precondition(format!("lambda + epsilon must be positive, got {}", lambda + epsilon)));
    }
    let lam = lambda + epsilon;
    parameters.push(("modular_reach".to_string(), reach));
    parameters.push(("base_length".to_string(), stats.length.value));
    parameters.push(("lambda".to_string(), lambda));
    parameters.push(("epsilon".to_string(), epsilon));
    let base = Arc::new(tunnel_from_bridge(bridge.base.clone(), lam, Some(&stats), true, budget)?);
    let (m, n) = (&bridge.first.module, &bridge.second.module);
    let module = HilbertModule::direct_sum(m, n)?;
    if module.base() != &base.pivot.shape {
        return Err(Error::Shape("module sum is not over the base pivot".into()));
    }
    let total = module.dim();
    let d1 = bridge.first.dnorm.pullback(&selector(total, 0, m.dim()))?;
    let d2 = bridge.second.dnorm.pullback(&selector(total, m.dim(), n.dim()))?;
    let gauge = Arc::new(PivotGauge::new(&bridge, radius, opts)?);
    let dnorm = Seminorm::combine_max(&[(&d1, 1.0), (&d2, 1.0), (bridge.deck_seminorm(), 1.0 / lam)])?.with_gauge(1.0, gauge.clone())?;
    let pivot = Mqvb::new(
        format!("{}[{lam}]", bridge.base.label),
        module.clone(),
        dnorm,
        base.pivot.clone(),
        bridge.first.triple.clone(),
        BundleFamily::General,
        BUNDLE_SAMPLES,
        derive_seed(budget.seed, 0x2B),
    )?;
    let (p1, p2) = sum_projections(&module)?;
    let (domain, codomain) = (bridge.first.clone(), bridge.second.clone());
    let origin = ModOrigin::Bridge(BridgeLift { bridge, gauge });
    ModularTunnel::new(pivot, base, domain, codomain, p1, p2, lam, 1, origin, parameters, budget)
}

/// Modular tunnel on `P (+) R` joining `t1 : A -> B` and `t2 : B -> E`, with
/// the coupling `||Theta_B(w) - Pi_B(z)|| / epsilon` in the module of `B`.
pub fn compose_modular(t1: Arc<ModularTunnel>, t2: Arc<ModularTunnel>, epsilon: f64, budget: &CheckBudget) -> Result<ModularTunnel> {
    if !(epsilon > 0.0) {
        return Err(Error::Precondition(format!("composition slack must be positive, got {epsilon}")));
    }
    if !same_bundle(&t1.codomain, &t2.domain) {
        return Err(Error::Shape(format!("cannot compose: {} is not {}", t1.codomain.name, t2.domain.name)));
    }
    let base = Arc::new(compose_tunnels(t1.base.clone(), t2.base.clone(), epsilon, budget)?);
    let (p, r) = (&t1.pivot.module, &t2.pivot.module);
    let module = HilbertModule::direct_sum(p, r)?;
    if module.base() != &base.pivot.shape {
        return Err(Error::Shape("module sum is not over the composite pivot".into()));
    }
    let total = module.dim();
    let d1 = t1.pivot.dnorm.pullback(&selector(total, 0, p.dim()))?;
    let d2 = t2.pivot.dnorm.pullback(&selector(total, p.dim(), r.dim()))?;
    let mid = &t1.codomain.module;
    let mut diff = nalgebra::DMatrix::zeros(mid.dim(), total);
    diff.view_mut((0, 0), (mid.dim(), p.dim())).copy_from(t1.leg_second.map());
    diff.view_mut((0, p.dim()), (mid.dim(), r.dim())).copy_from(&(-t2.leg_first.map()));
    let coupling = norm_seminorm(mid)?.pullback(&diff)?;
    let dnorm = Seminorm::combine_max(&[(&d1, 1.0), (&d2, 1.0), (&coupling, 1.0 / epsilon)])?;
    let pivot = Mqvb::new(
        format!("({} ; {})", t1.pivot.name, t2.pivot.name),
        module.clone(),
        dnorm,
        base.pivot.clone(),
        t1.pivot.triple.clone(),
        BundleFamily::General,
        BUNDLE_SAMPLES,
        derive_seed(budget.seed, 0x3C),
    )?;
    let (q1, q2) = sum_projections(&module)?;
    let leg_first = t1.leg_first.after(&q1)?;
    let leg_second = t2.leg_second.after(&q2)?;
    let figure = t1.figure + t2.figure + epsilon;
    let stages = t1.stages + t2.stages + 1;
    let (domain, codomain) = (t1.domain.clone(), t2.codomain.clone());
    let origin = ModOrigin::Composite { first: t1, second: t2, epsilon };
    ModularTunnel::new(pivot, base, domain, codomain, leg_first, leg_second, figure, stages, origin, vec![("epsilon".into(), epsilon)], budget)
}

/// `sqrt(1 + 4 p F(1 + 2 lambda, 1 + 2 lambda, 1, 1) lambda)`.
pub fn free_module_gamma(f: &PermFn, p: usize, lambda: f64) -> f64 {
    let x = 1.0 + 2.0 * lambda;
    (1.0 + 4.0 * p as f64 * f.call(&[x, x, 1.0, 1.0]) * lambda).sqrt()
}

/// `2 (gamma - 1) / gamma + lambda`.
pub fn free_module_figure(gamma: f64, lambda: f64) -> f64 {
    2.0 * (gamma - 1.0) / gamma + lambda
}

/// Tunnel between `A^p` and `B^p` (Lipschitz D-norms) built on the module
/// `A^p (+) D^p (+) B^p` over the widened pivot of `base`, with coupling
/// terms `w ||w - pi_A(z)||` and `w ||pi_B(z) - u||`, `w = gamma / (gamma - 1)`.
/// A base tunnel of figure 0 between a space and itself gives the identity.
pub fn free_module_tunnel(base: Arc<Tunnel>, p: usize, budget: &CheckBudget) -> Result<ModularTunnel> {
    if p == 0 {
        return Err(Error::Precondition("rank must be positive".into()));
    }
    let lambda = base.figure;
    let f = &base.domain.triple.f;
    let gamma = free_module_gamma(f, p, lambda);
    let seed = budget.seed;
    if lambda == 0.0 {
        if base.domain.name != base.codomain.name || base.domain.shape != base.codomain.shape {
            return Err(Error::Precondition("a tunnel of figure 0 must join a space to itself".into()));
        }
        let b = qvba(base.domain.clone(), p, derive_seed(seed, 0x41))?;
        let mut t = ModularTunnel::identity(b);
        t.parameters = vec![("gamma".into(), 1.0), ("lambda".into(), 0.0)];
        return Ok(t);
    }
    let wide = Arc::new(widen_tunnel(base.clone(), gamma, budget)?);
    let qa = qvba(base.domain.clone(), p, derive_seed(seed, 0x41))?;
    let qd = qvba(base.pivot.clone(), p, derive_seed(seed, 0x42))?;
    let qb = qvba(base.codomain.clone(), p, derive_seed(seed, 0x43))?;
    let ad = HilbertModule::direct_sum(&qa.module, &qd.module)?;
    let module = HilbertModule::direct_sum(&ad, &qb.module)?;
    if module.base() != &wide.pivot.shape {
        return Err(Error::Shape("free module sum is not over the widened pivot".into()));
    }
    let (na, nd, nb) = (qa.module.dim(), qd.module.dim(), qb.module.dim());
    let total = na + nd + nb;
    let da = qa.dnorm.pullback(&selector(total, 0, na))?;
    let dd = qd.dnorm.pullback(&selector(total, na, nd))?;
    let db = qb.dnorm.pullback(&selector(total, na + nd, nb))?;
    let w = gamma / (gamma - 1.0);
    let pa = qd.module.componentwise(&base.leg_first, &qa.module);
    let pb = qd.module.componentwise(&base.leg_second, &qb.module);
    let mut ca = nalgebra::DMatrix::zeros(na, total);
    ca.view_mut((0, 0), (na, na)).copy_from(&nalgebra::DMatrix::identity(na, na));
    ca.view_mut((0, na), (na, nd)).copy_from(&(-&pa));
    let mut cb = nalgebra::DMatrix::zeros(nb, total);
    cb.view_mut((0, na), (nb, nd)).copy_from(&pb);
    cb.view_mut((0, na + nd), (nb, nb)).copy_from(&(-nalgebra::DMatrix::identity(nb, nb)));
    let ca = norm_seminorm(&qa.module)?.pullback(&ca)?;
    let cb = norm_seminorm(&qb.module)?.pullback(&cb)?;
    let dnorm = Seminorm::combine_max(&[(&da, 1.0), (&dd, 1.0), (&db, 1.0), (&ca, w), (&cb, w)])?;
    let fh = qa.triple.f.clone();
    let pf = p as f64;
    let h = PermFn::new(format!("max(8*{p}*F(x,y,x,y), 2*{p}*x^2*y^2)"), 2, move |a| {
        (8.0 * pf * fh.call(&[a[0], a[1], a[0], a[1]])).max(2.0 * pf * a[0] * a[0] * a[1] * a[1])
    });
    let triple = qa.triple.with_h(h);
    let pivot = Mqvb::new(
        format!("{}^{p}", wide.pivot.name),
        module.clone(),
        dnorm,
        wide.pivot.clone(),
        triple,
        BundleFamily::General,
        BUNDLE_SAMPLES,
        derive_seed(seed, 0x44),
    )?;
    let (ka, kd) = (base.domain.shape.num_blocks(), base.pivot.shape.num_blocks());
    let leg_first = ModularMorphism::from_fn(wide.leg_first.clone(), module.clone(), qa.module.clone(), |x| ModElem {
        comps: x.comps[..p].iter().map(|c| Element { blocks: c.blocks[..ka].to_vec() }).collect(),
    })?;
    let leg_second = ModularMorphism::from_fn(wide.leg_second.clone(), module.clone(), qb.module.clone(), |x| ModElem {
        comps: x.comps[2 * p..].iter().map(|c| Element { blocks: c.blocks[ka + kd..].to_vec() }).collect(),
    })?;
    let figure = wide.figure;
    let parameters = vec![("gamma".into(), gamma), ("lambda".into(), lambda)];
    let origin = ModOrigin::FreeModule { base, gamma, rank: p };
    ModularTunnel::new(pivot, wide, qa, qb, leg_first, leg_second, figure, 1, origin, parameters, budget)
}

/// Lift for free-module tunnels: each component `c` of `w / D(w)` is lifted
/// through the base tunnel (real and imaginary parts separately) to `d`,
/// and the preimage is `D(w) (c, d / gamma, pi(d) / gamma)`.
fn free_module_lift(t: &ModularTunnel, base: &Tunnel, gamma: f64, side: Side, w: &DVector<f64>, opts: &SolverOpts) -> DVector<f64> {
    let end = t.end(side);
    let s = end.dnorm.eval(w);
    let m = &t.pivot.module;
    if s <= 1e-300 {
        return DVector::zeros(m.dim());
    }
    let x = end.module.from_coords((w / s).as_slice()).expect("coords");
    let dshape = &base.pivot.shape;
    let mut ds = Vec::with_capacity(x.comps.len());
    for c in &x.comps {
        let (re, im) = c.re_im();
        let e = base.lift(side, &re.to_sa_coords(), opts);
        let f = base.lift(side, &im.to_sa_coords(), opts);
        let e = Element::from_sa_coords(dshape, e.as_slice()).expect("coords");
        let f = Element::from_sa_coords(dshape, f.as_slice()).expect("coords");
        ds.push(e.add(&f.scale(C64::new(0.0, 1.0))));
    }
    let g = 1.0 / gamma;
    let mid: Vec<Element> = ds.iter().map(|d| d.scale_real(g)).collect();
    let to_a: Vec<Element> = ds.iter().map(|d| base.leg_first.apply(d).scale_real(g)).collect();
    let to_b: Vec<Element> = ds.iter().map(|d| base.leg_second.apply(d).scale_real(g)).collect();
    let (first, last) = match side {
        Side::First => (x.comps.clone(), to_b),
        Side::Second => (to_a, x.comps.clone()),
    };
    let mut comps = Vec::new();
    let (ka, kd, kb) = (base.domain.shape.num_blocks(), dshape.num_blocks(), base.codomain.shape.num_blocks());
    let bshape = m.base();
    for c in &first {
        let mut e = Element::zeros(bshape);
        e.blocks[..ka].clone_from_slice(&c.blocks);
        comps.push(e);
    }
    for c in &mid {
        let mut e = Element::zeros(bshape);
        e.blocks[ka..ka + kd].clone_from_slice(&c.blocks);
        comps.push(e);
    }
    for c in &last {
        let mut e = Element::zeros(bshape);
        e.blocks[ka + kd..ka + kd + kb].clone_from_slice(&c.blocks);
        comps.push(e);
    }
    m.to_coords(&m.element(comps).expect("shape")) * s
}

/// A pivot element of a target set and its image.
#[derive(Clone, Debug)]
pub struct TargetPoint {
    pub pivot: DVector<f64>,
    pub image: DVector<f64>,
}

/// Largest `t >= 0` with `D(p + t u) <= l`, given `D(p) <= l`.
pub(crate) fn ray_extent(s: &Seminorm, p: &DVector<f64>, u: &DVector<f64>, l: f64) -> f64 {
    let inside = |t: f64| s.eval(&(p + u * t)) <= l;
    let mut hi = 1.0;
    while inside(hi) {
        hi *= 2.0;
        if hi > 1e8 {
            return hi;
        }
    }
    let mut lo = 0.0;
    for _ in 0..50 {
        let mid = 0.5 * (lo + hi);
        if inside(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

/// Points of the `l`-target set of `w` (coordinates of the domain module):
/// images under the second leg of pivot elements over `w` with D-norm at
/// most `l`.
pub fn module_target_set(t: &ModularTunnel, w: &DVector<f64>, l: f64, k: usize, seed: u64, opts: &SolverOpts) -> Result<Vec<TargetPoint>> {
    let dw = t.domain.dnorm.eval(w);
    if dw > l * (1.0 + 1e-9) + 1e-12 {
        return Err(Error::Precondition(format!("element has D-norm {dw} above {l}")));
    }
    let d = &t.pivot.dnorm;
    let p = t.leg_first.map();
    let hint = t.lift(Side::First, w, opts);
    let mut x0 = hint.clone();
    if d.eval(&x0) > l * (1.0 + 1e-9) {
        let fib = fiber_infimum(d, p, w, &[hint], Some(dw), opts)?;
        if let Some(c) = fib.certificate {
            x0 = DVector::from_vec(c);
        }
    }
    let l0 = d.eval(&x0);
    if l0 > l * (1.0 + 1e-6) + 1e-9 {
        return Err(Error::Infeasible(format!("no preimage with D-norm {l}; best found {l0}")));
    }
    let range = orthonormal_basis(&p.transpose());
    let proj = |v: &DVector<f64>| if range.ncols() == 0 { v.clone() } else { v - &range * (range.transpose() * v) };
    let q = t.leg_second.map();
    let mut out = vec![TargetPoint { image: q * &x0, pivot: x0.clone() }];
    let mut rng = rng_from_seed(seed);
    let lmax = l.max(l0);
    let mut tries = 0;
    while out.len() < k.max(1) && tries < 4 * k + 4 {
        tries += 1;
        let u = proj(&random_real_vector(x0.len(), &mut rng));
        if u.norm() < 1e-12 {
            break;
        }
        let u = &u / u.norm();
        let tmax = ray_extent(d, &x0, &u, lmax);
        if tmax >= 1e8 {
            continue;
        }
        let frac = if out.len() % 3 == 0 { 0.5 } else { 1.0 };
        let x = &x0 + u * (tmax * frac);
        out.push(TargetPoint { image: q * &x, pivot: x });
    }
    Ok(out)
}

/// Margins of the module target-set bounds under two readings of the
/// tunnel size: the certified extent figure and the numeric extent.
#[derive(Clone, Debug)]
pub struct ModuleTargetReport {
    pub points: usize,
    pub diameter: f64,
    pub diameter_figure: CheckReport,
    pub diameter_extent: CheckReport,
    pub combination: CheckReport,
    pub coherence_figure: CheckReport,
    pub coherence_extent: CheckReport,
}

impl ModuleTargetReport {
    pub fn pass_figure(&self) -> bool {
        self.diameter_figure.pass && self.combination.pass && self.coherence_figure.pass
    }
}

/// Checks, for `w`, `w2` in the domain with `D <= l` and a complex `c`:
/// the modular MK diameter of the target set of `w` against
/// `sqrt(2) H(2l, 1) ext`; that `z + c z2` is a target of `w + c w2` at
/// level `l (1 + |c|)`; and `||b - <z, z>|| <= 2 H(l, l) ext` for `b` in the
/// base target set of `<w, w>` at level `H(l, l)`.
#[allow(clippy::too_many_arguments)]
pub fn module_target_checks(
    t: &ModularTunnel,
    w: &DVector<f64>,
    w2: &DVector<f64>,
    c: C64,
    l: f64,
    k: usize,
    seed: u64,
    tol: f64,
    opts: &SolverOpts,
) -> Result<ModuleTargetReport> {
    let pts = module_target_set(t, w, l, k, seed, opts)?;
    let pts2 = module_target_set(t, w2, l, 2, derive_seed(seed, 1), opts)?;
    let cod = &t.codomain;
    let h = |x: f64, y: f64| t.pivot.triple.h(x, y);
    let numeric = t.extent(opts)?.value;
    let mut diameter: f64 = 0.0;
    for i in 0..pts.len() {
        for j in (i + 1)..pts.len() {
            let a = cod.module.from_coords(pts[i].image.as_slice())?;
            let b = cod.module.from_coords(pts[j].image.as_slice())?;
            diameter = diameter.max(modular_mk(cod, &a, &b, opts)?.value);
        }
    }
    let mut dfig = CheckReport::new("module target diameter (figure)", tol);
    let mut dext = CheckReport::new("module target diameter (extent)", tol);
    for (r, ext) in [(&mut dfig, t.figure), (&mut dext, numeric)] {
        let bound = 2f64.sqrt() * h(2.0 * l, 1.0) * ext;
        r.record(bound - diameter, || format!("diameter {diameter:.6e} > {bound:.6e}"));
    }

    let mut comb = CheckReport::new("target combination", tol);
    let pm = &t.pivot.module;
    let x1 = pm.from_coords(pts[0].pivot.as_slice())?;
    let x2 = pm.from_coords(pts2[0].pivot.as_slice())?;
    let sum = pm.to_coords(&x1.add(&x2.scale(c)));
    let dm = &t.domain.module;
    let target = dm.to_coords(&dm.from_coords(w.as_slice())?.add(&dm.from_coords(w2.as_slice())?.scale(c)));
    let img = cod.module.to_coords(&cod.module.from_coords(pts[0].image.as_slice())?.add(&cod.module.from_coords(pts2[0].image.as_slice())?.scale(c)));
    let fiber_gap = (t.leg_first.map() * &sum - &target).amax();
    comb.record(-fiber_gap, || format!("combination misses the fiber by {fiber_gap:e}"));
    let image_gap = (t.leg_second.map() * &sum - &img).amax();
    comb.record(-image_gap, || format!("combination image off by {image_gap:e}"));
    let level = l * (1.0 + c.norm());
    let dval = t.pivot.dnorm.eval(&sum);
    comb.record((level - dval) / level.max(1.0), || format!("D {dval:.6e} above {level:.6e}"));

    let wm = dm.from_coords(w.as_slice())?;
    let a = dm.inner(&wm, &wm).to_sa_coords();
    let hl = h(l, l);
    let bs = target_set_points(&t.base, &a, hl, k, derive_seed(seed, 2), opts)?;
    let mut worst: f64 = 0.0;
    for b in &bs {
        let b = Element::from_sa_coords(&cod.base.shape, b.as_slice())?;
        for p in &pts {
            let z = cod.module.from_coords(p.image.as_slice())?;
            worst = worst.max(b.sub(&cod.module.inner(&z, &z)).opnorm());
        }
    }
    let mut cfig = CheckReport::new("inner product coherence (figure)", tol);
    let mut cext = CheckReport::new("inner product coherence (extent)", tol);
    for (r, ext) in [(&mut cfig, t.figure), (&mut cext, numeric)] {
        let bound = 2.0 * hl * ext;
        r.record(bound - worst, || format!("||b - <z, z>|| = {worst:.6e} > {bound:.6e}"));
    }
    Ok(ModuleTargetReport {
        points: pts.len(),
        diameter,
        diameter_figure: dfig,
        diameter_extent: dext,
        combination: comb,
        coherence_figure: cfig,
        coherence_extent: cext,
    })
}

/// A vector of the module with D-norm 1 along the first component's unit.
fn unit_anchor(b: &Mqvb) -> Result<ModElem> {
    let mut comps = vec![Element::zeros(b.module.base()); b.module.components()];
    comps[0] = Element::unit(b.module.base());
    let w = b.module.element(comps)?;
    let d = b.d(&w);
    if !(d > 0.0) {
        return Err(Error::Diagnostic("unit anchor has zero D-norm".into()));
    }
    Ok(w.scale_real(1.0 / d))
}

/// Tunnel through the tensor bridge with one anchor pair, radius 1 and
/// `lambda = max(max(diam A, diam B) / 2, 1 + reach)`, which is at most
/// `max(2, diam A, diam B)`.
pub fn fallback_tunnel(a: Arc<Mqvb>, b: Arc<Mqvb>, budget: &CheckBudget) -> Result<ModularTunnel> {
    let opts = &budget.opts;
    let bridge = Arc::new(Bridge::tensor(a.base.clone(), b.base.clone())?);
    let mb = ModularBridge::new(bridge, a.clone(), b.clone(), vec![unit_anchor(&a)?], vec![unit_anchor(&b)?])?.convexify();
    let da = diameter(&a.base, opts)?.value;
    let db = diameter(&b.base, opts)?.value;
    let reach = mb.modular_reach().value;
    let lambda = (da.max(db) / 2.0).max(1.0 + reach);
    let o = BridgeTunnelOpts { lambda: Some(lambda), epsilon: 0.0, radius: Some(1.0), imprint_samples: 0 };
    let mut t = modular_tunnel_from_bridge(Arc::new(mb), &o, budget)?;
    t.parameters.push(("diam_first".into(), da));
    t.parameters.push(("diam_second".into(), db));
    Ok(t)
}

/// Smallest certified figure over the candidates.
#[derive(Clone, Debug)]
pub struct ModularBound {
    pub estimate: Estimate,
    /// Index of the winning candidate, `None` when the fallback won.
    pub index: Option<usize>,
    pub fallback_figure: Option<f64>,
}

/// Upper bound for the dual modular propinquity: the least certified figure
/// among the candidate tunnels from `a` to `b`, and the fallback tunnel's
/// when `with_fallback` is set or there are no candidates.
pub fn dual_modular_propinquity_ub(
    a: &Arc<Mqvb>,
    b: &Arc<Mqvb>,
    candidates: &[&ModularTunnel],
    with_fallback: bool,
    budget: &CheckBudget,
) -> Result<ModularBound> {
    for c in candidates {
        if !same_bundle(&c.domain, a) || !same_bundle(&c.codomain, b) {
            return Err(Error::Precondition(format!("candidate connects {} to {}, not {} to {}", c.domain.name, c.codomain.name, a.name, b.name)));
        }
    }
    let mut best: Option<(f64, usize, Option<usize>)> = None;
    for (i, c) in candidates.iter().enumerate() {
        if best.map_or(true, |(f, s, _)| c.figure < f || (c.figure == f && c.stages < s)) {
            best = Some((c.figure, c.stages, Some(i)));
        }
    }
    let mut fallback_figure = None;
    if with_fallback || candidates.is_empty() {
        let t = fallback_tunnel(a.clone(), b.clone(), budget)?;
        fallback_figure = Some(t.figure);
        if best.map_or(true, |(f, _, _)| t.figure < f) {
            best = Some((t.figure, t.stages, None));
        }
    }
    let (f, _, index) = best.expect("nonempty");
    Ok(ModularBound { estimate: Estimate::upper(f, 0.0, 0), index, fallback_figure })
}
