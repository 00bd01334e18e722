//! Random and named instances shared by the verification suites and the
//! acceptance tests.

use nalgebra::DMatrix;
use rand::Rng;
use std::sync::Arc;

use proplab_core::algebra::{rng_from_seed, AlgebraShape, CMat, Element, StarMorphism, C64};
use proplab_core::bundle::{ModElem, Mqvb};
use proplab_core::qcms::tunnel::{CheckBudget, Origin, Tunnel};
use proplab_core::qcms::{Bridge, Qcms};
use proplab_core::seminorm::{commutator, PermissibleTriple};
use proplab_core::Result;

/// Euclidean distances between random points of the unit square, at least
/// `gap` apart.
pub fn random_points<R: Rng + ?Sized>(n: usize, gap: f64, rng: &mut R) -> Vec<[f64; 2]> {
    let mut pts: Vec<[f64; 2]> = Vec::with_capacity(n);
    while pts.len() < n {
        let p = [rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)];
        if pts.iter().all(|q| dist(&p, q) >= gap) {
            pts.push(p);
        }
    }
    pts
}

fn dist(p: &[f64; 2], q: &[f64; 2]) -> f64 {
    ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt()
}

pub fn metric_of(pts: &[[f64; 2]]) -> DMatrix<f64> {
    DMatrix::from_fn(pts.len(), pts.len(), |i, j| dist(&pts[i], &pts[j]))
}

pub fn random_metric<R: Rng + ?Sized>(n: usize, rng: &mut R) -> DMatrix<f64> {
    metric_of(&random_points(n, 0.05, rng))
}

/// `|i - j| h` on `n` points.
pub fn line(n: usize, h: f64) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |i, j| (i as f64 - j as f64).abs() * h)
}

/// The dyadic grid `{k / 2^n}` of the unit interval.
pub fn dyadic_grid(n: u32) -> Result<Arc<Qcms>> {
    let k = (1usize << n) + 1;
    Qcms::metric_space(format!("X{n}"), &line(k, 1.0 / (1u64 << n) as f64), n as u64)
}

/// Bridge from the grid of level `n` to level `n + 1`, matching each fine
/// point with its coarse neighbours.
pub fn dyadic_bridge(coarse: Arc<Qcms>, fine: Arc<Qcms>) -> Result<Bridge> {
    let mut pairs = Vec::new();
    for j in 0..fine.shape.num_blocks() {
        if j % 2 == 0 {
            pairs.push((j / 2, j));
        } else {
            pairs.push(((j - 1) / 2, j));
            pairs.push(((j + 1) / 2, j));
        }
    }
    Bridge::correspondence(coarse, fine, &pairs)
}

/// A random relation covering both sides.
pub fn random_relation<R: Rng + ?Sized>(n: usize, m: usize, rng: &mut R) -> Vec<(usize, usize)> {
    let mut pairs = Vec::new();
    for i in 0..n {
        pairs.push((i, rng.gen_range(0..m)));
    }
    for j in 0..m {
        if !pairs.iter().any(|p| p.1 == j) {
            pairs.push((rng.gen_range(0..n), j));
        }
    }
    let extra = rng.gen_range(0..=2);
    for _ in 0..extra {
        let p = (rng.gen_range(0..n), rng.gen_range(0..m));
        if !pairs.contains(&p) {
            pairs.push(p);
        }
    }
    pairs
}

/// Two random finite spaces with a random correspondence bridge.
pub fn random_bridge(seed: u64, max_points: usize) -> Result<Bridge> {
    let mut rng = rng_from_seed(seed);
    let n = rng.gen_range(2..=max_points);
    let m = rng.gen_range(1..=max_points);
    let x = Qcms::metric_space(format!("X{seed}"), &random_metric(n, &mut rng), seed)?;
    let y = Qcms::metric_space(format!("Y{seed}"), &random_metric(m, &mut rng), seed + 1)?;
    let pairs = random_relation(n, m, &mut rng);
    Bridge::correspondence(x, y, &pairs)
}

/// Commutative tunnel whose pivot is the disjoint union of two random
/// point sets of the plane, with the legs restricting to each part.
/// Returns the tunnel and the largest distance from a pivot point to the
/// nearer of the two parts, computed directly from the coordinates.
pub fn union_tunnel(seed: u64, max_points: usize, budget: &CheckBudget) -> Result<(Tunnel, f64)> {
    let mut rng = rng_from_seed(seed);
    let n = rng.gen_range(1..=max_points);
    let m = rng.gen_range(1..=max_points);
    let pts = random_points(n + m, 0.05, &mut rng);
    let (px, py) = pts.split_at(n);
    let x = Qcms::metric_space(format!("U{seed}"), &metric_of(px), seed)?;
    let y = Qcms::metric_space(format!("V{seed}"), &metric_of(py), seed + 1)?;
    let z = Qcms::metric_space(format!("U{seed}+V{seed}"), &metric_of(&pts), seed + 2)?;
    let lx: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    let ly: Vec<Vec<usize>> = (0..m).map(|i| vec![n + i]).collect();
    let leg_x = StarMorphism::block_layout(&z.shape, &x.shape, &lx)?;
    let leg_y = StarMorphism::block_layout(&z.shape, &y.shape, &ly)?;
    let worst = |part: &[[f64; 2]]| pts.iter().map(|p| part.iter().map(|q| dist(p, q)).fold(f64::INFINITY, f64::min)).fold(0.0, f64::max);
    let oracle = worst(px).max(worst(py));
    let t = Tunnel::new(z, x, y, leg_x, leg_y, oracle, 1, Origin::Custom("disjoint union".into()), budget)?;
    Ok((t, oracle))
}

fn real_mat(n: usize, v: &[f64]) -> CMat {
    CMat::from_fn(n, n, |i, j| C64::new(v[i * n + j], 0.0))
}

/// `M_2` with the Lip-norm `max(||[Z, a]||, ||[X, a]||)`, Pauli `Z`, `X`.
pub fn matrix_dirac(name: &str, scale: f64) -> Result<Arc<Qcms>> {
    let m2 = AlgebraShape::matrix(2);
    let z = Element { blocks: vec![real_mat(2, &[scale, 0.0, 0.0, -scale])] };
    let x = Element { blocks: vec![real_mat(2, &[0.0, scale, scale, 0.0])] };
    let lip = commutator(&StarMorphism::identity(&m2), &[z, x])?;
    Qcms::new(name, m2, lip, PermissibleTriple::leibniz(), 500, 7)
}

/// Module element whose components are the given multiples of the unit.
pub fn constant_element(b: &Mqvb, values: &[C64]) -> Result<ModElem> {
    let comps = values.iter().map(|&c| Element::unit(b.module.base()).scale(c)).collect();
    b.module.element(comps)
}

/// Anchor pairs for a modular bridge between free bundles of equal rank:
/// the constant unit vectors, scaled into both D-unit balls.
pub fn unit_anchors(first: &Mqvb, second: &Mqvb) -> Result<(Vec<ModElem>, Vec<ModElem>)> {
    let p = first.module.components().min(second.module.components());
    let mut a = Vec::new();
    let mut b = Vec::new();
    for j in 0..p {
        for c in [C64::new(1.0, 0.0), C64::new(0.0, 1.0)] {
            let mut va = vec![C64::new(0.0, 0.0); first.module.components()];
            let mut vb = vec![C64::new(0.0, 0.0); second.module.components()];
            va[j] = c;
            vb[j] = c;
            let (wa, wb) = (constant_element(first, &va)?, constant_element(second, &vb)?);
            let s = first.d(&wa).max(second.d(&wb));
            a.push(wa.scale_real(1.0 / s));
            b.push(wb.scale_real(1.0 / s));
        }
    }
    Ok((a, b))
}
