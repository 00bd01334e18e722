//! Seminorms built as weighted maxima of operator norms of linear maps
//! ("atoms"), optionally joined with opaque convex gauges.

use nalgebra::{DMatrix, DVector};
use std::fmt;
use std::sync::Arc;

use crate::algebra::{
    opnorm_block, random_self_adjoint, rng_from_seed, spectral_top, AlgebraShape, CMat, Element, StarMorphism, C64,
};
use crate::error::{Error, Result};
use crate::estimate::CheckReport;
use rand::Rng;

/// A real-linear map into a list of complex matrix blocks, weighted.
///
/// `map` sends input coordinates to stacked `(re, im)` row-major entries of
/// each output block; the atom's value is `weight * max_k ||block_k||`.
#[derive(Clone, Debug)]
pub struct Atom {
    pub weight: f64,
    pub map: DMatrix<f64>,
    pub out: Vec<(usize, usize)>,
}

impl Atom {
    pub fn new(weight: f64, map: DMatrix<f64>, out: Vec<(usize, usize)>) -> Result<Self> {
        if !(weight > 0.0) || !weight.is_finite() {
            return Err(Error::Validation(format!("atom weight must be positive, got {weight}")));
        }
        let rows: usize = out.iter().map(|(r, c)| 2 * r * c).sum();
        if rows != map.nrows() {
            return Err(Error::Shape(format!("atom map has {} rows, output needs {rows}", map.nrows())));
        }
        Ok(Self { weight, map, out })
    }

    /// Real functional atom `v -> weight * |row . v|`.
    pub fn functional(weight: f64, row: &DVector<f64>) -> Result<Self> {
        let mut map = DMatrix::zeros(2, row.len());
        map.set_row(0, &row.transpose());
        Self::new(weight, map, vec![(1, 1)])
    }

    pub fn dim(&self) -> usize {
        self.map.ncols()
    }
}

/// Value of a possibly infinite seminorm component.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Ext {
    Finite(f64),
    Infinite,
}

impl Ext {
    pub fn finite(self) -> Option<f64> {
        match self {
            Ext::Finite(x) => Some(x),
            Ext::Infinite => None,
        }
    }
}

/// An opaque convex, absolutely homogeneous component of a seminorm.
pub trait Gauge: Send + Sync {
    fn dim(&self) -> usize;
    fn eval(&self, v: &DVector<f64>) -> Ext;
    /// A subgradient at `v`, when one is cheaply available.
    fn subgradient(&self, _v: &DVector<f64>) -> Option<DVector<f64>> {
        None
    }
    fn describe(&self) -> String;
}

struct PulledGauge {
    inner: Arc<dyn Gauge>,
    map: DMatrix<f64>,
}

impl Gauge for PulledGauge {
    fn dim(&self) -> usize {
        self.map.ncols()
    }
    fn eval(&self, v: &DVector<f64>) -> Ext {
        self.inner.eval(&(&self.map * v))
    }
    fn subgradient(&self, v: &DVector<f64>) -> Option<DVector<f64>> {
        self.inner.subgradient(&(&self.map * v)).map(|g| self.map.transpose() * g)
    }
    fn describe(&self) -> String {
        format!("pullback of {}", self.inner.describe())
    }
}

#[derive(Clone, Debug)]
struct Slice {
    row: usize,
    out: Vec<(usize, usize)>,
}

/// `S(v) = max( max_i w_i ||A_i v||, max_j c_j g_j(v) )`.
#[derive(Clone)]
pub struct Seminorm {
    dim: usize,
    atoms: Vec<Atom>,
    gauges: Vec<(f64, Arc<dyn Gauge>)>,
    kernel: Option<DMatrix<f64>>,
    stacked: DMatrix<f64>,
    slices: Vec<Slice>,
}

impl fmt::Debug for Seminorm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Seminorm")
            .field("dim", &self.dim)
            .field("atoms", &self.atoms.len())
            .field("gauges", &self.gauges.iter().map(|(w, g)| format!("{w}*{}", g.describe())).collect::<Vec<_>>())
            .finish()
    }
}

impl Seminorm {
    pub fn from_atoms(dim: usize, atoms: Vec<Atom>) -> Result<Self> {
        Self::build(dim, atoms, Vec::new(), None)
    }

    pub fn zero(dim: usize) -> Self {
        Self::build(dim, Vec::new(), Vec::new(), None).expect("zero seminorm")
    }

    fn build(
        dim: usize,
        atoms: Vec<Atom>,
        gauges: Vec<(f64, Arc<dyn Gauge>)>,
        kernel: Option<DMatrix<f64>>,
    ) -> Result<Self> {
        if let Some(a) = atoms.iter().find(|a| a.dim() != dim) {
            return Err(Error::Shape(format!("atom acts on dimension {}, seminorm on {dim}", a.dim())));
        }
        if let Some((_, g)) = gauges.iter().find(|(_, g)| g.dim() != dim) {
            return Err(Error::Shape(format!("gauge {} has the wrong dimension", g.describe())));
        }
        let rows: usize = atoms.iter().map(|a| a.map.nrows()).sum();
        let mut stacked = DMatrix::zeros(rows, dim);
        let mut slices = Vec::with_capacity(atoms.len());
        let mut r = 0;
        for a in &atoms {
            let n = a.map.nrows();
            stacked.view_mut((r, 0), (n, dim)).copy_from(&(&a.map * a.weight));
            slices.push(Slice { row: r, out: a.out.clone() });
            r += n;
        }
        Ok(Self { dim, atoms, gauges, kernel, stacked, slices })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn has_gauges(&self) -> bool {
        !self.gauges.is_empty()
    }

    pub fn with_gauge(&self, weight: f64, g: Arc<dyn Gauge>) -> Result<Self> {
        let mut gauges = self.gauges.clone();
        gauges.push((weight, g));
        Self::build(self.dim, self.atoms.clone(), gauges, self.kernel.clone())
    }

    pub fn with_kernel(mut self, basis: DMatrix<f64>) -> Result<Self> {
        if basis.nrows() != self.dim {
            return Err(Error::Shape("kernel basis has the wrong dimension".into()));
        }
        self.kernel = Some(basis);
        Ok(self)
    }

    fn atomic_value(&self, y: &DVector<f64>) -> (f64, usize, usize) {
        let mut best = (0.0, usize::MAX, 0);
        for (i, s) in self.slices.iter().enumerate() {
            let mut o = s.row;
            for (b, &(r, c)) in s.out.iter().enumerate() {
                let val = if r == 1 && c == 1 {
                    (y[o] * y[o] + y[o + 1] * y[o + 1]).sqrt()
                } else {
                    opnorm_block(&block_from(y, o, r, c))
                };
                if val > best.0 || best.1 == usize::MAX {
                    best = (val, i, b);
                }
                o += 2 * r * c;
            }
        }
        best
    }

    /// The atomic part only.
    pub fn eval_atoms(&self, v: &DVector<f64>) -> f64 {
        if self.slices.is_empty() {
            return 0.0;
        }
        self.atomic_value(&(&self.stacked * v)).0
    }

    /// `+infinity` appears only when a gauge component reports it.
    pub fn eval(&self, v: &DVector<f64>) -> f64 {
        let mut s = self.eval_atoms(v);
        for (w, g) in &self.gauges {
            match g.eval(v) {
                Ext::Finite(x) => s = s.max(w * x),
                Ext::Infinite => return f64::INFINITY,
            }
        }
        s
    }

    pub fn eval_ext(&self, v: &DVector<f64>) -> Ext {
        let s = self.eval(v);
        if s.is_finite() {
            Ext::Finite(s)
        } else {
            Ext::Infinite
        }
    }

    /// Value and a subgradient. Gauge components without a subgradient
    /// contribute a zero vector when active.
    pub fn eval_with_subgradient(&self, v: &DVector<f64>) -> (f64, DVector<f64>) {
        let mut g = DVector::zeros(self.dim);
        let mut val = 0.0;
        if !self.slices.is_empty() {
            let y = &self.stacked * v;
            let (s, i, b) = self.atomic_value(&y);
            val = s;
            if s > 0.0 && i != usize::MAX {
                let sl = &self.slices[i];
                let mut o = sl.row;
                for &(r, c) in &sl.out[..b] {
                    o += 2 * r * c;
                }
                let (r, c) = sl.out[b];
                let blk = block_from(&y, o, r, c);
                if let (_, Some((u, w))) = spectral_top(&blk) {
                    let mut gy = DVector::zeros(2 * r * c);
                    for p in 0..r {
                        for q in 0..c {
                            let z = u[p] * w[q].conj();
                            gy[2 * (p * c + q)] = z.re;
                            gy[2 * (p * c + q) + 1] = z.im;
                        }
                    }
                    g = self.stacked.rows(o, 2 * r * c).transpose() * gy;
                }
            }
        }
        for (w, gauge) in &self.gauges {
            match gauge.eval(v) {
                Ext::Finite(x) => {
                    if w * x > val {
                        val = w * x;
                        g = gauge.subgradient(v).map(|s| s * *w).unwrap_or_else(|| DVector::zeros(self.dim));
                    }
                }
                Ext::Infinite => return (f64::INFINITY, DVector::zeros(self.dim)),
            }
        }
        (val, g)
    }

    /// `v -> S(map v)`, a seminorm on `map.ncols()` coordinates.
    pub fn pullback(&self, map: &DMatrix<f64>) -> Result<Self> {
        if map.nrows() != self.dim {
            return Err(Error::Shape(format!("pullback map has {} rows, seminorm dim {}", map.nrows(), self.dim)));
        }
        let atoms = self
            .atoms
            .iter()
            .map(|a| Atom { weight: a.weight, map: &a.map * map, out: a.out.clone() })
            .collect();
        let gauges = self
            .gauges
            .iter()
            .map(|(w, g)| (*w, Arc::new(PulledGauge { inner: g.clone(), map: map.clone() }) as Arc<dyn Gauge>))
            .collect();
        Self::build(map.ncols(), atoms, gauges, None)
    }

    pub fn scaled(&self, t: f64) -> Result<Self> {
        if !(t > 0.0) {
            return Err(Error::Validation(format!("scale must be positive, got {t}")));
        }
        let atoms = self.atoms.iter().map(|a| Atom { weight: a.weight * t, ..a.clone() }).collect();
        let gauges = self.gauges.iter().map(|(w, g)| (w * t, g.clone())).collect();
        Self::build(self.dim, atoms, gauges, self.kernel.clone())
    }

    /// Weighted maximum of seminorms on a common space.
    pub fn combine_max(parts: &[(&Seminorm, f64)]) -> Result<Self> {
        let dim = parts.first().map(|(s, _)| s.dim).ok_or_else(|| Error::Validation("nothing to combine".into()))?;
        let mut atoms = Vec::new();
        let mut gauges = Vec::new();
        for (s, w) in parts {
            if s.dim != dim {
                return Err(Error::Shape("combine_max: coordinate spaces differ".into()));
            }
            if !(*w > 0.0) {
                return Err(Error::Validation(format!("combine_max weight must be positive, got {w}")));
            }
            atoms.extend(s.atoms.iter().map(|a| Atom { weight: a.weight * w, ..a.clone() }));
            gauges.extend(s.gauges.iter().map(|(g_w, g)| (g_w * w, g.clone())));
        }
        let kernel = if parts.len() == 1 { parts[0].0.kernel.clone() } else { None };
        Self::build(dim, atoms, gauges, kernel)
    }

    /// When `S(v) = max_i |r_i . v|` for real rows `r_i`, returns the rows.
    pub fn rank_one_rows(&self) -> Option<Vec<DVector<f64>>> {
        if !self.gauges.is_empty() {
            return None;
        }
        let mut rows = Vec::new();
        for s in &self.slices {
            let mut o = s.row;
            for &(r, c) in &s.out {
                if r != 1 || c != 1 {
                    return None;
                }
                let re = self.stacked.row(o).transpose();
                let im = self.stacked.row(o + 1).transpose();
                let (nr, ni) = (re.norm(), im.norm());
                let row = if ni <= 1e-14 * (1.0 + nr) {
                    re
                } else if nr <= 1e-14 * (1.0 + ni) {
                    im
                } else {
                    // Parallel rows: |(re.v) + i (k re.v)| = sqrt(1+k^2) |re.v|.
                    let k = re.dot(&im) / (nr * nr);
                    if (&im - &re * k).norm() > 1e-12 * ni {
                        return None;
                    }
                    re * (1.0 + k * k).sqrt()
                };
                if row.norm() > 0.0 {
                    rows.push(row);
                }
                o += 2;
            }
        }
        Some(rows)
    }

    /// Declared kernel, or the numerical null space of the atoms.
    pub fn kernel_basis(&self) -> DMatrix<f64> {
        match &self.kernel {
            Some(k) => k.clone(),
            None => null_space(&self.stacked, self.dim),
        }
    }

    pub fn declared_kernel(&self) -> Option<&DMatrix<f64>> {
        self.kernel.as_ref()
    }

    /// Numerical null space of the stacked atoms, ignoring gauges.
    pub fn atomic_null_space(&self) -> DMatrix<f64> {
        null_space(&self.stacked, self.dim)
    }
}

fn block_from(y: &DVector<f64>, o: usize, r: usize, c: usize) -> CMat {
    CMat::from_fn(r, c, |p, q| {
        let k = o + 2 * (p * c + q);
        C64::new(y[k], y[k + 1])
    })
}

/// Orthonormal basis (columns) of the null space of `m`.
pub fn null_space(m: &DMatrix<f64>, dim: usize) -> DMatrix<f64> {
    if m.nrows() == 0 {
        return DMatrix::identity(dim, dim);
    }
    // Pad to at least square so that V carries a full basis.
    let rows = m.nrows().max(dim);
    let mut padded = DMatrix::zeros(rows, dim);
    padded.view_mut((0, 0), (m.nrows(), dim)).copy_from(m);
    let svd = padded.svd(false, true);
    let vt = svd.v_t.expect("right singular vectors");
    let smax = svd.singular_values.iter().cloned().fold(0.0f64, f64::max);
    let cols: Vec<DVector<f64>> = svd
        .singular_values
        .iter()
        .enumerate()
        .filter(|(_, &s)| s <= 1e-10 * smax)
        .map(|(i, _)| vt.row(i).transpose())
        .collect();
    if cols.is_empty() {
        DMatrix::zeros(dim, 0)
    } else {
        DMatrix::from_columns(&cols)
    }
}

/// Real matrix of a real-linear map given on coordinate vectors.
pub fn real_matrix<F>(in_dim: usize, out_dim: usize, f: F) -> DMatrix<f64>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let mut m = DMatrix::zeros(out_dim, in_dim);
    let mut e = DVector::zeros(in_dim);
    for c in 0..in_dim {
        e[c] = 1.0;
        m.set_column(c, &f(&e));
        e[c] = 0.0;
    }
    m
}

/// Checks symmetry, zero diagonal, positivity and the triangle inequality.
pub fn validate_metric(d: &DMatrix<f64>) -> Result<()> {
    let n = d.nrows();
    if d.ncols() != n {
        return Err(Error::Validation("metric must be square".into()));
    }
    for i in 0..n {
        if d[(i, i)].abs() > 1e-12 {
            return Err(Error::Validation(format!("d({i},{i}) = {} is not zero", d[(i, i)])));
        }
        for j in 0..n {
            if !d[(i, j)].is_finite() || (d[(i, j)] - d[(j, i)]).abs() > 1e-12 {
                return Err(Error::Validation(format!("metric is not symmetric at ({i},{j})")));
            }
            if i != j && !(d[(i, j)] > 0.0) {
                return Err(Error::Validation(format!("d({i},{j}) must be positive")));
            }
            for k in 0..n {
                if d[(i, k)] > d[(i, j)] + d[(j, k)] + 1e-12 {
                    return Err(Error::Validation(format!("triangle inequality fails at ({i},{j},{k})")));
                }
            }
        }
    }
    Ok(())
}

/// Lipschitz seminorm on the self-adjoint part of `C(X)`, `X` finite.
pub fn lipschitz(metric: &DMatrix<f64>) -> Result<Seminorm> {
    validate_metric(metric)?;
    let n = metric.nrows();
    let mut atoms = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            let mut row = DVector::zeros(n);
            row[i] = 1.0;
            row[j] = -1.0;
            atoms.push(Atom::functional(1.0 / metric[(i, j)], &row)?);
        }
    }
    Seminorm::from_atoms(n, atoms)?.with_kernel(DMatrix::from_element(n, 1, 1.0 / (n as f64).sqrt()))
}

/// `a -> max_k ||[D_k, rep(a)]||` on the self-adjoint part of the source.
/// Several operators are allowed so that the kernel can be cut down to the
/// scalars; with a single `D` the seminorm is the usual commutator norm.
pub fn commutator(rep: &StarMorphism, dirac: &[Element]) -> Result<Seminorm> {
    if !rep.unital {
        return Err(Error::Validation("commutator seminorm needs a unital representation".into()));
    }
    let src = rep.source().clone();
    let tgt = rep.target().clone();
    let emb = src.sa_embedding();
    let mut atoms = Vec::new();
    for d in dirac {
        d.check(&tgt)?;
        if !d.is_self_adjoint(1e-12) {
            return Err(Error::Validation("commutator operator must be self-adjoint".into()));
        }
        let comm = real_matrix(tgt.real_dim(), tgt.real_dim(), |v| {
            let x = Element::from_real_coords(&tgt, v.as_slice()).expect("coords");
            d.mul(&x).sub(&x.mul(d)).to_real_coords()
        });
        let map = comm * rep.map() * &emb;
        let out = tgt.blocks().iter().map(|&n| (n, n)).collect();
        atoms.push(Atom::new(1.0, map, out)?);
    }
    let unit = src.sa_coords_of_unit();
    let unit = &unit / unit.norm();
    Seminorm::from_atoms(src.sa_dim(), atoms)?.with_kernel(DMatrix::from_column_slice(src.sa_dim(), 1, unit.as_slice()))
}

/// A permissible function of fixed arity: evaluable, checked on a grid.
#[derive(Clone)]
pub struct PermFn {
    pub name: String,
    pub arity: usize,
    f: Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>,
}

impl fmt::Debug for PermFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PermFn({}, arity {})", self.name, self.arity)
    }
}

impl PermFn {
    pub fn new(name: impl Into<String>, arity: usize, f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        Self { name: name.into(), arity, f: Arc::new(f) }
    }

    pub fn call(&self, args: &[f64]) -> f64 {
        debug_assert_eq!(args.len(), self.arity);
        (self.f)(args)
    }
}

/// Grid points per axis so that the grid has about 10^4 points.
fn grid_points(arity: usize) -> usize {
    match arity {
        1 => 10_000,
        2 => 100,
        3 => 22,
        _ => 10,
    }
}

/// Checks `f >= floor` and weak monotonicity along each axis on a grid of
/// `[0, 10]^arity`.
pub fn validate_permissible(f: &PermFn, floor: impl Fn(&[f64]) -> f64) -> CheckReport {
    let mut rep = CheckReport::new(format!("permissible {}", f.name), 1e-9);
    let m = grid_points(f.arity);
    let h = 10.0 / (m - 1) as f64;
    let total = m.pow(f.arity as u32);
    let mut idx = vec![0usize; f.arity];
    let mut x = vec![0.0; f.arity];
    for flat in 0..total {
        let mut r = flat;
        for k in 0..f.arity {
            idx[k] = r % m;
            r /= m;
            x[k] = idx[k] as f64 * h;
        }
        let v = f.call(&x);
        rep.record(v - floor(&x), || format!("lower bound fails at {x:?}"));
        for k in 0..f.arity {
            if idx[k] + 1 < m {
                let mut y = x.clone();
                y[k] += h;
                let w = f.call(&y);
                rep.record((w - v) + 1e-12 * v.abs(), || format!("not increasing along axis {k} at {x:?}"));
            }
        }
    }
    rep
}

/// The functions `F`, `H`, `G` bounding Leibniz defects of seminorms,
/// D-norms and actions.
#[derive(Clone, Debug)]
pub struct PermissibleTriple {
    pub f: PermFn,
    pub h: PermFn,
    pub g: PermFn,
}

impl PermissibleTriple {
    pub fn leibniz() -> Self {
        Self {
            f: PermFn::new("x*ly + y*lx", 4, |a| a[0] * a[3] + a[1] * a[2]),
            h: PermFn::new("2xy", 2, |a| 2.0 * a[0] * a[1]),
            g: PermFn::new("(x+y)z", 3, |a| (a[0] + a[1]) * a[2]),
        }
    }

    pub fn new(f: PermFn, h: PermFn, g: PermFn) -> Result<Self> {
        let t = Self { f, h, g };
        let reports = t.validate();
        if let Some(r) = reports.iter().find(|r| !r.pass) {
            return Err(Error::Validation(r.to_string()));
        }
        Ok(t)
    }

    pub fn validate(&self) -> Vec<CheckReport> {
        if self.f.arity != 4 || self.h.arity != 2 || self.g.arity != 3 {
            return vec![CheckReport::fail("permissible arities", "expected arities 4, 2, 3")];
        }
        vec![
            validate_permissible(&self.f, |a| a[0] * a[3] + a[1] * a[2]),
            validate_permissible(&self.h, |a| 2.0 * a[0] * a[1]),
            validate_permissible(&self.g, |a| (a[0] + a[1]) * a[2]),
        ]
    }

    pub fn f(&self, x: f64, y: f64, lx: f64, ly: f64) -> f64 {
        self.f.call(&[x, y, lx, ly])
    }

    pub fn h(&self, x: f64, y: f64) -> f64 {
        self.h.call(&[x, y])
    }

    pub fn g(&self, x: f64, y: f64, z: f64) -> f64 {
        self.g.call(&[x, y, z])
    }

    pub fn with_h(&self, h: PermFn) -> Self {
        Self { h, ..self.clone() }
    }
}

/// Draws self-adjoint test elements of mixed character: generic, close to
/// the unit, and of small Lipschitz size relative to their norm.
pub(crate) fn test_element<R: Rng + ?Sized>(shape: &AlgebraShape, rng: &mut R, i: usize) -> Element {
    let a = random_self_adjoint(shape, rng);
    let n = a.opnorm().max(1e-12);
    let a = a.scale_real(1.0 / n);
    match i % 4 {
        0 => a,
        1 => a.scale_real(rng.gen_range(0.1..3.0)),
        2 => Element::unit(shape).scale_real(rng.gen_range(-2.0..2.0)).add(&a.scale_real(rng.gen_range(0.0..0.3))),
        _ => a.scale_real(rng.gen_range(0.0..0.05)).add(&Element::unit(shape)),
    }
}

/// Samples pairs of self-adjoint `a, b` and checks
/// `max(L(Re ab), L(Im ab)) <= F(||a||, ||b||, L(a), L(b))`.
pub fn quasi_leibniz_check(
    lip: &Seminorm,
    triple: &PermissibleTriple,
    shape: &AlgebraShape,
    samples: usize,
    seed: u64,
) -> CheckReport {
    let mut rep = CheckReport::new("quasi-Leibniz", 1e-8);
    if lip.dim() != shape.sa_dim() {
        return CheckReport::fail("quasi-Leibniz", "seminorm is not defined on the self-adjoint part");
    }
    let mut rng = rng_from_seed(seed);
    for i in 0..samples {
        let a = test_element(shape, &mut rng, i);
        let b = test_element(shape, &mut rng, i / 4 + i);
        let (re, im) = a.mul(&b).re_im();
        let lhs = lip.eval(&re.to_sa_coords()).max(lip.eval(&im.to_sa_coords()));
        let rhs = triple.f(a.opnorm(), b.opnorm(), lip.eval(&a.to_sa_coords()), lip.eval(&b.to_sa_coords()));
        rep.record(rhs - lhs, || format!("sample {i}: lhs {lhs:.6e} > rhs {rhs:.6e}"));
    }
    rep
}

#[derive(Clone, Debug, PartialEq)]
pub struct KernelReport {
    pub kernel_dim: usize,
    pub contains_unit: bool,
    pub pass: bool,
}

/// Passes iff the null space of the atoms on self-adjoint coordinates is
/// exactly the real multiples of the unit.
pub fn kernel_check(lip: &Seminorm, shape: &AlgebraShape) -> KernelReport {
    if lip.dim() != shape.sa_dim() {
        return KernelReport { kernel_dim: usize::MAX, contains_unit: false, pass: false };
    }
    let basis = lip.atomic_null_space();
    let unit = shape.sa_coords_of_unit();
    let unit = &unit / unit.norm();
    let contains_unit = lip.eval_atoms(&unit) <= 1e-10;
    let kernel_dim = basis.ncols();
    KernelReport { kernel_dim, contains_unit, pass: kernel_dim == 1 && contains_unit }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::{rng_from_seed, random_element};

    fn line(n: usize, h: f64) -> DMatrix<f64> {
        DMatrix::from_fn(n, n, |i, j| (i as f64 - j as f64).abs() * h)
    }

    /// Pair-enumeration oracle for the Lipschitz constant.
    fn lip_oracle(f: &[f64], d: &DMatrix<f64>) -> f64 {
        let mut best: f64 = 0.0;
        for i in 0..f.len() {
            for j in 0..f.len() {
                if i != j {
                    best = best.max((f[i] - f[j]).abs() / d[(i, j)]);
                }
            }
        }
        best
    }

    #[test]
    fn lipschitz_examples() {
        let l = lipschitz(&line(2, 1.0)).unwrap();
        assert!((l.eval(&DVector::from_vec(vec![0.0, 1.0])) - 1.0).abs() < 1e-15);
        let l2 = lipschitz(&line(2, 2.0)).unwrap();
        assert!((l2.eval(&DVector::from_vec(vec![0.0, 1.0])) - 0.5).abs() < 1e-15);
        let single = lipschitz(&DMatrix::zeros(1, 1)).unwrap();
        assert_eq!(single.eval(&DVector::from_vec(vec![3.0])), 0.0);
        assert_eq!(l.eval(&DVector::from_vec(vec![2.0, 2.0])), 0.0);
        assert_eq!(l.eval(&DVector::zeros(2)), 0.0);
        let d = line(5, 0.3);
        let l = lipschitz(&d).unwrap();
        let mut rng = rng_from_seed(1);
        for _ in 0..20 {
            let f: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
            assert!((l.eval(&DVector::from_vec(f.clone())) - lip_oracle(&f, &d)).abs() < 1e-12);
        }
    }

    #[test]
    fn metric_validation() {
        let mut d = line(3, 1.0);
        d[(0, 2)] = 5.0;
        d[(2, 0)] = 5.0;
        assert!(lipschitz(&d).is_err());
    }

    #[test]
    fn commutator_example() {
        let s = AlgebraShape::commutative(2);
        let m2 = AlgebraShape::matrix(2);
        let rep = StarMorphism::block_layout(&s, &m2, &[vec![0, 1]]).unwrap();
        let mut dop = Element::zeros(&m2);
        dop.blocks[0][(0, 1)] = C64::new(1.0, 0.0);
        dop.blocks[0][(1, 0)] = C64::new(1.0, 0.0);
        let l = commutator(&rep, &[dop.clone()]).unwrap();
        // Oracle: direct 2x2 arithmetic of [D, diag(1,0)] = [[0,-1],[1,0]].
        let a = Element::from_reals(&[1.0, 0.0]);
        let ra = rep.apply(&a).blocks[0].clone();
        let c = &dop.blocks[0] * &ra - &ra * &dop.blocks[0];
        let oracle = c.iter().map(|z| z.norm()).fold(0.0, f64::max);
        assert!((l.eval(&a.to_sa_coords()) - oracle).abs() < 1e-12);
        assert!((oracle - 1.0).abs() < 1e-15);
        // Scaling the operator scales the seminorm.
        let l3 = commutator(&rep, &[dop.scale_real(3.0)]).unwrap();
        assert!((l3.eval(&a.to_sa_coords()) - 3.0).abs() < 1e-12);
        // An operator commuting with the representation gives zero.
        let lz = commutator(&rep, &[Element::unit(&m2)]).unwrap();
        assert_eq!(lz.eval(&a.to_sa_coords()), 0.0);
        assert!(commutator(&rep, &[random_element(&m2, &mut rng_from_seed(3))]).is_err());
    }

    #[test]
    fn combine_behaviour() {
        let l = lipschitz(&line(4, 1.0)).unwrap();
        let v = DVector::from_vec(vec![0.2, -0.4, 1.0, 0.0]);
        let c1 = Seminorm::combine_max(&[(&l, 1.0)]).unwrap();
        let c2 = Seminorm::combine_max(&[(&l, 1.0), (&l, 1.0)]).unwrap();
        let c3 = Seminorm::combine_max(&[(&l, 0.25)]).unwrap();
        assert!((c1.eval(&v) - l.eval(&v)).abs() < 1e-15);
        assert!((c2.eval(&v) - l.eval(&v)).abs() < 1e-15);
        assert!((c3.eval(&v) - 0.25 * l.eval(&v)).abs() < 1e-15);
        assert!(Seminorm::combine_max(&[(&l, 1.0), (&Seminorm::zero(3), 1.0)]).is_err());
    }

    #[test]
    fn subgradient_directional_check() {
        let s = AlgebraShape::matrix(3);
        let mut rng = rng_from_seed(4);
        let dirac: Vec<Element> = (0..2).map(|_| random_self_adjoint(&s, &mut rng)).collect();
        let l = commutator(&StarMorphism::identity(&s), &dirac).unwrap();
        let v = random_self_adjoint(&s, &mut rng).to_sa_coords();
        let dv = random_self_adjoint(&s, &mut rng).to_sa_coords();
        let (val, g) = l.eval_with_subgradient(&v);
        let t = 1e-7;
        let fd = (l.eval(&(&v + &dv * t)) - val) / t;
        assert!((fd - g.dot(&dv)).abs() < 1e-4 * (1.0 + fd.abs()));
    }

    #[test]
    fn rank_one_detection() {
        let l = lipschitz(&line(3, 1.0)).unwrap();
        assert_eq!(l.rank_one_rows().unwrap().len(), 3);
        let s = AlgebraShape::matrix(2);
        let c = commutator(&StarMorphism::identity(&s), &[random_self_adjoint(&s, &mut rng_from_seed(9))]).unwrap();
        assert!(c.rank_one_rows().is_none());
    }

    #[test]
    fn leibniz_preset_is_tight() {
        let t = PermissibleTriple::leibniz();
        for r in t.validate() {
            assert!(r.pass, "{r}");
            assert!(r.worst_margin.abs() < 1e-9);
        }
    }

    #[test]
    fn quasi_leibniz_examples() {
        let d = line(4, 0.5);
        let l = lipschitz(&d).unwrap();
        let s = AlgebraShape::commutative(4);
        assert!(quasi_leibniz_check(&l, &PermissibleTriple::leibniz(), &s, 300, 1).pass);
        let m = AlgebraShape::matrix(2);
        let mut rng = rng_from_seed(5);
        let c = commutator(&StarMorphism::identity(&m), &[random_self_adjoint(&m, &mut rng)]).unwrap();
        assert!(quasi_leibniz_check(&c, &PermissibleTriple::leibniz(), &m, 300, 2).pass);
        // 2*L against the half-Leibniz function must fail.
        let half = PermFn::new("half", 4, |a| 0.5 * (a[0] * a[3] + a[1] * a[2]));
        let weak = PermissibleTriple { f: half, ..PermissibleTriple::leibniz() };
        let l2 = l.scaled(2.0).unwrap();
        assert!(!quasi_leibniz_check(&l2, &weak, &s, 300, 3).pass);
        assert!(PermissibleTriple::new(weak.f.clone(), weak.h.clone(), weak.g.clone()).is_err());
    }

    #[test]
    fn kernel_examples() {
        let l = lipschitz(&line(4, 1.0)).unwrap();
        assert!(kernel_check(&l, &AlgebraShape::commutative(4)).pass);
        let s = AlgebraShape::matrix(2);
        let zero = commutator(&StarMorphism::identity(&s), &[Element::zeros(&s)]).unwrap();
        let r = kernel_check(&zero, &s);
        assert!(!r.pass && r.kernel_dim == 4);
        // Direct sum without coupling: kernel spanned by (1,0) and (0,1).
        let ds = crate::algebra::direct_sum(&AlgebraShape::commutative(2), &AlgebraShape::commutative(2)).unwrap();
        let l1 = l_on(&ds.proj_first, &lipschitz(&line(2, 1.0)).unwrap());
        let l2 = l_on(&ds.proj_second, &lipschitz(&line(2, 1.0)).unwrap());
        let sum = Seminorm::combine_max(&[(&l1, 1.0), (&l2, 1.0)]).unwrap();
        let r = kernel_check(&sum, &ds.shape);
        assert!(!r.pass && r.kernel_dim == 2);
    }

    fn l_on(p: &StarMorphism, l: &Seminorm) -> Seminorm {
        l.pullback(p.sa_map()).unwrap()
    }
}
