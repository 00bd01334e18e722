//! Bridges between two spaces: a pivot algebra, a norm-one pivot element
//! and unital embeddings of both sides.

use nalgebra::{DMatrix, DVector};
use std::sync::Arc;

use super::{add_ball, lp_rows, Qcms};
use crate::algebra::{
    matrix_units, pure_states, random_real_vector, rng_from_seed, derive_seed, sample_states,
    tensor_embeddings, top_eigen, AlgebraShape, CMat, Element, StarMorphism, State, C64,
};
use crate::convex::{ball_ascent, minimize_affine, Ascent, LinearProgram, SolverOpts};
use crate::error::{Error, Result};
use crate::estimate::{BoundKind, Estimate};
use crate::seminorm::{real_matrix, Seminorm};

/// Which end of a bridge or tunnel.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    First,
    Second,
}

impl Side {
    pub fn other(self) -> Side {
        match self {
            Side::First => Side::Second,
            Side::Second => Side::First,
        }
    }
}

#[derive(Clone, Debug)]
pub struct BridgeStats {
    pub height: Estimate,
    pub reach: Estimate,
    pub length: Estimate,
}

#[derive(Clone, Debug)]
pub struct Bridge {
    pub label: String,
    pub first: Arc<Qcms>,
    pub second: Arc<Qcms>,
    pub pivot: AlgebraShape,
    pub x: Element,
    pub pi_first: StarMorphism,
    pub pi_second: StarMorphism,
    /// Per pivot block, orthonormal columns spanning the vectors fixed by
    /// both `x` and `x*`. States supported there are exactly the states
    /// with `phi(ax) = phi(xa) = phi(a)`.
    level: Vec<CMat>,
    pub witness: State,
    /// `a -> pi_first(a) x` and `b -> x pi_second(b)` on full coordinates.
    left: DMatrix<f64>,
    right: DMatrix<f64>,
}

fn fixed_space(xk: &CMat) -> CMat {
    let n = xk.nrows();
    let one = CMat::identity(n, n);
    let mut m = CMat::zeros(2 * n, n);
    m.view_mut((0, 0), (n, n)).copy_from(&(xk - &one));
    m.view_mut((n, 0), (n, n)).copy_from(&(xk.adjoint() - &one));
    let svd = m.svd(false, true);
    let vt = svd.v_t.expect("right singular vectors");
    let cols: Vec<DVector<C64>> = svd
        .singular_values
        .iter()
        .enumerate()
        .filter(|(_, &s)| s <= 1e-8)
        .map(|(i, _)| vt.row(i).adjoint())
        .collect();
    if cols.is_empty() {
        CMat::zeros(n, 0)
    } else {
        CMat::from_columns(&cols)
    }
}

fn multiplier(shape: &AlgebraShape, x: &Element, on_right: bool) -> DMatrix<f64> {
    let d = shape.real_dim();
    real_matrix(d, d, |v| {
        let e = Element::from_real_coords(shape, v.as_slice()).expect("coords");
        if on_right {
            e.mul(x).to_real_coords()
        } else {
            x.mul(&e).to_real_coords()
        }
    })
}

impl Bridge {
    pub fn new(
        label: impl Into<String>,
        first: Arc<Qcms>,
        second: Arc<Qcms>,
        x: Element,
        pi_first: StarMorphism,
        pi_second: StarMorphism,
    ) -> Result<Self> {
        let label = label.into();
        let pivot = pi_first.target().clone();
        if pi_second.target() != &pivot {
            return Err(Error::Shape(format!("{label}: embeddings land in different algebras")));
        }
        if pi_first.source() != &first.shape || pi_second.source() != &second.shape {
            return Err(Error::Shape(format!("{label}: embeddings do not start at the bridged spaces")));
        }
        x.check(&pivot)?;
        let xn = x.opnorm();
        if (xn - 1.0).abs() > 1e-10 {
            return Err(Error::Validation(format!("{label}: pivot element has norm {xn}")));
        }
        for (name, pi) in [("first", &pi_first), ("second", &pi_second)] {
            if !pi.unital {
                return Err(Error::Validation(format!("{label}: {name} embedding is not unital")));
            }
            if !pi.is_injective() {
                return Err(Error::Validation(format!("{label}: {name} embedding is not injective")));
            }
        }
        let level: Vec<CMat> = x.blocks.iter().map(fixed_space).collect();
        let k = level
            .iter()
            .position(|q| q.ncols() > 0)
            .ok_or_else(|| Error::Validation(format!("{label}: no state of the pivot is fixed by x")))?;
        let v = level[k].column(0).into_owned();
        let witness = State::vector_state(&pivot, k, &v);
        for u in matrix_units(&pivot) {
            let base = witness.eval_unchecked(&u);
            let d1 = (witness.eval_unchecked(&u.mul(&x)) - base).norm();
            let d2 = (witness.eval_unchecked(&x.mul(&u)) - base).norm();
            if d1.max(d2) > 1e-8 {
                return Err(Error::Diagnostic(format!("{label}: witness state misses the level condition by {}", d1.max(d2))));
            }
        }
        let left = multiplier(&pivot, &x, true) * pi_first.map();
        let right = multiplier(&pivot, &x, false) * pi_second.map();
        Ok(Self { label, first, second, pivot, x, pi_first, pi_second, level, witness, left, right })
    }

    /// Pivot the space itself, `x = 1`, both embeddings the identity.
    pub fn identity(space: Arc<Qcms>) -> Result<Self> {
        let s = space.shape.clone();
        let id = StarMorphism::identity(&s);
        Self::new(format!("id({})", space.name), space.clone(), space, Element::unit(&s), id.clone(), id)
    }

    /// Commutative bridge through a relation `R` between the points of two
    /// finite spaces: the pivot is `C(R)` with `x = 1`. Each side must be
    /// covered by the relation.
    pub fn correspondence(first: Arc<Qcms>, second: Arc<Qcms>, pairs: &[(usize, usize)]) -> Result<Self> {
        if !first.is_commutative() || !second.is_commutative() {
            return Err(Error::Unsupported("correspondence bridges need commutative spaces".into()));
        }
        if pairs.is_empty() {
            return Err(Error::Validation("empty correspondence".into()));
        }
        let pivot = AlgebraShape::commutative(pairs.len());
        let la: Vec<Vec<usize>> = pairs.iter().map(|p| vec![p.0]).collect();
        let lb: Vec<Vec<usize>> = pairs.iter().map(|p| vec![p.1]).collect();
        let pa = StarMorphism::block_layout(&first.shape, &pivot, &la)?;
        let pb = StarMorphism::block_layout(&second.shape, &pivot, &lb)?;
        let label = format!("rel({}, {})", first.name, second.name);
        Self::new(label, first, second, Element::unit(&pivot), pa, pb)
    }

    /// Pivot `A (x) B` with `x = 1`. Its height is zero and its reach is at
    /// most half the larger diameter.
    pub fn tensor(first: Arc<Qcms>, second: Arc<Qcms>) -> Result<Self> {
        let (shape, l, r) = tensor_embeddings(&first.shape, &second.shape)?;
        let label = format!("tensor({}, {})", first.name, second.name);
        Self::new(label, first, second, Element::unit(&shape), l, r)
    }

    /// Replaces the pivot element.
    pub fn with_pivot_element(&self, x: Element) -> Result<Self> {
        Self::new(self.label.clone(), self.first.clone(), self.second.clone(), x, self.pi_first.clone(), self.pi_second.clone())
    }

    /// The same bridge read from the other side, with pivot element `x*`.
    pub fn transposed(&self) -> Result<Self> {
        Self::new(
            format!("{}^T", self.label),
            self.second.clone(),
            self.first.clone(),
            self.x.adjoint(),
            self.pi_second.clone(),
            self.pi_first.clone(),
        )
    }

    pub fn space(&self, side: Side) -> &Arc<Qcms> {
        match side {
            Side::First => &self.first,
            Side::Second => &self.second,
        }
    }

    pub fn embedding(&self, side: Side) -> &StarMorphism {
        match side {
            Side::First => &self.pi_first,
            Side::Second => &self.pi_second,
        }
    }

    /// `||pi_first(a) x - x pi_second(b)||`.
    pub fn seminorm(&self, a: &Element, b: &Element) -> Result<f64> {
        a.check(&self.first.shape)?;
        b.check(&self.second.shape)?;
        let d = self.pi_first.apply(a).mul(&self.x).sub(&self.x.mul(&self.pi_second.apply(b)));
        Ok(d.opnorm())
    }

    /// Real maps on full coordinates whose difference gives the bridge
    /// seminorm: `(a, b) -> left a - right b` lands in the pivot.
    pub fn full_maps(&self) -> (&DMatrix<f64>, &DMatrix<f64>) {
        (&self.left, &self.right)
    }

    /// The bridge seminorm as an atom on self-adjoint coordinates of
    /// `first (+) second`, in that order.
    pub fn seminorm_on_sum(&self, weight: f64) -> Result<Seminorm> {
        let ea = self.first.shape.sa_embedding();
        let eb = self.second.shape.sa_embedding();
        let (na, nb) = (ea.ncols(), eb.ncols());
        let mut map = DMatrix::zeros(self.pivot.real_dim(), na + nb);
        map.view_mut((0, 0), (self.pivot.real_dim(), na)).copy_from(&(&self.left * &ea));
        map.view_mut((0, na), (self.pivot.real_dim(), nb)).copy_from(&(-(&self.right * &eb)));
        let out = self.pivot.blocks().iter().map(|&n| (n, n)).collect();
        let atom = crate::seminorm::Atom::new(weight, map, out)?;
        Seminorm::from_atoms(na + nb, vec![atom])
    }

    fn is_commutative_mode(&self) -> bool {
        self.pivot.is_commutative() && lp_rows(&self.first.lip).is_some() && lp_rows(&self.second.lip).is_some()
    }

    /// `sup { phi(pi(a)) : phi fixed by x }` and its gradient in the
    /// self-adjoint coordinates of the pivot.
    fn level_sup(&self, d: &DVector<f64>) -> (f64, DVector<f64>) {
        let e = Element::from_sa_coords(&self.pivot, d.as_slice()).expect("coords");
        let mut best = (f64::NEG_INFINITY, 0usize, None);
        for (k, q) in self.level.iter().enumerate() {
            if q.ncols() == 0 {
                continue;
            }
            let c = q.adjoint() * &e.blocks[k] * q;
            let (l, u) = top_eigen(&c);
            if l > best.0 {
                best = (l, k, Some(q * u));
            }
        }
        let v = best.2.expect("nonempty level");
        (best.0, State::vector_state(&self.pivot, best.1, &v).sa_functional())
    }

    /// Height on one side: the Hausdorff gap between the states of that side
    /// and the pullbacks of level states of the pivot.
    pub fn side_height(&self, side: Side, opts: &SolverOpts) -> Result<Estimate> {
        let space = self.space(side);
        let pi = self.embedding(side);
        if space.shape.sa_dim() == 1 {
            return Ok(Estimate::exact(0.0));
        }
        if self.pivot.is_commutative() && space.is_commutative() {
            if let Some(rows) = lp_rows(&space.lip) {
                return self.height_lp(pi, &rows, space.shape.sa_dim());
            }
        }
        // For fixed psi, inf over level states of mk(psi, phi o pi) is
        // sup over the Lip-ball of psi(a) - level_sup(pi a), a concave
        // objective; alternate between psi and the ascent.
        let psis: Vec<State> = if space.is_commutative() {
            pure_states(&space.shape)?
        } else {
            sample_states(&space.shape, 6, derive_seed(opts.seed, 0x4E))?
        };
        let sam = pi.sa_map().clone();
        let mut best = Estimate::lower(0.0, opts.tol, 0);
        for (i, psi0) in psis.iter().enumerate() {
            let mut f = psi0.sa_functional();
            for round in 0..2 {
                let objective = |a: &DVector<f64>| {
                    let (s, g) = self.level_sup(&(&sam * a));
                    (f.dot(a) - s, &f - sam.transpose() * g)
                };
                let prob = Ascent { ball: &space.lip, objective: &objective, flat: Some(space.unit_kernel()), to_boundary: true };
                let o = opts.with_seed(derive_seed(opts.seed, (i * 2 + round) as u64)).with_iterations(opts.iterations.min(1500));
                let e = ball_ascent(&prob, &[], &o);
                best.iterations += e.iterations;
                if e.value > best.value {
                    best.value = e.value;
                    best.certificate = e.certificate.clone();
                }
                // Best state for the maximizer found: its top eigenvector.
                let a = DVector::from_vec(e.certificate.clone().unwrap_or_default());
                if a.len() != f.len() {
                    break;
                }
                let (_, g) = super::lambda_max_sa(&space.shape, &a);
                f = g;
            }
        }
        best.kind = BoundKind::Lower;
        Ok(best)
    }

    fn height_lp(&self, pi: &StarMorphism, rows: &[DVector<f64>], n: usize) -> Result<Estimate> {
        let live: Vec<usize> = (0..self.level.len()).filter(|&k| self.level[k].ncols() > 0).collect();
        let sam = pi.sa_map();
        let mut best = Estimate::exact(0.0);
        for z in 0..n {
            let mut obj = vec![0.0; n + 1];
            obj[z] = 1.0;
            obj[n] = -1.0;
            let mut lp = LinearProgram::maximize(obj);
            add_ball(&mut lp, rows, 0, 1.0);
            let sum: Vec<(usize, f64)> = (0..n).map(|i| (i, 1.0)).collect();
            lp.eq(&sum, 0.0);
            for &k in &live {
                let mut t: Vec<(usize, f64)> = (0..n).map(|i| (i, sam[(k, i)])).collect();
                t.push((n, -1.0));
                lp.le(&t, 0.0);
            }
            let (v, x) = lp.solve()?;
            if v > best.value {
                best = Estimate::new(v, BoundKind::Exact, 1e-9, 1).with_certificate(x[..n].to_vec());
            }
        }
        Ok(best)
    }

    pub fn height(&self, opts: &SolverOpts) -> Result<Estimate> {
        let h1 = self.side_height(Side::First, opts)?;
        let h2 = self.side_height(Side::Second, &opts.with_seed(derive_seed(opts.seed, 2)))?;
        Ok(if h2.value > h1.value { Estimate { kind: h1.kind.max_of(h2.kind), ..h2 } } else { Estimate { kind: h1.kind.max_of(h2.kind), ..h1 } })
    }

    /// Self-adjoint maps into the pivot's full coordinates for each side.
    fn sa_maps(&self) -> (DMatrix<f64>, DMatrix<f64>) {
        (&self.left * self.first.shape.sa_embedding(), &self.right * self.second.shape.sa_embedding())
    }

    /// Best partner on the other side for `y` (self-adjoint coordinates of
    /// `side`): a point of the other unit Lip-ball approximately minimizing
    /// the bridge seminorm. Returns the value, the partner, and a
    /// subgradient of the value in `y`.
    pub fn partner(&self, side: Side, y: &DVector<f64>, opts: &SolverOpts) -> Result<(f64, DVector<f64>, DVector<f64>)> {
        if self.is_commutative_mode() {
            let (v, z) = self.partner_lp(side, y)?;
            return Ok((v, z, DVector::zeros(0)));
        }
        Ok(self.partner_descent(side, y, opts))
    }

    fn partner_descent(&self, side: Side, y: &DVector<f64>, opts: &SolverOpts) -> (f64, DVector<f64>, DVector<f64>) {
        let (ma, mb) = self.sa_maps();
        let (m_fix, m_var) = match side {
            Side::First => (ma, mb),
            Side::Second => (mb, ma),
        };
        let var = self.space(side.other());
        let inner_opts = SolverOpts { iterations: opts.iterations.min(600), restarts: 2, ..*opts };
        let kernel = var.unit_kernel();
        let u = &m_fix * y;
        let mu = 10.0 * u.norm().max(1.0);
        let retract = |z: &DVector<f64>| {
            let c = &kernel * (kernel.transpose() * z);
            let l = var.lip.eval(z);
            &c + (z - &c) / l.max(1.0)
        };
        let pen = |z: &DVector<f64>| {
            let e = Element::from_real_coords(&self.pivot, (&u - &m_var * z).as_slice()).expect("coords");
            let (v, g) = e.opnorm_with_subgradient();
            let (l, lg) = var.lip.eval_with_subgradient(z);
            let mut grad = -(m_var.transpose() * g);
            let mut val = v;
            if l > 1.0 {
                val += mu * (l - 1.0);
                grad += lg * mu;
            }
            (val, grad)
        };
        let ls = m_var
            .clone()
            .pseudo_inverse(1e-10)
            .map(|p| retract(&(p * &u)))
            .unwrap_or_else(|_| DVector::zeros(m_var.ncols()));
        let starts = vec![ls, DVector::zeros(m_var.ncols())];
        let (_, z, _) = minimize_affine(pen, &starts, |v: &DVector<f64>| v.clone(), &inner_opts, Some(0.0));
        let z = retract(&z);
        let e = Element::from_real_coords(&self.pivot, (&u - &m_var * &z).as_slice()).expect("coords");
        let (v, g) = e.opnorm_with_subgradient();
        (v, z, m_fix.transpose() * g)
    }

    fn partner_lp(&self, side: Side, y: &DVector<f64>) -> Result<(f64, DVector<f64>)> {
        let var = self.space(side.other());
        let rows_v = lp_rows(&var.lip).expect("rank-one rows");
        let img = self.embedding(side).sa_map() * y;
        let pv = self.embedding(side.other()).sa_map();
        let m = var.shape.sa_dim();
        let mut obj = vec![0.0; m + 1];
        obj[m] = 1.0;
        let mut lp = LinearProgram::minimize(obj);
        add_ball(&mut lp, &rows_v, 0, 1.0);
        for (k, b) in self.x.blocks.iter().enumerate() {
            let w = b[(0, 0)].norm();
            if w == 0.0 {
                continue;
            }
            let mut t: Vec<(usize, f64)> = (0..m).map(|i| (i, -w * pv[(k, i)])).collect();
            t.push((m, -1.0));
            lp.le(&t, -w * img[k]);
            let mut t: Vec<(usize, f64)> = (0..m).map(|i| (i, -w * pv[(k, i)])).collect();
            t.push((m, 1.0));
            lp.ge(&t, -w * img[k]);
        }
        let (v, z) = lp.solve()?;
        Ok((v.max(0.0), DVector::from_column_slice(&z[..m])))
    }

    /// Reach from one side: the largest bridge distance from a point of
    /// that side's Lip-ball to the other side's Lip-ball.
    pub fn side_reach(&self, side: Side, opts: &SolverOpts) -> Result<Estimate> {
        let fixed = self.space(side);
        if fixed.shape.sa_dim() == 1 {
            return Ok(Estimate::exact(0.0));
        }
        if self.is_commutative_mode() {
            return self.reach_lp(side, opts);
        }
        let inner = |y: &DVector<f64>| {
            let (v, _, g) = self.partner_descent(side, y, opts);
            (v, g)
        };
        let prob = Ascent { ball: &fixed.lip, objective: &inner, flat: Some(fixed.unit_kernel()), to_boundary: true };
        let outer = SolverOpts { iterations: opts.iterations.min(200), restarts: 4, ..*opts };
        let mut e = ball_ascent(&prob, &[], &outer);
        e.kind = BoundKind::Approx;
        Ok(e)
    }

    /// Vertices of the Lip-ball from linear objectives (all point
    /// differences plus random ones), each paired with its exact partner.
    fn reach_lp(&self, side: Side, opts: &SolverOpts) -> Result<Estimate> {
        let fixed = self.space(side);
        let rows_f = lp_rows(&fixed.lip).expect("rank-one rows");
        let n = fixed.shape.sa_dim();
        let mut objectives: Vec<DVector<f64>> = Vec::new();
        for p in 0..n {
            for q in 0..n {
                if p != q {
                    let mut c = DVector::zeros(n);
                    c[p] = 1.0;
                    c[q] = -1.0;
                    objectives.push(c);
                }
            }
        }
        let mut rng = rng_from_seed(derive_seed(opts.seed, 0x7E));
        for _ in 0..16 {
            objectives.push(random_real_vector(n, &mut rng));
        }
        let mut best = Estimate::lower(0.0, 1e-9, 0);
        for c in &objectives {
            let mut lp = LinearProgram::maximize(c.iter().cloned().collect());
            add_ball(&mut lp, &rows_f, 0, 1.0);
            lp.eq(&(0..n).map(|i| (i, 1.0)).collect::<Vec<_>>(), 0.0);
            let (_, a) = lp.solve()?;
            let a = DVector::from_vec(a);
            let (v, _) = self.partner_lp(side, &a)?;
            best.iterations += 1;
            if v > best.value {
                best.value = v;
                best.certificate = Some(a.iter().cloned().collect());
            }
        }
        Ok(best)
    }

    pub fn reach(&self, opts: &SolverOpts) -> Result<Estimate> {
        let r1 = self.side_reach(Side::First, opts)?;
        let r2 = self.side_reach(Side::Second, &opts.with_seed(derive_seed(opts.seed, 3)))?;
        Ok(r1.max(&r2))
    }

    pub fn stats(&self, opts: &SolverOpts) -> Result<BridgeStats> {
        let height = self.height(opts)?;
        let reach = self.reach(opts)?;
        let length = height.max(&reach);
        Ok(BridgeStats { height, reach, length })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seminorm::{commutator, PermissibleTriple};

    fn line(n: usize, h: f64) -> DMatrix<f64> {
        DMatrix::from_fn(n, n, |i, j| (i as f64 - j as f64).abs() * h)
    }

    #[test]
    fn seminorm_examples() {
        let x = Qcms::metric_space("x", &line(3, 1.0), 1).unwrap();
        let b = Bridge::identity(x.clone()).unwrap();
        let a = Element::from_reals(&[0.3, -1.0, 2.0]);
        assert!(b.seminorm(&a, &a).unwrap() < 1e-14);
        let one = Element::unit(&x.shape);
        let zero = Element::zeros(&x.shape);
        assert!((b.seminorm(&one, &zero).unwrap() - 1.0).abs() < 1e-14);
        assert_eq!(b.seminorm(&zero, &zero).unwrap(), 0.0);
    }

    #[test]
    fn identity_bridge_has_length_zero() {
        let opts = SolverOpts::default();
        let x = Qcms::metric_space("x", &line(4, 0.5), 1).unwrap();
        let s = Bridge::identity(x).unwrap().stats(&opts).unwrap();
        assert!(s.height.value.abs() < 1e-9 && s.reach.value.abs() < 1e-9 && s.length.value.abs() < 1e-9);
    }

    #[test]
    fn noncommutative_identity_bridge() {
        let opts = SolverOpts::default();
        let m2 = AlgebraShape::matrix(2);
        let d = Element { blocks: vec![CMat::from_row_slice(2, 2, &[C64::new(1.0, 0.0), C64::new(0.0, 0.0), C64::new(0.0, 0.0), C64::new(-1.0, 0.0)])] };
        let d2 = Element { blocks: vec![CMat::from_row_slice(2, 2, &[C64::new(0.0, 0.0), C64::new(1.0, 0.0), C64::new(1.0, 0.0), C64::new(0.0, 0.0)])] };
        let lip = commutator(&StarMorphism::identity(&m2), &[d, d2]).unwrap();
        let q = Qcms::new("m2", m2, lip, PermissibleTriple::leibniz(), 100, 1).unwrap();
        let s = Bridge::identity(q).unwrap().stats(&opts).unwrap();
        assert!(s.height.value.abs() < 1e-6, "{:?}", s.height);
        assert!(s.reach.value.abs() < 1e-6, "{:?}", s.reach);
    }

    #[test]
    fn one_point_spaces() {
        let opts = SolverOpts::default();
        let p = Qcms::metric_space("p", &DMatrix::zeros(1, 1), 1).unwrap();
        let q = Qcms::metric_space("q", &DMatrix::zeros(1, 1), 1).unwrap();
        let b = Bridge::correspondence(p, q, &[(0, 0)]).unwrap();
        assert_eq!(b.stats(&opts).unwrap().length.value, 0.0);
    }

    #[test]
    fn reach_is_symmetric_under_transpose() {
        let opts = SolverOpts::default();
        let x = Qcms::metric_space("x", &line(3, 1.0), 1).unwrap();
        let y = Qcms::metric_space("y", &line(2, 1.5), 1).unwrap();
        let b = Bridge::correspondence(x, y, &[(0, 0), (1, 0), (2, 1)]).unwrap();
        let t = b.transposed().unwrap();
        let (r, rt) = (b.reach(&opts).unwrap(), t.reach(&opts).unwrap());
        assert!((r.value - rt.value).abs() < 1e-9);
        assert!((b.height(&opts).unwrap().value - t.height(&opts).unwrap().value).abs() < 1e-9);
    }

    #[test]
    fn two_point_collapse_oracle() {
        // Two-point space {0, 1} with d = 1 against a point, bridged through
        // C^2 with both points related to the single point. Level states are
        // all states, so the height is 0; for the reach, a = (1/2, -1/2) is
        // best approximated by constants, giving 1/2.
        let opts = SolverOpts::default();
        let x = Qcms::metric_space("x", &line(2, 1.0), 1).unwrap();
        let p = Qcms::metric_space("p", &DMatrix::zeros(1, 1), 1).unwrap();
        let b = Bridge::correspondence(x, p, &[(0, 0), (1, 0)]).unwrap();
        let s = b.stats(&opts).unwrap();
        assert!(s.height.value.abs() < 1e-9);
        assert!((s.reach.value - 0.5).abs() < 1e-9);
    }

    #[test]
    fn pivot_element_without_level_states_is_rejected() {
        let x = Qcms::metric_space("x", &line(2, 1.0), 1).unwrap();
        let b = Bridge::identity(x).unwrap();
        let bad = Element::from_values(&[C64::new(0.0, 1.0), C64::new(-1.0, 0.0)]);
        assert!(b.with_pivot_element(bad).is_err());
    }
}
