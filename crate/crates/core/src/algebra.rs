//! Finite-dimensional C*-algebras: direct sums of full matrix blocks.
//!
//! Elements are lists of dense complex blocks. Two real coordinate systems
//! are used by the solvers:
//!
//! * full coordinates: per block, row-major `(re, im)` pairs;
//! * self-adjoint coordinates: per block, an orthonormal basis of the
//!   Hermitian matrices (diagonal units first, then for `i < j` the
//!   symmetric and antisymmetric pairs scaled by `1/sqrt 2`).

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::f64::consts::SQRT_2;
use std::fmt;

use crate::error::{shape_err, Error, Result};

pub type C64 = Complex64;
pub type CMat = DMatrix<C64>;

/// Cap on `sum n_k^2`.
pub const MAX_TOTAL_DIM: usize = 4096;
/// Tolerance used by structural checks.
pub const STRUCT_TOL: f64 = 1e-10;

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Mixes a tag into a seed so that independent sub-tasks get independent
/// streams without sharing a generator.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AlgebraShape {
    blocks: Vec<usize>,
}

impl AlgebraShape {
    pub fn new(blocks: Vec<usize>) -> Result<Self> {
        if blocks.is_empty() {
            return Err(Error::Validation("algebra needs at least one block".into()));
        }
        if blocks.iter().any(|&n| n == 0) {
            return Err(Error::Validation("block dimensions must be positive".into()));
        }
        let total: usize = blocks.iter().map(|n| n * n).sum();
        if total > MAX_TOTAL_DIM {
            return Err(Error::Validation(format!(
                "total dimension {total} exceeds {MAX_TOTAL_DIM}"
            )));
        }
        Ok(Self { blocks })
    }

    /// `C(X)` for an `n`-point space.
    pub fn commutative(n: usize) -> Self {
        Self::new(vec![1; n]).expect("commutative shape")
    }

    pub fn matrix(n: usize) -> Self {
        Self::new(vec![n]).expect("matrix shape")
    }

    pub fn blocks(&self) -> &[usize] {
        &self.blocks
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_commutative(&self) -> bool {
        self.blocks.iter().all(|&n| n == 1)
    }

    /// Complex dimension `sum n_k^2`; also the real dimension of the
    /// self-adjoint part.
    pub fn sa_dim(&self) -> usize {
        self.blocks.iter().map(|n| n * n).sum()
    }

    pub fn real_dim(&self) -> usize {
        2 * self.sa_dim()
    }

    /// Offsets of each block in self-adjoint coordinates; full coordinates
    /// use twice these.
    pub fn offsets(&self) -> Vec<usize> {
        let mut off = Vec::with_capacity(self.blocks.len());
        let mut acc = 0;
        for &n in &self.blocks {
            off.push(acc);
            acc += n * n;
        }
        off
    }

    pub fn direct_sum(&self, other: &AlgebraShape) -> Result<AlgebraShape> {
        let mut b = self.blocks.clone();
        b.extend_from_slice(&other.blocks);
        AlgebraShape::new(b)
    }

    /// Isometric embedding of self-adjoint coordinates into full ones.
    /// Its transpose sends full coordinates of `a` to those of `Re a`.
    pub fn sa_embedding(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.real_dim(), self.sa_dim());
        let s = 1.0 / SQRT_2;
        for (&n, off) in self.blocks.iter().zip(self.offsets()) {
            let full = 2 * off;
            let idx = |i: usize, j: usize, part: usize| full + 2 * (i * n + j) + part;
            let mut c = off;
            for i in 0..n {
                m[(idx(i, i, 0), c)] = 1.0;
                c += 1;
            }
            for i in 0..n {
                for j in (i + 1)..n {
                    m[(idx(i, j, 0), c)] = s;
                    m[(idx(j, i, 0), c)] = s;
                    m[(idx(i, j, 1), c + 1)] = s;
                    m[(idx(j, i, 1), c + 1)] = -s;
                    c += 2;
                }
            }
        }
        m
    }

    pub fn sa_coords_of_unit(&self) -> DVector<f64> {
        let mut v = DVector::zeros(self.sa_dim());
        for (&n, off) in self.blocks.iter().zip(self.offsets()) {
            for i in 0..n {
                v[off + i] = 1.0;
            }
        }
        v
    }
}

impl fmt::Display for AlgebraShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.blocks.iter().map(|n| n.to_string()).collect();
        write!(f, "({})", parts.join(","))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Element {
    pub blocks: Vec<CMat>,
}

impl Element {
    pub fn zeros(shape: &AlgebraShape) -> Self {
        Self { blocks: shape.blocks.iter().map(|&n| CMat::zeros(n, n)).collect() }
    }

    pub fn unit(shape: &AlgebraShape) -> Self {
        Self { blocks: shape.blocks.iter().map(|&n| CMat::identity(n, n)).collect() }
    }

    /// Element of a commutative algebra from its values at each point.
    pub fn from_values(values: &[C64]) -> Self {
        Self { blocks: values.iter().map(|&v| CMat::from_element(1, 1, v)).collect() }
    }

    pub fn from_reals(values: &[f64]) -> Self {
        Self { blocks: values.iter().map(|&v| CMat::from_element(1, 1, C64::new(v, 0.0))).collect() }
    }

    pub fn shape(&self) -> AlgebraShape {
        AlgebraShape::new(self.blocks.iter().map(|b| b.nrows()).collect()).expect("element shape")
    }

    pub fn conforms(&self, shape: &AlgebraShape) -> bool {
        self.blocks.len() == shape.blocks.len()
            && self
                .blocks
                .iter()
                .zip(&shape.blocks)
                .all(|(b, &n)| b.nrows() == n && b.ncols() == n)
    }

    pub fn check(&self, shape: &AlgebraShape) -> Result<()> {
        if self.conforms(shape) {
            Ok(())
        } else {
            shape_err(format!("element does not conform to shape {shape}"))
        }
    }

    /// Values at the points of a commutative algebra.
    pub fn values(&self) -> Vec<C64> {
        self.blocks.iter().map(|b| b[(0, 0)]).collect()
    }

    pub fn adjoint(&self) -> Self {
        Self { blocks: self.blocks.iter().map(|b| b.adjoint()).collect() }
    }

    pub fn scale(&self, c: C64) -> Self {
        Self { blocks: self.blocks.iter().map(|b| b * c).collect() }
    }

    pub fn scale_real(&self, c: f64) -> Self {
        self.scale(C64::new(c, 0.0))
    }

    pub fn add(&self, other: &Element) -> Self {
        Self { blocks: self.blocks.iter().zip(&other.blocks).map(|(a, b)| a + b).collect() }
    }

    pub fn sub(&self, other: &Element) -> Self {
        Self { blocks: self.blocks.iter().zip(&other.blocks).map(|(a, b)| a - b).collect() }
    }

    pub fn mul(&self, other: &Element) -> Self {
        Self { blocks: self.blocks.iter().zip(&other.blocks).map(|(a, b)| a * b).collect() }
    }

    /// `(Re a, Im a)` with `Re a = (a + a*)/2` and `Im a = (a - a*)/2i`.
    pub fn re_im(&self) -> (Element, Element) {
        let adj = self.adjoint();
        let re = self.add(&adj).scale_real(0.5);
        let im = self.sub(&adj).scale(C64::new(0.0, -0.5));
        (re, im)
    }

    pub fn is_self_adjoint(&self, tol: f64) -> bool {
        self.blocks.iter().all(|b| (b - b.adjoint()).iter().all(|z| z.norm() <= tol))
    }

    /// Largest entry modulus; a cheap stand-in for the norm in structural checks.
    pub fn max_abs(&self) -> f64 {
        self.blocks.iter().flat_map(|b| b.iter()).map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn opnorm(&self) -> f64 {
        self.blocks.iter().map(opnorm_block).fold(0.0, f64::max)
    }

    /// Largest eigenvalue of a self-adjoint element.
    pub fn lambda_max(&self) -> f64 {
        self.blocks.iter().map(lambda_max_block).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn to_real_coords(&self) -> DVector<f64> {
        let n: usize = self.blocks.iter().map(|b| b.len()).sum();
        let mut v = DVector::zeros(2 * n);
        let mut c = 0;
        for b in &self.blocks {
            for i in 0..b.nrows() {
                for j in 0..b.ncols() {
                    v[c] = b[(i, j)].re;
                    v[c + 1] = b[(i, j)].im;
                    c += 2;
                }
            }
        }
        v
    }

    pub fn from_real_coords(shape: &AlgebraShape, v: &[f64]) -> Result<Self> {
        if v.len() != shape.real_dim() {
            return shape_err(format!("expected {} real coordinates, got {}", shape.real_dim(), v.len()));
        }
        let mut c = 0;
        let blocks = shape
            .blocks
            .iter()
            .map(|&n| {
                let m = CMat::from_fn(n, n, |i, j| {
                    let k = c + 2 * (i * n + j);
                    C64::new(v[k], v[k + 1])
                });
                c += 2 * n * n;
                m
            })
            .collect();
        Ok(Self { blocks })
    }

    /// Self-adjoint coordinates of `Re a`.
    pub fn to_sa_coords(&self) -> DVector<f64> {
        let n: usize = self.blocks.iter().map(|b| b.len()).sum();
        let mut v = DVector::zeros(n);
        let mut c = 0;
        for b in &self.blocks {
            let m = b.nrows();
            for i in 0..m {
                v[c] = b[(i, i)].re;
                c += 1;
            }
            for i in 0..m {
                for j in (i + 1)..m {
                    v[c] = (b[(i, j)].re + b[(j, i)].re) / SQRT_2;
                    v[c + 1] = (b[(i, j)].im - b[(j, i)].im) / SQRT_2;
                    c += 2;
                }
            }
        }
        v
    }

    pub fn from_sa_coords(shape: &AlgebraShape, v: &[f64]) -> Result<Self> {
        if v.len() != shape.sa_dim() {
            return shape_err(format!("expected {} self-adjoint coordinates, got {}", shape.sa_dim(), v.len()));
        }
        let mut c = 0;
        let blocks = shape
            .blocks
            .iter()
            .map(|&n| {
                let mut m = CMat::zeros(n, n);
                for i in 0..n {
                    m[(i, i)] = C64::new(v[c], 0.0);
                    c += 1;
                }
                for i in 0..n {
                    for j in (i + 1)..n {
                        let z = C64::new(v[c], v[c + 1]) / SQRT_2;
                        m[(i, j)] = z;
                        m[(j, i)] = z.conj();
                        c += 2;
                    }
                }
                m
            })
            .collect();
        Ok(Self { blocks })
    }

    /// Operator norm plus a subgradient in full real coordinates.
    pub fn opnorm_with_subgradient(&self) -> (f64, DVector<f64>) {
        let mut best = (0usize, -1.0, None);
        for (k, b) in self.blocks.iter().enumerate() {
            let (s, uv) = spectral_top(b);
            if s > best.1 {
                best = (k, s, uv);
            }
        }
        let mut g = DVector::zeros(2 * self.blocks.iter().map(|b| b.len()).sum::<usize>());
        if let (k, s, Some((u, v))) = best {
            if s > 0.0 {
                let off: usize = self.blocks[..k].iter().map(|b| 2 * b.len()).sum();
                let n = self.blocks[k].ncols();
                for i in 0..self.blocks[k].nrows() {
                    for j in 0..n {
                        let z = u[i] * v[j].conj();
                        g[off + 2 * (i * n + j)] = z.re;
                        g[off + 2 * (i * n + j) + 1] = z.im;
                    }
                }
            }
        }
        (best.1.max(0.0), g)
    }
}

/// Largest singular value of a (possibly rectangular) complex matrix.
pub fn opnorm_block(b: &CMat) -> f64 {
    if b.is_empty() {
        return 0.0;
    }
    if b.nrows() == 1 || b.ncols() == 1 {
        return b.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    }
    spectral_top(b).0
}

/// Top singular value with left and right singular vectors.
pub fn spectral_top(b: &CMat) -> (f64, Option<(DVector<C64>, DVector<C64>)>) {
    if b.is_empty() {
        return (0.0, None);
    }
    let (r, c) = b.shape();
    if r == 1 || c == 1 {
        let s = b.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if s == 0.0 {
            return (0.0, None);
        }
        return if r == 1 {
            let u = DVector::from_element(1, C64::new(1.0, 0.0));
            let v = DVector::from_iterator(c, b.iter().map(|z| z.conj() / s));
            (s, Some((u, v)))
        } else {
            let v = DVector::from_element(1, C64::new(1.0, 0.0));
            let u = DVector::from_iterator(r, b.iter().map(|z| z / s));
            (s, Some((u, v)))
        };
    }
    let svd = b.clone().svd(true, true);
    let (mut k, mut s) = (0, f64::NEG_INFINITY);
    for (i, &sv) in svd.singular_values.iter().enumerate() {
        if sv > s {
            s = sv;
            k = i;
        }
    }
    let u = svd.u.as_ref().map(|u| u.column(k).into_owned());
    let v = svd.v_t.as_ref().map(|vt| vt.row(k).adjoint());
    match (u, v) {
        (Some(u), Some(v)) if s > 0.0 => (s, Some((u, v))),
        _ => (s.max(0.0), None),
    }
}

/// Largest eigenvalue of a Hermitian block, with unit eigenvector.
pub fn top_eigen(b: &CMat) -> (f64, DVector<C64>) {
    let n = b.nrows();
    if n == 1 {
        return (b[(0, 0)].re, DVector::from_element(1, C64::new(1.0, 0.0)));
    }
    let h = (b + b.adjoint()) * C64::new(0.5, 0.0);
    let eig = h.symmetric_eigen();
    let (mut k, mut l) = (0, f64::NEG_INFINITY);
    for (i, &e) in eig.eigenvalues.iter().enumerate() {
        if e > l {
            l = e;
            k = i;
        }
    }
    (l, eig.eigenvectors.column(k).into_owned())
}

pub fn lambda_max_block(b: &CMat) -> f64 {
    top_eigen(b).0
}

mod ops_impl {
    use super::Element;
    use std::ops::{Add, Mul, Neg, Sub};

    impl Add for &Element {
        type Output = Element;
        fn add(self, rhs: &Element) -> Element {
            Element::add(self, rhs)
        }
    }
    impl Sub for &Element {
        type Output = Element;
        fn sub(self, rhs: &Element) -> Element {
            Element::sub(self, rhs)
        }
    }
    impl Mul for &Element {
        type Output = Element;
        fn mul(self, rhs: &Element) -> Element {
            Element::mul(self, rhs)
        }
    }
    impl Neg for &Element {
        type Output = Element;
        fn neg(self) -> Element {
            self.scale_real(-1.0)
        }
    }
}

fn gaussian<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

pub fn random_element<R: Rng + ?Sized>(shape: &AlgebraShape, rng: &mut R) -> Element {
    Element {
        blocks: shape
            .blocks
            .iter()
            .map(|&n| CMat::from_fn(n, n, |_, _| C64::new(gaussian(rng), gaussian(rng))))
            .collect(),
    }
}

pub fn random_self_adjoint<R: Rng + ?Sized>(shape: &AlgebraShape, rng: &mut R) -> Element {
    random_element(shape, rng).re_im().0
}

pub fn random_unit_vector<R: Rng + ?Sized>(n: usize, rng: &mut R) -> DVector<C64> {
    loop {
        let v = DVector::from_fn(n, |_, _| C64::new(gaussian(rng), gaussian(rng)));
        let s = v.norm();
        if s > 1e-12 {
            return v / C64::new(s, 0.0);
        }
    }
}

pub fn random_real_vector<R: Rng + ?Sized>(n: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_fn(n, |_, _| gaussian(rng))
}

/// A state given by density blocks; `phi(a) = sum_k tr(rho_k a_k)`.
#[derive(Clone, Debug, PartialEq)]
pub struct State {
    pub blocks: Vec<CMat>,
}

impl State {
    pub fn new(shape: &AlgebraShape, blocks: Vec<CMat>) -> Result<Self> {
        let s = State { blocks };
        let as_elem = Element { blocks: s.blocks.clone() };
        as_elem.check(shape)?;
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let mut total = 0.0;
        for b in &self.blocks {
            if !(b - b.adjoint()).iter().all(|z| z.norm() <= 1e-10) {
                return Err(Error::Validation("density block is not Hermitian".into()));
            }
            let lmin = if b.nrows() == 1 {
                b[(0, 0)].re
            } else {
                b.clone().symmetric_eigen().eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min)
            };
            if lmin < -1e-10 {
                return Err(Error::Validation(format!("density block has eigenvalue {lmin}")));
            }
            total += b.trace().re;
        }
        if (total - 1.0).abs() > 1e-10 {
            return Err(Error::Validation(format!("density has trace {total}")));
        }
        Ok(())
    }

    pub fn shape(&self) -> AlgebraShape {
        AlgebraShape::new(self.blocks.iter().map(|b| b.nrows()).collect()).expect("state shape")
    }

    /// Probability vector of a state on a commutative algebra.
    pub fn from_probabilities(p: &[f64]) -> Result<Self> {
        let blocks = p.iter().map(|&x| CMat::from_element(1, 1, C64::new(x, 0.0))).collect();
        State::new(&AlgebraShape::commutative(p.len()), blocks)
    }

    pub fn probabilities(&self) -> Vec<f64> {
        self.blocks.iter().map(|b| b.trace().re).collect()
    }

    pub fn point_mass(shape: &AlgebraShape, index: usize) -> Result<Self> {
        if index >= shape.num_blocks() || shape.blocks[index] != 1 {
            return Err(Error::Validation(format!("no one-dimensional block at {index}")));
        }
        Ok(Self::vector_state(shape, index, &DVector::from_element(1, C64::new(1.0, 0.0))))
    }

    /// Vector state `a -> <v, a_k v>` supported on block `k`; `v` must be a unit vector.
    pub fn vector_state(shape: &AlgebraShape, k: usize, v: &DVector<C64>) -> Self {
        let mut blocks: Vec<CMat> = shape.blocks.iter().map(|&n| CMat::zeros(n, n)).collect();
        blocks[k] = v * v.adjoint();
        State { blocks }
    }

    /// Normalized trace on the whole algebra, weighted by block dimension.
    pub fn tracial(shape: &AlgebraShape) -> Self {
        let total: usize = shape.blocks.iter().sum();
        let blocks = shape
            .blocks
            .iter()
            .map(|&n| CMat::identity(n, n) * C64::new(1.0 / total as f64, 0.0))
            .collect();
        State { blocks }
    }

    pub fn eval(&self, a: &Element) -> Result<C64> {
        if self.blocks.len() != a.blocks.len()
            || self.blocks.iter().zip(&a.blocks).any(|(r, b)| r.shape() != b.shape())
        {
            return shape_err("state and element shapes differ");
        }
        Ok(self.eval_unchecked(a))
    }

    pub fn eval_unchecked(&self, a: &Element) -> C64 {
        self.blocks
            .iter()
            .zip(&a.blocks)
            .map(|(r, b)| {
                let mut s = C64::new(0.0, 0.0);
                for i in 0..r.nrows() {
                    for j in 0..r.ncols() {
                        s += r[(i, j)] * b[(j, i)];
                    }
                }
                s
            })
            .sum()
    }

    /// The functional `a -> phi(a)` on self-adjoint coordinates.
    pub fn sa_functional(&self) -> DVector<f64> {
        let n: usize = self.blocks.iter().map(|b| b.len()).sum();
        let mut v = DVector::zeros(n);
        let mut c = 0;
        for r in &self.blocks {
            let m = r.nrows();
            for i in 0..m {
                v[c] = r[(i, i)].re;
                c += 1;
            }
            for i in 0..m {
                for j in (i + 1)..m {
                    v[c] = SQRT_2 * r[(i, j)].re;
                    v[c + 1] = SQRT_2 * r[(i, j)].im;
                    c += 2;
                }
            }
        }
        v
    }

    pub fn mix(&self, other: &State, t: f64) -> State {
        State {
            blocks: self
                .blocks
                .iter()
                .zip(&other.blocks)
                .map(|(a, b)| a * C64::new(1.0 - t, 0.0) + b * C64::new(t, 0.0))
                .collect(),
        }
    }

    /// Pullback `phi o pi` along a morphism into this state's algebra.
    pub fn pullback(&self, pi: &StarMorphism) -> Result<State> {
        if pi.target() != &self.shape() {
            return shape_err("pullback: morphism target differs from state algebra");
        }
        // phi o pi on sa coordinates is f^T * sa_map; rebuild densities from it.
        let f = pi.sa_map().transpose() * self.sa_functional();
        let src = pi.source();
        let mut blocks = Vec::new();
        let mut c = 0;
        for &n in src.blocks() {
            let mut m = CMat::zeros(n, n);
            for i in 0..n {
                m[(i, i)] = C64::new(f[c], 0.0);
                c += 1;
            }
            for i in 0..n {
                for j in (i + 1)..n {
                    let z = C64::new(f[c], f[c + 1]) / SQRT_2;
                    m[(i, j)] = z;
                    m[(j, i)] = z.conj();
                    c += 2;
                }
            }
            blocks.push(m);
        }
        Ok(State { blocks })
    }
}

/// All pure states of a commutative algebra.
pub fn pure_states(shape: &AlgebraShape) -> Result<Vec<State>> {
    if !shape.is_commutative() {
        return Err(Error::Unsupported("pure_states needs a commutative shape".into()));
    }
    (0..shape.num_blocks()).map(|k| State::point_mass(shape, k)).collect()
}

/// Deterministic mix of random vector states and convex combinations.
pub fn sample_states(shape: &AlgebraShape, count: usize, seed: u64) -> Result<Vec<State>> {
    if count == 0 {
        return Err(Error::Validation("sample count must be positive".into()));
    }
    let mut rng = rng_from_seed(seed);
    let k = shape.num_blocks();
    let weights: Vec<f64> = shape.blocks.iter().map(|&n| n as f64).collect();
    let total: f64 = weights.iter().sum();
    let pick_block = |rng: &mut ChaCha8Rng| {
        let mut u = rng.gen::<f64>() * total;
        for (i, w) in weights.iter().enumerate() {
            if u < *w {
                return i;
            }
            u -= w;
        }
        k - 1
    };
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let pure = |rng: &mut ChaCha8Rng, b: usize| {
            let v = random_unit_vector(shape.blocks[b], rng);
            State::vector_state(shape, b, &v)
        };
        if i % 2 == 0 {
            let b = pick_block(&mut rng);
            out.push(pure(&mut rng, b));
        } else {
            let m = 2 + rng.gen_range(0..3);
            let mut ws: Vec<f64> = (0..m).map(|_| -rng.gen::<f64>().max(1e-300).ln()).collect();
            let s: f64 = ws.iter().sum();
            ws.iter_mut().for_each(|w| *w /= s);
            let mut st = State { blocks: shape.blocks.iter().map(|&n| CMat::zeros(n, n)).collect() };
            for w in ws {
                let b = pick_block(&mut rng);
                let p = pure(&mut rng, b);
                for (acc, x) in st.blocks.iter_mut().zip(&p.blocks) {
                    *acc += x * C64::new(w, 0.0);
                }
            }
            out.push(st);
        }
    }
    Ok(out)
}

/// A *-morphism between finite-dimensional algebras, stored as a real
/// linear map on full coordinates.
#[derive(Clone, Debug)]
pub struct StarMorphism {
    source: AlgebraShape,
    target: AlgebraShape,
    map: DMatrix<f64>,
    sa_map: DMatrix<f64>,
    pub unital: bool,
    pub star_preserving: bool,
    pub multiplicative: bool,
}

impl StarMorphism {
    /// Builds the morphism by evaluating `f` on the real basis and verifies
    /// unitality, *-preservation and multiplicativity on matrix units.
    pub fn from_fn<F>(source: &AlgebraShape, target: &AlgebraShape, f: F) -> Result<Self>
    where
        F: Fn(&Element) -> Element,
    {
        let rd = source.real_dim();
        let mut map = DMatrix::zeros(target.real_dim(), rd);
        let mut basis = vec![0.0; rd];
        for c in 0..rd {
            basis[c] = 1.0;
            let e = Element::from_real_coords(source, &basis)?;
            basis[c] = 0.0;
            let img = f(&e);
            img.check(target)?;
            map.set_column(c, &img.to_real_coords());
        }
        Self::from_map(source, target, map)
    }

    pub fn from_map(source: &AlgebraShape, target: &AlgebraShape, map: DMatrix<f64>) -> Result<Self> {
        if map.nrows() != target.real_dim() || map.ncols() != source.real_dim() {
            return shape_err("morphism matrix has wrong dimensions");
        }
        let sa_map = target.sa_embedding().transpose() * &map * source.sa_embedding();
        let mut m = StarMorphism {
            source: source.clone(),
            target: target.clone(),
            map,
            sa_map,
            unital: false,
            star_preserving: false,
            multiplicative: false,
        };
        m.verify();
        if !m.star_preserving || !m.multiplicative {
            return Err(Error::Validation(format!(
                "map {source} -> {target} is not a *-morphism (star {}, multiplicative {})",
                m.star_preserving, m.multiplicative
            )));
        }
        Ok(m)
    }

    fn verify(&mut self) {
        let one = self.apply(&Element::unit(&self.source));
        self.unital = one.sub(&Element::unit(&self.target)).opnorm() <= STRUCT_TOL;
        let units = matrix_units(&self.source);
        let imgs: Vec<Element> = units.iter().map(|u| self.apply(u)).collect();
        self.star_preserving = units
            .iter()
            .zip(&imgs)
            .all(|(u, img)| self.apply(&u.adjoint()).sub(&img.adjoint()).max_abs() <= STRUCT_TOL);
        // E_ij E_kl is E_il when j == k in the same block and zero otherwise,
        // so the image of each product is already known.
        let mut index = Vec::new();
        for (k, &n) in self.source.blocks.iter().enumerate() {
            for i in 0..n {
                for j in 0..n {
                    index.push((k, i, j));
                }
            }
        }
        let zero = Element::zeros(&self.target);
        let lookup = |k: usize, i: usize, j: usize| {
            let off: usize = self.source.blocks[..k].iter().map(|n| n * n).sum();
            off + i * self.source.blocks[k] + j
        };
        let mut mult = true;
        'outer: for (p, &(k1, i1, j1)) in index.iter().enumerate() {
            for (q, &(k2, i2, j2)) in index.iter().enumerate() {
                let prod = imgs[p].mul(&imgs[q]);
                let expected = if k1 == k2 && j1 == i2 { &imgs[lookup(k1, i1, j2)] } else { &zero };
                if prod.sub(expected).max_abs() > STRUCT_TOL {
                    mult = false;
                    break 'outer;
                }
            }
        }
        self.multiplicative = mult;
    }

    pub fn identity(shape: &AlgebraShape) -> Self {
        Self::from_fn(shape, shape, |a| a.clone()).expect("identity morphism")
    }

    /// Target block `t` is the block-diagonal matrix of the source blocks
    /// listed in `layout[t]`, in order.
    pub fn block_layout(source: &AlgebraShape, target: &AlgebraShape, layout: &[Vec<usize>]) -> Result<Self> {
        if layout.len() != target.num_blocks() {
            return shape_err("layout needs one entry per target block");
        }
        for (t, parts) in layout.iter().enumerate() {
            if parts.iter().any(|&s| s >= source.num_blocks()) {
                return shape_err(format!("layout entry {t} references a missing source block"));
            }
            let n: usize = parts.iter().map(|&s| source.blocks[s]).sum();
            if n != target.blocks[t] {
                return shape_err(format!("layout entry {t} has size {n}, target block is {}", target.blocks[t]));
            }
        }
        let layout = layout.to_vec();
        Self::from_fn(source, target, move |a| {
            let blocks = layout
                .iter()
                .zip(&target.blocks)
                .map(|(parts, &n)| {
                    let mut m = CMat::zeros(n, n);
                    let mut o = 0;
                    for &s in parts {
                        let b = &a.blocks[s];
                        let k = b.nrows();
                        m.view_mut((o, o), (k, k)).copy_from(b);
                        o += k;
                    }
                    m
                })
                .collect();
            Element { blocks }
        })
    }

    pub fn source(&self) -> &AlgebraShape {
        &self.source
    }

    pub fn target(&self) -> &AlgebraShape {
        &self.target
    }

    pub fn map(&self) -> &DMatrix<f64> {
        &self.map
    }

    /// The restriction to self-adjoint coordinates.
    pub fn sa_map(&self) -> &DMatrix<f64> {
        &self.sa_map
    }

    pub fn apply(&self, a: &Element) -> Element {
        let v = &self.map * a.to_real_coords();
        Element::from_real_coords(&self.target, v.as_slice()).expect("morphism image")
    }

    pub fn rank(&self) -> usize {
        self.map.rank(1e-9)
    }

    pub fn is_injective(&self) -> bool {
        self.rank() == self.source.real_dim()
    }

    pub fn is_surjective(&self) -> bool {
        self.rank() == self.target.real_dim()
    }

    /// `self o first`.
    pub fn after(&self, first: &StarMorphism) -> Result<Self> {
        if first.target != self.source {
            return shape_err("composition: target and source differ");
        }
        Self::from_map(&first.source, &self.target, &self.map * &first.map)
    }
}

/// Matrix units `E_ij` of every block.
pub fn matrix_units(shape: &AlgebraShape) -> Vec<Element> {
    let mut out = Vec::new();
    for (k, &n) in shape.blocks.iter().enumerate() {
        for i in 0..n {
            for j in 0..n {
                let mut e = Element::zeros(shape);
                e.blocks[k][(i, j)] = C64::new(1.0, 0.0);
                out.push(e);
            }
        }
    }
    out
}

/// `A (+) B` with its canonical projections and injections.
#[derive(Clone, Debug)]
pub struct DirectSum {
    pub shape: AlgebraShape,
    pub proj_first: StarMorphism,
    pub proj_second: StarMorphism,
    /// `a -> (a, 0)`; multiplicative but not unital.
    pub inj_first: StarMorphism,
    pub inj_second: StarMorphism,
}

impl DirectSum {
    pub fn split(&self, d: &Element) -> (Element, Element) {
        let k = self.proj_first.target().num_blocks();
        (Element { blocks: d.blocks[..k].to_vec() }, Element { blocks: d.blocks[k..].to_vec() })
    }

    pub fn join(a: &Element, b: &Element) -> Element {
        let mut blocks = a.blocks.clone();
        blocks.extend(b.blocks.iter().cloned());
        Element { blocks }
    }
}

pub fn direct_sum(a: &AlgebraShape, b: &AlgebraShape) -> Result<DirectSum> {
    let shape = a.direct_sum(b)?;
    let ka = a.num_blocks();
    let kb = b.num_blocks();
    let first: Vec<Vec<usize>> = (0..ka).map(|i| vec![i]).collect();
    let second: Vec<Vec<usize>> = (0..kb).map(|i| vec![ka + i]).collect();
    let proj_first = StarMorphism::block_layout(&shape, a, &first)?;
    let proj_second = StarMorphism::block_layout(&shape, b, &second)?;
    let inj_first = StarMorphism::from_fn(a, &shape, |x| DirectSum::join(x, &Element::zeros(b)))?;
    let inj_second = StarMorphism::from_fn(b, &shape, |x| DirectSum::join(&Element::zeros(a), x))?;
    Ok(DirectSum { shape, proj_first, proj_second, inj_first, inj_second })
}

/// Shape of `A (x) B` and the embeddings `a -> a (x) 1`, `b -> 1 (x) b`.
pub fn tensor_embeddings(a: &AlgebraShape, b: &AlgebraShape) -> Result<(AlgebraShape, StarMorphism, StarMorphism)> {
    let mut blocks = Vec::new();
    for &n in a.blocks() {
        for &m in b.blocks() {
            blocks.push(n * m);
        }
    }
    let shape = AlgebraShape::new(blocks)?;
    let kb = b.num_blocks();
    let left = StarMorphism::from_fn(a, &shape, |x| Element {
        blocks: (0..shape.num_blocks())
            .map(|t| {
                let (i, j) = (t / kb, t % kb);
                x.blocks[i].kronecker(&CMat::identity(b.blocks[j], b.blocks[j]))
            })
            .collect(),
    })?;
    let right = StarMorphism::from_fn(b, &shape, |y| Element {
        blocks: (0..shape.num_blocks())
            .map(|t| {
                let (i, j) = (t / kb, t % kb);
                CMat::identity(a.blocks[i], a.blocks[i]).kronecker(&y.blocks[j])
            })
            .collect(),
    })?;
    Ok((shape, left, right))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64) -> C64 {
        C64::new(re, 0.0)
    }

    #[test]
    fn unit_and_zero_norms() {
        let s = AlgebraShape::new(vec![2, 1, 3]).unwrap();
        assert!((Element::unit(&s).opnorm() - 1.0).abs() < 1e-14);
        assert_eq!(Element::zeros(&s).opnorm(), 0.0);
    }

    #[test]
    fn commutative_norm_matches_eigen_oracle() {
        let a = Element::from_values(&[c(3.0), c(-4.0)]);
        // Oracle: eigenvalues of the diagonal matrix diag(3, -4).
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![3.0f64, -4.0]));
        let oracle = d.symmetric_eigen().eigenvalues.iter().map(|x| x.abs()).fold(0.0, f64::max);
        assert!((a.opnorm() - oracle).abs() < 1e-14);
        assert!((a.opnorm() - 4.0).abs() < 1e-14);
    }

    #[test]
    fn trace_state_on_diag() {
        let s = AlgebraShape::matrix(2);
        let phi = State::tracial(&s);
        let mut a = Element::zeros(&s);
        a.blocks[0][(0, 0)] = c(1.0);
        a.blocks[0][(1, 1)] = c(3.0);
        assert!((phi.eval(&a).unwrap() - c(2.0)).norm() < 1e-14);
        assert!((phi.eval(&Element::unit(&s)).unwrap() - c(1.0)).norm() < 1e-14);
    }

    #[test]
    fn point_mass_evaluates() {
        let s = AlgebraShape::commutative(3);
        let a = Element::from_values(&[c(1.0), C64::new(2.0, 1.0), c(-5.0)]);
        for j in 0..3 {
            let p = State::point_mass(&s, j).unwrap();
            assert_eq!(p.eval(&a).unwrap(), a.values()[j]);
        }
    }

    #[test]
    fn re_im_examples() {
        let s = AlgebraShape::new(vec![2, 1]).unwrap();
        let mut rng = rng_from_seed(1);
        let h = random_self_adjoint(&s, &mut rng);
        let (re, im) = h.re_im();
        assert!(re.sub(&h).opnorm() < 1e-12 && im.opnorm() < 1e-12);
        let (re, im) = Element::unit(&s).scale(C64::new(0.0, 1.0)).re_im();
        assert!(re.opnorm() < 1e-14);
        assert!(im.sub(&Element::unit(&s)).opnorm() < 1e-14);
        let a = random_element(&s, &mut rng);
        let (re, im) = a.re_im();
        assert!(re.add(&im.scale(C64::new(0.0, 1.0))).sub(&a).opnorm() < 1e-12);
        assert!(re.is_self_adjoint(1e-12) && im.is_self_adjoint(1e-12));
    }

    #[test]
    fn coordinates_round_trip() {
        let s = AlgebraShape::new(vec![3, 1]).unwrap();
        let mut rng = rng_from_seed(2);
        let a = random_element(&s, &mut rng);
        let back = Element::from_real_coords(&s, a.to_real_coords().as_slice()).unwrap();
        assert_eq!(a, back);
        let h = a.re_im().0;
        let back = Element::from_sa_coords(&s, h.to_sa_coords().as_slice()).unwrap();
        assert!(back.sub(&h).opnorm() < 1e-12);
        // The embedding transpose projects onto the real part.
        let e = s.sa_embedding();
        let proj = e.transpose() * a.to_real_coords();
        assert!((proj - h.to_sa_coords()).norm() < 1e-12);
        assert!((e.transpose() * &e - DMatrix::identity(s.sa_dim(), s.sa_dim())).norm() < 1e-12);
    }

    #[test]
    fn sa_functional_matches_eval() {
        let s = AlgebraShape::new(vec![2, 2]).unwrap();
        let states = sample_states(&s, 6, 3).unwrap();
        let mut rng = rng_from_seed(4);
        for phi in states {
            phi.validate().unwrap();
            let h = random_self_adjoint(&s, &mut rng);
            let lin = phi.sa_functional().dot(&h.to_sa_coords());
            assert!((phi.eval(&h).unwrap() - c(lin)).norm() < 1e-12);
        }
    }

    #[test]
    fn subgradient_is_directional_derivative() {
        let s = AlgebraShape::new(vec![3, 2]).unwrap();
        let mut rng = rng_from_seed(5);
        let a = random_element(&s, &mut rng);
        let (n, g) = a.opnorm_with_subgradient();
        assert!((n - a.opnorm()).abs() < 1e-12);
        let d = random_element(&s, &mut rng);
        let t = 1e-6;
        let fd = (Element::from_real_coords(&s, (a.to_real_coords() + d.to_real_coords() * t).as_slice())
            .unwrap()
            .opnorm()
            - n)
            / t;
        assert!((fd - g.dot(&d.to_real_coords())).abs() < 1e-4);
    }

    #[test]
    fn direct_sum_shapes_and_legs() {
        let ds = direct_sum(&AlgebraShape::matrix(2), &AlgebraShape::commutative(2)).unwrap();
        assert_eq!(ds.shape.blocks(), &[2, 1, 1]);
        let mut rng = rng_from_seed(6);
        let a = random_element(&AlgebraShape::matrix(2), &mut rng);
        let b = random_element(&AlgebraShape::commutative(2), &mut rng);
        assert_eq!(ds.proj_first.apply(&ds.inj_first.apply(&a)).sub(&a).opnorm(), 0.0);
        let ab = DirectSum::join(&a, &b);
        assert!((ab.opnorm() - a.opnorm().max(b.opnorm())).abs() < 1e-13);
        assert!(ds.proj_first.unital && !ds.inj_first.unital);
        assert!(ds.proj_first.is_surjective() && ds.inj_second.is_injective());
    }

    #[test]
    fn pure_states_and_determinism() {
        assert_eq!(pure_states(&AlgebraShape::commutative(3)).unwrap().len(), 3);
        assert!(matches!(pure_states(&AlgebraShape::matrix(2)), Err(Error::Unsupported(_))));
        let s = AlgebraShape::new(vec![2, 1]).unwrap();
        assert_eq!(sample_states(&s, 9, 11).unwrap(), sample_states(&s, 9, 11).unwrap());
    }

    #[test]
    fn tensor_embeddings_commute() {
        let (t, l, r) = tensor_embeddings(&AlgebraShape::matrix(2), &AlgebraShape::new(vec![1, 2]).unwrap()).unwrap();
        assert_eq!(t.blocks(), &[2, 4]);
        assert!(l.unital && r.unital && l.is_injective() && r.is_injective());
        let mut rng = rng_from_seed(7);
        let a = l.apply(&random_element(l.source(), &mut rng));
        let b = r.apply(&random_element(r.source(), &mut rng));
        assert!(a.mul(&b).sub(&b.mul(&a)).opnorm() < 1e-12);
    }

    #[test]
    fn non_morphism_rejected() {
        let s = AlgebraShape::matrix(2);
        let transpose = StarMorphism::from_fn(&s, &s, |a| Element { blocks: vec![a.blocks[0].transpose()] });
        assert!(transpose.is_err());
    }

    #[test]
    fn pullback_along_projection() {
        let ds = direct_sum(&AlgebraShape::commutative(2), &AlgebraShape::matrix(2)).unwrap();
        let phi = State::point_mass(&AlgebraShape::commutative(2), 1).unwrap();
        let pulled = phi.pullback(&ds.proj_first).unwrap();
        pulled.validate().unwrap();
        let mut rng = rng_from_seed(8);
        let d = random_element(&ds.shape, &mut rng);
        let lhs = pulled.eval(&d).unwrap();
        let rhs = phi.eval(&ds.proj_first.apply(&d)).unwrap();
        assert!((lhs - rhs).norm() < 1e-12);
    }
}
