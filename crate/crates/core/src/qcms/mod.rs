//! Quantum compact metric spaces and their Monge-Kantorovich metric.

pub mod bridge;
pub mod tunnel;

use nalgebra::{DMatrix, DVector};
use std::fmt;
use std::sync::Arc;

use crate::algebra::{pure_states, rng_from_seed, sample_states, top_eigen, AlgebraShape, Element, State, StarMorphism};
use crate::convex::{ball_ascent, fiber_infimum, support_function, Ascent, LinearProgram, SolverOpts};
use crate::error::{Error, Result};
use crate::estimate::{BoundKind, CheckReport, Estimate};
use crate::seminorm::{kernel_check, quasi_leibniz_check, test_element, KernelReport, PermissibleTriple, Seminorm};

pub use bridge::{Bridge, BridgeStats};
pub use tunnel::Tunnel;

/// Validation record kept with each space.
#[derive(Clone, Debug)]
pub struct QcmsReport {
    pub kernel: KernelReport,
    pub unit_value: f64,
    pub quasi_leibniz: CheckReport,
}

/// A finite-dimensional C*-algebra with a Lip-norm on its self-adjoint part.
pub struct Qcms {
    pub name: String,
    pub shape: AlgebraShape,
    /// Lip-norm on self-adjoint coordinates.
    pub lip: Seminorm,
    pub triple: PermissibleTriple,
    pub report: QcmsReport,
}

impl fmt::Debug for Qcms {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Qcms({}, shape {})", self.name, self.shape)
    }
}

/// Sample budget used when validating a new space.
pub const CONSTRUCTION_SAMPLES: usize = 500;

impl Qcms {
    /// Validates the kernel, `L(1) = 0` and the quasi-Leibniz inequality.
    pub fn new(
        name: impl Into<String>,
        shape: AlgebraShape,
        lip: Seminorm,
        triple: PermissibleTriple,
        samples: usize,
        seed: u64,
    ) -> Result<Arc<Self>> {
        let name = name.into();
        if lip.dim() != shape.sa_dim() {
            return Err(Error::Shape(format!("Lip-norm of {name} is not on the self-adjoint part")));
        }
        let kernel = kernel_check(&lip, &shape);
        let unit_value = lip.eval(&shape.sa_coords_of_unit());
        if !kernel.pass || unit_value > 1e-10 {
            return Err(Error::Validation(format!(
                "{name}: kernel is not the scalars (dimension {}, L(1) = {unit_value:e})",
                kernel.kernel_dim
            )));
        }
        let quasi_leibniz = quasi_leibniz_check(&lip, &triple, &shape, samples, seed);
        if !quasi_leibniz.pass {
            return Err(Error::Validation(format!("{name}: {quasi_leibniz}")));
        }
        Ok(Arc::new(Self { name, shape, lip, triple, report: QcmsReport { kernel, unit_value, quasi_leibniz } }))
    }

    /// Classical finite metric space with its Lipschitz seminorm.
    pub fn metric_space(name: impl Into<String>, metric: &DMatrix<f64>, seed: u64) -> Result<Arc<Self>> {
        let lip = crate::seminorm::lipschitz(metric)?;
        Self::new(name, AlgebraShape::commutative(metric.nrows()), lip, PermissibleTriple::leibniz(), CONSTRUCTION_SAMPLES, seed)
    }

    pub fn is_commutative(&self) -> bool {
        self.shape.is_commutative()
    }

    pub fn lip_of(&self, a: &Element) -> f64 {
        self.lip.eval(&a.to_sa_coords())
    }

    pub fn unit_kernel(&self) -> DMatrix<f64> {
        let u = self.shape.sa_coords_of_unit();
        let u = &u / u.norm();
        DMatrix::from_column_slice(u.len(), 1, u.as_slice())
    }
}

/// `sup { |phi(a) - psi(a)| : L(a) <= 1 }` through the support function of
/// the Lip-ball (a linear program in the commutative case).
pub fn mk_distance(x: &Qcms, phi: &State, psi: &State, opts: &SolverOpts) -> Result<Estimate> {
    if phi.shape() != x.shape || psi.shape() != x.shape {
        return Err(Error::Shape("states are not on the space's algebra".into()));
    }
    let c = phi.sa_functional() - psi.sa_functional();
    if c.norm() <= 1e-15 {
        return Ok(Estimate::exact(0.0));
    }
    support_function(&x.lip, &c, opts)
}

/// `b -> lambda_max(b)` on self-adjoint coordinates with its gradient.
pub(crate) fn lambda_max_sa(shape: &AlgebraShape, v: &DVector<f64>) -> (f64, DVector<f64>) {
    let e = Element::from_sa_coords(shape, v.as_slice()).expect("coordinates");
    let mut best = (f64::NEG_INFINITY, 0usize, None);
    for (k, b) in e.blocks.iter().enumerate() {
        let (l, u) = top_eigen(b);
        if l > best.0 {
            best = (l, k, Some(u));
        }
    }
    let u = best.2.expect("nonempty algebra");
    (best.0, State::vector_state(shape, best.1, &u).sa_functional())
}

/// Largest distance between two states. Exact over pure-state pairs in the
/// commutative case; otherwise a lower bound from sampled pairs and an
/// ascent on the spectral spread `lambda_max - lambda_min` over the Lip-ball.
pub fn diameter(x: &Qcms, opts: &SolverOpts) -> Result<Estimate> {
    if x.shape.num_blocks() == 1 && x.shape.blocks()[0] == 1 {
        return Ok(Estimate::exact(0.0));
    }
    if x.is_commutative() {
        let ps = pure_states(&x.shape)?;
        let mut best = Estimate::exact(0.0);
        for i in 0..ps.len() {
            for j in (i + 1)..ps.len() {
                let e = mk_distance(x, &ps[i], &ps[j], opts)?;
                if e.infinite {
                    return Ok(e);
                }
                best = best.max(&e);
            }
        }
        return Ok(best);
    }
    let shape = x.shape.clone();
    let spread = move |v: &DVector<f64>| {
        let (hi, g_hi) = lambda_max_sa(&shape, v);
        let (lo, g_lo) = lambda_max_sa(&shape, &(-v));
        (hi + lo, g_hi + g_lo)
    };
    let prob = Ascent { ball: &x.lip, objective: &spread, flat: Some(x.unit_kernel()), to_boundary: true };
    let mut e = ball_ascent(&prob, &[], opts);
    let states = sample_states(&x.shape, 8, opts.seed)?;
    for i in 0..states.len() {
        for j in (i + 1)..states.len() {
            let d = mk_distance(x, &states[i], &states[j], opts)?;
            if d.finite().map_or(false, |v| v > e.value) {
                e.value = d.value;
            }
        }
    }
    e.kind = BoundKind::Lower;
    Ok(e)
}

/// Lift supplying a known preimage in source coordinates for a target
/// element in self-adjoint coordinates.
pub type LiftFn<'a> = &'a (dyn Fn(&DVector<f64>) -> DVector<f64> + Sync);

/// Samples self-adjoint `b` in the target and compares the quotient of
/// `L_src` along `pi` with `L_dst(b)`. The margin recorded is
/// `-|quotient - L_dst(b)| / max(1, L_dst(b))`.
pub fn quantum_isometry_check(
    pi: &StarMorphism,
    src: &Qcms,
    dst: &Qcms,
    samples: usize,
    seed: u64,
    tol: f64,
    lift: Option<LiftFn<'_>>,
    opts: &SolverOpts,
) -> Result<CheckReport> {
    if pi.source() != &src.shape || pi.target() != &dst.shape {
        return Err(Error::Shape("morphism does not connect the given spaces".into()));
    }
    if !pi.is_surjective() {
        return Err(Error::Precondition("quantum isometry check needs a surjection".into()));
    }
    let mut rep = CheckReport::new("quantum isometry", tol);
    let mut rng = rng_from_seed(seed);
    for i in 0..samples {
        let b = test_element(&dst.shape, &mut rng, i).to_sa_coords();
        let target = dst.lip.eval(&b);
        let hints: Vec<DVector<f64>> = lift.map(|f| vec![f(&b)]).unwrap_or_default();
        let stop = target + 0.1 * tol * target.max(1.0);
        let q = fiber_infimum(&src.lip, pi.sa_map(), &b, &hints, Some(stop), &opts.with_seed(opts.seed ^ i as u64))?;
        let diff = (q.value - target).abs() / target.max(1.0);
        rep.record(-diff, || format!("sample {i}: quotient {:.6e} vs target {target:.6e}", q.value));
    }
    Ok(rep)
}

/// When every constraint of the Lip-ball is a real functional, returns the
/// rows, so that linear programs over the ball can be formed.
pub(crate) fn lp_rows(l: &Seminorm) -> Option<Vec<DVector<f64>>> {
    l.rank_one_rows()
}

/// Adds `|r . x| <= 1` for each row, with `x` at variable offset `off`.
pub(crate) fn add_ball(lp: &mut LinearProgram, rows: &[DVector<f64>], off: usize, radius: f64) {
    for r in rows {
        let terms: Vec<(usize, f64)> = r.iter().enumerate().map(|(i, &c)| (off + i, c)).collect();
        lp.le(&terms, radius);
        lp.ge(&terms, -radius);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::convex::wasserstein1;

    fn line(n: usize, h: f64) -> DMatrix<f64> {
        DMatrix::from_fn(n, n, |i, j| (i as f64 - j as f64).abs() * h)
    }

    #[test]
    fn mk_examples() {
        let opts = SolverOpts::default();
        let x = Qcms::metric_space("two", &line(2, 1.0), 1).unwrap();
        let s = &x.shape;
        let p = State::point_mass(s, 0).unwrap();
        let q = State::point_mass(s, 1).unwrap();
        assert_eq!(mk_distance(&x, &p, &p, &opts).unwrap().value, 0.0);
        let d = mk_distance(&x, &p, &q, &opts).unwrap();
        let w = wasserstein1(&p.probabilities(), &q.probabilities(), &line(2, 1.0)).unwrap();
        assert!((d.value - w.value).abs() < 1e-9 && (d.value - 1.0).abs() < 1e-9);
        let y = Qcms::metric_space("three", &line(3, 1.0), 1).unwrap();
        let p = State::point_mass(&y.shape, 0).unwrap();
        let q = State::point_mass(&y.shape, 2).unwrap();
        assert!((mk_distance(&y, &p, &q, &opts).unwrap().value - 2.0).abs() < 1e-9);
    }

    #[test]
    fn diameter_examples() {
        let opts = SolverOpts::default();
        let one = Qcms::metric_space("pt", &DMatrix::zeros(1, 1), 1).unwrap();
        assert_eq!(diameter(&one, &opts).unwrap().value, 0.0);
        let two = Qcms::metric_space("two", &line(2, 1.0), 1).unwrap();
        assert!((diameter(&two, &opts).unwrap().value - 1.0).abs() < 1e-9);
        let grid = Qcms::metric_space("grid", &line(9, 0.125), 1).unwrap();
        let d = diameter(&grid, &opts).unwrap();
        assert!((d.value - 1.0).abs() < 1e-9 && d.kind == BoundKind::Exact);
    }

    #[test]
    fn isometry_examples() {
        let opts = SolverOpts::default();
        let x = Qcms::metric_space("x", &line(4, 0.5), 1).unwrap();
        let id = StarMorphism::identity(&x.shape);
        assert!(quantum_isometry_check(&id, &x, &x, 20, 3, 1e-6, None, &opts).unwrap().pass);
        let doubled = Qcms::new("2x", x.shape.clone(), x.lip.scaled(2.0).unwrap(), PermissibleTriple::leibniz(), 50, 1).unwrap();
        assert!(!quantum_isometry_check(&id, &x, &doubled, 20, 3, 1e-6, None, &opts).unwrap().pass);
    }
}
