//! Numeric kernels over seminorm balls: support functions, optimal
//! transport, Minkowski gauges, fiber infima, ascent over balls and
//! Hausdorff-gap estimates.

use minilp::{ComparisonOp, OptimizationDirection, Problem};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::algebra::{random_real_vector, rng_from_seed, derive_seed};
use crate::error::{Error, Result};
use crate::estimate::{BoundKind, Estimate};
use crate::seminorm::{validate_metric, Seminorm};

/// Budgets for the iterative solvers.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverOpts {
    pub iterations: usize,
    pub restarts: usize,
    pub tol: f64,
    pub seed: u64,
}

impl Default for SolverOpts {
    fn default() -> Self {
        Self { iterations: 5000, restarts: 8, tol: 1e-6, seed: 0 }
    }
}

impl SolverOpts {
    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }

    pub fn with_iterations(self, iterations: usize) -> Self {
        Self { iterations, ..self }
    }
}

/// Sparse linear program `opt c.x` over free or bounded variables.
#[derive(Clone, Debug)]
pub struct LinearProgram {
    maximize: bool,
    objective: Vec<f64>,
    bounds: Vec<(f64, f64)>,
    rows: Vec<(Vec<(usize, f64)>, ComparisonOp, f64)>,
}

impl LinearProgram {
    pub fn maximize(objective: Vec<f64>) -> Self {
        let n = objective.len();
        Self { maximize: true, objective, bounds: vec![(f64::NEG_INFINITY, f64::INFINITY); n], rows: Vec::new() }
    }

    pub fn minimize(objective: Vec<f64>) -> Self {
        Self { maximize: false, ..Self::maximize(objective) }
    }

    pub fn set_bounds(&mut self, var: usize, lo: f64, hi: f64) {
        self.bounds[var] = (lo, hi);
    }

    fn push(&mut self, terms: &[(usize, f64)], op: ComparisonOp, rhs: f64) {
        let mut merged: Vec<(usize, f64)> = Vec::with_capacity(terms.len());
        for &(v, c) in terms {
            if c == 0.0 {
                continue;
            }
            match merged.iter_mut().find(|(w, _)| *w == v) {
                Some(t) => t.1 += c,
                None => merged.push((v, c)),
            }
        }
        self.rows.push((merged, op, rhs));
    }

    pub fn le(&mut self, terms: &[(usize, f64)], rhs: f64) {
        self.push(terms, ComparisonOp::Le, rhs);
    }

    pub fn ge(&mut self, terms: &[(usize, f64)], rhs: f64) {
        self.push(terms, ComparisonOp::Ge, rhs);
    }

    pub fn eq(&mut self, terms: &[(usize, f64)], rhs: f64) {
        self.push(terms, ComparisonOp::Eq, rhs);
    }

    /// Optimal value and solution.
    pub fn solve(&self) -> Result<(f64, Vec<f64>)> {
        let dir = if self.maximize { OptimizationDirection::Maximize } else { OptimizationDirection::Minimize };
        let mut p = Problem::new(dir);
        let vars: Vec<_> = self.objective.iter().zip(&self.bounds).map(|(&c, &b)| p.add_var(c, b)).collect();
        for (terms, op, rhs) in &self.rows {
            let expr: Vec<_> = terms.iter().map(|&(v, c)| (vars[v], c)).collect();
            p.add_constraint(expr.as_slice(), *op, *rhs);
        }
        let sol = p.solve().map_err(|e| Error::Infeasible(format!("linear program: {e}")))?;
        let x = vars.iter().map(|v| *sol.var_value(*v)).collect();
        Ok((sol.objective(), x))
    }
}

/// Orthonormal basis of the column span of `m`.
pub fn orthonormal_basis(m: &DMatrix<f64>) -> DMatrix<f64> {
    if m.ncols() == 0 {
        return DMatrix::zeros(m.nrows(), 0);
    }
    let mut cols: Vec<DVector<f64>> = Vec::new();
    for c in m.column_iter() {
        let mut v = c.into_owned();
        for _ in 0..2 {
            for q in &cols {
                let p = q.dot(&v);
                v -= q * p;
            }
        }
        let n = v.norm();
        if n > 1e-10 * (1.0 + c.norm()) {
            cols.push(v / n);
        }
    }
    if cols.is_empty() {
        DMatrix::zeros(m.nrows(), 0)
    } else {
        DMatrix::from_columns(&cols)
    }
}

fn project_out(q: &DMatrix<f64>, v: &DVector<f64>) -> DVector<f64> {
    if q.ncols() == 0 {
        v.clone()
    } else {
        v - q * (q.transpose() * v)
    }
}

/// Minimizes a convex function over `x0 + range(P)` where `P` is the
/// orthogonal projector given by `proj`.
///
/// Phase one runs short subgradient passes from seeded perturbations of the
/// start points; phase two restarts from the best point with geometrically
/// shrinking step sizes. Returns the best point seen, so the value is an
/// upper bound for the minimum.
pub(crate) fn minimize_affine<F, P>(f: F, starts: &[DVector<f64>], proj: P, opts: &SolverOpts, stop_at: Option<f64>) -> (f64, DVector<f64>, usize)
where
    F: Fn(&DVector<f64>) -> (f64, DVector<f64>),
    P: Fn(&DVector<f64>) -> DVector<f64>,
{
    let mut rng = rng_from_seed(opts.seed);
    let mut best_x = starts[0].clone();
    let mut best = f(&best_x).0;
    for s in &starts[1..] {
        let v = f(s).0;
        if v < best {
            best = v;
            best_x = s.clone();
        }
    }
    let done = |b: f64| stop_at.map_or(false, |t| b <= t);
    let mut iters = 0;
    if done(best) {
        return (best, best_x, iters);
    }
    let scale = best_x.norm().max(best.abs()).max(1e-3);
    let restarts = opts.restarts.max(1);
    let phase1 = (opts.iterations / (4 * restarts)).max(10);
    for r in 0..restarts {
        let mut x = if r < starts.len() {
            starts[r].clone()
        } else {
            let d = proj(&random_real_vector(best_x.len(), &mut rng));
            let n = d.norm();
            if n == 0.0 {
                best_x.clone()
            } else {
                &best_x + d * (0.5 * scale / n)
            }
        };
        let h0 = 0.3 * scale;
        for k in 0..phase1 {
            let (v, g) = f(&x);
            iters += 1;
            if v < best {
                best = v;
                best_x = x.clone();
                if done(best) {
                    return (best, best_x, iters);
                }
            }
            let g = proj(&g);
            let gn = g.norm();
            if gn < 1e-15 {
                break;
            }
            x -= g * (h0 / ((k + 1) as f64).sqrt() / gn);
        }
    }
    let mut h = 0.1 * scale;
    let stage_len = 100usize;
    while iters < opts.iterations && h > 1e-12 * scale {
        let mut x = best_x.clone();
        let before = best;
        for k in 0..stage_len {
            let (v, g) = f(&x);
            iters += 1;
            if v < best {
                best = v;
                best_x = x.clone();
                if done(best) {
                    return (best, best_x, iters);
                }
            }
            let g = proj(&g);
            let gn = g.norm();
            if gn < 1e-15 {
                break;
            }
            x -= g * (h / ((k + 1) as f64).sqrt() / gn);
        }
        if best > before - 1e-3 * opts.tol * before.abs().max(1e-12) {
            h *= 0.5;
        } else {
            h *= 0.8;
        }
    }
    (best, best_x, iters)
}

/// Returns `None` if `c` does not vanish on the kernel of `body`.
fn kernel_compatible(body: &Seminorm, c: &DVector<f64>) -> Option<DMatrix<f64>> {
    let k = orthonormal_basis(&body.kernel_basis());
    if k.ncols() > 0 && (k.transpose() * c).norm() > 1e-9 * (1.0 + c.norm()) {
        None
    } else {
        Some(k)
    }
}

/// `sup { c.v : S(v) <= 1 }`.
///
/// Exact through a linear program when `S` is a maximum of real
/// functionals. Otherwise the minimum of `S` on the hyperplane `c.v = 1` is
/// approached from above, and its reciprocal is a certified lower bound for
/// the support value (the best point, rescaled, is a feasible witness).
pub fn support_function(body: &Seminorm, c: &DVector<f64>, opts: &SolverOpts) -> Result<Estimate> {
    if c.len() != body.dim() {
        return Err(Error::Shape("functional and seminorm dimensions differ".into()));
    }
    let kernel = match kernel_compatible(body, c) {
        Some(k) => k,
        None => return Ok(Estimate::infinite()),
    };
    if c.norm() == 0.0 {
        return Ok(Estimate::exact(0.0));
    }
    if let Some(rows) = body.rank_one_rows() {
        return support_lp(&rows, &kernel, c);
    }
    support_descent(body, c, &kernel, opts)
}

fn support_lp(rows: &[DVector<f64>], kernel: &DMatrix<f64>, c: &DVector<f64>) -> Result<Estimate> {
    let n = c.len();
    let mut lp = LinearProgram::maximize(c.iter().cloned().collect());
    for r in rows {
        let terms: Vec<(usize, f64)> = r.iter().cloned().enumerate().collect();
        lp.le(&terms, 1.0);
        lp.ge(&terms, -1.0);
    }
    for k in kernel.column_iter() {
        let terms: Vec<(usize, f64)> = k.iter().cloned().enumerate().collect();
        lp.eq(&terms, 0.0);
    }
    match lp.solve() {
        Ok((v, x)) => Ok(Estimate::new(v, BoundKind::Exact, 1e-9, 1).with_certificate(x)),
        Err(_) => {
            // Unbounded: the atoms do not control some direction `c` sees.
            let _ = n;
            Ok(Estimate::infinite())
        }
    }
}

fn support_descent(body: &Seminorm, c: &DVector<f64>, kernel: &DMatrix<f64>, opts: &SolverOpts) -> Result<Estimate> {
    let mut span = DMatrix::zeros(c.len(), kernel.ncols() + 1);
    span.view_mut((0, 0), (c.len(), kernel.ncols())).copy_from(kernel);
    span.set_column(kernel.ncols(), c);
    let q = orthonormal_basis(&span);
    let x0 = project_out(kernel, c) / c.norm_squared();
    let proj = |v: &DVector<f64>| project_out(&q, v);
    let f = |v: &DVector<f64>| body.eval_with_subgradient(v);
    let (m, x, iters) = minimize_affine(f, &[x0], proj, opts, None);
    if !(m > 0.0) || !m.is_finite() {
        return Ok(Estimate::infinite());
    }
    let value = 1.0 / m;
    Ok(Estimate::lower(value, opts.tol * value, iters).with_certificate((x / m).iter().cloned().collect()))
}

/// Earth mover's distance by successive shortest paths on the transport
/// network. Exact up to floating point.
pub fn wasserstein1(mu: &[f64], nu: &[f64], dist: &DMatrix<f64>) -> Result<Estimate> {
    let n = mu.len();
    if nu.len() != n || dist.nrows() != n || dist.ncols() != n {
        return Err(Error::Shape("distribution and metric sizes differ".into()));
    }
    validate_metric(dist)?;
    for p in [mu, nu] {
        if p.iter().any(|&x| x < -1e-12) || (p.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Validation("inputs must be probability vectors".into()));
        }
    }
    // Nodes: 0 source, 1..=n supplies, n+1..=2n demands, 2n+1 sink.
    let nodes = 2 * n + 2;
    let (src, sink) = (0, 2 * n + 1);
    let mut edges: Vec<FlowEdge> = Vec::new();
    let mut adj = vec![Vec::new(); nodes];
    let mut add = |edges: &mut Vec<FlowEdge>, u: usize, v: usize, cap: f64, cost: f64| {
        adj[u].push(edges.len());
        edges.push(FlowEdge { to: v, cap, cost });
        adj[v].push(edges.len());
        edges.push(FlowEdge { to: u, cap: 0.0, cost: -cost });
    };
    for i in 0..n {
        add(&mut edges, src, 1 + i, mu[i].max(0.0), 0.0);
        add(&mut edges, 1 + n + i, sink, nu[i].max(0.0), 0.0);
        for j in 0..n {
            add(&mut edges, 1 + i, 1 + n + j, f64::INFINITY, dist[(i, j)]);
        }
    }
    let eps = 1e-15;
    let mut total = 0.0;
    let mut moved = 0.0;
    let mut rounds = 0;
    loop {
        // Bellman-Ford on the residual graph.
        let mut d = vec![f64::INFINITY; nodes];
        let mut prev = vec![usize::MAX; nodes];
        d[src] = 0.0;
        for _ in 0..nodes {
            let mut changed = false;
            for u in 0..nodes {
                if d[u] == f64::INFINITY {
                    continue;
                }
                for &e in &adj[u] {
                    let ed = &edges[e];
                    if ed.cap > eps && d[u] + ed.cost < d[ed.to] - 1e-15 {
                        d[ed.to] = d[u] + ed.cost;
                        prev[ed.to] = e;
                        changed = true;
                    }
                }
            }
            if !changed {
                break;
            }
        }
        if d[sink] == f64::INFINITY {
            break;
        }
        let mut push = f64::INFINITY;
        let mut v = sink;
        while v != src {
            let e = prev[v];
            push = push.min(edges[e].cap);
            v = edges[e ^ 1].to;
        }
        let mut v = sink;
        while v != src {
            let e = prev[v];
            edges[e].cap -= push;
            edges[e ^ 1].cap += push;
            v = edges[e ^ 1].to;
        }
        total += push * d[sink];
        moved += push;
        rounds += 1;
        if moved >= 1.0 - 1e-13 || rounds > 4 * n * n + 10 {
            break;
        }
    }
    Ok(Estimate::new(total, BoundKind::Exact, 1e-12, rounds))
}

struct FlowEdge {
    to: usize,
    cap: f64,
    cost: f64,
}

/// Outcome of a Minkowski gauge bisection.
pub fn minkowski_gauge<M>(membership: M, point: &DVector<f64>, tol: f64) -> Result<Estimate>
where
    M: Fn(&DVector<f64>) -> bool,
{
    if point.norm() == 0.0 {
        return Ok(Estimate::exact(0.0));
    }
    if !membership(&DVector::zeros(point.len())) {
        return Err(Error::Diagnostic("gauge set does not contain the origin".into()));
    }
    let inside = |t: f64| membership(&(point / t));
    let mut hi = 1.0;
    let mut iters = 0;
    while !inside(hi) {
        hi *= 2.0;
        iters += 1;
        if hi > 1e6 {
            return Ok(Estimate::infinite());
        }
    }
    let mut lo = hi / 2.0;
    while inside(lo) {
        hi = lo;
        lo /= 2.0;
        iters += 1;
        if lo < 1e-300 {
            return Ok(Estimate::exact(0.0));
        }
    }
    while hi - lo > tol * hi {
        let mid = 0.5 * (lo + hi);
        if inside(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
        iters += 1;
    }
    // Monotonicity along the ray: the set must contain point/t for t >= hi.
    for s in [1.0001, 1.01, 1.5, 3.0, 10.0] {
        if !inside(hi * s) {
            return Err(Error::Diagnostic(format!("membership oracle is not monotone along the ray at t = {}", hi * s)));
        }
    }
    Ok(Estimate::lower(lo, hi - lo, iters))
}

/// `inf { S(v) : P v = w }`.
///
/// Exact through a linear program when `S` is a maximum of real
/// functionals; otherwise descent from the least-squares fiber point and
/// from any supplied feasible `hints`, giving an upper bound. The descent
/// stops early once the value drops below `stop_at`.
pub fn fiber_infimum(
    s: &Seminorm,
    p: &DMatrix<f64>,
    w: &DVector<f64>,
    hints: &[DVector<f64>],
    stop_at: Option<f64>,
    opts: &SolverOpts,
) -> Result<Estimate> {
    if p.ncols() != s.dim() || p.nrows() != w.len() {
        return Err(Error::Shape("fiber constraint dimensions differ".into()));
    }
    let rank = p.rank(1e-9);
    if rank < p.nrows() {
        return Err(Error::Infeasible(format!("constraint map has rank {rank} < {}", p.nrows())));
    }
    let pinv = p.clone().pseudo_inverse(1e-12).map_err(|e| Error::Diagnostic(e.to_string()))?;
    let x0 = &pinv * w;
    if w.norm() == 0.0 {
        return Ok(Estimate::exact(0.0).with_certificate(vec![0.0; s.dim()]));
    }
    if let Some(rows) = s.rank_one_rows() {
        return fiber_lp(&rows, p, w);
    }
    let range = orthonormal_basis(&p.transpose());
    let proj = |v: &DVector<f64>| project_out(&range, v);
    let mut starts = vec![x0];
    for h in hints {
        if h.len() == s.dim() && (p * h - w).norm() <= 1e-8 * (1.0 + w.norm()) {
            starts.push(h.clone());
        }
    }
    let f = |v: &DVector<f64>| s.eval_with_subgradient(v);
    let (val, x, iters) = minimize_affine(f, &starts, proj, opts, stop_at);
    if !val.is_finite() {
        return Ok(Estimate::infinite());
    }
    Ok(Estimate::upper(val, opts.tol * (1.0 + val), iters).with_certificate(x.iter().cloned().collect()))
}

fn fiber_lp(rows: &[DVector<f64>], p: &DMatrix<f64>, w: &DVector<f64>) -> Result<Estimate> {
    let n = p.ncols();
    let mut obj = vec![0.0; n + 1];
    obj[n] = 1.0;
    let mut lp = LinearProgram::minimize(obj);
    for r in rows {
        let mut terms: Vec<(usize, f64)> = r.iter().cloned().enumerate().collect();
        terms.push((n, -1.0));
        lp.le(&terms, 0.0);
        let mut terms: Vec<(usize, f64)> = r.iter().cloned().enumerate().collect();
        terms.push((n, 1.0));
        lp.ge(&terms, 0.0);
    }
    for (i, row) in p.row_iter().enumerate() {
        let terms: Vec<(usize, f64)> = row.iter().cloned().enumerate().collect();
        lp.eq(&terms, w[i]);
    }
    let (v, x) = lp.solve()?;
    Ok(Estimate::new(v.max(0.0), BoundKind::Exact, 1e-9, 1).with_certificate(x[..n].to_vec()))
}

/// A maximization over the unit ball `{S <= 1}`.
pub struct Ascent<'a> {
    pub ball: &'a Seminorm,
    /// Objective value and a (super)gradient.
    pub objective: &'a (dyn Fn(&DVector<f64>) -> (f64, DVector<f64>) + Sync),
    /// Directions along which the objective is constant; steps are kept
    /// orthogonal to them.
    pub flat: Option<DMatrix<f64>>,
    /// Rescale iterates onto the boundary `S = 1` (for objectives that grow
    /// along rays).
    pub to_boundary: bool,
}

/// Best objective value found at feasible points; always a lower bound for
/// the supremum. The certificate is the maximizing point.
pub fn ball_ascent(problem: &Ascent<'_>, starts: &[DVector<f64>], opts: &SolverOpts) -> Estimate {
    let dim = problem.ball.dim();
    let flat = problem.flat.as_ref().map(orthonormal_basis).unwrap_or_else(|| DMatrix::zeros(dim, 0));
    let retract = |v: DVector<f64>| -> Option<DVector<f64>> {
        let s = problem.ball.eval(&v);
        if !s.is_finite() {
            return None;
        }
        if problem.to_boundary {
            if s > 0.0 {
                Some(v / s)
            } else {
                None
            }
        } else if s > 1.0 {
            Some(v / s)
        } else {
            Some(v)
        }
    };
    let mut rng = rng_from_seed(derive_seed(opts.seed, 0xA5));
    let mut best = f64::NEG_INFINITY;
    let mut best_x = DVector::zeros(dim);
    let mut iters = 0;
    let mut pool: Vec<DVector<f64>> = starts.iter().filter_map(|s| retract(project_out(&flat, s))).collect();
    while pool.len() < opts.restarts.max(1) {
        if let Some(v) = retract(project_out(&flat, &random_real_vector(dim, &mut rng))) {
            pool.push(v);
        } else {
            break;
        }
    }
    if pool.is_empty() {
        return Estimate::lower((problem.objective)(&DVector::zeros(dim)).0, 0.0, 0);
    }
    let per_start = (opts.iterations / (2 * pool.len())).max(20);
    for x0 in &pool {
        let mut x = x0.clone();
        let mut fx = (problem.objective)(&x).0;
        let mut h = 0.5 * x.norm().max(1e-3);
        for _ in 0..per_start {
            iters += 1;
            if fx > best {
                best = fx;
                best_x = x.clone();
            }
            let g = project_out(&flat, &(problem.objective)(&x).1);
            let gn = g.norm();
            if gn < 1e-15 || h < 1e-10 * x.norm().max(1e-6) {
                break;
            }
            let cand = match retract(&x + &g * (h / gn)) {
                Some(c) => c,
                None => break,
            };
            let fc = (problem.objective)(&cand).0;
            if fc > fx {
                x = cand;
                fx = fc;
                h *= 1.3;
            } else {
                h *= 0.5;
            }
        }
        if fx > best {
            best = fx;
            best_x = x.clone();
        }
    }
    // Polish the best point with random directions, which helps at kinks
    // where the supergradient is not an ascent direction.
    let mut h = 0.1 * best_x.norm().max(1e-3);
    let polish = opts.iterations / 2;
    for _ in 0..polish {
        if h < 1e-9 * best_x.norm().max(1e-6) {
            break;
        }
        iters += 1;
        let d = project_out(&flat, &random_real_vector(dim, &mut rng));
        let dn = d.norm();
        if dn == 0.0 {
            break;
        }
        let mut improved = false;
        for sign in [1.0, -1.0] {
            if let Some(c) = retract(&best_x + &d * (sign * h / dn)) {
                let fc = (problem.objective)(&c).0;
                if fc > best {
                    best = fc;
                    best_x = c;
                    improved = true;
                    break;
                }
            }
        }
        h *= if improved { 1.2 } else { 0.97 };
    }
    Estimate::lower(best, opts.tol * (1.0 + best.abs()), iters).with_certificate(best_x.iter().cloned().collect())
}

/// `max_i inf_{q in Q} m(p_i, q)` given per-sample inf estimates. Exact
/// when `exhaustive` (the samples are all the extreme points and the
/// distance map is convex) and every inf estimate is exact; otherwise a
/// lower bound.
pub fn hausdorff_gap(estimates: &[Estimate], exhaustive: bool) -> Estimate {
    let mut best = Estimate::exact(0.0);
    let mut kind_exact = exhaustive;
    let mut iters = 0;
    for e in estimates {
        if e.infinite {
            return Estimate::infinite();
        }
        iters += e.iterations;
        kind_exact &= e.kind == BoundKind::Exact;
        if e.value > best.value {
            best = e.clone();
        }
    }
    let kind = if kind_exact { BoundKind::Exact } else { BoundKind::Lower };
    Estimate { kind, iterations: iters, tol: estimates.iter().map(|e| e.tol).fold(0.0, f64::max), ..best }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seminorm::{lipschitz, Atom};
    use rand::Rng;

    fn abs_norm(n: usize) -> Seminorm {
        let atoms = (0..n)
            .map(|i| {
                let mut r = DVector::zeros(n);
                r[i] = 1.0;
                Atom::functional(1.0, &r).unwrap()
            })
            .collect();
        Seminorm::from_atoms(n, atoms).unwrap()
    }

    #[test]
    fn support_examples() {
        let body = abs_norm(1);
        let e = support_function(&body, &DVector::from_vec(vec![1.0]), &SolverOpts::default()).unwrap();
        assert!((e.value - 1.0).abs() < 1e-9 && e.kind == BoundKind::Exact);
        let e = support_function(&body, &DVector::zeros(1), &SolverOpts::default()).unwrap();
        assert_eq!(e.value, 0.0);
        let l = lipschitz(&DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0])).unwrap();
        let e = support_function(&l, &DVector::from_vec(vec![1.0, -1.0]), &SolverOpts::default()).unwrap();
        assert!((e.value - 1.0).abs() < 1e-9);
        // Functional not vanishing on constants.
        let e = support_function(&l, &DVector::from_vec(vec![1.0, 0.0]), &SolverOpts::default()).unwrap();
        assert!(e.infinite);
    }

    #[test]
    fn wasserstein_examples() {
        let d = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        assert!(wasserstein1(&[0.5, 0.5], &[0.5, 0.5], &d).unwrap().value.abs() < 1e-15);
        assert!((wasserstein1(&[1.0, 0.0], &[0.0, 1.0], &d).unwrap().value - 1.0).abs() < 1e-15);
        assert!((wasserstein1(&[0.5, 0.5], &[1.0, 0.0], &d).unwrap().value - 0.5).abs() < 1e-15);
        let line = DMatrix::from_fn(3, 3, |i, j| (i as f64 - j as f64).abs());
        assert!((wasserstein1(&[1.0, 0.0, 0.0], &[0.0, 0.0, 1.0], &line).unwrap().value - 2.0).abs() < 1e-15);
    }

    #[test]
    fn gauge_examples() {
        // Unit ball of max(|x|, |y|).
        let member = |v: &DVector<f64>| v.amax() <= 1.0;
        assert_eq!(minkowski_gauge(member, &DVector::zeros(2), 1e-6).unwrap().value, 0.0);
        let b = DVector::from_vec(vec![1.0, 0.3]);
        let g1 = minkowski_gauge(member, &b, 1e-6).unwrap();
        assert!((g1.value - 1.0).abs() <= 1e-6);
        let g2 = minkowski_gauge(member, &(&b * 2.0), 1e-6).unwrap();
        assert!((g2.value - 2.0).abs() <= 2e-6);
        let bounded = |v: &DVector<f64>| v[0].abs() <= 1.0;
        assert!(minkowski_gauge(bounded, &DVector::from_vec(vec![0.0, 1.0]), 1e-6).unwrap().value < 1e-6);
        let weird = |v: &DVector<f64>| v.amax() <= 1.0 && !(v.amax() > 0.3 && v.amax() < 0.5);
        assert!(minkowski_gauge(weird, &DVector::from_vec(vec![1.0, 0.0]), 1e-6).is_err());
    }

    #[test]
    fn fiber_examples() {
        let s = abs_norm(2);
        let sum = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        let w = DVector::from_vec(vec![2.0]);
        let e = fiber_infimum(&s, &sum, &w, &[], None, &SolverOpts::default()).unwrap();
        // Oracle: brute force over the line v1 + v2 = 2.
        let brute = (0..=4000)
            .map(|i| {
                let v1 = -2.0 + i as f64 * 0.0015;
                v1.abs().max((2.0 - v1).abs())
            })
            .fold(f64::INFINITY, f64::min);
        assert!((e.value - brute).abs() < 1e-6 && (e.value - 1.0).abs() < 1e-9);
        let id = DMatrix::identity(2, 2);
        let w = DVector::from_vec(vec![0.3, -0.7]);
        assert!((fiber_infimum(&s, &id, &w, &[], None, &SolverOpts::default()).unwrap().value - 0.7).abs() < 1e-9);
        assert_eq!(fiber_infimum(&s, &sum, &DVector::zeros(1), &[], None, &SolverOpts::default()).unwrap().value, 0.0);
        let rank_deficient = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(fiber_infimum(&s, &rank_deficient, &w, &[], None, &SolverOpts::default()).is_err());
    }

    #[test]
    fn fiber_descent_matches_lp() {
        // Euclidean norm per coordinate pair forces the descent path.
        let mut map = DMatrix::zeros(4, 3);
        map[(0, 0)] = 1.0;
        map[(1, 1)] = 1.0;
        map[(2, 1)] = 1.0;
        map[(3, 2)] = 2.0;
        let s = Seminorm::from_atoms(3, vec![Atom::new(1.0, map, vec![(1, 2)]).unwrap()]).unwrap();
        let p = DMatrix::from_row_slice(1, 3, &[1.0, -1.0, 1.0]);
        let e = fiber_infimum(&s, &p, &DVector::from_vec(vec![1.0]), &[], None, &SolverOpts::default()).unwrap();
        // Oracle: min sqrt(x^2 + 2y^2 + 4z^2) on a.v = 1 is 1 / sqrt(a^T Q^-1 a).
        let exact = 1.0 / (1.0f64 + 0.5 + 0.25).sqrt();
        assert!(e.kind == BoundKind::Upper && e.value >= exact - 1e-9 && e.value - exact < 1e-6, "{e}");
    }

    #[test]
    fn descent_support_agrees_with_lp() {
        let mut rng = rng_from_seed(3);
        let d = DMatrix::from_fn(4, 4, |i, j| (i as f64 - j as f64).abs());
        let l = lipschitz(&d).unwrap();
        let k = orthonormal_basis(&l.kernel_basis());
        for _ in 0..10 {
            let c = project_out(&k, &DVector::from_fn(4, |_, _| rng.gen_range(-1.0..1.0)));
            let exact = support_function(&l, &c, &SolverOpts::default()).unwrap();
            let approx = support_descent(&l, &c, &k, &SolverOpts::default()).unwrap();
            assert!(approx.value <= exact.value + 1e-9);
            assert!((approx.value - exact.value).abs() < 1e-4, "{} vs {}", approx.value, exact.value);
        }
    }

    #[test]
    fn ascent_finds_norm_of_functional() {
        // sup of |c.v| over the L-ball is the support value.
        let d = DMatrix::from_fn(3, 3, |i, j| (i as f64 - j as f64).abs() * 0.5);
        let l = lipschitz(&d).unwrap();
        let c = DVector::from_vec(vec![1.0, 0.0, -1.0]);
        let obj = |v: &DVector<f64>| {
            let s = c.dot(v);
            (s.abs(), &c * s.signum())
        };
        let prob = Ascent { ball: &l, objective: &obj, flat: Some(l.kernel_basis()), to_boundary: true };
        let e = ball_ascent(&prob, &[], &SolverOpts::default());
        assert!((e.value - 1.0).abs() < 1e-6, "{e}");
    }

    #[test]
    fn hausdorff_examples() {
        assert_eq!(hausdorff_gap(&[Estimate::exact(0.0)], true).value, 0.0);
        let e = hausdorff_gap(&[Estimate::exact(0.2), Estimate::exact(0.5)], true);
        assert!(e.value == 0.5 && e.kind == BoundKind::Exact);
        assert_eq!(hausdorff_gap(&[Estimate::exact(0.5)], false).kind, BoundKind::Lower);
    }
}
