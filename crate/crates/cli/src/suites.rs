//! Property suites over generated instances, reported as records.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use std::sync::Arc;

use proplab_core::algebra::{derive_seed, rng_from_seed, AlgebraShape};
use proplab_core::bundle::{dnorm_validate, qvba};
use proplab_core::estimate::{CheckReport, Estimate};
use proplab_core::metrical::{compose_metrical, metrical_extent, scalar_metrical, scalar_metrical_tunnel, METRICAL_SAMPLES};
use proplab_core::modular::{
    free_module_figure, free_module_gamma, free_module_tunnel, modular_tunnel_from_bridge, module_target_checks, BridgeTunnelOpts, ModularBridge,
};
use proplab_core::qcms::tunnel::{compose_tunnels, propinquity_ub, target_set_diameter_check, tunnel_from_bridge, CheckBudget, Tunnel};
use proplab_core::qcms::{Bridge, Qcms};
use proplab_core::seminorm::{kernel_check, lipschitz, quasi_leibniz_check};
use proplab_core::{Error, Result};

use crate::instances::{dyadic_bridge, dyadic_grid, line, matrix_dirac, random_bridge, random_metric, union_tunnel, unit_anchors};
use crate::report::{Record, Report};

pub const SUITES: [&str; 6] = ["axioms", "bridges", "tunnels", "modular", "metrical", "chains"];

/// Record of a sampled check: the value is the worst violation and the
/// bound is zero.
pub fn check_record(item: &str, rep: &CheckReport) -> Record {
    let violation = if rep.samples == 0 && !rep.pass { f64::INFINITY } else { (-rep.worst_margin).max(0.0) };
    let e = Estimate::lower(violation, 0.0, rep.samples);
    let mut r = Record::from_estimate(item, &rep.name, &e, rep.tol);
    r.paper_bound = Some(0.0);
    r.pass = Some(rep.pass);
    if let Some(w) = &rep.witness {
        r.witnesses.push(w.clone());
    }
    r
}

/// Record of `value <= bound` at tolerance `tol`.
pub fn bound_record(item: &str, quantity: &str, e: &Estimate, bound: f64, tol: f64) -> Record {
    let mut r = Record::from_estimate(item, quantity, e, 0.0);
    r.tolerance = tol;
    r.bounded_by(bound)
}

/// Lip-norm of a line whose last coordinate is ignored: its kernel is two
/// dimensional and misses the unit.
fn tampered_lip(n: usize) -> Result<proplab_core::seminorm::Seminorm> {
    let lip = lipschitz(&line(n, 1.0))?;
    let p = DMatrix::from_fn(n, n, |i, j| if i == j && i + 1 < n { 1.0 } else { 0.0 });
    lip.pullback(&p)
}

fn axioms(seed: u64) -> Result<Vec<Record>> {
    let mut out = Vec::new();
    let mut rng = rng_from_seed(seed);
    let spaces = vec![
        Qcms::metric_space("line3", &line(3, 0.5), seed)?,
        Qcms::metric_space("random6", &random_metric(6, &mut rng), derive_seed(seed, 1))?,
        matrix_dirac("M", 1.0)?,
    ];
    for (k, x) in spaces.iter().enumerate() {
        let kr = kernel_check(&x.lip, &x.shape);
        let mut rep = CheckReport::new("kernel is the scalars", 0.0);
        rep.record(if kr.pass { 0.0 } else { -1.0 }, || format!("kernel dimension {}", kr.kernel_dim));
        out.push(check_record(&x.name, &rep));
        out.push(check_record(&x.name, &quasi_leibniz_check(&x.lip, &x.triple, &x.shape, 500, derive_seed(seed, 10 + k as u64))));
        for r in x.triple.validate() {
            out.push(check_record(&x.name, &r));
        }
    }
    for (k, (x, p)) in [(&spaces[0], 2), (&spaces[2], 1)].into_iter().enumerate() {
        let b = qvba(x.clone(), p, derive_seed(seed, 20 + k as u64))?;
        out.push(check_record(&b.name, &b.module.axioms_check(500, derive_seed(seed, 30 + k as u64))));
        let d = dnorm_validate(&b, 500, derive_seed(seed, 40 + k as u64));
        for r in [&d.dominates, &d.positive, &d.inner_leibniz] {
            out.push(check_record(&b.name, r));
        }
    }
    let lip = tampered_lip(4)?;
    let shape = AlgebraShape::commutative(4);
    let kr = kernel_check(&lip, &shape);
    let rejected = Qcms::new("tampered", shape, lip, spaces[0].triple.clone(), 50, seed).is_err();
    let mut rep = CheckReport::new("tampered seminorm is flagged", 0.0);
    rep.record(if !kr.pass && rejected { 0.0 } else { -1.0 }, || format!("kernel check passed with dimension {}", kr.kernel_dim));
    out.push(check_record("tampered", &rep));
    Ok(out)
}

fn bridges(seed: u64) -> Result<Vec<Record>> {
    let mut out = Vec::new();
    let budget = CheckBudget { seed, ..CheckBudget::default() };
    for k in 0..8 {
        let s = derive_seed(seed, k);
        let br = Arc::new(random_bridge(s, 6)?);
        let item = format!("bridge{k}");
        let st = br.stats(&budget.opts)?;
        let mut rep = CheckReport::new("length is the larger of height and reach", 1e-9);
        let len = st.height.value.max(st.reach.value);
        rep.record(-(st.length.value - len).abs(), || format!("length {} vs {len}", st.length.value));
        rep.record(st.height.value.min(st.reach.value), || "negative height or reach".into());
        out.push(check_record(&item, &rep));
        let lambda = st.length.value + 1e-6;
        let t = tunnel_from_bridge(br, lambda, Some(&st), true, &CheckBudget { seed: s, ..budget })?;
        out.push(bound_record(&item, "extent", &t.extent(&budget.opts)?, lambda, 1e-3));
        out.push(check_record(&item, &t.pivot.report.quasi_leibniz));
        for r in &t.isometry {
            out.push(check_record(&item, r));
        }
    }
    Ok(out)
}

/// Three random spaces with correspondence bridges `X -> Y -> Z`.
pub fn chain3(seed: u64, max_points: usize, budget: &CheckBudget) -> Result<(Arc<Tunnel>, Arc<Tunnel>)> {
    let mut rng = rng_from_seed(seed);
    let mut spaces = Vec::new();
    for k in 0..3 {
        let n = rng.gen_range(2..=max_points);
        spaces.push(Qcms::metric_space(format!("C{seed}_{k}"), &random_metric(n, &mut rng), derive_seed(seed, k))?);
    }
    let mut tunnels = Vec::new();
    for k in 0..2 {
        let (a, b) = (spaces[k].clone(), spaces[k + 1].clone());
        let pairs = crate::instances::random_relation(a.shape.num_blocks(), b.shape.num_blocks(), &mut rng);
        let br = Arc::new(Bridge::correspondence(a, b, &pairs)?);
        let st = br.stats(&budget.opts)?;
        tunnels.push(Arc::new(tunnel_from_bridge(br, st.length.value + 1e-6, Some(&st), true, budget)?));
    }
    Ok((tunnels[0].clone(), tunnels[1].clone()))
}

fn tunnels(seed: u64) -> Result<Vec<Record>> {
    let mut out = Vec::new();
    let budget = CheckBudget { seed, ..CheckBudget::default() };
    for k in 0..8 {
        let (t, oracle) = union_tunnel(derive_seed(seed, k), 5, &budget)?;
        let e = t.extent(&budget.opts)?;
        let err = Estimate::new((e.value - oracle).abs(), e.kind, e.tol, e.iterations);
        out.push(bound_record(&format!("union{k}"), "extent error against the closed form", &err, 0.0, 1e-6));
        let inv = t.invert().extent(&budget.opts)?;
        let gap = Estimate::new((inv.value - e.value).abs(), e.kind, e.tol, 0);
        out.push(bound_record(&format!("union{k}"), "extent asymmetry under inversion", &gap, 0.0, 1e-6));
    }
    for k in 0..4 {
        let (t1, t2) = chain3(derive_seed(seed, 100 + k), 4, &budget)?;
        let eps = 0.01;
        let c = compose_tunnels(t1.clone(), t2.clone(), eps, &budget)?;
        let item = format!("compose{k}");
        out.push(bound_record(&item, "composite extent", &c.extent(&budget.opts)?, t1.figure + t2.figure + eps, 1e-3));
        let (p, _) = propinquity_ub(&t1.domain, &t2.codomain, &[&c])?;
        out.push(bound_record(&item, "propinquity upper bound", &p, t1.figure + t2.figure + eps, 1e-12));
        out.push(check_record(&item, &c.pivot.report.quasi_leibniz));
    }
    Ok(out)
}

fn modular(seed: u64) -> Result<Vec<Record>> {
    let mut out = Vec::new();
    let budget = CheckBudget { seed, ..CheckBudget::default() };
    for k in 0..4 {
        let s = derive_seed(seed, k);
        let br = Arc::new(random_bridge(s, 4)?);
        let p = 1 + (k as usize % 2);
        let a = qvba(br.first.clone(), p, derive_seed(s, 1))?;
        let b = qvba(br.second.clone(), p, derive_seed(s, 2))?;
        let (an, co) = unit_anchors(&a, &b)?;
        let mb = Arc::new(ModularBridge::new(br, a, b, an, co)?.convexify());
        let o = BridgeTunnelOpts { imprint_samples: 100, ..BridgeTunnelOpts::default() };
        let t = modular_tunnel_from_bridge(mb, &o, &CheckBudget { seed: s, ..budget })?;
        let item = format!("modular{k}");
        let d = dnorm_validate(&t.pivot, 500, derive_seed(s, 3));
        for r in [&d.dominates, &d.positive, &d.inner_leibniz] {
            out.push(check_record(&item, r));
        }
        for r in &t.isometry {
            out.push(check_record(&item, r));
        }
        out.push(bound_record(&item, "modular extent", &t.extent(&budget.opts)?, t.figure, 1e-3));
        let mut rng = rng_from_seed(derive_seed(s, 4));
        let dom = &t.domain.module;
        let w = dom.to_coords(&dom.sample(&mut rng, 0));
        let w2 = dom.to_coords(&dom.sample(&mut rng, 1));
        let l = t.domain.dnorm.eval(&w).max(t.domain.dnorm.eval(&w2)).max(1e-9);
        let tr = module_target_checks(&t, &w, &w2, proplab_core::algebra::C64::new(0.5, -0.25), l, 3, derive_seed(s, 5), 1e-3, &budget.opts)?;
        for r in [&tr.diameter_figure, &tr.combination, &tr.coherence_figure] {
            out.push(check_record(&item, r));
        }
    }
    let x = Qcms::metric_space("fx", &line(2, 1.0), seed)?;
    let y = Qcms::metric_space("fy", &line(2, 1.05), seed + 1)?;
    let br = Arc::new(Bridge::correspondence(x, y, &[(0, 0), (1, 1)])?);
    let st = br.stats(&budget.opts)?;
    let base = Arc::new(tunnel_from_bridge(br, st.length.value + 1e-6, Some(&st), true, &budget)?);
    for p in 1..=2 {
        let t = free_module_tunnel(base.clone(), p, &budget)?;
        let g = free_module_gamma(&base.domain.triple.f, p, base.figure);
        let err = Estimate::exact((t.figure - free_module_figure(g, base.figure)).abs());
        out.push(bound_record(&format!("free{p}"), "figure error", &err, 0.0, 1e-12));
        for r in &t.isometry {
            out.push(check_record(&format!("free{p}"), r));
        }
    }
    Ok(out)
}

fn metrical(seed: u64) -> Result<Vec<Record>> {
    let mut out = Vec::new();
    let budget = CheckBudget { seed, ..CheckBudget::default() };
    let xs: Vec<Arc<Qcms>> = [1.0, 1.05, 1.1].iter().enumerate().map(|(k, h)| Qcms::metric_space(format!("m{k}"), &line(2, *h), seed + k as u64)).collect::<Result<_>>()?;
    let mut met = Vec::new();
    for (k, x) in xs.iter().enumerate() {
        met.push(scalar_metrical(qvba(x.clone(), 1, derive_seed(seed, k as u64))?, METRICAL_SAMPLES, derive_seed(seed, 10 + k as u64))?);
    }
    let mut ts = Vec::new();
    for k in 0..2 {
        let br = Arc::new(Bridge::correspondence(xs[k].clone(), xs[k + 1].clone(), &[(0, 0), (1, 1)])?);
        let st = br.stats(&budget.opts)?;
        let base = Arc::new(tunnel_from_bridge(br, st.length.value + 1e-6, Some(&st), true, &budget)?);
        let m = Arc::new(free_module_tunnel(base, 1, &budget)?);
        ts.push(scalar_metrical_tunnel(m, met[k].clone(), met[k + 1].clone(), METRICAL_SAMPLES, derive_seed(seed, 20 + k as u64))?);
    }
    let eps = 0.01;
    let c = compose_metrical(&ts[0], &ts[1], eps, &budget, METRICAL_SAMPLES)?;
    for (item, t) in [("metrical0", &ts[0]), ("metrical1", &ts[1]), ("composite", &c)] {
        out.push(check_record(item, &t.g_report.dnorm_slot));
        out.push(check_record(item, &t.action_report));
        out.push(check_record(item, &t.law_report));
    }
    let fig = Estimate::upper(c.figure, 0.0, 0);
    out.push(bound_record("composite", "metrical figure", &fig, ts[0].figure + ts[1].figure + eps, 1e-12));
    out.push(bound_record("composite", "metrical extent", &metrical_extent(&c, &budget.opts)?, c.figure, 1e-3));
    Ok(out)
}

/// Tunnels between consecutive dyadic grids and their composites.
pub fn dyadic_chain(levels: u32, budget: &CheckBudget) -> Result<(Vec<Arc<Qcms>>, Vec<Arc<Tunnel>>)> {
    let grids: Vec<Arc<Qcms>> = (0..=levels).map(dyadic_grid).collect::<Result<_>>()?;
    let mut ts = Vec::new();
    for n in 0..levels as usize {
        let br = Arc::new(dyadic_bridge(grids[n].clone(), grids[n + 1].clone())?);
        let st = br.stats(&budget.opts)?;
        ts.push(Arc::new(tunnel_from_bridge(br, st.length.value + 1e-9, Some(&st), true, budget)?));
    }
    Ok((grids, ts))
}

/// Composition slack used at stage `k` of a chain.
pub fn chain_epsilon(k: usize) -> f64 {
    1e-3 * 0.5f64.powi(k as i32)
}

fn chains(seed: u64) -> Result<Vec<Record>> {
    let mut out = Vec::new();
    let budget = CheckBudget { seed, ..CheckBudget::default() };
    let levels = 4;
    let (_, ts) = dyadic_chain(levels, &budget)?;
    for (n, t) in ts.iter().enumerate() {
        let scaled = Estimate::upper(t.figure * 2f64.powi(n as i32), 0.0, 0);
        out.push(bound_record(&format!("X{n}-X{}", n + 1), "bound times 2^n", &scaled, 1.0, 1e-9));
    }
    for n in 0..ts.len() {
        let mut acc = ts[n].clone();
        let mut sum = ts[n].figure;
        for m in n + 1..ts.len() {
            let eps = chain_epsilon(m);
            acc = Arc::new(compose_tunnels(acc, ts[m].clone(), eps, &budget)?);
            sum += ts[m].figure + eps;
            let (p, _) = propinquity_ub(&acc.domain, &acc.codomain, &[&acc])?;
            out.push(bound_record(&format!("X{n}-X{}", m + 1), "chained bound", &p, sum, 1e-12));
            if m == n + 1 {
                out.push(bound_record(&format!("X{n}-X{}", m + 1), "composite extent", &acc.extent(&budget.opts)?, sum, 1e-3));
            }
        }
    }
    Ok(out)
}

/// Runs a named suite.
pub fn verify_suite(name: &str, seed: u64) -> Result<Report> {
    let records = match name {
        "axioms" => axioms(seed)?,
        "bridges" => bridges(seed)?,
        "tunnels" => tunnels(seed)?,
        "modular" => modular(seed)?,
        "metrical" => metrical(seed)?,
        "chains" => chains(seed)?,
        _ => return Err(Error::Precondition(format!("unknown suite {name:?}; expected one of {}", SUITES.join(", ")))),
    };
    Ok(Report::new(seed, records))
}

/// Target-set diameter records for a base tunnel and an element `a` of its
/// domain.
pub fn target_records(item: &str, t: &Tunnel, a: &DVector<f64>, l: f64, seed: u64, budget: &CheckBudget) -> Result<Vec<Record>> {
    let r = target_set_diameter_check(t, a, l, 4, seed, 1e-3, &budget.opts)?;
    Ok(vec![check_record(item, &r.with_figure), check_record(item, &r.with_extent)])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tampered_fixture_is_flagged() {
        let recs = axioms(3).unwrap();
        let t = recs.iter().find(|r| r.task_id == "tampered").unwrap();
        assert_eq!(t.pass, Some(true));
    }

    #[test]
    fn unknown_suite_is_an_error() {
        assert!(verify_suite("nope", 0).is_err());
    }
}
