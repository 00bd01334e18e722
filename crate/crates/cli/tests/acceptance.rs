//! Acceptance criteria, one PASS/FAIL line each. Runs without the test
//! harness so the lines are always printed.

use anyhow::{anyhow, Result};
use nalgebra::DVector;
use rand::Rng;
use std::sync::Arc;
use std::time::Instant;

use proplab::gallery::{bundle_pairs, gallery, GALLERY};
use proplab::instances::{line, random_bridge, random_metric, union_tunnel, unit_anchors};
use proplab::scenario::World;
use proplab::suites::{chain3, chain_epsilon, dyadic_chain};
use proplab_core::algebra::{derive_seed, rng_from_seed, State, C64};
use proplab_core::bundle::{dnorm_validate, modular_isometry_check, qvba, quotient_bundle, Mqvb};
use proplab_core::convex::wasserstein1;
use proplab_core::estimate::{BoundKind, CheckReport};
use proplab_core::metrical::{
    compose_metrical, make_metrical, metrical_extent, multiplication_metrical_tunnel, scalar_metrical, scalar_metrical_tunnel, MetricalTunnel,
    ModuleAction, METRICAL_SAMPLES,
};
use proplab_core::modular::{dual_modular_propinquity_ub, free_module_tunnel, modular_tunnel_from_bridge, module_target_checks, BridgeTunnelOpts, ModularBridge, ModularTunnel};
use proplab_core::qcms::tunnel::{compose_tunnels, propinquity_ub, target_set_diameter_check, tunnel_from_bridge, CheckBudget, Tunnel};
use proplab_core::qcms::{diameter, mk_distance, Bridge, Qcms};
use proplab_core::seminorm::{quasi_leibniz_check, PermissibleTriple};

const SEED: u64 = 20_240_611;

/// Construction outputs collected for the final quasi-Leibniz sweep.
#[derive(Default)]
struct Built {
    tunnels: Vec<Arc<Tunnel>>,
    modular: Vec<Arc<ModularTunnel>>,
    metrical: Vec<Arc<MetricalTunnel>>,
}

fn budget(seed: u64) -> CheckBudget {
    CheckBudget { seed, ..CheckBudget::default() }
}

fn random_probabilities<R: Rng>(n: usize, rng: &mut R) -> Vec<f64> {
    if rng.gen_bool(0.2) {
        let mut p = vec![0.0; n];
        p[rng.gen_range(0..n)] = 1.0;
        return p;
    }
    let w: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0f64).powi(2)).collect();
    let s: f64 = w.iter().sum();
    w.iter().map(|x| x / s).collect()
}

fn c1_mk_oracle() -> Result<(bool, String)> {
    let mut rng = rng_from_seed(SEED);
    let mut worst: f64 = 0.0;
    for k in 0..50 {
        let n = rng.gen_range(2..=12);
        let d = random_metric(n, &mut rng);
        let x = Qcms::metric_space(format!("W{k}"), &d, derive_seed(SEED, k))?;
        let p = random_probabilities(n, &mut rng);
        let q = random_probabilities(n, &mut rng);
        let mk = mk_distance(&x, &State::from_probabilities(&p)?, &State::from_probabilities(&q)?, &budget(k).opts)?;
        let w = wasserstein1(&p, &q, &d)?;
        worst = worst.max((mk.value - w.value).abs());
    }
    Ok((worst <= 1e-6, format!("50 pairs, worst |mk - W1| = {worst:.2e}")))
}

fn c2_extent_closed_form(built: &mut Built) -> Result<(bool, String)> {
    let mut worst: f64 = 0.0;
    let mut exact = true;
    for k in 0..20 {
        let b = budget(derive_seed(SEED, 200 + k));
        let (t, oracle) = union_tunnel(derive_seed(SEED, 200 + k), 6, &b)?;
        let e = t.extent(&b.opts)?;
        exact &= e.kind == BoundKind::Exact;
        worst = worst.max((e.value - oracle).abs());
        built.tunnels.push(Arc::new(t));
    }
    Ok((worst <= 1e-6 && exact, format!("20 tunnels, worst |extent - closed form| = {worst:.2e}, all exact: {exact}")))
}

fn c3_bridge_bound(built: &mut Built) -> Result<(bool, String)> {
    let mut worst = f64::NEG_INFINITY;
    let mut rng = rng_from_seed(SEED + 3);
    for k in 0..20 {
        let s = derive_seed(SEED, 300 + k);
        let br = if k < 16 {
            random_bridge(s, 7)?
        } else {
            let m = proplab::instances::matrix_dirac(&format!("M{k}"), rng.gen_range(0.5..1.5))?;
            let n = rng.gen_range(1..=3);
            let x = Qcms::metric_space(format!("T{k}"), &random_metric(n, &mut rng), s)?;
            Bridge::tensor(m, x)?
        };
        let br = Arc::new(br);
        let b = budget(s);
        let st = br.stats(&b.opts)?;
        let lambda = st.length.value + rng.gen_range(1e-6..0.2);
        let t = tunnel_from_bridge(br, lambda, Some(&st), true, &b)?;
        let e = t.extent(&b.opts)?;
        worst = worst.max(e.value - lambda);
        built.tunnels.push(Arc::new(t));
    }
    Ok((worst <= 1e-3, format!("20 bridges (4 noncommutative), worst extent - lambda = {worst:.2e}")))
}

fn c4_triangle(built: &mut Built) -> Result<(bool, String)> {
    let mut worst_ext = f64::NEG_INFINITY;
    let mut worst_tri = f64::NEG_INFINITY;
    for k in 0..10 {
        let b = budget(derive_seed(SEED, 400 + k));
        let (t1, t2) = chain3(derive_seed(SEED, 400 + k), 5, &b)?;
        let eps = 0.005 * (1 + k) as f64;
        let c = Arc::new(compose_tunnels(t1.clone(), t2.clone(), eps, &b)?);
        let e = c.extent(&b.opts)?;
        worst_ext = worst_ext.max(e.value - (t1.figure + t2.figure + eps));
        let direct = {
            let (x, z) = (t1.domain.clone(), t2.codomain.clone());
            let br = Arc::new(Bridge::tensor(x, z)?);
            let st = br.stats(&b.opts)?;
            Arc::new(tunnel_from_bridge(br, st.length.value + 1e-6, Some(&st), true, &b)?)
        };
        let (pxy, _) = propinquity_ub(&t1.domain, &t1.codomain, &[&t1])?;
        let (pyz, _) = propinquity_ub(&t2.domain, &t2.codomain, &[&t2])?;
        let (pxz, _) = propinquity_ub(&t1.domain, &t2.codomain, &[&c, &direct])?;
        worst_tri = worst_tri.max(pxz.value - (pxy.value + pyz.value + eps));
        built.tunnels.extend([c, direct]);
    }
    let pass = worst_ext <= 1e-3 && worst_tri <= 1e-12;
    Ok((pass, format!("10 chains, worst composite extent - (e1 + e2 + eps) = {worst_ext:.2e}, worst triangle excess = {worst_tri:.2e}")))
}

fn random_modular_tunnel(k: u64) -> Result<ModularTunnel> {
    let s = derive_seed(SEED, 500 + k);
    let p = 1 + (k as usize % 3);
    let max_points = [8, 5, 3][p - 1];
    let br = Arc::new(random_bridge(s, max_points)?);
    let a = qvba(br.first.clone(), p, derive_seed(s, 1))?;
    let b = qvba(br.second.clone(), p, derive_seed(s, 2))?;
    let (an, co) = unit_anchors(&a, &b)?;
    let mb = Arc::new(ModularBridge::new(br, a, b, an, co)?.convexify());
    let o = BridgeTunnelOpts { imprint_samples: 100, ..BridgeTunnelOpts::default() };
    Ok(modular_tunnel_from_bridge(mb, &o, &budget(s))?)
}

fn c5_modular_bridges(built: &mut Built) -> Result<(bool, String)> {
    let mut worst_d = f64::INFINITY;
    let mut worst_leg = f64::INFINITY;
    let mut legs_pass = true;
    for k in 0..10 {
        let t = random_modular_tunnel(k)?;
        let d = dnorm_validate(&t.pivot, 1000, derive_seed(SEED, 550 + k));
        worst_d = worst_d.min(d.worst_margin());
        for r in &t.isometry {
            legs_pass &= r.pass && r.tol <= 1e-4;
            worst_leg = worst_leg.min(r.worst_margin);
        }
        built.modular.push(Arc::new(t));
    }
    let pass = worst_d >= -1e-8 && legs_pass;
    Ok((pass, format!("10 bridges (rank 1 to 3), worst D-norm margin = {worst_d:.2e}, worst leg margin = {worst_leg:.2e}")))
}

fn c6_target_sets(built: &Built) -> Result<(bool, String)> {
    let mut figure = CheckReport::new("figure reading", 1e-3);
    let mut extent = CheckReport::new("extent reading", 1e-3);
    let mut rng = rng_from_seed(SEED + 6);
    for (k, t) in built.tunnels.iter().skip(20).take(5).enumerate() {
        let b = budget(derive_seed(SEED, 600 + k as u64));
        let a = t.domain.shape.sa_dim();
        let v = DVector::from_fn(a, |_, _| rng.gen_range(-1.0..1.0));
        let l = t.domain.lip.eval(&v).max(1e-3);
        let r = target_set_diameter_check(t, &v, l, 4, derive_seed(SEED, 610 + k as u64), 1e-3, &b.opts)?;
        figure.merge(&r.with_figure);
        extent.merge(&r.with_extent);
    }
    for (k, t) in built.modular.iter().take(5).enumerate() {
        let b = budget(derive_seed(SEED, 650 + k as u64));
        let m = &t.domain.module;
        let w = m.to_coords(&m.sample(&mut rng, 3 * k));
        let w2 = m.to_coords(&m.sample(&mut rng, 3 * k + 1));
        let l = t.domain.dnorm.eval(&w).max(t.domain.dnorm.eval(&w2)).max(1e-6);
        let c = C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        let r = module_target_checks(t, &w, &w2, c, l, 3, derive_seed(SEED, 660 + k as u64), 1e-3, &b.opts)?;
        for x in [&r.diameter_figure, &r.combination, &r.coherence_figure] {
            figure.merge(x);
        }
        for x in [&r.diameter_extent, &r.combination, &r.coherence_extent] {
            extent.merge(x);
        }
    }
    Ok((
        figure.pass && extent.pass,
        format!("10 tunnels, worst margin with the figure = {:.2e}, with the numeric extent = {:.2e}", figure.worst_margin, extent.worst_margin),
    ))
}

/// `sqrt(1 + 4 p F(1 + 2l, 1 + 2l, 1, 1) l)` with `F(x, y, a, b) = x b + y a`,
/// then `2 (g - 1) / g + l`.
fn free_figure_by_hand(p: usize, l: f64) -> f64 {
    if l == 0.0 {
        return 0.0;
    }
    let x = 1.0 + 2.0 * l;
    let f = x * 1.0 + x * 1.0;
    let g = (1.0 + 4.0 * p as f64 * f * l).sqrt();
    2.0 * (g - 1.0) / g + l
}

fn c7_free_module(built: &mut Built) -> Result<(bool, String)> {
    let x = Qcms::metric_space("FX", &line(2, 1.0), SEED)?;
    let y = Qcms::metric_space("FY", &line(2, 1.02), SEED + 1)?;
    let br = Arc::new(Bridge::correspondence(x.clone(), y, &[(0, 0), (1, 1)])?);
    let b = budget(SEED + 7);
    let st = br.stats(&b.opts)?;
    let mut worst: f64 = 0.0;
    let mut legs = true;
    for lambda in [0.0, 0.05, 0.1] {
        let base = if lambda == 0.0 {
            Arc::new(Tunnel::identity(x.clone()))
        } else {
            Arc::new(tunnel_from_bridge(br.clone(), lambda, Some(&st), false, &b)?)
        };
        for p in 1..=3 {
            let t = free_module_tunnel(base.clone(), p, &b)?;
            worst = worst.max((t.figure - free_figure_by_hand(p, lambda)).abs());
            for side in [proplab_core::qcms::bridge::Side::First, proplab_core::qcms::bridge::Side::Second] {
                let lift = |w: &DVector<f64>| t.lift(side, w, &b.opts);
                let r = modular_isometry_check(t.leg(side), &t.pivot, t.end(side), 24, derive_seed(SEED, 700 + p as u64), 1e-4, Some(&lift), false, &b.opts)?;
                legs &= r.pass;
            }
            built.modular.push(Arc::new(t));
        }
    }
    Ok((worst <= 1e-12 && legs, format!("9 tunnels, worst figure error = {worst:.2e}, legs pass: {legs}")))
}

fn c8_fallback() -> Result<(bool, String)> {
    let mut worst = f64::NEG_INFINITY;
    let mut pairs = 0;
    for name in GALLERY {
        let s = gallery(name, SEED)?;
        let text = s.to_json();
        let w = World::build(&s, &text).map_err(|e| anyhow!("{name}: {e}"))?;
        for (a, b) in bundle_pairs(&s) {
            for (x, y) in [(&a, &b), (&b, &a)] {
                let (bx, by): (&Arc<Mqvb>, &Arc<Mqvb>) = (&w.bundles[x], &w.bundles[y]);
                let cands: Vec<&ModularTunnel> =
                    w.modular_tunnels.values().filter(|t| t.domain.name == bx.name && t.codomain.name == by.name).map(|t| t.as_ref()).collect();
                let bound = dual_modular_propinquity_ub(bx, by, &cands, true, &w.budget)?;
                let cap = 2f64.max(diameter(&bx.base, &w.budget.opts)?.value).max(diameter(&by.base, &w.budget.opts)?.value);
                worst = worst.max(bound.estimate.value - cap);
                pairs += 1;
            }
        }
    }
    Ok((worst <= 1e-6, format!("{pairs} ordered gallery pairs, worst bound - max(2, diameters) = {worst:.2e}")))
}

fn c9_metrical(built: &mut Built) -> Result<(bool, String)> {
    let b = budget(SEED + 9);
    let xs: Vec<Arc<Qcms>> = [1.0, 1.03, 1.08].iter().enumerate().map(|(k, h)| Qcms::metric_space(format!("G{k}"), &line(2, *h), SEED + k as u64)).collect::<proplab_core::Result<_>>()?;
    let mut bases = Vec::new();
    for k in 0..2 {
        let br = Arc::new(Bridge::correspondence(xs[k].clone(), xs[k + 1].clone(), &[(0, 0), (1, 1)])?);
        let st = br.stats(&b.opts)?;
        bases.push(Arc::new(tunnel_from_bridge(br, st.length.value + 1e-6, Some(&st), true, &b)?));
    }
    let mut worst_g = f64::INFINITY;
    let mut worst_fig = f64::NEG_INFINITY;
    for mode in ["scalar", "multiplication"] {
        let mut ends = Vec::new();
        for (k, x) in xs.iter().enumerate() {
            let bundle = qvba(x.clone(), 1, derive_seed(SEED, 900 + k as u64))?;
            ends.push(if mode == "scalar" {
                scalar_metrical(bundle, METRICAL_SAMPLES, derive_seed(SEED, 910 + k as u64))?
            } else {
                let action = ModuleAction::by_multiplication(&bundle.module);
                make_metrical(bundle, x.clone(), action, PermissibleTriple::leibniz(), METRICAL_SAMPLES, derive_seed(SEED, 920 + k as u64))?
            });
        }
        let mut ts = Vec::new();
        for k in 0..2 {
            let m = Arc::new(free_module_tunnel(bases[k].clone(), 1, &b)?);
            let seed = derive_seed(SEED, 930 + k as u64);
            ts.push(if mode == "scalar" {
                scalar_metrical_tunnel(m, ends[k].clone(), ends[k + 1].clone(), METRICAL_SAMPLES, seed)?
            } else {
                multiplication_metrical_tunnel(m, ends[k].clone(), ends[k + 1].clone(), METRICAL_SAMPLES, seed)?
            });
        }
        let eps = 0.01;
        let c = compose_metrical(&ts[0], &ts[1], eps, &b, METRICAL_SAMPLES)?;
        worst_g = worst_g.min(c.g_report.dnorm_slot.worst_margin);
        let ext = metrical_extent(&c, &b.opts)?;
        worst_fig = worst_fig.max(c.figure - (ts[0].figure + ts[1].figure + eps)).max(ext.value - c.figure - 1e-3);
        for t in ts {
            built.metrical.push(Arc::new(t));
        }
        built.metrical.push(Arc::new(c));
    }
    let pass = worst_g >= -1e-8 && worst_fig <= 1e-12;
    Ok((pass, format!("scalar and multiplication chains, worst G margin = {worst_g:.2e}, worst figure excess = {worst_fig:.2e}")))
}

fn c10_dyadic() -> Result<(bool, String)> {
    let b = budget(SEED + 10);
    let levels = 5;
    let (grids, ts) = dyadic_chain(levels, &b)?;
    let bounds: Vec<f64> = ts.iter().map(|t| t.figure).collect();
    let c = bounds.iter().enumerate().map(|(n, v)| v * 2f64.powi(n as i32)).fold(0.0, f64::max);
    let c0 = bounds[0];
    let geometric = bounds.iter().enumerate().all(|(n, v)| *v <= c0 * 0.5f64.powi(n as i32) * (1.0 + 1e-6));
    let mut worst = f64::NEG_INFINITY;
    let mut worst_ext = f64::NEG_INFINITY;
    for n in 0..ts.len() {
        let mut acc = ts[n].clone();
        let mut sum = bounds[n];
        for m in n + 1..ts.len() {
            let eps = chain_epsilon(m);
            acc = Arc::new(compose_tunnels(acc, ts[m].clone(), eps, &b)?);
            sum += bounds[m] + eps;
            let mut cands = vec![acc.clone()];
            if m == n + 1 {
                let direct = coarse_to_fine(&grids[n], &grids[m + 1], &b)?;
                cands.push(direct);
                worst_ext = worst_ext.max(acc.extent(&b.opts)?.value - sum);
            }
            let refs: Vec<&Tunnel> = cands.iter().map(|t| t.as_ref()).collect();
            let (p, _) = propinquity_ub(&grids[n], &grids[m + 1], &refs)?;
            worst = worst.max(p.value - sum);
        }
    }
    let pass = geometric && worst <= 1e-12 && worst_ext <= 1e-3;
    Ok((
        pass,
        format!("levels 0..{levels}, measured C = {c:.3}, geometric decay: {geometric}, worst chained bound excess = {worst:.2e}, worst two-step extent excess = {worst_ext:.2e}"),
    ))
}

/// Direct tunnel from a grid to the one two levels finer: each fine point is
/// related to the nearest coarse points.
fn coarse_to_fine(coarse: &Arc<Qcms>, fine: &Arc<Qcms>, b: &CheckBudget) -> Result<Arc<Tunnel>> {
    let (n, m) = (coarse.shape.num_blocks() - 1, fine.shape.num_blocks() - 1);
    let r = m / n;
    let mut pairs = Vec::new();
    for j in 0..=m {
        let lo = j / r;
        let hi = j.div_ceil(r);
        let near = if j - lo * r <= hi * r - j { lo } else { hi };
        pairs.push((near, j));
    }
    let br = Arc::new(Bridge::correspondence(coarse.clone(), fine.clone(), &pairs)?);
    let st = br.stats(&b.opts)?;
    Ok(Arc::new(tunnel_from_bridge(br, st.length.value + 1e-6, Some(&st), true, b)?))
}

fn c11_quasi_leibniz(built: &Built) -> Result<(bool, String)> {
    let mut f = CheckReport::new("F", 1e-8);
    let mut h = CheckReport::new("H", 1e-8);
    let mut g = CheckReport::new("G", 1e-8);
    for (k, t) in built.tunnels.iter().enumerate() {
        let p = &t.pivot;
        f.merge(&quasi_leibniz_check(&p.lip, &p.triple, &p.shape, 500, derive_seed(SEED, 1100 + k as u64)));
    }
    for (k, t) in built.modular.iter().enumerate() {
        let p = &t.pivot;
        f.merge(&quasi_leibniz_check(&p.base.lip, &p.base.triple, &p.base.shape, 500, derive_seed(SEED, 1200 + k as u64)));
        h.merge(&dnorm_validate(p, 500, derive_seed(SEED, 1300 + k as u64)).inner_leibniz);
    }
    let mut quotients = 0;
    for (k, t) in built.modular.iter().filter(|t| t.pivot.module.dim() <= 24).take(3).enumerate() {
        let q = quotient_bundle(&t.pivot, &t.leg_first, t.domain.base.clone(), 500, derive_seed(SEED, 1400 + k as u64), &budget(k as u64).opts)?;
        h.merge(&q.report.inner_leibniz);
        quotients += 1;
    }
    for t in &built.metrical {
        g.merge(&t.g_report.dnorm_slot);
        f.merge(&quasi_leibniz_check(&t.acting.pivot.lip, &t.acting.pivot.triple, &t.acting.pivot.shape, 500, SEED));
    }
    let pass = [&f, &h, &g].iter().all(|r| r.worst_margin >= -1e-8);
    Ok((
        pass,
        format!(
            "{} tunnels, {} modular pivots, {quotients} quotients, {} metrical tunnels; worst F/H/G margins {:.2e} / {:.2e} / {:.2e}",
            built.tunnels.len(),
            built.modular.len(),
            built.metrical.len(),
            f.worst_margin,
            h.worst_margin,
            g.worst_margin
        ),
    ))
}

fn main() {
    let start = Instant::now();
    let mut built = Built::default();
    let mut all = true;
    let mut report = |n: usize, name: &str, r: Result<(bool, String)>, t: Instant| {
        let (pass, detail) = match r {
            Ok(x) => x,
            Err(e) => (false, format!("error: {e:#}")),
        };
        all &= pass;
        println!("criterion {n:>2} {} {name}: {detail} [{:.1}s]", if pass { "PASS" } else { "FAIL" }, t.elapsed().as_secs_f64());
    };
    let t = Instant::now();
    report(1, "commutative MK oracle", c1_mk_oracle(), t);
    let t = Instant::now();
    report(2, "extent closed form", c2_extent_closed_form(&mut built), t);
    let t = Instant::now();
    report(3, "bridge to tunnel bound", c3_bridge_bound(&mut built), t);
    let t = Instant::now();
    report(4, "triangle bound", c4_triangle(&mut built), t);
    let t = Instant::now();
    report(5, "modular bridge to tunnel", c5_modular_bridges(&mut built), t);
    let t = Instant::now();
    report(6, "target-set bounds", c6_target_sets(&built), t);
    let t = Instant::now();
    report(7, "free-module tunnel", c7_free_module(&mut built), t);
    let t = Instant::now();
    report(8, "diameter fallback", c8_fallback(), t);
    let t = Instant::now();
    report(9, "metrical composition", c9_metrical(&mut built), t);
    let t = Instant::now();
    report(10, "dyadic Cauchy chain", c10_dyadic(), t);
    let t = Instant::now();
    report(11, "quasi-Leibniz preservation", c11_quasi_leibniz(&built), t);
    println!("acceptance finished in {:.1}s", start.elapsed().as_secs_f64());
    if !all {
        std::process::exit(1);
    }
}
