use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use std::sync::Arc;

use proplab_core::algebra::{AlgebraShape, Element, State};
use proplab_core::bundle::{qvba, HilbertModule};
use proplab_core::convex::{wasserstein1, SolverOpts};
use proplab_core::modular::{free_module_figure, free_module_gamma, project_l1_ball};
use proplab_core::qcms::tunnel::{tunnel_from_bridge, CheckBudget};
use proplab_core::qcms::{diameter, mk_distance, Bridge, Qcms};
use proplab_core::seminorm::{lipschitz, PermissibleTriple};

/// Planar points at least 0.05 apart, dropping the ones that are too close.
fn spread(pts: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut out: Vec<(f64, f64)> = Vec::new();
    for &p in pts {
        if out.iter().all(|q| ((p.0 - q.0).powi(2) + (p.1 - q.1).powi(2)).sqrt() >= 0.05) {
            out.push(p);
        }
    }
    out
}

fn metric(pts: &[(f64, f64)]) -> DMatrix<f64> {
    DMatrix::from_fn(pts.len(), pts.len(), |i, j| ((pts[i].0 - pts[j].0).powi(2) + (pts[i].1 - pts[j].1).powi(2)).sqrt())
}

fn points(max: usize) -> impl Strategy<Value = Vec<(f64, f64)>> {
    prop::collection::vec((0.0..1.0f64, 0.0..1.0f64), 2..=max).prop_map(|v| spread(&v)).prop_filter("two points", |v| v.len() >= 2)
}

fn probabilities(n: usize, raw: &[f64]) -> Vec<f64> {
    let w: Vec<f64> = (0..n).map(|i| raw[i % raw.len()] + 1e-3).collect();
    let s: f64 = w.iter().sum();
    w.iter().map(|x| x / s).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn lipschitz_seminorm_is_a_seminorm(pts in points(6), f in prop::collection::vec(-1.0..1.0f64, 6), g in prop::collection::vec(-1.0..1.0f64, 6), t in -3.0..3.0f64) {
        let n = pts.len();
        let lip = lipschitz(&metric(&pts)).unwrap();
        let a = DVector::from_iterator(n, f.iter().cloned().take(n));
        let b = DVector::from_iterator(n, g.iter().cloned().take(n));
        prop_assert!((lip.eval(&(&a * t)) - t.abs() * lip.eval(&a)).abs() <= 1e-9 * (1.0 + lip.eval(&a)));
        prop_assert!(lip.eval(&(&a + &b)) <= lip.eval(&a) + lip.eval(&b) + 1e-9);
        prop_assert!(lip.eval(&DVector::from_element(n, t)).abs() <= 1e-9);
    }

    #[test]
    fn mk_distance_is_a_metric_on_states(pts in points(6), r in prop::collection::vec(0.0..1.0f64, 18)) {
        let n = pts.len();
        let x = Qcms::metric_space("X", &metric(&pts), 1).unwrap();
        let opts = SolverOpts::default();
        let s: Vec<State> = (0..3).map(|k| State::from_probabilities(&probabilities(n, &r[6 * k..6 * k + 6])).unwrap()).collect();
        let d = |i: usize, j: usize| mk_distance(&x, &s[i], &s[j], &opts).unwrap().value;
        prop_assert!((d(0, 1) - d(1, 0)).abs() <= 1e-7);
        prop_assert!(d(0, 2) <= d(0, 1) + d(1, 2) + 1e-7);
        prop_assert!(d(0, 1) <= diameter(&x, &opts).unwrap().value + 1e-7);
        let w = wasserstein1(&s[0].probabilities(), &s[1].probabilities(), &metric(&pts)).unwrap().value;
        prop_assert!((d(0, 1) - w).abs() <= 1e-6);
    }

    #[test]
    fn l1_projection_lands_in_the_ball(v in prop::collection::vec(-4.0..4.0f64, 1..8), r in 0.1..3.0f64) {
        let v = DVector::from_vec(v);
        let p = project_l1_ball(&v, r);
        prop_assert!(p.iter().map(|x| x.abs()).sum::<f64>() <= r + 1e-9);
        let q = project_l1_ball(&p, r);
        prop_assert!((&q - &p).amax() <= 1e-12);
        if v.iter().map(|x| x.abs()).sum::<f64>() <= r {
            prop_assert!((&p - &v).amax() <= 1e-12);
        }
    }

    #[test]
    fn free_module_figure_grows_with_rank_and_parameter(p in 1usize..4, l in 0.0..0.5f64, dl in 0.0..0.5f64) {
        let f = &PermissibleTriple::leibniz().f;
        let g = free_module_gamma(f, p, l);
        let g2 = free_module_gamma(f, p + 1, l + dl);
        prop_assert!(g >= 1.0 && g2 >= g);
        let fig = free_module_figure(g, l);
        prop_assert!(fig >= l && fig <= 2.0 + l);
        prop_assert!(free_module_figure(g2, l + dl) >= fig - 1e-12);
    }

    #[test]
    fn module_inner_product_is_cauchy_schwarz(blocks in prop::collection::vec(1usize..3, 1..3), p in 1usize..3, seed in 0u64..1000) {
        let shape = AlgebraShape::new(blocks).unwrap();
        let m = HilbertModule::free(&shape, p).unwrap();
        let mut rng = proplab_core::algebra::rng_from_seed(seed);
        let w = m.sample(&mut rng, 1);
        let z = m.sample(&mut rng, 2);
        let ip = m.inner(&w, &z).opnorm();
        prop_assert!(ip <= m.norm(&w) * m.norm(&z) * (1.0 + 1e-9) + 1e-12);
        let a = proplab_core::algebra::random_element(&shape, &mut rng);
        prop_assert!(m.norm(&m.act(&a, &w)) <= a.opnorm() * m.norm(&w) * (1.0 + 1e-9) + 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn bridge_tunnels_respect_their_parameter(pts in points(8), split in 1usize..7, seed in 0u64..1000) {
        prop_assume!(split < pts.len());
        let (a, b) = pts.split_at(split);
        let x = Qcms::metric_space("A", &metric(a), seed).unwrap();
        let y = Qcms::metric_space("B", &metric(b), seed + 1).unwrap();
        let pairs: Vec<(usize, usize)> = (0..a.len().max(b.len())).map(|k| (k % a.len(), k % b.len())).collect();
        let br = Arc::new(Bridge::correspondence(x, y, &pairs).unwrap());
        let budget = CheckBudget { seed, ..CheckBudget::default() };
        let st = br.stats(&budget.opts).unwrap();
        let lambda = st.length.value + 1e-6;
        let t = tunnel_from_bridge(br, lambda, Some(&st), true, &budget).unwrap();
        let e = t.extent(&budget.opts).unwrap().value;
        prop_assert!(e <= lambda + 1e-6);
        let inv = t.invert().extent(&budget.opts).unwrap().value;
        prop_assert!((e - inv).abs() <= 1e-6);
        prop_assert!(t.pivot.report.quasi_leibniz.pass);
    }

    #[test]
    fn qvba_dnorm_dominates_the_module_norm(pts in points(4), p in 1usize..3, seed in 0u64..1000) {
        let x = Qcms::metric_space("X", &metric(&pts), seed).unwrap();
        let b = qvba(x, p, seed).unwrap();
        let mut rng = proplab_core::algebra::rng_from_seed(seed);
        for i in 0..20 {
            let w = b.module.sample(&mut rng, i);
            prop_assert!(b.d(&w) >= b.module.norm(&w) - 1e-9);
        }
        let u = b.module.element(vec![Element::unit(b.module.base()); p]).unwrap();
        prop_assert!((b.d(&u) - b.module.norm(&u)).abs() <= 1e-9);
    }
}
