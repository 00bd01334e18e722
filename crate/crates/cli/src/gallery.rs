//! Ready-to-run example scenarios.

use proplab_core::algebra::AlgebraShape;
use proplab_core::Error;

use crate::scenario::*;

pub const GALLERY: [&str; 5] = ["two-point", "grid", "matrix-dirac", "free-module", "metrical-scalar"];

fn line(n: usize, h: f64) -> Vec<Vec<f64>> {
    (0..n).map(|i| (0..n).map(|j| (i as f64 - j as f64).abs() * h).collect()).collect()
}

fn space(id: &str, metric: Vec<Vec<f64>>) -> QcmsDecl {
    QcmsDecl { id: id.into(), metric: Some(metric), algebra: None, seminorm: None }
}

fn free(id: &str, base: &str, rank: usize) -> (ModuleDecl, BundleDecl) {
    let m = format!("mod_{id}");
    (ModuleDecl { id: m.clone(), kind: ModuleKind::Free { base: base.into(), rank } }, BundleDecl { id: id.into(), module: m })
}

fn task(id: &str, op: TaskOp) -> TaskDecl {
    TaskDecl { id: id.into(), op }
}

fn add_bundle(s: &mut Scenario, id: &str, base: &str, rank: usize) {
    let (m, b) = free(id, base, rank);
    s.modules.push(m);
    s.bundles.push(b);
}

fn tunnel(id: &str, bridge: &str) -> TunnelDecl {
    TunnelDecl { id: id.into(), kind: TunnelKind::Bridge { bridge: bridge.into(), lambda: None } }
}

fn dmod(id: &str, a: &str, b: &str, candidates: &[&str]) -> TaskDecl {
    task(
        id,
        TaskOp::DmodPropinquity { first: a.into(), second: b.into(), candidates: candidates.iter().map(|c| c.to_string()).collect(), fallback: true },
    )
}

/// Two two-point spaces at distances 1 and 2, joined by the identity
/// relation.
fn two_point(seed: u64) -> Scenario {
    let mut s = Scenario::empty(seed);
    s.qcms = vec![space("P1", line(2, 1.0)), space("P2", line(2, 2.0))];
    s.bridges = vec![BridgeDecl {
        id: "rel".into(),
        first: "P1".into(),
        second: "P2".into(),
        kind: BridgeKind::Correspondence { pairs: vec![(0, 0), (1, 1)] },
        lambda: None,
    }];
    s.tunnels = vec![tunnel("t", "rel")];
    add_bundle(&mut s, "P1^1", "P1", 1);
    add_bundle(&mut s, "P2^1", "P2", 1);
    s.tasks = vec![
        task("mk", TaskOp::MkDistance { space: "P2".into(), first: StateLit::Point { point: 0 }, second: StateLit::Point { point: 1 } }),
        task("diam", TaskOp::Diameter { space: "P1".into() }),
        task("stats", TaskOp::BridgeStats { bridge: "rel".into() }),
        task("extent", TaskOp::TunnelExtent { tunnel: "t".into() }),
        task("prop", TaskOp::Propinquity { first: "P1".into(), second: "P2".into(), candidates: vec!["t".into()] }),
        dmod("dmod", "P1^1", "P2^1", &[]),
    ];
    s
}

/// The dyadic grids with 3 and 5 points of the unit interval, the refining
/// bridge, and a modular bridge between the rank-one bundles.
fn grid(seed: u64) -> Scenario {
    let mut s = Scenario::empty(seed);
    s.qcms = vec![space("X1", line(3, 0.5)), space("X2", line(5, 0.25))];
    let mut pairs = Vec::new();
    for j in 0..5 {
        if j % 2 == 0 {
            pairs.push((j / 2, j));
        } else {
            pairs.push(((j - 1) / 2, j));
            pairs.push(((j + 1) / 2, j));
        }
    }
    s.bridges = vec![BridgeDecl { id: "refine".into(), first: "X1".into(), second: "X2".into(), kind: BridgeKind::Correspondence { pairs }, lambda: None }];
    s.tunnels = vec![tunnel("t", "refine")];
    add_bundle(&mut s, "X1^1", "X1", 1);
    add_bundle(&mut s, "X2^1", "X2", 1);
    s.modular_bridges = vec![ModularBridgeDecl {
        id: "mb".into(),
        base_bridge: "refine".into(),
        first: "X1^1".into(),
        second: "X2^1".into(),
        anchors: None,
        coanchors: None,
        radius: None,
        lambda: None,
        epsilon: None,
        convexify: true,
    }];
    s.modular_tunnels = vec![ModularTunnelDecl { id: "mt".into(), kind: ModularTunnelKind::Bridge { modular_bridge: "mb".into(), imprint_samples: None } }];
    s.tasks = vec![
        task("diam", TaskOp::Diameter { space: "X2".into() }),
        task("extent", TaskOp::TunnelExtent { tunnel: "t".into() }),
        task("imprint", TaskOp::Imprint { modular_bridge: "mb".into(), samples: Some(200) }),
        task("mextent", TaskOp::ModularExtent { tunnel: "mt".into() }),
        dmod("dmod", "X1^1", "X2^1", &["mt"]),
    ];
    s
}

fn pauli(scale: f64) -> Vec<ElementLit> {
    let s = |v: f64| Scalar::Real(v);
    vec![
        ElementLit::Blocks(vec![vec![vec![s(scale), s(0.0)], vec![s(0.0), s(-scale)]]]),
        ElementLit::Blocks(vec![vec![vec![s(0.0), s(scale)], vec![s(scale), s(0.0)]]]),
    ]
}

/// `M_2` with the commutator Lip-norm of Pauli `Z` and `X`, bridged to a
/// two-point space through the tensor product.
fn matrix_dirac(seed: u64) -> Scenario {
    let mut s = Scenario::empty(seed);
    s.algebras = vec![AlgebraDecl { id: "M2".into(), blocks: AlgebraShape::matrix(2).blocks().to_vec() }];
    s.seminorms = vec![SeminormDecl { id: "dirac".into(), kind: SeminormKind::Commutator { algebra: "M2".into(), dirac: pauli(1.0), representation: None } }];
    s.qcms = vec![QcmsDecl { id: "M".into(), metric: None, algebra: Some("M2".into()), seminorm: Some("dirac".into()) }, space("P", line(2, 1.0))];
    s.bridges = vec![BridgeDecl { id: "tensor".into(), first: "M".into(), second: "P".into(), kind: BridgeKind::Tensor, lambda: None }];
    s.tunnels = vec![tunnel("t", "tensor")];
    add_bundle(&mut s, "M^1", "M", 1);
    add_bundle(&mut s, "P^1", "P", 1);
    let e = |k: usize| StateLit::Vector { block: 0, vector: (0..2).map(|i| Scalar::Real(if i == k { 1.0 } else { 0.0 })).collect() };
    s.tasks = vec![
        task("mk", TaskOp::MkDistance { space: "M".into(), first: e(0), second: e(1) }),
        task("diam", TaskOp::Diameter { space: "M".into() }),
        task("extent", TaskOp::TunnelExtent { tunnel: "t".into() }),
        dmod("dmod", "M^1", "P^1", &[]),
    ];
    s
}

/// Free modules of rank 2 over two close finite spaces, joined by the
/// widened base tunnel.
fn free_module(seed: u64) -> Scenario {
    let mut s = Scenario::empty(seed);
    s.qcms = vec![space("X", line(2, 1.0)), space("Y", line(2, 1.1))];
    s.bridges = vec![BridgeDecl {
        id: "rel".into(),
        first: "X".into(),
        second: "Y".into(),
        kind: BridgeKind::Correspondence { pairs: vec![(0, 0), (1, 1)] },
        lambda: None,
    }];
    s.tunnels = vec![tunnel("t", "rel")];
    s.modular_tunnels = vec![ModularTunnelDecl { id: "ft".into(), kind: ModularTunnelKind::Free { tunnel: "t".into(), rank: 2 } }];
    add_bundle(&mut s, "X^2", "X", 2);
    add_bundle(&mut s, "Y^2", "Y", 2);
    s.tasks = vec![
        task("extent", TaskOp::TunnelExtent { tunnel: "t".into() }),
        task("mextent", TaskOp::ModularExtent { tunnel: "ft".into() }),
        dmod("dmod", "X^2", "Y^2", &["ft"]),
    ];
    s
}

/// Rank-one bundles with the complex numbers acting by scalars.
fn metrical_scalar(seed: u64) -> Scenario {
    let mut s = free_module(seed);
    s.modular_tunnels = vec![ModularTunnelDecl { id: "ft".into(), kind: ModularTunnelKind::Free { tunnel: "t".into(), rank: 1 } }];
    s.modules.clear();
    s.bundles.clear();
    add_bundle(&mut s, "X^1", "X", 1);
    add_bundle(&mut s, "Y^1", "Y", 1);
    s.actions = vec![
        ActionDecl { id: "CX".into(), bundle: "X^1".into(), acting_qcms: "C".into(), matrix_over_base: None },
        ActionDecl { id: "CY".into(), bundle: "Y^1".into(), acting_qcms: "C".into(), matrix_over_base: None },
    ];
    s.metrical_tunnels = vec![MetricalTunnelDecl {
        id: "st".into(),
        kind: MetricalTunnelKind::Scalar { modular_tunnel: "ft".into(), first: "CX".into(), second: "CY".into() },
    }];
    s.tasks = vec![
        task("mextent", TaskOp::ModularExtent { tunnel: "ft".into() }),
        task("metextent", TaskOp::MetricalExtent { tunnel: "st".into() }),
        task("dmet", TaskOp::DmetPropinquity { first: "CX".into(), second: "CY".into(), candidates: vec!["st".into()] }),
        dmod("dmod", "X^1", "Y^1", &["ft"]),
    ];
    s
}

pub fn gallery(name: &str, seed: u64) -> proplab_core::Result<Scenario> {
    Ok(match name {
        "two-point" => two_point(seed),
        "grid" => grid(seed),
        "matrix-dirac" => matrix_dirac(seed),
        "free-module" => free_module(seed),
        "metrical-scalar" => metrical_scalar(seed),
        _ => return Err(Error::Precondition(format!("unknown gallery entry {name:?}; expected one of {}", GALLERY.join(", ")))),
    })
}

/// Pairs of bundle ids declared by a gallery scenario.
pub fn bundle_pairs(s: &Scenario) -> Vec<(String, String)> {
    let ids: Vec<&String> = s.bundles.iter().map(|b| &b.id).collect();
    let mut out = Vec::new();
    for i in 0..ids.len() {
        for j in i + 1..ids.len() {
            out.push((ids[i].clone(), ids[j].clone()));
        }
    }
    out
}
