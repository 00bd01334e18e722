//! Task execution.

use rayon::prelude::*;

use proplab_core::algebra::derive_seed;
use proplab_core::metrical::{dual_metrical_propinquity_ub, metrical_extent};
use proplab_core::modular::{dual_modular_propinquity_ub, modular_extent};
use proplab_core::qcms::tunnel::{propinquity_ub, CheckBudget};
use proplab_core::qcms::{diameter, mk_distance};

use crate::report::{Record, Report};
use crate::scenario::{Scenario, ScenarioError, TaskDecl, TaskOp, World};

/// Command-line values that replace the scenario's own.
#[derive(Clone, Copy, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub samples: Option<usize>,
    pub tol: Option<f64>,
}

impl Overrides {
    pub fn apply(&self, s: &mut Scenario) {
        if let Some(seed) = self.seed {
            s.seed = seed;
        }
        if let Some(k) = self.samples {
            s.samples = k;
        }
        if let Some(t) = self.tol {
            s.tol = t;
        }
    }
}

/// Thread count from `PROPLAB_THREADS`, if set to a positive integer.
pub fn thread_cap() -> Option<usize> {
    std::env::var("PROPLAB_THREADS").ok()?.trim().parse().ok().filter(|&n| n > 0)
}

/// Parses, builds and runs a scenario.
pub fn compute(text: &str, overrides: &Overrides) -> Result<Report, ScenarioError> {
    let mut s = Scenario::parse(text)?;
    overrides.apply(&mut s);
    let world = World::build(&s, text)?;
    Ok(run_tasks(&world, &s))
}

/// Runs every task; the records keep task order regardless of scheduling.
pub fn run_tasks(world: &World, s: &Scenario) -> Report {
    let go = || -> Vec<Record> {
        s.tasks.par_iter().enumerate().map(|(i, t)| run_task(world, s, t, derive_seed(s.seed, 0x7A5C + i as u64))).flatten().collect()
    };
    let records = match thread_cap() {
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(go),
            Err(_) => go(),
        },
        None => go(),
    };
    Report::new(s.seed, records)
}

fn run_task(w: &World, s: &Scenario, t: &TaskDecl, seed: u64) -> Vec<Record> {
    let opts = w.budget.opts.with_seed(seed);
    let budget = CheckBudget { seed, opts, ..w.budget };
    let tol = s.tol;
    let id = t.id.as_str();
    let out: proplab_core::Result<Vec<Record>> = (|| {
        Ok(match &t.op {
            TaskOp::MkDistance { space, first, second } => {
                let q = &w.qcms[space];
                let phi = first.resolve(&q.shape).map_err(proplab_core::Error::Validation)?;
                let psi = second.resolve(&q.shape).map_err(proplab_core::Error::Validation)?;
                vec![Record::from_estimate(id, "mk_distance", &mk_distance(q, &phi, &psi, &opts)?, tol)]
            }
            TaskOp::Diameter { space } => vec![Record::from_estimate(id, "diameter", &diameter(&w.qcms[space], &opts)?, tol)],
            TaskOp::BridgeStats { bridge } => {
                let st = w.bridges[bridge].0.stats(&opts)?;
                vec![
                    Record::from_estimate(id, "height", &st.height, tol),
                    Record::from_estimate(id, "reach", &st.reach, tol),
                    Record::from_estimate(id, "length", &st.length, tol),
                ]
            }
            TaskOp::TunnelExtent { tunnel } => {
                let tn = &w.tunnels[tunnel];
                vec![Record::from_estimate(id, "extent", &tn.extent(&opts)?, tol).bounded_by(tn.figure)]
            }
            TaskOp::Propinquity { first, second, candidates } => {
                let cands: Vec<_> = candidates.iter().map(|c| w.tunnels[c].as_ref()).collect();
                let (e, k) = propinquity_ub(&w.qcms[first], &w.qcms[second], &cands)?;
                vec![Record::from_estimate(id, "propinquity_upper", &e, tol).witness(format!("via {}", candidates[k]))]
            }
            TaskOp::Imprint { modular_bridge, samples } => {
                let mb = &w.modular_bridges[modular_bridge].0;
                let im = mb.imprint(samples.unwrap_or(500), seed, &opts);
                vec![Record::from_estimate(id, "imprint", &im.estimate, tol).bounded_by(im.cap).witness(format!("radius figure {}", im.figure))]
            }
            TaskOp::ModularExtent { tunnel } => {
                let tn = &w.modular_tunnels[tunnel];
                let mut r = Record::from_estimate(id, "modular_extent", &modular_extent(tn, &opts)?, tol).bounded_by(tn.figure);
                for (k, v) in &tn.parameters {
                    r = r.witness(format!("{k} = {v}"));
                }
                vec![r]
            }
            TaskOp::DmodPropinquity { first, second, candidates, fallback } => {
                let (a, b) = (&w.bundles[first], &w.bundles[second]);
                let cands: Vec<_> = candidates.iter().map(|c| w.modular_tunnels[c].as_ref()).collect();
                let bound = dual_modular_propinquity_ub(a, b, &cands, *fallback, &budget)?;
                let da = diameter(&a.base, &opts)?;
                let db = diameter(&b.base, &opts)?;
                let cap = 2f64.max(da.value).max(db.value);
                let via = match bound.index {
                    Some(k) => format!("via {}", candidates[k]),
                    None => "via the diameter fallback".into(),
                };
                let mut r = Record::from_estimate(id, "dmod_propinquity_upper", &bound.estimate, tol).bounded_by(cap).witness(via);
                if da.kind != proplab_core::estimate::BoundKind::Exact || db.kind != proplab_core::estimate::BoundKind::Exact {
                    r = r.witness("diameter bound uses estimated diameters");
                }
                vec![r]
            }
            TaskOp::MetricalExtent { tunnel } => {
                let tn = &w.metrical_tunnels[tunnel];
                vec![Record::from_estimate(id, "metrical_extent", &metrical_extent(tn, &opts)?, tol).bounded_by(tn.figure)]
            }
            TaskOp::DmetPropinquity { first, second, candidates } => {
                let cands: Vec<_> = candidates.iter().map(|c| w.metrical_tunnels[c].as_ref()).collect();
                let (e, k) = dual_metrical_propinquity_ub(&w.actions[first], &w.actions[second], &cands)?;
                vec![Record::from_estimate(id, "dmet_propinquity_upper", &e, tol).witness(format!("via {}", candidates[k]))]
            }
        })
    })();
    out.unwrap_or_else(|e| vec![Record::failed(id, op_name(&t.op), tol, e.to_string())])
}

fn op_name(op: &TaskOp) -> &'static str {
    match op {
        TaskOp::MkDistance { .. } => "mk_distance",
        TaskOp::Diameter { .. } => "diameter",
        TaskOp::BridgeStats { .. } => "bridge_stats",
        TaskOp::TunnelExtent { .. } => "extent",
        TaskOp::Propinquity { .. } => "propinquity_upper",
        TaskOp::Imprint { .. } => "imprint",
        TaskOp::ModularExtent { .. } => "modular_extent",
        TaskOp::DmodPropinquity { .. } => "dmod_propinquity_upper",
        TaskOp::MetricalExtent { .. } => "metrical_extent",
        TaskOp::DmetPropinquity { .. } => "dmet_propinquity_upper",
    }
}
