use std::process::Command;

use proplab::gallery::{gallery, GALLERY};
use proplab::report::{Report, RECORD_KEYS};
use proplab::run::{compute, Overrides};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_proplab"))
}

#[test]
fn two_point_gallery_runs_and_passes() {
    let dir = tempfile::tempdir().unwrap();
    let scen = dir.path().join("two.json");
    let out = dir.path().join("report.json");
    assert!(bin().args(["gallery", "--name", "two-point", "--out"]).arg(&scen).status().unwrap().success());
    let st = bin().arg("compute").arg("--scenario").arg(&scen).arg("--out").arg(&out).status().unwrap();
    assert_eq!(st.code(), Some(0));
    let r: Report = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    let ext = r.records.iter().find(|x| x.task_id == "extent").unwrap();
    assert_eq!(ext.pass, Some(true));
    assert!(ext.value.unwrap() <= ext.paper_bound.unwrap());
    let mk = r.records.iter().find(|x| x.task_id == "mk").unwrap();
    assert!((mk.value.unwrap() - 2.0).abs() < 1e-9);
}

#[test]
fn dangling_reference_exits_with_two_and_no_report() {
    let dir = tempfile::tempdir().unwrap();
    let scen = dir.path().join("bad.json");
    let out = dir.path().join("report.json");
    let mut s = gallery("two-point", 0).unwrap();
    if let proplab::scenario::TaskOp::TunnelExtent { tunnel } = &mut s.tasks[3].op {
        *tunnel = "missing".into();
    } else {
        panic!("unexpected gallery layout");
    }
    std::fs::write(&scen, s.to_json()).unwrap();
    let o = bin().arg("compute").arg("--scenario").arg(&scen).arg("--out").arg(&out).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.exists());
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("line ") && err.contains("missing"), "{err}");
}

#[test]
fn same_seed_gives_identical_reports() {
    let text = gallery("grid", 5).unwrap().to_json();
    let a = compute(&text, &Overrides::default()).unwrap();
    let mut b = compute(&text, &Overrides::default()).unwrap();
    b.timestamp = a.timestamp;
    assert_eq!(a.to_json(), b.to_json());
}

#[test]
fn overrides_replace_scenario_values() {
    let text = gallery("two-point", 0).unwrap().to_json();
    let r = compute(&text, &Overrides { seed: Some(9), samples: Some(4), tol: Some(1e-3) }).unwrap();
    assert_eq!(r.seed, 9);
    assert!(r.records.iter().all(|x| x.tolerance >= 1e-3));
}

#[test]
fn every_gallery_entry_parses_and_pass_flags_follow_bounds() {
    for name in GALLERY {
        let text = gallery(name, 0).unwrap().to_json();
        let r = compute(&text, &Overrides::default()).unwrap();
        assert!(r.all_pass(), "{name}: {}", r.table());
        for rec in &r.records {
            assert_eq!(rec.pass.is_some(), rec.paper_bound.is_some());
            let v = serde_json::to_value(rec).unwrap();
            assert!(v.as_object().unwrap().keys().all(|k| RECORD_KEYS.contains(&k.as_str())));
        }
    }
}

#[test]
fn unknown_names_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let st = bin().args(["gallery", "--name", "nope", "--out"]).arg(dir.path().join("x.json")).status().unwrap();
    assert_eq!(st.code(), Some(2));
    let st = bin().args(["verify", "--suite", "nope"]).status().unwrap();
    assert_eq!(st.code(), Some(2));
}

#[test]
fn axioms_suite_passes() {
    let o = bin().args(["verify", "--suite", "axioms", "--seed", "2"]).output().unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
}
