use std::collections::BTreeMap;

use mtnet_core::autodiff::suite::{check_model, check_ops, op_names, run_suite, Scope, MODEL_TOLERANCE, OP_TOLERANCE, SHAPES_PER_OP};

#[test]
fn every_op_passes_on_several_shapes() {
    for seed in [0, 1, 2] {
        let rows = check_ops("", seed).unwrap();
        let mut per_op: BTreeMap<&str, Vec<&Vec<usize>>> = BTreeMap::new();
        for r in &rows {
            assert_eq!(r.tolerance, OP_TOLERANCE);
            assert!(r.passed(), "seed {seed}: {} {:?} rel err {:e}", r.name, r.shape, r.rel_err);
            per_op.entry(r.name.as_str()).or_default().push(&r.shape);
        }
        assert_eq!(per_op.len(), op_names().len());
        for (name, shapes) in per_op {
            assert!(shapes.len() >= SHAPES_PER_OP, "{name}: {} shapes", shapes.len());
        }
    }
}

#[test]
fn whole_model_gradients_match_finite_differences() {
    let rows = check_model(7, 3).unwrap();
    assert_eq!(rows.len(), 3);
    for r in rows {
        assert_eq!(r.tolerance, MODEL_TOLERANCE);
        assert!(r.passed(), "{} {:?} rel err {:e}", r.name, r.shape, r.rel_err);
    }
}

#[test]
fn scope_selects_a_subset() {
    let conv = run_suite(&"conv3d".parse::<Scope>().unwrap(), 3).unwrap();
    assert!(!conv.is_empty());
    assert!(conv.iter().all(|r| r.name.starts_with("conv3d")));
    assert!("no_such_op".parse::<Scope>().is_err());
}
