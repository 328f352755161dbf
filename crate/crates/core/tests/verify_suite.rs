use distsig::verify::{find_check, run_all, Context, Fault, CHECKS};

#[test]
fn every_check_passes_on_a_correct_build() {
    let ctx = Context::new(0, None).unwrap();
    let results = run_all(&ctx);
    assert_eq!(results.len(), CHECKS.len());
    for r in &results {
        assert!(r.passed, "{}: {}", r.name, r.detail);
    }
}

#[test]
fn broken_backward_rule_fails_gradient_checks_only() {
    let ctx = Context::new(0, Some("backward:softmax".parse::<Fault>().unwrap())).unwrap();
    for name in ["gradcheck.ops", "gradcheck.pipeline", "gradcheck.pipeline_mlp"] {
        let r = find_check(name).unwrap().run(&ctx);
        assert!(!r.passed, "{name} missed the fault");
    }
    let ops = find_check("gradcheck.ops").unwrap().run(&ctx);
    assert!(ops.detail.contains("softmax"), "{}", ops.detail);
    assert!(find_check("ridge.push_through").unwrap().run(&ctx).passed);
}

#[test]
fn broken_perturbation_constructor_is_named() {
    for (fault, word) in [("sigma:non-bijective", "bijection"), ("sigma:non-preserving", "count")] {
        let ctx = Context::new(1, Some(fault.parse().unwrap())).unwrap();
        for name in ["invariance.count_mle", "invariance.embedding_copermutation"] {
            let r = find_check(name).unwrap().run(&ctx);
            assert!(!r.passed, "{name} missed {fault}");
            assert!(r.detail.contains(word), "{}", r.detail);
        }
        assert!(find_check("invariance.negative_controls").unwrap().run(&ctx).passed);
    }
}
