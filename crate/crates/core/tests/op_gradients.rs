//! Finite-difference checks for every differentiable graph operation and the
//! composed training losses.

use hola_core::gradsuite::{finetune_loss_check, full_suite, op_suite, pretrain_loss_check};

#[test]
fn every_op_passes_grad_check() {
    let report = op_suite(10, 2024).unwrap();
    assert!(report.len() > 30);
    for e in &report {
        assert!(e.passed(), "{}: max_rel_err {}", e.name, e.max_rel_err);
    }
}

#[test]
fn composed_losses_pass_grad_check() {
    for seed in [1, 2] {
        for e in [pretrain_loss_check(seed, 6).unwrap(), finetune_loss_check(seed, 6).unwrap()] {
            assert!(e.passed(), "{}: max_rel_err {}", e.name, e.max_rel_err);
        }
    }
}

#[test]
fn full_suite_names_are_unique() {
    let report = full_suite(7).unwrap();
    let mut names: Vec<&str> = report.iter().map(|e| e.name.as_str()).collect();
    names.sort_unstable();
    names.dedup();
    assert_eq!(names.len(), report.len());
}
