//! Each full-conditional update checked against a density coded directly
//! from the model and tabulated on a fine grid.

mod common;

use common::conditional_checks::{self as checks, Check};

fn assert_all(checks: Vec<Check>) {
    for c in &checks {
        assert!(c.passed(), "{}: KS {} (limit {})", c.label, c.ks, c.limit);
    }
}

#[test]
fn latent_conditional_matches_brute_force() {
    assert_all(checks::latent());
}

#[test]
fn beta_conditional_matches_grid_marginals() {
    assert_all(checks::beta());
}

#[test]
fn rho_conditional_matches_grid() {
    assert_all(checks::rho());
}

#[test]
fn sigma2_conditional_matches_grid() {
    assert_all(checks::sigma2());
}

#[test]
fn hypervariance_conditional_matches_grid_and_closed_form() {
    assert_all(checks::hypervariance());
}

#[test]
fn icar_beta_conditional_matches_grid_marginals() {
    assert_all(checks::icar_beta());
}

#[test]
fn gamma_random_walk_targets_its_conditional() {
    assert_all(checks::icar_gamma());
}

#[test]
fn var_delta_conditional_matches_grid() {
    assert_all(checks::var_delta());
}

#[test]
fn var_sigma_conditional_matches_oracles() {
    assert_all(checks::var_sigma());
}
