use super::*;
use crate::gcore::UncertaintySet;
use crate::model::coefficient::CoefficientFn;
use crate::model::presets::{constant_model, ou_model};
use crate::model::spec::ModelSpec;
use crate::pde::{solve_ergodic, ErgodicOptions, ErgodicSolution, Grid};
use crate::sim::{simulate_gsde, worst_case_policy, Covariance, VolControl};

fn constant() -> (ModelSpec, ErgodicSolution) {
    let model = constant_model(0.02, 0.3, 0.5, 1.0).unwrap();
    let grid = Grid::uniform(-3.0, 3.0, 65).unwrap();
    let sol = solve_ergodic(&model, &grid, &ErgodicOptions::default()).unwrap();
    (model, sol)
}

fn scalar(model: &ModelSpec, q: f64) -> VolControl {
    VolControl::Constant(Covariance::scalar(model.uncertainty(), q).unwrap())
}

#[test]
fn constant_model_k_closed_forms() {
    let (model, sol) = constant();
    let t = 2.0;
    let low = simulate_gsde(&model, &scalar(&model, 0.5), &[0.0], t, 1e-2, 20, 5).unwrap();
    let dec = compute_components(&low, &sol, &model).unwrap();
    for p in 0..dec.n_paths {
        assert!((dec.k_at(p, dec.n_steps) + 0.0225 * t).abs() < 1e-6);
    }
    assert_eq!(dec.k_violations(0.0), 0);
    assert!(dec.identity.max < 5e-3, "{:?}", dec.identity);

    let policy = VolControl::Feedback(worst_case_policy(&sol, &model).unwrap());
    let top = simulate_gsde(&model, &policy, &[0.0], t, 1e-2, 20, 5).unwrap();
    let dec = compute_components(&top, &sol, &model).unwrap();
    assert!(dec.max_abs_k() < 1e-10);
    assert_eq!(dec.ln_m_at(0, 0), 0.0);
    assert_eq!(dec.k_at(0, 0), 0.0);
}

#[test]
fn trivial_kernel_reconstructs_exactly() {
    let model = ModelSpec::builder(1, 1, UncertaintySet::classical(1.0).unwrap())
        .drift(vec![CoefficientFn::Affine { intercept: 0.0, slope: vec![-1.0] }])
        .vol(vec![CoefficientFn::Constant(0.3)])
        .build()
        .unwrap();
    let grid = Grid::uniform(-3.0, 3.0, 33).unwrap();
    let sol = solve_ergodic(&model, &grid, &ErgodicOptions::default()).unwrap();
    let batch = simulate_gsde(&model, &scalar(&model, 1.0), &[0.5], 1.0, 1e-2, 8, 1).unwrap();
    let dec = compute_components(&batch, &sol, &model).unwrap();
    assert!(dec.ln_d.iter().all(|v| *v == 0.0));
    assert!(dec.identity.max < 1e-12, "{:?}", dec.identity);
    let r = verify_bsde_residual(&batch, &sol, &model, 0.0).unwrap();
    assert!(r.max < 1e-12, "{r:?}");
}

#[test]
fn streaming_matches_batches() {
    let (model, sol) = constant();
    let controls = vec![scalar(&model, 0.5), VolControl::Feedback(worst_case_policy(&sol, &model).unwrap())];
    let sim = SimSettings { x0: vec![0.1], horizon: 1.0, dt: 1e-2, n_paths: 64, seed: 9 };
    let streamed = verify_controls(&model, &sol, &controls, 1, &sim).unwrap();
    let batches: Vec<_> = controls
        .iter()
        .map(|c| simulate_gsde(&model, c, &sim.x0, sim.horizon, sim.dt, sim.n_paths, sim.seed).unwrap())
        .collect();
    let stored = verify_martingales(&model, &sol, &batches, 1).unwrap();
    assert_eq!(streamed, stored);
    assert_eq!(stored.k_violations, 0);
    assert!(stored.k_flatness.unwrap() < 1e-10);
    assert!(stored.controls[1].uniform_maximizer);
    assert!(verify_controls(&model, &sol, &controls[..1], 0, &sim).is_err());
    assert!(verify_controls(&model, &sol, &controls, 0, &sim).is_err());
}

#[test]
fn classical_reduction_cancels_k() {
    let (model, sol) = constant();
    let sim = SimSettings { x0: vec![0.0], horizon: 1.0, dt: 1e-2, n_paths: 16, seed: 2 };
    assert!(classical_k_norm(&model, &sol, &sim).unwrap() < 1e-10);
}

#[test]
fn ou_identity_and_residual() {
    let model = ou_model(1.0, 0.05, 0.2, 0.8, 1.2).unwrap();
    let grid = Grid::uniform(-2.0, 2.0, 129).unwrap();
    let sol = solve_ergodic(&model, &grid, &ErgodicOptions::default()).unwrap();
    let policy = VolControl::Feedback(worst_case_policy(&sol, &model).unwrap());
    let batch = simulate_gsde(&model, &policy, &[0.05], 1.0, 1e-2, 32, 4).unwrap();
    let dec = compute_components(&batch, &sol, &model).unwrap();
    assert!(dec.identity.max < 1e-2, "{:?}", dec.identity);
    let r = verify_bsde_residual(&batch, &sol, &model, 0.5).unwrap();
    assert!(r.max < 2e-2, "{r:?}");
    // Slope bias of u^δ is δ/(κ + δ) at the final discount.
    let zdev = dec.z.iter().fold(0.0f64, |a, z| a.max((z + 0.2).abs()));
    assert!(zdev < 1e-4, "{zdev}");
}

#[test]
fn coverage_error_far_outside_the_grid() {
    let (model, sol) = constant();
    let batch = simulate_gsde(&model, &scalar(&model, 1.0), &[5.0], 0.1, 1e-2, 2, 0).unwrap();
    let err = compute_components(&batch, &sol, &model).unwrap_err();
    assert!(matches!(err, crate::Error::Coverage { path: 0, .. }), "{err}");
    assert!(verify_bsde_residual(&batch, &sol, &model, 2.0).is_err());
}

#[test]
fn checkpoint_steps() {
    assert_eq!(checkpoints(1000), [250, 500, 750, 1000]);
    assert_eq!(checkpoints(10), [3, 5, 8, 10]);
}

#[test]
fn trace_csv_shape() {
    let (model, sol) = constant();
    let batch = simulate_gsde(&model, &scalar(&model, 1.0), &[0.0], 0.05, 1e-2, 2, 0).unwrap();
    let dec = compute_components(&batch, &sol, &model).unwrap();
    let mut out = Vec::new();
    dec.write_csv(&mut out).unwrap();
    let text = String::from_utf8(out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "path,t,X1,u,Z1,lnM,K,lnD,lnD_rec");
    assert_eq!(lines.len(), 1 + 2 * 6);
}
