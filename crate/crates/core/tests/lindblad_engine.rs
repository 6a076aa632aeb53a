use oscar_core::lindblad::{evolve_master, initial_density, DensityState, MasterOptions};
use oscar_core::model::ModelParams;
use oscar_core::schrodinger::initial_state;
use proptest::prelude::*;

fn final_state(rho: &DensityState, params: &ModelParams, tau: f64, step: f64) -> DensityState {
    let opts = MasterOptions {
        step: Some(step),
        sample_interval: tau,
        snapshot_times: vec![tau],
        ..Default::default()
    };
    evolve_master(rho, params, tau, &opts).unwrap().snapshots.pop().unwrap()
}

fn distance(a: &DensityState, b: &DensityState) -> f64 {
    (0..4)
        .map(|k| (&a.blocks[k] - &b.blocks[k]).iter().map(|c| c.norm()).fold(0.0, f64::max))
        .fold(0.0, f64::max)
}

#[test]
fn step_halving_converges_at_fourth_order() {
    let params = ModelParams::new(0.3, 10.0, 1e-2, 5.0).unwrap();
    let rho = initial_density(&initial_state(-3.0, 0.0, 0.4, 0.0, 40).unwrap());
    let h = 0.04;
    let coarse = final_state(&rho, &params, 4.0, h);
    let mid = final_state(&rho, &params, 4.0, h / 2.0);
    let fine = final_state(&rho, &params, 4.0, h / 4.0);
    let (e1, e2) = (distance(&coarse, &mid), distance(&mid, &fine));
    let order = (e1 / e2).log2();
    assert!((order - 4.0).abs() < 0.5, "observed order {order}");
    // Richardson estimate of the error left at the finest step
    assert!(e2 / 15.0 < 5e-6, "{e2}");
}

#[test]
fn spin_coherence_stays_zero_without_rf() {
    let params = ModelParams::new(0.3, 0.0, 1e-2, 5.0).unwrap();
    let rho = initial_density(&initial_state(-3.0, 0.0, 0.0, 0.0, 40).unwrap());
    let out = final_state(&rho, &params, 3.0, 0.02);
    for k in [1, 2, 3] {
        assert!(out.blocks[k].iter().all(|c| c.norm() == 0.0), "block {k}");
    }
    assert!((out.trace() - 1.0).abs() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn trace_and_hermiticity_are_preserved(
        z0 in -3.0f64..3.0, theta in 0.0f64..3.1, q_inv in 0.0f64..0.05, d in 1.0f64..10.0,
    ) {
        let params = ModelParams::new(0.3, 10.0, q_inv, d).unwrap();
        let rho = initial_density(&initial_state(z0, 0.0, theta, 0.5, 48).unwrap());
        let opts = MasterOptions { sample_interval: 0.5, positivity_every: 1, ..Default::default() };
        let traj = evolve_master(&rho, &params, 3.0, &opts).unwrap();
        for s in &traj.samples {
            prop_assert!((s.summary.trace - 1.0).abs() < 1e-10);
            prop_assert!(s.summary.hermiticity_defect < 1e-12);
            prop_assert!(s.summary.purity <= 1.0 + 1e-10);
        }
        prop_assert!(traj.min_eigenvalue.unwrap() > -1e-4);
    }
}
