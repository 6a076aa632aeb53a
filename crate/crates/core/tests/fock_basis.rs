use oscar_core::fock::{
    self, basis_on_grid, coherent_coefficients, coherent_leakage, hermite_function,
    reconstruct_on_grid, PositionGrid,
};
use oscar_core::C64;
use proptest::prelude::*;
use statrs::distribution::{DiscreteCDF, Poisson};

#[test]
fn orthonormal_on_a_wide_grid() {
    let grid = PositionGrid::new(-25.0, 25.0, 5001).unwrap();
    let n = 120;
    let basis = basis_on_grid(n, &grid);
    let w: Vec<f64> = (0..grid.len()).map(|k| grid.weight(k)).collect();
    for a in 0..n {
        for b in 0..=a {
            let overlap: f64 = (0..grid.len()).map(|k| w[k] * basis[(k, a)] * basis[(k, b)]).sum();
            let target = if a == b { 1.0 } else { 0.0 };
            assert!((overlap - target).abs() < 1e-8, "<{a}|{b}> = {overlap}");
        }
    }
}

#[test]
fn high_order_values() {
    // u_n(z) from mpmath at 50 digits
    let cases = [
        (50, 0.0, -0.25168329882087150),
        (100, 3.0, -0.042258638664585353),
        (199, 18.0, -0.071417617336210647),
        (127, -12.5, 0.18500793722883966),
    ];
    for (n, z, expected) in cases {
        let v = hermite_function(n, z);
        assert!((v - expected).abs() < 1e-12 * expected.abs().max(1.0), "u_{n}({z}) = {v}");
    }
}

#[test]
fn position_matrix_is_tridiagonal_and_symmetric() {
    let x = fock::position_matrix(10);
    for i in 0..10 {
        for j in 0..10 {
            assert_eq!(x[(i, j)], x[(j, i)]);
            if i.abs_diff(j) != 1 {
                assert_eq!(x[(i, j)], 0.0);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn leakage_matches_poisson_tail(re in -8.0f64..8.0, im in -8.0f64..8.0, extra in 0usize..60) {
        let alpha = C64::new(re, im);
        let mean = alpha.norm_sqr();
        prop_assume!(mean > 0.1);
        let size = (mean.ceil() as usize) + extra + 1;
        let tail = Poisson::new(mean).unwrap().sf((size - 1) as u64);
        let ours = coherent_leakage(alpha, size);
        prop_assert!((ours - tail).abs() <= 1e-12 + 1e-9 * tail, "{ours} vs {tail}");
    }

    #[test]
    fn coherent_state_is_normalized(re in -6.0f64..6.0, im in -6.0f64..6.0) {
        let alpha = C64::new(re, im);
        let size = fock::recommended_basis_size(alpha);
        let c = coherent_coefficients(alpha, size).unwrap();
        let norm: f64 = c.iter().map(|v| v.norm_sqr()).sum();
        prop_assert!((norm - 1.0).abs() < 1e-8);
    }

    #[test]
    fn grid_round_trip(re in -4.0f64..4.0, im in -4.0f64..4.0) {
        // project the grid wavefunction back onto the basis
        let alpha = C64::new(re, im);
        let size = 80;
        let c = coherent_coefficients(alpha, size).unwrap();
        let grid = PositionGrid::new(-18.0, 18.0, 3601).unwrap();
        let psi = reconstruct_on_grid(&c, &grid);
        let basis = basis_on_grid(size, &grid);
        for n in (0..size).step_by(7) {
            let back: C64 = (0..grid.len()).map(|k| psi[k] * (grid.weight(k) * basis[(k, n)])).sum();
            prop_assert!((back - c[n]).norm() < 1e-9, "n = {n}");
        }
    }
}
