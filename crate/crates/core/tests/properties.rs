use proptest::prelude::*;
use sllbar::diagnostics::{identity_cross, identity_cubic_gradient};
use sllbar::model::theta_r;
use sllbar::spectral::{to_physical, to_spectral, Grid, Space, SpectralField};

fn coeffs(n: usize) -> impl Strategy<Value = [Vec<f64>; 3]> {
    let v = || prop::collection::vec(-1.0f64..1.0, n);
    (v(), v(), v()).prop_map(|(a, b, c)| [a, b, c])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn physical_roundtrip_recovers_coefficients(c in coeffs(12), len in 0.5f64..5.0) {
        let space = Space::new(Grid::new(&[len], &[12]).unwrap());
        let u = SpectralField::from_coeffs(&space, c).unwrap();
        let back = to_spectral(&to_physical(&u));
        prop_assert!(back.sub(&u).l2_norm() <= 1e-12 * (1.0 + u.l2_norm()));
    }

    #[test]
    fn cross_term_is_orthogonal(c in coeffs(36)) {
        let space = Space::new(Grid::new(&[1.0, 2.0], &[6, 6]).unwrap());
        let u = SpectralField::from_coeffs(&space, c).unwrap();
        prop_assert!(identity_cross(&u).abs() <= 1e-12);
    }

    #[test]
    fn cubic_gradient_identity_holds(c in coeffs(10)) {
        let space = Space::new(Grid::new(&[3.0], &[10]).unwrap());
        let u = SpectralField::from_coeffs(&space, c).unwrap();
        prop_assert!(identity_cubic_gradient(&u).residual.abs() <= 1e-8);
    }

    #[test]
    fn theta_is_a_nonincreasing_cutoff(x in 0.0f64..10.0, dx in 0.0f64..1.0, r in 0.1f64..4.0) {
        let a = theta_r(x, r).unwrap();
        let b = theta_r(x + dx, r).unwrap();
        prop_assert!((0.0..=1.0).contains(&a));
        prop_assert!(b <= a);
        if x <= r { prop_assert_eq!(a, 1.0); }
        if x >= 2.0 * r { prop_assert_eq!(a, 0.0); }
    }
}
