// SPDX-License-Identifier: Apache-2.0

mod common;

use adpc_core::frontdoor::{fda_mdo, fda_out, Eq8Values};
use adpc_core::nn::{softmax, FeatureVar, ParamStore, Tape};
use common::norm_suite::fuzz;
use common::{random_matrix, row_stochastic_error};
use ndarray::Array2;
use proptest::prelude::*;

#[test]
fn fuzzed_forward_passes_stay_normalized_and_finite() {
    let r = fuzz(100, 9);
    assert_eq!(r.cases, 100);
    assert!(r.matrices >= 100 * 5);
    assert!(r.passes(1e-12), "{r:?}");
}

#[test]
fn softmax_survives_extreme_scores() {
    let s = Array2::from_shape_vec((2, 3), vec![1e300, -1e300, 0.0, 709.0, 710.0, -745.0]).unwrap();
    let p = softmax(&s).unwrap();
    assert!(row_stochastic_error(&p) <= 1e-12);
    assert_eq!(p[[0, 0]], 1.0);
    assert!(softmax(&Array2::from_elem((1, 2), f64::NAN)).is_err());
}

proptest! {
    #[test]
    fn front_door_products_preserve_shape(n in 1usize..9, d in 1usize..6, seed in any::<u64>(), masked in any::<u16>()) {
        let store = ParamStore::new();
        let mut t = Tape::new(&store);
        let mut mask: Vec<bool> = (0..n).map(|i| masked & (1 << i) == 0).collect();
        mask[0] = true;
        let f = FeatureVar::new(t.input(random_matrix(n, d, seed)), Some(mask.clone()));
        let m = FeatureVar::new(t.input(random_matrix(n, d, seed ^ 1)), Some(mask.clone()));
        for values in [Eq8Values::F, Eq8Values::M] {
            let m_do = fda_mdo(&mut t, &f, &m, values).unwrap();
            let out = fda_out(&mut t, &f, &m, &m_do.out).unwrap();
            prop_assert_eq!(t.shape(m_do.out.var), (n, d));
            prop_assert_eq!(t.shape(out.out.var), (n, d));
            prop_assert!(row_stochastic_error(t.value(m_do.weights)) <= 1e-12);
            prop_assert!(row_stochastic_error(t.value(out.weights)) <= 1e-12);
        }
    }

    #[test]
    fn mismatched_token_counts_are_rejected(n in 1usize..6, extra in 1usize..4) {
        let store = ParamStore::new();
        let mut t = Tape::new(&store);
        let f = FeatureVar::new(t.input(random_matrix(n, 4, 1)), None);
        let m = FeatureVar::new(t.input(random_matrix(n + extra, 4, 2)), None);
        prop_assert!(fda_mdo(&mut t, &f, &m, Eq8Values::F).is_err());
    }
}
