use std::collections::BTreeSet;

use ics_core::cascade::{
    run_baseline, run_ics, run_split, CascadeConfig, Direction, InitialSupportSpec, Method,
};
use ics_core::harness::{gen_phantom, PhantomConfig};
use ics_core::io::CaseBundle;
use ics_core::par::Exec;
use ics_core::segmenter::{BackendError, RefSegParams, ReferenceSegmenter};
use proptest::prelude::*;

fn backend() -> ReferenceSegmenter {
    ReferenceSegmenter::new(RefSegParams {
        patch_size: 3,
        search_radius: 2,
        k: 3,
        bandwidth: 0.5,
    })
    .unwrap()
    .with_exec(Exec::Sequential)
}

fn drifting(n: usize, seed: u64) -> CaseBundle {
    gen_phantom(&PhantomConfig {
        n_slices: n,
        width: 16,
        height: 16,
        radius: 3.0,
        center: (4.0, 7.5),
        drift_per_slice: (0.5, 0.0),
        noise_std: 0.1,
        ..PhantomConfig::drifting_disk(seed)
    })
    .unwrap()
}

fn block() -> impl Strategy<Value = (usize, usize, usize)> {
    (3usize..=12)
        .prop_flat_map(|n| (Just(n), 1..=n))
        .prop_flat_map(|(n, count)| (Just(n), Just(count), 1..=n - count + 1))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn every_unlabelled_slice_predicted_once(
        (n, count, start) in block(),
        capacity_extra in 0usize..3,
        augment in any::<bool>(),
        pin in any::<bool>(),
        seed in any::<u64>(),
    ) {
        let bundle = drifting(n, seed);
        let initial = InitialSupportSpec::block(start, count, n).unwrap();
        let cfg = CascadeConfig {
            capacity: count + capacity_extra,
            augment,
            pin_initial: pin,
            ..CascadeConfig::default()
        };
        let r = run_ics(&bundle, &initial, &mut backend(), &cfg).unwrap();
        let predicted: BTreeSet<usize> = r.masks.keys().copied().collect();
        let expected: BTreeSet<usize> = (1..=n).filter(|i| !initial.contains(*i)).collect();
        prop_assert_eq!(predicted, expected);
        for (&i, &d) in &r.direction_of {
            prop_assert_eq!(d == Direction::Forward, i > initial.end());
        }
        prop_assert!(r.max_support_len <= cfg.capacity);
        prop_assert!(r.boundary.is_empty());
    }

    #[test]
    fn directions_are_independent(
        (n, count, start) in block(),
        seed in any::<u64>(),
    ) {
        let bundle = drifting(n, seed);
        let initial = InitialSupportSpec::block(start, count, n).unwrap();
        let cfg = CascadeConfig { capacity: count + 1, augment: false, ..CascadeConfig::default() };
        let sequential = run_ics(&bundle, &initial, &mut backend(), &cfg).unwrap();
        let make = || Ok::<_, BackendError>(backend());
        let split = run_split(Method::Ics, &bundle, &initial, make, &cfg, Exec::Parallel).unwrap();
        prop_assert_eq!(&sequential.masks, &split.masks);
        prop_assert_eq!(&sequential.direction_of, &split.direction_of);
    }

    #[test]
    fn identical_slices_make_cascade_equal_baseline(
        n in 2usize..=10,
        radius in 2.0f64..6.0,
        count in 1usize..=2,
    ) {
        let bundle = gen_phantom(&PhantomConfig {
            n_slices: n,
            width: 16,
            height: 16,
            radius,
            center: (7.5, 7.5),
            ..PhantomConfig::constant(0)
        })
        .unwrap();
        let count = count.min(n - 1);
        let initial = InitialSupportSpec::centered(count, n).unwrap();
        let cfg = CascadeConfig::default();
        let ics = run_ics(&bundle, &initial, &mut backend(), &cfg).unwrap();
        let base = run_baseline(&bundle, &initial, &mut backend(), &cfg).unwrap();
        prop_assert_eq!(&ics.masks, &base.masks);
        for (i, m) in &ics.masks {
            prop_assert_eq!(m, bundle.label(*i).unwrap());
        }
    }
}

#[test]
fn faithful_loops_predict_boundary_slices() {
    let bundle = drifting(8, 3);
    let initial = InitialSupportSpec::block(4, 2, 8).unwrap();
    let cfg = CascadeConfig {
        faithful_loops: true,
        ..CascadeConfig::default()
    };
    let r = run_ics(&bundle, &initial, &mut backend(), &cfg).unwrap();
    let boundary: Vec<(Direction, usize)> =
        r.boundary.iter().map(|b| (b.direction, b.index)).collect();
    assert_eq!(
        boundary,
        vec![(Direction::Forward, 5), (Direction::Backward, 4)]
    );
    assert_eq!(
        r.masks.keys().copied().collect::<Vec<_>>(),
        vec![1, 2, 3, 6, 7, 8]
    );
    let base = run_baseline(&bundle, &initial, &mut backend(), &cfg).unwrap();
    assert!(base.boundary.is_empty());
}

#[test]
fn block_at_volume_start_has_no_backward_pass() {
    let bundle = drifting(6, 1);
    let initial = InitialSupportSpec::block(1, 2, 6).unwrap();
    let r = run_ics(&bundle, &initial, &mut backend(), &CascadeConfig::default()).unwrap();
    assert!(r.direction_of.values().all(|d| *d == Direction::Forward));
    assert_eq!(r.masks.len(), 4);
}
