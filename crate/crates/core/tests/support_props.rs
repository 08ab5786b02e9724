use std::collections::VecDeque;

use ics_core::support::{EvictionPolicy, Provenance, SupportEntry, SupportSet};
use ics_core::types::{Mask, Slice};
use proptest::prelude::*;

fn entry(tag: usize, provenance: Provenance) -> SupportEntry {
    let image = Slice::new(1, 1, tag, vec![tag as f32]).unwrap();
    SupportEntry::new(image, Mask::zeros(1, 1), provenance).unwrap()
}

fn tags(set: &SupportSet) -> Vec<usize> {
    set.entries().iter().map(|e| e.source_index).collect()
}

fn prov(gt: bool) -> Provenance {
    if gt {
        Provenance::GroundTruth
    } else {
        Provenance::Predicted
    }
}

proptest! {
    #[test]
    fn fifo_keeps_last_capacity_appended(
        capacity in 1usize..=8,
        initial in 1usize..=8,
        appends in prop::collection::vec(any::<bool>(), 0..200),
    ) {
        let initial = initial.min(capacity);
        let mut set = SupportSet::new(capacity, (1..=initial).map(|t| entry(t, Provenance::GroundTruth)).collect()).unwrap();
        let mut all: Vec<usize> = (1..=initial).collect();
        let mut last_seq = set.entries().last().unwrap().seq;
        for (i, gt) in appends.into_iter().enumerate() {
            let tag = initial + i + 1;
            set.append(entry(tag, prov(gt)), EvictionPolicy::Fifo).unwrap();
            all.push(tag);
            prop_assert!(set.len() <= capacity);
            let expect = &all[all.len().saturating_sub(capacity)..];
            prop_assert_eq!(tags(&set), expect.to_vec());
            let newest = set.entries().last().unwrap().seq;
            prop_assert!(newest > last_seq);
            last_seq = newest;
            prop_assert!(set.entries().windows(2).all(|w| w[0].seq < w[1].seq));
        }
    }

    #[test]
    fn pinning_matches_reference_model(
        capacity in 1usize..=8,
        initial in 1usize..=8,
        appends in prop::collection::vec(any::<bool>(), 0..200),
    ) {
        let initial = initial.min(capacity);
        let mut set = SupportSet::new(capacity, (1..=initial).map(|t| entry(t, Provenance::GroundTruth)).collect()).unwrap();
        let mut model: VecDeque<(usize, bool)> = (1..=initial).map(|t| (t, true)).collect();
        let mut gt_seen: Vec<usize> = (1..=initial).collect();
        for (i, gt) in appends.into_iter().enumerate() {
            let tag = initial + i + 1;
            set.append(entry(tag, prov(gt)), EvictionPolicy::PinGroundTruth).unwrap();
            model.push_back((tag, gt));
            if gt {
                gt_seen.push(tag);
            }
            while model.len() > capacity {
                let victim = model.iter().position(|&(_, g)| !g).unwrap_or(0);
                model.remove(victim);
            }
            prop_assert!(set.len() <= capacity);
            prop_assert_eq!(tags(&set), model.iter().map(|&(t, _)| t).collect::<Vec<_>>());
            if gt_seen.len() <= capacity {
                for t in &gt_seen {
                    prop_assert!(tags(&set).contains(t));
                }
            }
        }
    }
}

#[test]
fn pinning_hand_trace() {
    let mut set = SupportSet::new(3, vec![entry(1, Provenance::GroundTruth)]).unwrap();
    set.append(
        entry(2, Provenance::Predicted),
        EvictionPolicy::PinGroundTruth,
    )
    .unwrap();
    set.append(
        entry(3, Provenance::Predicted),
        EvictionPolicy::PinGroundTruth,
    )
    .unwrap();
    set.append(
        entry(4, Provenance::Predicted),
        EvictionPolicy::PinGroundTruth,
    )
    .unwrap();
    assert_eq!(tags(&set), vec![1, 3, 4]);
}
