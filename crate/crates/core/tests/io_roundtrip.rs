use ics_core::cascade::{run_ics, CascadeConfig, InitialSupportSpec, Method};
use ics_core::harness::{gen_phantom, PhantomConfig};
use ics_core::io::{load_case, read_nifti, write_nifti, write_run_report, RunReport};
use ics_core::segmenter::ReferenceSegmenter;
use ics_core::types::{Slice, Spacing, Volume};
use proptest::prelude::*;

fn volume() -> impl Strategy<Value = Volume> {
    (1usize..=9, 1usize..=9, 1usize..=5, 0.1f32..4.0)
        .prop_flat_map(|(w, h, n, dz)| {
            (
                Just((w, h, dz)),
                prop::collection::vec(prop::collection::vec(-1e6f32..1e6, w * h), n),
            )
        })
        .prop_map(|((w, h, dz), planes)| {
            let slices = planes
                .into_iter()
                .enumerate()
                .map(|(i, d)| Slice::new(w, h, i + 1, d).unwrap())
                .collect();
            let spacing = Spacing {
                dx: 0.5,
                dy: 0.75,
                dz,
            };
            Volume::new("vol", spacing, slices).unwrap()
        })
}

fn same_voxels(a: &Volume, b: &Volume) -> bool {
    a.dims() == b.dims()
        && a.len() == b.len()
        && a.slices().iter().zip(b.slices()).all(|(x, y)| {
            x.data()
                .iter()
                .zip(y.data())
                .all(|(p, q)| p.to_bits() == q.to_bits())
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn write_then_read_is_voxel_exact(v in volume(), gz in any::<bool>()) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(if gz { "vol.nii.gz" } else { "vol.nii" });
        write_nifti(&v, &path).unwrap();
        let back = read_nifti(&path).unwrap();
        prop_assert!(same_voxels(&v, &back));
        prop_assert_eq!(back.id(), "vol");
        prop_assert!((back.spacing().dz - v.spacing().dz).abs() < 1e-6);
    }
}

#[test]
fn loading_binary_labels_is_idempotent() {
    let bundle = gen_phantom(&PhantomConfig {
        n_slices: 4,
        width: 16,
        height: 16,
        radius: 4.0,
        center: (7.5, 7.5),
        ..PhantomConfig::constant(0)
    })
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let img = dir.path().join("c_image.nii.gz");
    let lbl = dir.path().join("c_label.nii.gz");
    write_nifti(&bundle.image, &img).unwrap();
    let label_vol = Volume::new(
        "c",
        Spacing::default(),
        bundle
            .labels
            .iter()
            .enumerate()
            .map(|(i, m)| {
                Slice::new(16, 16, i + 1, m.data().iter().map(|&v| v as f32).collect()).unwrap()
            })
            .collect(),
    )
    .unwrap();
    write_nifti(&label_vol, &lbl).unwrap();
    let loaded = load_case(&img, &lbl, "LV", 2).unwrap();
    assert_eq!(loaded.labels, bundle.labels);
    assert_eq!(loaded.region, "LV");
}

#[test]
fn run_report_layout_is_deterministic() {
    let bundle = gen_phantom(&PhantomConfig {
        n_slices: 6,
        width: 16,
        height: 16,
        radius: 4.0,
        center: (5.0, 7.5),
        ..PhantomConfig::drifting_disk(2)
    })
    .unwrap();
    let initial = InitialSupportSpec::centered(2, 6).unwrap();
    let cfg = CascadeConfig::default();
    let result = run_ics(&bundle, &initial, &mut ReferenceSegmenter::default(), &cfg).unwrap();
    let report = RunReport::build(&bundle, &initial, &cfg, Method::Ics, "ref", &result).unwrap();
    assert_eq!(report.run_id(), "drifting-disk_phantom_ics_m5_s3");

    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let ra = write_run_report(&report, a.path()).unwrap();
    let rb = write_run_report(&report, b.path()).unwrap();
    for name in ["masks.nii.gz", "per_slice.csv", "report.txt"] {
        let (x, y) = (
            std::fs::read(ra.join(name)).unwrap(),
            std::fs::read(rb.join(name)).unwrap(),
        );
        assert_eq!(x, y, "{name} differs between writes");
    }
    let csv = std::fs::read_to_string(ra.join("per_slice.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next(),
        Some("case,region,method,m,seed_start,slice,dsc")
    );
    assert_eq!(lines.count(), 4);
    let masks = read_nifti(ra.join("masks.nii.gz")).unwrap();
    assert_eq!(masks.len(), 6);
    let txt = std::fs::read_to_string(ra.join("report.txt")).unwrap();
    assert!(txt.contains("[stats]") && txt.contains("mean_dsc = "));
}
