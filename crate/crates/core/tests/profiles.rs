//! Checks on the shipped workload profiles, baselines and configurations.

use std::path::PathBuf;

use photonic_tdm::arch::{calibrate_energy_scale, load_baseline, load_config};
use photonic_tdm::devices::DeviceCatalog;
use photonic_tdm::workload::{load_workload, LayerKind, WorkloadModel};

fn repo() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn load(name: &str) -> WorkloadModel {
    load_workload(repo().join(format!("models/{name}.json"))).unwrap()
}

const VARIANTS: [(&str, Option<(u32, u32)>); 5] = [
    ("", None),
    ("_crosslight", Some((16, 16))),
    ("_holylight", Some((4, 4))),
    ("_lightbulb", Some((1, 1))),
    ("_robin", Some((1, 4))),
];

#[test]
fn parameter_totals_and_depths() {
    for (name, params, depth) in [
        ("alexnet", 38_413_156, 7),
        ("resnet20", 271_786, 20),
        ("svhn_cnn", 552_362, 7),
    ] {
        for (suffix, _) in VARIANTS {
            let m = load(&format!("{name}{suffix}"));
            assert_eq!(m.param_count(), params, "{name}{suffix}");
            assert_eq!(m.layers.len(), depth);
            assert_eq!(m.layers.last().unwrap().kind(), LayerKind::Fc);
        }
    }
}

#[test]
fn variant_bitwidths() {
    for name in ["alexnet", "resnet20", "svhn_cnn"] {
        for (suffix, bits) in VARIANTS {
            let m = load(&format!("{name}{suffix}"));
            if let Some((w, a)) = bits {
                assert!(
                    m.layers.iter().all(|l| l.weight_bits == w && l.act_bits == a),
                    "{name}{suffix}"
                );
                let mut expected = load(name).with_homogeneous_bits(w, a);
                expected.name = m.name.clone();
                assert_eq!(m, expected);
            }
        }
    }
    let weights = |n: &str| load(n).layers.iter().map(|l| l.weight_bits).collect::<Vec<_>>();
    let acts = |n: &str| load(n).layers.iter().map(|l| l.act_bits).collect::<Vec<_>>();
    assert_eq!(weights("alexnet"), [6, 6, 4, 4, 4, 4, 4]);
    assert_eq!(acts("alexnet"), [6, 6, 4, 4, 4, 4, 4]);
    assert_eq!(weights("svhn_cnn"), [8, 8, 4, 4, 4, 4, 4]);
    assert_eq!(acts("svhn_cnn"), [8, 8, 4, 4, 4, 8, 4]);
    let mut rw = vec![2];
    rw.extend([4; 19]);
    assert_eq!(weights("resnet20"), rw);
    assert_eq!(
        acts("resnet20"),
        [4, 4, 4, 4, 4, 4, 4, 4, 6, 6, 6, 8, 6, 8, 10, 10, 10, 10, 8, 8]
    );
}

#[test]
fn sixteen_bit_footprints_match_table_scale() {
    for (name, mb) in [("alexnet", 650.0), ("resnet20", 70.0), ("svhn_cnn", 134.0)] {
        let m = load(&format!("{name}_crosslight"));
        assert!((m.footprint_mb() - mb).abs() < 1e-9, "{name}: {}", m.footprint_mb());
    }
}

#[test]
fn shipped_profiles_round_trip() {
    for name in ["alexnet", "resnet20_robin", "svhn_cnn"] {
        let m = load(name);
        assert_eq!(WorkloadModel::from_json_str(&m.to_json_string()).unwrap(), m);
    }
}

#[test]
fn reference_config_carries_calibrated_scale() {
    let cfg = load_config(repo().join("configs/reference.json")).unwrap();
    assert_eq!(cfg.key(), (50, 20, 4, 200, 100));
    let scale = calibrate_energy_scale(&DeviceCatalog::default()).unwrap();
    assert!((cfg.calibration.energy_scale / scale - 1.0).abs() < 1e-12);
}

#[test]
fn baselines_bits() {
    for (name, w, a) in [
        ("crosslight", 16, 16),
        ("holylight", 4, 4),
        ("lightbulb", 1, 1),
        ("robin", 1, 4),
    ] {
        let spec = load_baseline(repo().join(format!("baselines/{name}.json"))).unwrap();
        assert_eq!((spec.name.as_str(), spec.weight_bits, spec.act_bits), (name, w, a));
        assert!(spec.single_step);
    }
}
