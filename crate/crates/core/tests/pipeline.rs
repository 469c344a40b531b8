use stainlab_core::eval::{compare_methods, Assay, HistogramSpec};
use stainlab_core::synth::{build_dataset, Arm, Dataset, DatasetConfig, FovSpec, Split};
use stainlab_core::unmix::{LinearOptions, LinearSynthesizer, NmfConfig, NmfSynthesizer, SingleplexSynthesizer};
use stainlab_core::{Stain, StainMatrix};

fn small() -> DatasetConfig {
    DatasetConfig {
        fov: FovSpec {
            width: 128,
            height: 128,
            seed: 3,
            ..FovSpec::desk()
        },
        n_fovs: 2,
        patches_per_fov: 10,
        patch_size: 32,
        n_eval_fovs: 2,
        ..DatasetConfig::desk()
    }
}

#[test]
fn dataset_survives_write_and_load() {
    let ds = build_dataset(&small()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    ds.write(dir.path()).unwrap();
    let back = Dataset::load(dir.path()).unwrap();
    assert_eq!(back.config, ds.config);
    assert_eq!(back.records, ds.records);
    assert_eq!(back.patches, ds.patches);
    assert_eq!(back.eval.len(), ds.eval.len());
    for (a, b) in back.eval.iter().zip(&ds.eval) {
        assert_eq!(a.triplex, b.triplex);
        assert_eq!(a.singleplex, b.singleplex);
        assert_eq!(a.truth.stains(), b.truth.stains());
        for (pa, pb) in a.truth.planes().iter().zip(b.truth.planes()) {
            assert!(pa.iter().zip(pb).all(|(x, y)| *x == *y as f32 as f64));
        }
    }
}

#[test]
fn unpaired_pools_cover_every_marker() {
    let ds = build_dataset(&small()).unwrap();
    assert!(!ds.images(Arm::Triplex, None, Split::Train).is_empty());
    for m in Stain::MARKERS {
        let train = ds.images(Arm::Singleplex, Some(m), Split::Train);
        assert!(!train.is_empty(), "{m}");
        assert!(ds.eval.iter().all(|p| p.singleplex.contains_key(&m)));
    }
}

#[test]
fn classical_methods_compare_on_eval_fields() {
    let ds = build_dataset(&small()).unwrap();
    let nmf = NmfSynthesizer {
        config: NmfConfig {
            max_iters: 100,
            ..Default::default()
        },
    };
    let linear = LinearSynthesizer {
        stains: StainMatrix::default_triplex()
            .subset(&[Stain::QmDabsyl, Stain::Green, Stain::Hematoxylin])
            .unwrap(),
        options: LinearOptions::default(),
    };
    let methods: [&dyn SingleplexSynthesizer; 2] = [&nmf, &linear];
    let table = compare_methods(
        &ds.eval,
        &ds.config.stains,
        &methods,
        &[Stain::Green],
        &HistogramSpec::default(),
        Assay::CmetPdl1Egfr,
    )
    .unwrap();
    assert_eq!(table.cells.len(), 2);
    for c in &table.cells {
        let r = c.correlation.expect("stained fields give defined correlation");
        assert!((-1.0..=1.0).contains(&r), "{c:?}");
    }
    assert_eq!(table.get("nmf", Stain::Green).unwrap().reference, Some(0.8349));
    let text = table.to_text();
    assert!(text.contains("nmf") && text.contains("linear"));
}
