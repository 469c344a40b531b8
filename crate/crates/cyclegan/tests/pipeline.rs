use image::{Rgb, RgbImage};
use stainlab_core::eval::Assay;
use stainlab_core::synth::{build_dataset, DatasetConfig, FovSpec};
use stainlab_core::Stain;
use stainlab_cyclegan::{
    checkpoint_path, infer_singleplex, load_models, save_models, train, CycleGanConfig, CycleGanModels, Domain, GanSynthesizer,
    TrainData,
};

fn small(stain: Stain) -> CycleGanConfig {
    CycleGanConfig {
        stain_target: stain,
        base_channels: 4,
        residual_blocks: 1,
        patch_size: 32,
        tile_overlap: 16,
        steps: 3,
        pool_size: 4,
        ..Default::default()
    }
}

fn tiny_dataset() -> stainlab_core::synth::Dataset {
    build_dataset(&DatasetConfig {
        fov: FovSpec {
            width: 96,
            height: 96,
            ..FovSpec::desk()
        },
        n_fovs: 2,
        patches_per_fov: 10,
        patch_size: 32,
        n_eval_fovs: 1,
        ..DatasetConfig::desk()
    })
    .unwrap()
}

#[test]
fn checkpoint_round_trip_is_bitwise() {
    let ds = tiny_dataset();
    let cfg = small(Stain::Green);
    let state = train(&cfg, &TrainData::from_dataset(&ds, Stain::Green, Domain::Od).unwrap(), None).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = checkpoint_path(dir.path(), cfg.assay, Stain::Green);
    save_models(&path, &state.models, &cfg, state.step).unwrap();
    let (loaded, loaded_cfg) = load_models(&path).unwrap();
    assert_eq!(loaded_cfg, cfg);
    let triplex = &ds.eval[0].triplex;
    let a = infer_singleplex(&state.models, triplex, &cfg).unwrap();
    let b = infer_singleplex(&loaded, triplex, &loaded_cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(state.models.store.len(), loaded.store.len());
    for ((_, pa), (_, pb)) in state.models.store.iter().zip(loaded.store.iter()) {
        assert_eq!(pa.name, pb.name);
        let bits = |t: &[f64]| t.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(pa.value.data()), bits(pb.value.data()), "{}", pa.name);
    }
}

#[test]
fn one_checkpoint_per_stain() {
    let ds = tiny_dataset();
    let dir = tempfile::tempdir().unwrap();
    for s in Stain::MARKERS {
        let cfg = small(s);
        let state = train(&cfg, &TrainData::from_dataset(&ds, s, Domain::Od).unwrap(), None).unwrap();
        save_models(&checkpoint_path(dir.path(), Assay::CmetPdl1Egfr, s), &state.models, &cfg, state.step).unwrap();
    }
    let mut files: Vec<_> = std::fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    files.sort();
    assert_eq!(files.len(), 3);
    let gan = GanSynthesizer::load(dir.path(), Assay::CmetPdl1Egfr, &Stain::MARKERS).unwrap();
    assert_eq!(gan.models.len(), 3);
    for (s, (_, cfg)) in &gan.models {
        assert_eq!(cfg.stain_target, *s);
    }
    let (g, t) = (&gan.models[&Stain::Green].0, &gan.models[&Stain::Tamra].0);
    assert_ne!(
        g.store.iter().next().unwrap().1.value.data(),
        t.store.iter().next().unwrap().1.value.data()
    );
}

#[test]
fn full_field_output_keeps_input_shape() {
    let cfg = small(Stain::Green);
    let models = CycleGanModels::build(&cfg).unwrap();
    let triplex = RgbImage::from_fn(1586, 1540, |x, y| Rgb([(x % 251) as u8, (y % 241) as u8, 200]));
    for domain in [Domain::Od, Domain::Rgb] {
        let c = CycleGanConfig {
            input_domain: domain,
            ..cfg.clone()
        };
        let out = infer_singleplex(&models, &triplex, &c).unwrap();
        assert_eq!(out.dimensions(), (1586, 1540));
    }
}
