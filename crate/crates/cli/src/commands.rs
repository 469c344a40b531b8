use std::fs::File;
use std::io::{BufWriter, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use image::{imageops, Rgb, RgbImage};
use rand::Rng;
use serde::Serialize;
use stainlab_core::eval::{compare_methods, write_report, Category, ComparisonTable};
use stainlab_core::io::{read_png, write_atomic, write_png};
use stainlab_core::synth::{build_dataset, Dataset};
use stainlab_core::unmix::{LinearOptions, LinearSynthesizer, NmfSynthesizer, SingleplexSynthesizer};
use stainlab_core::Stain;
use stainlab_cyclegan::{ablate_domain, checkpoint_path, infer_singleplex, save_models, AblationReport, GanSynthesizer, TrainData, TrainState};
use stainlab_review::{consensus_from_log, ConsensusReport, Study, StudyBuilder};

use crate::config::RunConfig;
use crate::error::{CliError, Result};

/// File the resolved configuration is echoed to in every run directory.
pub const RESOLVED_CONFIG: &str = "config.resolved.json";

/// Create a fresh `{root}/{command}-{timestamp}-s{seed}` directory and echo the config into it.
pub fn create_run_dir(root: &Path, command: &str, config: &RunConfig) -> Result<PathBuf> {
    std::fs::create_dir_all(root)?;
    let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%S");
    let base = format!("{command}-{stamp}-s{}", config.seed);
    let mut n = 1;
    let dir = loop {
        let name = if n == 1 { base.clone() } else { format!("{base}-{n}") };
        let dir = root.join(name);
        match std::fs::create_dir(&dir) {
            Ok(()) => break dir,
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => n += 1,
            Err(e) => return Err(e.into()),
        }
    };
    write_atomic(&dir.join(RESOLVED_CONFIG), serde_json::to_string_pretty(config)?.as_bytes())?;
    Ok(dir)
}

fn dataset(config: &RunConfig) -> Result<Dataset> {
    Ok(match &config.data_dir {
        Some(dir) => Dataset::load(dir)?,
        None => build_dataset(&config.dataset)?,
    })
}

fn models_dir(config: &RunConfig) -> Result<&Path> {
    config
        .models_dir
        .as_deref()
        .ok_or_else(|| CliError::NotReady("no models directory given; run `stainlab train` first and pass --models".into()))
}

/// Build the dataset and write it under `out/dataset`.
pub fn synth(config: &RunConfig, out: &Path) -> Result<PathBuf> {
    let ds = build_dataset(&config.dataset)?;
    let dir = out.join("dataset");
    ds.write(&dir)?;
    Ok(dir)
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainSummary {
    pub stain: Stain,
    pub checkpoint: PathBuf,
    pub steps: usize,
    pub first_cycle_loss: f64,
    pub final_cycle_loss: f64,
}

fn train_one(config: &RunConfig, ds: &Dataset, stain: Stain, out: &Path) -> Result<TrainSummary> {
    let cg = config.cyclegan_for(stain);
    let data = TrainData::from_dataset(ds, stain, cg.input_domain)?;
    let mut metrics = BufWriter::new(File::create(out.join(format!("metrics_{}.jsonl", stain.slug())))?);
    let mut state = TrainState::new(cg.clone())?;
    state.train(&data, cg.steps, Some(&mut metrics))?;
    metrics.flush()?;
    let models = out.join("models");
    std::fs::create_dir_all(&models)?;
    let checkpoint = checkpoint_path(&models, cg.assay, stain);
    save_models(&checkpoint, &state.models, &cg, state.step)?;
    let h = &state.history;
    let window = 10.min(h.len()).max(1);
    let mean = |r: &[stainlab_cyclegan::LossRecord]| r.iter().map(|x| x.cycle_total()).sum::<f64>() / r.len().max(1) as f64;
    Ok(TrainSummary {
        stain,
        checkpoint,
        steps: state.step,
        first_cycle_loss: mean(&h[..window.min(h.len())]),
        final_cycle_loss: mean(&h[h.len().saturating_sub(window)..]),
    })
}

/// Train one model per requested marker; with several markers each runs on its own thread.
pub fn train(config: &RunConfig, stains: &[Stain], out: &Path) -> Result<Vec<TrainSummary>> {
    let ds = dataset(config)?;
    let results: Vec<Result<TrainSummary>> = if stains.len() == 1 {
        vec![train_one(config, &ds, stains[0], out)]
    } else {
        std::thread::scope(|scope| {
            let handles: Vec<_> = stains
                .iter()
                .map(|s| {
                    let ds = &ds;
                    scope.spawn(move || train_one(config, ds, *s, out))
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().unwrap_or_else(|_| Err(CliError::Failed("training thread panicked".into()))))
                .collect()
        })
    };
    let summaries = results.into_iter().collect::<Result<Vec<_>>>()?;
    write_atomic(&out.join("train.json"), serde_json::to_string_pretty(&summaries)?.as_bytes())?;
    Ok(summaries)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Gan,
    Nmf,
    Linear,
}

impl std::str::FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "gan" => Ok(Method::Gan),
            "nmf" => Ok(Method::Nmf),
            "linear" => Ok(Method::Linear),
            _ => Err(format!("unknown method {s:?}; expected gan, nmf or linear")),
        }
    }
}

/// Three panels side by side: triplex, synthetic singleplex, ground truth
/// (white when no ground truth is supplied).
pub fn triptych(triplex: &RgbImage, synthetic: &RgbImage, truth: Option<&RgbImage>) -> RgbImage {
    let (w, h) = triplex.dimensions();
    let mut out = RgbImage::from_pixel(w * 3, h, Rgb([255; 3]));
    imageops::replace(&mut out, triplex, 0, 0);
    imageops::replace(&mut out, synthetic, i64::from(w), 0);
    if let Some(t) = truth {
        imageops::replace(&mut out, t, 2 * i64::from(w), 0);
    }
    out
}

/// Synthesize one singleplex from a triplex image; writes `singleplex_<stain>.png`
/// and `triptych_<stain>.png` into `out`.
pub fn unmix(config: &RunConfig, method: Method, input: &Path, truth: Option<&Path>, out: &Path) -> Result<PathBuf> {
    let triplex = read_png(input)?;
    let truth = truth.map(read_png).transpose()?;
    if let Some(t) = &truth {
        if t.dimensions() != triplex.dimensions() {
            return Err(CliError::Failed("ground truth and input differ in size".into()));
        }
    }
    let stain = config.stain;
    let synthetic = match method {
        Method::Gan => GanSynthesizer::load(models_dir(config)?, config.assay, &[stain])?.synthesize(&triplex, stain)?,
        Method::Nmf => NmfSynthesizer {
            config: config.nmf.clone(),
        }
        .synthesize(&triplex, stain)?,
        Method::Linear => LinearSynthesizer {
            stains: config.dataset.stains.subset(&config.linear_rows())?,
            options: LinearOptions::default(),
        }
        .synthesize(&triplex, stain)?,
    };
    let path = out.join(format!("singleplex_{}.png", stain.slug()));
    write_png(&path, &synthetic)?;
    write_png(
        &out.join(format!("triptych_{}.png", stain.slug())),
        &triptych(&triplex, &synthetic, truth.as_ref()),
    )?;
    Ok(path)
}

/// Histogram-correlation comparison of GAN and NMF against ground truth.
pub fn eval(config: &RunConfig, stains: &[Stain], out: &Path) -> Result<ComparisonTable> {
    let gan = GanSynthesizer::load(models_dir(config)?, config.assay, stains)?;
    let nmf = NmfSynthesizer {
        config: config.nmf.clone(),
    };
    let ds = dataset(config)?;
    let methods: [&dyn SingleplexSynthesizer; 2] = [&gan, &nmf];
    let table = compare_methods(&ds.eval, &ds.config.stains, &methods, stains, &config.histogram, config.assay)?;
    write_report(out, "comparison", &table, Some(&table.to_csv()?))?;
    write_atomic(&out.join("comparison.txt"), table.to_text().as_bytes())?;
    Ok(table)
}

/// OD-versus-RGB training comparison for the configured marker.
pub fn ablate(config: &RunConfig, out: &Path) -> Result<AblationReport> {
    let ds = dataset(config)?;
    let report = ablate_domain(&ds, &config.cyclegan)?;
    write_report(out, "ablation", &report, Some(&report.to_csv()))?;
    write_atomic(&out.join("ablation.txt"), report.to_text().as_bytes())?;
    Ok(report)
}

/// Build a reader study from the evaluation fields: the ground-truth
/// singleplex stands in for the adjacent section, paired with the GAN output.
pub fn build_study(config: &RunConfig, stains: &[Stain], dir: &Path) -> Result<()> {
    let gan = GanSynthesizer::load(models_dir(config)?, config.assay, stains)?;
    let ds = dataset(config)?;
    let secret = hex::encode(rand::rng().random::<[u8; 16]>());
    let mut builder = StudyBuilder::new(dir, secret)?;
    for pair in &ds.eval {
        for s in stains {
            let adjacent = pair
                .singleplex
                .get(s)
                .ok_or_else(|| CliError::Failed(format!("evaluation field {} lacks {s}", pair.fov)))?;
            let synthetic = infer_singleplex(&gan.models[s].0, &pair.triplex, &gan.models[s].1)?;
            builder.add_pair(config.assay, *s, pair.fov, adjacent, &synthetic)?;
        }
    }
    builder.finish()?;
    Ok(())
}

/// Serve a study directory until interrupted.
pub fn serve(study_dir: &Path, addr: SocketAddr) -> Result<()> {
    let study = Arc::new(Study::open(study_dir)?);
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    eprintln!("serving {} on http://{addr}", study_dir.display());
    rt.block_on(stainlab_review::serve(study, addr))?;
    Ok(())
}

/// Consensus computed from an exported score log.
pub fn consensus(log: &Path, category: Category, out: &Path) -> Result<ConsensusReport> {
    let text = std::fs::read_to_string(log)?;
    let report = consensus_from_log(&text, category)?;
    write_report(out, "consensus", &report, None)?;
    write_atomic(&out.join("consensus_adjacent.csv"), report.adjacent.to_csv()?.as_bytes())?;
    write_atomic(&out.join("consensus_synthetic.csv"), report.synthetic.to_csv()?.as_bytes())?;
    Ok(report)
}

/// Markers a command acts on.
pub fn stains_for(config: &RunConfig, all: bool) -> Vec<Stain> {
    if all {
        Stain::MARKERS.to_vec()
    } else {
        vec![config.stain]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triptych_places_panels_left_to_right() {
        let a = RgbImage::from_pixel(4, 3, Rgb([1, 2, 3]));
        let b = RgbImage::from_pixel(4, 3, Rgb([4, 5, 6]));
        let c = RgbImage::from_pixel(4, 3, Rgb([7, 8, 9]));
        let t = triptych(&a, &b, Some(&c));
        assert_eq!(t.dimensions(), (12, 3));
        assert_eq!(t.get_pixel(0, 0).0, [1, 2, 3]);
        assert_eq!(t.get_pixel(5, 2).0, [4, 5, 6]);
        assert_eq!(t.get_pixel(11, 1).0, [7, 8, 9]);
        assert_eq!(triptych(&a, &b, None).get_pixel(8, 0).0, [255; 3]);
    }

    #[test]
    fn run_dirs_are_unique_and_echo_config() {
        let root = tempfile::tempdir().unwrap();
        let c = RunConfig::default();
        let a = create_run_dir(root.path(), "synth", &c).unwrap();
        let b = create_run_dir(root.path(), "synth", &c).unwrap();
        assert_ne!(a, b);
        let echoed: RunConfig = serde_json::from_str(&std::fs::read_to_string(a.join(RESOLVED_CONFIG)).unwrap()).unwrap();
        assert_eq!(echoed.seed, c.seed);
    }

    #[test]
    fn method_names_parse() {
        assert_eq!("GAN".parse::<Method>().unwrap(), Method::Gan);
        assert!("pca".parse::<Method>().is_err());
    }
}
